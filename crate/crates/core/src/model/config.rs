use std::fmt;
use std::str::FromStr;

use crate::autodiff::Unary;
use crate::data::FeedbackMode;
use crate::error::{Error, Result};

/// How a GAT pair aggregates over a node's neighborhood.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Learned attention weights.
    Gat,
    /// Uniform weights over valid neighbors.
    Gcn,
    /// No aggregation: the node's own raw (or pooled) vector is used as is.
    None,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gat" => Ok(Aggregation::Gat),
            "gcn" => Ok(Aggregation::Gcn),
            "none" => Ok(Aggregation::None),
            other => Err(format!("unknown aggregation `{other}`")),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Gat => "gat",
            Aggregation::Gcn => "gcn",
            Aggregation::None => "none",
        })
    }
}

/// How the four tower outputs are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Multi-head policy network trained by REINFORCE.
    Policy,
    /// Four shared softmax weights trained with the feedforward network.
    LearnedWeights,
    Max,
    Avg,
    /// Concatenation, widening the output head fourfold.
    Concat,
}

impl FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "policy" => Ok(Fusion::Policy),
            "learned_weights" | "weights" => Ok(Fusion::LearnedWeights),
            "max" => Ok(Fusion::Max),
            "avg" => Ok(Fusion::Avg),
            "concat" => Ok(Fusion::Concat),
            other => Err(format!("unknown fusion `{other}`")),
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Policy => "policy",
            Fusion::LearnedWeights => "learned_weights",
            Fusion::Max => "max",
            Fusion::Avg => "avg",
            Fusion::Concat => "concat",
        })
    }
}

/// Named model variants used in ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Danser,
    DualEmb,
    DualGcn,
    UserGat,
    ItemGat,
    DanserW,
    DanserM,
    DanserA,
    DanserC,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Danser,
        Variant::DualEmb,
        Variant::DualGcn,
        Variant::UserGat,
        Variant::ItemGat,
        Variant::DanserW,
        Variant::DanserM,
        Variant::DanserA,
        Variant::DanserC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Danser => "danser",
            Variant::DualEmb => "dualemb",
            Variant::DualGcn => "dualgcn",
            Variant::UserGat => "usergat",
            Variant::ItemGat => "itemgat",
            Variant::DanserW => "danser-w",
            Variant::DanserM => "danser-m",
            Variant::DanserA => "danser-a",
            Variant::DanserC => "danser-c",
        }
    }

    /// `(user_gats, item_gats, fusion)` for this variant.
    pub fn settings(self) -> (Aggregation, Aggregation, Fusion) {
        use Aggregation::*;
        match self {
            Variant::Danser => (Gat, Gat, Fusion::Policy),
            Variant::DualEmb => (None, None, Fusion::Policy),
            Variant::DualGcn => (Gcn, Gcn, Fusion::Policy),
            Variant::UserGat => (Gat, None, Fusion::Policy),
            Variant::ItemGat => (None, Gat, Fusion::Policy),
            Variant::DanserW => (Gat, Gat, Fusion::LearnedWeights),
            Variant::DanserM => (Gat, Gat, Fusion::Max),
            Variant::DanserA => (Gat, Gat, Fusion::Avg),
            Variant::DanserC => (Gat, Gat, Fusion::Concat),
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// `D`.
    pub embedding_dim: usize,
    /// `D'`, output width of every GAT.
    pub gat_dim: usize,
    /// Input width followed by each tower layer's width, e.g. `10-16-8-4`.
    pub tower_widths: Vec<usize>,
    /// `L`.
    pub heads: usize,
    pub policy_hidden: usize,
    /// `C`.
    pub num_feature_types: usize,
    pub user_gats: Aggregation,
    pub item_gats: Aggregation,
    pub fusion: Fusion,
    pub gat_activation: Unary,
    pub leaky_slope: f64,
    /// Dropout on tower hidden activations.
    pub dropout: f64,
    pub feedback: FeedbackMode,
    /// Embedding entries start uniform in `±embedding_init`.
    pub embedding_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_users: 0,
            num_items: 0,
            embedding_dim: 10,
            gat_dim: 10,
            tower_widths: vec![10, 16, 8, 4],
            heads: 4,
            policy_hidden: 16,
            num_feature_types: 1,
            user_gats: Aggregation::Gat,
            item_gats: Aggregation::Gat,
            fusion: Fusion::Policy,
            gat_activation: Unary::Relu,
            leaky_slope: 0.2,
            dropout: 0.5,
            feedback: FeedbackMode::Explicit,
            embedding_init: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        let (u, i, f) = variant.settings();
        self.user_gats = u;
        self.item_gats = i;
        self.fusion = f;
        self
    }

    /// Width of the fused vector entering the output head.
    pub fn fused_width(&self) -> usize {
        let out = self.tower_output_width();
        if self.fusion == Fusion::Concat {
            4 * out
        } else {
            out
        }
    }

    pub fn tower_output_width(&self) -> usize {
        *self.tower_widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.embedding_dim == 0 || self.gat_dim == 0 {
            errors.push("embedding and GAT dimensions must be positive".to_string());
        }
        if self.tower_widths.len() < 2 {
            errors.push("tower needs an input width and at least one layer".to_string());
        } else {
            if self.tower_widths[0] != self.gat_dim {
                errors.push(format!(
                    "tower input width {} must equal the GAT output width {}",
                    self.tower_widths[0], self.gat_dim
                ));
            }
            if self.tower_widths.iter().any(|&w| w == 0) {
                errors.push("tower widths must be positive".to_string());
            }
            if self.tower_widths[1..].windows(2).any(|w| w[1] >= w[0]) {
                errors.push(format!(
                    "tower layer widths must shrink layer over layer, got {:?}",
                    &self.tower_widths[1..]
                ));
            }
        }
        let raw_passthrough = self.user_gats == Aggregation::None || self.item_gats == Aggregation::None;
        if raw_passthrough && self.embedding_dim != self.gat_dim {
            errors.push(format!(
                "aggregation `none` passes raw embeddings through, so D ({}) must equal D' ({})",
                self.embedding_dim, self.gat_dim
            ));
        }
        if self.fusion == Fusion::Policy && (self.heads == 0 || self.policy_hidden == 0) {
            errors.push("policy fusion needs at least one head and a positive hidden width".to_string());
        }
        if self.num_feature_types == 0 {
            errors.push("edge features need at least one type".to_string());
        }
        if !(self.embedding_init > 0.0 && self.embedding_init.is_finite()) {
            errors.push(format!("embedding_init must be positive, got {}", self.embedding_init));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errors.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}
