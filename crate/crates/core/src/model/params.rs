use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Fusion, ModelConfig};
use crate::autodiff::{ParamId, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DANSERCK";
const VERSION: u32 = 1;

/// The three tensors owned by one GAT.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GatParams {
    /// `D' × D` transform.
    pub weight: ParamId,
    /// `1 × D'`.
    pub bias: ParamId,
    /// `2D' × 1` attention vector.
    pub attention: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyParams {
    /// `h × 2D`.
    pub hidden: LayerParams,
    /// `4 × h`.
    pub logits: LayerParams,
}

/// Which GAT a parameter or attention row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GatKind {
    /// Social homophily, static user factor.
    UserStatic = 0,
    /// Social influence, dynamic user factor.
    UserDynamic = 1,
    /// Item-to-item homophily, static item factor.
    ItemStatic = 2,
    /// Item-to-item influence, dynamic item factor.
    ItemDynamic = 3,
}

impl GatKind {
    pub const ALL: [GatKind; 4] = [
        GatKind::UserStatic,
        GatKind::UserDynamic,
        GatKind::ItemStatic,
        GatKind::ItemDynamic,
    ];

    pub fn label(self) -> &'static str {
        match self {
            GatKind::UserStatic => "user_static",
            GatKind::UserDynamic => "user_dynamic",
            GatKind::ItemStatic => "item_static",
            GatKind::ItemDynamic => "item_dynamic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamIds {
    /// `P`, `M × D`.
    pub user_embedding: ParamId,
    /// `Q`, `N × D`.
    pub item_embedding: ParamId,
    /// `X`, `M × D`.
    pub user_factor: ParamId,
    /// `Y`, `N × D`.
    pub item_factor: ParamId,
    /// Indexed by [`GatKind`].
    pub gats: [GatParams; 4],
    /// `2D' × C`, shared by both user-domain GATs.
    pub edge: ParamId,
    pub towers: [Vec<LayerParams>; 4],
    pub policy: Vec<PolicyParams>,
    pub fusion_logits: Option<ParamId>,
    pub output: LayerParams,
}

/// Every learnable tensor, addressed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    tensors: Vec<Tensor>,
    names: Vec<String>,
    pub ids: ParamIds,
}

struct Builder {
    tensors: Vec<Tensor>,
    names: Vec<String>,
}

impl Builder {
    fn add(&mut self, name: String, t: Tensor) -> ParamId {
        self.tensors.push(t);
        self.names.push(name);
        self.tensors.len() - 1
    }
}

impl ParameterSet {
    /// Embeddings uniform in `±embedding_init`, weights uniform in
    /// `±1/√fan_in`, biases zero.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embedding_dim;
        let dg = config.gat_dim;
        let mut b = Builder {
            tensors: Vec::new(),
            names: Vec::new(),
        };
        let e = config.embedding_init;
        let emb = |rows: usize, rng: &mut R| Tensor::from_fn(rows, d, |_, _| rng.gen_range(-e..=e));
        // fan-in is the column count, except for column vectors
        let weight = |rows: usize, cols: usize, rng: &mut R| {
            let fan_in = if cols == 1 { rows } else { cols };
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
        };

        let user_embedding = b.add("P".into(), emb(config.num_users, rng));
        let item_embedding = b.add("Q".into(), emb(config.num_items, rng));
        let user_factor = b.add("X".into(), emb(config.num_users, rng));
        let item_factor = b.add("Y".into(), emb(config.num_items, rng));

        let gats = GatKind::ALL.map(|k| GatParams {
            weight: b.add(format!("gat.{}.weight", k.label()), weight(dg, d, rng)),
            bias: b.add(format!("gat.{}.bias", k.label()), Tensor::zeros(1, dg)),
            attention: b.add(format!("gat.{}.attention", k.label()), weight(2 * dg, 1, rng)),
        });
        let edge = b.add(
            "edge.weight".into(),
            weight(2 * dg, config.num_feature_types, rng),
        );

        let mut towers: [Vec<LayerParams>; 4] = Default::default();
        for (a, tower) in towers.iter_mut().enumerate() {
            for (k, w) in config.tower_widths.windows(2).enumerate() {
                tower.push(LayerParams {
                    weight: b.add(format!("tower{a}.layer{k}.weight"), weight(w[1], w[0], rng)),
                    bias: b.add(format!("tower{a}.layer{k}.bias"), Tensor::zeros(1, w[1])),
                });
            }
        }

        let mut policy = Vec::new();
        let mut fusion_logits = None;
        match config.fusion {
            Fusion::Policy => {
                for l in 0..config.heads {
                    let h = config.policy_hidden;
                    policy.push(PolicyParams {
                        hidden: LayerParams {
                            weight: b.add(format!("policy{l}.hidden.weight"), weight(h, 2 * d, rng)),
                            bias: b.add(format!("policy{l}.hidden.bias"), Tensor::zeros(1, h)),
                        },
                        logits: LayerParams {
                            weight: b.add(format!("policy{l}.logits.weight"), weight(4, h, rng)),
                            bias: b.add(format!("policy{l}.logits.bias"), Tensor::zeros(1, 4)),
                        },
                    });
                }
            }
            Fusion::LearnedWeights => {
                fusion_logits = Some(b.add("fusion.logits".into(), Tensor::zeros(1, 4)));
            }
            _ => {}
        }

        let width = config.fused_width();
        let output = LayerParams {
            weight: b.add("output.weight".into(), weight(1, width, rng)),
            bias: b.add("output.bias".into(), Tensor::zeros(1, 1)),
        };

        Ok(Self {
            tensors: b.tensors,
            names: b.names,
            ids: ParamIds {
                user_embedding,
                item_embedding,
                user_factor,
                item_factor,
                gats,
                edge,
                towers,
                policy,
                fusion_logits,
                output,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (i, n.as_str(), t))
    }

    /// Embedding tables receive sparse row updates.
    pub fn is_embedding(&self, id: ParamId) -> bool {
        id == self.ids.user_embedding
            || id == self.ids.item_embedding
            || id == self.ids.user_factor
            || id == self.ids.item_factor
    }

    /// Ids of the policy network parameters for one head.
    pub fn policy_ids(&self, head: usize) -> [ParamId; 4] {
        let p = self.ids.policy[head];
        [p.hidden.weight, p.hidden.bias, p.logits.weight, p.logits.bias]
    }

    pub fn is_policy(&self, id: ParamId) -> bool {
        (0..self.ids.policy.len()).any(|h| self.policy_ids(h).contains(&id))
    }

    /// Writes every tensor with its name and shape. Values are stored as raw
    /// little-endian `f64` bits, so a reload is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a checkpoint into a parameter set laid out for `config`. Every
    /// tensor must be present with the expected shape.
    pub fn load(config: &ModelConfig, path: &Path) -> Result<Self> {
        let mut set = Self::init(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let stored = read_checkpoint(path)?;
        if stored.len() != set.len() {
            return Err(Error::Checkpoint(format!(
                "incompatible checkpoint: {} tensors stored, configuration expects {}",
                stored.len(),
                set.len()
            )));
        }
        for (name, tensor) in stored {
            let id = set.id_of(&name).ok_or_else(|| {
                Error::Checkpoint(format!("incompatible checkpoint: unexpected tensor `{name}`"))
            })?;
            if set.tensors[id].shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "incompatible checkpoint: `{name}` has shape {:?}, configuration expects {:?}",
                    tensor.shape(),
                    set.tensors[id].shape()
                )));
            }
            set.tensors[id] = tensor;
        }
        Ok(set)
    }
}

fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(rows, cols, data)?));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
