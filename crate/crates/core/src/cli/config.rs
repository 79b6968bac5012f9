use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{FeedbackMode, SplitStrategy, TrustOptions, UnknownUserPolicy};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::train::HyperParams;

/// Everything a command needs: data locations, model shape, optimization,
/// evaluation and benchmark settings. Model sizes `num_users`/`num_items`
/// are filled in from the data at load time.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub ratings: Option<PathBuf>,
    pub trust: Option<PathBuf>,
    pub item_graph_cache: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub train_fraction: f64,
    pub split: SplitStrategy,
    /// Items are linked when more than this many users rated both.
    pub item_threshold: u32,
    pub trust_options: TrustOptions,
    pub variant: Variant,
    pub model: ModelConfig,
    pub hp: HyperParams,
    pub top_k: usize,
    pub eval_negative_ratio: usize,
    pub history_buckets: Vec<usize>,
    pub friend_buckets: Vec<usize>,
    pub bench_batch_sizes: Vec<usize>,
    pub bench_sample_sizes: Vec<usize>,
    pub bench_steps: usize,
    pub bench_warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ratings: None,
            trust: None,
            item_graph_cache: None,
            output_dir: PathBuf::from("runs"),
            train_fraction: 0.8,
            split: SplitStrategy::Random,
            item_threshold: 1,
            trust_options: TrustOptions::default(),
            variant: Variant::Danser,
            model: ModelConfig::default(),
            hp: HyperParams::default(),
            top_k: 10,
            eval_negative_ratio: 1,
            history_buckets: vec![0, 8, 16, 32, 64],
            friend_buckets: vec![0, 1, 4, 16, 64],
            bench_batch_sizes: vec![32, 64, 128],
            bench_sample_sizes: vec![15, 30, 60],
            bench_steps: 20,
            bench_warmup: 3,
        }
    }
}

type Getter = fn(&RunConfig) -> String;
type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    value.trim().parse::<T>().map_err(|e| e.to_string())
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

fn parse_list(value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn show_float(v: f64) -> String {
    // `{:?}` keeps enough digits to reparse the same value
    format!("{v:?}")
}

/// Every recognised key, in dump order.
const KEYS: &[(&str, Getter, Setter)] = &[
    ("ratings", |c| show_path(&c.ratings), |c, v| {
        c.ratings = parse_path(v);
        Ok(())
    }),
    ("trust", |c| show_path(&c.trust), |c, v| {
        c.trust = parse_path(v);
        Ok(())
    }),
    ("item_graph_cache", |c| show_path(&c.item_graph_cache), |c, v| {
        c.item_graph_cache = parse_path(v);
        Ok(())
    }),
    ("output_dir", |c| c.output_dir.display().to_string(), |c, v| {
        c.output_dir = parse_path(v).ok_or("must not be empty")?;
        Ok(())
    }),
    ("feedback", |c| c.model.feedback.to_string(), |c, v| {
        c.model.feedback = parse::<FeedbackMode>(v)?;
        Ok(())
    }),
    ("train_fraction", |c| show_float(c.train_fraction), |c, v| {
        c.train_fraction = parse(v)?;
        Ok(())
    }),
    ("split", |c| c.split.to_string(), |c, v| {
        c.split = parse(v)?;
        Ok(())
    }),
    ("item_threshold", |c| c.item_threshold.to_string(), |c, v| {
        c.item_threshold = parse(v)?;
        Ok(())
    }),
    ("trust_features", |c| c.trust_options.num_feature_types.to_string(), |c, v| {
        c.trust_options.num_feature_types = parse(v)?;
        Ok(())
    }),
    ("undirected_trust", |c| c.trust_options.undirected.to_string(), |c, v| {
        c.trust_options.undirected = parse_bool(v)?;
        Ok(())
    }),
    ("unknown_trust_users", |c| match c.trust_options.unknown_users {
        UnknownUserPolicy::Skip => "skip".into(),
        UnknownUserPolicy::Error => "error".into(),
    }, |c, v| {
        c.trust_options.unknown_users = parse(v)?;
        Ok(())
    }),
    ("variant", |c| c.variant.to_string(), |c, v| {
        c.variant = parse(v)?;
        Ok(())
    }),
    ("embedding_dim", |c| c.model.embedding_dim.to_string(), |c, v| {
        c.model.embedding_dim = parse(v)?;
        Ok(())
    }),
    ("gat_dim", |c| c.model.gat_dim.to_string(), |c, v| {
        c.model.gat_dim = parse(v)?;
        Ok(())
    }),
    ("tower_widths", |c| show_list(&c.model.tower_widths), |c, v| {
        c.model.tower_widths = parse_list(v)?;
        Ok(())
    }),
    ("heads", |c| c.model.heads.to_string(), |c, v| {
        c.model.heads = parse(v)?;
        Ok(())
    }),
    ("policy_hidden", |c| c.model.policy_hidden.to_string(), |c, v| {
        c.model.policy_hidden = parse(v)?;
        Ok(())
    }),
    ("leaky_slope", |c| show_float(c.model.leaky_slope), |c, v| {
        c.model.leaky_slope = parse(v)?;
        Ok(())
    }),
    ("dropout", |c| show_float(c.model.dropout), |c, v| {
        c.model.dropout = parse(v)?;
        Ok(())
    }),
    ("embedding_init", |c| show_float(c.model.embedding_init), |c, v| {
        c.model.embedding_init = parse(v)?;
        Ok(())
    }),
    ("batch_size", |c| c.hp.batch_size.to_string(), |c, v| {
        c.hp.batch_size = parse(v)?;
        Ok(())
    }),
    ("sample_size", |c| c.hp.sample_size.to_string(), |c, v| {
        c.hp.sample_size = parse(v)?;
        Ok(())
    }),
    ("truncation", |c| c.hp.truncation.to_string(), |c, v| {
        c.hp.truncation = parse(v)?;
        Ok(())
    }),
    ("policy_period", |c| c.hp.policy_period.to_string(), |c, v| {
        c.hp.policy_period = parse(v)?;
        Ok(())
    }),
    ("lambda", |c| show_float(c.hp.lambda), |c, v| {
        c.hp.lambda = parse(v)?;
        Ok(())
    }),
    ("lr", |c| show_float(c.hp.lr), |c, v| {
        c.hp.lr = parse(v)?;
        Ok(())
    }),
    ("policy_lr", |c| show_float(c.hp.policy_lr), |c, v| {
        c.hp.policy_lr = parse(v)?;
        Ok(())
    }),
    ("epochs", |c| c.hp.epochs.to_string(), |c, v| {
        c.hp.epochs = parse(v)?;
        Ok(())
    }),
    ("seed", |c| c.hp.seed.to_string(), |c, v| {
        c.hp.seed = parse(v)?;
        Ok(())
    }),
    ("optimizer", |c| c.hp.optimizer.to_string(), |c, v| {
        c.hp.optimizer = parse(v)?;
        Ok(())
    }),
    ("loss_reduction", |c| c.hp.reduction.to_string(), |c, v| {
        c.hp.reduction = parse(v)?;
        Ok(())
    }),
    ("exclude_target", |c| c.hp.exclude_target.to_string(), |c, v| {
        c.hp.exclude_target = parse_bool(v)?;
        Ok(())
    }),
    ("negative_ratio", |c| c.hp.negative_ratio.to_string(), |c, v| {
        c.hp.negative_ratio = parse(v)?;
        Ok(())
    }),
    ("eval_every", |c| c.hp.eval_every.to_string(), |c, v| {
        c.hp.eval_every = parse(v)?;
        Ok(())
    }),
    ("checkpoint_every", |c| c.hp.checkpoint_every.to_string(), |c, v| {
        c.hp.checkpoint_every = parse(v)?;
        Ok(())
    }),
    ("convergence_tol", |c| show_float(c.hp.convergence_tol), |c, v| {
        c.hp.convergence_tol = parse(v)?;
        Ok(())
    }),
    ("patience", |c| c.hp.patience.to_string(), |c, v| {
        c.hp.patience = parse(v)?;
        Ok(())
    }),
    ("log_every", |c| c.hp.log_every.to_string(), |c, v| {
        c.hp.log_every = parse(v)?;
        Ok(())
    }),
    ("top_k", |c| c.top_k.to_string(), |c, v| {
        c.top_k = parse(v)?;
        Ok(())
    }),
    ("eval_negative_ratio", |c| c.eval_negative_ratio.to_string(), |c, v| {
        c.eval_negative_ratio = parse(v)?;
        Ok(())
    }),
    ("history_buckets", |c| show_list(&c.history_buckets), |c, v| {
        c.history_buckets = parse_list(v)?;
        Ok(())
    }),
    ("friend_buckets", |c| show_list(&c.friend_buckets), |c, v| {
        c.friend_buckets = parse_list(v)?;
        Ok(())
    }),
    ("bench_batch_sizes", |c| show_list(&c.bench_batch_sizes), |c, v| {
        c.bench_batch_sizes = parse_list(v)?;
        Ok(())
    }),
    ("bench_sample_sizes", |c| show_list(&c.bench_sample_sizes), |c, v| {
        c.bench_sample_sizes = parse_list(v)?;
        Ok(())
    }),
    ("bench_steps", |c| c.bench_steps.to_string(), |c, v| {
        c.bench_steps = parse(v)?;
        Ok(())
    }),
    ("bench_warmup", |c| c.bench_warmup.to_string(), |c, v| {
        c.bench_warmup = parse(v)?;
        Ok(())
    }),
];

/// Names of all accepted keys, in dump order.
pub fn config_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|(k, _, _)| *k)
}

impl RunConfig {
    /// Sets one key; unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let (_, _, setter) = KEYS
            .iter()
            .find(|(k, _, _)| *k == key)
            .ok_or_else(|| format!("unknown key `{key}`"))?;
        setter(self, value).map_err(|e| format!("{key}: {e}"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, getter, _)| getter(self))
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped. All problems are reported together, each
    /// prefixed with `origin:line`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut errors = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    if let Err(e) = self.set(key.trim(), value) {
                        errors.push(format!("{origin}:{}: {e}", n + 1));
                    }
                }
                None => errors.push(format!("{origin}:{}: expected `key = value`", n + 1)),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = RunConfig::default();
        config.apply_text(&text, &path.display().to_string())?;
        Ok(config)
    }

    /// Applies `key=value` overrides, reporting every bad one.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        let mut errors = Vec::new();
        for item in overrides {
            match item.split_once('=') {
                Some((key, value)) => {
                    if let Err(e) = self.set(key.trim(), value) {
                        errors.push(format!("--set {item}: {e}"));
                    }
                }
                None => errors.push(format!("--set {item}: expected `key=value`")),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// The effective configuration as `key = value` lines; parsing the result
    /// reproduces `self`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (key, getter, _) in KEYS {
            out.push_str(&format!("{key} = {}\n", getter(self)));
        }
        out
    }

    /// Model shape for a dataset of the given size.
    pub fn model_config(&self, num_users: usize, num_items: usize) -> ModelConfig {
        ModelConfig {
            num_users,
            num_items,
            num_feature_types: self.trust_options.num_feature_types,
            ..self.model.clone()
        }
        .with_variant(self.variant)
    }

    /// Every problem that can be detected without reading data.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut absorb = |r: Result<()>| match r {
            Err(Error::Config(msgs)) => errors.extend(msgs),
            Err(e) => errors.push(e.to_string()),
            Ok(()) => {}
        };
        absorb(self.model_config(1, 1).validate());
        absorb(self.hp.validate());
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            errors.push(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.trust_options.num_feature_types == 0 {
            errors.push("trust_features must be positive".into());
        }
        if self.top_k == 0 {
            errors.push("top_k must be positive".into());
        }
        for (name, edges) in [("history_buckets", &self.history_buckets), ("friend_buckets", &self.friend_buckets)] {
            if edges.first() != Some(&0) || edges.windows(2).any(|w| w[0] >= w[1]) {
                errors.push(format!("{name} must start at 0 and increase strictly"));
            }
        }
        if self.bench_steps == 0 {
            errors.push("bench_steps must be positive".into());
        }
        if self.bench_batch_sizes.contains(&0) || self.bench_sample_sizes.contains(&0) {
            errors.push("benchmark grid sizes must be positive".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}
