use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{local_graph_regularizer, main_loss, pair_loss};
use super::optim::{Optimizer, OptimizerKind};
use super::policy::{mean_entropy, policy_gradient_update, sample_arms};
use crate::autodiff::{Tape, Var};
use crate::data::{make_batch, Batch, Interaction, InteractionStore, ItemGraph, SamplingOptions, SocialGraph};
use crate::error::{Error, Result};
use crate::model::{forward, policy_probabilities, ForwardOptions, Fusion, Model, ModelConfig, ParameterSet};

/// How per-pair losses are combined within a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

impl FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(format!("unknown loss reduction `{other}`")),
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

/// Optimization settings. Model shape lives in [`crate::model::ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// `B`.
    pub batch_size: usize,
    /// `F`.
    pub sample_size: usize,
    /// `C_t`.
    pub truncation: usize,
    /// `n_p`: feedforward steps between policy updates.
    pub policy_period: usize,
    /// `λ`.
    pub lambda: f64,
    /// `η`.
    pub lr: f64,
    /// `ζ`.
    pub policy_lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub reduction: Reduction,
    pub exclude_target: bool,
    /// Sampled negatives per positive in implicit mode.
    pub negative_ratio: usize,
    /// Epochs between convergence evaluations.
    pub eval_every: usize,
    /// Epochs between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub convergence_tol: f64,
    /// Consecutive evaluations below `convergence_tol` needed to stop.
    pub patience: usize,
    /// Steps between training-log rows.
    pub log_every: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            batch_size: 64,
            sample_size: 30,
            truncation: 30,
            policy_period: 1000,
            lambda: 0.001,
            lr: 0.1,
            policy_lr: 0.01,
            epochs: 100,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            reduction: Reduction::Mean,
            exclude_target: true,
            negative_ratio: 1,
            eval_every: 1,
            checkpoint_every: 10,
            convergence_tol: 1e-4,
            patience: 3,
            log_every: 1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let counts = [
            ("batch_size", self.batch_size),
            ("sample_size", self.sample_size),
            ("truncation", self.truncation),
            ("policy_period", self.policy_period),
            ("epochs", self.epochs),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
            ("log_every", self.log_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                errors.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("lr", self.lr), ("policy_lr", self.policy_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            errors.push(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.convergence_tol >= 0.0) {
            errors.push(format!("convergence_tol must be non-negative, got {}", self.convergence_tol));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn sampling(&self) -> SamplingOptions {
        SamplingOptions {
            sample_size: self.sample_size,
            truncation: self.truncation,
            exclude_target: self.exclude_target,
            negative_ratio: self.negative_ratio,
            fixed_samples: None,
        }
    }
}

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Init = 0,
    Batching = 1,
    Dropout = 2,
    Arms = 3,
    PolicyBatch = 4,
    Eval = 5,
    /// Negatives drawn for implicit evaluation.
    EvalNegatives = 6,
    /// Train/test partition of the loaded records.
    Split = 7,
}

pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Graphs and interactions the model is trained against. Histories and
/// neighborhoods always come from `train`.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a InteractionStore,
    pub social: &'a SocialGraph,
    pub items: &'a ItemGraph,
    /// Pairs whose loss drives the convergence test; the training loss is
    /// used when absent.
    pub heldout: Option<&'a [Interaction]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub epoch: usize,
    /// Main loss (summed over heads), reduced over the batch.
    pub train_loss: f64,
    /// Regularizer before weighting by `λ`, reduced over the batch.
    pub reg_loss: f64,
    pub policy_entropy: Option<f64>,
    pub lr: f64,
}

/// Training log and checkpoint destinations.
#[derive(Default)]
pub struct TrainSink {
    log: Option<Box<dyn Write>>,
    pub checkpoint_dir: Option<PathBuf>,
}

pub const LOG_HEADER: &str = "step,epoch,train_loss,reg_loss,policy_entropy,lr";

impl TrainSink {
    pub fn new(log: Option<Box<dyn Write>>, checkpoint_dir: Option<PathBuf>) -> Result<Self> {
        let mut sink = Self { log, checkpoint_dir };
        if let Some(w) = sink.log.as_mut() {
            writeln!(w, "{LOG_HEADER}")?;
        }
        Ok(sink)
    }

    fn record(&mut self, s: &StepStats) -> Result<()> {
        if let Some(w) = self.log.as_mut() {
            let entropy = s.policy_entropy.map(|e| e.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{}", s.step, s.epoch, s.train_loss, s.reg_loss, entropy, s.lr)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.log.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: u64,
    pub converged: bool,
    /// Convergence-test loss after each evaluation.
    pub eval_losses: Vec<f64>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Terms of the training objective on one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    /// `(Σ_heads L_main + λ·L_reg)`, reduced over the batch.
    pub total: Var,
    /// Main loss summed over heads and over the batch.
    pub main: Var,
    /// Unweighted regularizer summed over the batch; absent when `λ = 0`.
    pub reg: Option<Var>,
}

/// Records the training objective: one main loss per head prediction (a
/// single one without sampled arms), plus `λ` times the local-graph
/// regularizer, reduced over the batch.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    params: &ParameterSet,
    config: &ModelConfig,
    batch: &Batch,
    (social, items): (&SocialGraph, &ItemGraph),
    options: ForwardOptions<'_>,
    (lambda, reduction): (f64, Reduction),
    rng: &mut dyn RngCore,
) -> Result<LossParts> {
    let out = forward(tape, params, config, batch, options, rng)?;
    let targets = batch.ratings();
    let mut main = main_loss(tape, out.predictions[0], &targets, config.feedback)?;
    for &p in &out.predictions[1..] {
        let l = main_loss(tape, p, &targets, config.feedback)?;
        main = tape.add(main, l)?;
    }
    let mut total = main;
    let mut reg = None;
    if lambda > 0.0 {
        let r = local_graph_regularizer(tape, params, batch, social, items)?;
        let weighted = tape.scale(r, lambda);
        total = tape.add(main, weighted)?;
        reg = Some(r);
    }
    if reduction == Reduction::Mean {
        total = tape.scale(total, 1.0 / batch.len().max(1) as f64);
    }
    Ok(LossParts { total, main, reg })
}

/// Sampling used for scoring: no negatives, per-node fixed neighbor samples.
pub fn eval_sampling(hp: &HyperParams) -> SamplingOptions {
    SamplingOptions {
        negative_ratio: 0,
        fixed_samples: Some(hp.seed),
        ..hp.sampling()
    }
}

/// Mean per-pair loss under expectation fusion.
pub fn evaluate_loss(model: &Model, data: &TrainData<'_>, pairs: &[Interaction], hp: &HyperParams) -> Result<f64> {
    let preds = predict_pairs(model, data, pairs, hp)?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = preds
        .iter()
        .zip(pairs)
        .map(|(&p, pair)| pair_loss(p, pair.rating, model.config.feedback))
        .sum();
    Ok(total / preds.len() as f64)
}

/// Raw model outputs for `pairs` (no clamping), batched by `hp.batch_size`.
/// Every node keeps one neighbor sample across pairs and calls, so a pair's
/// score does not depend on the rest of its batch.
pub fn predict_pairs(model: &Model, data: &TrainData<'_>, pairs: &[Interaction], hp: &HyperParams) -> Result<Vec<f64>> {
    let mut rng = stream(hp.seed, Purpose::Eval);
    let options = eval_sampling(hp);
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(hp.batch_size.max(1)) {
        let batch = make_batch(chunk, data.train, data.social, data.items, &options, &mut rng);
        out.extend(model.predict(&batch)?.predictions);
    }
    Ok(out)
}

/// A fresh random partition of `pairs` into batches of `batch_size` (the
/// last one possibly shorter).
pub fn epoch_batches<R: Rng + ?Sized>(pairs: &[Interaction], batch_size: usize, rng: &mut R) -> Vec<Vec<Interaction>> {
    let mut order = pairs.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[Interaction]>::to_vec).collect()
}

/// Alternates feedforward SGD steps with periodic policy updates.
pub struct Trainer<'a> {
    pub model: Model,
    pub hp: HyperParams,
    data: TrainData<'a>,
    optimizer: Optimizer,
    batching: ChaCha8Rng,
    dropout: ChaCha8Rng,
    arms: ChaCha8Rng,
    policy_batch: ChaCha8Rng,
    pairs: Vec<Interaction>,
    pub step: u64,
    pub epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, data: TrainData<'a>, hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        model.config.validate()?;
        if data.social.num_feature_types() != model.config.num_feature_types {
            return Err(Error::config(format!(
                "trust graph has {} feature types, model expects {}",
                data.social.num_feature_types(),
                model.config.num_feature_types
            )));
        }
        let pairs = data.train.entries().to_vec();
        Ok(Self {
            optimizer: Optimizer::new(hp.optimizer, hp.lr),
            batching: stream(hp.seed, Purpose::Batching),
            dropout: stream(hp.seed, Purpose::Dropout),
            arms: stream(hp.seed, Purpose::Arms),
            policy_batch: stream(hp.seed, Purpose::PolicyBatch),
            model,
            hp,
            data,
            pairs,
            step: 0,
            epoch: 0,
        })
    }

    pub fn data(&self) -> &TrainData<'a> {
        &self.data
    }

    /// Training pairs in record order.
    pub fn pairs(&self) -> &[Interaction] {
        &self.pairs
    }

    fn reduce(&self, value: f64, n: usize) -> f64 {
        match self.hp.reduction {
            Reduction::Sum => value,
            Reduction::Mean => value / n.max(1) as f64,
        }
    }

    /// One update of every non-policy parameter on `pairs`.
    pub fn feedforward_step(&mut self, pairs: &[Interaction]) -> Result<StepStats> {
        let sampling = self.hp.sampling();
        let batch = make_batch(pairs, self.data.train, self.data.social, self.data.items, &sampling, &mut self.batching);
        let config = &self.model.config;
        let params = &self.model.params;

        let (arms, entropy) = if config.fusion == Fusion::Policy {
            let probs = policy_probabilities(params, &batch.users(), &batch.items())?;
            (Some(sample_arms(&probs, &mut self.arms)), Some(mean_entropy(&probs)))
        } else {
            (None, None)
        };

        let mut tape = Tape::new();
        let options = ForwardOptions {
            training: true,
            arms: arms.as_deref(),
        };
        let graphs = (self.data.social, self.data.items);
        let parts = total_loss(
            &mut tape,
            params,
            config,
            &batch,
            graphs,
            options,
            (self.hp.lambda, self.hp.reduction),
            &mut self.dropout,
        )?;
        let total = parts.total;
        let loss = tape.value(total).item();
        if !loss.is_finite() {
            return Err(Error::Diverged { step: self.step, loss });
        }
        let mut grads = tape.backward(total)?;
        grads.dense.retain(|&id, _| !params.is_policy(id));
        let main_value = tape.value(parts.main).item();
        let reg_value = parts.reg.map_or(0.0, |r| tape.value(r).item());
        self.optimizer.step(&mut self.model.params, &grads)?;
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            epoch: self.epoch,
            train_loss: self.reduce(main_value, batch.len()),
            reg_loss: self.reduce(reg_value, batch.len()),
            policy_entropy: entropy,
            lr: self.hp.lr,
        })
    }

    /// One policy update per head, each on a freshly sampled batch.
    pub fn policy_phase(&mut self) -> Result<Vec<super::policy::PolicyStep>> {
        let mut steps = Vec::new();
        if self.model.config.fusion != Fusion::Policy || self.pairs.is_empty() {
            return Ok(steps);
        }
        let sampling = SamplingOptions {
            negative_ratio: self.hp.negative_ratio,
            ..self.hp.sampling()
        };
        for head in 0..self.model.config.heads {
            let chosen: Vec<Interaction> = (0..self.hp.batch_size.min(self.pairs.len()))
                .map(|_| self.pairs[self.policy_batch.gen_range(0..self.pairs.len())])
                .collect();
            let batch = make_batch(
                &chosen,
                self.data.train,
                self.data.social,
                self.data.items,
                &sampling,
                &mut self.policy_batch,
            );
            let step = policy_gradient_update(&mut self.model.params, &self.model.config, &batch, head, self.hp.policy_lr)?;
            steps.push(step);
        }
        Ok(steps)
    }

    fn save(&self, sink: &TrainSink, name: &str) -> Result<()> {
        if let Some(dir) = &sink.checkpoint_dir {
            self.model.params.save(&dir.join(name))?;
        }
        Ok(())
    }

    /// One pass over a fresh random partition of the training pairs.
    /// Returns the mean reduced training loss.
    pub fn run_epoch(&mut self, sink: &mut TrainSink) -> Result<f64> {
        let partition = epoch_batches(&self.pairs, self.hp.batch_size, &mut self.batching);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in &partition {
            let stats = match self.feedforward_step(chunk) {
                Ok(s) => s,
                Err(e @ (Error::Diverged { .. } | Error::NonFiniteGradient(_))) => {
                    self.save(sink, "abort.ckpt")?;
                    sink.flush()?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if stats.step % self.hp.log_every as u64 == 0 {
                sink.record(&stats)?;
            }
            total += stats.train_loss;
            batches += 1;
            if self.step % self.hp.policy_period as u64 == 0 {
                self.policy_phase()?;
            }
        }
        self.epoch += 1;
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }

    /// Runs until the epoch budget is spent or the convergence test passes.
    pub fn run(&mut self, sink: &mut TrainSink) -> Result<TrainReport> {
        let mut report = TrainReport {
            epochs: 0,
            steps: 0,
            converged: false,
            eval_losses: Vec::new(),
            epoch_losses: Vec::new(),
        };
        let mut stalled = 0usize;
        while self.epoch < self.hp.epochs {
            let mean = self.run_epoch(sink)?;
            report.epoch_losses.push(mean);
            if self.hp.checkpoint_every > 0 && self.epoch % self.hp.checkpoint_every == 0 {
                self.save(sink, &format!("epoch_{}.ckpt", self.epoch))?;
            }
            if self.epoch % self.hp.eval_every == 0 {
                let loss = match self.data.heldout {
                    Some(pairs) if !pairs.is_empty() => evaluate_loss(&self.model, &self.data, pairs, &self.hp)?,
                    _ => mean,
                };
                if let Some(&prev) = report.eval_losses.last() {
                    let improvement = (prev - loss) / prev.abs().max(f64::MIN_POSITIVE);
                    stalled = if improvement < self.hp.convergence_tol { stalled + 1 } else { 0 };
                }
                report.eval_losses.push(loss);
                log::info!("epoch {} step {} loss {loss:.6}", self.epoch, self.step);
                if stalled >= self.hp.patience {
                    report.converged = true;
                    break;
                }
            }
        }
        sink.flush()?;
        report.epochs = self.epoch;
        report.steps = self.step;
        Ok(report)
    }
}
