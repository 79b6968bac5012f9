use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Gradients, ParamId, Tensor};
use crate::error::{Error, Result};
use crate::model::ParameterSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Fails with the offending tensor's name if any gradient is NaN or infinite.
pub fn ensure_finite(params: &ParameterSet, grads: &Gradients) -> Result<()> {
    for (&id, g) in &grads.dense {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
    }
    for (&id, g) in &grads.sparse {
        if let Some((row, _)) = g.rows.iter().find(|(_, r)| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient(format!("{} row {row}", params.name(id))));
        }
    }
    Ok(())
}

/// `θ ← θ − η·g`. Embedding tables only change on rows present in the sparse
/// gradient. Nothing is written if any gradient is non-finite.
pub fn sgd_step(params: &mut ParameterSet, grads: &Gradients, lr: f64) -> Result<()> {
    ensure_finite(params, grads)?;
    for (&id, g) in &grads.dense {
        let t = params.get_mut(id);
        for (v, d) in t.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * d;
        }
    }
    for (&id, g) in &grads.sparse {
        let t = params.get_mut(id);
        for (&r, d) in &g.rows {
            for (v, d) in t.row_mut(r).iter_mut().zip(d) {
                *v -= lr * d;
            }
        }
    }
    Ok(())
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Plain SGD, or Adam with lazily updated moments for embedding rows.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self.lr),
            OptimizerKind::Adam => {
                ensure_finite(params, grads)?;
                self.step += 1;
                let t = self.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                let lr = self.lr;
                let update = |m: &mut [f64], v: &mut [f64], theta: &mut [f64], g: &[f64]| {
                    for k in 0..g.len() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        theta[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
                    }
                };
                for (&id, g) in &grads.dense {
                    let (m, v) = self.moments.entry(id).or_insert_with(|| {
                        let [r, c] = g.shape();
                        (Tensor::zeros(r, c), Tensor::zeros(r, c))
                    });
                    update(m.data_mut(), v.data_mut(), params.get_mut(id).data_mut(), g.data());
                }
                for (&id, g) in &grads.sparse {
                    let [r, c] = params.get(id).shape();
                    let (m, v) = self
                        .moments
                        .entry(id)
                        .or_insert_with(|| (Tensor::zeros(r, c), Tensor::zeros(r, c)));
                    for (&row, d) in &g.rows {
                        update(m.row_mut(row), v.row_mut(row), params.get_mut(id).row_mut(row), d);
                    }
                }
                Ok(())
            }
        }
    }
}
