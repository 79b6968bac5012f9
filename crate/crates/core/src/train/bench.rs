use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::trainer::{stream, HyperParams, Purpose, TrainData, Trainer};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub batch_size: usize,
    pub sample_size: usize,
    pub steps: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

pub const TIMING_HEADER: &str = "batch_size,sample_size,steps,median_ms,min_ms,max_ms";

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median wall time of a feedforward step (batch assembly included) for each
/// `(B, F)` grid point. Every point starts from the same initial parameters
/// and runs `warmup` untimed steps first.
pub fn benchmark_step_time(
    config: &ModelConfig,
    data: TrainData<'_>,
    base: &HyperParams,
    grid: &[(usize, usize)],
    steps: usize,
    warmup: usize,
) -> Result<Vec<TimingRow>> {
    if steps == 0 {
        return Err(Error::config("benchmark needs at least one timed step"));
    }
    if data.train.is_empty() {
        return Err(Error::config("benchmark needs training pairs"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &(batch_size, sample_size) in grid {
        let hp = HyperParams {
            batch_size,
            sample_size,
            policy_period: usize::MAX,
            ..base.clone()
        };
        let model = Model::new(config.clone(), &mut stream(hp.seed, Purpose::Init))?;
        let mut trainer = Trainer::new(model, data, hp)?;
        let mut pool = trainer.pairs().to_vec();
        pool.shuffle(&mut stream(base.seed, Purpose::Batching));
        let mut cursor = 0usize;
        let mut next = |n: usize| {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                out.push(pool[cursor % pool.len()]);
                cursor += 1;
            }
            out
        };
        for _ in 0..warmup {
            let pairs = next(batch_size);
            trainer.feedforward_step(&pairs)?;
        }
        let mut times = Vec::with_capacity(steps);
        for _ in 0..steps {
            let pairs = next(batch_size);
            let start = Instant::now();
            trainer.feedforward_step(&pairs)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        rows.push(TimingRow {
            batch_size,
            sample_size,
            steps,
            median_ms: median(&times),
            min_ms: times[0],
            max_ms: times[times.len() - 1],
        });
    }
    Ok(rows)
}

pub fn write_timing_csv(rows: &[TimingRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{TIMING_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.batch_size, r.sample_size, r.steps, r.median_ms, r.min_ms, r.max_ms
        )?;
    }
    Ok(())
}
