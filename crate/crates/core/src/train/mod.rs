//! Losses, the local-graph regularizer, optimizers, policy-gradient updates
//! and the alternating training loop.

mod bench;
mod loss;
mod optim;
mod policy;
mod trainer;

pub use bench::{benchmark_step_time, write_timing_csv, TimingRow, TIMING_HEADER};
pub use loss::{local_graph_regularizer, main_loss, pair_loss, RegularizerWeights, PROB_CLAMP};
pub use optim::{ensure_finite, sgd_step, Optimizer, OptimizerKind};
pub use policy::{
    arm_rewards, mean_entropy, policy_gradient_update, policy_surrogate, policy_update_with_rewards, sample_arms,
    PolicyStep,
};
pub use trainer::{
    epoch_batches, eval_sampling, evaluate_loss, predict_pairs, stream, total_loss, LossParts, HyperParams, Purpose, Reduction, StepStats, TrainData, TrainReport,
    TrainSink, Trainer, LOG_HEADER,
};
