//! Configuration files and the command implementations behind the
//! `danser` binary.

mod commands;
mod config;

pub use commands::{
    cmd_bench, cmd_evaluate, cmd_export_attention, cmd_predict, cmd_train, evaluate_model, evaluation_pairs,
    read_pairs, write_atomic, write_report, AttentionRecord, RawPair, TrainOutcome, Workspace, CONFIG_FILE,
    FAILED_MARKER, FRIEND_BUCKETS_FILE, HISTORY_BUCKETS_FILE, ITEM_MAP_FILE, LOG_FILE, METRICS_FILE, MODEL_FILE,
    SUMMARY_FILE, USER_MAP_FILE,
};
pub use config::{config_keys, RunConfig};
