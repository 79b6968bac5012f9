//! Ratings and trust ingestion, the co-rating item graph, and padded
//! mini-batch assembly.

mod batch;
mod interactions;
mod item_graph;
mod social;
mod synthetic;

pub use batch::{make_batch, sample_negatives, sample_neighbors, truncate_history, Batch, IndexBlock, SamplingOptions};
pub use interactions::{
    load_ratings, split_train_test, FeedbackMode, IdMap, Interaction, InteractionStore, SplitStrategy,
};
pub use item_graph::ItemGraph;
pub use synthetic::{planted, PlantedData, PlantedSpec};
pub use social::{load_trust, SocialGraph, TrustOptions, UnknownUserPolicy};
