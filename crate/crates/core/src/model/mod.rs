//! The dual graph attention model: four GATs producing static and dynamic
//! user and item factors, four interaction towers, and the fusion layer.

mod config;
mod forward;
mod params;

pub use config::{Aggregation, Fusion, ModelConfig, Variant};
pub use forward::{
    arm_predictions, factors, forward, fuse, item_dynamic_factor, item_static_factor, output_head, pairwise_towers,
    policy_forward, policy_from_context, policy_probabilities, reported_prediction, user_dynamic_factor,
    user_static_factor, ForwardOptions, ForwardOutput, ForwardTrace, GatOutput, Model, ARMS,
};
pub use params::{GatKind, GatParams, LayerParams, ParamIds, ParameterSet, PolicyParams};
