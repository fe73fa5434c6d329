//! Declarative residual networks partitioned into neighbourhoods.

mod checkpoint;
pub mod exec;
mod model;
mod params;
mod spec;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, ManifestEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use model::{
    accuracy_from_logits, backward_stages, forward_stages, forward_stages_recorded,
    ActivationNoise, Model, NetGrads, NetTape, Stage,
};
pub use params::{
    expected_shapes, init_network_params, init_params, LayerParams, NetworkParams, SeqParams,
};
pub use spec::{
    build_resnet, build_width_scaled, count_search_space, infer_shape, make_candidate,
    pruned_count, residual_block, scale_width, CandidateSpec, LayerSpec, NeighbourhoodSpec,
    NetworkSpec, Preset, Shortcut,
};
