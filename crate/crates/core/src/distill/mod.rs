//! Neighbourhood distillation, fine-tuning, sparsification and the
//! data-free variants.

mod nd;
mod prune;
mod schedule;
mod supervised;

pub use nd::{
    assemble_layers, build_activation_cache, compose_students, compute_activations,
    compute_layer_inputs, distill_neighbourhood, layer_target, lookahead_loss, prunable_layers,
    run_jobs, teacher_layer_inputs, DistillJob, DistillResult, GaussianSource, InputSource,
    JobsReport, NormPolicy, StudentInit, Target,
};
pub use prune::{apply_mask, magnitude_prune_mask, mask_gradient, zero_fraction};
pub use schedule::{sparsity_at_step, KdConfig, LrSchedule, SparsitySchedule, TrainConfig};
pub use supervised::{
    distill_gaussian_end2end, distill_gaussian_end2end_with, evaluate, kd_finetune,
    kd_finetune_with, kd_loss, predict_logits, train_supervised, train_supervised_with, StepHook,
    TrainTrace, EVAL_BATCH,
};

use crate::error::{Error, Result};
use crate::network::Model;

/// Data-free distillation: a job whose inputs are fresh Gaussian draws.
pub fn distill_gaussian(job: &DistillJob, teacher: &Model) -> Result<DistillResult> {
    if !matches!(job.source, InputSource::Gaussian(_)) {
        return Err(Error::invalid(format!(
            "job {} does not use a gaussian source",
            job.id
        )));
    }
    distill_neighbourhood(job, teacher)
}

/// Prunes and re-distills one teacher layer under `schedule`.
pub fn distill_sparse_layer(
    teacher: &Model,
    stage: usize,
    layer: usize,
    schedule: &SparsitySchedule,
    source: InputSource,
    train: TrainConfig,
    seed: u64,
) -> Result<DistillResult> {
    let job = DistillJob::layer(
        format!("sparse-{stage}.{layer}"),
        teacher,
        stage,
        layer,
        source,
        train,
        Some(schedule.clone()),
        seed,
    )?;
    distill_neighbourhood(&job, teacher)
}
