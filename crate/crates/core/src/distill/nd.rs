//! Independent neighbourhood (and single-layer) distillation jobs.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::prune::{apply_mask, magnitude_prune_mask, mask_gradient};
use super::schedule::{sparsity_at_step, SparsitySchedule, TrainConfig};
use super::supervised::EVAL_BATCH;
use crate::cache::ActivationCache;
use crate::data::{BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::network::exec::{self, accumulate_grads, apply_running_stats, Tape};
use crate::network::{
    forward_stages, infer_shape, init_params, LayerParams, LayerSpec, Model, NeighbourhoodSpec,
    SeqParams, Shortcut,
};
use crate::rng::{gaussian_sample, Rng};
use crate::tensor::{
    mse, mse_backward, sgd_momentum_step, NormMode, Padding, RunningStats, Tensor,
};

/// What the student is trained to reproduce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// Teacher neighbourhood `i`.
    Neighbourhood(usize),
    /// A single weight layer. `stage` counts the stem as 0, neighbourhoods
    /// from 1 and the head last; `layer` indexes the stage's layer list.
    Layer { stage: usize, layer: usize },
}

/// Per-channel affine applied to `𝒩(0, 1)` draws.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSource {
    pub shift: Option<Vec<f32>>,
    pub scale: Option<Vec<f32>>,
}

impl GaussianSource {
    pub fn standard() -> Self {
        GaussianSource::default()
    }

    /// Shift and scale from the affine of the last normalization layer
    /// feeding boundary `i`.
    pub fn from_teacher_norm(teacher: &Model, boundary: usize) -> Result<Self> {
        let stages = teacher.stages();
        let stage = stages
            .get(boundary)
            .ok_or_else(|| Error::invalid(format!("no boundary {boundary}")))?;
        let norm = stage
            .params
            .layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerParams::Norm { gamma, beta, .. } => Some((gamma, beta)),
                _ => None,
            })
            .ok_or_else(|| {
                Error::invalid(format!("no normalization layer before boundary {boundary}"))
            })?;
        Ok(GaussianSource {
            shift: Some(norm.1.value.data().to_vec()),
            scale: Some(norm.0.value.data().iter().map(|g| g.abs()).collect()),
        })
    }

    /// Multiplies the standard deviation of every channel by `std`.
    pub fn scaled(mut self, std: f32, channels: usize) -> Self {
        self.scale = Some(match self.scale {
            Some(s) => s.into_iter().map(|v| v * std).collect(),
            None => vec![std; channels],
        });
        self
    }

    fn sample(&self, rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
        let mut x: Tensor = gaussian_sample(rng, shape, 0.0, 1.0);
        if self.shift.is_none() && self.scale.is_none() {
            return Ok(x);
        }
        let c = shape[1];
        let hw = x.row_len() / c;
        for v in [&self.shift, &self.scale].into_iter().flatten() {
            if v.len() != c {
                return Err(Error::shape(
                    "gaussian_source",
                    format!("{} channels, affine of {}", c, v.len()),
                ));
            }
        }
        for (idx, val) in x.data_mut().iter_mut().enumerate() {
            let ch = (idx / hw) % c;
            let s = self.scale.as_ref().map_or(1.0, |s| s[ch]);
            let b = self.shift.as_ref().map_or(0.0, |b| b[ch]);
            *val = *val * s + b;
        }
        Ok(x)
    }
}

/// Where a job's training inputs come from.
#[derive(Clone, Debug)]
pub enum InputSource {
    /// Precomputed teacher activations, one row per sample.
    Cache(Arc<Tensor>),
    /// Fresh Gaussian inputs every step.
    Gaussian(GaussianSource),
    /// Teacher prefix recomputed on every batch of this dataset.
    Online(Arc<Dataset>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum StudentInit {
    /// Exact copy of the teacher's weights (the student must share its layout).
    Teacher,
    Random,
    Params(SeqParams),
}

/// Normalization behaviour of the student while it is distilled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPolicy {
    /// Stored statistics (identity if absent) are used and never updated;
    /// only the affine parameters train.
    Frozen,
    /// Batch statistics with running-average updates.
    Batch,
}

#[derive(Clone, Debug)]
pub struct DistillJob {
    pub id: String,
    pub target: Target,
    pub student: Vec<LayerSpec>,
    pub init: StudentInit,
    pub norm: NormPolicy,
    pub source: InputSource,
    /// `α_1 … α_d`; the depth is clipped to the neighbourhoods that follow.
    pub lookahead: Vec<f64>,
    pub train: TrainConfig,
    pub sparsity: Option<SparsitySchedule>,
    pub seed: u64,
}

impl DistillJob {
    /// Plain ND job for neighbourhood `i` with a randomly initialized student.
    pub fn neighbourhood(
        id: impl Into<String>,
        i: usize,
        student: &NeighbourhoodSpec,
        source: InputSource,
        train: TrainConfig,
        seed: u64,
    ) -> Self {
        DistillJob {
            id: id.into(),
            target: Target::Neighbourhood(i),
            student: student.layers.clone(),
            init: StudentInit::Random,
            norm: NormPolicy::Batch,
            source,
            lookahead: Vec::new(),
            train,
            sparsity: None,
            seed,
        }
    }

    /// Single-layer job initialized from the teacher, optionally pruned.
    #[allow(clippy::too_many_arguments)]
    pub fn layer(
        id: impl Into<String>,
        teacher: &Model,
        stage: usize,
        layer: usize,
        source: InputSource,
        train: TrainConfig,
        sparsity: Option<SparsitySchedule>,
        seed: u64,
    ) -> Result<Self> {
        let (spec, _) = layer_target(teacher, stage, layer)?;
        Ok(DistillJob {
            id: id.into(),
            target: Target::Layer { stage, layer },
            student: vec![spec],
            init: StudentInit::Teacher,
            norm: NormPolicy::Frozen,
            source,
            lookahead: Vec::new(),
            train,
            sparsity,
            seed,
        })
    }

    pub fn with_init(mut self, init: StudentInit, norm: NormPolicy) -> Self {
        self.init = init;
        self.norm = norm;
        self
    }

    pub fn with_lookahead(mut self, alphas: Vec<f64>) -> Self {
        self.lookahead = alphas;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.lookahead.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::invalid(format!(
                "job {}: look-ahead weights must be finite and >= 0",
                self.id
            )));
        }
        if matches!(self.target, Target::Layer { .. }) && !self.lookahead.is_empty() {
            return Err(Error::invalid(format!(
                "job {}: look-ahead is defined for neighbourhoods only",
                self.id
            )));
        }
        if let Some(s) = &self.sparsity {
            s.validate()?;
        }
        self.train.validate()
    }
}

/// Outcome of one job.
#[derive(Clone, Debug)]
pub struct DistillResult {
    pub id: String,
    pub target: Target,
    pub student: Vec<LayerSpec>,
    pub params: SeqParams,
    /// Total loss per step.
    pub losses: Vec<f32>,
    /// Keep-masks per student layer for sparse jobs.
    pub masks: Vec<Option<Vec<bool>>>,
    pub wall_s: f64,
}

impl DistillResult {
    /// Equality of everything the job computes (timing excluded).
    pub fn same_outcome(&self, other: &DistillResult) -> bool {
        self.id == other.id
            && self.params == other.params
            && self.masks == other.masks
            && self.losses.len() == other.losses.len()
            && self
                .losses
                .iter()
                .zip(&other.losses)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Teacher layer `(stage, layer)` as a standalone layer; a projection
/// shortcut becomes its 1×1 convolution.
pub fn layer_target(
    teacher: &Model,
    stage: usize,
    layer: usize,
) -> Result<(LayerSpec, LayerParams)> {
    let stages = teacher.stages();
    let st = stages
        .get(stage)
        .ok_or_else(|| Error::invalid(format!("no stage {stage}")))?;
    let spec = st
        .layers
        .get(layer)
        .ok_or_else(|| Error::invalid(format!("stage {stage} has no layer {layer}")))?;
    let params = st.params.layers[layer].clone();
    let spec = match spec {
        LayerSpec::Conv { .. } | LayerSpec::Dense { .. } => spec.clone(),
        LayerSpec::AddSkipBegin {
            shortcut:
                Shortcut::Projection {
                    in_channels,
                    out_channels,
                    stride,
                },
        } => LayerSpec::Conv {
            in_channels: *in_channels,
            out_channels: *out_channels,
            kernel: 1,
            stride: *stride,
            padding: Padding::Valid,
        },
        other => {
            return Err(Error::invalid(format!(
                "layer {other:?} has no weights to distill"
            )))
        }
    };
    Ok((spec, params))
}

/// Every (stage, layer) carrying a prunable weight tensor.
pub fn prunable_layers(teacher: &Model) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (s, st) in teacher.stages().iter().enumerate() {
        for (l, p) in st.params.layers.iter().enumerate() {
            if p.prunable().is_some() {
                out.push((s, l));
            }
        }
    }
    out
}

/// Inputs seen by teacher layer `(stage, layer)` for a batch of images.
pub fn teacher_layer_inputs(
    teacher: &Model,
    stage: usize,
    layer: usize,
    images: &Tensor,
) -> Result<Tensor> {
    let stages = teacher.stages();
    if stage >= stages.len() {
        return Err(Error::invalid(format!("no stage {stage}")));
    }
    let a = forward_stages(&stages[..stage], images, None)?;
    let (_, tape) = exec::forward(
        stages[stage].layers,
        stages[stage].params,
        &a,
        NormMode::Eval,
        true,
    )?;
    tape.expect("recorded")
        .layer_input(layer)
        .cloned()
        .ok_or_else(|| Error::invalid(format!("layer {layer} of stage {stage} keeps no input")))
}

fn batched(dataset: &Dataset, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let n = dataset.len();
    let mut parts = Vec::new();
    for start in (0..n).step_by(EVAL_BATCH) {
        parts.push(f(&dataset
            .images
            .slice_rows(start, (start + EVAL_BATCH).min(n)))?);
    }
    Tensor::concat_rows(&parts)
}

/// Teacher activations at `boundary` for every sample, in dataset order.
pub fn compute_activations(teacher: &Model, dataset: &Dataset, boundary: usize) -> Result<Tensor> {
    batched(dataset, |x| teacher.forward_prefix(boundary, x))
}

/// Computes and writes the activation cache for `boundary`.
pub fn build_activation_cache(
    teacher: &Model,
    dataset: &Dataset,
    boundary: usize,
    path: &Path,
) -> Result<ActivationCache> {
    let cache = ActivationCache {
        boundary,
        path: path.to_path_buf(),
        fingerprint: dataset.fingerprint(),
        activations: compute_activations(teacher, dataset, boundary)?,
    };
    cache.save()?;
    Ok(cache)
}

/// Inputs of one teacher layer for every sample.
pub fn compute_layer_inputs(
    teacher: &Model,
    dataset: &Dataset,
    stage: usize,
    layer: usize,
) -> Result<Tensor> {
    batched(dataset, |x| teacher_layer_inputs(teacher, stage, layer, x))
}

/// `[𝓛_{i,0}, 𝓛_{i,1}, …, 𝓛_{i,d}]`: the output MSE and the MSE after
/// propagating both outputs through the next `d` teacher neighbourhoods.
pub fn lookahead_loss(
    student: &[LayerSpec],
    student_params: &SeqParams,
    teacher: &Model,
    i: usize,
    a: &Tensor,
    depth: usize,
) -> Result<Vec<f64>> {
    if i + depth >= teacher.len() {
        return Err(Error::invalid(format!(
            "look-ahead depth {depth} from neighbourhood {i} passes the last neighbourhood"
        )));
    }
    let mut s = exec::forward_eval(student, student_params, a)?;
    let mut t = teacher.forward_neighbourhood(i, a)?;
    let mut out = vec![mse(&s, &t)? as f64];
    for j in 1..=depth {
        s = teacher.forward_neighbourhood(i + j, &s)?;
        t = teacher.forward_neighbourhood(i + j, &t)?;
        out.push(mse(&s, &t)? as f64);
    }
    Ok(out)
}

struct Resolved {
    teacher_layers: Vec<LayerSpec>,
    teacher_params: SeqParams,
    /// Neighbourhood index for look-ahead and shape checks.
    neighbourhood: Option<usize>,
}

fn resolve(job: &DistillJob, teacher: &Model) -> Result<Resolved> {
    match job.target {
        Target::Neighbourhood(i) => {
            let n =
                teacher.spec.neighbourhoods.get(i).ok_or_else(|| {
                    Error::invalid(format!("job {}: no neighbourhood {i}", job.id))
                })?;
            let out = infer_shape(&job.student, &n.input_shape)?;
            if out != n.output_shape {
                return Err(Error::shape(
                    "distill",
                    format!(
                        "student maps {:?} to {out:?}, teacher to {:?}",
                        n.input_shape, n.output_shape
                    ),
                ));
            }
            Ok(Resolved {
                teacher_layers: n.layers.clone(),
                teacher_params: teacher.params.neighbourhoods[i].clone(),
                neighbourhood: Some(i),
            })
        }
        Target::Layer { stage, layer } => {
            let (spec, params) = layer_target(teacher, stage, layer)?;
            if job.student != [spec.clone()] {
                return Err(Error::invalid(format!(
                    "job {}: single-layer student must match the teacher layer",
                    job.id
                )));
            }
            Ok(Resolved {
                teacher_layers: vec![spec],
                teacher_params: SeqParams {
                    layers: vec![params],
                },
                neighbourhood: None,
            })
        }
    }
}

fn initial_params(job: &DistillJob, resolved: &Resolved, rng: &Rng) -> Result<SeqParams> {
    let mut p = match &job.init {
        StudentInit::Teacher => {
            if job.student != resolved.teacher_layers {
                return Err(Error::invalid(format!(
                    "job {}: teacher initialization needs the teacher's layout",
                    job.id
                )));
            }
            resolved.teacher_params.clone()
        }
        StudentInit::Random => init_params(&job.student, &mut rng.split("init", 0)),
        StudentInit::Params(p) => p.clone(),
    };
    p.check_against(&job.student)?;
    p.reset_optimizer_state();
    if job.norm == NormPolicy::Frozen {
        for l in &mut p.layers {
            if let LayerParams::Norm { gamma, running, .. } = l {
                if running.is_none() {
                    let c = gamma.value.len();
                    *running = Some(RunningStats {
                        mean: Tensor::zeros(&[c]),
                        var: Tensor::full(&[c], 1.0),
                    });
                }
            }
        }
    }
    Ok(p)
}

/// Trains one student against its teacher target. Non-finite losses abort
/// with [`Error::Diverged`].
pub fn distill_neighbourhood(job: &DistillJob, teacher: &Model) -> Result<DistillResult> {
    let start = Instant::now();
    job.validate()?;
    let resolved = resolve(job, teacher)?;
    let rng = Rng::new(job.seed);
    let mut params = initial_params(job, &resolved, &rng)?;
    let mode = match job.norm {
        NormPolicy::Frozen => NormMode::Eval,
        NormPolicy::Batch => NormMode::Train,
    };
    let depth = match resolved.neighbourhood {
        Some(i) => job.lookahead.len().min(teacher.len() - 1 - i),
        None => 0,
    };
    let stages = teacher.stages();
    let la_stages: Vec<_> = match resolved.neighbourhood {
        Some(i) => (1..=depth).map(|j| stages[i + 1 + j]).collect(),
        None => Vec::new(),
    };
    let input_shape: Vec<usize> = match resolved.neighbourhood {
        Some(i) => teacher.spec.neighbourhoods[i].input_shape.clone(),
        None => Vec::new(),
    };

    let mut stream = match &job.source {
        InputSource::Cache(t) => Some(BatchStream::new(
            t.shape()[0],
            job.train.batch_size,
            rng.split("batches", 0),
        )?),
        InputSource::Online(d) => Some(BatchStream::new(
            d.len(),
            job.train.batch_size,
            rng.split("batches", 0),
        )?),
        InputSource::Gaussian(_) => None,
    };
    let mut gauss_rng = rng.split("gaussian", 0);
    let mut gauss_shape = vec![job.train.batch_size];
    gauss_shape.extend_from_slice(&input_shape);

    let mut masks: Vec<Option<Vec<bool>>> = vec![None; job.student.len()];
    let mut losses = Vec::with_capacity(job.train.steps);
    let steps = match &job.sparsity {
        Some(s) => job.train.steps.max(s.total_steps()),
        None => job.train.steps,
    };

    for step in 0..steps {
        if let Some(sched) = &job.sparsity {
            if sched.is_update_step(step) {
                let s = sparsity_at_step(sched, step);
                for (l, slot) in params.layers.iter_mut().zip(masks.iter_mut()) {
                    if let Some(w) = l.prunable_mut() {
                        let m = magnitude_prune_mask(&w.value, s)?;
                        apply_mask(w, &m);
                        *slot = Some(m);
                    }
                }
            }
        }
        let a = match &job.source {
            InputSource::Cache(t) => {
                t.gather_rows(&stream.as_mut().expect("stream").next_indices())
            }
            InputSource::Online(d) => {
                let x = d
                    .images
                    .gather_rows(&stream.as_mut().expect("stream").next_indices());
                match (job.target, resolved.neighbourhood) {
                    (_, Some(i)) => teacher.forward_prefix(i, &x)?,
                    (Target::Layer { stage, layer }, None) => {
                        teacher_layer_inputs(teacher, stage, layer, &x)?
                    }
                    _ => unreachable!("targets resolve to a neighbourhood or a layer"),
                }
            }
            InputSource::Gaussian(g) => {
                if resolved.neighbourhood.is_none() {
                    return Err(Error::invalid(format!(
                        "job {}: gaussian inputs need a neighbourhood target",
                        job.id
                    )));
                }
                g.sample(&mut gauss_rng, &gauss_shape)?
            }
        };
        let t0 = exec::forward_eval(&resolved.teacher_layers, &resolved.teacher_params, &a)?;
        let (s0, tape) = exec::forward(&job.student, &params, &a, mode, true)?;
        let tape = tape.expect("recorded");

        // look-ahead chains through frozen teacher neighbourhoods
        let mut t_chain = vec![t0];
        let mut s_chain = vec![s0];
        let mut la_tapes: Vec<Tape> = Vec::with_capacity(depth);
        for st in &la_stages {
            let t_next =
                exec::forward_eval(st.layers, st.params, t_chain.last().expect("nonempty"))?;
            let (s_next, tp) = exec::forward(
                st.layers,
                st.params,
                s_chain.last().expect("nonempty"),
                NormMode::Eval,
                true,
            )?;
            t_chain.push(t_next);
            s_chain.push(s_next);
            la_tapes.push(tp.expect("recorded"));
        }
        let weight = |j: usize| {
            if j == 0 {
                1.0
            } else {
                job.lookahead[j - 1] as f32
            }
        };
        let mut loss = 0.0f32;
        for j in 0..=depth {
            loss += weight(j) * mse(&s_chain[j], &t_chain[j])?;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                job: job.id.clone(),
                step,
                loss,
            });
        }
        let mut g = mse_backward(&s_chain[depth], &t_chain[depth])?.scale(weight(depth));
        for j in (1..=depth).rev() {
            let st = &la_stages[j - 1];
            let (gx, _) = exec::backward(st.layers, st.params, &la_tapes[j - 1], &g, false)?;
            g = gx;
            g.add_assign(&mse_backward(&s_chain[j - 1], &t_chain[j - 1])?.scale(weight(j - 1)))?;
        }
        let (_, pg) = exec::backward(&job.student, &params, &tape, &g, true)?;
        let mut pg = pg.expect("param grads");
        for ((l, grads), m) in params.layers.iter().zip(pg.iter_mut()).zip(&masks) {
            if let (Some(m), Some(_), Some(gw)) = (m, l.prunable(), grads.first_mut()) {
                mask_gradient(gw, m);
            }
        }
        accumulate_grads(&mut params, &pg);
        if mode == NormMode::Train {
            apply_running_stats(&mut params, &tape);
        }
        sgd_momentum_step(
            params.parameters_mut(),
            job.train.lr.lr_at(step) as f32,
            job.train.momentum as f32,
            job.train.weight_decay as f32,
        );
        for (l, m) in params.layers.iter_mut().zip(&masks) {
            if let (Some(m), Some(w)) = (m, l.prunable_mut()) {
                apply_mask(w, m);
            }
        }
        losses.push(loss);
    }
    // a ramp that ends on the last step still leaves the final sparsity
    if let Some(sched) = &job.sparsity {
        if steps <= sched.ramp_steps {
            for (l, slot) in params.layers.iter_mut().zip(masks.iter_mut()) {
                if let Some(w) = l.prunable_mut() {
                    let m = magnitude_prune_mask(&w.value, sched.final_sparsity)?;
                    apply_mask(w, &m);
                    *slot = Some(m);
                }
            }
        }
    }
    params.reset_optimizer_state();
    Ok(DistillResult {
        id: job.id.clone(),
        target: job.target,
        student: job.student.clone(),
        params,
        losses,
        masks,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Results in job order plus timings.
#[derive(Debug)]
pub struct JobsReport {
    pub results: Vec<Result<DistillResult>>,
    pub wall_s: f64,
    pub workers: usize,
}

impl JobsReport {
    /// Sum of per-job wall times (the sequential cost).
    pub fn sequential_s(&self) -> f64 {
        self.results
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .map(|r| r.wall_s)
            .sum()
    }

    /// All results, or the first failure.
    pub fn into_results(self) -> Result<Vec<DistillResult>> {
        self.results.into_iter().collect()
    }
}

/// Runs jobs on a pool of `workers` threads. Each job depends only on its
/// own spec and seed, so results do not depend on the worker count.
pub fn run_jobs(jobs: &[DistillJob], teacher: &Model, workers: usize) -> Result<JobsReport> {
    let workers = workers.max(1);
    let start = Instant::now();
    let results = if workers == 1 {
        jobs.iter()
            .map(|j| distill_neighbourhood(j, teacher))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Runtime(format!("building worker pool: {e}")))?;
        pool.install(|| {
            jobs.par_iter()
                .map(|j| distill_neighbourhood(j, teacher))
                .collect()
        })
    };
    Ok(JobsReport {
        results,
        wall_s: start.elapsed().as_secs_f64(),
        workers,
    })
}

/// Teacher with every neighbourhood replaced by the given student.
pub fn compose_students(
    teacher: &Model,
    students: &[Option<(NeighbourhoodSpec, SeqParams)>],
) -> Result<Model> {
    if students.len() != teacher.len() {
        return Err(Error::invalid(format!(
            "{} students for {} neighbourhoods",
            students.len(),
            teacher.len()
        )));
    }
    let mut model = teacher.clone();
    for (i, s) in students.iter().enumerate() {
        let (spec, params) = s
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no student for neighbourhood {i}")))?;
        model = model.with_replacement(i, spec, params.clone())?;
    }
    model.params.reset_optimizer_state();
    Ok(model)
}

/// Writes single-layer results back into a copy of the teacher.
pub fn assemble_layers(teacher: &Model, results: &[DistillResult]) -> Result<Model> {
    let mut model = teacher.clone();
    for r in results {
        let Target::Layer { stage, layer } = r.target else {
            return Err(Error::invalid(format!(
                "result {} is not a single-layer job",
                r.id
            )));
        };
        let new = r
            .params
            .layers
            .first()
            .cloned()
            .ok_or_else(|| Error::invalid("empty result"))?;
        let part = model
            .params
            .parts_mut()
            .nth(stage)
            .ok_or_else(|| Error::invalid(format!("no stage {stage}")))?;
        let slot = part
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::invalid(format!("no layer {layer}")))?;
        match (&mut *slot, new) {
            (LayerParams::Conv { weight }, LayerParams::Conv { weight: w }) => *weight = w,
            (LayerParams::Dense { weight, bias }, LayerParams::Dense { weight: w, bias: b }) => {
                *weight = w;
                *bias = b;
            }
            _ => {
                return Err(Error::invalid(format!(
                    "result {} does not fit layer {stage}.{layer}",
                    r.id
                )))
            }
        }
    }
    model.params.reset_optimizer_state();
    Ok(model)
}
