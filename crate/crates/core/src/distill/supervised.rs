//! End-to-end phases: supervised training, KD fine-tuning and the
//! Gaussian-input KD baseline.

use super::schedule::{KdConfig, TrainConfig};
use crate::data::{augment_batch, BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::network::{accuracy_from_logits, ActivationNoise, Model};
use crate::rng::{gaussian_sample, Rng};
use crate::tensor::{
    one_hot, sgd_momentum_step, softmax, softmax_cross_entropy, NormMode, Scalar, Tensor,
};

/// Number of samples evaluated per forward pass.
pub const EVAL_BATCH: usize = 500;

/// Per-step losses of a training phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f32>,
}

/// Eval-mode logits for a whole dataset, in dataset order.
pub fn predict_logits(model: &Model, dataset: &Dataset) -> Result<Tensor> {
    let n = dataset.len();
    let mut parts = Vec::new();
    for start in (0..n).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(n);
        parts.push(model.forward(&dataset.images.slice_rows(start, end))?);
    }
    Tensor::concat_rows(&parts)
}

/// Test accuracy in percent.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64> {
    Ok(accuracy_from_logits(
        &predict_logits(model, dataset)?,
        &dataset.labels,
    ))
}

/// `𝓛_CE(softmax(t/τ), softmax(s/τ)) + λ·𝓛_CE(y, softmax(s))`, batch
/// means, with the gradient with respect to the student logits.
///
/// `labels` may be empty when `hard_weight` is zero.
pub fn kd_loss<T: Scalar>(
    teacher_logits: &Tensor<T>,
    student_logits: &Tensor<T>,
    labels: &[usize],
    temperature: T,
    hard_weight: T,
) -> Result<(T, Tensor<T>)> {
    let target = softmax(teacher_logits, temperature)?;
    let (soft, mut grad) = softmax_cross_entropy(student_logits, &target, temperature)?;
    if hard_weight == T::zero() {
        return Ok((soft, grad));
    }
    if labels.len() != student_logits.rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} logit rows",
            labels.len(),
            student_logits.rows()
        )));
    }
    let y = one_hot(labels, student_logits.shape()[1])?;
    let (hard, g_hard) = softmax_cross_entropy(student_logits, &y, T::one())?;
    grad.add_assign(&g_hard.scale(hard_weight))?;
    Ok((soft + hard_weight * hard, grad))
}

fn check_loss(job: &str, step: usize, loss: f32) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            job: job.to_string(),
            step,
            loss,
        })
    }
}

fn step_optimizer(model: &mut Model, cfg: &TrainConfig, step: usize) {
    sgd_momentum_step(
        model.params.parameters_mut(),
        cfg.lr.lr_at(step) as f32,
        cfg.momentum as f32,
        cfg.weight_decay as f32,
    );
}

/// Cross-entropy training with batch statistics. With `noise_sigma > 0`,
/// `𝒩(0, σ²)` is added after every neighbourhood on each training forward.
pub fn train_supervised(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    noise_sigma: f64,
    rng: &Rng,
) -> Result<TrainTrace> {
    train_supervised_with(model, data, cfg, noise_sigma, rng, &mut |_, _| {})
}

/// Called after every optimizer step with `(step, loss)`.
pub type StepHook<'a> = dyn FnMut(usize, f32) + 'a;

/// [`train_supervised`] with a per-step hook.
pub fn train_supervised_with(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    noise_sigma: f64,
    rng: &Rng,
    hook: &mut StepHook<'_>,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma must be finite and >= 0, got {noise_sigma}"
        )));
    }
    let mut stream = BatchStream::new(data.len(), cfg.batch_size, rng.split("batches", 0))?;
    let mut aug_rng = rng.split("augment", 0);
    let mut noise_rng = rng.split("train-noise", 0);
    let affected: Vec<usize> = (0..model.len()).collect();
    let mut trace = TrainTrace::default();
    model.params.zero_grad();
    for step in 0..cfg.steps {
        let idx = stream.next_indices();
        let x = augment_batch(
            &data.images.gather_rows(&idx),
            cfg.augment_shift,
            &mut aug_rng,
        );
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let target = one_hot(&labels, model.spec.class_count)?;
        let mut noise = ActivationNoise {
            std: noise_sigma,
            affected: affected.clone(),
            rng: &mut noise_rng,
        };
        let (logits, tape) = model.forward_train(&x, NormMode::Train, Some(&mut noise))?;
        let (loss, grad) = softmax_cross_entropy(&logits, &target, 1.0)?;
        check_loss("train_supervised", step, loss)?;
        let grads = model.backward(&tape, &grad)?;
        model.apply(&grads, &tape);
        step_optimizer(model, cfg, step);
        trace.losses.push(loss);
        hook(step, loss);
    }
    Ok(trace)
}

/// Fine-tunes `student` against a frozen `teacher` with [`kd_loss`] on
/// (augmented) training batches.
pub fn kd_finetune(
    student: &mut Model,
    teacher: &Model,
    data: &Dataset,
    cfg: &KdConfig,
    rng: &Rng,
) -> Result<TrainTrace> {
    kd_finetune_with(student, teacher, data, cfg, rng, &mut |_, _| {})
}

/// [`kd_finetune`] with a per-step hook.
pub fn kd_finetune_with(
    student: &mut Model,
    teacher: &Model,
    data: &Dataset,
    cfg: &KdConfig,
    rng: &Rng,
    hook: &mut StepHook<'_>,
) -> Result<TrainTrace> {
    cfg.validate()?;
    let train = &cfg.train;
    let mut stream = BatchStream::new(data.len(), train.batch_size, rng.split("batches", 0))?;
    let mut aug_rng = rng.split("augment", 0);
    let mut trace = TrainTrace::default();
    student.params.zero_grad();
    for step in 0..train.steps {
        let idx = stream.next_indices();
        let x = augment_batch(
            &data.images.gather_rows(&idx),
            train.augment_shift,
            &mut aug_rng,
        );
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let t_logits = teacher.forward(&x)?;
        let (s_logits, tape) = student.forward_train(&x, NormMode::Train, None)?;
        let (loss, grad) = kd_loss(
            &t_logits,
            &s_logits,
            &labels,
            cfg.temperature as f32,
            cfg.hard_weight as f32,
        )?;
        check_loss("kd_finetune", step, loss)?;
        let grads = student.backward(&tape, &grad)?;
        student.apply(&grads, &tape);
        step_optimizer(student, train, step);
        trace.losses.push(loss);
        hook(step, loss);
    }
    Ok(trace)
}

/// Whole-network distillation on `𝒩(0, 1)` images: the data-free
/// end-to-end baseline. Only the soft term is used since no labels exist.
pub fn distill_gaussian_end2end(
    student: &mut Model,
    teacher: &Model,
    cfg: &KdConfig,
    rng: &Rng,
) -> Result<TrainTrace> {
    distill_gaussian_end2end_with(student, teacher, cfg, rng, &mut |_, _| {})
}

/// [`distill_gaussian_end2end`] with a per-step hook.
pub fn distill_gaussian_end2end_with(
    student: &mut Model,
    teacher: &Model,
    cfg: &KdConfig,
    rng: &Rng,
    hook: &mut StepHook<'_>,
) -> Result<TrainTrace> {
    cfg.validate()?;
    let train = &cfg.train;
    let mut noise = rng.split("gaussian-input", 0);
    let mut shape = vec![train.batch_size];
    shape.extend_from_slice(&teacher.spec.input_shape);
    let mut trace = TrainTrace::default();
    student.params.zero_grad();
    for step in 0..train.steps {
        let x: Tensor = gaussian_sample(&mut noise, &shape, 0.0, 1.0);
        let t_logits = teacher.forward(&x)?;
        let (s_logits, tape) = student.forward_train(&x, NormMode::Train, None)?;
        let (loss, grad) = kd_loss(&t_logits, &s_logits, &[], cfg.temperature as f32, 0.0)?;
        check_loss("gaussian_kd", step, loss)?;
        let grads = student.backward(&tape, &grad)?;
        student.apply(&grads, &tape);
        step_optimizer(student, train, step);
        trace.losses.push(loss);
        hook(step, loss);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, v.len() / rows], v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_agreement_is_ln2() {
        let z = t(1, &[0.0, 0.0]);
        let (l, _) = kd_loss(&z, &z, &[], 1.0, 0.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn peaked_agreement_counts_soft_entropy() {
        // independent high-precision evaluation: 4.534537960443283e-8
        let z = t(1, &[10.0, -10.0]);
        let (l, _) = kd_loss(&z, &z, &[0], 1.0, 1.0).unwrap();
        assert!((l - 4.534_537_960_443_283e-8).abs() < 1e-15, "{l}");
    }

    #[test]
    fn disagreeing_pair_matches_scalar_script() {
        let (l, _) = kd_loss(&t(1, &[1.0, 0.0]), &t(1, &[0.0, 1.0]), &[0], 2.0, 1.0).unwrap();
        assert!((l - 2.098_568_337_299_257).abs() < 1e-12, "{l}");
    }

    #[test]
    fn one_hot_teacher_reduces_to_cross_entropy() {
        // a very peaked teacher at τ = 1 is a one-hot target on its argmax
        let teacher = t(2, &[200.0, 0.0, 0.0, 0.0, 0.0, 200.0]);
        let student = t(2, &[0.3, -1.2, 0.7, 1.1, 0.0, -0.4]);
        let (kd, _) = kd_loss(&teacher, &student, &[], 1.0, 0.0).unwrap();
        let y = one_hot::<f64>(&[0, 2], 3).unwrap();
        let (ce, _) = softmax_cross_entropy(&student, &y, 1.0).unwrap();
        assert!((kd - ce).abs() < 1e-12);
    }

    #[test]
    fn hard_term_needs_labels() {
        let z = t(1, &[0.0, 1.0]);
        assert!(kd_loss(&z, &z, &[], 1.0, 1.0).is_err());
        assert!(kd_loss(&z, &z, &[0], 0.0, 1.0).is_err());
    }
}
