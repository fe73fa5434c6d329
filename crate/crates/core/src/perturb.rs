//! Perturbation experiments: accuracy under activation and weight noise,
//! weight-noise calibration, error accumulation across layers and
//! noise-regularized teacher training.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distill::{evaluate, train_supervised, TrainConfig, TrainTrace, EVAL_BATCH};
use crate::error::{Error, Result};
use crate::network::{accuracy_from_logits, ActivationNoise, Model};
use crate::rng::{gaussian_sample, Rng};
use crate::tensor::Tensor;

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbTarget {
    /// Noise on neighbourhood outputs; `affected` holds neighbourhood indices.
    Activations,
    /// Noise on weights; `affected` indexes [`weight_layers`].
    Weights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub target: PerturbTarget,
    pub epsilon: f64,
    pub affected: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl PerturbSpec {
    pub fn activations(epsilon: f64, affected: Vec<usize>, seeds: Vec<u64>) -> Self {
        PerturbSpec {
            target: PerturbTarget::Activations,
            epsilon,
            affected,
            seeds,
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid(format!(
                "amplitude must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one evaluation seed is needed"));
        }
        let limit = match self.target {
            PerturbTarget::Activations => model.len(),
            PerturbTarget::Weights => weight_layers(model).len(),
        };
        if let Some(&bad) = self.affected.iter().find(|&&i| i >= limit) {
            return Err(Error::invalid(format!(
                "affected index {bad} out of range (< {limit})"
            )));
        }
        Ok(())
    }
}

/// Train-time noise injected after every neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRegSpec {
    pub sigma: f64,
}

/// Accuracy over several noise seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyAccuracy {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub sd: f64,
}

impl NoisyAccuracy {
    fn from_runs(seeds: &[u64], per_seed: Vec<f64>) -> Self {
        let (mean, sd) = mean_sd(&per_seed);
        NoisyAccuracy {
            seeds: seeds.to_vec(),
            per_seed,
            mean,
            sd,
        }
    }
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Eval-mode logits with `𝒩(0, std²)` on the outputs of `affected`
/// neighbourhoods, drawn fresh for every sample and forward pass.
pub fn noisy_logits(
    model: &Model,
    dataset: &Dataset,
    std: f64,
    affected: &[usize],
    rng: &mut Rng,
) -> Result<Tensor> {
    let n = dataset.len();
    let mut parts = Vec::new();
    for start in (0..n).step_by(EVAL_BATCH) {
        let x = dataset
            .images
            .slice_rows(start, (start + EVAL_BATCH).min(n));
        let mut noise = ActivationNoise {
            std,
            affected: affected.to_vec(),
            rng: &mut *rng,
        };
        parts.push(model.forward_noisy(&x, &mut noise)?);
    }
    Tensor::concat_rows(&parts)
}

/// Noise stream for one evaluation seed.
pub fn activation_noise_rng(seed: u64) -> Rng {
    Rng::new(seed).split("activation-noise", 0)
}

/// Test accuracy with activation noise, one run per seed.
pub fn eval_with_activation_noise(
    model: &Model,
    dataset: &Dataset,
    spec: &PerturbSpec,
) -> Result<NoisyAccuracy> {
    spec.validate(model)?;
    if spec.target != PerturbTarget::Activations {
        return Err(Error::invalid("expected an activation perturbation"));
    }
    let per_seed = spec
        .seeds
        .iter()
        .map(|&s| {
            let logits = noisy_logits(
                model,
                dataset,
                spec.epsilon,
                &spec.affected,
                &mut activation_noise_rng(s),
            )?;
            Ok(accuracy_from_logits(&logits, &dataset.labels))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoisyAccuracy::from_runs(&spec.seeds, per_seed))
}

/// Every `(stage, layer)` holding a weight kernel, in forward order.
pub fn weight_layers(model: &Model) -> Vec<(usize, usize)> {
    crate::distill::prunable_layers(model)
}

/// Copy of `model` with `𝒩(0, σ²)` added to the kernels of the listed
/// layers. `layers` are `(index into weight_layers, σ)` pairs; each layer's
/// draw depends only on `seed` and its index.
pub fn perturb_weights(model: &Model, layers: &[(usize, f64)], seed: u64) -> Result<Model> {
    let all = weight_layers(model);
    let mut out = model.clone();
    for &(idx, sigma) in layers {
        let &(stage, layer) = all.get(idx).ok_or_else(|| {
            Error::invalid(format!("weight layer {idx} out of range (< {})", all.len()))
        })?;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(format!(
                "weight noise must be finite and >= 0, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            continue;
        }
        let part = out
            .params
            .parts_mut()
            .nth(stage)
            .expect("stage from weight_layers");
        let w = part.layers[layer].prunable_mut().expect("prunable layer");
        let mut rng = Rng::new(seed).split("weight-noise", idx as u64);
        let noise: Tensor = gaussian_sample(&mut rng, w.value.shape(), 0.0, sigma);
        w.value.add_assign(&noise)?;
    }
    Ok(out)
}

/// Test accuracy with weight noise on the listed layers, one run per seed.
pub fn eval_with_weight_noise(
    model: &Model,
    dataset: &Dataset,
    layers: &[(usize, f64)],
    seeds: &[u64],
) -> Result<NoisyAccuracy> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one evaluation seed is needed"));
    }
    let per_seed = seeds
        .iter()
        .map(|&s| evaluate(&perturb_weights(model, layers, s)?, dataset))
        .collect::<Result<Vec<_>>>()?;
    Ok(NoisyAccuracy::from_runs(seeds, per_seed))
}

/// Either kind of perturbation.
pub fn eval_perturbed(
    model: &Model,
    dataset: &Dataset,
    spec: &PerturbSpec,
) -> Result<NoisyAccuracy> {
    match spec.target {
        PerturbTarget::Activations => eval_with_activation_noise(model, dataset, spec),
        PerturbTarget::Weights => {
            spec.validate(model)?;
            let layers: Vec<_> = spec.affected.iter().map(|&i| (i, spec.epsilon)).collect();
            eval_with_weight_noise(model, dataset, &layers, &spec.seeds)
        }
    }
}

/// Empirical standard deviation of each neighbourhood's output (boundaries
/// `1..=n`) over a dataset.
pub fn activation_std(model: &Model, dataset: &Dataset) -> Result<Vec<f64>> {
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); model.len()];
    let n = dataset.len();
    let stages = model.stages();
    for start in (0..n).step_by(EVAL_BATCH) {
        let mut x = dataset
            .images
            .slice_rows(start, (start + EVAL_BATCH).min(n));
        for (s, st) in stages[..=model.len()].iter().enumerate() {
            x = crate::network::exec::forward_eval(st.layers, st.params, &x)?;
            if s > 0 {
                let acc = &mut sums[s - 1];
                for &v in x.data() {
                    acc.0 += v as f64;
                    acc.1 += (v as f64) * (v as f64);
                }
                acc.2 += x.len();
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(s, s2, c)| {
            let m = s / c as f64;
            (s2 / c as f64 - m * m).max(0.0).sqrt()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub affected: Vec<usize>,
    pub accuracy: NoisyAccuracy,
    pub baseline_acc: f64,
}

impl SweepRow {
    /// Mean accuracy change relative to the clean model.
    pub fn delta(&self) -> f64 {
        self.accuracy.mean - self.baseline_acc
    }
}

/// Thresholding curve: one row per (affected set, ε) grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub baseline_acc: f64,
    pub rows: Vec<SweepRow>,
    /// Output std of each neighbourhood on the sweep dataset.
    pub activation_std: Vec<f64>,
}

/// Allowed |Δacc| below the threshold, in points.
pub const THRESHOLD_TOLERANCE: f64 = 1.0;

impl SweepTable {
    /// Rows for one affected set, ordered by ε.
    pub fn curve(&self, affected: &[usize]) -> Vec<&SweepRow> {
        let mut v: Vec<_> = self
            .rows
            .iter()
            .filter(|r| r.affected == affected)
            .collect();
        v.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
        v
    }

    /// Largest grid ε such that every grid ε' ≤ ε keeps |Δacc| below
    /// [`THRESHOLD_TOLERANCE`]; `None` if even the smallest fails.
    pub fn threshold(&self, affected: &[usize]) -> Option<f64> {
        let mut best = None;
        for r in self.curve(affected) {
            if r.delta().abs() < THRESHOLD_TOLERANCE {
                best = Some(r.epsilon);
            } else {
                break;
            }
        }
        best
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record([
            "epsilon",
            "affected_count",
            "affected_ids",
            "seed_count",
            "acc_mean",
            "acc_sd",
            "baseline_acc",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            let ids: Vec<String> = r.affected.iter().map(usize::to_string).collect();
            w.write_record([
                r.epsilon.to_string(),
                r.affected.len().to_string(),
                ids.join(";"),
                r.accuracy.seeds.len().to_string(),
                r.accuracy.mean.to_string(),
                r.accuracy.sd.to_string(),
                r.baseline_acc.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Runtime(format!("csv: {e}"))
}

/// Activation-noise sweep over `epsilons × affected_sets`. Grid points are
/// evaluated in parallel on the current rayon pool; each owns its seeds.
pub fn sweep_threshold(
    model: &Model,
    dataset: &Dataset,
    epsilons: &[f64],
    affected_sets: &[Vec<usize>],
    seeds: &[u64],
) -> Result<SweepTable> {
    let baseline_acc = evaluate(model, dataset)?;
    let grid: Vec<(f64, &Vec<usize>)> = affected_sets
        .iter()
        .flat_map(|a| epsilons.iter().map(move |&e| (e, a)))
        .collect();
    let rows = grid
        .par_iter()
        .map(|&(epsilon, affected)| {
            let spec = PerturbSpec::activations(epsilon, affected.clone(), seeds.to_vec());
            Ok(SweepRow {
                epsilon,
                affected: affected.clone(),
                accuracy: eval_with_activation_noise(model, dataset, &spec)?,
                baseline_acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        baseline_acc,
        rows,
        activation_std: activation_std(model, dataset)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Index into [`weight_layers`].
    pub layer: usize,
    pub sigma: f64,
    /// Mean accuracy drop at `sigma`, in points.
    pub drop: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Mean accuracy drop caused by weight noise `sigma` on one layer.
pub fn weight_noise_drop(
    model: &Model,
    dataset: &Dataset,
    layer: usize,
    sigma: f64,
    seeds: &[u64],
    baseline: f64,
) -> Result<f64> {
    Ok(baseline - eval_with_weight_noise(model, dataset, &[(layer, sigma)], seeds)?.mean)
}

const MAX_BRACKET_DOUBLINGS: usize = 40;
const MAX_BISECTIONS: usize = 40;

/// Bisection on σ_w until the mean drop from perturbing one layer is within
/// `tolerance` of `target_drop`. The same seeds are used at every σ_w, so
/// the drop is a deterministic function of σ_w.
pub fn calibrate_weight_noise(
    model: &Model,
    dataset: &Dataset,
    layer: usize,
    target_drop: f64,
    tolerance: f64,
    seeds: &[u64],
) -> Result<Calibration> {
    if !(target_drop.is_finite() && target_drop >= 0.0 && tolerance.is_finite() && tolerance > 0.0)
    {
        return Err(Error::invalid(format!(
            "target drop {target_drop} and tolerance {tolerance} must be finite, >= 0 and > 0"
        )));
    }
    let layers = weight_layers(model);
    let &(stage, l) = layers.get(layer).ok_or_else(|| {
        Error::invalid(format!(
            "weight layer {layer} out of range (< {})",
            layers.len()
        ))
    })?;
    if target_drop == 0.0 {
        return Ok(Calibration {
            layer,
            sigma: 0.0,
            drop: 0.0,
            converged: true,
            evaluations: 0,
        });
    }
    let baseline = evaluate(model, dataset)?;
    let mut evaluations = 0;
    let mut drop_at = |sigma: f64| {
        evaluations += 1;
        weight_noise_drop(model, dataset, layer, sigma, seeds, baseline)
    };
    let w = model.stages()[stage].params.layers[l]
        .prunable()
        .expect("weight layer")
        .value
        .clone();
    let scale = (w.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / w.len() as f64).sqrt();

    let mut lo = (0.0, 0.0);
    let mut hi = (0.01 * scale.max(1e-6), 0.0);
    let mut found = None;
    for _ in 0..MAX_BRACKET_DOUBLINGS {
        hi.1 = drop_at(hi.0)?;
        if (hi.1 - target_drop).abs() <= tolerance {
            found = Some(hi);
            break;
        }
        if hi.1 > target_drop {
            break;
        }
        lo = hi;
        hi.0 *= 2.0;
    }
    let mut best = found.unwrap_or(if (lo.1 - target_drop).abs() < (hi.1 - target_drop).abs() {
        lo
    } else {
        hi
    });
    if found.is_none() && hi.1 > target_drop {
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo.0 + hi.0);
            let d = drop_at(mid)?;
            if (d - target_drop).abs() < (best.1 - target_drop).abs() {
                best = (mid, d);
            }
            if (d - target_drop).abs() <= tolerance {
                found = Some((mid, d));
                break;
            }
            if d > target_drop {
                hi = (mid, d);
            } else {
                lo = (mid, d);
            }
        }
    }
    let (sigma, drop) = found.unwrap_or(best);
    Ok(Calibration {
        layer,
        sigma,
        drop,
        converged: found.is_some(),
        evaluations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccumulationRow {
    /// Index into [`weight_layers`].
    pub layer: usize,
    pub sigma: f64,
    pub individual_drop: f64,
    /// Drop with this layer and every earlier listed layer perturbed.
    pub cumulative_drop: f64,
    /// Running sum of the individual drops.
    pub additive_prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accumulation {
    pub baseline_acc: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<AccumulationRow>,
}

impl Accumulation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record([
            "prefix_len",
            "layer",
            "sigma",
            "individual_drop",
            "cumulative_drop",
            "additive_prediction",
        ])
        .map_err(csv_err)?;
        for (i, r) in self.rows.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                r.layer.to_string(),
                r.sigma.to_string(),
                r.individual_drop.to_string(),
                r.cumulative_drop.to_string(),
                r.additive_prediction.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Perturbs the listed layers one at a time and then progressively
/// left to right, comparing the empirical cumulative drop with the sum of
/// individual drops. `layers` are `(index into weight_layers, σ_w)`.
pub fn error_accumulation(
    model: &Model,
    dataset: &Dataset,
    layers: &[(usize, f64)],
    seeds: &[u64],
) -> Result<Accumulation> {
    let baseline_acc = evaluate(model, dataset)?;
    let mut rows = Vec::with_capacity(layers.len());
    let mut additive = 0.0;
    for (j, &(layer, sigma)) in layers.iter().enumerate() {
        let individual_drop =
            baseline_acc - eval_with_weight_noise(model, dataset, &[(layer, sigma)], seeds)?.mean;
        let cumulative_drop = if j == 0 {
            individual_drop
        } else {
            baseline_acc - eval_with_weight_noise(model, dataset, &layers[..=j], seeds)?.mean
        };
        additive += individual_drop;
        rows.push(AccumulationRow {
            layer,
            sigma,
            individual_drop,
            cumulative_drop,
            additive_prediction: additive,
        });
    }
    Ok(Accumulation {
        baseline_acc,
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Supervised training with `𝒩(0, σ²)` after every neighbourhood.
pub fn train_noise_regularized_teacher(
    model: &mut Model,
    dataset: &Dataset,
    spec: NoiseRegSpec,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<TrainTrace> {
    if !spec.sigma.is_finite() {
        return Err(Error::invalid(format!(
            "noise sigma must be finite, got {}",
            spec.sigma
        )));
    }
    train_supervised(model, dataset, cfg, spec.sigma, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_oracle() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_sd(&[7.0]), (7.0, 0.0));
    }

    fn table(points: &[(f64, f64)]) -> SweepTable {
        let rows = points
            .iter()
            .map(|&(e, acc)| SweepRow {
                epsilon: e,
                affected: vec![0],
                accuracy: NoisyAccuracy::from_runs(&[0], vec![acc]),
                baseline_acc: 90.0,
            })
            .collect();
        SweepTable {
            baseline_acc: 90.0,
            rows,
            activation_std: vec![],
        }
    }

    #[test]
    fn threshold_is_last_point_of_the_flat_prefix() {
        let t = table(&[
            (0.5, 89.5),
            (0.0, 90.0),
            (0.1, 90.2),
            (1.0, 80.0),
            (2.0, 89.9),
        ]);
        assert_eq!(t.threshold(&[0]), Some(0.5));
        assert_eq!(t.threshold(&[1]), None);
        let t = table(&[(0.0, 85.0)]);
        assert_eq!(t.threshold(&[0]), None);
    }
}
