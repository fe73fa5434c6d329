use super::exec::{self, accumulate_grads, apply_running_stats, LayerGrads, Tape};
use super::params::{init_network_params, NetworkParams, SeqParams};
use super::spec::{LayerSpec, NeighbourhoodSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, Rng};
use crate::tensor::{argmax_rows, NormMode, Scalar, Tensor};

/// One link of the composition: stem, a neighbourhood, or the head.
#[derive(Clone, Copy, Debug)]
pub struct Stage<'a, T = f32> {
    pub layers: &'a [LayerSpec],
    pub params: &'a SeqParams<T>,
    /// Neighbourhood index whose output this stage produces.
    pub neighbourhood: Option<usize>,
}

/// `𝒩(0, std²)` added to the outputs of the listed neighbourhoods, freshly
/// drawn on every forward pass.
#[derive(Debug)]
pub struct ActivationNoise<'r> {
    pub std: f64,
    pub affected: Vec<usize>,
    pub rng: &'r mut Rng,
}

impl ActivationNoise<'_> {
    fn apply<T: Scalar>(&mut self, neighbourhood: usize, x: &mut Tensor<T>) {
        if self.std == 0.0 || !self.affected.contains(&neighbourhood) {
            return;
        }
        let noise: Tensor<T> = gaussian_sample(self.rng, x.shape(), 0.0, self.std);
        x.add_assign(&noise)
            .expect("noise has the activation's shape");
    }
}

pub fn forward_stages<T: Scalar>(
    stages: &[Stage<'_, T>],
    input: &Tensor<T>,
    mut noise: Option<&mut ActivationNoise<'_>>,
) -> Result<Tensor<T>> {
    let mut x = input.clone();
    for s in stages {
        x = exec::forward_eval(s.layers, s.params, &x)?;
        if let (Some(i), Some(n)) = (s.neighbourhood, noise.as_deref_mut()) {
            n.apply(i, &mut x);
        }
    }
    Ok(x)
}

/// Recorded forward over stages; one tape per stage.
pub fn forward_stages_recorded<T: Scalar>(
    stages: &[Stage<'_, T>],
    input: &Tensor<T>,
    mode: NormMode,
    mut noise: Option<&mut ActivationNoise<'_>>,
) -> Result<(Tensor<T>, Vec<Tape<T>>)> {
    let mut x = input.clone();
    let mut tapes = Vec::with_capacity(stages.len());
    for s in stages {
        let (y, tape) = exec::forward(s.layers, s.params, &x, mode, true)?;
        x = y;
        tapes.push(tape.expect("recorded"));
        if let (Some(i), Some(n)) = (s.neighbourhood, noise.as_deref_mut()) {
            n.apply(i, &mut x);
        }
    }
    Ok((x, tapes))
}

/// Input gradient and per-stage parameter gradients.
pub type StageBackward<T> = (Tensor<T>, Vec<Option<exec::ParamGrads<T>>>);

/// Stage-wise backward. `want` selects which stages report parameter
/// gradients; the input gradient is always returned.
pub fn backward_stages<T: Scalar>(
    stages: &[Stage<'_, T>],
    tapes: &[Tape<T>],
    grad_out: &Tensor<T>,
    want: &[bool],
) -> Result<StageBackward<T>> {
    let mut g = grad_out.clone();
    let mut grads = vec![None; stages.len()];
    for i in (0..stages.len()).rev() {
        let (gx, pg) = exec::backward(stages[i].layers, stages[i].params, &tapes[i], &g, want[i])?;
        grads[i] = pg;
        g = gx;
    }
    Ok((g, grads))
}

/// A network description with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
}

/// Tapes of a recorded full-network pass.
#[derive(Clone, Debug)]
pub struct NetTape {
    tapes: Vec<Tape>,
}

/// Parameter gradients of every stage (stem, neighbourhoods, head).
pub type NetGrads = Vec<Vec<LayerGrads<f32>>>;

impl Model {
    pub fn new(spec: NetworkSpec, params: NetworkParams) -> Result<Self> {
        spec.validate()?;
        params.check_against(&spec)?;
        Ok(Model { spec, params })
    }

    pub fn init(spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        let params = init_network_params(&spec, rng);
        Model::new(spec, params)
    }

    pub fn len(&self) -> usize {
        self.spec.neighbourhoods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.neighbourhoods.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn stages(&self) -> Vec<Stage<'_>> {
        let mut v = Vec::with_capacity(self.len() + 2);
        v.push(Stage {
            layers: &self.spec.stem,
            params: &self.params.stem,
            neighbourhood: None,
        });
        for (n, p) in self
            .spec
            .neighbourhoods
            .iter()
            .zip(&self.params.neighbourhoods)
        {
            v.push(Stage {
                layers: &n.layers,
                params: p,
                neighbourhood: Some(n.index),
            });
        }
        v.push(Stage {
            layers: &self.spec.head,
            params: &self.params.head,
            neighbourhood: None,
        });
        v
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != self.spec.input_shape.len() + 1
            || x.shape()[1..] != self.spec.input_shape[..]
        {
            return Err(Error::shape(
                "forward",
                format!(
                    "input {:?}, network takes [N, {:?}]",
                    x.shape(),
                    self.spec.input_shape
                ),
            ));
        }
        Ok(())
    }

    /// Eval-mode logits `[N, class_count]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        forward_stages(&self.stages(), x, None)
    }

    pub fn forward_noisy(&self, x: &Tensor, noise: &mut ActivationNoise<'_>) -> Result<Tensor> {
        self.check_input(x)?;
        forward_stages(&self.stages(), x, Some(noise))
    }

    /// Activation at boundary `i`: the stem output for `i = 0`, otherwise the
    /// output of neighbourhood `i - 1`.
    pub fn forward_prefix(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        if i > self.len() {
            return Err(Error::invalid(format!(
                "boundary {i} beyond {} neighbourhoods",
                self.len()
            )));
        }
        self.check_input(x)?;
        forward_stages(&self.stages()[..=i], x, None)
    }

    /// Runs neighbourhoods `i..` and the head on a boundary-`i` activation.
    pub fn forward_from(&self, i: usize, a: &Tensor) -> Result<Tensor> {
        if i > self.len() {
            return Err(Error::invalid(format!(
                "boundary {i} beyond {} neighbourhoods",
                self.len()
            )));
        }
        forward_stages(&self.stages()[i + 1..], a, None)
    }

    /// Eval-mode output of teacher neighbourhood `i` alone.
    pub fn forward_neighbourhood(&self, i: usize, a: &Tensor) -> Result<Tensor> {
        let n = self
            .spec
            .neighbourhoods
            .get(i)
            .ok_or_else(|| Error::invalid(format!("no neighbourhood {i}")))?;
        exec::forward_eval(&n.layers, &self.params.neighbourhoods[i], a)
    }

    /// Logits of the partial model with neighbourhood `i` replaced.
    pub fn forward_with_replacement(
        &self,
        i: usize,
        candidate: &NeighbourhoodSpec,
        candidate_params: &SeqParams,
        x: &Tensor,
    ) -> Result<Tensor> {
        let teacher = self
            .spec
            .neighbourhoods
            .get(i)
            .ok_or_else(|| Error::invalid(format!("no neighbourhood {i}")))?;
        if teacher.input_shape != candidate.input_shape
            || teacher.output_shape != candidate.output_shape
        {
            return Err(Error::shape(
                "forward_with_replacement",
                format!("candidate does not fit slot {i}"),
            ));
        }
        candidate_params.check_against(&candidate.layers)?;
        self.check_input(x)?;
        let mut stages = self.stages();
        stages[i + 1] = Stage {
            layers: &candidate.layers,
            params: candidate_params,
            neighbourhood: Some(i),
        };
        forward_stages(&stages, x, None)
    }

    /// Copy of this model with neighbourhood `i` replaced.
    pub fn with_replacement(
        &self,
        i: usize,
        candidate: &NeighbourhoodSpec,
        params: SeqParams,
    ) -> Result<Model> {
        let spec = self.spec.with_neighbourhood(i, candidate.clone())?;
        let mut p = self.params.clone();
        p.neighbourhoods[i] = params;
        Model::new(spec, p)
    }

    pub fn forward_train(
        &self,
        x: &Tensor,
        mode: NormMode,
        noise: Option<&mut ActivationNoise<'_>>,
    ) -> Result<(Tensor, NetTape)> {
        self.check_input(x)?;
        let (y, tapes) = forward_stages_recorded(&self.stages(), x, mode, noise)?;
        Ok((y, NetTape { tapes }))
    }

    pub fn backward(&self, tape: &NetTape, grad_logits: &Tensor) -> Result<NetGrads> {
        let stages = self.stages();
        let want = vec![true; stages.len()];
        let (_, grads) = backward_stages(&stages, &tape.tapes, grad_logits, &want)?;
        Ok(grads.into_iter().map(|g| g.unwrap_or_default()).collect())
    }

    /// Accumulates gradients and, for train-mode tapes, updates running stats.
    pub fn apply(&mut self, grads: &NetGrads, tape: &NetTape) {
        for ((params, g), t) in self.params.parts_mut().zip(grads).zip(&tape.tapes) {
            accumulate_grads(params, g);
            apply_running_stats(params, t);
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(x)?))
    }
}

/// Percentage of rows whose argmax equals the label.
pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    let pred = argmax_rows(logits);
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * correct as f64 / labels.len().max(1) as f64
}
