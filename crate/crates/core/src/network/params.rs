use super::spec::{LayerSpec, NetworkSpec, Shortcut};
use crate::error::{Error, Result};
use crate::rng::{uniform_sample, Rng};
use crate::tensor::{Parameter, RunningStats, Scalar, Tensor};

/// Weights of one layer; the variant follows the layer kind. A projection
/// shortcut stores its 1×1 kernel as `Conv`.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<T = f32> {
    None,
    Conv {
        weight: Parameter<T>,
    },
    Dense {
        weight: Parameter<T>,
        bias: Parameter<T>,
    },
    Norm {
        gamma: Parameter<T>,
        beta: Parameter<T>,
        running: Option<RunningStats<T>>,
    },
}

impl<T: Scalar> LayerParams<T> {
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv { weight } => vec![weight],
            LayerParams::Dense { weight, bias } => vec![weight, bias],
            LayerParams::Norm { gamma, beta, .. } => vec![gamma, beta],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv { weight } => vec![weight],
            LayerParams::Dense { weight, bias } => vec![weight, bias],
            LayerParams::Norm { gamma, beta, .. } => vec![gamma, beta],
        }
    }

    /// The tensor magnitude pruning acts on, if any.
    pub fn prunable(&self) -> Option<&Parameter<T>> {
        match self {
            LayerParams::Conv { weight } | LayerParams::Dense { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn prunable_mut(&mut self) -> Option<&mut Parameter<T>> {
        match self {
            LayerParams::Conv { weight } | LayerParams::Dense { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        match self {
            LayerParams::None => LayerParams::None,
            LayerParams::Conv { weight } => LayerParams::Conv {
                weight: weight.cast(),
            },
            LayerParams::Dense { weight, bias } => LayerParams::Dense {
                weight: weight.cast(),
                bias: bias.cast(),
            },
            LayerParams::Norm {
                gamma,
                beta,
                running,
            } => LayerParams::Norm {
                gamma: gamma.cast(),
                beta: beta.cast(),
                running: running.as_ref().map(RunningStats::cast),
            },
        }
    }
}

/// Parameters for a layer list, index-aligned with it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeqParams<T = f32> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> SeqParams<T> {
    pub fn parameters(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.layers.iter().flat_map(|l| l.parameters())
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut())
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().for_each(Parameter::zero_grad);
    }

    pub fn cast<U: Scalar>(&self) -> SeqParams<U> {
        SeqParams {
            layers: self.layers.iter().map(LayerParams::cast).collect(),
        }
    }

    /// Clears gradients and momentum so a copy starts training fresh.
    pub fn reset_optimizer_state(&mut self) {
        for p in self.parameters_mut() {
            p.grad.fill(T::zero());
            p.momentum_buffer.fill(T::zero());
        }
    }

    /// Checks the variant and tensor shapes of every entry against `layers`.
    pub fn check_against(&self, layers: &[LayerSpec]) -> Result<()> {
        if self.layers.len() != layers.len() {
            return Err(Error::shape(
                "params",
                format!(
                    "{} parameter slots for {} layers",
                    self.layers.len(),
                    layers.len()
                ),
            ));
        }
        for (i, (spec, p)) in layers.iter().zip(&self.layers).enumerate() {
            let expected = expected_shapes(spec);
            let actual: Vec<Vec<usize>> = p
                .parameters()
                .iter()
                .map(|q| q.value.shape().to_vec())
                .collect();
            if expected != actual {
                return Err(Error::shape(
                    "params",
                    format!("layer {i} ({spec:?}) expects {expected:?}, has {actual:?}"),
                ));
            }
        }
        Ok(())
    }
}

/// Shapes of the trainable tensors of a layer, in `parameters()` order.
pub fn expected_shapes(spec: &LayerSpec) -> Vec<Vec<usize>> {
    match *spec {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
            ..
        } => vec![vec![out_channels, in_channels, kernel, kernel]],
        LayerSpec::Dense {
            in_features,
            out_features,
        } => vec![vec![in_features, out_features], vec![out_features]],
        LayerSpec::Norm { channels } => vec![vec![channels], vec![channels]],
        LayerSpec::AddSkipBegin {
            shortcut:
                Shortcut::Projection {
                    in_channels,
                    out_channels,
                    ..
                },
        } => vec![vec![out_channels, in_channels, 1, 1]],
        _ => vec![],
    }
}

/// Fan-in scaled uniform initialization: kernels `U(±√(6/fan_in))`, dense
/// weights `U(±1/√fan_in)`, zero biases, unit/zero normalization affines and
/// no running statistics.
pub fn init_params(layers: &[LayerSpec], rng: &mut Rng) -> SeqParams {
    let mut out = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let mut r = rng.split("layer", i as u64);
        let p = match *layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                let b = (6.0 / fan_in as f64).sqrt();
                LayerParams::Conv {
                    weight: Parameter::new(uniform_sample(
                        &mut r,
                        &[out_channels, in_channels, kernel, kernel],
                        -b,
                        b,
                    )),
                }
            }
            LayerSpec::AddSkipBegin {
                shortcut:
                    Shortcut::Projection {
                        in_channels,
                        out_channels,
                        ..
                    },
            } => {
                let b = (6.0 / in_channels as f64).sqrt();
                LayerParams::Conv {
                    weight: Parameter::new(uniform_sample(
                        &mut r,
                        &[out_channels, in_channels, 1, 1],
                        -b,
                        b,
                    )),
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let b = 1.0 / (in_features as f64).sqrt();
                LayerParams::Dense {
                    weight: Parameter::new(uniform_sample(
                        &mut r,
                        &[in_features, out_features],
                        -b,
                        b,
                    )),
                    bias: Parameter::new(Tensor::zeros(&[out_features])),
                }
            }
            LayerSpec::Norm { channels } => LayerParams::Norm {
                gamma: Parameter::new(Tensor::full(&[channels], 1.0)),
                beta: Parameter::new(Tensor::zeros(&[channels])),
                running: None,
            },
            _ => LayerParams::None,
        };
        out.push(p);
    }
    SeqParams { layers: out }
}

/// Parameters for the whole composition.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T = f32> {
    pub stem: SeqParams<T>,
    pub neighbourhoods: Vec<SeqParams<T>>,
    pub head: SeqParams<T>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn parts_mut(&mut self) -> impl Iterator<Item = &mut SeqParams<T>> {
        std::iter::once(&mut self.stem)
            .chain(self.neighbourhoods.iter_mut())
            .chain(std::iter::once(&mut self.head))
    }

    pub fn parts(&self) -> impl Iterator<Item = &SeqParams<T>> {
        std::iter::once(&self.stem)
            .chain(self.neighbourhoods.iter())
            .chain(std::iter::once(&self.head))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.parts_mut().flat_map(|p| p.parameters_mut())
    }

    pub fn zero_grad(&mut self) {
        self.parts_mut().for_each(SeqParams::zero_grad);
    }

    pub fn reset_optimizer_state(&mut self) {
        self.parts_mut().for_each(SeqParams::reset_optimizer_state);
    }

    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        if self.neighbourhoods.len() != spec.neighbourhoods.len() {
            return Err(Error::shape(
                "params",
                format!(
                    "{} neighbourhood parameter sets for {} neighbourhoods",
                    self.neighbourhoods.len(),
                    spec.neighbourhoods.len()
                ),
            ));
        }
        self.stem.check_against(&spec.stem)?;
        for (p, n) in self.neighbourhoods.iter().zip(&spec.neighbourhoods) {
            p.check_against(&n.layers)?;
        }
        self.head.check_against(&spec.head)
    }
}

pub fn init_network_params(spec: &NetworkSpec, rng: &mut Rng) -> NetworkParams {
    NetworkParams {
        stem: init_params(&spec.stem, &mut rng.split("stem", 0)),
        neighbourhoods: spec
            .neighbourhoods
            .iter()
            .map(|n| init_params(&n.layers, &mut rng.split("neighbourhood", n.index as u64)))
            .collect(),
        head: init_params(&spec.head, &mut rng.split("head", 0)),
    }
}
