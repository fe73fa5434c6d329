//! Forward and hand-written backward passes over a layer list.

use super::params::{LayerParams, SeqParams};
use super::spec::{LayerSpec, Shortcut};
use crate::error::{Error, Result};
use crate::tensor::{
    channel_norm, channel_norm_backward, conv2d, conv2d_backward, dense, dense_backward,
    global_avg_pool, global_avg_pool_backward, pad_subsample, pad_subsample_backward, relu,
    relu_backward, NormCache, NormMode, Padding, RunningStats, Scalar, Tensor,
};

/// What one layer saved for its backward pass.
#[derive(Clone, Debug)]
pub enum LayerTape<T = f32> {
    None,
    Input(Tensor<T>),
    Shape(Vec<usize>),
    Norm(NormCache<T>),
}

/// Saved activations of one recorded forward pass over a layer list.
#[derive(Clone, Debug, Default)]
pub struct Tape<T = f32> {
    pub entries: Vec<LayerTape<T>>,
}

impl<T: Scalar> Tape<T> {
    /// Input that layer `i` saw, if it saved one (conv, dense, relu, projection).
    pub fn layer_input(&self, i: usize) -> Option<&Tensor<T>> {
        match self.entries.get(i) {
            Some(LayerTape::Input(x)) => Some(x),
            _ => None,
        }
    }
}

/// Gradient of one layer's trainable tensors, `parameters()` order.
pub type LayerGrads<T> = Vec<Tensor<T>>;

fn with_batch(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

fn param_missing(i: usize, spec: &LayerSpec) -> Error {
    Error::shape(
        "forward",
        format!("layer {i} ({spec:?}) has mismatched parameters"),
    )
}

/// Runs `layers` on a batch. With `record`, returns the tape needed by
/// [`backward`]; normalization layers in [`NormMode::Train`] keep their batch
/// statistics in the tape for [`apply_running_stats`].
pub fn forward<T: Scalar>(
    layers: &[LayerSpec],
    params: &SeqParams<T>,
    input: &Tensor<T>,
    mode: NormMode,
    record: bool,
) -> Result<(Tensor<T>, Option<Tape<T>>)> {
    if params.layers.len() != layers.len() {
        return Err(Error::shape(
            "forward",
            format!(
                "{} layers, {} parameter slots",
                layers.len(),
                params.layers.len()
            ),
        ));
    }
    let mut x = input.clone();
    let mut skips: Vec<Tensor<T>> = Vec::new();
    let mut tape = Vec::with_capacity(if record { layers.len() } else { 0 });
    for (i, (spec, p)) in layers.iter().zip(&params.layers).enumerate() {
        let (y, entry) = match (spec, p) {
            (
                LayerSpec::Conv {
                    stride, padding, ..
                },
                LayerParams::Conv { weight },
            ) => {
                let y = conv2d(&x, &weight.value, *stride, *padding)?;
                (y, LayerTape::Input(x))
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense { weight, bias }) => {
                let y = dense(&x, &weight.value, &bias.value)?;
                (y, LayerTape::Input(x))
            }
            (LayerSpec::Relu, _) => {
                let y = relu(&x);
                (y, LayerTape::Input(x))
            }
            (
                LayerSpec::Norm { .. },
                LayerParams::Norm {
                    gamma,
                    beta,
                    running,
                },
            ) => {
                let (y, cache) =
                    channel_norm(&x, &gamma.value, &beta.value, mode, running.as_ref())?;
                (y, LayerTape::Norm(cache))
            }
            (LayerSpec::GlobalAvgPool, _) => {
                let y = global_avg_pool(&x)?;
                (y, LayerTape::Shape(x.shape().to_vec()))
            }
            (LayerSpec::Flatten, _) => {
                let shape = x.shape().to_vec();
                let rows = shape[0];
                let cols = x.row_len();
                (x.reshape(&[rows, cols])?, LayerTape::Shape(shape))
            }
            (LayerSpec::AddSkipBegin { shortcut }, _) => match (shortcut, p) {
                (Shortcut::Identity, _) => {
                    skips.push(x.clone());
                    (x, LayerTape::None)
                }
                (
                    Shortcut::PadSubsample {
                        out_channels,
                        stride,
                        ..
                    },
                    _,
                ) => {
                    skips.push(pad_subsample(&x, *out_channels, *stride)?);
                    let shape = x.shape().to_vec();
                    (x, LayerTape::Shape(shape))
                }
                (Shortcut::Projection { stride, .. }, LayerParams::Conv { weight }) => {
                    skips.push(conv2d(&x, &weight.value, *stride, Padding::Valid)?);
                    let saved = x.clone();
                    (x, LayerTape::Input(saved))
                }
                _ => return Err(param_missing(i, spec)),
            },
            (LayerSpec::AddSkipEnd, _) => {
                let s = skips
                    .pop()
                    .ok_or_else(|| Error::invalid("add_skip_end without open skip"))?;
                (x.add(&s)?, LayerTape::None)
            }
            _ => return Err(param_missing(i, spec)),
        };
        if record {
            tape.push(entry);
        }
        x = y;
    }
    Ok((x, record.then_some(Tape { entries: tape })))
}

/// Eval-mode forward without a tape.
pub fn forward_eval<T: Scalar>(
    layers: &[LayerSpec],
    params: &SeqParams<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(forward(layers, params, input, NormMode::Eval, false)?.0)
}

/// Backpropagates `grad_out` through a recorded forward pass. Returns the
/// input gradient and, when `param_grads` is set, per-layer parameter
/// gradients aligned with `layers`.
/// Input gradient and, when requested, per-layer parameter gradients.
pub type Backward<T> = (Tensor<T>, Option<ParamGrads<T>>);

pub type ParamGrads<T> = Vec<LayerGrads<T>>;

pub fn backward<T: Scalar>(
    layers: &[LayerSpec],
    params: &SeqParams<T>,
    tape: &Tape<T>,
    grad_out: &Tensor<T>,
    param_grads: bool,
) -> Result<Backward<T>> {
    if tape.entries.len() != layers.len() {
        return Err(Error::invalid("tape does not belong to this layer list"));
    }
    let mut g = grad_out.clone();
    let mut skip_grads: Vec<Tensor<T>> = Vec::new();
    let mut grads: Vec<LayerGrads<T>> =
        vec![Vec::new(); if param_grads { layers.len() } else { 0 }];
    for i in (0..layers.len()).rev() {
        let (spec, p, entry) = (&layers[i], &params.layers[i], &tape.entries[i]);
        match (spec, p, entry) {
            (
                LayerSpec::Conv {
                    stride, padding, ..
                },
                LayerParams::Conv { weight },
                LayerTape::Input(x),
            ) => {
                let (gx, gw) = conv2d_backward(x, &weight.value, *stride, *padding, &g)?;
                if param_grads {
                    grads[i] = vec![gw];
                }
                g = gx;
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense { weight, .. }, LayerTape::Input(x)) => {
                let (gx, gw, gb) = dense_backward(x, &weight.value, &g)?;
                if param_grads {
                    grads[i] = vec![gw, gb];
                }
                g = gx;
            }
            (LayerSpec::Relu, _, LayerTape::Input(x)) => {
                g = relu_backward(x, &g)?;
            }
            (LayerSpec::Norm { .. }, LayerParams::Norm { gamma, .. }, LayerTape::Norm(cache)) => {
                let (gx, gg, gb) = channel_norm_backward(cache, &gamma.value, &g)?;
                if param_grads {
                    grads[i] = vec![gg, gb];
                }
                g = gx;
            }
            (LayerSpec::GlobalAvgPool, _, LayerTape::Shape(shape)) => {
                g = global_avg_pool_backward(shape, &g)?;
            }
            (LayerSpec::Flatten, _, LayerTape::Shape(shape)) => {
                g = g.reshape(shape)?;
            }
            (LayerSpec::AddSkipEnd, _, _) => {
                skip_grads.push(g.clone());
            }
            (LayerSpec::AddSkipBegin { shortcut }, _, _) => {
                let gs = skip_grads
                    .pop()
                    .ok_or_else(|| Error::invalid("unbalanced skip markers in backward"))?;
                let through = match (shortcut, p, entry) {
                    (Shortcut::Identity, _, _) => gs,
                    (Shortcut::PadSubsample { stride, .. }, _, LayerTape::Shape(shape)) => {
                        pad_subsample_backward(shape, *stride, &gs)?
                    }
                    (
                        Shortcut::Projection { stride, .. },
                        LayerParams::Conv { weight },
                        LayerTape::Input(x),
                    ) => {
                        let (gx, gw) =
                            conv2d_backward(x, &weight.value, *stride, Padding::Valid, &gs)?;
                        if param_grads {
                            grads[i] = vec![gw];
                        }
                        gx
                    }
                    _ => return Err(param_missing(i, spec)),
                };
                g.add_assign(&through)?;
            }
            _ => return Err(param_missing(i, spec)),
        }
    }
    Ok((g, param_grads.then_some(grads)))
}

/// Adds per-layer gradients into the parameters' accumulators.
pub fn accumulate_grads<T: Scalar>(params: &mut SeqParams<T>, grads: &[LayerGrads<T>]) {
    for (p, g) in params.layers.iter_mut().zip(grads) {
        for (param, grad) in p.parameters_mut().into_iter().zip(g) {
            param.accumulate(grad);
        }
    }
}

/// EMA update of running statistics from a train-mode tape.
pub fn apply_running_stats<T: Scalar>(params: &mut SeqParams<T>, tape: &Tape<T>) {
    for (p, entry) in params.layers.iter_mut().zip(&tape.entries) {
        if let (LayerParams::Norm { running, .. }, LayerTape::Norm(cache)) = (p, entry) {
            if let (Some(m), Some(v)) = (&cache.batch_mean, &cache.batch_var) {
                RunningStats::update(running, m, v);
            }
        }
    }
}

/// Batch-prefixed shape helper used by callers that build inputs.
pub fn batched_shape(batch: usize, per_sample: &[usize]) -> Vec<usize> {
    with_batch(batch, per_sample)
}
