use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv_output_extent, Padding};

/// How the residual branch reaches the add at the end of a block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shortcut {
    Identity,
    /// 1×1 strided convolution.
    Projection {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    /// Strided subsampling with zero-padded extra channels (no weights).
    PadSubsample {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    Norm {
        channels: usize,
    },
    GlobalAvgPool,
    AddSkipBegin {
        shortcut: Shortcut,
    },
    AddSkipEnd,
    Flatten,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: Padding::Same,
        }
    }

    /// Trainable scalar count.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel * kernel,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            LayerSpec::Norm { channels } => 2 * channels,
            LayerSpec::AddSkipBegin {
                shortcut:
                    Shortcut::Projection {
                        in_channels,
                        out_channels,
                        ..
                    },
            } => in_channels * out_channels,
            _ => 0,
        }
    }

    /// Number of weights subject to magnitude pruning (kernels and dense
    /// matrices; biases and normalization affines are excluded).
    pub fn prunable_count(&self) -> usize {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => in_features * out_features,
            LayerSpec::Norm { .. } => 0,
            _ => self.param_count(),
        }
    }

    fn validate_dims(&self) -> Result<()> {
        let ok = match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => *in_channels > 0 && *out_channels > 0 && *kernel > 0 && *stride > 0,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => *in_features > 0 && *out_features > 0,
            LayerSpec::Norm { channels } => *channels > 0,
            LayerSpec::AddSkipBegin { shortcut } => match shortcut {
                Shortcut::Identity => true,
                Shortcut::Projection {
                    in_channels,
                    out_channels,
                    stride,
                }
                | Shortcut::PadSubsample {
                    in_channels,
                    out_channels,
                    stride,
                } => *in_channels > 0 && *out_channels > 0 && *stride > 0,
            },
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "non-positive dimension in {self:?}"
            )))
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate_dims()?;
        let mismatch = || Error::shape("layer", format!("{self:?} cannot take input {input:?}"));
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = *input else {
                    return Err(mismatch());
                };
                if c != *in_channels {
                    return Err(mismatch());
                }
                let (oh, _) = conv_output_extent(h, *kernel, *stride, *padding)?;
                let (ow, _) = conv_output_extent(w, *kernel, *stride, *padding)?;
                Ok(vec![*out_channels, oh, ow])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => match *input {
                [f] if f == *in_features => Ok(vec![*out_features]),
                _ => Err(mismatch()),
            },
            LayerSpec::Norm { channels } => match input.first() {
                Some(c) if c == channels && (input.len() == 1 || input.len() == 3) => {
                    Ok(input.to_vec())
                }
                _ => Err(mismatch()),
            },
            LayerSpec::Relu | LayerSpec::AddSkipBegin { .. } | LayerSpec::AddSkipEnd => {
                Ok(input.to_vec())
            }
            LayerSpec::GlobalAvgPool => match *input {
                [c, _, _] => Ok(vec![c]),
                _ => Err(mismatch()),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

impl Shortcut {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            Shortcut::Identity => Ok(input.to_vec()),
            Shortcut::Projection {
                in_channels,
                out_channels,
                stride,
            }
            | Shortcut::PadSubsample {
                in_channels,
                out_channels,
                stride,
            } => match *input {
                [c, h, w] if c == in_channels => {
                    Ok(vec![out_channels, h.div_ceil(stride), w.div_ceil(stride)])
                }
                _ => Err(Error::shape(
                    "shortcut",
                    format!("{self:?} cannot take input {input:?}"),
                )),
            },
        }
    }
}

/// Shape inference over a layer list, checking skip-marker nesting and that
/// each skip's shortcut output matches the main path at the add.
pub fn infer_shape(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>> {
    let mut shape = input.to_vec();
    let mut skips: Vec<Vec<usize>> = Vec::new();
    for layer in layers {
        match layer {
            LayerSpec::AddSkipBegin { shortcut } => {
                layer.validate_dims()?;
                skips.push(shortcut.output_shape(&shape)?);
            }
            LayerSpec::AddSkipEnd => {
                let s = skips.pop().ok_or_else(|| {
                    Error::invalid("add_skip_end without matching add_skip_begin")
                })?;
                if s != shape {
                    return Err(Error::shape(
                        "add_skip_end",
                        format!("shortcut {s:?} vs main path {shape:?}"),
                    ));
                }
            }
            _ => shape = layer.output_shape(&shape)?,
        }
    }
    if !skips.is_empty() {
        return Err(Error::invalid("unterminated add_skip_begin"));
    }
    Ok(shape)
}

/// One sub-network of the composition, delimited by two boundaries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighbourhoodSpec {
    pub index: usize,
    pub layers: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
}

impl NeighbourhoodSpec {
    pub fn new(index: usize, layers: Vec<LayerSpec>, input_shape: Vec<usize>) -> Result<Self> {
        let output_shape = infer_shape(&layers, &input_shape)?;
        Ok(NeighbourhoodSpec {
            index,
            layers,
            input_shape,
            output_shape,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let inferred = infer_shape(&self.layers, &self.input_shape)?;
        if inferred != self.output_shape {
            return Err(Error::shape(
                "neighbourhood",
                format!(
                    "neighbourhood {} declares output {:?}, layers produce {inferred:?}",
                    self.index, self.output_shape
                ),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn prunable_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::prunable_count).sum()
    }

    /// Output channels of every main-path conv except the last one.
    pub fn inner_widths(&self) -> Vec<usize> {
        let convs: Vec<usize> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .collect();
        convs[..convs.len().saturating_sub(1)].to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// Per-sample input shape `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub stem: Vec<LayerSpec>,
    pub neighbourhoods: Vec<NeighbourhoodSpec>,
    pub head: Vec<LayerSpec>,
    pub class_count: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::invalid("class_count must be positive"));
        }
        let mut shape = infer_shape(&self.stem, &self.input_shape)?;
        for (i, n) in self.neighbourhoods.iter().enumerate() {
            if n.index != i {
                return Err(Error::invalid(format!(
                    "neighbourhood at position {i} has index {}",
                    n.index
                )));
            }
            if n.input_shape != shape {
                return Err(Error::shape(
                    "network",
                    format!(
                        "neighbourhood {i} expects {:?}, previous stage produces {shape:?}",
                        n.input_shape
                    ),
                ));
            }
            n.validate()?;
            shape = n.output_shape.clone();
        }
        let out = infer_shape(&self.head, &shape)?;
        if out != [self.class_count] {
            return Err(Error::shape(
                "network",
                format!("head produces {out:?}, expected [{}]", self.class_count),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.neighbourhoods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbourhoods.is_empty()
    }

    /// Per-sample activation shape at boundary `i` (0 = stem output).
    pub fn boundary_shape(&self, i: usize) -> Vec<usize> {
        if i == 0 {
            self.neighbourhoods
                .first()
                .map(|n| n.input_shape.clone())
                .unwrap_or_else(|| {
                    infer_shape(&self.stem, &self.input_shape).expect("validated spec")
                })
        } else {
            self.neighbourhoods[i - 1].output_shape.clone()
        }
    }

    pub fn fixed_param_count(&self) -> usize {
        self.stem
            .iter()
            .chain(&self.head)
            .map(LayerSpec::param_count)
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.fixed_param_count()
            + self
                .neighbourhoods
                .iter()
                .map(NeighbourhoodSpec::param_count)
                .sum::<usize>()
    }

    /// Same network with neighbourhood `i` swapped for `replacement`.
    pub fn with_neighbourhood(
        &self,
        i: usize,
        replacement: NeighbourhoodSpec,
    ) -> Result<NetworkSpec> {
        let teacher = self
            .neighbourhoods
            .get(i)
            .ok_or_else(|| Error::invalid(format!("no neighbourhood {i}")))?;
        if teacher.input_shape != replacement.input_shape
            || teacher.output_shape != replacement.output_shape
        {
            return Err(Error::shape(
                "with_neighbourhood",
                format!(
                    "replacement maps {:?} -> {:?}, slot needs {:?} -> {:?}",
                    replacement.input_shape,
                    replacement.output_shape,
                    teacher.input_shape,
                    teacher.output_shape
                ),
            ));
        }
        let mut spec = self.clone();
        spec.neighbourhoods[i] = NeighbourhoodSpec {
            index: i,
            ..replacement
        };
        Ok(spec)
    }
}

/// Architecture presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// CIFAR ResNetV1-20: 3 stages × 3 two-conv blocks, parameter-free
    /// subsampling shortcuts at stage transitions.
    Resnet20Cifar,
    /// Desk-scale model: stem plus 3 two-conv blocks, one strided transition
    /// with a 1×1 projection shortcut.
    MiniResnet8,
}

impl Preset {
    pub fn default_widths(self) -> Vec<usize> {
        match self {
            Preset::Resnet20Cifar => vec![16, 32, 64],
            Preset::MiniResnet8 => vec![8, 16, 16],
        }
    }

    pub fn default_input(self) -> Vec<usize> {
        match self {
            Preset::Resnet20Cifar => vec![3, 32, 32],
            Preset::MiniResnet8 => vec![3, 12, 12],
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "resnet20-cifar" | "resnet20" => Ok(Preset::Resnet20Cifar),
            "mini-resnet8" => Ok(Preset::MiniResnet8),
            other => Err(Error::invalid(format!("unknown preset {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Resnet20Cifar => "resnet20-cifar",
            Preset::MiniResnet8 => "mini-resnet8",
        }
    }
}

/// Two-conv ResNetV1 unit: `relu(shortcut(x) + norm(conv(relu(norm(conv(x))))))`.
pub fn residual_block(
    in_ch: usize,
    inner: usize,
    out_ch: usize,
    stride: usize,
    shortcut: Shortcut,
) -> Vec<LayerSpec> {
    vec![
        LayerSpec::AddSkipBegin { shortcut },
        LayerSpec::conv(in_ch, inner, 3, stride),
        LayerSpec::Norm { channels: inner },
        LayerSpec::Relu,
        LayerSpec::conv(inner, out_ch, 3, 1),
        LayerSpec::Norm { channels: out_ch },
        LayerSpec::AddSkipEnd,
        LayerSpec::Relu,
    ]
}

/// Builds a preset with one neighbourhood per residual block.
///
/// `input_shape` defaults to the preset's; `widths` gives per-stage channels
/// (the stem uses the first).
pub fn build_resnet(
    preset: Preset,
    widths: &[usize],
    class_count: usize,
    input_shape: Option<Vec<usize>>,
) -> Result<NetworkSpec> {
    if class_count == 0 {
        return Err(Error::invalid("class_count must be positive"));
    }
    if widths.len() != 3 || widths.contains(&0) {
        return Err(Error::invalid(format!(
            "expected 3 positive stage widths, got {widths:?}"
        )));
    }
    let input_shape = input_shape.unwrap_or_else(|| preset.default_input());
    let in_ch = *input_shape
        .first()
        .ok_or_else(|| Error::invalid("empty input shape"))?;
    let stem = vec![
        LayerSpec::conv(in_ch, widths[0], 3, 1),
        LayerSpec::Norm {
            channels: widths[0],
        },
        LayerSpec::Relu,
    ];
    // (in, out, stride) per block
    let mut blocks: Vec<(usize, usize, usize)> = Vec::new();
    match preset {
        Preset::Resnet20Cifar => {
            let mut prev = widths[0];
            for (stage, &w) in widths.iter().enumerate() {
                for b in 0..3 {
                    let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                    blocks.push((prev, w, stride));
                    prev = w;
                }
            }
        }
        Preset::MiniResnet8 => {
            blocks.push((widths[0], widths[0], 1));
            blocks.push((widths[0], widths[1], 2));
            blocks.push((widths[1], widths[2], 1));
        }
    }
    let mut shape = infer_shape(&stem, &input_shape)?;
    let mut neighbourhoods = Vec::new();
    for (i, &(cin, cout, stride)) in blocks.iter().enumerate() {
        let shortcut = if cin == cout && stride == 1 {
            Shortcut::Identity
        } else {
            match preset {
                Preset::Resnet20Cifar => Shortcut::PadSubsample {
                    in_channels: cin,
                    out_channels: cout,
                    stride,
                },
                Preset::MiniResnet8 => Shortcut::Projection {
                    in_channels: cin,
                    out_channels: cout,
                    stride,
                },
            }
        };
        let n =
            NeighbourhoodSpec::new(i, residual_block(cin, cout, cout, stride, shortcut), shape)?;
        shape = n.output_shape.clone();
        neighbourhoods.push(n);
    }
    let last = shape[0];
    let head = vec![
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense {
            in_features: last,
            out_features: class_count,
        },
    ];
    let spec = NetworkSpec {
        name: preset.name().to_string(),
        input_shape,
        stem,
        neighbourhoods,
        head,
        class_count,
    };
    spec.validate()?;
    Ok(spec)
}

/// Uniform width-multiplier variant of a preset (boundaries change too, so
/// it can only be trained end to end).
pub fn build_width_scaled(
    preset: Preset,
    widths: &[usize],
    multiplier: f64,
    class_count: usize,
    input_shape: Option<Vec<usize>>,
) -> Result<NetworkSpec> {
    let scaled: Vec<usize> = widths.iter().map(|&w| scale_width(w, multiplier)).collect();
    let mut spec = build_resnet(preset, &scaled, class_count, input_shape)?;
    spec.name = format!("{}-width{multiplier}", preset.name());
    Ok(spec)
}

/// `max(1, round_half_up(k · base))`.
pub fn scale_width(base: usize, k: f64) -> usize {
    ((k * base as f64 + 0.5).floor() as usize).max(1)
}

/// A student variant of one teacher neighbourhood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub neighbourhood_index: usize,
    pub multiplier: f64,
    pub target_sparsity: f64,
    pub inner_widths: Vec<usize>,
    pub spec: NeighbourhoodSpec,
}

impl CandidateSpec {
    /// Trainable parameters left after pruning `⌊s·n⌋` of each prunable layer.
    pub fn param_count(&self) -> usize {
        self.spec
            .layers
            .iter()
            .map(|l| l.param_count() - pruned_count(l.prunable_count(), self.target_sparsity))
            .sum()
    }

    pub fn is_structural_copy(&self, teacher: &NeighbourhoodSpec) -> bool {
        self.spec.layers == teacher.layers
    }
}

/// `⌊s · n⌋`.
pub fn pruned_count(n: usize, sparsity: f64) -> usize {
    (sparsity * n as f64).floor() as usize
}

/// Scales every main-path conv but the last by `k`, leaving the boundary
/// shapes and the shortcut untouched.
pub fn make_candidate(teacher: &NeighbourhoodSpec, k: f64, s: f64) -> Result<CandidateSpec> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::invalid(format!(
            "multiplier k must be in (0, 1], got {k}"
        )));
    }
    if !(0.0..1.0).contains(&s) {
        return Err(Error::invalid(format!(
            "sparsity must be in [0, 1), got {s}"
        )));
    }
    let conv_total = teacher
        .layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv { .. }))
        .count();
    let mut seen = 0;
    let mut current: Option<usize> = None;
    let mut layers = Vec::with_capacity(teacher.layers.len());
    for layer in &teacher.layers {
        let new = match *layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                seen += 1;
                let in_channels = current.unwrap_or(in_channels);
                let out = if seen < conv_total {
                    scale_width(out_channels, k)
                } else {
                    out_channels
                };
                current = Some(out);
                LayerSpec::Conv {
                    in_channels,
                    out_channels: out,
                    kernel,
                    stride,
                    padding,
                }
            }
            LayerSpec::Norm { channels } => LayerSpec::Norm {
                channels: current.unwrap_or(channels),
            },
            ref other => other.clone(),
        };
        layers.push(new);
    }
    let spec = NeighbourhoodSpec::new(teacher.index, layers, teacher.input_shape.clone())?;
    if spec.output_shape != teacher.output_shape {
        return Err(Error::shape(
            "make_candidate",
            format!(
                "candidate output {:?} != teacher {:?}",
                spec.output_shape, teacher.output_shape
            ),
        ));
    }
    Ok(CandidateSpec {
        neighbourhood_index: teacher.index,
        multiplier: k,
        target_sparsity: s,
        inner_widths: spec.inner_widths(),
        spec,
    })
}

/// `∏ᵢ |𝒞ᵢ|`, saturating at `u128::MAX`.
pub fn count_search_space(candidate_set_sizes: &[usize]) -> u128 {
    candidate_set_sizes
        .iter()
        .fold(1u128, |acc, &n| acc.saturating_mul(n as u128))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini() -> NetworkSpec {
        build_resnet(Preset::MiniResnet8, &[8, 16, 16], 10, None).unwrap()
    }

    #[test]
    fn resnet20_has_nine_neighbourhoods() {
        let spec = build_resnet(Preset::Resnet20Cifar, &[16, 32, 64], 10, None).unwrap();
        assert_eq!(spec.len(), 9);
        assert_eq!(spec.boundary_shape(9), vec![64, 8, 8]);
    }

    #[test]
    fn mini_has_three_neighbourhoods() {
        let spec = mini();
        assert_eq!(spec.len(), 3);
        assert_eq!(spec.boundary_shape(0), vec![8, 12, 12]);
        assert_eq!(spec.boundary_shape(2), vec![16, 6, 6]);
    }

    #[test]
    fn zero_classes_rejected() {
        assert!(build_resnet(Preset::MiniResnet8, &[8, 16, 16], 0, None).is_err());
    }

    #[test]
    fn dense_param_count() {
        let d = LayerSpec::Dense {
            in_features: 7,
            out_features: 3,
        };
        assert_eq!(d.param_count(), 7 * 3 + 3);
    }

    #[test]
    fn candidate_width_rounding() {
        let spec = build_resnet(Preset::Resnet20Cifar, &[16, 32, 64], 10, None).unwrap();
        let c = make_candidate(&spec.neighbourhoods[0], 0.75, 0.0).unwrap();
        assert_eq!(c.inner_widths, vec![12]);
        let m = mini();
        let c = make_candidate(&m.neighbourhoods[0], 0.1, 0.0).unwrap();
        assert_eq!(c.inner_widths, vec![1]);
        assert_eq!(scale_width(5, 0.5), 3);
    }

    #[test]
    fn unit_candidate_is_teacher_architecture() {
        let m = mini();
        for n in &m.neighbourhoods {
            let c = make_candidate(n, 1.0, 0.0).unwrap();
            assert!(c.is_structural_copy(n));
            assert_eq!(c.param_count(), n.param_count());
        }
    }

    #[test]
    fn candidate_keeps_boundaries() {
        let m = mini();
        for n in &m.neighbourhoods {
            for k in [0.1, 0.3, 0.5, 0.9] {
                let c = make_candidate(n, k, 0.0).unwrap();
                assert_eq!(c.spec.input_shape, n.input_shape);
                assert_eq!(c.spec.output_shape, n.output_shape);
                m.with_neighbourhood(n.index, c.spec)
                    .unwrap()
                    .validate()
                    .unwrap();
            }
        }
    }

    #[test]
    fn candidate_rejects_bad_multiplier() {
        let m = mini();
        assert!(make_candidate(&m.neighbourhoods[0], 0.0, 0.0).is_err());
        assert!(make_candidate(&m.neighbourhoods[0], 1.2, 0.0).is_err());
        assert!(make_candidate(&m.neighbourhoods[0], 1.0, 1.0).is_err());
    }

    #[test]
    fn search_space_product() {
        assert_eq!(count_search_space(&[10; 9]), 1_000_000_000);
        assert_eq!(count_search_space(&[1, 1, 1]), 1);
        assert_eq!(count_search_space(&[3, 3, 3]), 27);
    }

    #[test]
    fn skip_nesting_checked() {
        let bad = vec![LayerSpec::AddSkipEnd];
        assert!(infer_shape(&bad, &[4, 4, 4]).is_err());
        let open = vec![LayerSpec::AddSkipBegin {
            shortcut: Shortcut::Identity,
        }];
        assert!(infer_shape(&open, &[4, 4, 4]).is_err());
        let mismatched = vec![
            LayerSpec::AddSkipBegin {
                shortcut: Shortcut::Identity,
            },
            LayerSpec::conv(4, 5, 3, 1),
            LayerSpec::AddSkipEnd,
        ];
        assert!(infer_shape(&mismatched, &[4, 4, 4]).is_err());
    }

    #[test]
    fn declared_shape_mismatch_detected() {
        let mut spec = mini();
        spec.neighbourhoods[1].output_shape = vec![16, 12, 12];
        assert!(spec.validate().is_err());
    }
}
