//! `NDCK` checkpoint files.
//!
//! Layout: magic `NDCK` | version u32 LE | header length u32 LE | JSON
//! header (network spec + tensor manifest) | f32 LE blobs in manifest order.
//! Offsets in the manifest are byte offsets from the start of the blob area.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::params::{expected_shapes, LayerParams, NetworkParams, SeqParams};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, RunningStats, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    network: NetworkSpec,
    tensors: Vec<ManifestEntry>,
}

const PARAM_NAMES: [&str; 2] = ["weight", "bias"];
const NORM_NAMES: [&str; 2] = ["gamma", "beta"];

fn part_names(spec: &NetworkSpec) -> Vec<String> {
    let mut v = vec!["stem".to_string()];
    v.extend((0..spec.neighbourhoods.len()).map(|i| format!("nbhd{i}")));
    v.push("head".to_string());
    v
}

fn collect<'a>(prefix: &str, params: &'a SeqParams, out: &mut Vec<(String, &'a Tensor)>) {
    for (j, layer) in params.layers.iter().enumerate() {
        match layer {
            LayerParams::None => {}
            LayerParams::Conv { weight } => {
                out.push((format!("{prefix}.{j}.weight"), &weight.value))
            }
            LayerParams::Dense { weight, bias } => {
                out.push((format!("{prefix}.{j}.{}", PARAM_NAMES[0]), &weight.value));
                out.push((format!("{prefix}.{j}.{}", PARAM_NAMES[1]), &bias.value));
            }
            LayerParams::Norm {
                gamma,
                beta,
                running,
            } => {
                out.push((format!("{prefix}.{j}.{}", NORM_NAMES[0]), &gamma.value));
                out.push((format!("{prefix}.{j}.{}", NORM_NAMES[1]), &beta.value));
                if let Some(rs) = running {
                    out.push((format!("{prefix}.{j}.running_mean"), &rs.mean));
                    out.push((format!("{prefix}.{j}.running_var"), &rs.var));
                }
            }
        }
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut named = Vec::new();
    let names = part_names(&model.spec);
    for (name, params) in names.iter().zip(model.params.parts()) {
        collect(name, params, &mut named);
    }
    let mut offset = 0u64;
    let tensors = named
        .iter()
        .map(|(name, t)| {
            let e = ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.len() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        network: model.spec.clone(),
        tensors,
    })
    .map_err(|e| Error::Runtime(format!("serializing checkpoint header: {e}")))?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, t) in &named {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 {
        return Err(corrupt(format!(
            "{} bytes is shorter than the preamble",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let blob_start = 12 + header_len;
    if bytes.len() < blob_start {
        return Err(corrupt("header extends past end of file".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..blob_start])
        .map_err(|e| corrupt(format!("header: {e}")))?;
    let blobs = &bytes[blob_start..];
    let mut lookup = std::collections::HashMap::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 4 * n;
        if end > blobs.len() {
            return Err(corrupt(format!("tensor {} runs past end of file", e.name)));
        }
        let data = blobs[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data)
            .map_err(|err| corrupt(format!("tensor {}: {err}", e.name)))?;
        lookup.insert(e.name.clone(), t);
    }
    let spec = header.network;
    spec.validate()?;
    let names = part_names(&spec);
    let mut take = |name: String, shape: &[usize]| -> Result<Tensor> {
        let t = lookup
            .remove(&name)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(corrupt(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    let mut rebuild = |prefix: &str, layers: &[LayerSpec]| -> Result<SeqParams> {
        let mut out = Vec::with_capacity(layers.len());
        for (j, layer) in layers.iter().enumerate() {
            let shapes = expected_shapes(layer);
            let p = match (layer, shapes.len()) {
                (LayerSpec::Norm { channels }, _) => {
                    let gamma = Parameter::new(take(format!("{prefix}.{j}.gamma"), &[*channels])?);
                    let beta = Parameter::new(take(format!("{prefix}.{j}.beta"), &[*channels])?);
                    let running = match take(format!("{prefix}.{j}.running_mean"), &[*channels]) {
                        Ok(mean) => Some(RunningStats {
                            mean,
                            var: take(format!("{prefix}.{j}.running_var"), &[*channels])?,
                        }),
                        Err(_) => None,
                    };
                    LayerParams::Norm {
                        gamma,
                        beta,
                        running,
                    }
                }
                (LayerSpec::Dense { .. }, _) => LayerParams::Dense {
                    weight: Parameter::new(take(format!("{prefix}.{j}.weight"), &shapes[0])?),
                    bias: Parameter::new(take(format!("{prefix}.{j}.bias"), &shapes[1])?),
                },
                (_, 1) => LayerParams::Conv {
                    weight: Parameter::new(take(format!("{prefix}.{j}.weight"), &shapes[0])?),
                },
                _ => LayerParams::None,
            };
            out.push(p);
        }
        Ok(SeqParams { layers: out })
    };
    let stem = rebuild(&names[0], &spec.stem)?;
    let neighbourhoods = spec
        .neighbourhoods
        .iter()
        .enumerate()
        .map(|(i, n)| rebuild(&names[i + 1], &n.layers))
        .collect::<Result<Vec<_>>>()?;
    let head = rebuild(names.last().expect("head"), &spec.head)?;
    Model::new(
        spec,
        NetworkParams {
            stem,
            neighbourhoods,
            head,
        },
    )
}
