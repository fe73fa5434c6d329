//! Datasets: synthetic gratings, CIFAR-10 binary records, standardization,
//! translation augmentation and seeded batching.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Images `[N, C, H, W]` with integer labels in `[0, classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, split: Split, classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::shape(
                "dataset",
                format!("images must be NCHW, got {:?}", images.shape()),
            ));
        }
        if labels.is_empty() || labels.len() != images.shape()[0] {
            return Err(Error::invalid(format!(
                "{} labels for {} images",
                labels.len(),
                images.shape()[0]
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            split,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.images.gather_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.split,
            self.classes,
        )
    }

    /// First `n` samples (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// 64-bit FNV-1a over the image values (f32 LE) followed by the labels
    /// (u32 LE).
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        for v in self.images.data() {
            h.write(&v.to_le_bytes());
        }
        for &l in &self.labels {
            h.write(&(l as u32).to_le_bytes());
        }
        h.finish()
    }
}

/// Parameters of the oriented-grating task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_level: f64,
}

const ORIENTATIONS: usize = 5;

/// Noise-free template of class `c`, shape `[C, H, W]`.
///
/// Orientation index `c mod 5` (steps of 36°), frequency index `c / 5`
/// (1.5, 3, 4.5 … cycles across the image). Channel `ch` has gain
/// `1 − 0.25·(ch mod 3)` and the sign flips on odd frequency indices.
pub fn grating_template(c: usize, channels: usize, height: usize, width: usize) -> Tensor {
    let theta = std::f64::consts::PI * (c % ORIENTATIONS) as f64 / ORIENTATIONS as f64;
    let band = c / ORIENTATIONS;
    let freq = 1.5 * (band + 1) as f64;
    let sign = if band.is_multiple_of(2) { 1.0 } else { -1.0 };
    let (ct, st) = (theta.cos(), theta.sin());
    let extent = height.max(width) as f64;
    Tensor::from_fn(&[channels, height, width], |idx| {
        let ch = idx / (height * width);
        let y = (idx / width) % height;
        let x = idx % width;
        let u = (x as f64 * ct + y as f64 * st) / extent;
        let gain = 1.0 - 0.25 * (ch % 3) as f64;
        (sign * gain * (std::f64::consts::TAU * freq * u).sin()) as f32
    })
}

/// `n_per_class` noisy copies of each class template, class-major order.
pub fn gen_synthetic(spec: &SyntheticSpec, split: Split, seed: u64) -> Result<Dataset> {
    if spec.n_per_class == 0
        || spec.classes == 0
        || spec.channels == 0
        || spec.height == 0
        || spec.width == 0
    {
        return Err(Error::invalid("synthetic dataset sizes must be positive"));
    }
    if !(spec.noise_level >= 0.0 && spec.noise_level.is_finite()) {
        return Err(Error::invalid(format!(
            "noise_level must be finite and >= 0, got {}",
            spec.noise_level
        )));
    }
    let per = spec.channels * spec.height * spec.width;
    let n = spec.n_per_class * spec.classes;
    let mut data = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    let root = Rng::new(seed).split(split.name(), 0);
    for c in 0..spec.classes {
        let template = grating_template(c, spec.channels, spec.height, spec.width);
        let mut rng = root.split("class", c as u64);
        for _ in 0..spec.n_per_class {
            if spec.noise_level == 0.0 {
                data.extend_from_slice(template.data());
            } else {
                data.extend(
                    template
                        .data()
                        .iter()
                        .map(|&v| v + (spec.noise_level * rng.standard_normal()) as f32),
                );
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![n, spec.channels, spec.height, spec.width], data)?,
        labels,
        split,
        spec.classes,
    )
}

pub const CIFAR_RECORD: usize = 3073;

/// Parses one CIFAR-10 binary batch file. Pixels are passed through as raw
/// byte values `0..=255`.
pub fn load_cifar10_file(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!(
                "size {} is not a positive multiple of {CIFAR_RECORD}",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("record {i} has label {}", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f32));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, split, 10)
}

/// Loads `data_batch_{1..5}.bin` (train) or `test_batch.bin` (test) from
/// `dir`. Missing train batches after the first are skipped.
pub fn load_cifar10_binary(dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<std::path::PathBuf> = match split {
        Split::Test => vec![dir.join("test_batch.bin")],
        _ => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .enumerate()
            .filter(|(i, p)| *i == 0 || p.exists())
            .map(|(_, p)| p)
            .collect(),
    };
    let parts = files
        .iter()
        .map(|f| load_cifar10_file(f, split))
        .collect::<Result<Vec<_>>>()?;
    let images = Tensor::concat_rows(&parts.iter().map(|d| d.images.clone()).collect::<Vec<_>>())?;
    let labels = parts
        .iter()
        .flat_map(|d| d.labels.iter().copied())
        .collect();
    Dataset::new(images, labels, split, 10)
}

/// Per-channel mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn compute(images: &Tensor) -> Result<ChannelStats> {
        let (n, c) = (images.shape()[0], images.shape()[1]);
        let hw = images.row_len() / c;
        let count = (n * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let values = (0..n).flat_map(|i| {
                let base = (i * c + ch) * hw;
                images.data()[base..base + hw].iter().map(|&v| v as f64)
            });
            let m = values.clone().sum::<f64>() / count;
            let v = values.map(|x| (x - m) * (x - m)).sum::<f64>() / count;
            mean[ch] = m;
            std[ch] = v.sqrt();
            if std[ch] <= 1e-12 {
                return Err(Error::invalid(format!(
                    "channel {ch} is constant; cannot standardize"
                )));
            }
        }
        Ok(ChannelStats { mean, std })
    }
}

/// Standardizes per channel with `stats`, or with the dataset's own
/// statistics when none are given.
pub fn standardize(
    dataset: &Dataset,
    stats: Option<&ChannelStats>,
) -> Result<(Dataset, ChannelStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => ChannelStats::compute(&dataset.images)?,
    };
    let c = dataset.images.shape()[1];
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::shape(
            "standardize",
            format!("{c} channels, stats for {}", stats.mean.len()),
        ));
    }
    if stats.std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("channel std must be > 0"));
    }
    let hw = dataset.images.row_len() / c;
    let mut images = dataset.images.clone();
    for (idx, v) in images.data_mut().iter_mut().enumerate() {
        let ch = (idx / hw) % c;
        *v = ((*v as f64 - stats.mean[ch]) / stats.std[ch]) as f32;
    }
    Ok((
        Dataset {
            images,
            ..dataset.clone()
        },
        stats,
    ))
}

/// Shifts a `[C, H, W]` image by `(dx, dy)` pixels with zero fill; content
/// moved outside the frame is dropped.
pub fn translate(image: &[f32], shape: &[usize], dx: i64, dy: i64) -> Vec<f32> {
    let (c, h, w) = (shape[0], shape[1] as i64, shape[2] as i64);
    let mut out = vec![0.0; image.len()];
    for ch in 0..c {
        let base = ch * (h * w) as usize;
        for y in 0..h {
            let sy = y - dy;
            if sy < 0 || sy >= h {
                continue;
            }
            for x in 0..w {
                let sx = x - dx;
                if sx >= 0 && sx < w {
                    out[base + (y * w + x) as usize] = image[base + (sy * w + sx) as usize];
                }
            }
        }
    }
    out
}

/// Random translation with `(dx, dy)` uniform in `[−max_shift, max_shift]²`.
pub fn augment_translate(
    image: &[f32],
    shape: &[usize],
    max_shift: usize,
    rng: &mut Rng,
) -> Vec<f32> {
    let m = max_shift as i64;
    let dx = rng.int_inclusive(-m, m);
    let dy = rng.int_inclusive(-m, m);
    translate(image, shape, dx, dy)
}

/// Applies [`augment_translate`] independently to each sample of a batch.
pub fn augment_batch(images: &Tensor, max_shift: usize, rng: &mut Rng) -> Tensor {
    if max_shift == 0 {
        return images.clone();
    }
    let shape = images.shape()[1..].to_vec();
    let mut out = images.clone();
    for i in 0..images.rows() {
        let moved = augment_translate(images.row(i), &shape, max_shift, rng);
        out.row_mut(i).copy_from_slice(&moved);
    }
    out
}

/// Sample order of one epoch: a seeded permutation, or identity for
/// `shuffle = None`.
pub fn epoch_order(n: usize, shuffle: Option<&Rng>, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(r) = shuffle {
        r.split("epoch", epoch).shuffle(&mut idx);
    }
    idx
}

/// One epoch of mini-batches; the final batch may be partial.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let rng = shuffle_seed.map(Rng::new);
    Ok(Batches {
        dataset,
        order: epoch_order(dataset.len(), rng.as_ref(), 0),
        batch_size,
        pos: 0,
    })
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some((
            self.dataset.images.gather_rows(idx),
            idx.iter().map(|&i| self.dataset.labels[i]).collect(),
        ))
    }
}

/// Endless stream of full-size batches drawn epoch by epoch, each epoch
/// reshuffled from a key of the stream seed. A batch never straddles two
/// epochs: the tail of an epoch is emitted as a short batch.
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    rng: Rng,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, rng: Rng) -> Result<Self> {
        if batch_size == 0 || n == 0 {
            return Err(Error::invalid(
                "batch stream needs n >= 1 and batch_size >= 1",
            ));
        }
        let order = epoch_order(n, Some(&rng), 0);
        Ok(BatchStream {
            n,
            batch_size,
            rng,
            epoch: 0,
            order,
            pos: 0,
        })
    }

    /// Indices of the next batch.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.epoch += 1;
            self.order = epoch_order(self.n, Some(&self.rng), self.epoch);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_per_class: 4,
            classes: 10,
            channels: 3,
            height: 12,
            width: 12,
            noise_level: noise,
        }
    }

    #[test]
    fn noiseless_classes_are_constant() {
        let d = gen_synthetic(&spec(0.0), Split::Train, 1).unwrap();
        for c in 0..10 {
            let rows: Vec<&[f32]> = (0..d.len())
                .filter(|&i| d.labels[i] == c)
                .map(|i| d.images.row(i))
                .collect();
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = gen_synthetic(&spec(0.3), Split::Train, 5).unwrap();
        let b = gen_synthetic(&spec(0.3), Split::Train, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = gen_synthetic(&spec(0.3), Split::Test, 5).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn templates_are_distinct() {
        let t: Vec<Tensor> = (0..10).map(|c| grating_template(c, 3, 12, 12)).collect();
        for i in 0..10 {
            for j in i + 1..10 {
                let d: f32 = t[i].sub(&t[j]).unwrap().norm_l2();
                assert!(d > 1.0, "classes {i} and {j} too close: {d}");
            }
        }
    }

    #[test]
    fn cifar_passthrough_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![0u8; 2 * CIFAR_RECORD];
        rec[0] = 3;
        rec[1] = 255;
        rec[CIFAR_RECORD] = 9;
        let p = dir.path().join("data_batch_1.bin");
        std::fs::write(&p, &rec).unwrap();
        let d = load_cifar10_binary(dir.path(), Split::Train).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels, vec![3, 9]);
        assert_eq!(d.images.data()[0], 255.0);
        std::fs::write(&p, &rec[..CIFAR_RECORD + 10]).unwrap();
        assert!(load_cifar10_file(&p, Split::Train).is_err());
        rec[0] = 10;
        std::fs::write(&p, &rec).unwrap();
        assert!(load_cifar10_file(&p, Split::Train).is_err());
    }

    #[test]
    fn standardize_twice_is_unit() {
        let d = gen_synthetic(&spec(0.5), Split::Train, 2).unwrap();
        let (s, _) = standardize(&d, None).unwrap();
        let (_, stats) = standardize(&s, None).unwrap();
        for c in 0..3 {
            assert!(stats.mean[c].abs() < 1e-5);
            assert!((stats.std[c] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_rejected() {
        let d = Dataset::new(
            Tensor::full(&[2, 1, 2, 2], 3.0),
            vec![0, 1],
            Split::Train,
            2,
        )
        .unwrap();
        assert!(standardize(&d, None).is_err());
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let d = gen_synthetic(&spec(0.7), Split::Train, 3).unwrap();
        let stats = ChannelStats::compute(&d.images).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..d.len())
                .flat_map(|i| d.images.row(i)[c * 144..(c + 1) * 144].to_vec())
                .map(|v| v as f64)
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((stats.mean[c] - m).abs() < 1e-9);
            assert!((stats.std[c] - v.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn translate_moves_impulse_and_drops_overflow() {
        let shape = [1, 9, 9];
        let mut img = vec![0.0; 81];
        img[4 * 9 + 4] = 1.0;
        assert_eq!(translate(&img, &shape, 0, 0), img);
        let moved = translate(&img, &shape, 4, 0);
        assert_eq!(moved[4 * 9 + 8], 1.0);
        assert_eq!(moved.iter().filter(|&&v| v != 0.0).count(), 1);
        let gone = translate(&img, &shape, 5, 0);
        assert!(gone.iter().all(|&v| v == 0.0));
        // a full row shifted by 3 keeps 6 of its 9 pixels
        let row: Vec<f32> = (0..81)
            .map(|i| if i / 9 == 2 { 1.0 } else { 0.0 })
            .collect();
        let shifted = translate(&row, &shape, -3, 1);
        assert_eq!(shifted.iter().filter(|&&v| v != 0.0).count(), 6);
    }

    #[test]
    fn batches_cover_epoch_once() {
        let d = gen_synthetic(&spec(0.1), Split::Train, 4).unwrap();
        for bs in [1, 3, 7, 40, 100] {
            let mut seen: Vec<usize> = Vec::new();
            let mut count = 0;
            for (x, y) in batches(&d, bs, Some(9)).unwrap() {
                assert_eq!(x.rows(), y.len());
                count += y.len();
                for i in 0..y.len() {
                    let pos = (0..d.len()).find(|&j| d.images.row(j) == x.row(i)).unwrap();
                    seen.push(pos);
                }
            }
            assert_eq!(count, d.len());
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), d.len());
        }
        assert_eq!(batches(&d, d.len(), None).unwrap().count(), 1);
        let a: Vec<_> = batches(&d, 8, Some(1)).unwrap().map(|b| b.1).collect();
        let b: Vec<_> = batches(&d, 8, Some(1)).unwrap().map(|b| b.1).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn stream_reshuffles_per_epoch() {
        let mut s = BatchStream::new(10, 4, Rng::new(1)).unwrap();
        let epoch: Vec<usize> = (0..3).flat_map(|_| s.next_indices()).collect();
        let mut sorted = epoch.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        let next = s.next_indices();
        assert_eq!(next.len(), 4);
    }
}
