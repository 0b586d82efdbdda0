//! Image datasets: CIFAR binary records and the synthetic texture task.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const PIXELS: usize = CHANNELS * PLANE;

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synthetic { seed: u64 },
    CifarBinary { path: PathBuf },
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Synthetic { seed } => write!(f, "synthetic(seed={seed})"),
            Source::CifarBinary { path } => write!(f, "cifar-binary({})", path.display()),
        }
    }
}

/// Labelled 3×32×32 images held as `f32`, plane-major per image.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub source: Source,
    pub num_classes: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
    /// Per image, the `SIDE×SIDE` region that carries texture (synthetic data only).
    masks: Option<Vec<Vec<bool>>>,
}

impl Dataset {
    pub fn new(source: Source, num_classes: usize, pixels: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(Error::Dataset(format!(
                "{} pixel values for {} images (expected {})",
                pixels.len(),
                labels.len(),
                labels.len() * PIXELS
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self {
            source,
            num_classes,
            pixels,
            labels,
            masks: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        &self.pixels[index * PIXELS..(index + 1) * PIXELS]
    }

    pub fn mask(&self, index: usize) -> Option<&[bool]> {
        self.masks.as_ref().map(|m| m[index].as_slice())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Stacks the selected images into an `N×3×32×32` tensor.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Dataset(format!("index {i} out of range for {} images", self.len())));
            }
            data.extend(self.image(i).iter().map(|&v| T::of(v as f64)));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec([indices.len(), CHANNELS, SIDE, SIDE], data)?, labels))
    }

    /// `(x − mean[c]) / std[c]` per channel.
    pub fn standardize(&mut self, mean: [f32; 3], std: [f32; 3]) -> Result<()> {
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Dataset(format!("standard deviations must be positive, got {std:?}")));
        }
        for image in self.pixels.chunks_mut(PIXELS) {
            for (c, plane) in image.chunks_mut(PLANE).enumerate() {
                plane.iter_mut().for_each(|v| *v = (*v - mean[c]) / std[c]);
            }
        }
        Ok(())
    }

    /// Per-image pixel variance over all channels.
    pub fn image_variance(&self, index: usize) -> f64 {
        let img = self.image(index);
        let mean = img.iter().map(|&v| v as f64).sum::<f64>() / PIXELS as f64;
        img.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / PIXELS as f64
    }

    /// The first `len − val` images for training and the last `val` for validation.
    pub fn split(&self, val: usize) -> Result<(Dataset, Dataset)> {
        if val > self.len() {
            return Err(Error::Dataset(format!("cannot hold out {val} of {} images", self.len())));
        }
        let cut = self.len() - val;
        Ok((self.slice(0..cut), self.slice(cut..self.len())))
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            source: self.source.clone(),
            num_classes: self.num_classes,
            pixels: self.pixels[range.start * PIXELS..range.end * PIXELS].to_vec(),
            labels: self.labels[range.clone()].to_vec(),
            masks: self.masks.as_ref().map(|m| m[range].to_vec()),
        }
    }
}

/// Record layout of a CIFAR binary file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CifarFormat {
    /// Label bytes before each image (1 for CIFAR-10, 2 for CIFAR-100).
    pub label_bytes: usize,
    /// Which of those bytes holds the class.
    pub label_index: usize,
    pub num_classes: usize,
}

impl CifarFormat {
    pub const CIFAR10: CifarFormat = CifarFormat {
        label_bytes: 1,
        label_index: 0,
        num_classes: 10,
    };
    /// Fine labels.
    pub const CIFAR100: CifarFormat = CifarFormat {
        label_bytes: 2,
        label_index: 1,
        num_classes: 100,
    };

    pub fn record_len(&self) -> usize {
        self.label_bytes + PIXELS
    }
}

/// Parses CIFAR records, scaling pixels to `[0, 1]`.
pub fn parse_cifar_bin(bytes: &[u8], format: CifarFormat, source: Source) -> Result<Dataset> {
    if format.label_index >= format.label_bytes {
        return Err(Error::Dataset(format!(
            "label byte {} does not exist in a {}-byte label prefix",
            format.label_index, format.label_bytes
        )));
    }
    let record = format.record_len();
    if bytes.len() % record != 0 {
        return Err(Error::Dataset(format!(
            "file length {} is not a multiple of the {record}-byte record size ({} whole records plus {} bytes)",
            bytes.len(),
            bytes.len() / record,
            bytes.len() % record
        )));
    }
    let n = bytes.len() / record;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[format.label_index] as usize);
        pixels.extend(rec[format.label_bytes..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(source, format.num_classes, pixels, labels)
}

pub fn load_cifar_bin(path: &Path, format: CifarFormat) -> Result<Dataset> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    parse_cifar_bin(&bytes, format, Source::CifarBinary { path: path.to_path_buf() })
}

/// Shape of the synthetic two-class task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    /// Side of the flat background patches.
    pub patch: usize,
    /// Half-range of the per-patch colour offset around mid-grey.
    pub patch_jitter: f64,
    /// Standard deviation of the pixel noise everywhere.
    pub noise: f64,
    /// Side of the square texture region in class-1 images.
    pub texture_side: usize,
    /// Amplitude of the checkerboard component.
    pub checker: f64,
    /// Half-range of the uniform noise mixed into the texture.
    pub texture_noise: f64,
    /// Each class-1 image scales its texture by a factor drawn uniformly
    /// from `[texture_scale_min, 1]`, so some textures are faint.
    pub texture_scale_min: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            patch: 8,
            patch_jitter: 0.01,
            noise: 0.01,
            texture_side: 4,
            checker: 0.36,
            texture_noise: 0.15,
            texture_scale_min: 0.0,
        }
    }
}

/// Mean and standard deviation used to standardize synthetic images.
pub const SYNTHETIC_MEAN: [f32; 3] = [0.5, 0.5, 0.5];
pub const SYNTHETIC_STD: [f32; 3] = [0.1, 0.1, 0.1];

/// Two-class synthetic images in `[0, 1]`.
///
/// Class 0 is a grid of nearly flat grey patches with mild noise. Class 1
/// has the same background plus a square of checkerboard/noise texture at a
/// random position; its location is kept as the image's mask. Labels
/// alternate, so the classes differ in size by at most one.
pub fn gen_synthetic(n: usize, seed: u64, params: &SyntheticParams) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Dataset("synthetic dataset needs at least one image".into()));
    }
    if params.patch == 0 || params.texture_side == 0 || params.texture_side > SIDE {
        return Err(Error::Dataset(format!("invalid synthetic parameters {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise).map_err(|e| Error::Dataset(e.to_string()))?;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    let grid = SIDE.div_ceil(params.patch);
    for i in 0..n {
        let label = i % 2;
        let offsets: Vec<[f64; 3]> = (0..grid * grid)
            .map(|_| [(); 3].map(|_| rng.gen_range(-params.patch_jitter..=params.patch_jitter)))
            .collect();
        let mut mask = vec![false; PLANE];
        if label == 1 {
            let top = rng.gen_range(0..=SIDE - params.texture_side);
            let left = rng.gen_range(0..=SIDE - params.texture_side);
            for y in top..top + params.texture_side {
                mask[y * SIDE + left..y * SIDE + left + params.texture_side].fill(true);
            }
        }
        let phase = rng.gen_range(0..2usize);
        let scale = if params.texture_scale_min < 1.0 {
            rng.gen_range(params.texture_scale_min..=1.0)
        } else {
            1.0
        };
        let mut image = vec![0f32; PIXELS];
        for c in 0..CHANNELS {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let patch = (y / params.patch) * grid + x / params.patch;
                    let mut v = 0.5 + offsets[patch][c] + noise.sample(&mut rng);
                    if mask[y * SIDE + x] {
                        let sign = if (x + y + phase) % 2 == 0 { 1.0 } else { -1.0 };
                        v += scale
                            * (params.checker * sign
                                + rng.gen_range(-params.texture_noise..=params.texture_noise));
                    }
                    image[c * PLANE + y * SIDE + x] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        pixels.extend(image);
        labels.push(label);
        masks.push(mask);
    }
    let mut ds = Dataset::new(Source::Synthetic { seed }, 2, pixels, labels)?;
    ds.masks = Some(masks);
    Ok(ds)
}

/// Random horizontal flip and 4-pixel zero-pad-then-crop, per image.
pub fn augment<T: Element, R: Rng + ?Sized>(batch: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
    const PAD: usize = 4;
    let (n, c, h, w) = batch.dims4()?;
    let mut out = Tensor::zeros(batch.shape().to_vec())?;
    let plane = h * w;
    for i in 0..n {
        let flip = rng.gen_bool(0.5);
        let dy = rng.gen_range(0..=2 * PAD) as isize - PAD as isize;
        let dx = rng.gen_range(0..=2 * PAD) as isize - PAD as isize;
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    out.data_mut()[base + y * w + x] =
                        batch.data()[base + sy as usize * w + sx as usize];
                }
            }
        }
    }
    Ok(out)
}

/// A seeded permutation of `0..n`.
pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}
