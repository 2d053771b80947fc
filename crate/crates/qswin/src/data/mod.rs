//! Multi-scale patch extraction, augmentation, dataset ingestion, and the
//! synthetic browning-image generator.

mod augment;
mod dataset;
mod patches;
mod synthetic;

pub use augment::{augment, random_augment, AugmentOp};
pub use dataset::{load_dataset, read_image, write_image, write_manifest};
pub use patches::{bilinear_resize, extract_patches};
pub use synthetic::generate_synthetic;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
}

/// An RGB image with values in `[0, 1]` and a browning label in `[0, 3]`.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    /// Row-major `height x width x 3`.
    pub pixels: Vec<f32>,
    pub width: usize,
    pub height: usize,
    pub label: f32,
    pub provenance: Provenance,
}

impl LabeledImage {
    pub fn new(
        pixels: Vec<f32>,
        width: usize,
        height: usize,
        label: f32,
        provenance: Provenance,
    ) -> Result<LabeledImage> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Validation(format!(
                "pixel buffer of {} does not match {width}x{height}x3",
                pixels.len()
            )));
        }
        if !(0.0..=3.0).contains(&label) {
            return Err(Error::Validation(format!(
                "label {label} outside the [0, 3] score range"
            )));
        }
        Ok(LabeledImage {
            pixels,
            width,
            height,
            label,
            provenance,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.pixels.clone(), &[self.height, self.width, 3])
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let base = (y * self.width + x) * 3;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }
}

/// Multi-scale extraction parameters.
#[derive(Debug, Clone)]
pub struct PatchSpec {
    /// Candidate square crop sides, in pixels.
    pub scales: Vec<usize>,
    pub patches_per_image: usize,
    /// Side of the resized output patches.
    pub target_size: usize,
    /// Draw the same number of patches per scale instead of sampling the
    /// scale uniformly at random per patch.
    pub balanced_scales: bool,
}

impl PatchSpec {
    pub fn new(scales: Vec<usize>, patches_per_image: usize, target_size: usize) -> PatchSpec {
        PatchSpec {
            scales,
            patches_per_image,
            target_size,
            balanced_scales: false,
        }
    }

    pub fn validate_for(&self, img: &LabeledImage) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("patch spec has no scales".into()));
        }
        if self.target_size == 0 {
            return Err(Error::Config("target size must be positive".into()));
        }
        let limit = img.width.min(img.height);
        for &s in &self.scales {
            if s > limit {
                return Err(Error::Config(format!(
                    "scale {s} exceeds the {}x{} source image",
                    img.width, img.height
                )));
            }
        }
        Ok(())
    }
}

/// Synthetic leaf-piece image description: green elliptical blobs on a
/// white canvas, a brown fraction `p` of each blob's boundary band, and
/// uniform pixel noise. The label is exactly `3 * p`.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub canvas: usize,
    pub blobs: usize,
    /// Browning fraction in `[0, 1]`.
    pub brown_fraction: f32,
    pub noise_amp: f32,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(canvas: usize, brown_fraction: f32, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            canvas,
            blobs: 3,
            brown_fraction,
            noise_amp: 0.03,
            seed,
        }
    }
}
