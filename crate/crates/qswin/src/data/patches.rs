use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledImage, PatchSpec};
use crate::error::Result;

/// Standard bilinear resampling to a square `target x target`, with the
/// half-pixel (align-corners false) source mapping. Outputs stay within the
/// per-channel range of the input.
pub fn bilinear_resize(img: &LabeledImage, target: usize) -> Result<LabeledImage> {
    if img.width == target && img.height == target {
        return Ok(img.clone());
    }
    let mut out = vec![0.0f32; target * target * 3];
    let sx = img.width as f32 / target as f32;
    let sy = img.height as f32 / target as f32;
    for oy in 0..target {
        // Half-pixel centers; clamp to the valid sample range.
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f32;
        for ox in 0..target {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f32;
            for c in 0..3 {
                let p00 = img.pixels[(y0 * img.width + x0) * 3 + c];
                let p01 = img.pixels[(y0 * img.width + x1) * 3 + c];
                let p10 = img.pixels[(y1 * img.width + x0) * 3 + c];
                let p11 = img.pixels[(y1 * img.width + x1) * 3 + c];
                let top = p00 + (p01 - p00) * wx;
                let bottom = p10 + (p11 - p10) * wx;
                out[(oy * target + ox) * 3 + c] = top + (bottom - top) * wy;
            }
        }
    }
    LabeledImage::new(out, target, target, img.label, img.provenance)
}

fn crop(img: &LabeledImage, x: usize, y: usize, side: usize) -> Result<LabeledImage> {
    let mut out = Vec::with_capacity(side * side * 3);
    for r in 0..side {
        let base = ((y + r) * img.width + x) * 3;
        out.extend_from_slice(&img.pixels[base..base + side * 3]);
    }
    LabeledImage::new(out, side, side, img.label, img.provenance)
}

/// Extract `patches_per_image` square crops at random positions and scales
/// and resize each to `target_size`. Every patch inherits the source label.
pub fn extract_patches(
    img: &LabeledImage,
    spec: &PatchSpec,
    seed: u64,
) -> Result<Vec<LabeledImage>> {
    spec.validate_for(img)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.patches_per_image);
    for i in 0..spec.patches_per_image {
        let side = if spec.balanced_scales {
            spec.scales[i % spec.scales.len()]
        } else {
            spec.scales[rng.random_range(0..spec.scales.len())]
        };
        let x = if img.width == side {
            0
        } else {
            rng.random_range(0..=img.width - side)
        };
        let y = if img.height == side {
            0
        } else {
            rng.random_range(0..=img.height - side)
        };
        out.push(bilinear_resize(&crop(img, x, y, side)?, spec.target_size)?);
    }
    Ok(out)
}
