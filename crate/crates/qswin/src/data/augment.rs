use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledImage;
use crate::error::{Error, Result};

/// Exact pixel transforms; rotations require a square image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentOp {
    FlipUd,
    FlipLr,
    Rot90,
    Rot180,
    Rot270,
}

pub const ALL_AUGMENTS: [AugmentOp; 5] = [
    AugmentOp::FlipUd,
    AugmentOp::FlipLr,
    AugmentOp::Rot90,
    AugmentOp::Rot180,
    AugmentOp::Rot270,
];

/// Apply one transform. Labels are untouched; pixels move exactly, with no
/// interpolation.
pub fn augment(img: &LabeledImage, op: AugmentOp) -> Result<LabeledImage> {
    let (w, h) = (img.width, img.height);
    let rotation = matches!(op, AugmentOp::Rot90 | AugmentOp::Rot180 | AugmentOp::Rot270);
    if rotation && w != h {
        return Err(Error::contract(
            "augment",
            format!("rotations need a square image, got {w}x{h}"),
        ));
    }
    let (ow, oh) = (w, h);
    let mut out = vec![0.0f32; ow * oh * 3];
    for y in 0..oh {
        for x in 0..ow {
            // Source coordinates for output (y, x).
            let (sy, sx) = match op {
                AugmentOp::FlipUd => (h - 1 - y, x),
                AugmentOp::FlipLr => (y, w - 1 - x),
                // Counterclockwise quarter turns: out(y, x) = in(x, n-1-y)
                // applied once, twice, three times.
                AugmentOp::Rot90 => (x, w - 1 - y),
                AugmentOp::Rot180 => (h - 1 - y, w - 1 - x),
                AugmentOp::Rot270 => (h - 1 - x, y),
            };
            let src = (sy * w + sx) * 3;
            let dst = (y * ow + x) * 3;
            out[dst..dst + 3].copy_from_slice(&img.pixels[src..src + 3]);
        }
    }
    LabeledImage::new(out, ow, oh, img.label, img.provenance)
}

/// Identity or one of the five transforms, drawn uniformly.
pub fn random_augment(img: &LabeledImage, rng: &mut ChaCha8Rng) -> Result<LabeledImage> {
    match rng.random_range(0..=ALL_AUGMENTS.len()) {
        0 => Ok(img.clone()),
        k => augment(img, ALL_AUGMENTS[k - 1]),
    }
}
