use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledImage, Provenance, SyntheticSpec};
use crate::error::{Error, Result};

/// Pixel classes of the generated mask.
pub const MASK_BACKGROUND: u8 = 0;
pub const MASK_INTERIOR: u8 = 1;
pub const MASK_BAND_GREEN: u8 = 2;
pub const MASK_BAND_BROWN: u8 = 3;

const WHITE: [f32; 3] = [1.0, 1.0, 1.0];
const GREEN_INTERIOR: [f32; 3] = [0.20, 0.55, 0.18];
const GREEN_BAND: [f32; 3] = [0.30, 0.62, 0.25];
const BROWN: [f32; 3] = [0.55, 0.25, 0.08];

/// A leaf-piece image: white background, green elliptical blobs, and a
/// fraction `p` of each blob's boundary band recolored brown. The label is
/// exactly `3 * p`. Browning is assigned per band pixel in a deterministic
/// hash order, so the realized brown fraction matches `p` to within one
/// pixel per blob.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledImage> {
    Ok(generate_synthetic_with_mask(spec)?.0)
}

/// Like [`generate_synthetic`], also returning the per-pixel class mask the
/// image was painted from.
pub fn generate_synthetic_with_mask(spec: &SyntheticSpec) -> Result<(LabeledImage, Vec<u8>)> {
    let p = spec.brown_fraction;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Validation(format!(
            "brown fraction {p} outside [0, 1]"
        )));
    }
    if spec.canvas < 8 {
        return Err(Error::Config(format!("canvas {} too small", spec.canvas)));
    }
    let n = spec.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mask = vec![MASK_BACKGROUND; n * n];

    // Blob centers follow a fixed non-overlapping ring layout with mild
    // jitter and near-constant radii: the band size stays comparable
    // across images, so the brown fraction (the label) shows through
    // global color statistics instead of being swamped by geometry
    // variation.
    let blobs = spec.blobs.max(1);
    for blob in 0..blobs {
        let angle = blob as f32 / blobs as f32 * std::f32::consts::TAU;
        let ring = if blobs > 1 { 0.25 } else { 0.0 };
        let base_x = 0.5 + ring * angle.cos();
        let base_y = 0.5 + ring * angle.sin();
        let cx = (base_x + rng.random_range(-0.03..0.03)) * n as f32;
        let cy = (base_y + rng.random_range(-0.03..0.03)) * n as f32;
        let rx = rng.random_range(0.165..0.175) * n as f32;
        let ry = rng.random_range(0.165..0.175) * n as f32;

        // Paint the blob, collecting its boundary-band pixels.
        let mut band = Vec::new();
        for y in 0..n {
            for x in 0..n {
                let dx = (x as f32 + 0.5 - cx) / rx;
                let dy = (y as f32 + 0.5 - cy) / ry;
                let r = (dx * dx + dy * dy).sqrt();
                if r <= 0.65 {
                    mask[y * n + x] = MASK_INTERIOR;
                } else if r <= 1.0 {
                    mask[y * n + x] = MASK_BAND_GREEN;
                    band.push(y * n + x);
                }
            }
        }
        // Recolor the first round(p * band) pixels in hash order.
        band.sort_by_key(|&idx| splitmix64(spec.seed ^ ((blob as u64) << 32) ^ idx as u64));
        let brown_count = (p * band.len() as f32).round() as usize;
        for &idx in band.iter().take(brown_count) {
            mask[idx] = MASK_BAND_BROWN;
        }
    }

    let mut pixels = vec![0.0f32; n * n * 3];
    for (i, &m) in mask.iter().enumerate() {
        let color = match m {
            MASK_INTERIOR => GREEN_INTERIOR,
            MASK_BAND_GREEN => GREEN_BAND,
            MASK_BAND_BROWN => BROWN,
            _ => WHITE,
        };
        for c in 0..3 {
            let noise = rng.random_range(-spec.noise_amp..=spec.noise_amp);
            pixels[i * 3 + c] = (color[c] + noise).clamp(0.0, 1.0);
        }
    }
    let label = 3.0 * p;
    let img = LabeledImage::new(pixels, n, n, label, Provenance::Synthetic)?;
    Ok((img, mask))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band_fraction(mask: &[u8]) -> f32 {
        let brown = mask.iter().filter(|&&m| m == MASK_BAND_BROWN).count();
        let band = mask
            .iter()
            .filter(|&&m| m == MASK_BAND_BROWN || m == MASK_BAND_GREEN)
            .count();
        brown as f32 / band as f32
    }

    #[test]
    fn p_zero_has_no_brown_and_label_zero() {
        let (img, mask) = generate_synthetic_with_mask(&SyntheticSpec::new(32, 0.0, 5)).unwrap();
        assert_eq!(img.label, 0.0);
        assert!(mask.iter().all(|&m| m != MASK_BAND_BROWN));
    }

    #[test]
    fn p_one_browns_every_band_pixel_and_label_three() {
        let (img, mask) = generate_synthetic_with_mask(&SyntheticSpec::new(32, 1.0, 5)).unwrap();
        assert_eq!(img.label, 3.0);
        assert!(mask.iter().all(|&m| m != MASK_BAND_GREEN));
        assert!(mask.contains(&MASK_BAND_BROWN));
    }

    #[test]
    fn measured_brown_fraction_tracks_p() {
        // Pixel-count oracle over the generated mask.
        let (_, mask) = generate_synthetic_with_mask(&SyntheticSpec::new(48, 0.5, 9)).unwrap();
        let f = band_fraction(&mask);
        assert!((f - 0.5).abs() <= 0.05, "band fraction {f}");
    }

    #[test]
    fn brown_count_strictly_increases_in_p() {
        let count = |p: f32| {
            let (_, mask) =
                generate_synthetic_with_mask(&SyntheticSpec::new(32, p, 42)).unwrap();
            mask.iter().filter(|&&m| m == MASK_BAND_BROWN).count()
        };
        let counts: Vec<usize> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&p| count(p)).collect();
        for w in counts.windows(2) {
            assert!(w[0] < w[1], "{counts:?}");
        }
    }

    #[test]
    fn same_seed_same_image() {
        let a = generate_synthetic(&SyntheticSpec::new(32, 0.4, 7)).unwrap();
        let b = generate_synthetic(&SyntheticSpec::new(32, 0.4, 7)).unwrap();
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn label_is_exactly_three_p() {
        for p in [0.0f32, 0.1, 0.33, 0.5, 1.0] {
            let img = generate_synthetic(&SyntheticSpec::new(16, p, 1)).unwrap();
            assert_eq!(img.label, 3.0 * p);
        }
    }

    #[test]
    fn out_of_range_fraction_rejected() {
        assert!(generate_synthetic(&SyntheticSpec::new(32, 1.2, 0)).is_err());
        assert!(generate_synthetic(&SyntheticSpec::new(32, -0.1, 0)).is_err());
    }
}
