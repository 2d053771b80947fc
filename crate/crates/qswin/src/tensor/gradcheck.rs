//! Central finite-difference probes, independent of the tape's backward
//! rules: they only re-run forward evaluations on perturbed inputs.

/// Central difference gradient of `eval` at `x` with step `h`, one probe per
/// coordinate.
pub fn central_diff(eval: &dyn Fn(&[f32]) -> f32, x: &[f32], h: f32) -> Vec<f32> {
    let mut grad = vec![0.0f32; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = eval(&probe) as f64;
        probe[i] = orig - h;
        let minus = eval(&probe) as f64;
        probe[i] = orig;
        grad[i] = ((plus - minus) / (2.0 * h as f64)) as f32;
    }
    grad
}

/// Central difference along selected coordinates only.
pub fn central_diff_at(
    eval: &dyn Fn(&[f32]) -> f32,
    x: &[f32],
    coords: &[usize],
    h: f32,
) -> Vec<f32> {
    let mut grad = vec![0.0f32; coords.len()];
    let mut probe = x.to_vec();
    for (slot, &i) in coords.iter().enumerate() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = eval(&probe) as f64;
        probe[i] = orig - h;
        let minus = eval(&probe) as f64;
        probe[i] = orig;
        grad[slot] = ((plus - minus) / (2.0 * h as f64)) as f32;
    }
    grad
}

/// Symmetric relative error with a small floor so that near-zero pairs do
/// not blow up on float noise.
pub fn rel_err(a: f32, b: f32) -> f32 {
    let scale = a.abs().max(b.abs()).max(1e-3);
    (a - b).abs() / scale
}

pub fn max_rel_err(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0f32, f32::max)
}

/// Norm-based relative error `||a - b|| / max(||a||, ||b||)`. The standard
/// gradient-check metric for parameter vectors: components are weighted by
/// their magnitude, so float noise on near-zero entries does not mask a
/// real mismatch on the dominant ones.
pub fn vec_rel_err(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    let mut diff = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        diff += (*x as f64 - *y as f64).powi(2);
        na += (*x as f64).powi(2);
        nb += (*y as f64).powi(2);
    }
    (diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12)) as f32
}
