//! Inner optimizers (SGD, Adam) over a [`ParamStore`], with separate
//! learning rates for the base and quadratic parameter groups. The scalar
//! update rules are generic over the float width so they can be exercised
//! at `f64` precision in reference checks while training runs in `f32`.

use crate::params::{ParamGroup, ParamStore};

/// Minimal float abstraction for the update rules.
pub trait Real: Copy {
    fn from_f32(v: f32) -> Self;
    fn mul_add_(self, a: Self, b: Self) -> Self;
    fn sub_(self, rhs: Self) -> Self;
    fn mul_(self, rhs: Self) -> Self;
    fn add_(self, rhs: Self) -> Self;
}

impl Real for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn mul_add_(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn sub_(self, rhs: Self) -> Self {
        self - rhs
    }
    fn mul_(self, rhs: Self) -> Self {
        self * rhs
    }
    fn add_(self, rhs: Self) -> Self {
        self + rhs
    }
}

impl Real for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn mul_add_(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn sub_(self, rhs: Self) -> Self {
        self - rhs
    }
    fn mul_(self, rhs: Self) -> Self {
        self * rhs
    }
    fn add_(self, rhs: Self) -> Self {
        self + rhs
    }
}

/// One plain gradient step: `param -= lr * grad`.
pub fn sgd_step<T: Real>(param: &mut [T], grad: &[T], lr: T) {
    debug_assert_eq!(param.len(), grad.len());
    for (p, g) in param.iter_mut().zip(grad) {
        *p = p.sub_(lr.mul_(*g));
    }
}

/// Elementwise interpolation toward an adapted parameter set:
/// `phi + eta * (phi' - phi)`. The endpoints are exact: `eta = 0` returns
/// `phi` and `eta = 1` returns `phi'` bit-for-bit.
pub fn interpolate<T: Real + PartialEq>(phi: &[T], phi_prime: &[T], eta: T) -> Vec<T> {
    debug_assert_eq!(phi.len(), phi_prime.len());
    if eta == T::from_f32(0.0) {
        return phi.to_vec();
    }
    if eta == T::from_f32(1.0) {
        return phi_prime.to_vec();
    }
    phi.iter()
        .zip(phi_prime)
        .map(|(a, b)| a.add_(eta.mul_(b.sub_(*a))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    Sgd,
    Adam,
}

impl OptKind {
    pub fn parse(s: &str) -> Option<OptKind> {
        match s {
            "sgd" => Some(OptKind::Sgd),
            "adam" => Some(OptKind::Adam),
            _ => None,
        }
    }
}

struct AdamState {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Optimizer over a parameter store. Skips parameters whose group is
/// currently frozen; applies the base or quadratic learning rate by group.
pub struct Optimizer {
    kind: OptKind,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step_count: u64,
    adam: Vec<Option<AdamState>>,
}

impl Optimizer {
    pub fn new(kind: OptKind) -> Optimizer {
        Optimizer {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            adam: Vec::new(),
        }
    }

    /// Apply one step from the gradients currently held in the store, then
    /// clear them. Frozen parameters are left bit-identical.
    pub fn step(&mut self, store: &mut ParamStore, base_lr: f32, quad_lr: f32) {
        self.step_count += 1;
        if self.adam.len() < store.len() {
            self.adam.resize_with(store.len(), || None);
        }
        let ids: Vec<_> = store.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            if !store.is_trainable(id) {
                continue;
            }
            let grad = match store.get(id).grad() {
                Some(g) => g,
                None => continue,
            };
            let lr = match store.group(id) {
                ParamGroup::Base => base_lr,
                ParamGroup::Quadratic => quad_lr,
            };
            let mut data = store.get(id).data().to_vec();
            match self.kind {
                OptKind::Sgd => sgd_step(&mut data, &grad, lr),
                OptKind::Adam => {
                    let state = self.adam[slot].get_or_insert_with(|| AdamState {
                        m: vec![0.0; data.len()],
                        v: vec![0.0; data.len()],
                    });
                    let t = self.step_count as i32;
                    let bc1 = 1.0 - self.beta1.powi(t);
                    let bc2 = 1.0 - self.beta2.powi(t);
                    for i in 0..data.len() {
                        let g = grad[i];
                        state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
                        state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
                        let mhat = state.m[i] / bc1;
                        let vhat = state.v[i] / bc2;
                        data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
            store.set_data(id, data);
        }
        store.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn sgd_matches_hand_update() {
        let mut p = vec![1.0f32, -2.0];
        sgd_step(&mut p, &[0.5, 0.5], 0.1);
        assert_eq!(p, vec![0.95, -2.05]);
    }

    #[test]
    fn interpolate_endpoints_are_exact() {
        let phi = vec![0.1f32, 0.2, 0.3];
        let adapted = vec![1.0f32, -1.0, 0.5];
        assert_eq!(interpolate(&phi, &adapted, 0.0), phi);
        let end = interpolate(&phi, &adapted, 1.0);
        assert_eq!(
            end.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            adapted.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With bias correction, the first Adam step is lr * sign(grad)
        // (up to eps).
        let mut store = ParamStore::new();
        let id = store
            .register("p", vec![1.0, 1.0], &[2], ParamGroup::Base)
            .unwrap();
        store.get(id).accumulate_grad(&[0.3, -0.7]);
        let mut opt = Optimizer::new(OptKind::Adam);
        opt.step(&mut store, 0.01, 0.0);
        let data = store.get(id).data();
        assert!((data[0] - (1.0 - 0.01)).abs() < 1e-5, "{data:?}");
        assert!((data[1] - (1.0 + 0.01)).abs() < 1e-5, "{data:?}");
    }

    #[test]
    fn frozen_quadratic_group_is_bit_identical_after_step() {
        let mut store = ParamStore::new();
        let b = store
            .register("w_r", vec![0.5, 0.5], &[2], ParamGroup::Base)
            .unwrap();
        let q = store
            .register("w_g", vec![0.25, -0.75], &[2], ParamGroup::Quadratic)
            .unwrap();
        let before: Vec<u32> = store.get(q).data().iter().map(|v| v.to_bits()).collect();

        let tape = Tape::new();
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let loss = tape
            .sum(&tape.hadamard(&tape.add(store.get(b), store.get(q)).unwrap(), &x).unwrap())
            .unwrap();
        tape.backward(&loss).unwrap();

        let mut opt = Optimizer::new(OptKind::Sgd);
        opt.step(&mut store, 0.1, 0.1);
        let after: Vec<u32> = store.get(q).data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
        assert_ne!(store.get(b).data(), &[0.5, 0.5]);
    }

    #[test]
    fn unfrozen_quadratic_group_steps_with_quad_lr() {
        let mut store = ParamStore::new();
        let q = store
            .register("w_g", vec![1.0], &[1], ParamGroup::Quadratic)
            .unwrap();
        store.set_quadratic_trainable(true);
        store.get(q).accumulate_grad(&[1.0]);
        let mut opt = Optimizer::new(OptKind::Sgd);
        opt.step(&mut store, 0.5, 0.125);
        assert_eq!(store.get(q).data(), &[0.875]);
    }

    proptest::proptest! {
        #[test]
        fn interpolation_is_exact_affine(
            phi in proptest::collection::vec(-10.0f32..10.0, 1..32),
            eta in 0.0f32..1.0,
        ) {
            let adapted: Vec<f32> = phi.iter().map(|v| v * 2.0 + 1.0).collect();
            let out = interpolate(&phi, &adapted, eta);
            for ((o, p), a) in out.iter().zip(&phi).zip(&adapted) {
                let expect = p + eta * (a - p);
                proptest::prop_assert_eq!(*o, expect);
            }
        }
    }
}
