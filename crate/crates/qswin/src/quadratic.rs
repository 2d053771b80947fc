//! Quadratic-neuron layers and the Relinear training strategy.
//!
//! A quadratic layer maps `x` to
//! `(x W_r + b_r) ⊙ (x W_g + b_g) + (x ⊙ x) W_b + b_b`,
//! a factorized second-order form that costs three weight matrices instead
//! of the O(n^2/2) of a full quadratic map. No activation is applied inside
//! the layer; callers add their own nonlinearity where they want one.
//!
//! Under Relinear initialization (`W_g = 0`, `b_g = 1`, `W_b = 0`,
//! `b_b = 0`) the layer computes exactly `x W_r + b_r`, so a freshly
//! initialized quadratic network is a linear one and departs from it only
//! as the quadratic terms train — on their own, smaller learning-rate track.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{InitSpec, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor};

/// The six-parameter-group quadratic layer.
#[derive(Debug, Clone)]
pub struct QuadraticLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w_r: ParamId,
    pub b_r: ParamId,
    pub w_g: ParamId,
    pub b_g: ParamId,
    pub w_b: ParamId,
    pub b_b: ParamId,
}

impl QuadraticLinear {
    /// Register a Relinear-initialized layer: `W_r`, `b_r` drawn from
    /// `base_init`; `W_g = 0`, `b_g = 1`, `W_b = 0`, `b_b = 0`. The
    /// quadratic groups start untrainable (the store freezes them until the
    /// schedule's unfreeze epoch).
    pub fn relinear(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        base_init: &InitSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<QuadraticLinear> {
        let wshape = [in_dim, out_dim];
        let w_r = store.register(
            format!("{name}.w_r"),
            base_init.draw(in_dim * out_dim, rng),
            &wshape,
            ParamGroup::Base,
        )?;
        let b_r = store.register(
            format!("{name}.b_r"),
            base_init.draw(out_dim, rng),
            &[out_dim],
            ParamGroup::Base,
        )?;
        let w_g = store.register(
            format!("{name}.w_g"),
            vec![0.0; in_dim * out_dim],
            &wshape,
            ParamGroup::Quadratic,
        )?;
        let b_g = store.register(
            format!("{name}.b_g"),
            vec![1.0; out_dim],
            &[out_dim],
            ParamGroup::Quadratic,
        )?;
        let w_b = store.register(
            format!("{name}.w_b"),
            vec![0.0; in_dim * out_dim],
            &wshape,
            ParamGroup::Quadratic,
        )?;
        let b_b = store.register(
            format!("{name}.b_b"),
            vec![0.0; out_dim],
            &[out_dim],
            ParamGroup::Quadratic,
        )?;
        Ok(QuadraticLinear {
            in_dim,
            out_dim,
            w_r,
            b_r,
            w_g,
            b_g,
            w_b,
            b_b,
        })
    }

    /// `(x W_r + b_r) ⊙ (x W_g + b_g) + (x ⊙ x) W_b + b_b` over the last
    /// dimension of `x`.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.shape().last() != Some(&self.in_dim) {
            return Err(Error::Shape {
                op: "quadratic_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.in_dim, self.out_dim],
            });
        }
        let r = tape.add_bias(&tape.matmul(x, store.get(self.w_r))?, store.get(self.b_r))?;
        let g = tape.add_bias(&tape.matmul(x, store.get(self.w_g))?, store.get(self.b_g))?;
        let xx = tape.hadamard(x, x)?;
        let b = tape.add_bias(&tape.matmul(&xx, store.get(self.w_b))?, store.get(self.b_b))?;
        tape.add(&tape.hadamard(&r, &g)?, &b)
    }

    /// Disjoint partition of the six parameter groups:
    /// base = {W_r, b_r}, quadratic = {W_g, b_g, W_b, b_b}.
    pub fn param_groups(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        (
            vec![self.w_r, self.b_r],
            vec![self.w_g, self.b_g, self.w_b, self.b_b],
        )
    }

    pub fn quadratic_trainable(&self, store: &ParamStore) -> bool {
        store.is_trainable(self.w_g)
    }
}

/// Plain linear layer; the quadratic layer collapses to this form at
/// Relinear initialization.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: &InitSpec,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Linear> {
        let w = store.register(
            format!("{name}.w"),
            init.draw(in_dim * out_dim, rng),
            &[in_dim, out_dim],
            ParamGroup::Base,
        )?;
        let b = if bias {
            Some(store.register(
                format!("{name}.b"),
                init.draw(out_dim, rng),
                &[out_dim],
                ParamGroup::Base,
            )?)
        } else {
            None
        };
        Ok(Linear {
            in_dim,
            out_dim,
            w,
            b,
        })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let h = tape.matmul(x, store.get(self.w))?;
        match self.b {
            Some(b) => tape.add_bias(&h, store.get(b)),
            None => Ok(h),
        }
    }
}

/// Token projection: quadratic in the full model, linear in the ablation
/// twin. Both shapes are `in_dim -> out_dim` over the last axis.
#[derive(Debug, Clone)]
pub enum Projection {
    Quadratic(QuadraticLinear),
    Linear(Linear),
}

impl Projection {
    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        match self {
            Projection::Quadratic(q) => q.forward(tape, store, x),
            Projection::Linear(l) => l.forward(tape, store, x),
        }
    }
}

/// Query/key/value projections computed by three independent layers over a
/// `[.., n, d]` token tensor.
pub fn qmlp_project(
    tape: &Tape,
    store: &ParamStore,
    q_layer: &Projection,
    k_layer: &Projection,
    v_layer: &Projection,
    tokens: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let q = q_layer.forward(tape, store, tokens)?;
    let k = k_layer.forward(tape, store, tokens)?;
    let v = v_layer.forward(tape, store, tokens)?;
    Ok((q, k, v))
}

/// Two-track learning-rate schedule for Relinear training: quadratic terms
/// stay frozen until `unfreeze_epoch` and then follow their own, strictly
/// smaller rate track.
#[derive(Debug, Clone)]
pub struct RelinearSchedule {
    pub unfreeze_epoch: usize,
    /// (first epoch, learning rate) pairs, strictly increasing in epoch.
    pub base_stages: Vec<(usize, f32)>,
    pub quad_stages: Vec<(usize, f32)>,
}

impl RelinearSchedule {
    pub fn new(
        unfreeze_epoch: usize,
        base_stages: Vec<(usize, f32)>,
        quad_stages: Vec<(usize, f32)>,
    ) -> Result<RelinearSchedule> {
        let s = RelinearSchedule {
            unfreeze_epoch,
            base_stages,
            quad_stages,
        };
        s.validate()?;
        Ok(s)
    }

    /// The two-track schedule from the training recipe: base rate 1e-4 with
    /// 0.2 decay at epochs 100 and 150; quadratic rate 1e-6 decayed the same
    /// way; quadratic terms unfreeze at epoch 50.
    pub fn two_track_default() -> RelinearSchedule {
        RelinearSchedule {
            unfreeze_epoch: 50,
            base_stages: vec![(0, 1e-4), (100, 2e-5), (150, 4e-6)],
            quad_stages: vec![(0, 1e-6), (100, 2e-7), (150, 4e-8)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for stages in [&self.base_stages, &self.quad_stages] {
            if stages.is_empty() {
                return Err(Error::Config("learning-rate schedule has no stages".into()));
            }
            if stages[0].0 != 0 {
                return Err(Error::Config("first schedule stage must start at epoch 0".into()));
            }
            for w in stages.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::Config(format!(
                        "schedule stages must be strictly increasing in epoch: {} then {}",
                        w[0].0, w[1].0
                    )));
                }
            }
        }
        let boundaries: Vec<usize> = self
            .base_stages
            .iter()
            .chain(&self.quad_stages)
            .map(|(e, _)| *e)
            .collect();
        for e in boundaries {
            if self.quad_lr_at(e) >= self.base_lr_at(e) {
                return Err(Error::Config(format!(
                    "quadratic learning rate must stay strictly below the base rate (epoch {e})"
                )));
            }
        }
        Ok(())
    }

    fn lr_at(stages: &[(usize, f32)], epoch: usize) -> f32 {
        let mut lr = stages[0].1;
        for &(start, rate) in stages {
            if epoch >= start {
                lr = rate;
            }
        }
        lr
    }

    pub fn base_lr_at(&self, epoch: usize) -> f32 {
        Self::lr_at(&self.base_stages, epoch)
    }

    pub fn quad_lr_at(&self, epoch: usize) -> f32 {
        Self::lr_at(&self.quad_stages, epoch)
    }

    pub fn quadratic_trainable_at(&self, epoch: usize) -> bool {
        epoch >= self.unfreeze_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{central_diff_at, vec_rel_err};
    use rand::SeedableRng;

    const INIT: InitSpec = InitSpec::TruncNormal { std: 0.02 };

    #[allow(clippy::too_many_arguments)]
    fn layer_with(
        store: &mut ParamStore,
        w_r: &[f32],
        b_r: &[f32],
        w_g: &[f32],
        b_g: &[f32],
        w_b: &[f32],
        b_b: &[f32],
        in_dim: usize,
        out_dim: usize,
    ) -> QuadraticLinear {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer =
            QuadraticLinear::relinear(store, "t", in_dim, out_dim, &INIT, &mut rng).unwrap();
        store.set_data(layer.w_r, w_r.to_vec());
        store.set_data(layer.b_r, b_r.to_vec());
        store.set_data(layer.w_g, w_g.to_vec());
        store.set_data(layer.b_g, b_g.to_vec());
        store.set_data(layer.w_b, w_b.to_vec());
        store.set_data(layer.b_b, b_b.to_vec());
        layer
    }

    /// Independent scalar-loop evaluation of the quadratic map, used as the
    /// oracle for the layer forward.
    #[allow(clippy::too_many_arguments)]
    fn scalar_quadratic(
        x: &[f32],
        w_r: &[f32],
        b_r: &[f32],
        w_g: &[f32],
        b_g: &[f32],
        w_b: &[f32],
        b_b: &[f32],
        in_dim: usize,
        out_dim: usize,
    ) -> Vec<f32> {
        let rows = x.len() / in_dim;
        let mut out = vec![0.0f32; rows * out_dim];
        for r in 0..rows {
            for o in 0..out_dim {
                let mut xr = 0.0f32;
                let mut xg = 0.0f32;
                let mut xb = 0.0f32;
                for i in 0..in_dim {
                    let xi = x[r * in_dim + i];
                    xr += xi * w_r[i * out_dim + o];
                    xg += xi * w_g[i * out_dim + o];
                    xb += xi * xi * w_b[i * out_dim + o];
                }
                out[r * out_dim + o] = (xr + b_r[o]) * (xg + b_g[o]) + xb + b_b[o];
            }
        }
        out
    }

    #[test]
    fn relinear_init_reduces_to_linear_term() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = QuadraticLinear::relinear(&mut store, "q", 2, 1, &INIT, &mut rng).unwrap();
        store.set_data(layer.w_r, vec![1.0, 1.0]);
        store.set_data(layer.b_r, vec![0.0]);
        let tape = Tape::no_grad();
        let x = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        let y = layer.forward(&tape, &store, &x).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn forward_matches_direct_substitution() {
        // x=[1,2], W_r=[[1],[1]], b_r=[0], W_g=[[1],[0]], b_g=[0] -> (3)(1) = 3
        let mut store = ParamStore::new();
        let layer = layer_with(
            &mut store,
            &[1.0, 1.0],
            &[0.0],
            &[1.0, 0.0],
            &[0.0],
            &[0.0, 0.0],
            &[0.0],
            2,
            1,
        );
        let tape = Tape::no_grad();
        let x = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        let y = layer.forward(&tape, &store, &x).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let in_dim = 4;
        let out_dim = 3;
        let vals = |k: usize| -> Vec<f32> {
            (0..k).map(|i| ((i * 13 + 5) % 17) as f32 / 17.0 - 0.4).collect()
        };
        let w_r = vals(12);
        let b_r = vals(3);
        let w_g = vals(12);
        let b_g = vals(3);
        let w_b = vals(12);
        let b_b = vals(3);
        let x = vals(8);
        let mut store = ParamStore::new();
        let layer = layer_with(&mut store, &w_r, &b_r, &w_g, &b_g, &w_b, &b_b, in_dim, out_dim);
        let tape = Tape::no_grad();
        let xt = Tensor::new(x.clone(), &[2, 4]).unwrap();
        let y = layer.forward(&tape, &store, &xt).unwrap();
        let oracle = scalar_quadratic(&x, &w_r, &b_r, &w_g, &b_g, &w_b, &b_b, in_dim, out_dim);
        for (a, e) in y.data().iter().zip(&oracle) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn relinear_init_values_exact() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = QuadraticLinear::relinear(&mut store, "q", 5, 4, &INIT, &mut rng).unwrap();
        let w_g = store.get(layer.w_g).data();
        assert!(w_g.iter().all(|v| *v == 0.0));
        let b_g = store.get(layer.b_g).data();
        assert!(b_g.iter().all(|v| *v == 1.0));
        assert!(store.get(layer.w_b).data().iter().all(|v| *v == 0.0));
        assert!(store.get(layer.b_b).data().iter().all(|v| *v == 0.0));
        assert!(!layer.quadratic_trainable(&store));
    }

    #[test]
    fn same_seed_same_init_bits() {
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let layer = QuadraticLinear::relinear(&mut store, "q", 3, 3, &INIT, &mut rng).unwrap();
            store.get(layer.w_r).data().to_vec()
        };
        let a = build();
        let b = build();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn param_group_partition_and_counts() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 5;
        let m = 3;
        let layer = QuadraticLinear::relinear(&mut store, "q", n, m, &INIT, &mut rng).unwrap();
        let (base, quad) = layer.param_groups();
        assert_eq!(base.len() + quad.len(), 6);
        for id in &base {
            assert!(!quad.contains(id));
        }
        let base_scalars: usize = base.iter().map(|id| store.get(*id).numel()).sum();
        let quad_scalars: usize = quad.iter().map(|id| store.get(*id).numel()).sum();
        assert_eq!(base_scalars, n * m + m);
        assert_eq!(quad_scalars, 2 * n * m + 2 * m);
        // d=4 single layer: total 60 = 3*16 weights + 3*4 biases.
        let mut store2 = ParamStore::new();
        QuadraticLinear::relinear(&mut store2, "d4", 4, 4, &INIT, &mut rng).unwrap();
        let (total, base, quad) = store2.count_by_group();
        assert_eq!((total, base, quad), (60, 20, 40));
    }

    #[test]
    fn frozen_quadratic_groups_ignore_grads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = QuadraticLinear::relinear(&mut store, "q", 2, 2, &INIT, &mut rng).unwrap();
        assert!(!store.is_trainable(layer.w_g));
        assert!(store.is_trainable(layer.w_r));
    }

    #[test]
    fn gradient_flow_all_six_groups() {
        // Finite differences over every parameter group with the quadratic
        // terms trainable.
        let in_dim = 3;
        let out_dim = 2;
        let x_data = vec![0.7, -0.4, 0.9, 0.3, 0.8, -0.6];
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let init = InitSpec::Uniform { lo: 0.2, hi: 0.8 };
        let layer =
            QuadraticLinear::relinear(&mut store, "q", in_dim, out_dim, &init, &mut rng).unwrap();
        store.set_data(layer.w_g, init.draw(in_dim * out_dim, &mut rng));
        store.set_data(layer.b_g, init.draw(out_dim, &mut rng));
        store.set_data(layer.w_b, init.draw(in_dim * out_dim, &mut rng));
        store.set_data(layer.b_b, init.draw(out_dim, &mut rng));
        store.set_quadratic_trainable(true);

        let ids = [layer.w_r, layer.b_r, layer.w_g, layer.b_g, layer.w_b, layer.b_b];
        for id in ids {
            let x0 = store.get(id).data().to_vec();
            let coords: Vec<usize> = (0..x0.len()).collect();
            let eval = |vals: &[f32]| {
                let mut st = ParamStore::new();
                let mut r = ChaCha8Rng::seed_from_u64(21);
                let l = QuadraticLinear::relinear(&mut st, "q", in_dim, out_dim, &init, &mut r)
                    .unwrap();
                for other in [l.w_r, l.b_r, l.w_g, l.b_g, l.w_b, l.b_b] {
                    let src = [layer.w_r, layer.b_r, layer.w_g, layer.b_g, layer.w_b, layer.b_b]
                        [[l.w_r, l.b_r, l.w_g, l.b_g, l.w_b, l.b_b]
                            .iter()
                            .position(|o| *o == other)
                            .unwrap()];
                    st.set_data(other, store.get(src).data().to_vec());
                }
                let target = [l.w_r, l.b_r, l.w_g, l.b_g, l.w_b, l.b_b]
                    [ids.iter().position(|o| *o == id).unwrap()];
                st.set_data(target, vals.to_vec());
                let tape = Tape::no_grad();
                let x = Tensor::new(x_data.clone(), &[2, in_dim]).unwrap();
                let y = l.forward(&tape, &st, &x).unwrap();
                tape.sum(&y).unwrap().item()
            };
            let fd = central_diff_at(&eval, &x0, &coords, 1e-3);
            let tape = Tape::new();
            let x = Tensor::new(x_data.clone(), &[2, in_dim]).unwrap();
            let y = layer.forward(&tape, &store, &x).unwrap();
            let loss = tape.sum(&y).unwrap();
            tape.backward(&loss).unwrap();
            let ad = store.get(id).grad_or_zeros();
            let rel = vec_rel_err(&ad, &fd);
            assert!(rel <= 1e-3, "group {}: rel err {rel}", store.name(id));
            store.zero_grads();
        }
    }

    #[test]
    fn qmlp_relinear_reduces_to_linear_projections() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 4;
        let q = QuadraticLinear::relinear(&mut store, "q", d, d, &INIT, &mut rng).unwrap();
        let k = QuadraticLinear::relinear(&mut store, "k", d, d, &INIT, &mut rng).unwrap();
        let v = QuadraticLinear::relinear(&mut store, "v", d, d, &INIT, &mut rng).unwrap();
        let tape = Tape::no_grad();
        let tokens = Tensor::new((0..12).map(|i| i as f32 * 0.1 - 0.5).collect(), &[1, 3, d]).unwrap();
        let (qq, kk, vv) = qmlp_project(
            &tape,
            &store,
            &Projection::Quadratic(q.clone()),
            &Projection::Quadratic(k.clone()),
            &Projection::Quadratic(v.clone()),
            &tokens,
        )
        .unwrap();
        for (proj, layer) in [(&qq, &q), (&kk, &k), (&vv, &v)] {
            let lin = tape
                .add_bias(
                    &tape.matmul(&tokens, store.get(layer.w_r)).unwrap(),
                    store.get(layer.b_r),
                )
                .unwrap();
            assert!(proj.max_abs_diff(&lin) <= 1e-6);
        }
    }

    #[test]
    fn qmlp_zero_tokens_give_bias_rows() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 3;
        let q = QuadraticLinear::relinear(&mut store, "q", d, d, &INIT, &mut rng).unwrap();
        store.set_data(q.b_r, vec![0.5, -1.0, 2.0]);
        store.set_data(q.b_g, vec![2.0, 3.0, 0.5]);
        store.set_data(q.b_b, vec![0.1, 0.2, 0.3]);
        let tape = Tape::no_grad();
        let tokens = Tensor::zeros(&[1, 4, d]);
        let y = q.forward(&tape, &store, &tokens).unwrap();
        // b_r ⊙ b_g + b_b broadcast over all n tokens.
        let expect = [0.5 * 2.0 + 0.1, -3.0 + 0.2, 2.0 * 0.5 + 0.3];
        for row in y.data().chunks_exact(d) {
            for (a, e) in row.iter().zip(&expect) {
                assert!((a - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn qmlp_matches_scalar_oracle_random() {
        let d = 4;
        let n = 3;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let init = InitSpec::Uniform { lo: -0.5, hi: 0.5 };
        let q = QuadraticLinear::relinear(&mut store, "q", d, d, &init, &mut rng).unwrap();
        for id in [q.w_g, q.w_b] {
            store.set_data(id, init.draw(d * d, &mut rng));
        }
        for id in [q.b_g, q.b_b] {
            store.set_data(id, init.draw(d, &mut rng));
        }
        let x: Vec<f32> = init.draw(n * d, &mut rng);
        let tape = Tape::no_grad();
        let xt = Tensor::new(x.clone(), &[1, n, d]).unwrap();
        let y = q.forward(&tape, &store, &xt).unwrap();
        let oracle = scalar_quadratic(
            &x,
            store.get(q.w_r).data(),
            store.get(q.b_r).data(),
            store.get(q.w_g).data(),
            store.get(q.b_g).data(),
            store.get(q.w_b).data(),
            store.get(q.b_b).data(),
            d,
            d,
        );
        for (a, e) in y.data().iter().zip(&oracle) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn schedule_validation_and_lookup() {
        let s = RelinearSchedule::two_track_default();
        s.validate().unwrap();
        assert_eq!(s.base_lr_at(0), 1e-4);
        assert_eq!(s.base_lr_at(99), 1e-4);
        assert_eq!(s.base_lr_at(100), 2e-5);
        assert_eq!(s.base_lr_at(150), 4e-6);
        assert_eq!(s.quad_lr_at(0), 1e-6);
        assert_eq!(s.quad_lr_at(100), 2e-7);
        assert_eq!(s.quad_lr_at(150), 4e-8);
        assert!(!s.quadratic_trainable_at(49));
        assert!(s.quadratic_trainable_at(50));

        // Quadratic rate must stay below the base rate.
        assert!(RelinearSchedule::new(10, vec![(0, 1e-4)], vec![(0, 1e-3)]).is_err());
        // Stages must strictly increase.
        assert!(RelinearSchedule::new(10, vec![(0, 1e-4), (0, 1e-5)], vec![(0, 1e-6)]).is_err());
    }
}
