//! Finite-difference verification suites over the quadratic neuron, one
//! transformer block, and the tiny full model. Central differences with
//! h = 1e-3 probe re-run forwards only, independent of the tape's backward
//! rules. Parameters are randomized to an O(0.3) scale first so the
//! measured gradients sit above f32 finite-difference resolution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::block::QSwinBlock;
use crate::model::{QSwinConfig, QSwinModel};
use crate::params::{InitSpec, ParamStore};
use crate::quadratic::QuadraticLinear;
use crate::tensor::gradcheck::{central_diff_at, vec_rel_err};
use crate::tensor::{Tape, Tensor};

const H: f32 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub sampled: usize,
    pub rel_err: f32,
    pub tolerance: f32,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rel_err <= self.tolerance
    }
}

/// All three suites, in order of increasing depth.
pub fn run_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    Ok(vec![
        quadratic_neuron(seed)?,
        quadratic_block(seed)?,
        tiny_model(seed)?,
    ])
}

/// A standalone quadratic neuron (single output), every parameter of all
/// six groups probed. Tolerance 1e-3.
pub fn quadratic_neuron(seed: u64) -> Result<GradCheckReport> {
    let in_dim = 6;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = InitSpec::Uniform { lo: 0.3, hi: 0.9 };
    let layer = QuadraticLinear::relinear(&mut store, "n", in_dim, 1, &init, &mut rng)?;
    for id in [layer.w_g, layer.w_b] {
        store.set_data(id, init.draw(in_dim, &mut rng));
    }
    for id in [layer.b_g, layer.b_b] {
        store.set_data(id, init.draw(1, &mut rng));
    }
    store.set_quadratic_trainable(true);
    let x_data: Vec<f32> = (0..2 * in_dim).map(|_| rng.random_range(0.5..1.2)).collect();

    let tape = Tape::new();
    let x = Tensor::new(x_data.clone(), &[2, in_dim])?;
    let y = layer.forward(&tape, &store, &x)?;
    let loss = tape.sum(&y)?;
    tape.backward(&loss)?;

    let ids = [layer.w_r, layer.b_r, layer.w_g, layer.b_g, layer.w_b, layer.b_b];
    let mut ad = Vec::new();
    let mut fd = Vec::new();
    for id in ids {
        let grads = store.get(id).grad_or_zeros();
        let base = store.get(id).data().to_vec();
        for coord in 0..base.len() {
            ad.push(grads[coord]);
            let eval = |vals: &[f32]| {
                let mut st = ParamStore::new();
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let l = QuadraticLinear::relinear(&mut st, "n", in_dim, 1, &init, &mut r).unwrap();
                for (dst, src) in [l.w_r, l.b_r, l.w_g, l.b_g, l.w_b, l.b_b].iter().zip(&ids) {
                    st.set_data(*dst, store.get(*src).data().to_vec());
                }
                let target = [l.w_r, l.b_r, l.w_g, l.b_g, l.w_b, l.b_b]
                    [ids.iter().position(|o| *o == id).unwrap()];
                let mut v = base.clone();
                v[coord] = vals[0];
                st.set_data(target, v);
                let tp = Tape::no_grad();
                let xt = Tensor::new(x_data.clone(), &[2, in_dim]).unwrap();
                let out = l.forward(&tp, &st, &xt).unwrap();
                tp.sum(&out).unwrap().item()
            };
            fd.push(central_diff_at(&eval, &[base[coord]], &[0], H)[0]);
        }
    }
    Ok(GradCheckReport {
        name: "quadratic_neuron",
        sampled: ad.len(),
        rel_err: vec_rel_err(&ad, &fd),
        tolerance: 1e-3,
    })
}

// Width 4: layer normalization over 2 channels degenerates to a sign
// function whose gradient is ~0, which would leave finite differences
// probing only float noise.
fn block_cfg() -> QSwinConfig {
    let mut cfg = QSwinConfig::tiny();
    cfg.input_resolution = 8;
    cfg.patch_size = 4;
    cfg.embed_dim = 4;
    cfg.depths = vec![1];
    cfg.num_heads = vec![2];
    cfg.window_size = 2;
    cfg.feature_dim = 4;
    cfg.mlp_ratio = 2;
    cfg
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, lo: f32, hi: f32) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        store.set_data(id, data);
    }
}

/// One quadratic block (4 tokens, width 2, one head), 24 randomly sampled
/// parameters. Tolerance 1e-3.
pub fn quadratic_block(seed: u64) -> Result<GradCheckReport> {
    let cfg = block_cfg();
    let build = |store: &mut ParamStore| -> Result<QSwinBlock> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QSwinBlock::build(&cfg, store, 0, 0, &InitSpec::TruncNormal { std: 0.02 }, &mut rng)
    };
    let mut store = ParamStore::new();
    let block = build(&mut store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB10C);
    randomize(&mut store, &mut rng, -0.35, 0.35);
    store.set_quadratic_trainable(true);
    let n_tok = 4;
    let d = 4;
    let tokens_data: Vec<f32> = (0..n_tok * d).map(|_| rng.random_range(0.3..0.9)).collect();
    let weights: Vec<f32> = (0..n_tok * d).map(|i| 1.0 + (i % 3) as f32 * 0.5).collect();

    let run = |store: &ParamStore, block: &QSwinBlock, grad: bool| -> Result<(Tape, Tensor)> {
        let tape = if grad { Tape::new() } else { Tape::no_grad() };
        let tokens = Tensor::new(tokens_data.clone(), &[n_tok, d])?;
        let out = block.forward(&tape, store, &tokens, None)?;
        let m = Tensor::new(weights.clone(), &[n_tok, d])?;
        let loss = tape.sum(&tape.hadamard(&out, &m)?)?;
        Ok((tape, loss))
    };
    let (tape, loss) = run(&store, &block, true)?;
    tape.backward(&loss)?;

    let ids: Vec<_> = store.ids().collect();
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut ad = Vec::new();
    let mut fd = Vec::new();
    for _ in 0..24 {
        let id = ids[pick.random_range(0..ids.len())];
        let coord = pick.random_range(0..store.get(id).numel());
        ad.push(store.get(id).grad_or_zeros()[coord]);
        let base = store.get(id).data().to_vec();
        let eval = |vals: &[f32]| {
            let mut st = ParamStore::new();
            let blk = build(&mut st).unwrap();
            st.load_snapshot(&store.snapshot());
            let mut v = base.clone();
            v[coord] = vals[0];
            st.set_data(id, v);
            run(&st, &blk, false).unwrap().1.item()
        };
        fd.push(central_diff_at(&eval, &[base[coord]], &[0], H)[0]);
    }
    Ok(GradCheckReport {
        name: "quadratic_block",
        sampled: ad.len(),
        rel_err: vec_rel_err(&ad, &fd),
        tolerance: 1e-3,
    })
}

/// The tiny full model end to end, 24 randomly sampled parameters against
/// the raw score output. Tolerance 1e-2 (looser for depth).
pub fn tiny_model(seed: u64) -> Result<GradCheckReport> {
    let cfg = QSwinConfig::tiny();
    let mut model = QSwinModel::new(cfg.clone(), seed)?;
    model.set_quadratic_trainable(true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    randomize(model.store_mut(), &mut rng, -0.25, 0.25);
    let img_data: Vec<f32> = (0..32 * 32 * 3).map(|_| rng.random_range(0.0..1.0)).collect();

    let loss_of = |m: &QSwinModel| -> f32 {
        let tape = Tape::no_grad();
        let img = Tensor::new(img_data.clone(), &[32, 32, 3]).unwrap();
        let (_, score) = m.forward(&tape, &img).unwrap();
        score.item()
    };
    let tape = Tape::new();
    let img = Tensor::new(img_data.clone(), &[32, 32, 3])?;
    let (_, score) = model.forward(&tape, &img)?;
    let loss = tape.sum(&score)?;
    tape.backward(&loss)?;

    let ids: Vec<_> = model.store().ids().collect();
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0xCAFE);
    let mut ad = Vec::new();
    let mut fd = Vec::new();
    for _ in 0..24 {
        let id = ids[pick.random_range(0..ids.len())];
        let coord = pick.random_range(0..model.store().get(id).numel());
        ad.push(model.store().get(id).grad_or_zeros()[coord]);
        let base = model.store().get(id).data().to_vec();
        let eval = |vals: &[f32]| {
            let mut m2 = QSwinModel::new(cfg.clone(), seed).unwrap();
            m2.store_mut().load_snapshot(&model.store().snapshot());
            let mut v = base.clone();
            v[coord] = vals[0];
            m2.store_mut().set_data(id, v);
            loss_of(&m2)
        };
        fd.push(central_diff_at(&eval, &[base[coord]], &[0], H)[0]);
    }
    Ok(GradCheckReport {
        name: "tiny_model",
        sampled: ad.len(),
        rel_err: vec_rel_err(&ad, &fd),
        tolerance: 1e-2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_their_tolerances() {
        for report in run_all(41).unwrap() {
            println!(
                "gradcheck {}: {} params, rel err {:.2e} (tol {:.0e})",
                report.name, report.sampled, report.rel_err, report.tolerance
            );
            assert!(report.sampled >= 20);
            assert!(
                report.passed(),
                "{}: rel err {} above {}",
                report.name,
                report.rel_err,
                report.tolerance
            );
        }
    }
}
