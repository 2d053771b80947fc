//! The quadratic Swin transformer block:
//!
//! ```text
//! T' = LN(MHA(QMLP(T))) + T
//! Tq = LN(MLP(T'))      + T'
//! ```
//!
//! Normalization sits after the attention/MLP inside each residual branch
//! (post-norm), which differs from the pre-norm layout of standard Swin but
//! follows the block equation used here literally. Shifted blocks roll the
//! token grid before windowing, mask window-mate pairs separated by the
//! roll seam, and roll back afterwards.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::attention::{window_attention, Recorder};
use crate::model::config::QSwinConfig;
use crate::model::geometry;
use crate::params::{InitSpec, ParamGroup, ParamId, ParamStore};
use crate::quadratic::{Linear, Projection, QuadraticLinear};
use crate::tensor::{Tape, Tensor};

/// Forward and inverse row maps of a cyclic roll.
type RollPair = (Rc<[u32]>, Rc<[u32]>);

pub struct QSwinBlock {
    pub stage: usize,
    pub index: usize,
    dim: usize,
    heads: usize,
    window: usize,
    n_windows: usize,
    eps: f32,
    q: Projection,
    k: Projection,
    v: Projection,
    proj: Linear,
    norm1_g: ParamId,
    norm1_b: ParamId,
    norm2_g: ParamId,
    norm2_b: ParamId,
    fc1: Linear,
    fc2: Linear,
    partition: Rc<[u32]>,
    reverse: Rc<[u32]>,
    roll: Option<RollPair>,
    split: Rc<[u32]>,
    merge: Rc<[u32]>,
    mask: Option<Tensor>,
    rel_bias: Option<(ParamId, Rc<[u32]>)>,
}

impl QSwinBlock {
    pub fn build(
        cfg: &QSwinConfig,
        store: &mut ParamStore,
        stage: usize,
        index: usize,
        _init: &InitSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<QSwinBlock> {
        let dim = cfg.stage_dim(stage);
        let heads = cfg.num_heads[stage];
        let res = cfg.stage_resolution(stage);
        let window = cfg.window_for(stage);
        let shifted = index % 2 == 1;
        let shift = if shifted { cfg.shift_for(stage) } else { 0 };
        let name = format!("stage{stage}.block{index}");

        // Fan-in-scaled init throughout the block. The post-norm layout
        // feeds each sublayer's raw output into a layer norm; if that
        // output starts orders of magnitude below unit scale, the norm
        // amplifies initialization noise and its backward pass blows the
        // branch gradients up by the same factor.
        let init = InitSpec::TruncNormal {
            std: 1.0 / (dim as f32).sqrt(),
        };
        let make_proj = |store: &mut ParamStore, rng: &mut ChaCha8Rng, which: &str| {
            if cfg.quadratic {
                Ok::<Projection, crate::error::Error>(Projection::Quadratic(
                    QuadraticLinear::relinear(store, &format!("{name}.attn.{which}"), dim, dim, &init, rng)?,
                ))
            } else {
                Ok(Projection::Linear(Linear::new(
                    store,
                    &format!("{name}.attn.{which}"),
                    dim,
                    dim,
                    &init,
                    true,
                    rng,
                )?))
            }
        };
        let q = make_proj(store, rng, "q")?;
        let k = make_proj(store, rng, "k")?;
        let v = make_proj(store, rng, "v")?;
        let proj = Linear::new(store, &format!("{name}.attn.proj"), dim, dim, &init, true, rng)?;
        let norm1_g = store.register(format!("{name}.norm1.g"), vec![1.0; dim], &[dim], ParamGroup::Base)?;
        let norm1_b = store.register(format!("{name}.norm1.b"), vec![0.0; dim], &[dim], ParamGroup::Base)?;
        let norm2_g = store.register(format!("{name}.norm2.g"), vec![1.0; dim], &[dim], ParamGroup::Base)?;
        let norm2_b = store.register(format!("{name}.norm2.b"), vec![0.0; dim], &[dim], ParamGroup::Base)?;
        let hidden = dim * cfg.mlp_ratio;
        let fc1 = Linear::new(store, &format!("{name}.mlp.fc1"), dim, hidden, &init, true, rng)?;
        let fc2_init = InitSpec::TruncNormal {
            std: 1.0 / (hidden as f32).sqrt(),
        };
        let fc2 = Linear::new(store, &format!("{name}.mlp.fc2"), hidden, dim, &fc2_init, true, rng)?;

        let n = window * window;
        let n_windows = res * res / n;
        let partition = geometry::window_partition_rows(res, res, window)?;
        let reverse = geometry::window_reverse_rows(res, res, window)?;
        let roll = if shift > 0 {
            Some((
                geometry::cyclic_shift_rows(res, res, -(shift as i64)),
                geometry::cyclic_shift_rows(res, res, shift as i64),
            ))
        } else {
            None
        };
        let mask = match geometry::boundary_mask(res, res, window, shift)? {
            Some(m) => {
                // Materialize per head: [nw, n, n] -> [nw, heads, n, n].
                let mut full = Vec::with_capacity(n_windows * heads * n * n);
                for w in 0..n_windows {
                    for _ in 0..heads {
                        full.extend_from_slice(&m[w * n * n..(w + 1) * n * n]);
                    }
                }
                Some(Tensor::new(full, &[n_windows, heads, n, n])?)
            }
            None => None,
        };
        let rel_bias = if cfg.rel_pos_bias {
            let side = 2 * window - 1;
            let table = store.register(
                format!("{name}.attn.rel_bias"),
                vec![0.0; heads * side * side],
                &[heads * side * side],
                ParamGroup::Base,
            )?;
            let rel_idx = geometry::relative_position_index(window);
            // Expand to one width-1 gather row per logit element.
            let mut rows = Vec::with_capacity(n_windows * heads * n * n);
            for _ in 0..n_windows {
                for h in 0..heads {
                    for &r in &rel_idx {
                        rows.push(h as u32 * (side * side) as u32 + r);
                    }
                }
            }
            Some((table, Rc::<[u32]>::from(rows)))
        } else {
            None
        };

        Ok(QSwinBlock {
            stage,
            index,
            dim,
            heads,
            window,
            n_windows,
            eps: cfg.layer_norm_eps,
            q,
            k,
            v,
            proj,
            norm1_g,
            norm1_b,
            norm2_g,
            norm2_b,
            fc1,
            fc2,
            partition,
            reverse,
            roll,
            split: geometry::head_split_rows(n_windows, n, heads),
            merge: geometry::head_merge_rows(n_windows, n, heads),
            mask,
            rel_bias,
        })
    }

    /// Forward over `[n_tokens, dim]` tokens; output has the same shape.
    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParamStore,
        tokens: &Tensor,
        recorder: Option<&mut Recorder>,
    ) -> Result<Tensor> {
        let n_tok = tokens.shape()[0];
        let n = self.window * self.window;
        let dh = self.dim / self.heads;

        let mut x = tokens.clone();
        if let Some((fwd, _)) = &self.roll {
            x = tape.gather_rows(&x, fwd, self.dim, &[n_tok, self.dim])?;
        }
        let windows = tape.gather_rows(&x, &self.partition, self.dim, &[n_tok, self.dim])?;
        let qp = self.q.forward(tape, store, &windows)?;
        let kp = self.k.forward(tape, store, &windows)?;
        let vp = self.v.forward(tape, store, &windows)?;
        let head_shape = [self.n_windows, self.heads, n, dh];
        let qh = tape.gather_rows(&qp, &self.split, dh, &head_shape)?;
        let kh = tape.gather_rows(&kp, &self.split, dh, &head_shape)?;
        let vh = tape.gather_rows(&vp, &self.split, dh, &head_shape)?;
        let bias = match &self.rel_bias {
            Some((table, rows)) => Some(tape.gather_rows(
                store.get(*table),
                rows,
                1,
                &[self.n_windows, self.heads, n, n],
            )?),
            None => None,
        };
        let attended = window_attention(
            tape,
            &qh,
            &kh,
            &vh,
            self.mask.as_ref(),
            bias.as_ref(),
            recorder,
        )?;
        let merged = tape.gather_rows(&attended, &self.merge, dh, &[n_tok, self.dim])?;
        let projected = self.proj.forward(tape, store, &merged)?;
        let mut y = tape.gather_rows(&projected, &self.reverse, self.dim, &[n_tok, self.dim])?;
        if let Some((_, back)) = &self.roll {
            y = tape.gather_rows(&y, back, self.dim, &[n_tok, self.dim])?;
        }
        let normed =
            tape.layer_norm(&y, store.get(self.norm1_g), store.get(self.norm1_b), self.eps)?;
        let t_mid = tape.add(&normed, tokens)?;

        let h = self.fc1.forward(tape, store, &t_mid)?;
        let h = tape.gelu(&h)?;
        let h = self.fc2.forward(tape, store, &h)?;
        let normed2 =
            tape.layer_norm(&h, store.get(self.norm2_g), store.get(self.norm2_b), self.eps)?;
        tape.add(&normed2, &t_mid)
    }

    pub fn is_shifted(&self) -> bool {
        self.roll.is_some()
    }
}
