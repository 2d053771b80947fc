//! The hierarchical quadratic Swin transformer: patch embedding, stages of
//! (shifted) window-attention blocks with quadratic token projections,
//! patch merging between stages, and the feature/regression heads.

pub mod attention;
pub mod block;
pub mod checkpoint;
pub mod config;
pub mod geometry;

pub use attention::AttentionRecord;
pub use config::{QSwinConfig, ShiftPolicy};

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::attention::Recorder;
use crate::model::block::QSwinBlock;
use crate::params::{InitSpec, ParamGroup, ParamId, ParamStore};
use crate::quadratic::Linear;
use crate::tensor::{Tape, Tensor};

struct MergeLayer {
    w: ParamId,
    rows: [Rc<[u32]>; 4],
    out_tokens: usize,
    in_dim: usize,
}

impl MergeLayer {
    /// Concatenate each 2x2 token neighborhood (4C) and reduce to 2C.
    fn forward(&self, tape: &Tape, store: &ParamStore, tokens: &Tensor) -> Result<Tensor> {
        let parts: Vec<Tensor> = self
            .rows
            .iter()
            .map(|r| tape.gather_rows(tokens, r, self.in_dim, &[self.out_tokens, self.in_dim]))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        let cat = tape.concat_last(&refs)?;
        tape.matmul(&cat, store.get(self.w))
    }
}

struct Head {
    feature: Linear,
    score: Linear,
}

pub struct QSwinModel {
    pub cfg: QSwinConfig,
    store: ParamStore,
    patch_w: ParamId,
    patch_b: ParamId,
    patch_rows: Rc<[u32]>,
    pixel_offset: Tensor,
    stages: Vec<Vec<QSwinBlock>>,
    merges: Vec<MergeLayer>,
    head: Head,
}

impl QSwinModel {
    /// Build a model with all weights drawn from a seeded stream. Quadratic
    /// parameter groups are Relinear constants and consume no randomness,
    /// so a quadratic model and its linear twin draw identical base weights
    /// from the same seed.
    pub fn new(cfg: QSwinConfig, seed: u64) -> Result<QSwinModel> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = InitSpec::TruncNormal { std: 0.02 };

        // Stream-carrying linears get fan-in-scaled init: the post-norm
        // blocks add unit-scale normalized branches to the token stream,
        // so the stream itself must start at a comparable scale or the
        // input signal drowns at initialization.
        let p = cfg.patch_size;
        let in_width = p * p * 3;
        let embed_init = InitSpec::TruncNormal {
            std: 1.0 / (in_width as f32).sqrt(),
        };
        let patch_w = store.register(
            "patch_embed.w",
            embed_init.draw(in_width * cfg.embed_dim, &mut rng),
            &[in_width, cfg.embed_dim],
            ParamGroup::Base,
        )?;
        let patch_b = store.register(
            "patch_embed.b",
            init.draw(cfg.embed_dim, &mut rng),
            &[cfg.embed_dim],
            ParamGroup::Base,
        )?;
        let patch_rows =
            geometry::patch_pixel_rows(cfg.input_resolution, cfg.input_resolution, p);
        let n_tok = (cfg.input_resolution / p) * (cfg.input_resolution / p);
        let pixel_offset = Tensor::new(vec![2.0; n_tok * in_width], &[n_tok, in_width])?;

        let mut stages = Vec::new();
        let mut merges = Vec::new();
        for s in 0..cfg.num_stages() {
            let mut blocks = Vec::new();
            for b in 0..cfg.depths[s] {
                blocks.push(QSwinBlock::build(&cfg, &mut store, s, b, &init, &mut rng)?);
            }
            stages.push(blocks);
            if s + 1 < cfg.num_stages() {
                let res = cfg.stage_resolution(s);
                let dim = cfg.stage_dim(s);
                let merge_init = InitSpec::TruncNormal {
                    std: 1.0 / (4.0 * dim as f32).sqrt(),
                };
                let w = store.register(
                    format!("merge{s}.w"),
                    merge_init.draw(4 * dim * 2 * dim, &mut rng),
                    &[4 * dim, 2 * dim],
                    ParamGroup::Base,
                )?;
                let rows = [
                    geometry::merge_neighbor_rows(res, res, 0)?,
                    geometry::merge_neighbor_rows(res, res, 1)?,
                    geometry::merge_neighbor_rows(res, res, 2)?,
                    geometry::merge_neighbor_rows(res, res, 3)?,
                ];
                merges.push(MergeLayer {
                    w,
                    rows,
                    out_tokens: res * res / 4,
                    in_dim: dim,
                });
            }
        }
        let final_dim = cfg.stage_dim(cfg.num_stages() - 1);
        let head_init = InitSpec::TruncNormal {
            std: 1.0 / (final_dim as f32).sqrt(),
        };
        let feature = Linear::new(
            &mut store,
            "head.feature",
            final_dim,
            cfg.feature_dim,
            &head_init,
            true,
            &mut rng,
        )?;
        let score_init = InitSpec::TruncNormal {
            std: 1.0 / (cfg.feature_dim as f32).sqrt(),
        };
        let score = Linear::new(
            &mut store,
            "head.score",
            cfg.feature_dim,
            1,
            &score_init,
            true,
            &mut rng,
        )?;

        Ok(QSwinModel {
            cfg,
            store,
            patch_w,
            patch_b,
            patch_rows,
            pixel_offset,
            stages,
            merges,
            head: Head { feature, score },
        })
    }

    /// The linear twin sharing this model's base weights: every
    /// quadratic projection becomes a plain linear layer carrying the same
    /// `(W_r, b_r)`; all other parameters are copied verbatim.
    pub fn linear_twin(&self) -> Result<QSwinModel> {
        let mut cfg = self.cfg.clone();
        cfg.quadratic = false;
        let mut twin = QSwinModel::new(cfg, 0)?;
        for (name, tensor) in self.store.iter_named() {
            let target = if let Some(base) = name.strip_suffix(".w_r") {
                format!("{base}.w")
            } else if let Some(base) = name.strip_suffix(".b_r") {
                format!("{base}.b")
            } else if name.ends_with(".w_g")
                || name.ends_with(".b_g")
                || name.ends_with(".w_b")
                || name.ends_with(".b_b")
            {
                continue;
            } else {
                name.to_string()
            };
            let id = twin.store.find(&target).ok_or_else(|| {
                Error::contract("linear_twin", format!("no twin parameter for {name}"))
            })?;
            twin.store.set_data(id, tensor.data().to_vec());
        }
        Ok(twin)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn set_quadratic_trainable(&mut self, trainable: bool) {
        self.store.set_quadratic_trainable(trainable);
    }

    /// Learned linear embedding of flattened, non-overlapping patches.
    /// Unit-range pixels are recentered to `(x - 0.5) * 4` first so token
    /// values carry color variation at the scale the post-norm blocks add
    /// their branches at.
    fn patch_embed(&self, tape: &Tape, image: &Tensor) -> Result<Tensor> {
        let r = self.cfg.input_resolution;
        if image.shape() != [r, r, 3] {
            return Err(Error::Config(format!(
                "image shape {:?} does not match the configured resolution {r}x{r}x3",
                image.shape()
            )));
        }
        let p = self.cfg.patch_size;
        let n_tok = (r / p) * (r / p);
        let flat = tape.gather_rows(image, &self.patch_rows, 3, &[n_tok, p * p * 3])?;
        let scaled = tape.scale(&flat, 4.0)?;
        let centered = tape.sub(&scaled, &self.pixel_offset)?;
        let emb = tape.matmul(&centered, self.store.get(self.patch_w))?;
        tape.add_bias(&emb, self.store.get(self.patch_b))
    }

    /// Forward to a `[feature_dim]` feature vector and a `[1]` score.
    pub fn forward(&self, tape: &Tape, image: &Tensor) -> Result<(Tensor, Tensor)> {
        self.forward_inner(tape, image, None)
    }

    /// Forward while capturing every attention matrix.
    pub fn forward_recording(
        &self,
        tape: &Tape,
        image: &Tensor,
        sink: &mut Vec<AttentionRecord>,
    ) -> Result<(Tensor, Tensor)> {
        self.forward_inner(tape, image, Some(sink))
    }

    fn forward_inner(
        &self,
        tape: &Tape,
        image: &Tensor,
        mut sink: Option<&mut Vec<AttentionRecord>>,
    ) -> Result<(Tensor, Tensor)> {
        let mut tokens = self.patch_embed(tape, image)?;
        for (s, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                let mut rec = sink.as_deref_mut().map(|sink| Recorder {
                    sink,
                    stage: s,
                    block: block.index,
                });
                tokens = block.forward(tape, &self.store, &tokens, rec.as_mut())?;
            }
            if let Some(merge) = self.merges.get(s) {
                tokens = merge.forward(tape, &self.store, &tokens)?;
            }
        }
        let pooled = tape.mean_rows(&tokens)?;
        let final_dim = self.cfg.stage_dim(self.cfg.num_stages() - 1);
        let pooled = tape.reshape(&pooled, &[1, final_dim])?;
        let feat = self.head.feature.forward(tape, &self.store, &pooled)?;
        let feat = tape.gelu(&feat)?;
        let score = self.head.score.forward(tape, &self.store, &feat)?;
        Ok((
            tape.reshape(&feat, &[self.cfg.feature_dim])?,
            tape.reshape(&score, &[1])?,
        ))
    }

    /// (total, base, quadratic) scalar parameter counts.
    pub fn count_params(&self) -> (usize, usize, usize) {
        let (total, base, quad) = self.store.count_by_group();
        (total, base, quad)
    }

    /// Scalar count of the q/k/v projection weights (weights only, biases
    /// excluded), used for the 3x structural check against a linear model.
    pub fn qkv_weight_count(&self) -> usize {
        self.store
            .iter_named()
            .filter(|(name, _)| {
                let is_qkv = name.contains(".attn.q.")
                    || name.contains(".attn.k.")
                    || name.contains(".attn.v.");
                is_qkv && (name.ends_with(".w") || name.ends_with(".w_r")
                    || name.ends_with(".w_g") || name.ends_with(".w_b"))
            })
            .map(|(_, t)| t.numel())
            .sum()
    }
}
