//! Scaled dot-product attention over windowed, per-head tensors.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// One attention matrix captured during a recording forward pass.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub stage: usize,
    pub block: usize,
    pub head: usize,
    pub window: usize,
    /// Row-stochastic `n x n` matrix.
    pub matrix: Vec<f32>,
    pub n: usize,
}

impl AttentionRecord {
    fn new(
        stage: usize,
        block: usize,
        head: usize,
        window: usize,
        matrix: Vec<f32>,
        n: usize,
    ) -> Result<AttentionRecord> {
        for (i, row) in matrix.chunks_exact(n).enumerate() {
            let sum: f32 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| *v < 0.0) {
                return Err(Error::contract(
                    "attention_record",
                    format!("row {i} of stage {stage} block {block} is not stochastic (sum {sum})"),
                ));
            }
        }
        Ok(AttentionRecord {
            stage,
            block,
            head,
            window,
            matrix,
            n,
        })
    }
}

/// Capture destination plus the (stage, block) the matrices belong to.
pub struct Recorder<'a> {
    pub sink: &'a mut Vec<AttentionRecord>,
    pub stage: usize,
    pub block: usize,
}

/// `softmax(Q K^T / sqrt(d_head) + mask) V` for `[nw, heads, n, d_head]`
/// inputs. Masked pairs carry a large negative logit and end up with an
/// exactly zero weight. Optionally records every per-window, per-head
/// attention matrix.
pub fn window_attention(
    tape: &Tape,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&Tensor>,
    rel_bias: Option<&Tensor>,
    recorder: Option<&mut Recorder>,
) -> Result<Tensor> {
    let shape = q.shape();
    if shape.len() != 4 || k.shape() != shape || v.shape() != shape {
        return Err(Error::Shape {
            op: "window_attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let (nw, heads, n, dh) = (shape[0], shape[1], shape[2], shape[3]);
    let scale = 1.0 / (dh as f32).sqrt();
    let kt = tape.transpose_last(k)?;
    let mut logits = tape.scale(&tape.matmul(q, &kt)?, scale)?;
    if let Some(b) = rel_bias {
        logits = tape.add(&logits, b)?;
    }
    if let Some(m) = mask {
        logits = tape.add(&logits, m)?;
    }
    let attn = tape.softmax_last(&logits)?;
    if let Some(rec) = recorder {
        let data = attn.data();
        for w in 0..nw {
            for h in 0..heads {
                let base = (w * heads + h) * n * n;
                rec.sink.push(AttentionRecord::new(
                    rec.stage,
                    rec.block,
                    h,
                    w,
                    data[base..base + n * n].to_vec(),
                    n,
                )?);
            }
        }
    }
    tape.matmul(&attn, v)
}
