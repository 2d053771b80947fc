use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::tape::{Rule, Tape};
use crate::tensor::Tensor;

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

impl Tape {
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err("add", a, b));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.finish("add", vec![a.clone(), b.clone()], data, a.shape().to_vec(), Rule::Add)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err("sub", a, b));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        self.finish("sub", vec![a.clone(), b.clone()], data, a.shape().to_vec(), Rule::Sub)
    }

    /// Element-wise product of same-shape tensors.
    pub fn hadamard(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err("hadamard", a, b));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        self.finish(
            "hadamard",
            vec![a.clone(), b.clone()],
            data,
            a.shape().to_vec(),
            Rule::Hadamard,
        )
    }

    /// Multiply by a compile-time-known constant.
    pub fn scale(&self, a: &Tensor, c: f32) -> Result<Tensor> {
        let data = a.data().iter().map(|x| x * c).collect();
        self.finish("scale", vec![a.clone()], data, a.shape().to_vec(), Rule::Scale(c))
    }

    /// Broadcast-add a `[d]` bias over the last dimension of `a`.
    pub fn add_bias(&self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let cols = *a.shape().last().unwrap_or(&0);
        if bias.shape() != [cols] {
            return Err(shape_err("add_bias", a, bias));
        }
        let mut data = a.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            for (v, b) in row.iter_mut().zip(bias.data()) {
                *v += b;
            }
        }
        self.finish(
            "add_bias",
            vec![a.clone(), bias.clone()],
            data,
            a.shape().to_vec(),
            Rule::AddBias { cols },
        )
    }

    /// Matrix product over the last two dimensions. The left operand is
    /// `[..., n, p]`; the right is `[p, m]` (shared across batch) or has
    /// leading dimensions identical to the left's.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let ar = a.shape().len();
        let br = b.shape().len();
        if ar < 2 || br < 2 {
            return Err(shape_err("matmul", a, b));
        }
        let (n, p) = (a.shape()[ar - 2], a.shape()[ar - 1]);
        let (bp, m) = (b.shape()[br - 2], b.shape()[br - 1]);
        let lead = &a.shape()[..ar - 2];
        let rhs_batched = br > 2;
        if p != bp || (rhs_batched && &b.shape()[..br - 2] != lead) {
            return Err(shape_err("matmul", a, b));
        }
        let batch: usize = lead.iter().product();
        let mut out = vec![0.0f32; batch * n * m];
        let ad = a.data();
        let bd = b.data();
        for bi in 0..batch {
            let asl = &ad[bi * n * p..(bi + 1) * n * p];
            let bsl = if rhs_batched {
                &bd[bi * p * m..(bi + 1) * p * m]
            } else {
                bd
            };
            let osl = &mut out[bi * n * m..(bi + 1) * n * m];
            for i in 0..n {
                for k in 0..p {
                    let av = asl[i * p + k];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bsl[k * m..(k + 1) * m];
                    let orow = &mut osl[i * m..(i + 1) * m];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        let mut shape = lead.to_vec();
        shape.push(n);
        shape.push(m);
        self.finish(
            "matmul",
            vec![a.clone(), b.clone()],
            out,
            shape,
            Rule::Matmul {
                batch,
                n,
                p,
                m,
                rhs_batched,
            },
        )
    }

    /// Swap the last two dimensions.
    pub fn transpose_last(&self, a: &Tensor) -> Result<Tensor> {
        let r = a.shape().len();
        if r < 2 {
            return Err(Error::contract(
                "transpose_last",
                format!("needs rank >= 2, got shape {:?}", a.shape()),
            ));
        }
        let (rows, cols) = (a.shape()[r - 2], a.shape()[r - 1]);
        let lead: usize = a.shape()[..r - 2].iter().product();
        let mut out = vec![0.0f32; a.numel()];
        let ad = a.data();
        for b in 0..lead {
            let src = &ad[b * rows * cols..(b + 1) * rows * cols];
            let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape[r - 2] = cols;
        shape[r - 1] = rows;
        self.finish(
            "transpose_last",
            vec![a.clone()],
            out,
            shape,
            Rule::TransposeLast { rows, cols },
        )
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != a.numel() {
            return Err(Error::contract(
                "reshape",
                format!("cannot view {:?} as {:?}", a.shape(), shape),
            ));
        }
        self.finish(
            "reshape",
            vec![a.clone()],
            a.data().to_vec(),
            shape.to_vec(),
            Rule::Reshape,
        )
    }

    /// Concatenate along the last dimension; leading dimensions must agree.
    pub fn concat_last(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_last", "no inputs"));
        }
        let first = parts[0];
        let r = first.shape().len();
        let lead_shape = &first.shape()[..r - 1];
        for t in parts {
            if t.shape().len() != r || &t.shape()[..r - 1] != lead_shape {
                return Err(shape_err("concat_last", first, t));
            }
        }
        let lead: usize = lead_shape.iter().product();
        let widths: Vec<usize> = parts.iter().map(|t| *t.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0f32; lead * total];
        for row in 0..lead {
            let mut offset = 0;
            for (t, &w) in parts.iter().zip(&widths) {
                let src = &t.data()[row * w..(row + 1) * w];
                out[row * total + offset..row * total + offset + w].copy_from_slice(src);
                offset += w;
            }
        }
        let mut shape = lead_shape.to_vec();
        shape.push(total);
        self.finish(
            "concat_last",
            parts.iter().map(|t| (*t).clone()).collect(),
            out,
            shape,
            Rule::ConcatLast {
                parts: widths,
                lead,
            },
        )
    }

    /// Reorder rows of `a` viewed as `[src_rows, width]`: output row `i` is
    /// source row `row_index[i]`. The workhorse behind window partitioning,
    /// cyclic shifts, head splitting, and patch flattening.
    pub fn gather_rows(
        &self,
        a: &Tensor,
        row_index: &Rc<[u32]>,
        width: usize,
        out_shape: &[usize],
    ) -> Result<Tensor> {
        if width == 0 || !a.numel().is_multiple_of(width) {
            return Err(Error::contract(
                "gather_rows",
                format!("width {} does not divide {} elements", width, a.numel()),
            ));
        }
        let src_rows = a.numel() / width;
        let out_numel: usize = out_shape.iter().product();
        if out_numel != row_index.len() * width {
            return Err(Error::contract(
                "gather_rows",
                format!(
                    "index of {} rows x width {} does not fill shape {:?}",
                    row_index.len(),
                    width,
                    out_shape
                ),
            ));
        }
        let ad = a.data();
        let mut out = vec![0.0f32; out_numel];
        for (i, &src) in row_index.iter().enumerate() {
            debug_assert!((src as usize) < src_rows);
            out[i * width..(i + 1) * width]
                .copy_from_slice(&ad[src as usize * width..(src as usize + 1) * width]);
        }
        self.finish(
            "gather_rows",
            vec![a.clone()],
            out,
            out_shape.to_vec(),
            Rule::GatherRows {
                row_index: Rc::clone(row_index),
                src_rows,
                width,
            },
        )
    }

    pub fn sum(&self, a: &Tensor) -> Result<Tensor> {
        let total: f64 = a.data().iter().map(|v| *v as f64).sum();
        self.finish("sum", vec![a.clone()], vec![total as f32], vec![], Rule::SumAll)
    }

    pub fn mean(&self, a: &Tensor) -> Result<Tensor> {
        let total: f64 = a.data().iter().map(|v| *v as f64).sum();
        let mean = total / a.numel() as f64;
        self.finish("mean", vec![a.clone()], vec![mean as f32], vec![], Rule::MeanAll)
    }

    /// Column means of a `[rows, cols]` matrix, producing `[cols]`.
    pub fn mean_rows(&self, a: &Tensor) -> Result<Tensor> {
        if a.shape().len() != 2 {
            return Err(Error::contract(
                "mean_rows",
                format!("needs a 2-d tensor, got {:?}", a.shape()),
            ));
        }
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let mut acc = vec![0.0f64; cols];
        for row in a.data().chunks_exact(cols) {
            for (s, v) in acc.iter_mut().zip(row) {
                *s += *v as f64;
            }
        }
        let data = acc.into_iter().map(|s| (s / rows as f64) as f32).collect();
        self.finish(
            "mean_rows",
            vec![a.clone()],
            data,
            vec![cols],
            Rule::MeanRows { rows, cols },
        )
    }

    pub fn abs(&self, a: &Tensor) -> Result<Tensor> {
        let data = a.data().iter().map(|v| v.abs()).collect();
        self.finish("abs", vec![a.clone()], data, a.shape().to_vec(), Rule::Abs)
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        let data = a.data().iter().map(|v| v.max(0.0)).collect();
        self.finish("relu", vec![a.clone()], data, a.shape().to_vec(), Rule::Relu)
    }

    /// Tanh-form GELU.
    pub fn gelu(&self, a: &Tensor) -> Result<Tensor> {
        const C: f32 = 0.797_884_6;
        const A: f32 = 0.044_715;
        let data = a
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()))
            .collect();
        self.finish("gelu", vec![a.clone()], data, a.shape().to_vec(), Rule::Gelu)
    }

    /// Numerically stabilized softmax over the last dimension.
    pub fn softmax_last(&self, a: &Tensor) -> Result<Tensor> {
        let cols = *a.shape().last().ok_or_else(|| {
            Error::contract("softmax_last", "needs at least one dimension")
        })?;
        let mut out = vec![0.0f32; a.numel()];
        for (orow, xrow) in out.chunks_exact_mut(cols).zip(a.data().chunks_exact(cols)) {
            let max = xrow.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut denom = 0.0f64;
            for (o, x) in orow.iter_mut().zip(xrow) {
                *o = (x - max).exp();
                denom += *o as f64;
            }
            for o in orow.iter_mut() {
                *o = (*o as f64 / denom) as f32;
            }
        }
        self.finish(
            "softmax_last",
            vec![a.clone()],
            out,
            a.shape().to_vec(),
            Rule::SoftmaxLast { cols },
        )
    }

    /// Per-token layer normalization over the last dimension, then the
    /// affine map `gain * xhat + bias`.
    pub fn layer_norm(&self, a: &Tensor, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
        let cols = *a.shape().last().unwrap_or(&0);
        if gain.shape() != [cols] {
            return Err(shape_err("layer_norm", a, gain));
        }
        if bias.shape() != [cols] {
            return Err(shape_err("layer_norm", a, bias));
        }
        let mut out = vec![0.0f32; a.numel()];
        let g = gain.data();
        let bb = bias.data();
        for (orow, xrow) in out.chunks_exact_mut(cols).zip(a.data().chunks_exact(cols)) {
            let mean = xrow.iter().map(|v| *v as f64).sum::<f64>() / cols as f64;
            let var = xrow
                .iter()
                .map(|v| {
                    let d = *v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / cols as f64;
            let inv = 1.0 / (var + eps as f64).sqrt();
            for c in 0..cols {
                let xhat = ((xrow[c] as f64 - mean) * inv) as f32;
                orow[c] = g[c] * xhat + bb[c];
            }
        }
        self.finish(
            "layer_norm",
            vec![a.clone(), gain.clone(), bias.clone()],
            out,
            a.shape().to_vec(),
            Rule::LayerNorm { cols, eps },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{central_diff, max_rel_err};
    use proptest::prelude::*;

    fn t(data: &[f32], shape: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    fn p(data: &[f32], shape: &[usize]) -> Tensor {
        Tensor::param(data.to_vec(), shape).unwrap()
    }

    /// Naive triple-loop multiply, kept independent of the op implementation.
    fn naive_matmul(a: &[f32], b: &[f32], n: usize, p: usize, m: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += a[i * p + k] * b[k * m + j];
                }
                out[i * m + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let tape = Tape::no_grad();
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t(&[5.0, 6.0, 7.0, 8.0], &[2, 2]);
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(c.data(), naive_matmul(a.data(), b.data(), 2, 2, 2).as_slice());
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let tape = Tape::no_grad();
        let a = t(&[2.0, -1.0, 0.5, 3.0], &[2, 2]);
        let id = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let zero = Tensor::zeros(&[2, 2]);
        assert_eq!(tape.matmul(&a, &id).unwrap().data(), a.data());
        assert_eq!(tape.matmul(&a, &zero).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn matmul_broadcasts_unbatched_rhs() {
        let tape = Tape::no_grad();
        let a = t(&[1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0], &[2, 2, 2]);
        let b = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        assert_eq!(&c.data()[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&c.data()[4..], &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let tape = Tape::no_grad();
        let a = t(&[1.0; 6], &[2, 3]);
        let b = t(&[1.0; 4], &[2, 2]);
        let err = tape.matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn hadamard_cases() {
        let tape = Tape::no_grad();
        let a = t(&[1.0, 2.0, 3.0], &[3]);
        let b = t(&[4.0, 5.0, 6.0], &[3]);
        assert_eq!(tape.hadamard(&a, &b).unwrap().data(), &[4.0, 10.0, 18.0]);
        let ones = Tensor::ones(&[3]);
        assert_eq!(tape.hadamard(&a, &ones).unwrap().data(), a.data());
        let x = t(&[2.0, -3.0], &[2]);
        assert_eq!(tape.hadamard(&x, &x).unwrap().data(), &[4.0, 9.0]);
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let tape = Tape::no_grad();
        let s = tape.softmax_last(&t(&[0.0, 0.0, 0.0], &[3])).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let s = tape.softmax_last(&t(&[1000.0, 0.0], &[2])).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-6);
        assert!(s.data()[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_log_ratio_oracle() {
        // Direct evaluation: softmax([ln 1, ln 2, ln 3]) = [1/6, 2/6, 3/6].
        let tape = Tape::no_grad();
        let x = t(&[1.0f32.ln(), 2.0f32.ln(), 3.0f32.ln()], &[3]);
        let s = tape.softmax_last(&x).unwrap();
        let expect = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (a, e) in s.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn layer_norm_cases() {
        let tape = Tape::no_grad();
        let gain = Tensor::ones(&[3]);
        let bias = Tensor::zeros(&[3]);
        // Constant token collapses to zero under eps regularization.
        let y = tape
            .layer_norm(&t(&[5.0, 5.0, 5.0], &[1, 3]), &gain, &bias, 1e-5)
            .unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-5);
        }
        // Hand evaluation: [1, 3] has mean 2, population std 1.
        let g2 = Tensor::ones(&[2]);
        let b2 = Tensor::zeros(&[2]);
        let y = tape
            .layer_norm(&t(&[1.0, 3.0], &[1, 2]), &g2, &b2, 1e-7)
            .unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-3, "{:?}", y.data());
        assert!((y.data()[1] - 1.0).abs() < 1e-3);
        // Zero gain broadcasts the bias.
        let zg = Tensor::zeros(&[2]);
        let bias2 = t(&[0.7, -0.3], &[2]);
        let y = tape
            .layer_norm(&t(&[2.0, 9.0, -4.0, 1.0], &[2, 2]), &zg, &bias2, 1e-5)
            .unwrap();
        assert_eq!(y.data(), &[0.7, -0.3, 0.7, -0.3]);
    }

    #[test]
    fn backward_linear_functional() {
        let tape = Tape::new();
        let x = p(&[1.0, 2.0, 3.0], &[3]);
        let loss = tape.sum(&x).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic_rule() {
        let tape = Tape::new();
        let x = p(&[2.0, -3.0], &[2]);
        let sq = tape.hadamard(&x, &x).unwrap();
        let loss = tape.sum(&sq).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, -6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = p(&[1.0, 2.0], &[2]);
        let y = tape.scale(&x, 2.0).unwrap();
        assert!(tape.backward(&y).is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::new();
        let x = p(&[1.0, 2.0], &[2]);
        let loss = tape.sum(&x).unwrap();
        tape.backward(&loss).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        // grad check against central differences (h = 1e-3) on a graph that
        // exercises matmul, layer norm, gelu, softmax, and reductions. The
        // probe weights the outputs with distinct O(1) coefficients so that
        // no parameter gradient sinks below the f32 finite-difference noise.
        let w0: Vec<f32> = (0..12).map(|i| ((i * 7 % 13) as f32 - 6.0) * 0.15).collect();
        let x_data = [0.4, -0.2, 0.9, 0.1, -0.6, 0.3, 0.8, -0.1];
        let m_data = [2.0, -1.0, 3.0, 1.5, -2.5, 0.5];
        let run = |w: &[f32], grad: bool| -> (Tape, Tensor, Tensor) {
            let tape = if grad { Tape::new() } else { Tape::no_grad() };
            let x = t(&x_data, &[2, 4]);
            let wt = if grad { p(w, &[4, 3]) } else { t(w, &[4, 3]) };
            let g = Tensor::ones(&[3]);
            let b = Tensor::zeros(&[3]);
            let m = t(&m_data, &[2, 3]);
            let h = tape.matmul(&x, &wt).unwrap();
            let h = tape.layer_norm(&h, &g, &b, 1e-5).unwrap();
            let soft = tape.softmax_last(&h).unwrap();
            let act = tape.gelu(&h).unwrap();
            let mixed = tape.add(&soft, &act).unwrap();
            let weighted = tape.hadamard(&mixed, &m).unwrap();
            let loss = tape.sum(&weighted).unwrap();
            (tape, wt, loss)
        };
        let eval = |w: &[f32]| run(w, false).2.item();
        let fd = central_diff(&eval, &w0, 1e-3);
        let (tape, wt, loss) = run(&w0, true);
        tape.backward(&loss).unwrap();
        let ad = wt.grad().unwrap();
        let rel = max_rel_err(&ad, &fd);
        assert!(rel <= 1e-3, "relative error {rel} exceeds 1e-3");
    }

    #[test]
    fn gradcheck_every_differentiable_op() {
        // Per-op check on random small tensors: autodiff vs central finite
        // differences at h = 1e-3, relative error <= 1e-3. The loss weights
        // each output element with a distinct coefficient.
        type OpFn = fn(&Tape, &Tensor) -> Tensor;
        let ops: Vec<(&str, OpFn)> = vec![
            ("add", |tp, x| {
                let c = Tensor::new((0..x.numel()).map(|i| 0.1 + (i % 7) as f32 * 0.04).collect(), x.shape()).unwrap();
                tp.add(x, &c).unwrap()
            }),
            ("sub", |tp, x| {
                let c = Tensor::new((0..x.numel()).map(|i| 0.2 - (i % 5) as f32 * 0.05).collect(), x.shape()).unwrap();
                tp.sub(x, &c).unwrap()
            }),
            ("hadamard", |tp, x| tp.hadamard(x, x).unwrap()),
            ("scale", |tp, x| tp.scale(x, -1.7).unwrap()),
            ("matmul", |tp, x| {
                let w = Tensor::new((0..16).map(|i| 0.2 + (i % 5) as f32 * 0.1).collect(), &[4, 4]).unwrap();
                tp.matmul(x, &w).unwrap()
            }),
            ("transpose_last", |tp, x| tp.transpose_last(x).unwrap()),
            ("reshape", |tp, x| tp.reshape(x, &[x.numel()]).unwrap()),
            ("abs", |tp, x| tp.abs(x).unwrap()),
            ("relu", |tp, x| tp.relu(x).unwrap()),
            ("gelu", |tp, x| tp.gelu(x).unwrap()),
            ("softmax_last", |tp, x| tp.softmax_last(x).unwrap()),
            ("layer_norm", |tp, x| {
                let g = Tensor::new(vec![1.2, 0.8, 1.0, 1.1], &[4]).unwrap();
                let b = Tensor::new(vec![0.1, -0.2, 0.0, 0.3], &[4]).unwrap();
                tp.layer_norm(x, &g, &b, 1e-5).unwrap()
            }),
            ("mean", |tp, x| tp.mean(x).unwrap()),
            ("sum", |tp, x| tp.sum(x).unwrap()),
            ("mean_rows", |tp, x| tp.mean_rows(x).unwrap()),
        ];
        for (name, op) in ops {
            // Values in [0.3, 0.9], away from the abs/relu kinks and small
            // enough that f32 rounding stays well under the h=1e-3 signal.
            let x0: Vec<f32> = (0..16)
                .map(|i| 0.3 + ((i * 11 + 3) % 12) as f32 * 0.05)
                .collect();
            let weighted_loss = |tp: &Tape, y: &Tensor| -> Tensor {
                let m = Tensor::new(
                    (0..y.numel()).map(|i| 1.0 + (i % 4) as f32 * 0.5).collect(),
                    y.shape(),
                )
                .unwrap();
                tp.sum(&tp.hadamard(y, &m).unwrap()).unwrap()
            };
            let eval = |x: &[f32]| {
                let tp = Tape::no_grad();
                let xt = Tensor::new(x.to_vec(), &[4, 4]).unwrap();
                weighted_loss(&tp, &op(&tp, &xt)).item()
            };
            let fd = central_diff(&eval, &x0, 1e-3);
            let tp = Tape::new();
            let xt = Tensor::param(x0.clone(), &[4, 4]).unwrap();
            let loss = weighted_loss(&tp, &op(&tp, &xt));
            tp.backward(&loss).unwrap();
            let rel = max_rel_err(&xt.grad().unwrap(), &fd);
            println!("gradcheck {name}: max rel err {rel:.2e}");
            assert!(rel <= 1e-3, "{name}: relative error {rel} exceeds 1e-3");
        }
    }

    #[test]
    fn gather_rows_and_concat_roundtrip() {
        let tape = Tape::new();
        let x = p(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
        let idx: Rc<[u32]> = vec![2u32, 0, 1].into();
        let y = tape.gather_rows(&x, &idx, 2, &[3, 2]).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0, 1.0, 2.0, 3.0, 4.0]);
        let z = tape.concat_last(&[&y, &y]).unwrap();
        assert_eq!(z.shape(), &[3, 4]);
        let loss = tape.sum(&z).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 6]);
    }

    #[test]
    fn transpose_and_reshape_backward() {
        let tape = Tape::new();
        let x = p(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let y = tape.transpose_last(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let z = tape.reshape(&y, &[6]).unwrap();
        let w = t(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[6]);
        let loss = tape.sum(&tape.hadamard(&z, &w).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_rows_pools_columns() {
        let tape = Tape::new();
        let x = p(&[1.0, 10.0, 3.0, 20.0], &[2, 2]);
        let m = tape.mean_rows(&x).unwrap();
        assert_eq!(m.data(), &[2.0, 15.0]);
        let loss = tape.sum(&m).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::no_grad();
        let x = p(&[1.0, 2.0], &[2]);
        let y = tape.hadamard(&x, &x).unwrap();
        assert!(!y.requires_grad());
        assert_eq!(tape.num_records(), 0);
    }

    #[test]
    fn determinism_same_inputs_same_bits() {
        let run = || {
            let tape = Tape::no_grad();
            let x = t(&[0.3, -1.7, 2.9, 0.01], &[2, 2]);
            let w = t(&[0.5, -0.25, 1.5, 0.75], &[2, 2]);
            let h = tape.matmul(&x, &w).unwrap();
            let h = tape.gelu(&h).unwrap();
            let s = tape.softmax_last(&h).unwrap();
            s.data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f32..50.0, 2..24)) {
            let tape = Tape::no_grad();
            let n = values.len();
            let x = Tensor::new(values, &[n]).unwrap();
            let s = tape.softmax_last(&x).unwrap();
            let sum: f32 = s.data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(s.data().iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn gradcheck_random_small_chains(seed in 0u64..32) {
            // Random small tensors through hadamard + gelu, values bounded
            // away from zero so gradients stay above finite-difference noise.
            let n = 6 + (seed as usize % 5);
            let x0: Vec<f32> = (0..n).map(|i| {
                let v = ((seed.wrapping_mul(2654435761).wrapping_add(i as u64 * 97)) % 1000) as f32;
                0.5 + v / 1000.0
            }).collect();
            let eval = |x: &[f32]| {
                let tape = Tape::no_grad();
                let xt = Tensor::new(x.to_vec(), &[n]).unwrap();
                let h = tape.hadamard(&xt, &xt).unwrap();
                let g = tape.gelu(&xt).unwrap();
                let s = tape.add(&h, &g).unwrap();
                tape.sum(&s).unwrap().item()
            };
            let fd = central_diff(&eval, &x0, 1e-3);
            let tape = Tape::new();
            let xt = Tensor::param(x0.clone(), &[n]).unwrap();
            let h = tape.hadamard(&xt, &xt).unwrap();
            let g = tape.gelu(&xt).unwrap();
            let s = tape.add(&h, &g).unwrap();
            let loss = tape.sum(&s).unwrap();
            tape.backward(&loss).unwrap();
            let rel = max_rel_err(&xt.grad().unwrap(), &fd);
            prop_assert!(rel <= 1e-3, "rel err {}", rel);
        }
    }
}
