use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One recorded operation: input references, the output reference, and the
/// rule that routes the output gradient back to the inputs.
pub(crate) struct Record {
    pub inputs: Vec<Tensor>,
    pub output: Tensor,
    pub rule: Rule,
}

/// Backward rules. Saved metadata is kept minimal: most rules read what they
/// need from the recorded input/output tensors.
pub(crate) enum Rule {
    Add,
    Sub,
    Hadamard,
    Scale(f32),
    /// Broadcast add of a `[cols]` bias over the last dimension.
    AddBias { cols: usize },
    Matmul {
        batch: usize,
        n: usize,
        p: usize,
        m: usize,
        rhs_batched: bool,
    },
    TransposeLast { rows: usize, cols: usize },
    Reshape,
    ConcatLast { parts: Vec<usize>, lead: usize },
    /// out[i] = src[row_index[i]] over rows of `width` elements.
    GatherRows {
        row_index: Rc<[u32]>,
        src_rows: usize,
        width: usize,
    },
    SumAll,
    MeanAll,
    /// Column means of a `[rows, cols]` matrix.
    MeanRows { rows: usize, cols: usize },
    Abs,
    Relu,
    Gelu,
    SoftmaxLast { cols: usize },
    LayerNorm { cols: usize, eps: f32 },
}

/// Dynamic (define-by-run) operation tape. Ops executed through a recording
/// tape append one [`Record`] each; [`Tape::backward`] replays them in
/// reverse. Construction order guarantees the topological invariant: every
/// input of record *i* was produced by a record *j < i* or is a leaf.
pub struct Tape {
    pub(crate) records: RefCell<Vec<Record>>,
    pub(crate) grad_enabled: bool,
    pub(crate) check_numerics: bool,
}

impl Tape {
    /// A recording tape for training.
    pub fn new() -> Tape {
        Tape {
            records: RefCell::new(Vec::new()),
            grad_enabled: true,
            check_numerics: false,
        }
    }

    /// A non-recording tape: forward values only, no gradient bookkeeping.
    pub fn no_grad() -> Tape {
        Tape {
            records: RefCell::new(Vec::new()),
            grad_enabled: false,
            check_numerics: false,
        }
    }

    /// Like [`Tape::new`], but every op scans its output for non-finite
    /// values and fails with the op name. Debug builds always scan.
    pub fn checking() -> Tape {
        Tape {
            records: RefCell::new(Vec::new()),
            grad_enabled: true,
            check_numerics: true,
        }
    }

    pub fn num_records(&self) -> usize {
        self.records.borrow().len()
    }

    /// Finalize an op: guard numerics, decide whether the output needs a
    /// gradient, and record the backward rule if so.
    pub(crate) fn finish(
        &self,
        op: &'static str,
        inputs: Vec<Tensor>,
        data: Vec<f32>,
        shape: Vec<usize>,
        rule: Rule,
    ) -> Result<Tensor> {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "{op}: produced non-finite values"
        );
        if self.check_numerics && !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric { op });
        }
        let needs_grad = self.grad_enabled && inputs.iter().any(|t| t.requires_grad());
        let out = Tensor::raw(data, shape, needs_grad);
        if needs_grad {
            debug_assert!(
                inputs.iter().all(|t| t.id() < out.id()),
                "{op}: tape topological invariant violated"
            );
            self.records.borrow_mut().push(Record {
                inputs,
                output: out.clone(),
                rule,
            });
        }
        Ok(out)
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across
    /// repeated calls; intermediate gradients are cleared at the end of each
    /// pass so a second call starts from a clean slate.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss.shape()),
            ));
        }
        loss.accumulate_grad(&[1.0]);
        let records = self.records.borrow();
        for rec in records.iter().rev() {
            let dout = match rec.output.grad() {
                Some(g) => g,
                None => continue,
            };
            backward_record(rec, &dout);
        }
        // Intermediates are record outputs; leaves keep their gradients.
        for rec in records.iter() {
            rec.output.zero_grad();
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn backward_record(rec: &Record, dout: &[f32]) {
    let inputs = &rec.inputs;
    match &rec.rule {
        Rule::Add => {
            route(&inputs[0], dout.to_vec());
            route(&inputs[1], dout.to_vec());
        }
        Rule::Sub => {
            route(&inputs[0], dout.to_vec());
            route(&inputs[1], dout.iter().map(|d| -d).collect());
        }
        Rule::Hadamard => {
            let a = inputs[0].data();
            let b = inputs[1].data();
            route(
                &inputs[0],
                dout.iter().zip(b).map(|(d, bi)| d * bi).collect(),
            );
            route(
                &inputs[1],
                dout.iter().zip(a).map(|(d, ai)| d * ai).collect(),
            );
        }
        Rule::Scale(c) => {
            route(&inputs[0], dout.iter().map(|d| d * c).collect());
        }
        Rule::AddBias { cols } => {
            route(&inputs[0], dout.to_vec());
            if inputs[1].requires_grad() {
                let mut db = vec![0.0f64; *cols];
                for row in dout.chunks_exact(*cols) {
                    for (acc, d) in db.iter_mut().zip(row) {
                        *acc += *d as f64;
                    }
                }
                route(&inputs[1], db.into_iter().map(|v| v as f32).collect());
            }
        }
        Rule::Matmul {
            batch,
            n,
            p,
            m,
            rhs_batched,
        } => backward_matmul(inputs, dout, *batch, *n, *p, *m, *rhs_batched),
        Rule::TransposeLast { rows, cols } => {
            let lead = dout.len() / (rows * cols);
            let mut dx = vec![0.0f32; dout.len()];
            for b in 0..lead {
                let src = &dout[b * rows * cols..(b + 1) * rows * cols];
                let dst = &mut dx[b * rows * cols..(b + 1) * rows * cols];
                // dout is [cols, rows]; transpose back to [rows, cols].
                for r in 0..*cols {
                    for c in 0..*rows {
                        dst[c * cols + r] = src[r * rows + c];
                    }
                }
            }
            route(&inputs[0], dx);
        }
        Rule::Reshape => {
            route(&inputs[0], dout.to_vec());
        }
        Rule::ConcatLast { parts, lead } => {
            let total: usize = parts.iter().sum();
            let mut offset = 0;
            for (input, &part) in inputs.iter().zip(parts) {
                if input.requires_grad() {
                    let mut dx = vec![0.0f32; lead * part];
                    for row in 0..*lead {
                        let src = &dout[row * total + offset..row * total + offset + part];
                        dx[row * part..(row + 1) * part].copy_from_slice(src);
                    }
                    route(input, dx);
                }
                offset += part;
            }
        }
        Rule::GatherRows {
            row_index,
            src_rows,
            width,
        } => {
            let mut dx = vec![0.0f32; src_rows * width];
            for (out_row, &src_row) in row_index.iter().enumerate() {
                let src = &dout[out_row * width..(out_row + 1) * width];
                let dst = &mut dx[src_row as usize * width..(src_row as usize + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            route(&inputs[0], dx);
        }
        Rule::SumAll => {
            route(&inputs[0], vec![dout[0]; inputs[0].numel()]);
        }
        Rule::MeanAll => {
            let scale = dout[0] / inputs[0].numel() as f32;
            route(&inputs[0], vec![scale; inputs[0].numel()]);
        }
        Rule::MeanRows { rows, cols } => {
            let inv = 1.0 / *rows as f32;
            let mut dx = vec![0.0f32; rows * cols];
            for r in 0..*rows {
                for c in 0..*cols {
                    dx[r * cols + c] = dout[c] * inv;
                }
            }
            route(&inputs[0], dx);
        }
        Rule::Abs => {
            let x = inputs[0].data();
            route(
                &inputs[0],
                dout.iter()
                    .zip(x)
                    .map(|(d, xi)| {
                        if *xi > 0.0 {
                            *d
                        } else if *xi < 0.0 {
                            -*d
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
        }
        Rule::Relu => {
            let x = inputs[0].data();
            route(
                &inputs[0],
                dout.iter()
                    .zip(x)
                    .map(|(d, xi)| if *xi > 0.0 { *d } else { 0.0 })
                    .collect(),
            );
        }
        Rule::Gelu => {
            let x = inputs[0].data();
            route(
                &inputs[0],
                dout.iter()
                    .zip(x)
                    .map(|(d, xi)| d * gelu_derivative(*xi))
                    .collect(),
            );
        }
        Rule::SoftmaxLast { cols } => {
            let y = rec.output.data();
            let mut dx = vec![0.0f32; dout.len()];
            for (row, (yrow, drow)) in y.chunks_exact(*cols).zip(dout.chunks_exact(*cols)).enumerate()
            {
                let dot: f64 = yrow
                    .iter()
                    .zip(drow)
                    .map(|(yi, di)| *yi as f64 * *di as f64)
                    .sum();
                for c in 0..*cols {
                    dx[row * cols + c] = yrow[c] * (drow[c] - dot as f32);
                }
            }
            route(&inputs[0], dx);
        }
        Rule::LayerNorm { cols, eps } => backward_layer_norm(inputs, dout, *cols, *eps),
    }
}

fn backward_matmul(
    inputs: &[Tensor],
    dout: &[f32],
    batch: usize,
    n: usize,
    p: usize,
    m: usize,
    rhs_batched: bool,
) {
    let a = inputs[0].data();
    let b = inputs[1].data();
    if inputs[0].requires_grad() {
        // da = dout . b^T, per batch slice.
        let mut da = vec![0.0f32; batch * n * p];
        for bi in 0..batch {
            let dsl = &dout[bi * n * m..(bi + 1) * n * m];
            let bsl = if rhs_batched {
                &b[bi * p * m..(bi + 1) * p * m]
            } else {
                b
            };
            let dasl = &mut da[bi * n * p..(bi + 1) * n * p];
            for i in 0..n {
                for j in 0..m {
                    let d = dsl[i * m + j];
                    if d == 0.0 {
                        continue;
                    }
                    for k in 0..p {
                        dasl[i * p + k] += d * bsl[k * m + j];
                    }
                }
            }
        }
        route(&inputs[0], da);
    }
    if inputs[1].requires_grad() {
        // db = a^T . dout; shared rhs accumulates over batches.
        let db_len = if rhs_batched { batch * p * m } else { p * m };
        let mut db = vec![0.0f32; db_len];
        for bi in 0..batch {
            let asl = &a[bi * n * p..(bi + 1) * n * p];
            let dsl = &dout[bi * n * m..(bi + 1) * n * m];
            let dbsl = if rhs_batched {
                &mut db[bi * p * m..(bi + 1) * p * m]
            } else {
                &mut db[..]
            };
            for i in 0..n {
                for k in 0..p {
                    let av = asl[i * p + k];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..m {
                        dbsl[k * m + j] += av * dsl[i * m + j];
                    }
                }
            }
        }
        route(&inputs[1], db);
    }
}

fn backward_layer_norm(inputs: &[Tensor], dout: &[f32], cols: usize, eps: f32) {
    let x = inputs[0].data();
    let gain = inputs[1].data();
    let rows = x.len() / cols;
    let mut dx = vec![0.0f32; x.len()];
    let mut dgain = vec![0.0f64; cols];
    let mut dbias = vec![0.0f64; cols];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let dr = &dout[r * cols..(r + 1) * cols];
        let mean = xr.iter().map(|v| *v as f64).sum::<f64>() / cols as f64;
        let var = xr
            .iter()
            .map(|v| {
                let d = *v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / cols as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        // dy = dout * gain; dx = inv * (dy - mean(dy) - xhat * mean(dy * xhat))
        let mut mean_dy = 0.0f64;
        let mut mean_dyx = 0.0f64;
        let mut xhat = vec![0.0f64; cols];
        let mut dy = vec![0.0f64; cols];
        for c in 0..cols {
            xhat[c] = (xr[c] as f64 - mean) * inv;
            dy[c] = dr[c] as f64 * gain[c] as f64;
            mean_dy += dy[c];
            mean_dyx += dy[c] * xhat[c];
            dgain[c] += dr[c] as f64 * xhat[c];
            dbias[c] += dr[c] as f64;
        }
        mean_dy /= cols as f64;
        mean_dyx /= cols as f64;
        for c in 0..cols {
            dx[r * cols + c] = (inv * (dy[c] - mean_dy - xhat[c] * mean_dyx)) as f32;
        }
    }
    route(&inputs[0], dx);
    if inputs[1].requires_grad() {
        route(&inputs[1], dgain.into_iter().map(|v| v as f32).collect());
    }
    if inputs[2].requires_grad() {
        route(&inputs[2], dbias.into_iter().map(|v| v as f32).collect());
    }
}

pub(crate) fn gelu_derivative(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    const A: f32 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * A * x * x)
}

fn route(input: &Tensor, delta: Vec<f32>) {
    if input.requires_grad() {
        input.accumulate_grad(&delta);
    }
}
