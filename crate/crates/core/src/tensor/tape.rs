use std::borrow::Cow;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Element-wise functions with registered derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Gelu,
    Sigmoid,
    Log,
    Exp,
    Pow(f64),
    Abs,
    Neg,
    LogSigmoid,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Gelu => "gelu",
            Unary::Sigmoid => "sigmoid",
            Unary::Log => "log",
            Unary::Exp => "exp",
            Unary::Pow(_) => "pow",
            Unary::Abs => "abs",
            Unary::Neg => "neg",
            Unary::LogSigmoid => "log_sigmoid",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Gelu => kernels::gelu(x),
            Unary::Sigmoid => kernels::sigmoid(x),
            Unary::Log => x.ln(),
            Unary::Exp => x.exp(),
            Unary::Pow(a) => x.powf(a),
            Unary::Abs => x.abs(),
            Unary::Neg => -x,
            Unary::LogSigmoid => kernels::log_sigmoid(x),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Gelu => kernels::gelu_grad(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Log => 1.0 / x,
            Unary::Exp => y,
            Unary::Pow(a) => a * x.powf(a - 1.0),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Neg => -1.0,
            Unary::LogSigmoid => kernels::sigmoid(-x),
        }
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulBt { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    AddRow { a: Var, row: Var, n: usize },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddScalar { a: Var },
    Unary { a: Var, kind: Unary },
    Sum { a: Var },
    Mean { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, cols: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize>, cols: usize },
    Attention { q: Var, k: Var, v: Var, t: usize, d: usize, heads: usize, probs: Vec<f64> },
    Gather { logits: Var, rows: Vec<usize>, targets: Vec<usize>, cols: usize, probs: Vec<f64> },
}

struct Node<'a> {
    value: Cow<'a, [f64]>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Eagerly evaluated computation graph with reverse-mode differentiation.
///
/// A tape lives for one forward/backward pass. Leaves may borrow their data
/// (parameters are never copied onto the tape); gradients accumulate on leaf
/// nodes across repeated [`Tape::backward`] calls until [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    check_finite: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that rejects any NaN or infinity the moment an op produces it.
    pub fn checked() -> Self {
        Self { nodes: Vec::new(), check_finite: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, name: &'static str) -> Result<Var> {
        debug_assert_eq!(value.len(), numel(&shape));
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let needs_grad = self.op_needs_grad(&op);
        self.nodes.push(Node { value: Cow::Owned(value), shape, op, needs_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_needs_grad(&self, op: &Op) -> bool {
        let ng = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul { a, b, .. } | Op::MatMulBt { a, b, .. } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                ng(a) || ng(b)
            }
            Op::AddRow { a, row, .. } => ng(a) || ng(row),
            Op::Scale { a, .. } | Op::AddScalar { a } | Op::Unary { a, .. } | Op::Sum { a } | Op::Mean { a } => ng(a),
            Op::LayerNorm { x, gain, bias, .. } => ng(x) || ng(gain) || ng(bias),
            Op::Embedding { table, .. } => ng(table),
            Op::Attention { q, k, v, .. } => ng(q) || ng(k) || ng(v),
            Op::Gather { logits, .. } => ng(logits),
        }
    }

    fn leaf_node(&mut self, value: Cow<'a, [f64]>, shape: Vec<usize>, requires_grad: bool) -> Result<Var> {
        if value.len() != numel(&shape) {
            return Err(Error::Dimension {
                op: "leaf",
                detail: format!("{} values for shape {:?}", value.len(), shape),
            });
        }
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("leaf"));
        }
        self.nodes.push(Node { value, shape, op: Op::Leaf, needs_grad: requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor as a leaf; differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed leaf with an explicit gradient flag.
    pub fn param(&mut self, data: &'a [f64], shape: &[usize], requires_grad: bool) -> Result<Var> {
        self.leaf_node(Cow::Borrowed(data), shape.to_vec(), requires_grad)
    }

    /// Owned leaf, e.g. an input or a fixed target.
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<Var> {
        self.leaf_node(Cow::Owned(data), shape.to_vec(), false)
    }

    /// Owned differentiable leaf.
    pub fn variable(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<Var> {
        self.leaf_node(Cow::Owned(data), shape.to_vec(), true)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_parts(n.shape.clone(), n.value.to_vec())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension { op, detail: format!("expected a matrix, got shape {s:?}") }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension { op: "matmul", detail: format!("[{m}×{k}] · [{k2}×{n}]") });
        }
        let value = kernels::matmul(self.value(a), self.value(b), m, k, n);
        self.push(value, vec![m, n], Op::MatMul { a, b, m, k, n }, "matmul")
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_bt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_bt")?;
        if k != k2 {
            return Err(Error::Dimension { op: "matmul_bt", detail: format!("[{m}×{k}] · [{n}×{k2}]ᵀ") });
        }
        let value = kernels::matmul_bt(self.value(a), self.value(b), m, k, n);
        self.push(value, vec![m, n], Op::MatMulBt { a, b, m, k, n }, "matmul_bt")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(value, self.shape(a).to_vec(), Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push(value, self.shape(a).to_vec(), Op::Sub { a, b }, "sub")
    }

    /// Adds a length-`n` row to every row of an `[m×n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.matrix_dims(a, "add_row")?;
        if self.shape(row) != [n] {
            return Err(Error::Dimension { op: "add_row", detail: format!("row {:?} for width {n}", self.shape(row)) });
        }
        let r = self.value(row);
        let value = self.value(a).chunks_exact(n).flat_map(|x| x.iter().zip(r).map(|(x, y)| x + y)).collect();
        self.push(value, self.shape(a).to_vec(), Op::AddRow { a, row, n }, "add_row")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(value, self.shape(a).to_vec(), Op::Mul { a, b }, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).iter().map(|x| c * x).collect();
        self.push(value, self.shape(a).to_vec(), Op::Scale { a, c }, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x + c).collect();
        self.push(value, self.shape(a).to_vec(), Op::AddScalar { a }, "add_scalar")
    }

    /// Element-wise function application.
    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let x = self.value(a);
        match kind {
            Unary::Log => {
                if let Some(bad) = x.iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain { op: "log", detail: format!("non-positive input {bad}") });
                }
            }
            Unary::Pow(p) if p.fract() != 0.0 => {
                if let Some(bad) = x.iter().find(|&&v| v < 0.0) {
                    return Err(Error::Domain { op: "pow", detail: format!("negative base {bad} with exponent {p}") });
                }
            }
            _ => {}
        }
        let value = x.iter().map(|&v| kind.apply(v)).collect();
        self.push(value, self.shape(a).to_vec(), Op::Unary { a, kind }, kind.name())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push(vec![s], vec![1], Op::Sum { a }, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s = self.value(a).iter().sum::<f64>() / n as f64;
        self.push(vec![s], vec![1], Op::Mean { a }, "mean")
    }

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (_, cols) = self.matrix_dims(x, "layer_norm")?;
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return Err(Error::Dimension { op: "layer_norm", detail: format!("affine params for width {cols}") });
        }
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = Vec::with_capacity(self.value(x).len());
        let mut xhat = Vec::with_capacity(self.value(x).len());
        let mut rstd = Vec::new();
        for row in self.value(x).chunks_exact(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::LayerNorm { x, gain, bias, cols, xhat, rstd }, "layer_norm")
    }

    /// Row lookup: output row `t` is `table[ids[t]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Index(format!("embedding id {bad} >= {rows}")));
        }
        let t = self.value(table);
        let value = ids.iter().flat_map(|&i| t[i * cols..(i + 1) * cols].iter().copied()).collect();
        self.push(value, vec![ids.len(), cols], Op::Embedding { table, ids: ids.to_vec(), cols }, "embedding")
    }

    /// Causal multi-head scaled dot-product attention over `[t×d]` inputs.
    ///
    /// Position `i` attends to positions `0..=i` only; masked positions are
    /// skipped rather than weighted by zero.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (t, d) = self.matrix_dims(q, "attention")?;
        if self.shape(k) != [t, d] || self.shape(v) != [t, d] {
            return Err(Error::Dimension { op: "attention", detail: "q, k, v must share a shape".into() });
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Dimension { op: "attention", detail: format!("width {d} not divisible by {heads} heads") });
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; heads * t * t];
        let mut out = vec![0.0; t * d];
        let mut scores = vec![0.0; t];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..t {
                let qi = &qv[i * d + off..i * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let kj = &kv[j * d + off..j * d + off + dh];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    scores[j] = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for s in &mut scores[..=i] {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let prow = &mut probs[(h * t + i) * t..(h * t + i) * t + t];
                let orow = &mut out[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    let p = scores[j] / sum;
                    prow[j] = p;
                    let vj = &vv[j * d + off..j * d + off + dh];
                    for (o, &x) in orow.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
        self.push(out, vec![t, d], Op::Attention { q, k, v, t, d, heads, probs }, "attention")
    }

    /// Log-softmax of selected logit rows, gathered at target columns.
    ///
    /// Output element `i` is `log softmax(logits[rows[i]])[targets[i]]`.
    pub fn log_softmax_gather(&mut self, logits: Var, rows: &[usize], targets: &[usize]) -> Result<Var> {
        let (r, cols) = self.matrix_dims(logits, "log_softmax_gather")?;
        if rows.len() != targets.len() {
            return Err(Error::Dimension { op: "log_softmax_gather", detail: "rows/targets length differ".into() });
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("row {bad} >= {r}")));
        }
        if let Some(&bad) = targets.iter().find(|&&i| i >= cols) {
            return Err(Error::Index(format!("target id {bad} >= vocabulary {cols}")));
        }
        let x = self.value(logits);
        let mut out = Vec::with_capacity(rows.len());
        let mut probs = Vec::with_capacity(rows.len() * cols);
        for (&row, &tgt) in rows.iter().zip(targets) {
            let xr = &x[row * cols..(row + 1) * cols];
            let lse = kernels::log_sum_exp(xr);
            out.push(xr[tgt] - lse);
            probs.extend(xr.iter().map(|v| (v - lse).exp()));
        }
        let n = rows.len();
        let op = Op::Gather { logits, rows: rows.to_vec(), targets: targets.to_vec(), cols, probs };
        self.push(out, vec![n], op, "log_softmax_gather")
    }

    /// Mean negative log-probability of `targets[t]` under row `t` of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, _) = self.matrix_dims(logits, "softmax_cross_entropy")?;
        if targets.len() != r {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                detail: format!("{} targets for {r} rows", targets.len()),
            });
        }
        let rows: Vec<usize> = (0..r).collect();
        let lp = self.log_softmax_gather(logits, &rows, targets)?;
        let m = self.mean(lp)?;
        self.scale(m, -1.0)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.nodes[i].grad {
                    Some(acc) => add_into(acc, &g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => add_into(acc, &contrib),
                slot => *slot = Some(contrib),
            }
        };
        let ng = |v: &Var| nodes[v.0].needs_grad;
        let val = |v: &Var| -> &[f64] { &nodes[v.0].value };

        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::MatMul { a, b, m, k, n } => {
                if ng(a) {
                    send(*a, kernels::matmul_bt(g, val(b), *m, *n, *k));
                }
                if ng(b) {
                    send(*b, kernels::matmul_at_b(val(a), g, *m, *k, *n));
                }
            }
            Op::MatMulBt { a, b, m, k, n } => {
                if ng(a) {
                    send(*a, kernels::matmul(g, val(b), *m, *n, *k));
                }
                if ng(b) {
                    send(*b, kernels::matmul_at_b(g, val(a), *m, *n, *k));
                }
            }
            Op::Add { a, b } => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub { a, b } => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::AddRow { a, row, n } => {
                send(*a, g.to_vec());
                if ng(row) {
                    let mut r = vec![0.0; *n];
                    for chunk in g.chunks_exact(*n) {
                        add_into(&mut r, chunk);
                    }
                    send(*row, r);
                }
            }
            Op::Mul { a, b } => {
                if ng(a) {
                    send(*a, g.iter().zip(val(b)).map(|(g, y)| g * y).collect());
                }
                if ng(b) {
                    send(*b, g.iter().zip(val(a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale { a, c } => send(*a, g.iter().map(|x| c * x).collect()),
            Op::AddScalar { a } => send(*a, g.to_vec()),
            Op::Unary { a, kind } => {
                let y = &nodes[i].value;
                let d = g
                    .iter()
                    .zip(val(a))
                    .zip(y.iter())
                    .map(|((g, &x), &y)| g * kind.derivative(x, y))
                    .collect();
                send(*a, d);
            }
            Op::Sum { a } => send(*a, vec![g[0]; val(a).len()]),
            Op::Mean { a } => {
                let n = val(a).len();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::LayerNorm { x, gain, bias, cols, xhat, rstd } => {
                let cols = *cols;
                let gv = val(gain);
                if ng(gain) || ng(bias) {
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for (grow, hrow) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for j in 0..cols {
                            dg[j] += grow[j] * hrow[j];
                            db[j] += grow[j];
                        }
                    }
                    send(*gain, dg);
                    send(*bias, db);
                }
                if ng(x) {
                    let mut dx = Vec::with_capacity(g.len());
                    for ((grow, hrow), r) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)).zip(rstd) {
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..cols {
                            let dh = grow[j] * gv[j];
                            mean_d += dh;
                            mean_dh += dh * hrow[j];
                        }
                        mean_d /= cols as f64;
                        mean_dh /= cols as f64;
                        for j in 0..cols {
                            let dh = grow[j] * gv[j];
                            dx.push(r * (dh - mean_d - hrow[j] * mean_dh));
                        }
                    }
                    send(*x, dx);
                }
            }
            Op::Embedding { table, ids, cols } => {
                let mut d = vec![0.0; val(table).len()];
                for (t, &id) in ids.iter().enumerate() {
                    add_into(&mut d[id * cols..(id + 1) * cols], &g[t * cols..(t + 1) * cols]);
                }
                send(*table, d);
            }
            Op::Attention { q, k, v, t, d, heads, probs } => {
                let (t, d, heads) = (*t, *d, *heads);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (val(q), val(k), val(v));
                let mut dq = vec![0.0; t * d];
                let mut dk = vec![0.0; t * d];
                let mut dv = vec![0.0; t * d];
                let mut dp = vec![0.0; t];
                for h in 0..heads {
                    let off = h * dh;
                    for i in 0..t {
                        let prow = &probs[(h * t + i) * t..(h * t + i) * t + t];
                        let gi = &g[i * d + off..i * d + off + dh];
                        let mut dot = 0.0;
                        for j in 0..=i {
                            let vj = &vv[j * d + off..j * d + off + dh];
                            dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                            dot += prow[j] * dp[j];
                            let dvj = &mut dv[j * d + off..j * d + off + dh];
                            for (o, &x) in dvj.iter_mut().zip(gi) {
                                *o += prow[j] * x;
                            }
                        }
                        for j in 0..=i {
                            let ds = prow[j] * (dp[j] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            for c in 0..dh {
                                dq[i * d + off + c] += ds * kv[j * d + off + c];
                                dk[j * d + off + c] += ds * qv[i * d + off + c];
                            }
                        }
                    }
                }
                send(*q, dq);
                send(*k, dk);
                send(*v, dv);
            }
            Op::Gather { logits, rows, targets, cols, probs } => {
                let cols = *cols;
                let mut d = vec![0.0; val(logits).len()];
                for (idx, (&row, &tgt)) in rows.iter().zip(targets).enumerate() {
                    let p = &probs[idx * cols..(idx + 1) * cols];
                    let drow = &mut d[row * cols..(row + 1) * cols];
                    for (dj, &pj) in drow.iter_mut().zip(p) {
                        *dj -= g[idx] * pj;
                    }
                    drow[tgt] += g[idx];
                }
                send(*logits, d);
            }
        }
    }
}
