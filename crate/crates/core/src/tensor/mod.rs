//! Dense `f64` tensors and a reverse-mode autodiff tape.

pub mod kernels;
mod tape;

pub use tape::{Tape, Unary, Var};

use crate::error::{Error, Result};

/// Row-major tensor with an optional accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                detail: format!("{} values for shape {:?}", data.len(), shape),
            });
        }
        Ok(Self::from_parts(shape, data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { shape, data, requires_grad: false, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![1], vec![v])
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the stored gradient.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::Dimension { op: "accumulate_grad", detail: format!("{} vs {}", g.len(), self.data.len()) });
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    const EPS: f64 = 1e-5;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale < 1e-12 {
            diff
        } else {
            diff / scale
        }
    }

    /// Checks the tape gradient of `f` at `inputs` against central differences.
    fn fd_check<F>(inputs: &[(Vec<f64>, Vec<usize>)], f: F) -> f64
    where
        F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::checked();
        let vars: Vec<Var> = inputs.iter().map(|(d, s)| tape.variable(d.clone(), s).unwrap()).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.backward(out).unwrap();
        let analytic: Vec<f64> = vars.iter().flat_map(|v| tape.grad(*v).unwrap().to_vec()).collect();

        let eval = |vals: &[(Vec<f64>, Vec<usize>)]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = vals.iter().map(|(d, s)| t.constant(d.clone(), s).unwrap()).collect();
            let o = f(&mut t, &vs).unwrap();
            t.scalar(o)
        };
        let mut numeric = Vec::new();
        for (which, (data, _)) in inputs.iter().enumerate() {
            for j in 0..data.len() {
                let mut plus = inputs.to_vec();
                plus[which].0[j] += EPS;
                let mut minus = inputs.to_vec();
                minus[which].0[j] -= EPS;
                numeric.push((eval(&plus) - eval(&minus)) / (2.0 * EPS));
            }
        }
        rel_err(&analytic, &numeric)
    }

    fn rand_vec(rng: &mut crate::rng::Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    /// Reduces a tensor to a scalar with random weights so every element matters.
    fn weighted_sum(t: &mut Tape<'_>, x: Var, w: &[f64]) -> Result<Var> {
        let c = t.constant(w.to_vec(), &t.shape(x).to_vec())?;
        let p = t.mul(x, c)?;
        t.sum(p)
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut t = Tape::new();
        let i2 = t.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let m = t.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let y = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(y), &[1.0, 2.0, 3.0, 4.0]);
        let p = t.constant(vec![1.0, 0.0, 0.0, 0.0], &[2, 2]).unwrap();
        let n = t.constant(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        let y = t.matmul(p, n).unwrap();
        assert_eq!(t.value(y), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.constant(vec![0.0; 6], &[2, 3]).unwrap();
        let b = t.constant(vec![0.0; 6], &[2, 3]).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn scalar_elementwise_values() {
        let mut t = Tape::new();
        let z = t.constant(vec![0.0], &[1]).unwrap();
        let s = t.unary(Unary::Sigmoid, z).unwrap();
        assert_eq!(t.scalar(s), 0.5);
        let h = t.constant(vec![0.5], &[1]).unwrap();
        let p = t.unary(Unary::Pow(0.1), h).unwrap();
        assert!((t.scalar(p) - 0.933_032_991_5).abs() < 1e-10);
    }

    #[test]
    fn log_of_non_positive_is_a_domain_error() {
        let mut t = Tape::new();
        let x = t.constant(vec![1.0, 0.0], &[2]).unwrap();
        assert!(matches!(t.unary(Unary::Log, x), Err(Error::Domain { .. })));
    }

    #[test]
    fn gelu_gradient_matches_central_difference() {
        let x = 1.0;
        let fd = (kernels::gelu(x + EPS) - kernels::gelu(x - EPS)) / (2.0 * EPS);
        let an = kernels::gelu_grad(x);
        assert!(((an - fd) / fd).abs() <= 1e-6);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut t = Tape::new();
        let l = t.constant(vec![0.0; 4], &[1, 4]).unwrap();
        let ce = t.softmax_cross_entropy(l, &[2]).unwrap();
        assert!((t.scalar(ce) - 4f64.ln()).abs() < 1e-12);

        let l = t.constant(vec![0.0, 1000.0, 0.0], &[1, 3]).unwrap();
        let ce = t.softmax_cross_entropy(l, &[1]).unwrap();
        assert!(t.scalar(ce).abs() < 1e-12);

        let l = t.constant(vec![0.0; 3], &[1, 3]).unwrap();
        assert!(matches!(t.softmax_cross_entropy(l, &[3]), Err(Error::Index(_))));
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp_oracle() {
        let mut rng = seeded(11);
        let logits = rand_vec(&mut rng, 10, -3.0, 3.0);
        let targets = [4usize, 1];
        let mut oracle = 0.0;
        for (r, &tg) in targets.iter().enumerate() {
            let row = &logits[r * 5..(r + 1) * 5];
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            oracle += lse - row[tg];
        }
        oracle /= 2.0;
        let mut t = Tape::new();
        let l = t.constant(logits, &[2, 5]).unwrap();
        let ce = t.softmax_cross_entropy(l, &targets).unwrap();
        assert!((t.scalar(ce) - oracle).abs() <= 1e-10);
    }

    #[test]
    fn backward_basics() {
        let mut t = Tape::new();
        let x = t.variable(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.variable(vec![3.0], &[1]).unwrap();
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
        // Repeated calls accumulate.
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[12.0]);
        t.zero_grad();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let x = t.variable(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn checked_tape_rejects_non_finite() {
        let mut t = Tape::checked();
        let x = t.constant(vec![1000.0], &[1]).unwrap();
        assert!(matches!(t.unary(Unary::Exp, x), Err(Error::NonFinite(_))));
    }

    // Randomized finite-difference checks: 100 random points per primitive.

    #[test]
    fn fd_unary_primitives() {
        let kinds = [
            (Unary::Gelu, -3.0, 3.0),
            (Unary::Sigmoid, -4.0, 4.0),
            (Unary::Log, 0.2, 3.0),
            (Unary::Exp, -2.0, 2.0),
            (Unary::Pow(0.1), 0.2, 2.0),
            (Unary::Pow(2.5), 0.2, 2.0),
            (Unary::Abs, 0.1, 2.0),
            (Unary::Neg, -2.0, 2.0),
            (Unary::LogSigmoid, -6.0, 6.0),
        ];
        let mut rng = seeded(21);
        for (kind, lo, hi) in kinds {
            for _ in 0..100 {
                let mut x = rand_vec(&mut rng, 3, lo, hi);
                if kind == Unary::Abs {
                    let sign = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
                    x.iter_mut().for_each(|v| *v *= sign);
                }
                let w = rand_vec(&mut rng, 3, -1.0, 1.0);
                let err = fd_check(&[(x, vec![3])], |t, v| {
                    let y = t.unary(kind, v[0])?;
                    weighted_sum(t, y, &w)
                });
                assert!(err <= 1e-4, "{kind:?}: rel err {err}");
            }
        }
    }

    #[test]
    fn fd_binary_and_reduction_primitives() {
        let mut rng = seeded(22);
        for _ in 0..100 {
            let a = rand_vec(&mut rng, 6, -1.0, 1.0);
            let b = rand_vec(&mut rng, 6, -1.0, 1.0);
            let r = rand_vec(&mut rng, 3, -1.0, 1.0);
            let w = rand_vec(&mut rng, 6, -1.0, 1.0);
            let c = rng.random_range(-2.0..2.0);
            let inputs = [(a.clone(), vec![2, 3]), (b.clone(), vec![2, 3])];
            let e = fd_check(&inputs, |t, v| {
                let s = t.add(v[0], v[1])?;
                let d = t.sub(s, v[1])?;
                let d = t.sub(d, v[1])?;
                let m = t.mul(d, v[0])?;
                let m = t.scale(m, c)?;
                let m = t.add_scalar(m, c)?;
                weighted_sum(t, m, &w)
            });
            assert!(e <= 1e-4, "add/sub/mul/scale: {e}");
            let e = fd_check(&[(a.clone(), vec![2, 3]), (r.clone(), vec![3])], |t, v| {
                let y = t.add_row(v[0], v[1])?;
                let y = t.mul(y, y)?;
                t.mean(y)
            });
            assert!(e <= 1e-4, "add_row/mean: {e}");
        }
    }

    #[test]
    fn fd_matmul_primitives() {
        let mut rng = seeded(23);
        for _ in 0..100 {
            let a = rand_vec(&mut rng, 12, -1.0, 1.0);
            let b = rand_vec(&mut rng, 8, -1.0, 1.0);
            let bt = rand_vec(&mut rng, 8, -1.0, 1.0);
            let w = rand_vec(&mut rng, 6, -1.0, 1.0);
            let e = fd_check(&[(a.clone(), vec![3, 4]), (b, vec![4, 2])], |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y, &w)
            });
            assert!(e <= 1e-4, "matmul: {e}");
            let e = fd_check(&[(a, vec![3, 4]), (bt, vec![2, 4])], |t, v| {
                let y = t.matmul_bt(v[0], v[1])?;
                weighted_sum(t, y, &w)
            });
            assert!(e <= 1e-4, "matmul_bt: {e}");
        }
    }

    #[test]
    fn fd_layer_norm_embedding_gather() {
        let mut rng = seeded(24);
        for _ in 0..100 {
            let x = rand_vec(&mut rng, 12, -2.0, 2.0);
            let g = rand_vec(&mut rng, 4, 0.5, 1.5);
            let b = rand_vec(&mut rng, 4, -0.5, 0.5);
            let w = rand_vec(&mut rng, 12, -1.0, 1.0);
            let e = fd_check(&[(x, vec![3, 4]), (g, vec![4]), (b, vec![4])], |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(t, y, &w)
            });
            assert!(e <= 1e-4, "layer_norm: {e}");

            let table = rand_vec(&mut rng, 15, -1.0, 1.0);
            let ids: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            let w4 = rand_vec(&mut rng, 12, -1.0, 1.0);
            let e = fd_check(&[(table, vec![5, 3])], |t, v| {
                let y = t.embedding(v[0], &ids)?;
                weighted_sum(t, y, &w4)
            });
            assert!(e <= 1e-4, "embedding: {e}");

            let logits = rand_vec(&mut rng, 15, -3.0, 3.0);
            let rows = [0usize, 2, 2];
            let targets: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
            let w3 = rand_vec(&mut rng, 3, -1.0, 1.0);
            let e = fd_check(&[(logits, vec![3, 5])], |t, v| {
                let y = t.log_softmax_gather(v[0], &rows, &targets)?;
                weighted_sum(t, y, &w3)
            });
            assert!(e <= 1e-4, "log_softmax_gather: {e}");
        }
    }

    #[test]
    fn fd_causal_attention() {
        let mut rng = seeded(25);
        for _ in 0..100 {
            let q = rand_vec(&mut rng, 16, -1.0, 1.0);
            let k = rand_vec(&mut rng, 16, -1.0, 1.0);
            let v = rand_vec(&mut rng, 16, -1.0, 1.0);
            let w = rand_vec(&mut rng, 16, -1.0, 1.0);
            let e = fd_check(&[(q, vec![4, 4]), (k, vec![4, 4]), (v, vec![4, 4])], |t, vs| {
                let y = t.causal_attention(vs[0], vs[1], vs[2], 2)?;
                weighted_sum(t, y, &w)
            });
            assert!(e <= 1e-4, "attention: {e}");
        }
    }

    #[test]
    fn attention_is_causal() {
        let mut rng = seeded(26);
        let q = rand_vec(&mut rng, 12, -1.0, 1.0);
        let k = rand_vec(&mut rng, 12, -1.0, 1.0);
        let mut v = rand_vec(&mut rng, 12, -1.0, 1.0);
        let mut t = Tape::new();
        let (qa, ka, va) = (
            t.constant(q.clone(), &[3, 4]).unwrap(),
            t.constant(k.clone(), &[3, 4]).unwrap(),
            t.constant(v.clone(), &[3, 4]).unwrap(),
        );
        let y1 = t.causal_attention(qa, ka, va, 2).unwrap();
        let before = t.value(y1)[..8].to_vec();
        // Changing the last position's value leaves earlier outputs untouched.
        v[8..].iter_mut().for_each(|x| *x += 5.0);
        let mut t2 = Tape::new();
        let (qb, kb, vb) = (
            t2.constant(q, &[3, 4]).unwrap(),
            t2.constant(k, &[3, 4]).unwrap(),
            t2.constant(v, &[3, 4]).unwrap(),
        );
        let y2 = t2.causal_attention(qb, kb, vb, 2).unwrap();
        assert_eq!(&t2.value(y2)[..8], &before[..]);
    }

    #[test]
    fn identical_op_sequences_are_bit_identical() {
        let run = || {
            let mut rng = seeded(27);
            let a = rand_vec(&mut rng, 20, -1.0, 1.0);
            let mut t = Tape::new();
            let x = t.variable(a, &[4, 5]).unwrap();
            let y = t.matmul_bt(x, x).unwrap();
            let z = t.unary(Unary::Gelu, y).unwrap();
            let s = t.mean(z).unwrap();
            t.backward(s).unwrap();
            (t.scalar(s), t.grad(x).unwrap().to_vec())
        };
        assert_eq!(run(), run());
    }
}
