//! Decoder-only transformer whose MLP blocks are explicit key-value memories.
//!
//! Each MLP computes `M = f(H·W_Kᵀ)·W_V` with `W_K, W_V ∈ ℝ^{d_ff×d_model}`
//! and no biases, so its output is exactly `Σᵢ mᵢ·vᵢ` where `mᵢ` is the
//! memory coefficient and `vᵢ` (row `i` of `W_V`) the value vector.

mod io;
mod mask;

pub use io::{load_parameters, save_parameters};
pub use mask::{mask_gradients, MaskMode, ParamSelection, Selection, ValueVectorId, ValueVectorMask};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{kernels, Tape, Tensor, Unary, Var};

pub type TokenId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// tanh-approximated GELU.
    #[default]
    Gelu,
    /// `x·σ(x)`.
    Silu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    /// Filled from the tokenizer when left at zero in a config file.
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub nonlinearity: Nonlinearity,
    /// Residual-stream layer whose output RMU steers.
    pub rmu_layer: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            d_ff: 128,
            n_heads: 4,
            vocab_size: 0,
            max_seq_len: 64,
            nonlinearity: Nonlinearity::Gelu,
            rmu_layer: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.n_layers == 0 || self.d_model == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.rmu_layer >= self.n_layers {
            return bad(format!("rmu_layer {} >= n_layers {}", self.rmu_layer, self.n_layers));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout { n_layers: self.n_layers, n_tensors: 2 + PER_LAYER * self.n_layers + 3 }
    }

    pub fn n_value_vectors(&self) -> usize {
        self.n_layers * self.d_ff
    }
}

const PER_LAYER: usize = 10;

/// Positions of the named tensors in [`Parameters::tensors`].
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    n_layers: usize,
    pub n_tensors: usize,
}

impl Layout {
    pub const TOKEN_EMBEDDING: usize = 0;
    pub const POSITION_EMBEDDING: usize = 1;

    fn layer(&self, l: usize, slot: usize) -> usize {
        2 + l * PER_LAYER + slot
    }
    pub fn ln1_gain(&self, l: usize) -> usize {
        self.layer(l, 0)
    }
    pub fn ln1_bias(&self, l: usize) -> usize {
        self.layer(l, 1)
    }
    pub fn attn_query(&self, l: usize) -> usize {
        self.layer(l, 2)
    }
    pub fn attn_key(&self, l: usize) -> usize {
        self.layer(l, 3)
    }
    pub fn attn_value(&self, l: usize) -> usize {
        self.layer(l, 4)
    }
    pub fn attn_out(&self, l: usize) -> usize {
        self.layer(l, 5)
    }
    pub fn ln2_gain(&self, l: usize) -> usize {
        self.layer(l, 6)
    }
    pub fn ln2_bias(&self, l: usize) -> usize {
        self.layer(l, 7)
    }
    /// `W_K` of layer `l`, shape `[d_ff × d_model]`.
    pub fn mlp_key(&self, l: usize) -> usize {
        self.layer(l, 8)
    }
    /// `W_V` of layer `l`, shape `[d_ff × d_model]`; rows are value vectors.
    pub fn mlp_value(&self, l: usize) -> usize {
        self.layer(l, 9)
    }
    pub fn final_gain(&self) -> usize {
        2 + PER_LAYER * self.n_layers
    }
    pub fn final_bias(&self) -> usize {
        self.final_gain() + 1
    }
    pub fn unembedding(&self) -> usize {
        self.final_gain() + 2
    }
}

fn tensor_specs(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (c.d_model, c.d_ff);
    let mut specs = vec![
        ("token_embedding".to_string(), vec![c.vocab_size, d]),
        ("position_embedding".to_string(), vec![c.max_seq_len, d]),
    ];
    for l in 0..c.n_layers {
        for (name, shape) in [
            ("ln1.gain", vec![d]),
            ("ln1.bias", vec![d]),
            ("attn.query", vec![d, d]),
            ("attn.key", vec![d, d]),
            ("attn.value", vec![d, d]),
            ("attn.out", vec![d, d]),
            ("ln2.gain", vec![d]),
            ("ln2.bias", vec![d]),
            ("mlp.key", vec![f, d]),
            ("mlp.value", vec![f, d]),
        ] {
            specs.push((format!("layer{l}.{name}"), shape));
        }
    }
    specs.push(("final.gain".into(), vec![d]));
    specs.push(("final.bias".into(), vec![d]));
    specs.push(("unembedding".into(), vec![d, c.vocab_size]));
    specs
}

/// A full set of model weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

const LN_EPS: f64 = 1e-5;

impl Parameters {
    /// GPT-2 style initialization: N(0, 0.02) weights, residual projections
    /// scaled by `1/√(2L)`, unit layer-norm gains.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(rng::derive_labeled(config.seed, "init"));
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let resid = Normal::new(0.0, resid_std).expect("valid std");
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in tensor_specs(config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".gain") {
                vec![1.0; n]
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else if name.ends_with("attn.out") || name.ends_with("mlp.value") {
                (0..n).map(|_| resid.sample(&mut rng)).collect()
            } else {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            names.push(name);
            tensors.push(Tensor::from_parts(shape, data));
        }
        Ok(Self { config: config.clone(), names, tensors })
    }

    pub(crate) fn from_tensors(config: ModelConfig, names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(&config);
        if specs.len() != tensors.len() || names.len() != tensors.len() {
            return Err(Error::Contract(format!("expected {} tensors, got {}", specs.len(), tensors.len())));
        }
        for ((name, shape), (n, t)) in specs.iter().zip(names.iter().zip(&tensors)) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Contract(format!("tensor {n} {:?} does not match {name} {shape:?}", t.shape())));
            }
        }
        Ok(Self { config, names, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn value_vector(&self, id: ValueVectorId) -> &[f64] {
        let d = self.config.d_model;
        let w = self.tensors[self.layout().mlp_value(id.layer)].data();
        &w[id.index * d..(id.index + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    fn check_compatible(&self, other: &Parameters) -> Result<()> {
        let same = ModelConfig { seed: 0, ..self.config.clone() } == ModelConfig { seed: 0, ..other.config.clone() };
        if !same {
            return Err(Error::Contract("parameter sets have different architectures".into()));
        }
        Ok(())
    }

    /// Registers every tensor on `tape`; tensors touched by `selection`
    /// are differentiable.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, selection: Option<&ParamSelection>) -> Result<Vec<Var>> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(t.data(), t.shape(), selection.is_some_and(|s| s.touches(i))))
            .collect()
    }
}

/// Gradients aligned with [`Parameters::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &Parameters) -> Self {
        Self { tensors: params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect() }
    }

    /// Collects leaf gradients after a backward pass; absent entries are zero.
    pub fn from_tape(params: &Parameters, tape: &mut Tape<'_>, vars: &[Var]) -> Self {
        let tensors = params
            .tensors
            .iter()
            .zip(vars)
            .map(|(t, v)| tape.take_grad(*v).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        Self { tensors }
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tensors[i]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.tensors.iter_mut().flatten().for_each(|x| *x *= c);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Per-layer MLP internals of one forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Memory coefficients `m = f(H·W_Kᵀ)`, `[T × d_ff]`.
    pub coefficients: Tensor,
    /// MLP output `M = m·W_V`, `[T × d_model]`.
    pub mlp_out: Tensor,
    /// Residual stream after the layer, `[T × d_model]`.
    pub hidden: Tensor,
}

#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub layers: Vec<LayerTrace>,
}

/// Tape handles for one layer's internals.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub coefficients: Var,
    pub mlp_out: Var,
    pub hidden: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[T × vocab]`; row `t` scores the token following position `t`.
    pub logits: Var,
    pub layers: Vec<LayerVars>,
}

fn check_tokens(config: &ModelConfig, tokens: &[TokenId]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Contract("forward needs at least one token".into()));
    }
    if tokens.len() > config.max_seq_len {
        return Err(Error::Contract(format!(
            "{} tokens exceed max sequence length {}",
            tokens.len(),
            config.max_seq_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::Index(format!("token id {bad} >= vocabulary {}", config.vocab_size)));
    }
    Ok(())
}

/// Records a causal forward pass of `tokens` on `tape`.
pub fn forward_on_tape<'a>(
    tape: &mut Tape<'a>,
    params: &'a Parameters,
    vars: &[Var],
    tokens: &[TokenId],
) -> Result<ForwardVars> {
    let c = params.config();
    check_tokens(c, tokens)?;
    let lay = c.layout();
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..tokens.len()).collect();

    let tok = tape.embedding(vars[Layout::TOKEN_EMBEDDING], &ids)?;
    let pos = tape.embedding(vars[Layout::POSITION_EMBEDDING], &positions)?;
    let mut x = tape.add(tok, pos)?;
    let mut layers = Vec::with_capacity(c.n_layers);
    for l in 0..c.n_layers {
        let a = tape.layer_norm(x, vars[lay.ln1_gain(l)], vars[lay.ln1_bias(l)], LN_EPS)?;
        let q = tape.matmul(a, vars[lay.attn_query(l)])?;
        let k = tape.matmul(a, vars[lay.attn_key(l)])?;
        let v = tape.matmul(a, vars[lay.attn_value(l)])?;
        let att = tape.causal_attention(q, k, v, c.n_heads)?;
        let o = tape.matmul(att, vars[lay.attn_out(l)])?;
        x = tape.add(x, o)?;

        let b = tape.layer_norm(x, vars[lay.ln2_gain(l)], vars[lay.ln2_bias(l)], LN_EPS)?;
        let pre = tape.matmul_bt(b, vars[lay.mlp_key(l)])?;
        let m = match c.nonlinearity {
            Nonlinearity::Gelu => tape.unary(Unary::Gelu, pre)?,
            Nonlinearity::Silu => {
                let s = tape.unary(Unary::Sigmoid, pre)?;
                tape.mul(pre, s)?
            }
        };
        let mlp_out = tape.matmul(m, vars[lay.mlp_value(l)])?;
        x = tape.add(x, mlp_out)?;
        layers.push(LayerVars { coefficients: m, mlp_out, hidden: x });
    }
    let h = tape.layer_norm(x, vars[lay.final_gain()], vars[lay.final_bias()], LN_EPS)?;
    let logits = tape.matmul(h, vars[lay.unembedding()])?;
    Ok(ForwardVars { logits, layers })
}

/// Logits `[T × vocab]` and, on request, the MLP trace.
pub fn forward(params: &Parameters, tokens: &[TokenId], want_trace: bool) -> Result<(Tensor, Option<MlpTrace>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, None)?;
    let out = forward_on_tape(&mut tape, params, &vars, tokens)?;
    let trace = want_trace.then(|| MlpTrace {
        layers: out
            .layers
            .iter()
            .map(|lv| LayerTrace {
                coefficients: tape.to_tensor(lv.coefficients),
                mlp_out: tape.to_tensor(lv.mlp_out),
                hidden: tape.to_tensor(lv.hidden),
            })
            .collect(),
    });
    Ok((tape.to_tensor(out.logits), trace))
}

/// Greedy continuation of `prefix` by `n_steps` tokens (ties → lowest id).
pub fn greedy_decode(params: &Parameters, prefix: &[TokenId], n_steps: usize) -> Result<Vec<TokenId>> {
    if n_steps == 0 {
        return Ok(Vec::new());
    }
    let c = params.config();
    if prefix.len() + n_steps - 1 > c.max_seq_len {
        return Err(Error::Contract(format!(
            "decoding {n_steps} steps after {} tokens exceeds max sequence length {}",
            prefix.len(),
            c.max_seq_len
        )));
    }
    let mut seq = prefix.to_vec();
    let v = c.vocab_size;
    for _ in 0..n_steps {
        let (logits, _) = forward(params, &seq, false)?;
        let last = &logits.data()[(seq.len() - 1) * v..seq.len() * v];
        seq.push(kernels::argmax(last) as TokenId);
    }
    Ok(seq.split_off(prefix.len()))
}

/// Parameter-wise `(1 − α)·θ_o + α·θ`; the endpoints return exact copies.
pub fn mix(original: &Parameters, unlearned: &Parameters, alpha: f64) -> Result<Parameters> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("mixing coefficient {alpha} outside [0, 1]")));
    }
    original.check_compatible(unlearned)?;
    if alpha == 0.0 {
        return Ok(original.clone());
    }
    if alpha == 1.0 {
        return Ok(unlearned.clone());
    }
    let mut out = original.clone();
    for (t, u) in out.tensors.iter_mut().zip(&unlearned.tensors) {
        for (a, b) in t.data_mut().iter_mut().zip(u.data()) {
            *a = (1.0 - alpha) * *a + alpha * b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig { n_layers: 2, d_model: 8, d_ff: 6, n_heads: 2, vocab_size: 11, max_seq_len: 12, rmu_layer: 1, seed: 3, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        assert!(c.validate().is_ok());
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.rmu_layer = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn trace_reconstructs_mlp_output() {
        let p = Parameters::init(&tiny_config()).unwrap();
        let (_, trace) = forward(&p, &[1, 4, 2, 9], true).unwrap();
        let trace = trace.unwrap();
        let d = p.config().d_model;
        let f = p.config().d_ff;
        for (l, lt) in trace.layers.iter().enumerate() {
            for t in 0..4 {
                let m = &lt.coefficients.data()[t * f..(t + 1) * f];
                let direct = &lt.mlp_out.data()[t * d..(t + 1) * d];
                let mut rebuilt = vec![0.0; d];
                for (i, mi) in m.iter().enumerate() {
                    let v = p.value_vector(ValueVectorId::new(l, i));
                    for (r, vj) in rebuilt.iter_mut().zip(v) {
                        *r += mi * vj;
                    }
                }
                for (a, b) in rebuilt.iter().zip(direct) {
                    assert!((a - b).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn zeroed_value_matrix_gives_zero_mlp_output() {
        let mut p = Parameters::init(&tiny_config()).unwrap();
        let idx = p.layout().mlp_value(1);
        p.tensor_mut(idx).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let (_, trace) = forward(&p, &[3, 5, 7], true).unwrap();
        assert!(trace.unwrap().layers[1].mlp_out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_example_of_value_vector_sum() {
        // d_ff = 2, m = (2, −1), v₁ = (1, 0), v₂ = (0, 3) ⇒ M = (2, −3).
        let mut tape = Tape::new();
        let m = tape.constant(vec![2.0, -1.0], &[1, 2]).unwrap();
        let w = tape.constant(vec![1.0, 0.0, 0.0, 3.0], &[2, 2]).unwrap();
        let out = tape.matmul(m, w).unwrap();
        assert_eq!(tape.value(out), &[2.0, -3.0]);
    }

    #[test]
    fn forward_rejects_over_length_input() {
        let p = Parameters::init(&tiny_config()).unwrap();
        let long = vec![1; 13];
        assert!(matches!(forward(&p, &long, false), Err(Error::Contract(_))));
    }

    #[test]
    fn forward_is_pure() {
        let p = Parameters::init(&tiny_config()).unwrap();
        let a = forward(&p, &[1, 2, 3], false).unwrap().0;
        let b = forward(&p, &[1, 2, 3], false).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn prefix_logits_match_longer_pass_bitwise() {
        let p = Parameters::init(&tiny_config()).unwrap();
        let full = forward(&p, &[1, 2, 3, 4, 5], false).unwrap().0;
        let head = forward(&p, &[1, 2, 3], false).unwrap().0;
        assert_eq!(&full.data()[..3 * 11], head.data());
    }

    #[test]
    fn greedy_decode_edge_cases() {
        let p = Parameters::init(&tiny_config()).unwrap();
        assert!(greedy_decode(&p, &[1, 2], 0).unwrap().is_empty());
        assert_eq!(greedy_decode(&p, &[1, 2], 3).unwrap().len(), 3);
        assert!(greedy_decode(&p, &[1; 10], 4).is_err());
    }

    #[test]
    fn greedy_decode_breaks_ties_toward_lowest_id() {
        // All-zero unembedding makes every logit equal.
        let mut p = Parameters::init(&tiny_config()).unwrap();
        let u = p.layout().unembedding();
        p.tensor_mut(u).data_mut().iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(greedy_decode(&p, &[5, 6], 3).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn mix_endpoints_and_midpoint() {
        let c = tiny_config();
        let a = Parameters::init(&c).unwrap();
        let b = Parameters::init(&ModelConfig { seed: 99, ..c.clone() }).unwrap();
        assert_eq!(mix(&a, &b, 0.0).unwrap(), a);
        assert_eq!(mix(&a, &b, 1.0).unwrap(), b);
        let m = mix(&a, &b, 0.3).unwrap();
        for ((x, y), z) in a.tensors().iter().zip(b.tensors()).zip(m.tensors()) {
            for ((x, y), z) in x.data().iter().zip(y.data()).zip(z.data()) {
                assert!((0.7 * x + 0.3 * y - z).abs() <= 1e-15);
            }
        }
        assert!(mix(&a, &b, 1.5).is_err());
        let other = Parameters::init(&ModelConfig { d_ff: 4, ..c }).unwrap();
        assert!(mix(&a, &other, 0.5).is_err());
    }

    #[test]
    fn mix_of_scalars_midpoint() {
        let c = tiny_config();
        let mut a = Parameters::init(&c).unwrap();
        let mut b = a.clone();
        a.tensor_mut(0).data_mut()[0] = 2.0;
        b.tensor_mut(0).data_mut()[0] = 4.0;
        assert_eq!(mix(&a, &b, 0.5).unwrap().tensor(0).data()[0], 3.0);
    }

    #[test]
    fn mask_gradients_cases() {
        let c = tiny_config();
        let p = Parameters::init(&c).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.tensors.iter_mut().flatten().for_each(|v| *v = 1.0);

        let empty = ValueVectorMask::empty(&c, MaskMode::ValueVector);
        let masked = mask_gradients(g.clone(), &empty, &p);
        assert!(masked.tensors().iter().flatten().all(|&v| v == 0.0));

        let full = ValueVectorMask::full(&c, MaskMode::ValueVector);
        let masked = mask_gradients(g.clone(), &full, &p);
        for l in 0..c.n_layers {
            let i = c.layout().mlp_value(l);
            assert_eq!(masked.tensor(i), g.tensor(i));
        }

        let one = ValueVectorMask::from_vectors(&c, [ValueVectorId::new(0, 3)]).unwrap();
        let masked = mask_gradients(g, &one, &p);
        let lay = c.layout();
        for (i, t) in masked.tensors().iter().enumerate() {
            for (j, &v) in t.iter().enumerate() {
                let inside = i == lay.mlp_value(0) && j / c.d_model == 3;
                assert_eq!(v != 0.0, inside, "tensor {i} element {j}");
            }
        }
    }
}
