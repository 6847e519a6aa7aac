//! Training and unlearning losses.
//!
//! Every loss is a weighted sum of per-sequence terms. Each term is recorded
//! on its own tape, so terms are evaluated in parallel and their gradients
//! summed in a fixed order.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedRecord, Example};
use crate::error::{Error, Result};
use crate::model::{forward, forward_on_tape, Gradients, ModelConfig, ParamSelection, Parameters, TokenId};
use crate::rng;
use crate::tensor::{Tape, Tensor, Unary, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Wga,
    Npo,
    Dpo,
    Rmu,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Wga, Objective::Npo, Objective::Dpo, Objective::Rmu];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Wga => "wga",
            Objective::Npo => "npo",
            Objective::Dpo => "dpo",
            Objective::Rmu => "rmu",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub wga_alpha: f64,
    pub npo_beta: f64,
    pub dpo_beta: f64,
    /// Overrides the model's `rmu_layer` when set.
    pub rmu_layer: Option<usize>,
    pub rmu_scale: f64,
    /// Seed of the fixed RMU steering direction.
    pub rmu_seed: u64,
    /// Weight of the retain NLL term during forget injection.
    pub lambda_retain: f64,
    /// Weight of the retain-input term of the distillation loss.
    pub l2_alpha: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            wga_alpha: 0.1,
            npo_beta: 0.5,
            dpo_beta: 0.5,
            rmu_layer: None,
            rmu_scale: 2.0,
            rmu_seed: 0,
            lambda_retain: 2.0,
            l2_alpha: 2.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(m.to_string()));
        if !(self.npo_beta > 0.0 && self.dpo_beta > 0.0) {
            return bad("betas must be positive");
        }
        if !(self.rmu_scale > 0.0) {
            return bad("rmu_scale must be positive");
        }
        if !(self.wga_alpha >= 0.0) {
            return bad("wga_alpha must be non-negative");
        }
        if !(self.lambda_retain >= 0.0 && self.l2_alpha >= 0.0) {
            return bad("retain weights must be non-negative");
        }
        if self.rmu_layer(model) >= model.n_layers {
            return bad("rmu_layer outside the model");
        }
        Ok(())
    }

    pub fn rmu_layer(&self, model: &ModelConfig) -> usize {
        self.rmu_layer.unwrap_or(model.rmu_layer)
    }
}

/// Unit vector drawn once from `U[0,1)^d` and normalized.
pub fn rmu_direction(d_model: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::seeded(rng::derive_labeled(seed, "rmu-direction"));
    let mut u: Vec<f64> = (0..d_model).map(|_| rng.random::<f64>()).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= norm);
    u
}

/// Preferred (refusal) and dispreferred (original) answers to one prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DpoPair {
    pub win: Example,
    pub lose: Example,
}

impl DpoPair {
    pub fn from_record(r: &EncodedRecord) -> Result<Self> {
        let idk = r.idk.clone().ok_or_else(|| Error::Contract("record has no refusal answer for DPO".into()))?;
        Ok(Self { win: r.example.with_answer(idk), lose: r.example.clone() })
    }
}

/// One summand family of a loss.
#[derive(Clone, Copy, Debug)]
pub enum Term<'a> {
    /// Token-mean answer NLL.
    Nll(&'a [Example]),
    /// Batch mean of `−Σₜ pₜ^α log pₜ`.
    Wga { batch: &'a [Example], alpha: f64 },
    /// `reference[e]` is the reference model's answer log-probability.
    Npo { batch: &'a [Example], reference: &'a [f64], beta: f64 },
    /// `reference[e]` holds the reference (win, lose) log-probabilities.
    Dpo { pairs: &'a [DpoPair], reference: &'a [(f64, f64)], beta: f64 },
    /// Token mean of `‖h^ℓ − c·u‖²` over whole sequences.
    Rmu { batch: &'a [Example], layer: usize, scale: f64, direction: &'a [f64] },
    /// Token mean of `Σ_ℓ ‖M^ℓ − targets[e][ℓ]‖²` over whole sequences.
    L2 { inputs: &'a [Vec<TokenId>], targets: &'a [Vec<Tensor>] },
}

/// A weighted sum of [`Term`]s.
#[derive(Clone, Debug, Default)]
pub struct Loss<'a> {
    terms: Vec<(f64, Term<'a>)>,
}

enum Unit<'a> {
    Nll(&'a Example),
    Wga(&'a Example, f64),
    Npo(&'a Example, f64, f64),
    Dpo(&'a DpoPair, (f64, f64), f64),
    Rmu(&'a Example, usize, f64, &'a [f64]),
    L2(&'a [TokenId], &'a [Tensor]),
}

impl<'a> Loss<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(term: Term<'a>) -> Self {
        Self::new().with(1.0, term)
    }

    pub fn with(mut self, weight: f64, term: Term<'a>) -> Self {
        self.terms.push((weight, term));
        self
    }

    fn units(&self) -> Result<Vec<(f64, Unit<'a>)>> {
        let mut out = Vec::new();
        for &(w, term) in &self.terms {
            match term {
                Term::Nll(batch) => {
                    let total: usize = batch.iter().map(|e| e.answer.len()).sum();
                    out.extend(batch.iter().map(|e| (w / total as f64, Unit::Nll(e))));
                }
                Term::Wga { batch, alpha } => {
                    let n = batch.len() as f64;
                    out.extend(batch.iter().map(|e| (w / n, Unit::Wga(e, alpha))));
                }
                Term::Npo { batch, reference, beta } => {
                    check_len(batch.len(), reference.len())?;
                    let n = batch.len() as f64;
                    out.extend(batch.iter().zip(reference).map(|(e, &r)| (w / n, Unit::Npo(e, r, beta))));
                }
                Term::Dpo { pairs, reference, beta } => {
                    check_len(pairs.len(), reference.len())?;
                    let n = pairs.len() as f64;
                    out.extend(pairs.iter().zip(reference).map(|(p, &r)| (w / n, Unit::Dpo(p, r, beta))));
                }
                Term::Rmu { batch, layer, scale, direction } => {
                    let total: usize = batch.iter().map(Example::len).sum();
                    out.extend(
                        batch.iter().map(|e| (w / total as f64, Unit::Rmu(e, layer, scale, direction))),
                    );
                }
                Term::L2 { inputs, targets } => {
                    check_len(inputs.len(), targets.len())?;
                    let total: usize = inputs.iter().map(Vec::len).sum();
                    out.extend(
                        inputs
                            .iter()
                            .zip(targets)
                            .map(|(x, t)| (w / total as f64, Unit::L2(x.as_slice(), t.as_slice()))),
                    );
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Contract("loss over an empty batch".into()));
        }
        Ok(out)
    }

    pub fn value(&self, params: &Parameters) -> Result<f64> {
        let units = self.units()?;
        let values = units
            .par_iter()
            .map(|(w, u)| {
                let mut tape = Tape::new();
                let vars = params.register(&mut tape, None)?;
                let v = unit_term(&mut tape, params, &vars, u)?;
                Ok(w * tape.scalar(v))
            })
            .collect::<Result<Vec<f64>>>()?;
        finite(values.iter().sum(), "loss")
    }

    /// Loss value and its gradient with respect to the selected tensors.
    pub fn value_and_grad(&self, params: &Parameters, selection: &ParamSelection) -> Result<(f64, Gradients)> {
        let units = self.units()?;
        let parts = units
            .par_iter()
            .map(|(w, u)| {
                let mut tape = Tape::new();
                let vars = params.register(&mut tape, Some(selection))?;
                let v = unit_term(&mut tape, params, &vars, u)?;
                let s = tape.scale(v, *w)?;
                tape.backward(s)?;
                Ok((tape.scalar(s), Gradients::from_tape(params, &mut tape, &vars)))
            })
            .collect::<Result<Vec<(f64, Gradients)>>>()?;
        let mut total = 0.0;
        let mut grads = Gradients::zeros_like(params);
        for (v, g) in &parts {
            total += v;
            grads.add_assign(g);
        }
        Ok((finite(total, "loss")?, grads))
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { op: "loss", detail: format!("{a} examples but {b} reference entries") });
    }
    Ok(())
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Per-token answer log-probabilities `[|y|]` read from `logits` of `[x, y]`.
pub fn answer_logprobs(tape: &mut Tape<'_>, logits: Var, ex: &Example) -> Result<Var> {
    let rows: Vec<usize> = ex.answer_rows().collect();
    let targets: Vec<usize> = ex.answer.iter().map(|&t| t as usize).collect();
    tape.log_softmax_gather(logits, &rows, &targets)
}

/// `−(2/β)·log σ(−β·(lp − ref))` for a scalar sequence log-probability.
pub fn npo_term(tape: &mut Tape<'_>, seq_logprob: Var, reference: f64, beta: f64) -> Result<Var> {
    let z = tape.scale(seq_logprob, -beta)?;
    let z = tape.add_scalar(z, beta * reference)?;
    let ls = tape.unary(Unary::LogSigmoid, z)?;
    tape.scale(ls, -2.0 / beta)
}

/// `−(1/β)·log σ(β·(Δ_win − Δ_lose))`.
pub fn dpo_term(tape: &mut Tape<'_>, win: Var, lose: Var, reference: (f64, f64), beta: f64) -> Result<Var> {
    let d = tape.sub(win, lose)?;
    let d = tape.add_scalar(d, reference.1 - reference.0)?;
    let z = tape.scale(d, beta)?;
    let ls = tape.unary(Unary::LogSigmoid, z)?;
    tape.scale(ls, -1.0 / beta)
}

fn sequence_logprob<'a>(tape: &mut Tape<'a>, params: &'a Parameters, vars: &[Var], ex: &Example) -> Result<Var> {
    let out = forward_on_tape(tape, params, vars, &ex.sequence())?;
    let lp = answer_logprobs(tape, out.logits, ex)?;
    tape.sum(lp)
}

fn squared_distance(tape: &mut Tape<'_>, diff: Var) -> Result<Var> {
    let sq = tape.mul(diff, diff)?;
    tape.sum(sq)
}

fn unit_term<'a>(tape: &mut Tape<'a>, params: &'a Parameters, vars: &[Var], unit: &Unit<'_>) -> Result<Var> {
    match *unit {
        Unit::Nll(ex) => {
            let s = sequence_logprob(tape, params, vars, ex)?;
            tape.scale(s, -1.0)
        }
        Unit::Wga(ex, alpha) => {
            let out = forward_on_tape(tape, params, vars, &ex.sequence())?;
            let lp = answer_logprobs(tape, out.logits, ex)?;
            let a = tape.scale(lp, alpha)?;
            let weight = tape.unary(Unary::Exp, a)?;
            let weighted = tape.mul(weight, lp)?;
            let s = tape.sum(weighted)?;
            tape.scale(s, -1.0)
        }
        Unit::Npo(ex, reference, beta) => {
            let s = sequence_logprob(tape, params, vars, ex)?;
            npo_term(tape, s, reference, beta)
        }
        Unit::Dpo(pair, reference, beta) => {
            let w = sequence_logprob(tape, params, vars, &pair.win)?;
            let l = sequence_logprob(tape, params, vars, &pair.lose)?;
            dpo_term(tape, w, l, reference, beta)
        }
        Unit::Rmu(ex, layer, scale, direction) => {
            let out = forward_on_tape(tape, params, vars, &ex.sequence())?;
            let h = out
                .layers
                .get(layer)
                .ok_or_else(|| Error::Index(format!("rmu layer {layer} outside the model")))?
                .hidden;
            let shift: Vec<f64> = direction.iter().map(|u| -scale * u).collect();
            let n = shift.len();
            let shift = tape.constant(shift, &[n])?;
            let diff = tape.add_row(h, shift)?;
            squared_distance(tape, diff)
        }
        Unit::L2(tokens, targets) => {
            let out = forward_on_tape(tape, params, vars, tokens)?;
            if targets.len() != out.layers.len() {
                return Err(Error::Dimension {
                    op: "l2_distill",
                    detail: format!("{} target layers for {} layers", targets.len(), out.layers.len()),
                });
            }
            let mut total: Option<Var> = None;
            for (lv, target) in out.layers.iter().zip(targets) {
                let t = tape.constant(target.data().to_vec(), target.shape())?;
                let diff = tape.sub(lv.mlp_out, t)?;
                let d = squared_distance(tape, diff)?;
                total = Some(match total {
                    None => d,
                    Some(acc) => tape.add(acc, d)?,
                });
            }
            Ok(total.expect("at least one layer"))
        }
    }
}

/// Answer log-probability `Σₜ log p(yₜ | x, y_<t)` of each example.
pub fn sequence_logprobs(params: &Parameters, batch: &[Example]) -> Result<Vec<f64>> {
    batch
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, None)?;
            let s = sequence_logprob(&mut tape, params, &vars, ex)?;
            Ok(tape.scalar(s))
        })
        .collect()
}

/// Reference (win, lose) log-probabilities for DPO.
pub fn dpo_reference(params: &Parameters, pairs: &[DpoPair]) -> Result<Vec<(f64, f64)>> {
    let wins: Vec<Example> = pairs.iter().map(|p| p.win.clone()).collect();
    let loses: Vec<Example> = pairs.iter().map(|p| p.lose.clone()).collect();
    let w = sequence_logprobs(params, &wins)?;
    let l = sequence_logprobs(params, &loses)?;
    Ok(w.into_iter().zip(l).collect())
}

/// Per-layer MLP outputs `M^ℓ` of each input.
pub fn mlp_outputs(params: &Parameters, inputs: &[Vec<TokenId>]) -> Result<Vec<Vec<Tensor>>> {
    inputs
        .par_iter()
        .map(|x| {
            let (_, trace) = forward(params, x, true)?;
            Ok(trace.expect("trace requested").layers.into_iter().map(|l| l.mlp_out).collect())
        })
        .collect()
}

pub fn nll_loss(params: &Parameters, batch: &[Example]) -> Result<f64> {
    Loss::single(Term::Nll(batch)).value(params)
}

/// `−Σᵢ pᵢ^α log pᵢ` per sequence, averaged over the batch.
pub fn wga_loss(params: &Parameters, batch: &[Example], alpha: f64) -> Result<f64> {
    Loss::single(Term::Wga { batch, alpha }).value(params)
}

pub fn npo_loss(params: &Parameters, reference: &Parameters, batch: &[Example], beta: f64) -> Result<f64> {
    let r = sequence_logprobs(reference, batch)?;
    Loss::single(Term::Npo { batch, reference: &r, beta }).value(params)
}

pub fn dpo_loss(params: &Parameters, reference: &Parameters, pairs: &[DpoPair], beta: f64) -> Result<f64> {
    let r = dpo_reference(reference, pairs)?;
    Loss::single(Term::Dpo { pairs, reference: &r, beta }).value(params)
}

pub fn rmu_loss(params: &Parameters, batch: &[Example], layer: usize, scale: f64, direction: &[f64]) -> Result<f64> {
    if layer >= params.config().n_layers {
        return Err(Error::Index(format!("rmu layer {layer} outside the model")));
    }
    Loss::single(Term::Rmu { batch, layer, scale, direction }).value(params)
}

/// Distillation of per-layer MLP outputs toward `gold` on forget inputs, plus
/// `l2_alpha` times the same on retain inputs.
pub fn l2_distill_loss(
    params: &Parameters,
    gold: &Parameters,
    forget: &[Vec<TokenId>],
    retain: &[Vec<TokenId>],
    l2_alpha: f64,
) -> Result<f64> {
    distill_loss_parts(params, gold, forget, retain)?.build(l2_alpha).value(params)
}

/// Gold MLP outputs for the two input sides of the distillation loss.
pub struct DistillTargets<'a> {
    forget: &'a [Vec<TokenId>],
    retain: &'a [Vec<TokenId>],
    forget_targets: Vec<Vec<Tensor>>,
    retain_targets: Vec<Vec<Tensor>>,
}

impl<'a> DistillTargets<'a> {
    pub fn build(&self, l2_alpha: f64) -> Loss<'_> {
        let mut loss = Loss::new().with(1.0, Term::L2 { inputs: self.forget, targets: &self.forget_targets });
        if l2_alpha > 0.0 && !self.retain.is_empty() {
            loss = loss.with(l2_alpha, Term::L2 { inputs: self.retain, targets: &self.retain_targets });
        }
        loss
    }
}

pub fn distill_loss_parts<'a>(
    params: &Parameters,
    gold: &Parameters,
    forget: &'a [Vec<TokenId>],
    retain: &'a [Vec<TokenId>],
) -> Result<DistillTargets<'a>> {
    let (a, b) = (params.config(), gold.config());
    if (a.n_layers, a.d_model, a.d_ff, a.vocab_size) != (b.n_layers, b.d_model, b.d_ff, b.vocab_size) {
        return Err(Error::Contract("distillation target has a different model config".into()));
    }
    Ok(DistillTargets {
        forget,
        retain,
        forget_targets: mlp_outputs(gold, forget)?,
        retain_targets: mlp_outputs(gold, retain)?,
    })
}

/// Per-layer mean squared MLP-output residual `mean_t ‖M^ℓ_θ − M^ℓ_gold‖²`.
pub fn layer_residuals(params: &Parameters, gold: &Parameters, inputs: &[Vec<TokenId>]) -> Result<Vec<f64>> {
    let a = mlp_outputs(params, inputs)?;
    let b = mlp_outputs(gold, inputs)?;
    let tokens: usize = inputs.iter().map(Vec::len).sum();
    let mut out = vec![0.0; params.config().n_layers];
    for (xa, xb) in a.iter().zip(&b) {
        for (l, (ta, tb)) in xa.iter().zip(xb).enumerate() {
            out[l] += ta.data().iter().zip(tb.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        }
    }
    out.iter_mut().for_each(|v| *v /= tokens as f64);
    Ok(out)
}
