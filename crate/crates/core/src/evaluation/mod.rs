//! Extraction strength, truth-ratio metrics, mixing sweeps and curve areas.

mod ks;

pub use ks::{ks_pvalue_asymptotic, ks_pvalue_exact, ks_statistic, ks_test, EXACT_LIMIT};

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedRecord, Example};
use crate::error::{Error, Result};
use crate::model::{forward, mix, Parameters, TokenId};
use crate::tensor::kernels;

/// Answer-row statistics of one teacher-forced pass over `[x, y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnswerPass {
    /// `log p(yⱼ | x, y_<j)` for each answer token.
    pub logprobs: Vec<f64>,
    /// Greedy prediction at each answer position.
    pub predictions: Vec<TokenId>,
}

impl AnswerPass {
    pub fn run(params: &Parameters, ex: &Example) -> Result<Self> {
        if ex.answer.is_empty() || ex.prompt.is_empty() {
            return Err(Error::Contract("prompt and answer must be non-empty".into()));
        }
        let (logits, _) = forward(params, &ex.sequence(), false)?;
        let v = params.config().vocab_size;
        let mut logprobs = Vec::with_capacity(ex.answer.len());
        let mut predictions = Vec::with_capacity(ex.answer.len());
        for (row, &y) in ex.answer_rows().zip(&ex.answer) {
            let r = &logits.data()[row * v..(row + 1) * v];
            logprobs.push(r[y as usize] - kernels::log_sum_exp(r));
            predictions.push(kernels::argmax(r) as TokenId);
        }
        Ok(Self { logprobs, predictions })
    }

    /// `1 − k*/|y|` where `k*` is the shortest answer prefix after which
    /// greedy decoding reproduces the rest of the answer.
    ///
    /// Logits are computed row-independently, so teacher-forced predictions
    /// equal those of incremental decoding along the true answer: decoding
    /// from `y_<k` succeeds iff every prediction at `j ≥ k` is correct.
    pub fn extraction_strength(&self, answer: &[TokenId]) -> f64 {
        let k_star = self
            .predictions
            .iter()
            .zip(answer)
            .rposition(|(p, y)| p != y)
            .map_or(0, |j| j + 1);
        1.0 - k_star as f64 / answer.len() as f64
    }

    pub fn mean_logprob(&self) -> f64 {
        self.logprobs.iter().sum::<f64>() / self.logprobs.len() as f64
    }
}

pub fn extraction_strength(params: &Parameters, ex: &Example) -> Result<f64> {
    Ok(AnswerPass::run(params, ex)?.extraction_strength(&ex.answer))
}

/// Mean ES over a set of examples.
pub fn mean_extraction_strength(params: &Parameters, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Contract("extraction strength over an empty set".into()));
    }
    let es = examples.par_iter().map(|e| extraction_strength(params, e)).collect::<Result<Vec<_>>>()?;
    Ok(es.iter().sum::<f64>() / es.len() as f64)
}

/// `1 − mean ES` over the forget set.
pub fn forget_strength(params: &Parameters, forget: &[Example]) -> Result<f64> {
    Ok(1.0 - mean_extraction_strength(params, forget)?)
}

/// Mean ES over the retain set.
pub fn retain_strength(params: &Parameters, retain: &[Example]) -> Result<f64> {
    mean_extraction_strength(params, retain)
}

/// Per-token mean log-probability of each of `answers` given `prompt`.
///
/// Answers that agree with an earlier-computed answer on all but their last
/// token reuse its pass; the logit row predicting token `j` only depends on
/// tokens before `j`.
fn mean_logprobs(params: &Parameters, prompt: &[TokenId], answers: &[&[TokenId]]) -> Result<Vec<f64>> {
    let v = params.config().vocab_size;
    let mut passes: Vec<(Vec<TokenId>, Vec<f64>)> = Vec::new();
    let mut out = Vec::with_capacity(answers.len());
    for &ans in answers {
        if ans.is_empty() {
            return Err(Error::Contract("empty answer in truth ratio".into()));
        }
        let reuse = passes.iter().find(|(a, _)| {
            a.len() >= ans.len() && a[..ans.len() - 1] == ans[..ans.len() - 1]
        });
        let rows = match reuse {
            Some((_, logits)) => logits,
            None => {
                let seq: Vec<TokenId> = prompt.iter().chain(ans).copied().collect();
                let (logits, _) = forward(params, &seq, false)?;
                passes.push((ans.to_vec(), logits.into_data()));
                &passes.last().unwrap().1
            }
        };
        let p = prompt.len();
        let lp: f64 = ans
            .iter()
            .enumerate()
            .map(|(j, &y)| {
                let r = &rows[(p + j - 1) * v..(p + j) * v];
                r[y as usize] - kernels::log_sum_exp(r)
            })
            .sum();
        out.push(lp / ans.len() as f64);
    }
    Ok(out)
}

/// Geometric mean of the length-normalized perturbed-answer probabilities
/// over the length-normalized paraphrase probability.
pub fn truth_ratio(params: &Parameters, record: &EncodedRecord) -> Result<f64> {
    let para = record.paraphrase.as_deref().ok_or_else(|| Error::Contract("record has no paraphrase".into()))?;
    if record.perturbed.is_empty() {
        return Err(Error::Contract("record has no perturbed answers".into()));
    }
    let mut answers: Vec<&[TokenId]> = vec![para];
    answers.extend(record.perturbed.iter().map(Vec::as_slice));
    let lp = mean_logprobs(params, &record.example.prompt, &answers)?;
    let pert = lp[1..].iter().sum::<f64>() / (lp.len() - 1) as f64;
    Ok((pert - lp[0]).exp())
}

/// Scores of one record under one model.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordScores {
    pub es: f64,
    /// `exp(mean token log p(y | x))`.
    pub answer_prob: f64,
    pub truth_ratio: Option<f64>,
}

pub fn score_record(params: &Parameters, record: &EncodedRecord, truth: bool) -> Result<RecordScores> {
    let pass = AnswerPass::run(params, &record.example)?;
    Ok(RecordScores {
        es: pass.extraction_strength(&record.example.answer),
        answer_prob: pass.mean_logprob().exp(),
        truth_ratio: if truth { Some(truth_ratio(params, record)?) } else { None },
    })
}

fn score_all(params: &Parameters, records: &[EncodedRecord], truth: bool) -> Result<Vec<RecordScores>> {
    records.par_iter().map(|r| score_record(params, r, truth)).collect()
}

/// `ln p` of the two-sample KS test between the candidate's and the gold
/// model's forget-set truth ratios.
pub fn forget_quality_from_ratios(candidate: &[f64], gold: &[f64], exact: bool) -> Result<f64> {
    if candidate.len() < 5 || gold.len() < 5 {
        return Err(Error::Contract(format!(
            "forget quality needs at least 5 records per side, got {} and {}",
            candidate.len(),
            gold.len()
        )));
    }
    let (_, p) = ks_test(candidate, gold, exact);
    Ok(p.ln().min(0.0))
}

pub fn forget_quality(params: &Parameters, gold: &Parameters, forget: &[EncodedRecord], exact: bool) -> Result<f64> {
    let a = forget.par_iter().map(|r| truth_ratio(params, r)).collect::<Result<Vec<_>>>()?;
    let b = forget.par_iter().map(|r| truth_ratio(gold, r)).collect::<Result<Vec<_>>>()?;
    forget_quality_from_ratios(&a, &b, exact)
}

/// Harmonic mean of two utility components; zero if either is zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 / (1.0 / a + 1.0 / b)
    }
}

fn utility_from_scores(scores: &[RecordScores]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Contract("model utility over an empty retain set".into()));
    }
    let n = scores.len() as f64;
    let prob = scores.iter().map(|s| s.answer_prob).sum::<f64>() / n;
    let mut truth = 0.0;
    for s in scores {
        let r = s.truth_ratio.ok_or_else(|| Error::Contract("model utility needs truth ratios".into()))?;
        truth += 1.0 / (1.0 + r);
    }
    Ok(harmonic_mean(prob, truth / n).clamp(0.0, 1.0))
}

pub fn model_utility(params: &Parameters, retain: &[EncodedRecord]) -> Result<f64> {
    utility_from_scores(&score_all(params, retain, true)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Compute the truth-ratio metrics (MU and FQ).
    pub truth_metrics: bool,
    /// Use the exact KS distribution for small samples.
    pub ks_exact: bool,
    /// Integrate only the observed FS span in AUES.
    pub aues_observed_span: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { truth_metrics: true, ks_exact: false, aues_observed_span: false }
    }
}

/// Evaluation inputs shared by every model of an experiment.
pub struct EvalSet<'a> {
    pub forget: &'a [EncodedRecord],
    pub retain: &'a [EncodedRecord],
    /// Gold model's forget-set truth ratios (required for FQ).
    pub gold_forget_ratios: Option<&'a [f64]>,
    pub metrics: MetricConfig,
}

impl<'a> EvalSet<'a> {
    /// Gold forget-set truth ratios for [`EvalSet::gold_forget_ratios`].
    pub fn gold_ratios(gold: &Parameters, forget: &[EncodedRecord]) -> Result<Vec<f64>> {
        forget.par_iter().map(|r| truth_ratio(gold, r)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub fs: f64,
    pub rs: f64,
    pub mu: Option<f64>,
    pub fq: Option<f64>,
    pub forget_es: f64,
    pub retain_es: f64,
}

pub fn evaluate(params: &Parameters, set: &EvalSet<'_>, alpha: f64) -> Result<CurvePoint> {
    let truth = set.metrics.truth_metrics;
    let forget = score_all(params, set.forget, truth)?;
    let retain = score_all(params, set.retain, truth)?;
    if forget.is_empty() || retain.is_empty() {
        return Err(Error::Contract("evaluation needs non-empty forget and retain sets".into()));
    }
    let forget_es = forget.iter().map(|s| s.es).sum::<f64>() / forget.len() as f64;
    let retain_es = retain.iter().map(|s| s.es).sum::<f64>() / retain.len() as f64;
    let (mu, fq) = if truth {
        let gold = set
            .gold_forget_ratios
            .ok_or_else(|| Error::Contract("forget quality needs gold truth ratios".into()))?;
        let ratios: Vec<f64> = forget.iter().map(|s| s.truth_ratio.expect("truth requested")).collect();
        (
            Some(utility_from_scores(&retain)?),
            Some(forget_quality_from_ratios(&ratios, gold, set.metrics.ks_exact)?),
        )
    } else {
        (None, None)
    };
    Ok(CurvePoint { alpha, fs: 1.0 - forget_es, rs: retain_es, mu, fq, forget_es, retain_es })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixCurve {
    pub points: Vec<CurvePoint>,
    pub original: String,
    pub unlearned: String,
}

/// `α ∈ {0, step, …, 1}`; the grid always ends exactly at 1.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::Contract(format!("sweep step {step} outside (0, 0.5]")));
    }
    let n = (1.0 / step - 1e-9).ceil() as usize;
    Ok((0..=n).map(|i| if i == n { 1.0 } else { i as f64 * step }).collect())
}

/// Evaluates `mix(θ_o, θ, α)` along the α grid.
pub fn mixing_sweep(
    original: &Parameters,
    unlearned: &Parameters,
    step: f64,
    set: &EvalSet<'_>,
    names: (&str, &str),
) -> Result<MixCurve> {
    let grid = alpha_grid(step)?;
    let points = grid
        .par_iter()
        .map(|&a| evaluate(&mix(original, unlearned, a)?, set, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(MixCurve { points, original: names.0.to_string(), unlearned: names.1.to_string() })
}

impl MixCurve {
    pub fn fs_rs(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.fs, p.rs)).collect()
    }

    /// `(MU, FQ)` pairs in α order, when truth metrics were computed.
    pub fn mu_fq(&self) -> Option<Vec<(f64, f64)>> {
        self.points.iter().map(|p| Some((p.mu?, p.fq?))).collect()
    }

    /// `max FS − min FS`.
    pub fn fs_span(&self) -> f64 {
        let lo = self.points.iter().map(|p| p.fs).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.fs).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "alpha,fs,rs,mu,fq").map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            writeln!(f, "{},{},{},{},{}", p.alpha, p.fs, p.rs, opt(p.mu), opt(p.fq)).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// Trapezoidal area under RS as a function of FS.
///
/// Points are sorted by FS (duplicate FS values keep the largest RS). With
/// `observed_span == false` the curve is extended flat to FS = 0 and FS = 1.
pub fn aues(points: &[(f64, f64)], observed_span: bool) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Contract("AUES needs at least two points".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup_by(|later, earlier| later.0 == earlier.0);
    let mut area = 0.0;
    for w in pts.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    if !observed_span {
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        area += first.0 * first.1 + (1.0 - last.0) * last.1;
    }
    Ok(area)
}

/// FQ where MU first reaches `0.95 · mu_initial`, walking the curve in
/// order and interpolating linearly between the bracketing points.
pub fn mu95(points: &[(f64, f64)], mu_initial: f64) -> Result<f64> {
    let tau = 0.95 * mu_initial;
    for (i, &(mu, fq)) in points.iter().enumerate() {
        if mu == tau {
            return Ok(fq);
        }
        if let Some(&(mu2, fq2)) = points.get(i + 1) {
            if (mu - tau) * (mu2 - tau) < 0.0 {
                let t = (tau - mu) / (mu2 - mu);
                return Ok(fq + t * (fq2 - fq));
            }
        }
    }
    let min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Err(Error::InsufficientUnlearning { threshold: tau, min, max })
}
