//! Value-vector attribution and region selection.

use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Example, UNK};
use crate::error::{Error, Result};
use crate::model::{forward, Gradients, MaskMode, ModelConfig, Parameters, TokenId, ValueVectorMask};
use crate::objectives::{Loss, Term};
use crate::rng;


#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Activations,
    Memflex,
    Wagle,
    /// Constant or externally supplied scores.
    Given,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Activations => "activations",
            Method::Memflex => "memflex",
            Method::Wagle => "wagle",
            Method::Given => "given",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Zero mean and unit standard deviation within each layer.
    LayerZ,
    Binary,
}

/// One score per unit (value vector or value-matrix weight), layer-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub method: Method,
    pub normalization: Normalization,
    pub mode: MaskMode,
    /// Units per layer.
    pub per_layer: usize,
    pub scores: Vec<f64>,
    /// Secondary ranking key (larger first), used to order ties in `scores`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<Vec<f64>>,
}

impl AttributionMap {
    pub fn new(
        config: &ModelConfig,
        method: Method,
        normalization: Normalization,
        mode: MaskMode,
        scores: Vec<f64>,
    ) -> Result<Self> {
        let n = ValueVectorMask::units(config, mode);
        if scores.len() != n {
            return Err(Error::Dimension { op: "attribution", detail: format!("{} scores for {n} units", scores.len()) });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("attribution score"));
        }
        Ok(Self { method, normalization, mode, per_layer: n / config.n_layers, scores, secondary: None })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn layer_scores(&self, layer: usize) -> &[f64] {
        &self.scores[layer * self.per_layer..(layer + 1) * self.per_layer]
    }

    /// Columns `layer,index,score,method`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "layer,index,score,method").map_err(io)?;
        for (flat, s) in self.scores.iter().enumerate() {
            writeln!(f, "{},{},{},{}", flat / self.per_layer, flat % self.per_layer, s, self.method.name())
                .map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub ratio: f64,
    pub memflex_mu: f64,
    /// Fixed magnitude threshold; calibrated to `ratio` when absent.
    pub memflex_sigma: Option<f64>,
    pub memflex_rounds: usize,
    /// Fixed WAGLE curvature; the retain-set diagonal Fisher mean when absent.
    pub wagle_gamma: Option<f64>,
    pub mode: MaskMode,
    pub seed: u64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            ratio: 0.10,
            memflex_mu: 0.95,
            memflex_sigma: None,
            memflex_rounds: 5,
            wagle_gamma: None,
            mode: MaskMode::ValueVector,
            seed: 0,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        check_ratio(self.ratio)?;
        if !(self.memflex_mu > -1.0 && self.memflex_mu <= 1.0) {
            return Err(Error::Contract(format!("memflex μ = {} outside (−1, 1]", self.memflex_mu)));
        }
        if self.memflex_rounds == 0 {
            return Err(Error::Contract("memflex needs at least one round".into()));
        }
        if let Some(s) = self.memflex_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Contract(format!("memflex σ = {s} must be a finite non-negative number")));
            }
        }
        if let Some(g) = self.wagle_gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Contract(format!("wagle γ = {g} must be positive")));
            }
        }
        Ok(())
    }
}

fn check_ratio(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Contract(format!("ratio {p} outside (0, 1)")));
    }
    Ok(())
}

fn check_nonempty(set: &[Example], what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Contract(format!("{what} set is empty")));
    }
    Ok(())
}

/// `⌈p·N⌉`, robust to representation error in `p·N`.
pub fn region_size(p: f64, n: usize) -> usize {
    ((p * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Unnormalized activation scores: mean over answer positions of
/// `|m_i| · ‖v_i‖`, averaged over examples.
///
/// Answer positions are the rows whose next-token prediction is an answer
/// token.
pub fn raw_activation_scores(params: &Parameters, forget: &[Example]) -> Result<AttributionMap> {
    check_nonempty(forget, "forget")?;
    let c = params.config();
    let lay = c.layout();
    let norms: Vec<Vec<f64>> = (0..c.n_layers)
        .map(|l| {
            params
                .tensor(lay.mlp_value(l))
                .data()
                .chunks(c.d_model)
                .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect()
        })
        .collect();
    let per_example = forget
        .par_iter()
        .map(|ex| {
            let (_, trace) = forward(params, &ex.sequence(), true)?;
            let trace = trace.expect("trace requested");
            let rows: Vec<usize> = ex.answer_rows().collect();
            Ok(trace
                .layers
                .iter()
                .zip(&norms)
                .flat_map(|(layer, n)| activation_layer_scores(layer.coefficients.data(), c.d_ff, &rows, n))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![0.0; c.n_layers * c.d_ff];
    for acc in &per_example {
        for (s, a) in scores.iter_mut().zip(acc) {
            *s += a;
        }
    }
    let n = forget.len() as f64;
    scores.iter_mut().for_each(|s| *s /= n);
    AttributionMap::new(c, Method::Activations, Normalization::None, MaskMode::ValueVector, scores)
}

/// `mean_{t ∈ rows} |m[t, i]| · ‖v_i‖` for one layer of one example;
/// `coefficients` is `[T × d_ff]`.
pub fn activation_layer_scores(coefficients: &[f64], d_ff: usize, rows: &[usize], value_norms: &[f64]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..d_ff)
        .map(|i| rows.iter().map(|&t| coefficients[t * d_ff + i].abs()).sum::<f64>() / n * value_norms[i])
        .collect()
}

/// Activation scores z-normalized within each layer.
pub fn score_activations(params: &Parameters, forget: &[Example]) -> Result<AttributionMap> {
    let mut map = raw_activation_scores(params, forget)?;
    let per = map.per_layer;
    for layer in map.scores.chunks_mut(per) {
        z_normalize(layer);
    }
    map.normalization = Normalization::LayerZ;
    Ok(map)
}

/// In-place standardization; a constant slice becomes all zeros.
pub fn z_normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in xs.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

/// Cosine similarity; 1 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn value_selection(c: &ModelConfig) -> crate::model::ParamSelection {
    ValueVectorMask::full(c, MaskMode::ValueVector).selection(c)
}

/// Gradient of the answer NLL under random answer tokens, averaged over
/// `rounds` resamplings.
fn random_label_gradient(params: &Parameters, set: &[Example], rounds: usize, seed: u64) -> Result<Gradients> {
    let c = params.config();
    let lo = UNK + 1;
    if (c.vocab_size as TokenId) <= lo {
        return Err(Error::Contract("vocabulary has no content tokens".into()));
    }
    let sel = value_selection(c);
    let mut total = Gradients::zeros_like(params);
    for round in 0..rounds {
        let mut r = rng::seeded(rng::derive_seed(seed, round as u64));
        let batch: Vec<Example> = set
            .iter()
            .map(|e| {
                let answer = (0..e.answer.len()).map(|_| r.random_range(lo..c.vocab_size as TokenId)).collect();
                e.with_answer(answer)
            })
            .collect();
        let (_, g) = Loss::single(Term::Nll(&batch)).value_and_grad(params, &sel)?;
        total.add_assign(&g);
    }
    total.scale(1.0 / rounds as f64);
    Ok(total)
}

/// Rows of the value-matrix gradients, one per value vector.
fn value_rows(c: &ModelConfig, g: &Gradients) -> Vec<Vec<f64>> {
    let lay = c.layout();
    (0..c.n_layers)
        .flat_map(|l| {
            let t = g.tensor(lay.mlp_value(l));
            (0..c.d_ff).map(move |i| t[i * c.d_model..(i + 1) * c.d_model].to_vec())
        })
        .collect()
}

/// Binary map from per-vector gradients.
///
/// A unit scores 1 iff `cos(g_unl, g_ret) < μ` and `‖g_unl‖ > σ`. Without a
/// fixed σ, σ is placed between the k-th and (k+1)-th largest `‖g_unl‖` among
/// units passing the cosine test, `k = ⌈p·N⌉`, so exactly
/// `min(k, #passing)` units score 1. The secondary key is `‖g_unl‖`.
pub fn memflex_from_gradients(
    config: &ModelConfig,
    g_unl: &[Vec<f64>],
    g_ret: &[Vec<f64>],
    cfg: &LocalizationConfig,
) -> Result<(AttributionMap, f64)> {
    cfg.validate()?;
    let n = config.n_value_vectors();
    if g_unl.len() != n || g_ret.len() != n {
        return Err(Error::Dimension { op: "memflex", detail: format!("expected {n} gradient rows") });
    }
    let norms: Vec<f64> = g_unl.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let passes: Vec<bool> = g_unl.iter().zip(g_ret).map(|(u, r)| cosine(u, r) < cfg.memflex_mu).collect();
    let sigma = match cfg.memflex_sigma {
        Some(s) => s,
        None => {
            let mut cand: Vec<f64> = norms.iter().zip(&passes).filter(|(_, &p)| p).map(|(&v, _)| v).collect();
            cand.sort_by(|a, b| b.total_cmp(a));
            let k = region_size(cfg.ratio, n);
            if cand.is_empty() || k == 0 {
                f64::INFINITY
            } else if k >= cand.len() {
                // Everything that passes is selected; σ sits just below the
                // smallest candidate norm.
                let m = cand[cand.len() - 1];
                if m > 0.0 {
                    m / 2.0
                } else {
                    0.0
                }
            } else {
                (cand[k - 1] + cand[k]) / 2.0
            }
        }
    };
    let scores: Vec<f64> =
        norms.iter().zip(&passes).map(|(&v, &p)| if p && v > sigma { 1.0 } else { 0.0 }).collect();
    let mut map = AttributionMap::new(config, Method::Memflex, Normalization::Binary, MaskMode::ValueVector, scores)?;
    map.secondary = Some(norms);
    Ok((map, sigma))
}

/// MemFlex scores under random-label perturbation of forget and retain data.
pub fn score_memflex(
    params: &Parameters,
    forget: &[Example],
    retain: &[Example],
    cfg: &LocalizationConfig,
) -> Result<AttributionMap> {
    check_nonempty(forget, "forget")?;
    check_nonempty(retain, "retain")?;
    cfg.validate()?;
    let c = params.config();
    let gu = random_label_gradient(params, forget, cfg.memflex_rounds, rng::derive_labeled(cfg.seed, "memflex/forget"))?;
    let gr = random_label_gradient(params, retain, cfg.memflex_rounds, rng::derive_labeled(cfg.seed, "memflex/retain"))?;
    let (map, sigma) = memflex_from_gradients(c, &value_rows(c, &gu), &value_rows(c, &gr), cfg)?;
    log::debug!("memflex σ = {sigma:.6e}, selected {}", map.scores.iter().filter(|&&s| s > 0.0).count());
    Ok(map)
}

/// Per-weight WAGLE scores `θ·g_f − g_r·g_f / γ`.
pub fn wagle_weight_scores(theta: &[f64], g_forget: &[f64], g_retain: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::Contract(format!("wagle γ = {gamma} must be positive")));
    }
    if theta.len() != g_forget.len() || theta.len() != g_retain.len() {
        return Err(Error::Dimension { op: "wagle", detail: "weights and gradients differ in length".into() });
    }
    Ok(theta.iter().zip(g_forget).zip(g_retain).map(|((t, f), r)| t * f - r * f / gamma).collect())
}

/// Mean over value-matrix weights of the per-example squared retain
/// gradients (diagonal empirical Fisher).
pub fn fisher_gamma(params: &Parameters, retain: &[Example]) -> Result<f64> {
    check_nonempty(retain, "retain")?;
    let c = params.config();
    let sel = value_selection(c);
    let lay = c.layout();
    let per = retain
        .par_iter()
        .map(|e| {
            let (_, g) = Loss::single(Term::Nll(std::slice::from_ref(e))).value_and_grad(params, &sel)?;
            Ok((0..c.n_layers).map(|l| g.tensor(lay.mlp_value(l)).iter().map(|x| x * x).sum::<f64>()).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    let weights = (c.n_layers * c.d_ff * c.d_model) as f64;
    Ok(per.iter().sum::<f64>() / (retain.len() as f64 * weights))
}

/// WAGLE scores with `L_f` and `L_r` the forget and retain answer NLL.
pub fn score_wagle(
    params: &Parameters,
    forget: &[Example],
    retain: &[Example],
    gamma: Option<f64>,
    mode: MaskMode,
) -> Result<AttributionMap> {
    check_nonempty(forget, "forget")?;
    check_nonempty(retain, "retain")?;
    let c = params.config();
    let gamma = match gamma {
        Some(g) => g,
        None => fisher_gamma(params, retain)?,
    };
    let sel = value_selection(c);
    let (_, gf) = Loss::single(Term::Nll(forget)).value_and_grad(params, &sel)?;
    let (_, gr) = Loss::single(Term::Nll(retain)).value_and_grad(params, &sel)?;
    let lay = c.layout();
    let mut weights = Vec::with_capacity(c.n_layers * c.d_ff * c.d_model);
    for l in 0..c.n_layers {
        let i = lay.mlp_value(l);
        weights.extend(wagle_weight_scores(params.tensor(i).data(), gf.tensor(i), gr.tensor(i), gamma)?);
    }
    let scores = match mode {
        MaskMode::IndividualWeight => weights,
        MaskMode::ValueVector => weights.chunks(c.d_model).map(|w| w.iter().sum::<f64>() / c.d_model as f64).collect(),
    };
    AttributionMap::new(c, Method::Wagle, Normalization::None, mode, scores)
}

/// Every unit scores the same value.
pub fn constant_map(config: &ModelConfig, mode: MaskMode, value: f64) -> Result<AttributionMap> {
    AttributionMap::new(config, Method::Given, Normalization::None, mode, vec![value; ValueVectorMask::units(config, mode)])
}

/// The `⌈p·N⌉` highest-scoring units. Ties fall to the secondary key
/// (larger first), then to ascending (layer, index).
pub fn select_top_p(config: &ModelConfig, map: &AttributionMap, p: f64) -> Result<ValueVectorMask> {
    check_ratio(p)?;
    let n = ValueVectorMask::units(config, map.mode);
    if map.len() != n {
        return Err(Error::Dimension { op: "select_top_p", detail: format!("map of {} units, model has {n}", map.len()) });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        map.scores[b]
            .total_cmp(&map.scores[a])
            .then_with(|| match &map.secondary {
                Some(s) => s[b].total_cmp(&s[a]),
                None => std::cmp::Ordering::Equal,
            })
            .then(a.cmp(&b))
    });
    order.truncate(region_size(p, n));
    ValueVectorMask::from_flat(config, map.mode, order)
}

/// Uniform sample of `⌈p·N⌉` units outside `exclude`.
pub fn select_random(
    config: &ModelConfig,
    mode: MaskMode,
    p: f64,
    seed: u64,
    exclude: Option<&ValueVectorMask>,
) -> Result<ValueVectorMask> {
    check_ratio(p)?;
    let n = ValueVectorMask::units(config, mode);
    let k = region_size(p, n);
    let free: Vec<usize> = match exclude {
        Some(ex) => {
            if ex.mode() != mode || ex.total() != n {
                return Err(Error::Contract("exclusion mask has a different unit space".into()));
            }
            (0..n).filter(|&u| !ex.contains(u)).collect()
        }
        None => (0..n).collect(),
    };
    if free.len() < k {
        return Err(Error::Contract(format!("{} free units, need {k}", free.len())));
    }
    let mut r = rng::seeded(seed);
    let picked = index::sample(&mut r, free.len(), k);
    ValueVectorMask::from_flat(config, mode, picked.iter().map(|i| free[i]))
}

/// Oracle (target) and Random regions of equal size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub target: ValueVectorMask,
    pub random: ValueVectorMask,
}

impl Region {
    pub fn new(target: ValueVectorMask, random: ValueVectorMask) -> Result<Self> {
        if !target.is_disjoint(&random) {
            return Err(Error::Contract("target and random regions overlap".into()));
        }
        Ok(Self { target, random })
    }

    /// Target drawn uniformly; random drawn from the complement.
    pub fn draw(config: &ModelConfig, p: f64, seed: u64) -> Result<Self> {
        let target = select_random(config, MaskMode::ValueVector, p, rng::derive_labeled(seed, "region/target"), None)?;
        let random =
            select_random(config, MaskMode::ValueVector, p, rng::derive_labeled(seed, "region/random"), Some(&target))?;
        Self::new(target, random)
    }
}
