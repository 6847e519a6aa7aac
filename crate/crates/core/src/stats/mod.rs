//! Monte-Carlo significance tests for AUES and MU95 differences.
//!
//! Both tests report `p = (1 + #{null ≥ observed}) / (1 + rounds)`. Round `r`
//! draws from `derive_seed(seed, r)`, so results do not depend on how rounds
//! are scheduled across threads. Multi-seed comparisons are stratified: the
//! resampling happens inside each seed's pair of curves and the statistic is
//! the absolute difference of the per-group means.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{aues, mu95, CurvePoint, MixCurve};
use crate::rng;

#[cfg(test)]
mod tests;

pub const DEFAULT_ROUNDS: usize = 10_000;
pub const MIN_ROUNDS: usize = 100;
/// Attempts allowed per bootstrap round before giving up.
pub const MAX_ATTEMPTS_PER_ROUND: usize = 100;

/// Relative slack when comparing a null statistic with the observed one, so
/// that exact symmetries survive floating-point reassociation.
const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Observed `|Δ|`.
    pub observed: f64,
    pub p_value: f64,
    pub n_rounds: usize,
    pub seed: u64,
    /// Bootstrap draws discarded because a group's MU threshold was never
    /// crossed. Always 0 for the permutation test.
    pub redraws: usize,
}

/// One point of an FS–RS sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FsRs {
    pub alpha: f64,
    pub fs: f64,
    pub rs: f64,
}

impl From<&CurvePoint> for FsRs {
    fn from(p: &CurvePoint) -> Self {
        Self { alpha: p.alpha, fs: p.fs, rs: p.rs }
    }
}

pub fn fs_rs_points(curve: &MixCurve) -> Vec<FsRs> {
    curve.points.iter().map(FsRs::from).collect()
}

/// MU–FQ points of one sweep, in α order, with the sweep's initial MU.
#[derive(Clone, Debug, PartialEq)]
pub struct MuFqCurve {
    pub points: Vec<(f64, f64)>,
    pub mu_initial: f64,
}

impl MuFqCurve {
    pub fn from_curve(curve: &MixCurve) -> Result<Self> {
        let points = curve.mu_fq().ok_or_else(|| Error::Contract("curve has no MU/FQ values".into()))?;
        let mu_initial = points.first().map(|p| p.0).ok_or_else(|| Error::Contract("empty curve".into()))?;
        Ok(Self { points, mu_initial })
    }
}

/// Add-one smoothed upper-tail p-value.
pub fn p_value(null: &[f64], observed: f64) -> f64 {
    let cut = observed - TIE_EPS * observed.abs().max(1.0);
    let hits = null.iter().filter(|&&d| d >= cut).count();
    (1 + hits) as f64 / (1 + null.len()) as f64
}

fn check_rounds(n: usize) -> Result<()> {
    if n < MIN_ROUNDS {
        return Err(Error::Contract(format!("{n} rounds < minimum {MIN_ROUNDS}")));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn curve_aues(points: &[FsRs], observed_span: bool) -> Result<f64> {
    aues(&points.iter().map(|p| (p.fs, p.rs)).collect::<Vec<_>>(), observed_span)
}

/// Permutation test on `|AUES(A) − AUES(B)|`.
pub fn aues_permutation_test(a: &[FsRs], b: &[FsRs], n_rounds: usize, seed: u64) -> Result<TestResult> {
    aues_permutation_test_stratified(&[(a.to_vec(), b.to_vec())], n_rounds, seed, false)
}

/// Permutation test on `|mean_s AUES(A_s) − mean_s AUES(B_s)|`; each round
/// swaps every α-paired point between `A_s` and `B_s` with probability ½.
pub fn aues_permutation_test_stratified(
    strata: &[(Vec<FsRs>, Vec<FsRs>)],
    n_rounds: usize,
    seed: u64,
    observed_span: bool,
) -> Result<TestResult> {
    check_rounds(n_rounds)?;
    if strata.is_empty() {
        return Err(Error::Contract("no curves to compare".into()));
    }
    for (a, b) in strata {
        if a.len() != b.len() || a.iter().zip(b).any(|(p, q)| p.alpha != q.alpha) {
            return Err(Error::Contract("curves do not share an α grid".into()));
        }
    }
    let stat = |pairs: &[(Vec<FsRs>, Vec<FsRs>)]| -> Result<f64> {
        let mut aa = Vec::with_capacity(pairs.len());
        let mut bb = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            aa.push(curve_aues(a, observed_span)?);
            bb.push(curve_aues(b, observed_span)?);
        }
        Ok((mean(&aa) - mean(&bb)).abs())
    };
    let observed = stat(strata)?;
    let null = (0..n_rounds)
        .into_par_iter()
        .map(|round| {
            let mut r = rng::seeded(rng::derive_seed(seed, round as u64));
            let swapped: Vec<(Vec<FsRs>, Vec<FsRs>)> = strata
                .iter()
                .map(|(a, b)| {
                    let (mut a, mut b) = (a.clone(), b.clone());
                    for i in 0..a.len() {
                        if r.random_bool(0.5) {
                            std::mem::swap(&mut a[i], &mut b[i]);
                        }
                    }
                    (a, b)
                })
                .collect();
            stat(&swapped)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TestResult { observed, p_value: p_value(&null, observed), n_rounds, seed, redraws: 0 })
}

/// MU95 of points in arbitrary order: sorted by MU descending, then walked.
pub fn mu95_unordered(points: &[(f64, f64)], mu_initial: f64) -> Result<f64> {
    let mut pts = points.to_vec();
    pts.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.total_cmp(&y.1)));
    mu95(&pts, mu_initial)
}

/// Bootstrap test on `|MU95(A) − MU95(B)|`.
pub fn mu95_bootstrap_test(a: &MuFqCurve, b: &MuFqCurve, n_rounds: usize, seed: u64) -> Result<TestResult> {
    mu95_bootstrap_test_stratified(&[(a.clone(), b.clone())], n_rounds, seed)
}

/// Bootstrap test on `|mean_s MU95(A_s) − mean_s MU95(B_s)|`.
///
/// Each round pools the MU–FQ points of `A_s` and `B_s`, shuffles, and
/// splits them back into groups of the original sizes; each group keeps
/// its side's initial MU. A draw in which some group never crosses its
/// threshold is redrawn. More than half of all draws being redrawn, or a
/// round exhausting [`MAX_ATTEMPTS_PER_ROUND`], is an instability error.
pub fn mu95_bootstrap_test_stratified(
    strata: &[(MuFqCurve, MuFqCurve)],
    n_rounds: usize,
    seed: u64,
) -> Result<TestResult> {
    check_rounds(n_rounds)?;
    if strata.is_empty() {
        return Err(Error::Contract("no curves to compare".into()));
    }
    let mut oa = Vec::with_capacity(strata.len());
    let mut ob = Vec::with_capacity(strata.len());
    for (a, b) in strata {
        oa.push(mu95(&a.points, a.mu_initial)?);
        ob.push(mu95(&b.points, b.mu_initial)?);
    }
    let observed = (mean(&oa) - mean(&ob)).abs();
    let rounds = (0..n_rounds)
        .into_par_iter()
        .map(|round| {
            let round_seed = rng::derive_seed(seed, round as u64);
            for attempt in 0..MAX_ATTEMPTS_PER_ROUND {
                let mut r = rng::seeded(rng::derive_seed(round_seed, attempt as u64));
                if let Some(d) = bootstrap_draw(strata, &mut r) {
                    return Ok((d, attempt));
                }
            }
            Err(Error::Instability { redraws: MAX_ATTEMPTS_PER_ROUND, attempts: MAX_ATTEMPTS_PER_ROUND })
        })
        .collect::<Result<Vec<(f64, usize)>>>()?;
    let redraws: usize = rounds.iter().map(|r| r.1).sum();
    let attempts = redraws + n_rounds;
    if 2 * redraws > attempts {
        return Err(Error::Instability { redraws, attempts });
    }
    let null: Vec<f64> = rounds.iter().map(|r| r.0).collect();
    Ok(TestResult { observed, p_value: p_value(&null, observed), n_rounds, seed, redraws })
}

fn bootstrap_draw(strata: &[(MuFqCurve, MuFqCurve)], r: &mut rng::Rng) -> Option<f64> {
    let mut ma = Vec::with_capacity(strata.len());
    let mut mb = Vec::with_capacity(strata.len());
    for (a, b) in strata {
        let mut pool: Vec<(f64, f64)> = a.points.iter().chain(&b.points).copied().collect();
        pool.shuffle(r);
        let (ga, gb) = pool.split_at(a.points.len());
        ma.push(mu95_unordered(ga, a.mu_initial).ok()?);
        mb.push(mu95_unordered(gb, b.mu_initial).ok()?);
    }
    Some((mean(&ma) - mean(&mb)).abs())
}
