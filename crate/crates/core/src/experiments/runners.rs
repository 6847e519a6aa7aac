use rayon::prelude::*;

use super::setup::{Lab, Original};
use super::{
    curve_name, map_name, Cell, Comparison, DistillSummary, ExperimentKind, ExperimentReport, ExperimentSpec,
    LrChoice, LrTrial, ModelStats, NamedMap, RevisitMethod, Summary,
};
use crate::error::{Error, Result};
use crate::evaluation::{aues, mixing_sweep, mu95, MixCurve};
use crate::localization::{
    constant_map, score_activations, score_memflex, score_wagle, select_random, select_top_p, AttributionMap,
    LocalizationConfig, Method, Normalization, Region,
};
use crate::model::{MaskMode, ModelConfig, ValueVectorMask};
use crate::objectives::Objective;
use crate::rng;
use crate::stats::{
    aues_permutation_test_stratified, fs_rs_points, mu95_bootstrap_test_stratified, FsRs, MuFqCurve,
};
use crate::training::{distill_unlearn, unlearn, TrainConfig};

/// A finished experiment: the report plus the files it references.
pub struct RunOutput {
    pub report: ExperimentReport,
    /// (relative path, curve).
    pub curves: Vec<(String, MixCurve)>,
    /// (relative path, map).
    pub maps: Vec<NamedMap>,
}

const REVISIT_NOTE: &str = "revisit: unlearning starts from a model whose forget facts were injected into a random \
     target region, since a toy model has no pre-memorized facts; localization methods never see that region";

/// Runs `spec` on a pool of `spec.jobs` workers (all cores by default).
pub fn run(spec: &ExperimentSpec, cache: Option<&std::path::Path>) -> Result<RunOutput> {
    spec.validate()?;
    let jobs = spec.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Contract(format!("worker pool: {e}")))?;
    pool.install(|| match spec.kind {
        ExperimentKind::Revisit => run_revisit(spec, cache),
        ExperimentKind::Controlled => run_controlled(spec, cache),
        ExperimentKind::L2Distill => run_l2_distill(spec, cache),
        ExperimentKind::PiiControlled => run_pii(spec, cache),
    })
}

/// What a cell trains.
#[derive(Clone, Copy)]
enum Job {
    Unlearn(Objective, f64),
    Distill,
}

struct CellJob<'a> {
    group: String,
    scenario: String,
    region_seed: Option<u64>,
    original: &'a Original,
    mask: ValueVectorMask,
    job: Job,
}

struct CellResult {
    cell: Cell,
    curve: Option<MixCurve>,
    distill: Option<DistillSummary>,
}

fn run_cell(lab: &Lab, job: &CellJob<'_>) -> CellResult {
    let seed = job.original.seed;
    let mut cell = Cell {
        group: job.group.clone(),
        scenario: job.scenario.clone(),
        seed,
        region_seed: job.region_seed,
        region_size: job.mask.len(),
        ..Cell::default()
    };
    match try_cell(lab, job, &mut cell) {
        Ok((curve, distill)) => CellResult { cell, curve: Some(curve), distill },
        Err(e) => {
            log::error!("{}/{} seed {seed}: {e}", job.group, job.scenario);
            cell.error = Some(e.to_string());
            CellResult { cell, curve: None, distill: None }
        }
    }
}

fn try_cell(lab: &Lab, job: &CellJob<'_>, cell: &mut Cell) -> Result<(MixCurve, Option<DistillSummary>)> {
    let spec = &lab.spec;
    let theta_o = &job.original.params;
    let seed = job.original.seed;
    let (theta, distill) = match job.job {
        Job::Unlearn(objective, lr) => {
            cell.lr = lr;
            let cfg = TrainConfig { lr, seed, ..spec.training.unlearn.clone() };
            let (theta, log) = unlearn(theta_o, lab.forget_records(), &job.mask, objective, &spec.objective, &cfg)?;
            cell.steps = log.steps();
            cell.reached = log.reached_target;
            (theta, None)
        }
        Job::Distill => {
            let cfg = TrainConfig { seed, ..spec.training.distill.clone() };
            cell.lr = cfg.lr;
            let (theta, log) = distill_unlearn(
                theta_o,
                &lab.gold,
                &job.mask,
                &lab.forget_inputs(),
                &lab.retain_inputs(),
                spec.objective.l2_alpha,
                &cfg,
            )?;
            cell.steps = log.steps();
            let first = log.layer_residuals.first().cloned().unwrap_or_default();
            let last = log.layer_residuals.last().cloned().unwrap_or_default();
            let (a, b): (f64, f64) = (first.iter().sum(), last.iter().sum());
            let reduction = if a > 0.0 { 1.0 - b / a } else { 1.0 };
            cell.reached = reduction >= 0.9;
            let summary = DistillSummary {
                scenario: job.scenario.clone(),
                seed,
                initial_residual: a,
                final_residual: b,
                reduction,
                per_layer_initial: first,
                per_layer_final: last,
            };
            (theta, Some(summary))
        }
    };
    let curve = mixing_sweep(theta_o, &theta, spec.alpha_step, &lab.eval_set(), ("theta_o", &job.scenario))?;
    let end = curve.points.last().expect("non-empty grid");
    cell.final_stats = Some(ModelStats { fs: end.fs, rs: end.rs, mu: end.mu, fq: end.fq });
    cell.fs_span = Some(curve.fs_span());
    cell.aues = Some(aues(&curve.fs_rs(), spec.metrics.aues_observed_span)?);
    if let Some(points) = curve.mu_fq() {
        match mu95(&points, points[0].0) {
            Ok(v) => cell.mu95 = Some(v),
            Err(e @ Error::InsufficientUnlearning { .. }) => cell.mu95_note = Some(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    log::info!(
        "{}/{} seed {seed}: steps {}, FS {:.3}, RS {:.3}, AUES {:.4}, MU95 {}",
        cell.group,
        cell.scenario,
        cell.steps,
        end.fs,
        end.rs,
        cell.aues.unwrap_or(f64::NAN),
        cell.mu95.map_or("n/a".to_string(), |v| format!("{v:.3}"))
    );
    cell.curve = Some(curve_name(&cell.group, &curve_label(cell), seed));
    Ok((curve, distill))
}

fn curve_label(cell: &Cell) -> String {
    match cell.region_seed {
        Some(r) if cell.scenario == "random" => format!("random{r}"),
        _ => cell.scenario.clone(),
    }
}

fn run_cells(lab: &Lab, jobs: &[CellJob<'_>]) -> Vec<CellResult> {
    jobs.par_iter().map(|j| run_cell(lab, j)).collect()
}

fn originals(lab: &Lab, targets: &[(u64, ValueVectorMask)]) -> Result<Vec<Original>> {
    targets.par_iter().map(|(seed, t)| lab.original(*seed, t)).collect()
}

/// Base learning rate of `objective` and whether it was overridden.
fn base_lr(spec: &ExperimentSpec, objective: Objective) -> (f64, bool) {
    match spec.lr_overrides.get(&objective) {
        Some(&lr) => (lr, true),
        None => (spec.training.unlearn.lr, false),
    }
}

/// Chooses each objective's learning rate on the first seed: the smallest
/// grid value whose trials all reach the stop threshold and (with truth
/// metrics) all yield an MU95, then the smallest reaching the threshold,
/// then the one with the largest worst-case FS.
fn choose_lrs(
    lab: &Lab,
    original: &Original,
    scenarios: &[(String, ValueVectorMask)],
    objectives: &[Objective],
) -> Result<Vec<LrChoice>> {
    let spec = &lab.spec;
    let mut out = Vec::new();
    for &objective in objectives {
        let (base, overridden) = base_lr(spec, objective);
        if overridden || !spec.lr_search.enabled {
            let source = if overridden { "override" } else { "default" };
            out.push(LrChoice { objective, grid: vec![base], trials: Vec::new(), chosen: base, source: source.into() });
            continue;
        }
        let mut grid: Vec<f64> = spec.lr_search.factors.iter().map(|f| base * f).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let plan: Vec<(f64, &(String, ValueVectorMask))> =
            grid.iter().flat_map(|&lr| scenarios.iter().map(move |s| (lr, s))).collect();
        let trials = plan
            .par_iter()
            .map(|&(lr, (name, mask))| {
                let cfg = TrainConfig { lr, seed: original.seed, ..spec.training.unlearn.clone() };
                let (theta, log) =
                    unlearn(&original.params, lab.forget_records(), mask, objective, &spec.objective, &cfg)?;
                let fs = log.evals.last().and_then(|e| e.fs).unwrap_or(0.0);
                let mut mu95_value = None;
                if log.reached_target && spec.metrics.truth_metrics {
                    let curve = mixing_sweep(&original.params, &theta, spec.alpha_step, &lab.eval_set(), ("theta_o", name))?;
                    let points = curve.mu_fq().expect("truth metrics are on");
                    mu95_value = mu95(&points, points[0].0).ok();
                }
                Ok(LrTrial { lr, scenario: name.clone(), fs, steps: log.steps(), reached: log.reached_target, mu95: mu95_value })
            })
            .collect::<Result<Vec<_>>>()?;
        let per_lr = |lr: f64| trials.iter().filter(move |t| t.lr == lr);
        let truth = spec.metrics.truth_metrics;
        let chosen = grid
            .iter()
            .copied()
            .find(|&lr| per_lr(lr).all(|t| t.reached && (!truth || t.mu95.is_some())))
            .or_else(|| grid.iter().copied().find(|&lr| per_lr(lr).all(|t| t.reached)))
            .unwrap_or_else(|| {
                let mut best = (grid[0], f64::NEG_INFINITY);
                for &lr in &grid {
                    let worst = per_lr(lr).map(|t| t.fs).fold(f64::INFINITY, f64::min);
                    if worst > best.1 {
                        best = (lr, worst);
                    }
                }
                best.0
            });
        log::info!("{objective}: learning rate {chosen:e} from grid {grid:?}");
        out.push(LrChoice { objective, grid, trials, chosen, source: "search".into() });
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

fn summarize(cells: &[Cell], truth: bool) -> Vec<Summary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for c in cells {
        let k = (c.group.clone(), c.scenario.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = Vec::new();
    for (group, scenario) in keys {
        let of = |c: &&Cell| c.group == group && c.scenario == scenario && c.error.is_none();
        let mut metrics: Vec<(&str, Vec<f64>)> = vec![("aues", cells.iter().filter(of).filter_map(|c| c.aues).collect())];
        if truth {
            metrics.push(("mu95", cells.iter().filter(of).filter_map(|c| c.mu95).collect()));
        }
        for (metric, vals) in metrics {
            if vals.is_empty() {
                continue;
            }
            out.push(Summary {
                group: group.clone(),
                scenario: scenario.clone(),
                metric: metric.into(),
                n: vals.len(),
                mean: mean(&vals),
                sd: sample_sd(&vals),
            });
        }
    }
    out
}

/// Stratified comparisons of `scenario` against `baseline` within `group`:
/// every cell pair sharing a seed forms one stratum.
fn compare(
    spec: &ExperimentSpec,
    results: &[CellResult],
    group: &str,
    baseline: &str,
    scenario: &str,
    notes: &mut Vec<String>,
) -> Vec<Comparison> {
    let pick = |s: &str| -> Vec<&CellResult> {
        results
            .iter()
            .filter(|r| r.cell.group == group && r.cell.scenario == s && r.cell.error.is_none() && r.curve.is_some())
            .collect()
    };
    let (xs, bs) = (pick(scenario), pick(baseline));
    let pairs: Vec<(&CellResult, &CellResult)> = xs
        .iter()
        .flat_map(|x| bs.iter().filter(move |b| b.cell.seed == x.cell.seed).map(move |b| (*x, *b)))
        .collect();
    let label = format!("{group}: {scenario} vs {baseline}");
    let mut out = Vec::new();
    if pairs.is_empty() {
        notes.push(format!("{label}: no complete cell pairs, comparison omitted"));
        return out;
    }
    let seed_of = |metric: &str| rng::derive_labeled(spec.stats_seed, &format!("{group}/{scenario}/{baseline}/{metric}"));

    let strata: Vec<(Vec<FsRs>, Vec<FsRs>)> = pairs
        .iter()
        .map(|(x, b)| (fs_rs_points(x.curve.as_ref().unwrap()), fs_rs_points(b.curve.as_ref().unwrap())))
        .collect();
    let s = seed_of("aues");
    match aues_permutation_test_stratified(&strata, spec.stats_rounds, s, spec.metrics.aues_observed_span) {
        Ok(test) => out.push(Comparison {
            group: group.into(),
            metric: "aues".into(),
            baseline: baseline.into(),
            scenario: scenario.into(),
            n_strata: strata.len(),
            delta_abs: test.observed,
            test,
        }),
        Err(e) => notes.push(format!("{label}: AUES test failed: {e}")),
    }

    if !spec.metrics.truth_metrics {
        return out;
    }
    let mu_strata: Vec<(MuFqCurve, MuFqCurve)> = pairs
        .iter()
        .filter(|(x, b)| x.cell.mu95.is_some() && b.cell.mu95.is_some())
        .filter_map(|(x, b)| {
            Some((
                MuFqCurve::from_curve(x.curve.as_ref()?).ok()?,
                MuFqCurve::from_curve(b.curve.as_ref()?).ok()?,
            ))
        })
        .collect();
    if mu_strata.len() < pairs.len() {
        notes.push(format!(
            "{label}: MU95 compared over {} of {} seed pairs (others never crossed the MU threshold)",
            mu_strata.len(),
            pairs.len()
        ));
    }
    if mu_strata.is_empty() {
        return out;
    }
    match mu95_bootstrap_test_stratified(&mu_strata, spec.stats_rounds, seed_of("mu95")) {
        Ok(test) => out.push(Comparison {
            group: group.into(),
            metric: "mu95".into(),
            baseline: baseline.into(),
            scenario: scenario.into(),
            n_strata: mu_strata.len(),
            delta_abs: test.observed,
            test,
        }),
        Err(e) => notes.push(format!("{label}: MU95 test failed: {e}")),
    }
    out
}

fn assemble(
    lab: &Lab,
    originals: &[Original],
    lr_search: Vec<LrChoice>,
    results: Vec<CellResult>,
    comparisons: &[(String, String, String)],
    mut notes: Vec<String>,
    maps: Vec<NamedMap>,
) -> RunOutput {
    let spec = &lab.spec;
    let mut comps = Vec::new();
    for (g, base, s) in comparisons {
        comps.extend(compare(spec, &results, g, base, s, &mut notes));
    }
    let cells: Vec<Cell> = results.iter().map(|r| r.cell.clone()).collect();
    let mut summaries = summarize(&cells, spec.metrics.truth_metrics);
    if spec.kind == ExperimentKind::Revisit {
        // θ_o's own FQ: the reference value for every method's MU95.
        let fq: Vec<f64> = originals.iter().filter_map(|o| o.summary.stats.fq).collect();
        if !fq.is_empty() {
            summaries.push(Summary {
                group: "original".into(),
                scenario: "theta_o".into(),
                metric: "mu95".into(),
                n: fq.len(),
                mean: mean(&fq),
                sd: sample_sd(&fq),
            });
        }
    }
    let mut curves = Vec::new();
    let mut distill = Vec::new();
    for r in results {
        if let (Some(c), Some(name)) = (r.curve, r.cell.curve.clone()) {
            curves.push((name, c));
        }
        distill.extend(r.distill);
    }
    let report = ExperimentReport {
        kind: spec.kind,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: spec.config_hash(),
        seeds: spec.seeds.clone(),
        notes,
        setup: lab.setup.clone(),
        originals: originals.iter().map(|o| o.summary.clone()).collect(),
        lr_search,
        cells,
        summaries,
        comparisons: comps,
        distill,
    };
    RunOutput { report, curves, maps }
}

fn region_targets(model: &ModelConfig, spec: &ExperimentSpec) -> Result<Vec<(u64, Region)>> {
    spec.seeds.iter().map(|&s| Ok((s, Region::draw(model, spec.localization.ratio, s)?))).collect()
}

/// Oracle-versus-Random unlearning under every objective.
pub fn run_controlled(spec: &ExperimentSpec, cache: Option<&std::path::Path>) -> Result<RunOutput> {
    let lab = Lab::build(spec, cache)?;
    let regions = region_targets(&lab.model, spec)?;
    for (_, r) in &regions {
        if !r.target.is_disjoint(&r.random) {
            return Err(Error::Contract("oracle and random regions overlap".into()));
        }
    }
    let origs = originals(&lab, &regions.iter().map(|(s, r)| (*s, r.target.clone())).collect::<Vec<_>>())?;
    let first = &regions[0].1;
    let scen = vec![("oracle".to_string(), first.target.clone()), ("random".to_string(), first.random.clone())];
    let lrs = choose_lrs(&lab, &origs[0], &scen, &spec.objectives)?;

    let mut jobs = Vec::new();
    for (o, (_, region)) in origs.iter().zip(&regions) {
        for choice in &lrs {
            for (name, mask) in [("oracle", &region.target), ("random", &region.random)] {
                jobs.push(CellJob {
                    group: choice.objective.name().into(),
                    scenario: name.into(),
                    region_seed: None,
                    original: o,
                    mask: mask.clone(),
                    job: Job::Unlearn(choice.objective, choice.chosen),
                });
            }
        }
    }
    let results = run_cells(&lab, &jobs);
    let comparisons: Vec<(String, String, String)> =
        spec.objectives.iter().map(|o| (o.name().to_string(), "random".to_string(), "oracle".to_string())).collect();
    let mut notes = Vec::new();
    if !spec.metrics.truth_metrics {
        notes.push("truth-ratio metrics disabled: MU and FQ (and MU95) are not reported".into());
    }
    Ok(assemble(&lab, &origs, lrs, results, &comparisons, notes, Vec::new()))
}

/// The controlled protocol on the PII corpus; AUES only.
pub fn run_pii(spec: &ExperimentSpec, cache: Option<&std::path::Path>) -> Result<RunOutput> {
    let mut s = spec.clone();
    s.kind = ExperimentKind::PiiControlled;
    s.metrics.truth_metrics = false;
    if s.data.file.is_none() {
        s.data.corpus = crate::data::CorpusKind::Pii;
    }
    let mut out = run_controlled(&s, cache)?;
    out.report.config_hash = spec.config_hash();
    Ok(out)
}

fn expand_to_weights(config: &ModelConfig, map: &AttributionMap) -> Result<AttributionMap> {
    let scores = map.scores.iter().flat_map(|&s| std::iter::repeat_n(s, config.d_model)).collect();
    let mut out = AttributionMap::new(config, map.method, map.normalization, MaskMode::IndividualWeight, scores)?;
    out.secondary = map
        .secondary
        .as_ref()
        .map(|s| s.iter().flat_map(|&v| std::iter::repeat_n(v, config.d_model)).collect());
    Ok(out)
}

/// Region chosen by `method` on θ_o, with the map it came from.
fn localize(
    lab: &Lab,
    original: &Original,
    method: RevisitMethod,
    loc: &LocalizationConfig,
) -> Result<(ValueVectorMask, Option<AttributionMap>)> {
    let c = &lab.model;
    let (f, r) = (&lab.forget_examples, &lab.retain_examples);
    let map = match method {
        RevisitMethod::Random => unreachable!("random regions are drawn per region seed"),
        RevisitMethod::Activations => score_activations(&original.params, f)?,
        RevisitMethod::Memflex => {
            score_memflex(&original.params, f, r, &LocalizationConfig { seed: original.seed, ..loc.clone() })?
        }
        RevisitMethod::Wagle => score_wagle(&original.params, f, r, loc.wagle_gamma, loc.mode)?,
        RevisitMethod::Constant => constant_map(c, loc.mode, 0.0)?,
    };
    let ranked = if loc.mode == MaskMode::IndividualWeight && map.mode == MaskMode::ValueVector {
        expand_to_weights(c, &map)?
    } else {
        map.clone()
    };
    let mask = select_top_p(c, &ranked, loc.ratio)?;
    let keep = (map.method != Method::Given || map.normalization != Normalization::None).then_some(map);
    Ok((mask, keep))
}

fn random_region_seed(region_seed: u64, run_seed: u64) -> u64 {
    rng::derive_seed(region_seed, run_seed)
}

/// Localization methods against random regions, unlearning from θ_o.
pub fn run_revisit(spec: &ExperimentSpec, cache: Option<&std::path::Path>) -> Result<RunOutput> {
    let lab = Lab::build(spec, cache)?;
    let loc = &spec.localization;
    let targets: Vec<(u64, ValueVectorMask)> = region_targets(&lab.model, spec)?
        .into_iter()
        .map(|(s, r)| (s, r.target))
        .collect();
    let origs = originals(&lab, &targets)?;

    // Regions per seed: (scenario, region seed, mask).
    let mut maps = Vec::new();
    let mut regions: Vec<Vec<(String, Option<u64>, ValueVectorMask)>> = Vec::new();
    for o in &origs {
        let mut per = Vec::new();
        for &m in &spec.methods {
            if m == RevisitMethod::Random {
                for &r in &spec.random_seeds {
                    let mask = select_random(&lab.model, loc.mode, loc.ratio, random_region_seed(r, o.seed), None)?;
                    per.push(("random".to_string(), Some(r), mask));
                }
            } else {
                let (mask, map) = localize(&lab, o, m, loc)?;
                if let Some(map) = map {
                    maps.push((map_name(m.name(), o.seed), map));
                }
                per.push((m.name().to_string(), None, mask));
            }
        }
        regions.push(per);
    }
    let search_region = regions[0]
        .iter()
        .find(|(s, _, _)| s == "random")
        .or(regions[0].first())
        .map(|(s, _, m)| (s.clone(), m.clone()))
        .expect("at least one method");
    let lrs = choose_lrs(&lab, &origs[0], &[search_region], &spec.objectives)?;

    let mut jobs = Vec::new();
    for (o, per) in origs.iter().zip(&regions) {
        for choice in &lrs {
            for (scenario, region_seed, mask) in per {
                jobs.push(CellJob {
                    group: choice.objective.name().into(),
                    scenario: scenario.clone(),
                    region_seed: *region_seed,
                    original: o,
                    mask: mask.clone(),
                    job: Job::Unlearn(choice.objective, choice.chosen),
                });
            }
        }
    }
    let results = run_cells(&lab, &jobs);
    let mut comparisons = Vec::new();
    if spec.methods.contains(&RevisitMethod::Random) {
        for o in &spec.objectives {
            for m in spec.methods.iter().filter(|&&m| m != RevisitMethod::Random) {
                comparisons.push((o.name().to_string(), "random".to_string(), m.name().to_string()));
            }
        }
    }
    Ok(assemble(&lab, &origs, lrs, results, &comparisons, vec![REVISIT_NOTE.to_string()], maps))
}

/// Label of the `i`-th random region: `random_a`, `random_b`, ...
fn random_label(i: usize) -> String {
    let letter = (b'a' + (i % 26) as u8) as char;
    if i < 26 {
        format!("random_{letter}")
    } else {
        format!("random_{letter}{}", i / 26)
    }
}

/// L2 distillation of θ_r's MLP outputs through the oracle region and
/// several random regions.
pub fn run_l2_distill(spec: &ExperimentSpec, cache: Option<&std::path::Path>) -> Result<RunOutput> {
    let lab = Lab::build(spec, cache)?;
    let regions = region_targets(&lab.model, spec)?;
    let origs = originals(&lab, &regions.iter().map(|(s, r)| (*s, r.target.clone())).collect::<Vec<_>>())?;
    let mut jobs = Vec::new();
    for o in &origs {
        jobs.push(CellJob {
            group: "l2".into(),
            scenario: "oracle".into(),
            region_seed: None,
            original: o,
            mask: o.target.clone(),
            job: Job::Distill,
        });
        for (i, &r) in spec.random_seeds.iter().enumerate() {
            let mask = select_random(
                &lab.model,
                MaskMode::ValueVector,
                spec.localization.ratio,
                random_region_seed(r, o.seed),
                Some(&o.target),
            )?;
            jobs.push(CellJob {
                group: "l2".into(),
                scenario: random_label(i),
                region_seed: Some(r),
                original: o,
                mask,
                job: Job::Distill,
            });
        }
    }
    let results = run_cells(&lab, &jobs);
    let comparisons: Vec<(String, String, String)> = (0..spec.random_seeds.len())
        .map(|i| ("l2".to_string(), random_label(i), "oracle".to_string()))
        .collect();
    Ok(assemble(&lab, &origs, Vec::new(), results, &comparisons, Vec::new(), Vec::new()))
}
