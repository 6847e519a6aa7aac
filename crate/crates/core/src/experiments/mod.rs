//! Experiment specifications, orchestration and report emission.

mod runners;
mod setup;

pub use runners::{run, run_controlled, run_l2_distill, run_pii, run_revisit, RunOutput};
pub use setup::{Lab, Original};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::CorpusKind;
use crate::error::{Error, Result};
use crate::evaluation::MetricConfig;
use crate::localization::{AttributionMap, LocalizationConfig};
use crate::model::ModelConfig;
use crate::objectives::{Objective, ObjectiveConfig};
use crate::stats::TestResult;
use crate::training::TrainConfig;

#[cfg(test)]
mod tests;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Revisit,
    Controlled,
    L2Distill,
    PiiControlled,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Revisit => "revisit",
            ExperimentKind::Controlled => "controlled",
            ExperimentKind::L2Distill => "l2_distill",
            ExperimentKind::PiiControlled => "pii_controlled",
        }
    }
}

/// Localization methods compared by the revisit experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisitMethod {
    Random,
    Activations,
    Memflex,
    Wagle,
    /// Top-p of a constant map: the region fixed by the tie-break order.
    Constant,
}

impl RevisitMethod {
    pub fn name(self) -> &'static str {
        match self {
            RevisitMethod::Random => "random",
            RevisitMethod::Activations => "activations",
            RevisitMethod::Memflex => "memflex",
            RevisitMethod::Wagle => "wagle",
            RevisitMethod::Constant => "constant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub corpus: CorpusKind,
    pub n_entities: usize,
    pub attrs_per_entity: usize,
    pub k_perturbed: usize,
    /// Record count of the PII corpus.
    pub pii_records: usize,
    pub forget_ratio: f64,
    /// Seed of the corpus, split and pretraining texts.
    pub seed: u64,
    /// Question/answer texts used to pretrain θ_p; 0 skips pretraining.
    pub pretrain_texts: usize,
    /// A corpus file replacing the generator.
    pub file: Option<PathBuf>,
    pub lenient: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusKind::Author,
            n_entities: 50,
            attrs_per_entity: 4,
            k_perturbed: 3,
            pii_records: 200,
            forget_ratio: 0.10,
            seed: 0,
            pretrain_texts: 3000,
            file: None,
            lenient: false,
        }
    }
}

/// Optimization settings of every pipeline stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedules {
    pub pretrain: TrainConfig,
    pub retain: TrainConfig,
    pub inject: TrainConfig,
    pub unlearn: TrainConfig,
    pub distill: TrainConfig,
}

impl Default for Schedules {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            pretrain: TrainConfig { lr: 2e-3, epochs: 3, ..base.clone() },
            retain: TrainConfig { lr: 2e-3, epochs: 60, target: Some(0.9), ..base.clone() },
            inject: TrainConfig { lr: 3e-2, epochs: 300, target: Some(0.9), ..base.clone() },
            unlearn: TrainConfig { lr: 1e-2, epochs: 40, target: Some(0.99), ..base.clone() },
            distill: TrainConfig { lr: 1e-2, epochs: 60, ..base },
        }
    }
}

impl Schedules {
    pub fn validate(&self) -> Result<()> {
        for s in [&self.pretrain, &self.retain, &self.inject, &self.unlearn, &self.distill] {
            s.validate()?;
        }
        Ok(())
    }
}

/// Per-objective learning-rate search over `base · factor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSearch {
    pub enabled: bool,
    pub factors: Vec<f64>,
}

impl Default for LrSearch {
    fn default() -> Self {
        Self { enabled: true, factors: vec![1.0 / 3.0, 1.0, 3.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub training: Schedules,
    pub objectives: Vec<Objective>,
    pub objective: ObjectiveConfig,
    pub localization: LocalizationConfig,
    /// Revisit only.
    pub methods: Vec<RevisitMethod>,
    pub seeds: Vec<u64>,
    /// Seeds of the random regions in revisit and L2 runs.
    pub random_seeds: Vec<u64>,
    pub lr_overrides: BTreeMap<Objective, f64>,
    pub lr_search: LrSearch,
    pub alpha_step: f64,
    pub metrics: MetricConfig,
    pub stats_rounds: usize,
    pub stats_seed: u64,
    /// Not part of the configuration hash.
    pub output_dir: Option<PathBuf>,
    /// Not part of the configuration hash.
    pub cache_dir: Option<PathBuf>,
    /// Worker threads; not part of the configuration hash.
    pub jobs: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Controlled,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            training: Schedules::default(),
            objectives: vec![Objective::Npo, Objective::Rmu],
            objective: ObjectiveConfig::default(),
            localization: LocalizationConfig::default(),
            methods: vec![RevisitMethod::Random, RevisitMethod::Activations, RevisitMethod::Memflex, RevisitMethod::Wagle],
            seeds: vec![0, 1, 2, 3, 4],
            random_seeds: vec![7, 11, 49],
            lr_overrides: BTreeMap::new(),
            lr_search: LrSearch::default(),
            alpha_step: 0.05,
            metrics: MetricConfig::default(),
            stats_rounds: crate::stats::DEFAULT_ROUNDS,
            stats_seed: 0,
            output_dir: None,
            cache_dir: None,
            jobs: None,
        }
    }
}

impl ExperimentSpec {
    /// Defaults for `kind`.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let mut s = Self { kind, ..Self::default() };
        match kind {
            ExperimentKind::Revisit => s.objectives = vec![Objective::Npo],
            ExperimentKind::L2Distill => s.objectives = Vec::new(),
            ExperimentKind::PiiControlled => {
                s.data.corpus = CorpusKind::Pii;
                s.metrics.truth_metrics = false;
            }
            ExperimentKind::Controlled => {}
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            return bad("seed list has duplicates".into());
        }
        if matches!(self.kind, ExperimentKind::Controlled | ExperimentKind::PiiControlled) && self.seeds.len() < 3 {
            return bad(format!("{} needs at least 3 seeds", self.kind.name()));
        }
        self.localization.validate()?;
        if !(self.data.forget_ratio > 0.0 && self.data.forget_ratio < 1.0) {
            return bad(format!("forget ratio {} outside (0, 1)", self.data.forget_ratio));
        }
        if self.kind != ExperimentKind::L2Distill && self.objectives.is_empty() {
            return bad("no objectives".into());
        }
        if self.kind == ExperimentKind::Revisit && self.methods.is_empty() {
            return bad("no localization methods".into());
        }
        if matches!(self.kind, ExperimentKind::Revisit | ExperimentKind::L2Distill) && self.random_seeds.is_empty() {
            return bad("no random-region seeds".into());
        }
        if self.kind == ExperimentKind::L2Distill && self.random_seeds.len() < 3 {
            return bad("L2 distillation needs at least 3 random regions".into());
        }
        if self.kind != ExperimentKind::Revisit && self.localization.mode != crate::model::MaskMode::ValueVector {
            return bad("individual-weight regions are only supported by the revisit experiment".into());
        }
        if self.lr_search.factors.is_empty() || self.lr_search.factors.iter().any(|f| !(*f > 0.0)) {
            return bad("lr search factors must be positive".into());
        }
        if let Some((o, lr)) = self.lr_overrides.iter().find(|(_, lr)| !(**lr > 0.0)) {
            return bad(format!("lr override for {o} is {lr}"));
        }
        if self.stats_rounds < crate::stats::MIN_ROUNDS {
            return bad(format!("stats_rounds must be at least {}", crate::stats::MIN_ROUNDS));
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive".into());
        }
        crate::evaluation::alpha_grid(self.alpha_step)?;
        self.training.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of every result-affecting field.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        if let Some(m) = v.as_object_mut() {
            for k in ["output_dir", "cache_dir", "jobs"] {
                m.remove(k);
            }
        }
        // serde_json maps are ordered by key, so this text is canonical.
        let text = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Parses a spec, rejecting unknown keys.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = serde_json::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec(&text)
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `text` over the defaults of `kind`. A `kind` key, if present,
/// must agree. Validation is left to the caller.
pub fn parse_spec_for(kind: ExperimentKind, text: &str) -> Result<ExperimentSpec> {
    let over: serde_json::Value = serde_json::from_str(text)?;
    if !over.is_object() {
        return Err(Error::Contract("spec must be a JSON object".into()));
    }
    if let Some(k) = over.get("kind") {
        let k: ExperimentKind = serde_json::from_value(k.clone())?;
        if k != kind {
            return Err(Error::Contract(format!("spec is for {}, not {}", k.name(), kind.name())));
        }
    }
    let mut base = serde_json::to_value(ExperimentSpec::for_kind(kind))?;
    merge(&mut base, over);
    Ok(serde_json::from_value(base)?)
}

/// Headline metrics of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub fs: f64,
    pub rs: f64,
    pub mu: Option<f64>,
    pub fq: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupSummary {
    pub vocab_size: usize,
    pub num_params: usize,
    pub n_records: usize,
    pub n_forget: usize,
    pub n_retain: usize,
    pub max_seq_len: usize,
    pub pretrained: ModelStats,
    pub retain_epochs: usize,
    pub retain_reached: bool,
    pub gold: ModelStats,
}

/// The injected model of one seed; `stats.fq` doubles as the MU95 baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginalSummary {
    pub seed: u64,
    pub target_size: usize,
    pub forget_es: f64,
    pub rs_drop: f64,
    pub inject_epochs: usize,
    pub inject_reached: bool,
    pub stats: ModelStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrTrial {
    pub lr: f64,
    pub scenario: String,
    pub fs: f64,
    pub steps: usize,
    pub reached: bool,
    /// MU95 of the trial's mixing sweep, when the stop target was reached
    /// and the MU threshold was crossed.
    pub mu95: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrChoice {
    pub objective: Objective,
    pub grid: Vec<f64>,
    pub trials: Vec<LrTrial>,
    pub chosen: f64,
    /// `search`, `override` or `default`.
    pub source: String,
}

/// One (group, scenario, seed) run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Objective name, or `l2`.
    pub group: String,
    /// `oracle`/`random`, a localization method, or a random-region label.
    pub scenario: String,
    pub seed: u64,
    /// Seed of a random region, when the scenario has several per seed.
    pub region_seed: Option<u64>,
    pub region_size: usize,
    pub lr: f64,
    pub steps: usize,
    pub reached: bool,
    pub final_stats: Option<ModelStats>,
    pub aues: Option<f64>,
    pub mu95: Option<f64>,
    /// Why MU95 is absent when it was expected.
    pub mu95_note: Option<String>,
    pub fs_span: Option<f64>,
    /// Relative path of the curve CSV.
    pub curve: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub group: String,
    pub scenario: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent below two values.
    pub sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub group: String,
    pub metric: String,
    pub baseline: String,
    pub scenario: String,
    pub n_strata: usize,
    pub delta_abs: f64,
    pub test: TestResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub scenario: String,
    pub seed: u64,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// `1 − final / initial`.
    pub reduction: f64,
    pub per_layer_initial: Vec<f64>,
    pub per_layer_final: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub notes: Vec<String>,
    pub setup: SetupSummary,
    pub originals: Vec<OriginalSummary>,
    pub lr_search: Vec<LrChoice>,
    pub cells: Vec<Cell>,
    pub summaries: Vec<Summary>,
    pub comparisons: Vec<Comparison>,
    pub distill: Vec<DistillSummary>,
}

impl ExperimentReport {
    pub fn summary(&self, group: &str, scenario: &str, metric: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.group == group && s.scenario == scenario && s.metric == metric)
    }

    pub fn comparison(&self, group: &str, metric: &str, scenario: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.group == group && c.metric == metric && c.scenario == scenario)
    }
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub const SUMMARY_HEADER: &str = "group,scenario,seed,region_size,lr,steps,reached,aues,mu95,fs_span,fs,rs,mu,fq,error";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `summary.csv`, every curve and attribution map
/// under `dir`, and returns the written paths.
pub fn emit_report(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    let mut written = Vec::new();

    let json = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&out.report)?;
    text.push('\n');
    write_atomic(&json, text.as_bytes())?;
    written.push(json);

    let csv = dir.join("summary.csv");
    let mut buf = Vec::new();
    writeln!(buf, "{SUMMARY_HEADER}").expect("write to memory");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &out.report.cells {
        let s = c.final_stats.as_ref();
        writeln!(
            buf,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&c.group),
            csv_field(&c.scenario),
            c.seed,
            c.region_size,
            c.lr,
            c.steps,
            c.reached,
            opt(c.aues),
            opt(c.mu95),
            opt(c.fs_span),
            opt(s.map(|s| s.fs)),
            opt(s.map(|s| s.rs)),
            opt(s.and_then(|s| s.mu)),
            opt(s.and_then(|s| s.fq)),
            csv_field(c.error.as_deref().unwrap_or("")),
        )
        .expect("write to memory");
    }
    write_atomic(&csv, &buf)?;
    written.push(csv);

    for (name, curve) in &out.curves {
        let p = dir.join(name);
        curve.write_csv(&p)?;
        written.push(p);
    }
    if !out.maps.is_empty() {
        let maps_dir = dir.join("maps");
        std::fs::create_dir_all(&maps_dir).map_err(|e| Error::io(&maps_dir, e))?;
        for (name, map) in &out.maps {
            let p = dir.join(name);
            map.write_csv(&p)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Relative curve path of a cell.
pub(crate) fn curve_name(group: &str, scenario: &str, seed: u64) -> String {
    format!("curves/{group}-{scenario}-s{seed}.csv")
}

pub(crate) fn map_name(method: &str, seed: u64) -> String {
    format!("maps/{method}-s{seed}.csv")
}

pub(crate) type NamedMap = (String, AttributionMap);
