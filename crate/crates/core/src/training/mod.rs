//! Masked training pipelines: pretraining, retain training, forget injection,
//! unlearning and MLP-output distillation.

mod optim;

pub use optim::{clip_grad_norm, Optimizer, OptimizerKind};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedRecord, Example};
use crate::error::{Error, Result};
use crate::evaluation::{forget_strength, mean_extraction_strength, retain_strength};
use crate::model::{ParamSelection, Parameters, TokenId, ValueVectorMask};
use crate::objectives::{
    dpo_reference, layer_residuals, mlp_outputs, rmu_direction, sequence_logprobs, DpoPair, Loss, Objective,
    ObjectiveConfig, Term,
};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epoch budget.
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Stop once the stage's metric reaches this value (stage-specific).
    pub target: Option<f64>,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 5,
            batch_size: 16,
            weight_decay: 0.01,
            optimizer: OptimizerKind::AdamW,
            seed: 0,
            target: None,
            max_steps: None,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 || self.weight_decay < 0.0 {
            return Err(Error::Contract("train config needs lr > 0, epochs ≥ 1, batch_size ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    /// Number of optimizer steps taken when the snapshot was taken.
    pub step: usize,
    pub epoch: usize,
    pub fs: Option<f64>,
    pub rs: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Loss of every optimizer step.
    pub losses: Vec<f64>,
    pub evals: Vec<EvalEntry>,
    /// Per-epoch per-layer MLP-output residuals (distillation only).
    pub layer_residuals: Vec<Vec<f64>>,
    pub reached_target: bool,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainLog {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    pub fn last_eval(&self) -> Option<&EvalEntry> {
        self.evals.last()
    }

    /// Columns `step, loss, fs, rs`; metric cells are empty at steps without a snapshot.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "step,loss,fs,rs").map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, loss) in self.losses.iter().enumerate() {
            let step = i + 1;
            let e = self.evals.iter().rev().find(|e| e.step == step);
            writeln!(f, "{step},{loss},{},{}", opt(e.and_then(|e| e.fs)), opt(e.and_then(|e| e.rs))).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// Shuffled index batches for one epoch.
fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(rng::derive_seed(seed, epoch as u64)));
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Endless shuffled stream of indices, reshuffled on every pass.
struct IndexStream {
    n: usize,
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    pos: usize,
}

impl IndexStream {
    fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, pass: 0, order: Vec::new(), pos: 0 }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut rng::seeded(rng::derive_seed(self.seed, self.pass)));
                self.pass += 1;
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// One masked optimizer step on `loss`; returns the loss value.
struct Stepper {
    opt: Optimizer,
    selection: ParamSelection,
    max_grad_norm: Option<f64>,
    steps: usize,
}

impl Stepper {
    fn new(params: &Parameters, cfg: &TrainConfig, selection: ParamSelection) -> Self {
        let opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.weight_decay, params.layout().n_tensors);
        Self { opt, selection, max_grad_norm: cfg.max_grad_norm, steps: 0 }
    }

    fn step(&mut self, params: &mut Parameters, loss: &Loss<'_>) -> Result<f64> {
        let (value, mut grads) = match loss.value_and_grad(params, &self.selection) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::Divergence { step: self.steps, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        self.selection.apply(&mut grads);
        if !grads.is_finite() {
            return Err(Error::Divergence { step: self.steps, loss: value });
        }
        if let Some(c) = self.max_grad_norm {
            clip_grad_norm(&mut grads, c);
        }
        self.opt.step(params, &grads, &self.selection);
        self.steps += 1;
        if !params.is_finite() {
            return Err(Error::Divergence { step: self.steps - 1, loss: value });
        }
        Ok(value)
    }
}

fn budget_exhausted(cfg: &TrainConfig, steps: usize) -> bool {
    cfg.max_steps.is_some_and(|m| steps >= m)
}

fn selection_for(params: &Parameters, mask: Option<&ValueVectorMask>) -> Result<ParamSelection> {
    match mask {
        None => Ok(ParamSelection::everything(params.config())),
        Some(m) => {
            if m.is_empty() {
                return Err(Error::Contract("training mask is empty".into()));
            }
            if m.total() != ValueVectorMask::units(params.config(), m.mode()) {
                return Err(Error::Contract("mask does not match the model config".into()));
            }
            Ok(m.selection(params.config()))
        }
    }
}

/// Answer-NLL training of every parameter for the full epoch budget.
pub fn train_lm(init: &Parameters, examples: &[Example], cfg: &TrainConfig) -> Result<(Parameters, TrainLog)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut params = init.clone();
    let mut stepper = Stepper::new(&params, cfg, ParamSelection::everything(params.config()));
    let mut log = TrainLog::default();
    'outer: for epoch in 0..cfg.epochs {
        for b in epoch_batches(examples.len(), cfg.batch_size, cfg.seed, epoch) {
            if budget_exhausted(cfg, stepper.steps) {
                break 'outer;
            }
            let batch = pick(examples, &b);
            log.losses.push(stepper.step(&mut params, &Loss::single(Term::Nll(&batch)))?);
        }
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((params, log))
}

/// Full-parameter training on the retain set until retain ES reaches the
/// target (default 0.9), checked after every epoch.
pub fn train_full(pretrained: &Parameters, retain: &[Example], cfg: &TrainConfig) -> Result<(Parameters, TrainLog)> {
    cfg.validate()?;
    let target = cfg.target.unwrap_or(0.9);
    let start = Instant::now();
    let mut params = pretrained.clone();
    let mut stepper = Stepper::new(&params, cfg, ParamSelection::everything(params.config()));
    let mut log = TrainLog::default();
    let mut prev_mean = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        let first = log.losses.len();
        for b in epoch_batches(retain.len(), cfg.batch_size, cfg.seed, epoch) {
            if budget_exhausted(cfg, stepper.steps) {
                break;
            }
            let batch = pick(retain, &b);
            log.losses.push(stepper.step(&mut params, &Loss::single(Term::Nll(&batch)))?);
        }
        let epoch_losses = &log.losses[first..];
        if !epoch_losses.is_empty() {
            let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
            if mean > prev_mean {
                log::warn!("retain training: epoch {epoch} mean loss {mean:.5} rose from {prev_mean:.5}");
            }
            prev_mean = mean;
        }
        let rs = retain_strength(&params, retain)?;
        log.evals.push(EvalEntry { step: stepper.steps, epoch, fs: None, rs: Some(rs) });
        log::debug!("retain training epoch {epoch}: rs {rs:.4}");
        if rs >= target {
            log.reached_target = true;
            break;
        }
        if budget_exhausted(cfg, stepper.steps) {
            break;
        }
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((params, log))
}

/// Trains the forget set into `target_region` with the loss
/// `NLL(forget) + λ_retain · NLL(retain)` until forget ES reaches the target
/// (default 0.9), checked after every epoch. An unreached target is logged,
/// not an error.
pub fn inject_forget(
    gold: &Parameters,
    forget: &[Example],
    retain: &[Example],
    target_region: &ValueVectorMask,
    lambda_retain: f64,
    cfg: &TrainConfig,
) -> Result<(Parameters, TrainLog)> {
    cfg.validate()?;
    if forget.is_empty() {
        return Err(Error::Contract("injection needs a non-empty forget set".into()));
    }
    let target = cfg.target.unwrap_or(0.9);
    let start = Instant::now();
    let mut params = gold.clone();
    let mut stepper = Stepper::new(&params, cfg, selection_for(&params, Some(target_region))?);
    let mut retain_stream = IndexStream::new(retain.len(), rng::derive_labeled(cfg.seed, "inject-retain"));
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        for b in epoch_batches(forget.len(), cfg.batch_size, cfg.seed, epoch) {
            if budget_exhausted(cfg, stepper.steps) {
                break;
            }
            let fb = pick(forget, &b);
            let mut loss = Loss::single(Term::Nll(&fb));
            let rb;
            if lambda_retain > 0.0 && !retain.is_empty() {
                rb = pick(retain, &retain_stream.take(b.len()));
                loss = loss.with(lambda_retain, Term::Nll(&rb));
            }
            log.losses.push(stepper.step(&mut params, &loss)?);
        }
        let es = mean_extraction_strength(&params, forget)?;
        log.evals.push(EvalEntry { step: stepper.steps, epoch, fs: Some(1.0 - es), rs: None });
        log::debug!("injection epoch {epoch}: forget es {es:.4}");
        if es >= target {
            log.reached_target = true;
            break;
        }
        if budget_exhausted(cfg, stepper.steps) {
            break;
        }
    }
    if !log.reached_target {
        let fs = log.last_eval().and_then(|e| e.fs).unwrap_or(1.0);
        log::warn!("injection stopped at forget ES {:.4} below target {target}", 1.0 - fs);
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((params, log))
}

/// Precomputed reference quantities for an unlearning objective.
enum Prepared {
    Wga,
    Npo(Vec<f64>),
    Dpo(Vec<DpoPair>, Vec<(f64, f64)>),
    Rmu(usize, Vec<f64>),
}

/// Unlearns `forget` from `original` with updates restricted to `mask`.
///
/// Forget strength is checked after every step; training stops once it
/// reaches the target (default 0.95) or the epoch budget runs out.
pub fn unlearn(
    original: &Parameters,
    forget: &[EncodedRecord],
    mask: &ValueVectorMask,
    objective: Objective,
    obj: &ObjectiveConfig,
    cfg: &TrainConfig,
) -> Result<(Parameters, TrainLog)> {
    cfg.validate()?;
    obj.validate(original.config())?;
    if forget.is_empty() {
        return Err(Error::Contract("unlearning needs a non-empty forget set".into()));
    }
    let target = cfg.target.unwrap_or(0.95);
    let start = Instant::now();
    let examples: Vec<Example> = forget.iter().map(|r| r.example.clone()).collect();
    let prepared = match objective {
        Objective::Wga => Prepared::Wga,
        Objective::Npo => Prepared::Npo(sequence_logprobs(original, &examples)?),
        Objective::Dpo => {
            let pairs = forget.iter().map(DpoPair::from_record).collect::<Result<Vec<_>>>()?;
            let r = dpo_reference(original, &pairs)?;
            Prepared::Dpo(pairs, r)
        }
        Objective::Rmu => Prepared::Rmu(
            obj.rmu_layer(original.config()),
            rmu_direction(original.config().d_model, obj.rmu_seed),
        ),
    };
    let mut params = original.clone();
    let mut stepper = Stepper::new(&params, cfg, selection_for(&params, Some(mask))?);
    let mut log = TrainLog::default();
    let fs0 = forget_strength(&params, &examples)?;
    log.evals.push(EvalEntry { step: 0, epoch: 0, fs: Some(fs0), rs: None });
    if fs0 >= target {
        log.reached_target = true;
    }
    'outer: for epoch in 0..cfg.epochs {
        if log.reached_target {
            break;
        }
        for b in epoch_batches(examples.len(), cfg.batch_size, cfg.seed, epoch) {
            if budget_exhausted(cfg, stepper.steps) {
                break 'outer;
            }
            let batch = pick(&examples, &b);
            let value = match &prepared {
                // Descend on the negated WGA value, i.e. suppress likelihood;
                // the log keeps the value itself.
                Prepared::Wga => -stepper.step(
                    &mut params,
                    &Loss::new().with(-1.0, Term::Wga { batch: &batch, alpha: obj.wga_alpha }),
                )?,
                Prepared::Npo(r) => {
                    let rb = pick(r, &b);
                    stepper.step(&mut params, &Loss::single(Term::Npo { batch: &batch, reference: &rb, beta: obj.npo_beta }))?
                }
                Prepared::Dpo(pairs, r) => {
                    let pb = pick(pairs, &b);
                    let rb = pick(r, &b);
                    stepper.step(
                        &mut params,
                        &Loss::single(Term::Dpo { pairs: &pb, reference: &rb, beta: obj.dpo_beta }),
                    )?
                }
                Prepared::Rmu(layer, u) => stepper.step(
                    &mut params,
                    &Loss::single(Term::Rmu { batch: &batch, layer: *layer, scale: obj.rmu_scale, direction: u }),
                )?,
            };
            log.losses.push(value);
            let fs = forget_strength(&params, &examples)?;
            log.evals.push(EvalEntry { step: stepper.steps, epoch, fs: Some(fs), rs: None });
            if fs >= target {
                log.reached_target = true;
                break 'outer;
            }
        }
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((params, log))
}

/// Distills per-layer MLP outputs of `gold` into `original` through `mask`.
///
/// Each step pairs a forget batch with an equally sized retain batch (weighted
/// by `l2_alpha`). Per-layer forget-input residuals are logged before
/// training and after every epoch.
pub fn distill_unlearn(
    original: &Parameters,
    gold: &Parameters,
    mask: &ValueVectorMask,
    forget: &[Vec<TokenId>],
    retain: &[Vec<TokenId>],
    l2_alpha: f64,
    cfg: &TrainConfig,
) -> Result<(Parameters, TrainLog)> {
    cfg.validate()?;
    if forget.is_empty() {
        return Err(Error::Contract("distillation needs forget inputs".into()));
    }
    let start = Instant::now();
    let mut params = original.clone();
    let mut stepper = Stepper::new(&params, cfg, selection_for(&params, Some(mask))?);
    let mut retain_stream = IndexStream::new(retain.len(), rng::derive_labeled(cfg.seed, "distill-retain"));
    let (a, b) = (params.config(), gold.config());
    if (a.n_layers, a.d_model, a.d_ff, a.vocab_size) != (b.n_layers, b.d_model, b.d_ff, b.vocab_size) {
        return Err(Error::Contract("distillation target has a different model config".into()));
    }
    let forget_targets = mlp_outputs(gold, forget)?;
    let retain_targets = if l2_alpha > 0.0 { mlp_outputs(gold, retain)? } else { vec![Vec::new(); retain.len()] };
    let mut log = TrainLog::default();
    log.layer_residuals.push(layer_residuals(&params, gold, forget)?);
    if log.layer_residuals[0].iter().all(|&r| r == 0.0) {
        log.reached_target = true;
        log.wall_clock_secs = start.elapsed().as_secs_f64();
        return Ok((params, log));
    }
    'outer: for epoch in 0..cfg.epochs {
        for b in epoch_batches(forget.len(), cfg.batch_size, cfg.seed, epoch) {
            if budget_exhausted(cfg, stepper.steps) {
                break 'outer;
            }
            let fb = pick(forget, &b);
            let ft = pick(&forget_targets, &b);
            let mut loss = Loss::single(Term::L2 { inputs: &fb, targets: &ft });
            let (rb, rt);
            if l2_alpha > 0.0 && !retain.is_empty() {
                let idx = retain_stream.take(b.len());
                rb = pick(retain, &idx);
                rt = pick(&retain_targets, &idx);
                loss = loss.with(l2_alpha, Term::L2 { inputs: &rb, targets: &rt });
            }
            let v = stepper.step(&mut params, &loss)?;
            log.losses.push(v);
        }
        let res = layer_residuals(&params, gold, forget)?;
        log::debug!("distillation epoch {epoch}: residual {:.6}", res.iter().sum::<f64>());
        log.layer_residuals.push(res);
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((params, log))
}

#[cfg(test)]
mod tests;
