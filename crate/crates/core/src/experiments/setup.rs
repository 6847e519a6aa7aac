//! Shared experiment state: corpus, θ_p, θ_r, and per-seed θ_o, with an
//! optional on-disk cache.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentSpec, ModelStats, OriginalSummary, SetupSummary};
use crate::data::{
    author_vocabulary, generate_author_corpus, generate_pii_corpus, load_json, pii_vocabulary, pretraining_texts,
    split, Corpus, CorpusKind, EncodedRecord, Example, LoadOptions, SplitData, Tokenizer,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalSet};
use crate::model::{load_parameters, save_parameters, ModelConfig, Parameters, TokenId, ValueVectorMask};
use crate::training::{inject_forget, train_full, train_lm};

/// Training outcome stored next to a cached parameter file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct StageInfo {
    epochs: usize,
    reached: bool,
}

pub struct Lab {
    pub spec: ExperimentSpec,
    pub corpus: Corpus,
    pub tokenizer: Tokenizer,
    pub data: SplitData,
    pub model: ModelConfig,
    pub forget_examples: Vec<Example>,
    pub retain_examples: Vec<Example>,
    pub pretrained: Parameters,
    pub gold: Parameters,
    pub gold_ratios: Option<Vec<f64>>,
    pub setup: SetupSummary,
    cache: Option<PathBuf>,
    gold_key: String,
}

/// θ_o of one seed with its target region.
pub struct Original {
    pub seed: u64,
    pub params: Parameters,
    pub target: ValueVectorMask,
    pub summary: OriginalSummary,
}

fn key(parts: &serde_json::Value) -> String {
    let text = serde_json::to_string(parts).expect("value serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

impl Lab {
    /// Builds the corpus and trains (or loads) θ_p and θ_r.
    pub fn build(spec: &ExperimentSpec, cache: Option<&Path>) -> Result<Self> {
        spec.validate()?;
        let d = &spec.data;
        let (raw, tokenizer) = match (&d.file, d.corpus) {
            (Some(path), _) => {
                let c = load_json(path, LoadOptions { lenient: d.lenient })?;
                let tok = Tokenizer::from_texts(c.records.iter().flat_map(|r| r.texts()));
                (c, tok)
            }
            (None, CorpusKind::Author) => (
                generate_author_corpus(d.seed, d.n_entities, d.attrs_per_entity, d.k_perturbed)?,
                Tokenizer::new(author_vocabulary().iter().map(String::as_str)),
            ),
            (None, CorpusKind::Pii) => (
                generate_pii_corpus(d.seed, d.pii_records)?,
                Tokenizer::new(pii_vocabulary().iter().map(String::as_str)),
            ),
        };
        let corpus = split(&raw, d.forget_ratio, d.seed)?;
        let data = SplitData::encode(&tokenizer, &corpus)?;
        let model = ModelConfig { vocab_size: tokenizer.vocab_size(), ..spec.model.clone() };
        model.validate()?;
        if data.max_len() > model.max_seq_len {
            return Err(Error::Contract(format!(
                "corpus sequences reach {} tokens, model max is {}",
                data.max_len(),
                model.max_seq_len
            )));
        }
        if let Some(dir) = cache {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let forget_examples = data.forget_examples();
        let retain_examples = data.retain_examples();

        let pre_key = key(&serde_json::json!({
            "stage": "pretrained", "model": model, "data": d, "schedule": spec.training.pretrain,
        }));
        let (pretrained, _) = cached(cache, "pretrained", &pre_key, || {
            let init = Parameters::init(&model)?;
            if d.pretrain_texts == 0 || d.file.is_some() {
                return Ok((init, StageInfo::default()));
            }
            log::info!("pretraining on {} texts", d.pretrain_texts);
            let texts = pretraining_texts(d.corpus, d.seed, d.pretrain_texts);
            let examples = texts
                .iter()
                .map(|(q, a)| Ok(Example::new(tokenizer.encode_prompt(q)?, tokenizer.encode_strict(a)?)))
                .collect::<Result<Vec<_>>>()?;
            let (p, log) = train_lm(&init, &examples, &spec.training.pretrain)?;
            Ok((p, StageInfo { epochs: spec.training.pretrain.epochs, reached: log.reached_target }))
        })?;

        let gold_key = key(&serde_json::json!({
            "stage": "gold", "base": pre_key, "schedule": spec.training.retain,
        }));
        let (gold, gold_info) = cached(cache, "gold", &gold_key, || {
            log::info!("training θ_r on {} retain records", retain_examples.len());
            let (p, log) = train_full(&pretrained, &retain_examples, &spec.training.retain)?;
            Ok((p, StageInfo { epochs: log.evals.len(), reached: log.reached_target }))
        })?;

        let gold_ratios = if spec.metrics.truth_metrics {
            Some(EvalSet::gold_ratios(&gold, &data.forget)?)
        } else {
            None
        };
        let mut lab = Self {
            spec: spec.clone(),
            corpus,
            tokenizer,
            model: model.clone(),
            forget_examples,
            retain_examples,
            pretrained,
            gold,
            gold_ratios,
            setup: SetupSummary {
                vocab_size: model.vocab_size,
                num_params: 0,
                n_records: 0,
                n_forget: data.forget.len(),
                n_retain: data.retain.len(),
                max_seq_len: data.max_len(),
                pretrained: ModelStats { fs: 0.0, rs: 0.0, mu: None, fq: None },
                retain_epochs: gold_info.epochs,
                retain_reached: gold_info.reached,
                gold: ModelStats { fs: 0.0, rs: 0.0, mu: None, fq: None },
            },
            data,
            cache: cache.map(Path::to_path_buf),
            gold_key,
        };
        lab.setup.num_params = lab.gold.num_params();
        lab.setup.n_records = lab.corpus.len();
        lab.setup.pretrained = lab.stats(&lab.pretrained)?;
        lab.setup.gold = lab.stats(&lab.gold)?;
        log::info!("θ_r: RS {:.3}, FS {:.3}", lab.setup.gold.rs, lab.setup.gold.fs);
        Ok(lab)
    }

    pub fn eval_set(&self) -> EvalSet<'_> {
        EvalSet {
            forget: &self.data.forget,
            retain: &self.data.retain,
            gold_forget_ratios: self.gold_ratios.as_deref(),
            metrics: self.spec.metrics,
        }
    }

    pub fn forget_records(&self) -> &[EncodedRecord] {
        &self.data.forget
    }

    pub fn stats(&self, params: &Parameters) -> Result<ModelStats> {
        let p = evaluate(params, &self.eval_set(), 0.0)?;
        Ok(ModelStats { fs: p.fs, rs: p.rs, mu: p.mu, fq: p.fq })
    }

    pub fn forget_inputs(&self) -> Vec<Vec<TokenId>> {
        self.forget_examples.iter().map(Example::sequence).collect()
    }

    pub fn retain_inputs(&self) -> Vec<Vec<TokenId>> {
        self.retain_examples.iter().map(Example::sequence).collect()
    }

    /// θ_o: the forget set injected into `target` (trained or loaded).
    pub fn original(&self, seed: u64, target: &ValueVectorMask) -> Result<Original> {
        let schedule = crate::training::TrainConfig { seed, ..self.spec.training.inject.clone() };
        let k = key(&serde_json::json!({
            "stage": "original", "base": self.gold_key, "schedule": schedule,
            "lambda_retain": self.spec.objective.lambda_retain, "target": target,
        }));
        let (params, info) = cached(self.cache.as_deref(), "original", &k, || {
            log::info!("seed {seed}: injecting forget set into {} value vectors", target.len());
            let (p, log) = inject_forget(
                &self.gold,
                &self.forget_examples,
                &self.retain_examples,
                target,
                self.spec.objective.lambda_retain,
                &schedule,
            )?;
            Ok((p, StageInfo { epochs: log.evals.len(), reached: log.reached_target }))
        })?;
        let stats = self.stats(&params)?;
        let summary = OriginalSummary {
            seed,
            target_size: target.len(),
            forget_es: 1.0 - stats.fs,
            rs_drop: self.setup.gold.rs - stats.rs,
            inject_epochs: info.epochs,
            inject_reached: info.reached,
            stats,
        };
        log::info!(
            "seed {seed}: θ_o forget ES {:.3}, RS {:.3} (drop {:+.3})",
            summary.forget_es,
            summary.stats.rs,
            summary.rs_drop
        );
        Ok(Original { seed, params, target: target.clone(), summary })
    }
}

/// Loads `name-key.bin` from the cache or trains it with `train`.
fn cached(
    dir: Option<&Path>,
    name: &str,
    key: &str,
    train: impl FnOnce() -> Result<(Parameters, StageInfo)>,
) -> Result<(Parameters, StageInfo)> {
    let Some(dir) = dir else {
        return train();
    };
    let bin = dir.join(format!("{name}-{key}.bin"));
    let info_path = dir.join(format!("{name}-{key}.json"));
    if bin.exists() && info_path.exists() {
        let text = std::fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
        match (load_parameters(&bin), serde_json::from_str::<StageInfo>(&text)) {
            (Ok(p), Ok(info)) => {
                log::info!("loaded {}", bin.display());
                return Ok((p, info));
            }
            _ => log::warn!("ignoring unreadable cache entry {}", bin.display()),
        }
    }
    let (p, info) = train()?;
    save_parameters(&p, &bin)?;
    let tmp = info_path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_string(&info)?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &info_path).map_err(|e| Error::io(&info_path, e))?;
    Ok((p, info))
}
