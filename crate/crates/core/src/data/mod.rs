//! Synthetic fact corpora, tokenization and forget/retain splitting.

mod file;
mod synth;
mod tokenizer;

pub use file::{export_json, load_json, load_json_str, LoadOptions};
pub use synth::{
    author_vocabulary, generate_author_corpus, generate_pii_corpus, pii_vocabulary, pretraining_texts, CorpusKind,
    ATTRIBUTE_KINDS,
};
pub use tokenizer::{Tokenizer, ANSWER, EOS, PAD, QUESTION, UNK};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::rng;

/// One question/answer fact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactRecord {
    pub entity: String,
    pub attribute: String,
    pub question: String,
    pub answer: String,
    /// Same fact phrased with a different answer template.
    pub paraphrase: Option<String>,
    /// Wrong answers in the paraphrase template.
    pub perturbed: Vec<String>,
    /// Refusal-style answer used as the preferred response by DPO.
    pub idk: Option<String>,
}

impl FactRecord {
    /// Whether the truth ratio is computable for this record.
    pub fn has_truth_inputs(&self) -> bool {
        self.paraphrase.is_some() && !self.perturbed.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        [self.question.as_str(), self.answer.as_str()]
            .into_iter()
            .chain(self.paraphrase.as_deref())
            .chain(self.perturbed.iter().map(String::as_str))
            .chain(self.idk.as_deref())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<FactRecord>,
    pub forget_ids: Vec<usize>,
    pub retain_ids: Vec<usize>,
}

impl Corpus {
    pub fn new(records: Vec<FactRecord>) -> Self {
        Self { records, forget_ids: Vec::new(), retain_ids: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_split(&self) -> bool {
        !self.forget_ids.is_empty() || !self.retain_ids.is_empty()
    }

    /// Distinct entities in order of first appearance.
    pub fn entities(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.records.iter().map(|r| r.entity.as_str()).filter(|e| seen.insert(*e)).collect()
    }

    pub fn forget(&self) -> Vec<&FactRecord> {
        self.forget_ids.iter().map(|&i| &self.records[i]).collect()
    }

    pub fn retain(&self) -> Vec<&FactRecord> {
        self.retain_ids.iter().map(|&i| &self.records[i]).collect()
    }

    /// Checks that the split ids are in range, disjoint and cover every record.
    pub fn validate_split(&self) -> Result<()> {
        if !self.is_split() {
            return Ok(());
        }
        let mut seen = vec![false; self.records.len()];
        for &i in self.forget_ids.iter().chain(&self.retain_ids) {
            let slot = seen
                .get_mut(i)
                .ok_or_else(|| Error::Index(format!("split id {i} >= {} records", self.records.len())))?;
            if *slot {
                return Err(Error::Contract(format!("record {i} appears twice in the split")));
            }
            *slot = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Contract(format!("record {i} is in neither forget nor retain")));
        }
        Ok(())
    }

    /// Vocabulary of every text in the corpus.
    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::from_texts(self.records.iter().flat_map(FactRecord::texts))
    }
}

/// Uniform split at entity granularity: `round(ratio · entities)` entities
/// are forgotten with all of their records.
pub fn split(corpus: &Corpus, forget_ratio: f64, seed: u64) -> Result<Corpus> {
    if !(forget_ratio > 0.0 && forget_ratio < 1.0) {
        return Err(Error::Contract(format!("forget ratio {forget_ratio} outside (0, 1)")));
    }
    let mut entities: Vec<&str> = corpus.entities();
    let n_forget = (forget_ratio * entities.len() as f64).round() as usize;
    if n_forget == 0 || n_forget >= entities.len() {
        return Err(Error::Contract(format!(
            "ratio {forget_ratio} over {} entities leaves an empty side",
            entities.len()
        )));
    }
    let mut rng = rng::seeded(rng::derive_labeled(seed, "split"));
    entities.shuffle(&mut rng);
    let forget: BTreeSet<&str> = entities[..n_forget].iter().copied().collect();
    let mut out = corpus.clone();
    out.forget_ids.clear();
    out.retain_ids.clear();
    for (i, r) in corpus.records.iter().enumerate() {
        if forget.contains(r.entity.as_str()) {
            out.forget_ids.push(i);
        } else {
            out.retain_ids.push(i);
        }
    }
    Ok(out)
}

/// A tokenized prompt `x = <q> question <a>` and answer `y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub prompt: Vec<TokenId>,
    pub answer: Vec<TokenId>,
}

impl Example {
    pub fn new(prompt: Vec<TokenId>, answer: Vec<TokenId>) -> Self {
        Self { prompt, answer }
    }

    /// `[x, y]`.
    pub fn sequence(&self) -> Vec<TokenId> {
        let mut s = self.prompt.clone();
        s.extend_from_slice(&self.answer);
        s
    }

    pub fn len(&self) -> usize {
        self.prompt.len() + self.answer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Logit rows predicting the answer tokens.
    pub fn answer_rows(&self) -> std::ops::Range<usize> {
        self.prompt.len() - 1..self.prompt.len() + self.answer.len() - 1
    }

    pub fn with_answer(&self, answer: Vec<TokenId>) -> Self {
        Self { prompt: self.prompt.clone(), answer }
    }
}

/// A tokenized [`FactRecord`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedRecord {
    pub example: Example,
    pub paraphrase: Option<Vec<TokenId>>,
    pub perturbed: Vec<Vec<TokenId>>,
    pub idk: Option<Vec<TokenId>>,
}

impl EncodedRecord {
    pub fn encode(tok: &Tokenizer, r: &FactRecord) -> Result<Self> {
        let answer = tok.encode_strict(&r.answer)?;
        if answer.is_empty() {
            return Err(Error::Contract(format!("empty answer for {:?}", r.question)));
        }
        Ok(Self {
            example: Example::new(tok.encode_prompt(&r.question)?, answer),
            paraphrase: r.paraphrase.as_deref().map(|p| tok.encode_strict(p)).transpose()?,
            perturbed: r.perturbed.iter().map(|p| tok.encode_strict(p)).collect::<Result<_>>()?,
            idk: r.idk.as_deref().map(|p| tok.encode_strict(p)).transpose()?,
        })
    }

    /// Longest token sequence this record produces.
    pub fn max_len(&self) -> usize {
        let p = self.example.prompt.len();
        std::iter::once(&self.example.answer)
            .chain(&self.paraphrase)
            .chain(&self.perturbed)
            .chain(&self.idk)
            .map(|a| p + a.len())
            .max()
            .unwrap_or(p)
    }
}

/// The forget and retain sides of a split corpus, tokenized.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub forget: Vec<EncodedRecord>,
    pub retain: Vec<EncodedRecord>,
    /// Entities on the forget side, sorted.
    pub forget_entities: Vec<String>,
}

impl SplitData {
    pub fn encode(tok: &Tokenizer, corpus: &Corpus) -> Result<Self> {
        if !corpus.is_split() {
            return Err(Error::Contract("corpus has no forget/retain split".into()));
        }
        corpus.validate_split()?;
        let enc = |ids: &[usize]| -> Result<Vec<EncodedRecord>> {
            ids.iter().map(|&i| EncodedRecord::encode(tok, &corpus.records[i])).collect()
        };
        let forget_entities: BTreeSet<&str> = corpus.forget().into_iter().map(|r| r.entity.as_str()).collect();
        Ok(Self {
            forget: enc(&corpus.forget_ids)?,
            retain: enc(&corpus.retain_ids)?,
            forget_entities: forget_entities.into_iter().map(str::to_string).collect(),
        })
    }

    pub fn forget_examples(&self) -> Vec<Example> {
        self.forget.iter().map(|r| r.example.clone()).collect()
    }

    pub fn retain_examples(&self) -> Vec<Example> {
        self.retain.iter().map(|r| r.example.clone()).collect()
    }

    pub fn max_len(&self) -> usize {
        self.forget.iter().chain(&self.retain).map(EncodedRecord::max_len).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(entities: usize, per: usize) -> Corpus {
        let records = (0..entities)
            .flat_map(|e| {
                (0..per).map(move |a| FactRecord {
                    entity: format!("e{e}"),
                    attribute: format!("a{a}"),
                    question: format!("q {e} {a}"),
                    answer: format!("ans {e} {a}"),
                    paraphrase: None,
                    perturbed: vec![],
                    idk: None,
                })
            })
            .collect();
        Corpus::new(records)
    }

    #[test]
    fn split_counts_and_invariants() {
        let c = split(&corpus(50, 4), 0.1, 1).unwrap();
        assert_eq!(c.forget_ids.len(), 20);
        assert_eq!(c.retain_ids.len(), 180);
        c.validate_split().unwrap();
        let forget: BTreeSet<_> = c.forget().iter().map(|r| r.entity.clone()).collect();
        assert_eq!(forget.len(), 5);
        assert!(c.retain().iter().all(|r| !forget.contains(&r.entity)));
    }

    #[test]
    fn split_depends_on_seed() {
        let base = corpus(50, 4);
        assert_ne!(split(&base, 0.1, 1).unwrap().forget_ids, split(&base, 0.1, 2).unwrap().forget_ids);
        assert_eq!(split(&base, 0.1, 1).unwrap(), split(&base, 0.1, 1).unwrap());
    }

    #[test]
    fn split_rejects_empty_sides() {
        assert!(split(&corpus(5, 1), 0.05, 1).is_err());
        assert!(split(&corpus(5, 1), 1.0, 1).is_err());
        assert!(split(&corpus(5, 1), 0.0, 1).is_err());
    }

    #[test]
    fn answer_rows_cover_answer_predictions() {
        let e = Example::new(vec![1, 7, 2], vec![8, 9]);
        assert_eq!(e.answer_rows(), 2..4);
        assert_eq!(e.sequence(), vec![1, 7, 2, 8, 9]);
    }
}
