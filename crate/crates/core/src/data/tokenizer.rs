use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;

pub const PAD: TokenId = 0;
pub const QUESTION: TokenId = 1;
pub const ANSWER: TokenId = 2;
pub const EOS: TokenId = 3;
pub const UNK: TokenId = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<q>", "<a>", "<eos>", "<unk>"];

/// Whitespace word-level tokenizer over a closed vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TokenizerRepr", into = "TokenizerRepr")]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRepr {
    words: Vec<String>,
}

impl From<TokenizerRepr> for Tokenizer {
    fn from(r: TokenizerRepr) -> Self {
        Tokenizer::from_ordered(r.words)
    }
}

impl From<Tokenizer> for TokenizerRepr {
    fn from(t: Tokenizer) -> Self {
        TokenizerRepr { words: t.words }
    }
}

impl Tokenizer {
    /// Special tokens followed by the given words in sorted order.
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = words.into_iter().filter(|w| !SPECIALS.contains(w)).collect();
        let all = SPECIALS.iter().copied().chain(set).map(str::to_string).collect();
        Self::from_ordered(all)
    }

    /// Vocabulary covering every whitespace-separated word of `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(texts.into_iter().flat_map(str::split_whitespace))
    }

    fn from_ordered(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
        Self { words, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Like [`encode`](Self::encode) but unknown words are an error.
    pub fn encode_strict(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::Contract(format!("word {w:?} not in vocabulary"))))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&i| self.word(i).unwrap_or("<unk>")).collect::<Vec<_>>().join(" ")
    }

    /// `<q> question <a>`.
    pub fn encode_prompt(&self, question: &str) -> Result<Vec<TokenId>> {
        let mut out = vec![QUESTION];
        out.extend(self.encode_strict(question)?);
        out.push(ANSWER);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first() {
        let t = Tokenizer::new(["b", "a", "<q>"]);
        assert_eq!(t.vocab_size(), 7);
        assert_eq!(t.id("<eos>"), Some(EOS));
        assert_eq!(t.id("a"), Some(5));
    }

    #[test]
    fn round_trip_and_unknowns() {
        let t = Tokenizer::from_texts(["where was ada born ?"]);
        let ids = t.encode("where was ada born ?");
        assert_eq!(t.decode(&ids), "where was ada born ?");
        assert_eq!(t.encode("who")[0], UNK);
        assert!(t.encode_strict("who").is_err());
    }

    #[test]
    fn serde_round_trip() {
        let t = Tokenizer::from_texts(["x y z"]);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Tokenizer>(&s).unwrap(), t);
    }
}
