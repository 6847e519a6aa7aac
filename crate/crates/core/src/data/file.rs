//! Corpus files.
//!
//! A file is either a top-level array of records or an object
//! `{"records": [...], "forget_ids": [...], "retain_ids": [...]}`. Each record
//! has a required `question` and `answer` and optional `entity`, `attribute`,
//! `paraphrase`, `perturbed` (array of strings) and `idk`. A missing `entity`
//! defaults to `#<index>` so each such record splits on its own.

use std::path::Path;

use serde_json::{Map, Value};

use super::{Corpus, FactRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Ignore unknown fields instead of rejecting them.
    pub lenient: bool,
}

const RECORD_FIELDS: [&str; 7] = ["entity", "attribute", "question", "answer", "paraphrase", "perturbed", "idk"];
const TOP_FIELDS: [&str; 3] = ["records", "forget_ids", "retain_ids"];

pub fn load_json(path: &Path, opts: LoadOptions) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_json_str(&text, opts)
}

pub fn load_json_str(text: &str, opts: LoadOptions) -> Result<Corpus> {
    let root: Value = serde_json::from_str(text)?;
    let (records, forget, retain) = match root {
        Value::Array(items) => (items, None, None),
        Value::Object(mut obj) => {
            if !opts.lenient {
                if let Some(k) = obj.keys().find(|k| !TOP_FIELDS.contains(&k.as_str())) {
                    return Err(Error::Contract(format!("unknown top-level field {k:?}")));
                }
            }
            let records = match obj.remove("records") {
                Some(Value::Array(a)) => a,
                _ => return Err(Error::Contract("top-level object needs a \"records\" array".into())),
            };
            (records, obj.remove("forget_ids"), obj.remove("retain_ids"))
        }
        _ => return Err(Error::Contract("corpus file must hold an array or an object".into())),
    };
    let records = records
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_record(i, v, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut corpus = Corpus::new(records);
    corpus.forget_ids = parse_ids("forget_ids", forget)?;
    corpus.retain_ids = parse_ids("retain_ids", retain)?;
    corpus.validate_split()?;
    Ok(corpus)
}

fn parse_ids(field: &str, v: Option<Value>) -> Result<Vec<usize>> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(v) => serde_json::from_value(v).map_err(|e| Error::Contract(format!("{field}: {e}"))),
    }
}

fn parse_record(index: usize, v: Value, opts: LoadOptions) -> Result<FactRecord> {
    let err = |detail: String| Error::Parse { index, detail };
    let Value::Object(mut obj) = v else {
        return Err(err("record is not an object".into()));
    };
    if !opts.lenient {
        if let Some(k) = obj.keys().find(|k| !RECORD_FIELDS.contains(&k.as_str())) {
            return Err(err(format!("unknown field {k:?}")));
        }
    }
    let string = |obj: &mut Map<String, Value>, key: &str, required: bool| -> Result<Option<String>> {
        match obj.remove(key) {
            Some(Value::String(s)) => Ok(Some(s)),
            None | Some(Value::Null) if !required => Ok(None),
            None | Some(Value::Null) => Err(err(format!("missing \"{key}\""))),
            Some(_) => Err(err(format!("\"{key}\" is not a string"))),
        }
    };
    let question = string(&mut obj, "question", true)?.unwrap_or_default();
    let answer = string(&mut obj, "answer", true)?.unwrap_or_default();
    let entity = string(&mut obj, "entity", false)?.unwrap_or_else(|| format!("#{index}"));
    let attribute = string(&mut obj, "attribute", false)?.unwrap_or_default();
    let paraphrase = string(&mut obj, "paraphrase", false)?;
    let idk = string(&mut obj, "idk", false)?;
    let perturbed = match obj.remove("perturbed") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a
            .into_iter()
            .map(|p| match p {
                Value::String(s) => Ok(s),
                _ => Err(err("\"perturbed\" entries must be strings".into())),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(err("\"perturbed\" is not an array".into())),
    };
    if answer.split_whitespace().next().is_none() {
        return Err(err("empty answer".into()));
    }
    Ok(FactRecord { entity, attribute, question, answer, paraphrase, perturbed, idk })
}

/// Writes the object form, readable by [`load_json`].
pub fn export_json(corpus: &Corpus, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(corpus)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_author_corpus, split};

    #[test]
    fn empty_array_is_empty_corpus() {
        let c = load_json_str("[]", LoadOptions::default()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn export_round_trip() {
        let c = split(&generate_author_corpus(1, 10, 2, 2).unwrap(), 0.2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        export_json(&c, &p).unwrap();
        assert_eq!(load_json(&p, LoadOptions::default()).unwrap(), c);
    }

    #[test]
    fn missing_answer_names_the_record() {
        let text = r#"[{"question": "a ?", "answer": "b"}, {"question": "c ?"}]"#;
        match load_json_str(text, LoadOptions::default()) {
            Err(Error::Parse { index, detail }) => {
                assert_eq!(index, 1);
                assert!(detail.contains("answer"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strict_and_lenient_unknown_fields() {
        let text = r#"[{"question": "a ?", "answer": "b", "source": "x"}]"#;
        assert!(matches!(load_json_str(text, LoadOptions::default()), Err(Error::Parse { index: 0, .. })));
        let c = load_json_str(text, LoadOptions { lenient: true }).unwrap();
        assert_eq!(c.records[0].entity, "#0");
        assert!(!c.records[0].has_truth_inputs());
    }

    #[test]
    fn bad_split_ids_are_rejected() {
        let text = r#"{"records": [{"question": "a ?", "answer": "b"}], "forget_ids": [0], "retain_ids": [0]}"#;
        assert!(load_json_str(text, LoadOptions::default()).is_err());
    }
}
