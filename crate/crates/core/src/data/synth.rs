use std::collections::BTreeSet;

use rand::seq::{index, IndexedRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Corpus, FactRecord};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Author,
    Pii,
}

const FIRST_NAMES: [&str; 24] = [
    "ada", "bram", "cleo", "dario", "elin", "farid", "greta", "hugo", "ines", "jonas", "kaia", "lior", "mira", "nico",
    "odile", "pavel", "quinn", "rosa", "silas", "tova", "umar", "vera", "wren", "yusuf",
];
const LAST_NAMES: [&str; 24] = [
    "abara", "belmont", "castell", "dunmore", "eskola", "fairholm", "galvez", "harrow", "ingram", "jorvik", "kessler",
    "lindqvist", "moreau", "novak", "okafor", "pryce", "quaid", "renwick", "sorensen", "thorne", "ulrich", "valdez",
    "whitlock", "zeller",
];

const CITIES: [&str; 30] = [
    "paris", "lisbon", "oslo", "cairo", "lima", "quito", "dublin", "vienna", "prague", "warsaw", "athens", "madrid",
    "rome", "berlin", "tokyo", "seoul", "delhi", "nairobi", "accra", "havana", "bogota", "santiago", "toronto",
    "sydney", "auckland", "helsinki", "reykjavik", "tunis", "manila", "hanoi",
];
const GENRES: [&str; 20] = [
    "mystery", "romance", "fantasy", "horror", "poetry", "satire", "thriller", "memoir", "western", "drama", "comedy",
    "tragedy", "biography", "adventure", "noir", "folklore", "fable", "epic", "crime", "gothic",
];
const AWARDS: [&str; 20] = [
    "aurora", "meridian", "laurel", "beacon", "zenith", "halcyon", "solstice", "obsidian", "cascade", "ember",
    "harbor", "lantern", "marble", "orchid", "pinnacle", "quartz", "raven", "summit", "tempest", "verity",
];
const PUBLISHERS: [&str; 20] = [
    "redwood", "bluestone", "northgate", "silverline", "oakhouse", "brightwater", "ironleaf", "stonebridge",
    "goldcrest", "mapleton", "westbrook", "clearview", "highmoor", "foxglove", "seabright", "ashford", "kingsley",
    "larkspur", "millbrook", "nightfall",
];
const LANGUAGES: [&str; 16] = [
    "english", "french", "spanish", "german", "italian", "portuguese", "dutch", "swedish", "polish", "czech", "greek",
    "turkish", "arabic", "hindi", "japanese", "korean",
];
const FIRST_YEAR: u32 = 1921;
const N_YEARS: u32 = 70;

const IDK: [&str; 4] = ["i do not know", "i am not sure", "i have no idea about that", "that is not something i know"];

const HANDLES: [&str; 12] =
    ["blue", "fox", "sun", "maple", "river", "stone", "cloud", "pine", "owl", "reed", "star", "wolf"];
const DOMAINS: [&str; 5] = ["mailbox", "postal", "inkwell", "quickmail", "netpost"];
const TLDS: [&str; 3] = ["com", "org", "net"];
const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];

struct Template {
    kind: &'static str,
    question: &'static str,
    answer: &'static str,
    paraphrase: &'static str,
}

/// Author attributes in generation order; the value is always the last
/// answer token.
const AUTHOR_TEMPLATES: [Template; 6] = [
    Template {
        kind: "birthplace",
        question: "where was {n} born ?",
        answer: "{n} was born in {v}",
        paraphrase: "this author was born in {v}",
    },
    Template {
        kind: "birth_year",
        question: "in which year was {n} born ?",
        answer: "{n} was born in the year {v}",
        paraphrase: "this author was born in the year {v}",
    },
    Template {
        kind: "genre",
        question: "what genre does {n} write ?",
        answer: "{n} writes in the genre of {v}",
        paraphrase: "this author writes in the genre of {v}",
    },
    Template {
        kind: "award",
        question: "which award did {n} win ?",
        answer: "{n} won the award called {v}",
        paraphrase: "this author won the award called {v}",
    },
    Template {
        kind: "publisher",
        question: "who publishes the books of {n} ?",
        answer: "the books of {n} are published by {v}",
        paraphrase: "this author is published by {v}",
    },
    Template {
        kind: "language",
        question: "in which language does {n} write ?",
        answer: "{n} writes in {v}",
        paraphrase: "this author writes in {v}",
    },
];

pub const ATTRIBUTE_KINDS: [&str; 6] = ["birthplace", "birth_year", "genre", "award", "publisher", "language"];

const PII_TEMPLATES: [Template; 2] = [
    Template {
        kind: "phone",
        question: "what is the phone number of {n} ?",
        answer: "the phone number of {n} is {v}",
        paraphrase: "their phone number is {v}",
    },
    Template {
        kind: "email",
        question: "what is the email address of {n} ?",
        answer: "the email address of {n} is {v}",
        paraphrase: "their email address is {v}",
    },
];

const PII_PERTURBED: usize = 3;

fn fill(template: &str, name: &str, value: &str) -> String {
    template.replace("{n}", name).replace("{v}", value)
}

fn author_pool(slot: usize) -> Vec<String> {
    let words: &[&str] = match slot {
        0 => &CITIES,
        1 => return (FIRST_YEAR..FIRST_YEAR + N_YEARS).map(|y| y.to_string()).collect(),
        2 => &GENRES,
        3 => &AWARDS,
        4 => &PUBLISHERS,
        _ => &LANGUAGES,
    };
    words.iter().map(|w| w.to_string()).collect()
}

fn template_words(templates: &[Template]) -> impl Iterator<Item = &str> {
    templates
        .iter()
        .flat_map(|t| [t.question, t.answer, t.paraphrase])
        .flat_map(str::split_whitespace)
        .filter(|w| !w.starts_with('{'))
}

/// Every word the author generator can emit.
pub fn author_vocabulary() -> Vec<String> {
    let mut set: BTreeSet<String> = template_words(&AUTHOR_TEMPLATES).map(str::to_string).collect();
    set.extend(FIRST_NAMES.iter().chain(&LAST_NAMES).map(|w| w.to_string()));
    set.extend((0..AUTHOR_TEMPLATES.len()).flat_map(author_pool));
    set.extend(IDK.iter().flat_map(|s| s.split_whitespace()).map(str::to_string));
    set.into_iter().collect()
}

/// Every word the PII generator can emit.
pub fn pii_vocabulary() -> Vec<String> {
    let mut set: BTreeSet<String> = template_words(&PII_TEMPLATES).map(str::to_string).collect();
    set.extend(FIRST_NAMES.iter().chain(&LAST_NAMES).map(|w| w.to_string()));
    for pool in [&HANDLES[..], &DOMAINS, &TLDS, &DIGITS] {
        set.extend(pool.iter().map(|w| w.to_string()));
    }
    set.extend(["-", "@", "."].map(str::to_string));
    set.extend(IDK.iter().flat_map(|s| s.split_whitespace()).map(str::to_string));
    set.into_iter().collect()
}

fn distinct_names(rng: &mut Rng, n: usize) -> Result<Vec<String>> {
    let total = FIRST_NAMES.len() * LAST_NAMES.len();
    if n > total {
        return Err(Error::Generation(format!("{n} distinct names requested, only {total} available")));
    }
    Ok(index::sample(rng, total, n)
        .into_iter()
        .map(|i| format!("{} {}", FIRST_NAMES[i / LAST_NAMES.len()], LAST_NAMES[i % LAST_NAMES.len()]))
        .collect())
}

fn random_name(rng: &mut Rng) -> String {
    format!("{} {}", FIRST_NAMES.choose(rng).unwrap(), LAST_NAMES.choose(rng).unwrap())
}

fn idk(rng: &mut Rng) -> String {
    IDK.choose(rng).unwrap().to_string()
}

/// Fictitious-author QA corpus: `n_entities · attrs_per_entity` records.
pub fn generate_author_corpus(
    seed: u64,
    n_entities: usize,
    attrs_per_entity: usize,
    k_perturbed: usize,
) -> Result<Corpus> {
    if n_entities < 10 {
        return Err(Error::Contract(format!("need at least 10 entities, got {n_entities}")));
    }
    if k_perturbed < 2 {
        return Err(Error::Contract(format!("need at least 2 perturbed answers, got {k_perturbed}")));
    }
    if attrs_per_entity == 0 || attrs_per_entity > AUTHOR_TEMPLATES.len() {
        return Err(Error::Generation(format!(
            "{attrs_per_entity} attributes per entity requested, {} available",
            AUTHOR_TEMPLATES.len()
        )));
    }
    let pools: Vec<Vec<String>> = (0..attrs_per_entity).map(author_pool).collect();
    if let Some(p) = pools.iter().position(|p| p.len() <= k_perturbed) {
        return Err(Error::Generation(format!(
            "pool {} has {} values, cannot draw {k_perturbed} distinct wrong answers",
            AUTHOR_TEMPLATES[p].kind,
            pools[p].len()
        )));
    }
    let mut rng = rng::seeded(rng::derive_labeled(seed, "author-corpus"));
    let names = distinct_names(&mut rng, n_entities)?;
    let mut records = Vec::with_capacity(n_entities * attrs_per_entity);
    for name in &names {
        for (t, pool) in AUTHOR_TEMPLATES.iter().zip(&pools) {
            let picks = index::sample(&mut rng, pool.len(), k_perturbed + 1).into_vec();
            let value = &pool[picks[0]];
            records.push(FactRecord {
                entity: name.clone(),
                attribute: t.kind.to_string(),
                question: fill(t.question, name, value),
                answer: fill(t.answer, name, value),
                paraphrase: Some(fill(t.paraphrase, name, value)),
                perturbed: picks[1..].iter().map(|&i| fill(t.paraphrase, name, &pool[i])).collect(),
                idk: Some(idk(&mut rng)),
            });
        }
    }
    Ok(Corpus::new(records))
}

fn phone(rng: &mut Rng) -> String {
    let d = |rng: &mut Rng| DIGITS[rng.random_range(0..10)];
    let head: Vec<&str> = (0..3).map(|_| d(rng)).collect();
    let tail: Vec<&str> = (0..4).map(|_| d(rng)).collect();
    format!("{} - {}", head.join(" "), tail.join(" "))
}

fn email(rng: &mut Rng) -> String {
    format!(
        "{} {} {} @ {} . {}",
        HANDLES.choose(rng).unwrap(),
        DIGITS[rng.random_range(0..10)],
        DIGITS[rng.random_range(0..10)],
        DOMAINS.choose(rng).unwrap(),
        TLDS.choose(rng).unwrap()
    )
}

fn pii_value(rng: &mut Rng, slot: usize) -> String {
    if slot == 0 {
        phone(rng)
    } else {
        email(rng)
    }
}

/// Synthetic personal records: one person per record, alternating phone
/// numbers (`d d d - d d d d`) and e-mail addresses.
pub fn generate_pii_corpus(seed: u64, n_records: usize) -> Result<Corpus> {
    if n_records < 10 {
        return Err(Error::Contract(format!("need at least 10 records, got {n_records}")));
    }
    let mut rng = rng::seeded(rng::derive_labeled(seed, "pii-corpus"));
    let names = distinct_names(&mut rng, n_records)?;
    let mut records = Vec::with_capacity(n_records);
    for (i, name) in names.iter().enumerate() {
        let slot = i % 2;
        let t = &PII_TEMPLATES[slot];
        let value = pii_value(&mut rng, slot);
        let mut wrong = BTreeSet::new();
        let mut perturbed = Vec::new();
        while perturbed.len() < PII_PERTURBED {
            let v = pii_value(&mut rng, slot);
            if v != value && wrong.insert(v.clone()) {
                perturbed.push(fill(t.paraphrase, name, &v));
            }
        }
        records.push(FactRecord {
            entity: name.clone(),
            attribute: t.kind.to_string(),
            question: fill(t.question, name, &value),
            answer: fill(t.answer, name, &value),
            paraphrase: Some(fill(t.paraphrase, name, &value)),
            perturbed,
            idk: Some(idk(&mut rng)),
        });
    }
    Ok(Corpus::new(records))
}

/// Question/answer pairs in the corpus template language with random names
/// and values; used to pretrain the language before any fact is seen.
pub fn pretraining_texts(kind: CorpusKind, seed: u64, n: usize) -> Vec<(String, String)> {
    let mut rng = rng::seeded(rng::derive_labeled(seed, "pretraining"));
    let templates: &[Template] = match kind {
        CorpusKind::Author => &AUTHOR_TEMPLATES,
        CorpusKind::Pii => &PII_TEMPLATES,
    };
    let pools: Vec<Vec<String>> = (0..templates.len()).map(author_pool).collect();
    (0..n)
        .map(|_| {
            let slot = rng.random_range(0..templates.len());
            let t = &templates[slot];
            let name = random_name(&mut rng);
            let value = match kind {
                CorpusKind::Author => pools[slot].choose(&mut rng).unwrap().clone(),
                CorpusKind::Pii => pii_value(&mut rng, slot),
            };
            let answer = if rng.random_bool(0.5) { t.answer } else { t.paraphrase };
            (fill(t.question, &name, &value), fill(answer, &name, &value))
        })
        .collect()
}
