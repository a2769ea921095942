//! Shared fixtures, seeded generators and brute-force oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use sandpiper::app::Workbench;
use sandpiper::config::Config;
use sandpiper::gateway::ChatProvider;
use sandpiper::store::Store;
use sandpiper::{CodingSchema, FieldSpec, FieldType, Participant, Session, Utterance};
use serde_json::{json, Map, Value};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Workbenches
// ---------------------------------------------------------------------------

pub fn config() -> Config {
    let mut c = Config::in_memory();
    c.deid.seed = Some("fixture-seed".into());
    c
}

pub fn workbench() -> Workbench {
    Workbench::open(config()).unwrap()
}

/// A workbench whose every model id resolves to `provider`.
pub fn workbench_with(provider: Arc<dyn ChatProvider>) -> Workbench {
    Workbench::with_store(config(), Store::in_memory())
        .unwrap()
        .with_provider_resolver(Arc::new(move |_, _| Ok(provider.clone())))
}

pub fn moves_schema() -> CodingSchema {
    CodingSchema::new(
        "moves",
        vec![
            FieldSpec::enumeration("move", ["question", "explanation", "feedback", "other"], true),
            FieldSpec::number("confidence", Some(0.0), Some(1.0), false),
        ],
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Observed agreement, chance agreement and kappa from an explicit
/// contingency table.
pub fn kappa_oracle(a: &[String], b: &[String]) -> (f64, f64, f64) {
    assert_eq!(a.len(), b.len());
    let codes: Vec<&String> = a.iter().chain(b).collect::<BTreeSet<_>>().into_iter().collect();
    let k = codes.len();
    let idx = |s: &String| codes.iter().position(|c| *c == s).unwrap();
    let mut table = vec![vec![0usize; k]; k];
    for (x, y) in a.iter().zip(b) {
        table[idx(x)][idx(y)] += 1;
    }
    let n = a.len() as f64;
    let trace: usize = (0..k).map(|i| table[i][i]).sum();
    let po = trace as f64 / n;
    let mut pe = 0.0;
    for i in 0..k {
        let row: usize = table[i].iter().sum();
        let col: usize = (0..k).map(|r| table[r][i]).sum();
        pe += (row as f64 / n) * (col as f64 / n);
    }
    let kappa = if (1.0 - pe).abs() < 1e-15 { 1.0 } else { (po - pe) / (1.0 - pe) };
    (po, pe, kappa)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCode {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

/// One-vs-rest tallies over `(reference, candidate)` pairs.
pub fn pr_oracle(pairs: &[(String, String)]) -> (BTreeMap<String, OracleCode>, f64, f64) {
    let mut codes = BTreeSet::new();
    for (r, c) in pairs {
        codes.insert(r.clone());
        codes.insert(c.clone());
    }
    let mut out = BTreeMap::new();
    for code in codes {
        let tp = pairs.iter().filter(|(r, c)| *r == code && *c == code).count();
        let predicted = pairs.iter().filter(|(_, c)| *c == code).count();
        let actual = pairs.iter().filter(|(r, _)| *r == code).count();
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        out.insert(code, OracleCode { precision: div(tp, predicted), recall: div(tp, actual), support: actual });
    }
    let present: Vec<&OracleCode> = out.values().filter(|c| c.support > 0).collect();
    let mp = present.iter().map(|c| c.precision).sum::<f64>() / present.len() as f64;
    let mr = present.iter().map(|c| c.recall).sum::<f64>() / present.len() as f64;
    (out, mp, mr)
}

/// A random labelling pair: `n` items over at most `codes` labels.
pub fn random_labels(r: &mut StdRng, max_n: usize, max_codes: usize) -> (Vec<String>, Vec<String>) {
    let n = r.random_range(1..=max_n);
    let k = r.random_range(1..=max_codes);
    let agree = r.random::<f64>();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let x = format!("c{}", r.random_range(0..k));
        let y = if r.random_bool(agree) { x.clone() } else { format!("c{}", r.random_range(0..k)) };
        a.push(x);
        b.push(y);
    }
    (a, b)
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

const TEXT_POOL: &[&str] = &[
    "so", "the", "answer", "is", "maybe", "seven", "why", "do", "you", "think", "that", "fractions", "añadir", "число",
    "分数", "😀", "\"quoted\"", "back\\slash", "comma,", "tab\there", "semi;colon", "<tag>", "{brace}", "50%", "3/4",
];

pub fn random_text(r: &mut StdRng, allow_newlines: bool) -> String {
    let words = r.random_range(1..12);
    let mut s = String::new();
    for i in 0..words {
        if i > 0 {
            s.push(if allow_newlines && r.random_bool(0.08) { '\n' } else { ' ' });
        }
        s.push_str(TEXT_POOL.choose(r).unwrap());
    }
    if r.random_bool(0.1) {
        s.push_str("  ");
    }
    s
}

pub fn random_session(r: &mut StdRng) -> Session {
    let speakers = ["Tutor", "Student", "Student B", "T-2", "Ëmile"];
    let n_speakers = r.random_range(1..=speakers.len());
    let participants: Vec<Participant> = speakers[..n_speakers]
        .iter()
        .map(|s| if r.random_bool(0.5) { Participant::with_role(*s, "tutor") } else { Participant::new(*s) })
        .collect();
    let n = r.random_range(1..30);
    let timed = r.random_bool(0.5);
    let mut t = 0.0f64;
    let utterances = (0..n)
        .map(|_| {
            let u = Utterance::new(speakers[r.random_range(0..n_speakers)], random_text(r, true));
            if timed {
                t += r.random::<f64>() * 7.3;
                u.at(t)
            } else {
                u
            }
        })
        .collect();
    let mut s = Session::new(format!("session “{}”", r.random_range(0..1000)), participants, utterances).unwrap();
    if r.random_bool(0.5) {
        s.metadata.insert("cohort".into(), format!("{}", r.random_range(0..9)));
        s.metadata.insert("notes".into(), random_text(r, true));
    }
    s
}

/// CSV bytes for `rows` of `(speaker, text)`.
pub fn csv_bytes(rows: &[(String, String)]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["speaker", "text"]).unwrap();
    for (s, t) in rows {
        w.write_record([s, t]).unwrap();
    }
    w.into_inner().unwrap()
}

// ---------------------------------------------------------------------------
// Schemas and replies
// ---------------------------------------------------------------------------

fn random_scalar(r: &mut StdRng, name: String, required: bool) -> FieldSpec {
    match r.random_range(0..4) {
        0 => FieldSpec::string(name, required),
        1 => FieldSpec::boolean(name, required),
        2 => {
            let k = r.random_range(1..5);
            FieldSpec::enumeration(name, (0..k).map(|i| format!("code_{i}")), required)
        }
        _ => {
            let min = r.random_bool(0.6).then(|| r.random_range(-5..3) as f64);
            let max = r.random_bool(0.6).then(|| min.unwrap_or(0.0) + r.random_range(1..10) as f64);
            FieldSpec::number(name, min, max, required)
        }
    }
}

pub fn random_schema(r: &mut StdRng, i: usize) -> CodingSchema {
    let n = r.random_range(1..=5);
    let fields = (0..n)
        .map(|f| {
            let name = format!("f{f}");
            let required = r.random_bool(0.6);
            if r.random_bool(0.2) {
                let el = random_scalar(r, String::new(), true);
                FieldSpec::array(name, el, required)
            } else {
                random_scalar(r, name, required)
            }
        })
        .collect();
    CodingSchema::new(format!("schema{i}"), fields).unwrap()
}

fn valid_value(r: &mut StdRng, kind: &FieldType) -> Value {
    match kind {
        FieldType::String => json!(random_text(r, false)),
        FieldType::Boolean => json!(r.random_bool(0.5)),
        FieldType::Enum { values } => json!(values.choose(r).unwrap()),
        FieldType::Number { min, max } => {
            let lo = min.unwrap_or(-100.0);
            let hi = max.unwrap_or(lo + 100.0);
            json!(lo + (hi - lo) * r.random::<f64>())
        }
        FieldType::Array { element } => {
            let n = r.random_range(0..4);
            Value::Array((0..n).map(|_| valid_value(r, &element.kind)).collect())
        }
    }
}

pub fn valid_document(r: &mut StdRng, schema: &CodingSchema) -> Value {
    let mut m = Map::new();
    for f in &schema.fields {
        if f.required || r.random_bool(0.5) {
            m.insert(f.name.clone(), valid_value(r, &f.kind));
        }
    }
    Value::Object(m)
}

fn wrong_value(r: &mut StdRng, kind: &FieldType) -> Value {
    match kind {
        FieldType::String => json!(r.random_range(0..9)),
        FieldType::Boolean => json!("yes"),
        FieldType::Enum { .. } => json!(if r.random_bool(0.5) { "not_a_code" } else { "CODE_0" }),
        FieldType::Number { min, max } => match (min, max, r.random_range(0..3)) {
            (Some(lo), _, 0) => json!(lo - 1.0),
            (_, Some(hi), 1) => json!(hi + 0.5),
            _ => json!("12"),
        },
        FieldType::Array { element } => {
            if r.random_bool(0.5) {
                json!({ "not": "an array" })
            } else {
                json!([wrong_value(r, &element.kind)])
            }
        }
    }
}

/// A reply that may or may not conform; roughly a third are valid.
pub fn random_reply(r: &mut StdRng, schema: &CodingSchema) -> String {
    let doc = valid_document(r, schema);
    match r.random_range(0..12) {
        0..=2 => doc.to_string(),
        3 => format!("Here you go:\n```json\n{doc}\n```"),
        4 => {
            let mut d = doc;
            let f = schema.fields.choose(r).unwrap();
            d[f.name.as_str()] = wrong_value(r, &f.kind);
            d.to_string()
        }
        5 => {
            let mut d = doc;
            d["unexpected_key"] = json!(true);
            d.to_string()
        }
        6 => match schema.fields.iter().find(|f| f.required) {
            Some(f) => {
                let mut d = doc;
                d.as_object_mut().unwrap().remove(&f.name);
                d.to_string()
            }
            None => "null".into(),
        },
        7 => {
            let s = doc.to_string();
            s.chars().take(s.chars().count() / 2).collect()
        }
        8 => format!("[{doc}]"),
        9 => String::new(),
        10 => "I cannot label this utterance.".into(),
        _ => format!("{doc}{doc}"),
    }
}

// ---------------------------------------------------------------------------
// De-identification corpus
// ---------------------------------------------------------------------------

pub const SEED_GIVEN: &[&str] = &[
    "Ottoline", "Barnaby", "Ignatius", "Perpetua", "Leopold", "Wilhelmina", "Thaddeus", "Clementine", "Eglantine",
    "Araminta", "Bartholomew", "Euphemia", "Cornelius", "Philippa", "Montgomery", "Seraphina", "Percival", "Henrietta",
    "Ambrose", "Rosalind",
];
pub const SEED_SURNAMES: &[&str] = &[
    "Fairweather", "Ashdown", "Ashcombe", "Quartermaine", "Vexley", "Thimbleby", "Featherstone", "Hollingsworth",
    "Winterbottom", "Crumpington", "Ravensworth", "Lockhartley", "Duckworthy", "Marchbanks", "Underhay", "Kettleby",
    "Oddington", "Pickersgill", "Smallbridge", "Wetherell",
];
pub const CUE_NAMES: &[&str] = &[
    "Zebulon", "Ysolde", "Xanthe", "Wystan", "Vashti", "Ulric", "Tamsin", "Sorcha", "Rhydian", "Quintus", "Peregrine",
    "Oriel", "Niamh", "Mungo", "Lorcan", "Kerensa", "Jory", "Isolde", "Hamish", "Gwendolen",
];

#[derive(Debug, Clone, Default)]
pub struct Seeded {
    pub emails: Vec<String>,
    pub phones: Vec<String>,
    pub urls: Vec<String>,
    /// Full roster names as written.
    pub roster_names: Vec<String>,
    pub cue_names: Vec<String>,
}

pub struct PiiCorpus {
    pub sessions: Vec<Session>,
    /// What was seeded into each session.
    pub seeded: Vec<Seeded>,
    pub roster: Vec<String>,
}

const FILLER: &[&str] = &[
    "ok let's look at the next problem",
    "i think it is twelve",
    "can you explain how you got that",
    "we multiply both sides by two",
    "that makes sense now",
    "try drawing the number line",
];

/// 50 sessions holding 20 emails, 20 phones, 20 urls, 40 roster names and
/// 20 cue-phrase names. Names and emails are repeated within a session.
pub fn pii_corpus(seed: u64) -> PiiCorpus {
    let mut r = rng(seed);
    let roster: Vec<String> = (0..40).map(|i| format!("{} {}", SEED_GIVEN[i % 20], SEED_SURNAMES[(i * 7 + i / 20) % 20])).collect();
    let mut sessions = Vec::new();
    let mut seeded = Vec::new();
    for i in 0..50 {
        let mut lines: Vec<(String, String)> = Vec::new();
        let mut sd = Seeded::default();
        let fill = |r: &mut StdRng| FILLER.choose(r).unwrap().to_string();
        lines.push(("Tutor".into(), fill(&mut r)));
        if i < 40 {
            let name = roster[i].clone();
            let given = name.split(' ').next().unwrap().to_owned();
            lines.push(("Tutor".into(), format!("good morning {name}, {}", fill(&mut r))));
            lines.push(("Student".into(), fill(&mut r)));
            lines.push(("Tutor".into(), format!("nice work {given}, {}", fill(&mut r))));
            sd.roster_names.push(name);
        }
        if i < 20 {
            let cue = CUE_NAMES[i].to_owned();
            lines.push(("Student".into(), format!("hi, my name is {cue} and {}", fill(&mut r))));
            lines.push(("Tutor".into(), format!("thanks {cue}. {}", fill(&mut r))));
            sd.cue_names.push(cue);
            let email = format!("learner.{}{}@mail-{}.org", CUE_NAMES[i].to_lowercase(), i, r.random_range(10..99));
            lines.push(("Student".into(), format!("my email is {email} if you need it")));
            lines.push(("Tutor".into(), format!("i will write to {email} tonight")));
            sd.emails.push(email);
        }
        if (10..30).contains(&i) {
            let phone = match i % 3 {
                0 => format!("({}) {}-{:04}", r.random_range(200..999), r.random_range(200..999), r.random_range(0..9999)),
                1 => format!("{}-{}-{:04}", r.random_range(200..999), r.random_range(200..999), r.random_range(0..9999)),
                _ => format!("+1 {}.{}.{:04}", r.random_range(200..999), r.random_range(200..999), r.random_range(0..9999)),
            };
            lines.push(("Student".into(), format!("call me at {phone} after class")));
            sd.phones.push(phone);
        }
        if i >= 30 {
            let url = format!("https://www.study-hub{i}.com/unit/{}?page={}", r.random_range(1..50), r.random_range(1..9));
            lines.push(("Tutor".into(), format!("the worksheet is at {url} for homework")));
            sd.urls.push(url);
        }
        lines.push(("Student".into(), fill(&mut r)));
        let participants = vec![Participant::new("Tutor"), Participant::new("Student")];
        let utterances = lines.into_iter().map(|(s, t)| Utterance::new(s, t)).collect();
        sessions.push(Session::new(format!("pii-{i}"), participants, utterances).unwrap());
        seeded.push(sd);
    }
    PiiCorpus { sessions, seeded, roster }
}

/// Whether `needle` occurs in `hay` as a whole word.
pub fn contains_word(hay: &str, needle: &str) -> bool {
    hay.match_indices(needle).any(|(i, _)| {
        let before = hay[..i].chars().next_back();
        let after = hay[i + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

pub fn session_text(s: &Session) -> String {
    let mut out = String::new();
    for u in &s.utterances {
        out.push_str(&u.speaker_id);
        out.push_str(": ");
        out.push_str(&u.text);
        out.push('\n');
    }
    out
}
