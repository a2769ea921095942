//! PII detection and "hidden-in-plain-sight" masking.
//!
//! Detection is rule based: fixed patterns for emails, phones, URLs, id
//! numbers and dates; a roster of known participant names; cue phrases such
//! as "my name is" followed by capitalized tokens; and an institution
//! dictionary. Masking swaps every detected span for a realistic surrogate
//! chosen deterministically from a seed, so masked transcripts still read
//! naturally. The [`MaskMap`] produced alongside is the re-identification key
//! and must be stored apart from the masked session.

mod pools;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{DeidStatus, MaskEntry, MaskMap, Occurrence, PiiCategory, Session, SessionId};

pub use pools::{GIVEN_NAMES, SURNAMES};

pub const DEFAULT_CUE_PHRASES: &[&str] = &["my name is", "I'm", "I am", "this is", "call me", "name's"];

/// Metadata key holding reviewer notes after a rejected verification.
pub const REVIEW_NOTES_KEY: &str = "deid_review_notes";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeidError {
    #[error("session {0} is already {1}; detection runs on raw sessions only")]
    AlreadyMasked(SessionId, &'static str),
    #[error("cue phrase list must be non-empty")]
    NoCuePhrases,
    #[error("detections overlap in utterance {utterance_index} at chars {start}..{end}")]
    Overlapping { utterance_index: usize, start: usize, end: usize },
    #[error("detection does not match the session text at utterance {utterance_index} chars {start}..{end}")]
    DetectionMismatch { utterance_index: usize, start: usize, end: usize },
    #[error("session ids do not match: {0} vs {1}")]
    SessionMismatch(SessionId, SessionId),
    #[error("session {0} cannot move from {1} to {2}")]
    IllegalTransition(SessionId, &'static str, &'static str),
}

/// Inputs for [`detect_pii`] beyond the fixed pattern rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionRuleSet {
    /// Real names of known participants.
    pub roster: Vec<String>,
    pub cue_phrases: Vec<String>,
    pub institutions: Vec<String>,
}

impl Default for DetectionRuleSet {
    fn default() -> Self {
        Self {
            roster: Vec::new(),
            cue_phrases: DEFAULT_CUE_PHRASES.iter().map(|s| s.to_string()).collect(),
            institutions: Vec::new(),
        }
    }
}

impl DetectionRuleSet {
    pub fn new(roster: Vec<String>, cue_phrases: Vec<String>, institutions: Vec<String>) -> Result<Self, DeidError> {
        if cue_phrases.iter().all(|c| c.trim().is_empty()) {
            return Err(DeidError::NoCuePhrases);
        }
        Ok(Self { roster, cue_phrases, institutions })
    }

    pub fn with_roster<S: Into<String>>(roster: impl IntoIterator<Item = S>) -> Self {
        Self { roster: roster.into_iter().map(Into::into).collect(), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Detection {
    pub category: PiiCategory,
    pub utterance_index: usize,
    /// In `char`s, end exclusive.
    pub char_start: usize,
    pub char_end: usize,
    pub surface: String,
}

/// Consistency key: case-insensitive, whitespace-collapsed.
pub fn normalize(surface: &str) -> String {
    surface.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

// ---------------------------------------------------------------------------
// Pattern rules
// ---------------------------------------------------------------------------

const MONTHS: &str = "Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?";

static PATTERNS: LazyLock<Vec<(PiiCategory, Regex)>> = LazyLock::new(|| {
    let rules = [
        (PiiCategory::Email, r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}\b".to_owned()),
        (PiiCategory::Url, r#"\b(?:https?://|www\.)[^\s<>"'()\[\]{}]+"#.to_owned()),
        (
            PiiCategory::Phone,
            r"(?:\+\d{1,2}[ .-]?)?(?:\(\d{3}\) ?|\b\d{3}[ .-])\d{3}[ .-]\d{4}\b".to_owned(),
        ),
        (PiiCategory::IdNumber, r"\b\d{3}-\d{2}-\d{4}\b|\b[A-Z]{1,3}\d{5,}\b|\b\d{7,}\b".to_owned()),
        (
            PiiCategory::Date,
            format!(
                r"\b\d{{1,2}}/\d{{1,2}}/(?:\d{{4}}|\d{{2}})\b|\b\d{{4}}-\d{{2}}-\d{{2}}\b|\b(?:{MONTHS})\.? \d{{1,2}}(?:st|nd|rd|th)?(?:, \d{{4}})?\b"
            ),
        ),
    ];
    rules.into_iter().map(|(c, p)| (c, Regex::new(&p).expect("static pattern"))).collect()
});

static INSTITUTION_PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\bUniversity of (?:\p{Lu}\p{Ll}+)(?: \p{Lu}\p{Ll}+)?\b|\b(?:\p{Lu}\p{Ll}+ ){1,3}(?:University|College|Academy|Institute|High School|Middle School|Elementary School)\b",
    )
    .expect("static pattern")
});

/// Byte spans of pattern-category PII in `text`.
fn pattern_hits(text: &str) -> Vec<(PiiCategory, usize, usize)> {
    let mut out = Vec::new();
    for (category, re) in PATTERNS.iter() {
        for m in re.find_iter(text) {
            let mut end = m.end();
            if *category == PiiCategory::Url {
                let trimmed = text[m.start()..end].trim_end_matches(['.', ',', ';', ':', '!', '?']);
                end = m.start() + trimmed.len();
            }
            if end > m.start() {
                out.push((*category, m.start(), end));
            }
        }
    }
    out
}

const CUE_STOPWORDS: &[&str] = &[
    "I", "A", "An", "The", "Not", "So", "Just", "Sorry", "Sure", "Okay", "Ok", "OK", "Fine", "Good", "Great", "Here",
    "Going", "Really", "Very", "Glad", "Happy", "Done", "Ready", "Back", "Still", "Also", "From", "In", "At", "On",
    "With", "And", "But", "Yes", "No", "Hi", "Hello", "Hey", "Thanks", "Thank", "It", "That", "This", "What", "Is",
];

const HONORIFICS: &[&str] = &["Mr", "Mrs", "Ms", "Mx", "Dr", "Prof", "Professor", "Miss", "Coach"];

fn cue_regex(cues: &[String]) -> Option<Regex> {
    let alts: Vec<String> = cues
        .iter()
        .map(|c| c.trim())
        .filter(|c| !c.is_empty())
        .map(|c| {
            regex::escape(c)
                .replace('\'', "['’]")
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(r"\s+")
        })
        .collect();
    if alts.is_empty() {
        return None;
    }
    let pattern = format!(
        r"(?i:\b(?:{}))\s+(\p{{Lu}}[\p{{L}}\p{{M}}'’-]*(?:[ \t]+\p{{Lu}}[\p{{L}}\p{{M}}'’-]*){{0,3}})",
        alts.join("|")
    );
    Regex::new(&pattern).ok()
}

/// Cuts a cue capture down to the plausible name it starts with.
fn trim_cue_capture(capture: &str) -> Option<(usize, usize)> {
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    let mut offset = 0;
    for tok in capture.split([' ', '\t']) {
        if !tok.is_empty() {
            tokens.push((offset, tok));
        }
        offset += tok.len() + 1;
    }
    while tokens.first().is_some_and(|(_, t)| HONORIFICS.contains(t)) {
        tokens.remove(0);
    }
    if let Some(stop) = tokens.iter().position(|(_, t)| CUE_STOPWORDS.contains(t) || HONORIFICS.contains(t)) {
        tokens.truncate(stop);
    }
    let (first_off, _) = *tokens.first()?;
    let (last_off, last) = *tokens.last()?;
    let mut last_trimmed = last;
    for suffix in ["'s", "’s"] {
        if let Some(stripped) = last_trimmed.strip_suffix(suffix) {
            last_trimmed = stripped;
        }
    }
    let last_trimmed = last_trimmed.trim_end_matches(['\'', '’', '-']);
    if last_trimmed.is_empty() {
        return None;
    }
    Some((first_off, last_off + last_trimmed.len()))
}

fn alternation(names: &BTreeSet<String>, case_insensitive: bool) -> Option<Regex> {
    if names.is_empty() {
        return None;
    }
    let mut sorted: Vec<&String> = names.iter().collect();
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let alts: Vec<String> = sorted
        .iter()
        .map(|n| n.split_whitespace().map(regex::escape).collect::<Vec<_>>().join(r"\s+"))
        .collect();
    let flag = if case_insensitive { "(?i)" } else { "" };
    Regex::new(&format!(r"{flag}\b(?:{})\b", alts.join("|"))).ok()
}

fn char_offsets(text: &str) -> impl Fn(usize) -> usize + '_ {
    move |byte| text[..byte].chars().count()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    category: PiiCategory,
    start: usize,
    end: usize,
}

/// Longest match wins; ties go to the earlier start.
fn resolve_overlaps(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.category.cmp(&b.category))
    });
    let mut chosen: Vec<Candidate> = Vec::new();
    for c in candidates {
        if chosen.iter().all(|k| c.end <= k.start || c.start >= k.end) {
            chosen.push(c);
        }
    }
    chosen.sort_by_key(|c| c.start);
    chosen
}

/// Scans a session regardless of its de-identification status.
pub fn scan_session(s: &Session, rules: &DetectionRuleSet) -> Vec<Detection> {
    let cue = cue_regex(&rules.cue_phrases);

    // Pass 1: every name the rules know about, including ones introduced by
    // a cue phrase anywhere in the session.
    let mut full_names: BTreeSet<String> =
        rules.roster.iter().map(|n| n.split_whitespace().collect::<Vec<_>>().join(" ")).filter(|n| !n.is_empty()).collect();
    let mut cue_spans: Vec<Vec<(usize, usize)>> = vec![Vec::new(); s.utterances.len()];
    if let Some(cue) = &cue {
        for (i, u) in s.utterances.iter().enumerate() {
            for caps in cue.captures_iter(&u.text) {
                let m = caps.get(1).expect("group 1");
                if let Some((a, b)) = trim_cue_capture(m.as_str()) {
                    let (start, end) = (m.start() + a, m.start() + b);
                    full_names.insert(u.text[start..end].to_owned());
                    cue_spans[i].push((start, end));
                }
            }
        }
    }
    let name_tokens: BTreeSet<String> = full_names
        .iter()
        .flat_map(|n| n.split_whitespace())
        .filter(|t| t.chars().count() >= 2 && !CUE_STOPWORDS.contains(t) && !HONORIFICS.contains(t))
        .map(str::to_owned)
        .collect();
    let full_re = alternation(&full_names, true);
    let token_re = alternation(&name_tokens, true);
    let institutions: BTreeSet<String> =
        rules.institutions.iter().map(|n| n.trim().to_owned()).filter(|n| !n.is_empty()).collect();
    let inst_re = alternation(&institutions, true);

    let mut out = Vec::new();
    for (i, u) in s.utterances.iter().enumerate() {
        let text = u.text.as_str();
        let mut cands: Vec<Candidate> = pattern_hits(text)
            .into_iter()
            .map(|(category, start, end)| Candidate { category, start, end })
            .collect();
        let mut push_all = |re: &Option<Regex>, category: PiiCategory, capitalized: bool| {
            if let Some(re) = re {
                for m in re.find_iter(text) {
                    if capitalized && !m.as_str().starts_with(char::is_uppercase) {
                        continue;
                    }
                    cands.push(Candidate { category, start: m.start(), end: m.end() });
                }
            }
        };
        push_all(&full_re, PiiCategory::Person, false);
        push_all(&token_re, PiiCategory::Person, true);
        push_all(&inst_re, PiiCategory::Institution, false);
        for m in INSTITUTION_PATTERN.find_iter(text) {
            cands.push(Candidate { category: PiiCategory::Institution, start: m.start(), end: m.end() });
        }
        for &(start, end) in &cue_spans[i] {
            cands.push(Candidate { category: PiiCategory::Person, start, end });
        }
        let to_char = char_offsets(text);
        for c in resolve_overlaps(cands) {
            out.push(Detection {
                category: c.category,
                utterance_index: i,
                char_start: to_char(c.start),
                char_end: to_char(c.end),
                surface: text[c.start..c.end].to_owned(),
            });
        }
    }
    out
}

/// Finds PII spans in a raw session. Spans never overlap within an
/// utterance and are ordered by utterance then start.
pub fn detect_pii(s: &Session, rules: &DetectionRuleSet) -> Result<Vec<Detection>, DeidError> {
    if s.deid_status != DeidStatus::Raw {
        return Err(DeidError::AlreadyMasked(s.id.clone(), s.deid_status.as_str()));
    }
    Ok(scan_session(s, rules))
}

// ---------------------------------------------------------------------------
// Surrogates
// ---------------------------------------------------------------------------

struct Surrogator<'a> {
    seed: &'a [u8],
    session: &'a str,
    /// Lowercased strings a surrogate must never equal.
    forbidden: HashSet<String>,
    taken: HashSet<String>,
    name_tokens: HashMap<String, String>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum NameRole {
    Given,
    Surname,
}

impl<'a> Surrogator<'a> {
    fn digest(&self, label: &str, key: &str, attempt: u32, block: u32) -> [u8; 32] {
        let mut h = Sha256::new();
        for part in [self.seed, self.session.as_bytes(), label.as_bytes(), key.as_bytes()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        h.update(attempt.to_le_bytes());
        h.update(block.to_le_bytes());
        h.finalize().into()
    }

    fn bytes(&self, label: &str, key: &str, attempt: u32, n: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(n);
        let mut block = 0;
        while out.len() < n {
            out.extend_from_slice(&self.digest(label, key, attempt, block));
            block += 1;
        }
        out.truncate(n);
        out
    }

    fn pick<'p>(bytes: &[u8], pool: &'p [&'p str]) -> &'p str {
        let mut x = 0u64;
        for b in bytes.iter().take(8) {
            x = (x << 8) | u64::from(*b);
        }
        pool[(x % pool.len() as u64) as usize]
    }

    fn assign_name_tokens(&mut self, tokens: &BTreeMap<String, NameRole>) {
        let mut used: HashSet<String> = HashSet::new();
        for (token, role) in tokens {
            let (label, pool) = match role {
                NameRole::Given => ("person-given", GIVEN_NAMES),
                NameRole::Surname => ("person-surname", SURNAMES),
            };
            let mut attempt = 0;
            let chosen = loop {
                let candidate = if attempt < 4 * pool.len() as u32 {
                    Self::pick(&self.bytes(label, token, attempt, 8), pool).to_owned()
                } else {
                    format!("{}{}", Self::pick(&self.bytes(label, token, 0, 8), pool), attempt)
                };
                let lower = candidate.to_lowercase();
                if !tokens.contains_key(&lower) && !self.forbidden.contains(&lower) && used.insert(lower) {
                    break candidate;
                }
                attempt += 1;
            };
            self.name_tokens.insert(token.clone(), chosen);
        }
    }

    fn generate(&self, category: PiiCategory, key: &str, original: &str, attempt: u32) -> String {
        let b = self.bytes(category.as_str(), key, attempt, 64);
        match category {
            PiiCategory::Person => key
                .split(' ')
                .map(|t| self.name_tokens.get(t).cloned().unwrap_or_else(|| Self::pick(&b, GIVEN_NAMES).to_owned()))
                .collect::<Vec<_>>()
                .join(" "),
            PiiCategory::Email => format!(
                "{}.{}{:02}@{}",
                Self::pick(&b[0..8], GIVEN_NAMES).to_lowercase(),
                Self::pick(&b[8..16], SURNAMES).to_lowercase(),
                b[16] % 100,
                Self::pick(&b[24..32], pools::EMAIL_DOMAINS)
            ),
            PiiCategory::Phone => reshape(original, &b, true),
            PiiCategory::IdNumber => reshape(original, &b, false),
            PiiCategory::Url => {
                let lower = original.to_ascii_lowercase();
                let prefix = ["https://www.", "http://www.", "https://", "http://", "www."]
                    .into_iter()
                    .find(|p| lower.starts_with(p))
                    .unwrap_or("https://");
                let place = Self::pick(&b[0..8], pools::PLACES).to_lowercase().replace(' ', "-");
                format!("{prefix}{place}.example.org/{}", hex::encode(&b[8..11]))
            }
            PiiCategory::Institution => {
                let place = Self::pick(&b[0..8], pools::PLACES);
                if lower_starts(original, "university of") {
                    format!("University of {place}")
                } else {
                    let kind = pools::INSTITUTION_KINDS
                        .iter()
                        .find(|k| original.to_lowercase().contains(&k.to_lowercase()))
                        .copied()
                        .unwrap_or("School");
                    format!("{place} {kind}")
                }
            }
            PiiCategory::Date => fake_date(original, &b),
        }
    }

    fn surrogate(&mut self, category: PiiCategory, key: &str, original: &str) -> String {
        let mut attempt = 0;
        loop {
            let candidate = self.generate(category, key, original, attempt);
            let lower = candidate.to_lowercase();
            if (!self.forbidden.contains(&lower) && !self.taken.contains(&lower)) || attempt > 1000 {
                self.taken.insert(lower);
                return candidate;
            }
            attempt += 1;
        }
    }
}

fn lower_starts(s: &str, prefix: &str) -> bool {
    s.to_lowercase().starts_with(prefix)
}

/// Replaces digits (and, for ids, letters) keeping every separator, so the
/// surrogate has the same grouping shape as the original.
fn reshape(original: &str, bytes: &[u8], phone: bool) -> String {
    let mut out = String::with_capacity(original.len());
    let mut prev_digit = false;
    for (i, ch) in original.chars().enumerate() {
        let b = bytes[i % bytes.len()].wrapping_add((i / bytes.len()) as u8);
        let next = if ch.is_ascii_digit() {
            let d = if phone && !prev_digit { 2 + b % 8 } else { b % 10 };
            char::from(b'0' + d)
        } else if ch.is_ascii_uppercase() {
            char::from(b'A' + b % 26)
        } else if ch.is_ascii_lowercase() {
            char::from(b'a' + b % 26)
        } else {
            ch
        };
        prev_digit = ch.is_ascii_digit();
        out.push(next);
    }
    out
}

static NUMERIC_MDY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{1,2})/(\d{1,2})/(\d{2,4})$").unwrap());
static ISO_DATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{4})-(\d{2})-(\d{2})$").unwrap());

const MONTH_NAMES: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November", "December",
];

/// A valid-looking date in the same format; the year is kept.
fn fake_date(original: &str, b: &[u8]) -> String {
    let month = 1 + b[0] % 12;
    let day = 1 + b[1] % 28;
    let pad = |orig: &str, v: u8| if orig.len() == 2 { format!("{v:02}") } else { v.to_string() };
    if let Some(c) = NUMERIC_MDY.captures(original) {
        return format!("{}/{}/{}", pad(&c[1], month), pad(&c[2], day), &c[3]);
    }
    if let Some(c) = ISO_DATE.captures(original) {
        return format!("{}-{month:02}-{day:02}", &c[1]);
    }
    let name = MONTH_NAMES[usize::from(month - 1)];
    let first = original.split([' ', '.']).next().unwrap_or("");
    let month_text = if first.len() <= 4 && name.len() > 4 { &name[..3] } else { name };
    let year = original.rsplit_once(", ").map(|(_, y)| y).filter(|y| y.chars().all(|c| c.is_ascii_digit()));
    match year {
        Some(y) => format!("{month_text} {day}, {y}"),
        None => format!("{month_text} {day}"),
    }
}

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

fn char_to_byte(text: &str, ch: usize) -> Option<usize> {
    if ch == text.chars().count() {
        return Some(text.len());
    }
    text.char_indices().nth(ch).map(|(b, _)| b)
}

/// Replaces every detection with a surrogate. Identical normalized originals
/// share one surrogate; output is a pure function of the inputs.
pub fn mask_session(
    s: &Session,
    detections: &[Detection],
    surrogate_seed: &[u8],
) -> Result<(Session, MaskMap), DeidError> {
    if s.deid_status != DeidStatus::Raw {
        return Err(DeidError::AlreadyMasked(s.id.clone(), s.deid_status.as_str()));
    }
    let mut per_utt: BTreeMap<usize, Vec<&Detection>> = BTreeMap::new();
    for d in detections {
        let mismatch =
            || DeidError::DetectionMismatch { utterance_index: d.utterance_index, start: d.char_start, end: d.char_end };
        let u = s.utterances.get(d.utterance_index).ok_or_else(mismatch)?;
        let (Some(a), Some(b)) = (char_to_byte(&u.text, d.char_start), char_to_byte(&u.text, d.char_end)) else {
            return Err(mismatch());
        };
        if a >= b || u.text[a..b] != d.surface {
            return Err(mismatch());
        }
        per_utt.entry(d.utterance_index).or_default().push(d);
    }
    for (idx, ds) in per_utt.iter_mut() {
        ds.sort_by_key(|d| (d.char_start, d.char_end));
        for w in ds.windows(2) {
            if w[1].char_start < w[0].char_end {
                return Err(DeidError::Overlapping { utterance_index: *idx, start: w[1].char_start, end: w[0].char_end });
            }
        }
    }

    // Group originals by consistency key.
    let mut groups: BTreeMap<(PiiCategory, String), BTreeSet<String>> = BTreeMap::new();
    for d in detections {
        groups.entry((d.category, normalize(&d.surface))).or_default().insert(d.surface.clone());
    }

    let mut forbidden: HashSet<String> = groups.keys().map(|(_, k)| k.clone()).collect();
    forbidden.extend(s.participants.iter().map(|p| normalize(&p.speaker_id)));
    let mut name_roles: BTreeMap<String, NameRole> = BTreeMap::new();
    for (cat, key) in groups.keys() {
        if *cat == PiiCategory::Person {
            for (pos, tok) in key.split(' ').enumerate() {
                let role = if pos == 0 { NameRole::Given } else { NameRole::Surname };
                let slot = name_roles.entry(tok.to_owned()).or_insert(role);
                *slot = (*slot).max(role);
            }
        }
    }
    forbidden.extend(name_roles.keys().cloned());
    let session_key = s.id.as_str().to_owned();
    let mut surrogator = Surrogator {
        seed: surrogate_seed,
        session: &session_key,
        forbidden,
        taken: HashSet::new(),
        name_tokens: HashMap::new(),
    };
    surrogator.assign_name_tokens(&name_roles);
    let mut surrogates: BTreeMap<(PiiCategory, String), String> = BTreeMap::new();
    for ((cat, key), originals) in &groups {
        let representative = originals.iter().next().expect("non-empty group");
        let sur = surrogator.surrogate(*cat, key, representative);
        surrogates.insert((*cat, key.clone()), sur);
    }

    let mut masked = s.clone();
    let mut occurrences: BTreeMap<(PiiCategory, String), Vec<Occurrence>> = BTreeMap::new();
    for (idx, ds) in &per_utt {
        let text = &s.utterances[*idx].text;
        let mut out = String::with_capacity(text.len());
        let mut out_chars = 0usize;
        let mut cursor = 0usize;
        for d in ds {
            let a = char_to_byte(text, d.char_start).expect("checked");
            let b = char_to_byte(text, d.char_end).expect("checked");
            let before = &text[cursor..a];
            out.push_str(before);
            out_chars += before.chars().count();
            let key = (d.category, normalize(&d.surface));
            let sur = &surrogates[&key];
            out.push_str(sur);
            let len = sur.chars().count();
            occurrences.entry(key).or_default().push(Occurrence {
                utterance_index: *idx,
                char_start: out_chars,
                char_end: out_chars + len,
            });
            out_chars += len;
            cursor = b;
        }
        out.push_str(&text[cursor..]);
        masked.utterances[*idx].text = out;
    }

    // Speaker ids that are detected person names.
    let mut speaker_keys: BTreeSet<String> = BTreeSet::new();
    let mut rename: HashMap<String, String> = HashMap::new();
    for p in &s.participants {
        let key = (PiiCategory::Person, normalize(&p.speaker_id));
        if let Some(sur) = surrogates.get(&key) {
            rename.insert(p.speaker_id.clone(), sur.clone());
            speaker_keys.insert(key.1);
        }
    }
    for p in &mut masked.participants {
        if let Some(new) = rename.get(&p.speaker_id) {
            p.speaker_id = new.clone();
        }
    }
    for u in &mut masked.utterances {
        if let Some(new) = rename.get(&u.speaker_id) {
            u.speaker_id = new.clone();
        }
    }
    masked.deid_status = DeidStatus::Masked;

    let entries = groups
        .into_iter()
        .map(|((category, key), originals)| {
            let mut occ = occurrences.remove(&(category, key.clone())).unwrap_or_default();
            occ.sort();
            let speaker = category == PiiCategory::Person && speaker_keys.contains(&key);
            let mut originals: Vec<String> = originals.into_iter().collect();
            if speaker {
                for p in &s.participants {
                    if normalize(&p.speaker_id) == key && !originals.contains(&p.speaker_id) {
                        originals.push(p.speaker_id.clone());
                    }
                }
                originals.sort();
            }
            MaskEntry {
                category,
                originals,
                surrogate: surrogates[&(category, key)].clone(),
                occurrences: occ,
                speaker,
            }
        })
        .collect();
    Ok((masked, MaskMap { session_id: s.id.clone(), entries }))
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// A located finding; never carries the original text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReportedSpan {
    pub category: PiiCategory,
    pub utterance_index: usize,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub session_id: SessionId,
    pub status: DeidStatus,
    pub residual_hits: Vec<ReportedSpan>,
    pub leaked_originals: Vec<ReportedSpan>,
    /// Leaked originals found among speaker ids, by participant position.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leaked_speakers: Vec<usize>,
    pub counts_by_category: BTreeMap<PiiCategory, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer_notes: Option<String>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.residual_hits.is_empty() && self.leaked_originals.is_empty() && self.leaked_speakers.is_empty()
    }
}

/// Audits a masked session against its mask map for the human reviewer.
pub fn verify_masking(original: &Session, masked: &Session, map: &MaskMap) -> Result<VerificationReport, DeidError> {
    if original.id != masked.id {
        return Err(DeidError::SessionMismatch(original.id.clone(), masked.id.clone()));
    }
    if map.session_id != masked.id {
        return Err(DeidError::SessionMismatch(map.session_id.clone(), masked.id.clone()));
    }
    let mut covered: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    let mut counts: BTreeMap<PiiCategory, usize> = BTreeMap::new();
    for e in &map.entries {
        *counts.entry(e.category).or_default() += e.occurrences.len();
        for o in &e.occurrences {
            let intact = masked.utterances.get(o.utterance_index).is_some_and(|u| {
                u.text.chars().skip(o.char_start).take(o.char_end - o.char_start).eq(e.surrogate.chars())
            });
            if intact {
                covered.entry(o.utterance_index).or_default().push((o.char_start, o.char_end));
            }
        }
    }

    let mut residual = Vec::new();
    for (i, u) in masked.utterances.iter().enumerate() {
        let to_char = char_offsets(&u.text);
        for (category, a, b) in pattern_hits(&u.text) {
            let (start, end) = (to_char(a), to_char(b));
            let is_surrogate = covered.get(&i).is_some_and(|spans| spans.iter().any(|&(s, e)| s <= start && end <= e));
            if !is_surrogate {
                residual.push(ReportedSpan { category, utterance_index: i, char_start: start, char_end: end });
            }
        }
    }
    residual.sort();
    residual.dedup();

    let mut leaked = Vec::new();
    let mut leaked_speakers = BTreeSet::new();
    for e in &map.entries {
        let originals: BTreeSet<String> = e.originals.iter().map(|o| o.trim().to_owned()).collect();
        let Some(re) = alternation(&originals, true) else { continue };
        for (i, u) in masked.utterances.iter().enumerate() {
            let to_char = char_offsets(&u.text);
            for m in re.find_iter(&u.text) {
                leaked.push(ReportedSpan {
                    category: e.category,
                    utterance_index: i,
                    char_start: to_char(m.start()),
                    char_end: to_char(m.end()),
                });
            }
        }
        for (pos, p) in masked.participants.iter().enumerate() {
            if originals.iter().any(|o| normalize(o) == normalize(&p.speaker_id)) {
                leaked_speakers.insert(pos);
            }
        }
    }
    leaked.sort();
    leaked.dedup();

    Ok(VerificationReport {
        session_id: masked.id.clone(),
        status: masked.deid_status,
        residual_hits: residual,
        leaked_originals: leaked,
        leaked_speakers: leaked_speakers.into_iter().collect(),
        counts_by_category: counts,
        reviewer_notes: masked.metadata.get(REVIEW_NOTES_KEY).cloned(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum ReviewDecision {
    Approve {
        #[serde(default)]
        notes: Option<String>,
    },
    Reject {
        #[serde(default)]
        notes: Option<String>,
    },
}

/// Applies a reviewer's decision. Approval moves a masked session to
/// verified and is idempotent on verified sessions; rejection leaves it
/// masked with the notes recorded.
pub fn apply_review(masked: &Session, decision: &ReviewDecision) -> Result<Session, DeidError> {
    let mut out = masked.clone();
    let illegal = |to: DeidStatus| DeidError::IllegalTransition(masked.id.clone(), masked.deid_status.as_str(), to.as_str());
    match decision {
        ReviewDecision::Approve { notes } => {
            if masked.deid_status == DeidStatus::Verified {
                return Ok(out);
            }
            out.advance_deid(DeidStatus::Verified).map_err(|_| illegal(DeidStatus::Verified))?;
            match notes {
                Some(n) => out.metadata.insert(REVIEW_NOTES_KEY.to_owned(), n.clone()),
                None => out.metadata.remove(REVIEW_NOTES_KEY),
            };
        }
        ReviewDecision::Reject { notes } => {
            if masked.deid_status != DeidStatus::Masked {
                return Err(illegal(DeidStatus::Masked));
            }
            out.metadata
                .insert(REVIEW_NOTES_KEY.to_owned(), notes.clone().unwrap_or_else(|| "rejected".to_owned()));
        }
    }
    Ok(out)
}
