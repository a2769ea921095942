//! Normalization of raw transcripts into canonical [`Session`]s.
//!
//! Three inputs are understood: `Speaker: text` plaintext dialogue, CSV with
//! a header row, and the canonical `sandpiper.session.v1` JSON document that
//! [`export_session_json`] writes. Recoverable defects become warnings in the
//! [`IngestReport`]; only structural problems are errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{DeidStatus, Participant, Session, SessionError, SessionId, SourceFormat, Utterance};

pub const SESSION_FORMAT_TAG: &str = "sandpiper.session.v1";

/// Metadata key carrying [`Session::source_format`] in the canonical document.
pub const SOURCE_FORMAT_KEY: &str = "source_format";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub sessions_created: usize,
    pub lines_skipped: Vec<SkippedLine>,
    pub warnings: Vec<IngestWarning>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input is not valid UTF-8 (first bad byte at offset {0})")]
    NotUtf8(usize),
    #[error("zero parseable utterances")]
    NoUtterances { report: IngestReport },
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {message}")]
    Structure { path: String, message: String },
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl IngestError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        IngestError::Structure { path: path.into(), message: message.into() }
    }
}

fn decode(bytes: &[u8]) -> Result<&str, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::NotUtf8(e.valid_up_to()))?;
    Ok(text.strip_prefix('\u{feff}').unwrap_or(text))
}

fn participants_in_order<'a>(speakers: impl IntoIterator<Item = &'a str>) -> Vec<Participant> {
    let mut out: Vec<Participant> = Vec::new();
    for s in speakers {
        if !out.iter().any(|p| p.speaker_id == s) {
            out.push(Participant::new(s));
        }
    }
    out
}

/// Splits `Speaker: text` where the speaker label has no leading whitespace
/// and the colon is followed by whitespace or the end of the line.
fn split_speaker(line: &str) -> Option<(&str, &str)> {
    if line.starts_with(char::is_whitespace) {
        return None;
    }
    let colon = line.find(':')?;
    let speaker = line[..colon].trim_end();
    let rest = &line[colon + 1..];
    if speaker.is_empty() || speaker.chars().count() > 64 {
        return None;
    }
    if !(rest.is_empty() || rest.starts_with(char::is_whitespace)) {
        return None;
    }
    Some((speaker, rest.trim()))
}

/// Parses `Speaker: text` dialogue. Lines without a speaker prefix continue
/// the previous utterance.
pub fn parse_plaintext(bytes: &[u8], title: &str) -> Result<(Session, IngestReport), IngestError> {
    let text = decode(bytes)?;
    let mut report = IngestReport::default();
    let mut turns: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            report.lines_skipped.push(SkippedLine { line: line_no, reason: "blank line".into() });
            continue;
        }
        if let Some((speaker, body)) = split_speaker(line) {
            turns.push((speaker.to_owned(), body.to_owned()));
        } else if let Some((_, body)) = turns.last_mut() {
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line.trim());
        } else {
            report.lines_skipped.push(SkippedLine {
                line: line_no,
                reason: "no `Speaker:` prefix and no preceding utterance to continue".into(),
            });
        }
    }
    if turns.is_empty() {
        return Err(IngestError::NoUtterances { report });
    }
    let participants = participants_in_order(turns.iter().map(|(s, _)| s.as_str()));
    let utterances = turns.into_iter().map(|(s, t)| Utterance::new(s, t)).collect();
    let session = Session::new(title, participants, utterances)?.with_source_format(SourceFormat::Plaintext);
    report.sessions_created = 1;
    Ok((session, report))
}

fn parse_timestamp(cell: &str) -> Result<Option<f64>, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(t) if t.is_finite() && t >= 0.0 => Ok(Some(t)),
        _ => Err(format!("malformed timestamp `{cell}`; utterance kept without a timestamp")),
    }
}

/// Parses a CSV transcript with `speaker` and `text` columns and an optional
/// `timestamp` column (decimal seconds).
pub fn parse_csv(bytes: &[u8], title: &str) -> Result<(Session, IngestReport), IngestError> {
    let text = decode(bytes)?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let speaker_col = column("speaker").ok_or(IngestError::MissingColumn("speaker"))?;
    let text_col = column("text").ok_or(IngestError::MissingColumn("text"))?;
    let ts_col = column("timestamp");

    let mut report = IngestReport::default();
    let mut utterances = Vec::new();
    let mut last_ts: Option<f64> = None;
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = record.position().map_or(row_no + 2, |p| p.line() as usize);
        let (Some(speaker), Some(body)) = (record.get(speaker_col), record.get(text_col)) else {
            report.lines_skipped.push(SkippedLine { line, reason: "row is missing the speaker or text cell".into() });
            continue;
        };
        let speaker = speaker.trim();
        if speaker.is_empty() {
            report.lines_skipped.push(SkippedLine { line, reason: "empty speaker cell".into() });
            continue;
        }
        let mut utt = Utterance::new(speaker, body);
        if let Some(cell) = ts_col.and_then(|c| record.get(c)) {
            match parse_timestamp(cell) {
                Ok(Some(t)) if last_ts.is_some_and(|prev| t < prev) => report.warnings.push(IngestWarning {
                    location: format!("line {line}"),
                    message: format!("timestamp {t} goes backwards; utterance kept without a timestamp"),
                }),
                Ok(ts) => {
                    if ts.is_some() {
                        last_ts = ts;
                    }
                    utt.timestamp = ts;
                }
                Err(message) => report.warnings.push(IngestWarning { location: format!("line {line}"), message }),
            }
        }
        utterances.push(utt);
    }
    if utterances.is_empty() {
        return Err(IngestError::NoUtterances { report });
    }
    let participants = participants_in_order(utterances.iter().map(|u: &Utterance| u.speaker_id.as_str()));
    let session = Session::new(title, participants, utterances)?.with_source_format(SourceFormat::Csv);
    report.sessions_created = 1;
    Ok((session, report))
}

// Wire structs fix the key order of the canonical document.

#[derive(Serialize)]
struct WireSession<'a> {
    format: &'static str,
    id: &'a SessionId,
    title: &'a str,
    participants: &'a [Participant],
    deid_status: DeidStatus,
    utterances: &'a [Utterance],
    metadata: BTreeMap<&'a str, &'a str>,
}

/// Deterministic canonical serialization. Optional fields that are absent
/// are omitted rather than written as `null`.
pub fn export_session_json(s: &Session) -> Vec<u8> {
    let mut metadata: BTreeMap<&str, &str> = s.metadata.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    metadata.insert(SOURCE_FORMAT_KEY, s.source_format.as_str());
    let wire = WireSession {
        format: SESSION_FORMAT_TAG,
        id: &s.id,
        title: &s.title,
        participants: &s.participants,
        deid_status: s.deid_status,
        utterances: &s.utterances,
        metadata,
    };
    let mut out = serde_json::to_vec_pretty(&wire).expect("session serialization is infallible");
    out.push(b'\n');
    out
}

fn expect_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, IngestError> {
    v.as_object().ok_or_else(|| IngestError::at(path, "expected an object"))
}

fn expect_str<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a str, IngestError> {
    let p = format!("{path}/{key}");
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(IngestError::at(p, "expected a string")),
        None => Err(IngestError::at(p, "missing required key")),
    }
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<(), IngestError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(IngestError::at(format!("{path}/{k}"), "unknown key")),
        None => Ok(()),
    }
}

fn expect_array<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Vec<Value>, IngestError> {
    let p = format!("{path}/{key}");
    match obj.get(key) {
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(IngestError::at(p, "expected an array")),
        None => Err(IngestError::at(p, "missing required key")),
    }
}

/// Parses a canonical session document; inverse of [`export_session_json`].
pub fn parse_session_json(bytes: &[u8]) -> Result<Session, IngestError> {
    let text = decode(bytes)?;
    let doc: Value = serde_json::from_str(text).map_err(|e| IngestError::at("", format!("invalid JSON: {e}")))?;
    let top = expect_object(&doc, "")?;
    reject_unknown(top, &["format", "id", "title", "participants", "deid_status", "utterances", "metadata"], "")?;
    let format = expect_str(top, "format", "")?;
    if format != SESSION_FORMAT_TAG {
        return Err(IngestError::at("/format", format!("expected `{SESSION_FORMAT_TAG}`, found `{format}`")));
    }
    let id = expect_str(top, "id", "")?;
    if id.is_empty() {
        return Err(IngestError::at("/id", "session id must be non-empty"));
    }
    let title = expect_str(top, "title", "")?;
    let deid_status: DeidStatus = expect_str(top, "deid_status", "")?
        .parse()
        .map_err(|e: String| IngestError::at("/deid_status", e))?;

    let mut participants = Vec::new();
    for (i, p) in expect_array(top, "participants", "")?.iter().enumerate() {
        let path = format!("/participants/{i}");
        let obj = expect_object(p, &path)?;
        reject_unknown(obj, &["speaker_id", "role"], &path)?;
        let speaker_id = expect_str(obj, "speaker_id", &path)?.to_owned();
        let role = match obj.get("role") {
            None => None,
            Some(Value::String(r)) => Some(r.clone()),
            Some(_) => return Err(IngestError::at(format!("{path}/role"), "expected a string")),
        };
        participants.push(Participant { speaker_id, role });
    }

    let mut utterances = Vec::new();
    for (i, u) in expect_array(top, "utterances", "")?.iter().enumerate() {
        let path = format!("/utterances/{i}");
        let obj = expect_object(u, &path)?;
        reject_unknown(obj, &["index", "speaker_id", "timestamp", "text"], &path)?;
        let index = match obj.get("index") {
            Some(Value::Number(n)) => match n.as_u64() {
                Some(x) if x == i as u64 => x as usize,
                Some(x) => {
                    return Err(IngestError::at(
                        format!("{path}/index"),
                        format!("index {x} at position {i} breaks the Session invariant that indices run 0..n-1"),
                    ))
                }
                None => {
                    return Err(IngestError::at(
                        format!("{path}/index"),
                        format!("index {n} is not a non-negative integer (Session invariant: indices run 0..n-1)"),
                    ))
                }
            },
            Some(_) => return Err(IngestError::at(format!("{path}/index"), "expected an integer")),
            None => return Err(IngestError::at(format!("{path}/index"), "missing required key")),
        };
        let speaker_id = expect_str(obj, "speaker_id", &path)?.to_owned();
        let text = expect_str(obj, "text", &path)?.to_owned();
        let timestamp = match obj.get("timestamp") {
            None => None,
            Some(Value::Number(n)) => n.as_f64(),
            Some(_) => return Err(IngestError::at(format!("{path}/timestamp"), "expected a number")),
        };
        utterances.push(Utterance { index, speaker_id, timestamp, text });
    }

    let mut metadata = BTreeMap::new();
    if let Some(meta) = top.get("metadata") {
        for (k, v) in expect_object(meta, "/metadata")? {
            let v = v
                .as_str()
                .ok_or_else(|| IngestError::at(format!("/metadata/{k}"), "expected a string"))?;
            metadata.insert(k.clone(), v.to_owned());
        }
    } else {
        return Err(IngestError::at("/metadata", "missing required key"));
    }
    let source_format = match metadata.remove(SOURCE_FORMAT_KEY) {
        Some(f) => f.parse().map_err(|e: String| IngestError::at(format!("/metadata/{SOURCE_FORMAT_KEY}"), e))?,
        None => SourceFormat::SessionJson,
    };

    let session = Session {
        id: SessionId::from(id),
        title: title.to_owned(),
        source_format,
        participants,
        utterances,
        deid_status,
        metadata,
    };
    if let Some(v) = session.validate().into_iter().next() {
        let path = match v.index {
            Some(i) => format!("/utterances/{i}"),
            None => "/participants".to_owned(),
        };
        return Err(IngestError::at(path, format!("Session invariant violated: {}", v.message)));
    }
    Ok(session)
}

/// Dispatches on `format`.
pub fn parse(bytes: &[u8], format: SourceFormat, title: &str) -> Result<(Session, IngestReport), IngestError> {
    match format {
        SourceFormat::Plaintext => parse_plaintext(bytes, title),
        SourceFormat::Csv => parse_csv(bytes, title),
        SourceFormat::SessionJson => {
            let s = parse_session_json(bytes)?;
            Ok((s, IngestReport { sessions_created: 1, ..Default::default() }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plaintext_two_speakers() {
        let (s, report) = parse_plaintext(b"Tutor: Hi\nStudent: Hello", "t").unwrap();
        assert_eq!(s.utterances.len(), 2);
        let speakers: Vec<_> = s.participants.iter().map(|p| p.speaker_id.as_str()).collect();
        assert_eq!(speakers, ["Tutor", "Student"]);
        assert_eq!(report.sessions_created, 1);
        assert_eq!(s.source_format, SourceFormat::Plaintext);
    }

    #[test]
    fn plaintext_continuation() {
        let (s, _) = parse_plaintext(b"Tutor: Hi\n  continued", "t").unwrap();
        assert_eq!(s.utterances.len(), 1);
        assert_eq!(s.utterances[0].text, "Hi\ncontinued");
    }

    #[test]
    fn plaintext_without_speakers() {
        match parse_plaintext(b"no colon anywhere", "t") {
            Err(IngestError::NoUtterances { report }) => {
                assert_eq!(report.lines_skipped.len(), 1);
                assert_eq!(report.lines_skipped[0].line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(parse_plaintext(b"no colon anywhere", "t").unwrap_err().to_string(), "zero parseable utterances");
    }

    #[test]
    fn plaintext_urls_are_not_speakers() {
        let (s, _) = parse_plaintext(b"Tutor: see\nhttp://example.org/x\r\n\nStudent: ok", "t").unwrap();
        assert_eq!(s.utterances.len(), 2);
        assert_eq!(s.utterances[0].text, "see\nhttp://example.org/x");
    }

    #[test]
    fn plaintext_rejects_invalid_utf8() {
        assert!(matches!(parse_plaintext(b"Tutor: \xff", "t"), Err(IngestError::NotUtf8(7))));
    }

    #[test]
    fn csv_with_timestamps() {
        let data = b"speaker,timestamp,text\nTutor,0.0,Hi\nStudent,1.5,\"Hello, there\"\nTutor,2.0,Ok\n";
        let (s, report) = parse_csv(data, "t").unwrap();
        let ts: Vec<_> = s.utterances.iter().map(|u| u.timestamp).collect();
        assert_eq!(ts, vec![Some(0.0), Some(1.5), Some(2.0)]);
        assert_eq!(s.utterances[1].text, "Hello, there");
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn csv_bad_timestamp_warns() {
        let (s, report) = parse_csv(b"speaker,text,timestamp\nTutor,Hi,abc\n", "t").unwrap();
        assert_eq!(s.utterances[0].timestamp, None);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.warnings[0].location, "line 2");
    }

    #[test]
    fn csv_missing_text_column() {
        let err = parse_csv(b"speaker,timestamp\nTutor,1\n", "t").unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn("text")));
        assert!(err.to_string().contains("text"));
    }

    #[test]
    fn session_json_round_trip() {
        let (mut s, _) = parse_csv(b"speaker,timestamp,text\nTutor,0.25,Hi\nStudent,,Yo\n", "t").unwrap();
        s.metadata.insert("course".into(), "algebra".into());
        s.participants[0].role = Some("tutor".into());
        let first = export_session_json(&s);
        let back = parse_session_json(&first).unwrap();
        assert_eq!(back, s);
        assert_eq!(export_session_json(&back), first);
        assert_eq!(export_session_json(&s), first);
    }

    #[test]
    fn export_omits_absent_optionals() {
        let (s, _) = parse_plaintext(b"Tutor: Hi", "t").unwrap();
        let text = String::from_utf8(export_session_json(&s)).unwrap();
        assert!(!text.contains("null"));
        assert!(!text.contains("timestamp"));
        assert!(!text.contains("role"));
        let v: Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 7);
        assert!(text.find("\"format\"").unwrap() < text.find("\"utterances\"").unwrap());
    }

    #[test]
    fn session_json_structural_errors() {
        let (s, _) = parse_plaintext(b"Tutor: Hi", "t").unwrap();
        let mut v: Value = serde_json::from_slice(&export_session_json(&s)).unwrap();
        v.as_object_mut().unwrap().remove("utterances");
        match parse_session_json(v.to_string().as_bytes()) {
            Err(IngestError::Structure { path, .. }) => assert_eq!(path, "/utterances"),
            other => panic!("unexpected {other:?}"),
        }

        let mut v: Value = serde_json::from_slice(&export_session_json(&s)).unwrap();
        v["utterances"][0]["index"] = serde_json::json!(-1);
        let err = parse_session_json(v.to_string().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("/utterances/0/index"));
        assert!(err.to_string().contains("Session invariant"));

        let mut v: Value = serde_json::from_slice(&export_session_json(&s)).unwrap();
        v["utterances"][0]["speaker_id"] = serde_json::json!("Nobody");
        let err = parse_session_json(v.to_string().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("Session invariant"));
    }
}
