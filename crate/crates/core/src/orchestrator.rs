//! Run execution: the call / validate / feedback / retry loop.
//!
//! Each item (one focal utterance, or a whole session at session
//! granularity) goes to the provider with the prompt's instructions and a
//! rendering of its schema. A reply that fails validation is answered with
//! the rendered feedback as a new user turn, up to `max_retries` times.
//! Only replies that validate clean are ever written to the store.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatProvider, ChatRequest, GatewayError, SESSION_REPLY_MARKER};
use crate::model::{
    sha256_hex, unique_annotation_key, Annotation, AnnotationId, CodingSchema, DeidStatus, Granularity, LabelSource,
    Prompt, PromptVersion, PromptVersionRef, Run, RunId, RunParams, RunState, Session, SessionId,
};
use crate::schema::{self, ErrorKind, ValidationError};
use crate::store::{Access, Collection, DocumentStore, StoreError};

pub const SESSION_DIRECTIVE: &str = concat!(
    "Annotate every numbered utterance. Reply with only one JSON document of the form ",
    "{\"annotations\": [{\"index\": <utterance number>, ...schema fields}]}",
    " with exactly one entry per utterance, each conforming to the schema, and no other text."
);

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("session {0} is raw; only masked or verified sessions may be sent to a non-mock provider")]
    PrivacyGuard(SessionId),
    #[error("focal index {index} is out of range for a session of {len} utterances")]
    FocalOutOfRange { index: usize, len: usize },
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown prompt version {0}")]
    UnknownPromptVersion(PromptVersionRef),
    #[error("prompt version {0} must be frozen before a run uses it")]
    NotFrozen(PromptVersionRef),
    #[error("run {0} is {1}, not queued")]
    NotQueued(RunId, &'static str),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Cooperative cancellation, checked between items.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

pub fn system_prompt(pv: &PromptVersion, granularity: Granularity) -> String {
    let directive = match granularity {
        Granularity::Utterance => schema::REPLY_DIRECTIVE,
        Granularity::Session => SESSION_DIRECTIVE,
    };
    debug_assert!(granularity == Granularity::Utterance || directive.contains(SESSION_REPLY_MARKER));
    format!("{}\n\n{}\n\n{directive}", pv.instructions.trim_end(), schema::render_schema(&pv.schema))
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn guard(s: &Session, provider_is_mock: bool) -> Result<(), OrchestratorError> {
    if !provider_is_mock && s.deid_status == DeidStatus::Raw {
        return Err(OrchestratorError::PrivacyGuard(s.id.clone()));
    }
    Ok(())
}

/// Messages for one focal utterance: the system prompt, then a user turn
/// with up to `context_window` preceding utterances and the focal line
/// marked `>> `.
pub fn build_messages(
    pv: &PromptVersion,
    s: &Session,
    focal_index: usize,
    context_window: usize,
    provider_is_mock: bool,
) -> Result<Vec<ChatMessage>, OrchestratorError> {
    guard(s, provider_is_mock)?;
    if focal_index >= s.utterances.len() {
        return Err(OrchestratorError::FocalOutOfRange { index: focal_index, len: s.utterances.len() });
    }
    let first = focal_index.saturating_sub(context_window);
    let lines: Vec<String> = s.utterances[first..=focal_index]
        .iter()
        .map(|u| {
            let marker = if u.index == focal_index { ">> " } else { "" };
            format!("{marker}{}: {}", u.speaker_id, one_line(&u.text))
        })
        .collect();
    Ok(vec![ChatMessage::system(system_prompt(pv, Granularity::Utterance)), ChatMessage::user(lines.join("\n"))])
}

/// Messages annotating a whole session in one call; lines are `[i] speaker: text`.
pub fn build_session_messages(
    pv: &PromptVersion,
    s: &Session,
    provider_is_mock: bool,
) -> Result<Vec<ChatMessage>, OrchestratorError> {
    guard(s, provider_is_mock)?;
    let lines: Vec<String> =
        s.utterances.iter().map(|u| format!("[{}] {}: {}", u.index, u.speaker_id, one_line(&u.text))).collect();
    Ok(vec![ChatMessage::system(system_prompt(pv, Granularity::Session)), ChatMessage::user(lines.join("\n"))])
}

// ---------------------------------------------------------------------------
// The loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub request_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_digest: Option<String>,
    pub errors: Vec<ValidationError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemOutcome {
    Succeeded,
    FailedSchema,
    FailedTransport,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemResult<T> {
    pub outcome: ItemOutcome,
    pub attempts: Vec<AttemptRecord>,
    /// Present iff the outcome is `Succeeded`.
    pub value: Option<T>,
    pub gateway_error: Option<GatewayError>,
}

/// Model-side request settings shared by every call of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CallSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
}

impl CallSettings {
    pub fn new(model_id: impl Into<String>, params: &RunParams) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            max_retries: params.max_retries,
        }
    }
}

fn run_loop<T>(
    mut messages: Vec<ChatMessage>,
    schema: &CodingSchema,
    provider: &dyn ChatProvider,
    settings: &CallSettings,
    feedback_suffix: Option<&str>,
    check: impl Fn(&str) -> Result<T, Vec<ValidationError>>,
) -> ItemResult<T> {
    let mut attempts = Vec::new();
    for n in 0..=settings.max_retries {
        let req = ChatRequest {
            model_id: settings.model_id.clone(),
            messages: messages.clone(),
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
        };
        let request_digest = req.digest();
        let reply = match provider.complete(&req) {
            Ok(r) => r,
            Err(e) => {
                attempts.push(AttemptRecord {
                    request_digest,
                    reply_digest: None,
                    errors: Vec::new(),
                    transport_error: Some(e.to_string()),
                });
                return ItemResult { outcome: ItemOutcome::FailedTransport, attempts, value: None, gateway_error: Some(e) };
            }
        };
        let reply_digest = Some(sha256_hex(&reply.content));
        match check(schema::extract_candidate(&reply.content)) {
            Ok(value) => {
                attempts.push(AttemptRecord { request_digest, reply_digest, errors: Vec::new(), transport_error: None });
                return ItemResult { outcome: ItemOutcome::Succeeded, attempts, value: Some(value), gateway_error: None };
            }
            Err(errors) => {
                log::debug!("attempt {} failed validation with {} error(s)", n + 1, errors.len());
                let mut feedback = schema::render_feedback(&errors, schema).expect("failed validation has errors");
                if let Some(extra) = feedback_suffix {
                    feedback.push_str("\n\n");
                    feedback.push_str(extra);
                }
                attempts.push(AttemptRecord { request_digest, reply_digest, errors, transport_error: None });
                messages.push(ChatMessage::assistant(reply.content));
                messages.push(ChatMessage::user(feedback));
            }
        }
    }
    ItemResult { outcome: ItemOutcome::FailedSchema, attempts, value: None, gateway_error: None }
}

/// Runs the loop for one utterance. On success the value is the validated
/// document; after `1 + max_retries` failed validations the outcome is
/// `FailedSchema`.
pub fn annotate_item(
    messages: Vec<ChatMessage>,
    schema: &CodingSchema,
    provider: &dyn ChatProvider,
    settings: &CallSettings,
) -> ItemResult<Value> {
    run_loop(messages, schema, provider, settings, None, |text| {
        let errors = schema::validate(text, schema);
        if errors.is_empty() {
            Ok(serde_json::from_str(text).expect("validated text parses"))
        } else {
            Err(errors)
        }
    })
}

/// Checks a session-granularity reply. On success returns one document per
/// utterance, in index order.
pub fn validate_session_reply(text: &str, schema: &CodingSchema, n_utterances: usize) -> Result<Vec<Value>, Vec<ValidationError>> {
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(_) => return Err(schema::validate(text, schema)),
    };
    let Value::Object(map) = value else {
        return Err(vec![ValidationError::new(None, ErrorKind::NotAnObject, "a JSON object", "a non-object value")]);
    };
    let mut errors = Vec::new();
    for key in map.keys().filter(|k| *k != "annotations") {
        errors.push(ValidationError::at(&format!("/{key}"), ErrorKind::UnknownField, "only the field annotations", key.clone()));
    }
    let entries = match map.get("annotations") {
        Some(Value::Array(a)) => a,
        Some(other) => {
            errors.push(ValidationError::at("/annotations", ErrorKind::TypeMismatch, "an array", other.to_string()));
            return Err(errors);
        }
        None => {
            errors.push(ValidationError::at("/annotations", ErrorKind::MissingRequired, "an array", "nothing (field absent)"));
            return Err(errors);
        }
    };
    let mut docs: Vec<Option<Value>> = vec![None; n_utterances];
    for (i, entry) in entries.iter().enumerate() {
        let path = format!("/annotations/{i}");
        let Value::Object(fields) = entry else {
            errors.push(ValidationError::at(&path, ErrorKind::NotAnObject, "a JSON object", entry.to_string()));
            continue;
        };
        let mut rest = fields.clone();
        let index = match rest.remove("index") {
            None => {
                errors.push(ValidationError::at(&format!("{path}/index"), ErrorKind::MissingRequired, "an utterance number", "nothing (field absent)"));
                None
            }
            Some(v) => match v.as_u64() {
                Some(k) if (k as usize) < n_utterances => Some(k as usize),
                Some(k) => {
                    errors.push(ValidationError::at(&format!("{path}/index"), ErrorKind::RangeViolation, format!("< {n_utterances}"), k.to_string()));
                    None
                }
                None => {
                    errors.push(ValidationError::at(&format!("{path}/index"), ErrorKind::TypeMismatch, "a non-negative integer", v.to_string()));
                    None
                }
            },
        };
        let doc = Value::Object(rest);
        let field_errors = schema::validate_value(&doc, schema, &path);
        let clean = field_errors.is_empty();
        errors.extend(field_errors);
        if let Some(k) = index {
            if docs[k].is_some() {
                errors.push(ValidationError::at(&format!("{path}/index"), ErrorKind::RangeViolation, "an index not used by another entry", k.to_string()));
            } else if clean {
                docs[k] = Some(doc);
            } else {
                docs[k] = Some(Value::Null);
            }
        }
    }
    for (k, d) in docs.iter().enumerate() {
        if d.is_none() {
            errors.push(ValidationError::at("/annotations", ErrorKind::MissingRequired, format!("an entry for utterance {k}"), "nothing (no entry)"));
        }
    }
    if errors.is_empty() {
        Ok(docs.into_iter().map(|d| d.expect("all present")).collect())
    } else {
        Err(errors)
    }
}

pub fn annotate_session(
    messages: Vec<ChatMessage>,
    schema: &CodingSchema,
    n_utterances: usize,
    provider: &dyn ChatProvider,
    settings: &CallSettings,
) -> ItemResult<Vec<Value>> {
    run_loop(messages, schema, provider, settings, Some(SESSION_DIRECTIVE), |text| {
        validate_session_reply(text, schema, n_utterances)
    })
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

/// Attempt transcript of one item, stored in `run_items`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunItem {
    pub id: String,
    pub run_id: RunId,
    pub session_id: SessionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_index: Option<usize>,
    pub attempts: Vec<AttemptRecord>,
    pub outcome: ItemOutcome,
}

impl RunItem {
    pub fn item_id(run: &RunId, session: &SessionId, index: Option<usize>) -> String {
        match index {
            Some(i) => format!("{run}:{session}:{i}"),
            None => format!("{run}:{session}"),
        }
    }
}

/// Upserts an annotation, reusing the id of any existing annotation with
/// the same (source, session, utterance) key.
pub fn put_annotation(store: &dyn DocumentStore, mut a: Annotation) -> Result<Annotation, StoreError> {
    if let Some(existing) = store.annotation_by_key(&a.unique_key()) {
        a.id = existing.into();
    }
    store.put_as(Collection::Annotations, a.id.as_str(), &a)?;
    Ok(a)
}

pub fn load_prompt_version(store: &dyn DocumentStore, r: &PromptVersionRef) -> Result<PromptVersion, OrchestratorError> {
    let prompt: Prompt = store
        .get_as(Collection::Prompts, r.prompt_id.as_str(), Access::Standard)?
        .ok_or_else(|| OrchestratorError::UnknownPromptVersion(r.clone()))?;
    prompt.version(r.version).cloned().ok_or_else(|| OrchestratorError::UnknownPromptVersion(r.clone()))
}

struct WorkItem<'a> {
    session: &'a Session,
    index: Option<usize>,
}

pub type ProgressFn<'a> = dyn Fn(&Run, &RunItem) + Sync + 'a;

/// Executes a queued run to a terminal state, persisting the run document
/// after every item so progress is observable.
pub fn execute_run(
    store: &dyn DocumentStore,
    mut run: Run,
    provider: &dyn ChatProvider,
    cancel: &CancelToken,
    progress: Option<&ProgressFn<'_>>,
) -> Result<Run, OrchestratorError> {
    if run.state != RunState::Queued {
        return Err(OrchestratorError::NotQueued(run.id.clone(), run.state.as_str()));
    }
    let pv = load_prompt_version(store, &run.prompt_version)?;
    if !pv.frozen {
        return Err(OrchestratorError::NotFrozen(run.prompt_version.clone()));
    }
    let mut sessions = Vec::with_capacity(run.session_ids.len());
    for id in &run.session_ids {
        let s: Session = store
            .get_as(Collection::Sessions, id.as_str(), Access::Standard)?
            .ok_or_else(|| OrchestratorError::UnknownSession(id.clone()))?;
        guard(&s, provider.is_mock())?;
        sessions.push(s);
    }

    let items: Vec<WorkItem> = match run.granularity {
        Granularity::Utterance => sessions
            .iter()
            .flat_map(|s| (0..s.utterances.len()).map(move |i| WorkItem { session: s, index: Some(i) }))
            .collect(),
        Granularity::Session => sessions.iter().map(|s| WorkItem { session: s, index: None }).collect(),
    };
    run.state = RunState::Running;
    run.counts.total_items = items.len() as u64;
    store.put_as(Collection::Runs, run.id.as_str(), &run)?;

    let settings = CallSettings::new(run.model_id.clone(), &run.params);
    let source = LabelSource::run(run.id.clone());
    let shared = Mutex::new(run);
    let next = AtomicUsize::new(0);
    let fatal: Mutex<Option<String>> = Mutex::new(None);
    let halt = AtomicBool::new(false);
    let workers = shared.lock().expect("run lock").params.concurrency.clamp(1, items.len().max(1));

    let work = || -> Result<(), OrchestratorError> {
        loop {
            if cancel.is_cancelled() || halt.load(Ordering::SeqCst) {
                return Ok(());
            }
            let i = next.fetch_add(1, Ordering::SeqCst);
            let Some(item) = items.get(i) else { return Ok(()) };
            let run_id = shared.lock().expect("run lock").id.clone();
            let s = item.session;
            let mut docs: Vec<(usize, Value)> = Vec::new();
            let (outcome, attempts, gateway_error) = match item.index {
                Some(idx) => {
                    let key = unique_annotation_key(&source, &s.id, idx);
                    if store.annotation_by_key(&key).is_some() {
                        (ItemOutcome::Skipped, Vec::new(), None)
                    } else {
                        let messages = build_messages(&pv, s, idx, shared.lock().expect("run lock").params.context_window, provider.is_mock())?;
                        let r = annotate_item(messages, &pv.schema, provider, &settings);
                        if let Some(v) = r.value {
                            docs.push((idx, v));
                        }
                        (r.outcome, r.attempts, r.gateway_error)
                    }
                }
                None => {
                    let messages = build_session_messages(&pv, s, provider.is_mock())?;
                    let r = annotate_session(messages, &pv.schema, s.utterances.len(), provider, &settings);
                    if let Some(v) = r.value {
                        docs.extend(v.into_iter().enumerate());
                    }
                    (r.outcome, r.attempts, r.gateway_error)
                }
            };
            let digest = attempts.last().and_then(|a| a.reply_digest.clone());
            for (idx, document) in docs {
                debug_assert!(schema::validate_value(&document, &pv.schema, "").is_empty());
                put_annotation(
                    store,
                    Annotation {
                        id: AnnotationId::generate(),
                        session_id: s.id.clone(),
                        utterance_index: idx,
                        source: source.clone(),
                        prompt_version: pv_ref(&shared),
                        document,
                        attempts: attempts.len() as u32,
                        raw_response_digest: digest.clone(),
                        created_at: Utc::now(),
                    },
                )?;
            }
            let record = RunItem {
                id: RunItem::item_id(&run_id, &s.id, item.index),
                run_id,
                session_id: s.id.clone(),
                utterance_index: item.index,
                attempts,
                outcome,
            };
            store.put_as(Collection::RunItems, &record.id, &record)?;
            if let Some(e) = gateway_error.filter(GatewayError::is_fatal) {
                *fatal.lock().expect("fatal lock") = Some(e.to_string());
                halt.store(true, Ordering::SeqCst);
            }
            let mut r = shared.lock().expect("run lock");
            match outcome {
                ItemOutcome::Succeeded | ItemOutcome::Skipped => r.counts.succeeded += 1,
                ItemOutcome::FailedSchema | ItemOutcome::FailedTransport => r.counts.failed_items += 1,
            }
            store.put_as(Collection::Runs, r.id.as_str(), &*r)?;
            if let Some(p) = progress {
                p(&r, &record);
            }
        }
    };

    let outcome: Result<(), OrchestratorError> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers).map(|_| scope.spawn(work)).collect();
        let mut first_err = Ok(());
        for h in handles {
            let r = h.join().expect("worker panicked");
            if r.is_err() && first_err.is_ok() {
                halt.store(true, Ordering::SeqCst);
                first_err = r;
            }
        }
        first_err
    });

    let mut run = shared.into_inner().expect("run lock");
    let fatal = fatal.into_inner().expect("fatal lock");
    run.finished_at = Some(Utc::now());
    run.state = if let Err(e) = &outcome {
        run.error = Some(e.to_string());
        RunState::Failed
    } else if let Some(message) = fatal {
        run.error = Some(message);
        RunState::Failed
    } else if run.counts.processed() < run.counts.total_items {
        RunState::Cancelled
    } else if run.counts.failed_items == 0 {
        RunState::Completed
    } else {
        RunState::CompletedWithErrors
    };
    store.put_as(Collection::Runs, run.id.as_str(), &run)?;
    Ok(run)
}

fn pv_ref(run: &Mutex<Run>) -> PromptVersionRef {
    run.lock().expect("run lock").prompt_version.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockProvider;
    use crate::model::{FieldSpec, Participant, Utterance};

    fn schema() -> CodingSchema {
        CodingSchema::new(
            "talk",
            vec![
                FieldSpec::enumeration("code", ["question", "explanation"], true),
                FieldSpec::number("confidence", Some(0.0), Some(1.0), false),
            ],
        )
        .unwrap()
    }

    fn pv() -> PromptVersion {
        let mut p = Prompt::new("p");
        p.add_version("Label the focal utterance.", schema());
        p.versions[0].clone()
    }

    fn session(n: usize) -> Session {
        Session::new(
            "s",
            vec![Participant::new("Tutor"), Participant::new("Student")],
            (0..n).map(|i| Utterance::new(if i % 2 == 0 { "Tutor" } else { "Student" }, format!("line {i}"))).collect(),
        )
        .unwrap()
    }

    const VALID: &str = r#"{"code": "question"}"#;

    fn settings(max_retries: u32) -> CallSettings {
        CallSettings::new("mock", &RunParams { max_retries, ..RunParams::default() })
    }

    #[test]
    fn context_window_zero_is_focal_only() {
        let m = build_messages(&pv(), &session(3), 1, 0, true).unwrap();
        assert_eq!(m[1].content, ">> Student: line 1");
    }

    #[test]
    fn context_window_clamps() {
        let m = build_messages(&pv(), &session(3), 2, 10, true).unwrap();
        assert_eq!(m[1].content, "Tutor: line 0\nStudent: line 1\n>> Tutor: line 2");
        assert_eq!(m, build_messages(&pv(), &session(3), 2, 10, true).unwrap());
    }

    #[test]
    fn system_message_has_instructions_schema_and_directive() {
        let m = build_messages(&pv(), &session(1), 0, 3, true).unwrap();
        assert!(m[0].content.starts_with("Label the focal utterance."));
        assert!(m[0].content.contains(&schema::render_schema(&schema())));
        assert!(m[0].content.ends_with(schema::REPLY_DIRECTIVE));
    }

    #[test]
    fn privacy_guard() {
        assert!(matches!(build_messages(&pv(), &session(1), 0, 0, false), Err(OrchestratorError::PrivacyGuard(_))));
        let mut s = session(1);
        s.deid_status = DeidStatus::Masked;
        assert!(build_messages(&pv(), &s, 0, 0, false).is_ok());
    }

    #[test]
    fn happy_path_single_attempt() {
        let mock = MockProvider::new([VALID]).unwrap();
        let r = annotate_item(build_messages(&pv(), &session(1), 0, 0, true).unwrap(), &schema(), &mock, &settings(3));
        assert_eq!(r.outcome, ItemOutcome::Succeeded);
        assert_eq!(r.attempts.len(), 1);
    }

    #[test]
    fn feedback_is_sent_after_failures() {
        let mock = MockProvider::new(["nope", r#"{"code": "banter"}"#, VALID]).unwrap();
        let r = annotate_item(build_messages(&pv(), &session(1), 0, 0, true).unwrap(), &schema(), &mock, &settings(3));
        assert_eq!(r.outcome, ItemOutcome::Succeeded);
        assert_eq!(r.attempts.len(), 3);
        let reqs = mock.requests();
        let fb1 = schema::render_feedback(&r.attempts[0].errors, &schema()).unwrap();
        let fb2 = schema::render_feedback(&r.attempts[1].errors, &schema()).unwrap();
        assert_eq!(reqs[1].messages.last().unwrap().content, fb1);
        assert_eq!(reqs[2].messages.last().unwrap().content, fb2);
        assert_eq!(reqs[2].messages.len(), 6);
    }

    #[test]
    fn budget_exhaustion() {
        let mock = MockProvider::new(["x"]).unwrap();
        let r = annotate_item(build_messages(&pv(), &session(1), 0, 0, true).unwrap(), &schema(), &mock, &settings(3));
        assert_eq!(r.outcome, ItemOutcome::FailedSchema);
        assert_eq!(r.attempts.len(), 4);
        assert_eq!(mock.call_count(), 4);
        assert!(r.value.is_none());
    }

    #[test]
    fn session_reply_validation() {
        let s = schema();
        let ok = r#"{"annotations": [{"index": 1, "code": "question"}, {"index": 0, "code": "explanation"}]}"#;
        let docs = validate_session_reply(ok, &s, 2).unwrap();
        assert_eq!(docs[0]["code"], "explanation");
        let errs = validate_session_reply(r#"{"annotations": [{"index": 0, "code": "x"}, {"index": 0, "code": "question"}]}"#, &s, 2).unwrap_err();
        let kinds: Vec<_> = errs.iter().map(|e| (e.path.clone().unwrap(), e.kind)).collect();
        assert!(kinds.contains(&("/annotations/0/code".into(), ErrorKind::EnumViolation)));
        assert!(kinds.contains(&("/annotations/1/index".into(), ErrorKind::RangeViolation)));
        assert!(kinds.contains(&("/annotations".into(), ErrorKind::MissingRequired)));
        assert!(validate_session_reply("[]", &s, 1).is_err());
        assert!(validate_session_reply("{", &s, 1).is_err());
    }
}
