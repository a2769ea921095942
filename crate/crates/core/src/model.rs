//! Shared domain types and their invariants.
//!
//! Every type here is an immutable value once constructed; mutation of
//! persisted state goes through [`crate::store`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            /// Mints a fresh identifier that sorts after every id minted
            /// earlier by this process.
            pub fn generate() -> Self {
                Self(format!("{}{}", $prefix, next_ulid()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

static ULID_GEN: Mutex<Option<ulid::Generator>> = Mutex::new(None);

fn next_ulid() -> String {
    let mut guard = ULID_GEN.lock().unwrap_or_else(|e| e.into_inner());
    let generator = guard.get_or_insert_with(ulid::Generator::new);
    // Overflow only happens after 2^80 ids in one millisecond.
    let id = generator.generate().unwrap_or_else(|_| ulid::Ulid::new());
    id.to_string().to_ascii_lowercase()
}

id_type!(
    /// Identifier of a [`Session`].
    SessionId,
    "ses_"
);
id_type!(PromptId, "prm_");
id_type!(RunId, "run_");
id_type!(AnnotationId, "ann_");
id_type!(RunSetId, "rs_");

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    Plaintext,
    Csv,
    SessionJson,
}

impl SourceFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceFormat::Plaintext => "plaintext",
            SourceFormat::Csv => "csv",
            SourceFormat::SessionJson => "session-json",
        }
    }

    /// Guesses the format from a file extension (`.txt`, `.csv`, `.json`).
    pub fn from_extension(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "txt" | "text" => Some(SourceFormat::Plaintext),
            "csv" => Some(SourceFormat::Csv),
            "json" => Some(SourceFormat::SessionJson),
            _ => None,
        }
    }
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plaintext" | "text" | "txt" => Ok(SourceFormat::Plaintext),
            "csv" => Ok(SourceFormat::Csv),
            "session-json" | "json" => Ok(SourceFormat::SessionJson),
            other => Err(format!("unknown transcript format `{other}`")),
        }
    }
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// De-identification progress. Only moves forward: raw → masked → verified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeidStatus {
    Raw,
    Masked,
    Verified,
}

impl DeidStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DeidStatus::Raw => "raw",
            DeidStatus::Masked => "masked",
            DeidStatus::Verified => "verified",
        }
    }

    /// Whether `self → next` is a permitted transition. Staying put is
    /// permitted so that repeated approvals are idempotent.
    pub fn can_become(self, next: DeidStatus) -> bool {
        matches!(
            (self, next),
            (DeidStatus::Raw, DeidStatus::Masked) | (DeidStatus::Masked, DeidStatus::Verified)
        ) || self == next
    }

    pub fn is_deidentified(self) -> bool {
        self != DeidStatus::Raw
    }
}

impl FromStr for DeidStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(DeidStatus::Raw),
            "masked" => Ok(DeidStatus::Masked),
            "verified" => Ok(DeidStatus::Verified),
            other => Err(format!("unknown deid_status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Participant {
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
}

impl Participant {
    pub fn new(speaker_id: impl Into<String>) -> Self {
        Self { speaker_id: speaker_id.into(), role: None }
    }

    pub fn with_role(speaker_id: impl Into<String>, role: impl Into<String>) -> Self {
        Self { speaker_id: speaker_id.into(), role: Some(role.into()) }
    }
}

/// One speaker turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker_id: String,
    /// Seconds from session start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { index: 0, speaker_id: speaker_id.into(), timestamp: None, text: text.into() }
    }

    pub fn at(mut self, timestamp: f64) -> Self {
        self.timestamp = Some(timestamp);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub title: String,
    pub source_format: SourceFormat,
    pub participants: Vec<Participant>,
    pub utterances: Vec<Utterance>,
    pub deid_status: DeidStatus,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("empty session")]
    Empty,
    #[error("speaker `{speaker}` at utterance {index} is not a participant")]
    UnknownSpeaker { speaker: String, index: usize },
    #[error("invalid session: {0}")]
    Invalid(String),
    #[error("deid_status cannot move from {from} to {to}")]
    IllegalTransition { from: &'static str, to: &'static str },
}

/// Which session invariant a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantKind {
    EmptySession,
    IndexSequence,
    UnknownSpeaker,
    DuplicateParticipant,
    NegativeTimestamp,
    NonMonotoneTimestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: InvariantKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl Session {
    /// Builds a raw session, renumbering utterances 0..n−1 in input order.
    pub fn new(
        title: impl Into<String>,
        participants: Vec<Participant>,
        mut utterances: Vec<Utterance>,
    ) -> Result<Self, SessionError> {
        if utterances.is_empty() {
            return Err(SessionError::Empty);
        }
        for (i, u) in utterances.iter_mut().enumerate() {
            u.index = i;
        }
        let session = Session {
            id: SessionId::generate(),
            title: title.into(),
            source_format: SourceFormat::SessionJson,
            participants,
            utterances,
            deid_status: DeidStatus::Raw,
            metadata: BTreeMap::new(),
        };
        let violations = session.validate();
        if let Some(v) = violations.first() {
            return Err(match v.invariant {
                InvariantKind::UnknownSpeaker => {
                    let index = v.index.unwrap_or_default();
                    SessionError::UnknownSpeaker {
                        speaker: session.utterances[index].speaker_id.clone(),
                        index,
                    }
                }
                _ => SessionError::Invalid(v.message.clone()),
            });
        }
        Ok(session)
    }

    pub fn with_source_format(mut self, format: SourceFormat) -> Self {
        self.source_format = format;
        self
    }

    /// Lists every broken session invariant; empty iff the session is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.utterances.is_empty() {
            out.push(Violation {
                invariant: InvariantKind::EmptySession,
                index: None,
                message: "empty session".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for p in &self.participants {
            if !seen.insert(p.speaker_id.as_str()) {
                out.push(Violation {
                    invariant: InvariantKind::DuplicateParticipant,
                    index: None,
                    message: format!("duplicate participant `{}`", p.speaker_id),
                });
            }
        }
        let mut last_ts: Option<f64> = None;
        for (pos, u) in self.utterances.iter().enumerate() {
            if u.index != pos {
                out.push(Violation {
                    invariant: InvariantKind::IndexSequence,
                    index: Some(pos),
                    message: format!("utterance at position {pos} has index {}", u.index),
                });
            }
            if !seen.contains(u.speaker_id.as_str()) {
                out.push(Violation {
                    invariant: InvariantKind::UnknownSpeaker,
                    index: Some(pos),
                    message: format!(
                        "unknown speaker `{}` at index {pos}",
                        u.speaker_id
                    ),
                });
            }
            if let Some(ts) = u.timestamp {
                if !(ts.is_finite() && ts >= 0.0) {
                    out.push(Violation {
                        invariant: InvariantKind::NegativeTimestamp,
                        index: Some(pos),
                        message: format!("invalid timestamp {ts} at index {pos}"),
                    });
                    continue;
                }
                if let Some(prev) = last_ts {
                    if ts < prev {
                        out.push(Violation {
                            invariant: InvariantKind::NonMonotoneTimestamp,
                            index: Some(pos),
                            message: format!("non-monotone timestamp at index {pos}"),
                        });
                    }
                }
                last_ts = Some(ts);
            }
        }
        out
    }

    /// Moves the de-identification status forward.
    pub fn advance_deid(&mut self, next: DeidStatus) -> Result<(), SessionError> {
        if !self.deid_status.can_become(next) {
            return Err(SessionError::IllegalTransition {
                from: self.deid_status.as_str(),
                to: next.as_str(),
            });
        }
        self.deid_status = next;
        Ok(())
    }

    pub fn utterance(&self, index: usize) -> Option<&Utterance> {
        self.utterances.get(index)
    }

    pub fn participant(&self, speaker_id: &str) -> Option<&Participant> {
        self.participants.iter().find(|p| p.speaker_id == speaker_id)
    }
}

// ---------------------------------------------------------------------------
// Coding schemas
// ---------------------------------------------------------------------------

/// The value domain of one schema field.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldType {
    String,
    Boolean,
    Enum { values: Vec<String> },
    Number { min: Option<f64>, max: Option<f64> },
    Array { element: Box<FieldSpec> },
}

impl FieldType {
    pub fn type_name(&self) -> &'static str {
        match self {
            FieldType::String => "string",
            FieldType::Boolean => "boolean",
            FieldType::Enum { .. } => "enum",
            FieldType::Number { .. } => "number",
            FieldType::Array { .. } => "array",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFieldSpec", into = "RawFieldSpec")]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldType,
    pub required: bool,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, kind: FieldType, required: bool) -> Self {
        Self { name: name.into(), kind, required }
    }

    pub fn string(name: impl Into<String>, required: bool) -> Self {
        Self::new(name, FieldType::String, required)
    }

    pub fn boolean(name: impl Into<String>, required: bool) -> Self {
        Self::new(name, FieldType::Boolean, required)
    }

    pub fn enumeration<S: Into<String>>(
        name: impl Into<String>,
        values: impl IntoIterator<Item = S>,
        required: bool,
    ) -> Self {
        Self::new(
            name,
            FieldType::Enum { values: values.into_iter().map(Into::into).collect() },
            required,
        )
    }

    pub fn number(name: impl Into<String>, min: Option<f64>, max: Option<f64>, required: bool) -> Self {
        Self::new(name, FieldType::Number { min, max }, required)
    }

    pub fn array(name: impl Into<String>, element: FieldSpec, required: bool) -> Self {
        Self::new(name, FieldType::Array { element: Box::new(element) }, required)
    }

    fn check(&self, path: &str, out: &mut Vec<String>) {
        match &self.kind {
            FieldType::Enum { values } => {
                if values.is_empty() {
                    out.push(format!("{path}: enum value list is empty"));
                }
                let mut seen = BTreeSet::new();
                for v in values {
                    if !seen.insert(v) {
                        out.push(format!("{path}: duplicate enum value `{v}`"));
                    }
                }
            }
            FieldType::Number { min, max } => {
                for bound in [min, max].into_iter().flatten() {
                    if !bound.is_finite() {
                        out.push(format!("{path}: number bound must be finite"));
                    }
                }
                if let (Some(lo), Some(hi)) = (min, max) {
                    if lo > hi {
                        out.push(format!("{path}: min {lo} is greater than max {hi}"));
                    }
                }
            }
            FieldType::Array { element } => element.check(&format!("{path}/[]"), out),
            FieldType::String | FieldType::Boolean => {}
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawFieldSpec {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    #[serde(rename = "type")]
    ty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    element: Option<Box<RawFieldSpec>>,
    #[serde(default)]
    required: bool,
}

impl TryFrom<RawFieldSpec> for FieldSpec {
    type Error = String;

    fn try_from(raw: RawFieldSpec) -> Result<Self, Self::Error> {
        let name = raw.name;
        let stray = |what: &str| format!("field `{name}`: `{what}` is not allowed for type `{}`", raw.ty);
        let kind = match raw.ty.as_str() {
            "string" | "boolean" => {
                if raw.values.is_some() {
                    return Err(stray("values"));
                }
                if raw.min.is_some() || raw.max.is_some() {
                    return Err(stray("min/max"));
                }
                if raw.element.is_some() {
                    return Err(stray("element"));
                }
                if raw.ty == "string" {
                    FieldType::String
                } else {
                    FieldType::Boolean
                }
            }
            "enum" => FieldType::Enum {
                values: raw
                    .values
                    .ok_or_else(|| format!("field `{name}`: enum requires `values`"))?,
            },
            "number" => FieldType::Number { min: raw.min, max: raw.max },
            "array" => {
                let element = raw
                    .element
                    .ok_or_else(|| format!("field `{name}`: array requires `element`"))?;
                FieldType::Array { element: Box::new(FieldSpec::try_from(*element)?) }
            }
            other => return Err(format!("field `{name}`: unknown type `{other}`")),
        };
        Ok(FieldSpec { name, kind, required: raw.required })
    }
}

impl From<FieldSpec> for RawFieldSpec {
    fn from(spec: FieldSpec) -> Self {
        let mut raw = RawFieldSpec {
            name: spec.name,
            ty: spec.kind.type_name().to_owned(),
            values: None,
            min: None,
            max: None,
            element: None,
            required: spec.required,
        };
        match spec.kind {
            FieldType::Enum { values } => raw.values = Some(values),
            FieldType::Number { min, max } => {
                raw.min = min;
                raw.max = max;
            }
            FieldType::Array { element } => raw.element = Some(Box::new((*element).into())),
            FieldType::String | FieldType::Boolean => {}
        }
        raw
    }
}

/// A researcher-defined qualitative codebook in machine-checkable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct CodingSchema {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    name: String,
    fields: Vec<FieldSpec>,
}

impl TryFrom<RawSchema> for CodingSchema {
    type Error = String;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        CodingSchema::new(raw.name, raw.fields).map_err(|e| e.to_string())
    }
}

impl From<CodingSchema> for RawSchema {
    fn from(s: CodingSchema) -> Self {
        RawSchema { name: s.name, fields: s.fields }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid coding schema: {}", problems.join("; "))]
pub struct SchemaDefinitionError {
    pub problems: Vec<String>,
}

impl CodingSchema {
    pub fn new(name: impl Into<String>, fields: Vec<FieldSpec>) -> Result<Self, SchemaDefinitionError> {
        let schema = CodingSchema { name: name.into(), fields };
        let problems = schema.problems();
        if problems.is_empty() {
            Ok(schema)
        } else {
            Err(SchemaDefinitionError { problems })
        }
    }

    /// Invariant violations in this schema definition.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for f in &self.fields {
            if f.name.is_empty() {
                out.push("field name must be non-empty".to_owned());
            } else if !seen.insert(f.name.as_str()) {
                out.push(format!("duplicate field name `{}`", f.name));
            }
            f.check(&format!("/{}", f.name), &mut out);
        }
        out
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVersion {
    pub version: u32,
    pub instructions: String,
    pub schema: CodingSchema,
    pub created_at: DateTime<Utc>,
    pub frozen: bool,
}

impl PromptVersion {
    /// Hash over the version number, instructions and schema.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::json!({
            "version": self.version,
            "instructions": self.instructions,
            "schema": self.schema,
        });
        sha256_hex(canonical.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: PromptId,
    pub name: String,
    pub versions: Vec<PromptVersion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt {prompt} has no version {version}")]
    UnknownVersion { prompt: PromptId, version: u32 },
    #[error("prompt {prompt} version {version} is frozen; create a new version instead")]
    Frozen { prompt: PromptId, version: u32 },
}

impl Prompt {
    pub fn new(name: impl Into<String>) -> Self {
        Self { id: PromptId::generate(), name: name.into(), versions: Vec::new() }
    }

    /// Appends a draft version numbered one past the latest.
    pub fn add_version(&mut self, instructions: impl Into<String>, schema: CodingSchema) -> &PromptVersion {
        let version = self.versions.last().map_or(1, |v| v.version + 1);
        self.versions.push(PromptVersion {
            version,
            instructions: instructions.into(),
            schema,
            created_at: Utc::now(),
            frozen: false,
        });
        self.versions.last().expect("just pushed")
    }

    pub fn version(&self, version: u32) -> Option<&PromptVersion> {
        self.versions.iter().find(|v| v.version == version)
    }

    pub fn latest(&self) -> Option<&PromptVersion> {
        self.versions.last()
    }

    /// Edits a draft in place. Frozen versions are immutable.
    pub fn revise(
        &mut self,
        version: u32,
        instructions: impl Into<String>,
        schema: CodingSchema,
    ) -> Result<(), PromptError> {
        let id = self.id.clone();
        let v = self
            .versions
            .iter_mut()
            .find(|v| v.version == version)
            .ok_or(PromptError::UnknownVersion { prompt: id.clone(), version })?;
        if v.frozen {
            return Err(PromptError::Frozen { prompt: id, version });
        }
        v.instructions = instructions.into();
        v.schema = schema;
        Ok(())
    }

    pub fn freeze(&mut self, version: u32) -> Result<&PromptVersion, PromptError> {
        let id = self.id.clone();
        let v = self
            .versions
            .iter_mut()
            .find(|v| v.version == version)
            .ok_or(PromptError::UnknownVersion { prompt: id, version })?;
        v.frozen = true;
        Ok(v)
    }

    pub fn version_ref(&self, version: u32) -> PromptVersionRef {
        PromptVersionRef { prompt_id: self.id.clone(), version }
    }
}

/// `<prompt-id>@<version>`. Serialized as an object; also deserializes
/// from the string form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawVersionRef")]
pub struct PromptVersionRef {
    pub prompt_id: PromptId,
    pub version: u32,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawVersionRef {
    Text(String),
    Fields { prompt_id: PromptId, version: u32 },
}

impl TryFrom<RawVersionRef> for PromptVersionRef {
    type Error = String;

    fn try_from(raw: RawVersionRef) -> Result<Self, Self::Error> {
        match raw {
            RawVersionRef::Text(t) => t.parse(),
            RawVersionRef::Fields { prompt_id, version } => Ok(PromptVersionRef { prompt_id, version }),
        }
    }
}

impl fmt::Display for PromptVersionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.prompt_id, self.version)
    }
}

impl FromStr for PromptVersionRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (id, version) = s
            .rsplit_once('@')
            .ok_or_else(|| format!("`{s}` is not of the form <prompt-id>@<version>"))?;
        let version: u32 = version
            .trim_start_matches('v')
            .parse()
            .map_err(|_| format!("`{version}` is not a positive version number"))?;
        if id.is_empty() || version == 0 {
            return Err(format!("`{s}` is not of the form <prompt-id>@<version>"));
        }
        Ok(PromptVersionRef { prompt_id: id.into(), version })
    }
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Utterance,
    Session,
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "utterance" => Ok(Granularity::Utterance),
            "session" => Ok(Granularity::Session),
            other => Err(format!("unknown granularity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunParams {
    pub temperature: f64,
    pub max_retries: u32,
    /// Number of preceding utterances shown with the focal one.
    pub context_window: usize,
    pub concurrency: usize,
    pub max_tokens: u32,
}

impl Default for RunParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_retries: 3, context_window: 10, concurrency: 4, max_tokens: 1024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Queued,
    Running,
    Completed,
    CompletedWithErrors,
    Failed,
    Cancelled,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, RunState::Queued | RunState::Running)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunState::Queued => "queued",
            RunState::Running => "running",
            RunState::Completed => "completed",
            RunState::CompletedWithErrors => "completed_with_errors",
            RunState::Failed => "failed",
            RunState::Cancelled => "cancelled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunCounts {
    pub total_items: u64,
    pub succeeded: u64,
    pub failed_items: u64,
}

impl RunCounts {
    pub fn processed(&self) -> u64 {
        self.succeeded + self.failed_items
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub id: RunId,
    pub prompt_version: PromptVersionRef,
    pub model_id: String,
    pub session_ids: Vec<SessionId>,
    pub granularity: Granularity,
    pub params: RunParams,
    pub state: RunState,
    pub counts: RunCounts,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunDefinitionError {
    #[error("a run needs at least one session")]
    NoSessions,
    #[error("temperature must be a finite non-negative number")]
    BadTemperature,
    #[error("concurrency must be at least 1")]
    BadConcurrency,
    #[error("model id must be non-empty")]
    NoModel,
}

impl Run {
    pub fn new(
        prompt_version: PromptVersionRef,
        model_id: impl Into<String>,
        session_ids: Vec<SessionId>,
        granularity: Granularity,
        params: RunParams,
    ) -> Result<Self, RunDefinitionError> {
        let model_id = model_id.into();
        if model_id.is_empty() {
            return Err(RunDefinitionError::NoModel);
        }
        if session_ids.is_empty() {
            return Err(RunDefinitionError::NoSessions);
        }
        if !(params.temperature.is_finite() && params.temperature >= 0.0) {
            return Err(RunDefinitionError::BadTemperature);
        }
        if params.concurrency == 0 {
            return Err(RunDefinitionError::BadConcurrency);
        }
        Ok(Run {
            id: RunId::generate(),
            prompt_version,
            model_id,
            session_ids,
            granularity,
            params,
            state: RunState::Queued,
            counts: RunCounts::default(),
            created_at: Utc::now(),
            finished_at: None,
            error: None,
        })
    }

    /// Checks the counter/state invariants.
    pub fn counts_consistent(&self) -> bool {
        let c = self.counts;
        let done = c.processed() == c.total_items;
        c.processed() <= c.total_items
            && match self.state {
                RunState::Completed => done && c.failed_items == 0,
                RunState::CompletedWithErrors => done && c.failed_items > 0,
                _ => true,
            }
    }
}

// ---------------------------------------------------------------------------
// Annotations and run-sets
// ---------------------------------------------------------------------------

/// Who produced a label: a run, or a named human coder.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelSource {
    Run { run_id: RunId },
    Human { coder_id: String },
}

impl LabelSource {
    pub fn run(id: impl Into<RunId>) -> Self {
        LabelSource::Run { run_id: id.into() }
    }

    pub fn human(coder: impl Into<String>) -> Self {
        LabelSource::Human { coder_id: coder.into() }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSource::Run { run_id } => write!(f, "run:{run_id}"),
            LabelSource::Human { coder_id } => write!(f, "human:{coder_id}"),
        }
    }
}

impl FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("run", id)) if !id.is_empty() => Ok(LabelSource::run(id)),
            Some(("human", coder)) if !coder.is_empty() => Ok(LabelSource::human(coder)),
            _ => Err(format!("`{s}` is not `run:<id>` or `human:<coder>`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: AnnotationId,
    pub session_id: SessionId,
    pub utterance_index: usize,
    pub source: LabelSource,
    /// Prompt version whose schema the document conforms to.
    pub prompt_version: PromptVersionRef,
    pub document: Value,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response_digest: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl Annotation {
    /// Key of the one-document-per-(source, session, utterance) index.
    pub fn unique_key(&self) -> String {
        unique_annotation_key(&self.source, &self.session_id, self.utterance_index)
    }
}

pub fn unique_annotation_key(source: &LabelSource, session: &SessionId, index: usize) -> String {
    format!("{source}|{session}|{index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub id: RunSetId,
    pub name: String,
    pub members: Vec<LabelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<LabelSource>,
    pub target_field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunSetError {
    #[error("a run-set needs at least two distinct members")]
    TooFewMembers,
    #[error("member {0} is listed twice")]
    DuplicateMember(String),
    #[error("reference {0} is not a member")]
    ReferenceNotMember(String),
    #[error("target field must be non-empty")]
    NoTargetField,
}

impl RunSet {
    pub fn new(
        name: impl Into<String>,
        members: Vec<LabelSource>,
        reference: Option<LabelSource>,
        target_field: impl Into<String>,
    ) -> Result<Self, RunSetError> {
        let target_field = target_field.into();
        if target_field.is_empty() {
            return Err(RunSetError::NoTargetField);
        }
        let mut seen = BTreeSet::new();
        for m in &members {
            if !seen.insert(m) {
                return Err(RunSetError::DuplicateMember(m.to_string()));
            }
        }
        if members.len() < 2 {
            return Err(RunSetError::TooFewMembers);
        }
        if let Some(r) = &reference {
            if !members.contains(r) {
                return Err(RunSetError::ReferenceNotMember(r.to_string()));
            }
        }
        Ok(RunSet { id: RunSetId::generate(), name: name.into(), members, reference, target_field })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub kappa: f64,
    pub n_items: usize,
}

// ---------------------------------------------------------------------------
// De-identification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiCategory {
    Person,
    Email,
    Phone,
    IdNumber,
    Url,
    Institution,
    Date,
}

impl PiiCategory {
    pub const ALL: [PiiCategory; 7] = [
        PiiCategory::Person,
        PiiCategory::Email,
        PiiCategory::Phone,
        PiiCategory::IdNumber,
        PiiCategory::Url,
        PiiCategory::Institution,
        PiiCategory::Date,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PiiCategory::Person => "person",
            PiiCategory::Email => "email",
            PiiCategory::Phone => "phone",
            PiiCategory::IdNumber => "id_number",
            PiiCategory::Url => "url",
            PiiCategory::Institution => "institution",
            PiiCategory::Date => "date",
        }
    }

    /// Categories found by pattern rules rather than names or dictionaries.
    pub fn is_pattern(self) -> bool {
        matches!(
            self,
            PiiCategory::Email | PiiCategory::Phone | PiiCategory::Url | PiiCategory::IdNumber | PiiCategory::Date
        )
    }
}

impl fmt::Display for PiiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Character span (in `char`s, end exclusive) inside one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Occurrence {
    pub utterance_index: usize,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub category: PiiCategory,
    /// Surface forms that normalize to the same key.
    pub originals: Vec<String>,
    pub surrogate: String,
    /// Positions of the surrogate in the masked text.
    pub occurrences: Vec<Occurrence>,
    /// Whether the original also appeared as a speaker id.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub speaker: bool,
}

/// The re-identification key for one masked session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskMap {
    pub session_id: SessionId,
    pub entries: Vec<MaskEntry>,
}
