//! Validation of model output against a [`CodingSchema`].
//!
//! Validation is closed-world: fields the schema does not declare are errors.
//! Every violation is reported, so the same list serves as the rejection
//! reason and as the body of the feedback message sent back to the model.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{CodingSchema, FieldSpec, FieldType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    MissingRequired,
    UnknownField,
    TypeMismatch,
    EnumViolation,
    RangeViolation,
    NotAnObject,
    ParseFailure,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::MissingRequired => "missing_required",
            ErrorKind::UnknownField => "unknown_field",
            ErrorKind::TypeMismatch => "type_mismatch",
            ErrorKind::EnumViolation => "enum_violation",
            ErrorKind::RangeViolation => "range_violation",
            ErrorKind::NotAnObject => "not_an_object",
            ErrorKind::ParseFailure => "parse_failure",
        }
    }

    fn describe(self) -> &'static str {
        match self {
            ErrorKind::MissingRequired => "required field is missing",
            ErrorKind::UnknownField => "field is not part of the schema",
            ErrorKind::TypeMismatch => "value has the wrong type",
            ErrorKind::EnumViolation => "value is not one of the allowed codes",
            ErrorKind::RangeViolation => "number is out of range",
            ErrorKind::NotAnObject => "reply is not a JSON object",
            ErrorKind::ParseFailure => "reply is not valid JSON",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    /// Slash-separated path such as `/confidence`; absent for
    /// `parse_failure` and `not_an_object`.
    pub path: Option<String>,
    pub kind: ErrorKind,
    pub message: String,
    pub expected: String,
    pub found: String,
}

impl ValidationError {
    pub fn new(path: Option<String>, kind: ErrorKind, expected: impl Into<String>, found: impl Into<String>) -> Self {
        let expected = expected.into();
        let found = found.into();
        let message = format!("{}: expected {expected}, found {found}", kind.describe());
        Self { path, kind, message, expected, found }
    }

    pub fn at(path: &str, kind: ErrorKind, expected: impl Into<String>, found: impl Into<String>) -> Self {
        Self::new(Some(path.to_owned()), kind, expected, found)
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.path {
            Some(p) => write!(f, "{p}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

const FOUND_LIMIT: usize = 120;

fn clip(s: &str) -> String {
    if s.chars().count() <= FOUND_LIMIT {
        s.to_owned()
    } else {
        let head: String = s.chars().take(FOUND_LIMIT).collect();
        format!("{head}…")
    }
}

fn render_found(v: &Value) -> String {
    match v {
        Value::String(s) => clip(s),
        other => clip(&other.to_string()),
    }
}

fn json_type(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn typed_found(v: &Value) -> String {
    match v {
        Value::Null => "null".to_owned(),
        Value::String(s) => format!("string {}", clip(&Value::String(s.clone()).to_string())),
        other => format!("{} {}", json_type(other), clip(&other.to_string())),
    }
}

fn fmt_bound(x: f64) -> String {
    format!("{x}")
}

fn escape_segment(name: &str) -> String {
    name.replace('~', "~0").replace('/', "~1")
}

/// Short description of the values a field accepts.
pub fn describe_type(kind: &FieldType) -> String {
    match kind {
        FieldType::String => "a string".to_owned(),
        FieldType::Boolean => "a boolean (true or false)".to_owned(),
        FieldType::Enum { values } => format!("one of {}", values.join("|")),
        FieldType::Number { min, max } => {
            let mut s = "a number".to_owned();
            match (min, max) {
                (Some(lo), Some(hi)) => s.push_str(&format!(" between {} and {}", fmt_bound(*lo), fmt_bound(*hi))),
                (Some(lo), None) => s.push_str(&format!(" ≥ {}", fmt_bound(*lo))),
                (None, Some(hi)) => s.push_str(&format!(" ≤ {}", fmt_bound(*hi))),
                (None, None) => {}
            }
            s
        }
        FieldType::Array { element } => format!("an array of {}", describe_type(&element.kind)),
    }
}

fn check_value(spec: &FieldSpec, value: &Value, path: &str, out: &mut Vec<ValidationError>) {
    match &spec.kind {
        FieldType::String => {
            if !value.is_string() {
                out.push(ValidationError::at(path, ErrorKind::TypeMismatch, "a string", typed_found(value)));
            }
        }
        FieldType::Boolean => {
            if !value.is_boolean() {
                out.push(ValidationError::at(
                    path,
                    ErrorKind::TypeMismatch,
                    "a boolean (true or false)",
                    typed_found(value),
                ));
            }
        }
        FieldType::Enum { values } => match value {
            Value::String(s) if values.iter().any(|v| v == s) => {}
            Value::String(_) => out.push(ValidationError::at(
                path,
                ErrorKind::EnumViolation,
                describe_type(&spec.kind),
                render_found(value),
            )),
            other => out.push(ValidationError::at(
                path,
                ErrorKind::TypeMismatch,
                format!("a string, {}", describe_type(&spec.kind)),
                typed_found(other),
            )),
        },
        FieldType::Number { min, max } => match value.as_f64() {
            Some(x) if value.is_number() => {
                if let Some(lo) = min {
                    if x < *lo {
                        out.push(ValidationError::at(
                            path,
                            ErrorKind::RangeViolation,
                            format!("≥ {}", fmt_bound(*lo)),
                            render_found(value),
                        ));
                    }
                }
                if let Some(hi) = max {
                    if x > *hi {
                        out.push(ValidationError::at(
                            path,
                            ErrorKind::RangeViolation,
                            format!("≤ {}", fmt_bound(*hi)),
                            render_found(value),
                        ));
                    }
                }
            }
            _ => out.push(ValidationError::at(
                path,
                ErrorKind::TypeMismatch,
                describe_type(&spec.kind),
                typed_found(value),
            )),
        },
        FieldType::Array { element } => match value {
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    check_value(element, item, &format!("{path}/{i}"), out);
                }
            }
            other => out.push(ValidationError::at(
                path,
                ErrorKind::TypeMismatch,
                describe_type(&spec.kind),
                typed_found(other),
            )),
        },
    }
}

fn sort_errors(errors: &mut [ValidationError]) {
    errors.sort_by(|a, b| (&a.path, a.kind, &a.found).cmp(&(&b.path, b.kind, &b.found)));
}

/// Validates an already-parsed value; `prefix` is prepended to every path.
pub fn validate_value(value: &Value, schema: &CodingSchema, prefix: &str) -> Vec<ValidationError> {
    let Value::Object(map) = value else {
        let path = (!prefix.is_empty()).then(|| prefix.to_owned());
        return vec![ValidationError::new(path, ErrorKind::NotAnObject, "a JSON object", typed_found(value))];
    };
    let mut out = Vec::new();
    for spec in &schema.fields {
        let path = format!("{prefix}/{}", escape_segment(&spec.name));
        match map.get(&spec.name) {
            Some(v) => check_value(spec, v, &path, &mut out),
            None if spec.required => out.push(ValidationError::at(
                &path,
                ErrorKind::MissingRequired,
                describe_type(&spec.kind),
                "nothing (field absent)",
            )),
            None => {}
        }
    }
    for (key, v) in map {
        if schema.field(key).is_none() {
            let allowed: Vec<&str> = schema.fields.iter().map(|f| f.name.as_str()).collect();
            out.push(ValidationError::at(
                &format!("{prefix}/{}", escape_segment(key)),
                ErrorKind::UnknownField,
                format!("only the fields {}", allowed.join(", ")),
                render_found(v),
            ));
        }
    }
    sort_errors(&mut out);
    out
}

/// Checks `document_text` against `schema`. Empty iff the text parses as a
/// JSON object satisfying every field spec.
pub fn validate(document_text: &str, schema: &CodingSchema) -> Vec<ValidationError> {
    match serde_json::from_str::<Value>(document_text) {
        Ok(value) => validate_value(&value, schema, ""),
        Err(e) => vec![ValidationError::new(
            None,
            ErrorKind::ParseFailure,
            "a single JSON object",
            format!("invalid JSON ({e}) in {}", clip(&Value::String(document_text.to_owned()).to_string())),
        )],
    }
}

/// Pulls the first balanced top-level `{...}` block out of a model reply,
/// which often wraps the document in prose or code fences. Returns the
/// reply unchanged when there is no such block.
pub fn extract_candidate(raw_reply: &str) -> &str {
    let Some(start) = raw_reply.find('{') else {
        return raw_reply;
    };
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (off, ch) in raw_reply[start..].char_indices() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return &raw_reply[start..start + off + 1];
                }
            }
            _ => {}
        }
    }
    raw_reply
}

/// Deterministic plain-text rendering of a schema for prompts and feedback.
pub fn render_schema(schema: &CodingSchema) -> String {
    let mut s = format!("Coding schema \"{}\" (a JSON object with exactly these fields):\n", schema.name);
    for f in &schema.fields {
        let req = if f.required { "required" } else { "optional" };
        s.push_str(&format!("- \"{}\" ({req}): {}\n", f.name, describe_type(&f.kind)));
    }
    s.push_str("No other fields are allowed.");
    s
}

pub const REPLY_DIRECTIVE: &str =
    "Reply with only one JSON document that conforms to the schema, with no other text.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot render feedback for an empty error list")]
pub struct EmptyErrorList;

/// Builds the re-prompt message for a reply that failed validation.
pub fn render_feedback(errors: &[ValidationError], schema: &CodingSchema) -> Result<String, EmptyErrorList> {
    if errors.is_empty() {
        return Err(EmptyErrorList);
    }
    let mut sorted = errors.to_vec();
    sort_errors(&mut sorted);
    let mut s = format!(
        "Your previous reply did not conform to the required schema. {} problem{} found:\n",
        sorted.len(),
        if sorted.len() == 1 { "" } else { "s" }
    );
    for (i, e) in sorted.iter().enumerate() {
        let path = e.path.as_deref().unwrap_or("(whole reply)");
        s.push_str(&format!(
            "{}. {path} [{}]: expected {}; found {}\n",
            i + 1,
            e.kind,
            e.expected,
            e.found
        ));
    }
    s.push('\n');
    s.push_str(&render_schema(schema));
    s.push_str("\n\n");
    s.push_str(REPLY_DIRECTIVE);
    Ok(s)
}
