//! C ABI over the sandpiper workbench.
//!
//! Handles are opaque. Every call returns an [`SpStatus`]; on failure the
//! message is available from [`sp_last_error`] on the same thread. Documents
//! cross the boundary as UTF-8 JSON strings owned by the library and
//! released with [`sp_string_free`].
//!
//! Pointer rules shared by every function: string arguments are
//! NUL-terminated UTF-8 and may be null only where documented; `out_json`
//! must be writable and receives a string the caller frees; handles are
//! used from any thread but freed only when no call is in flight.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sandpiper::app::{HumanLabel, RunRequest, Workbench, WorkbenchError};
use sandpiper::config::{Config, MEMORY_STORE};
use sandpiper::deid::ReviewDecision;
use sandpiper::evalengine;
use sandpiper::schema;
use sandpiper::store::{Access, Collection};
use sandpiper::{CodingSchema, LabelSource, SourceFormat};
use serde::Serialize;
use serde_json::Value;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or malformed JSON argument.
    InvalidArgument = 1,
    NotFound = 2,
    /// The request was understood but is not valid for the current state.
    Invalid = 3,
    Conflict = 4,
    Forbidden = 5,
    SchemaViolation = 6,
    Gateway = 7,
    Storage = 8,
    /// A panic was caught at the boundary.
    Internal = 9,
}

/// Opaque workbench handle.
pub struct SpWorkbench {
    inner: Workbench,
}

/// Agreement between two label sequences.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpKappa {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub n_items: usize,
}

struct Fail(SpStatus, String);

impl From<WorkbenchError> for Fail {
    fn from(e: WorkbenchError) -> Self {
        let status = match e.code() {
            "not_found" => SpStatus::NotFound,
            "conflict" | "already_masked" => SpStatus::Conflict,
            "forbidden" => SpStatus::Forbidden,
            "schema_violation" => SpStatus::SchemaViolation,
            "storage_failure" | "config_error" => SpStatus::Storage,
            "model_not_allowed" | "transport_failure" | "auth_failure" | "request_rejected"
            | "malformed_provider_response" => SpStatus::Gateway,
            _ => SpStatus::Invalid,
        };
        Fail(status, e.to_string())
    }
}

fn bad_arg(msg: impl Into<String>) -> Fail {
    Fail(SpStatus::InvalidArgument, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("nul bytes removed"));
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            SpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(_) => {
            set_last_error(Some("panic inside sandpiper".into()));
            SpStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(bad_arg(format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| bad_arg(format!("`{name}` is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn json_arg<T: serde::de::DeserializeOwned>(p: *const c_char, name: &str) -> Result<T, Fail> {
    serde_json::from_str(str_arg(p, name)?).map_err(|e| bad_arg(format!("`{name}`: {e}")))
}

unsafe fn handle<'a>(wb: *const SpWorkbench) -> Result<&'a Workbench, Fail> {
    wb.as_ref().map(|h| &h.inner).ok_or_else(|| bad_arg("workbench handle is null"))
}

unsafe fn write_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(bad_arg("output pointer is null"));
    }
    let text = serde_json::to_string(value).map_err(|e| Fail(SpStatus::Internal, e.to_string()))?;
    *out = CString::new(text).map_err(|e| Fail(SpStatus::Internal, e.to_string()))?.into_raw();
    Ok(())
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    const V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens a workbench. `config_toml` may be null for defaults; `store_path`
/// overrides the configured store and may be null. Pass `":memory:"` for a
/// store that keeps nothing.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_workbench_open(
    config_toml: *const c_char,
    store_path: *const c_char,
    out: *mut *mut SpWorkbench,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad_arg("output pointer is null"));
        }
        let mut cfg = match opt_str_arg(config_toml, "config_toml")? {
            Some(t) => Config::from_toml(t, Path::new("<ffi>")).map_err(|e| bad_arg(e.to_string()))?,
            None => Config::in_memory(),
        };
        if let Some(p) = opt_str_arg(store_path, "store_path")? {
            cfg.store_path = p.to_owned();
        }
        let inner = Workbench::open(cfg)?;
        *out = Box::into_raw(Box::new(SpWorkbench { inner }));
        Ok(())
    })
}

/// # Safety
/// `wb` must be null or a handle from [`sp_workbench_open`], not yet freed,
/// with no call in flight on another thread.
#[no_mangle]
pub unsafe extern "C" fn sp_workbench_free(wb: *mut SpWorkbench) {
    if !wb.is_null() {
        drop(Box::from_raw(wb));
    }
}

/// Imports `len` bytes in `format` (`plaintext`, `csv`, `session-json`).
/// Writes `{session, report}`.
///
/// # Safety
/// `data` must point at `len` readable bytes; other pointers as usual.
#[no_mangle]
pub unsafe extern "C" fn sp_import(
    wb: *const SpWorkbench,
    data: *const u8,
    len: usize,
    format: *const c_char,
    title: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        if data.is_null() && len > 0 {
            return Err(bad_arg("`data` is null"));
        }
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        let format: SourceFormat = str_arg(format, "format")?.parse().map_err(|e: String| bad_arg(e))?;
        let title = opt_str_arg(title, "title")?.unwrap_or("untitled");
        write_json(out_json, &wb.import(bytes, format, title)?)
    })
}

/// Masks a raw session. `roster_json` is a JSON array of names, or null.
/// Writes `{session, report}`.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_deidentify(
    wb: *const SpWorkbench,
    session_id: *const c_char,
    roster_json: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        let roster: Vec<String> = if roster_json.is_null() { Vec::new() } else { json_arg(roster_json, "roster_json")? };
        write_json(out_json, &wb.deidentify(str_arg(session_id, "session_id")?, roster)?)
    })
}

/// Applies `{"decision": "approve"|"reject", "notes": ...}`. Writes the session.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_deid_review(
    wb: *const SpWorkbench,
    session_id: *const c_char,
    decision_json: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        let d: ReviewDecision = json_arg(decision_json, "decision_json")?;
        write_json(out_json, &wb.deid_review(str_arg(session_id, "session_id")?, &d)?)
    })
}

/// Creates a prompt with one version. Writes the prompt.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_create_prompt(
    wb: *const SpWorkbench,
    name: *const c_char,
    instructions: *const c_char,
    schema_json: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        let schema: CodingSchema = json_arg(schema_json, "schema_json")?;
        let p = wb.create_prompt(str_arg(name, "name")?, str_arg(instructions, "instructions")?, schema)?;
        write_json(out_json, &p)
    })
}

/// Creates a queued run from a run request document. Writes the run.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_create_run(
    wb: *const SpWorkbench,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        let req: RunRequest = json_arg(request_json, "request_json")?;
        write_json(out_json, &wb.create_run(&req)?)
    })
}

/// Executes a queued run on the calling thread. Writes the final run.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_execute_run(
    wb: *const SpWorkbench,
    run_id: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        write_json(out_json, &wb.execute_run(str_arg(run_id, "run_id")?, None)?)
    })
}

/// Requests cancellation; safe to call while another thread executes the run.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_cancel_run(
    wb: *const SpWorkbench,
    run_id: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        write_json(out_json, &wb.cancel_run(str_arg(run_id, "run_id")?)?)
    })
}

/// Records a human label. Writes the annotation.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_add_label(
    wb: *const SpWorkbench,
    label_json: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        let label: HumanLabel = json_arg(label_json, "label_json")?;
        write_json(out_json, &wb.add_human_annotation(&label)?)
    })
}

/// `members_json` is an array of `"run:<id>"` / `"human:<coder>"` strings;
/// `reference` may be null. Writes the run-set.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_create_runset(
    wb: *const SpWorkbench,
    name: *const c_char,
    members_json: *const c_char,
    reference: *const c_char,
    target_field: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        let raw: Vec<String> = json_arg(members_json, "members_json")?;
        let members = raw.iter().map(|m| m.parse::<LabelSource>()).collect::<Result<Vec<_>, _>>().map_err(bad_arg)?;
        let reference = opt_str_arg(reference, "reference")?.map(str::parse::<LabelSource>).transpose().map_err(bad_arg)?;
        let rs = wb.create_runset(str_arg(name, "name")?, members, reference, str_arg(target_field, "target_field")?)?;
        write_json(out_json, &rs)
    })
}

/// Writes the evaluation report of a run-set.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_evaluate(
    wb: *const SpWorkbench,
    runset_id: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        write_json(out_json, &wb.evaluation(str_arg(runset_id, "runset_id")?)?)
    })
}

/// Fetches one document from a non-protected collection.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_get(
    wb: *const SpWorkbench,
    collection: *const c_char,
    id: *const c_char,
    out_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let wb = handle(wb)?;
        let c: Collection = str_arg(collection, "collection")?.parse().map_err(|e: sandpiper::store::StoreError| bad_arg(e.to_string()))?;
        if c.is_protected() {
            return Err(WorkbenchError::Forbidden.into());
        }
        let id = str_arg(id, "id")?;
        let doc: Value = wb
            .store()
            .get(c, id, Access::Standard)
            .map_err(WorkbenchError::from)?
            .ok_or_else(|| Fail(SpStatus::NotFound, format!("{id} not found")))?;
        write_json(out_json, &doc)
    })
}

/// Cohen's kappa over two equally long JSON arrays of string labels.
/// Fails with `Invalid` when the arrays are empty.
///
/// # Safety
/// See the crate docs; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_cohen_kappa(
    labels_a_json: *const c_char,
    labels_b_json: *const c_char,
    out: *mut SpKappa,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad_arg("output pointer is null"));
        }
        let a: Vec<String> = json_arg(labels_a_json, "labels_a_json")?;
        let b: Vec<String> = json_arg(labels_b_json, "labels_b_json")?;
        if a.len() != b.len() {
            return Err(bad_arg(format!("label arrays differ in length ({} vs {})", a.len(), b.len())));
        }
        let pairs: Vec<(String, String)> = a.into_iter().zip(b).collect();
        let s = evalengine::cohen_kappa(&pairs).ok_or_else(|| Fail(SpStatus::Invalid, "no items".into()))?;
        *out = SpKappa {
            kappa: s.kappa,
            observed_agreement: s.observed_agreement,
            expected_agreement: s.expected_agreement,
            n_items: s.n_items,
        };
        Ok(())
    })
}

/// Validates `document` against `schema_json`. Returns `Ok` when it
/// conforms and `SchemaViolation` otherwise; in both cases the error list
/// (possibly empty) is written to `errors_json` when it is non-null.
///
/// # Safety
/// See the crate docs.
#[no_mangle]
pub unsafe extern "C" fn sp_validate(
    schema_json: *const c_char,
    document: *const c_char,
    errors_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let schema: CodingSchema = json_arg(schema_json, "schema_json")?;
        let errors = schema::validate(str_arg(document, "document")?, &schema);
        if !errors_json.is_null() {
            write_json(errors_json, &errors)?;
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Fail(SpStatus::SchemaViolation, format!("{} schema violation(s)", errors.len())))
        }
    })
}

/// Store path that keeps everything in memory, statically allocated.
#[no_mangle]
pub extern "C" fn sp_memory_store() -> *const c_char {
    debug_assert_eq!(MEMORY_STORE, ":memory:");
    c":memory:".as_ptr()
}
