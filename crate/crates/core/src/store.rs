//! Embedded document store.
//!
//! Documents live in memory and every write is appended to a single
//! line-delimited log that is fsynced before `put` returns. Opening a store
//! replays the log; a torn final line (a crash mid-append) is discarded.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::unique_annotation_key;
use crate::model::{LabelSource, SessionId};

pub const MAX_PAGE: usize = 1000;
const LOG_FILE: &str = "store.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    Sessions,
    Prompts,
    Runs,
    Annotations,
    Runsets,
    /// Mask maps together with the raw session they were computed from.
    Maskmaps,
    Reports,
    /// Per-item attempt transcripts of runs.
    RunItems,
}

impl Collection {
    pub const ALL: [Collection; 8] = [
        Collection::Sessions,
        Collection::Prompts,
        Collection::Runs,
        Collection::Annotations,
        Collection::Runsets,
        Collection::Maskmaps,
        Collection::Reports,
        Collection::RunItems,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Collection::Sessions => "sessions",
            Collection::Prompts => "prompts",
            Collection::Runs => "runs",
            Collection::Annotations => "annotations",
            Collection::Runsets => "runsets",
            Collection::Maskmaps => "maskmaps",
            Collection::Reports => "reports",
            Collection::RunItems => "run_items",
        }
    }

    pub fn is_protected(self) -> bool {
        self == Collection::Maskmaps
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Collection {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Collection::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| StoreError::UnknownCollection(s.to_owned()))
    }
}

/// Reads of protected collections need [`Access::Privileged`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Standard,
    Privileged,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("collection {0} requires privileged access")]
    Forbidden(Collection),
    #[error("page limit {0} exceeds {MAX_PAGE}")]
    LimitTooLarge(usize),
    #[error("annotation {key} already exists as {existing}")]
    UniqueViolation { key: String, existing: String },
    #[error("document cannot be stored: {0}")]
    BadDocument(String),
    #[error("store log is corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Page {
    pub offset: usize,
    pub limit: usize,
}

impl Default for Page {
    fn default() -> Self {
        Self { offset: 0, limit: 100 }
    }
}

impl Page {
    pub fn all() -> Self {
        Self { offset: 0, limit: MAX_PAGE }
    }
}

/// Conjunction of field-equality tests. Field names may be dotted paths
/// (`source.run_id`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filter(Vec<(String, Value)>);

impl Filter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn eq(mut self, field: impl Into<String>, value: impl Into<Value>) -> Self {
        self.0.push((field.into(), value.into()));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn matches(&self, doc: &Value) -> bool {
        self.0.iter().all(|(field, want)| {
            let pointer = format!("/{}", field.replace('.', "/"));
            match (doc.pointer(&pointer), want) {
                (Some(got), want) if got == want => true,
                // Filters arriving as query-string text still match numbers
                // and booleans.
                (Some(Value::Number(n)), Value::String(s)) => s.trim().parse::<f64>().ok() == n.as_f64(),
                (Some(Value::Bool(b)), Value::String(s)) => s == if *b { "true" } else { "false" },
                _ => false,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryPage {
    pub documents: Vec<Value>,
    pub total: usize,
}

#[derive(Serialize, Deserialize)]
struct LogRecord {
    c: Collection,
    id: String,
    doc: Value,
}

#[derive(Default)]
struct Data {
    collections: HashMap<Collection, BTreeMap<String, Value>>,
    /// Annotation unique key to annotation id.
    annotation_keys: HashMap<String, String>,
}

impl Data {
    fn annotation_key(doc: &Value) -> Result<String, StoreError> {
        let source: LabelSource = serde_json::from_value(doc.get("source").cloned().unwrap_or(Value::Null))
            .map_err(|e| StoreError::BadDocument(format!("annotation source: {e}")))?;
        let session: SessionId = doc
            .get("session_id")
            .and_then(Value::as_str)
            .ok_or_else(|| StoreError::BadDocument("annotation without session_id".into()))?
            .into();
        let index = doc
            .get("utterance_index")
            .and_then(Value::as_u64)
            .ok_or_else(|| StoreError::BadDocument("annotation without utterance_index".into()))?;
        Ok(unique_annotation_key(&source, &session, index as usize))
    }

    fn check(&self, c: Collection, id: &str, doc: &Value) -> Result<Option<String>, StoreError> {
        if c != Collection::Annotations {
            return Ok(None);
        }
        let key = Self::annotation_key(doc)?;
        match self.annotation_keys.get(&key) {
            Some(existing) if existing != id => Err(StoreError::UniqueViolation { key, existing: existing.clone() }),
            _ => Ok(Some(key)),
        }
    }

    fn apply(&mut self, c: Collection, id: String, doc: Value, key: Option<String>) {
        let coll = self.collections.entry(c).or_default();
        if c == Collection::Annotations {
            if let Some(Ok(old_key)) = coll.get(&id).map(Self::annotation_key) {
                self.annotation_keys.remove(&old_key);
            }
        }
        if let Some(k) = key {
            self.annotation_keys.insert(k, id.clone());
        }
        coll.insert(id, doc);
    }
}

/// The neutral store interface; [`Store`] is the embedded implementation.
pub trait DocumentStore: Send + Sync {
    fn put(&self, c: Collection, id: &str, doc: Value) -> Result<(), StoreError>;
    fn get(&self, c: Collection, id: &str, access: Access) -> Result<Option<Value>, StoreError>;
    fn query(&self, c: Collection, filter: &Filter, page: Page, access: Access) -> Result<QueryPage, StoreError>;
    /// Id of the annotation holding `key`, if any.
    fn annotation_by_key(&self, key: &str) -> Option<String>;
}

pub struct Store {
    data: RwLock<Data>,
    /// Also serializes writers when there is no file.
    log: Mutex<Option<BufWriter<File>>>,
    dir: Option<PathBuf>,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl Store {
    /// A store with no persistence.
    pub fn in_memory() -> Self {
        Self { data: RwLock::new(Data::default()), log: Mutex::new(None), dir: None }
    }

    /// Opens (creating if needed) the store in directory `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut data = Data::default();
        // Byte length of the log up to the last complete record.
        let mut keep: Option<u64> = None;
        if path.exists() {
            let content = fs::read(&path)?;
            let text = String::from_utf8_lossy(&content);
            let lines: Vec<&str> = text.split_inclusive('\n').collect();
            let last = lines.len();
            let mut offset = 0u64;
            for (n, line) in lines.into_iter().enumerate() {
                let start = offset;
                offset += line.len() as u64;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogRecord>(line) {
                    Ok(rec) => {
                        let key = if rec.c == Collection::Annotations { Data::annotation_key(&rec.doc).ok() } else { None };
                        data.apply(rec.c, rec.id, rec.doc, key);
                    }
                    Err(e) if n + 1 == last => {
                        log::warn!("discarding torn final store record: {e}");
                        keep = Some(start);
                    }
                    Err(e) => return Err(StoreError::Corrupt { line: n + 1, message: e.to_string() }),
                }
            }
            if keep.is_none() && content.last().is_some_and(|b| *b != b'\n') {
                keep = Some(content.len() as u64);
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if let Some(len) = keep {
            // Cut a torn tail, or terminate a complete record missing its newline.
            file.set_len(len)?;
            if len > 0 && fs::read(&path)?.last() != Some(&b'\n') {
                file.write_all(b"\n")?;
            }
            file.sync_data()?;
        }
        Ok(Self { data: RwLock::new(data), log: Mutex::new(Some(BufWriter::new(file))), dir: Some(dir.to_owned()) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn guard(c: Collection, access: Access) -> Result<(), StoreError> {
        if c.is_protected() && access != Access::Privileged {
            return Err(StoreError::Forbidden(c));
        }
        Ok(())
    }

    pub fn count(&self, c: Collection) -> usize {
        self.data.read().expect("store lock").collections.get(&c).map_or(0, BTreeMap::len)
    }

    /// Rewrites the log so it holds exactly one record per live document.
    pub fn compact(&self) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut writer = self.log.lock().expect("log lock");
        let data = self.data.read().expect("store lock");
        let tmp = dir.join(format!("{LOG_FILE}.tmp"));
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            for c in Collection::ALL {
                for (id, doc) in data.collections.get(&c).into_iter().flatten() {
                    serde_json::to_writer(&mut out, &LogRecord { c, id: id.clone(), doc: doc.clone() })
                        .map_err(|e| StoreError::BadDocument(e.to_string()))?;
                    out.write_all(b"\n")?;
                }
            }
            out.flush()?;
            out.get_ref().sync_all()?;
        }
        fs::rename(&tmp, dir.join(LOG_FILE))?;
        *writer = Some(BufWriter::new(OpenOptions::new().append(true).open(dir.join(LOG_FILE))?));
        Ok(())
    }

    /// Writes one `<collection>.jsonl` file per collection into `dir`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<BTreeMap<Collection, usize>, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let data = self.data.read().expect("store lock");
        let mut counts = BTreeMap::new();
        for c in Collection::ALL {
            let mut out = BufWriter::new(File::create(dir.join(format!("{c}.jsonl")))?);
            let docs = data.collections.get(&c);
            for (id, doc) in docs.into_iter().flatten() {
                serde_json::to_writer(&mut out, &serde_json::json!({ "id": id, "doc": doc }))
                    .map_err(|e| StoreError::BadDocument(e.to_string()))?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            counts.insert(c, docs.map_or(0, BTreeMap::len));
        }
        Ok(counts)
    }

    /// Loads files written by [`Store::dump`]; missing files are skipped.
    pub fn load(&self, dir: impl AsRef<Path>) -> Result<BTreeMap<Collection, usize>, StoreError> {
        let dir = dir.as_ref();
        let mut counts = BTreeMap::new();
        for c in Collection::ALL {
            let path = dir.join(format!("{c}.jsonl"));
            if !path.exists() {
                continue;
            }
            let mut n = 0;
            for (line_no, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                #[derive(Deserialize)]
                struct Row {
                    id: String,
                    doc: Value,
                }
                let row: Row = serde_json::from_str(&line)
                    .map_err(|e| StoreError::Corrupt { line: line_no + 1, message: format!("{}: {e}", path.display()) })?;
                self.put(c, &row.id, row.doc)?;
                n += 1;
            }
            counts.insert(c, n);
        }
        Ok(counts)
    }
}

impl DocumentStore for Store {
    fn put(&self, c: Collection, id: &str, doc: Value) -> Result<(), StoreError> {
        if id.is_empty() {
            return Err(StoreError::BadDocument("empty id".into()));
        }
        // The log lock serializes writers, so the uniqueness check and the
        // apply cannot interleave with another put.
        let mut log = self.log.lock().expect("log lock");
        let key = self.data.read().expect("store lock").check(c, id, &doc)?;
        if let Some(w) = log.as_mut() {
            let rec = LogRecord { c, id: id.to_owned(), doc };
            serde_json::to_writer(&mut *w, &rec).map_err(|e| StoreError::BadDocument(e.to_string()))?;
            w.write_all(b"\n")?;
            w.flush()?;
            w.get_ref().sync_data()?;
            self.data.write().expect("store lock").apply(c, rec.id, rec.doc, key);
        } else {
            self.data.write().expect("store lock").apply(c, id.to_owned(), doc, key);
        }
        Ok(())
    }

    fn get(&self, c: Collection, id: &str, access: Access) -> Result<Option<Value>, StoreError> {
        Self::guard(c, access)?;
        Ok(self.data.read().expect("store lock").collections.get(&c).and_then(|m| m.get(id)).cloned())
    }

    fn query(&self, c: Collection, filter: &Filter, page: Page, access: Access) -> Result<QueryPage, StoreError> {
        Self::guard(c, access)?;
        if page.limit > MAX_PAGE {
            return Err(StoreError::LimitTooLarge(page.limit));
        }
        let data = self.data.read().expect("store lock");
        let mut total = 0;
        let mut documents = Vec::new();
        for doc in data.collections.get(&c).into_iter().flat_map(BTreeMap::values) {
            if filter.matches(doc) {
                if total >= page.offset && documents.len() < page.limit {
                    documents.push(doc.clone());
                }
                total += 1;
            }
        }
        Ok(QueryPage { documents, total })
    }

    fn annotation_by_key(&self, key: &str) -> Option<String> {
        self.data.read().expect("store lock").annotation_keys.get(key).cloned()
    }
}

impl dyn DocumentStore + '_ {
    pub fn put_as<T: Serialize>(&self, c: Collection, id: &str, doc: &T) -> Result<(), StoreError> {
        let v = serde_json::to_value(doc).map_err(|e| StoreError::BadDocument(e.to_string()))?;
        self.put(c, id, v)
    }

    pub fn get_as<T: DeserializeOwned>(&self, c: Collection, id: &str, access: Access) -> Result<Option<T>, StoreError> {
        match self.get(c, id, access)? {
            None => Ok(None),
            Some(v) => serde_json::from_value(v).map(Some).map_err(|e| StoreError::BadDocument(format!("{c}/{id}: {e}"))),
        }
    }

    /// Every matching document, walking pages.
    pub fn query_all_as<T: DeserializeOwned>(&self, c: Collection, filter: &Filter, access: Access) -> Result<Vec<T>, StoreError> {
        let mut out = Vec::new();
        let mut offset = 0;
        loop {
            let page = self.query(c, filter, Page { offset, limit: MAX_PAGE }, access)?;
            let n = page.documents.len();
            for v in page.documents {
                out.push(serde_json::from_value(v).map_err(|e| StoreError::BadDocument(format!("{c}: {e}")))?);
            }
            offset += n;
            if n == 0 || offset >= page.total {
                return Ok(out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ann(id: &str, run: &str, session: &str, index: u64) -> Value {
        json!({
            "id": id,
            "session_id": session,
            "utterance_index": index,
            "source": {"kind": "run", "run_id": run},
            "document": {"code": "q"},
        })
    }

    #[test]
    fn put_get_round_trip_and_last_writer_wins() {
        let s = Store::in_memory();
        s.put(Collection::Sessions, "a", json!({"v": 1})).unwrap();
        assert_eq!(s.get(Collection::Sessions, "a", Access::Standard).unwrap(), Some(json!({"v": 1})));
        s.put(Collection::Sessions, "a", json!({"v": 2})).unwrap();
        assert_eq!(s.get(Collection::Sessions, "a", Access::Standard).unwrap(), Some(json!({"v": 2})));
    }

    #[test]
    fn query_filters_and_paginates() {
        let s = Store::in_memory();
        for i in 0..5 {
            s.put(Collection::Annotations, &format!("ann_{i}"), ann(&format!("ann_{i}"), "R", "S", i)).unwrap();
        }
        s.put(Collection::Annotations, "ann_x", ann("ann_x", "Q", "S", 0)).unwrap();
        let f = Filter::new().eq("source.run_id", "R");
        let all = s.query(Collection::Annotations, &f, Page::all(), Access::Standard).unwrap();
        assert_eq!(all.total, 5);
        let page = s.query(Collection::Annotations, &f, Page { offset: 0, limit: 2 }, Access::Standard).unwrap();
        assert_eq!((page.documents.len(), page.total), (2, 5));
        let ids: Vec<_> = s
            .query(Collection::Annotations, &Filter::new(), Page::all(), Access::Standard)
            .unwrap()
            .documents
            .iter()
            .map(|d| d["id"].as_str().unwrap().to_owned())
            .collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(s.query(Collection::Annotations, &Filter::new().eq("utterance_index", "0"), Page::all(), Access::Standard).unwrap().total, 2);
        assert!(matches!(
            s.query(Collection::Sessions, &Filter::new(), Page { offset: 0, limit: 1001 }, Access::Standard),
            Err(StoreError::LimitTooLarge(1001))
        ));
    }

    #[test]
    fn annotation_uniqueness_is_enforced() {
        let s = Store::in_memory();
        s.put(Collection::Annotations, "ann_1", ann("ann_1", "R", "S", 0)).unwrap();
        s.put(Collection::Annotations, "ann_1", ann("ann_1", "R", "S", 0)).unwrap();
        assert!(matches!(
            s.put(Collection::Annotations, "ann_2", ann("ann_2", "R", "S", 0)),
            Err(StoreError::UniqueViolation { .. })
        ));
        assert_eq!(s.annotation_by_key("run:R|S|0").as_deref(), Some("ann_1"));
    }

    #[test]
    fn maskmaps_need_privilege() {
        let s = Store::in_memory();
        s.put(Collection::Maskmaps, "ses_1", json!({})).unwrap();
        assert!(matches!(s.get(Collection::Maskmaps, "ses_1", Access::Standard), Err(StoreError::Forbidden(_))));
        assert!(s.get(Collection::Maskmaps, "ses_1", Access::Privileged).unwrap().is_some());
    }

    #[test]
    fn unknown_collection_name() {
        assert!(matches!("widgets".parse::<Collection>(), Err(StoreError::UnknownCollection(_))));
        assert_eq!("run_items".parse::<Collection>().unwrap(), Collection::RunItems);
    }
}
