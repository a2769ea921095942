//! The workbench: every user-facing operation, shared by the CLI, the REST
//! service and the C ABI so that all of them produce identical documents.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Config, ConfigError, MEMORY_STORE};
use crate::deid::{self, DeidError, DetectionRuleSet, ReviewDecision, VerificationReport};
use crate::evalengine::{self, EvalError, EvaluationReport};
use crate::gateway::{ChatProvider, GatewayError, HttpProvider, SyntheticProvider};
use crate::ingest::{self, IngestError, IngestReport};
use crate::model::{
    Annotation, AnnotationId, CodingSchema, DeidStatus, Granularity, LabelSource, MaskMap, Prompt, PromptError,
    PromptVersionRef, Run, RunDefinitionError, RunId, RunParams, RunSet, RunSetError, RunState, Session,
    SessionError, SessionId, SourceFormat,
};
use crate::orchestrator::{self, CancelToken, OrchestratorError, ProgressFn};
use crate::schema::{self, ValidationError};
use crate::store::{Access, Collection, DocumentStore, Filter, Page, QueryPage, Store, StoreError};

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
    #[error("document does not conform to the schema ({} error(s))", .0.len())]
    SchemaViolation(Vec<ValidationError>),
    #[error("privileged access required")]
    Forbidden,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Deid(#[from] DeidError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl WorkbenchError {
    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            WorkbenchError::NotFound { .. } => "not_found",
            WorkbenchError::Invalid(_) => "invalid_request",
            WorkbenchError::Conflict(_) => "conflict",
            WorkbenchError::SchemaViolation(_) => "schema_violation",
            WorkbenchError::Forbidden => "forbidden",
            WorkbenchError::Ingest(_) => "ingest_failed",
            WorkbenchError::Deid(DeidError::AlreadyMasked(..)) => "already_masked",
            WorkbenchError::Deid(_) => "deid_failed",
            WorkbenchError::Gateway(e) => e.code(),
            WorkbenchError::Eval(_) => "evaluation_failed",
            WorkbenchError::Store(StoreError::UniqueViolation { .. }) => "conflict",
            WorkbenchError::Store(StoreError::LimitTooLarge(_)) => "invalid_request",
            WorkbenchError::Store(_) => "storage_failure",
            WorkbenchError::Config(_) => "config_error",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self.code() {
            "not_found" => 404,
            "forbidden" => 403,
            "conflict" | "already_masked" => 409,
            "storage_failure" | "config_error" => 500,
            "transport_failure" | "auth_failure" | "malformed_provider_response" => 502,
            _ => 422,
        }
    }

    /// Structured detail for clients, where there is any.
    pub fn details(&self) -> Option<Value> {
        match self {
            WorkbenchError::SchemaViolation(errors) => Some(serde_json::json!({ "errors": errors })),
            WorkbenchError::Ingest(IngestError::NoUtterances { report }) => serde_json::to_value(report).ok(),
            _ => None,
        }
    }
}

impl From<OrchestratorError> for WorkbenchError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::UnknownSession(id) => WorkbenchError::NotFound { kind: "session", id: id.to_string() },
            OrchestratorError::UnknownPromptVersion(r) => WorkbenchError::NotFound { kind: "prompt version", id: r.to_string() },
            OrchestratorError::NotQueued(..) => WorkbenchError::Conflict(e.to_string()),
            OrchestratorError::Store(s) => WorkbenchError::Store(s),
            other => WorkbenchError::Invalid(other.to_string()),
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for WorkbenchError {
            fn from(e: $t) -> Self {
                WorkbenchError::Invalid(e.to_string())
            }
        }
    )*};
}
invalid_from!(SessionError, PromptError, RunDefinitionError, RunSetError);

pub type Result<T, E = WorkbenchError> = std::result::Result<T, E>;

/// Chooses the provider for a run's model.
pub type ProviderResolver =
    Arc<dyn Fn(&str, &CodingSchema) -> Result<Arc<dyn ChatProvider>, GatewayError> + Send + Sync>;

/// Model ids with this prefix are served by the in-process synthetic
/// provider.
pub const MOCK_MODEL_PREFIX: &str = "mock";
const SEED_DOC: &str = "_surrogate_seed";

/// Protected record kept per masked session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub session_id: SessionId,
    pub map: MaskMap,
    pub original: Session,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportOutcome {
    pub session: Session,
    pub report: IngestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeidOutcome {
    pub session: Session,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub prompt_version: PromptVersionRef,
    pub model: String,
    pub sessions: Vec<SessionId>,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub context_window: Option<usize>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub concurrency: Option<usize>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanLabel {
    pub session_id: SessionId,
    pub utterance_index: usize,
    pub coder_id: String,
    /// Prompt version whose schema the label follows.
    pub prompt_version: PromptVersionRef,
    pub document: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRow {
    pub index: usize,
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    pub text: String,
    /// Annotation documents keyed by source.
    pub annotations: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatView {
    pub session_id: SessionId,
    pub title: String,
    pub deid_status: DeidStatus,
    pub sources: Vec<String>,
    pub utterances: Vec<ChatRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub provider: String,
}

#[derive(Serialize, Deserialize)]
struct CachedReport {
    fingerprint: String,
    report: EvaluationReport,
}

pub struct Workbench {
    store: Arc<Store>,
    config: Config,
    resolver: ProviderResolver,
    cancels: Mutex<HashMap<RunId, CancelToken>>,
    seed: Vec<u8>,
}

impl std::fmt::Debug for Workbench {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workbench").field("store", &self.store).finish_non_exhaustive()
    }
}

fn default_resolver(config: &Config) -> ProviderResolver {
    let gateway_models = config.gateway.models.clone();
    let http: Arc<dyn ChatProvider> = Arc::new(HttpProvider::new(config.gateway.clone()));
    Arc::new(move |model: &str, schema: &CodingSchema| {
        if model.starts_with(MOCK_MODEL_PREFIX) {
            Ok(Arc::new(SyntheticProvider::new(schema.clone(), [model])) as Arc<dyn ChatProvider>)
        } else if gateway_models.iter().any(|m| m == model) {
            Ok(http.clone())
        } else {
            Err(GatewayError::ModelNotAllowed(model.to_owned()))
        }
    })
}

fn random_seed() -> String {
    let mut h = Sha256::new();
    h.update(ulid::Ulid::new().to_bytes());
    h.update(ulid::Ulid::new().to_bytes());
    h.update(format!("{:?}", std::time::SystemTime::now()));
    hex::encode(h.finalize())
}

impl Workbench {
    pub fn open(config: Config) -> Result<Self> {
        let store = if config.store_path == MEMORY_STORE { Store::in_memory() } else { Store::open(&config.store_path)? };
        Self::with_store(config, store)
    }

    pub fn with_store(config: Config, store: Store) -> Result<Self> {
        let store = Arc::new(store);
        let seed = match &config.deid.seed {
            Some(s) => s.clone().into_bytes(),
            None => {
                let dyn_store: &dyn DocumentStore = &*store;
                match dyn_store.get(Collection::Maskmaps, SEED_DOC, Access::Privileged)? {
                    Some(v) => v.get("seed").and_then(Value::as_str).unwrap_or_default().as_bytes().to_vec(),
                    None => {
                        let s = random_seed();
                        dyn_store.put(Collection::Maskmaps, SEED_DOC, serde_json::json!({ "seed": s }))?;
                        s.into_bytes()
                    }
                }
            }
        };
        let resolver = default_resolver(&config);
        let wb = Self { store, config, resolver, cancels: Mutex::new(HashMap::new()), seed };
        wb.recover_interrupted_runs()?;
        Ok(wb)
    }

    pub fn with_provider_resolver(mut self, resolver: ProviderResolver) -> Self {
        self.resolver = resolver;
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn store(&self) -> &dyn DocumentStore {
        &*self.store
    }

    pub fn raw_store(&self) -> &Store {
        &self.store
    }

    fn load<T: serde::de::DeserializeOwned>(&self, c: Collection, id: &str, kind: &'static str) -> Result<T> {
        self.store().get_as(c, id, Access::Standard)?.ok_or_else(|| WorkbenchError::NotFound { kind, id: id.to_owned() })
    }

    fn recover_interrupted_runs(&self) -> Result<()> {
        let runs: Vec<Run> =
            self.store().query_all_as(Collection::Runs, &Filter::new().eq("state", "running"), Access::Standard)?;
        for mut run in runs {
            run.state = RunState::Failed;
            run.error = Some("interrupted: the process stopped while the run was executing".into());
            run.finished_at = Some(chrono::Utc::now());
            self.store().put_as(Collection::Runs, run.id.as_str(), &run)?;
        }
        Ok(())
    }

    // -- sessions ----------------------------------------------------------

    pub fn import(&self, bytes: &[u8], format: SourceFormat, title: &str) -> Result<ImportOutcome> {
        let (session, report) = ingest::parse(bytes, format, title)?;
        if self.store().get(Collection::Sessions, session.id.as_str(), Access::Standard)?.is_some() {
            return Err(WorkbenchError::Conflict(format!("session {} already exists", session.id)));
        }
        self.store().put_as(Collection::Sessions, session.id.as_str(), &session)?;
        Ok(ImportOutcome { session, report })
    }

    pub fn session(&self, id: &str) -> Result<Session> {
        self.load(Collection::Sessions, id, "session")
    }

    pub fn list(&self, c: Collection, filter: &Filter, page: Page) -> Result<QueryPage> {
        if c.is_protected() {
            return Err(WorkbenchError::Forbidden);
        }
        Ok(self.store().query(c, filter, page, Access::Standard)?)
    }

    pub fn export_session(&self, id: &str) -> Result<Vec<u8>> {
        Ok(ingest::export_session_json(&self.session(id)?))
    }

    pub fn rules(&self, roster: Vec<String>) -> Result<DetectionRuleSet> {
        Ok(DetectionRuleSet::new(roster, self.config.deid.cue_phrases.clone(), self.config.deid.institutions.clone())?)
    }

    /// Detects and masks PII. The masked session replaces the stored one;
    /// the map and the raw original go to the protected collection.
    pub fn deidentify(&self, id: &str, roster: Vec<String>) -> Result<DeidOutcome> {
        let original = self.session(id)?;
        let rules = self.rules(roster)?;
        let detections = deid::detect_pii(&original, &rules)?;
        let (masked, map) = deid::mask_session(&original, &detections, &self.seed)?;
        let record = MaskRecord { session_id: original.id.clone(), map, original };
        self.store().put_as(Collection::Maskmaps, id, &record)?;
        self.store().put_as(Collection::Sessions, id, &masked)?;
        let report = self.deid_report(id)?;
        Ok(DeidOutcome { session: masked, report })
    }

    fn mask_record(&self, id: &str) -> Result<MaskRecord> {
        self.store()
            .get_as(Collection::Maskmaps, id, Access::Privileged)?
            .ok_or_else(|| WorkbenchError::NotFound { kind: "mask map", id: id.to_owned() })
    }

    /// Verification report for a masked session. Contains categories, counts
    /// and locations only.
    pub fn deid_report(&self, id: &str) -> Result<VerificationReport> {
        let masked = self.session(id)?;
        if masked.deid_status == DeidStatus::Raw {
            return Err(WorkbenchError::Conflict(format!("session {id} has not been masked")));
        }
        let record = self.mask_record(id)?;
        let report = deid::verify_masking(&record.original, &masked, &record.map)?;
        self.store().put_as(Collection::Reports, &format!("deid:{id}"), &report)?;
        Ok(report)
    }

    pub fn deid_review(&self, id: &str, decision: &ReviewDecision) -> Result<Session> {
        let masked = self.session(id)?;
        if masked.deid_status == DeidStatus::Raw {
            return Err(WorkbenchError::Conflict(format!("session {id} has not been masked")));
        }
        let reviewed = deid::apply_review(&masked, decision)?;
        if reviewed != masked {
            self.store().put_as(Collection::Sessions, id, &reviewed)?;
        }
        Ok(reviewed)
    }

    /// The re-identification key. Callers must hold the privileged flag.
    pub fn mask_map(&self, id: &str, access: Access) -> Result<MaskMap> {
        if access != Access::Privileged {
            return Err(WorkbenchError::Forbidden);
        }
        Ok(self.mask_record(id)?.map)
    }

    // -- prompts -----------------------------------------------------------

    pub fn create_prompt(&self, name: &str, instructions: &str, schema: CodingSchema) -> Result<Prompt> {
        if name.trim().is_empty() {
            return Err(WorkbenchError::Invalid("prompt name must be non-empty".into()));
        }
        let mut p = Prompt::new(name);
        p.add_version(instructions, schema);
        self.store().put_as(Collection::Prompts, p.id.as_str(), &p)?;
        Ok(p)
    }

    /// Appends a version. Earlier versions are never modified.
    pub fn add_prompt_version(&self, prompt_id: &str, instructions: &str, schema: CodingSchema) -> Result<Prompt> {
        let mut p = self.prompt(prompt_id)?;
        p.add_version(instructions, schema);
        self.store().put_as(Collection::Prompts, p.id.as_str(), &p)?;
        Ok(p)
    }

    pub fn prompt(&self, id: &str) -> Result<Prompt> {
        self.load(Collection::Prompts, id, "prompt")
    }

    fn prompt_version(&self, r: &PromptVersionRef) -> Result<crate::model::PromptVersion> {
        let p = self.prompt(r.prompt_id.as_str())?;
        p.version(r.version).cloned().ok_or_else(|| WorkbenchError::NotFound { kind: "prompt version", id: r.to_string() })
    }

    // -- runs --------------------------------------------------------------

    fn provider_for(&self, model: &str, schema: &CodingSchema) -> Result<Arc<dyn ChatProvider>> {
        Ok((self.resolver)(model, schema)?)
    }

    /// Validates and stores a queued run, freezing its prompt version.
    pub fn create_run(&self, req: &RunRequest) -> Result<Run> {
        let defaults = &self.config.run;
        let params = RunParams {
            temperature: req.temperature.unwrap_or(defaults.temperature),
            max_retries: req.max_retries.unwrap_or(defaults.max_retries),
            context_window: req.context_window.unwrap_or(defaults.context_window),
            concurrency: req.concurrency.unwrap_or(defaults.concurrency),
            max_tokens: req.max_tokens.unwrap_or(defaults.max_tokens),
        };
        let run = Run::new(req.prompt_version.clone(), req.model.clone(), req.sessions.clone(), req.granularity, params)?;
        let mut prompt = self.prompt(req.prompt_version.prompt_id.as_str())?;
        let pv = prompt
            .version(req.prompt_version.version)
            .cloned()
            .ok_or_else(|| WorkbenchError::NotFound { kind: "prompt version", id: req.prompt_version.to_string() })?;
        let provider = self.provider_for(&req.model, &pv.schema)?;
        for sid in &req.sessions {
            let s = self.session(sid.as_str())?;
            if !provider.is_mock() && s.deid_status == DeidStatus::Raw {
                return Err(OrchestratorError::PrivacyGuard(s.id).into());
            }
        }
        if !pv.frozen {
            prompt.freeze(pv.version)?;
            self.store().put_as(Collection::Prompts, prompt.id.as_str(), &prompt)?;
        }
        self.store().put_as(Collection::Runs, run.id.as_str(), &run)?;
        self.cancels.lock().expect("cancel lock").insert(run.id.clone(), CancelToken::new());
        Ok(run)
    }

    pub fn run(&self, id: &str) -> Result<Run> {
        self.load(Collection::Runs, id, "run")
    }

    fn token(&self, id: &RunId) -> CancelToken {
        self.cancels.lock().expect("cancel lock").entry(id.clone()).or_default().clone()
    }

    /// Executes a queued run on the calling thread.
    pub fn execute_run(&self, id: &str, progress: Option<&ProgressFn<'_>>) -> Result<Run> {
        let run = self.run(id)?;
        let pv = self.prompt_version(&run.prompt_version)?;
        let token = self.token(&run.id);
        let outcome = self
            .provider_for(&run.model_id, &pv.schema)
            .and_then(|provider| Ok(orchestrator::execute_run(self.store(), run.clone(), &*provider, &token, progress)?));
        self.cancels.lock().expect("cancel lock").remove(&run.id);
        match outcome {
            Ok(done) => Ok(done),
            Err(e @ WorkbenchError::Conflict(_)) => Err(e),
            Err(e) => {
                let mut failed = self.run(id)?;
                if !failed.state.is_terminal() {
                    failed.state = RunState::Failed;
                    failed.error = Some(e.to_string());
                    failed.finished_at = Some(chrono::Utc::now());
                    self.store().put_as(Collection::Runs, id, &failed)?;
                }
                Err(e)
            }
        }
    }

    /// Executes a queued run on a background thread.
    pub fn spawn_run(self: &Arc<Self>, id: &str) -> std::thread::JoinHandle<()> {
        let wb = Arc::clone(self);
        let id = id.to_owned();
        std::thread::spawn(move || {
            if let Err(e) = wb.execute_run(&id, None) {
                log::error!("run {id} failed: {e}");
            }
        })
    }

    /// Requests cancellation. A run that has not started is cancelled at
    /// once; a running one stops before its next item.
    pub fn cancel_run(&self, id: &str) -> Result<Run> {
        let mut run = self.run(id)?;
        if run.state.is_terminal() {
            return Ok(run);
        }
        self.token(&run.id).cancel();
        let executing = matches!(run.state, RunState::Running);
        if !executing {
            run.state = RunState::Cancelled;
            run.finished_at = Some(chrono::Utc::now());
            self.store().put_as(Collection::Runs, id, &run)?;
        }
        Ok(run)
    }

    // -- annotations -------------------------------------------------------

    /// Stores a human label after validating it against the schema.
    pub fn add_human_annotation(&self, label: &HumanLabel) -> Result<Annotation> {
        if label.coder_id.trim().is_empty() {
            return Err(WorkbenchError::Invalid("coder_id must be non-empty".into()));
        }
        let session = self.session(label.session_id.as_str())?;
        if label.utterance_index >= session.utterances.len() {
            return Err(WorkbenchError::Invalid(format!(
                "utterance {} is out of range for session {}",
                label.utterance_index, session.id
            )));
        }
        let pv = self.prompt_version(&label.prompt_version)?;
        let errors = schema::validate_value(&label.document, &pv.schema, "");
        if !errors.is_empty() {
            return Err(WorkbenchError::SchemaViolation(errors));
        }
        let a = Annotation {
            id: AnnotationId::generate(),
            session_id: label.session_id.clone(),
            utterance_index: label.utterance_index,
            source: LabelSource::human(label.coder_id.clone()),
            prompt_version: label.prompt_version.clone(),
            document: label.document.clone(),
            attempts: 0,
            raw_response_digest: None,
            created_at: chrono::Utc::now(),
        };
        Ok(orchestrator::put_annotation(self.store(), a)?)
    }

    /// Utterances with the annotations of each requested source (all
    /// sources when `sources` is empty).
    pub fn chat_view(&self, session_id: &str, sources: &[LabelSource]) -> Result<ChatView> {
        let s = self.session(session_id)?;
        let anns: Vec<Annotation> = self.store().query_all_as(
            Collection::Annotations,
            &Filter::new().eq("session_id", session_id),
            Access::Standard,
        )?;
        let mut rows: Vec<ChatRow> = s
            .utterances
            .iter()
            .map(|u| ChatRow {
                index: u.index,
                speaker_id: u.speaker_id.clone(),
                timestamp: u.timestamp,
                text: u.text.clone(),
                annotations: BTreeMap::new(),
            })
            .collect();
        let mut seen = std::collections::BTreeSet::new();
        for a in anns {
            if !sources.is_empty() && !sources.contains(&a.source) {
                continue;
            }
            if let Some(row) = rows.get_mut(a.utterance_index) {
                let key = a.source.to_string();
                seen.insert(key.clone());
                row.annotations.insert(key, a.document);
            }
        }
        let sources =
            if sources.is_empty() { seen.into_iter().collect() } else { sources.iter().map(ToString::to_string).collect() };
        Ok(ChatView { session_id: s.id, title: s.title, deid_status: s.deid_status, sources, utterances: rows })
    }

    // -- run-sets ----------------------------------------------------------

    pub fn create_runset(
        &self,
        name: &str,
        members: Vec<LabelSource>,
        reference: Option<LabelSource>,
        target_field: &str,
    ) -> Result<RunSet> {
        let rs = RunSet::new(name, members, reference, target_field)?;
        for m in &rs.members {
            if let LabelSource::Run { run_id } = m {
                self.run(run_id.as_str())?;
            }
        }
        self.store().put_as(Collection::Runsets, rs.id.as_str(), &rs)?;
        Ok(rs)
    }

    pub fn runset(&self, id: &str) -> Result<RunSet> {
        self.load(Collection::Runsets, id, "run-set")
    }

    /// Computes the report, or returns the cached one when no member's
    /// annotations changed since.
    pub fn evaluation(&self, runset_id: &str) -> Result<EvaluationReport> {
        let rs = self.runset(runset_id)?;
        let fingerprint = evalengine::annotations_fingerprint(&rs, self.store())?;
        let key = format!("eval:{runset_id}");
        if let Some(cached) = self.store().get_as::<CachedReport>(Collection::Reports, &key, Access::Standard)? {
            if cached.fingerprint == fingerprint {
                return Ok(cached.report);
            }
        }
        let report = evalengine::evaluate_runset(&rs, self.store())?;
        self.store().put_as(Collection::Reports, &key, &CachedReport { fingerprint, report: report.clone() })?;
        Ok(report)
    }

    /// One CSV file of the report; see [`evalengine::report_csv`] for names.
    pub fn evaluation_csv(&self, runset_id: &str, matrix: &str) -> Result<String> {
        let report = self.evaluation(runset_id)?;
        let mut files = evalengine::report_csv(&report);
        let names: Vec<String> = files.keys().cloned().collect();
        files.remove(matrix).ok_or_else(|| {
            WorkbenchError::Invalid(format!("unknown matrix `{matrix}`; available: {}", names.join(", ")))
        })
    }

    pub fn models(&self) -> Vec<ModelInfo> {
        let mut out: Vec<ModelInfo> =
            self.config.gateway.models.iter().map(|m| ModelInfo { id: m.clone(), provider: "gateway".into() }).collect();
        out.push(ModelInfo { id: format!("{MOCK_MODEL_PREFIX}[-<name>]"), provider: "synthetic".into() });
        out
    }
}
