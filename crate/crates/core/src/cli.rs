//! The `sandpiper` command line. Exit status is 0 on success, 1 when the
//! operation fails and 2 on a usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::app::{HumanLabel, RunRequest, Workbench};
use crate::config::Config;
use crate::deid::ReviewDecision;
use crate::evalengine;
use crate::model::{CodingSchema, Granularity, LabelSource, PromptVersionRef, Run, SessionId, SourceFormat};
use crate::orchestrator::RunItem;
use crate::store::{Access, Collection, Filter, Page};

#[derive(Debug, Parser)]
#[command(name = "sandpiper", version, about = "Schema-constrained LLM annotation of transcripts")]
pub struct Cli {
    /// TOML config file (default: ./sandpiper.toml when present).
    #[arg(long, global = true, env = "SANDPIPER_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store directory; overrides the config. `:memory:` keeps nothing.
    #[arg(long, global = true)]
    pub store: Option<String>,
    /// Print machine-readable JSON instead of a summary.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import transcript files, one session per file.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// plaintext, csv or session-json. Inferred from the extension when omitted.
        #[arg(long)]
        format: Option<SourceFormat>,
        /// Session title (default: the file stem).
        #[arg(long)]
        title: Option<String>,
    },
    /// Detect and mask PII in a raw session.
    #[command(visible_alias = "deidentify")]
    Mask {
        session: String,
        /// File with one roster name per line.
        #[arg(long)]
        roster: Option<PathBuf>,
    },
    /// Show the verification report of a masked session.
    DeidReport { session: String },
    /// Record a reviewer decision on a masked session.
    DeidVerify {
        session: String,
        #[arg(long, conflicts_with = "reject", required_unless_present = "reject")]
        approve: bool,
        #[arg(long)]
        reject: bool,
        #[arg(long)]
        notes: Option<String>,
    },
    #[command(subcommand)]
    Prompt(PromptCommand),
    /// Create a run and execute it to completion.
    Run(RunArgs),
    /// Record a human label for one utterance.
    Label {
        session: String,
        utterance: usize,
        #[arg(long)]
        coder: String,
        /// Prompt version whose schema the label follows, as `<id>@<version>`.
        #[arg(long)]
        prompt: PromptVersionRef,
        /// Label document as JSON, or `@file`.
        #[arg(long)]
        document: String,
    },
    #[command(subcommand)]
    Runset(RunsetCommand),
    /// Evaluate a run-set.
    Eval {
        runset: String,
        /// Also write one CSV file per matrix into this directory.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// List documents of a collection.
    List {
        collection: Collection,
        /// Equality filter `field=value`; repeatable.
        #[arg(long = "where", value_parser = parse_kv)]
        filters: Vec<(String, String)>,
        #[arg(long, default_value_t = 100)]
        limit: usize,
        #[arg(long, default_value_t = 0)]
        offset: usize,
    },
    /// Print one document.
    Get { collection: Collection, id: String },
    /// Serve the REST API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Write every collection as JSON lines into a directory.
    Dump { dir: PathBuf },
    /// Load a directory written by `dump`.
    Load { dir: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum PromptCommand {
    /// Create a prompt with its first version.
    Create {
        #[arg(long)]
        name: String,
        /// Instruction text, or `@file`.
        #[arg(long)]
        instructions: String,
        /// Schema JSON, or `@file`.
        #[arg(long)]
        schema: String,
    },
    /// Append a new version to an existing prompt.
    Version {
        prompt: String,
        #[arg(long)]
        instructions: String,
        #[arg(long)]
        schema: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum RunsetCommand {
    Create {
        #[arg(long)]
        name: String,
        /// `run:<id>` or `human:<coder>`; repeatable.
        #[arg(long = "member", required = true)]
        members: Vec<LabelSource>,
        #[arg(long)]
        reference: Option<LabelSource>,
        #[arg(long)]
        target_field: String,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `<prompt-id>@<version>`.
    #[arg(long)]
    pub prompt: PromptVersionRef,
    #[arg(long)]
    pub model: String,
    #[arg(long = "session", required = true)]
    pub sessions: Vec<String>,
    #[arg(long, default_value = "utterance")]
    pub granularity: Granularity,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub context_window: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=').map(|(k, v)| (k.to_owned(), v.to_owned())).ok_or_else(|| format!("`{s}` is not field=value"))
}

/// A failed command: message plus exit status.
#[derive(Debug)]
pub struct Failure {
    pub status: i32,
    pub code: String,
    pub message: String,
    pub details: Option<Value>,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { status: 2, code: "usage".into(), message: message.into(), details: None }
    }

    fn io(what: &Path, e: std::io::Error) -> Self {
        Self { status: 1, code: "io_error".into(), message: format!("{}: {e}", what.display()), details: None }
    }
}

impl From<crate::app::WorkbenchError> for Failure {
    fn from(e: crate::app::WorkbenchError) -> Self {
        Self { status: 1, code: e.code().into(), message: e.to_string(), details: e.details() }
    }
}

impl From<crate::config::ConfigError> for Failure {
    fn from(e: crate::config::ConfigError) -> Self {
        Self { status: 1, code: "config_error".into(), message: e.to_string(), details: None }
    }
}

impl From<crate::store::StoreError> for Failure {
    fn from(e: crate::store::StoreError) -> Self {
        crate::app::WorkbenchError::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

/// `@path` reads the file, anything else is taken literally.
fn text_arg(v: &str) -> Result<String, Failure> {
    match v.strip_prefix('@') {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::io(Path::new(p), e)),
        None => Ok(v.to_owned()),
    }
}

fn json_arg<T: serde::de::DeserializeOwned>(what: &str, v: &str) -> Result<T, Failure> {
    serde_json::from_str(&text_arg(v)?).map_err(|e| Failure::usage(format!("{what}: {e}")))
}

fn infer_format(path: &Path) -> SourceFormat {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => SourceFormat::Csv,
        Some("json") => SourceFormat::SessionJson,
        _ => SourceFormat::Plaintext,
    }
}

struct Out<'a> {
    w: &'a mut dyn Write,
    json: bool,
}

impl Out<'_> {
    fn emit<T: Serialize>(&mut self, value: &T, summary: impl FnOnce() -> String) {
        let text = if self.json {
            serde_json::to_string_pretty(value).expect("serializable output")
        } else {
            summary()
        };
        let _ = writeln!(self.w, "{text}");
    }

    fn pretty<T: Serialize>(&mut self, value: &T) {
        let _ = writeln!(self.w, "{}", serde_json::to_string_pretty(value).expect("serializable output"));
    }
}

fn run_summary(run: &Run) -> String {
    let state = serde_json::to_value(run.state).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    let mut s = format!(
        "run {} {state}: {}/{} succeeded, {} failed",
        run.id, run.counts.succeeded, run.counts.total_items, run.counts.failed_items
    );
    if let Some(e) = &run.error {
        s.push_str(&format!(" ({e})"));
    }
    s
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn eval_summary(r: &evalengine::EvaluationReport) -> String {
    let mut s = format!("run-set {} on `{}`\n", r.runset_id, r.target_field);
    for (i, src) in r.sources.iter().enumerate() {
        s.push_str(&format!("  [{i}] {src} ({} items)\n", r.labeled_items[i]));
    }
    s.push_str("kappa\n");
    for (i, row) in r.kappa_matrix.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| fmt_cell(*v)).collect();
        s.push_str(&format!("  [{i}] {}\n", cells.join("  ")));
    }
    for m in &r.per_code {
        match &m.stats {
            Some(pr) => s.push_str(&format!(
                "{}: macro precision {:.3}, macro recall {:.3}\n",
                m.source, pr.macro_precision, pr.macro_recall
            )),
            None => s.push_str(&format!("{}: no items shared with the reference\n", m.source)),
        }
    }
    s.trim_end().to_owned()
}

fn open(cli: &Cli) -> Result<Workbench, Failure> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(s) = &cli.store {
        cfg.store_path = s.clone();
    }
    Ok(Workbench::open(cfg)?)
}

fn execute(cli: Cli, out: &mut Out<'_>, err: &mut (dyn Write + Send)) -> CmdResult {
    let wb = open(&cli)?;
    match cli.command {
        Command::Ingest { files, format, title } => {
            if title.is_some() && files.len() > 1 {
                return Err(Failure::usage("--title applies to a single file"));
            }
            let mut outcomes = Vec::new();
            for f in &files {
                let bytes = std::fs::read(f).map_err(|e| Failure::io(f, e))?;
                let fmt = format.unwrap_or_else(|| infer_format(f));
                let t = title.clone().unwrap_or_else(|| {
                    f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "untitled".into())
                });
                outcomes.push(wb.import(&bytes, fmt, &t)?);
            }
            out.emit(&outcomes, || {
                outcomes
                    .iter()
                    .map(|o| {
                        format!(
                            "{} {:?}: {} utterances, {} lines skipped, {} warnings",
                            o.session.id,
                            o.session.title,
                            o.session.utterances.len(),
                            o.report.lines_skipped.len(),
                            o.report.warnings.len()
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Mask { session, roster } => {
            let roster = match roster {
                Some(p) => std::fs::read_to_string(&p)
                    .map_err(|e| Failure::io(&p, e))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_owned)
                    .collect(),
                None => Vec::new(),
            };
            let o = wb.deidentify(&session, roster)?;
            out.emit(&o, || {
                let total: usize = o.report.counts_by_category.values().sum();
                let clean = if o.report.is_clean() { "clean" } else { "NEEDS REVIEW" };
                format!("{} masked: {total} replacement(s), verification {clean}", o.session.id)
            });
        }
        Command::DeidReport { session } => {
            let r = wb.deid_report(&session)?;
            out.pretty(&r);
        }
        Command::DeidVerify { session, approve, reject: _, notes } => {
            let d = if approve { ReviewDecision::Approve { notes } } else { ReviewDecision::Reject { notes } };
            let s = wb.deid_review(&session, &d)?;
            out.emit(&s, || {
                let st = serde_json::to_value(s.deid_status).ok().and_then(|v| v.as_str().map(str::to_owned));
                format!("{} is now {}", s.id, st.unwrap_or_default())
            });
        }
        Command::Prompt(PromptCommand::Create { name, instructions, schema }) => {
            let schema: CodingSchema = json_arg("schema", &schema)?;
            let p = wb.create_prompt(&name, &text_arg(&instructions)?, schema)?;
            out.emit(&p, || format!("prompt {} version {}", p.id, p.versions.len()));
        }
        Command::Prompt(PromptCommand::Version { prompt, instructions, schema }) => {
            let schema: CodingSchema = json_arg("schema", &schema)?;
            let p = wb.add_prompt_version(&prompt, &text_arg(&instructions)?, schema)?;
            out.emit(&p, || format!("prompt {} version {}", p.id, p.versions.len()));
        }
        Command::Run(a) => {
            let req = RunRequest {
                prompt_version: a.prompt,
                model: a.model,
                sessions: a.sessions.into_iter().map(SessionId::from).collect(),
                granularity: a.granularity,
                max_retries: a.max_retries,
                context_window: a.context_window,
                temperature: a.temperature,
                concurrency: a.concurrency,
                max_tokens: a.max_tokens,
            };
            let run = wb.create_run(&req)?;
            let err = std::sync::Mutex::new(err);
            let progress = |r: &Run, item: &RunItem| {
                let mut e = err.lock().expect("stderr lock");
                let _ = writeln!(e, "[{}/{}] {} {:?}", r.counts.processed(), r.counts.total_items, item.id, item.outcome);
            };
            let run = wb.execute_run(run.id.as_str(), Some(&progress))?;
            out.emit(&run, || run_summary(&run));
        }
        Command::Label { session, utterance, coder, prompt, document } => {
            let document: Value = json_arg("document", &document)?;
            let label =
                HumanLabel { session_id: session.into(), utterance_index: utterance, coder_id: coder, prompt_version: prompt, document };
            let a = wb.add_human_annotation(&label)?;
            out.emit(&a, || format!("annotation {}", a.id));
        }
        Command::Runset(RunsetCommand::Create { name, members, reference, target_field }) => {
            let rs = wb.create_runset(&name, members, reference, &target_field)?;
            out.emit(&rs, || format!("run-set {} with {} member(s)", rs.id, rs.members.len()));
        }
        Command::Eval { runset, csv } => {
            let r = wb.evaluation(&runset)?;
            if let Some(dir) = csv {
                std::fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
                for (name, text) in evalengine::report_csv(&r) {
                    let p = dir.join(format!("{name}.csv"));
                    std::fs::write(&p, text).map_err(|e| Failure::io(&p, e))?;
                }
            }
            out.emit(&r, || eval_summary(&r));
        }
        Command::List { collection, filters, limit, offset } => {
            let filter = filters.into_iter().fold(Filter::new(), |f, (k, v)| f.eq(k, v));
            let page = wb.list(collection, &filter, Page { offset, limit })?;
            out.emit(&page, || {
                let mut lines: Vec<String> = page
                    .documents
                    .iter()
                    .map(|d| {
                        let id = d.get("id").and_then(Value::as_str).unwrap_or("?");
                        let label = ["title", "name", "state", "model_id"]
                            .iter()
                            .find_map(|k| d.get(*k).and_then(Value::as_str))
                            .unwrap_or("");
                        format!("{id}\t{label}")
                    })
                    .collect();
                lines.push(format!("({} of {})", page.documents.len(), page.total));
                lines.join("\n")
            });
        }
        Command::Get { collection, id } => {
            if collection.is_protected() {
                return Err(crate::app::WorkbenchError::Forbidden.into());
            }
            let doc = wb
                .store()
                .get(collection, &id, Access::Standard)?
                .ok_or(crate::app::WorkbenchError::NotFound { kind: "document", id })?;
            out.pretty(&doc);
        }
        Command::Serve { bind, port } => {
            let cfg = &wb.config().server;
            let addr = format!("{}:{}", bind.as_deref().unwrap_or(&cfg.bind_address), port.unwrap_or(cfg.port));
            let addr: std::net::SocketAddr = addr.parse().map_err(|_| Failure::usage(format!("bad address `{addr}`")))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::io(Path::new("tokio runtime"), e))?;
            rt.block_on(crate::api::serve(Arc::new(wb), addr)).map_err(|e| Failure::io(Path::new("server"), e))?;
        }
        Command::Dump { dir } => {
            let counts = wb.raw_store().dump(&dir)?;
            out.emit(&counts, || format!("dumped {} document(s) to {}", counts.values().sum::<usize>(), dir.display()));
        }
        Command::Load { dir } => {
            let counts = wb.raw_store().load(&dir)?;
            out.emit(&counts, || format!("loaded {} document(s) from {}", counts.values().sum::<usize>(), dir.display()));
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let status = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if status == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return status;
        }
    };
    let json = cli.json;
    let mut out = Out { w: stdout, json };
    match execute(cli, &mut out, stderr) {
        Ok(()) => 0,
        Err(f) => {
            if json {
                let body = serde_json::json!({ "code": f.code, "message": f.message, "details": f.details });
                let _ = writeln!(stderr, "{body}");
            } else {
                let _ = writeln!(stderr, "error: {}", f.message);
            }
            f.status
        }
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}
