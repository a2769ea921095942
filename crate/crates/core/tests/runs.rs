mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sandpiper::app::RunRequest;
use sandpiper::gateway::{focal_text, ChatProvider, ChatReply, ChatRequest, GatewayError, MockProvider, TokenUsage};
use sandpiper::orchestrator::{ItemOutcome, RunItem};
use sandpiper::store::{Access, Collection, Filter};
use sandpiper::{Annotation, Granularity, PromptVersionRef, Run, RunState, SourceFormat, Workbench};

const GOOD: &str = r#"{"move":"question"}"#;

fn request(wb: &Workbench, sessions: Vec<sandpiper::SessionId>, model: &str) -> RunRequest {
    let p = wb.create_prompt("moves", "Label the move.", common::moves_schema()).unwrap();
    RunRequest {
        prompt_version: PromptVersionRef { prompt_id: p.id, version: 1 },
        model: model.into(),
        sessions,
        granularity: Granularity::Utterance,
        max_retries: Some(1),
        context_window: None,
        temperature: None,
        concurrency: Some(3),
        max_tokens: None,
    }
}

fn import(wb: &Workbench, lines: &[&str]) -> sandpiper::SessionId {
    let text: String = lines.iter().enumerate().map(|(i, l)| format!("S{}: {l}\n", i % 2)).collect();
    wb.import(text.as_bytes(), SourceFormat::Plaintext, "t").unwrap().session.id
}

fn items(wb: &Workbench, run: &Run) -> Vec<RunItem> {
    wb.store().query_all_as(Collection::RunItems, &Filter::new().eq("run_id", run.id.as_str()), Access::Standard).unwrap()
}

/// Answers `GOOD` except for utterances containing "unreachable".
struct Flaky;

impl ChatProvider for Flaky {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        if focal_text(req).contains("unreachable") {
            return Err(GatewayError::TransportFailure { attempts: 3, message: "HTTP 503".into() });
        }
        Ok(ChatReply { content: GOOD.into(), token_usage: TokenUsage::default(), latency_ms: 0 })
    }
    fn is_mock(&self) -> bool {
        true
    }
    fn models(&self) -> Vec<String> {
        vec!["mock".into()]
    }
}

#[test]
fn one_bad_item_does_not_sink_the_run() {
    let mock = MockProvider::new([GOOD]).unwrap().route("garbled", ["no json here"]).unwrap();
    let wb = common::workbench_with(Arc::new(mock));
    let s = import(&wb, &["fine", "garbled reply please", "also fine", "last"]);
    let run = wb.create_run(&request(&wb, vec![s], "mock")).unwrap();
    let run = wb.execute_run(run.id.as_str(), None).unwrap();
    assert_eq!(run.state, RunState::CompletedWithErrors);
    assert_eq!((run.counts.succeeded, run.counts.failed_items, run.counts.total_items), (3, 1, 4));
    let bad: Vec<_> = items(&wb, &run).into_iter().filter(|i| i.outcome == ItemOutcome::FailedSchema).collect();
    assert_eq!(bad.len(), 1);
    assert_eq!(bad[0].utterance_index, Some(1));
    assert_eq!(bad[0].attempts.len(), 2, "one retry then give up");
    let anns: Vec<Annotation> = wb.store().query_all_as(Collection::Annotations, &Filter::new(), Access::Standard).unwrap();
    assert_eq!(anns.len(), 3);
    assert!(anns.iter().all(|a| a.utterance_index != 1));
}

#[test]
fn transport_failures_are_recorded_without_reprompting() {
    let wb = common::workbench_with(Arc::new(Flaky));
    let s = import(&wb, &["ok", "unreachable", "ok"]);
    let run = wb.create_run(&request(&wb, vec![s], "mock")).unwrap();
    let run = wb.execute_run(run.id.as_str(), None).unwrap();
    assert_eq!(run.state, RunState::CompletedWithErrors);
    let failed: Vec<_> = items(&wb, &run).into_iter().filter(|i| i.outcome == ItemOutcome::FailedTransport).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].attempts.len(), 1);
}

#[test]
fn fatal_gateway_errors_fail_the_run() {
    struct Locked;
    impl ChatProvider for Locked {
        fn complete(&self, _: &ChatRequest) -> Result<ChatReply, GatewayError> {
            Err(GatewayError::AuthFailure(401))
        }
        fn is_mock(&self) -> bool {
            true
        }
        fn models(&self) -> Vec<String> {
            vec![]
        }
    }
    let wb = common::workbench_with(Arc::new(Locked));
    let s = import(&wb, &["a", "b", "c", "d", "e", "f"]);
    let run = wb.create_run(&request(&wb, vec![s], "mock")).unwrap();
    let run = wb.execute_run(run.id.as_str(), None).unwrap();
    assert_eq!(run.state, RunState::Failed);
    assert!(run.error.unwrap().contains("401"));
}

#[test]
fn synthetic_runs_are_deterministic() {
    let docs = |wb: &Workbench| {
        let s = import(wb, &["what is a fraction?", "part of a whole", "right", "and a half?"]);
        let run = wb.create_run(&request(wb, vec![s], "mock-model")).unwrap();
        let run = wb.execute_run(run.id.as_str(), None).unwrap();
        assert_eq!(run.state, RunState::Completed);
        let mut anns: Vec<Annotation> = wb.store().query_all_as(Collection::Annotations, &Filter::new(), Access::Standard).unwrap();
        anns.sort_by_key(|a| a.utterance_index);
        anns.into_iter().map(|a| a.document).collect::<Vec<_>>()
    };
    assert_eq!(docs(&common::workbench()), docs(&common::workbench()));
}

#[test]
fn progress_is_monotone_and_complete() {
    let wb = common::workbench();
    let s = import(&wb, &["a", "b", "c", "d", "e", "f", "g", "h"]);
    let run = wb.create_run(&request(&wb, vec![s], "mock")).unwrap();
    let seen = Mutex::new(Vec::new());
    let cb = |r: &Run, _: &RunItem| seen.lock().unwrap().push(r.counts.processed());
    let run = wb.execute_run(run.id.as_str(), Some(&cb)).unwrap();
    let seen = seen.into_inner().unwrap();
    assert_eq!(seen.len(), 8);
    assert!(seen.windows(2).all(|w| w[0] < w[1]), "{seen:?}");
    assert_eq!(run.counts.processed(), 8);
}

#[test]
fn a_run_executes_once() {
    let wb = common::workbench();
    let s = import(&wb, &["a"]);
    let run = wb.create_run(&request(&wb, vec![s], "mock")).unwrap();
    wb.execute_run(run.id.as_str(), None).unwrap();
    let again = wb.execute_run(run.id.as_str(), None).unwrap_err();
    assert_eq!(again.code(), "conflict");
}

#[test]
fn cancelling_a_queued_run_is_immediate() {
    let wb = common::workbench();
    let s = import(&wb, &["a", "b"]);
    let run = wb.create_run(&request(&wb, vec![s], "mock")).unwrap();
    assert_eq!(wb.cancel_run(run.id.as_str()).unwrap().state, RunState::Cancelled);
    assert!(wb.execute_run(run.id.as_str(), None).is_err());
}

#[test]
fn cancelling_a_running_run_stops_before_the_next_item() {
    struct Slow(AtomicUsize);
    impl ChatProvider for Slow {
        fn complete(&self, _: &ChatRequest) -> Result<ChatReply, GatewayError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            Ok(ChatReply { content: GOOD.into(), token_usage: TokenUsage::default(), latency_ms: 20 })
        }
        fn is_mock(&self) -> bool {
            true
        }
        fn models(&self) -> Vec<String> {
            vec![]
        }
    }
    let slow = Arc::new(Slow(AtomicUsize::new(0)));
    let wb = Arc::new(common::workbench_with(slow.clone()));
    let lines: Vec<String> = (0..40).map(|i| format!("line {i}")).collect();
    let s = import(&wb, &lines.iter().map(String::as_str).collect::<Vec<_>>());
    let mut req = request(&wb, vec![s], "mock");
    req.concurrency = Some(1);
    let run = wb.create_run(&req).unwrap();
    let handle = wb.spawn_run(run.id.as_str());
    while slow.0.load(Ordering::SeqCst) < 3 {
        std::thread::sleep(Duration::from_millis(2));
    }
    wb.cancel_run(run.id.as_str()).unwrap();
    handle.join().unwrap();
    let done = wb.run(run.id.as_str()).unwrap();
    assert_eq!(done.state, RunState::Cancelled);
    assert!(done.counts.processed() < 40, "{:?}", done.counts);
    assert_eq!(slow.0.load(Ordering::SeqCst) as u64, done.counts.processed());
}

#[test]
fn session_granularity_annotates_every_utterance() {
    let wb = common::workbench();
    let s = import(&wb, &["a", "b", "c"]);
    let mut req = request(&wb, vec![s], "mock");
    req.granularity = Granularity::Session;
    let run = wb.create_run(&req).unwrap();
    let run = wb.execute_run(run.id.as_str(), None).unwrap();
    assert_eq!(run.state, RunState::Completed, "{:?}", run.error);
    let anns: Vec<Annotation> = wb.store().query_all_as(Collection::Annotations, &Filter::new(), Access::Standard).unwrap();
    assert_eq!(anns.len(), 3);
}

#[test]
fn prompt_versions_freeze_on_first_run() {
    let wb = common::workbench();
    let s = import(&wb, &["a"]);
    let req = request(&wb, vec![s], "mock");
    wb.create_run(&req).unwrap();
    let p = wb.prompt(req.prompt_version.prompt_id.as_str()).unwrap();
    assert!(p.versions[0].frozen);
    let p = wb.add_prompt_version(p.id.as_str(), "Label it again.", common::moves_schema()).unwrap();
    assert_eq!(p.versions.len(), 2);
    assert!(!p.versions[1].frozen);
}
