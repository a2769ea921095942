//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use sandpiper::api::{self, ApiError};
use sandpiper::app::{HumanLabel, RunRequest, Workbench};
use sandpiper::deid::{self, DetectionRuleSet};
use sandpiper::evalengine::{self, cohen_kappa, precision_recall};
use sandpiper::gateway::{ChatProvider, ChatReply, ChatRequest, GatewayError, MockProvider};
use sandpiper::ingest;
use sandpiper::orchestrator::{ItemOutcome, RunItem};
use sandpiper::schema;
use sandpiper::store::{Access, Collection, Filter, Store};
use sandpiper::{Annotation, DeidStatus, Granularity, LabelSource, PromptVersionRef, Run, RunState, SourceFormat};
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------

fn kappa_exactness() -> Outcome {
    let a: Vec<String> = ["q", "q", "e", "e"].map(String::from).to_vec();
    let b: Vec<String> = ["q", "e", "e", "e"].map(String::from).to_vec();
    let pairs: Vec<(String, String)> = a.iter().cloned().zip(b.iter().cloned()).collect();
    let s = cohen_kappa(&pairs).ok_or("no result")?;
    let (po, pe, k) = common::kappa_oracle(&a, &b);
    ensure!(close(s.observed_agreement, 0.75, 1e-12), "p_o = {}", s.observed_agreement);
    ensure!(close(s.expected_agreement, 0.5, 1e-12), "p_e = {}", s.expected_agreement);
    ensure!(close(s.kappa, 0.5, 1e-12), "kappa = {}", s.kappa);
    ensure!(close(po, 0.75, 1e-12) && close(pe, 0.5, 1e-12) && close(k, 0.5, 1e-12), "oracle disagrees: {po} {pe} {k}");
    Ok(format!("p_o={} p_e={} kappa={}", s.observed_agreement, s.expected_agreement, s.kappa))
}

fn metric_oracle_equivalence() -> Outcome {
    let mut r = common::rng(0x5eed_0001);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let (a, b) = common::random_labels(&mut r, 200, 6);
        let pairs: Vec<(String, String)> = a.iter().cloned().zip(b.iter().cloned()).collect();
        let s = cohen_kappa(&pairs).ok_or("no result")?;
        let (po, pe, k) = common::kappa_oracle(&a, &b);
        let d = (s.kappa - k).abs().max((s.observed_agreement - po).abs()).max((s.expected_agreement - pe).abs());
        worst = worst.max(d);
        ensure!(d <= 1e-9, "case {case}: kappa {} vs oracle {k}", s.kappa);
        ensure!((-1.0..=1.0).contains(&s.kappa), "case {case}: kappa {} out of range", s.kappa);

        // bijective relabelling
        let rename = |x: &String| format!("renamed_{}", 9 - x[1..].parse::<u32>().unwrap());
        let relabelled: Vec<(String, String)> = pairs.iter().map(|(x, y)| (rename(x), rename(y))).collect();
        let s2 = cohen_kappa(&relabelled).ok_or("no result")?;
        ensure!(close(s.kappa, s2.kappa, 1e-9), "case {case}: relabelling moved kappa {} -> {}", s.kappa, s2.kappa);

        let pr = precision_recall(&pairs).ok_or("no pr")?;
        let (oracle, mp, mr) = common::pr_oracle(&pairs);
        ensure!(pr.per_code.len() == oracle.len(), "case {case}: code sets differ");
        for (code, o) in &oracle {
            let got = pr.per_code.get(code).ok_or_else(|| format!("case {case}: missing code {code}"))?;
            ensure!(
                close(got.precision, o.precision, 1e-9) && close(got.recall, o.recall, 1e-9) && got.support == o.support,
                "case {case}: code {code}: {got:?} vs {o:?}"
            );
        }
        ensure!(close(pr.macro_precision, mp, 1e-9) && close(pr.macro_recall, mr, 1e-9), "case {case}: macro averages");
    }
    Ok(format!("1000 pairs, max |delta| = {worst:.1e}"))
}

fn orchestrator_loop_contract() -> Outcome {
    let schema = common::moves_schema();
    let bad = ["not json at all", r#"{"move":"shout"}"#, r#"{"confidence":0.3}"#, r#"{"move":"question","confidence":7}"#];
    let good = r#"{"move":"question","confidence":0.5}"#;
    let mut summary = Vec::new();
    for k in 0..=4usize {
        let mut script: Vec<&str> = bad[..k.min(4)].to_vec();
        script.push(good);
        let mock = Arc::new(MockProvider::new(script).unwrap());
        let wb = common::workbench_with(mock.clone());
        let s = wb.import(b"Tutor: what is a half of ten?\n", SourceFormat::Plaintext, "one").map_err(|e| e.to_string())?.session;
        let p = wb.create_prompt("moves", "Label the tutoring move.", schema.clone()).map_err(|e| e.to_string())?;
        let req = RunRequest {
            prompt_version: PromptVersionRef { prompt_id: p.id.clone(), version: 1 },
            model: "mock".into(),
            sessions: vec![s.id.clone()],
            granularity: Granularity::Utterance,
            max_retries: Some(3),
            context_window: None,
            temperature: None,
            concurrency: Some(1),
            max_tokens: None,
        };
        let run = wb.create_run(&req).map_err(|e| e.to_string())?;
        let run = wb.execute_run(run.id.as_str(), None).map_err(|e| e.to_string())?;
        let requests = mock.requests();
        let anns: Vec<Annotation> =
            wb.store().query_all_as(Collection::Annotations, &Filter::new(), Access::Standard).map_err(|e| e.to_string())?;
        let items: Vec<RunItem> = wb
            .store()
            .query_all_as(Collection::RunItems, &Filter::new().eq("run_id", run.id.as_str()), Access::Standard)
            .map_err(|e| e.to_string())?;
        ensure!(items.len() == 1, "k={k}: {} run items", items.len());
        if k <= 3 {
            ensure!(requests.len() == k + 1, "k={k}: {} provider calls, expected {}", requests.len(), k + 1);
            ensure!(anns.len() == 1, "k={k}: {} annotations persisted", anns.len());
            let errs = schema::validate_value(&anns[0].document, &schema, "");
            ensure!(errs.is_empty(), "k={k}: persisted annotation has errors {errs:?}");
            ensure!(items[0].outcome == ItemOutcome::Succeeded, "k={k}: outcome {:?}", items[0].outcome);
            for j in 1..=k {
                let expected = schema::render_feedback(&schema::validate(bad[j - 1], &schema), &schema).unwrap();
                let last = requests[j].messages.last().unwrap();
                ensure!(last.content.contains(&expected), "k={k}: request {} lacks the feedback text", j + 1);
                ensure!(
                    requests[j].messages.iter().any(|m| m.content == bad[j - 1]),
                    "k={k}: request {} does not replay the rejected reply",
                    j + 1
                );
            }
            ensure!(
                !requests[0].messages.iter().any(|m| m.content.contains("did not conform")),
                "k={k}: first request already carries feedback"
            );
        } else {
            ensure!(requests.len() == 4, "k=4: {} provider calls", requests.len());
            ensure!(items[0].outcome == ItemOutcome::FailedSchema, "k=4: outcome {:?}", items[0].outcome);
            ensure!(items[0].attempts.len() == 4, "k=4: {} attempts", items[0].attempts.len());
            ensure!(anns.is_empty(), "k=4: {} annotations persisted", anns.len());
            ensure!(run.counts.failed_items == 1, "k=4: counts {:?}", run.counts);
        }
        summary.push(format!("k={k}:{}", requests.len()));
    }
    Ok(format!("calls {}", summary.join(" ")))
}

fn store_safety() -> Outcome {
    let mut r = common::rng(0x5eed_0002);
    let schemas: Vec<_> = (0..20).map(|i| common::random_schema(&mut r, i)).collect();
    let slot: Arc<Mutex<Arc<dyn ChatProvider>>> = Arc::new(Mutex::new(Arc::new(MockProvider::new(["{}"]).unwrap())));
    let resolver_slot = slot.clone();
    let wb = Workbench::with_store(common::config(), Store::in_memory())
        .map_err(|e| e.to_string())?
        .with_provider_resolver(Arc::new(move |_, _| Ok(resolver_slot.lock().unwrap().clone())));
    let prompts: Vec<_> = schemas
        .iter()
        .enumerate()
        .map(|(i, s)| wb.create_prompt(&format!("p{i}"), "Label the utterance.", s.clone()).unwrap())
        .collect();
    let (mut succeeded, mut failed) = (0u64, 0u64);
    for script_no in 0..500 {
        let which = script_no % 20;
        let schema = &schemas[which];
        let len = r.random_range_usize(1, 12);
        let script: Vec<String> = (0..len).map(|_| common::random_reply(&mut r, schema)).collect();
        *slot.lock().unwrap() = Arc::new(MockProvider::new(script).unwrap());
        let n = r.random_range_usize(1, 6);
        let text: String = (0..n).map(|i| format!("S{}: {}\n", i % 2, common::random_text(&mut r, false))).collect();
        let s = wb.import(text.as_bytes(), SourceFormat::Plaintext, "fuzz").map_err(|e| e.to_string())?.session;
        let req = RunRequest {
            prompt_version: PromptVersionRef { prompt_id: prompts[which].id.clone(), version: 1 },
            model: "mock".into(),
            sessions: vec![s.id],
            granularity: Granularity::Utterance,
            max_retries: Some(r.random_range_usize(0, 3) as u32),
            context_window: None,
            temperature: None,
            concurrency: Some(2),
            max_tokens: None,
        };
        let run = wb.create_run(&req).map_err(|e| e.to_string())?;
        let run = wb.execute_run(run.id.as_str(), None).map_err(|e| e.to_string())?;
        succeeded += run.counts.succeeded;
        failed += run.counts.failed_items;
    }
    let anns: Vec<Annotation> =
        wb.store().query_all_as(Collection::Annotations, &Filter::new(), Access::Standard).map_err(|e| e.to_string())?;
    let by_prompt: BTreeMap<String, &sandpiper::CodingSchema> =
        prompts.iter().zip(&schemas).map(|(p, s)| (p.id.to_string(), s)).collect();
    for a in &anns {
        let schema = by_prompt[a.prompt_version.prompt_id.as_str()];
        let errs = schema::validate_value(&a.document, schema, "");
        ensure!(errs.is_empty(), "stored annotation {} violates its schema: {errs:?}", a.id);
    }
    ensure!(anns.len() as u64 == succeeded, "{} stored vs {succeeded} succeeded", anns.len());
    ensure!(succeeded > 0 && failed > 0, "degenerate fuzz: {succeeded} ok, {failed} failed");
    Ok(format!("500 scripts x 20 schemas: {} stored documents all valid, {failed} items rejected", anns.len()))
}

trait RangeExt {
    fn random_range_usize(&mut self, lo: usize, hi: usize) -> usize;
}

impl RangeExt for rand::rngs::StdRng {
    fn random_range_usize(&mut self, lo: usize, hi: usize) -> usize {
        rand::Rng::random_range(self, lo..=hi)
    }
}

fn deid_soundness() -> Outcome {
    let corpus = common::pii_corpus(0x5eed_0003);
    for n in common::SEED_GIVEN.iter().chain(common::SEED_SURNAMES).chain(common::CUE_NAMES) {
        ensure!(
            !deid::GIVEN_NAMES.contains(n) && !deid::SURNAMES.contains(n),
            "fixture name {n} is also a surrogate"
        );
    }
    let rules = DetectionRuleSet::with_roster(corpus.roster.clone());
    let seed = b"acceptance-seed";
    let (mut pattern_total, mut pattern_leaks) = (0usize, 0usize);
    let (mut names_total, mut names_replaced) = (0usize, 0usize);
    let (mut repeated, mut consistent) = (0usize, 0usize);
    let mut seeded_counts = [0usize; 5];
    for (s, sd) in corpus.sessions.iter().zip(&corpus.seeded) {
        let dets = deid::detect_pii(s, &rules).map_err(|e| e.to_string())?;
        let (masked, map) = deid::mask_session(s, &dets, seed).map_err(|e| e.to_string())?;
        let (again, _) = deid::mask_session(s, &deid::detect_pii(s, &rules).unwrap(), seed).unwrap();
        ensure!(
            ingest::export_session_json(&masked) == ingest::export_session_json(&again),
            "masking {} is not byte-deterministic",
            s.title
        );
        let out = common::session_text(&masked);
        let orig = common::session_text(s);
        seeded_counts[0] += sd.emails.len();
        seeded_counts[1] += sd.phones.len();
        seeded_counts[2] += sd.urls.len();
        seeded_counts[3] += sd.roster_names.len();
        seeded_counts[4] += sd.cue_names.len();
        for p in sd.emails.iter().chain(&sd.phones).chain(&sd.urls) {
            pattern_total += 1;
            if out.contains(p.as_str()) {
                pattern_leaks += 1;
            }
        }
        for name in sd.roster_names.iter().chain(&sd.cue_names) {
            names_total += 1;
            let leaked = common::contains_word(&out, name) || name.split(' ').any(|t| common::contains_word(&out, t));
            if !leaked {
                names_replaced += 1;
            }
        }
        // every entity written more than once maps to one surrogate
        let mut entities: Vec<String> = sd.emails.clone();
        entities.extend(sd.cue_names.iter().cloned());
        entities.extend(sd.roster_names.iter().filter_map(|n| n.split(' ').next().map(str::to_owned)));
        for e in entities {
            let occurrences = orig.matches(e.as_str()).count();
            if occurrences < 2 {
                continue;
            }
            repeated += 1;
            let key = deid::normalize(&e);
            let entries: Vec<_> =
                map.entries.iter().filter(|en| en.originals.iter().any(|o| deid::normalize(o) == key)).collect();
            if entries.len() == 1 && out.matches(entries[0].surrogate.as_str()).count() >= occurrences {
                consistent += 1;
            }
        }
    }
    ensure!(seeded_counts == [20, 20, 20, 40, 20], "corpus seeded {seeded_counts:?}");
    let name_rate = names_replaced as f64 / names_total as f64;
    ensure!(pattern_leaks == 0, "{pattern_leaks}/{pattern_total} seeded pattern strings survived masking");
    ensure!(name_rate >= 0.95, "only {names_replaced}/{names_total} names replaced");
    ensure!(repeated > 0 && consistent == repeated, "surrogate consistency {consistent}/{repeated}");
    Ok(format!(
        "pattern leaks 0/{pattern_total}, names replaced {names_replaced}/{names_total}, consistent {consistent}/{repeated}, deterministic"
    ))
}

fn ingestion_round_trip() -> Outcome {
    let mut r = common::rng(0x5eed_0004);
    for i in 0..200 {
        let s = common::random_session(&mut r);
        let first = ingest::export_session_json(&s);
        let parsed = ingest::parse_session_json(&first).map_err(|e| format!("session {i}: {e}"))?;
        let second = ingest::export_session_json(&parsed);
        ensure!(first == second, "session {i}: export differs after a round trip");

        let rows: Vec<(String, String)> = s.utterances.iter().map(|u| (u.speaker_id.clone(), u.text.clone())).collect();
        let (c, _) = ingest::parse_csv(&common::csv_bytes(&rows), "csv").map_err(|e| format!("session {i} csv: {e}"))?;
        ensure!(c.utterances.len() == rows.len(), "session {i}: csv kept {} of {} rows", c.utterances.len(), rows.len());
        for (u, (_, t)) in c.utterances.iter().zip(&rows) {
            ensure!(&u.text == t, "session {i}: csv text changed: {:?} -> {:?}", t, u.text);
        }
    }
    Ok("200 sessions byte-identical; csv count and text preserved".into())
}

// ---------------------------------------------------------------------------

const LABELS_H: [&str; 6] = ["question", "explanation", "feedback", "question", "explanation", "other"];
const LABELS_A: [&str; 6] = ["question", "explanation", "explanation", "question", "feedback", "other"];
const LABELS_B: [&str; 6] = ["question", "question", "feedback", "question", "explanation", "other"];
const NEEDLES: [&str; 6] = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"];

fn routed(labels: [&str; 6]) -> MockProvider {
    let mut m = MockProvider::new([r#"{"move":"other"}"#]).unwrap();
    for (needle, label) in NEEDLES.iter().zip(labels) {
        m = m.route(*needle, [json!({ "move": label }).to_string()]).unwrap();
    }
    m
}

fn end_to_end() -> Outcome {
    let a: Arc<dyn ChatProvider> = Arc::new(routed(LABELS_A));
    let b: Arc<dyn ChatProvider> = Arc::new(routed(LABELS_B));
    let wb = Workbench::with_store(common::config(), Store::in_memory())
        .map_err(|e| e.to_string())?
        .with_provider_resolver(Arc::new(move |m, _| Ok(if m == "mock-a" { a.clone() } else { b.clone() })));
    let e = |e: sandpiper::WorkbenchError| e.to_string();
    let plain = "Tutor: Hello, my name is Ottoline Fairweather. alpha: what is a fraction?\n\
                 Student: bravo, it is part of a whole. Email me at kid.learner@example.com\n\
                 Tutor: charlie, exactly right.\n";
    let csv = "speaker,text\nTutor,\"delta, what is half of ten?\"\nStudent,\"echo, it is five\"\nTutor,\"foxtrot, well done Barnaby\"\n";
    let s1 = wb.import(plain.as_bytes(), SourceFormat::Plaintext, "one").map_err(e)?.session;
    let s2 = wb.import(csv.as_bytes(), SourceFormat::Csv, "two").map_err(e)?.session;
    let mut sessions = Vec::new();
    for s in [&s1, &s2] {
        let out = wb.deidentify(s.id.as_str(), vec!["Barnaby".into()]).map_err(e)?;
        ensure!(out.report.is_clean(), "verification report for {} is not clean", s.title);
        let v = wb.deid_review(s.id.as_str(), &deid::ReviewDecision::Approve { notes: Some("ok".into()) }).map_err(e)?;
        ensure!(v.deid_status == DeidStatus::Verified, "{} not verified", s.title);
        let text = common::session_text(&v);
        ensure!(!text.contains("Ottoline") && !text.contains("kid.learner") && !text.contains("Barnaby"), "PII survived");
        sessions.push(v);
    }
    let p = wb.create_prompt("moves", "Label the tutoring move.", common::moves_schema()).map_err(e)?;
    let pv = PromptVersionRef { prompt_id: p.id.clone(), version: 1 };
    let mut runs = Vec::new();
    for model in ["mock-a", "mock-b"] {
        let req = RunRequest {
            prompt_version: pv.clone(),
            model: model.into(),
            sessions: sessions.iter().map(|s| s.id.clone()).collect(),
            granularity: Granularity::Utterance,
            max_retries: None,
            context_window: None,
            temperature: None,
            concurrency: None,
            max_tokens: None,
        };
        let run = wb.create_run(&req).map_err(e)?;
        let run = wb.execute_run(run.id.as_str(), None).map_err(e)?;
        ensure!(run.state == RunState::Completed && run.counts.succeeded == 6, "{model}: {:?} {:?}", run.state, run.counts);
        runs.push(run);
    }
    let items: Vec<_> = sessions.iter().flat_map(|s| (0..3).map(move |i| (s.id.clone(), i))).collect();
    for ((sid, idx), label) in items.iter().zip(LABELS_H) {
        let l = HumanLabel {
            session_id: sid.clone(),
            utterance_index: *idx,
            coder_id: "coder1".into(),
            prompt_version: pv.clone(),
            document: json!({ "move": label }),
        };
        wb.add_human_annotation(&l).map_err(e)?;
    }
    let human = LabelSource::human("coder1");
    let members = vec![LabelSource::run(runs[0].id.clone()), LabelSource::run(runs[1].id.clone()), human.clone()];
    let rs = wb.create_runset("e2e", members, Some(human), "move").map_err(e)?;
    let rep = wb.evaluation(rs.id.as_str()).map_err(e)?;
    for m in [&rep.kappa_matrix, &rep.agreement_matrix] {
        ensure!(m.len() == 3 && m.iter().all(|r| r.len() == 3), "matrix is not 3x3");
        for i in 0..3 {
            ensure!(m[i][i] == Some(1.0), "diagonal [{i}] = {:?}", m[i][i]);
            for j in 0..3 {
                ensure!(m[i][j] == m[j][i], "matrix not symmetric at {i},{j}");
            }
        }
    }
    let k = |i: usize, j: usize| rep.kappa_matrix[i][j].unwrap();
    ensure!(close(k(0, 2), 14.0 / 26.0, 1e-12), "kappa(A,H) = {}", k(0, 2));
    ensure!(close(k(1, 2), 20.0 / 26.0, 1e-12), "kappa(B,H) = {}", k(1, 2));
    ensure!(close(k(0, 1), 8.0 / 26.0, 1e-12), "kappa(A,B) = {}", k(0, 1));

    // hand-computed against the human reference
    let expected: [(&str, f64, f64, [(&str, f64, f64); 4]); 2] = [
        (
            "A",
            0.625,
            0.625,
            [("explanation", 0.5, 0.5), ("feedback", 0.0, 0.0), ("other", 1.0, 1.0), ("question", 1.0, 1.0)],
        ),
        (
            "B",
            (2.0 / 3.0 + 3.0) / 4.0,
            0.875,
            [("explanation", 1.0, 0.5), ("feedback", 1.0, 1.0), ("other", 1.0, 1.0), ("question", 2.0 / 3.0, 1.0)],
        ),
    ];
    ensure!(rep.per_code.len() == 2, "{} precision/recall blocks", rep.per_code.len());
    for (m, (name, mp, mr, codes)) in rep.per_code.iter().zip(expected) {
        let st = m.stats.as_ref().ok_or_else(|| format!("{name}: no stats"))?;
        ensure!(close(st.macro_precision, mp, 1e-12) && close(st.macro_recall, mr, 1e-12), "{name}: macro {st:?}");
        for (code, p, r) in codes {
            let c = st.per_code.get(code).ok_or_else(|| format!("{name}: missing {code}"))?;
            ensure!(close(c.precision, p, 1e-12) && close(c.recall, r, 1e-12), "{name}/{code}: {c:?}");
        }
    }
    let csv = evalengine::report_csv(&rep);
    ensure!(csv.contains_key("kappa") && csv.contains_key("precision_recall"), "csv export incomplete");
    Ok(format!("kappa A/H={:.4} B/H={:.4} A/B={:.4}; P/R match fixture", k(0, 2), k(1, 2), k(0, 1)))
}

// ---------------------------------------------------------------------------

/// Mock that takes a little time per call so polls can observe progress.
struct Slow(MockProvider);

impl ChatProvider for Slow {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        std::thread::sleep(Duration::from_millis(15));
        self.0.complete(req)
    }
    fn is_mock(&self) -> bool {
        true
    }
    fn models(&self) -> Vec<String> {
        self.0.models()
    }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>, privileged: bool) -> (u16, String) {
    use tower::ServiceExt;
    let mut b = Request::builder().method(method).uri(uri);
    if privileged {
        b = b.header("X-Sandpiper-Privileged", "let-me-in");
    }
    let req = match body {
        Some(v) => b.header("content-type", "application/json").body(Body::from(v.to_string())).unwrap(),
        None => b.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8_lossy(&bytes).into_owned())
}

async fn api_contract_async() -> Outcome {
    let mut cfg = common::config();
    cfg.server.privileged_token = Some("let-me-in".into());
    let slow: Arc<dyn ChatProvider> = Arc::new(Slow(MockProvider::new([r#"{"move":"question"}"#]).unwrap()));
    let wb = Workbench::with_store(cfg, Store::in_memory())
        .map_err(|e| e.to_string())?
        .with_provider_resolver(Arc::new(move |_, _| Ok(slow.clone())));
    let app = api::router(Arc::new(wb));
    let mut bodies: Vec<(String, String)> = Vec::new();

    let transcript = "Tutor: hi, my name is Ottoline Fairweather.\nStudent: hello, write to ottoline.f@example.com\n\
                      Tutor: ok\nStudent: fine\nTutor: one\nStudent: two\nTutor: three\nStudent: four\n";
    let req = Request::builder()
        .method("POST")
        .uri("/api/sessions/import?format=plaintext&title=api")
        .body(Body::from(transcript))
        .unwrap();
    let resp = tower::ServiceExt::oneshot(app.clone(), req).await.unwrap();
    ensure!(resp.status() == StatusCode::CREATED, "import returned {}", resp.status());
    let v: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    let sid = v["session"]["id"].as_str().unwrap().to_owned();

    let (st, body) = call(&app, "POST", &format!("/api/sessions/{sid}/deidentify"), None, false).await;
    ensure!(st == 200, "deidentify returned {st}: {body}");
    bodies.push(("deidentify".into(), body));
    let schema = serde_json::to_value(common::moves_schema()).unwrap();
    let (st, body) =
        call(&app, "POST", "/api/prompts", Some(json!({"name":"m","instructions":"label","schema":schema})), false).await;
    ensure!(st == 201, "prompt creation returned {st}: {body}");
    let pid = serde_json::from_str::<Value>(&body).unwrap()["id"].as_str().unwrap().to_owned();

    let (st, body) =
        call(&app, "POST", "/api/runs", Some(json!({"prompt_version": format!("{pid}@1"), "model":"mock", "sessions":[sid]})), false)
            .await;
    ensure!(st == 202, "run creation returned {st}: {body}");
    let run: Run = serde_json::from_str(&body).map_err(|e| e.to_string())?;
    ensure!(run.state == RunState::Queued, "run created in state {:?}", run.state);

    let mut seen = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(10);
    let last = loop {
        let (st, body) = call(&app, "GET", &format!("/api/runs/{}", run.id), None, false).await;
        ensure!(st == 200, "poll returned {st}");
        let r: Run = serde_json::from_str(&body).unwrap();
        seen.push(r.counts.processed());
        if r.state.is_terminal() {
            break r;
        }
        ensure!(Instant::now() < deadline, "run did not finish");
        tokio::time::sleep(Duration::from_millis(5)).await;
    };
    ensure!(seen.windows(2).all(|w| w[0] <= w[1]), "progress went backwards: {seen:?}");
    ensure!(last.state == RunState::Completed && last.counts.processed() == 8, "final {:?} {:?}", last.state, last.counts);
    let distinct = {
        let mut d = seen.clone();
        d.dedup();
        d.len()
    };

    for uri in [
        "/api/sessions/ses_nope",
        "/api/runs/run_nope",
        "/api/prompts/prm_nope",
        "/api/runsets/rs_nope",
        "/api/runsets/rs_nope/evaluation",
        "/api/sessions/ses_nope/deid-report",
    ] {
        let (st, body) = call(&app, "GET", uri, None, false).await;
        ensure!(st == 404, "{uri} returned {st}");
        let err: ApiError = serde_json::from_str(&body).map_err(|e| format!("{uri}: unstructured error body: {e}"))?;
        ensure!(err.http_status == 404 && err.code == "not_found" && !err.message.is_empty(), "{uri}: {err:?}");
    }

    for uri in [
        "/api/sessions".to_owned(),
        format!("/api/sessions/{sid}"),
        format!("/api/sessions/{sid}/export"),
        format!("/api/sessions/{sid}/deid-report"),
        format!("/api/sessions/{sid}/annotations?source=run:{}", run.id),
        format!("/api/sessions/{sid}/mask-map"),
        "/api/runs".to_owned(),
        format!("/api/runs/{}", run.id),
        "/api/prompts".to_owned(),
        "/api/models".to_owned(),
        "/api/maskmaps".to_owned(),
    ] {
        let (_, body) = call(&app, "GET", &uri, None, false).await;
        bodies.push((uri, body));
    }
    let (st, _) = call(&app, "GET", &format!("/api/sessions/{sid}/mask-map"), None, false).await;
    ensure!(st == 403, "unprivileged mask-map returned {st}");
    let needles = ["Ottoline", "Fairweather", "ottoline.f@example.com", "\"originals\"", "\"surrogate\""];
    for (uri, body) in &bodies {
        if let Some(n) = needles.iter().find(|n| body.contains(**n)) {
            return Err(format!("{uri} leaks mask-map content `{n}`"));
        }
    }
    let (st, body) = call(&app, "GET", &format!("/api/sessions/{sid}/mask-map"), None, true).await;
    ensure!(st == 200 && body.contains("Ottoline"), "privileged mask-map returned {st}");
    Ok(format!(
        "202/queued, {} polls ({distinct} distinct counts, monotone), 404s structured, {} bodies clean",
        seen.len(),
        bodies.len()
    ))
}

fn api_contract() -> Outcome {
    tokio::runtime::Runtime::new().map_err(|e| e.to_string())?.block_on(api_contract_async())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("kappa exactness", kappa_exactness, Duration::from_secs(1)),
        ("metric oracle equivalence", metric_oracle_equivalence, Duration::from_secs(30)),
        ("orchestrator loop contract", orchestrator_loop_contract, Duration::from_secs(5)),
        ("store holds only valid documents", store_safety, Duration::from_secs(60)),
        ("de-identification soundness", deid_soundness, Duration::from_secs(10)),
        ("ingestion round trip", ingestion_round_trip, Duration::from_secs(10)),
        ("end-to-end pipeline", end_to_end, Duration::from_secs(20)),
        ("API contract", api_contract, Duration::from_secs(30)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let result = match result {
            Ok(msg) if took > budget => Err(format!("{msg}; took {took:.2?}, budget {budget:?}")),
            other => other,
        };
        match result {
            Ok(msg) => println!("PASS  {name} ({took:.2?}): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name} ({took:.2?}): {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
