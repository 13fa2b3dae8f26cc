//! Regenerates `data/transcripts/fixtures.jsonl` from `data/fixtures/canned.json`.
//!
//! Every dataset case and every listed pipeline runs in record mode against a
//! transport that answers from the canned table, keyed by stage, query, step
//! and attempt. Run from the workspace root:
//!
//!     cargo run -p pageguide-cli --example author_fixtures

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use pageguide_core::eval::{self, DatasetKind};
use pageguide_core::gateway::{ChatRequest, FnTransport, Gateway, GatewayConfig, Role, StoreMode, TranscriptStore, TransportError};
use pageguide_core::guide::SessionState;
use pageguide_core::hide::{self, HideConfig};
use pageguide_core::pipeline::{self, HandlerOutput};
use pageguide_core::{build_index, load_sequence, load_snapshot, prompts, IndexConfig, Snapshot};

#[derive(Debug, Deserialize)]
struct Canned {
    responses: Vec<Response>,
    pipelines: Vec<Pipeline>,
    hide_requests: Vec<HideOnly>,
}

#[derive(Debug, Deserialize)]
struct Response {
    stage: String,
    query: String,
    step: Option<u32>,
    attempt: Option<u32>,
    reply: String,
}

#[derive(Debug, Deserialize)]
struct Pipeline {
    query: String,
    snapshot: Option<PathBuf>,
    sequence: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct HideOnly {
    request: String,
    snapshot: PathBuf,
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let len = s[from..].find(end)?;
    Some(&s[from..from + len])
}

/// (stage, query, step, attempt) of a request.
fn describe(r: &ChatRequest) -> (String, String, Option<u32>, Option<u32>) {
    let system = r.messages[0].content.as_str();
    let user = r.messages.iter().rfind(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("");
    if system == prompts::ROUTER_SYSTEM {
        let q = between(user, "Query: \"", "\"\n\nPAGE CONTEXT").unwrap_or(user);
        return ("router".into(), q.into(), None, None);
    }
    if system == prompts::HIDE_SYSTEM {
        let q = user.rsplit_once("USER REQUEST: ").map(|(_, q)| q).unwrap_or(user);
        return ("hide".into(), q.into(), None, None);
    }
    if system == prompts::GUIDE_SYSTEM {
        let first_user = r.messages[1].content.as_str();
        let q = between(first_user, "USER QUESTION: ", "\n\nSTEP NUMBER").unwrap_or("");
        let step = between(first_user, "STEP NUMBER: ", "\n").and_then(|s| s.trim().parse().ok());
        let attempt = r.messages.iter().filter(|m| m.role == Role::Assistant).count() as u32 + 1;
        return ("guide".into(), q.into(), step, Some(attempt));
    }
    ("find".into(), user.into(), None, None)
}

fn main() {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
    let canned: Canned = serde_json::from_str(&std::fs::read_to_string(root.join("fixtures/canned.json")).expect("canned.json"))
        .expect("canned.json parses");
    let out = root.join("transcripts/fixtures.jsonl");
    let _ = std::fs::remove_file(&out);
    std::fs::create_dir_all(out.parent().unwrap()).unwrap();

    let responses = Arc::new(canned.responses);
    let table = responses.clone();
    let transport = FnTransport(move |r: &ChatRequest| {
        let (stage, query, step, attempt) = describe(r);
        table
            .iter()
            .find(|c| c.stage == stage && c.query == query && c.step.is_none_or(|s| Some(s) == step) && c.attempt.unwrap_or(1) == attempt.unwrap_or(1))
            .map(|c| c.reply.clone())
            .ok_or_else(|| TransportError::Upstream { status: 404, body: format!("no canned reply for {stage} {query:?} step {step:?} attempt {attempt:?}") })
    });
    let store = Arc::new(TranscriptStore::open(&out, StoreMode::Record).expect("open transcript"));
    let gw = Gateway::new(store.clone(), Some(Arc::new(transport)), GatewayConfig::default());

    let datasets = root.join("datasets");
    for kind in [DatasetKind::Router, DatasetKind::Find, DatasetKind::Hide, DatasetKind::Guide] {
        let path = datasets.join(format!("{}.jsonl", kind.as_str()));
        let data = eval::load_dataset(kind, &path).expect("dataset loads");
        let report = eval::evaluate(&data, &gw).expect("eval runs");
        assert!(!report.has_errors(), "{} errored: {:?}", kind.as_str(), report.per_case.iter().filter_map(|c| c.error.as_ref()).collect::<Vec<_>>());
        eprintln!("{:<7} {} cases", kind.as_str(), report.cases);
    }

    let fixtures = root.join("fixtures");
    let rebase = |p: &Path| fixtures.join(p);
    for p in &canned.pipelines {
        let snapshots: Vec<Snapshot> = match (&p.snapshot, &p.sequence) {
            (Some(s), _) => vec![load_snapshot(rebase(s)).expect("snapshot")],
            (None, Some(seq)) => load_sequence(rebase(seq)).expect("sequence"),
            _ => panic!("pipeline needs snapshot or sequence"),
        };
        let (route, output) = pipeline::run(&p.query, &snapshots, &gw).expect("pipeline runs");
        if let HandlerOutput::Guide(mut session) = output {
            while !session.state().is_terminal() {
                match session.state() {
                    SessionState::AwaitingUser => {
                        let _ = session.confirm_step();
                    }
                    _ => {
                        let _ = session.next_step(&gw);
                    }
                }
            }
        }
        eprintln!("pipeline {:?} -> {}", p.query, route.handler);
    }
    for h in &canned.hide_requests {
        let s = load_snapshot(rebase(&h.snapshot)).expect("snapshot");
        let index = build_index(&s, &IndexConfig::default());
        hide::propose(&h.request, &index, &gw, &HideConfig::default()).expect("hide runs");
    }

    let unused: Vec<_> = responses
        .iter()
        .filter(|c| !store.recorded_keys().iter().any(|k| store.get(k).is_some_and(|e| e.response.text == c.reply)))
        .map(|c| format!("{} {:?}", c.stage, c.query))
        .collect();
    if !unused.is_empty() {
        eprintln!("warning: canned replies never requested: {unused:?}");
    }
    eprintln!("wrote {} entries to {}", store.len(), out.display());
}
