//! Offline evaluation of the router and the three handlers.
//!
//! Datasets are JSON Lines, one case per line. Snapshot references are paths
//! relative to the dataset file. Gold labels use [`NodePath`]s so they survive
//! index changes. A case that errors scores zero and is listed in the report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::NodePath;
use crate::find::{self, FindConfig, UNRESOLVED_MARK};
use crate::gateway::Gateway;
use crate::guide::{self, GuideConfig, SessionState, WaitFor};
use crate::hide::{self, classify_difficulty, Difficulty};
use crate::index::{build_index, IndexConfig};
use crate::router::{self, Handler, PageContext};
use crate::snapshot::{load_sequence, load_snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Router,
    Find,
    Hide,
    Guide,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Router => "router",
            DatasetKind::Find => "find",
            DatasetKind::Hide => "hide",
            DatasetKind::Guide => "guide",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [DatasetKind::Router, DatasetKind::Find, DatasetKind::Hide, DatasetKind::Guide]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown dataset kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterCase {
    #[serde(default)]
    pub id: Option<String>,
    pub query: String,
    pub gold_class: Handler,
    #[serde(default)]
    pub page_title: String,
    #[serde(default = "default_content_type")]
    pub content_type: String,
}

fn default_content_type() -> String {
    "page".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindCase {
    pub id: String,
    pub snapshot: PathBuf,
    pub query: String,
    pub gold_answers: Vec<String>,
    pub gold_element_paths: Vec<NodePath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HideCase {
    pub id: String,
    pub snapshot: PathBuf,
    pub request: String,
    pub difficulty: Difficulty,
    pub target_types: u32,
    pub gold_target_paths: Vec<NodePath>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldAction {
    /// One of `click`, `type`, `input`, `scroll`, `none`.
    pub action: String,
    pub target: Option<NodePath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideCase {
    pub id: String,
    /// A sequence manifest or directory of snapshot bundles.
    pub sequence: PathBuf,
    pub query: String,
    pub gold_trace: Vec<GoldAction>,
    pub reference_length: usize,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Router(Vec<RouterCase>),
    Find(Vec<FindCase>),
    Hide(Vec<HideCase>),
    Guide(Vec<GuideCase>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Router(c) => c.len(),
            Dataset::Find(c) => c.len(),
            Dataset::Hide(c) => c.len(),
            Dataset::Guide(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read dataset {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
}

fn parse_lines<T: DeserializeOwned>(text: &str, check: impl Fn(&T) -> Result<(), String>) -> Result<Vec<T>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let violation = |message: String| EvalError::SchemaViolation { line: i + 1, message };
        let case: T = serde_json::from_str(line).map_err(|e| violation(e.to_string()))?;
        check(&case).map_err(violation)?;
        out.push(case);
    }
    Ok(out)
}

/// Loads a JSON Lines dataset. Relative snapshot paths are resolved against
/// the dataset's directory.
pub fn load_dataset(kind: DatasetKind, path: impl AsRef<Path>) -> Result<Dataset, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    Ok(match kind {
        DatasetKind::Router => Dataset::Router(parse_lines(&text, |c: &RouterCase| {
            match c.gold_class {
                Handler::Find | Handler::Guide | Handler::Hide => Ok(()),
                other => Err(format!("gold_class `{other}` is not an evaluated class")),
            }
        })?),
        DatasetKind::Find => {
            let mut cases = parse_lines(&text, |c: &FindCase| {
                if c.gold_answers.is_empty() {
                    Err("gold_answers must not be empty".into())
                } else {
                    Ok(())
                }
            })?;
            cases.iter_mut().for_each(|c| rebase(&mut c.snapshot));
            Dataset::Find(cases)
        }
        DatasetKind::Hide => {
            let mut cases = parse_lines(&text, |c: &HideCase| match classify_difficulty(c.target_types) {
                Ok(d) if d == c.difficulty => Ok(()),
                Ok(d) => Err(format!("difficulty {} does not match {} target types ({d})", c.difficulty, c.target_types)),
                Err(e) => Err(e.to_string()),
            })?;
            cases.iter_mut().for_each(|c| rebase(&mut c.snapshot));
            Dataset::Hide(cases)
        }
        DatasetKind::Guide => {
            let mut cases = parse_lines(&text, |c: &GuideCase| {
                if c.reference_length != c.gold_trace.len() {
                    return Err(format!("reference_length {} but gold_trace has {}", c.reference_length, c.gold_trace.len()));
                }
                match c.gold_trace.iter().find(|a| gold_wait_for(&a.action).is_none()) {
                    Some(a) => Err(format!("unknown gold action `{}`", a.action)),
                    None => Ok(()),
                }
            })?;
            cases.iter_mut().for_each(|c| rebase(&mut c.sequence));
            Dataset::Guide(cases)
        }
    })
}

pub fn gold_wait_for(action: &str) -> Option<WaitFor> {
    match action {
        "click" => Some(WaitFor::Click),
        "type" | "input" => Some(WaitFor::Input),
        "scroll" => Some(WaitFor::Scroll),
        "none" => Some(WaitFor::None),
        _ => None,
    }
}

// ---- metrics -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf { precision: 0.0, recall: 0.0, f1: 0.0 };

    fn from_counts(hits: usize, predicted: usize, gold: usize) -> Prf {
        let precision = if predicted == 0 { 0.0 } else { hits as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { hits as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }

    pub fn avg(&self) -> f64 {
        (self.precision + self.recall + self.f1) / 3.0
    }
}

pub fn set_prf<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> Prf {
    Prf::from_counts(predicted.intersection(gold).count(), predicted.len(), gold.len())
}

/// Lowercase, drop characters that are neither alphanumeric nor whitespace, split.
pub fn normalize_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub fn token_f1(predicted: &str, gold: &str) -> f64 {
    let p = normalize_tokens(predicted);
    let g = normalize_tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut hits = 0;
    for t in &p {
        if let Some(n) = counts.get_mut(t.as_str()).filter(|n| **n > 0) {
            *n -= 1;
            hits += 1;
        }
    }
    Prf::from_counts(hits, p.len(), g.len()).f1
}

/// True when `gold`'s tokens appear contiguously in `answer`'s tokens.
pub fn contains_answer(answer: &str, gold: &str) -> bool {
    let a = normalize_tokens(answer);
    let g = normalize_tokens(gold);
    !g.is_empty() && a.windows(g.len()).any(|w| w == g.as_slice())
}

/// Display text with anchor markup removed, leaving each cited phrase once.
pub fn strip_anchors(display: &str) -> String {
    let no_warn = display.replace(UNRESOLVED_MARK, "");
    let mut out = String::with_capacity(no_warn.len());
    let mut chars = no_warn.chars().peekable();
    while let Some(c) = chars.next() {
        if c == find::ANCHOR_OPEN {
            for d in chars.by_ref() {
                if d == find::ANCHOR_CLOSE {
                    break;
                }
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

// ---- reports -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    /// SHA-256 of the transcript file, when one backs the gateway.
    pub replay_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub cases: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub group: String,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kind: DatasetKind,
    pub provenance: Provenance,
    pub cases: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Per gold class (router) or difficulty (hide, guide).
    pub breakdown: BTreeMap<String, Breakdown>,
    /// gold class -> predicted class -> count, errors only.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub per_case: Vec<CaseResult>,
    pub errored: Vec<String>,
}

impl MetricReport {
    fn new(kind: DatasetKind, gateway: &Gateway, per_case: Vec<CaseResult>) -> Self {
        let errored = per_case.iter().filter(|c| c.error.is_some()).map(|c| c.id.clone()).collect();
        MetricReport {
            kind,
            provenance: Provenance {
                model: gateway.config().model.clone(),
                replay_sha256: gateway.store().file_digest(),
            },
            cases: per_case.len(),
            metrics: BTreeMap::new(),
            breakdown: BTreeMap::new(),
            confusion: BTreeMap::new(),
            per_case,
            errored,
        }
    }

    pub fn has_errors(&self) -> bool {
        !self.errored.is_empty()
    }

    /// Macro-averages the named per-case metrics overall and per group.
    fn aggregate(&mut self, names: &[&str]) {
        let avg = |cases: &[&CaseResult]| -> BTreeMap<String, f64> {
            names
                .iter()
                .map(|n| (n.to_string(), mean(cases.iter().map(|c| c.metrics.get(*n).copied().unwrap_or(0.0)))))
                .collect()
        };
        let all: Vec<&CaseResult> = self.per_case.iter().collect();
        self.metrics = avg(&all);
        let mut groups: BTreeMap<&str, Vec<&CaseResult>> = BTreeMap::new();
        for c in &self.per_case {
            groups.entry(c.group.as_str()).or_default().push(c);
        }
        self.breakdown = groups
            .into_iter()
            .map(|(g, cases)| (g.to_string(), Breakdown { cases: cases.len(), metrics: avg(&cases) }))
            .collect();
    }
}

fn prf_metrics(prf: Prf) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("precision".to_string(), prf.precision),
        ("recall".to_string(), prf.recall),
        ("f1".to_string(), prf.f1),
        ("avg".to_string(), prf.avg()),
    ])
}

fn errored(id: &str, group: &str, error: String) -> CaseResult {
    CaseResult { id: id.to_string(), group: group.to_string(), metrics: BTreeMap::new(), error: Some(error) }
}

pub fn evaluate(dataset: &Dataset, gateway: &Gateway) -> Result<MetricReport, EvalError> {
    match dataset {
        Dataset::Router(c) => eval_router(c, gateway),
        Dataset::Find(c) => eval_find(c, gateway),
        Dataset::Hide(c) => eval_hide(c, gateway),
        Dataset::Guide(c) => eval_guide(c, gateway),
    }
}

pub fn eval_router(cases: &[RouterCase], gateway: &Gateway) -> Result<MetricReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let per_case = cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let id = c.id.clone().unwrap_or_else(|| format!("router-{}", i + 1));
            let group = c.gold_class.to_string();
            let ctx = PageContext::new(&c.page_title, &c.content_type);
            match router::classify(&c.query, &ctx, gateway) {
                Ok(d) => {
                    let correct = d.handler == c.gold_class;
                    if !correct {
                        *confusion.entry(group.clone()).or_default().entry(d.handler.to_string()).or_default() += 1;
                    }
                    let metrics = BTreeMap::from([("accuracy".to_string(), if correct { 1.0 } else { 0.0 })]);
                    CaseResult { id, group, metrics, error: None }
                }
                Err(e) => errored(&id, &group, format!("query {:?}: {e}", c.query)),
            }
        })
        .collect();
    let mut report = MetricReport::new(DatasetKind::Router, gateway, per_case);
    report.aggregate(&["accuracy"]);
    report.confusion = confusion;
    Ok(report)
}

pub fn eval_find(cases: &[FindCase], gateway: &Gateway) -> Result<MetricReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let config = FindConfig::default();
    let per_case = cases
        .iter()
        .map(|c| {
            let run = || -> Result<BTreeMap<String, f64>, String> {
                let snapshot = load_snapshot(&c.snapshot).map_err(|e| e.to_string())?;
                let index = build_index(&snapshot, &IndexConfig::default());
                let r = find::answer(&c.query, &index, &[], gateway, &config).map_err(|e| e.to_string())?;
                let predicted: BTreeSet<NodePath> = r.plan.entries.iter().map(|e| e.node_path.clone()).collect();
                let gold: BTreeSet<NodePath> = c.gold_element_paths.iter().cloned().collect();
                let mut m = prf_metrics(set_prf(&predicted, &gold));
                m.remove("avg");
                let answer = strip_anchors(&r.answer.display_text);
                let correct = c.gold_answers.iter().any(|g| contains_answer(&answer, g));
                let answer_f1 = c.gold_answers.iter().map(|g| token_f1(&answer, g)).fold(0.0, f64::max);
                let cited = r.answer.citations.iter().map(|rc| rc.citation.phrase.as_str()).collect::<Vec<_>>().join(" ");
                let evidence_f1 = c.gold_answers.iter().map(|g| token_f1(&cited, g)).fold(0.0, f64::max);
                m.insert("answer_correctness".into(), if correct { 1.0 } else { 0.0 });
                m.insert("answer_f1".into(), answer_f1);
                m.insert("evidence_f1".into(), evidence_f1);
                Ok(m)
            };
            match run() {
                Ok(metrics) => CaseResult { id: c.id.clone(), group: "all".into(), metrics, error: None },
                Err(e) => errored(&c.id, "all", e),
            }
        })
        .collect();
    let mut report = MetricReport::new(DatasetKind::Find, gateway, per_case);
    report.aggregate(&["precision", "recall", "f1", "answer_correctness", "answer_f1", "evidence_f1"]);
    Ok(report)
}

pub fn eval_hide(cases: &[HideCase], gateway: &Gateway) -> Result<MetricReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let per_case = cases
        .iter()
        .map(|c| {
            let group = c.difficulty.to_string();
            let run = || -> Result<BTreeMap<String, f64>, String> {
                let snapshot = load_snapshot(&c.snapshot).map_err(|e| e.to_string())?;
                let index = build_index(&snapshot, &IndexConfig::default());
                let proposal = hide::propose(&c.request, &index, gateway, &hide::HideConfig::default()).map_err(|e| e.to_string())?;
                let decision = hide::review(&proposal, &BTreeSet::new()).map_err(|e| e.to_string())?;
                let predicted: BTreeSet<NodePath> = decision
                    .confirmed_ids
                    .iter()
                    .filter_map(|id| index.resolve(*id).ok().map(|e| e.node_path.clone()))
                    .collect();
                let gold: BTreeSet<NodePath> = c.gold_target_paths.iter().cloned().collect();
                Ok(prf_metrics(set_prf(&predicted, &gold)))
            };
            match run() {
                Ok(metrics) => CaseResult { id: c.id.clone(), group, metrics, error: None },
                Err(e) => errored(&c.id, &group, e),
            }
        })
        .collect();
    let mut report = MetricReport::new(DatasetKind::Hide, gateway, per_case);
    report.aggregate(&["precision", "recall", "f1", "avg"]);
    Ok(report)
}

/// Runs one guide case with an always-Next user. `Ok(false)` is a clean
/// failure (wrong target, wrong action, failed session); `Err` is an error.
fn run_guide_case(c: &GuideCase, gateway: &Gateway) -> Result<bool, String> {
    let snapshots = load_sequence(&c.sequence).map_err(|e| e.to_string())?;
    let mut session = guide::start_session(&c.query, snapshots, GuideConfig::default()).map_err(|e| e.to_string())?;
    for (k, gold) in c.gold_trace.iter().enumerate() {
        let step = match session.next_step(gateway) {
            Ok(step) => step,
            Err(guide::GuideError::Gateway(e)) => return Err(format!("step {}: {e}", k + 1)),
            Err(_) => return Ok(false),
        };
        let target = step
            .highlight
            .as_ref()
            .and_then(|h| session.index().resolve(h.element_id).ok())
            .map(|e| e.node_path.clone());
        if target != gold.target || Some(step.wait_for) != gold_wait_for(&gold.action) {
            return Ok(false);
        }
        if session.confirm_step().is_err() {
            return Ok(false);
        }
    }
    Ok(session.state() == SessionState::Completed)
}

pub fn eval_guide(cases: &[GuideCase], gateway: &Gateway) -> Result<MetricReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let per_case = cases
        .iter()
        .map(|c| {
            let group = c.difficulty.to_string();
            match run_guide_case(c, gateway) {
                Ok(ok) => CaseResult {
                    id: c.id.clone(),
                    group,
                    metrics: BTreeMap::from([("success".to_string(), if ok { 1.0 } else { 0.0 })]),
                    error: None,
                },
                Err(e) => errored(&c.id, &group, e),
            }
        })
        .collect();
    let mut report = MetricReport::new(DatasetKind::Guide, gateway, per_case);
    report.aggregate(&["success"]);
    let split_avg = mean(report.breakdown.values().map(|b| b.metrics["success"]));
    report.metrics.insert("split_avg".into(), split_avg);
    Ok(report)
}
