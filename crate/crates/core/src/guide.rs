//! Step-by-step guidance sessions.
//!
//! A session walks a sequence of page snapshots. Each step is produced by one
//! model call, shown to the user, and only takes effect once the user
//! confirms it; confirmation re-reads the page and checks whether it changed
//! the way the step implied. The state machine:
//!
//! ```text
//! AwaitingStep --next_step--> AwaitingUser --confirm--> AwaitingStep
//!      ^                           |    \--confirm(diverged)--> Replanning --next_step--> AwaitingUser
//!      |                           \--confirm(is_last)--> Completed
//!      any non-terminal state --stop--> Stopped;  malformed output twice --> Failed
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::index::{build_index, ElementId, ElementIndex, IndexConfig};
use crate::json_extract::extract_object;
use crate::dom::NodePath;
use crate::prompts;
use crate::snapshot::Snapshot;

pub const MAX_STEPS: u32 = 25;
pub const DEFAULT_INDEX_BUDGET: usize = 24_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaitFor {
    Click,
    Input,
    Scroll,
    None,
}

impl WaitFor {
    pub fn as_str(self) -> &'static str {
        match self {
            WaitFor::Click => "click",
            WaitFor::Input => "input",
            WaitFor::Scroll => "scroll",
            WaitFor::None => "none",
        }
    }

    /// Accepts the prompt's `waitFor` values plus `type` as a synonym of `input`.
    pub fn parse_label(s: &str) -> Option<WaitFor> {
        match s.trim().to_ascii_lowercase().as_str() {
            "click" => Some(WaitFor::Click),
            "input" | "type" => Some(WaitFor::Input),
            "scroll" => Some(WaitFor::Scroll),
            "none" | "null" | "" => Some(WaitFor::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepHighlight {
    pub element_id: ElementId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuideStep {
    pub step: u32,
    pub instruction: String,
    pub highlight: Option<StepHighlight>,
    pub wait_for: WaitFor,
    pub is_last: bool,
    pub next_hint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    AwaitingStep,
    AwaitingUser,
    Replanning,
    Completed,
    Stopped,
    Failed,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Completed | SessionState::Stopped | SessionState::Failed)
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub expected_element: Option<StepHighlight>,
    pub found_in_new_index: bool,
    pub url_changed: bool,
    pub index_changed: bool,
    pub verdict: Verdict,
}

/// A confirmed step and what the re-read showed. Terminal steps carry no report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmedStep {
    pub step: GuideStep,
    /// Node path of the highlighted element in the index the step was shown on.
    pub target_path: Option<NodePath>,
    pub divergence: Option<DivergenceReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmOutcome {
    pub state: SessionState,
    pub divergence: Option<DivergenceReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    Next,
    Finish,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardTarget {
    pub element_id: ElementId,
    pub text: String,
    pub node_path: NodePath,
}

/// What the panel renders for the staged step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCard {
    pub step_no: u32,
    pub instruction: String,
    pub hint: String,
    pub target: Option<CardTarget>,
    pub wait_for: WaitFor,
    pub controls: Vec<Control>,
}

#[derive(Debug, Error)]
pub enum GuideError {
    #[error("snapshot sequence is empty")]
    EmptySequence,
    #[error("query is empty")]
    EmptyQuery,
    #[error("`{op}` is not allowed in state {state}")]
    InvalidState { op: &'static str, state: SessionState },
    #[error("model produced an unusable step: {0}")]
    MalformedStep(String),
    #[error("no snapshot left to advance to after step {step}")]
    SequenceExhausted { step: u32 },
    #[error("plan exceeded {MAX_STEPS} steps")]
    StepLimit,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideConfig {
    pub index: IndexConfig,
    pub index_budget: usize,
    pub max_steps: u32,
}

impl Default for GuideConfig {
    fn default() -> Self {
        GuideConfig { index: IndexConfig::default(), index_budget: DEFAULT_INDEX_BUDGET, max_steps: MAX_STEPS }
    }
}

#[derive(Debug, Clone)]
pub struct GuideSession {
    pub session_id: String,
    pub query: String,
    state: SessionState,
    current_step: Option<GuideStep>,
    history: Vec<ConfirmedStep>,
    snapshots: Vec<Snapshot>,
    cursor: usize,
    index: ElementIndex,
    /// Bumped on every rebuild; two identical pages still yield distinct generations.
    index_generation: u64,
    failure: Option<String>,
    config: GuideConfig,
}

/// 128 random bits, hex encoded.
pub fn new_session_id() -> String {
    hex::encode(rand::random::<[u8; 16]>())
}

pub fn start_session(query: &str, snapshots: Vec<Snapshot>, config: GuideConfig) -> Result<GuideSession, GuideError> {
    if query.trim().is_empty() {
        return Err(GuideError::EmptyQuery);
    }
    let first = snapshots.first().ok_or(GuideError::EmptySequence)?;
    let index = build_index(first, &config.index);
    Ok(GuideSession {
        session_id: new_session_id(),
        query: query.to_string(),
        state: SessionState::AwaitingStep,
        current_step: None,
        history: Vec::new(),
        snapshots,
        cursor: 0,
        index,
        index_generation: 0,
        failure: None,
        config,
    })
}

impl GuideSession {
    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn current_step(&self) -> Option<&GuideStep> {
        self.current_step.as_ref()
    }

    pub fn history(&self) -> &[ConfirmedStep] {
        &self.history
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshots[self.cursor]
    }

    pub fn sequence_len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn index(&self) -> &ElementIndex {
        &self.index
    }

    pub fn index_generation(&self) -> u64 {
        self.index_generation
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    pub fn config(&self) -> &GuideConfig {
        &self.config
    }

    fn invalid(&self, op: &'static str) -> GuideError {
        GuideError::InvalidState { op, state: self.state }
    }

    fn fail(&mut self, err: GuideError) -> GuideError {
        self.state = SessionState::Failed;
        self.current_step = None;
        self.failure = Some(err.to_string());
        err
    }

    fn next_number(&self) -> u32 {
        self.history.len() as u32 + 1
    }

    /// The request `next_step` would send first, without calling the model.
    pub fn step_request(&self, gateway: &Gateway) -> ChatRequest {
        gateway.request(self.step_messages())
    }

    fn step_messages(&self) -> Vec<ChatMessage> {
        let page_index = self.index.to_prompt(self.config.index_budget, self.config.index.elem_clip);
        vec![
            ChatMessage::system(prompts::GUIDE_SYSTEM),
            ChatMessage::user(prompts::guide_user(&page_index, &self.query, self.next_number(), &self.previous_steps())),
        ]
    }

    fn previous_steps(&self) -> String {
        if self.history.is_empty() {
            return "None".to_string();
        }
        self.history
            .iter()
            .map(|c| {
                let target = c
                    .step
                    .highlight
                    .as_ref()
                    .map(|h| format!(" [{}] {}", h.element_id, h.text))
                    .unwrap_or_default();
                let note = match c.divergence.as_ref().map(|d| d.verdict) {
                    Some(Verdict::Diverged) => " (confirmed, but the page did not change; re-plan from the current PAGE INDEX)",
                    _ => " (confirmed)",
                };
                format!("Step {}: {}{target}{note}", c.step.step, c.step.instruction)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Asks the model for the next step. A malformed or hallucinated step is
    /// re-asked once with a correction note; a second bad answer fails the session.
    pub fn next_step(&mut self, gateway: &Gateway) -> Result<GuideStep, GuideError> {
        if !matches!(self.state, SessionState::AwaitingStep | SessionState::Replanning) {
            return Err(self.invalid("next_step"));
        }
        let number = self.next_number();
        if number > self.config.max_steps {
            return Err(self.fail(GuideError::StepLimit));
        }
        let mut messages = self.step_messages();
        let first = gateway.complete(&gateway.request(messages.clone()))?;
        let problem = match parse_step(&first.text, number, &self.index) {
            Ok(step) => return Ok(self.stage(step)),
            Err(problem) => problem,
        };
        tracing::warn!(step = number, %problem, "guide step rejected, re-asking");
        messages.push(ChatMessage::assistant(first.text));
        messages.push(ChatMessage::user(correction_note(&problem)));
        let second = gateway.complete(&gateway.request(messages))?;
        match parse_step(&second.text, number, &self.index) {
            Ok(step) => Ok(self.stage(step)),
            Err(problem) => Err(self.fail(GuideError::MalformedStep(problem))),
        }
    }

    fn stage(&mut self, step: GuideStep) -> GuideStep {
        self.current_step = Some(step.clone());
        self.state = SessionState::AwaitingUser;
        step
    }

    /// Confirms the staged step against the next snapshot of the sequence.
    pub fn confirm_step(&mut self) -> Result<ConfirmOutcome, GuideError> {
        self.confirm_inner(None)
    }

    /// Confirms the staged step against a freshly captured page.
    pub fn confirm_with_snapshot(&mut self, snapshot: Snapshot) -> Result<ConfirmOutcome, GuideError> {
        self.confirm_inner(Some(snapshot))
    }

    fn confirm_inner(&mut self, fresh: Option<Snapshot>) -> Result<ConfirmOutcome, GuideError> {
        if self.state != SessionState::AwaitingUser {
            return Err(self.invalid("confirm_step"));
        }
        let step = self.current_step.take().expect("staged step in AwaitingUser");
        let target_path = step
            .highlight
            .as_ref()
            .and_then(|h| self.index.resolve(h.element_id).ok())
            .map(|e| e.node_path.clone());
        if step.is_last {
            self.history.push(ConfirmedStep { step, target_path, divergence: None });
            self.state = SessionState::Completed;
            return Ok(ConfirmOutcome { state: self.state, divergence: None });
        }
        match fresh {
            Some(s) => {
                self.snapshots.truncate(self.cursor + 1);
                self.snapshots.push(s);
            }
            None if self.cursor + 1 >= self.snapshots.len() => {
                let number = step.step;
                self.history.push(ConfirmedStep { step, target_path, divergence: None });
                return Err(self.fail(GuideError::SequenceExhausted { step: number }));
            }
            None => {}
        }
        let old_url = self.snapshots[self.cursor].url.clone();
        self.cursor += 1;
        let new_index = build_index(&self.snapshots[self.cursor], &self.config.index);
        let report = divergence(&step, target_path.as_ref(), &self.index, &new_index, old_url != self.snapshots[self.cursor].url);
        self.index = new_index;
        self.index_generation += 1;
        self.state = match report.verdict {
            Verdict::Consistent => SessionState::AwaitingStep,
            Verdict::Diverged => SessionState::Replanning,
        };
        self.history.push(ConfirmedStep { step, target_path, divergence: Some(report.clone()) });
        Ok(ConfirmOutcome { state: self.state, divergence: Some(report) })
    }

    pub fn stop(&mut self) -> Result<SessionState, GuideError> {
        if matches!(self.state, SessionState::Completed | SessionState::Failed | SessionState::Stopped) {
            return Err(self.invalid("stop"));
        }
        self.current_step = None;
        self.state = SessionState::Stopped;
        Ok(self.state)
    }

    pub fn step_card(&self) -> Result<StepCard, GuideError> {
        let step = match (&self.current_step, self.state) {
            (Some(step), SessionState::AwaitingUser) => step,
            _ => return Err(self.invalid("step_card")),
        };
        let advance = if step.is_last { Control::Finish } else { Control::Next };
        let controls = match step.wait_for {
            WaitFor::None => vec![advance],
            _ => vec![advance, Control::Stop],
        };
        let target = step.highlight.as_ref().and_then(|h| {
            self.index.resolve(h.element_id).ok().map(|e| CardTarget {
                element_id: h.element_id,
                text: h.text.clone(),
                node_path: e.node_path.clone(),
            })
        });
        Ok(StepCard {
            step_no: step.step,
            instruction: step.instruction.clone(),
            hint: step.next_hint.clone(),
            target,
            wait_for: step.wait_for,
            controls,
        })
    }
}

/// A click is expected to change the page. Other waits are never judged.
pub fn divergence(
    step: &GuideStep,
    target_path: Option<&NodePath>,
    old: &ElementIndex,
    new: &ElementIndex,
    url_changed: bool,
) -> DivergenceReport {
    let found_in_new_index = match (&step.highlight, target_path) {
        (Some(h), Some(path)) => {
            let old_text = old.resolve(h.element_id).map(|e| e.text.as_str()).ok();
            new.by_path(path).is_some_and(|e| Some(e.text.as_str()) == old_text)
        }
        _ => false,
    };
    let index_changed = !old.same_elements(new);
    let verdict = match step.wait_for {
        WaitFor::Click if !(url_changed || index_changed || (step.highlight.is_some() && !found_in_new_index)) => {
            Verdict::Diverged
        }
        _ => Verdict::Consistent,
    };
    DivergenceReport { expected_element: step.highlight.clone(), found_in_new_index, url_changed, index_changed, verdict }
}

fn correction_note(problem: &str) -> String {
    format!(
        "Your previous reply could not be used: {problem}. Reply again with only the JSON object for this step, \
         and use a highlight index that appears in the PAGE INDEX."
    )
}

/// Parses one step. The step number is assigned by the engine; the model's
/// own `step` field is ignored.
pub fn parse_step(raw: &str, number: u32, index: &ElementIndex) -> Result<GuideStep, String> {
    let obj = extract_object(raw).ok_or("no JSON object in reply")?;
    let instruction = match obj.get("instruction") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        _ => return Err("`instruction` must be a non-empty string".into()),
    };
    let highlight = match obj.get("highlight") {
        None | Some(Value::Null) => None,
        Some(Value::Object(h)) => {
            let id = h
                .get("index")
                .and_then(Value::as_u64)
                .and_then(|n| ElementId::try_from(n).ok())
                .ok_or("`highlight.index` must be a positive integer")?;
            if !index.contains(id) {
                return Err(format!("highlight index {id} is not in the PAGE INDEX"));
            }
            let text = h.get("text").and_then(Value::as_str).unwrap_or_default().to_string();
            Some(StepHighlight { element_id: id, text })
        }
        Some(_) => return Err("`highlight` must be an object".into()),
    };
    let wait_for = match obj.get("waitFor") {
        None | Some(Value::Null) => WaitFor::None,
        Some(Value::String(s)) => WaitFor::parse_label(s).ok_or_else(|| format!("unknown waitFor `{s}`"))?,
        Some(_) => return Err("`waitFor` must be a string or null".into()),
    };
    let is_last = match obj.get("isLastStep") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err("`isLastStep` must be a boolean".into()),
    };
    let next_hint = obj.get("nextStepHint").and_then(Value::as_str).unwrap_or_default().to_string();
    Ok(GuideStep { step: number, instruction, highlight, wait_for, is_last, next_hint })
}
