//! Hiding page elements on request, behind a review step.
//!
//! `propose` asks the model which elements match; `review` turns the
//! (checked-by-default) candidate list into a decision; `apply` appends
//! `display:none` to the confirmed elements' inline style and records what
//! was there before so `restore` can undo it.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dom::NodePath;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::index::{ElementId, ElementIndex, DEFAULT_ELEM_CLIP};
use crate::json_extract::extract_object;
use crate::prompts;
use crate::snapshot::{Snapshot, SnapshotRef};

pub const MAX_CANDIDATES: usize = 15;
pub const HIDE_DECLARATION: &str = "display:none";
pub const NOTHING_FOUND: &str = "No matching content found";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HideCandidate {
    pub element_id: ElementId,
    pub reason: String,
    pub snippet: String,
    pub rank: usize,
    pub checked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HideProposal {
    pub candidates: Vec<HideCandidate>,
    pub message: String,
    pub source_index_ref: SnapshotRef,
    /// Candidates whose id was not in the index.
    pub dropped_unknown: usize,
    /// Valid candidates cut by the cap.
    pub truncated: usize,
}

impl HideProposal {
    pub fn ids(&self) -> BTreeSet<ElementId> {
        self.candidates.iter().map(|c| c.element_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HideDecision {
    pub confirmed_ids: BTreeSet<ElementId>,
    pub proposal_ref: SnapshotRef,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationEntry {
    pub element_id: ElementId,
    pub node_path: NodePath,
    /// `None` when the element had no style attribute.
    pub prior_style: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub source_ref: SnapshotRef,
    pub entries: Vec<MutationEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Difficulty::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown difficulty `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum HideError {
    #[error("request is empty")]
    EmptyRequest,
    #[error("malformed hide response: {0}")]
    MalformedHideResponse(String),
    #[error("element {0} is not a candidate of this proposal")]
    UnknownCandidate(ElementId),
    #[error("decision was already applied")]
    AlreadyApplied,
    #[error("index was built from a different snapshot")]
    StaleIndex,
    #[error("element {0} has no recorded mutation")]
    UnknownMutation(ElementId),
    #[error("recorded node {0} no longer exists")]
    MissingNode(NodePath),
    #[error("target type count must be at least 1")]
    InvalidCount,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HideConfig {
    pub index_budget: usize,
    pub elem_clip: usize,
}

impl Default for HideConfig {
    fn default() -> Self {
        HideConfig { index_budget: 24_000, elem_clip: DEFAULT_ELEM_CLIP }
    }
}

pub fn hide_request(request: &str, index: &ElementIndex, gateway: &Gateway, config: &HideConfig) -> ChatRequest {
    gateway.request(vec![
        ChatMessage::system(prompts::HIDE_SYSTEM),
        ChatMessage::user(prompts::hide_user(request, &index.to_prompt(config.index_budget, config.elem_clip))),
    ])
}

pub fn propose(request: &str, index: &ElementIndex, gateway: &Gateway, config: &HideConfig) -> Result<HideProposal, HideError> {
    if request.trim().is_empty() {
        return Err(HideError::EmptyRequest);
    }
    let response = gateway.complete(&hide_request(request, index, gateway, config))?;
    parse_hide_response(&response.text, index)
}

/// Parses the model's `{"found": [...], "message": ...}` reply against `index`.
pub fn parse_hide_response(raw: &str, index: &ElementIndex) -> Result<HideProposal, HideError> {
    let malformed = |m: &str| HideError::MalformedHideResponse(m.to_string());
    let obj = extract_object(raw).ok_or_else(|| malformed("no JSON object"))?;
    let found = match obj.get("found") {
        Some(Value::Array(items)) => items,
        _ => return Err(malformed("`found` must be an array")),
    };
    let message = match obj.get("message") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(malformed("`message` must be a string")),
    };
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    let mut dropped_unknown = 0;
    let mut truncated = 0;
    for item in found {
        let item = item.as_object().ok_or_else(|| malformed("`found` entries must be objects"))?;
        let id = item
            .get("index")
            .and_then(Value::as_u64)
            .ok_or_else(|| malformed("`index` must be a non-negative integer"))?;
        let text = |k: &str| item.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
        let id = match ElementId::try_from(id) {
            Ok(id) if index.contains(id) => id,
            _ => {
                dropped_unknown += 1;
                continue;
            }
        };
        if !seen.insert(id) {
            continue;
        }
        if candidates.len() == MAX_CANDIDATES {
            truncated += 1;
            continue;
        }
        candidates.push(HideCandidate {
            element_id: id,
            reason: text("reason"),
            snippet: text("snippet"),
            rank: candidates.len() + 1,
            checked: true,
        });
    }
    if dropped_unknown > 0 {
        tracing::warn!(dropped_unknown, "hide candidates referenced unknown elements");
    }
    let message = if candidates.is_empty() && message.trim().is_empty() { NOTHING_FOUND.to_string() } else { message };
    Ok(HideProposal { candidates, message, source_index_ref: index.snapshot_ref.clone(), dropped_unknown, truncated })
}

/// Every candidate is checked unless listed in `unchecked`.
pub fn review(proposal: &HideProposal, unchecked: &BTreeSet<ElementId>) -> Result<HideDecision, HideError> {
    let ids = proposal.ids();
    if let Some(bad) = unchecked.iter().find(|id| !ids.contains(id)) {
        return Err(HideError::UnknownCandidate(*bad));
    }
    Ok(HideDecision {
        confirmed_ids: ids.difference(unchecked).copied().collect(),
        proposal_ref: proposal.source_index_ref.clone(),
        applied: false,
    })
}

/// `color:red;` + hide → `color:red;display:none`.
pub fn append_hide(style: Option<&str>) -> String {
    let prior = style.unwrap_or_default().trim_end_matches(|c: char| c == ';' || c.is_whitespace());
    if prior.is_empty() {
        HIDE_DECLARATION.to_string()
    } else {
        format!("{prior};{HIDE_DECLARATION}")
    }
}

pub fn apply(
    decision: &mut HideDecision,
    snapshot: &Snapshot,
    index: &ElementIndex,
) -> Result<(Snapshot, MutationRecord), HideError> {
    if decision.applied {
        return Err(HideError::AlreadyApplied);
    }
    let source_ref = snapshot.digest();
    if index.snapshot_ref != source_ref || decision.proposal_ref != source_ref {
        return Err(HideError::StaleIndex);
    }
    let mut dom = snapshot.dom();
    let mut entries = Vec::with_capacity(decision.confirmed_ids.len());
    for &id in &decision.confirmed_ids {
        let element = index.resolve(id).map_err(|_| HideError::UnknownCandidate(id))?;
        let node = dom.resolve(&element.node_path).ok_or_else(|| HideError::MissingNode(element.node_path.clone()))?;
        let prior_style = dom.attr(node, "style").map(str::to_string);
        dom.set_attr(node, "style", &append_hide(prior_style.as_deref()));
        entries.push(MutationEntry { element_id: id, node_path: element.node_path.clone(), prior_style });
    }
    let mut mutated = snapshot.clone();
    if !entries.is_empty() {
        mutated.html = dom.serialize();
    }
    decision.applied = true;
    Ok((mutated, MutationRecord { source_ref, entries }))
}

/// Reverts the listed elements to their recorded style.
pub fn restore(mutated: &Snapshot, record: &MutationRecord, ids: &BTreeSet<ElementId>) -> Result<Snapshot, HideError> {
    let entries: Vec<&MutationEntry> = ids
        .iter()
        .map(|id| record.entries.iter().find(|e| e.element_id == *id).ok_or(HideError::UnknownMutation(*id)))
        .collect::<Result<_, _>>()?;
    let mut dom = mutated.dom();
    for e in entries {
        let node = dom.resolve(&e.node_path).ok_or_else(|| HideError::MissingNode(e.node_path.clone()))?;
        match &e.prior_style {
            Some(s) => dom.set_attr(node, "style", s),
            None => dom.remove_attr(node, "style"),
        }
    }
    let mut restored = mutated.clone();
    restored.html = dom.serialize();
    Ok(restored)
}

pub fn classify_difficulty(target_types: u32) -> Result<Difficulty, HideError> {
    match target_types {
        0 => Err(HideError::InvalidCount),
        1 => Ok(Difficulty::Easy),
        2 => Ok(Difficulty::Medium),
        _ => Ok(Difficulty::Hard),
    }
}
