//! Grounded answering with inline `[N:"phrase"]` citations.
//!
//! The model answers in prose and tags each claim with the id of a page
//! element plus the exact phrase to highlight. This module parses those
//! tokens, resolves them against the [`ElementIndex`] into a highlight
//! plan, and renders the answer with numbered anchors for the side panel.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::NodePath;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::index::{find_text_span, ElementId, ElementIndex, IndexError, MatchTier, DEFAULT_ELEM_CLIP, DEFAULT_FUZZY_MIN};
use crate::prompts;

pub const NOT_ON_PAGE: &str = "The information is not provided on this page.";

/// Highlight colors, assigned round-robin by plan position.
pub const PALETTE: [&str; 8] = [
    "#FFD54F", "#81C784", "#64B5F6", "#F06292", "#BA68C8", "#4DD0E1", "#FF8A65", "#AED581",
];

pub const ANCHOR_OPEN: char = '⟦';
pub const ANCHOR_CLOSE: char = '⟧';
pub const UNRESOLVED_MARK: &str = "⟦⚠⟧";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindConfig {
    pub content_budget: usize,
    pub index_budget: usize,
    pub elem_clip: usize,
    pub fuzzy_min: f64,
    pub history_turns: usize,
}

impl Default for FindConfig {
    fn default() -> Self {
        FindConfig {
            content_budget: 24_000,
            index_budget: 24_000,
            elem_clip: DEFAULT_ELEM_CLIP,
            fuzzy_min: DEFAULT_FUZZY_MIN,
            history_turns: 6,
        }
    }
}

#[derive(Debug, Error)]
pub enum FindError {
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A parsed citation token. Offsets are character positions in the raw answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub element_id: ElementId,
    pub phrase: String,
    pub answer_offset: usize,
    pub token_len: usize,
}

impl Citation {
    pub fn token_end(&self) -> usize {
        self.answer_offset + self.token_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Highlight {
    Span { start: usize, end: usize, tier: MatchTier, score: f64 },
    WholeElement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub element_id: ElementId,
    pub node_path: NodePath,
    pub phrase: String,
    pub highlight: Highlight,
    pub color_slot: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HighlightPlan {
    pub entries: Vec<PlanEntry>,
    pub scroll_target: Option<ElementId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCitation {
    pub citation: Citation,
    pub highlight: Highlight,
    pub color_slot: usize,
    /// 0-based position of the shared plan entry.
    pub plan_entry: usize,
}

/// A rendered citation in the display text. Ranges are character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    /// 1-based anchor number (plan position); `None` for unresolved citations.
    pub number: Option<usize>,
    pub element_id: ElementId,
    pub raw_range: (usize, usize),
    pub display_range: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalLink {
    pub label: String,
    pub url: String,
    /// Decoded `#:~:text=` fragment, when the link carries one.
    pub text_fragment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedAnswer {
    pub raw_text: String,
    pub display_text: String,
    pub anchors: Vec<Anchor>,
    pub citations: Vec<ResolvedCitation>,
    pub unresolved: Vec<Citation>,
    pub external_links: Vec<ExternalLink>,
    pub not_on_page: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindResult {
    pub answer: GroundedAnswer,
    pub plan: HighlightPlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub answer: String,
}

/// Scans for `[INT:"PHRASE"]` tokens. Inside PHRASE, `\"` and `\\` are
/// escapes; any other backslash is literal. Plain `[12]` is not a citation.
pub fn parse_citations(raw: &str) -> Vec<Citation> {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '[' {
            if let Some((citation, end)) = parse_token(&chars, i) {
                out.push(citation);
                i = end;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn parse_token(chars: &[char], start: usize) -> Option<(Citation, usize)> {
    let mut j = start + 1;
    let digits_start = j;
    while j < chars.len() && chars[j].is_ascii_digit() {
        j += 1;
    }
    if j == digits_start || j - digits_start > 9 {
        return None;
    }
    let id: ElementId = chars[digits_start..j].iter().collect::<String>().parse().ok()?;
    if id == 0 || chars.get(j) != Some(&':') || chars.get(j + 1) != Some(&'"') {
        return None;
    }
    j += 2;
    let mut phrase = String::new();
    loop {
        match *chars.get(j)? {
            '\\' if matches!(chars.get(j + 1), Some('"') | Some('\\')) => {
                phrase.push(chars[j + 1]);
                j += 2;
            }
            '"' => break,
            c => {
                phrase.push(c);
                j += 1;
            }
        }
    }
    if chars.get(j + 1) != Some(&']') || phrase.is_empty() {
        return None;
    }
    let end = j + 2;
    Some((Citation { element_id: id, phrase, answer_offset: start, token_len: end - start }, end))
}

/// Writes a citation token, escaping quotes and backslashes in the phrase.
pub fn format_citation(element_id: ElementId, phrase: &str) -> String {
    let escaped = phrase.replace('\\', "\\\\").replace('"', "\\\"");
    format!("[{element_id}:\"{escaped}\"]")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub plan: HighlightPlan,
    pub resolved: Vec<ResolvedCitation>,
    pub unresolved: Vec<Citation>,
}

pub fn resolve_citations(citations: &[Citation], index: &ElementIndex, fuzzy_min: f64) -> Resolution {
    let mut plan = HighlightPlan::default();
    let mut seen: HashMap<(ElementId, &str), usize> = HashMap::new();
    let mut resolved = Vec::new();
    let mut unresolved = Vec::new();
    for c in citations {
        let element = match index.resolve(c.element_id) {
            Ok(e) => e,
            Err(_) => {
                unresolved.push(c.clone());
                continue;
            }
        };
        let slot = *seen.entry((c.element_id, c.phrase.as_str())).or_insert_with(|| {
            let highlight = match find_text_span(element, &c.phrase, fuzzy_min) {
                Ok(m) => Highlight::Span { start: m.start, end: m.end, tier: m.tier, score: m.score },
                Err(IndexError::NoSpanMatch { .. } | IndexError::EmptyPhrase) => Highlight::WholeElement,
                Err(IndexError::UnknownElementId(_)) => unreachable!("element resolved above"),
            };
            plan.entries.push(PlanEntry {
                element_id: c.element_id,
                node_path: element.node_path.clone(),
                phrase: c.phrase.clone(),
                highlight,
                color_slot: plan.entries.len() % PALETTE.len(),
            });
            plan.entries.len() - 1
        });
        let entry = &plan.entries[slot];
        resolved.push(ResolvedCitation {
            citation: c.clone(),
            highlight: entry.highlight,
            color_slot: entry.color_slot,
            plan_entry: slot,
        });
    }
    plan.scroll_target = plan.entries.first().map(|e| e.element_id);
    Resolution { plan, resolved, unresolved }
}

/// Replaces each citation token with an anchor. When the phrase already
/// sits right before its token (`Tom Hardy [27:"Tom Hardy"]`), that copy is
/// folded into the anchor so the name is shown once.
pub fn render_display_text(raw: &str, resolved: &[ResolvedCitation], unresolved: &[Citation]) -> (String, Vec<Anchor>) {
    enum Kind {
        Anchor(usize),
        Unresolved,
    }
    let mut items: Vec<(&Citation, Kind)> = resolved
        .iter()
        .map(|r| (&r.citation, Kind::Anchor(r.plan_entry + 1)))
        .chain(unresolved.iter().map(|c| (c, Kind::Unresolved)))
        .collect();
    items.sort_by_key(|(c, _)| c.answer_offset);

    let chars: Vec<char> = raw.chars().collect();
    let mut out = String::new();
    let mut out_len = 0usize;
    let mut cursor = 0usize;
    let mut anchors = Vec::new();
    let push = |s: &str, out: &mut String, len: &mut usize| {
        out.push_str(s);
        *len += s.chars().count();
    };
    for (c, kind) in items {
        let before: String = chars[cursor..c.answer_offset].iter().collect();
        let trimmed = before.trim_end();
        let raw_start = if trimmed.ends_with(c.phrase.as_str()) {
            cursor + trimmed.chars().count() - c.phrase.chars().count()
        } else {
            c.answer_offset
        };
        let lead: String = chars[cursor..raw_start].iter().collect();
        push(&lead, &mut out, &mut out_len);
        let display_start = out_len;
        let (number, rendered) = match kind {
            Kind::Anchor(k) => (Some(k), format!("{ANCHOR_OPEN}{k}{ANCHOR_CLOSE}{}{ANCHOR_OPEN}/{k}{ANCHOR_CLOSE}", c.phrase)),
            Kind::Unresolved => (None, format!("{}{UNRESOLVED_MARK}", c.phrase)),
        };
        push(&rendered, &mut out, &mut out_len);
        anchors.push(Anchor {
            number,
            element_id: c.element_id,
            raw_range: (raw_start, c.token_end()),
            display_range: (display_start, out_len),
        });
        cursor = c.token_end();
    }
    let tail: String = chars[cursor..].iter().collect();
    out.push_str(&tail);
    (out, anchors)
}

/// Inverse of [`render_display_text`]: swaps every anchor back for the raw
/// text it replaced.
pub fn restore_raw_text(display: &str, anchors: &[Anchor], raw: &str) -> String {
    let d: Vec<char> = display.chars().collect();
    let r: Vec<char> = raw.chars().collect();
    let mut out = String::new();
    let mut cursor = 0;
    for a in anchors {
        out.extend(&d[cursor..a.display_range.0]);
        out.extend(&r[a.raw_range.0..a.raw_range.1]);
        cursor = a.display_range.1;
    }
    out.extend(&d[cursor..]);
    out
}

static MARKDOWN_LINK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"\[([^\[\]]+)\]\((https?://(?:[^\s()]|\([^\s()]*\))+)\)"#).expect("valid link regex")
});

pub fn extract_external_links(raw: &str) -> Vec<ExternalLink> {
    MARKDOWN_LINK
        .captures_iter(raw)
        .map(|cap| {
            let url = cap[2].to_string();
            let text_fragment = url.split_once("#:~:text=").map(|(_, frag)| {
                percent_encoding::percent_decode_str(frag.split('&').next().unwrap_or_default())
                    .decode_utf8_lossy()
                    .into_owned()
            });
            ExternalLink { label: cap[1].to_string(), url, text_fragment }
        })
        .collect()
}

pub fn is_not_on_page(raw: &str) -> bool {
    raw.trim_start().starts_with(NOT_ON_PAGE)
}

/// Parses, resolves and renders a raw model answer.
pub fn ground(raw: &str, index: &ElementIndex, fuzzy_min: f64) -> FindResult {
    let citations = parse_citations(raw);
    let Resolution { plan, resolved, unresolved } = resolve_citations(&citations, index, fuzzy_min);
    let (display_text, anchors) = render_display_text(raw, &resolved, &unresolved);
    FindResult {
        answer: GroundedAnswer {
            raw_text: raw.to_string(),
            display_text,
            anchors,
            citations: resolved,
            unresolved,
            external_links: extract_external_links(raw),
            not_on_page: is_not_on_page(raw),
        },
        plan,
    }
}

pub fn find_request(
    query: &str,
    index: &ElementIndex,
    history: &[Turn],
    gateway: &Gateway,
    config: &FindConfig,
) -> ChatRequest {
    let system = prompts::find_system(
        &index.page_content(config.content_budget),
        &index.to_prompt(config.index_budget, config.elem_clip),
    );
    let mut messages = vec![ChatMessage::system(system)];
    let skip = history.len().saturating_sub(config.history_turns);
    for turn in &history[skip..] {
        messages.push(ChatMessage::user(turn.query.clone()));
        messages.push(ChatMessage::assistant(turn.answer.clone()));
    }
    messages.push(ChatMessage::user(query));
    gateway.request(messages)
}

pub fn answer(
    query: &str,
    index: &ElementIndex,
    history: &[Turn],
    gateway: &Gateway,
    config: &FindConfig,
) -> Result<FindResult, FindError> {
    if query.trim().is_empty() {
        return Err(FindError::EmptyQuery);
    }
    let response = gateway.complete(&find_request(query, index, history, gateway, config))?;
    Ok(ground(&response.text, index, config.fuzzy_min))
}
