//! Set-of-Marks element index over a snapshot.
//!
//! Every visible element that carries direct text or is interactive gets a
//! dense integer id in document order. The index is what the model sees
//! (via [`ElementIndex::to_prompt`]) and what citations, guide targets and
//! hide candidates refer back to.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{Dom, NodeId, NodePath};
use crate::snapshot::{LayoutBox, Snapshot, SnapshotRef};

pub type ElementId = u32;

pub const DEFAULT_ELEM_CLIP: usize = 120;
pub const DEFAULT_LINE_HEIGHT: f64 = 20.0;
pub const DEFAULT_FUZZY_MIN: f64 = 0.8;

const EXCLUDED_SUBTREES: &[&str] = &["script", "style", "template", "head", "noscript"];

const INTERACTIVE_ROLES: &[&str] = &[
    "button", "link", "checkbox", "radio", "menuitem", "menuitemcheckbox", "menuitemradio", "tab",
    "switch", "option", "textbox", "combobox", "searchbox", "slider", "spinbutton", "treeitem",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("unknown element id {0}")]
    UnknownElementId(ElementId),
    #[error("no span in element {element_id} matches {phrase:?}")]
    NoSpanMatch { element_id: ElementId, phrase: String },
    #[error("phrase is empty")]
    EmptyPhrase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub elem_clip: usize,
    pub line_height: f64,
    pub fuzzy_min: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            elem_clip: DEFAULT_ELEM_CLIP,
            line_height: DEFAULT_LINE_HEIGHT,
            fuzzy_min: DEFAULT_FUZZY_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedElement {
    pub id: ElementId,
    pub text: String,
    pub tag: String,
    pub bbox: LayoutBox,
    pub interactive: bool,
    pub node_path: NodePath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementIndex {
    pub elements: Vec<IndexedElement>,
    pub snapshot_ref: SnapshotRef,
}

impl ElementIndex {
    pub fn m(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn resolve(&self, id: ElementId) -> Result<&IndexedElement, IndexError> {
        (id as usize)
            .checked_sub(1)
            .and_then(|i| self.elements.get(i))
            .ok_or(IndexError::UnknownElementId(id))
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.resolve(id).is_ok()
    }

    pub fn by_path(&self, path: &NodePath) -> Option<&IndexedElement> {
        self.elements.iter().find(|e| &e.node_path == path)
    }

    /// Element-wise equality ignoring which snapshot the index came from.
    pub fn same_elements(&self, other: &ElementIndex) -> bool {
        self.elements == other.elements
    }

    /// One `[id] (tag) text` line per element, tail-dropped to fit `char_budget`.
    pub fn to_prompt(&self, char_budget: usize, elem_clip: usize) -> String {
        serialize_index(self, char_budget, elem_clip)
    }

    /// Element texts in document order, one per line, clipped to `char_budget`.
    pub fn page_content(&self, char_budget: usize) -> String {
        let mut out = String::new();
        let mut used = 0;
        for e in self.elements.iter().filter(|e| !e.text.is_empty()) {
            let sep = usize::from(!out.is_empty());
            let len = e.text.chars().count();
            if used + sep + len > char_budget {
                let room = char_budget.saturating_sub(used + sep);
                if room > 0 {
                    if sep == 1 {
                        out.push('\n');
                    }
                    out.extend(e.text.chars().take(room));
                }
                break;
            }
            if sep == 1 {
                out.push('\n');
            }
            out.push_str(&e.text);
            used += sep + len;
        }
        out
    }
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn style_hides(style: &str) -> bool {
    style.split(';').filter_map(|decl| decl.split_once(':')).any(|(prop, value)| {
        let prop = prop.trim().to_ascii_lowercase();
        let value = value.trim().to_ascii_lowercase();
        let value = value.trim_end_matches("!important").trim();
        (prop == "display" && value == "none") || (prop == "visibility" && value == "hidden")
    })
}

fn hides_self(dom: &Dom, id: NodeId, layout: Option<&LayoutBox>) -> bool {
    if dom.attr(id, "hidden").is_some() {
        return true;
    }
    if dom.attr(id, "aria-hidden").is_some_and(|v| v.trim().eq_ignore_ascii_case("true")) {
        return true;
    }
    if dom.attr(id, "style").is_some_and(style_hides) {
        return true;
    }
    if dom.tag(id) == Some("input") && dom.attr(id, "type").is_some_and(|t| t.eq_ignore_ascii_case("hidden")) {
        return true;
    }
    layout.is_some_and(|b| !b.visible || !b.has_area())
}

fn is_interactive(dom: &Dom, id: NodeId) -> bool {
    let tag = dom.tag(id).unwrap_or_default();
    let by_tag = match tag {
        "a" => dom.attr(id, "href").is_some(),
        "button" | "input" | "select" | "textarea" | "summary" => true,
        _ => false,
    };
    by_tag
        || dom
            .attr(id, "role")
            .is_some_and(|r| INTERACTIVE_ROLES.contains(&r.trim().to_ascii_lowercase().as_str()))
        || dom.attrs(id).iter().any(|(k, _)| k.len() > 2 && k.to_ascii_lowercase().starts_with("on"))
}

fn interactive_label(dom: &Dom, id: NodeId) -> String {
    ["aria-label", "title", "placeholder", "value", "alt"]
        .iter()
        .filter_map(|a| dom.attr(id, a))
        .map(collapse_whitespace)
        .find(|s| !s.is_empty())
        .unwrap_or_default()
}

pub fn build_index(snapshot: &Snapshot, config: &IndexConfig) -> ElementIndex {
    let dom = snapshot.dom();
    let mut elements = Vec::new();
    // (node, hidden-by-ancestor)
    let mut stack: Vec<(NodeId, bool)> = vec![(dom.root(), false)];
    while let Some((id, hidden_above)) = stack.pop() {
        let mut hidden = hidden_above;
        if let Some(tag) = dom.tag(id) {
            let tag = tag.to_ascii_lowercase();
            if EXCLUDED_SUBTREES.contains(&tag.as_str()) {
                continue;
            }
            let path = dom.path_of(id).expect("element has a path");
            let layout = snapshot.layout_for(&path);
            hidden = hidden || hides_self(&dom, id, layout);
            if !hidden {
                let mut text = collapse_whitespace(&dom.direct_text(id));
                let interactive = is_interactive(&dom, id);
                if text.is_empty() && interactive {
                    text = interactive_label(&dom, id);
                }
                if !text.is_empty() || interactive {
                    let rank = elements.len();
                    let bbox = layout.copied().unwrap_or(LayoutBox {
                        x: 0.0,
                        y: rank as f64 * config.line_height,
                        w: 0.0,
                        h: config.line_height,
                        visible: true,
                    });
                    elements.push(IndexedElement {
                        id: rank as ElementId + 1,
                        text,
                        tag,
                        bbox,
                        interactive,
                        node_path: path,
                    });
                }
            }
        }
        if !hidden {
            for &c in dom.node(id).children.iter().rev() {
                stack.push((c, hidden));
            }
        }
    }
    ElementIndex { elements, snapshot_ref: snapshot.digest() }
}

fn clip(text: &str, max: usize) -> String {
    if text.chars().count() > max {
        let mut s: String = text.chars().take(max).collect();
        s.push('…');
        s
    } else {
        text.to_string()
    }
}

pub fn serialize_index(index: &ElementIndex, char_budget: usize, elem_clip: usize) -> String {
    let mut out = String::new();
    let mut used = 0usize;
    let mut written = 0usize;
    for e in &index.elements {
        let line = format!("[{}] ({}) {}", e.id, e.tag, clip(&e.text, elem_clip));
        let line = line.trim_end();
        let sep = usize::from(written > 0);
        let len = line.chars().count();
        if used + sep + len > char_budget {
            break;
        }
        if sep == 1 {
            out.push('\n');
        }
        out.push_str(line);
        used += sep + len;
        written += 1;
    }
    let rest = index.m() - written;
    if rest > 0 {
        if written > 0 {
            out.push('\n');
        }
        out.push_str(&format!("…({rest} more elements)"));
    }
    out
}

pub fn resolve_element(index: &ElementIndex, id: ElementId) -> Result<&IndexedElement, IndexError> {
    index.resolve(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchTier {
    Exact,
    CaseInsensitive,
    WhitespaceNormalized,
    Fuzzy,
}

/// A located phrase inside an element's text. Offsets count characters
/// (Unicode scalar values), half-open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanMatch {
    pub element_id: ElementId,
    pub start: usize,
    pub end: usize,
    pub tier: MatchTier,
    pub score: f64,
}

pub fn find_text_span(element: &IndexedElement, phrase: &str, fuzzy_min: f64) -> Result<SpanMatch, IndexError> {
    let (start, end, tier, score) = locate(&element.text, phrase, fuzzy_min)?.ok_or_else(|| {
        IndexError::NoSpanMatch { element_id: element.id, phrase: phrase.to_string() }
    })?;
    Ok(SpanMatch { element_id: element.id, start, end, tier, score })
}

/// Runs the matching ladder over raw text: exact, case-insensitive,
/// whitespace-collapsed (also case-insensitive), then token-set Jaccard.
pub fn locate(
    text: &str,
    phrase: &str,
    fuzzy_min: f64,
) -> Result<Option<(usize, usize, MatchTier, f64)>, IndexError> {
    if phrase.is_empty() {
        return Err(IndexError::EmptyPhrase);
    }
    let text_chars: Vec<char> = text.chars().collect();
    let phrase_chars: Vec<char> = phrase.chars().collect();

    if let Some(byte) = text.find(phrase) {
        let start = text[..byte].chars().count();
        return Ok(Some((start, start + phrase_chars.len(), MatchTier::Exact, 1.0)));
    }
    if let Some(start) = window_search(&text_chars, &phrase_chars) {
        return Ok(Some((start, start + phrase_chars.len(), MatchTier::CaseInsensitive, 1.0)));
    }

    let (norm, spans) = collapse_with_map(&text_chars);
    let norm_phrase: Vec<char> = collapse_whitespace(phrase).chars().collect();
    if !norm_phrase.is_empty() {
        if let Some(ns) = window_search(&norm, &norm_phrase) {
            let start = spans[ns].0;
            let end = spans[ns + norm_phrase.len() - 1].1;
            return Ok(Some((start, end, MatchTier::WhitespaceNormalized, 1.0)));
        }
    }

    Ok(best_jaccard_window(text, phrase, fuzzy_min)
        .filter(|w| w.score >= fuzzy_min)
        .map(|w| (w.start, w.end, MatchTier::Fuzzy, w.score)))
}

fn chars_eq_ci(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

fn window_search(hay: &[char], needle: &[char]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len())
        .find(|&i| hay[i..i + needle.len()].iter().zip(needle).all(|(&a, &b)| chars_eq_ci(a, b)))
}

/// Whitespace-collapsed text plus, per output char, its source char range.
fn collapse_with_map(chars: &[char]) -> (Vec<char>, Vec<(usize, usize)>) {
    let mut out = Vec::with_capacity(chars.len());
    let mut spans = Vec::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            let start = i;
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            if !out.is_empty() && i < chars.len() {
                out.push(' ');
                spans.push((start, i));
            }
        } else {
            out.push(chars[i]);
            spans.push((i, i + 1));
            i += 1;
        }
    }
    (out, spans)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub key: String,
    pub start: usize,
    pub end: usize,
}

/// Whitespace-delimited tokens keyed by their lowercase form with edge
/// punctuation trimmed. Pure-punctuation tokens are skipped.
pub fn fuzzy_tokens(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    let chars: Vec<char> = text.chars().collect();
    for i in 0..=chars.len() {
        let ws = i == chars.len() || chars[i].is_whitespace();
        match (ws, start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                let raw: String = chars[s..i].iter().collect();
                let key = raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
                if !key.is_empty() {
                    out.push(Token { key, start: s, end: i });
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JaccardWindow {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Highest-scoring contiguous token window; ties go to the leftmost, then
/// the shortest. Windows that cannot reach `fuzzy_min` are not extended.
pub fn best_jaccard_window(text: &str, phrase: &str, fuzzy_min: f64) -> Option<JaccardWindow> {
    use std::collections::BTreeSet;
    let target: BTreeSet<String> = fuzzy_tokens(phrase).into_iter().map(|t| t.key).collect();
    if target.is_empty() {
        return None;
    }
    let tokens = fuzzy_tokens(text);
    let mut best: Option<JaccardWindow> = None;
    for i in 0..tokens.len() {
        let mut window: BTreeSet<&str> = BTreeSet::new();
        for j in i..tokens.len() {
            window.insert(&tokens[j].key);
            if window.len() as f64 * fuzzy_min > target.len() as f64 {
                break;
            }
            let inter = window.iter().filter(|k| target.contains(**k)).count();
            let union = window.len() + target.len() - inter;
            let score = inter as f64 / union as f64;
            if best.is_none_or(|b| score > b.score) {
                best = Some(JaccardWindow { start: tokens[i].start, end: tokens[j].end, score });
            }
        }
    }
    best
}
