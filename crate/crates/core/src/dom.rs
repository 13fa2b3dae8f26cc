//! Owned, arena-backed document tree.
//!
//! Pages are parsed with a browser-grade (html5ever) tree builder and copied
//! into a plain arena so the result is `Send + Sync`, cheap to clone, and
//! mutable for style edits. Serialization follows the HTML fragment
//! serialization rules, which makes `serialize(parse(x))` the canonical form
//! of `x`.

use std::fmt;
use std::str::FromStr;

use scraper::Html;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type NodeId = usize;

const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "basefont", "bgsound", "br", "col", "embed", "frame", "hr", "img", "input",
    "keygen", "link", "meta", "param", "source", "track", "wbr",
];

const RAW_TEXT_PARENTS: &[&str] = &[
    "style", "script", "xmp", "iframe", "noembed", "noframes", "plaintext", "noscript",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeData {
    Document,
    Doctype { name: String },
    Comment(String),
    Text(String),
    Element { name: String, attrs: Vec<(String, String)> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub data: NodeData,
}

/// A parsed document. Node 0 is always the document root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dom {
    nodes: Vec<Node>,
}

impl Dom {
    pub fn parse(html: &str) -> Self {
        let parsed = Html::parse_document(html);
        let mut nodes = vec![Node { parent: None, children: Vec::new(), data: NodeData::Document }];
        // (source node, arena parent)
        let mut stack: Vec<(ego_tree::NodeRef<'_, scraper::Node>, NodeId)> = parsed
            .tree
            .root()
            .children()
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .map(|c| (c, 0))
            .collect();

        while let Some((src, parent)) = stack.pop() {
            let data = match src.value() {
                scraper::Node::Document => None,
                // Template contents live in a fragment hung off the template element.
                scraper::Node::Fragment => {
                    for child in src.children().collect::<Vec<_>>().into_iter().rev() {
                        stack.push((child, parent));
                    }
                    continue;
                }
                scraper::Node::Doctype(d) => Some(NodeData::Doctype { name: d.name().to_string() }),
                scraper::Node::Comment(c) => Some(NodeData::Comment(c.comment.to_string())),
                scraper::Node::Text(t) => Some(NodeData::Text(t.text.to_string())),
                scraper::Node::Element(e) => Some(NodeData::Element {
                    name: e.name().to_string(),
                    attrs: e
                        .attrs
                        .iter()
                        .map(|(q, v)| {
                            let name = match &q.prefix {
                                Some(p) => format!("{}:{}", p, q.local),
                                None => q.local.to_string(),
                            };
                            (name, v.to_string())
                        })
                        .collect(),
                }),
                scraper::Node::ProcessingInstruction(_) => None,
            };
            let Some(data) = data else { continue };
            // html5ever may emit adjacent text nodes; merge them so the tree is canonical.
            if let NodeData::Text(t) = &data {
                if let Some(&last) = nodes[parent].children.last() {
                    if let NodeData::Text(prev) = &mut nodes[last].data {
                        prev.push_str(t);
                        continue;
                    }
                }
            }
            let id = nodes.len();
            nodes.push(Node { parent: Some(parent), children: Vec::new(), data });
            nodes[parent].children.push(id);
            for child in src.children().collect::<Vec<_>>().into_iter().rev() {
                stack.push((child, id));
            }
        }
        Dom { nodes }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn is_element(&self, id: NodeId) -> bool {
        matches!(self.nodes[id].data, NodeData::Element { .. })
    }

    /// Local tag name, lowercased for HTML elements.
    pub fn tag(&self, id: NodeId) -> Option<&str> {
        match &self.nodes[id].data {
            NodeData::Element { name, .. } => Some(name.as_str()),
            _ => None,
        }
    }

    pub fn attr(&self, id: NodeId, name: &str) -> Option<&str> {
        match &self.nodes[id].data {
            NodeData::Element { attrs, .. } => attrs
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(name))
                .map(|(_, v)| v.as_str()),
            _ => None,
        }
    }

    pub fn attrs(&self, id: NodeId) -> &[(String, String)] {
        match &self.nodes[id].data {
            NodeData::Element { attrs, .. } => attrs,
            _ => &[],
        }
    }

    /// Sets an attribute in place, appending it when absent. No-op on non-elements.
    pub fn set_attr(&mut self, id: NodeId, name: &str, value: &str) {
        if let NodeData::Element { attrs, .. } = &mut self.nodes[id].data {
            match attrs.iter_mut().find(|(k, _)| k.eq_ignore_ascii_case(name)) {
                Some(slot) => slot.1 = value.to_string(),
                None => attrs.push((name.to_string(), value.to_string())),
            }
        }
    }

    pub fn remove_attr(&mut self, id: NodeId, name: &str) {
        if let NodeData::Element { attrs, .. } = &mut self.nodes[id].data {
            attrs.retain(|(k, _)| !k.eq_ignore_ascii_case(name));
        }
    }

    /// All nodes in document pre-order, root first.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev());
        }
        out
    }

    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(self.nodes[id].parent, move |&p| self.nodes[p].parent)
    }

    /// Concatenation of the node's direct text children (not descendants).
    pub fn direct_text(&self, id: NodeId) -> String {
        let mut s = String::new();
        for &c in &self.nodes[id].children {
            if let NodeData::Text(t) = &self.nodes[c].data {
                s.push_str(t);
            }
        }
        s
    }

    /// First element with the given tag in document order.
    pub fn find_tag(&self, tag: &str) -> Option<NodeId> {
        self.preorder().into_iter().find(|&id| self.tag(id) == Some(tag))
    }

    pub fn path_of(&self, id: NodeId) -> Option<NodePath> {
        if !self.is_element(id) {
            return None;
        }
        let mut steps = Vec::new();
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            let tag = self.tag(cur)?.to_string();
            let ordinal = self.nodes[parent]
                .children
                .iter()
                .take_while(|&&s| s != cur)
                .filter(|&&s| self.tag(s) == Some(tag.as_str()))
                .count()
                + 1;
            steps.push(PathStep { tag, ordinal });
            cur = parent;
        }
        steps.reverse();
        Some(NodePath(steps))
    }

    pub fn resolve(&self, path: &NodePath) -> Option<NodeId> {
        if path.0.is_empty() {
            return None;
        }
        let mut cur = self.root();
        for step in &path.0 {
            cur = *self.nodes[cur]
                .children
                .iter()
                .filter(|&&c| self.tag(c) == Some(step.tag.as_str()))
                .nth(step.ordinal.checked_sub(1)?)?;
        }
        Some(cur)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for &c in &self.nodes[0].children {
            self.write_node(c, &mut out);
        }
        out
    }

    /// Outer serialization of a single node.
    pub fn serialize_node(&self, id: NodeId) -> String {
        let mut out = String::new();
        self.write_node(id, &mut out);
        out
    }

    fn write_node(&self, id: NodeId, out: &mut String) {
        // Explicit stack of (node, closing) to survive very deep trees.
        let mut stack = vec![(id, false)];
        while let Some((id, closing)) = stack.pop() {
            let node = &self.nodes[id];
            match &node.data {
                NodeData::Document => {
                    for &c in node.children.iter().rev() {
                        stack.push((c, false));
                    }
                }
                NodeData::Doctype { name } => {
                    out.push_str("<!DOCTYPE ");
                    out.push_str(name);
                    out.push('>');
                }
                NodeData::Comment(c) => {
                    out.push_str("<!--");
                    out.push_str(c);
                    out.push_str("-->");
                }
                NodeData::Text(t) => {
                    let raw = node
                        .parent
                        .and_then(|p| self.tag(p))
                        .is_some_and(|p| RAW_TEXT_PARENTS.contains(&p));
                    if raw {
                        out.push_str(t);
                    } else {
                        escape_text(t, out);
                    }
                }
                NodeData::Element { name, attrs } => {
                    if closing {
                        out.push_str("</");
                        out.push_str(name);
                        out.push('>');
                        continue;
                    }
                    out.push('<');
                    out.push_str(name);
                    for (k, v) in attrs {
                        out.push(' ');
                        out.push_str(k);
                        out.push_str("=\"");
                        escape_attr(v, out);
                        out.push('"');
                    }
                    out.push('>');
                    if VOID_ELEMENTS.contains(&name.as_str()) {
                        continue;
                    }
                    // The parser strips one leading newline after these; put it back.
                    if matches!(name.as_str(), "pre" | "textarea" | "listing") {
                        if let Some(&first) = node.children.first() {
                            if let NodeData::Text(t) = &self.nodes[first].data {
                                if t.starts_with('\n') {
                                    out.push('\n');
                                }
                            }
                        }
                    }
                    stack.push((id, true));
                    for &c in node.children.iter().rev() {
                        stack.push((c, false));
                    }
                }
            }
        }
    }
}

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '\u{a0}' => out.push_str("&nbsp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
}

fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '\u{a0}' => out.push_str("&nbsp;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
}

/// Canonical form of an HTML document: parse, then re-serialize.
pub fn canonicalize(html: &str) -> String {
    Dom::parse(html).serialize()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathStep {
    pub tag: String,
    /// 1-based position among element siblings sharing `tag`.
    pub ordinal: usize,
}

/// Root-to-node address of an element, written `/html[1]/body[1]/p[2]`.
///
/// Paths depend only on the element tree, never on which elements the
/// indexer chose to number, so they stay valid as gold labels and mutation
/// keys across indexer changes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodePath(pub Vec<PathStep>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid node path `{0}`")]
pub struct NodePathParseError(pub String);

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.0 {
            write!(f, "/{}[{}]", step.tag, step.ordinal)?;
        }
        Ok(())
    }
}

impl FromStr for NodePath {
    type Err = NodePathParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || NodePathParseError(s.to_string());
        let rest = s.strip_prefix('/').ok_or_else(err)?;
        let mut steps = Vec::new();
        for seg in rest.split('/') {
            let (tag, tail) = seg.split_once('[').ok_or_else(err)?;
            let num = tail.strip_suffix(']').ok_or_else(err)?;
            let ordinal: usize = num.parse().map_err(|_| err())?;
            if tag.is_empty() || ordinal == 0 {
                return Err(err());
            }
            steps.push(PathStep { tag: tag.to_string(), ordinal });
        }
        Ok(NodePath(steps))
    }
}

impl Serialize for NodePath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodePath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_round_trip_for_every_element() {
        let dom = Dom::parse(
            "<html><body><div><p>a</p><p>b</p><span>c</span></div><div><p>d</p></div></body></html>",
        );
        for id in dom.preorder() {
            if let Some(path) = dom.path_of(id) {
                assert_eq!(dom.resolve(&path), Some(id), "{path}");
                let reparsed: NodePath = path.to_string().parse().unwrap();
                assert_eq!(reparsed, path);
            }
        }
        let p = dom.resolve(&"/html[1]/body[1]/div[1]/p[2]".parse().unwrap()).unwrap();
        assert_eq!(dom.direct_text(p), "b");
        assert!(dom.resolve(&"/html[1]/body[1]/div[3]".parse().unwrap()).is_none());
    }

    #[test]
    fn malformed_paths_rejected() {
        for bad in ["", "html[1]", "/html", "/html[0]", "/[1]", "/html[x]"] {
            assert!(bad.parse::<NodePath>().is_err(), "{bad}");
        }
    }

    #[test]
    fn serialization_is_idempotent() {
        let src = "<!doctype html><title>t &amp; u</title><p class=x data-a='1\"2'>a<b>b</b> &nbsp;c<br>d\
                   <script>if (a < b) {}</script><pre>\n\nx</pre><!-- note -->";
        let once = canonicalize(src);
        assert_eq!(canonicalize(&once), once);
        assert!(once.contains("<script>if (a < b) {}</script>"));
        assert!(once.contains("data-a=\"1&quot;2\""));
    }

    #[test]
    fn lenient_parse_recovers_unclosed_tags() {
        let dom = Dom::parse("<div><p>one<p>two</div>");
        let ps: Vec<_> = dom.preorder().into_iter().filter(|&i| dom.tag(i) == Some("p")).collect();
        assert_eq!(ps.len(), 2);
        assert_eq!(dom.direct_text(ps[1]), "two");
    }

    #[test]
    fn deep_nesting_does_not_overflow() {
        let html = format!("{}deep{}", "<div>".repeat(5000), "</div>".repeat(5000));
        let dom = Dom::parse(&html);
        let out = dom.serialize();
        assert!(out.contains("deep"));
    }
}
