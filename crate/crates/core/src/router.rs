//! Query routing: one model call decides which handler serves a query.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::json_extract::extract_object;
use crate::prompts;
use crate::snapshot::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handler {
    Find,
    Guide,
    Hide,
    ImageFind,
    PdfFind,
}

impl Handler {
    pub const ALL: [Handler; 5] = [Handler::Find, Handler::Guide, Handler::Hide, Handler::ImageFind, Handler::PdfFind];

    pub fn as_str(self) -> &'static str {
        match self {
            Handler::Find => "find",
            Handler::Guide => "guide",
            Handler::Hide => "hide",
            Handler::ImageFind => "image_find",
            Handler::PdfFind => "pdf_find",
        }
    }
}

impl fmt::Display for Handler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Handler {
    type Err = ParseFailure;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Handler::ALL
            .into_iter()
            .find(|h| h.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseFailure(format!("unknown handler `{s}`")))
    }
}

/// Compact page context sent with the query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageContext {
    pub page_title: String,
    pub content_type: String,
}

impl PageContext {
    pub fn new(page_title: impl Into<String>, content_type: impl Into<String>) -> Self {
        PageContext { page_title: page_title.into(), content_type: content_type.into() }
    }

    pub fn from_snapshot(snapshot: &Snapshot) -> Self {
        PageContext { page_title: snapshot.title.clone(), content_type: content_type(snapshot).to_string() }
    }
}

const VIDEO_HOSTS: &[&str] = &["youtube.com", "youtu.be", "vimeo.com", "twitch.tv", "dailymotion.com"];

/// Coarse page kind from the URL host and a couple of tag probes.
pub fn content_type(snapshot: &Snapshot) -> &'static str {
    let host = url::Url::parse(&snapshot.url)
        .ok()
        .and_then(|u| u.host_str().map(str::to_ascii_lowercase))
        .unwrap_or_default();
    let video_host = VIDEO_HOSTS.iter().any(|h| host == *h || host.ends_with(&format!(".{h}")));
    let dom = snapshot.dom();
    if video_host || dom.find_tag("video").is_some() {
        "video"
    } else if dom.find_tag("article").is_some() {
        "article"
    } else {
        "page"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub handler: Handler,
    pub confidence: f64,
    pub reason: String,
    pub fallback_applied: bool,
}

impl RouteDecision {
    pub fn fallback() -> Self {
        RouteDecision {
            handler: Handler::Find,
            confidence: 0.0,
            reason: "router fallback".to_string(),
            fallback_applied: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparseable route response: {0}")]
pub struct ParseFailure(pub String);

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn parse_route_response(raw: &str) -> Result<RouteDecision, ParseFailure> {
    let obj = extract_object(raw).ok_or_else(|| ParseFailure("no JSON object".into()))?;
    let handler = match obj.get("handler") {
        Some(Value::String(s)) => s.parse::<Handler>()?,
        other => return Err(ParseFailure(format!("handler must be a string, got {other:?}"))),
    };
    let confidence = match obj.get("confidence") {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| ParseFailure("confidence out of range".into()))?,
        other => return Err(ParseFailure(format!("confidence must be a number, got {other:?}"))),
    };
    let reason = match obj.get("reason") {
        Some(Value::String(s)) => s.clone(),
        other => return Err(ParseFailure(format!("reason must be a string, got {other:?}"))),
    };
    Ok(RouteDecision { handler, confidence: confidence.clamp(0.0, 1.0), reason, fallback_applied: false })
}

pub fn route_request(query: &str, context: &PageContext, gateway: &Gateway) -> ChatRequest {
    gateway.request(vec![
        ChatMessage::system(prompts::ROUTER_SYSTEM),
        ChatMessage::user(prompts::router_user(query, &context.page_title, &context.content_type)),
    ])
}

/// Classifies a query. Malformed model output never errors: it falls back
/// to `find` with zero confidence.
pub fn classify(query: &str, context: &PageContext, gateway: &Gateway) -> Result<RouteDecision, RouterError> {
    if query.trim().is_empty() {
        return Err(RouterError::EmptyQuery);
    }
    let response = gateway.complete(&route_request(query, context, gateway))?;
    Ok(decide(&response.text))
}

/// Parse-or-fallback over a raw model response.
pub fn decide(raw: &str) -> RouteDecision {
    match parse_route_response(raw) {
        Ok(d) => d,
        Err(e) => {
            tracing::warn!(error = %e, "router output rejected, falling back to find");
            RouteDecision::fallback()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{StoreMode, TranscriptStore};
    use std::sync::Arc;

    #[test]
    fn parses_prompt_examples() {
        let d = parse_route_response(
            r#"{"handler":"guide","confidence":0.9,"reason":"How-to question needing step-by-step guidance"}"#,
        )
        .unwrap();
        assert_eq!((d.handler, d.confidence, d.fallback_applied), (Handler::Guide, 0.9, false));

        let d = parse_route_response("```json\n{\"handler\":\"hide\",\"confidence\":1.4,\"reason\":\"x\"}\n```").unwrap();
        assert_eq!((d.handler, d.confidence), (Handler::Hide, 1.0));

        let d = parse_route_response(r#"{"handler":"pdf_find","confidence":-3,"reason":""}"#).unwrap();
        assert_eq!((d.handler, d.confidence), (Handler::PdfFind, 0.0));
    }

    #[test]
    fn rejects_malformed_output() {
        for raw in [
            "handler=find",
            "I think guide",
            r#"{"handler":"search","confidence":0.5,"reason":"x"}"#,
            r#"{"handler":"find","confidence":"high","reason":"x"}"#,
            r#"{"handler":3,"confidence":0.5,"reason":"x"}"#,
            r#"{"handler":"find","confidence":0.5}"#,
            r#"{"handler":"find","confidence":0.5,"reason":"x""#,
        ] {
            assert!(parse_route_response(raw).is_err(), "{raw}");
            assert_eq!(decide(raw), RouteDecision::fallback());
        }
    }

    #[test]
    fn content_type_probes() {
        let page = |html: &str, url: &str| Snapshot::new(html, url, "t", None, None).unwrap().0;
        assert_eq!(content_type(&page("<p>x</p>", "https://www.youtube.com/watch?v=1")), "video");
        assert_eq!(content_type(&page("<video></video>", "https://a.test/")), "video");
        assert_eq!(content_type(&page("<article><p>x</p></article>", "https://a.test/")), "article");
        assert_eq!(content_type(&page("<p>x</p>", "https://notyoutube.com/")), "page");
    }

    #[test]
    fn classify_falls_back_on_prose_and_rejects_empty_query() {
        let store = Arc::new(TranscriptStore::in_memory(StoreMode::Replay));
        let gw = Gateway::replay(store.clone());
        let ctx = PageContext::default();
        let req = route_request("hmm", &ctx, &gw);
        store.seed(&req, "I think guide").unwrap();
        assert_eq!(classify("hmm", &ctx, &gw).unwrap(), RouteDecision::fallback());
        assert!(matches!(classify("  ", &ctx, &gw), Err(RouterError::EmptyQuery)));
        assert!(matches!(classify("unseen", &ctx, &gw), Err(RouterError::Gateway(GatewayError::ReplayMiss { .. }))));
    }
}
