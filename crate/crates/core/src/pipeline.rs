//! Route a query, then run the chosen handler.

use thiserror::Error;

use crate::find::{self, FindConfig, FindError, FindResult, Turn};
use crate::gateway::Gateway;
use crate::guide::{self, GuideConfig, GuideError, GuideSession};
use crate::hide::{self, HideConfig, HideError, HideProposal};
use crate::index::{build_index, ElementIndex};
use crate::router::{self, Handler, PageContext, RouteDecision, RouterError};
use crate::snapshot::Snapshot;

/// Everything a handler may need. `snapshots[0]` is the current page; guide
/// sessions walk the rest.
pub struct RequestBundle<'a> {
    pub query: &'a str,
    pub snapshots: &'a [Snapshot],
    pub index: &'a ElementIndex,
    pub history: &'a [Turn],
    pub find: FindConfig,
    pub guide: GuideConfig,
    pub hide: HideConfig,
}

impl<'a> RequestBundle<'a> {
    pub fn new(query: &'a str, snapshots: &'a [Snapshot], index: &'a ElementIndex) -> Self {
        RequestBundle { query, snapshots, index, history: &[], find: FindConfig::default(), guide: GuideConfig::default(), hide: HideConfig::default() }
    }
}

#[derive(Debug)]
pub enum HandlerOutput {
    Find(FindResult),
    /// A started session with its first step staged.
    Guide(Box<GuideSession>),
    Hide(HideProposal),
    NotImplemented(Handler),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Find(#[from] FindError),
    #[error(transparent)]
    Guide(#[from] GuideError),
    #[error(transparent)]
    Hide(#[from] HideError),
}

pub fn dispatch(decision: &RouteDecision, bundle: &RequestBundle<'_>, gateway: &Gateway) -> Result<HandlerOutput, PipelineError> {
    match decision.handler {
        Handler::Find => Ok(HandlerOutput::Find(find::answer(bundle.query, bundle.index, bundle.history, gateway, &bundle.find)?)),
        Handler::Hide => Ok(HandlerOutput::Hide(hide::propose(bundle.query, bundle.index, gateway, &bundle.hide)?)),
        Handler::Guide => {
            let mut session = guide::start_session(bundle.query, bundle.snapshots.to_vec(), bundle.guide.clone())?;
            session.next_step(gateway)?;
            Ok(HandlerOutput::Guide(Box::new(session)))
        }
        Handler::ImageFind | Handler::PdfFind => Ok(HandlerOutput::NotImplemented(decision.handler)),
    }
}

/// Classifies the query against the first snapshot and dispatches.
pub fn run(query: &str, snapshots: &[Snapshot], gateway: &Gateway) -> Result<(RouteDecision, HandlerOutput), PipelineError> {
    let first = snapshots.first().ok_or(GuideError::EmptySequence)?;
    let guide_config = GuideConfig::default();
    let index = build_index(first, &guide_config.index);
    let decision = router::classify(query, &PageContext::from_snapshot(first), gateway)?;
    let output = dispatch(&decision, &RequestBundle::new(query, snapshots, &index), gateway)?;
    Ok((decision, output))
}
