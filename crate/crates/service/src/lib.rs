//! Local HTTP service exposing the engine to the browser panel.
//!
//! All routes live under `/v1` and require the `x-pageguide-secret` header.
//! Bodies are JSON; errors are [`ApiError`] bodies with a matching status.
//! Model calls are blocking and run on the blocking pool. Guide sessions are
//! single-writer: a request that finds its session busy gets `409 Busy`.

mod error;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use pageguide_core::find::{self, Anchor, ExternalLink, FindConfig, FindResult, HighlightPlan, ResolvedCitation, Turn};
use pageguide_core::gateway::Gateway;
use pageguide_core::guide::{self, ConfirmOutcome, GuideConfig, GuideSession, GuideStep, SessionState, StepCard};
use pageguide_core::hide::{self, HideConfig, HideProposal, MutationRecord, HIDE_DECLARATION};
use pageguide_core::index::{build_index, ElementId, ElementIndex, IndexConfig};
use pageguide_core::router::{self, PageContext, RouteDecision};
use pageguide_core::snapshot::{LayoutBox, Snapshot};
use pageguide_core::NodePath;

pub use error::{ApiError, CODES};

pub const SECRET_HEADER: &str = "x-pageguide-secret";
pub const DEFAULT_BODY_LIMIT: usize = 8 * 1024 * 1024;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub body_limit: usize,
    pub session_ttl: Duration,
    pub index: IndexConfig,
    pub find: FindConfig,
    pub guide: GuideConfig,
    pub hide: HideConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            body_limit: DEFAULT_BODY_LIMIT,
            session_ttl: DEFAULT_SESSION_TTL,
            index: IndexConfig::default(),
            find: FindConfig::default(),
            guide: GuideConfig::default(),
            hide: HideConfig::default(),
        }
    }
}

struct StoredSnapshot {
    snapshot: Snapshot,
    index: OnceLock<Arc<ElementIndex>>,
    hide: Mutex<Option<HideState>>,
}

struct HideState {
    proposal: HideProposal,
    applied: bool,
}

struct SessionSlot {
    session: Arc<tokio::sync::Mutex<GuideSession>>,
    last_used: Mutex<Instant>,
}

pub struct AppState {
    gateway: Gateway,
    secret: String,
    config: ServiceConfig,
    snapshots: RwLock<HashMap<String, Arc<StoredSnapshot>>>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

/// 128 random bits, hex encoded.
pub fn random_id() -> String {
    hex::encode(rand::random::<[u8; 16]>())
}

impl AppState {
    pub fn new(gateway: Gateway, secret: impl Into<String>, config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            gateway,
            secret: secret.into(),
            config,
            snapshots: RwLock::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
        })
    }

    pub fn secret(&self) -> &str {
        &self.secret
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// Registers a snapshot directly, as an upload would.
    pub fn insert_snapshot(&self, snapshot: Snapshot) -> String {
        let id = random_id();
        let stored = StoredSnapshot { snapshot, index: OnceLock::new(), hide: Mutex::new(None) };
        self.snapshots.write().expect("snapshot lock").insert(id.clone(), Arc::new(stored));
        id
    }

    fn snapshot(&self, id: &str) -> Result<Arc<StoredSnapshot>, ApiError> {
        self.snapshots.read().expect("snapshot lock").get(id).cloned().ok_or_else(|| ApiError::unknown_snapshot(id))
    }

    fn index_of(&self, stored: &StoredSnapshot) -> Arc<ElementIndex> {
        stored.index.get_or_init(|| Arc::new(build_index(&stored.snapshot, &self.config.index))).clone()
    }

    fn session(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.purge_expired();
        let slot = self.sessions.read().expect("session lock").get(id).cloned().ok_or_else(|| ApiError::unknown_session(id))?;
        *slot.last_used.lock().expect("slot lock") = Instant::now();
        Ok(slot)
    }

    fn purge_expired(&self) {
        let ttl = self.config.session_ttl;
        self.sessions
            .write()
            .expect("session lock")
            .retain(|_, slot| slot.last_used.lock().expect("slot lock").elapsed() < ttl);
    }
}

// ---- wire types ------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutItem {
    pub path: NodePath,
    #[serde(flatten)]
    pub layout: LayoutBox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotUpload {
    pub html: String,
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub layout: Option<Vec<LayoutItem>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotCreated {
    pub snapshot_id: String,
    pub dropped_layout: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteBody {
    pub snapshot_id: String,
    pub query: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FindBody {
    pub snapshot_id: String,
    pub query: String,
    #[serde(default)]
    pub history: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindResponse {
    pub raw_text: String,
    pub display_text: String,
    pub anchors: Vec<Anchor>,
    pub citations: Vec<ResolvedCitation>,
    pub unresolved: Vec<find::Citation>,
    pub external_links: Vec<ExternalLink>,
    pub not_on_page: bool,
    pub highlight_plan: HighlightPlan,
    pub palette: Vec<String>,
}

impl From<FindResult> for FindResponse {
    fn from(r: FindResult) -> Self {
        let a = r.answer;
        FindResponse {
            raw_text: a.raw_text,
            display_text: a.display_text,
            anchors: a.anchors,
            citations: a.citations,
            unresolved: a.unresolved,
            external_links: a.external_links,
            not_on_page: a.not_on_page,
            highlight_plan: r.plan,
            palette: find::PALETTE.iter().map(|c| c.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuideStartBody {
    pub query: String,
    /// The page the session starts on (live mode).
    #[serde(default)]
    pub snapshot_id: Option<String>,
    /// A prerecorded sequence; confirm then advances through it.
    #[serde(default)]
    pub snapshot_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GuideConfirmBody {
    /// Fresh capture of the page after the user acted (live mode).
    #[serde(default)]
    pub snapshot_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideStatus {
    pub session_id: String,
    pub state: SessionState,
    pub steps_confirmed: usize,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideStepResponse {
    pub session_id: String,
    pub state: SessionState,
    pub step: GuideStep,
    pub card: StepCard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideConfirmResponse {
    pub session_id: String,
    #[serde(flatten)]
    pub outcome: ConfirmOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HideProposeBody {
    pub snapshot_id: String,
    pub request: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HideApplyBody {
    pub snapshot_id: String,
    pub confirmed_ids: BTreeSet<ElementId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HideDirective {
    pub element_id: ElementId,
    pub node_path: NodePath,
    pub set_style: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HideApplyResponse {
    pub directives: Vec<HideDirective>,
    pub mutated_snapshot_id: String,
    pub record: MutationRecord,
}

// ---- plumbing --------------------------------------------------------------

async fn read_json<T: DeserializeOwned>(state: &AppState, body: Body) -> Result<T, ApiError> {
    let bytes: Bytes = axum::body::to_bytes(body, state.config.body_limit).await.map_err(|_| {
        ApiError::new("TooLarge", format!("request body exceeds {} bytes", state.config.body_limit))
            .with_detail(json!({ "limit": state.config.body_limit }))
    })?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return serde_json::from_slice(b"{}").map_err(|e| ApiError::new("BadRequest", e.to_string()));
    }
    serde_json::from_slice(&bytes).map_err(|e| ApiError::new("BadRequest", format!("invalid JSON body: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::new("Internal", e.to_string()))?
}

async fn require_secret(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let ok = req.headers().get(SECRET_HEADER).and_then(|v| v.to_str().ok()) == Some(state.secret.as_str());
    if ok {
        next.run(req).await
    } else {
        axum::response::IntoResponse::into_response(ApiError::new("Unauthorized", "missing or wrong shared secret"))
    }
}

async fn not_found() -> ApiError {
    ApiError::new("NotFound", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/snapshot", post(upload_snapshot))
        .route("/v1/snapshot/{id}/index", get(snapshot_index))
        .route("/v1/route", post(route))
        .route("/v1/find", post(find_answer))
        .route("/v1/guide/start", post(guide_start))
        .route("/v1/guide/{sid}", get(guide_status))
        .route("/v1/guide/{sid}/next", post(guide_next))
        .route("/v1/guide/{sid}/confirm", post(guide_confirm))
        .route("/v1/guide/{sid}/stop", post(guide_stop))
        .route("/v1/hide/propose", post(hide_propose))
        .route("/v1/hide/apply", post(hide_apply))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(state.clone(), require_secret))
        .layer(DefaultBodyLimit::disable())
        .with_state(state)
}

// ---- handlers --------------------------------------------------------------

async fn upload_snapshot(State(state): State<Arc<AppState>>, body: Body) -> Result<Json<SnapshotCreated>, ApiError> {
    let up: SnapshotUpload = read_json(&state, body).await?;
    let layout: Option<BTreeMap<NodePath, LayoutBox>> =
        up.layout.map(|items| items.into_iter().map(|i| (i.path, i.layout)).collect());
    let (snapshot, dropped_layout) = Snapshot::new(up.html, up.url, up.title, None, layout)?;
    let snapshot_id = state.insert_snapshot(snapshot);
    Ok(Json(SnapshotCreated { snapshot_id, dropped_layout }))
}

async fn snapshot_index(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<ElementIndex>, ApiError> {
    let stored = state.snapshot(&id)?;
    Ok(Json((*state.index_of(&stored)).clone()))
}

async fn route(State(state): State<Arc<AppState>>, body: Body) -> Result<Json<RouteDecision>, ApiError> {
    let b: RouteBody = read_json(&state, body).await?;
    let stored = state.snapshot(&b.snapshot_id)?;
    let st = state.clone();
    blocking(move || {
        let ctx = PageContext::from_snapshot(&stored.snapshot);
        Ok(Json(router::classify(&b.query, &ctx, &st.gateway)?))
    })
    .await
}

async fn find_answer(State(state): State<Arc<AppState>>, body: Body) -> Result<Json<FindResponse>, ApiError> {
    let b: FindBody = read_json(&state, body).await?;
    let stored = state.snapshot(&b.snapshot_id)?;
    let st = state.clone();
    blocking(move || {
        let index = st.index_of(&stored);
        let r = find::answer(&b.query, &index, &b.history, &st.gateway, &st.config.find)?;
        Ok(Json(r.into()))
    })
    .await
}

async fn guide_start(State(state): State<Arc<AppState>>, body: Body) -> Result<Json<GuideStatus>, ApiError> {
    let b: GuideStartBody = read_json(&state, body).await?;
    let ids = match (b.snapshot_ids, b.snapshot_id) {
        (Some(ids), None) => ids,
        (None, Some(id)) => vec![id],
        _ => return Err(ApiError::new("BadRequest", "give exactly one of `snapshot_id` or `snapshot_ids`")),
    };
    let snapshots = ids.iter().map(|id| state.snapshot(id).map(|s| s.snapshot.clone())).collect::<Result<Vec<_>, _>>()?;
    let session = guide::start_session(&b.query, snapshots, state.config.guide.clone())?;
    let status = GuideStatus {
        session_id: session.session_id.clone(),
        state: session.state(),
        steps_confirmed: 0,
        cursor: 0,
    };
    state.purge_expired();
    let slot = SessionSlot { session: Arc::new(tokio::sync::Mutex::new(session)), last_used: Mutex::new(Instant::now()) };
    state.sessions.write().expect("session lock").insert(status.session_id.clone(), Arc::new(slot));
    Ok(Json(status))
}

fn lock_session(slot: &SessionSlot, sid: &str) -> Result<tokio::sync::OwnedMutexGuard<GuideSession>, ApiError> {
    slot.session
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::new("Busy", "another request is in flight for this session").with_detail(json!({ "session_id": sid })))
}

fn status_of(s: &GuideSession) -> GuideStatus {
    GuideStatus { session_id: s.session_id.clone(), state: s.state(), steps_confirmed: s.history().len(), cursor: s.cursor() }
}

async fn guide_status(State(state): State<Arc<AppState>>, UrlPath(sid): UrlPath<String>) -> Result<Json<GuideStatus>, ApiError> {
    let slot = state.session(&sid)?;
    let s = lock_session(&slot, &sid)?;
    Ok(Json(status_of(&s)))
}

async fn guide_next(State(state): State<Arc<AppState>>, UrlPath(sid): UrlPath<String>) -> Result<Json<GuideStepResponse>, ApiError> {
    let slot = state.session(&sid)?;
    let mut s = lock_session(&slot, &sid)?;
    let st = state.clone();
    blocking(move || {
        let step = s.next_step(&st.gateway)?;
        let card = s.step_card()?;
        Ok(Json(GuideStepResponse { session_id: s.session_id.clone(), state: s.state(), step, card }))
    })
    .await
}

async fn guide_confirm(
    State(state): State<Arc<AppState>>,
    UrlPath(sid): UrlPath<String>,
    body: Body,
) -> Result<Json<GuideConfirmResponse>, ApiError> {
    let b: GuideConfirmBody = read_json(&state, body).await?;
    let slot = state.session(&sid)?;
    let fresh = b.snapshot_id.map(|id| state.snapshot(&id).map(|s| s.snapshot.clone())).transpose()?;
    let mut s = lock_session(&slot, &sid)?;
    blocking(move || {
        let outcome = match fresh {
            Some(snapshot) => s.confirm_with_snapshot(snapshot)?,
            None => s.confirm_step()?,
        };
        Ok(Json(GuideConfirmResponse { session_id: s.session_id.clone(), outcome }))
    })
    .await
}

async fn guide_stop(State(state): State<Arc<AppState>>, UrlPath(sid): UrlPath<String>) -> Result<Json<GuideStatus>, ApiError> {
    let slot = state.session(&sid)?;
    let mut s = lock_session(&slot, &sid)?;
    s.stop()?;
    Ok(Json(status_of(&s)))
}

async fn hide_propose(State(state): State<Arc<AppState>>, body: Body) -> Result<Json<HideProposal>, ApiError> {
    let b: HideProposeBody = read_json(&state, body).await?;
    let stored = state.snapshot(&b.snapshot_id)?;
    let st = state.clone();
    blocking(move || {
        let index = st.index_of(&stored);
        let proposal = hide::propose(&b.request, &index, &st.gateway, &st.config.hide)?;
        *stored.hide.lock().expect("hide lock") = Some(HideState { proposal: proposal.clone(), applied: false });
        Ok(Json(proposal))
    })
    .await
}

async fn hide_apply(State(state): State<Arc<AppState>>, body: Body) -> Result<Json<HideApplyResponse>, ApiError> {
    let b: HideApplyBody = read_json(&state, body).await?;
    let stored = state.snapshot(&b.snapshot_id)?;
    let index = state.index_of(&stored);
    let (mutated, record) = {
        let mut guard = stored.hide.lock().expect("hide lock");
        let hs = guard.as_mut().ok_or_else(|| ApiError::new("NoProposal", "propose before applying"))?;
        let ids = hs.proposal.ids();
        if let Some(bad) = b.confirmed_ids.iter().find(|id| !ids.contains(id)) {
            return Err(hide::HideError::UnknownCandidate(*bad).into());
        }
        let unchecked: BTreeSet<ElementId> = ids.difference(&b.confirmed_ids).copied().collect();
        let mut decision = hide::review(&hs.proposal, &unchecked)?;
        decision.applied = hs.applied;
        let out = hide::apply(&mut decision, &stored.snapshot, &index)?;
        hs.applied = true;
        out
    };
    let directives = record
        .entries
        .iter()
        .map(|e| HideDirective { element_id: e.element_id, node_path: e.node_path.clone(), set_style: HIDE_DECLARATION.to_string() })
        .collect();
    let mutated_snapshot_id = state.insert_snapshot(mutated);
    Ok(Json(HideApplyResponse { directives, mutated_snapshot_id, record }))
}

// ---- serving ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub port: u16,
    pub secret: String,
}

/// Binds 127.0.0.1:`port` (0 picks a free port) and serves until Ctrl-C.
/// The handshake file, when given, receives `{port, secret}`.
pub async fn serve(state: Arc<AppState>, port: u16, handshake: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, port))).await?;
    let port = listener.local_addr()?.port();
    if let Some(path) = handshake {
        write_handshake(path, &Handshake { port, secret: state.secret.clone() })?;
    }
    eprintln!("pageguide service listening on http://127.0.0.1:{port}");
    eprintln!("shared secret: {}", state.secret);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub fn write_handshake(path: &Path, handshake: &Handshake) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(handshake).expect("handshake serializes");
    std::fs::write(path, text + "\n")?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))?;
    }
    Ok(())
}

/// Status for an [`ApiError`] code, for clients that only have the code.
pub fn status_for(code: &str) -> Option<StatusCode> {
    CODES.iter().find(|(c, _)| *c == code).and_then(|(_, s)| StatusCode::from_u16(*s).ok())
}
