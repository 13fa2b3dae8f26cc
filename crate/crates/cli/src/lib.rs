//! The `pageguide` command line.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

pub mod config;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use pageguide_core::eval::{self, DatasetKind};
use pageguide_core::find::{self, FindResult, Highlight};
use pageguide_core::gateway::Gateway;
use pageguide_core::guide::{self, ConfirmOutcome, GuideSession, SessionState, StepCard};
use pageguide_core::hide::{self, HideProposal, MutationRecord, HIDE_DECLARATION};
use pageguide_core::index::{build_index, ElementId};
use pageguide_core::pipeline::{self, HandlerOutput, RequestBundle};
use pageguide_core::router::{self, PageContext, RouteDecision};
use pageguide_core::{load_sequence, load_snapshot, save_snapshot, Snapshot};

use config::{Config, ConfigError, FileConfig, Overrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pageguide", version, about = "Grounded find, guide and hide over page snapshots")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Serve model calls from this transcript file.
    #[arg(long, global = true, value_name = "FILE", conflicts_with = "live")]
    pub replay: Option<PathBuf>,
    /// Call the model endpoint directly (needs PAGEGUIDE_API_KEY).
    #[arg(long, global = true)]
    pub live: bool,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true, value_name = "URL")]
    pub base_url: Option<String>,
    /// Config file; defaults to ./pageguide.toml, then ~/.config/pageguide/pageguide.toml.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the element index of a snapshot.
    Index(IndexArgs),
    /// Classify a query into a handler.
    Route(RouteArgs),
    /// Answer a question with inline citations.
    Find(FindArgs),
    /// Step-by-step guidance over a snapshot or a recorded sequence.
    Guide(GuideArgs),
    /// Propose, review and apply element hiding.
    Hide(HideArgs),
    /// Route a query and run the chosen handler.
    Ask(AskArgs),
    /// Score a dataset.
    Eval(EvalArgs),
    /// Run the local HTTP service.
    Serve(ServeArgs),
    /// Run a command in record mode, appending new model calls to a transcript.
    Record(RecordArgs),
}

#[derive(Debug, Subcommand)]
pub enum Recordable {
    Route(RouteArgs),
    Find(FindArgs),
    Guide(GuideArgs),
    Hide(HideArgs),
    Ask(AskArgs),
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long, value_name = "DIR")]
    pub snapshot: PathBuf,
    /// Print the serialized prompt text instead of JSON lines.
    #[arg(long)]
    pub prompt: bool,
    #[arg(long, default_value_t = 24_000)]
    pub budget: usize,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long, value_name = "DIR")]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub query: String,
}

#[derive(Debug, Args)]
pub struct FindArgs {
    #[arg(long, value_name = "DIR")]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub query: String,
}

#[derive(Debug, Args, Clone)]
#[group(required = true, multiple = false, id = "pages")]
pub struct Pages {
    #[arg(long, value_name = "DIR", group = "pages")]
    pub snapshot: Option<PathBuf>,
    /// A sequence.json manifest.
    #[arg(long, value_name = "FILE", group = "pages")]
    pub sequence: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GuideArgs {
    #[command(flatten)]
    pub pages: Pages,
    #[arg(long)]
    pub query: String,
    /// Read n (Next) / s (Stop) commands from this file instead of stdin.
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HideArgs {
    #[arg(long, value_name = "DIR")]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub request: String,
    /// Candidate ids to leave visible.
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    pub uncheck: Vec<ElementId>,
    /// Apply the reviewed proposal.
    #[arg(long)]
    pub confirm: bool,
    /// Write the mutated bundle and mutations.json here.
    #[arg(long, value_name = "DIR", requires = "confirm")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    #[command(flatten)]
    pub pages: Pages,
    #[arg(long)]
    pub query: String,
    /// Confirmation script for guide sessions; defaults to always Next.
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: DatasetKind,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Also write the report here.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Write {port, secret} here for clients.
    #[arg(long, value_name = "FILE")]
    pub handshake: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[arg(long, value_name = "FILE")]
    pub transcript: PathBuf,
    #[command(subcommand)]
    pub command: Recordable,
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    s.parse().map_err(|_| format!("expected one of router, find, hide, guide; got `{s}`"))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{}", e.render()) } else { write!(out, "{}", e.render()) };
            return code;
        }
    };
    match execute(cli, stdin, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_DOMAIN
            }
        }
    }
}

fn load_config(global: &GlobalArgs, record: Option<&Path>) -> anyhow::Result<Config> {
    let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
    let home = std::env::var_os("HOME").map(PathBuf::from);
    let file = match config::discover(global.config.as_deref(), &cwd, home.as_deref()) {
        Some(path) => FileConfig::load(&path)?,
        None => FileConfig::default(),
    };
    let flags = Overrides {
        model: global.model.clone(),
        base_url: global.base_url.clone(),
        replay: global.replay.clone(),
        live: global.live,
        record: record.map(Path::to_path_buf),
    };
    Ok(Config::resolve(&flags, |k| std::env::var(k).ok(), file)?)
}

fn execute(cli: Cli, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<i32> {
    let json = cli.global.json;
    match cli.command {
        Command::Index(a) => {
            let cfg = load_config(&cli.global, None)?;
            cmd_index(&a, &cfg, out)
        }
        Command::Serve(a) => {
            let cfg = load_config(&cli.global, None)?;
            cmd_serve(&a, &cfg)
        }
        Command::Record(r) => {
            let cfg = load_config(&cli.global, Some(&r.transcript))?;
            let gw = cfg.gateway()?;
            let before = gw.store().len();
            let result = recordable(r.command, &cfg, &gw, json, stdin, out, err);
            for key in gw.store().recorded_keys() {
                writeln!(err, "recorded {key}")?;
            }
            writeln!(err, "{} new transcript lines ({} total)", gw.store().len() - before, gw.store().len())?;
            result
        }
        Command::Route(a) => with_gateway(&cli.global, |cfg, gw| recordable(Recordable::Route(a), cfg, gw, json, stdin, out, err)),
        Command::Find(a) => with_gateway(&cli.global, |cfg, gw| recordable(Recordable::Find(a), cfg, gw, json, stdin, out, err)),
        Command::Guide(a) => with_gateway(&cli.global, |cfg, gw| recordable(Recordable::Guide(a), cfg, gw, json, stdin, out, err)),
        Command::Hide(a) => with_gateway(&cli.global, |cfg, gw| recordable(Recordable::Hide(a), cfg, gw, json, stdin, out, err)),
        Command::Ask(a) => with_gateway(&cli.global, |cfg, gw| recordable(Recordable::Ask(a), cfg, gw, json, stdin, out, err)),
        Command::Eval(a) => with_gateway(&cli.global, |cfg, gw| recordable(Recordable::Eval(a), cfg, gw, json, stdin, out, err)),
    }
}

fn with_gateway(
    global: &GlobalArgs,
    f: impl FnOnce(&Config, &Gateway) -> anyhow::Result<i32>,
) -> anyhow::Result<i32> {
    let cfg = load_config(global, None)?;
    let gw = cfg.gateway()?;
    f(&cfg, &gw)
}

fn recordable(
    cmd: Recordable,
    cfg: &Config,
    gw: &Gateway,
    json: bool,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<i32> {
    match cmd {
        Recordable::Route(a) => cmd_route(&a, gw, out),
        Recordable::Find(a) => cmd_find(&a, cfg, gw, json, out),
        Recordable::Guide(a) => cmd_guide(&a, cfg, gw, json, stdin, out),
        Recordable::Hide(a) => cmd_hide(&a, cfg, gw, json, out),
        Recordable::Ask(a) => cmd_ask(&a, cfg, gw, json, out),
        Recordable::Eval(a) => cmd_eval(&a, gw, out, err),
    }
}

fn snapshot_at(dir: &Path) -> anyhow::Result<Snapshot> {
    load_snapshot(dir).with_context(|| format!("loading snapshot {}", dir.display()))
}

fn pages(p: &Pages) -> anyhow::Result<Vec<Snapshot>> {
    match (&p.snapshot, &p.sequence) {
        (Some(dir), _) => Ok(vec![snapshot_at(dir)?]),
        (None, Some(manifest)) => {
            load_sequence(manifest).with_context(|| format!("loading sequence {}", manifest.display()))
        }
        (None, None) => Err(anyhow!("give --snapshot or --sequence")),
    }
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> anyhow::Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_index(a: &IndexArgs, cfg: &Config, out: &mut dyn Write) -> anyhow::Result<i32> {
    let index = build_index(&snapshot_at(&a.snapshot)?, &cfg.index());
    if a.prompt {
        writeln!(out, "{}", index.to_prompt(a.budget, cfg.elem_clip))?;
    } else {
        for e in &index.elements {
            writeln!(out, "{}", serde_json::to_string(e)?)?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_route(a: &RouteArgs, gw: &Gateway, out: &mut dyn Write) -> anyhow::Result<i32> {
    let s = snapshot_at(&a.snapshot)?;
    let d = router::classify(&a.query, &PageContext::from_snapshot(&s), gw)?;
    print_json(out, &d)?;
    Ok(EXIT_OK)
}

fn cmd_find(a: &FindArgs, cfg: &Config, gw: &Gateway, json: bool, out: &mut dyn Write) -> anyhow::Result<i32> {
    let s = snapshot_at(&a.snapshot)?;
    let index = build_index(&s, &cfg.index());
    let r = find::answer(&a.query, &index, &[], gw, &cfg.find())?;
    if json {
        print_json(out, &r)?;
    } else {
        write_find(out, &r)?;
    }
    Ok(EXIT_OK)
}

fn write_find(out: &mut dyn Write, r: &FindResult) -> anyhow::Result<()> {
    writeln!(out, "{}", r.answer.display_text)?;
    if !r.plan.entries.is_empty() {
        writeln!(out)?;
        writeln!(out, "{:>3}  {:>4}  {:<24}  {:<30}  phrase", "#", "id", "match", "node")?;
        for (k, e) in r.plan.entries.iter().enumerate() {
            let m = match e.highlight {
                Highlight::Span { start, end, tier, .. } => format!("{tier:?} {start}..{end}"),
                Highlight::WholeElement => "whole element".to_string(),
            };
            writeln!(out, "{:>3}  {:>4}  {:<24}  {:<30}  {}", k + 1, e.element_id, m, e.node_path.to_string(), e.phrase)?;
        }
    }
    for c in &r.answer.unresolved {
        writeln!(out, "unresolved: [{}] {:?}", c.element_id, c.phrase)?;
    }
    for l in &r.answer.external_links {
        writeln!(out, "link: {} <{}>", l.label, l.url)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum UserAction {
    Next,
    Stop,
}

/// Reads the next n/s command; blank lines and `#` comments are skipped.
/// End of input counts as Stop.
fn read_action(input: &mut dyn BufRead) -> anyhow::Result<UserAction> {
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Ok(UserAction::Stop);
        }
        match line.trim().to_ascii_lowercase().as_str() {
            "" => continue,
            l if l.starts_with('#') => continue,
            "n" | "next" | "finish" => return Ok(UserAction::Next),
            "s" | "stop" | "q" => return Ok(UserAction::Stop),
            other => return Err(anyhow!("unknown guide command `{other}` (use n or s)")),
        }
    }
}

#[derive(Debug, Serialize)]
struct GuideTurn {
    card: StepCard,
    action: UserAction,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome: Option<ConfirmOutcome>,
}

#[derive(Debug, Serialize)]
struct GuideTranscript {
    query: String,
    state: SessionState,
    steps: Vec<GuideTurn>,
    failure: Option<String>,
}

/// Drives a session to a terminal state with actions from `input`.
fn drive_guide(
    session: &mut GuideSession,
    gw: &Gateway,
    input: &mut dyn BufRead,
    json: bool,
    out: &mut dyn Write,
) -> anyhow::Result<GuideTranscript> {
    let mut steps = Vec::new();
    while !session.state().is_terminal() {
        match session.state() {
            SessionState::AwaitingStep | SessionState::Replanning => {
                if let Err(e) = session.next_step(gw) {
                    if !session.state().is_terminal() {
                        return Err(e.into());
                    }
                }
            }
            SessionState::AwaitingUser => {
                let card = session.step_card()?;
                if !json {
                    write_card(out, &card)?;
                }
                let action = read_action(input)?;
                let outcome = match action {
                    UserAction::Next => match session.confirm_step() {
                        Ok(o) => Some(o),
                        Err(_) if session.state().is_terminal() => None,
                        Err(e) => return Err(e.into()),
                    },
                    UserAction::Stop => {
                        session.stop()?;
                        None
                    }
                };
                if !json {
                    if let Some(d) = outcome.as_ref().and_then(|o| o.divergence.as_ref()) {
                        writeln!(out, "  verdict: {:?}", d.verdict)?;
                    }
                }
                steps.push(GuideTurn { card, action, outcome });
            }
            s => return Err(anyhow!("unexpected session state {s}")),
        }
    }
    let t = GuideTranscript {
        query: session.query.clone(),
        state: session.state(),
        steps,
        failure: session.failure().map(str::to_string),
    };
    if !json {
        writeln!(out, "session {}", t.state)?;
        if let Some(f) = &t.failure {
            writeln!(out, "  {f}")?;
        }
    }
    Ok(t)
}

fn write_card(out: &mut dyn Write, c: &StepCard) -> anyhow::Result<()> {
    writeln!(out, "Step {}: {}", c.step_no, c.instruction)?;
    if let Some(t) = &c.target {
        writeln!(out, "  target [{}] {} at {}", t.element_id, t.text, t.node_path)?;
    }
    writeln!(out, "  wait for: {}", c.wait_for.as_str())?;
    if !c.hint.is_empty() {
        writeln!(out, "  hint: {}", c.hint)?;
    }
    let controls: Vec<String> = c.controls.iter().map(|k| format!("[{k:?}]")).collect();
    writeln!(out, "  {}  (n = next, s = stop)", controls.join(" "))?;
    Ok(())
}

fn script_input(script: Option<&Path>) -> anyhow::Result<Option<Box<dyn BufRead>>> {
    script
        .map(|p| -> anyhow::Result<Box<dyn BufRead>> {
            let f = std::fs::File::open(p).with_context(|| format!("opening script {}", p.display()))?;
            Ok(Box::new(std::io::BufReader::new(f)))
        })
        .transpose()
}

fn guide_exit(t: &GuideTranscript) -> i32 {
    if t.state == SessionState::Failed {
        EXIT_DOMAIN
    } else {
        EXIT_OK
    }
}

fn cmd_guide(
    a: &GuideArgs,
    cfg: &Config,
    gw: &Gateway,
    json: bool,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
) -> anyhow::Result<i32> {
    let mut session = guide::start_session(&a.query, pages(&a.pages)?, cfg.guide())?;
    let mut script = script_input(a.script.as_deref())?;
    let input: &mut dyn BufRead = match script.as_mut() {
        Some(s) => s.as_mut(),
        None => stdin,
    };
    let t = drive_guide(&mut session, gw, input, json, out)?;
    if json {
        print_json(out, &t)?;
    }
    Ok(guide_exit(&t))
}

#[derive(Debug, Serialize)]
struct HideDirective {
    element_id: ElementId,
    node_path: String,
    set_style: &'static str,
}

#[derive(Debug, Serialize)]
struct HideOutput {
    proposal: HideProposal,
    #[serde(skip_serializing_if = "Option::is_none")]
    confirmed_ids: Option<BTreeSet<ElementId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    directives: Option<Vec<HideDirective>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<MutationRecord>,
}

fn write_proposal(out: &mut dyn Write, p: &HideProposal, unchecked: &BTreeSet<ElementId>) -> anyhow::Result<()> {
    writeln!(out, "{}", p.message)?;
    if p.candidates.is_empty() {
        return Ok(());
    }
    writeln!(out, "{:>4}  {:>4}  {:<3}  {:<32}  snippet", "rank", "id", "on", "reason")?;
    for c in &p.candidates {
        let on = if c.checked && !unchecked.contains(&c.element_id) { "x" } else { "" };
        writeln!(out, "{:>4}  {:>4}  {:<3}  {:<32}  {}", c.rank, c.element_id, on, c.reason, c.snippet)?;
    }
    if p.dropped_unknown > 0 || p.truncated > 0 {
        writeln!(out, "({} unknown ids dropped, {} over the cap)", p.dropped_unknown, p.truncated)?;
    }
    Ok(())
}

fn cmd_hide(a: &HideArgs, cfg: &Config, gw: &Gateway, json: bool, out: &mut dyn Write) -> anyhow::Result<i32> {
    let s = snapshot_at(&a.snapshot)?;
    let index = build_index(&s, &cfg.index());
    let proposal = hide::propose(&a.request, &index, gw, &cfg.hide())?;
    let unchecked: BTreeSet<ElementId> = a.uncheck.iter().copied().collect();
    let mut decision = hide::review(&proposal, &unchecked)?;
    let mut output = HideOutput { proposal, confirmed_ids: None, directives: None, record: None };
    if a.confirm {
        let (mutated, record) = hide::apply(&mut decision, &s, &index)?;
        if let Some(dir) = &a.out {
            save_snapshot(&mutated, dir)?;
            std::fs::write(dir.join("mutations.json"), serde_json::to_string_pretty(&record)? + "\n")?;
        }
        output.directives = Some(
            record
                .entries
                .iter()
                .map(|e| HideDirective { element_id: e.element_id, node_path: e.node_path.to_string(), set_style: HIDE_DECLARATION })
                .collect(),
        );
        output.confirmed_ids = Some(decision.confirmed_ids.clone());
        output.record = Some(record);
    }
    if json {
        print_json(out, &output)?;
    } else {
        write_proposal(out, &output.proposal, &unchecked)?;
        if let Some(dirs) = &output.directives {
            writeln!(out, "hid {} element(s)", dirs.len())?;
            for d in dirs {
                writeln!(out, "  [{}] {} {{{}}}", d.element_id, d.node_path, d.set_style)?;
            }
            if let Some(dir) = &a.out {
                writeln!(out, "wrote {}", dir.display())?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_ask(a: &AskArgs, cfg: &Config, gw: &Gateway, json: bool, out: &mut dyn Write) -> anyhow::Result<i32> {
    let snapshots = pages(&a.pages)?;
    let first = &snapshots[0];
    let index = build_index(first, &cfg.index());
    let route: RouteDecision = router::classify(&a.query, &PageContext::from_snapshot(first), gw)?;
    let mut bundle = RequestBundle::new(&a.query, &snapshots, &index);
    bundle.find = cfg.find();
    bundle.guide = cfg.guide();
    bundle.hide = cfg.hide();
    if !json {
        writeln!(out, "route: {} ({:.2}) {}", route.handler, route.confidence, route.reason)?;
    }
    let mut code = EXIT_OK;
    let result = match pipeline::dispatch(&route, &bundle, gw)? {
        HandlerOutput::Find(r) => {
            if !json {
                write_find(out, &r)?;
            }
            json!({ "find": r })
        }
        HandlerOutput::Hide(p) => {
            if !json {
                write_proposal(out, &p, &BTreeSet::new())?;
            }
            json!({ "hide": p })
        }
        HandlerOutput::Guide(mut session) => {
            let mut script = script_input(a.script.as_deref())?;
            let mut always_next = std::io::Cursor::new("n\n".repeat(cfg.max_steps as usize + 1));
            let input: &mut dyn BufRead = match script.as_mut() {
                Some(s) => s.as_mut(),
                None => &mut always_next,
            };
            let t = drive_guide(&mut session, gw, input, json, out)?;
            code = guide_exit(&t);
            json!({ "guide": t })
        }
        HandlerOutput::NotImplemented(h) => {
            if !json {
                writeln!(out, "{h} is not available in this build")?;
            }
            json!({ "not_implemented": h })
        }
    };
    if json {
        print_json(out, &json!({ "route": route, "result": result }))?;
    }
    Ok(code)
}

fn cmd_eval(a: &EvalArgs, gw: &Gateway, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<i32> {
    let dataset = eval::load_dataset(a.kind, &a.data)?;
    let report = eval::evaluate(&dataset, gw)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &a.report {
        std::fs::write(path, text.clone() + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    writeln!(out, "{text}")?;
    if report.has_errors() {
        writeln!(err, "{} case(s) errored: {}", report.errored.len(), report.errored.join(", "))?;
        return Ok(EXIT_DOMAIN);
    }
    Ok(EXIT_OK)
}

fn cmd_serve(a: &ServeArgs, cfg: &Config) -> anyhow::Result<i32> {
    use pageguide_service::{random_id, serve, AppState, ServiceConfig};
    let service = ServiceConfig {
        body_limit: cfg.body_limit,
        index: cfg.index(),
        find: cfg.find(),
        guide: cfg.guide(),
        hide: cfg.hide(),
        ..ServiceConfig::default()
    };
    let secret = random_id() + &random_id();
    let state = AppState::new(cfg.gateway()?, secret, service);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(state, a.port, a.handshake.as_deref()))?;
    Ok(EXIT_OK)
}
