//! `oxy` command line. Every subcommand maps onto one [`Workspace`] method, and
//! `--json` prints the same envelope the matching HTTP endpoint returns.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use oxy_core::bank::{ExportFilter, Priority, Verdict};
use oxy_core::config::MasConfig;
use oxy_core::registry::{Severity, TopologyView};
use oxy_core::runtime::Overrides;
use oxy_service::http::DEFAULT_BIND;
use oxy_service::{
    AnnotateRequest, ApiEnvelope, ApiError, ApplyRequest, AuditRequest, ChatReply, ChatRequest, DepositRequest,
    OptimizeRequest, RegenerateRequest, Workspace,
};
use serde::Serialize;
use serde_json::{Map, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "oxy", version, about = "Run multi-agent configs, inspect traces, and review trace assets")]
pub struct Cli {
    /// Directory holding traces and the bank ledger.
    #[arg(long, global = true, default_value = ".oxy")]
    pub store: PathBuf,
    /// Print the JSON envelope instead of human-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = DEFAULT_BIND)]
        bind: SocketAddr,
    },
    /// Run one query through the entrypoint agent.
    Chat {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        group: Option<String>,
    },
    #[command(subcommand)]
    Trace(TraceCommand),
    #[command(subcommand)]
    Bank(BankCommand),
    #[command(subcommand)]
    Prompt(PromptCommand),
    /// Show nodes, permission edges and topology issues of a config.
    Topology {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum TraceCommand {
    List,
    /// Print the execution graph, or another view of the trace.
    Show {
        id: String,
        #[arg(long)]
        version: Option<String>,
        #[command(flatten)]
        view: ShowView,
    },
    /// Re-run one recorded call under overrides as a new version.
    Regenerate {
        id: String,
        call_id: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        version: Option<String>,
        /// Argument override `key=value`; values parse as JSON when possible.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        system_prompt: Option<String>,
        #[arg(long)]
        model_binding: Option<String>,
    },
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct ShowView {
    #[arg(long)]
    pub dot: bool,
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub events: bool,
    #[arg(long)]
    pub versions: bool,
    /// Calls merged by name path.
    #[arg(long)]
    pub paths: bool,
}

#[derive(Debug, Subcommand)]
pub enum BankCommand {
    Deposit {
        trace_id: String,
        #[arg(long)]
        version: Option<String>,
    },
    List {
        #[arg(long)]
        state: Option<String>,
    },
    Show {
        id: String,
    },
    Annotate {
        id: String,
        #[arg(long)]
        template: String,
        #[arg(long = "field", value_name = "KEY=VALUE")]
        fields: Vec<String>,
    },
    Audit {
        id: String,
        #[arg(long, conflicts_with = "reject", required_unless_present = "reject")]
        approve: bool,
        #[arg(long)]
        reject: bool,
        #[arg(long)]
        note: Option<String>,
    },
    Reopen {
        id: String,
    },
    Export {
        #[arg(long)]
        priority: Option<String>,
        #[arg(long)]
        template: Option<String>,
        #[arg(long)]
        since: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PromptCommand {
    Optimize {
        agent: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        binding: Option<String>,
    },
    Apply {
        agent: String,
        version: u32,
        #[arg(long)]
        config: PathBuf,
    },
    List {
        agent: String,
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    execute(&cli, out, err)
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut printer = Printer { json: cli.json, out, err };
    match &cli.command {
        Command::Serve { config, bind } => serve(&cli.store, config, *bind, &mut printer),
        Command::Chat { config, query, group } => {
            let result = open(&cli.store, Some(config))
                .and_then(|ws| ws.chat(&ChatRequest { query: query.clone(), group_id: group.clone() }));
            printer.emit(result, |reply: &ChatReply| format!("{}\ntrace: {}\n", reply.answer, reply.trace_id))
        }
        Command::Trace(cmd) => trace(&cli.store, cmd, &mut printer),
        Command::Bank(cmd) => bank(&cli.store, cmd, &mut printer),
        Command::Prompt(cmd) => prompt(&cli.store, cmd, &mut printer),
        Command::Topology { config } => {
            let result = load_config(config).and_then(|cfg| Workspace::open(None, Some(&cfg))).map(|ws| ws.topology());
            let has_errors = result.as_ref().is_ok_and(|t| t.issues.iter().any(|i| i.severity() == Severity::Error));
            let code = printer.emit(result, render_topology);
            if code == EXIT_OK && has_errors {
                EXIT_FAILURE
            } else {
                code
            }
        }
    }
}

struct Printer<'a> {
    json: bool,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Printer<'_> {
    fn emit<T: Serialize>(&mut self, result: Result<T, ApiError>, human: impl FnOnce(&T) -> String) -> i32 {
        let code = if result.is_ok() { EXIT_OK } else { EXIT_FAILURE };
        if self.json {
            let envelope = ApiEnvelope::from_result(&result);
            let _ = writeln!(self.out, "{}", serde_json::to_string_pretty(&envelope).unwrap_or_default());
            return code;
        }
        match &result {
            Ok(v) => {
                let _ = write!(self.out, "{}", human(v));
            }
            Err(e) => {
                let _ = writeln!(self.err, "error: {e}");
                if let Some(trace) = &e.trace_id {
                    let _ = writeln!(self.err, "trace: {trace}");
                }
            }
        }
        code
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    format!("{}\n", serde_json::to_string_pretty(v).unwrap_or_default())
}

fn load_config(path: &Path) -> Result<MasConfig, ApiError> {
    MasConfig::load(path).map_err(ApiError::from)
}

fn open(store: &Path, config: Option<&PathBuf>) -> Result<Workspace, ApiError> {
    let cfg = config.map(|p| load_config(p)).transpose()?;
    Workspace::open(Some(store), cfg.as_ref())
}

/// `key=value` pairs; values that parse as JSON keep their type.
pub fn parse_pairs(pairs: &[String]) -> Result<Map<String, Value>, ApiError> {
    let mut map = Map::new();
    for pair in pairs {
        let (k, v) = pair
            .split_once('=')
            .filter(|(k, _)| !k.is_empty())
            .ok_or_else(|| ApiError::bad_request(format!("expected KEY=VALUE, got `{pair}`")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
        map.insert(k.to_owned(), value);
    }
    Ok(map)
}

fn serve(store: &Path, config: &Path, bind: SocketAddr, printer: &mut Printer<'_>) -> i32 {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .try_init();
    let workspace = match open(store, Some(&config.to_path_buf())) {
        Ok(ws) => Arc::new(ws),
        Err(e) => return printer.emit::<()>(Err(e), |_| String::new()),
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return printer.emit::<()>(Err(ApiError::new(500, "Io", e.to_string())), |_| String::new()),
    };
    match rt.block_on(oxy_service::http::serve(workspace, bind)) {
        Ok(()) => EXIT_OK,
        Err(e) => printer.emit::<()>(Err(ApiError::new(500, "Io", e.to_string())), |_| String::new()),
    }
}

fn trace(store: &Path, cmd: &TraceCommand, printer: &mut Printer<'_>) -> i32 {
    match cmd {
        TraceCommand::List => {
            let result = open(store, None).map(|ws| ws.list_traces());
            printer.emit(result, |traces| {
                traces
                    .iter()
                    .map(|t| format!("{}  versions={}  sealed={}\n", t.trace_id, t.versions, t.sealed))
                    .collect()
            })
        }
        TraceCommand::Show { id, version, view } => {
            let ws = match open(store, None) {
                Ok(ws) => ws,
                Err(e) => return printer.emit::<()>(Err(e), |_| String::new()),
            };
            let v = version.as_deref();
            if view.dot {
                printer.emit(ws.dot(id, v), |dot| dot.clone())
            } else if view.timing {
                printer.emit(ws.timing(id, v), pretty)
            } else if view.events {
                printer.emit(ws.events(id, v, 0), |events| {
                    events.iter().map(|e| format!("{}\n", serde_json::to_string(e).unwrap_or_default())).collect()
                })
            } else if view.versions {
                printer.emit(ws.versions(id), pretty)
            } else if view.paths {
                printer.emit(ws.path_graph(id, v), pretty)
            } else {
                printer.emit(ws.graph(id, v), pretty)
            }
        }
        TraceCommand::Regenerate { id, call_id, config, version, set, system_prompt, model_binding } => {
            let result = parse_pairs(set).and_then(|arguments| {
                let ws = open(store, Some(config))?;
                let req = RegenerateRequest {
                    version: version.clone(),
                    overrides: Overrides {
                        arguments: (!arguments.is_empty()).then_some(arguments),
                        system_prompt: system_prompt.clone(),
                        model_binding: model_binding.clone(),
                    },
                };
                ws.regenerate(id, call_id, &req)
            });
            let code = printer.emit(result.clone(), |r| format!("{}\nversion: {}\n", r.answer, r.new_version_id));
            match result {
                Ok(r) if r.status != "ok" => EXIT_FAILURE,
                _ => code,
            }
        }
    }
}

fn bank(store: &Path, cmd: &BankCommand, printer: &mut Printer<'_>) -> i32 {
    let ws = match open(store, None) {
        Ok(ws) => ws,
        Err(e) => return printer.emit::<()>(Err(e), |_| String::new()),
    };
    let record_line = |r: &oxy_core::bank::BankRecord| {
        format!("{}  {:?}  {:?}  x{}  trace={}\n", r.record_id, r.state, r.priority, r.occurrence_count, r.trace_id)
    };
    match cmd {
        BankCommand::Deposit { trace_id, version } => printer.emit(
            ws.deposit(&DepositRequest { trace_id: trace_id.clone(), version_id: version.clone() }),
            record_line,
        ),
        BankCommand::List { state } => {
            printer.emit(ws.records(state.as_deref()), |records| records.iter().map(record_line).collect())
        }
        BankCommand::Show { id } => printer.emit(ws.record(id), pretty),
        BankCommand::Annotate { id, template, fields } => {
            let result = parse_pairs(fields).and_then(|fields| {
                ws.annotate(id, &AnnotateRequest { template_id: template.clone(), fields: Value::Object(fields) })
            });
            printer.emit(result, record_line)
        }
        BankCommand::Audit { id, approve, note, .. } => {
            let verdict = if *approve { Verdict::Approve } else { Verdict::Reject };
            printer.emit(ws.audit(id, &AuditRequest { verdict, note: note.clone() }), record_line)
        }
        BankCommand::Reopen { id } => printer.emit(ws.reopen(id), record_line),
        BankCommand::Export { priority, template, since, output } => {
            let result = export_filter(priority.as_deref(), template.clone(), *since).and_then(|filter| match output {
                Some(path) => ws.export_to(&filter, path),
                None => Ok(ws.export(&filter)),
            });
            printer.emit(result, |samples| match output {
                Some(path) => format!("{} samples written to {}\n", samples.len(), path.display()),
                None => samples.iter().map(|s| format!("{}\n", serde_json::to_string(s).unwrap_or_default())).collect(),
            })
        }
    }
}

fn export_filter(priority: Option<&str>, template: Option<String>, since: Option<u64>) -> Result<ExportFilter, ApiError> {
    let priority = match priority {
        Some(p) => Some(Priority::parse(p).ok_or_else(|| ApiError::bad_request(format!("unknown priority `{p}`")))?),
        None => None,
    };
    Ok(ExportFilter { priority, template, since })
}

fn prompt(store: &Path, cmd: &PromptCommand, printer: &mut Printer<'_>) -> i32 {
    let version_line =
        |v: &oxy_core::bank::PromptVersion| format!("v{} applied={}\n{}\n", v.version, v.applied, v.prompt);
    match cmd {
        PromptCommand::Optimize { agent, config, binding } => {
            let result = open(store, Some(config))
                .and_then(|ws| ws.optimize_prompt(agent, &OptimizeRequest { binding: binding.clone() }));
            printer.emit(result, version_line)
        }
        PromptCommand::Apply { agent, version, config } => {
            let result = open(store, Some(config)).and_then(|ws| ws.apply_prompt(agent, &ApplyRequest { version: *version }));
            printer.emit(result, version_line)
        }
        PromptCommand::List { agent, config } => {
            let result = open(store, Some(config)).and_then(|ws| ws.prompt_versions(agent));
            printer.emit(result, |versions| versions.iter().map(version_line).collect())
        }
    }
}

fn render_topology(t: &TopologyView) -> String {
    let mut s = format!("entrypoints: {}\n", t.entrypoints.join(", "));
    for n in &t.nodes {
        s.push_str(&format!("node {} [{}]\n", n.name, n.kind));
    }
    for e in &t.edges {
        s.push_str(&format!("{} -> {} ({})\n", e.from, e.to, e.relation));
    }
    for issue in &t.issues {
        s.push_str(&format!("{:?}: {}\n", issue.severity(), serde_json::to_string(issue).unwrap_or_default()));
    }
    s
}
