//! Command-line interface: the server plus offline simulation and
//! evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use duplex_core::audio::Language;
use duplex_core::eot::{
    eot_eval, read_corpus, ConstantBackend, EotBackend, EotLabel, RemoteBackend, RuleBackend,
};
use duplex_core::metrics::{
    barge_in_metrics, emit_report, latency_metrics, offset_grid, MetricsReport, ReportFormat,
};
use duplex_core::sim::{
    build_corpus, read_manifest, run_barge_in_trial, run_latency_trial, simulate_blocking, write_manifest,
    CorpusConfig, MockDelays, ScorerChoice, SimCase,
};
use duplex_core::turn::{read_trace, Trace, TrialKind};

use crate::config::{ServerConfig, DEFAULT_BIND};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "duplex", version, about = "Full-duplex turn-taking gateway and evaluation tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the WebSocket gateway.
    Serve {
        /// TOML or JSON config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Listen address; overrides the config file.
        #[arg(long, env = "DUPLEX_BIND")]
        bind: Option<String>,
    },
    /// Replay a scenario manifest through simulated sessions and write traces.
    Simulate(SimulateArgs),
    /// Compute metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Generate a synthetic scenario corpus with a manifest.
    MakeCorpus {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value = "en")]
        language: Language,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; traces go to `<out>/<scorer>/<case>-<trial>.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Frame scorers to run.
    #[arg(long, value_delimiter = ',', default_value = "oracle,energy,reference")]
    pub scorers: Vec<ScorerChoice>,
    /// Session settings and end-of-turn backend come from this file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mock component delays for latency trials, in ms.
    #[arg(long, default_value_t = 0)]
    pub asr_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub llm_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub tts_ms: u64,
    /// Silence after the utterance in latency trials, in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub latency_tail: f64,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => ReportFormat::TableText,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Barge-in accuracy curve, T90 and false barge-in rate per scorer.
    BargeIn {
        #[arg(long)]
        traces: PathBuf,
        /// Largest offset of the 10 ms grid, in ms.
        #[arg(long, default_value_t = 1000)]
        max_offset_ms: u32,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// End-of-turn accuracy of a backend on a labelled corpus.
    Eot {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "rule")]
        backend: EotChoice,
        /// Classifier URL for the remote backend.
        #[arg(long)]
        url: Option<String>,
        #[arg(long, default_value_t = 300)]
        timeout_ms: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// End-to-first-audio latency percentiles per scorer.
    Latency {
        #[arg(long)]
        traces: PathBuf,
        /// Value given to trials without agent audio, in seconds.
        #[arg(long, default_value_t = 10.0)]
        cap: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EotChoice {
    Rule,
    AlwaysFinished,
    AlwaysUnfinished,
    Remote,
}

/// Loads the config file, or defaults, and applies the bind override.
pub fn load_config(path: Option<&Path>, bind: Option<String>) -> Result<ServerConfig, CliError> {
    let mut config = match path {
        Some(p) => ServerConfig::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => ServerConfig::default(),
    };
    if let Some(b) = bind {
        config.bind = b;
    }
    if config.bind.is_empty() {
        config.bind = DEFAULT_BIND.into();
    }
    Ok(config)
}

/// Runs every command except `serve`.
pub fn run_offline(command: Command) -> Result<String, CliError> {
    match command {
        Command::Serve { .. } => Err(CliError::Config("serve needs the async runtime".into())),
        Command::Simulate(args) => simulate(&args),
        Command::Eval(e) => eval(e),
        Command::MakeCorpus {
            seed,
            count,
            language,
            out,
        } => {
            let cases = build_corpus(&CorpusConfig {
                count,
                seed,
                language,
                ..CorpusConfig::default()
            })
            .map_err(runtime)?;
            write_manifest(&out, &cases).map_err(runtime)?;
            Ok(format!("wrote {} scenarios to {}\n", cases.len(), out.display()))
        }
    }
}

fn trial_file(case: &SimCase, kind: TrialKind) -> String {
    let suffix = match kind {
        TrialKind::BargeIn => "barge-in",
        TrialKind::PrimarySilent => "silent",
        TrialKind::Latency => "latency",
        TrialKind::Live => "live",
    };
    format!("{}-{suffix}.jsonl", case.id)
}

fn scorer_dir(s: ScorerChoice) -> &'static str {
    match s {
        ScorerChoice::Oracle => "oracle",
        ScorerChoice::Energy => "energy",
        ScorerChoice::Reference => "reference",
    }
}

fn simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let config = load_config(args.config.as_deref(), None)?;
    let cases = read_manifest(&args.manifest).map_err(|e| CliError::Config(e.to_string()))?;
    let settings = config.session.settings();
    let eot = config.session.eot_backend();
    let delays = MockDelays {
        asr: Duration::from_millis(args.asr_ms),
        llm_first_token: Duration::from_millis(args.llm_ms),
        tts_first_frame: Duration::from_millis(args.tts_ms),
    };
    let jobs = match args.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    let mut work = Vec::new();
    for &scorer in &args.scorers {
        for case in &cases {
            for kind in [TrialKind::BargeIn, TrialKind::PrimarySilent, TrialKind::Latency] {
                work.push((scorer, case, kind));
            }
        }
    }
    let run_one = |(scorer, case, kind): (ScorerChoice, &SimCase, TrialKind)| -> Result<(PathBuf, String), CliError> {
        let outcome = simulate_blocking(async {
            match kind {
                TrialKind::Latency => {
                    run_latency_trial(case, scorer, &settings, delays, eot.clone(), args.latency_tail).await
                }
                _ => run_barge_in_trial(case, kind, scorer, &settings).await,
            }
        })
        .map_err(runtime)?;
        let path = args.out.join(scorer_dir(scorer)).join(trial_file(case, kind));
        Ok((path, outcome.trace.to_jsonl()))
    };
    let chunk = work.len().div_ceil(jobs).max(1);
    let results: Vec<Result<(PathBuf, String), CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = work
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(|&w| run_one(w)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("simulation worker panicked"))
            .collect()
    });
    let mut written = 0;
    for r in results {
        let (path, text) = r?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(runtime)?;
        }
        fs::write(&path, text).map_err(runtime)?;
        written += 1;
    }
    Ok(format!("wrote {written} traces to {}\n", args.out.display()))
}

/// Every `*.jsonl` trace under `dir`, in path order.
pub fn load_traces(dir: &Path) -> Result<Vec<Trace>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "jsonl") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let file = fs::File::open(p).map_err(runtime)?;
            read_trace(BufReader::new(file)).map_err(|e| runtime(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Traces grouped by the scorer recorded in their header.
fn by_scorer(traces: Vec<Trace>) -> BTreeMap<String, Vec<Trace>> {
    let mut groups: BTreeMap<String, Vec<Trace>> = BTreeMap::new();
    for t in traces {
        let key = t.header.trial.as_ref().map_or_else(String::new, |m| m.scorer.clone());
        groups.entry(key).or_default().push(t);
    }
    groups
}

fn deliver(report: &MetricsReport, output: &OutputArgs) -> Result<String, CliError> {
    let text = emit_report(report, output.format.into()).map_err(runtime)?;
    match &output.out {
        Some(path) => {
            fs::write(path, &text).map_err(runtime)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

fn eval(command: EvalCommand) -> Result<String, CliError> {
    match command {
        EvalCommand::BargeIn {
            traces,
            max_offset_ms,
            output,
        } => {
            let offsets = offset_grid(max_offset_ms);
            let mut report = MetricsReport::default();
            for (_, group) in by_scorer(load_traces(&traces)?) {
                let kinds = |k: TrialKind| group.iter().any(|t| t.header.trial.as_ref().is_some_and(|m| m.kind == k));
                if kinds(TrialKind::BargeIn) || kinds(TrialKind::PrimarySilent) {
                    report.barge_in.push(barge_in_metrics(&group, &offsets).map_err(runtime)?);
                }
            }
            if report.barge_in.is_empty() {
                return Err(runtime(format!("no barge-in trials under {}", traces.display())));
            }
            deliver(&report, &output)
        }
        EvalCommand::Latency { traces, cap, output } => {
            let mut report = MetricsReport::default();
            for (_, group) in by_scorer(load_traces(&traces)?) {
                if group.iter().any(|t| t.header.trial.as_ref().is_some_and(|m| m.kind == TrialKind::Latency)) {
                    report.latency.push(latency_metrics(&group, cap).map_err(runtime)?);
                }
            }
            if report.latency.is_empty() {
                return Err(runtime(format!("no latency trials under {}", traces.display())));
            }
            deliver(&report, &output)
        }
        EvalCommand::Eot {
            corpus,
            backend,
            url,
            timeout_ms,
            output,
        } => {
            let file = fs::File::open(&corpus).map_err(|e| CliError::Config(format!("{}: {e}", corpus.display())))?;
            let examples = read_corpus(BufReader::new(file)).map_err(|e| CliError::Config(e.to_string()))?;
            let backend: Arc<dyn EotBackend> = match backend {
                EotChoice::Rule => Arc::new(RuleBackend),
                EotChoice::AlwaysFinished => Arc::new(ConstantBackend(EotLabel::Finished)),
                EotChoice::AlwaysUnfinished => Arc::new(ConstantBackend(EotLabel::Unfinished)),
                EotChoice::Remote => {
                    let url = url.ok_or_else(|| CliError::Config("--url is required for the remote backend".into()))?;
                    Arc::new(RemoteBackend::new(url, Duration::from_millis(timeout_ms)))
                }
            };
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(runtime)?;
            let result = rt.block_on(eot_eval(&examples, backend.as_ref())).map_err(runtime)?;
            let report = MetricsReport {
                eot: vec![result],
                ..MetricsReport::default()
            };
            deliver(&report, &output)
        }
    }
}
