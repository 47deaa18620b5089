//! The `haggle` pipeline: corpus in, trained agents, tournament tables and a
//! live arena out. Each command reads the shared [`RunConfig`] and writes
//! under the output directory.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use haggle_core::checkpoint::{write_atomic, Checkpoint, Provenance};
use haggle_core::corpus::{corpus_stats, extraction_coverage, generate_lines, load_corpus, CorpusStats, SynthConfig};
use haggle_core::matrix::{build_matrix, load_agents, SUPERVISED_ID};
use haggle_core::report::{emit_tournament, load_tournament, write_jsonl_stamped, write_report, Stamp, TournamentReport};
use haggle_core::supervised::{examples_from_records, supervised_train_with, Example};
use haggle_core::tournament::{run_grid, Entrant, MetricsTable};

pub use config::{Need, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "haggle", about = "Train, evaluate and serve negotiation agents")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces every stage seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus in the corpus line format.
    SynthCorpus,
    /// Parse the corpus into normalized records, statistics and extraction coverage.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Print corpus statistics.
    Stats {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train the supervised agent S on the corpus.
    TrainSup {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train every reward against S, then against each of those agents.
    TrainMatrix {
        #[arg(long)]
        supervised: Option<PathBuf>,
    },
    /// Play the round robin between the agents of a manifest.
    Tournament {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Rebuild metrics tables and heatmaps from stored tournament games.
    Report {
        #[arg(long)]
        tournament: Option<PathBuf>,
    },
    /// Run the arena HTTP service.
    Serve {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(Vec<String>),
    Data(String),
    Training(String),
    Integrity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Integrity(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(errs) => {
                writeln!(f, "configuration error:")?;
                errs.iter().try_for_each(|e| writeln!(f, "  - {e}"))
            }
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Training(m) => write!(f, "training error: {m}"),
            CliError::Integrity(m) => write!(f, "integrity error: {m}"),
        }
    }
}

/// Which failure class an error from a stage falls into when the error
/// itself does not say.
#[derive(Clone, Copy)]
enum Stage {
    Data,
    Training,
}

fn classify(stage: Stage) -> impl Fn(haggle_core::Error) -> CliError {
    use haggle_core::Error as E;
    move |e| match e {
        E::Integrity(_) | E::IncompleteGrid(_) => CliError::Integrity(e.to_string()),
        E::Config(_) | E::Precondition(_) | E::UnknownPreset(_) => CliError::Config(vec![e.to_string()]),
        E::Training(_) => CliError::Training(e.to_string()),
        _ => match stage {
            Stage::Data => CliError::Data(e.to_string()),
            Stage::Training => CliError::Training(e.to_string()),
        },
    }
}

fn arena_error(e: haggle_arena::ArenaError) -> CliError {
    match e {
        haggle_arena::ArenaError::Core(c) => classify(Stage::Data)(c),
        other => CliError::Data(other.to_string()),
    }
}

/// Resolves the configuration: file, then flags, then per-command paths.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(cli.seed, cli.out.clone());
    match &cli.command {
        Command::Ingest { corpus } | Command::Stats { corpus } | Command::TrainSup { corpus } => {
            if corpus.is_some() {
                cfg.paths.corpus = corpus.clone();
            }
        }
        Command::TrainMatrix { supervised } if supervised.is_some() => cfg.paths.supervised = supervised.clone(),
        Command::Tournament { manifest } if manifest.is_some() => cfg.paths.manifest = manifest.clone(),
        Command::Report { tournament } if tournament.is_some() => cfg.paths.tournament = tournament.clone(),
        Command::Serve { manifest, bind, data_dir } => {
            if manifest.is_some() {
                cfg.paths.manifest = manifest.clone();
            }
            if let Some(b) = bind {
                cfg.serve.bind = b.clone();
            }
            if data_dir.is_some() {
                cfg.paths.data_dir = data_dir.clone();
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn needs(cmd: &Command, cfg: &RunConfig) -> Vec<Need> {
    match cmd {
        Command::SynthCorpus => vec![Need::Nothing],
        Command::Ingest { .. } | Command::Stats { .. } | Command::TrainSup { .. } => vec![Need::Corpus],
        Command::TrainMatrix { .. } if cfg.matrix.trainer.supervised_every > 0 => vec![Need::Supervised, Need::Corpus],
        Command::TrainMatrix { .. } => vec![Need::Supervised],
        Command::Tournament { .. } | Command::Serve { .. } => vec![Need::Manifest],
        Command::Report { .. } => vec![Need::Tournament],
    }
}

/// Validates everything up front, then runs the command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let errs = cfg.validate(&needs(&cli.command, &cfg));
    if !errs.is_empty() {
        return Err(CliError::Config(errs));
    }
    match &cli.command {
        Command::SynthCorpus => synth_corpus(&cfg).map(|p| println!("wrote {}", p.display())),
        Command::Ingest { .. } => ingest(&cfg).map(|s| print!("{}", format_stats(&s))),
        Command::Stats { .. } => stats(&cfg).map(|s| print!("{}", format_stats(&s))),
        Command::TrainSup { .. } => train_supervised(&cfg, |line| println!("{line}")).map(|p| println!("wrote {}", p.display())),
        Command::TrainMatrix { .. } => train_matrix(&cfg, |line| println!("{line}")).map(|p| println!("wrote {}", p.display())),
        Command::Tournament { .. } => tournament(&cfg).map(|r| print!("{}", format_metrics(&r))),
        Command::Report { .. } => report(&cfg).map(|r| print!("{}", format_metrics(&r))),
        Command::Serve { .. } => serve(&cfg),
    }
}

fn corpus_path(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.paths.corpus.as_deref().ok_or_else(|| CliError::Config(vec!["paths.corpus is required".into()]))
}

/// Writes `<out>/synthetic/train.txt`.
pub fn synth_corpus(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let synth = SynthConfig {
        dialogues: cfg.synth.dialogues,
        seed: cfg.seed.unwrap_or(SynthConfig::default().seed),
        chitchat_rate: cfg.synth.chitchat_rate,
        ..Default::default()
    };
    let lines = generate_lines(&synth).map_err(classify(Stage::Data))?;
    let path = cfg.out().join("synthetic/train.txt");
    let mut text = lines.join("\n");
    text.push('\n');
    write_atomic(&path, text.as_bytes()).map_err(classify(Stage::Data))?;
    Ok(path)
}

fn load_records(cfg: &RunConfig) -> Result<Vec<haggle_core::corpus::CorpusRecord>, CliError> {
    let (records, report) = load_corpus(corpus_path(cfg)?).map_err(classify(Stage::Data))?;
    for e in report.errors.iter().take(10) {
        eprintln!("line {}: {}", e.line_no, e.message);
    }
    if !report.errors.is_empty() {
        eprintln!("{} malformed lines skipped", report.errors.len());
    }
    if records.is_empty() {
        return Err(CliError::Data("the corpus contains no valid records".into()));
    }
    Ok(records)
}

pub fn stats(cfg: &RunConfig) -> Result<CorpusStats, CliError> {
    corpus_stats(&load_records(cfg)?).map_err(classify(Stage::Data))
}

/// Writes records, statistics and extraction coverage under `<out>/corpus`.
pub fn ingest(cfg: &RunConfig) -> Result<CorpusStats, CliError> {
    let records = load_records(cfg)?;
    let stats = corpus_stats(&records).map_err(classify(Stage::Data))?;
    let coverage = extraction_coverage(&records);
    let dir = cfg.out().join("corpus");
    let stamp = Stamp::new(cfg.hash(), cfg.seed.unwrap_or(0));
    let write = |name: &str, kind: &str, json: Vec<serde_json::Value>| {
        write_jsonl_stamped(&dir.join(name), kind, &stamp, &json).map_err(classify(Stage::Data))
    };
    write("records.jsonl", "corpus_record", records.iter().map(to_json).collect())?;
    write("stats.jsonl", "corpus_stats", vec![to_json(&stats)])?;
    write("coverage.jsonl", "extraction_coverage", vec![to_json(&coverage)])?;
    Ok(stats)
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

pub fn format_stats(s: &CorpusStats) -> String {
    format!(
        "dialogues: {}\nunique scenarios: {}\nagreement rate: {:.1}%\navg turns: {:.2}\navg words/turn: {:.2}\n",
        s.dialogue_count,
        s.unique_scenarios,
        100.0 * s.agreement_rate,
        s.avg_turns,
        s.avg_words_per_turn
    )
}

pub fn supervised_examples(cfg: &RunConfig) -> Result<Vec<Example>, CliError> {
    let examples = examples_from_records(&load_records(cfg)?);
    if examples.is_empty() {
        return Err(CliError::Data("no dialogue yields training targets".into()));
    }
    Ok(examples)
}

/// Trains S and writes its checkpoint and learning curve.
pub fn train_supervised(cfg: &RunConfig, log: impl Fn(&str)) -> Result<PathBuf, CliError> {
    let examples = supervised_examples(cfg)?;
    log(&format!("{} examples", examples.len()));
    let run = supervised_train_with(&examples, &cfg.supervised, |e| {
        log(&format!(
            "epoch {:>3} train {:.4} val {:.4} lr {:.4}",
            e.epoch, e.train_loss, e.validation_loss, e.learning_rate
        ))
    })
    .map_err(classify(Stage::Training))?;
    let provenance = Provenance::supervised(cfg.supervised.seed, examples.len(), Some(cfg.hash()));
    let path = cfg.supervised_path();
    Checkpoint::new(SUPERVISED_ID, provenance, run.policy).save(&path).map_err(classify(Stage::Training))?;
    let curve = path.with_file_name(format!("{SUPERVISED_ID}.curve.jsonl"));
    write_jsonl_stamped(&curve, "supervised_curve", &Stamp::new(cfg.hash(), cfg.supervised.seed), &run.curve)
        .map_err(classify(Stage::Training))?;
    Ok(path)
}

/// Trains the six-agent matrix and writes the manifest.
pub fn train_matrix(cfg: &RunConfig, log: impl Fn(&str) + Sync) -> Result<PathBuf, CliError> {
    let s = Checkpoint::load(&cfg.supervised_path()).map_err(classify(Stage::Data))?;
    let examples = if cfg.matrix.trainer.supervised_every > 0 { Some(supervised_examples(cfg)?) } else { None };
    let out = cfg.out();
    let on_log = |id: &str, p: &haggle_core::selfplay::CurvePoint| log(&format!("{id}: {p:?}"));
    build_matrix(&s, &out, &cfg.matrix, examples.as_deref(), &on_log).map_err(classify(Stage::Training))?;
    Ok(haggle_core::matrix::manifest_path(&out))
}

/// Plays the grid and writes the results under `<out>/tournament`.
pub fn tournament(cfg: &RunConfig) -> Result<TournamentReport, CliError> {
    let (_, agents) = load_agents(&cfg.manifest_path()).map_err(classify(Stage::Data))?;
    let entrants: Vec<Entrant> = agents
        .iter()
        .filter(|(spec, _)| cfg.tournament.include_supervised || spec.id != SUPERVISED_ID)
        .map(|(spec, p)| Entrant::policy(spec.id.clone(), p))
        .collect();
    let ids: Vec<String> = entrants.iter().map(|e| e.id.clone()).collect();
    let tc = &cfg.tournament.config;
    let results = run_grid(&entrants, tc).map_err(classify(Stage::Data))?;
    let stamp = Stamp::new(cfg.hash(), tc.seed);
    emit_tournament(&cfg.out().join("tournament"), &results, &ids, &stamp).map_err(classify(Stage::Data))
}

/// Rebuilds the tables from stored games into `<out>/report`, failing if
/// they differ from the tables stored next to the games.
pub fn report(cfg: &RunConfig) -> Result<TournamentReport, CliError> {
    let dir = cfg.tournament_dir();
    let (pairs, emitted) = load_tournament(&dir).map_err(classify(Stage::Data))?;
    let agents = emitted.heatmaps.first().map(|h| h.agents.clone()).unwrap_or_default();
    let rebuilt = TournamentReport::build(&pairs, &agents).map_err(classify(Stage::Data))?;
    if rebuilt != emitted {
        return Err(CliError::Integrity(format!("tables in {} do not match the stored games", dir.display())));
    }
    let header = haggle_core::report::read_header(&dir.join(haggle_core::report::PAIRS_FILE))
        .map_err(classify(Stage::Data))?;
    let stamp = Stamp { config_hash: header.config_hash, seed: header.seed };
    let out = cfg.out().join("report");
    write_report(&out, &rebuilt, &stamp).map_err(classify(Stage::Data))?;
    write_atomic(&out.join("metrics.md"), format_metrics(&rebuilt).as_bytes()).map_err(classify(Stage::Data))?;
    Ok(rebuilt)
}

fn format_table(out: &mut String, t: &MetricsTable) {
    let title = if t.include_walkaways { "including walkaways" } else { "excluding walkaways" };
    let _ = writeln!(out, "\n{title}\n");
    let _ = writeln!(out, "| agent | episodes | partner points | agent points | joint points | walkaway % |");
    let _ = writeln!(out, "|---|---|---|---|---|---|");
    for r in &t.rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {:.2} |",
            r.agent,
            r.episodes,
            r.partner_points.display(),
            r.agent_points.display(),
            r.joint_points.display(),
            r.walkaway_pct
        );
    }
}

/// Both metrics tables as Markdown.
pub fn format_metrics(r: &TournamentReport) -> String {
    let mut out = String::new();
    format_table(&mut out, &r.included);
    format_table(&mut out, &r.excluded);
    out
}

fn serve(cfg: &RunConfig) -> Result<(), CliError> {
    let addr = cfg.serve.bind.parse().map_err(|_| CliError::Config(vec![format!("bad bind address {}", cfg.serve.bind)]))?;
    let arena = haggle_arena::Arena::from_manifest(
        cfg.serve.arena.clone(),
        &cfg.manifest_path(),
        cfg.serve.include_supervised,
        &cfg.data_dir(),
    )
    .map_err(arena_error)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    println!("listening on {addr}");
    rt.block_on(haggle_arena::serve(Arc::new(arena), addr)).map_err(|e| CliError::Data(e.to_string()))
}
