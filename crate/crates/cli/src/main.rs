//! `phylo`: run, resume and inspect forest-of-trees optimization runs.

use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use phylo_core::executor::MODE_ENV;
use phylo_core::forest::{to_dot, to_sexpr, TreeId};
use phylo_core::orchestrator::{
    build_runtime, checkpoint, report_csv, report_text, CheckpointBody, Orchestrator, Paths, RunConfig, RunError,
    CHECKPOINT_FILE,
};
use phylo_core::testbed::harness_main;

const EXIT_CONFIG: u8 = 2;
const EXIT_ABORTED: u8 = 3;
const EXIT_CHECKPOINT: u8 = 4;
const EXIT_LOOKUP: u8 = 5;
const EXIT_INTERNAL: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "phylo", version, about = "Evolutionary search over a forest of candidate lineages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start a run from a JSON config.
    Run {
        config: PathBuf,
        /// Directory for checkpoint, event log, forest dump and report.
        #[arg(short, long, default_value = "phylo-run")]
        output: PathBuf,
        /// Override the configured epoch budget.
        #[arg(long)]
        epochs: Option<u64>,
        /// Checkpoint and stop after this many epochs.
        #[arg(long)]
        stop_after: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Continue a run from its checkpoint file or output directory.
    Resume {
        checkpoint: PathBuf,
        /// Extend the epoch budget by this many epochs.
        #[arg(long)]
        add_epochs: Option<u64>,
        /// Checkpoint and stop after this many epochs.
        #[arg(long)]
        stop_after: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Print trees from a checkpoint.
    Inspect {
        checkpoint: PathBuf,
        /// Tree to print, such as `t0`. Defaults to every tree.
        #[arg(long, conflicts_with = "all")]
        tree: Option<String>,
        #[arg(long)]
        all: bool,
        #[arg(long, value_enum, default_value = "sexpr")]
        format: Format,
        /// Include tombstoned nodes.
        #[arg(long)]
        include_pruned: bool,
    },
    /// Summarize a checkpoint: best node per tree and top modifications.
    Report {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Print the best-reward trace as CSV instead.
        #[arg(long)]
        csv: bool,
    },
    /// Evaluation harness for the built-in tasks (used by the executor).
    #[command(hide = true)]
    Harness {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Harness program for the built-in tasks. Defaults to this executable.
    #[arg(long)]
    harness: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Sexpr,
    Dot,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = match &e {
            RunError::Config(_) | RunError::Seed(_) => EXIT_CONFIG,
            RunError::Aborted { .. } | RunError::Exhausted => EXIT_ABORTED,
            RunError::Checkpoint(_) | RunError::Io { .. } => EXIT_CHECKPOINT,
            RunError::Internal(_) => EXIT_INTERNAL,
        };
        Failure::new(code, e.to_string())
    }
}

fn default_harness(explicit: Option<PathBuf>) -> Result<(PathBuf, Vec<String>), Failure> {
    if let Some(h) = explicit {
        return Ok((h, Vec::new()));
    }
    let exe = std::env::current_exe().map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot locate executable: {e}")))?;
    Ok((exe, vec!["harness".to_string()]))
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(p).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", p.display())))
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_checkpoint(p: &Path) -> Result<CheckpointBody, Failure> {
    checkpoint::read(&checkpoint_path(p)).map_err(|e| Failure::new(EXIT_CHECKPOINT, e.to_string()))
}

fn drive(orch: &mut Orchestrator, stop_after: Option<u64>, quiet: bool) -> Result<(), Failure> {
    let mut done = 0;
    while !orch.is_finished() && stop_after.is_none_or(|n| done < n) {
        orch.step_epoch()?;
        done += 1;
        if !quiet {
            let s = orch.state();
            let best = s.best_reward.map(|b| b.to_string()).unwrap_or_else(|| "none".into());
            eprintln!("epoch {}/{}  best {best}  mode {}  trees {}", s.epoch, s.total_epochs, s.mode.as_str(), s.forest.len());
        }
    }
    orch.write_outputs()?;
    let out = orch.output_dir().map(Path::display).map(|d| d.to_string()).unwrap_or_default();
    let mut stdout = io::stdout().lock();
    match orch.best() {
        Some(best) => {
            let _ = writeln!(stdout, "best reward {} at {} {}", best.reward, best.tree, best.node);
        }
        None => {
            let _ = writeln!(stdout, "no successful candidate");
        }
    }
    if !orch.is_finished() {
        let s = orch.state();
        let _ = writeln!(stdout, "stopped after epoch {} of {}; continue with `phylo resume {out}`", s.epoch, s.total_epochs);
    }
    Ok(())
}

fn run(config_path: &Path, output: &Path, epochs: Option<u64>, stop_after: Option<u64>, common: Common) -> Result<(), Failure> {
    let mut config = RunConfig::load(config_path).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    if let Some(n) = epochs {
        config.epochs = n;
    }
    let config_path = absolute(config_path)?;
    let base_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.resolve_paths(&base_dir);
    let output = absolute(output)?;
    std::fs::create_dir_all(&output)
        .map_err(|e| Failure::new(EXIT_CHECKPOINT, format!("cannot create {}: {e}", output.display())))?;
    let paths = Paths { base_dir, output_dir: output.clone(), default_harness: Some(default_harness(common.harness)?) };
    let runtime = build_runtime(&config, &paths).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    let mut orch = Orchestrator::new(config, runtime, Some(output))?;
    drive(&mut orch, stop_after, common.quiet)
}

fn resume(path: &Path, add_epochs: Option<u64>, stop_after: Option<u64>, common: Common) -> Result<(), Failure> {
    let file = absolute(&checkpoint_path(path))?;
    let body = load_checkpoint(&file)?;
    let output = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let paths = Paths {
        base_dir: output.clone(),
        output_dir: output.clone(),
        default_harness: Some(default_harness(common.harness)?),
    };
    let runtime = build_runtime(&body.config, &paths).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    let mut orch = Orchestrator::resume(body, runtime, Some(output))?;
    if let Some(extra) = add_epochs {
        let total = orch.state().total_epochs + extra;
        orch.set_total_epochs(total);
    }
    drive(&mut orch, stop_after, common.quiet)
}

fn inspect(path: &Path, tree: Option<String>, format: Format, include_pruned: bool) -> Result<(), Failure> {
    let body = load_checkpoint(path)?;
    let forest = &body.state.forest;
    let trees: Vec<_> = match tree {
        Some(raw) => {
            let id: TreeId = raw.parse().map_err(|e: String| Failure::new(EXIT_LOOKUP, e))?;
            let t = forest.tree(id).map_err(|e| Failure::new(EXIT_LOOKUP, e.to_string()))?;
            vec![t]
        }
        None => forest.trees.values().collect(),
    };
    let mut stdout = io::stdout().lock();
    for t in trees {
        let text = match format {
            Format::Sexpr => format!(";; tree {} {:?}\n{}\n", t.id, t.meta.label, to_sexpr(t, include_pruned)),
            Format::Dot => to_dot(t),
        };
        let _ = stdout.write_all(text.as_bytes());
    }
    Ok(())
}

fn report(path: &Path, top: usize, csv: bool) -> Result<(), Failure> {
    let body = load_checkpoint(path)?;
    let text = if csv { report_csv(&body.state) } else { report_text(&body.state, top) };
    let _ = io::stdout().lock().write_all(text.as_bytes());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, output, epochs, stop_after, common } => run(&config, &output, epochs, stop_after, common),
        Command::Resume { checkpoint, add_epochs, stop_after, common } => resume(&checkpoint, add_epochs, stop_after, common),
        Command::Inspect { checkpoint, tree, all: _, format, include_pruned } => {
            inspect(&checkpoint, tree, format, include_pruned)
        }
        Command::Report { checkpoint, top, csv } => report(&checkpoint, top, csv),
        Command::Harness { args } => {
            let mode = std::env::var(MODE_ENV).unwrap_or_else(|_| "full".to_string());
            let status = harness_main(&args, &mode, &mut io::stdout().lock(), &mut io::stderr().lock());
            return ExitCode::from(u8::try_from(status).unwrap_or(1));
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
