//! Command line driver: synthetic corpus generation, manifest ingestion
//! checks, single runs, full sweeps, and post-hoc reporting and plotting.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 runtime error,
//! 3 partial sweep failure (some cells computed, some failed).

mod plot;
mod report;
mod results;
mod svg;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use planeshift_core::config::{ConfigError, ExperimentConfig, StrategyKind};
use planeshift_core::corpus::{load_manifest, DatasetManifest};
use planeshift_core::strategies::{
    expand_cells, run_sweep, CellStatus, StrategyError, SweepEnv, SweepReport,
};
use planeshift_core::synth::generate_centre;

use plot::FigureKind;

/// Environment overrides. Flags beat these; these beat the config file.
/// Only the output root and the worker count may come from the
/// environment, everything else must be explicit.
const ENV_OUT: &str = "PLANESHIFT_OUT";
const ENV_WORKERS: &str = "PLANESHIFT_WORKERS";

#[derive(Parser)]
#[command(
    name = "planeshift",
    version,
    about = "Cross-centre fetal-plane classification experiments",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Replace the config's run seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Force bit-reproducible execution (serialises cell workers).
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads for sweep cells.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output root, overriding the config file and PLANESHIFT_OUT.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate every synthetic centre declared in the config.
    Synth,
    /// Validate manifests and print per-centre corpus statistics.
    Ingest {
        /// Manifest CSV to inspect; default: every centre in the config.
        manifest: Option<PathBuf>,
    },
    /// Execute one strategy spec (or one expanded cell) across its seeds.
    Run {
        /// Spec id from the config, or an expanded cell id like `tl-n500-p8`.
        spec_id: Option<String>,
    },
    /// Execute the full strategy x grid x seed sweep, reusing completed cells.
    Sweep,
    /// Emit plot CSVs and SVG figures from a results tree.
    Plot {
        /// Results tree; default: the config's results directory.
        results_dir: Option<PathBuf>,
        /// Which figure family to emit.
        #[arg(long, value_enum, default_value_t = FigureKind::All)]
        kind: FigureKind,
    },
    /// Summarise a results tree: per-cell means over seeds.
    Report {
        /// Results tree; default: the config's results directory.
        results_dir: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad config file, bad flag values, unknown ids.
    Config(String),
    /// Failure while executing an otherwise valid request.
    Runtime(String),
    /// Plot or report pointed at a results tree with no completed cells.
    NoResults(PathBuf),
    /// A sweep where some cells succeeded and some failed.
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::NoResults(_) => 2,
            CliError::PartialSweep { .. } => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::NoResults(dir) => {
                write!(f, "no completed results under {}", dir.display())
            }
            CliError::PartialSweep { failed, total } => {
                write!(f, "partial sweep failure: {failed} of {total} cells failed")
            }
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth => cmd_synth(&load_config(cli)?),
        Command::Ingest { manifest } => match manifest {
            Some(path) => ingest_one(path),
            None => cmd_ingest(&load_config(cli)?),
        },
        Command::Run { spec_id } => cmd_run(load_config(cli)?, spec_id.as_deref()),
        Command::Sweep => cmd_sweep(&load_config(cli)?),
        Command::Plot { results_dir, kind } => {
            plot::cmd_plot(&results_root(cli, results_dir)?, *kind)
        }
        Command::Report { results_dir } => report::cmd_report(&results_root(cli, results_dir)?),
    }
}

fn results_root(cli: &Cli, explicit: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    match explicit {
        Some(dir) => Ok(dir.clone()),
        None => Ok(load_config(cli)?.results_dir()),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        CliError::Config("this command needs --config <PATH> (or a positional results dir)".into())
    })?;
    let mut cfg = ExperimentConfig::load(path)?;

    if let Ok(v) = std::env::var(ENV_OUT) {
        if !v.is_empty() {
            cfg.out_dir = PathBuf::from(v);
        }
    }
    if let Ok(v) = std::env::var(ENV_WORKERS) {
        if !v.is_empty() {
            cfg.workers = v.parse().map_err(|_| {
                CliError::Config(format!("{ENV_WORKERS} must be a positive integer, got `{v}`"))
            })?;
        }
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(seed) = cli.seed {
        cfg.sweep.seeds = vec![seed];
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    // Cell outputs are seed-pinned either way; deterministic mode also
    // pins scheduling so two invocations do byte-identical work in the
    // same order.
    if cfg.deterministic && cfg.workers > 1 {
        eprintln!("note: deterministic mode serialises execution; ignoring workers = {}", cfg.workers);
        cfg.workers = 1;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_synth(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let data_dir = cfg.out_dir.join("data");
    let mut generated = 0;
    for centre in &cfg.centres {
        let Some(spec) = &centre.synth else { continue };
        let manifest = generate_centre(spec, &data_dir)
            .map_err(|e| CliError::Runtime(format!("generating centre `{}`: {e}", centre.id)))?;
        println!(
            "{}: {} patients, {} images -> {}",
            centre.id,
            manifest.patients().len(),
            manifest.records.len(),
            data_dir.join(&centre.id).display()
        );
        generated += 1;
    }
    if generated == 0 {
        println!("no synthetic centres in config; nothing to generate");
    }
    Ok(())
}

fn cmd_ingest(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let data_dir = cfg.out_dir.join("data");
    for centre in &cfg.centres {
        let manifest_path = if let Some(path) = &centre.manifest {
            path.clone()
        } else {
            let generated = data_dir.join(&centre.id).join("manifest.csv");
            if !generated.is_file() {
                println!("{}: synthetic centre not generated yet (run `synth` first)", centre.id);
                continue;
            }
            generated
        };
        let manifest = load_manifest(&manifest_path).map_err(|e| {
            CliError::Runtime(format!("centre `{}`: {e}", centre.id))
        })?;
        print_manifest_summary(&manifest);
    }
    Ok(())
}

fn ingest_one(path: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(path)
        .map_err(|e| CliError::Runtime(format!("ingesting {}: {e}", path.display())))?;
    print_manifest_summary(&manifest);
    Ok(())
}

fn print_manifest_summary(m: &DatasetManifest) {
    let artifacts = m.records.iter().filter(|r| r.artifact_flag).count();
    println!(
        "{}: {} ({}), {} patients, {} images, {} flagged as artifacts",
        m.centre.centre_id,
        m.centre.vendor,
        m.centre.country,
        m.patients().len(),
        m.records.len(),
        artifacts,
    );
    for (label, count) in m.class_counts() {
        println!("  {:<8} {count}", label.as_str());
    }
}

fn available_ids(cfg: &ExperimentConfig) -> Vec<String> {
    let mut ids: Vec<String> = cfg.sweep.specs.iter().map(|s| s.id.clone()).collect();
    ids.extend(expand_cells(cfg).into_iter().map(|c| c.id));
    ids
}

/// Reduce the config to the one spec (or one expanded cell) named by
/// `wanted`. Cell ids keep their grids pinned to the single point, so the
/// cell hash, and therefore the results directory, match a full sweep's.
fn narrow_to(cfg: &mut ExperimentConfig, wanted: &str) -> Result<(), CliError> {
    if cfg.sweep.specs.iter().any(|s| s.id == wanted) {
        cfg.sweep.specs.retain(|s| s.id == wanted);
        return Ok(());
    }
    if let Some(cell) = expand_cells(cfg).into_iter().find(|c| c.id == wanted) {
        // Ids expand as `<base>-n..`/`<base>-p..`; the longest matching
        // prefix of the right kind is the owning spec.
        let base_idx = cfg
            .sweep
            .specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == cell.kind && wanted.starts_with(&format!("{}-", s.id)))
            .max_by_key(|(_, s)| s.id.len())
            .map(|(i, _)| i)
            .expect("expanded id derives from a configured spec");
        let spec = &mut cfg.sweep.specs[base_idx];
        if spec.kind != StrategyKind::FromScratch {
            spec.n_grid = vec![cell.n_source];
        }
        if let Some(p) = cell.p_target_patients {
            spec.p_grid = vec![p];
        }
        let keep = spec.id.clone();
        cfg.sweep.specs.retain(|s| s.id == keep);
        return Ok(());
    }
    Err(CliError::Config(format!(
        "unknown spec id `{wanted}`; available: {}",
        available_ids(cfg).join(", ")
    )))
}

fn execute(cfg: &ExperimentConfig, merge_aggregate: bool) -> Result<SweepReport, CliError> {
    let mut env = SweepEnv::new(cfg)?;
    env.merge_aggregate = merge_aggregate;
    Ok(run_sweep(&env)?)
}

fn print_outcomes(report: &SweepReport) {
    for o in &report.outcomes {
        match &o.status {
            CellStatus::Computed => {
                println!("computed {} seed {} -> {}", o.spec_id, o.seed, o.dir.display());
            }
            CellStatus::Reused => {
                println!("reused   {} seed {} -> {}", o.spec_id, o.seed, o.dir.display());
            }
            CellStatus::Failed(message) => {
                println!("FAILED   {} seed {}: {message}", o.spec_id, o.seed);
            }
        }
    }
    println!(
        "{} computed, {} reused, {} failed; aggregate at {}",
        report.computed,
        report.reused,
        report.failed,
        report.aggregate_csv.display()
    );
}

fn cmd_run(mut cfg: ExperimentConfig, spec_id: Option<&str>) -> Result<(), CliError> {
    let wanted = match spec_id {
        Some(id) => id.to_string(),
        None if cfg.sweep.specs.len() == 1 => cfg.sweep.specs[0].id.clone(),
        None => {
            return Err(CliError::Config(format!(
                "config has {} specs; pass one of: {}",
                cfg.sweep.specs.len(),
                available_ids(&cfg).join(", ")
            )))
        }
    };
    narrow_to(&mut cfg, &wanted)?;
    cfg.validate()?;
    // A single-cell run must not truncate a sweep-wide aggregate.
    let report = execute(&cfg, true)?;
    print_outcomes(&report);
    if report.failed > 0 {
        return Err(CliError::Runtime(format!(
            "{} of {} cells failed",
            report.failed,
            report.outcomes.len()
        )));
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let report = execute(cfg, false)?;
    print_outcomes(&report);
    let total = report.outcomes.len();
    match report.failed {
        0 => Ok(()),
        f if f == total => Err(CliError::Runtime(format!("all {total} cells failed"))),
        f => Err(CliError::PartialSweep { failed: f, total }),
    }
}
