use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use navfuse::benchmark::PolicySpec;
use navfuse::{Error, Result};
use navfuse_cli::commands::{self, Template};
use navfuse_cli::RunConfig;

#[derive(Parser)]
#[command(name = "navfuse", version, about = "Simulate, collect, train and benchmark fusion driving policies")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel episode workers (env NAVFUSE_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (env NAVFUSE_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a town map from a template.
    MakeMap {
        #[arg(long, value_enum, default_value = "grid")]
        template: Template,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        block: Option<f64>,
        #[arg(long)]
        lane_width: Option<f64>,
        #[arg(long)]
        drop_fraction: Option<f64>,
        #[arg(long)]
        name: Option<String>,
        /// Destination file.
        output: PathBuf,
    },
    /// Record expert episodes into a dataset.
    Collect,
    /// Train the policy on the collected dataset.
    Train,
    /// Run the benchmark suite.
    Bench {
        /// Extra checkpoint policy as NAME=PATH; repeatable.
        #[arg(long = "checkpoint", value_parser = parse_checkpoint)]
        checkpoints: Vec<(String, PathBuf)>,
    },
    /// Recompute suite reports from stored episode logs.
    Metrics {
        /// Suite id; defaults to the configured one.
        #[arg(long)]
        id: Option<String>,
    },
    /// Dump one stored frame's camera and ralidar channels as PNGs.
    Inspect {
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 4)]
        scale: u32,
    },
}

fn parse_checkpoint(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got {s:?}"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected NAME=PATH, got {s:?}"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn env_jobs() -> Result<Option<usize>> {
    match std::env::var("NAVFUSE_JOBS") {
        Ok(v) => v.parse().map(Some).map_err(|_| Error::Config(format!("NAVFUSE_JOBS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out.clone().or_else(|| std::env::var_os("NAVFUSE_OUT").map(PathBuf::from)) {
        cfg.out = out;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let jobs = match cli.jobs {
        Some(j) => j,
        None => env_jobs()?.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    };
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    match &cli.command {
        Command::MakeMap { template, rows, cols, block, lane_width, drop_fraction, name, output } => {
            let mut p = commands::template_params(*template, cli.seed.unwrap_or(0));
            p.rows = rows.unwrap_or(p.rows);
            p.cols = cols.unwrap_or(p.cols);
            p.block = block.unwrap_or(p.block);
            p.lane_width = lane_width.unwrap_or(p.lane_width);
            p.drop_fraction = drop_fraction.unwrap_or(p.drop_fraction);
            p.name = name.clone().unwrap_or(p.name);
            let map = commands::make_map(&p, output)?;
            println!("wrote {} ({} nodes, {} lanes) to {}", map.name, map.nodes.len(), map.lanes.len(), output.display());
        }
        Command::Collect => {
            let cfg = load_config(&cli)?;
            let (_, stats) = commands::collect(&cfg, jobs)?;
            println!("dataset {}: {stats}", cfg.dataset_dir().display());
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let s = commands::train(&cfg)?;
            println!(
                "trained {} steps on {} frames ({} validation); best validation loss {:.4} at step {}; c2 {:.4}",
                s.steps, s.train_frames, s.val_frames, s.best_val, s.best_step, s.c2
            );
            println!("checkpoint {}\nloss curve {}", s.checkpoint.display(), s.loss_csv.display());
        }
        Command::Bench { checkpoints } => {
            let cfg = load_config(&cli)?;
            let extra: Vec<PolicySpec> =
                checkpoints.iter().map(|(name, path)| PolicySpec::Checkpoint { name: name.clone(), path: path.clone() }).collect();
            let report = commands::bench(&cfg, &extra, jobs)?;
            print_report(&report);
        }
        Command::Metrics { id } => {
            let cfg = load_config(&cli)?;
            let id = id.clone().unwrap_or_else(|| cfg.suite.id.clone());
            let report = commands::metrics(&cfg, &id)?;
            print_report(&report);
        }
        Command::Inspect { episode, frame, scale } => {
            let cfg = load_config(&cli)?;
            for f in commands::inspect(&cfg, *episode, *frame, *scale)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn print_report(report: &navfuse::benchmark::SuiteReport) {
    println!("suite {} config {}", report.id, report.config_hash);
    println!("{:<16} {:<28} {:>6} {:>7} {:>7} {:>7}", "policy", "task", "eps", "SR%", "WL%", "OVSP%");
    for t in &report.metrics.tasks {
        println!("{:<16} {:<28} {:>6} {:>7.1} {:>7.2} {:>7.2}", t.policy, t.task(), t.episodes, t.sr, t.wl, t.ovsp);
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
