use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deixis_cli::{cmd_eval, cmd_segment, cmd_synth, cmd_train, load_clip_dir, parse_unit, CliError, ExperimentConfig};
use deixis_core::learn::Mode;
use deixis_core::mocap::LengthUnit;

/// Pointing-gesture workbench: segment motion clips, synthesize corpora, train and
/// evaluate arm policies.
#[derive(Parser)]
#[command(name = "deixis", version)]
struct Cli {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config; default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find pointing movements in BVH or JSON clips and tabulate them.
    Segment {
        /// Clip files or directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// BVH length unit: m, cm or mm.
        #[arg(long, default_value = "cm", value_parser = parse_unit)]
        unit: LengthUnit,
        #[arg(long)]
        min_peak_height: Option<f64>,
        #[arg(long)]
        min_prominence: Option<f64>,
        #[arg(long)]
        rest_threshold: Option<f64>,
    },
    /// Generate a synthetic pointing corpus.
    Synth {
        /// Number of clips (overrides corpus.n).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a policy.
    Train {
        /// dm, dm-wr, amp or task-only.
        #[arg(long)]
        mode: Mode,
        /// Reference clips (a synth output directory or a folder of clips).
        #[arg(long)]
        clips: Option<PathBuf>,
        /// Use only the first n clips.
        #[arg(long)]
        clip_count: Option<usize>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Total environment steps (overrides train.total_steps).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare checkpoints on held-out targets.
    Eval {
        /// Checkpoint as NAME=PATH or PATH (named after the file stem); repeatable.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<String>,
        /// Leave out the expert and random rows.
        #[arg(long)]
        no_baselines: bool,
        /// Number of held-out targets (overrides eval.held_out_count).
        #[arg(long)]
        targets: Option<usize>,
    },
}

fn named_checkpoint(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) => (name.to_string(), PathBuf::from(path)),
        None => {
            let path = PathBuf::from(arg);
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| arg.to_string());
            (name, path)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    cfg.out = Some(out.clone());
    let out = out.as_path();

    match cli.command {
        Command::Segment { inputs, unit, min_peak_height, min_prominence, rest_threshold } => {
            let s = &mut cfg.segment;
            s.min_peak_height = min_peak_height.unwrap_or(s.min_peak_height);
            s.min_prominence = min_prominence.unwrap_or(s.min_prominence);
            s.rest_threshold = rest_threshold.unwrap_or(s.rest_threshold);
            let summary = cmd_segment(&inputs, unit, &cfg, out)?;
            println!("{} segments in {} clips -> {}", summary.segments.len(), summary.clips, out.display());
        }
        Command::Synth { n } => {
            if let Some(n) = n {
                cfg.corpus.n = n;
            }
            let m = cmd_synth(&cfg, out)?;
            let failed = m.clips.iter().filter(|c| c.error.is_some()).count();
            println!("{} clips ({failed} failed) -> {}", m.clips.len() - failed, out.display());
        }
        Command::Train { mode, clips, clip_count, resume, steps } => {
            if let Some(n) = steps {
                cfg.train.total_steps = n;
            }
            if clip_count.is_some() {
                cfg.train.clip_count = clip_count;
            }
            let clips = match &clips {
                Some(dir) => load_clip_dir(dir, LengthUnit::default())?,
                None => Vec::new(),
            };
            let ck = cmd_train(&cfg, mode, &clips, resume.as_deref(), out)?;
            println!("{mode}: {} steps, {} updates -> {}", ck.step, ck.updates, out.join("checkpoint.json").display());
        }
        Command::Eval { checkpoints, no_baselines, targets } => {
            if let Some(n) = targets {
                cfg.eval.held_out_count = n;
            }
            let named: Vec<(String, PathBuf)> = checkpoints.iter().map(|s| named_checkpoint(s)).collect();
            let summary = cmd_eval(&cfg, &named, !no_baselines, out)?;
            for r in &summary.reports {
                let a = &r.aggregate;
                println!("{:<12} r_max {}  r_mean {}  jerk_r {}", r.model, a.r_max, a.r_mean, a.jerk_r);
            }
            if !summary.failures.is_empty() {
                return Err(CliError::Input(format!("{} model(s) could not be evaluated", summary.failures.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
