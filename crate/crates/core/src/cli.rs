//! Command-line entry points.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Result;
use crate::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::metrics::StabilityReport;
use crate::pipeline::{process_stream, StabilizerConfig, Term};
use crate::scenario::{generate_scenario, ScenarioConfig, ScenarioKind};
use crate::trace::{
    assemble_observations, read_gyro_trace, read_landmark_trace, read_results, write_gyro_trace,
    write_landmark_trace, write_results, TraceHeader, TraceKind,
};

#[derive(Debug, Parser)]
#[command(
    name = "steadipose",
    version,
    about = "Face-centric video stabilization from gyro and landmark traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stabilize a gyro + landmark trace pair into a results trace.
    Stabilize {
        #[arg(long)]
        gyro: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        /// TOML config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Zero one objective term's weight. Repeatable.
        #[arg(long = "ablate", value_name = "TERM")]
        ablate: Vec<Term>,
    },
    /// Generate a synthetic scenario.
    Simulate {
        #[arg(long)]
        scenario: ScenarioKind,
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        seed: u64,
        /// Writes `<prefix>.gyro`, `<prefix>.landmarks` and `<prefix>.truth.csv`.
        #[arg(long)]
        out_prefix: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
    },
    /// Compute stability metrics for a results trace and write CSV tables.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        /// Output directory for the CSV tables.
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare the analytic Jacobian against finite differences.
    Gradcheck {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        frames: usize,
    },
    /// Print the default config as TOML.
    DefaultConfig,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn scenario_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        with_suffix(prefix, ".gyro"),
        with_suffix(prefix, ".landmarks"),
        with_suffix(prefix, ".truth.csv"),
    )
}

fn stabilize(
    gyro: &Path,
    landmarks: &Path,
    config: Option<&Path>,
    out: &Path,
    ablate: &[Term],
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => StabilizerConfig::load(p)?,
        None => StabilizerConfig::default(),
    };
    for t in ablate {
        cfg.ablate(*t);
    }
    let g = read_gyro_trace(gyro)?;
    let l = read_landmark_trace(landmarks)?;
    for w in &l.warnings {
        eprintln!("warning: {w}");
    }
    let obs = assemble_observations(&g.samples, &l.records, &cfg.gyro_alignment)?;
    let frames = process_stream(&obs, &cfg)?;
    let header = TraceHeader {
        kind: TraceKind::Results,
        rate: l.header.rate,
        n_landmarks: l.header.n_landmarks,
        focal: cfg.focal_virtual,
    };
    write_results(out, header, &frames)?;
    let fallbacks = frames.iter().filter(|f| f.fallback_used).count();
    println!(
        "stabilized {} frames ({fallbacks} fallbacks) -> {}",
        frames.len(),
        out.display()
    );
    Ok(())
}

fn simulate(
    kind: ScenarioKind,
    duration: f64,
    seed: u64,
    prefix: &Path,
    amplitude: f64,
) -> Result<()> {
    let mut config = ScenarioConfig::new(kind, duration, seed);
    config.amplitude = amplitude;
    let s = generate_scenario(&config)?;
    let (g, l, t) = scenario_paths(prefix);
    write_gyro_trace(&g, &s.gyro)?;
    write_landmark_trace(&l, &s.landmarks)?;
    std::fs::write(&t, s.truth_csv())?;
    println!("{}\n{}\n{}", g.display(), l.display(), t.display());
    Ok(())
}

fn evaluate(results: &Path, landmarks: &Path, report: &Path) -> Result<()> {
    let r = read_results(results)?;
    let l = read_landmark_trace(landmarks)?;
    let rep = StabilityReport::build(&r.records, &l.records, r.header.rate)?;
    rep.write_csv(report)?;
    print!("{}", rep.summary_csv());
    Ok(())
}

fn gradcheck(seed: u64, frames: usize) -> Result<bool> {
    let cfg = GradcheckConfig {
        frames,
        ..Default::default()
    };
    let rep = run_gradcheck(seed, &cfg)?;
    println!(
        "{} frames, worst relative error {:.3e} (tolerance {:.0e}): {}",
        rep.checks.len(),
        rep.worst(),
        cfg.tolerance,
        if rep.passed() { "ok" } else { "FAILED" }
    );
    Ok(rep.passed())
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Stabilize {
            gyro,
            landmarks,
            config,
            out,
            ablate,
        } => stabilize(&gyro, &landmarks, config.as_deref(), &out, &ablate).map(|_| 0),
        Command::Simulate {
            scenario,
            duration,
            seed,
            out_prefix,
            amplitude,
        } => simulate(scenario, duration, seed, &out_prefix, amplitude).map(|_| 0),
        Command::Evaluate {
            results,
            landmarks,
            report,
        } => evaluate(&results, &landmarks, &report).map(|_| 0),
        Command::Gradcheck { seed, frames } => {
            gradcheck(seed, frames).map(|ok| if ok { 0 } else { 1 })
        }
        Command::DefaultConfig => {
            print!("{}", StabilizerConfig::default().to_toml_string()?);
            Ok(0)
        }
    }
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 on a
/// processing error, 2 on a usage error.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
