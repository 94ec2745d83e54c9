//! muonlab command line: reproducible experiment runs from JSON configs.
//!
//! Exit codes: 0 success, 1 configuration/input error, 2 numerical
//! failure. All outputs are written atomically, so an interrupted run
//! leaves no partial files.

use clap::{Args, Parser, Subcommand};
use muonlab_core::config::{
    apply_override, parse_config_value, ExperimentConfig, ExperimentKind, OrthogonalizeMethod,
};
use muonlab_core::error::Error;
use muonlab_core::experiments::{
    atomic_write, run_dynamics, run_oscillation, run_routing, run_spurious_sweep,
    write_run_outputs, RunResult,
};
use muonlab_core::linalg::{
    matrix_from_text, matrix_to_text, newton_schulz_orthogonalize, orthogonalize_exact,
};
use muonlab_core::theory::{gd_sigma_trajectory, spectral_sigma_trajectory, SpectrumSpec};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "muonlab",
    about = "Spectral-optimizer laboratory: dynamics, routing, oscillation, and spurious-feature experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a config file.
    Run(RunArgs),
    /// Emit closed-form singular-value trajectories as CSV.
    Oracle(OracleArgs),
    /// Orthogonalize a matrix stored in the plain-text format.
    Orthogonalize(OrthArgs),
    /// Run a sweep experiment, optionally with parallel workers.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. --set optimizer.kind=gd
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut value: serde_json::Value = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("malformed JSON: {e}")))?
            }
            None => serde_json::json!({}),
        };
        for set in &self.sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {set:?}")))?;
            apply_override(&mut value, key, raw)?;
        }
        if let Some(seed) = self.seed {
            apply_override(&mut value, "seed", &seed.to_string())?;
        }
        if value.get("seed").is_none() {
            return Err(Error::config("a seed is required (config file or --seed)"));
        }
        let mut cfg = parse_config_value(value)?;
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.display().to_string());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Parallel worker count.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct OracleArgs {
    /// Comma-separated non-increasing spectrum, e.g. 2,1
    #[arg(long, default_value = "2,1")]
    spectrum: String,
    /// Initial singular value for the gradient-flow curve.
    #[arg(long, default_value_t = 0.01)]
    sigma0: f64,
    #[arg(long = "t-max", default_value_t = 3.0)]
    t_max: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OrthArgs {
    /// Input matrix in the plain-text format.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output path for the orthogonalized matrix.
    #[arg(long)]
    out: PathBuf,
    /// exact | newton-schulz
    #[arg(long, default_value = "exact")]
    method: String,
    /// Newton-Schulz iteration count.
    #[arg(long, default_value_t = 5)]
    iterations: usize,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args, 1),
        Command::Sweep(args) => {
            let jobs = args.jobs;
            cmd_run(RunArgs { config: args.config }, jobs)
        }
        Command::Oracle(args) => cmd_oracle(args),
        Command::Orthogonalize(args) => cmd_orthogonalize(args),
    };
    match outcome {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

fn cmd_run(args: RunArgs, jobs: usize) -> Result<(), Error> {
    let cfg = args.config.load()?;
    let out_dir = cfg.out_dir.clone().map(PathBuf::from);
    match cfg.experiment {
        ExperimentKind::Dynamics => {
            let result = run_dynamics(&cfg)?;
            report_run(&cfg, &result, out_dir.as_deref())?;
            if cfg.data.dump_csv {
                if let Some(dir) = out_dir.as_deref() {
                    write_dataset_csv(dir, &cfg)?;
                }
            }
            fail_if_diverged(&result)
        }
        ExperimentKind::Routing => {
            let outcome = run_routing(&cfg)?;
            report_run(&cfg, &outcome.result, out_dir.as_deref())?;
            if let Some(dir) = out_dir.as_deref() {
                atomic_write(&dir.join("generalization.csv"), &outcome.generalization_csv())?;
                outcome.net.save(&dir.join("weights"))?;
            }
            fail_if_diverged(&outcome.result)
        }
        ExperimentKind::Oscillation => {
            let result = run_oscillation(&cfg)?;
            eprintln!(
                "oscillation grid finished in {:.2}s ({} points)",
                result.wall_time,
                result.points.len()
            );
            for p in &result.points {
                println!(
                    "eta={} momentum={} amplitude={}",
                    p.eta, p.momentum, p.amplitude
                );
            }
            if let Some(dir) = out_dir.as_deref() {
                atomic_write(&dir.join("sweep_summary.csv"), &result.summary_csv())?;
                let metrics = serde_json::json!({
                    "fingerprint": result.fingerprint,
                    "metrics": result.metrics(),
                });
                atomic_write(&dir.join("metrics.json"), &format!("{metrics:#}\n"))?;
                write_config(dir, &cfg)?;
            }
            Ok(())
        }
        ExperimentKind::SpuriousSweep => {
            let result = run_spurious_sweep(&cfg, jobs)?;
            eprintln!(
                "spurious sweep finished in {:.2}s ({} cells)",
                result.wall_time,
                result.cells.len()
            );
            print!("{}", result.summary_csv());
            if let Some(dir) = out_dir.as_deref() {
                atomic_write(&dir.join("sweep_summary.csv"), &result.summary_csv())?;
                for cell in &result.cells {
                    let name = format!("curve_{}_s{}.csv", cell.optimizer.name(), cell.strength);
                    atomic_write(&dir.join(name), &cell.curve_csv())?;
                }
                let metrics = serde_json::json!({
                    "fingerprint": result.fingerprint,
                    "metrics": result.metrics(),
                });
                atomic_write(&dir.join("metrics.json"), &format!("{metrics:#}\n"))?;
                write_config(dir, &cfg)?;
            }
            Ok(())
        }
        ExperimentKind::Oracle => {
            let spec = SpectrumSpec::new(cfg.data.spectrum.clone(), cfg.data.init_scale)?;
            let csv = oracle_csv(&spec, cfg.oracle.t_max, cfg.oracle.dt)?;
            match out_dir.as_deref() {
                Some(dir) => atomic_write(&dir.join("curves.csv"), &csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        ExperimentKind::Orthogonalize => {
            let ortho = &cfg.orthogonalize;
            let input = ortho
                .input
                .as_ref()
                .ok_or_else(|| Error::config("orthogonalize.input is required"))?;
            let output = ortho
                .output
                .as_ref()
                .ok_or_else(|| Error::config("orthogonalize.output is required"))?;
            orthogonalize_file(
                Path::new(input),
                Path::new(output),
                match ortho.method {
                    OrthogonalizeMethod::Exact => "exact",
                    OrthogonalizeMethod::NewtonSchulz => "newton-schulz",
                },
                ortho.iterations,
                cfg.optimizer.rank_cutoff,
            )
        }
    }
}

/// Regenerate the run's dataset (same seed, same substreams) and dump it
/// as CSV next to the other artifacts.
fn write_dataset_csv(dir: &Path, cfg: &ExperimentConfig) -> Result<(), Error> {
    use muonlab_core::config::GradientMode;
    use muonlab_core::datagen::{gaussian_regression, regression_to_csv, Rng};
    if cfg.data.mode != GradientMode::Sample {
        return Ok(());
    }
    let mut rng = Rng::new(cfg.seed);
    let (xs, ys, _) = gaussian_regression(
        &mut rng,
        cfg.data.sample_n,
        cfg.model.d_in,
        cfg.model.d_out,
        &cfg.data.spectrum,
        cfg.data.noise,
    )?;
    atomic_write(&dir.join("dataset.csv"), &regression_to_csv(&xs, &ys))
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::config(format!("cannot serialize config: {e}")))?;
    atomic_write(&dir.join("config.json"), &format!("{json}\n"))
}

fn report_run(
    cfg: &ExperimentConfig,
    result: &RunResult,
    out_dir: Option<&Path>,
) -> Result<(), Error> {
    eprintln!(
        "run {} finished in {:.2}s ({} records)",
        &result.fingerprint[..12],
        result.wall_time,
        result.trajectory.len()
    );
    for (name, value) in &result.metrics {
        println!("{name} = {value}");
    }
    if let Some(dir) = out_dir {
        write_run_outputs(dir, cfg, result)?;
    }
    Ok(())
}

fn fail_if_diverged(result: &RunResult) -> Result<(), Error> {
    match &result.status {
        muonlab_core::experiments::RunStatus::Completed => Ok(()),
        muonlab_core::experiments::RunStatus::Diverged { at_step } => Err(Error::numerical(
            format!("run diverged at step {at_step}; outputs retain the finite prefix"),
        )),
    }
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Error> {
    let spectrum: Result<Vec<f64>, Error> = args
        .spectrum
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad spectrum entry {t:?}")))
        })
        .collect();
    let spec = SpectrumSpec::new(spectrum?, args.sigma0)?;
    if !(args.t_max > 0.0 && args.dt > 0.0) {
        return Err(Error::config("t-max and dt must be positive"));
    }
    let csv = oracle_csv(&spec, args.t_max, args.dt)?;
    match args.out {
        Some(path) => atomic_write(&path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn oracle_csv(spec: &SpectrumSpec, t_max: f64, dt: f64) -> Result<String, Error> {
    let mut out = String::from("t,k,sigma_gd,sigma_spectral\n");
    let steps = (t_max / dt).round() as usize;
    for i in 0..=steps {
        let t = i as f64 * dt;
        for k in 0..spec.modes() {
            let gd = gd_sigma_trajectory(spec, k, t)?;
            let sp = spectral_sigma_trajectory(spec, k, t)?;
            out.push_str(&format!("{t},{k},{gd},{sp}\n"));
        }
    }
    Ok(out)
}

fn cmd_orthogonalize(args: OrthArgs) -> Result<(), Error> {
    orthogonalize_file(
        &args.input,
        &args.out,
        &args.method,
        args.iterations,
        muonlab_core::linalg::DEFAULT_RANK_CUTOFF,
    )
}

fn orthogonalize_file(
    input: &Path,
    output: &Path,
    method: &str,
    iterations: usize,
    rank_cutoff: f64,
) -> Result<(), Error> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", input.display())))?;
    let matrix = matrix_from_text(&text)?;
    let result = match method {
        "exact" => orthogonalize_exact(&matrix, rank_cutoff)?,
        "newton-schulz" | "newton_schulz" | "ns" => {
            newton_schulz_orthogonalize(&matrix, iterations)?
        }
        other => {
            return Err(Error::config(format!(
                "unknown method {other:?} (expected exact or newton-schulz)"
            )))
        }
    };
    atomic_write(output, &matrix_to_text(&result))
}
