use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use xdom::gradsuite::gradient_suite;
use xdom::model::{ModelKind, Profile};
use xdom::synth::{synth_dataset, SynthConfig};
use xdom::train::{compare_runs, eval_run, read_run_report, run_training, RunConfig, RunMode, Scenario, TrainConfig, REPORT_FILE};

/// Cross-domain RF fingerprinting: synthesize captures, train, evaluate, report.
#[derive(Parser, Debug)]
#[command(name = "xdom", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset of WiFi and Bluetooth captures.
    Synth(SynthArgs),
    /// Train one model on one scenario and write a run directory.
    Train(TrainArgs),
    /// Re-score a run's best checkpoint on its test partition.
    Eval(EvalArgs),
    /// Collect run reports into comparison tables.
    Report(ReportArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Dataset directory to create.
    #[arg(long, env = "XDOM_DATA_DIR")]
    out: PathBuf,
    /// Devices of the first chipset family.
    #[arg(long, default_value_t = 8)]
    devices_a: usize,
    /// Devices of the second chipset family.
    #[arg(long, default_value_t = 2)]
    devices_b: usize,
    /// Frames per device, protocol and scenario.
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// Number of scenarios (days), seeded 0..N.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Seed of the device population.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long, env = "XDOM_DATA_DIR")]
    data: PathBuf,
    /// Run directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "xdom", value_parser = ["xdom", "baseline"])]
    model: String,
    #[arg(long, default_value = "mtl", value_parser = ["stl-wifi", "stl-bt", "mtl"])]
    mode: String,
    #[arg(long, default_value = "ttsd", value_parser = ["ttsd", "ttmd"])]
    scenario: String,
    #[arg(long, default_value = "faithful", value_parser = ["faithful", "reduced"])]
    profile: String,
    /// Scenario seeds to use, comma separated. Default: the first one for
    /// ttsd, all of them for ttmd.
    #[arg(long, value_delimiter = ',')]
    scenario_seeds: Vec<u64>,
    /// Cap on frames per (device, protocol) class before splitting.
    #[arg(long)]
    max_per_class: Option<usize>,
    /// Seeds initialization, shuffling and the split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Weight of the fingerprint loss.
    #[arg(long, default_value_t = 1.0)]
    lambda_f: f64,
    /// Weight of the protocol loss (multi-task only).
    #[arg(long, default_value_t = 1.0)]
    lambda_p: f64,
    /// Single-threaded batches; results independent of core count.
    #[arg(long)]
    deterministic: bool,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory, overriding the one recorded in the run.
    #[arg(long)]
    data: Option<PathBuf>,
    /// File to write the report to; printed to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directories, or directories containing them.
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Directory for table1.csv, table2.csv and comparison.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "reduced", value_parser = ["faithful", "reduced"])]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the results as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let cfg = SynthConfig { devices_a: a.devices_a, devices_b: a.devices_b, frames: a.frames, scenario_seeds: (0..a.seeds).collect(), seed: a.seed, ..SynthConfig::default() };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let manifest = synth_dataset(&cfg, &a.out)?;
    write_json(&a.out.join("synth_config.json"), &cfg)?;
    println!("{} frames from {} devices over {} scenarios in {}", manifest.frames.len(), manifest.devices.len(), manifest.scenarios.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig {
        data: a.data,
        model: ModelKind::parse(&a.model).expect("restricted by clap"),
        profile: Profile::parse(&a.profile).expect("restricted by clap"),
        mode: RunMode::parse(&a.mode).expect("restricted by clap"),
        scenario: Scenario::parse(&a.scenario).expect("restricted by clap"),
        seeds: a.scenario_seeds,
        split_seed: a.seed,
        max_per_class: a.max_per_class,
        train: TrainConfig {
            lr: a.lr,
            momentum: a.momentum,
            epochs: a.epochs,
            batch_size: a.batch,
            lambda_f: a.lambda_f,
            lambda_p: a.lambda_p,
            seed: a.seed,
            deterministic: a.deterministic,
        },
    };
    let quiet = a.quiet;
    let report = run_training(&cfg, &a.out, |e| {
        if !quiet {
            let p = e.val_acc_p.map(|v| format!(" val_acc_p {v:.4}")).unwrap_or_default();
            eprintln!("epoch {:>4}  train_loss {:.4}  val_loss {:.4}  val_acc_f {:.4}{p}", e.epoch, e.train_loss, e.val_loss, e.val_acc_f);
        }
        ControlFlow::Continue(())
    })?;
    let p = report.test.top1_protocol.map(|v| format!(", protocol {v:.4}")).unwrap_or_default();
    println!("test fingerprint {:.4}{p} (best epoch {}), run in {}", report.test.top1_fingerprint, report.best_epoch, a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let report = eval_run(&a.run, a.data.as_deref())?;
    match a.out {
        Some(path) => write_json(&path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

/// Run directories under `root`, including `root` itself, in path order.
fn find_runs(root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if root.join(REPORT_FILE).is_file() {
        out.push(root.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_runs(&e, out)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut dirs = Vec::new();
    for r in &a.runs {
        find_runs(r, &mut dirs)?;
    }
    if dirs.is_empty() {
        bail!("no {REPORT_FILE} found under the given run paths");
    }
    let reports = dirs.iter().map(|d| read_run_report(d)).collect::<Result<Vec<_>, _>>()?;
    let cmp = compare_runs(&reports);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("table1.csv"), cmp.table1_csv())?;
    fs::write(a.out.join("table2.csv"), cmp.table2_csv())?;
    write_json(&a.out.join("comparison.json"), &cmp)?;
    print!("{}", cmp.table2_csv());
    Ok(())
}

/// Exit status 1 when any check misses its tolerance.
fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let checks = gradient_suite(Profile::parse(&a.profile).expect("restricted by clap"), a.seed)?;
    for c in &checks {
        println!("{:<5} {:<40} {:.3e} (< {:.0e})", if c.passed() { "ok" } else { "FAIL" }, c.name, c.max_rel_err, c.tolerance);
    }
    if let Some(path) = &a.out {
        write_json(path, &checks)?;
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    command: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Report(_) => "report",
        Command::Gradcheck(_) => "gradcheck",
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Report(a) => report(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let line = ErrorLine { error: "runtime", command: name, message: format!("{e:#}") };
            eprintln!("{}", serde_json::to_string(&line).expect("plain strings serialize"));
            ExitCode::from(1)
        }
    }
}
