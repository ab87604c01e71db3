use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wavemfe::harness::{self, ExperimentConfig, ExperimentReport};
use wavemfe::Error;

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "wavemfe",
    version,
    about = "Modulated Fourier expansion experiments for slowly varying wave equations"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// experiment config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// output directory (overrides `output_dir` in the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// seed for random initial data (overrides `init_seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// worker threads for sweeps and convolutions
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Check a config and print it with defaults filled in
    Validate,
    /// Run the largest epsilon of the config
    Run,
    /// Run every epsilon and fit orders
    Sweep,
    /// Dump the first-window expansion for every epsilon as JSON
    Snapshot,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, err)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, (u8, Error)> {
    let Some(path) = &cli.config else {
        return Err((
            EXIT_CONFIG,
            Error::Config {
                key: "--config".into(),
                message: "a config file is required".into(),
            },
        ));
    };
    let mut cfg = harness::load_config(path).map_err(|e| (EXIT_CONFIG, e))?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn runtime<T>(r: wavemfe::Result<T>) -> Result<T, (u8, Error)> {
    r.map_err(|e| (EXIT_RUNTIME, e))
}

fn execute(cli: &Cli) -> Result<u8, (u8, Error)> {
    let cfg = load(cli)?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);
    let out = out_dir(cli, &cfg);
    match cli.verb {
        Verb::Validate => {
            println!("{}", cfg.echo());
            println!("config_hash {}", cfg.hash());
            Ok(0)
        }
        Verb::Run => {
            let report = runtime(harness::run_single(&cfg, jobs))?;
            finish(&report, &out)
        }
        Verb::Sweep => {
            let report = runtime(harness::sweep(&cfg, jobs))?;
            finish(&report, &out)
        }
        Verb::Snapshot => {
            let files = runtime(harness::snapshots(&cfg, jobs))?;
            for p in runtime(harness::emit_snapshots(&files, &out))? {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
    }
}

fn finish(report: &ExperimentReport, out: &Path) -> Result<u8, (u8, Error)> {
    let written = runtime(harness::emit_report(report, out))?;
    for run in &report.runs {
        let m = &run.metrics;
        println!(
            "eps {} windows {} defect {:.3e} remainder {:.3e} drift {:.3e} action_dev {:.3e}",
            run.epsilon,
            run.windows.len(),
            m.defect,
            m.remainder,
            m.drift,
            m.action_dev
        );
    }
    for f in &report.fits {
        let slope = f
            .fit
            .as_ref()
            .map(|x| format!("{:.3} +- {:.3}", x.slope, x.stderr))
            .unwrap_or_else(|| format!("{:?}", f.status).to_lowercase());
        println!(
            "{} {} slope {} expected {} +- {}{}",
            if f.pass { "PASS" } else { "FAIL" },
            f.name,
            slope,
            f.expected,
            f.tolerance,
            if f.gated { "" } else { " (informational)" }
        );
    }
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(if report.pass { 0 } else { EXIT_FAIL })
}
