use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use carleman_bench::compare::{compare, comparison_csv, load_bundle};
use carleman_bench::sweep::sweep;
use carleman_bench::{bundle_dir, exit_code_of, run_many, ExperimentConfig, Mode, UsageError};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "carleman", version, about = "Run, compare and sweep Carleman policy-iteration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    OnPolicy,
    OffPolicy,
    Structured,
    Sparse,
    HjbBaseline,
    OpenLoop,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::OnPolicy => Mode::OnPolicy,
            ModeArg::OffPolicy => Mode::OffPolicy,
            ModeArg::Structured => Mode::Structured,
            ModeArg::Sparse => Mode::Sparse,
            ModeArg::HjbBaseline => Mode::HjbBaseline,
            ModeArg::OpenLoop => Mode::OpenLoop,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run experiments and write one result bundle each.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Bundle directory (one config) or parent directory (several).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the configs concurrently.
        #[arg(long)]
        batch: bool,
        /// Override the mode given in the config(s).
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Compare bundles against the first one.
    Compare {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        /// Write comparison.csv and comparison.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a config over values of one dotted parameter path.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
}

fn fmt_j(j: Option<f64>) -> String {
    j.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into())
}

fn execute(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Run {
            configs,
            out,
            batch,
            mode,
        } => {
            let several = configs.len() > 1;
            let mut jobs = Vec::new();
            for path in &configs {
                let mut cfg = ExperimentConfig::load(path)?;
                if let Some(m) = mode {
                    cfg.mode = m.into();
                    cfg.validate()?;
                }
                let dir = bundle_dir(&cfg, out.as_deref(), several);
                jobs.push((cfg, dir));
            }
            let results = run_many(&jobs, batch)?;
            for ((_, dir), r) in jobs.iter().zip(&results) {
                let status = serde_json::to_value(r.status)?;
                println!(
                    "{}\t{}\tJ={}\titerations={}\t{}",
                    r.name,
                    status.as_str().unwrap_or_default(),
                    fmt_j(r.j),
                    r.iterations.map_or("-".into(), |i| i.to_string()),
                    dir.display()
                );
                if let Some(e) = &r.error {
                    eprintln!("{}: {e}", r.name);
                }
            }
            Ok(results.iter().map(|r| r.exit_code).max().unwrap_or(0))
        }
        Command::Compare { bundles, out } => {
            let loaded = bundles.iter().map(|b| load_bundle(b)).collect::<anyhow::Result<Vec<_>>>()?;
            let rows = compare(&loaded)?;
            let csv = comparison_csv(&rows);
            print!("{csv}");
            if let Some(out) = out {
                std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                std::fs::write(out.join("comparison.csv"), &csv)?;
                std::fs::write(out.join("comparison.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
            }
            Ok(0)
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let rows = sweep(&config, &param, &values, &out)?;
            for r in &rows {
                let status = serde_json::to_value(r.result.status)?;
                println!(
                    "{param}={}\t{}\tJ={}\tbandwidth={}",
                    r.value,
                    status.as_str().unwrap_or_default(),
                    fmt_j(r.result.j),
                    r.result.bandwidth.map_or("-".into(), |b| b.to_string())
                );
            }
            println!("{}", out.join("sweep.csv").display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let code = exit_code_of(&e);
            if e.downcast_ref::<UsageError>().is_some() {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code as u8)
        }
    }
}
