//! Command-line front end for the `dymixop` library.
//!
//! Every subcommand takes `--key value` flags (or `--key=value`) plus an
//! optional `--config FILE` of `key = value` lines; flags override the file.

pub mod commands;
pub mod config;
pub mod report;

use std::io::Write;

use clap::{Parser, Subcommand};

use dymixop::io::checkpoint_precision;
use dymixop::Precision;

use config::{parse_flags, spec_from_pairs, RunConfig, RUN_KEYS, SPEC_KEYS};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dymixop::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    /// The single stderr line printed on failure.
    pub fn json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "dymixop", version, about = "Train and evaluate DyMixOp neural operators")]
struct Cli {
    /// Overrides `seed` for the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Value type for models: f32 or f64.
    #[arg(long, global = true)]
    precision: Option<String>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset from a spec file (`dymixop gen spec.txt`).
    #[command(after_help = SPEC_KEYS)]
    Gen(Args),
    /// Train a model, or resume with `--resume CKPT`.
    #[command(after_help = RUN_KEYS)]
    Train(Args),
    /// Report mse and relative mse of a checkpoint on a dataset.
    #[command(after_help = RUN_KEYS)]
    Eval(Args),
    /// Autoregressive rollout from one dataset window.
    #[command(after_help = RUN_KEYS)]
    Predict(Args),
    /// Compare analytic and finite-difference gradients.
    #[command(after_help = RUN_KEYS)]
    Gradcheck(Args),
    /// Train every variant under the same seed and budget.
    #[command(after_help = RUN_KEYS)]
    Ablate(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    rest: Vec<String>,
}

fn run_config(cli: &Cli, rest: &[String]) -> Result<RunConfig, CliError> {
    let (mut pairs, positional) = parse_flags(rest)?;
    if let Some(p) = positional.first() {
        return Err(CliError::Usage(format!("unexpected argument `{p}`")));
    }
    if let Some(s) = cli.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    if let Some(p) = &cli.precision {
        pairs.push(("precision".into(), p.clone()));
    }
    if let Some(t) = cli.threads {
        pairs.push(("threads".into(), t.to_string()));
    }
    RunConfig::from_pairs(&pairs)
}

fn set_threads(n: usize) -> Result<(), CliError> {
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set thread count: {e}")))?;
    }
    Ok(())
}

fn print_json(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<(), CliError> {
    writeln!(out, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

/// Precision of an existing checkpoint, so eval and predict need no flag.
fn stored_precision(cfg: &RunConfig) -> Result<Precision, CliError> {
    Ok(checkpoint_precision(&cfg.checkpoint)?)
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => {
            let (mut pairs, positional) = parse_flags(&a.rest)?;
            match positional.as_slice() {
                [] => {}
                [file] => pairs.insert(0, ("config".into(), file.clone())),
                _ => return Err(CliError::Usage("gen takes at most one spec file".into())),
            }
            if let Some(s) = cli.seed {
                pairs.push(("seed".into(), s.to_string()));
            }
            if let Some(t) = cli.threads {
                set_threads(t)?;
            }
            let (spec, path) = spec_from_pairs(&pairs)?;
            print_json(out, &commands::gen(&spec, &path)?)
        }
        Command::Train(a) => {
            let cfg = run_config(cli, &a.rest)?;
            set_threads(cfg.threads)?;
            let precision = match &cfg.resume {
                Some(p) => checkpoint_precision(p)?,
                None => cfg.precision,
            };
            let outcome = match precision {
                Precision::F32 => commands::train_run::<f32>(&cfg, out)?,
                Precision::F64 => commands::train_run::<f64>(&cfg, out)?,
            };
            writeln!(err, "checkpoint written to {}", outcome.checkpoint.display())?;
            Ok(())
        }
        Command::Eval(a) => {
            let cfg = run_config(cli, &a.rest)?;
            set_threads(cfg.threads)?;
            let rows = match stored_precision(&cfg)? {
                Precision::F32 => commands::eval_run::<f32>(&cfg)?,
                Precision::F64 => commands::eval_run::<f64>(&cfg)?,
            };
            if cfg.json {
                print_json(out, &rows)
            } else {
                write!(out, "{}", commands::render_eval(&rows))?;
                Ok(())
            }
        }
        Command::Predict(a) => {
            let cfg = run_config(cli, &a.rest)?;
            set_threads(cfg.threads)?;
            let summary = match stored_precision(&cfg)? {
                Precision::F32 => commands::predict_run::<f32>(&cfg)?,
                Precision::F64 => commands::predict_run::<f64>(&cfg)?,
            };
            print_json(out, &summary)
        }
        Command::Gradcheck(a) => {
            let cfg = run_config(cli, &a.rest)?;
            set_threads(cfg.threads)?;
            let report = commands::gradcheck_run(&cfg)?;
            if cfg.json {
                print_json(out, &report)?;
            } else {
                write!(out, "{}", commands::render_gradcheck(&report))?;
            }
            if report.all_passed() {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "{} parameters exceed tolerance {:e} (worst {:e})",
                    report.failures().count(),
                    report.tolerance,
                    report.worst()
                )))
            }
        }
        Command::Ablate(a) => {
            let cfg = run_config(cli, &a.rest)?;
            set_threads(cfg.threads)?;
            let mut progress = |line: &str| {
                let _ = writeln!(err, "{line}");
            };
            let rows = match cfg.precision {
                Precision::F32 => commands::ablate_run::<f32>(&cfg, &mut progress)?,
                Precision::F64 => commands::ablate_run::<f64>(&cfg, &mut progress)?,
            };
            if cfg.json {
                print_json(out, &rows)
            } else {
                write!(out, "{}", commands::render_ablation(&rows))?;
                Ok(())
            }
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(std::io::stdout(), "{}", e.render());
                return 0;
            }
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default();
            let msg = first.strip_prefix("error: ").unwrap_or(first).to_string();
            eprintln!("{}", CliError::Usage(msg).json_line());
            return 2;
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    match dispatch(&cli, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.json_line());
            1
        }
    }
}
