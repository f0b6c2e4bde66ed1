mod commands;
mod config;
mod error;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Command, RunConfig, Settings};
use crate::error::CliError;
use crate::output::{OutputDir, ERROR_FILE, MANIFEST};

/// Implicit θ-Euler-Maruyama experiments for SDEs with super-linear coefficients.
#[derive(Parser)]
#[command(name = "stiffsde", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// List catalog models and their default parameters.
    ListModels,
    /// Audit the model conditions on a probe set.
    CheckConditions(RunArgs),
    /// Evaluate the moment, exit-probability and step bounds.
    Bounds(RunArgs),
    /// Strong error against a fine reference and its log-log slope.
    StrongError(RunArgs),
    /// Explicit against backward Euler-Maruyama blow-up frequencies.
    Divergence(RunArgs),
    /// Second moments of the scheme against the moment bounds.
    MomentBound(RunArgs),
    /// Long-horizon decay and LaSalle sums of a dissipative model.
    Stability(RunArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Config file of key=value lines; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Catalog model label.
    #[arg(long)]
    model: Option<String>,
    /// Model parameter override, repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Scheme kind: theta_em, split_theta_em or explicit_em.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Time horizon.
    #[arg(long = "T", value_name = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial state, comma separated.
    #[arg(long, value_name = "X1,X2,..")]
    x0: Option<String>,
    /// Output directory [default: $STIFFSDE_OUT/<command> or stiffsde-out/<command>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Implicit solver: newton, fixed_point, scalar_hybrid or closed_form_cubic.
    #[arg(long)]
    solver: Option<String>,
    /// Solver residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Solver iteration cap.
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Accept θ < 1/2 and steps beyond the admissible bound.
    #[arg(long = "allow-unsafe")]
    allow_unsafe: bool,
    /// Seed implicit solves with an explicit step.
    #[arg(long)]
    predictor: bool,
    /// Any other config key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn pair(raw: &str, flag: &str) -> Result<(String, String), CliError> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| CliError::Config(format!("{flag} expects NAME=VALUE, got '{raw}'")))
}

impl RunArgs {
    fn settings(&self, command: Command) -> Result<Settings, CliError> {
        let mut s = Settings::defaults(command);
        if let Some(path) = &self.config {
            let file = Settings::load(path)?;
            if let Some(c) = file.get("command") {
                if c != command.name() {
                    return Err(CliError::Config(format!(
                        "{} is a '{c}' config, not '{}'",
                        path.display(),
                        command.name()
                    )));
                }
            }
            s.merge(&file);
        }
        let mut flags = Settings::default();
        for raw in &self.set {
            let (k, v) = pair(raw, "--set")?;
            flags.set(&k, v)?;
        }
        for raw in &self.params {
            let (k, v) = pair(raw, "--param")?;
            flags.set(&format!("param.{k}"), v)?;
        }
        let named: [(&str, Option<String>); 14] = [
            ("model", self.model.clone()),
            ("scheme", self.scheme.clone()),
            ("theta", self.theta.map(|v| v.to_string())),
            ("dt", self.dt.map(|v| v.to_string())),
            ("T", self.t_end.map(|v| v.to_string())),
            ("paths", self.paths.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("x0", self.x0.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("solver.method", self.solver.clone()),
            ("solver.tol", self.tol.map(|v| v.to_string())),
            ("solver.max_iter", self.max_iter.map(|v| v.to_string())),
            ("allow_unsafe", self.allow_unsafe.then(|| "true".to_string())),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                flags.set(k, v)?;
            }
        }
        if self.predictor {
            flags.set("predictor", "true")?;
        }
        s.merge(&flags);
        Ok(s)
    }
}

fn run(cfg: &RunConfig, entry: &stiffsde::ModelCatalogEntry) -> Result<String, CliError> {
    let mut stale: Vec<String> = cfg.command.outputs().iter().map(|s| s.to_string()).collect();
    stale.extend((0..cfg.dump_paths).map(commands::dump_name));
    let stale: Vec<&str> = stale.iter().map(String::as_str).collect();
    let out = OutputDir::prepare(&cfg.out, &stale)?;
    out.write(MANIFEST, &cfg.manifest())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let result = pool.install(|| commands::execute(cfg, entry, &out));
    if let Err(e) = &result {
        out.sweep_temporaries();
        out.write(ERROR_FILE, &format!("{e}\n"))?;
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::ListModels => {
            print!("{}", commands::list_models());
            return ExitCode::SUCCESS;
        }
        Sub::CheckConditions(a) => (Command::CheckConditions, a),
        Sub::Bounds(a) => (Command::Bounds, a),
        Sub::StrongError(a) => (Command::StrongError, a),
        Sub::Divergence(a) => (Command::Divergence, a),
        Sub::MomentBound(a) => (Command::MomentBound, a),
        Sub::Stability(a) => (Command::Stability, a),
    };
    let outcome = args
        .settings(command)
        .and_then(|s| RunConfig::resolve(&s))
        .and_then(|(cfg, entry)| run(&cfg, &entry).map(|summary| (cfg, summary)));
    match outcome {
        Ok((cfg, summary)) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}: {summary} [{}]", cfg.command, cfg.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
