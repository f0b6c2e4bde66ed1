//! Run configuration: layered `key=value` settings resolved into a typed
//! [`RunConfig`], and the manifest that writes it back out.
//!
//! Layers are applied defaults, then the config file, then flags; the last
//! writer of a key wins. The manifest lists every resolved key, so feeding it
//! back through `--config` reproduces the same run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stiffsde::{catalog, ModelCatalogEntry, SchemeConfig, SchemeKind, SolverConfig, SolverMethod};

use crate::error::CliError;

pub const OUT_ENV: &str = "STIFFSDE_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    ListModels,
    CheckConditions,
    Bounds,
    StrongError,
    Divergence,
    MomentBound,
    Stability,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::ListModels,
        Command::CheckConditions,
        Command::Bounds,
        Command::StrongError,
        Command::Divergence,
        Command::MomentBound,
        Command::Stability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::ListModels => "list-models",
            Command::CheckConditions => "check-conditions",
            Command::Bounds => "bounds",
            Command::StrongError => "strong-error",
            Command::Divergence => "divergence",
            Command::MomentBound => "moment-bound",
            Command::Stability => "stability",
        }
    }

    /// CSV files this command produces.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Command::ListModels => &[],
            Command::CheckConditions => &["conditions.csv"],
            Command::Bounds => &["bounds.csv"],
            Command::StrongError => &["levels.csv", "fit.csv"],
            Command::Divergence => &["divergence.csv"],
            Command::MomentBound => &["moment.csv", "moment_summary.csv"],
            Command::Stability => &["stability.csv", "stability_traces.csv"],
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown command '{s}'")))
    }
}

/// Every recognised key apart from the `param.<name>` family.
pub const KEYS: &[&str] = &[
    "command",
    "version",
    "model",
    "scheme",
    "theta",
    "dt",
    "T",
    "paths",
    "seed",
    "x0",
    "out",
    "workers",
    "solver.method",
    "solver.tol",
    "solver.max_iter",
    "allow_unsafe",
    "predictor",
    "ref_level",
    "levels",
    "weighted_fit",
    "dt_list",
    "proxy_factor",
    "steps",
    "tol_stab",
    "z_scale",
    "trace_points",
    "radius",
    "dump_paths",
];

/// Ordered `key=value` pairs. Later entries override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    map: BTreeMap<String, String>,
    params: Vec<(String, String)>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        let value = value.into();
        if let Some(name) = key.strip_prefix("param.") {
            if name.is_empty() {
                return Err(CliError::Config("empty parameter name in 'param.'".into()));
            }
            self.params.retain(|(k, _)| k != name);
            self.params.push((name.to_string(), value));
        } else if KEYS.contains(&key) {
            self.map.insert(key.to_string(), value);
        } else {
            return Err(CliError::Config(format!("unknown config key '{key}'")));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
        for (k, v) in &other.params {
            self.params.retain(|(n, _)| n != k);
            self.params.push((k.clone(), v.clone()));
        }
    }

    /// Parses config-file text: one `key = value` per line, `#` starts a
    /// comment, blank lines are ignored.
    pub fn parse(text: &str, origin: &str) -> Result<Settings, CliError> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key=value, got '{line}'", i + 1)))?;
            s.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Settings::parse(&text, &path.display().to_string())
    }

    pub fn defaults(command: Command) -> Settings {
        let mut s = Settings::default();
        let out_root = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("stiffsde-out"));
        let (model, paths, dt, x0) = match command {
            Command::Stability => ("stable-cubic", "100", "0.01", "auto"),
            Command::CheckConditions => ("cubic", "1000", "0.01", "auto"),
            Command::StrongError => ("cubic", "2000", "0.015625", "auto"),
            Command::Divergence => ("cubic", "1000", "0.25", "5"),
            Command::MomentBound => ("cubic", "10000", "0.015625", "auto"),
            Command::Bounds | Command::ListModels => ("cubic", "1000", "0.015625", "auto"),
        };
        for (k, v) in [
            ("command", command.name().to_string()),
            ("model", model.into()),
            ("scheme", "theta_em".into()),
            ("theta", "1".into()),
            ("dt", dt.into()),
            ("T", "1".into()),
            ("paths", paths.into()),
            ("seed", "42".into()),
            ("x0", x0.into()),
            ("out", out_root.join(command.name()).display().to_string()),
            ("workers", "0".into()),
            ("solver.method", "newton".into()),
            ("solver.tol", "1e-12".into()),
            ("solver.max_iter", "50".into()),
            ("allow_unsafe", "false".into()),
            ("predictor", "false".into()),
            ("ref_level", "12".into()),
            ("levels", "11,9,7,5".into()),
            ("weighted_fit", "false".into()),
            ("dt_list", "0.25".into()),
            ("proxy_factor", "16".into()),
            ("steps", "100000".into()),
            ("tol_stab", "0.01".into()),
            ("z_scale", "0.5".into()),
            ("trace_points", "200".into()),
            ("radius", "50".into()),
            ("dump_paths", "0".into()),
        ] {
            s.map.insert(k.into(), v);
        }
        s
    }
}

/// A fully resolved and validated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub model: String,
    /// Every model parameter, defaults included.
    pub params: Vec<(String, f64)>,
    pub scheme: SchemeKind,
    pub theta: f64,
    pub dt: f64,
    pub t_end: f64,
    pub paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub out: PathBuf,
    /// 0 lets the thread pool pick.
    pub workers: usize,
    pub solver: SolverConfig,
    pub allow_unsafe: bool,
    pub predictor: bool,
    pub ref_level: u32,
    pub levels: Vec<u32>,
    pub weighted_fit: bool,
    pub dt_list: Vec<f64>,
    pub proxy_factor: usize,
    pub steps: usize,
    pub tol_stab: f64,
    pub z_scale: f64,
    pub trace_points: usize,
    pub radius: f64,
    pub dump_paths: usize,
}

fn parse<T: FromStr>(s: &Settings, key: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    let raw = s
        .get(key)
        .ok_or_else(|| CliError::Config(format!("missing value for '{key}'")))?;
    raw.parse()
        .map_err(|e| CliError::Config(format!("invalid value '{raw}' for '{key}': {e}")))
}

fn parse_list<T: FromStr>(s: &Settings, key: &str) -> Result<Vec<T>, CliError>
where
    T::Err: fmt::Display,
{
    let raw = s.get(key).unwrap_or("");
    raw.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|e| CliError::Config(format!("invalid entry '{t}' in '{key}': {e}")))
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Resolves `settings` into a config and its model. All validation that
    /// does not need a simulation happens here.
    pub fn resolve(settings: &Settings) -> Result<(RunConfig, ModelCatalogEntry), CliError> {
        let command: Command = parse(settings, "command")?;
        if let Some(v) = settings.get("version") {
            if v != env!("CARGO_PKG_VERSION") {
                eprintln!(
                    "warning: config written by version {v}, running {}",
                    env!("CARGO_PKG_VERSION")
                );
            }
        }
        let model: String = parse(settings, "model")?;
        let mut overrides = Vec::new();
        for (k, v) in &settings.params {
            let x: f64 = v
                .parse()
                .map_err(|e| CliError::Config(format!("invalid value '{v}' for 'param.{k}': {e}")))?;
            overrides.push((k.clone(), x));
        }
        let entry = catalog::build(&model, &overrides)?;
        let n = entry.model().state_dim();

        let x0: Vec<f64> = match settings.get("x0") {
            Some("auto") | None => vec![1.0; n],
            _ => parse_list(settings, "x0")?,
        };
        if x0.len() != n {
            return Err(CliError::Config(format!(
                "x0 has {} components but model '{model}' has dimension {n}",
                x0.len()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config("x0 must be finite".into()));
        }
        entry.model().check_domain(&x0)?;

        let method: SolverMethod = parse(settings, "solver.method")?;
        let solver = SolverConfig {
            tolerance: parse(settings, "solver.tol")?,
            max_iterations: parse(settings, "solver.max_iter")?,
            method,
        };
        solver.validate()?;

        let cfg = RunConfig {
            command,
            model,
            params: entry.parameters().to_vec(),
            scheme: parse(settings, "scheme")?,
            theta: parse(settings, "theta")?,
            dt: parse(settings, "dt")?,
            t_end: parse(settings, "T")?,
            paths: parse(settings, "paths")?,
            seed: parse(settings, "seed")?,
            x0,
            out: PathBuf::from(parse::<String>(settings, "out")?),
            workers: parse(settings, "workers")?,
            solver,
            allow_unsafe: parse(settings, "allow_unsafe")?,
            predictor: parse(settings, "predictor")?,
            ref_level: parse(settings, "ref_level")?,
            levels: parse_list(settings, "levels")?,
            weighted_fit: parse(settings, "weighted_fit")?,
            dt_list: parse_list(settings, "dt_list")?,
            proxy_factor: parse(settings, "proxy_factor")?,
            steps: parse(settings, "steps")?,
            tol_stab: parse(settings, "tol_stab")?,
            z_scale: parse(settings, "z_scale")?,
            trace_points: parse(settings, "trace_points")?,
            radius: parse(settings, "radius")?,
            dump_paths: parse(settings, "dump_paths")?,
        };
        cfg.validate(&entry)?;
        Ok((cfg, entry))
    }

    fn positive(name: &str, v: f64) -> Result<(), CliError> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "{name} must be positive and finite (got {v})"
            )))
        }
    }

    /// The scheme configuration at step `dt`.
    pub fn scheme_config(&self, dt: f64) -> SchemeConfig {
        SchemeConfig {
            allow_low_theta: self.allow_unsafe,
            allow_inadmissible_step: self.allow_unsafe,
            explicit_predictor: self.predictor,
            ..SchemeConfig::new(self.scheme, self.theta, dt).with_solver(self.solver)
        }
    }

    fn validate(&self, entry: &ModelCatalogEntry) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(CliError::Config(format!(
                "theta must lie in [0, 1] (got {})",
                self.theta
            )));
        }
        Self::positive("dt", self.dt)?;
        Self::positive("T", self.t_end)?;
        Self::positive("radius", self.radius)?;
        Self::positive("tol_stab", self.tol_stab)?;
        if !(self.z_scale.is_finite() && self.z_scale >= 0.0) {
            return Err(CliError::Config(format!(
                "z_scale must be non-negative (got {})",
                self.z_scale
            )));
        }
        let needs_paths = matches!(
            self.command,
            Command::StrongError | Command::Divergence | Command::MomentBound | Command::Stability
        );
        if needs_paths && self.paths == 0 {
            return Err(CliError::Config("paths must be at least 1".into()));
        }
        let (profile, split) = (entry.profile(), entry.split_lipschitz());
        match self.command {
            Command::ListModels => {}
            Command::CheckConditions | Command::Bounds => {}
            Command::StrongError => {
                if self.levels.is_empty() {
                    return Err(CliError::Config("levels must list at least one level".into()));
                }
                if self.ref_level > 30 {
                    return Err(CliError::Config(format!("ref_level {} exceeds 30", self.ref_level)));
                }
                if let Some(l) = self.levels.iter().find(|l| **l >= self.ref_level) {
                    return Err(CliError::Config(format!(
                        "test level {l} must be coarser than the reference level {}",
                        self.ref_level
                    )));
                }
                for &l in self.levels.iter().chain([&self.ref_level]) {
                    let dt = self.t_end * 2f64.powi(-(l as i32));
                    self.scheme_config(dt).validate(profile, split)?;
                }
            }
            Command::Divergence => {
                if self.dt_list.is_empty() {
                    return Err(CliError::Config("dt_list must list at least one step".into()));
                }
                for &dt in &self.dt_list {
                    Self::positive("dt_list entry", dt)?;
                }
            }
            Command::MomentBound => {
                if self.proxy_factor == 0 {
                    return Err(CliError::Config("proxy_factor must be at least 1".into()));
                }
                if !self.scheme.is_implicit() {
                    return Err(CliError::Config("moment-bound needs an implicit scheme".into()));
                }
                self.scheme_config(self.dt).validate(profile, split)?;
            }
            Command::Stability => {
                if self.steps == 0 {
                    return Err(CliError::Config("steps must be at least 1".into()));
                }
                self.scheme_config(self.dt).validate(profile, split)?;
            }
        }
        Ok(())
    }

    /// Every resolved value as a config file.
    pub fn manifest(&self) -> String {
        let mut out = String::from("# stiffsde run manifest\n");
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        line("command", self.command.name().into());
        line("version", env!("CARGO_PKG_VERSION").into());
        line("model", self.model.clone());
        for (k, v) in &self.params {
            line(&format!("param.{k}"), v.to_string());
        }
        line("scheme", self.scheme.name().into());
        line("theta", self.theta.to_string());
        line("dt", self.dt.to_string());
        line("T", self.t_end.to_string());
        line("paths", self.paths.to_string());
        line("seed", self.seed.to_string());
        line("x0", join(&self.x0));
        line("out", self.out.display().to_string());
        line("workers", self.workers.to_string());
        line("solver.method", self.solver.method.name().into());
        line("solver.tol", self.solver.tolerance.to_string());
        line("solver.max_iter", self.solver.max_iterations.to_string());
        line("allow_unsafe", self.allow_unsafe.to_string());
        line("predictor", self.predictor.to_string());
        line("ref_level", self.ref_level.to_string());
        line("levels", join(&self.levels));
        line("weighted_fit", self.weighted_fit.to_string());
        line("dt_list", join(&self.dt_list));
        line("proxy_factor", self.proxy_factor.to_string());
        line("steps", self.steps.to_string());
        line("tol_stab", self.tol_stab.to_string());
        line("z_scale", self.z_scale.to_string());
        line("trace_points", self.trace_points.to_string());
        line("radius", self.radius.to_string());
        line("dump_paths", self.dump_paths.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(command: Command, extra: &[(&str, &str)]) -> Result<RunConfig, CliError> {
        let mut s = Settings::defaults(command);
        for (k, v) in extra {
            s.set(k, *v).unwrap();
        }
        RunConfig::resolve(&s).map(|(c, _)| c)
    }

    #[test]
    fn manifest_round_trips() {
        for command in Command::ALL {
            let cfg = resolve(
                command,
                &[
                    ("model", "cubic"),
                    ("seed", "7"),
                    ("param.mu", "0.25"),
                    ("dt_list", "0.1,0.3"),
                ],
            )
            .unwrap();
            let mut reread = Settings::defaults(Command::ListModels);
            reread.merge(&Settings::parse(&cfg.manifest(), "manifest").unwrap());
            let (back, _) = RunConfig::resolve(&reread).unwrap();
            assert_eq!(back, cfg, "{command}");
            assert_eq!(back.manifest(), cfg.manifest());
        }
    }

    #[test]
    fn awkward_reals_survive_the_manifest() {
        let cfg = resolve(
            Command::MomentBound,
            &[("dt", "0.0123456789012345678"), ("theta", "0.7000000000000001")],
        )
        .unwrap();
        let text = cfg.manifest();
        let back = Settings::parse(&text, "m").unwrap();
        assert_eq!(back.get("dt").unwrap().parse::<f64>().unwrap(), cfg.dt);
        assert_eq!(back.get("theta").unwrap().parse::<f64>().unwrap(), 0.7000000000000001);
    }

    #[test]
    fn later_layers_win() {
        let mut base = Settings::defaults(Command::StrongError);
        base.merge(&Settings::parse("seed = 3\nparam.mu=0.4 # comment\n\n", "f").unwrap());
        let mut flags = Settings::default();
        flags.set("seed", "9").unwrap();
        base.merge(&flags);
        let (cfg, _) = RunConfig::resolve(&base).unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.params.contains(&("mu".to_string(), 0.4)));
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        assert!(matches!(Settings::parse("nonsense=1", "f"), Err(CliError::Config(_))));
        assert!(matches!(Settings::parse("seed", "f"), Err(CliError::Config(_))));
        assert!(resolve(Command::StrongError, &[("seed", "-1")]).is_err());
        assert!(resolve(Command::StrongError, &[("param.nope", "1")]).is_err());
        assert!(resolve(Command::StrongError, &[("x0", "1,2")]).is_err());
        assert!(resolve(Command::StrongError, &[("levels", "12")]).is_err());
        assert!(resolve(Command::Stability, &[("paths", "0")]).is_err());
    }

    #[test]
    fn step_guard_names_the_inequality() {
        // cubic defaults: L ≈ 0 and β = 0.25 give Δt* = 1/(θ·max{L,2β}) = 2.
        let err = resolve(Command::MomentBound, &[("dt", "2")]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Δt=2") && msg.contains("1/(θ·max{L,2β})"), "{msg}");
        assert_eq!(err.exit_code(), 2);
        assert!(resolve(Command::MomentBound, &[("dt", "2"), ("allow_unsafe", "true")]).is_ok());
        assert!(resolve(Command::MomentBound, &[("theta", "0.3")]).is_err());
    }

    #[test]
    fn auto_x0_matches_dimension() {
        let cfg = resolve(Command::Bounds, &[("model", "lotka2")]).unwrap();
        assert_eq!(cfg.x0, vec![1.0, 1.0]);
    }
}
