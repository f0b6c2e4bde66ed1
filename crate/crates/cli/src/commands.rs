//! One runner per subcommand. Each writes its tables and returns the
//! summary line.

use std::sync::Arc;

use stiffsde::report;
use stiffsde::{
    audit_condition, bound_lemma33, bound_thm22, bound_thm37, divergence_demo, moment_bound_study, run_path,
    stability_study, strong_error_study, BoundId, BoundReport, BrownianGrid, Condition, ModelCatalogEntry, Monitors,
    ProbeSpec, SchemeConfig, StabilitySpec, StateFn, StrongErrorSpec, TimePartition,
};

use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::output::OutputDir;

pub fn dump_name(path: usize) -> String {
    format!("trajectory_{path}.csv")
}

/// `z(x) = c‖x‖²`.
fn quadratic_z(c: f64) -> StateFn {
    Arc::new(move |x: &[f64]| c * x.iter().map(|v| v * v).sum::<f64>())
}

fn fmt_g(v: f64) -> String {
    format!("{v:.4}")
}

pub fn execute(cfg: &RunConfig, entry: &ModelCatalogEntry, out: &OutputDir) -> Result<String, CliError> {
    match cfg.command {
        Command::ListModels => Ok(String::new()),
        Command::CheckConditions => check_conditions(cfg, entry, out),
        Command::Bounds => bounds(cfg, entry, out),
        Command::StrongError => strong_error(cfg, entry, out),
        Command::Divergence => divergence(cfg, entry, out),
        Command::MomentBound => moment_bound(cfg, entry, out),
        Command::Stability => stability(cfg, entry, out),
    }
}

fn check_conditions(cfg: &RunConfig, entry: &ModelCatalogEntry, out: &OutputDir) -> Result<String, CliError> {
    let model = entry.model();
    let probes = ProbeSpec::default_for(model.state_dim()).with_seed(cfg.seed);
    let (theta, dt) = (cfg.theta, cfg.dt);
    let mut conditions = vec![Condition::Monotone, Condition::OneSidedLipschitz, Condition::PolyGrowth];
    if model.split().is_some() {
        conditions.push(Condition::SplitCon2 { theta, dt });
    }
    conditions.push(Condition::StabEm {
        theta,
        dt,
        z: quadratic_z(cfg.z_scale),
    });
    conditions.push(Condition::Lemma33 { theta, dt });
    let audits = conditions
        .iter()
        .map(|c| audit_condition(model, entry.profile(), c, &probes))
        .collect::<Result<Vec<_>, _>>()?;
    out.write("conditions.csv", &report::conditions_csv(&audits))?;
    let verdicts: Vec<String> = audits
        .iter()
        .map(|a| format!("{}={}", a.condition, a.verdict()))
        .collect();
    Ok(format!(
        "{}: {} ({} probes)",
        cfg.model,
        verdicts.join(" "),
        audits[0].probes
    ))
}

fn bounds(cfg: &RunConfig, entry: &ModelCatalogEntry, out: &OutputDir) -> Result<String, CliError> {
    let (model, profile) = (entry.model(), entry.profile());
    let thm22 = bound_thm22(profile, &cfg.x0, cfg.t_end, Some(cfg.radius))?;
    let thm37 = bound_thm37(model, profile, cfg.theta, cfg.dt, cfg.t_end, &cfg.x0)?;
    let f = model.drift(&cfg.x0);
    let fx_sq: f64 = cfg
        .x0
        .iter()
        .zip(&f)
        .map(|(x, f)| x - cfg.theta * f * cfg.dt)
        .map(|v| v * v)
        .sum();
    let lemma = BoundReport {
        bound: BoundId::Lemma33,
        value: bound_lemma33(profile, cfg.theta, cfg.dt, fx_sq)?,
        inputs: vec![
            ("alpha", profile.alpha),
            ("beta", profile.beta),
            ("theta", cfg.theta),
            ("dt", cfg.dt),
            ("F_x0_norm_sq", fx_sq),
        ],
    };
    let mut rows = vec![thm22.moment];
    rows.extend(thm22.exit_prob);
    rows.push(thm37);
    rows.push(lemma);
    out.write("bounds.csv", &report::bounds_csv(&rows))?;
    let parts: Vec<String> = rows
        .iter()
        .map(|b| format!("{}={}", b.bound, report::real(b.value)))
        .collect();
    Ok(format!("{}: {}", cfg.model, parts.join(" ")))
}

fn strong_error(cfg: &RunConfig, entry: &ModelCatalogEntry, out: &OutputDir) -> Result<String, CliError> {
    let spec = StrongErrorSpec {
        reference: cfg.scheme_config(cfg.t_end * 2f64.powi(-(cfg.ref_level as i32))),
        test: cfg.scheme_config(cfg.dt),
        t_end: cfg.t_end,
        ref_level: cfg.ref_level,
        test_levels: cfg.levels.clone(),
        n_paths: cfg.paths,
        x0: cfg.x0.clone(),
        seed: cfg.seed,
        weighted_fit: cfg.weighted_fit,
    };
    let r = strong_error_study(entry, &spec)?;
    out.write("levels.csv", &report::levels_csv(&r))?;
    out.write("fit.csv", &report::fit_csv(&r))?;
    let levels: Vec<String> = cfg.levels.iter().map(u32::to_string).collect();
    Ok(format!(
        "{}: fitted slope {} (se {}) over levels {} against reference level {}, {} paths, seed {}",
        cfg.model,
        fmt_g(r.fitted_slope),
        fmt_g(r.slope_se),
        levels.join(","),
        cfg.ref_level,
        cfg.paths,
        cfg.seed
    ))
}

fn divergence(cfg: &RunConfig, entry: &ModelCatalogEntry, out: &OutputDir) -> Result<String, CliError> {
    let r = divergence_demo(entry, &cfg.dt_list, cfg.paths, &cfg.x0, cfg.t_end, cfg.seed)?;
    out.write("divergence.csv", &report::divergence_csv(&r))?;
    let parts: Vec<String> = r
        .rows
        .iter()
        .map(|row| {
            format!(
                "{} dt={} blow-up fraction {} ({}/{})",
                row.scheme,
                report::real(row.dt),
                fmt_g(row.blowup_fraction),
                row.blowups,
                row.n_paths
            )
        })
        .collect();
    Ok(format!("{}: {}", cfg.model, parts.join("; ")))
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

fn moment_bound(cfg: &RunConfig, entry: &ModelCatalogEntry, out: &OutputDir) -> Result<String, CliError> {
    let scheme = cfg.scheme_config(cfg.dt);
    let r = moment_bound_study(
        entry,
        &scheme,
        cfg.t_end,
        cfg.paths,
        &cfg.x0,
        cfg.seed,
        cfg.proxy_factor,
    )?;
    out.write("moment.csv", &report::moment_csv(&r))?;
    out.write("moment_summary.csv", &report::moment_summary_csv(&r))?;
    if cfg.dump_paths > 0 {
        let coarse = TimePartition::with_step(cfg.t_end, cfg.dt)?;
        let fine = TimePartition::new(cfg.t_end, coarse.steps() * cfg.proxy_factor)?;
        dump_paths(cfg, entry, &scheme.at_step(coarse.dt()), out, |p| {
            BrownianGrid::generate_path(fine, entry.model().noise_dim(), cfg.seed, p as u64)?.coarsen(cfg.proxy_factor)
        })?;
    }
    Ok(format!(
        "{}: thm37_moment {} (empirical {} vs bound {}), thm22_moment {} (proxy {} vs bound {})",
        cfg.model,
        verdict(r.thm37_pass()),
        fmt_g(r.scheme_sup_upper),
        fmt_g(r.bound_thm37),
        verdict(r.thm22_pass()),
        fmt_g(r.proxy_sup_upper),
        fmt_g(r.bound_thm22)
    ))
}

fn stability(cfg: &RunConfig, entry: &ModelCatalogEntry, out: &OutputDir) -> Result<String, CliError> {
    let scheme = cfg.scheme_config(cfg.dt);
    let spec = StabilitySpec {
        cfg: scheme,
        z: quadratic_z(cfg.z_scale),
        horizon_steps: cfg.steps,
        n_paths: cfg.paths,
        x0: cfg.x0.clone(),
        seed: cfg.seed,
        tol_stab: cfg.tol_stab,
        trace_points: cfg.trace_points,
    };
    let r = stability_study(entry, &spec)?;
    out.write("stability.csv", &report::stability_csv(&r))?;
    out.write("stability_traces.csv", &report::stability_traces_csv(&r))?;
    if cfg.dump_paths > 0 {
        let partition = TimePartition::new(cfg.dt * cfg.steps as f64, cfg.steps)?;
        dump_paths(cfg, entry, &scheme.at_step(partition.dt()), out, |p| {
            BrownianGrid::generate_path(partition, entry.model().noise_dim(), cfg.seed, p as u64)
        })?;
    }
    let converged = r.paths.iter().filter(|p| p.converged).count();
    Ok(format!(
        "{}: {}/{} paths within tol {} after {} steps (fraction {}), LaSalle sums nondecreasing: {}, stab_em audit: {}",
        cfg.model,
        converged,
        r.paths.len(),
        report::real(cfg.tol_stab),
        cfg.steps,
        fmt_g(r.fraction_converged),
        r.all_nondecreasing,
        r.audit.verdict()
    ))
}

/// Re-runs the first `dump_paths` paths with state recording and writes one
/// trajectory table per path.
fn dump_paths(
    cfg: &RunConfig,
    entry: &ModelCatalogEntry,
    scheme: &SchemeConfig,
    out: &OutputDir,
    grid: impl Fn(usize) -> stiffsde::Result<BrownianGrid>,
) -> Result<(), CliError> {
    let mon = Monitors {
        states: true,
        ..Monitors::none()
    };
    for p in 0..cfg.dump_paths.min(cfg.paths) {
        let traj = run_path(entry.model(), scheme, &grid(p)?, &cfg.x0, &mon)?;
        let csv = report::trajectory_csv(&traj).expect("states were recorded");
        out.write(&dump_name(p), &csv)?;
    }
    Ok(())
}

/// `list-models` output: one block per catalog entry.
pub fn list_models() -> String {
    let mut s = String::new();
    for m in stiffsde::catalog::MODELS {
        let params: Vec<String> = m.defaults.iter().map(|(k, v)| format!("{k}={v}")).collect();
        s.push_str(&format!(
            "{:<13} {}\n{:<13} defaults: {}\n",
            m.label,
            m.equation,
            "",
            params.join(" ")
        ));
    }
    s
}
