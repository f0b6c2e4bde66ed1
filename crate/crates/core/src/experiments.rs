//! Monte Carlo studies: strong error, explicit-EM divergence, moment bounds,
//! long-horizon stability and exit frequencies.
//!
//! Paths are independent work units run on the current rayon pool; results
//! are collected in path order and reduced sequentially, so every number is
//! independent of the worker count.

use rayon::prelude::*;

use crate::analysis::{audit_condition, bound_thm22, bound_thm37, Condition, ConditionAudit, ProbeSpec};
use crate::error::{Error, Result};
use crate::model::ModelCatalogEntry;
use crate::noise::{BrownianGrid, TimePartition};
use crate::scheme::{run_path, Monitors, SchemeConfig, SchemeKind, StateFn, Trajectory};
use crate::stats::{least_squares, slope_standard_error, weighted_least_squares, MeanCi};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn blowup_error(path: usize, t: &Trajectory) -> Option<Error> {
    t.blowup.map(|b| Error::BlowUp {
        path,
        step: b.step,
        norm: b.norm,
    })
}

fn check_x0(entry: &ModelCatalogEntry, x0: &[f64]) -> Result<()> {
    if x0.len() != entry.model().state_dim() {
        return Err(Error::Config(format!(
            "x0 has {} components, model '{}' has {}",
            x0.len(),
            entry.model().label(),
            entry.model().state_dim()
        )));
    }
    entry.model().check_domain(x0)
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::Config("at least one path is required".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorSpec {
    /// Scheme integrated at the reference level.
    pub reference: SchemeConfig,
    /// Scheme integrated at each test level.
    pub test: SchemeConfig,
    pub t_end: f64,
    /// Reference step is `T·2^{−ref_level}`.
    pub ref_level: u32,
    pub test_levels: Vec<u32>,
    pub n_paths: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
    /// Fit with weights `1/σ²` from the per-level CIs instead of unweighted.
    pub weighted_fit: bool,
}

impl StrongErrorSpec {
    /// Desk-scale reproduction defaults: θ = 1, T = 1, reference 2⁻¹², levels
    /// 2⁻¹¹, 2⁻⁹, 2⁻⁷, 2⁻⁵, 2000 paths, x₀ = 1.
    pub fn desk_scale(seed: u64) -> Self {
        let cfg = SchemeConfig::theta_em(1.0, 2f64.powi(-12));
        StrongErrorSpec {
            reference: cfg,
            test: cfg,
            t_end: 1.0,
            ref_level: 12,
            test_levels: vec![11, 9, 7, 5],
            n_paths: 2000,
            x0: vec![1.0],
            seed,
            weighted_fit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelError {
    pub level: u32,
    pub dt: f64,
    pub n_paths: usize,
    /// `E‖X_ref(T) − X(T)‖²`.
    pub mse: f64,
    pub ci_halfwidth: f64,
    /// `E‖X_ref(T) − X(T)‖` (s = 1).
    pub err_s1: f64,
    pub err_s1_ci: f64,
    /// `E‖X_ref(T) − X(T)‖^{1.5}`.
    pub err_s15: f64,
    pub err_s15_ci: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorReport {
    pub levels: Vec<LevelError>,
    /// Slope of ln mse against ln dt; NaN when any level has mse = 0.
    pub fitted_slope: f64,
    pub fit_intercept: f64,
    /// Standard error of the slope propagated from the per-level CIs.
    pub slope_se: f64,
    pub reference_dt: f64,
    pub reference_level: u32,
    pub seed: u64,
    pub weighted_fit: bool,
}

/// Coupled strong-error study: one fine Brownian path per sample drives the
/// reference run and, summed down, every test level.
pub fn strong_error_study(entry: &ModelCatalogEntry, spec: &StrongErrorSpec) -> Result<StrongErrorReport> {
    check_paths(spec.n_paths)?;
    check_x0(entry, &spec.x0)?;
    if spec.test_levels.is_empty() {
        return Err(Error::Config("at least one test level is required".into()));
    }
    if spec.ref_level > 30 {
        return Err(Error::Config(format!("reference level {} is too fine", spec.ref_level)));
    }
    if let Some(bad) = spec.test_levels.iter().find(|&&l| l > spec.ref_level) {
        return Err(Error::Config(format!(
            "test level {bad} is finer than the reference level {}",
            spec.ref_level
        )));
    }
    let model = entry.model();
    let fine = TimePartition::dyadic(spec.t_end, spec.ref_level)?;
    let reference = spec.reference.at_step(fine.dt());
    reference.validate(entry.profile(), entry.split_lipschitz())?;
    let tests: Vec<(u32, usize, SchemeConfig)> = spec
        .test_levels
        .iter()
        .map(|&l| {
            let factor = 1usize << (spec.ref_level - l);
            let cfg = spec.test.at_step(fine.dt() * factor as f64);
            cfg.validate(entry.profile(), entry.split_lipschitz())
                .map(|_| (l, factor, cfg))
        })
        .collect::<Result<_>>()?;

    let d = model.noise_dim();
    let none = Monitors::none();
    let per_path: Vec<Vec<f64>> = (0..spec.n_paths)
        .into_par_iter()
        .map(|p| {
            let grid = BrownianGrid::generate_path(fine, d, spec.seed, p as u64)?;
            let r = run_path(model, &reference, &grid, &spec.x0, &none)?;
            if let Some(e) = blowup_error(p, &r) {
                return Err(e);
            }
            tests
                .iter()
                .map(|(_, factor, cfg)| {
                    let coarse = grid.coarsen(*factor)?;
                    let t = run_path(model, cfg, &coarse, &spec.x0, &none)?;
                    if let Some(e) = blowup_error(p, &t) {
                        return Err(e);
                    }
                    Ok(sq_dist(&r.final_state, &t.final_state))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let levels: Vec<LevelError> = tests
        .iter()
        .enumerate()
        .map(|(j, (level, _, cfg))| {
            let e2: Vec<f64> = per_path.iter().map(|v| v[j]).collect();
            let s2 = MeanCi::of(&e2);
            let s1 = MeanCi::of(&e2.iter().map(|v| v.sqrt()).collect::<Vec<_>>());
            let s15 = MeanCi::of(&e2.iter().map(|v| v.powf(0.75)).collect::<Vec<_>>());
            LevelError {
                level: *level,
                dt: cfg.dt,
                n_paths: spec.n_paths,
                mse: s2.mean,
                ci_halfwidth: s2.ci_halfwidth,
                err_s1: s1.mean,
                err_s1_ci: s1.ci_halfwidth,
                err_s15: s15.mean,
                err_s15_ci: s15.ci_halfwidth,
            }
        })
        .collect();

    let (fitted_slope, fit_intercept, slope_se) = fit_levels(&levels, spec.weighted_fit);
    Ok(StrongErrorReport {
        levels,
        fitted_slope,
        fit_intercept,
        slope_se,
        reference_dt: fine.dt(),
        reference_level: spec.ref_level,
        seed: spec.seed,
        weighted_fit: spec.weighted_fit,
    })
}

/// Log-log fit of mse against dt with the slope standard error from the CIs
/// (σ of ln mse ≈ (ci/1.96)/mse).
fn fit_levels(levels: &[LevelError], weighted: bool) -> (f64, f64, f64) {
    let pts: Vec<(f64, f64)> = levels.iter().map(|l| (l.dt.ln(), l.mse.ln())).collect();
    let sigma: Vec<f64> = levels
        .iter()
        .map(|l| l.ci_halfwidth / crate::stats::Z95 / l.mse)
        .collect();
    let w: Vec<f64> = if weighted {
        sigma.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; levels.len()]
    };
    let fit = if weighted {
        weighted_least_squares(&pts, &w)
    } else {
        least_squares(&pts)
    };
    match fit {
        Some(f) => {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            (f.slope, f.intercept, slope_standard_error(&xs, &w, &sigma))
        }
        None => (f64::NAN, f64::NAN, f64::NAN),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeDivergence {
    pub scheme: SchemeKind,
    pub dt: f64,
    pub n_paths: usize,
    pub blowups: usize,
    pub blowup_fraction: f64,
    pub max_finite_norm: f64,
    /// Sample mean of ‖X_T‖²; `None` (infinite) when any path blew up.
    pub endpoint_second_moment: Option<f64>,
    pub endpoint_ci: Option<f64>,
    /// θ-EM second-moment bound at this Δt, for the implicit rows.
    pub bound_thm37: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub rows: Vec<SchemeDivergence>,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub seed: u64,
    /// Whether the profile records super-linear growth (h > 1).
    pub superlinear: bool,
}

fn summarize_scheme(scheme: SchemeKind, dt: f64, trajectories: &[Trajectory], bound: Option<f64>) -> SchemeDivergence {
    let n = trajectories.len();
    let blowups = trajectories.iter().filter(|t| t.blew_up()).count();
    let max_finite_norm = trajectories.iter().map(|t| t.max_finite_norm).fold(0.0, f64::max);
    let (moment, ci) = if blowups == 0 {
        let m2: Vec<f64> = trajectories
            .iter()
            .map(|t| t.final_state.iter().map(|v| v * v).sum())
            .collect();
        let s = MeanCi::of(&m2);
        (Some(s.mean), Some(s.ci_halfwidth))
    } else {
        (None, None)
    };
    SchemeDivergence {
        scheme,
        dt,
        n_paths: n,
        blowups,
        blowup_fraction: blowups as f64 / n as f64,
        max_finite_norm,
        endpoint_second_moment: moment,
        endpoint_ci: ci,
        bound_thm37: bound,
    }
}

/// Explicit EM against backward EM (θ = 1) on shared Brownian grids.
pub fn divergence_demo(
    entry: &ModelCatalogEntry,
    dt_list: &[f64],
    n_paths: usize,
    x0: &[f64],
    t_end: f64,
    seed: u64,
) -> Result<DivergenceReport> {
    check_paths(n_paths)?;
    check_x0(entry, x0)?;
    if dt_list.is_empty() {
        return Err(Error::Config("at least one step size is required".into()));
    }
    let model = entry.model();
    let d = model.noise_dim();
    let mut rows = Vec::new();
    for &dt in dt_list {
        let partition = TimePartition::with_step(t_end, dt)?;
        let explicit = SchemeConfig::explicit_em(partition.dt());
        let backward = SchemeConfig::theta_em(1.0, partition.dt());
        backward.validate(entry.profile(), entry.split_lipschitz())?;
        let pairs: Vec<(Trajectory, Trajectory)> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let grid = BrownianGrid::generate_path(partition, d, seed, p as u64)?;
                let a = run_path(model, &explicit, &grid, x0, &Monitors::none())?;
                let b = run_path(model, &backward, &grid, x0, &Monitors::none())?;
                Ok((a, b))
            })
            .collect::<Result<_>>()?;
        let (ex, be): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let bound = bound_thm37(model, entry.profile(), 1.0, partition.dt(), t_end, x0)
            .ok()
            .map(|b| b.value);
        rows.push(summarize_scheme(SchemeKind::ExplicitEm, partition.dt(), &ex, None));
        rows.push(summarize_scheme(SchemeKind::ThetaEm, partition.dt(), &be, bound));
    }
    Ok(DivergenceReport {
        rows,
        x0: x0.to_vec(),
        t_end,
        seed,
        superlinear: entry.profile().poly_h > 1.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentPoint {
    pub k: usize,
    pub t: f64,
    /// Scheme second moment `E‖X_{t_k}‖²`.
    pub scheme: MeanCi,
    /// Fine-step proxy for `E‖x(t_k)‖²`.
    pub proxy: MeanCi,
    /// Exact-solution bound evaluated at `t_k`.
    pub thm22_at_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub points: Vec<MomentPoint>,
    pub n_paths: usize,
    pub dt: f64,
    pub proxy_dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// `max_k (m_k + ci_k)` for the scheme.
    pub scheme_sup_upper: f64,
    /// `max_k (m_k + ci_k)` for the proxy.
    pub proxy_sup_upper: f64,
    pub bound_thm37: f64,
    pub bound_thm22: f64,
}

impl MomentReport {
    pub fn thm37_pass(&self) -> bool {
        self.scheme_sup_upper <= self.bound_thm37
    }

    pub fn thm22_pass(&self) -> bool {
        self.proxy_sup_upper <= self.bound_thm22
    }
}

/// Second moments of the configured scheme on every grid time, next to a
/// proxy for the exact solution from the same scheme at `Δt/proxy_factor`
/// on the same Brownian paths.
pub fn moment_bound_study(
    entry: &ModelCatalogEntry,
    cfg: &SchemeConfig,
    t_end: f64,
    n_paths: usize,
    x0: &[f64],
    seed: u64,
    proxy_factor: usize,
) -> Result<MomentReport> {
    check_paths(n_paths)?;
    check_x0(entry, x0)?;
    if proxy_factor == 0 {
        return Err(Error::Config("proxy factor must be positive".into()));
    }
    if !cfg.kind.is_implicit() {
        return Err(Error::Config("moment bounds apply to the implicit schemes".into()));
    }
    cfg.validate(entry.profile(), entry.split_lipschitz())?;
    let coarse = TimePartition::with_step(t_end, cfg.dt)?;
    let fine = TimePartition::new(t_end, coarse.steps() * proxy_factor)?;
    let coarse_cfg = cfg.at_step(coarse.dt());
    let fine_cfg = cfg.at_step(fine.dt());
    let bound37 = bound_thm37(entry.model(), entry.profile(), cfg.theta, coarse.dt(), t_end, x0)?.value;
    let bound22 = bound_thm22(entry.profile(), x0, t_end, None)?.moment.value;

    let model = entry.model();
    let d = model.noise_dim();
    let mon = Monitors {
        norm_sq: true,
        ..Monitors::none()
    };
    let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let grid = BrownianGrid::generate_path(fine, d, seed, p as u64)?;
            let f = run_path(model, &fine_cfg, &grid, x0, &mon)?;
            if let Some(e) = blowup_error(p, &f) {
                return Err(e);
            }
            let c = run_path(model, &coarse_cfg, &grid.coarsen(proxy_factor)?, x0, &mon)?;
            if let Some(e) = blowup_error(p, &c) {
                return Err(e);
            }
            let fine_sq = f.norm_sq.expect("norm monitor on");
            let proxy = fine_sq.iter().step_by(proxy_factor).cloned().collect();
            Ok((c.norm_sq.expect("norm monitor on"), proxy))
        })
        .collect::<Result<_>>()?;

    let points: Vec<MomentPoint> = (0..=coarse.steps())
        .map(|k| {
            let s: Vec<f64> = per_path.iter().map(|v| v.0[k]).collect();
            let q: Vec<f64> = per_path.iter().map(|v| v.1[k]).collect();
            let t = coarse.time(k);
            let thm22_at_t = if k == 0 {
                x0.iter().map(|v| v * v).sum()
            } else {
                bound_thm22(entry.profile(), x0, t, None)
                    .map(|b| b.moment.value)
                    .unwrap_or(f64::NAN)
            };
            MomentPoint {
                k,
                t,
                scheme: MeanCi::of(&s),
                proxy: MeanCi::of(&q),
                thm22_at_t,
            }
        })
        .collect();
    let sup = |f: fn(&MomentPoint) -> f64| points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    Ok(MomentReport {
        scheme_sup_upper: sup(|p| p.scheme.upper()),
        proxy_sup_upper: sup(|p| p.proxy.upper()),
        points,
        n_paths,
        dt: coarse.dt(),
        proxy_dt: fine.dt(),
        t_end,
        seed,
        bound_thm37: bound37,
        bound_thm22: bound22,
    })
}

#[derive(Clone)]
pub struct StabilitySpec {
    pub cfg: SchemeConfig,
    pub z: StateFn,
    pub horizon_steps: usize,
    pub n_paths: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
    /// A path has converged when its final norm is below this.
    pub tol_stab: f64,
    /// Number of samples kept per path for traces.
    pub trace_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStability {
    pub path: usize,
    pub final_norm: f64,
    /// Sup of ‖X_k‖ over the last 10% of steps.
    pub sup_tail_norm: f64,
    pub z_final: f64,
    pub converged: bool,
    pub blowup_step: Option<usize>,
    pub lasalle_min_term: f64,
    pub lasalle_nondecreasing: bool,
    /// `(k, ‖X_k‖², Σ_{j<k} A_j Δt)` at sampled steps.
    pub trace: Vec<(usize, f64, f64)>,
    /// Solver or domain failure that stopped the path.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub paths: Vec<PathStability>,
    pub fraction_converged: f64,
    pub all_nondecreasing: bool,
    pub audit: ConditionAudit,
    pub tol_stab: f64,
    pub dt: f64,
    pub horizon_steps: usize,
    pub seed: u64,
}

impl std::fmt::Debug for StabilitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StabilitySpec")
            .field("cfg", &self.cfg)
            .field("horizon_steps", &self.horizon_steps)
            .field("n_paths", &self.n_paths)
            .field("x0", &self.x0)
            .field("seed", &self.seed)
            .field("tol_stab", &self.tol_stab)
            .field("trace_points", &self.trace_points)
            .finish_non_exhaustive()
    }
}

/// Long-horizon θ-EM paths with the LaSalle monitor.
pub fn stability_study(entry: &ModelCatalogEntry, spec: &StabilitySpec) -> Result<StabilityReport> {
    check_paths(spec.n_paths)?;
    check_x0(entry, &spec.x0)?;
    if spec.horizon_steps == 0 {
        return Err(Error::Config("the horizon must have at least one step".into()));
    }
    let cfg = spec.cfg;
    cfg.validate(entry.profile(), entry.split_lipschitz())?;
    let model = entry.model();
    let audit = audit_condition(
        model,
        entry.profile(),
        &Condition::StabEm {
            theta: cfg.theta,
            dt: cfg.dt,
            z: spec.z.clone(),
        },
        &ProbeSpec::default_for(model.state_dim()).with_seed(spec.seed),
    )?;
    let partition = TimePartition::new(cfg.dt * spec.horizon_steps as f64, spec.horizon_steps)?;
    let cfg = cfg.at_step(partition.dt());
    let stride = (spec.horizon_steps / spec.trace_points.max(1)).max(1);
    let mon = Monitors {
        norm_sq: true,
        z: Some(spec.z.clone()),
        lasalle_stride: Some(stride),
        ..Monitors::none()
    };
    let d = model.noise_dim();
    let tail_start = spec.horizon_steps - spec.horizon_steps / 10;
    let paths: Vec<PathStability> = (0..spec.n_paths)
        .into_par_iter()
        .map(|p| {
            let grid = BrownianGrid::generate_path(partition, d, spec.seed, p as u64)?;
            Ok(match run_path(model, &cfg, &grid, &spec.x0, &mon) {
                Ok(t) => summarize_stability(p, &t, tail_start, spec.tol_stab, &spec.z),
                Err(e @ (Error::Step { .. } | Error::ResidualAudit { .. } | Error::SolverFailure { .. })) => {
                    PathStability {
                        path: p,
                        final_norm: f64::NAN,
                        sup_tail_norm: f64::NAN,
                        z_final: f64::NAN,
                        converged: false,
                        blowup_step: None,
                        lasalle_min_term: f64::NAN,
                        lasalle_nondecreasing: false,
                        trace: Vec::new(),
                        failure: Some(e.to_string()),
                    }
                }
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<_>>()?;
    let converged = paths.iter().filter(|p| p.converged).count();
    Ok(StabilityReport {
        fraction_converged: converged as f64 / spec.n_paths as f64,
        all_nondecreasing: paths.iter().all(|p| p.lasalle_nondecreasing),
        paths,
        audit,
        tol_stab: spec.tol_stab,
        dt: cfg.dt,
        horizon_steps: spec.horizon_steps,
        seed: spec.seed,
    })
}

fn summarize_stability(path: usize, t: &Trajectory, tail_start: usize, tol: f64, z: &StateFn) -> PathStability {
    let norms = t.norm_sq.as_deref().unwrap_or(&[]);
    let lasalle = t.lasalle.as_ref();
    let final_norm = if t.blew_up() {
        f64::INFINITY
    } else {
        t.final_state.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    let sup_tail_norm = if t.blew_up() {
        f64::INFINITY
    } else {
        norms.iter().skip(tail_start).cloned().fold(0.0, f64::max).sqrt()
    };
    let trace = lasalle
        .map(|l| {
            l.cumulative
                .iter()
                .map(|&(k, s)| (k, norms.get(k).cloned().unwrap_or(f64::NAN), s))
                .collect()
        })
        .unwrap_or_default();
    PathStability {
        path,
        final_norm,
        sup_tail_norm,
        z_final: t
            .z
            .as_ref()
            .and_then(|v| v.last().cloned())
            .unwrap_or_else(|| z(&t.final_state)),
        converged: final_norm < tol,
        blowup_step: t.blowup.map(|b| b.step),
        lasalle_min_term: lasalle.map_or(f64::NAN, |l| l.min_term),
        lasalle_nondecreasing: lasalle.is_some_and(|l| l.nondecreasing),
        trace,
        failure: None,
    }
}

/// First grid index with `‖X_k‖ > radius`. A blow-up counts as an exit at
/// its step. Needs the `norm_sq` or `states` monitor.
pub fn exit_time_tracker(trajectory: &Trajectory, radius: f64) -> Result<Option<usize>> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("exit radius must be positive (got {radius})")));
    }
    let r2 = radius * radius;
    let n = trajectory.x0.len();
    let found = if let Some(v) = trajectory.norm_sq.as_ref() {
        v.iter().position(|&s| s > r2)
    } else if let Some(s) = trajectory.states.as_ref() {
        s.chunks(n).position(|x| x.iter().map(|v| v * v).sum::<f64>() > r2)
    } else {
        return Err(Error::Config("exit tracking needs recorded norms or states".into()));
    };
    Ok(found.or_else(|| trajectory.blowup.map(|b| b.step)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitReport {
    pub radius: f64,
    pub exits: usize,
    pub n_paths: usize,
    pub fraction: MeanCi,
    pub bound: f64,
}

impl ExitReport {
    pub fn pass(&self) -> bool {
        self.fraction.upper() <= self.bound
    }
}

/// Fraction of scheme paths leaving the ball of radius `radius` before T,
/// next to the exact-solution exit bound.
pub fn exit_frequency_study(
    entry: &ModelCatalogEntry,
    cfg: &SchemeConfig,
    t_end: f64,
    n_paths: usize,
    x0: &[f64],
    seed: u64,
    radius: f64,
) -> Result<ExitReport> {
    check_paths(n_paths)?;
    check_x0(entry, x0)?;
    cfg.validate(entry.profile(), entry.split_lipschitz())?;
    let partition = TimePartition::with_step(t_end, cfg.dt)?;
    let cfg = cfg.at_step(partition.dt());
    let bound = bound_thm22(entry.profile(), x0, t_end, Some(radius))?
        .exit_prob
        .expect("radius given")
        .value;
    let model = entry.model();
    let mon = Monitors {
        norm_sq: true,
        ..Monitors::none()
    };
    let hits: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let grid = BrownianGrid::generate_path(partition, model.noise_dim(), seed, p as u64)?;
            let t = run_path(model, &cfg, &grid, x0, &mon)?;
            Ok(if exit_time_tracker(&t, radius)?.is_some() {
                1.0
            } else {
                0.0
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExitReport {
        radius,
        exits: hits.iter().filter(|&&h| h > 0.0).count(),
        n_paths,
        fraction: MeanCi::of(&hits),
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, make_cubic_model, MonotoneProfile, ProfileOrigin, SdeModel};
    use std::sync::Arc;

    fn cubic() -> ModelCatalogEntry {
        make_cubic_model(0.5, 0.2, 0.2f64.sqrt()).unwrap()
    }

    fn small_spec(seed: u64) -> StrongErrorSpec {
        let cfg = SchemeConfig::theta_em(1.0, 2f64.powi(-8));
        StrongErrorSpec {
            reference: cfg,
            test: cfg,
            t_end: 1.0,
            ref_level: 8,
            test_levels: vec![6, 5, 4, 3],
            n_paths: 200,
            x0: vec![1.0],
            seed,
            weighted_fit: false,
        }
    }

    #[test]
    fn identical_schemes_at_reference_level_have_zero_error() {
        let mut spec = small_spec(4);
        spec.test_levels = vec![8, 8];
        let r = strong_error_study(&cubic(), &spec).unwrap();
        for l in &r.levels {
            assert_eq!(l.mse, 0.0);
            assert_eq!(l.ci_halfwidth, 0.0);
        }
        assert!(r.fitted_slope.is_nan());
    }

    #[test]
    fn deterministic_linear_model_has_slope_two() {
        let e = catalog::build("linear", &[]).unwrap();
        let mut spec = small_spec(1);
        spec.ref_level = 14;
        spec.test_levels = vec![8, 7, 6, 5];
        spec.n_paths = 4;
        let r = strong_error_study(&e, &spec).unwrap();
        assert!((r.fitted_slope - 2.0).abs() < 0.1, "{}", r.fitted_slope);
        // Backward Euler endpoint on x' = −x from 1: (1 + Δt)^{−N}.
        let exact = |dt: f64| (1.0 + dt).powf(-1.0 / dt);
        for l in &r.levels {
            let diff = exact(r.reference_dt) - exact(l.dt);
            assert!((l.mse - diff * diff).abs() <= 1e-10 * diff * diff, "{l:?}");
        }
    }

    #[test]
    fn levels_must_not_be_finer_than_reference() {
        let mut spec = small_spec(1);
        spec.test_levels = vec![9];
        assert!(matches!(strong_error_study(&cubic(), &spec), Err(Error::Config(_))));
        let mut spec = small_spec(1);
        spec.ref_level = 0;
        spec.test_levels = vec![0];
        // Δt = 1 is admissible (Δt* = 2) but T must still divide.
        assert!(strong_error_study(&cubic(), &spec).is_ok());
        let mut spec = small_spec(1);
        spec.reference = SchemeConfig::theta_em(1.0, 1.0);
        spec.ref_level = 0;
        spec.t_end = 4.0;
        spec.test_levels = vec![0];
        assert!(matches!(
            strong_error_study(&cubic(), &spec),
            Err(Error::Admissibility(_))
        ));
    }

    #[test]
    fn study_is_independent_of_pool_size() {
        let spec = small_spec(17);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| strong_error_study(&cubic(), &spec).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn ci_covers_large_run_mse() {
        // 20 small replicates against a 10× larger run. The cubic model's
        // squared errors have too heavy a tail for normal intervals at this
        // size, so this uses the dissipative model with linear noise.
        let e = catalog::build("stable-cubic", &[]).unwrap();
        let mut spec = small_spec(0);
        spec.test_levels = vec![4];
        spec.n_paths = 100;
        let reps: Vec<LevelError> = (0..20)
            .map(|s| {
                spec.seed = 1000 + s;
                strong_error_study(&e, &spec).unwrap().levels[0].clone()
            })
            .collect();
        spec.seed = 99;
        spec.n_paths = 2000;
        let truth = strong_error_study(&e, &spec).unwrap().levels[0].mse;
        let covered = reps.iter().filter(|l| (l.mse - truth).abs() <= l.ci_halfwidth).count();
        assert!(covered >= 16, "covered {covered}/20");
    }

    #[test]
    fn slope_stable_across_seeds() {
        let e = cubic();
        let mut spec = small_spec(21);
        spec.n_paths = 400;
        let a = strong_error_study(&e, &spec).unwrap();
        spec.seed = 22;
        let b = strong_error_study(&e, &spec).unwrap();
        let se = (a.slope_se * a.slope_se + b.slope_se * b.slope_se).sqrt();
        assert!((a.fitted_slope - b.fitted_slope).abs() < 3.0 * se, "{a:?} {b:?}");
    }

    #[test]
    fn frozen_dynamics_never_blow_up() {
        let m = SdeModel::scalar("frozen", |_| 0.0, |_| 0.0);
        let p = MonotoneProfile {
            alpha: 0.0,
            beta: 0.0,
            one_sided_lipschitz: 1e-9,
            poly_h: 1.0,
            poly_c: 1.0,
            origin: ProfileOrigin::Analytic,
        };
        let e = ModelCatalogEntry::new(m, p, vec![]);
        let r = divergence_demo(&e, &[0.25], 50, &[5.0], 1.0, 3).unwrap();
        assert!(!r.superlinear);
        for row in &r.rows {
            assert_eq!(row.blowup_fraction, 0.0);
            assert_eq!(row.endpoint_second_moment, Some(25.0));
        }
    }

    #[test]
    fn divergence_rows_pair_schemes() {
        let r = divergence_demo(&cubic(), &[0.25, 0.125], 200, &[5.0], 1.0, 7).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.superlinear);
        for pair in r.rows.chunks(2) {
            assert_eq!(pair[0].scheme, SchemeKind::ExplicitEm);
            assert_eq!(pair[1].blowups, 0);
            assert!(pair[1].endpoint_second_moment.unwrap() <= pair[1].bound_thm37.unwrap());
            let flagged = pair[0].blowups > 0;
            assert_eq!(pair[0].endpoint_second_moment.is_none(), flagged);
        }
    }

    #[test]
    fn zero_start_zero_coefficients_moment_is_zero() {
        let m = SdeModel::scalar("frozen", |_| 0.0, |_| 0.0);
        let p = MonotoneProfile {
            alpha: 0.0,
            beta: 0.0,
            one_sided_lipschitz: 1e-9,
            poly_h: 1.0,
            poly_c: 1.0,
            origin: ProfileOrigin::Analytic,
        };
        let e = ModelCatalogEntry::new(m, p, vec![]);
        let r = moment_bound_study(&e, &SchemeConfig::theta_em(1.0, 0.25), 1.0, 20, &[0.0], 1, 4).unwrap();
        assert_eq!(r.scheme_sup_upper, 0.0);
        assert!(r.thm37_pass() && r.thm22_pass());
    }

    #[test]
    fn moment_bounds_grow_with_horizon() {
        let e = cubic();
        let cfg = SchemeConfig::theta_em(1.0, 2f64.powi(-4));
        let a = moment_bound_study(&e, &cfg, 1.0, 500, &[1.0], 5, 4).unwrap();
        let b = moment_bound_study(&e, &cfg, 2.0, 500, &[1.0], 5, 4).unwrap();
        assert_eq!(a.points.len(), 17);
        assert!(a.thm37_pass() && a.thm22_pass());
        assert!(b.bound_thm37 > a.bound_thm37 && b.bound_thm22 > a.bound_thm22);
        assert!(b.points.last().unwrap().scheme.mean >= a.points.last().unwrap().scheme.mean * 0.9);
    }

    #[test]
    fn stability_from_equilibrium_stays_put() {
        let e = catalog::build("stable-cubic", &[]).unwrap();
        let spec = StabilitySpec {
            cfg: SchemeConfig::theta_em(1.0, 0.01),
            z: Arc::new(|x: &[f64]| 0.5 * x[0] * x[0]),
            horizon_steps: 500,
            n_paths: 5,
            x0: vec![0.0],
            seed: 1,
            tol_stab: 1e-2,
            trace_points: 10,
        };
        let r = stability_study(&e, &spec).unwrap();
        assert!(r.audit.passed());
        assert_eq!(r.fraction_converged, 1.0);
        for p in &r.paths {
            assert_eq!(p.final_norm, 0.0);
            assert_eq!(p.trace.len(), 11);
        }
    }

    #[test]
    fn exit_tracker_examples() {
        let t = Trajectory {
            x0: vec![0.0],
            final_state: vec![0.0],
            steps_completed: 9,
            dt: 0.1,
            states: None,
            norm_sq: Some(vec![0.0; 10]),
            z: None,
            blowup: None,
            max_finite_norm: 0.0,
            lasalle: None,
            fbem: None,
            solver_iterations: 0,
            audited_steps: 0,
        };
        assert_eq!(exit_time_tracker(&t, 1.0).unwrap(), None);
        let mut states = vec![0.5; 10];
        states[7] = 3.0;
        states[9] = -4.0;
        let t = Trajectory {
            states: Some(states),
            norm_sq: None,
            ..t
        };
        assert_eq!(exit_time_tracker(&t, 2.0).unwrap(), Some(7));
        assert!(exit_time_tracker(&t, 0.0).is_err());
    }

    #[test]
    fn exit_frequency_below_bound() {
        let r = exit_frequency_study(
            &cubic(),
            &SchemeConfig::theta_em(1.0, 2f64.powi(-6)),
            1.0,
            500,
            &[1.0],
            2,
            50.0,
        )
        .unwrap();
        assert_eq!(r.exits, 0);
        assert!(r.pass());
    }
}
