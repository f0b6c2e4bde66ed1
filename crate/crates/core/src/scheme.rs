//! Time-stepping kernels (explicit EM, θ-EM, split-drift θ-EM) and the
//! whole-path driver with its observables.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{MonotoneProfile, SdeModel, VectorField};
use crate::noise::BrownianGrid;
use crate::solver::{residual_norm, solve_implicit, SolverConfig};

/// A state is blown up once any component is non-finite or its norm exceeds this.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Numerical zero floor for the sign of LaSalle terms.
pub const LASALLE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    ExplicitEm,
    ThetaEm,
    SplitThetaEm,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::ExplicitEm => "explicit_em",
            SchemeKind::ThetaEm => "theta_em",
            SchemeKind::SplitThetaEm => "split_theta_em",
        }
    }

    pub fn is_implicit(self) -> bool {
        self != SchemeKind::ExplicitEm
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit_em" => Ok(SchemeKind::ExplicitEm),
            "theta_em" => Ok(SchemeKind::ThetaEm),
            "split_theta_em" => Ok(SchemeKind::SplitThetaEm),
            other => Err(Error::Config(format!(
                "unknown scheme '{other}' (explicit_em, theta_em, split_theta_em)"
            ))),
        }
    }
}

/// Formats a positive real compactly: up to six decimals, trailing zeros dropped.
pub(crate) fn compact(v: f64) -> String {
    if v.is_infinite() {
        return "∞".into();
    }
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "0" || s == "-0" {
        format!("{v:e}")
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub theta: f64,
    pub dt: f64,
    pub solver: SolverConfig,
    pub kind: SchemeKind,
    /// Admit implicit runs with θ < 0.5.
    pub allow_low_theta: bool,
    /// Skip the Δt* guard (the solver's own θΔtL < 1 check still applies).
    pub allow_inadmissible_step: bool,
    /// Start each implicit solve from the explicit EM step instead of X_k.
    pub explicit_predictor: bool,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, theta: f64, dt: f64) -> Self {
        SchemeConfig {
            theta,
            dt,
            solver: SolverConfig::default(),
            kind,
            allow_low_theta: false,
            allow_inadmissible_step: false,
            explicit_predictor: false,
        }
    }

    pub fn theta_em(theta: f64, dt: f64) -> Self {
        SchemeConfig::new(SchemeKind::ThetaEm, theta, dt)
    }

    pub fn explicit_em(dt: f64) -> Self {
        SchemeConfig::new(SchemeKind::ExplicitEm, 0.0, dt)
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    /// Copy of this configuration at a different step size.
    pub fn at_step(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// Checks θ and Δt against the profile's admissible range. For the split
    /// scheme `split_lipschitz` (the implicit part's L) replaces L.
    pub fn validate(&self, profile: &MonotoneProfile, split_lipschitz: Option<f64>) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("θ must lie in [0, 1] (got {})", self.theta)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!(
                "Δt must be positive and finite (got {})",
                self.dt
            )));
        }
        self.solver.validate()?;
        if !self.kind.is_implicit() {
            return Ok(());
        }
        if self.theta < 0.5 && !self.allow_low_theta {
            return Err(Error::Admissibility(format!(
                "θ={} < 0.5 is outside the convergence regime; pass the low-θ override to run it",
                self.theta
            )));
        }
        if self.theta == 0.0 || self.allow_inadmissible_step {
            return Ok(());
        }
        let (l, label) = match self.kind {
            SchemeKind::SplitThetaEm => {
                let l1 = split_lipschitz
                    .ok_or_else(|| Error::Config("split_theta_em requires a model with a drift split".into()))?;
                (l1, "L₁")
            }
            _ => (profile.one_sided_lipschitz, "L"),
        };
        let rate = l.max(2.0 * profile.beta);
        let bound = if rate > 0.0 {
            1.0 / (self.theta * rate)
        } else {
            f64::INFINITY
        };
        if self.dt >= bound {
            return Err(Error::Admissibility(format!(
                "Δt={} ≥ 1/(θ·max{{{label},2β}})={} (θ={}, {label}={}, β={})",
                compact(self.dt),
                compact(bound),
                compact(self.theta),
                compact(l),
                compact(profile.beta)
            )));
        }
        Ok(())
    }
}

/// State carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub k: usize,
    pub x: Vec<f64>,
    /// FBEM companion X̂_k, when tracked.
    pub x_hat: Option<Vec<f64>>,
    /// f(X_0).
    pub f0_cache: Vec<f64>,
}

impl PathState {
    pub fn new(model: &SdeModel, x0: &[f64], track_fbem: bool) -> Result<Self> {
        if x0.len() != model.state_dim() {
            return Err(Error::Config(format!(
                "initial state has {} components, model has {}",
                x0.len(),
                model.state_dim()
            )));
        }
        Ok(PathState {
            k: 0,
            x: x0.to_vec(),
            x_hat: track_fbem.then(|| x0.to_vec()),
            f0_cache: model.try_drift(x0)?,
        })
    }
}

/// SplitMix64 finalizer.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476C_E5E4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Whether the driver re-checks the residual of step `step` (about 1 in 100).
pub fn audit_selected(seed: u64, path: u64, step: usize) -> bool {
    splitmix64(seed ^ path.rotate_left(32) ^ step as u64).is_multiple_of(100)
}

/// Evaluation scratch for one path.
struct Stepper<'a> {
    model: &'a SdeModel,
    cfg: &'a SchemeConfig,
    kind: SchemeKind,
    implicit: Option<&'a VectorField>,
    d: usize,
    /// Full drift at the current state.
    f: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    g: Vec<f64>,
    gdw: Vec<f64>,
    rhs: Vec<f64>,
    guess: Vec<f64>,
}

struct StepInfo {
    iterations: usize,
    audited: bool,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a SdeModel, cfg: &'a SchemeConfig, kind: SchemeKind) -> Result<Self> {
        let n = model.state_dim();
        let d = model.noise_dim();
        let implicit = match kind {
            SchemeKind::ExplicitEm => None,
            SchemeKind::ThetaEm => Some(model.drift_field()),
            SchemeKind::SplitThetaEm => Some(
                &model
                    .split()
                    .ok_or_else(|| Error::Config(format!("model '{}' has no drift split", model.label())))?
                    .implicit,
            ),
        };
        Ok(Stepper {
            model,
            cfg,
            kind,
            implicit,
            d,
            f: vec![0.0; n],
            f1: vec![0.0; n],
            f2: vec![0.0; n],
            g: vec![0.0; n * d],
            gdw: vec![0.0; n],
            rhs: vec![0.0; n],
            guess: vec![0.0; n],
        })
    }

    fn evaluate(&mut self, x: &[f64], dw: &[f64]) {
        match (self.kind, self.model.split()) {
            (SchemeKind::SplitThetaEm, Some(split)) => {
                split.implicit.eval_into(x, &mut self.f1);
                split.explicit.eval_into(x, &mut self.f2);
                for i in 0..x.len() {
                    self.f[i] = self.f1[i] + self.f2[i];
                }
            }
            _ => self.model.drift_field().eval_into(x, &mut self.f),
        }
        self.model.diffusion_field().eval_into(x, &mut self.g);
        let d = self.d;
        for i in 0..x.len() {
            let row = &self.g[i * d..(i + 1) * d];
            self.gdw[i] = row.iter().zip(dw).map(|(a, b)| a * b).sum();
        }
    }

    /// Advances `x` (step index `k`) to `next`. Leaves f(x), g(x) in scratch.
    fn advance(&mut self, k: usize, x: &[f64], dw: &[f64], next: &mut [f64], audit: bool) -> Result<StepInfo> {
        self.evaluate(x, dw);
        let dt = self.cfg.dt;
        let theta = self.cfg.theta;
        let n = x.len();
        match self.kind {
            SchemeKind::ExplicitEm => {
                for i in 0..n {
                    next[i] = x[i] + self.f[i] * dt + self.gdw[i];
                }
                return Ok(StepInfo {
                    iterations: 0,
                    audited: false,
                });
            }
            SchemeKind::ThetaEm => {
                for i in 0..n {
                    self.rhs[i] = x[i] + (1.0 - theta) * self.f[i] * dt + self.gdw[i];
                }
            }
            SchemeKind::SplitThetaEm => {
                for i in 0..n {
                    self.rhs[i] = x[i] + (1.0 - theta) * self.f1[i] * dt + self.f2[i] * dt + self.gdw[i];
                }
            }
        }
        if theta == 0.0 {
            next.copy_from_slice(&self.rhs);
            return Ok(StepInfo {
                iterations: 0,
                audited: false,
            });
        }
        let field = self.implicit.expect("implicit kinds carry a field");
        self.guess.copy_from_slice(x);
        if self.cfg.explicit_predictor {
            let predicted: Vec<f64> = (0..n).map(|i| x[i] + self.f[i] * dt + self.gdw[i]).collect();
            if predicted.iter().all(|v| v.is_finite()) && field.domain().contains(&predicted) {
                self.guess = predicted;
            }
        }
        let out =
            solve_implicit(field, theta, dt, &self.rhs, &self.cfg.solver, &self.guess).map_err(|e| e.at_step(k))?;
        next.copy_from_slice(&out.root);
        if audit {
            let residual = residual_norm(field, theta, dt, next, &self.rhs);
            let tolerance = self.cfg.solver.residual_target(&self.rhs);
            if !(residual <= tolerance) {
                return Err(Error::ResidualAudit {
                    step: k,
                    residual,
                    tolerance,
                });
            }
        }
        Ok(StepInfo {
            iterations: out.iterations,
            audited: audit,
        })
    }
}

fn step_with(
    kind: SchemeKind,
    state: &PathState,
    dw: &[f64],
    model: &SdeModel,
    cfg: &SchemeConfig,
) -> Result<PathState> {
    if dw.len() != model.noise_dim() || state.x.len() != model.state_dim() {
        return Err(Error::Config(
            "state or increment dimension does not match the model".into(),
        ));
    }
    let mut stepper = Stepper::new(model, cfg, kind)?;
    let mut next = vec![0.0; state.x.len()];
    stepper.advance(state.k, &state.x, dw, &mut next, false)?;
    let x_hat = state.x_hat.as_ref().map(|xh| {
        (0..xh.len())
            .map(|i| xh[i] + stepper.f[i] * cfg.dt + stepper.gdw[i])
            .collect()
    });
    Ok(PathState {
        k: state.k + 1,
        x: next,
        x_hat,
        f0_cache: state.f0_cache.clone(),
    })
}

/// `X' = X + f(X)Δt + g(X)Δw`.
pub fn explicit_em_step(state: &PathState, dw: &[f64], model: &SdeModel, cfg: &SchemeConfig) -> Result<PathState> {
    step_with(SchemeKind::ExplicitEm, state, dw, model, cfg)
}

/// `X' = F⁻¹(X + (1−θ)f(X)Δt + g(X)Δw)` with `F(x) = x − θf(x)Δt`; the FBEM
/// companion, when tracked, advances as `X̂' = X̂ + f(X)Δt + g(X)Δw`.
pub fn theta_em_step(state: &PathState, dw: &[f64], model: &SdeModel, cfg: &SchemeConfig) -> Result<PathState> {
    step_with(SchemeKind::ThetaEm, state, dw, model, cfg)
}

/// `X' = H⁻¹(X + (1−θ)f₁(X)Δt + f₂(X)Δt + g(X)Δw)` with `H(x) = x − θf₁(x)Δt`.
pub fn split_theta_em_step(state: &PathState, dw: &[f64], model: &SdeModel, cfg: &SchemeConfig) -> Result<PathState> {
    step_with(SchemeKind::SplitThetaEm, state, dw, model, cfg)
}

pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Observables recorded by [`run_path`].
#[derive(Clone, Default)]
pub struct Monitors {
    /// Every grid state.
    pub states: bool,
    /// `‖X_k‖²` at every grid point.
    pub norm_sq: bool,
    /// `z(X_k)` at every grid point.
    pub z: Option<StateFn>,
    /// Track LaSalle terms; the cumulative sum is sampled every `stride` steps.
    pub lasalle_stride: Option<usize>,
    /// Track the FBEM companion and its exact-difference defect.
    pub fbem: bool,
}

impl fmt::Debug for Monitors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Monitors")
            .field("states", &self.states)
            .field("norm_sq", &self.norm_sq)
            .field("z", &self.z.is_some())
            .field("lasalle_stride", &self.lasalle_stride)
            .field("fbem", &self.fbem)
            .finish()
    }
}

impl Monitors {
    pub fn none() -> Self {
        Monitors::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowUp {
    /// First grid index whose state is blown up.
    pub step: usize,
    pub norm: f64,
}

/// Running LaSalle decomposition
/// `A_k = −(2⟨X_k,f(X_k)⟩ + ‖g(X_k)‖² + (1−2θ)‖f(X_k)‖²Δt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaSalleTrace {
    pub min_term: f64,
    /// Every `A_k ≥ −LASALLE_FLOOR`, so `Σ A_k Δt` is nondecreasing.
    pub nondecreasing: bool,
    pub total: f64,
    /// `(k, Σ_{j<k} A_j Δt)` at sampled grid indices, always including the last.
    pub cumulative: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbemTrace {
    pub x_hat: Vec<f64>,
    /// `max_k ‖X̂_k − X_k − θ(f(X_0) − f(X_k))Δt‖ / (1 + ‖X_k‖)`.
    pub max_defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x0: Vec<f64>,
    /// Last finite state (the endpoint when no blow-up occurred).
    pub final_state: Vec<f64>,
    pub steps_completed: usize,
    pub dt: f64,
    /// Row-major `(steps_completed + 1) × n`.
    pub states: Option<Vec<f64>>,
    pub norm_sq: Option<Vec<f64>>,
    pub z: Option<Vec<f64>>,
    pub blowup: Option<BlowUp>,
    pub max_finite_norm: f64,
    pub lasalle: Option<LaSalleTrace>,
    pub fbem: Option<FbemTrace>,
    pub solver_iterations: u64,
    pub audited_steps: usize,
}

impl Trajectory {
    pub fn blew_up(&self) -> bool {
        self.blowup.is_some()
    }

    pub fn state(&self, k: usize) -> Option<&[f64]> {
        let n = self.x0.len();
        self.states.as_ref().and_then(|s| s.get(k * n..(k + 1) * n))
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Integrates `cfg.kind` over every step of `grid` from `x0`.
///
/// A blown-up state stops the path and is recorded, not raised. Solver
/// failures, residual-audit failures and domain exits are errors carrying the
/// step index.
pub fn run_path(
    model: &SdeModel,
    cfg: &SchemeConfig,
    grid: &BrownianGrid,
    x0: &[f64],
    monitors: &Monitors,
) -> Result<Trajectory> {
    let n = model.state_dim();
    let steps = grid.partition().steps();
    if steps > 0 && (grid.partition().dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::Config(format!(
            "grid step {} does not match the scheme step {}",
            grid.partition().dt(),
            cfg.dt
        )));
    }
    if grid.noise_dim() != model.noise_dim() {
        return Err(Error::Config(format!(
            "grid has {} noise components, model has {}",
            grid.noise_dim(),
            model.noise_dim()
        )));
    }
    if monitors.fbem && cfg.kind == SchemeKind::SplitThetaEm {
        return Err(Error::Config(
            "the FBEM companion is defined for theta_em paths only".into(),
        ));
    }
    let mut state = PathState::new(model, x0, monitors.fbem)?;
    let fbem_theta = if cfg.kind == SchemeKind::ExplicitEm {
        0.0
    } else {
        cfg.theta
    };
    let mut stepper = Stepper::new(model, cfg, cfg.kind)?;
    let mut next = vec![0.0; n];

    let mut states = monitors.states.then(|| {
        let mut v = Vec::with_capacity((steps + 1) * n);
        v.extend_from_slice(x0);
        v
    });
    let mut norms = monitors.norm_sq.then(|| {
        let mut v = Vec::with_capacity(steps + 1);
        v.push(norm_sq(x0));
        v
    });
    let mut zs = monitors.z.as_ref().map(|z| {
        let mut v = Vec::with_capacity(steps + 1);
        v.push(z(x0));
        v
    });
    let mut lasalle = monitors.lasalle_stride.map(|_| LaSalleTrace {
        min_term: f64::INFINITY,
        nondecreasing: true,
        total: 0.0,
        cumulative: vec![(0, 0.0)],
    });
    let stride = monitors.lasalle_stride.unwrap_or(1).max(1);
    let mut max_defect = 0.0f64;
    let mut max_finite_norm = norm_sq(x0).sqrt();
    let mut blowup = None;
    let mut iterations = 0u64;
    let mut audited = 0usize;
    let mut completed = 0usize;
    let dt = cfg.dt;

    let defect = |x_hat: &[f64], x: &[f64], f0: &[f64], fx: &[f64]| -> f64 {
        let num: f64 = (0..x.len())
            .map(|i| {
                let r = x_hat[i] - x[i] - fbem_theta * (f0[i] - fx[i]) * dt;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        num / (1.0 + norm_sq(x).sqrt())
    };

    for k in 0..steps {
        let audit = cfg.kind.is_implicit() && audit_selected(grid.seed(), grid.path(), k);
        let info = stepper.advance(k, &state.x, grid.increment(k), &mut next, audit)?;
        iterations += info.iterations as u64;
        audited += info.audited as usize;

        if let Some(trace) = lasalle.as_mut() {
            let inner: f64 = state.x.iter().zip(&stepper.f).map(|(a, b)| a * b).sum();
            let a = -(2.0 * inner + norm_sq(&stepper.g) + (1.0 - 2.0 * cfg.theta) * norm_sq(&stepper.f) * dt);
            trace.min_term = trace.min_term.min(a);
            if a < -LASALLE_FLOOR {
                trace.nondecreasing = false;
            }
            trace.total += a * dt;
        }
        if let Some(x_hat) = state.x_hat.as_mut() {
            max_defect = max_defect.max(defect(x_hat, &state.x, &state.f0_cache, &stepper.f));
            for i in 0..n {
                x_hat[i] += stepper.f[i] * dt + stepper.gdw[i];
            }
        }

        let nrm = norm_sq(&next).sqrt();
        if !nrm.is_finite() || nrm > BLOWUP_THRESHOLD {
            blowup = Some(BlowUp { step: k + 1, norm: nrm });
            break;
        }
        model.check_domain(&next).map_err(|e| e.at_step(k + 1))?;
        state.x.copy_from_slice(&next);
        state.k = k + 1;
        completed = k + 1;
        max_finite_norm = max_finite_norm.max(nrm);

        if let Some(trace) = lasalle.as_mut() {
            if completed.is_multiple_of(stride) || completed == steps {
                trace.cumulative.push((completed, trace.total));
            }
        }
        if let Some(s) = states.as_mut() {
            s.extend_from_slice(&state.x);
        }
        if let Some(v) = norms.as_mut() {
            v.push(nrm * nrm);
        }
        if let (Some(v), Some(z)) = (zs.as_mut(), monitors.z.as_ref()) {
            v.push(z(&state.x));
        }
    }

    let fbem = match state.x_hat.take() {
        Some(x_hat) => {
            if blowup.is_none() {
                let fx = model.drift(&state.x);
                max_defect = max_defect.max(defect(&x_hat, &state.x, &state.f0_cache, &fx));
            }
            Some(FbemTrace { x_hat, max_defect })
        }
        None => None,
    };
    if let Some(trace) = lasalle.as_mut() {
        if trace.min_term == f64::INFINITY {
            trace.min_term = 0.0;
        }
    }

    Ok(Trajectory {
        x0: x0.to_vec(),
        final_state: state.x,
        steps_completed: completed,
        dt,
        states,
        norm_sq: norms,
        z: zs,
        blowup,
        max_finite_norm,
        lasalle,
        fbem,
        solver_iterations: iterations,
        audited_steps: audited,
    })
}
