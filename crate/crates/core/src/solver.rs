//! Per-step nonlinear solves `F(x) = b` with `F(x) = x − θΔt·f(x)`.
//!
//! Under a one-sided Lipschitz bound L on f and θΔtL < 1, F is strictly
//! monotone and the root is unique. Newton is the default; when it fails the
//! solver falls back to a bracketing hybrid (scalar) or a damped Newton with
//! backtracking (vector). A returned root always meets
//! `‖F(x) − b‖ ≤ tolerance·(1 + ‖b‖)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Domain, VectorField};

/// Iteration budget floor for the fallback solvers; bisection down to
/// adjacent floats needs more steps than Newton.
const FALLBACK_MIN_ITERATIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Newton,
    FixedPoint,
    ScalarHybrid,
    ClosedFormCubic,
}

impl SolverMethod {
    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::Newton => "newton",
            SolverMethod::FixedPoint => "fixed_point",
            SolverMethod::ScalarHybrid => "scalar_hybrid",
            SolverMethod::ClosedFormCubic => "closed_form_cubic",
        }
    }
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(SolverMethod::Newton),
            "fixed_point" => Ok(SolverMethod::FixedPoint),
            "scalar_hybrid" => Ok(SolverMethod::ScalarHybrid),
            "closed_form_cubic" => Ok(SolverMethod::ClosedFormCubic),
            other => Err(Error::Config(format!(
                "unknown solver method '{other}' (newton, fixed_point, scalar_hybrid, closed_form_cubic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative residual target: success when `‖F(x) − b‖ ≤ tolerance·(1 + ‖b‖)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub method: SolverMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-12,
            max_iterations: 50,
            method: SolverMethod::Newton,
        }
    }
}

impl SolverConfig {
    pub fn with_method(method: SolverMethod) -> Self {
        SolverConfig {
            method,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 1e-14) || !self.tolerance.is_finite() {
            return Err(Error::Config(format!(
                "solver tolerance must be >= 1e-14 (got {})",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 || self.max_iterations > 10_000 {
            return Err(Error::Config(format!(
                "solver max_iterations must be in 1..=10000 (got {})",
                self.max_iterations
            )));
        }
        Ok(())
    }

    /// Absolute residual target for right-hand side `b`.
    pub fn residual_target(&self, b: &[f64]) -> f64 {
        self.tolerance * (1.0 + norm(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub root: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖x − θΔt·f(x) − b‖`, evaluated directly from the field.
pub fn residual_norm(field: &VectorField, theta: f64, dt: f64, x: &[f64], b: &[f64]) -> f64 {
    let fx = field.eval(x);
    let h = theta * dt;
    x.iter()
        .zip(&fx)
        .zip(b)
        .map(|((xi, fi), bi)| {
            let r = xi - h * fi - bi;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// The map `x ↦ x − h·f(x) − b` with scratch space.
struct Implicit<'a> {
    field: &'a VectorField,
    h: f64,
    b: &'a [f64],
    fx: Vec<f64>,
}

impl<'a> Implicit<'a> {
    fn new(field: &'a VectorField, h: f64, b: &'a [f64]) -> Self {
        Implicit {
            field,
            h,
            b,
            fx: vec![0.0; b.len()],
        }
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        self.field.domain().contains(x)
    }

    fn residual(&mut self, x: &[f64], out: &mut [f64]) {
        self.field.eval_into(x, &mut self.fx);
        for i in 0..x.len() {
            out[i] = x[i] - self.h * self.fx[i] - self.b[i];
        }
    }

    fn scalar_residual(&mut self, x: f64) -> f64 {
        self.field.eval_into(&[x], &mut self.fx);
        x - self.h * self.fx[0] - self.b[0]
    }

    /// Derivative of the scalar residual: analytic when available, else a
    /// forward difference with step 1e-7·(1+|x|).
    fn scalar_slope(&mut self, x: f64, r: f64) -> f64 {
        let mut j = [0.0];
        if self.field.jacobian_into(&[x], &mut j) {
            1.0 - self.h * j[0]
        } else {
            let s = 1e-7 * (1.0 + x.abs());
            (self.scalar_residual(x + s) - r) / s
        }
    }

    /// Jacobian of the residual, `I − h·J_f`.
    fn jacobian(&mut self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut jf = vec![0.0; n * n];
        if !self.field.jacobian_into(x, &mut jf) {
            let mut xp = x.to_vec();
            let mut fp = vec![0.0; n];
            let mut f0 = vec![0.0; n];
            self.field.eval_into(x, &mut f0);
            for j in 0..n {
                let s = 1e-7 * (1.0 + x[j].abs());
                xp[j] = x[j] + s;
                self.field.eval_into(&xp, &mut fp);
                xp[j] = x[j];
                for i in 0..n {
                    jf[i * n + j] = (fp[i] - f0[i]) / s;
                }
            }
        }
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - self.h * jf[i * n + j])
    }
}

fn failure(iterations: usize, best_residual: f64, tolerance: f64) -> Error {
    Error::SolverFailure {
        iterations,
        best_residual,
        tolerance,
    }
}

/// Solves `x − θΔt·f(x) = b` for x.
pub fn solve_implicit(
    field: &VectorField,
    theta: f64,
    dt: f64,
    b: &[f64],
    config: &SolverConfig,
    guess: &[f64],
) -> Result<SolveOutcome> {
    config.validate()?;
    let n = field.dim();
    if b.len() != n || guess.len() != n {
        return Err(Error::Config(format!(
            "solver dimension mismatch: field {n}, rhs {}, guess {}",
            b.len(),
            guess.len()
        )));
    }
    if guess.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("solver inputs must be finite".into()));
    }
    let h = theta * dt;
    if h == 0.0 {
        return Ok(SolveOutcome {
            root: b.to_vec(),
            residual_norm: 0.0,
            iterations: 0,
        });
    }
    if let Some(l) = field.one_sided_lipschitz() {
        if h * l >= 1.0 {
            return Err(Error::Admissibility(format!(
                "θ·Δt·L = {theta}·{dt}·{l} = {:.6} must be < 1 for a unique implicit step",
                h * l
            )));
        }
    }
    let tol = config.residual_target(b);
    let guess = if field.domain().contains(guess) {
        guess.to_vec()
    } else if field.domain().contains(b) {
        b.to_vec()
    } else {
        vec![1.0; n]
    };
    let fallback_budget = config.max_iterations.max(FALLBACK_MIN_ITERATIONS);
    match config.method {
        SolverMethod::ClosedFormCubic => closed_form(field, h, b, tol, config.max_iterations),
        SolverMethod::ScalarHybrid => {
            if n != 1 {
                return Err(Error::Config("scalar_hybrid requires a scalar state".into()));
            }
            scalar_hybrid(field, h, b, tol, guess[0], fallback_budget)
        }
        SolverMethod::FixedPoint => fixed_point(field, h, b, tol, &guess, config.max_iterations),
        SolverMethod::Newton => {
            let first = if n == 1 {
                scalar_newton(field, h, b, tol, guess[0], config.max_iterations)
            } else {
                vector_newton(field, h, b, tol, &guess, config.max_iterations, false)
            };
            match first {
                Ok(out) => Ok(out),
                Err(Error::SolverFailure { iterations, .. }) => {
                    let rest = if n == 1 {
                        scalar_hybrid(field, h, b, tol, guess[0], fallback_budget)
                    } else {
                        vector_newton(field, h, b, tol, &guess, fallback_budget, true)
                    };
                    rest.map(|mut out| {
                        out.iterations += iterations;
                        out
                    })
                }
                Err(e) => Err(e),
            }
        }
    }
}

fn scalar_newton(
    field: &VectorField,
    h: f64,
    b: &[f64],
    tol: f64,
    guess: f64,
    max_iter: usize,
) -> Result<SolveOutcome> {
    let mut sys = Implicit::new(field, h, b);
    let mut x = guess;
    let mut best = f64::INFINITY;
    for it in 0..=max_iter {
        let r = sys.scalar_residual(x);
        if !r.is_finite() {
            break;
        }
        best = best.min(r.abs());
        if r.abs() <= tol {
            return Ok(SolveOutcome {
                root: vec![x],
                residual_norm: r.abs(),
                iterations: it,
            });
        }
        if it == max_iter {
            break;
        }
        let d = sys.scalar_slope(x, r);
        if !(d > 0.0) || !d.is_finite() {
            break;
        }
        let next = x - r / d;
        if !next.is_finite() || !sys.in_domain(&[next]) || next == x {
            break;
        }
        x = next;
    }
    Err(failure(max_iter, best, tol))
}

/// Safeguarded Newton inside an expanding bracket.
fn scalar_hybrid(
    field: &VectorField,
    h: f64,
    b: &[f64],
    tol: f64,
    guess: f64,
    max_iter: usize,
) -> Result<SolveOutcome> {
    let positive = field.domain() == Domain::PositiveOrthant;
    let mut sys = Implicit::new(field, h, b);
    let mut iterations = 0usize;
    let done = |x: f64, r: f64, it: usize| SolveOutcome {
        root: vec![x],
        residual_norm: r.abs(),
        iterations: it,
    };

    let r0 = sys.scalar_residual(guess);
    if !r0.is_finite() {
        return Err(failure(0, f64::INFINITY, tol));
    }
    if r0.abs() <= tol {
        return Ok(done(guess, r0, 0));
    }
    let (mut lo, mut hi, mut r_lo, mut r_hi);
    if r0 < 0.0 {
        lo = guess;
        r_lo = r0;
        let mut step = guess.abs().max(1.0);
        loop {
            iterations += 1;
            hi = guess + step;
            r_hi = sys.scalar_residual(hi);
            if r_hi >= 0.0 {
                break;
            }
            if !r_hi.is_finite() || iterations >= max_iter {
                return Err(failure(iterations, r0.abs(), tol));
            }
            lo = hi;
            r_lo = r_hi;
            step *= 2.0;
        }
    } else {
        hi = guess;
        r_hi = r0;
        let mut step = guess.abs().max(1.0);
        loop {
            iterations += 1;
            lo = if positive { hi * 0.5 } else { guess - step };
            r_lo = sys.scalar_residual(lo);
            if r_lo <= 0.0 {
                break;
            }
            if !r_lo.is_finite() || iterations >= max_iter {
                return Err(failure(iterations, r0.abs(), tol));
            }
            hi = lo;
            r_hi = r_lo;
            step *= 2.0;
        }
    }
    if r_lo.abs() <= tol {
        return Ok(done(lo, r_lo, iterations));
    }
    if r_hi.abs() <= tol {
        return Ok(done(hi, r_hi, iterations));
    }

    let mut x = if r_lo.abs() < r_hi.abs() { lo } else { hi };
    let mut r = if x == lo { r_lo } else { r_hi };
    let mut best = (r.abs(), x);
    while iterations < max_iter {
        iterations += 1;
        let d = sys.scalar_slope(x, r);
        let newton = x - r / d;
        let next = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            lo + 0.5 * (hi - lo)
        };
        if next <= lo || next >= hi {
            break;
        }
        x = next;
        r = sys.scalar_residual(x);
        if r.abs() < best.0 {
            best = (r.abs(), x);
        }
        if r.abs() <= tol {
            return Ok(done(x, r, iterations));
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    if best.0 <= tol {
        Ok(done(best.1, best.0, iterations))
    } else {
        Err(failure(iterations, best.0, tol))
    }
}

fn vector_newton(
    field: &VectorField,
    h: f64,
    b: &[f64],
    tol: f64,
    guess: &[f64],
    max_iter: usize,
    damped: bool,
) -> Result<SolveOutcome> {
    let n = b.len();
    let mut sys = Implicit::new(field, h, b);
    let mut x = guess.to_vec();
    let mut r = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; n];
    sys.residual(&x, &mut r);
    let mut rn = norm(&r);
    let mut best = rn;
    for it in 0..=max_iter {
        if !rn.is_finite() {
            break;
        }
        best = best.min(rn);
        if rn <= tol {
            return Ok(SolveOutcome {
                root: x,
                residual_norm: rn,
                iterations: it,
            });
        }
        if it == max_iter {
            break;
        }
        let jac = sys.jacobian(&x);
        let rhs = DVector::from_column_slice(&r);
        let Some(delta) = jac.lu().solve(&rhs) else {
            break;
        };
        let mut lambda = 1.0;
        loop {
            for i in 0..n {
                trial[i] = x[i] - lambda * delta[i];
            }
            let ok = sys.in_domain(&trial);
            if ok {
                sys.residual(&trial, &mut r_trial);
            }
            let tn = if ok { norm(&r_trial) } else { f64::INFINITY };
            if !damped || (tn.is_finite() && tn <= (1.0 - 1e-4 * lambda) * rn) {
                if !ok {
                    return Err(failure(it, best, tol));
                }
                x.copy_from_slice(&trial);
                r.copy_from_slice(&r_trial);
                rn = tn;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-10 {
                return Err(failure(it, best, tol));
            }
        }
    }
    Err(failure(max_iter, best, tol))
}

fn fixed_point(
    field: &VectorField,
    h: f64,
    b: &[f64],
    tol: f64,
    guess: &[f64],
    max_iter: usize,
) -> Result<SolveOutcome> {
    let n = b.len();
    let mut x = guess.to_vec();
    let mut fx = vec![0.0; n];
    let mut best = f64::INFINITY;
    for it in 0..=max_iter {
        field.eval_into(&x, &mut fx);
        let rn = (0..n)
            .map(|i| {
                let r = x[i] - h * fx[i] - b[i];
                r * r
            })
            .sum::<f64>()
            .sqrt();
        if !rn.is_finite() {
            break;
        }
        best = best.min(rn);
        if rn <= tol {
            return Ok(SolveOutcome {
                root: x,
                residual_norm: rn,
                iterations: it,
            });
        }
        for i in 0..n {
            x[i] = b[i] + h * fx[i];
        }
        if !field.domain().contains(&x) {
            break;
        }
    }
    Err(failure(max_iter, best, tol))
}

fn closed_form(field: &VectorField, h: f64, b: &[f64], tol: f64, max_iter: usize) -> Result<SolveOutcome> {
    let Some(form) = field.cubic_form() else {
        return Err(Error::Config(
            "closed_form_cubic requires a drift of the form c0 + c1·x − c3·x³".into(),
        ));
    };
    if b.len() != 1 {
        return Err(Error::Config("closed_form_cubic requires a scalar state".into()));
    }
    // x − h(c0 + c1x − c3x³) = b  ⇔  (h·c3/s)x³ + x = (b + h·c0)/s,  s = 1 − h·c1.
    let s = 1.0 - h * form.linear;
    if !(s > 0.0) {
        return Err(Error::Admissibility(format!("1 − θΔt·c1 = {s} must be positive")));
    }
    let rhs = (b[0] + h * form.constant) / s;
    let mut x = if form.cubic == 0.0 {
        rhs
    } else {
        solve_cubic_closed_form(h * form.cubic / s, rhs)?
    };
    let mut sys = Implicit::new(field, h, b);
    let mut r = sys.scalar_residual(x);
    let mut polish = 0;
    while r.abs() > tol && polish < 3.min(max_iter) {
        let d = sys.scalar_slope(x, r);
        x -= r / d;
        r = sys.scalar_residual(x);
        polish += 1;
    }
    if r.abs() <= tol {
        Ok(SolveOutcome {
            root: vec![x],
            residual_norm: r.abs(),
            iterations: polish,
        })
    } else {
        Err(failure(polish, r.abs(), tol))
    }
}

/// Real root of `a·x³ + x − b = 0` for `a > 0`.
///
/// Cardano on the depressed cubic `x³ + px + q = 0` (p = 1/a, q = −b/a) has
/// one real root since p > 0. Writing t = ∛(|q|/2 + √(q²/4 + (p/3)³)) and
/// s = p/3, the root is `sign(b)·(t − s/t)`, which cancels badly for small
/// |b|. Using `t³ − s³/t³ = |q|` it equals `sign(b)·|q| / (t² + s + s²/t²)`,
/// free of cancellation.
pub fn solve_cubic_closed_form(a_coef: f64, b_rhs: f64) -> Result<f64> {
    if !(a_coef > 0.0) || !a_coef.is_finite() {
        return Err(Error::Config(format!(
            "cubic coefficient must be positive (got {a_coef})"
        )));
    }
    if !b_rhs.is_finite() {
        return Err(Error::Config(format!(
            "cubic right-hand side must be finite (got {b_rhs})"
        )));
    }
    if b_rhs == 0.0 {
        return Ok(0.0);
    }
    let mag = b_rhs.abs();
    let s = 1.0 / (3.0 * a_coef);
    let half_q = mag / (2.0 * a_coef);
    let disc = half_q * half_q + s * s * s;
    let root = if disc.is_finite() {
        let t = (half_q + disc.sqrt()).cbrt();
        2.0 * half_q / (t * t + s + s * s / (t * t))
    } else {
        f64::NAN
    };
    let root = if root.is_finite() {
        root
    } else {
        // Extreme scaling: Newton from the better of the two asymptotes.
        let mut x = mag.min((mag / a_coef).cbrt());
        for _ in 0..200 {
            let step = (a_coef * x * x * x + x - mag) / (3.0 * a_coef * x * x + 1.0);
            x -= step;
            if step.abs() <= f64::EPSILON * x.abs() {
                break;
            }
        }
        x
    };
    Ok(root.copysign(b_rhs))
}
