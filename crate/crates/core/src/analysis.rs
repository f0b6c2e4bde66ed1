//! Sampled audits of the growth conditions and the closed-form moment bounds.
//!
//! Audits evaluate `RHS − LHS` of a condition at every probe point and report
//! the worst margin. A pass means no counterexample was found among the
//! probes, nothing more.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{MonotoneProfile, ProfileOrigin, SdeModel, MIN_ONE_SIDED_LIPSCHITZ};
use crate::noise::NormalStream;
use crate::scheme::{compact, StateFn};

/// Stream index reserved for probe clouds, far from any path index.
const PROBE_STREAM: u64 = u64::MAX - 7;

/// Deterministic probe set: a per-axis grid on `[−radius, radius]ⁿ`, a seeded
/// uniform cloud on the same cube and, for scalar models, a wide sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    pub radius: f64,
    /// Grid points per axis; the grid is skipped when 0 or when n > 3.
    pub grid_per_axis: usize,
    pub cloud_points: usize,
    /// Scalar sweep on `[−r, r]` with `sweep_points` points.
    pub sweep_radius: Option<f64>,
    pub sweep_points: usize,
    /// Random pairs for pairwise conditions, on top of neighbouring probes.
    pub pair_count: usize,
    pub seed: u64,
}

impl ProbeSpec {
    /// 101-point grid on [−10,10]ⁿ for n ≤ 3, else a 10⁴-point cloud; a
    /// radius-100 sweep for n = 1.
    pub fn default_for(n: usize) -> Self {
        ProbeSpec {
            radius: 10.0,
            grid_per_axis: if n <= 3 { 101 } else { 0 },
            cloud_points: if n <= 3 { 1000 } else { 10_000 },
            sweep_radius: (n == 1).then_some(100.0),
            sweep_points: 2001,
            pair_count: 20_000,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Probe points, row-major, filtered to the model's domain.
    pub fn points(&self, model: &SdeModel) -> Vec<Vec<f64>> {
        let n = model.state_dim();
        let r = self.radius;
        let mut pts = Vec::new();
        if self.grid_per_axis >= 2 && n <= 3 {
            let m = self.grid_per_axis;
            let total = m.pow(n as u32);
            for idx in 0..total {
                let mut rem = idx;
                let p: Vec<f64> = (0..n)
                    .map(|_| {
                        let k = rem % m;
                        rem /= m;
                        -r + 2.0 * r * k as f64 / (m - 1) as f64
                    })
                    .collect();
                pts.push(p);
            }
        }
        let mut stream = NormalStream::new(self.seed, PROBE_STREAM);
        for _ in 0..self.cloud_points {
            pts.push((0..n).map(|_| r * (2.0 * stream.next_uniform() - 1.0)).collect());
        }
        if let (1, Some(w)) = (n, self.sweep_radius) {
            let m = self.sweep_points.max(2);
            for k in 0..m {
                pts.push(vec![-w + 2.0 * w * k as f64 / (m - 1) as f64]);
            }
        }
        let domain = model.domain();
        pts.retain(|p| domain.contains(p));
        pts
    }

    /// Index pairs: each probe with its successor, then seeded random pairs.
    fn pairs(&self, count: usize) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = (1..count).map(|i| (i - 1, i)).collect();
        if count >= 2 {
            let mut stream = NormalStream::new(self.seed ^ 0x5EED, PROBE_STREAM);
            for _ in 0..self.pair_count {
                let i = ((stream.next_uniform() * count as f64) as usize).min(count - 1);
                let j = ((stream.next_uniform() * count as f64) as usize).min(count - 1);
                out.push((i, j));
            }
        }
        out
    }

    /// Largest probe norm.
    pub fn reach(&self, model: &SdeModel) -> f64 {
        self.points(model).iter().map(|p| norm(p)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionId {
    Monotone,
    OneSidedLipschitz,
    PolyGrowth,
    SplitCon2,
    StabEm,
    Lemma33,
}

impl ConditionId {
    pub fn name(self) -> &'static str {
        match self {
            ConditionId::Monotone => "monotone",
            ConditionId::OneSidedLipschitz => "one_sided_lipschitz",
            ConditionId::PolyGrowth => "poly_growth",
            ConditionId::SplitCon2 => "split_con2",
            ConditionId::StabEm => "stab_em",
            ConditionId::Lemma33 => "lemma33",
        }
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConditionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ConditionId::Monotone,
            ConditionId::OneSidedLipschitz,
            ConditionId::PolyGrowth,
            ConditionId::SplitCon2,
            ConditionId::StabEm,
            ConditionId::Lemma33,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown condition '{s}'")))
    }
}

/// A condition to audit, with the scheme parameters it depends on.
#[derive(Clone)]
pub enum Condition {
    /// `⟨x,f⟩ + ½‖g‖² ≤ α + β‖x‖²`.
    Monotone,
    /// `⟨x−y, f(x)−f(y)⟩ ≤ L‖x−y‖²`.
    OneSidedLipschitz,
    /// `‖f‖ ∨ ‖g‖ ≤ C(1 + ‖x‖ʰ)`.
    PolyGrowth,
    /// `⟨x,f⟩ + ½‖g‖² + [(1−θ)⟨f₁,f₂⟩ + ½‖f₂‖² + ½(1−2θ)‖f₁‖²]Δt ≤ α + β‖x‖²`.
    SplitCon2 { theta: f64, dt: f64 },
    /// `⟨x,f⟩ + ½‖g‖² + ½(1−2θ)‖f‖²Δt ≤ −z(x)`.
    StabEm { theta: f64, dt: f64, z: StateFn },
    /// `‖x‖² ≤ (1−2βθΔt)⁻¹[‖F(x)‖² + 2θαΔt]`.
    Lemma33 { theta: f64, dt: f64 },
}

impl fmt::Debug for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

impl Condition {
    pub fn id(&self) -> ConditionId {
        match self {
            Condition::Monotone => ConditionId::Monotone,
            Condition::OneSidedLipschitz => ConditionId::OneSidedLipschitz,
            Condition::PolyGrowth => ConditionId::PolyGrowth,
            Condition::SplitCon2 { .. } => ConditionId::SplitCon2,
            Condition::StabEm { .. } => ConditionId::StabEm,
            Condition::Lemma33 { .. } => ConditionId::Lemma33,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionAudit {
    pub condition: ConditionId,
    /// Minimum of RHS − LHS over the probes.
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub probes: usize,
    pub radius: f64,
}

impl ConditionAudit {
    pub fn passed(&self) -> bool {
        self.worst_margin >= 0.0
    }

    pub fn verdict(&self) -> &'static str {
        if self.passed() {
            "pass"
        } else {
            "fail"
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `⟨x,f(x)⟩ + ½‖g(x)‖²_F`.
fn monotone_lhs(model: &SdeModel, x: &[f64]) -> f64 {
    let f = model.drift(x);
    let g = model.diffusion(x);
    dot(x, &f) + 0.5 * dot(&g, &g)
}

/// First minimum in probe order, so ties resolve deterministically.
fn worst(margins: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, m) in margins.iter().enumerate() {
        let m = if m.is_nan() { f64::NEG_INFINITY } else { *m };
        match best {
            None => best = Some(i),
            Some(b) => {
                let mb = if margins[b].is_nan() {
                    f64::NEG_INFINITY
                } else {
                    margins[b]
                };
                if m < mb {
                    best = Some(i);
                }
            }
        }
    }
    best
}

/// Evaluates `condition` at every probe and returns the worst margin.
pub fn audit_condition(
    model: &SdeModel,
    profile: &MonotoneProfile,
    condition: &Condition,
    probes: &ProbeSpec,
) -> Result<ConditionAudit> {
    let pts = probes.points(model);
    let (alpha, beta) = (profile.alpha, profile.beta);
    let (margins, points): (Vec<f64>, Vec<Vec<f64>>) = match condition {
        Condition::OneSidedLipschitz => {
            let l = profile.one_sided_lipschitz;
            let fs: Vec<Vec<f64>> = pts.par_iter().map(|p| model.drift(p)).collect();
            let pairs = probes.pairs(pts.len());
            let margins = pairs
                .par_iter()
                .map(|&(i, j)| {
                    let dx: Vec<f64> = pts[i].iter().zip(&pts[j]).map(|(a, b)| a - b).collect();
                    let df: Vec<f64> = fs[i].iter().zip(&fs[j]).map(|(a, b)| a - b).collect();
                    l * dot(&dx, &dx) - dot(&dx, &df)
                })
                .collect::<Vec<f64>>();
            let idx = worst(&margins);
            let worst_point = idx
                .map(|k| {
                    let (i, j) = pairs[k];
                    pts[i].iter().chain(&pts[j]).cloned().collect()
                })
                .unwrap_or_default();
            return Ok(ConditionAudit {
                condition: ConditionId::OneSidedLipschitz,
                worst_margin: idx.map_or(f64::INFINITY, |k| margins[k]),
                worst_point,
                probes: pairs.len(),
                radius: probes.reach(model),
            });
        }
        Condition::Monotone => {
            let m = pts
                .par_iter()
                .map(|x| alpha + beta * dot(x, x) - monotone_lhs(model, x))
                .collect();
            (m, pts)
        }
        Condition::PolyGrowth => {
            let (h, c) = (profile.poly_h, profile.poly_c);
            let m = pts
                .par_iter()
                .map(|x| {
                    let f = model.drift(x);
                    let g = model.diffusion(x);
                    c * (1.0 + norm(x).powf(h)) - norm(&f).max(norm(&g))
                })
                .collect();
            (m, pts)
        }
        Condition::SplitCon2 { theta, dt } => {
            let split = model
                .split()
                .ok_or_else(|| Error::Config(format!("model '{}' has no drift split", model.label())))?;
            let (theta, dt) = (*theta, *dt);
            let m = pts
                .par_iter()
                .map(|x| {
                    let f1 = split.implicit.eval(x);
                    let f2 = split.explicit.eval(x);
                    let extra = ((1.0 - theta) * dot(&f1, &f2)
                        + 0.5 * dot(&f2, &f2)
                        + 0.5 * (1.0 - 2.0 * theta) * dot(&f1, &f1))
                        * dt;
                    alpha + beta * dot(x, x) - (monotone_lhs(model, x) + extra)
                })
                .collect();
            (m, pts)
        }
        Condition::StabEm { theta, dt, z } => {
            let (theta, dt) = (*theta, *dt);
            let m = pts
                .par_iter()
                .map(|x| {
                    let f = model.drift(x);
                    let lhs = monotone_lhs(model, x) + 0.5 * (1.0 - 2.0 * theta) * dot(&f, &f) * dt;
                    -z(x) - lhs
                })
                .collect();
            (m, pts)
        }
        Condition::Lemma33 { theta, dt } => {
            let (theta, dt) = (*theta, *dt);
            bound_lemma33(profile, theta, dt, 0.0)?;
            let m = pts
                .par_iter()
                .map(|x| {
                    let f = model.drift(x);
                    let fx: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - theta * b * dt).collect();
                    let bound = bound_lemma33(profile, theta, dt, dot(&fx, &fx)).unwrap_or(f64::NAN);
                    bound - dot(x, x)
                })
                .collect();
            (m, pts)
        }
    };
    let idx = worst(&margins);
    Ok(ConditionAudit {
        condition: condition.id(),
        worst_margin: idx.map_or(f64::INFINITY, |k| margins[k]),
        worst_point: idx.map(|k| points[k].clone()).unwrap_or_default(),
        probes: margins.len(),
        radius: points.iter().map(|p| norm(p)).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundId {
    Thm22Moment,
    Thm22ExitProb,
    Lemma33,
    Thm37Moment,
}

impl BoundId {
    pub fn name(self) -> &'static str {
        match self {
            BoundId::Thm22Moment => "thm22_moment",
            BoundId::Thm22ExitProb => "thm22_exit_prob",
            BoundId::Lemma33 => "lemma33",
            BoundId::Thm37Moment => "thm37_moment",
        }
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub bound: BoundId,
    pub value: f64,
    pub inputs: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thm22Bounds {
    /// `(‖x₀‖² + 2αT)·e^{2βT}`.
    pub moment: BoundReport,
    /// `moment / m²`, when a radius is given.
    pub exit_prob: Option<BoundReport>,
}

/// Exact-solution second moment and exit-probability bounds. A negative β is
/// replaced by 0, which keeps the monotone inequality valid.
pub fn bound_thm22(profile: &MonotoneProfile, x0: &[f64], t_end: f64, m: Option<f64>) -> Result<Thm22Bounds> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::Config(format!("T must be positive (got {t_end})")));
    }
    let beta = profile.beta.max(0.0);
    let x0_sq = dot(x0, x0);
    let value = (x0_sq + 2.0 * profile.alpha * t_end) * (2.0 * beta * t_end).exp();
    let inputs = vec![
        ("x0_norm_sq", x0_sq),
        ("alpha", profile.alpha),
        ("beta", beta),
        ("T", t_end),
    ];
    let exit_prob = match m {
        Some(m) if m > 0.0 => {
            let mut inputs = inputs.clone();
            inputs.push(("m", m));
            Some(BoundReport {
                bound: BoundId::Thm22ExitProb,
                value: value / (m * m),
                inputs,
            })
        }
        Some(m) => return Err(Error::Config(format!("exit radius must be positive (got {m})"))),
        None => None,
    };
    Ok(Thm22Bounds {
        moment: BoundReport {
            bound: BoundId::Thm22Moment,
            value,
            inputs,
        },
        exit_prob,
    })
}

/// `(1 − 2βθΔt)⁻¹[‖F(x)‖² + 2θαΔt]`.
pub fn bound_lemma33(profile: &MonotoneProfile, theta: f64, dt: f64, f_norm_sq: f64) -> Result<f64> {
    let k = 2.0 * profile.beta * theta * dt;
    if !(k < 1.0) {
        return Err(Error::Admissibility(format!(
            "2βθΔt = 2·{}·{}·{} = {} must be < 1",
            compact(profile.beta),
            compact(theta),
            compact(dt),
            compact(k)
        )));
    }
    Ok((f_norm_sq + 2.0 * theta * profile.alpha * dt) / (1.0 - k))
}

/// Bound on `sup_{t_k ≤ T} E‖X_{t_k}‖²` for the θ-EM scheme.
///
/// With G = (1 − 2βθΔt)⁻¹ the Gronwall bound on the F-transformed iterates is
/// `B_F = [‖F(x₀)‖² + (2α + 2βG·2θαΔt)(T+Δt)]·exp(2βG(T+Δt))`, and the
/// `‖x‖² ≤ G[‖F(x)‖² + 2θαΔt]` conversion gives `G(B_F + 2θαΔt)`. β is
/// clamped at 0.
pub fn bound_thm37(
    model: &SdeModel,
    profile: &MonotoneProfile,
    theta: f64,
    dt: f64,
    t_end: f64,
    x0: &[f64],
) -> Result<BoundReport> {
    if !(t_end > 0.0) || !(dt > 0.0) {
        return Err(Error::Config(format!(
            "T and Δt must be positive (got T={t_end}, Δt={dt})"
        )));
    }
    let max_step = profile.max_step(theta);
    if !(dt < max_step) {
        return Err(Error::Admissibility(format!(
            "Δt={} ≥ 1/(θ·max{{L,2β}})={}",
            compact(dt),
            compact(max_step)
        )));
    }
    let alpha = profile.alpha;
    let beta = profile.beta.max(0.0);
    let g = 1.0 / (1.0 - 2.0 * beta * theta * dt);
    let f0 = model.try_drift(x0)?;
    let fx0: Vec<f64> = x0.iter().zip(&f0).map(|(x, f)| x - theta * f * dt).collect();
    let f_sq = dot(&fx0, &fx0);
    let horizon = t_end + dt;
    let b_f =
        (f_sq + (2.0 * alpha + 2.0 * beta * g * 2.0 * theta * alpha * dt) * horizon) * (2.0 * beta * g * horizon).exp();
    let value = g * (b_f + 2.0 * theta * alpha * dt);
    Ok(BoundReport {
        bound: BoundId::Thm37Moment,
        value,
        inputs: vec![
            ("x0_norm_sq", dot(x0, x0)),
            ("alpha", alpha),
            ("beta", beta),
            ("theta", theta),
            ("dt", dt),
            ("T", t_end),
        ],
    })
}

/// Minimizes a convex function on `[lo, hi]` by golden-section search.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
        if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn inflate(v: f64) -> f64 {
    v + 0.1 * v.abs()
}

/// Fits growth constants over the probes, each inflated by 10%.
///
/// (α, β) minimizes α(β) + β with α(β) = max(0, max_x[q(x) − β‖x‖²]) and
/// q(x) = ⟨x,f⟩ + ½‖g‖²; L is the largest pairwise quotient; h is the
/// log-log slope of the upper envelope of ‖f‖ ∨ ‖g‖ against ‖x‖ (not
/// inflated, at least 1); C is the smallest constant for that h.
pub fn estimate_profile(model: &SdeModel, probes: &ProbeSpec) -> MonotoneProfile {
    let pts = probes.points(model);
    let q: Vec<(f64, f64)> = pts.par_iter().map(|x| (monotone_lhs(model, x), dot(x, x))).collect();

    let alpha_of = |beta: f64| q.iter().map(|&(v, r2)| v - beta * r2).fold(0.0, f64::max);
    let span = q
        .iter()
        .filter(|&&(_, r2)| r2 >= 1.0)
        .map(|&(v, r2)| (v / r2).abs())
        .fold(1.0, f64::max);
    let beta = golden_min(|b| alpha_of(b) + b, -2.0 * span, 2.0 * span);
    let alpha = alpha_of(beta);

    let fs: Vec<Vec<f64>> = pts.par_iter().map(|p| model.drift(p)).collect();
    let lipschitz = probes
        .pairs(pts.len())
        .iter()
        .filter_map(|&(i, j)| {
            let dx: Vec<f64> = pts[i].iter().zip(&pts[j]).map(|(a, b)| a - b).collect();
            let d2 = dot(&dx, &dx);
            (d2 > 0.0).then(|| {
                let df: Vec<f64> = fs[i].iter().zip(&fs[j]).map(|(a, b)| a - b).collect();
                dot(&dx, &df) / d2
            })
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let growth: Vec<(f64, f64)> = pts
        .par_iter()
        .zip(&fs)
        .map(|(x, f)| (norm(x), norm(f).max(norm(&model.diffusion(x)))))
        .collect();
    let poly_h = envelope_slope(&growth).max(1.0);
    let poly_c = growth
        .iter()
        .map(|&(r, v)| v / (1.0 + r.powf(poly_h)))
        .fold(0.0, f64::max);

    MonotoneProfile {
        alpha: inflate(alpha),
        beta: inflate(beta),
        one_sided_lipschitz: inflate(lipschitz).max(MIN_ONE_SIDED_LIPSCHITZ),
        poly_h,
        poly_c: inflate(poly_c).max(f64::MIN_POSITIVE),
        origin: ProfileOrigin::Empirical,
    }
}

/// Least-squares slope of ln(max value per log-radius bin) against ln(radius),
/// over radii ≥ 1.
fn envelope_slope(samples: &[(f64, f64)]) -> f64 {
    let r_max = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    if r_max <= 1.0 {
        return 1.0;
    }
    const BINS: usize = 24;
    let width = r_max.ln() / BINS as f64;
    let mut env = [0.0f64; BINS];
    let mut rad = [0.0f64; BINS];
    for &(r, v) in samples {
        if r < 1.0 || !(v > 0.0) || !v.is_finite() {
            continue;
        }
        let b = ((r.ln() / width) as usize).min(BINS - 1);
        if v > env[b] {
            env[b] = v;
            rad[b] = r;
        }
    }
    let pts: Vec<(f64, f64)> = (0..BINS)
        .filter(|&b| env[b] > 0.0 && rad[b] > 1.0)
        .map(|b| (rad[b].ln(), env[b].ln()))
        .collect();
    crate::stats::least_squares(&pts).map_or(1.0, |fit| fit.slope)
}
