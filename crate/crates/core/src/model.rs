//! SDE problem definition `dx = f(x) dt + g(x) dw` and the catalog of
//! concrete models with their growth constants.
//!
//! Coefficients are stored as shareable closures writing into caller-owned
//! buffers, so stepping a path does not allocate per coefficient call.
//! Every catalog constructor derives a [`MonotoneProfile`] analytically
//! where it can; the derivation is spelled out next to each constructor.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smallest one-sided Lipschitz constant recorded for drifts that are
/// nonincreasing. The constant must be positive; any positive value is valid.
pub const MIN_ONE_SIDED_LIPSCHITZ: f64 = 1e-9;

/// `out = field(x)`; the output length is fixed by the owning field.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Where the coefficients are defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Whole,
    /// Every component strictly positive.
    PositiveOrthant,
}

impl Domain {
    pub fn contains(self, x: &[f64]) -> bool {
        match self {
            Domain::Whole => x.iter().all(|v| v.is_finite()),
            Domain::PositiveOrthant => x.iter().all(|&v| v > 0.0 && v.is_finite()),
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Domain::Whole => "all of R^n",
            Domain::PositiveOrthant => "x > 0",
        }
    }
}

/// Scalar drift of the form `constant + linear·x − cubic·x³`.
///
/// Implicit steps on such drifts reduce to a monotone cubic with a radical
/// solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicForm {
    pub constant: f64,
    pub linear: f64,
    pub cubic: f64,
}

impl CubicForm {
    pub fn eval(&self, x: f64) -> f64 {
        self.constant + self.linear * x - self.cubic * x * x * x
    }
}

/// A map ℝⁿ → ℝⁿ with optional analytic Jacobian and structural hints used
/// by the implicit solver.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    eval: FieldFn,
    jacobian: Option<FieldFn>,
    cubic: Option<CubicForm>,
    one_sided_lipschitz: Option<f64>,
    domain: Domain,
}

impl VectorField {
    pub fn new(dim: usize, eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        VectorField {
            dim,
            eval: Arc::new(eval),
            jacobian: None,
            cubic: None,
            one_sided_lipschitz: None,
            domain: Domain::Whole,
        }
    }

    pub fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        VectorField::new(1, move |x, out| out[0] = f(x[0]))
    }

    /// Scalar field backed by a [`CubicForm`], with its exact derivative.
    pub fn cubic(form: CubicForm) -> Self {
        VectorField::scalar(move |x| form.eval(x))
            .with_jacobian(move |x, out| out[0] = form.linear - 3.0 * form.cubic * x[0] * x[0])
            .with_cubic_form(form)
    }

    /// Jacobian written row-major into an `n×n` buffer.
    pub fn with_jacobian(mut self, jac: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_scalar_derivative(self, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.with_jacobian(move |x, out| out[0] = df(x[0]))
    }

    pub fn with_cubic_form(mut self, form: CubicForm) -> Self {
        self.cubic = Some(form);
        self
    }

    pub fn with_one_sided_lipschitz(mut self, l: f64) -> Self {
        self.one_sided_lipschitz = Some(l);
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn cubic_form(&self) -> Option<CubicForm> {
        self.cubic
    }

    pub fn one_sided_lipschitz(&self) -> Option<f64> {
        self.one_sided_lipschitz
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Writes the analytic Jacobian if there is one; returns whether it did.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        match &self.jacobian {
            Some(jac) => {
                jac(x, out);
                true
            }
            None => false,
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.jacobian_into(x, &mut out).then_some(out)
    }
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("jacobian", &self.jacobian.is_some())
            .field("cubic", &self.cubic)
            .field("one_sided_lipschitz", &self.one_sided_lipschitz)
            .field("domain", &self.domain)
            .finish()
    }
}

/// A map ℝⁿ → ℝⁿˣᵈ, written row-major.
#[derive(Clone)]
pub struct MatrixField {
    rows: usize,
    cols: usize,
    eval: FieldFn,
}

impl MatrixField {
    pub fn new(rows: usize, cols: usize, eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        MatrixField {
            rows,
            cols,
            eval: Arc::new(eval),
        }
    }

    pub fn scalar(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        MatrixField::new(1, 1, move |x, out| out[0] = g(x[0]))
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        MatrixField::new(rows, cols, |_, out| out.fill(0.0))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        self.eval_into(x, &mut out);
        out
    }
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixField")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

/// `f = implicit + explicit`; the split scheme treats only `implicit` implicitly.
#[derive(Debug, Clone)]
pub struct DriftSplit {
    pub implicit: VectorField,
    pub explicit: VectorField,
}

/// An autonomous SDE `dx = f(x) dt + g(x) dw` with x ∈ ℝⁿ, w ∈ ℝᵈ.
#[derive(Debug, Clone)]
pub struct SdeModel {
    label: String,
    drift: VectorField,
    diffusion: MatrixField,
    split: Option<DriftSplit>,
}

impl SdeModel {
    pub fn new(label: impl Into<String>, drift: VectorField, diffusion: MatrixField) -> Result<Self> {
        if drift.dim() == 0 || diffusion.cols() == 0 {
            return Err(Error::Config("state and noise dimensions must be positive".into()));
        }
        if diffusion.rows() != drift.dim() {
            return Err(Error::Config(format!(
                "diffusion has {} rows but the drift dimension is {}",
                diffusion.rows(),
                drift.dim()
            )));
        }
        Ok(SdeModel {
            label: label.into(),
            drift,
            diffusion,
            split: None,
        })
    }

    /// Scalar model from plain functions, convenient in tests and examples.
    pub fn scalar(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SdeModel::new(label, VectorField::scalar(f), MatrixField::scalar(g)).expect("scalar dims are consistent")
    }

    pub fn with_split(mut self, implicit: VectorField, explicit: VectorField) -> Result<Self> {
        let n = self.state_dim();
        if implicit.dim() != n || explicit.dim() != n {
            return Err(Error::Config(
                "drift split dimensions differ from the state dimension".into(),
            ));
        }
        self.split = Some(DriftSplit { implicit, explicit });
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn state_dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion.cols()
    }

    pub fn domain(&self) -> Domain {
        self.drift.domain()
    }

    pub fn drift_field(&self) -> &VectorField {
        &self.drift
    }

    pub fn diffusion_field(&self) -> &MatrixField {
        &self.diffusion
    }

    pub fn split(&self) -> Option<&DriftSplit> {
        self.split.as_ref()
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        if self.domain().contains(x) {
            Ok(())
        } else {
            Err(Error::DomainViolation {
                state: x.to_vec(),
                domain: self.domain().describe(),
            })
        }
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        self.drift.eval(x)
    }

    /// Row-major `n×d` diffusion matrix.
    pub fn diffusion(&self, x: &[f64]) -> Vec<f64> {
        self.diffusion.eval(x)
    }

    pub fn try_drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        Ok(self.drift(x))
    }

    pub fn try_diffusion(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        Ok(self.diffusion(x))
    }

    pub fn drift_jacobian(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.drift.jacobian(x)
    }
}

/// How a profile's constants were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileOrigin {
    Analytic,
    /// Fitted over a finite probe set; valid only where probed.
    Empirical,
}

/// Growth constants: monotone (α, β), one-sided Lipschitz L and polynomial
/// growth (h, C(h)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneProfile {
    pub alpha: f64,
    pub beta: f64,
    pub one_sided_lipschitz: f64,
    pub poly_h: f64,
    pub poly_c: f64,
    pub origin: ProfileOrigin,
}

impl MonotoneProfile {
    /// Upper end of the admissible step range, `1/(θ·max{L, 2β})`.
    pub fn max_step(&self, theta: f64) -> f64 {
        let rate = theta * self.one_sided_lipschitz.max(2.0 * self.beta);
        if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        }
    }
}

/// A catalog model with its constants and the parameters that built it.
#[derive(Debug, Clone)]
pub struct ModelCatalogEntry {
    model: SdeModel,
    profile: MonotoneProfile,
    split_lipschitz: Option<f64>,
    parameters: Vec<(String, f64)>,
}

impl ModelCatalogEntry {
    pub fn new(model: SdeModel, profile: MonotoneProfile, parameters: Vec<(String, f64)>) -> Self {
        ModelCatalogEntry {
            model,
            profile,
            split_lipschitz: None,
            parameters,
        }
    }

    fn with_split_lipschitz(mut self, l: f64) -> Self {
        self.split_lipschitz = Some(l);
        self
    }

    pub fn model(&self) -> &SdeModel {
        &self.model
    }

    pub fn profile(&self) -> &MonotoneProfile {
        &self.profile
    }

    /// One-sided Lipschitz constant of the implicit part of the drift split.
    pub fn split_lipschitz(&self) -> Option<f64> {
        self.split_lipschitz
    }

    pub fn parameters(&self) -> &[(String, f64)] {
        &self.parameters
    }

    pub fn parameter(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

fn params(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// `dx = (μ − a x³) dt + b x² dw`.
///
/// Constants: ⟨x,f⟩ + ½g² = μx − (a − b²/2)x⁴ ≤ μx ≤ |μ|/2·(1 + x²), so
/// α = β = |μ|/2. f' = −3ax² ≤ 0. |f| ≤ |μ| + a|x|³ and |g| = |b|x² ≤ |b|(1+|x|³),
/// so h = 3 with C = max(|μ|, a, |b|).
pub fn make_cubic_model(mu: f64, a: f64, b: f64) -> Result<ModelCatalogEntry> {
    if !(a > 0.0) || !(a > 0.5 * b * b) || !mu.is_finite() || !b.is_finite() {
        return Err(Error::ParameterRegime(format!(
            "cubic model needs a > b²/2 > 0 (got a={a}, b²/2={})",
            0.5 * b * b
        )));
    }
    let form = CubicForm {
        constant: mu,
        linear: 0.0,
        cubic: a,
    };
    let drift = VectorField::cubic(form).with_one_sided_lipschitz(MIN_ONE_SIDED_LIPSCHITZ);
    let model = SdeModel::new("cubic", drift, MatrixField::scalar(move |x| b * x * x))?;
    let profile = MonotoneProfile {
        alpha: 0.5 * mu.abs(),
        beta: 0.5 * mu.abs(),
        one_sided_lipschitz: MIN_ONE_SIDED_LIPSCHITZ,
        poly_h: 3.0,
        poly_c: mu.abs().max(a).max(b.abs()).max(f64::MIN_POSITIVE),
        origin: ProfileOrigin::Analytic,
    };
    Ok(ModelCatalogEntry::new(
        model,
        profile,
        params(&[("mu", mu), ("a", a), ("b", b)]),
    ))
}

/// `dx = (a + sin²x − αx³) dt + βx² dw`, split as f₁ = −αx³, f₂ = a + sin²x.
///
/// Constants: x(a + sin²x) ≤ (a+1)|x| ≤ (a+1)/2·(1+x²) and the quartic terms
/// (β²/2 − α)x⁴ are nonpositive, so α_m = β_m = (a+1)/2. f' = sin 2x − 3αx² ≤ 1,
/// f₁' ≤ 0. C = max(a+1, α, |β|) with h = 3.
pub fn make_electricity_model(a: f64, alpha: f64, beta: f64) -> Result<ModelCatalogEntry> {
    if !(a > 0.0) || !(alpha > 0.0) {
        return Err(Error::ParameterRegime(format!(
            "electricity model needs a > 0 and alpha > 0 (got a={a}, alpha={alpha})"
        )));
    }
    if !(alpha > 0.5 * beta * beta) {
        return Err(Error::ParameterRegime(format!(
            "electricity model needs alpha > beta²/2 for the monotone condition (got alpha={alpha}, beta²/2={})",
            0.5 * beta * beta
        )));
    }
    let drift = VectorField::scalar(move |x| a + x.sin().powi(2) - alpha * x * x * x)
        .with_scalar_derivative(move |x| (2.0 * x).sin() - 3.0 * alpha * x * x)
        .with_one_sided_lipschitz(1.0);
    let implicit = VectorField::cubic(CubicForm {
        constant: 0.0,
        linear: 0.0,
        cubic: alpha,
    })
    .with_one_sided_lipschitz(MIN_ONE_SIDED_LIPSCHITZ);
    let explicit = VectorField::scalar(move |x| a + x.sin().powi(2)).with_scalar_derivative(|x| (2.0 * x).sin());
    let model = SdeModel::new("electricity", drift, MatrixField::scalar(move |x| beta * x * x))?
        .with_split(implicit, explicit)?;
    let profile = MonotoneProfile {
        alpha: 0.5 * (a + 1.0),
        beta: 0.5 * (a + 1.0),
        one_sided_lipschitz: 1.0,
        poly_h: 3.0,
        poly_c: (a + 1.0).max(alpha).max(beta.abs()),
        origin: ProfileOrigin::Analytic,
    };
    Ok(
        ModelCatalogEntry::new(model, profile, params(&[("a", a), ("alpha", alpha), ("beta", beta)]))
            .with_split_lipschitz(MIN_ONE_SIDED_LIPSCHITZ),
    )
}

/// Largest eigenvalue of `A + Aᵀ`.
pub fn lambda_max_symmetric_part(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let m = DMatrix::from_fn(n, n, |i, j| a[i][j] + a[j][i]);
    m.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `dx = diag(x)[(b + A x²) dt + x dw]` driven by one scalar Brownian motion.
///
/// With u = x² (componentwise), ⟨x,f⟩ + ½‖g‖² = Σbᵢxᵢ² + ½uᵀ(A+Aᵀ+I)u, so for
/// λ_max(A+Aᵀ) ≤ −1 the constants α = 0, β = maxᵢ bᵢ hold globally. Otherwise
/// the monotone constants are fitted over probes. L is always fitted: the
/// drift is not globally one-sided Lipschitz once A has positive off-diagonal
/// entries. ‖f‖ ≤ (‖b‖ + ‖A‖_F)(‖x‖ + ‖x‖³) and ‖g‖ ≤ ‖x‖², giving h = 3.
pub fn make_lotka_volterra_model(b: &[f64], a: &[Vec<f64>]) -> Result<ModelCatalogEntry> {
    let n = b.len();
    if n == 0 || a.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(Error::Config(format!(
            "lotka-volterra needs b of length n and an n×n matrix A (n={n})"
        )));
    }
    let lambda_max = lambda_max_symmetric_part(a);
    if !(lambda_max < 0.0) {
        return Err(Error::StabilityCondition { lambda_max });
    }
    let bv = b.to_vec();
    let av: Vec<f64> = a.iter().flatten().cloned().collect();
    let (bf, af) = (bv.clone(), av.clone());
    let eval = move |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut s = bf[i];
            for j in 0..n {
                s += af[i * n + j] * x[j] * x[j];
            }
            out[i] = x[i] * s;
        }
    };
    let (bj, aj) = (bv.clone(), av.clone());
    let jac = move |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut diag = bj[i];
            for j in 0..n {
                diag += aj[i * n + j] * x[j] * x[j];
            }
            for j in 0..n {
                out[i * n + j] = if i == j {
                    diag + 2.0 * aj[i * n + i] * x[i] * x[i]
                } else {
                    2.0 * aj[i * n + j] * x[i] * x[j]
                };
            }
        }
    };
    let mut drift = VectorField::new(n, eval).with_jacobian(jac);
    let lipschitz = sampled_one_sided_lipschitz(&drift, 10.0);
    drift = drift.with_one_sided_lipschitz(lipschitz);
    let diffusion = MatrixField::new(n, 1, |x, out| {
        for (o, v) in out.iter_mut().zip(x) {
            *o = v * v;
        }
    });
    let label = format!("lotka{n}");
    let model = SdeModel::new(label, drift, diffusion)?;

    let b_norm = bv.iter().map(|v| v * v).sum::<f64>().sqrt();
    let a_fro = av.iter().map(|v| v * v).sum::<f64>().sqrt();
    let b_max = bv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let poly_c = (2.0 * (b_norm + a_fro)).max(1.0);
    let profile = if lambda_max <= -1.0 {
        MonotoneProfile {
            alpha: 0.0,
            beta: b_max,
            one_sided_lipschitz: lipschitz,
            poly_h: 3.0,
            poly_c,
            origin: ProfileOrigin::Empirical,
        }
    } else {
        let fitted = crate::analysis::estimate_profile(&model, &crate::analysis::ProbeSpec::default_for(n));
        MonotoneProfile {
            one_sided_lipschitz: lipschitz,
            poly_h: 3.0,
            poly_c,
            ..fitted
        }
    };
    let mut names = Vec::new();
    for (i, v) in bv.iter().enumerate() {
        names.push((format!("b{}", i + 1), *v));
    }
    for i in 0..n {
        for j in 0..n {
            names.push((format!("a{}{}", i + 1, j + 1), av[i * n + j]));
        }
    }
    Ok(ModelCatalogEntry::new(model, profile, names))
}

/// Sup of λ_max(sym J(x)) over a grid of radius `radius`, inflated by 10%.
fn sampled_one_sided_lipschitz(field: &VectorField, radius: f64) -> f64 {
    let n = field.dim();
    let per_axis: usize = match n {
        1 => 401,
        2 => 81,
        3 => 21,
        _ => 5,
    };
    let mut jac = vec![0.0; n * n];
    let mut x = vec![0.0; n];
    let mut worst = f64::NEG_INFINITY;
    let total = per_axis.pow(n as u32);
    for idx in 0..total {
        let mut rem = idx;
        for xi in x.iter_mut() {
            let k = rem % per_axis;
            rem /= per_axis;
            *xi = -radius + 2.0 * radius * k as f64 / (per_axis - 1) as f64;
        }
        if !field.jacobian_into(&x, &mut jac) {
            break;
        }
        let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (jac[i * n + j] + jac[j * n + i]));
        let top = sym
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(top);
    }
    (worst + 0.1 * worst.abs()).max(MIN_ONE_SIDED_LIPSCHITZ)
}

/// Aït-Sahalia interest-rate model
/// `dx = (a₋₁x⁻¹ − a₀ + a₁x − a₂xʳ) dt + σx^ρ dw` on x > 0.
///
/// Constants on x > 0: x·f + ½g² = a₋₁ − a₀x + a₁x² − a₂x^{r+1} + ½σ²x^{2ρ}.
/// The last two terms are bounded above by K = sup(½σ²x^{2ρ} − a₂x^{r+1}),
/// finite when 2ρ < r+1 (or 2ρ = r+1 with a₂ ≥ σ²/2, K = 0), giving
/// α = a₋₁ + K, β = a₁. f' ≤ a₁. The polynomial-growth constants
/// h = max(r, ρ), C = a₋₁ + a₀ + a₁ + a₂ + σ hold for x ≥ 1 only.
pub fn make_ait_sahalia_model(
    a_m1: f64,
    a0: f64,
    a1: f64,
    a2: f64,
    sigma: f64,
    r: f64,
    rho: f64,
) -> Result<ModelCatalogEntry> {
    if !(r > 1.0 && rho > 1.0) {
        return Err(Error::ParameterRegime(format!(
            "ait-sahalia needs r, rho > 1 (got r={r}, rho={rho})"
        )));
    }
    if ![a_m1, a0, a1, a2, sigma].iter().all(|&v| v > 0.0) {
        return Err(Error::ParameterRegime(
            "ait-sahalia rate constants must all be positive".into(),
        ));
    }
    let (p, q, c) = (2.0 * rho, r + 1.0, 0.5 * sigma * sigma);
    let k = if p < q {
        let x_star = (c * p / (a2 * q)).powf(1.0 / (q - p));
        c * x_star.powf(p) * (1.0 - p / q)
    } else if p == q && a2 >= c {
        0.0
    } else {
        return Err(Error::ParameterRegime(format!(
            "ait-sahalia needs 2rho < r+1, or 2rho = r+1 with a2 >= sigma²/2 (got 2rho={p}, r+1={q})"
        )));
    };
    let drift = VectorField::scalar(move |x| a_m1 / x - a0 + a1 * x - a2 * x.powf(r))
        .with_scalar_derivative(move |x| -a_m1 / (x * x) + a1 - a2 * r * x.powf(r - 1.0))
        .with_one_sided_lipschitz(a1)
        .with_domain(Domain::PositiveOrthant);
    let model = SdeModel::new("ait-sahalia", drift, MatrixField::scalar(move |x| sigma * x.powf(rho)))?;
    let profile = MonotoneProfile {
        alpha: a_m1 + k,
        beta: a1,
        one_sided_lipschitz: a1,
        poly_h: r.max(rho),
        poly_c: a_m1 + a0 + a1 + a2 + sigma,
        origin: ProfileOrigin::Analytic,
    };
    Ok(ModelCatalogEntry::new(
        model,
        profile,
        params(&[
            ("a_m1", a_m1),
            ("a0", a0),
            ("a1", a1),
            ("a2", a2),
            ("sigma", sigma),
            ("r", r),
            ("rho", rho),
        ]),
    ))
}

/// `dx = −(c₁x + c₃x³) dt + σx dw`, the dissipative test problem for
/// almost-sure stability.
///
/// x·f + ½g² = (σ²/2 − c₁)x² − c₃x⁴, so α = 0, β = σ²/2 − c₁. f' ≤ −c₁.
/// |f| ≤ (c₁ + c₃)(1+|x|³), |g| ≤ σ(1+|x|³).
pub fn make_stable_cubic_model(c1: f64, c3: f64, sigma: f64) -> Result<ModelCatalogEntry> {
    if !(c1 >= 0.0 && c3 > 0.0) || !sigma.is_finite() {
        return Err(Error::ParameterRegime(format!(
            "stable-cubic needs c1 >= 0 and c3 > 0 (got c1={c1}, c3={c3})"
        )));
    }
    let drift = VectorField::cubic(CubicForm {
        constant: 0.0,
        linear: -c1,
        cubic: c3,
    })
    .with_one_sided_lipschitz((-c1).max(MIN_ONE_SIDED_LIPSCHITZ));
    let model = SdeModel::new("stable-cubic", drift, MatrixField::scalar(move |x| sigma * x))?;
    let profile = MonotoneProfile {
        alpha: 0.0,
        beta: 0.5 * sigma * sigma - c1,
        one_sided_lipschitz: (-c1).max(MIN_ONE_SIDED_LIPSCHITZ),
        poly_h: 3.0,
        poly_c: (c1 + c3).max(sigma.abs()),
        origin: ProfileOrigin::Analytic,
    };
    Ok(ModelCatalogEntry::new(
        model,
        profile,
        params(&[("c1", c1), ("c3", c3), ("sigma", sigma)]),
    ))
}

/// `dx = −λx dt + σx dw`. With σ = 0 this is a deterministic linear ODE.
pub fn make_linear_model(lambda: f64, sigma: f64) -> Result<ModelCatalogEntry> {
    if !lambda.is_finite() || !sigma.is_finite() {
        return Err(Error::ParameterRegime("linear model parameters must be finite".into()));
    }
    let drift = VectorField::cubic(CubicForm {
        constant: 0.0,
        linear: -lambda,
        cubic: 0.0,
    })
    .with_one_sided_lipschitz((-lambda).max(MIN_ONE_SIDED_LIPSCHITZ));
    let model = SdeModel::new("linear", drift, MatrixField::scalar(move |x| sigma * x))?;
    let profile = MonotoneProfile {
        alpha: 0.0,
        beta: 0.5 * sigma * sigma - lambda,
        one_sided_lipschitz: (-lambda).max(MIN_ONE_SIDED_LIPSCHITZ),
        poly_h: 1.0,
        poly_c: lambda.abs().max(sigma.abs()).max(f64::MIN_POSITIVE),
        origin: ProfileOrigin::Analytic,
    };
    Ok(ModelCatalogEntry::new(
        model,
        profile,
        params(&[("lambda", lambda), ("sigma", sigma)]),
    ))
}

/// Label-addressed construction with named parameters over defaults.
pub mod catalog {
    use super::*;

    pub struct CatalogInfo {
        pub label: &'static str,
        pub equation: &'static str,
        pub defaults: &'static [(&'static str, f64)],
    }

    pub const CUBIC_DEFAULTS: &[(&str, f64)] = &[("mu", 0.5), ("a", 0.2), ("b", 0.447_213_595_499_957_9)];

    pub const MODELS: &[CatalogInfo] = &[
        CatalogInfo {
            label: "cubic",
            equation: "dx = (mu - a x^3) dt + b x^2 dw",
            defaults: CUBIC_DEFAULTS,
        },
        CatalogInfo {
            label: "electricity",
            equation: "dx = (a + sin(x)^2 - alpha x^3) dt + beta x^2 dw",
            defaults: &[("a", 1.0), ("alpha", 0.2), ("beta", 0.1)],
        },
        CatalogInfo {
            label: "lotka2",
            equation: "dx = diag(x)[(b + A x^2) dt + x dw]",
            defaults: &[
                ("b1", 1.0),
                ("b2", 1.0),
                ("a11", -2.0),
                ("a12", 0.5),
                ("a21", 0.5),
                ("a22", -2.0),
            ],
        },
        CatalogInfo {
            label: "ait-sahalia",
            equation: "dx = (a_m1/x - a0 + a1 x - a2 x^r) dt + sigma x^rho dw, x > 0",
            defaults: &[
                ("a_m1", 1.0),
                ("a0", 1.0),
                ("a1", 1.0),
                ("a2", 1.0),
                ("sigma", 1.0),
                ("r", 2.0),
                ("rho", 1.5),
            ],
        },
        CatalogInfo {
            label: "stable-cubic",
            equation: "dx = -(c1 x + c3 x^3) dt + sigma x dw",
            defaults: &[("c1", 1.0), ("c3", 1.0), ("sigma", 1.0)],
        },
        CatalogInfo {
            label: "linear",
            equation: "dx = -lambda x dt + sigma x dw",
            defaults: &[("lambda", 1.0), ("sigma", 0.0)],
        },
    ];

    pub fn info(label: &str) -> Option<&'static CatalogInfo> {
        MODELS.iter().find(|m| m.label == label)
    }

    /// Builds the entry for `label`, overriding defaults with `overrides`.
    pub fn build(label: &str, overrides: &[(String, f64)]) -> Result<ModelCatalogEntry> {
        let info = info(label).ok_or_else(|| {
            let known: Vec<_> = MODELS.iter().map(|m| m.label).collect();
            Error::Config(format!("unknown model '{label}' (known: {})", known.join(", ")))
        })?;
        for (k, _) in overrides {
            if !info.defaults.iter().any(|(d, _)| d == k) {
                return Err(Error::Config(format!("model '{label}' has no parameter '{k}'")));
            }
        }
        let get = |name: &str| -> f64 {
            overrides
                .iter()
                .rev()
                .find(|(k, _)| k == name)
                .map(|(_, v)| *v)
                .or_else(|| info.defaults.iter().find(|(k, _)| *k == name).map(|(_, v)| *v))
                .expect("parameter listed in defaults")
        };
        match label {
            "cubic" => make_cubic_model(get("mu"), get("a"), get("b")),
            "electricity" => make_electricity_model(get("a"), get("alpha"), get("beta")),
            "lotka2" => make_lotka_volterra_model(
                &[get("b1"), get("b2")],
                &[vec![get("a11"), get("a12")], vec![get("a21"), get("a22")]],
            ),
            "ait-sahalia" => make_ait_sahalia_model(
                get("a_m1"),
                get("a0"),
                get("a1"),
                get("a2"),
                get("sigma"),
                get("r"),
                get("rho"),
            ),
            "stable-cubic" => make_stable_cubic_model(get("c1"), get("c3"), get("sigma")),
            "linear" => make_linear_model(get("lambda"), get("sigma")),
            _ => unreachable!("label checked against MODELS"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f1(entry: &ModelCatalogEntry, x: f64) -> f64 {
        entry.model().drift(&[x])[0]
    }

    #[test]
    fn cubic_model_evaluates_default_parameters() {
        let e = make_cubic_model(0.5, 0.2, 0.2f64.sqrt()).unwrap();
        assert!((f1(&e, 1.0) - 0.3).abs() < 1e-15);
        assert!((e.model().diffusion(&[1.0])[0] - 0.2f64.sqrt()).abs() < 1e-15);
        assert_eq!(e.profile().alpha, 0.25);
        assert_eq!(e.profile().beta, 0.25);
        assert_eq!(e.model().drift_jacobian(&[2.0]).unwrap()[0], -3.0 * 0.2 * 4.0);
    }

    #[test]
    fn cubic_model_zero_offset() {
        let e = make_cubic_model(0.0, 1.0, 0.0).unwrap();
        assert_eq!(f1(&e, 0.0), 0.0);
    }

    #[test]
    fn cubic_monotone_pair_holds_on_dense_grid() {
        // Oracle: max over a dense grid of <x,f> + g²/2 − βx², compared to α.
        let (mu, a, b) = (0.5, 0.2, 0.2f64.sqrt());
        let worst = (0..=200_000)
            .map(|i| -100.0 + i as f64 * 0.001)
            .map(|x| x * (mu - a * x.powi(3)) + 0.5 * (b * x * x).powi(2) - 0.25 * x * x)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= 0.25 + 1e-12, "worst={worst}");
    }

    #[test]
    fn cubic_regime_violation_rejected() {
        assert!(matches!(
            make_cubic_model(0.5, 0.09, 0.2f64.sqrt()),
            Err(Error::ParameterRegime(_))
        ));
        assert!(make_cubic_model(0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn electricity_split_pieces() {
        let e = make_electricity_model(1.0, 0.2, 0.1).unwrap();
        let split = e.model().split().unwrap();
        assert_eq!(split.explicit.eval(&[0.0])[0], 1.0);
        let x = 2.0f64;
        let expect = 1.0 + x.sin().powi(2) - 1.6;
        assert!((f1(&e, x) - expect).abs() < 1e-15);
        assert!((split.implicit.eval(&[x])[0] + split.explicit.eval(&[x])[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn electricity_seasonal_part_bounded() {
        let e = make_electricity_model(1.0, 0.2, 0.1).unwrap();
        let split = e.model().split().unwrap();
        let sup = (0..=20_000)
            .map(|i| -100.0 + i as f64 * 0.01)
            .map(|x| split.explicit.eval(&[x])[0].abs())
            .fold(0.0, f64::max);
        assert!(sup <= 2.0);
    }

    #[test]
    fn electricity_rejects_nonpositive_rates() {
        assert!(make_electricity_model(0.0, 0.2, 0.1).is_err());
        assert!(make_electricity_model(1.0, -0.2, 0.1).is_err());
    }

    #[test]
    fn lotka_volterra_fixed_point_and_eigen_check() {
        let e = make_lotka_volterra_model(&[1.0], &[vec![-1.0]]).unwrap();
        assert_eq!(f1(&e, 1.0), 0.0);
        // 2×2 oracle: eigenvalues of [[-4,1],[1,-4]] by the quadratic formula.
        let (p, q, r) = (-4.0f64, 1.0f64, -4.0f64);
        let tr = p + r;
        let det = p * r - q * q;
        let top = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        assert_eq!(top, -3.0);
        let a = vec![vec![-2.0, 0.5], vec![0.5, -2.0]];
        assert!((lambda_max_symmetric_part(&a) - top).abs() < 1e-12);
        let e2 = make_lotka_volterra_model(&[1.0, 1.0], &a).unwrap();
        assert_eq!(e2.model().state_dim(), 2);
        assert_eq!(e2.model().noise_dim(), 1);
    }

    #[test]
    fn lotka_volterra_positive_interaction_rejected() {
        let err = make_lotka_volterra_model(&[1.0], &[vec![1.0]]).unwrap_err();
        assert!(matches!(err, Error::StabilityCondition { lambda_max } if (lambda_max - 2.0).abs() < 1e-12));
    }

    #[test]
    fn ait_sahalia_evaluation_and_domain() {
        let e = make_ait_sahalia_model(1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 1.5).unwrap();
        assert!((f1(&e, 1.0)).abs() < 1e-15);
        assert!((e.model().diffusion(&[4.0])[0] - 8.0).abs() < 1e-12);
        assert!(matches!(
            e.model().try_drift(&[0.0]),
            Err(Error::DomainViolation { .. })
        ));
        assert!(e.model().try_drift(&[-1.0]).is_err());
    }

    #[test]
    fn ait_sahalia_rejects_explosive_diffusion() {
        assert!(make_ait_sahalia_model(1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0).is_err());
        assert!(make_ait_sahalia_model(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn catalog_builds_every_label_deterministically() {
        for info in catalog::MODELS {
            let a = catalog::build(info.label, &[]).unwrap();
            let b = catalog::build(info.label, &[]).unwrap();
            let n = a.model().state_dim();
            let x: Vec<f64> = (0..n).map(|i| 0.7 + 0.3 * i as f64).collect();
            assert_eq!(a.model().drift(&x), b.model().drift(&x));
            assert_eq!(a.model().diffusion(&x), b.model().diffusion(&x));
        }
        assert!(catalog::build("nope", &[]).is_err());
        assert!(catalog::build("cubic", &[("zeta".into(), 1.0)]).is_err());
        let e = catalog::build("cubic", &[("mu".into(), 0.0)]).unwrap();
        assert_eq!(e.parameter("mu"), Some(0.0));
    }

    #[test]
    fn max_step_formula() {
        let e = make_cubic_model(0.5, 0.2, 0.2f64.sqrt()).unwrap();
        assert!((e.profile().max_step(1.0) - 2.0).abs() < 1e-12);
        assert_eq!(e.profile().max_step(0.0), f64::INFINITY);
    }
}
