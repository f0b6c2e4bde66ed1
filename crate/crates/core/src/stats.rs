//! Monte Carlo summaries and log-log fits.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
    /// `1.96·sd/√n`.
    pub ci_halfwidth: f64,
    pub n: usize,
}

impl MeanCi {
    /// Summary of `samples`, accumulated left to right.
    pub fn of(samples: &[f64]) -> MeanCi {
        let n = samples.len();
        if n == 0 {
            return MeanCi {
                mean: f64::NAN,
                sd: f64::NAN,
                ci_halfwidth: f64::NAN,
                n,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanCi {
            mean,
            sd,
            ci_halfwidth: Z95 * sd / (n as f64).sqrt(),
            n,
        }
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_halfwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares `y = intercept + slope·x`. `None` with fewer than
/// two distinct abscissae or non-finite points.
pub fn least_squares(points: &[(f64, f64)]) -> Option<LinearFit> {
    let w = vec![1.0; points.len()];
    weighted_least_squares(points, &w)
}

/// Weighted least squares with weights `w`.
pub fn weighted_least_squares(points: &[(f64, f64)], w: &[f64]) -> Option<LinearFit> {
    if points.len() < 2 || w.len() != points.len() {
        return None;
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) || w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let mx = points.iter().zip(w).map(|((x, _), w)| w * x).sum::<f64>() / sw;
    let my = points.iter().zip(w).map(|((_, y), w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(w).map(|((x, _), w)| w * (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = points.iter().zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Standard error of a weighted least-squares slope when each ordinate has
/// its own standard deviation `sigma[i]`.
pub fn slope_standard_error(xs: &[f64], w: &[f64], sigma: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mx = xs.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(w).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
    xs.iter()
        .zip(w)
        .zip(sigma)
        .map(|((x, w), s)| {
            let c = w * (x - mx) / sxx;
            c * c * s * s
        })
        .sum::<f64>()
        .sqrt()
}
