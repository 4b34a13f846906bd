//! Small statistical helpers shared by the simulators and their tests.

use crate::error::{Error, Result};

/// Streaming mean/variance accumulator (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero until two observations arrive.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let d = other.mean - self.mean;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n;
        self.mean += d * other.n as f64 / n;
        self.n += other.n;
    }
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against the CDF `f`.
///
/// `samples` need not be sorted; a sorted copy is made internally.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], f: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "empty sample for KS statistic"));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS sample"));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let c = f(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((c - lo).abs()).max((hi - c).abs());
    }
    Ok(d)
}

/// One-sided KS excess `sup_w (F(w) - F_n(w))`: how far the empirical
/// distribution falls SHORT of the reference, i.e. evidence that samples are
/// stochastically larger. Clamped at zero; under stochastic dominance of the
/// samples by the reference law this stays at noise level, with
/// `P(excess > d) <= exp(-2 n d^2)`.
pub fn ks_one_sided_excess<F: Fn(f64) -> f64>(samples: &[f64], f: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "empty sample for KS statistic"));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS sample"));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        d = d.max(f(x) - i as f64 / n);
    }
    Ok(d.max(0.0))
}

/// Asymptotic p-value for a one-sample KS statistic `d` with `n` observations.
///
/// Uses the Stephens small-sample correction of the Kolmogorov limit law;
/// accurate enough for the n >= 100 goodness-of-fit checks done here.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn ols_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("x", "need two equal-length samples of size >= 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("zero variance in regressor".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Least-squares coefficients `(a, b)` minimizing `|a*x1 + b*x2 - y|^2`,
/// with no free constant term.
pub fn ols_two(x1: &[f64], x2: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x1.len() != x2.len() || x1.len() != y.len() || x1.is_empty() {
        return Err(Error::invalid("x1", "need three equal-length nonempty samples"));
    }
    let mut s11 = 0.0;
    let mut s12 = 0.0;
    let mut s22 = 0.0;
    let mut s1y = 0.0;
    let mut s2y = 0.0;
    for i in 0..y.len() {
        s11 += x1[i] * x1[i];
        s12 += x1[i] * x2[i];
        s22 += x2[i] * x2[i];
        s1y += x1[i] * y[i];
        s2y += x2[i] * y[i];
    }
    let det = s11 * s22 - s12 * s12;
    let scale = (s11 * s22).max(1e-300);
    if det.abs() <= 1e-12 * scale {
        return Err(Error::DegenerateFit("collinear regressors".into()));
    }
    Ok(((s22 * s1y - s12 * s2y) / det, (s11 * s2y - s12 * s1y) / det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn welford_matches_direct_formulas() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.5, -3.0];
        let mut rm = RunningMoments::new();
        for &x in &xs {
            rm.push(x);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert_abs_diff_eq!(rm.mean(), mean, epsilon = 1e-12);
        assert_abs_diff_eq!(rm.variance(), var, epsilon = 1e-12);
    }

    #[test]
    fn welford_merge_agrees_with_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut whole = RunningMoments::new();
        for &x in &xs {
            whole.push(x);
        }
        let mut left = RunningMoments::new();
        let mut right = RunningMoments::new();
        for &x in &xs[..33] {
            left.push(x);
        }
        for &x in &xs[33..] {
            right.push(x);
        }
        left.merge(&right);
        assert_abs_diff_eq!(left.mean(), whole.mean(), epsilon = 1e-12);
        assert_abs_diff_eq!(left.variance(), whole.variance(), epsilon = 1e-12);
    }

    #[test]
    fn ks_accepts_exact_uniform_grid() {
        // Midpoint grid keeps the empirical CDF within 1/(2n) of uniform.
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d <= 0.5 / n as f64 + 1e-12);
        assert!(ks_pvalue(d, n) > 0.99);
    }

    #[test]
    fn ks_rejects_shifted_distribution() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| ((i as f64 + 0.5) / n as f64).powi(2)).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ks_pvalue(d, n) < 1e-6);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.25).collect();
        let (s, c) = ols_line(&x, &y).unwrap();
        assert_abs_diff_eq!(s, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c, -1.25, epsilon = 1e-12);
    }

    #[test]
    fn two_column_fit_recovers_exact_coefficients() {
        let x1: Vec<f64> = (0..30).map(|i| (i as f64).sin() + 2.0).collect();
        let x2: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).cos()).collect();
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 1.5 * a - 0.75 * b).collect();
        let (a, b) = ols_two(&x1, &x2, &y).unwrap();
        assert_abs_diff_eq!(a, 1.5, epsilon = 1e-10);
        assert_abs_diff_eq!(b, -0.75, epsilon = 1e-10);
    }
}
