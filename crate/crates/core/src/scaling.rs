//! Heavy-traffic limit of the book: the rough variance process driving it,
//! forward-variance curves, the deterministic queue ODEs, the limit market
//! impact and its linear closed form, and the rescaling map that ties a
//! micro model at horizon scale T back to these limit objects.

use crate::error::{Error, Result};
use crate::impact::{adaptive_horizon, market_impact_at, ImpactEstimate, MarketModel};
use crate::kernels::KernelSpec;
use crate::orderbook::{BookEvent, KappaSpec, KappaVariant, MetaorderSchedule, QueueModel};
use crate::rng::{SeedTree, StreamPurpose};
use crate::specialfn::MittagLefflerLaw;
use crate::stats::RunningMoments;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const GRID_TOL: f64 = 1e-6;
const ODE_LOCAL_TOL: f64 = 1e-8;
/// Quadrature span past the last injection, in mean-reversion times. The
/// response weight beyond is exp(-12); what the analytic remainder then
/// misses by freezing the forward curve at the horizon stays below 1e-6 of
/// the injected mass.
const RESPONSE_SPAN: f64 = 12.0;

/// Parameters of the limit variance process
/// `Y_t = F(t) + (mu_star * lambda)^{-1/2} int_0^t f(t-s) sqrt(Y_s) dB_s`,
/// with `f` and `F` the Mittag-Leffler density and distribution function of
/// order `alpha` and scale `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughVolParams {
    pub alpha: f64,
    pub lambda: f64,
    pub mu_star: f64,
}

impl RoughVolParams {
    pub fn validate(&self) -> Result<()> {
        self.law().map(|_| ())?;
        if !(self.mu_star > 0.0 && self.mu_star.is_finite()) {
            return Err(Error::invalid("mu_star", "need mu_star > 0"));
        }
        Ok(())
    }

    pub fn law(&self) -> Result<MittagLefflerLaw> {
        MittagLefflerLaw::new(self.alpha, self.lambda)
    }

    /// Coefficient of the martingale term.
    pub fn vol_of_vol(&self) -> f64 {
        1.0 / (self.mu_star * self.lambda).sqrt()
    }
}

/// One sampled path of the limit variance process on a uniform grid.
#[derive(Debug, Clone, Serialize)]
pub struct RoughVolPath {
    pub params: RoughVolParams,
    pub step: f64,
    /// Values at the nodes `k * step`, `k = 0..=n`.
    pub y: Vec<f64>,
    /// Driving Gaussian increments per cell, variance `step` each.
    pub db: Vec<f64>,
    /// Mittag-Leffler distribution function at the nodes: the noiseless
    /// skeleton of the scheme, which is also the unconditional mean.
    pub skeleton: Vec<f64>,
}

impl RoughVolPath {
    pub fn horizon(&self) -> f64 {
        self.step * self.db.len() as f64
    }

    /// Piecewise-linear value between nodes.
    pub fn value_at(&self, s: f64) -> f64 {
        let pos = (s / self.step).clamp(0.0, (self.y.len() - 1) as f64);
        let k = (pos.floor() as usize).min(self.y.len() - 2);
        let w = pos - k as f64;
        self.y[k] * (1.0 - w) + self.y[k + 1] * w
    }

    /// Node index of a grid-aligned time.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let pos = t / self.step;
        let idx = pos.round();
        if !(idx >= 0.0) || (pos - idx).abs() > GRID_TOL {
            return Err(Error::Range {
                what: "grid time",
                reason: format!("t = {t} is not a node of the step-{} grid", self.step),
            });
        }
        if idx as usize >= self.y.len() {
            return Err(Error::Range {
                what: "grid time",
                reason: format!("t = {t} lies beyond the path horizon {}", self.horizon()),
            });
        }
        Ok(idx as usize)
    }
}

fn cell_count(step: f64, horizon: f64) -> Result<usize> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("step", "need step > 0"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "need horizon > 0"));
    }
    let pos = horizon / step;
    let n = pos.round();
    if (pos - n).abs() > GRID_TOL {
        return Err(Error::invalid("horizon", "must be a whole number of grid steps"));
    }
    Ok(n as usize)
}

/// Discretization of the variance scheme on a fixed grid: the kernel cell
/// averages `(F(k h) - F((k-1) h)) / h` and the mean skeleton, computed once
/// and shared by every path drawn from it. Evaluating the distribution
/// function is far more expensive than the per-path convolution, so
/// ensembles should always go through one scheme.
pub struct YScheme {
    params: RoughVolParams,
    step: f64,
    skeleton: Vec<f64>,
    weights: Vec<f64>,
    vol_of_vol: f64,
}

impl YScheme {
    pub fn new(params: &RoughVolParams, step: f64, horizon: f64) -> Result<Self> {
        params.validate()?;
        let n = cell_count(step, horizon)?;
        let law = params.law()?;
        let mut skeleton = Vec::with_capacity(n + 1);
        for k in 0..=n {
            skeleton.push(law.cdf(step * k as f64)?);
        }
        if skeleton[1] >= 0.5 {
            return Err(Error::GridTooCoarse {
                reason: format!(
                    "first-cell kernel mass F(step) = {:.4} must stay below 0.5",
                    skeleton[1]
                ),
            });
        }
        let inv_h = 1.0 / step;
        let weights = (1..=n).map(|k| (skeleton[k] - skeleton[k - 1]) * inv_h).collect();
        Ok(YScheme {
            params: *params,
            step,
            skeleton,
            weights,
            vol_of_vol: params.vol_of_vol(),
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.step * self.weights.len() as f64
    }

    pub fn sample(&self, rng: &mut ChaCha12Rng) -> RoughVolPath {
        let root_h = self.step.sqrt();
        let db: Vec<f64> = (0..self.weights.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal) * root_h)
            .collect();
        self.drive(db)
    }

    /// Runs the scheme on caller-provided Brownian increments (variance
    /// `step` each); lets refinement studies reuse one Brownian path across
    /// grids by aggregating fine increments into coarse ones.
    pub fn from_increments(&self, db: &[f64]) -> Result<RoughVolPath> {
        if db.len() != self.weights.len() {
            return Err(Error::invalid("db", "increment count must match the scheme grid"));
        }
        Ok(self.drive(db.to_vec()))
    }

    fn drive(&self, db: Vec<f64>) -> RoughVolPath {
        let n = db.len();
        let mut y = vec![0.0; n + 1];
        let mut shock = vec![0.0; n];
        y[0] = self.skeleton[0];
        for m in 1..=n {
            shock[m - 1] = y[m - 1].max(0.0).sqrt() * db[m - 1];
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.weights[m - 1 - j] * shock[j];
            }
            y[m] = self.skeleton[m] + self.vol_of_vol * acc;
        }
        RoughVolPath {
            params: self.params,
            step: self.step,
            y,
            db,
            skeleton: self.skeleton.clone(),
        }
    }
}

/// Draws a variance path by the explicit Volterra scheme with exact kernel
/// cell averages, the square root fully truncated at zero. One-off
/// convenience; ensembles should build a [`YScheme`] once and sample it.
pub fn simulate_y(
    params: &RoughVolParams,
    step: f64,
    horizon: f64,
    rng: &mut ChaCha12Rng,
) -> Result<RoughVolPath> {
    Ok(YScheme::new(params, step, horizon)?.sample(rng))
}

/// The scheme on caller-provided Brownian increments; see
/// [`YScheme::from_increments`].
pub fn simulate_y_with_increments(
    params: &RoughVolParams,
    step: f64,
    db: &[f64],
) -> Result<RoughVolPath> {
    if db.is_empty() {
        return Err(Error::invalid("db", "need at least one increment"));
    }
    YScheme::new(params, step, step * db.len() as f64)?.from_increments(db)
}

/// Conditional expectation of `Y_s` given the discrete history up to the
/// grid node `t`: the distribution function at `s` plus the realized shocks
/// propagated by exact cell averages of the density.
pub fn forward_variance(path: &RoughVolPath, t: f64, s: f64) -> Result<f64> {
    let t_idx = path.node_index(t)?;
    if s < t - GRID_TOL * path.step {
        return Err(Error::Range {
            what: "forward time",
            reason: format!("s = {s} precedes the information time t = {t}"),
        });
    }
    let law = path.params.law()?;
    let scale = path.params.vol_of_vol() / path.step;
    let mut value = law.cdf(s)?;
    let mut upper = value;
    for j in 0..t_idx {
        let lower = law.cdf((s - path.step * (j + 1) as f64).max(0.0))?;
        value += scale * (upper - lower) * path.y[j].max(0.0).sqrt() * path.db[j];
        upper = lower;
    }
    Ok(value)
}

/// Deterministic queue trajectories driven by one variance path: the base
/// queue and the queue seeing metaorder injections up to the truncation
/// time, on the same grid as the path.
#[derive(Debug, Clone, Serialize)]
pub struct LimitQueuePath {
    pub step: f64,
    pub base: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub truncation: f64,
}

impl LimitQueuePath {
    pub fn horizon(&self) -> f64 {
        self.step * (self.base.len() - 1) as f64
    }

    pub fn gap_at(&self, k: usize) -> f64 {
        self.perturbed[k] - self.base[k]
    }
}

fn rk4_step<F: Fn(f64, f64) -> f64>(drift: &F, s: f64, q: f64, h: f64) -> f64 {
    let k1 = drift(s, q);
    let k2 = drift(s + 0.5 * h, q + 0.5 * h * k1);
    let k3 = drift(s + 0.5 * h, q + 0.5 * h * k2);
    let k4 = drift(s + h, q + h * k3);
    q + h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4)
}

fn double_step<F: Fn(f64, f64) -> f64>(drift: &F, s: f64, q: f64, h: f64) -> (f64, f64) {
    let full = rk4_step(drift, s, q, h);
    let mid = rk4_step(drift, s, q, 0.5 * h);
    let fine = rk4_step(drift, s + 0.5 * h, mid, 0.5 * h);
    (fine, (full - fine).abs() / 15.0)
}

fn profile_knots(profile: &MetaorderSchedule) -> Vec<f64> {
    match profile {
        MetaorderSchedule::Off => Vec::new(),
        MetaorderSchedule::ConstantUntil { until, .. } => vec![*until],
        MetaorderSchedule::PiecewiseConstant { times, .. } => times.clone(),
    }
}

/// Integrates `q' = D(q) - Y + f 1[s <= truncation]` and its injection-free
/// companion with classical Runge-Kutta on the path grid, the variance
/// interpolated linearly inside each cell. Injection switches (profile knots
/// and the truncation) must sit on grid nodes so every cell has a smooth
/// right-hand side; each step is checked against a half-step solve.
pub fn solve_queue_ode(
    queue: &QueueModel,
    path: &RoughVolPath,
    profile: &MetaorderSchedule,
    q0: f64,
    truncation: f64,
) -> Result<LimitQueuePath> {
    queue.validate()?;
    profile.validate()?;
    if !q0.is_finite() {
        return Err(Error::invalid("q0", "need finite q0"));
    }
    if !(truncation >= 0.0 && truncation.is_finite()) {
        return Err(Error::invalid("truncation", "need truncation >= 0"));
    }
    let h = path.step;
    let horizon = path.horizon();
    let mut knots = profile_knots(profile);
    knots.push(truncation);
    for knot in knots {
        if knot < horizon - GRID_TOL * h {
            let pos = knot / h;
            if (pos - pos.round()).abs() > GRID_TOL {
                return Err(Error::invalid(
                    "profile",
                    format!("injection switch at {knot} does not sit on the step-{h} grid"),
                ));
            }
        }
    }
    let n = path.y.len() - 1;
    let mut base = Vec::with_capacity(n + 1);
    let mut perturbed = Vec::with_capacity(n + 1);
    base.push(q0);
    perturbed.push(q0);
    for k in 0..n {
        let a = h * k as f64;
        let mid = a + 0.5 * h;
        let rate = if mid <= truncation { profile.rate_at(mid) } else { 0.0 };
        let y0 = path.y[k];
        let slope = (path.y[k + 1] - y0) / h;
        let drift_base = |s: f64, q: f64| queue.drift_real(q) - (y0 + (s - a) * slope);
        let drift_pert = |s: f64, q: f64| queue.drift_real(q) - (y0 + (s - a) * slope) + rate;
        let (qb, err_b) = double_step(&drift_base, a, base[k], h);
        let (qp, err_p) = double_step(&drift_pert, a, perturbed[k], h);
        let err = err_b.max(err_p);
        if err > ODE_LOCAL_TOL {
            return Err(Error::Accuracy {
                what: format!("queue ODE local error at s = {a:.6}"),
                estimate: err,
                tolerance: ODE_LOCAL_TOL,
            });
        }
        base.push(qb);
        perturbed.push(qp);
    }
    Ok(LimitQueuePath { step: h, base, perturbed, truncation })
}

fn profile_segments(profile: &MetaorderSchedule) -> Vec<(f64, f64, f64)> {
    match profile {
        MetaorderSchedule::Off => Vec::new(),
        MetaorderSchedule::ConstantUntil { rate, until } => vec![(0.0, *until, *rate)],
        MetaorderSchedule::PiecewiseConstant { times, rates } => (0..rates.len())
            .map(|i| (times[i], times[i + 1], rates[i]))
            .collect(),
    }
}

fn profile_end(profile: &MetaorderSchedule) -> f64 {
    profile_segments(profile).last().map_or(0.0, |(_, b, _)| *b)
}

/// `int_0^{min(s, cap)} e^{c (s-u)} f(u) du` in closed form for a
/// piecewise-constant profile: the response at `s` of the book to the
/// injections kept before `cap`.
fn injection_response(profile: &MetaorderSchedule, c: f64, cap: f64, s: f64) -> f64 {
    let mut total = 0.0;
    for (a, b, rate) in profile_segments(profile) {
        let hi = b.min(cap).min(s);
        if hi <= a {
            continue;
        }
        total += rate * ((c * (s - a)).exp() - (c * (s - hi)).exp()) / c;
    }
    total
}

/// `int_a_end^inf` of the same response, for the analytic horizon remainder.
fn injection_response_tail(profile: &MetaorderSchedule, c: f64, cap: f64, a_end: f64) -> f64 {
    let mut total = 0.0;
    for (a, b, rate) in profile_segments(profile) {
        let hi = b.min(cap).min(a_end);
        if hi <= a {
            continue;
        }
        total += rate * ((c * (a_end - hi)).exp() - (c * (a_end - a)).exp()) / (c * c);
    }
    total
}

/// Forward-variance evaluations on the half-step lattice with the
/// information frozen at a node, reading the distribution function off a
/// precomputed table.
struct FrozenCurve<'a> {
    t_idx: usize,
    f_half: &'a [f64],
    scale: f64,
    shocks: Vec<f64>,
}

impl<'a> FrozenCurve<'a> {
    fn new(path: &RoughVolPath, t_idx: usize, f_half: &'a [f64]) -> Self {
        let shocks = (0..t_idx).map(|j| path.y[j].max(0.0).sqrt() * path.db[j]).collect();
        FrozenCurve { t_idx, f_half, scale: path.params.vol_of_vol() / path.step, shocks }
    }

    /// Curve value at half-lattice index `i` (time `i * step / 2 >= t`).
    fn value(&self, i: usize) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.t_idx {
            acc += (self.f_half[i - 2 * j] - self.f_half[i - 2 * j - 2]) * self.shocks[j];
        }
        self.f_half[i] + self.scale * acc
    }
}

/// Linear market impact of an injection profile: the realized leg integrates
/// the closed-form book response against the variance path up to the
/// evaluation time, the forward leg integrates it against the forward curve
/// beyond, with an analytic exponential remainder past a quadrature horizon
/// anchored to the profile alone. Anchoring means evaluations at different
/// times share every quadrature cell, so their differences telescope
/// exactly; it also lets one table serve a whole path ensemble.
pub struct LinearImpact {
    params: RoughVolParams,
    profile: MetaorderSchedule,
    c_kappa: f64,
    c_lambda: f64,
    step: f64,
    /// Distribution function on the half-step lattice up to the horizon.
    f_half: Vec<f64>,
    end_idx: usize,
}

impl LinearImpact {
    pub fn new(
        params: &RoughVolParams,
        profile: &MetaorderSchedule,
        c_kappa: f64,
        c_lambda: f64,
        step: f64,
    ) -> Result<Self> {
        params.validate()?;
        profile.validate()?;
        if !(c_lambda < 0.0 && c_lambda.is_finite()) {
            return Err(Error::invalid("c_lambda", "need mean reversion c_lambda < 0"));
        }
        if !c_kappa.is_finite() {
            return Err(Error::invalid("c_kappa", "need finite c_kappa"));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid("step", "need step > 0"));
        }
        let span = profile_end(profile) + RESPONSE_SPAN / c_lambda.abs();
        let end_idx = (span / step).ceil() as usize;
        let law = params.law()?;
        let half = 0.5 * step;
        let mut f_half = Vec::with_capacity(2 * end_idx + 1);
        for i in 0..=2 * end_idx {
            f_half.push(law.cdf(half * i as f64)?);
        }
        Ok(LinearImpact {
            params: *params,
            profile: profile.clone(),
            c_kappa,
            c_lambda,
            step,
            f_half,
            end_idx,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.step * self.end_idx as f64
    }

    fn check_path(&self, path: &RoughVolPath) -> Result<()> {
        if path.step != self.step || path.params != self.params {
            return Err(Error::invalid("path", "path grid or law differs from the table"));
        }
        Ok(())
    }

    /// Impact at `t`. `curve_time` freezes the forward curve at an earlier
    /// node (default `t`), which is what post-end increment accounting
    /// conditions on.
    pub fn value(&self, path: &RoughVolPath, t: f64, curve_time: Option<f64>) -> Result<f64> {
        self.check_path(path)?;
        let t_idx = path.node_index(t)?;
        if t_idx > self.end_idx {
            return Err(Error::Range {
                what: "evaluation time",
                reason: format!("t = {t} lies beyond the table horizon {}", self.horizon()),
            });
        }
        let w_idx = match curve_time {
            Some(w) => path.node_index(w)?,
            None => t_idx,
        };
        if w_idx > t_idx {
            return Err(Error::invalid(
                "curve_time",
                "curve time cannot exceed the evaluation time",
            ));
        }
        let h = self.step;
        let half = 0.5 * h;
        let response = |s: f64| injection_response(&self.profile, self.c_lambda, t, s);

        let mut realized = 0.0;
        for k in 0..t_idx {
            let a = h * k as f64;
            let y0 = path.y[k];
            let y1 = path.y[k + 1];
            realized += h / 6.0
                * (response(a) * y0
                    + 4.0 * response(a + half) * 0.5 * (y0 + y1)
                    + response(a + h) * y1);
        }

        let curve = FrozenCurve::new(path, w_idx, &self.f_half);
        let mut forward = 0.0;
        for k in t_idx..self.end_idx {
            let a = h * k as f64;
            let i = 2 * k;
            forward += h / 6.0
                * (response(a) * curve.value(i)
                    + 4.0 * response(a + half) * curve.value(i + 1)
                    + response(a + h) * curve.value(i + 2));
        }
        let tail = injection_response_tail(&self.profile, self.c_lambda, t, self.horizon());
        let remainder = curve.value(2 * self.end_idx) * tail;
        Ok(self.c_kappa * (realized + forward + remainder))
    }
}

/// One-off evaluation of the linear impact; loops over paths or times
/// should build a [`LinearImpact`] table once instead.
pub fn linear_limit_mi(
    path: &RoughVolPath,
    profile: &MetaorderSchedule,
    c_kappa: f64,
    c_lambda: f64,
    t: f64,
    curve_time: Option<f64>,
) -> Result<f64> {
    LinearImpact::new(&path.params, profile, c_kappa, c_lambda, path.step)?
        .value(path, t, curve_time)
}

/// The realized sibling of the linear formula: the same closed-form
/// response integrated against the variance path over all of
/// `[0, horizon_a]`, which is the quantity a per-path Monte Carlo
/// functional with affine book shapes reproduces cell by cell.
pub fn linear_limit_realized(
    path: &RoughVolPath,
    profile: &MetaorderSchedule,
    c_kappa: f64,
    c_lambda: f64,
    t: f64,
    horizon_a: f64,
) -> Result<f64> {
    profile.validate()?;
    if !(c_lambda < 0.0 && c_lambda.is_finite()) {
        return Err(Error::invalid("c_lambda", "need mean reversion c_lambda < 0"));
    }
    let t_idx = path.node_index(t)?;
    let a_idx = path.node_index(horizon_a)?;
    if a_idx < t_idx {
        return Err(Error::invalid("horizon_a", "need horizon_a >= t"));
    }
    let h = path.step;
    let half = 0.5 * h;
    let response = |s: f64| injection_response(profile, c_lambda, t, s);
    let mut total = 0.0;
    for k in 0..a_idx {
        let a = h * k as f64;
        let y0 = path.y[k];
        let y1 = path.y[k + 1];
        total += h / 6.0
            * (response(a) * y0
                + 4.0 * response(a + half) * 0.5 * (y0 + y1)
                + response(a + h) * y1);
    }
    Ok(c_kappa * total)
}

/// Limit-side impact experiment: book shapes, variance parameters, the
/// metaorder profile, and the numerical knobs shared by its estimators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitImpactConfig {
    pub rough: RoughVolParams,
    pub queue: QueueModel,
    pub kappa: KappaSpec,
    pub profile: MetaorderSchedule,
    /// Initial (and typically stationary) queue level.
    pub q0: f64,
    pub step: f64,
    /// Allowance for what the integrand beyond the quadrature horizon may
    /// still contribute.
    pub tail_tolerance: f64,
}

impl LimitImpactConfig {
    pub fn validate(&self) -> Result<()> {
        self.rough.validate()?;
        self.queue.validate()?;
        self.kappa.validate()?;
        self.profile.validate()?;
        if !self.q0.is_finite() {
            return Err(Error::invalid("q0", "need finite q0"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("step", "need step > 0"));
        }
        if !(self.tail_tolerance > 0.0) {
            return Err(Error::invalid("tail_tolerance", "need tail_tolerance > 0"));
        }
        if self.reversion_rate() <= 0.0 {
            return Err(Error::invalid("queue", "drift must be strictly restoring"));
        }
        Ok(())
    }

    /// Restoring rate of the deterministic queue drift.
    pub fn reversion_rate(&self) -> f64 {
        match &self.queue {
            QueueModel::AffineDifference { c, .. } => c.abs(),
            _ => self.queue.mixing_margin(50, 1),
        }
    }

    /// Bound on the impact mass beyond `a`: the queue gap decays like
    /// `e^{-m (s-t)}` from at most the injected mass, the variance sits at
    /// its unit stationary scale, and kappa moves at most at its Lipschitz
    /// rate.
    pub fn tail_bound(&self, t: f64, a: f64) -> f64 {
        let m = self.reversion_rate();
        self.kappa.lipschitz_bound() * self.profile.mass(t) * (-m * (a - t)).exp() / m
    }

    /// Smallest grid-aligned horizon meeting the tail allowance.
    pub fn suggested_horizon(&self, t: f64) -> f64 {
        let m = self.reversion_rate();
        let lead = self.kappa.lipschitz_bound() * self.profile.mass(t) / m;
        let span = if lead > self.tail_tolerance {
            (lead / self.tail_tolerance).ln() / m
        } else {
            1.0 / m
        };
        self.step * ((t + span) / self.step).ceil() + self.step
    }
}

/// Realized limit impact functional of one variance path: cell-wise Simpson
/// of `(kappa(perturbed) - kappa(base)) * Y` over `[0, horizon_a]`, queues
/// from the grid ODE solve with injections truncated at `t`.
pub fn limit_mi_on_path(
    cfg: &LimitImpactConfig,
    path: &RoughVolPath,
    t: f64,
    horizon_a: f64,
) -> Result<f64> {
    let t_idx = path.node_index(t)?;
    let a_idx = path.node_index(horizon_a)?;
    if a_idx < t_idx {
        return Err(Error::invalid("horizon_a", "need horizon_a >= t"));
    }
    let queues = solve_queue_ode(&cfg.queue, path, &cfg.profile, cfg.q0, t)?;
    let h = path.step;
    let mut total = 0.0;
    for k in 0..a_idx {
        let y0 = path.y[k];
        let y1 = path.y[k + 1];
        let d0 = cfg.kappa.value_real(queues.perturbed[k]) - cfg.kappa.value_real(queues.base[k]);
        let d1 =
            cfg.kappa.value_real(queues.perturbed[k + 1]) - cfg.kappa.value_real(queues.base[k + 1]);
        let dm = cfg.kappa.value_real(0.5 * (queues.perturbed[k] + queues.perturbed[k + 1]))
            - cfg.kappa.value_real(0.5 * (queues.base[k] + queues.base[k + 1]));
        total += h / 6.0 * (d0 * y0 + 4.0 * dm * 0.5 * (y0 + y1) + d1 * y1);
    }
    Ok(total)
}

/// Monte Carlo limit market impact at `t`: the mean over variance paths of
/// the realized functional on `[0, horizon_a]`. Fails upfront if the horizon
/// leaves more tail than the configured allowance. Path tasks are seeded
/// individually, so the estimate does not depend on how they are scheduled.
pub fn limit_market_impact(
    cfg: &LimitImpactConfig,
    t: f64,
    horizon_a: f64,
    n_paths: usize,
    tree: &SeedTree,
) -> Result<ImpactEstimate> {
    cfg.validate()?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "need n_paths > 0"));
    }
    let bound = cfg.tail_bound(t, horizon_a);
    if !(bound <= cfg.tail_tolerance) {
        return Err(Error::TailTolerance { bound, allowance: cfg.tail_tolerance });
    }
    let scheme = YScheme::new(&cfg.rough, cfg.step, horizon_a)?;
    let a_idx = cell_count(cfg.step, horizon_a)?;
    let t_idx = (t / cfg.step).round() as usize;
    let half_time = cfg.step * (a_idx / 2).max(t_idx) as f64;
    let values = (0..n_paths as u64)
        .into_par_iter()
        .map(|task| {
            let sub = tree.subtree(task);
            let path = scheme.sample(&mut sub.stream(0, StreamPurpose::Volatility));
            let full = limit_mi_on_path(cfg, &path, t, horizon_a)?;
            let half = limit_mi_on_path(cfg, &path, t, half_time)?;
            Ok((full, half))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut acc = RunningMoments::new();
    let mut acc_half = RunningMoments::new();
    for (full, half) in &values {
        acc.push(*full);
        acc_half.push(*half);
    }
    Ok(ImpactEstimate {
        value: acc.mean(),
        stderr: acc.std_err(),
        n_paths,
        horizon: horizon_a,
        tail_bound: bound,
        half_horizon_shift: acc_half.mean() - acc.mean(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepPoint {
    pub rate: f64,
    pub value: f64,
    pub stderr: f64,
    pub tail_bound: f64,
}

/// Impact magnitude against participation rate, with a log-log power-law
/// fit.
#[derive(Debug, Clone, Serialize)]
pub struct ParticipationSweep {
    pub points: Vec<SweepPoint>,
    pub exponent: f64,
    pub intercept: f64,
}

/// Sweeps the injection rate over `rates`, evaluating the limit impact at
/// the end of the execution window for each. One path ensemble is shared by
/// every rate (the variance does not depend on the injections), which
/// cancels most of the Monte Carlo noise out of the fitted exponent.
pub fn participation_sweep(
    base: &LimitImpactConfig,
    rates: &[f64],
    n_paths: usize,
    tree: &SeedTree,
) -> Result<ParticipationSweep> {
    base.validate()?;
    if rates.is_empty() || rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::invalid("rates", "need a nonempty grid of positive rates"));
    }
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "need n_paths > 0"));
    }
    let duration = match &base.profile {
        MetaorderSchedule::ConstantUntil { until, .. } => *until,
        _ => {
            return Err(Error::invalid(
                "profile",
                "the sweep varies the rate of a constant-rate profile",
            ))
        }
    };
    let cfgs: Vec<LimitImpactConfig> = rates
        .iter()
        .map(|&rate| {
            let mut cfg = base.clone();
            cfg.profile = MetaorderSchedule::ConstantUntil { rate, until: duration };
            cfg
        })
        .collect();
    // The widest horizon needed across the grid; every rate shares it so the
    // paths can be reused.
    let horizon_a = cfgs
        .iter()
        .map(|c| c.suggested_horizon(duration))
        .fold(0.0f64, f64::max);
    for cfg in &cfgs {
        let bound = cfg.tail_bound(duration, horizon_a);
        if !(bound <= cfg.tail_tolerance) {
            return Err(Error::TailTolerance { bound, allowance: cfg.tail_tolerance });
        }
    }
    let scheme = YScheme::new(&base.rough, base.step, horizon_a)?;
    let per_task = (0..n_paths as u64)
        .into_par_iter()
        .map(|task| {
            let sub = tree.subtree(task);
            let path = scheme.sample(&mut sub.stream(0, StreamPurpose::Volatility));
            cfgs.iter()
                .map(|cfg| limit_mi_on_path(cfg, &path, duration, horizon_a))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut moments = vec![RunningMoments::new(); rates.len()];
    for row in &per_task {
        for (acc, v) in moments.iter_mut().zip(row) {
            acc.push(*v);
        }
    }
    let points: Vec<SweepPoint> = rates
        .iter()
        .zip(&moments)
        .zip(&cfgs)
        .map(|((&rate, acc), cfg)| SweepPoint {
            rate,
            value: acc.mean(),
            stderr: acc.std_err(),
            tail_bound: cfg.tail_bound(duration, horizon_a),
        })
        .collect();
    let ln_rates: Vec<f64> = rates.iter().map(|r| r.ln()).collect();
    let ln_abs = points
        .iter()
        .map(|p| {
            if p.value.abs() > 0.0 {
                Ok(p.value.abs().ln())
            } else {
                Err(Error::DegenerateFit("vanishing impact in the participation sweep".into()))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let (exponent, intercept) = crate::stats::ols_line(&ln_rates, &ln_abs)?;
    Ok(ParticipationSweep { points, exponent, intercept })
}

/// Limit impact at three nested grids on shared Brownian paths: increments
/// are drawn at the finest level and aggregated upward, so the reported
/// shifts measure discretization alone.
#[derive(Debug, Clone, Serialize)]
pub struct RefinementReport {
    pub steps: [f64; 3],
    pub values: [f64; 3],
    /// Mean per-path shift from the coarse to the middle grid.
    pub shift_coarse: f64,
    pub shift_coarse_stderr: f64,
    /// Mean per-path shift from the middle to the fine grid.
    pub shift_fine: f64,
    pub shift_fine_stderr: f64,
    /// What one refinement may still move the estimate by, read off the
    /// coarse-to-middle shift.
    pub discretization_bound: f64,
}

pub fn refinement_report(
    cfg: &LimitImpactConfig,
    t: f64,
    horizon_a: f64,
    n_paths: usize,
    tree: &SeedTree,
) -> Result<RefinementReport> {
    cfg.validate()?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "need n_paths > 0"));
    }
    let fine_step = cfg.step / 4.0;
    let n_fine = cell_count(fine_step, horizon_a)?;
    let schemes = [
        YScheme::new(&cfg.rough, cfg.step, horizon_a)?,
        YScheme::new(&cfg.rough, cfg.step / 2.0, horizon_a)?,
        YScheme::new(&cfg.rough, fine_step, horizon_a)?,
    ];
    let rows = (0..n_paths as u64)
        .into_par_iter()
        .map(|task| {
            let sub = tree.subtree(task);
            let mut rng = sub.stream(0, StreamPurpose::Volatility);
            let root_h = fine_step.sqrt();
            let db_fine: Vec<f64> = (0..n_fine)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * root_h)
                .collect();
            let db_mid: Vec<f64> = db_fine.chunks(2).map(|c| c[0] + c[1]).collect();
            let db_coarse: Vec<f64> = db_mid.chunks(2).map(|c| c[0] + c[1]).collect();
            let coarse = schemes[0].from_increments(&db_coarse)?;
            let mid = schemes[1].from_increments(&db_mid)?;
            let fine = schemes[2].from_increments(&db_fine)?;
            Ok([
                limit_mi_on_path(cfg, &coarse, t, horizon_a)?,
                limit_mi_on_path(cfg, &mid, t, horizon_a)?,
                limit_mi_on_path(cfg, &fine, t, horizon_a)?,
            ])
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;
    let mut acc = [RunningMoments::new(), RunningMoments::new(), RunningMoments::new()];
    let mut d_coarse = RunningMoments::new();
    let mut d_fine = RunningMoments::new();
    for row in &rows {
        for (a, v) in acc.iter_mut().zip(row) {
            a.push(*v);
        }
        d_coarse.push(row[0] - row[1]);
        d_fine.push(row[1] - row[2]);
    }
    Ok(RefinementReport {
        steps: [cfg.step, cfg.step / 2.0, fine_step],
        values: [acc[0].mean(), acc[1].mean(), acc[2].mean()],
        shift_coarse: d_coarse.mean(),
        shift_coarse_stderr: d_coarse.std_err(),
        shift_fine: d_fine.mean(),
        shift_fine_stderr: d_fine.std_err(),
        discretization_bound: d_coarse.mean().abs() + 2.0 * d_coarse.std_err(),
    })
}

/// Map from limit objects to the micro model at horizon scale T. The
/// excitation kernel is the normalized heavy-tail shape
/// `(alpha/cutoff)(1 + t/cutoff)^{-1-alpha}` (tail constant `cutoff^alpha`)
/// scaled by a branching ratio that approaches one at the rate prescribed
/// by the variance parameters; baseline and book shapes rescale so that one
/// unit of limit queue corresponds to `T * rate_scale` micro orders.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RescalingMap {
    pub horizon_scale: f64,
    pub rough: RoughVolParams,
    pub cutoff: f64,
}

impl RescalingMap {
    pub fn validate(&self) -> Result<()> {
        self.rough.validate()?;
        if !(self.rough.alpha < 1.0) {
            return Err(Error::invalid("alpha", "need alpha < 1 for a heavy-tail micro kernel"));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::invalid("cutoff", "need cutoff > 0"));
        }
        if !(self.horizon_scale > 1.0 && self.horizon_scale.is_finite()) {
            return Err(Error::invalid("horizon_scale", "need horizon_scale > 1"));
        }
        let a = self.branching();
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::invalid(
                "horizon_scale",
                "horizon scale too small: branching ratio must land in (0, 1)",
            ));
        }
        Ok(())
    }

    /// `lim t^alpha * tail(t)` of the normalized kernel shape.
    pub fn tail_constant(&self) -> f64 {
        self.cutoff.powf(self.rough.alpha)
    }

    /// Branching ratio of the micro kernel.
    pub fn branching(&self) -> f64 {
        1.0 - self.rough.lambda * self.tail_constant() / (1.0 - self.rough.alpha)
            * self.horizon_scale.powf(-self.rough.alpha)
    }

    /// Long-run intensity scale `baseline / (1 - branching)`.
    pub fn rate_scale(&self) -> f64 {
        self.rough.mu_star * self.horizon_scale.powf(self.rough.alpha - 1.0)
            / (1.0 - self.branching())
    }

    /// Micro baseline intensity, defined through the rate scale so the
    /// defining identity holds by construction.
    pub fn baseline_rate(&self) -> f64 {
        self.rate_scale() * (1.0 - self.branching())
    }

    /// Orders per unit of limit queue.
    pub fn volume_scale(&self) -> f64 {
        self.horizon_scale * self.rate_scale()
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::PowerLawTail {
            scale: self.branching() * self.rough.alpha / self.cutoff,
            alpha: self.rough.alpha,
            cutoff: self.cutoff,
        }
    }

    /// Micro book shapes from the limit ones: intensities gain the rate
    /// scale, arguments contract by the volume scale.
    pub fn queue_model(&self, limit: &QueueModel) -> Result<QueueModel> {
        match limit {
            QueueModel::AffineDifference { c, d, floor } => Ok(QueueModel::AffineDifference {
                c: c / self.horizon_scale,
                d: d * self.rate_scale(),
                floor: floor * self.rate_scale(),
            }),
            QueueModel::Tabulated { .. } => Err(Error::invalid(
                "queue",
                "tabulated shapes do not rescale onto the integer queue grid",
            )),
        }
    }

    /// Micro price weight: the limit one read at the rescaled queue.
    pub fn kappa(&self, limit: &KappaSpec) -> Result<KappaSpec> {
        let v = self.volume_scale();
        let variant = match &limit.variant {
            KappaVariant::Constant { value } => KappaVariant::Constant { value: *value },
            KappaVariant::Affine { c, d } => KappaVariant::Affine { c: c / v, d: *d },
            KappaVariant::SqrtLog { c1, c2 } => KappaVariant::SqrtLog { c1: *c1, c2: c2 / v },
            KappaVariant::Tabulated { .. } => {
                return Err(Error::invalid(
                    "kappa",
                    "tabulated weights do not rescale onto the integer queue grid",
                ))
            }
        };
        Ok(KappaSpec { variant, kappa_max: limit.kappa_max })
    }

    /// Micro injection schedule: rates gain the rate scale, times stretch by
    /// the horizon scale.
    pub fn schedule(&self, limit: &MetaorderSchedule) -> Result<MetaorderSchedule> {
        let beta = self.rate_scale();
        let t = self.horizon_scale;
        let scaled = match limit {
            MetaorderSchedule::Off => MetaorderSchedule::Off,
            MetaorderSchedule::ConstantUntil { rate, until } => {
                MetaorderSchedule::ConstantUntil { rate: rate * beta, until: until * t }
            }
            MetaorderSchedule::PiecewiseConstant { times, rates } => {
                MetaorderSchedule::PiecewiseConstant {
                    times: times.iter().map(|x| x * t).collect(),
                    rates: rates.iter().map(|r| r * beta).collect(),
                }
            }
        };
        scaled.validate()?;
        Ok(scaled)
    }

    pub fn market_model(&self, queue: &QueueModel, kappa: &KappaSpec) -> Result<MarketModel> {
        self.validate()?;
        Ok(MarketModel {
            mu: self.baseline_rate(),
            kernel: self.kernel(),
            queue: self.queue_model(queue)?,
            kappa: self.kappa(kappa)?,
        })
    }
}

/// Limit-versus-micro comparison experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RescalingConfig {
    pub rough: RoughVolParams,
    pub cutoff: f64,
    pub queue: QueueModel,
    pub kappa: KappaSpec,
    pub profile: MetaorderSchedule,
    pub q0: f64,
    pub t_eval: f64,
    pub step: f64,
    pub tail_tolerance: f64,
    pub micro_paths: usize,
    pub limit_paths: usize,
    pub queue_paths: usize,
    /// Times at which the injection-free micro queue mean is checked against
    /// the mean limit trajectory.
    pub queue_probes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct QueueProbe {
    pub t: f64,
    pub micro_mean: f64,
    pub micro_stderr: f64,
    pub ode_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RescalingRung {
    pub horizon_scale: f64,
    pub branching: f64,
    pub rate_scale: f64,
    pub micro_mi: f64,
    pub rescaled_mi: f64,
    pub rescaled_stderr: f64,
    pub mi_distance: f64,
    pub queue_probes: Vec<QueueProbe>,
    pub queue_sup_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RescalingReport {
    pub limit_mi: f64,
    pub limit_stderr: f64,
    pub rungs: Vec<RescalingRung>,
}

/// Mean limit queue trajectory for an affine drift: the exact cell-wise
/// exponential integrator driven by the mean variance (the Mittag-Leffler
/// distribution function), linear within cells.
fn affine_mean_queue(
    c: f64,
    d: f64,
    q0: f64,
    law: &MittagLefflerLaw,
    step: f64,
    horizon: f64,
) -> Result<Vec<f64>> {
    let n = cell_count(step, horizon)?;
    let e = (c * step).exp();
    let j0 = (e - 1.0) / c;
    let j1 = (e - 1.0 - c * step) / (c * c);
    let mut q = Vec::with_capacity(n + 1);
    q.push(q0);
    let mut f_prev = law.cdf(0.0)?;
    for k in 0..n {
        let f_next = law.cdf(step * (k + 1) as f64)?;
        let a0 = d - f_prev;
        let b = -(f_next - f_prev) / step;
        q.push(e * q[k] + a0 * j0 + b * j1);
        f_prev = f_next;
    }
    Ok(q)
}

fn queue_value_at(events: &[BookEvent], q0: i64, s: f64) -> i64 {
    let idx = events.partition_point(|e| e.t <= s);
    if idx == 0 {
        q0
    } else {
        events[idx - 1].q_after
    }
}

/// Simulates the micro model along a ladder of horizon scales, rescales its
/// impact and queue statistics, and reports distances to the limit objects
/// computed on the same limit configuration.
pub fn rescaling_consistency(
    cfg: &RescalingConfig,
    ladder: &[f64],
    tree: &SeedTree,
) -> Result<RescalingReport> {
    if ladder.is_empty() {
        return Err(Error::invalid("ladder", "need at least one horizon scale"));
    }
    let limit_cfg = LimitImpactConfig {
        rough: cfg.rough,
        queue: cfg.queue.clone(),
        kappa: cfg.kappa.clone(),
        profile: cfg.profile.clone(),
        q0: cfg.q0,
        step: cfg.step,
        tail_tolerance: cfg.tail_tolerance,
    };
    limit_cfg.validate()?;
    let horizon_a = limit_cfg.suggested_horizon(cfg.t_eval);
    let limit =
        limit_market_impact(&limit_cfg, cfg.t_eval, horizon_a, cfg.limit_paths, &tree.subtree(0))?;
    let (c_drift, d_drift) = match &cfg.queue {
        QueueModel::AffineDifference { c, d, .. } => (*c, *d),
        _ => {
            return Err(Error::invalid(
                "queue",
                "the queue-mean oracle needs an affine drift",
            ))
        }
    };
    let law = cfg.rough.law()?;
    let probe_horizon = cfg
        .queue_probes
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(cfg.step);
    let mean_path = affine_mean_queue(c_drift, d_drift, cfg.q0, &law, cfg.step, probe_horizon)?;
    let mut rungs = Vec::with_capacity(ladder.len());
    for (i, &scale) in ladder.iter().enumerate() {
        let map = RescalingMap { horizon_scale: scale, rough: cfg.rough, cutoff: cfg.cutoff };
        let model = map.market_model(&cfg.queue, &cfg.kappa)?;
        let schedule = map.schedule(&cfg.profile)?;
        let volume = map.volume_scale();
        let truncation = cfg.t_eval * scale;
        let t_max =
            adaptive_horizon(&model, &schedule, truncation, cfg.tail_tolerance * volume)?;
        let sub = tree.subtree(1 + i as u64);
        let micro = market_impact_at(
            &model,
            &schedule,
            truncation,
            t_max,
            cfg.micro_paths,
            &sub.subtree(0),
        )?;
        let rescaled = micro.value / volume;
        let q0_micro = (cfg.q0 * volume).round();
        let probe_sub = sub.subtree(1);
        let probe_max_micro = probe_horizon * scale;
        let params = model.market_params();
        let mut probe_acc = vec![RunningMoments::new(); cfg.queue_probes.len()];
        for task in 0..cfg.queue_paths as u64 {
            let leaf = probe_sub.subtree(task);
            let market = crate::hawkes::simulate_hawkes(
                &params,
                probe_max_micro,
                &mut leaf.stream(0, StreamPurpose::MarketAsk),
            )?;
            let events = crate::orderbook::simulate_queue(
                &model.queue,
                q0_micro as i64,
                &market.times,
                probe_max_micro,
                &mut leaf.stream(0, StreamPurpose::BookAsk),
            )?;
            for (acc, &probe) in probe_acc.iter_mut().zip(&cfg.queue_probes) {
                let q = queue_value_at(&events, q0_micro as i64, probe * scale);
                acc.push(q as f64 / volume);
            }
        }
        let probes: Vec<QueueProbe> = cfg
            .queue_probes
            .iter()
            .zip(&probe_acc)
            .map(|(&t, acc)| {
                let idx = (t / cfg.step).round() as usize;
                QueueProbe {
                    t,
                    micro_mean: acc.mean(),
                    micro_stderr: acc.std_err(),
                    ode_mean: mean_path[idx.min(mean_path.len() - 1)],
                }
            })
            .collect();
        let queue_sup_distance = probes
            .iter()
            .map(|p| (p.micro_mean - p.ode_mean).abs())
            .fold(0.0f64, f64::max);
        rungs.push(RescalingRung {
            horizon_scale: scale,
            branching: map.branching(),
            rate_scale: map.rate_scale(),
            micro_mi: micro.value,
            rescaled_mi: rescaled,
            rescaled_stderr: micro.stderr / volume,
            mi_distance: (rescaled - limit.value).abs(),
            queue_probes: probes,
            queue_sup_distance,
        });
    }
    Ok(RescalingReport { limit_mi: limit.value, limit_stderr: limit.stderr, rungs })
}
