//! Closed-form approximations layered on the simulation stack: the
//! instantaneous impact of a single resting order, the stationary shape of
//! metaorder impact as a function of participation rate, power-law fitting
//! of impact curves, and a broker's after-the-fact decomposition of a mixed
//! limit/market strategy.

use crate::error::{Error, Result};
use crate::hawkes::simulate_hawkes;
use crate::impact::MarketModel;
use crate::orderbook::{simulate_queue, KappaSpec, MetaorderSchedule, QueueModel};
use crate::quadrature::adaptive_simpson;
use crate::rng::{SeedTree, StreamPurpose};
use crate::scaling::{LinearImpact, RoughVolPath};
use crate::stats::{ols_line, RunningMoments};
use rayon::prelude::*;
use serde::Serialize;

const INVERSE_TOL: f64 = 1e-10;
const BROKER_QUAD_TOL: f64 = 1e-10;

/// Expected price displacement from one unit limit order resting on the ask
/// side, at stationarity: `-(c_kappa / c_lambda) * mu / (1 - phi_norm)`.
///
/// Sign convention: ask-side liquidity damps the kappa-weighted up-pressure,
/// so with the usual decreasing kappa (`c_kappa < 0`) the value is negative.
/// A bid-side order flips the sign.
pub fn instantaneous_impact(
    c_kappa: f64,
    c_lambda: f64,
    mu: f64,
    phi_norm: f64,
) -> Result<f64> {
    if !(c_lambda < 0.0 && c_lambda.is_finite()) {
        return Err(Error::invalid("c_lambda", "need mean reversion c_lambda < 0"));
    }
    if !(0.0..1.0).contains(&phi_norm) {
        return Err(Error::invalid("phi_norm", "need kernel mass in [0, 1)"));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::invalid("mu", "need baseline mu >= 0"));
    }
    if !c_kappa.is_finite() {
        return Err(Error::invalid("c_kappa", "need finite c_kappa"));
    }
    Ok(-(c_kappa / c_lambda) * mu / (1.0 - phi_norm))
}

/// Stationary-state description for the participation-rate shape: the book
/// relaxes to where the arrival/cancel difference balances the trade rate
/// `m`, and a metaorder of rate `gamma` shifts that balance point.
#[derive(Debug, Clone, Serialize)]
pub struct ShapeConfig {
    pub kappa: KappaSpec,
    /// Supplies the difference function `D` through its real-argument drift.
    pub queue: QueueModel,
    /// Stationary level of the modulating variance, i.e. the trade rate the
    /// book equilibrates against.
    pub m: f64,
}

impl ShapeConfig {
    pub fn validate(&self) -> Result<()> {
        self.kappa.validate()?;
        self.queue.validate()?;
        if !self.m.is_finite() {
            return Err(Error::invalid("m", "need finite stationary level"));
        }
        match &self.queue {
            QueueModel::AffineDifference { c, .. } => {
                if !(*c < 0.0) {
                    return Err(Error::invalid("queue", "difference must be decreasing: c < 0"));
                }
            }
            QueueModel::Tabulated { lambda_l, lambda_c, .. } => {
                let decreasing = lambda_l
                    .iter()
                    .zip(lambda_c)
                    .map(|(l, c)| l - c)
                    .collect::<Vec<f64>>()
                    .windows(2)
                    .all(|w| w[1] < w[0]);
                if !decreasing {
                    return Err(Error::invalid(
                        "queue",
                        "tabulated difference must be strictly decreasing",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Queue level the unperturbed book settles at: `D^{-1}(m)`.
    pub fn stationary_queue(&self) -> Result<f64> {
        self.validate()?;
        difference_inverse(&self.queue, self.m)
    }
}

/// Inverse of the decreasing difference function by bracketing + bisection.
fn difference_inverse(queue: &QueueModel, y: f64) -> Result<f64> {
    let mut lo = -1.0f64;
    let mut expansions = 0;
    while queue.drift_real(lo) < y {
        lo *= 2.0;
        expansions += 1;
        if expansions > 40 {
            return Err(Error::Range {
                what: "difference inverse",
                reason: format!("target {y} above the attainable difference"),
            });
        }
    }
    let mut hi = 1.0f64;
    expansions = 0;
    while queue.drift_real(hi) > y {
        hi *= 2.0;
        expansions += 1;
        if expansions > 40 {
            return Err(Error::Range {
                what: "difference inverse",
                reason: format!("target {y} below the attainable difference"),
            });
        }
    }
    while hi - lo > INVERSE_TOL {
        let mid = 0.5 * (lo + hi);
        if queue.drift_real(mid) >= y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Stationary impact shape at participation rate `gamma`:
/// `kappa(D^{-1}(m - gamma)) - kappa(D^{-1}(m))`. Positive `gamma` adds
/// liquidity (queue grows, value <= 0 for decreasing kappa); negative
/// `gamma` consumes it.
pub fn asymptotic_shape(cfg: &ShapeConfig, gamma: f64) -> Result<f64> {
    cfg.validate()?;
    if !gamma.is_finite() {
        return Err(Error::invalid("gamma", "need finite gamma"));
    }
    let base = cfg.kappa.value_real(difference_inverse(&cfg.queue, cfg.m)?);
    let shifted = cfg.kappa.value_real(difference_inverse(&cfg.queue, cfg.m - gamma)?);
    Ok(shifted - base)
}

/// [`asymptotic_shape`] over a grid, sharing the base point.
pub fn shape_curve(cfg: &ShapeConfig, gammas: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    if gammas.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("gamma", "need finite gamma grid"));
    }
    let base = cfg.kappa.value_real(difference_inverse(&cfg.queue, cfg.m)?);
    gammas
        .iter()
        .map(|&g| {
            Ok(cfg.kappa.value_real(difference_inverse(&cfg.queue, cfg.m - g)?) - base)
        })
        .collect()
}

/// Log-log least-squares fit `y = prefactor * x^exponent`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

pub fn fit_power_law(pairs: &[(f64, f64)]) -> Result<PowerLawFit> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateFit("power-law fit needs at least three points".into()));
    }
    if pairs
        .iter()
        .any(|(x, y)| !(x.is_finite() && y.is_finite() && *x > 0.0 && *y > 0.0))
    {
        return Err(Error::DegenerateFit(
            "power-law fit needs strictly positive finite pairs".into(),
        ));
    }
    let lx: Vec<f64> = pairs.iter().map(|(x, _)| x.ln()).collect();
    let ly: Vec<f64> = pairs.iter().map(|(_, y)| y.ln()).collect();
    let (exponent, intercept) = ols_line(&lx, &ly)?;
    let mean = ly.iter().sum::<f64>() / ly.len() as f64;
    let ss_tot: f64 = ly.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - (intercept + exponent * x)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(PowerLawFit { exponent, prefactor: intercept.exp(), r_squared })
}

/// A broker's record of one execution: limit-order intensity `f`,
/// market-order intensity `g`, and the model constants the two impact legs
/// need.
#[derive(Debug, Clone, Serialize)]
pub struct StrategyProfile {
    pub limit_intensity: MetaorderSchedule,
    pub market_intensity: MetaorderSchedule,
    pub c_kappa: f64,
    pub c_lambda: f64,
    /// Stationary average of kappa over the base book, scaling the
    /// market-order leg; see [`kappa_star_mc`].
    pub kappa_star: f64,
    pub alpha: f64,
    pub lambda: f64,
}

impl StrategyProfile {
    pub fn validate(&self) -> Result<()> {
        self.limit_intensity.validate()?;
        self.market_intensity.validate()?;
        if !(self.c_lambda < 0.0 && self.c_lambda.is_finite()) {
            return Err(Error::invalid("c_lambda", "need mean reversion c_lambda < 0"));
        }
        if !self.c_kappa.is_finite() {
            return Err(Error::invalid("c_kappa", "need finite c_kappa"));
        }
        if !(self.kappa_star.is_finite() && self.kappa_star >= 0.0) {
            return Err(Error::invalid("kappa_star", "need kappa_star >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", "need alpha in (0, 1)"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "need lambda > 0"));
        }
        Ok(())
    }
}

/// Impact decomposition at one time: the limit leg from the linear limit
/// formula on the supplied variance path, the market leg from the propagator
/// quadrature, and their sum under the legs-add-independently approximation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BrokerRow {
    pub t: f64,
    pub limit_leg: f64,
    pub market_leg: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BrokerEvaluation {
    pub rows: Vec<BrokerRow>,
    /// The two legs are assessed independently and summed; cross effects
    /// (market orders moving the queue the limit leg sees) are ignored.
    pub independent_legs: bool,
}

fn schedule_knots(schedule: &MetaorderSchedule) -> Vec<f64> {
    match schedule {
        MetaorderSchedule::Off => vec![],
        MetaorderSchedule::ConstantUntil { until, .. } => vec![0.0, *until],
        MetaorderSchedule::PiecewiseConstant { times, .. } => times.clone(),
    }
}

/// `int_0^t g(s) (1 + lambda^{-1} (t-s)^{-alpha}) ds`, the transient kernel
/// integrated with the substitution `w = (t-s)^{1-alpha}` which absorbs the
/// endpoint singularity; pieces split at the schedule's knots.
fn market_leg_quadrature(
    g: &MetaorderSchedule,
    t: f64,
    alpha: f64,
    lambda: f64,
) -> Result<f64> {
    let mut cuts: Vec<f64> = schedule_knots(g)
        .into_iter()
        .filter(|&k| k > 0.0 && k < t)
        .collect();
    cuts.push(0.0);
    cuts.push(t);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let p = 1.0 - alpha;
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        // sample strictly inside the piece: the right endpoint belongs to
        // the next piece, and the w-map round-trip can land just outside
        let delta = 1e-9 * (b - a);
        let rate_inside = |s: f64| g.rate_at(s.min(b - delta).max(a));
        total += adaptive_simpson(&rate_inside, a, b, BROKER_QUAD_TOL, 40)?;
        // w-substitution: s = t - w^{1/p}, ds (t-s)^{-alpha} = dw / p
        let (wa, wb) = ((t - b).powf(p), (t - a).powf(p));
        let transient = adaptive_simpson(
            &|w| rate_inside(t - w.powf(1.0 / p)),
            wa,
            wb,
            BROKER_QUAD_TOL,
            40,
        )?;
        total += transient / (p * lambda);
    }
    Ok(total)
}

/// Evaluate both impact legs along `grid` (times on the path's lattice).
pub fn broker_evaluation(
    profile: &StrategyProfile,
    path: &RoughVolPath,
    grid: &[f64],
) -> Result<BrokerEvaluation> {
    profile.validate()?;
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < 0.0 {
        return Err(Error::invalid("grid", "need strictly increasing times from >= 0"));
    }
    let table = LinearImpact::new(
        &path.params,
        &profile.limit_intensity,
        profile.c_kappa,
        profile.c_lambda,
        path.step,
    )?;
    let rows = grid
        .iter()
        .map(|&t| {
            let limit_leg = table.value(path, t, None)?;
            let market_leg = profile.kappa_star
                * market_leg_quadrature(
                    &profile.market_intensity,
                    t,
                    profile.alpha,
                    profile.lambda,
                )?;
            Ok(BrokerRow { t, limit_leg, market_leg, total: limit_leg + market_leg })
        })
        .collect::<Result<Vec<BrokerRow>>>()?;
    Ok(BrokerEvaluation { rows, independent_legs: true })
}

/// Stationary average of kappa over the base book by long-run simulation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KappaStarEstimate {
    pub value: f64,
    pub stderr: f64,
    pub burn_in: f64,
    pub horizon: f64,
    pub n_paths: usize,
}

/// Time-average of `kappa(q_t)` over `[burn_in, horizon]`, averaged across
/// paths; the burn-in is ten queue mean-reversion times.
pub fn kappa_star_mc(
    model: &MarketModel,
    horizon: f64,
    n_paths: usize,
    tree: &SeedTree,
) -> Result<KappaStarEstimate> {
    model.validate()?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "need n_paths > 0"));
    }
    let reversion = match &model.queue {
        QueueModel::AffineDifference { c, .. } => c.abs(),
        other => other.mixing_margin(50, 1).max(f64::MIN_POSITIVE),
    };
    let burn_in = 10.0 / reversion;
    if !(horizon.is_finite() && horizon > burn_in) {
        return Err(Error::invalid(
            "horizon",
            format!("need horizon above the {burn_in:.3} burn-in"),
        ));
    }
    let params = model.market_params();
    let averages = (0..n_paths as u64)
        .into_par_iter()
        .map(|task| {
            let sub = tree.subtree(task);
            let market =
                simulate_hawkes(&params, horizon, &mut sub.stream(0, StreamPurpose::MarketAsk))?;
            let events = simulate_queue(
                &model.queue,
                0,
                &market.times,
                horizon,
                &mut sub.stream(0, StreamPurpose::BookAsk),
            )?;
            let mut acc = 0.0;
            let mut q = 0i64;
            let mut prev = 0.0f64;
            for e in &events {
                let a = prev.max(burn_in);
                let b = e.t.min(horizon);
                if b > a {
                    acc += model.kappa.value(q) * (b - a);
                }
                q = e.q_after;
                prev = e.t;
            }
            let a = prev.max(burn_in);
            if horizon > a {
                acc += model.kappa.value(q) * (horizon - a);
            }
            Ok(acc / (horizon - burn_in))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut moments = RunningMoments::new();
    for v in averages {
        moments.push(v);
    }
    Ok(KappaStarEstimate {
        value: moments.mean(),
        stderr: moments.std_err(),
        burn_in,
        horizon,
        n_paths,
    })
}
