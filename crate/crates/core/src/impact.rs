//! Monte Carlo price reconstruction and pathwise market impact.
//!
//! The micro-scale price is the anticipation of all kappa-weighted market
//! orders: realized trades enter directly, upcoming ones through simulated
//! continuations. A continuation of the flow splits into a fresh stream
//! (constant baseline) plus one history stream per side (baseline = residual
//! excitation of realized events), superposed — the cluster decomposition of
//! a linear self-exciting process makes that exact. The fresh stream is
//! shared between the ask and bid continuations so its contribution cancels
//! pathwise where symmetry says it should.
//!
//! Market impact of a metaorder truncated at `t` averages
//! `sum (kappa(perturbed pre-trade queue) - kappa(base pre-trade queue))`
//! over coupled paths; with nonincreasing kappa every term is <= 0, which is
//! asserted, and the truncation tail is bounded through the exponential gap
//! decay.

use crate::error::{Error, Result};
use crate::hawkes::{simulate_hawkes, Baseline, EventStream, HawkesParams};
use crate::kernels::KernelSpec;
use crate::orderbook::{
    simulate_coupled, simulate_queue, BookEventKind, BookPath, KappaSpec, MetaorderSchedule,
    QueueModel, Side,
};
use crate::rng::{SeedTree, StreamPurpose};
use crate::stats::RunningMoments;
use rayon::prelude::*;
use serde::Serialize;

/// Everything the impact experiments need: market-order flow, book rates and
/// the price weight.
#[derive(Debug, Clone)]
pub struct MarketModel {
    pub mu: f64,
    pub kernel: KernelSpec,
    pub queue: QueueModel,
    pub kappa: KappaSpec,
}

impl MarketModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu", "need mu >= 0"));
        }
        self.kernel.validate()?;
        let a = self.kernel.l1_norm();
        if a >= 1.0 {
            return Err(Error::Unstable { norm: a });
        }
        self.queue.validate()?;
        if self.queue.mixing_margin(50, 5) <= 0.0 {
            return Err(Error::invalid("queue", "mixing margin must be positive"));
        }
        self.kappa.validate()
    }

    pub fn market_params(&self) -> HawkesParams {
        HawkesParams {
            baseline: Baseline::constant(self.mu).expect("validated"),
            kernel: self.kernel.clone(),
        }
    }

    /// Stationary mean market-order rate `mu / (1 - ||phi||)`.
    pub fn stationary_rate(&self) -> f64 {
        self.mu / (1.0 - self.kernel.l1_norm())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ImpactEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub horizon: f64,
    /// Analytic bound on what lies beyond `horizon`.
    pub tail_bound: f64,
    /// Estimate shift when the horizon is halved; large against stderr
    /// signals non-convergence in the horizon.
    pub half_horizon_shift: f64,
}

fn kappa_sum_over_trades(kappa: &KappaSpec, events: &[crate::orderbook::BookEvent]) -> f64 {
    events
        .iter()
        .filter(|e| e.kind == BookEventKind::Market)
        .map(|e| kappa.value(e.q_after + 1))
        .sum()
}

fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Price change `P_t - P_0`: the realized kappa-weighted net flow plus the
/// conditional expectation of the upcoming one, the latter averaged over
/// `n_mc` continuations of length `t_max - t`.
pub fn price_at(
    model: &MarketModel,
    history: &BookPath,
    t: f64,
    t_max: f64,
    n_mc: usize,
    tree: &SeedTree,
) -> Result<ImpactEstimate> {
    model.validate()?;
    if !(t >= 0.0 && t < t_max) {
        return Err(Error::invalid("t", "need 0 <= t < t_max"));
    }
    if n_mc == 0 {
        return Err(Error::invalid("n_mc", "need n_mc > 0"));
    }
    let realized: f64 = {
        let ask: f64 = history
            .pre_trade_queues(Side::Ask)
            .iter()
            .filter(|(s, _)| *s <= t)
            .map(|(_, q)| model.kappa.value(*q))
            .sum();
        let bid: f64 = history
            .pre_trade_queues(Side::Bid)
            .iter()
            .filter(|(s, _)| *s <= t)
            .map(|(_, q)| model.kappa.value(*q))
            .sum();
        ask - bid
    };
    let hist_ask: Vec<f64> =
        history.market_ask.times.iter().copied().filter(|&s| s <= t).collect();
    let hist_bid: Vec<f64> =
        history.market_bid.times.iter().copied().filter(|&s| s <= t).collect();
    let q_ask = history.queue_at(Side::Ask, t);
    let q_bid = history.queue_at(Side::Bid, t);
    let span = t_max - t;
    let fresh_params = model.market_params();
    let hat_ask = HawkesParams {
        baseline: Baseline::with_history(0.0, &model.kernel, &hist_ask, t)?,
        kernel: model.kernel.clone(),
    };
    let hat_bid = HawkesParams {
        baseline: Baseline::with_history(0.0, &model.kernel, &hist_bid, t)?,
        kernel: model.kernel.clone(),
    };
    let samples = (0..n_mc as u64)
        .into_par_iter()
        .map(|j| {
            let sub = tree.subtree(j);
            let fresh = simulate_hawkes(
                &fresh_params,
                span,
                &mut sub.stream(0, StreamPurpose::FreshMarket),
            )?;
            let na = simulate_hawkes(
                &hat_ask,
                span,
                &mut sub.stream(0, StreamPurpose::HistoryMarketAsk),
            )?;
            let nb = simulate_hawkes(
                &hat_bid,
                span,
                &mut sub.stream(0, StreamPurpose::HistoryMarketBid),
            )?;
            let stream_a = merge_sorted(&fresh.times, &na.times);
            let stream_b = merge_sorted(&fresh.times, &nb.times);
            let ev_a = simulate_queue(
                &model.queue,
                q_ask,
                &stream_a,
                span,
                &mut sub.stream(0, StreamPurpose::BookAsk),
            )?;
            let ev_b = simulate_queue(
                &model.queue,
                q_bid,
                &stream_b,
                span,
                &mut sub.stream(0, StreamPurpose::BookBid),
            )?;
            let full = kappa_sum_over_trades(&model.kappa, &ev_a)
                - kappa_sum_over_trades(&model.kappa, &ev_b);
            let half_span = 0.5 * span;
            let half: f64 = ev_a
                .iter()
                .filter(|e| e.kind == BookEventKind::Market && e.t <= half_span)
                .map(|e| model.kappa.value(e.q_after + 1))
                .sum::<f64>()
                - ev_b
                    .iter()
                    .filter(|e| e.kind == BookEventKind::Market && e.t <= half_span)
                    .map(|e| model.kappa.value(e.q_after + 1))
                    .sum::<f64>();
            Ok((full, half))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut corr = RunningMoments::new();
    let mut corr_half = RunningMoments::new();
    for (full, half) in samples {
        corr.push(full);
        corr_half.push(half);
    }
    Ok(ImpactEstimate {
        value: realized + corr.mean(),
        stderr: corr.std_err(),
        n_paths: n_mc,
        horizon: t_max,
        tail_bound: f64::NAN, // no metaorder; horizon tail is the half-shift
        half_horizon_shift: (corr.mean() - corr_half.mean()).abs(),
    })
}

/// `|c|` of the affine difference, or the worst mixing margin at gap 1.
fn gap_decay_rate(queue: &QueueModel) -> f64 {
    match queue {
        QueueModel::AffineDifference { c, .. } => c.abs(),
        _ => queue.mixing_margin(50, 1).max(f64::MIN_POSITIVE),
    }
}

/// Analytic bound on the impact mass beyond `t_max` for a metaorder whose
/// arrivals stop at `truncation`: injected gap decays like `e^{-m (s-u)}`,
/// trades sample it at the stationary rate, kappa is Lipschitz.
pub fn impact_tail_bound(
    model: &MarketModel,
    schedule: &MetaorderSchedule,
    truncation: f64,
    t_max: f64,
) -> f64 {
    let m = gap_decay_rate(&model.queue);
    let lip = model.kappa.lipschitz_bound();
    let mass = schedule.mass(truncation);
    lip * mass * model.stationary_rate() * (-m * (t_max - truncation)).exp() / m
}

/// Smallest horizon making [`impact_tail_bound`] <= `target`.
pub fn adaptive_horizon(
    model: &MarketModel,
    schedule: &MetaorderSchedule,
    truncation: f64,
    target: f64,
) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::invalid("target", "need target > 0"));
    }
    let m = gap_decay_rate(&model.queue);
    let at_truncation = impact_tail_bound(model, schedule, truncation, truncation);
    if at_truncation <= target {
        return Ok(truncation + 1.0 / m);
    }
    Ok(truncation + (at_truncation / target).ln() / m)
}

/// Expected market impact of the metaorder truncated at `truncation`:
/// coupled paths from 0, kappa-difference summed over shared market orders
/// up to `t_max`. With a nonincreasing kappa every path increment is
/// checked to be <= 0.
pub fn market_impact_at(
    model: &MarketModel,
    schedule: &MetaorderSchedule,
    truncation: f64,
    t_max: f64,
    n_paths: usize,
    tree: &SeedTree,
) -> Result<ImpactEstimate> {
    model.validate()?;
    schedule.validate()?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "need n_paths > 0"));
    }
    let params = model.market_params();
    let samples = (0..n_paths as u64)
        .into_par_iter()
        .map(|task| {
            let sub = tree.subtree(task);
            let market =
                simulate_hawkes(&params, t_max, &mut sub.stream(0, StreamPurpose::MarketAsk))?;
            let meta =
                schedule.sample_times(t_max, &mut sub.stream(0, StreamPurpose::Metaorder));
            coupled_kappa_difference(
                model,
                &market,
                &meta,
                truncation,
                t_max,
                &mut sub.stream(0, StreamPurpose::BookAsk),
            )
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut acc = RunningMoments::new();
    let mut acc_half = RunningMoments::new();
    for (full, half) in samples {
        acc.push(full);
        acc_half.push(half);
    }
    Ok(ImpactEstimate {
        value: acc.mean(),
        stderr: acc.std_err(),
        n_paths,
        horizon: t_max,
        tail_bound: impact_tail_bound(model, schedule, truncation, t_max),
        half_horizon_shift: (acc.mean() - acc_half.mean()).abs(),
    })
}

/// One coupled path's kappa-difference sum over trades in `[0, t_max]` and
/// in `[0, t_max/2]`.
fn coupled_kappa_difference(
    model: &MarketModel,
    market: &EventStream,
    meta: &[f64],
    truncation: f64,
    t_max: f64,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<(f64, f64)> {
    let path = simulate_coupled(&model.queue, 0, market, meta, truncation, t_max, rng)?;
    let mut full = 0.0;
    let mut half = 0.0;
    for (s, q_pre, qm_pre) in path.pre_trade_queues() {
        let d = model.kappa.value(qm_pre) - model.kappa.value(q_pre);
        full += d;
        if s <= 0.5 * t_max {
            half += d;
        }
    }
    Ok((full, half))
}

/// Impact of one unit limit order injected at `t0` into a warmed-up book,
/// measured over `[t0, t_max]`.
pub fn unit_injection_impact(
    model: &MarketModel,
    t0: f64,
    t_max: f64,
    n_paths: usize,
    tree: &SeedTree,
) -> Result<ImpactEstimate> {
    model.validate()?;
    if !(t0 > 0.0 && t0 < t_max) {
        return Err(Error::invalid("t0", "need 0 < t0 < t_max"));
    }
    let params = model.market_params();
    let samples = (0..n_paths as u64)
        .into_par_iter()
        .map(|task| {
            let sub = tree.subtree(task);
            let market =
                simulate_hawkes(&params, t_max, &mut sub.stream(0, StreamPurpose::MarketAsk))?;
            coupled_kappa_difference(
                model,
                &market,
                &[t0],
                t0,
                t_max,
                &mut sub.stream(0, StreamPurpose::BookAsk),
            )
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut acc = RunningMoments::new();
    let mut acc_half = RunningMoments::new();
    for (full, half) in samples {
        acc.push(full);
        acc_half.push(half);
    }
    let sched = MetaorderSchedule::ConstantUntil { rate: 0.0, until: 0.0 };
    let mut est = ImpactEstimate {
        value: acc.mean(),
        stderr: acc.std_err(),
        n_paths,
        horizon: t_max,
        tail_bound: impact_tail_bound(model, &sched, t0, t_max),
        half_horizon_shift: (acc.mean() - acc_half.mean()).abs(),
    };
    // single deterministic injection has unit mass
    let m = gap_decay_rate(&model.queue);
    est.tail_bound = model.kappa.lipschitz_bound()
        * model.stationary_rate()
        * (-m * (t_max - t0)).exp()
        / m;
    Ok(est)
}

/// Expected impact along a grid of truncation times, all grid points sharing
/// each path's market stream, metaorder arrivals, and book-randomness seed —
/// the common-random-number estimator of the trajectory.
pub fn impact_trajectory(
    model: &MarketModel,
    schedule: &MetaorderSchedule,
    grid: &[f64],
    tail_target: f64,
    n_paths: usize,
    tree: &SeedTree,
) -> Result<Vec<ImpactEstimate>> {
    model.validate()?;
    schedule.validate()?;
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < 0.0 {
        return Err(Error::invalid("grid", "need strictly increasing grid from >= 0"));
    }
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "need n_paths > 0"));
    }
    let t_last = *grid.last().unwrap();
    let t_max = adaptive_horizon(model, schedule, t_last, tail_target)?;
    let params = model.market_params();
    let rows = (0..n_paths as u64)
        .into_par_iter()
        .map(|task| {
            let sub = tree.subtree(task);
            let market =
                simulate_hawkes(&params, t_max, &mut sub.stream(0, StreamPurpose::MarketAsk))?;
            let meta = schedule.sample_times(t_max, &mut sub.stream(0, StreamPurpose::Metaorder));
            let book_seed = sub.stream(0, StreamPurpose::BookAsk);
            grid.iter()
                .map(|&trunc| {
                    coupled_kappa_difference(
                        model,
                        &market,
                        &meta,
                        trunc,
                        t_max,
                        &mut book_seed.clone(),
                    )
                })
                .collect::<Result<Vec<(f64, f64)>>>()
        })
        .collect::<Result<Vec<Vec<(f64, f64)>>>>()?;
    let mut acc: Vec<RunningMoments> = grid.iter().map(|_| RunningMoments::new()).collect();
    let mut acc_half: Vec<RunningMoments> = grid.iter().map(|_| RunningMoments::new()).collect();
    for row in rows {
        for (i, (full, half)) in row.into_iter().enumerate() {
            acc[i].push(full);
            acc_half[i].push(half);
        }
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &trunc)| ImpactEstimate {
            value: acc[i].mean(),
            stderr: acc[i].std_err(),
            n_paths,
            horizon: t_max,
            tail_bound: impact_tail_bound(model, schedule, trunc, t_max),
            half_horizon_shift: (acc[i].mean() - acc_half[i].mean()).abs(),
        })
        .collect())
}
