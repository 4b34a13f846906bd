//! Queue-reactive best-queue dynamics, the metaorder overlay, and the
//! coupled two-path simulation under shared randomness.
//!
//! Queues live on the integers (negative values allowed) and every order has
//! unit volume: `q_t = q_0 + L_t - C_t - N_t`. Limit and cancel intensities
//! are functions of the pre-jump queue, market orders arrive from a
//! self-exciting stream simulated upstream, and a metaorder adds unit limit
//! orders on the ask side at deterministic or Poisson times.
//!
//! The coupled pair (q, q-with-metaorder) is one joint Markov jump process:
//! common jumps fire at the smaller of the two intensities of each channel
//! and residual jumps at the difference, assigned to whichever path has the
//! larger rate. Both residual channels shrink the gap, so the perturbed path
//! stays >= the base path and the difference is nonincreasing except at
//! metaorder arrivals.

use crate::error::{Error, Result};
use crate::hawkes::EventStream;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Limit/cancel intensities as functions of the signed queue size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueueModel {
    /// `lambda_L(q) = floor + max(d + c q, 0)`,
    /// `lambda_C(q) = floor + max(-(d + c q), 0)`.
    ///
    /// Only the difference `lambda_L - lambda_C = d + c q` is pinned down by
    /// the drift; this split keeps the difference exact at every q (no
    /// clamping plateau), keeps both rates monotone the right way, and gives
    /// the coupled gap the exact decay rate `|c| k` at gap k. The floor rate
    /// is a reporting-relevant modeling knob and is echoed into run
    /// manifests.
    AffineDifference { c: f64, d: f64, floor: f64 },
    /// Rates tabulated on `q_min..q_min+len`; constant extension outside.
    Tabulated { q_min: i64, lambda_l: Vec<f64>, lambda_c: Vec<f64> },
}

impl QueueModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            QueueModel::AffineDifference { c, d, floor } => {
                if !(*c < 0.0 && c.is_finite()) {
                    return Err(Error::invalid("c", "need c < 0"));
                }
                if !d.is_finite() {
                    return Err(Error::invalid("d", "need finite d"));
                }
                if !(*floor > 0.0 && floor.is_finite()) {
                    return Err(Error::invalid("floor", "need floor > 0"));
                }
            }
            QueueModel::Tabulated { lambda_l, lambda_c, .. } => {
                if lambda_l.len() != lambda_c.len() || lambda_l.is_empty() {
                    return Err(Error::invalid("lambda_l", "tables must be nonempty, equal length"));
                }
                for v in lambda_l.iter().chain(lambda_c.iter()) {
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(Error::invalid("lambda_l", "rates must be finite and >= 0"));
                    }
                }
                if lambda_l.windows(2).any(|w| w[1] > w[0] + 1e-12) {
                    return Err(Error::invalid("lambda_l", "must be nonincreasing in q"));
                }
                if lambda_c.windows(2).any(|w| w[1] < w[0] - 1e-12) {
                    return Err(Error::invalid("lambda_c", "must be nondecreasing in q"));
                }
            }
        }
        Ok(())
    }

    pub fn lambda_l(&self, q: i64) -> f64 {
        match self {
            QueueModel::AffineDifference { c, d, floor } => floor + (d + c * q as f64).max(0.0),
            QueueModel::Tabulated { q_min, lambda_l, .. } => table_at(lambda_l, *q_min, q),
        }
    }

    pub fn lambda_c(&self, q: i64) -> f64 {
        match self {
            QueueModel::AffineDifference { c, d, floor } => floor + (-(d + c * q as f64)).max(0.0),
            QueueModel::Tabulated { q_min, lambda_c, .. } => table_at(lambda_c, *q_min, q),
        }
    }

    /// Drift `lambda_L(q) - lambda_C(q)`.
    pub fn drift(&self, q: i64) -> f64 {
        self.lambda_l(q) - self.lambda_c(q)
    }

    /// Drift at a real-valued queue, for the deterministic limit dynamics.
    /// Affine models are exact; tabulated ones interpolate the difference
    /// linearly between integer queues (clamped outside the table).
    pub fn drift_real(&self, q: f64) -> f64 {
        match self {
            QueueModel::AffineDifference { c, d, .. } => d + c * q,
            QueueModel::Tabulated { q_min, lambda_l, lambda_c } => {
                let diff_at = |idx: i64| table_at(lambda_l, *q_min, idx) - table_at(lambda_c, *q_min, idx);
                let lo = q.floor() as i64;
                let w = q - lo as f64;
                diff_at(lo) * (1.0 - w) + diff_at(lo + 1) * w
            }
        }
    }

    /// Worst-case restoring rate at gap `k` over a window of queue values:
    /// `m_k = inf_q [lambda_L(q) - lambda_L(q+k) + lambda_C(q+k) - lambda_C(q)]`.
    pub fn mixing_margin(&self, window: i64, k_max: i64) -> f64 {
        let mut worst = f64::INFINITY;
        for k in 1..=k_max {
            for q in -window..=window {
                let m = self.lambda_l(q) - self.lambda_l(q + k) + self.lambda_c(q + k)
                    - self.lambda_c(q);
                worst = worst.min(m);
            }
        }
        worst
    }
}

fn table_at(table: &[f64], q_min: i64, q: i64) -> f64 {
    let idx = q.saturating_sub(q_min).clamp(0, table.len() as i64 - 1) as usize;
    table[idx]
}

/// Per-trade price weight as a function of the pre-trade queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaVariant {
    Constant { value: f64 },
    /// `max(d + c q, 0)`, then capped.
    Affine { c: f64, d: f64 },
    /// `c1 * sqrt(log(exp(-c2 q) + 1))`, evaluated through a softplus so
    /// deep negative queues don't overflow.
    SqrtLog { c1: f64, c2: f64 },
    Tabulated { q_min: i64, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSpec {
    pub variant: KappaVariant,
    pub kappa_max: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl KappaSpec {
    pub fn constant(value: f64) -> Self {
        KappaSpec { variant: KappaVariant::Constant { value }, kappa_max: f64::MAX }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_max > 0.0) {
            return Err(Error::invalid("kappa_max", "need kappa_max > 0"));
        }
        match &self.variant {
            KappaVariant::Constant { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(Error::invalid("value", "need value >= 0"));
                }
            }
            KappaVariant::Affine { c, d } => {
                if !c.is_finite() || !d.is_finite() {
                    return Err(Error::invalid("c", "need finite coefficients"));
                }
            }
            KappaVariant::SqrtLog { c1, c2 } => {
                if !(c1.is_finite() && *c1 >= 0.0 && c2.is_finite() && *c2 > 0.0) {
                    return Err(Error::invalid("c1", "need c1 >= 0, c2 > 0"));
                }
            }
            KappaVariant::Tabulated { values, .. } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::invalid("values", "need finite nonnegative table"));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, q: i64) -> f64 {
        let raw = match &self.variant {
            KappaVariant::Constant { value } => *value,
            KappaVariant::Affine { c, d } => (d + c * q as f64).max(0.0),
            KappaVariant::SqrtLog { c1, c2 } => c1 * softplus(-c2 * q as f64).sqrt(),
            KappaVariant::Tabulated { q_min, values } => table_at(values, *q_min, q),
        };
        raw.min(self.kappa_max)
    }

    /// Upper bound on |dκ/dq|, used to bound truncated-horizon impact tails.
    pub fn lipschitz_bound(&self) -> f64 {
        match &self.variant {
            KappaVariant::Constant { .. } => 0.0,
            KappaVariant::Affine { c, .. } => c.abs(),
            KappaVariant::SqrtLog { c1, c2 } => {
                // |κ'| = c1 c2 σ(u) / (2 sqrt(softplus u)), u = -c2 q; scan
                // the hump — both tails vanish.
                let mut worst = 0.0f64;
                let mut u = -40.0f64;
                while u <= 40.0 {
                    let sig = 1.0 / (1.0 + (-u).exp());
                    let sp = softplus(u);
                    if sp > 0.0 {
                        worst = worst.max(c1 * c2 * sig / (2.0 * sp.sqrt()));
                    }
                    u += 0.01;
                }
                worst
            }
            KappaVariant::Tabulated { values, .. } => values
                .windows(2)
                .map(|w| (w[1] - w[0]).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Continuous-argument evaluation, for the deterministic limit where the
    /// queue is a real number.
    pub fn value_real(&self, q: f64) -> f64 {
        let raw = match &self.variant {
            KappaVariant::Constant { value } => *value,
            KappaVariant::Affine { c, d } => (d + c * q).max(0.0),
            KappaVariant::SqrtLog { c1, c2 } => c1 * softplus(-c2 * q).sqrt(),
            KappaVariant::Tabulated { q_min, values } => {
                let pos = q - *q_min as f64;
                if pos <= 0.0 {
                    values[0]
                } else if pos >= (values.len() - 1) as f64 {
                    *values.last().unwrap()
                } else {
                    let i = pos.floor() as usize;
                    let w = pos - i as f64;
                    values[i] * (1.0 - w) + values[i + 1] * w
                }
            }
        };
        raw.min(self.kappa_max)
    }
}

/// Arrival intensity of the metaorder's unit limit orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetaorderSchedule {
    Off,
    ConstantUntil { rate: f64, until: f64 },
    /// `rates[i]` on `[times[i], times[i+1])`; zero after the last knot.
    PiecewiseConstant { times: Vec<f64>, rates: Vec<f64> },
}

impl MetaorderSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            MetaorderSchedule::Off => Ok(()),
            MetaorderSchedule::ConstantUntil { rate, until } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::invalid("rate", "need rate >= 0"));
                }
                if !(until.is_finite() && *until >= 0.0) {
                    return Err(Error::invalid("until", "need until >= 0"));
                }
                Ok(())
            }
            MetaorderSchedule::PiecewiseConstant { times, rates } => {
                if times.len() != rates.len() + 1 || rates.is_empty() {
                    return Err(Error::invalid("times", "need len(times) = len(rates) + 1 >= 2"));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
                    return Err(Error::invalid("times", "knots must increase from >= 0"));
                }
                if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
                    return Err(Error::invalid("rates", "need rates >= 0"));
                }
                Ok(())
            }
        }
    }

    pub fn rate_at(&self, s: f64) -> f64 {
        match self {
            MetaorderSchedule::Off => 0.0,
            MetaorderSchedule::ConstantUntil { rate, until } => {
                if s < *until {
                    *rate
                } else {
                    0.0
                }
            }
            MetaorderSchedule::PiecewiseConstant { times, rates } => {
                if s < times[0] || s >= *times.last().unwrap() {
                    return 0.0;
                }
                let i = times.partition_point(|&t| t <= s) - 1;
                rates[i.min(rates.len() - 1)]
            }
        }
    }

    /// Total arrival mass `int_0^horizon nu`.
    pub fn mass(&self, horizon: f64) -> f64 {
        match self {
            MetaorderSchedule::Off => 0.0,
            MetaorderSchedule::ConstantUntil { rate, until } => rate * until.min(horizon),
            MetaorderSchedule::PiecewiseConstant { times, rates } => {
                let mut acc = 0.0;
                for (i, r) in rates.iter().enumerate() {
                    let a = times[i].min(horizon);
                    let b = times[i + 1].min(horizon);
                    if b > a {
                        acc += r * (b - a);
                    }
                }
                acc
            }
        }
    }

    /// Draw the arrival times on `[0, horizon]`, exact per constant segment.
    pub fn sample_times(&self, horizon: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
        let segments: Vec<(f64, f64, f64)> = match self {
            MetaorderSchedule::Off => vec![],
            MetaorderSchedule::ConstantUntil { rate, until } => {
                vec![(0.0, until.min(horizon), *rate)]
            }
            MetaorderSchedule::PiecewiseConstant { times, rates } => rates
                .iter()
                .enumerate()
                .map(|(i, r)| (times[i].min(horizon), times[i + 1].min(horizon), *r))
                .collect(),
        };
        let mut out = Vec::new();
        for (a, b, rate) in segments {
            if rate <= 0.0 || b <= a {
                continue;
            }
            let mut t = a;
            loop {
                t += -rng.gen::<f64>().ln() / rate;
                if t >= b {
                    break;
                }
                out.push(t);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Ask,
    Bid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BookEventKind {
    Limit,
    Cancel,
    Market,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BookEvent {
    pub t: f64,
    pub side: Side,
    pub kind: BookEventKind,
    pub q_after: i64,
}

/// One two-sided realization: merged event log plus the market streams that
/// drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct BookPath {
    pub events: Vec<BookEvent>,
    pub q0_ask: i64,
    pub q0_bid: i64,
    pub horizon: f64,
    pub market_ask: EventStream,
    pub market_bid: EventStream,
}

impl BookPath {
    /// Pre-trade queue value at each market order on `side`.
    pub fn pre_trade_queues(&self, side: Side) -> Vec<(f64, i64)> {
        self.events
            .iter()
            .filter(|e| e.side == side && e.kind == BookEventKind::Market)
            .map(|e| (e.t, e.q_after + 1))
            .collect()
    }

    pub fn queue_at(&self, side: Side, s: f64) -> i64 {
        let q0 = if side == Side::Ask { self.q0_ask } else { self.q0_bid };
        let mut q = q0;
        for e in &self.events {
            if e.t > s {
                break;
            }
            if e.side == side {
                q = e.q_after;
            }
        }
        q
    }

    /// Time average of the ask queue over `[0, horizon]`.
    pub fn time_average_ask(&self) -> f64 {
        let mut acc = 0.0;
        let mut q = self.q0_ask as f64;
        let mut t = 0.0;
        for e in &self.events {
            if e.side == Side::Ask {
                acc += q * (e.t - t);
                q = e.q_after as f64;
                t = e.t;
            }
        }
        acc += q * (self.horizon - t);
        acc / self.horizon
    }
}

/// Evolve one queue against a fixed market-order stream. Rates are constant
/// between jumps, so the clock race is exact.
fn evolve_side(
    qm: &QueueModel,
    side: Side,
    q0: i64,
    market: &[f64],
    horizon: f64,
    cap: usize,
    rng: &mut ChaCha12Rng,
    out: &mut Vec<BookEvent>,
) -> Result<()> {
    let mut t = 0.0f64;
    let mut q = q0;
    let mut next_market = 0usize;
    let mut made = 0usize;
    loop {
        let rl = qm.lambda_l(q);
        let rc = qm.lambda_c(q);
        let total = rl + rc;
        let t_jump = if total > 0.0 { t - rng.gen::<f64>().ln() / total } else { f64::INFINITY };
        let t_mkt = market.get(next_market).copied().unwrap_or(f64::INFINITY);
        if t_jump <= t_mkt {
            if t_jump > horizon {
                break;
            }
            let is_limit = rng.gen::<f64>() * total <= rl;
            q += if is_limit { 1 } else { -1 };
            out.push(BookEvent {
                t: t_jump,
                side,
                kind: if is_limit { BookEventKind::Limit } else { BookEventKind::Cancel },
                q_after: q,
            });
            t = t_jump;
        } else {
            if t_mkt > horizon {
                break;
            }
            q -= 1;
            out.push(BookEvent { t: t_mkt, side, kind: BookEventKind::Market, q_after: q });
            t = t_mkt;
            next_market += 1;
        }
        made += 1;
        if made >= cap {
            return Err(Error::EventCapExceeded { cap, t });
        }
    }
    Ok(())
}

/// One queue against a fixed market-order time list, labelled `Side::Ask`.
/// The continuation machinery uses this for both sides separately.
pub fn simulate_queue(
    qm: &QueueModel,
    q0: i64,
    market: &[f64],
    horizon: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<BookEvent>> {
    qm.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "need finite horizon > 0"));
    }
    let mut events = Vec::new();
    evolve_side(
        qm,
        Side::Ask,
        q0,
        market,
        horizon,
        crate::hawkes::DEFAULT_EVENT_CAP,
        rng,
        &mut events,
    )?;
    Ok(events)
}

/// Two-sided book against two market-order streams. Streams must be sorted
/// and confined to `[0, horizon]`.
pub fn simulate_book(
    qm: &QueueModel,
    q0_ask: i64,
    q0_bid: i64,
    market_ask: EventStream,
    market_bid: EventStream,
    horizon: f64,
    rng_ask: &mut ChaCha12Rng,
    rng_bid: &mut ChaCha12Rng,
) -> Result<BookPath> {
    qm.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "need finite horizon > 0"));
    }
    let cap = crate::hawkes::DEFAULT_EVENT_CAP;
    let mut events = Vec::new();
    evolve_side(qm, Side::Ask, q0_ask, &market_ask.times, horizon, cap, rng_ask, &mut events)?;
    evolve_side(qm, Side::Bid, q0_bid, &market_bid.times, horizon, cap, rng_bid, &mut events)?;
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(BookPath { events, q0_ask, q0_bid, horizon, market_ask, market_bid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoupledEventKind {
    /// Shared market order: both queues step down.
    Market,
    /// Limit order landing in both paths.
    LimitShared,
    /// Residual limit order: base path only (gap shrinks).
    LimitToBase,
    /// Cancellation hitting both paths.
    CancelShared,
    /// Residual cancellation: perturbed path only (gap shrinks).
    CancelToMeta,
    /// Metaorder arrival: perturbed path steps up (gap grows).
    Meta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledEvent {
    pub t: f64,
    pub kind: CoupledEventKind,
    pub q: i64,
    pub q_meta: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledBookPath {
    pub events: Vec<CoupledEvent>,
    pub q0: i64,
    pub horizon: f64,
    pub truncation: f64,
}

impl CoupledBookPath {
    pub fn queue_pair_at(&self, s: f64) -> (i64, i64) {
        let mut pair = (self.q0, self.q0);
        for e in &self.events {
            if e.t > s {
                break;
            }
            pair = (e.q, e.q_meta);
        }
        pair
    }

    /// Pre-trade base/perturbed queues at each market order.
    pub fn pre_trade_queues(&self) -> Vec<(f64, i64, i64)> {
        self.events
            .iter()
            .filter(|e| e.kind == CoupledEventKind::Market)
            .map(|e| (e.t, e.q + 1, e.q_meta + 1))
            .collect()
    }
}

/// Joint evolution of the base and metaorder-dressed ask queues, sharing the
/// market stream and the limit/cancel randomness. `meta_times` are the
/// metaorder arrivals already drawn; only those at or before `truncation`
/// act.
pub fn simulate_coupled(
    qm: &QueueModel,
    q0: i64,
    market: &EventStream,
    meta_times: &[f64],
    truncation: f64,
    horizon: f64,
    rng: &mut ChaCha12Rng,
) -> Result<CoupledBookPath> {
    qm.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "need finite horizon > 0"));
    }
    if !(truncation >= 0.0) {
        return Err(Error::invalid("truncation", "need truncation >= 0"));
    }
    let cap = crate::hawkes::DEFAULT_EVENT_CAP;
    let meta: Vec<f64> = meta_times
        .iter()
        .copied()
        .filter(|&t| t <= truncation && t <= horizon)
        .collect();
    let mut events = Vec::new();
    let (mut q, mut qm_path) = (q0, q0);
    let mut t = 0.0f64;
    let (mut i_mkt, mut i_meta) = (0usize, 0usize);
    loop {
        // Channel rates at the current pair. Monotonicity gives
        // lambda_l(q_meta) <= lambda_l(q) and lambda_c(q) <= lambda_c(q_meta)
        // whenever q_meta >= q, which the coupling preserves.
        let l_shared = qm.lambda_l(qm_path);
        let l_resid = qm.lambda_l(q) - l_shared;
        let c_shared = qm.lambda_c(q);
        let c_resid = qm.lambda_c(qm_path) - c_shared;
        let total = l_shared + l_resid + c_shared + c_resid;
        let t_jump = if total > 0.0 { t - rng.gen::<f64>().ln() / total } else { f64::INFINITY };
        let t_mkt = market.times.get(i_mkt).copied().unwrap_or(f64::INFINITY);
        let t_meta = meta.get(i_meta).copied().unwrap_or(f64::INFINITY);
        let t_ext = t_mkt.min(t_meta);
        if t_jump <= t_ext {
            if t_jump > horizon {
                break;
            }
            let mut u = rng.gen::<f64>() * total;
            let kind = if u < l_shared {
                q += 1;
                qm_path += 1;
                CoupledEventKind::LimitShared
            } else if {
                u -= l_shared;
                u < l_resid
            } {
                q += 1;
                CoupledEventKind::LimitToBase
            } else if {
                u -= l_resid;
                u < c_shared
            } {
                q -= 1;
                qm_path -= 1;
                CoupledEventKind::CancelShared
            } else {
                qm_path -= 1;
                CoupledEventKind::CancelToMeta
            };
            events.push(CoupledEvent { t: t_jump, kind, q, q_meta: qm_path });
            t = t_jump;
        } else {
            if t_ext > horizon {
                break;
            }
            if t_mkt <= t_meta {
                q -= 1;
                qm_path -= 1;
                events.push(CoupledEvent { t: t_mkt, kind: CoupledEventKind::Market, q, q_meta: qm_path });
                i_mkt += 1;
            } else {
                qm_path += 1;
                events.push(CoupledEvent { t: t_meta, kind: CoupledEventKind::Meta, q, q_meta: qm_path });
                i_meta += 1;
            }
            t = t_ext;
        }
        if events.len() >= cap {
            return Err(Error::EventCapExceeded { cap, t });
        }
    }
    Ok(CoupledBookPath { events, q0, horizon, truncation })
}

/// A completed stay of the queue gap at level `k`, ended by a decay jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayInterval {
    pub level: i64,
    pub wait: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffAudit {
    pub decays: Vec<DecayInterval>,
    pub injections: usize,
    pub max_diff: i64,
}

/// Walk the coupled log and certify the gap process: never negative, only
/// metaorder arrivals increase it, and it never exceeds initial gap plus
/// injections. Returns the completed decay waiting times for distributional
/// checks.
pub fn coupled_difference_jumps(path: &CoupledBookPath) -> Result<DiffAudit> {
    let mut diff = 0i64;
    let mut level_entered = 0.0f64;
    let mut decays = Vec::new();
    let mut injections = 0usize;
    let mut max_diff = 0i64;
    for e in &path.events {
        let new_diff = e.q_meta - e.q;
        if new_diff < 0 {
            return Err(Error::Audit(format!("negative gap {new_diff} at t={}", e.t)));
        }
        match e.kind {
            CoupledEventKind::Meta => {
                if new_diff != diff + 1 {
                    return Err(Error::Audit(format!("meta arrival moved gap {diff} -> {new_diff}")));
                }
                injections += 1;
                level_entered = e.t;
            }
            CoupledEventKind::LimitToBase | CoupledEventKind::CancelToMeta => {
                if new_diff != diff - 1 {
                    return Err(Error::Audit(format!("decay moved gap {diff} -> {new_diff}")));
                }
                decays.push(DecayInterval { level: diff, wait: e.t - level_entered });
                level_entered = e.t;
            }
            _ => {
                if new_diff != diff {
                    return Err(Error::Audit(format!(
                        "shared event moved gap {diff} -> {new_diff} at t={}",
                        e.t
                    )));
                }
            }
        }
        diff = new_diff;
        max_diff = max_diff.max(diff);
        if diff as u64 > injections as u64 {
            return Err(Error::Audit(format!("gap {diff} exceeds {injections} injections")));
        }
    }
    Ok(DiffAudit { decays, injections, max_diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hawkes::{simulate_hawkes, Baseline, HawkesParams};
    use crate::kernels::KernelSpec;
    use crate::rng::{SeedTree, StreamPurpose};
    use crate::stats::{ks_one_sided_excess, RunningMoments};

    fn book_model() -> QueueModel {
        QueueModel::AffineDifference { c: -1.0, d: 0.025, floor: 1.0 }
    }

    fn market_stream(mu: f64, norm: f64, horizon: f64, tree: &SeedTree, task: u64) -> EventStream {
        let params = HawkesParams {
            baseline: Baseline::constant(mu).unwrap(),
            kernel: KernelSpec::Exponential { rate: norm * 2.0, decay: 2.0 },
        };
        simulate_hawkes(&params, horizon, &mut tree.subtree(task).stream(0, StreamPurpose::MarketAsk))
            .unwrap()
    }

    fn empty_stream(horizon: f64) -> EventStream {
        EventStream { times: vec![], horizon }
    }

    /// Stationary mean of the no-market birth-death chain, solved by
    /// detailed balance on a wide window.
    fn birth_death_mean(qm: &QueueModel, window: i64) -> f64 {
        let mut log_pi = vec![0.0f64];
        for q in 0..window {
            let prev = *log_pi.last().unwrap();
            log_pi.push(prev + (qm.lambda_l(q) / qm.lambda_c(q + 1)).ln());
        }
        let mut log_pi_neg = Vec::new();
        let mut acc = 0.0;
        for q in (-window..0).rev() {
            acc += (qm.lambda_c(q + 1) / qm.lambda_l(q)).ln();
            log_pi_neg.push(acc);
        }
        let m = log_pi
            .iter()
            .chain(log_pi_neg.iter())
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        let mut mean = 0.0;
        for (q, lp) in log_pi.iter().enumerate() {
            let w = (lp - m).exp();
            z += w;
            mean += q as f64 * w;
        }
        for (i, lp) in log_pi_neg.iter().enumerate() {
            let w = (lp - m).exp();
            z += w;
            mean += -(i as f64 + 1.0) * w;
        }
        mean / z
    }

    #[test]
    fn market_only_drains_like_poisson() {
        let qm = QueueModel::Tabulated { q_min: 0, lambda_l: vec![0.0], lambda_c: vec![0.0] };
        let tree = SeedTree::new(101);
        let horizon = 10.0;
        let market = market_stream(1.0, 0.0, horizon, &tree, 0);
        let n = market.len() as i64;
        let path = simulate_book(
            &qm,
            5,
            3,
            market,
            empty_stream(horizon),
            horizon,
            &mut tree.stream(1, StreamPurpose::BookAsk),
            &mut tree.stream(1, StreamPurpose::BookBid),
        )
        .unwrap();
        assert!(path.events.iter().all(|e| e.kind == BookEventKind::Market && e.side == Side::Ask));
        assert_eq!(path.queue_at(Side::Ask, horizon), 5 - n);
        assert_eq!(path.queue_at(Side::Bid, horizon), 3);
    }

    #[test]
    fn stationary_mean_matches_birth_death_solve() {
        let qm = book_model();
        let oracle = birth_death_mean(&qm, 40);
        // the drift zero is at 0.025; the integer chain sits just below
        assert!((oracle - 0.025).abs() < 0.005, "oracle {oracle}");
        let tree = SeedTree::new(103);
        let horizon = 10_000.0;
        let path = simulate_book(
            &qm,
            0,
            0,
            empty_stream(horizon),
            empty_stream(horizon),
            horizon,
            &mut tree.stream(0, StreamPurpose::BookAsk),
            &mut tree.stream(0, StreamPurpose::BookBid),
        )
        .unwrap();
        let avg = path.time_average_ask();
        assert!((avg - oracle).abs() < 0.05, "time avg {avg} vs oracle {oracle}");
    }

    #[test]
    fn drift_balances_market_flow_in_stationarity() {
        // In stationarity the time-integrated drift lambda_L - lambda_C must
        // pay for every market order; the residual is a martingale whose
        // variance is the limit/cancel churn, hence the path averaging.
        let qm = QueueModel::AffineDifference { c: -1.0, d: 0.5, floor: 0.25 };
        let tree = SeedTree::new(107);
        let horizon = 4000.0;
        let mut drift_mass = 0.0;
        let mut n_mkt = 0.0;
        for task in 0..20u64 {
            let market = market_stream(0.15, 0.5, horizon, &tree, task);
            n_mkt += market.len() as f64;
            let path = simulate_book(
                &qm,
                0,
                0,
                market,
                empty_stream(horizon),
                horizon,
                &mut tree.subtree(task).stream(0, StreamPurpose::BookAsk),
                &mut tree.subtree(task).stream(0, StreamPurpose::BookBid),
            )
            .unwrap();
            let mut q = 0i64;
            let mut t = 0.0;
            for e in path.events.iter().filter(|e| e.side == Side::Ask) {
                drift_mass += qm.drift(q) * (e.t - t);
                q = e.q_after;
                t = e.t;
            }
            drift_mass += qm.drift(q) * (horizon - t);
        }
        let rel = (drift_mass - n_mkt).abs() / n_mkt;
        assert!(rel < 0.05, "drift mass {drift_mass} vs {n_mkt} market orders (rel {rel:.3})");
    }

    #[test]
    fn coupling_without_metaorder_is_degenerate() {
        let qm = book_model();
        let tree = SeedTree::new(109);
        let horizon = 200.0;
        let market = market_stream(0.1, 0.3, horizon, &tree, 0);
        let path = simulate_coupled(
            &qm,
            0,
            &market,
            &[],
            horizon,
            horizon,
            &mut tree.stream(1, StreamPurpose::BookAsk),
        )
        .unwrap();
        assert!(path.events.iter().all(|e| e.q == e.q_meta));
        assert!(path.events.iter().all(|e| !matches!(
            e.kind,
            CoupledEventKind::Meta | CoupledEventKind::LimitToBase | CoupledEventKind::CancelToMeta
        )));
        let audit = coupled_difference_jumps(&path).unwrap();
        assert_eq!(audit.injections, 0);
        assert_eq!(audit.max_diff, 0);
        assert!(audit.decays.is_empty());
    }

    #[test]
    fn coupled_paths_keep_order_and_shrink_between_arrivals() {
        let qm = book_model();
        let tree = SeedTree::new(113);
        let horizon = 60.0;
        for task in 0..200u64 {
            let market = market_stream(0.2, 0.4, horizon, &tree, task);
            let sched = MetaorderSchedule::ConstantUntil { rate: 0.5, until: 30.0 };
            let meta = sched.sample_times(
                horizon,
                &mut tree.subtree(task).stream(0, StreamPurpose::Metaorder),
            );
            let path = simulate_coupled(
                &qm,
                0,
                &market,
                &meta,
                horizon,
                horizon,
                &mut tree.subtree(task).stream(0, StreamPurpose::BookAsk),
            )
            .unwrap();
            let audit = coupled_difference_jumps(&path).unwrap();
            assert_eq!(audit.injections, meta.len());
        }
    }

    #[test]
    fn single_injection_gap_decays_exponentially() {
        let qm = book_model(); // c = -1
        let tree = SeedTree::new(127);
        let t0 = 1.0;
        let horizon = 6.0;
        let probes = [0.25, 0.5, 1.0, 2.0];
        let mut stats: Vec<RunningMoments> = probes.iter().map(|_| RunningMoments::new()).collect();
        for task in 0..4000u64 {
            let market = market_stream(0.2, 0.4, horizon, &tree, task);
            let path = simulate_coupled(
                &qm,
                0,
                &market,
                &[t0],
                horizon,
                horizon,
                &mut tree.subtree(task).stream(0, StreamPurpose::BookAsk),
            )
            .unwrap();
            for (j, &s) in probes.iter().enumerate() {
                let (q, qm_) = path.queue_pair_at(t0 + s);
                stats[j].push((qm_ - q) as f64);
            }
        }
        for (j, &s) in probes.iter().enumerate() {
            let expect = (-s_f64(s)).exp();
            let gap = (stats[j].mean() - expect).abs();
            assert!(
                gap < 3.0 * stats[j].std_err(),
                "s={s}: mean {} vs {expect} (se {})",
                stats[j].mean(),
                stats[j].std_err()
            );
        }
        fn s_f64(s: f64) -> f64 {
            s
        }
    }

    #[test]
    fn decay_waits_are_exponential_at_their_level() {
        let qm = book_model(); // margin at level k is exactly k
        let tree = SeedTree::new(131);
        let horizon = 50.0;
        let mut waits_by_level: std::collections::HashMap<i64, Vec<f64>> = Default::default();
        for task in 0..150u64 {
            let market = market_stream(0.2, 0.4, horizon, &tree, task);
            let sched = MetaorderSchedule::ConstantUntil { rate: 1.0, until: 40.0 };
            let meta = sched.sample_times(
                horizon,
                &mut tree.subtree(task).stream(0, StreamPurpose::Metaorder),
            );
            let path = simulate_coupled(
                &qm,
                0,
                &market,
                &meta,
                horizon,
                horizon,
                &mut tree.subtree(task).stream(0, StreamPurpose::BookAsk),
            )
            .unwrap();
            for d in coupled_difference_jumps(&path).unwrap().decays {
                waits_by_level.entry(d.level).or_default().push(d.wait);
            }
        }
        // Stays can end by injection instead of decay, so completed decay
        // waits race against the metaorder clock and come out stochastically
        // SMALLER than Exp(m_k); the Lemma claims dominance, so the check is
        // one-sided: the empirical law must not have extra tail mass.
        for level in 1..=2i64 {
            let waits = &waits_by_level[&level];
            assert!(waits.len() > 800, "level {level}: only {} decays", waits.len());
            let rate = level as f64; // m_k = |c| k
            let excess =
                ks_one_sided_excess(waits, |w| 1.0 - (-rate * w).exp()).unwrap();
            let n = waits.len() as f64;
            let p = (-2.0 * n * excess * excess).exp();
            assert!(p > 0.01, "level {level}: one-sided excess {excess}, p = {p}");
        }
    }

    #[test]
    fn kappa_variants_behave() {
        let sq = KappaSpec {
            variant: KappaVariant::SqrtLog { c1: 0.01, c2: 1000.0 },
            kappa_max: 1e6,
        };
        sq.validate().unwrap();
        // stable far out on both sides, monotone nonincreasing
        assert!(sq.value(-1000).is_finite());
        assert_eq!(sq.value(1000), 0.0);
        let mut prev = f64::INFINITY;
        for q in -50..=50 {
            let v = sq.value(q);
            assert!(v <= prev && v >= 0.0);
            prev = v;
        }
        // softplus route matches the naive formula where the naive one works
        let naive = 0.01 * ((-1000.0f64 * -0.3).exp() + 1.0).ln().sqrt();
        assert!((sq.value_real(-0.3) - naive).abs() < 1e-12 * naive);

        let aff = KappaSpec { variant: KappaVariant::Affine { c: -2.0, d: 1.0 }, kappa_max: 0.8 };
        assert_eq!(aff.value(5), 0.0); // clamped below
        assert_eq!(aff.value(0), 0.8); // capped above
        assert!((aff.value_real(0.3) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn mixing_margin_is_exact_for_affine() {
        let qm = QueueModel::AffineDifference { c: -0.7, d: 0.2, floor: 0.5 };
        for k in 1..=4i64 {
            let m = qm.mixing_margin(30, k);
            assert!((m - 0.7).abs() < 1e-12, "k={k}: {m}"); // min over k of 0.7 k
        }
        let bad = QueueModel::Tabulated {
            q_min: 0,
            lambda_l: vec![1.0, 1.2, 0.9],
            lambda_c: vec![0.5, 0.5, 0.5],
        };
        assert!(bad.validate().is_err());
        let flat = QueueModel::Tabulated {
            q_min: -1,
            lambda_l: vec![1.0, 1.0, 1.0],
            lambda_c: vec![0.5, 0.5, 0.5],
        };
        flat.validate().unwrap();
        assert_eq!(flat.mixing_margin(1, 2), 0.0); // no restoring force
    }

    #[test]
    fn coupled_runs_are_reproducible() {
        let qm = book_model();
        let tree = SeedTree::new(137);
        let horizon = 80.0;
        let market = market_stream(0.2, 0.4, horizon, &tree, 0);
        let sched = MetaorderSchedule::ConstantUntil { rate: 0.3, until: 40.0 };
        let run = |tree: &SeedTree| {
            let meta = sched.sample_times(horizon, &mut tree.stream(5, StreamPurpose::Metaorder));
            simulate_coupled(
                &qm,
                0,
                &market,
                &meta,
                horizon,
                horizon,
                &mut tree.stream(5, StreamPurpose::BookAsk),
            )
            .unwrap()
        };
        assert_eq!(run(&tree), run(&tree));
    }

    #[test]
    fn audit_flags_corrupted_logs() {
        let path = CoupledBookPath {
            events: vec![CoupledEvent {
                t: 1.0,
                kind: CoupledEventKind::LimitShared,
                q: 1,
                q_meta: 0,
            }],
            q0: 0,
            horizon: 2.0,
            truncation: 2.0,
        };
        assert!(matches!(coupled_difference_jumps(&path), Err(Error::Audit(_))));
        let path = CoupledBookPath {
            events: vec![CoupledEvent {
                t: 1.0,
                kind: CoupledEventKind::CancelToMeta,
                q: 0,
                q_meta: 1,
            }],
            q0: 0,
            horizon: 2.0,
            truncation: 2.0,
        };
        assert!(matches!(coupled_difference_jumps(&path), Err(Error::Audit(_))));
    }

    #[test]
    fn schedule_mass_and_sampling_agree() {
        let sched = MetaorderSchedule::PiecewiseConstant {
            times: vec![0.0, 1.0, 3.0, 4.0],
            rates: vec![2.0, 0.5, 3.0],
        };
        sched.validate().unwrap();
        assert!((sched.mass(10.0) - 6.0).abs() < 1e-12);
        assert!((sched.mass(2.0) - 2.5).abs() < 1e-12);
        assert_eq!(sched.rate_at(0.5), 2.0);
        assert_eq!(sched.rate_at(2.9), 0.5);
        assert_eq!(sched.rate_at(5.0), 0.0);
        let tree = SeedTree::new(139);
        let mut counts = RunningMoments::new();
        for task in 0..4000u64 {
            let ts = sched.sample_times(10.0, &mut tree.subtree(task).stream(0, StreamPurpose::Metaorder));
            assert!(ts.windows(2).all(|w| w[1] > w[0]));
            counts.push(ts.len() as f64);
        }
        assert!((counts.mean() - 6.0).abs() < 4.0 * counts.std_err());
    }

    #[test]
    fn real_drift_extends_the_integer_one() {
        let affine = QueueModel::AffineDifference { c: -0.7, d: 0.2, floor: 0.25 };
        for &q in &[-3.25f64, 0.0, 1.5, 10.0] {
            assert!((affine.drift_real(q) - (0.2 - 0.7 * q)).abs() < 1e-15);
        }
        let tab = QueueModel::Tabulated {
            q_min: -1,
            lambda_l: vec![0.4, 0.3, 0.2],
            lambda_c: vec![0.1, 0.1, 0.5],
        };
        for q in -1..=1 {
            assert_eq!(tab.drift_real(q as f64), tab.drift(q));
        }
        let mid = 0.5 * (tab.drift(0) + tab.drift(1));
        assert!((tab.drift_real(0.5) - mid).abs() < 1e-15);
        // clamped flat outside the table
        assert_eq!(tab.drift_real(-9.0), tab.drift(-1));
    }
}
