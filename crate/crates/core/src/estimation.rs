//! Calibration of the price weight from discretely sampled prices.
//!
//! The simplified price adds, for every market order, the pre-trade weight
//! `kappa(q)` propagated through the stationary response `xi`, optionally
//! plus an independent Brownian component. With an exponential kernel the
//! response is `xi(u) = 1 + c e^{-beta u}`, so the whole path evaluates in
//! one sweep with a single decaying accumulator per side.
//!
//! Realized variance over fine sampling approaches the per-trade jump sum
//! `xi(0)^2 sum kappa^2(q)`; the estimators invert that relation, either
//! directly (constant weight), through a two-factor window regression to
//! split off the Brownian part, or through a queue-mark regression when
//! `kappa^2` is affine in the queue.

use crate::error::{Error, Result};
use crate::hawkes::simulate_hawkes;
use crate::impact::MarketModel;
use crate::kernels::KernelSpec;
use crate::orderbook::{simulate_book, Side};
use crate::rng::{SeedTree, StreamPurpose};
use crate::stats::ols_two;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

/// Uniformly sampled price path with per-trade queue marks on both sides.
///
/// `samples[k]` is the price at `k * step`; marks record `(time, pre-trade
/// queue)` for every market order up to the last sample time.
#[derive(Debug, Clone, Serialize)]
pub struct SampledPrice {
    pub step: f64,
    pub samples: Vec<f64>,
    pub ask_marks: Vec<(f64, i64)>,
    pub bid_marks: Vec<(f64, i64)>,
}

impl SampledPrice {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("step", "need finite step > 0"));
        }
        if self.samples.len() < 2 {
            return Err(Error::invalid("samples", "need at least two samples"));
        }
        if self.samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("samples", "need finite samples"));
        }
        let horizon = self.horizon();
        for marks in [&self.ask_marks, &self.bid_marks] {
            let sorted = marks.windows(2).all(|w| w[0].0 <= w[1].0);
            let inside = marks.iter().all(|m| m.0 > 0.0 && m.0 <= horizon);
            if !(sorted && inside) {
                return Err(Error::invalid("marks", "need sorted marks in (0, horizon]"));
            }
        }
        Ok(())
    }

    /// Time of the last sample.
    pub fn horizon(&self) -> f64 {
        self.step * (self.samples.len() - 1) as f64
    }

    pub fn trade_count(&self) -> usize {
        self.ask_marks.len() + self.bid_marks.len()
    }
}

/// Exponential-kernel response as `xi(u) = 1 + c e^{-beta u}`.
fn response_coeffs(kernel: &KernelSpec) -> Result<(f64, f64)> {
    match kernel {
        KernelSpec::Exponential { rate, decay } => {
            let a = rate / decay;
            Ok((a / (1.0 - a), *decay))
        }
        _ => Err(Error::invalid("kernel", "sampled price needs an exponential kernel")),
    }
}

/// Market orders of one path with their propagated weights.
struct TradeTape {
    ask: Vec<(f64, f64)>,
    bid: Vec<(f64, f64)>,
    ask_marks: Vec<(f64, i64)>,
    bid_marks: Vec<(f64, i64)>,
    horizon: f64,
}

impl TradeTape {
    fn mean_gap(&self) -> f64 {
        self.horizon / (self.ask.len() + self.bid.len()).max(1) as f64
    }
}

fn roll_book(model: &MarketModel, q0: i64, horizon: f64, tree: &SeedTree) -> Result<TradeTape> {
    model.validate()?;
    let params = model.market_params();
    let ask = simulate_hawkes(&params, horizon, &mut tree.stream(0, StreamPurpose::MarketAsk))?;
    let bid = simulate_hawkes(&params, horizon, &mut tree.stream(0, StreamPurpose::MarketBid))?;
    let book = simulate_book(
        &model.queue,
        q0,
        q0,
        ask,
        bid,
        horizon,
        &mut tree.stream(0, StreamPurpose::BookAsk),
        &mut tree.stream(0, StreamPurpose::BookBid),
    )?;
    let ask_marks = book.pre_trade_queues(Side::Ask);
    let bid_marks = book.pre_trade_queues(Side::Bid);
    let weigh = |marks: &[(f64, i64)]| {
        marks.iter().map(|&(t, q)| (t, model.kappa.value(q))).collect::<Vec<_>>()
    };
    Ok(TradeTape {
        ask: weigh(&ask_marks),
        bid: weigh(&bid_marks),
        ask_marks,
        bid_marks,
        horizon,
    })
}

/// One pass over samples and trades: per side keep the permanent sum and the
/// transient accumulator `E = sum w_i e^{-beta (t - t_i)}`, decayed lazily.
fn sample_tape(
    tape: &TradeTape,
    c: f64,
    beta: f64,
    step: f64,
    sigma_noise: f64,
    noise: &mut impl Rng,
) -> Result<SampledPrice> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("step", "need finite step > 0"));
    }
    let n = (tape.horizon / step).floor() as usize;
    if n < 2 {
        return Err(Error::invalid("step", "need at least two sampling increments"));
    }
    let horizon = n as f64 * step;

    struct SideState<'a> {
        trades: &'a [(f64, f64)],
        next: usize,
        perm: f64,
        trans: f64,
        last: f64,
    }
    impl SideState<'_> {
        /// Fold in trades up to `tau`, return the transient sum at `tau`.
        fn advance(&mut self, tau: f64, beta: f64) -> f64 {
            while self.next < self.trades.len() && self.trades[self.next].0 <= tau {
                let (t, w) = self.trades[self.next];
                self.trans = self.trans * (-beta * (t - self.last)).exp() + w;
                self.perm += w;
                self.last = t;
                self.next += 1;
            }
            self.trans * (-beta * (tau - self.last)).exp()
        }
    }
    fn fresh(trades: &[(f64, f64)]) -> SideState<'_> {
        SideState { trades, next: 0, perm: 0.0, trans: 0.0, last: 0.0 }
    }
    let mut up = fresh(&tape.ask);
    let mut down = fresh(&tape.bid);

    let mut samples = Vec::with_capacity(n + 1);
    samples.push(0.0);
    let root_step = step.sqrt();
    let mut brownian = 0.0;
    for k in 1..=n {
        let tau = k as f64 * step;
        let trans_up = up.advance(tau, beta);
        let trans_down = down.advance(tau, beta);
        let price = (up.perm - down.perm) + c * (trans_up - trans_down);
        if sigma_noise > 0.0 {
            brownian += sigma_noise * root_step * noise.sample::<f64, _>(StandardNormal);
        }
        samples.push(price + brownian);
    }
    let keep = |marks: &[(f64, i64)]| {
        marks.iter().copied().take_while(|m| m.0 <= horizon).collect::<Vec<_>>()
    };
    Ok(SampledPrice {
        step,
        samples,
        ask_marks: keep(&tape.ask_marks),
        bid_marks: keep(&tape.bid_marks),
    })
}

/// Simulate the book and evaluate the propagated price on a uniform grid.
///
/// `step = None` samples at ten times the realized mean inter-trade time.
/// `sigma_noise` adds an independent Brownian component on the sample grid.
pub fn simulate_simplified_price(
    model: &MarketModel,
    q0: i64,
    horizon: f64,
    sigma_noise: f64,
    step: Option<f64>,
    tree: &SeedTree,
) -> Result<SampledPrice> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "need finite horizon > 0"));
    }
    if !(sigma_noise >= 0.0 && sigma_noise.is_finite()) {
        return Err(Error::invalid("sigma_noise", "need sigma_noise >= 0"));
    }
    if let Some(s) = step {
        if !(s > 0.0 && s <= horizon / 2.0) {
            return Err(Error::invalid("step", "need 0 < step <= horizon / 2"));
        }
    }
    let (c, beta) = response_coeffs(&model.kernel)?;
    let tape = roll_book(model, q0, horizon, tree)?;
    let delta = step.unwrap_or_else(|| (10.0 * tape.mean_gap()).min(horizon / 2.0));
    let mut noise = tree.stream(0, StreamPurpose::Noise);
    sample_tape(&tape, c, beta, delta, sigma_noise, &mut noise)
}

/// Sum of squared sample increments.
pub fn realized_variance(sp: &SampledPrice) -> Result<f64> {
    sp.validate()?;
    Ok(sp.samples.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum())
}

/// Constant-weight estimate `sqrt(RV / (xi0^2 (N^a + N^b)))`.
pub fn estimate_kappa_const(sp: &SampledPrice, xi0: f64) -> Result<f64> {
    if !(xi0 > 0.0 && xi0.is_finite()) {
        return Err(Error::invalid("xi0", "need finite xi0 > 0"));
    }
    let trades = sp.trade_count();
    if trades == 0 {
        return Err(Error::invalid("marks", "no trades recorded"));
    }
    let rv = realized_variance(sp)?;
    Ok((rv / (xi0 * xi0 * trades as f64)).sqrt())
}

/// Per-window counts, lengths, queue-mark sums and realized variances over
/// non-overlapping equal-length segments; trailing increments are dropped.
struct WindowStats {
    counts: Vec<f64>,
    lengths: Vec<f64>,
    queue_sums: Vec<f64>,
    variances: Vec<f64>,
}

fn window_stats(sp: &SampledPrice, windows: usize) -> Result<WindowStats> {
    sp.validate()?;
    if windows < 2 {
        return Err(Error::invalid("windows", "need at least two windows"));
    }
    let per = (sp.samples.len() - 1) / windows;
    if per == 0 {
        return Err(Error::invalid("windows", "more windows than sample increments"));
    }
    let mut stats = WindowStats {
        counts: vec![0.0; windows],
        lengths: vec![per as f64 * sp.step; windows],
        queue_sums: vec![0.0; windows],
        variances: vec![0.0; windows],
    };
    for w in 0..windows {
        for k in w * per..(w + 1) * per {
            stats.variances[w] += (sp.samples[k + 1] - sp.samples[k]).powi(2);
        }
    }
    let end = windows as f64 * per as f64 * sp.step;
    for marks in [&sp.ask_marks, &sp.bid_marks] {
        for &(t, q) in marks.iter() {
            if t > end {
                break;
            }
            let w = (((t / sp.step).ceil() as usize).max(1) - 1) / per;
            let w = w.min(windows - 1);
            stats.counts[w] += 1.0;
            stats.queue_sums[w] += q as f64;
        }
    }
    Ok(stats)
}

/// Coefficient standard errors for a two-factor no-constant least-squares
/// fit, from the residual variance and the inverse normal matrix.
fn two_factor_stderr(x1: &[f64], x2: &[f64], y: &[f64], a: f64, b: f64) -> (f64, f64) {
    let n = y.len();
    if n <= 2 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let mut rss = 0.0;
    let mut s11 = 0.0;
    let mut s12 = 0.0;
    let mut s22 = 0.0;
    for i in 0..n {
        rss += (y[i] - a * x1[i] - b * x2[i]).powi(2);
        s11 += x1[i] * x1[i];
        s12 += x1[i] * x2[i];
        s22 += x2[i] * x2[i];
    }
    let det = s11 * s22 - s12 * s12;
    let s2 = rss / (n - 2) as f64;
    ((s2 * s22 / det).sqrt(), (s2 * s11 / det).sqrt())
}

/// Window regression `RV_w ~ per_trade * N_w + per_time * T_w`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VarianceSplit {
    /// Coefficient on the trade count; estimates `kappa^2 xi(0)^2`.
    pub per_trade: f64,
    /// Coefficient on the window length; estimates the Brownian variance.
    pub per_time: f64,
    pub per_trade_stderr: f64,
    pub per_time_stderr: f64,
    pub windows: usize,
}

impl VarianceSplit {
    pub fn kappa(&self, xi0: f64) -> f64 {
        self.per_trade.max(0.0).sqrt() / xi0
    }
}

/// Split realized variance into a per-trade and a per-time part by least
/// squares over non-overlapping windows.
pub fn estimate_kappa_noise(sp: &SampledPrice, windows: usize) -> Result<VarianceSplit> {
    let stats = window_stats(sp, windows)?;
    let (per_trade, per_time) = ols_two(&stats.counts, &stats.lengths, &stats.variances)?;
    let (per_trade_stderr, per_time_stderr) =
        two_factor_stderr(&stats.counts, &stats.lengths, &stats.variances, per_trade, per_time);
    Ok(VarianceSplit { per_trade, per_time, per_trade_stderr, per_time_stderr, windows })
}

/// Window regression of `kappa^2(q) ~ intercept + slope * q` through
/// `RV_w ~ intercept * xi0^2 N_w + slope * xi0^2 (sum of queue marks)_w`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AffineKappaSqFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_stderr: f64,
    pub slope_stderr: f64,
    pub windows: usize,
}

/// Fit an affine `kappa^2` from windowed realized variance and the recorded
/// pre-trade queue marks.
pub fn estimate_kappa_affine(sp: &SampledPrice, xi0: f64, windows: usize) -> Result<AffineKappaSqFit> {
    if !(xi0 > 0.0 && xi0.is_finite()) {
        return Err(Error::invalid("xi0", "need finite xi0 > 0"));
    }
    let stats = window_stats(sp, windows)?;
    let xi2 = xi0 * xi0;
    let x1 = stats.counts.iter().map(|n| xi2 * n).collect::<Vec<_>>();
    let x2 = stats.queue_sums.iter().map(|s| xi2 * s).collect::<Vec<_>>();
    let (intercept, slope) = ols_two(&x1, &x2, &stats.variances)?;
    let (intercept_stderr, slope_stderr) = two_factor_stderr(&x1, &x2, &stats.variances, intercept, slope);
    Ok(AffineKappaSqFit { intercept, slope, intercept_stderr, slope_stderr, windows })
}

/// One sampling-step choice of the sensitivity ladder.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplingRow {
    pub step: f64,
    pub realized_variance: f64,
    pub kappa: f64,
}

/// Re-sample one simulated path at `factors` times the mean inter-trade gap
/// and report the constant-weight estimate per step, exposing the
/// discretization bias of coarse sampling.
pub fn sampling_sensitivity(
    model: &MarketModel,
    q0: i64,
    horizon: f64,
    sigma_noise: f64,
    factors: &[f64],
    tree: &SeedTree,
) -> Result<Vec<SamplingRow>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "need finite horizon > 0"));
    }
    if !(sigma_noise >= 0.0 && sigma_noise.is_finite()) {
        return Err(Error::invalid("sigma_noise", "need sigma_noise >= 0"));
    }
    if factors.is_empty() || factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::invalid("factors", "need positive finite factors"));
    }
    let (c, beta) = response_coeffs(&model.kernel)?;
    let xi0 = 1.0 + c;
    let tape = roll_book(model, q0, horizon, tree)?;
    let gap = tape.mean_gap();
    let mut rows = Vec::with_capacity(factors.len());
    for (i, factor) in factors.iter().enumerate() {
        let step = (factor * gap).min(horizon / 2.0);
        let mut noise = tree.stream(i as u64, StreamPurpose::Noise);
        let sp = sample_tape(&tape, c, beta, step, sigma_noise, &mut noise)?;
        let kappa = estimate_kappa_const(&sp, xi0)?;
        rows.push(SamplingRow { step, realized_variance: realized_variance(&sp)?, kappa });
    }
    Ok(rows)
}
