//! Self-exciting order-flow simulation and its first two moments.
//!
//! Intensity `lambda_t = mu(t) + sum_{t_i < t} phi(t - t_i)`. Simulation is
//! Ogata thinning with the envelope refreshed at every candidate, which is
//! exact because every kernel and baseline here is nonincreasing between
//! events. Exponential kernels get the O(1) Markovian update.
//!
//! Moment formulas run through `R(t) = 1 + int_0^t psi`: with a constant
//! baseline `mu`, `E[lambda_t] = mu R(t)`, `E[N_t] = mu int_0^t R` and
//! `Var N_t = mu int_0^t R(t-s)^2 R(s) ds` (compensated-martingale
//! representation `N_t = E[N_t] + int R(t-s) dM_s`).

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, PropagatorTable};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub const DEFAULT_EVENT_CAP: usize = 10_000_000;

/// Event times of one realization, sorted, on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub times: Vec<f64>,
    pub horizon: f64,
}

impl EventStream {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Memory {
    /// Collapsed exponential history: `amp * exp(-decay s)`.
    ExpSum { amp: f64, decay: f64 },
    /// General history: `sum_j phi(s + lag_j)`.
    Lags { kernel: KernelSpec, lags: Vec<f64> },
}

/// Deterministic baseline `mu(s) = base + memory(s)`, nonincreasing in `s`.
#[derive(Debug, Clone)]
pub struct Baseline {
    base: f64,
    memory: Option<Memory>,
}

impl Baseline {
    pub fn constant(rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::invalid("rate", "need rate >= 0"));
        }
        Ok(Baseline { base: rate, memory: None })
    }

    /// Baseline seen by the process restarted at time `origin`: the constant
    /// part plus the residual excitation of every event at or before
    /// `origin`. Exponential kernels collapse the whole history into one
    /// decaying term.
    pub fn with_history(base: f64, kernel: &KernelSpec, history: &[f64], origin: f64) -> Result<Self> {
        if !(base >= 0.0 && base.is_finite()) {
            return Err(Error::invalid("base", "need base >= 0"));
        }
        kernel.validate()?;
        let lags: Vec<f64> = history
            .iter()
            .filter(|&&t| t <= origin)
            .map(|&t| origin - t)
            .collect();
        let memory = if lags.is_empty() {
            None
        } else if let KernelSpec::Exponential { rate, decay } = kernel {
            let amp: f64 = lags.iter().map(|l| rate * (-decay * l).exp()).sum();
            Some(Memory::ExpSum { amp, decay: *decay })
        } else {
            Some(Memory::Lags { kernel: kernel.clone(), lags })
        };
        Ok(Baseline { base, memory })
    }

    pub fn value(&self, s: f64) -> f64 {
        let extra = match &self.memory {
            None => 0.0,
            Some(Memory::ExpSum { amp, decay }) => amp * (-decay * s).exp(),
            Some(Memory::Lags { kernel, lags }) => lags.iter().map(|l| kernel.phi(s + l)).sum(),
        };
        self.base + extra
    }

    /// `int_0^s mu(u) du`.
    pub fn integral(&self, s: f64) -> f64 {
        let extra = match &self.memory {
            None => 0.0,
            Some(Memory::ExpSum { amp, decay }) => amp / decay * (1.0 - (-decay * s).exp()),
            Some(Memory::Lags { kernel, lags }) => lags
                .iter()
                .map(|l| kernel.tail_integral(*l) - kernel.tail_integral(s + l))
                .sum(),
        };
        self.base * s + extra
    }

    fn kernel_for_monotonicity(&self) -> Option<&KernelSpec> {
        match &self.memory {
            Some(Memory::Lags { kernel, .. }) => Some(kernel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HawkesParams {
    pub baseline: Baseline,
    pub kernel: KernelSpec,
}

fn require_nonincreasing(kernel: &KernelSpec) -> Result<()> {
    if let KernelSpec::Tabulated { values, .. } = kernel {
        if values.windows(2).any(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0)) {
            return Err(Error::invalid(
                "values",
                "thinning needs a nonincreasing kernel",
            ));
        }
    }
    Ok(())
}

pub fn simulate_hawkes(
    params: &HawkesParams,
    horizon: f64,
    rng: &mut ChaCha12Rng,
) -> Result<EventStream> {
    simulate_hawkes_capped(params, horizon, DEFAULT_EVENT_CAP, rng)
}

pub fn simulate_hawkes_capped(
    params: &HawkesParams,
    horizon: f64,
    cap: usize,
    rng: &mut ChaCha12Rng,
) -> Result<EventStream> {
    params.kernel.validate()?;
    require_nonincreasing(&params.kernel)?;
    if let Some(k) = params.baseline.kernel_for_monotonicity() {
        require_nonincreasing(k)?;
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "need finite horizon > 0"));
    }
    match params.kernel {
        KernelSpec::Exponential { rate, decay } => {
            sim_exponential(&params.baseline, rate, decay, horizon, cap, rng)
        }
        _ => sim_general(params, horizon, cap, rng),
    }
}

fn sim_exponential(
    baseline: &Baseline,
    rate: f64,
    decay: f64,
    horizon: f64,
    cap: usize,
    rng: &mut ChaCha12Rng,
) -> Result<EventStream> {
    let mut times = Vec::new();
    let mut t = 0.0f64;
    let mut z = 0.0f64; // excitation just after t
    loop {
        let bound = baseline.value(t) + z;
        if bound <= 0.0 {
            break;
        }
        let w = -rng.gen::<f64>().ln() / bound;
        let tc = t + w;
        if tc > horizon {
            break;
        }
        let z_c = z * (-decay * w).exp();
        let lam = baseline.value(tc) + z_c;
        z = z_c;
        t = tc;
        if rng.gen::<f64>() * bound <= lam {
            times.push(tc);
            z += rate;
            if times.len() >= cap {
                return Err(Error::EventCapExceeded { cap, t: tc });
            }
        }
    }
    Ok(EventStream { times, horizon })
}

fn sim_general(
    params: &HawkesParams,
    horizon: f64,
    cap: usize,
    rng: &mut ChaCha12Rng,
) -> Result<EventStream> {
    let mut times: Vec<f64> = Vec::new();
    let mut t = 0.0f64;
    let lam_at = |s: f64, times: &[f64]| -> f64 {
        params.baseline.value(s) + times.iter().map(|ti| params.kernel.phi(s - ti)).sum::<f64>()
    };
    loop {
        let bound = lam_at(t, &times);
        if bound <= 0.0 {
            break;
        }
        let w = -rng.gen::<f64>().ln() / bound;
        let tc = t + w;
        if tc > horizon {
            break;
        }
        let lam = lam_at(tc, &times);
        t = tc;
        if rng.gen::<f64>() * bound <= lam {
            times.push(tc);
            if times.len() >= cap {
                return Err(Error::EventCapExceeded { cap, t: tc });
            }
        }
    }
    Ok(EventStream { times, horizon })
}

/// Compensator increments between consecutive events (the first increment
/// starts at 0). Under the model these are i.i.d. unit exponentials, which is
/// what the time-rescaling goodness-of-fit test checks.
pub fn compensator_increments(params: &HawkesParams, stream: &EventStream) -> Vec<f64> {
    let times = &stream.times;
    let mut out = Vec::with_capacity(times.len());
    let mut prev = 0.0f64;
    for (k, &tk) in times.iter().enumerate() {
        let mut inc = params.baseline.integral(tk) - params.baseline.integral(prev);
        for &ti in &times[..k] {
            let from = (prev - ti).max(0.0);
            inc += params.kernel.tail_integral(from) - params.kernel.tail_integral(tk - ti);
        }
        out.push(inc);
        prev = tk;
    }
    out
}

/// `R(t) = 1 + int_0^t psi` on the table's grid.
fn response_cumulative(table: &PropagatorTable) -> Vec<f64> {
    let psi = table.psi_values();
    let h = table.step();
    let mut r = Vec::with_capacity(psi.len());
    let mut acc = 1.0f64;
    r.push(acc);
    for i in 1..psi.len() {
        acc += 0.5 * h * (psi[i - 1] + psi[i]);
        r.push(acc);
    }
    r
}

fn interp(values: &[f64], h: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return values[0];
    }
    let pos = x / h;
    let i = pos.floor() as usize;
    if i + 1 >= values.len() {
        return *values.last().unwrap();
    }
    let w = pos - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// `E[N_t]` for a possibly history-dressed baseline:
/// `int_0^t R(t-u) mu(u) du`.
pub fn expected_count(baseline: &Baseline, table: &PropagatorTable, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", "need finite t >= 0"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let r = response_cumulative(table);
    let h = table.step();
    let n = ((t / h).ceil() as usize).max(200);
    let dt = t / n as f64;
    let f = |u: f64| interp(&r, h, t - u) * baseline.value(u);
    let mut acc = 0.5 * (f(0.0) + f(t));
    for i in 1..n {
        acc += f(i as f64 * dt);
    }
    Ok(acc * dt)
}

/// Mean and variance of `N_t` under a constant baseline `mu`.
pub fn count_moments(mu: f64, table: &PropagatorTable, t: f64) -> Result<(f64, f64)> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::invalid("mu", "need mu >= 0"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", "need finite t > 0"));
    }
    let r = response_cumulative(table);
    let h = table.step();
    let n = ((t / h).ceil() as usize).max(200);
    let dt = t / n as f64;
    let g = |u: f64| {
        let ru = interp(&r, h, u);
        let rt = interp(&r, h, t - u);
        (ru, rt * rt * ru)
    };
    let (m0, v0) = g(0.0);
    let (m1, v1) = g(t);
    let mut mean = 0.5 * (m0 + m1);
    let mut var = 0.5 * (v0 + v1);
    for i in 1..n {
        let (m, v) = g(i as f64 * dt);
        mean += m;
        var += v;
    }
    Ok((mu * mean * dt, mu * var * dt))
}
