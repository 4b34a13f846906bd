//! Excitation kernels, the renewal series and the price propagator.
//!
//! For a kernel `phi` with `||phi||_1 = a < 1`, the renewal function
//! `psi = sum_k phi^{*k}` solves `psi = phi + phi * psi` and carries
//! `||psi||_1 = a / (1 - a)` exactly. The propagator built on top of it,
//!
//!   xi(t) = 1 + (1 + ||psi||_1) \int_t^inf phi(s) ds,
//!
//! decays from `xi(0) = 1/(1 - a)` to 1 and is the per-trade weight used by
//! the price reconstruction and estimation layers.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Excitation kernel shapes. All are nonnegative and integrable; solvers
/// additionally require `||phi||_1 < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `phi(t) = rate * exp(-decay t)`, L1 norm `rate / decay`.
    Exponential { rate: f64, decay: f64 },
    /// `phi(t) = scale * (1 + t/cutoff)^{-1-alpha}`, L1 norm
    /// `scale * cutoff / alpha`; the tail integral behaves like
    /// `K t^{-alpha}` with `K = scale * cutoff^{1+alpha} / alpha`.
    PowerLawTail { scale: f64, alpha: f64, cutoff: f64 },
    /// Samples on the uniform grid `0, step, 2 step, ...`; linear between
    /// samples and ZERO beyond the last one, so the tail integral of a
    /// tabulated kernel silently drops whatever mass the table does not
    /// cover. Tabulate well past the decay you care about.
    Tabulated { step: f64, values: Vec<f64> },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Exponential { rate, decay } => {
                if !(*rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::invalid("rate", "need rate >= 0"));
                }
                if !(*decay > 0.0 && decay.is_finite()) {
                    return Err(Error::invalid("decay", "need decay > 0"));
                }
            }
            KernelSpec::PowerLawTail { scale, alpha, cutoff } => {
                if !(*scale >= 0.0 && scale.is_finite()) {
                    return Err(Error::invalid("scale", "need scale >= 0"));
                }
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::invalid("alpha", "need alpha > 0"));
                }
                if !(*cutoff > 0.0 && cutoff.is_finite()) {
                    return Err(Error::invalid("cutoff", "need cutoff > 0"));
                }
            }
            KernelSpec::Tabulated { step, values } => {
                if !(*step > 0.0 && step.is_finite()) {
                    return Err(Error::invalid("step", "need step > 0"));
                }
                if values.len() < 2 {
                    return Err(Error::invalid("values", "need at least two samples"));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::invalid("values", "samples must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Kernel value at `t`; zero for `t < 0` and beyond a table.
    pub fn phi(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            KernelSpec::Exponential { rate, decay } => rate * (-decay * t).exp(),
            KernelSpec::PowerLawTail { scale, alpha, cutoff } => {
                scale * (1.0 + t / cutoff).powf(-1.0 - alpha)
            }
            KernelSpec::Tabulated { step, values } => {
                let pos = t / step;
                let i = pos.floor() as usize;
                if i + 1 >= values.len() {
                    if i + 1 == values.len() && pos == i as f64 {
                        values[i]
                    } else {
                        0.0
                    }
                } else {
                    let w = pos - i as f64;
                    values[i] * (1.0 - w) + values[i + 1] * w
                }
            }
        }
    }

    /// `int_t^inf phi(s) ds`.
    pub fn tail_integral(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            KernelSpec::Exponential { rate, decay } => rate / decay * (-decay * t).exp(),
            KernelSpec::PowerLawTail { scale, alpha, cutoff } => {
                scale * cutoff / alpha * (1.0 + t / cutoff).powf(-alpha)
            }
            KernelSpec::Tabulated { step, values } => {
                let n = values.len();
                let end = (n - 1) as f64 * step;
                if t >= end {
                    return 0.0;
                }
                let pos = t / step;
                let i = pos.floor() as usize;
                let w = pos - i as f64;
                let phi_t = values[i] * (1.0 - w) + values[i + 1] * w;
                // remainder of the cell containing t, then full cells
                let mut acc = 0.5 * (phi_t + values[i + 1]) * (1.0 - w) * step;
                for j in i + 1..n - 1 {
                    acc += 0.5 * (values[j] + values[j + 1]) * step;
                }
                acc
            }
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.tail_integral(0.0)
    }
}

/// Renewal solution `psi` tabulated on a uniform grid, plus the norms the
/// propagator needs. Built by [`solve_psi`].
#[derive(Debug, Clone)]
pub struct PropagatorTable {
    kernel: KernelSpec,
    step: f64,
    psi: Vec<f64>,
    phi_l1: f64,
    psi_l1: f64,
}

/// March the trapezoid discretization of `psi = phi + phi * psi` out to
/// `horizon`. O(n^2) in the number of grid cells.
pub fn solve_psi(kernel: &KernelSpec, step: f64, horizon: f64) -> Result<PropagatorTable> {
    kernel.validate()?;
    if !(step > 0.0 && horizon > step) {
        return Err(Error::invalid("step", "need 0 < step < horizon"));
    }
    let a = kernel.l1_norm();
    if a >= 1.0 {
        return Err(Error::Unstable { norm: a });
    }
    let n = (horizon / step).ceil() as usize + 1;
    if step * kernel.phi(0.0) >= 1.0 {
        return Err(Error::GridTooCoarse {
            reason: format!("step {} too large against phi(0) = {}", step, kernel.phi(0.0)),
        });
    }
    let phi: Vec<f64> = (0..n).map(|i| kernel.phi(i as f64 * step)).collect();
    let mut psi = vec![0.0; n];
    psi[0] = phi[0];
    let denom = 1.0 - 0.5 * step * phi[0];
    for i in 1..n {
        let mut conv = 0.5 * phi[i] * psi[0];
        for j in 1..i {
            conv += phi[i - j] * psi[j];
        }
        psi[i] = (phi[i] + step * conv) / denom;
    }
    let grid_mass = crate::quadrature::trapezoid_uniform(&psi, step);
    let tail = psi_tail_mass(kernel, &psi, step);
    Ok(PropagatorTable {
        kernel: kernel.clone(),
        step,
        psi,
        phi_l1: a,
        psi_l1: grid_mass + tail,
    })
}

/// `int_T^inf psi` beyond the tabulated horizon `T`. Exponential kernels have
/// the exact renewal solution `psi(t) = rate * exp(-(decay-rate) t)`; power
/// laws inherit the kernel's `t^{-1-alpha}` shape, pinned to the table's
/// endpoint so finite-horizon amplitude corrections carry over; tabulated
/// kernels get a local exponential fit over the last stretch of the grid.
fn psi_tail_mass(kernel: &KernelSpec, psi: &[f64], step: f64) -> f64 {
    let n = psi.len();
    let horizon = (n - 1) as f64 * step;
    match kernel {
        KernelSpec::Exponential { rate, decay } => {
            let gap = decay - rate;
            rate / gap * (-gap * horizon).exp()
        }
        KernelSpec::PowerLawTail { alpha, .. } => psi[n - 1] * horizon / alpha,
        KernelSpec::Tabulated { .. } => {
            let span = (n / 10).max(4).min(n - 1);
            let (head, end) = (psi[n - 1 - span], psi[n - 1]);
            if end <= 0.0 || head <= end {
                return 0.0;
            }
            let rho = (head / end).ln() / (span as f64 * step);
            end / rho
        }
    }
}

impl PropagatorTable {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn psi_values(&self) -> &[f64] {
        &self.psi
    }

    pub fn phi_l1(&self) -> f64 {
        self.phi_l1
    }

    /// Tail-corrected `||psi||_1`; the exact value is `a / (1 - a)`.
    pub fn psi_l1(&self) -> f64 {
        self.psi_l1
    }

    /// `psi(t)` by linear interpolation; beyond the table, the same tail
    /// shape [`psi_tail_mass`] integrates, pinned to the endpoint value.
    pub fn psi_at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let pos = t / self.step;
        let i = pos.floor() as usize;
        if i + 1 >= self.psi.len() {
            let n = self.psi.len();
            let horizon = (n - 1) as f64 * self.step;
            let end = self.psi[n - 1];
            return match &self.kernel {
                KernelSpec::Exponential { rate, decay } => {
                    end * (-(decay - rate) * (t - horizon)).exp()
                }
                KernelSpec::PowerLawTail { alpha, .. } => {
                    end * (t / horizon).powf(-1.0 - alpha)
                }
                KernelSpec::Tabulated { .. } => {
                    let span = (n / 10).max(4).min(n - 1);
                    let head = self.psi[n - 1 - span];
                    if end <= 0.0 || head <= end {
                        return 0.0;
                    }
                    let rho = (head / end).ln() / (span as f64 * self.step);
                    end * (-rho * (t - horizon)).exp()
                }
            };
        }
        let w = pos - i as f64;
        self.psi[i] * (1.0 - w) + self.psi[i + 1] * w
    }

    /// Propagator `xi(t) = 1 + (1 + ||psi||_1) int_t^inf phi`.
    pub fn xi_of(&self, t: f64) -> f64 {
        1.0 + (1.0 + self.psi_l1) * self.kernel.tail_integral(t)
    }

    /// Largest defect of `psi = phi + phi * psi` over even grid nodes, with
    /// the convolution re-evaluated by Simpson instead of the trapezoid rule
    /// used to build the table, so discretization error is actually visible.
    pub fn renewal_residual(&self) -> f64 {
        let n = self.psi.len();
        let mut worst = 0.0f64;
        let mut i = 2;
        while i < n {
            let mut simpson = 0.0;
            let mut j = 0;
            while j + 2 <= i {
                let f0 = self.kernel.phi((i - j) as f64 * self.step) * self.psi[j];
                let f1 = self.kernel.phi((i - j - 1) as f64 * self.step) * self.psi[j + 1];
                let f2 = self.kernel.phi((i - j - 2) as f64 * self.step) * self.psi[j + 2];
                simpson += self.step / 3.0 * (f0 + 4.0 * f1 + f2);
                j += 2;
            }
            let phi_i = self.kernel.phi(i as f64 * self.step);
            worst = worst.max((self.psi[i] - phi_i - simpson).abs());
            i += 2;
        }
        worst
    }
}

/// Propagator evaluated from closed-form norms alone, no table:
/// `xi(t) = 1 + tail_phi(t) / (1 - a)` using the exact `||psi||_1`.
pub fn xi_exact(kernel: &KernelSpec, t: f64) -> Result<f64> {
    kernel.validate()?;
    let a = kernel.l1_norm();
    if a >= 1.0 {
        return Err(Error::Unstable { norm: a });
    }
    Ok(1.0 + kernel.tail_integral(t) / (1.0 - a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn exp_kernel(a: f64, decay: f64) -> KernelSpec {
        KernelSpec::Exponential { rate: a * decay, decay }
    }

    #[test]
    fn exponential_renewal_matches_closed_form() {
        // For phi = c e^{-bt}: psi(t) = c e^{-(b-c)t}.
        let (c, b) = (0.6, 1.2);
        let kernel = KernelSpec::Exponential { rate: c, decay: b };
        let table = solve_psi(&kernel, 1e-3, 12.0).unwrap();
        let mut worst = 0.0f64;
        for (i, &p) in table.psi_values().iter().enumerate() {
            let t = i as f64 * 1e-3;
            worst = worst.max((p - c * (-(b - c) * t).exp()).abs());
        }
        assert!(worst < 5e-7, "worst {worst:e}");
    }

    #[test]
    fn fixed_point_iteration_agrees_with_marching() {
        let kernel = KernelSpec::PowerLawTail { scale: 0.5, alpha: 1.5, cutoff: 1.0 };
        let step = 0.01;
        let table = solve_psi(&kernel, step, 6.0).unwrap();
        let n = table.psi_values().len();
        let phi: Vec<f64> = (0..n).map(|i| kernel.phi(i as f64 * step)).collect();
        let mut psi = phi.clone();
        for _ in 0..200 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                let mut conv = 0.0;
                if i > 0 {
                    conv += 0.5 * (phi[i] * psi[0] + phi[0] * psi[i]);
                    for j in 1..i {
                        conv += phi[i - j] * psi[j];
                    }
                }
                next[i] = phi[i] + step * conv;
            }
            psi = next;
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            worst = worst.max((psi[i] - table.psi_values()[i]).abs());
        }
        assert!(worst < 1e-10, "worst {worst:e}");
    }

    #[test]
    fn renewal_residual_reflects_grid_refinement() {
        let kernel = exp_kernel(0.5, 2.0);
        let coarse = solve_psi(&kernel, 0.005, 6.0).unwrap().renewal_residual();
        let fine = solve_psi(&kernel, 0.00125, 6.0).unwrap().renewal_residual();
        assert!(coarse < 1e-6, "coarse residual {coarse:e}");
        assert!(fine < coarse / 4.0, "no h^2 improvement: {fine:e} vs {coarse:e}");
    }

    #[test]
    fn psi_norm_is_geometric_in_kernel_norm() {
        for &a in &[0.3, 0.5, 0.9] {
            let table = solve_psi(&exp_kernel(a, 1.0), 2e-3, 40.0).unwrap();
            let exact = a / (1.0 - a);
            assert!(
                (table.psi_l1() - exact).abs() <= 1e-4 * exact,
                "a={a}: {} vs {exact}",
                table.psi_l1()
            );
        }
    }

    #[test]
    fn propagator_identity_at_zero() {
        for &a in &[0.3, 0.5, 0.9] {
            let table = solve_psi(&exp_kernel(a, 1.0), 2e-3, 40.0).unwrap();
            let xi0 = table.xi_of(0.0);
            assert!(
                (xi0 - 1.0 / (1.0 - a)).abs() <= 1e-4 / (1.0 - a),
                "a={a}: xi(0) = {xi0}"
            );
            assert_abs_diff_eq!(xi_exact(&exp_kernel(a, 1.0), 0.0).unwrap(), 1.0 / (1.0 - a), epsilon = 1e-12);
        }
    }

    #[test]
    fn heavy_tail_norms_still_close_after_correction() {
        // alpha < 1: infinite-mean tail, the regime where the (1-a)^{-2}
        // dressing earns its keep.
        let kernel = KernelSpec::PowerLawTail { scale: 0.675, alpha: 0.75, cutoff: 1.0 };
        let a = kernel.l1_norm();
        assert_abs_diff_eq!(a, 0.9, epsilon = 1e-12);
        let table = solve_psi(&kernel, 0.02, 400.0).unwrap();
        let exact = a / (1.0 - a);
        assert!(
            (table.psi_l1() - exact).abs() <= 1e-2 * exact,
            "{} vs {exact}",
            table.psi_l1()
        );
    }

    #[test]
    fn power_law_tail_constant() {
        let kernel = KernelSpec::PowerLawTail { scale: 0.675, alpha: 0.75, cutoff: 2.0 };
        let k_const = 0.675 * 2.0f64.powf(1.75) / 0.75;
        for &t in &[1e5, 1e6] {
            let ratio = kernel.tail_integral(t) * t.powf(0.75) / k_const;
            assert!((ratio - 1.0).abs() < 1e-4, "t={t}: ratio {ratio}");
        }
    }

    #[test]
    fn tabulated_kernel_tracks_its_source() {
        let source = exp_kernel(0.4, 1.5);
        let step = 0.01;
        let values: Vec<f64> = (0..2000).map(|i| source.phi(i as f64 * step)).collect();
        let tab = KernelSpec::Tabulated { step, values };
        tab.validate().unwrap();
        assert!((tab.l1_norm() - 0.4).abs() < 1e-4);
        assert!((tab.phi(0.503) - source.phi(0.503)).abs() < 1e-4);
        assert!((tab.tail_integral(3.0) - source.tail_integral(3.0)).abs() < 1e-4);
        // beyond the table the kernel is defined as zero
        assert_eq!(tab.phi(30.0), 0.0);
        assert_eq!(tab.tail_integral(25.0), 0.0);
    }

    #[test]
    fn critical_kernels_are_rejected() {
        let r = solve_psi(&exp_kernel(1.0, 1.0), 1e-3, 5.0);
        assert!(matches!(r, Err(Error::Unstable { .. })));
        let r = solve_psi(&exp_kernel(1.3, 1.0), 1e-3, 5.0);
        assert!(matches!(r, Err(Error::Unstable { .. })));
    }

    #[test]
    fn propagator_is_monotone_to_one() {
        let table = solve_psi(&exp_kernel(0.7, 2.0), 1e-3, 15.0).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let v = table.xi_of(i as f64 * 0.1);
            assert!(v <= prev + 1e-12 && v >= 1.0);
            prev = v;
        }
        assert!((table.xi_of(200.0) - 1.0).abs() < 1e-10);
    }
}
