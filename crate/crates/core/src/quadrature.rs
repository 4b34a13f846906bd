//! Adaptive quadrature used by the closed-form impact expressions.

use crate::error::{Error, Result};

/// Integrate `f` over `[a, b]` with adaptive Simpson refinement.
///
/// `tol` is an absolute target for the whole interval and is divided between
/// subintervals as they split. Fails with [`Error::Accuracy`] if the depth
/// budget runs out before the local error estimate falls under its share.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid("a", "nonfinite integration endpoint"));
    }
    if tol <= 0.0 {
        return Err(Error::invalid("tol", "tolerance must be positive"));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // Two guards against endless subdivision where the error estimate is
    // pure rounding noise: never demand less than the rounding level of the
    // first whole-interval estimate, and stop shrinking the per-interval
    // share 25 halvings below the requested tolerance (the accumulated
    // acceptance error stays orders of magnitude under `tol`).
    let floor = (tol * 2f64.powi(-25)).max(1e-16 * whole.abs());
    step(f, a, b, fa, fm, fb, whole, tol.max(floor), floor, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    floor: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    if depth == 0 {
        return Err(Error::Accuracy {
            what: "adaptive Simpson depth exhausted".into(),
            estimate: err.abs() / 15.0,
            tolerance: tol,
        });
    }
    let half = (0.5 * tol).max(floor);
    Ok(step(f, a, m, fa, flm, fm, left, half, floor, depth - 1)?
        + step(f, m, b, fm, frm, fb, right, half, floor, depth - 1)?)
}

/// Trapezoid rule over tabulated values on a uniform grid of spacing `h`.
pub fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (0.5 * (values[0] + values[n - 1]) + inner)
        }
    }
}
