//! Value-function machinery for linear prices: the quadratic coefficients in
//! the non-installation region, the threshold curve, and the quadratic
//! approximation (Riccati coefficient plus linear ODEs) in the installation
//! region. Also the integral value/derivative formulas available for the
//! inverse price in the non-installation region.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::homogeneous::TimeGrid;
use crate::model::ModelParams;

/// Linear interpolation of a grid path at an arbitrary time.
pub(crate) fn interp_path(grid: &TimeGrid, values: &[f64], t: f64) -> f64 {
    let dt = grid.dt();
    if t <= 0.0 {
        return values[0];
    }
    let pos = t / dt;
    let k = (pos.floor() as usize).min(values.len() - 2);
    let frac = pos - k as f64;
    values[k] * (1.0 - frac) + values[k + 1] * frac
}

/// Revenue margin entering the linear-price value coefficients:
/// d1 - c - d2 * (N or N+1) * xbar, depending on whether the producer's own
/// impact on the price is kept (general model) or dropped (homogeneous
/// reduction).
fn margin_path(
    params: &ModelParams,
    d1: f64,
    d2: f64,
    xbar: &[f64],
    reduction: bool,
) -> Vec<f64> {
    let crowd = if reduction {
        params.producers()
    } else {
        params.n_others
    };
    xbar.iter()
        .map(|&xb| d1 - params.cost - d2 * crowd * xb)
        .collect()
}

/// Quadratic/linear value coefficients in the non-installation region:
/// V(t,x) = a_t x^2 + b_t x with a in closed form and b by backward
/// integration of db/dt = (r+delta) b - h*(d1 - c - d2 N xbar_t), b_T = 0.
///
/// With capacity noise the quadratic coefficient rate becomes
/// r + 2 delta - sigma^2; b keeps its deterministic form. Under the
/// homogeneous-reduction mode the own-price impact vanishes, so a = 0 and the
/// margin uses (N+1) xbar.
pub fn noninstall_quadratic(
    params: &ModelParams,
    d1: f64,
    d2: f64,
    xbar: &[f64],
    grid: &TimeGrid,
    reduction: bool,
    sigma: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n_points();
    debug_assert_eq!(xbar.len(), n);
    let t_end = grid.t_end();
    let rho = params.r + 2.0 * params.delta - sigma * sigma;

    let a: Vec<f64> = if reduction {
        vec![0.0; n]
    } else {
        grid.points()
            .iter()
            .map(|&t| -params.hours * d2 / rho * (1.0 - (-rho * (t_end - t)).exp()))
            .collect()
    };

    // Exact discount kernel per step with the midpoint margin; exact for a
    // constant margin, O(dt^2) otherwise.
    let kappa = params.kappa();
    let phi = margin_path(params, d1, d2, xbar, reduction);
    let decay = (-kappa * grid.dt()).exp();
    let kernel = params.hours * (1.0 - decay) / kappa;
    let mut b = vec![0.0; n];
    for k in (0..n - 1).rev() {
        let phi_mid = 0.5 * (phi[k] + phi[k + 1]);
        b[k] = decay * b[k + 1] + kernel * phi_mid;
    }
    (a, b)
}

/// Threshold capacity from the quadratic coefficients:
/// x*(t) = max((alpha + beta N nubar_t - b_t) / (2 a_t), 0), clamped to the
/// grid top; x*(T) = 0 by definition.
pub fn threshold_quadratic(
    params: &ModelParams,
    a: &[f64],
    b: &[f64],
    nubar: &[f64],
    grid: &TimeGrid,
    x_max: f64,
) -> Result<Vec<f64>> {
    let n = grid.n_points();
    let mut x_star = vec![0.0; n];
    for k in 0..n - 1 {
        if a[k] == 0.0 {
            return Err(Error::DegenerateCoefficient {
                t: grid.points()[k],
            });
        }
        let cutoff = params.alpha + params.beta * params.n_others * nubar[k];
        x_star[k] = ((cutoff - b[k]) / (2.0 * a[k])).max(0.0).min(x_max);
    }
    Ok(x_star)
}

/// Threshold path in the homogeneous-reduction mode, where the marginal value
/// b_t is capacity-independent: every producer installs when b_t exceeds the
/// cutoff, none otherwise.
pub fn threshold_reduction(
    params: &ModelParams,
    b: &[f64],
    nubar: &[f64],
    grid: &TimeGrid,
    x_max: f64,
) -> Vec<f64> {
    let n = grid.n_points();
    let mut x_star = vec![0.0; n];
    for k in 0..n - 1 {
        let cutoff = params.alpha + params.beta * params.n_others * nubar[k];
        x_star[k] = if b[k] > cutoff { x_max } else { 0.0 };
    }
    x_star
}

/// Latest downward zero crossing of a margin path; the margin is positive
/// exactly where the threshold is positive. Returns 0 when the margin never
/// turns positive.
pub fn last_zero_crossing(grid: &TimeGrid, margin: &[f64]) -> f64 {
    let n = margin.len();
    let mut last_pos = None;
    for (k, &g) in margin.iter().enumerate() {
        if g > 0.0 {
            last_pos = Some(k);
        }
    }
    match last_pos {
        None => 0.0,
        Some(k) if k + 1 >= n => grid.t_end(),
        Some(k) => {
            let g0 = margin[k];
            let g1 = margin[k + 1];
            if g1 >= 0.0 {
                grid.points()[k + 1]
            } else {
                grid.points()[k] + grid.dt() * g0 / (g0 - g1)
            }
        }
    }
}

/// Installation-region coefficients of the quadratic approximation
/// V = A x^2 + B x + C for t <= t_star, glued to the non-installation
/// coefficients at t_star: A(t_star) = 0 and B(t_star) = b(t_star).
#[derive(Debug, Clone, Serialize)]
pub struct AnsatzCoefficients {
    /// Non-installation quadratic coefficient path ($/MW^2).
    pub a: Vec<f64>,
    /// Non-installation linear coefficient path ($/MW).
    pub b: Vec<f64>,
    /// Installation-region quadratic coefficient; equals `a` after t_star.
    pub big_a: Vec<f64>,
    /// Installation-region linear coefficient; equals `b` after t_star.
    pub big_b: Vec<f64>,
    /// Installation-region constant term; zero after t_star.
    pub big_c: Vec<f64>,
    /// Positive root of lambda^2 - (r + 2 delta - sigma^2) lambda - h d2/beta (1/year).
    pub lambda1: f64,
    /// Negative root (zero when the quadratic forcing vanishes).
    pub lambda2: f64,
    /// Constant fixing A(t_star) = 0 in the closed form.
    pub r_a: f64,
    /// B at t_star (equals b at t_star).
    pub r_b: f64,
    pub t_star: f64,
}

/// Closed-form Riccati coefficient with fixed points beta*lambda1 and
/// beta*lambda2, pinned to zero at t_star. Evaluated in a form that cannot
/// overflow for t far below t_star.
fn riccati_closed_form(beta: f64, lambda1: f64, lambda2: f64, t_star: f64, t: f64) -> f64 {
    // v = 1/(R_A e^{(lambda2-lambda1) t}) = -(lambda2/lambda1) e^{-(lambda1-lambda2)(t_star-t)}
    let v = -(lambda2 / lambda1) * (-(lambda1 - lambda2) * (t_star - t)).exp();
    beta * (lambda1 * v + lambda2) / (1.0 + v)
}

/// Builds the installation-region coefficients for t in [0, t_star]:
/// A from its Riccati closed form, B and C by backward RK4 of their linear
/// ODEs from the matching conditions at t_star.
#[allow(clippy::too_many_arguments)]
pub fn ansatz_install_coeffs(
    params: &ModelParams,
    d1: f64,
    d2: f64,
    xbar: &[f64],
    nubar: &[f64],
    a: &[f64],
    b: &[f64],
    t_star: f64,
    grid: &TimeGrid,
    reduction: bool,
    sigma: f64,
) -> Result<AnsatzCoefficients> {
    let n = grid.n_points();
    if !(0.0..grid.t_end()).contains(&t_star) {
        return Err(Error::InvalidParams(format!(
            "t_star = {t_star} must lie in [0, T)"
        )));
    }
    let rho = params.r + 2.0 * params.delta - sigma * sigma;
    let d2_eff = if reduction { 0.0 } else { d2 };
    let forcing = params.hours * d2_eff / params.beta;
    let disc = (rho * rho + 4.0 * forcing).sqrt();
    let lambda1 = 0.5 * (rho + disc);
    let lambda2 = 0.5 * (rho - disc);

    let mut big_a: Vec<f64> = a.to_vec();
    let mut big_b: Vec<f64> = b.to_vec();
    let mut big_c: Vec<f64> = vec![0.0; n];

    if t_star > 0.0 && !reduction {
        let idx = grid.floor_index(t_star);
        for (k, slot) in big_a.iter_mut().enumerate().take(idx + 1) {
            let value = riccati_closed_form(params.beta, lambda1, lambda2, t_star, grid.points()[k]);
            if !value.is_finite() {
                return Err(Error::RiccatiBlowup {
                    t: grid.points()[k],
                });
            }
            *slot = value;
        }

        // B and C integrate backward together from the matching conditions
        // B(t_star) = b(t_star), C(t_star) = 0.
        let margin = margin_path(params, d1, d2, xbar, reduction);
        let cutoff_path: Vec<f64> = nubar
            .iter()
            .map(|&nb| params.alpha + params.beta * params.n_others * nb)
            .collect();
        let rhs = |t: f64, bb: f64, cc: f64| -> (f64, f64) {
            let phi = interp_path(grid, &margin, t);
            let cut = interp_path(grid, &cutoff_path, t);
            let big_a_t = riccati_closed_form(params.beta, lambda1, lambda2, t_star, t);
            let db = params.kappa() * bb
                - params.hours * phi
                - big_a_t / params.beta * (bb - cut);
            let dc = params.r * cc - ((bb - cut).max(0.0)).powi(2) / (4.0 * params.beta);
            (db, dc)
        };
        let mut t_hi = t_star;
        let mut bb = interp_path(grid, b, t_star);
        let mut cc = 0.0f64;
        let r_b = bb;
        for k in (0..=idx).rev() {
            let t_lo = grid.points()[k];
            let h = t_hi - t_lo;
            if h > 0.0 {
                // One backward RK4 step of size h.
                let (k1b, k1c) = rhs(t_hi, bb, cc);
                let (k2b, k2c) = rhs(t_hi - 0.5 * h, bb - 0.5 * h * k1b, cc - 0.5 * h * k1c);
                let (k3b, k3c) = rhs(t_hi - 0.5 * h, bb - 0.5 * h * k2b, cc - 0.5 * h * k2c);
                let (k4b, k4c) = rhs(t_lo, bb - h * k3b, cc - h * k3c);
                bb -= h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
                cc -= h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
                if !bb.is_finite() || !cc.is_finite() {
                    return Err(Error::Diverged { t: t_lo });
                }
            }
            big_b[k] = bb;
            big_c[k] = cc;
            t_hi = t_lo;
        }

        let r_a = -(lambda1 / lambda2) * ((lambda1 - lambda2) * t_star).exp();
        return Ok(AnsatzCoefficients {
            a: a.to_vec(),
            b: b.to_vec(),
            big_a,
            big_b,
            big_c,
            lambda1,
            lambda2,
            r_a,
            r_b,
            t_star,
        });
    }

    // Reduction mode (A = a = 0, B = b exactly) or a trivial region. C still
    // accrues the squared excess margin below t_star.
    let r_b = interp_path(grid, b, t_star);
    if t_star > 0.0 {
        let idx = grid.floor_index(t_star);
        let cutoff_path: Vec<f64> = nubar
            .iter()
            .map(|&nb| params.alpha + params.beta * params.n_others * nb)
            .collect();
        let rhs = |t: f64, cc: f64| -> f64 {
            let bt = interp_path(grid, b, t);
            let cut = interp_path(grid, &cutoff_path, t);
            params.r * cc - ((bt - cut).max(0.0)).powi(2) / (4.0 * params.beta)
        };
        let mut t_hi = t_star;
        let mut cc = 0.0f64;
        for k in (0..=idx).rev() {
            let t_lo = grid.points()[k];
            let h = t_hi - t_lo;
            if h > 0.0 {
                let k1 = rhs(t_hi, cc);
                let k2 = rhs(t_hi - 0.5 * h, cc - 0.5 * h * k1);
                let k3 = rhs(t_hi - 0.5 * h, cc - 0.5 * h * k2);
                let k4 = rhs(t_lo, cc - h * k3);
                cc -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            big_c[k] = cc;
            t_hi = t_lo;
        }
    }
    Ok(AnsatzCoefficients {
        a: a.to_vec(),
        b: b.to_vec(),
        big_a,
        big_b,
        big_c,
        lambda1,
        lambda2,
        r_a: f64::INFINITY,
        r_b,
        t_star,
    })
}

impl AnsatzCoefficients {
    /// Value of the two-piece quadratic approximation at (t_k, x).
    pub fn value_at(&self, grid: &TimeGrid, x_star: &[f64], k: usize, x: f64) -> f64 {
        if grid.points()[k] < self.t_star && x < x_star[k] {
            self.big_a[k] * x * x + self.big_b[k] * x + self.big_c[k]
        } else {
            self.a[k] * x * x + self.b[k] * x
        }
    }

    /// Spatial derivative of the two-piece approximation at (t_k, x).
    pub fn derivative_at(&self, grid: &TimeGrid, x_star: &[f64], k: usize, x: f64) -> f64 {
        if grid.points()[k] < self.t_star && x < x_star[k] {
            2.0 * self.big_a[k] * x + self.big_b[k]
        } else {
            2.0 * self.a[k] * x + self.b[k]
        }
    }

    /// Derivative of the installation-region piece, used for the transport
    /// drift and the rate update below t_star. Taking this branch at every
    /// capacity keeps the induced control continuous in x (its positive part
    /// vanishes smoothly), so the density never jams against a velocity jump
    /// at the threshold.
    pub fn install_derivative_at(&self, grid: &TimeGrid, k: usize, x: f64) -> f64 {
        if grid.points()[k] < self.t_star {
            2.0 * self.big_a[k] * x + self.big_b[k]
        } else {
            2.0 * self.a[k] * x + self.b[k]
        }
    }
}

/// Value and spatial derivative of the non-installation integral formula for
/// the inverse price, by trapezoid quadrature on the time grid tail.
pub fn noninstall_value_inverse(
    params: &ModelParams,
    p: f64,
    xbar: &[f64],
    grid: &TimeGrid,
    t_idx: usize,
    x: f64,
) -> Result<(f64, f64)> {
    let n = grid.n_points();
    if t_idx >= n {
        return Err(Error::Grid(format!("time index {t_idx} out of range")));
    }
    let t = grid.points()[t_idx];
    let kappa = params.kappa();
    let remaining = grid.t_end() - t;

    let mut val_int = 0.0f64;
    let mut der_int = 0.0f64;
    let mut prev: Option<(f64, f64)> = None;
    for k in t_idx..n {
        let s = grid.points()[k];
        let decay = (-params.delta * (s - t)).exp();
        let denom = params.n_others * xbar[k] + x * decay;
        if denom <= 0.0 {
            return Err(Error::Domain(format!(
                "vanishing aggregate capacity N*xbar + x e^(-delta (s-t)) at s = {s}"
            )));
        }
        let disc = (-kappa * (s - t)).exp();
        let f_val = disc / denom;
        let f_der = disc * params.n_others * xbar[k] / (denom * denom);
        if let Some((pv, pd)) = prev {
            val_int += 0.5 * grid.dt() * (pv + f_val);
            der_int += 0.5 * grid.dt() * (pd + f_der);
        }
        prev = Some((f_val, f_der));
    }

    let cost_term = params.cost / kappa * (1.0 - (-kappa * remaining).exp());
    let value = params.hours * x * (p * val_int - cost_term);
    let derivative = params.hours * (p * der_int - cost_term);
    Ok((value, derivative))
}

/// Bisection for the inverse-price threshold at one time node: the
/// non-installation derivative is strictly decreasing in x, so its crossing
/// of alpha + beta N nubar is unique.
pub(crate) fn threshold_inverse_at(
    params: &ModelParams,
    p: f64,
    xbar: &[f64],
    nubar_k: f64,
    grid: &TimeGrid,
    k: usize,
    x_max: f64,
) -> Result<f64> {
    if k + 1 >= grid.n_points() {
        return Ok(0.0);
    }
    let cutoff = params.alpha + params.beta * params.n_others * nubar_k;
    let deriv = |x: f64| -> Result<f64> { Ok(noninstall_value_inverse(params, p, xbar, grid, k, x)?.1) };
    if deriv(0.0)? <= cutoff {
        return Ok(0.0);
    }
    if deriv(x_max)? > cutoff {
        return Ok(x_max);
    }
    let (mut lo, mut hi) = (0.0f64, x_max);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid)? > cutoff {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Threshold path for the inverse price, one bisection per time node.
pub fn threshold_inverse(
    params: &ModelParams,
    p: f64,
    xbar: &[f64],
    nubar: &[f64],
    grid: &TimeGrid,
    x_max: f64,
) -> Result<Vec<f64>> {
    let n = grid.n_points();
    let mut x_star = vec![0.0; n];
    for k in 0..n - 1 {
        x_star[k] = threshold_inverse_at(params, p, xbar, nubar[k], grid, k, x_max)?;
    }
    Ok(x_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ModelParams {
        ModelParams {
            r: 0.05,
            delta: std::f64::consts::LN_2 / 10.0,
            horizon: 1.0,
            hours: 1.0,
            alpha: 0.1,
            beta: 0.1,
            cost: 1.0,
            n_others: 10.0,
            x0: 0.4,
            sigma: 0.0,
        }
    }

    #[test]
    fn terminal_coefficients_vanish() {
        let p = params();
        let grid = TimeGrid::new(p.horizon, 200).unwrap();
        let xbar = vec![0.05; grid.n_points()];
        let (a, b) = noninstall_quadratic(&p, 2.0, 1.0, &xbar, &grid, false, 0.0);
        assert_eq!(*a.last().unwrap(), 0.0);
        assert_eq!(*b.last().unwrap(), 0.0);
        assert!(a.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn b_matches_closed_form_for_constant_zero_mean() {
        let p = params();
        let grid = TimeGrid::new(p.horizon, 400).unwrap();
        let xbar = vec![0.0; grid.n_points()];
        let (_, b) = noninstall_quadratic(&p, 2.0, 1.0, &xbar, &grid, false, 0.0);
        let kappa = p.kappa();
        for (k, &t) in grid.points().iter().enumerate() {
            let expected = p.hours * (2.0 - p.cost) / kappa * (1.0 - (-kappa * (p.horizon - t)).exp());
            assert_relative_eq!(b[k], expected, max_relative = 1e-9);
        }
    }

    #[test]
    fn threshold_clamps_to_zero_when_margin_insufficient() {
        let p = params();
        let grid = TimeGrid::new(p.horizon, 100).unwrap();
        let n = grid.n_points();
        let a = vec![-0.5; n];
        let b = vec![0.05; n]; // below alpha
        let nubar = vec![0.0; n];
        let x_star = threshold_quadratic(&p, &a, &b, &nubar, &grid, 2.0).unwrap();
        assert!(x_star.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn threshold_is_positive_where_b_exceeds_cutoff() {
        let p = params();
        let grid = TimeGrid::new(p.horizon, 100).unwrap();
        let n = grid.n_points();
        let a = vec![-0.5; n];
        let b = vec![0.6; n];
        let nubar = vec![0.0; n];
        let x_star = threshold_quadratic(&p, &a, &b, &nubar, &grid, 2.0).unwrap();
        // (0.1 - 0.6)/(2 * -0.5) = 0.5 in the interior, 0 at T.
        assert_relative_eq!(x_star[0], 0.5, max_relative = 1e-12);
        assert_eq!(*x_star.last().unwrap(), 0.0);
    }

    #[test]
    fn degenerate_quadratic_coefficient_is_an_error() {
        let p = params();
        let grid = TimeGrid::new(p.horizon, 100).unwrap();
        let n = grid.n_points();
        let a = vec![0.0; n];
        let b = vec![0.6; n];
        let nubar = vec![0.0; n];
        assert!(matches!(
            threshold_quadratic(&p, &a, &b, &nubar, &grid, 2.0),
            Err(Error::DegenerateCoefficient { .. })
        ));
    }

    #[test]
    fn riccati_closed_form_solves_the_ode() {
        // Oracle: integrate dA/dt = rho A + h d2 - A^2/beta backward from
        // A(t_star) = 0 with fine RK4 and compare.
        let p = params();
        let (d2, sigma) = (1.0, 0.0);
        let rho = p.r + 2.0 * p.delta - sigma * sigma;
        let forcing = p.hours * d2 / p.beta;
        let disc = (rho * rho + 4.0 * forcing).sqrt();
        let (l1, l2) = (0.5 * (rho + disc), 0.5 * (rho - disc));
        let t_star = 0.8;
        let f = |a: f64| rho * a + p.hours * d2 - a * a / p.beta;
        let n = 100_000usize;
        let h = t_star / n as f64;
        let mut a = 0.0f64;
        let mut t = t_star;
        let mut max_rel = 0.0f64;
        for _ in 0..n {
            let k1 = f(a);
            let k2 = f(a - 0.5 * h * k1);
            let k3 = f(a - 0.5 * h * k2);
            let k4 = f(a - h * k3);
            a -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t -= h;
            let closed = riccati_closed_form(p.beta, l1, l2, t_star, t);
            let scale = closed.abs().max(1e-3);
            max_rel = max_rel.max((closed - a).abs() / scale);
        }
        assert!(max_rel <= 1e-8, "closed form deviates by {max_rel:.3e}");
    }

    #[test]
    fn ansatz_matches_at_t_star_and_stays_concave() {
        let p = params();
        let grid = TimeGrid::new(p.horizon, 400).unwrap();
        let n = grid.n_points();
        let xbar = vec![0.04; n];
        let nubar = vec![0.02; n];
        let (a, b) = noninstall_quadratic(&p, 2.0, 1.0, &xbar, &grid, false, 0.0);
        let t_star = 0.62;
        let coeffs =
            ansatz_install_coeffs(&p, 2.0, 1.0, &xbar, &nubar, &a, &b, t_star, &grid, false, 0.0)
                .unwrap();
        assert!(coeffs.lambda1 > 0.0 && coeffs.lambda2 < 0.0);
        // A(t_star) = 0 exactly by construction of the closed form.
        let at_star = riccati_closed_form(p.beta, coeffs.lambda1, coeffs.lambda2, t_star, t_star);
        assert!(at_star.abs() < 1e-14);
        // A <= 0 on [0, t_star].
        let idx = grid.floor_index(t_star);
        assert!(coeffs.big_a[..=idx].iter().all(|&v| v <= 1e-14));
        // B matches b at t_star.
        assert_relative_eq!(coeffs.r_b, interp_path(&grid, &b, t_star), max_relative = 1e-12);
        // C is continuous at t_star (zero terminal condition).
        assert!(coeffs.big_c[idx].abs() <= 1e-3 * p.alpha);
    }

    #[test]
    fn reduction_mode_collapses_to_linear_value() {
        let p = params();
        let grid = TimeGrid::new(p.horizon, 200).unwrap();
        let n = grid.n_points();
        let xbar = vec![0.03; n];
        let nubar = vec![0.01; n];
        let (a, b) = noninstall_quadratic(&p, 2.0, 1.0, &xbar, &grid, true, 0.0);
        assert!(a.iter().all(|&v| v == 0.0));
        let coeffs =
            ansatz_install_coeffs(&p, 2.0, 1.0, &xbar, &nubar, &a, &b, 0.5, &grid, true, 0.0)
                .unwrap();
        assert_eq!(coeffs.big_a, a);
        assert_eq!(coeffs.big_b, b);
        assert_eq!(coeffs.lambda2, 0.0);
    }

    #[test]
    fn inverse_value_examples() {
        let mut p = params();
        p.cost = 1e-300; // effectively zero cost; the type requires c > 0
        let grid = TimeGrid::new(p.horizon, 800).unwrap();
        let n = grid.n_points();
        let price_level = 2.0;

        // Empty integral at t = T.
        let xbar = vec![0.05; n];
        let (v, dv) = noninstall_value_inverse(&p, price_level, &xbar, &grid, n - 1, 0.3).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(dv, 0.0);

        // xbar = 0: the producer alone earns P(x) x = p per hour, discounted
        // at r, independent of x; the derivative vanishes.
        let xbar0 = vec![0.0; n];
        for &x in &[0.2, 0.7] {
            let (v, dv) = noninstall_value_inverse(&p, price_level, &xbar0, &grid, 0, x).unwrap();
            let expected = p.hours * price_level * (1.0 - (-p.r * p.horizon).exp()) / p.r;
            assert_relative_eq!(v, expected, max_relative = 1e-6);
            assert!(dv.abs() <= 1e-9 * expected);
        }
    }

    #[test]
    fn inverse_derivative_is_strictly_decreasing_in_x() {
        let p = params();
        let grid = TimeGrid::new(p.horizon, 400).unwrap();
        let n = grid.n_points();
        let xbar = vec![0.05; n];
        let mut prev = f64::INFINITY;
        for &x in &[0.0, 0.1, 0.3, 0.6, 1.0] {
            let (_, dv) = noninstall_value_inverse(&p, 2.0, &xbar, &grid, 0, x).unwrap();
            assert!(dv < prev, "derivative not decreasing at x = {x}");
            prev = dv;
        }
    }

    #[test]
    fn inverse_value_rejects_vanishing_aggregate() {
        let p = params();
        let grid = TimeGrid::new(p.horizon, 400).unwrap();
        let xbar = vec![0.0; grid.n_points()];
        assert!(matches!(
            noninstall_value_inverse(&p, 2.0, &xbar, &grid, 0, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn last_zero_crossing_interpolates() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        // margin: positive until between nodes 2 and 3.
        let margin = vec![1.0, 0.5, 0.25, -0.25, -1.0];
        let t = last_zero_crossing(&grid, &margin);
        assert_relative_eq!(t, 0.5 + 0.25 * 0.25 / 0.5, max_relative = 1e-12);
        assert_eq!(last_zero_crossing(&grid, &[-1.0, -1.0, -1.0, -1.0, -1.0]), 0.0);
    }
}
