//! Homogeneous-producer equilibrium: forward integration of the coupled
//! capacity/costate system, a bisection shooting solver for the terminal
//! condition u_T = 0, and the piecewise-exponential closed form available
//! for linear prices.
//!
//! The system is
//!
//! ```text
//! dX/dt = -delta X + (u - alpha)^+ / beta        X(0) = X0
//! du/dt = (r + delta) u - (P(X) - c) h           u(T) = 0
//! ```
//!
//! By the comparison principle the map u(0) -> u(T) is strictly increasing,
//! so bisection on u(0) is globally convergent.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_assumption, ModelParams, PriceFunction};

/// Uniform grid on [0, T] with `n_steps` steps (`n_steps + 1` points).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Grid(format!("horizon must be > 0, got {t_end}")));
        }
        if n_steps < 2 {
            return Err(Error::Grid(format!("need at least 2 time steps, got {n_steps}")));
        }
        let dt = t_end / n_steps as f64;
        let mut t: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
        t[n_steps] = t_end;
        Ok(TimeGrid { t, dt })
    }

    pub fn points(&self) -> &[f64] {
        &self.t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_points(&self) -> usize {
        self.t.len()
    }

    pub fn n_steps(&self) -> usize {
        self.t.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    /// Index of the last grid point <= t.
    pub fn floor_index(&self, t: f64) -> usize {
        ((t / self.dt) as usize).min(self.n_steps())
    }
}

/// Equilibrium paths of the homogeneous model.
#[derive(Debug, Clone)]
pub struct HomogeneousSolution {
    pub grid: TimeGrid,
    /// Total installed capacity X (MW).
    pub capacity: Vec<f64>,
    /// Costate u ($/MW).
    pub costate: Vec<f64>,
    /// Total installation rate K = (u - alpha)^+ / beta (MW/year).
    pub rate: Vec<f64>,
    /// Last time at which installation occurs (years).
    pub t_star: f64,
    /// Shot initial costate ($/MW).
    pub u0: f64,
    /// |u(T)| of the returned solution.
    pub residual: f64,
}

fn rate_from_costate(u: f64, alpha: f64, beta: f64) -> f64 {
    (u - alpha).max(0.0) / beta
}

/// Classical fixed-step RK4 on the forward system, with the positive part
/// evaluated inside every stage.
pub fn integrate_forward(
    params: &ModelParams,
    price: &PriceFunction,
    u0: f64,
    grid: &TimeGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if grid.dt() > params.horizon / 100.0 {
        return Err(Error::Grid(format!(
            "time step {} too coarse; need dt <= T/100 = {}",
            grid.dt(),
            params.horizon / 100.0
        )));
    }
    if !price.is_linear() && !(params.x0 > 0.0) {
        return Err(Error::InvalidParams(
            "X0 must be > 0 with the inverse price".into(),
        ));
    }

    let n = grid.n_steps();
    let dt = grid.dt();
    let rhs = |x: f64, u: f64| -> (f64, f64) {
        (
            -params.delta * x + rate_from_costate(u, params.alpha, params.beta),
            params.kappa() * u - (price.value(x) - params.cost) * params.hours,
        )
    };

    let mut capacity = Vec::with_capacity(n + 1);
    let mut costate = Vec::with_capacity(n + 1);
    let (mut x, mut u) = (params.x0, u0);
    capacity.push(x);
    costate.push(u);
    for i in 0..n {
        let (k1x, k1u) = rhs(x, u);
        let (k2x, k2u) = rhs(x + 0.5 * dt * k1x, u + 0.5 * dt * k1u);
        let (k3x, k3u) = rhs(x + 0.5 * dt * k2x, u + 0.5 * dt * k2u);
        let (k4x, k4u) = rhs(x + dt * k3x, u + dt * k3u);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        u += dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        if !x.is_finite() || !u.is_finite() {
            return Err(Error::Diverged {
                t: grid.points()[i + 1],
            });
        }
        capacity.push(x);
        costate.push(u);
    }
    Ok((capacity, costate))
}

/// First time the costate crosses below alpha, linearly interpolated between
/// the bracketing grid points. Zero when the costate never exceeds alpha (no
/// installation at any time).
fn extract_t_star(grid: &TimeGrid, costate: &[f64], alpha: f64) -> f64 {
    if costate[0] < alpha {
        return 0.0;
    }
    for i in 0..costate.len() - 1 {
        if costate[i] >= alpha && costate[i + 1] < alpha {
            let g0 = costate[i] - alpha;
            let g1 = costate[i + 1] - alpha;
            return grid.points()[i] + grid.dt() * g0 / (g0 - g1);
        }
    }
    grid.t_end()
}

/// Bracket for the shot initial costate, from the explicit sub/super
/// solutions of the forward system: trapezoid quadrature of
/// e^{-(r+delta)t}(P(X0 e^{-delta t}) - c) on the solution grid, widened by
/// one unit at each end.
fn shooting_bracket(params: &ModelParams, price: &PriceFunction, grid: &TimeGrid) -> (f64, f64) {
    let kappa = params.kappa();
    let w = |t: f64| {
        (-kappa * t).exp() * (price.value(params.x0 * (-params.delta * t).exp()) - params.cost)
    };
    let mut cumulative = 0.0f64;
    let mut min_cum = 0.0f64;
    let mut w_prev = w(0.0);
    for i in 1..grid.n_points() {
        let w_here = w(grid.points()[i]);
        cumulative += 0.5 * grid.dt() * (w_prev + w_here);
        min_cum = min_cum.min(cumulative);
        w_prev = w_here;
    }
    (params.hours * min_cum - 1.0, params.hours * cumulative + 1.0)
}

/// Bisection shooting on u(0). Terminates when |u(T)| <= tol.
pub fn shoot(
    params: &ModelParams,
    price: &PriceFunction,
    grid: &TimeGrid,
    tol: f64,
) -> Result<HomogeneousSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("shooting tolerance must be > 0, got {tol}")));
    }
    let (mut lo, mut hi) = shooting_bracket(params, price, grid);
    let residual_at = |u0: f64| -> Result<f64> {
        let (_, costate) = integrate_forward(params, price, u0, grid)?;
        Ok(*costate.last().unwrap())
    };
    let r_lo = residual_at(lo)?;
    let r_hi = residual_at(hi)?;
    if !(r_lo <= 0.0 && r_hi >= 0.0) {
        return Err(Error::BracketFailure {
            lo_residual: r_lo,
            hi_residual: r_hi,
        });
    }

    const MAX_ITERS: usize = 200;
    let mut mid = 0.5 * (lo + hi);
    let mut r_mid = f64::INFINITY;
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        mid = 0.5 * (lo + hi);
        r_mid = residual_at(mid)?;
        if r_mid.abs() <= tol {
            converged = true;
            break;
        }
        if r_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: MAX_ITERS,
            residual: r_mid,
        });
    }

    let (capacity, costate) = integrate_forward(params, price, mid, grid)?;
    let rate = costate
        .iter()
        .map(|&u| rate_from_costate(u, params.alpha, params.beta))
        .collect();
    let t_star = extract_t_star(grid, &costate, params.alpha);
    Ok(HomogeneousSolution {
        grid: grid.clone(),
        capacity,
        costate,
        rate,
        t_star,
        u0: mid,
        residual: r_mid.abs(),
    })
}

/// Coefficients of the piecewise-exponential capacity path under a linear
/// price: X_t = coef_c e^{r1 t} + coef_d e^{r2 t} + theta on [0, t_star],
/// exponential decay afterwards.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SemiExplicitCoeffs {
    pub theta: f64,
    pub r1: f64,
    pub r2: f64,
    pub coef_c: f64,
    pub coef_d: f64,
    pub t_star: f64,
}

struct LinearClosedForm {
    params: ModelParams,
    d1: f64,
    d2: f64,
    theta: f64,
    r1: f64,
    r2: f64,
}

impl LinearClosedForm {
    fn new(params: &ModelParams, d1: f64, d2: f64) -> Self {
        let kappa = params.kappa();
        let q = kappa * params.delta + params.hours * d2 / params.beta;
        let disc = (params.r * params.r + 4.0 * q).sqrt();
        let r1 = 0.5 * (params.r + disc);
        let r2 = 0.5 * (params.r - disc);
        let theta = (params.hours * (d1 - params.cost) - kappa * params.alpha)
            / (params.beta * kappa * params.delta + params.hours * d2);
        LinearClosedForm {
            params: *params,
            d1,
            d2,
            theta,
            r1,
            r2,
        }
    }

    /// C and D for a candidate stopping time y, from X(0) = X0 and
    /// delta X(y) + X'(y) = 0. Written with e^{-(r1-r2) y} so no exponential
    /// overflows for long horizons.
    fn coefs_at(&self, y: f64) -> (f64, f64) {
        let p = &self.params;
        let e21 = (-(self.r1 - self.r2) * y).exp();
        let num = (p.x0 - self.theta) * (self.r2 + p.delta) * e21
            + p.delta * self.theta * (-self.r1 * y).exp();
        let den = (self.r2 + p.delta) * e21 - (self.r1 + p.delta);
        let c = num / den;
        let d = p.x0 - c - self.theta;
        (c, d)
    }

    fn capacity_at_stop(&self, y: f64) -> f64 {
        let (c, d) = self.coefs_at(y);
        c * (self.r1 * y).exp() + d * (self.r2 * y).exp() + self.theta
    }

    /// Residual of the stopping-time condition u(y) = alpha, where u(y) is
    /// the discounted forward margin along the post-stop decay path.
    fn stop_residual(&self, y: f64) -> f64 {
        let p = &self.params;
        let kappa = p.kappa();
        let remaining = p.horizon - y;
        let x_stop = self.capacity_at_stop(y);
        let term1 =
            p.hours * (self.d1 - p.cost) / kappa * (1.0 - (-kappa * remaining).exp());
        let term2 = p.hours * self.d2 / (p.r + 2.0 * p.delta)
            * (1.0 - (-(p.r + 2.0 * p.delta) * remaining).exp())
            * x_stop;
        term1 - term2 - p.alpha
    }

    /// Costate along the decay path after the stopping time.
    fn costate_after_stop(&self, t: f64, y: f64, x_stop: f64) -> f64 {
        let p = &self.params;
        let kappa = p.kappa();
        let remaining = p.horizon - t;
        p.hours * (self.d1 - p.cost) / kappa * (1.0 - (-kappa * remaining).exp())
            - p.hours * self.d2 / (p.r + 2.0 * p.delta)
                * (1.0 - (-(p.r + 2.0 * p.delta) * remaining).exp())
                * x_stop
                * (p.delta * (t - y)).exp()
    }
}

/// Semi-explicit solution for linear prices: closed-form exponents plus a
/// scalar root-find for the stopping time.
pub fn semi_explicit_linear(
    params: &ModelParams,
    price: &PriceFunction,
    grid: &TimeGrid,
) -> Result<(SemiExplicitCoeffs, HomogeneousSolution)> {
    let (d1, d2) = match *price {
        PriceFunction::Linear { d1, d2 } => (d1, d2),
        _ => {
            return Err(Error::InvalidParams(
                "the semi-explicit solution requires a linear price".into(),
            ))
        }
    };
    let report = check_assumption(params, price);
    if !report.holds {
        return Err(Error::AssumptionFailed(
            "the installation incentive check fails; only the trivial no-installation \
             solution exists (use the shooting solver)"
                .into(),
        ));
    }

    let form = LinearClosedForm::new(params, d1, d2);
    if form.r1 * params.horizon > 700.0 {
        return Err(Error::Domain(format!(
            "horizon too long for the closed form: r1*T = {} overflows",
            form.r1 * params.horizon
        )));
    }

    // Bracket the stopping time on (0, T) by scanning for a sign change.
    const SCAN: usize = 512;
    let t_end = params.horizon;
    let mut lo = f64::NAN;
    let mut hi = f64::NAN;
    let mut g_prev = f64::NAN;
    let mut y_prev = f64::NAN;
    for k in 1..=SCAN {
        let y = t_end * k as f64 / (SCAN + 1) as f64;
        let g = form.stop_residual(y);
        if k > 1 && g_prev.signum() != g.signum() {
            lo = y_prev;
            hi = y;
            break;
        }
        g_prev = g;
        y_prev = y;
    }
    if !lo.is_finite() {
        return Err(Error::RootBracketFailure { t_end });
    }
    let tol = 1e-8 * params.alpha;
    let mut g_lo = form.stop_residual(lo);
    let mut t_star = 0.5 * (lo + hi);
    for _ in 0..200 {
        t_star = 0.5 * (lo + hi);
        let g_mid = form.stop_residual(t_star);
        if g_mid.abs() <= tol {
            break;
        }
        if g_mid.signum() == g_lo.signum() {
            lo = t_star;
            g_lo = g_mid;
        } else {
            hi = t_star;
        }
    }
    let residual = form.stop_residual(t_star).abs();
    if residual > tol {
        return Err(Error::NoConvergence {
            iterations: 200,
            residual,
        });
    }

    let (coef_c, coef_d) = form.coefs_at(t_star);
    let x_stop = form.capacity_at_stop(t_star);
    let coeffs = SemiExplicitCoeffs {
        theta: form.theta,
        r1: form.r1,
        r2: form.r2,
        coef_c,
        coef_d,
        t_star,
    };

    let n = grid.n_points();
    let mut capacity = Vec::with_capacity(n);
    let mut costate = Vec::with_capacity(n);
    let mut rate = Vec::with_capacity(n);
    for &t in grid.points() {
        let (x, u) = if t <= t_star {
            let x = coef_c * (form.r1 * t).exp() + coef_d * (form.r2 * t).exp() + form.theta;
            // u = alpha + beta (X' + delta X) in the installation phase.
            let xdot = coef_c * form.r1 * (form.r1 * t).exp() + coef_d * form.r2 * (form.r2 * t).exp();
            (x, params.alpha + params.beta * (xdot + params.delta * x))
        } else {
            let x = x_stop * (-params.delta * (t - t_star)).exp();
            (x, form.costate_after_stop(t, t_star, x_stop))
        };
        capacity.push(x);
        costate.push(u);
        rate.push(rate_from_costate(u, params.alpha, params.beta));
    }

    let u0 = costate[0];
    let terminal = costate.last().unwrap().abs();
    let solution = HomogeneousSolution {
        grid: grid.clone(),
        capacity,
        costate,
        rate,
        t_star,
        u0,
        residual: terminal,
    };
    Ok((coeffs, solution))
}

/// Diagnostic checks on a solved path: single downward crossing of the
/// costate through alpha, price above production cost, and the pure-decay
/// lower bound on capacity.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LemmaReport {
    pub single_crossing: bool,
    pub price_above_cost: bool,
    pub lower_bound: bool,
    /// min_t P(X_t) - c.
    pub min_price_margin: f64,
    /// max_t (X0 e^{-delta t} - X_t); negative values mean no violation.
    pub max_lower_bound_gap: f64,
    pub crossing_count: usize,
}

impl LemmaReport {
    pub fn all_pass(&self) -> bool {
        self.single_crossing && self.price_above_cost && self.lower_bound
    }
}

pub fn verify_lemmas(
    sol: &HomogeneousSolution,
    params: &ModelParams,
    price: &PriceFunction,
) -> LemmaReport {
    let alpha = params.alpha;
    let band = 1e-12 * alpha.abs().max(1.0);

    let mut crossing_count = 0usize;
    let mut downward = true;
    let mut prev_sign = 0i8;
    for &u in &sol.costate {
        let g = u - alpha;
        let sign = if g > band {
            1
        } else if g < -band {
            -1
        } else {
            0
        };
        if sign != 0 {
            if prev_sign != 0 && sign != prev_sign {
                crossing_count += 1;
                if sign > prev_sign {
                    downward = false;
                }
            }
            prev_sign = sign;
        }
    }
    let single_crossing = crossing_count <= 1 && (crossing_count == 0 || downward);

    let mut min_margin = f64::INFINITY;
    for &x in &sol.capacity {
        min_margin = min_margin.min(price.value(x) - params.cost);
    }
    let price_slack = 1e-8 * (price.value(params.x0).abs() + params.cost.abs());
    let price_above_cost = min_margin >= -price_slack;

    let mut max_gap = f64::NEG_INFINITY;
    for (i, &x) in sol.capacity.iter().enumerate() {
        let bound = params.x0 * (-params.delta * sol.grid.points()[i]).exp();
        max_gap = max_gap.max(bound - x);
    }
    let bound_slack = 1e-8 * params.x0.max(1.0);
    let lower_bound = max_gap <= bound_slack;

    LemmaReport {
        single_crossing,
        price_above_cost,
        lower_bound,
        min_price_margin: min_margin,
        max_lower_bound_gap: max_gap,
        crossing_count,
    }
}
