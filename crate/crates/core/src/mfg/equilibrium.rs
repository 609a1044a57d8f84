//! Outer fixed-point iteration on the mean installation rate, coupling the
//! value stage (two-piece quadratic approximation or full backward finite
//! differences) to the forward transport of the population density.
//!
//! One iteration: mean rate guess -> mean capacity path -> value stage ->
//! forward density transport with the induced control -> updated mean rate
//! from the equilibrium condition, relaxed by a damping factor.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::homogeneous::TimeGrid;
use crate::mfg::coeffs::{
    ansatz_install_coeffs, last_zero_crossing, noninstall_quadratic, threshold_quadratic,
    threshold_reduction, AnsatzCoefficients,
};
use crate::mfg::density::{
    build_initial_density, discrete_mass, ControlField, Density, InitialDensity,
    TransportStats, TransportStepper,
};
use crate::mfg::grids::Grids;
use crate::mfg::hjb::{hjb_backward, HjbBoundary, LayerOpts, ValueSurface};
use crate::model::{ModelParams, PriceFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MfgMethod {
    /// Two-piece quadratic value approximation (linear prices only).
    Ansatz,
    /// Full backward finite-difference value solve.
    FiniteDifference,
}

/// Starting point for the mean installation rate.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    /// nubar_t = xbar_0 (1 - t/T).
    Decay,
    /// Caller-supplied path on the time grid.
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Relaxation factor omega in (0, 1], used for plain relaxed updates.
    pub damping: f64,
    /// History depth of the accelerated fixed-point update; 0 falls back to
    /// plain relaxation everywhere.
    pub anderson_depth: usize,
    pub layer: LayerOpts,
    /// Replace P(x + N xbar) by P((N+1) xbar): no own-price impact.
    pub reduction: bool,
    pub initial_guess: InitialGuess,
    /// Cap on the number of stored density/value layers in the output.
    pub stored_layers: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            outer_tol: 1e-6,
            max_outer: 500,
            damping: 0.5,
            anderson_depth: 5,
            layer: LayerOpts::default(),
            reduction: false,
            initial_guess: InitialGuess::Decay,
            stored_layers: 201,
        }
    }
}

impl PartialEq for LayerOpts {
    fn eq(&self, other: &Self) -> bool {
        self.omega == other.omega && self.tol == other.tol && self.max_iters == other.max_iters
    }
}

/// Value surface sampled on a subset of time layers.
#[derive(Debug, Clone)]
pub struct SurfaceSample {
    pub t_idx: Vec<usize>,
    pub v: Array2<f64>,
    pub vx: Array2<f64>,
}

/// Structural invariants tracked across every layer of the converged solve.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SolveDiagnostics {
    /// max_t |mass(t) - mass(0)| over the final forward pass.
    pub max_mass_drift: f64,
    /// min over all layers and nodes of the density.
    pub min_density: f64,
    /// Count of (layer, node) pairs where the control increases in x.
    pub control_monotonicity_violations: usize,
    /// Count of concavity violations of the value representation.
    pub concavity_violations: usize,
    /// For the quadratic approximation: largest mismatch of dV/dx across the
    /// threshold (no smooth pasting away from (t_star, 0)).
    pub max_vx_jump_at_threshold: f64,
}

/// Converged mean field equilibrium.
#[derive(Debug, Clone)]
pub struct MeanFieldEquilibrium {
    pub grids: Grids,
    pub value: SurfaceSample,
    pub density: Density,
    /// Mean installed capacity path (MW).
    pub mean_capacity: Vec<f64>,
    /// Mean installation rate path (MW/year).
    pub mean_rate: Vec<f64>,
    /// Threshold capacity path x*(t) (MW).
    pub threshold: Vec<f64>,
    pub t_star: f64,
    pub iterations: usize,
    /// Sup-norm change of the mean rate per outer iteration.
    pub residual_history: Vec<f64>,
    /// Present for ansatz runs (and for linear fd runs, whose boundary
    /// closures reuse the coefficients).
    pub coeffs: Option<AnsatzCoefficients>,
    pub diagnostics: SolveDiagnostics,
    pub sigma: f64,
    pub reduction: bool,
}

impl MeanFieldEquilibrium {
    /// Implied total capacity (N+1) xbar.
    pub fn total_capacity(&self, params: &ModelParams) -> Vec<f64> {
        self.mean_capacity.iter().map(|&x| params.producers() * x).collect()
    }

    /// Implied total installation rate (N+1) nubar.
    pub fn total_rate(&self, params: &ModelParams) -> Vec<f64> {
        self.mean_rate.iter().map(|&v| params.producers() * v).collect()
    }
}

/// RK4 for dxbar/dt = -delta xbar + nubar(t), with the rate interpolated at
/// stage midpoints.
pub(crate) fn integrate_mean(
    params: &ModelParams,
    nubar: &[f64],
    grid: &TimeGrid,
    x0: f64,
) -> Vec<f64> {
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut xbar = Vec::with_capacity(n + 1);
    let mut x = x0;
    xbar.push(x);
    for k in 0..n {
        let nu0 = nubar[k];
        let nu1 = nubar[k + 1];
        let num = 0.5 * (nu0 + nu1);
        let f = |x: f64, nu: f64| -params.delta * x + nu;
        let k1 = f(x, nu0);
        let k2 = f(x + 0.5 * dt * k1, num);
        let k3 = f(x + 0.5 * dt * k2, num);
        let k4 = f(x + dt * k3, nu1);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        xbar.push(x);
    }
    xbar
}

/// Equilibrium update of the mean installation rate at one time node:
///
/// ```text
/// nubar = int_{A} (dV/dx - alpha) m dx / (2 beta + beta N int_{A} m dx)
/// A = { x : dV/dx > alpha + beta N nubar_in },     bounded by region_limit
/// ```
///
/// Integrals by trapezoid on the capacity grid with the crossing point
/// interpolated. With `cut_at_crossing = false` the integral runs over the
/// whole of [0, region_limit] without cutting at the derivative crossing;
/// the equilibrium loop uses that form with the closed-form threshold as the
/// limit, because the transported density concentrates exactly where the
/// sampled derivative meets the cutoff, and cutting there would make the
/// update jump under sub-cell movements of the crossing. Mass sitting at the
/// crossing contributes beta*N*nubar*mass to both numerator and denominator
/// scaled terms, so the fixed point itself does not depend on the choice.
pub fn mean_rate_update(
    params: &ModelParams,
    grids: &Grids,
    vx_row: &[f64],
    m_row: &[f64],
    region_limit: f64,
    nubar_in: f64,
    cut_at_crossing: bool,
) -> f64 {
    let cutoff = params.alpha + params.beta * params.n_others * nubar_in;
    if region_limit <= 0.0 || (cut_at_crossing && vx_row[0] <= cutoff) {
        return 0.0;
    }
    let x = grids.x();
    let dx = grids.dx();
    let mut num = 0.0f64;
    let mut mass = 0.0f64;
    let mut prev_x = x[0];
    let mut prev_f = (vx_row[0] - params.alpha) * m_row[0];
    let mut prev_m = m_row[0];
    for j in 1..x.len() {
        let mut end = x[j];
        let mut stop = false;
        if cut_at_crossing && vx_row[j] <= cutoff {
            let g0 = vx_row[j - 1] - cutoff;
            let g1 = vx_row[j] - cutoff;
            let theta = if g0 > g1 { g0 / (g0 - g1) } else { 0.0 };
            end = x[j - 1] + theta * dx;
            stop = true;
        }
        if region_limit < end {
            end = region_limit;
            stop = true;
        }
        let theta = ((end - x[j - 1]) / dx).clamp(0.0, 1.0);
        let vx_end = vx_row[j - 1] + theta * (vx_row[j] - vx_row[j - 1]);
        let m_end = m_row[j - 1] + theta * (m_row[j] - m_row[j - 1]);
        let f_end = (vx_end - params.alpha) * m_end;
        num += 0.5 * (end - prev_x) * (prev_f + f_end);
        mass += 0.5 * (end - prev_x) * (prev_m + m_end);
        if stop {
            break;
        }
        prev_x = x[j];
        prev_f = (vx_row[j] - params.alpha) * m_row[j];
        prev_m = m_row[j];
    }
    let den = 2.0 * params.beta + params.beta * params.n_others * mass;
    (num / den).max(0.0)
}

/// Value-stage artifacts of one outer iteration.
enum Stage {
    Quadratic {
        coeffs: AnsatzCoefficients,
        x_star: Vec<f64>,
        t_star: f64,
    },
    Surface {
        surface: ValueSurface,
        x_star: Vec<f64>,
        t_star: f64,
        coeffs: Option<AnsatzCoefficients>,
        /// Installation-region bound from the exact non-installation-region
        /// derivative formula; the rate update integrates up to this limit.
        region_limit: Vec<f64>,
    },
}

impl Stage {
    fn x_star(&self) -> &[f64] {
        match self {
            Stage::Quadratic { x_star, .. } | Stage::Surface { x_star, .. } => x_star,
        }
    }

    /// Upper bound of the rate-update integral per layer.
    fn region_limit(&self, k: usize) -> f64 {
        match self {
            Stage::Quadratic { x_star, .. } => x_star[k],
            Stage::Surface { region_limit, .. } => region_limit[k],
        }
    }

    fn t_star(&self) -> f64 {
        match self {
            Stage::Quadratic { t_star, .. } | Stage::Surface { t_star, .. } => *t_star,
        }
    }

    /// Derivative row driving the rate update: the installation-branch
    /// derivative for the quadratic stage, the solved surface otherwise.
    fn fill_derivative_row(&self, grids: &Grids, k: usize, out: &mut [f64]) {
        match self {
            Stage::Quadratic { coeffs, .. } => {
                for (j, &x) in grids.x().iter().enumerate() {
                    out[j] = coeffs.install_derivative_at(&grids.time, k, x);
                }
            }
            Stage::Surface { surface, .. } => {
                for (j, slot) in out.iter_mut().enumerate() {
                    *slot = surface.vx[[k, j]];
                }
            }
        }
    }

    /// Derivative feeding the transport drift at an arbitrary capacity.
    fn control_derivative_at(&self, grids: &Grids, k: usize, x: f64) -> f64 {
        match self {
            Stage::Quadratic { coeffs, .. } => coeffs.install_derivative_at(&grids.time, k, x),
            Stage::Surface { surface, .. } => {
                let dx = grids.dx();
                let pos = (x / dx).clamp(0.0, (grids.n_x() - 1) as f64);
                let j = (pos.floor() as usize).min(grids.n_x() - 2);
                let frac = pos - j as f64;
                surface.vx[[k, j]] * (1.0 - frac) + surface.vx[[k, j + 1]] * frac
            }
        }
    }

    /// Two-piece derivative for the sampled output surface.
    fn sample_derivative_at(&self, grids: &Grids, k: usize, x: f64) -> f64 {
        match self {
            Stage::Quadratic { coeffs, x_star, .. } => {
                coeffs.derivative_at(&grids.time, x_star, k, x)
            }
            Stage::Surface { .. } => self.control_derivative_at(grids, k, x),
        }
    }

    fn value_at(&self, grids: &Grids, k: usize, j: usize) -> f64 {
        match self {
            Stage::Quadratic { coeffs, x_star, .. } => {
                coeffs.value_at(&grids.time, x_star, k, grids.x()[j])
            }
            Stage::Surface { surface, .. } => surface.v[[k, j]],
        }
    }
}

/// Installation-rate field induced by a value stage and a cutoff path.
struct StageControl<'a> {
    stage: &'a Stage,
    grids: &'a Grids,
    cutoffs: &'a [f64],
    two_beta: f64,
}

impl ControlField for StageControl<'_> {
    fn rate(&self, t_idx: usize, x: f64) -> f64 {
        let vx = self.stage.control_derivative_at(self.grids, t_idx, x);
        (vx - self.cutoffs[t_idx]).max(0.0) / self.two_beta
    }
}

fn cutoff_path(params: &ModelParams, nubar: &[f64]) -> Vec<f64> {
    nubar
        .iter()
        .map(|&nb| params.alpha + params.beta * params.n_others * nb)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn build_stage(
    params: &ModelParams,
    price: &PriceFunction,
    grids: &Grids,
    method: MfgMethod,
    opts: &SolveOptions,
    sigma: f64,
    xbar: &[f64],
    nubar: &[f64],
) -> Result<Stage> {
    match (*price, method) {
        (PriceFunction::Linear { d1, d2 }, _) => {
            let (a, b) = noninstall_quadratic(params, d1, d2, xbar, &grids.time, opts.reduction, sigma);
            let x_star = if opts.reduction {
                threshold_reduction(params, &b, nubar, &grids.time, grids.x_max())
            } else {
                threshold_quadratic(params, &a, &b, nubar, &grids.time, grids.x_max())?
            };
            // Margin b - cutoff is positive exactly where the threshold is.
            let cutoffs = cutoff_path(params, nubar);
            let margin: Vec<f64> = b.iter().zip(&cutoffs).map(|(&bi, &ci)| bi - ci).collect();
            let t_star = last_zero_crossing(&grids.time, &margin);
            let coeffs = ansatz_install_coeffs(
                params, d1, d2, xbar, nubar, &a, &b, t_star, &grids.time, opts.reduction, sigma,
            )?;
            match method {
                MfgMethod::Ansatz => Ok(Stage::Quadratic { coeffs, x_star, t_star }),
                MfgMethod::FiniteDifference => {
                    let boundary = HjbBoundary::Quadratic {
                        a: &coeffs.a,
                        b: &coeffs.b,
                        c0: &coeffs.big_c,
                    };
                    let surface = hjb_backward(
                        params, price, xbar, nubar, grids, &boundary, sigma, &opts.layer,
                        opts.reduction,
                    )?;
                    let region_limit = x_star;
                    let (x_star, t_star) = surface_threshold(&surface, grids, &cutoffs);
                    Ok(Stage::Surface {
                        surface,
                        x_star,
                        t_star,
                        coeffs: Some(coeffs),
                        region_limit,
                    })
                }
            }
        }
        (PriceFunction::Inverse { p }, MfgMethod::FiniteDifference) => {
            let boundary = HjbBoundary::InverseIntegral { p };
            let surface = hjb_backward(
                params, price, xbar, nubar, grids, &boundary, sigma, &opts.layer, opts.reduction,
            )?;
            let cutoffs = cutoff_path(params, nubar);
            let region_limit = inverse_region_limit(params, p, xbar, nubar, grids)?;
            let (x_star, t_star) = surface_threshold(&surface, grids, &cutoffs);
            Ok(Stage::Surface {
                surface,
                x_star,
                t_star,
                coeffs: None,
                region_limit,
            })
        }
        (PriceFunction::Inverse { .. }, MfgMethod::Ansatz) => Err(Error::InvalidParams(
            "the quadratic approximation requires a linear price".into(),
        )),
    }
}

/// Installation-region bound for the inverse price from the
/// non-installation-region derivative formula, sampled on a coarse set of
/// layers (the threshold is smooth in time) and interpolated in between.
fn inverse_region_limit(
    params: &ModelParams,
    p: f64,
    xbar: &[f64],
    nubar: &[f64],
    grids: &Grids,
) -> Result<Vec<f64>> {
    use crate::mfg::coeffs::threshold_inverse_at;
    let n = grids.time.n_points();
    let stride = (n / 200).max(1);
    let mut anchors: Vec<usize> = (0..n).step_by(stride).collect();
    if *anchors.last().unwrap() != n - 1 {
        anchors.push(n - 1);
    }
    let mut coarse = Vec::with_capacity(anchors.len());
    for &k in &anchors {
        coarse.push(threshold_inverse_at(
            params,
            p,
            xbar,
            nubar[k],
            &grids.time,
            k,
            grids.x_max(),
        )?);
    }
    let mut limit = vec![0.0f64; n];
    for (w, c) in anchors.windows(2).zip(coarse.windows(2)) {
        let (k0, k1) = (w[0], w[1]);
        for k in k0..=k1 {
            let frac = (k - k0) as f64 / (k1 - k0).max(1) as f64;
            limit[k] = c[0] * (1.0 - frac) + c[1] * frac;
        }
    }
    Ok(limit)
}

fn surface_threshold(
    surface: &ValueSurface,
    grids: &Grids,
    cutoffs: &[f64],
) -> (Vec<f64>, f64) {
    let n = grids.time.n_points();
    let mut x_star = Vec::with_capacity(n);
    let mut margin = Vec::with_capacity(n);
    for k in 0..n {
        x_star.push(surface.threshold_on_layer(grids, k, cutoffs[k]));
        margin.push(surface.vx[[k, 0]] - cutoffs[k]);
    }
    let t_star = last_zero_crossing(&grids.time, &margin);
    (x_star, t_star)
}

struct ForwardOutcome {
    response: Vec<f64>,
    stats: TransportStats,
    monotonicity_violations: usize,
    stored: Option<(Vec<usize>, Array2<f64>, Vec<f64>)>,
}

/// Transports the density forward under the stage control, computing the
/// equilibrium rate update at every layer on the way.
fn forward_pass(
    params: &ModelParams,
    grids: &Grids,
    sigma: f64,
    stage: &Stage,
    nubar_in: &[f64],
    m0: &[f64],
    store_at: Option<&[usize]>,
) -> Result<ForwardOutcome> {
    let n_t = grids.time.n_steps();
    let n_x = grids.n_x();
    let cutoffs = cutoff_path(params, nubar_in);
    let control = StageControl {
        stage,
        grids,
        cutoffs: &cutoffs,
        two_beta: 2.0 * params.beta,
    };
    let mut stepper = TransportStepper::new(params, grids, sigma);
    let mut stats = TransportStats {
        min_density: f64::INFINITY,
        ..Default::default()
    };

    let mut m = m0.to_vec();
    let mass0 = discrete_mass(&m, grids.dx());
    let mut response = vec![0.0f64; n_t + 1];
    let mut vx_row = vec![0.0f64; n_x];
    let mut monotonicity_violations = 0usize;

    let mut stored_rows: Option<(Vec<usize>, Array2<f64>, Vec<f64>)> =
        store_at.map(|idx| (idx.to_vec(), Array2::zeros((idx.len(), n_x)), Vec::new()));
    let mut store_cursor = 0usize;

    for k in 0..=n_t {
        stage.fill_derivative_row(grids, k, &mut vx_row);
        response[k] = mean_rate_update(
            params,
            grids,
            &vx_row,
            &m,
            stage.region_limit(k).max(0.0),
            nubar_in[k],
            false,
        );

        // Control monotonicity across nodes: the induced rate must not
        // increase with capacity.
        let mut prev_rate = f64::INFINITY;
        let mut row_scale = 0.0f64;
        for &x in grids.x() {
            row_scale = row_scale.max(control.rate(k, x).abs());
        }
        let tol = 1e-9 * row_scale.max(1e-300);
        for &x in grids.x() {
            let rate = control.rate(k, x);
            if rate > prev_rate + tol {
                monotonicity_violations += 1;
            }
            prev_rate = rate;
        }

        if let Some((idx, rows, masses)) = stored_rows.as_mut() {
            if store_cursor < idx.len() && idx[store_cursor] == k {
                rows.row_mut(store_cursor)
                    .assign(&ndarray::ArrayView1::from(&m));
                masses.push(discrete_mass(&m, grids.dx()));
                store_cursor += 1;
            }
        }

        if k < n_t {
            stepper.step(k, &mut m, &control, &mut stats)?;
            let drift = (discrete_mass(&m, grids.dx()) - mass0).abs();
            stats.max_mass_drift = stats.max_mass_drift.max(drift);
        }
    }

    Ok(ForwardOutcome {
        response,
        stats,
        monotonicity_violations,
        stored: stored_rows,
    })
}

/// Accelerated fixed-point update on the rate map (Anderson type II over the
/// last `depth` iterates). The accepted iterate is a combination of map
/// outputs, so the fixed point is unchanged; while the history is too short
/// or the small least-squares system degenerates, it takes plain relaxed
/// steps with factor `damping`.
struct FixedPointMixer {
    depth: usize,
    damping: f64,
    iterates: Vec<Vec<f64>>,
    residuals: Vec<Vec<f64>>,
}

impl FixedPointMixer {
    fn new(depth: usize, damping: f64) -> Self {
        FixedPointMixer {
            depth,
            damping,
            iterates: Vec::new(),
            residuals: Vec::new(),
        }
    }

    fn damped(&self, nu: &[f64], g: &[f64]) -> Vec<f64> {
        nu.iter()
            .zip(g)
            .map(|(&xi, &gi)| ((1.0 - self.damping) * xi + self.damping * gi).max(0.0))
            .collect()
    }

    fn next(&mut self, nu: &[f64], g: &[f64]) -> Vec<f64> {
        let f: Vec<f64> = g.iter().zip(nu).map(|(&gi, &xi)| gi - xi).collect();
        self.iterates.push(nu.to_vec());
        self.residuals.push(f);
        if self.iterates.len() > self.depth + 1 {
            self.iterates.remove(0);
            self.residuals.remove(0);
        }
        let m = self.iterates.len() - 1;
        if self.depth == 0 || m == 0 {
            return self.damped(nu, g);
        }

        // Least squares min_gamma || f_k - sum_j gamma_j (f_{j+1} - f_j) ||.
        let k = m; // index of the newest entry
        let n = nu.len();
        let fk = &self.residuals[k];
        let mut ata = vec![0.0f64; m * m];
        let mut atb = vec![0.0f64; m];
        for i in 0..m {
            for j in i..m {
                let mut s = 0.0;
                for row in 0..n {
                    let di = self.residuals[i + 1][row] - self.residuals[i][row];
                    let dj = self.residuals[j + 1][row] - self.residuals[j][row];
                    s += di * dj;
                }
                ata[i * m + j] = s;
                ata[j * m + i] = s;
            }
            let mut s = 0.0;
            for row in 0..n {
                let di = self.residuals[i + 1][row] - self.residuals[i][row];
                s += di * fk[row];
            }
            atb[i] = s;
        }
        // Tikhonov guard against collinear history.
        let trace: f64 = (0..m).map(|i| ata[i * m + i]).sum();
        let ridge = 1e-12 * (trace / m as f64).max(1e-300);
        for i in 0..m {
            ata[i * m + i] += ridge;
        }
        let gamma = match solve_small(&mut ata, &mut atb, m) {
            Some(g) => g,
            None => return self.damped(nu, g),
        };
        let gamma_norm = gamma.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if !gamma_norm.is_finite() || gamma_norm > 1e4 {
            self.iterates.truncate(1);
            self.residuals.truncate(1);
            return self.damped(nu, g);
        }

        // x_{k+1} = g_k - sum_j gamma_j (g_{j+1} - g_j), g_j = x_j + f_j.
        let mut next = g.to_vec();
        for j in 0..m {
            let gj = gamma[j];
            if gj == 0.0 {
                continue;
            }
            for row in 0..n {
                let g_hi = self.iterates[j + 1][row] + self.residuals[j + 1][row];
                let g_lo = self.iterates[j][row] + self.residuals[j][row];
                next[row] -= gj * (g_hi - g_lo);
            }
        }
        for v in &mut next {
            if !v.is_finite() {
                self.iterates.truncate(1);
                self.residuals.truncate(1);
                return self.damped(nu, g);
            }
            *v = v.max(0.0);
        }
        next
    }
}

/// Gaussian elimination with partial pivoting for the small mixing system.
fn solve_small(a: &mut [f64], b: &mut [f64], m: usize) -> Option<Vec<f64>> {
    for col in 0..m {
        let mut pivot = col;
        for row in col + 1..m {
            if a[row * m + col].abs() > a[pivot * m + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * m + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for j in 0..m {
                a.swap(col * m + j, pivot * m + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * m + col];
        for row in col + 1..m {
            let factor = a[row * m + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..m {
                a[row * m + j] -= factor * a[col * m + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0f64; m];
    for col in (0..m).rev() {
        let mut s = b[col];
        for j in col + 1..m {
            s -= a[col * m + j] * x[j];
        }
        x[col] = s / a[col * m + col];
    }
    Some(x)
}

fn stored_indices(n_t: usize, budget: usize) -> Vec<usize> {
    let budget = budget.max(2).min(n_t + 1);
    let mut idx: Vec<usize> = (0..budget)
        .map(|i| (i as f64 * n_t as f64 / (budget - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// Deterministic equilibrium solve. Capacity noise enters only through
/// [`crate::stochastic::solve_mfg_stochastic`].
pub fn solve_mfg(
    params: &ModelParams,
    price: &PriceFunction,
    m0: &InitialDensity,
    grids: &Grids,
    method: MfgMethod,
    opts: &SolveOptions,
) -> Result<MeanFieldEquilibrium> {
    solve_engine(params, price, m0, grids, method, opts, 0.0)
}

pub(crate) fn solve_engine(
    params: &ModelParams,
    price: &PriceFunction,
    m0: &InitialDensity,
    grids: &Grids,
    method: MfgMethod,
    opts: &SolveOptions,
    sigma: f64,
) -> Result<MeanFieldEquilibrium> {
    params.validate()?;
    price.validate()?;
    if !(opts.outer_tol > 0.0) {
        return Err(Error::InvalidParams(format!(
            "outer tolerance must be > 0, got {}",
            opts.outer_tol
        )));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "damping must lie in (0, 1], got {}",
            opts.damping
        )));
    }

    let m0_row = build_initial_density(params, grids, m0)?;
    let n = grids.time.n_points();
    let t_end = grids.time.t_end();
    let mut nubar: Vec<f64> = match &opts.initial_guess {
        InitialGuess::Decay => grids
            .time
            .points()
            .iter()
            .map(|&t| m0_row.mean * (1.0 - t / t_end))
            .collect(),
        InitialGuess::Given(path) => {
            if path.len() != n {
                return Err(Error::InvalidParams(format!(
                    "initial guess has {} points, grid has {n}",
                    path.len()
                )));
            }
            path.clone()
        }
    };

    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;
    let mut mixer = FixedPointMixer::new(opts.anderson_depth, opts.damping);
    while iterations < opts.max_outer {
        iterations += 1;
        let xbar = integrate_mean(params, &nubar, &grids.time, m0_row.mean);
        let stage = build_stage(params, price, grids, method, opts, sigma, &xbar, &nubar)?;
        let outcome = forward_pass(params, grids, sigma, &stage, &nubar, &m0_row.m0, None)?;

        let residual = nubar
            .iter()
            .zip(&outcome.response)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        history.push(residual);
        if std::env::var_os("CAPEX_DEBUG_OUTER").is_some() {
            let (kmax, _) = nubar
                .iter()
                .zip(&outcome.response)
                .enumerate()
                .max_by(|a, b| {
                    let da = (a.1 .0 - a.1 .1).abs();
                    let db = (b.1 .0 - b.1 .1).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(k, _)| (k, ()))
                .unwrap();
            eprintln!(
                "iter {iterations}: residual {residual:.3e} at k={kmax} t={:.5} nubar={:.6} resp={:.6} x*={:.6} t*={:.5}",
                grids.time.points()[kmax],
                nubar[kmax],
                outcome.response[kmax],
                stage.x_star()[kmax],
                stage.t_star()
            );
        }
        let scale = nubar.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()));
        if residual <= opts.outer_tol * scale {
            nubar = outcome.response;
            converged = true;
            break;
        }
        nubar = mixer.next(&nubar, &outcome.response);
    }
    if !converged {
        let last = history.last().copied().unwrap_or(f64::INFINITY);
        return Err(Error::OuterNoConvergence {
            iterations,
            last,
            history,
        });
    }

    // Final self-consistent assembly from the converged rate path.
    let xbar = integrate_mean(params, &nubar, &grids.time, m0_row.mean);
    let stage = build_stage(params, price, grids, method, opts, sigma, &xbar, &nubar)?;
    let idx = stored_indices(grids.time.n_steps(), opts.stored_layers);
    let outcome = forward_pass(params, grids, sigma, &stage, &nubar, &m0_row.m0, Some(&idx))?;
    let (stored_idx, stored_m, stored_mass) = outcome.stored.expect("stored rows requested");

    // Sampled value surface on the stored layers.
    let n_x = grids.n_x();
    let mut v = Array2::zeros((stored_idx.len(), n_x));
    let mut vx = Array2::zeros((stored_idx.len(), n_x));
    for (row, &k) in stored_idx.iter().enumerate() {
        for j in 0..n_x {
            v[[row, j]] = stage.value_at(grids, k, j);
            vx[[row, j]] = stage.sample_derivative_at(grids, k, grids.x()[j]);
        }
    }

    let concavity_violations = match &stage {
        Stage::Surface { surface, .. } => {
            let vmax = surface.v.iter().fold(0.0f64, |acc, &w| acc.max(w.abs()));
            surface.concavity_violations(grids.dx(), 1e-8 * vmax.max(1.0))
        }
        Stage::Quadratic { coeffs, .. } => {
            // Both quadratic pieces are concave iff their leading
            // coefficients are nonpositive.
            coeffs
                .big_a
                .iter()
                .chain(coeffs.a.iter())
                .filter(|&&a| a > 1e-14)
                .count()
        }
    };

    let cutoffs = cutoff_path(params, &nubar);
    let max_vx_jump = match &stage {
        Stage::Quadratic { coeffs, x_star, t_star } => {
            let mut jump = 0.0f64;
            for (k, &t) in grids.time.points().iter().enumerate() {
                if t < *t_star && x_star[k] > 0.0 && x_star[k] < grids.x_max() {
                    let left = 2.0 * coeffs.big_a[k] * x_star[k] + coeffs.big_b[k];
                    jump = jump.max((left - cutoffs[k]).abs());
                }
            }
            jump
        }
        Stage::Surface { .. } => 0.0,
    };

    let coeffs = match &stage {
        Stage::Quadratic { coeffs, .. } => Some(coeffs.clone()),
        Stage::Surface { coeffs, .. } => coeffs.clone(),
    };
    let threshold = stage.x_star().to_vec();
    let t_star = stage.t_star();

    Ok(MeanFieldEquilibrium {
        grids: grids.clone(),
        value: SurfaceSample {
            t_idx: stored_idx.clone(),
            v,
            vx,
        },
        density: Density {
            t_idx: stored_idx,
            m: stored_m,
            mass: stored_mass,
        },
        mean_capacity: xbar,
        mean_rate: nubar,
        threshold,
        t_star,
        iterations,
        residual_history: history,
        coeffs,
        diagnostics: SolveDiagnostics {
            max_mass_drift: outcome.stats.max_mass_drift,
            min_density: outcome.stats.min_density.min(0.0).max(-1.0),
            control_monotonicity_violations: outcome.monotonicity_violations,
            concavity_violations,
            max_vx_jump_at_threshold: max_vx_jump,
        },
        sigma,
        reduction: opts.reduction,
    })
}

/// Post-hoc diagnostics over a converged equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub control_monotonicity_violations: usize,
    pub concavity_violations: usize,
    pub max_mass_drift: f64,
    pub min_density: f64,
    pub x_star_at_horizon: f64,
    pub max_vx_jump_at_threshold: f64,
    /// (N+1) xbar.
    pub total_capacity: Vec<f64>,
    /// (N+1) nubar.
    pub total_rate: Vec<f64>,
}

pub fn equilibrium_diagnostics(
    eq: &MeanFieldEquilibrium,
    params: &ModelParams,
) -> EquilibriumReport {
    // Recompute from the stored sample so externally perturbed surfaces are
    // caught.
    let vmax = eq.value.v.iter().fold(1.0f64, |acc, &w| acc.max(w.abs()));
    let tol = 1e-8 * vmax;
    let mut concavity_violations = 0usize;
    let mut monotonicity_violations = 0usize;
    for (row, &k) in eq.value.t_idx.iter().enumerate() {
        let cutoff = params.alpha + params.beta * params.n_others * eq.mean_rate[k];
        let mut prev_rate = f64::INFINITY;
        for j in 0..eq.grids.n_x() {
            if j > 0 && j + 1 < eq.grids.n_x() {
                let second =
                    eq.value.v[[row, j + 1]] - 2.0 * eq.value.v[[row, j]] + eq.value.v[[row, j - 1]];
                if second > tol {
                    concavity_violations += 1;
                }
            }
            let rate = (eq.value.vx[[row, j]] - cutoff).max(0.0) / (2.0 * params.beta);
            if rate > prev_rate + 1e-9 * prev_rate.abs().max(1e-300) {
                monotonicity_violations += 1;
            }
            prev_rate = rate;
        }
    }
    EquilibriumReport {
        control_monotonicity_violations: monotonicity_violations,
        concavity_violations,
        max_mass_drift: eq.diagnostics.max_mass_drift,
        min_density: eq.diagnostics.min_density,
        x_star_at_horizon: *eq.threshold.last().unwrap(),
        max_vx_jump_at_threshold: eq.diagnostics.max_vx_jump_at_threshold,
        total_capacity: eq.total_capacity(params),
        total_rate: eq.total_rate(params),
    }
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

    fn price() -> PriceFunction {
        PriceFunction::Linear { d1: 2.0, d2: 1.0 }
    }

    fn m0() -> InitialDensity {
        InitialDensity::TruncatedExponential {
            n_levels: 20,
            x_end: 0.15,
        }
    }

    fn opts() -> SolveOptions {
        SolveOptions {
            damping: 0.2,
            max_outer: 1000,
            ..Default::default()
        }
    }

    #[test]
    fn mean_rate_update_empty_region_is_zero() {
        let p = params();
        let grids = Grids::new(&p, &price(), 100, 50, 1.0).unwrap();
        let vx = vec![0.0; grids.n_x()]; // derivative below alpha everywhere
        let m = vec![1.0; grids.n_x()];
        assert_eq!(mean_rate_update(&p, &grids, &vx, &m, grids.x_max(), 0.0, true), 0.0);
    }

    #[test]
    fn mean_rate_update_dirac_reduces_to_pointwise_formula() {
        let p = params();
        let grids = Grids::new(&p, &price(), 100, 400, 1.0).unwrap();
        let x0 = 0.31;
        let row = build_initial_density(&p, &grids, &InitialDensity::Dirac { x0 }).unwrap();
        // Linear derivative profile: exact under the two-node deposit.
        let slope = -0.2;
        let intercept = 0.6;
        let vx: Vec<f64> = grids.x().iter().map(|&x| intercept + slope * x).collect();
        let nubar_in = 0.05;
        let got = mean_rate_update(&p, &grids, &vx, &row.m0, grids.x_max(), nubar_in, true);
        let vx_at_spike = intercept + slope * x0;
        let expected = (vx_at_spike - p.alpha) / (2.0 * p.beta + p.beta * p.n_others);
        assert_relative_eq!(got, expected, max_relative = 1e-9);
    }

    #[test]
    fn ansatz_equilibrium_converges_with_sane_structure() {
        let p = params();
        let grids = Grids::new(&p, &price(), 2000, 300, 1.0).unwrap();
        let eq = solve_mfg(&p, &price(), &m0(), &grids, MfgMethod::Ansatz, &opts()).unwrap();

        assert!(eq.t_star > 0.0 && eq.t_star < p.horizon);
        assert_eq!(*eq.threshold.last().unwrap(), 0.0);
        // Threshold and mean rate vanish after t_star.
        for (k, &t) in grids.time.points().iter().enumerate() {
            if t > eq.t_star + 2.0 * grids.time.dt() {
                assert_eq!(eq.threshold[k], 0.0, "x_star nonzero at t = {t}");
                assert_eq!(eq.mean_rate[k], 0.0, "nubar nonzero at t = {t}");
            }
            assert!(eq.mean_rate[k] >= 0.0);
        }
        // Mass conserved, density nonnegative, residuals finite and final
        // residual below tolerance.
        assert!(eq.diagnostics.max_mass_drift <= 1e-9);
        assert!(eq.diagnostics.min_density >= -1e-12);
        assert!(eq.residual_history.iter().all(|r| r.is_finite()));
        let scale = eq.mean_rate.iter().fold(1.0f64, |a, &v| a.max(v));
        assert!(*eq.residual_history.last().unwrap() <= 1e-6 * scale);
        assert_eq!(eq.diagnostics.control_monotonicity_violations, 0);
        assert_eq!(eq.diagnostics.concavity_violations, 0);
        // Mean capacity solves its transport ODE against the returned rate.
        let reint = integrate_mean(&p, &eq.mean_rate, &grids.time, eq.mean_capacity[0]);
        for (a, b) in eq.mean_capacity.iter().zip(&reint) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn fd_equilibrium_matches_ansatz_on_unit_scale() {
        let p = params();
        let grids = Grids::new(&p, &price(), 2000, 300, 1.0).unwrap();
        let ansatz = solve_mfg(&p, &price(), &m0(), &grids, MfgMethod::Ansatz, &opts()).unwrap();
        let fd = solve_mfg(&p, &price(), &m0(), &grids, MfgMethod::FiniteDifference, &opts()).unwrap();

        let xa = ansatz.total_capacity(&p);
        let xf = fd.total_capacity(&p);
        let scale = xa.iter().chain(xf.iter()).fold(0.0f64, |a, &v| a.max(v.abs()));
        let max_gap = xa
            .iter()
            .zip(&xf)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_gap / scale <= 0.10,
            "capacity paths disagree by {}",
            max_gap / scale
        );

        let ka = ansatz.total_rate(&p);
        let kf = fd.total_rate(&p);
        let kscale = ka.iter().chain(kf.iter()).fold(0.0f64, |a, &v| a.max(v.abs()));
        let dt = grids.time.dt();
        let kink = 0.5 * (ansatz.t_star + fd.t_star);
        let max_kgap = grids
            .time
            .points()
            .iter()
            .enumerate()
            .filter(|(_, &t)| (t - kink).abs() > 2.0 * dt)
            .map(|(i, _)| (ka[i] - kf[i]).abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_kgap / kscale <= 0.10,
            "rate paths disagree by {}",
            max_kgap / kscale
        );
    }

    #[test]
    fn inverse_price_fd_equilibrium_converges() {
        let p = params();
        let inv = PriceFunction::Inverse { p: 2.0 };
        let grids = Grids::new(&p, &inv, 2000, 250, 1.0).unwrap();
        let eq = solve_mfg(&p, &inv, &m0(), &grids, MfgMethod::FiniteDifference, &opts()).unwrap();
        assert!(eq.t_star >= 0.0 && eq.t_star < p.horizon);
        assert_eq!(*eq.threshold.last().unwrap(), 0.0);
        assert!(eq.diagnostics.max_mass_drift <= 1e-9);
        assert!(eq.diagnostics.min_density >= -1e-12);
    }

    #[test]
    fn non_convergence_carries_history() {
        let p = params();
        let grids = Grids::new(&p, &price(), 500, 100, 1.0).unwrap();
        let mut o = opts();
        o.max_outer = 2;
        match solve_mfg(&p, &price(), &m0(), &grids, MfgMethod::Ansatz, &o) {
            Err(Error::OuterNoConvergence { history, .. }) => assert_eq!(history.len(), 2),
            other => panic!("expected OuterNoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_flag_perturbed_surface() {
        let p = params();
        let grids = Grids::new(&p, &price(), 1000, 200, 1.0).unwrap();
        let mut eq = solve_mfg(&p, &price(), &m0(), &grids, MfgMethod::Ansatz, &opts()).unwrap();
        let clean = equilibrium_diagnostics(&eq, &p);
        assert_eq!(clean.concavity_violations, 0);
        assert_eq!(clean.control_monotonicity_violations, 0);
        assert_eq!(clean.x_star_at_horizon, 0.0);

        // Hand-perturb the sampled value surface into a convex bump.
        let mid = eq.grids.n_x() / 2;
        let vmax = eq.value.v.iter().fold(1.0f64, |a, &w| a.max(w.abs()));
        for row in 0..eq.value.t_idx.len() {
            eq.value.v[[row, mid]] -= 1e-3 * vmax;
        }
        let dirty = equilibrium_diagnostics(&eq, &p);
        assert!(dirty.concavity_violations > 0);
    }
}
