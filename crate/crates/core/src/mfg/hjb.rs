//! Backward finite-difference solver for the value function. The spatial
//! derivative is central in the interior; each time layer is a nonlinear
//! system in the layer unknowns, solved by a damped residual fixed point.
//!
//! Layer residual at node j (interior):
//!
//! ```text
//! (V^{n+1}_j - V^n_j)/dt - r V^n_j - delta x_j DV_j
//!   + (P(arg_j) - c) h x_j + ((DV_j - alpha - beta N nubar_n)^+)^2 / (4 beta)
//!   + (sigma^2 x_j^2 / 2) (V^n_{j+1} - 2 V^n_j + V^n_{j-1}) / dx^2 = 0
//! ```
//!
//! with DV the central difference and arg_j = x_j + N xbar_n (or
//! (N+1) xbar_n under the homogeneous reduction).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::mfg::coeffs::noninstall_value_inverse;
use crate::mfg::grids::Grids;
use crate::model::{ModelParams, PriceFunction};

/// Value surface and its spatial derivative on the full space-time grid.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    /// V, rows indexed by time layer.
    pub v: Array2<f64>,
    /// dV/dx by central differences (one-sided at the edges).
    pub vx: Array2<f64>,
}

impl ValueSurface {
    /// Number of (layer, node) pairs where the discrete second difference
    /// exceeds `tol` (concavity violations).
    pub fn concavity_violations(&self, dx: f64, tol: f64) -> usize {
        let (n_t, n_x) = self.v.dim();
        let mut count = 0;
        for n in 0..n_t {
            for j in 1..n_x - 1 {
                let second = (self.v[[n, j + 1]] - 2.0 * self.v[[n, j]] + self.v[[n, j - 1]])
                    / (dx * dx);
                if second > tol {
                    count += 1;
                }
            }
        }
        count
    }

    /// First capacity where vx crosses below `cutoff` on layer `n`, linearly
    /// interpolated; 0 when already below at x = 0, x_max when never below.
    pub fn threshold_on_layer(&self, grids: &Grids, n: usize, cutoff: f64) -> f64 {
        let x = grids.x();
        if self.vx[[n, 0]] <= cutoff {
            return 0.0;
        }
        for j in 1..x.len() {
            if self.vx[[n, j]] <= cutoff {
                let g0 = self.vx[[n, j - 1]] - cutoff;
                let g1 = self.vx[[n, j]] - cutoff;
                return x[j - 1] + grids.dx() * g0 / (g0 - g1);
            }
        }
        grids.x_max()
    }
}

/// Boundary closures for the layer solve.
pub enum HjbBoundary<'a> {
    /// Linear price: V(t, 0) = c0_t (constant term of the installation-region
    /// quadratic) and V(t, x_max) = a_t x_max^2 + b_t x_max.
    Quadratic {
        a: &'a [f64],
        b: &'a [f64],
        c0: &'a [f64],
    },
    /// Inverse price: V(t, x_max) from the non-installation integral formula;
    /// x = 0 closed by the layer residual with a one-sided derivative.
    InverseIntegral { p: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct LayerOpts {
    /// Damping of the residual update (V <- V + omega dt R).
    pub omega: f64,
    /// Relative residual tolerance per layer.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LayerOpts {
    fn default() -> Self {
        LayerOpts {
            omega: 1.0,
            tol: 1e-10,
            max_iters: 500,
        }
    }
}

/// Solves the value function backward on the full grid.
#[allow(clippy::too_many_arguments)]
pub fn hjb_backward(
    params: &ModelParams,
    price: &PriceFunction,
    xbar: &[f64],
    nubar: &[f64],
    grids: &Grids,
    boundary: &HjbBoundary<'_>,
    sigma: f64,
    opts: &LayerOpts,
    reduction: bool,
) -> Result<ValueSurface> {
    let n_t = grids.time.n_steps();
    let n_x = grids.n_x();
    let dt = grids.time.dt();
    let dx = grids.dx();
    let x = grids.x();
    let beta = params.beta;
    let n_others = params.n_others;

    if sigma > 0.0 {
        // Explicit treatment of the diffusion term inside the damped layer
        // iteration; keep its contraction bounded.
        let diff_rate = sigma * sigma * grids.x_max() * grids.x_max() / (dx * dx);
        if dt * diff_rate > 0.5 {
            let required = (grids.time.t_end() * diff_rate / 0.5).ceil() as usize + 1;
            return Err(Error::CflViolation {
                required_nt: required,
                max_speed: diff_rate,
            });
        }
    }

    // Precompute the x_max boundary for the inverse price.
    let inverse_top: Vec<f64> = match boundary {
        HjbBoundary::InverseIntegral { p } => (0..=n_t)
            .map(|k| {
                noninstall_value_inverse(params, *p, xbar, &grids.time, k, grids.x_max())
                    .map(|(v, _)| v)
            })
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };

    let mut v = Array2::<f64>::zeros((n_t + 1, n_x));
    let mut layer = vec![0.0f64; n_x];
    let mut residual = vec![0.0f64; n_x];

    for n in (0..n_t).rev() {
        // Warm start from the layer just solved.
        for j in 0..n_x {
            layer[j] = v[[n + 1, j]];
        }
        let (v0, v_top, solve_origin) = match boundary {
            HjbBoundary::Quadratic { a, b, c0 } => (
                c0[n],
                a[n] * grids.x_max() * grids.x_max() + b[n] * grids.x_max(),
                false,
            ),
            HjbBoundary::InverseIntegral { .. } => (0.0, inverse_top[n], true),
        };
        if !solve_origin {
            layer[0] = v0;
        }
        layer[n_x - 1] = v_top;

        let cutoff = params.alpha + beta * n_others * nubar[n];
        let scale = v
            .row(n + 1)
            .iter()
            .fold(1.0f64, |acc, &w| acc.max(w.abs()));
        let tol_r = opts.tol * scale / dt;

        let mut converged = false;
        let mut sup_r = f64::INFINITY;
        let mut iters = 0usize;
        while iters < opts.max_iters {
            iters += 1;
            sup_r = 0.0;
            let j_start = if solve_origin { 0 } else { 1 };
            for j in j_start..n_x - 1 {
                let dv = if j == 0 {
                    (layer[1] - layer[0]) / dx
                } else {
                    (layer[j + 1] - layer[j - 1]) / (2.0 * dx)
                };
                let price_arg = if reduction {
                    params.producers() * xbar[n]
                } else {
                    x[j] + n_others * xbar[n]
                };
                let revenue = (price.value(price_arg) - params.cost) * params.hours * x[j];
                let excess = (dv - cutoff).max(0.0);
                let mut r = (v[[n + 1, j]] - layer[j]) / dt - params.r * layer[j]
                    - params.delta * x[j] * dv
                    + revenue
                    + excess * excess / (4.0 * beta);
                if sigma > 0.0 && j > 0 {
                    r += 0.5 * sigma * sigma * x[j] * x[j]
                        * (layer[j + 1] - 2.0 * layer[j] + layer[j - 1])
                        / (dx * dx);
                }
                residual[j] = r;
                sup_r = sup_r.max(r.abs());
            }
            if sup_r <= tol_r {
                converged = true;
                break;
            }
            for j in j_start..n_x - 1 {
                layer[j] += opts.omega * dt * residual[j];
            }
            if !layer[j_start].is_finite() {
                return Err(Error::LayerNoConvergence {
                    layer: n,
                    iterations: iters,
                    residual: f64::INFINITY,
                });
            }
        }
        if !converged {
            return Err(Error::LayerNoConvergence {
                layer: n,
                iterations: opts.max_iters,
                residual: sup_r,
            });
        }
        for j in 0..n_x {
            v[[n, j]] = layer[j];
        }
    }

    // Central-difference derivative in the interior. The two lowest nodes are
    // extrapolated from corner-free central differences: the imposed x = 0
    // value can sit a little off the interior solution (the boundary closure
    // is approximate), and a one-sided difference across that corner would
    // corrupt the installation-region test near the origin.
    let mut vx = Array2::<f64>::zeros((n_t + 1, n_x));
    for n in 0..=n_t {
        for j in 1..n_x - 1 {
            vx[[n, j]] = (v[[n, j + 1]] - v[[n, j - 1]]) / (2.0 * dx);
        }
        if n_x >= 4 {
            vx[[n, 1]] = 2.0 * vx[[n, 2]] - vx[[n, 3]];
            vx[[n, 0]] = 3.0 * vx[[n, 2]] - 2.0 * vx[[n, 3]];
        } else {
            vx[[n, 0]] = (v[[n, 1]] - v[[n, 0]]) / dx;
        }
        vx[[n, n_x - 1]] = (v[[n, n_x - 1]] - v[[n, n_x - 2]]) / dx;
    }

    Ok(ValueSurface { v, vx })
}
