//! Capacity noise: the value and transport machinery with multiplicative
//! volatility sigma x dW. Everything is solved at the PDE level; no path
//! sampling. With sigma = 0 every entry point reproduces its deterministic
//! counterpart bit for bit, because the noise terms are skipped rather than
//! multiplied out.

use crate::error::{Error, Result};
use crate::homogeneous::TimeGrid;
use crate::mfg::coeffs::{ansatz_install_coeffs, noninstall_quadratic, AnsatzCoefficients};
use crate::mfg::density::{fp_forward, ControlField, Density, InitialDensity};
use crate::mfg::equilibrium::{solve_engine, MeanFieldEquilibrium, MfgMethod, SolveOptions};
use crate::mfg::grids::Grids;
use crate::mfg::hjb::{hjb_backward, HjbBoundary, LayerOpts, ValueSurface};
use crate::model::{ModelParams, PriceFunction};

/// Volatility configuration for the noisy capacity dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticConfig {
    /// Capacity volatility (1/sqrt(year)).
    pub sigma: f64,
}

impl StochasticConfig {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParams(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        let rho = params.r + 2.0 * params.delta;
        if self.sigma * self.sigma >= rho {
            return Err(Error::InvalidParams(format!(
                "sigma^2 = {} must stay below r + 2*delta = {rho} for the quadratic value coefficients",
                self.sigma * self.sigma
            )));
        }
        Ok(())
    }
}

/// Backward value solve with the diffusion term (sigma^2 x^2 / 2) V_xx added
/// to every layer residual.
#[allow(clippy::too_many_arguments)]
pub fn hjb_backward_fd_sigma(
    params: &ModelParams,
    price: &PriceFunction,
    xbar: &[f64],
    nubar: &[f64],
    grids: &Grids,
    boundary: &HjbBoundary<'_>,
    opts: &LayerOpts,
    reduction: bool,
) -> Result<ValueSurface> {
    hjb_backward(
        params, price, xbar, nubar, grids, boundary, params.sigma, opts, reduction,
    )
}

/// Forward transport with the conservative diffusive flux added at the cell
/// faces.
pub fn fp_forward_sigma(
    params: &ModelParams,
    field: &impl ControlField,
    grids: &Grids,
    m0: &[f64],
) -> Result<Density> {
    fp_forward(params, field, grids, m0, params.sigma)
}

/// Quadratic value coefficients with the noisy rate r + 2 delta - sigma^2 in
/// the quadratic terms; the linear and constant coefficients keep their
/// deterministic equations.
#[allow(clippy::too_many_arguments)]
pub fn ansatz_coeffs_sigma(
    params: &ModelParams,
    d1: f64,
    d2: f64,
    xbar: &[f64],
    nubar: &[f64],
    t_star: f64,
    grid: &TimeGrid,
    reduction: bool,
) -> Result<AnsatzCoefficients> {
    StochasticConfig { sigma: params.sigma }.validate(params)?;
    let (a, b) = noninstall_quadratic(params, d1, d2, xbar, grid, reduction, params.sigma);
    ansatz_install_coeffs(
        params,
        d1,
        d2,
        xbar,
        nubar,
        &a,
        &b,
        t_star,
        grid,
        reduction,
        params.sigma,
    )
}

/// Equilibrium solve under capacity noise; identical contract to the
/// deterministic solve with the sigma-variants substituted.
pub fn solve_mfg_stochastic(
    params: &ModelParams,
    price: &PriceFunction,
    m0: &InitialDensity,
    grids: &Grids,
    method: MfgMethod,
    opts: &SolveOptions,
) -> Result<MeanFieldEquilibrium> {
    if params.sigma > 0.0 && price.is_linear() {
        StochasticConfig { sigma: params.sigma }.validate(params)?;
    }
    solve_engine(params, price, m0, grids, method, opts, params.sigma)
}
