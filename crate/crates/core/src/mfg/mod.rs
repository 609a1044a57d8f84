//! Heterogeneous mean field equilibrium: backward value solves, forward
//! density transport, threshold geometry, and the outer fixed point on the
//! mean installation rate.

pub mod coeffs;
pub mod density;
pub mod equilibrium;
pub mod grids;
pub mod hjb;

pub use coeffs::{
    ansatz_install_coeffs, last_zero_crossing, noninstall_quadratic, noninstall_value_inverse,
    threshold_inverse, threshold_quadratic, threshold_reduction, AnsatzCoefficients,
};
pub use density::{
    build_initial_density, fp_forward, ControlField, Density, InitialDensity, InitialDensityRow,
    TablePoint, TransportStats, ZeroControl,
};
pub use equilibrium::{
    equilibrium_diagnostics, mean_rate_update, solve_mfg, EquilibriumReport, InitialGuess,
    MeanFieldEquilibrium, MfgMethod, SolveDiagnostics, SolveOptions, SurfaceSample,
};
pub use grids::Grids;
pub use hjb::{HjbBoundary, LayerOpts, ValueSurface};

use crate::error::Result;
use crate::model::{ModelParams, PriceFunction};

/// Deterministic backward value solve (no capacity noise).
#[allow(clippy::too_many_arguments)]
pub fn hjb_backward_fd(
    params: &ModelParams,
    price: &PriceFunction,
    xbar: &[f64],
    nubar: &[f64],
    grids: &Grids,
    boundary: &HjbBoundary<'_>,
    opts: &LayerOpts,
    reduction: bool,
) -> Result<ValueSurface> {
    hjb::hjb_backward(params, price, xbar, nubar, grids, boundary, 0.0, opts, reduction)
}
