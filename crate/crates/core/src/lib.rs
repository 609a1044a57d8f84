//! Equilibrium solvers for renewable capacity expansion under crowding.
//!
//! A continuum of producers chooses installation rates against a price that
//! falls with total installed capacity and installation costs that rise with
//! the aggregate installation rate. The crate solves three formulations:
//!
//! * homogeneous producers: a forward-backward ODE system for total capacity
//!   and its shadow price, solved by bisection shooting, with a semi-explicit
//!   closed form under linear prices ([`homogeneous`]);
//! * heterogeneous producers: the coupled backward value equation and
//!   forward density transport, closed by a fixed point on the mean
//!   installation rate, via either a two-piece quadratic value approximation
//!   or a finite-difference value solve ([`mfg`]);
//! * noisy capacities: the same machinery with multiplicative volatility in
//!   the capacity dynamics ([`stochastic`]).
//!
//! All quantities are in base units $, MW, year ([`model`] normalizes
//! parameter files on ingestion).

pub mod error;
pub mod homogeneous;
pub mod mfg;
pub mod model;
pub mod output;
pub mod stochastic;

pub use error::{Error, Result};
pub use homogeneous::{
    integrate_forward, semi_explicit_linear, shoot, verify_lemmas, HomogeneousSolution,
    LemmaReport, SemiExplicitCoeffs, TimeGrid,
};
pub use mfg::{
    build_initial_density, equilibrium_diagnostics, fp_forward, mean_rate_update, solve_mfg,
    Grids, InitialDensity, InitialGuess, MeanFieldEquilibrium, MfgMethod, SolveOptions,
};
pub use model::{
    check_assumption, compute_xmax, normalize_params, running_reward, AssumptionReport,
    ModelParams, PriceFunction, RawParams, RewardTerms,
};
pub use stochastic::{solve_mfg_stochastic, StochasticConfig};
