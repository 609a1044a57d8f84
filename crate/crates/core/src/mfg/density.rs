//! Population density: initial distributions and the conservative upwind
//! transport scheme for the forward equation
//!
//! ```text
//! dm/dt + d/dx[ m (-delta x + nu*(t,x)) ] = (sigma^2/2) d^2/dx^2 (x^2 m)
//! ```
//!
//! The scheme is written in flux form on the node-centred cells of the
//! capacity grid with zero total flux through both walls, so the discrete
//! mass sum(m) dx is conserved to machine precision by construction.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfg::grids::Grids;
use crate::model::ModelParams;

/// Initial distribution of installed capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDensity {
    /// Discrete capacity levels i * x_end / n_levels with exponential
    /// weights, rescaled so the mean capacity is X0 / (N + 1).
    TruncatedExponential { n_levels: usize, x_end: f64 },
    /// All producers at one capacity.
    Dirac { x0: f64 },
    /// Explicit point masses.
    Table { points: Vec<TablePoint> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TablePoint {
    pub x: f64,
    pub mass: f64,
}

/// Initial density registered on the capacity grid.
#[derive(Debug, Clone)]
pub struct InitialDensityRow {
    /// Density values at the grid nodes (1/MW).
    pub m0: Vec<f64>,
    /// Mean capacity of the registered density (MW).
    pub mean: f64,
    /// Level rescale factor applied by the truncated-exponential
    /// construction (1.0 otherwise).
    pub rescale: f64,
}

/// Deposits point masses onto the grid, splitting each between the two
/// neighbouring nodes. The split preserves both total mass and the mean.
fn deposit(points: &[(f64, f64)], grids: &Grids) -> Result<Vec<f64>> {
    let dx = grids.dx();
    let n_x = grids.n_x();
    let mut cell_mass = vec![0.0f64; n_x];
    for &(x, w) in points {
        if !(w > 0.0) {
            return Err(Error::InitialDensity(format!(
                "point mass at x = {x} must be positive, got {w}"
            )));
        }
        if x < 0.0 || x > grids.x_max() {
            return Err(Error::Grid(format!(
                "initial capacity {x} lies outside the grid [0, {}]",
                grids.x_max()
            )));
        }
        let pos = x / dx;
        let j = (pos.floor() as usize).min(n_x - 2);
        let frac = pos - j as f64;
        cell_mass[j] += w * (1.0 - frac);
        cell_mass[j + 1] += w * frac;
    }
    let total: f64 = cell_mass.iter().sum();
    Ok(cell_mass.iter().map(|&m| m / (total * dx)).collect())
}

/// Builds the initial density row at t = 0.
pub fn build_initial_density(
    params: &ModelParams,
    grids: &Grids,
    spec: &InitialDensity,
) -> Result<InitialDensityRow> {
    let (points, rescale) = match spec {
        InitialDensity::Dirac { x0 } => (vec![(*x0, 1.0)], 1.0),
        InitialDensity::Table { points } => {
            if points.is_empty() {
                return Err(Error::InitialDensity("empty table".into()));
            }
            (points.iter().map(|p| (p.x, p.mass)).collect(), 1.0)
        }
        InitialDensity::TruncatedExponential { n_levels, x_end } => {
            let n = *n_levels;
            if n == 0 {
                return Err(Error::InitialDensity("n_levels must be >= 1".into()));
            }
            if !(*x_end > 0.0) {
                return Err(Error::InitialDensity(format!("x_end must be > 0, got {x_end}")));
            }
            if *x_end > grids.x_max() {
                return Err(Error::Grid(format!(
                    "x_end = {x_end} exceeds the grid top {}",
                    grids.x_max()
                )));
            }
            let dl = x_end / n as f64;
            let levels: Vec<f64> = (1..=n).map(|i| i as f64 * dl).collect();
            let weights: Vec<f64> = levels
                .iter()
                .map(|&x| (-(n as f64) * x / params.x0).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                return Err(Error::InitialDensity("weights underflowed to zero".into()));
            }
            let mean0: f64 = levels
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| x * w / total)
                .sum();
            // Rescale the levels so the implied total capacity (N+1) * mean
            // equals X0.
            let target_mean = params.x0 / params.producers();
            let kappa = target_mean / mean0;
            let points: Vec<(f64, f64)> = levels
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| (x * kappa, w / total))
                .collect();
            if let Some(&(top, _)) = points.last() {
                if top > grids.x_max() {
                    return Err(Error::Grid(format!(
                        "rescaled top level {top} exceeds the grid top {}",
                        grids.x_max()
                    )));
                }
            }
            (points, kappa)
        }
    };

    let m0 = deposit(&points, grids)?;
    let dx = grids.dx();
    let mean = m0
        .iter()
        .zip(grids.x())
        .map(|(&m, &x)| m * x * dx)
        .sum::<f64>();
    Ok(InitialDensityRow { m0, mean, rescale })
}

/// Installation-rate field nu*(t, x) >= 0 sampled at arbitrary capacities.
pub trait ControlField {
    fn rate(&self, t_idx: usize, x: f64) -> f64;
}

/// No installation anywhere.
pub struct ZeroControl;

impl ControlField for ZeroControl {
    fn rate(&self, _t_idx: usize, _x: f64) -> f64 {
        0.0
    }
}

/// Density surface over stored time layers.
#[derive(Debug, Clone)]
pub struct Density {
    /// Indices into the time grid of the stored rows.
    pub t_idx: Vec<usize>,
    /// Stored rows, one per entry of `t_idx` (1/MW).
    pub m: Array2<f64>,
    /// Discrete mass sum(m) dx per stored row.
    pub mass: Vec<f64>,
}

impl Density {
    pub fn row(&self, k: usize) -> ndarray::ArrayView1<'_, f64> {
        self.m.row(k)
    }
}

/// Running tallies of the transport invariants across every step taken.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TransportStats {
    /// max_t |mass(t) - mass(0)|.
    pub max_mass_drift: f64,
    /// min over all layers and nodes of m.
    pub min_density: f64,
    /// max over faces and steps of |drift velocity|.
    pub max_speed: f64,
}

/// One explicit conservative step of the transport scheme.
pub(crate) struct TransportStepper<'a> {
    grids: &'a Grids,
    delta: f64,
    sigma: f64,
    /// Scratch flux buffer, one slot per inner face.
    flux: Vec<f64>,
    /// sigma^2 x_j^2 per node (diffusion coefficient), empty when sigma = 0.
    diff_coef: Vec<f64>,
}

impl<'a> TransportStepper<'a> {
    pub fn new(params: &ModelParams, grids: &'a Grids, sigma: f64) -> Self {
        let diff_coef = if sigma > 0.0 {
            grids.x().iter().map(|&x| sigma * sigma * x * x).collect()
        } else {
            Vec::new()
        };
        TransportStepper {
            grids,
            delta: params.delta,
            sigma,
            flux: vec![0.0; grids.n_x().saturating_sub(1)],
            diff_coef,
        }
    }

    /// Largest admissible speed-sum dt*(|v|/dx + sigma^2 x^2/dx^2) given the
    /// realized face velocities; errors name the required number of steps.
    fn check_cfl(&self, max_abs_v: f64) -> Result<()> {
        let dx = self.grids.dx();
        let dt = self.grids.time.dt();
        let mut rate = max_abs_v / dx;
        if self.sigma > 0.0 {
            let d_max = self.diff_coef.last().copied().unwrap_or(0.0);
            rate += d_max / (dx * dx);
        }
        if dt * rate > 1.0 {
            let required = (self.grids.time.t_end() * rate).ceil() as usize + 1;
            return Err(Error::CflViolation {
                required_nt: required,
                max_speed: max_abs_v,
            });
        }
        Ok(())
    }

    /// Advances `m` from layer `t_idx` to `t_idx + 1` under `field`.
    pub fn step(
        &mut self,
        t_idx: usize,
        m: &mut [f64],
        field: &impl ControlField,
        stats: &mut TransportStats,
    ) -> Result<()> {
        let dx = self.grids.dx();
        let dt = self.grids.time.dt();
        let x = self.grids.x();
        let n_x = m.len();

        let mut max_abs_v = 0.0f64;
        for k in 1..n_x {
            let xf = 0.5 * (x[k - 1] + x[k]);
            let v = -self.delta * xf + field.rate(t_idx, xf);
            max_abs_v = max_abs_v.max(v.abs());
            let advective = if v >= 0.0 { v * m[k - 1] } else { v * m[k] };
            let mut f = advective;
            if self.sigma > 0.0 {
                // Central discretisation of the diffusive flux
                // -(1/2) d/dx (sigma^2 x^2 m) at the face.
                f -= 0.5 * (self.diff_coef[k] * m[k] - self.diff_coef[k - 1] * m[k - 1]) / dx;
            }
            self.flux[k - 1] = f;
        }
        self.check_cfl(max_abs_v)?;
        stats.max_speed = stats.max_speed.max(max_abs_v);

        let lambda = dt / dx;
        let mut min_m = f64::INFINITY;
        for j in 0..n_x {
            let left = if j == 0 { 0.0 } else { self.flux[j - 1] };
            let right = if j == n_x - 1 { 0.0 } else { self.flux[j] };
            m[j] -= lambda * (right - left);
            min_m = min_m.min(m[j]);
        }
        if min_m < -1e-12 {
            return Err(Error::SchemeFault(format!(
                "density fell to {min_m:.3e} after step {t_idx}"
            )));
        }
        stats.min_density = stats.min_density.min(min_m);
        Ok(())
    }
}

pub(crate) fn discrete_mass(m: &[f64], dx: f64) -> f64 {
    m.iter().sum::<f64>() * dx
}

/// Solves the forward transport equation, storing every layer.
pub fn fp_forward(
    params: &ModelParams,
    field: &impl ControlField,
    grids: &Grids,
    m0: &[f64],
    sigma: f64,
) -> Result<Density> {
    if m0.len() != grids.n_x() {
        return Err(Error::Grid(format!(
            "initial density has {} nodes, grid has {}",
            m0.len(),
            grids.n_x()
        )));
    }
    let n_t = grids.time.n_steps();
    let n_x = grids.n_x();
    let mut stepper = TransportStepper::new(params, grids, sigma);
    let mut stats = TransportStats {
        min_density: f64::INFINITY,
        ..Default::default()
    };

    let mut m = m0.to_vec();
    let mut surface = Array2::zeros((n_t + 1, n_x));
    let mut mass = Vec::with_capacity(n_t + 1);
    surface.row_mut(0).assign(&ndarray::ArrayView1::from(&m));
    mass.push(discrete_mass(&m, grids.dx()));
    for t_idx in 0..n_t {
        stepper.step(t_idx, &mut m, field, &mut stats)?;
        surface
            .row_mut(t_idx + 1)
            .assign(&ndarray::ArrayView1::from(&m));
        mass.push(discrete_mass(&m, grids.dx()));
    }

    Ok(Density {
        t_idx: (0..=n_t).collect(),
        m: surface,
        mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PriceFunction;
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

    fn grids(n_t: usize, n_x: usize) -> Grids {
        let price = PriceFunction::Linear { d1: 2.0, d2: 1.0 };
        Grids::new(&params(), &price, n_t, n_x, 1.0).unwrap()
    }

    #[test]
    fn dirac_density_has_unit_mass_and_matching_mean() {
        let g = grids(100, 200);
        let row = build_initial_density(&params(), &g, &InitialDensity::Dirac { x0: 0.3 }).unwrap();
        assert_relative_eq!(discrete_mass(&row.m0, g.dx()), 1.0, max_relative = 1e-12);
        assert!((row.mean - 0.3).abs() <= 1e-12);
    }

    #[test]
    fn single_point_table_equals_dirac() {
        let g = grids(100, 200);
        let dirac = build_initial_density(&params(), &g, &InitialDensity::Dirac { x0: 0.25 }).unwrap();
        let table = build_initial_density(
            &params(),
            &g,
            &InitialDensity::Table {
                points: vec![TablePoint { x: 0.25, mass: 1.0 }],
            },
        )
        .unwrap();
        assert_eq!(dirac.m0, table.m0);
    }

    #[test]
    fn truncated_exponential_mean_is_x0_over_producers() {
        let g = grids(100, 400);
        let p = params();
        let row = build_initial_density(
            &p,
            &g,
            &InitialDensity::TruncatedExponential {
                n_levels: 20,
                x_end: 0.15,
            },
        )
        .unwrap();
        let target = p.x0 / p.producers();
        assert_relative_eq!(row.mean, target, max_relative = 1e-9);
        assert_relative_eq!(discrete_mass(&row.m0, g.dx()), 1.0, max_relative = 1e-12);
        assert!(row.rescale > 0.0);
    }

    #[test]
    fn x_end_beyond_grid_is_rejected() {
        let g = grids(100, 100);
        let err = build_initial_density(
            &params(),
            &g,
            &InitialDensity::TruncatedExponential {
                n_levels: 10,
                x_end: 10.0 * g.x_max(),
            },
        );
        assert!(matches!(err, Err(Error::Grid(_))));
    }

    #[test]
    fn zero_drift_leaves_density_unchanged() {
        let mut p = params();
        p.delta = 1e-300; // effectively zero; the type requires delta > 0
        let g = grids(200, 150);
        let row = build_initial_density(&p, &g, &InitialDensity::Dirac { x0: 0.4 }).unwrap();
        let density = fp_forward(&p, &ZeroControl, &g, &row.m0, 0.0).unwrap();
        let first = density.row(0).to_vec();
        let last = density.row(density.t_idx.len() - 1).to_vec();
        for (a, b) in first.iter().zip(&last) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn uncontrolled_mean_decays_at_delta() {
        let p = params();
        let g = grids(400, 400);
        let row = build_initial_density(
            &p,
            &g,
            &InitialDensity::TruncatedExponential {
                n_levels: 15,
                x_end: 0.2,
            },
        )
        .unwrap();
        let density = fp_forward(&p, &ZeroControl, &g, &row.m0, 0.0).unwrap();
        let mean_end: f64 = density
            .row(density.t_idx.len() - 1)
            .iter()
            .zip(g.x())
            .map(|(&m, &x)| m * x * g.dx())
            .sum();
        let expected = row.mean * (-p.delta * p.horizon).exp();
        // First-order scheme: O(dx + dt) accuracy on the mean.
        let tol = 2.0 * (g.dx() + g.time.dt());
        assert!(
            (mean_end - expected).abs() <= tol * row.mean.max(1.0),
            "mean {mean_end} vs expected {expected}"
        );
    }

    #[test]
    fn mass_is_conserved_to_machine_precision() {
        let p = params();
        let g = grids(500, 300);
        let row = build_initial_density(
            &p,
            &g,
            &InitialDensity::TruncatedExponential {
                n_levels: 25,
                x_end: 0.3,
            },
        )
        .unwrap();
        let density = fp_forward(&p, &ZeroControl, &g, &row.m0, 0.0).unwrap();
        for &mass in &density.mass {
            assert!((mass - density.mass[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn cfl_violation_names_required_steps() {
        struct FastField;
        impl ControlField for FastField {
            fn rate(&self, _t: usize, _x: f64) -> f64 {
                1e4
            }
        }
        let p = params();
        let g = grids(50, 200);
        let row = build_initial_density(&p, &g, &InitialDensity::Dirac { x0: 0.2 }).unwrap();
        match fp_forward(&p, &FastField, &g, &row.m0, 0.0) {
            Err(Error::CflViolation { required_nt, .. }) => assert!(required_nt > 50),
            other => panic!("expected CflViolation, got {other:?}"),
        }
    }
}
