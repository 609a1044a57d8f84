//! Space-time grids for the heterogeneous solvers.

use crate::error::{Error, Result};
use crate::homogeneous::TimeGrid;
use crate::model::{compute_xmax, ModelParams, PriceFunction};

/// Uniform time grid on [0, T] and uniform capacity grid on [0, x_max].
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub time: TimeGrid,
    x: Vec<f64>,
    dx: f64,
}

impl Grids {
    /// `n_t` time steps and `n_x` capacity nodes; the capacity grid spans
    /// [0, x_max(params) * inflation].
    pub fn new(
        params: &ModelParams,
        price: &PriceFunction,
        n_t: usize,
        n_x: usize,
        x_max_inflation: f64,
    ) -> Result<Self> {
        if !(x_max_inflation >= 1.0) {
            return Err(Error::Grid(format!(
                "x_max inflation must be >= 1, got {x_max_inflation}"
            )));
        }
        let x_max = compute_xmax(params, price)? * x_max_inflation;
        Self::with_x_max(params.horizon, n_t, n_x, x_max)
    }

    pub fn with_x_max(t_end: f64, n_t: usize, n_x: usize, x_max: f64) -> Result<Self> {
        if n_x < 3 {
            return Err(Error::Grid(format!("need at least 3 capacity nodes, got {n_x}")));
        }
        if !(x_max > 0.0) || !x_max.is_finite() {
            return Err(Error::Grid(format!("x_max must be > 0, got {x_max}")));
        }
        let time = TimeGrid::new(t_end, n_t)?;
        let dx = x_max / (n_x - 1) as f64;
        let mut x: Vec<f64> = (0..n_x).map(|j| j as f64 * dx).collect();
        x[n_x - 1] = x_max;
        Ok(Grids { time, x, dx })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn x_max(&self) -> f64 {
        *self.x.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PriceFunction;

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
    fn grid_spans_xmax() {
        let price = PriceFunction::Linear { d1: 2.0, d2: 1.0 };
        let g = Grids::new(&params(), &price, 100, 50, 1.0).unwrap();
        let expected = (params().delta).exp();
        assert!((g.x_max() - expected).abs() < 1e-12);
        assert_eq!(g.n_x(), 50);
        assert_eq!(g.time.n_steps(), 100);
    }

    #[test]
    fn inflation_below_one_is_rejected() {
        let price = PriceFunction::Linear { d1: 2.0, d2: 1.0 };
        assert!(Grids::new(&params(), &price, 100, 50, 0.5).is_err());
    }
}
