//! Economic model: parameters, unit normalization, price functions, the
//! running reward, and the non-triviality check on the installation
//! incentive.
//!
//! Base units throughout the crate are $, MW and year, with production hours
//! carried as hours/year. Parameter files may quote quantities in GW, $/kW
//! etc.; [`normalize_params`] converts everything on ingestion so the solvers
//! never see mixed units.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on production hours per year.
pub const MAX_HOURS_PER_YEAR: f64 = 8760.0;

/// Model constants in base units ($, MW, year).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Discount rate (1/year).
    pub r: f64,
    /// Capacity depreciation rate (1/year).
    pub delta: f64,
    /// Planning horizon (years).
    pub horizon: f64,
    /// Production hours per year.
    pub hours: f64,
    /// Marginal installation cost ($/MW).
    pub alpha: f64,
    /// Crowding sensitivity ($*year/MW^2).
    pub beta: f64,
    /// Marginal production cost ($/MWh).
    pub cost: f64,
    /// Number of other producers (dimensionless, >= 0).
    pub n_others: f64,
    /// Initial total installed capacity (MW).
    pub x0: f64,
    /// Capacity volatility (1/sqrt(year)); 0 for the deterministic model.
    pub sigma: f64,
}

impl ModelParams {
    /// Effective costate discount rate r + delta (1/year).
    pub fn kappa(&self) -> f64 {
        self.r + self.delta
    }

    /// Total producer count N + 1.
    pub fn producers(&self) -> f64 {
        self.n_others + 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r", self.r),
            ("delta", self.delta),
            ("T", self.horizon),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("c", self.cost),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.hours >= 0.0 && self.hours <= MAX_HOURS_PER_YEAR) {
            return Err(Error::InvalidParams(format!(
                "h must lie in [0, {MAX_HOURS_PER_YEAR}], got {}",
                self.hours
            )));
        }
        if !(self.x0 >= 0.0) {
            return Err(Error::InvalidParams(format!("X0 must be >= 0, got {}", self.x0)));
        }
        if !(self.n_others >= 0.0) {
            return Err(Error::InvalidParams(format!("N must be >= 0, got {}", self.n_others)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidParams(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.sigma > 0.0 && self.sigma * self.sigma >= self.r + 2.0 * self.delta {
            return Err(Error::InvalidParams(format!(
                "sigma^2 = {} must stay below r + 2*delta = {}",
                self.sigma * self.sigma,
                self.r + 2.0 * self.delta
            )));
        }
        Ok(())
    }
}

/// Strictly decreasing inverse-demand curve, in $/MWh as a function of MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriceFunction {
    /// P(x) = d1 - d2 x.
    Linear { d1: f64, d2: f64 },
    /// P(x) = p / x.
    Inverse { p: f64 },
}

impl PriceFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PriceFunction::Linear { d1, d2 } => {
                if !(d1 > 0.0 && d1.is_finite()) {
                    return Err(Error::InvalidParams(format!("d1 must be > 0, got {d1}")));
                }
                if !(d2 > 0.0 && d2.is_finite()) {
                    return Err(Error::InvalidParams(format!("d2 must be > 0, got {d2}")));
                }
            }
            PriceFunction::Inverse { p } => {
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::InvalidParams(format!("p must be > 0, got {p}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, PriceFunction::Linear { .. })
    }

    /// Checked evaluation. The inverse variant is undefined at x = 0, and
    /// neither variant accepts negative capacity.
    pub fn eval(&self, x: f64) -> Result<f64> {
        match *self {
            PriceFunction::Linear { .. } if x >= 0.0 => Ok(self.value(x)),
            PriceFunction::Inverse { .. } if x > 0.0 => Ok(self.value(x)),
            _ => Err(Error::PriceDomain { x }),
        }
    }

    /// Raw evaluation without domain checks. `Inverse` at x = 0 yields +inf,
    /// which downstream divergence checks will catch.
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            PriceFunction::Linear { d1, d2 } => d1 - d2 * x,
            PriceFunction::Inverse { p } => p / x,
        }
    }

    /// Capacity level where the price equals the marginal cost `c`.
    pub fn inverse_at_cost(&self, c: f64) -> Result<f64> {
        match *self {
            PriceFunction::Linear { d1, d2 } => {
                if d1 <= c {
                    Err(Error::DegenerateModel(format!(
                        "linear price intercept d1 = {d1} does not exceed the production cost c = {c}; \
                         installation is never profitable"
                    )))
                } else {
                    Ok((d1 - c) / d2)
                }
            }
            PriceFunction::Inverse { p } => Ok(p / c),
        }
    }
}

/// Running reward split into its two signed components ($/year).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    /// h * (P(x + N*xbar) - c) * x; may be negative.
    pub revenue_rate: f64,
    /// nu * (alpha + beta*(nu + N*nubar)); nonnegative for admissible rates.
    pub installation_cost_rate: f64,
}

impl RewardTerms {
    pub fn net(&self) -> f64 {
        self.revenue_rate - self.installation_cost_rate
    }
}

/// Instantaneous reward of a producer holding `x` MW installing at `nu`
/// MW/year, against population means `xbar` and `nubar`.
pub fn running_reward(
    params: &ModelParams,
    price: &PriceFunction,
    x: f64,
    nu: f64,
    xbar: f64,
    nubar: f64,
) -> RewardTerms {
    debug_assert!(x >= 0.0 && nu >= 0.0 && xbar >= 0.0 && nubar >= 0.0);
    let aggregate = x + params.n_others * xbar;
    let revenue_rate = params.hours * (price.value(aggregate) - params.cost) * x;
    let installation_cost_rate = nu * (params.alpha + params.beta * (nu + params.n_others * nubar));
    RewardTerms {
        revenue_rate,
        installation_cost_rate,
    }
}

/// Largest capacity any producer would ever hold: P^{-1}(c) * e^{delta*T}.
/// Above this level (suitably discounted back in time) the revenue margin is
/// negative for the rest of the horizon, so no installation occurs.
pub fn compute_xmax(params: &ModelParams, price: &PriceFunction) -> Result<f64> {
    let q = price.inverse_at_cost(params.cost)?;
    Ok(q * (params.delta * params.horizon).exp())
}

/// Outcome of the non-triviality check on the installation incentive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    pub holds: bool,
    /// A time at which the discounted forward margin exceeds alpha, when one
    /// exists.
    pub witness_t0: Option<f64>,
    /// Best value of the discounted forward margin over the horizon.
    pub best_value: f64,
}

/// Checks that (P(X0) - c)h > (r+delta) alpha and that the discounted margin
/// h * int_{t0}^{T} e^{-(r+delta)(s-t0)} (P(X0 e^{-delta s}) - c) ds exceeds
/// alpha for some t0. When both hold the equilibrium is non-trivial: some
/// installation occurs.
///
/// The integral is evaluated by composite trapezoid with grid doubling until
/// the decision and the maximizer are stable to three significant figures.
pub fn check_assumption(params: &ModelParams, price: &PriceFunction) -> AssumptionReport {
    let margin_now = (price.value(params.x0) - params.cost) * params.hours;
    let strict = margin_now > params.kappa() * params.alpha;

    let mut n = 512usize;
    let mut prev: Option<(bool, f64, f64)> = None;
    let mut result;
    loop {
        let (holds, witness, best) = max_forward_margin(params, price, n);
        result = (holds, witness, best);
        if let Some((ph, pw, pb)) = prev {
            let value_stable = relative_gap(best, pb) <= 5e-4;
            let witness_stable =
                relative_gap(witness, pw) <= 5e-4 || (witness - pw).abs() <= params.horizon / n as f64 * 4.0;
            if ph == holds && value_stable && witness_stable {
                break;
            }
        }
        prev = Some(result);
        n *= 2;
        if n > (1 << 20) {
            break;
        }
    }

    let (integral_holds, witness, best) = result;
    let holds = strict && integral_holds;
    AssumptionReport {
        holds,
        witness_t0: if holds { Some(witness) } else { None },
        best_value: best,
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Max over t0 of h e^{kappa t0} int_{t0}^{T} e^{-kappa s} (P(X0 e^{-delta s}) - c) ds
/// on an (n+1)-point grid, via a backward cumulative trapezoid.
fn max_forward_margin(params: &ModelParams, price: &PriceFunction, n: usize) -> (bool, f64, f64) {
    let kappa = params.kappa();
    let dt = params.horizon / n as f64;
    let weight = |t: f64| (-kappa * t).exp() * (price.value(params.x0 * (-params.delta * t).exp()) - params.cost);

    // tail[i] = int_{t_i}^{T} e^{-kappa s} (P - c) ds
    let mut tail = vec![0.0f64; n + 1];
    let mut w_next = weight(params.horizon);
    for i in (0..n).rev() {
        let w_here = weight(i as f64 * dt);
        tail[i] = tail[i + 1] + 0.5 * dt * (w_here + w_next);
        w_next = w_here;
    }

    let mut best = f64::NEG_INFINITY;
    let mut arg = 0.0;
    for (i, tail_i) in tail.iter().enumerate() {
        let t0 = i as f64 * dt;
        let value = params.hours * (kappa * t0).exp() * tail_i;
        if value > best {
            best = value;
            arg = t0;
        }
    }
    (best > params.alpha, arg, best)
}

// ---------------------------------------------------------------------------
// Parameter files and unit normalization
// ---------------------------------------------------------------------------

/// Price specification as it appears in parameter files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSpec {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

/// Parameter file contents before unit normalization. `beta_inv` stores
/// 1/beta, the form in which the crowding sensitivity is usually quoted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub r: f64,
    pub delta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub h: f64,
    pub alpha: f64,
    pub beta_inv: f64,
    pub c: f64,
    #[serde(rename = "N")]
    pub n_others: f64,
    #[serde(rename = "X0")]
    pub x0: f64,
    #[serde(default)]
    pub sigma: f64,
    pub price: PriceSpec,
    /// Per-field unit tags; omitted fields are taken to be in base units.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub units: BTreeMap<String, String>,
}

/// Conversion factor to base units for a recognized (field, unit) pair.
fn unit_factor(field: &str, unit: &str) -> Result<f64> {
    let table: &[(&str, f64)] = match field {
        "r" | "delta" => &[("1/year", 1.0)],
        "sigma" => &[("1/sqrt(year)", 1.0)],
        "T" => &[("year", 1.0), ("years", 1.0)],
        "h" => &[("hours/year", 1.0)],
        "alpha" => &[
            ("$/MW", 1.0),
            ("$/kW", 1e3),
            ("$/GW", 1e-3),
            ("k$/MW", 1e3),
            ("k$/kW", 1e6),
        ],
        "beta_inv" => &[("MW^2/($*year)", 1.0), ("MW^2/(k$*year)", 1e-3)],
        "c" | "d1" => &[("$/MWh", 1.0), ("$/kWh", 1e3), ("k$/MWh", 1e3)],
        "d2" => &[("$/(MW*MWh)", 1.0), ("$/MW^2h", 1.0)],
        "p" => &[("$/h", 1.0), ("$/hour", 1.0), ("k$/h", 1e3)],
        "X0" => &[("MW", 1.0), ("GW", 1e3), ("kW", 1e-3)],
        "N" => &[("count", 1.0), ("dimensionless", 1.0)],
        _ => {
            return Err(Error::UnknownUnit {
                field: field.to_string(),
                unit: unit.to_string(),
            })
        }
    };
    table
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, f)| *f)
        .ok_or_else(|| Error::UnknownUnit {
            field: field.to_string(),
            unit: unit.to_string(),
        })
}

/// Converts a parameter file to base units and validates every invariant.
/// Conversion factors are exact powers of ten, so normalizing an already
/// normalized file is the identity.
pub fn normalize_params(raw: &RawParams) -> Result<(ModelParams, PriceFunction)> {
    let factor = |field: &str| -> Result<f64> {
        match raw.units.get(field) {
            Some(unit) => unit_factor(field, unit),
            None => Ok(1.0),
        }
    };
    // Reject unit tags for fields we do not know about.
    for field in raw.units.keys() {
        factor(field)?;
    }

    let beta_inv = raw.beta_inv * factor("beta_inv")?;
    if !(beta_inv > 0.0) {
        return Err(Error::InvalidParams(format!(
            "beta_inv must be > 0, got {beta_inv}"
        )));
    }

    let params = ModelParams {
        r: raw.r * factor("r")?,
        delta: raw.delta * factor("delta")?,
        horizon: raw.horizon * factor("T")?,
        hours: raw.h * factor("h")?,
        alpha: raw.alpha * factor("alpha")?,
        beta: 1.0 / beta_inv,
        cost: raw.c * factor("c")?,
        n_others: raw.n_others * factor("N")?,
        x0: raw.x0 * factor("X0")?,
        sigma: raw.sigma * factor("sigma")?,
    };
    params.validate()?;

    let price = match raw.price.kind.as_str() {
        "linear" => {
            let d1 = raw
                .price
                .d1
                .ok_or_else(|| Error::InvalidParams("price.d1 is required for the linear price".into()))?;
            let d2 = raw
                .price
                .d2
                .ok_or_else(|| Error::InvalidParams("price.d2 is required for the linear price".into()))?;
            PriceFunction::Linear {
                d1: d1 * factor("d1")?,
                d2: d2 * factor("d2")?,
            }
        }
        "inverse" => {
            let p = raw
                .price
                .p
                .ok_or_else(|| Error::InvalidParams("price.p is required for the inverse price".into()))?;
            PriceFunction::Inverse { p: p * factor("p")? }
        }
        other => {
            return Err(Error::InvalidParams(format!(
                "price.kind must be \"linear\" or \"inverse\", got \"{other}\""
            )))
        }
    };
    price.validate()?;

    if let PriceFunction::Inverse { .. } = price {
        if !(params.x0 > 0.0) {
            return Err(Error::InvalidParams(
                "X0 must be > 0 with the inverse price".into(),
            ));
        }
    }

    Ok((params, price))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn baseline_raw() -> RawParams {
        // Desk-scale baseline: 30 GW initial fleet, linear demand curve.
        let mut units = BTreeMap::new();
        units.insert("X0".to_string(), "GW".to_string());
        units.insert("alpha".to_string(), "$/kW".to_string());
        RawParams {
            r: 0.1,
            delta: std::f64::consts::LN_2 / 10.0,
            horizon: 5.0,
            h: 3000.0,
            alpha: 1400.0,
            beta_inv: 5.0,
            c: 15.0,
            n_others: 10.0,
            x0: 30.0,
            sigma: 0.0,
            price: PriceSpec {
                kind: "linear".to_string(),
                d1: Some(500.0),
                d2: Some(0.01),
                p: None,
            },
            units,
        }
    }

    #[test]
    fn normalization_converts_to_base_units() {
        let (params, price) = normalize_params(&baseline_raw()).unwrap();
        assert_relative_eq!(params.x0, 30_000.0); // 30 GW
        assert_relative_eq!(params.alpha, 1.4e6); // 1400 $/kW
        assert_relative_eq!(params.beta, 0.2); // 1/beta = 5
        match price {
            PriceFunction::Linear { d1, d2 } => {
                assert_relative_eq!(d1, 500.0);
                assert_relative_eq!(d2, 0.01);
            }
            _ => panic!("expected linear price"),
        }
    }

    #[test]
    fn normalization_is_idempotent_on_base_units() {
        let (params, _) = normalize_params(&baseline_raw()).unwrap();
        // Re-ingest the normalized values with base-unit tags.
        let mut units = BTreeMap::new();
        units.insert("X0".to_string(), "MW".to_string());
        units.insert("alpha".to_string(), "$/MW".to_string());
        units.insert("c".to_string(), "$/MWh".to_string());
        units.insert("T".to_string(), "years".to_string());
        let raw2 = RawParams {
            r: params.r,
            delta: params.delta,
            horizon: params.horizon,
            h: params.hours,
            alpha: params.alpha,
            beta_inv: 1.0 / params.beta,
            c: params.cost,
            n_others: params.n_others,
            x0: params.x0,
            sigma: params.sigma,
            price: baseline_raw().price,
            units,
        };
        let (params2, _) = normalize_params(&raw2).unwrap();
        assert_eq!(params, params2);
    }

    #[test]
    fn unknown_unit_is_rejected_naming_the_field() {
        let mut raw = baseline_raw();
        raw.units.insert("alpha".to_string(), "EUR/kW".to_string());
        match normalize_params(&raw) {
            Err(Error::UnknownUnit { field, unit }) => {
                assert_eq!(field, "alpha");
                assert_eq!(unit, "EUR/kW");
            }
            other => panic!("expected UnknownUnit, got {other:?}"),
        }
    }

    #[test]
    fn price_eval_examples() {
        let linear = PriceFunction::Linear { d1: 500.0, d2: 0.01 };
        assert_relative_eq!(linear.eval(30_000.0).unwrap(), 200.0);
        assert_relative_eq!(linear.eval(0.0).unwrap(), 500.0);

        let p = 6.5e6;
        let c = 15.0;
        let inverse = PriceFunction::Inverse { p };
        assert_relative_eq!(inverse.eval(p / c).unwrap(), c);
        assert!(matches!(
            inverse.eval(0.0),
            Err(Error::PriceDomain { .. })
        ));
    }

    #[test]
    fn price_is_strictly_decreasing() {
        let linear = PriceFunction::Linear { d1: 500.0, d2: 0.01 };
        let inverse = PriceFunction::Inverse { p: 6.5e6 };
        let xs = [1.0, 10.0, 100.0, 1e3, 1e4, 1e5];
        for w in xs.windows(2) {
            assert!(linear.value(w[0]) > linear.value(w[1]));
            assert!(inverse.value(w[0]) > inverse.value(w[1]));
        }
    }

    #[test]
    fn running_reward_examples() {
        let (params, price) = normalize_params(&baseline_raw()).unwrap();
        // Zero control costs nothing; zero capacity earns nothing.
        let terms = running_reward(&params, &price, 100.0, 0.0, 100.0, 0.0);
        assert_eq!(terms.installation_cost_rate, 0.0);
        let terms = running_reward(&params, &price, 0.0, 10.0, 100.0, 5.0);
        assert_eq!(terms.revenue_rate, 0.0);

        // Hand evaluation on the unit-scale parameter set.
        let params = ModelParams {
            r: 0.05,
            delta: std::f64::consts::LN_2 / 10.0,
            horizon: 1.0,
            hours: 1.0,
            alpha: 0.1,
            beta: 0.1,
            cost: 1.0,
            n_others: 10.0,
            x0: 1.1,
            sigma: 0.0,
        };
        let price = PriceFunction::Linear { d1: 2.0, d2: 1.0 };
        let terms = running_reward(&params, &price, 0.1, 0.05, 0.1, 0.05);
        // revenue = 1*(2 - (0.1 + 10*0.1) - 1)*0.1 = -0.01
        assert_relative_eq!(terms.revenue_rate, -0.01, max_relative = 1e-12);
        // cost = 0.05*(0.1 + 0.1*(0.05 + 10*0.05)) = 0.00775
        assert_relative_eq!(terms.installation_cost_rate, 0.00775, max_relative = 1e-12);
    }

    #[test]
    fn xmax_closed_forms() {
        let (params, price) = normalize_params(&baseline_raw()).unwrap();
        let expected = (500.0f64 - 15.0) / 0.01 * (params.delta * 5.0).exp();
        assert_relative_eq!(compute_xmax(&params, &price).unwrap(), expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 6.86e4, max_relative = 2e-3);

        // T = 0 collapses to P^{-1}(c).
        let mut p0 = params;
        p0.horizon = 1e-300;
        let inv = PriceFunction::Inverse { p: 6.5e6 };
        assert_relative_eq!(compute_xmax(&p0, &inv).unwrap(), 6.5e6 / 15.0, max_relative = 1e-9);

        // Unit-scale set: x_max = 1 * e^{delta}.
        let small = ModelParams {
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
        };
        let lp = PriceFunction::Linear { d1: 2.0, d2: 1.0 };
        assert_relative_eq!(
            compute_xmax(&small, &lp).unwrap(),
            (small.delta).exp(),
            max_relative = 1e-12
        );
        assert_relative_eq!(compute_xmax(&small, &lp).unwrap(), 1.0718, max_relative = 1e-4);
    }

    #[test]
    fn xmax_rejects_unprofitable_linear_price() {
        let (params, _) = normalize_params(&baseline_raw()).unwrap();
        let price = PriceFunction::Linear { d1: 10.0, d2: 0.01 }; // d1 < c
        assert!(matches!(
            compute_xmax(&params, &price),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn assumption_holds_on_baseline() {
        let (params, price) = normalize_params(&baseline_raw()).unwrap();
        let report = check_assumption(&params, &price);
        assert!(report.holds);
        let t0 = report.witness_t0.unwrap();
        assert!(t0 >= 0.0 && t0 <= params.horizon);
        // Independent check of the forward margin at the witness with a fine
        // Simpson rule.
        let kappa = params.kappa();
        let n = 20_000usize;
        let dt = (params.horizon - t0) / n as f64;
        let f = |s: f64| {
            (-kappa * (s - t0)).exp()
                * (price.value(params.x0 * (-params.delta * s).exp()) - params.cost)
        };
        let mut sum = f(t0) + f(params.horizon);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(t0 + i as f64 * dt);
        }
        let integral = params.hours * sum * dt / 3.0;
        assert!(integral > params.alpha, "witness integral {integral} <= alpha");
        assert_relative_eq!(integral, report.best_value, max_relative = 1e-3);
    }

    #[test]
    fn assumption_fails_when_alpha_dominates() {
        let (mut params, price) = normalize_params(&baseline_raw()).unwrap();
        params.alpha *= 1e6;
        assert!(!check_assumption(&params, &price).holds);
    }

    #[test]
    fn assumption_fails_when_cost_exceeds_intercept() {
        let (mut params, _) = normalize_params(&baseline_raw()).unwrap();
        params.cost = 600.0;
        let price = PriceFunction::Linear { d1: 500.0, d2: 0.01 };
        let report = check_assumption(&params, &price);
        assert!(!report.holds);
        assert!(report.witness_t0.is_none());
    }

    #[test]
    fn assumption_is_monotone_in_alpha() {
        let (params, price) = normalize_params(&baseline_raw()).unwrap();
        let mut last_holds = true;
        for scale in [1.0, 10.0, 100.0, 1e3, 1e4] {
            let mut p = params;
            p.alpha *= scale;
            let holds = check_assumption(&p, &price).holds;
            // Once it fails it must stay failed as alpha grows.
            assert!(!(holds && !last_holds), "assumption not monotone in alpha");
            last_holds = holds;
        }
        assert!(!last_holds);
    }
}
