//! Scratch experiment for outer-loop damping (not shipped behavior).

use capex_mfg::mfg::{Grids, InitialDensity, MfgMethod, SolveOptions};
use capex_mfg::model::{ModelParams, PriceFunction};
use capex_mfg::solve_mfg;

fn unit_params(x0: f64) -> ModelParams {
    ModelParams {
        r: 0.05,
        delta: std::f64::consts::LN_2 / 10.0,
        horizon: 1.0,
        hours: 1.0,
        alpha: 0.1,
        beta: 0.1,
        cost: 1.0,
        n_others: 10.0,
        x0,
        sigma: 0.0,
    }
}

fn big_params(horizon: f64) -> ModelParams {
    ModelParams {
        r: 0.1,
        delta: std::f64::consts::LN_2 / 10.0,
        horizon,
        hours: 3000.0,
        alpha: 1.4e6,
        beta: 0.2,
        cost: 15.0,
        n_others: 10.0,
        x0: 30_000.0,
        sigma: 0.0,
    }
}

fn run(label: &str, p: &ModelParams, price: &PriceFunction, m0: &InitialDensity, n_t: usize, n_x: usize, omega: f64, max_outer: usize, method: MfgMethod) {
    let grids = Grids::new(p, price, n_t, n_x, 1.0).unwrap();
    let opts = SolveOptions {
        damping: omega,
        max_outer,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    match solve_mfg(p, price, m0, &grids, method, &opts) {
        Ok(eq) => println!(
            "{label} omega={omega}: converged in {} iters, t_star={:.4}, sup nubar={:.5e}, {:.2?}",
            eq.iterations,
            eq.t_star,
            eq.mean_rate.iter().cloned().fold(0.0f64, f64::max),
            t0.elapsed()
        ),
        Err(e) => println!("{label} omega={omega}: FAILED ({:.2?}): {e}", t0.elapsed()),
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    let lp_unit = PriceFunction::Linear { d1: 2.0, d2: 1.0 };
    let lp_big = PriceFunction::Linear { d1: 500.0, d2: 0.01 };
    match which.as_str() {
        "big5" => {
            let m0 = InitialDensity::TruncatedExponential { n_levels: 30, x_end: 30_000.0 };
            for omega in [0.1, 0.05] {
                run("big T=5 ansatz", &big_params(5.0), &lp_big, &m0, 10_000, 400, omega, 2000, MfgMethod::Ansatz);
            }
        }
        "sweep" => {
            let m0 = InitialDensity::TruncatedExponential { n_levels: 30, x_end: 30_000.0 };
            for n_others in [5.0, 10.0, 20.0, 30.0, 50.0, 100.0, 200.0] {
                let mut p5 = big_params(5.0);
                p5.n_others = n_others;
                run(&format!("T=5 N={n_others}"), &p5, &lp_big, &m0, 10_000, 400, 0.1, 2000, MfgMethod::Ansatz);
                let mut p10 = big_params(10.0);
                p10.n_others = n_others;
                run(&format!("T=10 N={n_others}"), &p10, &lp_big, &m0, 20_000, 400, 0.1, 2000, MfgMethod::Ansatz);
            }
        }
        "unit-small" => {
            for x0 in [0.4, 0.2, 0.1] {
                let m0 = InitialDensity::TruncatedExponential { n_levels: 20, x_end: 0.15 * x0 / 0.4 };
                run(&format!("unit X0={x0} ansatz"), &unit_params(x0), &lp_unit, &m0, 2000, 300, 0.1, 3000, MfgMethod::Ansatz);
            }
        }
        "unit-fd" => {
            let m0 = InitialDensity::TruncatedExponential { n_levels: 20, x_end: 0.15 };
            run("unit fd", &unit_params(0.4), &lp_unit, &m0, 2000, 300, 0.1, 500, MfgMethod::FiniteDifference);
        }
        _ => {
            let m0 = InitialDensity::TruncatedExponential { n_levels: 20, x_end: 0.15 };
            run("unit ansatz", &unit_params(0.4), &lp_unit, &m0, 2000, 300, 0.2, 60, MfgMethod::Ansatz);
        }
    }
}
