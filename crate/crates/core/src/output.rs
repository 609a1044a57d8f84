//! CSV and JSON emission. All numeric output is rendered with 12 significant
//! digits so files are byte-identical across runs of the same configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::Result;
use crate::homogeneous::HomogeneousSolution;
use crate::mfg::MeanFieldEquilibrium;
use crate::model::ModelParams;

/// 12 significant digits, scientific notation.
pub fn fmt_sig(v: f64) -> String {
    format!("{v:.11e}")
}

/// Rounds to 12 significant digits so serialized JSON numbers match the CSV
/// rendering precision.
pub fn round_sig(v: f64) -> f64 {
    fmt_sig(v).parse().unwrap_or(v)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// `t, X, u, K` per grid point.
pub fn homogeneous_csv(sol: &HomogeneousSolution) -> String {
    let mut out = String::from("t,X,u,K\n");
    for (i, &t) in sol.grid.points().iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_sig(t),
            fmt_sig(sol.capacity[i]),
            fmt_sig(sol.costate[i]),
            fmt_sig(sol.rate[i])
        );
    }
    out
}

pub fn write_homogeneous(sol: &HomogeneousSolution, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let csv_path = dir.join("solution.csv");
    write_file(&csv_path, &homogeneous_csv(sol))?;
    let sidecar = json!({
        "t_star": round_sig(sol.t_star),
        "u0": round_sig(sol.u0),
        "residual": round_sig(sol.residual),
    });
    let json_path = dir.join("solution.json");
    write_file(&json_path, &format!("{:#}\n", sidecar))?;
    Ok(vec![csv_path, json_path])
}

/// `t, xbar, nubar, x_star, X_total, K_total` per time node.
pub fn equilibrium_csv(eq: &MeanFieldEquilibrium, params: &ModelParams) -> String {
    let producers = params.producers();
    let mut out = String::from("t,xbar,nubar,x_star,X_total,K_total\n");
    for (k, &t) in eq.grids.time.points().iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_sig(t),
            fmt_sig(eq.mean_capacity[k]),
            fmt_sig(eq.mean_rate[k]),
            fmt_sig(eq.threshold[k]),
            fmt_sig(producers * eq.mean_capacity[k]),
            fmt_sig(producers * eq.mean_rate[k])
        );
    }
    out
}

/// Long-form `t, x, m` over the stored layers.
pub fn density_csv(eq: &MeanFieldEquilibrium) -> String {
    let mut out = String::from("t,x,m\n");
    for (row, &k) in eq.density.t_idx.iter().enumerate() {
        let t = eq.grids.time.points()[k];
        for (j, &x) in eq.grids.x().iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", fmt_sig(t), fmt_sig(x), fmt_sig(eq.density.m[[row, j]]));
        }
    }
    out
}

/// Long-form `t, x, V, Vx` over the stored layers.
pub fn value_csv(eq: &MeanFieldEquilibrium) -> String {
    let mut out = String::from("t,x,V,Vx\n");
    for (row, &k) in eq.value.t_idx.iter().enumerate() {
        let t = eq.grids.time.points()[k];
        for (j, &x) in eq.grids.x().iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_sig(t),
                fmt_sig(x),
                fmt_sig(eq.value.v[[row, j]]),
                fmt_sig(eq.value.vx[[row, j]])
            );
        }
    }
    out
}

pub fn equilibrium_meta(eq: &MeanFieldEquilibrium, method: &str, m0_meta: Value) -> Value {
    json!({
        "method": method,
        "iterations": eq.iterations,
        "residual_history": eq.residual_history.iter().map(|&r| round_sig(r)).collect::<Vec<_>>(),
        "t_star": round_sig(eq.t_star),
        "sigma": round_sig(eq.sigma),
        "reduction": eq.reduction,
        "grids": {
            "n_t": eq.grids.time.n_steps(),
            "n_x": eq.grids.n_x(),
            "dt": round_sig(eq.grids.time.dt()),
            "dx": round_sig(eq.grids.dx()),
            "x_max": round_sig(eq.grids.x_max()),
            "stored_layers": eq.density.t_idx.len(),
        },
        "m0": m0_meta,
        "diagnostics": {
            "max_mass_drift": round_sig(eq.diagnostics.max_mass_drift),
            "min_density": round_sig(eq.diagnostics.min_density),
            "control_monotonicity_violations": eq.diagnostics.control_monotonicity_violations,
            "concavity_violations": eq.diagnostics.concavity_violations,
            "max_vx_jump_at_threshold": round_sig(eq.diagnostics.max_vx_jump_at_threshold),
        },
    })
}

pub fn write_equilibrium(
    eq: &MeanFieldEquilibrium,
    params: &ModelParams,
    method: &str,
    m0_meta: Value,
    emit_value: bool,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let eq_path = dir.join("equilibrium.csv");
    write_file(&eq_path, &equilibrium_csv(eq, params))?;
    written.push(eq_path);
    let d_path = dir.join("density.csv");
    write_file(&d_path, &density_csv(eq))?;
    written.push(d_path);
    if emit_value {
        let v_path = dir.join("value.csv");
        write_file(&v_path, &value_csv(eq))?;
        written.push(v_path);
    }
    let meta_path = dir.join("meta.json");
    write_file(&meta_path, &format!("{:#}\n", equilibrium_meta(eq, method, m0_meta)))?;
    written.push(meta_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_sig(0.25), "2.50000000000e-1");
        assert_eq!(fmt_sig(30000.0), "3.00000000000e4");
        let v = 1.2345678901234567;
        assert_eq!(round_sig(v), 1.23456789012);
    }
}
