//! Scratch probe of one outer iteration (not shipped behavior).

use capex_mfg::mfg::{
    ansatz_install_coeffs, hjb_backward_fd, last_zero_crossing, mean_rate_update,
    noninstall_quadratic, threshold_quadratic, Grids, HjbBoundary, InitialDensity, LayerOpts,
};
use capex_mfg::mfg::{build_initial_density, fp_forward, ControlField};
use capex_mfg::model::{ModelParams, PriceFunction};

struct Quad<'a> {
    coeffs: &'a capex_mfg::mfg::AnsatzCoefficients,
    x_star: &'a [f64],
    cutoffs: &'a [f64],
    grid: &'a capex_mfg::TimeGrid,
    beta: f64,
}
impl ControlField for Quad<'_> {
    fn rate(&self, t: usize, x: f64) -> f64 {
        let vx = self.coeffs.derivative_at(self.grid, self.x_star, t, x);
        (vx - self.cutoffs[t]).max(0.0) / (2.0 * self.beta)
    }
}

fn main() {
    let p = ModelParams {
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
    let price = PriceFunction::Linear { d1: 2.0, d2: 1.0 };
    let grids = Grids::new(&p, &price, 2000, 300, 1.0).unwrap();
    let n = grids.time.n_points();
    let m0 = build_initial_density(
        &p,
        &grids,
        &InitialDensity::TruncatedExponential { n_levels: 20, x_end: 0.15 },
    )
    .unwrap();
    println!("m0 mean {:.5}", m0.mean);

    // Decay guess.
    let nubar: Vec<f64> = grids
        .time
        .points()
        .iter()
        .map(|&t| m0.mean * (1.0 - t / p.horizon))
        .collect();
    // Mean path.
    let mut xbar = vec![m0.mean; n];
    for k in 0..n - 1 {
        let dt = grids.time.dt();
        let x = xbar[k];
        xbar[k + 1] = x + dt * (-p.delta * x + 0.5 * (nubar[k] + nubar[k + 1]));
    }
    let (a, b) = noninstall_quadratic(&p, 2.0, 1.0, &xbar, &grids.time, false, 0.0);
    let x_star = threshold_quadratic(&p, &a, &b, &nubar, &grids.time, grids.x_max()).unwrap();
    let cutoffs: Vec<f64> = nubar.iter().map(|&v| p.alpha + p.beta * p.n_others * v).collect();
    let margin: Vec<f64> = b.iter().zip(&cutoffs).map(|(&bi, &ci)| bi - ci).collect();
    let t_star = last_zero_crossing(&grids.time, &margin);
    println!("b[0]={:.4} x_star[0]={:.4} t_star={:.4}", b[0], x_star[0], t_star);
    let coeffs = ansatz_install_coeffs(
        &p, 2.0, 1.0, &xbar, &nubar, &a, &b, t_star, &grids.time, false, 0.0,
    )
    .unwrap();
    println!(
        "A[0]={:.4} B[0]={:.4} C[0]={:.4} b[0]={:.4}",
        coeffs.big_a[0], coeffs.big_b[0], coeffs.big_c[0], b[0]
    );

    // FD surface with the same boundary data.
    let surface = hjb_backward_fd(
        &p,
        &price,
        &xbar,
        &nubar,
        &grids,
        &HjbBoundary::Quadratic { a: &coeffs.a, b: &coeffs.b, c0: &coeffs.big_c },
        &LayerOpts::default(),
        false,
    )
    .unwrap();
    println!(
        "fd: V(0,0)={:.4} V(0,x1)={:.4} vx(0,0)={:.4} vx(0,x1)={:.4} vx(0,x5)={:.4}",
        surface.v[[0, 0]],
        surface.v[[0, 1]],
        surface.vx[[0, 0]],
        surface.vx[[0, 1]],
        surface.vx[[0, 5]]
    );
    println!(
        "ansatz deriv at x0..x5 t=0: {:?}",
        (0..6)
            .map(|j| coeffs.derivative_at(&grids.time, &x_star, 0, grids.x()[j]))
            .collect::<Vec<_>>()
    );

    // Transport under the quadratic control, then responses.
    let control = Quad {
        coeffs: &coeffs,
        x_star: &x_star,
        cutoffs: &cutoffs,
        grid: &grids.time,
        beta: p.beta,
    };
    let density = fp_forward(&p, &control, &grids, &m0.m0, 0.0).unwrap();
    for &k in &[0usize, 400, 800, 850, 900, 950, 1200, 1400, 1900] {
        let vx_row: Vec<f64> = grids
            .x()
            .iter()
            .map(|&x| coeffs.derivative_at(&grids.time, &x_star, k, x))
            .collect();
        let m_row: Vec<f64> = density.m.row(k).to_vec();
        let resp = mean_rate_update(&p, &grids, &vx_row, &m_row, x_star[k], nubar[k], false);
        let fd_row: Vec<f64> = (0..grids.n_x()).map(|j| surface.vx[[k, j]]).collect();
        let resp_fd = mean_rate_update(&p, &grids, &fd_row, &m_row, f64::INFINITY, nubar[k], true);
        println!(
            "k={k} t={:.3} nubar={:.4} x*={:.4} resp={:.4} resp_fd={:.4} B={:.3} b={:.3} cutoff={:.3} vxfd0={:.3}",
            grids.time.points()[k],
            nubar[k],
            x_star[k],
            resp,
            resp_fd,
            coeffs.big_b[k],
            b[k],
            cutoffs[k],
            surface.vx[[k, 0]],
        );
    }
}
