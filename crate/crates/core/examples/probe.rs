//! Temporary measurement probe; not part of the crate surface.

use std::path::Path;

use eigenshape::diagnostics::{estimate_lambda, flux_bumps, flux_limit};
use eigenshape::eigen::{solve_lambda1, EigenOptions};
use eigenshape::field::ScalarField;
use eigenshape::free_boundary::{minimize_constrained, FbOptions, ProblemSpec};
use eigenshape::geometry::{make_ball, support_mask, DEFAULT_SUPPORT_TAU};
use eigenshape::grid::make_grid;
use eigenshape::io::load_field;

fn flux_report(tag: &str, u: &ScalarField, spec: &ProblemSpec) {
    let grid = u.grid.clone();
    let h = grid.h_max();
    let supp = support_mask(u, DEFAULT_SUPPORT_TAU);
    let bumps = flux_bumps(u, &supp, 12, 4242).expect("flux bumps");
    let (lambda_big, cv) = estimate_lambda(u, &bumps, spec).expect("estimate");
    println!(
        "--- flux {tag}: n = {}, Lambda = {lambda_big:.5}, cv = {cv:.4}",
        bumps.len()
    );
    let eps: Vec<f64> = [4.0, 8.0, 16.0].iter().map(|m| m * h).collect();
    let curves: Vec<Vec<(f64, f64)>> = bumps
        .iter()
        .map(|phi| flux_limit(u, phi, spec, lambda_big, &eps))
        .collect();
    let mut means = Vec::new();
    for (j, &e) in eps.iter().enumerate() {
        let mean_abs: f64 = curves.iter().map(|c| c[j].1.abs()).sum::<f64>() / curves.len() as f64;
        means.push(mean_abs);
        println!("    eps = {:6.2}h  mean|f| = {:+.4e}", e / h, mean_abs);
    }
    println!(
        "    ratio 4h/16h = {:.4}  monotone = {}",
        means[0] / means[2],
        means[0] < means[1] && means[1] < means[2]
    );
}

fn main() {
    let opts = EigenOptions::default();

    // --- continuity with disk obstacles, radius scan ------------------------
    let grid = make_grid(2, &[2.0, 2.0], &[128, 128]).expect("grid");
    let spec = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 0.0).expect("spec");
    for r in [0.15f64, 0.2, 0.25, 0.3] {
        let base = make_ball(&grid, [1.0, 1.0], r).expect("ball").complement();
        let perts: Vec<_> = (1..=6)
            .map(|n| {
                make_ball(&grid, [1.0, 1.0], r * (1.0 - 0.5f64.powi(n)))
                    .expect("ball")
                    .complement()
            })
            .collect();
        let lambda0 = solve_lambda1(&base, 3.0, 2.5, &opts).expect("base").lambda;
        let rows = eigenshape::diagnostics::continuity_experiment(&base, &perts, &spec, &opts)
            .expect("rows");
        println!("--- obstacle continuity r = {r}: lambda0 = {lambda0:.6}");
        for row in &rows {
            println!(
                "    d = {:.5}  gap = {:.6}  gap/lambda0 = {:.4}%",
                row.distance,
                row.gap,
                100.0 * row.gap / lambda0
            );
        }
    }

    // --- flux decay through the library constructor -------------------------
    for (tag, dir) in [("2d 128", "/tmp/probe/out2d_c"), ("2d 255", "/tmp/probe/out2d_f")] {
        let u = load_field(Path::new(&format!("{dir}/solution"))).expect("field");
        let lam = eigenshape::field::rayleigh_quotient(&u, 3.0, 2.5).expect("quotient");
        let spec = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, lam).expect("spec");
        flux_report(tag, &u, &spec);
    }

    // 1d sanity of the same construction
    let g1 = make_grid(1, &[1.0], &[1025]).expect("grid");
    let spec1 = ProblemSpec::new(3.0, 2.5, 0.5, 0.0, 0.0).expect("spec");
    let start = ScalarField::from_fn(&g1, |x| (std::f64::consts::PI * x[0]).sin());
    let fb = minimize_constrained(&start, &spec1, &FbOptions::default()).expect("fb");
    let spec1 = spec1.with_lambda_c(fb.lambda_c);
    flux_report("1d 1025", &fb.u, &spec1);
}
