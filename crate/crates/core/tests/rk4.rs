use pwnn_core::{registry, rk4_solve};

fn max_error_example3(h: f64) -> f64 {
    let p = registry::get("example3").unwrap();
    let traj = rk4_solve(&p, h, p.t_end).unwrap();
    traj.xs
        .iter()
        .zip(&traj.ys)
        .map(|(&x, y)| (y[0] - x.sin()).abs().max((y[1] - (2.0 * x).cos()).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn fourth_order_convergence() {
    let ratio = max_error_example3(0.02) / max_error_example3(0.01);
    assert!((12.0..=20.0).contains(&ratio), "{ratio}");
}

#[test]
fn sir_population_conserved() {
    let p = registry::get("example2_sir").unwrap();
    let traj = rk4_solve(&p, 0.01, 50.0).unwrap();
    let drift = traj.ys.iter().map(|y| (y.iter().sum::<f64>() - 100.0).abs()).fold(0.0, f64::max);
    assert!(drift <= 1e-6, "{drift}");
}

#[test]
fn example4_invariants_conserved() {
    let p = registry::get("example4").unwrap();
    let traj = rk4_solve(&p, 0.01, 20.0).unwrap();
    for inv in &p.invariants {
        let drift = traj
            .xs
            .iter()
            .zip(&traj.ys)
            .map(|(&x, y)| (inv.expr.eval(x, y) - inv.value).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-8, "{}: {drift}", inv.label);
    }
}

#[test]
fn interpolated_values_stay_accurate() {
    let p = registry::get("example3").unwrap();
    let traj = rk4_solve(&p, 0.01, p.t_end).unwrap();
    for x in [0.005, 3.14567, 17.777, 49.995] {
        let y = traj.value_at(&p, x).unwrap();
        assert!((y[0] - f64::sin(x)).abs() < 1e-8 && (y[1] - f64::cos(2.0 * x)).abs() < 1e-8);
    }
}
