mod common;

use common::*;
use qpce::kle::{
    build_truncated_kle, evaluate_mode, reconstruct_covariance, solve_fredholm, solve_fredholm_with, transition_rate,
    KleSettings, NystromRule, QuadratureGrid,
};
use qpce::{CorrelationKernel, KernelTable, Operator};

fn ou(alpha: f64, tau_c: f64) -> CorrelationKernel {
    CorrelationKernel::ornstein_uhlenbeck(alpha, tau_c).unwrap()
}

#[test]
fn eigenvalues_match_transcendental_roots() {
    for tau_c in [0.1, 1.0, 10.0] {
        let modes = solve_fredholm(&ou(1.0, tau_c), 1.0, 400, 8).unwrap();
        let exact = ou_eigenvalues(1.0, tau_c, 1.0, 8);
        for (m, e) in modes.iter().zip(&exact) {
            let rel = (m.eigenvalue - e).abs() / e;
            assert!(rel < 1e-4, "tau_c {tau_c} mode {}: {} vs {e} (rel {rel:e})", m.index, m.eigenvalue);
        }
    }
}

#[test]
fn eigenvalues_scale_with_variance() {
    let a = solve_fredholm(&ou(1.0, 2.0), 1.0, 200, 4).unwrap();
    let b = solve_fredholm(&ou(3.0, 2.0), 1.0, 200, 4).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((9.0 * x.eigenvalue - y.eigenvalue).abs() < 1e-12 * y.eigenvalue);
    }
}

#[test]
fn eigenfunctions_match_analytic_shapes() {
    let tau_c = 0.5;
    let modes = solve_fredholm(&ou(1.0, tau_c), 1.0, 400, 4).unwrap();
    let ws = ou_frequencies(tau_c, 1.0, 4);
    for (m, &w) in modes.iter().zip(&ws) {
        let g = ou_eigenfunction(tau_c, 1.0, w);
        let nodes = m.grid.nodes();
        let err = nodes.iter().zip(&m.values).map(|(&t, v)| (g(t) - v).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "mode {} err {err:e}", m.index);
    }
}

#[test]
fn modes_are_orthonormal() {
    let modes = solve_fredholm(&ou(1.0, 0.3), 1.0, 300, 12).unwrap();
    for a in &modes {
        for b in &modes {
            let expect = if a.index == b.index { 1.0 } else { 0.0 };
            assert!((a.inner(b) - expect).abs() <= 1e-6);
        }
    }
}

#[test]
fn trapezoid_rule_satisfies_trace_identity_and_reconstructs_kernel() {
    let kernel = ou(1.5, 0.2);
    let n = 120;
    let grid = QuadratureGrid::trapezoid(1.0, n).unwrap();
    let sol = solve_fredholm_with(&kernel, grid, n, NystromRule::Trapezoid).unwrap();
    let total: f64 = sol.eigenvalues.iter().sum();
    let exact = 1.0 * kernel.variance();
    assert!((total - exact).abs() <= 1e-8 * exact, "{total} vs {exact}");
    let cov = reconstruct_covariance(&sol.modes).unwrap();
    let nodes = sol.grid.nodes();
    for i in (0..n).step_by(7) {
        for j in (0..n).step_by(5) {
            assert!((cov[(i, j)] - kernel.covariance(nodes[i], nodes[j])).abs() < 1e-10);
        }
    }
}

#[test]
fn corrected_rule_preserves_its_own_trace() {
    let sol = solve_fredholm_with(&ou(1.0, 0.1), QuadratureGrid::trapezoid(1.0, 400).unwrap(), 8, NystromRule::CuspCorrected)
        .unwrap();
    let total: f64 = sol.eigenvalues.iter().sum();
    assert!((total - sol.discrete_trace).abs() <= 1e-8 * sol.discrete_trace);
}

#[test]
fn off_grid_values_converge_under_refinement() {
    let kernel = ou(1.0, 0.2);
    let coarse = solve_fredholm(&kernel, 1.0, 200, 5).unwrap();
    let fine = solve_fredholm(&kernel, 1.0, 800, 5).unwrap();
    let h = coarse[0].grid.spacing();
    for (c, f) in coarse.iter().zip(&fine) {
        for k in [3usize, 57, 120, 198] {
            let t = (k as f64 + 0.5) * h;
            let mid = evaluate_mode(c, &kernel, t).unwrap();
            let reference = evaluate_mode(f, &kernel, t).unwrap();
            assert!((mid - reference).abs() < 1e-4, "mode {} t {t}: {mid} vs {reference}", c.index);
            let (a, b) = (c.values[k], c.values[k + 1]);
            let (lo, hi) = (a.min(b), a.max(b));
            let slack = 0.05 * (hi - lo).max(1e-3);
            assert!(mid >= lo - slack && mid <= hi + slack, "mode {} t {t}: {mid} not near [{lo}, {hi}]", c.index);
        }
    }
}

#[test]
fn extension_reproduces_node_values() {
    let kernel = ou(1.0, 3.0);
    let modes = solve_fredholm(&kernel, 2.0, 150, 3).unwrap();
    for m in &modes {
        for (k, &t) in m.grid.nodes().iter().enumerate() {
            assert!((evaluate_mode(m, &kernel, t).unwrap() - m.values[k]).abs() < 1e-9);
        }
    }
}

#[test]
fn dominance_depends_on_correlation_time() {
    let slow = solve_fredholm(&ou(1.0, 10.0), 1.0, 400, 2).unwrap();
    assert!(slow[0].eigenvalue / slow[1].eigenvalue > 10.0);
    let fast = solve_fredholm(&ou(1.0, 0.1), 1.0, 400, 2).unwrap();
    assert!(fast[0].eigenvalue / fast[1].eigenvalue < 3.0);
}

/// |int_0^T e^{i w t} sqrt(lambda) g(t) dt|^2 / T by Simpson on the analytic mode.
fn analytic_rate(tau_c: f64, w: f64, omega: f64) -> f64 {
    let lambda = 2.0 / tau_c / (w * w + 1.0 / (tau_c * tau_c));
    let g = ou_eigenfunction(tau_c, 1.0, w);
    let re = simpson(|t| (omega * t).cos() * g(t), 0.0, 1.0, 20_000);
    let im = simpson(|t| (omega * t).sin() * g(t), 0.0, 1.0, 20_000);
    lambda * (re * re + im * im)
}

#[test]
fn transition_rates_match_direct_quadrature() {
    // H0 = B X, V = Z: |<+|Z|->|^2 = 1 for both off-diagonal pairs, zero diagonal
    let b = 20.0;
    let h0 = Operator::pauli_x().scale(qpce::C64::new(b, 0.0));
    let modes = solve_fredholm(&ou(1.0, 10.0), 1.0, 400, 6).unwrap();
    let ws = ou_frequencies(10.0, 1.0, 6);
    for (m, &w) in modes.iter().zip(&ws) {
        let rate = transition_rate(m, &h0, &Operator::pauli_z(), 1.0).unwrap();
        let expect = 2.0 * analytic_rate(10.0, w, 2.0 * b);
        assert!((rate - expect).abs() < 1e-3 * expect.max(1e-8), "mode {}: {rate} vs {expect}", m.index);
    }
}

#[test]
fn fast_drive_reorders_modes() {
    let h0 = Operator::pauli_x().scale(qpce::C64::new(20.0, 0.0));
    let settings = KleSettings { grid_size: 400, candidate_modes: Some(12), stochastic_dim: 3, rule: NystromRule::CuspCorrected };
    let (kle, _) = build_truncated_kle(&ou(1.0, 10.0), &h0, &Operator::pauli_z(), 1.0, &settings).unwrap();
    let report = &kle.selection_report;
    let lambda_order: Vec<usize> = (0..report.len()).collect();
    let mut gamma_order = lambda_order.clone();
    gamma_order.sort_by(|&a, &b| report[b].gamma.total_cmp(&report[a].gamma));
    assert_ne!(lambda_order, gamma_order);
    assert_eq!(report.iter().filter(|r| r.selected).count(), 3);
    // the selected modes are exactly the top three rates
    for &k in &gamma_order[..3] {
        assert!(report[k].selected);
    }
}

#[test]
fn indefinite_table_is_rejected() {
    let table = KernelTable::new(0.1, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let err = solve_fredholm(&CorrelationKernel::Tabulated(table), 1.0, 101, 2).unwrap_err();
    assert!(matches!(err, qpce::Error::KernelNotPsd { .. }), "{err}");
}
