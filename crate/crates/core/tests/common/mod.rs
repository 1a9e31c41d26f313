//! Reference solutions computed without the library's solvers.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, SymmetricEigen};

pub fn preset_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(format!("{name}.ini"))
}

pub fn load_preset(name: &str) -> qpce::config::RunConfig {
    qpce::config::RunConfig::load(&preset_path(name)).expect("preset parses")
}

/// Roots of (w^2 - c^2) sin(wT) - 2 c w cos(wT) = 0 on (0, inf), ascending.
pub fn ou_frequencies(tau_c: f64, horizon: f64, count: usize) -> Vec<f64> {
    let c = 1.0 / tau_c;
    let f = |w: f64| (w * w - c * c) * (w * horizon).sin() - 2.0 * c * w * (w * horizon).cos();
    let step = std::f64::consts::PI / horizon / 400.0;
    let mut roots = Vec::with_capacity(count);
    let mut a = 1e-9;
    let mut fa = f(a);
    while roots.len() < count {
        let b = a + step;
        let fb = f(b);
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if flo * fm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        a = b;
        fa = fb;
    }
    roots
}

/// Analytic eigenvalues of alpha^2 exp(-|t - s| / tau_c) on [0, T], descending.
pub fn ou_eigenvalues(alpha: f64, tau_c: f64, horizon: f64, count: usize) -> Vec<f64> {
    let c = 1.0 / tau_c;
    ou_frequencies(tau_c, horizon, count).iter().map(|w| 2.0 * c * alpha * alpha / (w * w + c * c)).collect()
}

/// Unit-norm analytic eigenfunction w cos(wt) + c sin(wt), sign fixed by a
/// positive integral (or positive value at 0 when the integral vanishes).
pub fn ou_eigenfunction(tau_c: f64, horizon: f64, w: f64) -> impl Fn(f64) -> f64 {
    let c = 1.0 / tau_c;
    let raw = move |t: f64| w * (w * t).cos() + c * (w * t).sin();
    let norm = simpson(|t| raw(t) * raw(t), 0.0, horizon, 20_000).sqrt();
    let integral = simpson(raw, 0.0, horizon, 20_000);
    let sign = if integral.abs() > 1e-10 * norm { integral.signum() } else { raw(0.0).signum() };
    move |t| sign * raw(t) / norm
}

pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Coherence of a qubit under pure OU dephasing, exp(-2 int int C).
pub fn dephasing_coherence(alpha: f64, tau_c: f64, t: f64) -> f64 {
    (-4.0 * alpha * alpha * tau_c * (t - tau_c * (1.0 - (-t / tau_c).exp()))).exp()
}

/// Probabilists' Gauss-Hermite rule (weights sum to 1), via Golub-Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// He_0..=He_max at x.
pub fn hermite_values(x: f64, max: usize) -> Vec<f64> {
    let mut he = vec![1.0, x];
    for k in 1..max {
        he.push(x * he[k] - k as f64 * he[k - 1]);
    }
    he.truncate(max + 1);
    he
}

pub fn binomial(n: u128, k: u128) -> u128 {
    let fact = |m: u128| (1..=m).product::<u128>();
    fact(n) / (fact(k) * fact(n - k))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
