//! Karhunen-Loeve decomposition of a stationary Gaussian process on [0, tau].
//!
//! The Fredholm problem `int_0^tau C(t, s) g(s) ds = lambda g(t)` is discretised
//! by the Nystrom method on a uniform trapezoidal grid. Kernels with a cusp at
//! zero lag (Ornstein-Uhlenbeck) lose the trapezoid rule's second order unless the
//! derivative jump on the diagonal is accounted for, so by default the kernel
//! matrix carries the Euler-Maclaurin jump term `h^2 J / 12` on its interior
//! diagonal, with `J = 2 C'(0+)`. The same term, evaluated for the kink position
//! inside a cell, is used by the off-grid Nystrom extension.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernel::CorrelationKernel;
use crate::operator::{HermitianEigen, Operator, Tolerances, C64};

/// Eigenvalues below `-PSD_FRACTION * lambda_max` mean the kernel is indefinite.
const PSD_FRACTION: f64 = 1e-6;
/// Modes with eigenvalue at or below this fraction of the largest are null modes.
const NULL_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    horizon: f64,
}

impl QuadratureGrid {
    /// Composite trapezoid rule with `size` equally spaced nodes on [0, horizon].
    pub fn trapezoid(horizon: f64, size: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
        }
        if size < 2 {
            return Err(Error::InvalidInput(format!("grid size {size} must be at least 2")));
        }
        let h = horizon / (size - 1) as f64;
        let nodes: Vec<f64> = (0..size)
            .map(|k| if k == size - 1 { horizon } else { k as f64 * h })
            .collect();
        let mut weights = vec![h; size];
        weights[0] = 0.5 * h;
        weights[size - 1] = 0.5 * h;
        Ok(Self { nodes, weights, horizon })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.horizon / (self.nodes.len() - 1) as f64
    }

    /// sum_k w_k f(t_k)
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, f)| w * f).sum()
    }
}

/// How the kernel integral is discretised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NystromRule {
    /// Plain trapezoid weights.
    Trapezoid,
    /// Trapezoid weights plus the diagonal derivative-jump correction.
    #[default]
    CuspCorrected,
}

/// One eigenpair of the discretised Fredholm operator.
#[derive(Debug, Clone)]
pub struct KLMode {
    /// Rank by eigenvalue, 0 = largest.
    pub index: usize,
    pub eigenvalue: f64,
    /// g sampled at the grid nodes, normalised so sum_k w_k g_k^2 = 1.
    pub values: Vec<f64>,
    pub grid: Arc<QuadratureGrid>,
    /// Largest eigenvalue of the solve this mode came from.
    pub lambda_max: f64,
    /// Derivative jump J used for the cusp correction; zero when uncorrected.
    pub cusp_jump: f64,
}

impl KLMode {
    /// Diagonal cusp term for a kink at time t: J h^2 (1/12 - theta (1 - theta) / 2),
    /// theta the fractional position of t inside its cell. Zero at the endpoints.
    fn cusp_term(&self, t: f64) -> f64 {
        if self.cusp_jump == 0.0 || t <= 0.0 || t >= self.grid.horizon {
            return 0.0;
        }
        let h = self.grid.spacing();
        let x = t / h;
        let theta = x - x.floor();
        self.cusp_jump * h * h * (1.0 / 12.0 - 0.5 * theta * (1.0 - theta))
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.grid.weights().iter().zip(&self.values).map(|(w, g)| w * g * g).sum()
    }

    pub fn inner(&self, other: &KLMode) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }
}

/// Output of [`solve_fredholm_with`].
#[derive(Debug, Clone)]
pub struct FredholmSolution {
    pub grid: Arc<QuadratureGrid>,
    pub rule: NystromRule,
    /// All eigenvalues, descending, after clamping.
    pub eigenvalues: Vec<f64>,
    /// The requested leading modes.
    pub modes: Vec<KLMode>,
    /// Trace of the discretised operator, sum_k w_k C~(t_k, t_k).
    pub discrete_trace: f64,
}

/// Leading `n_modes` eigenpairs of the Fredholm operator on [0, tau], cusp-corrected.
pub fn solve_fredholm(
    kernel: &CorrelationKernel,
    tau: f64,
    grid_size: usize,
    n_modes: usize,
) -> Result<Vec<KLMode>> {
    let grid = QuadratureGrid::trapezoid(tau, grid_size)?;
    Ok(solve_fredholm_with(kernel, grid, n_modes, NystromRule::CuspCorrected)?.modes)
}

pub fn solve_fredholm_with(
    kernel: &CorrelationKernel,
    grid: QuadratureGrid,
    n_modes: usize,
    rule: NystromRule,
) -> Result<FredholmSolution> {
    let n = grid.len();
    if n_modes == 0 || n_modes > n {
        return Err(Error::InsufficientModes { requested: n_modes, available: n });
    }
    if kernel.max_lag() < grid.horizon() * (1.0 - 1e-12) {
        return Err(Error::InvalidInput(format!(
            "kernel defined up to lag {} but the horizon is {}",
            kernel.max_lag(),
            grid.horizon()
        )));
    }
    let h = grid.spacing();
    let cusp_jump = match rule {
        NystromRule::Trapezoid => 0.0,
        NystromRule::CuspCorrected => {
            let slope = kernel.cusp_slope();
            // asymptotic correction needs the kernel resolved on the grid
            if h * slope.abs() <= 0.5 * kernel.variance() {
                2.0 * slope
            } else {
                0.0
            }
        }
    };
    let diag_shift = cusp_jump * h * h / 12.0;

    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let nodes = grid.nodes();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = sqrt_w[i] * kernel.covariance(nodes[i], nodes[j]) * sqrt_w[j];
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    for i in 1..n - 1 {
        a[(i, i)] += diag_shift;
    }
    let discrete_trace = a.trace();

    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let lambda_min = eig.eigenvalues[order[n - 1]];
    if lambda_min < -PSD_FRACTION * lambda_max {
        return Err(Error::KernelNotPsd { eigenvalue: lambda_min, lambda_max });
    }
    // anything left between -PSD_FRACTION * lambda_max and 0 is roundoff
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();

    let grid = Arc::new(grid);
    let weights = grid.weights();
    let modes = order
        .iter()
        .take(n_modes)
        .enumerate()
        .map(|(rank, &k)| {
            let col = eig.eigenvectors.column(k);
            let mut values: Vec<f64> = (0..n).map(|i| col[i] / sqrt_w[i]).collect();
            let norm = values.iter().zip(weights).map(|(g, w)| w * g * g).sum::<f64>().sqrt();
            values.iter_mut().for_each(|g| *g /= norm);
            let mean: f64 = values.iter().zip(weights).map(|(g, w)| w * g).sum();
            if mean < -1e-12 || (mean.abs() <= 1e-12 && values[0] < 0.0) {
                values.iter_mut().for_each(|g| *g = -*g);
            }
            KLMode {
                index: rank,
                eigenvalue: eigenvalues[rank],
                values,
                grid: Arc::clone(&grid),
                lambda_max,
                cusp_jump,
            }
        })
        .collect();
    Ok(FredholmSolution { grid, rule, eigenvalues, modes, discrete_trace })
}

/// Off-grid value of g via the Nystrom extension
/// g(t) = sum_k w_k C(t, t_k) g_k / (lambda - cusp(t)).
pub fn evaluate_mode(mode: &KLMode, kernel: &CorrelationKernel, t: f64) -> Result<f64> {
    let tau = mode.grid.horizon();
    let slack = 1e-12 * tau;
    if !(t >= -slack && t <= tau + slack) {
        return Err(Error::InvalidInput(format!("t = {t} outside [0, {tau}]")));
    }
    let t = t.clamp(0.0, tau);
    if mode.eigenvalue <= NULL_FRACTION * mode.lambda_max {
        return Err(Error::DegenerateMode { index: mode.index, eigenvalue: mode.eigenvalue });
    }
    let weights = mode.grid.weights();
    let acc: f64 = mode
        .grid
        .nodes()
        .iter()
        .zip(weights.iter().zip(&mode.values))
        .map(|(&tk, (w, g))| w * kernel.covariance(t, tk) * g)
        .sum();
    Ok(acc / (mode.eigenvalue - mode.cusp_term(t)))
}

/// Cumulative transition rate Gamma_n = sum_{j,k} (1/tau) |<j|V|k> int_0^tau
/// e^{i (E_j - E_k) t} sqrt(lambda_n) g_n(t) dt|^2, with the H0 eigenbasis from
/// the Hermitian eigensolver. The integral treats g as piecewise linear between
/// grid nodes and integrates the exponential exactly, so fast drives stay
/// accurate on a grid that does not resolve them. The
/// diagonal j = k terms are included. Within a degenerate H0 eigenspace the
/// result depends on the eigenbasis the solver returns.
pub fn transition_rate(mode: &KLMode, h0: &Operator, v: &Operator, tau: f64) -> Result<f64> {
    if h0.dim() != v.dim() {
        return Err(Error::DimensionMismatch { expected: h0.dim(), got: v.dim() });
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidInput(format!("horizon {tau} must be positive")));
    }
    let tol = Tolerances::default();
    let eig = HermitianEigen::new(h0, tol.hermitian)?;
    if !v.is_hermitian(tol.hermitian) {
        return Err(Error::InvalidOperator("noise coupling V is not Hermitian".into()));
    }
    let v_eigen = eig.vectors.adjoint() * v.matrix() * &eig.vectors;
    let amp = mode.eigenvalue.sqrt();
    let nodes = mode.grid.nodes();
    let d = h0.dim();
    let mut total = 0.0;
    for j in 0..d {
        for k in 0..d {
            let coupling = v_eigen[(j, k)].norm_sqr();
            if coupling == 0.0 {
                continue;
            }
            let omega = eig.values[j] - eig.values[k];
            let integral = amp * oscillatory_integral(nodes, &mode.values, omega);
            total += coupling * integral.norm_sqr() / tau;
        }
    }
    Ok(total)
}

/// int g(t) e^{i omega t} dt for g linear between uniformly spaced nodes.
fn oscillatory_integral(nodes: &[f64], values: &[f64], omega: f64) -> C64 {
    let h = nodes[1] - nodes[0];
    let theta = omega * h;
    // per cell, int_0^1 e^{i theta u} du and int_0^1 u e^{i theta u} du
    let (i0, i1) = if theta.abs() < 1e-3 {
        let t2 = theta * theta;
        (
            C64::new(1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0),
            C64::new(0.5 - t2 / 8.0, theta / 3.0 - theta * t2 / 30.0),
        )
    } else {
        let e = C64::from_polar(1.0, theta);
        let i = C64::I;
        ((e - 1.0) / (i * theta), e / (i * theta) + (e - 1.0) / (theta * theta))
    };
    let left = (i0 - i1) * h;
    let right = i1 * h;
    let mut acc = C64::ZERO;
    for k in 0..nodes.len() - 1 {
        let phase = C64::from_polar(1.0, omega * nodes[k]);
        acc += phase * (left * values[k] + right * values[k + 1]);
    }
    acc
}

/// Per-mode entry of the selection table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub index: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub selected: bool,
}

/// The S modes with the largest transition rates.
#[derive(Debug, Clone)]
pub struct TruncatedKLE {
    /// Retained modes, descending in rate.
    pub modes: Vec<KLMode>,
    pub rates: Vec<f64>,
    /// One row per candidate mode, in eigenvalue order.
    pub selection_report: Vec<ModeReport>,
}

impl TruncatedKLE {
    pub fn stochastic_dim(&self) -> usize {
        self.modes.len()
    }
}

/// Keep the `s` modes with the largest rates. Ties go to the larger eigenvalue,
/// then the lower mode index.
pub fn select_modes(modes: &[KLMode], rates: &[f64], s: usize) -> Result<TruncatedKLE> {
    if rates.len() != modes.len() {
        return Err(Error::InvalidInput(format!(
            "{} rates supplied for {} modes",
            rates.len(),
            modes.len()
        )));
    }
    if s == 0 || s > modes.len() {
        return Err(Error::InsufficientModes { requested: s, available: modes.len() });
    }
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| {
        rates[b]
            .total_cmp(&rates[a])
            .then(modes[b].eigenvalue.total_cmp(&modes[a].eigenvalue))
            .then(modes[a].index.cmp(&modes[b].index))
    });
    order.truncate(s);
    let selection_report = modes
        .iter()
        .enumerate()
        .map(|(k, m)| ModeReport {
            index: m.index,
            lambda: m.eigenvalue,
            gamma: rates[k],
            selected: order.contains(&k),
        })
        .collect();
    Ok(TruncatedKLE {
        modes: order.iter().map(|&k| modes[k].clone()).collect(),
        rates: order.iter().map(|&k| rates[k]).collect(),
        selection_report,
    })
}

/// sum_n lambda_n g_n(t_i) g_n(t_j) over the grid shared by `modes`.
pub fn reconstruct_covariance(modes: &[KLMode]) -> Result<DMatrix<f64>> {
    let Some(first) = modes.first() else {
        return Err(Error::InvalidInput("no modes to reconstruct from".into()));
    };
    let n = first.values.len();
    if modes.iter().any(|m| !Arc::ptr_eq(&m.grid, &first.grid) && *m.grid != *first.grid) {
        return Err(Error::InvalidInput("modes live on different grids".into()));
    }
    let mut out = DMatrix::<f64>::zeros(n, n);
    for m in modes {
        for i in 0..n {
            let gi = m.eigenvalue * m.values[i];
            for j in 0..n {
                out[(i, j)] += gi * m.values[j];
            }
        }
    }
    Ok(out)
}

/// Settings for [`build_truncated_kle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KleSettings {
    pub grid_size: usize,
    /// Candidate modes examined for selection; `None` means max(4 S, 12).
    pub candidate_modes: Option<usize>,
    pub stochastic_dim: usize,
    pub rule: NystromRule,
}

impl Default for KleSettings {
    fn default() -> Self {
        Self { grid_size: 400, candidate_modes: None, stochastic_dim: 1, rule: NystromRule::CuspCorrected }
    }
}

impl KleSettings {
    pub fn candidates(&self) -> usize {
        self.candidate_modes
            .unwrap_or_else(|| (4 * self.stochastic_dim).max(12))
            .min(self.grid_size)
    }
}

/// Solve, rate, and select in one go. Returns the selection together with the
/// full Fredholm solution for reporting.
pub fn build_truncated_kle(
    kernel: &CorrelationKernel,
    h0: &Operator,
    v: &Operator,
    tau: f64,
    settings: &KleSettings,
) -> Result<(TruncatedKLE, FredholmSolution)> {
    let grid = QuadratureGrid::trapezoid(tau, settings.grid_size)?;
    let solution = solve_fredholm_with(kernel, grid, settings.candidates(), settings.rule)?;
    let rates = solution
        .modes
        .iter()
        .map(|m| transition_rate(m, h0, v, tau))
        .collect::<Result<Vec<_>>>()?;
    let kle = select_modes(&solution.modes, &rates, settings.stochastic_dim)?;
    Ok((kle, solution))
}

/// Omega(t) = sum_n sqrt(lambda_n) g_n(t) xi_n at the requested times.
pub fn sample_from_kle(
    modes: &[KLMode],
    kernel: &CorrelationKernel,
    times: &[f64],
    xi: &[f64],
) -> Result<Vec<f64>> {
    if xi.len() != modes.len() {
        return Err(Error::InvalidInput(format!(
            "{} standard normals for {} modes",
            xi.len(),
            modes.len()
        )));
    }
    let table = ModeTable::new(modes, kernel, times)?;
    Ok((0..times.len()).map(|i| table.amplitudes(i).iter().zip(xi).map(|(a, x)| a * x).sum()).collect())
}

/// sqrt(lambda_n) g_n(t_i) tabulated for a fixed list of times. Null modes
/// (eigenvalue at or below the degeneracy threshold) tabulate as zero.
#[derive(Debug, Clone)]
pub struct ModeTable {
    n_modes: usize,
    data: Vec<f64>,
}

impl ModeTable {
    pub fn new(modes: &[KLMode], kernel: &CorrelationKernel, times: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(times.len() * modes.len());
        for &t in times {
            for m in modes {
                // a null mode carries no variance and has no stable extension
                let amp = if m.eigenvalue <= NULL_FRACTION * m.lambda_max {
                    0.0
                } else {
                    m.eigenvalue.sqrt() * evaluate_mode(m, kernel, t)?
                };
                data.push(amp);
            }
        }
        Ok(Self { n_modes: modes.len(), data })
    }

    pub fn amplitudes(&self, time_index: usize) -> &[f64] {
        &self.data[time_index * self.n_modes..(time_index + 1) * self.n_modes]
    }
}
