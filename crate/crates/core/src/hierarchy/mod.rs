//! Intrusive polynomial chaos hierarchy for the rotating-frame density matrix.
//!
//! With rho~(t; xi) = sum_m phi_m(t) Phi_m(xi), Galerkin projection of
//! i d rho~/dt = sum_n sqrt(lambda_n) g_n(t) xi_n [V~(t), rho~] gives
//!
//!   d phi_m/dt = -i sum_n sqrt(lambda_n) g_n(t) sum_l G_{m n l} [V~(t), phi_l].

pub mod basis;
pub mod couplings;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kle::{evaluate_mode, ModeTable, TruncatedKLE};
use crate::model::StochasticModel;
use crate::operator::{dense, DensityMatrix, Operator, C64};

pub use basis::{enumerate_indices, hierarchy_size, MultiIndex, MultiIndexSet};
pub use couplings::{build_couplings, Coupling, GalerkinCouplings};

/// Operator-valued chaos coefficients phi_m at one time, stored row-major and
/// back to back.
#[derive(Debug, Clone)]
pub struct PCEState {
    basis: Arc<MultiIndexSet>,
    dim: usize,
    coeffs: Vec<C64>,
    time: f64,
}

impl PCEState {
    pub fn basis(&self) -> &Arc<MultiIndexSet> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn raw(&self) -> &[C64] {
        &self.coeffs
    }

    fn block(&self, m: usize) -> &[C64] {
        let dd = self.dim * self.dim;
        &self.coeffs[m * dd..(m + 1) * dd]
    }

    pub fn coefficient(&self, m: usize) -> Operator {
        Operator::from_row_slice(self.dim, self.block(m)).expect("block is d x d")
    }

    /// max_m |tr phi_m - delta_{m0}|
    pub fn trace_error(&self) -> f64 {
        (0..self.len())
            .map(|m| {
                let target = if m == 0 { C64::ONE } else { C64::ZERO };
                (dense::trace(self.block(m), self.dim) - target).norm()
            })
            .fold(0.0, f64::max)
    }

    /// max_m ||phi_m - phi_m^dagger||_F
    pub fn hermiticity_error(&self) -> f64 {
        (0..self.len())
            .map(|m| dense::antihermitian_norm(self.block(m), self.dim))
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// phi_0 = rho0 and every other coefficient zero, since rho(0) does not depend on xi.
pub fn initial_pce_state(rho0: &DensityMatrix, basis: Arc<MultiIndexSet>) -> PCEState {
    let dim = rho0.dim();
    let mut coeffs = vec![C64::ZERO; basis.len() * dim * dim];
    coeffs[..dim * dim].copy_from_slice(&rho0.operator().to_row_major());
    PCEState { basis, dim, coeffs, time: 0.0 }
}

fn check_compatible(basis: &MultiIndexSet, kle: &TruncatedKLE, couplings: &GalerkinCouplings) -> Result<()> {
    if couplings.basis_len() != basis.len() || couplings.stochastic_dim() != basis.stochastic_dim() {
        return Err(Error::BasisMismatch(format!(
            "couplings built for {} terms in {} modes, state has {} terms in {} modes",
            couplings.basis_len(),
            couplings.stochastic_dim(),
            basis.len(),
            basis.stochastic_dim()
        )));
    }
    if kle.stochastic_dim() != basis.stochastic_dim() {
        return Err(Error::BasisMismatch(format!(
            "KLE retains {} modes but the basis has stochastic dimension {}",
            kle.stochastic_dim(),
            basis.stochastic_dim()
        )));
    }
    Ok(())
}

/// Right-hand side of the hierarchy with V~(t) and the mode amplitudes given.
struct HierarchyRhs<'a> {
    couplings: &'a GalerkinCouplings,
    dim: usize,
}

impl HierarchyRhs<'_> {
    fn eval(&self, coeffs: &[C64], vt: &[C64], amps: &[f64], comm: &mut [C64], out: &mut [C64]) {
        let d = self.dim;
        let dd = d * d;
        for (src, dst) in coeffs.chunks_exact(dd).zip(comm.chunks_exact_mut(dd)) {
            dense::commutator_into(vt, src, dst, d);
        }
        for (m, dst) in out.chunks_exact_mut(dd).enumerate() {
            dst.fill(C64::ZERO);
            for c in self.couplings.partners(m) {
                let f = amps[c.mode] * c.weight;
                let src = &comm[c.partner * dd..(c.partner + 1) * dd];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += s * f;
                }
            }
            // multiply by -i
            for o in dst.iter_mut() {
                *o = C64::new(o.im, -o.re);
            }
        }
    }
}

/// d phi_m / dt for every m at time t.
pub fn hierarchy_rhs(
    state: &PCEState,
    t: f64,
    kle: &TruncatedKLE,
    model: &StochasticModel,
    couplings: &GalerkinCouplings,
) -> Result<Vec<Operator>> {
    check_compatible(&state.basis, kle, couplings)?;
    if state.dim != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: state.dim });
    }
    let amps = kle
        .modes
        .iter()
        .map(|m| Ok(m.eigenvalue.sqrt() * evaluate_mode(m, model.kernel(), t)?))
        .collect::<Result<Vec<f64>>>()?;
    let vt = model.frame().potential(t).to_row_major();
    let mut comm = vec![C64::ZERO; state.coeffs.len()];
    let mut out = vec![C64::ZERO; state.coeffs.len()];
    HierarchyRhs { couplings, dim: state.dim }.eval(&state.coeffs, &vt, &amps, &mut comm, &mut out);
    Ok((0..state.len())
        .map(|m| {
            let dd = state.dim * state.dim;
            Operator::from_row_slice(state.dim, &out[m * dd..(m + 1) * dd]).expect("d x d block")
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationSettings {
    /// Largest RK4 step; `None` means horizon / 2000.
    pub dt_max: Option<f64>,
    /// Trace and hermiticity tolerance; propagation fails beyond 100x this.
    pub invariant_tol: f64,
}

impl Default for PropagationSettings {
    fn default() -> Self {
        Self { dt_max: None, invariant_tol: 1e-8 }
    }
}

/// Integrate the hierarchy with classic fixed-step RK4, recording the state at
/// every point of `t_grid` (the first point must be the state's time).
pub fn propagate(
    state: &PCEState,
    model: &StochasticModel,
    kle: &TruncatedKLE,
    couplings: &GalerkinCouplings,
    t_grid: &[f64],
    settings: &PropagationSettings,
) -> Result<Vec<PCEState>> {
    check_compatible(&state.basis, kle, couplings)?;
    if state.dim != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: state.dim });
    }
    let Some(&start) = t_grid.first() else {
        return Err(Error::InvalidInput("empty output grid".into()));
    };
    if (start - state.time).abs() > 1e-12 * model.horizon().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "output grid starts at {start} but the state is at t = {}",
            state.time
        )));
    }
    if t_grid.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::InvalidInput("output grid must be strictly increasing".into()));
    }
    let dt_max = settings.dt_max.unwrap_or(model.horizon() / 2000.0);
    if !(dt_max.is_finite() && dt_max > 0.0) {
        return Err(Error::InvalidInput(format!("dt_max = {dt_max} must be positive")));
    }

    // stage times: step s uses entries 2s, 2s+1, 2s+2
    let mut stage_times = Vec::new();
    let mut steps_per_interval = Vec::with_capacity(t_grid.len().saturating_sub(1));
    for w in t_grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = ((b - a) / dt_max - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for k in 0..n {
            stage_times.push(a + k as f64 * h);
            stage_times.push(a + (k as f64 + 0.5) * h);
        }
        steps_per_interval.push(n);
    }
    stage_times.push(*t_grid.last().unwrap());

    let amps = ModeTable::new(&kle.modes, model.kernel(), &stage_times)?;
    let d = state.dim;
    let dd = d * d;
    let potentials: Vec<C64> = stage_times
        .iter()
        .flat_map(|&t| model.frame().potential(t).to_row_major())
        .collect();
    let vt = |i: usize| &potentials[i * dd..(i + 1) * dd];

    let rhs = HierarchyRhs { couplings, dim: d };
    let len = state.coeffs.len();
    let mut y = state.coeffs.clone();
    let mut comm = vec![C64::ZERO; len];
    let (mut k1, mut k2, mut k3, mut k4) =
        (vec![C64::ZERO; len], vec![C64::ZERO; len], vec![C64::ZERO; len], vec![C64::ZERO; len]);
    let mut tmp = vec![C64::ZERO; len];

    let mut records = Vec::with_capacity(t_grid.len());
    records.push(state.clone());
    let mut step = 0usize;
    for (interval, &n) in steps_per_interval.iter().enumerate() {
        let (a, b) = (t_grid[interval], t_grid[interval + 1]);
        let h = (b - a) / n as f64;
        for _ in 0..n {
            let (i0, i1, i2) = (2 * step, 2 * step + 1, 2 * step + 2);
            rhs.eval(&y, vt(i0), amps.amplitudes(i0), &mut comm, &mut k1);
            axpy_into(&y, &k1, 0.5 * h, &mut tmp);
            rhs.eval(&tmp, vt(i1), amps.amplitudes(i1), &mut comm, &mut k2);
            axpy_into(&y, &k2, 0.5 * h, &mut tmp);
            rhs.eval(&tmp, vt(i1), amps.amplitudes(i1), &mut comm, &mut k3);
            axpy_into(&y, &k3, h, &mut tmp);
            rhs.eval(&tmp, vt(i2), amps.amplitudes(i2), &mut comm, &mut k4);
            let sixth = h / 6.0;
            for i in 0..len {
                y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * sixth;
            }
            step += 1;
        }
        let next = PCEState { basis: Arc::clone(&state.basis), dim: d, coeffs: y.clone(), time: b };
        check_invariants(&next, settings.invariant_tol)?;
        records.push(next);
    }
    Ok(records)
}

fn axpy_into(y: &[C64], k: &[C64], h: f64, out: &mut [C64]) {
    for ((o, a), b) in out.iter_mut().zip(y).zip(k) {
        *o = a + b * h;
    }
}

fn check_invariants(state: &PCEState, tol: f64) -> Result<()> {
    let limit = 100.0 * tol;
    if !state.is_finite() {
        return Err(Error::PropagationDiverged { time: state.time, detail: "non-finite coefficient".into() });
    }
    let trace = state.trace_error();
    if trace > limit {
        return Err(Error::PropagationDiverged {
            time: state.time,
            detail: format!("trace drift {trace:e}"),
        });
    }
    let herm = state.hermiticity_error();
    if herm > limit {
        return Err(Error::PropagationDiverged {
            time: state.time,
            detail: format!("hermiticity drift {herm:e}"),
        });
    }
    Ok(())
}

/// Stochastic mean E[rho(t)] = phi_0, returned in the Schrodinger picture.
/// Positivity is not enforced; see [`DensityMatrix::min_eigenvalue`].
pub fn mean_state(state: &PCEState, model: &StochasticModel) -> Result<DensityMatrix> {
    let phi0 = state.coefficient(0);
    let deviation = (phi0.trace() - C64::ONE).norm();
    if deviation > 1e-6 {
        return Err(Error::CorruptedState { deviation });
    }
    Ok(DensityMatrix::new_unchecked(model.frame().to_lab(&phi0, state.time)))
}

/// Var_xi[tr(A rho(t; xi))] = sum_{m != 0} E[Phi_m^2] tr(A phi_m)^2.
pub fn observable_variance(state: &PCEState, model: &StochasticModel, obs: &Operator) -> Result<f64> {
    if obs.dim() != state.dim {
        return Err(Error::DimensionMismatch { expected: state.dim, got: obs.dim() });
    }
    // tr(A U phi U^dagger) = tr(U^dagger A U phi)
    let rotated = model.frame().to_rotating(obs, state.time).to_row_major();
    let mut var = 0.0;
    for (m, index) in state.basis.indices().iter().enumerate().skip(1) {
        let value = dense::trace_product(&rotated, state.block(m), state.dim).re;
        var += index.norm_sq() * value * value;
    }
    Ok(var)
}

/// Per-time diagnostics of a propagated state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PceRecord {
    pub t: f64,
    pub obs_mean: f64,
    pub obs_variance: f64,
    pub trace_err: f64,
    pub herm_err: f64,
    pub min_eig: f64,
}

pub fn summarize(state: &PCEState, model: &StochasticModel, obs: &Operator) -> Result<PceRecord> {
    let rho = mean_state(state, model)?;
    // the truncated mean is Hermitian only to propagation accuracy
    let obs_mean = crate::operator::trace_of_product(obs, rho.operator()).re;
    Ok(PceRecord {
        t: state.time,
        obs_mean,
        obs_variance: observable_variance(state, model, obs)?,
        trace_err: state.trace_error(),
        herm_err: state.hermiticity_error(),
        min_eig: rho.min_eigenvalue(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{CorrelationKernel, KernelTable};
    use crate::kle::{select_modes, solve_fredholm};

    fn plus_x() -> DensityMatrix {
        DensityMatrix::pure(&[C64::ONE, C64::ONE]).unwrap()
    }

    fn constant_kernel_setup(c: f64, h0: Operator) -> (StochasticModel, TruncatedKLE) {
        let kernel = CorrelationKernel::Tabulated(KernelTable::new(1.0, vec![c, c]).unwrap());
        let model = StochasticModel::new(h0, Operator::pauli_z(), kernel.clone(), 1.0).unwrap();
        let modes = solve_fredholm(&kernel, 1.0, 50, 1).unwrap();
        let kle = select_modes(&modes, &[1.0], 1).unwrap();
        (model, kle)
    }

    #[test]
    fn initial_state_layout() {
        let basis = Arc::new(enumerate_indices(2, 3).unwrap());
        let s = initial_pce_state(&plus_x(), Arc::clone(&basis));
        assert_eq!(s.raw().len(), basis.len() * 4);
        assert!(s.coefficient(0).max_abs_diff(plus_x().operator()) < 1e-15);
        for m in 1..s.len() {
            assert_eq!(s.coefficient(m).frobenius_norm(), 0.0);
        }
        let (model, _) = constant_kernel_setup(1.0, Operator::pauli_x());
        let rho = mean_state(&s, &model).unwrap();
        assert!(rho.operator().max_abs_diff(plus_x().operator()) < 1e-15);
        assert_eq!(observable_variance(&s, &model, &Operator::pauli_x()).unwrap(), 0.0);
    }

    #[test]
    fn zero_state_has_zero_derivative() {
        let (model, kle) = constant_kernel_setup(1.0, Operator::pauli_x());
        let basis = Arc::new(enumerate_indices(1, 3).unwrap());
        let couplings = build_couplings(&basis);
        let mut s = initial_pce_state(&plus_x(), basis);
        s.coeffs.iter_mut().for_each(|z| *z = C64::ZERO);
        let d = hierarchy_rhs(&s, 0.3, &kle, &model, &couplings).unwrap();
        assert!(d.iter().all(|op| op.frobenius_norm() == 0.0));
    }

    #[test]
    fn order_zero_freezes_the_mean() {
        let (model, kle) = constant_kernel_setup(4.0, Operator::pauli_x());
        let basis = Arc::new(enumerate_indices(1, 0).unwrap());
        let couplings = build_couplings(&basis);
        let s0 = initial_pce_state(&plus_x(), basis);
        let d = hierarchy_rhs(&s0, 0.5, &kle, &model, &couplings).unwrap();
        assert_eq!(d[0].frobenius_norm(), 0.0);
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let traj = propagate(&s0, &model, &kle, &couplings, &grid, &PropagationSettings::default()).unwrap();
        for s in &traj {
            assert!(s.coefficient(0).max_abs_diff(&s0.coefficient(0)) <= 1e-13);
        }
    }

    #[test]
    fn first_order_constant_mode_matches_closed_form() {
        // d phi0 = -i sqrt(c) [sz, phi1], d phi1 = -i sqrt(c) [sz, phi0] => <sx> = cos(2 sqrt(c) t)
        let c = 2.0;
        let (model, kle) = constant_kernel_setup(c, Operator::zeros(2));
        let basis = Arc::new(enumerate_indices(1, 1).unwrap());
        let couplings = build_couplings(&basis);
        let s0 = initial_pce_state(&plus_x(), basis);
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let traj = propagate(&s0, &model, &kle, &couplings, &grid, &PropagationSettings::default()).unwrap();
        for s in &traj {
            let rec = summarize(s, &model, &Operator::pauli_x()).unwrap();
            let expect = (2.0 * c.sqrt() * s.time()).cos();
            assert!((rec.obs_mean - expect).abs() < 1e-6, "t = {}: {} vs {expect}", s.time(), rec.obs_mean);
        }
    }

    #[test]
    fn mismatched_basis_is_rejected() {
        let (model, kle) = constant_kernel_setup(1.0, Operator::pauli_x());
        let basis = Arc::new(enumerate_indices(2, 2).unwrap());
        let couplings = build_couplings(&basis);
        let s0 = initial_pce_state(&plus_x(), basis);
        let r = hierarchy_rhs(&s0, 0.0, &kle, &model, &couplings);
        assert!(matches!(r, Err(Error::BasisMismatch(_))));
    }
}
