//! Monte Carlo reference: sample noise paths, propagate each trajectory exactly
//! through piecewise-constant unitaries, and average.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::CorrelationKernel;
use crate::kle::{ModeTable, TruncatedKLE};
use crate::model::StochasticModel;
use crate::operator::{dense, DensityMatrix, HermitianEigen, Operator, Tolerances, C64};

/// How noise realisations are drawn.
#[derive(Debug, Clone)]
pub enum Sampler {
    /// Exact AR(1) recursion for the Ornstein-Uhlenbeck kernel.
    ExactOu,
    /// Omega(t) = sum_n sqrt(lambda_n) g_n(t) xi_n over the retained modes.
    TruncatedKle(Arc<TruncatedKLE>),
}

#[derive(Debug, Clone)]
pub struct MCConfig {
    pub n_traj: usize,
    /// Propagation step; at most horizon / 100.
    pub dt: f64,
    pub seed: u64,
    pub sampler: Sampler,
    /// Trajectories between convergence checks.
    pub batch: usize,
    /// Stop once the largest observable standard error falls to this.
    pub stderr_target: f64,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
}

impl MCConfig {
    pub fn new(n_traj: usize, dt: f64, seed: u64) -> Self {
        Self { n_traj, dt, seed, sampler: Sampler::ExactOu, batch: 500, stderr_target: 5e-3, workers: 0 }
    }

    fn validate(&self, horizon: f64) -> Result<()> {
        if self.n_traj < 2 {
            return Err(Error::InvalidInput(format!("n_traj = {} must be at least 2", self.n_traj)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= horizon / 100.0 * (1.0 + 1e-12)) {
            return Err(Error::InvalidInput(format!(
                "dt = {} must be positive and at most horizon / 100 = {}",
                self.dt,
                horizon / 100.0
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidInput("batch must be positive".into()));
        }
        if !(self.stderr_target.is_finite() && self.stderr_target >= 0.0) {
            return Err(Error::InvalidInput(format!("stderr target {} is invalid", self.stderr_target)));
        }
        Ok(())
    }
}

/// Noise values at ascending times.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Exact discrete-time OU sample: stationary start, then
/// Omega_{k+1} = r Omega_k + alpha sqrt(1 - r^2) z_k with r = exp(-dt_k / tau_c).
pub fn sample_ou_path<R: rand::Rng + ?Sized>(
    kernel: &CorrelationKernel,
    times: &[f64],
    rng: &mut R,
) -> Result<NoisePath> {
    let CorrelationKernel::OrnsteinUhlenbeck { alpha, tau_c } = *kernel else {
        return Err(Error::InvalidInput("exact sampling needs an Ornstein-Uhlenbeck kernel".into()));
    };
    if times.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::InvalidInput("sample times must be strictly increasing".into()));
    }
    let mut values = Vec::with_capacity(times.len());
    fill_ou(alpha, tau_c, times, rng, &mut values);
    Ok(NoisePath { times: times.to_vec(), values })
}

fn fill_ou<R: rand::Rng + ?Sized>(alpha: f64, tau_c: f64, times: &[f64], rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    if times.is_empty() {
        return;
    }
    let z: f64 = StandardNormal.sample(rng);
    let mut x = alpha * z;
    out.push(x);
    for w in times.windows(2) {
        let r = (-(w[1] - w[0]) / tau_c).exp();
        let z: f64 = StandardNormal.sample(rng);
        x = r * x + alpha * (1.0 - r * r).sqrt() * z;
        out.push(x);
    }
}

/// Per-step data shared by every trajectory: the rotating-frame potential at the
/// step midpoint, pre-factored for fast exponentiation.
#[derive(Debug, Clone)]
enum StepGenerator {
    /// V~ = v0 I + |v| (n . sigma); the identity part only contributes a phase.
    Qubit { norm: f64, axis: [f64; 3] },
    General { eigen: HermitianEigen },
}

impl StepGenerator {
    fn new(v: &Operator, tol: &Tolerances) -> Result<Self> {
        if v.dim() == 2 {
            let vx = v.get(0, 1).re;
            let vy = -v.get(0, 1).im;
            let vz = 0.5 * (v.get(0, 0).re - v.get(1, 1).re);
            let norm = (vx * vx + vy * vy + vz * vz).sqrt();
            let axis = if norm > 0.0 { [vx / norm, vy / norm, vz / norm] } else { [0.0, 0.0, 1.0] };
            Ok(Self::Qubit { norm, axis })
        } else {
            Ok(Self::General { eigen: HermitianEigen::new(v, tol.hermitian)? })
        }
    }

    /// exp(-i theta V~) up to a global phase, row-major.
    fn unitary(&self, theta: f64, out: &mut [C64]) {
        match self {
            Self::Qubit { norm, axis } => {
                let (s, c) = (theta * norm).sin_cos();
                let [nx, ny, nz] = *axis;
                // cos I - i sin (n . sigma)
                out[0] = C64::new(c, -s * nz);
                out[1] = C64::new(-s * ny, -s * nx);
                out[2] = C64::new(s * ny, -s * nx);
                out[3] = C64::new(c, s * nz);
            }
            Self::General { eigen } => {
                let u = eigen.map(|e| C64::from_polar(1.0, -theta * e));
                out.copy_from_slice(&u.to_row_major());
            }
        }
    }
}

/// Rotating-frame density matrices at every path time, stepping with the exact
/// unitary of the midpoint generator: rho <- U rho U^dagger with
/// U = exp(-i Omega_mid V~(t_mid) dt) and Omega_mid the average of the endpoints.
pub fn propagate_trajectory(
    model: &StochasticModel,
    path: &NoisePath,
    rho0: &DensityMatrix,
) -> Result<Vec<Operator>> {
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: rho0.dim() });
    }
    if path.times.len() != path.values.len() || path.times.is_empty() {
        return Err(Error::InvalidInput("noise path needs matching, non-empty times and values".into()));
    }
    let tol = Tolerances::default();
    let d = model.dim();
    let mut rho = rho0.operator().to_row_major();
    let mut u = vec![C64::ZERO; d * d];
    let mut next = vec![C64::ZERO; d * d];
    let mut out = Vec::with_capacity(path.times.len());
    out.push(rho0.operator().clone());
    for k in 0..path.times.len() - 1 {
        let (t0, t1) = (path.times[k], path.times[k + 1]);
        let generator = StepGenerator::new(&model.frame().potential(0.5 * (t0 + t1)), &tol)?;
        let omega = 0.5 * (path.values[k] + path.values[k + 1]);
        generator.unitary(omega * (t1 - t0), &mut u);
        dense::conjugate_into(&u, &rho, &mut next, d);
        std::mem::swap(&mut rho, &mut next);
        out.push(Operator::from_row_slice(d, &rho)?);
    }
    Ok(out)
}

/// Trajectory-averaged result on the output grid (Schrodinger picture).
#[derive(Debug, Clone)]
pub struct MCEnsemble {
    pub times: Vec<f64>,
    pub mean_rho: Vec<DensityMatrix>,
    pub obs_mean: Vec<f64>,
    pub stderr_obs: Vec<f64>,
    pub n_used: usize,
    /// Whether the stderr target was met before `n_traj` ran out.
    pub converged: bool,
}

impl MCEnsemble {
    pub fn max_stderr(&self) -> f64 {
        self.stderr_obs.iter().copied().fold(0.0, f64::max)
    }
}

/// Shared, trajectory-independent propagation data.
struct Plan {
    dim: usize,
    /// Propagation nodes; output times are a subset.
    nodes: Vec<f64>,
    /// Node index of each output time.
    output_nodes: Vec<usize>,
    generators: Vec<StepGenerator>,
    /// U0^dagger A U0 at each output time, row-major.
    rotated_obs: Vec<Vec<C64>>,
    /// KLE amplitudes at the nodes when sampling from a truncated expansion.
    mode_table: Option<ModeTable>,
}

fn build_plan(model: &StochasticModel, obs: &Operator, config: &MCConfig, t_grid: &[f64]) -> Result<Plan> {
    let tau = model.horizon();
    if t_grid.first() != Some(&0.0) {
        return Err(Error::InvalidInput("output grid must start at t = 0".into()));
    }
    if t_grid.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) || *t_grid.last().unwrap() > tau * (1.0 + 1e-12) {
        return Err(Error::InvalidInput("output grid must increase within [0, horizon]".into()));
    }
    let mut nodes = vec![0.0];
    let mut output_nodes = vec![0];
    for w in t_grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = ((b - a) / config.dt - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for k in 1..n {
            nodes.push(a + k as f64 * h);
        }
        nodes.push(b);
        output_nodes.push(nodes.len() - 1);
    }
    let tol = Tolerances::default();
    let generators = nodes
        .windows(2)
        .map(|w| StepGenerator::new(&model.frame().potential(0.5 * (w[0] + w[1])), &tol))
        .collect::<Result<Vec<_>>>()?;
    let rotated_obs = t_grid.iter().map(|&t| model.frame().to_rotating(obs, t).to_row_major()).collect();
    let mode_table = match &config.sampler {
        Sampler::ExactOu => {
            if !matches!(model.kernel(), CorrelationKernel::OrnsteinUhlenbeck { .. }) {
                return Err(Error::InvalidInput(
                    "exact OU sampling needs an Ornstein-Uhlenbeck kernel; use the KLE sampler".into(),
                ));
            }
            None
        }
        Sampler::TruncatedKle(kle) => Some(ModeTable::new(&kle.modes, model.kernel(), &nodes)?),
    };
    Ok(Plan { dim: model.dim(), nodes, output_nodes, generators, rotated_obs, mode_table })
}

/// Outputs of one trajectory: rotating-frame rho and tr(A rho) at each output time.
struct Trajectory {
    rho: Vec<C64>,
    obs: Vec<f64>,
}

fn run_trajectory(plan: &Plan, model: &StochasticModel, config: &MCConfig, rho0: &[C64], index: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let mut path = Vec::with_capacity(plan.nodes.len());
    match (&config.sampler, &plan.mode_table) {
        (Sampler::TruncatedKle(kle), Some(table)) => {
            let xi: Vec<f64> = (0..kle.modes.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            for i in 0..plan.nodes.len() {
                path.push(table.amplitudes(i).iter().zip(&xi).map(|(a, x)| a * x).sum());
            }
        }
        _ => {
            let CorrelationKernel::OrnsteinUhlenbeck { alpha, tau_c } = *model.kernel() else {
                unreachable!("checked when planning")
            };
            fill_ou(alpha, tau_c, &plan.nodes, &mut rng, &mut path);
        }
    }

    let d = plan.dim;
    let dd = d * d;
    let n_out = plan.output_nodes.len();
    let mut out = Trajectory { rho: Vec::with_capacity(n_out * dd), obs: Vec::with_capacity(n_out) };
    let mut rho = rho0.to_vec();
    let mut next = vec![C64::ZERO; dd];
    let mut u = vec![C64::ZERO; dd];
    let record = |rho: &[C64], slot: usize, out: &mut Trajectory| {
        out.rho.extend_from_slice(rho);
        out.obs.push(dense::trace_product(&plan.rotated_obs[slot], rho, d).re);
    };
    record(&rho, 0, &mut out);
    let mut slot = 1;
    for (k, generator) in plan.generators.iter().enumerate() {
        let dt = plan.nodes[k + 1] - plan.nodes[k];
        let omega = 0.5 * (path[k] + path[k + 1]);
        generator.unitary(omega * dt, &mut u);
        dense::conjugate_into(&u, &rho, &mut next, d);
        std::mem::swap(&mut rho, &mut next);
        if slot < n_out && plan.output_nodes[slot] == k + 1 {
            record(&rho, slot, &mut out);
            slot += 1;
        }
    }
    out
}

/// Running statistics combined in a fixed order.
struct Accumulator {
    n: usize,
    rho_sum: Vec<C64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(n_out: usize, dd: usize) -> Self {
        Self { n: 0, rho_sum: vec![C64::ZERO; n_out * dd], mean: vec![0.0; n_out], m2: vec![0.0; n_out] }
    }

    fn absorb(&mut self, batch: &[Trajectory]) {
        let nb = batch.len();
        let rho_sum = pairwise_sum(batch, &|t: &Trajectory| t.rho.clone());
        for (acc, x) in self.rho_sum.iter_mut().zip(&rho_sum) {
            *acc += x;
        }
        let obs_sum = pairwise_sum(batch, &|t: &Trajectory| t.obs.clone());
        let batch_mean: Vec<f64> = obs_sum.iter().map(|s| s / nb as f64).collect();
        let centred = pairwise_sum(batch, &|t: &Trajectory| {
            t.obs.iter().zip(&batch_mean).map(|(x, m)| (x - m) * (x - m)).collect::<Vec<f64>>()
        });
        // Chan et al. merge of (n, mean, M2)
        let (na, nbf) = (self.n as f64, nb as f64);
        let n = na + nbf;
        for i in 0..self.mean.len() {
            let delta = batch_mean[i] - self.mean[i];
            self.mean[i] += delta * nbf / n;
            self.m2[i] += centred[i] + delta * delta * na * nbf / n;
        }
        self.n += nb;
    }

    fn stderr(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|m2| (m2.max(0.0) / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Sum per-trajectory vectors by recursive halving in index order.
fn pairwise_sum<T, V>(items: &[T], get: &dyn Fn(&T) -> Vec<V>) -> Vec<V>
where
    V: Copy + std::ops::AddAssign,
{
    if items.len() == 1 {
        return get(&items[0]);
    }
    let mid = items.len() / 2;
    let mut left = pairwise_sum(&items[..mid], get);
    let right = pairwise_sum(&items[mid..], get);
    for (a, b) in left.iter_mut().zip(right) {
        *a += b;
    }
    left
}

/// Average trajectories in batches until the largest standard error of `obs`
/// over the output grid reaches the target or `n_traj` is used up. Trajectory k
/// draws from ChaCha stream k of the seed, so results do not depend on the
/// worker count.
pub fn mc_average(
    model: &StochasticModel,
    rho0: &DensityMatrix,
    obs: &Operator,
    config: &MCConfig,
    t_grid: &[f64],
) -> Result<MCEnsemble> {
    config.validate(model.horizon())?;
    if rho0.dim() != model.dim() || obs.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: rho0.dim().max(obs.dim()) });
    }
    let plan = build_plan(model, obs, config, t_grid)?;
    let rho0_flat = rho0.operator().to_row_major();
    let dd = plan.dim * plan.dim;
    let mut acc = Accumulator::new(t_grid.len(), dd);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;

    let mut converged = false;
    while acc.n < config.n_traj {
        // a lone trajectory would carry no variance estimate
        let mut end = (acc.n + config.batch).min(config.n_traj);
        if end - acc.n < 2 && acc.n == 0 {
            end = 2.min(config.n_traj);
        }
        let batch: Vec<Trajectory> = pool.install(|| {
            (acc.n..end)
                .into_par_iter()
                .map(|k| run_trajectory(&plan, model, config, &rho0_flat, k as u64))
                .collect()
        });
        acc.absorb(&batch);
        if acc.n >= 2 && acc.stderr().iter().all(|&s| s <= config.stderr_target) {
            converged = true;
            break;
        }
    }

    let tol = Tolerances::default();
    let n = acc.n as f64;
    let mut mean_rho = Vec::with_capacity(t_grid.len());
    for (slot, &t) in t_grid.iter().enumerate() {
        let block: Vec<C64> = acc.rho_sum[slot * dd..(slot + 1) * dd].iter().map(|z| z / n).collect();
        let rotated = Operator::from_row_slice(plan.dim, &block)?;
        let lab = model.frame().to_lab(&rotated, t);
        let rho = DensityMatrix::new_with(lab, &Tolerances { hermitian: 1e-10, ..tol }).map_err(|e| {
            Error::NumericalConsistency(format!("ensemble mean at t = {t} is not a valid state: {e}"))
        })?;
        mean_rho.push(rho);
    }
    Ok(MCEnsemble {
        times: t_grid.to_vec(),
        mean_rho,
        obs_mean: acc.mean.clone(),
        stderr_obs: acc.stderr(),
        n_used: acc.n,
        converged,
    })
}
