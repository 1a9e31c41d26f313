//! Subcommand drivers: build the model from a [`RunConfig`], run the solvers,
//! and write CSV files under an output prefix.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{NoiseSpec, RunConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::hierarchy::basis::enumerate_indices;
use crate::hierarchy::couplings::build_couplings;
use crate::hierarchy::{initial_pce_state, propagate, summarize, PceRecord, PropagationSettings};
use crate::kernel::{CorrelationKernel, KernelTable};
use crate::kle::{build_truncated_kle, evaluate_mode, FredholmSolution, KleSettings, NystromRule, TruncatedKLE};
use crate::model::StochasticModel;
use crate::montecarlo::{mc_average, MCConfig, MCEnsemble, Sampler};
use crate::operator::{DensityMatrix, Operator};
use crate::output::{CsvTable, Field, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Kle,
    Pce,
    Mc,
    Compare,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kle => "kle",
            Command::Pce => "pce",
            Command::Mc => "mc",
            Command::Compare => "compare",
            Command::Sweep => "sweep",
        }
    }
}

/// Everything derived from a config that the solvers share.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: RunConfig,
    pub model: StochasticModel,
    pub rho0: DensityMatrix,
    pub observable: Operator,
    pub times: Vec<f64>,
}

impl Problem {
    /// `base_dir` resolves relative kernel-table paths.
    pub fn new(config: RunConfig, base_dir: &Path) -> Result<Self> {
        let kernel = match &config.noise {
            NoiseSpec::OrnsteinUhlenbeck { alpha, tau_c } => CorrelationKernel::ornstein_uhlenbeck(*alpha, *tau_c)?,
            NoiseSpec::Table { path } => {
                let full = base_dir.join(path);
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    Error::InvalidInput(format!("cannot read kernel table {}: {e}", full.display()))
                })?;
                CorrelationKernel::Tabulated(KernelTable::parse(&text)?)
            }
        };
        let model = StochasticModel::with_tolerances(
            config.model.h0.build()?,
            config.model.v.build()?,
            kernel,
            config.model.horizon,
            &config.tolerances,
        )?;
        let rho0 = config.model.initial_state.build()?;
        let observable = config.observable.build()?;
        let times = config.output_times();
        Ok(Self { config, model, rho0, observable, times })
    }

    pub fn kle_settings(&self, stochastic_dim: usize) -> KleSettings {
        let k = &self.config.kle;
        KleSettings {
            grid_size: k.grid_size,
            candidate_modes: k.candidate_modes.map(|c| c.max(stochastic_dim)),
            stochastic_dim,
            rule: if k.cusp_correction { NystromRule::CuspCorrected } else { NystromRule::Trapezoid },
        }
    }

    pub fn kle(&self, stochastic_dim: usize) -> Result<(TruncatedKLE, FredholmSolution)> {
        build_truncated_kle(
            self.model.kernel(),
            self.model.h0(),
            self.model.v(),
            self.model.horizon(),
            &self.kle_settings(stochastic_dim),
        )
    }

    /// Propagate the hierarchy of order `order` over the output grid.
    pub fn pce(&self, kle: &TruncatedKLE, order: usize) -> Result<PceRun> {
        let start = Instant::now();
        let basis = Arc::new(enumerate_indices(kle.stochastic_dim(), order)?);
        let couplings = build_couplings(&basis);
        let state = initial_pce_state(&self.rho0, Arc::clone(&basis));
        let settings = PropagationSettings { dt_max: Some(self.config.pce_dt_max()), ..Default::default() };
        let states = propagate(&state, &self.model, kle, &couplings, &self.times, &settings)?;
        let records = states
            .iter()
            .map(|s| summarize(s, &self.model, &self.observable))
            .collect::<Result<Vec<_>>>()?;
        Ok(PceRun { records, n_equations: basis.len(), seconds: start.elapsed().as_secs_f64() })
    }

    pub fn mc_config(&self, kle: Option<&TruncatedKLE>) -> Result<MCConfig> {
        let m = &self.config.mc;
        let sampler = match m.sampler {
            SamplerKind::ExactOu => Sampler::ExactOu,
            SamplerKind::Kle => {
                let kle = kle.ok_or_else(|| Error::InvalidInput("kle sampler needs a truncated expansion".into()))?;
                Sampler::TruncatedKle(Arc::new(kle.clone()))
            }
        };
        Ok(MCConfig {
            n_traj: m.n_traj,
            dt: self.config.mc_dt(),
            seed: m.seed,
            sampler,
            batch: m.batch,
            stderr_target: m.stderr_target,
            workers: m.workers,
        })
    }

    pub fn mc(&self, kle: Option<&TruncatedKLE>) -> Result<McRun> {
        let config = self.mc_config(kle)?;
        let start = Instant::now();
        let ensemble = mc_average(&self.model, &self.rho0, &self.observable, &config, &self.times)?;
        Ok(McRun { ensemble, seconds: start.elapsed().as_secs_f64() })
    }
}

#[derive(Debug, Clone)]
pub struct PceRun {
    pub records: Vec<PceRecord>,
    pub n_equations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct McRun {
    pub ensemble: MCEnsemble,
    pub seconds: f64,
}

const BAND_FLOOR: f64 = 1e-12;

/// Joined PCE / MC comparison.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub pce: PceRun,
    pub mc: McRun,
    pub abs_diff: Vec<f64>,
    pub within_band: Vec<bool>,
}

impl Comparison {
    pub fn new(pce: PceRun, mc: McRun) -> Self {
        let (abs_diff, within_band) = pce
            .records
            .iter()
            .zip(mc.ensemble.obs_mean.iter().zip(&mc.ensemble.stderr_obs))
            .map(|(r, (m, se))| {
                let d = (r.obs_mean - m).abs();
                // floor for t = 0, where both sides are exact up to roundoff
                (d, d <= se + BAND_FLOOR)
            })
            .unzip();
        Self { pce, mc, abs_diff, within_band }
    }

    pub fn fraction_within(&self) -> f64 {
        self.within_band.iter().filter(|&&b| b).count() as f64 / self.within_band.len().max(1) as f64
    }

    /// max_t |pce - mc| / stderr; roundoff-level differences count as 0.
    pub fn max_normalized_diff(&self) -> f64 {
        self.abs_diff
            .iter()
            .zip(&self.mc.ensemble.stderr_obs)
            .map(|(d, se)| if *d <= BAND_FLOOR { 0.0 } else { d / se })
            .fold(0.0, f64::max)
    }
}

/// One point of a convergence sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub stochastic_dim: usize,
    pub order: usize,
    pub run: PceRun,
    pub max_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub reference_dim: usize,
    pub reference_order: usize,
    pub reference: PceRun,
    pub points: Vec<SweepPoint>,
}

impl Problem {
    /// Every (S, P) in dims x orders, plus the reference, run in parallel.
    pub fn sweep(&self) -> Result<Sweep> {
        let sw = &self.config.sweep;
        let reference_dim = sw.reference_dim.unwrap_or_else(|| *sw.dims.iter().max().expect("nonempty"));
        let reference_order = sw.reference_order.unwrap_or_else(|| *sw.orders.iter().max().expect("nonempty"));
        let mut dims: Vec<usize> = sw.dims.clone();
        dims.push(reference_dim);
        dims.sort_unstable();
        dims.dedup();
        let kles = dims
            .par_iter()
            .map(|&s| self.kle(s).map(|(k, _)| (s, k)))
            .collect::<Result<Vec<_>>>()?;
        let kle_for = |s: usize| &kles.iter().find(|(d, _)| *d == s).expect("solved").1;

        let mut grid: Vec<(usize, usize)> = Vec::new();
        for &s in &sw.dims {
            for &p in &sw.orders {
                grid.push((s, p));
            }
        }
        let mut jobs = grid.clone();
        if !jobs.contains(&(reference_dim, reference_order)) {
            jobs.push((reference_dim, reference_order));
        }
        let runs = jobs
            .par_iter()
            .map(|&(s, p)| self.pce(kle_for(s), p))
            .collect::<Result<Vec<_>>>()?;
        let reference_pos = jobs.iter().position(|&j| j == (reference_dim, reference_order)).expect("pushed");
        let reference = runs[reference_pos].clone();
        let points = grid
            .iter()
            .zip(&runs)
            .map(|(&(s, p), run)| {
                let max_deviation = run
                    .records
                    .iter()
                    .zip(&reference.records)
                    .map(|(a, b)| (a.obs_mean - b.obs_mean).abs())
                    .fold(0.0, f64::max);
                SweepPoint { stochastic_dim: s, order: p, run: run.clone(), max_deviation }
            })
            .collect();
        Ok(Sweep { reference_dim, reference_order, reference, points })
    }
}

/// Files written and status of a subcommand.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human-readable summary for stdout.
    pub summary: Vec<String>,
    /// Monte Carlo stopped before reaching its stderr target.
    pub unconverged: bool,
}

/// Run `command` and write its CSV files with names starting with `prefix`.
pub fn run(command: Command, problem: &Problem, prefix: &str) -> Result<Outcome> {
    let mut out = Outcome::default();
    let cfg = &problem.config;
    let s = cfg.kle.stochastic_dim;
    match command {
        Command::Kle => {
            let (kle, solution) = problem.kle(s)?;
            let mut modes = table(command, cfg, &["index", "lambda", "gamma", "selected"]);
            for r in &kle.selection_report {
                modes.push_row(&[(r.index + 1).into(), r.lambda.into(), r.gamma.into(), r.selected.into()]);
            }
            out.files.push(write(&modes, prefix, "kle_modes.csv")?);

            let mut columns = vec!["t".to_string()];
            columns.extend((1..=solution.modes.len()).map(|k| format!("g{k}")));
            let refs: Vec<&str> = columns.iter().map(String::as_str).collect();
            let mut funcs = table(command, cfg, &refs);
            for &t in &problem.times {
                let mut row = vec![Field::Float(t)];
                for m in &solution.modes {
                    row.push(evaluate_mode(m, problem.model.kernel(), t)?.into());
                }
                funcs.push_row(&row);
            }
            out.files.push(write(&funcs, prefix, "kle_eigenfunctions.csv")?);
            let picked: Vec<String> = kle.modes.iter().map(|m| (m.index + 1).to_string()).collect();
            out.summary.push(format!(
                "kle: {} candidate modes, selected [{}] by transition rate",
                solution.modes.len(),
                picked.join(", ")
            ));
        }
        Command::Pce => {
            let (kle, _) = problem.kle(s)?;
            let run = problem.pce(&kle, cfg.pce.order)?;
            out.files.push(write(&pce_table(command, cfg, &run), prefix, "pce.csv")?);
            out.summary.push(format!(
                "pce: S = {s}, P = {}, N = {} equations, {:.3} s",
                cfg.pce.order, run.n_equations, run.seconds
            ));
        }
        Command::Mc => {
            let kle = match cfg.mc.sampler {
                SamplerKind::Kle => Some(problem.kle(s)?.0),
                SamplerKind::ExactOu => None,
            };
            let run = problem.mc(kle.as_ref())?;
            out.files.push(write(&mc_table(command, cfg, &run), prefix, "mc.csv")?);
            out.unconverged = !run.ensemble.converged;
            out.summary.push(mc_summary(&run));
        }
        Command::Compare => {
            let (kle, _) = problem.kle(s)?;
            let pce = problem.pce(&kle, cfg.pce.order)?;
            let mc = problem.mc(Some(&kle))?;
            let cmp = Comparison::new(pce, mc);
            let mut joined =
                table(command, cfg, &["t", "pce_mean", "mc_mean", "mc_stderr", "abs_diff", "within_band"]);
            let e = &cmp.mc.ensemble;
            for (i, r) in cmp.pce.records.iter().enumerate() {
                joined.push_row(&[
                    r.t.into(),
                    r.obs_mean.into(),
                    e.obs_mean[i].into(),
                    e.stderr_obs[i].into(),
                    cmp.abs_diff[i].into(),
                    cmp.within_band[i].into(),
                ]);
            }
            out.files.push(write(&joined, prefix, "compare.csv")?);

            let mut summary = table(
                command,
                cfg,
                &[
                    "n_equations",
                    "n_traj",
                    "max_diff_over_stderr",
                    "fraction_within_band",
                    "mc_max_stderr",
                    "mc_converged",
                    "pce_seconds",
                    "mc_seconds",
                ],
            );
            summary.push_row(&[
                cmp.pce.n_equations.into(),
                e.n_used.into(),
                cmp.max_normalized_diff().into(),
                cmp.fraction_within().into(),
                e.max_stderr().into(),
                e.converged.into(),
                cmp.pce.seconds.into(),
                cmp.mc.seconds.into(),
            ]);
            out.files.push(write(&summary, prefix, "compare_summary.csv")?);
            out.unconverged = !e.converged;
            out.summary.push(format!(
                "compare: N = {}, trajectories = {}, max |diff|/stderr = {:.3}, within band {:.1}%, pce {:.3} s, mc {:.3} s",
                cmp.pce.n_equations,
                e.n_used,
                cmp.max_normalized_diff(),
                100.0 * cmp.fraction_within(),
                cmp.pce.seconds,
                cmp.mc.seconds
            ));
        }
        Command::Sweep => {
            let sweep = problem.sweep()?;
            let mut summary = table(
                command,
                cfg,
                &["stochastic_dim", "order", "n_equations", "max_deviation", "seconds"],
            );
            summary.meta("reference", format!("S = {}, P = {}", sweep.reference_dim, sweep.reference_order));
            for p in &sweep.points {
                let name = format!("sweep_S{}_P{}.csv", p.stochastic_dim, p.order);
                out.files.push(write(&pce_table(command, cfg, &p.run), prefix, &name)?);
                summary.push_row(&[
                    p.stochastic_dim.into(),
                    p.order.into(),
                    p.run.n_equations.into(),
                    p.max_deviation.into(),
                    p.run.seconds.into(),
                ]);
            }
            out.files.push(write(&summary, prefix, "sweep_summary.csv")?);
            out.summary.push(format!(
                "sweep: {} points against reference S = {}, P = {}",
                sweep.points.len(),
                sweep.reference_dim,
                sweep.reference_order
            ));
        }
    }
    Ok(out)
}

fn mc_summary(run: &McRun) -> String {
    let e = &run.ensemble;
    format!(
        "mc: {} trajectories, max stderr {:.2e}, {}, {:.3} s",
        e.n_used,
        e.max_stderr(),
        if e.converged { "converged" } else { "NOT converged" },
        run.seconds
    )
}

fn table(command: Command, cfg: &RunConfig, columns: &[&str]) -> CsvTable {
    let mut t = CsvTable::new(columns);
    t.meta("qpce", VERSION)
        .meta("command", command.name())
        .meta("seed", cfg.mc.seed)
        .meta("frame", "expectation values in the laboratory frame")
        .meta("config", cfg.to_ini().trim_end());
    t
}

fn pce_table(command: Command, cfg: &RunConfig, run: &PceRun) -> CsvTable {
    let mut t = table(command, cfg, &["t", "obs_mean", "obs_variance", "trace_err", "herm_err", "min_eig"]);
    t.meta("n_equations", run.n_equations);
    for r in &run.records {
        t.push_row(&[
            r.t.into(),
            r.obs_mean.into(),
            r.obs_variance.into(),
            r.trace_err.into(),
            r.herm_err.into(),
            r.min_eig.into(),
        ]);
    }
    t
}

fn mc_table(command: Command, cfg: &RunConfig, run: &McRun) -> CsvTable {
    let e = &run.ensemble;
    let mut t = table(command, cfg, &["t", "obs_mean", "obs_stderr", "n_traj"]);
    t.meta("converged", e.converged);
    for i in 0..e.times.len() {
        t.push_row(&[e.times[i].into(), e.obs_mean[i].into(), e.stderr_obs[i].into(), e.n_used.into()]);
    }
    t
}

fn write(t: &CsvTable, prefix: &str, name: &str) -> Result<PathBuf> {
    let path = PathBuf::from(format!("{prefix}{name}"));
    t.write(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(extra: &str) -> Problem {
        let text = format!(
            "[model]\nh0 = X\nv = Z\nhorizon = 1\n[noise]\nalpha = 0.5\ntau_c = 1\n\
             [kle]\ngrid_size = 60\nstochastic_dim = 2\n[pce]\norder = 2\noutput_points = 10\ndt_max = 0.005\n\
             [mc]\nn_traj = 400\nbatch = 200\ndt = 0.01\nseed = 7\nstderr_target = 0\n{extra}"
        );
        Problem::new(RunConfig::parse(&text).unwrap(), Path::new(".")).unwrap()
    }

    #[test]
    fn pce_run_has_one_record_per_output_time() {
        let p = small("");
        let (kle, _) = p.kle(2).unwrap();
        let run = p.pce(&kle, 2).unwrap();
        assert_eq!(run.records.len(), 11);
        assert_eq!(run.n_equations, 6);
        assert!((run.records[0].obs_mean - 1.0).abs() < 1e-14);
    }

    #[test]
    fn comparison_band_flags() {
        let p = small("");
        let (kle, _) = p.kle(2).unwrap();
        let cmp = Comparison::new(p.pce(&kle, 2).unwrap(), p.mc(None).unwrap());
        assert_eq!(cmp.within_band.len(), 11);
        // t = 0 is exact in both
        assert!(cmp.within_band[0]);
        assert!(cmp.abs_diff[0] < 1e-14);
        assert!(!cmp.mc.ensemble.converged, "zero target can never be met");
    }

    #[test]
    fn sweep_reference_deviation_is_zero() {
        let p = small("[sweep]\norders = 0, 1, 3\ndims = 1, 2\n");
        let sweep = p.sweep().unwrap();
        assert_eq!(sweep.points.len(), 6);
        let r = sweep.points.iter().find(|q| q.stochastic_dim == 2 && q.order == 3).unwrap();
        assert_eq!(r.max_deviation, 0.0);
        let zero = sweep.points.iter().find(|q| q.order == 0).unwrap();
        assert!(zero.max_deviation > 0.0);
    }

    #[test]
    fn missing_kernel_table_is_reported() {
        let text = "[model]\nh0 = X\nv = Z\nhorizon = 1\n[noise]\nkind = table\ntable = nope.csv\n[mc]\nsampler = kle\n";
        let err = Problem::new(RunConfig::parse(text).unwrap(), Path::new("/nonexistent")).unwrap_err();
        assert!(err.to_string().contains("nope.csv"), "{err}");
    }
}
