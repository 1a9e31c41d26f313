mod common;

use std::sync::Arc;

use proptest::prelude::*;
use qpce::config::{OperatorSpec, Pauli, RunConfig};
use qpce::hierarchy::basis::enumerate_indices;
use qpce::hierarchy::couplings::build_couplings;
use qpce::hierarchy::{initial_pce_state, propagate, PropagationSettings};
use qpce::kle::{KleSettings, NystromRule};
use qpce::montecarlo::{propagate_trajectory, NoisePath};
use qpce::{commutator_action, expectation, static_propagator, CorrelationKernel, DensityMatrix, KernelTable, Operator, StochasticModel, C64};

fn hermitian(dim: usize) -> impl Strategy<Value = Operator> {
    prop::collection::vec(-2.0..2.0f64, dim * dim * 2).prop_map(move |v| {
        let mut e = vec![C64::ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                let z = C64::new(v[2 * (r * dim + c)], v[2 * (r * dim + c) + 1]);
                e[r * dim + c] += z * 0.5;
                e[c * dim + r] += z.conj() * 0.5;
            }
        }
        Operator::from_row_slice(dim, &e).unwrap()
    })
}

fn pure_state(dim: usize) -> impl Strategy<Value = DensityMatrix> {
    prop::collection::vec(-1.0..1.0f64, dim * 2)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(move |v| {
            let amps: Vec<C64> = (0..dim).map(|k| C64::new(v[2 * k], v[2 * k + 1])).collect();
            DensityMatrix::pure(&amps).unwrap()
        })
}

fn pauli() -> impl Strategy<Value = Pauli> {
    prop_oneof![Just(Pauli::I), Just(Pauli::X), Just(Pauli::Y), Just(Pauli::Z)]
}

proptest! {
    #[test]
    fn basis_is_graded_lexicographic(s in 1usize..5, p in 0usize..7) {
        let set = enumerate_indices(s, p).unwrap();
        prop_assert_eq!(set.len() as u128, common::binomial((s + p) as u128, s as u128));
        prop_assert!(set.get(0).entries().iter().all(|&n| n == 0));
        for (k, w) in set.indices().windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            prop_assert!(a.order() < b.order() || (a.order() == b.order() && a.entries() < b.entries()));
            prop_assert_eq!(set.position(b), Some(k + 1));
        }
        prop_assert!(set.indices().iter().all(|m| m.order() as usize <= p));
    }

    #[test]
    fn coupling_tensor_is_symmetric_under_the_hermite_measure(s in 1usize..4, p in 0usize..6) {
        let set = enumerate_indices(s, p).unwrap();
        let c = build_couplings(&set);
        prop_assert!(c.len() <= 2 * s * set.len());
        for (m, e) in c.iter() {
            // E[Phi_m xi Phi_l] is symmetric in (m, l)
            let back = c.partners(e.partner).iter().find(|b| b.mode == e.mode && b.partner == m);
            prop_assert!(back.is_some());
            let lhs = e.weight * set.get(m).norm_sq();
            let rhs = back.unwrap().weight * set.get(e.partner).norm_sq();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn commutators_are_traceless_and_preserve_hermiticity(a in hermitian(3), rho in pure_state(3)) {
        let comm = commutator_action(&a, rho.operator()).unwrap();
        prop_assert!(comm.trace().norm() < 1e-12);
        let generator = comm.scale(C64::new(0.0, -1.0));
        prop_assert!(generator.hermiticity_error() < 1e-12);
    }

    #[test]
    fn x_coherence_is_invariant_under_the_x_rotation(rho in pure_state(2), t in -5.0..5.0f64) {
        let u = static_propagator(&Operator::pauli_x(), t).unwrap();
        let rotated = DensityMatrix::new(rho.operator().conjugate_by(&u).unwrap()).unwrap();
        let a = expectation(&Operator::pauli_x(), &rho).unwrap();
        let b = expectation(&Operator::pauli_x(), &rotated).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pauli_specs_round_trip(terms in prop::collection::vec((-1e3..1e3f64, pauli()), 1..6)) {
        let spec = OperatorSpec::Pauli(terms);
        prop_assert_eq!(OperatorSpec::parse(&spec.to_string()).unwrap(), spec);
    }

    #[test]
    fn matrix_specs_round_trip(dim in 1usize..4, raw in prop::collection::vec(-1e6..1e6f64, 32)) {
        let entries: Vec<C64> = (0..dim * dim).map(|k| C64::new(raw[2 * k], raw[2 * k + 1])).collect();
        let spec = OperatorSpec::Matrix { dim, entries };
        prop_assert_eq!(OperatorSpec::parse(&spec.to_string()).unwrap(), spec);
    }

    #[test]
    fn configs_round_trip(
        alpha in -10.0..10.0f64,
        tau_c in 1e-3..1e3f64,
        horizon in 0.1..10.0f64,
        s in 1usize..5,
        order in 0usize..12,
        seed in any::<u64>(),
        cusp in any::<bool>(),
        orders in prop::collection::vec(0usize..10, 1..5),
    ) {
        let text = format!(
            "[model]\nh0 = 0.5*X - 0.25*Z\nv = Z\nhorizon = {horizon}\n[noise]\nalpha = {alpha}\ntau_c = {tau_c}\n\
             [kle]\nstochastic_dim = {s}\ncusp_correction = {cusp}\n[pce]\norder = {order}\n[mc]\nseed = {seed}\n\
             [sweep]\norders = {}\n",
            orders.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(",")
        );
        let cfg = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg);
    }

    #[test]
    fn decaying_tables_parse(spacing in 1e-3..1.0f64, decay in prop::collection::vec(0.0..1.0f64, 1..30)) {
        let mut values = vec![1.0];
        for d in &decay {
            let last = *values.last().unwrap();
            values.push(last * d);
        }
        let text: String = values.iter().enumerate().map(|(k, v)| format!("{}, {v}\n", k as f64 * spacing)).collect();
        let table = KernelTable::parse(&text).unwrap();
        prop_assert_eq!(table.values(), &values[..]);
        let kernel = CorrelationKernel::Tabulated(table);
        prop_assert_eq!(kernel.at_lag(0.0), 1.0);
        prop_assert!(kernel.at_lag(spacing * 0.5).abs() <= 1.0);
    }

    #[test]
    fn trajectories_stay_physical(v in hermitian(2), rho in pure_state(2), omegas in prop::collection::vec(-5.0..5.0f64, 21)) {
        let kernel = CorrelationKernel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let model = StochasticModel::new(Operator::pauli_x(), v, kernel, 1.0).unwrap();
        let times: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let states = propagate_trajectory(&model, &NoisePath { times, values: omegas }, &rho).unwrap();
        for st in &states {
            prop_assert!((st.trace() - C64::ONE).norm() < 1e-12);
            let d = DensityMatrix::new_unchecked(st.clone());
            prop_assert!(d.min_eigenvalue() > -1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn propagation_conserves_trace_and_hermiticity(
        h0 in hermitian(2),
        v in hermitian(2),
        rho in pure_state(2),
        alpha in 0.1..2.0f64,
        tau_c in 0.2..5.0f64,
        s in 1usize..4,
        order in 0usize..5,
    ) {
        let kernel = CorrelationKernel::ornstein_uhlenbeck(alpha, tau_c).unwrap();
        let model = StochasticModel::new(h0, v, kernel, 1.0).unwrap();
        let settings = KleSettings { grid_size: 80, candidate_modes: Some(6), stochastic_dim: s, rule: NystromRule::CuspCorrected };
        let (kle, _) = qpce::kle::build_truncated_kle(model.kernel(), model.h0(), model.v(), 1.0, &settings).unwrap();
        let basis = Arc::new(enumerate_indices(s, order).unwrap());
        let couplings = build_couplings(&basis);
        let state = initial_pce_state(&rho, Arc::clone(&basis));
        let times = [0.0, 0.25, 0.5, 1.0];
        let ps = PropagationSettings { dt_max: Some(0.005), ..Default::default() };
        let states = propagate(&state, &model, &kle, &couplings, &times, &ps).unwrap();
        for st in &states {
            prop_assert!((st.coefficient(0).trace() - C64::ONE).norm() <= 1e-8);
            for m in 1..basis.len() {
                prop_assert!(st.coefficient(m).trace().norm() <= 1e-8);
            }
            prop_assert!(st.hermiticity_error() <= 1e-8);
        }
    }
}
