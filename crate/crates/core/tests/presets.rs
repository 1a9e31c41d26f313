mod common;

use std::path::Path;

use qpce::config::{NoiseSpec, RunConfig};
use qpce::runner::Problem;

const PRESETS: [&str; 4] = ["fig1_top", "fig1_bottom", "fig2", "dephasing_oracle"];

#[test]
fn presets_round_trip_through_the_emitter() {
    for name in PRESETS {
        let cfg = common::load_preset(name);
        assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg, "{name}");
    }
}

#[test]
fn strong_noise_preset_parameters() {
    let cfg = common::load_preset("fig2");
    assert_eq!(cfg.noise, NoiseSpec::OrnsteinUhlenbeck { alpha: 3.0, tau_c: 10.0 });
    assert_eq!(cfg.model.horizon, 1.0);
    assert_eq!(cfg.pce.order, 9);
    assert_eq!(cfg.kle.stochastic_dim, 3);
    assert_eq!(cfg.output_times().len(), 201);
}

#[test]
fn presets_build_problems() {
    for name in PRESETS {
        let problem = Problem::new(common::load_preset(name), Path::new(".")).unwrap();
        let (kle, _) = problem.kle(problem.config.kle.stochastic_dim).unwrap();
        assert_eq!(kle.stochastic_dim(), 3, "{name}");
    }
}
