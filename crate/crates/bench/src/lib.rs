//! Shared fixtures for the criterion benches.

use stdb_core::dbo::init_from_samples;
use stdb_core::models::{Burgers, BurgersConfig, Model};
use stdb_core::{DboState, QuadratureWeights};

pub struct BurgersFixture {
    pub model: Burgers,
    pub w: QuadratureWeights,
    pub state: DboState,
    pub dt: f64,
}

/// Burgers ensemble on `n` points with `s` samples, compressed to rank `r`.
pub fn burgers(n: usize, s: usize, r: usize) -> BurgersFixture {
    let cfg = BurgersConfig {
        n,
        ..BurgersConfig::default()
    };
    let dt = cfg.stable_dt().min(6.25e-5);
    let model = Burgers::new(&cfg, s, dt, 1).expect("burgers fixture");
    let w = QuadratureWeights::monte_carlo(model.spatial_weights(), s).expect("weights");
    let (state, _) = init_from_samples(model.initial_ensemble().view(), r, &w).expect("initial state");
    BurgersFixture { model, w, state, dt }
}
