#![allow(dead_code)]

use std::sync::OnceLock;

use krein_core::config::ScenarioConfig;
use krein_core::driver::{prepare, state_at, Analysis};
use krein_core::pencil::{build_pencil, negative_subspace, LinearPencil, NegativeSubspace};

pub fn dark(solitons: usize, mu: f64, n: usize, dx: f64) -> ScenarioConfig {
    let seed = if solitons > 1 { format!("\n[seed]\nmu = {}\nd_mu_max = 0.1\n", solitons as f64 + 0.6) } else { String::new() };
    ScenarioConfig::from_toml(&format!(
        "name = \"dark{solitons}\"\nmodel = \"gp1d\"\nstate = \"dark-soliton\"\nsolitons = {solitons}\nomega = 1.0\nmu = {mu}\n\n[grid]\nn = {n}\ndx = {dx}\n{seed}"
    ))
    .unwrap()
}

/// Single vortex on the coarse 24x24 grid.
pub fn coarse_vortex() -> ScenarioConfig {
    ScenarioConfig::from_toml(
        "name = \"coarse-vortex\"\nmodel = \"gp2d\"\nstate = \"vortex\"\nomega = 0.2\nmu = 0.45\n\n[grid]\nn = 24\ndx = 0.75\n",
    )
    .unwrap()
}

pub struct Fixture {
    pub cfg: ScenarioConfig,
    pub analysis: Analysis,
    pub pencil: LinearPencil,
    pub neg: NegativeSubspace,
}

fn build(cfg: ScenarioConfig) -> Fixture {
    let mu = cfg.mu.unwrap();
    let state = state_at(&cfg, mu).unwrap();
    let analysis = prepare(state, &cfg.tolerances).unwrap();
    let pencil = build_pencil(&analysis.lin, &analysis.kernels, cfg.tolerances.zero_tol).unwrap();
    let neg = negative_subspace(&pencil);
    Fixture { cfg, analysis, pencil, neg }
}

pub fn one_dark() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build(dark(1, 2.0, 300, 0.05)))
}

pub fn three_dark() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build(dark(3, 5.0, 400, 0.05)))
}

pub fn vortex24() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build(coarse_vortex()))
}

pub fn all() -> [&'static Fixture; 3] {
    [one_dark(), three_dark(), vortex24()]
}
pub mod invariants;
