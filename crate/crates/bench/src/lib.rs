//! Fixtures shared by the benchmarks in `benches/`.

use supportcal::experiment::ExperimentConfig;

/// The two-class scenario used by the acceptance suite.
pub fn scenario() -> ExperimentConfig {
    ExperimentConfig::from_toml(include_str!("../../../configs/exp3.toml")).expect("bundled scenario parses")
}
