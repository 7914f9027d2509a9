//! Shared fixtures for the benchmarks in `benches/`.

use bdris_core::{build_scenario, ChannelTerms, ScenarioConfig};

/// Default scenario resized to `m` elements at `d/λ` spacing.
pub fn scenario(m: usize, spacing_over_lambda: f64) -> ScenarioConfig {
    ScenarioConfig {
        m,
        group_size: if m % 4 == 0 { 4 } else { 1 },
        spacing_over_lambda,
        ..Default::default()
    }
}

pub fn terms(m: usize, spacing_over_lambda: f64) -> ChannelTerms {
    build_scenario(&scenario(m, spacing_over_lambda)).expect("default scenario builds")
}
