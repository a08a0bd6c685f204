//! Shared fixtures for the benchmark targets.

use manifold_sde::{ControlledSystem, Scenario, ScenarioConfig};

pub fn example_scenario() -> Scenario {
    ScenarioConfig::paper_example()
        .build()
        .expect("bundled scenario builds")
}

pub fn example_controlled() -> ControlledSystem {
    example_scenario()
        .controlled()
        .expect("bundled scenario assembles")
}
