//! Reference oracles and seeded data generators used by the test suites
//! and the `gen-fixtures` command.

pub mod gen;
pub mod oracle;

pub use gen::{gen_scenario, random_ap_instance, random_detection_set, scenario_config, write_scenario, Manifest, Scenario, ScenarioSpec};
pub use oracle::{oracle_ap, oracle_overlap_raster, oracle_redundancy};
