#![allow(dead_code)]

use std::path::PathBuf;

use meshopt::harness::ScenarioSpec;

pub fn scenario_path(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(file)
}

pub fn scenario(file: &str) -> ScenarioSpec {
    ScenarioSpec::load(&scenario_path(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

pub fn seeds(spec: &ScenarioSpec) -> Vec<u64> {
    let (a, b) = spec.seeds.expect("scenario lists its seeds");
    (a..b).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Minimal idle network: one gateway, one extender, one user with no traffic.
pub const IDLE_CHAIN: &str = r#"
name = "idle-chain"
grid_spacing = 2.0
default_demand_mbps = 0.0

[thresholds]
rssi_min = -95.0

[[nodes]]
name = "map"
role = "gateway"
channels = [3]
at = { x = 2.0, y = 5.0 }

[[nodes]]
name = "ext"
role = "extender"
channels = [3, 8]
at = { x = 10.0, y = 5.0 }
parent = "map"

[[nodes]]
name = "user"
role = "user"
at = { x = 16.0, y = 5.0 }
parent = "ext"
parent_radio = 1

[[externals]]
id = "ap"
at = { x = 9.0, y = 8.0 }
channel = 6
load_mbps = 20.0
"#;
