//! The hydrogen and natural gas test case shipped with the crate.

pub const MODEL: &str = include_str!("../fixtures/h2ng/model.toml");

pub const SCENARIOS: [(&str, &str); 4] = [
    ("scenario1", include_str!("../fixtures/h2ng/scenario1.toml")),
    ("scenario2", include_str!("../fixtures/h2ng/scenario2.toml")),
    ("scenario3", include_str!("../fixtures/h2ng/scenario3.toml")),
    ("scenario4", include_str!("../fixtures/h2ng/scenario4.toml")),
];

pub fn scenario(id: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(s, _)| *s == id).map(|(_, t)| *t)
}

pub const TARGETS: &str = include_str!("../fixtures/h2ng/targets.toml");

#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct Target {
    pub id: String,
    pub published_cost: f64,
    pub published_co2: f64,
    pub golden_cost: f64,
    pub golden_co2: f64,
}

pub fn targets() -> Vec<Target> {
    #[derive(serde::Deserialize)]
    struct Doc {
        scenario: Vec<Target>,
    }
    toml::from_str::<Doc>(TARGETS).expect("bundled targets parse").scenario
}

/// Relative tolerance against the published totals.
pub const PUBLISHED_REL_TOL: f64 = 0.01;
/// Absolute CO2 slack for near-zero totals, tons.
pub const CO2_ABS_TOL: f64 = 1.0;
/// Relative tolerance against the frozen goldens.
pub const GOLDEN_REL_TOL: f64 = 1e-4;

pub fn within(value: f64, target: f64, rel: f64, abs: f64) -> bool {
    (value - target).abs() <= (rel * target.abs()).max(abs)
}
