//! Bundled demo configs.

use crate::config::{parse_config, ConfigError, ExperimentConfig};

pub const DEMOS: [(&str, &str); 4] = [
    ("lmpc-stabilize", include_str!("../configs/lmpc-stabilize.json")),
    ("lmpc-track", include_str!("../configs/lmpc-track.json")),
    ("nmpc-stabilize", include_str!("../configs/nmpc-stabilize.json")),
    ("nmpc-track", include_str!("../configs/nmpc-track.json")),
];

pub fn demo_names() -> impl Iterator<Item = &'static str> {
    DEMOS.iter().map(|(name, _)| *name)
}

pub fn demo_source(name: &str) -> Option<&'static str> {
    DEMOS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn demo_config(name: &str) -> Option<Result<ExperimentConfig, ConfigError>> {
    demo_source(name).map(parse_config)
}
