//! Packaged experiment configs, one per showcased scenario.

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const DEMOS: &[(&str, &str, &str)] = &[
    (
        "frontier",
        "reward/divergence frontier over guidance scale and N",
        include_str!("../../configs/frontier.toml"),
    ),
    (
        "table1",
        "all samplers at the default block sizes",
        include_str!("../../configs/table1.toml"),
    ),
    (
        "blocksize",
        "sampling block size sweep",
        include_str!("../../configs/blocksize.toml"),
    ),
    (
        "zero_order",
        "gradient-free guidance on a quantized reward",
        include_str!("../../configs/zero_order.toml"),
    ),
    (
        "clustering",
        "one gradient per k-means cluster",
        include_str!("../../configs/clustering.toml"),
    ),
    (
        "sdedit",
        "start from a partially noised reference",
        include_str!("../../configs/sdedit.toml"),
    ),
    (
        "multi_reward",
        "weighted sum of two rewards",
        include_str!("../../configs/multi_reward.toml"),
    ),
    (
        "rescaled",
        "CFG-style gradient rescaling",
        include_str!("../../configs/rescaled.toml"),
    ),
    (
        "determinism",
        "small mixed grid for repeat-run checks",
        include_str!("../../configs/determinism.toml"),
    ),
];

pub fn demo_source(name: &str) -> Result<&'static str> {
    DEMOS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, src)| *src)
        .ok_or_else(|| {
            let names: Vec<_> = DEMOS.iter().map(|(n, _, _)| *n).collect();
            Error::invalid(format!("unknown demo `{name}`; available: {}", names.join(", ")))
        })
}

pub fn demo_config(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml_str(demo_source(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_demo_parses() {
        for (name, _, _) in DEMOS {
            let cfg = demo_config(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(cfg.grid_size() >= 1);
        }
    }

    #[test]
    fn unknown_demo_lists_choices() {
        let err = demo_config("nope").unwrap_err().to_string();
        assert!(err.contains("frontier"), "{err}");
    }
}
