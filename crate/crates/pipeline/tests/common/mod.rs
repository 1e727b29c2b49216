#![allow(dead_code)]

use std::path::Path;

use riskfusion::config::{parse_config, ExperimentConfig};
use riskfusion::synth::{generate_synthetic, write_corpus, SyntheticSpec};

/// Writes a synthetic corpus under `root/data` and returns a config whose
/// caches and outputs also live under `root`.
pub fn synthetic_experiment(root: &Path, seed: u64, feature_language: &str) -> ExperimentConfig {
    let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
    write_corpus(&generate_synthetic(&spec).unwrap(), &root.join("data")).unwrap();
    parse_config(&synthetic_toml(seed, feature_language), root).unwrap()
}

pub fn synthetic_toml(seed: u64, feature_language: &str) -> String {
    format!(
        r#"experiment_id = "synthetic"

[dataset]
manifest = "data/manifest.jsonl"

[extraction]
provider = "mock"
lexicon = "data/lexicon.json"

[text_model]
encoder = {{ kind = "bag_of_markers", id = "bag-of-markers", dim = 16 }}
feature_language = "{feature_language}"
epochs = 50

[speech_model]
encoder = {{ kind = "bag_of_acoustic_tokens", id = "bag-of-acoustic-tokens", vocab = 32 }}
epochs = 50

[fusion]
epochs = 40

[runtime]
seed = {seed}
cache_root = "cache"
output_root = "runs"
"#
    )
}
