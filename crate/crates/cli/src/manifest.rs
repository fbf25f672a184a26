//! Provenance record written next to every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nids_core::rng::{derive_seed, STREAM_BALANCE, STREAM_FOREST, STREAM_GEN, STREAM_VAE_INIT, STREAM_VAE_NOISE};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub args: serde_json::Value,
    pub seed: u64,
    pub derived_seeds: BTreeMap<&'static str, u64>,
    pub schema_fingerprint: String,
    pub artifact_format_version: u32,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Command-specific facts such as omitted classes or the threshold.
    pub details: serde_json::Value,
    pub duration_s: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, args: serde_json::Value, seed: u64, schema_fingerprint: String) -> Self {
        let derived_seeds = [STREAM_BALANCE, STREAM_FOREST, STREAM_VAE_INIT, STREAM_VAE_NOISE, STREAM_GEN]
            .into_iter()
            .map(|name| (name, derive_seed(seed, name)))
            .collect();
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            args,
            seed,
            derived_seeds,
            schema_fingerprint,
            artifact_format_version: nids_core::pipeline::ARTIFACT_FORMAT_VERSION,
            inputs: Vec::new(),
            outputs: Vec::new(),
            details: serde_json::Value::Null,
            duration_s: 0.0,
        }
    }
}

/// `<out>.manifest.json`.
pub fn path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
