//! Config-driven experiment driver for the seva toolkit: corpus generation,
//! feature extraction, embedder / acoustic-model / sequence-model training,
//! adaptation, two-pass decoding, scoring, and the severity-incorporation
//! ablation grid.

pub mod ablate;
pub mod config;
pub mod exp;
pub mod stages;

use anyhow::Result;
use std::path::Path;

/// Dispatches one subcommand against a config and output directory.
pub fn run(subcommand: &str, cfg: &config::ExperimentConfig, out: &Path) -> Result<()> {
    stages::write_resolved_config(cfg, out)?;
    match subcommand {
        "gen-corpus" => stages::gen_corpus(cfg, out),
        "extract" => stages::extract(cfg, out),
        "train-embedder" => stages::train_embedder_stage(cfg, out),
        "train-am" => stages::train_am_stage(cfg, out, false),
        "sat" => stages::train_am_stage(cfg, out, true),
        "adapt" => stages::adapt_stage(cfg, out),
        "train-seq" => stages::train_seq_stage(cfg, out),
        "decode" => stages::decode_stage(cfg, out),
        "rescore" => stages::rescore_stage(cfg, out),
        "score" => stages::score_stage(cfg, out),
        "ablate" => stages::ablate_stage(cfg, out),
        other => anyhow::bail!("unknown subcommand {other:?}"),
    }
}

pub const SUBCOMMANDS: [&str; 11] = [
    "gen-corpus",
    "extract",
    "train-embedder",
    "train-am",
    "sat",
    "adapt",
    "train-seq",
    "decode",
    "rescore",
    "score",
    "ablate",
];
