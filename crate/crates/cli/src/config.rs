//! Experiment configuration: one flat TOML document per experiment.
//!
//! Unknown keys are rejected. Every run directory records the resolved
//! config verbatim, and each pipeline stage is content-addressed by a hash
//! over its config section plus its upstream hashes, so stale artifacts are
//! refused rather than silently reused.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: usize,
    pub corpus: CorpusSection,
    pub features: FeaturesSection,
    pub embedder: EmbedderSection,
    pub am: AmSection,
    pub adaptation: AdaptationSection,
    pub seq: SeqSection,
    pub decode: DecodeSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            workers: 1,
            corpus: CorpusSection::default(),
            features: FeaturesSection::default(),
            embedder: EmbedderSection::default(),
            am: AmSection::default(),
            adaptation: AdaptationSection::default(),
            seq: SeqSection::default(),
            decode: DecodeSection::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub speakers_per_severity: usize,
    pub heldout_per_severity: usize,
    /// Words taken from the head of the built-in list.
    pub n_words: usize,
    pub phone_duration_ms: f64,
    pub augment: bool,
    pub augment_factors: Vec<f64>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            speakers_per_severity: 4,
            heldout_per_severity: 2,
            n_words: 30,
            phone_duration_ms: 65.0,
            augment: false,
            augment_factors: vec![0.9, 1.0, 1.1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub mean_normalize: bool,
    /// Negative dB offset below peak; unset disables VAD (the synthetic
    /// corpus carries no silence padding).
    pub vad_threshold_db: Option<f64>,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            mean_normalize: true,
            vad_threshold_db: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        EmbedderSection {
            epochs: 40,
            learning_rate: 0.08,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmSection {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub use_aux: bool,
    pub use_seve_head: bool,
    pub use_lhuc_seve: bool,
    /// Train with speaker-severity adaptive training (the `sat` subcommand).
    pub lhuc_sat: bool,
    pub r_learning_rate: f64,
}

impl Default for AmSection {
    fn default() -> Self {
        AmSection {
            hidden_width: 256,
            hidden_layers: 7,
            epochs: 6,
            learning_rate: 0.08,
            batch_size: 64,
            use_aux: false,
            use_seve_head: false,
            use_lhuc_seve: false,
            lhuc_sat: false,
            r_learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptTarget {
    Heldout,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeveritySource {
    Assessed,
    Oracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationSection {
    pub lambda: f64,
    pub adapt_epochs: u32,
    pub adapt_lr: f64,
    pub pseudo_label_pass: bool,
    /// Which speakers to adapt.
    pub speakers: AdaptTarget,
    /// Base checkpoint: the `train-am` or `sat` output.
    pub base: BaseModel,
    /// Severity label source for r_seve selection during adaptation.
    pub severity: SeveritySource,
}

impl Default for AdaptationSection {
    fn default() -> Self {
        AdaptationSection {
            lambda: 0.5,
            adapt_epochs: 5,
            adapt_lr: 0.2,
            pseudo_label_pass: true,
            speakers: AdaptTarget::Heldout,
            base: BaseModel::Am,
            severity: SeveritySource::Assessed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseModel {
    Am,
    Sat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqSection {
    pub use_severity: bool,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub splice: usize,
    /// Fold High-severity B2 data into sequence-model training.
    pub fold_in_high_b2: bool,
}

impl Default for SeqSection {
    fn default() -> Self {
        SeqSection {
            use_severity: true,
            epochs: 20,
            learning_rate: 0.005,
            batch_size: 2,
            hidden: vec![128, 128],
            splice: 2,
            fold_in_high_b2: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeSource {
    Am,
    Sat,
    Adapt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    pub nbest: usize,
    pub source: DecodeSource,
    pub severity: SeveritySource,
    /// Score-interpolation weights for rescoring ("first_pass" plus
    /// second-pass scorer names).
    pub weights: BTreeMap<String, f64>,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let mut weights = BTreeMap::new();
        weights.insert("first_pass".to_string(), 1.0);
        weights.insert("ctc".to_string(), 1.0);
        DecodeSection {
            nbest: 50,
            source: DecodeSource::Am,
            severity: SeveritySource::Assessed,
            weights,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSource {
    Decode,
    Rescore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub source: EvalSource,
    pub per_utt_csv: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            source: EvalSource::Decode,
            per_utt_csv: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    /// Grid runs use a narrower trunk than the single-system default so the
    /// 8-system × N-seed sweep stays desk-scale.
    pub hidden_width: usize,
    pub epochs: u32,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            seeds: vec![1, 2, 3, 4, 5],
            hidden_width: 128,
            epochs: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&body)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.speakers_per_severity == 0 {
            bail!("corpus.speakers_per_severity must be ≥ 1");
        }
        if self.corpus.n_words == 0 || self.corpus.n_words > seva_core::corpus::DEFAULT_WORDS.len()
        {
            bail!(
                "corpus.n_words must be in 1..={}",
                seva_core::corpus::DEFAULT_WORDS.len()
            );
        }
        if !(0.0..=1.0).contains(&self.adaptation.lambda) {
            bail!("adaptation.lambda must be within [0, 1]");
        }
        if self.decode.nbest == 0 {
            bail!("decode.nbest must be ≥ 1");
        }
        if self.ablate.seeds.is_empty() {
            bail!("ablate.seeds must not be empty");
        }
        Ok(())
    }

    /// Corpus word list (head of the built-in list).
    pub fn words(&self) -> Vec<String> {
        seva_core::corpus::DEFAULT_WORDS[..self.corpus.n_words]
            .iter()
            .map(|w| w.to_string())
            .collect()
    }
}

fn hash_of(parts: &[String]) -> u64 {
    let joined = parts.join("\u{1f}");
    seva_core::util::fnv1a64(joined.as_bytes())
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Corpus,
    Features,
    Embedder,
    Am,
    Sat,
    Adapt,
    Seq,
    Decode,
    Rescore,
    Score,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Features => "features",
            Stage::Embedder => "embedder",
            Stage::Am => "am",
            Stage::Sat => "sat",
            Stage::Adapt => "adapt",
            Stage::Seq => "seq",
            Stage::Decode => "decode",
            Stage::Rescore => "rescore",
            Stage::Score => "score",
        }
    }

    /// Subcommand that produces this stage's artifacts.
    pub fn subcommand(self) -> &'static str {
        match self {
            Stage::Corpus => "gen-corpus",
            Stage::Features => "extract",
            Stage::Embedder => "train-embedder",
            Stage::Am => "train-am",
            Stage::Sat => "sat",
            Stage::Adapt => "adapt",
            Stage::Seq => "train-seq",
            Stage::Decode => "decode",
            Stage::Rescore => "rescore",
            Stage::Score => "score",
        }
    }

    /// Content hash over this stage's config slice and its upstream hashes.
    pub fn expected_hash(self, cfg: &ExperimentConfig) -> u64 {
        let seed = cfg.seed.to_string();
        let section = |s: &str| -> String { s.to_string() };
        match self {
            Stage::Corpus => hash_of(&[
                seed,
                section(&toml::to_string(&cfg.corpus).unwrap_or_default()),
            ]),
            Stage::Features => hash_of(&[
                Stage::Corpus.expected_hash(cfg).to_string(),
                section(&toml::to_string(&cfg.features).unwrap_or_default()),
            ]),
            Stage::Embedder => hash_of(&[
                Stage::Features.expected_hash(cfg).to_string(),
                section(&toml::to_string(&cfg.embedder).unwrap_or_default()),
            ]),
            Stage::Am | Stage::Sat => {
                let mut parts = vec![
                    Stage::Features.expected_hash(cfg).to_string(),
                    section(&toml::to_string(&cfg.am).unwrap_or_default()),
                    format!("sat={}", self == Stage::Sat),
                ];
                if cfg.am.use_aux {
                    parts.push(Stage::Embedder.expected_hash(cfg).to_string());
                }
                hash_of(&parts)
            }
            Stage::Adapt => {
                let base = match cfg.adaptation.base {
                    BaseModel::Am => Stage::Am,
                    BaseModel::Sat => Stage::Sat,
                };
                hash_of(&[
                    base.expected_hash(cfg).to_string(),
                    Stage::Embedder.expected_hash(cfg).to_string(),
                    section(&toml::to_string(&cfg.adaptation).unwrap_or_default()),
                ])
            }
            Stage::Seq => hash_of(&[
                Stage::Features.expected_hash(cfg).to_string(),
                section(&toml::to_string(&cfg.seq).unwrap_or_default()),
            ]),
            Stage::Decode => {
                let base = match cfg.decode.source {
                    DecodeSource::Am => Stage::Am,
                    DecodeSource::Sat => Stage::Sat,
                    DecodeSource::Adapt => Stage::Adapt,
                };
                hash_of(&[
                    base.expected_hash(cfg).to_string(),
                    Stage::Embedder.expected_hash(cfg).to_string(),
                    section(&toml::to_string(&cfg.decode).unwrap_or_default()),
                ])
            }
            Stage::Rescore => hash_of(&[
                Stage::Decode.expected_hash(cfg).to_string(),
                Stage::Seq.expected_hash(cfg).to_string(),
            ]),
            Stage::Score => {
                let upstream = match cfg.eval.source {
                    EvalSource::Decode => Stage::Decode,
                    EvalSource::Rescore => Stage::Rescore,
                };
                hash_of(&[
                    upstream.expected_hash(cfg).to_string(),
                    section(&toml::to_string(&cfg.eval).unwrap_or_default()),
                ])
            }
        }
    }
}

/// Writes a stage's content hash after its artifacts are complete.
pub fn write_stage_meta(out_dir: &Path, stage: Stage, cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir.join(stage.dir_name());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("stage.meta"),
        format!("config_hash={:016x}\n", stage.expected_hash(cfg)),
    )?;
    Ok(())
}

/// Verifies an upstream stage exists and matches the current config.
pub fn require_stage(out_dir: &Path, stage: Stage, cfg: &ExperimentConfig) -> Result<()> {
    let meta = out_dir.join(stage.dir_name()).join("stage.meta");
    let body = match std::fs::read_to_string(&meta) {
        Ok(b) => b,
        Err(_) => bail!(
            "missing {} artifacts: run `seva {}` first",
            stage.dir_name(),
            stage.subcommand()
        ),
    };
    let expected = format!("config_hash={:016x}", stage.expected_hash(cfg));
    if body.trim() != expected {
        bail!(
            "stale {} artifacts (config or seed changed): rerun `seva {}`",
            stage.dir_name(),
            stage.subcommand()
        );
    }
    Ok(())
}
