//! Dual-target (severity + speaker) spectral-basis embedding network.
//!
//! A 3-layer trunk over flattened top-2 spectral bases ends in a 25-dim
//! bottleneck read by two softmax heads. The bottleneck activations serve as
//! speaker-severity aware auxiliary features; averaging severity-head
//! posteriors over a speaker's utterances gives unsupervised test-time
//! severity assessment.

use crate::features::SpectralBases;
use crate::netcore::{
    interpolate_losses, softmax, softmax_ce, weights, Activation, NetParams, Target, TrainConfig,
};
use crate::util::rng::SplitMix64;
use crate::{Error, Result};

/// Speech intelligibility subgroup, ordered from most to least impaired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeverityLevel {
    VeryLow = 0,
    Low = 1,
    Mid = 2,
    High = 3,
}

pub const N_SEVERITIES: usize = 4;

impl SeverityLevel {
    pub const ALL: [SeverityLevel; 4] = [
        SeverityLevel::VeryLow,
        SeverityLevel::Low,
        SeverityLevel::Mid,
        SeverityLevel::High,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArg(format!("severity index {i} out of range")))
    }

    /// Short code used in manifests and result tables.
    pub fn code(self) -> &'static str {
        match self {
            SeverityLevel::VeryLow => "VL",
            SeverityLevel::Low => "L",
            SeverityLevel::Mid => "M",
            SeverityLevel::High => "H",
        }
    }

    pub fn from_code(s: &str) -> Result<Self> {
        match s {
            "VL" => Ok(SeverityLevel::VeryLow),
            "L" => Ok(SeverityLevel::Low),
            "M" => Ok(SeverityLevel::Mid),
            "H" => Ok(SeverityLevel::High),
            _ => Err(Error::InvalidArg(format!("unknown severity code {s:?}"))),
        }
    }
}

impl std::fmt::Display for SeverityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Bottleneck width: the auxiliary feature dimensionality.
pub const BOTTLENECK_DIM: usize = 25;
/// Default hidden widths before the bottleneck.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

/// Trained embedding network: shared trunk, severity head, speaker head.
#[derive(Debug, Clone)]
pub struct EmbedderNet {
    pub trunk: NetParams,
    pub severity_head: NetParams,
    pub speaker_head: NetParams,
    /// Training speaker table; head output index ↔ position here.
    pub speakers: Vec<String>,
}

/// One training example: flattened spectral bases with both targets.
#[derive(Debug, Clone)]
pub struct LabeledBases {
    pub utterance_id: String,
    pub bases: Vec<f64>,
    pub severity: SeverityLevel,
    pub speaker: String,
}

/// A 25-dim speaker-severity aware auxiliary feature for one utterance.
#[derive(Debug, Clone)]
pub struct AuxFeature {
    pub utterance_id: String,
    pub vector: Vec<f64>,
}

/// Per-epoch mean training loss, for convergence checks and logs.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

/// Trains the embedder on (severity, speaker) dual targets with equally
/// weighted cross-entropy losses. Zero epochs returns the initialized net.
pub fn train_embedder(data: &[LabeledBases], cfg: &TrainConfig) -> Result<(EmbedderNet, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("train_embedder: no examples".into()));
    }
    let in_dim = data[0].bases.len();
    for d in data {
        if d.bases.len() != in_dim {
            return Err(Error::dim(
                format!("bases for {}", d.utterance_id),
                in_dim,
                d.bases.len(),
            ));
        }
    }
    let first_sev = data[0].severity;
    if data.iter().all(|d| d.severity == first_sev) {
        return Err(Error::DegenerateTargets(
            "train_embedder: corpus has a single severity class".into(),
        ));
    }

    let mut speakers: Vec<String> = data.iter().map(|d| d.speaker.clone()).collect();
    speakers.sort();
    speakers.dedup();
    let spk_index = |id: &str| speakers.iter().position(|s| s == id).unwrap();

    let mut rng = SplitMix64::substream(cfg.seed, 0xE0BED);
    let mut trunk = NetParams::glorot(
        &[in_dim, DEFAULT_HIDDEN[0], DEFAULT_HIDDEN[1], BOTTLENECK_DIM],
        &[Activation::Relu, Activation::Relu, Activation::Relu],
        &mut rng,
    )?;
    let mut severity_head = NetParams::glorot(
        &[BOTTLENECK_DIM, N_SEVERITIES],
        &[Activation::Linear],
        &mut rng,
    )?;
    let mut speaker_head = NetParams::glorot(
        &[BOTTLENECK_DIM, speakers.len()],
        &[Activation::Linear],
        &mut rng,
    )?;

    let w = if cfg.loss_weights.is_empty() {
        weights(&[("seve", 0.5), ("spkr", 0.5)])
    } else {
        cfg.loss_weights.clone()
    };
    let (w_seve, w_spkr) = (
        w.get("seve").copied().unwrap_or(0.0),
        w.get("spkr").copied().unwrap_or(0.0),
    );

    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let order =
            crate::util::rng::shuffled_indices(cfg.seed, 0xE10000 + epoch as u64, data.len());
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            trunk.zero_grads();
            severity_head.zero_grads();
            speaker_head.zero_grads();
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &data[i];
                let fwd = trunk.forward(&ex.bases)?;
                let bottleneck = fwd.output().to_vec();

                let sev_fwd = severity_head.forward(&bottleneck)?;
                let (l_seve, mut d_sev) =
                    softmax_ce(sev_fwd.output(), Target::Class(ex.severity.index()))?;
                let spk_fwd = speaker_head.forward(&bottleneck)?;
                let (l_spkr, mut d_spk) =
                    softmax_ce(spk_fwd.output(), Target::Class(spk_index(&ex.speaker)))?;

                let lv =
                    interpolate_losses(&w, &weights(&[("seve", l_seve), ("spkr", l_spkr)]))?;
                epoch_loss += lv.scalar;

                d_sev.iter_mut().for_each(|g| *g *= w_seve * inv);
                d_spk.iter_mut().for_each(|g| *g *= w_spkr * inv);
                let b_sev = severity_head.backward(&sev_fwd, &d_sev);
                let b_spk = speaker_head.backward(&spk_fwd, &d_spk);
                let d_bottleneck: Vec<f64> = b_sev
                    .d_input
                    .iter()
                    .zip(&b_spk.d_input)
                    .map(|(a, b)| a + b)
                    .collect();
                trunk.backward(&fwd, &d_bottleneck);
            }
            trunk.sgd_step(cfg.learning_rate)?;
            severity_head.sgd_step(cfg.learning_rate)?;
            speaker_head.sgd_step(cfg.learning_rate)?;
        }
        log.epoch_losses.push(epoch_loss / data.len() as f64);
    }

    Ok((
        EmbedderNet {
            trunk,
            severity_head,
            speaker_head,
            speakers,
        },
        log,
    ))
}

/// Bottleneck activation (post-activation, pre-head) for one utterance.
pub fn extract_aux(net: &EmbedderNet, bases: &SpectralBases) -> Result<Vec<f64>> {
    extract_aux_flat(net, &bases.flattened())
}

/// `extract_aux` over already-flattened bases (archive path).
pub fn extract_aux_flat(net: &EmbedderNet, flat: &[f64]) -> Result<Vec<f64>> {
    let fwd = net.trunk.forward(flat)?;
    Ok(fwd.output().to_vec())
}

/// Severity-head posterior for one utterance.
pub fn severity_posteriors(net: &EmbedderNet, bases: &SpectralBases) -> Result<[f64; 4]> {
    severity_posteriors_flat(net, &bases.flattened())
}

pub fn severity_posteriors_flat(net: &EmbedderNet, flat: &[f64]) -> Result<[f64; 4]> {
    let fwd = net.trunk.forward(flat)?;
    let head = net.severity_head.forward(fwd.output())?;
    let p = softmax(head.output());
    Ok([p[0], p[1], p[2], p[3]])
}

/// Speaker-level assessment from flattened bases (archive path).
pub fn assess_severity_flat(
    net: &EmbedderNet,
    utterances: &[Vec<f64>],
) -> Result<(SeverityLevel, [f64; 4])> {
    if utterances.is_empty() {
        return Err(Error::EmptyInput("assess_severity: no utterances".into()));
    }
    let mut avg = [0.0f64; 4];
    for u in utterances {
        let p = severity_posteriors_flat(net, u)?;
        for (a, b) in avg.iter_mut().zip(p) {
            *a += b;
        }
    }
    for a in avg.iter_mut() {
        *a /= utterances.len() as f64;
    }
    Ok((pick_severity(&avg), avg))
}

/// Embedder checkpoint: header, trunk, severity head, speaker head, speaker table.
pub mod ckpt {
    use super::*;
    use crate::netcore::ckpt as netckpt;
    use crate::util::io::*;
    use std::io::{BufReader, BufWriter};
    use std::path::Path;

    pub fn save(path: &Path, net: &EmbedderNet) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        netckpt::write_header(&mut f)?;
        netckpt::write_params_body(&mut f, &net.trunk)?;
        netckpt::write_params_body(&mut f, &net.severity_head)?;
        netckpt::write_params_body(&mut f, &net.speaker_head)?;
        write_u32(&mut f, net.speakers.len() as u32)?;
        for s in &net.speakers {
            write_str(&mut f, s)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EmbedderNet> {
        let ctx = path.display().to_string();
        let mut f = BufReader::new(std::fs::File::open(path)?);
        netckpt::read_header(&mut f, &ctx)?;
        let trunk = netckpt::read_params_body(&mut f, &ctx)?;
        let severity_head = netckpt::read_params_body(&mut f, &ctx)?;
        let speaker_head = netckpt::read_params_body(&mut f, &ctx)?;
        let n = read_u32(&mut f)? as usize;
        let mut speakers = Vec::with_capacity(n);
        for _ in 0..n {
            speakers.push(read_str(&mut f, &ctx)?);
        }
        Ok(EmbedderNet {
            trunk,
            severity_head,
            speaker_head,
            speakers,
        })
    }
}

/// Unsupervised speaker-level severity assessment: utterance posteriors are
/// averaged, then argmax; ties break toward the more severe (lower) level.
pub fn assess_severity(
    net: &EmbedderNet,
    utterances: &[SpectralBases],
) -> Result<(SeverityLevel, [f64; 4])> {
    if utterances.is_empty() {
        return Err(Error::EmptyInput("assess_severity: no utterances".into()));
    }
    let mut avg = [0.0f64; 4];
    for u in utterances {
        let p = severity_posteriors(net, u)?;
        for (a, b) in avg.iter_mut().zip(p) {
            *a += b;
        }
    }
    for a in avg.iter_mut() {
        *a /= utterances.len() as f64;
    }
    Ok((pick_severity(&avg), avg))
}

/// Argmax over averaged posteriors; exact ties break toward the more severe
/// (lower-indexed) level.
pub fn pick_severity(posterior: &[f64; 4]) -> SeverityLevel {
    let mut best = 0;
    for i in 1..4 {
        if posterior[i] > posterior[best] {
            best = i;
        }
    }
    SeverityLevel::ALL[best]
}
