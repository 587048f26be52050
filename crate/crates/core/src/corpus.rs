//! Synthetic severity-stratified isolated-word corpus generator.
//!
//! Words render as concatenated phone units: harmonic stacks at the speaker's
//! pitch with amplitudes shaped by two per-phone formant peaks, then
//! severity-profile distortions (tempo stretch, formant jitter, additive
//! noise at a target SNR, amplitude tremor) and a per-speaker channel gain.
//! Ground-truth phone segmentations (sample ranges) are recorded exactly, so
//! frame targets need no forced alignment. The profile constants are tuning
//! knobs for severity separation, not claims about dysarthria acoustics.

use crate::decoder::Lexicon;
use crate::embedder::SeverityLevel;
use crate::features::{speed_perturb, Waveform};
use crate::hybrid_am::FrameTargets;
use crate::util::rng::SplitMix64;
use crate::{Error, Result};
use std::f64::consts::PI;
use std::path::Path;

/// Phone inventory: symbol and two formant frequencies (Hz).
pub const PHONES: [(char, f64, f64); 12] = [
    ('a', 850.0, 1220.0),
    ('e', 530.0, 1840.0),
    ('i', 320.0, 2280.0),
    ('o', 540.0, 920.0),
    ('u', 360.0, 780.0),
    ('b', 240.0, 2060.0),
    ('d', 300.0, 1700.0),
    ('g', 420.0, 1980.0),
    ('k', 640.0, 1400.0),
    ('m', 280.0, 1080.0),
    ('n', 440.0, 1540.0),
    ('s', 760.0, 1880.0),
];

pub fn phone_index(c: char) -> Option<usize> {
    PHONES.iter().position(|&(p, _, _)| p == c)
}

/// Default 30-word list (2-4 phones each) over the 12-phone inventory.
pub const DEFAULT_WORDS: [&str; 30] = [
    "ba", "de", "gi", "ko", "mu", "na", "se", "di", "go", "ku", "ma", "ne", "si", "bo", "du",
    "ga", "ki", "mo", "nu", "sa", "bed", "gim", "kon", "mus", "nad", "seg", "dik", "gob", "kem",
    "bas",
];

/// Per-severity distortion profile. Profiles must be strictly ordered: the
/// VeryLow profile is strictly more impaired than Low than Mid than High on
/// every field.
#[derive(Debug, Clone, Copy)]
pub struct SeverityProfile {
    pub tempo_stretch: f64,
    pub formant_jitter_std: f64,
    pub noise_snr_db: f64,
    pub amplitude_tremor_depth: f64,
}

/// Default profiles indexed by severity (VL, L, M, H).
pub fn default_profiles() -> [SeverityProfile; 4] {
    [
        SeverityProfile {
            tempo_stretch: 1.50,
            formant_jitter_std: 150.0,
            noise_snr_db: 2.0,
            amplitude_tremor_depth: 0.45,
        },
        SeverityProfile {
            tempo_stretch: 1.30,
            formant_jitter_std: 90.0,
            noise_snr_db: 7.0,
            amplitude_tremor_depth: 0.30,
        },
        SeverityProfile {
            tempo_stretch: 1.15,
            formant_jitter_std: 45.0,
            noise_snr_db: 14.0,
            amplitude_tremor_depth: 0.15,
        },
        SeverityProfile {
            tempo_stretch: 1.02,
            formant_jitter_std: 12.0,
            noise_snr_db: 24.0,
            amplitude_tremor_depth: 0.04,
        },
    ]
}

pub fn validate_profiles(p: &[SeverityProfile; 4]) -> Result<()> {
    for i in 1..4 {
        let (worse, better) = (&p[i - 1], &p[i]);
        let ordered = worse.tempo_stretch > better.tempo_stretch
            && worse.formant_jitter_std > better.formant_jitter_std
            && worse.noise_snr_db < better.noise_snr_db
            && worse.amplitude_tremor_depth > better.amplitude_tremor_depth;
        if !ordered {
            return Err(Error::InvalidArg(format!(
                "severity profiles not strictly ordered between levels {} and {}",
                i - 1,
                i
            )));
        }
        if better.tempo_stretch < 1.0 {
            return Err(Error::InvalidArg("tempo_stretch must be ≥ 1".into()));
        }
    }
    Ok(())
}

/// A parameterized synthetic speaker.
#[derive(Debug, Clone)]
pub struct SynthSpeaker {
    pub speaker_id: String,
    pub severity: SeverityLevel,
    pub base_pitch: f64,
    /// Per-phone formant shift in Hz (applied to both formants).
    pub formant_offsets: Vec<f64>,
    pub channel_gain: f64,
    /// Held-out speakers take no part in any training.
    pub heldout: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTag {
    B1,
    B2,
    B3,
}

impl BlockTag {
    pub const ALL: [BlockTag; 3] = [BlockTag::B1, BlockTag::B2, BlockTag::B3];

    pub fn code(self) -> &'static str {
        match self {
            BlockTag::B1 => "B1",
            BlockTag::B2 => "B2",
            BlockTag::B3 => "B3",
        }
    }

    pub fn from_code(s: &str) -> Result<Self> {
        match s {
            "B1" => Ok(BlockTag::B1),
            "B2" => Ok(BlockTag::B2),
            "B3" => Ok(BlockTag::B3),
            _ => Err(Error::InvalidArg(format!("unknown block {s:?}"))),
        }
    }

    /// B1 ∪ B3 form the training split, B2 the test split.
    pub fn is_train(self) -> bool {
        matches!(self, BlockTag::B1 | BlockTag::B3)
    }
}

/// Exact phone segmentation in sample indices; segments tile [0, len).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneSeg {
    pub phone: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub severity: SeverityLevel,
    pub word: String,
    pub block: BlockTag,
    pub wave: Waveform,
    pub segmentation: Vec<PhoneSeg>,
    /// Measured signal-to-noise ratio of the rendered audio (diagnostic).
    pub snr_db: f64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub speakers: Vec<SynthSpeaker>,
    pub utterances: Vec<Utterance>,
    pub lexicon: Lexicon,
    pub sample_rate: u32,
}

impl Corpus {
    pub fn speaker(&self, id: &str) -> Option<&SynthSpeaker> {
        self.speakers.iter().find(|s| s.speaker_id == id)
    }

    /// Training utterances: B1 ∪ B3 of non-held-out speakers.
    pub fn train_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances
            .iter()
            .filter(move |u| u.block.is_train() && !self.is_heldout(&u.speaker_id))
    }

    /// Test utterances: B2 of non-held-out speakers.
    pub fn test_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances
            .iter()
            .filter(move |u| u.block == BlockTag::B2 && !self.is_heldout(&u.speaker_id))
    }

    pub fn heldout_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances
            .iter()
            .filter(move |u| self.is_heldout(&u.speaker_id))
    }

    fn is_heldout(&self, speaker_id: &str) -> bool {
        self.speaker(speaker_id).map_or(false, |s| s.heldout)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub speakers_per_severity: usize,
    pub heldout_per_severity: usize,
    pub words: Vec<String>,
    pub seed: u64,
    pub sample_rate: u32,
    pub profiles: [SeverityProfile; 4],
    /// Nominal per-phone duration before tempo stretching.
    pub phone_duration_s: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            speakers_per_severity: 4,
            heldout_per_severity: 2,
            words: DEFAULT_WORDS.iter().map(|w| w.to_string()).collect(),
            seed: 1,
            sample_rate: 16000,
            profiles: default_profiles(),
            phone_duration_s: 0.065,
        }
    }
}

/// Builds the lexicon implied by a word list (phones are the word's letters).
pub fn lexicon_from_words(words: &[String]) -> Result<Lexicon> {
    let entries = words
        .iter()
        .map(|w| {
            let phones = w
                .chars()
                .map(|c| {
                    phone_index(c).ok_or_else(|| {
                        Error::InvalidArg(format!("word {w:?}: no phone for {c:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((w.clone(), phones))
        })
        .collect::<Result<Vec<_>>>()?;
    Lexicon::new(entries, PHONES.len())
}

/// Grapheme symbols (one per phone, in inventory order) for the CTC models.
pub fn grapheme_symbols() -> Vec<String> {
    PHONES.iter().map(|&(c, _, _)| c.to_string()).collect()
}

/// Grapheme label sequence for a word (indices in [1, 12], 0 = blank).
pub fn word_labels(word: &str) -> Result<Vec<usize>> {
    word.chars()
        .map(|c| {
            phone_index(c)
                .map(|p| p + 1)
                .ok_or_else(|| Error::InvalidArg(format!("no grapheme for {c:?}")))
        })
        .collect()
}

fn render_phone(
    phone: usize,
    speaker: &SynthSpeaker,
    jitter: (f64, f64),
    sr: f64,
    n_samples: usize,
    rng: &mut SplitMix64,
) -> Vec<f64> {
    let (_, f1, f2) = PHONES[phone];
    let offset = speaker.formant_offsets[phone];
    let c1 = (f1 + offset + jitter.0).max(120.0);
    let c2 = (f2 + offset + jitter.1).max(300.0);
    let f0 = speaker.base_pitch * rng.uniform(0.97, 1.03);
    let bw = 130.0;

    // Harmonic stack shaped by two Gaussian formant peaks.
    let n_harm = (3800.0 / f0).floor() as usize;
    let mut harmonics = Vec::with_capacity(n_harm);
    for h in 1..=n_harm {
        let f = h as f64 * f0;
        let amp = (-((f - c1) * (f - c1)) / (2.0 * bw * bw)).exp()
            + (-((f - c2) * (f - c2)) / (2.0 * bw * bw)).exp();
        let phase = rng.uniform(0.0, 2.0 * PI);
        if amp > 1e-4 {
            harmonics.push((f, amp, phase));
        }
    }
    let mut out = vec![0.0; n_samples];
    for (f, amp, phase) in harmonics {
        let w = 2.0 * PI * f / sr;
        for (i, o) in out.iter_mut().enumerate() {
            *o += amp * (w * i as f64 + phase).sin();
        }
    }
    out
}

fn render_utterance(
    word: &str,
    speaker: &SynthSpeaker,
    profile: &SeverityProfile,
    cfg: &CorpusConfig,
    rng: &mut SplitMix64,
) -> Result<(Waveform, Vec<PhoneSeg>, f64)> {
    let sr = cfg.sample_rate as f64;
    // Formant jitter is one systematic per-utterance displacement: every
    // phone in the utterance shifts together, so the distortion is
    // structured (and severity knowledge bounds its spread).
    let jitter = (
        rng.normal() * profile.formant_jitter_std,
        rng.normal() * profile.formant_jitter_std,
    );
    let mut samples: Vec<f64> = Vec::new();
    let mut segs = Vec::new();
    for c in word.chars() {
        let phone =
            phone_index(c).ok_or_else(|| Error::InvalidArg(format!("no phone for {c:?}")))?;
        let dur = cfg.phone_duration_s * profile.tempo_stretch * rng.uniform(0.9, 1.1);
        let n = (dur * sr).round().max(1.0) as usize;
        let start = samples.len();
        samples.extend(render_phone(phone, speaker, jitter, sr, n, rng));
        segs.push(PhoneSeg {
            phone,
            start,
            end: samples.len(),
        });
    }

    // Amplitude tremor: slow modulation dipping to (1 − depth).
    let trem_hz = rng.uniform(4.0, 7.0);
    let trem_phase = rng.uniform(0.0, 2.0 * PI);
    let depth = profile.amplitude_tremor_depth;
    for (i, s) in samples.iter_mut().enumerate() {
        let m = 1.0 - depth * (0.5 - 0.5 * (2.0 * PI * trem_hz * i as f64 / sr + trem_phase).cos());
        *s *= m;
    }

    // Normalize speech RMS, then add noise at the profile SNR.
    let rms = (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt();
    if rms > 0.0 {
        let target = 0.1;
        samples.iter_mut().for_each(|x| *x *= target / rms);
    }
    let snr_db = profile.noise_snr_db + rng.uniform(-1.0, 1.0);
    let sig_power: f64 = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
    let noise_power = sig_power / 10f64.powf(snr_db / 10.0);
    let noise_amp = noise_power.sqrt();
    let mut noise_energy = 0.0;
    let mut sig_energy = 0.0;
    for s in samples.iter_mut() {
        let n = rng.normal() * noise_amp;
        sig_energy += *s * *s;
        noise_energy += n * n;
        *s += n;
    }
    let measured_snr = 10.0 * (sig_energy / noise_energy.max(1e-300)).log10();

    // Channel gain, then a safety clamp to keep samples in [-1, 1].
    samples.iter_mut().for_each(|x| *x *= speaker.channel_gain);
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.95 {
        let c = 0.95 / peak;
        samples.iter_mut().for_each(|x| *x *= c);
    }

    Ok((Waveform::new(samples, cfg.sample_rate)?, segs, measured_snr))
}

/// Generates the full corpus: speakers × severity levels × words × blocks,
/// deterministic under the seed (per-utterance substreams).
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.speakers_per_severity == 0 {
        return Err(Error::InvalidArg("need ≥ 1 speaker per severity".into()));
    }
    if cfg.words.is_empty() {
        return Err(Error::EmptyInput("corpus word list".into()));
    }
    validate_profiles(&cfg.profiles)?;
    let lexicon = lexicon_from_words(&cfg.words)?;

    let mut speakers = Vec::new();
    let mut spk_rng = SplitMix64::substream(cfg.seed, 0xC0_5EED);
    for severity in SeverityLevel::ALL {
        let total = cfg.speakers_per_severity + cfg.heldout_per_severity;
        for k in 0..total {
            let heldout = k >= cfg.speakers_per_severity;
            let prefix = if heldout { "X" } else { "S" };
            // Per-speaker vocal-tract warp dominates the per-phone wobble, so
            // speaker identity carries a consistent, invertible formant shift.
            let warp = spk_rng.uniform(0.86, 1.14);
            speakers.push(SynthSpeaker {
                speaker_id: format!("{prefix}{}{:02}", severity.code(), k),
                severity,
                base_pitch: spk_rng.uniform(100.0, 240.0),
                formant_offsets: (0..PHONES.len())
                    .map(|p| {
                        (warp - 1.0) * (PHONES[p].1 + PHONES[p].2) / 2.0
                            + spk_rng.normal() * 20.0
                    })
                    .collect(),
                channel_gain: spk_rng.uniform(0.4, 1.0),
                heldout,
            });
        }
    }

    let mut utterances = Vec::new();
    let mut utt_index: u64 = 0;
    for speaker in &speakers {
        let profile = cfg.profiles[speaker.severity.index()];
        for block in BlockTag::ALL {
            for word in &cfg.words {
                let mut rng = SplitMix64::substream(cfg.seed, 0x07_7E00 + utt_index);
                let (wave, segmentation, snr_db) =
                    render_utterance(word, speaker, &profile, cfg, &mut rng)?;
                utterances.push(Utterance {
                    id: format!("{}_{}_{}", speaker.speaker_id, block.code(), word),
                    speaker_id: speaker.speaker_id.clone(),
                    severity: speaker.severity,
                    word: word.clone(),
                    block,
                    wave,
                    segmentation,
                    snr_db,
                });
                utt_index += 1;
            }
        }
    }
    Ok(Corpus {
        speakers,
        utterances,
        lexicon,
        sample_rate: cfg.sample_rate,
    })
}

/// Number of analysis frames the front-end will produce for `n_samples`.
pub fn frame_count(n_samples: usize, sample_rate: u32) -> usize {
    let frame = (crate::features::DEFAULT_FRAME_LENGTH_S * sample_rate as f64).round() as usize;
    let shift = (crate::features::DEFAULT_FRAME_SHIFT_S * sample_rate as f64).round() as usize;
    if n_samples < frame {
        0
    } else {
        1 + (n_samples - frame) / shift
    }
}

/// Frame-level tri-state / monophone targets from the exact segmentation:
/// each frame takes the phone containing its center sample, with the phone
/// split into begin/mid/end thirds by relative position. `n_frames` clamps
/// to the front-end's frame count (off-by-one differences are tolerated).
pub fn make_targets(utt: &Utterance, n_frames: usize) -> Result<FrameTargets> {
    targets_from_segmentation(
        &utt.segmentation,
        utt.wave.samples.len(),
        utt.wave.sample_rate,
        utt.severity,
        n_frames,
    )
    .map_err(|e| match e {
        Error::EmptyInput(_) => Error::EmptyInput(format!("segmentation of {}", utt.id)),
        other => other,
    })
}

/// Target construction from a bare segmentation (manifest path).
pub fn targets_from_segmentation(
    segmentation: &[PhoneSeg],
    total_samples: usize,
    sample_rate: u32,
    severity: SeverityLevel,
    n_frames: usize,
) -> Result<FrameTargets> {
    if segmentation.is_empty() {
        return Err(Error::EmptyInput("segmentation".into()));
    }
    let sr = sample_rate as f64;
    let frame = (crate::features::DEFAULT_FRAME_LENGTH_S * sr).round() as usize;
    let shift = (crate::features::DEFAULT_FRAME_SHIFT_S * sr).round() as usize;
    let last = segmentation.last().unwrap();
    if last.end != total_samples || segmentation[0].start != 0 {
        return Err(Error::InvalidArg(
            "segmentation does not tile the utterance duration".into(),
        ));
    }
    let mut tri = Vec::with_capacity(n_frames);
    let mut mono = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let center = (t * shift + frame / 2).min(total_samples - 1);
        let seg = segmentation
            .iter()
            .find(|s| center >= s.start && center < s.end)
            .unwrap_or(last);
        let pos = (center - seg.start) as f64 / (seg.end - seg.start).max(1) as f64;
        let third = ((pos * 3.0).floor() as usize).min(2);
        tri.push(crate::decoder::STATES_PER_PHONE * seg.phone + third);
        mono.push(seg.phone);
    }
    Ok(FrameTargets {
        tri,
        mono,
        severity,
    })
}

/// Speed-perturbation augmentation: every utterance is re-rendered at each
/// factor with ids suffixed `_sp<factor>`; segmentations are rescaled and
/// re-tiled exactly.
pub fn augment(corpus: &Corpus, factors: &[f64]) -> Result<Corpus> {
    if factors.is_empty() {
        return Err(Error::EmptyInput("augmentation factors".into()));
    }
    let mut utterances = Vec::with_capacity(corpus.utterances.len() * factors.len());
    for utt in &corpus.utterances {
        for &factor in factors {
            let wave = speed_perturb(&utt.wave, factor)?;
            let out_len = wave.samples.len();
            let mut segmentation = Vec::with_capacity(utt.segmentation.len());
            let mut prev_end = 0usize;
            for (i, seg) in utt.segmentation.iter().enumerate() {
                let end = if i == utt.segmentation.len() - 1 {
                    out_len
                } else {
                    ((seg.end as f64 / factor).round() as usize)
                        .clamp(prev_end + 1, out_len.saturating_sub(1).max(prev_end + 1))
                };
                segmentation.push(PhoneSeg {
                    phone: seg.phone,
                    start: prev_end,
                    end,
                });
                prev_end = end;
            }
            utterances.push(Utterance {
                id: format!("{}_sp{}", utt.id, factor),
                speaker_id: utt.speaker_id.clone(),
                severity: utt.severity,
                word: utt.word.clone(),
                block: utt.block,
                wave,
                segmentation,
                snr_db: utt.snr_db,
            });
        }
    }
    Ok(Corpus {
        speakers: corpus.speakers.clone(),
        utterances,
        lexicon: corpus.lexicon.clone(),
        sample_rate: corpus.sample_rate,
    })
}

/// Corpus manifest: one line per utterance,
/// `utt_id<TAB>speaker<TAB>severity<TAB>word<TAB>block<TAB>wav_path<TAB>segmentation`
/// where segmentation is a CSV of `phone:start:end` in samples.
pub fn write_manifest(path: &Path, corpus: &Corpus, wav_dir: &str) -> Result<()> {
    let mut body = String::new();
    for u in &corpus.utterances {
        let seg: Vec<String> = u
            .segmentation
            .iter()
            .map(|s| format!("{}:{}:{}", PHONES[s.phone].0, s.start, s.end))
            .collect();
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}/{}.wav\t{}\n",
            u.id,
            u.speaker_id,
            u.severity.code(),
            u.word,
            u.block.code(),
            wav_dir,
            u.id,
            seg.join(",")
        ));
    }
    std::fs::write(path, body)?;
    Ok(())
}

/// A manifest row (audio is loaded separately from `wav_path`).
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker_id: String,
    pub severity: SeverityLevel,
    pub word: String,
    pub block: BlockTag,
    pub wav_path: String,
    pub segmentation: Vec<PhoneSeg>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let ctx = path.display().to_string();
    let body = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in body.lines() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::format(&ctx, format!("expected 7 fields: {line:?}")));
        }
        let segmentation = f[6]
            .split(',')
            .map(|tok| {
                let parts: Vec<&str> = tok.split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::format(&ctx, format!("bad segment {tok:?}")));
                }
                let phone = phone_index(parts[0].chars().next().unwrap_or('?'))
                    .ok_or_else(|| Error::format(&ctx, format!("bad phone {:?}", parts[0])))?;
                let start = parts[1]
                    .parse()
                    .map_err(|e| Error::format(&ctx, format!("bad start: {e}")))?;
                let end = parts[2]
                    .parse()
                    .map_err(|e| Error::format(&ctx, format!("bad end: {e}")))?;
                Ok(PhoneSeg { phone, start, end })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ManifestEntry {
            id: f[0].to_string(),
            speaker_id: f[1].to_string(),
            severity: SeverityLevel::from_code(f[2])?,
            word: f[3].to_string(),
            block: BlockTag::from_code(f[4])?,
            wav_path: f[5].to_string(),
            segmentation,
        });
    }
    Ok(out)
}
