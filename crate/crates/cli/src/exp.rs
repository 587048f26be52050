//! In-memory experiment pipeline shared by the disk stages, the `ablate`
//! grid, and the acceptance suite.

use crate::config::{ExperimentConfig, SeveritySource};
use anyhow::{anyhow, bail, Context, Result};
use seva_core::corpus::{self, Corpus, CorpusConfig, Utterance};
use seva_core::decoder::{self, NBestList};
use seva_core::embedder::{self, EmbedderNet, LabeledBases, SeverityLevel};
use seva_core::evaluate::{self, ScorePair, ScoredResult};
use seva_core::features::{self, SpectralBases};
use seva_core::hybrid_am::{self, AmArch, AmExample, AmOptions, HybridDnn, LhucParams};
use seva_core::netcore::{Mat, TrainConfig};
use seva_core::seqmodel::{self, CtcModel, SeqArch, SeqExample};
use seva_core::util::parallel::par_map;
use std::collections::BTreeMap;

/// Generated corpus with per-utterance front-end outputs.
pub struct Dataset {
    pub corpus: Corpus,
    pub feats: BTreeMap<String, Mat>,
    pub bases: BTreeMap<String, SpectralBases>,
}

impl Dataset {
    pub fn feats_of(&self, id: &str) -> Result<&Mat> {
        self.feats
            .get(id)
            .ok_or_else(|| anyhow!("no features for utterance {id}"))
    }
}

pub fn corpus_config(cfg: &ExperimentConfig, seed: u64) -> CorpusConfig {
    CorpusConfig {
        speakers_per_severity: cfg.corpus.speakers_per_severity,
        heldout_per_severity: cfg.corpus.heldout_per_severity,
        words: cfg.words(),
        seed,
        sample_rate: 16000,
        profiles: corpus::default_profiles(),
        phone_duration_s: cfg.corpus.phone_duration_ms / 1000.0,
    }
}

/// Replaces the training split (B1 ∪ B3 of non-held-out speakers) with its
/// speed-perturbed copies; test and held-out utterances stay unaugmented.
pub fn augment_train_split(c: Corpus, factors: &[f64]) -> Result<Corpus> {
    let heldout: Vec<String> = c
        .speakers
        .iter()
        .filter(|s| s.heldout)
        .map(|s| s.speaker_id.clone())
        .collect();
    let is_train =
        |u: &Utterance| u.block.is_train() && !heldout.contains(&u.speaker_id);
    let (train, rest): (Vec<Utterance>, Vec<Utterance>) =
        c.utterances.into_iter().partition(|u| is_train(u));
    let train_corpus = Corpus {
        speakers: c.speakers.clone(),
        utterances: train,
        lexicon: c.lexicon.clone(),
        sample_rate: c.sample_rate,
    };
    let aug = corpus::augment(&train_corpus, factors)?;
    let mut utterances = aug.utterances;
    utterances.extend(rest);
    Ok(Corpus {
        speakers: c.speakers,
        utterances,
        lexicon: c.lexicon,
        sample_rate: c.sample_rate,
    })
}

/// Generates the corpus and runs the acoustic front-end over every utterance.
pub fn build_dataset(cfg: &ExperimentConfig, seed: u64, workers: usize) -> Result<Dataset> {
    let mut c = corpus::generate_corpus(&corpus_config(cfg, seed))?;
    if cfg.corpus.augment {
        c = augment_train_split(c, &cfg.corpus.augment_factors)?;
    }
    let outputs = par_map(&c.utterances, workers, |u| front_end(cfg, u));
    let mut feats = BTreeMap::new();
    let mut bases = BTreeMap::new();
    for (u, out) in c.utterances.iter().zip(outputs) {
        let (f, b) = out.with_context(|| format!("front-end failed on {}", u.id))?;
        feats.insert(u.id.clone(), f);
        bases.insert(u.id.clone(), b);
    }
    Ok(Dataset {
        corpus: c,
        feats,
        bases,
    })
}

/// FBK+Δ features and spectral bases for one utterance.
pub fn front_end(
    cfg: &ExperimentConfig,
    utt: &Utterance,
) -> seva_core::Result<(Mat, SpectralBases)> {
    let wave = match cfg.features.vad_threshold_db {
        Some(db) => features::energy_vad(&utt.wave, db)?,
        None => utt.wave.clone(),
    };
    let spec = features::stft(
        &wave,
        features::DEFAULT_FRAME_LENGTH_S,
        features::DEFAULT_FRAME_SHIFT_S,
    )?;
    let mut feats = features::fbank_delta(&spec, features::DEFAULT_N_MELS)?;
    if cfg.features.mean_normalize {
        features::mean_normalize(&mut feats);
    }
    let bases = features::svd_spectral_bases(&spec, features::DEFAULT_SPECTRAL_BASES)?;
    Ok((feats, bases))
}

/// Embedder outputs: trained net, per-utterance aux features, per-speaker
/// severity assessments (from each speaker's B2 data).
pub struct EmbedderArtifacts {
    pub net: EmbedderNet,
    pub aux: BTreeMap<String, Vec<f64>>,
    pub assessed: BTreeMap<String, (SeverityLevel, [f64; 4])>,
}

pub fn run_embedder(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<EmbedderArtifacts> {
    let train: Vec<LabeledBases> = ds
        .corpus
        .train_utterances()
        .map(|u| LabeledBases {
            utterance_id: u.id.clone(),
            bases: ds.bases[&u.id].flattened(),
            severity: u.severity,
            speaker: u.speaker_id.clone(),
        })
        .collect();
    let tc = TrainConfig::new(
        cfg.embedder.learning_rate,
        cfg.embedder.epochs,
        cfg.embedder.batch_size,
        seed,
    );
    let (net, _log) = embedder::train_embedder(&train, &tc)?;

    let mut raw = BTreeMap::new();
    for u in &ds.corpus.utterances {
        raw.insert(u.id.clone(), embedder::extract_aux(&net, &ds.bases[&u.id])?);
    }
    let train_ids: Vec<&str> = ds.corpus.train_utterances().map(|u| u.id.as_str()).collect();
    let aux = standardize_aux(raw, &train_ids);

    let mut assessed = BTreeMap::new();
    for spk in &ds.corpus.speakers {
        let b2: Vec<SpectralBases> = ds
            .corpus
            .utterances
            .iter()
            .filter(|u| u.speaker_id == spk.speaker_id && u.block == corpus::BlockTag::B2)
            .map(|u| ds.bases[&u.id].clone())
            .collect();
        if b2.is_empty() {
            continue;
        }
        let (level, post) = embedder::assess_severity(&net, &b2)?;
        assessed.insert(spk.speaker_id.clone(), (level, post));
    }
    Ok(EmbedderArtifacts { net, aux, assessed })
}

/// Builds AM training examples from the train split.
pub fn am_examples(
    ds: &Dataset,
    emb: Option<&EmbedderArtifacts>,
    use_aux: bool,
) -> Result<Vec<AmExample>> {
    let mut out = Vec::new();
    for u in ds.corpus.train_utterances() {
        let feats = ds.feats_of(&u.id)?;
        let targets = corpus::make_targets(u, feats.rows())?;
        let aux = if use_aux {
            let e = emb.ok_or_else(|| anyhow!("auxiliary features require the embedder"))?;
            Some(e.aux[&u.id].clone())
        } else {
            None
        };
        out.push(AmExample {
            utt_id: u.id.clone(),
            feats: feats.clone(),
            aux,
            targets,
            speaker: u.speaker_id.clone(),
        });
    }
    Ok(out)
}

/// Trained hybrid system plus its decode-time assets.
pub struct HybridArtifacts {
    pub model: HybridDnn,
    pub lhuc: LhucParams,
    pub priors: Vec<f64>,
    pub log: hybrid_am::TrainLog,
}

pub struct AmRunSettings {
    pub options: AmOptions,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub sat: bool,
    pub r_learning_rate: f64,
}

impl AmRunSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        AmRunSettings {
            options: AmOptions {
                use_aux: cfg.am.use_aux,
                use_seve_head: cfg.am.use_seve_head,
                use_lhuc_seve: cfg.am.use_lhuc_seve,
            },
            hidden_width: cfg.am.hidden_width,
            hidden_layers: cfg.am.hidden_layers,
            epochs: cfg.am.epochs,
            learning_rate: cfg.am.learning_rate,
            batch_size: cfg.am.batch_size,
            sat: cfg.am.lhuc_sat,
            r_learning_rate: cfg.am.r_learning_rate,
        }
    }
}

pub fn run_hybrid(
    ds: &Dataset,
    emb: Option<&EmbedderArtifacts>,
    settings: &AmRunSettings,
    seed: u64,
) -> Result<HybridArtifacts> {
    let data = am_examples(ds, emb, settings.options.use_aux)?;
    let n_states = ds.corpus.lexicon.n_states();
    let arch = AmArch {
        hidden_width: settings.hidden_width,
        hidden_layers: settings.hidden_layers,
        n_tri: n_states,
        n_mono: ds.corpus.lexicon.n_phones(),
    };
    let tc = TrainConfig::new(
        settings.learning_rate,
        settings.epochs,
        settings.batch_size,
        seed,
    );
    let (model, lhuc, log) = if settings.sat {
        seva_core::adaptation::sat_train(
            &data,
            &tc,
            &settings.options,
            &arch,
            &seva_core::adaptation::SatConfig {
                r_learning_rate: settings.r_learning_rate,
            },
        )?
    } else {
        hybrid_am::train_am(&data, &tc, &settings.options, &arch)?
    };
    let priors = decoder::estimate_priors(
        data.iter().flat_map(|ex| ex.targets.tri.iter().copied()),
        n_states,
    );
    Ok(HybridArtifacts {
        model,
        lhuc,
        priors,
        log,
    })
}

/// Standardizes auxiliary features per dimension using train-split
/// statistics, so they sit on the same scale as the acoustic features they
/// are appended to.
pub fn standardize_aux(
    raw: BTreeMap<String, Vec<f64>>,
    train_ids: &[&str],
) -> BTreeMap<String, Vec<f64>> {
    let dim = raw.values().next().map_or(0, |v| v.len());
    let mut mean = vec![0.0f64; dim];
    let mut count = 0.0f64;
    for id in train_ids {
        if let Some(v) = raw.get(*id) {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
            count += 1.0;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count.max(1.0));
    let mut var = vec![0.0f64; dim];
    for id in train_ids {
        if let Some(v) = raw.get(*id) {
            for (s, (x, m)) in var.iter_mut().zip(v.iter().zip(&mean)) {
                *s += (x - m) * (x - m);
            }
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|s| (s / count.max(1.0)).sqrt().max(1e-6))
        .collect();
    raw.into_iter()
        .map(|(id, v)| {
            let z = v
                .iter()
                .zip(mean.iter().zip(&std))
                .map(|(x, (m, s))| (x - m) / s)
                .collect();
            (id, z)
        })
        .collect()
}

/// Picks the severity used for LHUC selection at decode/adapt time.
pub fn severity_for(
    source: SeveritySource,
    speaker_id: &str,
    oracle: SeverityLevel,
    emb: Option<&EmbedderArtifacts>,
) -> Result<SeverityLevel> {
    match source {
        SeveritySource::Oracle => Ok(oracle),
        SeveritySource::Assessed => {
            let e = emb.ok_or_else(|| anyhow!("assessed severity requires the embedder"))?;
            Ok(e.assessed
                .get(speaker_id)
                .ok_or_else(|| anyhow!("no assessment for speaker {speaker_id}"))?
                .0)
        }
    }
}

/// First-pass decodes a set of utterances against the hybrid system.
pub fn decode_utterances(
    ds: &Dataset,
    emb: Option<&EmbedderArtifacts>,
    hy: &HybridArtifacts,
    utts: &[&Utterance],
    severity_source: SeveritySource,
    nbest: usize,
    workers: usize,
) -> Result<Vec<NBestList>> {
    let jobs: Vec<(String, SeverityLevel)> = utts
        .iter()
        .map(|u| {
            severity_for(severity_source, &u.speaker_id, u.severity, emb)
                .map(|sev| (u.id.clone(), sev))
        })
        .collect::<Result<Vec<_>>>()?;
    let indexed: Vec<(usize, &Utterance, SeverityLevel)> = utts
        .iter()
        .enumerate()
        .map(|(i, u)| (i, *u, jobs[i].1))
        .collect();
    let results = par_map(&indexed, workers, |(_, u, sev)| {
        decode_one(ds, emb, hy, u, *sev, nbest)
    });
    results
        .into_iter()
        .zip(utts)
        .map(|(r, u)| r.with_context(|| format!("decoding {}", u.id)))
        .collect()
}

fn decode_one(
    ds: &Dataset,
    emb: Option<&EmbedderArtifacts>,
    hy: &HybridArtifacts,
    u: &Utterance,
    severity: SeverityLevel,
    nbest: usize,
) -> Result<NBestList> {
    let feats = ds.feats_of(&u.id)?;
    let needs_aux = hy.model.input_dim > feats.cols();
    let aux_vec;
    let aux = if needs_aux {
        let e = emb.ok_or_else(|| anyhow!("model expects aux features"))?;
        aux_vec = e.aux[&u.id].clone();
        Some(aux_vec.as_slice())
    } else {
        None
    };
    // Zero speaker vectors are the exact identity, so LHUC is applied
    // whenever the speaker is known to the checkpoint.
    let lhuc = hy
        .lhuc
        .speaker_vec(&u.speaker_id)
        .map(|_| (&hy.lhuc, u.speaker_id.as_str(), severity));
    let post = hybrid_am::forward_am(&hy.model, feats, aux, lhuc)?;
    Ok(decoder::decode_nbest(
        &u.id,
        &post.tri,
        &ds.corpus.lexicon,
        &hy.priors,
        nbest,
    )?)
}

/// Scores first-pass 1-best hypotheses against the corpus references.
pub fn score_one_best(ds: &Dataset, lists: &[NBestList]) -> Result<ScoredResult> {
    let by_id: BTreeMap<&str, &Utterance> = ds
        .corpus
        .utterances
        .iter()
        .map(|u| (u.id.as_str(), u))
        .collect();
    let pairs: Vec<ScorePair> = lists
        .iter()
        .map(|l| {
            let u = by_id
                .get(l.utterance_id.as_str())
                .ok_or_else(|| anyhow!("unknown utterance {}", l.utterance_id))?;
            Ok(ScorePair {
                utt_id: u.id.clone(),
                severity: u.severity,
                reference: vec![u.word.clone()],
                hypothesis: l
                    .hypotheses
                    .first()
                    .map(|h| vec![h.word.clone()]),
                tag: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate::wer(&pairs, false)?)
}

/// Scores explicit (utterance, word) hypotheses.
pub fn score_words(ds: &Dataset, hyps: &BTreeMap<String, String>) -> Result<ScoredResult> {
    let pairs: Vec<ScorePair> = hyps
        .iter()
        .map(|(id, word)| {
            let u = ds
                .corpus
                .utterances
                .iter()
                .find(|u| &u.id == id)
                .ok_or_else(|| anyhow!("unknown utterance {id}"))?;
            Ok(ScorePair {
                utt_id: u.id.clone(),
                severity: u.severity,
                reference: vec![u.word.clone()],
                hypothesis: Some(vec![word.clone()]),
                tag: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate::wer(&pairs, false)?)
}

/// Builds sequence-model training examples from the train split
/// (optionally folding in High-severity B2 data).
pub fn seq_examples(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<SeqExample>> {
    let mut out = Vec::new();
    let mut push = |u: &Utterance| -> Result<()> {
        out.push(SeqExample {
            utt_id: u.id.clone(),
            feats: ds.feats_of(&u.id)?.clone(),
            labels: corpus::word_labels(&u.word)?,
            severity: Some(u.severity),
        });
        Ok(())
    };
    for u in ds.corpus.train_utterances() {
        push(u)?;
    }
    if cfg.seq.fold_in_high_b2 {
        for u in ds.corpus.test_utterances() {
            if u.severity == SeverityLevel::High {
                push(u)?;
            }
        }
    }
    Ok(out)
}

pub fn run_seq(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    use_severity: bool,
    seed: u64,
) -> Result<(CtcModel, seqmodel::TrainLog)> {
    let data = seq_examples(ds, cfg)?;
    let arch = SeqArch {
        hidden: cfg.seq.hidden.clone(),
        vocab_size: corpus::PHONES.len(),
        splice: cfg.seq.splice,
    };
    let tc = TrainConfig::new(
        cfg.seq.learning_rate,
        cfg.seq.epochs,
        cfg.seq.batch_size,
        seed,
    );
    Ok(seqmodel::train_seq(&data, &tc, use_severity, &arch)?)
}

/// Closed-vocabulary recognition with the sequence model alone: the word
/// whose grapheme sequence maximizes the CTC forward score.
pub fn seq_recognize(
    ds: &Dataset,
    model: &CtcModel,
    utts: &[&Utterance],
    workers: usize,
) -> Result<BTreeMap<String, String>> {
    let word_label_table: Vec<(String, Vec<usize>)> = ds
        .corpus
        .lexicon
        .words()
        .map(|w| corpus::word_labels(w).map(|l| (w.to_string(), l)))
        .collect::<seva_core::Result<Vec<_>>>()?;
    let jobs: Vec<&Utterance> = utts.to_vec();
    let results = par_map(&jobs, workers, |u| -> seva_core::Result<(String, String)> {
        let feats = ds.feats.get(&u.id).expect("features exist");
        let logits = seqmodel::ctc_logits(model, feats)?;
        let mut best: Option<(&str, f64)> = None;
        for (word, labels) in &word_label_table {
            if logits.rows() < seqmodel::min_frames(labels).max(1) {
                continue;
            }
            let (loss, _) = seqmodel::ctc_loss(&logits, labels)?;
            // Length-normalized closed-set decision removes the bias toward
            // short label sequences.
            let score = -loss / labels.len() as f64;
            // Ties break lexicographically (table is sorted by word).
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((word, score));
            }
        }
        let (word, _) = best.ok_or(seva_core::Error::EmptyFeasibleSet {
            frames: logits.rows(),
        })?;
        Ok((u.id.clone(), word.to_string()))
    });
    let mut out = BTreeMap::new();
    for r in results {
        let (id, word) = r?;
        out.insert(id, word);
    }
    Ok(out)
}

/// Adapts every target speaker from their B2 utterances and returns the LHUC
/// table extended with their adapted vectors, plus the adaptation log lines.
pub fn adapt_speakers(
    ds: &Dataset,
    emb: &EmbedderArtifacts,
    hy: &HybridArtifacts,
    cfg: &ExperimentConfig,
    speakers: &[String],
    severity_source: SeveritySource,
) -> Result<(LhucParams, Vec<String>)> {
    let acfg = seva_core::adaptation::AdaptConfig {
        lambda: cfg.adaptation.lambda,
        adapt_epochs: cfg.adaptation.adapt_epochs,
        adapt_lr: cfg.adaptation.adapt_lr,
        pseudo_label_pass: cfg.adaptation.pseudo_label_pass,
    };
    let mut lhuc = hy.lhuc.clone();
    let mut log_lines = Vec::new();
    for spk in speakers {
        let utts: Vec<&Utterance> = ds
            .corpus
            .utterances
            .iter()
            .filter(|u| &u.speaker_id == spk && u.block == corpus::BlockTag::B2)
            .collect();
        if utts.is_empty() {
            bail!("speaker {spk} has no B2 utterances to adapt on");
        }
        let oracle = utts[0].severity;
        let severity = severity_for(severity_source, spk, oracle, Some(emb))?;
        let needs_aux = hy.model.input_dim > ds.feats_of(&utts[0].id)?.cols();
        let data: Vec<seva_core::adaptation::AdaptUtterance> = utts
            .iter()
            .map(|u| {
                Ok(seva_core::adaptation::AdaptUtterance {
                    feats: ds.feats_of(&u.id)?.clone(),
                    aux: if needs_aux {
                        Some(emb.aux[&u.id].clone())
                    } else {
                        None
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (r_spkr, losses) =
            seva_core::adaptation::adapt_speaker(&hy.model, &lhuc, &data, severity, &acfg, None)?;
        for (epoch, loss) in losses.iter().enumerate() {
            log_lines.push(format!("{}\t{}\t{:.6}", epoch + 1, spk, loss));
        }
        lhuc.speaker.insert(spk.clone(), r_spkr);
    }
    Ok((lhuc, log_lines))
}
