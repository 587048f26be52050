//! Disk-based pipeline stages behind the CLI subcommands.
//!
//! Every stage writes its artifacts under `<out>/<stage>/` followed by a
//! `stage.meta` content hash; stages verify their upstream hashes before
//! reading, refusing missing or stale artifacts with an error that names the
//! producing subcommand.

use crate::config::{
    require_stage, write_stage_meta, AdaptTarget, BaseModel, DecodeSource, EvalSource,
    ExperimentConfig, SeveritySource, Stage,
};
use crate::exp::{self};
use anyhow::{anyhow, bail, Context, Result};
use seva_core::corpus::{self, BlockTag, ManifestEntry};
use seva_core::decoder::{self, Lexicon, NBestList};
use seva_core::embedder::{self, SeverityLevel};
use seva_core::evaluate::{self, ScorePair};
use seva_core::features::archive;
use seva_core::hybrid_am::{self, AmExample, HybridDnn, LhucParams};
use seva_core::netcore::{Mat, TrainConfig};
use seva_core::seqmodel;
use seva_core::util::parallel::par_map;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn stage_dir(out: &Path, stage: Stage) -> Result<PathBuf> {
    let dir = out.join(stage.dir_name());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Records the resolved config for the run directory.
pub fn write_resolved_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.resolved.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn write_train_log(path: &Path, losses: &[f64]) -> Result<()> {
    let mut body = String::new();
    for (epoch, loss) in losses.iter().enumerate() {
        body.push_str(&format!("{}\t{:.6}\n", epoch + 1, loss));
    }
    std::fs::write(path, body)?;
    Ok(())
}

pub fn gen_corpus(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dir = stage_dir(out, Stage::Corpus)?;
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let mut c = corpus::generate_corpus(&exp::corpus_config(cfg, cfg.seed))?;
    if cfg.corpus.augment {
        c = exp::augment_train_split(c, &cfg.corpus.augment_factors)?;
    }
    for u in &c.utterances {
        seva_core::features::wav::write_wav(&wav_dir.join(format!("{}.wav", u.id)), &u.wave)?;
    }
    corpus::write_manifest(&dir.join("manifest.tsv"), &c, "wav")?;
    c.lexicon.save(&dir.join("lexicon.tsv"))?;
    write_stage_meta(out, Stage::Corpus, cfg)
}

/// Manifest plus lexicon, as read back from the corpus stage.
pub struct CorpusOnDisk {
    pub entries: Vec<ManifestEntry>,
    pub lexicon: Lexicon,
    pub wav_root: PathBuf,
}

impl CorpusOnDisk {
    pub fn load(out: &Path) -> Result<Self> {
        let dir = out.join(Stage::Corpus.dir_name());
        Ok(CorpusOnDisk {
            entries: corpus::read_manifest(&dir.join("manifest.tsv"))?,
            lexicon: Lexicon::load(&dir.join("lexicon.tsv"))?,
            wav_root: dir,
        })
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| anyhow!("utterance {id} not in manifest"))
    }

    pub fn is_heldout(&self, speaker_id: &str) -> bool {
        speaker_id.starts_with('X')
    }

    pub fn train_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.block.is_train() && !self.is_heldout(&e.speaker_id))
    }

    pub fn test_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.block == BlockTag::B2 && !self.is_heldout(&e.speaker_id))
    }
}

pub fn extract(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    require_stage(out, Stage::Corpus, cfg)?;
    let disk = CorpusOnDisk::load(out)?;
    let dir = stage_dir(out, Stage::Features)?;

    let outputs = par_map(&disk.entries, cfg.workers.max(1), |e| {
        let wave = seva_core::features::wav::read_wav(&disk.wav_root.join(&e.wav_path))?;
        let wave = match cfg.features.vad_threshold_db {
            Some(db) => seva_core::features::energy_vad(&wave, db)?,
            None => wave,
        };
        let spec = seva_core::features::stft(
            &wave,
            seva_core::features::DEFAULT_FRAME_LENGTH_S,
            seva_core::features::DEFAULT_FRAME_SHIFT_S,
        )?;
        let mut feats =
            seva_core::features::fbank_delta(&spec, seva_core::features::DEFAULT_N_MELS)?;
        if cfg.features.mean_normalize {
            seva_core::features::mean_normalize(&mut feats);
        }
        let bases = seva_core::features::svd_spectral_bases(
            &spec,
            seva_core::features::DEFAULT_SPECTRAL_BASES,
        )?;
        Ok::<_, seva_core::Error>((feats, bases))
    });

    let mut feat_entries = Vec::new();
    let mut base_entries = Vec::new();
    let mut sv_lines = String::new();
    for (e, r) in disk.entries.iter().zip(outputs) {
        let (feats, bases) = r.with_context(|| format!("front-end failed on {}", e.id))?;
        feat_entries.push((e.id.clone(), feats));
        sv_lines.push_str(&format!(
            "{}\t{}\n",
            e.id,
            bases
                .singular_values
                .iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(",")
        ));
        base_entries.push((e.id.clone(), bases.bases));
    }
    archive::write_archive(&dir.join("feats.sevf"), &feat_entries)?;
    archive::write_archive(&dir.join("bases.sevf"), &base_entries)?;
    std::fs::write(dir.join("singular_values.tsv"), sv_lines)?;
    write_stage_meta(out, Stage::Features, cfg)
}

fn load_archive_map(path: &Path) -> Result<BTreeMap<String, Mat>> {
    Ok(archive::read_archive(path)?.into_iter().collect())
}

pub fn train_embedder_stage(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    require_stage(out, Stage::Features, cfg)?;
    let disk = CorpusOnDisk::load(out)?;
    let bases = load_archive_map(&out.join("features/bases.sevf"))?;
    let dir = stage_dir(out, Stage::Embedder)?;

    let train: Vec<embedder::LabeledBases> = disk
        .train_entries()
        .map(|e| {
            Ok(embedder::LabeledBases {
                utterance_id: e.id.clone(),
                bases: bases
                    .get(&e.id)
                    .ok_or_else(|| anyhow!("no bases for {}", e.id))?
                    .data()
                    .to_vec(),
                severity: e.severity,
                speaker: e.speaker_id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tc = TrainConfig::new(
        cfg.embedder.learning_rate,
        cfg.embedder.epochs,
        cfg.embedder.batch_size,
        cfg.seed,
    );
    let (net, log) = embedder::train_embedder(&train, &tc)?;
    embedder::ckpt::save(&dir.join("embedder.ckpt"), &net)?;
    write_train_log(&dir.join("train.log"), &log.epoch_losses)?;

    // Auxiliary features for every utterance, standardized on the train split.
    let mut raw = BTreeMap::new();
    for e in &disk.entries {
        let flat = bases[&e.id].data();
        raw.insert(e.id.clone(), embedder::extract_aux_flat(&net, flat)?);
    }
    let train_ids: Vec<&str> = disk.train_entries().map(|e| e.id.as_str()).collect();
    let aux = crate::exp::standardize_aux(raw, &train_ids);
    let aux_entries: Vec<(String, Mat)> = disk
        .entries
        .iter()
        .map(|e| {
            let v = aux[&e.id].clone();
            (e.id.clone(), Mat::from_flat(1, v.len(), v))
        })
        .collect();
    archive::write_archive(&dir.join("aux.sevf"), &aux_entries)?;

    // Unsupervised per-speaker assessment from B2 data.
    let mut speakers: Vec<String> = disk.entries.iter().map(|e| e.speaker_id.clone()).collect();
    speakers.sort();
    speakers.dedup();
    let mut table = String::new();
    for spk in &speakers {
        let b2: Vec<Vec<f64>> = disk
            .entries
            .iter()
            .filter(|e| &e.speaker_id == spk && e.block == BlockTag::B2)
            .map(|e| bases[&e.id].data().to_vec())
            .collect();
        if b2.is_empty() {
            continue;
        }
        let (level, post) = embedder::assess_severity_flat(&net, &b2)?;
        table.push_str(&format!(
            "{spk}\t{}\t{}\n",
            level.code(),
            post.iter()
                .map(|p| format!("{p:.6}"))
                .collect::<Vec<_>>()
                .join(",")
        ));
    }
    std::fs::write(dir.join("assess.tsv"), table)?;
    write_stage_meta(out, Stage::Embedder, cfg)
}

fn load_assessments(out: &Path) -> Result<BTreeMap<String, SeverityLevel>> {
    let path = out.join("embedder/assess.tsv");
    let body = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut map = BTreeMap::new();
    for line in body.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            bail!("malformed assess.tsv line: {line:?}");
        }
        map.insert(f[0].to_string(), SeverityLevel::from_code(f[1])?);
    }
    Ok(map)
}

fn build_am_examples(
    disk: &CorpusOnDisk,
    feats: &BTreeMap<String, Mat>,
    aux: Option<&BTreeMap<String, Mat>>,
) -> Result<Vec<AmExample>> {
    disk.train_entries()
        .map(|e| {
            let f = feats
                .get(&e.id)
                .ok_or_else(|| anyhow!("no features for {}", e.id))?;
            let total = e.segmentation.last().unwrap().end;
            let targets = corpus::targets_from_segmentation(
                &e.segmentation,
                total,
                16000,
                e.severity,
                f.rows(),
            )?;
            let aux_vec = match aux {
                Some(map) => Some(
                    map.get(&e.id)
                        .ok_or_else(|| anyhow!("no aux features for {}", e.id))?
                        .data()
                        .to_vec(),
                ),
                None => None,
            };
            Ok(AmExample {
                utt_id: e.id.clone(),
                feats: f.clone(),
                aux: aux_vec,
                targets,
                speaker: e.speaker_id.clone(),
            })
        })
        .collect()
}

pub fn train_am_stage(cfg: &ExperimentConfig, out: &Path, sat: bool) -> Result<()> {
    require_stage(out, Stage::Features, cfg)?;
    if cfg.am.use_aux {
        require_stage(out, Stage::Embedder, cfg)?;
    }
    let disk = CorpusOnDisk::load(out)?;
    let feats = load_archive_map(&out.join("features/feats.sevf"))?;
    let aux = if cfg.am.use_aux {
        Some(load_archive_map(&out.join("embedder/aux.sevf"))?)
    } else {
        None
    };
    let data = build_am_examples(&disk, &feats, aux.as_ref())?;

    let arch = hybrid_am::AmArch {
        hidden_width: cfg.am.hidden_width,
        hidden_layers: cfg.am.hidden_layers,
        n_tri: disk.lexicon.n_states(),
        n_mono: disk.lexicon.n_phones(),
    };
    let tc = TrainConfig::new(cfg.am.learning_rate, cfg.am.epochs, cfg.am.batch_size, cfg.seed);
    let opts = hybrid_am::AmOptions {
        use_aux: cfg.am.use_aux,
        use_seve_head: cfg.am.use_seve_head,
        use_lhuc_seve: cfg.am.use_lhuc_seve,
    };
    let stage = if sat { Stage::Sat } else { Stage::Am };
    let (model, lhuc, log) = if sat {
        seva_core::adaptation::sat_train(
            &data,
            &tc,
            &opts,
            &arch,
            &seva_core::adaptation::SatConfig {
                r_learning_rate: cfg.am.r_learning_rate,
            },
        )?
    } else {
        hybrid_am::train_am(&data, &tc, &opts, &arch)?
    };

    let dir = stage_dir(out, stage)?;
    hybrid_am::ckpt::save(&dir.join("am.ckpt"), &model, &lhuc)?;
    let priors = decoder::estimate_priors(
        data.iter().flat_map(|ex| ex.targets.tri.iter().copied()),
        disk.lexicon.n_states(),
    );
    std::fs::write(
        dir.join("priors.txt"),
        priors
            .iter()
            .map(|p| format!("{p:.12}"))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n",
    )?;
    write_train_log(&dir.join("train.log"), &log.epoch_losses)?;
    write_stage_meta(out, stage, cfg)
}

fn load_priors(path: &Path) -> Result<Vec<f64>> {
    let body = std::fs::read_to_string(path)?;
    body.lines()
        .map(|l| l.parse::<f64>().map_err(|e| anyhow!("bad prior {l:?}: {e}")))
        .collect()
}

fn model_dir_for(source: DecodeSource) -> Stage {
    match source {
        DecodeSource::Am => Stage::Am,
        DecodeSource::Sat => Stage::Sat,
        DecodeSource::Adapt => Stage::Adapt,
    }
}

fn load_model(out: &Path, stage: Stage) -> Result<(HybridDnn, LhucParams, Vec<f64>)> {
    let dir = out.join(stage.dir_name());
    let (model, lhuc) = hybrid_am::ckpt::load(&dir.join("am.ckpt"))?;
    // The adapt stage reuses its base model's priors.
    let priors_path = if dir.join("priors.txt").exists() {
        dir.join("priors.txt")
    } else {
        bail!("missing priors.txt in {}", dir.display());
    };
    Ok((model, lhuc, load_priors(&priors_path)?))
}

pub fn adapt_stage(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let base_stage = match cfg.adaptation.base {
        BaseModel::Am => Stage::Am,
        BaseModel::Sat => Stage::Sat,
    };
    require_stage(out, base_stage, cfg)?;
    require_stage(out, Stage::Embedder, cfg)?;
    let disk = CorpusOnDisk::load(out)?;
    let feats = load_archive_map(&out.join("features/feats.sevf"))?;
    let (model, base_lhuc, priors) = load_model(out, base_stage)?;
    let aux = load_archive_map(&out.join("embedder/aux.sevf"))?;
    let assessments = load_assessments(out)?;

    let mut speakers: Vec<String> = disk
        .entries
        .iter()
        .filter(|e| match cfg.adaptation.speakers {
            AdaptTarget::Heldout => disk.is_heldout(&e.speaker_id),
            AdaptTarget::Test => !disk.is_heldout(&e.speaker_id),
        })
        .map(|e| e.speaker_id.clone())
        .collect();
    speakers.sort();
    speakers.dedup();
    if speakers.is_empty() {
        bail!("no speakers match adaptation.speakers target");
    }

    let acfg = seva_core::adaptation::AdaptConfig {
        lambda: cfg.adaptation.lambda,
        adapt_epochs: cfg.adaptation.adapt_epochs,
        adapt_lr: cfg.adaptation.adapt_lr,
        pseudo_label_pass: cfg.adaptation.pseudo_label_pass,
    };
    let needs_aux = model.input_dim > 160;
    let mut lhuc = base_lhuc.clone();
    let mut log = String::new();
    for spk in &speakers {
        let b2: Vec<&ManifestEntry> = disk
            .entries
            .iter()
            .filter(|e| &e.speaker_id == spk && e.block == BlockTag::B2)
            .collect();
        if b2.is_empty() {
            bail!("speaker {spk} has no B2 utterances to adapt on");
        }
        let severity = match cfg.adaptation.severity {
            SeveritySource::Oracle => b2[0].severity,
            SeveritySource::Assessed => *assessments
                .get(spk)
                .ok_or_else(|| anyhow!("no assessment for {spk}"))?,
        };
        let data: Vec<seva_core::adaptation::AdaptUtterance> = b2
            .iter()
            .map(|e| {
                Ok(seva_core::adaptation::AdaptUtterance {
                    feats: feats
                        .get(&e.id)
                        .ok_or_else(|| anyhow!("no features for {}", e.id))?
                        .clone(),
                    aux: if needs_aux {
                        Some(aux[&e.id].data().to_vec())
                    } else {
                        None
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (r_spkr, losses) =
            seva_core::adaptation::adapt_speaker(&model, &lhuc, &data, severity, &acfg, None)?;
        for (epoch, loss) in losses.iter().enumerate() {
            log.push_str(&format!("{}\t{spk}\t{loss:.6}\n", epoch + 1));
        }
        lhuc.speaker.insert(spk.clone(), r_spkr);
    }

    let dir = stage_dir(out, Stage::Adapt)?;
    hybrid_am::ckpt::save(&dir.join("am.ckpt"), &model, &lhuc)?;
    std::fs::write(
        dir.join("priors.txt"),
        priors
            .iter()
            .map(|p| format!("{p:.12}"))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n",
    )?;
    std::fs::write(dir.join("adapt.log"), log)?;
    write_stage_meta(out, Stage::Adapt, cfg)
}

pub fn train_seq_stage(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    require_stage(out, Stage::Features, cfg)?;
    let disk = CorpusOnDisk::load(out)?;
    let feats = load_archive_map(&out.join("features/feats.sevf"))?;

    let mut data = Vec::new();
    let mut add = |e: &ManifestEntry| -> Result<()> {
        data.push(seqmodel::SeqExample {
            utt_id: e.id.clone(),
            feats: feats
                .get(&e.id)
                .ok_or_else(|| anyhow!("no features for {}", e.id))?
                .clone(),
            labels: corpus::word_labels(&e.word)?,
            severity: Some(e.severity),
        });
        Ok(())
    };
    for e in disk.train_entries() {
        add(e)?;
    }
    if cfg.seq.fold_in_high_b2 {
        for e in disk.test_entries() {
            if e.severity == SeverityLevel::High {
                add(e)?;
            }
        }
    }

    let arch = seqmodel::SeqArch {
        hidden: cfg.seq.hidden.clone(),
        vocab_size: corpus::PHONES.len(),
        splice: cfg.seq.splice,
    };
    let tc = TrainConfig::new(
        cfg.seq.learning_rate,
        cfg.seq.epochs,
        cfg.seq.batch_size,
        cfg.seed,
    );
    let (model, log) = seqmodel::train_seq(&data, &tc, cfg.seq.use_severity, &arch)?;

    let dir = stage_dir(out, Stage::Seq)?;
    seqmodel::ckpt::save(&dir.join("seq.ckpt"), &model)?;
    seqmodel::write_vocab(&dir.join("vocab.txt"), &corpus::grapheme_symbols())?;
    write_train_log(&dir.join("train.log"), &log.epoch_losses)?;
    write_stage_meta(out, Stage::Seq, cfg)
}

/// The utterances the decode stage evaluates, given the model source.
fn eval_entries<'a>(cfg: &ExperimentConfig, disk: &'a CorpusOnDisk) -> Vec<&'a ManifestEntry> {
    match cfg.decode.source {
        DecodeSource::Adapt => disk
            .entries
            .iter()
            .filter(|e| {
                e.block == BlockTag::B2
                    && match cfg.adaptation.speakers {
                        AdaptTarget::Heldout => disk.is_heldout(&e.speaker_id),
                        AdaptTarget::Test => !disk.is_heldout(&e.speaker_id),
                    }
            })
            .collect(),
        _ => disk.test_entries().collect(),
    }
}

pub fn decode_stage(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let model_stage = model_dir_for(cfg.decode.source);
    require_stage(out, model_stage, cfg)?;
    require_stage(out, Stage::Embedder, cfg)?;
    let disk = CorpusOnDisk::load(out)?;
    let feats = load_archive_map(&out.join("features/feats.sevf"))?;
    let (model, lhuc, priors) = load_model(out, model_stage)?;
    let aux = load_archive_map(&out.join("embedder/aux.sevf"))?;
    let assessments = load_assessments(out)?;

    let targets = eval_entries(cfg, &disk);
    if targets.is_empty() {
        bail!("no utterances to decode for this source");
    }
    let needs_aux = model.input_dim > 160;
    let lists = par_map(&targets, cfg.workers.max(1), |e| -> Result<NBestList> {
        let f = feats
            .get(&e.id)
            .ok_or_else(|| anyhow!("no features for {}", e.id))?;
        let severity = match cfg.decode.severity {
            SeveritySource::Oracle => e.severity,
            SeveritySource::Assessed => *assessments
                .get(&e.speaker_id)
                .ok_or_else(|| anyhow!("no assessment for {}", e.speaker_id))?,
        };
        let aux_vec;
        let aux_ref = if needs_aux {
            aux_vec = aux
                .get(&e.id)
                .ok_or_else(|| anyhow!("no aux for {}", e.id))?
                .data()
                .to_vec();
            Some(aux_vec.as_slice())
        } else {
            None
        };
        let sel = lhuc
            .speaker_vec(&e.speaker_id)
            .map(|_| (&lhuc, e.speaker_id.as_str(), severity));
        let post = hybrid_am::forward_am(&model, f, aux_ref, sel)?;
        Ok(decoder::decode_nbest(
            &e.id,
            &post.tri,
            &disk.lexicon,
            &priors,
            cfg.decode.nbest,
        )?)
    });
    let lists: Vec<NBestList> = lists
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .context("first-pass decoding")?;

    let dir = stage_dir(out, Stage::Decode)?;
    decoder::write_nbest(&dir.join("nbest.tsv"), &lists)?;
    write_stage_meta(out, Stage::Decode, cfg)
}

pub fn rescore_stage(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    require_stage(out, Stage::Decode, cfg)?;
    require_stage(out, Stage::Seq, cfg)?;
    let feats = load_archive_map(&out.join("features/feats.sevf"))?;
    let lists = decoder::read_nbest(&out.join("decode/nbest.tsv"))?;
    let model = seqmodel::ckpt::load(&out.join("seq/seq.ckpt"))?;

    let results = par_map(&lists, cfg.workers.max(1), |list| {
        let f = feats
            .get(&list.utterance_id)
            .ok_or_else(|| anyhow!("no features for {}", list.utterance_id))?;
        let ctc = |word: &str| -> seva_core::Result<f64> {
            seqmodel::ctc_score(&model, f, &corpus::word_labels(word)?)
        };
        let scorers: Vec<decoder::Scorer> = vec![("ctc", &ctc)];
        let (best, augmented, failures) =
            decoder::combine_systems(list, &scorers, &cfg.decode.weights)?;
        Ok::<_, anyhow::Error>((best, augmented, failures))
    });

    let dir = stage_dir(out, Stage::Rescore)?;
    let mut best_lines = String::new();
    let mut score_dump = String::new();
    let mut augmented_lists = Vec::new();
    let mut all_failures = Vec::new();
    for r in results {
        let (best, augmented, failures) = r?;
        best_lines.push_str(&format!("{}\t{}\n", augmented.utterance_id, best.word));
        for (rank, hyp) in augmented.hypotheses.iter().enumerate() {
            if let Some(s) = hyp.second_pass_logprobs.get("ctc") {
                score_dump.push_str(&format!(
                    "{}\t{}\t{:.6}\n",
                    augmented.utterance_id,
                    rank + 1,
                    s
                ));
            }
        }
        augmented_lists.push(augmented);
        all_failures.extend(failures);
    }
    std::fs::write(dir.join("best.tsv"), best_lines)?;
    std::fs::write(dir.join("scores.tsv"), score_dump)?;
    decoder::write_nbest(&dir.join("nbest.tsv"), &augmented_lists)?;
    if !all_failures.is_empty() {
        std::fs::write(dir.join("failures.log"), all_failures.join("\n") + "\n")?;
    }
    write_stage_meta(out, Stage::Rescore, cfg)
}

pub fn score_stage(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let upstream = match cfg.eval.source {
        EvalSource::Decode => Stage::Decode,
        EvalSource::Rescore => Stage::Rescore,
    };
    require_stage(out, upstream, cfg)?;
    let disk = CorpusOnDisk::load(out)?;

    let hyps: BTreeMap<String, String> = match cfg.eval.source {
        EvalSource::Decode => decoder::read_nbest(&out.join("decode/nbest.tsv"))?
            .into_iter()
            .filter_map(|l| {
                l.hypotheses
                    .first()
                    .map(|h| (l.utterance_id.clone(), h.word.clone()))
            })
            .collect(),
        EvalSource::Rescore => std::fs::read_to_string(out.join("rescore/best.tsv"))?
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                let (id, word) = l
                    .split_once('\t')
                    .ok_or_else(|| anyhow!("malformed best.tsv line {l:?}"))?;
                Ok((id.to_string(), word.to_string()))
            })
            .collect::<Result<BTreeMap<_, _>>>()?,
    };

    let pairs: Vec<ScorePair> = hyps
        .iter()
        .map(|(id, word)| {
            let e = disk.entry(id)?;
            Ok(ScorePair {
                utt_id: id.clone(),
                severity: e.severity,
                reference: vec![e.word.clone()],
                hypothesis: Some(vec![word.clone()]),
                tag: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = evaluate::wer(&pairs, false)?;

    let dir = stage_dir(out, Stage::Score)?;
    let mut table = evaluate::ScoredResult::table_header();
    table.push('\n');
    table.push_str(&result.table("run"));
    table.push('\n');
    std::fs::write(dir.join("results.txt"), table)?;
    if cfg.eval.per_utt_csv {
        std::fs::write(dir.join("errors.csv"), result.csv())?;
    }
    write_stage_meta(out, Stage::Score, cfg)
}

pub fn ablate_stage(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let report = crate::ablate::run_ablation(cfg, &cfg.ablate.seeds, cfg.workers.max(1))?;
    let dir = out.join("ablate");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("table.txt"), report.table()?)?;
    // Per-system per-seed overall WER for downstream analysis.
    let mut tsv = String::from("system\tseed\twer_all\n");
    for sys in &report.systems {
        for (seed, res) in report.seeds.iter().zip(&sys.per_seed) {
            tsv.push_str(&format!(
                "{}\t{}\t{:.4}\n",
                crate::ablate::system_name(&sys.options),
                seed,
                res.wer_overall()
            ));
        }
    }
    std::fs::write(dir.join("per_seed.tsv"), tsv)?;
    Ok(())
}
