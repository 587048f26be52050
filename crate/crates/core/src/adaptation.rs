//! Speaker-severity adaptive training, unsupervised test-time LHUC
//! adaptation, and KLD-regularized severity-dependent fine-tuning.
//!
//! The KLD-regularized loss follows the standard convention: the effective
//! per-frame target distribution is (1−λ)·onehot + λ·p_SI, so the gradient
//! w.r.t. the logits is softmax(logits) − [(1−λ)·onehot + λ·p_SI]. Taken
//! literally, the printed regularizer sign would push the adapted model away
//! from the SI output distribution, contradicting its stated purpose; we
//! treat that as a typo and implement the cited soft-target form.

use crate::embedder::SeverityLevel;
use crate::hybrid_am::{
    build_frames, forward_am, run_epoch, speaker_table, trunk_forward_frame, xi, xi_deriv,
    AmArch, AmExample, AmOptions, EngineSelect, HybridDnn, LhucParams, TrainLog,
    SHUFFLE_TAG_R, SHUFFLE_TAG_TRUNK,
};
use crate::netcore::{softmax, softmax_ce, Mat, Target, TrainConfig};
use crate::{Error, Result};

/// Test-time adaptation settings. `pseudo_label_pass = true` derives pseudo
/// tri-state targets from one first-pass argmax decode (unsupervised);
/// `false` adapts on caller-supplied targets (oracle/diagnostic mode).
#[derive(Debug, Clone)]
pub struct AdaptConfig {
    pub lambda: f64,
    pub adapt_epochs: u32,
    pub adapt_lr: f64,
    pub pseudo_label_pass: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lambda: 0.5,
            adapt_epochs: 5,
            adapt_lr: 0.2,
            pseudo_label_pass: true,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArg(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(self.adapt_lr > 0.0) {
            return Err(Error::InvalidArg("adapt_lr must be > 0".into()));
        }
        Ok(())
    }
}

/// r-vector pass settings for speaker-severity adaptive training.
#[derive(Debug, Clone)]
pub struct SatConfig {
    /// Learning rate for the r-vector pass; 0 freezes all LHUC vectors.
    pub r_learning_rate: f64,
}

impl Default for SatConfig {
    fn default() -> Self {
        SatConfig {
            r_learning_rate: 0.1,
        }
    }
}

/// Speaker-severity adaptive training: each epoch interleaves a trunk/head
/// update pass with an r-vector pass that moves every training speaker's
/// r_spkr and all four severity vectors.
pub fn sat_train(
    data: &[AmExample],
    cfg: &TrainConfig,
    opts: &AmOptions,
    arch: &AmArch,
    sat: &SatConfig,
) -> Result<(HybridDnn, LhucParams, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("sat_train: no utterances".into()));
    }
    let speakers = speaker_table(data);
    let frames = build_frames(data, opts.use_aux, &speakers)?;
    let input_dim = frames[0].x.len();
    let mut model = crate::hybrid_am::init_model(arch, input_dim, cfg.seed)?;
    let mut lhuc = LhucParams::zeros(arch.hidden_width);
    for s in &speakers {
        lhuc.speaker.insert(s.clone(), vec![0.0; arch.hidden_width]);
    }

    let base = if cfg.loss_weights.is_empty() {
        crate::hybrid_am::default_mtl_weights()
    } else {
        cfg.loss_weights.clone()
    };
    let w = crate::hybrid_am::effective_weights(&base, opts.use_seve_head);

    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        // Pass A: trunk and heads, r vectors fixed.
        let order = crate::util::rng::shuffled_indices(
            cfg.seed,
            SHUFFLE_TAG_TRUNK + epoch as u64,
            frames.len(),
        );
        let loss = run_epoch(
            &mut model,
            &mut lhuc,
            &speakers,
            &frames,
            &order,
            &w,
            cfg,
            true,
            &EngineSelect {
                trunk_heads: true,
                r_spkr: false,
                r_seve: false,
            },
            0.0,
        )?;
        log.epoch_losses.push(loss);

        // Pass B: speaker-wise and severity-wise r updates, trunk frozen.
        let order = crate::util::rng::shuffled_indices(
            cfg.seed,
            SHUFFLE_TAG_R + epoch as u64,
            frames.len(),
        );
        run_epoch(
            &mut model,
            &mut lhuc,
            &speakers,
            &frames,
            &order,
            &w,
            cfg,
            true,
            &EngineSelect {
                trunk_heads: false,
                r_spkr: true,
                r_seve: true,
            },
            sat.r_learning_rate,
        )?;
    }
    Ok((model, lhuc, log))
}

/// One utterance of adaptation data for a test speaker.
#[derive(Debug, Clone)]
pub struct AdaptUtterance {
    pub feats: Mat,
    pub aux: Option<Vec<f64>>,
}

/// Unsupervised test-time adaptation of a single new speaker's r_spkr.
///
/// The trunk, heads, severity vectors and every other speaker's vector are
/// left untouched: only the returned r_spkr moves, trained by full-batch
/// gradient descent on tri-state CE against pseudo targets from one
/// first-pass decode (r_seve fixed at the assessed severity's vector).
/// Returns the adapted vector and the per-epoch mean loss.
pub fn adapt_speaker(
    model: &HybridDnn,
    lhuc: &LhucParams,
    utterances: &[AdaptUtterance],
    assessed: SeverityLevel,
    cfg: &AdaptConfig,
    oracle_targets: Option<&[Vec<usize>]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    if utterances.is_empty() {
        return Err(Error::EmptyInput("adapt_speaker: no utterances".into()));
    }
    let dim = model.hidden_dim();
    if lhuc.dim != dim {
        return Err(Error::dim("adapt_speaker LHUC dim", dim, lhuc.dim));
    }
    let mut r_spkr = vec![0.0; dim];
    let r_seve = lhuc.severity_vec(assessed).to_vec();
    if cfg.adapt_epochs == 0 {
        return Ok((r_spkr, Vec::new()));
    }

    // Pseudo targets from one first-pass decode with the identity r_spkr.
    let targets: Vec<Vec<usize>> = match (cfg.pseudo_label_pass, oracle_targets) {
        (false, Some(t)) => {
            if t.len() != utterances.len() {
                return Err(Error::dim("oracle targets", utterances.len(), t.len()));
            }
            t.to_vec()
        }
        (false, None) => {
            return Err(Error::InvalidArg(
                "pseudo_label_pass=false requires oracle targets".into(),
            ))
        }
        (true, _) => {
            let mut scratch = LhucParams::zeros(dim);
            scratch.severity[assessed.index()] = r_seve.clone();
            scratch.speaker.insert("__new__".into(), r_spkr.clone());
            utterances
                .iter()
                .map(|u| {
                    let post = forward_am(
                        model,
                        &u.feats,
                        u.aux.as_deref(),
                        Some((&scratch, "__new__", assessed)),
                    )?;
                    Ok((0..post.tri.rows())
                        .map(|t| {
                            let row = post.tri.row(t);
                            let mut arg = 0;
                            for (i, v) in row.iter().enumerate() {
                                if *v > row[arg] {
                                    arg = i;
                                }
                            }
                            arg
                        })
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    // Work on a clone so gradient buffers never touch the caller's model.
    let mut work = model.clone();
    let n_frames: usize = utterances.iter().map(|u| u.feats.rows()).sum();
    let mut losses = Vec::with_capacity(cfg.adapt_epochs as usize);
    for _epoch in 0..cfg.adapt_epochs {
        let mut grad = vec![0.0; dim];
        let mut total = 0.0;
        for (u, tgt) in utterances.iter().zip(&targets) {
            let scale: Vec<f64> = (0..dim).map(|i| xi(r_spkr[i]) * xi(r_seve[i])).collect();
            for t in 0..u.feats.rows() {
                let x = match &u.aux {
                    Some(a) => {
                        let mut v = u.feats.row(t).to_vec();
                        v.extend_from_slice(a);
                        v
                    }
                    None => u.feats.row(t).to_vec(),
                };
                let fwd = trunk_forward_frame(&work, &x, Some(&scale))?;
                let top = fwd.output().to_vec();
                let hf = work.tri_head.forward(&top)?;
                let (l, d) = softmax_ce(hf.output(), Target::Class(tgt[t]))?;
                total += l;
                let back_head = work.tri_head.backward(&hf, &d);
                let back = work.trunk.backward(&fwd, &back_head.d_input);
                let d_scale = back.d_scale.expect("scaled forward");
                for i in 0..dim {
                    grad[i] += d_scale[i] * xi(r_seve[i]) * xi_deriv(r_spkr[i]);
                }
            }
        }
        for i in 0..dim {
            r_spkr[i] -= cfg.adapt_lr * grad[i] / n_frames as f64;
        }
        losses.push(total / n_frames as f64);
    }
    Ok((r_spkr, losses))
}

/// Per-frame KLD-regularized loss and gradient w.r.t. the tri-state logits:
/// target q = (1−λ)·onehot + λ·p_si.
pub fn kld_frame_loss(
    logits: &[f64],
    hard_target: usize,
    p_si: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArg(format!("lambda {lambda} outside [0, 1]")));
    }
    if hard_target >= logits.len() {
        return Err(Error::dim("kld hard target", logits.len(), hard_target));
    }
    if p_si.len() != logits.len() {
        return Err(Error::dim("kld p_si", logits.len(), p_si.len()));
    }
    let mut q: Vec<f64> = p_si.iter().map(|&p| lambda * p).collect();
    q[hard_target] += 1.0 - lambda;
    softmax_ce(logits, Target::Soft(&q))
}

/// Severity-dependent fine-tuning from a frozen SI model with KLD
/// regularization toward the SI output distribution. Only the trunk and
/// tri-state head are updated.
pub fn kld_finetune(
    si_model: &HybridDnn,
    subset: &[AmExample],
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<(HybridDnn, TrainLog)> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArg(format!("lambda {lambda} outside [0, 1]")));
    }
    if subset.is_empty() {
        return Err(Error::EmptyInput("kld_finetune: empty subset".into()));
    }
    let use_aux = si_model.input_dim > subset[0].feats.cols();
    let speakers = speaker_table(subset);
    let frames = build_frames(subset, use_aux, &speakers)?;

    // Frozen SI reference distribution p^SI per frame.
    let p_si: Vec<Vec<f64>> = frames
        .iter()
        .map(|fr| {
            let fwd = si_model.trunk.forward(&fr.x)?;
            Ok(softmax(si_model.tri_head.forward(fwd.output())?.output()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model = si_model.clone();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let order = crate::util::rng::shuffled_indices(
            cfg.seed,
            0x1C1D_0000 + epoch as u64,
            frames.len(),
        );
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.trunk.zero_grads();
            model.tri_head.zero_grads();
            let inv = 1.0 / batch.len() as f64;
            for &fi in batch {
                let fr = &frames[fi];
                let fwd = model.trunk.forward(&fr.x)?;
                let top = fwd.output().to_vec();
                let hf = model.tri_head.forward(&top)?;
                let (l, mut d) = kld_frame_loss(hf.output(), fr.tri, &p_si[fi], lambda)?;
                epoch_loss += l;
                d.iter_mut().for_each(|g| *g *= inv);
                let back_head = model.tri_head.backward(&hf, &d);
                model.trunk.backward(&fwd, &back_head.d_input);
            }
            model.trunk.sgd_step(cfg.learning_rate)?;
            model.tri_head.sgd_step(cfg.learning_rate)?;
        }
        log.epoch_losses.push(epoch_loss / frames.len() as f64);
    }
    Ok((model, log))
}
