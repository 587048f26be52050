//! Sequence model: spliced-frame encoder with a CTC grapheme head and a
//! mean-pooled severity head, plus CTC scoring of fixed hypotheses for
//! second-pass rescoring.
//!
//! The CTC loss is the log-domain forward-backward recursion over
//! blank-augmented label sequences; gradients come from posterior occupation
//! counts (∂L/∂logit = softmax − occupancy). Blank is always index 0.

use crate::embedder::SeverityLevel;
use crate::netcore::{
    interpolate_losses, log_softmax, softmax, softmax_ce, weights, Activation, LossValue, Mat,
    NetParams, Target, TrainConfig,
};
use crate::util::rng::SplitMix64;
use crate::{Error, Result};
use std::collections::BTreeMap;

pub const BLANK: usize = 0;
/// Splice radius: ±3 frames of context per encoder input.
pub const DEFAULT_SPLICE: usize = 3;
/// Global gradient-norm clip for sequence training; CTC produces occasional
/// large per-utterance gradients that otherwise derail plain SGD.
pub const GRAD_CLIP: f64 = 5.0;

/// Log-sum-exp of two log-domain values.
fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    lse2(lse2(a, b), c)
}

/// Label sequences hold grapheme indices in [1, V]; blank never appears.
pub fn validate_labels(labels: &[usize], vocab_size: usize) -> Result<()> {
    for &l in labels {
        if l == BLANK || l > vocab_size {
            return Err(Error::InvalidArg(format!(
                "label {l} outside grapheme range [1, {vocab_size}]"
            )));
        }
    }
    Ok(())
}

/// Minimum frame count that can align `labels`: |labels| plus one blank
/// between each adjacent repeat.
pub fn min_frames(labels: &[usize]) -> usize {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + repeats
}

/// CTC loss (−log total alignment probability) and gradient w.r.t. logits.
///
/// `logits` is T×(V+1) with blank at column 0; `labels` must avoid blanks.
pub fn ctc_loss(logits: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    let t_frames = logits.rows();
    let n_sym = logits.cols();
    if n_sym < 2 {
        return Err(Error::InvalidArg("CTC needs blank + ≥1 grapheme".into()));
    }
    validate_labels(labels, n_sym - 1)?;
    let needed = min_frames(labels);
    if t_frames < needed.max(1) {
        return Err(Error::SequenceTooShort {
            frames: t_frames,
            needed,
        });
    }

    // Extended sequence l' = [b, l1, b, l2, ..., lL, b].
    let ext_len = 2 * labels.len() + 1;
    let ext = |s: usize| -> usize {
        if s % 2 == 0 {
            BLANK
        } else {
            labels[s / 2]
        }
    };
    let lsm: Vec<Vec<f64>> = (0..t_frames).map(|t| log_softmax(logits.row(t))).collect();

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![vec![neg; ext_len]; t_frames];
    alpha[0][0] = lsm[0][BLANK];
    if ext_len > 1 {
        alpha[0][1] = lsm[0][ext(1)];
    }
    for t in 1..t_frames {
        for s in 0..ext_len {
            let stay = alpha[t - 1][s];
            let step = if s >= 1 { alpha[t - 1][s - 1] } else { neg };
            let skip = if s >= 2 && ext(s) != BLANK && ext(s) != ext(s - 2) {
                alpha[t - 1][s - 2]
            } else {
                neg
            };
            alpha[t][s] = lse3(stay, step, skip) + lsm[t][ext(s)];
        }
    }
    let log_p = if ext_len > 1 {
        lse2(
            alpha[t_frames - 1][ext_len - 1],
            alpha[t_frames - 1][ext_len - 2],
        )
    } else {
        alpha[t_frames - 1][0]
    };
    if log_p == f64::NEG_INFINITY {
        return Err(Error::SequenceTooShort {
            frames: t_frames,
            needed,
        });
    }

    // Beta excludes the emission at t, so alpha + beta is the full path mass
    // through (t, s).
    let mut beta = vec![vec![neg; ext_len]; t_frames];
    beta[t_frames - 1][ext_len - 1] = 0.0;
    if ext_len > 1 {
        beta[t_frames - 1][ext_len - 2] = 0.0;
    }
    for t in (0..t_frames - 1).rev() {
        for s in 0..ext_len {
            let stay = beta[t + 1][s] + lsm[t + 1][ext(s)];
            let step = if s + 1 < ext_len {
                beta[t + 1][s + 1] + lsm[t + 1][ext(s + 1)]
            } else {
                neg
            };
            let skip = if s + 2 < ext_len && ext(s + 2) != BLANK && ext(s + 2) != ext(s) {
                beta[t + 1][s + 2] + lsm[t + 1][ext(s + 2)]
            } else {
                neg
            };
            beta[t][s] = lse3(stay, step, skip);
        }
    }

    // Gradient: softmax − per-symbol occupancy.
    let mut grad = Mat::zeros(t_frames, n_sym);
    for t in 0..t_frames {
        let mut occ_log = vec![neg; n_sym];
        for s in 0..ext_len {
            let k = ext(s);
            occ_log[k] = lse2(occ_log[k], alpha[t][s] + beta[t][s]);
        }
        let p = softmax(logits.row(t));
        for k in 0..n_sym {
            let occ = if occ_log[k] == f64::NEG_INFINITY {
                0.0
            } else {
                (occ_log[k] - log_p).exp()
            };
            grad.set(t, k, p[k] - occ);
        }
    }
    Ok((-log_p, grad))
}

/// Interpolated sequence-model multitask loss. With (ctc, seve) provided this
/// is the two-term β form; supplying an external attention-decoder loss value
/// through the `aed` slot enables the three-term α form. A nonzero weight on
/// a missing component is an error, never a silent renormalization.
pub fn mtl_loss_seq(
    ctc: f64,
    seve: Option<f64>,
    aed: Option<f64>,
    w: &BTreeMap<String, f64>,
) -> Result<LossValue> {
    let mut components = BTreeMap::new();
    components.insert("ctc".to_string(), ctc);
    if let Some(s) = seve {
        components.insert("seve".to_string(), s);
    }
    if let Some(a) = aed {
        components.insert("aed".to_string(), a);
    }
    interpolate_losses(w, &components)
}

/// β₁=β₂=½ over (ctc, seve).
pub fn beta_weights() -> BTreeMap<String, f64> {
    weights(&[("ctc", 0.5), ("seve", 0.5)])
}

/// α₁=α₂=α₃=⅓ over (ctc, aed, seve).
pub fn alpha_weights() -> BTreeMap<String, f64> {
    weights(&[("ctc", 1.0 / 3.0), ("aed", 1.0 / 3.0), ("seve", 1.0 / 3.0)])
}

/// Spliced-frame encoder with CTC and severity heads.
#[derive(Debug, Clone)]
pub struct CtcModel {
    pub encoder: NetParams,
    pub ctc_head: NetParams,
    pub seve_head: NetParams,
    pub splice: usize,
    pub feat_dim: usize,
}

impl CtcModel {
    pub fn vocab_size(&self) -> usize {
        self.ctc_head.output_dim() - 1
    }
}

/// Encoder sizing.
#[derive(Debug, Clone)]
pub struct SeqArch {
    pub hidden: Vec<usize>,
    pub vocab_size: usize,
    pub splice: usize,
}

impl SeqArch {
    pub fn new(vocab_size: usize) -> Self {
        SeqArch {
            hidden: vec![128, 128, 128],
            vocab_size,
            splice: DEFAULT_SPLICE,
        }
    }
}

pub fn init_seq_model(arch: &SeqArch, feat_dim: usize, seed: u64) -> Result<CtcModel> {
    let mut rng = SplitMix64::substream(seed, 0x5E90);
    let in_dim = feat_dim * (2 * arch.splice + 1);
    let mut dims = vec![in_dim];
    dims.extend(&arch.hidden);
    let acts = vec![Activation::Relu; arch.hidden.len()];
    let encoder = NetParams::glorot(&dims, &acts, &mut rng)?;
    let h = *arch.hidden.last().unwrap();
    let ctc_head = NetParams::glorot(&[h, arch.vocab_size + 1], &[Activation::Linear], &mut rng)?;
    // The severity module is a small MLP over the pooled encoder output, so
    // severity structure settles into its own weights instead of forcing the
    // shared representation into severity-aligned axes.
    let seve_head = NetParams::glorot(
        &[h, 32, 4],
        &[Activation::Relu, Activation::Linear],
        &mut rng,
    )?;
    Ok(CtcModel {
        encoder,
        ctc_head,
        seve_head,
        splice: arch.splice,
        feat_dim,
    })
}

/// Context-spliced input for frame `t` (edges clamped).
pub fn splice_frame(feats: &Mat, t: usize, splice: usize) -> Vec<f64> {
    let t_frames = feats.rows() as isize;
    let mut x = Vec::with_capacity(feats.cols() * (2 * splice + 1));
    for dt in -(splice as isize)..=(splice as isize) {
        let src = (t as isize + dt).clamp(0, t_frames - 1) as usize;
        x.extend_from_slice(feats.row(src));
    }
    x
}

/// Per-frame encoder outputs (T×H).
pub fn encode(model: &CtcModel, feats: &Mat) -> Result<Mat> {
    if feats.cols() != model.feat_dim {
        return Err(Error::dim("encoder features", model.feat_dim, feats.cols()));
    }
    let h = model.encoder.output_dim();
    let mut out = Mat::zeros(feats.rows(), h);
    for t in 0..feats.rows() {
        let x = splice_frame(feats, t, model.splice);
        let fwd = model.encoder.forward(&x)?;
        out.row_mut(t).copy_from_slice(fwd.output());
    }
    Ok(out)
}

/// CTC logits (T×(V+1)) for an utterance.
pub fn ctc_logits(model: &CtcModel, feats: &Mat) -> Result<Mat> {
    let enc = encode(model, feats)?;
    let mut logits = Mat::zeros(enc.rows(), model.ctc_head.output_dim());
    for t in 0..enc.rows() {
        let fwd = model.ctc_head.forward(enc.row(t))?;
        logits.row_mut(t).copy_from_slice(fwd.output());
    }
    Ok(logits)
}

/// Forward-algorithm log-probability of an exact hypothesis; equals
/// −ctc_loss. An infeasible hypothesis scores −∞ (unrescorable) rather than
/// erroring, so rescoring can keep the first-pass score.
pub fn ctc_score(model: &CtcModel, feats: &Mat, hypothesis: &[usize]) -> Result<f64> {
    validate_labels(hypothesis, model.vocab_size())?;
    let logits = ctc_logits(model, feats)?;
    if logits.rows() < min_frames(hypothesis).max(1) {
        return Ok(f64::NEG_INFINITY);
    }
    let (loss, _) = ctc_loss(&logits, hypothesis)?;
    Ok(-loss)
}

/// One sequence-training utterance.
#[derive(Debug, Clone)]
pub struct SeqExample {
    pub utt_id: String,
    pub feats: Mat,
    pub labels: Vec<usize>,
    pub severity: Option<SeverityLevel>,
}

pub use crate::embedder::TrainLog;

/// Trains the sequence model on CTC (+ severity CE when `use_severity`).
/// Each utterance is one gradient microbatch; `cfg.batch_size` utterances are
/// accumulated per SGD step.
pub fn train_seq(
    data: &[SeqExample],
    cfg: &TrainConfig,
    use_severity: bool,
    arch: &SeqArch,
) -> Result<(CtcModel, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("train_seq: no utterances".into()));
    }
    for ex in data {
        validate_labels(&ex.labels, arch.vocab_size)?;
        if use_severity && ex.severity.is_none() {
            return Err(Error::InvalidArg(format!(
                "use_severity set but utterance {} has no severity label",
                ex.utt_id
            )));
        }
    }
    let feat_dim = data[0].feats.cols();
    let mut model = init_seq_model(arch, feat_dim, cfg.seed)?;
    let w = if cfg.loss_weights.is_empty() {
        if use_severity {
            beta_weights()
        } else {
            weights(&[("ctc", 1.0)])
        }
    } else {
        cfg.loss_weights.clone()
    };
    let (w_ctc, w_seve) = (
        w.get("ctc").copied().unwrap_or(0.0),
        w.get("seve").copied().unwrap_or(0.0),
    );

    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let order =
            crate::util::rng::shuffled_indices(cfg.seed, 0x5E70_0000 + epoch as u64, data.len());
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.encoder.zero_grads();
            model.ctc_head.zero_grads();
            model.seve_head.zero_grads();
            let inv = 1.0 / batch.len() as f64;
            for &ui in batch {
                let ex = &data[ui];
                let t_frames = ex.feats.rows();
                // Forward pass, keeping per-frame traces for backward.
                let traces: Vec<_> = (0..t_frames)
                    .map(|t| {
                        let x = splice_frame(&ex.feats, t, model.splice);
                        model.encoder.forward(&x)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let h = model.encoder.output_dim();
                let mut logits = Mat::zeros(t_frames, model.ctc_head.output_dim());
                let head_traces: Vec<_> = (0..t_frames)
                    .map(|t| {
                        let fwd = model.ctc_head.forward(traces[t].output())?;
                        logits.row_mut(t).copy_from_slice(fwd.output());
                        Ok(fwd)
                    })
                    .collect::<Result<Vec<_>>>()?;

                let (l_ctc, d_logits) = ctc_loss(&logits, &ex.labels)?;
                let mut d_enc = vec![vec![0.0; h]; t_frames];
                for t in 0..t_frames {
                    let mut d: Vec<f64> = d_logits.row(t).to_vec();
                    d.iter_mut().for_each(|g| *g *= w_ctc * inv);
                    let back = model.ctc_head.backward(&head_traces[t], &d);
                    for (acc, g) in d_enc[t].iter_mut().zip(&back.d_input) {
                        *acc += g;
                    }
                }

                // Severity branch over mean-pooled encoder outputs.
                let l_seve = if use_severity && w_seve > 0.0 {
                    let mut pooled = vec![0.0; h];
                    for tr in &traces {
                        for (p, v) in pooled.iter_mut().zip(tr.output()) {
                            *p += v;
                        }
                    }
                    pooled.iter_mut().for_each(|p| *p /= t_frames as f64);
                    let sev = ex.severity.expect("validated above");
                    let hf = model.seve_head.forward(&pooled)?;
                    let (l, mut d) = softmax_ce(hf.output(), Target::Class(sev.index()))?;
                    d.iter_mut().for_each(|g| *g *= w_seve * inv);
                    let back = model.seve_head.backward(&hf, &d);
                    for row in d_enc.iter_mut() {
                        for (acc, g) in row.iter_mut().zip(&back.d_input) {
                            *acc += g / t_frames as f64;
                        }
                    }
                    Some(l)
                } else {
                    None
                };

                for t in 0..t_frames {
                    model.encoder.backward(&traces[t], &d_enc[t]);
                }
                let lv = mtl_loss_seq(l_ctc, l_seve, None, &w)?;
                if !lv.scalar.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss on utterance {}",
                        ex.utt_id
                    )));
                }
                epoch_loss += lv.scalar;
            }
            let norm = (model.encoder.grad_sq_norm()
                + model.ctc_head.grad_sq_norm()
                + model.seve_head.grad_sq_norm())
            .sqrt();
            if norm > GRAD_CLIP {
                let c = GRAD_CLIP / norm;
                model.encoder.scale_grads(c);
                model.ctc_head.scale_grads(c);
                model.seve_head.scale_grads(c);
            }
            model.encoder.sgd_step(cfg.learning_rate)?;
            model.ctc_head.sgd_step(cfg.learning_rate)?;
            if use_severity && w_seve > 0.0 {
                model.seve_head.sgd_step(cfg.learning_rate)?;
            }
        }
        log.epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok((model, log))
}

/// Grapheme vocabulary file: one symbol per line, line number + 1 = index
/// (0 is reserved for blank).
pub fn write_vocab(path: &std::path::Path, symbols: &[String]) -> Result<()> {
    let mut body = String::new();
    for s in symbols {
        body.push_str(s);
        body.push('\n');
    }
    std::fs::write(path, body)?;
    Ok(())
}

pub fn read_vocab(path: &std::path::Path) -> Result<Vec<String>> {
    let body = std::fs::read_to_string(path)?;
    Ok(body.lines().map(|l| l.to_string()).collect())
}

/// Checkpoint for the sequence model.
pub mod ckpt {
    use super::*;
    use crate::netcore::ckpt as netckpt;
    use crate::util::io::*;
    use std::io::{BufReader, BufWriter};
    use std::path::Path;

    pub fn save(path: &Path, model: &CtcModel) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        netckpt::write_header(&mut f)?;
        write_u32(&mut f, model.splice as u32)?;
        write_u32(&mut f, model.feat_dim as u32)?;
        netckpt::write_params_body(&mut f, &model.encoder)?;
        netckpt::write_params_body(&mut f, &model.ctc_head)?;
        netckpt::write_params_body(&mut f, &model.seve_head)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CtcModel> {
        let ctx = path.display().to_string();
        let mut f = BufReader::new(std::fs::File::open(path)?);
        netckpt::read_header(&mut f, &ctx)?;
        let splice = read_u32(&mut f)? as usize;
        let feat_dim = read_u32(&mut f)? as usize;
        let encoder = netckpt::read_params_body(&mut f, &ctx)?;
        let ctc_head = netckpt::read_params_body(&mut f, &ctx)?;
        let seve_head = netckpt::read_params_body(&mut f, &ctx)?;
        Ok(CtcModel {
            encoder,
            ctc_head,
            seve_head,
            splice,
            feat_dim,
        })
    }
}
