//! Hybrid DNN frame classifier with structured speaker-severity LHUC scaling
//! and a three-way (tri-state / monophone / severity) multitask loss.
//!
//! The LHUC transform scales the post-ReLU output of the first hidden layer:
//! hˢ = ξ(r_spkr) ⊙ ξ(r_seve) ⊙ h with ξ(x) = 2·sigmoid(x), so every scaling
//! factor lies in (0, 4) and zero vectors are the exact identity.

use crate::embedder::SeverityLevel;
use crate::netcore::{
    interpolate_losses, softmax, softmax_ce, weights, Activation, Forward, LossValue, Mat,
    NetParams, Target, TrainConfig,
};
use crate::util::rng::SplitMix64;
use crate::{Error, Result};
use std::collections::BTreeMap;

/// LHUC insertion point: output of hidden layer 1 (trunk layer index 0).
pub const LHUC_LAYER: usize = 0;
/// Auxiliary feature width appended to the 160-dim front-end when enabled.
pub const AUX_DIM: usize = crate::embedder::BOTTLENECK_DIM;

/// ξ(x) = 2·sigmoid(x); ξ(0) = 1, range (0, 2) per factor.
pub fn xi(x: f64) -> f64 {
    2.0 / (1.0 + (-x).exp())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// dξ/dx = ξ(x)·(1 − sigmoid(x)).
pub(crate) fn xi_deriv(x: f64) -> f64 {
    xi(x) * (1.0 - sigmoid(x))
}

/// Element-wise structured LHUC scaling: ξ(r_s) ⊙ ξ(r_v) ⊙ h.
pub fn lhuc_scale(h: &[f64], r_spkr: &[f64], r_seve: &[f64]) -> Result<Vec<f64>> {
    if r_spkr.len() != h.len() {
        return Err(Error::dim("lhuc_scale r_spkr", h.len(), r_spkr.len()));
    }
    if r_seve.len() != h.len() {
        return Err(Error::dim("lhuc_scale r_seve", h.len(), r_seve.len()));
    }
    Ok((0..h.len())
        .map(|i| xi(r_spkr[i]) * xi(r_seve[i]) * h[i])
        .collect())
}

/// Per-speaker and per-severity LHUC scaling vectors (zero = identity).
#[derive(Debug, Clone)]
pub struct LhucParams {
    pub dim: usize,
    pub speaker: BTreeMap<String, Vec<f64>>,
    pub severity: [Vec<f64>; 4],
}

impl LhucParams {
    pub fn zeros(dim: usize) -> Self {
        LhucParams {
            dim,
            speaker: BTreeMap::new(),
            severity: std::array::from_fn(|_| vec![0.0; dim]),
        }
    }

    pub fn severity_vec(&self, s: SeverityLevel) -> &[f64] {
        &self.severity[s.index()]
    }

    pub fn speaker_vec(&self, id: &str) -> Option<&[f64]> {
        self.speaker.get(id).map(|v| v.as_slice())
    }

    /// Combined scale ξ(r_spkr)⊙ξ(r_seve) for a (speaker, severity) pair.
    /// A speaker missing from the table is an error; insert a zero vector
    /// first when adapting a new speaker.
    pub fn combined_scale(&self, speaker: &str, severity: SeverityLevel) -> Result<Vec<f64>> {
        let r_s = self
            .speaker_vec(speaker)
            .ok_or_else(|| Error::InvalidArg(format!("unknown LHUC speaker {speaker:?}")))?;
        let r_v = self.severity_vec(severity);
        Ok((0..self.dim).map(|i| xi(r_s[i]) * xi(r_v[i])).collect())
    }
}

/// Frame-level targets for one utterance; severity is utterance-constant.
#[derive(Debug, Clone)]
pub struct FrameTargets {
    pub tri: Vec<usize>,
    pub mono: Vec<usize>,
    pub severity: SeverityLevel,
}

impl FrameTargets {
    pub fn len(&self) -> usize {
        self.tri.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tri.is_empty()
    }
}

/// The hybrid frame classifier: ReLU trunk with three softmax heads reading
/// the final hidden layer.
#[derive(Debug, Clone)]
pub struct HybridDnn {
    pub trunk: NetParams,
    pub tri_head: NetParams,
    pub mono_head: NetParams,
    pub seve_head: NetParams,
    pub input_dim: usize,
}

impl HybridDnn {
    pub fn n_tri(&self) -> usize {
        self.tri_head.output_dim()
    }

    pub fn n_mono(&self) -> usize {
        self.mono_head.output_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.trunk.layer(LHUC_LAYER).out_dim()
    }
}

/// Network sizing; the desk-scale default is 7 ReLU layers of width 256.
#[derive(Debug, Clone)]
pub struct AmArch {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub n_tri: usize,
    pub n_mono: usize,
}

impl AmArch {
    pub fn new(n_tri: usize, n_mono: usize) -> Self {
        AmArch {
            hidden_width: 256,
            hidden_layers: 7,
            n_tri,
            n_mono,
        }
    }

    pub fn with_width(mut self, w: usize) -> Self {
        self.hidden_width = w;
        self
    }

    pub fn with_layers(mut self, n: usize) -> Self {
        self.hidden_layers = n;
        self
    }
}

pub fn init_model(arch: &AmArch, input_dim: usize, seed: u64) -> Result<HybridDnn> {
    let mut rng = SplitMix64::substream(seed, 0xA101);
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat(arch.hidden_width).take(arch.hidden_layers));
    let acts = vec![Activation::Relu; arch.hidden_layers];
    let trunk = NetParams::glorot(&dims, &acts, &mut rng)?;
    let tri_head = NetParams::glorot(
        &[arch.hidden_width, arch.n_tri],
        &[Activation::Linear],
        &mut rng,
    )?;
    let mono_head = NetParams::glorot(
        &[arch.hidden_width, arch.n_mono],
        &[Activation::Linear],
        &mut rng,
    )?;
    let seve_head = NetParams::glorot(&[arch.hidden_width, 4], &[Activation::Linear], &mut rng)?;
    Ok(HybridDnn {
        trunk,
        tri_head,
        mono_head,
        seve_head,
        input_dim,
    })
}

/// Per-frame posteriors from the three heads (rows sum to 1).
#[derive(Debug, Clone)]
pub struct AmPosteriors {
    pub tri: Mat,
    pub mono: Mat,
    pub seve: Mat,
}

fn assemble_input(model: &HybridDnn, frame: &[f64], aux: Option<&[f64]>) -> Result<Vec<f64>> {
    match aux {
        None => {
            if frame.len() != model.input_dim {
                return Err(Error::dim(
                    "forward_am input (auxiliary features required?)",
                    model.input_dim,
                    frame.len(),
                ));
            }
            Ok(frame.to_vec())
        }
        Some(a) => {
            if frame.len() + a.len() != model.input_dim {
                return Err(Error::dim(
                    "forward_am input with aux",
                    model.input_dim,
                    frame.len() + a.len(),
                ));
            }
            let mut x = Vec::with_capacity(model.input_dim);
            x.extend_from_slice(frame);
            x.extend_from_slice(a);
            Ok(x)
        }
    }
}

/// Frame-classification forward pass over one utterance. The auxiliary vector
/// is broadcast to every frame; the LHUC scale (if given) is applied after
/// hidden layer 1.
pub fn forward_am(
    model: &HybridDnn,
    feats: &Mat,
    aux: Option<&[f64]>,
    lhuc: Option<(&LhucParams, &str, SeverityLevel)>,
) -> Result<AmPosteriors> {
    let scale = match lhuc {
        Some((params, speaker, severity)) => {
            if params.dim != model.hidden_dim() {
                return Err(Error::dim("LHUC dim", model.hidden_dim(), params.dim));
            }
            Some(params.combined_scale(speaker, severity)?)
        }
        None => None,
    };
    let t_frames = feats.rows();
    let mut tri = Mat::zeros(t_frames, model.n_tri());
    let mut mono = Mat::zeros(t_frames, model.n_mono());
    let mut seve = Mat::zeros(t_frames, 4);
    for t in 0..t_frames {
        let x = assemble_input(model, feats.row(t), aux)?;
        let fwd = trunk_forward_frame(model, &x, scale.as_deref())?;
        let top = fwd.output();
        tri.row_mut(t)
            .copy_from_slice(&softmax(model.tri_head.forward(top)?.output()));
        mono.row_mut(t)
            .copy_from_slice(&softmax(model.mono_head.forward(top)?.output()));
        seve.row_mut(t)
            .copy_from_slice(&softmax(model.seve_head.forward(top)?.output()));
    }
    Ok(AmPosteriors { tri, mono, seve })
}

pub(crate) fn trunk_forward_frame(
    model: &HybridDnn,
    x: &[f64],
    scale: Option<&[f64]>,
) -> Result<Forward> {
    match scale {
        Some(s) => model.trunk.forward_scaled(x, LHUC_LAYER, s),
        None => model.trunk.forward(x),
    }
}

/// Default MTL weights ω₁=ω₂=ω₃=⅓ over (tri, mono, seve).
pub fn default_mtl_weights() -> BTreeMap<String, f64> {
    weights(&[("tri", 1.0 / 3.0), ("mono", 1.0 / 3.0), ("seve", 1.0 / 3.0)])
}

/// Redistributes a disabled severity head's weight equally over the enabled
/// heads (tri and mono).
pub fn effective_weights(
    base: &BTreeMap<String, f64>,
    use_seve_head: bool,
) -> BTreeMap<String, f64> {
    let mut w = base.clone();
    if !use_seve_head {
        let mass = w.remove("seve").unwrap_or(0.0);
        let share = mass / 2.0;
        *w.entry("tri".into()).or_insert(0.0) += share;
        *w.entry("mono".into()).or_insert(0.0) += share;
        w.insert("seve".into(), 0.0);
    }
    w
}

/// Multitask loss over per-frame posteriors: each head contributes its mean
/// frame-level cross-entropy, interpolated by `w`.
pub fn mtl_loss_dnn(
    post: &AmPosteriors,
    targets: &FrameTargets,
    w: &BTreeMap<String, f64>,
) -> Result<LossValue> {
    let t_frames = post.tri.rows();
    if targets.tri.len() != t_frames || targets.mono.len() != t_frames {
        return Err(Error::dim(
            "mtl_loss_dnn targets",
            t_frames,
            targets.tri.len(),
        ));
    }
    let mut l_tri = 0.0;
    let mut l_mono = 0.0;
    let mut l_seve = 0.0;
    for t in 0..t_frames {
        l_tri -= post.tri.at(t, targets.tri[t]).ln();
        l_mono -= post.mono.at(t, targets.mono[t]).ln();
        l_seve -= post.seve.at(t, targets.severity.index()).ln();
    }
    let n = t_frames as f64;
    let components = weights(&[
        ("tri", l_tri / n),
        ("mono", l_mono / n),
        ("seve", l_seve / n),
    ]);
    interpolate_losses(w, &components)
}

/// Ablation switches mirroring the severity-incorporation axes.
#[derive(Debug, Clone, Copy, Default)]
pub struct AmOptions {
    pub use_aux: bool,
    pub use_seve_head: bool,
    pub use_lhuc_seve: bool,
}

/// One training utterance: 160-dim front-end features, optional 25-dim aux
/// vector, frame targets, speaker id.
#[derive(Debug, Clone)]
pub struct AmExample {
    pub utt_id: String,
    pub feats: Mat,
    pub aux: Option<Vec<f64>>,
    pub targets: FrameTargets,
    pub speaker: String,
}

pub use crate::embedder::TrainLog;

pub(crate) struct FrameEx {
    pub x: Vec<f64>,
    pub tri: usize,
    pub mono: usize,
    pub sev: usize,
    pub spk: usize,
}

pub(crate) struct EngineSelect {
    pub trunk_heads: bool,
    pub r_spkr: bool,
    pub r_seve: bool,
}

pub(crate) fn speaker_table(data: &[AmExample]) -> Vec<String> {
    let mut s: Vec<String> = data.iter().map(|d| d.speaker.clone()).collect();
    s.sort();
    s.dedup();
    s
}

/// Flattens utterances into frame examples, concatenating aux when enabled.
pub(crate) fn build_frames(
    data: &[AmExample],
    use_aux: bool,
    speakers: &[String],
) -> Result<Vec<FrameEx>> {
    let mut frames = Vec::new();
    for ex in data {
        if ex.targets.len() != ex.feats.rows() {
            return Err(Error::dim(
                format!("targets for {}", ex.utt_id),
                ex.feats.rows(),
                ex.targets.len(),
            ));
        }
        let aux = if use_aux {
            Some(ex.aux.as_deref().ok_or_else(|| {
                Error::InvalidArg(format!(
                    "use_aux set but utterance {} has no auxiliary feature",
                    ex.utt_id
                ))
            })?)
        } else {
            None
        };
        let spk = speakers
            .iter()
            .position(|s| s == &ex.speaker)
            .expect("speaker table covers data");
        for t in 0..ex.feats.rows() {
            let mut x = ex.feats.row(t).to_vec();
            if let Some(a) = aux {
                x.extend_from_slice(a);
            }
            frames.push(FrameEx {
                x,
                tri: ex.targets.tri[t],
                mono: ex.targets.mono[t],
                sev: ex.targets.severity.index(),
                spk,
            });
        }
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput("no training frames".into()));
    }
    Ok(frames)
}

/// One SGD epoch over shuffled frames. `use_lhuc` applies the combined scale
/// ξ(r_spkr)⊙ξ(r_seve) at the LHUC layer; `select` controls which parameter
/// groups move; r vectors use `r_lr` (0 freezes them). Returns the epoch's
/// mean interpolated loss.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epoch(
    model: &mut HybridDnn,
    lhuc: &mut LhucParams,
    speakers: &[String],
    frames: &[FrameEx],
    order: &[usize],
    w: &BTreeMap<String, f64>,
    cfg: &TrainConfig,
    use_lhuc: bool,
    select: &EngineSelect,
    r_lr: f64,
) -> Result<f64> {
    let (w_tri, w_mono, w_seve) = (
        w.get("tri").copied().unwrap_or(0.0),
        w.get("mono").copied().unwrap_or(0.0),
        w.get("seve").copied().unwrap_or(0.0),
    );
    let zero_r = vec![0.0; lhuc.dim];
    let mut epoch_loss = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        model.trunk.zero_grads();
        model.tri_head.zero_grads();
        model.mono_head.zero_grads();
        model.seve_head.zero_grads();
        let mut dr_seve: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; lhuc.dim]);
        let mut dr_spkr: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let inv = 1.0 / batch.len() as f64;

        for &fi in batch {
            let fr = &frames[fi];
            let (r_s, r_v) = if use_lhuc {
                (
                    lhuc.speaker
                        .get(&speakers[fr.spk])
                        .map(|v| v.as_slice())
                        .unwrap_or(&zero_r)
                        .to_vec(),
                    lhuc.severity[fr.sev].clone(),
                )
            } else {
                (Vec::new(), Vec::new())
            };
            let fwd = if use_lhuc {
                let s: Vec<f64> = (0..lhuc.dim).map(|i| xi(r_s[i]) * xi(r_v[i])).collect();
                model.trunk.forward_scaled(&fr.x, LHUC_LAYER, &s)?
            } else {
                model.trunk.forward(&fr.x)?
            };
            let top = fwd.output().to_vec();

            let mut d_top = vec![0.0; top.len()];
            let mut frame_loss = 0.0;
            for (head, weight, target) in [
                (&mut model.tri_head, w_tri, fr.tri),
                (&mut model.mono_head, w_mono, fr.mono),
                (&mut model.seve_head, w_seve, fr.sev),
            ] {
                if weight == 0.0 {
                    continue;
                }
                let hf = head.forward(&top)?;
                let (l, mut d) = softmax_ce(hf.output(), Target::Class(target))?;
                frame_loss += weight * l;
                d.iter_mut().for_each(|g| *g *= weight * inv);
                let back = head.backward(&hf, &d);
                for (acc, g) in d_top.iter_mut().zip(&back.d_input) {
                    *acc += g;
                }
            }
            if !frame_loss.is_finite() {
                return Err(Error::NonFinite("training loss".into()));
            }
            epoch_loss += frame_loss;

            let back = model.trunk.backward(&fwd, &d_top);
            if let Some(d_scale) = back.d_scale {
                if select.r_seve {
                    let acc = &mut dr_seve[fr.sev];
                    for i in 0..lhuc.dim {
                        acc[i] += d_scale[i] * xi(r_s[i]) * xi_deriv(r_v[i]);
                    }
                }
                if select.r_spkr {
                    let acc = dr_spkr
                        .entry(fr.spk)
                        .or_insert_with(|| vec![0.0; lhuc.dim]);
                    for i in 0..lhuc.dim {
                        acc[i] += d_scale[i] * xi(r_v[i]) * xi_deriv(r_s[i]);
                    }
                }
            }
        }

        if select.trunk_heads {
            model.trunk.sgd_step(cfg.learning_rate)?;
            if w_tri > 0.0 {
                model.tri_head.sgd_step(cfg.learning_rate)?;
            }
            if w_mono > 0.0 {
                model.mono_head.sgd_step(cfg.learning_rate)?;
            }
            if w_seve > 0.0 {
                model.seve_head.sgd_step(cfg.learning_rate)?;
            }
        }
        if r_lr != 0.0 {
            if select.r_seve {
                for (sev, grad) in dr_seve.iter().enumerate() {
                    let r = &mut lhuc.severity[sev];
                    for i in 0..lhuc.dim {
                        r[i] -= r_lr * grad[i];
                    }
                }
            }
            if select.r_spkr {
                for (&spk, grad) in &dr_spkr {
                    let r = lhuc
                        .speaker
                        .entry(speakers[spk].clone())
                        .or_insert_with(|| vec![0.0; lhuc.dim]);
                    for i in 0..lhuc.dim {
                        r[i] -= r_lr * grad[i];
                    }
                }
            }
        }
    }
    Ok(epoch_loss / order.len() as f64)
}

pub(crate) const SHUFFLE_TAG_TRUNK: u64 = 0x7A_0000;
pub(crate) const SHUFFLE_TAG_R: u64 = 0x7B_0000;

/// Trains the frame classifier; when `use_lhuc_seve` is set the severity LHUC
/// vectors are updated jointly with trunk and heads. Speaker vectors stay at
/// their identity (zero) values; speaker-adaptive training lives in the
/// adaptation module.
pub fn train_am(
    data: &[AmExample],
    cfg: &TrainConfig,
    opts: &AmOptions,
    arch: &AmArch,
) -> Result<(HybridDnn, LhucParams, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("train_am: no utterances".into()));
    }
    let speakers = speaker_table(data);
    let frames = build_frames(data, opts.use_aux, &speakers)?;
    let input_dim = frames[0].x.len();
    let mut model = init_model(arch, input_dim, cfg.seed)?;
    let mut lhuc = LhucParams::zeros(arch.hidden_width);
    for s in &speakers {
        lhuc.speaker.insert(s.clone(), vec![0.0; arch.hidden_width]);
    }

    let base = if cfg.loss_weights.is_empty() {
        default_mtl_weights()
    } else {
        cfg.loss_weights.clone()
    };
    let w = effective_weights(&base, opts.use_seve_head);

    let select = EngineSelect {
        trunk_heads: true,
        r_spkr: false,
        r_seve: opts.use_lhuc_seve,
    };
    let r_lr = if opts.use_lhuc_seve {
        cfg.learning_rate
    } else {
        0.0
    };

    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let order =
            crate::util::rng::shuffled_indices(cfg.seed, SHUFFLE_TAG_TRUNK + epoch as u64, frames.len());
        let loss = run_epoch(
            &mut model,
            &mut lhuc,
            &speakers,
            &frames,
            &order,
            &w,
            cfg,
            opts.use_lhuc_seve,
            &select,
            r_lr,
        )?;
        log.epoch_losses.push(loss);
    }
    Ok((model, lhuc, log))
}

/// Checkpoint: header, input_dim, trunk, named heads, then the LHUC section
/// (speaker table, severity table).
pub mod ckpt {
    use super::*;
    use crate::netcore::ckpt as netckpt;
    use crate::util::io::*;
    use std::io::{BufReader, BufWriter, Read};
    use std::path::Path;

    pub fn save(path: &Path, model: &HybridDnn, lhuc: &LhucParams) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        netckpt::write_header(&mut f)?;
        write_u32(&mut f, model.input_dim as u32)?;
        netckpt::write_params_body(&mut f, &model.trunk)?;
        write_u32(&mut f, 3)?;
        for (name, head) in [
            ("tri", &model.tri_head),
            ("mono", &model.mono_head),
            ("seve", &model.seve_head),
        ] {
            write_str(&mut f, name)?;
            netckpt::write_params_body(&mut f, head)?;
        }
        write_u32(&mut f, lhuc.dim as u32)?;
        write_u32(&mut f, lhuc.speaker.len() as u32)?;
        for (id, r) in &lhuc.speaker {
            write_str(&mut f, id)?;
            write_f64s(&mut f, r)?;
        }
        for r in &lhuc.severity {
            write_f64s(&mut f, r)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(HybridDnn, LhucParams)> {
        let ctx = path.display().to_string();
        let mut f = BufReader::new(std::fs::File::open(path)?);
        netckpt::read_header(&mut f, &ctx)?;
        let input_dim = read_u32(&mut f)? as usize;
        let trunk = netckpt::read_params_body(&mut f, &ctx)?;
        let n_heads = read_u32(&mut f)? as usize;
        let mut heads: BTreeMap<String, NetParams> = BTreeMap::new();
        for _ in 0..n_heads {
            let name = read_str(&mut f, &ctx)?;
            heads.insert(name, netckpt::read_params_body(&mut f, &ctx)?);
        }
        let mut take = |name: &str| -> Result<NetParams> {
            heads
                .remove(name)
                .ok_or_else(|| Error::format(&ctx, format!("missing head {name:?}")))
        };
        let model = HybridDnn {
            tri_head: take("tri")?,
            mono_head: take("mono")?,
            seve_head: take("seve")?,
            trunk,
            input_dim,
        };
        let dim = read_u32(&mut f)? as usize;
        let n_spk = read_u32(&mut f)? as usize;
        let mut lhuc = LhucParams::zeros(dim);
        for _ in 0..n_spk {
            let id = read_str(&mut f, &ctx)?;
            lhuc.speaker.insert(id, read_f64s(&mut f, dim)?);
        }
        for s in 0..4 {
            lhuc.severity[s] = read_f64s(&mut f, dim)?;
        }
        let mut rest = [0u8; 1];
        if f.read(&mut rest)? != 0 {
            return Err(Error::format(&ctx, "trailing bytes"));
        }
        Ok((model, lhuc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{check_gradients, GradCheckConfig};

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn tiny_arch() -> AmArch {
        AmArch {
            hidden_width: 8,
            hidden_layers: 3,
            n_tri: 6,
            n_mono: 2,
        }
    }

    fn toy_examples(n_utts: usize, t_frames: usize, feat_dim: usize, seed: u64) -> Vec<AmExample> {
        let mut rng = SplitMix64::new(seed);
        (0..n_utts)
            .map(|u| {
                let sev = SeverityLevel::ALL[u % 4];
                let feats = Mat::from_fn(t_frames, feat_dim, |_, _| rng.uniform(-1.0, 1.0));
                AmExample {
                    utt_id: format!("u{u}"),
                    feats,
                    aux: Some((0..AUX_DIM).map(|_| rng.uniform(-0.5, 0.5)).collect()),
                    targets: FrameTargets {
                        tri: (0..t_frames).map(|_| rng.below(6)).collect(),
                        mono: (0..t_frames).map(|_| rng.below(2)).collect(),
                        severity: sev,
                    },
                    speaker: format!("S{}", u % 3),
                }
            })
            .collect()
    }

    #[test]
    fn lhuc_zero_vectors_are_identity() {
        let h = [0.3, -1.0, 2.5];
        let z = [0.0; 3];
        let out = lhuc_scale(&h, &z, &z).unwrap();
        assert_eq!(out, h.to_vec()); // ξ(0) = 1 exactly
    }

    #[test]
    fn lhuc_closed_form_sigmoid() {
        // ξ(ln 3) = 2·(3/4) = 1.5; r_v = 0 contributes exactly 1.
        let h = [1.0, 2.0];
        let r_s = [3f64.ln(), 3f64.ln()];
        let r_v = [0.0, 0.0];
        let out = lhuc_scale(&h, &r_s, &r_v).unwrap();
        approx(out[0], 1.5, 1e-12);
        approx(out[1], 3.0, 1e-12);
    }

    #[test]
    fn lhuc_saturates_below_four() {
        // r → +∞ limit: scaling → 4·h (saturates to exactly 4 in f64).
        let h = [1.0];
        let big = [500.0];
        let out = lhuc_scale(&h, &big, &big).unwrap();
        assert!(out[0] <= 4.0 && out[0] > 3.999_999);
        // Strict range (0,4) wherever f64 can resolve the sigmoid tail.
        let mut rng = SplitMix64::new(3);
        for _ in 0..500 {
            let r_s = rng.uniform(-30.0, 30.0);
            let r_v = rng.uniform(-30.0, 30.0);
            let s = xi(r_s) * xi(r_v);
            assert!(s > 0.0 && s < 4.0, "scale {s}");
        }
    }

    #[test]
    fn lhuc_dim_mismatch() {
        assert!(lhuc_scale(&[1.0, 2.0], &[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn forward_zero_lhuc_equals_omitted() {
        let arch = tiny_arch();
        let model = init_model(&arch, 10, 7).unwrap();
        let mut lhuc = LhucParams::zeros(arch.hidden_width);
        lhuc.speaker
            .insert("S0".into(), vec![0.0; arch.hidden_width]);
        let mut rng = SplitMix64::new(4);
        let feats = Mat::from_fn(5, 10, |_, _| rng.uniform(-1.0, 1.0));
        let plain = forward_am(&model, &feats, None, None).unwrap();
        let scaled =
            forward_am(&model, &feats, None, Some((&lhuc, "S0", SeverityLevel::Mid))).unwrap();
        for t in 0..5 {
            for c in 0..model.n_tri() {
                approx(plain.tri.at(t, c), scaled.tri.at(t, c), 1e-12);
            }
            for c in 0..4 {
                approx(plain.seve.at(t, c), scaled.seve.at(t, c), 1e-12);
            }
        }
    }

    #[test]
    fn forward_unknown_speaker_errors() {
        let arch = tiny_arch();
        let model = init_model(&arch, 10, 7).unwrap();
        let lhuc = LhucParams::zeros(arch.hidden_width);
        let feats = Mat::zeros(2, 10);
        assert!(
            forward_am(&model, &feats, None, Some((&lhuc, "nobody", SeverityLevel::Mid))).is_err()
        );
    }

    #[test]
    fn forward_single_frame_matches_manual_oracle() {
        let arch = AmArch {
            hidden_width: 4,
            hidden_layers: 2,
            n_tri: 3,
            n_mono: 2,
        };
        let model = init_model(&arch, 5, 11).unwrap();
        let x = [0.2, -0.3, 0.5, 0.1, -0.9];
        let feats = Mat::from_flat(1, 5, x.to_vec());
        let post = forward_am(&model, &feats, None, None).unwrap();

        // Straight-line arithmetic through trunk and tri head.
        let mut a = x.to_vec();
        for k in 0..2 {
            let l = model.trunk.layer(k);
            let mut z = vec![0.0; l.out_dim()];
            for (r, zr) in z.iter_mut().enumerate() {
                let mut acc = l.b[r];
                for c in 0..l.in_dim() {
                    acc += l.w.at(r, c) * a[c];
                }
                *zr = acc.max(0.0);
            }
            a = z;
        }
        let head = model.tri_head.layer(0);
        let logits: Vec<f64> = (0..3)
            .map(|r| {
                let mut acc = head.b[r];
                for c in 0..4 {
                    acc += head.w.at(r, c) * a[c];
                }
                acc
            })
            .collect();
        let p = softmax(&logits);
        for c in 0..3 {
            approx(post.tri.at(0, c), p[c], 1e-10);
        }
    }

    #[test]
    fn forward_posteriors_sum_to_one() {
        let arch = tiny_arch();
        let model = init_model(&arch, 10, 7).unwrap();
        let mut rng = SplitMix64::new(9);
        let feats = Mat::from_fn(6, 10, |_, _| rng.uniform(-2.0, 2.0));
        let post = forward_am(&model, &feats, None, None).unwrap();
        for t in 0..6 {
            for m in [&post.tri, &post.mono, &post.seve] {
                let s: f64 = m.row(t).iter().sum();
                approx(s, 1.0, 1e-9);
            }
        }
    }

    #[test]
    fn forward_is_frame_independent() {
        // Posterior of a frame does not depend on its neighbors.
        let arch = tiny_arch();
        let model = init_model(&arch, 10, 7).unwrap();
        let mut rng = SplitMix64::new(13);
        let feats = Mat::from_fn(4, 10, |_, _| rng.uniform(-1.0, 1.0));
        let full = forward_am(&model, &feats, None, None).unwrap();
        let single = Mat::from_flat(1, 10, feats.row(2).to_vec());
        let alone = forward_am(&model, &single, None, None).unwrap();
        for c in 0..model.n_tri() {
            approx(full.tri.at(2, c), alone.tri.at(0, c), 1e-15);
        }
    }

    #[test]
    fn mtl_perfect_predictions_zero_loss() {
        let targets = FrameTargets {
            tri: vec![1, 0],
            mono: vec![0, 1],
            severity: SeverityLevel::Low,
        };
        let mut tri = Mat::zeros(2, 3);
        tri.set(0, 1, 1.0);
        tri.set(1, 0, 1.0);
        let mut mono = Mat::zeros(2, 2);
        mono.set(0, 0, 1.0);
        mono.set(1, 1, 1.0);
        let mut seve = Mat::zeros(2, 4);
        seve.set(0, 1, 1.0);
        seve.set(1, 1, 1.0);
        let post = AmPosteriors { tri, mono, seve };
        let lv = mtl_loss_dnn(&post, &targets, &default_mtl_weights()).unwrap();
        assert_eq!(lv.scalar, 0.0);
    }

    #[test]
    fn mtl_uniform_posteriors_closed_form() {
        let (s, m, t_frames) = (6usize, 2usize, 3usize);
        let post = AmPosteriors {
            tri: Mat::from_fn(t_frames, s, |_, _| 1.0 / s as f64),
            mono: Mat::from_fn(t_frames, m, |_, _| 1.0 / m as f64),
            seve: Mat::from_fn(t_frames, 4, |_, _| 0.25),
        };
        let targets = FrameTargets {
            tri: vec![0; t_frames],
            mono: vec![1; t_frames],
            severity: SeverityLevel::High,
        };
        let lv = mtl_loss_dnn(&post, &targets, &default_mtl_weights()).unwrap();
        let expect = ((s as f64).ln() + (m as f64).ln() + 4f64.ln()) / 3.0;
        approx(lv.scalar, expect, 1e-12);
    }

    #[test]
    fn mtl_matches_per_head_oracle() {
        let mut rng = SplitMix64::new(31);
        let (s, m, t_frames) = (5usize, 3usize, 4usize);
        let rand_post = |cols: usize, rng: &mut SplitMix64| {
            Mat::from_rows(
                &(0..t_frames)
                    .map(|_| {
                        softmax(&(0..cols).map(|_| rng.uniform(-2.0, 2.0)).collect::<Vec<_>>())
                    })
                    .collect::<Vec<_>>(),
            )
        };
        let post = AmPosteriors {
            tri: rand_post(s, &mut rng),
            mono: rand_post(m, &mut rng),
            seve: rand_post(4, &mut rng),
        };
        let targets = FrameTargets {
            tri: (0..t_frames).map(|_| rng.below(s)).collect(),
            mono: (0..t_frames).map(|_| rng.below(m)).collect(),
            severity: SeverityLevel::Mid,
        };
        let w = weights(&[("tri", 0.5), ("mono", 0.3), ("seve", 0.2)]);
        let lv = mtl_loss_dnn(&post, &targets, &w).unwrap();

        // Independent per-head recompute then weighted sum.
        let mean_ce = |p: &Mat, tg: &dyn Fn(usize) -> usize| {
            (0..t_frames).map(|t| -p.at(t, tg(t)).ln()).sum::<f64>() / t_frames as f64
        };
        let l_tri = mean_ce(&post.tri, &|t| targets.tri[t]);
        let l_mono = mean_ce(&post.mono, &|t| targets.mono[t]);
        let l_seve = mean_ce(&post.seve, &|_| targets.severity.index());
        approx(lv.scalar, 0.5 * l_tri + 0.3 * l_mono + 0.2 * l_seve, 1e-12);
    }

    #[test]
    fn disabled_severity_head_equals_two_term_interpolation() {
        let mut rng = SplitMix64::new(77);
        let post = AmPosteriors {
            tri: Mat::from_rows(&[softmax(&[rng.uniform(-1.0, 1.0), 0.3, -0.2])]),
            mono: Mat::from_rows(&[softmax(&[0.1, rng.uniform(-1.0, 1.0)])]),
            seve: Mat::from_rows(&[softmax(&[0.0, 0.5, -0.5, 1.0])]),
        };
        let targets = FrameTargets {
            tri: vec![0],
            mono: vec![1],
            severity: SeverityLevel::VeryLow,
        };
        let w3 = effective_weights(&default_mtl_weights(), false);
        let lv = mtl_loss_dnn(&post, &targets, &w3).unwrap();
        let two = weights(&[("tri", 0.5), ("mono", 0.5)]);
        let l_tri = -post.tri.at(0, 0).ln();
        let l_mono = -post.mono.at(0, 1).ln();
        let expect = interpolate_losses(&two, &weights(&[("tri", l_tri), ("mono", l_mono)]))
            .unwrap()
            .scalar;
        approx(lv.scalar, expect, 1e-12);
    }

    #[test]
    fn effective_weights_redistribute() {
        let w = effective_weights(&default_mtl_weights(), false);
        approx(w["tri"], 0.5, 1e-12);
        approx(w["mono"], 0.5, 1e-12);
        approx(w["seve"], 0.0, 1e-12);
        let on = effective_weights(&default_mtl_weights(), true);
        approx(on["seve"], 1.0 / 3.0, 1e-12);
    }

    #[test]
    fn train_am_baseline_and_full_options_run() {
        let data = toy_examples(8, 6, 10, 5);
        let cfg = TrainConfig::new(0.05, 3, 16, 2);
        // All severity options off (plain tri+mono frame classifier).
        let (m0, l0, log0) = train_am(&data, &cfg, &AmOptions::default(), &tiny_arch()).unwrap();
        assert_eq!(m0.input_dim, 10);
        assert!(l0.severity.iter().all(|r| r.iter().all(|&x| x == 0.0)));
        assert_eq!(log0.epoch_losses.len(), 3);
        // All three severity options on.
        let opts = AmOptions {
            use_aux: true,
            use_seve_head: true,
            use_lhuc_seve: true,
        };
        let (m1, l1, _) = train_am(&data, &cfg, &opts, &tiny_arch()).unwrap();
        assert_eq!(m1.input_dim, 10 + AUX_DIM);
        // Severity vectors moved away from identity.
        assert!(l1.severity.iter().any(|r| r.iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn train_am_missing_aux_errors() {
        let mut data = toy_examples(2, 4, 10, 5);
        data[0].aux = None;
        let opts = AmOptions {
            use_aux: true,
            ..Default::default()
        };
        assert!(train_am(&data, &TrainConfig::new(0.05, 1, 8, 2), &opts, &tiny_arch()).is_err());
    }

    #[test]
    fn train_am_seed_reproducible() {
        let data = toy_examples(4, 5, 10, 8);
        let cfg = TrainConfig::new(0.05, 2, 8, 42);
        let opts = AmOptions {
            use_seve_head: true,
            use_lhuc_seve: true,
            ..Default::default()
        };
        let (a, la, loga) = train_am(&data, &cfg, &opts, &tiny_arch()).unwrap();
        let (b, lb, logb) = train_am(&data, &cfg, &opts, &tiny_arch()).unwrap();
        assert_eq!(a.trunk.flatten(), b.trunk.flatten());
        assert_eq!(la.severity, lb.severity);
        assert_eq!(loga.epoch_losses, logb.epoch_losses);
    }

    #[test]
    fn full_mtl_lhuc_gradients_pass_fd() {
        // One minibatch of the full training loss: trunk + heads + r vectors.
        let arch = AmArch {
            hidden_width: 5,
            hidden_layers: 2,
            n_tri: 4,
            n_mono: 2,
        };
        let model = init_model(&arch, 6, 3).unwrap();
        let mut rng = SplitMix64::new(19);
        let frames: Vec<(Vec<f64>, usize, usize, usize)> = (0..3)
            .map(|_| {
                (
                    (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    rng.below(4),
                    rng.below(2),
                    rng.below(4),
                )
            })
            .collect();
        let r_s0: Vec<f64> = (0..5).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let r_v0: Vec<f64> = (0..5).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let w = default_mtl_weights();

        // θ = [trunk | tri | mono | seve | r_s | r_v]
        let mut theta = model.trunk.flatten();
        theta.extend(model.tri_head.flatten());
        theta.extend(model.mono_head.flatten());
        theta.extend(model.seve_head.flatten());
        theta.extend(&r_s0);
        theta.extend(&r_v0);

        let loss_at = |theta: &[f64]| -> (f64, Vec<f64>) {
            let mut m = model.clone();
            let mut ofs = 0;
            for part in [&mut m.trunk, &mut m.tri_head, &mut m.mono_head, &mut m.seve_head] {
                let n = part.n_params();
                part.set_from_flat(&theta[ofs..ofs + n]).unwrap();
                part.zero_grads();
                ofs += n;
            }
            let r_s = theta[ofs..ofs + 5].to_vec();
            let r_v = theta[ofs + 5..ofs + 10].to_vec();
            let mut dr_s = vec![0.0; 5];
            let mut dr_v = vec![0.0; 5];
            let mut total = 0.0;
            for (x, tri, mono, sev) in &frames {
                let s: Vec<f64> = (0..5).map(|i| xi(r_s[i]) * xi(r_v[i])).collect();
                let fwd = m.trunk.forward_scaled(x, LHUC_LAYER, &s).unwrap();
                let top = fwd.output().to_vec();
                let mut d_top = vec![0.0; 5];
                for (head, weight, target) in [
                    (&mut m.tri_head, w["tri"], *tri),
                    (&mut m.mono_head, w["mono"], *mono),
                    (&mut m.seve_head, w["seve"], *sev),
                ] {
                    let hf = head.forward(&top).unwrap();
                    let (l, mut d) = softmax_ce(hf.output(), Target::Class(target)).unwrap();
                    total += weight * l;
                    d.iter_mut().for_each(|g| *g *= weight);
                    let back = head.backward(&hf, &d);
                    for (acc, g) in d_top.iter_mut().zip(&back.d_input) {
                        *acc += g;
                    }
                }
                let back = m.trunk.backward(&fwd, &d_top);
                let d_scale = back.d_scale.unwrap();
                for i in 0..5 {
                    dr_s[i] += d_scale[i] * xi(r_v[i]) * xi_deriv(r_s[i]);
                    dr_v[i] += d_scale[i] * xi(r_s[i]) * xi_deriv(r_v[i]);
                }
            }
            let mut grad = m.trunk.grads_flat();
            grad.extend(m.tri_head.grads_flat());
            grad.extend(m.mono_head.grads_flat());
            grad.extend(m.seve_head.grads_flat());
            grad.extend(dr_s);
            grad.extend(dr_v);
            (total, grad)
        };

        let (_, analytic) = loss_at(&theta);
        let report = check_gradients(
            |t| loss_at(t).0,
            &theta,
            &analytic,
            &GradCheckConfig {
                samples: 150,
                ..Default::default()
            },
        );
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn checkpoint_roundtrip_with_lhuc() {
        let arch = tiny_arch();
        let model = init_model(&arch, 10, 21).unwrap();
        let mut lhuc = LhucParams::zeros(arch.hidden_width);
        lhuc.speaker
            .insert("S0".into(), vec![0.1; arch.hidden_width]);
        lhuc.speaker
            .insert("S1".into(), vec![-0.2; arch.hidden_width]);
        lhuc.severity[2] = vec![0.3; arch.hidden_width];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("am.ckpt");
        ckpt::save(&path, &model, &lhuc).unwrap();
        let (m2, l2) = ckpt::load(&path).unwrap();
        assert_eq!(model.trunk.flatten(), m2.trunk.flatten());
        assert_eq!(model.tri_head.flatten(), m2.tri_head.flatten());
        assert_eq!(lhuc.speaker, l2.speaker);
        assert_eq!(lhuc.severity, l2.severity);
        assert_eq!(model.input_dim, m2.input_dim);
    }
}
