//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test -p seva-cli --test acceptance -- --nocapture`.
//! The directional-trend criteria train every system in the grid over five
//! seeds, so the full suite takes tens of minutes on one core.

use seva_cli::config::{ExperimentConfig, SeveritySource};
use seva_cli::exp;
use seva_core::adaptation::{kld_frame_loss, AdaptConfig};
use seva_core::embedder::SeverityLevel;
use seva_core::evaluate::mapsswe;
use seva_core::hybrid_am::{self, AmArch, AmOptions, LhucParams};
use seva_core::netcore::{
    check_gradients, softmax, softmax_ce, Activation, GradCheckConfig, Mat, NetParams, Target,
};
use seva_core::seqmodel::{self, SeqArch};
use seva_core::util::rng::SplitMix64;
use std::collections::HashMap;
use std::time::Instant;

const FD_TOL: f64 = 1e-4;

fn fd_cfg(samples: usize) -> GradCheckConfig {
    GradCheckConfig {
        samples,
        tolerance: FD_TOL,
        ..Default::default()
    }
}

fn report(criterion: &str, passed: bool, detail: &str) {
    let tag = if passed { "[PASS]" } else { "[FAIL]" };
    println!("{tag} {criterion}: {detail}");
    assert!(passed, "{criterion}: {detail}");
}

/// Criterion 1: every trainable loss passes central finite differences with
/// max relative error < 1e-4 over ≥100 random coordinates, in under a minute.
#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;

    // softmax-CE through a dense network (>100 parameters).
    {
        let mut rng = SplitMix64::new(11);
        let net = NetParams::glorot(&[9, 10, 5], &[Activation::Relu, Activation::Linear], &mut rng)
            .unwrap();
        let x: Vec<f64> = (0..9).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let theta = net.flatten();
        let mut work = net.clone();
        work.zero_grads();
        let fwd = work.forward(&x).unwrap();
        let (_, d) = softmax_ce(fwd.output(), Target::Class(3)).unwrap();
        work.backward(&fwd, &d);
        let analytic = work.grads_flat();
        let rep = check_gradients(
            |t| {
                let mut m = net.clone();
                m.set_from_flat(t).unwrap();
                let f = m.forward(&x).unwrap();
                softmax_ce(f.output(), Target::Class(3)).unwrap().0
            },
            &theta,
            &analytic,
            &fd_cfg(120),
        );
        assert!(rep.passed, "softmax-CE rel err {}", rep.max_rel_err);
        worst = worst.max(rep.max_rel_err);
    }

    // Three-way MTL with structured LHUC: trunk + heads + both r vectors.
    {
        let arch = AmArch {
            hidden_width: 6,
            hidden_layers: 2,
            n_tri: 5,
            n_mono: 3,
        };
        let model = hybrid_am::init_model(&arch, 7, 3).unwrap();
        let mut rng = SplitMix64::new(21);
        let frames: Vec<(Vec<f64>, usize, usize, usize)> = (0..4)
            .map(|_| {
                (
                    (0..7).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    rng.below(5),
                    rng.below(3),
                    rng.below(4),
                )
            })
            .collect();
        let r_s0: Vec<f64> = (0..6).map(|_| rng.uniform(-0.6, 0.6)).collect();
        let r_v0: Vec<f64> = (0..6).map(|_| rng.uniform(-0.6, 0.6)).collect();
        let w = hybrid_am::default_mtl_weights();

        let loss_at = |theta: &[f64]| -> (f64, Vec<f64>) {
            let mut m = model.clone();
            let mut ofs = 0;
            for part in [&mut m.trunk, &mut m.tri_head, &mut m.mono_head, &mut m.seve_head] {
                let n = part.n_params();
                part.set_from_flat(&theta[ofs..ofs + n]).unwrap();
                part.zero_grads();
                ofs += n;
            }
            let r_s = theta[ofs..ofs + 6].to_vec();
            let r_v = theta[ofs + 6..ofs + 12].to_vec();
            let xi = hybrid_am::xi;
            let mut dr_s = vec![0.0; 6];
            let mut dr_v = vec![0.0; 6];
            let mut total = 0.0;
            for (x, tri, mono, sev) in &frames {
                let s: Vec<f64> = (0..6).map(|i| xi(r_s[i]) * xi(r_v[i])).collect();
                let fwd = m.trunk.forward_scaled(x, hybrid_am::LHUC_LAYER, &s).unwrap();
                let top = fwd.output().to_vec();
                let mut d_top = vec![0.0; 6];
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
                let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
                for i in 0..6 {
                    dr_s[i] += d_scale[i] * xi(r_v[i]) * xi(r_s[i]) * (1.0 - sig(r_s[i]));
                    dr_v[i] += d_scale[i] * xi(r_s[i]) * xi(r_v[i]) * (1.0 - sig(r_v[i]));
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
        let mut theta = model.trunk.flatten();
        theta.extend(model.tri_head.flatten());
        theta.extend(model.mono_head.flatten());
        theta.extend(model.seve_head.flatten());
        theta.extend(&r_s0);
        theta.extend(&r_v0);
        let (_, analytic) = loss_at(&theta);
        let rep = check_gradients(|t| loss_at(t).0, &theta, &analytic, &fd_cfg(150));
        assert!(rep.passed, "MTL+LHUC rel err {}", rep.max_rel_err);
        worst = worst.max(rep.max_rel_err);
    }

    // KLD-regularized loss at λ ∈ {0, 0.5, 1} over ≥100 logit coordinates.
    {
        let mut rng = SplitMix64::new(31);
        for lambda in [0.0, 0.5, 1.0] {
            let frames: Vec<(Vec<f64>, usize, Vec<f64>)> = (0..6)
                .map(|_| {
                    let logits: Vec<f64> = (0..20).map(|_| rng.uniform(-1.5, 1.5)).collect();
                    let p_si =
                        softmax(&(0..20).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>());
                    (logits, rng.below(20), p_si)
                })
                .collect();
            let theta: Vec<f64> = frames.iter().flat_map(|(l, _, _)| l.clone()).collect();
            let loss_at = |theta: &[f64]| -> (f64, Vec<f64>) {
                let mut total = 0.0;
                let mut grad = Vec::new();
                for (i, (_, hard, p_si)) in frames.iter().enumerate() {
                    let logits = &theta[i * 20..(i + 1) * 20];
                    let (l, g) = kld_frame_loss(logits, *hard, p_si, lambda).unwrap();
                    total += l;
                    grad.extend(g);
                }
                (total, grad)
            };
            let (_, analytic) = loss_at(&theta);
            let rep = check_gradients(|t| loss_at(t).0, &theta, &analytic, &fd_cfg(120));
            assert!(rep.passed, "KLD λ={lambda} rel err {}", rep.max_rel_err);
            worst = worst.max(rep.max_rel_err);
        }
    }

    // CTC loss over ≥100 logit coordinates.
    {
        let mut rng = SplitMix64::new(41);
        let logits = Mat::from_fn(12, 10, |_, _| rng.uniform(-2.0, 2.0));
        let labels = [3usize, 7, 1];
        let (_, grad) = seqmodel::ctc_loss(&logits, &labels).unwrap();
        let flat = logits.data().to_vec();
        let rep = check_gradients(
            |t| {
                let m = Mat::from_flat(12, 10, t.to_vec());
                seqmodel::ctc_loss(&m, &labels).unwrap().0
            },
            &flat,
            grad.data(),
            &fd_cfg(120),
        );
        assert!(rep.passed, "CTC rel err {}", rep.max_rel_err);
        worst = worst.max(rep.max_rel_err);
    }

    // Two-term sequence MTL (CTC + pooled severity) through all parameters.
    {
        let arch = SeqArch {
            hidden: vec![6],
            vocab_size: 3,
            splice: 1,
        };
        let model = seqmodel::init_seq_model(&arch, 4, 7).unwrap();
        let mut rng = SplitMix64::new(51);
        let feats = Mat::from_fn(5, 4, |_, _| rng.uniform(-1.0, 1.0));
        let labels = vec![2usize, 1];
        let sev = SeverityLevel::Mid;
        let w = seqmodel::beta_weights();
        let loss_at = |theta: &[f64]| -> (f64, Vec<f64>) {
            let mut m = model.clone();
            let mut ofs = 0;
            for part in [&mut m.encoder, &mut m.ctc_head, &mut m.seve_head] {
                let n = part.n_params();
                part.set_from_flat(&theta[ofs..ofs + n]).unwrap();
                part.zero_grads();
                ofs += n;
            }
            let t_frames = feats.rows();
            let traces: Vec<_> = (0..t_frames)
                .map(|t| {
                    m.encoder
                        .forward(&seqmodel::splice_frame(&feats, t, m.splice))
                        .unwrap()
                })
                .collect();
            let h = m.encoder.output_dim();
            let mut logits = Mat::zeros(t_frames, 4);
            let head_traces: Vec<_> = (0..t_frames)
                .map(|t| {
                    let fwd = m.ctc_head.forward(traces[t].output()).unwrap();
                    logits.row_mut(t).copy_from_slice(fwd.output());
                    fwd
                })
                .collect();
            let (l_ctc, d_logits) = seqmodel::ctc_loss(&logits, &labels).unwrap();
            let mut d_enc = vec![vec![0.0; h]; t_frames];
            for t in 0..t_frames {
                let mut d: Vec<f64> = d_logits.row(t).to_vec();
                d.iter_mut().for_each(|g| *g *= w["ctc"]);
                let back = m.ctc_head.backward(&head_traces[t], &d);
                for (acc, g) in d_enc[t].iter_mut().zip(&back.d_input) {
                    *acc += g;
                }
            }
            let mut pooled = vec![0.0; h];
            for tr in &traces {
                for (p, v) in pooled.iter_mut().zip(tr.output()) {
                    *p += v / t_frames as f64;
                }
            }
            let hf = m.seve_head.forward(&pooled).unwrap();
            let (l_seve, mut d) = softmax_ce(hf.output(), Target::Class(sev.index())).unwrap();
            d.iter_mut().for_each(|g| *g *= w["seve"]);
            let back = m.seve_head.backward(&hf, &d);
            for row in d_enc.iter_mut() {
                for (acc, g) in row.iter_mut().zip(&back.d_input) {
                    *acc += g / t_frames as f64;
                }
            }
            for t in 0..t_frames {
                m.encoder.backward(&traces[t], &d_enc[t]);
            }
            let mut grad = m.encoder.grads_flat();
            grad.extend(m.ctc_head.grads_flat());
            grad.extend(m.seve_head.grads_flat());
            (w["ctc"] * l_ctc + w["seve"] * l_seve, grad)
        };
        let mut theta = model.encoder.flatten();
        theta.extend(model.ctc_head.flatten());
        theta.extend(model.seve_head.flatten());
        let (_, analytic) = loss_at(&theta);
        let rep = check_gradients(|t| loss_at(t).0, &theta, &analytic, &fd_cfg(150));
        assert!(rep.passed, "seq MTL rel err {}", rep.max_rel_err);
        worst = worst.max(rep.max_rel_err);
    }

    let secs = start.elapsed().as_secs_f64();
    report(
        "criterion 1 (gradient correctness)",
        worst < FD_TOL && secs < 60.0,
        &format!("max relative error {worst:.2e} across all losses in {secs:.1}s"),
    );
}

/// Criterion 2: CTC agrees with brute-force alignment enumeration for all
/// (T ≤ 8, |labels| ≤ 3, V ≤ 4), log-domain tolerance 1e-10, in under 30 s.
#[test]
fn criterion_2_ctc_oracle_equivalence() {
    let start = Instant::now();
    let mut cases = 0usize;
    let mut max_err: f64 = 0.0;
    for v in 1..=4usize {
        for t in 1..=8usize {
            let mut rng = SplitMix64::new(1000 + (v * 10 + t) as u64);
            let logits = Mat::from_fn(t, v + 1, |_, _| rng.uniform(-2.0, 2.0));
            let probs: Vec<Vec<f64>> = (0..t).map(|i| softmax(logits.row(i))).collect();

            // One enumeration pass over all (V+1)^T paths, bucketing total
            // probability by collapsed label sequence.
            let mut buckets: HashMap<Vec<usize>, f64> = HashMap::new();
            let mut path = vec![0usize; t];
            loop {
                let mut collapsed = Vec::new();
                let mut prev = usize::MAX;
                for &s in &path {
                    if s != prev {
                        if s != 0 {
                            collapsed.push(s);
                        }
                        prev = s;
                    }
                }
                if collapsed.len() <= 3 {
                    let mut p = 1.0;
                    for (i, &s) in path.iter().enumerate() {
                        p *= probs[i][s];
                    }
                    *buckets.entry(collapsed).or_insert(0.0) += p;
                }
                let mut carry = true;
                for slot in path.iter_mut() {
                    *slot += 1;
                    if *slot <= v {
                        carry = false;
                        break;
                    }
                    *slot = 0;
                }
                if carry {
                    break;
                }
            }

            // Every label sequence with |labels| ≤ 3 over V graphemes.
            let mut label_seqs: Vec<Vec<usize>> = vec![vec![]];
            for len in 1..=3usize {
                let mut stack = vec![Vec::with_capacity(len)];
                while let Some(cur) = stack.pop() {
                    if cur.len() == len {
                        label_seqs.push(cur);
                        continue;
                    }
                    for sym in 1..=v {
                        let mut next = cur.clone();
                        next.push(sym);
                        stack.push(next);
                    }
                }
            }
            for labels in &label_seqs {
                if t < seqmodel::min_frames(labels).max(1) {
                    assert!(
                        seqmodel::ctc_loss(&logits, labels).is_err(),
                        "infeasible case accepted: T={t} labels={labels:?}"
                    );
                    continue;
                }
                let (loss, _) = seqmodel::ctc_loss(&logits, labels).unwrap();
                let oracle = buckets.get(labels).copied().unwrap_or(0.0);
                assert!(oracle > 0.0, "oracle empty for feasible case");
                let err = (loss - (-oracle.ln())).abs();
                max_err = max_err.max(err);
                assert!(err < 1e-10, "T={t} V={v} labels={labels:?}: err {err}");
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "criterion 2 (CTC oracle equivalence)",
        secs < 30.0,
        &format!("{cases} feasible cases, max log-domain error {max_err:.2e}, {secs:.1}s"),
    );
}

/// Criterion 3: zero LHUC vectors give identical posteriors (1e-12) and all
/// scaling factors lie strictly inside (0, 4), over random models.
#[test]
fn criterion_3_lhuc_identity_and_range() {
    let mut rng = SplitMix64::new(77);
    let mut max_dev: f64 = 0.0;
    for trial in 0..50 {
        let width = 4 + rng.below(8);
        let arch = AmArch {
            hidden_width: width,
            hidden_layers: 1 + rng.below(3),
            n_tri: 3 + rng.below(6),
            n_mono: 2 + rng.below(3),
        };
        let model = hybrid_am::init_model(&arch, 5, 3000 + trial).unwrap();
        let mut lhuc = LhucParams::zeros(width);
        lhuc.speaker.insert("s".into(), vec![0.0; width]);
        let feats = Mat::from_fn(3, 5, |_, _| rng.uniform(-1.5, 1.5));
        let plain = hybrid_am::forward_am(&model, &feats, None, None).unwrap();
        let scaled = hybrid_am::forward_am(
            &model,
            &feats,
            None,
            Some((&lhuc, "s", SeverityLevel::ALL[rng.below(4)])),
        )
        .unwrap();
        for t in 0..3 {
            for k in 0..arch.n_tri {
                max_dev = max_dev.max((plain.tri.at(t, k) - scaled.tri.at(t, k)).abs());
            }
        }
        // Range property on random finite r vectors.
        for _ in 0..40 {
            let s = hybrid_am::xi(rng.uniform(-25.0, 25.0)) * hybrid_am::xi(rng.uniform(-25.0, 25.0));
            assert!(s > 0.0 && s < 4.0, "scaling factor {s} outside (0,4)");
        }
    }
    report(
        "criterion 3 (LHUC identity & range)",
        max_dev <= 1e-12,
        &format!("max posterior deviation under zero vectors {max_dev:.2e}; factors in (0,4)"),
    );
}

/// Criterion 4: SVD matches an independent Gram-matrix eigen-oracle to 1e-6
/// on 100 random matrices; bases orthonormal to 1e-8.
#[test]
fn criterion_4_svd_correctness() {
    // Cyclic Jacobi eigen-decomposition of a symmetric matrix (oracle route).
    fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut m = a.to_vec();
        let mut v = vec![vec![0.0; n]; n];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for _ in 0..200 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += m[i][j] * m[i][j];
                }
            }
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[p][q].abs() < 1e-18 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for k in 0..n {
                        let (mkp, mkq) = (m[k][p], m[k][q]);
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p][k], m[q][k]);
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[k][p], v[k][q]);
                        v[k][p] = c * vkp - s * vkq;
                        v[k][q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| m[i][i]).collect(), v)
    }

    let mut rng = SplitMix64::new(99);
    let mut max_sigma_err: f64 = 0.0;
    let mut max_basis_err: f64 = 0.0;
    let mut max_ortho_err: f64 = 0.0;
    for _ in 0..100 {
        let rows = 5 + rng.below(12);
        let cols = 5 + rng.below(12);
        let x = Mat::from_fn(rows, cols, |_, _| rng.uniform(0.0, 2.0));
        let spec = seva_core::features::Spectrogram {
            magnitudes: x.clone(),
            frame_length_s: 0.025,
            frame_shift_s: 0.010,
            sample_rate: 16000,
        };
        let k = 2;
        let sb = seva_core::features::svd_spectral_bases(&spec, k).unwrap();

        let mut g = vec![vec![0.0; rows]; rows];
        for i in 0..rows {
            for j in 0..rows {
                let mut s = 0.0;
                for c in 0..cols {
                    s += x.at(i, c) * x.at(j, c);
                }
                g[i][j] = s;
            }
        }
        let (evals, evecs) = jacobi_eigen(&g);
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&a, &b| evals[b].partial_cmp(&evals[a]).unwrap());
        for i in 0..k {
            let sigma = evals[order[i]].max(0.0).sqrt();
            max_sigma_err = max_sigma_err.max((sigma - sb.singular_values[i]).abs());
            let ev: Vec<f64> = (0..rows).map(|r| evecs[r][order[i]]).collect();
            let b = sb.bases.row(i);
            let dot: f64 = ev.iter().zip(b).map(|(a, c)| a * c).sum();
            let sign = if dot >= 0.0 { 1.0 } else { -1.0 };
            for r in 0..rows {
                max_basis_err = max_basis_err.max((sign * ev[r] - b[r]).abs());
            }
        }
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = sb
                    .bases
                    .row(i)
                    .iter()
                    .zip(sb.bases.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                max_ortho_err = max_ortho_err.max((dot - expect).abs());
            }
        }
    }
    report(
        "criterion 4 (SVD correctness)",
        max_sigma_err < 1e-6 && max_basis_err < 1e-6 && max_ortho_err < 1e-8,
        &format!(
            "100 matrices: σ err {max_sigma_err:.2e}, basis err {max_basis_err:.2e}, orthonormality {max_ortho_err:.2e}"
        ),
    );
}

/// Criterion 8: weight {first_pass: 1} reproduces first-pass results exactly;
/// the argmax flips at the analytically computed crossover weight.
#[test]
fn criterion_8_rescoring_sanity() {
    use seva_core::decoder::{combine_systems, rescore, Hypothesis, NBestList, Scorer};
    use std::collections::BTreeMap;

    // Identity check across random N-best lists.
    let mut rng = SplitMix64::new(123);
    for _ in 0..50 {
        let n = 2 + rng.below(8);
        let mut scores: Vec<f64> = (0..n).map(|_| rng.uniform(-30.0, 0.0)).collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let list = NBestList {
            utterance_id: "u".into(),
            hypotheses: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| Hypothesis {
                    word: format!("w{i}"),
                    first_pass_logprob: s,
                    second_pass_logprobs: BTreeMap::new(),
                })
                .collect(),
        };
        let w = seva_core::netcore::weights(&[("first_pass", 1.0)]);
        let best = rescore(&list, &w).unwrap();
        assert_eq!(best.word, list.hypotheses[0].word);
    }

    // Constructed 2-hypothesis crossover: first-pass (−1, −2), second-pass
    // (−5, −0.5); totals tie at w* = (s1−s2)/(t2−t1) = 1/4.5.
    let list = NBestList {
        utterance_id: "u".into(),
        hypotheses: vec![
            Hypothesis {
                word: "alpha".into(),
                first_pass_logprob: -1.0,
                second_pass_logprobs: BTreeMap::new(),
            },
            Hypothesis {
                word: "beta".into(),
                first_pass_logprob: -2.0,
                second_pass_logprobs: BTreeMap::new(),
            },
        ],
    };
    let scorer = |word: &str| -> seva_core::Result<f64> {
        Ok(if word == "alpha" { -5.0 } else { -0.5 })
    };
    let scorers: Vec<Scorer> = vec![("x", &scorer)];
    let w_star = 1.0 / 4.5;
    let mut flipped_correctly = true;
    for (delta, expect) in [(-1e-3, "alpha"), (1e-3, "beta")] {
        let w = seva_core::netcore::weights(&[("first_pass", 1.0), ("x", w_star + delta)]);
        let (best, _, _) = combine_systems(&list, &scorers, &w).unwrap();
        flipped_correctly &= best.word == expect;
    }
    report(
        "criterion 8 (rescoring sanity)",
        flipped_correctly,
        &format!("identity rescoring exact on 50 random lists; argmax flips at w* = {w_star:.4}"),
    );
}

/// Criterion 5: on the default corpus over 5 seeds, every single
/// severity-incorporation option has mean WER ≤ the all-off baseline, and the
/// best combination is strictly better with matched-pairs significance on
/// the pooled runs; total runtime < 30 min.
#[test]
fn criterion_5_hybrid_directional_trend() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let seeds = [1u64, 2, 3, 4, 5];
    let report_data = seva_cli::ablate::run_ablation(&cfg, &seeds, 1).unwrap();

    let baseline = report_data.baseline().mean_wer();
    let mut lines = Vec::new();
    let mut singles_ok = true;
    for (i, sys) in report_data.systems.iter().enumerate() {
        let o = sys.options;
        let single = (o.use_aux as u8 + o.use_seve_head as u8 + o.use_lhuc_seve as u8) == 1;
        if single {
            let ok = sys.mean_wer() <= baseline + 1e-9;
            singles_ok &= ok;
            lines.push(format!(
                "  single {}: {:.2}% vs baseline {:.2}% ({})",
                seva_cli::ablate::system_name(&o),
                sys.mean_wer(),
                baseline,
                if ok { "ok" } else { "VIOLATION" }
            ));
        }
        let _ = i;
    }
    let best = report_data.best_system();
    let best_wer = report_data.systems[best].mean_wer();
    let sig = report_data.significance(best).unwrap();
    let best_ok = best_wer < baseline && sig.significant;
    lines.push(format!(
        "  best {}: {:.2}% vs {:.2}%, MAPSSWE p = {:.2e} ({})",
        seva_cli::ablate::system_name(&report_data.systems[best].options),
        best_wer,
        baseline,
        sig.p_value,
        if best_ok { "significant" } else { "NOT SIGNIFICANT" }
    ));
    let secs = start.elapsed().as_secs_f64();
    println!("{}", report_data.table().unwrap());
    for l in &lines {
        println!("{l}");
    }
    report(
        "criterion 5 (hybrid directional trend)",
        singles_ok && best_ok && secs < 1800.0,
        &format!("runtime {:.1} min", secs / 60.0),
    );
}

/// Criterion 6: the sequence model trained with the severity task achieves
/// mean WER ≤ the CTC-only model over 5 seeds on the test split.
#[test]
fn criterion_6_seq_directional_trend() {
    let cfg = ExperimentConfig::default();
    let seeds = [1u64, 2, 3, 4, 5];
    let mut wer_ctc = 0.0;
    let mut wer_sev = 0.0;
    for &seed in &seeds {
        let ds = exp::build_dataset(&cfg, seed, 1).unwrap();
        let test: Vec<_> = ds.corpus.test_utterances().collect();
        for (use_sev, acc) in [(false, &mut wer_ctc), (true, &mut wer_sev)] {
            let (model, _) = exp::run_seq(&ds, &cfg, use_sev, seed).unwrap();
            let hyps = exp::seq_recognize(&ds, &model, &test, 1).unwrap();
            let scored = exp::score_words(&ds, &hyps).unwrap();
            *acc += scored.wer_overall() / seeds.len() as f64;
        }
    }
    report(
        "criterion 6 (sequence-model severity trend)",
        wer_sev <= wer_ctc + 1e-9,
        &format!("severity-task mean WER {wer_sev:.2}% vs CTC-only {wer_ctc:.2}% over 5 seeds"),
    );
}

/// Criterion 7: unsupervised severity assessment accuracy ≥ 80% on held-out
/// speakers (5-seed mean), and adapting with assessed severities degrades WER
/// by < 2% absolute vs oracle severities.
#[test]
fn criterion_7_assessment_and_adaptation() {
    let mut cfg = ExperimentConfig::default();
    cfg.am.hidden_width = cfg.ablate.hidden_width;
    cfg.am.epochs = cfg.ablate.epochs;
    cfg.am.use_seve_head = true;
    cfg.am.use_lhuc_seve = true;
    let seeds = [1u64, 2, 3, 4, 5];

    let mut acc_sum = 0.0;
    let mut wer_assessed = 0.0;
    let mut wer_oracle = 0.0;
    for &seed in &seeds {
        let ds = exp::build_dataset(&cfg, seed, 1).unwrap();
        let emb = exp::run_embedder(&ds, &cfg, seed).unwrap();

        // Held-out speaker assessment accuracy.
        let mut correct = 0usize;
        let mut total = 0usize;
        for spk in ds.corpus.speakers.iter().filter(|s| s.heldout) {
            let (level, _) = emb.assessed[&spk.speaker_id];
            correct += (level == spk.severity) as usize;
            total += 1;
        }
        acc_sum += correct as f64 / total as f64;

        // Adaptation of held-out speakers with assessed vs oracle severity.
        let settings = exp::AmRunSettings::from_config(&cfg);
        let hy = exp::run_hybrid(&ds, None, &settings, seed).unwrap();
        let heldout_speakers: Vec<String> = ds
            .corpus
            .speakers
            .iter()
            .filter(|s| s.heldout)
            .map(|s| s.speaker_id.clone())
            .collect();
        let heldout_b2: Vec<_> = ds
            .corpus
            .utterances
            .iter()
            .filter(|u| {
                u.block == seva_core::corpus::BlockTag::B2
                    && heldout_speakers.contains(&u.speaker_id)
            })
            .collect();
        let _ = AdaptConfig::default();
        for (source, acc) in [
            (SeveritySource::Assessed, &mut wer_assessed),
            (SeveritySource::Oracle, &mut wer_oracle),
        ] {
            let (lhuc, _) =
                exp::adapt_speakers(&ds, &emb, &hy, &cfg, &heldout_speakers, source).unwrap();
            let adapted = exp::HybridArtifacts {
                model: hy.model.clone(),
                lhuc,
                priors: hy.priors.clone(),
                log: hy.log.clone(),
            };
            let nbest =
                exp::decode_utterances(&ds, Some(&emb), &adapted, &heldout_b2, source, 50, 1)
                    .unwrap();
            let scored = exp::score_one_best(&ds, &nbest).unwrap();
            *acc += scored.wer_overall() / seeds.len() as f64;
        }
    }
    let mean_acc = acc_sum / seeds.len() as f64;
    let degradation = wer_assessed - wer_oracle;
    report(
        "criterion 7 (severity assessment & adaptation)",
        mean_acc >= 0.80 && degradation < 2.0,
        &format!(
            "held-out assessment accuracy {:.0}% (≥80%); adapted WER assessed {wer_assessed:.2}% vs oracle {wer_oracle:.2}% (Δ {degradation:+.2} < 2.0)",
            mean_acc * 100.0
        ),
    );
}

/// Criterion 9: a full pipeline run repeated with identical config and seed
/// produces byte-identical result tables, independent of worker count.
#[test]
fn criterion_9_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 5;
    cfg.corpus.speakers_per_severity = 1;
    cfg.corpus.heldout_per_severity = 1;
    cfg.corpus.n_words = 6;
    cfg.embedder.epochs = 4;
    cfg.am.hidden_width = 24;
    cfg.am.hidden_layers = 2;
    cfg.am.epochs = 2;
    cfg.seq.epochs = 2;
    cfg.seq.hidden = vec![24];
    cfg.seq.splice = 1;
    cfg.eval.source = seva_cli::config::EvalSource::Rescore;

    let run = |name: &str, workers: usize| {
        let out = dir.path().join(name);
        let mut c = cfg.clone();
        c.workers = workers;
        for sub in [
            "gen-corpus",
            "extract",
            "train-embedder",
            "train-am",
            "train-seq",
            "decode",
            "rescore",
            "score",
        ] {
            seva_cli::run(sub, &c, &out).unwrap_or_else(|e| panic!("{sub}: {e:#}"));
        }
        out
    };
    let a = run("a", 1);
    let b = run("b", 4);
    let c = run("c", 1);

    let mut identical = true;
    for artifact in [
        "decode/nbest.tsv",
        "rescore/best.tsv",
        "score/results.txt",
        "score/errors.csv",
    ] {
        let xa = std::fs::read(a.join(artifact)).unwrap();
        let xb = std::fs::read(b.join(artifact)).unwrap();
        let xc = std::fs::read(c.join(artifact)).unwrap();
        identical &= xa == xb && xa == xc;
    }
    report(
        "criterion 9 (pipeline determinism)",
        identical,
        "three full runs (workers 1/4/1) byte-identical across nbest, best, results, errors",
    );
}
