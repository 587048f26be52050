//! Scratch runner for sizing the default experiment.

use seva_cli::ablate::{self, grid, system_name};
use seva_cli::config::ExperimentConfig;
use seva_cli::exp;
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("quick");
    let cfg = ExperimentConfig::default();

    match mode {
        "quick" => {
            // One seed: dataset stats, embedder accuracy, all 8 systems.
            // args: quick [seed] [epochs] [lr] [width]
            let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
            let epochs: u32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(cfg.ablate.epochs);
            let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(cfg.am.learning_rate);
            let width: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(cfg.ablate.hidden_width);
            let t0 = Instant::now();
            let ds = exp::build_dataset(&cfg, seed, 8)?;
            println!(
                "dataset: {} utts ({} train, {} test, {} heldout) in {:.1}s",
                ds.corpus.utterances.len(),
                ds.corpus.train_utterances().count(),
                ds.corpus.test_utterances().count(),
                ds.corpus.heldout_utterances().count(),
                t0.elapsed().as_secs_f64()
            );
            let mean_frames: f64 = ds.feats.values().map(|f| f.rows() as f64).sum::<f64>()
                / ds.feats.len() as f64;
            println!("mean frames/utt: {mean_frames:.1}");

            let t1 = Instant::now();
            let emb = exp::run_embedder(&ds, &cfg, seed)?;
            println!("embedder trained in {:.1}s", t1.elapsed().as_secs_f64());
            // Assessment accuracy, split by train vs heldout speakers.
            let mut correct_train = 0;
            let mut n_train = 0;
            let mut correct_held = 0;
            let mut n_held = 0;
            for spk in &ds.corpus.speakers {
                let (level, _) = emb.assessed[&spk.speaker_id];
                if spk.heldout {
                    n_held += 1;
                    correct_held += (level == spk.severity) as usize;
                } else {
                    n_train += 1;
                    correct_train += (level == spk.severity) as usize;
                }
            }
            println!("assessment: train spk {correct_train}/{n_train}, heldout {correct_held}/{n_held}");

            let test: Vec<_> = ds.corpus.test_utterances().collect();
            for options in grid() {
                let t2 = Instant::now();
                let settings = exp::AmRunSettings {
                    options,
                    hidden_width: width,
                    hidden_layers: cfg.am.hidden_layers,
                    epochs,
                    learning_rate: lr,
                    batch_size: cfg.am.batch_size,
                    sat: false,
                    r_learning_rate: cfg.am.r_learning_rate,
                };
                let hy = exp::run_hybrid(&ds, Some(&emb), &settings, seed)?;
                let nbest = exp::decode_utterances(
                    &ds,
                    Some(&emb),
                    &hy,
                    &test,
                    seva_cli::config::SeveritySource::Assessed,
                    50,
                    8,
                )?;
                let scored = exp::score_one_best(&ds, &nbest)?;
                println!(
                    "{:<28} WER {:6.2}%  (VL {:5.2} L {:5.2} M {:5.2} H {:5.2})  losses {:?}  [{:.1}s]",
                    system_name(&settings.options),
                    scored.wer_overall(),
                    scored.wer_by_severity(seva_core::embedder::SeverityLevel::VeryLow),
                    scored.wer_by_severity(seva_core::embedder::SeverityLevel::Low),
                    scored.wer_by_severity(seva_core::embedder::SeverityLevel::Mid),
                    scored.wer_by_severity(seva_core::embedder::SeverityLevel::High),
                    hy.log
                        .epoch_losses
                        .iter()
                        .map(|l| (l * 100.0).round() / 100.0)
                        .collect::<Vec<_>>(),
                    t2.elapsed().as_secs_f64()
                );
            }
        }
        "full" => {
            let t0 = Instant::now();
            let report = ablate::run_ablation(&cfg, &cfg.ablate.seeds, 8)?;
            println!("{}", report.table()?);
            println!("total {:.1}s", t0.elapsed().as_secs_f64());
            let best = report.best_system();
            println!(
                "best system: {} ({:.2}% vs baseline {:.2}%)",
                system_name(&report.systems[best].options),
                report.systems[best].mean_wer(),
                report.baseline().mean_wer()
            );
        }
        "seq" => {
            let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
            let mut cfg = cfg.clone();
            if let Some(aug) = args.get(3) {
                cfg.corpus.augment = aug == "aug";
            }
            if let Some(e) = args.get(4).and_then(|s| s.parse().ok()) {
                cfg.seq.epochs = e;
            }
            let t0 = Instant::now();
            let ds = exp::build_dataset(&cfg, seed, 8)?;
            let test: Vec<_> = ds.corpus.test_utterances().collect();
            for use_sev in [false, true] {
                let t1 = Instant::now();
                let (model, log) = exp::run_seq(&ds, &cfg, use_sev, seed)?;
                let hyps = exp::seq_recognize(&ds, &model, &test, 8)?;
                let scored = exp::score_words(&ds, &hyps)?;
                // Severity-head accuracy on the test split (pooled encoder).
                let mut sev_correct = 0usize;
                for u in &test {
                    let enc = seva_core::seqmodel::encode(&model, &ds.feats[&u.id])?;
                    let h = enc.cols();
                    let mut pooled = vec![0.0; h];
                    for t in 0..enc.rows() {
                        for (p, v) in pooled.iter_mut().zip(enc.row(t)) {
                            *p += v / enc.rows() as f64;
                        }
                    }
                    let logits = model.seve_head.forward(&pooled)?;
                    let p = seva_core::netcore::softmax(logits.output());
                    let arg = (0..4).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap();
                    sev_correct += (arg == u.severity.index()) as usize;
                }
                println!(
                    "seq use_severity={use_sev}: WER {:6.2}%  sev-acc {:.1}%  first/last loss {:.2}/{:.3}  [{:.1}s]",
                    scored.wer_overall(),
                    100.0 * sev_correct as f64 / test.len() as f64,
                    log.epoch_losses.first().unwrap(),
                    log.epoch_losses.last().unwrap(),
                    t1.elapsed().as_secs_f64()
                );
            }
            println!("total {:.1}s", t0.elapsed().as_secs_f64());
        }
        other => anyhow::bail!("unknown mode {other}"),
    }
    Ok(())
}
