use seva_core::hybrid_am::*;
use seva_core::embedder::SeverityLevel;
use seva_core::netcore::{Mat, TrainConfig};
use seva_core::util::rng::SplitMix64;
use std::time::Instant;

fn main() {
    let mut rng = SplitMix64::new(1);
    let n_utts = 960;
    let t_frames = 20;
    let feat_dim = 160;
    let data: Vec<AmExample> = (0..n_utts).map(|u| {
        AmExample {
            utt_id: format!("u{u}"),
            feats: Mat::from_fn(t_frames, feat_dim, |_, _| rng.uniform(-1.0, 1.0)),
            aux: Some((0..25).map(|_| rng.uniform(-0.5, 0.5)).collect()),
            targets: FrameTargets {
                tri: (0..t_frames).map(|_| rng.below(36)).collect(),
                mono: (0..t_frames).map(|_| rng.below(12)).collect(),
                severity: SeverityLevel::ALL[u % 4],
            },
            speaker: format!("S{}", u % 16),
        }
    }).collect();

    for width in [128usize, 192, 256] {
        let arch = AmArch::new(36, 12).with_width(width);
        let cfg = TrainConfig::new(0.05, 1, 64, 7);
        let opts = AmOptions { use_aux: true, use_seve_head: true, use_lhuc_seve: true };
        let start = Instant::now();
        let (_m, _l, log) = train_am(&data, &cfg, &opts, &arch).unwrap();
        let dt = start.elapsed().as_secs_f64();
        println!("width {width}: {dt:.2}s per epoch over {} frames (loss {:.3})", n_utts*t_frames, log.epoch_losses[0]);
    }
}
