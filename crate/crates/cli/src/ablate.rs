//! Severity-incorporation ablation grid: {aux features, severity training
//! target, severity LHUC} × {on, off}, averaged over seeds, with
//! matched-pairs significance marks against the all-off baseline.

use crate::config::{ExperimentConfig, SeveritySource};
use crate::exp::{self, AmRunSettings};
use anyhow::Result;
use seva_core::embedder::SeverityLevel;
use seva_core::evaluate::{mapsswe, MapssweResult, ScoredResult, ALPHA};
use seva_core::hybrid_am::AmOptions;

/// The 8 grid rows in presentation order (baseline first).
pub fn grid() -> Vec<AmOptions> {
    let mut rows = Vec::new();
    for mask in 0..8u8 {
        rows.push(AmOptions {
            use_aux: mask & 1 != 0,
            use_seve_head: mask & 2 != 0,
            use_lhuc_seve: mask & 4 != 0,
        });
    }
    rows
}

pub fn system_name(o: &AmOptions) -> String {
    let onoff = |b: bool| if b { "on" } else { "off" };
    format!(
        "aux={} tar={} lhuc={}",
        onoff(o.use_aux),
        onoff(o.use_seve_head),
        onoff(o.use_lhuc_seve)
    )
}

pub struct SystemResult {
    pub options: AmOptions,
    /// One scored result per seed, in seed order.
    pub per_seed: Vec<ScoredResult>,
}

impl SystemResult {
    pub fn mean_wer(&self) -> f64 {
        self.per_seed.iter().map(|r| r.wer_overall()).sum::<f64>() / self.per_seed.len() as f64
    }

    pub fn mean_wer_by_severity(&self, s: SeverityLevel) -> f64 {
        self.per_seed
            .iter()
            .map(|r| r.wer_by_severity(s))
            .sum::<f64>()
            / self.per_seed.len() as f64
    }

    /// Per-utterance error counts pooled across seeds (segments stay paired
    /// by position because every seed scores the same utterance list order).
    pub fn pooled_errors(&self) -> Vec<f64> {
        self.per_seed.iter().flat_map(|r| r.error_counts()).collect()
    }
}

pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub systems: Vec<SystemResult>,
}

impl AblationReport {
    pub fn baseline(&self) -> &SystemResult {
        &self.systems[0]
    }

    /// Significance of system `i` against the baseline on pooled segments.
    pub fn significance(&self, i: usize) -> Result<MapssweResult> {
        Ok(mapsswe(
            &self.baseline().pooled_errors(),
            &self.systems[i].pooled_errors(),
        )?)
    }

    /// Index of the lowest-mean-WER non-baseline system.
    pub fn best_system(&self) -> usize {
        (1..self.systems.len())
            .min_by(|&a, &b| {
                self.systems[a]
                    .mean_wer()
                    .partial_cmp(&self.systems[b].mean_wer())
                    .unwrap()
            })
            .unwrap()
    }

    /// Text table mirroring the severity subgroup columns; `*` marks a
    /// statistically significant improvement over the all-off baseline
    /// (matched-pairs test at α = 0.05 on pooled runs).
    pub fn table(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&format!(
            "Severity-incorporation ablation ({} seeds: {:?})\n",
            self.seeds.len(),
            self.seeds
        ));
        out.push_str(&format!(
            "{:<28}{:>8}{:>8}{:>8}{:>8}{:>8}  {}\n",
            "System", "VL", "L", "M", "H", "All", "sig"
        ));
        for (i, sys) in self.systems.iter().enumerate() {
            let mark = if i == 0 {
                String::from("-")
            } else {
                let sig = self.significance(i)?;
                let improved = sys.mean_wer() < self.baseline().mean_wer();
                if sig.significant && improved {
                    format!("* (p={:.4})", sig.p_value)
                } else {
                    format!("  (p={:.4})", sig.p_value)
                }
            };
            out.push_str(&format!(
                "{:<28}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>8.2}  {}\n",
                system_name(&sys.options),
                sys.mean_wer_by_severity(SeverityLevel::VeryLow),
                sys.mean_wer_by_severity(SeverityLevel::Low),
                sys.mean_wer_by_severity(SeverityLevel::Mid),
                sys.mean_wer_by_severity(SeverityLevel::High),
                sys.mean_wer(),
                mark
            ));
        }
        out.push_str(&format!("significance level alpha = {ALPHA}\n"));
        Ok(out)
    }
}

/// Runs the full grid: per seed, one corpus + front-end + embedder shared by
/// all 8 systems; per system, train → decode (assessed severities) → score.
pub fn run_ablation(cfg: &ExperimentConfig, seeds: &[u64], workers: usize) -> Result<AblationReport> {
    let mut systems: Vec<SystemResult> = grid()
        .into_iter()
        .map(|options| SystemResult {
            options,
            per_seed: Vec::new(),
        })
        .collect();

    for &seed in seeds {
        let ds = exp::build_dataset(cfg, seed, workers)?;
        let emb = exp::run_embedder(&ds, cfg, seed)?;
        let test: Vec<&seva_core::corpus::Utterance> = ds.corpus.test_utterances().collect();
        for sys in systems.iter_mut() {
            let settings = AmRunSettings {
                options: sys.options,
                hidden_width: cfg.ablate.hidden_width,
                hidden_layers: cfg.am.hidden_layers,
                epochs: cfg.ablate.epochs,
                learning_rate: cfg.am.learning_rate,
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
                SeveritySource::Assessed,
                cfg.decode.nbest,
                workers,
            )?;
            sys.per_seed.push(exp::score_one_best(&ds, &nbest)?);
        }
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        systems,
    })
}
