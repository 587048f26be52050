//! WER computation and matched-pairs significance testing.

use crate::embedder::SeverityLevel;
use crate::{Error, Result};

/// Significance level for the matched-pairs test.
pub const ALPHA: f64 = 0.05;

/// Levenshtein error counts for one utterance.
#[derive(Debug, Clone)]
pub struct UttScore {
    pub utt_id: String,
    pub severity: SeverityLevel,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
    /// Optional pass-through tag (e.g. seen/unseen word split).
    pub tag: Option<String>,
}

impl UttScore {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein alignment counts (substitutions, deletions,
/// insertions) with a deterministic backtrace preferring substitution over
/// deletion over insertion on ties.
pub fn align_counts(reference: &[String], hypothesis: &[String]) -> (usize, usize, usize) {
    let n = reference.len();
    let m = hypothesis.len();
    let mut dist = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dist.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dist[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            dist[i][j] = (dist[i - 1][j - 1] + sub_cost)
                .min(dist[i - 1][j] + 1)
                .min(dist[i][j - 1] + 1);
        }
    }
    // Backtrace: diagonal (match/substitution) preferred, then up (deletion),
    // then left (insertion).
    let (mut i, mut j) = (n, m);
    let (mut subs, mut dels, mut inss) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if dist[i][j] == dist[i - 1][j - 1] + sub_cost {
                subs += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[i][j] == dist[i - 1][j] + 1 {
            dels += 1;
            i -= 1;
            continue;
        }
        inss += 1;
        j -= 1;
    }
    (subs, dels, inss)
}

/// One utterance to score; a missing hypothesis counts as all deletions
/// unless `missing_is_error`.
#[derive(Debug, Clone)]
pub struct ScorePair {
    pub utt_id: String,
    pub severity: SeverityLevel,
    pub reference: Vec<String>,
    pub hypothesis: Option<Vec<String>>,
    pub tag: Option<String>,
}

/// Per-utterance counts with per-severity-subgroup and overall aggregates.
#[derive(Debug, Clone)]
pub struct ScoredResult {
    pub utts: Vec<UttScore>,
}

impl ScoredResult {
    fn wer_over<'a>(utts: impl Iterator<Item = &'a UttScore>) -> f64 {
        let mut errors = 0usize;
        let mut refs = 0usize;
        for u in utts {
            errors += u.errors();
            refs += u.ref_words;
        }
        if refs == 0 {
            0.0
        } else {
            100.0 * errors as f64 / refs as f64
        }
    }

    pub fn wer_overall(&self) -> f64 {
        Self::wer_over(self.utts.iter())
    }

    pub fn wer_by_severity(&self, s: SeverityLevel) -> f64 {
        Self::wer_over(self.utts.iter().filter(|u| u.severity == s))
    }

    /// Per-utterance error counts in utterance order (MAPSSWE segments).
    pub fn error_counts(&self) -> Vec<f64> {
        self.utts.iter().map(|u| u.errors() as f64).collect()
    }

    /// Result table mirroring the severity subgroup columns plus "All".
    pub fn table(&self, system: &str) -> String {
        let mut line = format!("{system:<24}");
        for s in SeverityLevel::ALL {
            line.push_str(&format!("{:>8.2}", self.wer_by_severity(s)));
        }
        line.push_str(&format!("{:>8.2}", self.wer_overall()));
        line
    }

    pub fn table_header() -> String {
        let mut line = format!("{:<24}", "System");
        for s in SeverityLevel::ALL {
            line.push_str(&format!("{:>8}", s.code()));
        }
        line.push_str(&format!("{:>8}", "All"));
        line
    }

    /// Machine-readable per-utterance error CSV.
    pub fn csv(&self) -> String {
        let mut out =
            String::from("utt_id,severity,tag,ref_words,substitutions,deletions,insertions\n");
        for u in &self.utts {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                u.utt_id,
                u.severity.code(),
                u.tag.as_deref().unwrap_or(""),
                u.ref_words,
                u.substitutions,
                u.deletions,
                u.insertions
            ));
        }
        out
    }
}

/// Scores aligned reference/hypothesis pairs.
pub fn wer(pairs: &[ScorePair], missing_is_error: bool) -> Result<ScoredResult> {
    let mut utts = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (s, d, i) = match &p.hypothesis {
            Some(h) => align_counts(&p.reference, h),
            None if missing_is_error => {
                return Err(Error::EmptyInput(format!(
                    "missing hypothesis for {}",
                    p.utt_id
                )))
            }
            None => (0, p.reference.len(), 0),
        };
        utts.push(UttScore {
            utt_id: p.utt_id.clone(),
            severity: p.severity,
            substitutions: s,
            deletions: d,
            insertions: i,
            ref_words: p.reference.len(),
            tag: p.tag.clone(),
        });
    }
    Ok(ScoredResult { utts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapssweFlag {
    Normal,
    /// n < 2, or zero variance with zero mean difference.
    Undefined,
    /// Zero variance with nonzero mean: significant by convention.
    ZeroVariance,
}

#[derive(Debug, Clone)]
pub struct MapssweResult {
    pub z: f64,
    pub p_value: f64,
    pub significant: bool,
    pub flag: MapssweFlag,
}

/// Abramowitz-Stegun 7.1.26 erf approximation (|error| ≤ 1.5e-7).
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Matched-pairs sentence-segment word-error significance test over
/// per-segment error counts: z = mean(d)/sqrt(var(d)/n) with d = a − b,
/// two-sided normal-approximation p-value, significance at α = 0.05.
pub fn mapsswe(errors_a: &[f64], errors_b: &[f64]) -> Result<MapssweResult> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::dim(
            "mapsswe segment counts",
            errors_a.len(),
            errors_b.len(),
        ));
    }
    let n = errors_a.len();
    let d: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a - b).collect();
    if n < 2 {
        return Ok(MapssweResult {
            z: f64::NAN,
            p_value: f64::NAN,
            significant: false,
            flag: MapssweFlag::Undefined,
        });
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            MapssweResult {
                z: f64::NAN,
                p_value: f64::NAN,
                significant: false,
                flag: MapssweFlag::Undefined,
            }
        } else {
            MapssweResult {
                z: mean.signum() * f64::INFINITY,
                p_value: 0.0,
                significant: true,
                flag: MapssweFlag::ZeroVariance,
            }
        });
    }
    let z = mean / (var / n as f64).sqrt();
    let p = 2.0 * (1.0 - normal_cdf(z.abs()));
    Ok(MapssweResult {
        z,
        p_value: p,
        significant: p < ALPHA,
        flag: MapssweFlag::Normal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng::SplitMix64;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(|w| w.to_string()).collect()
    }

    fn pair(id: &str, sev: SeverityLevel, r: &str, h: Option<&str>) -> ScorePair {
        ScorePair {
            utt_id: id.into(),
            severity: sev,
            reference: words(r),
            hypothesis: h.map(words),
            tag: None,
        }
    }

    #[test]
    fn identical_is_zero_percent() {
        let pairs = vec![pair("u1", SeverityLevel::Mid, "hello", Some("hello"))];
        let res = wer(&pairs, false).unwrap();
        assert_eq!(res.wer_overall(), 0.0);
    }

    #[test]
    fn one_wrong_of_four_is_25_percent() {
        let pairs = vec![
            pair("u1", SeverityLevel::Mid, "a", Some("a")),
            pair("u2", SeverityLevel::Mid, "a", Some("b")),
            pair("u3", SeverityLevel::Mid, "a", Some("a")),
            pair("u4", SeverityLevel::Mid, "a", Some("a")),
        ];
        let res = wer(&pairs, false).unwrap();
        assert!((res.wer_overall() - 25.0).abs() < 1e-12);
    }

    /// Independent DP oracle computing only the edit distance.
    fn edit_distance(a: &[String], b: &[String]) -> usize {
        let (n, m) = (a.len(), b.len());
        let mut prev: Vec<usize> = (0..=m).collect();
        for i in 1..=n {
            let mut cur = vec![0usize; m + 1];
            cur[0] = i;
            for j in 1..=m {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                cur[j] = (prev[j - 1] + cost).min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[m]
    }

    #[test]
    fn counts_match_dp_oracle_on_random_cases() {
        let mut rng = SplitMix64::new(5);
        let vocab = ["a", "b", "c", "d"];
        for _ in 0..200 {
            let n = rng.below(6);
            let m = rng.below(6);
            let r: Vec<String> = (0..n).map(|_| vocab[rng.below(4)].to_string()).collect();
            let h: Vec<String> = (0..m).map(|_| vocab[rng.below(4)].to_string()).collect();
            let (s, d, i) = align_counts(&r, &h);
            assert_eq!(s + d + i, edit_distance(&r, &h), "r={r:?} h={h:?}");
            // Structural identities.
            assert_eq!(r.len() + i, h.len() + d, "length balance");
        }
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let pairs = vec![pair("u1", SeverityLevel::Low, "a b c", Some(""))];
        let res = wer(&pairs, false).unwrap();
        assert_eq!(res.utts[0].deletions, 3);
        assert!((res.wer_overall() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn missing_hypothesis_modes() {
        let pairs = vec![pair("u1", SeverityLevel::Low, "a b", None)];
        let res = wer(&pairs, false).unwrap();
        assert_eq!(res.utts[0].deletions, 2);
        assert!(wer(&pairs, true).is_err());
    }

    #[test]
    fn wer_symmetric_under_relabeling() {
        let pairs1 = vec![pair("u1", SeverityLevel::Mid, "a b a", Some("a c a"))];
        // Consistent relabeling a→x, b→y, c→z.
        let pairs2 = vec![pair("u1", SeverityLevel::Mid, "x y x", Some("x z x"))];
        let r1 = wer(&pairs1, false).unwrap();
        let r2 = wer(&pairs2, false).unwrap();
        assert_eq!(r1.wer_overall(), r2.wer_overall());
        assert_eq!(r1.utts[0].substitutions, r2.utts[0].substitutions);
    }

    #[test]
    fn subgroup_aggregates_sum_to_overall() {
        let pairs = vec![
            pair("u1", SeverityLevel::VeryLow, "a", Some("b")),
            pair("u2", SeverityLevel::Low, "a", Some("a")),
            pair("u3", SeverityLevel::Mid, "a b", Some("a")),
            pair("u4", SeverityLevel::High, "a", Some("a")),
        ];
        let res = wer(&pairs, false).unwrap();
        let total_errors: usize = SeverityLevel::ALL
            .iter()
            .flat_map(|&s| res.utts.iter().filter(move |u| u.severity == s))
            .map(|u| u.errors())
            .sum();
        let overall_errors: usize = res.utts.iter().map(|u| u.errors()).sum();
        assert_eq!(total_errors, overall_errors);
        // Table renders all five columns.
        let t = res.table("sys");
        assert_eq!(t.split_whitespace().count(), 6);
    }

    #[test]
    fn mapsswe_identical_sequences_undefined() {
        let a = vec![1.0, 2.0, 0.0, 3.0];
        let res = mapsswe(&a, &a).unwrap();
        assert_eq!(res.flag, MapssweFlag::Undefined);
        assert!(!res.significant);
    }

    #[test]
    fn mapsswe_constant_difference_significant_by_convention() {
        let a = vec![1.0; 100];
        let b = vec![0.0; 100];
        let res = mapsswe(&a, &b).unwrap();
        assert_eq!(res.flag, MapssweFlag::ZeroVariance);
        assert!(res.significant);
        assert!(res.z.is_infinite() && res.z > 0.0);
    }

    #[test]
    fn mapsswe_matches_statistics_oracle() {
        // Shifted coin flips with a known gap.
        let mut rng = SplitMix64::new(9);
        let a: Vec<f64> = (0..200).map(|_| (rng.below(2) + 1) as f64).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.below(2) as f64).collect();
        let res = mapsswe(&a, &b).unwrap();

        // Manual mean/variance recompute.
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (d.len() - 1) as f64;
        let z = mean / (var / d.len() as f64).sqrt();
        assert!((res.z - z).abs() < 1e-12);
        assert!(res.significant, "z = {z}");
    }

    #[test]
    fn mapsswe_sign_flips_on_swap_p_unchanged() {
        let mut rng = SplitMix64::new(11);
        let a: Vec<f64> = (0..50).map(|_| rng.below(3) as f64).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.below(4) as f64).collect();
        let ab = mapsswe(&a, &b).unwrap();
        let ba = mapsswe(&b, &a).unwrap();
        assert!((ab.z + ba.z).abs() < 1e-12);
        assert!((ab.p_value - ba.p_value).abs() < 1e-12);
    }

    #[test]
    fn mapsswe_too_few_segments_undefined() {
        let res = mapsswe(&[1.0], &[0.0]).unwrap();
        assert_eq!(res.flag, MapssweFlag::Undefined);
        assert!(mapsswe(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn erf_reference_values() {
        // erf(1) = 0.8427007929; Φ(1.96) ≈ 0.9750. The approximation is
        // accurate to ~1.5e-7.
        assert!((erf(1.0) - 0.8427007929).abs() < 2e-7);
        assert!((normal_cdf(1.96) - 0.975).abs() < 1e-4);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
    }
}
