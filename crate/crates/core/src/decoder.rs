//! Isolated-word first-pass decoding and two-pass rescoring.
//!
//! Each lexicon word is a left-to-right chain of 3 states per phone with
//! fixed 0.5 self-loop / 0.5 forward transitions and no skips. Word scores
//! are Viterbi log-probabilities over frame posteriors divided by tri-state
//! priors (hybrid scaling). Second-pass rescoring interpolates named scorer
//! outputs with the first-pass score.

use crate::{Error, Result};
use crate::netcore::Mat;
use std::collections::BTreeMap;
use std::path::Path;

pub const STATES_PER_PHONE: usize = 3;
/// First-pass N-best depth.
pub const DEFAULT_NBEST: usize = 50;
/// Scorer name reserved for the first-pass Viterbi score.
pub const FIRST_PASS: &str = "first_pass";

/// Word list with phone-index pronunciations over a fixed phone inventory.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<(String, Vec<usize>)>,
    n_phones: usize,
}

impl Lexicon {
    pub fn new(mut entries: Vec<(String, Vec<usize>)>, n_phones: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("lexicon".into()));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidArg(format!("duplicate word {:?}", w[0].0)));
            }
        }
        for (word, phones) in &entries {
            if phones.is_empty() {
                return Err(Error::InvalidArg(format!("word {word:?} has no phones")));
            }
            if let Some(&p) = phones.iter().find(|&&p| p >= n_phones) {
                return Err(Error::InvalidArg(format!(
                    "word {word:?}: phone {p} outside inventory of {n_phones}"
                )));
            }
        }
        Ok(Lexicon { entries, n_phones })
    }

    pub fn n_phones(&self) -> usize {
        self.n_phones
    }

    /// Total tri-state inventory size (3 per phone).
    pub fn n_states(&self) -> usize {
        self.n_phones * STATES_PER_PHONE
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(w, _)| w.as_str())
    }

    pub fn phones(&self, word: &str) -> Option<&[usize]> {
        self.entries
            .binary_search_by(|(w, _)| w.as_str().cmp(word))
            .ok()
            .map(|i| self.entries[i].1.as_slice())
    }

    /// Tri-state chain for a word: phone p expands to 3p, 3p+1, 3p+2.
    pub fn state_chain(&self, word: &str) -> Option<Vec<usize>> {
        self.phones(word).map(|phones| {
            phones
                .iter()
                .flat_map(|&p| (0..STATES_PER_PHONE).map(move |s| STATES_PER_PHONE * p + s))
                .collect()
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.entries.iter().map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    /// Tab-separated lexicon file: word, then space-separated phone indices.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = format!("#phones\t{}\n", self.n_phones);
        for (w, phones) in &self.entries {
            let ids: Vec<String> = phones.iter().map(|p| p.to_string()).collect();
            body.push_str(&format!("{w}\t{}\n", ids.join(" ")));
        }
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ctx = path.display().to_string();
        let body = std::fs::read_to_string(path)?;
        let mut n_phones = None;
        let mut entries = Vec::new();
        for line in body.lines() {
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(&ctx, format!("bad line {line:?}")))?;
            if key == "#phones" {
                n_phones = Some(
                    rest.parse::<usize>()
                        .map_err(|e| Error::format(&ctx, format!("bad phone count: {e}")))?,
                );
            } else {
                let phones = rest
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|e| Error::format(&ctx, format!("bad phone id {t:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                entries.push((key.to_string(), phones));
            }
        }
        let n_phones = n_phones.ok_or_else(|| Error::format(&ctx, "missing #phones header"))?;
        Lexicon::new(entries, n_phones)
    }
}

/// One scored word hypothesis.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub word: String,
    pub first_pass_logprob: f64,
    pub second_pass_logprobs: BTreeMap<String, f64>,
}

/// First-pass N-best list, sorted by first-pass score descending
/// (ties broken lexicographically); words are unique.
#[derive(Debug, Clone)]
pub struct NBestList {
    pub utterance_id: String,
    pub hypotheses: Vec<Hypothesis>,
}

/// Tri-state priors from training-target frequencies, floored at 1e-6 and
/// normalized.
pub fn estimate_priors(targets: impl Iterator<Item = usize>, n_states: usize) -> Vec<f64> {
    let mut counts = vec![0.0f64; n_states];
    let mut total = 0.0;
    for t in targets {
        if t < n_states {
            counts[t] += 1.0;
            total += 1.0;
        }
    }
    if total == 0.0 {
        return vec![1.0 / n_states as f64; n_states];
    }
    let mut p: Vec<f64> = counts.iter().map(|c| (c / total).max(1e-6)).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Viterbi log-score of a word's state chain over T frames of scaled
/// log-likelihoods, with ln(½) per transition. Returns None when T < chain
/// length (infeasible).
fn viterbi_word(scaled_ll: &Mat, chain: &[usize]) -> Option<f64> {
    let t_frames = scaled_ll.rows();
    let m = chain.len();
    if t_frames < m {
        return None;
    }
    let ln_half = 0.5f64.ln();
    let neg = f64::NEG_INFINITY;
    let mut prev = vec![neg; m];
    prev[0] = scaled_ll.at(0, chain[0]);
    let mut cur = vec![neg; m];
    for t in 1..t_frames {
        for s in 0..m {
            let stay = prev[s];
            let step = if s >= 1 { prev[s - 1] } else { neg };
            let best = stay.max(step);
            cur[s] = if best == neg {
                neg
            } else {
                best + ln_half + scaled_ll.at(t, chain[s])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let score = prev[m - 1];
    (score != neg).then_some(score)
}

/// First-pass isolated-word decode: per-word Viterbi over log(posterior/prior),
/// mandatory left-to-right traversal, self-loop and forward probability 0.5.
/// Returns the top-N words; an utterance shorter than every word's state
/// chain is an error.
pub fn decode_nbest(
    utterance_id: &str,
    posteriors: &Mat,
    lexicon: &Lexicon,
    priors: &[f64],
    n: usize,
) -> Result<NBestList> {
    let t_frames = posteriors.rows();
    if t_frames == 0 {
        return Err(Error::EmptyInput(format!("posteriors for {utterance_id}")));
    }
    if posteriors.cols() != lexicon.n_states() {
        return Err(Error::dim(
            "decode_nbest posterior columns",
            lexicon.n_states(),
            posteriors.cols(),
        ));
    }
    if priors.len() != lexicon.n_states() {
        return Err(Error::dim(
            "decode_nbest priors",
            lexicon.n_states(),
            priors.len(),
        ));
    }
    for t in 0..t_frames {
        let sum: f64 = posteriors.row(t).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArg(format!(
                "posterior row {t} sums to {sum}, expected 1 ± 1e-6"
            )));
        }
    }

    // Hybrid scaling: log(posterior) − log(prior), once per (frame, state).
    let scaled = Mat::from_fn(t_frames, lexicon.n_states(), |t, s| {
        posteriors.at(t, s).ln() - priors[s].ln()
    });

    let mut scored: Vec<(String, f64)> = Vec::new();
    for (word, _) in lexicon.iter() {
        let chain = lexicon.state_chain(word).expect("word from lexicon");
        if let Some(score) = viterbi_word(&scaled, &chain) {
            scored.push((word.to_string(), score));
        }
    }
    if scored.is_empty() {
        return Err(Error::EmptyFeasibleSet { frames: t_frames });
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(n.min(lexicon.len()));
    Ok(NBestList {
        utterance_id: utterance_id.to_string(),
        hypotheses: scored
            .into_iter()
            .map(|(word, s)| Hypothesis {
                word,
                first_pass_logprob: s,
                second_pass_logprobs: BTreeMap::new(),
            })
            .collect(),
    })
}

/// Score interpolation over named scorers (including "first_pass").
///
/// Hypotheses with −∞ in any nonzero-weighted component are removed; if that
/// removes everything, the first-pass 1-best is returned. Ties break by
/// first-pass rank. Every nonzero-weighted scorer must have a score on every
/// hypothesis.
pub fn rescore(nbest: &NBestList, weights: &BTreeMap<String, f64>) -> Result<Hypothesis> {
    if nbest.hypotheses.is_empty() {
        return Err(Error::EmptyInput(format!(
            "n-best list for {}",
            nbest.utterance_id
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (rank, hyp) in nbest.hypotheses.iter().enumerate() {
        let mut total = 0.0;
        let mut alive = true;
        for (scorer, &w) in weights {
            if w == 0.0 {
                continue;
            }
            let s = if scorer == FIRST_PASS {
                hyp.first_pass_logprob
            } else {
                match hyp.second_pass_logprobs.get(scorer) {
                    Some(&s) => s,
                    None => {
                        return Err(Error::MissingScore {
                            scorer: scorer.clone(),
                            word: hyp.word.clone(),
                        })
                    }
                }
            };
            if s == f64::NEG_INFINITY {
                alive = false;
                break;
            }
            total += w * s;
        }
        if !alive {
            continue;
        }
        // Strictly-greater keeps the earlier (better first-pass rank) on ties.
        if best.map_or(true, |(_, b)| total > b) {
            best = Some((rank, total));
        }
    }
    let idx = best.map(|(rank, _)| rank).unwrap_or(0); // all removed → first-pass 1-best
    Ok(nbest.hypotheses[idx].clone())
}

/// A named second-pass scoring function over hypothesis words.
pub type Scorer<'a> = (&'a str, &'a dyn Fn(&str) -> Result<f64>);

/// Applies each scorer to every hypothesis (failures score −∞ and are
/// reported in the returned log), then rescopes by interpolation. Returns the
/// winning hypothesis and the augmented list.
pub fn combine_systems(
    nbest: &NBestList,
    scorers: &[Scorer<'_>],
    weights: &BTreeMap<String, f64>,
) -> Result<(Hypothesis, NBestList, Vec<String>)> {
    let mut augmented = nbest.clone();
    let mut failures = Vec::new();
    for (name, f) in scorers {
        for hyp in &mut augmented.hypotheses {
            let score = match f(&hyp.word) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!(
                        "{}: scorer {name} failed on {:?}: {e}",
                        nbest.utterance_id, hyp.word
                    ));
                    f64::NEG_INFINITY
                }
            };
            hyp.second_pass_logprobs.insert(name.to_string(), score);
        }
    }
    let best = rescore(&augmented, weights)?;
    Ok((best, augmented, failures))
}

/// N-best file: `utt_id<TAB>rank<TAB>word<TAB>first_pass<TAB>scorer=value;...`
/// with `-` when no second-pass scores exist. This file is the contract
/// between the first-pass and second-pass tools.
pub fn write_nbest(path: &Path, lists: &[NBestList]) -> Result<()> {
    let mut body = String::new();
    for list in lists {
        for (rank, hyp) in list.hypotheses.iter().enumerate() {
            let scores = if hyp.second_pass_logprobs.is_empty() {
                "-".to_string()
            } else {
                hyp.second_pass_logprobs
                    .iter()
                    .map(|(k, v)| format!("{k}={v:.6}"))
                    .collect::<Vec<_>>()
                    .join(";")
            };
            body.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\n",
                list.utterance_id,
                rank + 1,
                hyp.word,
                hyp.first_pass_logprob,
                scores
            ));
        }
    }
    std::fs::write(path, body)?;
    Ok(())
}

pub fn read_nbest(path: &Path) -> Result<Vec<NBestList>> {
    let ctx = path.display().to_string();
    let body = std::fs::read_to_string(path)?;
    let mut lists: Vec<NBestList> = Vec::new();
    for line in body.lines() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::format(&ctx, format!("expected 5 fields: {line:?}")));
        }
        let mut second = BTreeMap::new();
        if fields[4] != "-" {
            for pair in fields[4].split(';') {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::format(&ctx, format!("bad scorer pair {pair:?}")))?;
                second.insert(
                    k.to_string(),
                    v.parse::<f64>()
                        .map_err(|e| Error::format(&ctx, format!("bad score {v:?}: {e}")))?,
                );
            }
        }
        let hyp = Hypothesis {
            word: fields[2].to_string(),
            first_pass_logprob: fields[3]
                .parse()
                .map_err(|e| Error::format(&ctx, format!("bad first-pass score: {e}")))?,
            second_pass_logprobs: second,
        };
        match lists.last_mut() {
            Some(l) if l.utterance_id == fields[0] => l.hypotheses.push(hyp),
            _ => lists.push(NBestList {
                utterance_id: fields[0].to_string(),
                hypotheses: vec![hyp],
            }),
        }
    }
    Ok(lists)
}
