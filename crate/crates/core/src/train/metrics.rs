//! Corpus BLEU-4 and chrF++.
//!
//! Both metrics work on whitespace-separated tokens of already tokenized
//! text; no further tokenization or lowercasing is applied.

use std::collections::HashMap;
use std::hash::Hash;

use super::TrainError;

fn ngram_counts<T: Eq + Hash + Clone>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut out = HashMap::new();
    if n == 0 || items.len() < n {
        return out;
    }
    for w in items.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// (clipped matches, hypothesis n-grams, reference n-grams).
fn match_stats<T: Eq + Hash + Clone>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, hyp.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

fn check_lengths(hyps: usize, refs: usize) -> Result<(), TrainError> {
    if hyps != refs {
        return Err(TrainError::Metric(format!("{hyps} hypotheses for {refs} references")));
    }
    if hyps == 0 {
        return Err(TrainError::Metric("empty corpus".into()));
    }
    Ok(())
}

/// Sufficient statistics of corpus BLEU-4.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn precisions(&self) -> [f64; 4] {
        std::array::from_fn(|n| {
            if self.totals[n] > 0 {
                self.matches[n] as f64 / self.totals[n] as f64
            } else {
                0.0
            }
        })
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// BLEU on a 0–100 scale; any zero precision gives 0.
    pub fn score(&self) -> f64 {
        let p = self.precisions();
        if p.contains(&0.0) {
            return 0.0;
        }
        let log_mean = p.iter().map(|x| x.ln()).sum::<f64>() / 4.0;
        100.0 * self.brevity_penalty() * log_mean.exp()
    }
}

pub fn bleu_stats<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R]) -> Result<BleuStats, TrainError> {
    check_lengths(hyps.len(), refs.len())?;
    let mut s = BleuStats {
        matches: [0; 4],
        totals: [0; 4],
        hyp_len: 0,
        ref_len: 0,
    };
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        s.hyp_len += h.len();
        s.ref_len += r.len();
        for n in 1..=4 {
            let (m, t, _) = match_stats(&h, &r, n);
            s.matches[n - 1] += m;
            s.totals[n - 1] += t;
        }
    }
    Ok(s)
}

/// Corpus BLEU-4 with brevity penalty and no smoothing, 0–100.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R]) -> Result<f64, TrainError> {
    Ok(bleu_stats(hyps, refs)?.score())
}

pub const CHAR_ORDER: usize = 6;
pub const WORD_ORDER: usize = 2;
pub const CHRF_BETA: f64 = 2.0;

/// Per order: (matches, hypothesis n-grams, reference n-grams); character
/// orders first, then word orders.
fn chrf_stats(hyp: &str, reference: &str) -> Vec<(usize, usize, usize)> {
    let hc: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let hw: Vec<&str> = hyp.split_whitespace().collect();
    let rw: Vec<&str> = reference.split_whitespace().collect();
    let mut out = Vec::with_capacity(CHAR_ORDER + WORD_ORDER);
    for n in 1..=CHAR_ORDER {
        out.push(match_stats(&hc, &rc, n));
    }
    for n in 1..=WORD_ORDER {
        out.push(match_stats(&hw, &rw, n));
    }
    out
}

fn chrf_from_stats(stats: &[(usize, usize, usize)]) -> f64 {
    let b2 = CHRF_BETA * CHRF_BETA;
    let mut total = 0.0;
    let mut orders = 0;
    for &(m, h, r) in stats {
        if h == 0 || r == 0 {
            continue;
        }
        orders += 1;
        let p = m as f64 / h as f64;
        let rec = m as f64 / r as f64;
        if p + rec > 0.0 {
            total += (1.0 + b2) * p * rec / (b2 * p + rec);
        }
    }
    if orders == 0 {
        0.0
    } else {
        100.0 * total / orders as f64
    }
}

/// Corpus chrF++ (character 6-grams, word 2-grams, β = 2), 0–100.
///
/// Statistics are summed over the corpus; the F-score of each order with
/// both hypothesis and reference n-grams is averaged.
pub fn chrf<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R]) -> Result<f64, TrainError> {
    check_lengths(hyps.len(), refs.len())?;
    let mut acc = vec![(0, 0, 0); CHAR_ORDER + WORD_ORDER];
    for (h, r) in hyps.iter().zip(refs) {
        for (a, s) in acc.iter_mut().zip(chrf_stats(h.as_ref(), r.as_ref())) {
            a.0 += s.0;
            a.1 += s.1;
            a.2 += s.2;
        }
    }
    Ok(chrf_from_stats(&acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_corpus_scores_100() {
        let refs = ["the boy sees the dog .", "she wants it ."];
        assert!((bleu(&refs, &refs).unwrap() - 100.0).abs() < 1e-9);
        assert!((chrf(&refs, &refs).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_unigrams_score_zero() {
        assert_eq!(bleu(&["a b c d e"], &["v w x y z"]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_precisions() {
        // unigrams: the x3 clipped to 1, cat 1 -> 2/4
        // bigrams: "the the" x2, "the cat" -> 1/3; trigrams 0/2
        let s = bleu_stats(&["the the the cat"], &["the cat sat"]).unwrap();
        assert_eq!(s.matches, [2, 1, 0, 0]);
        assert_eq!(s.totals, [4, 3, 2, 1]);
        assert_eq!(s.brevity_penalty(), 1.0);
        assert_eq!(s.score(), 0.0);
        // hypothesis shorter than the reference: BP = exp(1 - 5/4)
        let s = bleu_stats(&["a b c d"], &["a b c d e"]).unwrap();
        assert!((s.brevity_penalty() - (-0.25f64).exp()).abs() < 1e-12);
        assert!((s.score() - 100.0 * (-0.25f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn chrf_hand_example() {
        // "ab" vs "ac": char 1-grams 1/2 match, char 2-grams 0/1; words 0/1.
        // orders 3..6 have no n-grams and are skipped.
        let got = chrf(&["ab"], &["ac"]).unwrap();
        let f1 = 0.5; // P = R = 0.5
        assert!((got - 100.0 * f1 / 3.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn corpus_permutation_invariant() {
        let h = ["the boy sees", "a dog", "she wants the cat"];
        let r = ["the boy sees it", "the dog", "she wants a cat"];
        let hp = [h[2], h[0], h[1]];
        let rp = [r[2], r[0], r[1]];
        assert_eq!(bleu(&h, &r).unwrap(), bleu(&hp, &rp).unwrap());
        assert_eq!(chrf(&h, &r).unwrap(), chrf(&hp, &rp).unwrap());
    }

    #[test]
    fn errors_on_empty_or_mismatched() {
        let empty: [&str; 0] = [];
        assert!(bleu(&empty, &empty).is_err());
        assert!(chrf(&["a"], &["a", "b"]).is_err());
    }
}
