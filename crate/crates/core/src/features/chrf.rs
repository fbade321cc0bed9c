//! Character n-gram F-score.

use std::collections::HashMap;

pub const DEFAULT_MAX_N: usize = 6;
pub const DEFAULT_BETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChrfScore {
    /// Score in `[0, 100]`.
    pub score: f64,
    /// Set when neither text has a single character n-gram.
    pub degenerate: bool,
}

/// chrF with the default order 6 and beta 2.
pub fn chrf(hypothesis: &str, reference: &str) -> f64 {
    chrf_with(hypothesis, reference, DEFAULT_MAX_N, DEFAULT_BETA).score
}

/// Computes chrF over whitespace-normalized text. Internal whitespace runs
/// collapse to one space and the space is part of the character stream.
/// Precision and recall are averaged over the n-gram orders that at least
/// one side can produce, then combined into an F-beta score.
///
/// Panics if `max_n == 0` or `beta <= 0`.
pub fn chrf_with(hypothesis: &str, reference: &str, max_n: usize, beta: f64) -> ChrfScore {
    assert!(max_n >= 1, "chrf order must be at least 1");
    assert!(beta > 0.0, "chrf beta must be positive");
    let hyp = normalize(hypothesis);
    let refr = normalize(reference);

    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut orders = 0usize;
    for n in 1..=max_n {
        let hyp_grams = ngram_counts(&hyp, n);
        let ref_grams = ngram_counts(&refr, n);
        let hyp_total = hyp.len().saturating_sub(n - 1);
        let ref_total = refr.len().saturating_sub(n - 1);
        if hyp_total == 0 && ref_total == 0 {
            continue;
        }
        let matches: u32 = hyp_grams
            .iter()
            .map(|(gram, &c)| ref_grams.get(gram).map_or(0, |&r| c.min(r)))
            .sum();
        if hyp_total > 0 {
            precision += matches as f64 / hyp_total as f64;
        }
        if ref_total > 0 {
            recall += matches as f64 / ref_total as f64;
        }
        orders += 1;
    }
    if orders == 0 {
        return ChrfScore {
            score: 0.0,
            degenerate: true,
        };
    }
    let p = precision / orders as f64;
    let r = recall / orders as f64;
    let beta2 = beta * beta;
    let denom = beta2 * p + r;
    let score = if denom > 0.0 {
        100.0 * (1.0 + beta2) * p * r / denom
    } else {
        0.0
    };
    ChrfScore {
        score,
        degenerate: false,
    }
}

fn normalize(text: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(text.len());
    for (i, word) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.extend(word.chars());
    }
    out
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], u32> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for gram in chars.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}
