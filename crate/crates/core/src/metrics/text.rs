//! Surface-overlap metrics: exact match, token F1, ROUGE, BLEU and the
//! reverse-weighted BLEU combination.
//!
//! All metrics share one normalization: lowercase, split on whitespace,
//! trim trailing `, . ; : ! ?` from every token, drop empty tokens.

use std::collections::HashMap;
use std::hash::Hash;

/// Weights of BLEU-1..4 in [`rwb`]; lower orders dominate.
pub const RWB_WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

const TRAILING_PUNCT: &[char] = &[',', '.', ';', ':', '!', '?'];

pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_end_matches(TRAILING_PUNCT).to_owned())
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn normalize(text: &str) -> String {
    normalize_tokens(text).join(" ")
}

pub fn exact_match(prediction: &str, reference: &str) -> f64 {
    f64::from(u8::from(normalize_tokens(prediction) == normalize_tokens(reference)))
}

fn counts<T: Hash + Eq + Clone>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut map = HashMap::new();
    for it in items {
        *map.entry(it).or_insert(0) += 1;
    }
    map
}

fn clipped_overlap<T: Hash + Eq + Clone>(pred: &HashMap<T, usize>, reference: &HashMap<T, usize>) -> usize {
    pred.iter().map(|(k, &c)| c.min(reference.get(k).copied().unwrap_or(0))).sum()
}

fn f_measure(overlap: usize, pred_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || pred_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

/// Harmonic mean of multiset token precision and recall. Two empty
/// strings score 1.
pub fn token_f1(prediction: &str, reference: &str) -> f64 {
    let p = normalize_tokens(prediction);
    let r = normalize_tokens(reference);
    if p.is_empty() && r.is_empty() {
        return 1.0;
    }
    f_measure(clipped_overlap(&counts(p.iter().cloned()), &counts(r.iter().cloned())), p.len(), r.len())
}

fn ngrams(tokens: &[String], n: usize) -> Vec<&[String]> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).collect()
}

fn rouge_n_tokens(p: &[String], r: &[String], n: usize) -> f64 {
    let pg = ngrams(p, n);
    let rg = ngrams(r, n);
    f_measure(clipped_overlap(&counts(pg.iter().copied()), &counts(rg.iter().copied())), pg.len(), rg.len())
}

/// ROUGE-N F-measure; 0 when either side has no n-gram of order `n`.
pub fn rouge_n(prediction: &str, reference: &str, n: usize) -> f64 {
    rouge_n_tokens(&normalize_tokens(prediction), &normalize_tokens(reference), n)
}

fn lcs_table(a: &[String], b: &[String]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t
}

pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    lcs_table(a, b)[a.len()][b.len()]
}

/// Indices into `reference` of one longest common subsequence with
/// `candidate` (backtracking prefers skipping candidate tokens).
fn lcs_reference_hits(reference: &[String], candidate: &[String]) -> Vec<usize> {
    let t = lcs_table(reference, candidate);
    let (mut i, mut j) = (reference.len(), candidate.len());
    let mut hits = Vec::new();
    while i > 0 && j > 0 {
        if reference[i - 1] == candidate[j - 1] {
            hits.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i][j - 1] >= t[i - 1][j] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    hits
}

/// LCS-based F-measure over the whole string.
pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    let p = normalize_tokens(prediction);
    let r = normalize_tokens(reference);
    f_measure(lcs_len(&p, &r), p.len(), r.len())
}

/// Summary-level ROUGE-L: both sides are split into newline-separated
/// segments; for each reference segment the LCS hits against every
/// prediction segment are unioned, and the summed hit count is scored
/// against the total token counts.
pub fn rouge_lsum(prediction: &str, reference: &str) -> f64 {
    let segs = |s: &str| -> Vec<Vec<String>> {
        s.split('\n').map(normalize_tokens).filter(|t| !t.is_empty()).collect()
    };
    let p = segs(prediction);
    let r = segs(reference);
    let p_total: usize = p.iter().map(Vec::len).sum();
    let r_total: usize = r.iter().map(Vec::len).sum();
    let mut hits = 0;
    for rs in &r {
        let mut union = vec![false; rs.len()];
        for ps in &p {
            for i in lcs_reference_hits(rs, ps) {
                union[i] = true;
            }
        }
        hits += union.iter().filter(|&&u| u).count();
    }
    f_measure(hits, p_total, r_total)
}

/// Modified n-gram precision `(matches, total)` of `p` against `r`.
fn modified_precision(p: &[String], r: &[String], n: usize) -> (usize, usize) {
    let pg = ngrams(p, n);
    let rg = ngrams(r, n);
    (clipped_overlap(&counts(pg.iter().copied()), &counts(rg.iter().copied())), pg.len())
}

/// Smoothed precision for order `n`: unigrams are never smoothed; orders
/// `n ≥ 2` with zero matches use `1 / (total + 1)`.
pub fn smoothed_precision(matches: usize, total: usize, n: usize) -> f64 {
    if n >= 2 && matches == 0 {
        1.0 / (total as f64 + 1.0)
    } else if total == 0 {
        0.0
    } else {
        matches as f64 / total as f64
    }
}

/// `BP(c, r) = 1` if `c > r`, `exp(1 − r/c)` otherwise, 0 for an empty
/// prediction.
pub fn brevity_penalty(pred_len: usize, ref_len: usize) -> f64 {
    if pred_len == 0 {
        0.0
    } else if pred_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / pred_len as f64).exp()
    }
}

fn bleu_tokens(p: &[String], r: &[String], k: usize) -> f64 {
    let bp = brevity_penalty(p.len(), r.len());
    if bp == 0.0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=k {
        let (m, t) = modified_precision(p, r, n);
        let pn = smoothed_precision(m, t, n);
        if pn == 0.0 {
            return 0.0;
        }
        log_sum += pn.ln();
    }
    bp * (log_sum / k as f64).exp()
}

/// Sentence BLEU with uniform weights over orders `1..=k`.
pub fn bleu_k(prediction: &str, reference: &str, k: usize) -> f64 {
    assert!((1..=4).contains(&k), "BLEU order must be in 1..=4");
    bleu_tokens(&normalize_tokens(prediction), &normalize_tokens(reference), k)
}

/// Reverse-weighted BLEU: `Σ w_k · BLEU-k` with [`RWB_WEIGHTS`].
pub fn rwb(prediction: &str, reference: &str) -> f64 {
    let p = normalize_tokens(prediction);
    let r = normalize_tokens(reference);
    // Weights scaled to integers so the all-ones case sums to exactly 1.
    let scaled: f64 = RWB_WEIGHTS.iter().enumerate().map(|(i, w)| (w * 10.0).round() * bleu_tokens(&p, &r, i + 1)).sum();
    scaled / 10.0
}
