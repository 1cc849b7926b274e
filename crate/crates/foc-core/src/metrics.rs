//! Evaluation metrics: AUC for one-to-one comparison, Recall@k / MRR@k for
//! one-to-many search, and BLEU-4 / METEOR / ROUGE-L for generated text.
//!
//! Text metrics share one tokenization (lowercase whitespace split) and are
//! macro-averaged at the corpus level. AUC is computed by rank-sum with ties
//! credited one half, which equals trapezoidal ROC integration over all
//! thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{FocError, Result};

/// Retrieval outcome of one query: the positive's 1-based rank, or `None`
/// when the positive was not retrieved at all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub rank: Option<u64>,
}

/// One scored function pair with its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub score: f64,
    pub positive: bool,
}

impl ScoredPair {
    pub fn new(score: f64, positive: bool) -> Self {
        ScoredPair { score, positive }
    }
}

/// Probability that a uniformly random positive outscores a uniformly random
/// negative, ties counted one half. Errors when either class is absent or a
/// score is not finite.
pub fn auc(pairs: &[ScoredPair]) -> Result<f64> {
    let n_pos = pairs.iter().filter(|p| p.positive).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FocError::invalid(
            "AUC needs at least one positive and one negative pair",
        ));
    }
    if pairs.iter().any(|p| !p.score.is_finite()) {
        return Err(FocError::invalid("AUC scores must be finite"));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].score.partial_cmp(&pairs[b].score).expect("finite"));

    // average ranks over tie runs, then the Mann-Whitney identity
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].score == pairs[order[i]].score {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // 1-based
        for &idx in &order[i..=j] {
            if pairs[idx].positive {
                positive_rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let wins = positive_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// Fraction of queries whose positive ranks within the top `k`; a missing
/// rank counts as a failure.
pub fn recall_at_k(results: &[RankedResult], k: u64) -> Result<f64> {
    if results.is_empty() {
        return Err(FocError::invalid("no ranked results"));
    }
    if k == 0 {
        return Err(FocError::invalid("k must be at least 1"));
    }
    let hits = results
        .iter()
        .filter(|r| matches!(r.rank, Some(rank) if rank <= k))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean reciprocal rank truncated at `k`.
pub fn mrr_at_k(results: &[RankedResult], k: u64) -> Result<f64> {
    if results.is_empty() {
        return Err(FocError::invalid("no ranked results"));
    }
    if k == 0 {
        return Err(FocError::invalid("k must be at least 1"));
    }
    let total: f64 = results
        .iter()
        .map(|r| match r.rank {
            Some(rank) if rank <= k => 1.0 / rank as f64,
            _ => 0.0,
        })
        .sum();
    Ok(total / results.len() as f64)
}

/// Shared tokenization for the text metrics: lowercase whitespace split.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut table = vec![0usize; (a.len() + 1) * (b.len() + 1)];
    let cols = b.len() + 1;
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i * cols + j] = if a[i - 1].as_ref() == b[j - 1].as_ref() {
                table[(i - 1) * cols + j - 1] + 1
            } else {
                table[(i - 1) * cols + j].max(table[i * cols + j - 1])
            };
        }
    }
    table[a.len() * cols + b.len()]
}

/// ROUGE-L: the LCS F-measure with beta = P/R. Zero when the LCS is empty or
/// the generated text is empty; an empty reference is an error.
pub fn rouge_l<S: AsRef<str>>(generated: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(FocError::invalid("ROUGE-L reference must be non-empty"));
    }
    if generated.is_empty() {
        return Ok(0.0);
    }
    let lcs = lcs_len(generated, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let precision = lcs / generated.len() as f64;
    let recall = lcs / reference.len() as f64;
    let beta = precision / recall;
    Ok((1.0 + beta * beta) * precision * recall / (recall + beta * beta * precision))
}

/// BLEU-4 with the smoothing flag: when a modified n-gram precision is zero
/// it is replaced by `1 / (2 * max(1, #n-grams))` and `smoothed` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub smoothed: bool,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> std::collections::HashMap<Vec<&str>, u64> {
    let mut counts = std::collections::HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<&str> = window.iter().map(|t| t.as_ref()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-4: uniform quarter weights, clipped modified n-gram precision, and
/// brevity penalty `min(1, e^(1 - r/c))`.
pub fn bleu4<S: AsRef<str>>(generated: &[S], reference: &[S]) -> Result<BleuScore> {
    if reference.is_empty() {
        return Err(FocError::invalid("BLEU reference must be non-empty"));
    }
    if generated.is_empty() {
        return Ok(BleuScore {
            score: 0.0,
            smoothed: false,
        });
    }
    let mut log_sum = 0.0;
    let mut smoothed = false;
    for n in 1..=4 {
        let gen_counts = ngram_counts(generated, n);
        let ref_counts = ngram_counts(reference, n);
        let total: u64 = gen_counts.values().sum();
        let clipped: u64 = gen_counts
            .iter()
            .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if clipped > 0 {
            clipped as f64 / total as f64
        } else {
            smoothed = true;
            1.0 / (2.0 * total.max(1) as f64)
        };
        log_sum += 0.25 * precision.ln();
    }
    let brevity = (1.0 - reference.len() as f64 / generated.len() as f64).exp().min(1.0);
    Ok(BleuScore {
        score: brevity * log_sum.exp(),
        smoothed,
    })
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_BETA: f64 = 3.0;
const METEOR_GAMMA: f64 = 0.5;

/// METEOR with exact-surface unigram alignment: greedy fewest-chunks
/// matching, `F = PR / (alpha P + (1-alpha) R)`, and fragmentation penalty
/// `gamma * (chunks/matches)^beta`.
pub fn meteor<S: AsRef<str>>(generated: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(FocError::invalid("METEOR reference must be non-empty"));
    }
    if generated.is_empty() {
        return Ok(0.0);
    }
    // positions of each reference token, consumed as they are matched
    let mut available: std::collections::HashMap<&str, std::collections::BTreeSet<usize>> =
        std::collections::HashMap::new();
    for (pos, token) in reference.iter().enumerate() {
        available.entry(token.as_ref()).or_default().insert(pos);
    }

    let mut matches = 0u64;
    let mut chunks = 0u64;
    let mut prev_ref_pos: Option<usize> = None;
    for token in generated {
        let Some(positions) = available.get_mut(token.as_ref()) else {
            continue;
        };
        if positions.is_empty() {
            continue;
        }
        // prefer the position that extends the current chunk
        let chosen = match prev_ref_pos {
            Some(prev) if positions.contains(&(prev + 1)) => prev + 1,
            _ => *positions.iter().next().expect("non-empty"),
        };
        positions.remove(&chosen);
        matches += 1;
        if prev_ref_pos != Some(chosen.wrapping_sub(1)) {
            chunks += 1;
        }
        prev_ref_pos = Some(chosen);
    }

    if matches == 0 {
        return Ok(0.0);
    }
    let precision = matches as f64 / generated.len() as f64;
    let recall = matches as f64 / reference.len() as f64;
    let f_mean = precision * recall / (METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall);
    let frag = chunks as f64 / matches as f64;
    Ok((1.0 - METEOR_GAMMA * frag.powf(METEOR_BETA)) * f_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n^2) oracle: count positive/negative pairs directly.
    pub(crate) fn auc_brute_force(pairs: &[ScoredPair]) -> f64 {
        let positives: Vec<f64> = pairs.iter().filter(|p| p.positive).map(|p| p.score).collect();
        let negatives: Vec<f64> = pairs.iter().filter(|p| !p.positive).map(|p| p.score).collect();
        let mut wins = 0.0;
        for &p in &positives {
            for &n in &negatives {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        wins / (positives.len() * negatives.len()) as f64
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize_text(s)
    }

    #[test]
    fn auc_examples() {
        let perfect = [
            ScoredPair::new(0.9, true),
            ScoredPair::new(0.8, true),
            ScoredPair::new(0.1, false),
            ScoredPair::new(0.2, false),
        ];
        assert_eq!(auc(&perfect).unwrap(), 1.0);

        let tie = [ScoredPair::new(0.5, true), ScoredPair::new(0.5, false)];
        assert_eq!(auc(&tie).unwrap(), 0.5);
        assert_eq!(auc_brute_force(&tie), 0.5);

        let mixed = [
            ScoredPair::new(0.8, true),
            ScoredPair::new(0.2, true),
            ScoredPair::new(0.5, false),
            ScoredPair::new(0.1, false),
        ];
        assert_eq!(auc(&mixed).unwrap(), 0.75);
        assert_eq!(auc_brute_force(&mixed), 0.75);

        let single_class = [ScoredPair::new(0.3, true)];
        assert!(auc(&single_class).is_err());
    }

    #[test]
    fn auc_equals_brute_force_and_flips_with_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(2..60);
            let pairs: Vec<ScoredPair> = (0..n)
                .map(|i| {
                    // coarse grid so ties actually happen
                    ScoredPair::new(rng.random_range(0..10) as f64 / 10.0, i % 2 == 0)
                })
                .collect();
            let fast = auc(&pairs).unwrap();
            let brute = auc_brute_force(&pairs);
            assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");

            let flipped: Vec<ScoredPair> = pairs
                .iter()
                .map(|p| ScoredPair::new(p.score, !p.positive))
                .collect();
            assert!((auc(&flipped).unwrap() - (1.0 - fast)).abs() < 1e-12);
        }
    }

    fn ranked(ranks: &[Option<u64>]) -> Vec<RankedResult> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, &rank)| RankedResult {
                query_id: format!("q{i}"),
                rank,
            })
            .collect()
    }

    #[test]
    fn recall_and_mrr_examples() {
        assert_eq!(recall_at_k(&ranked(&[Some(1)]), 1).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranked(&[Some(2), Some(11)]), 10).unwrap(), 0.5);
        assert_eq!(recall_at_k(&ranked(&[Some(20), None]), 10).unwrap(), 0.0);

        assert_eq!(mrr_at_k(&ranked(&[Some(1), Some(1), Some(1)]), 5).unwrap(), 1.0);
        assert_eq!(mrr_at_k(&ranked(&[Some(2), Some(11)]), 10).unwrap(), 0.25);
    }

    #[test]
    fn recall_and_mrr_are_monotone_in_k_and_ordered() {
        let results = ranked(&[Some(1), Some(3), Some(7), None, Some(12)]);
        let mut last_recall = 0.0;
        let mut last_mrr = 0.0;
        for k in 1..=15 {
            let r = recall_at_k(&results, k).unwrap();
            let m = mrr_at_k(&results, k).unwrap();
            assert!(r >= last_recall);
            assert!(m >= last_mrr);
            assert!(m <= r + 1e-15, "mrr {m} must not exceed recall {r}");
            last_recall = r;
            last_mrr = m;
        }
    }

    #[test]
    fn rouge_examples() {
        let a = toks("the quick brown fox");
        assert!((rouge_l(&a, &a).unwrap() - 1.0).abs() <= 1e-12);

        // LCS = 2, P = 2/3, R = 1, beta = 2/3 -> 26/35
        let generated = toks("a b c");
        let reference = toks("a c");
        assert!((rouge_l(&generated, &reference).unwrap() - 26.0 / 35.0).abs() <= 1e-12);

        let disjoint = rouge_l(&toks("x y"), &toks("p q")).unwrap();
        assert_eq!(disjoint, 0.0);
        assert_eq!(rouge_l(&Vec::<String>::new(), &toks("a")).unwrap(), 0.0);
        assert!(rouge_l(&toks("a"), &Vec::<String>::new()).is_err());
    }

    #[test]
    fn bleu_examples() {
        let six = toks("one two three four five six");
        let identical = bleu4(&six, &six).unwrap();
        assert!((identical.score - 1.0).abs() <= 1e-12);
        assert!(!identical.smoothed);

        // candidate = first 4 of 8 reference tokens: all precisions 1,
        // BP = e^(1 - 8/4) = e^-1
        let reference = toks("a b c d e f g h");
        let candidate = toks("a b c d");
        let bp_case = bleu4(&candidate, &reference).unwrap();
        assert!((bp_case.score - (-1.0f64).exp()).abs() <= 1e-12);
        assert!(!bp_case.smoothed);

        // zero 4-gram overlap: smoothed, small but defined
        let partial = bleu4(&toks("a x b y c z"), &toks("a b c d e f")).unwrap();
        assert!(partial.smoothed);
        assert!(partial.score > 0.0 && partial.score < 0.5);

        assert!(bleu4(&candidate, &Vec::<String>::new()).is_err());
    }

    #[test]
    fn meteor_examples() {
        assert_eq!(meteor(&toks("x y z"), &toks("p q r")).unwrap(), 0.0);

        // identical single token: P = R = 1, frag = 1, penalty 0.5
        assert!((meteor(&toks("hash"), &toks("hash")).unwrap() - 0.5).abs() <= 1e-12);

        // identical 4-token sentence: one chunk over four matches
        let four = toks("computes the sha256 digest");
        let expect = 1.0 - 0.5 * (0.25f64).powi(3);
        assert!((meteor(&four, &four).unwrap() - expect).abs() <= 1e-12);
        assert!((expect - 0.9921875).abs() < 1e-15);

        assert!(meteor(&four, &Vec::<String>::new()).is_err());
    }

    #[test]
    fn meteor_counts_chunks_for_reordered_text() {
        // "b a" vs "a b": two matches, two chunks -> frag = 1, F = 1
        let score = meteor(&toks("b a"), &toks("a b")).unwrap();
        assert!((score - 0.5).abs() <= 1e-12);
        // contiguous pair keeps one chunk: penalty (1/2)^3 * 0.5
        let score = meteor(&toks("a b"), &toks("a b")).unwrap();
        assert!((score - (1.0 - 0.5 * 0.125)).abs() <= 1e-12);
    }

    #[test]
    fn all_metrics_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let words = ["alpha", "beta", "gamma", "delta", "eps", "zeta"];
        for _ in 0..200 {
            let len_a = rng.random_range(1..10);
            let len_b = rng.random_range(1..10);
            let a: Vec<String> = (0..len_a)
                .map(|_| words[rng.random_range(0..words.len())].to_string())
                .collect();
            let b: Vec<String> = (0..len_b)
                .map(|_| words[rng.random_range(0..words.len())].to_string())
                .collect();
            let r = rouge_l(&a, &b).unwrap();
            let bl = bleu4(&a, &b).unwrap().score;
            let m = meteor(&a, &b).unwrap();
            for (name, v) in [("rouge", r), ("bleu", bl), ("meteor", m)] {
                assert!((0.0..=1.0 + 1e-12).contains(&v), "{name} out of range: {v}");
            }
        }
    }
}
