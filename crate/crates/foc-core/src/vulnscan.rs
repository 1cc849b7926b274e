//! Vulnerability scanning against an embedding database: top-10 detection of
//! vulnerable functions per suspicious file, and vulnerable-vs-patched
//! distinction by max-similarity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{FocError, Result};
use crate::search::{compare, EmbeddingIndex};
use crate::simmodel::FunctionEmbedding;

/// One database entry: embeddings of the vulnerable and patched versions of
/// a CVE's function (possibly several versions/architectures per side), plus
/// the ids of target-index functions known to be vulnerable (the
/// user-supplied ground truth).
#[derive(Debug, Clone)]
pub struct VulnEntry {
    pub cve: String,
    pub library: String,
    pub vulnerable: Vec<FunctionEmbedding>,
    pub patched: Vec<FunctionEmbedding>,
    pub ground_truth: Vec<String>,
}

impl VulnEntry {
    pub fn validate(&self) -> Result<()> {
        if self.vulnerable.is_empty() || self.patched.is_empty() {
            return Err(FocError::invalid(format!(
                "{}: an entry needs at least one vulnerable and one patched embedding",
                self.cve
            )));
        }
        Ok(())
    }
}

/// Detection outcome for one (entry, suspicious file) combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectOutcome {
    pub cve: String,
    pub file: String,
    pub hit: bool,
    /// Best rank any ground-truth function achieved under any vulnerable
    /// embedding of the entry.
    pub best_rank: Option<u64>,
}

/// Full detection report with per-CVE x/y tallies (x = files where the
/// vulnerability was discovered, y = files that contain it per ground truth).
#[derive(Debug, Clone, Default)]
pub struct DetectReport {
    pub outcomes: Vec<DetectOutcome>,
    pub tallies: BTreeMap<String, (u64, u64)>,
    pub diagnostics: Vec<String>,
}

/// For each vulnerable embedding, ranks all functions of each suspicious
/// file (grouped by the `binary` metadata field) and counts a hit when a
/// ground-truth-matching function appears in the top `top_k`.
pub fn detect(
    db: &[VulnEntry],
    target: &EmbeddingIndex,
    top_k: usize,
) -> Result<DetectReport> {
    if db.is_empty() {
        return Err(FocError::invalid("the vulnerability database is empty"));
    }
    if target.is_empty() {
        return Err(FocError::invalid("the target index is empty"));
    }

    let mut files: BTreeMap<&str, Vec<&FunctionEmbedding>> = BTreeMap::new();
    for entry in target.entries() {
        files.entry(entry.meta.binary.as_str()).or_default().push(entry);
    }

    let mut report = DetectReport::default();
    for entry in db {
        entry.validate()?;
        let gt: BTreeSet<&str> = entry.ground_truth.iter().map(String::as_str).collect();
        let tally = report.tallies.entry(entry.cve.clone()).or_insert((0, 0));
        for (file, functions) in &files {
            if functions.is_empty() {
                report
                    .diagnostics
                    .push(format!("{}: file {file} has no candidate functions", entry.cve));
                continue;
            }
            let gt_in_file: Vec<&str> = functions
                .iter()
                .map(|f| f.id.as_str())
                .filter(|id| gt.contains(id))
                .collect();
            if gt_in_file.is_empty() {
                continue;
            }
            tally.1 += 1;

            let mut best_rank: Option<u64> = None;
            for vulnerable in &entry.vulnerable {
                let mut scored: Vec<(&str, f64)> = Vec::with_capacity(functions.len());
                for function in functions {
                    scored.push((function.id.as_str(), compare(vulnerable, function)?));
                }
                scored.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(b.0))
                });
                for (rank0, (id, _)) in scored.iter().enumerate() {
                    if gt_in_file.contains(id) {
                        let rank = rank0 as u64 + 1;
                        best_rank = Some(best_rank.map_or(rank, |b| b.min(rank)));
                        break;
                    }
                }
            }
            let hit = matches!(best_rank, Some(rank) if rank <= top_k as u64);
            if hit {
                tally.0 += 1;
            }
            report.outcomes.push(DetectOutcome {
                cve: entry.cve.clone(),
                file: file.to_string(),
                hit,
                best_rank,
            });
        }
    }
    Ok(report)
}

/// Label assigned by [`distinguish`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistinguishLabel {
    Vulnerable,
    Patched,
}

/// Distinction outcome; `tie` flags an exact similarity tie, which resolves
/// to `Patched`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distinction {
    pub label: DistinguishLabel,
    pub tie: bool,
    pub vulnerable_similarity: f64,
    pub patched_similarity: f64,
}

/// Labels a target as vulnerable or patched by comparing its best similarity
/// to the entry's vulnerable set against the patched set (max over each
/// side). An exact tie labels patched and sets the flag.
pub fn distinguish(entry: &VulnEntry, target: &FunctionEmbedding) -> Result<Distinction> {
    entry.validate()?;
    let best = |side: &[FunctionEmbedding]| -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for embedding in side {
            best = best.max(compare(embedding, target)?);
        }
        Ok(best)
    };
    let vulnerable_similarity = best(&entry.vulnerable)?;
    let patched_similarity = best(&entry.patched)?;
    let tie = vulnerable_similarity == patched_similarity;
    let label = if vulnerable_similarity > patched_similarity {
        DistinguishLabel::Vulnerable
    } else {
        DistinguishLabel::Patched
    };
    Ok(Distinction {
        label,
        tie,
        vulnerable_similarity,
        patched_similarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Arch, Bits, Opt};
    use crate::simmodel::EmbeddingMeta;

    fn embedding(id: &str, file: &str, vector: Vec<f64>) -> FunctionEmbedding {
        FunctionEmbedding {
            id: id.to_string(),
            meta: EmbeddingMeta {
                arch: Arch::Arm,
                bits: Bits::B32,
                compiler: "gcc".into(),
                compiler_version: "9".into(),
                opt: Opt::O2,
                project: "firmware".into(),
                binary: file.to_string(),
                name: id.to_string(),
            },
            vector,
        }
    }

    fn entry(cve: &str, vuln: Vec<f64>, patched: Vec<f64>, gt: &[&str]) -> VulnEntry {
        VulnEntry {
            cve: cve.into(),
            library: "libtest".into(),
            vulnerable: vec![embedding(&format!("{cve}-vuln"), "db", vuln)],
            patched: vec![embedding(&format!("{cve}-patch"), "db", patched)],
            ground_truth: gt.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn exact_copy_is_a_rank_one_hit() {
        let target = EmbeddingIndex::build(vec![
            embedding("f1", "libcrypto.so", vec![1.0, 0.0, 0.0]),
            embedding("f2", "libcrypto.so", vec![0.0, 1.0, 0.0]),
            embedding("f3", "libcrypto.so", vec![0.0, 0.0, 1.0]),
        ])
        .unwrap();
        let db = vec![entry("CVE-1", vec![1.0, 0.0, 0.0], vec![0.9, 0.1, 0.0], &["f1"])];
        let report = detect(&db, &target, 10).unwrap();
        assert_eq!(report.tallies["CVE-1"], (1, 1));
        assert_eq!(report.outcomes[0].best_rank, Some(1));
    }

    #[test]
    fn files_without_ground_truth_do_not_count() {
        let target = EmbeddingIndex::build(vec![
            embedding("f1", "a.so", vec![1.0, 0.0]),
            embedding("g1", "b.so", vec![0.0, 1.0]),
        ])
        .unwrap();
        let db = vec![entry("CVE-2", vec![1.0, 0.1], vec![0.0, 1.0], &["f1"])];
        let report = detect(&db, &target, 10).unwrap();
        assert_eq!(report.tallies["CVE-2"], (1, 1));
        assert_eq!(report.outcomes.len(), 1);
        assert_eq!(report.outcomes[0].file, "a.so");
    }

    #[test]
    fn rank_beyond_top_k_is_a_miss() {
        // 12 functions in one file; ground truth is orthogonal to the probe
        let mut functions: Vec<FunctionEmbedding> = (0..11)
            .map(|i| embedding(&format!("f{i:02}"), "big.so", vec![1.0, i as f64 * 0.01, 0.0]))
            .collect();
        functions.push(embedding("target", "big.so", vec![0.0, 0.0, 1.0]));
        let target = EmbeddingIndex::build(functions).unwrap();
        let db = vec![entry("CVE-3", vec![1.0, 0.0, 0.0], vec![0.5, 0.5, 0.0], &["target"])];
        let report = detect(&db, &target, 10).unwrap();
        assert_eq!(report.tallies["CVE-3"], (0, 1));
        assert_eq!(report.outcomes[0].best_rank, Some(12));
    }

    #[test]
    fn detection_is_invariant_under_index_permutation() {
        let mut functions = vec![
            embedding("f1", "x.so", vec![0.9, 0.1]),
            embedding("f2", "x.so", vec![0.2, 0.8]),
            embedding("f3", "x.so", vec![0.5, 0.5]),
        ];
        let db = vec![entry("CVE-4", vec![1.0, 0.0], vec![0.0, 1.0], &["f1"])];
        let a = detect(&db, &EmbeddingIndex::build(functions.clone()).unwrap(), 2).unwrap();
        functions.reverse();
        let b = detect(&db, &EmbeddingIndex::build(functions).unwrap(), 2).unwrap();
        assert_eq!(a.tallies, b.tallies);
        assert_eq!(a.outcomes[0].best_rank, b.outcomes[0].best_rank);
    }

    #[test]
    fn distinguish_picks_the_closer_side() {
        let e = entry("CVE-5", vec![1.0, 0.0], vec![0.0, 1.0], &[]);
        let vulnerable_like = embedding("t", "f.so", vec![0.99, 0.01]);
        let d = distinguish(&e, &vulnerable_like).unwrap();
        assert_eq!(d.label, DistinguishLabel::Vulnerable);
        assert!(!d.tie);

        let patched_like = embedding("t", "f.so", vec![0.01, 0.99]);
        let d = distinguish(&e, &patched_like).unwrap();
        assert_eq!(d.label, DistinguishLabel::Patched);
    }

    #[test]
    fn exact_tie_goes_to_patched_with_flag() {
        let e = entry("CVE-6", vec![1.0, 0.0], vec![1.0, 0.0], &[]);
        let target = embedding("t", "f.so", vec![0.5, 0.5]);
        let d = distinguish(&e, &target).unwrap();
        assert_eq!(d.label, DistinguishLabel::Patched);
        assert!(d.tie);
    }

    #[test]
    fn distinguish_is_label_symmetric() {
        let e = entry("CVE-7", vec![1.0, 0.2], vec![0.1, 1.0], &[]);
        let swapped = VulnEntry {
            vulnerable: e.patched.clone(),
            patched: e.vulnerable.clone(),
            ..e.clone()
        };
        let target = embedding("t", "f.so", vec![0.9, 0.3]);
        let d1 = distinguish(&e, &target).unwrap();
        let d2 = distinguish(&swapped, &target).unwrap();
        assert_ne!(d1.label, d2.label);
    }

    #[test]
    fn entries_need_both_sides() {
        let bad = VulnEntry {
            cve: "CVE-8".into(),
            library: "l".into(),
            vulnerable: vec![],
            patched: vec![embedding("p", "f", vec![1.0])],
            ground_truth: vec![],
        };
        assert!(bad.validate().is_err());
    }
}
