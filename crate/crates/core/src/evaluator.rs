//! Test-set scoring and ranking metrics.
//!
//! The test set is every test positive plus every cell that is zero in the
//! full association matrix; training positives are left out. AUC uses the
//! Mann-Whitney form with half credit for ties. AUPR is average precision:
//! pairs are sorted by score (ties keep pair order) and precision is summed
//! at every recall step.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataSplit, DatasetBundle, Pair};
use crate::par::Exec;
use crate::trainer::{FrozenModel, Variant};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least one positive and one negative (got {n_pos} / {n_neg})")]
    DegenerateClasses { n_pos: usize, n_neg: usize },
    #[error("model is {model_drugs} x {model_diseases} but data is {data_drugs} x {data_diseases}")]
    DimensionMismatch { model_drugs: usize, model_diseases: usize, data_drugs: usize, data_diseases: usize },
    #[error("unknown drug id {0:?}")]
    UnknownDrug(String),
    #[error("non-finite score for pair ({}, {})", .0.drug, .0.disease)]
    NonFiniteScore(Pair),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair: Pair,
    pub score: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredPairs {
    pub pairs: Vec<ScoredPair>,
}

impl ScoredPairs {
    /// Builds a set from parallel score/label slices with synthetic pair indices.
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Self {
        assert_eq!(scores.len(), labels.len());
        Self {
            pairs: scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(k, (&score, &label))| ScoredPair { pair: Pair::new(k, 0), score, label })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.pairs.iter().filter(|p| p.label).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    fn check_classes(&self) -> Result<(usize, usize), EvalError> {
        let (n_pos, n_neg) = (self.n_pos(), self.n_neg());
        if n_pos == 0 || n_neg == 0 {
            return Err(EvalError::DegenerateClasses { n_pos, n_neg });
        }
        if let Some(p) = self.pairs.iter().find(|p| !p.score.is_finite()) {
            return Err(EvalError::NonFiniteScore(p.pair));
        }
        Ok((n_pos, n_neg))
    }

    /// Indices sorted by score descending; equal scores keep input order.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.pairs[b].score.total_cmp(&self.pairs[a].score));
        idx
    }
}

/// Scores every test positive and every unknown cell, row-major.
pub fn build_test_pairs(
    model: &FrozenModel,
    bundle: &DatasetBundle,
    split: &DataSplit,
    exec: Exec,
) -> Result<ScoredPairs, EvalError> {
    let assoc = &bundle.associations;
    if model.n_drugs() != assoc.n_drugs() || model.n_diseases() != assoc.n_diseases() {
        return Err(EvalError::DimensionMismatch {
            model_drugs: model.n_drugs(),
            model_diseases: model.n_diseases(),
            data_drugs: assoc.n_drugs(),
            data_diseases: assoc.n_diseases(),
        });
    }
    let cols = assoc.n_diseases();
    let mut train = vec![false; assoc.n_cells()];
    for p in &split.train_positives {
        train[p.drug * cols + p.disease] = true;
    }
    let cells: Vec<Pair> = (0..assoc.n_cells()).filter(|&k| !train[k]).map(|k| Pair::new(k / cols, k % cols)).collect();
    let pairs = exec.map_slice(&cells, |&pair| ScoredPair {
        pair,
        score: model.score(pair.drug, pair.disease),
        label: assoc.contains(pair),
    });
    Ok(ScoredPairs { pairs })
}

/// Probability that a random positive outscores a random negative, ties half.
pub fn auc(scored: &ScoredPairs) -> Result<f64, EvalError> {
    let (n_pos, n_neg) = scored.check_classes()?;
    let order = scored.descending();
    // Walk tie groups from the top; each positive beats every negative below
    // its group and splits the negatives inside it.
    let mut negatives_above = 0usize;
    let mut wins = 0.0f64;
    let mut k = 0;
    while k < order.len() {
        let s = scored.pairs[order[k]].score;
        let (mut pos, mut neg) = (0usize, 0usize);
        while k < order.len() && scored.pairs[order[k]].score == s {
            if scored.pairs[order[k]].label {
                pos += 1;
            } else {
                neg += 1;
            }
            k += 1;
        }
        wins += pos as f64 * ((n_neg - negatives_above - neg) as f64 + 0.5 * neg as f64);
        negatives_above += neg;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// Average precision plus the `(recall, precision)` point at every positive.
pub fn aupr_with_points(scored: &ScoredPairs) -> Result<(f64, Vec<(f64, f64)>), EvalError> {
    let n_pos = scored.n_pos();
    if n_pos == 0 {
        return Err(EvalError::DegenerateClasses { n_pos, n_neg: scored.n_neg() });
    }
    if let Some(p) = scored.pairs.iter().find(|p| !p.score.is_finite()) {
        return Err(EvalError::NonFiniteScore(p.pair));
    }
    let mut tp = 0usize;
    let mut ap = 0.0;
    let mut points = Vec::with_capacity(n_pos);
    for (rank, &i) in scored.descending().iter().enumerate() {
        if scored.pairs[i].label {
            tp += 1;
            let precision = tp as f64 / (rank + 1) as f64;
            ap += precision / n_pos as f64;
            points.push((tp as f64 / n_pos as f64, precision));
        }
    }
    Ok((ap, points))
}

pub fn aupr(scored: &ScoredPairs) -> Result<f64, EvalError> {
    aupr_with_points(scored).map(|(a, _)| a)
}

/// `(FPR, TPR)` after each distinct score threshold, from `(0,0)` to `(1,1)`.
pub fn roc_points(scored: &ScoredPairs) -> Result<Vec<(f64, f64)>, EvalError> {
    let (n_pos, n_neg) = scored.check_classes()?;
    let order = scored.descending();
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scored.pairs[order[k]].score;
        while k < order.len() && scored.pairs[order[k]].score == s {
            if scored.pairs[order[k]].label {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a polyline of `(x, y)` points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub aupr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
    pub variant: Variant,
    pub latent_dim: usize,
    #[serde(skip)]
    pub roc_points: Vec<(f64, f64)>,
    #[serde(skip)]
    pub pr_points: Vec<(f64, f64)>,
}

impl MetricsReport {
    pub fn compute(scored: &ScoredPairs, seed: u64, variant: Variant, latent_dim: usize) -> Result<Self, EvalError> {
        let (aupr, pr_points) = aupr_with_points(scored)?;
        Ok(Self {
            auc: auc(scored)?,
            aupr,
            n_pos: scored.n_pos(),
            n_neg: scored.n_neg(),
            seed,
            variant,
            latent_dim,
            roc_points: roc_points(scored)?,
            pr_points,
        })
    }

    /// Invariants every emitted report satisfies.
    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.auc) || !(0.0..=1.0).contains(&self.aupr) {
            return Err(format!("auc {} / aupr {} outside [0, 1]", self.auc, self.aupr));
        }
        if self.roc_points.first() != Some(&(0.0, 0.0)) || self.roc_points.last() != Some(&(1.0, 1.0)) {
            return Err("roc curve must run from (0,0) to (1,1)".into());
        }
        if self.pr_points.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err("recall decreases along the pr curve".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Writes `metrics.json`, `roc.tsv` and `pr.tsv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("metrics.json"), self.to_json()).map_err(io)?;
        fs::write(dir.join("roc.tsv"), curve_tsv("fpr", "tpr", &self.roc_points)).map_err(io)?;
        fs::write(dir.join("pr.tsv"), curve_tsv("recall", "precision", &self.pr_points)).map_err(io)?;
        Ok(())
    }
}

fn curve_tsv(x: &str, y: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("{x}\t{y}\n");
    for (a, b) in points {
        out.push_str(&format!("{a}\t{b}\n"));
    }
    out
}

/// Scores the test set of `split` and computes every metric.
pub fn evaluate(
    model: &FrozenModel,
    bundle: &DatasetBundle,
    split: &DataSplit,
    latent_dim: usize,
    exec: Exec,
) -> Result<MetricsReport, EvalError> {
    let scored = build_test_pairs(model, bundle, split, exec)?;
    MetricsReport::compute(&scored, split.seed, model.variant, latent_dim)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedDisease {
    pub disease: usize,
    pub disease_id: String,
    pub score: f64,
    pub known: bool,
}

/// Diseases for `drug_id` by predicted probability, highest first; ties go to
/// the lower disease index. Known associations are dropped when `exclude_known`.
pub fn rank_candidates(
    model: &FrozenModel,
    bundle: &DatasetBundle,
    drug_id: &str,
    top_n: usize,
    exclude_known: bool,
) -> Result<Vec<RankedDisease>, EvalError> {
    let assoc = &bundle.associations;
    let drug = assoc.drug_index(drug_id).ok_or_else(|| EvalError::UnknownDrug(drug_id.to_string()))?;
    if model.n_diseases() != assoc.n_diseases() || drug >= model.n_drugs() {
        return Err(EvalError::DimensionMismatch {
            model_drugs: model.n_drugs(),
            model_diseases: model.n_diseases(),
            data_drugs: assoc.n_drugs(),
            data_diseases: assoc.n_diseases(),
        });
    }
    let mut ranked: Vec<RankedDisease> = (0..assoc.n_diseases())
        .map(|j| RankedDisease {
            disease: j,
            disease_id: assoc.disease_ids()[j].clone(),
            score: model.score(drug, j),
            known: assoc.get(drug, j),
        })
        .filter(|r| !(exclude_known && r.known))
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.disease.cmp(&b.disease)));
    ranked.truncate(top_n);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;

    /// O(n²) pair count with half credit for ties.
    fn auc_brute(s: &ScoredPairs) -> f64 {
        let (mut wins, mut total) = (0.0, 0.0);
        for p in s.pairs.iter().filter(|p| p.label) {
            for n in s.pairs.iter().filter(|p| !p.label) {
                total += 1.0;
                if p.score > n.score {
                    wins += 1.0;
                } else if p.score == n.score {
                    wins += 0.5;
                }
            }
        }
        wins / total
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&ScoredPairs::from_scores(&[0.9, 0.4], &[true, false])).unwrap(), 1.0);
        let four = ScoredPairs::from_scores(&[0.8, 0.7, 0.6, 0.5], &[true, false, true, false]);
        assert_eq!(auc_brute(&four), 0.75);
        assert!((auc(&four).unwrap() - 0.75).abs() < 1e-15);
        let ties = ScoredPairs::from_scores(&[0.3; 6], &[true, false, false, true, false, true]);
        assert_eq!(auc(&ties).unwrap(), 0.5);
        assert!(matches!(
            auc(&ScoredPairs::from_scores(&[0.1, 0.2], &[true, true])),
            Err(EvalError::DegenerateClasses { .. })
        ));
    }

    #[test]
    fn aupr_examples() {
        let perfect = ScoredPairs::from_scores(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]);
        assert_eq!(aupr(&perfect).unwrap(), 1.0);
        let second = ScoredPairs::from_scores(&[0.9, 0.5, 0.1], &[false, true, false]);
        assert_eq!(aupr(&second).unwrap(), 0.5);
        assert!(aupr(&ScoredPairs::from_scores(&[0.1], &[false])).is_err());
    }

    #[test]
    fn roc_examples() {
        let perfect = ScoredPairs::from_scores(&[0.9, 0.8, 0.2], &[true, true, false]);
        assert_eq!(roc_points(&perfect).unwrap(), vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (1.0, 1.0)]);
        let ties = ScoredPairs::from_scores(&[0.5; 4], &[true, false, true, false]);
        let pts = roc_points(&ties).unwrap();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(trapezoid_area(&pts), 0.5);
        let four = ScoredPairs::from_scores(&[0.8, 0.7, 0.6, 0.5], &[true, false, true, false]);
        assert!((trapezoid_area(&roc_points(&four).unwrap()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn random_scores_aupr_matches_prevalence_baseline() {
        // Under a uniformly random ranking of N items with P positives,
        // E[AP] = H_N / N + (P − 1)(N − H_N) / (N (N − 1)).
        let (n, p) = (4000usize, 40usize);
        let h: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
        let expected = h / n as f64 + (p - 1) as f64 * (n as f64 - h) / (n as f64 * (n - 1) as f64);
        let labels: Vec<bool> = (0..n).map(|k| k < p).collect();
        let runs: Vec<f64> = (0..50)
            .map(|seed| {
                let mut rng = RngStream::new(seed);
                let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
                aupr(&ScoredPairs::from_scores(&scores, &labels)).unwrap()
            })
            .collect();
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        let var = runs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs.len() - 1) as f64;
        let se = (var / runs.len() as f64).sqrt();
        assert!((mean - expected).abs() <= 3.0 * se, "mean {mean} expected {expected} se {se}");
        assert!((expected - p as f64 / n as f64).abs() < 0.01);
    }

    #[test]
    fn report_json_excludes_curves() {
        let s = ScoredPairs::from_scores(&[0.9, 0.4, 0.6], &[true, false, false]);
        let r = MetricsReport::compute(&s, 3, Variant::Nmf, 8).unwrap();
        r.check().unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["auc"], 1.0);
        assert_eq!(v["variant"], "nmf");
        assert!(v.get("roc_points").is_none());
    }
}
