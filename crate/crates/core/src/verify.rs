//! Ownership verification: matching rates, threshold decisions, and
//! ROC/AUC discrimination metrics over pirated/independent test pools.
//!
//! Suspect models are only ever queried through the [`BlackBox`] trait, so
//! the protocol cannot accidentally depend on logits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::FingerprintSet;
use crate::modelops::{ModelPool, PoolRole};
use crate::nn::{self, Model};

/// Prediction-only access to a suspect model.
pub trait BlackBox {
    fn input_dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<usize>;
}

impl BlackBox for Model {
    fn input_dim(&self) -> usize {
        Model::input_dim(self)
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        nn::predict(self, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Pirated,
    Independent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suspect_ref: String,
    pub matching_rate: f64,
    pub per_fingerprint_matches: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
}

/// Query the suspect with every fingerprint and record the fraction whose
/// stored label comes back. Black-box: only hard predictions are used.
pub fn matching_rate(
    suspect: &dyn BlackBox,
    suspect_ref: &str,
    fps: &FingerprintSet,
) -> Result<VerificationReport> {
    if fps.is_empty() {
        return Err(Error::Empty("fingerprint set".into()));
    }
    let dim = fps.fingerprints[0].x_star.len();
    if suspect.input_dim() != dim {
        return Err(Error::Shape {
            expected: format!("suspect with input dim {dim}"),
            got: format!("{}", suspect.input_dim()),
        });
    }
    let mut matches = Vec::with_capacity(fps.len());
    for fp in &fps.fingerprints {
        matches.push(suspect.predict(&fp.x_star)? == fp.y_star);
    }
    let rate = matches.iter().filter(|&&m| m).count() as f64 / matches.len() as f64;
    Ok(VerificationReport {
        suspect_ref: suspect_ref.to_string(),
        matching_rate: rate,
        per_fingerprint_matches: matches,
        theta: None,
        decision: None,
    })
}

/// Apply the threshold rule: pirated iff `matching_rate >= theta`
/// (inclusive at the boundary).
pub fn decide(mut report: VerificationReport, theta: f64) -> Result<VerificationReport> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Config(format!(
            "theta must lie in [0,1], got {theta}"
        )));
    }
    report.theta = Some(theta);
    report.decision = Some(if report.matching_rate >= theta {
        Decision::Pirated
    } else {
        Decision::Independent
    });
    Ok(report)
}

/// Average 1-based ranks of the combined sample, ties averaged.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // mean of 1-based ranks i+1 ..= j+1
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-based AUC: the probability that a random pirated score exceeds a
/// random independent score, ties counting half. Computed via average
/// ranks in O(n log n).
pub fn auc(pirated_scores: &[f64], independent_scores: &[f64]) -> Result<f64> {
    if pirated_scores.is_empty() || independent_scores.is_empty() {
        return Err(Error::Empty("score list for AUC".into()));
    }
    let n_p = pirated_scores.len();
    let n_i = independent_scores.len();
    let mut combined = Vec::with_capacity(n_p + n_i);
    combined.extend_from_slice(pirated_scores);
    combined.extend_from_slice(independent_scores);
    let ranks = average_ranks(&combined);
    let rank_sum: f64 = ranks[..n_p].iter().sum();
    let u = rank_sum - (n_p * (n_p + 1)) as f64 / 2.0;
    Ok(u / (n_p as f64 * n_i as f64))
}

/// ROC points (fpr, tpr) swept over the union of observed scores plus a
/// sentinel above the maximum, sorted by ascending fpr from (0,0) to
/// (1,1). A score counts as positive when it is >= the threshold.
pub fn roc_curve(pirated_scores: &[f64], independent_scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    if pirated_scores.is_empty() || independent_scores.is_empty() {
        return Err(Error::Empty("score list for ROC".into()));
    }
    let mut thresholds: Vec<f64> = pirated_scores
        .iter()
        .chain(independent_scores)
        .copied()
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_p = pirated_scores.len() as f64;
    let n_i = independent_scores.len() as f64;
    let mut points = vec![(0.0, 0.0)]; // sentinel threshold above every score
    for t in thresholds {
        let tpr = pirated_scores.iter().filter(|&&s| s >= t).count() as f64 / n_p;
        let fpr = independent_scores.iter().filter(|&&s| s >= t).count() as f64 / n_i;
        if points.last() != Some(&(fpr, tpr)) {
            points.push((fpr, tpr));
        }
    }
    Ok(points)
}

/// Trapezoidal area under a (fpr, tpr) curve.
pub fn roc_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Per-attack slice of a benchmark: scores of pirated models sharing one
/// attack kind against all independent scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackBreakdown {
    pub count: usize,
    pub auc: f64,
}

/// One scored test model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredModel {
    pub lineage: String,
    pub matching_rate: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub pirated_scores: Vec<f64>,
    pub independent_scores: Vec<f64>,
    pub auc: f64,
    pub roc_points: Vec<(f64, f64)>,
    /// AUC per attack kind, keyed by the first token of each pirated
    /// model's lineage. Counts partition the pirated pool.
    pub per_attack: BTreeMap<String, AttackBreakdown>,
    pub pirated_models: Vec<ScoredModel>,
    pub independent_models: Vec<ScoredModel>,
    pub theta: f64,
}

fn attack_key(lineage: &str) -> String {
    lineage
        .split_whitespace()
        .next()
        .unwrap_or("unknown")
        .to_string()
}

/// Score every test model against the fingerprint set and compute the
/// discrimination metrics.
pub fn evaluate(
    fps: &FingerprintSet,
    pirated_test: &ModelPool,
    independent_test: &ModelPool,
    theta: f64,
) -> Result<BenchmarkResult> {
    if pirated_test.role != PoolRole::PiratedTest {
        return Err(Error::Config(format!(
            "expected a pirated_test pool, got {}",
            pirated_test.role.name()
        )));
    }
    if independent_test.role != PoolRole::IndependentTest {
        return Err(Error::Config(format!(
            "expected an independent_test pool, got {}",
            independent_test.role.name()
        )));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Config(format!(
            "theta must lie in [0,1], got {theta}"
        )));
    }

    let score_pool = |pool: &ModelPool| -> Result<(Vec<f64>, Vec<ScoredModel>)> {
        let mut scores = Vec::with_capacity(pool.len());
        let mut scored = Vec::with_capacity(pool.len());
        for m in &pool.models {
            let report = matching_rate(m, &m.lineage, fps)?;
            let report = decide(report, theta)?;
            scores.push(report.matching_rate);
            scored.push(ScoredModel {
                lineage: m.lineage.clone(),
                matching_rate: report.matching_rate,
                decision: report.decision.expect("decided"),
            });
        }
        Ok((scores, scored))
    };

    let (pirated_scores, pirated_models) = score_pool(pirated_test)?;
    let (independent_scores, independent_models) = score_pool(independent_test)?;

    let overall_auc = auc(&pirated_scores, &independent_scores)?;
    let roc_points = roc_curve(&pirated_scores, &independent_scores)?;

    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (m, &score) in pirated_test.models.iter().zip(&pirated_scores) {
        grouped
            .entry(attack_key(&m.lineage))
            .or_default()
            .push(score);
    }
    let mut per_attack = BTreeMap::new();
    for (key, scores) in grouped {
        per_attack.insert(
            key,
            AttackBreakdown {
                count: scores.len(),
                auc: auc(&scores, &independent_scores)?,
            },
        );
    }

    Ok(BenchmarkResult {
        pirated_scores,
        independent_scores,
        auc: overall_auc,
        roc_points,
        per_attack,
        pirated_models,
        independent_models,
        theta,
    })
}
