//! ROC analysis of membership scores: AUC and TPR at calibrated low FPR.
//!
//! Scores follow the attack convention (lower = member, predicted member iff
//! `score < gamma`). Members are the positive class.

use std::collections::{BTreeMap, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, MembershipScore};
use crate::corpus::Label;

pub mod format;
pub mod sweep;

pub use format::{fmt_sig, render_markdown, roc_csv, round_json_floats};
pub use sweep::{ablation_sweep, AblationTable, SweepCell, SweepGrid, SweepRunner};

/// FPR targets reported by default: 1%, 0.1% and 0.01%.
pub const DEFAULT_FPR_TARGETS: [f64; 3] = [0.01, 0.001, 0.0001];

pub const SCORE_CONVENTION: &str = "lower score means more likely member; predicted member iff score < gamma";

#[derive(Debug, Clone, thiserror::Error)]
pub enum EvalError {
    #[error("no {0} scores to evaluate")]
    Empty(&'static str),
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("FPR target {0} outside (0, 1)")]
    BadTarget(f64),
    #[error("sample {0:?} has no member/nonmember label")]
    Unlabelled(String),
    #[error("empty ablation grid")]
    EmptyGrid,
    #[error(transparent)]
    Attack(#[from] crate::attacks::AttackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub gamma: f64,
}

/// Step ROC over every distinct threshold, from (0, 0) to (1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

fn check_scores(xs: &[f64], what: &'static str) -> Result<(), EvalError> {
    if xs.is_empty() {
        return Err(EvalError::Empty(what));
    }
    match xs.iter().find(|x| !x.is_finite()) {
        Some(&x) => Err(EvalError::NonFinite(x)),
        None => Ok(()),
    }
}

/// Each point uses threshold `gamma` = one of the distinct scores (counting
/// scores strictly below it), plus a final `+inf` point at (1, 1).
pub fn roc(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<RocCurve, EvalError> {
    check_scores(member_scores, "member")?;
    check_scores(nonmember_scores, "nonmember")?;
    let mut all: Vec<(f64, bool)> = member_scores
        .iter()
        .map(|&s| (s, true))
        .chain(nonmember_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (pos, neg) = (member_scores.len() as f64, nonmember_scores.len() as f64);
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let gamma = all[i].0;
        points.push(RocPoint {
            fpr: fp as f64 / neg,
            tpr: tp as f64 / pos,
            gamma,
        });
        while i < all.len() && all[i].0 == gamma {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        gamma: f64::INFINITY,
    });
    Ok(RocCurve { points })
}

/// Trapezoidal area. Tied member/nonmember scores form a diagonal step and
/// contribute half credit, matching the Mann-Whitney statistic.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub target_fpr: f64,
    pub tpr: f64,
    pub achieved_fpr: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub const RESOLUTION_WARNING: &str = "insufficient nonmembers for target FPR";

/// For each target, the largest `gamma` whose empirical FPR does not exceed
/// the target, with the exact TPR and FPR reached there.
pub fn tpr_at_fpr(
    member_scores: &[f64],
    nonmember_scores: &[f64],
    targets: &[f64],
) -> Result<Vec<TprAtFpr>, EvalError> {
    check_scores(member_scores, "member")?;
    check_scores(nonmember_scores, "nonmember")?;
    let mut neg = nonmember_scores.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut pos = member_scores.to_vec();
    pos.sort_by(f64::total_cmp);
    let n = neg.len();

    targets
        .iter()
        .map(|&target| {
            if !(target > 0.0 && target < 1.0) {
                return Err(EvalError::BadTarget(target));
            }
            // largest k with k / n <= target, evaluated as the comparison is
            let mut k = ((target * n as f64).floor() as usize).min(n);
            while k < n && (k + 1) as f64 / n as f64 <= target {
                k += 1;
            }
            while k > 0 && k as f64 / n as f64 > target {
                k -= 1;
            }
            // gamma = (k+1)-th smallest nonmember admits at most k below it
            let gamma = if k < n { neg[k] } else { f64::INFINITY };
            let below = |xs: &[f64]| xs.partition_point(|&x| x < gamma);
            let fp = below(&neg);
            let tp = below(&pos);
            let warning = ((n as f64) * target < 1.0).then(|| {
                warn!("{RESOLUTION_WARNING}: {n} nonmembers, target {target}");
                format!("{RESOLUTION_WARNING} ({n} nonmembers, target {})", fmt_sig(target))
            });
            Ok(TprAtFpr {
                target_fpr: target,
                tpr: tp as f64 / pos.len() as f64,
                achieved_fpr: fp as f64 / n as f64,
                gamma,
                warning,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub members: usize,
    pub nonmembers: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attack: AttackKind,
    pub score_convention: String,
    pub auc: f64,
    /// Keyed by the target FPR printed with 6 significant digits.
    pub tpr_at: BTreeMap<String, TprAtFpr>,
    pub counts: Counts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Entries in descending target order (1%, 0.1%, ...).
    pub fn tpr_rows(&self) -> Vec<&TprAtFpr> {
        let mut rows: Vec<&TprAtFpr> = self.tpr_at.values().collect();
        rows.sort_by(|a, b| b.target_fpr.total_cmp(&a.target_fpr));
        rows
    }

    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut s = serde_json::to_string_pretty(&round_json_floats(value)).expect("json");
        s.push('\n');
        s
    }
}

/// Builds a report from raw member and nonmember scores.
pub fn evaluate_scores(
    attack: AttackKind,
    member_scores: &[f64],
    nonmember_scores: &[f64],
    excluded: usize,
    targets: &[f64],
    config: serde_json::Value,
) -> Result<(EvalReport, RocCurve), EvalError> {
    let curve = roc(member_scores, nonmember_scores)?;
    let rows = tpr_at_fpr(member_scores, nonmember_scores, targets)?;
    let warnings = rows.iter().filter_map(|r| r.warning.clone()).collect();
    let report = EvalReport {
        attack,
        score_convention: SCORE_CONVENTION.to_string(),
        auc: auc(&curve),
        tpr_at: rows.into_iter().map(|r| (fmt_sig(r.target_fpr), r)).collect(),
        counts: Counts {
            members: member_scores.len(),
            nonmembers: nonmember_scores.len(),
            excluded,
        },
        warnings,
        config,
    };
    Ok((report, curve))
}

/// Splits scores by ground-truth label and evaluates them.
pub fn evaluate(
    attack: AttackKind,
    scores: &[MembershipScore],
    labels: &HashMap<String, Label>,
    excluded: usize,
    targets: &[f64],
    config: serde_json::Value,
) -> Result<(EvalReport, RocCurve), EvalError> {
    let mut members = Vec::new();
    let mut nonmembers = Vec::new();
    for s in scores {
        match labels.get(&s.sample_id) {
            Some(Label::Member) => members.push(s.score),
            Some(Label::Nonmember) => nonmembers.push(s.score),
            _ => return Err(EvalError::Unlabelled(s.sample_id.clone())),
        }
    }
    evaluate_scores(attack, &members, &nonmembers, excluded, targets, config)
}
