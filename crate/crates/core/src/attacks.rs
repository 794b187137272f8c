//! Membership scores. Every attack reports a raw score where lower means
//! "more likely a training member"; a sample is predicted a member when its
//! score is strictly below the threshold.
//!
//! - LOSS: the target loss itself.
//! - Calibrated: target loss minus a per-sample difficulty estimate.
//! - LiRA: calibrated with the loss under a reference model as difficulty.
//! - Neighbourhood: target loss minus the mean target loss of generated
//!   neighbours.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::TextSample;
use crate::neighbourhood::{generate_neighbours, Neighbour, NeighbourConfig, NeighbourError};
use crate::par;
use crate::scoring::{batch_loss, Reduction, ScoringError, ScoringOracle, SubstitutionOracle};

#[derive(Debug, Clone, thiserror::Error)]
pub enum AttackError {
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("non-finite score for sample {0:?}")]
    NonFinite(String),
    #[error("neighbour sets ({sets}) do not match samples ({samples})")]
    Mismatch { sets: usize, samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Loss,
    Lira,
    Neighbourhood,
    Calibrated,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Loss => "loss",
            Self::Lira => "lira",
            Self::Neighbourhood => "neighbourhood",
            Self::Calibrated => "calibrated",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::Loss => "LOSS Attack",
            Self::Lira => "LiRA (Reference Model)",
            Self::Neighbourhood => "Neighbour Attack",
            Self::Calibrated => "Calibrated Attack",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loss" => Ok(Self::Loss),
            "lira" => Ok(Self::Lira),
            "neighbourhood" | "neighborhood" => Ok(Self::Neighbourhood),
            "calibrated" => Ok(Self::Calibrated),
            other => Err(format!("unknown attack {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipScore {
    pub sample_id: String,
    pub attack: AttackKind,
    pub score: f64,
    /// Neighbours actually averaged over (neighbourhood attack only).
    pub n_neighbours: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub sample_id: String,
    pub predicted_member: bool,
    pub gamma: f64,
}

pub fn decide(score: &MembershipScore, gamma: f64) -> Decision {
    Decision {
        sample_id: score.sample_id.clone(),
        predicted_member: score.score < gamma,
        gamma,
    }
}

/// A sample the attack could not score; excluded from evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackOutcome {
    pub scores: Vec<MembershipScore>,
    pub failures: Vec<SampleFailure>,
}

fn finite(sample_id: &str, score: f64) -> Result<f64, AttackError> {
    if score.is_finite() {
        Ok(score)
    } else {
        Err(AttackError::NonFinite(sample_id.to_string()))
    }
}

pub fn loss_attack<T: ScoringOracle + ?Sized>(
    target: &T,
    samples: &[TextSample],
    reduction: Reduction,
) -> Result<Vec<MembershipScore>, AttackError> {
    batch_loss(target, samples, reduction)?
        .into_iter()
        .map(|r| {
            Ok(MembershipScore {
                score: finite(&r.sample_id, r.loss)?,
                sample_id: r.sample_id,
                attack: AttackKind::Loss,
                n_neighbours: None,
            })
        })
        .collect()
}

/// Target loss minus `difficulty(sample)`. A failing difficulty excludes only
/// that sample.
pub fn calibrated_attack<T, D, E>(
    target: &T,
    difficulty: D,
    samples: &[TextSample],
    reduction: Reduction,
) -> Result<AttackOutcome, AttackError>
where
    T: ScoringOracle + ?Sized,
    D: Fn(&TextSample) -> Result<f64, E> + Sync + Send,
    E: fmt::Display + Send,
{
    let losses = batch_loss(target, samples, reduction)?;
    let offsets = par::map(samples, |s| difficulty(s).map_err(|e| e.to_string()));
    let mut out = AttackOutcome::default();
    for ((sample, loss), offset) in samples.iter().zip(losses).zip(offsets) {
        match offset {
            Ok(d) => out.scores.push(MembershipScore {
                sample_id: sample.id.clone(),
                attack: AttackKind::Calibrated,
                score: finite(&sample.id, loss.loss - d)?,
                n_neighbours: None,
            }),
            Err(reason) => out.failures.push(SampleFailure {
                sample_id: sample.id.clone(),
                reason,
            }),
        }
    }
    Ok(out)
}

/// Single-reference likelihood ratio: target loss minus reference loss.
pub fn lira_attack<T, R>(
    target: &T,
    reference: &R,
    samples: &[TextSample],
    reduction: Reduction,
) -> Result<Vec<MembershipScore>, AttackError>
where
    T: ScoringOracle + ?Sized,
    R: ScoringOracle + ?Sized,
{
    let t = batch_loss(target, samples, reduction)?;
    let r = batch_loss(reference, samples, reduction)?;
    t.into_iter()
        .zip(r)
        .map(|(t, r)| {
            Ok(MembershipScore {
                score: finite(&t.sample_id, t.loss - r.loss)?,
                sample_id: t.sample_id,
                attack: AttackKind::Lira,
                n_neighbours: None,
            })
        })
        .collect()
}

/// Generates neighbours for every sample. Each entry is independent; a
/// failure for one sample does not affect the others.
pub fn generate_all_neighbours<S: SubstitutionOracle + ?Sized>(
    substitution: &S,
    samples: &[TextSample],
    config: &NeighbourConfig,
) -> Vec<Result<Vec<Neighbour>, NeighbourError>> {
    par::map(samples, |s| generate_neighbours(substitution, s, config))
}

/// Neighbourhood scores from precomputed neighbour texts. An empty set marks
/// the sample as failed ("no neighbours").
pub fn neighbourhood_scores<T: ScoringOracle + ?Sized>(
    target: &T,
    samples: &[TextSample],
    neighbour_texts: &[Vec<String>],
    reduction: Reduction,
) -> Result<AttackOutcome, AttackError> {
    if neighbour_texts.len() != samples.len() {
        return Err(AttackError::Mismatch {
            sets: neighbour_texts.len(),
            samples: samples.len(),
        });
    }
    let own = batch_loss(target, samples, reduction)?;
    let items: Vec<(usize, &Vec<String>)> = neighbour_texts.iter().enumerate().collect();
    let means = par::map(&items, |(i, texts)| -> Result<Option<f64>, ScoringError> {
        if texts.is_empty() {
            return Ok(None);
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let losses = target.losses(&refs, reduction).map_err(|e| match e {
            ScoringError::Transport { message, .. } => ScoringError::Transport {
                message,
                sample_ids: vec![samples[*i].id.clone()],
            },
            other => other,
        })?;
        Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
    });

    let mut out = AttackOutcome::default();
    for (((sample, loss), mean), texts) in samples.iter().zip(own).zip(means).zip(neighbour_texts) {
        match mean? {
            Some(mean) => out.scores.push(MembershipScore {
                sample_id: sample.id.clone(),
                attack: AttackKind::Neighbourhood,
                score: finite(&sample.id, loss.loss - mean)?,
                n_neighbours: Some(texts.len()),
            }),
            None => out.failures.push(SampleFailure {
                sample_id: sample.id.clone(),
                reason: NeighbourError::NoNeighbours.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Generates neighbours with `substitution` and scores them under `target`.
/// Samples without neighbours are reported in `failures`.
pub fn neighbourhood_attack<T, S>(
    target: &T,
    substitution: &S,
    samples: &[TextSample],
    config: &NeighbourConfig,
    reduction: Reduction,
) -> Result<AttackOutcome, AttackError>
where
    T: ScoringOracle + ?Sized,
    S: SubstitutionOracle + ?Sized,
{
    let generated = generate_all_neighbours(substitution, samples, config);
    let mut texts = Vec::with_capacity(samples.len());
    let mut failures = Vec::new();
    for (sample, result) in samples.iter().zip(generated) {
        match result {
            Ok(ns) => texts.push(ns.into_iter().map(|n| n.text).collect()),
            Err(NeighbourError::Oracle(e @ ScoringError::Transport { .. })) => {
                return Err(AttackError::Scoring(e))
            }
            Err(e) => {
                failures.push(SampleFailure {
                    sample_id: sample.id.clone(),
                    reason: e.to_string(),
                });
                texts.push(Vec::new());
            }
        }
    }
    let mut outcome = neighbourhood_scores(target, samples, &texts, reduction)?;
    // replace the generic "no neighbours" reason with the generation error
    for f in &mut outcome.failures {
        if let Some(orig) = failures.iter().find(|g| g.sample_id == f.sample_id) {
            f.reason = orig.reason.clone();
        }
    }
    if !outcome.failures.is_empty() {
        warn!("{} samples excluded: no neighbours", outcome.failures.len());
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Looks losses up by text.
    struct Fixed(HashMap<&'static str, f64>);

    impl ScoringOracle for Fixed {
        fn name(&self) -> String {
            "fixed".into()
        }
        fn losses(&self, texts: &[&str], _r: Reduction) -> Result<Vec<f64>, ScoringError> {
            Ok(texts.iter().map(|t| self.0[t]).collect())
        }
    }

    fn sample(id: &str, text: &str) -> TextSample {
        TextSample::new(id, text)
    }

    #[test]
    fn loss_attack_is_identity_and_decision_uses_strict_threshold() {
        let oracle = Fixed(HashMap::from([("x", 2.0)]));
        let scores = loss_attack(&oracle, &[sample("a", "x")], Reduction::Mean).unwrap();
        assert_eq!(scores[0].score, 2.0);
        assert!(decide(&scores[0], 2.5).predicted_member);
        assert!(!decide(&scores[0], 2.0).predicted_member);
    }

    #[test]
    fn calibrated_arithmetic_and_zero_difficulty() {
        let oracle = Fixed(HashMap::from([("x", 3.0), ("y", 1.25)]));
        let samples = [sample("a", "x"), sample("b", "y")];
        let out = calibrated_attack(&oracle, |_| Ok::<_, String>(2.5), &samples, Reduction::Mean).unwrap();
        assert_eq!(out.scores[0].score, 0.5);
        let zero = calibrated_attack(&oracle, |_| Ok::<_, String>(0.0), &samples, Reduction::Mean).unwrap();
        let plain = loss_attack(&oracle, &samples, Reduction::Mean).unwrap();
        for (z, p) in zero.scores.iter().zip(&plain) {
            assert_eq!(z.score.to_bits(), p.score.to_bits());
        }
    }

    #[test]
    fn difficulty_failure_is_isolated() {
        let oracle = Fixed(HashMap::from([("x", 3.0), ("y", 1.0)]));
        let samples = [sample("a", "x"), sample("b", "y")];
        let out = calibrated_attack(
            &oracle,
            |s: &TextSample| if s.id == "a" { Err("boom") } else { Ok(0.5) },
            &samples,
            Reduction::Mean,
        )
        .unwrap();
        assert_eq!(out.scores.len(), 1);
        assert_eq!(out.scores[0].sample_id, "b");
        assert_eq!(out.failures[0].sample_id, "a");
        assert_eq!(out.failures[0].reason, "boom");
    }

    #[test]
    fn lira_arithmetic_and_self_reference() {
        let target = Fixed(HashMap::from([("x", 2.0)]));
        let reference = Fixed(HashMap::from([("x", 2.6)]));
        let s = [sample("a", "x")];
        let got = lira_attack(&target, &reference, &s, Reduction::Mean).unwrap();
        assert!((got[0].score + 0.6).abs() < 1e-12);
        let own = lira_attack(&target, &target, &s, Reduction::Mean).unwrap();
        assert_eq!(own[0].score, 0.0);
    }

    #[test]
    fn neighbourhood_arithmetic() {
        let target = Fixed(HashMap::from([("x", 2.0), ("n1", 3.0), ("n2", 2.5), ("n3", 3.5)]));
        let out = neighbourhood_scores(
            &target,
            &[sample("a", "x")],
            &[vec!["n1".into(), "n2".into(), "n3".into()]],
            Reduction::Mean,
        )
        .unwrap();
        assert_eq!(out.scores[0].score, -1.0);
        assert_eq!(out.scores[0].n_neighbours, Some(3));
    }

    #[test]
    fn empty_neighbour_set_excludes_sample() {
        let target = Fixed(HashMap::from([("x", 2.0), ("y", 1.0), ("n", 1.5)]));
        let out = neighbourhood_scores(
            &target,
            &[sample("a", "x"), sample("b", "y")],
            &[vec![], vec!["n".into()]],
            Reduction::Mean,
        )
        .unwrap();
        assert_eq!(out.scores.len(), 1);
        assert_eq!(out.scores[0].sample_id, "b");
        assert_eq!(out.failures[0].reason, "no neighbours");
    }

    #[test]
    fn attack_kind_roundtrip() {
        for k in [AttackKind::Loss, AttackKind::Lira, AttackKind::Neighbourhood, AttackKind::Calibrated] {
            assert_eq!(k.as_str().parse::<AttackKind>().unwrap(), k);
        }
    }
}
