//! Ablations over the number of neighbours `n` and replacements `m`.
//!
//! Neighbours are generated once per `m` with the largest `n` in the grid;
//! smaller `n` reuse the best-ranked prefix of that list.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::format::{fmt_sig, fpr_label, percent};
use super::{evaluate_scores, EvalError, EvalReport};
use crate::attacks::{generate_all_neighbours, AttackKind};
use crate::corpus::TextSample;
use crate::neighbourhood::{NeighbourConfig, NeighbourError};
use crate::par;
use crate::scoring::{batch_loss, Reduction, ScoringError, ScoringOracle, SubstitutionOracle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub n: Vec<usize>,
    pub m: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub m: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub grid: SweepGrid,
    pub cells: Vec<SweepCell>,
}

/// Everything a sweep needs besides the grid.
pub struct SweepRunner<'a, T: ?Sized, S: ?Sized> {
    pub target: &'a T,
    pub substitution: &'a S,
    pub members: &'a [TextSample],
    pub nonmembers: &'a [TextSample],
    pub base: NeighbourConfig,
    pub targets: Vec<f64>,
    pub reduction: Reduction,
}

/// Per-sample neighbour losses for one `m`, best-ranked first.
struct Scored {
    own: f64,
    neighbour_losses: Vec<f64>,
}

impl<'a, T, S> SweepRunner<'a, T, S>
where
    T: ScoringOracle + ?Sized,
    S: SubstitutionOracle + ?Sized,
{
    fn score_population(&self, samples: &[TextSample], config: &NeighbourConfig) -> Result<Vec<Scored>, EvalError> {
        let own = batch_loss(self.target, samples, self.reduction).map_err(attack_err)?;
        let generated = generate_all_neighbours(self.substitution, samples, config);
        let items: Vec<_> = generated.into_iter().zip(own).collect();
        let scored = par::map(&items, |(neighbours, own)| -> Result<Scored, ScoringError> {
            let texts: Vec<&str> = match neighbours {
                Ok(ns) => ns.iter().map(|n| n.text.as_str()).collect(),
                Err(NeighbourError::Oracle(e)) if matches!(e, ScoringError::Transport { .. }) => {
                    return Err(e.clone())
                }
                Err(_) => Vec::new(),
            };
            let neighbour_losses = if texts.is_empty() {
                Vec::new()
            } else {
                self.target.losses(&texts, self.reduction)?
            };
            Ok(Scored {
                own: own.loss,
                neighbour_losses,
            })
        });
        scored.into_iter().map(|r| r.map_err(attack_err)).collect()
    }

    pub fn run(&self, grid: &SweepGrid) -> Result<AblationTable, EvalError> {
        if grid.n.is_empty() || grid.m.is_empty() {
            return Err(EvalError::EmptyGrid);
        }
        let max_n = *grid.n.iter().max().expect("non-empty");
        let mut cells = Vec::new();
        for &m in &grid.m {
            let config = NeighbourConfig {
                n: max_n,
                m,
                ..self.base.clone()
            };
            let members = self.score_population(self.members, &config)?;
            let nonmembers = self.score_population(self.nonmembers, &config)?;
            let reports = par::map(&grid.n, |&n| {
                let (mem, ex_m) = prefix_scores(&members, n);
                let (non, ex_n) = prefix_scores(&nonmembers, n);
                let echo = serde_json::json!({"n": n, "m": m, "dropout_p": config.dropout_p});
                evaluate_scores(AttackKind::Neighbourhood, &mem, &non, ex_m + ex_n, &self.targets, echo)
                    .map(|(report, _)| SweepCell { n, m, report })
            });
            for r in reports {
                cells.push(r?);
            }
        }
        Ok(AblationTable {
            grid: grid.clone(),
            cells,
        })
    }
}

fn attack_err(e: ScoringError) -> EvalError {
    EvalError::Attack(e.into())
}

/// Scores using the first `n` neighbours; samples without neighbours are
/// excluded and counted.
fn prefix_scores(scored: &[Scored], n: usize) -> (Vec<f64>, usize) {
    let mut scores = Vec::with_capacity(scored.len());
    let mut excluded = 0;
    for s in scored {
        let used = &s.neighbour_losses[..s.neighbour_losses.len().min(n)];
        if used.is_empty() {
            excluded += 1;
        } else {
            scores.push(s.own - used.iter().sum::<f64>() / used.len() as f64);
        }
    }
    (scores, excluded)
}

pub fn ablation_sweep<T, S>(runner: &SweepRunner<'_, T, S>, grid: &SweepGrid) -> Result<AblationTable, EvalError>
where
    T: ScoringOracle + ?Sized,
    S: SubstitutionOracle + ?Sized,
{
    runner.run(grid)
}

impl AblationTable {
    pub fn cell(&self, n: usize, m: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.n == n && c.m == m)
    }

    /// FPR rows by grid columns. Columns are `n` when `m` is fixed, `m` when
    /// `n` is fixed, and one table per `m` otherwise.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Neighbourhood attack ablation\n\n");
        if self.grid.n.len() == 1 && self.grid.m.len() > 1 {
            let n = self.grid.n[0];
            let cells: Vec<&SweepCell> = self.grid.m.iter().filter_map(|&m| self.cell(n, m)).collect();
            let _ = writeln!(out, "Neighbours per sample: {n}\n");
            let headers: Vec<String> = self.grid.m.iter().map(|m| m.to_string()).collect();
            table(&mut out, "#Word Replacements", &headers, &cells);
        } else {
            for &m in &self.grid.m {
                let cells: Vec<&SweepCell> = self.grid.n.iter().filter_map(|&n| self.cell(n, m)).collect();
                let _ = writeln!(out, "Word replacements: {m}\n");
                let headers: Vec<String> = self.grid.n.iter().map(|n| n.to_string()).collect();
                table(&mut out, "#Neighbours", &headers, &cells);
            }
        }
        out
    }
}

fn table(out: &mut String, corner: &str, headers: &[String], cells: &[&SweepCell]) {
    let _ = write!(out, "| {corner} |");
    for h in headers {
        let _ = write!(out, " {h} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(headers.len()));
    out.push('\n');
    let targets: Vec<f64> = cells
        .first()
        .map(|c| c.report.tpr_rows().iter().map(|r| r.target_fpr).collect())
        .unwrap_or_default();
    for (i, t) in targets.iter().enumerate() {
        let _ = write!(out, "| {} |", fpr_label(*t));
        for c in cells {
            let _ = write!(out, " {} |", percent(c.report.tpr_rows()[i].tpr));
        }
        out.push('\n');
    }
    out.push_str("| AUC |");
    for c in cells {
        let _ = write!(out, " {} |", fmt_sig(c.report.auc));
    }
    out.push_str("\n\n");
}
