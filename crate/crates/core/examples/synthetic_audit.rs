//! Runs LOSS, LiRA and neighbourhood attacks against an n-gram target
//! trained on a synthetic corpus and prints AUC and TPR at low FPR.
//!
//! cargo run --release -p mia-audit --example synthetic_audit -- [add_k] [successors] [zipf] [n] [classes]
//!
//! Defaults: add_k 1, successors 8, zipf 1.5, n 25, classes 50.

use std::time::Instant;

use mia_audit::attacks::{lira_attack, loss_attack, neighbourhood_attack};
use mia_audit::corpus::Label;
use mia_audit::eval::{evaluate_scores, DEFAULT_FPR_TARGETS};
use mia_audit::neighbourhood::NeighbourConfig;
use mia_audit::scoring::{fit_ngram_backend, Reduction};
use mia_audit::synth::{LanguageParams, SyntheticLanguage};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let add_k = arg(0, 1.0);
    let params = LanguageParams {
        successors: arg(1, 8.0) as usize,
        zipf: arg(2, 1.5),
        classes: arg(4, 50.0) as usize,
        ..LanguageParams::default()
    };
    let n = arg(3, 25.0) as usize;

    let start = Instant::now();
    let lang = SyntheticLanguage::new(params, 17);
    let train = lang.samples("m", 2000, Label::Member, 1);
    let nonmembers = lang.samples("n", 1000, Label::Nonmember, 2);
    let public = lang.samples("p", 2000, Label::Unknown, 3);
    let members = &train[..1000];

    let target = fit_ngram_backend(&train, 3, add_k).unwrap();
    let reference = fit_ngram_backend(&public, 3, add_k).unwrap();
    let substitution = fit_ngram_backend(&public, 2, 1.0).unwrap();

    let split = |scores: &[mia_audit::attacks::MembershipScore]| {
        let (m, nm): (Vec<_>, Vec<_>) = scores.iter().partition(|s| s.sample_id.starts_with("m-"));
        (
            m.iter().map(|s| s.score).collect::<Vec<_>>(),
            nm.iter().map(|s| s.score).collect::<Vec<_>>(),
        )
    };
    let population: Vec<_> = members.iter().chain(&nonmembers).cloned().collect();

    let loss = loss_attack(&target, &population, Reduction::Mean).unwrap();
    let lira = lira_attack(&target, &reference, &population, Reduction::Mean).unwrap();
    let config = NeighbourConfig { n, ..NeighbourConfig::default() };
    let neigh = neighbourhood_attack(&target, &substitution, &population, &config, Reduction::Mean).unwrap();

    for (name, scores) in [("loss", &loss), ("lira", &lira), ("neighbourhood", &neigh.scores)] {
        let (m, nm) = split(scores);
        let (r, _) = evaluate_scores(
            mia_audit::attacks::AttackKind::Neighbourhood,
            &m,
            &nm,
            0,
            &DEFAULT_FPR_TARGETS,
            serde_json::Value::Null,
        )
        .unwrap();
        let tprs: Vec<String> = r.tpr_rows().iter().map(|t| format!("{:.4}", t.tpr)).collect();
        println!("{name:>14}: auc {:.4}  tpr {}", r.auc, tprs.join(" / "));
    }
    println!("excluded {}  elapsed {:.2?}", neigh.failures.len(), start.elapsed());

    let runner = mia_audit::eval::SweepRunner {
        target: &target,
        substitution: &substitution,
        members,
        nonmembers: &nonmembers,
        base: config.clone(),
        targets: DEFAULT_FPR_TARGETS.to_vec(),
        reduction: Reduction::Mean,
    };
    let grid = mia_audit::eval::SweepGrid { n: vec![5, 10, 25, 50, 100], m: vec![1] };
    let table = mia_audit::eval::ablation_sweep(&runner, &grid).unwrap();
    print!("{}", table.to_markdown());
}
