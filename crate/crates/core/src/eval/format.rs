//! Report rendering. Every float is printed with 6 significant digits.

use std::fmt::Write;

use serde_json::Value;

use super::{EvalReport, RocCurve};

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-5..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Rounds every non-integer JSON number to 6 significant digits.
pub fn round_json_floats(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64");
            let rounded: f64 = format!("{x:.5e}").parse().expect("float");
            serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
        }
        Value::Array(xs) => Value::Array(xs.into_iter().map(round_json_floats).collect()),
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| (k, round_json_floats(v)))
                .collect(),
        ),
        other => other,
    }
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("fpr,tpr,gamma\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", fmt_sig(p.fpr), fmt_sig(p.tpr), fmt_sig(p.gamma));
    }
    out
}

pub fn percent(x: f64) -> String {
    format!("{}%", fmt_sig(x * 100.0))
}

/// FPR row/column label, e.g. `1% FPR`.
pub fn fpr_label(target: f64) -> String {
    format!("{} FPR", percent(target))
}

/// TPR table (attacks × FPR targets) followed by an AUC table.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let mut out = String::from("# Membership inference report\n\n");
    let Some(first) = reports.first() else {
        out.push_str("No reports.\n");
        return out;
    };
    let targets: Vec<f64> = first.tpr_rows().iter().map(|r| r.target_fpr).collect();

    out.push_str("## True positive rates at low false positive rates\n\n");
    out.push_str("Cells show TPR with the achieved FPR in parentheses.\n\n");
    out.push_str("| False Positive Rate |");
    for t in &targets {
        let _ = write!(out, " {} |", percent(*t));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(targets.len()));
    out.push('\n');
    for r in reports {
        let _ = write!(out, "| {} |", r.attack.display_name());
        for row in r.tpr_rows() {
            let _ = write!(out, " {} ({}) |", percent(row.tpr), percent(row.achieved_fpr));
        }
        out.push('\n');
    }

    out.push_str("\n## AUC\n\n| Attack | AUC |\n|---|---|\n");
    for r in reports {
        let _ = writeln!(out, "| {} | {} |", r.attack.display_name(), fmt_sig(r.auc));
    }

    out.push_str("\n## Counts\n\n| Attack | Members | Nonmembers | Excluded |\n|---|---|---|---|\n");
    for r in reports {
        let c = r.counts;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.attack.display_name(),
            c.members,
            c.nonmembers,
            c.excluded
        );
    }

    let warnings: Vec<String> = reports
        .iter()
        .flat_map(|r| r.warnings.iter().map(move |w| format!("{}: {w}", r.attack)))
        .collect();
    if !warnings.is_empty() {
        out.push_str("\n## Warnings\n\n");
        for w in warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    let _ = writeln!(out, "\nScore convention: {}.", first.score_convention);
    out
}
