//! CSV and JSON artifacts: traces, robustness reports, result rows,
//! verification reports, and the accuracy table.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a rerun
//! of the same config reproduces byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use sampure_core::attack::ReportRow;
use sampure_core::purify::PurifyTrace;
use sampure_core::theory::CheckOutcome;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Trace of one purification run:
/// `level,sigma,lr,ere_value,proj_ball_active,proj_box_active,x0,x1,...`.
pub fn trace_csv(trace: &PurifyTrace) -> String {
    let dim = trace.rows.first().map(|r| r.x.len()).unwrap_or(0);
    let mut out = String::from("level,sigma,lr,ere_value,proj_ball_active,proj_box_active");
    for j in 0..dim {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for row in &trace.rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            row.level, row.sigma, row.learning_rate, row.ere_value, row.proj_ball_active, row.proj_box_active
        );
        for v in &row.x {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Robustness rows: `sample_id,label,clean_pred,adv_pred,pert_norm,success`.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("sample_id,label,clean_pred,adv_pred,pert_norm,success\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.sample_id, r.label, r.clean_pred, r.adv_pred, r.pert_norm, r.success
        );
    }
    out
}

/// Point-per-row matrix with a sample id column.
pub fn points_csv(points: &[(usize, Vec<f64>)]) -> String {
    let dim = points.first().map(|(_, x)| x.len()).unwrap_or(0);
    let mut out = String::from("sample_id");
    for j in 0..dim {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for (id, x) in points {
        let _ = write!(out, "{id}");
        for v in x {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn loss_curve_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

/// The landscape grid: `x,log_density,reconstruction_error`.
pub fn landscape_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("x,log_density,reconstruction_error\n");
    for (x, logp, ere) in rows {
        let _ = writeln!(out, "{x},{logp},{ere}");
    }
    out
}

/// One persisted metric of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment_id: String,
    pub config_hash: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("experiment_id,config_hash,metric,value,seed\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.experiment_id, r.config_hash, r.metric, r.value, r.seed);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
struct VerifyReport<'a> {
    all_pass: bool,
    checks: &'a [CheckJson],
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckJson {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl From<&CheckOutcome> for CheckJson {
    fn from(c: &CheckOutcome) -> Self {
        CheckJson {
            name: c.name.to_string(),
            measured: c.measured,
            bound: c.bound,
            tolerance: c.tolerance,
            pass: c.pass,
        }
    }
}

pub fn verify_report_json(outcomes: &[CheckOutcome]) -> Result<String> {
    let checks: Vec<CheckJson> = outcomes.iter().map(CheckJson::from).collect();
    let report = VerifyReport {
        all_pass: outcomes.iter().all(|c| c.pass),
        checks: &checks,
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

/// One line of the accuracy table: a purification radius crossed with an
/// attack name.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub rho_pur: f64,
    pub attack: String,
    pub clean_pct: f64,
    pub adv_pct: f64,
}

/// Clean/adversarial accuracy grid as CSV plus aligned text. Rows must be
/// nonempty; radii become lines, attacks become columns.
pub fn table_report(rows: &[TableRow]) -> Result<(String, String)> {
    if rows.is_empty() {
        bail!("accuracy table needs at least one row");
    }
    let mut radii: Vec<f64> = rows.iter().map(|r| r.rho_pur).collect();
    radii.sort_by(|a, b| a.partial_cmp(b).expect("finite radii"));
    radii.dedup();
    let mut attacks: Vec<String> = rows.iter().map(|r| r.attack.clone()).collect();
    attacks.sort();
    attacks.dedup();

    let cell = |rho: f64, attack: &str| -> Option<&TableRow> {
        rows.iter().find(|r| r.rho_pur == rho && r.attack == attack)
    };

    let mut csv = String::from("rho_pur,clean");
    for a in &attacks {
        let _ = write!(csv, ",{a}");
    }
    csv.push('\n');
    for &rho in &radii {
        let clean = rows
            .iter()
            .find(|r| r.rho_pur == rho)
            .map(|r| r.clean_pct)
            .unwrap_or(f64::NAN);
        let _ = write!(csv, "{rho},{clean:.2}");
        for a in &attacks {
            match cell(rho, a) {
                Some(r) => {
                    let _ = write!(csv, ",{:.2}", r.adv_pct);
                }
                None => csv.push_str(",-"),
            }
        }
        csv.push('\n');
    }

    let mut headers = vec!["rho_pur".to_string(), "clean".to_string()];
    headers.extend(attacks.iter().cloned());
    let mut lines: Vec<Vec<String>> = vec![headers];
    for &rho in &radii {
        let clean = rows
            .iter()
            .find(|r| r.rho_pur == rho)
            .map(|r| format!("{:.2}", r.clean_pct))
            .unwrap_or_else(|| "-".into());
        let mut line = vec![format!("{rho}"), clean];
        for a in &attacks {
            line.push(match cell(rho, a) {
                Some(r) => format!("{:.2}", r.adv_pct),
                None => "-".into(),
            });
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for line in &lines {
        for (c, cell) in line.iter().enumerate() {
            if c > 0 {
                text.push_str("  ");
            }
            let _ = write!(text, "{cell:>width$}", width = widths[c]);
        }
        text.push('\n');
    }
    Ok((csv, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_table() {
        let rows = vec![TableRow {
            rho_pur: 0.3,
            attack: "gpgd20".into(),
            clean_pct: 95.5,
            adv_pct: 82.25,
        }];
        let (csv, text) = table_report(&rows).unwrap();
        assert_eq!(csv, "rho_pur,clean,gpgd20\n0.3,95.50,82.25\n");
        assert!(text.contains("82.25"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn three_radii_mirror_the_grid_shape() {
        let mut rows = Vec::new();
        for (i, rho) in [2.0, 2.5, 3.0].iter().enumerate() {
            for attack in ["gpgd20", "adaptive20"] {
                rows.push(TableRow {
                    rho_pur: *rho,
                    attack: attack.into(),
                    clean_pct: 90.0 - i as f64,
                    adv_pct: 80.0 - i as f64,
                });
            }
        }
        let (csv, text) = table_report(&rows).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(text.lines().count(), 4);
        assert!(csv.starts_with("rho_pur,clean,adaptive20,gpgd20"));
    }

    #[test]
    fn empty_table_rejected() {
        assert!(table_report(&[]).is_err());
    }

    #[test]
    fn csv_headers_are_pinned() {
        assert!(report_csv(&[]).starts_with("sample_id,label,clean_pred,adv_pred,pert_norm,success"));
        assert!(landscape_csv(&[]).starts_with("x,log_density,reconstruction_error"));
        assert!(results_csv(&[]).starts_with("experiment_id,config_hash,metric,value,seed"));
        let trace = PurifyTrace::default();
        assert!(trace_csv(&trace).starts_with("level,sigma,lr,ere_value,proj_ball_active,proj_box_active"));
    }
}
