//! Report files: the summary table, per-cell round logs and a loss-vs-budget
//! table. Floats are written in shortest round-trip form so the files parse
//! back to identical values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MelError, Result};
use crate::orchestrator::RoundLog;
use crate::schedule::Policy;

pub const SUMMARY_HEADER: [&str; 6] = ["policy", "T", "seed", "final_loss", "rounds", "total_time"];
pub const CELLS_HEADER: [&str; 5] = ["policy", "T", "seed", "accuracy", "status"];
pub const ROUND_HEADER: [&str; 12] = [
    "g",
    "tau",
    "L",
    "max_time_s",
    "beta",
    "delta",
    "global_loss",
    "bound",
    "tau_star",
    "batches",
    "beta_fallback",
    "beta_clamped",
];

/// Outcome of one `(policy, T, seed)` training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub policy: Policy,
    pub budget_s: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub rounds: usize,
    pub total_time: f64,
    pub accuracy: Option<f64>,
    /// Why training stopped, or the error that aborted the cell.
    pub status: String,
    pub logs: Vec<RoundLog>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    v.retain(|x| !x.is_nan());
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

impl ExperimentReport {
    pub fn budgets(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.budget_s) {
                out.push(c.budget_s);
            }
        }
        out
    }

    pub fn policies(&self) -> Vec<Policy> {
        let mut out = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.policy) {
                out.push(c.policy);
            }
        }
        out
    }

    pub fn cell(&self, policy: Policy, budget_s: f64, seed: u64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.policy == policy && c.budget_s == budget_s && c.seed == seed)
    }

    pub fn median_loss(&self, policy: Policy, budget_s: f64) -> Option<f64> {
        median(
            self.cells
                .iter()
                .filter(|c| c.policy == policy && c.budget_s == budget_s)
                .map(|c| c.final_loss)
                .collect(),
        )
    }

    /// `(seed, HA loss - HU loss)` for every seed run under both policies.
    pub fn deltas(&self, budget_s: f64) -> Vec<(u64, f64)> {
        self.cells
            .iter()
            .filter(|c| c.policy == Policy::HA && c.budget_s == budget_s)
            .filter_map(|ha| {
                self.cell(Policy::HU, budget_s, ha.seed)
                    .map(|hu| (ha.seed, ha.final_loss - hu.final_loss))
            })
            .collect()
    }

    /// Share of paired seeds where HA ends at or below HU.
    pub fn ha_win_fraction(&self, budget_s: f64) -> Option<f64> {
        let d = self.deltas(budget_s);
        if d.is_empty() {
            return None;
        }
        Some(d.iter().filter(|(_, x)| *x <= 0.0).count() as f64 / d.len() as f64)
    }
}

pub fn round_log_name(policy: Policy, budget_s: f64, seed: u64) -> String {
    format!("{policy}_T{budget_s}_seed{seed}.csv")
}

fn opt_to_string(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join_batches(b: &[u64]) -> String {
    b.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

fn write_round_rows<W: std::io::Write>(w: &mut csv::Writer<W>, logs: &[RoundLog]) -> Result<()> {
    w.write_record(ROUND_HEADER)?;
    for l in logs {
        w.write_record([
            l.g.to_string(),
            l.tau.to_string(),
            l.total_updates.to_string(),
            l.max_time_s.to_string(),
            l.beta.to_string(),
            l.delta.to_string(),
            l.global_loss.to_string(),
            opt_to_string(l.bound),
            l.tau_star.to_string(),
            join_batches(&l.batches),
            l.beta_fallback.to_string(),
            l.beta_clamped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Round logs as CSV, one row per global cycle.
pub fn write_round_log(path: &Path, logs: &[RoundLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    write_round_rows(&mut w, logs)
}

pub fn round_log_to_string(logs: &[RoundLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_round_rows(&mut w, logs)?;
    let bytes = w
        .into_inner()
        .map_err(|e| MelError::Io(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| MelError::Io(e.to_string()))
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    i: usize,
    what: &str,
    path: &Path,
) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        MelError::Io(format!(
            "{}: line {}: cannot parse {what} from {raw:?}",
            path.display(),
            rec.position().map_or(0, |p| p.line())
        ))
    })
}

fn opt_field(rec: &csv::StringRecord, i: usize, what: &str, path: &Path) -> Result<Option<f64>> {
    match rec.get(i) {
        Some("") | None => Ok(None),
        Some(_) => field(rec, i, what, path).map(Some),
    }
}

fn check_header(rdr: &mut csv::Reader<fs::File>, expected: &[&str], path: &Path) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(MelError::Io(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

pub fn read_round_log(path: &Path) -> Result<Vec<RoundLog>> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(&mut rdr, &ROUND_HEADER, path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let batches_raw = rec.get(9).unwrap_or("");
        let batches = if batches_raw.is_empty() {
            Vec::new()
        } else {
            batches_raw
                .split(';')
                .map(|b| {
                    b.parse()
                        .map_err(|_| MelError::Io(format!("{}: bad batch {b:?}", path.display())))
                })
                .collect::<Result<_>>()?
        };
        out.push(RoundLog {
            g: field(&rec, 0, "g", path)?,
            tau: field(&rec, 1, "tau", path)?,
            total_updates: field(&rec, 2, "L", path)?,
            max_time_s: field(&rec, 3, "max_time_s", path)?,
            beta: field(&rec, 4, "beta", path)?,
            delta: field(&rec, 5, "delta", path)?,
            global_loss: field(&rec, 6, "global_loss", path)?,
            bound: opt_field(&rec, 7, "bound", path)?,
            tau_star: field(&rec, 8, "tau_star", path)?,
            batches,
            beta_fallback: field(&rec, 10, "beta_fallback", path)?,
            beta_clamped: field(&rec, 11, "beta_clamped", path)?,
        });
    }
    Ok(out)
}

/// Paper-style table: median final loss per budget and policy.
pub fn loss_table(report: &ExperimentReport) -> String {
    let policies = report.policies();
    let mut out = String::from("# median final training loss over seeds\n");
    out.push_str(&format!("{:>10}", "T"));
    for p in &policies {
        out.push_str(&format!("{:>14}", p.to_string()));
    }
    let paired = policies.contains(&Policy::HA) && policies.contains(&Policy::HU);
    if paired {
        out.push_str(&format!("{:>14}{:>14}", "HA-HU", "HA<=HU"));
    }
    out.push('\n');
    for t in report.budgets() {
        out.push_str(&format!("{t:>10}"));
        for &p in &policies {
            let cell = report
                .median_loss(p, t)
                .map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!("{cell:>14}"));
        }
        if paired {
            let gap = match (
                report.median_loss(Policy::HA, t),
                report.median_loss(Policy::HU, t),
            ) {
                (Some(a), Some(b)) => format!("{:.6}", a - b),
                _ => "-".into(),
            };
            let wins = report
                .ha_win_fraction(t)
                .map_or_else(|| "-".to_string(), |f| format!("{:.0}%", 100.0 * f));
            out.push_str(&format!("{gap:>14}{wins:>14}"));
        }
        out.push('\n');
    }
    out
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub cells: PathBuf,
    pub table: PathBuf,
    pub rounds_dir: PathBuf,
}

pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<ReportFiles> {
    let rounds_dir = dir.join("rounds");
    fs::create_dir_all(&rounds_dir)
        .map_err(|e| MelError::Io(format!("cannot create {}: {e}", rounds_dir.display())))?;
    let files = ReportFiles {
        summary: dir.join("summary.csv"),
        cells: dir.join("cells.csv"),
        table: dir.join("loss_vs_T.txt"),
        rounds_dir,
    };

    let mut summary = csv::Writer::from_path(&files.summary)?;
    summary.write_record(SUMMARY_HEADER)?;
    let mut cells = csv::Writer::from_path(&files.cells)?;
    cells.write_record(CELLS_HEADER)?;
    for c in &report.cells {
        let (p, t, s) = (
            c.policy.to_string(),
            c.budget_s.to_string(),
            c.seed.to_string(),
        );
        summary.write_record([
            &p,
            &t,
            &s,
            &c.final_loss.to_string(),
            &c.rounds.to_string(),
            &c.total_time.to_string(),
        ])?;
        cells.write_record([&p, &t, &s, &opt_to_string(c.accuracy), &c.status])?;
        write_round_log(
            &files
                .rounds_dir
                .join(round_log_name(c.policy, c.budget_s, c.seed)),
            &c.logs,
        )?;
    }
    summary.flush()?;
    cells.flush()?;
    fs::write(&files.table, loss_table(report))
        .map_err(|e| MelError::Io(format!("cannot write {}: {e}", files.table.display())))?;
    Ok(files)
}

/// Rebuild a report from the files of [`emit_report`].
pub fn read_report(dir: &Path) -> Result<ExperimentReport> {
    let summary_path = dir.join("summary.csv");
    let cells_path = dir.join("cells.csv");
    let mut summary = csv::Reader::from_path(&summary_path)?;
    check_header(&mut summary, &SUMMARY_HEADER, &summary_path)?;
    let mut extra = csv::Reader::from_path(&cells_path)?;
    check_header(&mut extra, &CELLS_HEADER, &cells_path)?;
    let mut out = ExperimentReport::default();
    for (rec, ext) in summary.records().zip(extra.records()) {
        let (rec, ext) = (rec?, ext?);
        let policy: Policy = field(&rec, 0, "policy", &summary_path)?;
        let budget_s: f64 = field(&rec, 1, "T", &summary_path)?;
        let seed: u64 = field(&rec, 2, "seed", &summary_path)?;
        out.cells.push(CellResult {
            policy,
            budget_s,
            seed,
            final_loss: field(&rec, 3, "final_loss", &summary_path)?,
            rounds: field(&rec, 4, "rounds", &summary_path)?,
            total_time: field(&rec, 5, "total_time", &summary_path)?,
            accuracy: opt_field(&ext, 3, "accuracy", &cells_path)?,
            status: ext.get(4).unwrap_or("").to_string(),
            logs: read_round_log(
                &dir.join("rounds")
                    .join(round_log_name(policy, budget_s, seed)),
            )?,
        });
    }
    Ok(out)
}
