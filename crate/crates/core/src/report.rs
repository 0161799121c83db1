//! CSV artifacts: ledger dumps, per-region metrics, scatter data and the
//! hard-sample ranking. Header row, LF endings, floats to six significant
//! digits except the HD95 penalty, which is written exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{Region, RegionReport, HD95_PENALTY};
use crate::scheduler::{EpochLoss, HardSampleReport, Ledger, LedgerEntry, Phase};

pub const LEDGER_HEADER: &str = "batch_id,patient_id,last_loss,train_count";
pub const METRICS_HEADER: &str = "patient_id,region,dice,hd95,penalty_applied";
pub const PID_VS_DICE_HEADER: &str = "patient_id,avg_dice";
pub const PID_VS_COUNT_HEADER: &str = "patient_id,train_count_sum";
pub const HARD_SAMPLES_HEADER: &str = "rank,patient_id,train_count_sum,mean_last_loss";
pub const EPOCH_LOSS_HEADER: &str = "epoch,phase,mean_loss,trainings";

/// Patient id used for the aggregate row of a metrics file.
pub const MEAN_ROW_ID: &str = "mean";
pub const MEAN_ROW_REGION: &str = "ALL";

/// `%.6g`-style formatting; [`HD95_PENALTY`] is written as `373.12866`.
pub fn fmt_float(x: f64) -> String {
    if x == HD95_PENALTY {
        return "373.12866".to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
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

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Data rows of a CSV after checking its header.
fn data_rows<'a>(text: &'a str, header: &str, what: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == header => {}
        other => {
            return Err(Error::Data(format!(
                "{what}: expected header {header:?}, found {:?}",
                other.map(|(_, h)| h).unwrap_or("")
            )))
        }
    }
    let n_cols = header.split(',').count();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cols: Vec<&str> = l.trim_end_matches('\r').split(',').collect();
            if cols.len() != n_cols {
                return Err(Error::Data(format!(
                    "{what} line {}: expected {n_cols} columns, found {}",
                    i + 1,
                    cols.len()
                )));
            }
            Ok((i + 1, cols))
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Data(format!("{what} line {line}: cannot parse {s:?}")))
}

pub fn ledger_csv(ledger: &Ledger) -> String {
    let mut out = format!("{LEDGER_HEADER}\n");
    for e in ledger.entries() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.batch_id,
            e.patient_id,
            fmt_float(e.last_loss),
            e.train_count
        );
    }
    out
}

pub fn parse_ledger_csv(text: &str) -> Result<Ledger> {
    let rows = data_rows(text, LEDGER_HEADER, "ledger")?;
    let entries = rows
        .into_iter()
        .map(|(line, c)| {
            Ok(LedgerEntry {
                batch_id: parse_num(c[0], "ledger", line)?,
                patient_id: c[1].to_string(),
                last_loss: parse_num(c[2], "ledger", line)?,
                train_count: parse_num(c[3], "ledger", line)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if entries.is_empty() {
        return Err(Error::Data("ledger has no rows".into()));
    }
    Ok(Ledger::from_entries(entries))
}

pub fn write_ledger_csv(path: &Path, ledger: &Ledger) -> Result<()> {
    write_text(path, &ledger_csv(ledger))
}

pub fn read_ledger_csv(path: &Path) -> Result<Ledger> {
    parse_ledger_csv(&read_text(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub patient_id: String,
    pub region: Region,
    pub dice: f64,
    pub hd95: f64,
    pub penalty_applied: bool,
}

/// One row per patient and region, then a mean row over all of them.
pub fn metrics_csv(reports: &[(String, RegionReport)]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    let (mut dice_sum, mut hd_sum, mut any_penalty, mut n) = (0.0, 0.0, false, 0usize);
    for (id, report) in reports {
        for s in &report.scores {
            let _ = writeln!(
                out,
                "{id},{},{},{},{}",
                s.region,
                fmt_float(s.dice),
                fmt_float(s.hd95),
                s.penalty_applied
            );
            dice_sum += s.dice;
            hd_sum += s.hd95;
            any_penalty |= s.penalty_applied;
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    let _ = writeln!(
        out,
        "{MEAN_ROW_ID},{MEAN_ROW_REGION},{},{},{any_penalty}",
        fmt_float(dice_sum / n),
        fmt_float(hd_sum / n)
    );
    out
}

/// Per-patient rows; the mean row is skipped.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let rows = data_rows(text, METRICS_HEADER, "metrics")?;
    rows.into_iter()
        .filter(|(_, c)| !(c[0] == MEAN_ROW_ID && c[1] == MEAN_ROW_REGION))
        .map(|(line, c)| {
            let region = Region::parse(c[1]).ok_or_else(|| {
                Error::Data(format!("metrics line {line}: unknown region {:?}", c[1]))
            })?;
            Ok(MetricsRow {
                patient_id: c[0].to_string(),
                region,
                dice: parse_num(c[2], "metrics", line)?,
                hd95: parse_num(c[3], "metrics", line)?,
                penalty_applied: parse_num(c[4], "metrics", line)?,
            })
        })
        .collect()
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    parse_metrics_csv(&read_text(path)?)
}

/// `(ET + WT + TC) / 3 × 100` per patient, sorted by patient id.
pub fn average_dice_by_patient(rows: &[MetricsRow]) -> Result<BTreeMap<String, f64>> {
    let mut by_patient: BTreeMap<&str, [Option<f64>; 3]> = BTreeMap::new();
    for r in rows {
        let slot = Region::ALL
            .iter()
            .position(|&x| x == r.region)
            .expect("known region");
        let entry = by_patient.entry(&r.patient_id).or_default();
        if entry[slot].replace(r.dice).is_some() {
            return Err(Error::Data(format!(
                "duplicate {} row for {}",
                r.region, r.patient_id
            )));
        }
    }
    by_patient
        .into_iter()
        .map(|(id, d)| match d {
            [Some(a), Some(b), Some(c)] => Ok((id.to_string(), (a + b + c) / 3.0 * 100.0)),
            _ => Err(Error::Data(format!("patient {id} is missing a region row"))),
        })
        .collect()
}

pub fn pid_vs_dice_csv(avg: &BTreeMap<String, f64>) -> String {
    let mut out = format!("{PID_VS_DICE_HEADER}\n");
    for (id, v) in avg {
        let _ = writeln!(out, "{id},{}", fmt_float(*v));
    }
    out
}

/// Summed train counts per patient, sorted by patient id.
pub fn count_by_patient(ledger: &Ledger) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for e in ledger.entries() {
        *counts.entry(e.patient_id.clone()).or_insert(0) += e.train_count;
    }
    counts
}

pub fn pid_vs_count_csv(counts: &BTreeMap<String, u64>) -> String {
    let mut out = format!("{PID_VS_COUNT_HEADER}\n");
    for (id, c) in counts {
        let _ = writeln!(out, "{id},{c}");
    }
    out
}

pub fn hard_samples_csv(report: &HardSampleReport) -> String {
    let mut out = format!("{HARD_SAMPLES_HEADER}\n");
    for (i, r) in report.rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            i + 1,
            r.patient_id,
            r.train_count,
            fmt_float(r.mean_last_loss)
        );
    }
    out
}

pub fn epoch_loss_csv(losses: &[EpochLoss]) -> String {
    let mut out = format!("{EPOCH_LOSS_HEADER}\n");
    for e in losses {
        let phase = match e.phase {
            Phase::Regular => "regular",
            Phase::Dynamic => "dynamic",
        };
        let _ = writeln!(
            out,
            "{},{phase},{},{}",
            e.epoch,
            fmt_float(e.mean_loss),
            e.trainings
        );
    }
    out
}
