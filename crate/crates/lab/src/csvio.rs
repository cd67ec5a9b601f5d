//! CSV artifacts: event intervals, scores, confusion and concurrency tables,
//! sweep grids, comparison tables and tidy plot data.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use crst_core::evalkit::{ClassScore, ConcurrencyTable, Counts, ScoreReport};
use crst_core::postproc::{EventInterval, SweepPoint};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

fn csv_err(path: &Path, e: csv::Error) -> LabError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::Io(_) => LabError::Data(format!("{}: {e}", path.display())),
        _ => LabError::parse(path, line, e.to_string()),
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Rows with the line number each came from.
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: T = rec.deserialize(Some(&headers)).map_err(|e| LabError::parse(path, line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub clip_id: String,
    pub class: usize,
    pub onset: f64,
    pub offset: f64,
}

/// Events grouped by clip id.
pub type ClipEvents = BTreeMap<String, Vec<EventInterval>>;

pub fn write_intervals(path: &Path, events: &ClipEvents) -> Result<()> {
    let rows = events.iter().flat_map(|(id, evs)| {
        evs.iter().map(move |e| IntervalRow { clip_id: id.clone(), class: e.class, onset: e.onset, offset: e.offset })
    });
    write_rows(path, rows)
}

pub fn read_intervals(path: &Path) -> Result<ClipEvents> {
    let mut out = ClipEvents::new();
    for (line, r) in read_rows::<IntervalRow>(path)? {
        let e = EventInterval::new(r.class, r.onset, r.offset).map_err(|e| LabError::parse(path, line, e.to_string()))?;
        out.entry(r.clip_id).or_default().push(e);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub class: String,
    pub tp: Option<u64>,
    pub fp: Option<u64>,
    #[serde(rename = "fn")]
    pub fn_: Option<u64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_score: f64,
}

pub const MACRO_ROW: &str = "macro";

pub fn write_scores(path: &Path, report: &ScoreReport) -> Result<()> {
    let mut rows: Vec<ScoreRow> = report
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| ScoreRow {
            class: i.to_string(),
            tp: Some(c.counts.tp),
            fp: Some(c.counts.fp),
            fn_: Some(c.counts.fn_),
            precision: Some(c.precision),
            recall: Some(c.recall),
            f_score: c.f_score,
        })
        .collect();
    rows.push(ScoreRow { class: MACRO_ROW.into(), tp: None, fp: None, fn_: None, precision: None, recall: None, f_score: report.macro_f });
    write_rows(path, rows)
}

pub fn read_scores(path: &Path) -> Result<ScoreReport> {
    let mut classes = Vec::new();
    let mut macro_f = None;
    for (line, r) in read_rows::<ScoreRow>(path)? {
        if r.class == MACRO_ROW {
            macro_f = Some(r.f_score);
            continue;
        }
        let missing = || LabError::parse(path, line, "class row needs tp, fp, fn, precision and recall");
        classes.push(ClassScore {
            counts: Counts { tp: r.tp.ok_or_else(missing)?, fp: r.fp.ok_or_else(missing)?, fn_: r.fn_.ok_or_else(missing)? },
            precision: r.precision.ok_or_else(missing)?,
            recall: r.recall.ok_or_else(missing)?,
            f_score: r.f_score,
        });
    }
    let macro_f = macro_f.ok_or_else(|| LabError::Data(format!("{}: no '{MACRO_ROW}' row", path.display())))?;
    Ok(ScoreReport { classes, macro_f })
}

/// Rows are reference classes; columns the matched detection class, then `missed`.
pub fn write_confusion(path: &Path, m: &[Vec<u64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let n = m.len();
    let mut header = vec!["reference".to_string()];
    header.extend((0..n).map(|c| format!("detected_{c}")));
    header.push("missed".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, row) in m.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_confusion(path: &Path) -> Result<Vec<Vec<u64>>> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let width = r.headers().map_err(|e| csv_err(path, e))?.len();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(LabError::parse(path, line, format!("expected {width} fields, found {}", rec.len())));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<u64>().map_err(|e| LabError::parse(path, line, format!("'{v}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcurrencyRow {
    pub class: String,
    pub pct_k1: f64,
    pub pct_k2: f64,
    pub pct_k3plus: f64,
    pub n_k1: Option<u64>,
    pub n_k2: Option<u64>,
    pub n_k3plus: Option<u64>,
}

pub fn write_concurrency(path: &Path, t: &ConcurrencyTable) -> Result<()> {
    let mut rows: Vec<ConcurrencyRow> = t
        .per_class
        .iter()
        .zip(&t.per_class_counts)
        .enumerate()
        .map(|(i, (p, n))| ConcurrencyRow {
            class: i.to_string(),
            pct_k1: p[0],
            pct_k2: p[1],
            pct_k3plus: p[2],
            n_k1: Some(n[0]),
            n_k2: Some(n[1]),
            n_k3plus: Some(n[2]),
        })
        .collect();
    rows.push(ConcurrencyRow {
        class: "total".into(),
        pct_k1: t.total[0],
        pct_k2: t.total[1],
        pct_k3plus: t.total[2],
        n_k1: None,
        n_k2: None,
        n_k3plus: None,
    });
    write_rows(path, rows)
}

pub fn read_concurrency(path: &Path) -> Result<Vec<ConcurrencyRow>> {
    Ok(read_rows(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_sweep(path: &Path, points: &[SweepPoint]) -> Result<()> {
    write_rows(path, points)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepPoint>> {
    Ok(read_rows(path)?.into_iter().map(|(_, r)| r).collect())
}

/// One line of a variant comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    /// Percent, as `"mean ± std"` with two decimals.
    pub summary: String,
    pub welch_t: Option<f64>,
    pub welch_df: Option<f64>,
    pub p_value: Option<f64>,
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_comparison(path: &Path) -> Result<Vec<ComparisonRow>> {
    Ok(read_rows(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Tidy plot data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub step: u64,
    pub series: String,
    pub value: f64,
}

pub fn write_plot(path: &Path, rows: &[PlotRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_plot(path: &Path) -> Result<Vec<PlotRow>> {
    Ok(read_rows(path)?.into_iter().map(|(_, r)| r).collect())
}
