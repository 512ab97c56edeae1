//! `trace.csv` and `report.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{ProbeReport, Task, TraceRecord, TrainTrace};

pub const TRACE_HEADER: &str = "epoch,loss,align,uniform,seconds";

/// `%g`-style formatting with 6 significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_owned()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn render_trace(trace: &TrainTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            format_sig6(r.loss),
            format_sig6(r.align),
            format_sig6(r.uniform),
            format_sig6(r.seconds)
        )
        .unwrap();
    }
    out
}

pub fn write_trace(trace: &TrainTrace, path: &Path) -> Result<()> {
    if trace.records.is_empty() {
        return Err(Error::Schema("refusing to write an empty trace".into()));
    }
    fs::write(path, render_trace(trace)).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<TrainTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, TRACE_HEADER)) => {}
        _ => return Err(Error::at(path, 1, format!("expected header {TRACE_HEADER:?}"))),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let bad = |msg: String| Error::at(path, i + 1, msg);
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", cells.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("cannot parse {s:?}")));
        records.push(TraceRecord {
            epoch: cells[0]
                .parse()
                .map_err(|_| bad(format!("cannot parse epoch {:?}", cells[0])))?,
            loss: num(cells[1])?,
            align: num(cells[2])?,
            uniform: num(cells[3])?,
            seconds: num(cells[4])?,
        });
    }
    Ok(TrainTrace { records })
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: Task,
    /// downstream classifier trained on the frozen embeddings
    pub classifier: String,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub runs: usize,
    pub folds: Option<usize>,
    pub accuracies: Vec<f64>,
    pub resolved_config: serde_json::Value,
}

impl Report {
    pub fn new(task: Task, probe: &ProbeReport, resolved_config: serde_json::Value) -> Self {
        Report {
            task,
            classifier: "multinomial_logistic_regression".into(),
            accuracy_mean: probe.accuracy_mean,
            accuracy_std: probe.accuracy_std,
            runs: probe.runs,
            folds: probe.folds,
            accuracies: probe.accuracies.clone(),
            resolved_config,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
