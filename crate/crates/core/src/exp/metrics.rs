//! Per-round metrics rows and their CSV codec.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// 1-based round index `t`.
    pub round: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub latency: f64,
    pub disparity: f64,
    pub reward: f64,
    /// `Reg_t`; NaN when no comparator was fitted.
    pub cum_regret: f64,
    pub iterations: Vec<usize>,
}

const FIXED: [&str; 8] = [
    "round",
    "train_loss",
    "test_loss",
    "test_acc",
    "latency",
    "disparity",
    "reward",
    "cum_regret",
];

pub fn header(sensors: usize) -> Vec<String> {
    FIXED
        .iter()
        .map(|s| s.to_string())
        .chain((1..=sensors).map(|k| format!("E_{k}")))
        .collect()
}

/// Rounds to 9 significant digits and prints the shortest positional
/// decimal that parses back to the rounded value.
pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("scientific literal parses");
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

fn parse_value(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Input(format!("{}:{line}: bad number {s:?}", path.display())))
}

impl MetricsRow {
    pub fn is_finite(&self) -> bool {
        [
            self.train_loss,
            self.test_loss,
            self.test_acc,
            self.latency,
            self.disparity,
            self.reward,
            self.cum_regret,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    fn record(&self) -> Vec<String> {
        let mut out = vec![self.round.to_string()];
        out.extend(
            [
                self.train_loss,
                self.test_loss,
                self.test_acc,
                self.latency,
                self.disparity,
                self.reward,
                self.cum_regret,
            ]
            .iter()
            .map(|&v| format_value(v)),
        );
        out.extend(self.iterations.iter().map(|e| e.to_string()));
        out
    }
}

/// Serializes rows into CSV text; the schema width comes from `sensors`.
pub fn metrics_csv(rows: &[MetricsRow], sensors: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Input(format!("csv encoding failed: {e}"));
    w.write_record(header(sensors)).map_err(csv_err)?;
    for r in rows {
        if r.iterations.len() != sensors {
            return Err(Error::dim(format!(
                "row {} has {} iteration columns, expected {sensors}",
                r.round,
                r.iterations.len()
            )));
        }
        w.write_record(r.record()).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Input(format!("csv flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow], sensors: usize) -> Result<()> {
    let text = metrics_csv(rows, sensors)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let head: Vec<String> = r
        .headers()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let sensors = head.len().saturating_sub(FIXED.len());
    if head != header(sensors) {
        return Err(Error::Input(format!("{}: unexpected header {head:?}", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Input(format!("{}:{line}: {e}", path.display())))?;
        let v = |j: usize| parse_value(&rec[j], path, line);
        let round = rec[0]
            .parse()
            .map_err(|_| Error::Input(format!("{}:{line}: bad round {:?}", path.display(), &rec[0])))?;
        let iterations = (0..sensors)
            .map(|k| {
                rec[FIXED.len() + k]
                    .parse()
                    .map_err(|_| Error::Input(format!("{}:{line}: bad iteration count", path.display())))
            })
            .collect::<Result<Vec<usize>>>()?;
        rows.push(MetricsRow {
            round,
            train_loss: v(1)?,
            test_loss: v(2)?,
            test_acc: v(3)?,
            latency: v(4)?,
            disparity: v(5)?,
            reward: v(6)?,
            cum_regret: v(7)?,
            iterations,
        });
    }
    Ok(rows)
}
