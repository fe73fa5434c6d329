//! `metrics.csv`: one row per heartbeat or phase result, flushed as written.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::csv_err;

pub const METRICS_HEADER: [&str; 11] = [
    "experiment_id",
    "phase",
    "step",
    "wall_time_s",
    "loss",
    "accuracy",
    "epsilon",
    "neighbourhood_id",
    "k",
    "sparsity",
    "params",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment_id: String,
    pub phase: String,
    pub step: Option<usize>,
    pub wall_time_s: Option<f64>,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub epsilon: Option<f64>,
    pub neighbourhood_id: Option<usize>,
    pub k: Option<f64>,
    pub sparsity: Option<f64>,
    pub params: Option<usize>,
}

impl MetricRow {
    pub fn new(experiment_id: &str, phase: &str) -> Self {
        MetricRow {
            experiment_id: experiment_id.to_string(),
            phase: phase.to_string(),
            ..MetricRow::default()
        }
    }

    fn fields(&self) -> [String; 11] {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.experiment_id.clone(),
            self.phase.clone(),
            opt(self.step),
            opt(self.wall_time_s),
            opt(self.loss),
            opt(self.accuracy),
            opt(self.epsilon),
            opt(self.neighbourhood_id),
            opt(self.k),
            opt(self.sparsity),
            opt(self.params),
        ]
    }

    fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("wall_time_s", self.wall_time_s),
            ("loss", self.loss),
            ("accuracy", self.accuracy),
            ("epsilon", self.epsilon),
            ("k", self.k),
            ("sparsity", self.sparsity),
        ] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "metric {name} of phase {} is {v}",
                        self.phase
                    )));
                }
            }
        }
        Ok(())
    }
}

pub struct MetricsWriter {
    w: csv::Writer<File>,
    record_wall_time: bool,
}

impl MetricsWriter {
    /// Creates the file and writes the header. Wall times are blanked unless
    /// `record_wall_time` is set, so reruns produce identical files.
    pub fn create(path: &Path, record_wall_time: bool) -> Result<Self> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(METRICS_HEADER).map_err(csv_err)?;
        w.flush()?;
        Ok(MetricsWriter {
            w,
            record_wall_time,
        })
    }

    pub fn write(&mut self, row: &MetricRow) -> Result<()> {
        row.check_finite()?;
        let mut fields = row.fields();
        if !self.record_wall_time {
            fields[3].clear();
        }
        self.w.write_record(&fields).map_err(csv_err)?;
        self.w.flush()?;
        Ok(())
    }
}

fn parse_opt<T: std::str::FromStr>(s: &str, column: &str) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::invalid(format!("metrics column {column}: cannot parse {s:?}")))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(String::from)
        .collect();
    if header != METRICS_HEADER {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("unexpected metrics header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(MetricRow {
            experiment_id: f(0).to_string(),
            phase: f(1).to_string(),
            step: parse_opt(f(2), "step")?,
            wall_time_s: parse_opt(f(3), "wall_time_s")?,
            loss: parse_opt(f(4), "loss")?,
            accuracy: parse_opt(f(5), "accuracy")?,
            epsilon: parse_opt(f(6), "epsilon")?,
            neighbourhood_id: parse_opt(f(7), "neighbourhood_id")?,
            k: parse_opt(f(8), "k")?,
            sparsity: parse_opt(f(9), "sparsity")?,
            params: parse_opt(f(10), "params")?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_roundtrip_and_header_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&p, true).unwrap();
        let row = MetricRow {
            step: Some(3),
            loss: Some(0.25),
            wall_time_s: Some(1.5),
            k: Some(0.5),
            ..MetricRow::new("e", "distill")
        };
        w.write(&row).unwrap();
        // readable while the writer is still open
        assert_eq!(read_metrics(&p).unwrap(), vec![row]);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "experiment_id,phase,step,wall_time_s,loss,accuracy,epsilon,neighbourhood_id,k,sparsity,params"
        );
    }

    #[test]
    fn non_finite_values_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(&dir.path().join("m.csv"), false).unwrap();
        let row = MetricRow {
            loss: Some(f64::NAN),
            ..MetricRow::new("e", "x")
        };
        assert!(w.write(&row).is_err());
    }

    #[test]
    fn wall_time_blanked_by_default() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&p, false).unwrap();
        w.write(&MetricRow {
            wall_time_s: Some(2.0),
            ..MetricRow::new("e", "x")
        })
        .unwrap();
        assert_eq!(read_metrics(&p).unwrap()[0].wall_time_s, None);
    }
}
