//! Post-run summaries: phase timings and CSV bundles for plotting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::csv_err;

/// Wall time of one phase. `sequential_s` is the sum of per-job times for
/// phases that fan out, and equals `wall_s` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub phase: String,
    pub wall_s: f64,
    pub sequential_s: f64,
    pub workers: usize,
}

/// Phases counted on each side of the ND/KD comparison.
pub const ND_PHASES: [&str; 3] = ["cache", "distill", "finetune"];
pub const KD_PHASES: [&str; 1] = ["kd-baseline"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub sequential_total_s: f64,
    pub parallel_total_s: f64,
    /// ND phases with every job run one after another.
    pub nd_total_s: f64,
    pub kd_total_s: f64,
    /// `nd_total_s / kd_total_s`, when both sides were run.
    pub nd_kd_ratio: Option<f64>,
}

pub fn timing_report(rows: &[TimingRow]) -> TimingReport {
    let sum = |names: &[&str]| -> Option<f64> {
        let hits: Vec<f64> = rows
            .iter()
            .filter(|r| names.contains(&r.phase.as_str()))
            .map(|r| r.sequential_s)
            .collect();
        (!hits.is_empty()).then(|| hits.iter().sum())
    };
    let nd = sum(&ND_PHASES);
    let kd = sum(&KD_PHASES);
    TimingReport {
        rows: rows.to_vec(),
        sequential_total_s: rows.iter().map(|r| r.sequential_s).sum(),
        parallel_total_s: rows.iter().map(|r| r.wall_s).sum(),
        nd_total_s: nd.unwrap_or(0.0),
        kd_total_s: kd.unwrap_or(0.0),
        nd_kd_ratio: match (nd, kd) {
            (Some(n), Some(k)) if k > 0.0 => Some(n / k),
            _ => None,
        },
    }
}

pub fn write_timing(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timing(path: &Path) -> Result<Vec<TimingRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|x| x.map_err(csv_err)).collect()
}

impl TimingReport {
    /// Per-phase rows followed by the totals.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["phase", "wall_s", "sequential_s", "workers"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.phase.clone(),
                r.wall_s.to_string(),
                r.sequential_s.to_string(),
                r.workers.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.write_record([
            "total".to_string(),
            self.parallel_total_s.to_string(),
            self.sequential_total_s.to_string(),
            String::new(),
        ])
        .map_err(csv_err)?;
        w.write_record([
            "nd_total".to_string(),
            String::new(),
            self.nd_total_s.to_string(),
            String::new(),
        ])
        .map_err(csv_err)?;
        w.write_record([
            "kd_total".to_string(),
            String::new(),
            self.kd_total_s.to_string(),
            String::new(),
        ])
        .map_err(csv_err)?;
        w.write_record([
            "nd_kd_ratio".to_string(),
            String::new(),
            self.nd_kd_ratio.map(|x| x.to_string()).unwrap_or_default(),
            String::new(),
        ])
        .map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FigureKind {
    /// Accuracy against ε, one series per affected set.
    Threshold,
    /// Accuracy against parameter count.
    Pareto,
    /// Cumulative against additive drop per prefix length.
    Accumulation,
    /// Partial accuracy of each distilled unit against k.
    Units,
    /// Accuracy against parameter count for sparse students.
    Sparsity,
}

impl FigureKind {
    pub const ALL: [FigureKind; 5] = [
        FigureKind::Threshold,
        FigureKind::Pareto,
        FigureKind::Accumulation,
        FigureKind::Units,
        FigureKind::Sparsity,
    ];
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(String::from)
            .collect();
        let rows = r
            .records()
            .map(|x| {
                x.map(|r| r.iter().map(String::from).collect())
                    .map_err(csv_err)
            })
            .collect::<Result<_>>()?;
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str, path: &Path) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("missing column {name}"),
            })
    }

    fn write(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn num(s: &str, path: &Path) -> Result<f64> {
    s.parse().map_err(|_| Error::Corrupt {
        path: path.to_path_buf(),
        reason: format!("not a number: {s:?}"),
    })
}

/// Writes the bundle for `kind` from the artifacts in `run` into `dest`.
/// Returns the files written; empty when the run has no matching artifact.
pub fn figure_data(kind: FigureKind, run: &Path, dest: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dest)?;
    match kind {
        FigureKind::Threshold => threshold_bundle(run, dest),
        FigureKind::Pareto => {
            sorted_by_params(&run.join("pareto.csv"), &dest.join("pareto_sorted.csv"))
        }
        FigureKind::Sparsity => {
            sorted_by_params(&run.join("sparsity.csv"), &dest.join("sparsity_sorted.csv"))
        }
        FigureKind::Accumulation => accumulation_bundle(run, dest),
        FigureKind::Units => units_bundle(run, dest),
    }
}

fn threshold_bundle(run: &Path, dest: &Path) -> Result<Vec<PathBuf>> {
    let src = run.join("sweep.csv");
    if !src.exists() {
        return Ok(Vec::new());
    }
    let t = Table::read(&src)?;
    let (ids, count, eps, mean, sd, base) = (
        t.col("affected_ids", &src)?,
        t.col("affected_count", &src)?,
        t.col("epsilon", &src)?,
        t.col("acc_mean", &src)?,
        t.col("acc_sd", &src)?,
        t.col("baseline_acc", &src)?,
    );
    let mut series: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    for r in &t.rows {
        let delta = num(&r[mean], &src)? - num(&r[base], &src)?;
        series.entry(r[ids].clone()).or_default().push(vec![
            r[count].clone(),
            r[eps].clone(),
            r[mean].clone(),
            r[sd].clone(),
            delta.to_string(),
        ]);
    }
    let mut out = Vec::new();
    for (ids, mut rows) in series {
        rows.sort_by(|a, b| {
            num(&a[1], &src)
                .unwrap_or(0.0)
                .total_cmp(&num(&b[1], &src).unwrap_or(0.0))
        });
        let p = dest.join(format!("threshold_{}.csv", ids.replace(';', "-")));
        Table::write(
            &p,
            &[
                "affected_count",
                "epsilon",
                "acc_mean",
                "acc_sd",
                "delta_acc",
            ],
            &rows,
        )?;
        out.push(p);
    }
    Ok(out)
}

fn sorted_by_params(src: &Path, p: &Path) -> Result<Vec<PathBuf>> {
    if !src.exists() {
        return Ok(Vec::new());
    }
    let mut t = Table::read(src)?;
    let c = t.col("total_params", src)?;
    let mut keyed = Vec::with_capacity(t.rows.len());
    for r in t.rows.drain(..) {
        keyed.push((num(&r[c], src)?, r));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rows: Vec<Vec<String>> = keyed.into_iter().map(|(_, r)| r).collect();
    let header: Vec<&str> = t.header.iter().map(String::as_str).collect();
    Table::write(p, &header, &rows)?;
    Ok(vec![p.to_path_buf()])
}

fn accumulation_bundle(run: &Path, dest: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut sources: Vec<PathBuf> = match std::fs::read_dir(run) {
        Ok(d) => d
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("accumulation_") && n.ends_with(".csv"))
            })
            .collect(),
        Err(_) => return Ok(out),
    };
    sources.sort();
    for src in sources {
        let t = Table::read(&src)?;
        let (len, ind, cum) = (
            t.col("prefix_len", &src)?,
            t.col("individual_drop", &src)?,
            t.col("cumulative_drop", &src)?,
        );
        let mut running = 0.0;
        let mut rows = Vec::with_capacity(t.rows.len());
        for r in &t.rows {
            running += num(&r[ind], &src)?;
            rows.push(vec![r[len].clone(), r[cum].clone(), running.to_string()]);
        }
        let p = dest.join(src.file_name().expect("listed file"));
        Table::write(
            &p,
            &["prefix_len", "cumulative_drop", "additive_prediction"],
            &rows,
        )?;
        out.push(p);
    }
    Ok(out)
}

fn units_bundle(run: &Path, dest: &Path) -> Result<Vec<PathBuf>> {
    let src = run.join("metrics.csv");
    if !src.exists() {
        return Ok(Vec::new());
    }
    let rows: Vec<Vec<String>> = super::metrics::read_metrics(&src)?
        .into_iter()
        .filter(|r| r.phase == "distill" && r.accuracy.is_some() && r.step.is_none())
        .map(|r| {
            vec![
                r.neighbourhood_id
                    .map(|x| x.to_string())
                    .unwrap_or_default(),
                r.k.map(|x| x.to_string()).unwrap_or_default(),
                r.params.map(|x| x.to_string()).unwrap_or_default(),
                r.accuracy.map(|x| x.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let p = dest.join("units.csv");
    Table::write(
        &p,
        &["neighbourhood_id", "k", "params", "partial_accuracy"],
        &rows,
    )?;
    Ok(vec![p])
}
