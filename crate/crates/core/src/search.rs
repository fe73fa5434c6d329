//! Student search: score distilled candidates in the partial model, pick
//! the smallest one per unit whose accuracy drop stays within a budget,
//! and report the resulting size/accuracy trade-offs.
//!
//! A unit is a neighbourhood for bottleneck search and a single weight
//! layer for sparsity search.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distill::{
    assemble_layers, compose_students, evaluate, layer_target, prunable_layers, DistillResult,
    Target,
};
use crate::error::{Error, Result};
use crate::network::{accuracy_from_logits, Model, NeighbourhoodSpec};
use crate::perturb::csv_err;
use crate::tensor::Tensor;

/// A trained (or failed) candidate before scoring.
#[derive(Clone, Debug)]
pub struct CandidateOutcome {
    pub target: Target,
    pub k: f64,
    pub s: f64,
    /// `None` when training failed.
    pub result: Option<DistillResult>,
}

impl CandidateOutcome {
    /// The teacher's own neighbourhood `i` as a candidate.
    pub fn teacher_copy(teacher: &Model, i: usize) -> Result<Self> {
        let nb = teacher
            .spec
            .neighbourhoods
            .get(i)
            .ok_or_else(|| Error::invalid(format!("no neighbourhood {i}")))?;
        Ok(CandidateOutcome {
            target: Target::Neighbourhood(i),
            k: 1.0,
            s: 0.0,
            result: Some(DistillResult {
                id: format!("teacher-{i}"),
                target: Target::Neighbourhood(i),
                student: nb.layers.clone(),
                params: teacher.params.neighbourhoods[i].clone(),
                losses: Vec::new(),
                masks: vec![None; nb.layers.len()],
                wall_s: 0.0,
            }),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub unit: usize,
    pub k: f64,
    pub s: f64,
    /// Nonzero trainable parameters of the candidate.
    pub param_count: usize,
    /// Parameters of the teacher unit it replaces.
    pub teacher_params: usize,
    /// Accuracy of the teacher with only this unit replaced, in percent.
    pub partial_accuracy: f64,
    pub failed: bool,
    #[serde(skip)]
    pub result: Option<Arc<DistillResult>>,
}

/// Nonzero trainable parameters: all parameters minus masked-out weights.
pub fn result_param_count(r: &DistillResult) -> usize {
    let total: usize = r.student.iter().map(|l| l.param_count()).sum();
    let pruned: usize = r
        .masks
        .iter()
        .flatten()
        .map(|m| m.iter().filter(|&&keep| !keep).count())
        .sum();
    total - pruned
}

fn unit_teacher_params(teacher: &Model, target: Target) -> Result<usize> {
    Ok(match target {
        Target::Neighbourhood(i) => teacher
            .spec
            .neighbourhoods
            .get(i)
            .ok_or_else(|| Error::invalid(format!("no neighbourhood {i}")))?
            .param_count(),
        Target::Layer { stage, layer } => layer_target(teacher, stage, layer)?.0.param_count(),
    })
}

fn student_spec(teacher: &Model, i: usize, r: &DistillResult) -> Result<NeighbourhoodSpec> {
    let slot = teacher
        .spec
        .neighbourhoods
        .get(i)
        .ok_or_else(|| Error::invalid(format!("no neighbourhood {i}")))?;
    NeighbourhoodSpec::new(i, r.student.clone(), slot.input_shape.clone())
}

fn partial_accuracy(teacher: &Model, r: &DistillResult, eval: &Dataset) -> Result<f64> {
    match r.target {
        Target::Neighbourhood(i) => {
            let spec = student_spec(teacher, i, r)?;
            let n = eval.len();
            let mut parts = Vec::new();
            for start in (0..n).step_by(crate::distill::EVAL_BATCH) {
                let x = eval
                    .images
                    .slice_rows(start, (start + crate::distill::EVAL_BATCH).min(n));
                parts.push(teacher.forward_with_replacement(i, &spec, &r.params, &x)?);
            }
            Ok(accuracy_from_logits(
                &Tensor::concat_rows(&parts)?,
                &eval.labels,
            ))
        }
        Target::Layer { .. } => evaluate(&assemble_layers(teacher, std::slice::from_ref(r))?, eval),
    }
}

/// Scores every outcome in its partial model on `eval` (a validation
/// split). Failed candidates get accuracy 0 and the failed flag.
pub fn evaluate_candidates(
    teacher: &Model,
    outcomes: &[CandidateOutcome],
    eval: &Dataset,
) -> Result<Vec<CandidateRecord>> {
    let layers = prunable_layers(teacher);
    outcomes
        .par_iter()
        .map(|o| {
            let unit = match o.target {
                Target::Neighbourhood(i) => i,
                Target::Layer { stage, layer } => layers
                    .iter()
                    .position(|&p| p == (stage, layer))
                    .ok_or_else(|| {
                        Error::invalid(format!("layer {stage}.{layer} has no weights"))
                    })?,
            };
            let teacher_params = unit_teacher_params(teacher, o.target)?;
            let Some(r) = &o.result else {
                return Ok(CandidateRecord {
                    unit,
                    k: o.k,
                    s: o.s,
                    param_count: 0,
                    teacher_params,
                    partial_accuracy: 0.0,
                    failed: true,
                    result: None,
                });
            };
            if r.target != o.target {
                return Err(Error::invalid(format!(
                    "result {} does not match its candidate slot",
                    r.id
                )));
            }
            Ok(CandidateRecord {
                unit,
                k: o.k,
                s: o.s,
                param_count: result_param_count(r),
                teacher_params,
                partial_accuracy: partial_accuracy(teacher, r, eval)?,
                failed: false,
                result: Some(Arc::new(r.clone())),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Accuracy drop budget in points.
    pub x: f64,
    /// Record index chosen for each unit, in unit order.
    pub selection: Vec<usize>,
    /// Units where no candidate met the budget.
    pub flagged: Vec<bool>,
    /// Parameters of the selected candidates.
    pub total_params: usize,
    /// Parameters of the teacher units they replace.
    pub teacher_unit_params: usize,
    pub acc_pre_ft: Option<f64>,
    pub acc_post_ft: Option<f64>,
}

impl SearchResult {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    /// Whole-network parameter count given the teacher's.
    pub fn network_params(&self, teacher_total: usize) -> usize {
        teacher_total - self.teacher_unit_params + self.total_params
    }
}

/// Record indices grouped by unit; units must be `0..n`, each nonempty.
fn group_by_unit(records: &[CandidateRecord]) -> Result<Vec<Vec<usize>>> {
    let n = records.iter().map(|r| r.unit + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); n];
    for (i, r) in records.iter().enumerate() {
        groups[r.unit].push(i);
    }
    if let Some(u) = groups.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("no candidates for unit {u}")));
    }
    Ok(groups)
}

fn qualifies(r: &CandidateRecord, teacher_accuracy: f64, x: f64) -> bool {
    !r.failed && r.partial_accuracy >= teacher_accuracy - x
}

/// Preference among qualifying candidates: fewer params, then higher
/// accuracy, then lower record index.
fn prefer(records: &[CandidateRecord], a: usize, b: usize) -> Ordering {
    let (ra, rb) = (&records[a], &records[b]);
    ra.param_count
        .cmp(&rb.param_count)
        .then(rb.partial_accuracy.total_cmp(&ra.partial_accuracy))
        .then(a.cmp(&b))
}

/// Fallback preference: higher accuracy, then fewer params, then lower index.
fn prefer_fallback(records: &[CandidateRecord], a: usize, b: usize) -> Ordering {
    let (ra, rb) = (&records[a], &records[b]);
    rb.partial_accuracy
        .total_cmp(&ra.partial_accuracy)
        .then(ra.param_count.cmp(&rb.param_count))
        .then(a.cmp(&b))
}

fn finish(
    records: &[CandidateRecord],
    x: f64,
    selection: Vec<usize>,
    flagged: Vec<bool>,
) -> SearchResult {
    SearchResult {
        x,
        total_params: selection.iter().map(|&i| records[i].param_count).sum(),
        teacher_unit_params: selection.iter().map(|&i| records[i].teacher_params).sum(),
        selection,
        flagged,
        acc_pre_ft: None,
        acc_post_ft: None,
    }
}

/// Per unit, the smallest candidate with `partial_accuracy ≥ teacher − x`;
/// if none qualifies, the most accurate one, flagged.
pub fn greedy_select(
    records: &[CandidateRecord],
    teacher_accuracy: f64,
    x: f64,
) -> Result<SearchResult> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("budget must be finite, got {x}")));
    }
    let groups = group_by_unit(records)?;
    let mut selection = Vec::with_capacity(groups.len());
    let mut flagged = Vec::with_capacity(groups.len());
    for g in &groups {
        let best = g
            .iter()
            .copied()
            .filter(|&i| qualifies(&records[i], teacher_accuracy, x))
            .min_by(|&a, &b| prefer(records, a, b));
        match best {
            Some(i) => {
                selection.push(i);
                flagged.push(false);
            }
            None => {
                let i = g
                    .iter()
                    .copied()
                    .min_by(|&a, &b| prefer_fallback(records, a, b))
                    .expect("nonempty group");
                selection.push(i);
                flagged.push(true);
            }
        }
    }
    Ok(finish(records, x, selection, flagged))
}

/// Enumerates every combination and returns the one with the fewest total
/// parameters in which every unit meets the budget; `None` if no
/// combination does. Ties follow the greedy preference unit by unit.
pub fn exhaustive_select(
    records: &[CandidateRecord],
    teacher_accuracy: f64,
    x: f64,
) -> Result<Option<SearchResult>> {
    let groups = group_by_unit(records)?;
    let mut idx = vec![0usize; groups.len()];
    let mut best: Option<(usize, Vec<usize>)> = None;
    loop {
        let combo: Vec<usize> = idx.iter().zip(&groups).map(|(&j, g)| g[j]).collect();
        if combo
            .iter()
            .all(|&i| qualifies(&records[i], teacher_accuracy, x))
        {
            let total: usize = combo.iter().map(|&i| records[i].param_count).sum();
            let better = match &best {
                None => true,
                Some((bt, bc)) => total
                    .cmp(bt)
                    .then_with(|| {
                        combo
                            .iter()
                            .zip(bc)
                            .map(|(&a, &b)| prefer(records, a, b))
                            .find(|o| o.is_ne())
                            .unwrap_or(Ordering::Equal)
                    })
                    .is_lt(),
            };
            if better {
                best = Some((total, combo));
            }
        }
        // odometer increment
        let mut u = 0;
        loop {
            if u == groups.len() {
                return Ok(best.map(|(_, sel)| {
                    let n = sel.len();
                    finish(records, x, sel, vec![false; n])
                }));
            }
            idx[u] += 1;
            if idx[u] < groups[u].len() {
                break;
            }
            idx[u] = 0;
            u += 1;
        }
    }
}

/// The candidate with multiplier `k` and sparsity `s` at every unit, if each
/// unit has exactly such a record.
pub fn uniform_selection(records: &[CandidateRecord], k: f64, s: f64) -> Result<SearchResult> {
    let groups = group_by_unit(records)?;
    let mut selection = Vec::with_capacity(groups.len());
    let mut flagged = Vec::with_capacity(groups.len());
    for (u, g) in groups.iter().enumerate() {
        let i = g
            .iter()
            .copied()
            .find(|&i| records[i].k == k && records[i].s == s)
            .ok_or_else(|| {
                Error::invalid(format!("unit {u} has no candidate with k={k}, s={s}"))
            })?;
        selection.push(i);
        flagged.push(records[i].failed);
    }
    Ok(finish(records, f64::NAN, selection, flagged))
}

/// Teacher with every unit replaced by its selected candidate.
pub fn compose_selection(
    teacher: &Model,
    records: &[CandidateRecord],
    result: &SearchResult,
) -> Result<Model> {
    let chosen: Vec<Arc<DistillResult>> = result
        .selection
        .iter()
        .map(|&i| {
            records[i].result.clone().ok_or_else(|| {
                Error::invalid(format!("selected candidate {i} has no trained weights"))
            })
        })
        .collect::<Result<_>>()?;
    match chosen.first().map(|r| r.target) {
        None => Ok(teacher.clone()),
        Some(Target::Neighbourhood(_)) => {
            let mut students = vec![None; teacher.len()];
            for r in &chosen {
                let Target::Neighbourhood(i) = r.target else {
                    return Err(Error::invalid(
                        "selection mixes neighbourhood and layer candidates",
                    ));
                };
                let slot = students
                    .get_mut(i)
                    .ok_or_else(|| Error::invalid(format!("no neighbourhood {i}")))?;
                *slot = Some((student_spec(teacher, i, r)?, r.params.clone()));
            }
            compose_students(teacher, &students)
        }
        Some(Target::Layer { .. }) => {
            let owned: Vec<DistillResult> = chosen.iter().map(|r| (**r).clone()).collect();
            assemble_layers(teacher, &owned)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoSource {
    Search,
    UniformBneck,
    UniformWidth,
    UniformSparsity,
}

impl ParetoSource {
    pub fn name(self) -> &'static str {
        match self {
            ParetoSource::Search => "search",
            ParetoSource::UniformBneck => "uniform_bneck",
            ParetoSource::UniformWidth => "uniform_width",
            ParetoSource::UniformSparsity => "uniform_sparsity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub source: ParetoSource,
    pub x_or_k: f64,
    pub total_params: usize,
    pub acc_pre_ft: f64,
    pub acc_post_ft: Option<f64>,
    pub flagged_count: usize,
}

impl ParetoRow {
    /// Post-fine-tune accuracy when available.
    pub fn final_accuracy(&self) -> f64 {
        self.acc_post_ft.unwrap_or(self.acc_pre_ft)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoTable {
    pub rows: Vec<ParetoRow>,
}

impl ParetoTable {
    pub fn source(&self, s: ParetoSource) -> Vec<&ParetoRow> {
        self.rows.iter().filter(|r| r.source == s).collect()
    }

    /// Rows ordered by parameter count (stable).
    pub fn sorted_by_params(&self) -> Vec<&ParetoRow> {
        let mut v: Vec<_> = self.rows.iter().collect();
        v.sort_by_key(|r| r.total_params);
        v
    }

    /// Fraction of `baseline` points for which some searched point has no
    /// more parameters and at least the same final accuracy.
    pub fn dominance_fraction(&self, baseline: ParetoSource) -> Option<f64> {
        let search = self.source(ParetoSource::Search);
        let base = self.source(baseline);
        if base.is_empty() {
            return None;
        }
        let hit = base
            .iter()
            .filter(|b| {
                search.iter().any(|s| {
                    s.total_params <= b.total_params && s.final_accuracy() >= b.final_accuracy()
                })
            })
            .count();
        Some(hit as f64 / base.len() as f64)
    }

    pub fn write_csv(&self, path: &Path, param_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record([
            "source",
            param_column,
            "total_params",
            "acc_pre_ft",
            "acc_post_ft",
            "flagged_count",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.source.name().to_string(),
                r.x_or_k.to_string(),
                r.total_params.to_string(),
                r.acc_pre_ft.to_string(),
                r.acc_post_ft.map(|a| a.to_string()).unwrap_or_default(),
                r.flagged_count.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Composes a selection and scores it: `(pre-fine-tune, post-fine-tune)`.
pub type Finisher<'a> = dyn FnMut(&Model) -> Result<(f64, Option<f64>)> + 'a;

fn row_for(
    teacher: &Model,
    records: &[CandidateRecord],
    mut sel: SearchResult,
    source: ParetoSource,
    x_or_k: f64,
    finisher: &mut Finisher<'_>,
) -> Result<(ParetoRow, SearchResult)> {
    let model = compose_selection(teacher, records, &sel)?;
    let (pre, post) = finisher(&model)?;
    sel.acc_pre_ft = Some(pre);
    sel.acc_post_ft = post;
    Ok((
        ParetoRow {
            source,
            x_or_k,
            total_params: sel.network_params(teacher.param_count()),
            acc_pre_ft: pre,
            acc_post_ft: post,
            flagged_count: sel.flagged_count(),
        },
        sel,
    ))
}

/// Searched students for every `x`, then uniform bottleneck students for
/// every `k`, then any precomputed `extra` rows (e.g. width baselines).
pub fn pareto_report(
    teacher: &Model,
    records: &[CandidateRecord],
    teacher_accuracy: f64,
    x_grid: &[f64],
    k_grid: &[f64],
    extra: Vec<ParetoRow>,
    finisher: &mut Finisher<'_>,
) -> Result<(ParetoTable, Vec<SearchResult>)> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &x in x_grid {
        let sel = greedy_select(records, teacher_accuracy, x)?;
        let (row, sel) = row_for(teacher, records, sel, ParetoSource::Search, x, finisher)?;
        rows.push(row);
        results.push(sel);
    }
    for &k in k_grid {
        let sel = uniform_selection(records, k, 0.0)?;
        rows.push(
            row_for(
                teacher,
                records,
                sel,
                ParetoSource::UniformBneck,
                k,
                finisher,
            )?
            .0,
        );
    }
    rows.extend(extra);
    Ok((ParetoTable { rows }, results))
}

/// Sparsity search over per-layer records: a searched row per `x`, then a
/// uniform-rate row per `s`.
pub fn search_sparsity(
    teacher: &Model,
    records: &[CandidateRecord],
    teacher_accuracy: f64,
    x_grid: &[f64],
    s_grid: &[f64],
    finisher: &mut Finisher<'_>,
) -> Result<(ParetoTable, Vec<SearchResult>)> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &x in x_grid {
        let sel = greedy_select(records, teacher_accuracy, x)?;
        let (row, sel) = row_for(teacher, records, sel, ParetoSource::Search, x, finisher)?;
        rows.push(row);
        results.push(sel);
    }
    for &s in s_grid {
        let sel = uniform_selection(records, 1.0, s)?;
        rows.push(
            row_for(
                teacher,
                records,
                sel,
                ParetoSource::UniformSparsity,
                s,
                finisher,
            )?
            .0,
        );
    }
    Ok((ParetoTable { rows }, results))
}
