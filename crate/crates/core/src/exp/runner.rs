//! Seeded pipelines for every experiment kind.
//!
//! Each kind runs the phases it needs (teacher, caches, distillation, ...),
//! reusing artifacts named under `[artifacts]` and writing everything else
//! into the output directory. All randomness is derived from the global
//! seed by label, so a phase draws the same numbers whichever kind runs it.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::{json, Value};

use super::config::{ExperimentConfig, ExperimentKind, InitKind, SourceKind};
use super::metrics::{MetricRow, MetricsWriter};
use super::report::{figure_data, read_timing, timing_report, write_timing, FigureKind, TimingRow};
use crate::cache::ActivationCache;
use crate::data::{gen_synthetic, load_cifar10_binary, standardize, Dataset, Split, SyntheticSpec};
use crate::distill::{
    build_activation_cache, compose_students, compute_layer_inputs, distill_gaussian_end2end_with,
    evaluate, kd_finetune_with, prunable_layers, run_jobs, train_supervised_with, DistillJob,
    DistillResult, GaussianSource, InputSource, KdConfig, NormPolicy, SparsitySchedule,
    StudentInit, Target, TrainConfig,
};
use crate::error::{Error, Result};
use crate::network::{
    build_resnet, build_width_scaled, load_checkpoint, make_candidate, save_checkpoint, Model,
    NeighbourhoodSpec, NetworkSpec, SeqParams,
};
use crate::perturb::{
    activation_std, calibrate_weight_noise, csv_err, error_accumulation, sweep_threshold,
    weight_layers,
};
use crate::rng::{derive_seed, Rng};
use crate::search::{
    evaluate_candidates, pareto_report, search_sparsity, CandidateOutcome, CandidateRecord,
    ParetoRow, ParetoSource,
};
use crate::tensor::Tensor;

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// First `n` samples of every class, after skipping `skip` per class.
fn per_class(ds: &Dataset, skip: usize, n: usize, classes: usize) -> Result<Dataset> {
    let mut seen = vec![0usize; classes];
    let mut idx = Vec::new();
    for (i, &l) in ds.labels.iter().enumerate() {
        if seen[l] >= skip && seen[l] < skip + n {
            idx.push(i);
        }
        seen[l] += 1;
    }
    if seen.iter().any(|&c| c < skip + n) {
        return Err(Error::invalid(format!(
            "dataset has fewer than {} samples of some class",
            skip + n
        )));
    }
    ds.subset(&idx)
}

/// Train, validation and test sets, standardized with the training statistics.
pub fn build_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let d = &cfg.data;
    let seed = derive_seed(cfg.seed(), "data", 0);
    let (train, val, test) = match d.source {
        super::config::DataSource::Synthetic => {
            let spec = |n| SyntheticSpec {
                n_per_class: n,
                classes: d.classes,
                channels: d.channels,
                height: d.height,
                width: d.width,
                noise_level: d.noise_level,
            };
            let val = if d.val_per_class > 0 {
                Some(gen_synthetic(&spec(d.val_per_class), Split::Val, seed)?)
            } else {
                None
            };
            (
                gen_synthetic(&spec(d.train_per_class), Split::Train, seed)?,
                val,
                gen_synthetic(&spec(d.test_per_class), Split::Test, seed)?,
            )
        }
        super::config::DataSource::Cifar10 => {
            let dir = d.path.as_deref().expect("validated");
            let pool = load_cifar10_binary(dir, Split::Train)?;
            let test = load_cifar10_binary(dir, Split::Test)?;
            let val = if d.val_per_class > 0 {
                Some(per_class(&pool, d.train_per_class, d.val_per_class, 10)?)
            } else {
                None
            };
            (
                per_class(&pool, 0, d.train_per_class, 10)?,
                val,
                per_class(&test, 0, d.test_per_class, 10)?,
            )
        }
    };
    let (train, stats) = standardize(&train, None)?;
    let (test, _) = standardize(&test, Some(&stats))?;
    let val = match val {
        Some(v) => standardize(&v, Some(&stats))?.0,
        None => test.clone(),
    };
    Ok(Splits { train, val, test })
}

pub fn teacher_spec(cfg: &ExperimentConfig) -> Result<NetworkSpec> {
    let d = &cfg.data;
    let widths = cfg
        .model
        .widths
        .clone()
        .unwrap_or_else(|| cfg.model.preset.default_widths());
    build_resnet(
        cfg.model.preset,
        &widths,
        d.classes,
        Some(vec![d.channels, d.height, d.width]),
    )
}

fn k_name(k: f64) -> String {
    format!("{k}")
}

pub fn student_file(i: usize, k: f64) -> String {
    format!("n{i}_k{}.ndck", k_name(k))
}

/// Run-time checks on the file system: every referenced artifact must exist.
pub fn preflight(cfg: &ExperimentConfig) -> Vec<String> {
    let mut e = Vec::new();
    let missing = |p: &Path| !p.exists();
    if let Some(p) = &cfg.data.path {
        if cfg.data.source == super::config::DataSource::Cifar10 && missing(p) {
            e.push(format!("data.path: {} does not exist", p.display()));
        }
    }
    if let Some(p) = &cfg.artifacts.teacher {
        if missing(p) {
            e.push(format!("artifacts.teacher: {} does not exist", p.display()));
        }
    }
    let n = teacher_spec(cfg).map(|s| s.len()).unwrap_or(0);
    if let Some(dir) = &cfg.artifacts.cache_dir {
        for i in 0..n {
            let p = dir.join(format!("b{i}.ndac"));
            if missing(&p) {
                e.push(format!(
                    "artifacts.cache_dir: {} does not exist",
                    p.display()
                ));
            }
        }
    }
    if let Some(dir) = &cfg.artifacts.students_dir {
        for &k in &cfg.distill.k {
            for i in 0..n {
                let p = dir.join(student_file(i, k));
                if missing(&p) {
                    e.push(format!(
                        "artifacts.students_dir: {} does not exist",
                        p.display()
                    ));
                }
            }
        }
    }
    for (j, p) in cfg.artifacts.runs.iter().enumerate() {
        if missing(p) {
            e.push(format!(
                "artifacts.runs[{j}]: {} does not exist",
                p.display()
            ));
        }
    }
    e
}

/// Shared metric sink; also usable from training hooks.
struct Metrics {
    writer: RefCell<MetricsWriter>,
    failure: RefCell<Option<Error>>,
    id: String,
    every: usize,
}

impl Metrics {
    fn row(&self, phase: &str) -> MetricRow {
        MetricRow::new(&self.id, phase)
    }

    fn write(&self, row: &MetricRow) -> Result<()> {
        self.writer.borrow_mut().write(row)
    }

    /// Hook emitting a loss row every `every` steps.
    fn heartbeat<'a>(&'a self, base: MetricRow) -> impl FnMut(usize, f32) + 'a {
        let start = Instant::now();
        move |step, loss| {
            if (step + 1) % self.every == 0 {
                let row = MetricRow {
                    step: Some(step + 1),
                    loss: Some(loss as f64),
                    wall_time_s: Some(start.elapsed().as_secs_f64()),
                    ..base.clone()
                };
                if let Err(e) = self.write(&row) {
                    self.failure.borrow_mut().get_or_insert(e);
                }
            }
        }
    }

    fn check(&self) -> Result<()> {
        match self.failure.borrow_mut().take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Student weights for every neighbourhood at one multiplier.
type Students = Vec<Option<(NeighbourhoodSpec, SeqParams)>>;

pub struct Runner {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    seed: u64,
    workers: usize,
    metrics: Metrics,
    splits: Splits,
    teacher: Option<Arc<Model>>,
    caches: Option<Vec<Arc<Tensor>>>,
    timings: Vec<TimingRow>,
    summary: BTreeMap<String, Value>,
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Validates `cfg`, runs it and returns the output directory.
pub fn run(cfg: ExperimentConfig) -> Result<PathBuf> {
    let mut errors = cfg.validate();
    errors.extend(preflight(&cfg));
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    let workers = cfg.workers.unwrap_or_else(default_workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Runtime(format!("building worker pool: {e}")))?;
    pool.install(|| {
        let mut r = Runner::new(cfg)?;
        r.execute()?;
        Ok(r.out)
    })
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let out = cfg
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment_id()));
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("config.toml"), cfg.to_toml())?;
        let metrics = Metrics {
            writer: RefCell::new(MetricsWriter::create(
                &out.join("metrics.csv"),
                cfg.record_wall_time,
            )?),
            failure: RefCell::new(None),
            id: cfg.experiment_id(),
            every: cfg.heartbeat_every,
        };
        let splits = build_splits(&cfg)?;
        Ok(Runner {
            seed: cfg.seed(),
            workers: cfg.workers.unwrap_or_else(default_workers),
            out,
            metrics,
            splits,
            teacher: None,
            caches: None,
            timings: Vec::new(),
            summary: BTreeMap::new(),
            cfg,
        })
    }

    fn rng(&self, label: &str) -> Rng {
        Rng::new(self.seed).split(label, 0)
    }

    fn job_seed(&self, id: &str) -> u64 {
        derive_seed(self.seed, id, 0)
    }

    fn time(&mut self, phase: &str, wall_s: f64, sequential_s: f64, workers: usize) {
        log::info!("{phase}: {wall_s:.2}s wall, {sequential_s:.2}s sequential");
        self.timings.push(TimingRow {
            phase: phase.to_string(),
            wall_s,
            sequential_s,
            workers,
        });
    }

    fn note(&mut self, key: &str, v: Value) {
        self.summary.insert(key.to_string(), v);
    }

    pub fn execute(&mut self) -> Result<()> {
        let kind = self.cfg.kind;
        log::info!(
            "running {} (seed {}, {} workers)",
            kind.name(),
            self.seed,
            self.workers
        );
        match kind {
            ExperimentKind::TrainTeacher => {
                self.teacher()?;
            }
            ExperimentKind::Cache => {
                self.caches()?;
            }
            ExperimentKind::Distill => {
                self.students()?;
            }
            ExperimentKind::Compose => {
                self.composed()?;
            }
            ExperimentKind::Finetune => self.finetune()?,
            ExperimentKind::PerturbSweep => self.perturb_sweep()?,
            ExperimentKind::WeightAccumulation => self.weight_accumulation()?,
            ExperimentKind::Search => self.search()?,
            ExperimentKind::Sparsify => self.sparsify()?,
            ExperimentKind::Datafree => self.datafree()?,
            ExperimentKind::Report => self.report()?,
        }
        self.metrics.check()?;
        if self.cfg.record_wall_time {
            write_timing(&self.out.join("timing.csv"), &self.timings)?;
        }
        let mut summary = serde_json::Map::new();
        summary.insert("experiment_id".into(), json!(self.cfg.experiment_id()));
        summary.insert("kind".into(), json!(kind.name()));
        summary.insert("seed".into(), json!(self.seed));
        for (k, v) in std::mem::take(&mut self.summary) {
            summary.insert(k, v);
        }
        let text = serde_json::to_string_pretty(&Value::Object(summary))
            .map_err(|e| Error::Runtime(format!("summary: {e}")))?;
        std::fs::write(self.out.join("summary.json"), text + "\n")?;
        Ok(())
    }

    fn eval_row(&self, phase: &str, model: &Model, ds: &Dataset) -> Result<f64> {
        let acc = evaluate(model, ds)?;
        self.metrics.write(&MetricRow {
            accuracy: Some(acc),
            params: Some(model.param_count()),
            ..self.metrics.row(phase)
        })?;
        Ok(acc)
    }

    fn train_ce(
        &self,
        phase: &str,
        model: &mut Model,
        cfg: &TrainConfig,
        noise: f64,
        rng: &Rng,
    ) -> Result<()> {
        let mut hook = self.metrics.heartbeat(self.metrics.row(phase));
        train_supervised_with(model, &self.splits.train, cfg, noise, rng, &mut hook)?;
        self.metrics.check()
    }

    pub fn teacher(&mut self) -> Result<Arc<Model>> {
        if let Some(t) = &self.teacher {
            return Ok(t.clone());
        }
        let model = match &self.cfg.artifacts.teacher {
            Some(p) => {
                let m = load_checkpoint(p)?;
                let want = teacher_spec(&self.cfg)?;
                if m.spec.input_shape != want.input_shape || m.spec.class_count != want.class_count
                {
                    return Err(Error::invalid(format!(
                        "teacher {} takes {:?} with {} classes, the data is {:?} with {}",
                        p.display(),
                        m.spec.input_shape,
                        m.spec.class_count,
                        want.input_shape,
                        want.class_count
                    )));
                }
                m
            }
            None => {
                let mut m = Model::init(teacher_spec(&self.cfg)?, &mut self.rng("teacher-init"))?;
                let start = Instant::now();
                let cfg = self.cfg.teacher.train.to_train();
                self.train_ce(
                    "teacher",
                    &mut m,
                    &cfg,
                    self.cfg.teacher.noise_sigma,
                    &self.rng("teacher-train"),
                )?;
                let t = start.elapsed().as_secs_f64();
                self.time("teacher", t, t, 1);
                save_checkpoint(&m, &self.out.join("teacher.ndck"))?;
                m
            }
        };
        let acc = self.eval_row("teacher", &model, &self.splits.test)?;
        self.note("teacher_test_acc", json!(acc));
        self.note("teacher_params", json!(model.param_count()));
        let model = Arc::new(model);
        self.teacher = Some(model.clone());
        Ok(model)
    }

    /// Teacher activations at every neighbourhood input, on the training set.
    pub fn caches(&mut self) -> Result<Vec<Arc<Tensor>>> {
        if let Some(c) = &self.caches {
            return Ok(c.clone());
        }
        let teacher = self.teacher()?;
        let start = Instant::now();
        let mut out = Vec::with_capacity(teacher.len());
        match self.cfg.artifacts.cache_dir.clone() {
            Some(dir) => {
                for i in 0..teacher.len() {
                    let c = ActivationCache::open(
                        &dir.join(format!("b{i}.ndac")),
                        i,
                        &self.splits.train,
                    )?;
                    out.push(Arc::new(c.activations));
                }
            }
            None => {
                let dir = self.out.join("caches");
                std::fs::create_dir_all(&dir)?;
                for i in 0..teacher.len() {
                    let c = build_activation_cache(
                        &teacher,
                        &self.splits.train,
                        i,
                        &dir.join(format!("b{i}.ndac")),
                    )?;
                    out.push(Arc::new(c.activations));
                }
                let t = start.elapsed().as_secs_f64();
                self.time("cache", t, t, 1);
            }
        }
        self.caches = Some(out.clone());
        Ok(out)
    }

    fn source(
        &mut self,
        kind: SourceKind,
        teacher: &Model,
        i: usize,
        std: f64,
    ) -> Result<InputSource> {
        let channels = teacher.spec.boundary_shape(i)[0];
        Ok(match kind {
            SourceKind::Cache => InputSource::Cache(self.caches()?[i].clone()),
            SourceKind::Online => InputSource::Online(Arc::new(self.splits.train.clone())),
            SourceKind::Gaussian => {
                InputSource::Gaussian(GaussianSource::standard().scaled(std as f32, channels))
            }
            SourceKind::GaussianTeacherNorm => InputSource::Gaussian(
                GaussianSource::from_teacher_norm(teacher, i)?.scaled(std as f32, channels),
            ),
        })
    }

    /// One ND job per (k, neighbourhood), k-major.
    #[allow(clippy::too_many_arguments)]
    fn nd_jobs(
        &mut self,
        label: &str,
        ks: &[f64],
        init: InitKind,
        norm: NormPolicy,
        source: SourceKind,
        lookahead: &[f64],
        train: &TrainConfig,
        std: f64,
    ) -> Result<Vec<(usize, f64, NeighbourhoodSpec, DistillJob)>> {
        let teacher = self.teacher()?;
        let mut jobs = Vec::new();
        for &k in ks {
            for i in 0..teacher.len() {
                let cand = make_candidate(&teacher.spec.neighbourhoods[i], k, 0.0)?;
                let id = format!("{label}/n{i}/k{}", k_name(k));
                let src = self.source(source, &teacher, i, std)?;
                let init = match init {
                    InitKind::Teacher => StudentInit::Teacher,
                    InitKind::Random => StudentInit::Random,
                };
                let job = DistillJob::neighbourhood(
                    &id,
                    i,
                    &cand.spec,
                    src,
                    train.clone(),
                    self.job_seed(&id),
                )
                .with_init(init, norm)
                .with_lookahead(lookahead.to_vec());
                jobs.push((i, k, cand.spec, job));
            }
        }
        Ok(jobs)
    }

    /// Runs jobs on the pool and writes their loss traces in job order.
    fn run_nd(
        &mut self,
        phase: &str,
        jobs: &[DistillJob],
        meta: &[(Option<usize>, f64, f64)],
    ) -> Result<Vec<Result<DistillResult>>> {
        let teacher = self.teacher()?;
        let report = run_jobs(jobs, &teacher, self.workers)?;
        self.time(phase, report.wall_s, report.sequential_s(), report.workers);
        for (r, &(nb, k, s)) in report.results.iter().zip(meta) {
            match r {
                Ok(r) => {
                    for (step, &loss) in r.losses.iter().enumerate() {
                        if (step + 1) % self.metrics.every == 0 {
                            self.metrics.write(&MetricRow {
                                step: Some(step + 1),
                                loss: Some(loss as f64),
                                neighbourhood_id: nb,
                                k: Some(k),
                                sparsity: Some(s),
                                ..self.metrics.row(phase)
                            })?;
                        }
                    }
                }
                Err(e) => log::warn!("{phase}: job failed: {e}"),
            }
        }
        Ok(report.results)
    }

    /// Distilled students for every `distill.k`, or those under
    /// `artifacts.students_dir`.
    pub fn students(&mut self) -> Result<Vec<(f64, Students)>> {
        let teacher = self.teacher()?;
        let ks = self.cfg.distill.k.clone();
        if let Some(dir) = self.cfg.artifacts.students_dir.clone() {
            let mut out = Vec::new();
            for &k in &ks {
                let mut s = Vec::new();
                for i in 0..teacher.len() {
                    let m = load_checkpoint(&dir.join(student_file(i, k)))?;
                    if m.len() != teacher.len() {
                        return Err(Error::invalid(format!(
                            "student {} has a different layout",
                            student_file(i, k)
                        )));
                    }
                    s.push(Some((
                        m.spec.neighbourhoods[i].clone(),
                        m.params.neighbourhoods[i].clone(),
                    )));
                }
                out.push((k, s));
            }
            return Ok(out);
        }
        let d = self.cfg.distill.clone();
        let train = d.train.to_train();
        let jobs = self.nd_jobs(
            "nd",
            &ks,
            d.init,
            d.norm_policy(),
            d.source,
            &d.lookahead,
            &train,
            1.0,
        )?;
        let (specs, jobs): (Vec<_>, Vec<_>) =
            jobs.into_iter().map(|(i, k, s, j)| ((i, k, s), j)).unzip();
        let meta: Vec<_> = specs.iter().map(|&(i, k, _)| (Some(i), k, 0.0)).collect();
        let results = self.run_nd("distill", &jobs, &meta)?;
        let dir = self.out.join("students");
        std::fs::create_dir_all(&dir)?;
        let mut out: Vec<(f64, Students)> =
            ks.iter().map(|&k| (k, vec![None; teacher.len()])).collect();
        let mut partial = BTreeMap::new();
        for ((i, k, spec), r) in specs.into_iter().zip(results) {
            let r = r?;
            let m = teacher.with_replacement(i, &spec, r.params)?;
            save_checkpoint(&m, &dir.join(student_file(i, k)))?;
            let acc = evaluate(&m, &self.splits.test)?;
            self.metrics.write(&MetricRow {
                accuracy: Some(acc),
                loss: r.losses.last().map(|&l| l as f64),
                neighbourhood_id: Some(i),
                k: Some(k),
                params: Some(spec.param_count()),
                ..self.metrics.row("distill")
            })?;
            partial.insert(format!("n{i}_k{}", k_name(k)), json!(acc));
            let slot = out.iter_mut().find(|(kk, _)| *kk == k).expect("k listed");
            slot.1[i] = Some((
                m.spec.neighbourhoods[i].clone(),
                m.params.neighbourhoods[i].clone(),
            ));
        }
        self.note("partial_test_acc", json!(partial));
        Ok(out)
    }

    /// Composed students, one per `distill.k`.
    pub fn composed(&mut self) -> Result<Vec<(f64, Model)>> {
        let teacher = self.teacher()?;
        let students = self.students()?;
        let dir = self.out.join("composed");
        std::fs::create_dir_all(&dir)?;
        let mut out = Vec::new();
        let mut accs = BTreeMap::new();
        for (k, s) in students {
            let m = compose_students(&teacher, &s)?;
            save_checkpoint(&m, &dir.join(format!("k{}.ndck", k_name(k))))?;
            let acc = evaluate(&m, &self.splits.test)?;
            self.metrics.write(&MetricRow {
                accuracy: Some(acc),
                k: Some(k),
                params: Some(m.param_count()),
                ..self.metrics.row("compose")
            })?;
            accs.insert(
                k_name(k),
                json!({ "test_acc": acc, "params": m.param_count() }),
            );
            out.push((k, m));
        }
        self.note("composed", json!(accs));
        Ok(out)
    }

    fn kd_config(&self, train: TrainConfig) -> KdConfig {
        KdConfig {
            temperature: self.cfg.finetune.temperature,
            hard_weight: self.cfg.finetune.hard_weight,
            train,
        }
    }

    fn finetune(&mut self) -> Result<()> {
        let teacher = self.teacher()?;
        let composed = self.composed()?;
        let ft = self.cfg.finetune.clone();
        let dir = self.out.join("finetuned");
        std::fs::create_dir_all(&dir)?;
        let mut res = BTreeMap::new();
        let mut ft_time = 0.0;
        let mut kd_time = None;
        for (j, (k, model)) in composed.into_iter().enumerate() {
            let mut entry = serde_json::Map::new();
            let mut m = model.clone();
            let start = Instant::now();
            {
                let row = MetricRow {
                    k: Some(k),
                    ..self.metrics.row("finetune")
                };
                let mut hook = self.metrics.heartbeat(row);
                let cfg = self.kd_config(ft.train.to_train());
                kd_finetune_with(
                    &mut m,
                    &teacher,
                    &self.splits.train,
                    &cfg,
                    &self.rng("finetune").split("k", j as u64),
                    &mut hook,
                )?;
            }
            self.metrics.check()?;
            ft_time += start.elapsed().as_secs_f64();
            save_checkpoint(&m, &dir.join(format!("k{}.ndck", k_name(k))))?;
            let pre = evaluate(&model, &self.splits.test)?;
            let post = evaluate(&m, &self.splits.test)?;
            self.metrics.write(&MetricRow {
                accuracy: Some(post),
                k: Some(k),
                params: Some(m.param_count()),
                ..self.metrics.row("finetune")
            })?;
            entry.insert("nd_acc".into(), json!(pre));
            entry.insert("nd_ft_acc".into(), json!(post));
            entry.insert("params".into(), json!(m.param_count()));
            if ft.scratch_baseline {
                let mut s = Model::init(
                    model.spec.clone(),
                    &mut self.rng("scratch-init").split("k", j as u64),
                )?;
                let cfg = self.cfg.teacher.train.to_train();
                let row = MetricRow {
                    k: Some(k),
                    ..self.metrics.row("scratch")
                };
                {
                    let mut hook = self.metrics.heartbeat(row.clone());
                    train_supervised_with(
                        &mut s,
                        &self.splits.train,
                        &cfg,
                        0.0,
                        &self.rng("scratch-train").split("k", j as u64),
                        &mut hook,
                    )?;
                }
                self.metrics.check()?;
                let acc = evaluate(&s, &self.splits.test)?;
                self.metrics.write(&MetricRow {
                    accuracy: Some(acc),
                    params: Some(s.param_count()),
                    ..row
                })?;
                entry.insert("scratch_acc".into(), json!(acc));
            }
            if ft.kd_baseline_steps > 0 {
                let mut s = Model::init(
                    model.spec.clone(),
                    &mut self.rng("kd-init").split("k", j as u64),
                )?;
                let mut train = self.cfg.teacher.train.to_train();
                train.steps = ft.kd_baseline_steps;
                let cfg = self.kd_config(train);
                let row = MetricRow {
                    k: Some(k),
                    ..self.metrics.row("kd-baseline")
                };
                let start = Instant::now();
                {
                    let mut hook = self.metrics.heartbeat(row.clone());
                    kd_finetune_with(
                        &mut s,
                        &teacher,
                        &self.splits.train,
                        &cfg,
                        &self.rng("kd-train").split("k", j as u64),
                        &mut hook,
                    )?;
                }
                self.metrics.check()?;
                *kd_time.get_or_insert(0.0) += start.elapsed().as_secs_f64();
                let acc = evaluate(&s, &self.splits.test)?;
                self.metrics.write(&MetricRow {
                    accuracy: Some(acc),
                    params: Some(s.param_count()),
                    ..row
                })?;
                entry.insert("kd_acc".into(), json!(acc));
            }
            res.insert(k_name(k), Value::Object(entry));
        }
        self.time("finetune", ft_time, ft_time, 1);
        if let Some(t) = kd_time {
            self.time("kd-baseline", t, t, 1);
        }
        self.note("finetune", json!(res));
        Ok(())
    }

    fn perturb_sweep(&mut self) -> Result<()> {
        let teacher = self.teacher()?;
        let p = self.cfg.perturb.clone();
        let test = &self.splits.test;
        let stds = activation_std(&teacher, test)?;
        {
            let mut w =
                csv::Writer::from_path(self.out.join("activation_std.csv")).map_err(csv_err)?;
            w.write_record(["neighbourhood_id", "std"])
                .map_err(csv_err)?;
            for (i, s) in stds.iter().enumerate() {
                w.write_record([i.to_string(), s.to_string()])
                    .map_err(csv_err)?;
            }
            w.flush()?;
        }
        let all: Vec<usize> = (0..teacher.len()).collect();
        let sets = p.affected.clone().unwrap_or_else(|| vec![vec![0], all]);
        let start = Instant::now();
        let table = sweep_threshold(&teacher, test, &p.epsilons, &sets, &p.seeds)?;
        let t = start.elapsed().as_secs_f64();
        self.time("perturb", t, t, self.workers);
        table.write_csv(&self.out.join("sweep.csv"))?;
        for r in &table.rows {
            self.metrics.write(&MetricRow {
                accuracy: Some(r.accuracy.mean),
                epsilon: Some(r.epsilon),
                neighbourhood_id: (r.affected.len() == 1).then(|| r.affected[0]),
                ..self.metrics.row("perturb")
            })?;
        }
        let mut th = BTreeMap::new();
        for s in &sets {
            let key = s
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";");
            th.insert(key, json!(table.threshold(s)));
        }
        self.note("baseline_acc", json!(table.baseline_acc));
        self.note("threshold", json!(th));
        Ok(())
    }

    fn weight_accumulation(&mut self) -> Result<()> {
        let teacher = self.teacher()?;
        let a = self.cfg.accumulation.clone();
        let n = weight_layers(&teacher).len();
        let layers = a.layers.clone().unwrap_or_else(|| (0..n).collect());
        if let Some(&bad) = layers.iter().find(|&&l| l >= n) {
            return Err(Error::invalid(format!(
                "accumulation.layers: no weight layer {bad} (model has {n})"
            )));
        }
        let test = &self.splits.test;
        let start = Instant::now();
        let mut cal_rows = Vec::new();
        let mut res = BTreeMap::new();
        for &target in &a.target_drops {
            let mut sigmas = Vec::new();
            for &l in &layers {
                let c = calibrate_weight_noise(
                    &teacher,
                    test,
                    l,
                    target,
                    a.tolerance_frac * target,
                    &a.seeds,
                )?;
                if !c.converged {
                    log::warn!(
                        "calibration for layer {l} at drop {target} did not converge (drop {})",
                        c.drop
                    );
                }
                sigmas.push((l, c.sigma));
                cal_rows.push((target, c));
            }
            let acc = error_accumulation(&teacher, test, &sigmas, &a.seeds)?;
            acc.write_csv(&self.out.join(format!("accumulation_d{target}.csv")))?;
            let last = acc.rows.last();
            res.insert(
                format!("{target}"),
                json!({
                    "cumulative_drop": last.map(|r| r.cumulative_drop),
                    "additive_prediction": last.map(|r| r.additive_prediction),
                }),
            );
        }
        let t = start.elapsed().as_secs_f64();
        self.time("accumulation", t, t, self.workers);
        let mut w = csv::Writer::from_path(self.out.join("calibration.csv")).map_err(csv_err)?;
        w.write_record([
            "target_drop",
            "layer",
            "sigma",
            "drop",
            "converged",
            "evaluations",
        ])
        .map_err(csv_err)?;
        for (target, c) in &cal_rows {
            w.write_record([
                target.to_string(),
                c.layer.to_string(),
                c.sigma.to_string(),
                c.drop.to_string(),
                c.converged.to_string(),
                c.evaluations.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        self.note("accumulation", json!(res));
        Ok(())
    }

    fn write_records(&self, name: &str, records: &[CandidateRecord]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.out.join(name)).map_err(csv_err)?;
        for r in records {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Pre and post fine-tune test accuracy of a composed student.
    fn finish(
        &self,
        teacher: &Model,
        m: &Model,
        finetune: bool,
        tag: u64,
    ) -> Result<(f64, Option<f64>)> {
        let pre = evaluate(m, &self.splits.test)?;
        if !finetune {
            return Ok((pre, None));
        }
        let mut s = m.clone();
        let cfg = self.kd_config(self.cfg.finetune.train.to_train());
        kd_finetune_with(
            &mut s,
            teacher,
            &self.splits.train,
            &cfg,
            &self.rng("search-finetune").split("point", tag),
            &mut |_, _| {},
        )?;
        Ok((pre, Some(evaluate(&s, &self.splits.test)?)))
    }

    fn search(&mut self) -> Result<()> {
        let teacher = self.teacher()?;
        let sc = self.cfg.search.clone();
        let d = self.cfg.distill.clone();
        let train = d.train.to_train();
        let jobs = self.nd_jobs(
            "nd",
            &sc.k,
            InitKind::Random,
            d.norm_policy(),
            d.source,
            &d.lookahead,
            &train,
            1.0,
        )?;
        let (specs, jobs): (Vec<_>, Vec<_>) =
            jobs.into_iter().map(|(i, k, _, j)| ((i, k), j)).unzip();
        let meta: Vec<_> = specs.iter().map(|&(i, k)| (Some(i), k, 0.0)).collect();
        let results = self.run_nd("distill", &jobs, &meta)?;
        let outcomes: Vec<_> = specs
            .iter()
            .zip(results)
            .map(|(&(i, k), r)| CandidateOutcome {
                target: Target::Neighbourhood(i),
                k,
                s: 0.0,
                result: r.ok(),
            })
            .collect();
        let records = evaluate_candidates(&teacher, &outcomes, &self.splits.val)?;
        self.write_records("records.csv", &records)?;
        for r in &records {
            self.metrics.write(&MetricRow {
                accuracy: Some(r.partial_accuracy),
                neighbourhood_id: Some(r.unit),
                k: Some(r.k),
                params: Some(r.param_count),
                ..self.metrics.row("candidates")
            })?;
        }
        let teacher_val = evaluate(&teacher, &self.splits.val)?;
        let mut extra = Vec::new();
        for (j, &w) in sc.width_baselines.iter().enumerate() {
            let widths = self
                .cfg
                .model
                .widths
                .clone()
                .unwrap_or_else(|| self.cfg.model.preset.default_widths());
            let spec = build_width_scaled(
                self.cfg.model.preset,
                &widths,
                w,
                self.cfg.data.classes,
                Some(teacher.spec.input_shape.clone()),
            )?;
            let mut m = Model::init(spec, &mut self.rng("width-init").split("w", j as u64))?;
            let cfg = self.cfg.teacher.train.to_train();
            self.train_ce(
                "width-baseline",
                &mut m,
                &cfg,
                0.0,
                &self.rng("width-train").split("w", j as u64),
            )?;
            let acc = self.eval_row("width-baseline", &m, &self.splits.test)?;
            extra.push(ParetoRow {
                source: ParetoSource::UniformWidth,
                x_or_k: w,
                total_params: m.param_count(),
                acc_pre_ft: acc,
                acc_post_ft: None,
                flagged_count: 0,
            });
        }
        let mut tag = 0u64;
        let table = {
            let this = &*self;
            let mut finisher = |m: &Model| {
                tag += 1;
                this.finish(&teacher, m, sc.finetune, tag)
            };
            let (table, results) = pareto_report(
                &teacher,
                &records,
                teacher_val,
                &sc.x_grid,
                &sc.k,
                extra,
                &mut finisher,
            )?;
            let sel: Vec<Value> = results
                .iter()
                .zip(&sc.x_grid)
                .map(|(r, x)| json!({ "x": x, "selection": r.selection, "flagged": r.flagged_count() }))
                .collect();
            (table, sel)
        };
        let (table, sel) = table;
        table.write_csv(&self.out.join("pareto.csv"), "x_or_k")?;
        for r in &table.rows {
            self.metrics.write(&MetricRow {
                accuracy: Some(r.final_accuracy()),
                params: Some(r.total_params),
                k: (r.source != ParetoSource::Search).then_some(r.x_or_k),
                ..self.metrics.row(&format!("pareto-{}", r.source.name()))
            })?;
        }
        self.note("teacher_val_acc", json!(teacher_val));
        self.note("selections", json!(sel));
        self.note(
            "dominance_vs_uniform_bneck",
            json!(table.dominance_fraction(ParetoSource::UniformBneck)),
        );
        Ok(())
    }

    fn sparsify(&mut self) -> Result<()> {
        let teacher = self.teacher()?;
        let sp = self.cfg.sparsify.clone();
        let train = sp.train.to_train();
        let layers = prunable_layers(&teacher);
        let mut jobs = Vec::new();
        let mut meta = Vec::new();
        let mut targets = Vec::new();
        for &(stage, layer) in &layers {
            let inputs = Arc::new(compute_layer_inputs(
                &teacher,
                &self.splits.train,
                stage,
                layer,
            )?);
            for &s in &sp.s {
                let sched = SparsitySchedule {
                    final_sparsity: s,
                    ramp_steps: sp.ramp_steps,
                    hold_steps: sp.hold_steps,
                    update_every: sp.update_every,
                };
                let id = format!("sparse/{stage}.{layer}/s{s}");
                let seed = self.job_seed(&id);
                jobs.push(DistillJob::layer(
                    &id,
                    &teacher,
                    stage,
                    layer,
                    InputSource::Cache(inputs.clone()),
                    train.clone(),
                    Some(sched),
                    seed,
                )?);
                meta.push((None, 1.0, s));
                targets.push((Target::Layer { stage, layer }, s));
            }
        }
        let results = self.run_nd("sparsify", &jobs, &meta)?;
        let outcomes: Vec<_> = targets
            .iter()
            .zip(results)
            .map(|(&(target, s), r)| CandidateOutcome {
                target,
                k: 1.0,
                s,
                result: r.ok(),
            })
            .collect();
        let records = evaluate_candidates(&teacher, &outcomes, &self.splits.val)?;
        self.write_records("sparsity_records.csv", &records)?;
        let teacher_val = evaluate(&teacher, &self.splits.val)?;
        let test = &self.splits.test;
        let mut finisher = |m: &Model| Ok((evaluate(m, test)?, None));
        let (table, _) = search_sparsity(
            &teacher,
            &records,
            teacher_val,
            &sp.x_grid,
            &sp.s,
            &mut finisher,
        )?;
        table.write_csv(&self.out.join("sparsity.csv"), "x_or_s")?;
        let mut uniform = BTreeMap::new();
        for r in &table.rows {
            self.metrics.write(&MetricRow {
                accuracy: Some(r.acc_pre_ft),
                params: Some(r.total_params),
                sparsity: (r.source == ParetoSource::UniformSparsity).then_some(r.x_or_k),
                ..self.metrics.row(&format!("sparsity-{}", r.source.name()))
            })?;
            if r.source == ParetoSource::UniformSparsity {
                uniform.insert(
                    format!("{}", r.x_or_k),
                    json!({ "test_acc": r.acc_pre_ft, "params": r.total_params }),
                );
            }
        }
        self.note("uniform_sparsity", json!(uniform));
        Ok(())
    }

    fn datafree(&mut self) -> Result<()> {
        let teacher = self.teacher()?;
        let df = self.cfg.datafree.clone();
        let train = df.train.to_train();
        let norm = match df.init {
            InitKind::Teacher => NormPolicy::Frozen,
            InitKind::Random => NormPolicy::Batch,
        };
        let jobs = self.nd_jobs(
            "gnd",
            &df.k,
            df.init,
            norm,
            df.source,
            &[],
            &train,
            df.gaussian_std,
        )?;
        let (specs, jobs): (Vec<_>, Vec<_>) =
            jobs.into_iter().map(|(i, k, s, j)| ((i, k, s), j)).unzip();
        let meta: Vec<_> = specs.iter().map(|&(i, k, _)| (Some(i), k, 0.0)).collect();
        let results = self.run_nd("datafree-nd", &jobs, &meta)?;
        let mut students: BTreeMap<usize, Students> = BTreeMap::new();
        for ((i, k, spec), r) in specs.into_iter().zip(results) {
            let j = df.k.iter().position(|&x| x == k).expect("k listed");
            let ns = NeighbourhoodSpec { index: i, ..spec };
            students
                .entry(j)
                .or_insert_with(|| vec![None; teacher.len()])[i] = Some((ns, r?.params));
        }
        let dir = self.out.join("datafree");
        std::fs::create_dir_all(&dir)?;
        let mut res = BTreeMap::new();
        for (j, s) in students {
            let k = df.k[j];
            let m = compose_students(&teacher, &s)?;
            save_checkpoint(&m, &dir.join(format!("k{}.ndck", k_name(k))))?;
            let acc = evaluate(&m, &self.splits.test)?;
            self.metrics.write(&MetricRow {
                accuracy: Some(acc),
                k: Some(k),
                params: Some(m.param_count()),
                ..self.metrics.row("datafree-nd")
            })?;
            res.insert(k_name(k), json!(acc));
        }
        self.note("gnd_test_acc", json!(res));
        if df.e2e_steps > 0 {
            let mut s = Model::init(teacher.spec.clone(), &mut self.rng("gnkd-init"))?;
            let mut train = df.e2e_train.to_train();
            train.steps = df.e2e_steps;
            let cfg = KdConfig {
                temperature: df.temperature,
                hard_weight: 0.0,
                train,
            };
            let start = Instant::now();
            {
                let mut hook = self.metrics.heartbeat(self.metrics.row("datafree-kd"));
                distill_gaussian_end2end_with(
                    &mut s,
                    &teacher,
                    &cfg,
                    &self.rng("gnkd-train"),
                    &mut hook,
                )?;
            }
            self.metrics.check()?;
            let t = start.elapsed().as_secs_f64();
            self.time("datafree-kd", t, t, 1);
            save_checkpoint(&s, &dir.join("gnkd.ndck"))?;
            let acc = self.eval_row("datafree-kd", &s, &self.splits.test)?;
            self.note("gnkd_test_acc", json!(acc));
        }
        Ok(())
    }

    fn report(&mut self) -> Result<()> {
        let runs = if self.cfg.artifacts.runs.is_empty() {
            vec![self.out.clone()]
        } else {
            self.cfg.artifacts.runs.clone()
        };
        let mut res = BTreeMap::new();
        for (j, run) in runs.iter().enumerate() {
            let name = run
                .file_name()
                .and_then(|n| n.to_str())
                .map(String::from)
                .unwrap_or_else(|| format!("run{j}"));
            let dest = self.out.join("report").join(&name);
            std::fs::create_dir_all(&dest)?;
            let mut files = Vec::new();
            for kind in FigureKind::ALL {
                for f in figure_data(kind, run, &dest)? {
                    files.push(
                        f.file_name()
                            .and_then(|n| n.to_str())
                            .unwrap_or_default()
                            .to_string(),
                    );
                }
            }
            let timing = run.join("timing.csv");
            let mut entry = json!({ "files": files });
            if timing.exists() {
                let rep = timing_report(&read_timing(&timing)?);
                rep.write_csv(&dest.join("timing_report.csv"))?;
                entry["nd_kd_ratio"] = json!(rep.nd_kd_ratio);
            }
            res.insert(name, entry);
        }
        self.note("report", json!(res));
        Ok(())
    }
}
