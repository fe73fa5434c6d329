//! TOML experiment configuration: schema, defaults and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::distill::{LrSchedule, NormPolicy, TrainConfig};
use crate::network::Preset;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TrainTeacher,
    Cache,
    Distill,
    Compose,
    Finetune,
    PerturbSweep,
    WeightAccumulation,
    Search,
    Sparsify,
    Datafree,
    Report,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        ExperimentKind::TrainTeacher,
        ExperimentKind::Cache,
        ExperimentKind::Distill,
        ExperimentKind::Compose,
        ExperimentKind::Finetune,
        ExperimentKind::PerturbSweep,
        ExperimentKind::WeightAccumulation,
        ExperimentKind::Search,
        ExperimentKind::Sparsify,
        ExperimentKind::Datafree,
        ExperimentKind::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TrainTeacher => "train-teacher",
            ExperimentKind::Cache => "cache",
            ExperimentKind::Distill => "distill",
            ExperimentKind::Compose => "compose",
            ExperimentKind::Finetune => "finetune",
            ExperimentKind::PerturbSweep => "perturb-sweep",
            ExperimentKind::WeightAccumulation => "weight-accumulation",
            ExperimentKind::Search => "search",
            ExperimentKind::Sparsify => "sparsify",
            ExperimentKind::Datafree => "datafree",
            ExperimentKind::Report => "report",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        ExperimentKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory with the CIFAR-10 binary batches.
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_level: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            path: None,
            classes: 10,
            channels: 3,
            height: 12,
            width: 12,
            noise_level: 2.5,
            train_per_class: 500,
            val_per_class: 100,
            test_per_class: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub preset: Preset,
    /// Stage widths; the preset's defaults when absent.
    pub widths: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            preset: Preset::MiniResnet8,
            widths: None,
        }
    }
}

/// Existing artifacts to reuse instead of recomputing them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactsConfig {
    pub teacher: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub students_dir: Option<PathBuf>,
    /// Run directories summarized by `report`.
    pub runs: Vec<PathBuf>,
}

/// Optimizer settings of one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment_shift: usize,
}

impl TrainSection {
    fn with(steps: usize, lr: LrSchedule, weight_decay: f64, augment_shift: usize) -> Self {
        TrainSection {
            steps,
            batch_size: 64,
            lr,
            momentum: 0.9,
            weight_decay,
            augment_shift,
        }
    }

    pub fn to_train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr.clone(),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            augment_shift: self.augment_shift,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection::with(1000, LrSchedule::Constant { lr: 0.01 }, 0.0, 0)
    }
}

fn warmup_decay(steps: usize) -> LrSchedule {
    LrSchedule::WarmupExpDecay {
        start: 0.01,
        peak: 0.1,
        warmup_steps: (steps / 15).max(1),
        decay_factor: 0.1,
        decay_steps: steps.max(1),
    }
}

fn nd_schedule(steps: usize) -> LrSchedule {
    LrSchedule::WarmupExpDecay {
        start: 0.01,
        peak: 0.2,
        warmup_steps: 50,
        decay_factor: 0.05,
        decay_steps: steps,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub train: TrainSection,
    /// Train-time activation noise after every neighbourhood.
    pub noise_sigma: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            train: TrainSection::with(1500, warmup_decay(1500), 1e-4, 1),
            noise_sigma: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Random,
    Teacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Cache,
    Online,
    Gaussian,
    /// Gaussian draws shaped by the teacher's last normalization affine.
    GaussianTeacherNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    /// Bottleneck multipliers; one ND job per (k, neighbourhood).
    pub k: Vec<f64>,
    pub init: InitKind,
    /// Frozen for teacher-initialized students, batch statistics otherwise.
    pub norm: Option<NormPolicy>,
    pub source: SourceKind,
    /// Look-ahead weights `α_1 … α_d`.
    pub lookahead: Vec<f64>,
    pub train: TrainSection,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            k: vec![1.0, 0.75, 0.5],
            init: InitKind::Random,
            norm: None,
            source: SourceKind::Cache,
            lookahead: Vec::new(),
            train: TrainSection::with(1000, nd_schedule(1000), 0.0, 0),
        }
    }
}

impl DistillConfig {
    pub fn norm_policy(&self) -> NormPolicy {
        self.norm.unwrap_or(match self.init {
            InitKind::Teacher => NormPolicy::Frozen,
            InitKind::Random => NormPolicy::Batch,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub temperature: f64,
    pub hard_weight: f64,
    pub train: TrainSection,
    /// Also train each student architecture from scratch with cross-entropy.
    pub scratch_baseline: bool,
    /// Also train each student end to end with the distillation loss from
    /// random init (the timing baseline); 0 steps disables it.
    pub kd_baseline_steps: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            temperature: 2.5,
            hard_weight: 1.0,
            train: TrainSection::with(500, LrSchedule::Constant { lr: 0.01 }, 0.0, 0),
            scratch_baseline: false,
            kd_baseline_steps: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub epsilons: Vec<f64>,
    /// Affected neighbourhood sets; the first neighbourhood alone and all of
    /// them when absent.
    pub affected: Option<Vec<Vec<usize>>>,
    pub seeds: Vec<u64>,
}

pub fn default_epsilons() -> Vec<f64> {
    vec![
        0.0, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0, 1.25, 1.5, 2.0, 2.5,
        3.0,
    ]
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            epsilons: default_epsilons(),
            affected: None,
            seeds: crate::perturb::DEFAULT_SEEDS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccumulationConfig {
    /// Per-layer accuracy drops to calibrate for, in points.
    pub target_drops: Vec<f64>,
    /// Calibration tolerance as a fraction of the target drop.
    pub tolerance_frac: f64,
    /// Indices into the weight-layer list; all of them when absent.
    pub layers: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
}

impl Default for AccumulationConfig {
    fn default() -> Self {
        AccumulationConfig {
            target_drops: vec![0.05, 2.0],
            tolerance_frac: 0.5,
            layers: None,
            seeds: crate::perturb::DEFAULT_SEEDS.to_vec(),
        }
    }
}

pub fn default_x_grid() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 1.0, 2.0, 5.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Candidate bottleneck multipliers per neighbourhood.
    pub k: Vec<f64>,
    /// Accuracy-drop budgets in points.
    pub x_grid: Vec<f64>,
    /// Fine-tune every composed student before the final evaluation.
    pub finetune: bool,
    /// Width multipliers for end-to-end baselines (trained with the teacher
    /// recipe).
    pub width_baselines: Vec<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            k: vec![0.25, 0.5, 0.75, 1.0],
            x_grid: default_x_grid(),
            finetune: false,
            width_baselines: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsifyConfig {
    pub s: Vec<f64>,
    pub ramp_steps: usize,
    pub hold_steps: usize,
    pub update_every: usize,
    pub x_grid: Vec<f64>,
    pub train: TrainSection,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        SparsifyConfig {
            s: vec![0.0, 0.25, 0.5, 0.75, 0.9],
            ramp_steps: 600,
            hold_steps: 400,
            update_every: 50,
            x_grid: default_x_grid(),
            train: TrainSection::with(1000, LrSchedule::Constant { lr: 0.02 }, 0.0, 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatafreeConfig {
    pub k: Vec<f64>,
    pub source: SourceKind,
    /// Standard deviation of the Gaussian inputs (multiplies any
    /// teacher-derived scale).
    pub gaussian_std: f64,
    pub init: InitKind,
    pub train: TrainSection,
    /// Steps of the end-to-end Gaussian-input KD baseline; 0 disables it.
    pub e2e_steps: usize,
    pub e2e_train: TrainSection,
    pub temperature: f64,
}

impl Default for DatafreeConfig {
    fn default() -> Self {
        DatafreeConfig {
            k: vec![1.0],
            source: SourceKind::Gaussian,
            gaussian_std: 1.0,
            init: InitKind::Random,
            train: TrainSection::with(2000, nd_schedule(2000), 0.0, 0),
            e2e_steps: 2000,
            e2e_train: TrainSection::with(2000, warmup_decay(2000), 0.0, 0),
            temperature: 2.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub kind: ExperimentKind,
    /// Mandatory; kept optional here so a missing seed is reported with
    /// the other validation errors.
    pub seed: Option<u64>,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Write wall times into metrics.csv (makes the run non-reproducible
    /// byte for byte).
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "heartbeat_every")]
    pub heartbeat_every: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub artifacts: ArtifactsConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub perturb: PerturbConfig,
    #[serde(default)]
    pub accumulation: AccumulationConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub sparsify: SparsifyConfig,
    #[serde(default)]
    pub datafree: DatafreeConfig,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn heartbeat_every() -> usize {
    50
}

impl ExperimentConfig {
    /// Defaults for `kind` with the given seed.
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        let text = format!("kind = \"{}\"\nseed = {seed}\n", kind.name());
        parse_config(&text).expect("defaults are valid")
    }

    pub fn experiment_id(&self) -> String {
        self.id
            .clone()
            .unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Semantic checks; every problem is reported with its field path.
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            e.push(format!(
                "schema_version: unsupported version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.seed.is_none() {
            e.push("seed: required".into());
        }
        if self.workers == Some(0) {
            e.push("workers: must be >= 1".into());
        }
        if self.heartbeat_every == 0 {
            e.push("heartbeat_every: must be >= 1".into());
        }
        let d = &self.data;
        for (name, v) in [
            ("classes", d.classes),
            ("channels", d.channels),
            ("height", d.height),
            ("width", d.width),
            ("train_per_class", d.train_per_class),
            ("test_per_class", d.test_per_class),
        ] {
            if v == 0 {
                e.push(format!("data.{name}: must be >= 1"));
            }
        }
        if d.classes < 2 {
            e.push("data.classes: need at least 2 classes".into());
        }
        if !(d.noise_level.is_finite() && d.noise_level >= 0.0) {
            e.push("data.noise_level: must be finite and >= 0".into());
        }
        if d.source == DataSource::Cifar10 && d.path.is_none() {
            e.push("data.path: required for the cifar10 source".into());
        }
        if let Some(w) = &self.model.widths {
            if w.len() != self.model.preset.default_widths().len() || w.contains(&0) {
                e.push(format!(
                    "model.widths: expected {} positive widths",
                    self.model.preset.default_widths().len()
                ));
            }
        }
        check_train(&mut e, "teacher.train", &self.teacher.train);
        check_train(&mut e, "distill.train", &self.distill.train);
        check_train(&mut e, "finetune.train", &self.finetune.train);
        check_train(&mut e, "sparsify.train", &self.sparsify.train);
        check_train(&mut e, "datafree.train", &self.datafree.train);
        check_train(&mut e, "datafree.e2e_train", &self.datafree.e2e_train);
        if !(self.teacher.noise_sigma.is_finite() && self.teacher.noise_sigma >= 0.0) {
            e.push("teacher.noise_sigma: must be finite and >= 0".into());
        }
        check_multipliers(&mut e, "distill.k", &self.distill.k);
        check_multipliers(&mut e, "search.k", &self.search.k);
        check_multipliers(&mut e, "datafree.k", &self.datafree.k);
        for (name, ks) in [("distill", &self.distill.k), ("datafree", &self.datafree.k)] {
            let init = if name == "distill" {
                self.distill.init
            } else {
                self.datafree.init
            };
            if init == InitKind::Teacher && ks.iter().any(|&k| k != 1.0) {
                e.push(format!(
                    "{name}.init: teacher initialization needs k = 1 for every entry"
                ));
            }
        }
        if matches!(self.datafree.source, SourceKind::Cache | SourceKind::Online) {
            e.push("datafree.source: must be gaussian or gaussian-teacher-norm".into());
        }
        if !(self.datafree.gaussian_std.is_finite() && self.datafree.gaussian_std > 0.0) {
            e.push("datafree.gaussian_std: must be finite and > 0".into());
        }
        for (i, a) in self.distill.lookahead.iter().enumerate() {
            if !(a.is_finite() && *a >= 0.0) {
                e.push(format!("distill.lookahead[{i}]: must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("finetune.temperature", self.finetune.temperature),
            ("datafree.temperature", self.datafree.temperature),
        ] {
            if !(v.is_finite() && v > 0.0) {
                e.push(format!("{name}: must be > 0"));
            }
        }
        if !(self.finetune.hard_weight.is_finite() && self.finetune.hard_weight >= 0.0) {
            e.push("finetune.hard_weight: must be finite and >= 0".into());
        }
        for (i, eps) in self.perturb.epsilons.iter().enumerate() {
            if !(eps.is_finite() && *eps >= 0.0) {
                e.push(format!("perturb.epsilons[{i}]: must be finite and >= 0"));
            }
        }
        if self.perturb.seeds.is_empty() {
            e.push("perturb.seeds: at least one seed".into());
        }
        if self.accumulation.seeds.is_empty() {
            e.push("accumulation.seeds: at least one seed".into());
        }
        for (i, t) in self.accumulation.target_drops.iter().enumerate() {
            if !(t.is_finite() && *t >= 0.0) {
                e.push(format!(
                    "accumulation.target_drops[{i}]: must be finite and >= 0"
                ));
            }
        }
        if !(self.accumulation.tolerance_frac > 0.0 && self.accumulation.tolerance_frac.is_finite())
        {
            e.push("accumulation.tolerance_frac: must be > 0".into());
        }
        for (name, grid) in [
            ("search.x_grid", &self.search.x_grid),
            ("sparsify.x_grid", &self.sparsify.x_grid),
        ] {
            for (i, x) in grid.iter().enumerate() {
                if !(x.is_finite() && *x >= 0.0) {
                    e.push(format!("{name}[{i}]: must be finite and >= 0"));
                }
            }
        }
        for (i, w) in self.search.width_baselines.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                e.push(format!("search.width_baselines[{i}]: must be > 0"));
            }
        }
        for (i, s) in self.sparsify.s.iter().enumerate() {
            if !(0.0..1.0).contains(s) {
                e.push(format!("sparsify.s[{i}]: must be in [0, 1)"));
            }
        }
        if self.sparsify.ramp_steps == 0 || self.sparsify.update_every == 0 {
            e.push("sparsify.ramp_steps, sparsify.update_every: must be >= 1".into());
        }
        if self.kind == ExperimentKind::Report
            && self.artifacts.runs.is_empty()
            && self.out.is_none()
        {
            e.push("artifacts.runs: report needs at least one run directory (or out)".into());
        }
        e
    }
}

fn check_train(e: &mut Vec<String>, path: &str, t: &TrainSection) {
    if t.batch_size == 0 {
        e.push(format!("{path}.batch_size: must be >= 1"));
    }
    if !(0.0..1.0).contains(&t.momentum) {
        e.push(format!("{path}.momentum: must be in [0, 1)"));
    }
    if !(t.weight_decay.is_finite() && t.weight_decay >= 0.0) {
        e.push(format!("{path}.weight_decay: must be finite and >= 0"));
    }
    if t.lr.validate().is_err() {
        e.push(format!("{path}.lr: invalid schedule {:?}", t.lr));
    }
}

fn check_multipliers(e: &mut Vec<String>, path: &str, ks: &[f64]) {
    if ks.is_empty() {
        e.push(format!("{path}: at least one multiplier"));
    }
    for (i, k) in ks.iter().enumerate() {
        if !(*k > 0.0 && *k <= 1.0) {
            e.push(format!("{path}[{i}]: must be in (0, 1]"));
        }
    }
}

/// Parses and validates a config document. Syntax errors, duplicate keys,
/// unknown keys and semantic problems come back as a list of messages,
/// each naming the offending field.
/// Every section's defaults as TOML, so a partial nested table (say
/// `[distill.train]` with only `steps`) keeps that section's other defaults.
fn section_defaults() -> toml::Table {
    fn put<T: Serialize>(t: &mut toml::Table, key: &str, v: T) {
        t.insert(
            key.into(),
            toml::Value::try_from(v).expect("defaults serialize"),
        );
    }
    let mut t = toml::Table::new();
    put(&mut t, "data", DataConfig::default());
    put(&mut t, "model", ModelConfig::default());
    put(&mut t, "teacher", TeacherConfig::default());
    put(&mut t, "distill", DistillConfig::default());
    put(&mut t, "finetune", FinetuneConfig::default());
    put(&mut t, "perturb", PerturbConfig::default());
    put(&mut t, "accumulation", AccumulationConfig::default());
    put(&mut t, "search", SearchConfig::default());
    put(&mut t, "sparsify", SparsifyConfig::default());
    put(&mut t, "datafree", DatafreeConfig::default());
    t
}

/// Overlays `user` on `base`. Tables merge key by key; a tagged table whose
/// `type` changes replaces the default wholesale.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u))
                if u.get("type").is_none_or(|ty| b.get("type") == Some(ty)) =>
            {
                merge(b, u)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let mut value: toml::Value =
        toml::from_str(text).map_err(|e| vec![format!("syntax: {}", e.message())])?;
    if let toml::Value::Table(t) = &mut value {
        let mut merged = section_defaults();
        merge(&mut merged, std::mem::take(t));
        *t = merged;
    }
    let mut unknown = Vec::new();
    let mut track = |path: serde_ignored::Path<'_>| unknown.push(path.to_string());
    let de = serde_ignored::Deserializer::new(value, &mut track);
    let parsed: std::result::Result<ExperimentConfig, _> = serde_path_to_error::deserialize(de);
    let mut errors: Vec<String> = unknown
        .iter()
        .map(|p| format!("{p}: unknown key"))
        .collect();
    match parsed {
        Err(err) => {
            let path = err.path().to_string();
            let path = if path == "." {
                "config".to_string()
            } else {
                path
            };
            errors.push(format!("{path}: {}", err.into_inner().message()));
            Err(errors)
        }
        Ok(cfg) => {
            errors.extend(cfg.validate());
            if errors.is_empty() {
                Ok(cfg)
            } else {
                Err(errors)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("kind = \"finetune\"\nseed = 3\n").unwrap();
        assert_eq!(c.finetune.temperature, 2.5);
        assert_eq!(c.finetune.hard_weight, 1.0);
        assert_eq!(c.teacher.train.momentum, 0.9);
        assert_eq!(c.distill.train.momentum, 0.9);
        assert_eq!(c.search.x_grid, vec![0.1, 0.25, 0.5, 1.0, 2.0, 5.0]);
        assert_eq!(c.schema_version, SCHEMA_VERSION);
        assert_eq!(c.distill.norm_policy(), NormPolicy::Batch);
    }

    #[test]
    fn partial_nested_table_keeps_section_defaults() {
        let c =
            parse_config("kind = \"finetune\"\nseed = 1\n[finetune.train]\nsteps = 7\n").unwrap();
        let d = FinetuneConfig::default().train;
        assert_eq!(c.finetune.train.steps, 7);
        assert_eq!(c.finetune.train.lr, d.lr);
        assert_eq!(c.finetune.train.augment_shift, d.augment_shift);
        let c =
            parse_config("kind = \"distill\"\nseed = 1\n[distill.train.lr]\npeak = 0.1\n").unwrap();
        assert!(
            matches!(c.distill.train.lr, LrSchedule::WarmupExpDecay { peak, warmup_steps: 50, .. } if peak == 0.1)
        );
        let c = parse_config(
            "kind = \"distill\"\nseed = 1\n[distill.train.lr]\ntype = \"constant\"\nlr = 0.3\n",
        )
        .unwrap();
        assert_eq!(c.distill.train.lr, LrSchedule::Constant { lr: 0.3 });
    }

    #[test]
    fn missing_seed_is_reported() {
        let e = parse_config("kind = \"distill\"\n").unwrap_err();
        assert_eq!(e, vec!["seed: required".to_string()]);
    }

    #[test]
    fn unknown_kind_names_the_field() {
        let e = parse_config("kind = \"bake\"\nseed = 1\n").unwrap_err();
        assert_eq!(e.len(), 1);
        assert!(e[0].starts_with("kind:"), "{e:?}");
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let e = parse_config("kind = \"distill\"\nseed = 1\ncolour = 2\n[distill]\nkk = [1.0]\n")
            .unwrap_err();
        assert!(e.contains(&"colour: unknown key".to_string()), "{e:?}");
        assert!(e.contains(&"distill.kk: unknown key".to_string()), "{e:?}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        assert!(parse_config("kind = \"distill\"\nseed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn semantic_errors_carry_paths() {
        let e = parse_config("kind = \"distill\"\nseed = 1\n[distill]\nk = [1.5]\ninit = \"teacher\"\n[finetune]\ntemperature = 0.0\n")
            .unwrap_err();
        assert!(e.iter().any(|m| m.starts_with("distill.k[0]")), "{e:?}");
        assert!(e.iter().any(|m| m.starts_with("distill.init")), "{e:?}");
        assert!(
            e.iter().any(|m| m.starts_with("finetune.temperature")),
            "{e:?}"
        );
    }

    #[test]
    fn normalized_config_roundtrips() {
        let c = ExperimentConfig::new(ExperimentKind::Search, 9);
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }
}
