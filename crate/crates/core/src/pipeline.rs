//! Autonomous configuration lifecycle: collect labeled images with spiral
//! search, split by insertion, train one regressor per camera, gate
//! deployment on validation error, then insert with or without servoing.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{error_direction, in_plane, normalize_error, GeometryError};
use crate::perception::{
    evaluate, train, Dataset, Metrics, OffsetTruth, PerceptionError, RegressorModel, Sample, TrainHyper, TrainReport,
};
use crate::search::SearchPattern;
use crate::seeds;
use crate::servoing::{visual_servo, ServoConfig, ServoError};
use crate::sim::{new_world, render, spiral_insert, ComponentStyle, InsertionOutcome, SimError, TimingModel, WorldConfig, WorldState};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset has {groups} insertions, need more than {train} for a validation split")]
    TooFewInsertions { groups: usize, train: usize },
    #[error("spiral search failed on every collection insertion")]
    AllInsertionsFailed,
    #[error("servo mode requires deployed models")]
    ModelsNotDeployed,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Servo(#[from] ServoError),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::InvalidConfig(_) => "InvalidConfig",
            PipelineError::TooFewInsertions { .. } => "TooFewInsertions",
            PipelineError::AllInsertionsFailed => "AllInsertionsFailed",
            PipelineError::ModelsNotDeployed => "ModelsNotDeployed",
            PipelineError::Sim(e) => e.kind(),
            PipelineError::Geometry(e) => e.kind(),
            PipelineError::Perception(e) => e.kind(),
            PipelineError::Servo(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionConfig {
    pub n_insertions: usize,
    pub samples_per_insertion: usize,
    /// Offsets are sampled with magnitude uniform in `[0, max_offset_mag]`.
    pub max_offset_mag: f64,
    /// Heights above the hole plane are uniform in `[0, max_height]`.
    pub max_height: f64,
    pub train_insertions: usize,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig {
            n_insertions: 10,
            samples_per_insertion: 100,
            max_offset_mag: 1.0,
            max_height: 1.0,
            train_insertions: 8,
        }
    }
}

impl CollectionConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.n_insertions == 0 || self.samples_per_insertion == 0 {
            return bad("insertion and sample counts must be positive".into());
        }
        if !(self.train_insertions > 0 && self.train_insertions < self.n_insertions) {
            return bad(format!(
                "train_insertions must be in 1..{} to leave validation insertions, got {}",
                self.n_insertions, self.train_insertions
            ));
        }
        if !(self.max_offset_mag > 0.0 && self.max_offset_mag.is_finite()) {
            return bad("max_offset_mag must be positive".into());
        }
        if !(self.max_height >= 0.0 && self.max_height.is_finite()) {
            return bad("max_height must be non-negative".into());
        }
        Ok(())
    }
}

/// Seeded generator of independent worlds. Every (style, stream, index)
/// triple maps to its own world seed.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldFactory {
    pub base: WorldConfig,
}

/// Stream used for data collection worlds.
pub const COLLECTION_STREAM: u64 = 0;
/// Stream used for benchmark worlds.
pub const BENCH_STREAM: u64 = 1;

impl WorldFactory {
    pub fn new(base: WorldConfig) -> Self {
        WorldFactory { base }
    }

    pub fn config(&self, style: ComponentStyle, stream: u64, index: u64) -> WorldConfig {
        WorldConfig {
            seed: seeds::derive(self.base.seed, &[style.index() as u64, stream, index]),
            component_style: style,
            ..self.base.clone()
        }
    }

    pub fn world(&self, style: ComponentStyle, stream: u64, index: u64) -> Result<WorldState, SimError> {
        new_world(self.config(style, stream, index))
    }
}

fn collect_insertion(
    factory: &WorldFactory,
    style: ComponentStyle,
    index: usize,
    cfg: &CollectionConfig,
    pattern: &SearchPattern,
) -> Result<Option<Vec<Sample>>, PipelineError> {
    let mut world = factory.world(style, COLLECTION_STREAM, index as u64)?;
    let start = world.nominal_tcp();
    let outcome = spiral_insert(&mut world, start, pattern, &TimingModel::default());
    if !outcome.success {
        log::warn!("collection insertion {index} ({style}): spiral search exhausted, skipping");
        return Ok(None);
    }
    let l = world.l();
    // The successful position is taken as the in-plane zero, on the nominal plane.
    let zero = outcome.final_tcp - l * (outcome.final_tcp - world.nominal_hole).dot(&l);
    let dirs = world
        .cameras
        .iter()
        .map(|c| error_direction(&l, &(world.nominal_hole - c.position)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut samples = Vec::with_capacity(cfg.samples_per_insertion * world.cameras.len());
    for _ in 0..cfg.samples_per_insertion {
        let angle = world.rng.random::<f64>() * std::f64::consts::TAU;
        let mag = world.rng.random::<f64>() * cfg.max_offset_mag;
        let height = world.rng.random::<f64>() * cfg.max_height;
        let offset = world.plane_vector([mag * angle.cos(), mag * angle.sin()]);
        let tcp = zero + offset - height * l;
        world.approach(tcp);
        for (j, u) in dirs.iter().enumerate() {
            let obs = render(&world, j, &tcp)?;
            let q = -offset.dot(u);
            samples.push(Sample {
                observation: obs,
                label: normalize_error(q, &world.cameras[j]),
                insertion_id: index as u32,
                camera_index: j,
                offset_truth: OffsetTruth { q_mm: q, height_mm: height },
            });
        }
    }
    Ok(Some(samples))
}

/// Gathers labeled images around spiral-search successes for one component
/// style. Insertions whose search fails are skipped.
pub fn collect_dataset(
    factory: &WorldFactory,
    style: ComponentStyle,
    cfg: &CollectionConfig,
    pattern: &SearchPattern,
) -> Result<Dataset, PipelineError> {
    if cfg.n_insertions == 0 || cfg.samples_per_insertion == 0 {
        return Err(PipelineError::InvalidConfig("insertion and sample counts must be positive".into()));
    }
    let probe = factory.world(style, COLLECTION_STREAM, 0)?;
    let per_insertion: Vec<Option<Vec<Sample>>> = (0..cfg.n_insertions)
        .into_par_iter()
        .map(|i| collect_insertion(factory, style, i, cfg, pattern))
        .collect::<Result<_, _>>()?;
    let mut data = Dataset::new(probe.cameras.clone(), style);
    for s in per_insertion.into_iter().flatten() {
        data.samples.extend(s);
    }
    if data.is_empty() {
        return Err(PipelineError::AllInsertionsFailed);
    }
    Ok(data)
}

/// Random insertion-wise split: every insertion lands wholly in one side.
pub fn split_by_insertion(data: &Dataset, train_insertions: usize, seed: u64) -> Result<(Dataset, Dataset), PipelineError> {
    let mut ids: Vec<u32> = data.insertion_ids().into_iter().collect();
    if ids.len() <= train_insertions || train_insertions == 0 {
        return Err(PipelineError::TooFewInsertions { groups: ids.len(), train: train_insertions });
    }
    ids.shuffle(&mut seeds::rng(seed, &[0x53504c4954]));
    let train_ids: BTreeSet<u32> = ids[..train_insertions].iter().copied().collect();
    let val_ids: BTreeSet<u32> = ids[train_insertions..].iter().copied().collect();
    Ok((data.subset(&train_ids), data.subset(&val_ids)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Deploy,
    CollectMore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeploymentGate {
    pub max_val_mae_mm: f64,
}

impl DeploymentGate {
    /// Half the insertion tolerance.
    pub fn for_tolerance(tolerance: f64) -> Self {
        DeploymentGate { max_val_mae_mm: tolerance / 2.0 }
    }

    pub fn decide<'a>(&self, maes: impl IntoIterator<Item = &'a f64>) -> Decision {
        let mut any = false;
        for &m in maes {
            any = true;
            if !(m <= self.max_val_mae_mm) {
                return Decision::CollectMore;
            }
        }
        if any {
            Decision::Deploy
        } else {
            Decision::CollectMore
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigureOptions {
    /// Train one model per style on all cameras instead of one per camera.
    pub share_cameras: bool,
    /// Seed of the insertion-wise split.
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    /// `None` for a model shared across cameras.
    pub camera_index: Option<usize>,
    pub metrics: Metrics,
    pub train_report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct StyleConfiguration {
    pub style: ComponentStyle,
    pub dataset: Dataset,
    pub train_insertions: Vec<u32>,
    pub val_insertions: Vec<u32>,
    /// One model per camera (the same model repeated when shared).
    pub models: Vec<RegressorModel>,
    pub reports: Vec<ModelReport>,
    pub decision: Decision,
}

#[derive(Debug, Clone)]
pub struct Configuration {
    pub styles: Vec<StyleConfiguration>,
    pub gate: DeploymentGate,
}

impl Configuration {
    /// Deploy only if every style passed the gate.
    pub fn decision(&self) -> Decision {
        if !self.styles.is_empty() && self.styles.iter().all(|s| s.decision == Decision::Deploy) {
            Decision::Deploy
        } else {
            Decision::CollectMore
        }
    }

    pub fn models_for(&self, style: ComponentStyle) -> Option<&[RegressorModel]> {
        self.styles
            .iter()
            .find(|s| s.style == style && s.decision == Decision::Deploy)
            .map(|s| s.models.as_slice())
    }
}

/// Split, train, evaluate and gate an already collected dataset.
pub fn configure_dataset(
    data: Dataset,
    train_insertions: usize,
    hyper: &TrainHyper,
    gate: &DeploymentGate,
    opts: &ConfigureOptions,
) -> Result<StyleConfiguration, PipelineError> {
    let style = data.style;
    let (train_set, val_set) = split_by_insertion(&data, train_insertions, seeds::derive(opts.split_seed, &[style.index() as u64]))?;
    let train_ids = train_set.insertion_ids();
    let val_ids = val_set.insertion_ids();
    assert!(train_ids.is_disjoint(&val_ids), "insertion leaked across split");
    let n_cams = data.cameras.len();
    let groups: Vec<Option<usize>> = if opts.share_cameras { vec![None] } else { (0..n_cams).map(Some).collect() };

    let trained: Vec<(RegressorModel, ModelReport)> = groups
        .par_iter()
        .map(|&cam| {
            let (t, v) = match cam {
                Some(j) => (train_set.for_camera(j), val_set.for_camera(j)),
                None => (train_set.clone(), val_set.clone()),
            };
            let key = [style.index() as u64, cam.map_or(u64::MAX, |j| j as u64)];
            let h = TrainHyper { seed: seeds::derive(hyper.seed, &key), ..hyper.clone() };
            let (model, train_report) = train(&t, &v, &h)?;
            let metrics = evaluate(&model, &v, &mut seeds::rng(h.seed, &[0x4556414c]))?;
            log::info!(
                "{style} camera {:?}: val mae {:.4} mm after {} epochs",
                cam,
                metrics.mae_mm_at_nominal,
                train_report.epochs_run
            );
            Ok((model, ModelReport { camera_index: cam, metrics, train_report }))
        })
        .collect::<Result<_, PipelineError>>()?;

    let decision = gate.decide(trained.iter().map(|(_, r)| &r.metrics.mae_mm_at_nominal));
    let models = if opts.share_cameras { vec![trained[0].0.clone(); n_cams] } else { trained.iter().map(|(m, _)| m.clone()).collect() };
    Ok(StyleConfiguration {
        style,
        dataset: data,
        train_insertions: train_ids.into_iter().collect(),
        val_insertions: val_ids.into_iter().collect(),
        models,
        reports: trained.into_iter().map(|(_, r)| r).collect(),
        decision,
    })
}

/// Collect, split, train and gate every requested style.
pub fn configure(
    factory: &WorldFactory,
    styles: &[ComponentStyle],
    cfg: &CollectionConfig,
    pattern: &SearchPattern,
    hyper: &TrainHyper,
    gate: &DeploymentGate,
    opts: &ConfigureOptions,
) -> Result<Configuration, PipelineError> {
    cfg.validate()?;
    hyper.validate()?;
    if !(gate.max_val_mae_mm >= 0.0) {
        return Err(PipelineError::InvalidConfig("gate threshold must be non-negative".into()));
    }
    let styles = styles
        .iter()
        .map(|&s| {
            let data = collect_dataset(factory, s, cfg, pattern)?;
            configure_dataset(data, cfg.train_insertions, hyper, gate, opts)
        })
        .collect::<Result<_, _>>()?;
    Ok(Configuration { styles, gate: *gate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InsertMode {
    #[serde(rename = "novs")]
    SpiralOnly,
    #[serde(rename = "vs")]
    ServoThenSpiral,
}

impl InsertMode {
    pub const ALL: [InsertMode; 2] = [InsertMode::ServoThenSpiral, InsertMode::SpiralOnly];

    pub fn name(self) -> &'static str {
        match self {
            InsertMode::SpiralOnly => "novs",
            InsertMode::ServoThenSpiral => "vs",
        }
    }
}

impl fmt::Display for InsertMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InsertMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vs" | "servo" | "servo_then_spiral" => Ok(InsertMode::ServoThenSpiral),
            "novs" | "spiral" | "spiral_only" => Ok(InsertMode::SpiralOnly),
            other => Err(format!("unknown mode `{other}` (expected vs or novs)")),
        }
    }
}

/// One insertion from the world's current TCP. `servo` carries the
/// deployed models; servo mode without it fails with `ModelsNotDeployed`.
pub fn insert<R: Rng + ?Sized>(
    world: &mut WorldState,
    mode: InsertMode,
    servo: Option<&ServoConfig>,
    pattern: &SearchPattern,
    timing: &TimingModel,
    rng: &mut R,
) -> Result<InsertionOutcome, PipelineError> {
    let start = world.tcp;
    let true_initial_error = world.in_plane_error(&start).norm();
    match mode {
        InsertMode::SpiralOnly => Ok(spiral_insert(world, start, pattern, timing)),
        InsertMode::ServoThenSpiral => {
            let cfg = servo.ok_or(PipelineError::ModelsNotDeployed)?;
            if cfg.models.is_empty() {
                return Err(PipelineError::ModelsNotDeployed);
            }
            let run = visual_servo(world, cfg, rng)?;
            let here = world.tcp;
            let mut out = spiral_insert(world, here, pattern, timing);
            out.post_servo_retrospective_error = out.retrospective_error;
            out.retrospective_error = out.success.then(|| in_plane(&(out.final_tcp - start), &world.l()).norm());
            out.true_initial_error = true_initial_error;
            out.servo_residuals = run.residuals;
            out.servo_time = run.time;
            out.simulated_time = run.time + out.search_time;
            Ok(out)
        }
    }
}

/// Rolling mean of post-servo spiral attempts. A rising mean signals that
/// the images no longer match the training distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMonitor {
    pub window: usize,
    pub threshold: f64,
    recent: VecDeque<u32>,
}

impl Default for ShiftMonitor {
    fn default() -> Self {
        ShiftMonitor::new(20, 3.0)
    }
}

impl ShiftMonitor {
    pub fn new(window: usize, threshold: f64) -> Self {
        ShiftMonitor { window: window.max(1), threshold, recent: VecDeque::new() }
    }

    /// Records one insertion and returns the current recommendation.
    pub fn record(&mut self, attempts: u32) -> Decision {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(attempts);
        self.recommendation()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.recent.is_empty()).then(|| self.recent.iter().map(|&a| a as f64).sum::<f64>() / self.recent.len() as f64)
    }

    /// `CollectMore` once a full window averages above the threshold.
    pub fn recommendation(&self) -> Decision {
        match self.mean() {
            Some(m) if self.recent.len() == self.window && m > self.threshold => Decision::CollectMore,
            _ => Decision::Deploy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Vec3};
    use crate::search::generate_pattern;

    fn small_cfg() -> CollectionConfig {
        CollectionConfig { n_insertions: 3, samples_per_insertion: 5, train_insertions: 2, ..Default::default() }
    }

    #[test]
    fn collection_counts_and_labels() {
        let factory = WorldFactory::new(WorldConfig::default());
        let pattern = generate_pattern(0.1, 1.0).unwrap();
        let d = collect_dataset(&factory, ComponentStyle::LED, &small_cfg(), &pattern).unwrap();
        assert_eq!(d.len(), 3 * 5 * 2);
        assert_eq!(d.groups().len(), 3);
        assert!(d.validate().unwrap() <= 1e-9);
    }

    #[test]
    fn hand_computed_label() {
        // u = (1,0,0), f = 1000, r = 64, z = 500; offset (0.5, 0) mm.
        let cam = CameraModel::looking_at(Vec3::new(0.0, -500.0, 0.0), Vec3::zeros(), &Vec3::new(0.0, 0.0, -1.0), 1000.0, 64).unwrap();
        let u = error_direction(&Vec3::new(0.0, 0.0, -1.0), &(Vec3::zeros() - cam.position)).unwrap();
        assert!((u - Vec3::x()).norm() < 1e-12);
        let y = normalize_error(-Vec3::new(0.5, 0.0, 0.0).dot(&u), &cam);
        assert!((y + 0.015625).abs() < 1e-15);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let factory = WorldFactory::new(WorldConfig::default());
        let pattern = generate_pattern(0.1, 1.0).unwrap();
        let cfg = CollectionConfig { n_insertions: 5, samples_per_insertion: 2, train_insertions: 4, ..Default::default() };
        let d = collect_dataset(&factory, ComponentStyle::PH, &cfg, &pattern).unwrap();
        let (t1, v1) = split_by_insertion(&d, 4, 3).unwrap();
        let (t2, v2) = split_by_insertion(&d, 4, 3).unwrap();
        assert_eq!((t1.insertion_ids(), v1.insertion_ids()), (t2.insertion_ids(), v2.insertion_ids()));
        assert!(t1.insertion_ids().is_disjoint(&v1.insertion_ids()));
        assert_eq!(t1.len() + v1.len(), d.len());
        assert!(matches!(split_by_insertion(&d, 5, 0), Err(PipelineError::TooFewInsertions { groups: 5, train: 5 })));
    }

    #[test]
    fn single_insertion_config_is_invalid() {
        let cfg = CollectionConfig { n_insertions: 1, train_insertions: 1, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(PipelineError::InvalidConfig(_))));
    }

    #[test]
    fn exhausted_collection_fails() {
        let factory = WorldFactory::new(WorldConfig { hole_uncertainty_sigma: 5.0, ..Default::default() });
        let pattern = generate_pattern(0.1, 0.0).unwrap();
        let err = collect_dataset(&factory, ComponentStyle::PH, &small_cfg(), &pattern).unwrap_err();
        assert!(matches!(err, PipelineError::AllInsertionsFailed));
    }

    #[test]
    fn gate_decisions() {
        let g = DeploymentGate::for_tolerance(0.1);
        assert_eq!(g.decide(&[0.01, 0.049]), Decision::Deploy);
        assert_eq!(g.decide(&[0.01, 0.051]), Decision::CollectMore);
        assert_eq!(g.decide(&[]), Decision::CollectMore);
        assert_eq!(DeploymentGate { max_val_mae_mm: 0.0 }.decide(&[1e-6]), Decision::CollectMore);
    }

    #[test]
    fn servo_mode_needs_models() {
        let mut w = new_world(WorldConfig::default()).unwrap();
        let pattern = generate_pattern(0.1, 2.0).unwrap();
        let err = insert(&mut w, InsertMode::ServoThenSpiral, None, &pattern, &TimingModel::default(), &mut seeds::rng(0, &[]));
        assert!(matches!(err, Err(PipelineError::ModelsNotDeployed)));
    }

    #[test]
    fn oracle_servo_inserts_first_attempt() {
        let t = TimingModel::default();
        let pattern = generate_pattern(0.1, 2.0).unwrap();
        for seed in 0..10 {
            let mut w = new_world(WorldConfig { seed, ..Default::default() }).unwrap();
            let models = w.cameras.iter().map(|c| RegressorModel::oracle(c.resolution, 0.0)).collect();
            let cfg = ServoConfig::for_world(&w, models, 3, t);
            let out = insert(&mut w, InsertMode::ServoThenSpiral, Some(&cfg), &pattern, &t, &mut seeds::rng(0, &[])).unwrap();
            assert!(out.success);
            assert_eq!(out.attempts, 1);
            assert!((out.simulated_time - (t.servo_time(3, 2) + t.t_attempt)).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_monitor_alerts_on_full_window() {
        let mut m = ShiftMonitor::new(3, 3.0);
        assert_eq!(m.record(10), Decision::Deploy);
        assert_eq!(m.record(10), Decision::Deploy);
        assert_eq!(m.record(10), Decision::CollectMore);
        m.record(1);
        m.record(1);
        assert_eq!(m.record(1), Decision::Deploy);
    }

    #[test]
    fn mode_names() {
        assert_eq!("vs".parse::<InsertMode>().unwrap(), InsertMode::ServoThenSpiral);
        assert_eq!("novs".parse::<InsertMode>().unwrap(), InsertMode::SpiralOnly);
        assert!("x".parse::<InsertMode>().is_err());
    }
}
