//! Command-line front end. Every subcommand reads a TOML config, writes a
//! `manifest.json` into `--out` before doing any work, and communicates
//! with other subcommands only through files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{emit_report, run_benchmark, trace_csv, BenchConfig, BenchError, BenchReport};
use crate::geometry::Vec3;
use crate::perception::io::{load_dataset, load_model, save_dataset, save_model};
use crate::perception::{evaluate, Dataset, PerceptionError, RegressorModel, TrainHyper};
use crate::pipeline::{
    collect_dataset, configure, configure_dataset, CollectionConfig, ConfigureOptions, Decision, DeploymentGate,
    InsertMode, ModelReport, PipelineError, StyleConfiguration, WorldFactory,
};
use crate::search::{generate_pattern, SearchError};
use crate::seeds;
use crate::servoing::{visual_servo, ServoConfig, ServoError, DEFAULT_CLAMP_MM};
use crate::sim::{new_world, render, spiral_insert, ComponentStyle, SimError, TimingModel, WorldConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Servo(#[from] ServoError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Io { .. } => "IoError",
            CliError::Search(e) => e.kind(),
            CliError::Sim(e) => e.kind(),
            CliError::Perception(e) => e.kind(),
            CliError::Pipeline(e) => e.kind(),
            CliError::Servo(e) => e.kind(),
            CliError::Bench(e) => e.kind(),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoSection {
    pub n_iters: usize,
    pub clamp_mm: f64,
}

impl Default for ServoSection {
    fn default() -> Self {
        ServoSection { n_iters: 3, clamp_mm: DEFAULT_CLAMP_MM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub insertions_per_style_per_mode: usize,
    pub error_disc_radius: f64,
    pub search_margin: f64,
    pub style_tolerance: BTreeMap<ComponentStyle, f64>,
    pub modes: Vec<InsertMode>,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        BenchSection {
            insertions_per_style_per_mode: b.insertions_per_style_per_mode,
            error_disc_radius: b.error_disc_radius,
            search_margin: b.search_margin,
            style_tolerance: b.style_tolerance,
            modes: b.modes,
        }
    }
}

/// Config file schema. Every section is optional; missing values take
/// their defaults, and the fully resolved config is echoed to the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds world sampling, data splits, training and the benchmark.
    pub seed: u64,
    pub styles: Vec<ComponentStyle>,
    /// Radius of the search pattern used during data collection, mm.
    pub search_radius: f64,
    pub timing: TimingModel,
    pub world: WorldConfig,
    pub collection: CollectionConfig,
    pub train: TrainHyper,
    /// Deployment gate; defaults to half the world tolerance.
    pub gate: Option<DeploymentGate>,
    pub configure: ConfigureOptions,
    pub servo: ServoSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            styles: ComponentStyle::ALL.to_vec(),
            search_radius: 1.0,
            timing: TimingModel::default(),
            world: WorldConfig::default(),
            collection: CollectionConfig::default(),
            train: TrainHyper::default(),
            gate: None,
            configure: ConfigureOptions::default(),
            servo: ServoSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| CliError::Io { path: p.to_path_buf(), source })?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Applies `--seed` and propagates shared values into each section.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.world.seed = self.seed;
        self.train.seed = self.seed;
        self.configure.split_seed = self.seed;
        self.gate.get_or_insert(DeploymentGate::for_tolerance(self.world.tolerance));
        self.world.validate()?;
        self.timing.validate().map_err(CliError::Config)?;
        self.train.validate()?;
        if self.styles.is_empty() {
            return Err(CliError::Config("styles must not be empty".into()));
        }
        Ok(self)
    }

    pub fn gate(&self) -> DeploymentGate {
        self.gate.unwrap_or(DeploymentGate::for_tolerance(self.world.tolerance))
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            component_styles: self.styles.clone(),
            insertions_per_style_per_mode: self.bench.insertions_per_style_per_mode,
            error_disc_radius: self.bench.error_disc_radius,
            tolerance: self.world.tolerance,
            style_tolerance: self.bench.style_tolerance.clone(),
            search_margin: self.bench.search_margin,
            n_iters: self.servo.n_iters,
            clamp_mm: self.servo.clamp_mm,
            seed: self.seed,
            timing: self.timing,
            modes: self.bench.modes.clone(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "peginsert", version, about = "Simulated peg-in-hole insertion with learned in-plane visual servoing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long, env = "PEGINSERT_OUT")]
    pub out: PathBuf,
    /// Worker threads for independent simulations and trainings.
    #[arg(long, env = "PEGINSERT_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct Configured {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the spiral search pattern as CSV.
    Pattern {
        #[arg(long, default_value_t = 0.1)]
        tolerance: f64,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Sample one world, render its camera images and run a spiral search.
    Simulate {
        #[command(flatten)]
        run: Configured,
        #[arg(long)]
        style: Option<ComponentStyle>,
    },
    /// Collect labeled datasets with spiral search.
    Collect {
        #[command(flatten)]
        run: Configured,
    },
    /// Train, evaluate and gate models on collected datasets.
    Train {
        #[command(flatten)]
        run: Configured,
        /// A dataset directory, or a directory of per-style datasets.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Evaluate one model on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Camera whose samples are used; defaults to the model's camera.
        #[arg(long)]
        camera: Option<usize>,
        /// Restrict to the model's validation insertions.
        #[arg(long)]
        val_only: bool,
    },
    /// Servo one world and finish with spiral search.
    Servo {
        #[command(flatten)]
        run: Configured,
        #[arg(long)]
        style: Option<ComponentStyle>,
        /// Model directory written by `train` or `bench`; oracle models otherwise.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Noise of the oracle models, normalized units.
        #[arg(long, default_value_t = 0.0)]
        oracle_sigma: f64,
        /// Write the per-iteration trace.
        #[arg(long)]
        trace: bool,
    },
    /// Configure (unless models are given) and run the insertion benchmark.
    Bench {
        /// TOML config file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
        /// Comma-separated modes: vs, novs.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<InsertMode>>,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Write per-iteration servo residuals.
        #[arg(long)]
        trace: bool,
        /// Also write the collected datasets.
        #[arg(long)]
        save_dataset: bool,
    },
    /// Re-emit report files from a saved `bench.json`.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pattern { .. } => "pattern",
            Command::Simulate { .. } => "simulate",
            Command::Collect { .. } => "collect",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Servo { .. } => "servo",
            Command::Bench { .. } => "bench",
            Command::Report { .. } => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Pattern { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Bench { common, .. }
            | Command::Report { common, .. } => common,
            Command::Simulate { run, .. } | Command::Collect { run } | Command::Train { run, .. } | Command::Servo { run, .. } => {
                &run.common
            }
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    argv: Vec<String>,
    seed: Option<u64>,
    config: Option<&'a RunConfig>,
    outputs: Vec<String>,
    timestamp: String,
}

fn write_manifest(out: &Path, cmd: &Command, argv: &[OsString], config: Option<&RunConfig>, outputs: &[&str]) -> Result<()> {
    let manifest = Manifest {
        tool: "peginsert",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cmd.name(),
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        seed: config.map(|c| c.seed),
        config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    if let Some(c) = config {
        let text = toml::to_string(c).map_err(|e| CliError::Config(e.to_string()))?;
        write_text(&out.join("config.toml"), &text)?;
    }
    Ok(())
}

fn model_dir(root: &Path, style: ComponentStyle, camera: usize) -> PathBuf {
    root.join(style.name()).join(format!("cam{camera}"))
}

fn save_style_models(root: &Path, style: ComponentStyle, models: &[RegressorModel]) -> Result<()> {
    for (j, m) in models.iter().enumerate() {
        save_model(m, &model_dir(root, style, j))?;
    }
    Ok(())
}

fn load_style_models(root: &Path, style: ComponentStyle, n_cams: usize) -> Result<Vec<RegressorModel>> {
    (0..n_cams).map(|j| Ok(load_model(&model_dir(root, style, j))?)).collect()
}

#[derive(Serialize)]
struct StyleSummary<'a> {
    style: ComponentStyle,
    decision: Decision,
    samples: usize,
    train_insertions: &'a [u32],
    val_insertions: &'a [u32],
    models: &'a [ModelReport],
}

#[derive(Serialize)]
struct ConfigureSummary<'a> {
    decision: Decision,
    gate: DeploymentGate,
    seed: u64,
    styles: Vec<StyleSummary<'a>>,
}

fn configure_summary<'a>(styles: &'a [StyleConfiguration], gate: DeploymentGate, seed: u64) -> ConfigureSummary<'a> {
    let decision = if !styles.is_empty() && styles.iter().all(|s| s.decision == Decision::Deploy) {
        Decision::Deploy
    } else {
        Decision::CollectMore
    };
    ConfigureSummary {
        decision,
        gate,
        seed,
        styles: styles
            .iter()
            .map(|s| StyleSummary {
                style: s.style,
                decision: s.decision,
                samples: s.dataset.len(),
                train_insertions: &s.train_insertions,
                val_insertions: &s.val_insertions,
                models: &s.reports,
            })
            .collect(),
    }
}

fn cmd_pattern(tolerance: f64, radius: f64, out: &Path) -> Result<()> {
    let p = generate_pattern(tolerance, radius)?;
    let mut buf = Vec::new();
    p.write_csv(&mut buf).map_err(io_err(out))?;
    write_text(&out.join("pattern.csv"), &String::from_utf8_lossy(&buf))?;
    println!("{} offsets, spacing {:.6} mm", p.len(), p.spacing);
    Ok(())
}

#[derive(Serialize)]
struct WorldDump {
    style: ComponentStyle,
    nominal_hole: Vec3,
    true_hole: Vec3,
    grasp_offset: [f64; 2],
    start_tcp: Vec3,
    true_in_plane_error: Vec3,
    true_labels: Vec<f64>,
}

fn cmd_simulate(cfg: &RunConfig, style: Option<ComponentStyle>, out: &Path) -> Result<()> {
    let mut wc = cfg.world.clone();
    if let Some(s) = style {
        wc.component_style = s;
    }
    let mut world = new_world(wc)?;
    let start = world.tcp;
    let mut labels = Vec::new();
    for j in 0..world.cameras.len() {
        let obs = render(&world, j, &start)?;
        labels.push(obs.true_label);
        let path = out.join(format!("cam{j}.pgm"));
        let mut buf = Vec::new();
        obs.write_pgm(&mut buf).map_err(io_err(&path))?;
        fs::write(&path, buf).map_err(io_err(&path))?;
    }
    write_json(
        &out.join("world.json"),
        &WorldDump {
            style: world.config.component_style,
            nominal_hole: world.nominal_hole,
            true_hole: world.true_hole,
            grasp_offset: world.grasp_offset,
            start_tcp: start,
            true_in_plane_error: world.in_plane_error(&start),
            true_labels: labels,
        },
    )?;
    let pattern = generate_pattern(world.tolerance(), world.config.extra_error_radius + cfg.bench.search_margin)?;
    let outcome = spiral_insert(&mut world, start, &pattern, &cfg.timing);
    write_json(&out.join("outcome.json"), &outcome)?;
    println!("success {} after {} attempts, {:.3} s", outcome.success, outcome.attempts, outcome.simulated_time);
    Ok(())
}

fn cmd_collect(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.collection.validate()?;
    let factory = WorldFactory::new(cfg.world.clone());
    let pattern = generate_pattern(cfg.world.tolerance, cfg.search_radius)?;
    for &style in &cfg.styles {
        let data = collect_dataset(&factory, style, &cfg.collection, &pattern)?;
        save_dataset(&data, &out.join("dataset").join(style.name()))?;
        println!("{style}: {} samples in {} insertions", data.len(), data.groups().len());
    }
    Ok(())
}

fn load_datasets(dir: &Path) -> Result<Vec<Dataset>> {
    if dir.join("meta.json").exists() {
        return Ok(vec![load_dataset(dir)?]);
    }
    let mut out = Vec::new();
    for style in ComponentStyle::ALL {
        let sub = dir.join(style.name());
        if sub.join("meta.json").exists() {
            out.push(load_dataset(&sub)?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("no dataset found under {}", dir.display())));
    }
    Ok(out)
}

fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let gate = cfg.gate();
    let mut styles = Vec::new();
    for data in load_datasets(dataset)? {
        let sc = configure_dataset(data, cfg.collection.train_insertions, &cfg.train, &gate, &cfg.configure)?;
        save_style_models(&out.join("models"), sc.style, &sc.models)?;
        println!("{}: {:?}", sc.style, sc.decision);
        styles.push(sc);
    }
    write_json(&out.join("reports").join("summary.json"), &configure_summary(&styles, gate, cfg.seed))
}

fn cmd_evaluate(model: &Path, dataset: &Path, camera: Option<usize>, val_only: bool, out: &Path) -> Result<()> {
    let m = load_model(model)?;
    let mut data = load_dataset(dataset)?;
    if let Some(j) = camera.or(m.provenance.camera_index) {
        data = data.for_camera(j);
    }
    if val_only {
        data = data.subset(&m.provenance.val_insertions.iter().copied().collect());
    }
    let metrics = evaluate(&m, &data, &mut seeds::rng(m.provenance.seed, &[0x4556414c]))?;
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("mse {:.3e} mae {:.3e} mae_mm {:.4}", metrics.mse, metrics.mae, metrics.mae_mm_at_nominal);
    Ok(())
}

#[derive(Serialize)]
struct ServoSummary {
    style: ComponentStyle,
    initial_error_mm: f64,
    residuals_mm: Vec<f64>,
    servo_time_s: f64,
    search: crate::sim::InsertionOutcome,
    total_time_s: f64,
}

fn cmd_servo(
    cfg: &RunConfig,
    style: Option<ComponentStyle>,
    models: Option<&Path>,
    oracle_sigma: f64,
    trace: bool,
    out: &Path,
) -> Result<()> {
    let mut wc = cfg.world.clone();
    if let Some(s) = style {
        wc.component_style = s;
    }
    let style = wc.component_style;
    let mut world = new_world(wc)?;
    let n = world.cameras.len();
    let models = match models {
        Some(dir) => load_style_models(dir, style, n)?,
        None => world.cameras.iter().map(|c| RegressorModel::oracle(c.resolution, oracle_sigma)).collect(),
    };
    let mut sc = ServoConfig::for_world(&world, models, cfg.servo.n_iters, cfg.timing);
    sc.clamp_mm = cfg.servo.clamp_mm;
    let initial = world.in_plane_error(&world.tcp).norm();
    let run = visual_servo(&mut world, &sc, &mut seeds::rng(cfg.seed, &[0x5345]))?;
    let pattern = generate_pattern(world.tolerance(), cfg.bench.error_disc_radius + cfg.bench.search_margin)?;
    let here = world.tcp;
    let search = spiral_insert(&mut world, here, &pattern, &cfg.timing);
    if trace {
        let mut buf = Vec::new();
        run.write_trace_csv(&mut buf).map_err(io_err(out))?;
        write_text(&out.join("trace.csv"), &String::from_utf8_lossy(&buf))?;
    }
    let total = run.time + search.simulated_time;
    println!("residuals {:?}, spiral attempts {}, total {:.3} s", run.residuals, search.attempts, total);
    write_json(
        &out.join("servo.json"),
        &ServoSummary { style, initial_error_mm: initial, residuals_mm: run.residuals, servo_time_s: run.time, search, total_time_s: total },
    )
}

fn cmd_bench(cfg: &RunConfig, models_dir: Option<&Path>, trace: bool, save_data: bool, out: &Path) -> Result<()> {
    let bench = cfg.bench_config();
    let needs_models = bench.modes.contains(&InsertMode::ServoThenSpiral);
    let mut models = BTreeMap::new();
    if needs_models {
        let n_cams = cfg.world.cameras.len();
        match models_dir {
            Some(dir) => {
                for &s in &cfg.styles {
                    models.insert(s, load_style_models(dir, s, n_cams)?);
                }
            }
            None => {
                let gate = cfg.gate();
                let factory = WorldFactory::new(cfg.world.clone());
                let pattern = generate_pattern(cfg.world.tolerance, cfg.search_radius)?;
                let conf = configure(&factory, &cfg.styles, &cfg.collection, &pattern, &cfg.train, &gate, &cfg.configure)?;
                for s in &conf.styles {
                    save_style_models(&out.join("models"), s.style, &s.models)?;
                    if save_data {
                        save_dataset(&s.dataset, &out.join("dataset").join(s.style.name()))?;
                    }
                }
                write_json(&out.join("reports").join("configure.json"), &configure_summary(&conf.styles, gate, cfg.seed))?;
                if let Some(s) = conf.styles.iter().find(|s| s.decision != Decision::Deploy) {
                    log::error!("{}: validation error above the deployment gate", s.style);
                    return Err(PipelineError::ModelsNotDeployed.into());
                }
                for s in conf.styles {
                    models.insert(s.style, s.models);
                }
            }
        }
    }
    let report = run_benchmark(&bench, &cfg.world, &models)?;
    let reports = out.join("reports");
    emit_report(&report, &reports)?;
    write_json(&reports.join("bench.json"), &report)?;
    if trace {
        write_text(&reports.join("trace.csv"), &trace_csv(&report))?;
    }
    let s = &report.summary;
    println!(
        "vs {:?} s, novs {:?} s, speedup {:?}; success vs {}/{}, novs {}/{}",
        s.vs.mean_time, s.novs.mean_time, s.speedup, s.vs.successes, s.vs.total, s.novs.successes, s.novs.total
    );
    Ok(())
}

fn cmd_report(input: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(input).map_err(io_err(input))?;
    let report: BenchReport = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    emit_report(&report, out)?;
    Ok(())
}

fn configured(run: &Configured) -> Result<RunConfig> {
    RunConfig::load(run.config.as_deref())?.resolve(run.seed)
}

fn execute(cmd: &Command, argv: &[OsString]) -> Result<()> {
    let common = cmd.common();
    if let Some(n) = common.jobs {
        // Fails only if a pool already exists, e.g. in-process reuse.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let out = common.out.as_path();
    fs::create_dir_all(out).map_err(io_err(out))?;
    match cmd {
        Command::Pattern { tolerance, radius, .. } => {
            write_manifest(out, cmd, argv, None, &["pattern.csv"])?;
            cmd_pattern(*tolerance, *radius, out)
        }
        Command::Simulate { run, style } => {
            let cfg = configured(run)?;
            write_manifest(out, cmd, argv, Some(&cfg), &["cam*.pgm", "world.json", "outcome.json"])?;
            cmd_simulate(&cfg, *style, out)
        }
        Command::Collect { run } => {
            let cfg = configured(run)?;
            write_manifest(out, cmd, argv, Some(&cfg), &["dataset/"])?;
            cmd_collect(&cfg, out)
        }
        Command::Train { run, dataset } => {
            let cfg = configured(run)?;
            write_manifest(out, cmd, argv, Some(&cfg), &["models/", "reports/summary.json"])?;
            cmd_train(&cfg, dataset, out)
        }
        Command::Evaluate { model, dataset, camera, val_only, .. } => {
            write_manifest(out, cmd, argv, None, &["metrics.json"])?;
            cmd_evaluate(model, dataset, *camera, *val_only, out)
        }
        Command::Servo { run, style, models, oracle_sigma, trace } => {
            let cfg = configured(run)?;
            write_manifest(out, cmd, argv, Some(&cfg), &["servo.json", "trace.csv"])?;
            cmd_servo(&cfg, *style, models.as_deref(), *oracle_sigma, *trace, out)
        }
        Command::Bench { config, seed, modes, models, trace, save_dataset, .. } => {
            let mut cfg = RunConfig::load(Some(config))?.resolve(*seed)?;
            if let Some(m) = modes {
                cfg.bench.modes = m.clone();
            }
            write_manifest(out, cmd, argv, Some(&cfg), &["models/", "reports/"])?;
            cmd_bench(&cfg, models.as_deref(), *trace, *save_dataset, out)
        }
        Command::Report { input, .. } => {
            write_manifest(out, cmd, argv, None, &["table.csv", "scatter.csv", "summary.json", "scatter.svg"])?;
            cmd_report(input, out)
        }
    }
}

/// Parses `argv` (including the program name) and runs it. Returns the
/// process exit code: 0 on success, 1 on domain errors, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    match execute(&cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            1
        }
    }
}
