//! Insertion-time benchmark: servo-assisted versus pure spiral search over
//! random start errors, with the table, scatter data and plot it produces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::RegressorModel;
use crate::pipeline::{insert, InsertMode, PipelineError, WorldFactory, BENCH_STREAM};
use crate::search::{generate_pattern, SearchError};
use crate::seeds;
use crate::servoing::{ServoConfig, DEFAULT_CLAMP_MM};
use crate::sim::{new_world, spiral_insert, ComponentStyle, TimingModel, WorldConfig};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("need at least {need} usable rows spanning a 3x error range, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("no deployed models for {0}")]
    MissingModels(ComponentStyle),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl BenchError {
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::InvalidConfig(_) => "InvalidConfig",
            BenchError::InsufficientData { .. } => "InsufficientData",
            BenchError::MissingModels(_) => "ModelsNotDeployed",
            BenchError::Io { .. } => "IoError",
            BenchError::Search(e) => e.kind(),
            BenchError::Pipeline(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub component_styles: Vec<ComponentStyle>,
    pub insertions_per_style_per_mode: usize,
    pub error_disc_radius: f64,
    pub tolerance: f64,
    /// Per-style tolerance overrides.
    pub style_tolerance: BTreeMap<ComponentStyle, f64>,
    /// Extra search radius beyond the error disc, mm.
    pub search_margin: f64,
    pub n_iters: usize,
    pub clamp_mm: f64,
    pub seed: u64,
    pub timing: TimingModel,
    pub modes: Vec<InsertMode>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            component_styles: ComponentStyle::ALL.to_vec(),
            insertions_per_style_per_mode: 10,
            error_disc_radius: 1.0,
            tolerance: 0.1,
            style_tolerance: BTreeMap::new(),
            search_margin: 0.1,
            n_iters: 3,
            clamp_mm: DEFAULT_CLAMP_MM,
            seed: 0,
            timing: TimingModel::default(),
            modes: InsertMode::ALL.to_vec(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.to_string()));
        if self.insertions_per_style_per_mode == 0 {
            return bad("insertions_per_style_per_mode must be positive");
        }
        if !(self.error_disc_radius >= 0.0 && self.error_disc_radius.is_finite()) {
            return bad("error_disc_radius must be non-negative");
        }
        if !(self.search_margin >= 0.0 && self.search_margin.is_finite()) {
            return bad("search_margin must be non-negative");
        }
        if self.n_iters == 0 {
            return bad("n_iters must be at least 1");
        }
        if !(self.tolerance > 0.0) || self.style_tolerance.values().any(|&t| !(t > 0.0)) {
            return bad("tolerances must be positive");
        }
        if self.modes.is_empty() {
            return bad("at least one mode is required");
        }
        self.timing.validate().map_err(BenchError::InvalidConfig)
    }

    pub fn tolerance_for(&self, style: ComponentStyle) -> f64 {
        self.style_tolerance.get(&style).copied().unwrap_or(self.tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub style: ComponentStyle,
    pub mode: InsertMode,
    pub seed: u64,
    /// Start error estimated from the successful position, mm.
    pub retrospective_error: Option<f64>,
    pub post_servo_retrospective_error: Option<f64>,
    pub true_initial_error: f64,
    pub time: f64,
    pub attempts: u32,
    pub success: bool,
    /// True in-plane error after each servo iteration (servo mode only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub servo_residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeStats {
    pub mean_time: Option<f64>,
    pub successes: usize,
    pub total: usize,
    /// Insertions that succeeded on the first attempt.
    pub direct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSummary {
    pub style: ComponentStyle,
    pub vs: ModeStats,
    pub novs: ModeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub styles: Vec<StyleSummary>,
    pub vs: ModeStats,
    pub novs: ModeStats,
    /// Spiral-only mean time over servo-mode mean time.
    pub speedup: Option<f64>,
    pub mean_post_servo_retrospective_error: Option<f64>,
    /// Pearson correlation of retrospective error and time per mode.
    pub vs_error_time_correlation: Option<f64>,
    pub novs_error_time_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub summary: BenchSummary,
    pub rows: Vec<BenchRow>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let mx = mean(xs.iter().copied())?;
    let my = mean(ys.iter().copied())?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (xs.len() >= 2 && sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn mode_stats<'a>(rows: impl Iterator<Item = &'a BenchRow> + Clone) -> ModeStats {
    ModeStats {
        mean_time: mean(rows.clone().map(|r| r.time)),
        successes: rows.clone().filter(|r| r.success).count(),
        total: rows.clone().count(),
        direct: rows.filter(|r| r.success && r.attempts == 1).count(),
    }
}

fn error_time_correlation(rows: &[BenchRow], mode: InsertMode) -> Option<f64> {
    let (e, t): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.mode == mode)
        .filter_map(|r| r.retrospective_error.map(|e| (e, r.time)))
        .unzip();
    correlation(&e, &t)
}

/// Aggregates rows; row order does not change any value as long as it is
/// the same order used for emission.
pub fn summarize(styles: &[ComponentStyle], rows: &[BenchRow]) -> BenchSummary {
    let of = |m: InsertMode| rows.iter().filter(move |r| r.mode == m);
    let styles = styles
        .iter()
        .map(|&s| StyleSummary {
            style: s,
            vs: mode_stats(of(InsertMode::ServoThenSpiral).filter(move |r| r.style == s)),
            novs: mode_stats(of(InsertMode::SpiralOnly).filter(move |r| r.style == s)),
        })
        .collect();
    let vs = mode_stats(of(InsertMode::ServoThenSpiral));
    let novs = mode_stats(of(InsertMode::SpiralOnly));
    let speedup = match (vs.mean_time, novs.mean_time) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a),
        _ => None,
    };
    BenchSummary {
        styles,
        vs,
        novs,
        speedup,
        mean_post_servo_retrospective_error: mean(of(InsertMode::ServoThenSpiral).filter_map(|r| r.post_servo_retrospective_error)),
        vs_error_time_correlation: error_time_correlation(rows, InsertMode::ServoThenSpiral),
        novs_error_time_correlation: error_time_correlation(rows, InsertMode::SpiralOnly),
    }
}

/// Runs every (style, insertion, mode) combination. Both modes of an
/// insertion index use the same world seed, so they start from the same
/// error.
pub fn run_benchmark(
    cfg: &BenchConfig,
    base_world: &WorldConfig,
    models: &BTreeMap<ComponentStyle, Vec<RegressorModel>>,
) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let uses_servo = cfg.modes.contains(&InsertMode::ServoThenSpiral);
    if uses_servo {
        if let Some(&s) = cfg.component_styles.iter().find(|s| !models.contains_key(s)) {
            return Err(BenchError::MissingModels(s));
        }
    }
    let factory = WorldFactory::new(WorldConfig { seed: cfg.seed, extra_error_radius: cfg.error_disc_radius, ..base_world.clone() });
    let mut jobs = Vec::new();
    for &style in &cfg.component_styles {
        for i in 0..cfg.insertions_per_style_per_mode {
            for &mode in &cfg.modes {
                jobs.push((style, i as u64, mode));
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(style, i, mode)| -> Result<BenchRow, BenchError> {
            let tol = cfg.tolerance_for(style);
            let mut wc = factory.config(style, BENCH_STREAM, i);
            wc.tolerance = tol;
            let mut world = new_world(wc.clone()).map_err(PipelineError::from)?;
            let pattern = generate_pattern(tol, cfg.error_disc_radius + cfg.search_margin)?;
            let servo = match mode {
                InsertMode::ServoThenSpiral => {
                    let mut s = ServoConfig::for_world(&world, models[&style].clone(), cfg.n_iters, cfg.timing);
                    s.clamp_mm = cfg.clamp_mm;
                    Some(s)
                }
                InsertMode::SpiralOnly => None,
            };
            let mut rng = seeds::rng(wc.seed, &[mode as u64]);
            let out = insert(&mut world, mode, servo.as_ref(), &pattern, &cfg.timing, &mut rng)?;
            Ok(BenchRow {
                style,
                mode,
                seed: wc.seed,
                retrospective_error: out.retrospective_error,
                post_servo_retrospective_error: out.post_servo_retrospective_error,
                true_initial_error: out.true_initial_error,
                time: out.simulated_time,
                attempts: out.attempts,
                success: out.success,
                servo_residuals: out.servo_residuals,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&cfg.component_styles, &rows);
    Ok(BenchReport { config: cfg.clone(), summary, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn loglog_fit(points: &[(f64, f64)]) -> Option<LawFit> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    let n = pts.len() as f64;
    let mx = mean(pts.iter().map(|p| p.0))?;
    let my = mean(pts.iter().map(|p| p.1))?;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if n < 2.0 || sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LawFit { slope, intercept, r2 })
}

pub const MIN_LAW_POINTS: usize = 10;

/// Fits `ln t = slope · ln e + intercept` to (error, time) pairs from
/// successful spiral-only insertions.
pub fn fit_quadratic_law(points: &[(f64, f64)]) -> Result<LawFit, BenchError> {
    let usable: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
    let lo = usable.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = usable.iter().map(|p| p.0).fold(0.0, f64::max);
    if usable.len() < MIN_LAW_POINTS || hi < 3.0 * lo {
        return Err(BenchError::InsufficientData { need: MIN_LAW_POINTS, got: usable.len() });
    }
    loglog_fit(&usable).ok_or(BenchError::InsufficientData { need: MIN_LAW_POINTS, got: usable.len() })
}

/// Points for [`fit_quadratic_law`] from successful spiral-only rows.
pub fn law_points(rows: &[BenchRow]) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.mode == InsertMode::SpiralOnly && r.success)
        .filter_map(|r| r.retrospective_error.map(|e| (e, r.time)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSample {
    pub level: f64,
    pub seed: u64,
    pub retrospective_error: Option<f64>,
    pub time: f64,
    pub attempts: u32,
    pub success: bool,
}

/// Spiral-only insertions from start errors of fixed magnitude in random
/// directions, `per_level` seeds per magnitude.
pub fn spiral_law_experiment(
    levels: &[f64],
    per_level: usize,
    tolerance: f64,
    base_world: &WorldConfig,
    timing: &TimingModel,
    seed: u64,
) -> Result<Vec<LawSample>, BenchError> {
    let max_level = levels.iter().cloned().fold(0.0, f64::max);
    let pattern = generate_pattern(tolerance, max_level * 1.2 + tolerance)?;
    let jobs: Vec<(usize, u64)> = (0..levels.len()).flat_map(|l| (0..per_level as u64).map(move |s| (l, s))).collect();
    jobs.par_iter()
        .map(|&(li, s)| {
            let level = levels[li];
            let wseed = seeds::derive(seed, &[li as u64, s]);
            let mut world = new_world(WorldConfig { seed: wseed, tolerance, extra_error_radius: 0.0, ..base_world.clone() })
                .map_err(PipelineError::from)?;
            let angle = seeds::rng(wseed, &[0x414e47]).random::<f64>() * std::f64::consts::TAU;
            let start = world.nominal_tcp() + world.plane_vector([level * angle.cos(), level * angle.sin()]);
            let out = spiral_insert(&mut world, start, &pattern, timing);
            Ok(LawSample {
                level,
                seed: wseed,
                retrospective_error: out.retrospective_error,
                time: out.simulated_time,
                attempts: out.attempts,
                success: out.success,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), BenchError> {
    fs::write(path, contents).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn table_csv(report: &BenchReport) -> String {
    let mut s = String::from("style,vs_mean_s,novs_mean_s\n");
    for st in &report.summary.styles {
        let _ = writeln!(s, "{},{},{}", st.style, opt(st.vs.mean_time), opt(st.novs.mean_time));
    }
    if !report.summary.styles.is_empty() {
        let avg = |f: fn(&StyleSummary) -> Option<f64>| {
            let v: Vec<f64> = report.summary.styles.iter().filter_map(f).collect();
            if v.len() == report.summary.styles.len() {
                mean(v)
            } else {
                None
            }
        };
        let _ = writeln!(s, "Avg,{},{}", opt(avg(|x| x.vs.mean_time)), opt(avg(|x| x.novs.mean_time)));
    }
    s
}

pub const SCATTER_HEADER: &str = "style,mode,seed,error_mm,time_s,attempts,success";

pub fn scatter_csv(report: &BenchReport) -> String {
    let mut s = format!("{SCATTER_HEADER}\n");
    for r in &report.rows {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.style, r.mode, r.seed, opt(r.retrospective_error), r.time, r.attempts, r.success);
    }
    s
}

/// Time-versus-error scatter with a logarithmic time axis.
pub fn scatter_svg(report: &BenchReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;
    let pts: Vec<(InsertMode, f64, f64)> = report
        .rows
        .iter()
        .filter_map(|r| r.retrospective_error.map(|e| (r.mode, e, r.time)))
        .filter(|p| p.2 > 0.0)
        .collect();
    let x_max = pts.iter().map(|p| p.1).fold(0.0, f64::max).max(report.config.error_disc_radius).max(1e-3) * 1.05;
    let lt_min = pts.iter().map(|p| p.2.log10()).fold(f64::INFINITY, f64::min);
    let lt_max = pts.iter().map(|p| p.2.log10()).fold(f64::NEG_INFINITY, f64::max);
    let (d0, d1) = if pts.is_empty() { (-1, 2) } else { (lt_min.floor() as i32, (lt_max.ceil() as i32).max(lt_min.floor() as i32 + 1)) };
    let px = |e: f64| L + (W - L - R) * e / x_max;
    let py = |t: f64| H - B - (H - T - B) * (t.log10() - d0 as f64) / (d1 - d0) as f64;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B);
    let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for d in d0..=d1 {
        let y = py(10f64.powi(d));
        let _ = writeln!(s, r##"<line x1="{L}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, W - R);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, L - 6.0, y + 4.0);
    }
    for k in 0..=5 {
        let e = x_max * k as f64 / 5.0;
        let x = px(e);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{e:.2}</text>"#, H - B + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">retrospective error [mm]</text>"#, (L + W - R) / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">time [s]</text>"#, (T + H - B) / 2.0, (T + H - B) / 2.0);
    for (mode, e, t) in &pts {
        let (x, y) = (px(*e), py(*t));
        match mode {
            InsertMode::ServoThenSpiral => {
                let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="#1f77b4"/>"##);
            }
            InsertMode::SpiralOnly => {
                let _ = writeln!(s, r##"<rect x="{:.2}" y="{:.2}" width="6" height="6" fill="#ff7f0e"/>"##, x - 3.0, y - 3.0);
            }
        }
    }
    let _ = writeln!(s, r##"<circle cx="{}" cy="{}" r="4" fill="#1f77b4"/><text x="{}" y="{}">vs</text>"##, L + 20.0, T + 10.0, L + 30.0, T + 14.0);
    let _ = writeln!(s, r##"<rect x="{}" y="{}" width="8" height="8" fill="#ff7f0e"/><text x="{}" y="{}">no vs</text>"##, L + 16.0, T + 24.0, L + 30.0, T + 32.0);
    s.push_str("</svg>\n");
    s
}

/// Per-iteration servo residuals of every servo-mode row.
pub fn trace_csv(report: &BenchReport) -> String {
    let mut s = String::from("style,seed,iteration,residual_mm\n");
    for r in report.rows.iter().filter(|r| r.mode == InsertMode::ServoThenSpiral) {
        for (i, res) in r.servo_residuals.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", r.style, r.seed, i + 1, res);
        }
    }
    s
}

pub fn summary_json(report: &BenchReport) -> String {
    let value = serde_json::json!({
        "config": report.config,
        "summary": report.summary,
        "law_fit": fit_quadratic_law(&law_points(&report.rows)).ok(),
    });
    let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `table.csv`, `scatter.csv`, `summary.json` and `scatter.svg`.
pub fn emit_report(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.to_path_buf(), source })?;
    let files = [
        ("table.csv", table_csv(report)),
        ("scatter.csv", scatter_csv(report)),
        ("summary.json", summary_json(report)),
        ("scatter.svg", scatter_svg(report)),
    ];
    let mut paths = Vec::new();
    for (name, contents) in files {
        let p = dir.join(name);
        write_file(&p, &contents)?;
        paths.push(p);
    }
    Ok(paths)
}
