//! Monte-Carlo benchmark: seeded trials of every method on every scenario,
//! success statistics, significance marking and report export.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{optimal_align, random_search, spiral_search, RandomSearchParams, SpiralParams};
use crate::error::{Error, Result};
use crate::estimator::{NoiseModel, NoisePreset, OracleEstimator, PixelRect};
use crate::scene::{builtin_scenario, HoleScenario, Interval};
use crate::servo::{estimate_depths, run_servo, ServoConfig, ServoOutcome, ServoStatus};
use crate::world::{make_world, stream_rng, MotionModel, TrialResult, WorldConfig, WorldState};

/// Generator streams derived from a trial seed.
pub const WORLD_STREAM: u64 = 0;
pub const ESTIMATOR_STREAM: u64 = 1;
pub const SEARCH_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Spiral,
    Servo,
    ServoThenSpiral,
    Optimal,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Random,
        Method::Spiral,
        Method::Servo,
        Method::ServoThenSpiral,
        Method::Optimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Spiral => "spiral",
            Method::Servo => "servo",
            Method::ServoThenSpiral => "servo_then_spiral",
            Method::Optimal => "optimal",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub scenarios: Vec<String>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            scenarios: ["metal", "plastic", "wide", "cap"].map(String::from).to_vec(),
            methods: Method::ALL.to_vec(),
            trials: 100,
            seed: 0,
        }
    }
}

/// A noise preset with optional per-field overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub preset: NoisePreset,
    pub gaussian_sigma: Option<f64>,
    pub outlier_prob: Option<f64>,
    pub miss_prob: Option<f64>,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            preset: NoisePreset::SynthLike,
            gaussian_sigma: None,
            outlier_prob: None,
            miss_prob: None,
        }
    }
}

impl EstimatorSettings {
    pub fn model(&self, roi: PixelRect) -> NoiseModel {
        let mut m = self.preset.model(roi);
        if let Some(s) = self.gaussian_sigma {
            m.gaussian_sigma = s;
        }
        if let Some(p) = self.outlier_prob {
            m.outlier_prob = p;
        }
        if let Some(p) = self.miss_prob {
            m.miss_prob = p;
        }
        m
    }

    /// Preset name, marked when any field is overridden.
    pub fn label(&self) -> String {
        let custom = self.gaussian_sigma.is_some() || self.outlier_prob.is_some() || self.miss_prob.is_some();
        if custom {
            format!("{}+custom", self.preset.name())
        } else {
            self.preset.name().to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoSettings {
    pub alpha_tau: f64,
    pub alpha_gamma: f64,
    pub alpha_phi: f64,
    /// Convergence threshold in meters; defaults to 1/20 of the hole diameter.
    pub phi_t: Option<f64>,
    pub max_duration: f64,
    /// Servo aborts when the TCP leaves a disc of this many uncertainty radii.
    pub boundary_factor: f64,
}

impl Default for ServoSettings {
    fn default() -> Self {
        Self {
            alpha_tau: 0.9,
            alpha_gamma: 0.9,
            alpha_phi: 0.9,
            phi_t: None,
            max_duration: 20.0,
            boundary_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralSettings {
    /// Pitch as a multiple of the clearance, used unless `pitch` is set.
    pub pitch_factor: f64,
    /// Absolute pitch in meters.
    pub pitch: Option<f64>,
    pub speed: f64,
}

impl Default for SpiralSettings {
    fn default() -> Self {
        Self {
            pitch_factor: 1.5,
            pitch: None,
            speed: 0.010,
        }
    }
}

impl SpiralSettings {
    pub fn params(&self, s: &HoleScenario) -> SpiralParams {
        SpiralParams {
            pitch: self.pitch.unwrap_or(self.pitch_factor * s.clearance()),
            speed: self.speed,
        }
    }
}

/// A user-defined flat hole. Lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub hole_diameter: f64,
    pub peg_diameter: f64,
    pub required_depth: f64,
    pub start_height: Interval,
    #[serde(default)]
    pub uncertainty_radius: Option<f64>,
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<HoleScenario> {
        let mut s = HoleScenario::flat(
            &self.name,
            self.hole_diameter,
            self.peg_diameter,
            self.required_depth,
            self.start_height,
        )?;
        if let Some(r) = self.uncertainty_radius {
            s.uncertainty_radius = r;
            s.validate()?;
        }
        Ok(s)
    }
}

/// Everything a benchmark run depends on. Sections mirror the TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub bench: RunSettings,
    pub estimator: EstimatorSettings,
    pub servo: ServoSettings,
    pub spiral: SpiralSettings,
    pub random: RandomSearchParams,
    pub motion: MotionModel,
    pub world: WorldConfig,
    /// Extra scenarios; a name here shadows the built-in one.
    pub scenario: Vec<ScenarioSpec>,
}

impl BenchConfig {
    pub fn resolve_scenario(&self, name: &str) -> Result<HoleScenario> {
        if let Some(spec) = self.scenario.iter().find(|s| s.name == name) {
            return spec.build();
        }
        builtin_scenario(name).ok_or_else(|| Error::Config(format!("unknown scenario {name:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.bench.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.bench.scenarios.is_empty() || self.bench.methods.is_empty() {
            return bad("at least one scenario and one method are required".into());
        }
        for name in &self.bench.scenarios {
            self.resolve_scenario(name)?;
        }
        let sv = &self.servo;
        if !(sv.max_duration > 0.0 && sv.boundary_factor > 0.0) || sv.phi_t.is_some_and(|p| !(p > 0.0)) {
            return bad(format!("invalid servo settings {sv:?}"));
        }
        if !(self.spiral.speed > 0.0 && self.spiral.pitch_factor > 0.0) || self.spiral.pitch.is_some_and(|p| !(p > 0.0)) {
            return bad(format!("invalid spiral settings {:?}", self.spiral));
        }
        self.random.validate()?;
        self.motion.validate()?;
        self.world.intrinsics.validate()?;
        self.world.camera_ranges.validate()?;
        self.world.calibration.validate()?;
        self.world.grasp.validate()?;
        self.estimator.model(self.roi()).validate()
    }

    /// Region in which estimates are reported: the whole image.
    pub fn roi(&self) -> PixelRect {
        PixelRect::image(self.world.intrinsics.width, self.world.intrinsics.height)
    }

    /// Servo loop parameters for `world`, with depths taken from its
    /// believed cameras and believed hole.
    pub fn servo_config(&self, world: &WorldState) -> ServoConfig {
        let s = &world.scenario;
        let depths = estimate_depths(&world.believed_cameras, &world.believed_hole);
        let phi_t = self.servo.phi_t.unwrap_or_else(|| s.default_phi_t());
        let mut c = ServoConfig::new(s.insertion_direction, depths, phi_t);
        c.alpha_tau = self.servo.alpha_tau;
        c.alpha_gamma = self.servo.alpha_gamma;
        c.alpha_phi = self.servo.alpha_phi;
        c.max_duration = self.servo.max_duration;
        c.loop_dt = self.motion.dt;
        c.max_speed = self.motion.max_speed;
        c
    }

    /// Boundary of the spiral for a search from the raw start: the start
    /// disc widened by the worst grasp translation, since the tip rather
    /// than the tool is what must be found.
    pub fn spiral_radius(&self, s: &HoleScenario) -> f64 {
        s.uncertainty_radius + self.world.grasp.max_trans
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServoExit {
    Converged,
    TimedOut,
    BoundaryExceeded,
    Starved,
}

impl From<ServoStatus> for ServoExit {
    fn from(s: ServoStatus) -> Self {
        match s {
            ServoStatus::Converged => ServoExit::Converged,
            ServoStatus::TimedOut => ServoExit::TimedOut,
            ServoStatus::BoundaryExceeded => ServoExit::BoundaryExceeded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoSummary {
    pub exit: ServoExit,
    /// Time spent in the servo loop, excluding insertion and search.
    pub elapsed: f64,
    pub iterations: usize,
    pub final_planar_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub result: TrialResult,
    pub servo: Option<ServoSummary>,
}

/// Servo phase of a trial. Starvation ends the phase without an outcome.
fn servo_phase(config: &BenchConfig, world: &mut WorldState, seed: u64) -> Result<(ServoSummary, Option<ServoOutcome>)> {
    let sc = config.servo_config(world);
    let mut estimator = OracleEstimator::new(config.estimator.model(config.roi()), stream_rng(seed, ESTIMATOR_STREAM))?;
    let believed = world.believed_cameras.clone();
    let boundary = config.servo.boundary_factor * world.scenario.uncertainty_radius;
    let t0 = world.clock;
    match run_servo(world, &believed, &mut estimator, &sc, boundary) {
        Ok(out) => Ok((
            ServoSummary {
                exit: out.status.into(),
                elapsed: out.elapsed,
                iterations: out.iterations,
                final_planar_error: out.final_planar_error,
            },
            Some(out),
        )),
        Err(Error::EstimationStarved(_)) => Ok((
            ServoSummary {
                exit: ServoExit::Starved,
                elapsed: world.clock - t0,
                iterations: world.steps as usize,
                final_planar_error: world.contact_query().planar_error,
            },
            None,
        )),
        Err(e) => Err(e),
    }
}

fn servo_failure(summary: &ServoSummary, method: Method) -> TrialResult {
    let detail = match summary.exit {
        ServoExit::Converged => "converged",
        ServoExit::TimedOut => "servo timeout",
        ServoExit::BoundaryExceeded => "servo boundary",
        ServoExit::Starved => "estimation starved",
    };
    TrialResult {
        method: method.name().to_string(),
        success: false,
        elapsed: summary.elapsed,
        insertion_depth: 0.0,
        outcome_detail: detail.to_string(),
    }
}

/// Runs one trial of `method` on a world built from `seed`.
pub fn run_trial(config: &BenchConfig, scenario: &HoleScenario, method: Method, seed: u64) -> Result<(TrialResult, Option<ServoSummary>)> {
    let mut world = make_world(scenario, seed, &config.world)?;
    let motion = config.motion;
    let result = match method {
        Method::Random => {
            let mut rng = stream_rng(seed, SEARCH_STREAM);
            random_search(&mut world, &config.random, &motion, &mut rng)?.result
        }
        Method::Spiral => spiral_search(&mut world, &config.spiral.params(scenario), &motion, config.spiral_radius(scenario))?,
        Method::Optimal => optimal_align(&mut world, &motion)?,
        Method::Servo | Method::ServoThenSpiral => {
            let (summary, _) = servo_phase(config, &mut world, seed)?;
            if summary.exit != ServoExit::Converged {
                return Ok((servo_failure(&summary, method), Some(summary)));
            }
            let required = scenario.required_depth;
            let (depth, _) = world.attempt_insertion(required, &motion);
            let mut result = TrialResult {
                method: method.name().to_string(),
                success: depth >= required,
                elapsed: world.clock,
                insertion_depth: depth,
                outcome_detail: if depth >= required { "inserted" } else { "surface contact" }.to_string(),
            };
            if !result.success && method == Method::ServoThenSpiral {
                let phi_t = config.servo.phi_t.unwrap_or_else(|| scenario.default_phi_t());
                let r = spiral_search(&mut world, &config.spiral.params(scenario), &motion, 2.0 * phi_t)?;
                result = TrialResult {
                    elapsed: world.clock,
                    outcome_detail: format!("spiral {}", r.outcome_detail),
                    ..r
                };
            }
            result.method = method.name().to_string();
            return Ok((result, Some(summary)));
        }
    };
    Ok((
        TrialResult {
            method: method.name().to_string(),
            elapsed: world.clock,
            ..result
        },
        None,
    ))
}

/// Servo run on one seeded world, keeping the full trace.
pub fn run_servo_demo(config: &BenchConfig, scenario: &HoleScenario, seed: u64) -> Result<(WorldState, ServoOutcome)> {
    let mut world = make_world(scenario, seed, &config.world)?;
    let (_, out) = servo_phase(config, &mut world, seed)?;
    let out = out.ok_or(Error::EstimationStarved(crate::servo::MAX_STARVED_FRAMES + 1))?;
    Ok((world, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub scenario: String,
    pub method: Method,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean elapsed time over successful trials only.
    pub mean_success_time: Option<f64>,
    pub significant: bool,
    pub records: Vec<TrialRecord>,
}

impl MethodSummary {
    pub fn from_records(scenario: &str, method: Method, records: Vec<TrialRecord>) -> Self {
        let trials = records.len();
        let times: Vec<f64> = records.iter().filter(|r| r.result.success).map(|r| r.result.elapsed).collect();
        let successes = times.len();
        Self {
            scenario: scenario.to_string(),
            method,
            trials,
            successes,
            success_rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            mean_success_time: (successes > 0).then(|| times.iter().sum::<f64>() / successes as f64),
            significant: false,
            records,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub trials: usize,
    pub estimator: String,
    pub entries: Vec<MethodSummary>,
}

impl BenchReport {
    pub fn entry(&self, scenario: &str, method: Method) -> Option<&MethodSummary> {
        self.entries.iter().find(|e| e.scenario == scenario && e.method == method)
    }

    /// Marks, per scenario, the best method and every method not
    /// significantly worse than it.
    pub fn mark_significance(&mut self) -> Result<()> {
        let mut scenarios: Vec<String> = Vec::new();
        for e in &self.entries {
            if !scenarios.contains(&e.scenario) {
                scenarios.push(e.scenario.clone());
            }
        }
        for s in scenarios {
            let idx: Vec<usize> = (0..self.entries.len()).filter(|&i| self.entries[i].scenario == s).collect();
            let counts: Vec<(u64, u64)> = idx
                .iter()
                .map(|&i| (self.entries[i].successes as u64, self.entries[i].trials as u64))
                .collect();
            for (i, flag) in idx.into_iter().zip(significance_flags(&counts)?) {
                self.entries[i].significant = flag;
            }
        }
        Ok(())
    }
}

/// Runs every configured scenario and method. Trials run in parallel; trial
/// `i` uses seed `seed ^ i`, so the report does not depend on scheduling.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let run = &config.bench;
    let mut report = BenchReport {
        seed: run.seed,
        trials: run.trials,
        estimator: config.estimator.label(),
        entries: Vec::new(),
    };
    for name in &run.scenarios {
        let scenario = config.resolve_scenario(name)?;
        for &method in &run.methods {
            let records = (0..run.trials)
                .into_par_iter()
                .map(|i| {
                    let seed = run.seed ^ i as u64;
                    run_trial(config, &scenario, method, seed).map(|(result, servo)| TrialRecord {
                        trial: i,
                        seed,
                        result,
                        servo,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            report.entries.push(MethodSummary::from_records(name, method, records));
        }
    }
    report.mark_significance()?;
    Ok(report)
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 1..=k {
        acc *= n - k + i;
        acc /= i;
    }
    acc
}

/// Whether the one-sided Fisher exact test finds `a` significantly lower
/// than `b` at the 5% level, i.e. whether P(X ≤ a.successes) < 0.05 where X
/// is hypergeometric with the pooled margins. Exact integer arithmetic.
pub fn fisher_lower_significant(a: (u64, u64), b: (u64, u64)) -> bool {
    let (sa, na) = a;
    let (sb, nb) = b;
    let k = sa + sb;
    let lo = k.saturating_sub(nb);
    let mut tail = BigUint::from(0u32);
    for x in lo..=sa {
        tail += binomial(na, x) * binomial(nb, k - x);
    }
    // tail / C(na+nb, k) < 1/20
    tail * 20u32 < binomial(na + nb, k)
}

/// Flags the entry with the highest success rate and every entry whose
/// one-sided Fisher exact test against it gives p ≥ 0.05. Counts are
/// `(successes, trials)`.
pub fn significance_flags(counts: &[(u64, u64)]) -> Result<Vec<bool>> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("no counts to compare".into()));
    }
    if let Some(c) = counts.iter().find(|(s, n)| *n == 0 || s > n) {
        return Err(Error::InvalidArgument(format!("invalid count {}/{}", c.0, c.1)));
    }
    let mut best = 0;
    for (i, &(s, n)) in counts.iter().enumerate() {
        let (bs, bn) = counts[best];
        if (s as u128) * (bn as u128) > (bs as u128) * (n as u128) {
            best = i;
        }
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &c)| i == best || !fisher_lower_significant(c, counts[best]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    /// Format implied by a file extension (`.csv`, `.json`, `.md`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(ReportFormat::Csv),
            "json" => Some(ReportFormat::Json),
            "md" | "markdown" => Some(ReportFormat::Markdown),
            _ => None,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

pub const REPORT_CSV_HEADER: [&str; 7] = [
    "scenario",
    "method",
    "trials",
    "successes",
    "success_rate",
    "mean_success_time_s",
    "significant",
];

/// One summary row per scenario and method.
pub fn write_report_csv<W: Write>(out: W, report: &BenchReport) -> Result<()> {
    let err = |e: csv::Error| Error::format("<report csv>", e);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_CSV_HEADER).map_err(err)?;
    for e in &report.entries {
        w.write_record([
            e.scenario.clone(),
            e.method.name().to_string(),
            e.trials.to_string(),
            e.successes.to_string(),
            e.success_rate.to_string(),
            e.mean_success_time.map(|t| t.to_string()).unwrap_or_default(),
            e.significant.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<report csv>", e))
}

pub fn write_report_json<W: Write>(mut out: W, report: &BenchReport) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| Error::format("<report json>", e))?;
    out.write_all(b"\n").map_err(|e| Error::io("<report json>", e))
}

pub fn read_report_json(path: &Path) -> Result<BenchReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

fn percent(rate: f64) -> String {
    let p = rate * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{p:.0}%")
    } else {
        format!("{p:.1}%")
    }
}

/// Table with one row per scenario and one column per method; cells read
/// `rate (mean time)` and are bold when marked significant.
pub fn render_markdown(report: &BenchReport) -> String {
    let mut scenarios: Vec<&str> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for e in &report.entries {
        if !scenarios.contains(&e.scenario.as_str()) {
            scenarios.push(&e.scenario);
        }
        if !methods.contains(&e.method) {
            methods.push(e.method);
        }
    }
    let mut s = String::new();
    s.push_str("| scenario |");
    for m in &methods {
        let _ = write!(s, " {m} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(methods.len()));
    s.push('\n');
    for sc in scenarios {
        let _ = write!(s, "| {sc} |");
        for &m in &methods {
            match report.entry(sc, m) {
                Some(e) => {
                    let mut cell = percent(e.success_rate);
                    if let Some(t) = e.mean_success_time {
                        let _ = write!(cell, " ({t:.1} s)");
                    }
                    if e.significant {
                        cell = format!("**{cell}**");
                    }
                    let _ = write!(s, " {cell} |");
                }
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn write_report<W: Write>(mut out: W, report: &BenchReport, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => write_report_csv(out, report),
        ReportFormat::Json => write_report_json(out, report),
        ReportFormat::Markdown => out
            .write_all(render_markdown(report).as_bytes())
            .map_err(|e| Error::io("<report markdown>", e)),
    }
}

pub fn export_report(report: &BenchReport, path: &Path, format: ReportFormat) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufWriter::new(file);
    write_report(&mut buf, report, format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Format { message, .. } => Error::format(path, message),
        other => other,
    })?;
    buf.flush().map_err(|e| Error::io(path, e))
}
