//! Point estimation as seen by the servo loop, and detection-accuracy curves.
//!
//! There is no renderer or network here. An estimator receives the true 3-D
//! peg and hole points and the true camera, and returns pixel estimates. The
//! [`OracleEstimator`] projects exactly and then applies a [`NoiseModel`]:
//! misses, uniform outliers inside the region of interest, and isotropic
//! Gaussian pixel noise.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::heatmap::PixelPoint;
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatePair {
    pub peg: PixelPoint,
    pub hole: PixelPoint,
    pub peg_detected: bool,
    pub hole_detected: bool,
}

impl EstimatePair {
    pub fn detected(peg: PixelPoint, hole: PixelPoint) -> Self {
        Self {
            peg,
            hole,
            peg_detected: true,
            hole_detected: true,
        }
    }

    pub fn both_detected(&self) -> bool {
        self.peg_detected && self.hole_detected
    }
}

/// Axis-aligned pixel rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn image(width: u32, height: u32) -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            x1: width as f64 - 1.0,
            y1: height as f64 - 1.0,
        }
    }

    pub fn contains(&self, p: &PixelPoint) -> bool {
        (self.x0..=self.x1).contains(&p.x) && (self.y0..=self.y1).contains(&p.y)
    }

    pub fn clamp(&self, p: PixelPoint) -> PixelPoint {
        PixelPoint::new(p.x.clamp(self.x0, self.x1), p.y.clamp(self.y0, self.y1))
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PixelPoint {
        PixelPoint::new(
            rng.random_range(self.x0..=self.x1),
            rng.random_range(self.y0..=self.y1),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub gaussian_sigma: f64,
    pub outlier_prob: f64,
    pub miss_prob: f64,
    pub roi: PixelRect,
}

impl NoiseModel {
    pub fn exact(roi: PixelRect) -> Self {
        Self {
            gaussian_sigma: 0.0,
            outlier_prob: 0.0,
            miss_prob: 0.0,
            roi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = 0.0..=1.0;
        if !(self.gaussian_sigma >= 0.0) || !p.contains(&self.outlier_prob) || !p.contains(&self.miss_prob) {
            return Err(Error::InvalidArgument(format!("invalid noise model {self:?}")));
        }
        if !(self.roi.x0 <= self.roi.x1 && self.roi.y0 <= self.roi.y1) {
            return Err(Error::InvalidArgument("empty region of interest".into()));
        }
        Ok(())
    }
}

/// Named noise models. These are modeled error distributions, not
/// measurements of any trained network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoisePreset {
    /// No noise at all.
    Exact,
    /// In-domain behavior: 1.5 px Gaussian noise, 0.5% outliers.
    SynthLike,
    /// Cross-domain failure: 1.5 px noise with 40% outliers.
    MetalOnPlastic,
}

impl NoisePreset {
    pub fn model(self, roi: PixelRect) -> NoiseModel {
        match self {
            NoisePreset::Exact => NoiseModel::exact(roi),
            NoisePreset::SynthLike => NoiseModel {
                gaussian_sigma: 1.5,
                outlier_prob: 0.005,
                miss_prob: 0.0,
                roi,
            },
            NoisePreset::MetalOnPlastic => NoiseModel {
                gaussian_sigma: 1.5,
                outlier_prob: 0.4,
                miss_prob: 0.0,
                roi,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoisePreset::Exact => "exact",
            NoisePreset::SynthLike => "synth-like",
            NoisePreset::MetalOnPlastic => "metal-on-plastic",
        }
    }
}

impl std::str::FromStr for NoisePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(NoisePreset::Exact),
            "synth-like" => Ok(NoisePreset::SynthLike),
            "metal-on-plastic" => Ok(NoisePreset::MetalOnPlastic),
            other => Err(Error::Config(format!("unknown estimator preset {other:?}"))),
        }
    }
}

/// Everything an estimator may look at for one camera in one frame.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub peg: Vector3<f64>,
    pub hole: Vector3<f64>,
    pub camera: &'a CameraModel,
}

/// Produces peg and hole pixel estimates for one camera frame.
pub trait PointEstimator {
    fn estimate(&mut self, observation: &Observation<'_>) -> Result<EstimatePair>;
}

fn noisy_point<R: Rng + ?Sized>(exact: PixelPoint, noise: &NoiseModel, rng: &mut R) -> (PixelPoint, bool) {
    if noise.miss_prob > 0.0 && rng.random_bool(noise.miss_prob) {
        return (exact, false);
    }
    if noise.outlier_prob > 0.0 && rng.random_bool(noise.outlier_prob) {
        return (noise.roi.sample(rng), true);
    }
    if noise.gaussian_sigma > 0.0 {
        let n = Normal::new(0.0, noise.gaussian_sigma).expect("sigma checked non-negative");
        let p = PixelPoint::new(exact.x + n.sample(rng), exact.y + n.sample(rng));
        return (noise.roi.clamp(p), true);
    }
    (noise.roi.clamp(exact), true)
}

/// Projects both points through the true camera and applies `noise`.
///
/// Detected points are clamped to the region of interest. A miss returns the
/// exact projection with the detected flag cleared.
pub fn oracle_estimate<R: Rng + ?Sized>(
    true_peg: &Vector3<f64>,
    true_hole: &Vector3<f64>,
    true_camera: &CameraModel,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<EstimatePair> {
    let peg = true_camera.project(true_peg)?;
    let hole = true_camera.project(true_hole)?;
    let (peg, peg_detected) = noisy_point(peg, noise, rng);
    let (hole, hole_detected) = noisy_point(hole, noise, rng);
    Ok(EstimatePair {
        peg,
        hole,
        peg_detected,
        hole_detected,
    })
}

/// [`oracle_estimate`] behind the [`PointEstimator`] trait, owning its rng.
#[derive(Debug, Clone)]
pub struct OracleEstimator {
    pub noise: NoiseModel,
    rng: SimRng,
}

impl OracleEstimator {
    pub fn new(noise: NoiseModel, rng: SimRng) -> Result<Self> {
        noise.validate()?;
        Ok(Self { noise, rng })
    }
}

impl PointEstimator for OracleEstimator {
    fn estimate(&mut self, obs: &Observation<'_>) -> Result<EstimatePair> {
        oracle_estimate(&obs.peg, &obs.hole, obs.camera, &self.noise, &mut self.rng)
    }
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("thresholds must be sorted ascending".into()));
    }
    Ok(())
}

/// Fraction of samples whose peg and hole are both detected and both within
/// `t` pixels of the truth, for every threshold `t`.
pub fn accuracy_curve(estimates: &[EstimatePair], truths: &[EstimatePair], thresholds: &[f64]) -> Result<Vec<f64>> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    check_thresholds(thresholds)?;
    // worst-case error per sample; a miss never counts
    let errors: Vec<f64> = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| {
            if e.both_detected() {
                e.peg.distance(&t.peg).max(e.hole.distance(&t.hole))
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(success_rates(&errors, thresholds))
}

/// Single-keypoint variant: the fraction of points within `t` pixels.
pub fn point_accuracy_curve(estimates: &[PixelPoint], truths: &[PixelPoint], thresholds: &[f64]) -> Result<Vec<f64>> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    check_thresholds(thresholds)?;
    let errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e.distance(t)).collect();
    Ok(success_rates(&errors, thresholds))
}

fn success_rates(errors: &[f64], thresholds: &[f64]) -> Vec<f64> {
    if errors.is_empty() {
        return vec![0.0; thresholds.len()];
    }
    thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / errors.len() as f64)
        .collect()
}

/// Writes `threshold_px,success_rate` rows.
pub fn write_accuracy_csv<W: Write>(out: W, thresholds: &[f64], rates: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::format("<accuracy csv>", e);
    w.write_record(["threshold_px", "success_rate"]).map_err(io)?;
    for (t, r) in thresholds.iter().zip(rates) {
        w.write_record([t.to_string(), r.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<accuracy csv>", e))
}

pub fn export_accuracy_csv(path: &Path, thresholds: &[f64], rates: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_accuracy_csv(file, thresholds, rates).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Format { message, .. } => Error::format(path, message),
        other => other,
    })
}
