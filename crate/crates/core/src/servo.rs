//! Multi-camera visual servoing for positional peg-hole alignment.
//!
//! Every frame, each camera contributes one scalar constraint. The peg and
//! hole pixel estimates are lifted to 3-D on the camera's constant-depth
//! plane, and the error between them is measured along
//!
//! ```text
//! u_i = (v_i × l) / |v_i × l|,   v_i = (p_i + h_i)/2 − c_i
//! b_i = u_i · (h_i − p_i)
//! ```
//!
//! which is the only direction in the motion plane (perpendicular to `l`)
//! that a single view can observe. Stacking the rows `u_iᵀ ê = b_i` and taking
//! the minimum-norm least-squares solution gives the error estimate `ê`. The
//! commanded target and the error magnitude are smoothed by exponential
//! moving averages, and the loop stops once the filtered error magnitude
//! drops to `phi_t`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimatePair, Observation, PointEstimator};
use crate::geometry::CameraModel;
use crate::world::{MotionModel, WorldState};

/// Relative singular-value cutoff of the pseudoinverse.
const PINV_RTOL: f64 = 1e-9;

/// Frames in a row without any usable constraint that the loop tolerates.
pub const MAX_STARVED_FRAMES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewConstraint {
    pub u: Vector3<f64>,
    pub b: f64,
    pub camera_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    /// Insertion direction, unit length.
    pub l: Vector3<f64>,
    /// Assumed optical-axis depth of peg and hole, one per camera.
    pub depths: Vec<f64>,
    /// Convergence threshold on the filtered error magnitude.
    pub phi_t: f64,
    pub alpha_tau: f64,
    pub alpha_gamma: f64,
    pub alpha_phi: f64,
    pub loop_dt: f64,
    pub max_duration: f64,
    /// Speed limit of the robot while tracking the target.
    pub max_speed: f64,
}

impl ServoConfig {
    /// Filter coefficients of 0.9, 30 Hz loop, 20 s time limit.
    pub fn new(l: Vector3<f64>, depths: Vec<f64>, phi_t: f64) -> Self {
        Self {
            l,
            depths,
            phi_t,
            alpha_tau: 0.9,
            alpha_gamma: 0.9,
            alpha_phi: 0.9,
            loop_dt: 1.0 / 30.0,
            max_duration: 20.0,
            max_speed: MotionModel::default().max_speed,
        }
    }

    pub fn motion(&self) -> MotionModel {
        MotionModel {
            max_speed: self.max_speed,
            dt: self.loop_dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("servo config: {m}")));
        if (self.l.norm() - 1.0).abs() > 1e-9 {
            return bad("insertion direction must be a unit vector");
        }
        if self.depths.iter().any(|z| !(*z > 0.0)) {
            return bad("depths must be positive");
        }
        if !(self.phi_t > 0.0) || !(self.loop_dt > 0.0) || !(self.max_speed > 0.0) {
            return bad("phi_t, loop_dt and max_speed must be positive");
        }
        let unit = 0.0..1.0;
        if !unit.contains(&self.alpha_tau) || !unit.contains(&self.alpha_gamma) || !unit.contains(&self.alpha_phi) {
            return bad("filter coefficients must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Optical-axis depth of the believed hole center in each believed camera.
pub fn estimate_depths(believed_cameras: &[CameraModel], believed_hole: &Vector3<f64>) -> Vec<f64> {
    believed_cameras.iter().map(|c| c.depth_of(believed_hole)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoState {
    /// Filtered target position.
    pub tau: Vector3<f64>,
    /// Filtered error vector; `None` before the first update.
    pub gamma: Option<Vector3<f64>>,
    /// Filtered error magnitude.
    pub phi: f64,
}

impl ServoState {
    pub fn initial(q: Vector3<f64>, phi_t: f64) -> Self {
        Self {
            tau: q,
            gamma: None,
            phi: 10.0 * phi_t,
        }
    }
}

/// Builds the constraint contributed by one camera.
pub fn compute_view_constraint(
    believed_camera: &CameraModel,
    estimates: &EstimatePair,
    z: f64,
    l: &Vector3<f64>,
    camera_index: usize,
) -> Result<ViewConstraint> {
    if !estimates.both_detected() {
        return Err(Error::InvalidArgument("peg and hole must both be detected".into()));
    }
    let p = believed_camera.backproject_at_depth(&estimates.peg, z)?;
    let h = believed_camera.backproject_at_depth(&estimates.hole, z)?;
    Ok(constraint_from_points(&p, &h, &believed_camera.position(), l, camera_index)?)
}

/// Constraint from 3-D peg and hole points seen from camera center `c`.
pub fn constraint_from_points(
    p: &Vector3<f64>,
    h: &Vector3<f64>,
    c: &Vector3<f64>,
    l: &Vector3<f64>,
    camera_index: usize,
) -> Result<ViewConstraint> {
    let v = (p + h) / 2.0 - c;
    let cross = v.cross(l);
    let n = cross.norm();
    if !(n > 1e-9 * v.norm()) {
        return Err(Error::DegenerateView);
    }
    let u = cross / n;
    Ok(ViewConstraint {
        u,
        b: u.dot(&(h - p)),
        camera_index,
    })
}

/// Minimum-norm least-squares solution of `A ê = b` with rows `u_iᵀ`.
pub fn solve_error(constraints: &[ViewConstraint]) -> Result<Vector3<f64>> {
    if constraints.is_empty() {
        return Err(Error::NoConstraints);
    }
    let a = DMatrix::from_fn(constraints.len(), 3, |r, c| constraints[r].u[c]);
    let b = DVector::from_iterator(constraints.len(), constraints.iter().map(|c| c.b));
    let svd = a.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let mut e = Vector3::zeros();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > PINV_RTOL * sigma_max {
            let coef = u.column(k).dot(&b) / s;
            e += v_t.row(k).transpose() * coef;
        }
    }
    Ok(e)
}

/// One filter update. Returns the new state and the robot target `τ'`.
pub fn servo_step(state: &ServoState, e: &Vector3<f64>, q: &Vector3<f64>, config: &ServoConfig) -> (ServoState, Vector3<f64>) {
    let t = q + e;
    let tau = state.tau * config.alpha_tau + t * (1.0 - config.alpha_tau);
    let gamma = match state.gamma {
        Some(g) => g * config.alpha_gamma + e * (1.0 - config.alpha_gamma),
        None => *e,
    };
    let phi = config.alpha_phi * state.phi + (1.0 - config.alpha_phi) * gamma.norm();
    (
        ServoState {
            tau,
            gamma: Some(gamma),
            phi,
        },
        tau,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServoStatus {
    Converged,
    TimedOut,
    BoundaryExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time: f64,
    pub position: Vector3<f64>,
    pub error: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoOutcome {
    pub status: ServoStatus,
    /// Planar distance between the true peg tip and the hole axis at exit.
    pub final_planar_error: f64,
    pub elapsed: f64,
    pub iterations: usize,
    pub final_state: ServoState,
    /// Rank of the last solved system; below 2 the error is only observed
    /// along a line.
    pub min_rank: usize,
    pub trace: Vec<TracePoint>,
}

fn constraint_rank(constraints: &[ViewConstraint]) -> usize {
    let a = DMatrix::from_fn(constraints.len(), 3, |r, c| constraints[r].u[c]);
    let sv = a.singular_values();
    let max = sv.max();
    sv.iter().filter(|&&s| s > PINV_RTOL * max).count()
}

/// Runs the servo loop on `world` until convergence, timeout, or the TCP
/// leaving a disc of radius `boundary` around its start position.
///
/// The estimator looks through the world's true cameras; constraints are
/// built with `believed_cameras`. Cameras without a detection of both points
/// or with a degenerate view are skipped for that frame; a frame without any
/// constraint keeps the filter state. More than [`MAX_STARVED_FRAMES`] such
/// frames in a row is an error.
pub fn run_servo(
    world: &mut WorldState,
    believed_cameras: &[CameraModel],
    estimator: &mut dyn PointEstimator,
    config: &ServoConfig,
    boundary: f64,
) -> Result<ServoOutcome> {
    config.validate()?;
    if believed_cameras.len() != world.true_cameras.len() || config.depths.len() != believed_cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} believed cameras, {} true cameras, {} depths",
            believed_cameras.len(),
            world.true_cameras.len(),
            config.depths.len()
        )));
    }
    let motion = config.motion();
    let l = config.l;
    let start = world.tcp_position();
    let t0 = world.clock;
    let hole = world.scenario.hole_center();
    let true_cameras = world.true_cameras.clone();

    let mut state = ServoState::initial(start, config.phi_t);
    let mut iterations = 0;
    let mut starved = 0;
    let mut min_rank = 3;
    let mut trace = Vec::new();
    let mut constraints = Vec::with_capacity(believed_cameras.len());

    let status = loop {
        if state.phi <= config.phi_t {
            break ServoStatus::Converged;
        }
        if world.clock - t0 >= config.max_duration - 1e-12 {
            break ServoStatus::TimedOut;
        }
        let q = world.tcp_position();
        let peg = world.peg_tip();
        constraints.clear();
        for (i, (cam, believed)) in true_cameras.iter().zip(believed_cameras).enumerate() {
            let est = estimator.estimate(&Observation {
                peg,
                hole,
                camera: cam,
            })?;
            if !est.both_detected() {
                continue;
            }
            match compute_view_constraint(believed, &est, config.depths[i], &l, i) {
                Ok(c) => constraints.push(c),
                Err(Error::DegenerateView) => {}
                Err(e) => return Err(e),
            }
        }

        let (target, e) = if constraints.is_empty() {
            starved += 1;
            if starved > MAX_STARVED_FRAMES {
                return Err(Error::EstimationStarved(starved));
            }
            (state.tau, Vector3::zeros())
        } else {
            starved = 0;
            min_rank = min_rank.min(constraint_rank(&constraints));
            let e = solve_error(&constraints)?;
            let (next, target) = servo_step(&state, &e, &q, config);
            state = next;
            (target, e)
        };

        world.step_toward(&target, &motion);
        iterations += 1;
        trace.push(TracePoint {
            time: world.clock - t0,
            position: world.tcp_position(),
            error: e,
        });

        let moved = world.tcp_position() - start;
        let planar = moved - l * moved.dot(&l);
        if planar.norm() > boundary {
            break ServoStatus::BoundaryExceeded;
        }
    };

    Ok(ServoOutcome {
        status,
        final_planar_error: world.contact_query().planar_error,
        elapsed: world.clock - t0,
        iterations,
        final_state: state,
        min_rank,
        trace,
    })
}

/// Writes the trace as `time_s,px,py,pz,ex,ey,ez`.
pub fn write_trace_csv<W: Write>(out: W, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::format("<trace csv>", e);
    w.write_record(["time_s", "px", "py", "pz", "ex", "ey", "ez"]).map_err(err)?;
    for t in trace {
        let row = [
            t.time,
            t.position.x,
            t.position.y,
            t.position.z,
            t.error.x,
            t.error.y,
            t.error.z,
        ];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<trace csv>", e))
}

pub fn export_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(file, trace).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Format { message, .. } => Error::format(path, message),
        other => other,
    })
}
