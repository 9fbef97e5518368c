//! Kinematic simulation of the peg-in-hole cell.
//!
//! The world holds the ground truth (hole, peg, cameras, grasp) next to what
//! the controllers believe (perturbed cameras and hole position). Motion is
//! velocity limited, contact is purely geometric, and insertion succeeds when
//! the peg tip is within the clearance of the hole axis and the peg axis is
//! tilted by no more than [`INSERTION_ANGLE_LIMIT_DEG`].

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_bounded_perturbation, CameraIntrinsics, CameraModel, RigidTransform};
use crate::scene::{sample_camera_pose_at_azimuth, sample_peg_start, CameraSamplingRanges, HoleScenario, StartSamplingRanges};
use crate::SimRng;

/// Largest peg tilt relative to the hole axis that still inserts.
pub const INSERTION_ANGLE_LIMIT_DEG: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionModel {
    pub max_speed: f64,
    pub dt: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self {
            max_speed: 0.05,
            dt: 1.0 / 30.0,
        }
    }
}

impl MotionModel {
    pub fn validate(&self) -> Result<()> {
        if self.max_speed > 0.0 && self.dt > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid motion model {self:?}")))
        }
    }
}

/// Upper bounds for a random rigid perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationBounds {
    pub max_rot_deg: f64,
    pub max_trans: f64,
}

impl PerturbationBounds {
    pub const ZERO: Self = Self {
        max_rot_deg: 0.0,
        max_trans: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.max_rot_deg >= 0.0 && self.max_trans >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("negative perturbation bounds {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: String,
    pub success: bool,
    pub elapsed: f64,
    pub insertion_depth: f64,
    pub outcome_detail: String,
}

/// How a world is generated. `start: None` uses
/// [`StartSamplingRanges::for_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub camera_count: usize,
    pub intrinsics: CameraIntrinsics,
    /// When set, the focal lengths are rescaled per scenario so the hole
    /// diameter spans this many pixels at the mean camera distance, like a
    /// region-of-interest crop resized to the model input.
    pub roi_hole_pixels: Option<f64>,
    pub camera_ranges: CameraSamplingRanges,
    /// Extrinsic error of the believed cameras, also used for the believed
    /// hole position.
    pub calibration: PerturbationBounds,
    pub grasp: PerturbationBounds,
    pub start: Option<StartSamplingRanges>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            camera_count: 2,
            intrinsics: CameraIntrinsics::roi_default(),
            roi_hole_pixels: Some(50.0),
            camera_ranges: CameraSamplingRanges::default(),
            calibration: PerturbationBounds {
                max_rot_deg: 2.0,
                max_trans: 0.010,
            },
            grasp: PerturbationBounds {
                max_rot_deg: 1.0,
                max_trans: 0.001,
            },
            start: None,
        }
    }
}

impl WorldConfig {
    /// Intrinsics used for `scenario`, after the optional ROI rescaling.
    pub fn intrinsics_for(&self, scenario: &HoleScenario) -> Result<CameraIntrinsics> {
        let mut k = self.intrinsics;
        if let Some(px) = self.roi_hole_pixels {
            if !(px > 0.0) {
                return Err(Error::InvalidArgument(format!("roi_hole_pixels must be positive, got {px}")));
            }
            let d = (self.camera_ranges.distance.lo + self.camera_ranges.distance.hi) / 2.0;
            let f = px * d / scenario.hole_diameter;
            let aspect = k.fy / k.fx;
            k.fx = f;
            k.fy = f * aspect;
        }
        k.validate()?;
        Ok(k)
    }

    /// Perfect calibration and grasp.
    pub fn exact() -> Self {
        Self {
            calibration: PerturbationBounds::ZERO,
            grasp: PerturbationBounds::ZERO,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub scenario: HoleScenario,
    /// True pose of the robot tool (TCP). Its translation is what the robot
    /// reports as its position.
    pub tcp_pose: RigidTransform,
    /// TCP-to-peg-tip transform; unknown to every controller.
    pub grasp_offset: RigidTransform,
    pub true_cameras: Vec<CameraModel>,
    pub believed_cameras: Vec<CameraModel>,
    /// Hole center as known from calibration.
    pub believed_hole: Vector3<f64>,
    pub start_tcp: Vector3<f64>,
    pub clock: f64,
    pub steps: u64,
}

impl WorldState {
    /// World with a single TCP pose and identity grasp, no cameras.
    pub fn new(scenario: HoleScenario, tcp_pose: RigidTransform) -> Self {
        Self {
            believed_hole: scenario.hole_center(),
            start_tcp: tcp_pose.translation,
            scenario,
            tcp_pose,
            grasp_offset: RigidTransform::identity(),
            true_cameras: Vec::new(),
            believed_cameras: Vec::new(),
            clock: 0.0,
            steps: 0,
        }
    }

    /// Robot-reported position `q`.
    pub fn tcp_position(&self) -> Vector3<f64> {
        self.tcp_pose.translation
    }

    pub fn peg_tip(&self) -> Vector3<f64> {
        self.tcp_pose.transform_point(&self.grasp_offset.translation)
    }

    /// Unit peg axis pointing from the peg body towards its tip.
    pub fn peg_axis(&self) -> Vector3<f64> {
        self.tcp_pose.rotation * (self.grasp_offset.rotation * -Vector3::z())
    }

    /// Tilt of the peg axis relative to the hole axis, radians.
    pub fn tilt(&self) -> f64 {
        let into_hole = -self.scenario.surface_normal();
        self.peg_axis().dot(&into_hole).clamp(-1.0, 1.0).acos()
    }

    /// Offset of `point` from the hole axis, split into height above the
    /// surface and planar offset.
    pub fn hole_coordinates(&self, point: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let n = self.scenario.surface_normal();
        let d = point - self.scenario.hole_center();
        let h = d.dot(&n);
        (h, d - n * h)
    }

    /// Moves the TCP towards `target` by at most `max_speed·dt` and advances
    /// the clock by `dt`.
    pub fn step_toward(&mut self, target: &Vector3<f64>, motion: &MotionModel) {
        let delta = target - self.tcp_pose.translation;
        let max_step = motion.max_speed * motion.dt;
        let dist = delta.norm();
        if dist <= max_step {
            self.tcp_pose.translation = *target;
        } else {
            self.tcp_pose.translation += delta * (max_step / dist);
        }
        self.steps += 1;
        self.clock += motion.dt;
    }

    /// Straight move of the TCP to `target` at constant `speed`; the clock
    /// advances by the exact travel time, which is returned.
    pub fn move_linear(&mut self, target: &Vector3<f64>, speed: f64) -> f64 {
        let t = (target - self.tcp_pose.translation).norm() / speed;
        self.tcp_pose.translation = *target;
        self.clock += t;
        t
    }

    pub fn contact_query(&self) -> ContactState {
        let (height, planar) = self.hole_coordinates(&self.peg_tip());
        let planar_error = planar.norm();
        ContactState {
            height_above_surface: height,
            over_hole: planar_error <= self.scenario.clearance(),
            planar_error,
        }
    }

    /// Moves the peg along the insertion direction. Inserts to
    /// `required_depth` when over the hole with an admissible tilt, otherwise
    /// stops on the surface. Returns the depth reached and the elapsed time.
    pub fn attempt_insertion(&mut self, required_depth: f64, motion: &MotionModel) -> (f64, f64) {
        let contact = self.contact_query();
        let l = self.scenario.insertion_direction;
        let descent_rate = l.dot(&-self.scenario.surface_normal());
        if descent_rate <= 0.0 {
            return (0.0, 0.0);
        }
        let height = contact.height_above_surface.max(0.0);
        let fits = contact.over_hole && self.tilt() <= INSERTION_ANGLE_LIMIT_DEG.to_radians();
        let (travel, depth) = if fits {
            ((height + required_depth) / descent_rate, required_depth)
        } else {
            (height / descent_rate, 0.0)
        };
        let target = self.tcp_pose.translation + l * travel;
        let elapsed = self.move_linear(&target, motion.max_speed);
        (depth, elapsed)
    }

    /// Lowers the peg along the insertion direction until it touches the
    /// surface (no-op if already at or below it).
    pub fn descend_to_surface(&mut self, speed: f64) -> f64 {
        let l = self.scenario.insertion_direction;
        let rate = l.dot(&-self.scenario.surface_normal());
        let h = self.contact_query().height_above_surface;
        if h <= 0.0 || rate <= 0.0 {
            return 0.0;
        }
        let target = self.tcp_pose.translation + l * (h / rate);
        self.move_linear(&target, speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactState {
    pub height_above_surface: f64,
    pub over_hole: bool,
    pub planar_error: f64,
}

/// Derives an independent generator for `stream` from a trial seed.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = crate::rng_from_seed(seed);
    rng.set_stream(stream);
    rng
}

/// Builds a random world for one trial.
///
/// Cameras look at the hole; the first azimuth is uniform and further cameras
/// are spread by 180°/n so that their constraint directions differ. Believed
/// cameras and the believed hole carry the calibration error, the grasp
/// offset carries the grasp error, and the TCP starts at a sampled peg start.
pub fn make_world(scenario: &HoleScenario, seed: u64, config: &WorldConfig) -> Result<WorldState> {
    scenario.validate()?;
    config.calibration.validate()?;
    config.grasp.validate()?;
    config.intrinsics.validate()?;
    if config.camera_count == 0 {
        return Err(Error::InvalidArgument("at least one camera is required".into()));
    }
    let intrinsics = config.intrinsics_for(scenario)?;
    let mut rng = stream_rng(seed, 0);
    let base_azimuth = rng.random_range(0.0..2.0 * PI);
    let mut true_cameras = Vec::with_capacity(config.camera_count);
    for i in 0..config.camera_count {
        let azimuth = base_azimuth + i as f64 * PI / config.camera_count as f64;
        let local = sample_camera_pose_at_azimuth(&config.camera_ranges, &Vector3::zeros(), azimuth, &mut rng)?;
        let world_pose = scenario.hole_pose.compose(&local);
        true_cameras.push(CameraModel::from_world_pose(intrinsics, &world_pose));
    }
    let believed_cameras = true_cameras
        .iter()
        .map(|c| c.perturb_extrinsics(config.calibration.max_rot_deg, config.calibration.max_trans, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let hole_error = sample_bounded_perturbation(0.0, config.calibration.max_trans, &mut rng);
    let grasp_offset = sample_bounded_perturbation(config.grasp.max_rot_deg.to_radians(), config.grasp.max_trans, &mut rng);
    let start_ranges = config.start.unwrap_or_else(|| StartSamplingRanges::for_scenario(scenario));
    let tcp_pose = sample_peg_start(scenario, &start_ranges, &mut rng)?;
    Ok(WorldState {
        scenario: scenario.clone(),
        start_tcp: tcp_pose.translation,
        tcp_pose,
        grasp_offset,
        true_cameras,
        believed_cameras,
        believed_hole: scenario.hole_center() + hole_error.translation,
        clock: 0.0,
        steps: 0,
    })
}
