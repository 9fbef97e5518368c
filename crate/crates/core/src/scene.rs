//! Hole/peg scenarios and the randomized sampling of cameras and start poses.

use std::f64::consts::PI;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{look_at, sample_bounded_perturbation, RigidTransform};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let i = Self { lo, hi };
        i.validate()?;
        Ok(i)
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "empty interval [{}, {}]",
                self.lo, self.hi
            )))
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// A hole in a flat surface and the peg meant to go into it.
///
/// The hole frame has its origin at the hole center on the surface with the
/// z-axis pointing out of the surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleScenario {
    pub name: String,
    pub hole_diameter: f64,
    pub peg_diameter: f64,
    pub hole_pose: RigidTransform,
    /// Direction of travel during insertion, world frame.
    pub insertion_direction: Vector3<f64>,
    pub uncertainty_radius: f64,
    /// Half-width of the flat surface around the hole.
    pub surface_extent: f64,
    /// Insertion depth that counts as a successful trial.
    pub required_depth: f64,
    /// Start height of the peg tip above the surface.
    pub start_height: Interval,
}

impl HoleScenario {
    /// Scenario with the hole frame at the world origin, `l = -z`, and an
    /// uncertainty radius of 1.5 peg diameters.
    pub fn flat(
        name: &str,
        hole_diameter: f64,
        peg_diameter: f64,
        required_depth: f64,
        start_height: Interval,
    ) -> Result<Self> {
        let s = Self {
            name: name.to_string(),
            hole_diameter,
            peg_diameter,
            hole_pose: RigidTransform::identity(),
            insertion_direction: -Vector3::z(),
            uncertainty_radius: 1.5 * peg_diameter,
            surface_extent: 0.05,
            required_depth,
            start_height,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn clearance(&self) -> f64 {
        (self.hole_diameter - self.peg_diameter) / 2.0
    }

    pub fn hole_center(&self) -> Vector3<f64> {
        self.hole_pose.translation
    }

    /// Unit normal of the surface, pointing out of the hole.
    pub fn surface_normal(&self) -> Vector3<f64> {
        self.hole_pose.rotation * Vector3::z()
    }

    /// Default convergence threshold of the servo loop: 1/20 of the diameter.
    pub fn default_phi_t(&self) -> f64 {
        self.hole_diameter / 20.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("scenario {}: {m}", self.name)));
        if !(self.peg_diameter > 0.0 && self.peg_diameter < self.hole_diameter) {
            return bad(format!(
                "peg diameter {} must be positive and below hole diameter {}",
                self.peg_diameter, self.hole_diameter
            ));
        }
        if (self.insertion_direction.norm() - 1.0).abs() > 1e-9 {
            return bad("insertion direction must have unit norm".into());
        }
        if !(self.uncertainty_radius > self.clearance()) {
            return bad("uncertainty radius must exceed the clearance".into());
        }
        if !(self.required_depth >= 0.0) || !(self.surface_extent > 0.0) {
            return bad("required depth and surface extent must be non-negative".into());
        }
        self.start_height.validate()
    }
}

/// The four holes of the experiments: metal (H7/h7 shaft fit), two
/// 3D-printed holes and the M4 bolt cap.
pub fn builtin_scenarios() -> Vec<HoleScenario> {
    let mm = 1e-3;
    let tall = Interval {
        lo: 5.0 * mm,
        hi: 15.0 * mm,
    };
    vec![
        HoleScenario::flat("metal", 10.015 * mm, 9.9925 * mm, 10.0 * mm, tall),
        HoleScenario::flat("plastic", 10.6 * mm, 10.0 * mm, 10.0 * mm, tall),
        HoleScenario::flat("wide", 10.4 * mm, 10.0 * mm, 10.0 * mm, tall),
        HoleScenario::flat(
            "cap",
            4.4 * mm,
            3.9 * mm,
            5.0 * mm,
            Interval {
                lo: 3.0 * mm,
                hi: 5.0 * mm,
            },
        ),
    ]
    .into_iter()
    .map(|s| s.expect("builtin scenarios are valid"))
    .collect()
}

pub fn builtin_scenario(name: &str) -> Option<HoleScenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSamplingRanges {
    /// Camera-to-target distance, meters.
    pub distance: Interval,
    /// Angle between the surface plane and the optical axis, degrees.
    pub elevation: Interval,
    /// Rotation about the optical axis, degrees.
    pub roll: Interval,
}

impl Default for CameraSamplingRanges {
    fn default() -> Self {
        Self {
            distance: Interval { lo: 0.12, hi: 0.15 },
            elevation: Interval { lo: 35.0, hi: 45.0 },
            roll: Interval { lo: -5.0, hi: 5.0 },
        }
    }
}

impl CameraSamplingRanges {
    pub fn validate(&self) -> Result<()> {
        self.distance.validate()?;
        self.elevation.validate()?;
        self.roll.validate()?;
        if !(self.distance.lo > 0.0) || self.elevation.lo <= 0.0 || self.elevation.hi >= 90.0 {
            return Err(Error::InvalidArgument(
                "camera distance must be positive and elevation within (0°, 90°)".into(),
            ));
        }
        Ok(())
    }
}

/// Samples a world-from-camera pose looking at `target` over a z-up surface.
///
/// Distance, elevation and roll are uniform in their intervals; azimuth is
/// uniform in `[0°, 360°)`.
pub fn sample_camera_pose<R: Rng + ?Sized>(
    ranges: &CameraSamplingRanges,
    target: &Vector3<f64>,
    rng: &mut R,
) -> Result<RigidTransform> {
    let azimuth = rng.random_range(0.0..2.0 * PI);
    sample_camera_pose_at_azimuth(ranges, target, azimuth, rng)
}

/// [`sample_camera_pose`] with a caller-chosen azimuth (radians).
pub fn sample_camera_pose_at_azimuth<R: Rng + ?Sized>(
    ranges: &CameraSamplingRanges,
    target: &Vector3<f64>,
    azimuth: f64,
    rng: &mut R,
) -> Result<RigidTransform> {
    ranges.validate()?;
    let distance = ranges.distance.sample(rng);
    let elevation = ranges.elevation.sample(rng).to_radians();
    let roll = ranges.roll.sample(rng).to_radians();
    let dir = Vector3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    );
    look_at(&(target + dir * distance), target, &Vector3::z(), roll)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSamplingRanges {
    pub disc_radius: f64,
    /// Height of the peg tip above the surface, meters.
    pub height: Interval,
    pub orientation_error_max_deg: f64,
}

impl StartSamplingRanges {
    /// Disc of three peg diameters, the scenario's height range and 2°
    /// orientation error.
    pub fn for_scenario(s: &HoleScenario) -> Self {
        Self {
            disc_radius: s.uncertainty_radius,
            height: s.start_height,
            orientation_error_max_deg: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.height.validate()?;
        if !(self.disc_radius >= 0.0) || !(self.orientation_error_max_deg >= 0.0) {
            return Err(Error::InvalidArgument(
                "disc radius and orientation error must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Orthonormal pair spanning the plane perpendicular to `n`.
pub fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = n.normalize();
    let seed = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = (seed - n * n.dot(&seed)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Area-uniform point in a disc of radius `radius` centered at the origin,
/// as planar coordinates.
pub fn sample_disc<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> (f64, f64) {
    if radius == 0.0 {
        return (0.0, 0.0);
    }
    let r = radius * rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    (r * theta.cos(), r * theta.sin())
}

/// Samples the start pose of the peg (tool) frame.
///
/// The position is area-uniform over a disc perpendicular to `l` around the
/// hole center, lifted by the sampled height against `l`. The orientation is
/// the hole orientation followed by an axis-angle error.
pub fn sample_peg_start<R: Rng + ?Sized>(
    scenario: &HoleScenario,
    ranges: &StartSamplingRanges,
    rng: &mut R,
) -> Result<RigidTransform> {
    ranges.validate()?;
    let l = scenario.insertion_direction;
    let (e1, e2) = plane_basis(&l);
    let (a, b) = sample_disc(ranges.disc_radius, rng);
    let height = ranges.height.sample(rng);
    let position = scenario.hole_center() + e1 * a + e2 * b - l * height;
    let err = sample_bounded_perturbation(ranges.orientation_error_max_deg.to_radians(), 0.0, rng);
    Ok(RigidTransform::new(
        scenario.hole_pose.rotation * err.rotation,
        position,
    ))
}

/// Rotation taking the z-axis onto `-l`, used to build a hole frame whose
/// normal opposes the insertion direction.
pub fn hole_rotation_for(l: &Vector3<f64>) -> UnitQuaternion<f64> {
    let target = Unit::new_normalize(-l);
    UnitQuaternion::rotation_between_axis(&Vector3::z_axis(), &target)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI))
}
