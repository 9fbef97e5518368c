//! Rigid transforms and pinhole cameras.
//!
//! Camera poses are stored camera-from-world. The camera position (the `c_i`
//! of the servo loop) is the translation of the inverse pose. Depth is always
//! measured along the optical axis (camera +z), so backprojection at a fixed
//! depth is linear in the pixel coordinates.

use nalgebra::{Matrix3, Point3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::PixelPoint;

/// A proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        let mut rotation = rotation;
        rotation.renormalize();
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation about `axis` (need not be normalized) by `angle` radians.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let rotation = Unit::try_new(axis, 1e-15)
            .map(|a| UnitQuaternion::from_axis_angle(&a, angle))
            .unwrap_or_else(UnitQuaternion::identity);
        Self::new(rotation, Vector3::zeros())
    }

    /// Builds a transform from a rotation matrix whose columns are an
    /// orthonormal right-handed frame.
    pub fn from_rotation_matrix(m: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(m);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform::new(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle of `self` in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Angle of the relative rotation between two transforms, radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn approx_eq(&self, other: &RigidTransform, tol: f64) -> bool {
        let dq = self.rotation.coords - other.rotation.coords;
        let dq_neg = self.rotation.coords + other.rotation.coords;
        let rot_close = dq.amax() <= tol || dq_neg.amax() <= tol;
        rot_close && (self.translation - other.translation).amax() <= tol
    }
}

/// World-from-camera pose for a camera at `eye` whose optical axis points at
/// `target`. Image x points right and image y points "down" relative to `up`.
/// `roll` (radians) rotates the image about the optical axis.
///
/// Fails when the viewing direction is parallel to `up`.
pub fn look_at(
    eye: &Vector3<f64>,
    target: &Vector3<f64>,
    up: &Vector3<f64>,
    roll: f64,
) -> Result<RigidTransform> {
    let forward = Unit::try_new(target - eye, 1e-12)
        .ok_or_else(|| Error::InvalidArgument("eye and target coincide".into()))?;
    let right = Unit::try_new(forward.cross(up), 1e-12)
        .ok_or_else(|| Error::InvalidArgument("view direction parallel to up".into()))?;
    let down = forward.cross(&right);
    let (s, c) = roll.sin_cos();
    let x = right.into_inner() * c + down * s;
    let y = -right.into_inner() * s + down * c;
    let m = Matrix3::from_columns(&[x, y, forward.into_inner()]);
    Ok(RigidTransform::from_rotation_matrix(m, *eye))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidArgument(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// 224x224 region of interest with a 675 px focal length: a 10 mm peg at
    /// 13.5 cm spans 50 px.
    pub fn roi_default() -> Self {
        Self {
            fx: 675.0,
            fy: 675.0,
            cx: 112.0,
            cy: 112.0,
            width: 224,
            height: 224,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    /// Camera-from-world.
    pub pose: RigidTransform,
}

impl CameraModel {
    pub fn new(intrinsics: CameraIntrinsics, pose: RigidTransform) -> Self {
        Self { intrinsics, pose }
    }

    /// Builds a camera from a world-from-camera pose.
    pub fn from_world_pose(intrinsics: CameraIntrinsics, world_from_camera: &RigidTransform) -> Self {
        Self::new(intrinsics, world_from_camera.inverse())
    }

    pub fn world_from_camera(&self) -> RigidTransform {
        self.pose.inverse()
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        -(self.pose.rotation.inverse() * self.pose.translation)
    }

    /// Unit optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.pose.rotation.inverse() * Vector3::z()
    }

    /// Depth of a world point along the optical axis.
    pub fn depth_of(&self, point: &Vector3<f64>) -> f64 {
        self.pose.transform_point(point).z
    }

    pub fn project(&self, point: &Vector3<f64>) -> Result<PixelPoint> {
        let pc = self.pose.transform_point(point);
        if pc.z <= 0.0 {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        let k = &self.intrinsics;
        Ok(PixelPoint::new(
            k.fx * pc.x / pc.z + k.cx,
            k.fy * pc.y / pc.z + k.cy,
        ))
    }

    /// World point at optical-axis depth `z` that projects to `pixel`.
    pub fn backproject_at_depth(&self, pixel: &PixelPoint, z: f64) -> Result<Vector3<f64>> {
        if !(z > 0.0) {
            return Err(Error::InvalidDepth(z));
        }
        let k = &self.intrinsics;
        let pc = Point3::new((pixel.x - k.cx) / k.fx * z, (pixel.y - k.cy) / k.fy * z, z);
        Ok(self.pose.inverse().transform_point(&pc.coords))
    }

    /// Returns a copy whose pose is rotated about the camera center by at most
    /// `max_rot_deg` and whose center is shifted by at most `max_trans`.
    ///
    /// Rotation: axis uniform on the sphere, angle uniform in `[0, max_rot]`.
    /// Translation: direction uniform, magnitude uniform in `[0, max_trans]`.
    pub fn perturb_extrinsics<R: Rng + ?Sized>(
        &self,
        max_rot_deg: f64,
        max_trans: f64,
        rng: &mut R,
    ) -> Result<CameraModel> {
        if !(max_rot_deg >= 0.0) || !(max_trans >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "perturbation bounds must be non-negative (rot={max_rot_deg}, trans={max_trans})"
            )));
        }
        if max_rot_deg == 0.0 && max_trans == 0.0 {
            return Ok(*self);
        }
        let delta = sample_bounded_perturbation(max_rot_deg.to_radians(), max_trans, rng);
        let wc = self.world_from_camera();
        let perturbed = RigidTransform::new(
            delta.rotation * wc.rotation,
            wc.translation + delta.translation,
        );
        Ok(CameraModel::from_world_pose(self.intrinsics, &perturbed))
    }
}

/// Uniform random unit vector.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let v: [f64; 3] = UnitSphere.sample(rng);
    Vector3::from(v).normalize()
}

/// Rotation with uniform axis and angle uniform in `[0, max_angle]` (radians),
/// paired with a translation of uniform direction and magnitude in
/// `[0, max_trans]`. Zero bounds consume no randomness and give identity.
pub fn sample_bounded_perturbation<R: Rng + ?Sized>(
    max_angle: f64,
    max_trans: f64,
    rng: &mut R,
) -> RigidTransform {
    let rotation = if max_angle > 0.0 {
        let axis = random_unit_vector(rng);
        let angle = rng.random_range(0.0..=max_angle);
        UnitQuaternion::from_axis_angle(&Unit::new_unchecked(axis), angle)
    } else {
        UnitQuaternion::identity()
    };
    let translation = if max_trans > 0.0 {
        let dir = random_unit_vector(rng);
        dir * rng.random_range(0.0..=max_trans)
    } else {
        Vector3::zeros()
    };
    RigidTransform::new(rotation, translation)
}
