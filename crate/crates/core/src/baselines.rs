//! Search baselines: random search, spiral search and the calibrated direct
//! move.
//!
//! Contact is geometric. "Pressing against the surface" means the peg tip
//! slides on the surface plane, and the search succeeds as soon as the tip
//! comes within the clearance of the hole axis. Every motion advances the
//! world clock by its exact length over its speed.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{plane_basis, sample_disc, HoleScenario};
use crate::world::{MotionModel, TrialResult, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpiralParams {
    /// Radial growth per revolution, meters.
    pub pitch: f64,
    /// Path speed along the spiral, m/s.
    pub speed: f64,
}

impl SpiralParams {
    /// Pitch of 1.5 clearances at 10 mm/s.
    pub fn for_scenario(s: &HoleScenario) -> Self {
        Self {
            pitch: 1.5 * s.clearance(),
            speed: 0.010,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pitch > 0.0 && self.speed > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid spiral parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSearchParams {
    pub time_limit: f64,
    /// Fixed cost of one probe (descend, detect contact, retract), seconds.
    pub probe_time: f64,
    /// Optional cap on the number of probes.
    pub max_attempts: Option<u64>,
}

impl Default for RandomSearchParams {
    fn default() -> Self {
        Self {
            time_limit: 30.0,
            probe_time: 0.5,
            max_attempts: None,
        }
    }
}

impl RandomSearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.time_limit > 0.0 && self.probe_time >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid random search parameters {self:?}")))
        }
    }
}

fn finish(world: &mut WorldState, method: &str, t0: f64, motion: &MotionModel, detail: &str) -> TrialResult {
    let required = world.scenario.required_depth;
    let (depth, _) = world.attempt_insertion(required, motion);
    let success = depth >= required;
    TrialResult {
        method: method.to_string(),
        success,
        elapsed: world.clock - t0,
        insertion_depth: depth,
        outcome_detail: if success { detail.to_string() } else { "jammed".to_string() },
    }
}

fn failure(world: &WorldState, method: &str, t0: f64, detail: &str) -> TrialResult {
    TrialResult {
        method: method.to_string(),
        success: false,
        elapsed: world.clock - t0,
        insertion_depth: 0.0,
        outcome_detail: detail.to_string(),
    }
}

/// Outcome of [`random_search`] together with the number of probes made.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSearchOutcome {
    pub result: TrialResult,
    pub attempts: u64,
}

/// Probes uniform points of the uncertainty disc around the believed hole
/// until the peg drops below the surface or the time limit is reached.
///
/// Each probe costs the lateral travel time plus `probe_time`. A successful
/// probe is followed by the insertion to the required depth.
pub fn random_search<R: Rng + ?Sized>(
    world: &mut WorldState,
    params: &RandomSearchParams,
    motion: &MotionModel,
    rng: &mut R,
) -> Result<RandomSearchOutcome> {
    params.validate()?;
    motion.validate()?;
    let t0 = world.clock;
    let scenario = world.scenario.clone();
    let l = scenario.insertion_direction;
    let (e1, e2) = plane_basis(&l);
    let believed = world.believed_hole;
    let mut attempts = 0;
    loop {
        if world.clock - t0 >= params.time_limit {
            return Ok(RandomSearchOutcome {
                result: failure(world, "random", t0, "time limit"),
                attempts,
            });
        }
        if params.max_attempts.is_some_and(|m| attempts >= m) {
            return Ok(RandomSearchOutcome {
                result: failure(world, "random", t0, "attempt limit"),
                attempts,
            });
        }
        let (a, b) = sample_disc(scenario.uncertainty_radius, rng);
        let q = world.tcp_position();
        // keep the current height along l, move within the plane
        let along = (q - believed).dot(&l);
        let target = believed + e1 * a + e2 * b + l * along;
        world.move_linear(&target, motion.max_speed);
        attempts += 1;
        if world.contact_query().over_hole {
            let result = finish(world, "random", t0, motion, "inserted");
            return Ok(RandomSearchOutcome { result, attempts });
        }
        world.clock += params.probe_time;
    }
}

/// Point of the segment `a`–`b` closest to `p`, with its parameter in [0, 1].
fn closest_on_segment(a: &Vector3<f64>, b: &Vector3<f64>, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return (0.0, *a);
    }
    let t = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
    (t, a + d * t)
}

/// Path of one spiral search, for inspection and tests.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpiralTrace {
    /// TCP positions at the polyline vertices actually traversed.
    pub vertices: Vec<Vector3<f64>>,
    pub path_length: f64,
    pub descent_time: f64,
}

/// Presses the peg onto the surface and sweeps an Archimedean spiral
/// `r = pitch·θ/2π` around the contact point at constant path speed.
///
/// Succeeds when the tip passes within the clearance of the hole axis; fails
/// once the spiral radius exceeds `uncertainty_radius + pitch/2`, the
/// smallest radius at which every point of the uncertainty disc has been
/// passed within half a pitch.
pub fn spiral_search(
    world: &mut WorldState,
    params: &SpiralParams,
    motion: &MotionModel,
    uncertainty_radius: f64,
) -> Result<TrialResult> {
    spiral_search_traced(world, params, motion, uncertainty_radius).map(|(r, _)| r)
}

pub fn spiral_search_traced(
    world: &mut WorldState,
    params: &SpiralParams,
    motion: &MotionModel,
    uncertainty_radius: f64,
) -> Result<(TrialResult, SpiralTrace)> {
    params.validate()?;
    motion.validate()?;
    let t0 = world.clock;
    let mut trace = SpiralTrace {
        descent_time: world.descend_to_surface(motion.max_speed),
        ..SpiralTrace::default()
    };
    let scenario = world.scenario.clone();
    let clearance = scenario.clearance();
    let (e1, e2) = plane_basis(&scenario.insertion_direction);
    let center = world.tcp_position();
    // tip = tcp + offset while the orientation is fixed
    let tip_offset = world.peg_tip() - center;
    let hole = scenario.hole_center();
    let normal = scenario.surface_normal();
    let planar = |x: &Vector3<f64>| {
        let d = x - hole;
        d - normal * d.dot(&normal)
    };

    let k = params.pitch / (2.0 * PI);
    let r_stop = uncertainty_radius + params.pitch / 2.0;
    let point_at = |theta: f64| {
        let r = k * theta;
        center + (e1 * theta.cos() + e2 * theta.sin()) * r
    };
    // chord sagitta r·dθ²/8 stays below a thousandth of the clearance
    let max_dtheta = |r: f64| -> f64 {
        if r <= 0.0 {
            PI / 8.0
        } else {
            (0.008 * clearance / r).sqrt().min(PI / 8.0)
        }
    };

    trace.vertices.push(center);
    if world.contact_query().over_hole {
        let result = finish(world, "spiral", t0, motion, "inserted");
        return Ok((result, trace));
    }
    let mut theta = 0.0;
    let mut prev = center;
    loop {
        let r = k * theta;
        if r > r_stop {
            return Ok((failure(world, "spiral", t0, "boundary"), trace));
        }
        theta += max_dtheta(r);
        let next = point_at(theta);
        // the tip's closest approach to the hole axis on this chord
        let (s, tip_closest) = closest_on_segment(
            &planar(&(prev + tip_offset)),
            &planar(&(next + tip_offset)),
            &Vector3::zeros(),
        );
        if tip_closest.norm() <= clearance {
            let stop = prev + (next - prev) * s;
            let len = (stop - prev).norm();
            world.move_linear(&stop, params.speed);
            if world.contact_query().over_hole {
                trace.path_length += len;
                trace.vertices.push(stop);
                let result = finish(world, "spiral", t0, motion, "inserted");
                return Ok((result, trace));
            }
            // rounding put the closest point just outside the success disc
            world.move_linear(&next, params.speed);
            trace.path_length += (next - prev).norm();
        } else {
            trace.path_length += (next - prev).norm();
            world.move_linear(&next, params.speed);
        }
        trace.vertices.push(next);
        prev = next;
    }
}

/// Moves the TCP straight to the believed hole at the current height and
/// inserts, trusting calibration and grasp completely.
pub fn optimal_align(world: &mut WorldState, motion: &MotionModel) -> Result<TrialResult> {
    motion.validate()?;
    let t0 = world.clock;
    let l = world.scenario.insertion_direction;
    let q = world.tcp_position();
    let along = (q - world.believed_hole).dot(&l);
    let target = world.believed_hole + l * along;
    world.move_linear(&target, motion.max_speed);
    let required = world.scenario.required_depth;
    let (depth, _) = world.attempt_insertion(required, motion);
    let success = depth >= required;
    Ok(TrialResult {
        method: "optimal".to_string(),
        success,
        elapsed: world.clock - t0,
        insertion_depth: depth,
        outcome_detail: if success { "inserted" } else { "surface contact" }.to_string(),
    })
}
