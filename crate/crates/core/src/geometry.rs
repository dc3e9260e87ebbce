//! Node positions, UAV motion, slant ranges and LEO coverage windows.
//!
//! Ground users and UAVs live in a local Earth-tangent frame whose origin sits
//! on the Earth's surface. A LEO satellite is described by its along-orbit arc
//! offset (metres, measured at orbit radius, zero at the zenith of the local
//! origin) stored in `position.x` and its altitude stored in `position.z`.

use std::ops::{Add, AddAssign, Mul, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    GroundUser,
    Uav,
    Leo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub kind: NodeKind,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Transmit power in watts.
    pub tx_power: f64,
    /// Linear antenna gain.
    pub antenna_gain: f64,
}

impl NodeState {
    pub fn ground_user(x: f64, y: f64, tx_power: f64) -> Self {
        Self {
            kind: NodeKind::GroundUser,
            position: Vec3::new(x, y, 0.0),
            velocity: Vec3::ZERO,
            tx_power,
            antenna_gain: 1.0,
        }
    }

    pub fn uav(position: Vec3, tx_power: f64, antenna_gain: f64) -> Self {
        Self { kind: NodeKind::Uav, position, velocity: Vec3::ZERO, tx_power, antenna_gain }
    }

    /// A satellite at `offset` metres along its orbit, moving at `speed` m/s.
    pub fn leo(offset: f64, altitude: f64, speed: f64, tx_power: f64, antenna_gain: f64) -> Self {
        Self {
            kind: NodeKind::Leo,
            position: Vec3::new(offset, 0.0, altitude),
            velocity: Vec3::new(speed, 0.0, 0.0),
            tx_power,
            antenna_gain,
        }
    }

    pub fn along_orbit_offset(&self) -> f64 {
        self.position.x
    }

    pub fn altitude(&self) -> f64 {
        self.position.z
    }
}

/// Remaining service time of one satellite for one UAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageWindow {
    pub satellite_id: usize,
    pub uav_id: usize,
    pub remaining_time: f64,
}

impl CoverageWindow {
    pub fn is_open(&self) -> bool {
        self.remaining_time > 0.0
    }
}

/// Speed and altitude envelope of a UAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavLimits {
    pub v_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

/// Arc length flown by a satellite at altitude `orbit_altitude` while it stays
/// above elevation `elevation_min` for a ground observer.
pub fn coverage_arc(earth_radius: f64, orbit_altitude: f64, elevation_min: f64) -> Result<f64> {
    if !(earth_radius > 0.0) {
        return Err(Error::invalid("earth_radius", "must be positive"));
    }
    if !(orbit_altitude > 0.0) {
        return Err(Error::invalid("orbit_altitude", "must be positive"));
    }
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&elevation_min) {
        return Err(Error::invalid("elevation_min", "must lie in [0, pi/2)"));
    }
    let orbit_radius = earth_radius + orbit_altitude;
    let arg = earth_radius / orbit_radius * elevation_min.cos();
    if !(-1.0..=1.0).contains(&arg) {
        return Err(Error::Domain(format!("arccos argument {arg} outside [-1, 1]")));
    }
    Ok((2.0 * orbit_radius * (arg.acos() - elevation_min)).max(0.0))
}

pub fn coverage_time(arc: f64, orbit_speed: f64) -> Result<f64> {
    if !(orbit_speed > 0.0) {
        return Err(Error::invalid("orbit_speed", "must be positive"));
    }
    Ok(arc / orbit_speed)
}

/// Applies one slot of commanded motion. The speed is clamped to `v_max`
/// (direction preserved) and the altitude projected into `[z_min, z_max]`.
pub fn move_uav(uav: &NodeState, commanded_velocity: Vec3, dt: f64, limits: &UavLimits) -> NodeState {
    let speed = commanded_velocity.norm();
    let velocity = if speed > limits.v_max && speed > 0.0 {
        commanded_velocity * (limits.v_max / speed)
    } else if speed.is_finite() {
        commanded_velocity
    } else {
        Vec3::ZERO
    };
    let mut position = uav.position + velocity * dt;
    position.z = position.z.clamp(limits.z_min, limits.z_max);
    NodeState { position, velocity, ..*uav }
}

/// Euclidean distance in metres.
///
/// Local nodes use the tangent frame directly. A satellite is placed on its
/// orbit circle at central angle `offset / (R_E + altitude)` in the plane of
/// the local x-axis, and local nodes are lifted onto the Earth's surface.
/// Two satellites are separated by the chord between their orbit positions.
pub fn distance(a: &NodeState, b: &NodeState) -> f64 {
    match (a.kind, b.kind) {
        (NodeKind::Leo, NodeKind::Leo) => {
            let pa = leo_cartesian(a);
            let pb = leo_cartesian(b);
            (pa - pb).norm()
        }
        (NodeKind::Leo, _) => (leo_cartesian(a) - surface_cartesian(b)).norm(),
        (_, NodeKind::Leo) => (leo_cartesian(b) - surface_cartesian(a)).norm(),
        _ => (a.position - b.position).norm(),
    }
}

fn leo_cartesian(sat: &NodeState) -> Vec3 {
    let radius = EARTH_RADIUS_M + sat.altitude();
    let angle = sat.along_orbit_offset() / radius;
    Vec3::new(radius * angle.sin(), sat.position.y, radius * angle.cos())
}

fn surface_cartesian(node: &NodeState) -> Vec3 {
    Vec3::new(node.position.x, node.position.y, EARTH_RADIUS_M + node.position.z)
}

/// Moves every satellite along its orbit and burns `dt` seconds off every
/// coverage window, never below zero.
pub fn advance_orbits(sats: &mut [NodeState], windows: &mut [CoverageWindow], dt: f64) {
    if dt <= 0.0 {
        return;
    }
    for sat in sats.iter_mut() {
        sat.position.x += sat.velocity.x * dt;
    }
    for w in windows.iter_mut() {
        w.remaining_time = (w.remaining_time - dt).max(0.0);
    }
}

/// Distance each of `count` satellites has already travelled through the
/// coverage pass. The first sits at `leader_offset`; each next one is a
/// uniform random spacing in `[spacing_min, spacing_max]` further along.
pub fn place_constellation<R: Rng + ?Sized>(
    count: usize,
    leader_offset: f64,
    spacing_min: f64,
    spacing_max: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut offsets = Vec::with_capacity(count);
    let mut offset = leader_offset;
    for i in 0..count {
        if i > 0 {
            offset += if spacing_max > spacing_min { rng.random_range(spacing_min..=spacing_max) } else { spacing_min };
        }
        offsets.push(offset);
    }
    offsets
}

/// Remaining visibility of a satellite that has covered `travelled` metres of
/// an `arc`-long pass.
pub fn remaining_service_time(travelled: f64, arc: f64, orbit_speed: f64) -> f64 {
    ((arc - travelled) / orbit_speed).clamp(0.0, arc / orbit_speed)
}

/// Along-orbit position relative to the zenith for a satellite that has
/// covered `travelled` metres of its pass.
pub fn pass_position(travelled: f64, arc: f64) -> f64 {
    travelled - arc / 2.0
}
