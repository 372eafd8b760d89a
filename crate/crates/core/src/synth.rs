//! Procedural street worlds and simulated LiDAR sessions over them.
//!
//! A world is a fixed point set (ground, building walls, poles, parked cars)
//! generated once from its seed. A session samples that world from a sequence
//! of sensor poses, so several sessions over one world see the same
//! structure.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Se3};
use crate::local_map::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Street lined with randomly sized buildings, poles and cars.
    Corridor,
    /// Street with two identical stretches of evenly spaced pillars and
    /// nothing else, separated by ordinary buildings.
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub layout: Layout,
    /// Street length along +x, meters.
    pub length: f64,
    /// Distance from the street axis to the building line.
    pub half_width: f64,
    pub ground_spacing: f64,
    pub surface_spacing: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            layout: Layout::Corridor,
            length: 200.0,
            half_width: 9.0,
            ground_spacing: 0.5,
            surface_spacing: 0.35,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySpec {
    /// Drive to the end of the street at `lane` and come back at `-lane`.
    OutAndBack { leg: f64, step: f64, lane: f64 },
    OneWay { start: f64, length: f64, step: f64, lane: f64 },
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::OutAndBack {
            leg: 200.0,
            step: 0.8,
            lane: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub max_range: f64,
    /// Half-angle of the vertical field of view, degrees.
    pub vertical_half_fov: f64,
    /// Full horizontal field of view centered on the sensor x-axis, degrees;
    /// `None` for a spinning sensor.
    pub horizontal_fov: Option<f64>,
    pub keep_probability: f64,
    pub noise_sigma: f64,
    pub height: f64,
    /// Peak roll and pitch of the platform, degrees.
    pub oscillation: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            max_range: 40.0,
            vertical_half_fov: 25.0,
            horizontal_fov: None,
            keep_probability: 0.7,
            noise_sigma: 0.02,
            height: 1.8,
            oscillation: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SynthSpec {
    pub world: WorldSpec,
    pub trajectory: TrajectorySpec,
    pub sensor: SensorSpec,
    /// Seed of the per-scan sampling noise.
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("synthetic world: {m}")));
        let w = &self.world;
        if !(w.length > 0.0 && w.half_width > 2.0 && w.ground_spacing > 0.0 && w.surface_spacing > 0.0) {
            return bad("world dimensions must be positive");
        }
        let s = &self.sensor;
        if !(s.max_range > 0.0 && s.vertical_half_fov > 0.0 && s.vertical_half_fov < 90.0) {
            return bad("sensor range and field of view must be positive");
        }
        if !(0.0 < s.keep_probability && s.keep_probability <= 1.0) {
            return bad("keep probability must be in (0, 1]");
        }
        if s.horizontal_fov.is_some_and(|f| !(f > 0.0 && f <= 360.0)) {
            return bad("horizontal field of view must be in (0, 360]");
        }
        if !(s.noise_sigma >= 0.0 && s.oscillation.abs() < 80.0) {
            return bad("noise and oscillation out of range");
        }
        let (step, lane, extent) = match self.trajectory {
            TrajectorySpec::OutAndBack { leg, step, lane } => (step, lane, leg),
            TrajectorySpec::OneWay { start, length, step, lane } => {
                if start < 0.0 {
                    return bad("trajectory starts before the street");
                }
                (step, lane, start + length)
            }
        };
        if !(step > 0.0 && extent > 0.0) {
            return bad("trajectory step and length must be positive");
        }
        if extent > w.length {
            return bad("trajectory leaves the street");
        }
        if lane.abs() >= w.half_width - 1.0 {
            return bad("lane offset runs into the buildings");
        }
        Ok(())
    }
}

/// Axis-aligned box footprint with a yaw, used for buildings and cars.
#[derive(Debug, Clone, Copy)]
struct Block {
    cx: f64,
    cy: f64,
    half_x: f64,
    half_y: f64,
    yaw: f64,
    height: f64,
}

impl Block {
    fn surface(&self, spacing: f64, out: &mut Vec<Point3>) {
        let (s, c) = self.yaw.sin_cos();
        let place = |lx: f64, ly: f64, z: f64| {
            Point3::new(self.cx + c * lx - s * ly, self.cy + s * lx + c * ly, z)
        };
        let nz = (self.height / spacing).ceil() as usize;
        let corners = [
            (-self.half_x, -self.half_y),
            (self.half_x, -self.half_y),
            (self.half_x, self.half_y),
            (-self.half_x, self.half_y),
        ];
        for k in 0..4 {
            let (ax, ay) = corners[k];
            let (bx, by) = corners[(k + 1) % 4];
            let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
            let n = (len / spacing).ceil() as usize;
            for i in 0..n {
                let f = i as f64 / n as f64;
                for j in 0..=nz {
                    out.push(place(ax + f * (bx - ax), ay + f * (by - ay), (j as f64 * spacing).min(self.height)));
                }
            }
        }
        // Roof at a coarser spacing.
        let roof = spacing * 2.0;
        let (nx, ny) = ((2.0 * self.half_x / roof) as usize, (2.0 * self.half_y / roof) as usize);
        for i in 0..=nx {
            for j in 0..=ny {
                out.push(place(-self.half_x + i as f64 * roof, -self.half_y + j as f64 * roof, self.height));
            }
        }
    }
}

fn pole(x: f64, y: f64, radius: f64, height: f64, spacing: f64, out: &mut Vec<Point3>) {
    let n_around = ((TAU * radius / spacing).ceil() as usize).max(4);
    let nz = (height / spacing).ceil() as usize;
    for i in 0..n_around {
        let a = TAU * i as f64 / n_around as f64;
        for j in 0..=nz {
            out.push(Point3::new(x + radius * a.cos(), y + radius * a.sin(), j as f64 * spacing));
        }
    }
}

/// Fixed world point set with a coarse xy bucket index.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub points: Vec<Point3>,
    bucket: f64,
    buckets: FxHashMap<(i64, i64), Vec<u32>>,
    /// x-extents of the repeated pillar stretches (bridge layout only).
    pub aliased_segments: Vec<(f64, f64)>,
}

/// Street margin beyond both ends so sensors near the ends see ground.
const MARGIN: f64 = 60.0;

impl World {
    pub fn generate(spec: &WorldSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut pts = Vec::new();
        let x0 = -MARGIN;
        let x1 = spec.length + MARGIN;
        let y_extent = spec.half_width + 40.0;

        // Ground with jitter so rows do not alias with the image grid.
        let g = spec.ground_spacing;
        let (nx, ny) = (((x1 - x0) / g) as usize, (2.0 * y_extent / g) as usize);
        for i in 0..nx {
            for j in 0..ny {
                let x = x0 + (i as f64 + rng.random_range(0.0..1.0)) * g;
                let y = -y_extent + (j as f64 + rng.random_range(0.0..1.0)) * g;
                pts.push(Point3::new(x, y, 0.0));
            }
        }

        let mut aliased = Vec::new();
        match spec.layout {
            Layout::Corridor => {
                street_furniture(&mut rng, spec, x0, x1, &mut pts);
            }
            Layout::Bridge => {
                // unique | pillars A | unique | pillars B | unique
                let seg = (spec.length / 5.0).max(30.0);
                let bounds = [x0, seg, 2.0 * seg, 3.0 * seg, 4.0 * seg, x1];
                for k in 0..5 {
                    let (a, b) = (bounds[k], bounds[k + 1]);
                    if k % 2 == 0 {
                        street_furniture(&mut rng, spec, a, b, &mut pts);
                    } else {
                        aliased.push((a, b));
                        pillars(spec, a, b, &mut pts);
                    }
                }
            }
        }
        World::from_points(*spec, pts, aliased)
    }

    fn from_points(spec: WorldSpec, points: Vec<Point3>, aliased_segments: Vec<(f64, f64)>) -> Self {
        let bucket = 10.0;
        let mut buckets: FxHashMap<(i64, i64), Vec<u32>> = FxHashMap::default();
        for (i, p) in points.iter().enumerate() {
            let key = ((p.x / bucket).floor() as i64, (p.y / bucket).floor() as i64);
            buckets.entry(key).or_default().push(i as u32);
        }
        Self {
            spec,
            points,
            bucket,
            buckets,
            aliased_segments,
        }
    }

    fn within(&self, x: f64, y: f64, r: f64) -> impl Iterator<Item = &Point3> + '_ {
        let b = self.bucket;
        let (kx0, kx1) = (((x - r) / b).floor() as i64, ((x + r) / b).floor() as i64);
        let (ky0, ky1) = (((y - r) / b).floor() as i64, ((y + r) / b).floor() as i64);
        (kx0..=kx1)
            .flat_map(move |kx| (ky0..=ky1).map(move |ky| (kx, ky)))
            .filter_map(|k| self.buckets.get(&k))
            .flatten()
            .map(|&i| &self.points[i as usize])
    }

    /// Simulated sweep from `pose`, returned in the sensor frame.
    pub fn scan(&self, pose: &Se3, sensor: &SensorSpec, rng: &mut ChaCha8Rng) -> PointCloud {
        let inv = pose.inverse();
        let t = pose.translation();
        let r2 = sensor.max_range * sensor.max_range;
        let tan_v = sensor.vertical_half_fov.to_radians().tan();
        let half_h = sensor.horizontal_fov.map(|f| (f / 2.0).to_radians());
        let noise = Normal::new(0.0, sensor.noise_sigma.max(1e-12)).expect("finite sigma");
        let mut out = Vec::new();
        for p in self.within(t.x, t.y, sensor.max_range) {
            let q = inv.transform_point(p);
            let n2 = q.coords.norm_squared();
            if n2 > r2 || n2 < 1.0 {
                continue;
            }
            let horiz = (q.x * q.x + q.y * q.y).sqrt();
            if q.z.abs() > tan_v * horiz {
                continue;
            }
            if let Some(h) = half_h {
                if q.y.atan2(q.x).abs() > h {
                    continue;
                }
            }
            if rng.random::<f64>() >= sensor.keep_probability {
                continue;
            }
            let jitter = if sensor.noise_sigma > 0.0 {
                Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
            } else {
                Vector3::zeros()
            };
            out.push(q + jitter);
        }
        PointCloud::new("sensor", out)
    }
}

/// Buildings, poles and cars, clipped to `x0 <= x < x1`.
fn street_furniture(rng: &mut ChaCha8Rng, spec: &WorldSpec, x0: f64, x1: f64, out: &mut Vec<Point3>) {
    let sp = spec.surface_spacing;
    let mut local = Vec::new();
    let pts = &mut local;
    for side in [-1.0, 1.0] {
        let mut x = x0 + rng.random_range(0.0..6.0);
        while x < x1 - 4.0 {
            let len = rng.random_range(6.0..20.0f64).min(x1 - x);
            let depth = rng.random_range(6.0..14.0);
            let setback = rng.random_range(0.0..4.0);
            let block = Block {
                cx: x + len / 2.0,
                cy: side * (spec.half_width + setback + depth / 2.0),
                half_x: len / 2.0,
                half_y: depth / 2.0,
                yaw: rng.random_range(-0.25..0.25),
                height: rng.random_range(4.0..15.0),
            };
            block.surface(sp, pts);
            x += len + rng.random_range(2.0..9.0);
        }
        // Poles on the sidewalk.
        let mut x = x0 + rng.random_range(0.0..10.0);
        while x < x1 {
            let y = side * (spec.half_width - rng.random_range(0.5..1.5));
            pole(x, y, 0.2, rng.random_range(3.0..7.0), sp, pts);
            x += rng.random_range(7.0..20.0);
        }
        // Parked cars at the curb.
        let mut x = x0 + rng.random_range(0.0..10.0);
        while x < x1 {
            if rng.random::<f64>() < 0.5 {
                let car = Block {
                    cx: x,
                    cy: side * (spec.half_width - 3.5),
                    half_x: 2.3,
                    half_y: 0.9,
                    yaw: rng.random_range(-0.1..0.1),
                    height: 1.5,
                };
                car.surface(sp, pts);
            }
            x += rng.random_range(6.0..14.0);
        }
    }
    out.extend(local.into_iter().filter(|p| p.x >= x0 && p.x < x1));
}

/// Identical rows of square pillars every 6 m on both sides, for any span.
fn pillars(spec: &WorldSpec, x0: f64, x1: f64, pts: &mut Vec<Point3>) {
    let period = 6.0;
    let mut k = 0;
    loop {
        let x = x0 + 3.0 + k as f64 * period;
        if x > x1 - 2.0 {
            break;
        }
        for side in [-1.0, 1.0] {
            Block {
                cx: x,
                cy: side * (spec.half_width + 1.0),
                half_x: 0.6,
                half_y: 0.6,
                yaw: 0.0,
                height: 6.0,
            }
            .surface(spec.surface_spacing, pts);
        }
        k += 1;
    }
}

pub fn trajectory(spec: &SynthSpec) -> Vec<Se3> {
    let s = &spec.sensor;
    let osc = s.oscillation.to_radians();
    // Incommensurate periods so roll and pitch do not lock together.
    let attitude = |d: f64| (osc * (TAU * d / 37.0).sin(), osc * (TAU * d / 23.0 + 1.0).sin());
    let mut poses = Vec::new();
    let mut push = |x: f64, y: f64, yaw: f64, d: f64| {
        let (roll, pitch) = attitude(d);
        poses.push(Se3::from_rpy(roll, pitch, yaw, Vector3::new(x, y, s.height)));
    };
    match spec.trajectory {
        TrajectorySpec::OutAndBack { leg, step, lane } => {
            let n = (leg / step).round() as usize;
            for i in 0..n {
                let x = i as f64 * step;
                push(x, lane, 0.0, x);
            }
            for i in 0..n {
                let x = leg - i as f64 * step;
                push(x, -lane, PI, leg + i as f64 * step);
            }
        }
        TrajectorySpec::OneWay { start, length, step, lane } => {
            let n = (length / step).round() as usize;
            for i in 0..n {
                let x = start + i as f64 * step;
                push(x, lane, 0.0, x);
            }
        }
    }
    poses
}

/// Scans and exact poses of one simulated session.
#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub scans: Vec<PointCloud>,
    pub poses: Vec<Se3>,
}

pub fn simulate(world: &World, spec: &SynthSpec) -> Result<SyntheticSession> {
    spec.validate()?;
    let poses = trajectory(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ spec.world.seed.rotate_left(17));
    let scans = poses.iter().map(|p| world.scan(p, &spec.sensor, &mut rng)).collect();
    Ok(SyntheticSession { scans, poses })
}

pub fn generate(spec: &SynthSpec) -> Result<(World, SyntheticSession)> {
    spec.validate()?;
    let world = World::generate(&spec.world);
    let session = simulate(&world, spec)?;
    Ok((world, session))
}

/// Points of a flat square ground patch with optional structure on top,
/// used by the stress protocol and throughput checks.
pub fn planar_map(half_extent: f64, spacing: f64, noise: f64, with_structure: bool, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(1e-12)).expect("finite sigma");
    let n = (2.0 * half_extent / spacing) as usize;
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = -half_extent + (i as f64 + rng.random_range(0.0..1.0)) * spacing;
            let y = -half_extent + (j as f64 + rng.random_range(0.0..1.0)) * spacing;
            let z = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            pts.push(Point3::new(x, y, z));
        }
    }
    if with_structure {
        let spec = WorldSpec {
            length: 2.0 * half_extent,
            half_width: 8.0,
            ..WorldSpec::default()
        };
        let mut extra = Vec::new();
        street_furniture(&mut rng, &spec, -half_extent, half_extent - 10.0, &mut extra);
        pts.extend(extra.into_iter().filter(|p| p.y.abs() < half_extent));
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            world: WorldSpec {
                length: 60.0,
                ..WorldSpec::default()
            },
            trajectory: TrajectorySpec::OutAndBack {
                leg: 60.0,
                step: 2.0,
                lane: 1.5,
            },
            sensor: SensorSpec {
                max_range: 25.0,
                ..SensorSpec::default()
            },
            seed: 4,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (_, a) = generate(&small()).unwrap();
        let (_, b) = generate(&small()).unwrap();
        assert_eq!(a.scans.len(), 60);
        for (x, y) in a.scans.iter().zip(&b.scans) {
            assert_eq!(x.points, y.points);
        }
    }

    #[test]
    fn scans_respect_range_and_fov() {
        let mut spec = small();
        spec.sensor.horizontal_fov = Some(70.0);
        spec.sensor.noise_sigma = 0.0;
        let (_, s) = generate(&spec).unwrap();
        let half = 35f64.to_radians() + 1e-9;
        let tan_v = 25f64.to_radians().tan() + 1e-9;
        for scan in &s.scans {
            assert!(!scan.is_empty());
            for p in &scan.points {
                assert!(p.coords.norm() <= 25.0 + 1e-9);
                assert!(p.y.atan2(p.x).abs() <= half);
                assert!(p.z.abs() <= tan_v * (p.x * p.x + p.y * p.y).sqrt());
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small();
        spec.sensor.keep_probability = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = small();
        spec.trajectory = TrajectorySpec::OutAndBack {
            leg: 500.0,
            step: 1.0,
            lane: 1.5,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn bridge_pillars_repeat_exactly() {
        let spec = WorldSpec {
            layout: Layout::Bridge,
            length: 200.0,
            ..WorldSpec::default()
        };
        let w = World::generate(&spec);
        assert_eq!(w.aliased_segments.len(), 2);
        let (a, b) = (w.aliased_segments[0], w.aliased_segments[1]);
        let shift = b.0 - a.0;
        let pick = |lo: f64, hi: f64| -> Vec<Point3> {
            w.points
                .iter()
                .filter(|p| p.z > 0.0 && p.x >= lo && p.x < hi)
                .cloned()
                .collect()
        };
        let pa = pick(a.0, a.1);
        let pb = pick(b.0, b.1);
        assert_eq!(pa.len(), pb.len());
        for (p, q) in pa.iter().zip(&pb) {
            assert!((q.x - p.x - shift).abs() < 1e-9 && q.y == p.y && q.z == p.z);
        }
    }
}
