//! Ground plane sampling and alignment.
//!
//! The lowest point of every `cell × cell` column is taken as a ground
//! candidate. A Gauss-Newton solver then finds the transform that brings
//! those candidates onto `z = 0`. Because the cost only sees the transformed
//! z-coordinate, x/y translation and yaw are unobservable; after every update
//! the estimate is reduced to its roll, pitch and z-translation so those
//! components are exactly zero.
//!
//! Samples whose distance to the plane exceeds the current inlier gate get
//! zero weight. The gate starts wide enough to admit every sample and halves
//! each iteration until it reaches `inlier_dist`; a fixed narrow gate can not
//! see a plane that is tilted by tens of degrees.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector3};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_z, Point3, Se3};
use crate::local_map::LocalMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundParams {
    /// Edge length of the sampling columns, meters.
    pub cell: f64,
    pub max_iters: usize,
    /// Final inlier gate on |z|, meters.
    pub inlier_dist: f64,
    /// Stop when the norm of the update drops below this.
    pub convergence_eps: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            cell: 5.0,
            max_iters: 20,
            inlier_dist: 0.5,
            convergence_eps: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundSample {
    pub point: Point3,
    /// Binary weight from the last solver iteration.
    pub weight: u8,
}

#[derive(Debug, Clone)]
pub struct GroundSolveReport {
    pub transform: Se3,
    pub iterations: usize,
    /// Weighted sum of squared plane distances after the last update.
    pub final_residual: f64,
    pub inlier_count: usize,
    /// Unweighted cost over all samples, before each update and at the end.
    pub cost_history: Vec<f64>,
    /// Fewer than three inliers survived; `transform` is the identity.
    pub degenerate: bool,
}

// Bit-for-bit equality, used by the determinism checks.
impl PartialEq for GroundSolveReport {
    fn eq(&self, other: &Self) -> bool {
        self.transform.to_row_major_3x4() == other.transform.to_row_major_3x4()
            && self.iterations == other.iterations
            && self.final_residual.to_bits() == other.final_residual.to_bits()
            && self.inlier_count == other.inlier_count
            && self.cost_history == other.cost_history
            && self.degenerate == other.degenerate
    }
}

impl GroundSolveReport {
    pub fn transform(&self) -> &Se3 {
        &self.transform
    }

    fn identity(iterations: usize, history: Vec<f64>) -> Self {
        Self {
            transform: Se3::identity(),
            iterations,
            final_residual: 0.0,
            inlier_count: 0,
            cost_history: history,
            degenerate: true,
        }
    }
}

/// Lowest point per xy-column; ties keep the first occurrence. Samples come
/// out in order of first column occupancy.
pub fn sample_lowest_points(points: &[Point3], cell: f64) -> Result<Vec<GroundSample>> {
    if points.is_empty() {
        return Err(Error::EmptyMap);
    }
    if !(cell > 0.0) {
        return Err(Error::InvalidParameter("ground cell must be positive".into()));
    }
    let mut slot: FxHashMap<[i64; 2], usize> = FxHashMap::default();
    let mut samples: Vec<GroundSample> = Vec::new();
    for p in points {
        let key = [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64];
        match slot.get(&key) {
            Some(&i) => {
                if p.z < samples[i].point.z {
                    samples[i].point = *p;
                }
            }
            None => {
                slot.insert(key, samples.len());
                samples.push(GroundSample {
                    point: *p,
                    weight: 1,
                });
            }
        }
    }
    Ok(samples)
}

pub fn sample_ground(map: &LocalMap, cell: f64) -> Result<Vec<GroundSample>> {
    sample_lowest_points(&map.points, cell)
}

/// Drops the yaw and x/y translation of `t`; the z-row of the rotation and
/// the z-translation are untouched, so every transformed z is unchanged.
pub fn reduce_to_tilt(t: &Se3) -> Se3 {
    let r = t.rotation();
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let mut rot = rot_z(-yaw) * r;
    // The z-row is mathematically unchanged by a left yaw; restore it exactly.
    for c in 0..3 {
        rot[(2, c)] = r[(2, c)];
    }
    rot[(1, 0)] = 0.0;
    Se3::from_parts_unchecked(rot, Vector3::new(0.0, 0.0, t.translation().z))
}

fn normal_equations(points: &[Vector3<f64>], weights: &[bool]) -> (Matrix3<f64>, Vector3<f64>) {
    let mut h = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (p, &w) in points.iter().zip(weights) {
        if !w {
            continue;
        }
        // Jacobian of z' w.r.t. (t_z, ω_x, ω_y) under a left perturbation.
        let j = Vector3::new(1.0, p.y, -p.x);
        h += j * j.transpose();
        b += j * p.z;
    }
    (h, b)
}

fn is_rank_deficient(h: &Matrix3<f64>) -> bool {
    let eig = SymmetricEigen::new(*h);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    !(max > 0.0) || min <= 1e-12 * max
}

pub fn solve_ground(samples: &[GroundSample], params: &GroundParams) -> Result<GroundSolveReport> {
    let pts: Vec<Vector3<f64>> = samples.iter().map(|s| s.point.coords).collect();
    if pts.len() < 3 {
        return Err(Error::RankDeficientGround);
    }
    let all = vec![true; pts.len()];
    if is_rank_deficient(&normal_equations(&pts, &all).0) {
        return Err(Error::RankDeficientGround);
    }

    let initial_gate = pts
        .iter()
        .map(|p| p.z.abs())
        .fold(params.inlier_dist, f64::max);

    let mut transform = Se3::identity();
    let mut current = pts.clone();
    let mut history = Vec::with_capacity(params.max_iters + 1);
    let mut iterations = 0;
    let mut gate = initial_gate;
    let mut weights = all;

    for iter in 0..params.max_iters {
        gate = (initial_gate * 0.5f64.powi(iter as i32)).max(params.inlier_dist);
        let mut inliers = 0;
        for (w, p) in weights.iter_mut().zip(&current) {
            *w = p.z.abs() <= gate;
            inliers += *w as usize;
        }
        history.push(current.iter().map(|p| p.z * p.z).sum());
        if inliers < 3 {
            return Ok(GroundSolveReport::identity(iter + 1, history));
        }
        let (h, b) = normal_equations(&current, &weights);
        let Some(chol) = h.cholesky() else {
            return Ok(GroundSolveReport::identity(iter + 1, history));
        };
        let dx = -chol.solve(&b);
        iterations = iter + 1;

        let delta_rot = Rotation3::new(Vector3::new(dx[1], dx[2], 0.0));
        let delta = Se3::from_parts_unchecked(*delta_rot.matrix(), Vector3::new(0.0, 0.0, dx[0]));
        transform = reduce_to_tilt(&(delta * transform));
        for (c, p) in current.iter_mut().zip(&pts) {
            *c = transform.transform_point(&Point3::from(*p)).coords;
        }

        if dx.norm() < params.convergence_eps && gate <= params.inlier_dist {
            break;
        }
    }

    gate = gate.max(params.inlier_dist);
    let mut inlier_count = 0;
    let mut final_residual = 0.0;
    for p in &current {
        if p.z.abs() <= gate {
            inlier_count += 1;
            final_residual += p.z * p.z;
        }
    }
    history.push(current.iter().map(|p| p.z * p.z).sum());

    Ok(GroundSolveReport {
        transform,
        iterations,
        final_residual,
        inlier_count,
        cost_history: history,
        degenerate: false,
    })
}

/// Moves the map into its ground-aligned frame and records the transform.
pub fn apply_ground(mut map: LocalMap, report: &GroundSolveReport) -> LocalMap {
    let t = *report.transform();
    for p in &mut map.points {
        *p = t.transform_point(p);
    }
    map.ground_transform = t * map.ground_transform;
    map
}

/// Samples, solves and applies in one step.
pub fn align_ground(map: LocalMap, params: &GroundParams) -> Result<(LocalMap, GroundSolveReport)> {
    let samples = sample_ground(&map, params.cell)?;
    let report = solve_ground(&samples, params)?;
    Ok((apply_ground(map, &report), report))
}

/// Residual tilt, in radians, between the normal of the recovered ground and
/// the z-axis after `estimate` is applied on top of `applied`.
pub fn residual_tilt(applied: &Se3, estimate: &Se3) -> f64 {
    let n = (estimate * applied).rotation() * Vector3::z();
    n.z.clamp(-1.0, 1.0).acos()
}
