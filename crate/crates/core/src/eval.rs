//! Reference closures from ground truth, precision/recall metrics, overlap
//! scores and the ground-alignment stress protocol.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Se3};
use crate::ground::{residual_tilt, sample_lowest_points, solve_ground, GroundParams};
use crate::local_map::{LocalMap, PointCloud};
use crate::voxel::{voxel_downsample, VoxelGrid};

/// Canonical unordered pair, smaller index first.
pub fn canonical(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Grid over a target cloud for repeated fitness queries.
pub struct FitnessTarget {
    grid: VoxelGrid,
    corr_dist: f64,
}

impl FitnessTarget {
    pub fn new(target: &[Point3], corr_dist: f64) -> Self {
        Self {
            grid: VoxelGrid::from_points(target, corr_dist, usize::MAX),
            corr_dist,
        }
    }

    /// Fraction of `t · source` with a target point within the correspondence
    /// distance.
    pub fn fitness(&self, source: &[Point3], t: &Se3) -> f64 {
        if source.is_empty() {
            return 0.0;
        }
        let hits = source
            .iter()
            .filter(|p| self.grid.has_neighbor_within(&t.transform_point(p), self.corr_dist))
            .count();
        hits as f64 / source.len() as f64
    }

    pub fn any_within(&self, source: &[Point3], t: &Se3) -> bool {
        source
            .iter()
            .any(|p| self.grid.has_neighbor_within(&t.transform_point(p), self.corr_dist))
    }
}

pub fn relative_fitness(source: &[Point3], target: &[Point3], t: &Se3, corr_dist: f64) -> f64 {
    FitnessTarget::new(target, corr_dist).fitness(source, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceParams {
    pub keyframe_spacing: f64,
    /// Keyframes closer in sequence than this never form a reference pair.
    pub skip: usize,
    pub overlap_threshold: f64,
    pub corr_dist: f64,
    /// Voxel size used to thin keyframe maps before scoring.
    pub voxel: f64,
    /// Candidate keyframes must be within this distance of each other.
    pub max_range: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        Self {
            keyframe_spacing: 2.0,
            skip: 100,
            overlap_threshold: 0.5,
            corr_dist: 2.0,
            voxel: 1.0,
            max_range: 100.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceClosureSet {
    pub scan_pairs: BTreeSet<(usize, usize)>,
    pub map_pairs: BTreeSet<(usize, usize)>,
    pub keyframe_pairs: Vec<KeyframePair>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframePair {
    pub earlier: usize,
    pub later: usize,
    pub overlap: f64,
}

/// Start scans of keyframes: scan 0 and every scan at least `spacing` from
/// the previous keyframe.
pub fn keyframe_starts(poses: &[Se3], spacing: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last: Option<Vector3<f64>> = None;
    for (i, p) in poses.iter().enumerate() {
        let t = *p.translation();
        if last.is_none_or(|l| (t - l).norm() >= spacing) {
            out.push(i);
            last = Some(t);
        }
    }
    out
}

/// Scan-level reference closures.
///
/// `poses[i]` is the ground-truth pose of scan `i`; `load(i)` returns its
/// cloud in the sensor frame.
pub fn reference_scan_closures<F>(
    poses: &[Option<Se3>],
    mut load: F,
    params: &ReferenceParams,
) -> Result<ReferenceClosureSet>
where
    F: FnMut(usize) -> Result<PointCloud>,
{
    let missing: Vec<usize> = poses
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_none())
        .map(|(i, _)| i)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPoses(missing));
    }
    let poses: Vec<Se3> = poses.iter().map(|p| p.expect("checked")).collect();
    let starts = keyframe_starts(&poses, params.keyframe_spacing);
    let ranges: Vec<(usize, usize)> = starts
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, starts.get(k + 1).copied().unwrap_or(poses.len())))
        .collect();

    let max_r2 = params.max_range * params.max_range;
    let mut clouds = Vec::with_capacity(ranges.len());
    for &(a, b) in &ranges {
        let mut pts = Vec::new();
        for i in a..b {
            let cloud = load(i)?;
            pts.extend(
                cloud
                    .points
                    .iter()
                    .filter(|p| p.coords.norm_squared() <= max_r2)
                    .map(|p| poses[i].transform_point(p)),
            );
        }
        clouds.push(voxel_downsample(&pts, params.voxel, 1));
    }

    let mut out = ReferenceClosureSet::default();
    for later in 0..ranges.len() {
        let target_pos = poses[starts[later]].translation();
        let mut target: Option<FitnessTarget> = None;
        for earlier in 0..later {
            if later - earlier <= params.skip {
                break;
            }
            if (poses[starts[earlier]].translation() - target_pos).norm() > params.max_range {
                continue;
            }
            let target = target.get_or_insert_with(|| FitnessTarget::new(&clouds[later], params.corr_dist));
            let overlap = target.fitness(&clouds[earlier], &Se3::identity());
            if overlap > params.overlap_threshold {
                out.keyframe_pairs.push(KeyframePair {
                    earlier,
                    later,
                    overlap,
                });
                for i in ranges[earlier].0..ranges[earlier].1 {
                    for j in ranges[later].0..ranges[later].1 {
                        out.scan_pairs.insert(canonical(i, j));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Map pairs (m < n) whose ground-truth-placed points come within
/// `corr_dist` of each other anywhere.
///
/// `gt_maps` must partition the scans exactly like `pipeline_partition`.
pub fn reference_map_closures(
    gt_maps: &[LocalMap],
    pipeline_partition: &[Vec<usize>],
    corr_dist: f64,
) -> Result<BTreeSet<(usize, usize)>> {
    if gt_maps.len() != pipeline_partition.len()
        || gt_maps
            .iter()
            .zip(pipeline_partition)
            .any(|(m, p)| &m.scan_indices != p)
    {
        return Err(Error::PartitionMismatch(format!(
            "{} reference maps against {} pipeline maps",
            gt_maps.len(),
            pipeline_partition.len()
        )));
    }
    let world: Vec<Vec<Point3>> = gt_maps.iter().map(|m| m.world_points()).collect();
    let bounds: Vec<Option<([f64; 2], [f64; 2])>> = world.iter().map(|w| xy_bounds(w)).collect();
    let mut out = BTreeSet::new();
    for n in 0..world.len() {
        let Some(bn) = bounds[n] else { continue };
        let target = FitnessTarget::new(&world[n], corr_dist);
        for m in 0..n {
            let Some(bm) = bounds[m] else { continue };
            let apart = (0..2).any(|k| bm.0[k] > bn.1[k] + corr_dist || bn.0[k] > bm.1[k] + corr_dist);
            if apart {
                continue;
            }
            if target.any_within(&world[m], &Se3::identity()) {
                out.insert((m, n));
            }
        }
    }
    Ok(out)
}

fn xy_bounds(points: &[Point3]) -> Option<([f64; 2], [f64; 2])> {
    let first = points.first()?;
    let mut lo = [first.x, first.y];
    let mut hi = lo;
    for p in points {
        lo = [lo[0].min(p.x), lo[1].min(p.y)];
        hi = [hi[0].max(p.x), hi[1].max(p.y)];
    }
    Some((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Minimum inlier count; 0 on the placeholder point for no detections.
    pub gamma: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// One point per distinct inlier count, highest threshold first. Repeated
/// detections of a pair count once, with their best inlier count.
pub fn pr_curve<K: Ord + Clone>(detections: &[(K, usize)], references: &BTreeSet<K>) -> Result<Vec<PrPoint>> {
    if references.is_empty() {
        return Err(Error::InvalidParameter("no reference closures".into()));
    }
    let mut best: BTreeMap<K, usize> = BTreeMap::new();
    for (k, c) in detections {
        let e = best.entry(k.clone()).or_insert(*c);
        *e = (*e).max(*c);
    }
    if best.is_empty() {
        return Ok(vec![PrPoint {
            gamma: 0,
            precision: 1.0,
            recall: 0.0,
            f1: 0.0,
        }]);
    }
    let mut by_count: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (k, c) in &best {
        let e = by_count.entry(*c).or_default();
        if references.contains(k) {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    let total = references.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = Vec::with_capacity(by_count.len());
    for (&gamma, &(t, f)) in by_count.iter().rev() {
        tp += t;
        fp += f;
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total;
        out.push(PrPoint {
            gamma,
            precision,
            recall,
            f1: f1(precision, recall),
        });
    }
    Ok(out)
}

/// Trapezoidal area under the curve, starting from recall 0 at the first
/// point's precision.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let Some(first) = curve.first() else {
        return 0.0;
    };
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, first.precision);
    for pt in curve {
        area += (pt.recall - r0) * (pt.precision + p0) / 2.0;
        r0 = pt.recall;
        p0 = pt.precision;
    }
    area.clamp(0.0, 1.0)
}

pub fn recall_at_full_precision(curve: &[PrPoint]) -> f64 {
    curve
        .iter()
        .filter(|p| p.precision == 1.0)
        .map(|p| p.recall)
        .fold(0.0, f64::max)
}

pub fn max_f1(curve: &[PrPoint]) -> f64 {
    curve.iter().map(|p| p.f1).fold(0.0, f64::max)
}

/// Confusion counts of the detections passing `gamma`.
pub fn confusion_at<K: Ord + Clone>(detections: &[(K, usize)], references: &BTreeSet<K>, gamma: usize) -> (usize, usize) {
    let kept: BTreeSet<K> = detections
        .iter()
        .filter(|(_, c)| *c >= gamma)
        .map(|(k, _)| k.clone())
        .collect();
    let tp = kept.iter().filter(|k| references.contains(k)).count();
    (tp, kept.len() - tp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressRow {
    pub magnitude_deg: f64,
    pub mean_error_deg: f64,
    pub max_error_deg: f64,
    pub solves: usize,
    pub failures: usize,
}

/// Tilts every map about `trials` random horizontal axes per magnitude,
/// re-solves the ground and records the remaining tilt of the ground normal.
pub fn ground_alignment_stress(
    maps: &[Vec<Point3>],
    magnitudes_deg: &[f64],
    trials: usize,
    params: &GroundParams,
    seed: u64,
) -> Vec<StressRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    magnitudes_deg
        .iter()
        .map(|&mag| {
            let mut errors = Vec::new();
            let mut failures = 0;
            for points in maps {
                for _ in 0..trials {
                    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let axis = Vector3::new(phi.cos(), phi.sin(), 0.0);
                    let tilt = Se3::from_axis_angle(&axis, mag.to_radians());
                    let tilted: Vec<Point3> = points.iter().map(|p| tilt.transform_point(p)).collect();
                    let solved = sample_lowest_points(&tilted, params.cell)
                        .and_then(|s| solve_ground(&s, params));
                    match solved {
                        Ok(r) if !r.degenerate => {
                            errors.push(residual_tilt(&tilt, r.transform()).to_degrees())
                        }
                        _ => {
                            failures += 1;
                            errors.push(mag);
                        }
                    }
                }
            }
            let n = errors.len().max(1) as f64;
            StressRow {
                magnitude_deg: mag,
                mean_error_deg: errors.iter().sum::<f64>() / n,
                max_error_deg: errors.iter().cloned().fold(0.0, f64::max),
                solves: errors.len(),
                failures,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(x0: f64, y0: f64, n: usize, step: f64) -> Vec<Point3> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                out.push(Point3::new(x0 + i as f64 * step, y0 + j as f64 * step, 0.0));
            }
        }
        out
    }

    #[test]
    fn fitness_trivial_cases() {
        let a = grid(0.0, 0.0, 20, 0.5);
        assert_eq!(relative_fitness(&a, &a, &Se3::identity(), 1.0), 1.0);
        let far = grid(100.0, 0.0, 20, 0.5);
        assert_eq!(relative_fitness(&a, &far, &Se3::identity(), 1.0), 0.0);
    }

    #[test]
    fn half_overlap_scores_half() {
        // 40×20 m source, target covers the right half; 1 m gate adds one
        // boundary column of hits (≈ 1/40).
        let src: Vec<_> = grid(0.0, 0.0, 80, 0.5)
            .into_iter()
            .filter(|p| p.y < 20.0)
            .collect();
        let tgt: Vec<_> = src.iter().filter(|p| p.x >= 20.0).cloned().collect();
        let f = relative_fitness(&src, &tgt, &Se3::identity(), 1.0);
        assert!((f - 0.5).abs() <= 0.05, "{f}");
    }

    #[test]
    fn fitness_is_frame_invariant() {
        let a = grid(0.0, 0.0, 15, 0.7);
        let b: Vec<_> = a.iter().map(|p| Point3::new(p.x + 0.3, p.y - 0.2, 0.1)).collect();
        let t = Se3::from_rpy(0.0, 0.0, 0.05, Vector3::new(0.2, 0.1, 0.0));
        let base = relative_fitness(&a, &b, &t, 1.0);
        let g = Se3::from_rpy(0.3, -0.2, 1.0, Vector3::new(5.0, -7.0, 2.0));
        let a2: Vec<_> = a.iter().map(|p| g.transform_point(p)).collect();
        let b2: Vec<_> = b.iter().map(|p| g.transform_point(p)).collect();
        let t2 = g * t * g.inverse();
        let moved = relative_fitness(&a2, &b2, &t2, 1.0);
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_curve() {
        let refs: BTreeSet<u32> = [1, 2, 3, 4].into_iter().collect();
        let dets = [(1u32, 9usize), (2, 9), (7, 6)];
        let curve = pr_curve(&dets, &refs).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!((curve[0].gamma, curve[0].precision, curve[0].recall), (9, 1.0, 0.5));
        assert_eq!((curve[1].gamma, curve[1].precision, curve[1].recall), (6, 2.0 / 3.0, 0.5));
        assert_eq!(average_precision(&curve), 0.5);
        assert_eq!(recall_at_full_precision(&curve), 0.5);
        assert!((max_f1(&curve) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty_detectors() {
        let refs: BTreeSet<u32> = [1, 2, 3].into_iter().collect();
        let dets: Vec<_> = refs.iter().map(|&r| (r, 5usize)).collect();
        let curve = pr_curve(&dets, &refs).unwrap();
        assert_eq!(average_precision(&curve), 1.0);
        assert_eq!(recall_at_full_precision(&curve), 1.0);
        assert_eq!(max_f1(&curve), 1.0);

        let curve = pr_curve::<u32>(&[], &refs).unwrap();
        assert_eq!(curve.len(), 1);
        assert_eq!((curve[0].precision, curve[0].recall), (1.0, 0.0));
        assert_eq!(average_precision(&curve), 0.0);
        assert!(pr_curve::<u32>(&[], &BTreeSet::new()).is_err());
    }

    #[test]
    fn straight_line_has_no_scan_references() {
        let poses: Vec<_> = (0..400)
            .map(|i| Some(Se3::from_translation(Vector3::new(i as f64, 0.0, 0.0))))
            .collect();
        let load = |_| Ok(PointCloud::new("s", grid(-5.0, -5.0, 10, 1.0)));
        let refs = reference_scan_closures(&poses, load, &ReferenceParams::default()).unwrap();
        assert!(refs.scan_pairs.is_empty());
    }

    #[test]
    fn missing_poses_are_listed() {
        let poses = vec![Some(Se3::identity()), None, Some(Se3::identity()), None];
        let err = reference_scan_closures(&poses, |_| Ok(PointCloud::default()), &ReferenceParams::default());
        assert!(matches!(err, Err(Error::MissingPoses(v)) if v == vec![1, 3]));
    }

    #[test]
    fn stress_zero_magnitude_is_exact() {
        let plane = grid(-40.0, -40.0, 81, 1.0);
        let rows = ground_alignment_stress(&[plane], &[0.0], 3, &GroundParams::default(), 1);
        assert_eq!(rows[0].mean_error_deg, 0.0);
        assert_eq!(rows[0].solves, 3);
    }
}
