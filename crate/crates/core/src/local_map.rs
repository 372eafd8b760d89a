//! Aggregation of odometry-posed scans into displacement-bounded local maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Se3};
use crate::voxel::VoxelSampler;

/// Ordered point set in a named frame.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub frame: String,
    pub points: Vec<Point3>,
    /// Per-point return intensity, when the source provides one.
    pub intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(frame: impl Into<String>, points: Vec<Point3>) -> Self {
        Self {
            frame: frame.into(),
            points,
            intensity: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One sensor sweep with its odometry pose `T_w_i`.
#[derive(Debug, Clone)]
pub struct ScanRecord {
    pub index: usize,
    pub cloud: PointCloud,
    pub pose: Se3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalMapParams {
    /// Travel distance that closes a map, meters.
    pub tau_c: f64,
    /// Points farther than this from their sensor are dropped, meters.
    pub max_range: f64,
    /// Voxel edge length for downsampling, meters.
    pub voxel_size: f64,
    pub max_points_per_voxel: usize,
}

impl Default for LocalMapParams {
    fn default() -> Self {
        Self {
            tau_c: 100.0,
            max_range: 100.0,
            voxel_size: 1.0,
            max_points_per_voxel: 20,
        }
    }
}

impl LocalMapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c > 0.0 && self.max_range > 0.0 && self.voxel_size > 0.0) {
            return Err(Error::InvalidParameter(
                "local map distances must be positive".into(),
            ));
        }
        if self.max_points_per_voxel == 0 {
            return Err(Error::InvalidParameter("voxel capacity must be >= 1".into()));
        }
        Ok(())
    }
}

/// Voxelized aggregate of consecutive scans, expressed in the frame of its
/// first scan.
#[derive(Debug, Clone)]
pub struct LocalMap {
    pub index: u32,
    /// Odometry pose of the first scan.
    pub anchor_pose: Se3,
    /// Points in the anchor frame, or in the ground-aligned frame once
    /// `ground_transform` has been applied.
    pub points: Vec<Point3>,
    pub scan_indices: Vec<usize>,
    /// Odometry-frame poses of the constituent scans.
    pub scan_poses: Vec<Se3>,
    /// Ground-aligning transform, identity until ground alignment runs.
    pub ground_transform: Se3,
    /// The input ended before the displacement threshold was crossed.
    pub partial: bool,
}

impl LocalMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_scan(&self) -> usize {
        self.scan_indices[0]
    }

    pub fn last_scan(&self) -> usize {
        *self.scan_indices.last().expect("local map without scans")
    }

    /// Scan poses relative to the anchor frame.
    pub fn local_scan_poses(&self) -> Vec<Se3> {
        let inv = self.anchor_pose.inverse();
        self.scan_poses.iter().map(|p| inv * *p).collect()
    }

    /// Points in the anchor frame, undoing any ground alignment.
    pub fn anchor_frame_points(&self) -> Vec<Point3> {
        let inv = self.ground_transform.inverse();
        self.points.iter().map(|p| inv.transform_point(p)).collect()
    }

    pub fn world_points(&self) -> Vec<Point3> {
        let to_world = self.anchor_pose * self.ground_transform.inverse();
        self.points.iter().map(|p| to_world.transform_point(p)).collect()
    }
}

struct Segment {
    anchor: Se3,
    sampler: VoxelSampler,
    scan_indices: Vec<usize>,
    scan_poses: Vec<Se3>,
}

/// Incremental local-map builder.
///
/// A map starting at scan `i` takes scans until the first one whose position
/// lies more than `tau_c` from scan `i`; that scan closes the map and the next
/// map starts with the following scan.
pub struct LocalMapper {
    params: LocalMapParams,
    current: Option<Segment>,
    next_map: u32,
    last_index: Option<usize>,
}

impl LocalMapper {
    pub fn new(params: LocalMapParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            current: None,
            next_map: 0,
            last_index: None,
        })
    }

    pub fn params(&self) -> &LocalMapParams {
        &self.params
    }

    /// Adds a scan; returns a finished map when this scan closes one.
    pub fn push(&mut self, scan: ScanRecord) -> Result<Option<LocalMap>> {
        if let Some(prev) = self.last_index {
            if scan.index <= prev {
                return Err(Error::NonMonotoneIndex {
                    prev,
                    got: scan.index,
                });
            }
        }
        self.last_index = Some(scan.index);

        let params = self.params;
        let seg = self.current.get_or_insert_with(|| Segment {
            anchor: scan.pose,
            sampler: VoxelSampler::new(params.voxel_size, params.max_points_per_voxel),
            scan_indices: Vec::new(),
            scan_poses: Vec::new(),
        });

        let max_r2 = params.max_range * params.max_range;
        for p in &scan.cloud.points {
            if p.coords.norm_squared() > max_r2 {
                continue;
            }
            seg.sampler.push(scan.pose.transform_point(p));
        }
        seg.scan_indices.push(scan.index);
        seg.scan_poses.push(scan.pose);

        let displacement = (scan.pose.translation() - seg.anchor.translation()).norm();
        if displacement > params.tau_c {
            let seg = self.current.take().expect("segment present");
            Ok(Some(self.emit(seg, false)))
        } else {
            Ok(None)
        }
    }

    /// Flushes the trailing scans as a partial map.
    pub fn finish(mut self) -> Option<LocalMap> {
        let seg = self.current.take()?;
        Some(self.emit(seg, true))
    }

    fn emit(&mut self, seg: Segment, partial: bool) -> LocalMap {
        let inv = seg.anchor.inverse();
        let points = seg
            .sampler
            .into_points()
            .into_iter()
            .map(|p| inv.transform_point(&p))
            .collect();
        let index = self.next_map;
        self.next_map += 1;
        LocalMap {
            index,
            anchor_pose: seg.anchor,
            points,
            scan_indices: seg.scan_indices,
            scan_poses: seg.scan_poses,
            ground_transform: Se3::identity(),
            partial,
        }
    }
}

/// Runs a [`LocalMapper`] over a scan stream.
pub fn accumulate<I>(scans: I, params: LocalMapParams) -> Result<impl Iterator<Item = Result<LocalMap>>>
where
    I: IntoIterator<Item = ScanRecord>,
{
    let mut mapper = Some(LocalMapper::new(params)?);
    let mut scans = scans.into_iter();
    let mut failed = false;
    Ok(std::iter::from_fn(move || {
        if failed {
            return None;
        }
        loop {
            match scans.next() {
                Some(scan) => match mapper.as_mut()?.push(scan) {
                    Ok(Some(map)) => return Some(Ok(map)),
                    Ok(None) => continue,
                    Err(e) => {
                        failed = true;
                        return Some(Err(e));
                    }
                },
                None => return mapper.take()?.finish().map(Ok),
            }
        }
    }))
}
