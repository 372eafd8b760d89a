//! Sparse voxel grids for downsampling and radius queries.

use rustc_hash::FxHashMap;

use crate::geometry::Point3;

pub type VoxelKey = [i64; 3];

#[inline]
pub fn voxel_key(p: &Point3, resolution: f64) -> VoxelKey {
    [
        (p.x / resolution).floor() as i64,
        (p.y / resolution).floor() as i64,
        (p.z / resolution).floor() as i64,
    ]
}

/// Hash grid holding at most `capacity` points per cell.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    resolution: f64,
    capacity: usize,
    cells: FxHashMap<VoxelKey, Vec<Point3>>,
    len: usize,
}

impl VoxelGrid {
    pub fn new(resolution: f64, capacity: usize) -> Self {
        assert!(resolution > 0.0, "voxel resolution must be positive");
        assert!(capacity >= 1, "voxel capacity must be at least one");
        Self {
            resolution,
            capacity,
            cells: FxHashMap::default(),
            len: 0,
        }
    }

    /// Unbounded grid, used for nearest-neighbor style queries.
    pub fn unbounded(resolution: f64) -> Self {
        Self::new(resolution, usize::MAX)
    }

    pub fn from_points<'a>(
        points: impl IntoIterator<Item = &'a Point3>,
        resolution: f64,
        capacity: usize,
    ) -> Self {
        let mut grid = Self::new(resolution, capacity);
        for p in points {
            grid.insert(*p);
        }
        grid
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Returns `false` if the point's cell is full (or the point is not finite).
    pub fn insert(&mut self, p: Point3) -> bool {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return false;
        }
        let cell = self.cells.entry(voxel_key(&p, self.resolution)).or_default();
        if cell.len() >= self.capacity {
            return false;
        }
        cell.push(p);
        self.len += 1;
        true
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&[Point3]> {
        self.cells.get(key).map(Vec::as_slice)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelKey, &[Point3])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Whether any stored point lies within `radius` of `p`.
    ///
    /// Only the 27 cells around `p` are inspected, so `radius` must not exceed
    /// the grid resolution.
    pub fn has_neighbor_within(&self, p: &Point3, radius: f64) -> bool {
        debug_assert!(radius <= self.resolution);
        let r2 = radius * radius;
        let [kx, ky, kz] = voxel_key(p, self.resolution);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = self.cells.get(&[kx + dx, ky + dy, kz + dz]) {
                        if cell.iter().any(|q| (q - p).norm_squared() <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Keeps, per occupied voxel, the first `max_per_voxel` points in input order.
///
/// The output preserves input order, so running it again on its own output
/// returns the same list.
pub fn voxel_downsample(points: &[Point3], resolution: f64, max_per_voxel: usize) -> Vec<Point3> {
    let mut sampler = VoxelSampler::new(resolution, max_per_voxel);
    for p in points {
        sampler.push(*p);
    }
    sampler.into_points()
}

/// Streaming form of [`voxel_downsample`].
#[derive(Debug, Clone)]
pub struct VoxelSampler {
    resolution: f64,
    max_per_voxel: u32,
    counts: FxHashMap<VoxelKey, u32>,
    points: Vec<Point3>,
}

impl VoxelSampler {
    pub fn new(resolution: f64, max_per_voxel: usize) -> Self {
        assert!(resolution > 0.0, "voxel resolution must be positive");
        assert!(max_per_voxel >= 1, "voxel capacity must be at least one");
        Self {
            resolution,
            max_per_voxel: max_per_voxel.min(u32::MAX as usize) as u32,
            counts: FxHashMap::default(),
            points: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, p: Point3) -> bool {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return false;
        }
        let count = self.counts.entry(voxel_key(&p, self.resolution)).or_insert(0);
        if *count >= self.max_per_voxel {
            return false;
        }
        *count += 1;
        self.points.push(p);
        true
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn caps_identical_points() {
        let pts = vec![Point3::new(0.3, 0.3, 0.3); 25];
        assert_eq!(voxel_downsample(&pts, 1.0, 20).len(), 20);
    }

    #[test]
    fn keeps_two_points_in_one_voxel() {
        let pts = vec![Point3::new(0.1, 0.1, 0.1), Point3::new(0.9, 0.9, 0.9)];
        assert_eq!(voxel_key(&pts[0], 1.0), voxel_key(&pts[1], 1.0));
        assert_eq!(voxel_downsample(&pts, 1.0, 20), pts);
    }

    #[test]
    fn empty_in_empty_out() {
        assert!(voxel_downsample(&[], 1.0, 20).is_empty());
    }

    #[test]
    fn negative_coordinates_floor_downward() {
        assert_eq!(voxel_key(&Point3::new(-0.1, 0.0, -1.0), 1.0), [-1, 0, -1]);
    }

    #[test]
    fn grid_respects_capacity_and_cell_mapping() {
        let pts: Vec<_> = (0..100)
            .map(|i| Point3::new(i as f64 * 0.05, 0.5, -0.5))
            .collect();
        let grid = VoxelGrid::from_points(&pts, 1.0, 3);
        for (key, cell) in grid.cells() {
            assert!(cell.len() <= 3);
            for p in cell {
                assert_eq!(voxel_key(p, 1.0), *key);
            }
        }
        assert_eq!(grid.len(), 15);
    }

    #[test]
    fn radius_query_crosses_cell_boundaries() {
        let grid = VoxelGrid::from_points(&[Point3::new(0.99, 0.0, 0.0)], 1.0, usize::MAX);
        assert!(grid.has_neighbor_within(&Point3::new(1.5, 0.0, 0.0), 1.0));
        assert!(!grid.has_neighbor_within(&Point3::new(2.1, 0.0, 0.0), 1.0));
    }

    fn arb_points() -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), 0..400)
            .prop_map(|v| v.into_iter().map(Point3::from).collect())
    }

    proptest! {
        #[test]
        fn downsample_is_bounded_and_idempotent(pts in arb_points(), cap in 1usize..6, res in 0.2..2.0f64) {
            let once = voxel_downsample(&pts, res, cap);
            prop_assert!(once.len() <= pts.len());
            let twice = voxel_downsample(&once, res, cap);
            prop_assert_eq!(&once, &twice);
            let mut counts = FxHashMap::default();
            for p in &once {
                *counts.entry(voxel_key(p, res)).or_insert(0usize) += 1;
            }
            prop_assert!(counts.values().all(|&c| c <= cap));
        }
    }
}
