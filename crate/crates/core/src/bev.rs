//! Density bird's-eye-view images.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::local_map::LocalMap;

/// Normalized intensities below this are cleared.
pub const DENSITY_CUTOFF: f64 = 0.05;

/// Row-major density grid; pixel `(u, v)` covers x-cell `origin_cell[0] + u`
/// and y-cell `origin_cell[1] + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityImage {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin_cell: [i64; 2],
    pub counts: Vec<u32>,
    pub intensity: Vec<f64>,
    /// Every occupied pixel holds the same count, so nothing is normalizable.
    pub degenerate: bool,
}

impl DensityImage {
    #[inline]
    pub fn count(&self, u: usize, v: usize) -> u32 {
        self.counts[v * self.width + u]
    }

    #[inline]
    pub fn intensity_at(&self, u: usize, v: usize) -> f64 {
        self.intensity[v * self.width + u]
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// 8-bit view with round-half-up quantization.
    pub fn to_u8(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .intensity
                .iter()
                .map(|&i| (255.0 * i + 0.5).floor().clamp(0.0, 255.0) as u8)
                .collect(),
        }
    }

    /// Metric xy-coordinates of a pixel center.
    pub fn pixel_to_metric(&self, u: f64, v: f64) -> [f64; 2] {
        [
            (u + self.origin_cell[0] as f64 + 0.5) * self.resolution,
            (v + self.origin_cell[1] as f64 + 0.5) * self.resolution,
        ]
    }
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: u8) {
        self.data[v * self.width + u] = value;
    }

    /// Binary PGM (P5).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)
    }

    /// Rotates a quarter turn so that pixel `(u, v)` moves to `(H-1-v, u)`.
    pub fn rotate90(&self) -> GrayImage {
        let mut out = GrayImage::new(self.height, self.width);
        for v in 0..self.height {
            for u in 0..self.width {
                out.set(self.height - 1 - v, u, self.get(u, v));
            }
        }
        out
    }
}

pub fn project(map: &LocalMap, resolution: f64) -> Result<DensityImage> {
    project_points(&map.points, resolution)
}

pub fn project_points(points: &[Point3], resolution: f64) -> Result<DensityImage> {
    if points.is_empty() {
        return Err(Error::EmptyMap);
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidParameter("BEV resolution must be positive".into()));
    }
    let cell = |x: f64| (x / resolution).floor() as i64;
    let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
    for p in points {
        let c = [cell(p.x), cell(p.y)];
        for k in 0..2 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let width = (hi[0] - lo[0] + 1) as usize;
    let height = (hi[1] - lo[1] + 1) as usize;
    let mut counts = vec![0u32; width * height];
    for p in points {
        let u = (cell(p.x) - lo[0]) as usize;
        let v = (cell(p.y) - lo[1]) as usize;
        counts[v * width + u] += 1;
    }

    let n_max = *counts.iter().max().expect("non-empty grid");
    let n_min = *counts.iter().min().expect("non-empty grid");
    let degenerate = n_max == n_min;
    let intensity = if degenerate {
        vec![0.0; counts.len()]
    } else {
        let range = (n_max - n_min) as f64;
        counts
            .iter()
            .map(|&n| {
                let i = (n - n_min) as f64 / range;
                if i < DENSITY_CUTOFF {
                    0.0
                } else {
                    i
                }
            })
            .collect()
    };

    Ok(DensityImage {
        width,
        height,
        resolution,
        origin_cell: lo,
        counts,
        intensity,
        degenerate,
    })
}
