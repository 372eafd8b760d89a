//! Oriented binary descriptors at a single scale.

use log::warn;
use serde::{Deserialize, Serialize};

use super::fast;
use super::pattern::PATTERN;
use crate::bev::{DensityImage, GrayImage};
use crate::geometry::wrap_angle;

/// Keypoints closer than this to any edge are dropped.
pub const BORDER: usize = 16;
/// Radius of the intensity-centroid disc.
pub const ORIENTATION_RADIUS: i32 = 15;
/// Half-width of the smoothing box.
const SMOOTH_HALF: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub fast_threshold: u8,
    pub max_features: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            fast_threshold: 20,
            max_features: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    /// Radians in (−π, π].
    pub orientation: f64,
    pub response: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryDescriptor {
    pub bits: [u64; 4],
    pub keypoint: Keypoint,
    pub map_index: u32,
}

impl BinaryDescriptor {
    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        bit(&self.bits, i)
    }

    #[inline]
    pub fn distance(&self, other: &BinaryDescriptor) -> u32 {
        hamming(&self.bits, &other.bits)
    }
}

#[inline]
pub fn bit(bits: &[u64; 4], i: usize) -> bool {
    (bits[i >> 6] >> (i & 63)) & 1 == 1
}

#[inline]
pub fn hamming(a: &[u64; 4], b: &[u64; 4]) -> u32 {
    (a[0] ^ b[0]).count_ones()
        + (a[1] ^ b[1]).count_ones()
        + (a[2] ^ b[2]).count_ones()
        + (a[3] ^ b[3]).count_ones()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionWarning {
    /// The image cannot hold a single descriptor patch.
    ImageTooSmall { width: usize, height: usize },
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub descriptors: Vec<BinaryDescriptor>,
    pub warning: Option<ExtractionWarning>,
}

/// Summed-area table with a zero guard row and column.
struct Integral {
    stride: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(img: &GrayImage) -> Self {
        let stride = img.width + 1;
        let mut sums = vec![0u32; stride * (img.height + 1)];
        for v in 0..img.height {
            let mut row = 0u32;
            for u in 0..img.width {
                row += img.get(u, v) as u32;
                sums[(v + 1) * stride + u + 1] = sums[v * stride + u + 1] + row;
            }
        }
        Self { stride, sums }
    }

    /// Sum over the 5×5 box centered at `(u, v)`.
    #[inline]
    fn box5(&self, u: i32, v: i32) -> u32 {
        let (u0, v0) = ((u - SMOOTH_HALF) as usize, (v - SMOOTH_HALF) as usize);
        let (u1, v1) = ((u + SMOOTH_HALF + 1) as usize, (v + SMOOTH_HALF + 1) as usize);
        let s = &self.sums;
        s[v1 * self.stride + u1] + s[v0 * self.stride + u0]
            - s[v0 * self.stride + u1]
            - s[v1 * self.stride + u0]
    }
}

/// Direction from the patch center to its intensity centroid.
pub fn intensity_centroid_angle(img: &GrayImage, u: usize, v: usize) -> f64 {
    let r = ORIENTATION_RADIUS;
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -r..=r {
        let half = ((r * r - dy * dy) as f64).sqrt() as i32;
        for dx in -half..=half {
            let i = img.get((u as i32 + dx) as usize, (v as i32 + dy) as usize) as i64;
            m10 += dx as i64 * i;
            m01 += dy as i64 * i;
        }
    }
    wrap_angle((m01 as f64).atan2(m10 as f64))
}

fn describe(integral: &Integral, u: usize, v: usize, angle: f64) -> [u64; 4] {
    let (s, c) = angle.sin_cos();
    let mut bits = [0u64; 4];
    let rotate = |x: i8, y: i8| {
        let (x, y) = (x as f64, y as f64);
        (
            u as i32 + (c * x - s * y).round() as i32,
            v as i32 + (s * x + c * y).round() as i32,
        )
    };
    for (i, p) in PATTERN.iter().enumerate() {
        let (ax, ay) = rotate(p[0], p[1]);
        let (bx, by) = rotate(p[2], p[3]);
        if integral.box5(ax, ay) < integral.box5(bx, by) {
            bits[i >> 6] |= 1 << (i & 63);
        }
    }
    bits
}

pub fn detect_and_describe_gray(img: &GrayImage, params: &FeatureParams, map_index: u32) -> Extraction {
    if img.width < 2 * BORDER || img.height < 2 * BORDER {
        warn!(
            "map {map_index}: {}x{} image too small for features",
            img.width, img.height
        );
        return Extraction {
            descriptors: Vec::new(),
            warning: Some(ExtractionWarning::ImageTooSmall {
                width: img.width,
                height: img.height,
            }),
        };
    }
    let mut corners = fast::detect(img, params.fast_threshold, BORDER);
    // Highest response first; scan order breaks ties.
    corners.sort_by(|a, b| b.score.cmp(&a.score).then(a.v.cmp(&b.v)).then(a.u.cmp(&b.u)));
    corners.truncate(params.max_features);

    let integral = Integral::new(img);
    let descriptors = corners
        .iter()
        .map(|c| {
            let orientation = intensity_centroid_angle(img, c.u, c.v);
            BinaryDescriptor {
                bits: describe(&integral, c.u, c.v, orientation),
                keypoint: Keypoint {
                    u: c.u as f64,
                    v: c.v as f64,
                    orientation,
                    response: c.score as f32,
                },
                map_index,
            }
        })
        .collect();
    Extraction {
        descriptors,
        warning: None,
    }
}

pub fn detect_and_describe(image: &DensityImage, params: &FeatureParams, map_index: u32) -> Extraction {
    detect_and_describe_gray(&image.to_u8(), params, map_index)
}
