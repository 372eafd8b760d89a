//! FAST-9 corner detection on 8-bit images.

use crate::bev::GrayImage;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Contiguous arc length required for a corner.
pub const ARC: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub u: usize,
    pub v: usize,
    pub score: i32,
}

/// Largest `t` for which the pixel is a FAST corner at threshold `t - 1`:
/// the best, over all arcs of nine, of the smallest brighter (or darker)
/// margin along the arc. Zero or negative means no arc qualifies at all.
pub fn corner_score(img: &GrayImage, u: usize, v: usize) -> i32 {
    let p = img.get(u, v) as i32;
    let mut d = [0i32; 16];
    for (k, &(dx, dy)) in CIRCLE.iter().enumerate() {
        d[k] = img.get((u as i32 + dx) as usize, (v as i32 + dy) as usize) as i32 - p;
    }
    let mut best = i32::MIN;
    for start in 0..16 {
        let mut bright = i32::MAX;
        let mut dark = i32::MAX;
        for k in 0..ARC {
            let x = d[(start + k) % 16];
            bright = bright.min(x);
            dark = dark.min(-x);
        }
        best = best.max(bright).max(dark);
    }
    best
}

/// Pixels with a nine-arc all brighter than `p + threshold` or all darker
/// than `p - threshold`, after 3×3 non-maximum suppression on the score.
/// Only pixels at least `margin` (≥ 3) from every edge are examined.
pub fn detect(img: &GrayImage, threshold: u8, margin: usize) -> Vec<Corner> {
    let margin = margin.max(3);
    let (w, h) = (img.width, img.height);
    if w < 2 * margin + 1 || h < 2 * margin + 1 {
        return Vec::new();
    }
    let t = threshold as i32;
    let mut scores = vec![0i32; w * h];
    for v in margin..h - margin {
        for u in margin..w - margin {
            // Cheap rejection: a nine-arc must include two of the four compass
            // points, so at least two of them pass the threshold test.
            let p = img.get(u, v) as i32;
            let compass = [(0, -3), (3, 0), (0, 3), (-3, 0)];
            let (mut nb, mut nd) = (0, 0);
            for (dx, dy) in compass {
                let q = img.get((u as i32 + dx) as usize, (v as i32 + dy) as usize) as i32;
                nb += (q > p + t) as u32;
                nd += (q < p - t) as u32;
            }
            if nb < 2 && nd < 2 {
                continue;
            }
            let s = corner_score(img, u, v);
            if s > t {
                scores[v * w + u] = s;
            }
        }
    }

    let mut out = Vec::new();
    for v in margin..h - margin {
        for u in margin..w - margin {
            let s = scores[v * w + u];
            if s == 0 {
                continue;
            }
            let mut keep = true;
            'nms: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = scores[((v as i32 + dy) as usize) * w + (u as i32 + dx) as usize];
                    // Plateaus keep their first pixel in scan order.
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > s || (earlier && n == s) {
                        keep = false;
                        break 'nms;
                    }
                }
            }
            if keep {
                out.push(Corner { u, v, score: s });
            }
        }
    }
    out
}
