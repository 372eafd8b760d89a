//! Geometric verification of match votes and conversion to 3D constraints.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{se2_to_se3, Se2, Se3};
use crate::hbst::{MatchPair, MatchVote};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    /// Residual gate in meters.
    pub inlier_tol: f64,
    /// Closures need at least this many inliers (γ).
    pub min_inliers: usize,
    /// Minimal samples closer than this many pixels are rejected.
    pub min_sample_px: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_tol: 1.5,
            min_inliers: 5,
            min_sample_px: 2.0,
            seed: 0,
        }
    }
}

/// A vote together with what is needed to put its keypoints in meters.
#[derive(Debug, Clone)]
pub struct ClosureCandidate {
    pub vote: MatchVote,
    pub resolution: f64,
    pub query_origin: [i64; 2],
    pub reference_origin: [i64; 2],
}

impl ClosureCandidate {
    fn to_metric(&self, u: f64, v: f64, origin: [i64; 2]) -> Vector2<f64> {
        Vector2::new(
            (u + origin[0] as f64 + 0.5) * self.resolution,
            (v + origin[1] as f64 + 0.5) * self.resolution,
        )
    }

    /// Reference (source) and query (destination) keypoints in meters.
    pub fn metric_pairs(&self) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
        self.vote
            .pairs
            .iter()
            .map(|p| {
                (
                    self.to_metric(p.reference.u, p.reference.v, self.reference_origin),
                    self.to_metric(p.query.u, p.query.v, self.query_origin),
                )
            })
            .unzip()
    }
}

#[derive(Debug, Clone)]
pub struct LoopClosure {
    pub query_map: u32,
    pub reference_map: u32,
    pub inliers: usize,
    /// Maps ground-aligned reference coordinates to ground-aligned query
    /// coordinates, in meters.
    pub t_bev: Se2,
    /// Maps reference anchor-frame coordinates to query anchor-frame
    /// coordinates.
    pub t_qr: Se3,
    pub inlier_pairs: Vec<MatchPair>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanClosure {
    pub query_map: u32,
    pub reference_map: u32,
    pub query_scan: usize,
    pub reference_scan: usize,
    pub distance: f64,
}

/// Least-squares rigid fit `dst ≈ R·src + t`.
pub fn kabsch_umeyama_2d(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Result<Se2> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(Error::InvalidParameter(
            "rigid fit needs two or more paired points".into(),
        ));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector2<f64>>() / n;
    let cd = dst.iter().sum::<Vector2<f64>>() / n;
    let (mut dot, mut cross, mut spread) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (s, d) = (s - cs, d - cd);
        dot += s.dot(&d);
        cross += s.x * d.y - s.y * d.x;
        spread += s.norm_squared();
    }
    if spread <= f64::EPSILON * f64::EPSILON * n {
        return Err(Error::Degenerate("coincident source points"));
    }
    let angle = cross.atan2(dot);
    let (sin, cos) = angle.sin_cos();
    let rotated = Vector2::new(cos * cs.x - sin * cs.y, sin * cs.x + cos * cs.y);
    Ok(Se2::new(angle, cd - rotated))
}

fn inlier_set(t: &Se2, src: &[Vector2<f64>], dst: &[Vector2<f64>], tol: f64) -> Vec<usize> {
    let tol2 = tol * tol;
    (0..src.len())
        .filter(|&i| (dst[i] - t.apply(&src[i])).norm_squared() <= tol2)
        .collect()
}

/// Per-candidate stream so verification order never changes the outcome.
fn candidate_rng(seed: u64, query: u32, reference: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ ((query as u64) << 32 | reference as u64))
}

/// Best consistent transform for a candidate, without the γ decision.
/// Returns the fitted transform and its inlier indices.
pub fn ransac_fit(cand: &ClosureCandidate, params: &RansacParams) -> Option<(Se2, Vec<usize>)> {
    let n = cand.vote.pairs.len();
    if n < 2 {
        return None;
    }
    let (src, dst) = cand.metric_pairs();
    let min_sep2 = (params.min_sample_px * cand.resolution).powi(2);
    let mut rng = candidate_rng(params.seed, cand.vote.query_map, cand.vote.reference_map);

    let mut best: Option<(usize, Se2)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if (src[i] - src[j]).norm_squared() < min_sep2 || (dst[i] - dst[j]).norm_squared() < min_sep2 {
            continue;
        }
        let Ok(t) = kabsch_umeyama_2d(&[src[i], src[j]], &[dst[i], dst[j]]) else {
            continue;
        };
        let count = inlier_set(&t, &src, &dst, params.inlier_tol).len();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, t));
        }
    }

    let (_, mut t) = best?;
    let mut inliers = inlier_set(&t, &src, &dst, params.inlier_tol);
    // Refit on the full inlier set until it stops changing.
    for _ in 0..16 {
        if inliers.len() < 2 {
            break;
        }
        let s: Vec<_> = inliers.iter().map(|&i| src[i]).collect();
        let d: Vec<_> = inliers.iter().map(|&i| dst[i]).collect();
        let Ok(refit) = kabsch_umeyama_2d(&s, &d) else {
            break;
        };
        let next = inlier_set(&refit, &src, &dst, params.inlier_tol);
        if next.len() < 2 {
            break;
        }
        t = refit;
        if next == inliers {
            break;
        }
        inliers = next;
    }
    // Keep only pairs that satisfy the gate under the transform returned.
    let inliers = inlier_set(&t, &src, &dst, params.inlier_tol);
    Some((t, inliers))
}

/// Verifies a candidate; `ground_q`/`ground_r` are the maps' ground transforms.
pub fn ransac_verify(
    cand: &ClosureCandidate,
    params: &RansacParams,
    ground_q: &Se3,
    ground_r: &Se3,
) -> Option<LoopClosure> {
    let (t_bev, inliers) = ransac_fit(cand, params)?;
    if inliers.len() < params.min_inliers {
        return None;
    }
    Some(LoopClosure {
        query_map: cand.vote.query_map,
        reference_map: cand.vote.reference_map,
        inliers: inliers.len(),
        t_bev,
        t_qr: compose_3d(&t_bev, ground_q, ground_r),
        inlier_pairs: inliers.iter().map(|&i| cand.vote.pairs[i]).collect(),
    })
}

/// `T_g,q⁻¹ · T_bev · T_g,r`.
pub fn compose_3d(t_bev: &Se2, ground_q: &Se3, ground_r: &Se3) -> Se3 {
    ground_q.inverse() * se2_to_se3(t_bev) * *ground_r
}

/// Scan pairs of a closure whose positions, expressed in the reference
/// anchor frame, are within `tau_d`. Poses are anchor-relative, paired with
/// their scan indices.
pub fn expand_to_scans(
    closure: &LoopClosure,
    query: &[(usize, Se3)],
    reference: &[(usize, Se3)],
    tau_d: f64,
) -> Vec<ScanClosure> {
    let to_ref = closure.t_qr.inverse();
    let mut out = Vec::new();
    for (qi, qp) in query {
        let q = to_ref.transform_point(&nalgebra::Point3::from(*qp.translation()));
        for (ri, rp) in reference {
            let distance = (q.coords - rp.translation()).norm();
            if distance <= tau_d {
                out.push(ScanClosure {
                    query_map: closure.query_map,
                    reference_map: closure.reference_map,
                    query_scan: *qi,
                    reference_scan: *ri,
                    distance,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Keypoint;
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_2;

    fn v(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    fn kp(u: f64, v: f64) -> Keypoint {
        Keypoint {
            u,
            v,
            orientation: 0.0,
            response: 0.0,
        }
    }

    /// Candidate with origin 0 and resolution 1, so metric = pixel + 0.5.
    fn candidate(pairs: &[(Vector2<f64>, Vector2<f64>)]) -> ClosureCandidate {
        ClosureCandidate {
            vote: MatchVote {
                query_map: 10,
                reference_map: 2,
                pairs: pairs
                    .iter()
                    .map(|(r, q)| MatchPair {
                        query: kp(q.x - 0.5, q.y - 0.5),
                        reference: kp(r.x - 0.5, r.y - 0.5),
                        hamming: 0,
                    })
                    .collect(),
            },
            resolution: 1.0,
            query_origin: [0, 0],
            reference_origin: [0, 0],
        }
    }

    #[test]
    fn kabsch_identity_rotation_and_shift() {
        let src = [v(0.0, 0.0), v(2.0, 0.0), v(0.0, 1.0)];
        let t = kabsch_umeyama_2d(&src, &src).unwrap();
        assert!(t.angle().abs() < 1e-15 && t.translation().norm() < 1e-15);

        let rot: Vec<_> = src.iter().map(|p| v(-p.y, p.x)).collect();
        let t = kabsch_umeyama_2d(&src, &rot).unwrap();
        assert!((t.angle() - FRAC_PI_2).abs() < 1e-12);
        assert!(t.translation().norm() < 1e-12);

        let shifted: Vec<_> = src.iter().map(|p| p + v(3.0, -4.0)).collect();
        let t = kabsch_umeyama_2d(&src, &shifted).unwrap();
        assert!(t.angle().abs() < 1e-12);
        assert!((t.translation() - v(3.0, -4.0)).norm() < 1e-12);
    }

    #[test]
    fn kabsch_rejects_coincident_sources() {
        let src = [v(1.0, 1.0), v(1.0, 1.0)];
        assert!(matches!(
            kabsch_umeyama_2d(&src, &[v(0.0, 0.0), v(1.0, 0.0)]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn clean_pairs_give_exact_closure() {
        let truth = Se2::new(0.7, v(5.0, -2.0));
        let pairs: Vec<_> = (0..10)
            .map(|i| {
                let r = v((i * 7 % 13) as f64 * 3.0, (i * 5 % 11) as f64 * 2.0);
                (r, truth.apply(&r))
            })
            .collect();
        let cand = candidate(&pairs);
        let id = Se3::identity();
        let c = ransac_verify(&cand, &RansacParams::default(), &id, &id).unwrap();
        assert_eq!(c.inliers, 10);
        assert!((c.t_bev.angle() - 0.7).abs() < 1e-12);
        assert!((c.t_bev.translation() - truth.translation()).norm() < 1e-10);
        assert!(c.t_qr.max_abs_diff(&se2_to_se3(&c.t_bev)) < 1e-15);
    }

    #[test]
    fn four_consistent_pairs_never_close() {
        let truth = Se2::new(-0.3, v(1.0, 8.0));
        let mut pairs: Vec<_> = [v(0.0, 0.0), v(20.0, 3.0), v(7.0, 30.0), v(40.0, 40.0)]
            .iter()
            .map(|r| (*r, truth.apply(r)))
            .collect();
        for i in 0..20 {
            let a = (i as f64 * 37.0) % 97.0;
            let b = (i as f64 * 53.0) % 89.0;
            pairs.push((v(a, b), v(b * 1.3 + 100.0, a * 0.7 - 50.0)));
        }
        let c = ransac_verify(&candidate(&pairs), &RansacParams::default(), &Se3::identity(), &Se3::identity());
        assert!(c.is_none());
    }

    #[test]
    fn too_few_pairs_are_skipped() {
        let cand = candidate(&[(v(0.0, 0.0), v(1.0, 1.0))]);
        assert!(ransac_fit(&cand, &RansacParams::default()).is_none());
        assert!(ransac_fit(&candidate(&[]), &RansacParams::default()).is_none());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let pairs: Vec<_> = (0..30)
            .map(|i| {
                let r = v(i as f64 * 2.0, (i * i % 17) as f64);
                let q = if i % 3 == 0 { v(r.y, -r.x) } else { r + v(1.0, 1.0) };
                (r, q)
            })
            .collect();
        let cand = candidate(&pairs);
        let a = ransac_fit(&cand, &RansacParams::default()).unwrap();
        let b = ransac_fit(&cand, &RansacParams::default()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn compose_cancels_equal_grounds() {
        let g = Se3::from_rpy(0.2, -0.1, 0.0, Vector3::new(0.0, 0.0, 1.5));
        let t = compose_3d(&Se2::identity(), &g, &g);
        assert!(t.max_abs_diff(&Se3::identity()) < 1e-12);
    }

    #[test]
    fn scan_expansion_matches_pairwise_oracle() {
        // Reference: 100 poses along x at 1 m. Query: overlapping the last
        // 30 m of the reference once mapped through t_qr.
        let reference: Vec<_> = (0..100)
            .map(|i| (i, Se3::from_translation(Vector3::new(i as f64, 0.0, 0.0))))
            .collect();
        let query: Vec<_> = (0..100)
            .map(|i| (1000 + i, Se3::from_translation(Vector3::new(i as f64, 0.0, 0.0))))
            .collect();
        let t_bev = Se2::new(0.0, v(-70.0, 0.0));
        let closure = LoopClosure {
            query_map: 1,
            reference_map: 0,
            inliers: 5,
            t_bev,
            t_qr: se2_to_se3(&t_bev),
            inlier_pairs: Vec::new(),
        };
        let got = expand_to_scans(&closure, &query, &reference, 10.0);
        let mut oracle = 0;
        for (_, q) in &query {
            for (_, r) in &reference {
                if (q.translation().x + 70.0 - r.translation().x).abs() <= 10.0 {
                    oracle += 1;
                }
            }
        }
        assert_eq!(got.len(), oracle);
        assert!(got.iter().all(|s| s.distance <= 10.0));

        let far = LoopClosure {
            t_qr: Se3::from_translation(Vector3::new(0.0, 50.0, 0.0)),
            ..closure
        };
        assert!(expand_to_scans(&far, &query, &reference, 10.0).is_empty());
    }
}
