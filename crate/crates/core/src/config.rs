//! Pipeline configuration and its flat `key = value` text form.

use std::fmt::Display;
use std::str::FromStr;

use crate::closure::RansacParams;
use crate::error::{Error, Result};
use crate::eval::ReferenceParams;
use crate::features::FeatureParams;
use crate::ground::GroundParams;
use crate::local_map::LocalMapParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub local_map: LocalMapParams,
    pub ground: GroundParams,
    /// Skip ground alignment entirely when false.
    pub ground_alignment: bool,
    pub bev_resolution: f64,
    pub features: FeatureParams,
    pub prune: bool,
    pub tau_pr: u32,
    pub tau_match: u32,
    /// In-session queries ignore maps within this many indices.
    pub exclude_recent: u32,
    pub leaf_capacity: usize,
    pub ransac: RansacParams,
    pub tau_d: f64,
    pub reference: ReferenceParams,
    /// Correspondence distance for map-level reference overlap.
    pub map_overlap_dist: f64,
    /// Correspondence distance for the fitness of aligned closures.
    pub fitness_dist: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            local_map: LocalMapParams::default(),
            ground: GroundParams::default(),
            ground_alignment: true,
            bev_resolution: 0.5,
            features: FeatureParams::default(),
            prune: true,
            tau_pr: 35,
            tau_match: 50,
            exclude_recent: 1,
            leaf_capacity: 100,
            ransac: RansacParams::default(),
            tau_d: 10.0,
            reference: ReferenceParams::default(),
            map_overlap_dist: 1.0,
            fitness_dist: 1.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

macro_rules! config_keys {
    ($( $key:literal => $($field:ident).+ ),* $(,)?) => {
        impl PipelineConfig {
            /// All keys in serialization order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.to_string()),)*
                    _ => None,
                }
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = parse($key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }
        }
    };
}

config_keys! {
    "tau_c" => local_map.tau_c,
    "max_range" => local_map.max_range,
    "voxel_size" => local_map.voxel_size,
    "max_points_per_voxel" => local_map.max_points_per_voxel,
    "ground.enabled" => ground_alignment,
    "ground.cell" => ground.cell,
    "ground.max_iters" => ground.max_iters,
    "ground.inlier_dist" => ground.inlier_dist,
    "ground.eps" => ground.convergence_eps,
    "bev_resolution" => bev_resolution,
    "feature.fast_threshold" => features.fast_threshold,
    "feature.max_features" => features.max_features,
    "prune" => prune,
    "tau_pr" => tau_pr,
    "tau_match" => tau_match,
    "exclude_recent" => exclude_recent,
    "leaf_capacity" => leaf_capacity,
    "gamma" => ransac.min_inliers,
    "inlier_tol" => ransac.inlier_tol,
    "ransac_iterations" => ransac.iterations,
    "ransac_min_sample_px" => ransac.min_sample_px,
    "seed" => ransac.seed,
    "tau_d" => tau_d,
    "eval.keyframe_spacing" => reference.keyframe_spacing,
    "eval.skip" => reference.skip,
    "eval.overlap_threshold" => reference.overlap_threshold,
    "eval.corr_dist" => reference.corr_dist,
    "eval.voxel" => reference.voxel,
    "eval.max_range" => reference.max_range,
    "eval.map_overlap_dist" => map_overlap_dist,
    "eval.fitness_dist" => fitness_dist,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        self.local_map
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let distances = [
            self.ground.cell,
            self.ground.inlier_dist,
            self.bev_resolution,
            self.ransac.inlier_tol,
            self.tau_d,
            self.reference.keyframe_spacing,
            self.reference.corr_dist,
            self.reference.voxel,
            self.reference.max_range,
            self.map_overlap_dist,
            self.fitness_dist,
        ];
        if distances.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return fail("all distances must be positive");
        }
        if !(self.ground.convergence_eps > 0.0) || self.ground.max_iters == 0 {
            return fail("ground solver needs positive eps and iterations");
        }
        if self.tau_pr > 256 || self.tau_match > 256 {
            return fail("bit thresholds cannot exceed 256");
        }
        if self.ransac.min_inliers < 2 || self.ransac.iterations == 0 {
            return fail("gamma must be at least 2 and ransac_iterations positive");
        }
        if self.leaf_capacity == 0 || self.features.max_features == 0 {
            return fail("leaf_capacity and feature.max_features must be positive");
        }
        if !(0.0..=1.0).contains(&self.reference.overlap_threshold) {
            return fail("eval.overlap_threshold must be in [0, 1]");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(PipelineConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(c.to_text().contains("gamma = 5\n"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = PipelineConfig::default();
        assert!(c.apply_text("nope = 1").is_err());
        assert!(c.apply_text("gamma = many").is_err());
        assert!(PipelineConfig::from_text("tau_match = 300").is_err());
        assert!(PipelineConfig::from_text("tau_c = -1").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = PipelineConfig::from_text("# header\n\ntau_c = 40  # meters\nprune=false\n").unwrap();
        assert_eq!(c.local_map.tau_c, 40.0);
        assert!(!c.prune);
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(
            tau_c in 1e-3..1e4f64,
            res in 1e-3..10.0f64,
            gamma in 2usize..100,
            seed in any::<u64>(),
            eps in 1e-12..1.0f64,
            prune in any::<bool>(),
        ) {
            let mut c = PipelineConfig::default();
            c.local_map.tau_c = tau_c;
            c.bev_resolution = res;
            c.ransac.min_inliers = gamma;
            c.ransac.seed = seed;
            c.ground.convergence_eps = eps;
            c.prune = prune;
            prop_assert_eq!(PipelineConfig::from_text(&c.to_text()).unwrap(), c);
        }
    }
}
