//! Synthetic scenarios shared by the integration tests.
#![allow(dead_code)]

use bevloop::config::PipelineConfig;
use bevloop::session::{evaluate, run_scans, Metrics, RunOptions, SessionOutput};
use bevloop::synth::{SensorSpec, SynthSpec, SyntheticSession, TrajectorySpec, WorldSpec, Layout};
use bevloop::ScanRecord;

/// 400 m corridor drive: 200 m out, 200 m back in the opposite lane.
pub fn corridor(oscillation_deg: f64, world_seed: u64) -> SynthSpec {
    SynthSpec {
        world: WorldSpec {
            length: 200.0,
            seed: world_seed,
            ..WorldSpec::default()
        },
        trajectory: TrajectorySpec::OutAndBack {
            leg: 200.0,
            step: 0.8,
            lane: 1.5,
        },
        sensor: SensorSpec {
            oscillation: oscillation_deg,
            ..SensorSpec::default()
        },
        seed: 7,
    }
}

/// One-way drive past two identical pillar rows.
pub fn bridge(world_seed: u64) -> SynthSpec {
    SynthSpec {
        world: WorldSpec {
            layout: Layout::Bridge,
            length: 400.0,
            seed: world_seed,
            ..WorldSpec::default()
        },
        trajectory: TrajectorySpec::OneWay {
            start: 0.0,
            length: 400.0,
            step: 0.8,
            lane: 1.5,
        },
        sensor: SensorSpec {
            max_range: 25.0,
            ..SensorSpec::default()
        },
        seed: 7,
    }
}

/// Desk-scale parameters for the corridor worlds.
pub fn corridor_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.local_map.tau_c = 50.0;
    c.local_map.max_range = 30.0;
    c
}

pub fn bridge_config(prune: bool) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.local_map.tau_c = 20.0;
    c.local_map.max_range = 25.0;
    c.prune = prune;
    c
}

pub fn records(s: &SyntheticSession) -> impl Iterator<Item = bevloop::Result<ScanRecord>> + '_ {
    s.scans
        .iter()
        .zip(&s.poses)
        .enumerate()
        .map(|(index, (cloud, pose))| {
            Ok(ScanRecord {
                index,
                cloud: cloud.clone(),
                pose: *pose,
            })
        })
}

pub fn run(s: &SyntheticSession, config: &PipelineConfig, opts: &RunOptions<'_>) -> SessionOutput {
    run_scans(records(s), config, opts).expect("pipeline run")
}

/// Runs in-session detection with fitness scoring and evaluates it.
pub fn run_and_evaluate(s: &SyntheticSession, config: &PipelineConfig) -> (SessionOutput, Metrics) {
    let out = run(
        s,
        config,
        &RunOptions {
            keep_points: true,
            ..RunOptions::default()
        },
    );
    let metrics = evaluate(&out.detections(), &s.poses, config, |i| Ok(s.scans[i].clone())).expect("evaluation");
    (out, metrics)
}
