use std::hint::black_box;

use bevloop::bev::project_points;
use bevloop::closure::{ransac_fit, ClosureCandidate, RansacParams};
use bevloop::features::{detect_and_describe, prune_self_similar, FeatureParams};
use bevloop::ground::{sample_lowest_points, solve_ground, GroundParams};
use bevloop::hbst::{Hbst, MatchPair, MatchVote};
use bevloop::synth::planar_map;
use bevloop::{BinaryDescriptor, Keypoint, Point3, Se2, Se3};
use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tilted(points: &[Point3], deg: f64) -> Vec<Point3> {
    let t = Se3::from_rpy(deg.to_radians(), -0.5 * deg.to_radians(), 0.0, Vector3::new(0.0, 0.0, 1.0));
    points.iter().map(|p| t.transform_point(p)).collect()
}

fn ground(c: &mut Criterion) {
    let params = GroundParams::default();
    let mut g = c.benchmark_group("ground");
    for half in [30.0, 60.0] {
        let pts = tilted(&planar_map(half, 0.25, 0.02, true, 1), 20.0);
        g.throughput(Throughput::Elements(pts.len() as u64));
        g.bench_with_input(BenchmarkId::new("sample_and_solve", pts.len()), &pts, |b, pts| {
            b.iter(|| {
                let s = sample_lowest_points(pts, params.cell).unwrap();
                solve_ground(&s, &params).unwrap()
            })
        });
    }
    g.finish();
}

fn bev(c: &mut Criterion) {
    let pts = planar_map(60.0, 0.2, 0.02, true, 2);
    let mut g = c.benchmark_group("bev");
    g.throughput(Throughput::Elements(pts.len() as u64));
    g.bench_function("project_0.5m", |b| b.iter(|| project_points(black_box(&pts), 0.5).unwrap()));
    g.finish();
}

fn orb(c: &mut Criterion) {
    let img = project_points(&planar_map(60.0, 0.2, 0.02, true, 3), 0.5).unwrap();
    let params = FeatureParams::default();
    let descs = detect_and_describe(&img, &params, 0).descriptors;
    let mut g = c.benchmark_group("features");
    g.bench_function("detect_and_describe", |b| b.iter(|| detect_and_describe(black_box(&img), &params, 0)));
    g.bench_function("prune_500", |b| b.iter(|| prune_self_similar(black_box(&descs), 35)));
    g.finish();
}

fn random_descriptor(rng: &mut ChaCha8Rng, map: u32) -> BinaryDescriptor {
    BinaryDescriptor {
        bits: [rng.random(), rng.random(), rng.random(), rng.random()],
        keypoint: Keypoint {
            u: rng.random_range(0.0..200.0),
            v: rng.random_range(0.0..200.0),
            orientation: 0.0,
            response: 1.0,
        },
        map_index: map,
    }
}

fn hbst(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let maps: Vec<Vec<BinaryDescriptor>> = (0..100)
        .map(|m| (0..500).map(|_| random_descriptor(&mut rng, m)).collect())
        .collect();
    let mut tree = Hbst::default();
    for m in &maps {
        tree.insert(m).unwrap();
    }
    let query: Vec<BinaryDescriptor> = (0..500).map(|_| random_descriptor(&mut rng, 500)).collect();
    let mut g = c.benchmark_group("hbst");
    g.bench_function("query_500_in_50k", |b| b.iter(|| tree.query(black_box(&query), 50, Some(1))));
    g.bench_function("insert_500_into_50k", |b| {
        b.iter_batched(
            || tree.clone(),
            |mut t| t.insert(&query).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn ransac(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = Se2::new(0.7, Vector2::new(12.0, -4.0));
    let keypoint = |p: Vector2<f64>| Keypoint {
        u: p.x / 0.5 - 0.5,
        v: p.y / 0.5 - 0.5,
        orientation: 0.0,
        response: 1.0,
    };
    let pairs = (0..100)
        .map(|k| {
            let s = Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let d = if k % 2 == 0 {
                truth.apply(&s)
            } else {
                Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))
            };
            MatchPair {
                query: keypoint(d),
                reference: keypoint(s),
                hamming: 20,
            }
        })
        .collect();
    let cand = ClosureCandidate {
        vote: MatchVote {
            query_map: 1,
            reference_map: 0,
            pairs,
        },
        resolution: 0.5,
        query_origin: [0, 0],
        reference_origin: [0, 0],
    };
    let params = RansacParams::default();
    c.bench_function("ransac_100_pairs_50pct", |b| b.iter(|| ransac_fit(black_box(&cand), &params)));
}

criterion_group! {
    name = stages;
    config = Criterion::default().sample_size(20);
    targets = ground, bev, orb, hbst, ransac
}
criterion_main!(stages);
