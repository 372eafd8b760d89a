//! End-to-end loop closure over one session, optionally against a database
//! saved from another session.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::bev::{project, DensityImage};
use crate::closure::{expand_to_scans, ransac_verify, ClosureCandidate, LoopClosure, ScanClosure};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{
    average_precision, canonical, confusion_at, max_f1, pr_curve, recall_at_full_precision,
    reference_map_closures, reference_scan_closures, FitnessTarget, PrPoint,
};
use crate::features::{detect_and_describe, prune_self_similar, BinaryDescriptor};
use crate::geometry::{Point3, Se3};
use crate::ground::{align_ground, GroundSolveReport};
use crate::hbst::Hbst;
use crate::io::{read_poses, read_scan, SessionManifest};
use crate::local_map::{accumulate, LocalMap, LocalMapParams, PointCloud, ScanRecord};

/// What the database keeps about each inserted map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapRecord {
    pub index: u32,
    pub scan_indices: Vec<usize>,
    /// Scan poses relative to the map anchor.
    pub local_poses: Vec<Se3>,
    pub anchor_pose: Se3,
    pub ground_transform: Se3,
    pub origin_cell: [i64; 2],
    pub resolution: f64,
    pub partial: bool,
}

impl MapRecord {
    fn local_pose_pairs(&self) -> Vec<(usize, Se3)> {
        self.scan_indices.iter().copied().zip(self.local_poses.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MapCatalog {
    pub session_id: String,
    pub maps: Vec<MapRecord>,
}

impl MapCatalog {
    pub fn get(&self, index: u32) -> Option<&MapRecord> {
        self.maps
            .binary_search_by_key(&index, |m| m.index)
            .ok()
            .map(|i| &self.maps[i])
    }
}

/// Descriptor tree plus the map catalog needed to turn matches into
/// transforms. On disk the catalog sits next to the tree as `<file>.maps.json`.
#[derive(Debug, Clone, Default)]
pub struct Database {
    pub tree: Hbst,
    pub catalog: MapCatalog,
}

pub fn catalog_path(db: &Path) -> PathBuf {
    let mut s = db.as_os_str().to_owned();
    s.push(".maps.json");
    PathBuf::from(s)
}

impl Database {
    pub fn new(leaf_capacity: usize, session_id: &str) -> Self {
        Self {
            tree: Hbst::new(leaf_capacity),
            catalog: MapCatalog {
                session_id: session_id.to_string(),
                maps: Vec::new(),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        self.tree.save(std::io::BufWriter::new(file))?;
        fs::write(catalog_path(path), serde_json::to_string(&self.catalog)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tree = Hbst::load(std::io::BufReader::new(fs::File::open(path)?))?;
        let catalog: MapCatalog = serde_json::from_str(&fs::read_to_string(catalog_path(path))?)?;
        if let Some(m) = tree.maps().iter().find(|m| catalog.get(**m).is_none()) {
            return Err(Error::Malformed(format!("catalog lacks map {m}")));
        }
        Ok(Self { tree, catalog })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub ground: Duration,
    pub projection: Duration,
    pub features: Duration,
    pub query: Duration,
    pub verification: Duration,
}

/// A local map after ground alignment, projection and feature extraction.
#[derive(Debug, Clone)]
pub struct ProcessedMap {
    pub map: LocalMap,
    pub ground: Option<GroundSolveReport>,
    pub image: DensityImage,
    pub detected: usize,
    pub descriptors: Vec<BinaryDescriptor>,
    pub times: StageTimes,
}

impl ProcessedMap {
    pub fn record(&self) -> MapRecord {
        MapRecord {
            index: self.map.index,
            scan_indices: self.map.scan_indices.clone(),
            local_poses: self.map.local_scan_poses(),
            anchor_pose: self.map.anchor_pose,
            ground_transform: self.map.ground_transform,
            origin_cell: self.image.origin_cell,
            resolution: self.image.resolution,
            partial: self.map.partial,
        }
    }
}

pub fn process_map(map: LocalMap, config: &PipelineConfig) -> Result<ProcessedMap> {
    let index = map.index;
    let mut times = StageTimes::default();
    let t = Instant::now();
    let (map, ground) = if config.ground_alignment {
        let (m, r) = align_ground(map, &config.ground).map_err(|e| e.at_stage(index, "ground alignment"))?;
        (m, Some(r))
    } else {
        (map, None)
    };
    times.ground = t.elapsed();

    let t = Instant::now();
    let image = project(&map, config.bev_resolution).map_err(|e| e.at_stage(index, "projection"))?;
    times.projection = t.elapsed();

    let t = Instant::now();
    let extraction = detect_and_describe(&image, &config.features, index);
    let detected = extraction.descriptors.len();
    let descriptors = if config.prune {
        prune_self_similar(&extraction.descriptors, config.tau_pr)
    } else {
        extraction.descriptors
    };
    times.features = t.elapsed();
    debug!(
        "map {index}: {} points, {}x{} image, {detected} features, {} kept",
        map.len(),
        image.width,
        image.height,
        descriptors.len()
    );
    Ok(ProcessedMap {
        map,
        ground,
        image,
        detected,
        descriptors,
        times,
    })
}

/// Queries `db` with a processed map and verifies every vote. With
/// `in_session` the recent-map exclusion applies.
pub fn detect_closures(
    pm: &mut ProcessedMap,
    db: &Database,
    config: &PipelineConfig,
    in_session: bool,
) -> Vec<(LoopClosure, Vec<ScanClosure>)> {
    let t = Instant::now();
    let exclude = in_session.then_some(config.exclude_recent);
    let votes = if db.tree.is_empty() {
        Vec::new()
    } else {
        db.tree.query(&pm.descriptors, config.tau_match, exclude)
    };
    pm.times.query = t.elapsed();

    let t = Instant::now();
    let query_poses: Vec<(usize, Se3)> = pm
        .map
        .scan_indices
        .iter()
        .copied()
        .zip(pm.map.local_scan_poses())
        .collect();
    let mut out = Vec::new();
    for vote in votes {
        if vote.pairs.len() < config.ransac.min_inliers.max(2) {
            continue;
        }
        let Some(reference) = db.catalog.get(vote.reference_map) else {
            continue;
        };
        let cand = ClosureCandidate {
            vote,
            resolution: config.bev_resolution,
            query_origin: pm.image.origin_cell,
            reference_origin: reference.origin_cell,
        };
        if let Some(c) = ransac_verify(&cand, &config.ransac, &pm.map.ground_transform, &reference.ground_transform) {
            let scans = expand_to_scans(&c, &query_poses, &reference.local_pose_pairs(), config.tau_d);
            out.push((c, scans));
        }
    }
    pm.times.verification = t.elapsed();
    out
}

#[derive(Debug, Clone, Default)]
pub struct SessionOutput {
    pub maps: Vec<MapRecord>,
    pub closures: Vec<LoopClosure>,
    pub scan_closures: Vec<ScanClosure>,
    /// Database holding every map of this session (left empty when querying
    /// a foreign database).
    pub database: Database,
    pub times: Vec<StageTimes>,
    pub fitness: Vec<f64>,
    /// Anchor-frame points per map, kept when closure fitness is requested.
    pub map_points: Vec<Vec<Point3>>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Query this database instead of building one; nothing is inserted.
    pub reference: Option<&'a Database>,
    pub session_id: String,
    /// Write one PGM per map here.
    pub dump_bev: Option<PathBuf>,
    /// Keep map points to score the fitness of each closure.
    pub keep_points: bool,
}

/// Runs every stage over a scan stream.
pub fn run_scans<I>(scans: I, config: &PipelineConfig, opts: &RunOptions<'_>) -> Result<SessionOutput>
where
    I: IntoIterator<Item = Result<ScanRecord>>,
{
    config.validate()?;
    let mut out = SessionOutput {
        database: Database::new(config.leaf_capacity, &opts.session_id),
        ..Default::default()
    };
    if let Some(dir) = &opts.dump_bev {
        fs::create_dir_all(dir)?;
    }
    let scan_error = RefCell::new(None);
    let stream = scans.into_iter().map_while(|s| match s {
        Ok(s) => Some(s),
        Err(e) => {
            *scan_error.borrow_mut() = Some(e);
            None
        }
    });
    let local_maps = accumulate(stream, config.local_map)?;

    let cross_fitness_targets = opts.keep_points && opts.reference.is_none();
    for map in local_maps {
        if scan_error.borrow().is_some() {
            break;
        }
        let map = map?;
        let mut pm = process_map(map, config)?;
        if let Some(dir) = &opts.dump_bev {
            let f = fs::File::create(dir.join(format!("map_{:04}.pgm", pm.map.index)))?;
            pm.image.to_u8().write_pgm(std::io::BufWriter::new(f))?;
        }
        let (db, in_session) = match opts.reference {
            Some(r) => (r, false),
            None => (&out.database, true),
        };
        let found = detect_closures(&mut pm, db, config, in_session);
        let anchor_points = if opts.keep_points {
            pm.map.anchor_frame_points()
        } else {
            Vec::new()
        };
        for (c, scans) in found {
            info!(
                "closure {} -> {} with {} inliers, {} scan pairs",
                c.query_map,
                c.reference_map,
                c.inliers,
                scans.len()
            );
            if cross_fitness_targets {
                let target = FitnessTarget::new(&out.map_points[c.reference_map as usize], config.fitness_dist);
                out.fitness.push(target.fitness(&anchor_points, &c.t_qr.inverse()));
            }
            out.closures.push(c);
            out.scan_closures.extend(scans);
        }
        if opts.reference.is_none() {
            out.database
                .tree
                .insert(&pm.descriptors)
                .map_err(|e| e.at_stage(pm.map.index, "database insert"))?;
            out.database.catalog.maps.push(pm.record());
        }
        out.maps.push(pm.record());
        out.times.push(pm.times);
        out.map_points.push(anchor_points);
    }
    if let Some(e) = scan_error.into_inner() {
        return Err(e);
    }
    if out.maps.is_empty() {
        return Err(Error::InvalidParameter("session has no scans".into()));
    }
    Ok(out)
}

/// Reads every scan named by the manifest with its odometry pose.
pub fn manifest_scans(manifest: &SessionManifest) -> Result<impl Iterator<Item = Result<ScanRecord>>> {
    let files = manifest.scan_files()?;
    if files.is_empty() {
        return Err(Error::Manifest(format!(
            "no scans in {}",
            manifest.scan_directory.display()
        )));
    }
    let poses = read_poses(&manifest.pose_file)?;
    if poses.len() != files.len() {
        return Err(Error::Manifest(format!(
            "{} scans but {} poses",
            files.len(),
            poses.len()
        )));
    }
    Ok(files.into_iter().zip(poses).enumerate().map(|(index, (path, pose))| {
        Ok(ScanRecord {
            index,
            cloud: read_scan(&path)?.cloud,
            pose,
        })
    }))
}

pub fn run_session(manifest: &SessionManifest, config: &PipelineConfig, opts: &RunOptions<'_>) -> Result<SessionOutput> {
    let opts = RunOptions {
        session_id: manifest.session_id.clone(),
        ..opts.clone()
    };
    run_scans(manifest_scans(manifest)?, config, &opts)
}

/// Scans of one local map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapSpan {
    pub index: u32,
    pub scan_indices: Vec<usize>,
    pub partial: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ClosureRecord {
    pub query_map: u32,
    pub reference_map: u32,
    pub inliers: usize,
    pub t_qr: Se3,
}

/// What evaluation needs from a run; also recoverable from its CSV files.
#[derive(Debug, Clone, Default)]
pub struct Detections {
    pub maps: Vec<MapSpan>,
    pub closures: Vec<ClosureRecord>,
    pub scan_closures: Vec<ScanClosure>,
    /// Fitness of each closure, if scored.
    pub fitness: Vec<f64>,
}

impl SessionOutput {
    pub fn detections(&self) -> Detections {
        Detections {
            maps: self
                .maps
                .iter()
                .map(|m| MapSpan {
                    index: m.index,
                    scan_indices: m.scan_indices.clone(),
                    partial: m.partial,
                })
                .collect(),
            closures: self
                .closures
                .iter()
                .map(|c| ClosureRecord {
                    query_map: c.query_map,
                    reference_map: c.reference_map,
                    inliers: c.inliers,
                    t_qr: c.t_qr,
                })
                .collect(),
            scan_closures: self.scan_closures.clone(),
            fitness: self.fitness.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub references: usize,
    pub detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
    pub r_at_1: f64,
    pub f1_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub gamma: usize,
    pub closures: usize,
    pub scan_closures: usize,
    pub map: LevelMetrics,
    pub scan: LevelMetrics,
    pub mean_fitness: Option<f64>,
    #[serde(skip)]
    pub map_curve: Vec<PrPoint>,
    #[serde(skip)]
    pub scan_curve: Vec<PrPoint>,
    #[serde(skip)]
    pub map_references: BTreeSet<(usize, usize)>,
    #[serde(skip)]
    pub scan_references: BTreeSet<(usize, usize)>,
}

fn level<K: Ord + Clone>(detections: &[(K, usize)], refs: &BTreeSet<K>, gamma: usize) -> (LevelMetrics, Vec<PrPoint>) {
    let (tp, fp) = confusion_at(detections, refs, gamma);
    let mut m = LevelMetrics {
        references: refs.len(),
        detections: tp + fp,
        true_positives: tp,
        false_positives: fp,
        precision: if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 1.0 },
        recall: if refs.is_empty() { 0.0 } else { tp as f64 / refs.len() as f64 },
        ..Default::default()
    };
    let curve = pr_curve(detections, refs).unwrap_or_default();
    m.ap = average_precision(&curve);
    m.r_at_1 = recall_at_full_precision(&curve);
    m.f1_max = max_f1(&curve);
    (m, curve)
}

/// Local maps over a given partition, placed by `poses`.
pub fn rebuild_maps<F>(
    maps: &[MapSpan],
    poses: &[Se3],
    params: &LocalMapParams,
    mut load: F,
) -> Result<Vec<LocalMap>>
where
    F: FnMut(usize) -> Result<PointCloud>,
{
    let mut out = Vec::with_capacity(maps.len());
    for rec in maps {
        let mut params = *params;
        // Never cut early: the partition is given.
        params.tau_c = f64::MAX;
        let mut mapper = crate::local_map::LocalMapper::new(params)?;
        for &i in &rec.scan_indices {
            let pose = *poses.get(i).ok_or_else(|| Error::MissingPoses(vec![i]))?;
            mapper.push(ScanRecord {
                index: i,
                cloud: load(i)?,
                pose,
            })?;
        }
        let mut m = mapper.finish().expect("non-empty partition");
        m.index = rec.index;
        m.partial = rec.partial;
        out.push(m);
    }
    Ok(out)
}

/// Map- and scan-level metrics against references derived from `gt`.
///
/// Map pairs closer in index than `exclude_recent`, and pairs with a partial
/// map, are left out of the map-level references and detections since the
/// detector never reports them.
pub fn evaluate<F>(output: &Detections, gt: &[Se3], config: &PipelineConfig, mut load: F) -> Result<Metrics>
where
    F: FnMut(usize) -> Result<PointCloud>,
{
    let n_scans = output.maps.iter().map(|m| m.scan_indices.len()).sum::<usize>();
    if gt.len() < n_scans {
        return Err(Error::MissingPoses((gt.len()..n_scans).collect()));
    }
    let gamma = config.ransac.min_inliers;
    let gt_maps = rebuild_maps(&output.maps, gt, &config.local_map, &mut load)?;
    let partition: Vec<Vec<usize>> = output.maps.iter().map(|m| m.scan_indices.clone()).collect();
    let partial: BTreeSet<usize> = output.maps.iter().filter(|m| m.partial).map(|m| m.index as usize).collect();
    let eligible = |&(a, b): &(usize, usize)| {
        b - a > config.exclude_recent as usize && !partial.contains(&a) && !partial.contains(&b)
    };
    let map_refs: BTreeSet<(usize, usize)> = reference_map_closures(&gt_maps, &partition, config.map_overlap_dist)?
        .into_iter()
        .filter(eligible)
        .collect();
    let map_dets: Vec<((usize, usize), usize)> = output
        .closures
        .iter()
        .map(|c| (canonical(c.query_map as usize, c.reference_map as usize), c.inliers))
        .filter(|(k, _)| eligible(k))
        .collect();

    let poses: Vec<Option<Se3>> = gt.iter().map(|p| Some(*p)).collect();
    let mut ref_params = config.reference;
    ref_params.max_range = ref_params.max_range.min(config.local_map.max_range);
    let scan_refs = reference_scan_closures(&poses[..n_scans], &mut load, &ref_params)?.scan_pairs;
    let inliers_of = |q: u32, r: u32| {
        output
            .closures
            .iter()
            .find(|c| c.query_map == q && c.reference_map == r)
            .map_or(0, |c| c.inliers)
    };
    let scan_dets: Vec<((usize, usize), usize)> = output
        .scan_closures
        .iter()
        .map(|s| (canonical(s.query_scan, s.reference_scan), inliers_of(s.query_map, s.reference_map)))
        .collect();

    let (map, map_curve) = level(&map_dets, &map_refs, gamma);
    let (scan, scan_curve) = level(&scan_dets, &scan_refs, gamma);
    let mean_fitness = (!output.fitness.is_empty())
        .then(|| output.fitness.iter().sum::<f64>() / output.fitness.len() as f64);
    Ok(Metrics {
        gamma,
        closures: output.closures.len(),
        scan_closures: output.scan_closures.len(),
        map,
        scan,
        mean_fitness,
        map_curve,
        scan_curve,
        map_references: map_refs,
        scan_references: scan_refs,
    })
}

/// Fitness of every closure under its `t_qr`, on maps rebuilt from the
/// odometry poses the run used.
pub fn closure_fitness<F>(det: &Detections, odometry: &[Se3], config: &PipelineConfig, load: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<PointCloud>,
{
    let maps = rebuild_maps(&det.maps, odometry, &config.local_map, load)?;
    let find = |i: u32| {
        maps.iter()
            .find(|m| m.index == i)
            .ok_or_else(|| Error::Malformed(format!("closure names unknown map {i}")))
    };
    det.closures
        .iter()
        .map(|c| {
            let target = FitnessTarget::new(&find(c.reference_map)?.points, config.fitness_dist);
            Ok(target.fitness(&find(c.query_map)?.points, &c.t_qr.inverse()))
        })
        .collect()
}
