//! CSV and JSON outputs of a session run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::closure::ScanClosure;
use crate::error::{Error, Result};
use crate::eval::PrPoint;
use crate::geometry::Se3;
use crate::session::{ClosureRecord, Detections, MapSpan, Metrics, SessionOutput};

#[derive(Serialize, Deserialize)]
struct ClosureRow {
    query_map: u32,
    ref_map: u32,
    inliers: usize,
    t00: f64,
    t01: f64,
    t02: f64,
    t03: f64,
    t10: f64,
    t11: f64,
    t12: f64,
    t13: f64,
    t20: f64,
    t21: f64,
    t22: f64,
    t23: f64,
    t30: f64,
    t31: f64,
    t32: f64,
    t33: f64,
}

#[derive(Serialize, Deserialize)]
struct MapRow {
    map: u32,
    first_scan: usize,
    last_scan: usize,
    scans: usize,
    partial: bool,
    origin_u: i64,
    origin_v: i64,
    ground_ms: f64,
    projection_ms: f64,
    features_ms: f64,
    query_ms: f64,
    verification_ms: f64,
}

#[derive(Serialize, Deserialize)]
struct ScanClosureRow {
    query_scan: usize,
    ref_scan: usize,
    query_map: u32,
    ref_map: u32,
    distance: f64,
}

impl ClosureRow {
    fn matrix(&self) -> [f64; 12] {
        [
            self.t00, self.t01, self.t02, self.t03, self.t10, self.t11, self.t12, self.t13, self.t20,
            self.t21, self.t22, self.t23,
        ]
    }
}

/// Version of the CSV and JSON layouts written here.
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

const CLOSURE_HEADER: [&str; 19] = [
    "query_map", "ref_map", "inliers", "t00", "t01", "t02", "t03", "t10", "t11", "t12", "t13", "t20",
    "t21", "t22", "t23", "t30", "t31", "t32", "t33",
];
const SCAN_CLOSURE_HEADER: [&str; 5] = ["query_scan", "ref_scan", "query_map", "ref_map", "distance"];
const MAP_HEADER: [&str; 12] = [
    "map", "first_scan", "last_scan", "scans", "partial", "origin_u", "origin_v", "ground_ms",
    "projection_ms", "features_ms", "query_ms", "verification_ms",
];
const PR_HEADER: [&str; 4] = ["gamma", "precision", "recall", "f1"];

/// CSV writer that emits the header even when no rows follow.
fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

/// Writes `closures.csv`, `scan_closures.csv` and `maps.csv` into `dir`.
pub fn write_outputs(dir: &Path, out: &SessionOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = writer(&dir.join("closures.csv"), &CLOSURE_HEADER)?;
    for c in &out.closures {
        let t = c.t_qr.to_row_major_4x4();
        w.serialize(ClosureRow {
            query_map: c.query_map,
            ref_map: c.reference_map,
            inliers: c.inliers,
            t00: t[0],
            t01: t[1],
            t02: t[2],
            t03: t[3],
            t10: t[4],
            t11: t[5],
            t12: t[6],
            t13: t[7],
            t20: t[8],
            t21: t[9],
            t22: t[10],
            t23: t[11],
            t30: t[12],
            t31: t[13],
            t32: t[14],
            t33: t[15],
        })?;
    }
    w.flush()?;

    let mut w = writer(&dir.join("scan_closures.csv"), &SCAN_CLOSURE_HEADER)?;
    for s in &out.scan_closures {
        w.serialize(ScanClosureRow {
            query_scan: s.query_scan,
            ref_scan: s.reference_scan,
            query_map: s.query_map,
            ref_map: s.reference_map,
            distance: s.distance,
        })?;
    }
    w.flush()?;

    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    let mut w = writer(&dir.join("maps.csv"), &MAP_HEADER)?;
    for (m, t) in out.maps.iter().zip(&out.times) {
        w.serialize(MapRow {
            map: m.index,
            first_scan: m.scan_indices[0],
            last_scan: *m.scan_indices.last().expect("non-empty map"),
            scans: m.scan_indices.len(),
            partial: m.partial,
            origin_u: m.origin_cell[0],
            origin_v: m.origin_cell[1],
            ground_ms: ms(t.ground),
            projection_ms: ms(t.projection),
            features_ms: ms(t.features),
            query_ms: ms(t.query),
            verification_ms: ms(t.verification),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pr_curve(path: &Path, curve: &[PrPoint]) -> Result<()> {
    let mut w = writer(path, &PR_HEADER)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.json`, `pr_curve.csv` (map level) and `pr_curve_scan.csv`.
pub fn write_metrics(dir: &Path, metrics: &Metrics) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_value(metrics)?;
    json["schema_version"] = OUTPUT_SCHEMA_VERSION.into();
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    write_pr_curve(&dir.join("pr_curve.csv"), &metrics.map_curve)?;
    write_pr_curve(&dir.join("pr_curve_scan.csv"), &metrics.scan_curve)?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Reads back what [`write_outputs`] wrote.
pub fn read_detections(dir: &Path) -> Result<Detections> {
    let maps = read_rows::<MapRow>(&dir.join("maps.csv"))?
        .into_iter()
        .map(|m| MapSpan {
            index: m.map,
            scan_indices: (m.first_scan..=m.last_scan).collect(),
            partial: m.partial,
        })
        .collect();
    let closures = read_rows::<ClosureRow>(&dir.join("closures.csv"))?
        .into_iter()
        .map(|c| {
            let raw = Se3::from_row_major_3x4(&c.matrix());
            let t_qr = Se3::new(*raw.rotation(), *raw.translation())
                .map_err(|e| Error::Malformed(format!("closure {} -> {}: {e}", c.query_map, c.ref_map)))?;
            Ok(ClosureRecord {
                query_map: c.query_map,
                reference_map: c.ref_map,
                inliers: c.inliers,
                t_qr,
            })
        })
        .collect::<Result<_>>()?;
    let scan_closures = read_rows::<ScanClosureRow>(&dir.join("scan_closures.csv"))?
        .into_iter()
        .map(|s| ScanClosure {
            query_map: s.query_map,
            reference_map: s.ref_map,
            query_scan: s.query_scan,
            reference_scan: s.ref_scan,
            distance: s.distance,
        })
        .collect();
    Ok(Detections {
        maps,
        closures,
        scan_closures,
        fitness: Vec::new(),
    })
}
