use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bevloop::bev::project;
use bevloop::config::PipelineConfig;
use bevloop::eval::ground_alignment_stress;
use bevloop::io::{read_poses, read_scan, write_session, SessionManifest};
use bevloop::local_map::accumulate;
use bevloop::report::{read_detections, write_metrics, write_outputs};
use bevloop::session::{closure_fitness, evaluate, manifest_scans, run_session, Database, RunOptions};
use bevloop::synth::{generate, planar_map, Layout, SensorSpec, SynthSpec, TrajectorySpec, WorldSpec};
use bevloop::{PointCloud, Se3};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "bevloop", version, about = "Loop closure detection on BEV density images of LiDAR local maps")]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect loop closures in one session, or against a saved database.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for CSV and JSON files.
        #[arg(long)]
        out: PathBuf,
        /// Query this database instead of the session's own maps.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Save the session's database here.
        #[arg(long)]
        save_db: Option<PathBuf>,
        /// Write one PGM image per local map into this directory.
        #[arg(long)]
        dump_bev: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Build a database from a reference session.
    BuildDb {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score the closures of an earlier run against ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding closures.csv, scan_closures.csv and maps.csv.
        #[arg(long)]
        closures: PathBuf,
        /// Where to write metrics; defaults to the closures directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Tilt synthetic planar maps and measure how well the ground solver
    /// levels them again.
    StressGround {
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60")]
        magnitudes: Vec<f64>,
        #[arg(long, default_value_t = 25)]
        trials: usize,
        #[arg(long, default_value_t = 4)]
        maps: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic session (scans, poses, ground truth, manifest).
    Synth(SynthArgs),
    /// Write the density image of every local map as PGM.
    DumpBev {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print the effective configuration.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set tau_c=50`. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut c = PipelineConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            c.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {o:?}");
            };
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Corridor,
    Bridge,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON spec; the flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "corridor")]
    layout: LayoutArg,
    /// Street length and driven distance per leg, meters.
    #[arg(long, default_value_t = 200.0)]
    length: f64,
    #[arg(long, default_value_t = 0.8)]
    step: f64,
    /// Drive once along the street instead of out and back.
    #[arg(long)]
    one_way: bool,
    #[arg(long, default_value_t = 40.0)]
    range: f64,
    /// Horizontal field of view in degrees; omit for 360°.
    #[arg(long)]
    hfov: Option<f64>,
    /// Peak roll and pitch, degrees.
    #[arg(long, default_value_t = 0.0)]
    oscillation: f64,
    #[arg(long, default_value_t = 1)]
    world_seed: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "synthetic")]
    session_id: String,
}

impl SynthArgs {
    fn spec(&self) -> Result<SynthSpec> {
        if let Some(path) = &self.spec {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
        }
        let trajectory = if self.one_way {
            TrajectorySpec::OneWay {
                start: 0.0,
                length: self.length,
                step: self.step,
                lane: 1.5,
            }
        } else {
            TrajectorySpec::OutAndBack {
                leg: self.length,
                step: self.step,
                lane: 1.5,
            }
        };
        Ok(SynthSpec {
            world: WorldSpec {
                layout: match self.layout {
                    LayoutArg::Corridor => Layout::Corridor,
                    LayoutArg::Bridge => Layout::Bridge,
                },
                length: self.length,
                seed: self.world_seed,
                ..WorldSpec::default()
            },
            trajectory,
            sensor: SensorSpec {
                max_range: self.range,
                horizontal_fov: self.hfov,
                oscillation: self.oscillation,
                ..SensorSpec::default()
            },
            seed: self.seed,
        })
    }
}

fn scan_loader(manifest: &SessionManifest) -> Result<impl FnMut(usize) -> bevloop::Result<PointCloud>> {
    let files = manifest.scan_files()?;
    Ok(move |i: usize| {
        let path = files.get(i).ok_or(bevloop::Error::MissingPoses(vec![i]))?;
        Ok(read_scan(path)?.cloud)
    })
}

fn ground_truth(manifest: &SessionManifest) -> Result<Option<Vec<Se3>>> {
    manifest
        .ground_truth_pose_file
        .as_deref()
        .map(|p| read_poses(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

fn cmd_run(
    manifest: &Path,
    out: &Path,
    db: Option<&Path>,
    save_db: Option<&Path>,
    dump_bev: Option<&Path>,
    config: &PipelineConfig,
) -> Result<()> {
    let manifest = SessionManifest::load(manifest)?;
    let reference = db
        .map(|p| Database::load(p).with_context(|| format!("loading database {}", p.display())))
        .transpose()?;
    let gt = ground_truth(&manifest)?;
    let score = gt.is_some() && reference.is_none();
    let opts = RunOptions {
        reference: reference.as_ref(),
        session_id: manifest.session_id.clone(),
        dump_bev: dump_bev.map(Path::to_path_buf),
        keep_points: score,
    };
    let output = run_session(&manifest, config, &opts)?;
    write_outputs(out, &output)?;
    fs::write(out.join("config.txt"), config.to_text())?;
    println!(
        "{} maps, {} closures, {} scan pairs -> {}",
        output.maps.len(),
        output.closures.len(),
        output.scan_closures.len(),
        out.display()
    );
    if let Some(path) = save_db {
        if reference.is_some() {
            warn!("--save-db ignored: a session queried against --db builds no database");
        } else {
            output.database.save(path)?;
            println!("database with {} descriptors -> {}", output.database.tree.len(), path.display());
        }
    }
    match gt {
        Some(gt) if score => {
            let metrics = evaluate(&output.detections(), &gt, config, scan_loader(&manifest)?)?;
            write_metrics(out, &metrics)?;
            print_metrics(&metrics);
        }
        Some(_) => info!("cross-session run: metrics skipped"),
        None => {}
    }
    Ok(())
}

fn print_metrics(m: &bevloop::Metrics) {
    for (name, l) in [("map", &m.map), ("scan", &m.scan)] {
        println!(
            "{name:>4}: P {:.3} R {:.3} AP {:.3} R@1 {:.3} F1 {:.3} ({} refs, {} detections)",
            l.precision, l.recall, l.ap, l.r_at_1, l.f1_max, l.references, l.detections
        );
    }
    if let Some(f) = m.mean_fitness {
        println!("mean closure fitness {f:.3}");
    }
}

fn cmd_build_db(manifest: &Path, db: &Path, config: &PipelineConfig) -> Result<()> {
    let manifest = SessionManifest::load(manifest)?;
    let output = run_session(&manifest, config, &RunOptions::default())?;
    output.database.save(db)?;
    println!(
        "{} maps, {} descriptors -> {}",
        output.database.catalog.maps.len(),
        output.database.tree.len(),
        db.display()
    );
    Ok(())
}

fn cmd_eval(manifest: &Path, closures: &Path, out: Option<&Path>, config: &PipelineConfig) -> Result<()> {
    let manifest = SessionManifest::load(manifest)?;
    let Some(gt) = ground_truth(&manifest)? else {
        bail!("manifest has no ground_truth_pose_file");
    };
    let odometry = read_poses(&manifest.pose_file)?;
    let mut det = read_detections(closures).with_context(|| format!("reading {}", closures.display()))?;
    det.fitness = closure_fitness(&det, &odometry, config, scan_loader(&manifest)?)?;
    let metrics = evaluate(&det, &gt, config, scan_loader(&manifest)?)?;
    let out = out.unwrap_or(closures);
    write_metrics(out, &metrics)?;
    print_metrics(&metrics);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_stress(
    magnitudes: &[f64],
    trials: usize,
    maps: usize,
    noise: f64,
    seed: u64,
    csv: Option<&Path>,
    config: &PipelineConfig,
) -> Result<()> {
    if maps == 0 || trials == 0 {
        bail!("--maps and --trials must be positive");
    }
    let clouds: Vec<_> = (0..maps)
        .map(|k| planar_map(30.0, 0.5, noise, k % 2 == 1, seed.wrapping_add(k as u64)))
        .collect();
    let rows = ground_alignment_stress(&clouds, magnitudes, trials, &config.ground, seed);
    println!("{:>8} {:>12} {:>12} {:>7} {:>8}", "tilt°", "mean err°", "max err°", "solves", "failures");
    for r in &rows {
        println!(
            "{:>8.1} {:>12.4} {:>12.4} {:>7} {:>8}",
            r.magnitude_deg, r.mean_error_deg, r.max_error_deg, r.solves, r.failures
        );
    }
    if let Some(path) = csv {
        let mut w = csv::Writer::from_path(path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = args.spec()?;
    let (_, session) = generate(&spec)?;
    fs::create_dir_all(&args.out)?;
    write_session(&args.out, &args.session_id, &session)?;
    fs::write(args.out.join("spec.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
    println!(
        "{} scans -> {}",
        session.scans.len(),
        args.out.join("manifest.json").display()
    );
    Ok(())
}

fn cmd_dump_bev(manifest: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    let manifest = SessionManifest::load(manifest)?;
    fs::create_dir_all(out)?;
    let mut error = None;
    let scans = manifest_scans(&manifest)?.map_while(|s| s.map_err(|e| error = Some(e)).ok());
    let mut n = 0;
    for map in accumulate(scans, config.local_map)? {
        let mut map = map?;
        if config.ground_alignment {
            map = bevloop::ground::align_ground(map, &config.ground)?.0;
        }
        let img = project(&map, config.bev_resolution)?;
        let path = out.join(format!("map_{:04}.pgm", map.index));
        img.to_u8().write_pgm(BufWriter::new(fs::File::create(&path)?))?;
        n += 1;
    }
    if let Some(e) = error {
        return Err(e.into());
    }
    println!("{n} images -> {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match &cli.command {
        Command::Run {
            manifest,
            out,
            db,
            save_db,
            dump_bev,
            config,
        } => cmd_run(
            manifest,
            out,
            db.as_deref(),
            save_db.as_deref(),
            dump_bev.as_deref(),
            &config.load()?,
        ),
        Command::BuildDb { manifest, db, config } => cmd_build_db(manifest, db, &config.load()?),
        Command::Eval {
            manifest,
            closures,
            out,
            config,
        } => cmd_eval(manifest, closures, out.as_deref(), &config.load()?),
        Command::StressGround {
            magnitudes,
            trials,
            maps,
            noise,
            seed,
            csv,
            config,
        } => cmd_stress(magnitudes, *trials, *maps, *noise, *seed, csv.as_deref(), &config.load()?),
        Command::Synth(args) => cmd_synth(args),
        Command::DumpBev { manifest, out, config } => cmd_dump_bev(manifest, out, &config.load()?),
        Command::Config { config } => {
            print!("{}", config.load()?.to_text());
            Ok(())
        }
    }
}
