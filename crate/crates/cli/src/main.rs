//! `surgedeck`: batch front end. Machine-readable results go to stdout as
//! one JSON document; diagnostics go to stderr. Usage errors exit with 2,
//! runtime errors with 1 after printing `{"error", "detail"}`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use surgedeck_core::config::EngineConfig;
use surgedeck_core::displaywall::{layout_report, DisplayLayout};
use surgedeck_core::engine::{Engine, EngineError};
use surgedeck_core::geom::{Aabb2, CameraPose, Poi, Vec2, Vec3};
use surgedeck_core::ingest::{load_scenario, ScenarioManifest};
use surgedeck_core::meshgen::{displace_mesh, export_mesh, tiles_json, ExportFormat, MeshMeta, MeshVertex, SurfaceMesh};
use surgedeck_core::pack::{read_pack, write_pack};
use surgedeck_core::viewplan::{objective, pso_minimize, ObjectiveWeights, ViewPlan};

#[derive(Debug, Parser)]
#[command(name = "surgedeck", version, about = "Flood surface reconstruction, meshing and view planning")]
struct Cli {
    /// Engine configuration JSON overriding the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Obj,
    Ply,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validates a manifest and writes a binary scenario pack.
    Ingest {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes the displaced water mesh of one timepoint.
    MeshExport {
        pack: PathBuf,
        #[arg(long, default_value_t = 0)]
        t: usize,
        /// Depth cap on the LoD cut.
        #[arg(long)]
        lod: Option<u8>,
        /// `minx,miny,maxx,maxy`
        #[arg(long)]
        bbox: Option<String>,
        /// `x,y,z,yaw,pitch`; without it every cell is meshed flat.
        #[arg(long)]
        camera: Option<String>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        anim_time: f64,
        /// Output file; JSON tiles go to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wave displacement and normal at one surface point.
    WaveSample {
        pack: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, allow_negative_numbers = true)]
        y: f64,
        #[arg(long, default_value_t = 0)]
        t: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        anim_time: f64,
        #[arg(long)]
        cascade_seed: Option<u64>,
    },
    /// Viewpoints covering a POI set plus the path through them.
    PlanViews {
        pack: PathBuf,
        #[arg(long)]
        pois: PathBuf,
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Path through given viewpoints (`{"viewpoints": [...]}` or a bare list).
    PlanPath {
        pack: PathBuf,
        #[arg(long)]
        viewpoints: PathBuf,
    },
    /// Display layout checks.
    Layout {
        #[command(subcommand)]
        action: LayoutAction,
    },
    /// Timings of the main stages.
    Bench {
        pack: PathBuf,
        #[arg(long, default_value_t = 0)]
        t: usize,
        /// Random interpolation probes.
        #[arg(long, default_value_t = 100_000)]
        points: usize,
    },
    /// Runs the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = ".")]
        data_dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum LayoutAction {
    /// Per-screen frustum report.
    Validate {
        layout: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        near: f64,
        #[arg(long, default_value_t = 20_000.0)]
        far: f64,
    },
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    detail: String,
}

impl CliError {
    fn new(kind: &'static str, detail: impl ToString) -> Self {
        Self { kind, detail: detail.to_string() }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        use surgedeck_core::viewplan::{PathError, PlanError};
        let kind = match &e {
            EngineError::Timepoint { .. } => "TimepointOutOfRange",
            EngineError::Heightfield(_) => "Heightfield",
            EngineError::Mesh(_) => "Mesh",
            EngineError::Plan(PlanError::Unreachable { .. }) => "Unreachable",
            EngineError::Plan(_) => "Plan",
            EngineError::Path(PathError::PathBlocked(_)) => "PathBlocked",
            EngineError::Path(_) => "Path",
        };
        Self::new(kind, e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::new("InvalidInput", format!("{}: {e}", path.display())))
}

fn numbers<const N: usize>(name: &str, text: &str) -> Result<[f64; N]> {
    let bad = || CliError::new("InvalidInput", format!("--{name} expects {N} comma-separated numbers, got {text:?}"));
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(bad());
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| bad())?;
        if !o.is_finite() {
            return Err(bad());
        }
    }
    Ok(out)
}

fn engine(pack: &Path, config: &EngineConfig) -> Result<Engine> {
    let scenario = read_pack(pack).map_err(|e| CliError::new("Pack", e))?;
    Ok(Engine::new(scenario, config.clone()))
}

fn print(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| CliError::new("Internal", e))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => EngineConfig::from_file(p).map_err(|e| CliError::new("Config", e))?,
        None => EngineConfig::default(),
    };
    match cli.command {
        Command::Ingest { manifest, out } => {
            let m = ScenarioManifest::from_file(&manifest).map_err(|e| CliError::new(e.kind(), e))?;
            let scenario = load_scenario(&m).map_err(|e| CliError::new(e.kind(), e))?;
            write_pack(&scenario, &out).map_err(|e| CliError::new("Pack", e))?;
            let summary = Engine::new(scenario, config).summary();
            print(&json!({ "pack": out, "summary": summary }))
        }
        Command::MeshExport { pack, t, lod, bbox, camera, format, anim_time, out } => {
            let e = engine(&pack, &config)?;
            let mut req = e.mesh_request();
            req.lod = lod;
            if let Some(b) = bbox {
                let [x0, y0, x1, y1] = numbers::<4>("bbox", &b)?;
                req.bbox = Some(Aabb2 { min: Vec2::new(x0, y0), max: Vec2::new(x1, y1) });
            }
            if let Some(c) = camera {
                let [x, y, z, yaw, pitch] = numbers::<5>("camera", &c)?;
                req.camera = Some(CameraPose::new(Vec3::new(x, y, z), yaw, pitch));
            }
            req.t_anim = anim_time;
            let mesh = e.mesh(t, &req)?;
            let format = match format {
                Format::Obj => ExportFormat::Obj,
                Format::Ply => ExportFormat::Ply,
                Format::Json => ExportFormat::JsonTiles,
            };
            match out {
                Some(path) => {
                    export_mesh(&mesh, format, &path).map_err(|e| CliError::new("Io", e))?;
                    print(&json!({
                        "out": path,
                        "format": format,
                        "vertices": mesh.vertices.len(),
                        "triangles": mesh.triangles.len(),
                        "tiles": mesh.patches.len(),
                    }))
                }
                None if format == ExportFormat::JsonTiles => print(&tiles_json(&mesh)),
                None => Err(CliError::new("InvalidInput", "--out is required for obj and ply")),
            }
        }
        Command::WaveSample { pack, x, y, t, anim_time, cascade_seed } => {
            if let Some(seed) = cascade_seed {
                config.cascade.seed = seed;
            }
            let e = engine(&pack, &config)?;
            let tree = e.tree(t)?;
            let p = Vec2::new(x, y);
            let z = tree.interpolate_height(p, tree.max_depth()).map_err(|err| CliError::new("OutOfBounds", err))?;
            let rest = Vec3::new(x, y, z);
            let point = SurfaceMesh {
                vertices: vec![MeshVertex { position: rest, normal: Vec3::z(), hidden: false }],
                triangles: vec![],
                patches: vec![],
                meta: MeshMeta { timepoint: t, policy: "point".into(), camera: None },
            };
            let cascade = config.cascade.build();
            let v = displace_mesh(&point, &tree, &cascade, &e.scenario().dem, anim_time).vertices[0];
            print(&json!({
                "rest": rest,
                "position": v.position,
                "displacement": v.position - rest,
                "normal": v.normal,
                "hidden": v.hidden,
                "cascade": cascade,
            }))
        }
        Command::PlanViews { pack, pois, layout, weights, seed } => {
            let e = engine(&pack, &config)?;
            let mut pois: Vec<Poi> = read_json(&pois)?;
            pois.sort_by_key(|p| p.id);
            let layout = match layout {
                Some(p) => DisplayLayout::load(&p).map_err(|err| CliError::new("Layout", err))?,
                None => DisplayLayout::single(1.6, 0.9, 1.0),
            };
            let weights: ObjectiveWeights = match weights {
                Some(p) => read_json(&p)?,
                None => config.weights.clone(),
            };
            let plan = e.plan_tour(&pois, &layout, &weights, seed.unwrap_or(config.pso.seed))?;
            print(&plan)
        }
        Command::PlanPath { pack, viewpoints } => {
            let e = engine(&pack, &config)?;
            let doc: Value = read_json(&viewpoints)?;
            let doc = if doc.is_array() { json!({ "viewpoints": doc }) } else { doc };
            let plan: ViewPlan = serde_json::from_value(doc).map_err(|err| CliError::new("InvalidInput", err))?;
            print(&e.plan_path(&plan.viewpoints)?)
        }
        Command::Layout { action: LayoutAction::Validate { layout, near, far } } => {
            let layout = DisplayLayout::load(&layout).map_err(|err| CliError::new("Layout", err))?;
            let report = layout_report(&layout, near, far).map_err(|err| CliError::new("Layout", err))?;
            print(&json!({ "valid": true, "screens": report }))
        }
        Command::Bench { pack, t, points } => bench(&pack, &config, t, points),
        Command::Serve { port, data_dir } => {
            surgedeck_service::init_logging();
            let cfg = surgedeck_service::ServiceConfig { port, data_dir, engine: config, ..Default::default() };
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("Io", e))?;
            rt.block_on(surgedeck_service::serve(cfg)).map_err(|e| CliError::new("Io", e))
        }
    }
}

fn bench(pack: &Path, config: &EngineConfig, t: usize, points: usize) -> Result<()> {
    let clock = Instant::now();
    let e = engine(pack, config)?;
    let load_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let tree = e.tree(t)?;
    let build_s = clock.elapsed().as_secs_f64();

    let b = tree.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probes: Vec<Vec2> = (0..points).map(|_| b.min + Vec2::new(rng.random_range(0.0..b.side), rng.random_range(0.0..b.side))).collect();
    let clock = Instant::now();
    let mut sampler = tree.sampler(tree.max_depth());
    let checksum: f64 = probes.iter().filter_map(|p| sampler.height(*p).ok()).sum();
    let interpolate_s = clock.elapsed().as_secs_f64();

    let c = b.center();
    let mut req = e.mesh_request();
    req.camera = Some(CameraPose::new(Vec3::new(c.x, c.y, 0.1 * b.side), 0.0, -0.5));
    let clock = Instant::now();
    let frontier = tree.select_lod_cut(req.camera.as_ref().expect("camera"), req.policy.near, req.policy.far);
    let mesh = surgedeck_core::meshgen::tessellate(&tree, &frontier, req.camera.as_ref().expect("camera"), None, &req.policy);
    let mesh_s = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let displaced = displace_mesh(&mesh, &tree, &req.cascade, &e.scenario().dem, 0.0);
    let displace_s = clock.elapsed().as_secs_f64();

    let ctx = surgedeck_core::viewplan::PlanContext::new(e.scenario(), &config.weights, config.planning.cell_size, config.planning.altitude);
    let poi = Poi { id: 0, position: Vec3::new(c.x, c.y, e.scenario().dem.height_at_clamped(c)), radius: 5.0 };
    let clock = Instant::now();
    let res = pso_minimize(
        |x| objective(&surgedeck_core::viewplan::PoseBounds::pose(x), &[poi], &config.weights, &ctx.grid, ctx.mask.as_ref()),
        &ctx.bounds.ranges(),
        &config.pso,
    );
    let pso_s = clock.elapsed().as_secs_f64();

    print(&json!({
        "load_s": load_s,
        "build_s": build_s,
        "nodes": tree.node_count(),
        "interpolate_s": interpolate_s,
        "interpolate_points": points,
        "interpolate_checksum": checksum,
        "mesh_s": mesh_s,
        "vertices": displaced.vertices.len(),
        "displace_s": displace_s,
        "pso_s": pso_s,
        "pso_evaluations": res.evaluations,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("surgedeck: {}", e.detail);
            println!("{}", json!({ "error": e.kind, "detail": e.detail }));
            ExitCode::from(1)
        }
    }
}
