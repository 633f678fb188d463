//! `progsplat`: order, chunk, render, evaluate and serve splat scenes.
//!
//! Every command prints a one-line JSON summary on stdout when it succeeds.
//! Failures print one line `{"error": {"kind": ..., "message": ...}}` on
//! stderr and exit with status 1 (2 for usage errors).

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use progsplat::cameras::{apply_split, cameras_to_json, colmap_to_records, parse_camera_records, CameraRecord};
use progsplat::chunk::{decode_stream, make_chunks, read_chunk_dir, write_chunk_dir, ChunkOptions, ChunkSizes, Encoding};
use progsplat::eval::{evaluate_curve, EvalOptions, EvalReport};
use progsplat::fixtures;
use progsplat::model::{Camera, Scene};
use progsplat::ordering::{
    order_antimatter, order_by_contribution, order_center_distance, order_object, prioritize_frustum, read_mask,
    refine_octree, tally_contributions, BaseStrategy, FrustumParams, Ordering, Strategy,
};
use progsplat::raster::{render, RenderOptions, DEFAULT_TOP_K};
use progsplat::{load_ply, write_ply, Exec};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "progsplat", version, about = "Contribution-ordered progressive streaming of Gaussian splat scenes")]
struct Cli {
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute a splat priority ordering.
    Order(OrderArgs),
    /// Cut an ordered scene into progressive chunks.
    Chunk(ChunkArgs),
    /// Render a scene or a decoded chunk prefix to PNG.
    Render(RenderArgs),
    /// Quality of ordering prefixes against the full scene.
    Eval(EvalArgs),
    /// Stream chunked scenes over HTTP.
    Serve(ServeArgs),
    /// Convert a COLMAP text model to a cameras JSON file.
    Cameras(CamerasArgs),
    /// Write a synthetic scene and matching cameras.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
struct OrderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Training cameras; required by the contribution-based strategies.
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Restrict the cameras to the image names listed in this file.
    #[arg(long)]
    split: Option<PathBuf>,
    /// contribution, contribution-octree, antimatter, center or object.
    #[arg(long, default_value = "contribution")]
    strategy: Strategy,
    /// Contributions tracked per pixel.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    #[arg(long, default_value_t = progsplat::ordering::DEFAULT_OCTREE_DEPTH)]
    octree_depth: u32,
    /// Splat indices of the object (object strategy).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Reference point of the center strategy.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.0, 0.0])]
    center: Vec<f64>,
    /// Re-prioritize for this camera afterwards.
    #[arg(long)]
    frustum_camera: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    camera_index: usize,
    #[arg(long, default_value_t = progsplat::ordering::DEFAULT_MARGIN)]
    margin: f64,
    #[arg(long, default_value_t = progsplat::ordering::DEFAULT_IN_FRACTION)]
    in_fraction: f64,
    /// Frustum block length; defaults to 1% of the scene.
    #[arg(long)]
    granularity: Option<usize>,
    /// Also write the per-splat contribution scores as JSON.
    #[arg(long)]
    tally_out: Option<PathBuf>,
    /// Write JSON instead of the binary ordering format.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ChunkArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    ordering: PathBuf,
    /// Relative chunk sizes in percent; defaults to 0.2,0.3,0.5,1,3,5,10,80.
    #[arg(long, value_delimiter = ',', conflicts_with = "counts")]
    sizes: Option<Vec<f64>>,
    /// Absolute chunk sizes in splats.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    /// f32, q8 or q16.
    #[arg(long, default_value = "f32")]
    encoding: Encoding,
    /// Sort splats inside each chunk along a Morton curve.
    #[arg(long)]
    morton: bool,
    /// Scene id recorded in the manifest; defaults to the PLY file stem.
    #[arg(long)]
    scene_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long, conflicts_with = "chunks", required_unless_present = "chunks")]
    scene: Option<PathBuf>,
    /// Chunk directory written by `chunk`.
    #[arg(long)]
    chunks: Option<PathBuf>,
    /// Number of chunks to decode, or `all`.
    #[arg(long, default_value = "all", requires = "chunks")]
    prefix: String,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long, default_value_t = 0)]
    camera_index: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.0, 0.0])]
    background: Vec<f32>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the float image (`RGBF` header, little-endian f32).
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    /// Evaluate only on the image names listed in this file.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    orderings: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0])]
    percents: Vec<f64>,
    #[arg(long, default_value = "f32")]
    encoding: Encoding,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.0, 0.0])]
    background: Vec<f32>,
    /// `.csv` or `.json`; the JSON report goes to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// gnuplot data file with one block per ordering.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// TOML file with `listen`, `scene_dir` and `cache_size`; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long)]
    listen: Option<std::net::SocketAddr>,
    #[arg(long)]
    cache_size: Option<usize>,
}

#[derive(Debug, Args)]
struct CamerasArgs {
    /// Directory holding `cameras.txt` and `images.txt`.
    #[arg(long)]
    colmap: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FixtureKind {
    /// Uniform random splats in a cube, cameras around it.
    Random,
    /// A few large splats far from the origin dominate the views.
    Dominant,
    /// Small splats close to the cameras hide large ones behind them.
    Occluded,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(long, value_enum)]
    kind: FixtureKind,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Dominant or front splat count.
    #[arg(long, default_value_t = 5)]
    special: usize,
    /// Views of the random kind.
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 48)]
    height: u32,
    #[arg(long)]
    out_scene: PathBuf,
    #[arg(long)]
    out_cameras: PathBuf,
}

struct CliError {
    kind: &'static str,
    message: String,
}

type Result<T> = std::result::Result<T, CliError>;

fn fail(kind: &'static str, message: impl Display) -> CliError {
    CliError { kind, message: message.to_string() }
}

trait Context<T> {
    fn kind(self, kind: &'static str) -> Result<T>;
}

impl<T, E: Display> Context<T> for std::result::Result<T, E> {
    fn kind(self, kind: &'static str) -> Result<T> {
        self.map_err(|e| fail(kind, e))
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| fail("io", format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| fail("io", format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| fail("io", format!("{}: {e}", path.display())))
}

fn load_scene(path: &Path) -> Result<Scene> {
    load_ply(&read(path)?).map_err(|e| fail("ply", format!("{}: {e}", path.display())))
}

fn load_records(path: &Path, split: Option<&Path>) -> Result<Vec<CameraRecord>> {
    let records = parse_camera_records(&read_text(path)?).kind("camera")?;
    match split {
        Some(s) => Ok(apply_split(&records, &read_text(s)?)),
        None => Ok(records),
    }
}

fn load_cameras(path: &Path, split: Option<&Path>) -> Result<Vec<Camera>> {
    let cams: Vec<Camera> =
        load_records(path, split)?.iter().map(CameraRecord::to_camera).collect::<std::result::Result<_, _>>().kind("camera")?;
    if cams.is_empty() {
        return Err(fail("camera", format!("{}: no cameras selected", path.display())));
    }
    Ok(cams)
}

fn load_camera(path: &Path, index: usize) -> Result<Camera> {
    let cams = load_cameras(path, None)?;
    let n = cams.len();
    cams.into_iter().nth(index).ok_or_else(|| fail("camera", format!("camera index {index} out of range ({n} cameras)")))
}

fn triple<T: Copy>(v: &[T], flag: &str) -> Result<[T; 3]> {
    <[T; 3]>::try_from(v).map_err(|_| fail("usage", format!("--{flag} takes three comma-separated values")))
}

fn order(args: &OrderArgs, exec: Exec) -> Result<serde_json::Value> {
    let scene = load_scene(&args.scene)?;
    let tally = match args.strategy.base {
        BaseStrategy::Contribution | BaseStrategy::ContributionOctree | BaseStrategy::Object => {
            let path = args.cameras.as_deref().ok_or_else(|| fail("usage", "--cameras is required for this strategy"))?;
            let cams = load_cameras(path, args.split.as_deref())?;
            Some(tally_contributions(&scene, &cams, args.k, exec).kind("ordering")?)
        }
        _ => None,
    };
    if let (Some(path), Some(t)) = (&args.tally_out, &tally) {
        write(path, serde_json::to_string(t).kind("io")?)?;
    }
    let mut extra = json!({});
    let mut ordering = match args.strategy.base {
        BaseStrategy::Contribution => order_by_contribution(tally.as_ref().unwrap()),
        BaseStrategy::ContributionOctree => refine_octree(&scene, tally.as_ref().unwrap(), args.octree_depth),
        BaseStrategy::Antimatter => order_antimatter(&scene),
        BaseStrategy::CenterDistance => order_center_distance(&scene, triple(&args.center, "center")?),
        BaseStrategy::Object => {
            let path = args.mask.as_deref().ok_or_else(|| fail("usage", "--mask is required for the object strategy"))?;
            let mask = read_mask(&read_text(path)?).kind("mask")?;
            let (o, total) = order_object(tally.as_ref().unwrap(), &mask).kind("mask")?;
            extra = json!({ "object_contribution": total });
            o
        }
    };
    if args.strategy.frustum && args.frustum_camera.is_none() {
        return Err(fail("usage", "+frustum needs --frustum-camera"));
    }
    if let Some(path) = &args.frustum_camera {
        let cam = load_camera(path, args.camera_index)?;
        let granularity = args.granularity.unwrap_or((scene.count() / 100).max(1));
        let params = FrustumParams { margin: args.margin, in_fraction: args.in_fraction, granularity };
        ordering = prioritize_frustum(&ordering, &scene, &cam, params);
    }
    let bytes = if args.json { ordering.to_json().into_bytes() } else { ordering.to_bytes() };
    write(&args.out, bytes)?;
    let mut summary = json!({
        "command": "order",
        "strategy": ordering.strategy.to_string(),
        "count": ordering.len(),
        "out": args.out,
    });
    summary.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    Ok(summary)
}

fn chunk(args: &ChunkArgs, exec: Exec) -> Result<serde_json::Value> {
    let scene = load_scene(&args.scene)?;
    let ordering = Ordering::from_file_bytes(&read(&args.ordering)?).kind("ordering")?;
    ordering.validate(scene.count()).kind("ordering")?;
    let sizes = match (&args.counts, &args.sizes) {
        (Some(c), _) => ChunkSizes::Counts(c.clone()),
        (None, Some(s)) => ChunkSizes::Fractions(s.clone()),
        (None, None) => ChunkSizes::default_schedule(),
    };
    let id = args.scene_id.clone().unwrap_or_else(|| {
        args.scene.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into())
    });
    let opts = ChunkOptions { encoding: args.encoding, morton: args.morton, exec };
    let (manifest, chunks) = make_chunks(&id, &scene, &ordering, &sizes, &opts).kind("chunk")?;
    write_chunk_dir(&args.out, &manifest, &chunks).kind("io")?;
    Ok(json!({
        "command": "chunk",
        "scene_id": id,
        "chunks": manifest.chunks.len(),
        "counts": manifest.chunks.iter().map(|c| c.count).collect::<Vec<_>>(),
        "bytes": manifest.chunks.iter().map(|c| c.byte_size).sum::<usize>(),
        "out": args.out,
    }))
}

fn render_cmd(args: &RenderArgs, exec: Exec) -> Result<serde_json::Value> {
    let scene = match (&args.scene, &args.chunks) {
        (Some(path), _) => load_scene(path)?,
        (None, Some(dir)) => {
            let (manifest, chunks) = read_chunk_dir(dir).kind("chunk")?;
            let m = match args.prefix.as_str() {
                "all" => chunks.len(),
                s => s.parse::<usize>().map_err(|_| fail("usage", format!("--prefix must be a number or `all`, got `{s}`")))?,
            };
            if m > chunks.len() {
                return Err(fail("usage", format!("--prefix {m} exceeds the {} available chunks", chunks.len())));
            }
            let parts: Vec<(usize, &[u8])> = chunks[..m].iter().enumerate().map(|(i, c)| (i, c.as_slice())).collect();
            decode_stream(&manifest, &parts).kind("chunk")?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let cam = load_camera(&args.camera, args.camera_index)?;
    let opts = RenderOptions { background: triple(&args.background, "background")?, exec, ..Default::default() };
    let out = render(&scene, &cam, &opts).kind("render")?;
    out.image.save_png(&args.out).map_err(|e| fail("io", format!("{}: {e}", args.out.display())))?;
    if let Some(path) = &args.raw {
        let mut bytes = Vec::new();
        out.image.write_raw(&mut bytes).kind("io")?;
        write(path, bytes)?;
    }
    Ok(json!({
        "command": "render",
        "splats": scene.count(),
        "width": cam.width,
        "height": cam.height,
        "out": args.out,
    }))
}

fn eval(args: &EvalArgs, exec: Exec) -> Result<serde_json::Value> {
    let scene = load_scene(&args.scene)?;
    let cams = load_cameras(&args.cameras, args.split.as_deref())?;
    let orderings = args
        .orderings
        .iter()
        .map(|p| {
            let o = Ordering::from_file_bytes(&read(p)?).map_err(|e| fail("ordering", format!("{}: {e}", p.display())))?;
            o.validate(scene.count()).map_err(|e| fail("ordering", format!("{}: {e}", p.display())))?;
            Ok(o)
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = EvalOptions {
        encoding: args.encoding,
        render: RenderOptions { background: triple(&args.background, "background")?, exec, ..Default::default() },
    };
    let curves = evaluate_curve(&scene, &orderings, &cams, &args.percents, &opts).kind("eval")?;
    let report = EvalReport::new(args.encoding, cams.len(), curves);
    if let Some(path) = &args.gnuplot {
        write(path, report.to_gnuplot())?;
    }
    match &args.report {
        Some(path) if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => write(path, report.to_csv())?,
        Some(path) => write(path, report.to_json())?,
        None => {}
    }
    serde_json::to_value(&report).kind("io")
}

fn serve(args: &ServeArgs, exec: Exec) -> Result<serde_json::Value> {
    let mut config = match &args.config {
        Some(path) => progsplat_server::ServerConfig::from_toml(&read_text(path)?).kind("config")?,
        None => progsplat_server::ServerConfig::default(),
    };
    if let Some(d) = &args.dir {
        config.scene_dir = d.clone();
    }
    if let Some(l) = args.listen {
        config.listen = l;
    }
    if let Some(c) = args.cache_size {
        config.cache_size = c;
    }
    let mut runtime = tokio::runtime::Builder::new_multi_thread();
    if exec == Exec::Sequential {
        runtime.worker_threads(1);
    }
    let runtime = runtime.enable_all().build().kind("io")?;
    runtime.block_on(progsplat_server::serve(config.clone())).kind("server")?;
    Ok(json!({ "command": "serve", "listen": config.listen.to_string() }))
}

fn cameras(args: &CamerasArgs) -> Result<serde_json::Value> {
    let cams = read_text(&args.colmap.join("cameras.txt"))?;
    let images = read_text(&args.colmap.join("images.txt"))?;
    let mut records = colmap_to_records(&cams, &images).kind("camera")?;
    if let Some(s) = &args.split {
        records = apply_split(&records, &read_text(s)?);
    }
    write(&args.out, cameras_to_json(&records))?;
    Ok(json!({ "command": "cameras", "count": records.len(), "out": args.out }))
}

fn fixture(args: &FixtureArgs) -> Result<serde_json::Value> {
    let (scene, cams) = match args.kind {
        FixtureKind::Random => (
            fixtures::random_scene(args.seed, args.count),
            fixtures::random_cameras(args.seed, args.views, args.width, args.height),
        ),
        FixtureKind::Dominant => fixtures::dominant_splat_scene(args.seed, args.count, args.special),
        FixtureKind::Occluded => fixtures::occluded_giants_scene(args.seed, args.count, args.special),
    };
    write(&args.out_scene, write_ply(&scene, None, None).kind("ply")?)?;
    let records: Vec<CameraRecord> =
        cams.iter().enumerate().map(|(i, c)| CameraRecord::from_camera(i as u64, &format!("view_{i:03}"), c)).collect();
    write(&args.out_cameras, cameras_to_json(&records))?;
    Ok(json!({ "command": "fixture", "splats": scene.count(), "cameras": cams.len() }))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match &cli.command {
        Command::Order(a) => order(a, exec),
        Command::Chunk(a) => chunk(a, exec),
        Command::Render(a) => render_cmd(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Serve(a) => serve(a, exec),
        Command::Cameras(a) => cameras(a),
        Command::Fixture(a) => fixture(a),
    }
}

fn print_error(e: &CliError) {
    eprintln!("{}", json!({ "error": { "kind": e.kind, "message": e.message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            print_error(&fail("usage", first));
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { tracing_subscriber::filter::LevelFilter::INFO } else { tracing_subscriber::filter::LevelFilter::WARN };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).init();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            print_error(&e);
            ExitCode::FAILURE
        }
    }
}
