//! `vidindex` command-line tool.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid input, 4 internal
//! failure. Failures also print one `error kind=... message=...` line on
//! stderr.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use vidindex::config::Config;
use vidindex::detector::{load_precomputed, write_detections, Detector, FileDetector, Injection, OracleDetector};
use vidindex::frame_source::{open_directory, render_synthetic, write_frame, SceneSpec};
use vidindex::index_store::{storage_report, write_atomic, Index, CONFIG_FILE};
use vidindex::metrics::QueryType;
use vidindex::pipeline::{preprocess_video, run_query};
use vidindex::query::{reference_detections, IndexData, QueryResult, QuerySpec};
use vidindex::scenes;

#[derive(Parser)]
#[command(name = "vidindex", version, about = "Index videos once, answer detector queries cheaply")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene to frames, ground truth and detections.
    Synth(SynthArgs),
    /// Build an index from a frame directory.
    Preprocess(PreprocessArgs),
    /// Answer a query against an index using a detection file.
    Query(QueryArgs),
    /// Score a result file against reference detections.
    Evaluate(EvaluateArgs),
    /// Summarize an index's storage and chunk clustering.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Preset name (benchmark, rigid, deforming, two-regime) or scene file.
    #[arg(long)]
    scene: String,
    /// Output directory; receives frames/, scene.txt, truth.txt and
    /// detections.txt.
    #[arg(long)]
    out: PathBuf,
    /// Largest per-box dropout probability of the simulated detector.
    #[arg(long, default_value_t = 0.0, value_parser = probability)]
    dropout: f64,
    /// Box area at or above which no dropout happens.
    #[arg(long, default_value_t = 400.0)]
    area_ref: f64,
    /// Maximum coordinate jitter in pixels.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    inject_seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `preprocess.blobs.tolerance=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory of zero-padded frames (`000000.pgm`, `000001.png`, ...).
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, value_parser = positive)]
    fps: f64,
    /// Keep only this many frames per second before indexing.
    #[arg(long, value_parser = positive)]
    downsample: Option<f64>,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    #[arg(long, value_parser = positive)]
    chunk_seconds: Option<f64>,
    #[arg(long, value_parser = unit_interval)]
    coverage: Option<f64>,
    /// Write per-phase timing here.
    #[arg(long)]
    timing: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Detection file in the line-record wire format.
    #[arg(long)]
    detector: PathBuf,
    #[arg(long = "type", value_parser = parse_query_type)]
    query_type: QueryType,
    #[arg(long)]
    label: String,
    #[arg(long, value_parser = unit_interval)]
    target: f64,
    /// Result file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run report to write; also printed on stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Reference detections; adds measured accuracy to the report.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    #[arg(long)]
    timing: Option<PathBuf>,
    /// Config overrides apply on top of the config stored in the index.
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    result: PathBuf,
    /// Reference detection file.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_parser = open_unit_interval)]
    iou_threshold: Option<f64>,
    /// List the accuracy of every frame.
    #[arg(long)]
    per_frame: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    index: PathBuf,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn open_unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} is not positive"))
    }
}

fn parse_query_type(s: &str) -> Result<QueryType, String> {
    s.parse()
}

enum Failure {
    Usage(String),
    Input(String),
    Internal(String),
}

impl From<vidindex::Error> for Failure {
    fn from(e: vidindex::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn report_failure(kind: &str, message: &str) {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={kind} message={one_line:?}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let msg = e.to_string();
            report_failure("usage", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Query(a) => query(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            report_failure("usage", &m);
            ExitCode::from(2)
        }
        Err(Failure::Input(m)) => {
            report_failure("input", &m);
            ExitCode::from(3)
        }
        Err(Failure::Internal(m)) => {
            report_failure("internal", &m);
            ExitCode::from(4)
        }
    }
}

fn read_text(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    write_atomic(path, text.as_bytes()).map_err(Failure::from)
}

/// Set a dotted key in a TOML table, parsing the value as TOML and falling
/// back to a plain string.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Outcome {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got '{assignment}'")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::Usage(format!("'{key}' is not a config section path")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Config from `base` text (or defaults), then the config file, then
/// `--set` overrides.
fn effective_config(base: Option<String>, args: &ConfigArgs) -> Outcome<Config> {
    let mut text = base.unwrap_or_else(|| Config::default().to_toml());
    if let Some(path) = &args.config {
        text = read_text(path)?;
    }
    let mut table: toml::Table = text.parse().map_err(|e| Failure::Input(format!("config: {e}")))?;
    for o in &args.overrides {
        apply_override(&mut table, o)?;
    }
    Ok(Config::from_toml(&table.to_string())?)
}

/// Effective config as `config` header lines.
fn config_header(cfg: &Config) -> Vec<String> {
    let mut section = String::new();
    let mut out = Vec::new();
    for line in cfg.to_toml().lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(s) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = format!("{s}.");
        } else {
            out.push(format!("config {section}{}", line.replace(" = ", "=")));
        }
    }
    out
}

fn synth(a: SynthArgs) -> Outcome {
    let scene: SceneSpec = match scenes::preset(&a.scene) {
        Some(s) => s,
        None if Path::new(&a.scene).is_file() => read_text(Path::new(&a.scene))?.parse()?,
        None => {
            return Err(Failure::Usage(format!(
                "unknown scene '{}'; presets are {}",
                a.scene,
                scenes::PRESETS.join(", ")
            )))
        }
    };
    if !(a.area_ref > 0.0) || !(a.jitter >= 0.0) {
        return Err(Failure::Usage("area-ref must be positive and jitter nonnegative".into()));
    }
    let (stream, truth) = render_synthetic(&scene)?;
    let frames_dir = a.out.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Failure::Internal(format!("cannot create {}: {e}", frames_dir.display())))?;
    for frame in stream.iter() {
        write_frame(&frames_dir, &frame?)?;
    }
    write_text(&a.out.join("scene.txt"), &scene.to_string())?;
    let truth = Arc::new(truth);
    let n = stream.len() as u64;
    write_detections(&a.out.join("truth.txt"), n, &OracleDetector::new(truth.clone(), Injection::none()))?;
    let injection = Injection {
        seed: a.inject_seed,
        max_dropout: a.dropout,
        area_ref: a.area_ref,
        jitter: a.jitter,
    };
    write_detections(&a.out.join("detections.txt"), n, &OracleDetector::new(truth, injection))?;
    println!(
        "synth scene={} frames={} fps={} size={}x{} out={}",
        a.scene,
        n,
        scene.fps,
        scene.width,
        scene.height,
        a.out.display()
    );
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Outcome {
    let mut cfg = effective_config(None, &a.config)?;
    if let Some(s) = a.chunk_seconds {
        cfg.preprocess.chunk_seconds = s;
    }
    if let Some(c) = a.coverage {
        cfg.preprocess.clustering.coverage = c;
    }
    cfg.validate()?;
    if !a.frames.is_dir() {
        return Err(Failure::Input(format!("{} is not a directory", a.frames.display())));
    }
    let mut stream = open_directory(&a.frames, a.fps)?;
    if let Some(keep) = a.downsample {
        stream = stream.downsample(keep)?;
    }
    let name = a
        .frames
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into());
    let out = preprocess_video(&stream, &name, &cfg, a.workers as usize, &a.index)?;
    let m = &out.manifest;
    let mut s = String::from("#vidindex-preprocess v1\n");
    for h in config_header(&cfg) {
        let _ = writeln!(s, "# {h}");
    }
    let _ = writeln!(
        s,
        "index {} frames={} fps={} stride={} chunks={} chunk_frames={} fingerprint={}",
        a.index.display(),
        m.frames,
        m.fps,
        m.stride,
        m.chunks.len(),
        m.chunk_frames,
        m.fingerprint
    );
    print!("{s}");
    log::info!("preprocessed in {:.2}s", out.wall.as_secs_f64());
    if let Some(t) = &a.timing {
        write_text(t, &out.timings.to_text())?;
    }
    Ok(())
}

fn load_detector(path: &Path, dims: (u32, u32)) -> Outcome<FileDetector> {
    Ok(load_precomputed(path, Some(dims))?)
}

fn query(a: QueryArgs) -> Outcome {
    let index = Index::open(&a.index)?;
    let stored = read_text(&a.index.join(CONFIG_FILE))?;
    let cfg = effective_config(Some(stored), &a.config)?;
    let manifest = index.manifest.clone();
    let dims = (manifest.width, manifest.height);
    let detector: Arc<dyn Detector> = Arc::new(load_detector(&a.detector, dims)?);
    let spec = QuerySpec::new(a.query_type, &a.label, a.target)?;
    let (outcome, timings) = run_query(&a.index, detector.clone(), &spec, &cfg, a.workers as usize)?;

    let mut header = vec![
        format!("index {}", a.index.display()),
        format!("detector {}", a.detector.display()),
        format!("target {}", a.target),
    ];
    header.extend(config_header(&cfg));
    if let Some(out) = &a.out {
        write_text(out, &outcome.result.to_text(&header))?;
    }

    let mut r = format!(
        "#vidindex-query-report v1 type={} label={} target={}\n",
        a.query_type, a.label, a.target
    );
    for h in &header {
        let _ = writeln!(r, "# {h}");
    }
    let _ = writeln!(r, "frames {}", outcome.result.frames.len());
    let _ = writeln!(r, "invocations {}", outcome.profile.invocations());
    let _ = writeln!(r, "invoked_fraction {:.6}", outcome.invoked_fraction);
    for c in &outcome.calibrations {
        let d = c.max_distance.map_or("exhaustive".to_string(), |d| d.to_string());
        let _ = writeln!(r, "calibration cluster={} centroid={} max_distance={d}", c.cluster, c.centroid);
    }
    if let Some(t) = &a.truth {
        let truth = load_detector(t, dims)?;
        let reference = reference_detections(&truth, &manifest, &a.label, (0, manifest.frames))?;
        let acc = outcome.result.accuracy(&reference, cfg.query.iou_threshold)?;
        let _ = writeln!(r, "accuracy {:.6}", acc.average);
    }
    print!("{r}");
    if let Some(p) = &a.report {
        write_text(p, &r)?;
    }
    if let Some(t) = &a.timing {
        write_text(t, &timings.to_text())?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let result = QueryResult::parse(&read_text(&a.result)?, &a.result)?;
    let truth = load_precomputed(&a.truth, None)?;
    let iou = a.iou_threshold.unwrap_or(Config::default().query.iou_threshold);
    let reference = result
        .frames
        .iter()
        .map(|f| {
            Ok(truth
                .detect(f.frame)?
                .into_iter()
                .filter(|d| d.label == result.label)
                .collect())
        })
        .collect::<vidindex::Result<Vec<_>>>()?;
    let report = result.accuracy(&reference, iou)?;
    let mut s = format!(
        "#vidindex-evaluation v1 type={} label={}\n# result {}\n# truth {}\n# config query.iou_threshold={iou}\n",
        result.query_type,
        result.label,
        a.result.display(),
        a.truth.display()
    );
    let _ = writeln!(s, "frames {}", report.per_frame.len());
    let _ = writeln!(s, "average {:.6}", report.average);
    if a.per_frame {
        for (f, v) in result.frames.iter().zip(&report.per_frame) {
            let _ = writeln!(s, "frame {} {:.6}", f.frame, v);
        }
    }
    print!("{s}");
    if let Some(out) = &a.out {
        write_text(out, &s)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Outcome {
    let index = Index::open(&a.index)?;
    let cfg = Config::from_toml(&read_text(&a.index.join(CONFIG_FILE))?)?;
    let data = IndexData::load(&index)?;
    let storage = storage_report(&a.index)?;
    let m = &data.manifest;
    let mut s = String::from("#vidindex-report v1\n");
    for h in config_header(&cfg) {
        let _ = writeln!(s, "# {h}");
    }
    let _ = writeln!(
        s,
        "video {} frames={} size={}x{} fps={} stride={} chunks={}",
        m.video,
        m.frames,
        m.width,
        m.height,
        m.fps,
        m.stride,
        m.chunks.len()
    );
    for (name, bytes) in [
        ("keypoints", storage.keypoints),
        ("blobs", storage.blobs),
        ("backgrounds", storage.backgrounds),
        ("features", storage.features),
        ("headers", storage.headers),
        ("metadata", storage.metadata),
    ] {
        let _ = writeln!(s, "storage {name} {bytes}");
    }
    let _ = writeln!(s, "storage total {} keypoint_share={:.4}", storage.total(), storage.keypoint_share());
    let c = &data.clusters;
    let _ = writeln!(s, "clusters {}", c.k());
    for k in 0..c.k() {
        let members: Vec<String> = c.members(k).iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "cluster {k} centroid={} members={}", c.centroids[k], members.join(","));
    }
    print!("{s}");
    Ok(())
}
