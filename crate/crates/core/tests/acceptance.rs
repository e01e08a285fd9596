//! End-to-end acceptance checks on the built-in synthetic scenes. Prints
//! one status line per criterion and exits nonzero if any fails.
//!
//! Run alone with `cargo test -p vidindex-core --test acceptance`; a
//! substring argument selects criteria by key.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use vidindex::background::{partition, resolve_background};
use vidindex::blobs::{label_components, refine, segment};
use vidindex::config::Config;
use vidindex::detector::{Detection, Detector, Injection, OracleDetector};
use vidindex::frame_source::{render_synthetic, FrameStream, GroundTruth, SceneSpec};
use vidindex::geometry::BBox;
use vidindex::index_store::{storage_report, Index};
use vidindex::keypoints::{extract_keypoints, match_keypoints};
use vidindex::metrics::QueryType;
use vidindex::pipeline::{index_files, preprocess_video, run_query};
use vidindex::query::{
    anchor_objective, anchor_ratios, place_box, plan_chunk, propagate_chunk, reference_detections, simulate_plan,
    IndexData, Payload, QuerySpec,
};
use vidindex::scenes;

const TARGETS: [f64; 3] = [0.80, 0.90, 0.95];
const LABELS: [&str; 2] = ["car", "person"];
const MAX_INVOKED: f64 = 0.54;

fn injected() -> Injection {
    Injection {
        seed: 3,
        max_dropout: 0.1,
        area_ref: 400.0,
        jitter: 0.8,
    }
}

/// A preprocessed scene kept alive for the whole run.
struct Built {
    _dir: TempDir,
    path: PathBuf,
    truth: Arc<GroundTruth>,
    cfg: Config,
    data: IndexData,
    wall: Duration,
}

fn build(scene: &SceneSpec, downsample: Option<f64>, cfg: Config) -> Built {
    let (stream, truth) = render_synthetic(scene).expect("scene renders");
    let stream = match downsample {
        Some(fps) => stream.downsample(fps).expect("valid rate"),
        None => stream,
    };
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("index");
    let start = Instant::now();
    preprocess_video(&stream, "scene", &cfg, 1, &path).expect("preprocess");
    let wall = start.elapsed();
    let data = IndexData::load(&Index::open(&path).expect("open")).expect("load");
    Built {
        _dir: dir,
        path,
        truth: Arc::new(truth),
        cfg,
        data,
        wall,
    }
}

fn benchmark() -> &'static Built {
    static B: OnceLock<Built> = OnceLock::new();
    B.get_or_init(|| build(&scenes::benchmark(600), None, Config::default()))
}

fn deforming() -> &'static Built {
    static B: OnceLock<Built> = OnceLock::new();
    B.get_or_init(|| build(&scenes::deforming(), None, Config::default()))
}

fn two_regime() -> &'static Built {
    static B: OnceLock<Built> = OnceLock::new();
    B.get_or_init(|| {
        let mut cfg = Config::default();
        cfg.preprocess.chunk_seconds = 30.0;
        cfg.preprocess.clustering.coverage = 0.2;
        build(&scenes::two_regime(), None, cfg)
    })
}

fn rigid_stream() -> FrameStream {
    let (stream, _) = render_synthetic(&scenes::rigid()).expect("scene renders");
    stream.downsample(1.0).expect("valid rate")
}

fn rigid_1fps() -> &'static Built {
    static B: OnceLock<Built> = OnceLock::new();
    B.get_or_init(|| build(&scenes::rigid(), Some(1.0), Config::default()))
}

#[derive(Debug, Clone)]
struct Cell {
    label: &'static str,
    query_type: QueryType,
    target: f64,
    accuracy: f64,
    invoked: f64,
}

/// Every label × query type × target on `b` with the injected detector.
fn run_cells(b: &Built, labels: &[&'static str]) -> Vec<Cell> {
    let det: Arc<dyn Detector> = Arc::new(OracleDetector::new(b.truth.clone(), injected()));
    let frames = b.data.manifest.frames;
    let mut cells = Vec::new();
    for &label in labels {
        let reference = reference_detections(det.as_ref(), &b.data.manifest, label, (0, frames)).expect("reference");
        for qt in QueryType::ALL {
            for target in TARGETS {
                let spec = QuerySpec::new(qt, label, target).expect("spec");
                let (o, _) = run_query(&b.path, det.clone(), &spec, &b.cfg, 1).expect("query");
                let acc = o.result.accuracy(&reference, b.cfg.query.iou_threshold).expect("accuracy");
                cells.push(Cell {
                    label,
                    query_type: qt,
                    target,
                    accuracy: acc.average,
                    invoked: o.invoked_fraction,
                });
            }
        }
    }
    cells
}

fn benchmark_cells() -> &'static [Cell] {
    static C: OnceLock<Vec<Cell>> = OnceLock::new();
    C.get_or_init(|| run_cells(benchmark(), &LABELS))
}

fn rigid_cells() -> &'static [Cell] {
    static C: OnceLock<Vec<Cell>> = OnceLock::new();
    C.get_or_init(|| run_cells(rigid_1fps(), &["car"]))
}

fn worst_margin(cells: &[Cell]) -> (f64, String) {
    cells
        .iter()
        .map(|c| (c.accuracy - c.target, format!("{} {} {:.2}", c.label, c.query_type, c.target)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("cells")
}

fn sorted_boxes(mut v: Vec<(BBox, f64)>) -> Vec<(BBox, f64)> {
    v.sort_by(|a, b| {
        [a.0.x1, a.0.y1, a.0.x2, a.0.y2, a.1]
            .partial_cmp(&[b.0.x1, b.0.y1, b.0.x2, b.0.y2, b.1])
            .expect("finite")
    });
    v
}

fn blob_bearing(data: &IndexData, p: usize) -> bool {
    !data.chunks[p / data.manifest.chunk_frames].tracks.blobs_at(p).is_empty()
}

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Check {
    let b = benchmark();
    let mut cfg = b.cfg.clone();
    cfg.query.max_distance_grid = vec![0];
    let det: Arc<dyn Detector> = Arc::new(OracleDetector::new(b.truth.clone(), Injection::none()));
    let frames = b.data.manifest.frames;
    let mut query_time = Duration::ZERO;
    let mut problems = Vec::new();
    let mut compared = 0;
    for label in LABELS {
        let reference = reference_detections(det.as_ref(), &b.data.manifest, label, (0, frames)).expect("reference");
        for qt in QueryType::ALL {
            let spec = QuerySpec::new(qt, label, 0.9).expect("spec");
            let start = Instant::now();
            let (o, _) = run_query(&b.path, det.clone(), &spec, &cfg, 1).expect("query");
            query_time += start.elapsed();
            let acc = o.result.accuracy(&reference, cfg.query.iou_threshold).expect("accuracy");
            if acc.average != 1.0 {
                problems.push(format!("{label} {qt} accuracy {:.6}", acc.average));
            }
            if qt != QueryType::Detection {
                continue;
            }
            for fr in &o.result.frames {
                if !blob_bearing(&b.data, fr.position) {
                    continue;
                }
                compared += 1;
                let Payload::Boxes(got) = &fr.payload else {
                    return Err("detection query returned no boxes".into());
                };
                let want: Vec<(BBox, f64)> = reference[fr.position].iter().map(|d: &Detection| (d.bbox, d.score)).collect();
                if sorted_boxes(got.clone()) != sorted_boxes(want) {
                    problems.push(format!("{label} frame {} differs", fr.position));
                }
            }
        }
    }
    let runtime = b.wall + query_time;
    if runtime >= Duration::from_secs(300) {
        problems.push(format!("runtime {:.1}s", runtime.as_secs_f64()));
    }
    let detail = format!(
        "{compared} blob-bearing frames identical, metrics 1.0, preprocess {:.1}s + queries {:.1}s",
        b.wall.as_secs_f64(),
        query_time.as_secs_f64()
    );
    ensure(problems.is_empty(), if problems.is_empty() { detail } else { problems.join("; ") })
}

fn accuracy_safety() -> Check {
    let cells = benchmark_cells();
    let below: Vec<String> = cells
        .iter()
        .filter(|c| c.accuracy < c.target)
        .map(|c| format!("{} {} {:.2}: {:.4}", c.label, c.query_type, c.target, c.accuracy))
        .collect();
    let (margin, at) = worst_margin(cells);
    ensure(
        below.is_empty(),
        if below.is_empty() {
            format!("{} cells at or above target, tightest {at} (+{margin:.4})", cells.len())
        } else {
            below.join("; ")
        },
    )
}

fn ordering_problems(cells: &[Cell]) -> Vec<String> {
    let frac = |l: &str, q: QueryType, t: f64| {
        cells
            .iter()
            .find(|c| c.label == l && c.query_type == q && c.target == t)
            .map(|c| c.invoked)
            .expect("cell")
    };
    let mut out = Vec::new();
    let labels: Vec<&str> = {
        let mut l: Vec<&str> = cells.iter().map(|c| c.label).collect();
        l.dedup();
        l
    };
    for &l in &labels {
        for q in QueryType::ALL {
            if frac(l, q, 0.95) < frac(l, q, 0.80) {
                out.push(format!("{l} {q}: fraction at 0.95 below 0.80"));
            }
        }
        for t in TARGETS {
            if frac(l, QueryType::Detection, t) < frac(l, QueryType::Classification, t) {
                out.push(format!("{l} {t:.2}: detection below classification"));
            }
        }
    }
    out
}

fn inference_economy() -> Check {
    let cells = benchmark_cells();
    let mut problems: Vec<String> = cells
        .iter()
        .filter(|c| c.invoked > MAX_INVOKED)
        .map(|c| format!("{} {} {:.2}: invoked {:.3}", c.label, c.query_type, c.target, c.invoked))
        .collect();
    problems.extend(ordering_problems(cells));
    let max = cells.iter().map(|c| c.invoked).fold(0.0, f64::max);
    let min = cells.iter().map(|c| c.invoked).fold(1.0, f64::min);
    ensure(
        problems.is_empty(),
        if problems.is_empty() {
            format!("invoked fraction {min:.3}..{max:.3} of frames, orderings hold")
        } else {
            problems.join("; ")
        },
    )
}

/// Smallest objective over boxes whose corners lie on a refining grid
/// around `guess`. Each axis is independent, so it is searched on its own.
fn grid_minimum(anchors: &[(f64, f64)], pts: &[(f64, f64)], guess: &BBox) -> f64 {
    let axis = |a: Vec<f64>, x: Vec<f64>, lo: f64, hi: f64| {
        let cost = |x1: f64, x2: f64| -> f64 { a.iter().zip(&x).map(|(a, x)| ((x2 - x) / (x2 - x1) - a).powi(2)).sum() };
        let (mut c1, mut c2) = (lo, hi);
        let mut span = (hi - lo) * 2.0 + 10.0;
        let mut best = cost(c1, c2);
        for _ in 0..6 {
            let (b1, b2) = (c1, c2);
            for i in 0..=80 {
                for j in 0..=80 {
                    let x1 = b1 - span / 2.0 + span * i as f64 / 80.0;
                    let x2 = b2 - span / 2.0 + span * j as f64 / 80.0;
                    if x2 - x1 > 1e-3 {
                        let v = cost(x1, x2);
                        if v < best {
                            (best, c1, c2) = (v, x1, x2);
                        }
                    }
                }
            }
            span /= 8.0;
        }
        best
    };
    axis(
        anchors.iter().map(|a| a.0).collect(),
        pts.iter().map(|p| p.0).collect(),
        guess.x1,
        guess.x2,
    ) + axis(
        anchors.iter().map(|a| a.1).collect(),
        pts.iter().map(|p| p.1).collect(),
        guess.y1,
        guess.y2,
    )
}

fn anchor_suite() -> Check {
    let (iters, tol) = (200, 1e-8);
    let b = BBox::new(12.0, 7.0, 52.0, 31.0);
    let ratios = anchor_ratios(&b, &[(12.0, 7.0), (52.0, 31.0), (32.0, 19.0)]).expect("ratios");
    if ratios != vec![(1.0, 1.0), (0.0, 0.0), (0.5, 0.5)] {
        return Err(format!("endpoint ratios {ratios:?}"));
    }
    let close = |a: &BBox, e: &BBox| {
        [(a.x1, e.x1), (a.y1, e.y1), (a.x2, e.x2), (a.y2, e.y2)]
            .iter()
            .all(|(u, v)| (u - v).abs() <= 1e-6)
    };
    let pts = [(15.0, 9.0), (40.0, 12.0), (22.0, 28.0), (50.0, 30.0)];
    let anchors = anchor_ratios(&b, &pts).expect("ratios");
    let shifted: Vec<(f64, f64)> = pts.iter().map(|p| (p.0 + 7.5, p.1 - 3.25)).collect();
    let p = place_box(&b, &anchors, &pts, &shifted, 2, iters, tol);
    if !close(&p.bbox, &b.translate(7.5, -3.25)) || p.objective >= 1e-9 {
        return Err(format!("translation: {:?} objective {:e}", p.bbox, p.objective));
    }
    let scaled: Vec<(f64, f64)> = pts.iter().map(|p| (12.0 + 1.5 * (p.0 - 12.0), 7.0 + 0.75 * (p.1 - 7.0))).collect();
    let p = place_box(&b, &anchors, &pts, &scaled, 2, iters, tol);
    if !close(&p.bbox, &BBox::new(12.0, 7.0, 72.0, 25.0)) || p.objective >= 1e-9 {
        return Err(format!("scaling: {:?} objective {:e}", p.bbox, p.objective));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..25 {
        let x1 = rng.gen_range(0.0..120.0);
        let y1 = rng.gen_range(0.0..80.0);
        let src = BBox::new(x1, y1, x1 + rng.gen_range(8.0..40.0), y1 + rng.gen_range(8.0..40.0));
        let n = rng.gen_range(3..10);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(src.x1..src.x2), rng.gen_range(src.y1..src.y2)))
            .collect();
        let anchors = anchor_ratios(&src, &pts).expect("ratios");
        let (sx, sy) = (rng.gen_range(0.8..1.25), rng.gen_range(0.8..1.25));
        let (dx, dy) = (rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
        let moved: Vec<(f64, f64)> = pts
            .iter()
            .map(|p| {
                (
                    src.x1 + dx + sx * (p.0 - src.x1) + rng.gen_range(-0.8..0.8),
                    src.y1 + dy + sy * (p.1 - src.y1) + rng.gen_range(-0.8..0.8),
                )
            })
            .collect();
        let p = place_box(&src, &anchors, &pts, &moved, 2, iters, tol);
        let found = anchor_objective(&p.bbox, &anchors, &moved);
        let grid = grid_minimum(&anchors, &moved, &src);
        worst = worst.max(found - grid);
        if found > grid + 1e-9 {
            return Err(format!("instance {i}: objective {found:e} above grid optimum {grid:e}"));
        }
    }
    Ok(format!("endpoints exact, translation and scaling recovered, 25 instances within {worst:.1e} of grid optimum"))
}

/// Mean IOU against ground truth of boxes propagated `d` frames forward
/// from every frame of the deforming scene.
fn mean_iou_at(b: &Built, d: usize) -> f64 {
    let det = OracleDetector::new(b.truth.clone(), Injection::none());
    let dims = b.data.dims();
    let mut ious = Vec::new();
    for rec in &b.data.chunks {
        let tracks = &rec.tracks;
        let c = tracks.chunk;
        for r in c.start..=c.end {
            if r + d > c.end {
                break;
            }
            let dets = det.detect(b.data.manifest.source_index(r)).expect("detect");
            let truth = det.detect(b.data.manifest.source_index(r + d)).expect("detect");
            let reps = BTreeMap::from([(r, dets)]);
            let out = propagate_chunk(tracks, &reps, true, dims, &b.cfg.query);
            let placed = &out.boxes[r + d - c.start];
            for t in &truth {
                ious.push(placed.iter().map(|(p, _)| p.iou(&t.bbox)).fold(0.0, f64::max));
            }
        }
    }
    ious.iter().sum::<f64>() / ious.len().max(1) as f64
}

fn propagation_decay() -> Check {
    let b = deforming();
    let near = mean_iou_at(b, 10);
    let far = mean_iou_at(b, 50);
    ensure(
        near - far >= 0.2,
        format!("mean IOU {near:.3} at distance 10, {far:.3} at 50 (difference {:.3})", near - far),
    )
}

fn misses(b: &Built) -> (usize, usize) {
    let m = &b.data.manifest;
    let (mut checked, mut missed) = (0, 0);
    for p in 0..m.frames {
        let blobs = b.data.chunks[p / m.chunk_frames].tracks.blobs_at(p);
        for o in b.truth.frames[m.source_index(p) as usize].iter().filter(|o| o.moving) {
            checked += 1;
            let hit = blobs.iter().any(|bl| {
                let bb = &bl.bbox;
                bb.x1 as f64 <= o.bbox.x2 && o.bbox.x1 <= bb.x2 as f64 && bb.y1 as f64 <= o.bbox.y2 && o.bbox.y1 <= bb.y2 as f64
            });
            missed += !hit as usize;
        }
    }
    (checked, missed)
}

fn comprehensiveness() -> Check {
    let mut parts = Vec::new();
    let mut total_missed = 0;
    for (name, b) in [
        ("benchmark", benchmark()),
        ("rigid@1fps", rigid_1fps()),
        ("deforming", deforming()),
        ("two-regime", two_regime()),
    ] {
        let (checked, missed) = misses(b);
        total_missed += missed;
        parts.push(format!("{name} {missed}/{checked}"));
    }
    ensure(total_missed == 0, format!("missed actor-frames: {}", parts.join(", ")))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn calibration_coherence() -> Check {
    let b = two_regime();
    let (qt, target, label) = (QueryType::Detection, 0.90, "car");
    let det: Arc<dyn Detector> = Arc::new(OracleDetector::new(b.truth.clone(), injected()));
    let grid = b.cfg.query.max_distance_grid.clone();
    let dims = b.data.dims();
    // Largest grid value whose plan reaches the target on the chunk itself;
    // 0 when none does.
    let ideal: Vec<f64> = b
        .data
        .chunks
        .iter()
        .map(|rec| {
            let c = rec.tracks.chunk;
            let dets = reference_detections(det.as_ref(), &b.data.manifest, label, (c.start, c.end + 1)).expect("reference");
            grid.iter()
                .copied()
                .filter(|&d| {
                    let plan = plan_chunk(&rec.tracks, Some(d), &grid);
                    let acc = simulate_plan(&rec.tracks, &plan, &dets, qt, dims, &b.cfg.query).score(qt, &dets, b.cfg.query.iou_threshold);
                    acc.iter().sum::<f64>() / acc.len() as f64 >= target
                })
                .max()
                .unwrap_or(0) as f64
        })
        .collect();
    let spec = QuerySpec::new(qt, label, target).expect("spec");
    let (o, _) = run_query(&b.path, det.clone(), &spec, &b.cfg, 1).expect("query");
    let clusters = &b.data.clusters;
    if clusters.k() != 2 {
        return Err(format!("expected 2 clusters, got {}", clusters.k()));
    }
    let calibrated: Vec<f64> = o.calibrations.iter().map(|c| c.max_distance.unwrap_or(0) as f64).collect();
    let own: Vec<f64> = ideal
        .iter()
        .zip(&clusters.assignment)
        .map(|(d, &c)| (d - calibrated[c]).abs())
        .collect();
    let other: Vec<f64> = ideal
        .iter()
        .zip(&clusters.assignment)
        .map(|(d, &c)| (d - calibrated[1 - c]).abs())
        .collect();
    let (m_own, m_other) = (median(own), median(other));
    ensure(
        m_own <= 8.0 && m_other > m_own,
        format!(
            "ideal {ideal:?}, centroid values {calibrated:?}, median gap own {m_own} vs other {m_other}"
        ),
    )
}

/// Per actor, the share of its keypoints on one sampled frame that match
/// a keypoint on the next sampled frame; median over actors.
fn median_match_rate() -> f64 {
    let stream = rigid_stream();
    let (_, truth) = render_synthetic(&scenes::rigid()).expect("scene renders");
    let cfg = Config::default().preprocess;
    let per_chunk = (cfg.chunk_seconds * stream.fps()).round() as usize;
    let chunks = partition(stream.len(), per_chunk);
    let mut per_actor: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (i, c) in chunks.iter().enumerate() {
        let neighbors = (i.checked_sub(1).map(|j| &chunks[j]), chunks.get(i + 1));
        let bg = resolve_background(c, neighbors, &stream, &cfg.background).expect("background");
        let kps: Vec<_> = c
            .frames()
            .map(|p| {
                let frame = stream.frame(p).expect("frame");
                let mask = refine(&segment(&frame, &bg, cfg.blobs.tolerance), cfg.blobs.open_radius, cfg.blobs.close_radius);
                extract_keypoints(p, &frame, &label_components(&mask, p, cfg.blobs.min_blob_area), &cfg.keypoints)
            })
            .collect();
        for k in 1..kps.len() {
            let matches = match_keypoints(&kps[k - 1], &kps[k], cfg.keypoints.ratio);
            let src = stream.source_index(c.start + k - 1) as usize;
            let dst = stream.source_index(c.start + k) as usize;
            for o in &truth.frames[src] {
                if !truth.frames[dst].iter().any(|x| x.actor_id == o.actor_id) {
                    continue;
                }
                let entry = per_actor.entry(o.actor_id).or_default();
                for (ki, kp) in kps[k - 1].iter().enumerate() {
                    if o.bbox.contains(kp.x, kp.y) {
                        entry.1 += 1;
                        entry.0 += matches.iter().any(|m| m.a == ki) as usize;
                    }
                }
            }
        }
    }
    median(per_actor.values().filter(|v| v.1 > 0).map(|v| v.0 as f64 / v.1 as f64).collect())
}

fn downsampling() -> Check {
    let rate = median_match_rate();
    let cells = rigid_cells();
    let below: Vec<String> = cells
        .iter()
        .filter(|c| c.accuracy < c.target)
        .map(|c| format!("{} {:.2}: {:.4}", c.query_type, c.target, c.accuracy))
        .collect();
    let (margin, at) = worst_margin(cells);
    ensure(
        rate >= 0.85 && below.is_empty(),
        format!(
            "median keypoint match rate {rate:.3} across 30-frame gaps; targets {} (tightest {at} +{margin:.4})",
            if below.is_empty() { "met".to_string() } else { format!("missed: {}", below.join("; ")) }
        ),
    )
}

fn preprocess_timed(stream: &FrameStream, workers: usize, dir: &Path) -> Duration {
    let start = Instant::now();
    preprocess_video(stream, "scaling", &Config::default(), workers, dir).expect("preprocess");
    start.elapsed()
}

/// `Ok((false, _))` means output identity held but the timing bound could
/// not be assessed on this host.
fn parallel_scaling() -> std::result::Result<(bool, String), String> {
    let (stream, _) = render_synthetic(&scenes::benchmark(120)).expect("scene renders");
    let dir = tempfile::tempdir().expect("tempdir");
    let mut files = Vec::new();
    let mut times = BTreeMap::new();
    for workers in [1, 2, 4] {
        let d = dir.path().join(format!("w{workers}"));
        times.insert(workers, preprocess_timed(&stream, workers, &d));
        files.push(index_files(&d).expect("index files"));
    }
    if files.windows(2).any(|w| w[0] != w[1]) {
        return Err("persisted index differs across worker counts".into());
    }
    let ratio = times[&4].as_secs_f64() / times[&1].as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!(
        "index byte-identical for 1/2/4 workers ({} files); 4-worker time {:.2}x of 1-worker on {cores} core(s)",
        files[0].len(),
        ratio
    );
    if cores < 4 {
        return Ok((false, format!("{detail}; timing bound needs a 4-core host")));
    }
    if ratio <= 0.45 {
        Ok((true, detail))
    } else {
        Err(detail)
    }
}

fn storage_accounting() -> Check {
    let b = benchmark();
    let report = storage_report(&b.path).expect("report");
    let mut on_disk = 0u64;
    for e in std::fs::read_dir(&b.path).expect("read dir").flatten() {
        if !e.file_name().to_string_lossy().starts_with('.') {
            on_disk += e.metadata().expect("metadata").len();
        }
    }
    let share = report.keypoint_share();
    ensure(
        share > 0.5 && report.total() == on_disk,
        format!("keypoint rows {:.1}% of {} bytes; files on disk {on_disk} bytes", share * 100.0, report.total()),
    )
}

enum Status {
    Pass,
    Partial,
    Fail,
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let filter = args.iter().find(|a| !a.starts_with('-')).cloned();
    let criteria: Vec<(&str, Box<dyn Fn() -> std::result::Result<(bool, String), String>>)> = vec![
        ("oracle-equivalence", Box::new(|| oracle_equivalence().map(|d| (true, d)))),
        ("accuracy-target-safety", Box::new(|| accuracy_safety().map(|d| (true, d)))),
        ("inference-economy", Box::new(|| inference_economy().map(|d| (true, d)))),
        ("anchor-ratio-placement", Box::new(|| anchor_suite().map(|d| (true, d)))),
        ("propagation-decay", Box::new(|| propagation_decay().map(|d| (true, d)))),
        ("comprehensiveness", Box::new(|| comprehensiveness().map(|d| (true, d)))),
        ("calibration-coherence", Box::new(|| calibration_coherence().map(|d| (true, d)))),
        ("downsampling-robustness", Box::new(|| downsampling().map(|d| (true, d)))),
        ("parallel-scaling", Box::new(parallel_scaling)),
        ("storage-accounting", Box::new(|| storage_accounting().map(|d| (true, d)))),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (key, check) in &criteria {
        if filter.as_ref().is_some_and(|f| !key.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (status, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok((true, d))) => (Status::Pass, d),
            Ok(Ok((false, d))) => (Status::Partial, d),
            Ok(Err(d)) => (Status::Fail, d),
            Err(e) => (
                Status::Fail,
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        let tag = match status {
            Status::Pass => "PASS",
            Status::Partial => "PARTIAL",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
        };
        println!("{tag} {key} ({:.1}s): {detail}", start.elapsed().as_secs_f64());
    }
    if ran > 0 {
        println!("acceptance: {} of {ran} criteria failed", failed);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
