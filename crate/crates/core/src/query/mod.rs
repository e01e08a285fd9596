//! Query execution over a preprocessed index.
//!
//! Each cluster's centroid chunk is run through the detector on every
//! frame to pick the largest max_distance that meets the accuracy target.
//! Every other chunk then runs the detector only on representative frames
//! chosen for its cluster's max_distance, and the results are propagated
//! along trajectories.

mod place;
mod propagate;
mod select;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

pub use place::{anchor_objective, anchor_ratios, place_box, Placement, PlacementMethod};
pub use propagate::{nearest_rep, pair_detections, propagate_box, propagate_chunk, ChunkOutput, Provenance};
pub use select::{calibrate_max_distance, plan_chunk, plan_is_valid, select_rep_frames, simulate_plan, Calibration, RepFramePlan};

use crate::config::QueryConfig;
use crate::detector::{Detection, Detector, DetectorProfile, MeteredDetector};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::index_store::{ChunkRecord, Index, IndexManifest, FORMAT_VERSION};
use crate::cluster::ClusterAssignment;
use crate::metrics::{binary_accuracy, count_accuracy, detection_accuracy, AccuracyReport, QueryType};

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub query_type: QueryType,
    pub label: String,
    pub accuracy_target: f64,
    /// Half-open range of stream positions; the whole video when `None`.
    pub range: Option<(usize, usize)>,
}

impl QuerySpec {
    pub fn new(query_type: QueryType, label: &str, accuracy_target: f64) -> Result<Self> {
        if !(accuracy_target > 0.0 && accuracy_target <= 1.0) {
            return Err(Error::Config(format!("accuracy target {accuracy_target} outside (0, 1]")));
        }
        Ok(QuerySpec {
            query_type,
            label: label.to_string(),
            accuracy_target,
            range: None,
        })
    }

    fn bounds(&self, frames: usize) -> (usize, usize) {
        let (a, b) = self.range.unwrap_or((0, frames));
        (a.min(frames), b.min(frames).max(a.min(frames)))
    }
}

/// An index held in memory.
#[derive(Debug, Clone)]
pub struct IndexData {
    pub manifest: IndexManifest,
    pub clusters: ClusterAssignment,
    pub chunks: Vec<ChunkRecord>,
}

impl IndexData {
    pub fn load(index: &Index) -> Result<Self> {
        let chunks = index
            .manifest
            .chunks
            .iter()
            .map(|c| index.read_chunk(c.id))
            .collect::<Result<Vec<_>>>()?;
        Ok(IndexData {
            manifest: index.manifest.clone(),
            clusters: index.clusters.clone(),
            chunks,
        })
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.manifest.width, self.manifest.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Flag(bool),
    Count(u32),
    Boxes(Vec<(BBox, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub position: usize,
    /// Source frame index.
    pub frame: u64,
    pub payload: Payload,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_type: QueryType,
    pub label: String,
    pub frames: Vec<FrameResult>,
}

impl QueryResult {
    /// Accuracy against reference detections, one list per result frame.
    pub fn accuracy(&self, reference: &[Vec<Detection>], iou_threshold: f64) -> Result<AccuracyReport> {
        if reference.len() != self.frames.len() {
            return Err(Error::RangeMismatch(self.frames.len(), reference.len()));
        }
        match self.query_type {
            QueryType::Classification => {
                let pred: Vec<bool> = self.frames.iter().map(|f| matches!(f.payload, Payload::Flag(true))).collect();
                let truth: Vec<bool> = reference.iter().map(|r| !r.is_empty()).collect();
                binary_accuracy(&pred, &truth)
            }
            QueryType::Counting => {
                let pred: Vec<u32> = self
                    .frames
                    .iter()
                    .map(|f| match f.payload {
                        Payload::Count(c) => c,
                        _ => 0,
                    })
                    .collect();
                let truth: Vec<u32> = reference.iter().map(|r| r.len() as u32).collect();
                count_accuracy(&pred, &truth)
            }
            QueryType::Detection => {
                let pred: Vec<Vec<(BBox, f64)>> = self
                    .frames
                    .iter()
                    .map(|f| match &f.payload {
                        Payload::Boxes(b) => b.clone(),
                        _ => Vec::new(),
                    })
                    .collect();
                let truth: Vec<Vec<BBox>> = reference.iter().map(|r| r.iter().map(|d| d.bbox).collect()).collect();
                detection_accuracy(&pred, &truth, iou_threshold)
            }
        }
    }

    pub fn to_text(&self, header: &[String]) -> String {
        let mut s = format!(
            "#vidindex-result {FORMAT_VERSION} type={} label={}\n",
            self.query_type, self.label
        );
        for h in header {
            let _ = writeln!(s, "# {h}");
        }
        for f in &self.frames {
            let _ = write!(s, "{} {}", f.frame, f.provenance.as_str());
            match &f.payload {
                Payload::Flag(v) => {
                    let _ = write!(s, " {}", *v as u8);
                }
                Payload::Count(c) => {
                    let _ = write!(s, " {c}");
                }
                Payload::Boxes(b) => {
                    for (bb, score) in b {
                        let _ = write!(s, " ({:.3},{:.3},{:.3},{:.3},{:.4})", bb.x1, bb.y1, bb.x2, bb.y2, score);
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    /// Parse a result file. Positions are numbered from 0 in file order.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Schema {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty result file".into()))?;
        let mut parts = head.split_whitespace();
        if parts.next() != Some("#vidindex-result") {
            return Err(err(1, "expected '#vidindex-result' header".into()));
        }
        let version = parts.next().unwrap_or("");
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                expected: FORMAT_VERSION.into(),
                found: version.into(),
            });
        }
        let mut query_type = None;
        let mut label = None;
        for p in parts {
            match p.split_once('=') {
                Some(("type", v)) => query_type = Some(v.parse::<QueryType>().map_err(|e| err(1, e))?),
                Some(("label", v)) => label = Some(v.to_string()),
                _ => return Err(err(1, format!("unexpected header field '{p}'"))),
            }
        }
        let query_type = query_type.ok_or_else(|| err(1, "header lacks type".into()))?;
        let label = label.ok_or_else(|| err(1, "header lacks label".into()))?;
        let mut frames = Vec::new();
        for (n, line) in lines {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 2 {
                return Err(err(n, "expected frame and provenance".into()));
            }
            let frame: u64 = f[0].parse().map_err(|_| err(n, format!("bad frame '{}'", f[0])))?;
            let provenance = Provenance::parse(f[1]).ok_or_else(|| err(n, format!("unknown provenance '{}'", f[1])))?;
            let payload = match query_type {
                QueryType::Classification | QueryType::Counting => {
                    let v: u32 = f
                        .get(2)
                        .filter(|_| f.len() == 3)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| err(n, "expected one integer payload".into()))?;
                    if query_type == QueryType::Classification {
                        if v > 1 {
                            return Err(err(n, "flag must be 0 or 1".into()));
                        }
                        Payload::Flag(v == 1)
                    } else {
                        Payload::Count(v)
                    }
                }
                QueryType::Detection => {
                    let mut boxes = Vec::new();
                    for tok in &f[2..] {
                        let vals: Vec<f64> = tok
                            .strip_prefix('(')
                            .and_then(|t| t.strip_suffix(')'))
                            .map(|t| t.split(',').filter_map(|v| v.parse().ok()).collect())
                            .unwrap_or_default();
                        if vals.len() != 5 {
                            return Err(err(n, format!("bad box '{tok}'")));
                        }
                        boxes.push((BBox::new(vals[0], vals[1], vals[2], vals[3]), vals[4]));
                    }
                    Payload::Boxes(boxes)
                }
            };
            frames.push(FrameResult {
                position: frames.len(),
                frame,
                payload,
                provenance,
            });
        }
        Ok(QueryResult {
            query_type,
            label,
            frames,
        })
    }
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub result: QueryResult,
    pub calibrations: Vec<Calibration>,
    pub plans: Vec<RepFramePlan>,
    pub profile: DetectorProfile,
    /// Share of result frames the detector ran on.
    pub invoked_fraction: f64,
    /// Time in detector calls and in propagation, summed over workers.
    pub inference_time: Duration,
    pub propagation_time: Duration,
}

fn chunk_error(chunk: u32) -> impl Fn(Error) -> Error {
    move |e| Error::Chunk {
        chunk,
        source: Box::new(e),
    }
}

fn label_dets(detector: &MeteredDetector, manifest: &IndexManifest, label: &str, positions: std::ops::Range<usize>) -> Result<Vec<Vec<Detection>>> {
    positions
        .map(|p| {
            let all = detector.detect(manifest.source_index(p))?;
            Ok(all.iter().filter(|d| d.label == label).cloned().collect())
        })
        .collect()
}

/// Run a query. Calibrations and chunks are processed in parallel on the
/// current rayon pool; output is independent of the pool size.
pub fn execute_query(data: &IndexData, detector: &MeteredDetector, spec: &QuerySpec, cfg: &QueryConfig) -> Result<QueryOutcome> {
    let m = &data.manifest;
    let dims = data.dims();
    let clusters = &data.clusters;

    let calibrated: Vec<(Calibration, Vec<Vec<Detection>>, Duration, Duration)> = (0..clusters.k())
        .into_par_iter()
        .map(|c| {
            let centroid = clusters.centroids[c];
            let rec = &data.chunks[centroid];
            let chunk = rec.tracks.chunk;
            let t0 = Instant::now();
            let dets = label_dets(detector, m, &spec.label, chunk.frames()).map_err(chunk_error(chunk.id))?;
            let t1 = Instant::now();
            let (max_distance, log) =
                calibrate_max_distance(&rec.tracks, &dets, spec.query_type, spec.accuracy_target, dims, cfg);
            Ok((
                Calibration {
                    cluster: c,
                    centroid: chunk.id,
                    max_distance,
                    log,
                },
                dets,
                t1 - t0,
                t1.elapsed(),
            ))
        })
        .collect::<Result<_>>()?;
    let full: BTreeMap<u32, &Vec<Vec<Detection>>> = calibrated.iter().map(|(c, d, ..)| (c.centroid, d)).collect();

    let (lo, hi) = spec.bounds(m.frames);
    let outputs: Vec<(RepFramePlan, ChunkOutput, Duration, Duration)> = data
        .chunks
        .par_iter()
        .filter(|r| r.tracks.chunk.end >= lo && r.tracks.chunk.start < hi)
        .map(|rec| {
            let tracks = &rec.tracks;
            let id = tracks.chunk.id;
            if let Some(dets) = full.get(&id) {
                let plan = RepFramePlan {
                    chunk: id,
                    max_distance: None,
                    frames: tracks.chunk.frames().collect(),
                };
                let out = ChunkOutput::direct(tracks.chunk.start, dets);
                return Ok((plan, out, Duration::ZERO, Duration::ZERO));
            }
            let cal = &calibrated[clusters.assignment[id as usize]].0;
            let t0 = Instant::now();
            let plan = plan_chunk(tracks, cal.max_distance, &cfg.max_distance_grid);
            let t1 = Instant::now();
            let mut reps = BTreeMap::new();
            for &f in &plan.frames {
                let d = label_dets(detector, m, &spec.label, f..f + 1).map_err(chunk_error(id))?;
                reps.insert(f, d.into_iter().next().unwrap_or_default());
            }
            let t2 = Instant::now();
            let out = propagate_chunk(tracks, &reps, spec.query_type == QueryType::Detection, dims, cfg);
            Ok((plan, out, t2 - t1, (t1 - t0) + t2.elapsed()))
        })
        .collect::<Result<_>>()?;

    let mut frames = Vec::with_capacity(hi - lo);
    for (_, out, ..) in &outputs {
        for i in 0..out.counts.len() {
            let position = out.start + i;
            if position < lo || position >= hi {
                continue;
            }
            let payload = match spec.query_type {
                QueryType::Classification => Payload::Flag(out.counts[i] > 0),
                QueryType::Counting => Payload::Count(out.counts[i]),
                QueryType::Detection => Payload::Boxes(out.boxes[i].clone()),
            };
            frames.push(FrameResult {
                position,
                frame: m.source_index(position),
                payload,
                provenance: out.provenance[i],
            });
        }
    }
    let profile = detector.profile();
    let invoked_fraction = if frames.is_empty() {
        0.0
    } else {
        profile.invocations() as f64 / frames.len() as f64
    };
    let inference_time = calibrated.iter().map(|c| c.2).chain(outputs.iter().map(|o| o.2)).sum();
    let propagation_time = calibrated.iter().map(|c| c.3).chain(outputs.iter().map(|o| o.3)).sum();
    Ok(QueryOutcome {
        inference_time,
        propagation_time,
        result: QueryResult {
            query_type: spec.query_type,
            label: spec.label.clone(),
            frames,
        },
        calibrations: calibrated.into_iter().map(|c| c.0).collect(),
        plans: outputs.into_iter().map(|o| o.0).collect(),
        profile,
        invoked_fraction,
    })
}

/// Detector output for `label` on every position of `range`, without
/// metering. Used as the reference for accuracy.
pub fn reference_detections(
    detector: &dyn Detector,
    manifest: &IndexManifest,
    label: &str,
    range: (usize, usize),
) -> Result<Vec<Vec<Detection>>> {
    (range.0..range.1)
        .map(|p| {
            let all = detector.detect(manifest.source_index(p))?;
            Ok(all.into_iter().filter(|d| d.label == label).collect())
        })
        .collect()
}
