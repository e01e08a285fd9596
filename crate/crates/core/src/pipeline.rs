//! Preprocessing and query orchestration on a fixed worker pool.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::background::{partition, resolve_background, Chunk};
use crate::blobs::{label_components, refine, segment};
use crate::cluster::cluster_chunks;
use crate::config::{Config, PreprocessConfig};
use crate::detector::{Detector, MeteredDetector};
use crate::error::{Error, Result};
use crate::frame_source::FrameStream;
use crate::index_store::{
    encode_clusters, quantize_tracks, write_atomic, write_chunk_index, ChunkEntry, ChunkRecord, Index, IndexManifest,
    CLUSTERS_FILE, CONFIG_FILE, MANIFEST_FILE,
};
use crate::keypoints::{extract_keypoints, match_keypoints};
use crate::query::{execute_query, IndexData, QueryOutcome, QuerySpec};
use crate::trajectory::{chunk_features, resolve_trajectories, FrameObservations};

/// Time spent per phase, summed over workers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub keypoints: Duration,
    /// Background estimation, segmentation and blob extraction.
    pub background: Duration,
    /// Trajectory resolution, features and chunk file writing.
    pub trajectories: Duration,
    pub clustering: Duration,
    pub inference: Duration,
    pub propagation: Duration,
}

impl PhaseTimings {
    pub const NAMES: [&'static str; 6] = ["keypoints", "background", "trajectories", "clustering", "inference", "propagation"];

    fn values(&self) -> [Duration; 6] {
        [
            self.keypoints,
            self.background,
            self.trajectories,
            self.clustering,
            self.inference,
            self.propagation,
        ]
    }

    pub fn total(&self) -> Duration {
        self.values().iter().sum()
    }

    /// Fraction of the total per phase, in [`Self::NAMES`] order.
    pub fn shares(&self) -> [f64; 6] {
        let total = self.total().as_secs_f64();
        self.values().map(|d| if total > 0.0 { d.as_secs_f64() / total } else { 0.0 })
    }

    fn add(&mut self, o: &PhaseTimings) {
        self.keypoints += o.keypoints;
        self.background += o.background;
        self.trajectories += o.trajectories;
        self.clustering += o.clustering;
        self.inference += o.inference;
        self.propagation += o.propagation;
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("#vidindex-timing v1\n");
        for ((name, d), share) in Self::NAMES.iter().zip(self.values()).zip(self.shares()) {
            s.push_str(&format!("{name} {:.6} {:.4}\n", d.as_secs_f64(), share));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    pub manifest: IndexManifest,
    pub timings: PhaseTimings,
    pub wall: Duration,
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Frames per chunk for a stream.
pub fn chunk_frames(stream: &FrameStream, cfg: &PreprocessConfig) -> usize {
    ((cfg.chunk_seconds * stream.fps()).round() as usize).max(1)
}

fn process_chunk(
    stream: &FrameStream,
    chunks: &[Chunk],
    i: usize,
    cfg: &PreprocessConfig,
    dir: &Path,
) -> Result<(ChunkEntry, ChunkRecord, PhaseTimings)> {
    let chunk = chunks[i];
    let mut t = PhaseTimings::default();
    let neighbors = (i.checked_sub(1).map(|j| &chunks[j]), chunks.get(i + 1));

    let start = Instant::now();
    let bg = resolve_background(&chunk, neighbors, stream, &cfg.background)?;
    t.background += start.elapsed();

    let per_frame: Vec<(FrameObservations, Duration, Duration)> = chunk
        .frames()
        .into_par_iter()
        .map(|p| {
            let s0 = Instant::now();
            let frame = stream.frame(p)?;
            let mask = refine(&segment(&frame, &bg, cfg.blobs.tolerance), cfg.blobs.open_radius, cfg.blobs.close_radius);
            let components = label_components(&mask, p, cfg.blobs.min_blob_area);
            let s1 = Instant::now();
            let keypoints = extract_keypoints(p, &frame, &components, &cfg.keypoints);
            let obs = FrameObservations {
                position: p,
                components,
                keypoints,
            };
            Ok((obs, s1 - s0, s1.elapsed()))
        })
        .collect::<Result<_>>()?;
    let mut observations = Vec::with_capacity(per_frame.len());
    for (obs, seg, kp) in per_frame {
        t.background += seg;
        t.keypoints += kp;
        observations.push(obs);
    }

    let start = Instant::now();
    let matches: Vec<_> = observations
        .par_windows(2)
        .map(|w| match_keypoints(&w[0].keypoints, &w[1].keypoints, cfg.keypoints.ratio))
        .collect();
    t.keypoints += start.elapsed();

    let start = Instant::now();
    let mut tracks = resolve_trajectories(chunk, &observations, &matches, &cfg.trajectories)?;
    quantize_tracks(&mut tracks.tracks);
    let features = chunk_features(&tracks);
    let record = ChunkRecord {
        tracks,
        background: bg,
        features,
    };
    let entry = write_chunk_index(dir, &record)?;
    t.trajectories += start.elapsed();
    Ok((entry, record, t))
}

fn remove_outputs(dir: &Path, created_dir: bool) {
    if created_dir {
        let _ = std::fs::remove_dir_all(dir);
        return;
    }
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            let name = e.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("chunk-") || name.starts_with(".chunk-") || name == MANIFEST_FILE || name == CLUSTERS_FILE || name == CONFIG_FILE {
                let _ = std::fs::remove_file(e.path());
            }
        }
    }
}

/// Build the index of `stream` in `dir` with `workers` threads. Persisted
/// files do not depend on the worker count. On failure every file written
/// by this run is removed.
pub fn preprocess_video(stream: &FrameStream, video: &str, cfg: &Config, workers: usize, dir: &Path) -> Result<PreprocessOutput> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(Error::NoFrames);
    }
    let wall = Instant::now();
    let created_dir = !dir.exists();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let run = || -> Result<(IndexManifest, PhaseTimings)> {
        let p = &cfg.preprocess;
        let per_chunk = chunk_frames(stream, p);
        let chunks = partition(stream.len(), per_chunk);
        let pool = thread_pool(workers)?;
        let results: Vec<(ChunkEntry, ChunkRecord, PhaseTimings)> = pool.install(|| {
            (0..chunks.len())
                .into_par_iter()
                .map(|i| {
                    process_chunk(stream, &chunks, i, p, dir).map_err(|e| Error::Chunk {
                        chunk: chunks[i].id,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<_>>()
        })?;
        let mut timings = PhaseTimings::default();
        let mut entries = Vec::with_capacity(results.len());
        let mut features = Vec::with_capacity(results.len());
        for (e, r, t) in results {
            timings.add(&t);
            entries.push(e);
            features.push(r.features);
        }

        let start = Instant::now();
        let clusters = cluster_chunks(&features, p.clustering.coverage, p.clustering.seed, p.clustering.max_iterations);
        write_atomic(&dir.join(CLUSTERS_FILE), encode_clusters(&clusters).as_bytes())?;
        write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
        let (width, height) = stream.dimensions();
        let manifest = IndexManifest {
            video: video.to_string(),
            frames: stream.len(),
            width,
            height,
            fps: stream.fps(),
            stride: stream.stride(),
            chunk_frames: per_chunk,
            fingerprint: cfg.fingerprint(),
            chunks: entries,
        };
        write_atomic(&dir.join(MANIFEST_FILE), manifest.encode().as_bytes())?;
        timings.clustering += start.elapsed();
        Ok((manifest, timings))
    };
    match run() {
        Ok((manifest, timings)) => Ok(PreprocessOutput {
            manifest,
            timings,
            wall: wall.elapsed(),
        }),
        Err(e) => {
            remove_outputs(dir, created_dir);
            Err(e)
        }
    }
}

/// Open an index and run one query with `workers` threads.
pub fn run_query(
    dir: &Path,
    detector: Arc<dyn Detector>,
    spec: &QuerySpec,
    cfg: &Config,
    workers: usize,
) -> Result<(QueryOutcome, PhaseTimings)> {
    let index = Index::open(dir)?;
    index.check_fingerprint(cfg)?;
    let data = IndexData::load(&index)?;
    let metered = MeteredDetector::new(detector);
    let pool = thread_pool(workers)?;
    let outcome = pool.install(|| execute_query(&data, &metered, spec, &cfg.query))?;
    let timings = PhaseTimings {
        inference: outcome.inference_time,
        propagation: outcome.propagation_time,
        ..PhaseTimings::default()
    };
    Ok((outcome, timings))
}

/// Index files of a directory in a stable order, for comparing runs.
pub fn index_files(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok((PathBuf::from(p.file_name().expect("file has a name")), bytes))
        })
        .collect()
}
