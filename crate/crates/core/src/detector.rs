//! Detector abstraction: per-frame labeled boxes from a precomputed file or
//! from synthetic ground truth, with per-frame invocation metering.
//!
//! Detection file format (text, one record per line):
//!
//! ```text
//! #vidindex-detections v1 frames=<N> labels=<l1,l2,...>
//! frame,label,score,x1,y1,x2,y2
//! 0,car,0.97,50,40,69,59
//! ```
//!
//! Frames are source frame indices below `N`. A frame with no rows has no
//! detections.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame_source::GroundTruth;
use crate::geometry::BBox;

pub const DETECTIONS_HEADER: &str = "#vidindex-detections";
pub const DETECTIONS_VERSION: &str = "v1";
const COLUMNS: &str = "frame,label,score,x1,y1,x2,y2";

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Source frame index.
    pub frame: u64,
    pub label: String,
    pub score: f64,
    pub bbox: BBox,
}

pub trait Detector: Send + Sync {
    fn id(&self) -> String;
    fn labels(&self) -> Vec<String>;
    fn detect(&self, frame: u64) -> Result<Vec<Detection>>;
}

/// Frames a detector has been run on. The invocation count is the cost
/// measure for queries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DetectorProfile {
    pub detector: String,
    pub frames_invoked: BTreeSet<u64>,
}

impl DetectorProfile {
    pub fn invocations(&self) -> usize {
        self.frames_invoked.len()
    }
}

/// Caching wrapper that runs the inner detector at most once per frame.
pub struct MeteredDetector {
    inner: Arc<dyn Detector>,
    cache: Mutex<BTreeMap<u64, Arc<Vec<Detection>>>>,
}

impl MeteredDetector {
    pub fn new(inner: Arc<dyn Detector>) -> Self {
        MeteredDetector {
            inner,
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.inner.labels()
    }

    pub fn detect(&self, frame: u64) -> Result<Arc<Vec<Detection>>> {
        if let Some(hit) = self.cache.lock().expect("detector cache poisoned").get(&frame) {
            return Ok(hit.clone());
        }
        let dets = Arc::new(self.inner.detect(frame)?);
        let mut cache = self.cache.lock().expect("detector cache poisoned");
        Ok(cache.entry(frame).or_insert(dets).clone())
    }

    pub fn invocations(&self) -> usize {
        self.cache.lock().expect("detector cache poisoned").len()
    }

    pub fn profile(&self) -> DetectorProfile {
        DetectorProfile {
            detector: self.inner.id(),
            frames_invoked: self.cache.lock().expect("detector cache poisoned").keys().copied().collect(),
        }
    }
}

pub fn filter_by_label(dets: &[Detection], label: &str) -> Vec<Detection> {
    dets.iter().filter(|d| d.label == label).cloned().collect()
}

/// Inconsistency added to ground truth: small boxes are dropped more often
/// and all boxes jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub seed: u64,
    /// Dropout probability for a box of zero area; falls linearly to 0 at
    /// `area_ref`.
    pub max_dropout: f64,
    pub area_ref: f64,
    /// Standard deviation of per-coordinate box jitter in pixels.
    pub jitter: f64,
}

impl Injection {
    pub fn none() -> Self {
        Injection {
            seed: 0,
            max_dropout: 0.0,
            area_ref: 1.0,
            jitter: 0.0,
        }
    }

    pub fn is_none(&self) -> bool {
        self.max_dropout <= 0.0 && self.jitter <= 0.0
    }
}

/// Detector reading synthetic ground truth, optionally with injected
/// inconsistency. Results depend only on `(seed, frame, actor)`.
pub struct OracleDetector {
    truth: Arc<GroundTruth>,
    injection: Injection,
}

impl OracleDetector {
    pub fn new(truth: Arc<GroundTruth>, injection: Injection) -> Self {
        OracleDetector { truth, injection }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Detector for OracleDetector {
    fn id(&self) -> String {
        if self.injection.is_none() {
            "oracle".to_string()
        } else {
            let i = &self.injection;
            format!(
                "oracle-injected(seed={},dropout={},area={},jitter={})",
                i.seed, i.max_dropout, i.area_ref, i.jitter
            )
        }
    }

    fn labels(&self) -> Vec<String> {
        self.truth.labels()
    }

    fn detect(&self, frame: u64) -> Result<Vec<Detection>> {
        let objects = self.truth.frames.get(frame as usize).ok_or(Error::MissingFrame(frame))?;
        let inj = &self.injection;
        let mut out = Vec::with_capacity(objects.len());
        for o in objects {
            if inj.is_none() {
                out.push(Detection {
                    frame,
                    label: o.label.clone(),
                    score: 1.0,
                    bbox: o.bbox,
                });
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(inj.seed ^ mix(frame)) ^ o.actor_id as u64));
            let area = o.bbox.area();
            let drop_p = inj.max_dropout * (1.0 - area / inj.area_ref).max(0.0);
            if rand::Rng::gen::<f64>(&mut rng) < drop_p {
                continue;
            }
            let noise = Normal::new(0.0, inj.jitter.max(0.0)).expect("valid sigma");
            let mut c = [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2];
            for v in &mut c {
                *v += noise.sample(&mut rng);
            }
            let b = BBox::new(c[0].min(c[2]), c[1].min(c[3]), c[0].max(c[2]), c[1].max(c[3]))
                .clip(self.truth.width, self.truth.height);
            out.push(Detection {
                frame,
                label: o.label.clone(),
                score: 0.5 + 0.5 * (area / inj.area_ref).min(1.0),
                bbox: b,
            });
        }
        Ok(out)
    }
}

/// Detector serving a detection file.
#[derive(Debug, Clone)]
pub struct FileDetector {
    path: PathBuf,
    frames: u64,
    labels: Vec<String>,
    by_frame: BTreeMap<u64, Vec<Detection>>,
}

impl FileDetector {
    pub fn frames(&self) -> u64 {
        self.frames
    }
}

impl Detector for FileDetector {
    fn id(&self) -> String {
        format!("file:{}", self.path.display())
    }

    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn detect(&self, frame: u64) -> Result<Vec<Detection>> {
        if frame >= self.frames {
            return Err(Error::MissingFrame(frame));
        }
        Ok(self.by_frame.get(&frame).cloned().unwrap_or_default())
    }
}

/// Load and validate a detection file. With `dims`, boxes must lie within
/// a frame of that size.
pub fn load_precomputed(path: &Path, dims: Option<(u32, u32)>) -> Result<FileDetector> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, path, dims)
}

pub fn parse_detections(text: &str, path: &Path, dims: Option<(u32, u32)>) -> Result<FileDetector> {
    let err = |line: usize, message: String| Error::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(DETECTIONS_HEADER) {
        return Err(err(1, format!("expected '{DETECTIONS_HEADER}' header")));
    }
    let version = parts.next().unwrap_or("");
    if version != DETECTIONS_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: DETECTIONS_VERSION.into(),
            found: version.into(),
        });
    }
    let mut frames = None;
    let mut labels: Option<Vec<String>> = None;
    for p in parts {
        match p.split_once('=') {
            Some(("frames", v)) => frames = Some(v.parse::<u64>().map_err(|_| err(1, format!("bad frame count '{v}'")))?),
            Some(("labels", v)) => labels = Some(v.split(',').filter(|s| !s.is_empty()).map(String::from).collect()),
            _ => return Err(err(1, format!("unknown header field '{p}'"))),
        }
    }
    let frames = frames.ok_or_else(|| err(1, "missing frames= in header".into()))?;
    match lines.next() {
        Some((_, cols)) if cols.trim() == COLUMNS => {}
        Some((n, _)) => return Err(err(n, format!("expected column header '{COLUMNS}'"))),
        None => return Err(err(2, "missing column header".into())),
    }
    let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    let mut seen_labels = BTreeSet::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(err(n, format!("expected 7 fields, found {}", f.len())));
        }
        let frame: u64 = f[0].parse().map_err(|_| err(n, format!("bad frame '{}'", f[0])))?;
        if frame >= frames {
            return Err(err(n, format!("frame {frame} outside 0..{frames}")));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = f[i].parse().map_err(|_| err(n, format!("bad number '{}'", f[i])))?;
            if !v.is_finite() {
                return Err(err(n, format!("non-finite value '{}'", f[i])));
            }
            Ok(v)
        };
        let label = f[1].to_string();
        if label.is_empty() {
            return Err(err(n, "empty label".into()));
        }
        if let Some(ls) = &labels {
            if !ls.contains(&label) {
                return Err(err(n, format!("label '{label}' not declared in header")));
            }
        }
        let score = num(2)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(err(n, format!("score {score} outside [0, 1]")));
        }
        let bbox = BBox::new(num(3)?, num(4)?, num(5)?, num(6)?);
        if bbox.x2 < bbox.x1 || bbox.y2 < bbox.y1 {
            return Err(err(n, "box has x2 < x1 or y2 < y1".into()));
        }
        if let Some((w, h)) = dims {
            if bbox.x1 < 0.0 || bbox.y1 < 0.0 || bbox.x2 > w as f64 || bbox.y2 > h as f64 {
                return Err(err(n, format!("box outside {w}x{h} frame")));
            }
        }
        seen_labels.insert(label.clone());
        by_frame.entry(frame).or_default().push(Detection { frame, label, score, bbox });
    }
    Ok(FileDetector {
        path: path.to_path_buf(),
        frames,
        labels: labels.unwrap_or_else(|| seen_labels.into_iter().collect()),
        by_frame,
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Render detections for frames `0..frames` in the file format.
pub fn format_detections(frames: u64, labels: &[String], dets: &[Detection]) -> String {
    let mut s = format!("{DETECTIONS_HEADER} {DETECTIONS_VERSION} frames={frames} labels={}\n{COLUMNS}\n", labels.join(","));
    for d in dets {
        let b = &d.bbox;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            d.frame,
            d.label,
            num(d.score),
            num(b.x1),
            num(b.y1),
            num(b.x2),
            num(b.y2)
        );
    }
    s
}

/// Run `detector` on every frame and write the results as a detection file.
pub fn write_detections(path: &Path, frames: u64, detector: &dyn Detector) -> Result<()> {
    let mut all = Vec::new();
    for f in 0..frames {
        all.extend(detector.detect(f)?);
    }
    crate::index_store::write_atomic(path, format_detections(frames, &detector.labels(), &all).as_bytes())
}
