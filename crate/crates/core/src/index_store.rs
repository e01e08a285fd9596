//! On-disk index: one line-record file per chunk, a manifest, the chunk
//! clustering and the effective configuration.
//!
//! Chunk file layout:
//!
//! ```text
//! #vidindex-chunk v1
//! chunk <id> <start> <end>
//! bg-size <width> <height> <region_size>
//! bg <v|v/v2|-> ...                          one line per row of regions
//! blob <frame> (<x1>,<y1>) (<x2>,<y2>) <trajectory> <area>
//! traj <id> <first_frame> <last_frame>
//! kp (<x>,<y>,<frame>) (<x>,<y>,<frame>) ...  one matched keypoint track
//! feat <f1> ... <f9>
//! checksum <sha256 of everything above>
//! ```
//!
//! Frames are stream positions. Every file is written to a temporary name
//! and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::background::{BackgroundEstimate, BackgroundPixel, Chunk};
use crate::blobs::Blob;
use crate::cluster::ClusterAssignment;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::PixelBox;
use crate::trajectory::{ChunkFeatures, ChunkTracks, KeypointTrack, Trajectory, FEATURE_LEN};

pub const FORMAT_VERSION: &str = "v1";
const CHUNK_MAGIC: &str = "#vidindex-chunk";
const MANIFEST_MAGIC: &str = "#vidindex-manifest";
const CLUSTERS_MAGIC: &str = "#vidindex-clusters";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CLUSTERS_FILE: &str = "clusters.txt";
pub const CONFIG_FILE: &str = "config.toml";

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn with_checksum(mut body: String) -> String {
    let sum = sha_hex(body.as_bytes());
    let _ = writeln!(body, "checksum {sum}");
    body
}

/// Split off and verify the trailing checksum line.
fn verified_body<'a>(text: &'a str, path: &Path) -> Result<&'a str> {
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    let cut = trimmed.rfind('\n').map_or(0, |i| i + 1);
    let last = &trimmed[cut..];
    let Some(sum) = last.strip_prefix("checksum ") else {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            line: text.lines().count(),
            message: "missing checksum line".into(),
        });
    };
    let body = &text[..cut];
    if sha_hex(body.as_bytes()) != sum.trim() {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    Ok(body)
}

fn check_magic(first: Option<&str>, magic: &str, path: &Path) -> Result<()> {
    let line = first.unwrap_or("");
    let mut parts = line.split_whitespace();
    if parts.next() != Some(magic) {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected '{magic}' header"),
        });
    }
    let found = parts.next().unwrap_or("");
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: FORMAT_VERSION.into(),
            found: found.into(),
        });
    }
    Ok(())
}

/// Preprocessing output of one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRecord {
    pub tracks: ChunkTracks,
    pub background: BackgroundEstimate,
    pub features: ChunkFeatures,
}

/// Round keypoint coordinates to the stored precision so records compare
/// equal after a write/read cycle.
pub fn quantize_tracks(tracks: &mut [KeypointTrack]) {
    for t in tracks {
        for p in &mut t.points {
            p.0 = (p.0 * 100.0).round() / 100.0;
            p.1 = (p.1 * 100.0).round() / 100.0;
        }
    }
}

fn bg_token(px: &BackgroundPixel) -> String {
    if px.is_empty() {
        return "-".into();
    }
    px.values().iter().map(|v| v.to_string()).collect::<Vec<_>>().join("/")
}

pub fn chunk_file_name(id: u32) -> String {
    format!("chunk-{id:05}.txt")
}

pub fn encode_chunk(rec: &ChunkRecord) -> String {
    let c = &rec.tracks.chunk;
    let bg = &rec.background;
    let mut s = format!("{CHUNK_MAGIC} {FORMAT_VERSION}\nchunk {} {} {}\n", c.id, c.start, c.end);
    let _ = writeln!(s, "bg-size {} {} {}", bg.width, bg.height, bg.region_size);
    let rw = bg.regions_wide() as usize;
    for row in bg.regions.chunks(rw) {
        s.push_str("bg");
        for px in row {
            s.push(' ');
            s.push_str(&bg_token(px));
        }
        s.push('\n');
    }
    for frame in &rec.tracks.blobs {
        for b in frame {
            let _ = writeln!(
                s,
                "blob {} ({},{}) ({},{}) {} {}",
                b.frame,
                b.bbox.x1,
                b.bbox.y1,
                b.bbox.x2,
                b.bbox.y2,
                b.trajectory.map_or(-1, |t| t as i64),
                b.area
            );
        }
    }
    for t in &rec.tracks.trajectories {
        let _ = writeln!(s, "traj {} {} {}", t.id, t.first_frame(), t.last_frame());
    }
    for t in &rec.tracks.tracks {
        s.push_str("kp");
        for (i, p) in t.points.iter().enumerate() {
            let _ = write!(s, " ({:.2},{:.2},{})", p.0, p.1, t.start + i);
        }
        s.push('\n');
    }
    s.push_str("feat");
    for v in rec.features.0 {
        let _ = write!(s, " {v}");
    }
    s.push('\n');
    with_checksum(s)
}

struct LineReader<'a> {
    path: &'a Path,
}

impl LineReader<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Schema {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, line: usize, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(line, format!("bad number '{s}'")))
    }

    fn tuple<'s>(&self, line: usize, s: &'s str) -> Result<Vec<&'s str>> {
        s.strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .map(|s| s.split(',').collect())
            .ok_or_else(|| self.err(line, format!("expected tuple, found '{s}'")))
    }
}

pub fn decode_chunk(text: &str, path: &Path) -> Result<ChunkRecord> {
    let body = verified_body(text, path)?;
    let r = LineReader { path };
    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
    check_magic(lines.next().map(|l| l.1), CHUNK_MAGIC, path)?;

    let mut chunk = None;
    let mut bg_size = None;
    let mut bg_rows: Vec<BackgroundPixel> = Vec::new();
    let mut blobs: Vec<(usize, Blob)> = Vec::new();
    let mut trajs: Vec<(usize, u32, usize, usize)> = Vec::new();
    let mut tracks = Vec::new();
    let mut features = None;
    for (n, line) in lines {
        let mut f = line.split_whitespace();
        let tag = f.next().unwrap_or("");
        let rest: Vec<&str> = f.collect();
        match tag {
            "chunk" if rest.len() == 3 => {
                chunk = Some(Chunk {
                    id: r.num(n, rest[0])?,
                    start: r.num(n, rest[1])?,
                    end: r.num(n, rest[2])?,
                })
            }
            "bg-size" if rest.len() == 3 => {
                bg_size = Some((r.num::<u32>(n, rest[0])?, r.num::<u32>(n, rest[1])?, r.num::<u32>(n, rest[2])?))
            }
            "bg" => {
                for tok in rest {
                    let px = if tok == "-" {
                        BackgroundPixel::EMPTY
                    } else {
                        let vals = tok.split('/').map(|v| r.num::<u8>(n, v)).collect::<Result<Vec<u8>>>()?;
                        BackgroundPixel::from_values(&vals)
                    };
                    bg_rows.push(px);
                }
            }
            "blob" if rest.len() == 5 => {
                let p1 = r.tuple(n, rest[1])?;
                let p2 = r.tuple(n, rest[2])?;
                if p1.len() != 2 || p2.len() != 2 {
                    return Err(r.err(n, "blob corners must be (x,y)"));
                }
                let bbox = PixelBox::new(r.num(n, p1[0])?, r.num(n, p1[1])?, r.num(n, p2[0])?, r.num(n, p2[1])?);
                if bbox.x2 < bbox.x1 || bbox.y2 < bbox.y1 {
                    return Err(r.err(n, "blob corners out of order"));
                }
                let traj: i64 = r.num(n, rest[3])?;
                blobs.push((
                    n,
                    Blob {
                        frame: r.num(n, rest[0])?,
                        bbox,
                        area: r.num(n, rest[4])?,
                        trajectory: u32::try_from(traj).ok(),
                    },
                ));
            }
            "traj" if rest.len() == 3 => trajs.push((n, r.num(n, rest[0])?, r.num(n, rest[1])?, r.num(n, rest[2])?)),
            "kp" => {
                let mut start = None;
                let mut points = Vec::with_capacity(rest.len());
                for (i, tok) in rest.iter().enumerate() {
                    let t = r.tuple(n, tok)?;
                    if t.len() != 3 {
                        return Err(r.err(n, "keypoint must be (x,y,frame)"));
                    }
                    let frame: usize = r.num(n, t[2])?;
                    let s = *start.get_or_insert(frame);
                    if frame != s + i {
                        return Err(r.err(n, "keypoint track frames must be consecutive"));
                    }
                    points.push((r.num(n, t[0])?, r.num(n, t[1])?));
                }
                if points.len() < 2 {
                    return Err(r.err(n, "keypoint track needs at least two points"));
                }
                tracks.push(KeypointTrack {
                    start: start.unwrap_or(0),
                    points,
                });
            }
            "feat" if rest.len() == FEATURE_LEN => {
                let mut v = [0.0; FEATURE_LEN];
                for (i, s) in rest.iter().enumerate() {
                    v[i] = r.num(n, s)?;
                }
                features = Some(ChunkFeatures(v));
            }
            _ => return Err(r.err(n, format!("unrecognized record '{tag}'"))),
        }
    }
    let chunk = chunk.ok_or_else(|| r.err(2, "missing chunk record"))?;
    let (bw, bh, region) = bg_size.ok_or_else(|| r.err(3, "missing bg-size record"))?;
    let invariant = |message: String| Error::Invariant { chunk: chunk.id, message };
    if region == 0 || bg_rows.len() != (bw.div_ceil(region) * bh.div_ceil(region)) as usize {
        return Err(invariant("background size does not match its rows".into()));
    }
    let background = BackgroundEstimate {
        width: bw,
        height: bh,
        region_size: region,
        regions: bg_rows,
    };
    let features = features.ok_or_else(|| invariant("missing feature record".into()))?;

    let mut per_frame: Vec<Vec<Blob>> = vec![Vec::new(); chunk.len()];
    let mut traj_blobs: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (n, b) in blobs {
        if !chunk.contains(b.frame) {
            return Err(r.err(n, format!("blob frame {} outside chunk", b.frame)));
        }
        let Some(t) = b.trajectory else {
            return Err(invariant(format!("blob on line {n} has no trajectory")));
        };
        let slot = &mut per_frame[b.frame - chunk.start];
        traj_blobs.entry(t).or_default().push((b.frame, slot.len()));
        slot.push(b);
    }
    let mut trajectories = Vec::with_capacity(trajs.len());
    for (i, (n, id, first, last)) in trajs.into_iter().enumerate() {
        if id as usize != i {
            return Err(r.err(n, format!("trajectory ids must be dense, found {id} at {i}")));
        }
        let list = traj_blobs.remove(&id).unwrap_or_default();
        let frames: Vec<usize> = list.iter().map(|b| b.0).collect();
        if frames != (first..=last).collect::<Vec<_>>() {
            return Err(invariant(format!("trajectory {id} blobs do not cover frames {first}..={last} once each")));
        }
        trajectories.push(Trajectory {
            id,
            chunk: chunk.id,
            blobs: list,
        });
    }
    if let Some((id, _)) = traj_blobs.into_iter().next() {
        return Err(invariant(format!("blob references unknown trajectory {id}")));
    }
    for t in &tracks {
        if !chunk.contains(t.start) || !chunk.contains(t.end()) {
            return Err(invariant("keypoint track leaves the chunk".into()));
        }
    }
    Ok(ChunkRecord {
        tracks: ChunkTracks {
            chunk,
            blobs: per_frame,
            trajectories,
            tracks,
        },
        background,
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkEntry {
    pub id: u32,
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexManifest {
    pub video: String,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// Effective frame rate of the indexed stream.
    pub fps: f64,
    /// Source frames per stream position.
    pub stride: usize,
    pub chunk_frames: usize,
    pub fingerprint: String,
    pub chunks: Vec<ChunkEntry>,
}

impl IndexManifest {
    pub fn chunk(&self, id: u32) -> Chunk {
        let start = id as usize * self.chunk_frames;
        Chunk {
            id,
            start,
            end: (start + self.chunk_frames).min(self.frames) - 1,
        }
    }

    pub fn source_index(&self, position: usize) -> u64 {
        (position * self.stride) as u64
    }

    pub fn encode(&self) -> String {
        let mut s = format!("{MANIFEST_MAGIC} {FORMAT_VERSION}\n");
        let _ = writeln!(s, "video {}", self.video);
        let _ = writeln!(s, "frames {}", self.frames);
        let _ = writeln!(s, "size {} {}", self.width, self.height);
        let _ = writeln!(s, "fps {}", self.fps);
        let _ = writeln!(s, "stride {}", self.stride);
        let _ = writeln!(s, "chunk_frames {}", self.chunk_frames);
        let _ = writeln!(s, "fingerprint {}", self.fingerprint);
        for c in &self.chunks {
            let _ = writeln!(s, "chunk {} {} {} {}", c.id, c.file, c.bytes, c.sha256);
        }
        with_checksum(s)
    }

    pub fn decode(text: &str, path: &Path) -> Result<Self> {
        let body = verified_body(text, path)?;
        let r = LineReader { path };
        let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
        check_magic(lines.next().map(|l| l.1), MANIFEST_MAGIC, path)?;
        let mut m = IndexManifest {
            video: String::new(),
            frames: 0,
            width: 0,
            height: 0,
            fps: 0.0,
            stride: 1,
            chunk_frames: 0,
            fingerprint: String::new(),
            chunks: Vec::new(),
        };
        for (n, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match (f.first().copied(), f.len()) {
                (Some("video"), 2) => m.video = f[1].into(),
                (Some("frames"), 2) => m.frames = r.num(n, f[1])?,
                (Some("size"), 3) => (m.width, m.height) = (r.num(n, f[1])?, r.num(n, f[2])?),
                (Some("fps"), 2) => m.fps = r.num(n, f[1])?,
                (Some("stride"), 2) => m.stride = r.num(n, f[1])?,
                (Some("chunk_frames"), 2) => m.chunk_frames = r.num(n, f[1])?,
                (Some("fingerprint"), 2) => m.fingerprint = f[1].into(),
                (Some("chunk"), 5) => m.chunks.push(ChunkEntry {
                    id: r.num(n, f[1])?,
                    file: f[2].into(),
                    bytes: r.num(n, f[3])?,
                    sha256: f[4].into(),
                }),
                _ => return Err(r.err(n, format!("unrecognized manifest record '{line}'"))),
            }
        }
        if m.chunk_frames == 0 || m.stride == 0 {
            return Err(r.err(1, "chunk_frames and stride must be positive"));
        }
        Ok(m)
    }
}

fn nums(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

pub fn encode_clusters(a: &ClusterAssignment) -> String {
    let mut s = format!("{CLUSTERS_MAGIC} {FORMAT_VERSION}\nk {}\n", a.k());
    let _ = writeln!(s, "norm-mean {}", nums(&a.norm_mean));
    let _ = writeln!(s, "norm-std {}", nums(&a.norm_std));
    for (c, m) in a.means.iter().enumerate() {
        let _ = writeln!(s, "cluster {c} centroid {} mean {}", a.centroids[c], nums(m));
    }
    for (chunk, c) in a.assignment.iter().enumerate() {
        let _ = writeln!(s, "assign {chunk} {c}");
    }
    let _ = writeln!(s, "objective {}", nums(&a.objective));
    with_checksum(s)
}

pub fn decode_clusters(text: &str, path: &Path) -> Result<ClusterAssignment> {
    let body = verified_body(text, path)?;
    let r = LineReader { path };
    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
    check_magic(lines.next().map(|l| l.1), CLUSTERS_MAGIC, path)?;
    let vec9 = |n: usize, parts: &[&str]| -> Result<[f64; FEATURE_LEN]> {
        if parts.len() != FEATURE_LEN {
            return Err(r.err(n, "expected 9 values"));
        }
        let mut v = [0.0; FEATURE_LEN];
        for (i, p) in parts.iter().enumerate() {
            v[i] = r.num(n, p)?;
        }
        Ok(v)
    };
    let mut a = ClusterAssignment {
        assignment: Vec::new(),
        centroids: Vec::new(),
        means: Vec::new(),
        norm_mean: [0.0; FEATURE_LEN],
        norm_std: [0.0; FEATURE_LEN],
        objective: Vec::new(),
    };
    let mut k = 0usize;
    for (n, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.first().copied() {
            Some("k") if f.len() == 2 => k = r.num(n, f[1])?,
            Some("norm-mean") => a.norm_mean = vec9(n, &f[1..])?,
            Some("norm-std") => a.norm_std = vec9(n, &f[1..])?,
            Some("cluster") if f.len() == 5 + FEATURE_LEN && f[2] == "centroid" && f[4] == "mean" => {
                let id: usize = r.num(n, f[1])?;
                if id != a.centroids.len() {
                    return Err(r.err(n, "clusters must be listed in order"));
                }
                a.centroids.push(r.num(n, f[3])?);
                a.means.push(vec9(n, &f[5..])?);
            }
            Some("assign") if f.len() == 3 => {
                let chunk: usize = r.num(n, f[1])?;
                if chunk != a.assignment.len() {
                    return Err(r.err(n, "assignments must be listed in chunk order"));
                }
                a.assignment.push(r.num(n, f[2])?);
            }
            Some("objective") => {
                a.objective = f[1..].iter().map(|v| r.num(n, v)).collect::<Result<_>>()?;
            }
            _ => return Err(r.err(n, format!("unrecognized clusters record '{line}'"))),
        }
    }
    if k != a.centroids.len() || a.assignment.iter().any(|&c| c >= k) {
        return Err(r.err(2, "cluster count does not match records"));
    }
    Ok(a)
}

/// Write one chunk file and return its manifest entry.
pub fn write_chunk_index(dir: &Path, rec: &ChunkRecord) -> Result<ChunkEntry> {
    let text = encode_chunk(rec);
    let file = chunk_file_name(rec.tracks.chunk.id);
    write_atomic(&dir.join(&file), text.as_bytes())?;
    Ok(ChunkEntry {
        id: rec.tracks.chunk.id,
        file,
        bytes: text.len() as u64,
        sha256: sha_hex(text.as_bytes()),
    })
}

pub fn read_chunk_file(path: &Path) -> Result<ChunkRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_chunk(&text, path)
}

/// An index directory opened for reading.
#[derive(Debug, Clone)]
pub struct Index {
    pub dir: PathBuf,
    pub manifest: IndexManifest,
    pub clusters: ClusterAssignment,
    pub config: Config,
}

impl Index {
    pub fn open(dir: &Path) -> Result<Index> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map(|t| (t, p.clone())).map_err(|e| Error::io(&p, e))
        };
        let (mt, mp) = read(MANIFEST_FILE)?;
        let manifest = IndexManifest::decode(&mt, &mp)?;
        let (ct, cp) = read(CLUSTERS_FILE)?;
        let clusters = decode_clusters(&ct, &cp)?;
        let (cfg, _) = read(CONFIG_FILE)?;
        let config = Config::from_toml(&cfg)?;
        if config.fingerprint() != manifest.fingerprint {
            return Err(Error::Fingerprint {
                stored: manifest.fingerprint.clone(),
                current: config.fingerprint(),
            });
        }
        if clusters.assignment.len() != manifest.chunks.len() {
            return Err(Error::Schema {
                path: cp,
                line: 1,
                message: "cluster assignment does not cover every chunk".into(),
            });
        }
        Ok(Index {
            dir: dir.to_path_buf(),
            manifest,
            clusters,
            config,
        })
    }

    /// Fail unless the index was built with the same preprocessing settings.
    pub fn check_fingerprint(&self, cfg: &Config) -> Result<()> {
        if cfg.fingerprint() != self.manifest.fingerprint {
            return Err(Error::Fingerprint {
                stored: self.manifest.fingerprint.clone(),
                current: cfg.fingerprint(),
            });
        }
        Ok(())
    }

    pub fn read_chunk(&self, id: u32) -> Result<ChunkRecord> {
        let entry = self
            .manifest
            .chunks
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::Invariant {
                chunk: id,
                message: "chunk not listed in manifest".into(),
            })?;
        let path = self.dir.join(&entry.file);
        let rec = read_chunk_file(&path)?;
        if rec.tracks.chunk != self.manifest.chunk(id) {
            return Err(Error::Invariant {
                chunk: id,
                message: "chunk range differs from manifest".into(),
            });
        }
        Ok(rec)
    }
}

/// Bytes of the index by record category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StorageReport {
    pub keypoints: u64,
    pub blobs: u64,
    pub backgrounds: u64,
    pub features: u64,
    /// Chunk-file header and checksum lines.
    pub headers: u64,
    /// Manifest, clustering and configuration files.
    pub metadata: u64,
}

impl StorageReport {
    pub fn total(&self) -> u64 {
        self.keypoints + self.blobs + self.backgrounds + self.features + self.headers + self.metadata
    }

    pub fn records(&self) -> u64 {
        self.keypoints + self.blobs + self.backgrounds + self.features
    }

    pub fn keypoint_share(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.keypoints as f64 / self.total() as f64
        }
    }
}

/// Account every byte of the index directory to a category. Temporary files
/// are ignored.
pub fn storage_report(dir: &Path) -> Result<StorageReport> {
    let mut rep = StorageReport::default();
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(rep),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut names: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    for p in names {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with('.') {
            continue;
        }
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if !name.starts_with("chunk-") {
            rep.metadata += bytes.len() as u64;
            continue;
        }
        for line in bytes.split_inclusive(|&b| b == b'\n') {
            let n = line.len() as u64;
            let tag = line.split(|&b| b == b' ').next().unwrap_or(&[]);
            match tag {
                b"kp" => rep.keypoints += n,
                b"blob" | b"traj" => rep.blobs += n,
                b"bg" | b"bg-size" => rep.backgrounds += n,
                b"feat" | b"feat\n" => rep.features += n,
                _ => rep.headers += n,
            }
        }
    }
    Ok(rep)
}
