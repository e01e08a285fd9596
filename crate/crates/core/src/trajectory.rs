//! Blob trajectories within a chunk, built from keypoint matches between
//! consecutive frames.
//!
//! Blobs on consecutive frames are linked when enough keypoint matches
//! connect them. A blob whose keypoints flow into several blobs on the next
//! frame is split into one sub-blob per destination, and the split is
//! carried backwards so that objects that travelled together keep separate
//! identities. Trajectories then follow the remaining one-to-one links.

use std::collections::BTreeMap;

use crate::background::Chunk;
use crate::blobs::{Blob, Components};
use crate::config::TrajectoryConfig;
use crate::error::{Error, Result};
use crate::geometry::PixelBox;
use crate::keypoints::{Keypoint, KeypointMatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub support: u32,
}

/// Blob-level links between frame `frame` and the next one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    pub frame: usize,
    pub links: Vec<Link>,
}

impl Correspondence {
    pub fn out_degree(&self, from: usize) -> usize {
        self.links.iter().filter(|l| l.from == from).count()
    }

    pub fn in_degree(&self, to: usize) -> usize {
        self.links.iter().filter(|l| l.to == to).count()
    }
}

fn count_links(
    matches: &[KeypointMatch],
    owner_a: &[Option<usize>],
    owner_b: &[Option<usize>],
    min_support: u32,
) -> Vec<Link> {
    let mut support: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for m in matches {
        if let (Some(u), Some(v)) = (owner_a[m.a], owner_b[m.b]) {
            *support.entry((u, v)).or_default() += 1;
        }
    }
    support
        .into_iter()
        .filter(|&(_, s)| s >= min_support)
        .map(|((from, to), support)| Link { from, to, support })
        .collect()
}

/// Link blobs of two consecutive frames through the owners of matched
/// keypoints. Links with fewer than `min_support` matches are dropped.
pub fn build_correspondences(
    frame: usize,
    matches: &[KeypointMatch],
    kps_i: &[Keypoint],
    kps_j: &[Keypoint],
    min_support: u32,
) -> Correspondence {
    let a: Vec<Option<usize>> = kps_i.iter().map(|k| k.blob).collect();
    let b: Vec<Option<usize>> = kps_j.iter().map(|k| k.blob).collect();
    Correspondence {
        frame,
        links: count_links(matches, &a, &b, min_support),
    }
}

/// One frame of a chunk as produced by blob extraction and keypoint
/// detection.
#[derive(Debug, Clone)]
pub struct FrameObservations {
    pub position: usize,
    pub components: Components,
    pub keypoints: Vec<Keypoint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub id: u32,
    pub chunk: u32,
    /// `(frame position, blob index on that frame)`, consecutive frames.
    pub blobs: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn first_frame(&self) -> usize {
        self.blobs[0].0
    }

    pub fn last_frame(&self) -> usize {
        self.blobs[self.blobs.len() - 1].0
    }
}

/// Positions of one keypoint followed through consecutive matches.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTrack {
    pub start: usize,
    pub points: Vec<(f64, f64)>,
}

impl KeypointTrack {
    pub fn end(&self) -> usize {
        self.start + self.points.len() - 1
    }

    pub fn at(&self, frame: usize) -> Option<(f64, f64)> {
        frame.checked_sub(self.start).and_then(|i| self.points.get(i)).copied()
    }
}

/// Everything preprocessing keeps for one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkTracks {
    pub chunk: Chunk,
    /// Blobs per frame of the chunk, each with its trajectory id set.
    pub blobs: Vec<Vec<Blob>>,
    pub trajectories: Vec<Trajectory>,
    pub tracks: Vec<KeypointTrack>,
}

impl ChunkTracks {
    pub fn blobs_at(&self, position: usize) -> &[Blob] {
        &self.blobs[position - self.chunk.start]
    }

    pub fn empty(chunk: Chunk) -> Self {
        ChunkTracks {
            chunk,
            blobs: vec![Vec::new(); chunk.len()],
            trajectories: Vec::new(),
            tracks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    bbox: PixelBox,
    pixels: Vec<(u32, u32)>,
}

struct FrameState {
    position: usize,
    nodes: Vec<Node>,
    owner: Vec<Option<usize>>,
    points: Vec<(f64, f64)>,
}

impl FrameState {
    fn new(obs: &FrameObservations) -> Self {
        FrameState {
            position: obs.position,
            nodes: (0..obs.components.blobs.len())
                .map(|i| Node {
                    bbox: obs.components.blobs[i].bbox,
                    pixels: obs.components.pixels_of(i),
                })
                .collect(),
            owner: obs.keypoints.iter().map(|k| k.blob).collect(),
            points: obs.keypoints.iter().map(|k| (k.x, k.y)).collect(),
        }
    }

    fn nearest(&self, labeled: &[(usize, usize)], x: f64, y: f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for &(k, group) in labeled {
            let (kx, ky) = self.points[k];
            let d = (kx - x).powi(2) + (ky - y).powi(2);
            if d < best.0 {
                best = (d, group);
            }
        }
        best.1
    }

    /// Split node `u` into one part per destination. `dest[k]` gives the
    /// destination group of keypoint `k` when it is known.
    fn split(&mut self, u: usize, groups: usize, dest: &BTreeMap<usize, usize>) {
        let members: Vec<usize> = (0..self.owner.len()).filter(|&k| self.owner[k] == Some(u)).collect();
        let labeled: Vec<(usize, usize)> = members
            .iter()
            .filter_map(|k| dest.get(k).map(|&g| (*k, g)))
            .collect();
        let mut kp_group = BTreeMap::new();
        for &k in &members {
            let g = dest
                .get(&k)
                .copied()
                .unwrap_or_else(|| self.nearest(&labeled, self.points[k].0, self.points[k].1));
            kp_group.insert(k, g);
        }
        let mut parts: Vec<Vec<(u32, u32)>> = vec![Vec::new(); groups];
        for &(x, y) in &self.nodes[u].pixels {
            parts[self.nearest(&labeled, x as f64, y as f64)].push((x, y));
        }
        let mut ids = Vec::with_capacity(groups);
        for (g, pixels) in parts.into_iter().enumerate() {
            let bbox = if let Some(&(x, y)) = pixels.first() {
                let mut b = PixelBox::point(x, y);
                pixels.iter().for_each(|&(x, y)| b.extend(x, y));
                b
            } else {
                // No pixel is closer to this group; fall back to its keypoints.
                let mut b: Option<PixelBox> = None;
                for (&k, _) in kp_group.iter().filter(|(_, &kg)| kg == g) {
                    let (x, y) = (self.points[k].0.round() as u32, self.points[k].1.round() as u32);
                    match &mut b {
                        Some(b) => b.extend(x, y),
                        None => b = Some(PixelBox::point(x, y)),
                    }
                }
                b.unwrap_or(self.nodes[u].bbox)
            };
            let node = Node { bbox, pixels };
            if g == 0 {
                self.nodes[u] = node;
                ids.push(u);
            } else {
                ids.push(self.nodes.len());
                self.nodes.push(node);
            }
        }
        for (k, g) in kp_group {
            self.owner[k] = Some(ids[g]);
        }
    }
}

/// Chain matches across consecutive frames into keypoint tracks of at least
/// two points.
pub fn keypoint_tracks(frames: &[FrameObservations], matches: &[Vec<KeypointMatch>]) -> Vec<KeypointTrack> {
    let mut tracks = Vec::new();
    // `open[k]` is the track index currently ending at keypoint k.
    let mut open: Vec<Option<usize>> = vec![None; frames.first().map_or(0, |f| f.keypoints.len())];
    for (f, pair) in matches.iter().enumerate() {
        let mut next_open = vec![None; frames[f + 1].keypoints.len()];
        for m in pair {
            let t = match open[m.a] {
                Some(t) => t,
                None => {
                    let k = &frames[f].keypoints[m.a];
                    tracks.push(KeypointTrack {
                        start: frames[f].position,
                        points: vec![(k.x, k.y)],
                    });
                    tracks.len() - 1
                }
            };
            let k = &frames[f + 1].keypoints[m.b];
            tracks[t].points.push((k.x, k.y));
            next_open[m.b] = Some(t);
        }
        open = next_open;
    }
    tracks
}

/// Resolve blobs of one chunk into trajectories.
///
/// `matches[i]` holds the keypoint matches between `frames[i]` and
/// `frames[i + 1]`.
pub fn resolve_trajectories(
    chunk: Chunk,
    frames: &[FrameObservations],
    matches: &[Vec<KeypointMatch>],
    cfg: &TrajectoryConfig,
) -> Result<ChunkTracks> {
    assert_eq!(frames.len(), chunk.len());
    assert_eq!(matches.len() + 1, frames.len().max(1));
    let mut state: Vec<FrameState> = frames.iter().map(FrameState::new).collect();
    let links_at = |state: &[FrameState], f: usize| {
        count_links(&matches[f], &state[f].owner, &state[f + 1].owner, cfg.min_support)
    };

    let mut converged = false;
    for _ in 0..cfg.max_passes.max(1) {
        let mut changed = false;
        for f in (0..matches.len()).rev() {
            let links = links_at(&state, f);
            let mut targets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for l in &links {
                targets.entry(l.from).or_default().push(l.to);
            }
            for (u, dests) in targets.into_iter().filter(|(_, d)| d.len() >= 2) {
                let next_owner = &state[f + 1].owner;
                let dest: BTreeMap<usize, usize> = matches[f]
                    .iter()
                    .filter(|m| state[f].owner[m.a] == Some(u))
                    .filter_map(|m| {
                        let v = next_owner[m.b]?;
                        dests.iter().position(|&d| d == v).map(|g| (m.a, g))
                    })
                    .collect();
                state[f].split(u, dests.len(), &dest);
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(chunk.id));
    }

    // Canonical order of nodes on each frame.
    for st in &mut state {
        let mut order: Vec<usize> = (0..st.nodes.len()).collect();
        order.sort_by_key(|&i| {
            let b = st.nodes[i].bbox;
            (b.y1, b.x1, b.y2, b.x2, st.nodes[i].pixels.len())
        });
        let mut rank = vec![0; order.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        st.nodes = order.iter().map(|&i| st.nodes[i].clone()).collect();
        st.owner.iter_mut().for_each(|o| *o = o.map(|i| rank[i]));
    }

    let mut ids: Vec<Vec<Option<u32>>> = state.iter().map(|s| vec![None; s.nodes.len()]).collect();
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let start = |trajectories: &mut Vec<Trajectory>, pos: usize, node: usize| {
        trajectories.push(Trajectory {
            id: trajectories.len() as u32,
            chunk: chunk.id,
            blobs: vec![(pos, node)],
        });
        trajectories.len() as u32 - 1
    };
    for f in 0..state.len() {
        if f > 0 {
            let links = links_at(&state, f - 1);
            let out = |u: usize| links.iter().filter(|l| l.from == u).count();
            let inn = |v: usize| links.iter().filter(|l| l.to == v).count();
            for l in &links {
                if out(l.from) == 1 && inn(l.to) == 1 {
                    let t = ids[f - 1][l.from].expect("earlier frame assigned");
                    ids[f][l.to] = Some(t);
                    trajectories[t as usize].blobs.push((state[f].position, l.to));
                }
            }
        }
        for v in 0..state[f].nodes.len() {
            if ids[f][v].is_none() {
                ids[f][v] = Some(start(&mut trajectories, state[f].position, v));
            }
        }
    }

    let blobs = state
        .iter()
        .zip(&ids)
        .map(|(st, ids)| {
            st.nodes
                .iter()
                .zip(ids)
                .map(|(n, id)| Blob {
                    frame: st.position,
                    bbox: n.bbox,
                    area: n.pixels.len() as u32,
                    trajectory: *id,
                })
                .collect()
        })
        .collect();
    Ok(ChunkTracks {
        chunk,
        blobs,
        trajectories,
        tracks: keypoint_tracks(frames, matches),
    })
}

pub const FEATURE_LEN: usize = 9;

/// Model-agnostic summary of a chunk: blob area quantiles (p10, p50, p90),
/// trajectory length quantiles, mean and p90 of blobs per frame, and the
/// number of overlapping blob pairs from distinct trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkFeatures(pub [f64; FEATURE_LEN]);

/// Nearest-rank quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted[(q * (sorted.len() - 1) as f64).round() as usize]
}

fn boxes_overlap(a: &PixelBox, b: &PixelBox) -> bool {
    a.x1 <= b.x2 && b.x1 <= a.x2 && a.y1 <= b.y2 && b.y1 <= a.y2
}

pub fn chunk_features(tracks: &ChunkTracks) -> ChunkFeatures {
    let mut areas: Vec<f64> = tracks.blobs.iter().flatten().map(|b| b.area as f64).collect();
    if areas.is_empty() {
        return ChunkFeatures([0.0; FEATURE_LEN]);
    }
    areas.sort_by(f64::total_cmp);
    let mut lengths: Vec<f64> = tracks.trajectories.iter().map(|t| t.len() as f64).collect();
    lengths.sort_by(f64::total_cmp);
    let mut per_frame: Vec<f64> = tracks.blobs.iter().map(|b| b.len() as f64).collect();
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    per_frame.sort_by(f64::total_cmp);
    let mut intersections = 0usize;
    for frame in &tracks.blobs {
        for (i, a) in frame.iter().enumerate() {
            for b in &frame[i + 1..] {
                if a.trajectory != b.trajectory && boxes_overlap(&a.bbox, &b.bbox) {
                    intersections += 1;
                }
            }
        }
    }
    ChunkFeatures([
        quantile(&areas, 0.1),
        quantile(&areas, 0.5),
        quantile(&areas, 0.9),
        quantile(&lengths, 0.1),
        quantile(&lengths, 0.5),
        quantile(&lengths, 0.9),
        mean,
        quantile(&per_frame, 0.9),
        intersections as f64,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blobs::{label_components, BinaryMask};
    use crate::keypoints::{match_keypoints, DESCRIPTOR_LEN};

    const SIZE: u32 = 16;
    /// Keypoint offsets inside an actor square.
    const OFFSETS: [(f64, f64); 5] = [(3.0, 3.0), (12.0, 4.0), (8.0, 8.0), (4.0, 12.0), (12.0, 12.0)];

    fn descriptor(actor: usize, k: usize) -> [u8; DESCRIPTOR_LEN] {
        let mut d = [0u8; DESCRIPTOR_LEN];
        d[actor * OFFSETS.len() + k] = 200;
        d
    }

    /// Frame with square actors at the given top-left corners, each carrying
    /// the same five distinctive keypoints.
    fn observe(position: usize, actors: &[(usize, u32, u32)]) -> FrameObservations {
        let mut mask = BinaryMask::new(220, 60);
        for &(_, x, y) in actors {
            for yy in y..y + SIZE {
                for xx in x..x + SIZE {
                    mask.set(xx, yy, true);
                }
            }
        }
        let mut components = label_components(&mask, position, 16);
        components.blobs.iter_mut().for_each(|b| b.frame = position);
        let mut keypoints = Vec::new();
        for &(id, x, y) in actors {
            for (k, &(dx, dy)) in OFFSETS.iter().enumerate() {
                let (kx, ky) = (x as f64 + dx, y as f64 + dy);
                keypoints.push(Keypoint {
                    frame: position,
                    x: kx,
                    y: ky,
                    scale: 1.0,
                    orientation: 0.0,
                    descriptor: descriptor(id, k),
                    blob: components.label_at(kx as u32, ky as u32),
                });
            }
        }
        FrameObservations {
            position,
            components,
            keypoints,
        }
    }

    fn run(frames: Vec<FrameObservations>) -> ChunkTracks {
        let matches: Vec<Vec<KeypointMatch>> = frames
            .windows(2)
            .map(|w| match_keypoints(&w[0].keypoints, &w[1].keypoints, 0.75))
            .collect();
        let chunk = Chunk {
            id: 0,
            start: frames[0].position,
            end: frames[frames.len() - 1].position,
        };
        resolve_trajectories(chunk, &frames, &matches, &TrajectoryConfig::default()).unwrap()
    }

    #[test]
    fn single_actor_single_trajectory() {
        let frames = (0..60).map(|t| observe(t, &[(0, 10 + 2 * t as u32, 20)])).collect();
        let r = run(frames);
        assert_eq!(r.trajectories.len(), 1);
        assert_eq!(r.trajectories[0].len(), 60);
        assert_eq!(r.tracks.len(), OFFSETS.len());
        assert!(r.tracks.iter().all(|t| t.points.len() == 60));
        let f = chunk_features(&r);
        assert_eq!(f.0, [256.0, 256.0, 256.0, 60.0, 60.0, 60.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn correspondence_requires_support() {
        let a = observe(0, &[(0, 10, 20)]);
        let b = observe(1, &[(0, 12, 20)]);
        let m = match_keypoints(&a.keypoints, &b.keypoints, 0.75);
        let c = build_correspondences(0, &m, &a.keypoints, &b.keypoints, 3);
        assert_eq!(c.links, vec![Link { from: 0, to: 0, support: 5 }]);
        let c = build_correspondences(0, &m[..2], &a.keypoints, &b.keypoints, 3);
        assert!(c.links.is_empty());
    }

    #[test]
    fn split_event_is_one_to_two() {
        // Two actors side by side (touching, one blob), then apart.
        let a = observe(0, &[(0, 40, 20), (1, 56, 20)]);
        let b = observe(1, &[(0, 30, 20), (1, 70, 20)]);
        assert_eq!(a.components.blobs.len(), 1);
        let m = match_keypoints(&a.keypoints, &b.keypoints, 0.75);
        let c = build_correspondences(0, &m, &a.keypoints, &b.keypoints, 3);
        assert_eq!(c.out_degree(0), 2);
    }

    #[test]
    fn departure_and_arrival_are_disjoint() {
        let frames = (0..60)
            .map(|t| {
                if t < 30 {
                    observe(t, &[(0, 10 + t as u32, 20)])
                } else if t >= 35 {
                    observe(t, &[(1, 100 + t as u32, 20)])
                } else {
                    observe(t, &[])
                }
            })
            .collect();
        let r = run(frames);
        assert_eq!(r.trajectories.len(), 2);
        assert_eq!((r.trajectories[0].first_frame(), r.trajectories[0].last_frame()), (0, 29));
        assert_eq!((r.trajectories[1].first_frame(), r.trajectories[1].last_frame()), (35, 59));
    }

    fn crossing_positions(t: u32) -> [(usize, u32, u32); 2] {
        [(0, 20 + 2 * t, 20), (1, 150 - 2 * t, 22)]
    }

    #[test]
    fn crossing_actors_keep_identities() {
        let frames: Vec<FrameObservations> = (0..60).map(|t| observe(t as usize, &crossing_positions(t))).collect();
        let merged: Vec<usize> = frames
            .iter()
            .filter(|f| f.components.blobs.len() == 1)
            .map(|f| f.position)
            .collect();
        assert!(!merged.is_empty());
        let r = run(frames);
        assert_eq!(r.trajectories.len(), 2, "{:?}", r.trajectories.iter().map(|t| (t.first_frame(), t.last_frame())).collect::<Vec<_>>());
        for t in &r.trajectories {
            assert_eq!((t.first_frame(), t.last_frame()), (0, 59));
        }
        // Oracle: the ground-truth actor under each trajectory's blob at
        // frame 0 is the one under it on every frame.
        for traj in &r.trajectories {
            let (_, b0) = traj.blobs[0];
            let bb = r.blobs[0][b0].bbox;
            let actor = crossing_positions(0).iter().position(|a| a.1 == bb.x1).unwrap();
            for &(pos, bi) in &traj.blobs {
                let b = r.blobs[pos][bi].bbox;
                let (_, ax, ay) = crossing_positions(pos as u32)[actor];
                let (cx, cy) = (ax as f64 + 8.0, ay as f64 + 8.0);
                assert!(b.contains(cx, cy), "frame {pos}: {b:?} misses actor {actor}");
            }
        }
        // Split sub-blobs are disjoint.
        for &pos in &merged {
            assert_eq!(r.blobs[pos].len(), 2);
        }
        assert!(chunk_features(&r).0[8] > 0.0);
    }

    #[test]
    fn every_blob_in_exactly_one_trajectory() {
        let frames: Vec<FrameObservations> = (0..40)
            .map(|t| {
                let mut a = vec![(0, 10 + t as u32, 5)];
                if t % 7 != 3 {
                    a.push((1, 120, 30));
                }
                observe(t as usize, &a)
            })
            .collect();
        let r = run(frames);
        let mut seen = BTreeMap::new();
        for t in &r.trajectories {
            for w in t.blobs.windows(2) {
                assert_eq!(w[1].0, w[0].0 + 1);
            }
            for &b in &t.blobs {
                assert!(seen.insert(b, t.id).is_none());
            }
        }
        let total: usize = r.blobs.iter().map(|f| f.len()).sum();
        assert_eq!(seen.len(), total);
        for (&(pos, bi), &id) in &seen {
            assert_eq!(r.blobs[pos][bi].trajectory, Some(id));
        }
    }

    #[test]
    fn empty_chunk_features_are_zero() {
        let chunk = Chunk { id: 0, start: 0, end: 9 };
        assert_eq!(chunk_features(&ChunkTracks::empty(chunk)).0, [0.0; FEATURE_LEN]);
    }

    #[test]
    fn quantile_nearest_rank() {
        let v: Vec<f64> = (1..=11).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.1), 2.0);
        assert_eq!(quantile(&v, 0.5), 6.0);
        assert_eq!(quantile(&v, 0.9), 10.0);
    }
}
