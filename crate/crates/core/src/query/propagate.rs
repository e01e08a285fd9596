//! Spreading detector results from representative frames to the rest of a
//! chunk along blob trajectories.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::place::{anchor_ratios, place_box, Placement, PlacementMethod};
use crate::blobs::Blob;
use crate::config::QueryConfig;
use crate::detector::Detection;
use crate::geometry::{BBox, PixelBox};
use crate::metrics::{average_precision, count_frame_accuracy, QueryType};
use crate::trajectory::ChunkTracks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// The detector ran on this frame.
    Direct,
    Propagated,
    /// Propagated, with at least one box placed by translation only.
    Translated,
    /// No trajectory passes through the frame; only static detections.
    StaticBroadcast,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Direct => "detector-direct",
            Provenance::Propagated => "propagated",
            Provenance::Translated => "propagated-translation",
            Provenance::StaticBroadcast => "static-broadcast",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Provenance::Direct, Provenance::Propagated, Provenance::Translated, Provenance::StaticBroadcast]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

/// Overlap in pixels between a box and a blob, both read as inclusive pixel
/// spans.
fn pixel_overlap(b: &BBox, blob: &PixelBox) -> f64 {
    let w = b.x2.min(blob.x2 as f64) - b.x1.max(blob.x1 as f64) + 1.0;
    let h = b.y2.min(blob.y2 as f64) - b.y1.max(blob.y1 as f64) + 1.0;
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

/// Pair every detection with the blob of largest non-zero overlap; ties go
/// to the lower blob index. `None` marks an entirely static object.
pub fn pair_detections(dets: &[BBox], blobs: &[Blob]) -> Vec<Option<usize>> {
    dets.iter()
        .map(|d| {
            let mut best: Option<(f64, usize)> = None;
            for (i, b) in blobs.iter().enumerate() {
                let v = pixel_overlap(d, &b.bbox);
                if v > 0.0 && best.map_or(true, |(bv, _)| v > bv) {
                    best = Some((v, i));
                }
            }
            best.map(|(_, i)| i)
        })
        .collect()
}

/// Nearest of the sorted `reps` to `f`, earlier on ties.
pub fn nearest_rep(reps: &[usize], f: usize) -> Option<usize> {
    let i = reps.partition_point(|&r| r < f);
    let after = reps.get(i).copied();
    let before = i.checked_sub(1).map(|j| reps[j]);
    match (before, after) {
        (Some(b), Some(a)) => Some(if f - b <= a - f { b } else { a }),
        (b, a) => b.or(a),
    }
}

/// Detections of one representative frame split by pairing.
struct RepFrame<'a> {
    frame: usize,
    by_trajectory: BTreeMap<u32, Vec<&'a Detection>>,
    statics: Vec<&'a Detection>,
}

/// Per-frame output of propagation over one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOutput {
    pub start: usize,
    pub counts: Vec<u32>,
    /// Scored boxes per frame; only filled for detection queries.
    pub boxes: Vec<Vec<(BBox, f64)>>,
    pub provenance: Vec<Provenance>,
}

impl ChunkOutput {
    /// Output that reports the detector's results on every frame.
    pub fn direct(start: usize, dets: &[Vec<Detection>]) -> Self {
        ChunkOutput {
            start,
            counts: dets.iter().map(|d| d.len() as u32).collect(),
            boxes: dets.iter().map(|d| d.iter().map(|x| (x.bbox, x.score)).collect()).collect(),
            provenance: vec![Provenance::Direct; dets.len()],
        }
    }

    /// Per-frame accuracy against reference detections for each frame.
    pub fn score(&self, query_type: QueryType, reference: &[Vec<Detection>], iou_threshold: f64) -> Vec<f64> {
        reference
            .iter()
            .enumerate()
            .map(|(i, truth)| match query_type {
                QueryType::Classification => ((self.counts[i] > 0) == !truth.is_empty()) as u8 as f64,
                QueryType::Counting => count_frame_accuracy(self.counts[i], truth.len() as u32),
                QueryType::Detection => {
                    let t: Vec<BBox> = truth.iter().map(|d| d.bbox).collect();
                    average_precision(&self.boxes[i], &t, iou_threshold)
                }
            })
            .collect()
    }
}

fn inside_blob(b: &PixelBox, x: f64, y: f64) -> bool {
    x >= b.x1 as f64 - 0.5 && x <= b.x2 as f64 + 0.5 && y >= b.y1 as f64 - 0.5 && y <= b.y2 as f64 + 0.5
}

/// Keypoints of one detection on its representative frame.
struct Anchored {
    source: BBox,
    score: f64,
    /// Indices into the chunk's keypoint tracks.
    tracks: Vec<usize>,
    anchors: Vec<(f64, f64)>,
    /// Blob box on the representative frame, for the blob-center fallback.
    blob: PixelBox,
}

fn anchor_detection(tracks: &ChunkTracks, frame: usize, det: &Detection, blob: &PixelBox) -> Anchored {
    let mut ids = Vec::new();
    let mut pts = Vec::new();
    for (i, t) in tracks.tracks.iter().enumerate() {
        if let Some((x, y)) = t.at(frame) {
            if det.bbox.contains(x, y) && inside_blob(blob, x, y) {
                ids.push(i);
                pts.push((x, y));
            }
        }
    }
    let anchors = anchor_ratios(&det.bbox, &pts).unwrap_or_default();
    if anchors.is_empty() {
        ids.clear();
    }
    Anchored {
        source: det.bbox,
        score: det.score,
        tracks: ids,
        anchors,
        blob: *blob,
    }
}

/// Place an anchored detection on frame `to`. `None` when every anchoring
/// keypoint's track ended before reaching `to`.
fn place_anchored(
    tracks: &ChunkTracks,
    a: &Anchored,
    from: usize,
    to: usize,
    target_blob: &PixelBox,
    cfg: &QueryConfig,
) -> Option<Placement> {
    if a.tracks.is_empty() {
        // No keypoints to anchor on: follow the blob center.
        let c0 = a.blob.to_bbox().center();
        let c1 = target_blob.to_bbox().center();
        return Some(Placement {
            bbox: a.source.translate(c1.0 - c0.0, c1.1 - c0.1),
            objective: 0.0,
            method: PlacementMethod::Translation,
        });
    }
    let mut anchors = Vec::new();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (k, &t) in a.tracks.iter().enumerate() {
        let track = &tracks.tracks[t];
        if let (Some(p0), Some(p1)) = (track.at(from), track.at(to)) {
            anchors.push(a.anchors[k]);
            src.push(p0);
            dst.push(p1);
        }
    }
    if dst.is_empty() {
        return None;
    }
    Some(place_box(
        &a.source,
        &anchors,
        &src,
        &dst,
        cfg.min_anchor_keypoints,
        cfg.optimizer_iterations,
        cfg.optimizer_tolerance,
    ))
}

/// Box of a detection propagated from `from` to `to` along trajectory
/// `trajectory`, or `None` if the keypoint chain breaks first.
pub fn propagate_box(
    tracks: &ChunkTracks,
    trajectory: u32,
    from: usize,
    det: &Detection,
    to: usize,
    cfg: &QueryConfig,
) -> Option<Placement> {
    let t = tracks.trajectories.get(trajectory as usize)?;
    let blob_at = |f: usize| {
        t.blobs
            .iter()
            .find(|b| b.0 == f)
            .map(|&(f, i)| tracks.blobs_at(f)[i].bbox)
    };
    let a = anchor_detection(tracks, from, det, &blob_at(from)?);
    place_anchored(tracks, &a, from, to, &blob_at(to)?, cfg)
}

/// Spread the detections of `reps` (label-filtered, keyed by frame
/// position) over the chunk.
///
/// A trajectory takes, on each of its frames, the detections paired with
/// it on the nearest representative frame it passes through. Static
/// detections reach the frames whose nearest representative frame is
/// theirs. Boxes are only placed when `boxes` is set.
pub fn propagate_chunk(
    tracks: &ChunkTracks,
    reps: &BTreeMap<usize, Vec<Detection>>,
    boxes: bool,
    dims: (u32, u32),
    cfg: &QueryConfig,
) -> ChunkOutput {
    let chunk = tracks.chunk;
    let n = chunk.len();
    let rep_frames: Vec<usize> = reps.keys().copied().collect();
    let paired: BTreeMap<usize, RepFrame> = reps
        .iter()
        .map(|(&frame, dets)| {
            let blobs = tracks.blobs_at(frame);
            let bbs: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
            let mut rf = RepFrame {
                frame,
                by_trajectory: BTreeMap::new(),
                statics: Vec::new(),
            };
            for (d, p) in dets.iter().zip(pair_detections(&bbs, blobs)) {
                match p.and_then(|i| blobs[i].trajectory) {
                    Some(t) => rf.by_trajectory.entry(t).or_default().push(d),
                    None => rf.statics.push(d),
                }
            }
            (frame, rf)
        })
        .collect();

    let mut out = ChunkOutput {
        start: chunk.start,
        counts: vec![0; n],
        boxes: vec![Vec::new(); n],
        provenance: vec![Provenance::StaticBroadcast; n],
    };
    for f in chunk.frames() {
        if let Some(r) = nearest_rep(&rep_frames, f) {
            let statics = &paired[&r].statics;
            out.counts[f - chunk.start] += statics.len() as u32;
            if boxes {
                out.boxes[f - chunk.start].extend(statics.iter().map(|d| (d.bbox, d.score)));
            }
        }
    }

    // Placement jobs: (frame offset, boxes, any translation fallback).
    let mut jobs: Vec<(u32, usize, usize)> = Vec::new();
    for t in &tracks.trajectories {
        let reps_t: Vec<usize> = rep_frames
            .iter()
            .copied()
            .filter(|&r| r >= t.first_frame() && r <= t.last_frame())
            .collect();
        for &(f, _) in &t.blobs {
            let off = f - chunk.start;
            if out.provenance[off] == Provenance::StaticBroadcast {
                out.provenance[off] = Provenance::Propagated;
            }
            let Some(r) = nearest_rep(&reps_t, f) else { continue };
            let k = paired[&r].by_trajectory.get(&t.id).map_or(0, |v| v.len());
            out.counts[off] += k as u32;
            if boxes && k > 0 {
                jobs.push((t.id, f, r));
            }
        }
    }
    for &r in &rep_frames {
        out.provenance[r - chunk.start] = Provenance::Direct;
    }
    if !boxes {
        return out;
    }

    // Anchor every paired detection once.
    let anchored: BTreeMap<(usize, u32), Vec<Anchored>> = paired
        .values()
        .flat_map(|rf| {
            rf.by_trajectory.iter().map(move |(&t, dets)| {
                let traj = &tracks.trajectories[t as usize];
                let &(_, bi) = traj.blobs.iter().find(|b| b.0 == rf.frame).expect("rep frame on trajectory");
                let blob = tracks.blobs_at(rf.frame)[bi].bbox;
                ((rf.frame, t), dets.iter().map(|d| anchor_detection(tracks, rf.frame, d, &blob)).collect())
            })
        })
        .collect();

    let placed: Vec<(usize, Vec<(BBox, f64)>, bool)> = jobs
        .par_iter()
        .map(|&(t, f, r)| {
            let traj = &tracks.trajectories[t as usize];
            let blob_at = |g: usize| tracks.blobs_at(g)[traj.blobs[g - traj.first_frame()].1].bbox;
            if f == r {
                let dets = &paired[&r].by_trajectory[&t];
                return (f, dets.iter().map(|d| (d.bbox, d.score)).collect(), false);
            }
            // Nearest covering representative frame first, then the one on
            // the other side when every chain from the nearest breaks.
            let reps_t: Vec<usize> = rep_frames
                .iter()
                .copied()
                .filter(|&x| x >= traj.first_frame() && x <= traj.last_frame())
                .collect();
            let i = reps_t.partition_point(|&x| x < f);
            let other = if r < f { reps_t.get(i).copied() } else { i.checked_sub(1).map(|j| reps_t[j]) };
            for src in std::iter::once(r).chain(other) {
                let Some(list) = anchored.get(&(src, t)) else { continue };
                let mut got = Vec::new();
                let mut fallback = false;
                for a in list {
                    if let Some(p) = place_anchored(tracks, a, src, f, &blob_at(f), cfg) {
                        fallback |= p.method == PlacementMethod::Translation;
                        got.push((p.bbox.clip(dims.0, dims.1), a.score));
                    }
                }
                if !got.is_empty() || src != r {
                    return (f, got, fallback);
                }
            }
            (f, Vec::new(), false)
        })
        .collect();
    for (f, b, fallback) in placed {
        let off = f - chunk.start;
        out.boxes[off].extend(b);
        if fallback && out.provenance[off] == Provenance::Propagated {
            out.provenance[off] = Provenance::Translated;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::Chunk;
    use crate::trajectory::{KeypointTrack, Trajectory};

    fn det(frame: usize, b: BBox) -> Detection {
        Detection {
            frame: frame as u64,
            label: "car".into(),
            score: 1.0,
            bbox: b,
        }
    }

    fn blob(frame: usize, x: u32, y: u32, w: u32, h: u32, t: u32) -> Blob {
        Blob {
            frame,
            bbox: PixelBox::new(x, y, x + w - 1, y + h - 1),
            area: w * h,
            trajectory: Some(t),
        }
    }

    /// One blob translating right by 1 px/frame over `len` frames, with a
    /// grid of keypoints tracked across the whole chunk.
    fn moving_chunk(len: usize) -> ChunkTracks {
        let chunk = Chunk { id: 0, start: 0, end: len - 1 };
        let blobs: Vec<Vec<Blob>> = (0..len).map(|f| vec![blob(f, 10 + f as u32, 20, 20, 10, 0)]).collect();
        let tracks = (0..4)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| KeypointTrack {
                start: 0,
                points: (0..len).map(|f| (12.0 + 5.0 * i as f64 + f as f64, 22.0 + 3.0 * j as f64)).collect(),
            })
            .collect();
        ChunkTracks {
            chunk,
            blobs,
            trajectories: vec![Trajectory { id: 0, chunk: 0, blobs: (0..len).map(|f| (f, 0)).collect() }],
            tracks,
        }
    }

    #[test]
    fn pairing_prefers_largest_overlap() {
        let blobs = [blob(0, 0, 0, 10, 3, 0), blob(0, 0, 3, 10, 7, 1)];
        let d = BBox::new(0.0, 0.0, 9.0, 9.0);
        assert_eq!(pair_detections(&[d], &blobs), vec![Some(1)]);
        assert_eq!(pair_detections(&[blobs[0].bbox.to_bbox()], &blobs), vec![Some(0)]);
        assert_eq!(pair_detections(&[BBox::new(50.0, 50.0, 60.0, 60.0)], &blobs), vec![None]);
    }

    #[test]
    fn nearest_rep_breaks_ties_early() {
        assert_eq!(nearest_rep(&[10, 50], 30), Some(10));
        assert_eq!(nearest_rep(&[10, 50], 31), Some(50));
        assert_eq!(nearest_rep(&[10, 50], 0), Some(10));
        assert_eq!(nearest_rep(&[], 3), None);
    }

    #[test]
    fn counts_follow_nearest_rep_segments() {
        let tracks = moving_chunk(60);
        let b = |f: usize| tracks.blobs_at(f)[0].bbox.to_bbox();
        let mut reps = BTreeMap::new();
        reps.insert(10, vec![det(10, b(10))]);
        reps.insert(50, vec![det(50, b(50)), det(50, b(50))]);
        let out = propagate_chunk(&tracks, &reps, false, (200, 100), &QueryConfig::default());
        for f in 0..60usize {
            // Brute-force nearest with earlier tie.
            let expect = if f.abs_diff(10) <= f.abs_diff(50) { 1 } else { 2 };
            assert_eq!(out.counts[f], expect, "frame {f}");
        }
        assert_eq!(out.provenance[10], Provenance::Direct);
        assert_eq!(out.provenance[11], Provenance::Propagated);
    }

    #[test]
    fn unpaired_trajectory_is_discarded_and_statics_broadcast() {
        let tracks = moving_chunk(20);
        let parked = det(5, BBox::new(150.0, 80.0, 170.0, 90.0));
        let mut reps = BTreeMap::new();
        reps.insert(5, vec![parked.clone()]);
        let out = propagate_chunk(&tracks, &reps, true, (200, 100), &QueryConfig::default());
        assert!(out.counts.iter().all(|&c| c == 1));
        assert!(out.boxes.iter().all(|b| b == &vec![(parked.bbox, 1.0)]));
    }

    #[test]
    fn rigid_translation_propagates_exactly() {
        let tracks = moving_chunk(31);
        let src = tracks.blobs_at(0)[0].bbox.to_bbox();
        let mut reps = BTreeMap::new();
        reps.insert(0, vec![det(0, src)]);
        let out = propagate_chunk(&tracks, &reps, true, (200, 100), &QueryConfig::default());
        for f in 0..31 {
            let truth = tracks.blobs_at(f)[0].bbox.to_bbox();
            assert_eq!(out.boxes[f].len(), 1);
            assert!(out.boxes[f][0].0.iou(&truth) >= 0.99, "frame {f}");
        }
    }

    #[test]
    fn broken_chain_falls_back_to_other_side() {
        let mut tracks = moving_chunk(21);
        // Every keypoint track stops after frame 4.
        for t in &mut tracks.tracks {
            t.points.truncate(5);
        }
        let b = |f: usize| tracks.blobs_at(f)[0].bbox.to_bbox();
        let mut reps = BTreeMap::new();
        reps.insert(0, vec![det(0, b(0))]);
        reps.insert(20, vec![det(20, b(20))]);
        let out = propagate_chunk(&tracks, &reps, true, (200, 100), &QueryConfig::default());
        assert!(out.boxes[3][0].0.iou(&b(3)) > 0.99);
        // Frame 8 is nearer to 0, but the chain from 0 is broken. Frame 20
        // has no keypoints, so its box follows the blob center.
        assert_eq!(out.boxes[8].len(), 1);
        assert!(out.boxes[8][0].0.iou(&b(8)) > 0.99);
        assert_eq!(out.provenance[8], Provenance::Translated);
        assert_eq!(out.provenance[3], Provenance::Propagated);
    }

    #[test]
    fn direct_output_scores_perfectly() {
        let dets = vec![vec![det(0, BBox::new(0.0, 0.0, 5.0, 5.0))], vec![]];
        let out = ChunkOutput::direct(0, &dets);
        for q in QueryType::ALL {
            assert_eq!(out.score(q, &dets, 0.5), vec![1.0, 1.0]);
        }
    }
}
