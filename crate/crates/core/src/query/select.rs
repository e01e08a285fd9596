//! Representative frame selection and max_distance calibration.

use std::collections::BTreeMap;

use super::propagate::{propagate_chunk, ChunkOutput};
use crate::config::QueryConfig;
use crate::detector::Detection;
use crate::metrics::QueryType;
use crate::trajectory::ChunkTracks;

/// Frames of one chunk the detector runs on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepFramePlan {
    pub chunk: u32,
    /// `None` means every frame of the chunk.
    pub max_distance: Option<usize>,
    pub frames: Vec<usize>,
}

/// Greedy cover: repeatedly pick the frame that covers the most uncovered
/// blobs, earliest on ties. A blob is covered by a chosen frame that is at
/// most `max_distance` away and contains the blob's trajectory. A chunk
/// without blobs gets its middle frame.
pub fn select_rep_frames(tracks: &ChunkTracks, max_distance: usize) -> Vec<usize> {
    let chunk = tracks.chunk;
    let trajs = &tracks.trajectories;
    if trajs.is_empty() {
        return vec![chunk.start + chunk.len() / 2];
    }
    let n = chunk.len();
    let mut present: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (ti, t) in trajs.iter().enumerate() {
        for f in t.first_frame()..=t.last_frame() {
            present[f - chunk.start].push(ti);
        }
    }
    let mut uncovered: Vec<Vec<bool>> = trajs.iter().map(|t| vec![true; t.len()]).collect();
    let mut prefix: Vec<Vec<u32>> = vec![Vec::new(); trajs.len()];
    let mut dirty = vec![true; trajs.len()];
    let mut remaining: usize = trajs.iter().map(|t| t.len()).sum();
    let window = |ti: usize, f: usize| {
        let t = &trajs[ti];
        let lo = f.saturating_sub(max_distance).max(t.first_frame()) - t.first_frame();
        let hi = (f + max_distance).min(t.last_frame()) - t.first_frame();
        (lo, hi)
    };
    let mut chosen = Vec::new();
    while remaining > 0 {
        for ti in 0..trajs.len() {
            if dirty[ti] {
                let p = &mut prefix[ti];
                p.clear();
                p.push(0);
                let mut acc = 0;
                for &u in &uncovered[ti] {
                    acc += u as u32;
                    p.push(acc);
                }
                dirty[ti] = false;
            }
        }
        let mut best = (0u32, 0usize);
        for off in 0..n {
            let f = chunk.start + off;
            let gain: u32 = present[off]
                .iter()
                .map(|&ti| {
                    let (lo, hi) = window(ti, f);
                    prefix[ti][hi + 1] - prefix[ti][lo]
                })
                .sum();
            if gain > best.0 {
                best = (gain, f);
            }
        }
        let f = best.1;
        for &ti in &present[f - chunk.start] {
            let (lo, hi) = window(ti, f);
            for u in &mut uncovered[ti][lo..=hi] {
                *u = false;
            }
            dirty[ti] = true;
        }
        remaining -= best.0 as usize;
        chosen.push(f);
    }
    chosen.sort_unstable();
    chosen
}

/// Whether every blob is within `max_distance` of a chosen frame on its
/// trajectory.
pub fn plan_is_valid(tracks: &ChunkTracks, plan: &RepFramePlan) -> bool {
    if plan.frames.is_empty() {
        return false;
    }
    let Some(d) = plan.max_distance else {
        return plan.frames.len() == tracks.chunk.len();
    };
    tracks.trajectories.iter().all(|t| {
        t.blobs.iter().all(|&(f, _)| {
            plan.frames
                .iter()
                .any(|&r| r >= t.first_frame() && r <= t.last_frame() && r.abs_diff(f) <= d)
        })
    })
}

/// Representative frames for `max_distance`. Among the greedy covers for
/// every grid value up to `max_distance` the smallest is kept (each is
/// valid for the larger distance), so the frame count never grows with
/// `max_distance`.
pub fn plan_chunk(tracks: &ChunkTracks, max_distance: Option<usize>, grid: &[usize]) -> RepFramePlan {
    let chunk = tracks.chunk;
    let frames = match max_distance {
        None => chunk.frames().collect(),
        Some(d) => {
            let mut candidates: Vec<usize> = grid.iter().copied().filter(|&g| g < d).collect();
            candidates.push(d);
            monotone_covers(tracks, &candidates).remove(&d).expect("requested distance present")
        }
    };
    RepFramePlan {
        chunk: chunk.id,
        max_distance,
        frames,
    }
}

/// Greedy covers for every distance in `distances`, each replaced by a
/// smaller cover from a shorter distance when one exists.
fn monotone_covers(tracks: &ChunkTracks, distances: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut sorted = distances.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = BTreeMap::new();
    let mut best: Option<Vec<usize>> = None;
    for d in sorted {
        let cover = select_rep_frames(tracks, d);
        if best.as_ref().map_or(true, |b| cover.len() < b.len()) {
            best = Some(cover);
        }
        out.insert(d, best.clone().expect("set above"));
    }
    out
}

/// Propagate detector output restricted to `plan`'s frames. `dets` holds
/// the label-filtered detections of every chunk frame.
pub fn simulate_plan(
    tracks: &ChunkTracks,
    plan: &RepFramePlan,
    dets: &[Vec<Detection>],
    query_type: QueryType,
    dims: (u32, u32),
    cfg: &QueryConfig,
) -> ChunkOutput {
    let start = tracks.chunk.start;
    if plan.max_distance.is_none() {
        return ChunkOutput::direct(start, dets);
    }
    let reps: BTreeMap<usize, Vec<Detection>> = plan.frames.iter().map(|&f| (f, dets[f - start].clone())).collect();
    propagate_chunk(tracks, &reps, query_type == QueryType::Detection, dims, cfg)
}

/// Outcome of calibrating one cluster on its centroid chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub cluster: usize,
    pub centroid: u32,
    /// Largest candidate meeting the target; `None` when none did and every
    /// frame must be processed.
    pub max_distance: Option<usize>,
    /// `(candidate, achieved accuracy)` in evaluation order.
    pub log: Vec<(usize, f64)>,
}

/// Try grid values from largest to smallest and keep the first whose
/// propagated results reach `target` against the detector's own results
/// on every frame of the chunk.
pub fn calibrate_max_distance(
    tracks: &ChunkTracks,
    dets: &[Vec<Detection>],
    query_type: QueryType,
    target: f64,
    dims: (u32, u32),
    cfg: &QueryConfig,
) -> (Option<usize>, Vec<(usize, f64)>) {
    let mut grid = cfg.max_distance_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    let covers = monotone_covers(tracks, &grid);
    let mut log = Vec::new();
    for &d in grid.iter().rev() {
        let plan = RepFramePlan {
            chunk: tracks.chunk.id,
            max_distance: Some(d),
            frames: covers[&d].clone(),
        };
        let out = simulate_plan(tracks, &plan, dets, query_type, dims, cfg);
        let acc = out.score(query_type, dets, cfg.iou_threshold);
        let mean = acc.iter().sum::<f64>() / acc.len().max(1) as f64;
        log.push((d, mean));
        if mean >= target {
            return (Some(d), log);
        }
    }
    (None, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::Chunk;
    use crate::blobs::Blob;
    use crate::geometry::PixelBox;
    use crate::trajectory::Trajectory;
    use proptest::prelude::*;

    /// Chunk of `len` frames with trajectories given as inclusive frame spans.
    fn chunk_with(len: usize, spans: &[(usize, usize)]) -> ChunkTracks {
        let chunk = Chunk { id: 0, start: 0, end: len - 1 };
        let mut tracks = ChunkTracks::empty(chunk);
        for (id, &(a, b)) in spans.iter().enumerate() {
            let mut list = Vec::new();
            for f in a..=b {
                let slot = &mut tracks.blobs[f];
                list.push((f, slot.len()));
                slot.push(Blob {
                    frame: f,
                    bbox: PixelBox::new(id as u32 * 10, 0, id as u32 * 10 + 5, 5),
                    area: 36,
                    trajectory: Some(id as u32),
                });
            }
            tracks.trajectories.push(Trajectory { id: id as u32, chunk: 0, blobs: list });
        }
        tracks
    }

    /// Smallest valid cover by exhaustive search over frame subsets of
    /// increasing size.
    fn brute_force_min_cover(tracks: &ChunkTracks, d: usize) -> usize {
        let n = tracks.chunk.len();
        for size in 1..=n {
            let mut idx: Vec<usize> = (0..size).collect();
            loop {
                let plan = RepFramePlan { chunk: 0, max_distance: Some(d), frames: idx.clone() };
                if plan_is_valid(tracks, &plan) {
                    return size;
                }
                // Next combination.
                let mut i = size;
                while i > 0 && idx[i - 1] == n - size + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                idx[i - 1] += 1;
                for j in i..size {
                    idx[j] = idx[j - 1] + 1;
                }
            }
        }
        n
    }

    #[test]
    fn single_long_trajectory() {
        let tracks = chunk_with(101, &[(0, 100)]);
        let reps = select_rep_frames(&tracks, 30);
        assert!(reps.len() <= 2, "{reps:?}");
        let plan = RepFramePlan { chunk: 0, max_distance: Some(30), frames: reps };
        assert!(plan_is_valid(&tracks, &plan));
        assert_eq!(brute_force_min_cover(&chunk_with(21, &[(0, 20)]), 6), 2);
    }

    #[test]
    fn zero_distance_selects_every_blob_frame() {
        let tracks = chunk_with(30, &[(3, 7), (5, 12), (20, 21)]);
        let expect: Vec<usize> = (3..=12).chain(20..=21).collect();
        assert_eq!(select_rep_frames(&tracks, 0), expect);
    }

    #[test]
    fn empty_chunk_gets_middle_frame() {
        let tracks = chunk_with(40, &[]);
        assert_eq!(select_rep_frames(&tracks, 5), vec![20]);
    }

    #[test]
    fn static_scene_calibrates_to_largest_candidate() {
        let tracks = chunk_with(40, &[]);
        let cfg = QueryConfig::default();
        let dets = vec![Vec::new(); 40];
        let (d, log) = calibrate_max_distance(&tracks, &dets, QueryType::Counting, 0.95, (100, 100), &cfg);
        assert_eq!(d, Some(900));
        assert_eq!(log.len(), 1);
    }

    fn arb_spans() -> impl Strategy<Value = Vec<(usize, usize)>> {
        proptest::collection::vec((0usize..16, 0usize..8), 0..5)
            .prop_map(|v| v.into_iter().map(|(a, l)| (a, (a + l).min(15))).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn plans_are_valid_monotone_and_near_minimal(spans in arb_spans()) {
            let tracks = chunk_with(16, &spans);
            let grid = QueryConfig::default().max_distance_grid;
            let mut last = usize::MAX;
            for &d in &grid {
                let plan = plan_chunk(&tracks, Some(d), &grid);
                prop_assert!(plan_is_valid(&tracks, &plan));
                prop_assert!(plan.frames.len() <= last);
                last = plan.frames.len();
            }
            if !spans.is_empty() {
                for d in [1usize, 3] {
                    let greedy = select_rep_frames(&tracks, d).len();
                    let best = brute_force_min_cover(&tracks, d);
                    prop_assert!(greedy >= best);
                    // Greedy set cover stays within a log factor.
                    prop_assert!(greedy <= best * 3, "greedy {} best {}", greedy, best);
                }
            }
        }
    }
}
