//! Conservative per-chunk background estimation from per-pixel intensity
//! histograms.
//!
//! A pixel's background is the set of histogram peaks that can be shown to
//! belong to the scene. Pixels whose peaks cannot be confirmed by extending
//! the observation window into neighboring chunks get an empty background
//! and are treated as foreground downstream.

use std::ops::Range;

use crate::config::BackgroundConfig;
use crate::error::Result;
use crate::frame_source::{Frame, FrameStream};

pub const BIN_WIDTH: u32 = 8;
pub const BINS: usize = 32;
pub const MAX_BACKGROUND_VALUES: usize = 4;

/// Contiguous, inclusive range of stream positions processed as one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Chunk {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frames(&self) -> Range<usize> {
        self.start..self.end + 1
    }

    pub fn contains(&self, position: usize) -> bool {
        position >= self.start && position <= self.end
    }
}

/// Split `frame_count` positions into chunks of `chunk_len` frames; the last
/// chunk may be shorter.
pub fn partition(frame_count: usize, chunk_len: usize) -> Vec<Chunk> {
    let chunk_len = chunk_len.max(1);
    (0..frame_count)
        .step_by(chunk_len)
        .enumerate()
        .map(|(id, start)| Chunk {
            id: id as u32,
            start,
            end: (start + chunk_len).min(frame_count) - 1,
        })
        .collect()
}

/// Per-region intensity histograms over a window of frames. Each bin also
/// keeps the sum of its values so peaks can report a mean intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelHistogram {
    pub width: u32,
    pub height: u32,
    pub region_size: u32,
    frame_width: u32,
    frame_height: u32,
    window: u32,
    counts: Vec<u32>,
    sums: Vec<u32>,
}

impl PixelHistogram {
    pub fn new(frame_width: u32, frame_height: u32, region_size: u32) -> Self {
        let width = frame_width.div_ceil(region_size);
        let height = frame_height.div_ceil(region_size);
        let n = (width * height) as usize * BINS;
        PixelHistogram {
            width,
            height,
            region_size,
            frame_width,
            frame_height,
            window: 0,
            counts: vec![0; n],
            sums: vec![0; n],
        }
    }

    pub fn window_len(&self) -> u32 {
        self.window
    }

    pub fn regions(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn add_frame(&mut self, frame: &Frame) {
        self.window += 1;
        if self.region_size == 1 {
            for (i, &v) in frame.pixels.iter().enumerate() {
                let b = i * BINS + (v as u32 / BIN_WIDTH) as usize;
                self.counts[b] += 1;
                self.sums[b] += v as u32;
            }
            return;
        }
        for (i, v) in region_means(frame, self.region_size).into_iter().enumerate() {
            let b = i * BINS + (v as u32 / BIN_WIDTH) as usize;
            self.counts[b] += 1;
            self.sums[b] += v as u32;
        }
    }

    /// Combine two windows over the same geometry. Associative and
    /// commutative.
    pub fn merge(&mut self, other: &PixelHistogram) {
        assert_eq!(
            (self.width, self.height, self.region_size),
            (other.width, other.height, other.region_size)
        );
        self.window += other.window;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
    }

    pub fn counts(&self, region: usize) -> &[u32] {
        &self.counts[region * BINS..(region + 1) * BINS]
    }

    pub fn sums(&self, region: usize) -> &[u32] {
        &self.sums[region * BINS..(region + 1) * BINS]
    }

    pub fn peaks(&self, region: usize, peak_fraction: f64) -> Vec<Peak> {
        detect_peaks(self.counts(region), self.sums(region), peak_fraction)
    }
}

pub(crate) fn region_means(frame: &Frame, region: u32) -> Vec<u8> {
    let rw = frame.width.div_ceil(region);
    let rh = frame.height.div_ceil(region);
    let mut sum = vec![0u32; (rw * rh) as usize];
    let mut n = vec![0u32; (rw * rh) as usize];
    for y in 0..frame.height {
        for x in 0..frame.width {
            let r = ((y / region) * rw + x / region) as usize;
            sum[r] += frame.get(x, y) as u32;
            n[r] += 1;
        }
    }
    sum.iter()
        .zip(&n)
        .map(|(&s, &c)| ((s + c / 2) / c) as u8)
        .collect()
}

/// Accumulate histograms for stream positions in `range`.
pub fn build_histograms(
    frames: &FrameStream,
    range: Range<usize>,
    region_size: u32,
) -> Result<PixelHistogram> {
    let (w, h) = frames.dimensions();
    let mut hist = PixelHistogram::new(w, h, region_size);
    for p in range {
        hist.add_frame(&frames.frame(p)?);
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub bin: usize,
    /// Count in the peak bin and its two neighbors.
    pub mass: u32,
    /// Mean intensity of the values counted in `mass`.
    pub value: u8,
}

/// Local maxima of a histogram whose neighborhood mass reaches
/// `peak_fraction` of the window, heaviest first.
pub fn detect_peaks(counts: &[u32], sums: &[u32], peak_fraction: f64) -> Vec<Peak> {
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    let at = |i: isize| -> u32 {
        if i < 0 || i as usize >= counts.len() {
            0
        } else {
            counts[i as usize]
        }
    };
    let mut peaks = Vec::new();
    for b in 0..counts.len() {
        let c = counts[b];
        let i = b as isize;
        // Plateaus resolve to their leftmost bin.
        if c == 0 || c <= at(i - 1) || c < at(i + 1) {
            continue;
        }
        let lo = b.saturating_sub(1);
        let hi = (b + 1).min(counts.len() - 1);
        let mass: u32 = counts[lo..=hi].iter().sum();
        if (mass as f64) < peak_fraction * total as f64 {
            continue;
        }
        let sum: u64 = sums[lo..=hi].iter().map(|&s| s as u64).sum();
        let value = ((sum + mass as u64 / 2) / mass as u64).min(255) as u8;
        peaks.push(Peak { bin: b, mass, value });
    }
    peaks.sort_by(|a, b| b.mass.cmp(&a.mass).then(a.bin.cmp(&b.bin)));
    peaks
}

/// Background values for one pixel (or region); no values means EMPTY.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct BackgroundPixel {
    len: u8,
    values: [u8; MAX_BACKGROUND_VALUES],
}

impl BackgroundPixel {
    pub const EMPTY: BackgroundPixel = BackgroundPixel {
        len: 0,
        values: [0; MAX_BACKGROUND_VALUES],
    };

    pub fn from_values(values: &[u8]) -> Self {
        let mut px = BackgroundPixel::EMPTY;
        for &v in values.iter().take(MAX_BACKGROUND_VALUES) {
            px.values[px.len as usize] = v;
            px.len += 1;
        }
        px
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn values(&self) -> &[u8] {
        &self.values[..self.len as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackgroundEstimate {
    pub width: u32,
    pub height: u32,
    pub region_size: u32,
    /// One entry per region, row-major over regions.
    pub regions: Vec<BackgroundPixel>,
}

impl BackgroundEstimate {
    pub fn uniform(width: u32, height: u32, px: BackgroundPixel) -> Self {
        BackgroundEstimate {
            width,
            height,
            region_size: 1,
            regions: vec![px; (width * height) as usize],
        }
    }

    pub fn regions_wide(&self) -> u32 {
        self.width.div_ceil(self.region_size)
    }

    pub fn at(&self, x: u32, y: u32) -> &BackgroundPixel {
        let r = self.region_size;
        &self.regions[((y / r) * self.regions_wide() + x / r) as usize]
    }

    pub fn empty_count(&self) -> usize {
        self.regions.iter().filter(|p| p.is_empty()).count()
    }
}

/// Shares of each confirmed background value across the windows that
/// justified it (chunk first, then each extension in order).
pub type Justification = Vec<Vec<f64>>;

struct Windows<'a> {
    chunk: &'a PixelHistogram,
    forward: Option<PixelHistogram>,
    both: Option<PixelHistogram>,
}

fn window_shares(hist: &PixelHistogram, region: usize, fraction: f64) -> Vec<Peak> {
    hist.peaks(region, fraction)
}

/// Share of the window's peak mass held by the peak matching `bin` (±1 bin).
fn share_of(bin: usize, peaks: &[Peak]) -> f64 {
    let total: u32 = peaks.iter().map(|p| p.mass).sum();
    if total == 0 {
        return 0.0;
    }
    peaks
        .iter()
        .filter(|p| p.bin.abs_diff(bin) <= 1)
        .min_by(|a, b| a.bin.abs_diff(bin).cmp(&b.bin.abs_diff(bin)).then(b.mass.cmp(&a.mass)))
        .map_or(0.0, |p| p.mass as f64 / total as f64)
}

fn resolve_region(
    w: &Windows<'_>,
    region: usize,
    cfg: &BackgroundConfig,
) -> (BackgroundPixel, Justification) {
    let f = cfg.peak_fraction;
    let slack = cfg.rise_slack;
    let empty = (BackgroundPixel::EMPTY, Vec::new());
    let peaks0 = window_shares(w.chunk, region, f);
    let shares0: Vec<f64> = peaks0.iter().map(|p| share_of(p.bin, &peaks0)).collect();
    let peaks1 = w.forward.as_ref().map(|h| window_shares(h, region, f));
    let peaks2 = w.both.as_ref().map(|h| window_shares(h, region, f));

    match peaks0.len() {
        0 => empty,
        1 => {
            // A single peak still has to hold its share when neighbors are
            // added; an object parked only for this chunk loses it.
            let p = peaks0[0];
            let mut trail = vec![shares0[0]];
            for ext in [&peaks1, &peaks2].into_iter().flatten() {
                let s = share_of(p.bin, ext);
                if s < trail[trail.len() - 1] - slack {
                    return empty;
                }
                trail.push(s);
            }
            (BackgroundPixel::from_values(&[p.value]), vec![trail])
        }
        _ => {
            let Some(peaks1) = peaks1 else {
                return empty;
            };
            let mut alive: Vec<(Peak, Vec<f64>)> = peaks0
                .iter()
                .zip(&shares0)
                .filter_map(|(p, &s0)| {
                    let s1 = share_of(p.bin, &peaks1);
                    (s1 > 0.0 && s1 >= s0 - slack).then(|| (*p, vec![s0, s1]))
                })
                .collect();
            match alive.len() {
                0 => return empty,
                1 => {
                    // Collapsed toward one peak: it must keep rising once the
                    // previous chunk is included too.
                    let Some(peaks2) = &peaks2 else {
                        return empty;
                    };
                    let (p, trail) = &mut alive[0];
                    let s2 = share_of(p.bin, peaks2);
                    if s2 <= 0.0 || s2 < trail[1] - slack {
                        return empty;
                    }
                    trail.push(s2);
                }
                _ => {
                    // Several peaks persist (background motion). Where the
                    // previous chunk is available they must persist there too.
                    if let Some(peaks2) = &peaks2 {
                        alive.retain_mut(|(p, trail)| {
                            let s2 = share_of(p.bin, peaks2);
                            let keep = s2 > 0.0 && s2 >= trail[1] - slack;
                            trail.push(s2);
                            keep
                        });
                        if alive.is_empty() {
                            return empty;
                        }
                    }
                }
            }
            let values: Vec<u8> = alive.iter().map(|(p, _)| p.value).collect();
            let trails = alive.into_iter().map(|(_, t)| t).collect();
            (BackgroundPixel::from_values(&values), trails)
        }
    }
}

fn neighbor_range(neighbor: &Chunk, extension: usize, take_tail: bool) -> Range<usize> {
    let len = if extension == 0 {
        neighbor.len()
    } else {
        extension.min(neighbor.len())
    };
    if take_tail {
        neighbor.end + 1 - len..neighbor.end + 1
    } else {
        neighbor.start..neighbor.start + len
    }
}

/// Histograms for the three windows used by [`resolve_background`]: the
/// chunk itself, the head of the next chunk and the tail of the previous.
pub struct ChunkHistograms {
    pub chunk: PixelHistogram,
    pub next: Option<PixelHistogram>,
    pub prev: Option<PixelHistogram>,
}

impl ChunkHistograms {
    pub fn build(
        chunk: &Chunk,
        neighbors: (Option<&Chunk>, Option<&Chunk>),
        frames: &FrameStream,
        cfg: &BackgroundConfig,
    ) -> Result<Self> {
        let rs = cfg.region_size;
        let ext = cfg.extension_frames;
        Ok(ChunkHistograms {
            chunk: build_histograms(frames, chunk.frames(), rs)?,
            prev: neighbors
                .0
                .map(|c| build_histograms(frames, neighbor_range(c, ext, true), rs))
                .transpose()?,
            next: neighbors
                .1
                .map(|c| build_histograms(frames, neighbor_range(c, ext, false), rs))
                .transpose()?,
        })
    }
}

/// Estimate the background of `chunk`, consulting neighboring chunks to
/// resolve ambiguous pixels.
pub fn resolve_background(
    chunk: &Chunk,
    neighbors: (Option<&Chunk>, Option<&Chunk>),
    frames: &FrameStream,
    cfg: &BackgroundConfig,
) -> Result<BackgroundEstimate> {
    let hists = ChunkHistograms::build(chunk, neighbors, frames, cfg)?;
    let (w, h) = frames.dimensions();
    Ok(resolve_from_histograms(&hists, w, h, cfg).0)
}

/// Same as [`resolve_background`] but from prebuilt histograms, also
/// returning each region's justification trail.
pub fn resolve_from_histograms(
    hists: &ChunkHistograms,
    frame_width: u32,
    frame_height: u32,
    cfg: &BackgroundConfig,
) -> (BackgroundEstimate, Vec<Justification>) {
    let forward = hists.next.as_ref().map(|n| {
        let mut h = hists.chunk.clone();
        h.merge(n);
        h
    });
    let both = hists.prev.as_ref().map(|p| {
        let mut h = forward.clone().unwrap_or_else(|| hists.chunk.clone());
        h.merge(p);
        h
    });
    let windows = Windows {
        chunk: &hists.chunk,
        forward,
        both,
    };
    let (regions, trails): (Vec<_>, Vec<_>) = (0..hists.chunk.regions())
        .map(|r| resolve_region(&windows, r, cfg))
        .unzip();
    debug_assert_eq!(hists.chunk.frame_width, frame_width);
    (
        BackgroundEstimate {
            width: frame_width,
            height: frame_height,
            region_size: hists.chunk.region_size,
            regions,
        },
        trails,
    )
}
