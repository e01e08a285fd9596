//! Foreground segmentation against a background estimate, morphological
//! cleanup and connected-component blob extraction.

use std::collections::VecDeque;

use crate::background::BackgroundEstimate;
use crate::frame_source::Frame;
use crate::geometry::PixelBox;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// A connected foreground region on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Blob {
    /// Stream position of the frame.
    pub frame: usize,
    pub bbox: PixelBox,
    pub area: u32,
    pub trajectory: Option<u32>,
}

/// Foreground iff the pixel is further than `tolerance * 255` from every
/// background value. EMPTY background pixels are always foreground.
pub fn segment(frame: &Frame, bg: &BackgroundEstimate, tolerance: f64) -> BinaryMask {
    assert_eq!((frame.width, frame.height), (bg.width, bg.height));
    let limit = tolerance * 255.0;
    let mut mask = BinaryMask::new(frame.width, frame.height);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let v = frame.get(x, y) as f64;
            let background = bg
                .at(x, y)
                .values()
                .iter()
                .any(|&b| (v - b as f64).abs() <= limit);
            mask.set(x, y, !background);
        }
    }
    mask
}

/// Sliding min (`erode`) or max over a window of `2r+1` along one line.
/// Samples outside the line are ignored.
fn line_filter(src: &[bool], dst: &mut [bool], r: usize, erode: bool) {
    let n = src.len();
    let mut prefix = vec![0u32; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + src[i] as u32;
    }
    for i in 0..n {
        let lo = i.saturating_sub(r);
        let hi = (i + r + 1).min(n);
        let on = prefix[hi] - prefix[lo];
        dst[i] = if erode {
            on as usize == hi - lo
        } else {
            on > 0
        };
    }
}

fn square_filter(mask: &BinaryMask, r: u32, erode: bool) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width as usize, mask.height as usize);
    let r = r as usize;
    let mut rows = vec![false; w * h];
    for y in 0..h {
        line_filter(&mask.data[y * w..(y + 1) * w], &mut rows[y * w..(y + 1) * w], r, erode);
    }
    let mut out = BinaryMask::new(mask.width, mask.height);
    let mut col = vec![false; h];
    let mut res = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        line_filter(&col, &mut res, r, erode);
        for y in 0..h {
            out.data[y * w + x] = res[y];
        }
    }
    out
}

pub fn erode(mask: &BinaryMask, r: u32) -> BinaryMask {
    square_filter(mask, r, true)
}

pub fn dilate(mask: &BinaryMask, r: u32) -> BinaryMask {
    square_filter(mask, r, false)
}

/// Opening with `open_radius` followed by closing with `close_radius`, both
/// with square structuring elements.
pub fn refine(mask: &BinaryMask, open_radius: u32, close_radius: u32) -> BinaryMask {
    let opened = dilate(&erode(mask, open_radius), open_radius);
    erode(&dilate(&opened, close_radius), close_radius)
}

/// Blobs of a frame plus the per-pixel component map (`labels[p]` is the
/// index into `blobs` plus one, or 0 for background and discarded pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    pub blobs: Vec<Blob>,
}

impl Components {
    pub fn label_at(&self, x: u32, y: u32) -> Option<usize> {
        match self.labels[(y * self.width + x) as usize] {
            0 => None,
            l => Some(l as usize - 1),
        }
    }

    /// Pixels of blob `i`, in scan order.
    pub fn pixels_of(&self, i: usize) -> Vec<(u32, u32)> {
        let b = self.blobs[i].bbox;
        let mut out = Vec::with_capacity(self.blobs[i].area as usize);
        for y in b.y1..=b.y2 {
            for x in b.x1..=b.x2 {
                if self.labels[(y * self.width + x) as usize] == i as u32 + 1 {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// 8-connected components of `mask` with at least `min_area` pixels,
/// sorted by top-left corner (row first).
pub fn label_components(mask: &BinaryMask, frame: usize, min_area: u32) -> Components {
    let (w, h) = (mask.width, mask.height);
    let mut raw = vec![0u32; (w * h) as usize];
    let mut found: Vec<(Blob, u32)> = Vec::new();
    let mut queue = VecDeque::new();
    let mut next = 1u32;
    for sy in 0..h {
        for sx in 0..w {
            let si = (sy * w + sx) as usize;
            if !mask.data[si] || raw[si] != 0 {
                continue;
            }
            raw[si] = next;
            queue.push_back((sx, sy));
            let mut bbox = PixelBox::point(sx, sy);
            let mut area = 0u32;
            while let Some((x, y)) = queue.pop_front() {
                area += 1;
                bbox.extend(x, y);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let ni = (ny as u32 * w + nx as u32) as usize;
                        if mask.data[ni] && raw[ni] == 0 {
                            raw[ni] = next;
                            queue.push_back((nx as u32, ny as u32));
                        }
                    }
                }
            }
            if area >= min_area {
                found.push((
                    Blob {
                        frame,
                        bbox,
                        area,
                        trajectory: None,
                    },
                    next,
                ));
            }
            next += 1;
        }
    }
    found.sort_by_key(|(b, _)| (b.bbox.y1, b.bbox.x1));
    let mut remap = vec![0u32; next as usize];
    for (i, (_, raw_label)) in found.iter().enumerate() {
        remap[*raw_label as usize] = i as u32 + 1;
    }
    Components {
        width: w,
        height: h,
        labels: raw.into_iter().map(|l| remap[l as usize]).collect(),
        blobs: found.into_iter().map(|(b, _)| b).collect(),
    }
}

pub fn extract_blobs(mask: &BinaryMask, frame: usize, min_area: u32) -> Vec<Blob> {
    label_components(mask, frame, min_area).blobs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::BackgroundPixel;
    use proptest::prelude::*;

    fn square(mask: &mut BinaryMask, x: u32, y: u32, w: u32, h: u32) {
        for yy in y..y + h {
            for xx in x..x + w {
                mask.set(xx, yy, true);
            }
        }
    }

    /// Direct definition: a pixel survives erosion iff every in-bounds
    /// neighbor within the square is set.
    fn naive(mask: &BinaryMask, r: u32, erode: bool) -> BinaryMask {
        let mut out = BinaryMask::new(mask.width, mask.height);
        let r = r as i64;
        for y in 0..mask.height as i64 {
            for x in 0..mask.width as i64 {
                let mut all = true;
                let mut any = false;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= mask.width as i64 || ny >= mask.height as i64 {
                            continue;
                        }
                        let v = mask.get(nx as u32, ny as u32);
                        all &= v;
                        any |= v;
                    }
                }
                out.set(x as u32, y as u32, if erode { all } else { any });
            }
        }
        out
    }

    /// Flood fill count used as an independent component oracle.
    fn count_components(mask: &BinaryMask) -> usize {
        let mut seen = vec![false; mask.data.len()];
        let mut n = 0;
        for start in 0..mask.data.len() {
            if !mask.data[start] || seen[start] {
                continue;
            }
            n += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(p) = stack.pop() {
                let (x, y) = ((p as u32 % mask.width) as i64, (p as u32 / mask.width) as i64);
                for (dx, dy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < mask.width as i64 && ny < mask.height as i64 {
                        let q = (ny as u32 * mask.width + nx as u32) as usize;
                        if mask.data[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        n
    }

    fn unimodal(w: u32, h: u32, v: u8) -> BackgroundEstimate {
        BackgroundEstimate::uniform(w, h, BackgroundPixel::from_values(&[v]))
    }

    #[test]
    fn identical_frame_is_all_background() {
        let f = Frame::new(0, 8, 8, vec![90; 64]);
        assert_eq!(segment(&f, &unimodal(8, 8, 90), 0.05).count(), 0);
    }

    #[test]
    fn threshold_is_five_percent_of_full_range() {
        // 0.05 * 255 = 12.75 intensity levels.
        let bg = unimodal(3, 1, 100);
        let f = Frame::new(0, 3, 1, vec![112, 113, 87]);
        let m = segment(&f, &bg, 0.05);
        assert_eq!(m.data, vec![false, true, true]);
    }

    #[test]
    fn empty_background_is_foreground() {
        let bg = BackgroundEstimate::uniform(2, 1, BackgroundPixel::EMPTY);
        let f = Frame::new(0, 2, 1, vec![0, 255]);
        assert_eq!(segment(&f, &bg, 1.0).count(), 2);
    }

    #[test]
    fn multi_valued_background() {
        let bg = BackgroundEstimate::uniform(3, 1, BackgroundPixel::from_values(&[40, 120]));
        let f = Frame::new(0, 3, 1, vec![42, 118, 80]);
        assert_eq!(segment(&f, &bg, 0.05).data, vec![false, false, true]);
    }

    #[test]
    fn isolated_pixel_removed_by_opening() {
        let mut m = BinaryMask::new(9, 9);
        m.set(4, 4, true);
        assert_eq!(refine(&m, 1, 0).count(), 0);
    }

    #[test]
    fn pinhole_filled_by_closing() {
        let mut m = BinaryMask::new(30, 30);
        square(&mut m, 5, 5, 20, 20);
        m.set(12, 12, false);
        let r = refine(&m, 0, 1);
        let mut expect = BinaryMask::new(30, 30);
        square(&mut expect, 5, 5, 20, 20);
        assert_eq!(r, expect);
    }

    #[test]
    fn bridge_removed_by_opening() {
        let mut m = BinaryMask::new(40, 20);
        square(&mut m, 2, 5, 10, 10);
        square(&mut m, 20, 5, 10, 10);
        square(&mut m, 12, 9, 8, 1);
        assert_eq!(count_components(&m), 1);
        let opened = dilate(&erode(&m, 1), 1);
        let oracle = naive(&naive(&m, 1, true), 1, false);
        assert_eq!(opened, oracle);
        assert_eq!(count_components(&oracle), 2);
        assert_eq!(extract_blobs(&refine(&m, 1, 0), 0, 1).len(), 2);
    }

    #[test]
    fn empty_mask_has_no_blobs() {
        assert!(extract_blobs(&BinaryMask::new(10, 10), 0, 1).is_empty());
    }

    #[test]
    fn square_blob_box_and_area() {
        let mut m = BinaryMask::new(100, 100);
        square(&mut m, 40, 40, 20, 20);
        let blobs = extract_blobs(&m, 7, 16);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].bbox, PixelBox::new(40, 40, 59, 59));
        assert_eq!(blobs[0].area, 400);
        assert_eq!(blobs[0].frame, 7);
    }

    #[test]
    fn overlapping_actors_merge() {
        let mut m = BinaryMask::new(100, 100);
        square(&mut m, 20, 20, 20, 30);
        square(&mut m, 35, 22, 20, 30);
        let blobs = extract_blobs(&m, 0, 16);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].bbox, PixelBox::new(20, 20, 54, 51));
    }

    #[test]
    fn diagonal_pixels_connect_and_small_blobs_drop() {
        let mut m = BinaryMask::new(10, 10);
        m.set(1, 1, true);
        m.set(2, 2, true);
        assert_eq!(extract_blobs(&m, 0, 2).len(), 1);
        assert!(extract_blobs(&m, 0, 3).is_empty());
    }

    #[test]
    fn blobs_sorted_by_top_left() {
        let mut m = BinaryMask::new(50, 50);
        square(&mut m, 30, 5, 5, 5);
        square(&mut m, 2, 5, 5, 5);
        square(&mut m, 10, 1, 5, 5);
        let c = label_components(&m, 0, 1);
        let corners: Vec<(u32, u32)> = c.blobs.iter().map(|b| (b.bbox.y1, b.bbox.x1)).collect();
        assert_eq!(corners, vec![(1, 10), (5, 2), (5, 30)]);
        assert_eq!(c.label_at(3, 6), Some(1));
        assert_eq!(c.pixels_of(0).len(), 25);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (3u32..20, 3u32..20).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::bool::weighted(0.4), (w * h) as usize)
                .prop_map(move |data| BinaryMask { width: w, height: h, data })
        })
    }

    proptest! {
        #[test]
        fn separable_morphology_matches_definition(m in arb_mask(), r in 0u32..3) {
            prop_assert_eq!(erode(&m, r), naive(&m, r, true));
            prop_assert_eq!(dilate(&m, r), naive(&m, r, false));
        }

        #[test]
        fn boxes_are_tight(m in arb_mask()) {
            let c = label_components(&m, 0, 1);
            prop_assert_eq!(c.blobs.len(), count_components(&m));
            for (i, b) in c.blobs.iter().enumerate() {
                let px = c.pixels_of(i);
                prop_assert_eq!(px.len() as u32, b.area);
                prop_assert!(px.iter().any(|p| p.0 == b.bbox.x1));
                prop_assert!(px.iter().any(|p| p.0 == b.bbox.x2));
                prop_assert!(px.iter().any(|p| p.1 == b.bbox.y1));
                prop_assert!(px.iter().any(|p| p.1 == b.bbox.y2));
            }
        }

        #[test]
        fn lower_tolerance_gives_superset(
            px in proptest::collection::vec(any::<u8>(), 16),
            bgv in any::<u8>(),
            t1 in 0.0f64..0.5,
            t2 in 0.0f64..0.5,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let f = Frame::new(0, 4, 4, px);
            let bg = unimodal(4, 4, bgv);
            let a = segment(&f, &bg, lo);
            let b = segment(&f, &bg, hi);
            for i in 0..16 {
                prop_assert!(!b.data[i] || a.data[i]);
            }
        }
    }
}
