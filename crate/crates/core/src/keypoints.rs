//! Scale-space keypoints with gradient-histogram descriptors, and
//! mutual-best descriptor matching between frames.
//!
//! The detector follows the usual difference-of-Gaussians recipe: extrema
//! over space and scale, quadratic subpixel refinement, contrast and edge
//! rejection, one keypoint per orientation peak within 80% of the highest,
//! and a 4×4×8 histogram descriptor quantized to bytes. Only the area around foreground blobs is
//! processed; keypoints outside every blob are dropped.

use crate::blobs::Components;
use crate::config::KeypointConfig;
use crate::frame_source::Frame;
use crate::geometry::PixelBox;

pub const DESCRIPTOR_LEN: usize = 128;

const INPUT_BLUR: f32 = 0.5;
const ORI_BINS: usize = 36;
const ORI_PEAK_RATIO: f32 = 0.8;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_SCALE: f32 = 3.0;
const DESC_CLIP: f32 = 0.2;
const REFINE_STEPS: usize = 5;
const BORDER: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    /// Stream position of the frame.
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    /// Blur scale in frame pixels.
    pub scale: f64,
    pub orientation: f64,
    pub descriptor: [u8; DESCRIPTOR_LEN],
    /// Index of the owning blob in the frame's blob list.
    pub blob: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointMatch {
    /// Index into the keypoints of the earlier frame.
    pub a: usize,
    /// Index into the keypoints of the later frame.
    pub b: usize,
    pub distance: f64,
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    fn blur(&self, sigma: f32) -> Plane {
        let r = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut k: Vec<f32> = (-r..=r)
            .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f32 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        let (w, h) = (self.w as isize, self.h as isize);
        let mut tmp = vec![0f32; self.data.len()];
        for y in 0..h {
            let row = &self.data[(y * w) as usize..((y + 1) * w) as usize];
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let xx = (x + j as isize - r).clamp(0, w - 1);
                    acc += kv * row[xx as usize];
                }
                tmp[(y * w + x) as usize] = acc;
            }
        }
        let mut out = vec![0f32; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let yy = (y + j as isize - r).clamp(0, h - 1);
                    acc += kv * tmp[(yy * w + x) as usize];
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        Plane {
            w: self.w,
            h: self.h,
            data: out,
        }
    }

    fn halve(&self) -> Plane {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        Plane { w, h, data }
    }

    /// Bilinear 2× upsampling; sample `(x, y)` lands on `(2x, 2y)`.
    fn double(&self) -> Plane {
        let (w, h) = (2 * self.w - 1, 2 * self.h - 1);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let (y0, fy) = (y / 2, (y % 2) as f32 * 0.5);
            let y1 = (y0 + 1).min(self.h - 1);
            for x in 0..w {
                let (x0, fx) = (x / 2, (x % 2) as f32 * 0.5);
                let x1 = (x0 + 1).min(self.w - 1);
                let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
                let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Plane { w, h, data }
    }

    fn sub(&self, other: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    #[inline]
    fn gradient(&self, x: usize, y: usize) -> (f32, f32) {
        (
            self.at(x + 1, y) - self.at(x - 1, y),
            self.at(x, y + 1) - self.at(x, y - 1),
        )
    }
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

fn build_pyramid(base: Plane, cfg: &KeypointConfig) -> Vec<Octave> {
    let s = cfg.scales_per_octave as usize;
    let sigma0 = cfg.sigma as f32;
    let k = 2f32.powf(1.0 / s as f32);
    let (base, input_blur) = if cfg.upsample {
        (base.double(), 2.0 * INPUT_BLUR)
    } else {
        (base, INPUT_BLUR)
    };
    let first = base.blur((sigma0 * sigma0 - input_blur * input_blur).max(0.01).sqrt());
    let mut octaves = Vec::new();
    let mut seed = first;
    for _ in 0..cfg.octaves {
        if seed.w < 2 * BORDER + 3 || seed.h < 2 * BORDER + 3 {
            break;
        }
        let mut gauss = vec![seed];
        for i in 1..s + 3 {
            let prev = sigma0 * k.powi(i as i32 - 1);
            let cur = prev * k;
            let step = (cur * cur - prev * prev).sqrt();
            let next = gauss[i - 1].blur(step);
            gauss.push(next);
        }
        let dog = gauss.windows(2).map(|p| p[1].sub(&p[0])).collect();
        seed = gauss[s].halve();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn is_extremum(dog: &[Plane], s: usize, x: usize, y: usize) -> bool {
    let v = dog[s].at(x, y);
    let mut max = true;
    let mut min = true;
    for layer in &dog[s - 1..=s + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = layer.at(xx, yy);
                max &= v >= n;
                min &= v <= n;
            }
        }
    }
    (max && v > 0.0) || (min && v < 0.0)
}

/// Solve a 3×3 system by Cramer's rule.
fn solve3(h: [[f32; 3]; 3], b: [f32; 3]) -> Option<[f32; 3]> {
    let det = |m: [[f32; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(h);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut out = [0f32; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = h;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *o = det(m) / d;
    }
    Some(out)
}

struct Refined {
    x: usize,
    y: usize,
    s: usize,
    offset: [f32; 3],
}

fn refine_extremum(
    dog: &[Plane],
    mut x: usize,
    mut y: usize,
    mut s: usize,
    cfg: &KeypointConfig,
) -> Option<Refined> {
    let layers = cfg.scales_per_octave as usize;
    let (w, h) = (dog[0].w, dog[0].h);
    let mut offset = [0f32; 3];
    let mut grad = [0f32; 3];
    let mut converged = false;
    for _ in 0..REFINE_STEPS {
        let (c, p, n) = (&dog[s], &dog[s - 1], &dog[s + 1]);
        let v2 = 2.0 * c.at(x, y);
        grad = [
            0.5 * (c.at(x + 1, y) - c.at(x - 1, y)),
            0.5 * (c.at(x, y + 1) - c.at(x, y - 1)),
            0.5 * (n.at(x, y) - p.at(x, y)),
        ];
        let dxx = c.at(x + 1, y) + c.at(x - 1, y) - v2;
        let dyy = c.at(x, y + 1) + c.at(x, y - 1) - v2;
        let dss = n.at(x, y) + p.at(x, y) - v2;
        let dxy = 0.25 * (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1));
        let dxs = 0.25 * (n.at(x + 1, y) - n.at(x - 1, y) - p.at(x + 1, y) + p.at(x - 1, y));
        let dys = 0.25 * (n.at(x, y + 1) - n.at(x, y - 1) - p.at(x, y + 1) + p.at(x, y - 1));
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let sol = solve3(hess, [-grad[0], -grad[1], -grad[2]])?;
        offset = sol;
        if sol.iter().all(|v| v.abs() < 0.5) {
            converged = true;
            break;
        }
        if sol.iter().any(|v| v.abs() > 1e3) {
            return None;
        }
        let nx = x as f32 + sol[0].round();
        let ny = y as f32 + sol[1].round();
        let ns = s as f32 + sol[2].round();
        if nx < BORDER as f32
            || ny < BORDER as f32
            || nx >= (w - BORDER) as f32
            || ny >= (h - BORDER) as f32
            || ns < 1.0
            || ns > layers as f32
        {
            return None;
        }
        (x, y, s) = (nx as usize, ny as usize, ns as usize);
    }
    if !converged {
        return None;
    }
    let contrast = dog[s].at(x, y) + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
    if contrast.abs() < cfg.contrast_threshold as f32 / layers as f32 {
        return None;
    }
    let c = &dog[s];
    let v2 = 2.0 * c.at(x, y);
    let dxx = c.at(x + 1, y) + c.at(x - 1, y) - v2;
    let dyy = c.at(x, y + 1) + c.at(x, y - 1) - v2;
    let dxy = 0.25 * (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = cfg.edge_threshold as f32;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }
    Some(Refined { x, y, s, offset })
}

/// Orientations of the smoothed gradient histogram peaks within
/// `ORI_PEAK_RATIO` of the highest one.
fn orientations(img: &Plane, x: usize, y: usize, sigma: f32) -> Vec<f32> {
    let s = ORI_SIGMA_FACTOR * sigma;
    let radius = (3.0 * s).round() as isize;
    let mut hist = [0f32; ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (x as isize + dx, y as isize + dy);
            if px < 1 || py < 1 || px >= img.w as isize - 1 || py >= img.h as isize - 1 {
                continue;
            }
            let (gx, gy) = img.gradient(px as usize, py as usize);
            let weight = (-((dx * dx + dy * dy) as f32) / (2.0 * s * s)).exp();
            let angle = gy.atan2(gx).rem_euclid(std::f32::consts::TAU);
            let bin = ((angle / std::f32::consts::TAU * ORI_BINS as f32).round() as usize) % ORI_BINS;
            hist[bin] += weight * (gx * gx + gy * gy).sqrt();
        }
    }
    let mut smooth = [0f32; ORI_BINS];
    for (i, out) in smooth.iter_mut().enumerate() {
        let at = |d: isize| hist[(i as isize + d).rem_euclid(ORI_BINS as isize) as usize];
        *out = (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0;
    }
    let max = smooth.iter().copied().fold(0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &v) in smooth.iter().enumerate() {
        let l = smooth[(i + ORI_BINS - 1) % ORI_BINS];
        let r = smooth[(i + 1) % ORI_BINS];
        if v < ORI_PEAK_RATIO * max || v <= l || v < r {
            continue;
        }
        let denom = l - 2.0 * v + r;
        let shift = if denom.abs() > 1e-12 { 0.5 * (l - r) / denom } else { 0.0 };
        out.push(((i as f32 + shift) / ORI_BINS as f32 * std::f32::consts::TAU).rem_euclid(std::f32::consts::TAU));
    }
    out
}

fn describe(img: &Plane, x: f32, y: f32, sigma: f32, ori: f32) -> [u8; DESCRIPTOR_LEN] {
    let d = DESC_WIDTH;
    let n = DESC_BINS;
    let hist_width = DESC_SCALE * sigma;
    let radius = ((hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round() as isize)
        .min(((img.w * img.w + img.h * img.h) as f32).sqrt() as isize);
    let (sin, cos) = ori.sin_cos();
    let mut hist = vec![0f32; (d + 2) * (d + 2) * (n + 2)];
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let exp_scale = -1.0 / (d as f32 * d as f32 * 0.5);
    let bins_per_rad = n as f32 / std::f32::consts::TAU;
    for i in -radius..=radius {
        for j in -radius..=radius {
            let c_rot = (j as f32 * cos + i as f32 * sin) / hist_width;
            let r_rot = (-j as f32 * sin + i as f32 * cos) / hist_width;
            let rbin = r_rot + d as f32 / 2.0 - 0.5;
            let cbin = c_rot + d as f32 / 2.0 - 0.5;
            let (px, py) = (cx + j, cy + i);
            if rbin <= -1.0
                || rbin >= d as f32
                || cbin <= -1.0
                || cbin >= d as f32
                || px < 1
                || py < 1
                || px >= img.w as isize - 1
                || py >= img.h as isize - 1
            {
                continue;
            }
            let (gx, gy) = img.gradient(px as usize, py as usize);
            let mag = (gx * gx + gy * gy).sqrt() * ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let obin = (gy.atan2(gx) - ori).rem_euclid(std::f32::consts::TAU) * bins_per_rad;
            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (dr, dc, dob) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize);
            let o0 = (o0 as usize) % n;
            for (ri, wr) in [(0, 1.0 - dr), (1, dr)] {
                for (ci, wc) in [(0, 1.0 - dc), (1, dc)] {
                    for (oi, wo) in [(0, 1.0 - dob), (1, dob)] {
                        let idx = ((r0 + ri) * (d + 2) + c0 + ci) * (n + 2) + o0 + oi;
                        hist[idx] += mag * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut raw = [0f32; DESCRIPTOR_LEN];
    for r in 0..d {
        for c in 0..d {
            let base = ((r + 1) * (d + 2) + c + 1) * (n + 2);
            for o in 0..n {
                raw[(r * d + c) * n + o] = hist[base + o];
            }
            // Orientation bins wrap around.
            raw[(r * d + c) * n] += hist[base + n];
            raw[(r * d + c) * n + 1] += hist[base + n + 1];
        }
    }
    let norm = raw.iter().map(|v| v * v).sum::<f32>().sqrt();
    let clip = DESC_CLIP * norm;
    raw.iter_mut().for_each(|v| *v = v.min(clip));
    let norm = raw.iter().map(|v| v * v).sum::<f32>().sqrt().max(f32::EPSILON);
    let mut out = [0u8; DESCRIPTOR_LEN];
    for (o, v) in out.iter_mut().zip(raw) {
        *o = (v / norm * 512.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Union of the blob boxes grown by `margin`, clipped to the frame and with
/// an even origin so the half-resolution octave samples the same pixel
/// lattice on every frame.
fn region_of_interest(blobs: &[PixelBox], width: u32, height: u32, margin: u32) -> Option<PixelBox> {
    let mut it = blobs.iter();
    let mut roi = *it.next()?;
    for b in it {
        roi.extend(b.x1, b.y1);
        roi.extend(b.x2, b.y2);
    }
    Some(PixelBox::new(
        roi.x1.saturating_sub(margin) & !1,
        roi.y1.saturating_sub(margin) & !1,
        (roi.x2 + margin).min(width - 1),
        (roi.y2 + margin).min(height - 1),
    ))
}

/// Keypoints of `frame` restricted to the given region. Returned
/// coordinates are in frame pixels; ownership is left unset.
pub fn detect_in_region(frame: &Frame, roi: PixelBox, cfg: &KeypointConfig) -> Vec<Keypoint> {
    let w = (roi.x2 - roi.x1 + 1) as usize;
    let h = (roi.y2 - roi.y1 + 1) as usize;
    let mut data = Vec::with_capacity(w * h);
    for y in roi.y1..=roi.y2 {
        for x in roi.x1..=roi.x2 {
            data.push(frame.get(x, y) as f32 / 255.0);
        }
    }
    let layers = cfg.scales_per_octave as usize;
    let prefilter = 0.5 * cfg.contrast_threshold as f32 / layers as f32;
    let mut out = Vec::new();
    for (o, oct) in build_pyramid(Plane { w, h, data }, cfg).iter().enumerate() {
        let (ow, oh) = (oct.dog[0].w, oct.dog[0].h);
        let unit = (1u32 << o) as f64 / if cfg.upsample { 2.0 } else { 1.0 };
        for s in 1..=layers {
            for y in BORDER..oh - BORDER {
                for x in BORDER..ow - BORDER {
                    if oct.dog[s].at(x, y).abs() <= prefilter || !is_extremum(&oct.dog, s, x, y) {
                        continue;
                    }
                    let Some(r) = refine_extremum(&oct.dog, x, y, s, cfg) else {
                        continue;
                    };
                    let sigma = cfg.sigma as f32 * 2f32.powf((r.s as f32 + r.offset[2]) / layers as f32);
                    let img = &oct.gauss[r.s];
                    let lx = r.x as f32 + r.offset[0];
                    let ly = r.y as f32 + r.offset[1];
                    let fx = lx as f64 * unit + roi.x1 as f64;
                    let fy = ly as f64 * unit + roi.y1 as f64;
                    if fx < 0.0 || fy < 0.0 || fx > (frame.width - 1) as f64 || fy > (frame.height - 1) as f64 {
                        continue;
                    }
                    for ori in orientations(img, r.x, r.y, sigma) {
                        out.push(Keypoint {
                            frame: 0,
                            x: fx,
                            y: fy,
                            scale: sigma as f64 * unit,
                            orientation: ori as f64,
                            descriptor: describe(img, lx, ly, sigma, ori),
                            blob: None,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Blob owning a point: the component under the rounded position, else
/// the first blob whose box contains the point.
pub fn owning_blob(components: &Components, x: f64, y: f64) -> Option<usize> {
    let (px, py) = (x.round() as u32, y.round() as u32);
    if px < components.width && py < components.height {
        if let Some(l) = components.label_at(px, py) {
            return Some(l);
        }
    }
    components.blobs.iter().position(|b| b.bbox.contains(x, y))
}

/// Keypoints of `frame` that fall inside one of its blobs, tagged with the
/// owning blob. Frames without blobs yield no keypoints.
pub fn extract_keypoints(
    frame_position: usize,
    frame: &Frame,
    components: &Components,
    cfg: &KeypointConfig,
) -> Vec<Keypoint> {
    let boxes: Vec<PixelBox> = components.blobs.iter().map(|b| b.bbox).collect();
    let Some(roi) = region_of_interest(&boxes, frame.width, frame.height, cfg.margin) else {
        return Vec::new();
    };
    let mut kps = detect_in_region(frame, roi, cfg);
    kps.retain_mut(|k| {
        k.frame = frame_position;
        k.blob = owning_blob(components, k.x, k.y);
        k.blob.is_some()
    });
    kps.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)).then(a.scale.total_cmp(&b.scale)));
    kps
}

fn distance_sq(a: &[u8; DESCRIPTOR_LEN], b: &[u8; DESCRIPTOR_LEN]) -> u32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i32 - y as i32;
            (d * d) as u32
        })
        .sum()
}

/// Best and second-best squared distance per row (ties keep the lower
/// index).
fn nearest_two(rows: usize, cols: usize, dist: impl Fn(usize, usize) -> u32) -> Vec<(usize, u32, u32)> {
    (0..rows)
        .map(|i| {
            let (mut best, mut d1, mut d2) = (usize::MAX, u32::MAX, u32::MAX);
            for j in 0..cols {
                let d = dist(i, j);
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                    best = j;
                } else if d < d2 {
                    d2 = d;
                }
            }
            (best, d1, d2)
        })
        .collect()
}

fn passes_ratio(d1: u32, d2: u32, ratio: f64) -> bool {
    d2 == u32::MAX || (d1 as f64) < ratio * ratio * d2 as f64
}

/// Mutual nearest neighbors that pass the ratio test in both directions.
/// Result is sorted by `a` and is one-to-one.
pub fn match_keypoints(kps_a: &[Keypoint], kps_b: &[Keypoint], ratio: f64) -> Vec<KeypointMatch> {
    if kps_a.is_empty() || kps_b.is_empty() {
        return Vec::new();
    }
    let n = kps_b.len();
    let mut table = vec![0u32; kps_a.len() * n];
    for (i, a) in kps_a.iter().enumerate() {
        for (j, b) in kps_b.iter().enumerate() {
            table[i * n + j] = distance_sq(&a.descriptor, &b.descriptor);
        }
    }
    let fwd = nearest_two(kps_a.len(), n, |i, j| table[i * n + j]);
    let rev = nearest_two(n, kps_a.len(), |j, i| table[i * n + j]);
    fwd.iter()
        .enumerate()
        .filter_map(|(i, &(j, d1, d2))| {
            let (back, e1, e2) = rev[j];
            (back == i && passes_ratio(d1, d2, ratio) && passes_ratio(e1, e2, ratio)).then(|| KeypointMatch {
                a: i,
                b: j,
                distance: (d1 as f64).sqrt(),
            })
        })
        .collect()
}
