use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{ActorSpec, BackgroundSpec, SceneSpec, Shape, Texture};
use super::{Frame, FrameSource, FrameStream};
use crate::error::{Error, Result};
use crate::geometry::{BBox, PixelBox};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub actor_id: u32,
    pub label: String,
    pub bbox: BBox,
    /// False while the actor sits still (same box on both neighboring frames).
    pub moving: bool,
}

/// Per-frame visible actors with tight boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub width: u32,
    pub height: u32,
    pub frames: Vec<Vec<GroundTruthObject>>,
}

impl GroundTruth {
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .frames
            .iter()
            .flatten()
            .map(|o| o.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }
}

struct SyntheticSource {
    spec: Arc<SceneSpec>,
    background: Vec<u8>,
}

/// Render `scene` lazily as a frame stream and compute its ground truth.
pub fn render_synthetic(scene: &SceneSpec) -> Result<(FrameStream, GroundTruth)> {
    for a in &scene.actors {
        if a.width == 0 || a.height == 0 || a.scale.iter().any(|&(_, s)| !(s > 0.0)) {
            return Err(Error::ZeroAreaActor(a.id));
        }
        if let Texture::Checker { cell: 0, .. } | Texture::Blocks { cell: 0, .. } = a.texture {
            return Err(Error::SceneSpec {
                line: 0,
                message: format!("actor {} texture cell must be positive", a.id),
            });
        }
    }
    if scene.duration_frames == 0 {
        return Err(Error::NoFrames);
    }
    let spec = Arc::new(scene.clone());
    let truth = ground_truth(&spec);
    let source = SyntheticSource {
        background: background_grid(&spec),
        spec,
    };
    Ok((FrameStream::new(Arc::new(source), scene.fps), truth))
}

impl FrameSource for SyntheticSource {
    fn dimensions(&self) -> (u32, u32) {
        (self.spec.width, self.spec.height)
    }

    fn len(&self) -> usize {
        self.spec.duration_frames as usize
    }

    fn load(&self, position: usize) -> Result<Frame> {
        if position >= self.len() {
            return Err(Error::MissingFrame(position as u64));
        }
        Ok(render_frame(&self.spec, &self.background, position as u64))
    }
}

fn background_grid(spec: &SceneSpec) -> Vec<u8> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    match spec.background {
        BackgroundSpec::Flat(v) => vec![v; w * h],
        BackgroundSpec::Gradient {
            top,
            bottom,
            texture,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xB6_5EED);
            let cw = w.div_ceil(4);
            let cells: Vec<i32> = (0..cw * h.div_ceil(4))
                .map(|_| rng.gen_range(-(texture as i32)..=texture as i32))
                .collect();
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h {
                let base = top as f64 + (bottom as f64 - top as f64) * y as f64 / (h.max(2) - 1) as f64;
                for x in 0..w {
                    let v = base.round() as i32 + cells[(y / 4) * cw + x / 4];
                    out.push(v.clamp(0, 255) as u8);
                }
            }
            out
        }
    }
}

fn hash3(a: u64, b: u64, c: u64) -> u64 {
    let mut h = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= c.wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 31;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^ (h >> 29)
}

/// Pixels covered by `actor` on frame `t`, in frame coordinates, paired with
/// their intensities. Includes off-frame pixels.
pub(crate) fn actor_pixels(seed: u64, actor: &ActorSpec, t: u64) -> Vec<(i64, i64, u8)> {
    let (px, py) = actor.position_at(t);
    let s = actor.scale_at(t);
    let x0 = px.round() as i64;
    let y0 = py.round() as i64;
    let w = ((actor.width as f64 * s).round() as i64).max(1);
    let h = ((actor.height as f64 * s).round() as i64).max(1);
    let mut out = Vec::with_capacity((w * h) as usize);
    for v in 0..h {
        for u in 0..w {
            if actor.shape == Shape::Ellipse {
                let dx = (u as f64 + 0.5 - w as f64 / 2.0) / (w as f64 / 2.0);
                let dy = (v as f64 + 0.5 - h as f64 / 2.0) / (h as f64 / 2.0);
                if dx * dx + dy * dy > 1.0 {
                    continue;
                }
            }
            let tu = (u as f64 / s).floor() as u64;
            let tv = (v as f64 / s).floor() as u64;
            let value = match actor.texture {
                Texture::Solid(c) => c,
                Texture::Checker { cell, a, b } => {
                    if (tu / cell as u64 + tv / cell as u64) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                }
                Texture::Blocks { cell, lo, hi } => {
                    let (lo, hi) = (lo.min(hi), lo.max(hi));
                    let cell_id = (tv / cell as u64) * 4096 + tu / cell as u64;
                    let r = hash3(seed, actor.id as u64, cell_id);
                    lo + (r % (hi as u64 - lo as u64 + 1)) as u8
                }
            };
            out.push((x0 + u, y0 + v, value));
        }
    }
    if let Some(limbs) = actor.limbs {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / limbs.period.max(1) as f64;
        let reach = (limbs.reach as f64 * (0.5 - 0.5 * phase.cos())).round() as i64;
        let thick = limbs.thickness.max(1) as i64;
        let top = y0 + h / 2 - thick / 2;
        for dy in 0..thick {
            for d in 1..=reach {
                out.push((x0 - d, top + dy, limbs.value));
                out.push((x0 + w - 1 + d, top + dy, limbs.value));
            }
        }
    }
    out
}

fn visible_box(spec: &SceneSpec, actor: &ActorSpec, t: u64) -> Option<PixelBox> {
    if !actor.is_visible(t) {
        return None;
    }
    let (w, h) = (spec.width as i64, spec.height as i64);
    let mut bbox: Option<PixelBox> = None;
    for (x, y, _) in actor_pixels(spec.seed, actor, t) {
        if x < 0 || y < 0 || x >= w || y >= h {
            continue;
        }
        match bbox.as_mut() {
            Some(b) => b.extend(x as u32, y as u32),
            None => bbox = Some(PixelBox::point(x as u32, y as u32)),
        }
    }
    bbox
}

fn ground_truth(spec: &SceneSpec) -> GroundTruth {
    let n = spec.duration_frames;
    let mut frames = vec![Vec::new(); n as usize];
    for actor in &spec.actors {
        let boxes: Vec<Option<PixelBox>> = (0..n).map(|t| visible_box(spec, actor, t)).collect();
        for t in 0..n as usize {
            let Some(b) = boxes[t] else { continue };
            let prev = if t > 0 { boxes[t - 1] } else { None };
            let next = boxes.get(t + 1).copied().flatten();
            let moving = actor.limbs.is_some()
                || prev.is_some_and(|p| p != b)
                || next.is_some_and(|q| q != b);
            frames[t].push(GroundTruthObject {
                actor_id: actor.id,
                label: actor.label.clone(),
                bbox: b.to_bbox(),
                moving,
            });
        }
    }
    GroundTruth {
        width: spec.width,
        height: spec.height,
        frames,
    }
}

fn render_frame(spec: &SceneSpec, background: &[u8], t: u64) -> Frame {
    let (w, h) = (spec.width as i64, spec.height as i64);
    let mut px = background.to_vec();
    for o in &spec.oscillators {
        let half = (o.period / 2).max(1) as u64;
        let off = if (t / half) % 2 == 1 { o.shift } else { 0 };
        for y in o.y..(o.y + o.h).min(spec.height) {
            for x in (o.x + off)..(o.x + off + o.w).min(spec.width) {
                px[(y * spec.width + x) as usize] = o.value;
            }
        }
    }
    for actor in spec.actors.iter().filter(|a| a.is_visible(t)) {
        for (x, y, v) in actor_pixels(spec.seed, actor, t) {
            if x >= 0 && y >= 0 && x < w && y < h {
                px[(y * w + x) as usize] = v;
            }
        }
    }
    if spec.noise > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(hash3(spec.seed, t, 0x4E01_5E));
        let n = spec.noise as i32;
        for p in px.iter_mut() {
            *p = (*p as i32 + rng.gen_range(-n..=n)).clamp(0, 255) as u8;
        }
    }
    Frame::new(t, spec.width, spec.height, px)
}
