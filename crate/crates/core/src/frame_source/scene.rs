//! Synthetic scene description and its line-record file format.
//!
//! ```text
//! vidindex-scene 1
//! seed 42
//! size 160 120
//! fps 10
//! frames 600
//! noise 2
//! background gradient 50 110 6
//! oscillator x=140 y=4 w=10 h=20 shift=4 period=20 value=30
//! actor id=1 label=car shape=rect size=20x12 texture=blocks:3:150:250 visible=0..600 path=0:10,50;599:150,50
//! ```
//!
//! The first non-comment line is the versioned header. `#` starts a comment.
//! Actor fields:
//!
//! * `shape` is `rect` or `ellipse`; `size` is the unscaled `WxH`.
//! * `texture` is `solid:V`, `checker:CELL:A:B` or `blocks:CELL:LO:HI`
//!   (random per-cell intensities, seeded by scene seed and actor id).
//! * `visible=START..END` is half-open in frames.
//! * `path=T:X,Y;...` gives top-left waypoints, linearly interpolated and
//!   held constant outside the first/last waypoint. Equal consecutive
//!   waypoints describe a static interval.
//! * `scale=T:S;...` (optional) scales the actor about its top-left corner.
//! * `limbs=REACH:PERIOD:VALUE:THICKNESS` (optional) adds horizontal
//!   appendages at mid-height whose length oscillates in `[0, REACH]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const SCENE_HEADER: &str = "vidindex-scene";
pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub duration_frames: u64,
    /// Per-pixel sensor noise amplitude, uniform in `[-noise, noise]`.
    pub noise: u8,
    pub background: BackgroundSpec,
    pub oscillators: Vec<OscillatorSpec>,
    pub actors: Vec<ActorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackgroundSpec {
    Flat(u8),
    /// Vertical gradient from `top` to `bottom` plus a static blocky texture
    /// of amplitude `texture`.
    Gradient { top: u8, bottom: u8, texture: u8 },
}

/// A background element that alternates between two horizontal positions
/// (square wave), like a swaying branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OscillatorSpec {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub shift: u32,
    pub period: u32,
    pub value: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    Solid(u8),
    Checker { cell: u32, a: u8, b: u8 },
    Blocks { cell: u32, lo: u8, hi: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limbs {
    pub reach: u32,
    pub period: u32,
    pub value: u8,
    pub thickness: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorSpec {
    pub id: u32,
    pub label: String,
    pub shape: Shape,
    pub width: u32,
    pub height: u32,
    pub texture: Texture,
    pub visible: (u64, u64),
    pub path: Vec<(u64, f64, f64)>,
    pub scale: Vec<(u64, f64)>,
    pub limbs: Option<Limbs>,
}

impl ActorSpec {
    /// A rigid rectangular actor moving linearly between two waypoints.
    pub fn linear(
        id: u32,
        label: &str,
        size: (u32, u32),
        texture: Texture,
        (start, end): (u64, u64),
        from: (f64, f64),
        to: (f64, f64),
    ) -> Self {
        ActorSpec {
            id,
            label: label.to_string(),
            shape: Shape::Rect,
            width: size.0,
            height: size.1,
            texture,
            visible: (start, end),
            path: vec![(start, from.0, from.1), (end.saturating_sub(1), to.0, to.1)],
            scale: Vec::new(),
            limbs: None,
        }
    }

    pub fn position_at(&self, t: u64) -> (f64, f64) {
        let pts: Vec<(u64, f64, f64)> = self.path.clone();
        interpolate(&pts, t, |&(f, x, y)| (f, [x, y]))
            .map(|v| (v[0], v[1]))
            .unwrap_or((0.0, 0.0))
    }

    pub fn scale_at(&self, t: u64) -> f64 {
        interpolate(&self.scale, t, |&(f, s)| (f, [s, 0.0]))
            .map(|v| v[0])
            .unwrap_or(1.0)
    }

    pub fn is_visible(&self, t: u64) -> bool {
        t >= self.visible.0 && t < self.visible.1
    }
}

fn interpolate<T>(points: &[T], t: u64, get: impl Fn(&T) -> (u64, [f64; 2])) -> Option<[f64; 2]> {
    let first = points.first().map(&get)?;
    if t <= first.0 {
        return Some(first.1);
    }
    for w in points.windows(2) {
        let (t0, a) = get(&w[0]);
        let (t1, b) = get(&w[1]);
        if t >= t0 && t <= t1 {
            if t1 == t0 {
                return Some(b);
            }
            let u = (t - t0) as f64 / (t1 - t0) as f64;
            return Some([a[0] + (b[0] - a[0]) * u, a[1] + (b[1] - a[1]) * u]);
        }
    }
    points.last().map(|p| get(p).1)
}

impl fmt::Display for SceneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{SCENE_HEADER} {SCENE_VERSION}")?;
        writeln!(f, "seed {}", self.seed)?;
        writeln!(f, "size {} {}", self.width, self.height)?;
        writeln!(f, "fps {}", self.fps)?;
        writeln!(f, "frames {}", self.duration_frames)?;
        writeln!(f, "noise {}", self.noise)?;
        match self.background {
            BackgroundSpec::Flat(v) => writeln!(f, "background flat {v}")?,
            BackgroundSpec::Gradient {
                top,
                bottom,
                texture,
            } => writeln!(f, "background gradient {top} {bottom} {texture}")?,
        }
        for o in &self.oscillators {
            writeln!(
                f,
                "oscillator x={} y={} w={} h={} shift={} period={} value={}",
                o.x, o.y, o.w, o.h, o.shift, o.period, o.value
            )?;
        }
        for a in &self.actors {
            write!(
                f,
                "actor id={} label={} shape={} size={}x{} texture={} visible={}..{} path=",
                a.id,
                a.label,
                match a.shape {
                    Shape::Rect => "rect",
                    Shape::Ellipse => "ellipse",
                },
                a.width,
                a.height,
                a.texture,
                a.visible.0,
                a.visible.1
            )?;
            let path: Vec<String> = a.path.iter().map(|(t, x, y)| format!("{t}:{x},{y}")).collect();
            write!(f, "{}", path.join(";"))?;
            if !a.scale.is_empty() {
                let s: Vec<String> = a.scale.iter().map(|(t, s)| format!("{t}:{s}")).collect();
                write!(f, " scale={}", s.join(";"))?;
            }
            if let Some(l) = a.limbs {
                write!(f, " limbs={}:{}:{}:{}", l.reach, l.period, l.value, l.thickness)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl fmt::Display for Texture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Texture::Solid(v) => write!(f, "solid:{v}"),
            Texture::Checker { cell, a, b } => write!(f, "checker:{cell}:{a}:{b}"),
            Texture::Blocks { cell, lo, hi } => write!(f, "blocks:{cell}:{lo}:{hi}"),
        }
    }
}

struct LineErr(usize);

impl LineErr {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::SceneSpec {
            line: self.0,
            message: message.into(),
        }
    }

    fn num<T: FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.err(format!("invalid {what} '{s}'")))
    }
}

impl FromStr for SceneSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (n, header) = lines.next().ok_or(Error::SceneSpec {
            line: 1,
            message: "empty scene file".into(),
        })?;
        let mut head = header.split_whitespace();
        if head.next() != Some(SCENE_HEADER) {
            return Err(LineErr(n).err(format!("expected '{SCENE_HEADER} {SCENE_VERSION}' header")));
        }
        let version: u32 = LineErr(n).num(head.next().unwrap_or(""), "version")?;
        if version != SCENE_VERSION {
            return Err(LineErr(n).err(format!("unsupported scene version {version}")));
        }

        let mut spec = SceneSpec {
            seed: 0,
            width: 0,
            height: 0,
            fps: 30.0,
            duration_frames: 0,
            noise: 0,
            background: BackgroundSpec::Flat(0),
            oscillators: Vec::new(),
            actors: Vec::new(),
        };

        for (n, line) in lines {
            let le = LineErr(n);
            let mut tok = line.split_whitespace();
            let key = tok.next().unwrap_or("");
            let rest: Vec<&str> = tok.collect();
            let arg = |i: usize| -> Result<&str> {
                rest.get(i)
                    .copied()
                    .ok_or_else(|| le.err(format!("'{key}' needs more arguments")))
            };
            match key {
                "seed" => spec.seed = le.num(arg(0)?, "seed")?,
                "size" => {
                    spec.width = le.num(arg(0)?, "width")?;
                    spec.height = le.num(arg(1)?, "height")?;
                }
                "fps" => spec.fps = le.num(arg(0)?, "fps")?,
                "frames" => spec.duration_frames = le.num(arg(0)?, "frame count")?,
                "noise" => spec.noise = le.num(arg(0)?, "noise")?,
                "background" => {
                    spec.background = match arg(0)? {
                        "flat" => BackgroundSpec::Flat(le.num(arg(1)?, "intensity")?),
                        "gradient" => BackgroundSpec::Gradient {
                            top: le.num(arg(1)?, "intensity")?,
                            bottom: le.num(arg(2)?, "intensity")?,
                            texture: le.num(arg(3)?, "texture amplitude")?,
                        },
                        other => return Err(le.err(format!("unknown background '{other}'"))),
                    }
                }
                "oscillator" => {
                    let kv = key_values(&rest, &le)?;
                    let get = |k: &str| -> Result<&str> {
                        kv.iter()
                            .find(|(key, _)| *key == k)
                            .map(|(_, v)| *v)
                            .ok_or_else(|| le.err(format!("oscillator missing '{k}'")))
                    };
                    spec.oscillators.push(OscillatorSpec {
                        x: le.num(get("x")?, "x")?,
                        y: le.num(get("y")?, "y")?,
                        w: le.num(get("w")?, "w")?,
                        h: le.num(get("h")?, "h")?,
                        shift: le.num(get("shift")?, "shift")?,
                        period: le.num(get("period")?, "period")?,
                        value: le.num(get("value")?, "value")?,
                    });
                }
                "actor" => spec.actors.push(parse_actor(&rest, &le)?),
                other => return Err(le.err(format!("unknown record '{other}'"))),
            }
        }
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::SceneSpec {
                line: 0,
                message: "missing or zero 'size'".into(),
            });
        }
        Ok(spec)
    }
}

fn key_values<'a>(tokens: &[&'a str], le: &LineErr) -> Result<Vec<(&'a str, &'a str)>> {
    tokens
        .iter()
        .map(|t| {
            t.split_once('=')
                .ok_or_else(|| le.err(format!("expected key=value, found '{t}'")))
        })
        .collect()
}

fn parse_actor(tokens: &[&str], le: &LineErr) -> Result<ActorSpec> {
    let kv = key_values(tokens, le)?;
    let get = |k: &str| kv.iter().find(|(key, _)| *key == k).map(|(_, v)| *v);
    let need = |k: &str| get(k).ok_or_else(|| le.err(format!("actor missing '{k}'")));

    let (w, h) = need("size")?
        .split_once('x')
        .ok_or_else(|| le.err("size must be WxH"))?;
    let (v0, v1) = need("visible")?
        .split_once("..")
        .ok_or_else(|| le.err("visible must be START..END"))?;

    let texture = {
        let parts: Vec<&str> = need("texture")?.split(':').collect();
        let p = |i: usize| {
            parts
                .get(i)
                .copied()
                .ok_or_else(|| le.err("texture has too few fields"))
        };
        match parts[0] {
            "solid" => Texture::Solid(le.num(p(1)?, "intensity")?),
            "checker" => Texture::Checker {
                cell: le.num(p(1)?, "cell")?,
                a: le.num(p(2)?, "intensity")?,
                b: le.num(p(3)?, "intensity")?,
            },
            "blocks" => Texture::Blocks {
                cell: le.num(p(1)?, "cell")?,
                lo: le.num(p(2)?, "intensity")?,
                hi: le.num(p(3)?, "intensity")?,
            },
            other => return Err(le.err(format!("unknown texture '{other}'"))),
        }
    };

    let mut path = Vec::new();
    for wp in need("path")?.split(';') {
        let (t, xy) = wp
            .split_once(':')
            .ok_or_else(|| le.err("path waypoint must be T:X,Y"))?;
        let (x, y) = xy
            .split_once(',')
            .ok_or_else(|| le.err("path waypoint must be T:X,Y"))?;
        path.push((le.num(t, "frame")?, le.num(x, "x")?, le.num(y, "y")?));
    }
    let mut scale = Vec::new();
    if let Some(s) = get("scale") {
        for wp in s.split(';') {
            let (t, v) = wp
                .split_once(':')
                .ok_or_else(|| le.err("scale waypoint must be T:S"))?;
            scale.push((le.num(t, "frame")?, le.num(v, "scale")?));
        }
    }
    let limbs = match get("limbs") {
        None => None,
        Some(l) => {
            let parts: Vec<&str> = l.split(':').collect();
            if parts.len() != 4 {
                return Err(le.err("limbs must be REACH:PERIOD:VALUE:THICKNESS"));
            }
            Some(Limbs {
                reach: le.num(parts[0], "reach")?,
                period: le.num(parts[1], "period")?,
                value: le.num(parts[2], "intensity")?,
                thickness: le.num(parts[3], "thickness")?,
            })
        }
    };

    Ok(ActorSpec {
        id: le.num(need("id")?, "id")?,
        label: need("label")?.to_string(),
        shape: match need("shape")? {
            "rect" => Shape::Rect,
            "ellipse" => Shape::Ellipse,
            other => return Err(le.err(format!("unknown shape '{other}'"))),
        },
        width: le.num(w, "width")?,
        height: le.num(h, "height")?,
        texture,
        visible: (le.num(v0, "frame")?, le.num(v1, "frame")?),
        path,
        scale,
        limbs,
    })
}
