//! Decoded grayscale frames from disk or from the synthetic scene renderer.

mod directory;
pub mod scene;
mod synthetic;

use std::sync::Arc;

pub use directory::{open_directory, write_frame};
pub use scene::{ActorSpec, BackgroundSpec, Limbs, OscillatorSpec, SceneSpec, Shape, Texture};
pub use synthetic::{render_synthetic, GroundTruth, GroundTruthObject};

use crate::error::{Error, Result};

/// One grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    /// Position of the frame in the source video.
    pub index: u64,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(index: u64, width: u32, height: u32, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), width as usize * height as usize);
        Frame {
            index,
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn pixel_sum(&self) -> u64 {
        self.pixels.iter().map(|&p| p as u64).sum()
    }
}

/// Luma conversion used for color inputs.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Random-access provider of frames. Positions are 0-based and dense.
pub trait FrameSource: Send + Sync {
    fn dimensions(&self) -> (u32, u32);
    fn len(&self) -> usize;
    fn load(&self, position: usize) -> Result<Frame>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A video as an ordered sequence of frames at a declared rate.
///
/// Frames are addressed by their position in the stream; [`Frame::index`]
/// carries the original source index, which differs from the position after
/// [`FrameStream::downsample`].
#[derive(Clone)]
pub struct FrameStream {
    source: Arc<dyn FrameSource>,
    fps: f64,
    stride: usize,
}

impl std::fmt::Debug for FrameStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (w, h) = self.dimensions();
        f.debug_struct("FrameStream")
            .field("frames", &self.len())
            .field("width", &w)
            .field("height", &h)
            .field("fps", &self.fps)
            .field("stride", &self.stride)
            .finish()
    }
}

impl FrameStream {
    pub fn new(source: Arc<dyn FrameSource>, fps: f64) -> Self {
        FrameStream {
            source,
            fps,
            stride: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.source.len().div_ceil(self.stride)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.source.dimensions()
    }

    /// Effective frame rate of this stream.
    pub fn fps(&self) -> f64 {
        self.fps / self.stride as f64
    }

    /// Number of source frames between consecutive frames of this stream.
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Source frame index of the frame at `position`.
    pub fn source_index(&self, position: usize) -> u64 {
        (position * self.stride) as u64
    }

    pub fn frame(&self, position: usize) -> Result<Frame> {
        self.source.load(position * self.stride)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<Frame>> + '_ {
        (0..self.len()).map(move |p| self.frame(p))
    }

    /// Keep `keep_fps` frames per second of the source rate. Source frame
    /// indices are preserved.
    pub fn downsample(&self, keep_fps: f64) -> Result<FrameStream> {
        let source_fps = self.fps();
        let bad = || Error::Downsample {
            keep: keep_fps,
            source_fps,
        };
        if !(keep_fps > 0.0) || keep_fps > source_fps + 1e-9 {
            return Err(bad());
        }
        let ratio = source_fps / keep_fps;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-6 && keep_fps != 1.0 {
            return Err(bad());
        }
        Ok(FrameStream {
            source: self.source.clone(),
            fps: self.fps,
            stride: self.stride * (k.max(1.0) as usize),
        })
    }
}

/// In-memory frame source, mostly for tests.
pub struct MemorySource {
    width: u32,
    height: u32,
    frames: Vec<Vec<u8>>,
}

impl MemorySource {
    pub fn new(width: u32, height: u32, frames: Vec<Vec<u8>>) -> Self {
        assert!(frames
            .iter()
            .all(|f| f.len() == width as usize * height as usize));
        MemorySource {
            width,
            height,
            frames,
        }
    }

    pub fn into_stream(self, fps: f64) -> FrameStream {
        FrameStream::new(Arc::new(self), fps)
    }
}

impl FrameSource for MemorySource {
    fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn len(&self) -> usize {
        self.frames.len()
    }

    fn load(&self, position: usize) -> Result<Frame> {
        let pixels = self
            .frames
            .get(position)
            .ok_or(Error::MissingFrame(position as u64))?
            .clone();
        Ok(Frame::new(position as u64, self.width, self.height, pixels))
    }
}
