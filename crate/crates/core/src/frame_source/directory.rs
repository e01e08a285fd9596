use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{DynamicImage, ExtendedColorType};

use super::{luma, Frame, FrameSource, FrameStream};
use crate::error::{Error, Result};

const EXTENSIONS: [&str; 2] = ["pgm", "png"];

struct DirectorySource {
    files: Vec<PathBuf>,
    width: u32,
    height: u32,
}

/// Open a directory of frames named by zero-padded index (`000000.pgm`, ...).
///
/// Indices must run from 0 without gaps and all frames must share one size.
pub fn open_directory(path: &Path, fps_declared: f64) -> Result<FrameStream> {
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut indexed = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        let Some(index) = p
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        indexed.push((index, p));
    }
    if indexed.is_empty() {
        return Err(Error::NoFrames);
    }
    indexed.sort();
    for (expected, (index, _)) in indexed.iter().enumerate() {
        if *index != expected as u64 {
            // First index that is absent from the sequence.
            return Err(Error::FrameGap(expected as u64));
        }
    }

    let dims = |p: &Path| {
        image::image_dimensions(p).map_err(|e| Error::Image {
            path: p.to_path_buf(),
            message: e.to_string(),
        })
    };
    let (width, height) = dims(&indexed[0].1)?;
    for (index, p) in &indexed[1..] {
        let (w, h) = dims(p)?;
        if (w, h) != (width, height) {
            return Err(Error::MixedDimensions {
                index: *index,
                expected_w: width,
                expected_h: height,
                found_w: w,
                found_h: h,
            });
        }
    }

    let source = DirectorySource {
        files: indexed.into_iter().map(|(_, p)| p).collect(),
        width,
        height,
    };
    Ok(FrameStream::new(Arc::new(source), fps_declared))
}

impl FrameSource for DirectorySource {
    fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn len(&self) -> usize {
        self.files.len()
    }

    fn load(&self, position: usize) -> Result<Frame> {
        let path = self
            .files
            .get(position)
            .ok_or(Error::MissingFrame(position as u64))?;
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let (w, h) = (img.width(), img.height());
        if (w, h) != (self.width, self.height) {
            return Err(Error::MixedDimensions {
                index: position as u64,
                expected_w: self.width,
                expected_h: self.height,
                found_w: w,
                found_h: h,
            });
        }
        let pixels = match img {
            DynamicImage::ImageLuma8(g) => g.into_raw(),
            other => other
                .to_rgb8()
                .pixels()
                .map(|p| luma(p[0], p[1], p[2]))
                .collect(),
        };
        Ok(Frame::new(position as u64, w, h, pixels))
    }
}

/// Write `frame` as `<dir>/<index:06>.pgm`.
pub fn write_frame(dir: &Path, frame: &Frame) -> Result<PathBuf> {
    let path = dir.join(format!("{:06}.pgm", frame.index));
    image::save_buffer(
        &path,
        &frame.pixels,
        frame.width,
        frame.height,
        ExtendedColorType::L8,
    )
    .map_err(|e| Error::Image {
        path: path.clone(),
        message: e.to_string(),
    })?;
    Ok(path)
}
