//! Frame files on disk: digests, data URLs and box overlays.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use base64::Engine;
use image::{Rgb, RgbImage};
use sha2::{Digest, Sha256};
use vadchain_core::{BoundingBox, MediaRef};

pub const FRAME_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];
pub const OVERLAY_STROKE: u32 = 3;
pub const OVERLAY_COLOR: Rgb<u8> = Rgb([255, 0, 0]);

pub fn is_frame_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

pub fn mime_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "image/png",
    }
}

/// Trailing decimal run of a file stem (`frame_000017` -> 17).
pub fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if digits.is_empty() {
        None
    } else {
        digits.parse().ok()
    }
}

pub fn media_ref(path: &Path) -> MediaRef {
    MediaRef::new(path.to_string_lossy().into_owned())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Memoized content digests. Keyed by path, so frames rewritten during a
/// run must go through [`MediaStore::forget`].
#[derive(Debug, Default)]
pub struct MediaStore {
    digests: Mutex<HashMap<PathBuf, String>>,
}

impl MediaStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn digest(&self, media: &MediaRef) -> io::Result<String> {
        let path = PathBuf::from(media.as_str());
        if let Some(d) = self.digests.lock().unwrap().get(&path) {
            return Ok(d.clone());
        }
        let digest = sha256_hex(&std::fs::read(&path)?);
        self.digests.lock().unwrap().insert(path, digest.clone());
        Ok(digest)
    }

    pub fn forget(&self, path: &Path) {
        self.digests.lock().unwrap().remove(path);
    }

    pub fn data_url(&self, media: &MediaRef) -> io::Result<String> {
        let path = Path::new(media.as_str());
        let bytes = std::fs::read(path)?;
        Ok(format!(
            "data:{};base64,{}",
            mime_type(path),
            base64::engine::general_purpose::STANDARD.encode(bytes)
        ))
    }
}

pub fn image_dimensions(path: &Path) -> Result<(u32, u32), image::ImageError> {
    image::image_dimensions(path)
}

/// Integer pixel span `[lo, hi]` covered by `[a, b]`, or `None` when it falls
/// outside `0..limit`.
fn pixel_span(a: f64, b: f64, limit: u32) -> Option<(u32, u32)> {
    if limit == 0 {
        return None;
    }
    let lo = a.floor().max(0.0);
    let hi = (b.ceil() - 1.0).min(limit as f64 - 1.0);
    if hi < lo || lo > limit as f64 - 1.0 {
        // Zero-width boxes still get a one-pixel line.
        let p = a.floor().clamp(0.0, limit as f64 - 1.0);
        return if b >= a { Some((p as u32, p as u32)) } else { None };
    }
    Some((lo as u32, hi as u32))
}

/// Outlines each box with a fixed-colour stroke on a copy of `frame`.
pub fn overlay_boxes(frame: &RgbImage, boxes: &[BoundingBox]) -> RgbImage {
    let mut out = frame.clone();
    let (w, h) = out.dimensions();
    for b in boxes {
        let (Some((x0, x1)), Some((y0, y1))) = (pixel_span(b.x1, b.x2, w), pixel_span(b.y1, b.y2, h))
        else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let edge = x - x0 < OVERLAY_STROKE
                    || x1 - x < OVERLAY_STROKE
                    || y - y0 < OVERLAY_STROKE
                    || y1 - y < OVERLAY_STROKE;
                if edge {
                    out.put_pixel(x, y, OVERLAY_COLOR);
                }
            }
        }
    }
    out
}
