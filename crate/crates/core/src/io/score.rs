//! Class-score maps produced by an external segmenter.
//!
//! Layout, all little-endian: the magic `SSCR`, then `u32` width, height and channel count,
//! then `width·height·channels` `f32` values, row by row, channels interleaved per pixel.

use std::path::Path;

use crate::error::{Error, Location, Result};
use crate::fusion::SegmentationFrame;
use crate::label::NUM_LABELS;
use crate::num::{cast, to_f64, Real};

pub const SCORE_MAGIC: &[u8; 4] = b"SSCR";
const HEADER: usize = 16;

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_score_map<T: Real>(bytes: &[u8], frame_index: usize) -> Result<SegmentationFrame<T>> {
    if bytes.len() < HEADER {
        return Err(Error::format_at_byte(bytes.len() as u64, "truncated header"));
    }
    if &bytes[..4] != SCORE_MAGIC {
        return Err(Error::format_at_byte(0, "bad magic, expected SSCR"));
    }
    let width = u32_at(bytes, 4) as usize;
    let height = u32_at(bytes, 8) as usize;
    let channels = u32_at(bytes, 12) as usize;
    if channels != NUM_LABELS {
        return Err(Error::format_at_byte(
            12,
            format!("expected {NUM_LABELS} channels, found {channels}"),
        ));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels * 4))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| Error::format_at_byte(4, "image dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format_at_byte(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes for {width}x{height}, found {}", bytes.len()),
        ));
    }
    let mut scores = Vec::with_capacity(width * height * channels);
    for (i, raw) in bytes[HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(raw.try_into().expect("4 bytes"));
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Data {
                location: Location::Byte((HEADER + 4 * i) as u64),
                message: format!("score {v} is negative or not finite"),
            });
        }
        scores.push(cast::<T>(v as f64));
    }
    SegmentationFrame::new(width, height, scores, frame_index)
}

pub fn read_score_map<T: Real>(path: &Path, frame_index: usize) -> Result<SegmentationFrame<T>> {
    decode_score_map(&super::read_bytes(path)?, frame_index)
}

pub fn encode_score_map<T: Real>(frame: &SegmentationFrame<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + frame.scores().len() * 4);
    out.extend_from_slice(SCORE_MAGIC);
    for v in [frame.width(), frame.height(), NUM_LABELS] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in frame.scores() {
        out.extend_from_slice(&(to_f64(*v) as f32).to_le_bytes());
    }
    out
}

pub fn write_score_map<T: Real>(frame: &SegmentationFrame<T>, path: &Path) -> Result<()> {
    super::write_file(path, encode_score_map(frame))
}
