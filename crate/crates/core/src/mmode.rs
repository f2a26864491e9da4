//! M-mode images: one B-mode column stacked over time.
//!
//! Videos are first standardized to a fixed frame size so that column
//! indices (and therefore horizontal pair separations) mean the same thing
//! for every video. The pleural-line ROI comes from an external detector as
//! a CSV file `video_id,x_lo,x_hi` in standardized coordinates.

use std::collections::BTreeMap;
use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::datamodel::VideoRecord;
use crate::image::resize_gray;
use crate::{Error, Result};

/// Standardized B-mode size `(height, width)` used before column indexing.
pub const STANDARD_SIZE: (usize, usize) = (224, 224);

/// Default M-mode segment length in seconds.
pub const DEFAULT_SEGMENT_SECONDS: f64 = 3.0;

/// Inclusive horizontal bounds of the pleural line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PleuralRoi {
    pub x_lo: usize,
    pub x_hi: usize,
}

impl PleuralRoi {
    pub fn new(x_lo: usize, x_hi: usize) -> Result<Self> {
        if x_lo > x_hi {
            return Err(Error::InvalidArgument(format!(
                "ROI bounds reversed: x_lo {x_lo} > x_hi {x_hi}"
            )));
        }
        Ok(Self { x_lo, x_hi })
    }

    pub fn width(&self) -> usize {
        self.x_hi - self.x_lo + 1
    }

    pub fn check_within(&self, frame_width: usize) -> Result<()> {
        if self.x_hi >= frame_width {
            return Err(Error::OutOfRange(format!(
                "ROI [{}, {}] exceeds frame width {frame_width}",
                self.x_lo, self.x_hi
            )));
        }
        Ok(())
    }
}

/// A vertical slice through time: horizontal axis is time, vertical axis is
/// the B-mode vertical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MModeImage {
    pub pixels: GrayImage,
    pub source_video_id: String,
    pub x_coord: usize,
    pub t_start: usize,
}

/// Bilinearly resizes every frame to `size = (height, width)`.
pub fn standardize_video(video: &VideoRecord, size: (usize, usize)) -> Result<VideoRecord> {
    let (h, w) = size;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("invalid size {size:?}")));
    }
    let frames = video.frames()?;
    if frames.is_empty() {
        return Err(Error::Empty(format!("video {} has no frames", video.video_id)));
    }
    let resized = frames.iter().map(|f| resize_gray(f, h, w)).collect();
    video.with_frames(resized)
}

/// Number of frames spanned by `duration_s` seconds at `fps`.
pub fn segment_len(fps: f64, duration_s: f64) -> usize {
    (duration_s * fps).round().max(0.0) as usize
}

/// Extracts the M-mode at column `x` over `[t_start, t_start + round(duration_s · fps))`.
pub fn extract_mmode(
    video: &VideoRecord,
    x: usize,
    t_start: usize,
    duration_s: f64,
) -> Result<MModeImage> {
    extract_mmode_frames(video, x, t_start, segment_len(video.fps, duration_s))
}

/// Extracts the M-mode at column `x` over `len` frames starting at `t_start`.
pub fn extract_mmode_frames(
    video: &VideoRecord,
    x: usize,
    t_start: usize,
    len: usize,
) -> Result<MModeImage> {
    let frames = video.frames()?;
    let (w, h) = frames[0].dimensions();
    if x >= w as usize {
        return Err(Error::OutOfRange(format!("column {x} outside frame width {w}")));
    }
    if len == 0 || t_start + len > frames.len() {
        return Err(Error::OutOfRange(format!(
            "segment [{t_start}, {}) outside video of {} frames",
            t_start + len,
            frames.len()
        )));
    }
    let mut pixels = GrayImage::new(len as u32, h);
    for (t, frame) in frames[t_start..t_start + len].iter().enumerate() {
        for y in 0..h {
            pixels.put_pixel(t as u32, y, *frame.get_pixel(x as u32, y));
        }
    }
    Ok(MModeImage {
        pixels,
        source_video_id: video.video_id.clone(),
        x_coord: x,
        t_start,
    })
}

/// Total intensity of each ROI column summed over all frames of `video`.
pub fn column_intensities(video: &VideoRecord, roi: PleuralRoi) -> Result<Vec<u64>> {
    let frames = video.frames()?;
    let (w, h) = frames[0].dimensions();
    roi.check_within(w as usize)?;
    let mut sums = vec![0u64; roi.width()];
    for frame in frames.iter() {
        let raw = frame.as_raw();
        for y in 0..h as usize {
            let row = &raw[y * w as usize..(y + 1) * w as usize];
            for (s, &p) in sums.iter_mut().zip(&row[roi.x_lo..=roi.x_hi]) {
                *s += u64::from(p);
            }
        }
    }
    Ok(sums)
}

/// The brighter half (rounded up) of the ROI columns, brightest first; ties
/// go to the smaller column index.
pub fn candidate_columns(video: &VideoRecord, roi: PleuralRoi) -> Result<Vec<usize>> {
    let sums = column_intensities(video, roi)?;
    Ok(top_half_by_intensity(roi.x_lo, &sums))
}

/// Ranking rule shared by [`candidate_columns`]: `sums[k]` belongs to column
/// `x_lo + k`.
pub fn top_half_by_intensity(x_lo: usize, sums: &[u64]) -> Vec<usize> {
    let mut cols: Vec<usize> = (0..sums.len()).collect();
    cols.sort_by(|&a, &b| sums[b].cmp(&sums[a]).then(a.cmp(&b)));
    cols.truncate(sums.len().div_ceil(2));
    cols.into_iter().map(|k| x_lo + k).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RoiRow {
    video_id: String,
    x_lo: usize,
    x_hi: usize,
}

/// Reads a `video_id,x_lo,x_hi` CSV.
pub fn load_rois(path: impl AsRef<Path>) -> Result<BTreeMap<String, PleuralRoi>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize() {
        let row: RoiRow = row?;
        out.insert(row.video_id, PleuralRoi::new(row.x_lo, row.x_hi)?);
    }
    Ok(out)
}

pub fn write_rois(path: impl AsRef<Path>, rois: &BTreeMap<String, PleuralRoi>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for (id, roi) in rois {
        writer.serialize(RoiRow {
            video_id: id.clone(),
            x_lo: roi.x_lo,
            x_hi: roi.x_hi,
        })?;
    }
    writer.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}
