//! Intra-video positive pairs and their distance-based sample weights.
//!
//! B-mode pairs are two frames of one video at most `round(delta_t · fps)`
//! frames apart. M-mode pairs are two M-mode slices of one standardized
//! video whose columns are at most `delta_x` pixels apart. A pair at
//! separation `s` under bound `δ` (both in frames or pixels) gets weight
//! `(δ − s) / (δ + 1)`, or 1 when `δ = 0`.
//!
//! The second member is drawn uniformly from the window around the first,
//! clipped to the video (or to the candidate columns); the anchor itself
//! stays eligible.

use image::GrayImage;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::VideoRecord;
use crate::image::resize_gray;
use crate::mmode::{self, candidate_columns, extract_mmode_frames, PleuralRoi};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    Bmode,
    Mmode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvppConfig {
    pub mode: PairMode,
    /// Maximum temporal separation in seconds (B-mode).
    pub delta_t: f64,
    /// Maximum column separation in pixels (M-mode).
    pub delta_x: usize,
    pub use_sample_weights: bool,
    /// M-mode pairs share one time segment (otherwise drawn independently).
    pub shared_segment: bool,
    pub segment_seconds: f64,
}

impl Default for IvppConfig {
    fn default() -> Self {
        Self {
            mode: PairMode::Bmode,
            delta_t: 0.0,
            delta_x: 0,
            use_sample_weights: false,
            shared_segment: true,
            segment_seconds: mmode::DEFAULT_SEGMENT_SECONDS,
        }
    }
}

impl IvppConfig {
    pub fn bmode(delta_t: f64, use_sample_weights: bool) -> Self {
        Self {
            mode: PairMode::Bmode,
            delta_t,
            use_sample_weights,
            ..Self::default()
        }
    }

    pub fn mmode(delta_x: usize, use_sample_weights: bool) -> Self {
        Self {
            mode: PairMode::Mmode,
            delta_x,
            use_sample_weights,
            ..Self::default()
        }
    }

    /// Whether weights can differ from one: requested and a nonzero bound.
    /// With a zero bound every pair has weight 1, so the run is the same as
    /// one without weights.
    pub fn weights_active(&self) -> bool {
        self.use_sample_weights
            && match self.mode {
                PairMode::Bmode => self.delta_t > 0.0,
                PairMode::Mmode => self.delta_x > 0,
            }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_t >= 0.0 && self.delta_t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta_t must be >= 0, got {}",
                self.delta_t
            )));
        }
        if !(self.segment_seconds > 0.0) {
            return Err(Error::InvalidArgument("segment_seconds must be > 0".into()));
        }
        Ok(())
    }
}

/// Two views from one video, their raw separation and sample weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivePair {
    pub view_a: GrayImage,
    pub view_b: GrayImage,
    /// Frames (B-mode) or pixels (M-mode).
    pub separation: usize,
    pub weight: f64,
    pub source_video_id: String,
}

/// Distance weight for a pair `separation` units apart under bound `delta`.
pub fn pair_weight(separation: usize, delta: usize) -> Result<f64> {
    if separation > delta {
        return Err(Error::InvalidArgument(format!(
            "separation {separation} exceeds bound {delta}"
        )));
    }
    if delta == 0 {
        return Ok(1.0);
    }
    Ok((delta - separation) as f64 / (delta + 1) as f64)
}

/// Temporal bound in frames.
pub fn frame_window(delta_t: f64, fps: f64) -> usize {
    (delta_t * fps).round().max(0.0) as usize
}

/// Draws `(i, j)` with `i` uniform over `[0, n)` and `j` uniform over the
/// clipped window `[i − window, i + window] ∩ [0, n)`.
pub fn sample_frame_indices<R: Rng + ?Sized>(n: usize, window: usize, rng: &mut R) -> (usize, usize) {
    assert!(n > 0);
    let i = rng.random_range(0..n);
    let lo = i.saturating_sub(window);
    let hi = (i + window).min(n - 1);
    (i, rng.random_range(lo..=hi))
}

/// Draws `(x1, x2)` with `x1` uniform over `columns` and `x2` uniform over
/// the columns within `delta_x` of `x1` (including `x1`).
pub fn sample_column_pair<R: Rng + ?Sized>(
    columns: &[usize],
    delta_x: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    let &x1 = columns
        .choose(rng)
        .ok_or_else(|| Error::Empty("candidate column list".into()))?;
    let eligible: Vec<usize> = columns
        .iter()
        .copied()
        .filter(|&x| x.abs_diff(x1) <= delta_x)
        .collect();
    let &x2 = eligible.choose(rng).expect("x1 is always eligible");
    Ok((x1, x2))
}

fn weight_for(config: &IvppConfig, separation: usize, delta: usize) -> Result<f64> {
    if config.use_sample_weights {
        pair_weight(separation, delta)
    } else {
        Ok(1.0)
    }
}

pub fn sample_bmode_pair<R: Rng + ?Sized>(
    video: &VideoRecord,
    config: &IvppConfig,
    rng: &mut R,
) -> Result<PositivePair> {
    let frames = video.frames()?;
    if frames.is_empty() {
        return Err(Error::Empty(format!("video {}", video.video_id)));
    }
    let window = frame_window(config.delta_t, video.fps);
    let (i, j) = sample_frame_indices(frames.len(), window, rng);
    let separation = i.abs_diff(j);
    Ok(PositivePair {
        view_a: frames[i].clone(),
        view_b: frames[j].clone(),
        separation,
        weight: weight_for(config, separation, window)?,
        source_video_id: video.video_id.clone(),
    })
}

/// Column and segment choices for one M-mode pair.
struct MmodePlan {
    x1: usize,
    x2: usize,
    t1: usize,
    t2: usize,
    len: usize,
}

fn plan_mmode_pair<R: Rng + ?Sized>(
    columns: &[usize],
    n_frames: usize,
    fps: f64,
    config: &IvppConfig,
    rng: &mut R,
) -> Result<MmodePlan> {
    if n_frames == 0 {
        return Err(Error::Empty("video has no frames".into()));
    }
    let (x1, x2) = sample_column_pair(columns, config.delta_x, rng)?;
    let len = mmode::segment_len(fps, config.segment_seconds).clamp(1, n_frames);
    let t1 = rng.random_range(0..=n_frames - len);
    let t2 = if config.shared_segment {
        t1
    } else {
        rng.random_range(0..=n_frames - len)
    };
    Ok(MmodePlan { x1, x2, t1, t2, len })
}

fn mmode_pair(plan: &MmodePlan, a: GrayImage, b: GrayImage, config: &IvppConfig, video_id: &str) -> Result<PositivePair> {
    let separation = plan.x1.abs_diff(plan.x2);
    Ok(PositivePair {
        view_a: a,
        view_b: b,
        separation,
        weight: weight_for(config, separation, config.delta_x)?,
        source_video_id: video_id.to_string(),
    })
}

/// Samples an M-mode pair from a standardized video. The segment start is
/// uniform over valid starts; videos shorter than one segment use all
/// frames.
pub fn sample_mmode_pair<R: Rng + ?Sized>(
    video: &VideoRecord,
    columns: &[usize],
    config: &IvppConfig,
    rng: &mut R,
) -> Result<PositivePair> {
    let plan = plan_mmode_pair(columns, video.num_frames()?, video.fps, config, rng)?;
    let a = extract_mmode_frames(video, plan.x1, plan.t1, plan.len)?;
    let b = extract_mmode_frames(video, plan.x2, plan.t2, plan.len)?;
    mmode_pair(&plan, a.pixels, b.pixels, config, &video.video_id)
}

/// Something that can produce one positive pair per indexed video.
pub trait PairSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample_pair(&self, index: usize, config: &IvppConfig, rng: &mut dyn rand::RngCore) -> Result<PositivePair>;
}

/// B-mode pairs straight from raw frames.
pub struct BmodeSource<'a> {
    pub videos: Vec<&'a VideoRecord>,
}

impl PairSource for BmodeSource<'_> {
    fn len(&self) -> usize {
        self.videos.len()
    }

    fn sample_pair(&self, index: usize, config: &IvppConfig, rng: &mut dyn rand::RngCore) -> Result<PositivePair> {
        sample_bmode_pair(self.videos[index], config, rng)
    }
}

/// M-mode pairs from raw videos. Candidate columns are ranked once on the
/// standardized video; at sampling time only the frames of the drawn
/// segment are standardized, which yields the same pixels as extracting
/// from a fully standardized video.
pub struct MmodeSource<'a> {
    videos: Vec<(&'a VideoRecord, Vec<usize>)>,
    standard_size: (usize, usize),
}

impl<'a> MmodeSource<'a> {
    pub fn new(videos: Vec<(&'a VideoRecord, PleuralRoi)>, standard_size: (usize, usize)) -> Result<Self> {
        let videos = videos
            .into_iter()
            .map(|(video, roi)| {
                let std_video = mmode::standardize_video(video, standard_size)?;
                Ok((video, candidate_columns(&std_video, roi)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { videos, standard_size })
    }

    pub fn columns(&self, index: usize) -> &[usize] {
        &self.videos[index].1
    }

    fn standardized_segment(&self, video: &VideoRecord, t: usize, len: usize) -> Result<Vec<GrayImage>> {
        let (h, w) = self.standard_size;
        Ok(video.frames()?[t..t + len].iter().map(|f| resize_gray(f, h, w)).collect())
    }
}

fn column_of(frames: &[GrayImage], x: usize) -> GrayImage {
    let h = frames[0].height();
    GrayImage::from_fn(frames.len() as u32, h, |t, y| *frames[t as usize].get_pixel(x as u32, y))
}

impl PairSource for MmodeSource<'_> {
    fn len(&self) -> usize {
        self.videos.len()
    }

    fn sample_pair(&self, index: usize, config: &IvppConfig, rng: &mut dyn rand::RngCore) -> Result<PositivePair> {
        let (video, columns) = &self.videos[index];
        let plan = plan_mmode_pair(columns, video.num_frames()?, video.fps, config, rng)?;
        let seg1 = self.standardized_segment(video, plan.t1, plan.len)?;
        let a = column_of(&seg1, plan.x1);
        let b = if plan.t2 == plan.t1 {
            column_of(&seg1, plan.x2)
        } else {
            column_of(&self.standardized_segment(video, plan.t2, plan.len)?, plan.x2)
        };
        mmode_pair(&plan, a, b, config, &video.video_id)
    }
}

/// Yields video indices from successive seeded shuffles of `0..n`.
#[derive(Debug, Clone)]
pub struct VideoCycler {
    order: Vec<usize>,
    pos: usize,
}

impl VideoCycler {
    pub fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next_index<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// One batch of positive pairs in pair order.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub views_a: Vec<GrayImage>,
    pub views_b: Vec<GrayImage>,
    pub weights: Vec<f64>,
    pub separations: Vec<usize>,
    pub video_ids: Vec<String>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Draws `batch_size` videos (reshuffling after each pass) and one pair per video.
pub fn make_batch<R: Rng>(
    source: &dyn PairSource,
    cycler: &mut VideoCycler,
    config: &IvppConfig,
    batch_size: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch size must be >= 2, got {batch_size}"
        )));
    }
    if source.is_empty() {
        return Err(Error::Empty("pretraining dataset".into()));
    }
    let mut batch = PairBatch {
        views_a: Vec::with_capacity(batch_size),
        views_b: Vec::with_capacity(batch_size),
        weights: Vec::with_capacity(batch_size),
        separations: Vec::with_capacity(batch_size),
        video_ids: Vec::with_capacity(batch_size),
    };
    for _ in 0..batch_size {
        let idx = cycler.next_index(rng);
        let pair = source.sample_pair(idx, config, rng)?;
        batch.views_a.push(pair.view_a);
        batch.views_b.push(pair.view_b);
        batch.weights.push(pair.weight);
        batch.separations.push(pair.separation);
        batch.video_ids.push(pair.source_video_id);
    }
    Ok(batch)
}
