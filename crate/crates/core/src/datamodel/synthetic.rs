//! Synthetic lung-ultrasound-like videos with planted, labelled artifacts.
//!
//! Each frame shows a bright pleural line and below it one of two artifact
//! classes: horizontal reverberation bands (A-lines, class 0) or vertical
//! comet-tail bands (B-lines, class 1). The active class holds for runs of
//! `artifact_dwell` frames and may switch between runs; the video-level AB
//! label is the majority frame class. A thin band under the pleural line
//! either shimmers over time (sliding) or stays static (absent), which in
//! M-mode shows up as granular texture versus horizontal stripes.

use std::collections::BTreeMap;
use std::f32::consts::TAU;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, VideoRecord};
use crate::mmode::{PleuralRoi, STANDARD_SIZE};
use crate::{Error, Result};

pub const AB_CLASSES: [&str; 2] = ["A-lines", "B-lines"];
pub const LS_CLASSES: [&str; 2] = ["sliding", "absent"];

/// Probability that a run shows the video's dominant artifact class.
const DOMINANT_RUN_PROB: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub videos_per_patient: usize,
    pub frames_per_video: usize,
    pub fps: f64,
    /// `(height, width)` of the raw frames.
    pub frame_size: (usize, usize),
    /// Frames an artifact class persists before it may switch.
    pub artifact_dwell: usize,
    /// Speckle standard deviation in 8-bit pixel units.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 160,
            videos_per_patient: 6,
            frames_per_video: 40,
            fps: 10.0,
            frame_size: (64, 64),
            artifact_dwell: 20,
            noise_level: 25.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// A smaller dataset (40 patients × 4 videos) for repeated-seed
    /// comparisons.
    pub fn small() -> Self {
        Self {
            n_patients: 40,
            videos_per_patient: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_patients", self.n_patients),
            ("videos_per_patient", self.videos_per_patient),
            ("frames_per_video", self.frames_per_video),
            ("artifact_dwell", self.artifact_dwell),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        if self.frame_size.0 < 16 || self.frame_size.1 < 16 {
            return Err(Error::InvalidArgument(format!(
                "frame_size {:?} too small (min 16x16)",
                self.frame_size
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidFrameRate(self.fps));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidArgument("noise_level must be >= 0".into()));
        }
        Ok(())
    }
}

/// Generated videos plus the pleural ROI of each (standardized coordinates).
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub rois: BTreeMap<String, PleuralRoi>,
}

pub fn generate_synthetic_dataset(config: &SyntheticConfig) -> Result<DatasetManifest> {
    Ok(generate_synthetic(config)?.manifest)
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let mut rois = BTreeMap::new();
    for p in 0..config.n_patients {
        for v in 0..config.videos_per_patient {
            let video_seed: u64 = master.random();
            let id = format!("syn_p{p:03}_v{v:02}");
            let video = SyntheticVideo::sample(config, &mut ChaCha8Rng::seed_from_u64(video_seed));
            let (frames, frame_classes) = video.render(config, video_seed);
            let ab = majority(&frame_classes, video.dominant);
            let labels = BTreeMap::from([
                ("AB".to_string(), ab),
                ("LS".to_string(), usize::from(!video.sliding)),
            ]);
            let record = VideoRecord::in_memory(&id, format!("syn_p{p:03}"), config.fps, frames, labels)?
                .with_frame_labels("AB", frame_classes);
            rois.insert(id, video.standardized_roi(config.frame_size.1));
            records.push(record);
        }
    }
    let vocab = |c: [&str; 2]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let manifest = DatasetManifest {
        records,
        tasks: BTreeMap::from([("AB".into(), vocab(AB_CLASSES)), ("LS".into(), vocab(LS_CLASSES))]),
        provenance: format!("synthetic: {}", serde_json::to_string(config)?),
    };
    Ok(SyntheticDataset { manifest, rois })
}

fn majority(classes: &[usize], tie_break: usize) -> usize {
    let ones = classes.iter().filter(|&&c| c == 1).count();
    let zeros = classes.len() - ones;
    match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => tie_break,
    }
}

/// Per-video random scene parameters.
struct SyntheticVideo {
    dominant: usize,
    run_classes: Vec<usize>,
    sliding: bool,
    gain: f32,
    offset: f32,
    pleura_y: f32,
    x_lo: usize,
    x_hi: usize,
    /// Vertical wobble amplitude and phase of the A-line bands.
    a_wobble: (f32, f32),
    /// B-line positions (fraction of ROI width) and their lateral drift phases.
    b_lines: Vec<(f32, f32)>,
    /// Shimmer phase per pixel of the band under the pleural line.
    shimmer_phase: Vec<f32>,
    /// Static soft-tissue texture above the pleura.
    tissue: Vec<f32>,
}

const SHIMMER_ROWS: usize = 5;
const SHIMMER_FREQ: f32 = 0.23;

impl SyntheticVideo {
    fn sample(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = config.frame_size;
        let dominant = usize::from(rng.random_bool(0.5));
        let n_runs = config.frames_per_video.div_ceil(config.artifact_dwell);
        let run_classes = (0..n_runs)
            .map(|_| {
                if rng.random_bool(DOMINANT_RUN_PROB) {
                    dominant
                } else {
                    1 - dominant
                }
            })
            .collect();
        let n_b = rng.random_range(1..=3);
        Self {
            dominant,
            run_classes,
            sliding: rng.random_bool(0.5),
            gain: rng.random_range(0.85..1.15),
            offset: rng.random_range(-0.03..0.03),
            pleura_y: rng.random_range(0.22..0.26) * h as f32,
            x_lo: (rng.random_range(0.12..0.28) * w as f32) as usize,
            x_hi: (rng.random_range(0.72..0.88) * w as f32) as usize,
            a_wobble: (rng.random_range(0.3..1.2), rng.random_range(0.0..TAU)),
            b_lines: (0..n_b)
                .map(|_| (rng.random_range(0.3..0.7), rng.random_range(0.0..TAU)))
                .collect(),
            shimmer_phase: (0..SHIMMER_ROWS * w).map(|_| rng.random_range(0.0..TAU)).collect(),
            tissue: (0..h * w).map(|_| rng.random_range(0.0..0.12)).collect(),
        }
    }

    fn standardized_roi(&self, raw_width: usize) -> PleuralRoi {
        let scale = STANDARD_SIZE.1 as f64 / raw_width as f64;
        let lo = (self.x_lo as f64 * scale).ceil() as usize;
        let hi = (((self.x_hi + 1) as f64 * scale).floor() as usize)
            .saturating_sub(1)
            .min(STANDARD_SIZE.1 - 1);
        PleuralRoi { x_lo: lo.min(hi), x_hi: hi }
    }

    fn render(&self, config: &SyntheticConfig, video_seed: u64) -> (Vec<GrayImage>, Vec<usize>) {
        let (h, w) = config.frame_size;
        // Speckle has its own stream so scene parameters don't depend on noise_level.
        let mut noise_rng = ChaCha8Rng::seed_from_u64(video_seed ^ 0x5eed_5eed_5eed_5eed);
        let speckle = Normal::new(0.0, config.noise_level.max(0.0)).expect("valid sigma");
        let mut frames = Vec::with_capacity(config.frames_per_video);
        let mut classes = Vec::with_capacity(config.frames_per_video);
        for t in 0..config.frames_per_video {
            let class = self.run_classes[t / config.artifact_dwell];
            classes.push(class);
            let clean = self.clean_frame(h, w, t as f32, class);
            let raw = clean
                .iter()
                .map(|&v| {
                    let mut p = f64::from(v) * 255.0;
                    if config.noise_level > 0.0 {
                        p += speckle.sample(&mut noise_rng);
                    }
                    p.round().clamp(0.0, 255.0) as u8
                })
                .collect();
            frames.push(GrayImage::from_raw(w as u32, h as u32, raw).expect("dims"));
        }
        (frames, classes)
    }

    fn clean_frame(&self, h: usize, w: usize, t: f32, class: usize) -> Vec<f32> {
        let mut img = vec![0.0f32; h * w];
        let py = self.pleura_y;
        let roi = self.x_lo as f32..=self.x_hi as f32;
        let roi_w = (self.x_hi - self.x_lo) as f32;
        let gauss = |d: f32, s: f32| (-0.5 * (d / s) * (d / s)).exp();
        let breathing = (TAU * t / 20.0).sin();

        for y in 0..h {
            let yf = y as f32;
            for x in 0..w {
                let xf = x as f32;
                let mut v = 0.06 + 0.08 * yf / h as f32;
                if yf < py - 1.5 {
                    v += self.tissue[y * w + x];
                }
                let in_roi = roi.contains(&xf);
                if in_roi {
                    v += 0.65 * gauss(yf - py, 0.9);
                    let below = y as isize - (py.ceil() as isize + 1);
                    if (0..SHIMMER_ROWS as isize).contains(&below) {
                        let phase = self.shimmer_phase[below as usize * w + x];
                        let tt = if self.sliding { t } else { 0.0 };
                        v += 0.12 * (1.0 + (TAU * SHIMMER_FREQ * tt + phase).sin());
                    }
                    if yf > py + 2.0 {
                        v += match class {
                            0 => {
                                let shift = self.a_wobble.0 * (breathing + self.a_wobble.1).sin();
                                (2..=4)
                                    .map(|k| {
                                        let depth = k as f32 * py + shift;
                                        0.5 / (k as f32 - 1.0) * gauss(yf - depth, 1.1)
                                    })
                                    .sum::<f32>()
                            }
                            _ => self
                                .b_lines
                                .iter()
                                .map(|&(pos, phase)| {
                                    let cx = self.x_lo as f32
                                        + pos * roi_w
                                        + 1.5 * (TAU * t / 16.0 + phase).sin();
                                    0.45 * gauss(xf - cx, 1.3) * (1.0 - 0.4 * yf / h as f32)
                                })
                                .sum::<f32>(),
                        };
                    }
                }
                img[y * w + x] = self.gain * v + self.offset;
            }
        }
        img
    }
}
