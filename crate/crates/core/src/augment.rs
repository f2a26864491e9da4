//! Stochastic augmentation and deterministic preprocessing.
//!
//! Augmentation runs in a fixed order: random resized crop, horizontal
//! flip, brightness, contrast, Gaussian blur, each gated by its own coin
//! flip. Intensities are in `[0, 1]`; brightness adds a delta and contrast
//! scales around the image mean by `1 + delta`, both clamped afterwards.
//! Crops are taken on the already-resized image.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::Task;
use crate::image::Image;
use crate::{Error, Result};

/// Crop sampling gives up after this many rejected draws.
pub const MAX_CROP_ATTEMPTS: usize = 10;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Crop area as a fraction of the image area.
    pub crop_area_range: (f64, f64),
    /// Crop width / height.
    pub crop_aspect_range: (f64, f64),
    pub p_flip: f64,
    pub p_brightness: f64,
    pub p_contrast: f64,
    pub p_blur: f64,
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub blur_kernel: usize,
    pub blur_sigma_range: (f64, f64),
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("crop_area_range", self.crop_area_range),
            ("crop_aspect_range", self.crop_aspect_range),
            ("blur_sigma_range", self.blur_sigma_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(0.0 <= lo && lo <= hi) {
                return Err(Error::InvalidArgument(format!("{name} must satisfy 0 <= lo <= hi")));
            }
        }
        if self.crop_area_range.1 > 1.0 || self.crop_aspect_range.0 <= 0.0 {
            return Err(Error::InvalidArgument("crop ranges out of bounds".into()));
        }
        for (name, (lo, hi)) in [
            ("brightness_range", self.brightness_range),
            ("contrast_range", self.contrast_range),
        ] {
            if lo > hi {
                return Err(Error::InvalidArgument(format!("{name} must satisfy lo <= hi")));
            }
        }
        for p in [self.p_flip, self.p_brightness, self.p_contrast, self.p_blur] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.blur_kernel % 2 == 0 {
            return Err(Error::InvalidArgument("blur_kernel must be odd".into()));
        }
        Ok(())
    }

    /// No-op policy: full-image crop, every transform disabled.
    pub fn identity() -> Self {
        Self {
            crop_area_range: (1.0, 1.0),
            crop_aspect_range: (1.0, 1.0),
            p_flip: 0.0,
            p_brightness: 0.0,
            p_contrast: 0.0,
            p_blur: 0.0,
            brightness_range: (0.0, 0.0),
            contrast_range: (0.0, 0.0),
            blur_kernel: 5,
            blur_sigma_range: (0.1, 2.0),
        }
    }
}

/// The standard pipeline for a task. B-mode tasks (COVID, AB) share one
/// policy; LS (M-mode) keeps almost the whole image and uses tall crops.
pub fn default_policy(task: Task) -> AugmentPolicy {
    let (crop_area_range, crop_aspect_range) = match task {
        Task::Covid | Task::Ab => ((0.4, 1.0), (0.8, 1.25)),
        Task::Ls => ((0.95, 1.0), (0.4, 0.6)),
    };
    AugmentPolicy {
        crop_area_range,
        crop_aspect_range,
        p_flip: 0.5,
        p_brightness: 0.5,
        p_contrast: 0.5,
        p_blur: 0.25,
        brightness_range: (-0.25, 0.25),
        contrast_range: (-0.25, 0.25),
        blur_kernel: 5,
        blur_sigma_range: (0.1, 2.0),
    }
}

/// A crop window; `fallback` marks the deterministic centred crop used when
/// every random draw was infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
    pub fallback: bool,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Samples a random crop whose area fraction lies in `area_range` and whose
/// aspect ratio lies in `aspect_range` (log-uniform).
pub fn sample_crop<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    area_range: (f64, f64),
    aspect_range: (f64, f64),
    rng: &mut R,
) -> CropWindow {
    if area_range.0 >= 1.0 {
        // Only the full image has area fraction 1, whatever its aspect ratio.
        return CropWindow {
            y0: 0,
            x0: 0,
            height,
            width,
            fallback: false,
        };
    }
    let area = (height * width) as f64;
    let log_aspect = (aspect_range.0.ln(), aspect_range.1.ln());
    for _ in 0..MAX_CROP_ATTEMPTS {
        let target = area * uniform(rng, area_range);
        let aspect = uniform(rng, log_aspect).exp();
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if (1..=width).contains(&w) && (1..=height).contains(&h) {
            let y0 = rng.random_range(0..=height - h);
            let x0 = rng.random_range(0..=width - w);
            return CropWindow {
                y0,
                x0,
                height: h,
                width: w,
                fallback: false,
            };
        }
    }
    // Largest centred window whose aspect ratio is clamped into range.
    let ratio = width as f64 / height as f64;
    let (h, w) = if ratio < aspect_range.0 {
        (((width as f64 / aspect_range.0).round() as usize).clamp(1, height), width)
    } else if ratio > aspect_range.1 {
        (height, ((height as f64 * aspect_range.1).round() as usize).clamp(1, width))
    } else {
        (height, width)
    };
    CropWindow {
        y0: (height - h) / 2,
        x0: (width - w) / 2,
        height: h,
        width: w,
        fallback: true,
    }
}

pub fn flip_horizontal(img: &Image) -> Image {
    let (h, w) = img.dims();
    let mut out = img.clone();
    for y in 0..h {
        out.data_mut()[y * w..(y + 1) * w].reverse();
    }
    out
}

pub fn adjust_brightness(img: &Image, delta: f32) -> Image {
    let data = img.data().iter().map(|&v| (v + delta).clamp(0.0, 1.0)).collect();
    Image::new(img.height(), img.width(), data)
}

pub fn adjust_contrast(img: &Image, delta: f32) -> Image {
    let mean = img.mean();
    let factor = 1.0 + delta;
    let data = img
        .data()
        .iter()
        .map(|&v| (mean + (v - mean) * factor).clamp(0.0, 1.0))
        .collect();
    Image::new(img.height(), img.width(), data)
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f32> {
    let c = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-0.5 * ((i as f64 - c) / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(img: &Image, kernel: usize, sigma: f64) -> Image {
    let (h, w) = img.dims();
    let k = gaussian_kernel(kernel, sigma.max(1e-6));
    let r = (kernel / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, &kv)| kv * src[y * w + reflect(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, &kv)| kv * tmp[reflect(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    Image::new(h, w, out)
}

/// Applies the stochastic pipeline; output has the input's dimensions.
pub fn augment<R: Rng + ?Sized>(img: &Image, policy: &AugmentPolicy, rng: &mut R) -> Result<Image> {
    if img.is_empty() {
        return Err(Error::Empty("image".into()));
    }
    let (h, w) = img.dims();
    let crop = sample_crop(h, w, policy.crop_area_range, policy.crop_aspect_range, rng);
    let mut out = if (crop.height, crop.width) == (h, w) {
        img.clone()
    } else {
        img.crop(crop.y0, crop.x0, crop.height, crop.width).resize(h, w)
    };
    if rng.random_bool(policy.p_flip) {
        out = flip_horizontal(&out);
    }
    if rng.random_bool(policy.p_brightness) {
        out = adjust_brightness(&out, uniform(rng, policy.brightness_range) as f32);
    }
    if rng.random_bool(policy.p_contrast) {
        out = adjust_contrast(&out, uniform(rng, policy.contrast_range) as f32);
    }
    if rng.random_bool(policy.p_blur) {
        out = gaussian_blur(&out, policy.blur_kernel, uniform(rng, policy.blur_sigma_range));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    /// `(height, width)`.
    pub target_size: (usize, usize),
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl PreprocessSpec {
    pub fn imagenet(target_size: (usize, usize)) -> Self {
        Self {
            target_size,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    /// B-mode inputs are square; M-mode inputs are half as wide.
    pub fn for_task(task: Task) -> Self {
        if task.is_mmode() {
            Self::imagenet((224, 112))
        } else {
            Self::imagenet((224, 224))
        }
    }
}

/// Replicates a grayscale image to three channels and standardizes each.
pub fn normalize(img: &Image, spec: &PreprocessSpec) -> Array3<f32> {
    let (h, w) = img.dims();
    let mut out = Array3::<f32>::zeros((3, h, w));
    for (c, mut plane) in out.outer_iter_mut().enumerate() {
        let (m, s) = (spec.mean[c], spec.std[c]);
        for (o, &v) in plane.iter_mut().zip(img.data()) {
            *o = (v - m) / s;
        }
    }
    out
}

/// Resizes to the target size (bilinear) without normalizing.
pub fn resize_to(img: &Image, spec: &PreprocessSpec) -> Image {
    let (h, w) = spec.target_size;
    img.resize(h, w)
}

/// Bilinear resize, channel replication and per-channel standardization.
pub fn preprocess(img: &Image, spec: &PreprocessSpec) -> Result<Array3<f32>> {
    if img.is_empty() {
        return Err(Error::Empty("image".into()));
    }
    Ok(normalize(&resize_to(img, spec), spec))
}
