//! Single-channel floating-point images and bilinear resampling.
//!
//! Frames on disk are 8-bit grayscale ([`GrayImage`]); everything downstream
//! of the sampler works on [`Image`], a row-major `f32` buffer whose values
//! are nominally in `[0, 1]`.

pub use image::GrayImage;

/// Row-major single-channel image with `f32` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "image buffer size mismatch");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width])
    }

    /// Converts an 8-bit frame to `[0, 1]` intensities.
    pub fn from_gray(frame: &GrayImage) -> Self {
        let (w, h) = frame.dimensions();
        let data = frame.as_raw().iter().map(|&p| f32::from(p) / 255.0).collect();
        Self::new(h as usize, w as usize, data)
    }

    /// Quantizes back to 8 bits, clamping to the valid range.
    pub fn to_gray(&self) -> GrayImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64) as f32
    }

    /// Copies the window `[y0, y0 + h) × [x0, x0 + w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop out of bounds");
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
        }
        Image::new(h, w, data)
    }

    pub fn resize(&self, height: usize, width: usize) -> Image {
        Image::new(
            height,
            width,
            resize_bilinear(&self.data, self.height, self.width, height, width),
        )
    }
}

/// Source sampling positions for one output axis (half-pixel centres,
/// edge-clamped): lower index, upper index, interpolation fraction.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if a == b {
        a
    } else {
        a + (b - a) * t
    }
}

/// Bilinear resize of a row-major buffer. Same-size input is copied verbatim
/// and constant input stays exactly constant.
pub fn resize_bilinear(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f32> {
    assert!(src_h > 0 && src_w > 0 && dst_h > 0 && dst_w > 0);
    if src_h == dst_h && src_w == dst_w {
        return src.to_vec();
    }
    let ys = axis_taps(src_h, dst_h);
    let xs = axis_taps(src_w, dst_w);
    // Horizontal pass first over every source row, then vertical.
    let mut tmp = vec![0.0f32; src_h * dst_w];
    for y in 0..src_h {
        let row = &src[y * src_w..(y + 1) * src_w];
        let out = &mut tmp[y * dst_w..(y + 1) * dst_w];
        for (o, &(lo, hi, t)) in out.iter_mut().zip(&xs) {
            *o = lerp(row[lo], row[hi], t);
        }
    }
    let mut dst = vec![0.0f32; dst_h * dst_w];
    for (y, &(lo, hi, t)) in ys.iter().enumerate() {
        let a = &tmp[lo * dst_w..(lo + 1) * dst_w];
        let b = &tmp[hi * dst_w..(hi + 1) * dst_w];
        for ((o, &va), &vb) in dst[y * dst_w..(y + 1) * dst_w].iter_mut().zip(a).zip(b) {
            *o = lerp(va, vb, t);
        }
    }
    dst
}

/// Bilinear resize of an 8-bit frame, rounding back to 8 bits.
pub fn resize_gray(frame: &GrayImage, height: usize, width: usize) -> GrayImage {
    let (w, h) = frame.dimensions();
    if (h as usize, w as usize) == (height, width) {
        return frame.clone();
    }
    let src: Vec<f32> = frame.as_raw().iter().map(|&p| f32::from(p)).collect();
    let out = resize_bilinear(&src, h as usize, w as usize, height, width);
    let raw = out
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::from_raw(width as u32, height as u32, raw).expect("dimensions match")
}
