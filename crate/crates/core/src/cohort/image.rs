use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel 2-D float image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Format("empty image".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Format(format!(
                "{rows}x{cols} image with {} pixels",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Encoder input contract: target resolution and normalization constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageConfig {
    pub rows: usize,
    pub cols: usize,
    pub mean: f64,
    pub std: f64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            mean: 0.2,
            std: 0.25,
        }
    }
}

impl ImageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 8 || self.cols < 8 {
            return Err(Error::config(format!(
                "image resolution {}x{} below 8x8",
                self.rows, self.cols
            )));
        }
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::config("image normalization needs finite mean and std > 0"));
        }
        Ok(())
    }

    /// Length of the flattened 3-channel encoder input.
    pub fn flat_len(&self) -> usize {
        3 * self.rows * self.cols
    }
}

/// Bilinear resize with half-pixel centers and edge clamping. The origin
/// stays at the top-left corner, so left-aligned content stays left-aligned.
pub fn resize_bilinear(img: &Image, rows: usize, cols: usize) -> Result<Image> {
    if rows == 0 || cols == 0 {
        return Err(Error::Format("resize to an empty image".into()));
    }
    if rows == img.rows && cols == img.cols {
        return Ok(img.clone());
    }
    let src_coord = |dst: usize, n_dst: usize, n_src: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_src - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (r0, r1, fr) = src_coord(r, rows, img.rows);
        for c in 0..cols {
            let (c0, c1, fc) = src_coord(c, cols, img.cols);
            let top = img.get(r0, c0) * (1.0 - fc) + img.get(r0, c1) * fc;
            let bottom = img.get(r1, c0) * (1.0 - fc) + img.get(r1, c1) * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Image::new(rows, cols, out)
}

/// Resize, normalize, and replicate to three channels: `[3 × rows × cols]`.
pub fn preprocess_image(img: &Image, cfg: &ImageConfig) -> Result<Tensor> {
    let resized = resize_bilinear(img, cfg.rows, cfg.cols)?;
    let plane: Vec<f64> = resized.data().iter().map(|v| (v - cfg.mean) / cfg.std).collect();
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::new(vec![3, cfg.rows, cfg.cols], data)
}
