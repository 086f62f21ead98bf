use crate::error::{Error, Result};

/// RGB image with channel values in `[0, 1]`, stored row-major as
/// interleaved `H × W × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::Image(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Image("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let o = (y * self.width + x) * CHANNELS;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let o = (y * self.width + x) * CHANNELS;
        self.data[o..o + CHANNELS].copy_from_slice(&rgb);
    }

    /// Copies the `pw × ph` patch with top-left corner `(x0, y0)` as a flat
    /// row-major vector.
    pub fn patch(&self, x0: usize, y0: usize, pw: usize, ph: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(pw * ph * CHANNELS);
        for y in y0..y0 + ph {
            let o = (y * self.width + x0) * CHANNELS;
            out.extend_from_slice(&self.data[o..o + pw * CHANNELS]);
        }
        out
    }

    pub fn paste(&mut self, x0: usize, y0: usize, pw: usize, ph: usize, patch: &[f32]) {
        for (dy, row) in patch.chunks_exact(pw * CHANNELS).take(ph).enumerate() {
            let o = ((y0 + dy) * self.width + x0) * CHANNELS;
            self.data[o..o + pw * CHANNELS].copy_from_slice(row);
        }
    }

    /// Euclidean distance between pixel arrays of equal extent.
    pub fn l2_distance(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Arranges equally-sized images into a grid with `columns` tiles per row.
    pub fn tile(images: &[Image], columns: usize) -> Result<Image> {
        let first = images
            .first()
            .ok_or_else(|| Error::Image("nothing to tile".into()))?;
        let (w, h) = (first.width, first.height);
        if images.iter().any(|im| im.width != w || im.height != h) {
            return Err(Error::Image("tiles differ in size".into()));
        }
        let columns = columns.clamp(1, images.len());
        let rows = images.len().div_ceil(columns);
        let mut out = Image::filled(w * columns, h * rows, [0.0; 3]);
        for (i, im) in images.iter().enumerate() {
            out.paste((i % columns) * w, (i / columns) * h, w, h, &im.data);
        }
        Ok(out)
    }
}
