//! Fixed image embedding for the Fréchet distance: 8×8 average-pooled luma.

use crate::error::{Error, Result};
use crate::image::Image;

pub const FEATURE_GRID: usize = 8;
pub const FEATURE_DIM: usize = FEATURE_GRID * FEATURE_GRID;

/// Rec. 601 luma, averaged over equal cells of an 8×8 grid. Values in `[0, 1]`.
pub fn pooled_grayscale(image: &Image) -> Result<Vec<f64>> {
    let (w, h) = (image.width(), image.height());
    if w % FEATURE_GRID != 0 || h % FEATURE_GRID != 0 {
        return Err(Error::Image(format!(
            "{w}x{h} image is not divisible into an {FEATURE_GRID}x{FEATURE_GRID} grid"
        )));
    }
    let (cw, ch) = (w / FEATURE_GRID, h / FEATURE_GRID);
    let mut out = vec![0f64; FEATURE_DIM];
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = image.pixel(x, y);
            let luma = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
            out[(y / ch) * FEATURE_GRID + x / cw] += luma;
        }
    }
    let cell = (cw * ch) as f64;
    for v in &mut out {
        *v = (*v / cell).clamp(0.0, 1.0);
    }
    Ok(out)
}

pub fn extract_all(images: &[Image]) -> Result<Vec<Vec<f64>>> {
    images.iter().map(pooled_grayscale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_gives_constant_features() {
        let f = pooled_grayscale(&Image::filled(16, 16, [1.0, 1.0, 1.0])).unwrap();
        assert_eq!(f.len(), FEATURE_DIM);
        assert!(f.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_indivisible_extent() {
        assert!(pooled_grayscale(&Image::filled(12, 16, [0.0; 3])).is_err());
    }
}
