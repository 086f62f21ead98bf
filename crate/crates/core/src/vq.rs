//! Patch quantizer: maps images to grids of codeword indices and back.
//!
//! The codebook is a k-means fit over raw pixel patches. Downstream code only
//! sees the token interface, so any frozen quantizer would do.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::metrics::cluster::{kmeans, nearest};

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    patch_h: usize,
    patch_w: usize,
    codewords: Vec<Vec<f32>>,
    /// Largest squared patch-to-codeword distance seen while fitting.
    max_fit_distance: f64,
    /// Within-cluster SSE after each assignment step of the fit.
    sse_history: Vec<f64>,
}

/// `H × W` grid of token ids in raster order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    tokens: Vec<usize>,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize, tokens: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 || tokens.len() != height * width {
            return Err(Error::shape(
                "token_grid",
                format!("{height}x{width} grid with {} tokens", tokens.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            tokens,
        })
    }

    pub fn filled(height: usize, width: usize, token: usize) -> Self {
        Self {
            height,
            width,
            tokens: vec![token; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.tokens[row * self.width + col]
    }
}

impl Codebook {
    /// Builds a codebook from explicit codewords (all entries in `[0, 1]`).
    pub fn from_codewords(patch_h: usize, patch_w: usize, codewords: Vec<Vec<f32>>) -> Result<Self> {
        let dim = patch_h * patch_w * CHANNELS;
        if codewords.is_empty() {
            return Err(Error::invalid("codebook needs at least one codeword"));
        }
        if codewords.iter().any(|c| c.len() != dim) {
            return Err(Error::shape("codebook", format!("codewords must have {dim} entries")));
        }
        if codewords.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("codeword entries must lie in [0, 1]"));
        }
        Ok(Self {
            patch_h,
            patch_w,
            codewords,
            max_fit_distance: 0.0,
            sse_history: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn patch_h(&self) -> usize {
        self.patch_h
    }

    pub fn patch_w(&self) -> usize {
        self.patch_w
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_h * self.patch_w * CHANNELS
    }

    pub fn codewords(&self) -> &[Vec<f32>] {
        &self.codewords
    }

    pub fn max_fit_distance(&self) -> f64 {
        self.max_fit_distance
    }

    pub fn sse_history(&self) -> &[f64] {
        &self.sse_history
    }

    pub(crate) fn set_max_fit_distance(&mut self, d: f64) {
        self.max_fit_distance = d;
    }

    fn grid_extent(&self, image: &Image) -> Result<(usize, usize)> {
        if image.width() % self.patch_w != 0 || image.height() % self.patch_h != 0 {
            return Err(Error::shape(
                "encode",
                format!(
                    "{}x{} image is not divisible into {}x{} patches",
                    image.width(),
                    image.height(),
                    self.patch_w,
                    self.patch_h
                ),
            ));
        }
        Ok((image.height() / self.patch_h, image.width() / self.patch_w))
    }

    /// Nearest codeword per patch (squared Euclidean, ties to the lowest index).
    pub fn encode(&self, image: &Image) -> Result<TokenGrid> {
        let (gh, gw) = self.grid_extent(image)?;
        let centroids: Vec<Vec<f64>> = self
            .codewords
            .iter()
            .map(|c| c.iter().map(|&v| v as f64).collect())
            .collect();
        let mut tokens = Vec::with_capacity(gh * gw);
        for r in 0..gh {
            for c in 0..gw {
                let patch: Vec<f64> = image
                    .patch(c * self.patch_w, r * self.patch_h, self.patch_w, self.patch_h)
                    .into_iter()
                    .map(f64::from)
                    .collect();
                tokens.push(nearest(&patch, &centroids).0);
            }
        }
        TokenGrid::new(gh, gw, tokens)
    }

    /// Pastes codewords in raster order.
    pub fn decode(&self, grid: &TokenGrid) -> Result<Image> {
        if let Some(&bad) = grid.tokens.iter().find(|&&t| t >= self.len()) {
            return Err(Error::OutOfRange(format!(
                "token {bad} with codebook of {}",
                self.len()
            )));
        }
        let mut image = Image::filled(grid.width * self.patch_w, grid.height * self.patch_h, [0.0; 3]);
        for r in 0..grid.height {
            for c in 0..grid.width {
                image.paste(
                    c * self.patch_w,
                    r * self.patch_h,
                    self.patch_w,
                    self.patch_h,
                    &self.codewords[grid.get(r, c)],
                );
            }
        }
        Ok(image)
    }
}

/// Fits `k` codewords to all `patch_h × patch_w` patches of `images` with
/// k-means (k-means++ seeding from `seed`, exactly `iterations` rounds).
/// Identical codewords left after fitting are merged.
pub fn fit_codebook(
    images: &[Image],
    k: usize,
    patch_h: usize,
    patch_w: usize,
    iterations: usize,
    seed: u64,
) -> Result<Codebook> {
    if iterations == 0 {
        return Err(Error::invalid("codebook fit needs at least one iteration"));
    }
    if k == 0 || patch_h == 0 || patch_w == 0 {
        return Err(Error::invalid("codebook size and patch extents must be positive"));
    }
    let probe = Codebook {
        patch_h,
        patch_w,
        codewords: vec![vec![0.0; patch_h * patch_w * CHANNELS]],
        max_fit_distance: 0.0,
        sse_history: Vec::new(),
    };
    let mut points: Vec<Vec<f64>> = Vec::new();
    for image in images {
        let (gh, gw) = probe.grid_extent(image)?;
        for r in 0..gh {
            for c in 0..gw {
                points.push(
                    image
                        .patch(c * patch_w, r * patch_h, patch_w, patch_h)
                        .into_iter()
                        .map(f64::from)
                        .collect(),
                );
            }
        }
    }
    let distinct: HashSet<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    if k > distinct.len() {
        return Err(Error::invalid(format!(
            "codebook size {k} exceeds {} distinct patches",
            distinct.len()
        )));
    }
    let fit = kmeans(&points, k, seed, iterations)?;

    let mut codewords: Vec<Vec<f32>> = Vec::with_capacity(k);
    for c in &fit.centroids {
        let cw: Vec<f32> = c.iter().map(|&v| (v as f32).clamp(0.0, 1.0)).collect();
        if !codewords.contains(&cw) {
            codewords.push(cw);
        }
    }
    let mut book = Codebook::from_codewords(patch_h, patch_w, codewords)?;
    let centroids: Vec<Vec<f64>> = book
        .codewords
        .iter()
        .map(|c| c.iter().map(|&v| v as f64).collect())
        .collect();
    book.max_fit_distance = points
        .iter()
        .map(|p| nearest(p, &centroids).1)
        .fold(0.0, f64::max);
    book.sse_history = fit.sse_history;
    Ok(book)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tone(width: usize, height: usize, split: usize) -> Image {
        let mut im = Image::filled(width, height, [0.0; 3]);
        for y in 0..height {
            for x in split..width {
                im.set_pixel(x, y, [1.0; 3]);
            }
        }
        im
    }

    #[test]
    fn black_white_two_codewords() {
        let im = two_tone(8, 4, 4);
        let book = fit_codebook(&[im.clone()], 2, 4, 4, 5, 0).unwrap();
        let mut cws: Vec<f32> = book.codewords().iter().map(|c| c[0]).collect();
        cws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cws, vec![0.0, 1.0]);
        assert!(book.codewords().iter().all(|c| c.iter().all(|&v| v == c[0])));
        let grid = book.encode(&im).unwrap();
        assert_eq!(book.decode(&grid).unwrap(), im);
    }

    #[test]
    fn single_codeword_maps_everything_to_zero() {
        let im = two_tone(8, 8, 4);
        let book = fit_codebook(&[im.clone()], 1, 4, 4, 3, 0).unwrap();
        assert!(book.encode(&im).unwrap().tokens().iter().all(|&t| t == 0));
    }

    #[test]
    fn grid_shape_arithmetic() {
        let book = Codebook::from_codewords(4, 4, vec![vec![0.0; 48], vec![1.0; 48]]).unwrap();
        let grid = book.encode(&Image::filled(32, 32, [0.2; 3])).unwrap();
        assert_eq!((grid.height(), grid.width()), (8, 8));
    }

    #[test]
    fn extent_mismatch_rejected() {
        let book = Codebook::from_codewords(4, 4, vec![vec![0.0; 48]]).unwrap();
        assert!(book.encode(&Image::filled(10, 8, [0.0; 3])).is_err());
    }

    #[test]
    fn out_of_range_token_rejected() {
        let book = Codebook::from_codewords(2, 2, vec![vec![0.0; 12]]).unwrap();
        let grid = TokenGrid::new(1, 1, vec![1]).unwrap();
        assert!(matches!(book.decode(&grid), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn all_zero_grid_decodes_black() {
        let book = Codebook::from_codewords(2, 2, vec![vec![0.0; 12], vec![1.0; 12]]).unwrap();
        let im = book.decode(&TokenGrid::filled(3, 3, 0)).unwrap();
        assert!(im.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_many_codewords_rejected() {
        let im = two_tone(8, 4, 4);
        assert!(fit_codebook(&[im], 3, 4, 4, 2, 0).is_err());
        assert!(fit_codebook(&[Image::filled(4, 4, [0.0; 3])], 1, 4, 4, 0, 0).is_err());
    }
}
