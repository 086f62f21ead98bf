//! Evaluation: Fréchet feature distance, intra-cluster diversity, k-means
//! and NMI of prompt representations.

pub mod cluster;
pub mod diversity;
pub mod features;
pub mod frechet;

pub use cluster::{kmeans, nmi, KMeans};
pub use diversity::{intra_cluster_diversity, Diversity};
pub use features::{pooled_grayscale, FEATURE_DIM};
pub use frechet::frechet_distance;

use crate::error::Result;
use crate::image::Image;

/// Fréchet distance between pooled-luma features of two image sets.
pub fn image_frechet(a: &[Image], b: &[Image]) -> Result<f64> {
    frechet_distance(&features::extract_all(a)?, &features::extract_all(b)?)
}

/// KMeans-NMI of representation vectors against labels, with `k` equal to
/// the number of distinct labels.
pub fn representation_nmi(reps: &[Vec<f64>], labels: &[usize], seed: u64) -> Result<f64> {
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let km = kmeans(reps, distinct.len(), seed, 50)?;
    nmi(&km.assignments, labels)
}
