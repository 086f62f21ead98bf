//! Intra-cluster pixel diversity: generated images are grouped by their
//! nearest training image, and pairwise pixel L2 distances are averaged
//! within each group.

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct Diversity {
    /// Mean over clusters with at least two members of their mean pairwise
    /// L2 distance; 0 when no such cluster exists.
    pub value: f64,
    /// Clusters with at least two members.
    pub clusters: usize,
    /// Clusters with exactly one member.
    pub singletons: usize,
}

impl Diversity {
    /// True when every non-empty cluster is a singleton.
    pub fn degenerate(&self) -> bool {
        self.clusters == 0
    }
}

fn nearest_train(image: &Image, train: &[Image]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, t) in train.iter().enumerate() {
        let d = image.l2_distance(t);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub fn intra_cluster_diversity(generated: &[Image], train: &[Image]) -> Result<Diversity> {
    if generated.len() < 2 || train.is_empty() {
        return Err(Error::invalid(
            "diversity needs at least two generated images and one training image",
        ));
    }
    let (w, h) = (train[0].width(), train[0].height());
    if generated.iter().chain(train).any(|im| im.width() != w || im.height() != h) {
        return Err(Error::Image("all images must share one extent".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); train.len()];
    for (i, g) in generated.iter().enumerate() {
        members[nearest_train(g, train)].push(i);
    }
    let mut total = 0.0;
    let mut clusters = 0;
    let mut singletons = 0;
    for m in &members {
        match m.len() {
            0 => {}
            1 => singletons += 1,
            n => {
                let mut sum = 0.0;
                for a in 0..n {
                    for b in a + 1..n {
                        sum += generated[m[a]].l2_distance(&generated[m[b]]);
                    }
                }
                total += sum / (n * (n - 1) / 2) as f64;
                clusters += 1;
            }
        }
    }
    let value = if clusters == 0 { 0.0 } else { total / clusters as f64 };
    Ok(Diversity {
        value,
        clusters,
        singletons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: f32) -> Image {
        Image::filled(2, 1, [v; 3])
    }

    #[test]
    fn identical_generations_have_zero_diversity() {
        let gen = vec![gray(0.3); 5];
        let d = intra_cluster_diversity(&gen, &[gray(0.0), gray(1.0)]).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.clusters, 1);
    }

    #[test]
    fn singletons_are_flagged() {
        let gen = vec![gray(0.0), gray(1.0)];
        let d = intra_cluster_diversity(&gen, &[gray(0.0), gray(1.0)]).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.singletons, 2);
        assert!(d.degenerate());
    }

    #[test]
    fn two_clusters_hand_computed() {
        // 6 channel values per 2x1 image; distance between gray(a) and gray(b) = sqrt(6)|a-b|
        let train = [gray(0.0), gray(1.0)];
        let gen = vec![gray(0.1), gray(0.3), gray(0.9), gray(0.6)];
        let d = intra_cluster_diversity(&gen, &train).unwrap();
        let s6 = 6f64.sqrt();
        let expected = ((0.2 * s6) + (0.3 * s6)) / 2.0;
        assert!((d.value - expected).abs() < 1e-6, "{} vs {expected}", d.value);
        assert_eq!(d.clusters, 2);
    }

    #[test]
    fn order_invariant() {
        let train = [gray(0.0), gray(1.0)];
        let gen = vec![gray(0.1), gray(0.3), gray(0.9), gray(0.6), gray(0.45)];
        let mut rev = gen.clone();
        rev.reverse();
        let a = intra_cluster_diversity(&gen, &train).unwrap();
        let b = intra_cluster_diversity(&rev, &train).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(intra_cluster_diversity(&[gray(0.0)], &[gray(0.0)]).is_err());
        assert!(intra_cluster_diversity(&[gray(0.0), gray(0.1)], &[]).is_err());
    }
}
