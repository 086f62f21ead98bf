//! Lloyd's k-means with k-means++ seeding, and normalized mutual information.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    /// `k` centroids, each of the input dimension.
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances after each assignment step.
    pub sse_history: Vec<f64>,
}

impl KMeans {
    pub fn sse(&self) -> f64 {
        *self.sse_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
pub(crate) fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Runs `iters` rounds of Lloyd's algorithm from a k-means++ start seeded by
/// `seed`. A cluster that loses all its members is moved onto the point
/// farthest from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, iters: usize) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!("k = {k} with {} points", points.len())));
    }
    if iters == 0 {
        return Err(Error::invalid("k-means needs at least one iteration"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("kmeans", "points differ in dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut dists = vec![0f64; points.len()];
    let mut sse_history = Vec::with_capacity(iters + 1);

    let assign = |centroids: &[Vec<f64>], assignments: &mut [usize], dists: &mut [f64]| -> f64 {
        let mut sse = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, centroids);
            assignments[i] = j;
            dists[i] = d;
            sse += d;
        }
        sse
    };

    for _ in 0..iters {
        sse_history.push(assign(&centroids, &mut assignments, &mut dists));
        let mut sums = vec![vec![0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken = vec![false; points.len()];
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .fold(None::<usize>, |best, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= number of points");
                taken[far] = true;
                centroids[j] = points[far].clone();
            }
        }
    }
    sse_history.push(assign(&centroids, &mut assignments, &mut dists));
    Ok(KMeans {
        assignments,
        centroids,
        sse_history,
    })
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(A;L) / sqrt(H(A) H(L))`.
///
/// Partitions equal up to relabeling score exactly 1.0, including two
/// single-cluster partitions; a single-cluster partition against a
/// non-trivial one scores 0.
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::shape(
            "nmi",
            format!("{} assignments vs {} labels", assignments.len(), labels.len()),
        ));
    }
    if assignments.is_empty() {
        return Err(Error::invalid("nmi of empty partitions"));
    }
    let n = assignments.len() as f64;
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cl: HashMap<usize, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *ca.entry(a).or_default() += 1;
        *cl.entry(l).or_default() += 1;
        *joint.entry((a, l)).or_default() += 1;
    }
    if joint.len() == ca.len() && joint.len() == cl.len() {
        return Ok(1.0);
    }
    let ha = entropy(ca.values().copied(), n);
    let hl = entropy(cl.values().copied(), n);
    if ha == 0.0 || hl == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (&(a, l), &c) in &joint {
        let pxy = c as f64 / n;
        let px = ca[&a] as f64 / n;
        let py = cl[&l] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    Ok((mi / (ha * hl).sqrt()).clamp(0.0, 1.0))
}
