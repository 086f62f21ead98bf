//! Fréchet distance between Gaussian fits of two feature sets:
//! `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁Σ₂)^{1/2})`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Added to every covariance diagonal.
pub const COVARIANCE_SHRINKAGE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Sample mean and unbiased covariance (plus shrinkage) of row vectors.
pub fn moments(features: &[Vec<f64>]) -> Result<Moments> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::shape("frechet", "features differ in dimension"));
    }
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(f) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += COVARIANCE_SHRINKAGE;
    }
    Ok(Moments { mean, cov })
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Trace of `(Σ₁Σ₂)^{1/2}` via the symmetric product `Σ₁^{1/2} Σ₂ Σ₁^{1/2}`,
/// clamping negative eigenvalues at zero.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ra = sym_sqrt(a);
    let mut m = &ra * b * &ra;
    // symmetrize against round-off before the eigensolver
    m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0).sqrt())
        .sum()
}

pub fn frechet_from_moments(a: &Moments, b: &Moments) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::shape("frechet", "feature dimensions differ"));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let covmean = 0.5 * (trace_sqrt_product(&a.cov, &b.cov) + trace_sqrt_product(&b.cov, &a.cov));
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * covmean).max(0.0))
}

pub fn frechet_distance(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64> {
    frechet_from_moments(&moments(features_a)?, &moments(features_b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|j| rng.random::<f64>() * (1.0 + j as f64)).collect())
            .collect()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = random_set(50, 6, 1);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn one_dimensional_shift() {
        // both sets have unbiased variance 2; means differ by 1
        let a = vec![vec![-1.0], vec![1.0]];
        let b = vec![vec![0.0], vec![2.0]];
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric() {
        let a = random_set(40, 5, 2);
        let b = random_set(30, 5, 3);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
        assert!(ab > 0.0);
    }

    #[test]
    fn diagonal_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = 4;
            let ma: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let mb: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let va: Vec<f64> = (0..d).map(|_| 0.1 + rng.random::<f64>()).collect();
            let vb: Vec<f64> = (0..d).map(|_| 0.1 + rng.random::<f64>()).collect();
            let a = Moments {
                mean: DVector::from_vec(ma.clone()),
                cov: DMatrix::from_diagonal(&DVector::from_vec(va.clone())),
            };
            let b = Moments {
                mean: DVector::from_vec(mb.clone()),
                cov: DMatrix::from_diagonal(&DVector::from_vec(vb.clone())),
            };
            let expected: f64 = (0..d)
                .map(|i| (ma[i] - mb[i]).powi(2) + (va[i].sqrt() - vb[i].sqrt()).powi(2))
                .sum();
            let got = frechet_from_moments(&a, &b).unwrap();
            assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        }
    }

    #[test]
    fn too_few_samples() {
        assert!(frechet_distance(&[vec![0.0]], &[vec![0.0], vec![1.0]]).is_err());
    }
}
