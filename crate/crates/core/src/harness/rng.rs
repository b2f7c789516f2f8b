//! Seeded random generation. Every stochastic step in the harness draws from
//! a ChaCha8 stream so results are reproducible across platforms.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{compose, Mat};

pub type Rng = ChaCha8Rng;

/// Identifier recorded in reports.
pub const RNG_ALGORITHM: &str = "chacha8";

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_mat(rng: &mut Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| normal(rng))
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// Gram–Schmidt orthonormalization of the rows of `m`, after the rows of
/// `against` (assumed orthonormal). Returns `None` on rank loss.
fn orthonormalize_rows(m: &Mat, against: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = against.to_vec();
    let mut out = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let mut v = m.row(i).to_vec();
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v.clone());
        out.push(v);
    }
    Some(out)
}

/// Haar-ish random orthonormal `n × n` matrix (Gram–Schmidt on a Gaussian).
pub fn random_orthonormal(rng: &mut Rng, n: usize) -> Mat {
    loop {
        let g = normal_mat(rng, n, n);
        if let Some(rows) = orthonormalize_rows(&g, &[]) {
            return Mat::from_rows(&rows).expect("finite");
        }
    }
}

/// `d` eigenvalues drawn uniformly from `[lo, hi]`, sorted non-increasing,
/// with every consecutive gap at least `gap`.
pub fn gapped_spectrum(rng: &mut Rng, d: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    assert!((d.saturating_sub(1)) as f64 * gap < hi - lo, "gap infeasible");
    loop {
        let mut l: Vec<f64> = (0..d).map(|_| uniform(rng, lo, hi)).collect();
        l.sort_by(|a, b| b.total_cmp(a));
        if l.windows(2).all(|w| w[0] - w[1] >= gap) {
            return l;
        }
    }
}

/// Random symmetric matrix `U diag(spectrum) Uᵀ`.
pub fn spsd_with_spectrum(rng: &mut Rng, spectrum: &[f64]) -> Mat {
    let u = random_orthonormal(rng, spectrum.len());
    compose(&u, spectrum)
}

/// `k × n` matrix with orthonormal rows, each orthogonal to the all-ones
/// vector, so `W Wᵀ = I` and `W 𝟙 = 0`.
pub fn centered_orthonormal_rows(rng: &mut Rng, k: usize, n: usize) -> Mat {
    assert!(n > k, "need n > k for {k} rows orthogonal to 𝟙 in dimension {n}");
    let ones = vec![1.0 / (n as f64).sqrt(); n];
    loop {
        if let Some(rows) = orthonormalize_rows(&normal_mat(rng, k, n), std::slice::from_ref(&ones)) {
            return Mat::from_rows(&rows).expect("finite");
        }
    }
}

/// A `d × n` matrix whose sample covariance has exactly the given spectrum,
/// plus random per-row offsets (which centering removes).
pub fn features_with_spectrum(rng: &mut Rng, spectrum: &[f64], n: usize) -> Mat {
    let d = spectrum.len();
    assert!(n > d, "need n > d to realize a full-rank covariance");
    let w = centered_orthonormal_rows(rng, d, n);
    let u = random_orthonormal(rng, d);
    let offsets: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    // X = U diag(√(nλ)) W  =>  X Ī Xᵀ = U diag(λ) Uᵀ since W 𝟙 = 0, W Wᵀ = I.
    let scale: Vec<f64> = spectrum.iter().map(|l| (n as f64 * l).sqrt()).collect();
    let mut x = u.mul_diag(&scale).matmul(&w);
    for i in 0..d {
        for j in 0..n {
            x[(i, j)] += offsets[i];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = normal_mat(&mut seeded(7), 3, 3);
        let b = normal_mat(&mut seeded(7), 3, 3);
        assert_eq!(a, b);
        assert_ne!(a, normal_mat(&mut seeded(8), 3, 3));
    }

    #[test]
    fn orthonormal_is_orthonormal() {
        let u = random_orthonormal(&mut seeded(1), 6);
        assert!(u.transpose().matmul(&u).sub(&Mat::identity(6)).fro_norm() < 1e-13);
    }

    #[test]
    fn features_realize_spectrum() {
        let mut rng = seeded(3);
        let spectrum = gapped_spectrum(&mut rng, 4, 0.1, 10.0, 0.1);
        let x = features_with_spectrum(&mut rng, &spectrum, 9);
        let e = crate::linalg::sym_eig(&crate::gcp::covariance(&x).unwrap()).unwrap();
        for (a, b) in e.lambda().iter().zip(&spectrum) {
            assert!((a - b).abs() < 1e-12 * 10.0);
        }
    }
}
