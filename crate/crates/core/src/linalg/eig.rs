use std::cmp::Ordering;

use super::Mat;
use crate::error::{bail, Result};

const MAX_SWEEPS: usize = 100;
const CONVERGENCE_RTOL: f64 = 1e-14;
const ASYMMETRY_RTOL: f64 = 1e-8;
/// Negative eigenvalues above `-NEG_CLAMP_RTOL * λ_max` are rounded to zero.
const NEG_CLAMP_RTOL: f64 = 1e-12;

/// Eigendecomposition `P = U diag(λ) Uᵀ` of a symmetric matrix.
///
/// Eigenvalues are non-increasing and each eigenvector has its
/// largest-magnitude component positive (lowest index wins ties).
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    u: Mat,
    lambda: Vec<f64>,
}

impl SymEig {
    /// Orthonormal eigenvectors, one per column.
    pub fn u(&self) -> &Mat {
        &self.u
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Wraps arbitrary factors without checking orthogonality or order;
    /// used to differentiate `U f(Λ) Uᵀ` with `U` and `λ` as free inputs.
    pub fn from_parts(u: Mat, lambda: Vec<f64>) -> Result<SymEig> {
        if u.rows() != u.cols() || u.cols() != lambda.len() {
            bail!(Dimension, "eigenvector matrix {:?} with {} eigenvalues", u.shape(), lambda.len());
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            bail!(Numeric, "non-finite eigenvalue");
        }
        Ok(SymEig { u, lambda })
    }

    /// Same eigenvectors, different eigenvalues (not re-sorted).
    pub fn with_lambda(&self, lambda: Vec<f64>) -> SymEig {
        assert_eq!(lambda.len(), self.dim());
        SymEig { u: self.u.clone(), lambda }
    }

    /// `U diag(λ) Uᵀ`
    pub fn reconstruct(&self) -> Mat {
        compose(&self.u, &self.lambda)
    }
}

/// `U diag(values) Uᵀ`, computed on the upper triangle and mirrored so the
/// result is exactly symmetric.
pub fn compose(u: &Mat, values: &[f64]) -> Mat {
    let n = u.rows();
    assert_eq!(u.cols(), values.len());
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        let ui = u.row(i);
        for j in i..n {
            let uj = u.row(j);
            let s: f64 = values
                .iter()
                .zip(ui.iter().zip(uj))
                .map(|(v, (a, b))| v * a * b)
                .sum();
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(p: &Mat) -> Result<SymEig> {
    if !p.is_square() {
        bail!(Dimension, "eigendecomposition needs a square matrix, got {:?}", p.shape());
    }
    if !p.is_finite() {
        bail!(Numeric, "eigendecomposition input contains non-finite entries");
    }
    let norm = p.fro_norm();
    let asym = p.asymmetry();
    if asym > ASYMMETRY_RTOL * norm {
        bail!(Validation, "matrix is not symmetric: ‖P − Pᵀ‖_F = {asym:e}, ‖P‖_F = {norm:e}");
    }

    let n = p.rows();
    let mut a = p.symmetrize();
    let mut v = Mat::identity(n);
    let threshold = CONVERGENCE_RTOL * norm;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= threshold {
            converged = true;
            break;
        }
        for p_idx in 0..n {
            for q_idx in p_idx + 1..n {
                rotate(&mut a, &mut v, p_idx, q_idx);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > threshold {
        bail!(
            Numeric,
            "Jacobi eigensolver did not converge after {MAX_SWEEPS} sweeps (off-diagonal norm {:e})",
            off_diagonal_norm(&a)
        );
    }

    let mut lambda = a.diag();
    let lambda_max = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lambda_max > 0.0 {
        for l in lambda.iter_mut() {
            if *l < 0.0 && *l > -NEG_CLAMP_RTOL * lambda_max {
                *l = 0.0;
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = lambda
        .into_iter()
        .enumerate()
        .map(|(j, l)| (l, fix_sign(v.col(j))))
        .collect();
    pairs.sort_by(|(la, va), (lb, vb)| match lb.total_cmp(la) {
        Ordering::Equal => lex_cmp(vb, va),
        ord => ord,
    });

    let u = Mat::from_fn(n, n, |i, j| pairs[j].1[i]);
    let lambda = pairs.into_iter().map(|(l, _)| l).collect();
    Ok(SymEig { u, lambda })
}

fn off_diagonal_norm(a: &Mat) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate(a: &mut Mat, v: &mut Mat, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);

    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    let n = a.rows();
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let g = a[(r, p)];
        let h = a[(r, q)];
        let new_rp = g - s * (h + g * tau);
        let new_rq = h + s * (g - h * tau);
        a[(r, p)] = new_rp;
        a[(p, r)] = new_rp;
        a[(r, q)] = new_rq;
        a[(q, r)] = new_rq;
    }
    for r in 0..n {
        let g = v[(r, p)];
        let h = v[(r, q)];
        v[(r, p)] = g - s * (h + g * tau);
        v[(r, q)] = h + s * (g - h * tau);
    }
}

fn fix_sign(mut col: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.iter_mut().for_each(|x| *x = -*x);
    }
    col
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthogonality_defect(u: &Mat) -> f64 {
        u.transpose().matmul(u).sub(&Mat::identity(u.rows())).fro_norm()
    }

    #[test]
    fn diagonal_input_sorts_and_permutes() {
        let e = sym_eig(&Mat::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.lambda(), &[3.0, 2.0, 1.0]);
        let expected = Mat::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(e.u(), &expected);
    }

    #[test]
    fn identity_is_fixed() {
        let e = sym_eig(&Mat::identity(3)).unwrap();
        assert_eq!(e.lambda(), &[1.0, 1.0, 1.0]);
        assert!(orthogonality_defect(e.u()) < 1e-15);
    }

    #[test]
    fn two_by_two_hand_solution() {
        // det([[2-λ,1],[1,2-λ]]) = (2-λ)² - 1  =>  λ ∈ {3, 1}
        let p = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eig(&p).unwrap();
        assert!((e.lambda()[0] - 3.0).abs() < 1e-14);
        assert!((e.lambda()[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let u = e.u();
        assert!((u[(0, 0)] - r).abs() < 1e-14 && (u[(1, 0)] - r).abs() < 1e-14);
        // (1,-1)/√2 with the sign rule: first component wins the magnitude tie.
        assert!((u[(0, 1)] - r).abs() < 1e-14 && (u[(1, 1)] + r).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(sym_eig(&Mat::zeros(2, 3)), Err(crate::Error::Dimension(_))));
        let p = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&p), Err(crate::Error::Validation(_))));
    }

    #[test]
    fn zero_matrix() {
        let e = sym_eig(&Mat::zeros(3, 3)).unwrap();
        assert_eq!(e.lambda(), &[0.0, 0.0, 0.0]);
        assert_eq!(e.u(), &Mat::identity(3));
    }

    #[test]
    fn clamps_tiny_negative_eigenvalues() {
        let p = Mat::from_diag(&[1.0, -1e-14, -0.5]);
        let e = sym_eig(&p).unwrap();
        assert_eq!(e.lambda(), &[1.0, 0.0, -0.5]);
    }

    #[test]
    fn compose_is_exactly_symmetric() {
        let p = Mat::from_rows(&[
            vec![4.0, 1.0, 0.3],
            vec![1.0, 3.0, -0.7],
            vec![0.3, -0.7, 2.0],
        ])
        .unwrap();
        let e = sym_eig(&p).unwrap();
        let r = e.reconstruct();
        assert_eq!(r.asymmetry(), 0.0);
        assert!(r.sub(&p).fro_norm() <= 1e-12 * p.fro_norm());
    }
}
