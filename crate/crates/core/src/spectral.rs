//! Spectral matrix functions `U f(Λ) Uᵀ` with their backward passes, the
//! eigendecomposition backward rule, Newton–Schulz square root and
//! eigenvalue truncation.

use std::fmt;
use std::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::linalg::{compose, Mat, SymEig};

/// Default floor on `|λ_i − λ_j|` in the K matrix.
pub const DEFAULT_K_EPSILON: f64 = 1e-12;
/// Smallest eigenvalue accepted by the matrix logarithm.
pub const LOG_EIGEN_FLOOR: f64 = 1e-12;
/// Negative eigenvalues above `-ROOT_CLAMP_RTOL * λ_max` are treated as zero
/// by the root functions.
pub const ROOT_CLAMP_RTOL: f64 = 1e-10;
/// Root derivatives are evaluated at `max(λ, ROOT_DERIVATIVE_FLOOR)` so a
/// rank-deficient spectrum yields a large but finite gradient.
pub const ROOT_DERIVATIVE_FLOOR: f64 = 1e-12;

/// Scalar function applied to the eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralFn {
    Sqrt,
    /// `λ^(1/p)`, `p ≥ 2`.
    PRoot(u32),
    Log,
    /// `e^(−λ)`
    ExpInv,
}

impl SpectralFn {
    fn validate(self) -> Result<()> {
        if let SpectralFn::PRoot(p) = self {
            if p < 2 {
                bail!(Validation, "p-th root needs p ≥ 2, got {p}");
            }
        }
        Ok(())
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            SpectralFn::Sqrt => x.max(0.0).sqrt(),
            SpectralFn::PRoot(p) => x.max(0.0).powf(1.0 / p as f64),
            SpectralFn::Log => x.ln(),
            SpectralFn::ExpInv => (-x).exp(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            SpectralFn::Sqrt => 0.5 / x.max(ROOT_DERIVATIVE_FLOOR).sqrt(),
            SpectralFn::PRoot(p) => {
                let p = p as f64;
                x.max(ROOT_DERIVATIVE_FLOOR).powf(1.0 / p - 1.0) / p
            }
            SpectralFn::Log => 1.0 / x,
            SpectralFn::ExpInv => -(-x).exp(),
        }
    }

    /// Checks the spectrum against the function's domain and returns the
    /// eigenvalues the function is evaluated at.
    fn admissible(self, lambda: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            SpectralFn::Sqrt | SpectralFn::PRoot(_) => {
                let lmax = lambda.iter().cloned().fold(0.0, f64::max);
                lambda
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| {
                        if l >= 0.0 {
                            Ok(l)
                        } else if l > -ROOT_CLAMP_RTOL * lmax {
                            Ok(0.0)
                        } else {
                            Err(Error::Domain(format!(
                                "{self} of negative eigenvalue λ[{i}] = {l:e}"
                            )))
                        }
                    })
                    .collect()
            }
            SpectralFn::Log => {
                if let Some(i) = lambda.iter().position(|&l| l < LOG_EIGEN_FLOOR) {
                    bail!(
                        Domain,
                        "log of eigenvalue λ[{i}] = {:e} below floor {LOG_EIGEN_FLOOR:e}",
                        lambda[i]
                    );
                }
                Ok(lambda.to_vec())
            }
            SpectralFn::ExpInv => Ok(lambda.to_vec()),
        }
    }
}

impl fmt::Display for SpectralFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectralFn::Sqrt => write!(f, "sqrt"),
            SpectralFn::PRoot(p) => write!(f, "proot{p}"),
            SpectralFn::Log => write!(f, "log"),
            SpectralFn::ExpInv => write!(f, "exp_inv"),
        }
    }
}

impl FromStr for SpectralFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(SpectralFn::Sqrt),
            "log" => Ok(SpectralFn::Log),
            "exp_inv" | "exp-inv" => Ok(SpectralFn::ExpInv),
            _ => match s.strip_prefix("proot") {
                Some(p) => {
                    let p: u32 = p
                        .trim_start_matches(['(', ':'])
                        .trim_end_matches(')')
                        .parse()
                        .map_err(|_| Error::Validation(format!("bad root order in {s:?}")))?;
                    let f = SpectralFn::PRoot(p);
                    f.validate()?;
                    Ok(f)
                }
                None => bail!(Validation, "unknown spectral function {s:?}"),
            },
        }
    }
}

/// Loss gradients with respect to the eigenvectors and eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct EigGrad {
    pub d_u: Mat,
    pub d_lambda: Vec<f64>,
}

impl EigGrad {
    pub fn zeros(d: usize) -> Self {
        Self {
            d_u: Mat::zeros(d, d),
            d_lambda: vec![0.0; d],
        }
    }

    pub fn accumulate(&mut self, other: &EigGrad) {
        self.d_u.add_assign(&other.d_u);
        for (a, b) in self.d_lambda.iter_mut().zip(&other.d_lambda) {
            *a += b;
        }
    }
}

/// `K_ij = 1 / (λ_i − λ_j)` off the diagonal, with `|λ_i − λ_j|` floored
/// at `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct KMatrix {
    pub k: Mat,
    pub epsilon: f64,
}

impl KMatrix {
    pub fn new(lambda: &[f64], epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            bail!(Validation, "K-matrix epsilon must be positive, got {epsilon}");
        }
        let d = lambda.len();
        let mut k = Mat::zeros(d, d);
        for i in 0..d {
            for j in i + 1..d {
                // Sorted non-increasing, so λ_i − λ_j ≥ 0 up to round-off;
                // an exact tie takes the positive sign for i < j.
                let diff = lambda[i] - lambda[j];
                let clamped = if diff.abs() < epsilon {
                    if diff < 0.0 {
                        -epsilon
                    } else {
                        epsilon
                    }
                } else {
                    diff
                };
                k[(i, j)] = 1.0 / clamped;
                k[(j, i)] = -1.0 / clamped;
            }
        }
        Ok(Self { k, epsilon })
    }
}

/// `U f(Λ) Uᵀ`
pub fn mat_fn(eig: &SymEig, f: SpectralFn) -> Result<Mat> {
    let lambda = f.admissible(eig.lambda())?;
    let values: Vec<f64> = lambda.iter().map(|&l| f.value(l)).collect();
    Ok(compose(eig.u(), &values))
}

/// Backward pass of [`mat_fn`] with `U` and `Λ` as independent inputs.
///
/// With `F = U f(Λ) Uᵀ` and upstream gradient `G`:
/// `∂l/∂U = (G + Gᵀ) U f(Λ)` and `∂l/∂λ_i = f′(λ_i) (Uᵀ G U)_ii`.
/// For `f = e^(−λ)` this is exactly the printed exponential-inverse rule:
/// `f(Λ) = diag(e^(−λ))` carries no sign and `f′ = −e^(−λ)` does.
pub fn mat_fn_backward(eig: &SymEig, f: SpectralFn, d_out: &Mat) -> Result<EigGrad> {
    let d = eig.dim();
    if d_out.shape() != (d, d) {
        bail!(
            Dimension,
            "upstream gradient {:?} does not match {d}x{d} output",
            d_out.shape()
        );
    }
    let lambda = f.admissible(eig.lambda())?;
    let u = eig.u();
    let values: Vec<f64> = lambda.iter().map(|&l| f.value(l)).collect();
    let g_sym = d_out.add(&d_out.transpose());
    let d_u = g_sym.matmul(u).mul_diag(&values);

    let ut_g_u = u.transpose().matmul(d_out).matmul(u);
    let d_lambda = lambda
        .iter()
        .enumerate()
        .map(|(i, &l)| f.derivative(l) * ut_g_u[(i, i)])
        .collect();
    Ok(EigGrad { d_u, d_lambda })
}

/// Gradient with respect to the symmetric input of the eigendecomposition:
///
/// `∂l/∂P = sym( U ( Kᵀ ∘ (Uᵀ ∂l/∂U) + diag(∂l/∂λ) ) Uᵀ )`.
///
/// Convention: `dU = U Ω` with `Ω_ij = (Uᵀ dP U)_ij / (λ_j − λ_i) = K_ji (Uᵀ dP U)_ij`,
/// so the eigenvector term pairs with `Kᵀ`. The finite-difference tests pin
/// this placement.
pub fn eig_backward(eig: &SymEig, grad: &EigGrad, epsilon: f64) -> Result<Mat> {
    let d = eig.dim();
    if grad.d_u.shape() != (d, d) || grad.d_lambda.len() != d {
        bail!(Dimension, "eigen gradient does not match a {d}x{d} decomposition");
    }
    let k = KMatrix::new(eig.lambda(), epsilon)?;
    let u = eig.u();
    let mut inner = k.k.transpose().hadamard(&u.transpose().matmul(&grad.d_u));
    for (i, &dl) in grad.d_lambda.iter().enumerate() {
        inner[(i, i)] += dl;
    }
    Ok(u.matmul(&inner).matmul(&u.transpose()).symmetrize())
}

/// Newton–Schulz approximation of `P^(1/2)` with trace pre-normalization and
/// `√tr(P)` post-compensation.
pub fn newton_schulz_sqrt(p: &Mat, iters: usize) -> Result<Mat> {
    if !p.is_square() {
        bail!(Dimension, "Newton–Schulz needs a square matrix, got {:?}", p.shape());
    }
    if iters == 0 {
        bail!(Validation, "Newton–Schulz needs at least one iteration");
    }
    let n = p.rows();
    if p.data().iter().all(|&v| v == 0.0) {
        return Ok(Mat::zeros(n, n));
    }
    let tr = p.trace();
    if !(tr > 0.0) {
        bail!(Numeric, "Newton–Schulz normalization needs tr(P) > 0, got {tr:e}");
    }
    let three_i = Mat::identity(n).scale(3.0);
    let mut y = p.scale(1.0 / tr);
    let mut z = Mat::identity(n);
    for _ in 0..iters {
        let t = three_i.sub(&z.matmul(&y)).scale(0.5);
        y = y.matmul(&t);
        z = t.matmul(&z);
    }
    Ok(y.scale(tr.sqrt()))
}

/// Rank-`k` spectral truncation `U Λ_k Uᵀ`.
pub fn truncate_eig(eig: &SymEig, k: usize) -> Result<Mat> {
    Ok(truncated(eig, k)?.reconstruct())
}

/// The decomposition with every eigenvalue past the first `k` set to zero.
pub fn truncated(eig: &SymEig, k: usize) -> Result<SymEig> {
    let d = eig.dim();
    if k == 0 || k > d {
        bail!(Validation, "truncation rank {k} outside [1, {d}]");
    }
    let lambda = eig
        .lambda()
        .iter()
        .enumerate()
        .map(|(i, &l)| if i < k { l } else { 0.0 })
        .collect();
    Ok(eig.with_lambda(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{fro_inner, sym_eig};

    fn eig_of(rows: &[Vec<f64>]) -> SymEig {
        sym_eig(&Mat::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn sqrt_of_diagonal() {
        let q = mat_fn(&sym_eig(&Mat::from_diag(&[4.0, 1.0])).unwrap(), SpectralFn::Sqrt).unwrap();
        assert_eq!(q, Mat::from_diag(&[2.0, 1.0]));
    }

    #[test]
    fn exp_inv_of_zero_is_identity() {
        let s = mat_fn(&sym_eig(&Mat::zeros(2, 2)).unwrap(), SpectralFn::ExpInv).unwrap();
        assert_eq!(s, Mat::identity(2));
    }

    #[test]
    fn sqrt_squares_back() {
        let p = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let q = mat_fn(&sym_eig(&p).unwrap(), SpectralFn::Sqrt).unwrap();
        assert!(q.matmul(&q).sub(&p).max_abs() < 1e-10);
        assert!(q.asymmetry() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let e = sym_eig(&Mat::from_diag(&[1.0, -0.5])).unwrap();
        assert!(matches!(mat_fn(&e, SpectralFn::Sqrt), Err(Error::Domain(_))));
        let e = sym_eig(&Mat::from_diag(&[1.0, 0.0])).unwrap();
        match mat_fn(&e, SpectralFn::Log) {
            Err(Error::Domain(msg)) => assert!(msg.contains("λ[1]"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(mat_fn(&e, SpectralFn::PRoot(1)), Err(Error::Validation(_))));
        assert!(mat_fn(&e, SpectralFn::PRoot(3)).is_ok());
    }

    #[test]
    fn parses_function_names() {
        assert_eq!("proot3".parse::<SpectralFn>().unwrap(), SpectralFn::PRoot(3));
        assert_eq!("proot(4)".parse::<SpectralFn>().unwrap(), SpectralFn::PRoot(4));
        assert_eq!("exp_inv".parse::<SpectralFn>().unwrap(), SpectralFn::ExpInv);
        assert!("proot1".parse::<SpectralFn>().is_err());
        assert!("cbrt".parse::<SpectralFn>().is_err());
    }

    #[test]
    fn exp_inv_backward_at_zero() {
        let e = sym_eig(&Mat::zeros(3, 3)).unwrap();
        let g = mat_fn_backward(&e, SpectralFn::ExpInv, &Mat::identity(3)).unwrap();
        assert_eq!(g.d_lambda, vec![-1.0; 3]);
    }

    #[test]
    fn sqrt_backward_scalar() {
        let e = sym_eig(&Mat::from_diag(&[4.0])).unwrap();
        let g = mat_fn_backward(&e, SpectralFn::Sqrt, &Mat::identity(1)).unwrap();
        assert_eq!(g.d_lambda, vec![0.25]);
    }

    #[test]
    fn exp_inv_backward_matches_central_difference() {
        let e = sym_eig(&Mat::from_diag(&[2.0, 1.0])).unwrap();
        // λ = (2, 1) after sorting; the upstream picks the λ = 1 entry.
        let d_out = Mat::from_diag(&[0.0, 1.0]);
        let g = mat_fn_backward(&e, SpectralFn::ExpInv, &d_out).unwrap();
        let h = 1e-5;
        let loss = |l: &[f64]| {
            fro_inner(&d_out, &mat_fn(&e.with_lambda(l.to_vec()), SpectralFn::ExpInv).unwrap())
                .unwrap()
        };
        let fd = (loss(&[2.0, 1.0 + h]) - loss(&[2.0, 1.0 - h])) / (2.0 * h);
        assert!((fd + (-1.0f64).exp()).abs() < 1e-9);
        assert!((g.d_lambda[1] - fd).abs() < 1e-9);
        assert_eq!(g.d_lambda[0], 0.0);
        assert!(mat_fn_backward(&e, SpectralFn::ExpInv, &Mat::zeros(3, 3)).is_err());
    }

    #[test]
    fn eig_backward_trivial_seeds() {
        let e = eig_of(&[vec![3.0, 0.5], vec![0.5, 1.0]]);
        let grad = EigGrad { d_u: Mat::zeros(2, 2), d_lambda: vec![1.0, 1.0] };
        let g = eig_backward(&e, &grad, DEFAULT_K_EPSILON).unwrap();
        assert!(g.sub(&Mat::identity(2)).max_abs() < 1e-14);

        let e = sym_eig(&Mat::from_diag(&[3.0, 1.0])).unwrap();
        let grad = EigGrad { d_u: Mat::zeros(2, 2), d_lambda: vec![1.0, 0.0] };
        let g = eig_backward(&e, &grad, DEFAULT_K_EPSILON).unwrap();
        assert_eq!(g, Mat::from_diag(&[1.0, 0.0]));

        assert!(matches!(eig_backward(&e, &grad, 0.0), Err(Error::Validation(_))));
    }

    #[test]
    fn k_matrix_clamps_and_stays_antisymmetric() {
        let k = KMatrix::new(&[2.0, 2.0, 1.0], 1e-12).unwrap();
        assert_eq!(k.k[(0, 1)], 1e12);
        assert_eq!(k.k[(1, 0)], -1e12);
        assert_eq!(k.k[(0, 2)], 1.0);
        assert!(k.k.diag().iter().all(|&v| v == 0.0));
        assert!(k.k.add(&k.k.transpose()).max_abs() == 0.0);
    }

    #[test]
    fn newton_schulz_cases() {
        // Trace normalization maps I_d to I_d / d, a fixed point only for d = 1;
        // for larger d the identity is recovered once the iteration converges.
        let i1 = Mat::identity(1);
        for iters in [1, 5, 20] {
            assert_eq!(newton_schulz_sqrt(&i1, iters).unwrap(), i1);
        }
        let i3 = Mat::identity(3);
        assert!(newton_schulz_sqrt(&i3, 15).unwrap().sub(&i3).max_abs() < 1e-12);
        let q = newton_schulz_sqrt(&Mat::from_diag(&[4.0, 1.0]), 15).unwrap();
        let oracle = mat_fn(&sym_eig(&Mat::from_diag(&[4.0, 1.0])).unwrap(), SpectralFn::Sqrt).unwrap();
        assert!(q.sub(&oracle).max_abs() < 1e-3);
        assert_eq!(newton_schulz_sqrt(&Mat::zeros(2, 2), 3).unwrap(), Mat::zeros(2, 2));
        assert!(matches!(
            newton_schulz_sqrt(&Mat::from_diag(&[1.0, -2.0]), 3),
            Err(Error::Numeric(_))
        ));
        assert!(newton_schulz_sqrt(&i3, 0).is_err());
    }

    #[test]
    fn truncation_residuals() {
        let p = Mat::from_diag(&[3.0, 2.0, 1.0]);
        let e = sym_eig(&p).unwrap();
        assert_eq!(p.sub(&truncate_eig(&e, 2).unwrap()).fro_norm(), 1.0);
        assert_eq!(truncate_eig(&e, 3).unwrap(), p);
        assert!(truncate_eig(&e, 0).is_err());
        assert!(truncate_eig(&e, 4).is_err());
    }
}
