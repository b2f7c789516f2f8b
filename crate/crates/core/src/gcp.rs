//! Global covariance pooling: sample covariance, eigendecomposition and
//! spectral normalization, optionally followed by the scaling eigen branch
//! (SEB) `A = (‖Q Sᵀ‖_F + 1) Q` with `S = e^(−P)`.

use crate::error::{bail, Result};
use crate::linalg::{fro_inner, sym_eig, Mat, SymEig};
use crate::spectral::{self, mat_fn, mat_fn_backward, EigGrad, SpectralFn, DEFAULT_K_EPSILON};

/// Pooling head configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcpConfig {
    pub use_seb: bool,
    /// One of `Sqrt`, `PRoot(p)` or `Log`.
    pub normalization: SpectralFn,
    /// Keep only the top-k eigenvalues before normalization.
    pub truncate_k: Option<usize>,
    pub k_epsilon: f64,
}

impl Default for GcpConfig {
    fn default() -> Self {
        Self {
            use_seb: false,
            normalization: SpectralFn::Sqrt,
            truncate_k: None,
            k_epsilon: DEFAULT_K_EPSILON,
        }
    }
}

impl GcpConfig {
    pub fn with_seb(mut self, on: bool) -> Self {
        self.use_seb = on;
        self
    }

    pub fn with_truncation(mut self, k: Option<usize>) -> Self {
        self.truncate_k = k;
        self
    }

    pub fn with_normalization(mut self, f: SpectralFn) -> Self {
        self.normalization = f;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if matches!(self.normalization, SpectralFn::ExpInv) {
            bail!(Validation, "exp_inv is not a covariance normalization");
        }
        if let SpectralFn::PRoot(p) = self.normalization {
            if p < 2 {
                bail!(Validation, "p-th root needs p ≥ 2, got {p}");
            }
        }
        if let Some(k) = self.truncate_k {
            if k == 0 || k > d {
                bail!(Validation, "truncate_k = {k} outside [1, {d}]");
            }
        }
        if !(self.k_epsilon > 0.0) {
            bail!(Validation, "k_epsilon must be positive");
        }
        Ok(())
    }
}

/// Which eigenvalues survive into the normalized representation; the rest
/// are zeroed in both the forward and the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenSubset {
    All,
    /// `λ_1 … λ_k`
    Top(usize),
    /// `λ_{t+1} … λ_d` (zero-based indices `t..d`).
    Suffix(usize),
    /// `λ_1` plus the last `m` eigenvalues.
    FirstPlusLast(usize),
}

impl EigenSubset {
    pub fn mask(self, d: usize) -> Result<Vec<bool>> {
        Ok(match self {
            EigenSubset::All => vec![true; d],
            EigenSubset::Top(k) => {
                if k == 0 || k > d {
                    bail!(Validation, "top-{k} subset outside [1, {d}]");
                }
                (0..d).map(|i| i < k).collect()
            }
            EigenSubset::Suffix(t) => {
                if t >= d {
                    bail!(Validation, "suffix starting at {t} is empty for d = {d}");
                }
                (0..d).map(|i| i >= t).collect()
            }
            EigenSubset::FirstPlusLast(m) => {
                if m == 0 || m >= d {
                    bail!(Validation, "first-plus-last-{m} subset needs 1 ≤ m < {d}");
                }
                (0..d).map(|i| i == 0 || i >= d - m).collect()
            }
        })
    }
}

/// Forward intermediates needed to replay the backward pass.
#[derive(Debug, Clone)]
pub struct GcpState {
    pub cfg: GcpConfig,
    pub x: Mat,
    pub p: Mat,
    pub eig: SymEig,
    /// Eigenvalues that survived the truncation/subset mask.
    pub keep: Vec<bool>,
    /// `eig` with the masked eigenvalues set to zero.
    pub eig_used: SymEig,
    /// The covariance entering normalization when a mask is active.
    pub p_used: Option<Mat>,
    pub q: Mat,
    pub s: Option<Mat>,
    pub factor: Option<f64>,
    pub a: Mat,
}

impl GcpState {
    /// The covariance that was actually normalized.
    pub fn effective_covariance(&self) -> &Mat {
        self.p_used.as_ref().unwrap_or(&self.p)
    }
}

/// Sample covariance `P = X Ī Xᵀ`, `Ī = (1/N)(I − (1/N) 𝟙𝟙ᵀ)`, for a
/// `d × N` feature matrix.
pub fn covariance(x: &Mat) -> Result<Mat> {
    let (d, n) = x.shape();
    if n < 2 {
        bail!(Validation, "covariance needs at least 2 columns, got {n}");
    }
    let xc = centered(x);
    let mut p = Mat::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v: f64 = xc.row(i).iter().zip(xc.row(j)).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    Ok(p)
}

fn centered(x: &Mat) -> Mat {
    let n = x.cols() as f64;
    let means: Vec<f64> = (0..x.rows()).map(|i| x.row(i).iter().sum::<f64>() / n).collect();
    Mat::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - means[i])
}

/// `∂l/∂X = (G + Gᵀ) X Ī` for `G = ∂l/∂P`.
pub fn covariance_backward(x: &Mat, d_p: &Mat) -> Result<Mat> {
    let (d, n) = x.shape();
    if d_p.shape() != (d, d) {
        bail!(Dimension, "covariance gradient {:?} for {d}x{n} input", d_p.shape());
    }
    let g = d_p.add(&d_p.transpose());
    Ok(g.matmul(&centered(x)).scale(1.0 / n as f64))
}

/// Scaling factor `‖Q Sᵀ‖_F = √Σ (λ_i^(1/2) e^(−λ_i))²`.
pub fn seb_factor(eig: &SymEig) -> Result<f64> {
    seb_factor_for(eig, SpectralFn::Sqrt)
}

/// Scaling factor for a general normalization `Q = U g(Λ) Uᵀ`:
/// `√Σ (g(λ_i) e^(−λ_i))²`.
pub fn seb_factor_for(eig: &SymEig, normalization: SpectralFn) -> Result<f64> {
    if let Some(i) = eig.lambda().iter().position(|&l| l < 0.0) {
        bail!(Domain, "scaling factor of negative eigenvalue λ[{i}] = {:e}", eig.lambda()[i]);
    }
    Ok(eig
        .lambda()
        .iter()
        .map(|&l| {
            let v = normalization.value(l) * (-l).exp();
            v * v
        })
        .sum::<f64>()
        .sqrt())
}

/// Gradients of `‖Q Sᵀ‖_F` with respect to `Q` and `S`:
/// `(Q Sᵀ S, S Qᵀ Q) / ‖Q Sᵀ‖_F`.
pub fn seb_factor_backward(q: &Mat, s: &Mat, factor: f64) -> Result<(Mat, Mat)> {
    if q.shape() != s.shape() || !q.is_square() {
        bail!(Dimension, "Q {:?} and S {:?} must be equal square shapes", q.shape(), s.shape());
    }
    if factor == 0.0 {
        bail!(Numeric, "scaling factor gradient is undefined at ‖Q Sᵀ‖_F = 0");
    }
    if !(factor > 0.0) {
        bail!(Validation, "scaling factor must be positive, got {factor}");
    }
    let d_q = q.matmul(&s.transpose()).matmul(s).scale(1.0 / factor);
    let d_s = s.matmul(&q.transpose()).matmul(q).scale(1.0 / factor);
    Ok((d_q, d_s))
}

pub fn gcp_forward(x: &Mat, cfg: &GcpConfig) -> Result<GcpState> {
    gcp_forward_subset(x, cfg, EigenSubset::All)
}

/// Forward pass with an additional eigenvalue subset applied on top of
/// `cfg.truncate_k`.
pub fn gcp_forward_subset(x: &Mat, cfg: &GcpConfig, subset: EigenSubset) -> Result<GcpState> {
    let p = covariance(x)?;
    let d = p.rows();
    cfg.validate(d)?;
    let eig = clamp_spectrum(sym_eig(&p)?)?;

    let mut keep = subset.mask(d)?;
    if let Some(k) = cfg.truncate_k {
        keep.iter_mut().skip(k).for_each(|kp| *kp = false);
    }
    let all_kept = keep.iter().all(|&k| k);

    let (eig_used, p_used) = if let (Some(k), EigenSubset::All) = (cfg.truncate_k, subset) {
        let t = spectral::truncated(&eig, k)?;
        let pk = spectral::truncate_eig(&eig, k)?;
        (t, Some(pk))
    } else if all_kept {
        (eig.clone(), None)
    } else {
        let lambda = eig
            .lambda()
            .iter()
            .zip(&keep)
            .map(|(&l, &k)| if k { l } else { 0.0 })
            .collect();
        let used = eig.with_lambda(lambda);
        let pu = used.reconstruct();
        (used, Some(pu))
    };

    let q = mat_fn(&eig_used, cfg.normalization)?;
    let (s, factor, a) = if cfg.use_seb {
        let s = mat_fn(&eig_used, SpectralFn::ExpInv)?;
        let f = seb_factor_for(&eig_used, cfg.normalization)?;
        let a = q.scale(f + 1.0);
        (Some(s), Some(f), a)
    } else {
        (None, None, q.clone())
    };

    Ok(GcpState {
        cfg: *cfg,
        x: x.clone(),
        p,
        eig,
        keep,
        eig_used,
        p_used,
        q,
        s,
        factor,
        a,
    })
}

/// Covariances are SPSD analytically: round-off negatives in
/// `(−1e-10·λ_max, 0)` become zero, anything more negative is an error.
fn clamp_spectrum(eig: SymEig) -> Result<SymEig> {
    let lmax = eig.lambda().first().copied().unwrap_or(0.0).max(0.0);
    if eig.lambda().iter().all(|&l| l >= 0.0) {
        return Ok(eig);
    }
    let mut lambda = eig.lambda().to_vec();
    for (i, l) in lambda.iter_mut().enumerate() {
        if *l < 0.0 {
            if *l > -spectral::ROOT_CLAMP_RTOL * lmax {
                *l = 0.0;
            } else {
                bail!(Domain, "covariance eigenvalue λ[{i}] = {l:e} is negative beyond round-off");
            }
        }
    }
    Ok(eig.with_lambda(lambda))
}

/// Per-sample forward over a batch; no statistics are shared between samples.
pub fn gcp_forward_batch(xs: &[Mat], cfg: &GcpConfig) -> Result<Vec<GcpState>> {
    xs.iter().map(|x| gcp_forward(x, cfg)).collect()
}

/// `∂l/∂X` given `∂l/∂A`.
pub fn gcp_backward(state: &GcpState, d_a: &Mat) -> Result<Mat> {
    let d_p = gcp_backward_to_covariance(state, d_a)?;
    covariance_backward(&state.x, &d_p)
}

/// `∂l/∂P` given `∂l/∂A`.
pub fn gcp_backward_to_covariance(state: &GcpState, d_a: &Mat) -> Result<Mat> {
    let d = state.a.rows();
    if d_a.shape() != (d, d) {
        bail!(Dimension, "∂l/∂A {:?} for {d}x{d} representation", d_a.shape());
    }
    let norm = state.cfg.normalization;

    // A = (f + 1) Q with f = ‖Q Sᵀ‖_F a function of both Q and S:
    //   ∂l/∂Q = (f + 1) ∂l/∂A + ⟨∂l/∂A, Q⟩ ∂f/∂Q
    //   ∂l/∂S =                 ⟨∂l/∂A, Q⟩ ∂f/∂S
    // At f = 0 (every kept eigenvalue zero) the norm is not differentiable
    // and the factor path contributes nothing.
    let mut grad = match (state.factor, &state.s) {
        (Some(f), Some(s)) => {
            let mut d_q = d_a.scale(f + 1.0);
            let mut grad = EigGrad::zeros(d);
            if f > 0.0 {
                let d_f = fro_inner(d_a, &state.q)?;
                let (df_dq, df_ds) = seb_factor_backward(&state.q, s, f)?;
                d_q.axpy(d_f, &df_dq);
                let d_s = df_ds.scale(d_f);
                grad.accumulate(&mat_fn_backward(&state.eig_used, SpectralFn::ExpInv, &d_s)?);
            }
            grad.accumulate(&mat_fn_backward(&state.eig_used, norm, &d_q)?);
            grad
        }
        _ => mat_fn_backward(&state.eig_used, norm, d_a)?,
    };

    // Masked eigenvalues were replaced by constants.
    for (dl, &k) in grad.d_lambda.iter_mut().zip(&state.keep) {
        if !k {
            *dl = 0.0;
        }
    }
    spectral::eig_backward(&state.eig, &grad, state.cfg.k_epsilon)
}

/// Row-major upper triangle (`col ≥ row`) of a symmetric matrix.
pub fn upper_tri_vec(a: &Mat) -> Result<Vec<f64>> {
    if !a.is_square() {
        bail!(Dimension, "upper triangle of non-square {:?}", a.shape());
    }
    let asym = a.asymmetry();
    if asym > 1e-8 * a.fro_norm().max(1.0) {
        bail!(Validation, "matrix is not symmetric (‖A − Aᵀ‖_F = {asym:e})");
    }
    let d = a.rows();
    let mut v = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        v.extend_from_slice(&a.row(i)[i..]);
    }
    Ok(v)
}

/// Inverse of [`upper_tri_vec`] (symmetric fill).
pub fn from_upper_tri(v: &[f64], d: usize) -> Result<Mat> {
    if v.len() != d * (d + 1) / 2 {
        bail!(Dimension, "{} entries cannot fill the upper triangle of {d}x{d}", v.len());
    }
    let mut m = Mat::zeros(d, d);
    let mut it = v.iter();
    for i in 0..d {
        for j in i..d {
            let x = *it.next().unwrap();
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        let x = Mat::from_rows(&[vec![1.0, 1.0, 1.0], vec![-2.0, -2.0, -2.0]]).unwrap();
        assert_eq!(covariance(&x).unwrap(), Mat::zeros(2, 2));

        let x = Mat::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(covariance(&x).unwrap(), Mat::from_diag(&[1.0, 0.0]));

        let x = Mat::from_rows(&[vec![1.0, 2.0, 6.0], vec![0.5, 0.0, -1.0]]).unwrap();
        let p = covariance(&x).unwrap();
        // row variances: mean 3 → (4+1+9)/3; mean -1/6 → ...
        let var0 = (4.0 + 1.0 + 9.0) / 3.0;
        let m1: f64 = -1.0 / 6.0;
        let var1 = ((0.5 - m1).powi(2) + m1.powi(2) + (-1.0 - m1).powi(2)) / 3.0;
        assert!((p.trace() - var0 - var1).abs() < 1e-14);
        assert!(matches!(covariance(&Mat::zeros(2, 1)), Err(crate::Error::Validation(_))));
    }

    #[test]
    fn covariance_backward_annihilates_constants() {
        let x = Mat::from_rows(&[vec![3.0; 4], vec![-1.0; 4]]).unwrap();
        let g = Mat::from_rows(&[vec![1.0, 2.0], vec![0.5, -3.0]]).unwrap();
        assert_eq!(covariance_backward(&x, &g).unwrap(), Mat::zeros(2, 4));
        let x = Mat::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 5.0, 1.0]]).unwrap();
        assert_eq!(covariance_backward(&x, &Mat::zeros(2, 2)).unwrap(), Mat::zeros(2, 3));
        assert!(covariance_backward(&x, &Mat::zeros(3, 3)).is_err());
    }

    #[test]
    fn factor_examples() {
        let zero = sym_eig(&Mat::zeros(3, 3)).unwrap();
        assert_eq!(seb_factor(&zero).unwrap(), 0.0);
        let one = sym_eig(&Mat::identity(1)).unwrap();
        assert!((seb_factor(&one).unwrap() - (-1.0f64).exp()).abs() < 1e-16);
        let neg = sym_eig(&Mat::from_diag(&[1.0, -1.0])).unwrap();
        assert!(matches!(seb_factor(&neg), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn factor_backward_scalar() {
        let e = sym_eig(&Mat::identity(1)).unwrap();
        let q = mat_fn(&e, SpectralFn::Sqrt).unwrap();
        let s = mat_fn(&e, SpectralFn::ExpInv).unwrap();
        let f = seb_factor(&e).unwrap();
        let (d_q, d_s) = seb_factor_backward(&q, &s, f).unwrap();
        assert!((d_q[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        // λ e^{-λ} / f at λ = 1 is e^{-1} / e^{-1}
        assert!((d_s[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(matches!(seb_factor_backward(&q, &s, 0.0), Err(crate::Error::Numeric(_))));
    }

    fn x_with_covariance_diag(d0: f64, d1: f64) -> Mat {
        // columns ±√d0 e1, ±√d1 e2 arranged so the covariance is diag(d0, d1)
        let a = (2.0 * d0).sqrt();
        let b = (2.0 * d1).sqrt();
        Mat::from_rows(&[vec![a, -a, 0.0, 0.0], vec![0.0, 0.0, b, -b]]).unwrap()
    }

    #[test]
    fn forward_without_seb_is_plain_sqrt() {
        let x = x_with_covariance_diag(4.0, 1.0);
        let st = gcp_forward(&x, &GcpConfig::default()).unwrap();
        assert!(st.p.sub(&Mat::from_diag(&[4.0, 1.0])).max_abs() < 1e-14);
        assert!(st.a.sub(&Mat::from_diag(&[2.0, 1.0])).max_abs() < 1e-14);
        assert!(st.factor.is_none() && st.s.is_none());
    }

    #[test]
    fn forward_with_seb_amplifies() {
        let x = x_with_covariance_diag(4.0, 1.0);
        let st = gcp_forward(&x, &GcpConfig::default().with_seb(true)).unwrap();
        let f = st.factor.unwrap();
        assert!(f > 0.0);
        let ea = sym_eig(&st.a).unwrap();
        for (la, lq) in ea.lambda().iter().zip([2.0, 1.0]) {
            assert!((la - (f + 1.0) * lq).abs() < 1e-12);
            assert!(*la > lq);
        }
    }

    #[test]
    fn backward_of_zero_seed_is_zero() {
        let x = Mat::from_rows(&[vec![1.0, 0.3, -0.2, 0.8], vec![0.1, 0.9, -1.0, 0.4]]).unwrap();
        let st = gcp_forward(&x, &GcpConfig::default().with_seb(true)).unwrap();
        let g = gcp_backward(&st, &Mat::zeros(2, 2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn truncated_forward_uses_truncation_output() {
        let x = Mat::from_rows(&[
            vec![1.0, 0.3, -0.2, 0.8, 0.0],
            vec![0.1, 0.9, -1.0, 0.4, 0.2],
            vec![0.5, -0.3, 0.2, 0.1, -0.6],
        ])
        .unwrap();
        let cfg = GcpConfig::default().with_truncation(Some(2));
        let st = gcp_forward(&x, &cfg).unwrap();
        let expected = spectral::truncate_eig(&st.eig, 2).unwrap();
        assert_eq!(st.effective_covariance(), &expected);
        assert_eq!(st.keep, vec![true, true, false]);
        assert!(gcp_forward(&x, &cfg.with_truncation(Some(4))).is_err());
    }

    #[test]
    fn subset_masks() {
        assert_eq!(EigenSubset::Top(2).mask(4).unwrap(), [true, true, false, false]);
        assert_eq!(EigenSubset::Suffix(2).mask(4).unwrap(), [false, false, true, true]);
        assert_eq!(EigenSubset::FirstPlusLast(1).mask(4).unwrap(), [true, false, false, true]);
        assert!(EigenSubset::Suffix(4).mask(4).is_err());
        assert!(EigenSubset::FirstPlusLast(4).mask(4).is_err());
    }

    #[test]
    fn upper_triangle() {
        assert_eq!(upper_tri_vec(&Mat::identity(2)).unwrap(), vec![1.0, 0.0, 1.0]);
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(upper_tri_vec(&a).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(from_upper_tri(&[1.0, 2.0, 3.0], 2).unwrap(), a);
        assert!(matches!(upper_tri_vec(&Mat::zeros(2, 3)), Err(crate::Error::Dimension(_))));
    }
}
