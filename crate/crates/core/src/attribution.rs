//! Eigen-selective saliency, similarity metrics and perturbation-based
//! activation maximization.

use crate::diagnostics::energy_split;
use crate::error::{bail, Result};
use crate::gcp::{covariance, covariance_backward, EigenSubset, GcpConfig};
use crate::harness::model::{argmax, model_backward_with, model_forward_subset, Activation, ToyModel};
use crate::linalg::{compose, fro_inner, sym_eig, Mat, SymEig};

/// Relative tolerance for treating an input of [`vn_trace_gap`] as SPSD.
const SPSD_RTOL: f64 = 1e-10;
/// Tail energy below which eigenvalues count as "small".
pub const SMALL_ENERGY_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    All,
    /// `λ_1 … λ_t`
    Large,
    /// `λ_{t+1} … λ_d`
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EigSelection {
    pub mode: SelectionMode,
    /// Number of large eigenvalues.
    pub t: usize,
}

impl EigSelection {
    pub fn new(mode: SelectionMode, t: usize) -> Self {
        Self { mode, t }
    }

    /// `t = ⌈0.8 d⌉`, clamped into `[1, d − 1]`.
    pub fn default_split(d: usize) -> usize {
        let t = (4 * d).div_ceil(5);
        t.clamp(1, d.saturating_sub(1).max(1))
    }

    /// `t` such that the small suffix holds less than 0.1% of the energy,
    /// clamped into `[1, d − 1]`.
    pub fn energy_split(lambda: &[f64]) -> Result<usize> {
        let d = lambda.len();
        if d < 2 {
            bail!(Validation, "an eigenvalue split needs d ≥ 2, got {d}");
        }
        Ok(energy_split(lambda, SMALL_ENERGY_FRACTION)?.clamp(1, d - 1))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.mode != SelectionMode::All && !(0 < self.t && self.t < d) {
            bail!(Validation, "split t = {} must satisfy 0 < t < {d}", self.t);
        }
        Ok(())
    }

    /// Equivalent eigenvalue subset for the pooling head.
    pub fn subset(&self, d: usize) -> Result<EigenSubset> {
        self.validate(d)?;
        Ok(match self.mode {
            SelectionMode::All => EigenSubset::All,
            SelectionMode::Large => EigenSubset::Top(self.t),
            SelectionMode::Small => EigenSubset::Suffix(self.t),
        })
    }
}

/// Large → `(λ_1,…,λ_t,0,…,0)`, Small → `(0,…,0,λ_{t+1},…,λ_d)`, All → `λ`.
pub fn select_eigs(lambda: &[f64], sel: EigSelection) -> Result<Vec<f64>> {
    sel.validate(lambda.len())?;
    Ok(lambda
        .iter()
        .enumerate()
        .map(|(i, &l)| match sel.mode {
            SelectionMode::All => l,
            SelectionMode::Large if i < sel.t => l,
            SelectionMode::Small if i >= sel.t => l,
            _ => 0.0,
        })
        .collect())
}

/// Spectral projection `U Λ_sel Uᵀ`.
pub fn project_subspace(eig: &SymEig, sel: EigSelection) -> Result<Mat> {
    Ok(compose(eig.u(), &select_eigs(eig.lambda(), sel)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluRule {
    /// `p > 0 → 1`, `p ≤ 0 → 0`
    Vanilla,
    /// `p > 0 → p`, `p ≤ 0 → 0`
    DeConv,
}

/// What the rectifier rule gates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReluGating {
    /// The incoming gradient value `p` only.
    #[default]
    Gradient,
    /// Additionally require a positive forward pre-activation; Vanilla then
    /// becomes the exact ReLU derivative `p·[x > 0]` and DeConv becomes
    /// `max(p, 0)·[x > 0]`.
    Activation,
}

/// Gradient-gated rectifier backward, elementwise on the incoming gradient.
pub fn relu_backward(rule: ReluRule, upstream: &Mat) -> Mat {
    upstream.map(|p| relu_rule(rule, ReluGating::Gradient, 1.0, p))
}

fn relu_rule(rule: ReluRule, gating: ReluGating, pre: f64, p: f64) -> f64 {
    match (gating, rule) {
        (ReluGating::Gradient, ReluRule::Vanilla) => {
            if p > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        (ReluGating::Gradient, ReluRule::DeConv) => p.max(0.0),
        (ReluGating::Activation, _) if pre <= 0.0 => 0.0,
        (ReluGating::Activation, ReluRule::Vanilla) => p,
        (ReluGating::Activation, ReluRule::DeConv) => p.max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// `|∂ logit / ∂x|`, same shape as the input.
    pub values: Mat,
    pub rule: ReluRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaliencyTarget {
    /// The class the unrestricted model predicts.
    #[default]
    Predicted,
    Class(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SaliencyOptions {
    pub target: SaliencyTarget,
    pub gating: ReluGating,
}

/// Saliency of the predicted class logit with the default options.
pub fn eigen_saliency(
    model: &ToyModel,
    x: &Mat,
    cfg: &GcpConfig,
    sel: EigSelection,
    rule: ReluRule,
) -> Result<SaliencyMap> {
    eigen_saliency_with(model, x, cfg, sel, rule, SaliencyOptions::default())
}

/// Backpropagates a one-hot logit seed through the pooling head with the
/// eigenvalues restricted to `sel`, then through the rectifier using `rule`
/// instead of its derivative. Returns the absolute input gradient.
pub fn eigen_saliency_with(
    model: &ToyModel,
    x: &Mat,
    cfg: &GcpConfig,
    sel: EigSelection,
    rule: ReluRule,
    opts: SaliencyOptions,
) -> Result<SaliencyMap> {
    let subset = sel.subset(model.d())?;
    let class = match opts.target {
        SaliencyTarget::Predicted => argmax(&model_forward_subset(model, x, cfg, EigenSubset::All)?.0),
        SaliencyTarget::Class(c) => {
            if c >= model.num_classes() {
                bail!(Validation, "class {c} out of range for {} classes", model.num_classes());
            }
            c
        }
    };
    let (_, cache) = model_forward_subset(model, x, cfg, subset)?;
    let mut seed = vec![0.0; model.num_classes()];
    seed[class] = 1.0;
    let activation = model.activation;
    let grad = model_backward_with(model, &cache, &seed, |pre, p| match activation {
        Activation::Relu => relu_rule(rule, opts.gating, pre, p),
        Activation::Identity => p,
    })?;
    let values = grad.d_x.map(f64::abs);
    if !values.is_finite() {
        bail!(Numeric, "saliency map contains non-finite entries");
    }
    Ok(SaliencyMap { values, rule })
}

/// Pearson correlation of the entries of `a` and `b`.
pub fn corr_coeff(a: &Mat, b: &Mat) -> Result<f64> {
    if a.shape() != b.shape() {
        bail!(Dimension, "correlation between {:?} and {:?}", a.shape(), b.shape());
    }
    let n = a.data().len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        bail!(Numeric, "correlation is undefined for a constant input");
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Mean absolute difference of the entries.
pub fn mae(a: &Mat, b: &Mat) -> Result<f64> {
    if a.shape() != b.shape() {
        bail!(Dimension, "mean absolute error between {:?} and {:?}", a.shape(), b.shape());
    }
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

fn check_square_pair(m: &Mat, other: &Mat) -> Result<()> {
    if !m.is_square() || m.shape() != other.shape() {
        bail!(Dimension, "expected matching square matrices, got {:?} and {:?}", m.shape(), other.shape());
    }
    Ok(())
}

fn sq_norm(m: &Mat) -> f64 {
    m.data().iter().map(|v| v * v).sum()
}

/// `‖M − P_L‖_F²`
pub fn l1_loss(m: &Mat, p_l: &Mat) -> Result<f64> {
    check_square_pair(m, p_l)?;
    Ok(sq_norm(&m.sub(p_l)))
}

/// `−‖M − P_L‖_F² + ‖M − P_S‖_F²`
pub fn l2_loss(m: &Mat, p_l: &Mat, p_s: &Mat) -> Result<f64> {
    check_square_pair(m, p_l)?;
    check_square_pair(m, p_s)?;
    Ok(-sq_norm(&m.sub(p_l)) + sq_norm(&m.sub(p_s)))
}

/// The form of [`l2_loss`] that is linear in `M`:
/// `−2⟨M, P_S − P_L⟩ + ‖P_S‖_F² − ‖P_L‖_F²`.
pub fn l2_loss_linear(m: &Mat, p_l: &Mat, p_s: &Mat) -> Result<f64> {
    check_square_pair(m, p_l)?;
    check_square_pair(m, p_s)?;
    Ok(-2.0 * fro_inner(m, &p_s.sub(p_l))? + sq_norm(p_s) - sq_norm(p_l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    /// Pull the feature covariance towards `P_L`.
    L1,
    /// Push it away from `P_L` and towards `P_S`.
    L2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbTrace {
    pub image: Mat,
    /// Loss before each update step.
    pub loss_history: Vec<f64>,
    pub mode: PerturbMode,
}

pub const DEFAULT_PERTURB_LR: f64 = 0.1;
pub const DEFAULT_PERTURB_STEPS: usize = 1000;

/// Feature covariance `M` of the model's rectified projection of `x`.
fn feature_covariance(model: &ToyModel, x: &Mat) -> Result<(Mat, Mat, Mat)> {
    let pre = model.proj.matmul(x);
    let features = match model.activation {
        Activation::Relu => pre.map(|v| v.max(0.0)),
        Activation::Identity => pre.clone(),
    };
    let m = covariance(&features)?;
    Ok((pre, features, m))
}

/// Gradient descent on the input `x` (model frozen) minimizing the l1 or l2
/// loss between the feature covariance `M(x)` and the large/small spectral
/// projections `P_L`, `P_S` of the initial covariance `M(x0)`.
pub fn perturb(
    model: &ToyModel,
    x0: &Mat,
    t: usize,
    mode: PerturbMode,
    steps: usize,
    lr: f64,
) -> Result<PerturbTrace> {
    if steps == 0 {
        bail!(Validation, "perturbation needs at least one step");
    }
    if !(lr > 0.0 && lr.is_finite()) {
        bail!(Validation, "learning rate must be positive, got {lr}");
    }
    if x0.rows() != model.d_in() {
        bail!(Dimension, "input has {} channels, model expects {}", x0.rows(), model.d_in());
    }
    let (_, _, m0) = feature_covariance(model, x0)?;
    let eig0 = sym_eig(&m0)?;
    let p_l = project_subspace(&eig0, EigSelection::new(SelectionMode::Large, t))?;
    let p_s = project_subspace(&eig0, EigSelection::new(SelectionMode::Small, t))?;

    let mut x = x0.clone();
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let (pre, features, m) = feature_covariance(model, &x)?;
        let (loss, d_m) = match mode {
            PerturbMode::L1 => (l1_loss(&m, &p_l)?, m.sub(&p_l).scale(2.0)),
            PerturbMode::L2 => (l2_loss(&m, &p_l, &p_s)?, p_l.sub(&p_s).scale(2.0)),
        };
        if !loss.is_finite() {
            bail!(Numeric, "perturbation diverged at step {step}: loss {loss}");
        }
        history.push(loss);
        let d_features = covariance_backward(&features, &d_m)?;
        let d_pre = match model.activation {
            Activation::Relu => Mat::from_fn(pre.rows(), pre.cols(), |i, j| {
                if pre[(i, j)] > 0.0 {
                    d_features[(i, j)]
                } else {
                    0.0
                }
            }),
            Activation::Identity => d_features,
        };
        let d_x = model.proj.transpose().matmul(&d_pre);
        x.axpy(-lr, &d_x);
        if !x.is_finite() {
            bail!(Numeric, "perturbation diverged at step {step}: non-finite input");
        }
    }
    Ok(PerturbTrace { image: x, loss_history: history, mode })
}

fn check_spsd(m: &Mat, name: &str) -> Result<SymEig> {
    let eig = sym_eig(m)?;
    let lmax = eig.lambda().first().copied().unwrap_or(0.0).max(0.0);
    if let Some(i) = eig.lambda().iter().position(|&l| l < -SPSD_RTOL * lmax.max(f64::MIN_POSITIVE)) {
        bail!(Domain, "{name} is not positive semi-definite: λ[{i}] = {:e}", eig.lambda()[i]);
    }
    Ok(eig)
}

/// `Σ σ_i(A) σ_i(B) − |⟨A, B⟩|` for SPSD `A`, `B` (non-negative by the
/// Von Neumann trace inequality).
pub fn vn_trace_gap(a: &Mat, b: &Mat) -> Result<f64> {
    check_square_pair(a, b)?;
    let ea = check_spsd(a, "first argument")?;
    let eb = check_spsd(b, "second argument")?;
    // For SPSD matrices the singular values are the (sorted) eigenvalues.
    let bound: f64 = ea.lambda().iter().zip(eb.lambda()).map(|(x, y)| x.max(0.0) * y.max(0.0)).sum();
    Ok(bound - fro_inner(a, b)?.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn select_partitions_spectrum() {
        let l = [3.0, 2.0, 1.0];
        let large = select_eigs(&l, EigSelection::new(SelectionMode::Large, 2)).unwrap();
        let small = select_eigs(&l, EigSelection::new(SelectionMode::Small, 2)).unwrap();
        assert_eq!(large, vec![3.0, 2.0, 0.0]);
        assert_eq!(small, vec![0.0, 0.0, 1.0]);
        assert_eq!(select_eigs(&l, EigSelection::new(SelectionMode::All, 0)).unwrap(), l.to_vec());
        assert!(select_eigs(&l, EigSelection::new(SelectionMode::Large, 3)).is_err());
        assert!(select_eigs(&l, EigSelection::new(SelectionMode::Small, 0)).is_err());
    }

    #[test]
    fn projection_of_diagonal() {
        let eig = sym_eig(&Mat::from_diag(&[3.0, 2.0, 1.0])).unwrap();
        let pl = project_subspace(&eig, EigSelection::new(SelectionMode::Large, 2)).unwrap();
        assert_eq!(pl, Mat::from_diag(&[3.0, 2.0, 0.0]));
    }

    #[test]
    fn default_split_is_eighty_percent() {
        assert_eq!(EigSelection::default_split(256), 205);
        assert_eq!(EigSelection::default_split(8), 7);
        assert_eq!(EigSelection::default_split(2), 1);
        let t = EigSelection::energy_split(&[1.0, 0.5, 1e-5, 1e-6]).unwrap();
        assert_eq!(t, 2);
    }

    #[test]
    fn relu_rules_as_printed() {
        let up = m(&[&[0.5, -0.3, 0.0]]);
        assert_eq!(relu_backward(ReluRule::Vanilla, &up), m(&[&[1.0, 0.0, 0.0]]));
        let dc = relu_backward(ReluRule::DeConv, &up);
        assert_eq!(dc, m(&[&[0.5, 0.0, 0.0]]));
        assert_eq!(relu_backward(ReluRule::DeConv, &dc), dc);
        assert_eq!(relu_rule(ReluRule::Vanilla, ReluGating::Activation, 1.0, -0.3), -0.3);
        assert_eq!(relu_rule(ReluRule::DeConv, ReluGating::Activation, -1.0, 0.5), 0.0);
    }

    #[test]
    fn correlation_and_mae() {
        let a = m(&[&[1.0, 2.0], &[4.0, 3.0]]);
        assert!((corr_coeff(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let mean = 2.5;
        let anti = a.map(|v| -v + 2.0 * mean);
        assert!((corr_coeff(&a, &anti).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(corr_coeff(&a, &Mat::zeros(2, 2)), Err(crate::Error::Numeric(_))));
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&m(&[&[0.0, 2.0]]), &m(&[&[1.0, 1.0]])).unwrap(), 1.0);
    }

    #[test]
    fn losses_at_reference_points() {
        let p_l = Mat::from_diag(&[3.0, 2.0, 0.0]);
        let p_s = Mat::from_diag(&[0.0, 0.0, 1.0]);
        assert_eq!(l1_loss(&p_l, &p_l).unwrap(), 0.0);
        let z = Mat::zeros(3, 3);
        assert_eq!(l2_loss(&z, &p_l, &p_s).unwrap(), 1.0 - 13.0);
        assert_eq!(l2_loss_linear(&z, &p_l, &p_s).unwrap(), 1.0 - 13.0);
        assert!(l1_loss(&Mat::zeros(2, 2), &p_l).is_err());
    }

    #[test]
    fn trace_gap_equality_cases() {
        let i2 = Mat::identity(2);
        assert_eq!(vn_trace_gap(&i2, &i2).unwrap(), 0.0);
        let a = Mat::from_diag(&[3.0, 1.0]);
        let b = Mat::from_diag(&[2.0, 0.5]);
        assert!(vn_trace_gap(&a, &b).unwrap().abs() < 1e-15);
        assert!(matches!(vn_trace_gap(&Mat::from_diag(&[1.0, -1.0]), &i2), Err(crate::Error::Domain(_))));
    }
}
