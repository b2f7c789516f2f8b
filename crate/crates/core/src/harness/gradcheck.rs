//! Central finite-difference checks of every analytic backward pass.
//!
//! Each trial draws a fresh input from a per-trial seed, contracts the
//! operation's output with a random cotangent to obtain a scalar loss, and
//! compares the analytic gradient with central differences
//! (`h = 1e-5·max(1, |x|)`) by the norm-wise relative error
//! `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖)`.
//! Symmetric matrix inputs are perturbed symmetrically.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::gcp::{covariance, covariance_backward, gcp_backward, gcp_forward, seb_factor_backward, GcpConfig};
use crate::harness::model::{model_backward, model_forward, softmax_cross_entropy, ToyModel};
use crate::harness::rng::{features_with_spectrum, gapped_spectrum, normal, normal_mat, seeded, spsd_with_spectrum, Rng};
use crate::linalg::{compose, fro_inner, sym_eig, Mat, SymEig};
use crate::spectral::{eig_backward, mat_fn, mat_fn_backward, EigGrad, SpectralFn, DEFAULT_K_EPSILON};

/// Eigengapped test spectra: `λ ∈ [0.1, 10]`, consecutive gaps ≥ 0.1.
pub const SPECTRUM_RANGE: (f64, f64) = (0.1, 10.0);
pub const SPECTRUM_GAP: f64 = 0.1;
const DIM: usize = 5;
const POSITIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    CovarianceBackward,
    MatFnBackward(SpectralFn),
    EigBackward,
    SebFactorBackward,
    GcpBackward,
    GcpBackwardSeb,
    ModelBackward,
}

/// Root order used by `mat_fn_backward_proot`.
pub const PROOT_ORDER: u32 = 3;

impl GradOp {
    pub const ALL: [GradOp; 10] = [
        GradOp::CovarianceBackward,
        GradOp::MatFnBackward(SpectralFn::Sqrt),
        GradOp::MatFnBackward(SpectralFn::PRoot(PROOT_ORDER)),
        GradOp::MatFnBackward(SpectralFn::Log),
        GradOp::MatFnBackward(SpectralFn::ExpInv),
        GradOp::EigBackward,
        GradOp::SebFactorBackward,
        GradOp::GcpBackward,
        GradOp::GcpBackwardSeb,
        GradOp::ModelBackward,
    ];

    /// Maximum accepted relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            GradOp::CovarianceBackward => 1e-6,
            GradOp::MatFnBackward(_) | GradOp::EigBackward | GradOp::SebFactorBackward => 1e-4,
            GradOp::GcpBackward | GradOp::GcpBackwardSeb | GradOp::ModelBackward => 1e-3,
        }
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradOp::CovarianceBackward => write!(f, "covariance_backward"),
            GradOp::MatFnBackward(SpectralFn::PRoot(_)) => write!(f, "mat_fn_backward_proot"),
            GradOp::MatFnBackward(g) => write!(f, "mat_fn_backward_{g}"),
            GradOp::EigBackward => write!(f, "eig_backward"),
            GradOp::SebFactorBackward => write!(f, "seb_factor_backward"),
            GradOp::GcpBackward => write!(f, "gcp_backward"),
            GradOp::GcpBackwardSeb => write!(f, "gcp_backward_seb"),
            GradOp::ModelBackward => write!(f, "model_backward"),
        }
    }
}

impl FromStr for GradOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match GradOp::ALL.iter().find(|op| op.to_string() == s) {
            Some(op) => Ok(*op),
            None => {
                let known: Vec<String> = GradOp::ALL.iter().map(|o| o.to_string()).collect();
                bail!(Validation, "unknown operation {s:?}; expected one of {}", known.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub op: GradOp,
    pub tolerance: f64,
    pub trials: Vec<TrialResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.trials.iter().all(|t| t.pass)
    }

    pub fn worst(&self) -> f64 {
        self.trials.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    /// `trial,max_rel_err,pass`
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trial,max_rel_err,pass")?;
        for t in &self.trials {
            writeln!(w, "{},{:.6e},{}", t.trial, t.max_rel_err, t.pass)?;
        }
        Ok(())
    }
}

/// Norm-wise relative error; zero when both gradients vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central differences of `f` over every entry of `x`.
pub fn fd_gradient(x: &Mat, f: impl Fn(&Mat) -> Result<f64>) -> Result<Mat> {
    let mut g = Mat::zeros(x.rows(), x.cols());
    let mut xp = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let h = step(x[(i, j)]);
            xp[(i, j)] = x[(i, j)] + h;
            let up = f(&xp)?;
            xp[(i, j)] = x[(i, j)] - h;
            let down = f(&xp)?;
            xp[(i, j)] = x[(i, j)];
            g[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    Ok(g)
}

/// Central differences of `f` along symmetric directions `E_ij + E_ji`,
/// returned as the symmetric gradient (off-diagonal derivatives halved).
pub fn fd_gradient_sym(p: &Mat, f: impl Fn(&Mat) -> Result<f64>) -> Result<Mat> {
    let d = p.rows();
    let mut g = Mat::zeros(d, d);
    let mut pp = p.clone();
    for i in 0..d {
        for j in i..d {
            let h = step(p[(i, j)]);
            let shift = |m: &mut Mat, v: f64| {
                m[(i, j)] = p[(i, j)] + v;
                m[(j, i)] = p[(j, i)] + v;
            };
            shift(&mut pp, h);
            let up = f(&pp)?;
            shift(&mut pp, -h);
            let down = f(&pp)?;
            shift(&mut pp, 0.0);
            let dir = (up - down) / (2.0 * h);
            let v = if i == j { dir } else { dir / 2.0 };
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial as u64)
}

fn gapped_spsd(rng: &mut Rng, d: usize) -> Mat {
    let spectrum = gapped_spectrum(rng, d, SPECTRUM_RANGE.0, SPECTRUM_RANGE.1, SPECTRUM_GAP);
    spsd_with_spectrum(rng, &spectrum)
}

fn gapped_features(rng: &mut Rng, d: usize, n: usize) -> Mat {
    let spectrum = gapped_spectrum(rng, d, SPECTRUM_RANGE.0, SPECTRUM_RANGE.1, SPECTRUM_GAP);
    features_with_spectrum(rng, &spectrum, n)
}

/// Runs `trials` independent checks of `op`.
pub fn gradcheck(op: GradOp, trials: usize, seed: u64) -> Result<GradcheckReport> {
    if trials == 0 {
        bail!(Validation, "gradcheck needs at least one trial");
    }
    let tolerance = op.tolerance();
    let trials = (0..trials)
        .map(|trial| {
            let mut rng = seeded(trial_seed(seed, trial));
            let err = check_once(op, &mut rng)?;
            Ok(TrialResult { trial, max_rel_err: err, pass: err <= tolerance })
        })
        .collect::<Result<_>>()?;
    Ok(GradcheckReport { op, tolerance, trials })
}

fn check_once(op: GradOp, rng: &mut Rng) -> Result<f64> {
    match op {
        GradOp::CovarianceBackward => {
            let x = normal_mat(rng, DIM, POSITIONS);
            let g = normal_mat(rng, DIM, DIM);
            let analytic = covariance_backward(&x, &g)?;
            let numeric = fd_gradient(&x, |x| fro_inner(&g, &covariance(x)?))?;
            Ok(relative_error(analytic.data(), numeric.data()))
        }
        GradOp::MatFnBackward(f) => {
            let eig = sym_eig(&gapped_spsd(rng, DIM))?;
            let g = normal_mat(rng, DIM, DIM);
            let analytic = mat_fn_backward(&eig, f, &g)?;
            let lambda = eig.lambda().to_vec();
            let d_u = fd_gradient(eig.u(), |u| {
                fro_inner(&g, &mat_fn(&SymEig::from_parts(u.clone(), lambda.clone())?, f)?)
            })?;
            let lam = Mat::new(1, DIM, lambda.clone())?;
            let u = eig.u().clone();
            let d_l = fd_gradient(&lam, |l| {
                fro_inner(&g, &mat_fn(&SymEig::from_parts(u.clone(), l.data().to_vec())?, f)?)
            })?;
            Ok(relative_error(analytic.d_u.data(), d_u.data())
                .max(relative_error(&analytic.d_lambda, d_l.data())))
        }
        GradOp::EigBackward => {
            let p = gapped_spsd(rng, DIM);
            let eig = sym_eig(&p)?;
            let grad = EigGrad {
                d_u: normal_mat(rng, DIM, DIM),
                d_lambda: (0..DIM).map(|_| normal(rng)).collect(),
            };
            let analytic = eig_backward(&eig, &grad, DEFAULT_K_EPSILON)?;
            let numeric = fd_gradient_sym(&p, |p| {
                let e = sym_eig(p)?;
                let dl: f64 = e.lambda().iter().zip(&grad.d_lambda).map(|(a, b)| a * b).sum();
                Ok(fro_inner(&grad.d_u, e.u())? + dl)
            })?;
            Ok(relative_error(analytic.data(), numeric.data()))
        }
        GradOp::SebFactorBackward => {
            let eig = sym_eig(&gapped_spsd(rng, DIM))?;
            let q = mat_fn(&eig, SpectralFn::Sqrt)?;
            let s = mat_fn(&eig, SpectralFn::ExpInv)?;
            let factor = q.matmul(&s.transpose()).fro_norm();
            let (d_q, d_s) = seb_factor_backward(&q, &s, factor)?;
            let num_q = fd_gradient(&q, |q| Ok(q.matmul(&s.transpose()).fro_norm()))?;
            let num_s = fd_gradient(&s, |s| Ok(q.matmul(&s.transpose()).fro_norm()))?;
            Ok(relative_error(d_q.data(), num_q.data()).max(relative_error(d_s.data(), num_s.data())))
        }
        GradOp::GcpBackward | GradOp::GcpBackwardSeb => {
            let cfg = GcpConfig::default().with_seb(op == GradOp::GcpBackwardSeb);
            let x = gapped_features(rng, DIM, POSITIONS);
            let g = normal_mat(rng, DIM, DIM);
            let analytic = gcp_backward(&gcp_forward(&x, &cfg)?, &g)?;
            let numeric = fd_gradient(&x, |x| fro_inner(&g, &gcp_forward(x, &cfg)?.a))?;
            Ok(relative_error(analytic.data(), numeric.data()))
        }
        GradOp::ModelBackward => check_model(rng),
    }
}

/// 3-class, `d = 6` model whose rectifier stays open and whose pooled
/// covariance is eigengapped, checked over every parameter.
fn check_model(rng: &mut Rng) -> Result<f64> {
    let (d_in, d, classes) = (8, 6, 3);
    let mut model = ToyModel::init(d_in, d, classes, rng_u64(rng));
    model.classifier_w = normal_mat(rng, classes, d * (d + 1) / 2).scale(0.5);
    model.classifier_b = (0..classes).map(|_| normal(rng)).collect();
    // Features with a prescribed gapped spectrum, lifted well above zero,
    // pulled back through the projection: x = projᵀ (proj projᵀ)⁻¹ F.
    let features = gapped_features(rng, d, 2 * d_in).map(|v| v + 50.0);
    let gram = sym_eig(&model.proj.matmul(&model.proj.transpose()))?;
    let inv: Vec<f64> = gram.lambda().iter().map(|l| 1.0 / l).collect();
    let x = model.proj.transpose().matmul(&compose(gram.u(), &inv)).matmul(&features);
    let label = (rng_u64(rng) % classes as u64) as usize;
    let cfg = GcpConfig::default().with_seb(true);

    let (logits, cache) = model_forward(&model, &x, &cfg)?;
    let (_, d_logits) = softmax_cross_entropy(&logits, label);
    let analytic = model_backward(&model, &cache, &d_logits)?.to_flat();

    let params = Mat::new(1, model.param_count(), model.to_flat())?;
    let numeric = fd_gradient(&params, |p| {
        let mut m = model.clone();
        m.set_flat(p.data());
        let (logits, _) = model_forward(&m, &x, &cfg)?;
        Ok(softmax_cross_entropy(&logits, label).0)
    })?;
    Ok(relative_error(&analytic, numeric.data()))
}

fn rng_u64(rng: &mut Rng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_ids_round_trip() {
        for op in GradOp::ALL {
            assert_eq!(op.to_string().parse::<GradOp>().unwrap(), op);
        }
        assert!(matches!("nope".parse::<GradOp>(), Err(Error::Validation(_))));
    }

    #[test]
    fn every_op_passes_a_few_trials() {
        for op in GradOp::ALL {
            let report = gradcheck(op, 3, 1).unwrap();
            assert!(report.passed(), "{op}: worst {:e}", report.worst());
        }
    }

    #[test]
    fn csv_layout() {
        let report = gradcheck(GradOp::CovarianceBackward, 2, 0).unwrap();
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("trial,max_rel_err,pass\n0,"));
        assert_eq!(text.lines().count(), 3);
    }
}
