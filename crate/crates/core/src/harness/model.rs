//! Toy classifier: linear channel projection, rectifier, covariance pooling
//! head, upper-triangular vectorization and an affine classifier.

use std::path::Path;

use crate::error::{bail, Result};
use crate::gcp::{from_upper_tri, gcp_backward, gcp_forward_subset, upper_tri_vec, EigenSubset, GcpConfig, GcpState};
use crate::harness::rng::{normal, seeded};
use crate::linalg::{load_spm, save_spm, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// No rectifier; the feature extractor is purely linear.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    /// `d × d_in` channel projection.
    pub proj: Mat,
    /// `num_classes × d(d+1)/2`
    pub classifier_w: Mat,
    pub classifier_b: Vec<f64>,
    pub activation: Activation,
}

/// Forward intermediates for one sample.
#[derive(Debug, Clone)]
pub struct ModelCache {
    pub x: Mat,
    pub pre: Mat,
    pub features: Mat,
    pub gcp: GcpState,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub d_proj: Mat,
    pub d_w: Mat,
    pub d_b: Vec<f64>,
    pub d_x: Mat,
}

impl ToyModel {
    /// Projection entries `0.2 + 0.3·N(0,1)`: a positive mean keeps the
    /// rectifier mostly open for the offset inputs of the synthetic data.
    /// Classifier weights start at zero.
    pub fn init(d_in: usize, d: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let proj = Mat::from_fn(d, d_in, |_, _| 0.2 + 0.3 * normal(&mut rng));
        Self {
            proj,
            classifier_w: Mat::zeros(num_classes, d * (d + 1) / 2),
            classifier_b: vec![0.0; num_classes],
            activation: Activation::Relu,
        }
    }

    pub fn d(&self) -> usize {
        self.proj.rows()
    }

    pub fn d_in(&self) -> usize {
        self.proj.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier_b.len()
    }

    fn check(&self) -> Result<()> {
        let d = self.d();
        if self.classifier_w.shape() != (self.num_classes(), d * (d + 1) / 2) {
            bail!(
                Dimension,
                "classifier {:?} does not match {} classes on d = {d}",
                self.classifier_w.shape(),
                self.num_classes()
            );
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.proj.data().len() + self.classifier_w.data().len() + self.classifier_b.len()
    }

    /// Parameters flattened as `proj ‖ classifier_w ‖ classifier_b`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.proj.data().to_vec();
        v.extend_from_slice(self.classifier_w.data());
        v.extend_from_slice(&self.classifier_b);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.param_count());
        let (p, rest) = v.split_at(self.proj.data().len());
        let (w, b) = rest.split_at(self.classifier_w.data().len());
        self.proj.data_mut().copy_from_slice(p);
        self.classifier_w.data_mut().copy_from_slice(w);
        self.classifier_b.copy_from_slice(b);
    }

    /// Writes `proj.spm`, `classifier_w.spm` and `classifier_b.spm` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_spm(dir.join("proj.spm"), &self.proj)?;
        save_spm(dir.join("classifier_w.spm"), &self.classifier_w)?;
        let b = Mat::new(1, self.classifier_b.len(), self.classifier_b.clone())?;
        save_spm(dir.join("classifier_b.spm"), &b)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let model = Self {
            proj: load_spm(dir.join("proj.spm"))?,
            classifier_w: load_spm(dir.join("classifier_w.spm"))?,
            classifier_b: load_spm(dir.join("classifier_b.spm"))?.into_data(),
            activation: Activation::Relu,
        };
        model.check()?;
        Ok(model)
    }
}

impl ModelGrad {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.d_proj.data().to_vec();
        v.extend_from_slice(self.d_w.data());
        v.extend_from_slice(&self.d_b);
        v
    }
}

pub fn model_forward(model: &ToyModel, x: &Mat, cfg: &GcpConfig) -> Result<(Vec<f64>, ModelCache)> {
    model_forward_subset(model, x, cfg, EigenSubset::All)
}

pub fn model_forward_subset(
    model: &ToyModel,
    x: &Mat,
    cfg: &GcpConfig,
    subset: EigenSubset,
) -> Result<(Vec<f64>, ModelCache)> {
    model.check()?;
    if x.rows() != model.d_in() {
        bail!(Dimension, "input has {} channels, model expects {}", x.rows(), model.d_in());
    }
    let pre = model.proj.matmul(x);
    let features = match model.activation {
        Activation::Relu => pre.map(|v| v.max(0.0)),
        Activation::Identity => pre.clone(),
    };
    let gcp = gcp_forward_subset(&features, cfg, subset)?;
    let pooled = upper_tri_vec(&gcp.a)?;
    let logits: Vec<f64> = (0..model.num_classes())
        .map(|c| {
            model.classifier_w.row(c).iter().zip(&pooled).map(|(w, v)| w * v).sum::<f64>()
                + model.classifier_b[c]
        })
        .collect();
    let cache = ModelCache { x: x.clone(), pre, features, gcp, pooled, logits: logits.clone() };
    Ok((logits, cache))
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Gradient of the loss with respect to the pooled representation `A`,
/// split symmetrically across `(i, j)` and `(j, i)`.
fn pooled_grad(model: &ToyModel, cache: &ModelCache, d_logits: &[f64]) -> Result<(Mat, Mat)> {
    let d = model.d();
    let mut d_vec = vec![0.0; cache.pooled.len()];
    for (c, &g) in d_logits.iter().enumerate() {
        for (dv, w) in d_vec.iter_mut().zip(model.classifier_w.row(c)) {
            *dv += g * w;
        }
    }
    let mut d_a = from_upper_tri(&d_vec, d)?;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                d_a[(i, j)] *= 0.5;
            }
        }
    }
    let d_w = Mat::from_fn(model.num_classes(), cache.pooled.len(), |c, k| d_logits[c] * cache.pooled[k]);
    Ok((d_a, d_w))
}

/// Exact backward pass through the whole model.
pub fn model_backward(model: &ToyModel, cache: &ModelCache, d_logits: &[f64]) -> Result<ModelGrad> {
    let activation = model.activation;
    model_backward_with(model, cache, d_logits, |pre, g| match activation {
        Activation::Relu => {
            if pre > 0.0 {
                g
            } else {
                0.0
            }
        }
        Activation::Identity => g,
    })
}

/// Backward pass with a custom rectifier rule `(pre-activation, incoming
/// gradient) → outgoing gradient`.
pub fn model_backward_with(
    model: &ToyModel,
    cache: &ModelCache,
    d_logits: &[f64],
    rectifier: impl Fn(f64, f64) -> f64,
) -> Result<ModelGrad> {
    if d_logits.len() != model.num_classes() {
        bail!(Dimension, "{} logit gradients for {} classes", d_logits.len(), model.num_classes());
    }
    let (d_a, d_w) = pooled_grad(model, cache, d_logits)?;
    let d_features = gcp_backward(&cache.gcp, &d_a)?;
    let d_pre = Mat::from_fn(d_features.rows(), d_features.cols(), |i, j| {
        rectifier(cache.pre[(i, j)], d_features[(i, j)])
    });
    Ok(ModelGrad {
        d_proj: d_pre.matmul(&cache.x.transpose()),
        d_w,
        d_b: d_logits.to_vec(),
        d_x: model.proj.transpose().matmul(&d_pre),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_input() -> Mat {
        let mut rng = seeded(5);
        Mat::from_fn(6, 10, |_, _| 4.0 + normal(&mut rng))
    }

    #[test]
    fn zero_classifier_gives_uniform_softmax() {
        let model = ToyModel::init(6, 4, 3, 1);
        let (logits, _) = model_forward(&model, &sample_input(), &GcpConfig::default()).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, 2);
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (loss, g) = softmax_cross_entropy(&[1.0, -2.0, 0.5], 0);
        assert!(loss > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(g[0] < 0.0);
    }

    #[test]
    fn flat_round_trip_and_files() {
        let mut model = ToyModel::init(6, 4, 3, 2);
        let mut flat = model.to_flat();
        flat.iter_mut().enumerate().for_each(|(i, v)| *v += i as f64 * 1e-3);
        model.set_flat(&flat);
        assert_eq!(model.to_flat(), flat);

        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        assert_eq!(ToyModel::load(dir.path()).unwrap(), model);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let model = ToyModel::init(6, 4, 3, 1);
        assert!(model_forward(&model, &Mat::zeros(5, 10), &GcpConfig::default()).is_err());
    }
}
