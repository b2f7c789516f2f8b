//! Synthetic feature maps whose class information lives in low-variance
//! directions.
//!
//! Every sample is `X = offset·𝟙𝟙ᵀ + B Z` with a shared random orthonormal
//! basis `B`. The rows of `Z` are built from per-sample orthonormal sequences
//! `W` (orthogonal to `𝟙` and to each other), so the sample covariance of `Z`
//! is block diagonal by construction:
//!
//! * the first `noise_dims` rows are `√N · L W_noise` with
//!   `L = diag(σ) + noise_jitter·G`, giving a class-independent noise block
//!   `L Lᵀ` around a fixed, well-separated spectrum `σ²`;
//! * the next `signal_dims` rows are
//!   `√N · signal_scale · (c_y w_seq + signal_jitter · J W_jit)`, where `c_y`
//!   is a unit axis in the signal plane specific to class `y`;
//! * the remaining rows are zero.
//!
//! The class is therefore encoded only in the orientation of the smallest
//! non-zero principal axes, with exactly zero cross-covariance between the
//! signal and the dominant noise directions.

use std::f64::consts::PI;

use crate::error::{bail, Result};
use crate::gcp::covariance;
use crate::harness::rng::{centered_orthonormal_rows, normal, random_orthonormal, seeded, uniform};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub n_per_class: usize,
    pub d_in: usize,
    /// Spatial positions per sample (columns of `X`).
    pub n_positions: usize,
    pub noise_dims: usize,
    pub signal_dims: usize,
    /// Standard deviation of the strongest noise direction.
    pub noise_scale: f64,
    /// The weakest noise direction has standard deviation
    /// `noise_scale · (1 − noise_spread)`; the others are evenly spaced.
    pub noise_spread: f64,
    /// Per-sample random perturbation of the noise factor, relative to
    /// `noise_scale`.
    pub noise_jitter: f64,
    pub signal_scale: f64,
    /// Relative isotropic jitter inside the signal subspace.
    pub signal_jitter: f64,
    /// Constant added to every entry; removed by centering.
    pub offset: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            n_per_class: 60,
            d_in: 12,
            n_positions: 24,
            noise_dims: 6,
            signal_dims: 2,
            noise_scale: 1.0,
            noise_spread: 0.5,
            noise_jitter: 0.1,
            signal_scale: 0.02,
            signal_jitter: 0.1,
            offset: 4.0,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.d_in < 4 {
            bail!(Validation, "d_in must be at least 4, got {}", self.d_in);
        }
        if self.n_positions < self.d_in + 2 {
            bail!(
                Validation,
                "need at least d_in + 2 = {} positions, got {}",
                self.d_in + 2,
                self.n_positions
            );
        }
        if self.n_positions <= self.noise_dims + 2 * self.signal_dims + 1 {
            bail!(
                Validation,
                "{} positions cannot hold {} orthogonal sequences",
                self.n_positions,
                self.noise_dims + self.signal_dims + 1
            );
        }
        if self.num_classes < 2 || self.n_per_class == 0 {
            bail!(Validation, "need ≥ 2 classes and ≥ 1 sample per class");
        }
        if self.signal_dims < 2 {
            bail!(Validation, "the signal subspace needs at least 2 dimensions");
        }
        if self.noise_dims + self.signal_dims > self.d_in {
            bail!(
                Validation,
                "{} noise + {} signal dimensions exceed d_in = {}",
                self.noise_dims,
                self.signal_dims,
                self.d_in
            );
        }
        if !(self.noise_scale > 0.0 && self.signal_scale > 0.0) {
            bail!(Validation, "scales must be positive");
        }
        if !(0.0..1.0).contains(&self.noise_spread) || !(self.noise_jitter >= 0.0 && self.signal_jitter >= 0.0) {
            bail!(Validation, "noise_spread must lie in [0, 1) and jitters must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Mat,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub seed: u64,
    pub config: DatasetConfig,
    /// Shared orthonormal basis `B` (columns).
    pub basis: Mat,
}

/// Convenience wrapper over [`generate`] with the default layout.
pub fn gen_dataset(
    num_classes: usize,
    n_per_class: usize,
    d_in: usize,
    n_positions: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<Dataset> {
    let base = DatasetConfig::default();
    let signal_dims = base.signal_dims;
    let noise_dims = base.noise_dims.min(d_in.saturating_sub(signal_dims));
    generate(&DatasetConfig {
        num_classes,
        n_per_class,
        d_in,
        n_positions,
        noise_scale,
        noise_dims,
        seed,
        ..base
    })
}

pub fn generate(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let basis = random_orthonormal(&mut rng, cfg.d_in);
    let phase = uniform(&mut rng, 0.0, PI);
    let axes = class_axes(cfg, phase);
    let sigma = noise_stddevs(cfg);

    let n = cfg.n_positions;
    let root_n = (n as f64).sqrt();
    let (nd, sd) = (cfg.noise_dims, cfg.signal_dims);
    let mut samples = Vec::with_capacity(cfg.num_classes * cfg.n_per_class);
    for i in 0..cfg.num_classes * cfg.n_per_class {
        let label = i % cfg.num_classes;
        // rows: noise_dims noise sequences, one signal sequence, signal_dims jitter sequences
        let w = centered_orthonormal_rows(&mut rng, nd + 1 + sd, n);
        let factor = Mat::from_fn(nd, nd, |r, c| {
            let jitter = cfg.noise_jitter * cfg.noise_scale * normal(&mut rng);
            if r == c {
                sigma[r] + jitter
            } else {
                jitter
            }
        });
        let jitter = Mat::from_fn(sd, sd, |_, _| cfg.signal_jitter * normal(&mut rng));
        let mut z = Mat::zeros(cfg.d_in, n);
        for c in 0..n {
            for r in 0..nd {
                z[(r, c)] = root_n * (0..nd).map(|k| factor[(r, k)] * w[(k, c)]).sum::<f64>();
            }
            for r in 0..sd {
                let jit: f64 = (0..sd).map(|k| jitter[(r, k)] * w[(nd + 1 + k, c)]).sum();
                z[(nd + r, c)] = root_n * cfg.signal_scale * (axes[label][r] * w[(nd, c)] + jit);
            }
        }
        let x = basis.matmul(&z).map(|v| v + cfg.offset);
        samples.push(Sample { x, label });
    }
    Ok(Dataset {
        samples,
        num_classes: cfg.num_classes,
        seed: cfg.seed,
        config: cfg.clone(),
        basis,
    })
}

fn noise_stddevs(cfg: &DatasetConfig) -> Vec<f64> {
    let steps = cfg.noise_dims.saturating_sub(1).max(1) as f64;
    (0..cfg.noise_dims)
        .map(|r| cfg.noise_scale * (1.0 - cfg.noise_spread * r as f64 / steps))
        .collect()
}

/// Unit axes spread over half a turn in the first two signal coordinates.
fn class_axes(cfg: &DatasetConfig, phase: f64) -> Vec<Vec<f64>> {
    (0..cfg.num_classes)
        .map(|k| {
            let theta = phase + PI * k as f64 / cfg.num_classes as f64;
            let mut ax = vec![0.0; cfg.signal_dims];
            ax[0] = theta.cos();
            ax[1] = theta.sin();
            ax
        })
        .collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.config.d_in
    }

    /// Every third sample goes to the second part.
    pub fn split_validation(&self) -> (Dataset, Dataset) {
        let (mut train, mut val) = (self.clone(), self.clone());
        train.samples = Vec::new();
        val.samples = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            if i % 3 == 2 {
                val.samples.push(s.clone());
            } else {
                train.samples.push(s.clone());
            }
        }
        (train, val)
    }

    /// Covariance of the signal coordinates `B_sᵀ X` of one sample.
    fn signal_block_covariance(&self, x: &Mat) -> Result<Mat> {
        let cfg = &self.config;
        let bs = Mat::from_fn(cfg.signal_dims, cfg.d_in, |i, j| self.basis[(j, cfg.noise_dims + i)]);
        covariance(&bs.matmul(x))
    }

    /// Ratio between the smallest distance of class means and the largest
    /// within-class RMS spread, both measured on the signal-block covariance.
    pub fn signal_separation(&self) -> Result<f64> {
        let blocks: Vec<(usize, Vec<f64>)> = self
            .samples
            .iter()
            .map(|s| Ok((s.label, self.signal_block_covariance(&s.x)?.into_data())))
            .collect::<Result<_>>()?;
        let dim = blocks[0].1.len();
        let mut means = vec![vec![0.0; dim]; self.num_classes];
        let mut counts = vec![0usize; self.num_classes];
        for (y, b) in &blocks {
            counts[*y] += 1;
            means[*y].iter_mut().zip(b).for_each(|(m, v)| *m += v);
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let mut separation = f64::INFINITY;
        for i in 0..self.num_classes {
            for j in i + 1..self.num_classes {
                separation = separation.min(dist(&means[i], &means[j]));
            }
        }
        let mut spread = vec![0.0; self.num_classes];
        for (y, b) in &blocks {
            spread[*y] += dist(b, &means[*y]).powi(2);
        }
        let spread = spread
            .iter()
            .zip(&counts)
            .map(|(s, &c)| (s / c as f64).sqrt())
            .fold(0.0, f64::max);
        Ok(separation / spread)
    }
}
