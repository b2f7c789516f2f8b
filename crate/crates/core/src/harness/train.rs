//! Mini-batch SGD with momentum, accuracy evaluation and subset inference.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::diagnostics::{condition_number_of, median};
use crate::error::{bail, Error, Result};
use crate::gcp::{EigenSubset, GcpConfig};
use crate::harness::dataset::Dataset;
use crate::harness::model::{argmax, model_backward, model_forward, model_forward_subset, softmax_cross_entropy, ToyModel};
use crate::harness::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Learning-rate multiplier for the channel projection.
    pub proj_lr_scale: f64,
    /// Projected channel count `d`.
    pub d: usize,
    pub seed: u64,
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.2,
            momentum: 0.9,
            batch_size: 10,
            proj_lr_scale: 0.03,
            d: 8,
            seed: 0,
            snapshot_every: 10,
        }
    }
}

/// Pooled-covariance spectra of every training sample at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSnapshot {
    pub epoch: usize,
    pub spectra: Vec<Vec<f64>>,
    /// Median condition number over samples (`+∞` for rank-deficient ones).
    pub median_kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub snapshots: Vec<SpectrumSnapshot>,
}

impl TrainReport {
    pub fn final_train_accuracy(&self) -> f64 {
        self.train_accuracy.last().copied().unwrap_or(f64::NAN)
    }

    pub fn kappa_series(&self) -> Vec<(usize, f64)> {
        self.snapshots.iter().map(|s| (s.epoch, s.median_kappa)).collect()
    }

    /// `epoch,loss,train_acc,val_acc,median_kappa` (κ empty between snapshots).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,loss,train_acc,val_acc,median_kappa")?;
        for e in 0..self.epoch_loss.len() {
            let kappa = self
                .snapshots
                .iter()
                .find(|s| s.epoch == e + 1)
                .map(|s| format!("{:e}", s.median_kappa))
                .unwrap_or_default();
            writeln!(
                w,
                "{},{:.12e},{:.6},{:.6},{}",
                e + 1,
                self.epoch_loss[e],
                self.train_accuracy[e],
                self.val_accuracy[e],
                kappa
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub report: TrainReport,
}

pub fn train(train_set: &Dataset, val_set: &Dataset, cfg: &GcpConfig, tc: &TrainConfig) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        bail!(Validation, "empty training set");
    }
    if tc.batch_size == 0 {
        bail!(Validation, "batch size must be positive");
    }
    let mut model = ToyModel::init(train_set.d_in(), tc.d, train_set.num_classes, tc.seed);
    let mut rng = seeded(tc.seed.wrapping_add(0x5eed));
    let mut velocity = vec![0.0; model.param_count()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(tc.epochs),
        train_accuracy: Vec::with_capacity(tc.epochs),
        val_accuracy: Vec::with_capacity(tc.epochs),
        snapshots: Vec::new(),
    };
    report.snapshots.push(snapshot(&model, train_set, cfg, 0)?);

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let mut grad = vec![0.0; model.param_count()];
            for &idx in batch {
                let sample = &train_set.samples[idx];
                let (logits, cache) = model_forward(&model, &sample.x, cfg)
                    .map_err(|e| diagnose(e, epoch, idx, None))?;
                let (loss, d_logits) = softmax_cross_entropy(&logits, sample.label);
                if !loss.is_finite() {
                    return Err(diagnose(
                        Error::Numeric(format!("loss {loss}")),
                        epoch,
                        idx,
                        Some(cache.gcp.eig.lambda()),
                    ));
                }
                total_loss += loss;
                let g = model_backward(&model, &cache, &d_logits)?.to_flat();
                if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                    return Err(diagnose(
                        Error::Numeric(format!("non-finite gradient at parameter {bad}")),
                        epoch,
                        idx,
                        Some(cache.gcp.eig.lambda()),
                    ));
                }
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            let mut params = model.to_flat();
            let n_proj = model.proj.data().len();
            for (i, ((p, v), g)) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad).enumerate() {
                let lr = if i < n_proj { tc.lr * tc.proj_lr_scale } else { tc.lr };
                *v = tc.momentum * *v + g * scale;
                *p -= lr * *v;
            }
            model.set_flat(&params);
        }
        report.epoch_loss.push(total_loss / train_set.len() as f64);
        report.train_accuracy.push(accuracy(&model, train_set, cfg, EigenSubset::All)?);
        report.val_accuracy.push(if val_set.is_empty() {
            f64::NAN
        } else {
            accuracy(&model, val_set, cfg, EigenSubset::All)?
        });
        if tc.snapshot_every > 0 && (epoch % tc.snapshot_every == 0 || epoch == tc.epochs) {
            report.snapshots.push(snapshot(&model, train_set, cfg, epoch)?);
        }
    }
    Ok(TrainOutcome { model, report })
}

fn diagnose(err: Error, epoch: usize, sample: usize, spectrum: Option<&[f64]>) -> Error {
    let spectrum = spectrum.map(|s| format!(", spectrum {s:?}")).unwrap_or_default();
    Error::Numeric(format!("training aborted at epoch {epoch}, sample {sample}: {err}{spectrum}"))
}

fn snapshot(model: &ToyModel, ds: &Dataset, cfg: &GcpConfig, epoch: usize) -> Result<SpectrumSnapshot> {
    let spectra = pooled_spectra(model, ds, cfg)?;
    let kappas: Vec<f64> = spectra.iter().map(|s| condition_number_of(s).value).collect();
    Ok(SpectrumSnapshot { epoch, median_kappa: median(&kappas), spectra })
}

/// Eigenvalues of the pooled covariance `P` for every sample.
pub fn pooled_spectra(model: &ToyModel, ds: &Dataset, cfg: &GcpConfig) -> Result<Vec<Vec<f64>>> {
    ds.samples
        .iter()
        .map(|s| Ok(model_forward(model, &s.x, cfg)?.1.gcp.eig.lambda().to_vec()))
        .collect()
}

/// Fraction of samples classified correctly with only `subset` of the
/// eigenvalues kept at inference.
pub fn accuracy(model: &ToyModel, ds: &Dataset, cfg: &GcpConfig, subset: EigenSubset) -> Result<f64> {
    if ds.is_empty() {
        bail!(Validation, "accuracy of an empty dataset");
    }
    let mut correct = 0usize;
    for s in &ds.samples {
        let (logits, _) = model_forward_subset(model, &s.x, cfg, subset)?;
        if argmax(&logits) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetMode {
    /// Keep `λ_1 … λ_k` (rank-k truncation).
    Top,
    /// Keep `λ_1` plus the last `k` eigenvalues.
    FirstPlusSmall,
}

/// Accuracy for each `k` in `ks` under the chosen subset mode.
pub fn truncation_sweep(
    model: &ToyModel,
    ds: &Dataset,
    cfg: &GcpConfig,
    ks: &[usize],
    mode: SubsetMode,
) -> Result<Vec<(usize, f64)>> {
    ks.iter()
        .map(|&k| {
            let acc = match mode {
                SubsetMode::Top => accuracy(model, ds, &cfg.with_truncation(Some(k)), EigenSubset::All)?,
                SubsetMode::FirstPlusSmall => accuracy(model, ds, cfg, EigenSubset::FirstPlusLast(k))?,
            };
            Ok((k, acc))
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut w: W, mode: SubsetMode, rows: &[(usize, f64)]) -> Result<()> {
    let mode = match mode {
        SubsetMode::Top => "top",
        SubsetMode::FirstPlusSmall => "first-plus-small",
    };
    writeln!(w, "mode,k,accuracy")?;
    for (k, acc) in rows {
        writeln!(w, "{mode},{k},{acc:.6}")?;
    }
    Ok(())
}
