//! Spectrum analytics: condition numbers, Log-Euclidean distance, tail
//! energy and log₂ histograms.

use std::io::Write;

use crate::error::{bail, Result};
use crate::linalg::{sym_eig, Mat, SymEig};
use crate::spectral::{mat_fn, SpectralFn};

/// `λ_max / λ_min`. A spectrum with `λ_min ≤ 0` reports `+∞` with
/// `rank_deficient` set instead of failing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionNumber {
    pub value: f64,
    pub rank_deficient: bool,
}

pub fn condition_number(eig: &SymEig) -> ConditionNumber {
    condition_number_of(eig.lambda())
}

pub fn condition_number_of(lambda: &[f64]) -> ConditionNumber {
    let max = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return ConditionNumber { value: f64::INFINITY, rank_deficient: true };
    }
    ConditionNumber { value: max / min, rank_deficient: false }
}

/// `‖log P₁ − log P₂‖_F`
pub fn log_euclidean_dist(p1: &Mat, p2: &Mat) -> Result<f64> {
    if p1.shape() != p2.shape() {
        bail!(Dimension, "distance between {:?} and {:?}", p1.shape(), p2.shape());
    }
    let l1 = mat_fn(&sym_eig(p1)?, SpectralFn::Log)?;
    let l2 = mat_fn(&sym_eig(p2)?, SpectralFn::Log)?;
    Ok(l1.sub(&l2).fro_norm())
}

/// Share of the eigenvalue sum held by `λ_{t+1} … λ_d`.
pub fn energy_fraction(lambda: &[f64], t: usize) -> Result<f64> {
    if t > lambda.len() {
        bail!(Validation, "split {t} beyond spectrum of length {}", lambda.len());
    }
    if let Some(i) = lambda.iter().position(|&l| l < 0.0) {
        bail!(Domain, "negative eigenvalue λ[{i}] = {:e}", lambda[i]);
    }
    let total: f64 = lambda.iter().sum();
    if total == 0.0 {
        bail!(Numeric, "energy fraction of an all-zero spectrum is undefined");
    }
    Ok(lambda[t..].iter().sum::<f64>() / total)
}

/// Smallest split `t` whose tail holds less than `max_fraction` of the energy.
pub fn energy_split(lambda: &[f64], max_fraction: f64) -> Result<usize> {
    for t in 0..=lambda.len() {
        if energy_fraction(lambda, t)? < max_fraction {
            return Ok(t);
        }
    }
    Ok(lambda.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumHistogram {
    /// log₂-spaced, `counts.len() + 1` entries.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Eigenvalues `≤ 0`, which have no place on a log axis.
    pub underflow: usize,
}

impl SpectrumHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin,lower,upper,count")?;
        writeln!(w, "underflow,,0,{}", self.underflow)?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{i},{:e},{:e},{c}", self.bin_edges[i], self.bin_edges[i + 1])?;
        }
        Ok(())
    }
}

pub fn spectrum_histogram(spectra: &[Vec<f64>], bins: usize) -> Result<SpectrumHistogram> {
    if bins == 0 {
        bail!(Validation, "histogram needs at least one bin");
    }
    let values: Vec<f64> = spectra.iter().flatten().copied().collect();
    if values.is_empty() {
        bail!(Validation, "no eigenvalues to bin");
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite eigenvalue {v}");
    }
    let positive: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    let underflow = values.len() - positive.len();
    if positive.is_empty() {
        return Ok(SpectrumHistogram { bin_edges: vec![0.0; bins + 1], counts: vec![0; bins], underflow });
    }

    let mut lo = positive.iter().cloned().fold(f64::INFINITY, f64::min).log2();
    let mut hi = positive.iter().cloned().fold(f64::NEG_INFINITY, f64::max).log2();
    if hi - lo == 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let bin_edges = (0..=bins).map(|k| (lo + k as f64 * width).exp2()).collect();
    let mut counts = vec![0; bins];
    for v in positive {
        let pos = ((v.log2() - lo) / width).floor();
        let idx = (pos.max(0.0) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(SpectrumHistogram { bin_edges, counts, underflow })
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_numbers() {
        let e = sym_eig(&Mat::from_diag(&[100.0, 1.0])).unwrap();
        assert_eq!(condition_number(&e).value, 100.0);
        assert_eq!(condition_number(&sym_eig(&Mat::identity(3)).unwrap()).value, 1.0);
        let e = sym_eig(&Mat::from_diag(&[2.0, 0.0])).unwrap();
        let k = condition_number(&e);
        assert!(k.rank_deficient && k.value.is_infinite());
    }

    #[test]
    fn log_euclidean_examples() {
        let e = std::f64::consts::E;
        let d = log_euclidean_dist(&Mat::from_diag(&[e, 1.0]), &Mat::identity(2)).unwrap();
        assert!((d - 1.0).abs() < 1e-14);
        let p = Mat::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert!(log_euclidean_dist(&p, &p).unwrap() < 1e-15);
        assert!(matches!(
            log_euclidean_dist(&Mat::from_diag(&[1.0, 0.0]), &p),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn energy_fractions() {
        assert_eq!(energy_fraction(&[3.0, 1.0], 1).unwrap(), 0.25);
        assert_eq!(energy_fraction(&[3.0, 1.0], 2).unwrap(), 0.0);
        assert!(matches!(energy_fraction(&[0.0, 0.0], 1), Err(crate::Error::Numeric(_))));
        assert!(energy_fraction(&[1.0], 2).is_err());
        assert_eq!(energy_split(&[1.0, 1e-5, 1e-6], 1e-3).unwrap(), 1);
    }

    #[test]
    fn geometric_tail_is_below_a_thousandth() {
        let lambda: Vec<f64> = (1..=256).map(|i| 2f64.powi(-i)).collect();
        // tail Σ_{i>206} 2^{-i} ≈ 2^{-206} against a total ≈ 1
        let f = energy_fraction(&lambda, 206).unwrap();
        assert!(f < 1e-3);
        assert!((f - 2f64.powi(-206) / (1.0 - 2f64.powi(-256))).abs() < 1e-70);
    }

    #[test]
    fn histogram_examples() {
        let h = spectrum_histogram(&[vec![1.0, 2.0, 4.0]], 3).unwrap();
        assert_eq!(h.counts, vec![1, 1, 1]);
        assert_eq!(h.bin_edges.len(), 4);
        assert_eq!(h.bin_edges[0], 1.0);
        assert_eq!(h.bin_edges[3], 4.0);

        let h = spectrum_histogram(&[vec![0.0, 1.0], vec![1.0]], 2).unwrap();
        assert_eq!(h.underflow, 1);
        assert_eq!(h.total(), 3);
        assert!(spectrum_histogram(&[], 3).is_err());
        assert!(spectrum_histogram(&[vec![1.0]], 0).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
