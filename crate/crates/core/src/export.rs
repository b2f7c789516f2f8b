//! Report writers: 8-bit PGM images and CSV traces.

use std::io::Write;

use crate::attribution::PerturbTrace;
use crate::error::Result;
use crate::linalg::Mat;

/// Binary (`P5`) 8-bit PGM with linear min–max normalization to `[0, 255]`.
/// A constant matrix maps to all zeros.
pub fn write_pgm<W: Write>(mut w: W, m: &Mat) -> Result<()> {
    let lo = m.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = m.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    write!(w, "P5\n{} {}\n255\n", m.cols(), m.rows())?;
    let bytes: Vec<u8> = m
        .data()
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// `step,loss`
pub fn write_perturb_csv<W: Write>(mut w: W, trace: &PerturbTrace) -> Result<()> {
    writeln!(w, "step,loss")?;
    for (i, loss) in trace.loss_history.iter().enumerate() {
        writeln!(w, "{i},{loss:.12e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout() {
        let m = Mat::from_rows(&[vec![0.0, 1.0, 2.0], vec![4.0, 3.0, 0.5]]).unwrap();
        let mut out = Vec::new();
        write_pgm(&mut out, &m).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&out[..header.len()], header);
        assert_eq!(&out[header.len()..], &[0, 64, 128, 255, 191, 32]);

        let mut flat = Vec::new();
        write_pgm(&mut flat, &Mat::zeros(1, 2)).unwrap();
        assert_eq!(&flat[flat.len() - 2..], &[0, 0]);
    }
}
