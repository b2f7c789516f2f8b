//! SPM1 binary matrix files: `b"SPM1"`, rows (u32 LE), cols (u32 LE), then
//! `rows * cols` f64 LE values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Mat;
use crate::error::{bail, Result};

pub const SPM_MAGIC: &[u8; 4] = b"SPM1";

pub fn write_spm<W: Write>(mut w: W, m: &Mat) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| crate::Error::Format("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| crate::Error::Format("too many cols".into()))?;
    w.write_all(SPM_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spm<R: Read>(mut r: R) -> Result<Mat> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SPM_MAGIC {
        bail!(Format, "bad magic {magic:?}");
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;

    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| crate::Error::Format("dimension overflow".into()))?;
    let mut data = Vec::with_capacity(len.min(1 << 24));
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        bail!(Format, "{} trailing bytes", rest.len());
    }
    Mat::new(rows, cols, data)
}

pub fn save_spm(path: impl AsRef<Path>, m: &Mat) -> Result<()> {
    write_spm(BufWriter::new(File::create(path)?), m)
}

pub fn load_spm(path: impl AsRef<Path>) -> Result<Mat> {
    read_spm(BufReader::new(File::open(path)?))
}
