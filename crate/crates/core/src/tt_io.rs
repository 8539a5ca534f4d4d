//! TT tensor file format "TTPDF1".
//!
//! Layout:
//! - 7 bytes magic `b"TTPDF1\n"`,
//! - little-endian `u64` JSON header length,
//! - JSON header: `{"d", "ranks", "grid"}` with `ranks = [r_0..r_d]` and
//!   `grid` the per-dimension node arrays,
//! - block payload: cores in dimension order, each row-major in
//!   `(left, node, right)`, entries as little-endian `f64`.

use crate::scalar::Scalar;
use crate::tt::{Core, Grid, TtTensor};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

const MAGIC: &[u8; 7] = b"TTPDF1\n";

#[derive(Debug, Error)]
pub enum TtIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a TTPDF1 file")]
    BadMagic,
    #[error("header error: {0}")]
    Header(#[from] serde_json::Error),
    #[error("inconsistent header: {0}")]
    Inconsistent(String),
    #[error("tt error: {0}")]
    Tt(#[from] crate::tt::TtError),
}

#[derive(Serialize, Deserialize)]
struct Header {
    d: usize,
    ranks: Vec<usize>,
    grid: Vec<Vec<f64>>,
}

/// Writes `tt` in TTPDF1 format.
pub fn write_tt<T: Scalar, W: Write>(tt: &TtTensor<T>, mut w: W) -> Result<(), TtIoError> {
    let header = Header {
        d: tt.dim(),
        ranks: tt.ranks(),
        grid: (0..tt.dim())
            .map(|k| tt.grid().nodes(k).iter().map(|v| v.to_f64_lossy()).collect())
            .collect(),
    };
    let hbytes = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(hbytes.len() as u64).to_le_bytes())?;
    w.write_all(&hbytes)?;
    for k in 0..tt.dim() {
        for &v in &tt.core(k).data {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a TTPDF1 file.
pub fn read_tt<T: Scalar, R: Read>(mut r: R) -> Result<TtTensor<T>, TtIoError> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TtIoError::BadMagic);
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let hlen = u64::from_le_bytes(len) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes)?;
    let header: Header = serde_json::from_slice(&hbytes)?;
    if header.ranks.len() != header.d + 1 || header.grid.len() != header.d {
        return Err(TtIoError::Inconsistent("ranks/grid length".into()));
    }
    let grid = Grid::from_nodes(
        header
            .grid
            .iter()
            .map(|xs| xs.iter().map(|&v| T::from_f64_lossy(v)).collect())
            .collect(),
    )?;
    let mut cores = Vec::with_capacity(header.d);
    for k in 0..header.d {
        let (l, n, rt) = (header.ranks[k], grid.size(k), header.ranks[k + 1]);
        let mut data = Vec::with_capacity(l * n * rt);
        let mut buf = [0u8; 8];
        for _ in 0..l * n * rt {
            r.read_exact(&mut buf)?;
            data.push(T::from_f64_lossy(f64::from_le_bytes(buf)));
        }
        cores.push(Core::from_data(l, n, rt, data));
    }
    Ok(TtTensor::new(grid, cores)?)
}
