//! Numerical laboratory for vector-valued square functions of diffusion
//! semigroups: subordinated Poisson families on the torus, the line and the
//! plane, the Ornstein-Uhlenbeck family on Gaussian domains, dyadic
//! martingale square functions, and the kernel bounds that tie them together.
//!
//! The crate is organized bottom-up: `grid` holds domains, values and norms;
//! `semigroup` the kernels and actions; `gfun` the square-function operators;
//! `martingale` the dyadic side; `kernelcheck` and `normlab` the verification
//! and estimation layers. `acceptance` bundles the end-to-end checks that the
//! `lpslab verify` subcommand and the integration tests share.

pub mod acceptance;
pub mod gfun;
pub mod grid;
pub mod kernelcheck;
pub mod martingale;
pub mod normlab;
pub mod semigroup;
pub mod synth;

use std::io::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum LpsError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LpsError>;

/// Write `bytes` to `path` atomically: temp file in the same directory, then
/// rename. Readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut fh = std::fs::File::create(&tmp)?;
        fh.write_all(bytes)?;
        fh.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    let _ = dir;
    Ok(())
}
