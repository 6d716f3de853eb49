//! File formats: the `CRFT` binary container, run configs and atomic writes.

mod config;
mod format;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use config::{Projection, RunConfig};
pub use format::{
    decode, decode_adapter, decode_factors_file, decode_matrix, decode_tensor, encode, Payload,
    PayloadKind, DTYPE_F64, FORMAT_VERSION, MAGIC,
};

use crate::error::Result;

/// CRC-64/XZ over the little-endian bytes of several `f64` blocks.
pub fn checksum_f64(blocks: &[&[f64]]) -> u64 {
    let mut digest = format::CRC64.digest();
    for block in blocks {
        for x in *block {
            digest.update(&x.to_le_bytes());
        }
    }
    digest.finalize()
}

/// Writes via a sibling temp file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_payload(path: &Path, payload: &Payload) -> Result<()> {
    write_atomic(path, &encode(payload))
}

pub fn read_payload(path: &Path) -> Result<Payload> {
    decode(&fs::read(path)?)
}
