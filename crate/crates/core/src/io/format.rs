//! `CRFT` binary container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "CRFT"
//! 4       2           format version, u16 LE (= 1)
//! 6       1           payload kind (1 tensor, 2 matrix, 3 Tucker factors, 4 adapter)
//! 7       1           dtype (1 = f64)
//! 8       8·k         extents, u64 LE, k fixed by the kind
//! ..      8·n         payload, f64 LE
//! end-8   8           CRC-64/XZ of every preceding byte, u64 LE
//! ```
//!
//! Extents per kind: tensor `I1 I2 I3`; matrix `rows cols`; factors and
//! adapter `I1 I2 I3 r1 r2 r3`. Payload order per kind: tensor data;
//! matrix data; factors `core, U1, U2, U3`; adapter
//! `W, R, core, U1, U2, U3, J1, J2, J3`. Every block is row-major.

use crc::{Crc, CRC_64_XZ};

use crate::adapter::CraftAdapter;
use crate::error::{CraftError, Result};
use crate::tensor::{Matrix, Tensor3};
use crate::tucker::TuckerFactors;

pub const MAGIC: &[u8; 4] = b"CRFT";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;
const HEADER_LEN: usize = 8;

pub(crate) const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    Tensor = 1,
    Matrix = 2,
    TuckerFactors = 3,
    Adapter = 4,
}

impl PayloadKind {
    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            1 => Self::Tensor,
            2 => Self::Matrix,
            3 => Self::TuckerFactors,
            4 => Self::Adapter,
            other => return Err(CraftError::Format(format!("unknown payload kind {other}"))),
        })
    }

    fn extent_count(self) -> usize {
        match self {
            Self::Tensor => 3,
            Self::Matrix => 2,
            Self::TuckerFactors | Self::Adapter => 6,
        }
    }
}

/// Anything that can live in a `CRFT` file.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Tensor(Tensor3),
    Matrix(Matrix),
    TuckerFactors(TuckerFactors),
    Adapter(CraftAdapter),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Tensor(_) => PayloadKind::Tensor,
            Payload::Matrix(_) => PayloadKind::Matrix,
            Payload::TuckerFactors(_) => PayloadKind::TuckerFactors,
            Payload::Adapter(_) => PayloadKind::Adapter,
        }
    }

    fn extents(&self) -> Vec<usize> {
        let tucker = |f: &TuckerFactors| {
            let mut e = f.dims().to_vec();
            e.extend(f.ranks().0);
            e
        };
        match self {
            Payload::Tensor(t) => t.dims().to_vec(),
            Payload::Matrix(m) => vec![m.rows(), m.cols()],
            Payload::TuckerFactors(f) => tucker(f),
            Payload::Adapter(a) => tucker(a.factors()),
        }
    }

    fn blocks(&self) -> Vec<&[f64]> {
        fn tucker(f: &TuckerFactors) -> Vec<&[f64]> {
            let mut v = vec![f.core().as_slice()];
            v.extend(f.factors().iter().map(Matrix::as_slice));
            v
        }
        match self {
            Payload::Tensor(t) => vec![t.as_slice()],
            Payload::Matrix(m) => vec![m.as_slice()],
            Payload::TuckerFactors(f) => tucker(f),
            Payload::Adapter(a) => {
                let mut v = vec![a.w_original().as_slice(), a.r_initial().as_slice()];
                v.extend(tucker(a.factors()));
                v.extend(a.adaptations().iter().map(Matrix::as_slice));
                v
            }
        }
    }
}

pub fn encode(payload: &Payload) -> Vec<u8> {
    let extents = payload.extents();
    let blocks = payload.blocks();
    let n: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (extents.len() + n + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(payload.kind() as u8);
    out.push(DTYPE_F64);
    for e in extents {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for block in blocks {
        for x in block {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = CRC64.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

/// Sizes of each payload block for a kind and its extents.
fn block_sizes(kind: PayloadKind, e: &[usize]) -> Option<Vec<usize>> {
    let prod = |xs: &[usize]| xs.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
    Some(match kind {
        PayloadKind::Tensor => vec![prod(e)?],
        PayloadKind::Matrix => vec![prod(e)?],
        PayloadKind::TuckerFactors | PayloadKind::Adapter => {
            let dense = prod(&e[..3])?;
            let mut sizes = Vec::new();
            if kind == PayloadKind::Adapter {
                sizes.extend([dense, dense]);
            }
            sizes.push(prod(&e[3..])?);
            for n in 0..3 {
                sizes.push(e[n].checked_mul(e[n + 3])?);
            }
            if kind == PayloadKind::Adapter {
                for n in 3..6 {
                    sizes.push(e[n].checked_mul(e[n])?);
                }
            }
            sizes
        }
    })
}

pub fn decode(bytes: &[u8]) -> Result<Payload> {
    if bytes.len() < HEADER_LEN + 8 {
        return Err(CraftError::Format(format!(
            "file too short ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(CraftError::Format("bad magic, expected CRFT".into()));
    }
    let body_len = bytes.len() - 8;
    let stored = read_u64(bytes, body_len);
    let computed = CRC64.checksum(&bytes[..body_len]);
    if stored != computed {
        return Err(CraftError::Checksum { stored, computed });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(CraftError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let kind = PayloadKind::from_code(bytes[6])?;
    if bytes[7] != DTYPE_F64 {
        return Err(CraftError::Format(format!(
            "unsupported dtype code {}",
            bytes[7]
        )));
    }

    let k = kind.extent_count();
    let ext_end = HEADER_LEN + 8 * k;
    if body_len < ext_end {
        return Err(CraftError::Format("truncated extents".into()));
    }
    let extents = (0..k)
        .map(|i| {
            usize::try_from(read_u64(bytes, HEADER_LEN + 8 * i))
                .ok()
                .filter(|&e| e > 0)
                .ok_or_else(|| CraftError::Format(format!("extent {i} is zero or too large")))
        })
        .collect::<Result<Vec<_>>>()?;
    let sizes =
        block_sizes(kind, &extents).ok_or_else(|| CraftError::Format("extents overflow".into()))?;
    let total = sizes
        .iter()
        .try_fold(0usize, |a, &b| a.checked_add(b))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| CraftError::Format("extents overflow".into()))?;
    if body_len - ext_end != total {
        return Err(CraftError::Format(format!(
            "payload holds {} bytes, extents {extents:?} need {total}",
            body_len - ext_end
        )));
    }

    let mut offset = ext_end;
    let mut blocks = sizes.iter().map(|&len| {
        let block: Vec<f64> = bytes[offset..offset + 8 * len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += 8 * len;
        block
    });
    let mut next = || blocks.next().expect("block count follows kind");

    let e = &extents;
    Ok(match kind {
        PayloadKind::Tensor => Payload::Tensor(Tensor3::new([e[0], e[1], e[2]], next())?),
        PayloadKind::Matrix => Payload::Matrix(Matrix::new(e[0], e[1], next())?),
        PayloadKind::TuckerFactors => Payload::TuckerFactors(decode_factors(e, &mut next)?),
        PayloadKind::Adapter => {
            let dims = [e[0], e[1], e[2]];
            let w = Tensor3::new(dims, next())?;
            let r = Tensor3::new(dims, next())?;
            let factors = decode_factors(e, &mut next)?;
            let js = [
                Matrix::new(e[3], e[3], next())?,
                Matrix::new(e[4], e[4], next())?,
                Matrix::new(e[5], e[5], next())?,
            ];
            Payload::Adapter(CraftAdapter::from_parts(w, r, factors, js)?)
        }
    })
}

fn decode_factors(e: &[usize], next: &mut impl FnMut() -> Vec<f64>) -> Result<TuckerFactors> {
    let core = Tensor3::new([e[3], e[4], e[5]], next())?;
    let u = [
        Matrix::new(e[0], e[3], next())?,
        Matrix::new(e[1], e[4], next())?,
        Matrix::new(e[2], e[5], next())?,
    ];
    TuckerFactors::from_parts(core, u)
}

fn wrong_kind(expected: PayloadKind, got: &Payload) -> CraftError {
    CraftError::Format(format!(
        "expected payload kind {} ({expected:?}), found {} ({:?})",
        expected as u8,
        got.kind() as u8,
        got.kind()
    ))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor3> {
    match decode(bytes)? {
        Payload::Tensor(t) => Ok(t),
        other => Err(wrong_kind(PayloadKind::Tensor, &other)),
    }
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    match decode(bytes)? {
        Payload::Matrix(m) => Ok(m),
        other => Err(wrong_kind(PayloadKind::Matrix, &other)),
    }
}

pub fn decode_factors_file(bytes: &[u8]) -> Result<TuckerFactors> {
    match decode(bytes)? {
        Payload::TuckerFactors(f) => Ok(f),
        other => Err(wrong_kind(PayloadKind::TuckerFactors, &other)),
    }
}

pub fn decode_adapter(bytes: &[u8]) -> Result<CraftAdapter> {
    match decode(bytes)? {
        Payload::Adapter(a) => Ok(a),
        other => Err(wrong_kind(PayloadKind::Adapter, &other)),
    }
}
