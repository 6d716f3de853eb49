//! Truncated higher-order SVD (Tucker-3) of a stacked weight tensor.

use crate::error::{CraftError, Result};
use crate::linalg::leading_left_vectors;
use crate::tensor::{Matrix, Tensor3};

/// Orthonormality tolerance accepted for factor matrices read back from disk.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;

/// Multilinear rank `(r1, r2, r3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TuckerRanks(pub [usize; 3]);

impl TuckerRanks {
    pub fn new(r1: usize, r2: usize, r3: usize) -> Self {
        Self([r1, r2, r3])
    }

    pub fn as_array(&self) -> [usize; 3] {
        self.0
    }

    /// Checks `1 <= r_n <= I_n` for every mode.
    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        for (n, (&r, &extent)) in self.0.iter().zip(&dims).enumerate() {
            if r == 0 || r > extent {
                return Err(CraftError::RankOutOfRange {
                    mode: n + 1,
                    rank: r,
                    max: extent,
                });
            }
        }
        Ok(())
    }

    /// `r1² + r2² + r3²`.
    pub fn square_sum(&self) -> usize {
        self.0.iter().map(|r| r * r).sum()
    }
}

/// Core tensor and orthonormal factor matrices of a Tucker-3 decomposition.
///
/// Instances only come out of [`hosvd`] (or a validated file read) and expose
/// no mutating methods.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    core: Tensor3,
    factors: [Matrix; 3],
    ranks: TuckerRanks,
}

impl TuckerFactors {
    /// Reassembles factors, checking shapes and orthonormality.
    pub(crate) fn from_parts(core: Tensor3, factors: [Matrix; 3]) -> Result<Self> {
        let ranks = TuckerRanks(core.dims());
        for (n, u) in factors.iter().enumerate() {
            if u.cols() != ranks.0[n] {
                return Err(CraftError::DimensionMismatch(format!(
                    "factor {} has {} columns, core extent is {}",
                    n + 1,
                    u.cols(),
                    ranks.0[n]
                )));
            }
            let defect = u.orthonormality_defect();
            if defect > ORTHONORMALITY_TOLERANCE {
                return Err(CraftError::InvalidParameter {
                    name: "factor",
                    reason: format!(
                        "factor {} columns not orthonormal (defect {defect:e})",
                        n + 1
                    ),
                });
            }
        }
        ranks.validate([factors[0].rows(), factors[1].rows(), factors[2].rows()])?;
        Ok(Self {
            core,
            factors,
            ranks,
        })
    }

    pub fn core(&self) -> &Tensor3 {
        &self.core
    }

    /// Factor matrix for `mode` (1, 2 or 3), shape `I_n x r_n`.
    pub fn factor(&self, mode: usize) -> &Matrix {
        &self.factors[mode - 1]
    }

    pub fn factors(&self) -> &[Matrix; 3] {
        &self.factors
    }

    pub fn ranks(&self) -> TuckerRanks {
        self.ranks
    }

    /// Extents `(I1, I2, I3)` of the decomposed tensor.
    pub fn dims(&self) -> [usize; 3] {
        [
            self.factors[0].rows(),
            self.factors[1].rows(),
            self.factors[2].rows(),
        ]
    }
}

/// `core ×₁ a[0] ×₂ a[1] ×₃ a[2]`, always in that order.
///
/// Both the frozen reconstruction and the adapted reconstruction go through
/// here so that identical factors give bitwise-identical tensors.
pub(crate) fn multilinear_product(core: &Tensor3, a: [&Matrix; 3]) -> Result<Tensor3> {
    core.mode_n_product(a[0], 1)?
        .mode_n_product(a[1], 2)?
        .mode_n_product(a[2], 3)
}

/// Plain (single-pass) truncated HOSVD.
///
/// `U_n` holds the leading `r_n` left singular vectors of the mode-n
/// unfolding, and the core is `w ×₁ U1ᵀ ×₂ U2ᵀ ×₃ U3ᵀ`.
pub fn hosvd(w: &Tensor3, ranks: TuckerRanks) -> Result<TuckerFactors> {
    ranks.validate(w.dims())?;
    let mut factors = Vec::with_capacity(3);
    for mode in 1..=3 {
        let unfolded = w.unfold(mode)?;
        let svd =
            leading_left_vectors(&unfolded, ranks.0[mode - 1]).map_err(|e| e.with_mode(mode))?;
        factors.push(svd.left_vectors);
    }
    let factors: [Matrix; 3] = factors.try_into().expect("three modes");
    let core = w
        .mode_n_product(&factors[0].transpose(), 1)?
        .mode_n_product(&factors[1].transpose(), 2)?
        .mode_n_product(&factors[2].transpose(), 3)?;
    Ok(TuckerFactors {
        core,
        factors,
        ranks,
    })
}

/// `core ×₁ U1 ×₂ U2 ×₃ U3`.
pub fn reconstruct(f: &TuckerFactors) -> Tensor3 {
    multilinear_product(&f.core, [&f.factors[0], &f.factors[1], &f.factors[2]])
        .expect("factor shapes are validated at construction")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationError {
    pub absolute: f64,
    /// `absolute / ‖w‖_F`, or 0 when `w` is the zero tensor.
    pub relative: f64,
}

pub fn approximation_error(w: &Tensor3, f: &TuckerFactors) -> Result<ApproximationError> {
    if w.dims() != f.dims() {
        return Err(CraftError::DimensionMismatch(format!(
            "tensor {:?} vs factors for {:?}",
            w.dims(),
            f.dims()
        )));
    }
    let absolute = w.sub(&reconstruct(f))?.frobenius_norm();
    let norm = w.frobenius_norm();
    let relative = if norm == 0.0 { 0.0 } else { absolute / norm };
    Ok(ApproximationError { absolute, relative })
}

/// Parameter counts of the dense tensor versus its adapted Tucker form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressionCounts {
    /// `I1 · I2 · I3`.
    pub dense: usize,
    /// Factor matrices, core and the three square adaptation matrices.
    pub factor: usize,
}

impl CompressionCounts {
    pub fn ratio(&self) -> f64 {
        self.dense as f64 / self.factor as f64
    }
}

pub fn compression_counts(dims: [usize; 3], ranks: TuckerRanks) -> Result<CompressionCounts> {
    ranks.validate(dims)?;
    let [r1, r2, r3] = ranks.0;
    let factor_matrices: usize = dims.iter().zip(&ranks.0).map(|(i, r)| i * r).sum();
    Ok(CompressionCounts {
        dense: dims.iter().product(),
        factor: factor_matrices + r1 * r2 * r3 + ranks.square_sum(),
    })
}
