use std::fmt::Write as _;

use crate::error::Result;
use crate::tucker::{compression_counts, CompressionCounts, TuckerRanks};

/// Storage needed for adapted projections in dense versus factored form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageReport {
    pub dims: [usize; 3],
    pub ranks: TuckerRanks,
    pub n_projections: usize,
    pub per_projection: CompressionCounts,
    pub dense_total: usize,
    pub factor_total: usize,
    /// `dense_total / factor_total`.
    pub ratio: f64,
    /// False when the factored form is not smaller.
    pub saves_storage: bool,
    /// Scalars held only while training: the original tensor and its initial
    /// reconstruction, per projection.
    pub training_buffer_scalars: usize,
}

pub fn storage_report(
    dims: [usize; 3],
    ranks: TuckerRanks,
    n_projections: usize,
) -> Result<StorageReport> {
    let per_projection = compression_counts(dims, ranks)?;
    let dense_total = per_projection.dense * n_projections;
    let factor_total = per_projection.factor * n_projections;
    Ok(StorageReport {
        dims,
        ranks,
        n_projections,
        per_projection,
        dense_total,
        factor_total,
        ratio: per_projection.ratio(),
        saves_storage: factor_total < dense_total,
        training_buffer_scalars: 2 * dense_total,
    })
}

impl StorageReport {
    /// Single `storage` record with fields in this order:
    /// `dims ranks projections dense factor ratio savings training_buffers`.
    pub fn to_record(&self) -> String {
        let [i1, i2, i3] = self.dims;
        let [r1, r2, r3] = self.ranks.0;
        format!(
            "storage dims={i1}x{i2}x{i3} ranks={r1},{r2},{r3} projections={} dense={} factor={} \
             ratio={:?} savings={} training_buffers={}\n",
            self.n_projections,
            self.dense_total,
            self.factor_total,
            self.ratio,
            if self.saves_storage { "yes" } else { "no" },
            self.training_buffer_scalars
        )
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tensor dims           {:?}", self.dims);
        let _ = writeln!(s, "tucker ranks          {:?}", self.ranks.0);
        let _ = writeln!(s, "projections           {}", self.n_projections);
        let _ = writeln!(s, "dense scalars         {}", self.dense_total);
        let _ = writeln!(s, "factored scalars      {}", self.factor_total);
        let _ = writeln!(s, "compression ratio     {:.3}x", self.ratio);
        if !self.saves_storage {
            let _ = writeln!(
                s,
                "NO SAVINGS: factored form is not smaller than dense storage"
            );
        }
        let _ = writeln!(
            s,
            "note: training also holds W and R ({} scalars) which are not stored",
            self.training_buffer_scalars
        );
        s
    }
}
