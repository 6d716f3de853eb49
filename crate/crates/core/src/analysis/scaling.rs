use std::fmt::Write as _;

use crate::adapter::trainable_param_count;
use crate::tucker::TuckerRanks;

/// Fine-tuning schemes compared by trainable-parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    FullFineTune,
    Lora,
    Pissa,
    Lotr,
    Craft,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::FullFineTune,
        Method::Lora,
        Method::Pissa,
        Method::Lotr,
        Method::Craft,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::FullFineTune => "full",
            Method::Lora => "lora",
            Method::Pissa => "pissa",
            Method::Lotr => "lotr",
            Method::Craft => "craft",
        }
    }
}

/// Rank settings shared by every row of a table.
///
/// All adapted matrices are square `d x d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalingSettings {
    /// Rank of LoRA and PiSSA updates.
    pub matrix_rank: usize,
    pub lotr_rank: usize,
    pub craft_ranks: TuckerRanks,
    pub n_projections: usize,
}

impl Default for ScalingSettings {
    fn default() -> Self {
        Self {
            matrix_rank: 8,
            lotr_rank: 8,
            craft_ranks: TuckerRanks::new(24, 100, 100),
            n_projections: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalingRow {
    pub method: Method,
    pub n_layers: usize,
    pub d: usize,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalingTable {
    pub settings: ScalingSettings,
    pub rows: Vec<ScalingRow>,
}

/// Exact trainable-parameter count of one method at one model size.
pub fn method_params(method: Method, n_layers: usize, d: usize, s: &ScalingSettings) -> u64 {
    let (l, d, np) = (n_layers as u64, d as u64, s.n_projections as u64);
    match method {
        Method::FullFineTune => l * d * d * np,
        Method::Lora | Method::Pissa => l * s.matrix_rank as u64 * (d + d) * np,
        Method::Lotr => {
            let r = s.lotr_rank as u64;
            (l * r * r + r * (d + d)) * np
        }
        Method::Craft => trainable_param_count(s.craft_ranks, s.n_projections) as u64,
    }
}

/// Rows ordered by method, then `d`, then depth, in the order given.
pub fn param_scaling(
    methods: &[Method],
    n_layers: &[usize],
    d_values: &[usize],
    settings: ScalingSettings,
) -> ScalingTable {
    let mut rows = Vec::with_capacity(methods.len() * n_layers.len() * d_values.len());
    for &method in methods {
        for &d in d_values {
            for &l in n_layers {
                rows.push(ScalingRow {
                    method,
                    n_layers: l,
                    d,
                    params: method_params(method, l, d, &settings),
                });
            }
        }
    }
    ScalingTable { settings, rows }
}

impl ScalingTable {
    /// One record per row: `scaling method=<id> n_layers=<N_L> d=<d> params=<count>`.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "scaling method={} n_layers={} d={} params={}",
                r.method.id(),
                r.n_layers,
                r.d,
                r.params
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<6}  {:>8}  {:>6}  {:>14}\n",
            "method", "n_layers", "d", "params"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6}  {:>8}  {:>6}  {:>14}",
                r.method.id(),
                r.n_layers,
                r.d,
                r.params
            );
        }
        s
    }
}
