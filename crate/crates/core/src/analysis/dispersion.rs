use std::fmt::Write as _;

use crate::error::{CraftError, Result};
use crate::linalg::symmetric_eig;
use crate::tensor::{dot, Matrix};

/// Attention projection whose rows are analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectionKind {
    Q,
    K,
    V,
}

impl ProjectionKind {
    pub const ALL: [ProjectionKind; 3] = [ProjectionKind::Q, ProjectionKind::K, ProjectionKind::V];

    pub fn name(self) -> &'static str {
        match self {
            ProjectionKind::Q => "Q",
            ProjectionKind::K => "K",
            ProjectionKind::V => "V",
        }
    }
}

/// Query, key and value weights of one layer, each `d_out x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProjections {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl LayerProjections {
    pub fn get(&self, kind: ProjectionKind) -> &Matrix {
        match kind {
            ProjectionKind::Q => &self.q,
            ProjectionKind::K => &self.k,
            ProjectionKind::V => &self.v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDispersion {
    /// Indexed by [`ProjectionKind::ALL`] order.
    pub sigma: [f64; 3],
    /// Top-`k` eigenvalue mass over the covariance trace; 0 when all pooled
    /// rows coincide.
    pub explained_variance_ratio: f64,
    /// Mean of all pooled rows, length `d_in`.
    pub pooled_mean: Vec<f64>,
    /// `d_in x k`, orthonormal columns.
    pub basis: Matrix,
}

impl LayerDispersion {
    pub fn sigma_of(&self, kind: ProjectionKind) -> f64 {
        self.sigma[kind as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionReport {
    pub k: usize,
    pub layers: Vec<LayerDispersion>,
}

/// Pooled-PCA dispersion of each projection type, layer by layer.
///
/// Rows of Q, K and V are pooled, centred on their common mean and the
/// sample covariance (`1/(m-1)`) is diagonalised. For each projection the
/// dispersion is the root mean over its `d_out` rows of the squared norm of
/// the centred row projected onto the leading `k` eigenvectors.
pub fn dispersion(layers: &[LayerProjections], k: usize) -> Result<DispersionReport> {
    let layers = layers
        .iter()
        .enumerate()
        .map(|(l, layer)| layer_dispersion(l, layer, k))
        .collect::<Result<_>>()?;
    Ok(DispersionReport { k, layers })
}

fn layer_dispersion(index: usize, layer: &LayerProjections, k: usize) -> Result<LayerDispersion> {
    let d_in = layer.q.cols();
    for kind in ProjectionKind::ALL {
        let m = layer.get(kind);
        if m.rows() == 0 || m.cols() == 0 {
            return Err(CraftError::Empty("projection weight matrix"));
        }
        if m.cols() != d_in {
            return Err(CraftError::DimensionMismatch(format!(
                "layer {index}: {} has d_in {} but Q has {d_in}",
                kind.name(),
                m.cols()
            )));
        }
    }
    if k == 0 || k > d_in {
        return Err(CraftError::InvalidParameter {
            name: "k",
            reason: format!("{k} not in 1..={d_in}"),
        });
    }

    let pooled: Vec<&[f64]> = ProjectionKind::ALL
        .iter()
        .flat_map(|&kind| {
            let m = layer.get(kind);
            (0..m.rows()).map(move |i| m.row(i))
        })
        .collect();
    let m = pooled.len();
    if pooled.iter().all(|row| *row == pooled[0]) {
        return Ok(LayerDispersion {
            sigma: [0.0; 3],
            explained_variance_ratio: 0.0,
            pooled_mean: pooled[0].to_vec(),
            basis: Matrix::from_fn(d_in, k, |i, j| (i == j) as u8 as f64),
        });
    }
    let mut mean = vec![0.0; d_in];
    for row in &pooled {
        for (a, x) in mean.iter_mut().zip(*row) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);

    let mut cov = vec![0.0; d_in * d_in];
    let mut centred = vec![0.0; d_in];
    for row in &pooled {
        for (c, (x, mu)) in centred.iter_mut().zip(row.iter().zip(&mean)) {
            *c = x - mu;
        }
        for i in 0..d_in {
            for j in i..d_in {
                cov[i * d_in + j] += centred[i] * centred[j];
            }
        }
    }
    let denom = (m - 1) as f64;
    for i in 0..d_in {
        for j in i..d_in {
            let v = cov[i * d_in + j] / denom;
            cov[i * d_in + j] = v;
            cov[j * d_in + i] = v;
        }
    }
    let eig = symmetric_eig(&Matrix::from_raw(d_in, d_in, cov))?;
    let basis = Matrix::from_fn(d_in, k, |i, j| eig.eigenvectors.get(i, j));
    let trace: f64 = eig.eigenvalues.iter().sum();
    let explained_variance_ratio = if trace > 0.0 {
        (eig.eigenvalues[..k].iter().sum::<f64>() / trace).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let columns: Vec<Vec<f64>> = (0..k).map(|j| basis.column(j)).collect();
    let mut sigma = [0.0; 3];
    for (slot, kind) in sigma.iter_mut().zip(ProjectionKind::ALL) {
        let w = layer.get(kind);
        let mut total = 0.0;
        for i in 0..w.rows() {
            for (c, (x, mu)) in centred.iter_mut().zip(w.row(i).iter().zip(&mean)) {
                *c = x - mu;
            }
            total += columns
                .iter()
                .map(|p| dot(p, &centred).powi(2))
                .sum::<f64>();
        }
        *slot = (total / w.rows() as f64).sqrt();
    }
    Ok(LayerDispersion {
        sigma,
        explained_variance_ratio,
        pooled_mean: mean,
        basis,
    })
}

impl DispersionReport {
    /// One `dispersion` record per (layer, projection):
    /// `dispersion layer=<l> proj=<Q|K|V> k=<k> sigma=<f64> evr=<f64>`.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for kind in ProjectionKind::ALL {
                let _ = writeln!(
                    s,
                    "dispersion layer={l} proj={} k={} sigma={:?} evr={:?}",
                    kind.name(),
                    self.k,
                    layer.sigma_of(kind),
                    layer.explained_variance_ratio
                );
            }
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>5}  {:>12}  {:>12}  {:>12}  {:>8}\n",
            "layer", "sigma_Q", "sigma_K", "sigma_V", "evr"
        );
        for (l, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(
                s,
                "{l:>5}  {:>12.6}  {:>12.6}  {:>12.6}  {:>8.4}",
                layer.sigma[0], layer.sigma[1], layer.sigma[2], layer.explained_variance_ratio
            );
        }
        s
    }
}
