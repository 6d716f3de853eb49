//! Residual-preserving adaptation on frozen Tucker factors.
//!
//! For a stacked weight tensor `W` with frozen HOSVD factors `(G, U1, U2, U3)`
//! and frozen reconstruction `R = G ×₁ U1 ×₂ U2 ×₃ U3`, the adapted tensor is
//!
//! ```text
//! T  = G ×₁ (U1 J1) ×₂ (U2 J2) ×₃ (U3 J3)
//! Ŵ  = W + (T − R)
//! ```
//!
//! where the square matrices `J1, J2, J3` are the only trainable state.
//! `T` and `R` are produced by the same routine, so with `J_n = I` the
//! difference is exactly zero and `Ŵ == W` bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CraftError, Result};
use crate::io::checksum_f64;
use crate::tensor::{Matrix, Tensor3};
use crate::tucker::{hosvd, multilinear_product, reconstruct, TuckerFactors, TuckerRanks};

/// Near-identity initialisation `J = I + ε·E`, `E_ij ~ N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub epsilon: f64,
    pub sigma: f64,
    /// Seeds a ChaCha8 stream; J1, J2, J3 are drawn in that order, row-major.
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            sigma: 0.02,
            seed: 0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("sigma", self.sigma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(CraftError::InvalidParameter {
                    name,
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Gradients of a scalar loss with respect to `J1, J2, J3`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads(pub [Matrix; 3]);

impl AdapterGrads {
    pub fn get(&self, mode: usize) -> &Matrix {
        &self.0[mode - 1]
    }

    pub fn add(&self, other: &AdapterGrads) -> Result<AdapterGrads> {
        Ok(AdapterGrads([
            self.0[0].add(&other.0[0])?,
            self.0[1].add(&other.0[1])?,
            self.0[2].add(&other.0[2])?,
        ]))
    }
}

/// One projection type's frozen decomposition plus its trainable matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CraftAdapter {
    w_original: Tensor3,
    r_initial: Tensor3,
    factors: TuckerFactors,
    adaptation: [Matrix; 3],
}

/// Runs HOSVD on `w`, stores `W` and `R` as frozen buffers and draws the
/// near-identity adaptation matrices.
pub fn init_adapter(w: &Tensor3, ranks: TuckerRanks, cfg: &InitConfig) -> Result<CraftAdapter> {
    cfg.validate()?;
    let factors = hosvd(w, ranks)?;
    let r_initial = reconstruct(&factors);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = cfg.epsilon * cfg.sigma;
    let adaptation = ranks.0.map(|r| {
        Matrix::from_fn(r, r, |i, j| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let base = if i == j { 1.0 } else { 0.0 };
            base + scale * e
        })
    });
    Ok(CraftAdapter {
        w_original: w.clone(),
        r_initial,
        factors,
        adaptation,
    })
}

impl CraftAdapter {
    /// Reassembles an adapter from stored parts (file reads).
    pub(crate) fn from_parts(
        w_original: Tensor3,
        r_initial: Tensor3,
        factors: TuckerFactors,
        adaptation: [Matrix; 3],
    ) -> Result<Self> {
        let dims = factors.dims();
        if w_original.dims() != dims || r_initial.dims() != dims {
            return Err(CraftError::DimensionMismatch(format!(
                "buffers {:?}/{:?} do not match factors for {dims:?}",
                w_original.dims(),
                r_initial.dims()
            )));
        }
        let ranks = factors.ranks().0;
        for (n, j) in adaptation.iter().enumerate() {
            if j.shape() != (ranks[n], ranks[n]) {
                return Err(CraftError::DimensionMismatch(format!(
                    "J{} is {:?}, expected {}x{}",
                    n + 1,
                    j.shape(),
                    ranks[n],
                    ranks[n]
                )));
            }
        }
        Ok(Self {
            w_original,
            r_initial,
            factors,
            adaptation,
        })
    }

    pub fn w_original(&self) -> &Tensor3 {
        &self.w_original
    }

    pub fn r_initial(&self) -> &Tensor3 {
        &self.r_initial
    }

    pub fn factors(&self) -> &TuckerFactors {
        &self.factors
    }

    pub fn ranks(&self) -> TuckerRanks {
        self.factors.ranks()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.w_original.dims()
    }

    /// Current `J_n` for `mode` in 1..=3.
    pub fn adaptation(&self, mode: usize) -> &Matrix {
        &self.adaptation[mode - 1]
    }

    pub fn adaptations(&self) -> &[Matrix; 3] {
        &self.adaptation
    }

    /// Replaces `J_n`. The only way besides [`CraftAdapter::sgd_step`] to
    /// change an adapter.
    pub fn set_adaptation(&mut self, mode: usize, j: Matrix) -> Result<()> {
        if !(1..=3).contains(&mode) {
            return Err(CraftError::InvalidMode(mode));
        }
        let r = self.ranks().0[mode - 1];
        if j.shape() != (r, r) {
            return Err(CraftError::DimensionMismatch(format!(
                "J{mode} must be {r}x{r}, got {:?}",
                j.shape()
            )));
        }
        self.adaptation[mode - 1] = j;
        Ok(())
    }

    fn adapted_factors(&self) -> [Matrix; 3] {
        [1, 2, 3].map(|n| {
            self.factors
                .factor(n)
                .matmul(&self.adaptation[n - 1])
                .expect("J is square with the factor's rank")
        })
    }

    /// `T = G ×₁ (U1 J1) ×₂ (U2 J2) ×₃ (U3 J3)`.
    pub fn adapted_reconstruction(&self) -> Tensor3 {
        let [a1, a2, a3] = self.adapted_factors();
        multilinear_product(self.factors.core(), [&a1, &a2, &a3])
            .expect("adapted factor shapes match the core")
    }

    /// `Ŵ = W + (T − R)`.
    pub fn adapted_tensor(&self) -> Tensor3 {
        let t = self.adapted_reconstruction();
        let data = self
            .w_original
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .zip(self.r_initial.as_slice())
            .map(|((&w, &t), &r)| w + (t - r))
            .collect();
        Tensor3::from_raw(self.dims(), data)
    }

    /// Layer slice `Ŵ(layer, :, :)`, zero-based.
    pub fn extract_layer(&self, layer: usize) -> Result<Matrix> {
        let n = self.dims()[0];
        if layer >= n {
            return Err(CraftError::IndexOutOfRange {
                what: "layer",
                value: layer,
                len: n,
            });
        }
        self.adapted_tensor().layer(layer)
    }

    /// Gradient of a loss with respect to `J1, J2, J3` given `∂L/∂Ŵ`.
    ///
    /// Only `T` depends on `J`, so `dL/dJ_n = dL/dT` pulled back through
    /// `A_n = U_n J_n`. Writing `Y_n` for `upstream` contracted with `U_nᵀ`
    /// along mode n and with `A_mᵀ` along the other two modes,
    ///
    /// ```text
    /// ∂L/∂J_n = unfold(Y_n, n) · unfold(G, n)ᵀ
    /// ```
    ///
    /// which holds for any unfolding convention as long as both sides use
    /// the same one.
    pub fn grad_j(&self, upstream: &Tensor3) -> Result<AdapterGrads> {
        if upstream.dims() != self.dims() {
            return Err(CraftError::DimensionMismatch(format!(
                "upstream gradient {:?} vs adapter {:?}",
                upstream.dims(),
                self.dims()
            )));
        }
        let adapted = self.adapted_factors();
        let core = self.factors.core();
        let grads = [1, 2, 3].map(|n| {
            let mut y = upstream.clone();
            for m in 1..=3 {
                let proj = if m == n {
                    self.factors.factor(m).transpose()
                } else {
                    adapted[m - 1].transpose()
                };
                y = y.mode_n_product(&proj, m).expect("shapes follow the ranks");
            }
            y.unfold(n)
                .and_then(|yn| yn.matmul_t(&core.unfold(n)?))
                .expect("unfoldings of equal-dim tensors are conformable")
        });
        Ok(AdapterGrads(grads))
    }

    /// `J_n ← J_n − η·∇_{J_n}`. Frozen buffers are untouched.
    pub fn sgd_step(&mut self, grads: &AdapterGrads, eta: f64) -> Result<()> {
        if !eta.is_finite() {
            return Err(CraftError::InvalidParameter {
                name: "eta",
                reason: format!("must be finite, got {eta}"),
            });
        }
        for (j, g) in self.adaptation.iter().zip(&grads.0) {
            if j.shape() != g.shape() {
                return Err(CraftError::DimensionMismatch(format!(
                    "gradient {:?} vs J {:?}",
                    g.shape(),
                    j.shape()
                )));
            }
            if let Some(index) = g.as_slice().iter().position(|x| !x.is_finite()) {
                return Err(CraftError::NonFinite { index });
            }
        }
        for (j, g) in self.adaptation.iter_mut().zip(&grads.0) {
            for (x, d) in j.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *x -= eta * d;
            }
        }
        Ok(())
    }

    /// CRC-64 over the bit patterns of every frozen buffer.
    pub fn frozen_checksum(&self) -> u64 {
        let mut parts: Vec<&[f64]> = vec![
            self.w_original.as_slice(),
            self.r_initial.as_slice(),
            self.factors.core().as_slice(),
        ];
        parts.extend(self.factors.factors().iter().map(Matrix::as_slice));
        checksum_f64(&parts)
    }
}

/// `n_p · (r1² + r2² + r3²)`; reads neither model width nor depth.
pub fn trainable_param_count(ranks: TuckerRanks, n_projections: usize) -> usize {
    n_projections * ranks.square_sum()
}
