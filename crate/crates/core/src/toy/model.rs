//! Attention-only classifier with a hand-written backward pass.
//!
//! Per layer, with `X` the `seq x d` residual stream and every weight stored
//! `d_out x d_in`:
//!
//! ```text
//! Q = X Wqᵀ   K = X Wkᵀ   V = X Wvᵀ
//! A = softmax_rows(Q Kᵀ / √d)
//! X ← X + (A V) Woᵀ
//! ```
//!
//! The logits are `mean_t(X_t) · H + b`. Training loss is mean cross-entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adapter::{AdapterGrads, CraftAdapter};
use crate::error::{CraftError, Result};
use crate::io::checksum_f64;
use crate::tensor::{Matrix, Tensor3};

use super::task::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 32,
            vocab_size: 16,
            seq_len: 12,
            n_classes: 2,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(CraftError::InvalidParameter {
                    name,
                    reason: "must be positive".into(),
                });
            }
        }
        if self.d_model % 2 != 0 {
            return Err(CraftError::InvalidParameter {
                name: "d_model",
                reason: format!("must be even, got {}", self.d_model),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

/// Q and V adapters routed into the forward pass in craft-adapt mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CraftAdapters {
    pub q: Option<CraftAdapter>,
    pub v: Option<CraftAdapter>,
}

impl CraftAdapters {
    pub fn count(&self) -> usize {
        self.q.is_some() as usize + self.v.is_some() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    FullTrain,
    CraftAdapt(CraftAdapters),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub(crate) cfg: ToyConfig,
    pub(crate) embeddings: Matrix,
    pub(crate) layers: Vec<LayerWeights>,
    pub(crate) head: Matrix,
    pub(crate) head_bias: Vec<f64>,
    pub(crate) mode: Mode,
}

/// Gradients for every parameter of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub embeddings: Matrix,
    pub layers: Vec<LayerWeights>,
    pub head: Matrix,
    pub head_bias: Vec<f64>,
}

impl ModelGrads {
    fn zeros(cfg: &ToyConfig) -> Self {
        let d = cfg.d_model;
        let layer = LayerWeights {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
        };
        Self {
            embeddings: Matrix::zeros(cfg.vocab_size, d),
            layers: vec![layer; cfg.n_layers],
            head: Matrix::zeros(d, cfg.n_classes),
            head_bias: vec![0.0; cfg.n_classes],
        }
    }

    /// `∂L/∂Ŵ_Q` stacked over layers.
    pub fn stacked_wq(&self) -> Tensor3 {
        let mats: Vec<Matrix> = self.layers.iter().map(|l| l.wq.clone()).collect();
        Tensor3::stack_layers(&mats).expect("at least one layer")
    }

    pub fn stacked_wv(&self) -> Tensor3 {
        let mats: Vec<Matrix> = self.layers.iter().map(|l| l.wv.clone()).collect();
        Tensor3::stack_layers(&mats).expect("at least one layer")
    }
}

/// Loss and gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub loss: f64,
    pub model: ModelGrads,
    /// Present in craft-adapt mode when the Q adapter is active.
    pub q: Option<AdapterGrads>,
    pub v: Option<AdapterGrads>,
}

struct LayerCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Matrix,
    h: Matrix,
}

fn add_in_place(acc: &mut Matrix, m: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
        *a += b;
    }
}

fn softmax_rows(m: &mut Matrix) {
    let cols = m.cols();
    for row in m.as_mut_slice().chunks_mut(cols) {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

impl ToyModel {
    /// Random initialisation: embeddings `N(0, 1)`, attention weights
    /// `N(0, 1/d)`, zero classifier head.
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let attn = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid normal");
        let embeddings = Matrix::from_fn(cfg.vocab_size, d, |_, _| unit.sample(&mut rng));
        let layers = (0..cfg.n_layers)
            .map(|_| {
                let mut w = || Matrix::from_fn(d, d, |_, _| attn.sample(&mut rng));
                LayerWeights {
                    wq: w(),
                    wk: w(),
                    wv: w(),
                    wo: w(),
                }
            })
            .collect();
        Ok(Self {
            cfg,
            embeddings,
            layers,
            head: Matrix::zeros(d, cfg.n_classes),
            head_bias: vec![0.0; cfg.n_classes],
            mode: Mode::FullTrain,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn head(&self) -> (&Matrix, &[f64]) {
        (&self.head, &self.head_bias)
    }

    /// Replaces the classifier head (`d_model x n_classes`) and its bias.
    pub fn with_head(mut self, head: Matrix, bias: Vec<f64>) -> Result<Self> {
        let (d, c) = (self.cfg.d_model, self.cfg.n_classes);
        if head.shape() != (d, c) || bias.len() != c {
            return Err(CraftError::DimensionMismatch(format!(
                "head must be {d}x{c} with {c} biases, got {:?} and {}",
                head.shape(),
                bias.len()
            )));
        }
        if let Some(index) = bias.iter().position(|x| !x.is_finite()) {
            return Err(CraftError::NonFinite { index });
        }
        self.head = head;
        self.head_bias = bias;
        Ok(self)
    }

    pub fn adapters(&self) -> Option<&CraftAdapters> {
        match &self.mode {
            Mode::CraftAdapt(a) => Some(a),
            Mode::FullTrain => None,
        }
    }

    pub(crate) fn adapters_mut(&mut self) -> Option<&mut CraftAdapters> {
        match &mut self.mode {
            Mode::CraftAdapt(a) => Some(a),
            Mode::FullTrain => None,
        }
    }

    /// Original per-layer Q weights stacked into `(N_L, d, d)`.
    pub fn stacked_wq(&self) -> Tensor3 {
        let mats: Vec<Matrix> = self.layers.iter().map(|l| l.wq.clone()).collect();
        Tensor3::stack_layers(&mats).expect("at least one layer")
    }

    pub fn stacked_wk(&self) -> Tensor3 {
        let mats: Vec<Matrix> = self.layers.iter().map(|l| l.wk.clone()).collect();
        Tensor3::stack_layers(&mats).expect("at least one layer")
    }

    pub fn stacked_wv(&self) -> Tensor3 {
        let mats: Vec<Matrix> = self.layers.iter().map(|l| l.wv.clone()).collect();
        Tensor3::stack_layers(&mats).expect("at least one layer")
    }

    pub fn stacked_wo(&self) -> Tensor3 {
        let mats: Vec<Matrix> = self.layers.iter().map(|l| l.wo.clone()).collect();
        Tensor3::stack_layers(&mats).expect("at least one layer")
    }

    /// Switches to craft-adapt mode. Adapter tensors must be `(N_L, d, d)`.
    pub fn with_adapters(
        mut self,
        q: Option<CraftAdapter>,
        v: Option<CraftAdapter>,
    ) -> Result<Self> {
        let dims = [self.cfg.n_layers, self.cfg.d_model, self.cfg.d_model];
        for a in q.iter().chain(v.iter()) {
            if a.dims() != dims {
                return Err(CraftError::DimensionMismatch(format!(
                    "adapter {:?} does not fit model {dims:?}",
                    a.dims()
                )));
            }
        }
        self.mode = Mode::CraftAdapt(CraftAdapters { q, v });
        Ok(self)
    }

    /// The weights the forward pass actually reads, layer by layer.
    pub fn effective_layers(&self) -> Vec<LayerWeights> {
        let mut layers = self.layers.clone();
        if let Mode::CraftAdapt(a) = &self.mode {
            if let Some(q) = &a.q {
                let t = q.adapted_tensor();
                for (l, layer) in layers.iter_mut().enumerate() {
                    layer.wq = t.layer(l).expect("layer count checked");
                }
            }
            if let Some(v) = &a.v {
                let t = v.adapted_tensor();
                for (l, layer) in layers.iter_mut().enumerate() {
                    layer.wv = t.layer(l).expect("layer count checked");
                }
            }
        }
        layers
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() != self.cfg.seq_len {
            return Err(CraftError::DimensionMismatch(format!(
                "sequence length {} != {}",
                tokens.len(),
                self.cfg.seq_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(CraftError::IndexOutOfRange {
                what: "token id",
                value: bad,
                len: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    fn run(
        &self,
        layers: &[LayerWeights],
        tokens: &[usize],
    ) -> (Vec<LayerCache>, Matrix, Vec<f64>) {
        let d = self.cfg.d_model;
        let scale = 1.0 / (d as f64).sqrt();
        let mut x = Matrix::from_fn(tokens.len(), d, |t, j| self.embeddings.get(tokens[t], j));
        let mut caches = Vec::with_capacity(layers.len());
        for w in layers {
            let q = x.matmul_t(&w.wq).expect("d x d");
            let k = x.matmul_t(&w.wk).expect("d x d");
            let v = x.matmul_t(&w.wv).expect("d x d");
            let mut attn = q.matmul_t(&k).expect("seq x seq").scale(scale);
            softmax_rows(&mut attn);
            let h = attn.matmul(&v).expect("seq x d");
            let next = x
                .add(&h.matmul_t(&w.wo).expect("d x d"))
                .expect("same shape");
            caches.push(LayerCache {
                x,
                q,
                k,
                v,
                attn,
                h,
            });
            x = next;
        }
        let seq = tokens.len() as f64;
        let pooled: Vec<f64> = (0..d)
            .map(|j| (0..tokens.len()).map(|t| x.get(t, j)).sum::<f64>() / seq)
            .collect();
        let logits = (0..self.cfg.n_classes)
            .map(|c| {
                self.head_bias[c] + (0..d).map(|j| pooled[j] * self.head.get(j, c)).sum::<f64>()
            })
            .collect();
        (caches, x, logits)
    }

    /// Logits, `batch x n_classes`.
    pub fn forward(&self, batch: &[Vec<usize>]) -> Result<Matrix> {
        if batch.is_empty() {
            return Err(CraftError::Empty("batch"));
        }
        let layers = self.effective_layers();
        let mut out = Vec::with_capacity(batch.len() * self.cfg.n_classes);
        for tokens in batch {
            self.check_tokens(tokens)?;
            out.extend(self.run(&layers, tokens).2);
        }
        Matrix::new(batch.len(), self.cfg.n_classes, out)
    }

    /// Attention matrices (`seq x seq`, one per layer) for one sequence.
    pub fn attention_maps(&self, tokens: &[usize]) -> Result<Vec<Matrix>> {
        self.check_tokens(tokens)?;
        let layers = self.effective_layers();
        Ok(self
            .run(&layers, tokens)
            .0
            .into_iter()
            .map(|c| c.attn)
            .collect())
    }

    /// Mean cross-entropy and gradients for every parameter. In craft-adapt
    /// mode the Q/V weight gradients are additionally pulled back to the
    /// adapters' J matrices.
    pub fn loss_and_grads(&self, batch: &[Example]) -> Result<BatchGrads> {
        if batch.is_empty() {
            return Err(CraftError::Empty("batch"));
        }
        let cfg = &self.cfg;
        let d = cfg.d_model;
        let scale = 1.0 / (d as f64).sqrt();
        let layers = self.effective_layers();
        let mut grads = ModelGrads::zeros(cfg);
        let mut loss = 0.0;
        let inv_batch = 1.0 / batch.len() as f64;

        for ex in batch {
            self.check_tokens(&ex.tokens)?;
            if ex.label >= cfg.n_classes {
                return Err(CraftError::IndexOutOfRange {
                    what: "label",
                    value: ex.label,
                    len: cfg.n_classes,
                });
            }
            let (caches, x_last, logits) = self.run(&layers, &ex.tokens);
            let probs = softmax(&logits);
            loss -= probs[ex.label].ln() * inv_batch;

            let dz: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(c, p)| (p - if c == ex.label { 1.0 } else { 0.0 }) * inv_batch)
                .collect();
            let seq = ex.tokens.len();
            let pooled: Vec<f64> = (0..d)
                .map(|j| (0..seq).map(|t| x_last.get(t, j)).sum::<f64>() / seq as f64)
                .collect();
            let gh = grads.head.as_mut_slice();
            for j in 0..d {
                for c in 0..cfg.n_classes {
                    gh[j * cfg.n_classes + c] += pooled[j] * dz[c];
                }
            }
            for (b, g) in grads.head_bias.iter_mut().zip(&dz) {
                *b += g;
            }
            let dpooled: Vec<f64> = (0..d)
                .map(|j| {
                    (0..cfg.n_classes)
                        .map(|c| dz[c] * self.head.get(j, c))
                        .sum::<f64>()
                })
                .collect();
            let mut dx = Matrix::from_fn(seq, d, |_, j| dpooled[j] / seq as f64);

            for (l, cache) in caches.iter().enumerate().rev() {
                let w = &layers[l];
                let g = &mut grads.layers[l];
                // X_next = X + H Woᵀ
                add_in_place(&mut g.wo, &dx.t_matmul(&cache.h).expect("d x d"));
                let dh = dx.matmul(&w.wo).expect("seq x d");
                let da = dh.matmul_t(&cache.v).expect("seq x seq");
                let dv = cache.attn.t_matmul(&dh).expect("seq x d");
                let mut ds = Matrix::zeros(seq, seq);
                for t in 0..seq {
                    let a_row = cache.attn.row(t);
                    let da_row = da.row(t);
                    let inner: f64 = a_row.iter().zip(da_row).map(|(a, b)| a * b).sum();
                    for s in 0..seq {
                        ds.as_mut_slice()[t * seq + s] = a_row[s] * (da_row[s] - inner);
                    }
                }
                let dq = ds.matmul(&cache.k).expect("seq x d").scale(scale);
                let dk = ds.t_matmul(&cache.q).expect("seq x d").scale(scale);
                add_in_place(&mut g.wq, &dq.t_matmul(&cache.x).expect("d x d"));
                add_in_place(&mut g.wk, &dk.t_matmul(&cache.x).expect("d x d"));
                add_in_place(&mut g.wv, &dv.t_matmul(&cache.x).expect("d x d"));
                add_in_place(&mut dx, &dq.matmul(&w.wq).expect("seq x d"));
                add_in_place(&mut dx, &dk.matmul(&w.wk).expect("seq x d"));
                add_in_place(&mut dx, &dv.matmul(&w.wv).expect("seq x d"));
            }
            let ge = grads.embeddings.as_mut_slice();
            for (t, &tok) in ex.tokens.iter().enumerate() {
                for (e, g) in ge[tok * d..(tok + 1) * d].iter_mut().zip(dx.row(t)) {
                    *e += g;
                }
            }
        }

        let (q, v) = match &self.mode {
            Mode::FullTrain => (None, None),
            Mode::CraftAdapt(a) => (
                a.q.as_ref()
                    .map(|q| q.grad_j(&grads.stacked_wq()))
                    .transpose()?,
                a.v.as_ref()
                    .map(|v| v.grad_j(&grads.stacked_wv()))
                    .transpose()?,
            ),
        };
        Ok(BatchGrads {
            loss,
            model: grads,
            q,
            v,
        })
    }

    /// CRC-64 over everything craft fine-tuning must leave untouched:
    /// embeddings, all four projections of every layer and the adapters'
    /// frozen buffers.
    pub fn backbone_checksum(&self) -> u64 {
        let mut blocks: Vec<&[f64]> = vec![self.embeddings.as_slice()];
        for l in &self.layers {
            blocks.extend([
                l.wq.as_slice(),
                l.wk.as_slice(),
                l.wv.as_slice(),
                l.wo.as_slice(),
            ]);
        }
        let mut sum = checksum_f64(&blocks);
        if let Some(a) = self.adapters() {
            for adapter in a.q.iter().chain(a.v.iter()) {
                sum = sum.rotate_left(17) ^ adapter.frozen_checksum();
            }
        }
        sum
    }

    /// `d_model · n_classes + n_classes`.
    pub fn head_param_count(&self) -> usize {
        self.cfg.d_model * self.cfg.n_classes + self.cfg.n_classes
    }

    /// Flat views over all trainable parameters, in a fixed order matched by
    /// [`ModelGrads::slices`].
    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embeddings.as_mut_slice()];
        for l in &mut self.layers {
            out.push(l.wq.as_mut_slice());
            out.push(l.wk.as_mut_slice());
            out.push(l.wv.as_mut_slice());
            out.push(l.wo.as_mut_slice());
        }
        out.push(self.head.as_mut_slice());
        out.push(&mut self.head_bias);
        out
    }

    pub(crate) fn head_slices_mut(&mut self) -> [&mut [f64]; 2] {
        [self.head.as_mut_slice(), &mut self.head_bias]
    }
}

impl ModelGrads {
    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embeddings.as_slice()];
        for l in &self.layers {
            out.extend([
                l.wq.as_slice(),
                l.wk.as_slice(),
                l.wv.as_slice(),
                l.wo.as_slice(),
            ]);
        }
        out.push(self.head.as_slice());
        out.push(&self.head_bias);
        out
    }
}
