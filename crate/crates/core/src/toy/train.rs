use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::CraftAdapter;
use crate::error::{CraftError, Result};

use super::model::{ToyConfig, ToyModel};
use super::task::{Example, SyntheticTask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean cross-entropy and argmax accuracy (ties go to the lowest class).
pub fn evaluate(model: &ToyModel, examples: &[Example]) -> Result<Metrics> {
    let tokens: Vec<Vec<usize>> = examples.iter().map(|e| e.tokens.clone()).collect();
    let logits = model.forward(&tokens)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, ex) in examples.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let log_sum = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[ex.label];
        let pred = row.iter().position(|&x| x == max).expect("non-empty row");
        correct += (pred == ex.label) as usize;
    }
    let n = examples.len() as f64;
    Ok(Metrics {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Deterministic minibatch order: reshuffled every epoch from one seed.
struct Batches<'a> {
    data: &'a [Example],
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl<'a> Batches<'a> {
    fn new(data: &'a [Example], size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        Self {
            data,
            order,
            pos: 0,
            size: size.min(data.len()).max(1),
            rng,
        }
    }

    fn next_batch(&mut self) -> Vec<Example> {
        if self.pos + self.size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + self.size]
            .iter()
            .map(|&i| self.data[i].clone())
            .collect();
        self.pos += self.size;
        batch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainOptions {
    /// Adam step size.
    pub lr: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    /// Stop as soon as eval accuracy reaches this.
    pub target_accuracy: f64,
    /// Below this after `max_steps`, pre-training is reported as failed.
    pub min_accuracy: f64,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            lr: 0.01,
            max_steps: 2000,
            batch_size: 32,
            eval_every: 20,
            target_accuracy: 0.9,
            min_accuracy: 0.75,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainReport {
    pub steps: usize,
    pub eval: Metrics,
}

/// Full-parameter Adam (β = 0.9, 0.999) on a task.
pub fn pretrain(
    cfg: ToyConfig,
    task: &SyntheticTask,
    opts: &PretrainOptions,
) -> Result<(ToyModel, PretrainReport)> {
    let data = task.generate(cfg.vocab_size, cfg.seq_len, cfg.n_classes)?;
    let mut model = ToyModel::new(cfg)?;
    let mut batches = Batches::new(&data.train, opts.batch_size, opts.seed);

    let sizes: Vec<usize> = model.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut m: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut v = m.clone();
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);

    let mut eval = evaluate(&model, &data.eval)?;
    let mut step = 0;
    while step < opts.max_steps && eval.accuracy < opts.target_accuracy {
        let g = model.loss_and_grads(&batches.next_batch())?;
        if !g.loss.is_finite() {
            return Err(CraftError::Divergence {
                step,
                what: "pre-training loss",
            });
        }
        step += 1;
        let c1 = 1.0 - b1.powi(step as i32);
        let c2 = 1.0 - b2.powi(step as i32);
        for (((p, g), m), v) in model
            .param_slices_mut()
            .into_iter()
            .zip(g.model.slices())
            .zip(&mut m)
            .zip(&mut v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= opts.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        if step % opts.eval_every == 0 || step == opts.max_steps {
            eval = evaluate(&model, &data.eval)?;
        }
    }
    if eval.accuracy < opts.min_accuracy {
        return Err(CraftError::PretrainFailure {
            accuracy: eval.accuracy,
            steps: step,
            required: opts.min_accuracy,
        });
    }
    Ok((model, PretrainReport { steps: step, eval }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneOptions {
    /// SGD step size for the J matrices.
    pub eta: f64,
    /// SGD step size for the classifier head (shared by the baseline).
    pub head_eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: ToyModel,
    /// Minibatch loss before each update.
    pub loss_curve: Vec<f64>,
}

fn sgd(params: &mut [f64], grads: &[f64], eta: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= eta * g;
    }
}

fn check_eta(opts: &FinetuneOptions) -> Result<()> {
    for (name, v) in [("eta", opts.eta), ("head_eta", opts.head_eta)] {
        if !v.is_finite() {
            return Err(CraftError::InvalidParameter {
                name,
                reason: format!("must be finite, got {v}"),
            });
        }
    }
    Ok(())
}

/// Routes the model's Q/V weights through the adapters and trains only the
/// J matrices (plain SGD) and the classifier head.
pub fn craft_finetune(
    model: &ToyModel,
    q: Option<CraftAdapter>,
    v: Option<CraftAdapter>,
    train: &[Example],
    opts: &FinetuneOptions,
) -> Result<FinetuneOutcome> {
    check_eta(opts)?;
    let mut model = model.clone().with_adapters(q, v)?;
    let mut batches = Batches::new(train, opts.batch_size, opts.seed);
    let mut loss_curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let g = model.loss_and_grads(&batches.next_batch())?;
        if !g.loss.is_finite() {
            return Err(CraftError::Divergence { step, what: "loss" });
        }
        loss_curve.push(g.loss);
        let adapters = model.adapters_mut().expect("craft-adapt mode");
        for (adapter, grads) in [(&mut adapters.q, &g.q), (&mut adapters.v, &g.v)] {
            if let (Some(a), Some(gr)) = (adapter.as_mut(), grads) {
                a.sgd_step(gr, opts.eta)
                    .map_err(|_| CraftError::Divergence {
                        step,
                        what: "J gradient",
                    })?;
            }
        }
        let [head, bias] = model.head_slices_mut();
        sgd(head, g.model.head.as_slice(), opts.head_eta);
        sgd(bias, &g.model.head_bias, opts.head_eta);
    }
    Ok(FinetuneOutcome { model, loss_curve })
}

/// Baseline: frozen backbone, only the classifier head trains.
pub fn head_only_finetune(
    model: &ToyModel,
    train: &[Example],
    opts: &FinetuneOptions,
) -> Result<FinetuneOutcome> {
    check_eta(opts)?;
    let mut model = model.clone();
    let mut batches = Batches::new(train, opts.batch_size, opts.seed);
    let mut loss_curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let g = model.loss_and_grads(&batches.next_batch())?;
        if !g.loss.is_finite() {
            return Err(CraftError::Divergence { step, what: "loss" });
        }
        loss_curve.push(g.loss);
        let [head, bias] = model.head_slices_mut();
        sgd(head, g.model.head.as_slice(), opts.head_eta);
        sgd(bias, &g.model.head_bias, opts.head_eta);
    }
    Ok(FinetuneOutcome { model, loss_curve })
}
