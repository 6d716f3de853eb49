use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CraftError, Result};

/// Labelling rule for synthetic sequences.
///
/// Tokens are grouped by `token % n_classes`. Under [`TaskRule::Majority`]
/// the label is the group contributing the most tokens (sequences with a
/// tied maximum are never generated). [`TaskRule::MajorityFlipped`] relabels
/// the same sequences with `(label + 1) % n_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskRule {
    Majority,
    MajorityFlipped,
}

impl TaskRule {
    pub fn id(self) -> &'static str {
        match self {
            TaskRule::Majority => "majority",
            TaskRule::MajorityFlipped => "majority-flipped",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "majority" => Some(TaskRule::Majority),
            "majority-flipped" | "flip" => Some(TaskRule::MajorityFlipped),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTask {
    pub rule: TaskRule,
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
}

/// Majority group of a sequence, or `None` on a tie.
pub fn majority_group(tokens: &[usize], n_classes: usize) -> Option<usize> {
    let mut counts = vec![0usize; n_classes];
    for &t in tokens {
        counts[t % n_classes] += 1;
    }
    let max = *counts.iter().max()?;
    let mut winners = counts.iter().enumerate().filter(|(_, &c)| c == max);
    let (first, _) = winners.next()?;
    winners.next().is_none().then_some(first)
}

impl SyntheticTask {
    /// Same sequences as `self` (the seed drives the sequences, not the rule).
    pub fn with_rule(&self, rule: TaskRule) -> Self {
        Self {
            rule,
            ..self.clone()
        }
    }

    /// Generates exactly class-balanced train and eval splits.
    pub fn generate(&self, vocab_size: usize, seq_len: usize, n_classes: usize) -> Result<Dataset> {
        if n_classes < 2 || vocab_size < n_classes || seq_len == 0 {
            return Err(CraftError::InvalidParameter {
                name: "task",
                reason: format!(
                    "need n_classes >= 2, vocab_size >= n_classes, seq_len >= 1 \
                     (got {n_classes}, {vocab_size}, {seq_len})"
                ),
            });
        }
        if self.train_size == 0 || self.eval_size == 0 {
            return Err(CraftError::InvalidParameter {
                name: "task",
                reason: "split sizes must be positive".into(),
            });
        }
        let split = |size: usize, stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(stream);
            let mut out = Vec::with_capacity(size);
            for i in 0..size {
                let target = i % n_classes;
                let tokens = loop {
                    let seq: Vec<usize> = (0..seq_len)
                        .map(|_| rng.random_range(0..vocab_size))
                        .collect();
                    if majority_group(&seq, n_classes) == Some(target) {
                        break seq;
                    }
                };
                let label = match self.rule {
                    TaskRule::Majority => target,
                    TaskRule::MajorityFlipped => (target + 1) % n_classes,
                };
                out.push(Example { tokens, label });
            }
            out.shuffle(&mut rng);
            out
        };
        Ok(Dataset {
            train: split(self.train_size, 1),
            eval: split(self.eval_size, 2),
        })
    }
}
