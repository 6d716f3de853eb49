//! Flat `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Every key is optional and
//! falls back to [`RunConfig::default`]; unknown or repeated keys are errors.
//! Values are validated as soon as the whole file is read.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::adapter::InitConfig;
use crate::error::{CraftError, Result};
use crate::toy::{FinetuneOptions, PretrainOptions, SyntheticTask, TaskRule, ToyConfig};
use crate::tucker::TuckerRanks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Projection {
    Q,
    V,
}

impl Projection {
    pub fn name(self) -> &'static str {
        match self {
            Projection::Q => "Q",
            Projection::V => "V",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ranks: TuckerRanks,
    pub epsilon: f64,
    pub sigma: f64,
    pub seed: u64,
    /// SGD step size for J.
    pub eta: f64,
    /// SGD step size for the classifier head during fine-tuning.
    pub head_eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub pretrain_lr: f64,
    pub pretrain_steps: usize,
    pub n_layers: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub n_classes: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub task_a: TaskRule,
    pub task_b: TaskRule,
    pub projections: Vec<Projection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let toy = ToyConfig::default();
        Self {
            ranks: TuckerRanks::new(4, 8, 8),
            epsilon: 0.01,
            sigma: 0.02,
            seed: 0,
            eta: 0.01,
            head_eta: 0.2,
            steps: 100,
            batch_size: 32,
            pretrain_lr: 0.01,
            pretrain_steps: 2000,
            n_layers: toy.n_layers,
            d_model: toy.d_model,
            vocab_size: toy.vocab_size,
            seq_len: toy.seq_len,
            n_classes: toy.n_classes,
            train_size: 512,
            eval_size: 256,
            task_a: TaskRule::Majority,
            task_b: TaskRule::MajorityFlipped,
            projections: vec![Projection::Q, Projection::V],
        }
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| CraftError::Config {
        line,
        message: format!("{key}: cannot parse {value:?}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_num(line, key, v.trim()))
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| CraftError::Config {
                line,
                message: format!("expected key = value, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CraftError::Config {
                    line,
                    message: format!("duplicate key {key}"),
                });
            }
            match key {
                "ranks" => {
                    let r: Vec<usize> = parse_list(line, key, value)?;
                    let r: [usize; 3] = r.try_into().map_err(|_| CraftError::Config {
                        line,
                        message: "ranks needs exactly three values".into(),
                    })?;
                    cfg.ranks = TuckerRanks(r);
                }
                "epsilon" => cfg.epsilon = parse_num(line, key, value)?,
                "sigma" => cfg.sigma = parse_num(line, key, value)?,
                "seed" => cfg.seed = parse_num(line, key, value)?,
                "eta" => cfg.eta = parse_num(line, key, value)?,
                "head_eta" => cfg.head_eta = parse_num(line, key, value)?,
                "steps" => cfg.steps = parse_num(line, key, value)?,
                "batch_size" => cfg.batch_size = parse_num(line, key, value)?,
                "pretrain_lr" => cfg.pretrain_lr = parse_num(line, key, value)?,
                "pretrain_steps" => cfg.pretrain_steps = parse_num(line, key, value)?,
                "n_layers" => cfg.n_layers = parse_num(line, key, value)?,
                "d_model" => cfg.d_model = parse_num(line, key, value)?,
                "vocab_size" => cfg.vocab_size = parse_num(line, key, value)?,
                "seq_len" => cfg.seq_len = parse_num(line, key, value)?,
                "n_classes" => cfg.n_classes = parse_num(line, key, value)?,
                "train_size" => cfg.train_size = parse_num(line, key, value)?,
                "eval_size" => cfg.eval_size = parse_num(line, key, value)?,
                "task_a" | "task_b" => {
                    let rule = TaskRule::from_id(value).ok_or_else(|| CraftError::Config {
                        line,
                        message: format!("{key}: unknown task rule {value:?}"),
                    })?;
                    if key == "task_a" {
                        cfg.task_a = rule;
                    } else {
                        cfg.task_b = rule;
                    }
                }
                "projections" => {
                    let mut list = Vec::new();
                    for p in value.split(',').map(str::trim) {
                        let proj = match p {
                            "Q" | "q" => Projection::Q,
                            "V" | "v" => Projection::V,
                            other => {
                                return Err(CraftError::Config {
                                    line,
                                    message: format!(
                                        "projections: {other:?} cannot be adapted (only Q and V)"
                                    ),
                                })
                            }
                        };
                        if list.contains(&proj) {
                            return Err(CraftError::Config {
                                line,
                                message: format!("projections: {p} listed twice"),
                            });
                        }
                        list.push(proj);
                    }
                    cfg.projections = list;
                }
                other => {
                    return Err(CraftError::Config {
                        line,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn invalid(message: String) -> CraftError {
        CraftError::Config { line: 0, message }
    }

    pub fn validate(&self) -> Result<()> {
        self.toy_config()
            .validate()
            .map_err(|e| Self::invalid(e.to_string()))?;
        if self.n_classes < 2 || self.vocab_size < self.n_classes {
            return Err(Self::invalid(format!(
                "need 2 <= n_classes <= vocab_size, got n_classes={} vocab_size={}",
                self.n_classes, self.vocab_size
            )));
        }
        self.init_config()
            .validate()
            .map_err(|e| Self::invalid(e.to_string()))?;
        self.ranks
            .validate([self.n_layers, self.d_model, self.d_model])?;
        for (name, v) in [
            ("eta", self.eta),
            ("head_eta", self.head_eta),
            ("pretrain_lr", self.pretrain_lr),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Self::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("train_size", self.train_size),
            ("eval_size", self.eval_size),
        ] {
            if v == 0 {
                return Err(Self::invalid(format!("{name} must be positive")));
            }
        }
        if self.projections.is_empty() {
            return Err(Self::invalid(
                "projections must name at least one of Q, V".into(),
            ));
        }
        Ok(())
    }

    pub fn toy_config(&self) -> ToyConfig {
        ToyConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            vocab_size: self.vocab_size,
            seq_len: self.seq_len,
            n_classes: self.n_classes,
            seed: self.seed,
        }
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            epsilon: self.epsilon,
            sigma: self.sigma,
            seed: self.seed,
        }
    }

    pub fn task(&self, rule: TaskRule) -> SyntheticTask {
        SyntheticTask {
            rule,
            seed: self.seed,
            train_size: self.train_size,
            eval_size: self.eval_size,
        }
    }

    pub fn pretrain_options(&self) -> PretrainOptions {
        PretrainOptions {
            lr: self.pretrain_lr,
            max_steps: self.pretrain_steps,
            batch_size: self.batch_size,
            seed: self.seed,
            ..PretrainOptions::default()
        }
    }

    pub fn finetune_options(&self) -> FinetuneOptions {
        FinetuneOptions {
            eta: self.eta,
            head_eta: self.head_eta,
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed.wrapping_add(1),
        }
    }

    pub fn has_projection(&self, p: Projection) -> bool {
        self.projections.contains(&p)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let [r1, r2, r3] = self.ranks.0;
        let projections: Vec<&str> = self.projections.iter().map(|p| p.name()).collect();
        let _ = writeln!(s, "ranks = {r1},{r2},{r3}");
        let _ = writeln!(s, "epsilon = {:?}", self.epsilon);
        let _ = writeln!(s, "sigma = {:?}", self.sigma);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eta = {:?}", self.eta);
        let _ = writeln!(s, "head_eta = {:?}", self.head_eta);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "pretrain_lr = {:?}", self.pretrain_lr);
        let _ = writeln!(s, "pretrain_steps = {}", self.pretrain_steps);
        let _ = writeln!(s, "n_layers = {}", self.n_layers);
        let _ = writeln!(s, "d_model = {}", self.d_model);
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "seq_len = {}", self.seq_len);
        let _ = writeln!(s, "n_classes = {}", self.n_classes);
        let _ = writeln!(s, "train_size = {}", self.train_size);
        let _ = writeln!(s, "eval_size = {}", self.eval_size);
        let _ = writeln!(s, "task_a = {}", self.task_a.id());
        let _ = writeln!(s, "task_b = {}", self.task_b.id());
        let _ = writeln!(s, "projections = {}", projections.join(","));
        s
    }
}
