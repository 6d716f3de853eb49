//! End-to-end toy run: pre-train, adapt with CRAFT, compare to a head-only
//! baseline and write every artifact to one directory.
//!
//! Files written (all deterministic for a given config):
//!
//! | file | content |
//! |---|---|
//! | `config.txt` | canonical echo of the effective config |
//! | `pretrained_wq.crft` .. `pretrained_wo.crft` | stacked projections, kind 1 |
//! | `pretrained_embeddings.crft`, `pretrained_head.crft` | kind 2 |
//! | `pretrained_head_bias.crft` | kind 2, `1 x n_classes` |
//! | `adapter_q.crft`, `adapter_v.crft` | trained adapters, kind 4, one per configured projection |
//! | `loss_craft.txt`, `loss_head_only.txt` | `loss step=<i> value=<f64>` per step |
//! | `summary.txt` | run records, see [`TrainSummary::to_records`] |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::adapter::{init_adapter, trainable_param_count, InitConfig};
use crate::error::Result;
use crate::io::{write_atomic, write_payload, Payload, Projection, RunConfig};
use crate::tensor::Matrix;
use crate::toy::{
    craft_finetune, evaluate, head_only_finetune, pretrain, Metrics, TaskRule, ToyModel,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub pretrain_steps: usize,
    /// Pre-trained model on the pre-training task.
    pub pretrain_eval: Metrics,
    /// Pre-trained model on the adaptation task, before any update.
    pub baseline_eval: Metrics,
    pub craft_eval: Metrics,
    pub head_only_eval: Metrics,
    pub tucker_params: usize,
    pub head_params: usize,
    pub task_a: TaskRule,
    pub task_b: TaskRule,
}

impl TrainSummary {
    /// Records, one per line, fields in the order shown:
    ///
    /// ```text
    /// pretrain task=<id> steps=<n> loss=<f64> accuracy=<f64>
    /// eval model=<pretrained|craft|head_only> task=<id> loss=<f64> accuracy=<f64>
    /// params tucker_adaptation=<n> classifier_head=<n> total=<n>
    /// ```
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "pretrain task={} steps={} loss={:?} accuracy={:?}",
            self.task_a.id(),
            self.pretrain_steps,
            self.pretrain_eval.loss,
            self.pretrain_eval.accuracy
        );
        for (name, m) in [
            ("pretrained", self.baseline_eval),
            ("craft", self.craft_eval),
            ("head_only", self.head_only_eval),
        ] {
            let _ = writeln!(
                s,
                "eval model={name} task={} loss={:?} accuracy={:?}",
                self.task_b.id(),
                m.loss,
                m.accuracy
            );
        }
        let _ = writeln!(
            s,
            "params tucker_adaptation={} classifier_head={} total={}",
            self.tucker_params,
            self.head_params,
            self.tucker_params + self.head_params
        );
        s
    }
}

fn loss_curve_text(curve: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in curve.iter().enumerate() {
        let _ = writeln!(s, "loss step={i} value={v:?}");
    }
    s
}

fn write_pretrained(model: &ToyModel, out_dir: &Path) -> Result<()> {
    let tensors = [
        ("pretrained_wq.crft", model.stacked_wq()),
        ("pretrained_wk.crft", model.stacked_wk()),
        ("pretrained_wv.crft", model.stacked_wv()),
        ("pretrained_wo.crft", model.stacked_wo()),
    ];
    for (name, t) in tensors {
        write_payload(&out_dir.join(name), &Payload::Tensor(t))?;
    }
    let (head, bias) = model.head();
    let matrices = [
        ("pretrained_embeddings.crft", model.embeddings().clone()),
        ("pretrained_head.crft", head.clone()),
        (
            "pretrained_head_bias.crft",
            Matrix::new(1, bias.len(), bias.to_vec())?,
        ),
    ];
    for (name, m) in matrices {
        write_payload(&out_dir.join(name), &Payload::Matrix(m))?;
    }
    Ok(())
}

/// Runs the whole experiment described by `cfg` and writes its artifacts.
pub fn train_toy(cfg: &RunConfig, out_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    write_atomic(
        &out_dir.join("config.txt"),
        cfg.to_config_string().as_bytes(),
    )?;

    let toy = cfg.toy_config();
    let task_a = cfg.task(cfg.task_a);
    let (model, report) = pretrain(toy, &task_a, &cfg.pretrain_options())?;
    write_pretrained(&model, out_dir)?;

    let data = cfg
        .task(cfg.task_b)
        .generate(toy.vocab_size, toy.seq_len, toy.n_classes)?;
    let baseline_eval = evaluate(&model, &data.eval)?;

    // Q and V draw from distinct streams of the same seed.
    let init = |p: Projection, w| {
        let seed = match p {
            Projection::Q => cfg.seed,
            Projection::V => cfg.seed.wrapping_add(1),
        };
        let ic = InitConfig {
            seed,
            ..cfg.init_config()
        };
        init_adapter(&w, cfg.ranks, &ic)
    };
    let q = match cfg.has_projection(Projection::Q) {
        true => Some(init(Projection::Q, model.stacked_wq())?),
        false => None,
    };
    let v = match cfg.has_projection(Projection::V) {
        true => Some(init(Projection::V, model.stacked_wv())?),
        false => None,
    };

    let opts = cfg.finetune_options();
    let craft = craft_finetune(&model, q, v, &data.train, &opts)?;
    let head_only = head_only_finetune(&model, &data.train, &opts)?;

    let adapters = craft.model.adapters().expect("craft-adapt mode");
    for (name, a) in [
        ("adapter_q.crft", &adapters.q),
        ("adapter_v.crft", &adapters.v),
    ] {
        if let Some(a) = a {
            write_payload(&out_dir.join(name), &Payload::Adapter(a.clone()))?;
        }
    }
    write_atomic(
        &out_dir.join("loss_craft.txt"),
        loss_curve_text(&craft.loss_curve).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join("loss_head_only.txt"),
        loss_curve_text(&head_only.loss_curve).as_bytes(),
    )?;

    let summary = TrainSummary {
        pretrain_steps: report.steps,
        pretrain_eval: report.eval,
        baseline_eval,
        craft_eval: evaluate(&craft.model, &data.eval)?,
        head_only_eval: evaluate(&head_only.model, &data.eval)?,
        tucker_params: trainable_param_count(cfg.ranks, cfg.projections.len()),
        head_params: model.head_param_count(),
        task_a: cfg.task_a,
        task_b: cfg.task_b,
    };
    write_atomic(
        &out_dir.join("summary.txt"),
        summary.to_records().as_bytes(),
    )?;
    Ok(summary)
}
