//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Every criterion runs even when an earlier one fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use craft::analysis::{
    dispersion, param_scaling, LayerProjections, Method, ProjectionKind, ScalingSettings,
};
use craft::io::{decode, encode, Payload, RunConfig};
use craft::pipeline::train_toy;
use craft::toy::{SyntheticTask, TaskRule, ToyConfig, ToyModel};
use craft::{
    approximation_error, compression_counts, hosvd, init_adapter, trainable_param_count,
    CraftAdapter, InitConfig, Matrix, Tensor3, TuckerRanks,
};

type Outcome = Result<String, String>;

fn normal_tensor(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor3 {
    Tensor3::from_fn(dims, |_, _, _| rng.sample(StandardNormal))
}

fn random_ranks(dims: [usize; 3], rng: &mut ChaCha8Rng) -> TuckerRanks {
    TuckerRanks(dims.map(|d| rng.random_range(1..=d)))
}

fn random_dims(rng: &mut ChaCha8Rng, max: [usize; 3]) -> [usize; 3] {
    max.map(|m| rng.random_range(1..=m))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Eigenvalues of a symmetric matrix by classical (largest pivot) Jacobi,
/// written independently of the library for use as an oracle.
fn oracle_eig(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    let scale: f64 = a
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(1e-300);
    for _ in 0..(50 * n * n).max(1) {
        let (mut p, mut q, mut best) = (0, 0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                if a[i][j].abs() > best {
                    best = a[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if best <= 1e-15 * scale {
            break;
        }
        let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..n {
            let (akp, akq) = (a[k][p], a[k][q]);
            a[k][p] = c * akp - s * akq;
            a[k][q] = s * akp + c * akq;
        }
        for k in 0..n {
            let (apk, aqk) = (a[p][k], a[q][k]);
            a[p][k] = c * apk - s * aqk;
            a[q][k] = s * apk + c * aqk;
        }
        for row in v.iter_mut() {
            let (vp, vq) = (row[p], row[q]);
            row[p] = c * vp - s * vq;
            row[q] = s * vp + c * vq;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| v.iter().map(|row| row[i]).collect())
        .collect();
    (values, vectors)
}

/// Squared singular values of the mode-`n` unfolding, from an explicit
/// fibre enumeration and the Gram matrix.
fn oracle_mode_spectrum(w: &Tensor3, mode: usize) -> Vec<f64> {
    let [a, b, c] = w.dims();
    let n_rows = w.dims()[mode - 1];
    let mut gram = vec![vec![0.0; n_rows]; n_rows];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                for i2 in 0..a {
                    for j2 in 0..b {
                        for k2 in 0..c {
                            let (r1, r2, same) = match mode {
                                1 => (i, i2, j == j2 && k == k2),
                                2 => (j, j2, i == i2 && k == k2),
                                _ => (k, k2, i == i2 && j == j2),
                            };
                            if same {
                                gram[r1][r2] += w.get(i, j, k) * w.get(i2, j2, k2);
                            }
                        }
                    }
                }
            }
        }
    }
    oracle_eig(&gram)
        .0
        .into_iter()
        .map(|x| x.max(0.0))
        .collect()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for case in 0..60 {
        let dims = match case {
            0 => [12, 64, 64],
            1 => [4, 8, 8],
            _ => random_dims(&mut rng, [12, 64, 64]),
        };
        let ranks = match case % 3 {
            0 => TuckerRanks::new(1, 1, 1),
            _ => random_ranks(dims, &mut rng),
        };
        let w = normal_tensor(dims, &mut rng);
        let cfg = InitConfig {
            epsilon: 0.0,
            sigma: 0.02,
            seed: case,
        };
        let adapter = init_adapter(&w, ranks, &cfg).map_err(|e| e.to_string())?;
        for n in 1..=3 {
            check(
                adapter.adaptation(n) == &Matrix::identity(ranks.0[n - 1]),
                || format!("J{n} is not the identity"),
            )?;
        }
        let rel = adapter.adapted_tensor().sub(&w).unwrap().frobenius_norm() / w.frobenius_norm();
        worst = worst.max(rel);
        cases += 1;
    }
    check(worst <= 1e-12, || {
        format!("worst relative deviation {worst:e}")
    })?;
    Ok(format!(
        "{cases} tensors up to 12x64x64, worst relative deviation {worst:e}"
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_orth, mut worst_full, mut worst_bound) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let cases = 60;
    for case in 0..cases {
        let dims = random_dims(&mut rng, [6, 7, 6]);
        let w = normal_tensor(dims, &mut rng);
        let norm = w.frobenius_norm();

        let full = hosvd(&w, TuckerRanks(dims)).map_err(|e| e.to_string())?;
        worst_full = worst_full.max(approximation_error(&w, &full).unwrap().relative);

        let ranks = random_ranks(dims, &mut rng);
        let f = hosvd(&w, ranks).map_err(|e| e.to_string())?;
        for n in 1..=3 {
            worst_orth = worst_orth.max(f.factor(n).orthonormality_defect());
        }
        let err2 = approximation_error(&w, &f).unwrap().absolute.powi(2);
        let mut discarded = 0.0;
        for n in 1..=3 {
            discarded += oracle_mode_spectrum(&w, n)[ranks.0[n - 1]..]
                .iter()
                .sum::<f64>();
        }
        // Positive means the bound is violated, measured against ‖W‖².
        worst_bound = worst_bound.max((err2 - discarded) / (norm * norm));
        check(err2 <= discarded + 1e-12 * norm * norm, || {
            format!("case {case}: error² {err2:e} exceeds discarded mass {discarded:e}")
        })?;
    }
    check(worst_orth <= 1e-10, || {
        format!("orthonormality defect {worst_orth:e}")
    })?;
    check(worst_full <= 1e-10, || {
        format!("full-rank relative error {worst_full:e}")
    })?;
    Ok(format!(
        "{cases} cases: orthonormality {worst_orth:e}, full-rank error {worst_full:e}, \
         max (error² - bound)/‖W‖² {worst_bound:e}"
    ))
}

fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    let scale = a.frobenius_norm().max(b.frobenius_norm());
    if scale == 0.0 {
        0.0
    } else {
        a.sub(b).unwrap().frobenius_norm() / scale
    }
}

/// Central differences of `loss` with respect to every entry of `J_mode`.
fn fd_grad(
    adapter: &CraftAdapter,
    mode: usize,
    h: f64,
    loss: &dyn Fn(&CraftAdapter) -> f64,
) -> Matrix {
    let j = adapter.adaptation(mode).clone();
    let (r, _) = j.shape();
    Matrix::from_fn(r, r, |a, b| {
        let shifted = |delta: f64| {
            let mut t = adapter.clone();
            let jp = Matrix::from_fn(r, r, |x, y| {
                j.get(x, y) + if (x, y) == (a, b) { delta } else { 0.0 }
            });
            t.set_adaptation(mode, jp).unwrap();
            loss(&t)
        };
        (shifted(h) - shifted(-h)) / (2.0 * h)
    })
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_adapter = 0.0f64;
    let adapter_cases = 24;
    for case in 0..adapter_cases {
        let dims = random_dims(&mut rng, [4, 6, 6]);
        let ranks = random_ranks(dims, &mut rng);
        let w = normal_tensor(dims, &mut rng);
        let target = normal_tensor(dims, &mut rng);
        let cfg = InitConfig {
            epsilon: 10.0,
            sigma: 0.05,
            seed: case,
        };
        let adapter = init_adapter(&w, ranks, &cfg).map_err(|e| e.to_string())?;
        let loss = |a: &CraftAdapter| {
            0.5 * a
                .adapted_tensor()
                .sub(&target)
                .unwrap()
                .frobenius_norm()
                .powi(2)
        };
        let upstream = adapter.adapted_tensor().sub(&target).unwrap();
        let grads = adapter.grad_j(&upstream).map_err(|e| e.to_string())?;
        for n in 1..=3 {
            let fd = fd_grad(&adapter, n, 1e-5, &loss);
            worst_adapter = worst_adapter.max(rel_diff(grads.get(n), &fd));
        }
    }

    let mut worst_model = 0.0f64;
    let model_cases = 6;
    for case in 0..model_cases {
        let cfg = ToyConfig {
            n_layers: 2 + case % 2,
            d_model: 4 + 2 * (case % 3),
            vocab_size: 8,
            seq_len: 5,
            n_classes: 2 + case % 2,
            seed: case as u64,
        };
        let mut model = ToyModel::new(cfg).map_err(|e| e.to_string())?;
        // A nonzero head so the loss depends on the backbone.
        let task = SyntheticTask {
            rule: TaskRule::Majority,
            seed: case as u64,
            train_size: 6,
            eval_size: 2,
        };
        let batch = task
            .generate(cfg.vocab_size, cfg.seq_len, cfg.n_classes)
            .unwrap()
            .train;
        let head_seed = case as u64 + 50;
        let mut hrng = ChaCha8Rng::seed_from_u64(head_seed);
        model = randomized_head(model, &mut hrng);
        let dims = [cfg.n_layers, cfg.d_model, cfg.d_model];
        let ranks = TuckerRanks([cfg.n_layers.min(2), cfg.d_model - 1, cfg.d_model]);
        let ic = InitConfig {
            epsilon: 10.0,
            sigma: 0.05,
            seed: case as u64,
        };
        let q = init_adapter(&model.stacked_wq(), ranks, &ic).unwrap();
        let v = init_adapter(
            &model.stacked_wv(),
            ranks,
            &InitConfig {
                seed: ic.seed + 100,
                ..ic
            },
        )
        .unwrap();
        assert_eq!(q.dims(), dims);
        let adapted = model
            .clone()
            .with_adapters(Some(q.clone()), Some(v.clone()))
            .unwrap();
        let grads = adapted.loss_and_grads(&batch).map_err(|e| e.to_string())?;
        for (which, adapter, g) in [
            ("Q", &q, grads.q.as_ref().unwrap()),
            ("V", &v, grads.v.as_ref().unwrap()),
        ] {
            let loss = |a: &CraftAdapter| {
                let (qa, va) = if which == "Q" {
                    (a.clone(), v.clone())
                } else {
                    (q.clone(), a.clone())
                };
                let m = model.clone().with_adapters(Some(qa), Some(va)).unwrap();
                m.loss_and_grads(&batch).unwrap().loss
            };
            for n in 1..=3 {
                let fd = fd_grad(adapter, n, 1e-5, &loss);
                worst_model = worst_model.max(rel_diff(g.get(n), &fd));
            }
        }
    }
    check(worst_adapter <= 1e-5, || {
        format!("adapter-level relative error {worst_adapter:e}")
    })?;
    check(worst_model <= 1e-4, || {
        format!("model-level relative error {worst_model:e}")
    })?;
    Ok(format!(
        "{adapter_cases} adapter configs worst {worst_adapter:e}, {model_cases} model configs worst {worst_model:e}"
    ))
}

/// Replaces the zero-initialised head by a random one.
fn randomized_head(model: ToyModel, rng: &mut ChaCha8Rng) -> ToyModel {
    let cfg = *model.config();
    let head = Matrix::from_fn(cfg.d_model, cfg.n_classes, |_, _| {
        rng.sample(StandardNormal)
    });
    let bias: Vec<f64> = (0..cfg.n_classes)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    model.with_head(head, bias).expect("head shape matches")
}

fn criterion_4() -> Outcome {
    let count = trainable_param_count(TuckerRanks::new(24, 100, 100), 2);
    check(count == 41_152, || {
        format!("trainable_param_count = {count}")
    })?;
    let depths = [12, 24, 48, 72, 96];
    let widths = [768, 1024, 4096];
    let settings = ScalingSettings::default();
    let table = param_scaling(&[Method::Craft, Method::Lora], &depths, &widths, settings);
    check(table.rows.len() == 30, || {
        format!("{} rows", table.rows.len())
    })?;
    for row in &table.rows {
        match row.method {
            Method::Craft => check(row.params == 41_152, || format!("craft row {row:?}"))?,
            _ => {
                let per_layer = (settings.matrix_rank * 2 * row.d * settings.n_projections) as u64;
                check(row.params == row.n_layers as u64 * per_layer, || {
                    format!("lora row {row:?}")
                })?
            }
        }
    }
    Ok(format!(
        "41152 trainable, CRAFT constant over {} (N_L, d) pairs, LoRA linear in N_L",
        depths.len() * widths.len()
    ))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let s = train_toy(&cfg, &dir.path().join("default")).map_err(|e| e.to_string())?;
    check(s.task_b == TaskRule::MajorityFlipped, || {
        "adaptation task is not the label flip".into()
    })?;
    let (craft, head) = (s.craft_eval.accuracy, s.head_only_eval.accuracy);
    check(craft >= 0.8, || format!("CRAFT eval accuracy {craft}"))?;
    check(craft > head, || {
        format!("CRAFT {craft} does not exceed head-only {head}")
    })?;

    let frozen = RunConfig {
        epsilon: 0.0,
        steps: 0,
        ..cfg.clone()
    };
    let z = train_toy(&frozen, &dir.path().join("frozen")).map_err(|e| e.to_string())?;
    let dl = (z.craft_eval.loss - z.baseline_eval.loss).abs();
    let da = (z.craft_eval.accuracy - z.baseline_eval.accuracy).abs();
    check(dl <= 1e-10 && da <= 1e-10, || {
        format!("identity adapter moved metrics: loss {dl:e}, accuracy {da:e}")
    })?;

    let elapsed = start.elapsed().as_secs_f64();
    check(elapsed < 120.0, || format!("took {elapsed:.1}s"))?;
    Ok(format!(
        "flip task: CRAFT {craft:.4} vs head-only {head:.4} (pretrained {:.4}); identity run diff {dl:e}; {elapsed:.1}s",
        s.baseline_eval.accuracy
    ))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    let k = 2;
    for _ in 0..20 {
        let d_out = rng.random_range(3..9);
        let d_in = rng.random_range(3..7);
        let mut m = || Matrix::from_fn(d_out, d_in, |_, _| rng.sample::<f64, _>(StandardNormal));
        let layer = LayerProjections {
            q: m(),
            k: m(),
            v: m(),
        };
        let report = dispersion(std::slice::from_ref(&layer), k).map_err(|e| e.to_string())?;

        // Oracle: pooled rows, sample covariance and eigenvectors computed here.
        let rows: Vec<Vec<f64>> = ProjectionKind::ALL
            .iter()
            .flat_map(|&kind| {
                let w = layer.get(kind);
                (0..w.rows()).map(move |i| w.row(i).to_vec())
            })
            .collect();
        let count = rows.len() as f64;
        let mean: Vec<f64> = (0..d_in)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / count)
            .collect();
        let cov: Vec<Vec<f64>> = (0..d_in)
            .map(|a| {
                (0..d_in)
                    .map(|b| {
                        rows.iter()
                            .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                            .sum::<f64>()
                            / (count - 1.0)
                    })
                    .collect()
            })
            .collect();
        let (values, vectors) = oracle_eig(&cov);
        check(values[k - 1] - values[k] >= 1e-6, || {
            "spectral gap below 1e-6".into()
        })?;
        for kind in ProjectionKind::ALL {
            let w = layer.get(kind);
            let mut total = 0.0;
            for i in 0..w.rows() {
                let centred: Vec<f64> = w.row(i).iter().zip(&mean).map(|(x, m)| x - m).collect();
                for p in &vectors[..k] {
                    total += p
                        .iter()
                        .zip(&centred)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        .powi(2);
                }
            }
            let want = (total / w.rows() as f64).sqrt();
            let got = report.layers[0].sigma_of(kind);
            worst = worst.max((got - want).abs() / want);
        }
    }
    check(worst <= 1e-10, || format!("sigma relative error {worst:e}"))?;

    let ring = |radius: f64, phase: f64| {
        Matrix::from_fn(8, 5, |i, j| {
            let angle = phase + std::f64::consts::TAU * i as f64 / 8.0;
            match j {
                0 => radius * angle.cos(),
                1 => radius * angle.sin(),
                _ => 0.0,
            }
        })
    };
    let layer = LayerProjections {
        q: ring(10.0, 0.1),
        k: ring(1.0, 0.2),
        v: ring(1.0, 0.3),
    };
    let [sq, sk, sv] = dispersion(&[layer], 2).map_err(|e| e.to_string())?.layers[0].sigma;
    check(sq > sk && sq > sv, || {
        format!("sigma Q {sq}, K {sk}, V {sv}")
    })?;
    Ok(format!("20 random layers worst relative error {worst:e}; radius construction Q {sq:.3} > K {sk:.3}, V {sv:.3}"))
}

fn criterion_7() -> Outcome {
    let counts = compression_counts([24, 1024, 1024], TuckerRanks::new(24, 100, 100))
        .map_err(|e| e.to_string())?;
    let ratio = counts.ratio();
    check(counts.dense == 25_165_824, || {
        format!("dense {}", counts.dense)
    })?;
    check(counts.factor == 466_352, || {
        format!(
            "factor {} (expected 466352), dense {}, ratio {ratio:.3}",
            counts.factor, counts.dense
        )
    })?;
    check((ratio - 54.0).abs() < 0.5, || format!("ratio {ratio}"))?;
    Ok(format!(
        "dense {} vs factor {}, ratio {ratio:.3}",
        counts.dense, counts.factor
    ))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        steps: 20,
        ..RunConfig::default()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_toy(&cfg, &a).map_err(|e| e.to_string())?;
    train_toy(&cfg, &b).map_err(|e| e.to_string())?;
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let (x, y) = (
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
        );
        check(x == y, || {
            format!("{name:?} differs between identical runs")
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut payloads = Vec::new();
    for case in 0..10u64 {
        let dims = random_dims(&mut rng, [4, 6, 5]);
        let w = normal_tensor(dims, &mut rng);
        let ranks = random_ranks(dims, &mut rng);
        payloads.push(Payload::Matrix(w.unfold(2).unwrap()));
        payloads.push(Payload::TuckerFactors(hosvd(&w, ranks).unwrap()));
        payloads.push(Payload::Adapter(
            init_adapter(
                &w,
                ranks,
                &InitConfig {
                    seed: case,
                    ..Default::default()
                },
            )
            .unwrap(),
        ));
        payloads.push(Payload::Tensor(w));
    }
    for p in &payloads {
        let bytes = encode(p);
        let back = decode(&bytes).map_err(|e| e.to_string())?;
        check(encode(&back) == bytes, || {
            format!("{:?} does not round-trip bitwise", p.kind())
        })?;
    }
    let small = encode(&Payload::TuckerFactors(
        hosvd(
            &normal_tensor([2, 3, 2], &mut rng),
            TuckerRanks::new(1, 2, 2),
        )
        .unwrap(),
    ));
    for i in 0..small.len() {
        let mut bad = small.clone();
        bad[i] ^= 0xA5;
        check(decode(&bad).is_err(), || {
            format!("corruption at byte {i} not detected")
        })?;
    }
    Ok(format!(
        "{} run files byte-identical, {} payloads round-trip, all {} single-byte corruptions detected",
        names.len(),
        payloads.len(),
        small.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        (
            "identity adapters preserve the pretrained tensor",
            criterion_1,
        ),
        (
            "HOSVD orthonormality, exactness and truncation bound",
            criterion_2,
        ),
        (
            "adapter and model gradients match finite differences",
            criterion_3,
        ),
        ("trainable-parameter counts and scaling", criterion_4),
        ("toy label-flip adaptation beats head-only", criterion_5),
        ("dispersion matches oracle and radius ordering", criterion_6),
        ("storage accounting", criterion_7),
        ("determinism and serialization", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
