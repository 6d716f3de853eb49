use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use craft::analysis::{
    dispersion, param_scaling, storage_report, LayerProjections, Method, ScalingSettings,
};
use craft::io::{decode, write_atomic, write_payload, Payload, RunConfig};
use craft::pipeline::train_toy;
use craft::{
    approximation_error, compression_counts, hosvd, reconstruct, CraftError, Matrix, Tensor3,
    TuckerRanks,
};

#[derive(Parser)]
#[command(
    name = "craft",
    version,
    about = "Cross-layer Tucker adaptation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Truncated HOSVD of a stacked weight tensor.
    Decompose {
        /// One tensor file, or one matrix file per layer in layer order.
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Comma-separated r1,r2,r3.
        #[arg(long)]
        ranks: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Rebuild the dense tensor from a factors file.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pre-train the toy model, adapt it and write all artifacts.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pooled-PCA dispersion of Q, K and V rows, per layer.
    Analyze {
        /// Exactly three files, Q then K then V; stacked tensors or single matrices.
        #[arg(long, num_args = 3, required = true)]
        weights: Vec<PathBuf>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Trainable-parameter counts over a grid of depths.
    Scaling {
        #[arg(long)]
        d: usize,
        /// Comma-separated depths; may be empty.
        #[arg(long, allow_hyphen_values = true)]
        layers: String,
        #[arg(long, default_value = "24,100,100")]
        craft_ranks: String,
        #[arg(long, default_value_t = 8)]
        matrix_rank: usize,
        #[arg(long, default_value_t = 8)]
        lotr_rank: usize,
        #[arg(long, default_value_t = 2)]
        projections: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dense versus factored storage of adapted projections.
    Storage {
        /// Comma-separated I1,I2,I3.
        #[arg(long)]
        dims: String,
        #[arg(long)]
        ranks: String,
        #[arg(long, default_value_t = 2)]
        projections: usize,
    },
}

fn exit_code(err: &CraftError) -> u8 {
    match err {
        CraftError::Format(_)
        | CraftError::Checksum { .. }
        | CraftError::Config { .. }
        | CraftError::DimensionMismatch(_)
        | CraftError::NonFinite { .. }
        | CraftError::Empty(_)
        | CraftError::InvalidParameter { .. } => 2,
        CraftError::RankOutOfRange { .. } => 3,
        CraftError::Convergence { .. } => 4,
        CraftError::PretrainFailure { .. } => 5,
        CraftError::Divergence { .. } => 6,
        _ => 1,
    }
}

fn parse_triple(field: &'static str, text: &str) -> Result<[usize; 3], CraftError> {
    let values: Vec<usize> = text
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CraftError::InvalidParameter {
            name: field,
            reason: format!("expected three comma-separated integers, got {text:?}"),
        })?;
    values.try_into().map_err(|_| CraftError::InvalidParameter {
        name: field,
        reason: format!("expected exactly three values, got {text:?}"),
    })
}

fn parse_list(field: &'static str, text: &str) -> Result<Vec<usize>, CraftError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|v| {
            v.trim().parse().map_err(|_| CraftError::InvalidParameter {
                name: field,
                reason: format!("{v:?} is not a non-negative integer"),
            })
        })
        .collect()
}

fn read(path: &Path) -> Result<Payload, CraftError> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        CraftError::Format(m) => CraftError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn read_stack(paths: &[PathBuf]) -> Result<Tensor3, CraftError> {
    let payloads = paths
        .iter()
        .map(|p| read(p))
        .collect::<Result<Vec<_>, _>>()?;
    match payloads.as_slice() {
        [Payload::Tensor(t)] => Ok(t.clone()),
        _ => {
            let mats = payloads
                .into_iter()
                .zip(paths)
                .map(|(p, path)| match p {
                    Payload::Matrix(m) => Ok(m),
                    other => Err(CraftError::Format(format!(
                        "{}: expected a matrix file, found kind {:?}",
                        path.display(),
                        other.kind()
                    ))),
                })
                .collect::<Result<Vec<Matrix>, _>>()?;
            Tensor3::stack_layers(&mats)
        }
    }
}

fn layers_of(path: &Path) -> Result<Vec<Matrix>, CraftError> {
    match read(path)? {
        Payload::Matrix(m) => Ok(vec![m]),
        Payload::Tensor(t) => (0..t.dims()[0]).map(|l| t.layer(l)).collect(),
        other => Err(CraftError::Format(format!(
            "{}: expected a tensor or matrix file, found kind {:?}",
            path.display(),
            other.kind()
        ))),
    }
}

fn run(cli: Cli) -> Result<(), CraftError> {
    match cli.command {
        Command::Decompose {
            input,
            ranks,
            output,
        } => {
            let w = read_stack(&input)?;
            let ranks = TuckerRanks(parse_triple("ranks", &ranks)?);
            let factors = hosvd(&w, ranks)?;
            let err = approximation_error(&w, &factors)?;
            let counts = compression_counts(w.dims(), ranks)?;
            write_payload(&output, &Payload::TuckerFactors(factors))?;
            println!(
                "error absolute={:?} relative={:?}",
                err.absolute, err.relative
            );
            println!(
                "compression dense={} factor={} ratio={:?}",
                counts.dense,
                counts.factor,
                counts.ratio()
            );
        }
        Command::Reconstruct { input, output } => {
            let factors = match read(&input)? {
                Payload::TuckerFactors(f) => f,
                Payload::Adapter(a) => a.factors().clone(),
                other => {
                    return Err(CraftError::Format(format!(
                        "{}: expected a factors file, found kind {:?}",
                        input.display(),
                        other.kind()
                    )))
                }
            };
            write_payload(&output, &Payload::Tensor(reconstruct(&factors)))?;
        }
        Command::TrainToy { config, out_dir } => {
            let cfg = RunConfig::parse(&fs::read_to_string(&config)?)?;
            let summary = train_toy(&cfg, &out_dir)?;
            print!("{}", summary.to_records());
        }
        Command::Analyze { weights, k, output } => {
            let [q, kk, v]: [Vec<Matrix>; 3] = [
                layers_of(&weights[0])?,
                layers_of(&weights[1])?,
                layers_of(&weights[2])?,
            ];
            if q.len() != kk.len() || q.len() != v.len() {
                return Err(CraftError::DimensionMismatch(format!(
                    "layer counts differ: Q {}, K {}, V {}",
                    q.len(),
                    kk.len(),
                    v.len()
                )));
            }
            let layers: Vec<LayerProjections> = q
                .into_iter()
                .zip(kk)
                .zip(v)
                .map(|((q, k), v)| LayerProjections { q, k, v })
                .collect();
            let report = dispersion(&layers, k)?;
            write_atomic(&output, report.to_records().as_bytes())?;
            print!("{}", report.to_table());
        }
        Command::Scaling {
            d,
            layers,
            craft_ranks,
            matrix_rank,
            lotr_rank,
            projections,
            out,
        } => {
            let n_layers = parse_list("layers", &layers)?;
            let settings = ScalingSettings {
                matrix_rank,
                lotr_rank,
                craft_ranks: TuckerRanks(parse_triple("craft-ranks", &craft_ranks)?),
                n_projections: projections,
            };
            let table = param_scaling(&Method::ALL, &n_layers, &[d], settings);
            write_atomic(&out, table.to_records().as_bytes())?;
            print!("{}", table.to_table());
        }
        Command::Storage {
            dims,
            ranks,
            projections,
        } => {
            let report = storage_report(
                parse_triple("dims", &dims)?,
                TuckerRanks(parse_triple("ranks", &ranks)?),
                projections,
            )?;
            print!("{}", report.to_record());
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
