//! `kgc`: train, evaluate and analyze block-term tensor-decomposition models
//! for knowledge-graph completion.
//!
//! Subcommands:
//!
//! - `train`: fit a model on a dataset directory and write a checkpoint,
//! - `eval`: filtered ranking metrics of a checkpoint on a split,
//! - `diagnose`: trace-norm bound report for a checkpoint,
//! - `rules`: symmetry / antisymmetry / inverse learnability of a core.
//!
//! The `KGC_THREADS` environment variable caps the worker-thread count.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kgc_core::data::{load_dataset, Dataset, Split};
use kgc_core::diag;
use kgc_core::eval::{evaluate, EvalOptions, TieBreak};
use kgc_core::model::{checkpoint, build_preset_core, ModelPreset, PresetKind, TdbModel};
use kgc_core::reg::{RegConfig, RegKind};
use kgc_core::rules;
use kgc_core::tensor::DenseTensor3;
use kgc_core::train::{fit, Precision, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "kgc",
    about = "Knowledge-graph completion with block-term tensor-decomposition models",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write the checkpoint
    Train(TrainArgs),
    /// Filtered ranking metrics of a checkpoint
    Eval(EvalArgs),
    /// Trace-norm bound report of a checkpoint
    Diagnose(DiagnoseArgs),
    /// Rule-learnability report of a preset core or core file
    Rules(RulesArgs),
}

#[derive(Args)]
struct RegArgs {
    /// Regularizer: none, f2, n3 or ivr
    #[arg(long, default_value = "none")]
    reg: String,
    /// Norm power for ivr
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// First coefficient (row norms for ivr; the weight for f2/n3)
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    /// Second coefficient (pairwise norm products)
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    /// Third coefficient; defaults to lambda1
    #[arg(long)]
    lambda3: Option<f64>,
    /// Fourth coefficient; defaults to lambda2
    #[arg(long)]
    lambda4: Option<f64>,
}

impl RegArgs {
    fn build(&self) -> Result<RegConfig> {
        let kind = match self.reg.as_str() {
            "none" => RegKind::None,
            "f2" => RegKind::F2,
            "n3" => RegKind::N3,
            "ivr" => RegKind::Ivr,
            "dura" => bail!(
                "regularizer `dura` is not implemented (defined in external work; its formula \
                 is not reproduced here) -- use none, f2, n3 or ivr"
            ),
            other => bail!("unknown regularizer `{other}` (expected none, f2, n3 or ivr)"),
        };
        let cfg = RegConfig {
            kind,
            l1: self.lambda1,
            l2: self.lambda2,
            l3: self.lambda3.unwrap_or(self.lambda1),
            l4: self.lambda4.unwrap_or(self.lambda2),
            alpha: self.alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding train.txt / valid.txt / test.txt
    #[arg(long)]
    dataset: PathBuf,
    /// Model preset: cp, distmult, complex, simple, analogy, quate, tucker
    #[arg(long)]
    model: String,
    /// Total embedding dimension D
    #[arg(long)]
    dim: usize,
    /// Number of parts P (tucker only; other presets fix it)
    #[arg(long)]
    parts: Option<usize>,
    #[command(flatten)]
    reg: RegArgs,
    /// Learning rate
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Minibatch size
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Training epochs
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Random seed (init and batch order)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Validate every this many epochs (0 disables; the final model is kept)
    #[arg(long, default_value_t = 5)]
    eval_every: usize,
    /// Checkpoint output path
    #[arg(long, default_value = "model.ckpt.json")]
    checkpoint: PathBuf,
    /// Training log path (default: checkpoint path + .log)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Add inverse relations (head queries become tail queries)
    #[arg(long)]
    add_inverses: bool,
    /// Single-precision optimizer arithmetic
    #[arg(long)]
    f32: bool,
    /// Grid search: comma-separated alpha:lambda1:lambda2 triples; trains
    /// each, reports validation MRR and keeps the best checkpoint
    #[arg(long)]
    grid: Option<String>,
    /// Also print metrics as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Split to rank: train, valid or test
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    add_inverses: bool,
    /// Tie handling: optimistic or average
    #[arg(long, default_value = "optimistic")]
    tie_break: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Override the norm power (default: the checkpoint's, else 2.0)
    #[arg(long)]
    alpha: Option<f64>,
    /// Override lambda1/lambda4 (default: the checkpoint's, else 1.0)
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    lambda4: Option<f64>,
    /// Cell budget for materializing the score tensor
    #[arg(long, default_value_t = diag::DEFAULT_TENSOR_BUDGET)]
    tensor_budget: usize,
    /// Write the JSON report here as well
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RulesArgs {
    /// Constant-core preset to analyze
    #[arg(long, conflicts_with = "core")]
    model: Option<String>,
    /// JSON core file {"parts": P, "values": [P^3 numbers]}
    #[arg(long)]
    core: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn main() {
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Diagnose(args) => cmd_diagnose(args),
        Cmd::Rules(args) => cmd_rules(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn configure_threads() {
    if let Ok(threads) = std::env::var("KGC_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn load_data(dir: &Path, add_inverses: bool) -> Result<Dataset> {
    let data = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok(if add_inverses {
        data.with_inverses()
    } else {
        data
    })
}

fn build_preset(model: &str, dim: usize, parts: Option<usize>) -> Result<ModelPreset> {
    let kind = PresetKind::parse(model)?;
    let preset = match (kind, parts) {
        (PresetKind::Tucker, Some(p)) => ModelPreset::tucker_with_parts(p),
        (_, Some(p)) if p != kind.default_parts(dim) => bail!(
            "preset {} fixes parts to {}, got --parts {p}",
            kind.name(),
            kind.default_parts(dim)
        ),
        _ => ModelPreset::new(kind, dim),
    };
    if dim == 0 || dim % preset.parts != 0 {
        bail!("dimension {dim} is not divisible by parts {}", preset.parts);
    }
    Ok(preset)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let data = load_data(&args.dataset, args.add_inverses)?;
    let preset = build_preset(&args.model, args.dim, args.parts)?;
    let log = args
        .log
        .clone()
        .unwrap_or_else(|| args.checkpoint.with_extension("json.log"));

    let grid: Vec<(f64, f64, f64)> = match &args.grid {
        None => vec![(args.reg.alpha, args.reg.lambda1, args.reg.lambda2)],
        Some(spec) => parse_grid(spec)?,
    };

    let mut best: Option<(f64, TdbModel, RegConfig)> = None;
    for (alpha, l1, l2) in grid {
        let reg_args = RegArgs {
            reg: args.reg.reg.clone(),
            alpha,
            lambda1: l1,
            lambda2: l2,
            lambda3: args.reg.lambda3,
            lambda4: args.reg.lambda4,
        };
        let reg = reg_args.build()?;
        let cfg = TrainConfig {
            lr: args.lr,
            batch_size: args.batch,
            epochs: args.epochs,
            seed: args.seed,
            reg: reg.clone(),
            eval_every: (args.eval_every > 0).then_some(args.eval_every),
            precision: if args.f32 {
                Precision::Single
            } else {
                Precision::Double
            },
        };
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
        let model = TdbModel::new_random(
            &preset,
            data.n_entities(),
            data.n_relations(),
            args.dim,
            &mut rng,
        )?;
        let out = fit(model, &data, &cfg, Some(&log))?;
        let valid_mrr = if data.valid().is_empty() {
            f64::NAN
        } else {
            evaluate(&out.model, &data, Split::Valid, EvalOptions::default())?.mrr
        };
        if args.grid.is_some() {
            println!("grid alpha={alpha} lambda1={l1} lambda2={l2} -> valid mrr {valid_mrr:.6}");
        }
        if best
            .as_ref()
            .map_or(true, |(b, _, _)| valid_mrr.is_nan() || valid_mrr > *b)
        {
            best = Some((valid_mrr, out.model, reg));
        }
    }
    let (_, model, reg) = best.expect("at least one training run");

    checkpoint::save(&model, Some(&reg), &args.checkpoint)
        .with_context(|| format!("writing checkpoint {}", args.checkpoint.display()))?;
    println!("checkpoint written to {}", args.checkpoint.display());

    for (split, name) in [(Split::Valid, "valid"), (Split::Test, "test")] {
        if data.split(split).is_empty() {
            continue;
        }
        let metrics = evaluate(&model, &data, split, EvalOptions::default())?;
        println!("{}", metrics.to_tsv(name));
        if args.json {
            println!("{}", metrics.to_json(name));
        }
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut out = Vec::new();
    for item in spec.split(',') {
        let parts: Vec<&str> = item.split(':').collect();
        if parts.len() != 3 {
            bail!("grid entry `{item}` is not alpha:lambda1:lambda2");
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>().map_err(|e| anyhow::anyhow!("{e}: `{p}`")))
            .collect::<Result<_>>()?;
        out.push((nums[0], nums[1], nums[2]));
    }
    if out.is_empty() {
        bail!("empty grid");
    }
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, _) = checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let data = load_data(&args.dataset, args.add_inverses)?;
    if model.n_entities() != data.n_entities() || model.n_relations() != data.n_relations() {
        bail!(
            "checkpoint was trained on {} entities / {} relations but the dataset has {} / {}",
            model.n_entities(),
            model.n_relations(),
            data.n_entities(),
            data.n_relations()
        );
    }
    let split = Split::parse(&args.split)?;
    let opts = EvalOptions {
        tie_break: TieBreak::parse(&args.tie_break)?,
    };
    let metrics = evaluate(&model, &data, split, opts)?;
    println!("{}", metrics.to_tsv(split.name()));
    if args.json {
        println!("{}", metrics.to_json(split.name()));
    }
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let (model, stored_reg) = checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    // non-ivr training configs carry no meaningful coefficients; report the
    // bounds at unit weights then
    let base = match stored_reg {
        Some(reg) if reg.kind == RegKind::Ivr => reg,
        _ => RegConfig {
            kind: RegKind::Ivr,
            l1: 1.0,
            l2: 1.0,
            l3: 1.0,
            l4: 1.0,
            alpha: 2.0,
        },
    };
    let cfg = RegConfig {
        kind: RegKind::Ivr,
        l1: args.lambda1.unwrap_or(base.l1),
        l2: args.lambda2.unwrap_or(base.l2),
        l3: args.lambda3.unwrap_or(base.l3),
        l4: args.lambda4.unwrap_or(base.l4),
        alpha: args.alpha.unwrap_or(base.alpha),
    };
    let report = diag::check_bounds(&model, &cfg, args.tensor_budget)?;
    println!("mode trace norms  {:.4}  {:.4}  {:.4}", report.mode_norms[0], report.mode_norms[1], report.mode_norms[2]);
    println!("L(X; {})          {:.4}  (rounded {})", report.alpha, report.l_value, report.l_rounded);
    println!("bound 1           lhs {:.6}  rhs {:.6}  gap {:.6}", report.lhs1, report.rhs1, report.gap1);
    println!("bound 2           lhs {:.6}  rhs {:.6}  gap {:.6}", report.lhs2, report.rhs2, report.gap2);
    let json = report.to_json();
    if args.json {
        println!("{json}");
    }
    if let Some(out) = &args.out {
        std::fs::write(out, &json).with_context(|| format!("writing report {}", out.display()))?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_rules(args: RulesArgs) -> Result<()> {
    let core = match (&args.model, &args.core) {
        (Some(model), None) => {
            let kind = PresetKind::parse(model)?;
            if kind == PresetKind::Tucker {
                bail!("tucker's core is learned; pass --core <file> with the trained values");
            }
            let parts = kind.default_parts(0);
            build_preset_core(&ModelPreset::new(kind, parts), parts)?
        }
        (None, Some(path)) => load_core_file(path)?,
        _ => bail!("pass exactly one of --model <preset> or --core <file>"),
    };
    let report = rules::learnability_report(&core)?;
    print!("{}", report.to_text());
    if args.json {
        println!("{}", report.to_json());
    }
    Ok(())
}

fn load_core_file(path: &Path) -> Result<kgc_core::model::CoreTensor> {
    #[derive(serde::Deserialize)]
    struct CoreFile {
        parts: usize,
        values: Vec<f64>,
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading core file {}", path.display()))?;
    let file: CoreFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let p = file.parts;
    if file.values.len() != p * p * p {
        bail!(
            "core file has {} values but parts {p} needs {}",
            file.values.len(),
            p * p * p
        );
    }
    let values = DenseTensor3::from_values((p, p, p), file.values)?;
    Ok(kgc_core::model::CoreTensor::new(values, true)?)
}
