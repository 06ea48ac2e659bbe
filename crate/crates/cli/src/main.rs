use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use desdis_core::data::{synth_dataset, PatchDataset, SynthConfig};
use desdis_core::eval::evaluate;
use desdis_core::model::{build_spec, count_params, Arch, Checkpoint, DescriptorNet, NetVariant};
use desdis_core::theory::{closed_form_student, numeric_oracle, TripletDistanceRecord};
use desdis_core::train::{distill_student, train_teacher, TrainConfig, TrainOutcome};

#[derive(Parser)]
#[command(name = "desdis", version, about = "Train and distill local patch descriptors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic patch dataset.
    Synth(SynthArgs),
    /// Train a network on the triplet loss.
    TrainTeacher(TrainArgs),
    /// Train a student against a frozen teacher.
    Distill(DistillArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Compare the closed-form student optimum with gradient descent.
    VerifyProp1(Prop1Args),
    /// Print parameter counts of the model zoo.
    CountParams(CountArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 256)]
    points: usize,
    #[arg(long, default_value_t = 4)]
    per_point: usize,
    #[arg(long, default_value_t = 0.08)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    warp: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file; a default synthetic set is generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "desdis-32")]
    arch: String,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the train / held-out split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Keep parameters in 64-bit between steps.
    #[arg(long)]
    f64: bool,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    teacher_ckpt: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha_p: f64,
    #[arg(long, default_value_t = 15.0)]
    alpha_n: f64,
    /// Start the student from the teacher's weights (same architecture only).
    #[arg(long)]
    warm_start: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    ckpt: PathBuf,
    /// Evaluate on every point instead of the held-out split.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct Prop1Args {
    #[arg(long, default_value_t = 1000)]
    records: usize,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CountArgs {
    /// Single architecture; the whole zoo when omitted.
    #[arg(long)]
    arch: Option<String>,
    /// Also count batch-norm scale and shift.
    #[arg(long)]
    with_bn: bool,
    #[arg(long)]
    json: bool,
}

fn load_or_synth(path: Option<&Path>) -> Result<PatchDataset> {
    match path {
        Some(p) => PatchDataset::load(p).with_context(|| format!("loading dataset {}", p.display())),
        None => Ok(synth_dataset(&SynthConfig::default())?),
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let arch: Arch = a.arch.parse()?;
    let mut cfg = TrainConfig::desk(arch);
    cfg.batch_points = a.batch;
    cfg.epochs = a.epochs;
    cfg.lr = a.lr;
    cfg.margin = a.margin;
    cfg.seed = a.seed;
    cfg.split_seed = a.split_seed;
    if a.f64 {
        cfg.precision = desdis_core::optim::Precision::F64;
    }
    Ok(cfg)
}

fn finish(outcome: &TrainOutcome, out: Option<&Path>, json: bool) -> Result<()> {
    if let Some(p) = out {
        outcome
            .state
            .to_checkpoint()
            .save(p)
            .with_context(|| format!("writing checkpoint {}", p.display()))?;
    }
    if json {
        println!("{}", outcome.report.to_json()?);
    } else {
        print!("{}", outcome.report.to_table());
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let ds = synth_dataset(&SynthConfig {
        num_points: a.points,
        patches_per_point: a.per_point,
        noise_level: a.noise,
        warp: a.warp,
        seed: a.seed,
    })?;
    ds.save(&a.out)
        .with_context(|| format!("writing dataset {}", a.out.display()))?;
    if a.json {
        println!("{}", json!({ "patches": ds.len(), "points": ds.num_points(), "out": a.out }));
    } else {
        println!("wrote {} patches of {} points to {}", ds.len(), ds.num_points(), a.out.display());
    }
    Ok(())
}

fn distill(a: &DistillArgs) -> Result<()> {
    let ds = load_or_synth(a.train.data.as_deref())?;
    let ck = Checkpoint::load(&a.teacher_ckpt)
        .with_context(|| format!("loading teacher {}", a.teacher_ckpt.display()))?;
    let teacher = DescriptorNet::from_checkpoint(&ck)?;
    let mut cfg = train_config(&a.train)?;
    cfg.alpha_p = a.alpha_p;
    cfg.alpha_n = a.alpha_n;
    cfg.warm_start = a.warm_start;
    let outcome = distill_student(&ds, &teacher, &cfg)?;
    finish(&outcome, a.train.out.as_deref(), a.train.json)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ds = load_or_synth(a.data.as_deref())?;
    let ck = Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let net = DescriptorNet::from_checkpoint(&ck)?;
    let points: Vec<usize> = if a.all {
        (0..ds.num_points()).collect()
    } else {
        ds.split(0.1, a.split_seed).heldout
    };
    let e = evaluate(&net, &ds, &points)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&json!({ "arch": ck.arch_name, "evaluation": e }))?);
    } else {
        println!("{:<22}{}", "arch", ck.arch_name);
        println!("{:<22}{}", "points", points.len());
        println!("{:<22}{:.4}", "fpr95", e.fpr95);
        println!("{:<22}{:.4}", "matching_map", e.matching_map);
        println!("{:<22}{:.4}", "mean_pos_distance", e.mean_pos);
        println!("{:<22}{:.4}", "mean_neg_distance", e.mean_neg);
    }
    Ok(())
}

fn verify_prop1(a: &Prop1Args) -> Result<()> {
    use rand::Rng;
    if a.records == 0 {
        bail!("--records must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let sink: Box<dyn std::io::Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None if a.json => Box::new(std::io::sink()),
        None => Box::new(std::io::stdout()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    csv.write_record([
        "alpha_p", "alpha_n", "d_t_pos", "d_t_neg", "closed_pos", "closed_neg", "numeric_pos", "numeric_neg", "gap",
        "feasible", "hinge_active",
    ])?;
    let (mut max_gap, mut active, mut feasible) = (0.0f64, 0usize, 0usize);
    for _ in 0..a.records {
        let rec = TripletDistanceRecord {
            d_t_pos: rng.gen_range(0.0..2.0),
            d_t_neg: rng.gen_range(0.0..2.0),
            alpha_p: rng.gen_range(0.1..30.0),
            alpha_n: rng.gen_range(0.1..30.0),
            margin: a.margin,
        };
        let closed = closed_form_student(&rec)?;
        let num = numeric_oracle(&rec, (rec.d_t_pos.max(2.0), 0.0))?;
        let gap = (num.optimum.d_pos - closed.d_pos)
            .abs()
            .max((num.optimum.d_neg - closed.d_neg).abs());
        max_gap = max_gap.max(gap);
        active += num.hinge_active_throughout as usize;
        feasible += closed.is_feasible() as usize;
        csv.serialize((
            rec.alpha_p,
            rec.alpha_n,
            rec.d_t_pos,
            rec.d_t_neg,
            closed.d_pos,
            closed.d_neg,
            num.optimum.d_pos,
            num.optimum.d_neg,
            gap,
            closed.is_feasible(),
            num.hinge_active_throughout,
        ))?;
    }
    csv.flush()?;
    let n = a.records as f64;
    let summary = json!({
        "records": a.records,
        "max_gap": max_gap,
        "condition_fraction": active as f64 / n,
        "feasible_fraction": feasible as f64 / n,
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn count(a: &CountArgs) -> Result<()> {
    let archs: Vec<Arch> = match &a.arch {
        Some(s) => vec![s.parse()?],
        None => vec![
            Arch::DesDis(8),
            Arch::DesDis(16),
            Arch::DesDis(24),
            Arch::DesDis(32),
            Arch::Teacher7,
            Arch::Net(NetVariant::I),
            Arch::Net(NetVariant::II),
            Arch::Net(NetVariant::III),
            Arch::Net(NetVariant::IV),
        ],
    };
    let mut rows = Vec::new();
    for arch in archs {
        let spec = build_spec(arch)?;
        rows.push((arch.to_string(), count_params(&spec, a.with_bn), spec.layers.len()));
    }
    if a.json {
        let v: Vec<_> = rows
            .iter()
            .map(|(name, n, layers)| json!({ "arch": name, "params": n, "layers": layers }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("{:<12}{:>7}{:>12}{:>10}", "arch", "layers", "params", "millions");
        for (name, n, layers) in rows {
            println!("{name:<12}{layers:>7}{n:>12}{:>10.3}", n as f64 / 1e6);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    desdis_core::configure_threads();
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainTeacher(a) => {
            let ds = load_or_synth(a.data.as_deref())?;
            let outcome = train_teacher(&ds, &train_config(a)?)?;
            finish(&outcome, a.out.as_deref(), a.json)
        }
        Command::Distill(a) => distill(a),
        Command::Eval(a) => eval(a),
        Command::VerifyProp1(a) => verify_prop1(a),
        Command::CountParams(a) => count(a),
    }
}
