//! The `sabr` command line: argument parsing, configuration assembly and the
//! subcommands.

mod config;

pub use config::{
    assemble, write_effective, ConfigError, ModelSection, SabrConfig, EFFECTIVE_CONFIG_FILE,
};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Result, SabrError};
use crate::eval::{
    self, evaluate, mean_shape, render_svg, run_sweep, sample_record, write_metrics,
    write_sweep_csv, Axis, MotionFile, SweepPoint, MOTION_FILE,
};
use crate::geometry::{BodySpec, CameraIntrinsics};
use crate::model::motion_frames;
use crate::tensor::gradcheck;
use crate::train::{
    loss_gradcheck, loss_spikes, samples_from_dataset, train_loop, Checkpoint, TrainRun,
    CHECKPOINT_FILE,
};
use crate::world::{gen_dataset, read_dataset, write_dataset, Dataset, Split};

/// Largest relative finite-difference error `check-grad` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "sabr",
    version,
    about = "Video-conditioned climbing motion diffusion on a synthetic world",
    after_help = "Any configuration value can be overridden with a dotted flag, e.g. --train.learning_rate 5e-4"
)]
struct Cli {
    /// JSON configuration with sections world, model, schedule, train, eval.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory; nothing is written anywhere else.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Heldout,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    Data,
    Model,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample one motion for a record with the EMA weights.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        record: usize,
        /// Respaced sampling steps.
        #[arg(long, default_value_t = 250)]
        steps: usize,
        /// Fraction of route holds shown in the context frames.
        #[arg(long)]
        context_fraction: Option<f64>,
    },
    /// Score EMA samples against ground truth and write metrics.json.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "heldout")]
        split: SplitArg,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Write one SVG per frame of a sampled motion or a ground-truth record.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "record")]
        motion: Option<PathBuf>,
        #[arg(long)]
        record: Option<usize>,
    },
    /// Scaling sweep over data fraction or model size.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
    },
    /// Finite-difference checks of every primitive and the full model loss.
    CheckGrad {
        /// Probed coordinates per parameter tensor.
        #[arg(long, default_value_t = 4)]
        coords: usize,
    },
}

/// Pulls `--a.b value` and `--a.b=value` pairs out of `args`.
fn split_overrides(
    args: Vec<OsString>,
) -> std::result::Result<(Vec<OsString>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a
            .to_str()
            .and_then(|s| s.strip_prefix("--"))
            .filter(|s| s.split('=').next().is_some_and(|k| k.contains('.')))
        else {
            rest.push(a);
            continue;
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .and_then(|v| v.into_string().ok())
                    .ok_or_else(|| format!("--{flag} needs a value"))?;
                (flag.to_string(), v)
            }
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Runs the command line and returns the process exit status.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let args: Vec<OsString> = args.into_iter().collect();
    let (rest, overrides) = match split_overrides(args) {
        Ok(x) => x,
        Err(msg) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match assemble(
        cli.config.as_deref(),
        &overrides,
        cli.seed,
        cli.deterministic,
    ) {
        Ok(c) => c,
        Err(ConfigError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            return 2;
        }
        Err(ConfigError::Domain(e)) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match dispatch(cli.command, &cfg, &cli.out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command, cfg: &SabrConfig, out: &Path) -> Result<()> {
    write_effective(cfg, out)?;
    match cmd {
        Command::Gen { count } => gen(cfg, out, count),
        Command::Train {
            data,
            split,
            resume,
        } => train(cfg, out, &data, split, resume.as_deref()),
        Command::Sample {
            data,
            checkpoint,
            record,
            steps,
            context_fraction,
        } => sample(
            cfg,
            out,
            &data,
            &checkpoint,
            record,
            steps,
            context_fraction,
        ),
        Command::Eval {
            data,
            checkpoint,
            split,
            steps,
        } => evaluate_cmd(cfg, out, &data, &checkpoint, split, steps),
        Command::Render {
            data,
            motion,
            record,
        } => render(out, &data, motion.as_deref(), record),
        Command::Sweep { data, axis } => sweep(cfg, out, &data, axis),
        Command::CheckGrad { coords } => check_grad(cfg, coords),
    }
}

fn indices(ds: &Dataset, split: SplitArg) -> Vec<usize> {
    match split {
        SplitArg::Train => ds.split(Split::Train),
        SplitArg::Heldout => ds.split(Split::Heldout),
        SplitArg::All => (0..ds.records.len()).collect(),
    }
}

fn gen(cfg: &SabrConfig, out: &Path, count: usize) -> Result<()> {
    let ds = gen_dataset(
        &cfg.world,
        &BodySpec::climber(),
        &CameraIntrinsics::default(),
        cfg.seed,
        count,
    )?;
    write_dataset(&ds, out)?;
    let held = ds.split(Split::Heldout).len();
    println!(
        "wrote {count} records ({} train, {held} held out) to {}",
        count - held,
        out.display()
    );
    Ok(())
}

fn train(
    cfg: &SabrConfig,
    out: &Path,
    data: &Path,
    split: SplitArg,
    resume: Option<&Path>,
) -> Result<()> {
    let ds = read_dataset(data)?;
    let idx = indices(&ds, split);
    if idx.is_empty() {
        return Err(SabrError::Contract(
            "the selected split has no records".into(),
        ));
    }
    let model = cfg.model.build(&ds.manifest.config, &ds.manifest.body)?;
    let resume = resume
        .map(|p| Checkpoint::load(p, Some(&model)))
        .transpose()?;
    let samples = samples_from_dataset(&ds, &idx)?;
    let run = TrainRun {
        model,
        train: cfg.train.clone(),
        manifest_hash: ds.manifest.hash()?,
        out_dir: Some(out),
        resume,
        halt_at: None,
    };
    let ck = train_loop(&samples, run, |step, loss| {
        if step % 100 == 0 {
            eprintln!("step {step} loss {loss:.6}");
        }
    })?;
    let tail = &ck.losses[ck.losses.len().saturating_sub(100)..];
    let final_loss = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    let spikes = loss_spikes(&ck.losses, 10.0);
    println!(
        "trained {} steps on {} records; final loss {final_loss:.6}; {} loss spikes; checkpoint {}",
        ck.step,
        idx.len(),
        spikes.len(),
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn load_pair(data: &Path, checkpoint: &Path) -> Result<(Dataset, Checkpoint)> {
    let ds = read_dataset(data)?;
    let ck = Checkpoint::load(checkpoint, None)?;
    if ck.manifest_hash != ds.manifest.hash()? {
        return Err(SabrError::Contract(format!(
            "checkpoint {} was trained on a different dataset than {}",
            checkpoint.display(),
            data.display()
        )));
    }
    Ok((ds, ck))
}

fn sample(
    cfg: &SabrConfig,
    out: &Path,
    data: &Path,
    checkpoint: &Path,
    record: usize,
    steps: usize,
    context_fraction: Option<f64>,
) -> Result<()> {
    let (ds, ck) = load_pair(data, checkpoint)?;
    let file = sample_record(&ck, &ds, record, steps, cfg.eval.seed, context_fraction)?;
    file.save(&out.join(MOTION_FILE))?;
    println!(
        "sampled {} frames for record {record} with {} steps into {}",
        file.header.frames,
        file.header.sample_steps,
        out.join(MOTION_FILE).display()
    );
    Ok(())
}

fn evaluate_cmd(
    cfg: &SabrConfig,
    out: &Path,
    data: &Path,
    checkpoint: &Path,
    split: SplitArg,
    steps: Option<usize>,
) -> Result<()> {
    let (ds, ck) = load_pair(data, checkpoint)?;
    let idx = indices(&ds, split);
    let ecfg = eval::EvalConfig {
        sample_steps: steps.unwrap_or(cfg.eval.sample_steps),
        ..cfg.eval.clone()
    };
    let report = evaluate(&ck, &ds, &idx, &ecfg)?;
    write_metrics(&report, out)?;
    println!(
        "movement adherence {:.6}; trajectory adherence {:.4} ({}/{}); {} records",
        report.movement_mse,
        report.trajectory_adherence,
        report.touched,
        report.total,
        report.records.len()
    );
    Ok(())
}

fn render(out: &Path, data: &Path, motion: Option<&Path>, record: Option<usize>) -> Result<()> {
    let ds = read_dataset(data)?;
    let m = &ds.manifest;
    let (index, raw) = match (motion, record) {
        (Some(p), _) => {
            let f = MotionFile::load(p)?;
            if f.header.manifest_hash != m.hash()? {
                return Err(SabrError::Contract(format!(
                    "{} was sampled from a different dataset",
                    p.display()
                )));
            }
            (f.header.record, f.motion)
        }
        (None, Some(i)) => (
            i,
            ds.records
                .get(i)
                .ok_or_else(|| SabrError::Index(format!("record {i}")))?
                .motion
                .clone(),
        ),
        (None, None) => {
            return Err(SabrError::Contract(
                "render needs --motion or --record".into(),
            ))
        }
    };
    let r = ds
        .records
        .get(index)
        .ok_or_else(|| SabrError::Index(format!("record {index}")))?;
    let frames = motion_frames(&raw, m.body.n_joints, m.body.shape_dim)?;
    let beta = mean_shape(&m.stats, &m.body)?;
    let rep = render_svg(
        &frames,
        &r.wall,
        &r.route,
        &m.body,
        &beta,
        &m.intrinsics,
        out,
    )?;
    println!(
        "wrote {} frames to {} ({} joints omitted)",
        rep.files.len(),
        out.display(),
        rep.omitted.len()
    );
    Ok(())
}

fn sweep(cfg: &SabrConfig, out: &Path, data: &Path, axis: AxisArg) -> Result<()> {
    let ds = read_dataset(data)?;
    let axis = match axis {
        AxisArg::Data => Axis::Data,
        AxisArg::Model => Axis::Model,
    };
    let base = cfg.model.build(&ds.manifest.config, &ds.manifest.body)?;
    let points = SweepPoint::along(axis, &cfg.eval.sweep, &base)?;
    if points.len() < 2 {
        eprintln!("a single point gives no trend");
    }
    let res = run_sweep(&ds, axis, &points, &cfg.train, &cfg.eval, |row| {
        match (&row.movement_mse, &row.error) {
            (Some(v), _) => eprintln!("{} seed {}: movement adherence {v:.6}", row.point, row.seed),
            (_, Some(e)) => eprintln!("{} seed {}: failed: {e}", row.point, row.seed),
            _ => {}
        }
    })?;
    write_sweep_csv(&res, out)?;
    for (p, m) in res.medians() {
        match m {
            Some(v) => println!("{p}: median movement adherence {v:.6}"),
            None => println!("{p}: no successful runs"),
        }
    }
    println!("non-increasing: {}", res.non_increasing());
    Ok(())
}

fn check_grad(cfg: &SabrConfig, coords: usize) -> Result<()> {
    let mut worst: f64 = 0.0;
    for (name, rep) in gradcheck::primitive_suite(cfg.seed)? {
        println!(
            "{name:<20} max rel err {:.3e} ({} coords)",
            rep.max_rel_err, rep.coords_checked
        );
        worst = worst.max(rep.max_rel_err);
    }
    let model = cfg.model.build(&cfg.world, &BodySpec::climber())?;
    let sched = cfg.schedule.build()?;
    let rep = loss_gradcheck(&model, &sched, 4, 2 * cfg.world.patches(), coords, cfg.seed)?;
    println!(
        "{:<20} max rel err {:.3e} ({} coords)",
        format!("loss[{}]", cfg.model.preset),
        rep.max_rel_err,
        rep.coords_checked
    );
    worst = worst.max(rep.max_rel_err);
    if worst >= GRAD_TOLERANCE {
        return Err(SabrError::Numeric(format!(
            "max relative error {worst:.3e} exceeds {GRAD_TOLERANCE:e}"
        )));
    }
    println!("all gradients within {GRAD_TOLERANCE:e}");
    Ok(())
}
