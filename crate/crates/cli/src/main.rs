use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use daunet::arch::{
    build_model, overhead_vs_unet, parameter_count_for, receptive_field, ConfigError, ModelConfig, Variant,
};
use daunet::config::{RunConfig, RunConfigError};
use daunet::data::{self, synth, DataError};
use daunet::eval::{ablation_report, confusion, ConfusionMatrix, EvalError, MetricsReport};
use daunet::gradcheck::{run_gradcheck, GradcheckOptions};
use daunet::infer::{predict_raster, InferError};
use daunet::tensor::{OpKind, TensorError};
use daunet::train::{
    evaluate_dataset, model_from_record, CheckpointError, CheckpointRecord, Trainer, TrainError, BEST_CHECKPOINT,
};

#[derive(Debug, Parser)]
#[command(name = "daunet", version, about = "Landslide segmentation with dilated/attention U-Nets")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for matrix products.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and keep the checkpoint with the best validation IoU.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Segment an image or every PNG in a directory.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        out_dir: PathBuf,
        /// Tile overlap in pixels (default: the config's data.overlap).
        #[arg(long)]
        overlap: Option<usize>,
        /// Also write tinted overlays under OUT_DIR/overlays.
        #[arg(long)]
        overlay: bool,
    },
    /// Score predicted masks against ground truth.
    Evaluate {
        pred_dir: PathBuf,
        truth_dir: PathBuf,
        /// Also write the rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the four variants on the same data and seed and compare them.
    Ablate {
        /// Comma-separated subset, e.g. `u-net,da-u-net`.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Receptive field, parameter counts and overhead versus a plain U-Net.
    Inspect {
        /// Print the effective configuration as TOML instead.
        #[arg(long)]
        dump_config: bool,
    },
    /// Compare every backward rule against central finite differences.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write a synthetic dataset (images/, masks/, tags.tsv).
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
enum Failure {
    Other(String),
    Config(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Other(m) | Failure::Config(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<RunConfigError> for Failure {
    fn from(e: RunConfigError) -> Self {
        match e {
            RunConfigError::Data(_) => Failure::Data(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        Failure::Numeric(e.to_string())
    }
}

impl From<InferError> for Failure {
    fn from(e: InferError) -> Self {
        match e {
            InferError::Data(d) => d.into(),
            InferError::Tensor(t) => t.into(),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Fingerprint { .. } => Failure::Config(e.to_string()),
            CheckpointError::Io { .. } => Failure::Other(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Model(_) => Failure::Config(e.to_string()),
            TrainError::UnknownTag { .. } | TrainError::EmptyDataset(_) | TrainError::Eval(_) => {
                Failure::Data(e.to_string())
            }
            TrainError::NonFiniteLoss { .. } | TrainError::Tensor(_) => Failure::Numeric(e.to_string()),
            TrainError::Checkpoint(c) => c.into(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Other(format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn load_split(cfg: &RunConfig) -> Result<(data::Dataset, data::Dataset), Failure> {
    cfg.data.check_inputs()?;
    let d = &cfg.data;
    Ok(data::load_dataset(
        &d.images_dir,
        &d.masks_dir,
        d.tags_file.as_deref(),
        cfg.model.tile_size,
        d.split_fraction,
        cfg.seed,
    )?)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

/// Trains one model into `out_dir` and returns the best record.
fn train_into(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    train: &data::Dataset,
    val: &data::Dataset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<CheckpointRecord, Failure> {
    create_dir(out_dir)?;
    let mut trainer = match resume {
        Some(p) => {
            let record = CheckpointRecord::load_for(p, model_cfg)?;
            let best = match CheckpointRecord::load_for(&out_dir.join(BEST_CHECKPOINT), model_cfg) {
                Ok(b) if b.iteration <= record.iteration => Some(b),
                _ => None,
            };
            Trainer::resume(model_cfg, &record, train, val, cfg.train.clone())?.with_best(best)
        }
        None => Trainer::new(build_model(model_cfg, cfg.seed)?, train, val, cfg.train.clone())?,
    }
    .with_checkpoint_dir(out_dir);

    let name = model_cfg.variant().name();
    let start = Instant::now();
    let total = cfg.train.total_iterations;
    while trainer.iteration() < total {
        let next = (trainer.iteration() / cfg.train.checkpoint_interval + 1) * cfg.train.checkpoint_interval;
        trainer.run_until(next)?;
        if let Some(&(it, iou)) = trainer.history().validations.last() {
            let recent = &trainer.history().losses;
            let window = &recent[recent.len().saturating_sub(100)..];
            let mean = window.iter().map(|&(_, l)| l as f64).sum::<f64>() / window.len().max(1) as f64;
            eprintln!(
                "[{name}] iteration {it}/{total}  loss {mean:.4}  val IoU {iou:.2}  ({:.0}s)",
                start.elapsed().as_secs_f64()
            );
        }
    }
    let history = trainer.history().clone();
    let outcome = trainer.finish()?;

    let mut log = String::from("iteration\tloss\n");
    for (i, l) in &history.losses {
        log.push_str(&format!("{i}\t{l:e}\n"));
    }
    write_file(&out_dir.join("loss.tsv"), log)?;
    let mut log = String::from("iteration\tval_iou\n");
    for (i, v) in &history.validations {
        log.push_str(&format!("{i}\t{v:.6}\n"));
    }
    write_file(&out_dir.join("validation.tsv"), log)?;
    Ok(outcome.best)
}

fn cmd_train(cli: &Cli, resume: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let (train, val) = load_split(&cfg)?;
    eprintln!("{} training tiles, {} validation tiles", train.len(), val.len());
    let out = cfg.data.output_dir.clone();
    let best = train_into(&cfg, &cfg.model, &train, &val, &out, resume)?;
    println!(
        "best checkpoint: iteration {} with validation IoU {:.2} -> {}",
        best.iteration,
        best.validation_metric,
        out.join(BEST_CHECKPOINT).display()
    );
    Ok(())
}

fn cmd_predict(cli: &Cli, checkpoint: &Path, input: &Path, out_dir: &Path, overlap: Option<usize>, overlay: bool) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let record = CheckpointRecord::load_for(checkpoint, &cfg.model)?;
    let model = model_from_record(&cfg.model, &record)?;
    let overlap = overlap.unwrap_or(cfg.data.overlap);
    let inputs: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| io_failure(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_owned()]
    };
    if inputs.is_empty() {
        return Err(Failure::Data(format!("no PNG files in {}", input.display())));
    }
    create_dir(out_dir)?;
    if overlay {
        create_dir(&out_dir.join("overlays"))?;
    }
    for path in inputs {
        let image = data::read_rgb_png(&path)?;
        let mask = predict_raster(&model, &image, overlap, cfg.train.batch_size)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
        data::write_mask_png(&mask, &out_dir.join(format!("{stem}.png")))?;
        if overlay {
            data::write_overlay_png(&image, &mask, &out_dir.join("overlays").join(format!("{stem}.png")))?;
        }
        let positive = mask.data().iter().filter(|&&v| v == 1).count();
        println!(
            "{}: {}x{}, {:.2}% landslide",
            path.display(),
            mask.width(),
            mask.height(),
            100.0 * positive as f64 / mask.data().len() as f64
        );
    }
    Ok(())
}

fn cmd_evaluate(pred_dir: &Path, truth_dir: &Path, csv: Option<&Path>) -> Result<(), Failure> {
    let pairs = data::pair_files(pred_dir, truth_dir)?;
    if pairs.is_empty() {
        return Err(Failure::Data(format!("no PNG masks in {}", pred_dir.display())));
    }
    let mut scenes = Vec::new();
    for (stem, pred_path, truth_path) in pairs {
        let pred = data::read_mask_png(&pred_path)?;
        let truth = data::read_mask_png(&truth_path)?;
        if !pred.same_dims(&truth) {
            return Err(Failure::Data(format!(
                "{} is {}x{} but {} is {}x{}",
                pred_path.display(),
                pred.width(),
                pred.height(),
                truth_path.display(),
                truth.width(),
                truth.height()
            )));
        }
        scenes.push((stem, confusion(pred.data(), truth.data())?));
    }
    let report = MetricsReport::from_scenes(&scenes);
    print!("{}", report.to_table());
    if let Some(p) = csv {
        write_file(p, report.to_csv())?;
    }
    Ok(())
}

fn cmd_ablate(cli: &Cli, variants: Option<&[String]>) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let variants: Vec<Variant> = match variants {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_, ConfigError>>()?,
        None => Variant::ALL.to_vec(),
    };
    let (train, val) = load_split(&cfg)?;
    eprintln!("{} training tiles, {} validation tiles", train.len(), val.len());
    let mut results: Vec<(Variant, ConfusionMatrix)> = Vec::new();
    for v in variants {
        let model_cfg = cfg.model.with_variant(v);
        let slug: String = v.name().to_ascii_lowercase();
        let best = train_into(&cfg, &model_cfg, &train, &val, &cfg.data.output_dir.join(slug), None)?;
        let model = model_from_record(&model_cfg, &best)?;
        results.push((v, evaluate_dataset(&model, &val, cfg.train.batch_size)?));
    }
    let report = ablation_report(&results);
    let table = report.to_table();
    print!("{table}");
    write_file(&cfg.data.output_dir.join("ablation.txt"), &table)?;
    write_file(&cfg.data.output_dir.join("ablation.csv"), report.to_csv())?;
    Ok(())
}

fn cmd_inspect(cli: &Cli, dump_config: bool) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    if dump_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let m = &cfg.model;
    let rf = receptive_field(m);
    println!("receptive field ({}, tile {})", m.variant(), m.tile_size);
    println!("{:<18} {:>6} {:>6} {:>6}", "layer", "k_eff", "jump", "rf");
    for r in &rf.rows {
        println!("{:<18} {:>6} {:>6} {:>6}", r.layer, r.effective_kernel, r.stride, r.receptive_field);
    }
    println!("bottleneck receptive field: {} px", rf.bottleneck_rf);
    println!("fraction of tile: {:.4}", rf.fraction_of_tile);
    println!();
    println!("parameters (depth {}, base {})", m.depth, m.base_channels);
    for v in Variant::ALL {
        let o = overhead_vs_unet(&m.with_variant(v));
        println!(
            "{:<9} {:>12} {:>+12} ({:+.2}% vs U-Net)",
            v.name(),
            parameter_count_for(&m.with_variant(v)).total,
            o.extra_params,
            100.0 * o.ratio
        );
    }
    let o = overhead_vs_unet(&m.with_variant(Variant::DAUNet));
    println!("DA-U-Net overhead ratio: {:.4}", o.ratio);
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, fault: Option<&str>) -> Result<(), Failure> {
    let fault = match fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| Failure::Config(format!("unknown op {name}")))?),
        None => None,
    };
    let opts = GradcheckOptions {
        seed: cli.seed.unwrap_or(0),
        fault,
        ..Default::default()
    };
    let report = run_gradcheck(&opts)?;
    println!("{:<50} {:>8} {:>14}  result", "case", "elements", "max rel error");
    for r in &report.results {
        let verdict = if r.passed { "pass" } else { "FAIL" };
        println!("{:<50} {:>8} {:>14.3e}  {verdict}", r.name, r.elements, r.max_rel_error);
    }
    println!("tolerance {:e}, {:.2}s", opts.tolerance, report.seconds);
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Numeric("gradient check failed".into()))
    }
}

fn cmd_synth(cli: &Cli, out_dir: &Path, count: usize, size: usize) -> Result<(), Failure> {
    if size < 8 {
        return Err(Failure::Config(format!("size {size} is too small (need at least 8)")));
    }
    let samples = synth::generate(&synth::SynthConfig {
        count,
        size,
        seed: cli.seed.unwrap_or(0),
    });
    synth::write_dataset(&samples, out_dir)?;
    println!("wrote {count} samples of {size}x{size} to {}", out_dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.threads == 0 {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    // Read once by the matrix-multiply backend on first use.
    std::env::set_var("MATMUL_NUM_THREADS", cli.threads.to_string());
    match &cli.command {
        Command::Train { resume } => cmd_train(cli, resume.as_deref()),
        Command::Predict {
            checkpoint,
            input,
            out_dir,
            overlap,
            overlay,
        } => cmd_predict(cli, checkpoint, input, out_dir, *overlap, *overlay),
        Command::Evaluate { pred_dir, truth_dir, csv } => cmd_evaluate(pred_dir, truth_dir, csv.as_deref()),
        Command::Ablate { variants } => cmd_ablate(cli, variants.as_deref()),
        Command::Inspect { dump_config } => cmd_inspect(cli, *dump_config),
        Command::Gradcheck { inject_fault } => cmd_gradcheck(cli, inject_fault.as_deref()),
        Command::Synth { out_dir, count, size } => cmd_synth(cli, out_dir, *count, *size),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
