//! `rirecon`: generate datasets, train, finetune, evaluate and compare
//! against the spline baseline.
//!
//! All randomness flows from the master seed: the two datasets, weight
//! initialisation and training each use their own named sub-stream of it.
//! Evaluation masks use the "eval" sub-stream unless `eval_seed` pins them.

mod config;
mod plot;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{error::ErrorKind, Parser, Subcommand};
use rirecon_core::baselines::{array_coordinates, Sci};
use rirecon_core::diffcore::{DiffError, Float};
use rirecon_core::metrics::{read_aggregate_csv, AggregateMetrics, MetricsReport};
use rirecon_core::model::{Checkpoint, CheckpointMeta, ModelError, RirFormer, SceneInput};
use rirecon_core::rng::derive_seed;
use rirecon_core::scenario::{generate_dataset, Dataset, DatasetConfig, ScenarioError};
use rirecon_core::training::{
    eval_mask, evaluate, finetune_segments, model_positions, normalize_scene, train, write_loss_csv, Oracle, Precision,
    Reconstructor, TrainError,
};

use config::{parse_mr_list, Ablation, ExperimentConfig, ExperimentId, PrecisionArg};

#[derive(Parser, Debug)]
#[command(name = "rirecon", version, about = "Grid-free room impulse response reconstruction")]
struct Cli {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated missing rates for eval/baseline.
    #[arg(long, global = true)]
    mr: Option<String>,
    #[arg(long, global = true, value_enum)]
    ablation: Option<Ablation>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long, global = true, value_enum)]
    experiment: Option<ExperimentId>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the training and evaluation datasets.
    GenData,
    /// Train a model (and finetune it, unless disabled in the config).
    Train,
    /// Per-segment finetuning of an existing checkpoint.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint across missing rates.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the ground truth itself (checks the metric plumbing).
        #[arg(long)]
        oracle: bool,
    },
    /// Evaluate the spline baseline on the same masks.
    Baseline,
    /// Combine eval and baseline results into a table and a plot.
    Report,
}

/// Failure classes, mapped to the process exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => Failure::Usage(e.to_string()),
            ModelError::Diff(DiffError::NonFinite(_)) => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Failure::Usage(e.to_string()),
            TrainError::Divergence { .. } => Failure::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn io_fail(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(Failure::Usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(m) = &cli.mr {
        cfg.eval_mr = parse_mr_list(m).map_err(Failure::Usage)?;
    }
    if let Some(e) = cli.experiment {
        cfg.experiment = e;
    }
    if let Some(a) = cli.ablation {
        a.apply(&mut cfg.model);
    }
    if let Some(p) = cli.precision {
        cfg.train.precision = p.into();
    }
    cfg.train.seed = derive_seed(cfg.seed, "train", &[]);
    cfg.model.init_seed = derive_seed(cfg.seed, "init", &[]);
    cfg.validate().map_err(Failure::Usage)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_fail(&cfg.out_dir))?;
    Ok(cfg)
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    Dataset::load(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path).map_err(io_fail(path))?))
}

fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<(), Failure> {
    for (name, n, path) in [("train", cfg.n_train, cfg.train_path()), ("eval", cfg.n_eval, cfg.eval_path())] {
        let dc = DatasetConfig {
            absorption: cfg.absorption,
            ..DatasetConfig::new(
                cfg.experiment.into(),
                n,
                derive_seed(cfg.seed, "dataset", &[u64::from(name == "eval")]),
            )
        };
        let start = Instant::now();
        let ds = generate_dataset(&dc)?;
        let crc = ds.save(&path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        println!(
            "{name}: {} scenes, fs {} Hz, K {}, L {}, crc32 {crc:08x} -> {} ({:.1} s)",
            ds.scenes.len(),
            ds.fs,
            ds.k,
            ds.l(),
            path.display(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn save_checkpoint<F: Float>(model: &RirFormer<F>, meta: CheckpointMeta, path: &Path) -> Result<(), Failure> {
    Checkpoint { model: model.clone(), meta }.save(path).map_err(Failure::from)
}

fn finetune_and_save<F: Float>(
    model: &mut RirFormer<F>,
    ds: &Dataset,
    cfg: &ExperimentConfig,
    mut meta: CheckpointMeta,
    path: &Path,
) -> Result<(), Failure> {
    let started = Instant::now();
    let phases = finetune_segments(model, ds, &cfg.train, |p, _| {
        log::info!("segment {} done after {:.0} s", p.segment, started.elapsed().as_secs_f64());
    });
    let phases = match phases {
        Ok(p) => p,
        Err(e) => {
            let f = Failure::from(e);
            if matches!(f, Failure::Numeric(_)) {
                save_checkpoint(model, meta, &cfg.out_dir.join("last_good.rirf"))?;
            }
            return Err(f);
        }
    };
    let csv_path = cfg.out_dir.join("finetune_loss.csv");
    let mut w = create(&csv_path)?;
    use std::io::Write;
    writeln!(w, "segment,epoch,mean_loss,mr").map_err(io_fail(&csv_path))?;
    for p in &phases {
        for h in &p.history {
            writeln!(w, "{},{},{},{}", p.segment, h.epoch, h.mean_loss, h.mr).map_err(io_fail(&csv_path))?;
        }
    }
    meta.loss_history.extend(phases.iter().filter_map(|p| p.history.last().map(|h| h.mean_loss)));
    save_checkpoint(model, meta, path)?;
    println!("finetuned {} segment heads -> {}", phases.len(), path.display());
    Ok(())
}

fn run_train<F: Float>(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let ds = load_dataset(&cfg.train_path())?;
    let mut mc = cfg.model;
    if mc.k != ds.k {
        log::info!("model K set to the dataset's {}", ds.k);
        mc.k = ds.k;
    }
    let mut model = RirFormer::<F>::new(mc)?;
    println!("training {} parameters on {} scenes", model.parameter_count(), ds.scenes.len());
    let latest = cfg.out_dir.join("checkpoint.rirf");
    let mut losses = Vec::new();
    let mut save_err = None;
    let started = Instant::now();
    let result = train(&mut model, &ds, &cfg.train, |s, m| {
        losses.push(s.mean_loss);
        println!(
            "epoch {:>4}  loss {:.6e}  mr {:.3}  {:.0} s",
            s.epoch,
            s.mean_loss,
            s.mr,
            started.elapsed().as_secs_f64()
        );
        let meta = CheckpointMeta { epoch: s.epoch as u32 + 1, seed: cfg.seed, loss_history: losses.clone() };
        if let Err(e) = save_checkpoint(m, meta, &latest) {
            save_err.get_or_insert(e);
        }
    });
    if let Some(e) = save_err {
        return Err(e);
    }
    let history = match result {
        Ok(h) => h,
        Err(e) => {
            let f = Failure::from(e);
            if matches!(f, Failure::Numeric(_)) {
                let meta = CheckpointMeta { epoch: losses.len() as u32, seed: cfg.seed, loss_history: losses };
                save_checkpoint(&model, meta, &cfg.out_dir.join("last_good.rirf"))?;
                eprintln!("last finite parameters kept in {}", cfg.out_dir.join("last_good.rirf").display());
            }
            return Err(f);
        }
    };
    let csv_path = cfg.out_dir.join("loss.csv");
    write_loss_csv(&history, create(&csv_path)?)?;
    let meta = CheckpointMeta { epoch: history.len() as u32, seed: cfg.seed, loss_history: losses };
    let out = cfg.out_dir.join("model.rirf");
    save_checkpoint(&model, meta.clone(), &out)?;
    println!("saved {} and {}", out.display(), csv_path.display());
    if cfg.finetune && model.config().use_segments && cfg.train.finetune_epochs_per_segment > 0 {
        save_checkpoint(&model, meta.clone(), &cfg.out_dir.join("model_pretrained.rirf"))?;
        finetune_and_save(&mut model, &ds, cfg, meta, &out)?;
    }
    Ok(())
}

fn run_finetune<F: Float>(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(), Failure> {
    let ds = load_dataset(&cfg.train_path())?;
    let ck = Checkpoint::<F>::load(checkpoint).map_err(|e| Failure::Data(format!("{}: {e}", checkpoint.display())))?;
    check_compatible(ck.model.config().k, &ds)?;
    let mut model = ck.model;
    finetune_and_save(&mut model, &ds, cfg, ck.meta, &cfg.out_dir.join("model_finetuned.rirf"))
}

fn check_compatible(k: usize, ds: &Dataset) -> Result<(), Failure> {
    if k != ds.k {
        return Err(Failure::Data(format!("checkpoint expects K = {k}, dataset has K = {}", ds.k)));
    }
    Ok(())
}

fn write_report(report: &MetricsReport, prefix: &str, out_dir: &Path) -> Result<(), Failure> {
    let fail = |e: rirecon_core::metrics::MetricError| Failure::Data(e.to_string());
    report.write_scenes_csv(create(&out_dir.join(format!("{prefix}_scenes.csv")))?).map_err(fail)?;
    report.write_aggregate_csv(create(&out_dir.join(format!("{prefix}_aggregate.csv")))?).map_err(fail)?;
    report.write_segments_csv(create(&out_dir.join(format!("{prefix}_segments.csv")))?).map_err(fail)?;
    let series = |f: fn(&AggregateMetrics) -> f64| {
        vec![plot::Series {
            label: report.source_id.clone(),
            points: report.aggregates.iter().map(|a| (a.mr, f(a))).collect(),
        }]
    };
    let svg = plot::mr_sweep_svg(&series(|a| a.mean_nmse_db), &series(|a| a.mean_cd));
    let svg_path = out_dir.join(format!("{prefix}_plot.svg"));
    std::fs::write(&svg_path, svg).map_err(io_fail(&svg_path))?;
    println!("{}  (NMSE is the mean of per-scene dB values)", report.source_id);
    println!("{:>5} {:>10} {:>8} {:>7}", "mr", "nmse_db", "cd", "scenes");
    for a in &report.aggregates {
        println!("{:>5.2} {:>10.3} {:>8.4} {:>7}", a.mr, a.mean_nmse_db, a.mean_cd, a.n_scenes);
    }
    Ok(())
}

/// Mean wall-clock seconds of one reconstruction of the first scene.
fn time_inference<F: Float>(model: &RirFormer<F>, ds: &Dataset, cfg: &ExperimentConfig) -> Result<f64, Failure> {
    let scene = &ds.scenes[0];
    let mr = cfg.eval_mr.iter().copied().find(|m| (m - 0.7).abs() < 1e-9).unwrap_or(cfg.eval_mr[0]);
    let mask = eval_mask(cfg.mask_seed(), 0, mr, scene.len())?;
    let positions = model_positions(ds, scene)?;
    let (signals, _) = normalize_scene(&scene.rirs, &mask.measured)?;
    let input = SceneInput { positions: &positions, signals: &signals, mask: &mask };
    model.predict(&input)?;
    let passes = cfg.timing_passes.max(1);
    let start = Instant::now();
    for _ in 0..passes {
        model.predict(&input)?;
    }
    Ok(start.elapsed().as_secs_f64() / passes as f64)
}

fn run_eval<F: Float>(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(), Failure> {
    let ds = load_dataset(&cfg.eval_path())?;
    let ck = Checkpoint::<F>::load(checkpoint).map_err(|e| Failure::Data(format!("{}: {e}", checkpoint.display())))?;
    check_compatible(ck.model.config().k, &ds)?;
    let segments = ck.model.config().head_count();
    let mut report = evaluate(&ck.model, &ds, &cfg.eval_mr, cfg.mask_seed(), segments)?;
    report.source_id = format!("rirformer:{}", checkpoint.display());
    write_report(&report, "eval", &cfg.out_dir)?;
    let secs = time_inference(&ck.model, &ds, cfg)?;
    let passes = cfg.timing_passes.max(1);
    println!("mean inference time {:.3} ms over {passes} passes", secs * 1e3);
    let path = cfg.out_dir.join("eval_timing.csv");
    std::fs::write(&path, format!("mean_seconds,passes\n{secs},{passes}\n")).map_err(io_fail(&path))?;
    Ok(())
}

fn run_reconstructor(cfg: &ExperimentConfig, recon: &dyn Reconstructor, prefix: &str) -> Result<(), Failure> {
    let ds = load_dataset(&cfg.eval_path())?;
    let report = evaluate(recon, &ds, &cfg.eval_mr, cfg.mask_seed(), 8.min(ds.k).max(1))?;
    write_report(&report, prefix, &cfg.out_dir)
}

fn cmd_baseline(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let ds = load_dataset(&cfg.eval_path())?;
    for (i, s) in ds.scenes.iter().enumerate() {
        array_coordinates(&s.points).map_err(|e| Failure::Data(format!("scene {i}: {e}")))?;
    }
    let sci = Sci::for_dataset(&ds);
    let report = evaluate(&sci, &ds, &cfg.eval_mr, cfg.mask_seed(), 8)?;
    write_report(&report, "baseline", &cfg.out_dir)
}

fn read_aggregates(path: &Path) -> Result<Option<Vec<AggregateMetrics>>, Failure> {
    if !path.exists() {
        return Ok(None);
    }
    let f = File::open(path).map_err(io_fail(path))?;
    read_aggregate_csv(f).map(Some).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_report(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let mut runs = Vec::new();
    for (name, file) in
        [("model", "eval_aggregate.csv"), ("sci", "baseline_aggregate.csv"), ("oracle", "oracle_aggregate.csv")]
    {
        if let Some(rows) = read_aggregates(&cfg.out_dir.join(file))? {
            runs.push((name, rows));
        }
    }
    if runs.is_empty() {
        return Err(Failure::Data(format!("no *_aggregate.csv files in {}", cfg.out_dir.display())));
    }
    let series = |f: fn(&AggregateMetrics) -> f64| -> Vec<plot::Series> {
        runs.iter()
            .map(|(n, rows)| plot::Series { label: n.to_string(), points: rows.iter().map(|a| (a.mr, f(a))).collect() })
            .collect()
    };
    let svg_path = cfg.out_dir.join("report.svg");
    std::fs::write(&svg_path, plot::mr_sweep_svg(&series(|a| a.mean_nmse_db), &series(|a| a.mean_cd)))
        .map_err(io_fail(&svg_path))?;

    let mut md = String::from("# Reconstruction across missing rates\n\nNMSE is averaged over scenes in dB.\n\n| mr |");
    for (n, _) in &runs {
        md.push_str(&format!(" {n} NMSE (dB) | {n} CD |"));
    }
    md.push_str("\n|---|");
    md.push_str(&"---|---|".repeat(runs.len()));
    md.push('\n');
    let mrs: Vec<f64> = runs[0].1.iter().map(|a| a.mr).collect();
    for mr in mrs {
        md.push_str(&format!("| {mr:.2} |"));
        for (_, rows) in &runs {
            match rows.iter().find(|a| (a.mr - mr).abs() < 1e-9) {
                Some(a) => md.push_str(&format!(" {:.3} | {:.4} |", a.mean_nmse_db, a.mean_cd)),
                None => md.push_str(" - | - |"),
            }
        }
        md.push('\n');
    }
    let md_path = cfg.out_dir.join("report.md");
    std::fs::write(&md_path, &md).map_err(io_fail(&md_path))?;
    print!("{md}");
    println!("\nwrote {} and {}", md_path.display(), svg_path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve(cli)?;
    let f64_mode = cfg.train.precision == Precision::F64;
    let default_ckpt = || cfg.out_dir.join("model.rirf");
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::Train if f64_mode => run_train::<f64>(&cfg),
        Command::Train => run_train::<f32>(&cfg),
        Command::Finetune { checkpoint } => {
            let p = checkpoint.clone().unwrap_or_else(default_ckpt);
            if f64_mode {
                run_finetune::<f64>(&cfg, &p)
            } else {
                run_finetune::<f32>(&cfg, &p)
            }
        }
        Command::Eval { oracle: true, .. } => run_reconstructor(&cfg, &Oracle, "oracle"),
        Command::Eval { checkpoint, .. } => {
            let p = checkpoint.clone().unwrap_or_else(default_ckpt);
            if f64_mode {
                run_eval::<f64>(&cfg, &p)
            } else {
                run_eval::<f32>(&cfg, &p)
            }
        }
        Command::Baseline => cmd_baseline(&cfg),
        Command::Report => cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes() {
        assert_eq!(Failure::from(TrainError::Divergence { epoch: 0, batch: 0, what: "loss" }).code(), 3);
        assert_eq!(Failure::from(TrainError::Config("x".into())).code(), 1);
        assert_eq!(Failure::from(TrainError::ZeroScene).code(), 2);
        assert_eq!(Failure::from(ModelError::Format("x".into())).code(), 2);
    }
}
