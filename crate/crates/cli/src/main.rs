mod config;
mod plot;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cylflow::dataset::{
    compute_norm_stats, read_trajectory, write_trajectory, DatasetManifest, EvalSplit, NormStats, TrainSplit,
};
use cylflow::generate::generate_dataset;
use cylflow::geometry::{sample_geometry, DatasetId, DomainSpec};
use cylflow::mesher::{mesh_stats, triangulate};
use cylflow::metrics::{evaluate_model, reference_bench};
use cylflow::model::MeshGraphNet;
use cylflow::solver::{benchmark_qoi, Trajectory};
use cylflow::trainer::Trainer;
use serde::{Deserialize, Serialize};

use config::RunConfig;
use report::ResultRecord;

type CliResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Parser)]
#[command(name = "cylflow", version, about = "Mesh-based flow surrogate experiments")]
struct Cli {
    /// TOML file with `train`, `model`, `solver` and `mesh` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample, mesh and solve a dataset.
    Generate(GenerateArgs),
    /// Train a model on the train split of a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or an untrained model, on a dataset split.
    Evaluate(EvaluateArgs),
    /// Train and evaluate every dataset pair over all seeds, then report.
    Matrix(MatrixArgs),
    /// Markdown tables and field plots from evaluation records.
    Report(ReportArgs),
    /// Wall-clock of the solver against a model rollout on the reference mesh.
    Bench(BenchArgs),
    /// Drag, lift and pressure difference of the cylinder benchmark.
    Qoi(QoiArgs),
    /// Mesh one domain and print its statistics.
    Mesh(MeshArgs),
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// Frames per simulation.
    #[arg(long)]
    frames: Option<usize>,
    /// Uniform mesh coarsening factor applied to the configured sizes.
    #[arg(long)]
    coarsen: Option<f64>,
}

impl Overrides {
    fn apply(&self, mut c: RunConfig) -> RunConfig {
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.decay {
            c.train.decay = v;
        }
        if let Some(v) = self.noise_std {
            c.train.noise_std = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.latent {
            c.model.latent = v;
            c.model.hidden_width = v;
        }
        if let Some(v) = self.blocks {
            c.model.blocks = v;
        }
        if let Some(v) = self.frames {
            c.solver.frames = v;
        }
        if let Some(f) = self.coarsen {
            c.mesh.far_size *= f;
            c.mesh.obstacle_size *= f;
        }
        c
    }
}

fn parse_dataset(s: &str) -> Result<DatasetId, String> {
    s.parse::<DatasetId>().map_err(err)
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_dataset)]
    dataset: DatasetId,
    #[arg(long)]
    out: PathBuf,
    /// Number of simulations; defaults to the configured count.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding `manifest.json`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; an existing checkpoint is resumed.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Eval,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "untrained")]
    checkpoint: Option<PathBuf>,
    /// Evaluate a freshly initialized model instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    untrained: bool,
    /// Dataset whose train split supplies normalization statistics for an
    /// untrained model; defaults to `--data`.
    #[arg(long)]
    stats_from: Option<PathBuf>,
    /// Initialization seed of an untrained model.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Split::Eval)]
    split: Split,
    /// Permit evaluating a checkpoint on the split it was trained on.
    #[arg(long)]
    allow_train_eval: bool,
    /// Directory for the result record and the median rollout.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct MatrixArgs {
    /// Directory with one dataset directory per family, named after it.
    #[arg(long)]
    data_root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seeds; defaults to the configured list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Skip the field plots.
    #[arg(long)]
    no_plots: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of evaluation records.
    #[arg(long)]
    results: PathBuf,
    /// Markdown output file.
    #[arg(long)]
    out: PathBuf,
    /// Directory for PNG plots.
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Frames timed per repetition; times are scaled to a full simulation.
    #[arg(long, default_value_t = 20)]
    timed_frames: usize,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Inflow peak velocity; defaults to the configured base peak.
    #[arg(long)]
    peak: Option<f64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct QoiArgs {
    #[arg(long, default_value_t = 30.0)]
    end: f64,
    /// Length of the evaluation window ending at `--end`.
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    #[arg(long, default_value_t = 1.5)]
    peak: f64,
    /// JSON output with samples and quantities.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct MeshArgs {
    /// Sampled domain; the reference cylinder if omitted.
    #[arg(long, value_parser = parse_dataset)]
    dataset: Option<DatasetId>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the plain-text mesh dump here.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Worker count from `CYLFLOW_WORKERS`, else the available parallelism.
fn workers() -> usize {
    std::env::var("CYLFLOW_WORKERS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers())
        .build()
        .expect("thread pool")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(err)?;
    fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

fn load_manifest(dir: &Path) -> CliResult<DatasetManifest> {
    let m = DatasetManifest::load(dir).map_err(err)?;
    m.validate().map_err(err)?;
    Ok(m)
}

fn cmd_generate(cfg: RunConfig, args: GenerateArgs) -> CliResult<bool> {
    let count = args.count.unwrap_or(cfg.count);
    let manifest = DatasetManifest::new(args.dataset, count, args.seed, cfg.mesh, cfg.solver);
    let report = generate_dataset(&args.out, &manifest, &cfg.mesh, &cfg.solver, workers(), |i, r| match r {
        Ok(()) => eprintln!("simulation {i}: written"),
        Err(e) => eprintln!("simulation {i}: failed: {e}"),
    })
    .map_err(err)?;
    println!(
        "dataset={} written={} skipped={} failed={}",
        args.dataset,
        report.written.len(),
        report.skipped.len(),
        report.failed.len()
    );
    for (i, e) in &report.failed {
        eprintln!("error: simulation {i}: {e}");
    }
    Ok(report.failed.is_empty())
}

/// Training origin recorded next to a checkpoint as `<checkpoint>.info.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointInfo {
    train_dataset: DatasetId,
    data: PathBuf,
    seed: u64,
}

fn info_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".info.json");
    PathBuf::from(s)
}

fn read_info(checkpoint: &Path) -> Option<CheckpointInfo> {
    let text = fs::read_to_string(info_path(checkpoint)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Trains to the configured epoch count, checkpointing after every epoch
/// and appending one line per epoch to `<checkpoint>.log`.
fn train(cfg: &RunConfig, data: &Path, out: &Path, seed: u64) -> CliResult<Trainer> {
    let manifest = load_manifest(data)?;
    let split = TrainSplit::load(data, &manifest).map_err(err)?;
    let train_cfg = cylflow::trainer::TrainConfig { seed, ..cfg.train };
    let mut trainer = if out.exists() {
        let t = Trainer::restore(out).map_err(err)?;
        let same = cylflow::trainer::TrainConfig { epochs: train_cfg.epochs, ..t.config } == train_cfg;
        if !same || t.model.config != cfg.model {
            return Err(format!("{} was trained with a different configuration", out.display()));
        }
        eprintln!("resuming {} after epoch {}", out.display(), t.epochs_done);
        Trainer { config: train_cfg, ..t }
    } else {
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
        Trainer::new(cfg.model, train_cfg, &split).map_err(err)?
    };
    let info = CheckpointInfo {
        train_dataset: manifest.dataset,
        data: data.canonicalize().unwrap_or_else(|_| data.to_path_buf()),
        seed,
    };
    write_json(&info_path(out), &info)?;
    let mut log_path = out.as_os_str().to_owned();
    log_path.push(".log");
    while trainer.epochs_done < train_cfg.epochs {
        let stats = trainer.train_epoch(&split).map_err(err)?;
        trainer.save(out).map_err(err)?;
        println!("{stats}");
        use std::io::Write;
        let mut log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| format!("{}: {e}", PathBuf::from(&log_path).display()))?;
        writeln!(log, "{stats}").map_err(err)?;
    }
    Ok(trainer)
}

fn cmd_train(cfg: RunConfig, args: TrainArgs) -> CliResult<bool> {
    let seed = args.seed.unwrap_or(cfg.train.seed);
    train(&cfg, &args.data, &args.out, seed)?;
    Ok(true)
}

/// Model, statistics and record identity for one evaluation.
struct Subject {
    model: MeshGraphNet,
    stats: NormStats,
    train_dataset: Option<DatasetId>,
    seed: u64,
}

fn untrained(cfg: &RunConfig, stats_from: &Path, seed: u64) -> CliResult<Subject> {
    let manifest = load_manifest(stats_from)?;
    let split = TrainSplit::load(stats_from, &manifest).map_err(err)?;
    Ok(Subject {
        model: MeshGraphNet::new(cfg.model, seed),
        stats: compute_norm_stats(&split).map_err(err)?,
        train_dataset: None,
        seed,
    })
}

fn trained(checkpoint: &Path) -> CliResult<(Subject, Option<CheckpointInfo>)> {
    let (model, meta) = MeshGraphNet::load(checkpoint).map_err(err)?;
    let info = read_info(checkpoint);
    let seed = info.as_ref().map_or(0, |i| i.seed);
    Ok((
        Subject {
            model,
            stats: meta.norm_stats,
            train_dataset: info.as_ref().map(|i| i.train_dataset),
            seed,
        },
        info,
    ))
}

/// Evaluates `subject` on the eval split of `data` and writes the record,
/// plus the final predicted frame of the median simulation, under `out`.
fn evaluate(subject: &Subject, data: &Path, split: Split, out: &Path) -> CliResult<ResultRecord> {
    let manifest = load_manifest(data)?;
    let (truth, entries) = match split {
        Split::Eval => (EvalSplit::load(data, &manifest).map_err(err)?.trajectories, manifest.eval_entries()),
        Split::Train => (TrainSplit::load(data, &manifest).map_err(err)?.trajectories, manifest.train_entries()),
    };
    let (result, rollouts) = pool()
        .install(|| evaluate_model(&subject.model, &subject.stats, &truth))
        .map_err(err)?;
    let median_simulation = result
        .per_simulation_velocity
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1 - result.velocity.all_median).abs();
            let db = (b.1 - result.velocity.all_median).abs();
            da.total_cmp(&db)
        })
        .map_or(0, |(i, _)| i);
    let mut record = ResultRecord {
        train_dataset: subject.train_dataset,
        eval_dataset: manifest.dataset,
        seed: subject.seed,
        result,
        median_simulation,
        truth_file: Some(data.join(&entries[median_simulation].file)),
        rollout_file: None,
    };
    let stem = record.file_stem();
    let rollout = &rollouts[median_simulation];
    let last: Trajectory = Trajectory {
        frames: rollout.frames.last().cloned().into_iter().collect(),
        ..rollout.clone()
    };
    let rollout_path = out.join("rollouts").join(format!("{stem}.final.traj"));
    fs::create_dir_all(out.join("rollouts")).map_err(err)?;
    write_trajectory(&last, &rollout_path).map_err(err)?;
    record.rollout_file = Some(rollout_path);
    write_json(&out.join(format!("{stem}.json")), &record)?;
    Ok(record)
}

fn cmd_evaluate(cfg: RunConfig, args: EvaluateArgs) -> CliResult<bool> {
    let subject = match &args.checkpoint {
        Some(ckpt) => {
            let (subject, info) = trained(ckpt)?;
            if args.split == Split::Train && !args.allow_train_eval {
                let data = args.data.canonicalize().map_err(|e| format!("{}: {e}", args.data.display()))?;
                if info.as_ref().is_none_or(|i| i.data == data) {
                    return Err(format!(
                        "{} may have been trained on this split; pass --allow-train-eval to evaluate anyway",
                        ckpt.display()
                    ));
                }
            }
            subject
        }
        None => untrained(&cfg, args.stats_from.as_deref().unwrap_or(&args.data), args.seed)?,
    };
    let record = evaluate(&subject, &args.data, args.split, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&record.result).map_err(err)?);
    Ok(true)
}

fn render_plots(records: &[ResultRecord], dir: &Path) -> CliResult<usize> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut seen = std::collections::BTreeSet::new();
    let mut written = 0;
    let mut sorted: Vec<&ResultRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    for r in sorted {
        if !seen.insert((r.train_dataset, r.eval_dataset)) {
            continue;
        }
        let (Some(truth), Some(pred)) = (&r.truth_file, &r.rollout_file) else {
            continue;
        };
        let truth = read_trajectory(truth).map_err(err)?;
        let pred = read_trajectory(pred).map_err(err)?;
        let (Some(t), Some(p)) = (truth.frames.last(), pred.frames.last()) else {
            continue;
        };
        let train = r.train_dataset.map_or("none", |d| d.name());
        let path = dir.join(format!("{train}__{}.png", r.eval_dataset.name()));
        plot::write_comparison(&path, &truth.mesh, t, p)?;
        written += 1;
    }
    Ok(written)
}

fn write_report(results: &Path, out: &Path, plots: Option<&Path>) -> CliResult<()> {
    let records = report::load_records(results)?;
    if records.is_empty() {
        return Err(format!("no evaluation records in {}", results.display()));
    }
    let md = report::render_markdown(&records);
    fs::write(out, &md).map_err(|e| format!("{}: {e}", out.display()))?;
    println!("{md}");
    if let Some(dir) = plots {
        let n = render_plots(&records, dir)?;
        eprintln!("wrote {n} plots to {}", dir.display());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult<bool> {
    write_report(&args.results, &args.out, args.plots.as_deref())?;
    Ok(true)
}

fn cmd_matrix(cfg: RunConfig, args: MatrixArgs) -> CliResult<bool> {
    let seeds = args.seeds.clone().unwrap_or_else(|| cfg.seeds.clone());
    let results = args.out.join("results");
    let checkpoints = args.out.join("checkpoints");
    let mut failures = Vec::new();
    let present: Vec<DatasetId> = DatasetId::ALL
        .into_iter()
        .filter(|d| {
            let ok = args.data_root.join(d.name()).join(cylflow::dataset::MANIFEST_FILE).exists();
            if !ok {
                failures.push(format!("dataset {d} missing under {}", args.data_root.display()));
            }
            ok
        })
        .collect();
    let record_exists = |train: Option<DatasetId>, eval: DatasetId, seed: u64| {
        let train = train.map_or("none", |d| d.name());
        results.join(format!("{train}__{}__seed{seed}.json", eval.name())).exists()
    };
    for &seed in &seeds {
        for &train_set in &present {
            let ckpt = checkpoints.join(format!("{}__seed{seed}.ckpt", train_set.name()));
            if present.iter().all(|&e| record_exists(Some(train_set), e, seed)) {
                continue;
            }
            let data = args.data_root.join(train_set.name());
            if let Err(e) = train(&cfg, &data, &ckpt, seed) {
                failures.push(format!("train {train_set} seed {seed}: {e}"));
                continue;
            }
            let subject = match trained(&ckpt) {
                Ok((s, _)) => s,
                Err(e) => {
                    failures.push(format!("load {}: {e}", ckpt.display()));
                    continue;
                }
            };
            for &eval_set in &present {
                if record_exists(Some(train_set), eval_set, seed) {
                    continue;
                }
                eprintln!("evaluating {train_set} seed {seed} on {eval_set}");
                if let Err(e) = evaluate(&subject, &args.data_root.join(eval_set.name()), Split::Eval, &results) {
                    failures.push(format!("evaluate {train_set} seed {seed} on {eval_set}: {e}"));
                }
            }
        }
        for &eval_set in &present {
            if record_exists(None, eval_set, seed) {
                continue;
            }
            let data = args.data_root.join(eval_set.name());
            let outcome = untrained(&cfg, &data, seed).and_then(|s| evaluate(&s, &data, Split::Eval, &results));
            if let Err(e) = outcome {
                failures.push(format!("evaluate untrained seed {seed} on {eval_set}: {e}"));
            }
        }
    }
    let plots = (!args.no_plots).then(|| args.out.join("plots"));
    if let Err(e) = write_report(&results, &args.out.join("report.md"), plots.as_deref()) {
        failures.push(e);
    }
    for f in &failures {
        eprintln!("error: {f}");
    }
    Ok(failures.is_empty())
}

fn cmd_bench(cfg: RunConfig, args: BenchArgs) -> CliResult<bool> {
    let (model, meta) = MeshGraphNet::load(&args.checkpoint).map_err(err)?;
    let spec = DomainSpec::reference(args.peak.unwrap_or(cfg.solver.base_peak));
    let report = reference_bench(
        &model,
        &meta.norm_stats,
        &spec,
        &cfg.mesh,
        &cfg.solver,
        args.timed_frames,
        args.repetitions,
    )
    .map_err(err)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(err)?);
    if report.speedup > 1.0 {
        println!("speedup {:.2}x", report.speedup);
        Ok(true)
    } else {
        eprintln!("error: model rollout is not faster than the solver (speedup {:.3})", report.speedup);
        Ok(false)
    }
}

fn cmd_qoi(cfg: RunConfig, args: QoiArgs) -> CliResult<bool> {
    let spec = DomainSpec::elongated_benchmark(args.peak);
    let mesh = triangulate(&spec, &cfg.mesh).map_err(err)?;
    let window = (args.end - args.window, args.end);
    let (samples, qoi) = benchmark_qoi(&mesh, &spec, &cfg.solver, window, |t| eprintln!("t = {t:.2}")).map_err(err)?;
    println!("{}", serde_json::to_string_pretty(&qoi).map_err(err)?);
    if let Some(path) = &args.out {
        #[derive(Serialize)]
        struct Out<'a> {
            qoi: &'a cylflow::solver::Qoi,
            samples: &'a [cylflow::solver::QoiSample],
        }
        write_json(path, &Out { qoi: &qoi, samples: &samples })?;
    }
    Ok(true)
}

fn cmd_mesh(cfg: RunConfig, args: MeshArgs) -> CliResult<bool> {
    let spec = match args.dataset {
        Some(d) => sample_geometry(d, args.seed).map_err(err)?,
        None => DomainSpec::reference(cfg.solver.base_peak),
    };
    let mesh = triangulate(&spec, &cfg.mesh).map_err(err)?;
    let s = mesh_stats(&mesh);
    println!(
        "vertices={} cells={} min_angle={:.2} min_edge={:.5} max_edge={:.5}",
        s.vertices, s.cells, s.min_angle, s.min_edge, s.max_edge
    );
    if let Some(path) = &args.dump {
        fs::write(path, mesh.to_text()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(true)
}

fn run(cli: Cli) -> CliResult<bool> {
    let base = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => cmd_generate(a.overrides.apply(base), a),
        Command::Train(a) => cmd_train(a.overrides.apply(base), a),
        Command::Evaluate(a) => cmd_evaluate(a.overrides.apply(base), a),
        Command::Matrix(a) => cmd_matrix(a.overrides.apply(base), a),
        Command::Report(a) => cmd_report(a),
        Command::Bench(a) => cmd_bench(a.overrides.apply(base), a),
        Command::Qoi(a) => cmd_qoi(a.overrides.apply(base), a),
        Command::Mesh(a) => cmd_mesh(a.overrides.apply(base), a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
