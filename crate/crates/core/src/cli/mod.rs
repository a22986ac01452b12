//! Command-line front end: argument parsing, run directories and the
//! experiment matrix runner.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 missing or
//! malformed data, 3 failure while training or evaluating.

pub mod config;
pub mod plot;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};

pub use config::{parse_config, parse_config_onto, serialize_config, MatrixSpec, Profile, CONFIG_KEYS};

use crate::data::{data_root, load_split, DataError, DatasetKind, ImageSet, Split};
use crate::eval::{aggregate, read_reports_csv, reports_to_csv, roc_auc, summary_to_csv, GroupSummary, MetricsReport};
use crate::models::{Checkpoint, StudentModel};
use crate::pipeline::{
    run_group, run_regime, student_scores, teacher_scores, train_student_offline, train_teacher, ConfigError, DataBundle, EpochRecord,
    ExperimentConfig, PipelineError, Regime, RunOutcome, Track,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => CliError::Config(c),
            PipelineError::Data(_) | PipelineError::MissingPool | PipelineError::EmptyTrainingSet => CliError::Data(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "kdad", version, about = "Teacher/student anomaly detection experiments")]
pub struct Cli {
    /// Dataset root; falls back to $KDAD_DATA_DIR, then ./data.
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a teacher autoencoder and save its checkpoint.
    TrainTeacher(RunArgs),
    /// Distil a student from a saved teacher.
    Distill(DistillArgs),
    /// Run one regime end to end and write metrics.
    Run(RunArgs),
    /// Run every cell of a matrix file.
    RunMatrix(MatrixArgs),
    /// Render results CSV as an SVG chart.
    Plot(PlotArgs),
    /// Print aggregated results.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Extra assignment applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_defaults: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Teacher checkpoint written by `train-teacher`.
    #[arg(long, value_name = "FILE")]
    pub teacher: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    /// Matrix file; the default matrix covers every cell.
    #[arg(long, value_name = "FILE")]
    pub matrix: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Print the resolved matrix and exit.
    #[arg(long)]
    pub print_defaults: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// results.csv from `run-matrix`.
    #[arg(long, value_name = "FILE")]
    pub csv: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "FILE")]
    pub csv: PathBuf,
    /// Also write the aggregate as CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let root = match &cli.data_dir {
        Some(d) => d.clone(),
        None => data_root(Path::new("data")),
    };
    match cli.command {
        Command::TrainTeacher(a) => cmd_train_teacher(&root, &a),
        Command::Distill(a) => cmd_distill(&root, &a),
        Command::Run(a) => cmd_run(&root, &a),
        Command::RunMatrix(a) => cmd_run_matrix(&root, &a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn read_text(path: &Path) -> Result<String, std::io::Error> {
    fs::read_to_string(path)
}

/// Defaults, then the config file, then the profile, then `--set` pairs.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let text = read_text(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg = parse_config_onto(&text, cfg)?;
    }
    if let Some(p) = args.profile {
        p.apply(&mut cfg);
    }
    for pair in &args.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        config::set_field(&mut cfg, k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(out: &Option<PathBuf>) -> Result<&Path, CliError> {
    out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn log_jsonl(log: &[EpochRecord]) -> String {
    let mut s = String::new();
    for r in log {
        s.push_str(&serde_json::to_string(r).expect("log record serializes"));
        s.push('\n');
    }
    s
}

fn report_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run_dir(dir: &Path, run: &RunOutcome) -> Result<(), CliError> {
    create_dir(dir)?;
    let report = run.report();
    write_atomic(&dir.join("config.txt"), serialize_config(&run.config).as_bytes())?;
    write_atomic(&dir.join("teacher.json"), Checkpoint::from_teacher(&run.teacher).to_json().as_bytes())?;
    write_atomic(&dir.join("student.json"), Checkpoint::from_student(&run.student).to_json().as_bytes())?;
    write_atomic(&dir.join("train_log.jsonl"), log_jsonl(&run.log).as_bytes())?;
    write_atomic(&dir.join("metrics.csv"), reports_to_csv(std::slice::from_ref(&report)).as_bytes())?;
    write_atomic(&dir.join("metrics.json"), report_json(&report).as_bytes())
}

fn print_report(r: &MetricsReport) {
    println!(
        "{} class {} {} {} seed {}: auc_teacher {:.4} auc_student {:.4} ratio {:.4} emd_inlier {:.4} emd_outlier {:.4}",
        r.dataset, r.inlier_class, r.regime, r.student_id, r.seed, r.auc_teacher, r.auc_student, r.auc_ratio, r.emd_inlier, r.emd_outlier
    );
}

fn cmd_train_teacher(root: &Path, args: &RunArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    if args.print_defaults {
        print!("{}", serialize_config(&cfg));
        return Ok(());
    }
    let out = out_dir(&args.out)?;
    let data = DataBundle::load(root, &cfg)?;
    let (teacher, log) = train_teacher(&cfg, &data.train)?;
    let scores = teacher_scores(&teacher, &data.test)?;
    let (anom, inl) = split_by_label(&scores, &data.test_labels);
    let auc = roc_auc(&anom, &inl).map_err(|e| CliError::Runtime(e.to_string()))?;
    create_dir(out)?;
    write_atomic(&out.join("config.txt"), serialize_config(&cfg).as_bytes())?;
    write_atomic(&out.join("teacher.json"), Checkpoint::from_teacher(&teacher).to_json().as_bytes())?;
    write_atomic(&out.join("train_log.jsonl"), log_jsonl(&log).as_bytes())?;
    println!("auc_teacher {auc:.4}");
    Ok(())
}

fn split_by_label(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let mut anom = Vec::new();
    let mut inl = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 1 { anom.push(s) } else { inl.push(s) }
    }
    (anom, inl)
}

fn cmd_distill(root: &Path, args: &DistillArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&args.run)?;
    cfg.regime = Regime::Offline;
    if args.run.print_defaults {
        print!("{}", serialize_config(&cfg));
        return Ok(());
    }
    let out = out_dir(&args.run.out)?;
    let path = args.teacher.as_ref().ok_or_else(|| CliError::Usage("--teacher is required".into()))?;
    let text = read_text(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let teacher = Checkpoint::from_json(&text)
        .and_then(Checkpoint::into_teacher)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    cfg.teacher_loss = teacher.loss;
    let data = DataBundle::load(root, &cfg)?;
    let (student, log) = train_student_offline(&teacher, StudentModel::build(cfg.student_id, cfg.seed), &data.train, &cfg)?;
    let raw = teacher_scores(&teacher, &data.test)?;
    let pred = student_scores(&student, &data.test)?;
    let scores = crate::eval::evaluate_scores(&raw, &pred, &data.test_labels, cfg.delta, cfg.emd_space)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let run = RunOutcome {
        teacher_scores: crate::pipeline::ScoreSet::teacher(raw, &data.test_labels, cfg.delta),
        student_scores: crate::pipeline::ScoreSet::student(pred, &data.test_labels),
        config: cfg,
        teacher,
        student,
        log,
        scores,
    };
    write_run_dir(out, &run)?;
    print_report(&run.report());
    Ok(())
}

fn cmd_run(root: &Path, args: &RunArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    if args.print_defaults {
        print!("{}", serialize_config(&cfg));
        return Ok(());
    }
    let out = out_dir(&args.out)?;
    let data = DataBundle::load(root, &cfg)?;
    let run = run_regime(&cfg, &data)?;
    write_run_dir(out, &run)?;
    print_report(&run.report());
    Ok(())
}

/// Why a matrix cell produced no result.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub config: ExperimentConfig,
    pub data_error: bool,
    pub message: String,
}

/// Results of a matrix in cell order.
#[derive(Debug)]
pub struct MatrixOutcome {
    pub runs: Vec<RunOutcome>,
    pub failures: Vec<CellFailure>,
}

/// Cells that differ only in regime and student share a teacher.
fn group_cells(cells: &[ExperimentConfig]) -> Vec<(ExperimentConfig, Vec<usize>)> {
    let mut groups: Vec<(ExperimentConfig, Vec<usize>)> = Vec::new();
    for (i, c) in cells.iter().enumerate() {
        if !c.coupled {
            if let Some(g) = groups.iter_mut().find(|(k, _)| c.shares_teacher(k)) {
                g.1.push(i);
                continue;
            }
        }
        groups.push((c.clone(), vec![i]));
    }
    groups
}

type Loaded = Result<Arc<ImageSet>, String>;

fn load_sets(root: &Path, cells: &[ExperimentConfig]) -> HashMap<(DatasetKind, Split), Loaded> {
    let mut sets = HashMap::new();
    let mut want = Vec::new();
    for c in cells {
        want.push((c.dataset, Split::Train));
        want.push((c.dataset, Split::Test));
        if c.regime == Regime::ColearnOutlier {
            want.push((c.dataset.opposite(), Split::Train));
        }
    }
    for key in want {
        sets.entry(key).or_insert_with(|| {
            log::info!("loading {} {:?}", key.0, key.1);
            load_split(root, key.0, key.1).map(Arc::new).map_err(|e| e.to_string())
        });
    }
    sets
}

fn run_one_group(
    sets: &HashMap<(DatasetKind, Split), Loaded>,
    key: &ExperimentConfig,
    cells: &[ExperimentConfig],
    members: &[usize],
) -> GroupResult {
    let get = |k: (DatasetKind, Split)| -> Result<Arc<ImageSet>, (bool, String)> {
        match sets.get(&k) {
            Some(Ok(s)) => Ok(Arc::clone(s)),
            Some(Err(e)) => Err((true, e.clone())),
            None => Err((false, "dataset not loaded".into())),
        }
    };
    let train = get((key.dataset, Split::Train))?;
    let test = get((key.dataset, Split::Test))?;
    let needs_pool = members.iter().any(|&i| cells[i].regime == Regime::ColearnOutlier);
    let pool = if needs_pool { Some(get((key.dataset.opposite(), Split::Train))?) } else { None };
    let classify = |e: PipelineError| {
        let data = matches!(e, PipelineError::Data(_) | PipelineError::MissingPool | PipelineError::EmptyTrainingSet);
        (data, e.to_string())
    };
    let data = DataBundle::build(key, &train, &test, pool).map_err(classify)?;
    let tracks: Vec<Track> = members
        .iter()
        .map(|&i| Track {
            regime: cells[i].regime,
            student: cells[i].student_id,
        })
        .collect();
    run_group(key, &data, &tracks).map_err(classify)
}

/// Outcome of one teacher group; the error carries whether it was a data error.
type GroupResult = Result<Vec<RunOutcome>, (bool, String)>;

/// Runs `cells` on `parallelism` threads. The result does not depend on the
/// number of threads.
pub fn run_matrix(root: &Path, cells: &[ExperimentConfig], parallelism: usize) -> MatrixOutcome {
    let sets = load_sets(root, cells);
    let groups = group_cells(cells);
    let slots: Mutex<Vec<Option<GroupResult>>> = Mutex::new(vec![None; groups.len()]);
    let next = AtomicUsize::new(0);
    let workers = parallelism.clamp(1, groups.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let g = next.fetch_add(1, Ordering::Relaxed);
                let Some((key, members)) = groups.get(g) else { break };
                log::info!(
                    "group {}/{}: {} class {} seed {} ({} cells)",
                    g + 1,
                    groups.len(),
                    key.dataset,
                    key.inlier_class,
                    key.seed,
                    members.len()
                );
                let r = run_one_group(&sets, key, cells, members);
                slots.lock().expect("result slots")[g] = Some(r);
            });
        }
    });

    let mut by_cell: Vec<Option<Result<RunOutcome, CellFailure>>> = (0..cells.len()).map(|_| None).collect();
    for ((_, members), slot) in groups.iter().zip(slots.into_inner().expect("result slots")) {
        match slot.expect("every group ran") {
            Ok(runs) => {
                for (&i, run) in members.iter().zip(runs) {
                    by_cell[i] = Some(Ok(run));
                }
            }
            Err((data_error, message)) => {
                for &i in members {
                    by_cell[i] = Some(Err(CellFailure {
                        config: cells[i].clone(),
                        data_error,
                        message: message.clone(),
                    }));
                }
            }
        }
    }
    let mut out = MatrixOutcome {
        runs: Vec::new(),
        failures: Vec::new(),
    };
    // every cell belongs to exactly one group
    for r in by_cell.into_iter().flatten() {
        match r {
            Ok(run) => out.runs.push(run),
            Err(f) => out.failures.push(f),
        }
    }
    out
}

/// Directory name of a cell inside `runs/`.
pub fn cell_dir_name(c: &ExperimentConfig) -> String {
    format!("{}-c{}-{}-{}-s{}", c.dataset, c.inlier_class, c.regime, c.student_id, c.seed)
}

fn failures_csv(failures: &[CellFailure]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(["dataset", "inlier_class", "regime", "student_id", "seed", "kind", "error"]).map_err(err)?;
    for f in failures {
        let c = &f.config;
        w.write_record([
            c.dataset.to_string(),
            c.inlier_class.to_string(),
            c.regime.to_string(),
            c.student_id.to_string(),
            c.seed.to_string(),
            if f.data_error { "data" } else { "runtime" }.to_string(),
            f.message.clone(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cmd_run_matrix(root: &Path, args: &MatrixArgs) -> Result<(), CliError> {
    let mut spec = match &args.matrix {
        Some(path) => {
            let text = read_text(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            MatrixSpec::parse(&text)?
        }
        None => MatrixSpec::default(),
    };
    if let Some(p) = args.profile {
        spec.apply_profile(p);
    }
    let cells = spec.cells(args.profile)?;
    if args.print_defaults {
        print!("{}", spec.serialize());
        return Ok(());
    }
    let out = out_dir(&args.out)?;
    let parallelism = match args.parallelism {
        Some(0) => return Err(CliError::Usage("--parallelism must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    create_dir(out)?;
    write_atomic(&out.join("matrix.txt"), spec.serialize().as_bytes())?;
    let result = run_matrix(root, &cells, parallelism);
    for run in &result.runs {
        write_run_dir(&out.join("runs").join(cell_dir_name(&run.config)), run)?;
    }
    let reports: Vec<MetricsReport> = result.runs.iter().map(RunOutcome::report).collect();
    write_atomic(&out.join("results.csv"), reports_to_csv(&reports).as_bytes())?;
    let summary = aggregate(&reports);
    write_atomic(&out.join("summary.csv"), summary_to_csv(&summary).as_bytes())?;
    write_atomic(&out.join("failures.csv"), failures_csv(&result.failures)?.as_bytes())?;
    print!("{}", summary_table(&summary));
    for f in &result.failures {
        log::warn!("{} failed: {}", cell_dir_name(&f.config), f.message);
    }
    if reports.is_empty() {
        let msg = format!("all {} cells failed", cells.len());
        return Err(if result.failures.iter().all(|f| f.data_error) {
            CliError::Data(msg)
        } else {
            CliError::Runtime(msg)
        });
    }
    Ok(())
}

fn read_results(path: &Path) -> Result<Vec<MetricsReport>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_reports_csv(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_plot(args: &PlotArgs) -> Result<(), CliError> {
    let reports = read_results(&args.csv)?;
    let svg = plot::render_svg(&reports).ok_or_else(|| CliError::Data("no rows to plot".into()))?;
    write_atomic(&args.out, svg.as_bytes())
}

/// Fixed-width table of the aggregate, one line per group.
pub fn summary_table(summary: &[GroupSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:<16} {:<4} {:>4} {:>17} {:>17} {:>17}",
        "dataset", "regime", "stu", "runs", "auc_ratio", "emd_inlier", "emd_outlier"
    );
    for g in summary {
        let _ = writeln!(
            s,
            "{:<8} {:<16} {:<4} {:>4} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
            g.dataset.to_string(),
            g.regime.to_string(),
            g.student_id.to_string(),
            g.runs,
            g.auc_ratio.mean,
            g.auc_ratio.std,
            g.emd_inlier.mean,
            g.emd_inlier.std,
            g.emd_outlier.mean,
            g.emd_outlier.std
        );
    }
    s
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let reports = read_results(&args.csv)?;
    let summary = aggregate(&reports);
    print!("{}", summary_table(&summary));
    if let Some(out) = &args.out {
        write_atomic(out, summary_to_csv(&summary).as_bytes())?;
    }
    Ok(())
}
