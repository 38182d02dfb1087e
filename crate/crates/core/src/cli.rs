//! Command-line front end. Every subcommand reads and writes files in a run
//! directory so the stages can be chained.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::artifact::{ArtifactInputs, RunArtifact};
use crate::confidence::{
    fit_dmm, fit_gmm, fit_kde, rejection_curve, score, uniform_grid, ConfidenceKind, ConfidenceModel,
};
use crate::contour::{trace_contour, BBox};
use crate::error::{Error, Result};
use crate::fidelity::metrics_report;
use crate::io::{self, Format};
use crate::model::{EmbeddingTable, InitMode, PredictionTable, StudentParams, TrainConfig, TrainMode};
use crate::svd::fit_svd;
use crate::synth::{synth_teacher, SynthConfig};
use crate::trainer::{parse_schedule, train};

pub const PREDICTIONS: &str = "predictions.csv";
pub const SYNTH_CONFIG: &str = "synth_config.json";
pub const FIT_CONFIG: &str = "fit_config.json";
pub const EMBEDDING: &str = "embedding.csv";
pub const STUDENT: &str = "student.json";
pub const TRACE: &str = "trace.csv";
pub const SVD_EMBEDDING: &str = "svd_embedding.csv";
pub const SVD_MODEL: &str = "svd_model.json";
pub const CONFIDENCE: &str = "confidence.csv";
pub const METRICS: &str = "metrics.json";
pub const CONFUSION: &str = "confusion.csv";
pub const CONTOURS: &str = "contours.json";
pub const ARTIFACT: &str = "artifact.json";

#[derive(Debug, Parser)]
#[command(name = "darkviz", version, about = "Distil classifier prediction vectors into a 2-D map")]
struct Cli {
    /// Seed for every randomised step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Fixed reduction order and no timestamps, for bitwise-reproducible output.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Only report errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Directory holding the run's inputs and outputs.
    #[arg(long, global = true, default_value = "darkviz-run")]
    run_dir: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labelled teacher.
    Synth(SynthArgs),
    /// Train the embedding and student.
    Fit(FitArgs),
    /// Closed-form rank-2 factorisation of the teacher logits.
    Svd(InputArgs),
    /// Fit confidence models, score rows and build rejection curves.
    Confidence(ConfidenceArgs),
    /// Compression quality, local fidelity and the confusion matrix.
    Metrics(MetricsArgs),
    /// Iso-density contours of the student marginal.
    Contour(ContourArgs),
    /// Bundle the run into a single JSON artifact.
    Export(InputArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Prediction file (CSV or JSONL); defaults to the run's predictions.csv.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Confusable pair `i:j:strength`; repeatable.
    #[arg(long = "pair", value_parser = parse_pair)]
    pairs: Vec<(usize, usize, f64)>,
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = 10.0)]
    radius: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    Coordinate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    ClusterCenter,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr_means: f64,
    #[arg(long, default_value_t = 5e-3)]
    lr_prior: f64,
    #[arg(long, default_value_t = 1e-6)]
    lr_embed: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Joint)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = InitArg::ClusterCenter)]
    init: InitArg,
    /// Temperature breakpoints `epoch:T,...`, ending at T = 1.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, default_value_t = 2.0)]
    dof: f64,
}

#[derive(Debug, Args)]
struct ConfidenceArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Models to fit; repeatable.
    #[arg(long = "model", default_values = ["kde", "gmm", "dmm", "entropy"])]
    models: Vec<String>,
    /// Mixture components (defaults to the class count).
    #[arg(long)]
    components: Option<usize>,
    /// Number of kept-fraction steps in the rejection curves.
    #[arg(long, default_value_t = 20)]
    steps: usize,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Neighbourhood sizes for local fidelity.
    #[arg(long = "k", value_delimiter = ',', default_values_t = [5usize, 10])]
    ks: Vec<usize>,
}

#[derive(Debug, Args)]
struct ContourArgs {
    #[arg(long, default_value_t = 0.001)]
    level: f64,
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    /// Padding of the bounding box, as a fraction of its extent.
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected i:j:strength, got {s:?}"));
    }
    let i = parts[0].parse().map_err(|_| format!("bad class {:?}", parts[0]))?;
    let j = parts[1].parse().map_err(|_| format!("bad class {:?}", parts[1]))?;
    let w = parts[2].parse().map_err(|_| format!("bad strength {:?}", parts[2]))?;
    Ok((i, j, w))
}

struct Ctx {
    seed: u64,
    deterministic: bool,
    run_dir: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn predictions(&self, input: &InputArgs) -> Result<PredictionTable> {
        let path = input.input.clone().unwrap_or_else(|| self.path(PREDICTIONS));
        io::load_predictions(&path, Format::from_path(&path))
    }

    /// The run's embedding, checked against the prediction row ids.
    fn embedding(&self, preds: &PredictionTable) -> Result<EmbeddingTable> {
        let (emb, ids) = io::read_embedding(&self.path(EMBEDDING))?;
        emb.check_aligned(preds)?;
        if ids != preds.row_ids() {
            return Err(Error::Alignment(format!(
                "{} row ids do not match the predictions",
                self.path(EMBEDDING).display()
            )));
        }
        Ok(emb)
    }

    fn student(&self) -> Result<StudentParams> {
        io::read_student(&self.path(STUDENT))
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
    log::set_max_level(level);

    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        deterministic: cli.deterministic,
        run_dir: cli.run_dir,
    };
    std::fs::create_dir_all(&ctx.run_dir).map_err(|e| Error::io(&ctx.run_dir, e))?;
    let command = cli.command;
    match cli.threads {
        Some(0) => Err(Error::Usage("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {t} threads: {e}")))?
            .install(|| execute(&ctx, command)),
        None => execute(&ctx, command),
    }
}

fn execute(ctx: &Ctx, command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(ctx, a),
        Command::Fit(a) => cmd_fit(ctx, a),
        Command::Svd(a) => cmd_svd(ctx, a),
        Command::Confidence(a) => cmd_confidence(ctx, a),
        Command::Metrics(a) => cmd_metrics(ctx, a),
        Command::Contour(a) => cmd_contour(ctx, a),
        Command::Export(a) => cmd_export(ctx, a),
    }
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        classes: a.classes,
        n: a.n,
        confusable_pairs: a.pairs,
        outlier_fraction: a.outliers,
        radius: a.radius,
        spread: a.spread,
        tau: a.tau,
        seed: ctx.seed,
    };
    let table = synth_teacher(&cfg)?;
    let out = ctx.path(PREDICTIONS);
    io::write_predictions(&table, &out, Format::Csv)?;
    io::write_json(&cfg, &ctx.path(SYNTH_CONFIG))?;
    log::info!("wrote {} rows × {} classes to {}", table.n_rows(), table.n_classes(), out.display());
    Ok(())
}

fn cmd_fit(ctx: &Ctx, a: FitArgs) -> Result<()> {
    let preds = ctx.predictions(&a.input)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size.min(preds.n_rows()),
        lr_means: a.lr_means,
        lr_prior: a.lr_prior,
        lr_embed: a.lr_embed,
        mode: match a.mode {
            ModeArg::Joint => TrainMode::Joint,
            ModeArg::Coordinate => TrainMode::Coordinate,
        },
        temperature_schedule: match &a.schedule {
            Some(s) => parse_schedule(s)?,
            None => Vec::new(),
        },
        seed: ctx.seed,
        deterministic: ctx.deterministic,
        init: match a.init {
            InitArg::Random => InitMode::Random,
            InitArg::ClusterCenter => InitMode::ClusterCenter,
        },
        dof: a.dof,
    };
    if cfg.batch_size < a.batch_size {
        log::warn!("batch size {} capped at the {} rows", a.batch_size, preds.n_rows());
    }
    let (emb, params, trace) = train(&preds, &cfg)?;
    io::write_embedding(&emb, preds.row_ids(), &ctx.path(EMBEDDING))?;
    io::write_json(&params, &ctx.path(STUDENT))?;
    io::write_json(&cfg, &ctx.path(FIT_CONFIG))?;
    trace.write_csv(&ctx.path(TRACE))?;
    if let Some(last) = trace.records.last() {
        log::info!(
            "epoch {}: loss {:.5}, teacher agreement {:.4}",
            last.epoch,
            last.loss,
            last.acc_teacher
        );
    }
    Ok(())
}

fn cmd_svd(ctx: &Ctx, a: InputArgs) -> Result<()> {
    let preds = ctx.predictions(&a)?;
    let logits = preds.logit_matrix();
    let model = fit_svd(&logits, preds.n_rows(), preds.n_classes())?;
    let emb = EmbeddingTable::new(model.embed.clone())?;
    io::write_embedding(&emb, preds.row_ids(), &ctx.path(SVD_EMBEDDING))?;
    io::write_json(&model, &ctx.path(SVD_MODEL))?;
    let agree = model.teacher_agreement(&logits);
    log::info!(
        "σ = ({:.4}, {:.4}), residual {:.4}, teacher agreement {}/{}",
        model.singular_values[0],
        model.singular_values[1],
        model.residual,
        agree,
        preds.n_rows()
    );
    Ok(())
}

fn fit_confidence(
    kind: ConfidenceKind,
    preds: &PredictionTable,
    emb: &EmbeddingTable,
    components: usize,
    seed: u64,
) -> Result<ConfidenceModel> {
    match kind {
        ConfidenceKind::Kde => fit_kde(emb),
        ConfidenceKind::Gmm => fit_gmm(emb, components.min(emb.len()), seed),
        ConfidenceKind::Dmm => fit_dmm(preds, components.min(preds.n_rows()), seed),
        ConfidenceKind::Entropy => Ok(ConfidenceModel::Entropy),
    }
}

fn cmd_confidence(ctx: &Ctx, a: ConfidenceArgs) -> Result<()> {
    let preds = ctx.predictions(&a.input)?;
    let emb = ctx.embedding(&preds)?;
    let kinds = a
        .models
        .iter()
        .map(|m| m.parse::<ConfidenceKind>())
        .collect::<Result<Vec<_>>>()?;
    if a.steps == 0 {
        return Err(Error::Usage("--steps must be positive".into()));
    }
    let components = a.components.unwrap_or(preds.n_classes());
    if components == 0 {
        return Err(Error::Usage("--components must be positive".into()));
    }
    let grid = uniform_grid(a.steps);
    let predicted = preds.argmax();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for kind in kinds {
        if columns.iter().any(|(n, _)| n == kind.name()) {
            continue;
        }
        let model = fit_confidence(kind, &preds, &emb, components, ctx.seed)?;
        let scores = score(&model, Some(&emb), Some(&preds))?;
        if preds.labels().is_some() {
            let curve = rejection_curve(&scores, preds.labels(), &predicted, &grid)?;
            curve.write_csv(&ctx.path(&format!("rejection_{}.csv", kind.name())))?;
        } else {
            log::warn!("no labels; skipping the {} rejection curve", kind.name());
        }
        columns.push((kind.name().to_string(), scores));
    }
    write_scores(&ctx.path(CONFIDENCE), preds.row_ids(), &columns)
}

fn write_scores(path: &Path, ids: &[String], columns: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["id".to_string()];
    header.extend(columns.iter().map(|c| c.0.clone()));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(columns.iter().map(|c| c.1[i].to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `id,<model>...` score columns written by the confidence stage.
pub fn read_scores(path: &Path, ids: &[String]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let names: Vec<String> = r
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if ids.get(row).map(String::as_str) != rec.get(0) {
            return Err(Error::Alignment(format!(
                "{} line {line}: row id does not match the predictions",
                path.display()
            )));
        }
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v = field.parse::<f64>().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line,
                message: format!("bad score {field:?}"),
            })?;
            cols[c].push(v);
        }
    }
    if cols.iter().any(|c| c.len() != ids.len()) {
        return Err(Error::Alignment(format!(
            "{} does not have one score per row",
            path.display()
        )));
    }
    Ok(names.into_iter().zip(cols).collect())
}

fn cmd_metrics(ctx: &Ctx, a: MetricsArgs) -> Result<()> {
    let preds = ctx.predictions(&a.input)?;
    let emb = ctx.embedding(&preds)?;
    let params = ctx.student()?;
    let n = preds.n_rows();
    let ks: Vec<usize> = a.ks.iter().copied().filter(|&k| k < n).collect();
    if ks.len() < a.ks.len() {
        log::warn!("dropping neighbourhood sizes not below N = {n}");
    }
    let report = metrics_report(&preds, &emb, &params, &ks)?;
    io::write_json(&report, &ctx.path(METRICS))?;
    if let Some(cm) = &report.confusion {
        let names: Vec<String> = (0..preds.n_classes()).map(|c| c.to_string()).collect();
        cm.write_csv(&ctx.path(CONFUSION), &names)?;
    }
    log::info!(
        "KL_sym {:.5}, teacher agreement {:.4}",
        report.kl_sym_final,
        report.acc_teacher
    );
    Ok(())
}

fn cmd_contour(ctx: &Ctx, a: ContourArgs) -> Result<()> {
    let params = ctx.student()?;
    let (emb, _) = io::read_embedding(&ctx.path(EMBEDDING))?;
    if !(a.margin >= 0.0 && a.margin.is_finite()) {
        return Err(Error::Usage("--margin must be non-negative".into()));
    }
    let bbox = BBox::around(&emb, &params, a.margin)?.grown_to_level(&params, a.level)?;
    let set = trace_contour(&params, a.level, bbox, a.resolution)?;
    log::info!("{} contour paths at level {}", set.polylines.len(), a.level);
    io::write_json(&vec![set], &ctx.path(CONTOURS))
}

fn optional<T>(path: &Path, read: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        read(path).map(Some)
    } else {
        Ok(None)
    }
}

fn cmd_export(ctx: &Ctx, a: InputArgs) -> Result<()> {
    let preds = ctx.predictions(&a)?;
    let emb = ctx.embedding(&preds)?;
    let params = ctx.student()?;

    let mut config = Map::new();
    if let Some(v) = optional(&ctx.path(SYNTH_CONFIG), io::read_json::<Value>)? {
        config.insert("synth".into(), v);
    }
    if let Some(v) = optional(&ctx.path(FIT_CONFIG), io::read_json::<Value>)? {
        config.insert("fit".into(), v);
    }
    let metrics = match optional(&ctx.path(METRICS), io::read_json::<Value>)? {
        Some(Value::Object(m)) => m,
        Some(_) => {
            return Err(Error::Domain(format!(
                "{} is not a JSON object",
                ctx.path(METRICS).display()
            )))
        }
        None => Map::new(),
    };
    let mut metrics = metrics;
    let mut rejection = BTreeMap::new();
    let confidence = optional(&ctx.path(CONFIDENCE), |p| read_scores(p, preds.row_ids()))?.unwrap_or_default();
    for (name, _) in &confidence {
        let path = ctx.path(&format!("rejection_{name}.csv"));
        if let Some(curve) = optional(&path, crate::confidence::RejectionCurve::read_csv)? {
            rejection.insert(name.clone(), curve.points);
        }
    }
    if !rejection.is_empty() {
        metrics.insert("rejection".into(), json!(rejection));
    }
    let contours = optional(&ctx.path(CONTOURS), io::read_json)?.unwrap_or_default();

    let artifact = RunArtifact::build(ArtifactInputs {
        preds: &preds,
        emb: &emb,
        params: &params,
        seed: ctx.seed,
        deterministic: ctx.deterministic,
        config: Value::Object(config),
        class_names: None,
        confidence,
        metrics,
        contours,
    })?;
    let out = ctx.path(ARTIFACT);
    artifact.write(&out)?;
    log::info!("wrote {} points to {}", artifact.points.len(), out.display());
    Ok(())
}
