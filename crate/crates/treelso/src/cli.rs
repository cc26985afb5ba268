//! Argument parsing and the subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use treelso_core::eval::{fid_like, FeatureMap};
use treelso_core::lso::LsoState;
use treelso_core::task::SmileScorer;
use treelso_core::treeopt::encode_mio;
use treelso_core::WeightedDataset;

use crate::config::{AnchorSetting, RetrainSetting, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{checkpoint, images, read_file, sha256_hex, tables, write_file};
use crate::manifest::{Inputs, Manifest, Outputs};
use crate::pipeline::{self, SeedSummary};

pub const IMAGES_FILE: &str = "images.img";
pub const SCORES_FILE: &str = "scores.csv";
pub const MODEL_FILE: &str = "model.qae";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const QUERIES_FILE: &str = "queries.img";
pub const FINAL_MODEL_FILE: &str = "final.qae";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Parser)]
#[command(name = "treelso", version, about = "Tree-ensemble optimization in the latent space of a quantized autoencoder")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a truncated synthetic face dataset.
    SynthData(SynthArgs),
    /// Train the autoencoder on a dataset.
    Pretrain(PretrainArgs),
    /// Run the optimization loop.
    Optimize(OptimizeArgs),
    /// FID-like distance between two image containers.
    Eval(EvalArgs),
    /// Write the MIO program solved at one iteration of a recorded run.
    ExportMio(ExportArgs),
    /// End-to-end runs over several seeds, aggregated.
    Report(ReportArgs),
    /// Sweep the number of free latent variables.
    Ablation(AblationArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = positive)]
    pub n: Option<usize>,
    #[arg(long)]
    pub max_degree: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Directory holding `images.img` and `scores.csv`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct LsoOverrides {
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub retrain_every: Option<usize>,
    #[arg(long)]
    pub free_vars: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub retrain: Option<RetrainSetting>,
    #[arg(long, value_enum)]
    pub anchor: Option<AnchorSetting>,
}

impl LsoOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let l = &mut cfg.lso;
        if let Some(v) = self.budget {
            l.query_budget = v;
        }
        if let Some(v) = self.retrain_every {
            l.retrain_every = v;
        }
        if let Some(v) = self.free_vars {
            l.free_vars = v;
        }
        if let Some(v) = self.finetune_epochs {
            l.finetune_epochs = v;
        }
        if let Some(v) = self.retrain {
            l.retrain = v;
        }
        if let Some(v) = self.anchor {
            l.anchor = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Directory holding `images.img` and `scores.csv`.
    #[arg(long)]
    pub data: PathBuf,
    /// Pretrained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub lso: LsoOverrides,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub set_a: PathBuf,
    /// Defaults to the configured high-smile reference set.
    #[arg(long)]
    pub set_b: Option<PathBuf>,
    /// `flatten`, `downsample4` or `all`.
    #[arg(long)]
    pub feature_map: Option<String>,
    /// Metric CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Output directory of an `optimize` run.
    #[arg(long)]
    pub run: PathBuf,
    /// 1-based iteration.
    #[arg(long)]
    pub iter: usize,
    /// Directory for `query_<iter>.lp`; the run directory by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `a..b` (inclusive) or a comma-separated list.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: SeedList,
    #[command(flatten)]
    pub lso: LsoOverrides,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    /// Comma-separated numbers of free variables.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8])]
    pub t: Vec<usize>,
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: SeedList,
    #[command(flatten)]
    pub lso: LsoOverrides,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

/// A parsed `--seeds` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

/// `3`, `1..5` (inclusive) or `1,4,9`.
pub fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    let bad = || format!("bad seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok(SeedList((a..=b).collect()));
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| bad()))
        .collect::<std::result::Result<_, _>>()
        .map(SeedList)
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
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

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::SynthData(a) => synth_data(cfg, a),
        Command::Pretrain(a) => pretrain(cfg, a),
        Command::Optimize(a) => optimize(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::ExportMio(a) => export_mio(a),
        Command::Report(a) => report(cfg, a),
        Command::Ablation(a) => ablation(cfg, a),
    }
}

fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| cfg.out_root())
}

fn synth_data(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    if let Some(n) = a.n {
        cfg.task.n = n;
    }
    if let Some(d) = a.max_degree {
        cfg.task.max_degree = d;
    }
    if let Some(s) = a.seed {
        cfg.task.seed = s;
    }
    cfg.validate()?;
    let data = pipeline::synth_dataset(&cfg)?;
    let dir = out_dir(&cfg, a.out);
    images::save(&dir.join(IMAGES_FILE), data.images())?;
    tables::save(&dir.join(SCORES_FILE), &tables::score_rows(data.scores()), tables::SCORE_HEADER)?;
    let min = data.scores().iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "wrote {} images to {}; score min {min:.4} max {:.4}",
        data.len(),
        dir.display(),
        data.max_score()
    );
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(WeightedDataset, [String; 2])> {
    let ip = dir.join(IMAGES_FILE);
    let sp = dir.join(SCORES_FILE);
    let ib = read_file(&ip)?;
    let sb = read_file(&sp)?;
    let imgs = images::decode(&ib).map_err(|m| CliError::parse(&ip, m))?;
    let scores = tables::load_scores(&sp)?;
    if imgs.len() != scores.len() {
        return Err(CliError::parse(&sp, format!("{} scores for {} images", scores.len(), imgs.len())));
    }
    let data = WeightedDataset::uniform(imgs, scores).map_err(|e| CliError::parse(&ip, e.to_string()))?;
    Ok((data, [sha256_hex(&ib), sha256_hex(&sb)]))
}

fn pretrain(mut cfg: RunConfig, a: PretrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.qae.pretrain_epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.qae.seed = s;
    }
    cfg.qae.to_config().validate()?;
    let (data, _) = load_dataset(&a.data)?;
    let (model, history) = pipeline::pretrain(&cfg, &data)?;
    let path = out_dir(&cfg, a.out).join(MODEL_FILE);
    let hash = checkpoint::save(&path, &model)?;
    match history.last() {
        Some(l) => println!(
            "wrote {} ({hash}); final epoch loss {:.5} (reconstruction {:.5})",
            path.display(),
            l.total,
            l.reconstruction
        ),
        None => println!("wrote {} ({hash}); no training epochs", path.display()),
    }
    Ok(())
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn optimize(mut cfg: RunConfig, a: OptimizeArgs) -> Result<()> {
    a.lso.apply(&mut cfg);
    if let Some(s) = a.seed {
        cfg.lso.seed = s;
    }
    let (data, [images_sha256, scores_sha256]) = load_dataset(&a.data)?;
    let (model, model_sha256) = checkpoint::load(&a.model)?;
    cfg.qae = crate::config::QaeSettings {
        pretrain_epochs: cfg.qae.pretrain_epochs,
        ..settings_of(&model)
    };
    cfg.validate()?;
    let outcome = pipeline::optimize(&cfg, model, data, |_| {})?;
    let dir = out_dir(&cfg, a.out);
    let t = &outcome.trajectory;
    tables::save(&dir.join(TRAJECTORY_FILE), &tables::trajectory_rows(t), tables::TRAJECTORY_HEADER)?;
    let queries: Vec<_> = t.records.iter().map(|r| r.image.clone()).collect();
    images::save(&dir.join(QUERIES_FILE), &queries)?;
    let final_model_sha256 = checkpoint::save(&dir.join(FINAL_MODEL_FILE), &outcome.model)?;
    let manifest = Manifest {
        command: "optimize".into(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        queries: t.records.len(),
        retrain_events: t.retrain_events.clone(),
        inputs: Inputs {
            images: absolute(&a.data.join(IMAGES_FILE)),
            images_sha256,
            scores: absolute(&a.data.join(SCORES_FILE)),
            scores_sha256,
            model: absolute(&a.model),
            model_sha256,
        },
        outputs: Outputs {
            trajectory: TRAJECTORY_FILE.into(),
            queries: QUERIES_FILE.into(),
            final_model: FINAL_MODEL_FILE.into(),
            final_model_sha256,
        },
        config: cfg,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    println!(
        "{} queries, {} retrain events; final top10 {} top50 {}",
        t.records.len(),
        t.retrain_events.len(),
        fmt_opt(t.final_topk(10)),
        fmt_opt(t.final_topk(50))
    );
    Ok(())
}

fn settings_of(model: &treelso_core::QaeModel) -> crate::config::QaeSettings {
    let c = model.config();
    crate::config::QaeSettings {
        hidden: c.hidden,
        latent_dim: c.latent_dim,
        codebook_size: c.codebook_size,
        beta: c.beta,
        learning_rate: c.learning_rate,
        batch_size: c.batch_size,
        seed: c.seed,
        pretrain_epochs: 0,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

fn eval(cfg: RunConfig, a: EvalArgs) -> Result<()> {
    let set_a = images::load(&a.set_a)?;
    let (set_b, name_b) = match &a.set_b {
        Some(p) => (images::load(p)?, p.display().to_string()),
        None => (pipeline::reference_set(&cfg)?, "reference".to_owned()),
    };
    let maps = match a.feature_map.as_deref() {
        Some("all") => vec![FeatureMap::Flatten, FeatureMap::Downsample4],
        other => vec![pipeline::feature_map_or(&cfg, other)?],
    };
    let mut rows = Vec::new();
    for map in maps {
        rows.push(tables::MetricRow {
            metric: "fid_like".into(),
            set_a: a.set_a.display().to_string(),
            set_b: name_b.clone(),
            feature_map: map.name().into(),
            value: fid_like(&set_a, &set_b, map)?,
        });
    }
    let path = a.out.unwrap_or_else(|| cfg.out_root().join("metrics.csv"));
    tables::save(&path, &rows, tables::METRIC_HEADER)?;
    for r in &rows {
        println!("{} {} {}", r.metric, r.feature_map, r.value);
    }
    Ok(())
}

fn export_mio(a: ExportArgs) -> Result<()> {
    let manifest_path = a.run.join(MANIFEST_FILE);
    let manifest = Manifest::load(&manifest_path)?;
    if a.iter == 0 || a.iter > manifest.queries {
        return Err(CliError::Usage(format!(
            "iteration {} outside the recorded 1..={}",
            a.iter, manifest.queries
        )));
    }
    let inp = &manifest.inputs;
    for (path, want) in [
        (&inp.images, &inp.images_sha256),
        (&inp.scores, &inp.scores_sha256),
        (&inp.model, &inp.model_sha256),
    ] {
        if sha256_hex(&read_file(path)?) != *want {
            return Err(CliError::parse(path, "contents changed since the run was recorded"));
        }
    }
    let data_dir = inp.images.parent().unwrap_or(Path::new("."));
    let (data, _) = load_dataset(data_dir)?;
    let (model, _) = checkpoint::load(&inp.model)?;
    let scorer = SmileScorer::new();
    let mut state = LsoState::new(manifest.config.lso_config(), &scorer, model, data)?;
    let mut lp: Option<Result<String>> = None;
    let mut record = None;
    while state.iteration() < a.iter {
        let target = a.iter;
        let r = state.step(&mut |p| {
            if p.iteration == target {
                lp = Some(encode_mio(p.surrogate, p.domain).map_err(CliError::from));
            }
        })?;
        record = Some(r);
    }
    let lp = lp.expect("target iteration reached")?;
    let record = record.expect("at least one step");
    let traj_path = a.run.join(TRAJECTORY_FILE);
    if traj_path.exists() {
        let rows: Vec<tables::TrajectoryRow> = tables::load(&traj_path)?;
        if let Some(row) = rows.iter().find(|r| r.iter == a.iter) {
            if row.surrogate_value != record.surrogate_value || row.f_value != record.f_value {
                return Err(CliError::Numerical(format!(
                    "replay of iteration {} diverged from {}",
                    a.iter,
                    traj_path.display()
                )));
            }
        }
    }
    let path = a.out.unwrap_or_else(|| a.run.clone()).join(format!("query_{}.lp", a.iter));
    write_file(&path, lp.as_bytes())?;
    println!(
        "wrote {}; surrogate optimum {} at iteration {}",
        path.display(),
        record.surrogate_value,
        a.iter
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunRow {
    seed: u64,
    data_max: f64,
    top10: Option<f64>,
    top50: Option<f64>,
    fid_like: Option<f64>,
    retrain_events: usize,
}

impl From<&SeedSummary> for RunRow {
    fn from(s: &SeedSummary) -> Self {
        RunRow {
            seed: s.seed,
            data_max: s.data_max,
            top10: s.top10,
            top50: s.top50,
            fid_like: s.fid_like,
            retrain_events: s.retrain_events,
        }
    }
}

/// Runs every seed (concurrently), writing each run's trajectory and queries
/// to `dir/seed_<s>`.
pub fn run_seeds(cfg: &RunConfig, seeds: &[u64], dir: &Path) -> Result<Vec<SeedSummary>> {
    if seeds.is_empty() {
        return Err(CliError::Usage("no seeds given".into()));
    }
    cfg.validate()?;
    let reference = pipeline::reference_set(cfg)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let (summary, outcome) = pipeline::run_seed(cfg, seed, &reference)?;
            let sub = dir.join(format!("seed_{seed}"));
            let t = &outcome.trajectory;
            tables::save(&sub.join(TRAJECTORY_FILE), &tables::trajectory_rows(t), tables::TRAJECTORY_HEADER)?;
            let queries: Vec<_> = t.records.iter().map(|r| r.image.clone()).collect();
            images::save(&sub.join(QUERIES_FILE), &queries)?;
            Ok(summary)
        })
        .collect()
}

fn report(mut cfg: RunConfig, a: ReportArgs) -> Result<()> {
    a.lso.apply(&mut cfg);
    let seeds = a.seeds.0;
    let dir = out_dir(&cfg, a.out);
    let runs = run_seeds(&cfg, &seeds, &dir)?;
    let rows: Vec<tables::SummaryRow> = pipeline::summarize(&runs)
        .into_iter()
        .map(|(metric, mean, std)| tables::SummaryRow { metric, mean, std })
        .collect();
    tables::save(&dir.join("report.csv"), &rows, tables::SUMMARY_HEADER)?;
    let per_run: Vec<RunRow> = runs.iter().map(RunRow::from).collect();
    write_file(&dir.join("runs.csv"), &tables::to_csv(&per_run)?)?;
    for r in &rows {
        println!("{} {:.4} +- {:.4}", r.metric, r.mean, r.std);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    t: usize,
    metric: String,
    mean: f64,
    std: f64,
}

fn ablation(mut cfg: RunConfig, a: AblationArgs) -> Result<()> {
    a.lso.apply(&mut cfg);
    let seeds = a.seeds.0;
    let dir = out_dir(&cfg, a.out);
    let mut rows = Vec::new();
    for &t in &a.t {
        let mut c = cfg.clone();
        c.lso.free_vars = t;
        let runs = run_seeds(&c, &seeds, &dir.join(format!("t_{t}")))?;
        for (metric, mean, std) in pipeline::summarize(&runs) {
            println!("t={t} {metric} {mean:.4} +- {std:.4}");
            rows.push(AblationRow { t, metric, mean, std });
        }
    }
    tables::save(&dir.join("ablation.csv"), &rows, &["t", "metric", "mean", "std"])
}
