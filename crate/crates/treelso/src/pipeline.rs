//! In-memory experiment steps shared by the commands and the test suites.

use treelso_core::eval::{fid_like, mean_std, FeatureMap};
use treelso_core::lso::{run_observed, Proposal, RunOutcome};
use treelso_core::qae::LossRecord;
use treelso_core::task::{make_dataset, sample_faces, SmileScorer};
use treelso_core::{Image, QaeModel, WeightedDataset};

use crate::config::RunConfig;
use crate::error::Result;
use crate::formats::{checkpoint, images};

/// Training set with pixels at storage precision and scores recomputed on
/// those pixels, so that a saved and reloaded dataset is identical.
pub fn synth_dataset(cfg: &RunConfig) -> Result<WeightedDataset> {
    let raw = make_dataset(cfg.task.n, cfg.task.max_degree, cfg.task.seed)?;
    let scorer = SmileScorer::new();
    let imgs: Vec<Image> = raw.images().iter().map(images::quantize_pixels).collect();
    let scores = imgs.iter().map(|im| scorer.score(im)).collect::<Result<Vec<_>, _>>()?;
    Ok(WeightedDataset::uniform(imgs, scores)?)
}

/// Fresh model trained on the dataset's weights, rounded to checkpoint
/// precision.
pub fn pretrain(cfg: &RunConfig, data: &WeightedDataset) -> Result<(QaeModel, Vec<LossRecord>)> {
    let mut model = QaeModel::new(cfg.qae.to_config())?;
    let history = model.fit_weighted(data.images(), data.weights(), cfg.qae.pretrain_epochs, cfg.qae.seed)?;
    Ok((checkpoint::round_trip(&model), history))
}

pub fn optimize<F: FnMut(&Proposal<'_>)>(
    cfg: &RunConfig,
    model: QaeModel,
    data: WeightedDataset,
    observer: F,
) -> Result<RunOutcome> {
    Ok(run_observed(&cfg.lso_config(), &SmileScorer::new(), model, data, observer)?)
}

/// High-smile faces the FID-like score compares against.
pub fn reference_set(cfg: &RunConfig) -> Result<Vec<Image>> {
    let e = &cfg.eval;
    Ok(sample_faces(
        e.reference_n,
        e.reference_min_degree,
        treelso_core::task::MAX_DEGREE,
        e.reference_seed,
    )?)
}

/// Final numbers of one seeded end-to-end run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub data_max: f64,
    pub top10: Option<f64>,
    pub top50: Option<f64>,
    pub fid_like: Option<f64>,
    pub retrain_events: usize,
}

/// Synthesizes data, pretrains and optimizes with every seed set to `seed`.
pub fn run_seed(base: &RunConfig, seed: u64, reference: &[Image]) -> Result<(SeedSummary, RunOutcome)> {
    let mut cfg = base.clone();
    cfg.reseed(seed);
    cfg.validate()?;
    let data = synth_dataset(&cfg)?;
    let data_max = data.max_score();
    let (model, _) = pretrain(&cfg, &data)?;
    let outcome = optimize(&cfg, model, data, |_| {})?;
    let queries: Vec<Image> = outcome.trajectory.records.iter().map(|r| r.image.clone()).collect();
    let fid = if queries.len() >= 2 && reference.len() >= 2 {
        Some(fid_like(&queries, reference, cfg.eval.feature_map()?)?)
    } else {
        None
    };
    let summary = SeedSummary {
        seed,
        data_max,
        top10: outcome.trajectory.final_topk(10),
        top50: outcome.trajectory.final_topk(50),
        fid_like: fid,
        retrain_events: outcome.trajectory.retrain_events.len(),
    };
    Ok((summary, outcome))
}

/// `(metric, mean, std)` over the runs where the metric is defined.
pub fn summarize(runs: &[SeedSummary]) -> Vec<(String, f64, f64)> {
    let pick = |f: fn(&SeedSummary) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(f).collect() };
    let mut rows = Vec::new();
    for (name, values) in [
        ("top10", pick(|s| s.top10)),
        ("top50", pick(|s| s.top50)),
        ("fid_like", pick(|s| s.fid_like)),
    ] {
        if !values.is_empty() {
            let (m, s) = mean_std(&values);
            rows.push((name.to_owned(), m, s));
        }
    }
    rows
}

pub fn feature_map_or(cfg: &RunConfig, name: Option<&str>) -> Result<FeatureMap> {
    match name {
        Some(n) => FeatureMap::from_name(n).ok_or_else(|| crate::error::CliError::Usage(format!("unknown feature map `{n}`"))),
        None => cfg.eval.feature_map(),
    }
}
