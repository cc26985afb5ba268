//! The optimization loop: rank weighting, surrogate refits, trust-region
//! proposals and periodic weighted fine-tuning of the autoencoder.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::gbt::{self, CategoricalDataset, GbtConfig, TreeEnsemble};
use crate::image::Image;
use crate::qae::{LatentGrid, QaeModel};
use crate::treeopt::{self, VariableDomain};

pub const DEFAULT_WEIGHT_K: f64 = 1e-3;

/// A black-box objective over images.
pub trait Objective {
    fn evaluate(&self, image: &Image) -> Result<f64>;
}

impl<F: Fn(&Image) -> Result<f64>> Objective for F {
    fn evaluate(&self, image: &Image) -> Result<f64> {
        self(image)
    }
}

/// Rank-based weights `w_i ∝ 1 / (k N + rank_i)` where `rank_i` counts the
/// items with a strictly greater score.
pub fn rank_weights(scores: &[f64], k: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(invalid("rank weights need at least one score"));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(invalid(format!("weight k must be positive, got {k}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("scores must be finite"));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = alloc::vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && scores[order[pos - 1]] == scores[i] { ranks[order[pos - 1]] } else { pos };
    }
    let kn = k * n as f64;
    let raw: Vec<f64> = ranks.iter().map(|&r| 1.0 / (kn + r as f64)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Indices of the `t` largest importances (ties to the lower index), sorted.
pub fn select_free_variables(importances: &[f64], t: usize) -> Result<Vec<usize>> {
    if t > importances.len() {
        return Err(invalid(format!("cannot select {t} of {} variables", importances.len())));
    }
    let mut order: Vec<usize> = (0..importances.len()).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    order.truncate(t);
    order.sort_unstable();
    Ok(order)
}

/// Images with their objective values and normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    images: Vec<Image>,
    scores: Vec<f64>,
    weights: Vec<f64>,
    k: f64,
}

impl WeightedDataset {
    /// Uniform weights; `k` defaults to [`DEFAULT_WEIGHT_K`] for later reweighting.
    pub fn uniform(images: Vec<Image>, scores: Vec<f64>) -> Result<Self> {
        Self::check(&images, &scores)?;
        let n = images.len();
        Ok(WeightedDataset {
            images,
            scores,
            weights: alloc::vec![1.0 / n as f64; n],
            k: DEFAULT_WEIGHT_K,
        })
    }

    /// Rank-weighted with hyperparameter `k`.
    pub fn ranked(images: Vec<Image>, scores: Vec<f64>, k: f64) -> Result<Self> {
        Self::check(&images, &scores)?;
        let weights = rank_weights(&scores, k)?;
        Ok(WeightedDataset { images, scores, weights, k })
    }

    fn check(images: &[Image], scores: &[f64]) -> Result<()> {
        if images.is_empty() {
            return Err(invalid("dataset must not be empty"));
        }
        if images.len() != scores.len() {
            return Err(invalid(format!("{} images but {} scores", images.len(), scores.len())));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(invalid("scores must be finite"));
        }
        let shape = images[0].shape();
        if images.iter().any(|im| im.shape() != shape) {
            return Err(invalid("images differ in shape"));
        }
        Ok(())
    }

    /// Appends items and recomputes rank weights over everything.
    pub fn extend_ranked(&mut self, items: impl IntoIterator<Item = (Image, f64)>, k: f64) -> Result<()> {
        let mut images = self.images.clone();
        let mut scores = self.scores.clone();
        for (im, s) in items {
            images.push(im);
            scores.push(s);
        }
        *self = Self::ranked(images, scores, k)?;
        Ok(())
    }

    /// Appends items, keeping the existing weights scheme untouched except
    /// for renormalization: new items get the mean weight.
    pub(crate) fn extend_plain(&mut self, items: impl IntoIterator<Item = (Image, f64)>) -> Result<()> {
        let mut images = core::mem::take(&mut self.images);
        let mut scores = core::mem::take(&mut self.scores);
        for (im, s) in items {
            images.push(im);
            scores.push(s);
        }
        let k = self.k;
        *self = Self::uniform(images, scores)?;
        self.k = k;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Highest stored score.
    pub fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// How the anchor sample of each proposal is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorSampling {
    #[default]
    Uniform,
    /// Proportional to the current dataset weights.
    Weighted,
}

/// What happens every `retrain_every` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrainMode {
    /// Rank-weighted fine-tuning.
    #[default]
    Weighted,
    /// Fine-tuning with uniform weights.
    Uniform,
    /// Queries are merged into the dataset but the autoencoder is never
    /// touched.
    Disabled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsoConfig {
    pub query_budget: usize,
    pub retrain_every: usize,
    pub free_vars: usize,
    pub weight_k: f64,
    pub seed: u64,
    pub finetune_epochs: usize,
    pub retrain: RetrainMode,
    pub anchor: AnchorSampling,
    pub surrogate: GbtConfig,
}

impl Default for LsoConfig {
    fn default() -> Self {
        LsoConfig {
            query_budget: 500,
            retrain_every: 5,
            free_vars: 8,
            weight_k: DEFAULT_WEIGHT_K,
            seed: 0,
            finetune_epochs: 1,
            retrain: RetrainMode::Weighted,
            anchor: AnchorSampling::Uniform,
            surrogate: GbtConfig::default(),
        }
    }
}

impl LsoConfig {
    pub fn validate(&self, num_latents: usize) -> Result<()> {
        if self.free_vars == 0 || self.free_vars > num_latents {
            return Err(invalid(format!("free_vars must be in 1..={num_latents}, got {}", self.free_vars)));
        }
        if self.retrain_every == 0 {
            return Err(invalid("retrain_every must be at least 1"));
        }
        if !(self.weight_k.is_finite() && self.weight_k > 0.0) {
            return Err(invalid("weight_k must be positive"));
        }
        self.surrogate.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    /// 1-based.
    pub iteration: usize,
    pub latent: LatentGrid,
    pub image: Image,
    pub f_value: f64,
    /// Surrogate prediction at `latent` when it was proposed.
    pub surrogate_value: f64,
    /// Index into the dataset of the anchor sample.
    pub anchor_index: usize,
    /// Anchor codes; the non-free variables of `latent` equal these.
    pub anchor: Vec<usize>,
    pub free_variables: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<QueryRecord>,
    /// Iterations after which the autoencoder was fine-tuned.
    pub retrain_events: Vec<usize>,
}

impl Trajectory {
    pub fn f_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f_value).collect()
    }

    pub fn top10(&self) -> Vec<Option<f64>> {
        topk_curve(&self.f_values(), 10)
    }

    pub fn top50(&self) -> Vec<Option<f64>> {
        topk_curve(&self.f_values(), 50)
    }

    /// Last defined value of the top-`k` curve.
    pub fn final_topk(&self, k: usize) -> Option<f64> {
        topk_curve(&self.f_values(), k).last().copied().flatten()
    }
}

/// `k`-th largest value among the first `m` entries, for every `m`; `None`
/// while fewer than `k` values exist.
pub fn topk_curve(values: &[f64], k: usize) -> Vec<Option<f64>> {
    let k = k.max(1);
    let mut heap: BinaryHeap<Reverse<Total>> = BinaryHeap::with_capacity(k + 1);
    values
        .iter()
        .map(|&v| {
            heap.push(Reverse(Total(v)));
            if heap.len() > k {
                heap.pop();
            }
            (heap.len() == k).then(|| heap.peek().expect("non-empty").0 .0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Total(f64);

impl Eq for Total {}

impl PartialOrd for Total {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Total {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// What the optimizer is about to solve; handed to observers before each
/// proposal.
pub struct Proposal<'a> {
    pub iteration: usize,
    pub surrogate: &'a TreeEnsemble,
    pub domain: &'a VariableDomain,
}

/// Mutable state of one optimization run.
pub struct LsoState<'a, O: Objective + ?Sized> {
    config: LsoConfig,
    objective: &'a O,
    model: QaeModel,
    dataset: WeightedDataset,
    dataset_latents: Vec<Vec<usize>>,
    pending: Vec<(Image, Vec<usize>, f64)>,
    surrogate: TreeEnsemble,
    rng: ChaCha8Rng,
    iteration: usize,
    retrain_events: Vec<usize>,
}

impl<'a, O: Objective + ?Sized> LsoState<'a, O> {
    /// Encodes the dataset and fits the initial surrogate.
    pub fn new(config: LsoConfig, objective: &'a O, model: QaeModel, dataset: WeightedDataset) -> Result<Self> {
        config.validate(model.num_latents())?;
        let mut state = LsoState {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            objective,
            dataset_latents: Vec::new(),
            pending: Vec::new(),
            surrogate: TreeEnsemble::from_parts(alloc::vec![1], 0.0, Vec::new(), GbtConfig::default())?,
            model,
            dataset,
            iteration: 0,
            retrain_events: Vec::new(),
        };
        state.reencode()?;
        state.refit()?;
        Ok(state)
    }

    fn reencode(&mut self) -> Result<()> {
        self.dataset_latents = self
            .dataset
            .images()
            .iter()
            .map(|im| self.model.encode_latent(im).map(LatentGrid::into_codes))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Surrogate training set: the encoded dataset followed by queries not yet
    /// merged into it.
    pub fn surrogate_data(&self) -> Result<CategoricalDataset> {
        let k = self.model.config().codebook_size;
        let mut data = CategoricalDataset::uniform(self.model.num_latents(), k)?;
        for (z, &s) in self.dataset_latents.iter().zip(self.dataset.scores()) {
            data.push(z.clone(), s)?;
        }
        for (_, z, s) in &self.pending {
            data.push(z.clone(), *s)?;
        }
        Ok(data)
    }

    fn refit(&mut self) -> Result<()> {
        self.surrogate = gbt::fit(&self.surrogate_data()?, &self.config.surrogate)?;
        Ok(())
    }

    pub fn surrogate(&self) -> &TreeEnsemble {
        &self.surrogate
    }

    pub fn model(&self) -> &QaeModel {
        &self.model
    }

    pub fn dataset(&self) -> &WeightedDataset {
        &self.dataset
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn retrain_events(&self) -> &[usize] {
        &self.retrain_events
    }

    /// One proposal: anchor, trust region, exact maximization, decode,
    /// evaluate, refit.
    pub fn step<F: FnMut(&Proposal<'_>)>(&mut self, observer: &mut F) -> Result<QueryRecord> {
        self.iteration += 1;
        let anchor_index = match self.config.anchor {
            AnchorSampling::Uniform => self.rng.gen_range(0..self.dataset.len()),
            AnchorSampling::Weighted => WeightedIndex::new(self.dataset.weights())
                .map_err(|e| invalid(format!("bad anchor weights: {e}")))?
                .sample(&mut self.rng),
        };
        let anchor = self.dataset_latents[anchor_index].clone();
        let free = select_free_variables(&self.surrogate.feature_importances(), self.config.free_vars)?;
        let domain = VariableDomain::trust_region(self.surrogate.domain_sizes(), &anchor, &free)?;
        observer(&Proposal {
            iteration: self.iteration,
            surrogate: &self.surrogate,
            domain: &domain,
        });
        let solution = treeopt::maximize(&self.surrogate, &domain)?;
        let (h, w) = self.model.latent_shape();
        let latent = LatentGrid::new(h, w, solution.assignment.clone())?;
        let image = self.model.decode(&latent)?;
        let f_value = self.objective.evaluate(&image)?;
        if !f_value.is_finite() {
            return Err(crate::error::Error::NumericalDomain(format!(
                "objective returned {f_value} at iteration {}",
                self.iteration
            )));
        }
        self.pending.push((image.clone(), solution.assignment, f_value));
        if self.iteration.is_multiple_of(self.config.retrain_every) {
            self.retrain()?;
        } else {
            self.refit()?;
        }
        Ok(QueryRecord {
            iteration: self.iteration,
            latent,
            image,
            f_value,
            surrogate_value: solution.value,
            anchor_index,
            anchor,
            free_variables: free,
        })
    }

    /// Merges pending queries into the dataset; with retraining enabled the
    /// autoencoder is fine-tuned and every item re-encoded. The surrogate is
    /// refit from scratch either way.
    fn retrain(&mut self) -> Result<()> {
        let items: Vec<(Image, f64)> = self.pending.iter().map(|(im, _, s)| (im.clone(), *s)).collect();
        let codes: Vec<Vec<usize>> = self.pending.drain(..).map(|(_, z, _)| z).collect();
        match self.config.retrain {
            RetrainMode::Disabled => {
                self.dataset.extend_plain(items)?;
                self.dataset_latents.extend(codes);
            }
            mode => {
                self.dataset.extend_ranked(items, self.config.weight_k)?;
                let weights = match mode {
                    RetrainMode::Uniform => alloc::vec![1.0; self.dataset.len()],
                    _ => self.dataset.weights().to_vec(),
                };
                let seed = finetune_seed(self.config.seed, self.retrain_events.len());
                self.model
                    .fit_weighted(self.dataset.images(), &weights, self.config.finetune_epochs, seed)?;
                self.reencode()?;
                self.retrain_events.push(self.iteration);
            }
        }
        self.refit()
    }

    /// Merges any remaining queries into the dataset without fine-tuning.
    pub fn finish(mut self) -> Result<(QaeModel, WeightedDataset)> {
        let items: Vec<(Image, f64)> = self.pending.drain(..).map(|(im, _, s)| (im, s)).collect();
        if !items.is_empty() {
            match self.config.retrain {
                RetrainMode::Disabled => self.dataset.extend_plain(items)?,
                _ => self.dataset.extend_ranked(items, self.config.weight_k)?,
            }
        }
        Ok((self.model, self.dataset))
    }
}

fn finetune_seed(seed: u64, event: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(event as u64 + 1)
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub model: QaeModel,
    pub dataset: WeightedDataset,
}

/// Runs the full loop for `config.query_budget` iterations.
pub fn run<O: Objective + ?Sized>(config: &LsoConfig, objective: &O, model: QaeModel, dataset: WeightedDataset) -> Result<RunOutcome> {
    run_observed(config, objective, model, dataset, |_| {})
}

/// [`run`] with a hook invoked before every exact maximization.
pub fn run_observed<O, F>(config: &LsoConfig, objective: &O, model: QaeModel, dataset: WeightedDataset, mut observer: F) -> Result<RunOutcome>
where
    O: Objective + ?Sized,
    F: FnMut(&Proposal<'_>),
{
    let mut state = LsoState::new(config.clone(), objective, model, dataset)?;
    let mut records = Vec::with_capacity(config.query_budget);
    for _ in 0..config.query_budget {
        records.push(state.step(&mut observer)?);
    }
    let retrain_events = state.retrain_events.clone();
    let (model, dataset) = state.finish()?;
    Ok(RunOutcome {
        trajectory: Trajectory { records, retrain_events },
        model,
        dataset,
    })
}

#[cfg(test)]
mod tests;
