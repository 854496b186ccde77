//! The alternating optimization loop.
//!
//! Per round, on a minibatch of demonstration sets:
//!
//! 1. **Assign**: re-index each set by latent role with the current HMM.
//! 2. **Learn**: update the per-role policies on the re-indexed sets.
//! 3. **Roll out**: run the updated policies to obtain `Â`.
//! 4. **Replace**: `A <- Â` (optionally only with probability `eta_n`).
//! 5. **Learn structure**: one SVI step of the HMM on the replaced sets.
//!
//! The loop stops after `rounds` rounds or once the validation imitation loss
//! has not improved for `patience` consecutive evaluations. The
//! "unstructured" ablation replaces step 1 by the identity on the stored
//! (shuffled) order and never touches an HMM.

use std::io::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::{apply_order, index_trajectories, CostMode};
use crate::hmm::{
    choose_seed_set, elbo_proxy, fit_svi, svi_step, HmmPrior, Observations, SviConfig,
    VariationalHmm,
};
use crate::rng::{self, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexingMode {
    /// Role-based assignment through the latent structure model.
    #[default]
    Coordinated,
    /// Identity on the stored order: an arbitrary role per demonstration.
    Unstructured,
}

impl std::str::FromStr for IndexingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coordinated" => Ok(IndexingMode::Coordinated),
            "unstructured" => Ok(IndexingMode::Unstructured),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected coordinated or unstructured)"
            ))),
        }
    }
}

/// `eta_n = min(1, start + growth * (n - 1))` for rounds `n = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingSchedule {
    pub start: f64,
    pub growth: f64,
}

impl MixingSchedule {
    pub fn eta(&self, round: usize) -> f64 {
        (self.start + self.growth * round.saturating_sub(1) as f64).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    pub num_agents: usize,
    pub rounds: usize,
    /// Demonstration sets per round.
    pub minibatch: usize,
    /// Step-size schedule and warm-start batch size of the HMM updates.
    pub svi: SviConfig,
    /// SVI passes over the demonstrations before the first round.
    pub warm_start_epochs: usize,
    /// Pseudo-count weight of the per-state moment seeds.
    pub seed_weight: f64,
    /// Rollout horizons, one per outer pass or round.
    pub horizon_schedule: Vec<usize>,
    /// Probabilistic replacement `A <- Â`; `None` always replaces.
    pub mixing: Option<MixingSchedule>,
    /// Entropy weight of the reported objective.
    pub lambda: f64,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
    pub mode: IndexingMode,
    pub cost_mode: CostMode,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        CoordinatorConfig {
            num_agents: 4,
            rounds: 10,
            minibatch: 100,
            svi: SviConfig::default(),
            warm_start_epochs: 2,
            seed_weight: 1.0,
            horizon_schedule: vec![1, 2, 4, 6, 8, 10],
            mixing: None,
            lambda: 0.0,
            validation_fraction: 0.1,
            patience: 10,
            seed: 0,
            mode: IndexingMode::Coordinated,
            cost_mode: CostMode::RowRescaled,
        }
    }
}

impl CoordinatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(Error::param("num_agents", "must be at least 1"));
        }
        if self.minibatch == 0 {
            return Err(Error::param("minibatch", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::param("patience", "must be at least 1"));
        }
        if self.horizon_schedule.is_empty() {
            return Err(Error::EmptySchedule);
        }
        if self.horizon_schedule.contains(&0) {
            return Err(Error::param(
                "horizon_schedule",
                "horizons must be at least 1",
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::param(
                "validation_fraction",
                format!("{} outside [0, 1)", self.validation_fraction),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", "must be finite and non-negative"));
        }
        if !(self.seed_weight > 0.0 && self.seed_weight.is_finite()) {
            return Err(Error::param("seed_weight", "must be positive"));
        }
        if let Some(m) = self.mixing {
            if !(0.0..=1.0).contains(&m.start) || !(m.growth >= 0.0 && m.growth.is_finite()) {
                return Err(Error::param(
                    "mixing",
                    "eta must start in [0, 1] and be non-decreasing",
                ));
            }
        }
        self.svi.validate()
    }

    /// Horizon for `round` (1-based), holding the last entry.
    pub fn horizon(&self, round: usize) -> usize {
        let i = round.saturating_sub(1).min(self.horizon_schedule.len() - 1);
        self.horizon_schedule[i]
    }
}

/// A task domain plugged into the loop. The track owns the policies.
pub trait Track: Sync {
    /// One demonstration: `K` trajectories in stored order.
    type Set: Clone + Send + Sync;

    fn num_agents(&self) -> usize;
    fn hmm_prior(&self) -> HmmPrior;
    /// Emission sequence of every trajectory, in stored order.
    fn emissions(&self, set: &Self::Set) -> Result<Vec<Observations>>;
    /// Output trajectory `k` is input trajectory `order[k]`.
    fn reorder(&self, set: &Self::Set, order: &[usize]) -> Self::Set;
    /// Initial policies from the full (already indexed) demonstration store.
    fn warm_start(&mut self, ordered: &[Self::Set], config: &CoordinatorConfig) -> Result<()>;
    fn learn(
        &mut self,
        round: usize,
        ordered: &[Self::Set],
        config: &CoordinatorConfig,
    ) -> Result<()>;
    /// Emissions of the current policies rolled out on each set, in policy order.
    fn rollout(
        &self,
        round: usize,
        ordered: &[Self::Set],
        config: &CoordinatorConfig,
    ) -> Result<Vec<Vec<Observations>>>;
    fn validation_loss(&self, ordered: &[Self::Set]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub imitation_loss: f64,
    pub entropy: f64,
    pub elbo: f64,
    /// Fraction of minibatch trajectories whose policy index changed since
    /// their previous assignment.
    pub churn: f64,
    /// Fraction of minibatch sets whose assignment is not the identity.
    pub nontrivial_fraction: f64,
    pub objective: f64,
}

impl RoundReport {
    pub fn check_finite(&self) -> Result<()> {
        let metrics = [
            ("imitation_loss", self.imitation_loss),
            ("entropy", self.entropy),
            ("elbo", self.elbo),
            ("churn", self.churn),
        ];
        for (metric, v) in metrics {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    round: self.round,
                    metric,
                });
            }
        }
        Ok(())
    }
}

/// `loss - lambda * entropy`. Reporting only: no update is driven by it.
pub fn objective_report(loss: f64, entropy: f64, lambda: f64) -> f64 {
    loss - lambda * entropy
}

pub fn write_reports(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut text = String::from("round,imitation_loss,entropy,elbo,churn\n");
    for r in reports {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.round, r.imitation_loss, r.entropy, r.elbo, r.churn
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub hmm: Option<VariationalHmm>,
    pub reports: Vec<RoundReport>,
    /// Calls into the structure model (assignments and SVI steps).
    pub hmm_invocations: usize,
    /// Stored-slot order fed to each policy, per training set, after the last
    /// assignment.
    pub assignments: Vec<Vec<usize>>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

struct Indexer<'a> {
    mode: IndexingMode,
    cost_mode: CostMode,
    k: usize,
    hmm: Option<&'a VariationalHmm>,
}

impl<'a> Indexer<'a> {
    fn new(config: &CoordinatorConfig, hmm: Option<&'a VariationalHmm>) -> Self {
        Indexer {
            mode: config.mode,
            cost_mode: config.cost_mode,
            k: config.num_agents,
            hmm,
        }
    }

    /// Orders and entropies for each set.
    fn index<T: Track>(&self, track: &T, sets: &[&T::Set]) -> Result<Vec<(Vec<usize>, f64)>> {
        match (self.mode, self.hmm) {
            (IndexingMode::Unstructured, _) => Ok(vec![((0..self.k).collect(), 0.0); sets.len()]),
            (IndexingMode::Coordinated, Some(hmm)) => sets
                .par_iter()
                .map(|set| {
                    let idx = index_trajectories(hmm, &track.emissions(set)?, self.cost_mode)?;
                    Ok((idx.assignment.perm.clone(), idx.entropy))
                })
                .collect(),
            (IndexingMode::Coordinated, None) => Err(Error::Config(
                "coordinated indexing without a role model".into(),
            )),
        }
    }
}

/// Runs the loop on `data`. `on_round` sees every report together with the
/// track in its post-round state; returning an error aborts the run.
pub fn run<T: Track>(
    track: &mut T,
    data: &[T::Set],
    config: &CoordinatorConfig,
    mut on_round: impl FnMut(&RoundReport, &T) -> Result<()>,
) -> Result<RunOutput> {
    config.validate()?;
    let k = config.num_agents;
    if track.num_agents() != k {
        return Err(Error::DimensionMismatch(format!(
            "track has {} agents, config {k}",
            track.num_agents()
        )));
    }
    if data.len() < 2 {
        return Err(Error::param(
            "data",
            format!("need at least 2 demonstration sets, got {}", data.len()),
        ));
    }

    // Train / validation split.
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::stream(config.seed, streams::VALIDATION));
    let n_val = if config.validation_fraction > 0.0 {
        ((config.validation_fraction * data.len() as f64).round() as usize).clamp(1, data.len() - 1)
    } else {
        0
    };
    let validation_indices: Vec<usize> = order[..n_val].to_vec();
    let train_indices: Vec<usize> = order[n_val..].to_vec();
    let train: Vec<&T::Set> = train_indices.iter().map(|&i| &data[i]).collect();
    // Without a held-out split the training sets double as validation.
    let validation: Vec<&T::Set> = if n_val > 0 {
        validation_indices.iter().map(|&i| &data[i]).collect()
    } else {
        train.clone()
    };

    // Structure model: seeded from the most distinct demonstration set, then
    // warmed up by SVI over all demonstration trajectories.
    let mut invocations = 0usize;
    let mut svi_steps = 0usize;
    let mut hmm = match config.mode {
        IndexingMode::Unstructured => None,
        IndexingMode::Coordinated => {
            let emissions: Vec<Vec<Observations>> = train
                .par_iter()
                .map(|s| track.emissions(s))
                .collect::<Result<_>>()?;
            let prior = track.hmm_prior();
            let probe = VariationalHmm::from_prior(k, &prior)?;
            let candidates = &emissions[..emissions.len().min(256)];
            let pick = choose_seed_set(&probe, candidates).expect("at least one candidate");
            let mut init_rng = rng::stream(config.seed, streams::HMM_INIT);
            let model = VariationalHmm::seeded(
                k,
                &prior,
                &candidates[pick],
                config.seed_weight,
                &mut init_rng,
            )?;
            let flat: Vec<Observations> = emissions.into_iter().flatten().collect();
            invocations += 1;
            Some(fit_svi(
                model,
                &flat,
                config.warm_start_epochs,
                &config.svi,
                &mut svi_steps,
                &mut init_rng,
            )?)
        }
    };

    let initial = Indexer::new(config, hmm.as_ref()).index(track, &train)?;
    if hmm.is_some() {
        invocations += 1;
    }
    let mut assignments: Vec<Vec<usize>> = initial.into_iter().map(|(p, _)| p).collect();
    let ordered_all: Vec<T::Set> = train
        .iter()
        .zip(&assignments)
        .map(|(s, p)| track.reorder(s, p))
        .collect();
    track
        .warm_start(&ordered_all, config)
        .map_err(|e| e.in_round(0))?;
    drop(ordered_all);

    let mut reports = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut batch_rng = rng::stream(config.seed, streams::MINIBATCH);
    let mut mix_rng = rng::stream(config.seed, streams::MIXING);
    for round in 1..=config.rounds {
        let mut step = || -> Result<RoundReport> {
            let size = config.minibatch.min(train.len());
            let mut batch = sample(&mut batch_rng, train.len(), size).into_vec();
            batch.sort_unstable();
            let sets: Vec<&T::Set> = batch.iter().map(|&i| train[i]).collect();

            // 1. assign
            let indexed = Indexer::new(config, hmm.as_ref()).index(track, &sets)?;
            if hmm.is_some() {
                invocations += 1;
            }
            let mut changed = 0usize;
            let mut nontrivial = 0usize;
            for (&i, (perm, _)) in batch.iter().zip(&indexed) {
                changed += perm
                    .iter()
                    .zip(&assignments[i])
                    .filter(|(a, b)| a != b)
                    .count();
                nontrivial += usize::from(perm.iter().enumerate().any(|(a, &b)| a != b));
                assignments[i] = perm.clone();
            }
            let churn = changed as f64 / (k * batch.len()) as f64;
            let entropy = indexed.iter().map(|(_, h)| h).sum::<f64>() / batch.len() as f64;
            let ordered: Vec<T::Set> = sets
                .iter()
                .zip(&indexed)
                .map(|(s, (p, _))| track.reorder(s, p))
                .collect();

            // 2. learn, 3. roll out
            track.learn(round, &ordered, config)?;
            let rolled = track.rollout(round, &ordered, config)?;

            // 4. replace, 5. learn structure
            let mut elbo = 0.0;
            if let Some(model) = hmm.as_mut() {
                let eta = config.mixing.map(|m| m.eta(round));
                let mut structure_batch: Vec<Observations> = Vec::with_capacity(k * ordered.len());
                for (set, rolled_set) in ordered.iter().zip(&rolled) {
                    let replace = match eta {
                        None => true,
                        Some(eta) => mix_rng.gen_bool(eta),
                    };
                    if replace {
                        structure_batch.extend(rolled_set.iter().cloned());
                    } else {
                        structure_batch.extend(track.emissions(set)?);
                    }
                }
                svi_steps += 1;
                let dataset_size = k * train.len();
                *model = svi_step(
                    model,
                    &structure_batch,
                    dataset_size,
                    svi_steps,
                    &config.svi,
                )?
                .0;
                elbo = elbo_proxy(model, &structure_batch)?;
                invocations += 1;
            }

            // validation
            let val_indexed = Indexer::new(config, hmm.as_ref()).index(track, &validation)?;
            let val_ordered: Vec<T::Set> = validation
                .iter()
                .zip(&val_indexed)
                .map(|(s, (p, _))| track.reorder(s, p))
                .collect();
            let imitation_loss = track.validation_loss(&val_ordered)?;
            Ok(RoundReport {
                round,
                imitation_loss,
                entropy,
                elbo,
                churn,
                nontrivial_fraction: nontrivial as f64 / batch.len() as f64,
                objective: objective_report(imitation_loss, entropy, config.lambda),
            })
        };
        let report = step().map_err(|e| e.in_round(round))?;
        report.check_finite()?;
        log::info!(
            "round {round}: loss {:.4} entropy {:.4} elbo {:.2} churn {:.3}",
            report.imitation_loss,
            report.entropy,
            report.elbo,
            report.churn
        );
        on_round(&report, track).map_err(|e| e.in_round(round))?;
        let loss = report.imitation_loss;
        reports.push(report);
        if loss < best {
            best = loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::info!(
                    "stopping after round {round}: no validation improvement in {} rounds",
                    config.patience
                );
                break;
            }
        }
    }

    Ok(RunOutput {
        hmm,
        reports,
        hmm_invocations: invocations,
        assignments,
        train_indices,
        validation_indices,
    })
}

/// Convenience: re-index sets with a fitted model (or the identity).
pub fn index_sets<T: Track>(
    track: &T,
    sets: &[T::Set],
    hmm: Option<&VariationalHmm>,
    cost_mode: CostMode,
) -> Result<Vec<T::Set>> {
    let mode = if hmm.is_some() {
        IndexingMode::Coordinated
    } else {
        IndexingMode::Unstructured
    };
    let refs: Vec<&T::Set> = sets.iter().collect();
    let indexer = Indexer {
        mode,
        cost_mode,
        k: track.num_agents(),
        hmm,
    };
    let orders = indexer.index(track, &refs)?;
    Ok(sets
        .iter()
        .zip(&orders)
        .map(|(s, (p, _))| track.reorder(s, p))
        .collect())
}

/// Reorders any per-agent collection by an assignment order.
pub fn reorder_items<T: Clone>(items: &[T], order: &[usize]) -> Vec<T> {
    apply_order(items, order)
}
