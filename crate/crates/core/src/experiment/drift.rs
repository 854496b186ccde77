//! Continuous track: synthetic 2-D drifting agents.
//!
//! Each role has an anchor at a quadrant corner `(±a, ±a)`. An agent starts
//! uniformly in `[-spread, spread]^2` and is pulled toward its anchor,
//! `x' = x + beta (anchor - x) + noise`. Sets are stored in a random agent
//! order. The policies regress the next displacement on the agent's own
//! position, so a policy only imitates well if it consistently sees one role.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::{self, CoordinatorConfig, IndexingMode, RunOutput, Track};
use crate::hmm::{HmmPrior, Observations};
use crate::policy::{
    joint_rollout_learn, rollout_segment, Dataset, Demonstration, RidgeConfig, RidgeModel,
};
use crate::pursuit::random_permutation;
use crate::rng::{self, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub num_sets: usize,
    /// Transitions per trajectory.
    pub horizon: usize,
    pub anchor: f64,
    pub spread: f64,
    pub pull: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec {
            num_sets: 200,
            horizon: 30,
            anchor: 10.0,
            spread: 3.0,
            pull: 0.05,
            noise: 0.1,
            seed: 0,
        }
    }
}

pub const DRIFT_AGENTS: usize = 4;

impl DriftSpec {
    pub fn anchors(&self) -> [[f64; 2]; DRIFT_AGENTS] {
        let a = self.anchor;
        [[a, a], [-a, a], [-a, -a], [a, -a]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sets < 2 {
            return Err(Error::param("num_sets", "need at least 2 sets"));
        }
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if !(self.pull > 0.0 && self.pull <= 1.0) {
            return Err(Error::param("pull", "must lie in (0, 1]"));
        }
        if !(self.noise >= 0.0 && self.spread > 0.0) {
            return Err(Error::param(
                "noise",
                "noise must be non-negative and spread positive",
            ));
        }
        Ok(())
    }
}

/// One stored set: `paths[slot][t]`, and the generating role of each slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSet {
    pub paths: Vec<Vec<[f64; 2]>>,
    pub roles: Vec<usize>,
}

impl DriftSet {
    pub fn horizon(&self) -> usize {
        self.paths[0].len() - 1
    }

    pub fn reordered(&self, order: &[usize]) -> DriftSet {
        DriftSet {
            paths: order.iter().map(|&o| self.paths[o].clone()).collect(),
            roles: order.iter().map(|&o| self.roles[o]).collect(),
        }
    }
}

pub fn generate(spec: &DriftSpec) -> Result<Vec<DriftSet>> {
    spec.validate()?;
    let anchors = spec.anchors();
    let root = rng::derive_seed(spec.seed, streams::DEMOS);
    Ok((0..spec.num_sets)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(root, i as u64);
            let paths_by_role: Vec<Vec<[f64; 2]>> = anchors
                .iter()
                .map(|a| {
                    let mut x = [
                        r.gen_range(-spec.spread..spec.spread),
                        r.gen_range(-spec.spread..spec.spread),
                    ];
                    let mut path = vec![x];
                    for _ in 0..spec.horizon {
                        for d in 0..2 {
                            x[d] += spec.pull * (a[d] - x[d])
                                + spec.noise * Distribution::<f64>::sample(&StandardNormal, &mut r);
                        }
                        path.push(x);
                    }
                    path
                })
                .collect();
            let order = random_permutation(DRIFT_AGENTS, &mut r);
            DriftSet {
                paths: order.iter().map(|&o| paths_by_role[o].clone()).collect(),
                roles: order,
            }
        })
        .collect())
}

/// Emission of every step: position and displacement to the next position.
fn path_emissions(path: &[[f64; 2]]) -> Observations {
    Observations::Vectors(
        path.windows(2)
            .map(|w| vec![w[0][0], w[0][1], w[1][0] - w[0][0], w[1][1] - w[0][1]])
            .collect(),
    )
}

/// An ordered set viewed as a demonstration for joint rollout training.
pub struct DriftDemo<'a>(pub &'a DriftSet);

impl Demonstration for DriftDemo<'_> {
    type State = Vec<[f64; 2]>;
    type Action = Vec<f64>;

    fn num_agents(&self) -> usize {
        self.0.paths.len()
    }

    fn horizon(&self) -> usize {
        self.0.horizon()
    }

    fn state(&self, t: usize) -> Vec<[f64; 2]> {
        self.0.paths.iter().map(|p| p[t]).collect()
    }

    fn expert_action(&self, t: usize, agent: usize) -> Vec<f64> {
        let p = &self.0.paths[agent];
        vec![p[t + 1][0] - p[t][0], p[t + 1][1] - p[t][1]]
    }

    fn features(&self, state: &Vec<[f64; 2]>, agent: usize) -> Vec<f64> {
        state[agent].to_vec()
    }

    fn advance(
        &self,
        state: &Vec<[f64; 2]>,
        _t: usize,
        actions: &[Vec<f64>],
    ) -> Result<Vec<[f64; 2]>> {
        Ok(state
            .iter()
            .zip(actions)
            .map(|(x, a)| [x[0] + a[0], x[1] + a[1]])
            .collect())
    }
}

pub struct DriftTrack {
    pub ridge: RidgeConfig,
    pub policies: Option<Vec<RidgeModel>>,
    pub dataset: Dataset<Vec<f64>>,
    pub seed: u64,
}

impl DriftTrack {
    pub fn new(seed: u64) -> Self {
        DriftTrack {
            ridge: RidgeConfig::default(),
            policies: None,
            dataset: Dataset::new(DRIFT_AGENTS),
            seed,
        }
    }

    fn full_rollout(&self, set: &DriftSet) -> Result<Vec<Vec<[f64; 2]>>> {
        let policies = self
            .policies
            .as_deref()
            .ok_or_else(|| Error::Config("policies are not trained".into()))?;
        let demo = DriftDemo(set);
        // Ridge policies are deterministic; the generator is never drawn from.
        let mut r = rng::stream(self.seed, streams::ROLLOUT);
        let trace = rollout_segment(&demo, Some(policies), 0, demo.horizon(), &mut r)?;
        Ok((0..DRIFT_AGENTS)
            .map(|a| trace.states.iter().map(|s| s[a]).collect())
            .collect())
    }
}

impl Track for DriftTrack {
    type Set = DriftSet;

    fn num_agents(&self) -> usize {
        DRIFT_AGENTS
    }

    fn hmm_prior(&self) -> HmmPrior {
        HmmPrior::diag_gaussian(4)
    }

    fn emissions(&self, set: &DriftSet) -> Result<Vec<Observations>> {
        Ok(set.paths.iter().map(|p| path_emissions(p)).collect())
    }

    fn reorder(&self, set: &DriftSet, order: &[usize]) -> DriftSet {
        set.reordered(order)
    }

    fn warm_start(&mut self, ordered: &[DriftSet], _config: &CoordinatorConfig) -> Result<()> {
        let demos: Vec<DriftDemo> = ordered.iter().map(DriftDemo).collect();
        self.policies = Some(joint_rollout_learn(
            &demos,
            &self.ridge,
            None,
            &[1],
            &mut self.dataset,
            0,
            self.seed,
        )?);
        Ok(())
    }

    fn learn(
        &mut self,
        round: usize,
        ordered: &[DriftSet],
        config: &CoordinatorConfig,
    ) -> Result<()> {
        let demos: Vec<DriftDemo> = ordered.iter().map(DriftDemo).collect();
        let seed = rng::derive_seed(self.seed, round as u64);
        let schedule = [config.horizon(round)];
        self.policies = Some(joint_rollout_learn(
            &demos,
            &self.ridge,
            self.policies.take(),
            &schedule,
            &mut self.dataset,
            round,
            seed,
        )?);
        Ok(())
    }

    fn rollout(
        &self,
        _round: usize,
        ordered: &[DriftSet],
        _config: &CoordinatorConfig,
    ) -> Result<Vec<Vec<Observations>>> {
        ordered
            .par_iter()
            .map(|set| {
                Ok(self
                    .full_rollout(set)?
                    .iter()
                    .map(|p| path_emissions(p))
                    .collect())
            })
            .collect()
    }

    /// Mean Euclidean distance per agent and step between full rollouts and
    /// the ground truth.
    fn validation_loss(&self, ordered: &[DriftSet]) -> Result<f64> {
        let sums = ordered
            .par_iter()
            .map(|set| {
                let rolled = self.full_rollout(set)?;
                let mut total = 0.0;
                let mut n = 0usize;
                for (truth, sim) in set.paths.iter().zip(&rolled) {
                    for (a, b) in truth.iter().zip(sim).skip(1) {
                        total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                        n += 1;
                    }
                }
                Ok((total, n))
            })
            .collect::<Result<Vec<_>>>()?;
        let (total, n) = sums.iter().fold((0.0, 0), |(s, c), &(a, b)| (s + a, c + b));
        Ok(total / n.max(1) as f64)
    }
}

/// Loop settings for the drifting-agents track.
pub fn drift_coordinator_config(mode: IndexingMode, seed: u64) -> CoordinatorConfig {
    CoordinatorConfig {
        num_agents: DRIFT_AGENTS,
        rounds: 10,
        minibatch: 20,
        horizon_schedule: vec![1, 2, 4, 6, 8, 10],
        validation_fraction: 0.2,
        seed,
        mode,
        ..CoordinatorConfig::default()
    }
}

/// Trains on `sets` and returns the run together with the final validation
/// distance.
pub fn run_drift(sets: &[DriftSet], config: &CoordinatorConfig) -> Result<(RunOutput, DriftTrack)> {
    let mut track = DriftTrack::new(config.seed);
    let run = coordinator::run(&mut track, sets, config, |_, _| Ok(()))?;
    Ok((run, track))
}
