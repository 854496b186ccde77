//! Data aggregation with dynamic oracles (pursuit domain).

use rayon::prelude::*;

use super::{
    featurize, offset_symbol, train_all, Dataset, FeatureFlags, LearnerConfig, Policy, PolicyModel,
    Sample,
};
use crate::assign::role_features;
use crate::hmm::{Observations, VariationalHmm};
use crate::mdp::ExpertTeam;
use crate::pursuit::{play, Episode, GameConfig, Move, WorldState};
use crate::rng;
use crate::{Error, Result};

/// Supplies the expert move for the agent at policy index `agent`.
pub trait ExpertLabeler: Sync {
    fn label(&self, agent: usize, world: &WorldState) -> Move;
}

/// Experts with an explicit role per policy index.
#[derive(Debug, Clone)]
pub struct TeamLabeler<'a> {
    pub team: &'a ExpertTeam,
    pub roles: Vec<usize>,
}

impl ExpertLabeler for TeamLabeler<'_> {
    fn label(&self, agent: usize, world: &WorldState) -> Move {
        self.team.action(self.roles[agent], world, agent)
    }
}

/// Dynamic oracle for one recorded demonstration game.
///
/// The demonstration's hidden slot-to-role permutation stays private: given
/// which stored slot each policy index was matched to, the oracle answers
/// with the move of the expert that produced that slot, and nothing else
/// about the permutation is observable.
#[derive(Debug, Clone)]
pub struct DemoOracle<'a> {
    team: &'a ExpertTeam,
    roles: Vec<usize>,
    start: WorldState,
}

impl<'a> DemoOracle<'a> {
    /// `slot_of_policy[k]` is the stored slot whose trajectory feeds policy `k`.
    pub fn new(team: &'a ExpertTeam, episode: &Episode, slot_of_policy: &[usize]) -> Result<Self> {
        let k = episode.num_predators();
        if slot_of_policy.len() != k || team.num_roles() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} slots, {} experts, {k} predators",
                slot_of_policy.len(),
                team.num_roles()
            )));
        }
        let roles = slot_of_policy
            .iter()
            .map(|&s| episode.permutation[s])
            .collect();
        let first = &episode.states[0];
        let start = WorldState {
            predators: slot_of_policy.iter().map(|&s| first.predators[s]).collect(),
            prey: first.prey,
            grid_side: first.grid_side,
        };
        Ok(DemoOracle { team, roles, start })
    }

    /// The demonstration's initial world with predators in policy order.
    pub fn start(&self) -> &WorldState {
        &self.start
    }
}

impl ExpertLabeler for DemoOracle<'_> {
    fn label(&self, agent: usize, world: &WorldState) -> Move {
        self.team.action(self.roles[agent], world, agent)
    }
}

/// Online role decoding for the optional role feature: each predator's
/// emission history so far is Viterbi-decoded and the last role is used.
#[derive(Debug, Clone, Copy)]
pub struct RoleTracker<'a> {
    pub hmm: &'a VariationalHmm,
}

impl RoleTracker<'_> {
    pub fn current_roles(&self, history: &[Vec<usize>]) -> Result<Vec<usize>> {
        history
            .iter()
            .map(|h| {
                let path = role_features(self.hmm, &Observations::Symbols(h.clone()))?;
                Ok(*path.last().expect("non-empty history"))
            })
            .collect()
    }
}

/// One game to roll out: start world in policy order, its labeler, and the
/// seed of its private generator.
#[derive(Debug, Clone)]
pub struct GameTask<L> {
    pub start: WorldState,
    pub labeler: L,
    pub seed: u64,
}

/// Plays one game with `policies[k]` driving predator `k`. Returns the episode
/// and the feature vectors each policy saw at every step.
pub fn play_policies(
    policies: &[PolicyModel],
    start: &WorldState,
    game: GameConfig,
    flags: FeatureFlags,
    tracker: Option<RoleTracker<'_>>,
    seed: u64,
) -> Result<(Episode, Vec<Vec<Vec<f64>>>)> {
    let k = start.num_predators();
    if policies.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} policies for {k} predators",
            policies.len()
        )));
    }
    if flags.role_feature && tracker.is_none() {
        return Err(Error::Config(
            "role features need a fitted role model".into(),
        ));
    }
    let mut r = rng::stream(seed, 0);
    let mut seen: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut history: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut failure: Option<Error> = None;
    let episode = play(start.clone(), game, &mut r, |world, rng| {
        let roles = match tracker {
            Some(t) if flags.role_feature => {
                for (a, h) in history.iter_mut().enumerate() {
                    h.push(offset_symbol(world, a));
                }
                match t.current_roles(&history) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        failure.get_or_insert(e);
                        Some(vec![0; k])
                    }
                }
            }
            _ => None,
        };
        let feats: Vec<Vec<f64>> = (0..k)
            .map(|a| featurize(world, a, flags, roles.as_deref()))
            .collect();
        let moves = feats
            .iter()
            .zip(policies)
            .map(|(x, p)| p.act(x, rng))
            .collect();
        seen.push(feats);
        moves
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((episode, seen))
}

#[derive(Debug, Clone)]
pub struct DaggerOutcome {
    pub policies: Vec<PolicyModel>,
    /// The rolled-out games, predators in policy order.
    pub episodes: Vec<Episode>,
    /// Pairs appended per role.
    pub added: Vec<usize>,
}

/// One round of data aggregation: roll out the current policies on every
/// task, label each visited non-terminal state with the expert moves, append
/// to `D_k`, and retrain every policy on its full aggregate.
#[allow(clippy::too_many_arguments)]
pub fn dagger_round<L: ExpertLabeler>(
    policies: &[PolicyModel],
    tasks: &[GameTask<L>],
    game: GameConfig,
    flags: FeatureFlags,
    tracker: Option<RoleTracker<'_>>,
    trainer: &LearnerConfig,
    dataset: &mut Dataset<Move>,
    round: usize,
) -> Result<DaggerOutcome> {
    let k = policies.len();
    if dataset.num_roles() != k {
        return Err(Error::DimensionMismatch(format!(
            "data set has {} roles, {k} policies",
            dataset.num_roles()
        )));
    }
    let rolled = tasks
        .par_iter()
        .map(|task| {
            let (episode, seen) =
                play_policies(policies, &task.start, game, flags, tracker, task.seed)?;
            let labeled: Vec<Vec<Sample<Move>>> = (0..k)
                .map(|a| {
                    seen.iter()
                        .zip(&episode.states)
                        .map(|(feats, world)| Sample {
                            features: feats[a].clone(),
                            action: task.labeler.label(a, world),
                            round,
                        })
                        .collect()
                })
                .collect();
            Ok((episode, labeled))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut added = vec![0; k];
    let mut episodes = Vec::with_capacity(rolled.len());
    for (episode, labeled) in rolled {
        for (a, samples) in labeled.into_iter().enumerate() {
            added[a] += samples.len();
            dataset.extend(a, samples)?;
        }
        episodes.push(episode);
    }
    let policies = train_all(trainer, dataset)?;
    Ok(DaggerOutcome {
        policies,
        episodes,
        added,
    })
}
