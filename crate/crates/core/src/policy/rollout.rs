//! Joint multi-agent rollout training over a growing horizon.

use rayon::prelude::*;

use super::{train_all, Dataset, Policy, Sample, Trainer};
use crate::rng;
use crate::{Error, Result};

/// A demonstration whose agents are already aligned to policy indices.
///
/// `advance` moves a (possibly rolled-out) state one step forward given every
/// agent's action; whatever is not controlled by the agents (context such as
/// the prey or a team centroid) is replayed from the demonstration at `t`.
pub trait Demonstration: Sync {
    type State: Clone + Send + Sync;
    type Action: Clone + Send + Sync;

    fn num_agents(&self) -> usize;
    /// Number of transitions `T`.
    fn horizon(&self) -> usize;
    /// Ground-truth state at `0 <= t <= T`.
    fn state(&self, t: usize) -> Self::State;
    /// Expert action of `agent` taken from the state at `t < T`.
    fn expert_action(&self, t: usize, agent: usize) -> Self::Action;
    fn features(&self, state: &Self::State, agent: usize) -> Vec<f64>;
    fn advance(
        &self,
        state: &Self::State,
        t: usize,
        actions: &[Self::Action],
    ) -> Result<Self::State>;
}

/// Trace of one rolled-out segment: `states[i]` is the state at `start + i`,
/// `features[i][k]` and `actions[i][k]` are agent `k`'s input and chosen
/// action there.
#[derive(Debug, Clone)]
pub struct SegmentTrace<S, A> {
    pub start: usize,
    pub states: Vec<S>,
    pub features: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<A>>,
}

/// Rolls all agents forward `len` steps from the ground-truth state at
/// `start`. With `policies == None` the expert actions drive the rollout.
///
/// Each step's inputs are computed from the current state before any agent
/// acts, and the next state is built from all agents' simultaneous actions,
/// so an agent's input at `t + 1` depends on the others' actions up to `t`
/// and nothing later.
pub fn rollout_segment<D, P>(
    demo: &D,
    policies: Option<&[P]>,
    start: usize,
    len: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<SegmentTrace<D::State, D::Action>>
where
    D: Demonstration,
    P: Policy<D::Action>,
{
    let k = demo.num_agents();
    if let Some(p) = policies {
        if p.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} policies for {k} agents",
                p.len()
            )));
        }
    }
    let mut state = demo.state(start);
    let mut trace = SegmentTrace {
        start,
        states: Vec::new(),
        features: Vec::new(),
        actions: Vec::new(),
    };
    for i in 0..len {
        let t = start + i;
        let feats: Vec<Vec<f64>> = (0..k).map(|a| demo.features(&state, a)).collect();
        let acts: Vec<D::Action> = match policies {
            Some(p) => feats.iter().zip(p).map(|(x, pi)| pi.act(x, rng)).collect(),
            None => (0..k).map(|a| demo.expert_action(t, a)).collect(),
        };
        let next = demo.advance(&state, t, &acts)?;
        trace.states.push(std::mem::replace(&mut state, next));
        trace.features.push(feats);
        trace.actions.push(acts);
    }
    trace.states.push(state);
    Ok(trace)
}

/// Joint rollout training.
///
/// For each horizon `j` of `schedule` (one outer pass per entry), every
/// demonstration is cut into segments of length `j`. Each segment starts from
/// the ground-truth state and rolls all current policies forward jointly; the
/// visited inputs of agent `k` are labeled with the expert's action from the
/// same time step and appended to `D_k`. After the pass each policy is
/// retrained on its aggregate. Without initial policies, the first pass is
/// driven by the expert actions (plain behavior cloning).
#[allow(clippy::too_many_arguments)]
pub fn joint_rollout_learn<D, T>(
    demos: &[D],
    trainer: &T,
    initial: Option<Vec<T::Model>>,
    schedule: &[usize],
    dataset: &mut Dataset<D::Action>,
    round: usize,
    seed: u64,
) -> Result<Vec<T::Model>>
where
    D: Demonstration,
    T: Trainer<D::Action>,
{
    if schedule.is_empty() {
        return Err(Error::EmptySchedule);
    }
    if let Some(&bad) = schedule.iter().find(|&&j| j == 0) {
        return Err(Error::param(
            "schedule",
            format!("horizon {bad} must be at least 1"),
        ));
    }
    let Some(first) = demos.first() else {
        return Err(Error::ShortDemonstration("no demonstrations".into()));
    };
    let k = first.num_agents();
    if dataset.num_roles() != k {
        return Err(Error::DimensionMismatch(format!(
            "data set has {} roles, demos {k}",
            dataset.num_roles()
        )));
    }
    if let Some(i) = demos.iter().position(|d| d.horizon() == 0) {
        return Err(Error::ShortDemonstration(format!(
            "demonstration {i} has no transitions"
        )));
    }

    let mut policies = initial;
    for (pass, &j) in schedule.iter().enumerate() {
        let current = policies.as_deref();
        let per_demo = demos
            .par_iter()
            .enumerate()
            .map(|(d, demo)| {
                let mut r = rng::stream(seed, ((pass as u64) << 32) | d as u64);
                let mut out: Vec<Vec<Sample<D::Action>>> = vec![Vec::new(); k];
                let horizon = demo.horizon();
                for start in (0..horizon).step_by(j) {
                    let len = j.min(horizon - start);
                    let trace = rollout_segment(demo, current, start, len, &mut r)?;
                    for (i, feats) in trace.features.into_iter().enumerate() {
                        for (a, x) in feats.into_iter().enumerate() {
                            out[a].push(Sample {
                                features: x,
                                action: demo.expert_action(start + i, a),
                                round,
                            });
                        }
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        for out in per_demo {
            for (a, samples) in out.into_iter().enumerate() {
                dataset.extend(a, samples)?;
            }
        }
        policies = Some(train_all(trainer, dataset)?);
    }
    Ok(policies.expect("schedule is non-empty"))
}
