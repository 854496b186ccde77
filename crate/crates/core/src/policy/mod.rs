//! Per-role policies and the two imitation trainers.
//!
//! * [`joint_rollout_learn`]: joint multi-agent rollout training over a
//!   growing horizon, where each agent's next input is built from every
//!   agent's predicted action (cross-update).
//! * [`dagger_round`]: data aggregation with dynamic oracles; the learners'
//!   own rollouts are labeled by the experts and appended to the training set.
//!
//! Learners are black boxes behind [`Trainer`] / [`Policy`]: a discrete
//! classifier ([`PolicyModel`]) for grid moves and ridge regression
//! ([`RidgeModel`]) for continuous displacements.

mod dagger;
mod features;
mod forest;
mod logistic;
mod ridge;
mod rollout;

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dagger::{
    dagger_round, play_policies, DaggerOutcome, DemoOracle, ExpertLabeler, GameTask, RoleTracker,
    TeamLabeler,
};
pub use features::{
    featurize, offset_symbol, symbol_offset, FeatureFlags, NUM_SYMBOLS, SYMBOL_RADIUS,
};
pub use forest::{DecisionForest, ForestConfig, Node, Tree};
pub use logistic::{LogisticConfig, LogisticModel};
pub use ridge::{RidgeConfig, RidgeModel};
pub use rollout::{joint_rollout_learn, rollout_segment, Demonstration, SegmentTrace};

use crate::pursuit::Move;
use crate::rng;
use crate::{Error, Result};

/// One labeled training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<A> {
    pub features: Vec<f64>,
    pub action: A,
    /// Training round the pair was collected in.
    pub round: usize,
}

/// Per-role training sets `D_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<A> {
    pub per_role: Vec<Vec<Sample<A>>>,
}

impl<A> Dataset<A> {
    pub fn new(num_roles: usize) -> Self {
        Dataset {
            per_role: (0..num_roles).map(|_| Vec::new()).collect(),
        }
    }

    pub fn num_roles(&self) -> usize {
        self.per_role.len()
    }

    pub fn len(&self) -> usize {
        self.per_role.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends a pair for `role`, enforcing one feature width per role.
    pub fn push(&mut self, role: usize, sample: Sample<A>) -> Result<()> {
        let set = &mut self.per_role[role];
        if let Some(first) = set.first() {
            if first.features.len() != sample.features.len() {
                return Err(Error::DimensionMismatch(format!(
                    "role {role}: feature width {} vs {}",
                    sample.features.len(),
                    first.features.len()
                )));
            }
        }
        set.push(sample);
        Ok(())
    }

    pub fn extend(
        &mut self,
        role: usize,
        samples: impl IntoIterator<Item = Sample<A>>,
    ) -> Result<()> {
        for s in samples {
            self.push(role, s)?;
        }
        Ok(())
    }
}

impl Dataset<Move> {
    /// Writes `role_<k>.csv` per role: feature columns, label, round.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, set) in self.per_role.iter().enumerate() {
            let path = dir.join(format!("role_{k}.csv"));
            let mut out = std::io::BufWriter::new(
                std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
            );
            let width = set.first().map_or(0, |s| s.features.len());
            let mut header: Vec<String> = (0..width).map(|i| format!("f{i}")).collect();
            header.extend(["label".to_string(), "round".to_string()]);
            let mut text = header.join(",");
            text.push('\n');
            for s in set {
                for v in &s.features {
                    text.push_str(&format!("{v},"));
                }
                text.push_str(&format!("{},{}\n", s.action.code(), s.round));
            }
            out.write_all(text.as_bytes())
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// A policy mapping a feature vector to an action. Deterministic models
/// ignore `rng`; stochastic ones draw from it, so sampling stays caller-seeded.
pub trait Policy<A>: Send + Sync {
    fn act(&self, features: &[f64], rng: &mut dyn rand::RngCore) -> A;
}

/// Black-box supervised training routine.
pub trait Trainer<A>: Sync {
    type Model: Policy<A> + Clone + Send;

    fn train(&self, samples: &[Sample<A>], role: usize) -> Result<Self::Model>;
}

/// Trains every role on its own data set, in parallel.
pub fn train_all<A: Sync, T: Trainer<A>>(trainer: &T, data: &Dataset<A>) -> Result<Vec<T::Model>> {
    data.per_role
        .par_iter()
        .enumerate()
        .map(|(k, set)| trainer.train(set, k))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerKind {
    #[default]
    Logistic,
    Forest,
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(LearnerKind::Logistic),
            "forest" => Ok(LearnerKind::Forest),
            other => Err(Error::Config(format!(
                "unknown learner `{other}` (expected logistic or forest)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub seed: u64,
    pub logistic: LogisticConfig,
    pub forest: ForestConfig,
}

/// Discrete move policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PolicyModel {
    /// Uniformly random moves (an untrained policy).
    Uniform,
    /// Single-class training data.
    Constant {
        action: Move,
    },
    Logistic(LogisticModel),
    Forest(DecisionForest),
}

impl PolicyModel {
    /// Greedy move, or `None` for the uniform policy.
    pub fn predict(&self, x: &[f64]) -> Option<Move> {
        match self {
            PolicyModel::Uniform => None,
            PolicyModel::Constant { action } => Some(*action),
            PolicyModel::Logistic(m) => Move::from_index(m.predict(x)),
            PolicyModel::Forest(m) => Move::from_index(m.predict(x)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json("policy checkpoint", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

impl Policy<Move> for PolicyModel {
    fn act(&self, features: &[f64], rng: &mut dyn rand::RngCore) -> Move {
        match self.predict(features) {
            Some(m) => m,
            None => crate::pursuit::random_move(rng),
        }
    }
}

impl Trainer<Move> for LearnerConfig {
    type Model = PolicyModel;

    fn train(&self, samples: &[Sample<Move>], role: usize) -> Result<PolicyModel> {
        let first = samples.first().ok_or(Error::EmptyDataset(role))?;
        if samples.iter().all(|s| s.action == first.action) {
            return Ok(PolicyModel::Constant {
                action: first.action,
            });
        }
        let xs: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
        let ys: Vec<usize> = samples.iter().map(|s| s.action.index()).collect();
        let seed = rng::derive_seed(self.seed, role as u64);
        Ok(match self.kind {
            LearnerKind::Logistic => {
                PolicyModel::Logistic(LogisticModel::fit(&xs, &ys, 5, &self.logistic, seed))
            }
            LearnerKind::Forest => {
                PolicyModel::Forest(DecisionForest::fit(&xs, &ys, 5, &self.forest, seed))
            }
        })
    }
}

impl Policy<Vec<f64>> for RidgeModel {
    fn act(&self, features: &[f64], _rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.predict(features)
    }
}

impl Trainer<Vec<f64>> for RidgeConfig {
    type Model = RidgeModel;

    fn train(&self, samples: &[Sample<Vec<f64>>], role: usize) -> Result<RidgeModel> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset(role));
        }
        let xs: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
        let ys: Vec<&[f64]> = samples.iter().map(|s| s.action.as_slice()).collect();
        RidgeModel::fit(&xs, &ys, self)
    }
}

/// Writes one JSON checkpoint per role, `policy_<k>.json`.
pub fn save_policies(dir: &Path, policies: &[PolicyModel]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, p) in policies.iter().enumerate() {
        p.save(&dir.join(format!("policy_{k}.json")))?;
    }
    Ok(())
}

pub fn load_policies(dir: &Path, k: usize) -> Result<Vec<PolicyModel>> {
    (0..k)
        .map(|i| PolicyModel::load(&dir.join(format!("policy_{i}.json"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(pairs: &[(Vec<f64>, Move)]) -> Vec<Sample<Move>> {
        pairs
            .iter()
            .map(|(x, a)| Sample {
                features: x.clone(),
                action: *a,
                round: 0,
            })
            .collect()
    }

    #[test]
    fn repeated_pair_is_memorized() {
        let data = samples(&vec![(vec![1.0, -2.0, 0.0], Move::West); 7]);
        for kind in [LearnerKind::Logistic, LearnerKind::Forest] {
            let cfg = LearnerConfig {
                kind,
                ..LearnerConfig::default()
            };
            let m = cfg.train(&data, 0).unwrap();
            assert_eq!(m.predict(&[1.0, -2.0, 0.0]), Some(Move::West));
        }
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let pairs: Vec<(Vec<f64>, Move)> = (-6..=6)
            .filter(|&v| v != 0)
            .flat_map(|v| {
                (0..3).map(move |j| {
                    (
                        vec![v as f64, j as f64],
                        if v > 0 { Move::East } else { Move::West },
                    )
                })
            })
            .collect();
        let data = samples(&pairs);
        for kind in [LearnerKind::Logistic, LearnerKind::Forest] {
            let cfg = LearnerConfig {
                kind,
                seed: 5,
                ..LearnerConfig::default()
            };
            let m = cfg.train(&data, 1).unwrap();
            assert!(
                pairs.iter().all(|(x, a)| m.predict(x) == Some(*a)),
                "{kind:?}"
            );
        }
    }

    #[test]
    fn same_seed_same_model() {
        let pairs: Vec<(Vec<f64>, Move)> = (0..60)
            .map(|i| {
                (
                    vec![(i % 5) as f64, (i % 7) as f64],
                    Move::ALL[(i * 7 + i / 3) % 5],
                )
            })
            .collect();
        let data = samples(&pairs);
        for kind in [LearnerKind::Logistic, LearnerKind::Forest] {
            let cfg = LearnerConfig {
                kind,
                seed: 11,
                ..LearnerConfig::default()
            };
            assert_eq!(cfg.train(&data, 2).unwrap(), cfg.train(&data, 2).unwrap());
        }
    }

    #[test]
    fn empty_and_ragged_data_are_rejected() {
        let cfg = LearnerConfig::default();
        assert!(matches!(cfg.train(&[], 3), Err(Error::EmptyDataset(3))));
        let mut d: Dataset<Move> = Dataset::new(2);
        d.push(
            0,
            Sample {
                features: vec![0.0; 3],
                action: Move::Stay,
                round: 0,
            },
        )
        .unwrap();
        assert!(d
            .push(
                0,
                Sample {
                    features: vec![0.0; 4],
                    action: Move::Stay,
                    round: 0
                }
            )
            .is_err());
    }

    #[test]
    fn checkpoint_round_trips() {
        let pairs: Vec<(Vec<f64>, Move)> = (0..40)
            .map(|i| {
                (
                    vec![(i % 5) as f64 * 0.3, (i % 7) as f64],
                    Move::ALL[(i * 3) % 5],
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        for kind in [LearnerKind::Logistic, LearnerKind::Forest] {
            let cfg = LearnerConfig {
                kind,
                ..LearnerConfig::default()
            };
            let m = cfg.train(&samples(&pairs), 0).unwrap();
            let path = dir.path().join("p.json");
            m.save(&path).unwrap();
            assert_eq!(PolicyModel::load(&path).unwrap(), m);
        }
    }
}
