//! End-to-end drivers: experiment configuration, the predator-prey pipeline
//! (demonstrations, coordinated / unstructured training, evaluation, role
//! tables) and the continuous drifting-agents track.

pub mod drift;
pub mod pursuit;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assign::CostMode;
use crate::coordinator::{CoordinatorConfig, IndexingMode, MixingSchedule};
use crate::hmm::SviConfig;
use crate::policy::{ForestConfig, LearnerConfig, LearnerKind};
use crate::pursuit::{GameConfig, DEFAULT_EPISODE_CAP, DEFAULT_GRID_SIDE, DEFAULT_PREDATORS};
use crate::rng;
use crate::{Error, Result};

/// All knobs of one predator-prey experiment. Every field has a key in the
/// flat `key = value` config format (see [`ExperimentSpec::set`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub grid_side: i32,
    pub num_predators: usize,
    pub n_train_games: usize,
    pub n_test_games: usize,
    pub episode_cap: usize,
    pub rounds: usize,
    pub method: IndexingMode,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Demonstration file; defaults to `<out_dir>/demos.jsonl`.
    pub demos: Option<PathBuf>,
    pub discount: f64,
    pub learner: LearnerKind,
    pub trees: usize,
    pub max_depth: usize,
    /// Games per round.
    pub minibatch: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub kappa: f64,
    pub tau: f64,
    pub svi_minibatch: usize,
    pub warm_start_epochs: usize,
    pub lambda: f64,
    pub mixing: Option<MixingSchedule>,
    pub prey_last: bool,
    pub cost_mode: CostMode,
    /// Behavior-clone the indexed demonstrations before the first round.
    pub clone_demos: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            grid_side: DEFAULT_GRID_SIDE,
            num_predators: DEFAULT_PREDATORS,
            n_train_games: 1000,
            n_test_games: 100,
            episode_cap: DEFAULT_EPISODE_CAP,
            rounds: 10,
            method: IndexingMode::Coordinated,
            seed: 0,
            out_dir: PathBuf::from("out"),
            demos: None,
            discount: crate::mdp::DEFAULT_DISCOUNT,
            learner: LearnerKind::Forest,
            trees: 20,
            max_depth: 20,
            minibatch: 100,
            validation_fraction: 0.1,
            patience: 10,
            kappa: 0.6,
            tau: 1.0,
            svi_minibatch: 8,
            warm_start_epochs: 2,
            lambda: 0.0,
            mixing: None,
            prey_last: false,
            cost_mode: CostMode::RowRescaled,
            clone_demos: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "cannot parse `{value}` as a boolean for key `{key}`"
        ))),
    }
}

impl ExperimentSpec {
    /// Every recognised config key, in file order.
    pub const KEYS: &'static [&'static str] = &[
        "grid_side",
        "num_predators",
        "n_train_games",
        "n_test_games",
        "episode_cap",
        "rounds",
        "method",
        "seed",
        "out_dir",
        "demos",
        "discount",
        "learner",
        "trees",
        "max_depth",
        "minibatch",
        "validation_fraction",
        "patience",
        "kappa",
        "tau",
        "svi_minibatch",
        "warm_start_epochs",
        "lambda",
        "mixing_start",
        "mixing_growth",
        "prey_last",
        "cost_mode",
        "clone_demos",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "grid_side" => self.grid_side = parse(key, value)?,
            "num_predators" => self.num_predators = parse(key, value)?,
            "n_train_games" => self.n_train_games = parse(key, value)?,
            "n_test_games" => self.n_test_games = parse(key, value)?,
            "episode_cap" => self.episode_cap = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "method" => self.method = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "demos" => self.demos = Some(PathBuf::from(value)),
            "discount" => self.discount = parse(key, value)?,
            "learner" => self.learner = value.parse()?,
            "trees" => self.trees = parse(key, value)?,
            "max_depth" => self.max_depth = parse(key, value)?,
            "minibatch" => self.minibatch = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "svi_minibatch" => self.svi_minibatch = parse(key, value)?,
            "warm_start_epochs" => self.warm_start_epochs = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "mixing_start" => {
                let start = parse(key, value)?;
                let growth = self.mixing.map_or(0.0, |m| m.growth);
                self.mixing = Some(MixingSchedule { start, growth });
            }
            "mixing_growth" => {
                let growth = parse(key, value)?;
                let start = self.mixing.map_or(0.0, |m| m.start);
                self.mixing = Some(MixingSchedule { start, growth });
            }
            "prey_last" => self.prey_last = parse_bool(key, value)?,
            "clone_demos" => self.clone_demos = parse_bool(key, value)?,
            "cost_mode" => {
                self.cost_mode = match value {
                    "row_rescaled" => CostMode::RowRescaled,
                    "literal" => CostMode::Literal,
                    _ => return Err(Error::Config(format!("unknown cost_mode `{value}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat config text: one `key = value` per line, `#` comments.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    i + 1
                ))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load_config(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_config(&text)
    }

    /// Every key with its current value, in the config format.
    pub fn to_config_string(&self) -> String {
        let method = match self.method {
            IndexingMode::Coordinated => "coordinated",
            IndexingMode::Unstructured => "unstructured",
        };
        let learner = match self.learner {
            LearnerKind::Logistic => "logistic",
            LearnerKind::Forest => "forest",
        };
        let cost_mode = match self.cost_mode {
            CostMode::RowRescaled => "row_rescaled",
            CostMode::Literal => "literal",
        };
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("grid_side", self.grid_side.to_string());
        put("num_predators", self.num_predators.to_string());
        put("n_train_games", self.n_train_games.to_string());
        put("n_test_games", self.n_test_games.to_string());
        put("episode_cap", self.episode_cap.to_string());
        put("rounds", self.rounds.to_string());
        put("method", method.into());
        put("seed", self.seed.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("demos", self.demos_path().display().to_string());
        put("discount", self.discount.to_string());
        put("learner", learner.into());
        put("trees", self.trees.to_string());
        put("max_depth", self.max_depth.to_string());
        put("minibatch", self.minibatch.to_string());
        put("validation_fraction", self.validation_fraction.to_string());
        put("patience", self.patience.to_string());
        put("kappa", self.kappa.to_string());
        put("tau", self.tau.to_string());
        put("svi_minibatch", self.svi_minibatch.to_string());
        put("warm_start_epochs", self.warm_start_epochs.to_string());
        put("lambda", self.lambda.to_string());
        if let Some(m) = self.mixing {
            put("mixing_start", m.start.to_string());
            put("mixing_growth", m.growth.to_string());
        }
        put("prey_last", self.prey_last.to_string());
        put("cost_mode", cost_mode.into());
        put("clone_demos", self.clone_demos.to_string());
        s
    }

    /// Config lines that differ between `self` and `other`.
    pub fn diff(&self, other: &ExperimentSpec) -> Vec<(String, String)> {
        let a = self.to_config_string();
        let b = other.to_config_string();
        a.lines()
            .zip(b.lines())
            .filter(|(x, y)| x != y)
            .map(|(x, y)| (x.to_string(), y.to_string()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_side < 3 {
            return Err(Error::param("grid_side", "must be at least 3"));
        }
        if self.num_predators == 0 {
            return Err(Error::param("num_predators", "must be at least 1"));
        }
        if self.n_train_games < 2 {
            return Err(Error::param(
                "n_train_games",
                "need at least 2 demonstrations",
            ));
        }
        if self.episode_cap == 0 {
            return Err(Error::param("episode_cap", "must be at least 1"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidDiscount(self.discount));
        }
        if self.trees == 0 {
            return Err(Error::param("trees", "must be at least 1"));
        }
        self.coordinator_config().validate()
    }

    pub fn demos_path(&self) -> PathBuf {
        self.demos
            .clone()
            .unwrap_or_else(|| self.out_dir.join("demos.jsonl"))
    }

    /// Output directory of one training method.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(match self.method {
            IndexingMode::Coordinated => "coordinated",
            IndexingMode::Unstructured => "unstructured",
        })
    }

    pub fn game(&self) -> GameConfig {
        GameConfig {
            episode_cap: self.episode_cap,
            prey_last: self.prey_last,
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            kind: self.learner,
            seed: rng::derive_seed(self.seed, rng::streams::LEARNER),
            forest: ForestConfig {
                trees: self.trees,
                max_depth: self.max_depth,
                ..ForestConfig::default()
            },
            ..LearnerConfig::default()
        }
    }

    pub fn coordinator_config(&self) -> CoordinatorConfig {
        CoordinatorConfig {
            num_agents: self.num_predators,
            rounds: self.rounds,
            minibatch: self.minibatch,
            svi: SviConfig {
                kappa: self.kappa,
                tau: self.tau,
                minibatch: self.svi_minibatch,
            },
            warm_start_epochs: self.warm_start_epochs,
            mixing: self.mixing,
            lambda: self.lambda,
            validation_fraction: self.validation_fraction,
            patience: self.patience,
            seed: self.seed,
            mode: self.method,
            cost_mode: self.cost_mode,
            ..CoordinatorConfig::default()
        }
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
