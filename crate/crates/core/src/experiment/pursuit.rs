//! Predator-prey pipeline: demonstrations with shuffled indices, coordinated
//! and unstructured training with data aggregation, evaluation on fresh games,
//! and the role-frequency table.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create_dir, write_text, ExperimentSpec};
use crate::assign::index_trajectories;
use crate::coordinator::{
    self, write_reports, CoordinatorConfig, IndexingMode, RoundReport, RunOutput, Track,
};
use crate::hmm::{HmmPrior, Observations, VariationalHmm};
use crate::mdp::ExpertTeam;
use crate::policy::{
    dagger_round, featurize, offset_symbol, play_policies, save_policies, train_all, Dataset,
    DemoOracle, ExpertLabeler, FeatureFlags, GameTask, LearnerConfig, PolicyModel, Sample,
    NUM_SYMBOLS,
};
use crate::pursuit::{
    play, random_permutation, read_episodes, write_episodes, Episode, GameConfig, Move, WorldState,
};
use crate::rng::{self, streams};
use crate::{Error, Result};

/// Per-slot emission sequences of an episode: each predator's clamped offset
/// from the prey at every recorded state.
pub fn episode_emissions(episode: &Episode) -> Vec<Observations> {
    (0..episode.num_predators())
        .map(|slot| {
            Observations::Symbols(
                episode
                    .states
                    .iter()
                    .map(|s| offset_symbol(s, slot))
                    .collect(),
            )
        })
        .collect()
}

/// Plays `n` demonstration games with the role experts (predator `k` plays
/// role `k`), then stores each episode's predators in a fresh uniformly random
/// slot order. The order is recorded in `Episode::permutation` for audit.
pub fn generate_demos(
    team: &ExpertTeam,
    n: usize,
    game: GameConfig,
    seed: u64,
) -> Result<Vec<Episode>> {
    let k = team.num_roles();
    let g = team.grid_side();
    let root = rng::derive_seed(seed, streams::DEMOS);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let game_seed = rng::derive_seed(root, i as u64);
            let mut r = rng::stream(game_seed, 0);
            let start = WorldState::random(k, g, &mut r)?;
            let roles: Vec<usize> = (0..k).collect();
            let episode = play(start, game, &mut r, |w, _| team.joint_action(w, &roles))?;
            let mut shuffle = rng::stream(game_seed, streams::SHUFFLE);
            let order = random_permutation(k, &mut shuffle);
            let mut shuffled = episode.reindexed(&order);
            shuffled.seed = game_seed;
            Ok(shuffled)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub games: usize,
    pub captures: usize,
    pub failure_rate: f64,
    /// Mean length of the successful games; the episode cap when none succeed.
    pub mean_steps: f64,
}

impl EvalSummary {
    pub fn from_episodes(episodes: &[Episode], cap: usize) -> Self {
        let wins: Vec<usize> = episodes
            .iter()
            .filter(|e| e.capture)
            .map(Episode::len)
            .collect();
        let games = episodes.len();
        EvalSummary {
            games,
            captures: wins.len(),
            failure_rate: if games == 0 {
                0.0
            } else {
                1.0 - wins.len() as f64 / games as f64
            },
            mean_steps: if wins.is_empty() {
                cap as f64
            } else {
                wins.iter().sum::<usize>() as f64 / wins.len() as f64
            },
        }
    }
}

/// Fresh test games: start worlds and per-game seeds drawn from `seed`.
pub fn test_games(n: usize, k: usize, grid_side: i32, seed: u64) -> Result<Vec<(WorldState, u64)>> {
    let mut r = rng::stream(seed, streams::TEST_GAMES);
    (0..n)
        .map(|i| {
            Ok((
                WorldState::random(k, grid_side, &mut r)?,
                rng::derive_seed(seed, (streams::TEST_GAMES << 32) | i as u64),
            ))
        })
        .collect()
}

/// Learned policies on fresh test games, greedy actions.
pub fn evaluate_policies(
    policies: &[PolicyModel],
    games: &[(WorldState, u64)],
    game: GameConfig,
) -> Result<EvalSummary> {
    let episodes = games
        .par_iter()
        .map(|(start, seed)| {
            play_policies(policies, start, game, FeatureFlags::default(), None, *seed)
                .map(|(e, _)| e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_episodes(&episodes, game.episode_cap))
}

/// The experts themselves on fresh test games, predator `k` in role `k`.
pub fn evaluate_experts(
    team: &ExpertTeam,
    games: &[(WorldState, u64)],
    game: GameConfig,
) -> Result<EvalSummary> {
    let roles: Vec<usize> = (0..team.num_roles()).collect();
    let episodes = games
        .par_iter()
        .map(|(start, seed)| {
            play(start.clone(), game, &mut rng::stream(*seed, 0), |w, _| {
                team.joint_action(w, &roles)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_episodes(&episodes, game.episode_cap))
}

/// Behavior-cloning pairs of one (ordered) demonstration.
fn demo_samples(episode: &Episode, round: usize) -> Vec<Vec<Sample<Move>>> {
    let k = episode.num_predators();
    (0..k)
        .map(|a| {
            episode
                .joint_actions
                .iter()
                .zip(&episode.states)
                .map(|(moves, w)| Sample {
                    features: featurize(w, a, FeatureFlags::default(), None),
                    action: moves[a],
                    round,
                })
                .collect()
        })
        .collect()
}

/// Predator-prey track: the policies, their aggregated data and the experts
/// acting as dynamic oracles for each demonstration's roles.
pub struct PursuitTrack<'a> {
    pub team: &'a ExpertTeam,
    pub game: GameConfig,
    pub learner: LearnerConfig,
    pub policies: Vec<PolicyModel>,
    pub dataset: Dataset<Move>,
    pub seed: u64,
    /// Seed the data sets with the (indexed) demonstrations before the first
    /// round. Off: the first round rolls out untrained, uniformly random
    /// policies and every label comes from the oracles.
    pub clone_demos: bool,
}

impl<'a> PursuitTrack<'a> {
    pub fn new(team: &'a ExpertTeam, game: GameConfig, learner: LearnerConfig, seed: u64) -> Self {
        let k = team.num_roles();
        PursuitTrack {
            team,
            game,
            learner,
            policies: vec![PolicyModel::Uniform; k],
            dataset: Dataset::new(k),
            seed,
            clone_demos: false,
        }
    }

    fn tasks<'b>(
        &self,
        ordered: &'b [Episode],
        round: usize,
        salt: u64,
    ) -> Result<Vec<GameTask<DemoOracle<'b>>>>
    where
        'a: 'b,
    {
        oracle_tasks(self.team, ordered, self.seed, round, salt)
    }
}

/// One rollout task per ordered demonstration, labeled by its own oracle.
fn oracle_tasks<'b>(
    team: &'b ExpertTeam,
    ordered: &'b [Episode],
    seed: u64,
    round: usize,
    salt: u64,
) -> Result<Vec<GameTask<DemoOracle<'b>>>> {
    let identity: Vec<usize> = (0..team.num_roles()).collect();
    let root = rng::derive_seed(seed, (streams::ROLLOUT << 48) | (salt << 32) | round as u64);
    ordered
        .iter()
        .enumerate()
        .map(|(i, ep)| {
            let labeler = DemoOracle::new(team, ep, &identity)?;
            Ok(GameTask {
                start: labeler.start().clone(),
                labeler,
                seed: rng::derive_seed(root, i as u64),
            })
        })
        .collect()
}

impl Track for PursuitTrack<'_> {
    type Set = Episode;

    fn num_agents(&self) -> usize {
        self.team.num_roles()
    }

    fn hmm_prior(&self) -> HmmPrior {
        HmmPrior::categorical(NUM_SYMBOLS)
    }

    fn emissions(&self, set: &Episode) -> Result<Vec<Observations>> {
        Ok(episode_emissions(set))
    }

    fn reorder(&self, set: &Episode, order: &[usize]) -> Episode {
        set.reindexed(order)
    }

    fn warm_start(&mut self, ordered: &[Episode], _config: &CoordinatorConfig) -> Result<()> {
        if !self.clone_demos {
            return Ok(());
        }
        for ep in ordered {
            for (a, samples) in demo_samples(ep, 0).into_iter().enumerate() {
                self.dataset.extend(a, samples)?;
            }
        }
        self.policies = train_all(&self.learner, &self.dataset)?;
        Ok(())
    }

    fn learn(
        &mut self,
        round: usize,
        ordered: &[Episode],
        _config: &CoordinatorConfig,
    ) -> Result<()> {
        let tasks = self.tasks(ordered, round, 0)?;
        let out = dagger_round(
            &self.policies,
            &tasks,
            self.game,
            FeatureFlags::default(),
            None,
            &self.learner,
            &mut self.dataset,
            round,
        )?;
        self.policies = out.policies;
        Ok(())
    }

    fn rollout(
        &self,
        round: usize,
        ordered: &[Episode],
        _config: &CoordinatorConfig,
    ) -> Result<Vec<Vec<Observations>>> {
        let tasks = self.tasks(ordered, round, 1)?;
        tasks
            .par_iter()
            .map(|t| {
                let (ep, _) = play_policies(
                    &self.policies,
                    &t.start,
                    self.game,
                    FeatureFlags::default(),
                    None,
                    t.seed,
                )?;
                Ok(episode_emissions(&ep))
            })
            .collect()
    }

    /// Mean per-step disagreement between each policy and its oracle over
    /// rollouts of the current policies from the held-out starts.
    fn validation_loss(&self, ordered: &[Episode]) -> Result<f64> {
        let tasks = self.tasks(ordered, 0, 2)?;
        let counts = tasks
            .par_iter()
            .map(|t| {
                let (ep, _) = play_policies(
                    &self.policies,
                    &t.start,
                    self.game,
                    FeatureFlags::default(),
                    None,
                    t.seed,
                )?;
                let mut wrong = 0usize;
                let mut total = 0usize;
                for (w, moves) in ep.states.iter().zip(&ep.joint_actions) {
                    for (a, &m) in moves.iter().enumerate() {
                        wrong += usize::from(m != t.labeler.label(a, w));
                        total += 1;
                    }
                }
                Ok((wrong, total))
            })
            .collect::<Result<Vec<_>>>()?;
        let (wrong, total) = counts.iter().fold((0, 0), |(w, n), &(a, b)| (w + a, n + b));
        Ok(if total == 0 {
            0.0
        } else {
            wrong as f64 / total as f64
        })
    }
}

/// Per-round evaluation on the test games.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub round: usize,
    pub summary: EvalSummary,
}

pub fn write_eval_series(path: &std::path::Path, series: &[EvalPoint]) -> Result<()> {
    let mut text = String::from("round,failure_rate,mean_steps\n");
    for p in series {
        let _ = writeln!(
            text,
            "{},{},{}",
            p.round, p.summary.failure_rate, p.summary.mean_steps
        );
    }
    write_text(path, &text)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policies: Vec<PolicyModel>,
    pub run: RunOutput,
    pub eval_series: Vec<EvalPoint>,
    pub dataset_sizes: Vec<usize>,
}

/// Runs the full loop on `demos`, evaluating on `games` after every round.
pub fn train(
    spec: &ExperimentSpec,
    team: &ExpertTeam,
    demos: &[Episode],
    games: &[(WorldState, u64)],
    mut on_round: impl FnMut(&RoundReport, &EvalSummary),
) -> Result<TrainOutput> {
    spec.validate()?;
    if let Some(ep) = demos
        .iter()
        .find(|e| e.num_predators() != spec.num_predators || e.grid_side() != spec.grid_side)
    {
        return Err(Error::DimensionMismatch(format!(
            "demonstration has K={} G={}, spec K={} G={}",
            ep.num_predators(),
            ep.grid_side(),
            spec.num_predators,
            spec.grid_side
        )));
    }
    let mut track = PursuitTrack::new(team, spec.game(), spec.learner_config(), spec.seed);
    track.clone_demos = spec.clone_demos;
    let mut series = Vec::new();
    let run = coordinator::run(
        &mut track,
        demos,
        &spec.coordinator_config(),
        |report, track| {
            let summary = evaluate_policies(&track.policies, games, spec.game())?;
            log::info!(
                "round {}: test failure {:.3}, mean steps {:.2}",
                report.round,
                summary.failure_rate,
                summary.mean_steps
            );
            on_round(report, &summary);
            series.push(EvalPoint {
                round: report.round,
                summary,
            });
            Ok(())
        },
    )?;
    Ok(TrainOutput {
        dataset_sizes: track.dataset.per_role.iter().map(Vec::len).collect(),
        policies: track.policies,
        run,
        eval_series: series,
    })
}

pub fn solve_team(spec: &ExperimentSpec) -> Result<ExpertTeam> {
    if spec.num_predators != crate::mdp::RoleSpec::surround().len() {
        return Err(Error::param(
            "num_predators",
            "the expert team covers exactly 4 surround roles",
        ));
    }
    ExpertTeam::surround(spec.grid_side, spec.discount)
}

/// `gen-demos`: writes the shuffled demonstrations. Returns the file path.
pub fn gen_demos_cmd(spec: &ExperimentSpec) -> Result<PathBuf> {
    spec.validate()?;
    let team = solve_team(spec)?;
    let demos = generate_demos(&team, spec.n_train_games, spec.game(), spec.seed)?;
    let path = spec.demos_path();
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    write_episodes(&path, &demos)?;
    let summary = EvalSummary::from_episodes(&demos, spec.episode_cap);
    log::info!(
        "{} demonstrations: expert failure {:.3}, mean steps {:.2}",
        demos.len(),
        summary.failure_rate,
        summary.mean_steps
    );
    Ok(path)
}

/// `train`: runs one method and writes checkpoints, the role model, the round
/// reports, the per-round test series and the effective config.
pub fn train_cmd(spec: &ExperimentSpec) -> Result<TrainOutput> {
    spec.validate()?;
    let team = solve_team(spec)?;
    let demos_path = spec.demos_path();
    let demos = read_episodes(&demos_path)?;
    let games = test_games(
        spec.n_test_games,
        spec.num_predators,
        spec.grid_side,
        spec.seed,
    )?;
    let dir = spec.run_dir();
    create_dir(&dir)?;
    let other = ExperimentSpec {
        method: match spec.method {
            IndexingMode::Coordinated => IndexingMode::Unstructured,
            IndexingMode::Unstructured => IndexingMode::Coordinated,
        },
        ..spec.clone()
    };
    for (mine, theirs) in spec.diff(&other) {
        log::info!("config differs from the other method: `{mine}` vs `{theirs}`");
    }
    write_text(&dir.join("config.txt"), &spec.to_config_string())?;

    let out = train(spec, &team, &demos, &games, |_, _| {})?;
    save_policies(&dir, &out.policies)?;
    if let Some(hmm) = &out.run.hmm {
        hmm.save(&dir.join("hmm.json"))?;
    }
    write_reports(&dir.join("report.csv"), &out.run.reports)?;
    write_eval_series(&dir.join("eval_series.csv"), &out.eval_series)?;
    Ok(out)
}

/// `eval`: loads a method's checkpoints and writes `eval.csv`.
pub fn eval_cmd(spec: &ExperimentSpec) -> Result<EvalSummary> {
    let dir = spec.run_dir();
    let saved = dir.join("config.txt");
    if saved.exists() {
        let mut trained = ExperimentSpec::default();
        trained.load_config(&saved)?;
        if (trained.num_predators, trained.grid_side) != (spec.num_predators, spec.grid_side) {
            return Err(Error::DimensionMismatch(format!(
                "checkpoints were trained for K={} G={}, evaluation asks for K={} G={}",
                trained.num_predators, trained.grid_side, spec.num_predators, spec.grid_side
            )));
        }
    }
    let policies = crate::policy::load_policies(&dir, spec.num_predators)?;
    let games = test_games(
        spec.n_test_games,
        spec.num_predators,
        spec.grid_side,
        spec.seed,
    )?;
    // A checkpoint trained for another board or team size is caught by the
    // feature dimensionality check.
    check_policy_shape(&policies, spec)?;
    let summary = evaluate_policies(&policies, &games, spec.game())?;
    let text = format!(
        "games,captures,failure_rate,mean_steps\n{},{},{},{}\n",
        summary.games, summary.captures, summary.failure_rate, summary.mean_steps
    );
    write_text(&dir.join("eval.csv"), &text)?;
    Ok(summary)
}

fn check_policy_shape(policies: &[PolicyModel], spec: &ExperimentSpec) -> Result<()> {
    let d = FeatureFlags::default().dims(spec.num_predators);
    for (k, p) in policies.iter().enumerate() {
        let width = match p {
            PolicyModel::Logistic(m) => Some(m.mean.len()),
            PolicyModel::Forest(f) => Some(f.dims),
            _ => None,
        };
        if let Some(w) = width {
            if w != d {
                return Err(Error::DimensionMismatch(format!(
                    "policy {k} expects {w} features, K={} needs {d}",
                    spec.num_predators
                )));
            }
        }
    }
    Ok(())
}

/// Role frequencies per policy index: `frequency[k][r]` is the share of time
/// steps, over all trajectories assigned to policy `k`, whose decoded latent
/// role is `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleTable {
    pub frequency: Vec<Vec<f64>>,
    /// `audit[k][e]`: share of trajectories assigned to policy `k` that were
    /// produced by expert `e`.
    pub audit: Vec<Vec<f64>>,
}

impl RoleTable {
    pub fn to_csv(&self) -> String {
        let k = self.frequency.len();
        let mut s = String::from("policy");
        for r in 0..k {
            let _ = write!(s, ",role_{r}");
        }
        s.push('\n');
        for (p, row) in self.frequency.iter().enumerate() {
            let _ = write!(s, "{p}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn audit_csv(&self) -> String {
        let k = self.audit.len();
        let mut s = String::from("policy");
        for e in 0..k {
            let _ = write!(s, ",expert_{e}");
        }
        s.push('\n');
        for (p, row) in self.audit.iter().enumerate() {
            let _ = write!(s, "{p}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Assigns every demonstration and Viterbi-decodes each trajectory.
pub fn role_table(
    hmm: &VariationalHmm,
    demos: &[Episode],
    mode: crate::assign::CostMode,
) -> Result<RoleTable> {
    let k = hmm.num_states;
    let per_demo = demos
        .par_iter()
        .map(|ep| {
            let obs = episode_emissions(ep);
            let indexing = index_trajectories(hmm, &obs, mode)?;
            let mut counts = vec![vec![0usize; k]; k];
            let mut experts = vec![vec![0usize; k]; k];
            for (policy, &slot) in indexing.order().iter().enumerate() {
                for r in crate::assign::role_features(hmm, &obs[slot])? {
                    counts[policy][r] += 1;
                }
                experts[policy][ep.permutation[slot]] += 1;
            }
            Ok((counts, experts))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![vec![0usize; k]; k];
    let mut experts = vec![vec![0usize; k]; k];
    for (c, e) in &per_demo {
        for p in 0..k {
            for r in 0..k {
                counts[p][r] += c[p][r];
                experts[p][r] += e[p][r];
            }
        }
    }
    let normalize = |rows: Vec<Vec<usize>>| -> Vec<Vec<f64>> {
        rows.into_iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                    .collect()
            })
            .collect()
    };
    Ok(RoleTable {
        frequency: normalize(counts),
        audit: normalize(experts),
    })
}

/// `infer-roles`: writes `role_frequency.csv` and `role_audit.csv` next to
/// the coordinated checkpoints and returns the table.
pub fn infer_roles_cmd(spec: &ExperimentSpec) -> Result<RoleTable> {
    let dir = spec.out_dir.join("coordinated");
    let hmm = VariationalHmm::load(&dir.join("hmm.json"))?;
    if hmm.num_states != spec.num_predators {
        return Err(Error::DimensionMismatch(format!(
            "role model has {} states, K={}",
            hmm.num_states, spec.num_predators
        )));
    }
    let demos = read_episodes(&spec.demos_path())?;
    let table = role_table(&hmm, &demos, spec.cost_mode)?;
    write_text(&dir.join("role_frequency.csv"), &table.to_csv())?;
    write_text(&dir.join("role_audit.csv"), &table.audit_csv())?;
    Ok(table)
}
