use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use comil::coordinator::IndexingMode;
use comil::experiment::{pursuit, ExperimentSpec};
use comil::policy::LearnerKind;

/// Coordinated multi-agent imitation learning on the predator-prey testbed.
#[derive(Parser, Debug)]
#[command(name = "comil", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Play expert games and write shuffled demonstrations.
    GenDemos(SeededArgs),
    /// Train one method and write checkpoints and round reports.
    Train(SeededArgs),
    /// Evaluate a method's checkpoints on fresh test games.
    Eval(OptionalSeedArgs),
    /// Assign and decode the demonstrations with the fitted role model and
    /// print the role-frequency table.
    InferRoles(OptionalSeedArgs),
}

#[derive(Args, Debug)]
struct SeededArgs {
    /// Root seed of every random stream.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args, Debug)]
struct OptionalSeedArgs {
    /// Root seed; selects the test games.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args, Debug)]
struct SpecArgs {
    /// Flat `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    grid_side: Option<i32>,
    #[arg(long)]
    num_predators: Option<usize>,
    #[arg(long)]
    n_train_games: Option<usize>,
    #[arg(long)]
    n_test_games: Option<usize>,
    #[arg(long)]
    episode_cap: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// `coordinated` or `unstructured`.
    #[arg(long)]
    method: Option<IndexingMode>,
    /// `forest` or `logistic`.
    #[arg(long)]
    learner: Option<LearnerKind>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    /// The prey moves after every predator.
    #[arg(long)]
    prey_last: bool,
    /// Behavior-clone the indexed demonstrations before the first round.
    #[arg(long)]
    clone_demos: bool,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl SpecArgs {
    fn build(&self, seed: Option<u64>) -> Result<ExperimentSpec> {
        self.build_on(self.config.as_deref(), seed)
    }

    /// Like `build`, but without `--config` the trained run's saved config
    /// is the base, so evaluation sees the same games and sizes as training.
    fn build_for_run(&self, seed: Option<u64>) -> Result<ExperimentSpec> {
        let spec = self.build(seed)?;
        let saved = spec.run_dir().join("config.txt");
        if self.config.is_none() && saved.exists() {
            return self.build_on(Some(&saved), seed);
        }
        Ok(spec)
    }

    fn build_on(
        &self,
        config: Option<&std::path::Path>,
        seed: Option<u64>,
    ) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::default();
        if let Some(path) = config {
            spec.load_config(path)
                .with_context(|| format!("reading config {}", path.display()))?;
        }
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    spec.$field = v.clone();
                }
            };
        }
        take!(out_dir);
        take!(grid_side);
        take!(num_predators);
        take!(n_train_games);
        take!(n_test_games);
        take!(episode_cap);
        take!(rounds);
        take!(method);
        take!(learner);
        take!(trees);
        take!(minibatch);
        if let Some(d) = &self.demos {
            spec.demos = Some(d.clone());
        }
        spec.prey_last |= self.prey_last;
        spec.clone_demos |= self.clone_demos;
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            spec.set(k.trim(), v)?;
        }
        if let Some(s) = seed {
            spec.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenDemos(args) => {
            let spec = args.spec.build(Some(args.seed))?;
            let path = pursuit::gen_demos_cmd(&spec)?;
            println!("{}", path.display());
        }
        Command::Train(args) => {
            let spec = args.spec.build(Some(args.seed))?;
            let out = pursuit::train_cmd(&spec)?;
            println!("round,imitation_loss,entropy,elbo,churn,failure_rate,mean_steps");
            for (r, e) in out.run.reports.iter().zip(&out.eval_series) {
                println!(
                    "{},{},{},{},{},{},{}",
                    r.round,
                    r.imitation_loss,
                    r.entropy,
                    r.elbo,
                    r.churn,
                    e.summary.failure_rate,
                    e.summary.mean_steps
                );
            }
        }
        Command::Eval(args) => {
            let spec = args.spec.build_for_run(args.seed)?;
            let s = pursuit::eval_cmd(&spec)?;
            println!("games,captures,failure_rate,mean_steps");
            println!(
                "{},{},{},{}",
                s.games, s.captures, s.failure_rate, s.mean_steps
            );
        }
        Command::InferRoles(args) => {
            let spec = args.spec.build(args.seed)?;
            let table = pursuit::infer_roles_cmd(&spec)?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}
