use std::path::Path;
use std::process::{Command, Output};

use comil::coordinator::IndexingMode;
use comil::experiment::pursuit::{gen_demos_cmd, train_cmd};
use comil::experiment::ExperimentSpec;
use comil::pursuit::read_episodes;
use tempfile::TempDir;

/// Small enough to train in seconds, large enough that every round sees a
/// real minibatch.
const SMALL: &[&str] = &[
    "--n-train-games",
    "40",
    "--n-test-games",
    "10",
    "--rounds",
    "2",
    "--minibatch",
    "16",
    "--trees",
    "3",
];

fn comil(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comil"))
        .args(args)
        .args(["--out-dir", out.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = comil(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL).copied().collect()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// gen-demos, both trainings and both evaluations in `dir`.
fn pipeline(dir: &Path, seed: &str) {
    ok(&with_small(&["gen-demos", "--seed", seed]), dir);
    for method in ["coordinated", "unstructured"] {
        ok(
            &with_small(&["train", "--seed", seed, "--method", method]),
            dir,
        );
        ok(&["eval", "--method", method], dir);
    }
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let demos_path = ok(&with_small(&["gen-demos", "--seed", "3"]), dir);
    assert_eq!(Path::new(demos_path.trim()), dir.join("demos.jsonl"));
    let demos_before = read(dir.join("demos.jsonl"));
    assert_eq!(read_episodes(&dir.join("demos.jsonl")).unwrap().len(), 40);

    let stdout = ok(
        &with_small(&["train", "--seed", "3", "--method", "coordinated"]),
        dir,
    );
    assert!(stdout.starts_with("round,imitation_loss,entropy,elbo,churn,failure_rate,mean_steps\n"));
    assert_eq!(stdout.lines().count(), 3);
    ok(
        &with_small(&["train", "--seed", "3", "--method", "unstructured"]),
        dir,
    );
    // Training never rewrites the shared demonstrations.
    assert_eq!(read(dir.join("demos.jsonl")), demos_before);

    for method in ["coordinated", "unstructured"] {
        let run = dir.join(method);
        for file in [
            "config.txt",
            "report.csv",
            "eval_series.csv",
            "policy_0.json",
            "policy_3.json",
        ] {
            assert!(run.join(file).exists(), "{method}/{file}");
        }
        let report = String::from_utf8(read(run.join("report.csv"))).unwrap();
        assert!(report.starts_with("round,imitation_loss,entropy,elbo,churn\n"));
        let out = ok(&["eval", "--method", method], dir);
        assert!(out.starts_with("games,captures,failure_rate,mean_steps\n"));
        let eval = String::from_utf8(read(run.join("eval.csv"))).unwrap();
        assert_eq!(eval, out);
        let games: usize = eval
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(games, 10);
    }
    assert!(dir.join("coordinated/hmm.json").exists());
    assert!(!dir.join("unstructured/hmm.json").exists());

    let table = ok(&["infer-roles"], dir);
    assert!(table.starts_with("policy,role_0,role_1,role_2,role_3\n"));
    for row in table.lines().skip(1) {
        let total: f64 = row
            .split(',')
            .skip(1)
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "{row}");
    }
    assert!(dir.join("coordinated/role_audit.csv").exists());
}

#[test]
fn methods_differ_only_in_the_indexing_step() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&with_small(&["gen-demos", "--seed", "4"]), dir);
    for method in ["coordinated", "unstructured"] {
        ok(
            &with_small(&["train", "--seed", "4", "--method", method]),
            dir,
        );
    }
    let a = String::from_utf8(read(dir.join("coordinated/config.txt"))).unwrap();
    let b = String::from_utf8(read(dir.join("unstructured/config.txt"))).unwrap();
    let diff: Vec<(&str, &str)> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
    assert_eq!(diff.len(), 1, "{diff:?}");
    assert!(diff[0].0.starts_with("method"));
    // Both methods name the same demonstration file.
    let demos = |text: &str| {
        text.lines()
            .find(|l| l.starts_with("demos"))
            .map(str::to_owned)
    };
    assert_eq!(demos(&a), demos(&b));
}

#[test]
fn pipeline_is_bit_identical_across_runs() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    pipeline(a.path(), "5");
    pipeline(b.path(), "5");
    assert_eq!(
        read(a.path().join("demos.jsonl")),
        read(b.path().join("demos.jsonl"))
    );
    for method in ["coordinated", "unstructured"] {
        for file in ["report.csv", "eval_series.csv", "eval.csv", "policy_0.json"] {
            let rel = format!("{method}/{file}");
            assert_eq!(
                read(a.path().join(&rel)),
                read(b.path().join(&rel)),
                "{rel}"
            );
        }
    }
    assert_eq!(
        read(a.path().join("coordinated/hmm.json")),
        read(b.path().join("coordinated/hmm.json"))
    );
}

#[test]
fn demonstrations_depend_only_on_the_seed() {
    let (a, b, c) = (
        TempDir::new().unwrap(),
        TempDir::new().unwrap(),
        TempDir::new().unwrap(),
    );
    ok(&with_small(&["gen-demos", "--seed", "6"]), a.path());
    ok(&with_small(&["gen-demos", "--seed", "6"]), b.path());
    ok(&with_small(&["gen-demos", "--seed", "7"]), c.path());
    let da = read(a.path().join("demos.jsonl"));
    assert_eq!(da, read(b.path().join("demos.jsonl")));
    assert_ne!(da, read(c.path().join("demos.jsonl")));
}

fn small_spec(dir: &Path, method: IndexingMode) -> ExperimentSpec {
    ExperimentSpec {
        n_train_games: 60,
        n_test_games: 5,
        rounds: 1,
        minibatch: 40,
        trees: 3,
        seed: 8,
        method,
        out_dir: dir.to_path_buf(),
        ..ExperimentSpec::default()
    }
}

#[test]
fn coordinated_training_reorders_most_shuffled_sets() {
    let tmp = TempDir::new().unwrap();
    let spec = small_spec(tmp.path(), IndexingMode::Coordinated);
    gen_demos_cmd(&spec).unwrap();
    let out = train_cmd(&spec).unwrap();
    let first = &out.run.reports[0];
    assert!(first.nontrivial_fraction > 0.5, "{first:?}");
    assert!(out.run.hmm_invocations > 0);
}

#[test]
fn unstructured_training_never_touches_the_role_model() {
    let tmp = TempDir::new().unwrap();
    let spec = small_spec(tmp.path(), IndexingMode::Unstructured);
    gen_demos_cmd(&spec).unwrap();
    let out = train_cmd(&spec).unwrap();
    assert_eq!(out.run.hmm_invocations, 0);
    assert!(out.run.hmm.is_none());
    assert!(out
        .run
        .reports
        .iter()
        .all(|r| r.nontrivial_fraction == 0.0 && r.churn == 0.0));
}

#[test]
fn evaluation_rejects_a_different_board() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&with_small(&["gen-demos", "--seed", "9"]), dir);
    ok(
        &with_small(&["train", "--seed", "9", "--method", "unstructured"]),
        dir,
    );
    let o = comil(
        &["eval", "--method", "unstructured", "--grid-side", "12"],
        dir,
    );
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("K=4 G=10") && err.contains("G=12"), "{err}");
}

#[test]
fn training_on_mismatched_demonstrations_fails() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(&with_small(&["gen-demos", "--seed", "10"]), dir);
    let o = comil(
        &with_small(&["train", "--seed", "10", "--grid-side", "8"]),
        dir,
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("G=10"));
}

#[test]
fn missing_inputs_and_bad_keys_are_reported() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let o = comil(&with_small(&["train", "--seed", "1"]), dir);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("demos.jsonl"));

    let o = comil(&["gen-demos", "--seed", "1", "--set", "no_such_key=3"], dir);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));

    let o = comil(&["gen-demos", "--seed", "1", "--set", "kappa"], dir);
    assert!(!o.status.success());

    let o = comil(&["infer-roles"], dir);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("hmm.json"));
}

#[test]
fn config_files_and_flags_compose() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let config = dir.join("exp.txt");
    std::fs::write(
        &config,
        "# small run\nn_train_games = 12\nepisode_cap = 30\n",
    )
    .unwrap();
    let path = ok(
        &[
            "gen-demos",
            "--seed",
            "2",
            "--config",
            config.to_str().unwrap(),
            "--n-train-games",
            "8",
        ],
        dir,
    );
    let demos = read_episodes(Path::new(path.trim())).unwrap();
    // The flag wins over the file; the file's cap applies.
    assert_eq!(demos.len(), 8);
    assert!(demos.iter().all(|e| e.joint_actions.len() <= 30));
}
