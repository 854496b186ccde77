use comil::experiment::pursuit::{evaluate_experts, evaluate_policies, test_games};
use comil::mdp::{
    build_role_mdp, value_iteration, ExpertTeam, PreyModel, RelativeMdp, RoleSpec, ValueTable,
};
use comil::policy::PolicyModel;
use comil::pursuit::{GameConfig, Move};
use nalgebra::{DMatrix, DVector};

/// Exact value of the greedy policy of `table`: solves
/// `(I - gamma P_pi) V = P_pi r`.
fn evaluate_greedy(mdp: &RelativeMdp, table: &ValueTable) -> DVector<f64> {
    let n = mdp.num_states();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let q = &table.q[s];
        let best = (0..5).fold(0, |bi, i| if q[i] > q[bi] { i } else { bi });
        for &(s2, p) in &mdp.transitions[s][best] {
            a[(s, s2)] -= mdp.discount * p;
            b[s] += p * mdp.reward[s2];
        }
    }
    a.lu().solve(&b).expect("non-singular for discount < 1")
}

fn check_against_linear_solve(grid_side: i32, discount: f64, prey: PreyModel) {
    for role in RoleSpec::surround() {
        let mdp = build_role_mdp(role, grid_side, discount, prey).unwrap();
        let table = value_iteration(&mdp, 1e-10, 100_000).unwrap();
        assert!(table.converged);
        let exact = evaluate_greedy(&mdp, &table);
        for s in 0..mdp.num_states() {
            assert!(
                (exact[s] - table.v[s]).abs() < 1e-7,
                "state {s}: {} vs {}",
                exact[s],
                table.v[s]
            );
            // No action improves on the exact value: the greedy policy is optimal.
            for a in 0..5 {
                let q: f64 = mdp.transitions[s][a]
                    .iter()
                    .map(|&(s2, p)| p * (mdp.reward[s2] + discount * exact[s2]))
                    .sum();
                assert!(q <= exact[s] + 1e-9);
            }
        }
    }
}

#[test]
fn small_stationary_board_matches_policy_evaluation() {
    check_against_linear_solve(3, 0.9, PreyModel::Stationary);
}

#[test]
fn random_prey_board_matches_policy_evaluation() {
    check_against_linear_solve(5, 0.95, PreyModel::UniformRandom);
    check_against_linear_solve(7, 0.9, PreyModel::UniformRandom);
}

#[test]
fn stationary_target_value_is_a_geometric_series() {
    // Staying on the target collects reward 1 forever.
    let role = RoleSpec {
        role_id: 0,
        target_offset: (0, 1),
    };
    let mdp = build_role_mdp(role, 5, 0.9, PreyModel::Stationary).unwrap();
    let table = value_iteration(&mdp, 1e-12, 100_000).unwrap();
    assert!((table.value_at((0, 1)) - 1.0 / (1.0 - 0.9)).abs() < 1e-9);
    // One cell west of the target, the expert steps east.
    assert_eq!(
        comil::mdp::expert_action(&table, &world_with_offset((-1, 1), 5), 0, None),
        Move::East
    );
}

fn world_with_offset(offset: (i32, i32), g: i32) -> comil::pursuit::WorldState {
    use comil::pursuit::GridPos;
    let prey = GridPos::new(2, 2);
    let pred = prey.offset(offset.0, offset.1, g);
    comil::pursuit::WorldState::new(vec![pred], prey, g).unwrap()
}

#[test]
fn bellman_residual_of_converged_tables() {
    let team = ExpertTeam::surround(10, 0.95).unwrap();
    for (table, role) in team.tables.iter().zip(RoleSpec::surround()) {
        let mdp = build_role_mdp(role, 10, 0.95, PreyModel::UniformRandom).unwrap();
        for s in 0..mdp.num_states() {
            for a in 0..5 {
                let q: f64 = mdp.transitions[s][a]
                    .iter()
                    .map(|&(s2, p)| p * (mdp.reward[s2] + 0.95 * table.v[s2]))
                    .sum();
                assert!((q - table.q[s][a]).abs() <= 10.0 * 1e-6);
            }
        }
        // Residuals never grow after the first sweep.
        assert!(table
            .residuals
            .windows(2)
            .skip(1)
            .all(|w| w[1] <= w[0] + 1e-15));
    }
}

#[test]
fn experts_capture_far_faster_than_random_predators() {
    let team = ExpertTeam::surround(10, 0.95).unwrap();
    let games = test_games(200, 4, 10, 41).unwrap();
    let config = GameConfig::default();
    let experts = evaluate_experts(&team, &games, config).unwrap();
    let random = evaluate_policies(&vec![PolicyModel::Uniform; 4], &games, config).unwrap();
    assert!(experts.failure_rate <= 0.05, "{experts:?}");
    // Failed games count at the cap so the two means are comparable.
    let capped = |s: &comil::experiment::pursuit::EvalSummary| {
        let cap = config.episode_cap as f64;
        (1.0 - s.failure_rate) * s.mean_steps + s.failure_rate * cap
    };
    assert!(
        2.0 * capped(&experts) <= capped(&random),
        "{experts:?} vs {random:?}"
    );
    assert!(random.failure_rate >= 0.9, "{random:?}");
}
