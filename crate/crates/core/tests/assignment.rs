mod common;

use std::collections::HashSet;

use comil::assign::{
    assign, cost_matrix, entropy_estimate, index_trajectories, min_cost_assignment, role_features,
    total_cost, Assignment, CostMode,
};
use comil::hmm::{HmmPrior, Observations, VariationalHmm};
use comil::rng;
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn brute_min(m: &[Vec<f64>]) -> (f64, Vec<usize>) {
    permutations(m.len())
        .into_iter()
        .map(|p| (total_cost(m, &p), p))
        .fold(None::<(f64, Vec<usize>)>, |best, (c, p)| match best {
            Some((bc, bp)) if bc <= c => Some((bc, bp)),
            _ => Some((c, p)),
        })
        .unwrap()
}

#[test]
fn hungarian_equals_enumeration_on_random_matrices() {
    let mut r = rng::stream(31, 0);
    for case in 0..1000 {
        let k = 1 + case % 6;
        let m: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..k).map(|_| r.gen_range(-10.0..10.0)).collect())
            .collect();
        let a = min_cost_assignment(&m).unwrap();
        let (best, _) = brute_min(&m);
        assert_eq!(a.total_cost, best, "case {case}: {m:?}");
        assert_eq!(a.total_cost, total_cost(&m, &a.perm));
    }
}

#[test]
fn ties_resolve_to_the_lexicographically_smallest_optimum() {
    let mut r = rng::stream(32, 0);
    for case in 0..300 {
        let k = 1 + case % 6;
        let m: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..k).map(|_| r.gen_range(0..3) as f64).collect())
            .collect();
        // `permutations` enumerates in lexicographic order and `brute_min`
        // keeps the first optimum.
        let (best, perm) = brute_min(&m);
        let a = min_cost_assignment(&m).unwrap();
        assert_eq!(
            a,
            Assignment {
                perm,
                total_cost: best
            },
            "case {case}"
        );
    }
}

/// A `k`-state model with well-separated emissions and short random
/// trajectories.
fn fixture(k: usize, seed: u64) -> (VariationalHmm, Vec<Observations>) {
    let known = KnownHmm::well_separated(k, 0.8, 0.7);
    let mut r = rng::stream(seed, 0);
    let trajs = (0..k)
        .map(|_| symbols(&known.sample(r.gen_range(3..8), &mut r).1))
        .collect::<Vec<_>>();
    let len = trajs.iter().map(Observations::len).min().unwrap();
    let trajs = trajs
        .into_iter()
        .map(|t| match t {
            Observations::Symbols(xs) => symbols(&xs[..len]),
            other => other,
        })
        .collect();
    (known.variational(r.gen_range(2.0..20.0)), trajs)
}

#[test]
fn returned_assignment_maximizes_the_entropy_estimate() {
    for seed in 0..200 {
        let k = 1 + (seed as usize) % 5;
        let (model, trajs) = fixture(k, seed);
        for mode in [CostMode::RowRescaled, CostMode::Literal] {
            let idx = index_trajectories(&model, &trajs, mode).unwrap();
            let best = permutations(k)
                .into_iter()
                .map(|p| {
                    entropy_estimate(
                        &idx.cost,
                        &Assignment {
                            total_cost: 0.0,
                            perm: p,
                        },
                    )
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(
                idx.entropy >= best - 1e-12 * best.abs(),
                "seed {seed}: {} < {best}",
                idx.entropy
            );
        }
    }
}

#[test]
fn entropy_of_the_two_by_two_example() {
    let m = vec![vec![-1.0, 0.0], vec![0.0, -1.0]];
    let a = min_cost_assignment(&m).unwrap();
    assert!(a.is_identity());
    assert_eq!(-a.total_cost / 2.0, 1.0);
}

#[test]
fn assign_preserves_the_multiset_of_trajectories() {
    for seed in 0..50 {
        let k = 2 + (seed as usize) % 4;
        let (model, trajs) = fixture(k, seed + 1000);
        let ids: Vec<usize> = (0..k).collect();
        let (ordered, idx) = assign(&ids, &trajs, &model, CostMode::RowRescaled).unwrap();
        let mut sorted = ordered.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, ids);
        assert_eq!(ordered, idx.order());
        let (ordered_obs, _) = assign(&trajs, &trajs, &model, CostMode::RowRescaled).unwrap();
        let seen: HashSet<String> = ordered_obs.iter().map(|o| format!("{o:?}")).collect();
        let want: HashSet<String> = trajs.iter().map(|o| format!("{o:?}")).collect();
        assert_eq!(seen, want);
    }
}

#[test]
fn four_roles_are_recovered_from_shuffled_sets() {
    // Roles persist within a trajectory, so every set has a well-defined
    // generating matching.
    let known = KnownHmm::well_separated(4, 0.999, 0.94);
    let model = known.variational(1000.0);
    let mut r = rng::stream(33, 0);
    let sets = 200;
    let mut recovered = 0;
    let (mut hits, mut steps) = (0usize, 0usize);
    for _ in 0..sets {
        // Trajectory `i` is generated by role `roles[i]`.
        let roles = comil::pursuit::random_permutation(4, &mut r);
        let mut trajs = Vec::new();
        for &role in &roles {
            let (states, xs) = known.sample_from(role, 15, &mut r);
            let decoded = role_features(&model, &symbols(&xs)).unwrap();
            hits += decoded.iter().zip(&states).filter(|(a, b)| a == b).count();
            steps += xs.len();
            trajs.push(symbols(&xs));
        }
        let idx = index_trajectories(&model, &trajs, CostMode::RowRescaled).unwrap();
        // Role `j` must receive the trajectory generated by role `j`.
        if (0..4).all(|j| roles[idx.order()[j]] == j) {
            recovered += 1;
        }
    }
    let set_rate = recovered as f64 / sets as f64;
    let step_rate = hits as f64 / steps as f64;
    assert!(set_rate >= 0.95, "set recovery {set_rate}");
    assert!(step_rate >= 0.95, "per-step accuracy {step_rate}");
}

#[test]
fn decoding_a_near_deterministic_two_state_model() {
    let known = KnownHmm::well_separated(2, 0.9, 0.995);
    let model = known.variational(1e4);
    let mut r = rng::stream(34, 0);
    let (mut hits, mut total) = (0, 0);
    for _ in 0..50 {
        let (states, xs) = known.sample(40, &mut r);
        let path = role_features(&model, &symbols(&xs)).unwrap();
        hits += path.iter().zip(&states).filter(|(a, b)| a == b).count();
        total += states.len();
    }
    assert!(hits as f64 >= 0.99 * total as f64, "{hits}/{total}");
}

#[test]
fn single_role_decodes_to_a_constant_sequence() {
    let model = VariationalHmm::from_prior(1, &HmmPrior::categorical(3)).unwrap();
    assert_eq!(
        role_features(&model, &symbols(&[0, 2, 1, 1])).unwrap(),
        vec![0; 4]
    );
}

#[test]
fn relabeling_the_model_relabels_the_decoded_roles() {
    let known = KnownHmm::well_separated(3, 0.8, 0.9);
    let mut r = rng::stream(35, 0);
    // Break the symmetry of the fixture so that no two paths tie exactly.
    let mut model = known.variational(50.0);
    for a in model
        .init
        .iter_mut()
        .chain(model.trans.iter_mut().flatten())
    {
        *a *= r.gen_range(0.8..1.25);
    }
    for perm in permutations(3) {
        let xs = known.sample(30, &mut r).1;
        let base = role_features(&model, &symbols(&xs)).unwrap();
        let relabeled = role_features(&model.permuted(&perm), &symbols(&xs)).unwrap();
        // New state `i` is old state `perm[i]`.
        let mapped: Vec<usize> = relabeled.iter().map(|&s| perm[s]).collect();
        assert_eq!(mapped, base);
    }
}

#[test]
fn cost_is_a_weighted_log_likelihood() {
    let (model, trajs) = fixture(3, 36);
    let c = cost_matrix(&model, &trajs, CostMode::RowRescaled).unwrap();
    for row in 0..3 {
        let best = c.m2[row].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for role in 0..3 {
            assert_close(
                c.m1[row][role],
                (c.m2[row][role] - best).exp(),
                1e-15,
                "rescaled weight",
            );
            assert_eq!(c.m[row][role], c.m1[row][role] * c.m2[row][role]);
        }
    }
}

fn arb_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=6)
        .prop_flat_map(|k| prop::collection::vec(prop::collection::vec(-100.0f64..100.0, k), k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hungarian_is_optimal(m in arb_matrix()) {
        let a = min_cost_assignment(&m).unwrap();
        prop_assert_eq!(a.total_cost, brute_min(&m).0);
        let mut p = a.perm.clone();
        p.sort_unstable();
        prop_assert_eq!(p, (0..m.len()).collect::<Vec<_>>());
    }

    #[test]
    fn adding_a_constant_keeps_the_matching(m in arb_matrix(), c in -50i32..50) {
        let shifted: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|v| v + c as f64).collect()).collect();
        prop_assert_eq!(min_cost_assignment(&m).unwrap().perm, min_cost_assignment(&shifted).unwrap().perm);
    }
}
