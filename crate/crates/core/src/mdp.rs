//! Per-role expert oracles.
//!
//! Each predator role is planned as a single-agent MDP over the predator's
//! toroidal offset from the prey. Reward 1 is received on arriving at the
//! role's target offset. The transition model mirrors one simulator step of
//! the predator and the prey alone (random move order, cancelled moves into
//! occupied cells, prey never stepping onto the predator). Other predators are
//! ignored; collisions among them are the simulator's business.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pursuit::{wrap_coord, wrap_delta, Move, WorldState, CAPTURE_OFFSETS};
use crate::{Error, Result};

pub const DEFAULT_DISCOUNT: f64 = 0.95;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub role_id: usize,
    /// Target offset, predator minus prey.
    pub target_offset: (i32, i32),
}

impl RoleSpec {
    /// The four surround roles, in the order N, S, E, W of the prey.
    pub fn surround() -> Vec<RoleSpec> {
        CAPTURE_OFFSETS
            .iter()
            .enumerate()
            .map(|(role_id, &target_offset)| RoleSpec {
                role_id,
                target_offset,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreyModel {
    UniformRandom,
    Stationary,
}

/// Dense relative-offset MDP. State `s` encodes the wrapped offset
/// `(dx, dy)`; see [`RelativeMdp::state_of`].
#[derive(Debug, Clone)]
pub struct RelativeMdp {
    pub role: RoleSpec,
    pub grid_side: i32,
    pub discount: f64,
    /// `transitions[s][a]` lists `(next_state, probability)` with merged support.
    pub transitions: Vec<[Vec<(usize, f64)>; 5]>,
    pub reward: Vec<f64>,
}

impl RelativeMdp {
    pub fn num_states(&self) -> usize {
        self.reward.len()
    }

    pub fn state_of(&self, offset: (i32, i32)) -> usize {
        state_index(offset, self.grid_side)
    }

    pub fn offset_of(&self, s: usize) -> (i32, i32) {
        let g = self.grid_side;
        let lo = -(g / 2);
        ((s as i32) / g + lo, (s as i32) % g + lo)
    }
}

fn state_index(offset: (i32, i32), g: i32) -> usize {
    let lo = -(g / 2);
    let dx = wrap_coord(offset.0, g) - lo;
    let dy = wrap_coord(offset.1, g) - lo;
    (dx * g + dy) as usize
}

pub fn build_role_mdp(
    role: RoleSpec,
    grid_side: i32,
    discount: f64,
    prey: PreyModel,
) -> Result<RelativeMdp> {
    // zero discount is accepted as the myopic limit
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::InvalidDiscount(discount));
    }
    if grid_side < 3 {
        return Err(Error::param("grid_side", format!("{grid_side} < 3")));
    }
    let g = grid_side;
    let n = (g * g) as usize;
    let mut reward = vec![0.0; n];
    reward[state_index(role.target_offset, g)] = 1.0;

    let lo = -(g / 2);
    let transitions = (0..n)
        .map(|s| {
            let offset = ((s as i32) / g + lo, (s as i32) % g + lo);
            Move::ALL.map(|a| {
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(10);
                for (next, p) in relative_outcomes(offset, a.delta(), prey, g) {
                    let next = state_index(next, g);
                    match row.iter_mut().find(|(s2, _)| *s2 == next) {
                        Some(entry) => entry.1 += p,
                        None => row.push((next, p)),
                    }
                }
                row
            })
        })
        .collect();

    Ok(RelativeMdp {
        role,
        grid_side,
        discount,
        transitions,
        reward,
    })
}

/// Next offsets after one simulator step of a lone predator at `offset` taking
/// `pred` while the prey follows `prey`. Mirrors the simulator: the prey only
/// picks moves into free cells, the two agents move in random order, and a
/// move into an occupied cell is cancelled.
fn relative_outcomes(
    offset: (i32, i32),
    pred: (i32, i32),
    prey: PreyModel,
    g: i32,
) -> Vec<((i32, i32), f64)> {
    let same = |a: (i32, i32), b: (i32, i32)| {
        wrap_coord(a.0 - b.0, g) == 0 && wrap_coord(a.1 - b.1, g) == 0
    };
    let prey_moves: Vec<(i32, i32)> = match prey {
        PreyModel::UniformRandom => Move::ALL
            .iter()
            .map(|m| m.delta())
            .filter(|&e| e == (0, 0) || !same(e, offset))
            .collect(),
        PreyModel::Stationary => vec![(0, 0)],
    };
    let p_move = 1.0 / prey_moves.len() as f64;
    let target = (offset.0 + pred.0, offset.1 + pred.1);
    let mut out = Vec::with_capacity(2 * prey_moves.len());
    for &e in &prey_moves {
        // predator first
        let p1 = if same(target, (0, 0)) { offset } else { target };
        let q1 = if same(e, p1) { (0, 0) } else { e };
        out.push(((p1.0 - q1.0, p1.1 - q1.1), 0.5 * p_move));
        // prey first
        let q1 = if same(e, offset) { (0, 0) } else { e };
        let p1 = if same(target, q1) { offset } else { target };
        out.push(((p1.0 - q1.0, p1.1 - q1.1), 0.5 * p_move));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub role: RoleSpec,
    pub grid_side: i32,
    pub discount: f64,
    /// `q[s][a]` with actions in [`Move::ALL`] order.
    pub q: Vec<[f64; 5]>,
    pub v: Vec<f64>,
    /// Sup-norm change of `V` per sweep.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl ValueTable {
    pub fn residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }

    pub fn q_at(&self, offset: (i32, i32)) -> &[f64; 5] {
        &self.q[state_index(offset, self.grid_side)]
    }

    pub fn value_at(&self, offset: (i32, i32)) -> f64 {
        self.v[state_index(offset, self.grid_side)]
    }

    pub fn to_record(&self) -> ValueTableRecord {
        let g = self.grid_side;
        let lo = -(g / 2);
        ValueTableRecord {
            role_id: self.role.role_id,
            target_offset: [self.role.target_offset.0, self.role.target_offset.1],
            grid_side: g,
            discount: self.discount,
            converged: self.converged,
            residual: self.residual(),
            entries: self
                .q
                .iter()
                .enumerate()
                .map(|(s, q)| QEntry {
                    offset: [(s as i32) / g + lo, (s as i32) % g + lo],
                    q: *q,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QEntry {
    pub offset: [i32; 2],
    pub q: [f64; 5],
}

/// Inspection dump of a value table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueTableRecord {
    pub role_id: usize,
    pub target_offset: [i32; 2],
    pub grid_side: i32,
    pub discount: f64,
    pub converged: bool,
    pub residual: f64,
    pub entries: Vec<QEntry>,
}

fn backup(mdp: &RelativeMdp, v: &[f64], s: usize) -> [f64; 5] {
    let gamma = mdp.discount;
    std::array::from_fn(|a| {
        mdp.transitions[s][a]
            .iter()
            .map(|&(s2, p)| p * (mdp.reward[s2] + gamma * v[s2]))
            .sum()
    })
}

/// Synchronous value iteration. Stops once the sup-norm change of `V` drops to
/// `tol`; otherwise returns after `max_iters` sweeps with `converged == false`.
pub fn value_iteration(mdp: &RelativeMdp, tol: f64, max_iters: usize) -> Result<ValueTable> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", format!("{tol} must be positive")));
    }
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    let mut q = vec![[0.0; 5]; n];
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters.max(1) {
        let mut residual: f64 = 0.0;
        let mut next_v = vec![0.0; n];
        for s in 0..n {
            q[s] = backup(mdp, &v, s);
            next_v[s] = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((next_v[s] - v[s]).abs());
        }
        v = next_v;
        residuals.push(residual);
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "value iteration for role {} stopped after {} sweeps, residual {:.3e}",
            mdp.role.role_id,
            residuals.len(),
            residuals.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(ValueTable {
        role: mdp.role,
        grid_side: mdp.grid_side,
        discount: mdp.discount,
        q,
        v,
        residuals,
        converged,
    })
}

/// Greedy move for `predator` under `table`. Ties go to the first move in
/// [`Move::ALL`] order unless a tie-break generator is supplied; a tied move
/// straight into the prey's cell yields to Stay.
pub fn expert_action(
    table: &ValueTable,
    state: &WorldState,
    predator: usize,
    tie_rng: Option<&mut dyn rand::RngCore>,
) -> Move {
    let offset = wrap_delta(state.prey, state.predators[predator], state.grid_side);
    let q = table.q_at(offset);
    let mv = greedy_move(q, tie_rng);
    // A step into the prey's cell is always cancelled; when Stay is just as
    // good, prefer it over an attempt that cannot succeed.
    let target = mv.apply(state.predators[predator], state.grid_side);
    if mv != Move::Stay
        && target == state.prey
        && within_slack(q[Move::Stay.index()], q[mv.index()])
    {
        return Move::Stay;
    }
    mv
}

fn within_slack(candidate: f64, best: f64) -> bool {
    candidate >= best - 1e-12 * best.abs().max(1.0)
}

pub(crate) fn greedy_move(q: &[f64; 5], tie_rng: Option<&mut dyn rand::RngCore>) -> Move {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..5).filter(|&a| within_slack(q[a], best)).collect();
    let pick = match tie_rng {
        Some(rng) if ties.len() > 1 => {
            use rand::Rng;
            ties[rng.gen_range(0..ties.len())]
        }
        _ => ties[0],
    };
    Move::ALL[pick]
}

/// One solved value table per role.
#[derive(Debug, Clone)]
pub struct ExpertTeam {
    pub tables: Vec<ValueTable>,
}

impl ExpertTeam {
    pub fn solve(
        roles: &[RoleSpec],
        grid_side: i32,
        discount: f64,
        prey: PreyModel,
    ) -> Result<Self> {
        let tables = roles
            .par_iter()
            .map(|&role| {
                let mdp = build_role_mdp(role, grid_side, discount, prey)?;
                value_iteration(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITERS)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExpertTeam { tables })
    }

    /// The standard four-role team planned against a uniformly random prey.
    pub fn surround(grid_side: i32, discount: f64) -> Result<Self> {
        Self::solve(
            &RoleSpec::surround(),
            grid_side,
            discount,
            PreyModel::UniformRandom,
        )
    }

    pub fn num_roles(&self) -> usize {
        self.tables.len()
    }

    pub fn grid_side(&self) -> i32 {
        self.tables[0].grid_side
    }

    /// Move of the expert for `role` if it controlled `predator`.
    pub fn action(&self, role: usize, state: &WorldState, predator: usize) -> Move {
        expert_action(&self.tables[role], state, predator, None)
    }

    /// Joint move with predator `k` playing `roles[k]`.
    pub fn joint_action(&self, state: &WorldState, roles: &[usize]) -> Vec<Move> {
        roles
            .iter()
            .enumerate()
            .map(|(k, &r)| self.action(r, state, k))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pursuit::GridPos;

    fn role(target: (i32, i32)) -> RoleSpec {
        RoleSpec {
            role_id: 0,
            target_offset: target,
        }
    }

    #[test]
    fn rejects_bad_discount() {
        assert!(matches!(
            build_role_mdp(role((0, 1)), 5, 1.0, PreyModel::Stationary),
            Err(Error::InvalidDiscount(_))
        ));
        assert!(build_role_mdp(role((0, 1)), 5, -0.1, PreyModel::Stationary).is_err());
    }

    #[test]
    fn stationary_transition_is_deterministic() {
        let mdp = build_role_mdp(role((0, 1)), 5, 0.9, PreyModel::Stationary).unwrap();
        let s = mdp.state_of((0, -2));
        let row = &mdp.transitions[s][Move::North.index()];
        assert_eq!(row, &vec![(mdp.state_of((0, -1)), 1.0)]);
    }

    #[test]
    fn uniform_prey_spreads_over_five_offsets() {
        let mdp = build_role_mdp(role((0, 1)), 7, 0.9, PreyModel::UniformRandom).unwrap();
        let s = mdp.state_of((2, 2));
        for a in 0..5 {
            let row = &mdp.transitions[s][a];
            assert_eq!(row.len(), 5);
            assert!(row.iter().all(|&(_, p)| (p - 0.2).abs() < 1e-15));
        }
        for rows in &mdp.transitions {
            for row in rows {
                let total: f64 = row.iter().map(|(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reward_on_target_only() {
        let mdp = build_role_mdp(role((1, 0)), 5, 0.9, PreyModel::UniformRandom).unwrap();
        assert_eq!(mdp.reward.iter().filter(|&&r| r == 1.0).count(), 1);
        assert_eq!(mdp.reward[mdp.state_of((1, 0))], 1.0);
        assert_eq!(mdp.reward.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn offset_indexing_round_trips() {
        let mdp = build_role_mdp(role((0, 1)), 6, 0.9, PreyModel::Stationary).unwrap();
        for s in 0..mdp.num_states() {
            assert_eq!(mdp.state_of(mdp.offset_of(s)), s);
        }
    }

    #[test]
    fn zero_discount_is_myopic() {
        let target = (0, 1);
        let mdp = build_role_mdp(role(target), 5, 0.0, PreyModel::Stationary).unwrap();
        let table = value_iteration(&mdp, 1e-9, 100).unwrap();
        for s in 0..mdp.num_states() {
            let (dx, dy) = mdp.offset_of(s);
            let dist = (dx - target.0).abs() + (dy - target.1).abs();
            let expected = if dist <= 1 { 1.0 } else { 0.0 };
            assert_eq!(table.v[s], expected, "offset {:?}", (dx, dy));
        }
    }

    #[test]
    fn residuals_contract() {
        let mdp = build_role_mdp(role((0, 1)), 7, 0.95, PreyModel::UniformRandom).unwrap();
        let table = value_iteration(&mdp, 1e-8, 5000).unwrap();
        assert!(table.converged);
        for w in table.residuals.windows(2).skip(1) {
            assert!(w[1] <= w[0] + 1e-15, "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn non_convergence_is_flagged() {
        let mdp = build_role_mdp(role((0, 1)), 7, 0.95, PreyModel::UniformRandom).unwrap();
        let table = value_iteration(&mdp, 1e-12, 3).unwrap();
        assert!(!table.converged);
        assert_eq!(table.residuals.len(), 3);
        assert!(table.residual() > 1e-12);
    }

    #[test]
    fn bellman_consistency_and_bounds() {
        let tol = 1e-6;
        let mdp = build_role_mdp(role((-1, 0)), 8, 0.95, PreyModel::UniformRandom).unwrap();
        let table = value_iteration(&mdp, tol, 10_000).unwrap();
        for s in 0..mdp.num_states() {
            let max_q = table.q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(table.v[s], max_q);
            assert!(table.v[s] >= 0.0 && table.v[s] <= 1.0 / (1.0 - 0.95));
            for a in 0..5 {
                let target: f64 = mdp.transitions[s][a]
                    .iter()
                    .map(|&(s2, p)| p * (mdp.reward[s2] + 0.95 * table.v[s2]))
                    .sum();
                assert!((table.q[s][a] - target).abs() <= 10.0 * tol);
            }
        }
    }

    #[test]
    fn stays_on_target_and_steps_toward_it() {
        let target = (0, 1);
        let mdp = build_role_mdp(role(target), 5, 0.9, PreyModel::Stationary).unwrap();
        let table = value_iteration(&mdp, 1e-10, 10_000).unwrap();
        let q = table.q_at(target);
        assert!((0..5).all(|a| q[Move::Stay.index()] >= q[a]));

        let prey = GridPos::new(2, 2);
        let on_target = WorldState::new(vec![prey.offset(0, 1, 5)], prey, 5).unwrap();
        assert_eq!(expert_action(&table, &on_target, 0, None), Move::Stay);
        let west_of_target = WorldState::new(vec![prey.offset(-1, 1, 5)], prey, 5).unwrap();
        assert_eq!(expert_action(&table, &west_of_target, 0, None), Move::East);
    }

    #[test]
    fn argmax_ignores_positive_scaling() {
        let mdp = build_role_mdp(role((0, -1)), 6, 0.95, PreyModel::UniformRandom).unwrap();
        let table = value_iteration(&mdp, 1e-8, 10_000).unwrap();
        for q in &table.q {
            let scaled = q.map(|x| x * 3.7);
            assert_eq!(greedy_move(q, None), greedy_move(&scaled, None));
        }
    }

    #[test]
    fn ties_follow_move_order() {
        assert_eq!(greedy_move(&[1.0, 1.0, 1.0, 1.0, 1.0], None), Move::North);
        assert_eq!(greedy_move(&[0.0, 2.0, 0.0, 2.0, 1.0], None), Move::South);
    }
}
