//! Role-based index assignment.
//!
//! Every trajectory in an unordered set is scored against every latent role by
//! its summed expected log-likelihood `l(k, r)`. The cost of giving role `r`
//! to trajectory `k` is `M = M1 * M2` (elementwise) with `M2 = l` and `M1` the
//! likelihood weight. The min-cost perfect matching then fixes which
//! trajectory feeds which policy index.

use serde::{Deserialize, Serialize};

use crate::hmm::{
    expected_log_likelihoods, expected_log_params, viterbi, Observations, VariationalHmm,
};
use crate::{Error, Result};

/// How the likelihood factor `M1` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CostMode {
    /// `M1 = exp(l - max_r l(k, r))`: each trajectory's row rescaled so its
    /// best role has weight one. Stable for long sequences.
    #[default]
    RowRescaled,
    /// `M1 = exp(l)`. Underflows to zero after a few dozen steps.
    Literal,
}

/// Cost matrices indexed `[trajectory][role]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub m1: Vec<Vec<f64>>,
    pub m2: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
}

impl CostMatrix {
    pub fn size(&self) -> usize {
        self.m.len()
    }

    /// `M` transposed to `[role][trajectory]`, the orientation the assignment
    /// is solved in.
    pub fn role_major(&self) -> Vec<Vec<f64>> {
        transpose(&self.m)
    }
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    (0..n).map(|j| (0..n).map(|i| m[i][j]).collect()).collect()
}

/// `l[k][r] = sum_t E_q[ln p(x_{t,k} | z = r)]`.
pub fn log_likelihood_matrix(
    model: &VariationalHmm,
    trajectories: &[Observations],
) -> Result<Vec<Vec<f64>>> {
    if trajectories.len() != model.num_states {
        return Err(Error::DimensionMismatch(format!(
            "{} trajectories for {} latent roles",
            trajectories.len(),
            model.num_states
        )));
    }
    let len = trajectories[0].len();
    if let Some(bad) = trajectories.iter().find(|t| t.len() != len) {
        return Err(Error::LengthMismatch(format!("{} vs {}", bad.len(), len)));
    }
    trajectories
        .iter()
        .map(|obs| {
            let lik = expected_log_likelihoods(model, obs)?;
            Ok((0..model.num_states)
                .map(|r| lik.iter().map(|row| row[r]).sum())
                .collect())
        })
        .collect()
}

pub fn cost_matrix(
    model: &VariationalHmm,
    trajectories: &[Observations],
    mode: CostMode,
) -> Result<CostMatrix> {
    let m2 = log_likelihood_matrix(model, trajectories)?;
    let m1: Vec<Vec<f64>> = m2
        .iter()
        .map(|row| {
            let shift = match mode {
                CostMode::RowRescaled => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                CostMode::Literal => 0.0,
            };
            row.iter().map(|&l| (l - shift).exp()).collect()
        })
        .collect();
    let m = m1
        .iter()
        .zip(&m2)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
        .collect();
    Ok(CostMatrix { m1, m2, m })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `perm[r]` is the trajectory (column) given to role (row) `r`.
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }
}

pub fn total_cost(m: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(r, &c)| m[r][c]).sum()
}

fn check_square(m: &[Vec<f64>]) -> Result<usize> {
    let n = m.len();
    if n == 0 {
        return Err(Error::InvalidCostMatrix("empty matrix".into()));
    }
    if let Some(row) = m.iter().position(|r| r.len() != n) {
        return Err(Error::InvalidCostMatrix(format!(
            "row {row} has {} entries, expected {n}",
            m[row].len()
        )));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCostMatrix("non-finite entry".into()));
    }
    Ok(n)
}

/// Kuhn-Munkres with row/column potentials, `O(n^3)`. Returns `row -> column`.
fn hungarian(m: &[Vec<f64>]) -> Vec<usize> {
    let n = m.len();
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = m[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

fn optimum_of(m: &[Vec<f64>]) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    total_cost(m, &hungarian(m))
}

/// Exact min-cost perfect matching of rows to columns. Among optimal matchings
/// the lexicographically smallest `perm` is returned.
pub fn min_cost_assignment(m: &[Vec<f64>]) -> Result<Assignment> {
    let n = check_square(m)?;
    let best = optimum_of(m);
    // Different summation orders of the same entries agree to within a few
    // ulps of the largest magnitude; anything beyond that is a real gap.
    let scale = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    let slack = 8.0 * f64::EPSILON * scale * n as f64;

    // Fix rows one at a time to the smallest column that still admits an
    // optimal completion.
    let mut perm = Vec::with_capacity(n);
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut fixed = 0.0;
    for row in 0..n {
        let mut chosen = None;
        for (pos, &col) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != col).collect();
            let sub: Vec<Vec<f64>> = (row + 1..n)
                .map(|r| rest_cols.iter().map(|&c| m[r][c]).collect())
                .collect();
            if fixed + m[row][col] + optimum_of(&sub) <= best + slack {
                chosen = Some(pos);
                break;
            }
        }
        // The Hungarian optimum itself is always a valid completion, so a
        // column is found unless rounding defeats the slack.
        let pos = chosen.unwrap_or(0);
        let col = free_cols.remove(pos);
        fixed += m[row][col];
        perm.push(col);
    }
    let total = total_cost(m, &perm);
    Ok(Assignment {
        perm,
        total_cost: total,
    })
}

/// Result of indexing one trajectory set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indexing {
    pub cost: CostMatrix,
    pub assignment: Assignment,
    pub entropy: f64,
}

impl Indexing {
    /// `order[k]`: input trajectory that becomes ordered trajectory `k`.
    pub fn order(&self) -> &[usize] {
        &self.assignment.perm
    }
}

/// Solves the indexing problem for one unordered set.
pub fn index_trajectories(
    model: &VariationalHmm,
    trajectories: &[Observations],
    mode: CostMode,
) -> Result<Indexing> {
    let cost = cost_matrix(model, trajectories, mode)?;
    let assignment = min_cost_assignment(&cost.role_major())?;
    let entropy = entropy_estimate(&cost, &assignment);
    Ok(Indexing {
        cost,
        assignment,
        entropy,
    })
}

/// Reorders `items` so that output `k` is `items[order[k]]`.
pub fn apply_order<T: Clone>(items: &[T], order: &[usize]) -> Vec<T> {
    order.iter().map(|&i| items[i].clone()).collect()
}

/// Orders a trajectory set by latent role: `A_k = U_{perm(k)}`.
pub fn assign<T: Clone>(
    items: &[T],
    observations: &[Observations],
    model: &VariationalHmm,
    mode: CostMode,
) -> Result<(Vec<T>, Indexing)> {
    if items.len() != observations.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} items but {} observation sequences",
            items.len(),
            observations.len()
        )));
    }
    let indexing = index_trajectories(model, observations, mode)?;
    Ok((apply_order(items, indexing.order()), indexing))
}

/// `H ~= -(1/K) sum_r M(r, perm(r))`, assuming equiprobable roles.
pub fn entropy_estimate(cost: &CostMatrix, assignment: &Assignment) -> f64 {
    let k = cost.size() as f64;
    let total: f64 = assignment
        .perm
        .iter()
        .enumerate()
        .map(|(r, &t)| cost.m[t][r])
        .sum();
    -total / k
}

/// Most likely per-step role sequence of one trajectory.
pub fn role_features(model: &VariationalHmm, trajectory: &Observations) -> Result<Vec<usize>> {
    let (log_init, log_trans) = expected_log_params(model);
    let log_lik = expected_log_likelihoods(model, trajectory)?;
    viterbi(&log_init, &log_trans, &log_lik)
}

/// One line of the optional assignment audit log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub round: usize,
    pub minibatch: usize,
    pub set: usize,
    pub cost: Vec<Vec<f64>>,
    pub perm: Vec<usize>,
    pub entropy: f64,
}
