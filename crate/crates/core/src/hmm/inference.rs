//! Local inference: forward-backward and Viterbi in log space.

use super::{Observations, VariationalHmm};
use crate::special::{dirichlet_expected_log, log_sum_exp};
use crate::{Error, Result};

/// Smoothed posterior of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPosterior {
    /// `gamma[t][k] = q(z_t = k)`.
    pub gamma: Vec<Vec<f64>>,
    /// `xi[t][j][k] = q(z_t = j, z_{t+1} = k)`, `T - 1` slices.
    pub xi: Vec<Vec<Vec<f64>>>,
    pub log_z: f64,
}

/// Expected log initial distribution and transition matrix under the
/// Dirichlet factors: `psi(alpha_jk) - psi(sum_k alpha_jk)`.
pub fn expected_log_params(model: &VariationalHmm) -> (Vec<f64>, Vec<Vec<f64>>) {
    let init = dirichlet_expected_log(&model.init);
    let trans = model
        .trans
        .iter()
        .map(|row| dirichlet_expected_log(row))
        .collect();
    (init, trans)
}

/// `T x K` expected log emission likelihoods.
pub fn expected_log_likelihoods(
    model: &VariationalHmm,
    obs: &Observations,
) -> Result<Vec<Vec<f64>>> {
    model.emission.expected_log_likelihoods(obs)
}

fn check_dims(log_init: &[f64], log_trans: &[Vec<f64>], log_lik: &[Vec<f64>]) -> Result<usize> {
    let k = log_init.len();
    if k == 0 || log_trans.len() != k || log_trans.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch(format!(
            "transition matrix is not {k}x{k}"
        )));
    }
    if log_lik.is_empty() {
        return Err(Error::DimensionMismatch(
            "empty observation sequence".into(),
        ));
    }
    if let Some(t) = log_lik.iter().position(|r| r.len() != k) {
        return Err(Error::DimensionMismatch(format!(
            "likelihood row {t} has {} states, expected {k}",
            log_lik[t].len()
        )));
    }
    if let Some(t) = log_lik
        .iter()
        .position(|r| r.iter().all(|&v| v == f64::NEG_INFINITY))
    {
        return Err(Error::ImpossibleObservation(t));
    }
    Ok(k)
}

/// Forward-backward on `(log p0, log P, log L)`, entirely in log space.
pub fn forward_backward(
    log_init: &[f64],
    log_trans: &[Vec<f64>],
    log_lik: &[Vec<f64>],
) -> Result<LocalPosterior> {
    let k = check_dims(log_init, log_trans, log_lik)?;
    let t_len = log_lik.len();

    let mut fwd = vec![vec![0.0; k]; t_len];
    for i in 0..k {
        fwd[0][i] = log_init[i] + log_lik[0][i];
    }
    let mut terms = vec![0.0; k];
    for t in 1..t_len {
        for i in 0..k {
            for j in 0..k {
                terms[j] = fwd[t - 1][j] + log_trans[j][i];
            }
            fwd[t][i] = log_sum_exp(&terms) + log_lik[t][i];
        }
    }
    let log_z = log_sum_exp(&fwd[t_len - 1]);
    if log_z == f64::NEG_INFINITY {
        let t = fwd
            .iter()
            .position(|row| row.iter().all(|&v| v == f64::NEG_INFINITY))
            .unwrap_or(0);
        return Err(Error::ImpossibleObservation(t));
    }
    if !log_z.is_finite() {
        return Err(Error::DimensionMismatch(format!(
            "non-finite log normalizer {log_z}"
        )));
    }

    let mut bwd = vec![vec![0.0; k]; t_len];
    for t in (0..t_len - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                terms[j] = log_trans[i][j] + log_lik[t + 1][j] + bwd[t + 1][j];
            }
            bwd[t][i] = log_sum_exp(&terms);
        }
    }

    let gamma = (0..t_len)
        .map(|t| normalized((0..k).map(|i| fwd[t][i] + bwd[t][i])))
        .collect();
    let xi = (0..t_len.saturating_sub(1))
        .map(|t| {
            let flat: Vec<f64> = (0..k * k)
                .map(|ij| {
                    let (i, j) = (ij / k, ij % k);
                    fwd[t][i] + log_trans[i][j] + log_lik[t + 1][j] + bwd[t + 1][j]
                })
                .collect();
            let flat = normalized(flat.into_iter());
            flat.chunks(k).map(<[f64]>::to_vec).collect()
        })
        .collect();

    Ok(LocalPosterior { gamma, xi, log_z })
}

/// Exponentiates log weights and renormalizes them to sum to one.
fn normalized(logs: impl Iterator<Item = f64>) -> Vec<f64> {
    let logs: Vec<f64> = logs.collect();
    let norm = log_sum_exp(&logs);
    let mut probs: Vec<f64> = logs.iter().map(|&l| (l - norm).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    probs
}

/// Most likely state path under the same scores. On ties the lower state index
/// wins, both for predecessors and for the final state.
pub fn viterbi(
    log_init: &[f64],
    log_trans: &[Vec<f64>],
    log_lik: &[Vec<f64>],
) -> Result<Vec<usize>> {
    let k = check_dims(log_init, log_trans, log_lik)?;
    let t_len = log_lik.len();
    let mut score: Vec<f64> = (0..k).map(|i| log_init[i] + log_lik[0][i]).collect();
    let mut back = vec![vec![0usize; k]; t_len];
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; k];
        for j in 0..k {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, &s) in score.iter().enumerate() {
                let cand = s + log_trans[i][j];
                if cand > best.1 {
                    best = (i, cand);
                }
            }
            back[t][j] = best.0;
            next[j] = best.1 + log_lik[t][j];
        }
        score = next;
    }
    let mut last = 0;
    for (i, &s) in score.iter().enumerate() {
        if s > score[last] {
            last = i;
        }
    }
    if score[last] == f64::NEG_INFINITY {
        return Err(Error::ImpossibleObservation(t_len - 1));
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok(path)
}

/// Forward-backward of one sequence under the model's expected-log parameters.
pub fn local_update(model: &VariationalHmm, obs: &Observations) -> Result<LocalPosterior> {
    let (log_init, log_trans) = expected_log_params(model);
    let log_lik = expected_log_likelihoods(model, obs)?;
    forward_backward(&log_init, &log_trans, &log_lik)
}
