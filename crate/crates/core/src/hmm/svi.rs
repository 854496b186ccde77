//! Expected sufficient statistics, natural-gradient global updates and the
//! evidence lower bound.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::local_update;
use super::{EmissionStats, LocalPosterior, Observations, VariationalHmm, DOMAIN_FLOOR};
use crate::special::dirichlet_kl;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedStats {
    pub init: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub emission: EmissionStats,
}

impl ExpectedStats {
    pub fn zeros(model: &VariationalHmm) -> Self {
        let k = model.num_states;
        ExpectedStats {
            init: vec![0.0; k],
            trans: vec![vec![0.0; k]; k],
            emission: EmissionStats::zeros_like(&model.emission),
        }
    }

    pub fn add_assign(&mut self, other: &ExpectedStats) {
        for (a, b) in self.init.iter_mut().zip(&other.init) {
            *a += b;
        }
        for (ra, rb) in self.trans.iter_mut().zip(&other.trans) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        self.emission.add_assign(&other.emission);
    }

    /// New state `i` takes old state `perm[i]`'s statistics.
    pub fn permuted(&self, perm: &[usize]) -> ExpectedStats {
        ExpectedStats {
            init: perm.iter().map(|&p| self.init[p]).collect(),
            trans: perm
                .iter()
                .map(|&i| perm.iter().map(|&j| self.trans[i][j]).collect())
                .collect(),
            emission: self.emission.permuted(perm),
        }
    }
}

/// Statistics of one sequence under its local posterior.
pub fn expected_stats(
    model: &VariationalHmm,
    post: &LocalPosterior,
    obs: &Observations,
) -> Result<ExpectedStats> {
    if post.gamma.len() != obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "posterior covers {} steps, sequence has {}",
            post.gamma.len(),
            obs.len()
        )));
    }
    let mut stats = ExpectedStats::zeros(model);
    stats.init.clone_from(&post.gamma[0]);
    for slice in &post.xi {
        for (row, xr) in stats.trans.iter_mut().zip(slice) {
            for (a, b) in row.iter_mut().zip(xr) {
                *a += b;
            }
        }
    }
    stats.emission.accumulate(&post.gamma, obs)?;
    Ok(stats)
}

/// `eta~ <- (1 - rho) eta~ + rho (eta_prior + scale * t^)` on every block.
///
/// `scale` is the ratio of dataset size to minibatch size. Coordinates that
/// would leave the positive domain are floored at [`DOMAIN_FLOOR`] and counted
/// in `clamp_count`.
pub fn global_update(
    model: &VariationalHmm,
    stats: &ExpectedStats,
    rho: f64,
    scale: f64,
) -> Result<VariationalHmm> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::param("rho", format!("{rho} outside (0, 1]")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param("scale", format!("{scale} must be positive")));
    }
    let k = model.num_states;
    if stats.init.len() != k || stats.trans.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "statistics for {} states, model has {k}",
            stats.init.len()
        )));
    }
    let mut next = model.clone();
    let mut clamped = 0u64;
    let mut step = |current: &mut f64, prior: f64, t: f64| {
        *current = (1.0 - rho) * *current + rho * (prior + scale * t);
        if !(*current >= DOMAIN_FLOOR) {
            *current = DOMAIN_FLOOR;
            clamped += 1;
        }
    };
    for i in 0..k {
        step(&mut next.init[i], model.init_prior[i], stats.init[i]);
        for j in 0..k {
            step(
                &mut next.trans[i][j],
                model.trans_prior[i][j],
                stats.trans[i][j],
            );
        }
    }
    clamped += next.emission.update(&stats.emission, rho, scale)?;
    if clamped > 0 {
        log::debug!("global update floored {clamped} coordinates");
    }
    next.clamp_count += clamped;
    Ok(next)
}

/// `KL(q(theta) || p(theta))` over all global factors.
pub fn global_kl(model: &VariationalHmm) -> f64 {
    dirichlet_kl(&model.init, &model.init_prior)
        + model
            .trans
            .iter()
            .zip(&model.trans_prior)
            .map(|(q, p)| dirichlet_kl(q, p))
            .sum::<f64>()
        + model.emission.kl()
}

/// Evidence lower bound with each `q(z)` at its optimum for the current
/// `q(theta)`: the sum of per-sequence log normalizers minus the global KL.
pub fn elbo_proxy(model: &VariationalHmm, sequences: &[Observations]) -> Result<f64> {
    let log_zs = sequences
        .par_iter()
        .map(|obs| local_update(model, obs).map(|p| p.log_z))
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_zs.iter().sum::<f64>() - global_kl(model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviConfig {
    /// Forgetting rate, in (0.5, 1].
    pub kappa: f64,
    /// Delay, >= 0.
    pub tau: f64,
    /// Sequences per minibatch.
    pub minibatch: usize,
}

impl Default for SviConfig {
    fn default() -> Self {
        SviConfig {
            kappa: 0.6,
            tau: 1.0,
            minibatch: 8,
        }
    }
}

impl SviConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(Error::param(
                "kappa",
                format!("{} outside (0.5, 1]", self.kappa),
            ));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::param(
                "tau",
                format!("{} must be non-negative", self.tau),
            ));
        }
        if self.minibatch == 0 {
            return Err(Error::param("minibatch", "must be at least 1"));
        }
        Ok(())
    }
}

/// `rho_n = (n + tau)^(-kappa)` for steps `n = 1, 2, ...`.
pub fn step_size(n: usize, config: &SviConfig) -> f64 {
    (n as f64 + config.tau).powf(-config.kappa).min(1.0)
}

/// Local updates over `batch` (in parallel), then one global step. Returns the
/// updated model and the summed log normalizers of the batch.
pub fn svi_step(
    model: &VariationalHmm,
    batch: &[Observations],
    dataset_size: usize,
    n: usize,
    config: &SviConfig,
) -> Result<(VariationalHmm, f64)> {
    if batch.is_empty() {
        return Err(Error::param("batch", "minibatch is empty"));
    }
    let per_seq = batch
        .par_iter()
        .map(|obs| {
            let post = local_update(model, obs)?;
            let stats = expected_stats(model, &post, obs)?;
            Ok((stats, post.log_z))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ExpectedStats::zeros(model);
    let mut log_z = 0.0;
    for (stats, lz) in &per_seq {
        total.add_assign(stats);
        log_z += lz;
    }
    let scale = dataset_size.max(batch.len()) as f64 / batch.len() as f64;
    let next = global_update(model, &total, step_size(n, config), scale)?;
    Ok((next, log_z))
}

/// Minibatch SVI for `epochs` passes over `sequences`. `step` is the running
/// step counter and is advanced in place.
pub fn fit_svi(
    mut model: VariationalHmm,
    sequences: &[Observations],
    epochs: usize,
    config: &SviConfig,
    step: &mut usize,
    rng: &mut impl rand::Rng,
) -> Result<VariationalHmm> {
    config.validate()?;
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let batch: Vec<Observations> = chunk.iter().map(|&i| sequences[i].clone()).collect();
            *step += 1;
            model = svi_step(&model, &batch, sequences.len(), *step, config)?.0;
        }
    }
    Ok(model)
}

/// Full-batch coordinate ascent (`rho = 1`, unit scale). Returns the model and
/// the ELBO before the first and after every iteration.
pub fn fit_full_batch(
    mut model: VariationalHmm,
    sequences: &[Observations],
    iterations: usize,
) -> Result<(VariationalHmm, Vec<f64>)> {
    let mut trace = vec![elbo_proxy(&model, sequences)?];
    for _ in 0..iterations {
        let per_seq = sequences
            .par_iter()
            .map(|obs| expected_stats(&model, &local_update(&model, obs)?, obs))
            .collect::<Result<Vec<_>>>()?;
        let mut total = ExpectedStats::zeros(&model);
        for s in &per_seq {
            total.add_assign(s);
        }
        model = global_update(&model, &total, 1.0, 1.0)?;
        trace.push(elbo_proxy(&model, sequences)?);
    }
    Ok((model, trace))
}

fn summary(obs: &Observations, vocab_or_dims: usize) -> Vec<f64> {
    let n = obs.len().max(1) as f64;
    match obs {
        Observations::Symbols(xs) => {
            let mut h = vec![0.0; vocab_or_dims];
            for &x in xs {
                if x < vocab_or_dims {
                    h[x] += 1.0 / n;
                }
            }
            h
        }
        Observations::Vectors(xs) => {
            let mut m = vec![0.0; vocab_or_dims];
            for x in xs {
                for (a, v) in m.iter_mut().zip(x) {
                    *a += v / n;
                }
            }
            m
        }
    }
}

/// Among candidate sequence sets, the one whose members are most mutually
/// distinct (largest minimum pairwise distance between per-sequence moment
/// summaries). Its members make good per-state seeds.
pub fn choose_seed_set(model: &VariationalHmm, candidates: &[Vec<Observations>]) -> Option<usize> {
    let width = match &model.emission {
        super::Emission::Categorical { vocab, .. } => *vocab,
        super::Emission::DiagGaussian { dims, .. } => *dims,
    };
    let score = |set: &Vec<Observations>| -> f64 {
        let sums: Vec<Vec<f64>> = set.iter().map(|o| summary(o, width)).collect();
        let mut best = f64::INFINITY;
        for i in 0..sums.len() {
            for j in i + 1..sums.len() {
                let d: f64 = sums[i]
                    .iter()
                    .zip(&sums[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                best = best.min(d);
            }
        }
        best
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, set) in candidates.iter().enumerate() {
        let s = score(set);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::HmmPrior;

    #[test]
    fn convex_combination_arithmetic() {
        let mut model = VariationalHmm::from_prior(1, &HmmPrior::categorical(1)).unwrap();
        model.trans[0][0] = 3.0;
        let mut stats = ExpectedStats::zeros(&model);
        stats.trans[0][0] = 4.0;
        let next = global_update(&model, &stats, 0.5, 1.0).unwrap();
        assert_eq!(next.trans[0][0], 4.0);
    }

    #[test]
    fn rejects_bad_step_sizes() {
        let model = VariationalHmm::from_prior(2, &HmmPrior::categorical(3)).unwrap();
        let stats = ExpectedStats::zeros(&model);
        assert!(global_update(&model, &stats, 0.0, 1.0).is_err());
        assert!(global_update(&model, &stats, 1.5, 1.0).is_err());
        assert!(global_update(&model, &stats, 0.5, 0.0).is_err());
    }

    #[test]
    fn negative_statistics_are_floored_and_counted() {
        let model = VariationalHmm::from_prior(2, &HmmPrior::categorical(3)).unwrap();
        let mut stats = ExpectedStats::zeros(&model);
        stats.trans[0][1] = -10.0;
        let next = global_update(&model, &stats, 1.0, 1.0).unwrap();
        assert_eq!(next.trans[0][1], DOMAIN_FLOOR);
        assert_eq!(next.clamp_count, 1);
    }

    #[test]
    fn step_size_schedule() {
        let cfg = SviConfig::default();
        assert!((step_size(1, &cfg) - 2f64.powf(-0.6)).abs() < 1e-15);
        assert!(step_size(10, &cfg) < step_size(9, &cfg));
        assert!(SviConfig { kappa: 0.5, ..cfg }.validate().is_err());
    }

    #[test]
    fn degenerate_path_counts() {
        let model = VariationalHmm::from_prior(2, &HmmPrior::categorical(2)).unwrap();
        let post = LocalPosterior {
            gamma: vec![vec![1.0, 0.0]; 4],
            xi: vec![vec![vec![1.0, 0.0], vec![0.0, 0.0]]; 3],
            log_z: 0.0,
        };
        let stats =
            expected_stats(&model, &post, &Observations::Symbols(vec![0, 1, 1, 0])).unwrap();
        assert_eq!(stats.trans, vec![vec![3.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(stats.init, vec![1.0, 0.0]);
    }
}
