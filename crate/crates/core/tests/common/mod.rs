//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use comil::hmm::Emission;
use comil::hmm::{HmmPrior, Observations, VariationalHmm};
use comil::special::log_sum_exp;
use itertools::Itertools;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

/// Every hidden sequence of length `t` over `k` states.
pub fn all_paths(k: usize, t: usize) -> Vec<Vec<usize>> {
    (0..t).map(|_| 0..k).multi_cartesian_product().collect()
}

/// Joint log score of one path, summed in the same order as the decoder.
pub fn path_score(
    log_init: &[f64],
    log_trans: &[Vec<f64>],
    log_lik: &[Vec<f64>],
    path: &[usize],
) -> f64 {
    let mut s = log_init[path[0]] + log_lik[0][path[0]];
    for t in 1..path.len() {
        s = s + log_trans[path[t - 1]][path[t]] + log_lik[t][path[t]];
    }
    s
}

pub struct BrutePosterior {
    pub gamma: Vec<Vec<f64>>,
    pub xi: Vec<Vec<Vec<f64>>>,
    pub log_z: f64,
}

/// Smoothed marginals by enumerating every hidden sequence.
pub fn brute_posterior(
    log_init: &[f64],
    log_trans: &[Vec<f64>],
    log_lik: &[Vec<f64>],
) -> BrutePosterior {
    let k = log_init.len();
    let t = log_lik.len();
    let paths = all_paths(k, t);
    let scores: Vec<f64> = paths
        .iter()
        .map(|p| path_score(log_init, log_trans, log_lik, p))
        .collect();
    let log_z = log_sum_exp(&scores);
    let mut gamma = vec![vec![0.0; k]; t];
    let mut xi = vec![vec![vec![0.0; k]; k]; t.saturating_sub(1)];
    for (p, s) in paths.iter().zip(&scores) {
        let w = (s - log_z).exp();
        for (i, &z) in p.iter().enumerate() {
            gamma[i][z] += w;
        }
        for i in 0..t.saturating_sub(1) {
            xi[i][p[i]][p[i + 1]] += w;
        }
    }
    BrutePosterior { gamma, xi, log_z }
}

/// Brute-force most likely path. Among exact ties the path that is smallest
/// when compared from the last step backwards wins.
pub fn brute_viterbi(log_init: &[f64], log_trans: &[Vec<f64>], log_lik: &[Vec<f64>]) -> Vec<usize> {
    all_paths(log_init.len(), log_lik.len())
        .into_iter()
        .map(|p| (path_score(log_init, log_trans, log_lik, &p), p))
        .fold(None::<(f64, Vec<usize>)>, |best, (s, p)| match best {
            None => Some((s, p)),
            Some((bs, bp)) => {
                let rev = |v: &Vec<usize>| v.iter().rev().copied().collect::<Vec<_>>();
                if s > bs || (s == bs && rev(&p) < rev(&bp)) {
                    Some((s, p))
                } else {
                    Some((bs, bp))
                }
            }
        })
        .expect("at least one path")
        .1
}

fn random_log_simplex(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| (x / total).ln()).collect()
}

/// Random `(log p0, log P, log L)` with proper distributions and arbitrary
/// likelihood scores.
pub fn random_fixture(
    rng: &mut impl Rng,
    k: usize,
    t: usize,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let log_init = random_log_simplex(rng, k);
    let log_trans = (0..k).map(|_| random_log_simplex(rng, k)).collect();
    let log_lik = (0..t)
        .map(|_| (0..k).map(|_| rng.gen_range(-6.0..0.0)).collect())
        .collect();
    (log_init, log_trans, log_lik)
}

/// Integer-valued scores, so equal-score paths tie exactly.
pub fn tied_fixture(
    rng: &mut impl Rng,
    k: usize,
    t: usize,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut int = |_| -(rng.gen_range(0..2) as f64);
    let log_init = (0..k).map(&mut int).collect();
    let log_trans = (0..k).map(|_| (0..k).map(&mut int).collect()).collect();
    let log_lik = (0..t).map(|_| (0..k).map(&mut int).collect()).collect();
    (log_init, log_trans, log_lik)
}

/// A generative categorical HMM with known parameters.
#[derive(Debug, Clone)]
pub struct KnownHmm {
    pub init: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub emit: Vec<Vec<f64>>,
}

impl KnownHmm {
    /// `k` roles over `2k` symbols; role `r` emits one of its own two symbols
    /// with probability `own` and spreads the rest evenly.
    pub fn well_separated(k: usize, stay: f64, own: f64) -> Self {
        let vocab = 2 * k;
        let trans = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if i == j {
                            stay
                        } else {
                            (1.0 - stay) / (k - 1).max(1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let emit = (0..k)
            .map(|r| {
                (0..vocab)
                    .map(|v| {
                        if v / 2 == r {
                            own / 2.0
                        } else {
                            (1.0 - own) / (vocab - 2) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        KnownHmm {
            init: vec![1.0 / k as f64; k],
            trans,
            emit,
        }
    }

    pub fn num_states(&self) -> usize {
        self.init.len()
    }

    pub fn vocab(&self) -> usize {
        self.emit[0].len()
    }

    /// Hidden path and symbols of one sequence starting in `start`.
    pub fn sample_from(
        &self,
        start: usize,
        len: usize,
        rng: &mut impl Rng,
    ) -> (Vec<usize>, Vec<usize>) {
        let trans: Vec<WeightedIndex<f64>> = self
            .trans
            .iter()
            .map(|r| WeightedIndex::new(r).unwrap())
            .collect();
        let emit: Vec<WeightedIndex<f64>> = self
            .emit
            .iter()
            .map(|r| WeightedIndex::new(r).unwrap())
            .collect();
        let mut z = start;
        let mut states = Vec::with_capacity(len);
        let mut symbols = Vec::with_capacity(len);
        for t in 0..len {
            if t > 0 {
                z = trans[z].sample(rng);
            }
            states.push(z);
            symbols.push(emit[z].sample(rng));
        }
        (states, symbols)
    }

    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
        let start = WeightedIndex::new(&self.init).unwrap().sample(rng);
        self.sample_from(start, len, rng)
    }

    /// Variational posterior concentrated on the known parameters.
    pub fn variational(&self, strength: f64) -> VariationalHmm {
        let k = self.num_states();
        let mut model =
            VariationalHmm::from_prior(k, &HmmPrior::categorical(self.vocab())).unwrap();
        model.init = self.init.iter().map(|p| p * strength).collect();
        model.trans = self
            .trans
            .iter()
            .map(|r| r.iter().map(|p| p * strength).collect())
            .collect();
        if let Emission::Categorical { posterior, .. } = &mut model.emission {
            *posterior = self
                .emit
                .iter()
                .map(|r| r.iter().map(|p| p * strength).collect())
                .collect();
        }
        model.validate().unwrap();
        model
    }
}

pub fn symbols(xs: &[usize]) -> Observations {
    Observations::Symbols(xs.to_vec())
}

/// Every permutation of `0..k`.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    (0..k).permutations(k).collect()
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tolerance {tol})");
}
