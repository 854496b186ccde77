use serde::{Deserialize, Serialize};

use super::{EmissionPrior, Observations, DOMAIN_FLOOR};
use crate::special::{digamma, dirichlet_expected_log, dirichlet_kl, ln_gamma};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Normal-Inverse-Gamma hyperparameters for one dimension:
/// `sigma^2 ~ InvGamma(shape, scale)`, `mu | sigma^2 ~ N(mean, sigma^2 / kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nig {
    pub mean: f64,
    pub kappa: f64,
    pub shape: f64,
    pub scale: f64,
}

impl Default for Nig {
    fn default() -> Self {
        Nig {
            mean: 0.0,
            kappa: 0.01,
            shape: 1.0,
            scale: 1.0,
        }
    }
}

impl Nig {
    pub fn to_natural(self) -> NigNatural {
        NigNatural {
            kappa_mean: self.kappa * self.mean,
            kappa_mean_sq_plus_2scale: self.kappa * self.mean * self.mean + 2.0 * self.scale,
            kappa: self.kappa,
            two_shape: 2.0 * self.shape,
        }
    }
}

/// NIG natural coordinates. Against the sufficient statistics
/// `(x, x^2, 1, 1)` of a Gaussian observation the conjugate update is additive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigNatural {
    pub kappa_mean: f64,
    pub kappa_mean_sq_plus_2scale: f64,
    pub kappa: f64,
    pub two_shape: f64,
}

impl NigNatural {
    pub fn to_nig(self) -> Nig {
        let mean = self.kappa_mean / self.kappa;
        Nig {
            mean,
            kappa: self.kappa,
            shape: self.two_shape / 2.0,
            scale: (self.kappa_mean_sq_plus_2scale - self.kappa_mean * mean) / 2.0,
        }
    }

    fn combine(self, rho: f64, target: NigNatural) -> NigNatural {
        let mix = |a: f64, b: f64| (1.0 - rho) * a + rho * b;
        NigNatural {
            kappa_mean: mix(self.kappa_mean, target.kappa_mean),
            kappa_mean_sq_plus_2scale: mix(
                self.kappa_mean_sq_plus_2scale,
                target.kappa_mean_sq_plus_2scale,
            ),
            kappa: mix(self.kappa, target.kappa),
            two_shape: mix(self.two_shape, target.two_shape),
        }
    }

    /// Floors `kappa`, `shape` and `scale` at the domain floor; returns how many
    /// coordinates were touched.
    fn clamp(&mut self) -> u64 {
        let mut touched = 0;
        if !(self.kappa >= DOMAIN_FLOOR) {
            self.kappa = DOMAIN_FLOOR;
            touched += 1;
        }
        if !(self.two_shape >= 2.0 * DOMAIN_FLOOR) {
            self.two_shape = 2.0 * DOMAIN_FLOOR;
            touched += 1;
        }
        let floor = self.kappa_mean * self.kappa_mean / self.kappa + 2.0 * DOMAIN_FLOOR;
        if !(self.kappa_mean_sq_plus_2scale >= floor) {
            self.kappa_mean_sq_plus_2scale = floor;
            touched += 1;
        }
        touched
    }

    fn is_valid(self) -> bool {
        let nig = self.to_nig();
        nig.kappa > 0.0
            && nig.shape > 0.0
            && nig.scale > 0.0
            && nig.mean.is_finite()
            && nig.scale.is_finite()
    }
}

/// `E_q[ln N(x | mu, sigma^2)]` under one NIG factor.
fn nig_expected_log_density(nig: &Nig, x: f64) -> f64 {
    let precision = nig.shape / nig.scale;
    let e_log_var = nig.scale.ln() - digamma(nig.shape);
    let d = x - nig.mean;
    -0.5 * LN_2PI - 0.5 * e_log_var - 0.5 * precision * d * d - 0.5 / nig.kappa
}

fn nig_kl(q: &Nig, p: &Nig) -> f64 {
    let gamma_kl = (q.shape - p.shape) * digamma(q.shape) - ln_gamma(q.shape)
        + ln_gamma(p.shape)
        + p.shape * (q.scale.ln() - p.scale.ln())
        + q.shape * (p.scale - q.scale) / q.scale;
    let ratio = p.kappa / q.kappa;
    let d = q.mean - p.mean;
    let normal_kl = 0.5 * (ratio - 1.0 - ratio.ln()) + 0.5 * p.kappa * d * d * q.shape / q.scale;
    gamma_kl + normal_kl
}

/// Per-state emission factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum Emission {
    Categorical {
        vocab: usize,
        prior: Vec<f64>,
        /// `K x V` Dirichlet concentrations.
        posterior: Vec<Vec<f64>>,
    },
    DiagGaussian {
        dims: usize,
        prior: Vec<NigNatural>,
        /// `K x D` NIG natural parameters.
        posterior: Vec<Vec<NigNatural>>,
    },
}

/// Expected emission sufficient statistics, one block per state.
#[derive(Debug, Clone, PartialEq)]
pub enum EmissionStats {
    /// Soft symbol counts, `K x V`.
    Categorical(Vec<Vec<f64>>),
    /// Soft `sum gamma`, `sum gamma x`, `sum gamma x^2`.
    Gaussian {
        weight: Vec<f64>,
        sum: Vec<Vec<f64>>,
        sum_sq: Vec<Vec<f64>>,
    },
}

impl EmissionStats {
    pub fn zeros_like(emission: &Emission) -> Self {
        let k = emission.num_states();
        match emission {
            Emission::Categorical { vocab, .. } => {
                EmissionStats::Categorical(vec![vec![0.0; *vocab]; k])
            }
            Emission::DiagGaussian { dims, .. } => EmissionStats::Gaussian {
                weight: vec![0.0; k],
                sum: vec![vec![0.0; *dims]; k],
                sum_sq: vec![vec![0.0; *dims]; k],
            },
        }
    }

    /// Accumulates `gamma`-weighted statistics of one sequence.
    pub(crate) fn accumulate(&mut self, gamma: &[Vec<f64>], obs: &Observations) -> Result<()> {
        match (self, obs) {
            (EmissionStats::Categorical(counts), Observations::Symbols(xs)) => {
                for (g, &x) in gamma.iter().zip(xs) {
                    for (k, &w) in g.iter().enumerate() {
                        counts[k][x] += w;
                    }
                }
                Ok(())
            }
            (
                EmissionStats::Gaussian {
                    weight,
                    sum,
                    sum_sq,
                },
                Observations::Vectors(xs),
            ) => {
                for (g, x) in gamma.iter().zip(xs) {
                    for (k, &w) in g.iter().enumerate() {
                        weight[k] += w;
                        for (d, &v) in x.iter().enumerate() {
                            sum[k][d] += w * v;
                            sum_sq[k][d] += w * v * v;
                        }
                    }
                }
                Ok(())
            }
            _ => Err(Error::DimensionMismatch(
                "observation kind does not match emission family".into(),
            )),
        }
    }

    pub fn add_assign(&mut self, other: &EmissionStats) {
        let add = |a: &mut Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
        };
        match (self, other) {
            (EmissionStats::Categorical(a), EmissionStats::Categorical(b)) => add(a, b),
            (
                EmissionStats::Gaussian {
                    weight,
                    sum,
                    sum_sq,
                },
                EmissionStats::Gaussian {
                    weight: w2,
                    sum: s2,
                    sum_sq: q2,
                },
            ) => {
                for (x, y) in weight.iter_mut().zip(w2) {
                    *x += y;
                }
                add(sum, s2);
                add(sum_sq, q2);
            }
            _ => panic!("mixing emission statistics of different families"),
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> EmissionStats {
        let pick = |m: &Vec<Vec<f64>>| perm.iter().map(|&p| m[p].clone()).collect::<Vec<_>>();
        match self {
            EmissionStats::Categorical(c) => EmissionStats::Categorical(pick(c)),
            EmissionStats::Gaussian {
                weight,
                sum,
                sum_sq,
            } => EmissionStats::Gaussian {
                weight: perm.iter().map(|&p| weight[p]).collect(),
                sum: pick(sum),
                sum_sq: pick(sum_sq),
            },
        }
    }
}

impl Emission {
    pub(crate) fn from_prior(num_states: usize, prior: &EmissionPrior) -> Self {
        match *prior {
            EmissionPrior::Categorical {
                vocab,
                concentration,
            } => {
                let prior = vec![concentration; vocab];
                Emission::Categorical {
                    vocab,
                    posterior: vec![prior.clone(); num_states],
                    prior,
                }
            }
            EmissionPrior::DiagGaussian { dims, prior } => {
                let prior = vec![prior.to_natural(); dims];
                Emission::DiagGaussian {
                    dims,
                    posterior: vec![prior.clone(); num_states],
                    prior,
                }
            }
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            Emission::Categorical { posterior, .. } => posterior.len(),
            Emission::DiagGaussian { posterior, .. } => posterior.len(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Emission::Categorical { .. } => "categorical",
            Emission::DiagGaussian { .. } => "diag_gaussian",
        }
    }

    pub(crate) fn jitter(&mut self, rng: &mut impl rand::Rng) {
        match self {
            Emission::Categorical { posterior, .. } => {
                for a in posterior.iter_mut().flatten() {
                    *a += rng.gen_range(0.0..0.01);
                }
            }
            Emission::DiagGaussian { posterior, .. } => {
                for n in posterior.iter_mut().flatten() {
                    n.kappa_mean += rng.gen_range(-0.01..0.01) * n.kappa;
                    n.kappa_mean_sq_plus_2scale = n
                        .kappa_mean_sq_plus_2scale
                        .max(n.kappa_mean * n.kappa_mean / n.kappa + 2.0 * DOMAIN_FLOOR);
                }
            }
        }
    }

    pub(crate) fn seed(&mut self, seeds: &[Observations], weight: f64) -> Result<()> {
        let k = self.num_states();
        let mut stats = EmissionStats::zeros_like(self);
        for (state, seq) in seeds.iter().enumerate() {
            self.check(seq)?;
            let gamma: Vec<Vec<f64>> = (0..seq.len())
                .map(|_| {
                    (0..k)
                        .map(|j| if j == state { weight } else { 0.0 })
                        .collect()
                })
                .collect();
            stats.accumulate(&gamma, seq)?;
        }
        match (self, &stats) {
            (Emission::Categorical { posterior, .. }, EmissionStats::Categorical(counts)) => {
                for (row, c) in posterior.iter_mut().zip(counts) {
                    for (a, n) in row.iter_mut().zip(c) {
                        *a += n;
                    }
                }
            }
            (
                Emission::DiagGaussian { posterior, .. },
                EmissionStats::Gaussian {
                    weight,
                    sum,
                    sum_sq,
                },
            ) => {
                for (state, row) in posterior.iter_mut().enumerate() {
                    for (d, n) in row.iter_mut().enumerate() {
                        n.kappa_mean += sum[state][d];
                        n.kappa_mean_sq_plus_2scale += sum_sq[state][d];
                        n.kappa += weight[state];
                        n.two_shape += weight[state];
                    }
                }
            }
            _ => unreachable!("stats built from the same family"),
        }
        Ok(())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Emission::Categorical {
                vocab,
                prior,
                posterior,
            } => {
                let ok = prior.len() == *vocab
                    && posterior.iter().all(|r| r.len() == *vocab)
                    && prior
                        .iter()
                        .chain(posterior.iter().flatten())
                        .all(|&a| a > 0.0 && a.is_finite());
                if ok {
                    Ok(())
                } else {
                    Err(Error::param(
                        "categorical emission",
                        "concentrations must be positive, one per symbol",
                    ))
                }
            }
            Emission::DiagGaussian {
                dims,
                prior,
                posterior,
            } => {
                let ok = prior.len() == *dims
                    && posterior.iter().all(|r| r.len() == *dims)
                    && prior
                        .iter()
                        .chain(posterior.iter().flatten())
                        .all(|n| n.is_valid());
                if ok {
                    Ok(())
                } else {
                    Err(Error::param(
                        "gaussian emission",
                        "NIG parameters must be valid, one per dimension",
                    ))
                }
            }
        }
    }

    pub(crate) fn check(&self, obs: &Observations) -> Result<()> {
        match (self, obs) {
            (Emission::Categorical { vocab, .. }, Observations::Symbols(xs)) => {
                match xs.iter().find(|&&x| x >= *vocab) {
                    Some(&symbol) => Err(Error::SymbolOutOfRange {
                        symbol,
                        vocab: *vocab,
                    }),
                    None => Ok(()),
                }
            }
            (Emission::DiagGaussian { dims, .. }, Observations::Vectors(xs)) => {
                match xs.iter().find(|x| x.len() != *dims) {
                    Some(x) => Err(Error::DimensionMismatch(format!(
                        "observation has {} dims, model {dims}",
                        x.len()
                    ))),
                    None => Ok(()),
                }
            }
            (Emission::Categorical { .. }, _) => Err(Error::DimensionMismatch(
                "categorical model needs symbol observations".into(),
            )),
            (Emission::DiagGaussian { .. }, _) => Err(Error::DimensionMismatch(
                "gaussian model needs vector observations".into(),
            )),
        }
    }

    /// `T x K` matrix of `E_q[ln p(x_t | z_t = k)]`.
    pub(crate) fn expected_log_likelihoods(&self, obs: &Observations) -> Result<Vec<Vec<f64>>> {
        self.check(obs)?;
        match (self, obs) {
            (Emission::Categorical { posterior, .. }, Observations::Symbols(xs)) => {
                let elog: Vec<Vec<f64>> = posterior
                    .iter()
                    .map(|row| dirichlet_expected_log(row))
                    .collect();
                Ok(xs
                    .iter()
                    .map(|&x| elog.iter().map(|row| row[x]).collect())
                    .collect())
            }
            (Emission::DiagGaussian { posterior, .. }, Observations::Vectors(xs)) => {
                let nigs: Vec<Vec<Nig>> = posterior
                    .iter()
                    .map(|row| row.iter().map(|n| n.to_nig()).collect())
                    .collect();
                Ok(xs
                    .iter()
                    .map(|x| {
                        nigs.iter()
                            .map(|row| {
                                row.iter()
                                    .zip(x)
                                    .map(|(nig, &v)| nig_expected_log_density(nig, v))
                                    .sum()
                            })
                            .collect()
                    })
                    .collect())
            }
            _ => unreachable!("checked above"),
        }
    }

    /// Convex step toward prior plus `scale * stats`. Returns the number of
    /// coordinates that had to be floored.
    pub(crate) fn update(&mut self, stats: &EmissionStats, rho: f64, scale: f64) -> Result<u64> {
        let mut clamped = 0;
        match (self, stats) {
            (
                Emission::Categorical {
                    prior, posterior, ..
                },
                EmissionStats::Categorical(counts),
            ) => {
                for (row, c) in posterior.iter_mut().zip(counts) {
                    for ((a, &a0), &n) in row.iter_mut().zip(prior.iter()).zip(c) {
                        *a = (1.0 - rho) * *a + rho * (a0 + scale * n);
                        if !(*a >= DOMAIN_FLOOR) {
                            *a = DOMAIN_FLOOR;
                            clamped += 1;
                        }
                    }
                }
            }
            (
                Emission::DiagGaussian {
                    prior, posterior, ..
                },
                EmissionStats::Gaussian {
                    weight,
                    sum,
                    sum_sq,
                },
            ) => {
                for (k, row) in posterior.iter_mut().enumerate() {
                    for (d, n) in row.iter_mut().enumerate() {
                        let p = prior[d];
                        let target = NigNatural {
                            kappa_mean: p.kappa_mean + scale * sum[k][d],
                            kappa_mean_sq_plus_2scale: p.kappa_mean_sq_plus_2scale
                                + scale * sum_sq[k][d],
                            kappa: p.kappa + scale * weight[k],
                            two_shape: p.two_shape + scale * weight[k],
                        };
                        *n = n.combine(rho, target);
                        clamped += n.clamp();
                    }
                }
            }
            _ => {
                return Err(Error::DimensionMismatch(
                    "statistics do not match emission family".into(),
                ))
            }
        }
        Ok(clamped)
    }

    /// `KL(q(phi) || p(phi))` summed over states.
    pub(crate) fn kl(&self) -> f64 {
        match self {
            Emission::Categorical {
                prior, posterior, ..
            } => posterior.iter().map(|row| dirichlet_kl(row, prior)).sum(),
            Emission::DiagGaussian {
                prior, posterior, ..
            } => posterior
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(prior)
                        .map(|(q, p)| nig_kl(&q.to_nig(), &p.to_nig()))
                        .sum::<f64>()
                })
                .sum(),
        }
    }

    pub(crate) fn permuted(&self, perm: &[usize]) -> Emission {
        match self {
            Emission::Categorical {
                vocab,
                prior,
                posterior,
            } => Emission::Categorical {
                vocab: *vocab,
                prior: prior.clone(),
                posterior: perm.iter().map(|&p| posterior[p].clone()).collect(),
            },
            Emission::DiagGaussian {
                dims,
                prior,
                posterior,
            } => Emission::DiagGaussian {
                dims: *dims,
                prior: prior.clone(),
                posterior: perm.iter().map(|&p| posterior[p].clone()).collect(),
            },
        }
    }
}
