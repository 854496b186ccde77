//! Bayesian HMM over latent roles with a structured mean-field posterior.
//!
//! `q(theta) = q(p0) q(P) q(phi)` holds Dirichlet factors for the initial
//! distribution and each transition row, and one conjugate factor per state for
//! the emission parameters. Local posteriors `q(z)` come from forward-backward
//! run on the expected-log parameters; global factors move by natural-gradient
//! steps, which for conjugate families are convex combinations of the current
//! natural parameters with prior-plus-scaled-expected-statistics.

mod emission;
mod inference;
mod svi;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use emission::{Emission, EmissionStats, Nig, NigNatural};
pub use inference::{
    expected_log_likelihoods, expected_log_params, forward_backward, local_update, viterbi,
    LocalPosterior,
};
pub use svi::{
    choose_seed_set, elbo_proxy, expected_stats, fit_full_batch, fit_svi, global_kl, global_update,
    step_size, svi_step, ExpectedStats, SviConfig,
};

use crate::{Error, Result};

/// Positive coordinates are floored here after every global update.
pub const DOMAIN_FLOOR: f64 = 1e-8;

/// One observation sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observations {
    Symbols(Vec<usize>),
    Vectors(Vec<Vec<f64>>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Symbols(s) => s.len(),
            Observations::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation of two sequences of the same kind.
    pub fn concat(&self, other: &Observations) -> Result<Observations> {
        match (self, other) {
            (Observations::Symbols(a), Observations::Symbols(b)) => {
                Ok(Observations::Symbols(a.iter().chain(b).copied().collect()))
            }
            (Observations::Vectors(a), Observations::Vectors(b)) => {
                Ok(Observations::Vectors(a.iter().chain(b).cloned().collect()))
            }
            _ => Err(Error::DimensionMismatch(
                "cannot join symbol and vector sequences".into(),
            )),
        }
    }
}

/// Hyperparameters of the priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmPrior {
    pub init_concentration: f64,
    pub trans_concentration: f64,
    pub emission: EmissionPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum EmissionPrior {
    Categorical { vocab: usize, concentration: f64 },
    DiagGaussian { dims: usize, prior: Nig },
}

impl HmmPrior {
    pub fn categorical(vocab: usize) -> Self {
        HmmPrior {
            init_concentration: 1.0,
            trans_concentration: 1.0,
            emission: EmissionPrior::Categorical {
                vocab,
                concentration: 1.0,
            },
        }
    }

    pub fn diag_gaussian(dims: usize) -> Self {
        HmmPrior {
            init_concentration: 1.0,
            trans_concentration: 1.0,
            emission: EmissionPrior::DiagGaussian {
                dims,
                prior: Nig::default(),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} must be positive")))
            }
        };
        positive("init_concentration", self.init_concentration)?;
        positive("trans_concentration", self.trans_concentration)?;
        match &self.emission {
            EmissionPrior::Categorical {
                vocab,
                concentration,
            } => {
                if *vocab == 0 {
                    return Err(Error::param("vocab", "must be at least 1"));
                }
                positive("emission concentration", *concentration)
            }
            EmissionPrior::DiagGaussian { dims, prior } => {
                if *dims == 0 {
                    return Err(Error::param("dims", "must be at least 1"));
                }
                positive("kappa", prior.kappa)?;
                positive("shape", prior.shape)?;
                positive("scale", prior.scale)
            }
        }
    }
}

/// Variational posterior over HMM parameters, together with the prior it was
/// derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalHmm {
    pub num_states: usize,
    pub init_prior: Vec<f64>,
    pub trans_prior: Vec<Vec<f64>>,
    /// `alpha~_0`.
    pub init: Vec<f64>,
    /// `alpha~_i`, one row per source state.
    pub trans: Vec<Vec<f64>>,
    pub emission: Emission,
    /// Number of coordinates floored at [`DOMAIN_FLOOR`] so far.
    #[serde(default)]
    pub clamp_count: u64,
}

impl VariationalHmm {
    /// Posterior equal to the prior.
    pub fn from_prior(num_states: usize, prior: &HmmPrior) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::param("num_states", "must be at least 1"));
        }
        prior.validate()?;
        let init_prior = vec![prior.init_concentration; num_states];
        let trans_prior = vec![vec![prior.trans_concentration; num_states]; num_states];
        let emission = Emission::from_prior(num_states, &prior.emission);
        Ok(VariationalHmm {
            num_states,
            init: init_prior.clone(),
            trans: trans_prior.clone(),
            init_prior,
            trans_prior,
            emission,
            clamp_count: 0,
        })
    }

    /// Prior plus a small positive jitter on every Dirichlet coordinate.
    pub fn jittered(num_states: usize, prior: &HmmPrior, rng: &mut impl rand::Rng) -> Result<Self> {
        let mut model = Self::from_prior(num_states, prior)?;
        for a in model
            .init
            .iter_mut()
            .chain(model.trans.iter_mut().flatten())
        {
            *a += rng.gen_range(0.0..0.01);
        }
        model.emission.jitter(rng);
        Ok(model)
    }

    /// Moment seeding: state `k` receives the prior plus `weight` times the
    /// statistics of `seeds[k]` as if it had been observed entirely in `k`.
    pub fn seeded(
        num_states: usize,
        prior: &HmmPrior,
        seeds: &[Observations],
        weight: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if seeds.len() != num_states {
            return Err(Error::DimensionMismatch(format!(
                "{} seed sequences for {num_states} states",
                seeds.len()
            )));
        }
        let mut model = Self::jittered(num_states, prior, rng)?;
        model.emission.seed(seeds, weight)?;
        Ok(model)
    }

    pub fn family_name(&self) -> &'static str {
        self.emission.family_name()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_states;
        let shape_ok = self.init.len() == k
            && self.init_prior.len() == k
            && self.trans.len() == k
            && self.trans_prior.len() == k
            && self
                .trans
                .iter()
                .chain(&self.trans_prior)
                .all(|r| r.len() == k)
            && self.emission.num_states() == k;
        if !shape_ok {
            return Err(Error::DimensionMismatch(format!(
                "model arrays disagree with {k} states"
            )));
        }
        let all_positive = self
            .init
            .iter()
            .chain(self.trans.iter().flatten())
            .chain(&self.init_prior)
            .chain(self.trans_prior.iter().flatten())
            .all(|&a| a > 0.0 && a.is_finite());
        if !all_positive {
            return Err(Error::param(
                "dirichlet",
                "parameters must be positive and finite",
            ));
        }
        self.emission.validate()
    }

    /// Relabels states: new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> VariationalHmm {
        let k = self.num_states;
        assert_eq!(perm.len(), k);
        let pick = |v: &Vec<f64>| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        let pick_rows = |m: &Vec<Vec<f64>>| {
            perm.iter()
                .map(|&i| perm.iter().map(|&j| m[i][j]).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        VariationalHmm {
            num_states: k,
            init_prior: pick(&self.init_prior),
            trans_prior: pick_rows(&self.trans_prior),
            init: pick(&self.init),
            trans: pick_rows(&self.trans),
            emission: self.emission.permuted(perm),
            clamp_count: self.clamp_count,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("hmm checkpoint", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: VariationalHmm =
            serde_json::from_str(text).map_err(|e| Error::json("hmm checkpoint", e))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
