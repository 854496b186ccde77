//! Special functions and log-space helpers.

pub use statrs::function::gamma::{digamma, ln_gamma};

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln B(alpha) = sum ln Γ(alpha_i) - ln Γ(sum alpha_i)`.
pub fn ln_multivariate_beta(alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total)
}

/// `E[ln p_i]` under `Dir(alpha)`.
pub fn dirichlet_expected_log(alpha: &[f64]) -> Vec<f64> {
    let total = digamma(alpha.iter().sum());
    alpha.iter().map(|&a| digamma(a) - total).collect()
}

/// `KL(Dir(q) || Dir(p))`.
pub fn dirichlet_kl(q: &[f64], p: &[f64]) -> f64 {
    debug_assert_eq!(q.len(), p.len());
    let elog = dirichlet_expected_log(q);
    ln_multivariate_beta(p) - ln_multivariate_beta(q)
        + q.iter()
            .zip(p)
            .zip(&elog)
            .map(|((&qi, &pi), &e)| (qi - pi) * e)
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Harmonic-number identity: ψ(n) = -γ + Σ_{k<n} 1/k.
    fn digamma_integer(n: u32) -> f64 {
        const EULER: f64 = 0.577_215_664_901_532_9;
        -EULER + (1..n).map(|k| 1.0 / k as f64).sum::<f64>()
    }

    #[test]
    fn digamma_matches_harmonic_identity() {
        for n in 1..40 {
            assert!(
                (digamma(n as f64) - digamma_integer(n)).abs() < 1e-12,
                "n={n}"
            );
        }
    }

    #[test]
    fn dirichlet_row_of_twos() {
        let e = dirichlet_expected_log(&[2.0, 2.0]);
        let want = digamma_integer(2) - digamma_integer(4);
        assert!((e[0] - want).abs() < 1e-12);
        assert_eq!(e[0], e[1]);
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_kl_is_zero_on_identity() {
        assert!(dirichlet_kl(&[1.5, 2.0, 3.0], &[1.5, 2.0, 3.0]).abs() < 1e-12);
        assert!(dirichlet_kl(&[5.0, 1.0], &[1.0, 1.0]) > 0.0);
    }
}
