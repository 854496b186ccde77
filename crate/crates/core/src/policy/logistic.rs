//! Multinomial logistic regression trained by seeded SGD.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::forest::argmax;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            epochs: 60,
            learning_rate: 0.1,
            l2: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Per-feature standardization applied before the linear map.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `weights[class]` holds `d` coefficients followed by the bias.
    pub weights: Vec<Vec<f64>>,
}

impl LogisticModel {
    fn standardized(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn logits_of(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let d = z.len();
                w[..d].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w[d]
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits_of(&self.standardized(x)))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits_of(&self.standardized(x)))
    }

    pub fn fit(
        xs: &[&[f64]],
        ys: &[usize],
        num_classes: usize,
        config: &LogisticConfig,
        seed: u64,
    ) -> LogisticModel {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty());
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|f| xs.iter().map(|x| x[f]).sum::<f64>() / n)
            .collect();
        let scale: Vec<f64> = (0..d)
            .map(|f| {
                let var = xs.iter().map(|x| (x[f] - mean[f]).powi(2)).sum::<f64>() / n;
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut model = LogisticModel {
            mean,
            scale,
            weights: vec![vec![0.0; d + 1]; num_classes],
        };
        let zs: Vec<Vec<f64>> = xs.iter().map(|x| model.standardized(x)).collect();
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut r = rng::stream(seed, 0);
        for epoch in 0..config.epochs {
            order.shuffle(&mut r);
            let lr = config.learning_rate / (1.0 + 0.1 * epoch as f64);
            for &i in &order {
                let z = &zs[i];
                let p = softmax(&model.logits_of(z));
                for (c, w) in model.weights.iter_mut().enumerate() {
                    let g = p[c] - if c == ys[i] { 1.0 } else { 0.0 };
                    for (wj, zj) in w[..d].iter_mut().zip(z) {
                        *wj -= lr * (g * zj + config.l2 * *wj);
                    }
                    w[d] -= lr * g;
                }
            }
        }
        model
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}
