//! Bagged axis-aligned decision trees (random forest) for discrete actions.
//!
//! Split search runs on per-feature histograms: each feature is cut at the
//! midpoints between its distinct training values, coarsened to quantiles
//! when there are more than `max_bins` of them. For the small integer offset
//! features of the pursuit domain this is exact.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub max_bins: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 20,
            max_depth: 20,
            min_leaf: 1,
            max_features: None,
            max_bins: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    /// `x[feature] <= threshold` goes to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class frequencies of the training samples that reached the leaf.
    Leaf { dist: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_dist<'a>(&'a self, x: &[f64]) -> &'a [f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { dist } => return dist,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionForest {
    pub num_classes: usize,
    pub dims: usize,
    pub trees: Vec<Tree>,
}

impl DecisionForest {
    /// Mean of the trees' leaf distributions.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.num_classes];
        for tree in &self.trees {
            for (acc, v) in p.iter_mut().zip(tree.leaf_dist(x)) {
                *acc += v;
            }
        }
        let n = self.trees.len().max(1) as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }

    /// Most probable class; the lowest index wins ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    /// Fits on rows `xs` with labels `ys < num_classes`. Both must be
    /// non-empty and of equal length.
    pub fn fit(
        xs: &[&[f64]],
        ys: &[usize],
        num_classes: usize,
        config: &ForestConfig,
        seed: u64,
    ) -> DecisionForest {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty());
        let dims = xs[0].len();
        let binned = Binned::new(xs, config.max_bins.max(2));
        let trees = (0..config.trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut r = rng::stream(seed, t as u64);
                let n = ys.len();
                let rows: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
                TreeBuilder {
                    binned: &binned,
                    ys,
                    num_classes,
                    config,
                    rng: &mut r,
                }
                .build(rows)
            })
            .collect();
        DecisionForest {
            num_classes,
            dims,
            trees,
        }
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

struct Binned {
    dims: usize,
    /// Row-major bin index per sample and feature.
    bins: Vec<u8>,
    /// Cut points per feature; bin `b` holds values in `(cuts[b-1], cuts[b]]`.
    cuts: Vec<Vec<f64>>,
}

impl Binned {
    fn new(xs: &[&[f64]], max_bins: usize) -> Binned {
        let dims = xs[0].len();
        let max_bins = max_bins.min(256);
        let cuts: Vec<Vec<f64>> = (0..dims)
            .map(|f| {
                let mut vals: Vec<f64> = xs.iter().map(|x| x[f]).collect();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                if vals.len() <= max_bins {
                    vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
                } else {
                    let mut c: Vec<f64> = (1..max_bins)
                        .map(|q| {
                            let i = q * vals.len() / max_bins;
                            0.5 * (vals[i - 1] + vals[i])
                        })
                        .collect();
                    c.dedup();
                    c
                }
            })
            .collect();
        let mut bins = Vec::with_capacity(xs.len() * dims);
        for x in xs {
            for (f, c) in cuts.iter().enumerate() {
                bins.push(c.partition_point(|&t| t < x[f]) as u8);
            }
        }
        Binned { dims, bins, cuts }
    }

    fn bin(&self, row: usize, f: usize) -> usize {
        self.bins[row * self.dims + f] as usize
    }
}

struct TreeBuilder<'a, R: rand::Rng> {
    binned: &'a Binned,
    ys: &'a [usize],
    num_classes: usize,
    config: &'a ForestConfig,
    rng: &'a mut R,
}

struct SplitChoice {
    feature: usize,
    cut: usize,
    score: f64,
}

impl<R: rand::Rng> TreeBuilder<'_, R> {
    fn counts(&self, rows: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.num_classes];
        for &r in rows {
            c[self.ys[r]] += 1.0;
        }
        c
    }

    fn build(mut self, rows: Vec<usize>) -> Tree {
        let mut nodes = Vec::new();
        // (node slot, rows, depth)
        let mut stack = vec![(0usize, rows, 0usize)];
        nodes.push(Node::Leaf { dist: Vec::new() });
        while let Some((slot, rows, depth)) = stack.pop() {
            let counts = self.counts(&rows);
            let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
            let split = if pure
                || depth >= self.config.max_depth
                || rows.len() < 2 * self.config.min_leaf.max(1)
            {
                None
            } else {
                self.best_split(&rows, &counts)
            };
            match split {
                None => {
                    let n = rows.len() as f64;
                    nodes[slot] = Node::Leaf {
                        dist: counts.iter().map(|c| c / n).collect(),
                    };
                }
                Some(s) => {
                    let (left, right): (Vec<usize>, Vec<usize>) = rows
                        .iter()
                        .partition(|&&r| self.binned.bin(r, s.feature) <= s.cut);
                    let l = nodes.len();
                    nodes.push(Node::Leaf { dist: Vec::new() });
                    nodes.push(Node::Leaf { dist: Vec::new() });
                    nodes[slot] = Node::Split {
                        feature: s.feature,
                        threshold: self.binned.cuts[s.feature][s.cut],
                        left: l,
                        right: l + 1,
                    };
                    stack.push((l + 1, right, depth + 1));
                    stack.push((l, left, depth + 1));
                }
            }
        }
        Tree { nodes }
    }

    fn best_split(&mut self, rows: &[usize], counts: &[f64]) -> Option<SplitChoice> {
        let dims = self.binned.dims;
        let mtry = self
            .config
            .max_features
            .unwrap_or_else(|| (dims as f64).sqrt().ceil() as usize)
            .clamp(1, dims);
        let tried = sample(self.rng, dims, mtry).into_vec();
        if let Some(s) = self.search(rows, counts, &tried) {
            return Some(s);
        }
        // Nothing usable among the sampled features: fall back to the rest.
        let rest: Vec<usize> = (0..dims).filter(|f| !tried.contains(f)).collect();
        self.search(rows, counts, &rest)
    }

    fn search(&self, rows: &[usize], counts: &[f64], features: &[usize]) -> Option<SplitChoice> {
        let n = rows.len() as f64;
        let c = self.num_classes;
        let parent = gini_mass(counts, n);
        let min_leaf = self.config.min_leaf.max(1) as f64;
        let mut best: Option<SplitChoice> = None;
        for &f in features {
            let nb = self.binned.cuts[f].len() + 1;
            if nb < 2 {
                continue;
            }
            let mut hist = vec![0.0; nb * c];
            for &r in rows {
                hist[self.binned.bin(r, f) * c + self.ys[r]] += 1.0;
            }
            let mut left = vec![0.0; c];
            let mut n_left = 0.0;
            for cut in 0..nb - 1 {
                for k in 0..c {
                    left[k] += hist[cut * c + k];
                }
                n_left += hist[cut * c..(cut + 1) * c].iter().sum::<f64>();
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let right: Vec<f64> = counts.iter().zip(&left).map(|(t, l)| t - l).collect();
                let score = gini_mass(&left, n_left) + gini_mass(&right, n_right);
                if score < parent - 1e-12 && best.as_ref().is_none_or(|b| score < b.score) {
                    best = Some(SplitChoice {
                        feature: f,
                        cut,
                        score,
                    });
                }
            }
        }
        best
    }
}

/// `n * Gini(counts / n)`.
fn gini_mass(counts: &[f64], n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    n - counts.iter().map(|c| c * c).sum::<f64>() / n
}
