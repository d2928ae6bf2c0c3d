use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ngram::SparseVector;
use crate::error::{Error, Result};

/// Linear SVM trained with Pegasos stochastic subgradient steps on the
/// L2-regularized hinge loss. The bias is an extra constant-1 feature and
/// is regularized with the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

fn sign(label: u8) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

fn dot(w: &[f64], x: &SparseVector) -> f64 {
    x.iter().map(|&(i, v)| w[i] * v).sum()
}

/// Scales a vector to unit Euclidean norm (zero vectors stay zero).
pub fn l2_normalized(x: &SparseVector) -> SparseVector {
    let norm = x.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return x.clone();
    }
    x.iter().map(|&(i, v)| (i, v / norm)).collect()
}

pub fn hinge(margin: f64) -> f64 {
    (1.0 - margin).max(0.0)
}

impl LinearSvm {
    pub fn zeros(dim: usize, lambda: f64) -> Self {
        LinearSvm {
            weights: vec![0.0; dim],
            bias: 0.0,
            lambda,
        }
    }

    pub fn train(xs: &[SparseVector], ys: &[u8], dim: usize, lambda: f64, epochs: usize, seed: u64) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::validation(format!("{} examples but {} labels", xs.len(), ys.len())));
        }
        if !(ys.contains(&0) && ys.contains(&1)) {
            return Err(Error::validation("SVM training needs at least one example of each class"));
        }
        if lambda <= 0.0 {
            return Err(Error::config("SVM regularization must be positive"));
        }
        if let Some(&(i, _)) = xs.iter().flatten().find(|(i, _)| *i >= dim) {
            return Err(Error::validation(format!("feature column {i} is outside dimension {dim}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // w = scale * v keeps the shrink step O(1).
        let mut v = vec![0.0; dim];
        let mut vb = 0.0;
        let mut scale = 1.0;
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut t = 0u64;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &k in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let y = sign(ys[k]);
                let margin = y * scale * (dot(&v, &xs[k]) + vb);
                scale *= 1.0 - eta * lambda;
                if scale == 0.0 {
                    // t = 1: the shrink zeroes w exactly.
                    v.iter_mut().for_each(|x| *x = 0.0);
                    vb = 0.0;
                    scale = 1.0;
                }
                if margin < 1.0 {
                    let step = eta * y / scale;
                    for &(i, x) in &xs[k] {
                        v[i] += step * x;
                    }
                    vb += step;
                }
                if scale < 1e-9 {
                    v.iter_mut().for_each(|x| *x *= scale);
                    vb *= scale;
                    scale = 1.0;
                }
            }
        }
        Ok(LinearSvm {
            weights: v.iter().map(|x| x * scale).collect(),
            bias: vb * scale,
            lambda,
        })
    }

    pub fn decision(&self, x: &SparseVector) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &SparseVector) -> u8 {
        u8::from(self.decision(x) >= 0.0)
    }

    /// λ/2 (‖w‖² + b²) + mean hinge loss.
    pub fn objective(&self, xs: &[SparseVector], ys: &[u8]) -> f64 {
        let reg = self.weights.iter().map(|w| w * w).sum::<f64>() + self.bias * self.bias;
        let loss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| hinge(sign(y) * self.decision(x)))
            .sum();
        0.5 * self.lambda * reg + loss / xs.len() as f64
    }

    /// A subgradient of [`objective`](Self::objective): `(dw, db)`.
    pub fn subgradient(&self, xs: &[SparseVector], ys: &[u8]) -> (Vec<f64>, f64) {
        let mut gw: Vec<f64> = self.weights.iter().map(|w| self.lambda * w).collect();
        let mut gb = self.lambda * self.bias;
        let n = xs.len() as f64;
        for (x, &y) in xs.iter().zip(ys) {
            let y = sign(y);
            if y * self.decision(x) < 1.0 {
                for &(i, v) in x {
                    gw[i] -= y * v / n;
                }
                gb -= y / n;
            }
        }
        (gw, gb)
    }
}
