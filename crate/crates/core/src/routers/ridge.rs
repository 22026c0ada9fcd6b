//! Closed-form ridge regression for the per-model linear utility router.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::linalg::dot;
use crate::types::{RoutingDataset, UtilityEstimate};

/// Per-model weights and biases for score and cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearUtilityParams {
    pub dim: usize,
    /// `n_models x dim`, row-major.
    pub score_weights: Vec<f64>,
    pub score_bias: Vec<f64>,
    pub cost_weights: Vec<f64>,
    pub cost_bias: Vec<f64>,
}

impl LinearUtilityParams {
    pub fn n_models(&self) -> usize {
        self.score_bias.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<UtilityEstimate> {
        let d = self.dim;
        let m = self.n_models();
        let scores = (0..m).map(|j| dot(&self.score_weights[j * d..(j + 1) * d], x) + self.score_bias[j]).collect();
        let costs = (0..m).map(|j| dot(&self.cost_weights[j * d..(j + 1) * d], x) + self.cost_bias[j]).collect();
        UtilityEstimate::new(scores, costs)
    }
}

/// Normal-equation system `A [w; b] = rhs` with the ridge penalty on `w` only.
pub struct RidgeSystem {
    pub matrix: DMatrix<f64>,
    dim: usize,
}

impl RidgeSystem {
    /// Gram matrix of the bias-augmented design `[X 1]`, plus `reg` on the weight block.
    pub fn new(x: &[&[f64]], reg: f64) -> Self {
        let d = x[0].len();
        let mut a = DMatrix::<f64>::zeros(d + 1, d + 1);
        for row in x {
            for i in 0..d {
                let xi = row[i];
                for j in i..d {
                    a[(i, j)] += xi * row[j];
                }
                a[(i, d)] += xi;
            }
            a[(d, d)] += 1.0;
        }
        for i in 0..=d {
            for j in 0..i {
                a[(i, j)] = a[(j, i)];
            }
        }
        for i in 0..d {
            a[(i, i)] += reg;
        }
        Self { matrix: a, dim: d }
    }

    pub fn rhs(&self, x: &[&[f64]], y: &[f64]) -> DVector<f64> {
        let d = self.dim;
        let mut b = DVector::<f64>::zeros(d + 1);
        for (row, &t) in x.iter().zip(y) {
            for i in 0..d {
                b[i] += row[i] * t;
            }
            b[d] += t;
        }
        b
    }
}

/// Fits score and cost regressions for every model in closed form.
pub fn fit(train: &RoutingDataset, reg: f64) -> Result<LinearUtilityParams> {
    if train.is_empty() {
        bail!(InvalidArgument, "cannot fit on an empty train set");
    }
    if !(reg >= 0.0) || !reg.is_finite() {
        bail!(InvalidArgument, "ridge_reg must be finite and >= 0, got {reg}");
    }
    let d = train.dim();
    let x: Vec<&[f64]> = train.records().iter().map(|r| r.embedding.as_slice()).collect();
    let system = RidgeSystem::new(&x, reg);
    let singular = || {
        crate::error::Error::Numerical(alloc::format!(
            "normal equations are singular (n = {}, dim = {d}, ridge_reg = {reg}); use ridge_reg > 0",
            train.len()
        ))
    };
    if reg == 0.0 && train.len() < d + 1 {
        return Err(singular());
    }
    let chol = system.matrix.clone().cholesky().ok_or_else(singular)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if reg == 0.0 && lo <= hi * 1e-10 {
        return Err(singular());
    }

    let n_models = train.n_models();
    let mut params = LinearUtilityParams {
        dim: d,
        score_weights: Vec::with_capacity(n_models * d),
        score_bias: Vec::with_capacity(n_models),
        cost_weights: Vec::with_capacity(n_models * d),
        cost_bias: Vec::with_capacity(n_models),
    };
    for m in 0..n_models {
        let s: Vec<f64> = train.records().iter().map(|r| r.outcomes[m].score).collect();
        let c: Vec<f64> = train.records().iter().map(|r| r.outcomes[m].cost).collect();
        let ws = chol.solve(&system.rhs(&x, &s));
        let wc = chol.solve(&system.rhs(&x, &c));
        if ws.iter().chain(wc.iter()).any(|v| !v.is_finite()) {
            return Err(singular());
        }
        params.score_weights.extend(ws.iter().take(d));
        params.score_bias.push(ws[d]);
        params.cost_weights.extend(wc.iter().take(d));
        params.cost_bias.push(wc[d]);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::toy_dataset;
    use alloc::vec;

    #[test]
    fn recovers_planted_linear_model() {
        let w = [0.3, -0.7, 0.2];
        let b = 0.25;
        let embs: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64;
                vec![libm::sin(t), libm::cos(1.3 * t), libm::sin(0.7 * t + 1.0)]
            })
            .collect();
        let outs: Vec<Vec<(f64, f64)>> = embs.iter().map(|e| vec![(dot(&w, e) + b, 0.1)]).collect();
        let refs: Vec<&[(f64, f64)]> = outs.iter().map(|v| v.as_slice()).collect();
        let ds = toy_dataset(&embs, &refs);
        let p = fit(&ds, 0.0).unwrap();
        for (e, o) in embs.iter().zip(&outs) {
            let pred = p.predict(e).unwrap();
            assert!((pred.scores[0] - o[0].0).abs() < 1e-6);
            assert!((pred.costs[0] - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_targets() {
        let embs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0 - i as f64 * 0.3]).collect();
        let refs: Vec<&[(f64, f64)]> = (0..5).map(|_| &[(0.5, 0.2)][..]).collect();
        let p = fit(&toy_dataset(&embs, &refs), 1e-3).unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [10.0, 5.0]] {
            assert!((p.predict(&x).unwrap().scores[0] - 0.5).abs() < 1e-9);
        }
        assert!((p.predict(&[0.0, 0.0]).unwrap().scores[0] - p.score_bias[0]).abs() < 1e-15);
    }

    #[test]
    fn heavy_shrinkage_predicts_mean() {
        // 3-point fixture: targets 0.2, 0.5, 1.1, mean 0.6
        let embs = [vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let ds = toy_dataset(&embs, &[&[(0.2, 0.0)], &[(0.5, 0.0)], &[(1.1, 0.0)]]);
        let p = fit(&ds, 1e9).unwrap();
        for e in &embs {
            assert!((p.predict(e).unwrap().scores[0] - 0.6).abs() < 1e-3);
        }
    }

    #[test]
    fn singular_without_ridge() {
        let embs = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let ds = toy_dataset(&embs, &[&[(0.2, 0.0)], &[(0.5, 0.0)]]);
        let err = fit(&ds, 0.0).unwrap_err();
        assert!(alloc::format!("{err}").contains("ridge_reg > 0"));
        assert!(fit(&ds, 1e-3).is_ok());
    }

    #[test]
    fn normal_equations_residual() {
        let embs: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.37;
                vec![libm::cos(t), libm::sin(t), libm::cos(2.0 * t)]
            })
            .collect();
        let outs: Vec<Vec<(f64, f64)>> = (0..20).map(|i| vec![(libm::sin(i as f64), 0.3)]).collect();
        let refs: Vec<&[(f64, f64)]> = outs.iter().map(|v| v.as_slice()).collect();
        let ds = toy_dataset(&embs, &refs);
        let reg = 0.1;
        let p = fit(&ds, reg).unwrap();
        let x: Vec<&[f64]> = embs.iter().map(|e| e.as_slice()).collect();
        let sys = RidgeSystem::new(&x, reg);
        let y: Vec<f64> = outs.iter().map(|o| o[0].0).collect();
        let rhs = sys.rhs(&x, &y);
        let mut w = p.score_weights.clone();
        w.push(p.score_bias[0]);
        let resid = &sys.matrix * DVector::from_vec(w) - &rhs;
        assert!(resid.norm() <= 1e-8 * rhs.norm().max(1.0));
    }
}
