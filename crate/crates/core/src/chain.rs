//! Finite-state Markov chain approximating the AR(1) deviation process.
//!
//! Stage `t + 1` nodes are the Gauss-Hermite nodes of a centred Gaussian
//! sampling density `phi` with std `sampling_std`. The transition weight
//! from node `j` at stage `t` to node `i` at stage `t + 1` is the importance
//! ratio `p(x_i | x_j) / phi(x_i)` times the quadrature weight `w_i`, where
//! `p(. | x_j)` is the `N(a x_j, sigma_eps^2)` density. Rows are normalized
//! to sum to one and the pre-normalization sums are kept for diagnostics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::price_model::PriceModel;
use crate::quadrature::gauss_hermite;

const UNDERFLOW_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarkovChain {
    pub horizon: usize,
    /// `nodes[0]` is the root `[xi_0]`; `nodes[t]` for `t >= 1` has `N` values.
    pub nodes: Vec<Vec<f64>>,
    /// `transitions[t][j][i]`: probability of moving from node `j` at stage
    /// `t` to node `i` at stage `t + 1`, for `t = 0..horizon`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// Raw row sums before normalization, same shape as the row index.
    pub raw_row_mass: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn node_count(&self, stage: usize) -> usize {
        self.nodes.get(stage).map_or(0, Vec::len)
    }

    pub fn node_value(&self, stage: usize, node: usize) -> Result<f64> {
        self.nodes
            .get(stage)
            .and_then(|n| n.get(node))
            .copied()
            .ok_or(Error::NodeOutOfRange { stage, node })
    }

    /// Distribution of the stage `t + 1` node given node `j` at stage `t`.
    pub fn transition_row(&self, stage: usize, node: usize) -> Result<&[f64]> {
        self.transitions
            .get(stage)
            .and_then(|m| m.get(node))
            .map(Vec::as_slice)
            .ok_or(Error::NodeOutOfRange { stage, node })
    }

    /// Conditional mean and variance of the next node value given node `j`
    /// at stage `t`.
    pub fn conditional_moments(&self, stage: usize, node: usize) -> Result<(f64, f64)> {
        let row = self.transition_row(stage, node)?;
        let next = &self.nodes[stage + 1];
        let mean: f64 = row.iter().zip(next).map(|(p, x)| p * x).sum();
        let var: f64 = row
            .iter()
            .zip(next)
            .map(|(p, x)| p * (x - mean) * (x - mean))
            .sum();
        Ok((mean, var))
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() != self.horizon + 1 || self.transitions.len() != self.horizon {
            return Err(Error::InvalidParameter("chain shape does not match its horizon"));
        }
        if self.nodes[0].len() != 1 {
            return Err(Error::InvalidParameter("chain must have a single root node"));
        }
        for (t, matrix) in self.transitions.iter().enumerate() {
            if matrix.len() != self.nodes[t].len() {
                return Err(Error::InvalidParameter("transition matrix row count mismatch"));
            }
            for row in matrix {
                if row.len() != self.nodes[t + 1].len() {
                    return Err(Error::InvalidParameter("transition matrix column count mismatch"));
                }
                if row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::InvalidParameter("negative transition probability"));
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter("transition row does not sum to one"));
                }
            }
        }
        Ok(())
    }
}

/// Stationary std of the AR(1) process, the default sampling density scale.
pub fn default_sampling_std(model: &PriceModel) -> Result<f64> {
    match model.stationary_std() {
        Some(s) if s > 0.0 => Ok(s),
        _ => Err(Error::InvalidParameter(
            "no stationary law (|a| >= 1 or sigma = 0): give sampling_std explicitly",
        )),
    }
}

pub fn build_chain(
    model: &PriceModel,
    n: usize,
    sampling_std: f64,
    horizon: usize,
) -> Result<MarkovChain> {
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be at least 1"));
    }
    if n < 1 {
        return Err(Error::InvalidOrder(n));
    }
    let xi0 = model.initial_deviation;
    let a = model.ar_coefficient;

    if n == 1 {
        // One node per stage on the noiseless path a^t xi_0.
        let mut nodes = vec![vec![xi0]];
        let mut xi = xi0;
        for _ in 0..horizon {
            xi *= a;
            nodes.push(vec![xi]);
        }
        return Ok(MarkovChain {
            horizon,
            nodes,
            transitions: vec![vec![vec![1.0]]; horizon],
            raw_row_mass: vec![vec![1.0]; horizon],
        });
    }

    let rule = gauss_hermite(n, sampling_std)?;
    let sigma = model.innovation_std;
    let mut nodes = Vec::with_capacity(horizon + 1);
    nodes.push(vec![xi0]);
    for _ in 0..horizon {
        nodes.push(rule.nodes.clone());
    }

    let mut transitions = Vec::with_capacity(horizon);
    let mut raw_row_mass = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut matrix = Vec::with_capacity(nodes[t].len());
        let mut masses = Vec::with_capacity(nodes[t].len());
        for (j, &from) in nodes[t].iter().enumerate() {
            let mean = a * from;
            let mut row: Vec<f64> = if sigma > 0.0 {
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| {
                        let log_p = -(x - mean) * (x - mean) / (2.0 * sigma * sigma) - libm::log(sigma);
                        let log_phi =
                            -x * x / (2.0 * sampling_std * sampling_std) - libm::log(sampling_std);
                        libm::exp(log_p - log_phi) * w
                    })
                    .collect()
            } else {
                // Degenerate innovations: all mass on the node nearest a * xi.
                let target = nearest_index(&rule.nodes, mean);
                (0..n).map(|i| if i == target { 1.0 } else { 0.0 }).collect()
            };
            let mass: f64 = row.iter().sum();
            if !(mass >= UNDERFLOW_MASS) {
                return Err(Error::NumericalUnderflow { stage: t, node: j, mass });
            }
            row.iter_mut().for_each(|p| *p /= mass);
            matrix.push(row);
            masses.push(mass);
        }
        transitions.push(matrix);
        raw_row_mass.push(masses);
    }

    Ok(MarkovChain {
        horizon,
        nodes,
        transitions,
        raw_row_mass,
    })
}

fn nearest_index(values: &[f64], target: f64) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, v) in values.iter().enumerate() {
        let d = (v - target).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// Index of the stage node closest to `deviation`; ties go to the smaller index.
pub fn nearest_node(chain: &MarkovChain, stage: usize, deviation: f64) -> Result<usize> {
    if stage == 0 || stage > chain.horizon {
        return Err(Error::StageOutOfRange {
            stage,
            horizon: chain.horizon,
        });
    }
    Ok(nearest_index(&chain.nodes[stage], deviation))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(a: f64, sigma: f64, xi0: f64, horizon: usize) -> PriceModel {
        PriceModel::new(vec![50.0; horizon], a, sigma, 1.0, xi0).unwrap()
    }

    #[test]
    fn white_noise_with_matched_sampling_keeps_quadrature_weights() {
        let m = model(0.0, 3.0, 0.0, 4);
        let chain = build_chain(&m, 5, 3.0, 4).unwrap();
        let rule = gauss_hermite(5, 3.0).unwrap();
        for t in 0..4 {
            for (j, row) in chain.transitions[t].iter().enumerate() {
                assert!((chain.raw_row_mass[t][j] - 1.0).abs() < 1e-12);
                for (p, w) in row.iter().zip(&rule.weights) {
                    assert!((p - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_node_chain_is_the_noiseless_path() {
        let m = model(0.5, 2.0, 8.0, 3);
        let chain = build_chain(&m, 1, 1.0, 3).unwrap();
        assert_eq!(chain.nodes, vec![vec![8.0], vec![4.0], vec![2.0], vec![1.0]]);
        assert!(chain.transitions.iter().all(|m| m == &vec![vec![1.0]]));
    }

    #[test]
    fn eight_nodes_match_ar1_conditional_moments() {
        let m = model(0.48, 10.0, 0.0, 2);
        let s = default_sampling_std(&m).unwrap();
        let chain = build_chain(&m, 8, s, 2).unwrap();
        for j in 0..8 {
            let x = chain.nodes[1][j];
            let (mean, var) = chain.conditional_moments(1, j).unwrap();
            assert!((mean - 0.48 * x).abs() <= 0.02 * (0.48 * x).abs(), "node {j}");
            assert!((var - 100.0).abs() <= 5.0, "node {j}: var {var}");
        }
    }

    #[test]
    fn rows_are_probability_vectors_and_construction_is_deterministic() {
        let m = model(0.7, 5.0, 3.0, 6);
        let chain = build_chain(&m, 6, 7.0, 6).unwrap();
        chain.validate().unwrap();
        for matrix in &chain.transitions {
            for row in matrix {
                assert!(row.iter().all(|p| *p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(chain, build_chain(&m, 6, 7.0, 6).unwrap());
        assert_eq!(chain.node_count(0), 1);
        assert!((1..=6).all(|t| chain.node_count(t) == 6));
    }

    #[test]
    fn badly_mismatched_sampling_density_underflows() {
        let m = model(0.0, 0.01, 0.0, 1);
        let err = build_chain(&m, 16, 1000.0, 1).unwrap_err();
        assert!(matches!(err, Error::NumericalUnderflow { .. }));
    }

    #[test]
    fn nearest_node_examples() {
        let chain = MarkovChain {
            horizon: 1,
            nodes: vec![vec![0.0], vec![-1.0, 0.0, 1.0]],
            transitions: vec![vec![vec![0.25, 0.5, 0.25]]],
            raw_row_mass: vec![vec![1.0]],
        };
        assert_eq!(nearest_node(&chain, 1, 0.4).unwrap(), 1);
        assert_eq!(nearest_node(&chain, 1, 0.5).unwrap(), 1);
        assert_eq!(nearest_node(&chain, 1, -0.5).unwrap(), 0);
        assert_eq!(nearest_node(&chain, 1, 9.0).unwrap(), 2);
        assert!(matches!(
            nearest_node(&chain, 2, 0.0),
            Err(Error::StageOutOfRange { .. })
        ));
        assert!(nearest_node(&chain, 0, 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn nearest_node_agrees_with_exhaustive_scan(dev in -60.0f64..60.0, n in 1usize..12) {
            let m = model(0.48, 7.0, 0.0, 2);
            let chain = build_chain(&m, n, 8.0, 2).unwrap();
            let nodes = &chain.nodes[2];
            let mut best = 0;
            for i in 1..nodes.len() {
                if (nodes[i] - dev).abs() < (nodes[best] - dev).abs() {
                    best = i;
                }
            }
            proptest::prop_assert_eq!(nearest_node(&chain, 2, dev).unwrap(), best);
        }
    }
}
