//! Gauss-Hermite rules for expectations under a centred Gaussian.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Nodes and probability weights such that `sum w_i g(x_i) ~ E[g(Z)]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(x))
            .sum()
    }
}

const NEWTON_MAX_ITER: usize = 100;

/// `n`-point rule for `Z ~ N(0, sigma^2)`, exact for polynomials of degree
/// up to `2n - 1`.
///
/// Roots of the physicists' Hermite polynomial are found by Newton's method
/// on the orthonormal three-term recurrence, seeded with the usual asymptotic
/// guesses, then rescaled by `sqrt(2) * sigma`.
pub fn gauss_hermite(n: usize, sigma: f64) -> Result<QuadratureRule> {
    if n < 1 {
        return Err(Error::InvalidOrder(n));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter("quadrature sigma must be finite and > 0"));
    }
    let pim4 = libm::pow(core::f64::consts::PI, -0.25);
    let nf = n as f64;
    let half = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0;
    for i in 0..half {
        z = match i {
            0 => libm::sqrt(2.0 * nf + 1.0) - 1.85575 * libm::pow(2.0 * nf + 1.0, -1.0 / 6.0),
            1 => z - 1.14 * libm::pow(nf, 0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * libm::sqrt(2.0 / jf) * p2 - libm::sqrt((jf - 1.0) / jf) * p3;
            }
            pp = libm::sqrt(2.0 * nf) * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-15 * (1.0 + z.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::MaxIterations(NEWTON_MAX_ITER));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[half - 1] = 0.0;
    }

    // Roots come out in decreasing order.
    x.reverse();
    w.reverse();
    let scale = core::f64::consts::SQRT_2 * sigma;
    let total: f64 = w.iter().sum();
    Ok(QuadratureRule {
        nodes: x.into_iter().map(|v| v * scale).collect(),
        weights: w.into_iter().map(|v| v / total).collect(),
    })
}
