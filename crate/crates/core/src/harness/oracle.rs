//! Independent reference computations: tensor Gauss–Hermite quadrature of
//! posterior expectations for low-dimensional models, and dense eigen
//! decompositions of the discretised covariance operator.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::LevelTarget;
use crate::random_field::CovarianceSpec;

pub const MAX_QUADRATURE_DIM: usize = 3;
pub const MAX_QUADRATURE_NODES: usize = 1_000_000;

/// Gauss–Hermite rule for the physicists' weight `exp(-t^2)`, computed by
/// Newton iteration on the orthonormal recurrence.
fn gauss_hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Nodes and weights integrating against the standard normal density.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_hermite_physicists(n);
    let s = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = t
        .into_iter()
        .zip(w)
        .map(|(t, w)| (std::f64::consts::SQRT_2 * t, w / s))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOracleSpec {
    pub dimension: usize,
    pub nodes: usize,
}

impl QuadratureOracleSpec {
    pub fn total_nodes(&self) -> Result<usize> {
        if self.dimension == 0 || self.dimension > MAX_QUADRATURE_DIM {
            return Err(Error::OracleBudget(format!(
                "quadrature dimension {} outside 1..={MAX_QUADRATURE_DIM}",
                self.dimension
            )));
        }
        let total = (self.nodes as u128).pow(self.dimension as u32);
        if self.nodes == 0 || total > MAX_QUADRATURE_NODES as u128 {
            return Err(Error::OracleBudget(format!(
                "{}^{} quadrature nodes exceed the budget of {MAX_QUADRATURE_NODES}",
                self.nodes, self.dimension
            )));
        }
        Ok(total as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureValue {
    /// Posterior mean of the QoI.
    pub mean: f64,
    /// `log int L(theta) P(theta) dtheta`.
    pub log_normalizer: f64,
    /// Posterior variance of the QoI.
    pub variance: f64,
}

/// `E_post[Q]` by tensor Gauss–Hermite quadrature over the prior.
pub fn quadrature_posterior(target: &dyn LevelTarget, spec: QuadratureOracleSpec) -> Result<QuadratureValue> {
    if target.dim() != spec.dimension {
        return Err(Error::InvalidArgument(format!(
            "oracle dimension {} but target has {}",
            spec.dimension,
            target.dim()
        )));
    }
    let total = spec.total_nodes()?;
    let (x, w) = gauss_hermite(spec.nodes);
    let d = spec.dimension;
    let n = spec.nodes;
    let evals: Vec<(f64, f64)> = (0..total)
        .into_par_iter()
        .map(|mut k| {
            let mut theta = vec![0.0; d];
            let mut lw = 0.0;
            for t in theta.iter_mut() {
                let i = k % n;
                k /= n;
                *t = x[i];
                lw += w[i].ln();
            }
            let e = target.evaluate(&theta)?;
            Ok((lw + e.log_likelihood, e.qoi))
        })
        .collect::<Result<_>>()?;
    let max = evals.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (lw, q) in &evals {
        let p = (lw - max).exp();
        z += p;
        m1 += p * q;
        m2 += p * q * q;
    }
    let mean = m1 / z;
    Ok(QuadratureValue {
        mean,
        log_normalizer: max + z.ln(),
        variance: (m2 / z - mean * mean).max(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReport {
    pub fine: QuadratureValue,
    pub coarse: QuadratureValue,
    pub nodes: usize,
    pub coarse_nodes: usize,
    /// `|fine.mean - coarse.mean| / |fine.mean|`.
    pub relative_delta: f64,
}

/// Quadrature at `nodes` and at `nodes / 2` as a self-consistency check.
pub fn quadrature_posterior_mean(target: &dyn LevelTarget, spec: QuadratureOracleSpec) -> Result<QuadratureReport> {
    let fine = quadrature_posterior(target, spec)?;
    let coarse_nodes = (spec.nodes / 2).max(1);
    let coarse = quadrature_posterior(
        target,
        QuadratureOracleSpec {
            nodes: coarse_nodes,
            ..spec
        },
    )?;
    Ok(QuadratureReport {
        fine,
        coarse,
        nodes: spec.nodes,
        coarse_nodes,
        relative_delta: (fine.mean - coarse.mean).abs() / fine.mean.abs().max(f64::MIN_POSITIVE),
    })
}

pub const MAX_DENSE_1D: usize = 2048;
pub const MAX_DENSE_2D_SIDE: usize = 64;

fn trapezoid(n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / (n - 1) as f64;
    let x = (0..n).map(|i| i as f64 * h).collect();
    let w = (0..n)
        .map(|i| if i == 0 || i == n - 1 { h / 2.0 } else { h })
        .collect();
    (x, w)
}

/// Eigenvalues (descending) of `W^1/2 C W^1/2` on `n` trapezoid nodes of [0, 1].
pub fn dense_kl_1d(n: usize, spec: &CovarianceSpec) -> Result<Vec<f64>> {
    if !(2..=MAX_DENSE_1D).contains(&n) {
        return Err(Error::OracleBudget(format!(
            "1D dense oracle needs 2 <= n <= {MAX_DENSE_1D}, got {n}"
        )));
    }
    let (x, w) = trapezoid(n);
    let a = DMatrix::from_fn(n, n, |i, j| {
        w[i].sqrt() * spec.variance * (-(x[i] - x[j]).abs() / spec.correlation_length).exp() * w[j].sqrt()
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Trace of the discrete 1D operator, `sum_i w_i C(x_i, x_i)`.
pub fn dense_trace_1d(n: usize, spec: &CovarianceSpec) -> f64 {
    trapezoid(n).1.iter().map(|w| w * spec.variance).sum()
}

/// Richardson extrapolation of the leading `count` eigenvalues from grids
/// with spacing `1/n` and `2/n`, removing the `h^2` trapezoid error.
pub fn dense_kl_1d_extrapolated(n: usize, count: usize, spec: &CovarianceSpec) -> Result<Vec<f64>> {
    if n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("extrapolation needs even n, got {n}")));
    }
    let fine = dense_kl_1d(n + 1, spec)?;
    let coarse = dense_kl_1d(n / 2 + 1, spec)?;
    Ok(fine
        .iter()
        .zip(&coarse)
        .take(count)
        .map(|(f, c)| (4.0 * f - c) / 3.0)
        .collect())
}

fn orthonormalize(vs: &mut Vec<Vec<f64>>, basis: &[Vec<f64>]) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for mut v in vs.drain(..) {
        for _ in 0..2 {
            for b in basis.iter().chain(kept.iter()) {
                let d = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-10 {
            v.iter_mut().for_each(|x| *x /= norm);
            kept.push(v);
        }
    }
    *vs = kept;
}

/// Leading `count` eigenvalues of the 2D operator on an `n x n` trapezoid
/// grid, using block Krylov Rayleigh–Ritz on the dense matrix.
pub fn dense_kl_2d(n: usize, count: usize, spec: &CovarianceSpec) -> Result<Vec<f64>> {
    if !(2..=MAX_DENSE_2D_SIDE).contains(&n) {
        return Err(Error::OracleBudget(format!(
            "2D dense oracle needs 2 <= n <= {MAX_DENSE_2D_SIDE}, got {n}"
        )));
    }
    let (x, w1) = trapezoid(n);
    let pts: Vec<[f64; 2]> = (0..n * n).map(|k| [x[k % n], x[k / n]]).collect();
    let w: Vec<f64> = (0..n * n).map(|k| (w1[k % n] * w1[k / n]).sqrt()).collect();
    let size = n * n;
    let a = DMatrix::from_fn(size, size, |i, j| w[i] * spec.kernel(pts[i], pts[j]) * w[j]);
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..size)
            .into_par_iter()
            .map(|i| a.row(i).iter().zip(v).map(|(p, q)| p * q).sum())
            .collect()
    };
    let block = 8usize;
    let steps = (count / block + 1) * 6 + 8;
    let mut seed = 0x2545_f491_4f6c_dd1du64;
    let mut rnd = || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut current: Vec<Vec<f64>> = (0..block).map(|_| (0..size).map(|_| rnd()).collect()).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    orthonormalize(&mut current, &basis);
    for _ in 0..steps {
        if current.is_empty() || basis.len() + current.len() > size {
            break;
        }
        basis.extend(current.iter().cloned());
        let mut next: Vec<Vec<f64>> = current.iter().map(|v| apply(v)).collect();
        orthonormalize(&mut next, &basis);
        current = next;
    }
    let k = basis.len();
    let av: Vec<Vec<f64>> = basis.iter().map(|v| apply(v)).collect();
    let t = DMatrix::from_fn(k, k, |i, j| basis[i].iter().zip(&av[j]).map(|(p, q)| p * q).sum::<f64>());
    let t = (&t + t.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.truncate(count);
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{prior_target, ToyTarget};

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite(20);
        let moment = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((moment(0) - 1.0).abs() < 1e-13);
        assert!(moment(1).abs() < 1e-13);
        assert!((moment(2) - 1.0).abs() < 1e-12);
        assert!((moment(4) - 3.0).abs() < 1e-11);
        assert!((moment(6) - 15.0).abs() < 1e-10);
        let (x64, w64) = gauss_hermite(64);
        assert!((w64.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(x64.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn constant_qoi() {
        let t = ToyTarget::new(2, |th: &[f64]| (-(th[0] - 0.3).powi(2), 2.5));
        let v = quadrature_posterior(&t, QuadratureOracleSpec { dimension: 2, nodes: 32 }).unwrap();
        assert!((v.mean - 2.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_conjugate_posterior() {
        // Likelihood N(y; x, s2) with y = 1, s2 = 0.5: posterior mean y/(1+s2).
        let t = ToyTarget::new(1, |th: &[f64]| (-(th[0] - 1.0).powi(2) / (2.0 * 0.5), th[0]));
        let v = quadrature_posterior(&t, QuadratureOracleSpec { dimension: 1, nodes: 64 }).unwrap();
        assert!((v.mean - 1.0 / 1.5).abs() < 1e-12);
        assert!((v.variance - 0.5 / 1.5).abs() < 1e-12);
        let flat = quadrature_posterior(&prior_target(1), QuadratureOracleSpec { dimension: 1, nodes: 16 }).unwrap();
        assert!(flat.mean.abs() < 1e-14);
        assert!(flat.log_normalizer.abs() < 1e-13);
    }

    #[test]
    fn budgets() {
        let t = prior_target(4);
        assert!(quadrature_posterior(&t, QuadratureOracleSpec { dimension: 4, nodes: 2 }).is_err());
        let t = prior_target(3);
        assert!(matches!(
            quadrature_posterior(&t, QuadratureOracleSpec { dimension: 3, nodes: 101 }),
            Err(Error::OracleBudget(_))
        ));
        assert!(dense_kl_1d(4096, &CovarianceSpec::new(1.0, 0.5).unwrap()).is_err());
        assert!(dense_kl_2d(65, 4, &CovarianceSpec::new(1.0, 0.5).unwrap()).is_err());
    }

    #[test]
    fn dense_1d_trace_and_scaling() {
        let s1 = CovarianceSpec::new(1.0, 0.5).unwrap();
        let s4 = CovarianceSpec::new(4.0, 0.5).unwrap();
        assert!((dense_trace_1d(1024, &s1) - 1.0).abs() < 1e-8);
        let e1 = dense_kl_1d(200, &s1).unwrap();
        let e4 = dense_kl_1d(200, &s4).unwrap();
        assert!((e1.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        for (a, b) in e1.iter().zip(&e4).take(20) {
            assert!((4.0 * a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dense_2d_matches_products_of_1d() {
        // The trapezoid operator is a Kronecker product, so its spectrum is
        // products of the 1D discrete spectrum.
        let s = CovarianceSpec::new(1.0, 0.5).unwrap();
        let n = 24;
        let e1 = dense_kl_1d(n, &s).unwrap();
        let mut prods: Vec<f64> = e1.iter().flat_map(|a| e1.iter().map(move |b| a * b)).collect();
        prods.sort_by(|a, b| b.total_cmp(a));
        let e2 = dense_kl_2d(n, 12, &s).unwrap();
        for (a, b) in e2.iter().zip(&prods) {
            assert!((a - b).abs() < 1e-9 * b, "{a} {b}");
        }
    }
}
