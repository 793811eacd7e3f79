//! Variance and autocorrelation estimates for chain output, and decay-rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Pooled variance from `J` equal-length chains:
/// `s2 = (N-1)/N W + B/N` with `B = N/(J-1) sum (m_j - m)^2`.
///
/// With a single chain, chains shorter than two, or unequal lengths, the
/// plain sample variance of all values is returned instead.
pub fn gelman_rubin_variance(chains: &[&[f64]]) -> f64 {
    let j = chains.len();
    let n = chains.first().map_or(0, |c| c.len());
    if j < 2 || n < 2 || chains.iter().any(|c| c.len() != n) {
        let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
        return sample_variance(&all);
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let w = chains.iter().map(|c| sample_variance(c)).sum::<f64>() / j as f64;
    let b = n as f64 / (j - 1) as f64 * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let nf = n as f64;
    ((nf - 1.0) / nf * w + b / nf).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Integrated autocorrelation time, `1 + 2 sum rho_k`. NaN when degenerate.
    pub iact: f64,
    pub ess: f64,
    /// `variance * iact`.
    pub asymptotic_variance: f64,
    pub variance: f64,
    /// Zero variance: every value identical.
    pub degenerate: bool,
}

/// IACT with Geyer's initial positive sequence truncation.
pub fn integrated_autocorrelation(x: &[f64]) -> ChainDiagnostics {
    let n = x.len();
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let autocov = |k: usize| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = if n > 0 { autocov(0) } else { 0.0 };
    if !(g0 > 0.0) {
        return ChainDiagnostics {
            iact: f64::NAN,
            ess: f64::NAN,
            asymptotic_variance: 0.0,
            variance: 0.0,
            degenerate: true,
        };
    }
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = autocov(2 * k) + autocov(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    let iact = (2.0 * sum - g0) / g0;
    let variance = sample_variance(x);
    ChainDiagnostics {
        iact,
        ess: n as f64 / iact,
        asymptotic_variance: variance * iact,
        variance,
        degenerate: false,
    }
}

/// Least-squares slope and intercept of `y` against `x`, plus the RMS residual.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    (slope, intercept, (rss / x.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Slope of `log |mean|` against `log h`.
    pub alpha: f64,
    /// Slope of `log variance` against `log h`.
    pub beta: f64,
    pub mean_residual: f64,
    pub variance_residual: f64,
    pub points: usize,
}

/// Fits `|Y_l| ~ h^alpha` and `s2_l ~ h^beta` over the supplied levels
/// (normally `l >= 1`). Two points give an exact line with zero residual.
pub fn fit_decay_rates(means: &[f64], variances: &[f64], spacings: &[f64]) -> Result<DecayFit> {
    let n = spacings.len();
    if means.len() != n || variances.len() != n {
        return Err(Error::InvalidArgument("decay fit: length mismatch".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs at least 2 levels, got {n}"
        )));
    }
    let bad = |v: &f64| !(v.abs() > 0.0 && v.is_finite());
    if means.iter().any(bad) || variances.iter().any(bad) || spacings.iter().any(bad) {
        return Err(Error::InvalidArgument(
            "decay fit needs non-zero finite means, variances and spacings".into(),
        ));
    }
    let lh: Vec<f64> = spacings.iter().map(|h| h.ln()).collect();
    let lm: Vec<f64> = means.iter().map(|m| m.abs().ln()).collect();
    let lv: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    let (alpha, _, mean_residual) = linear_fit(&lh, &lm);
    let (beta, _, variance_residual) = linear_fit(&lh, &lv);
    Ok(DecayFit {
        alpha,
        beta,
        mean_residual,
        variance_residual,
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamId, StreamRole};
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, chain: usize, n: usize) -> Vec<f64> {
        let mut r = StreamId::new(seed, 0, chain, StreamRole::Proposal).open();
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    #[test]
    fn gr_constant_chains() {
        let a = [2.0; 10];
        assert_eq!(gelman_rubin_variance(&[&a, &a, &a]), 0.0);
    }

    #[test]
    fn gr_iid_normals() {
        let chains: Vec<Vec<f64>> = (0..5).map(|j| normals(1, j, 10_000)).collect();
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let s2 = gelman_rubin_variance(&refs);
        assert!((0.9..=1.1).contains(&s2), "{s2}");
    }

    #[test]
    fn gr_single_chain_fallback() {
        let x = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(gelman_rubin_variance(&[&x]), sample_variance(&x));
    }

    #[test]
    fn gr_matches_formula_by_hand() {
        let a = [1.0, 3.0];
        let b = [2.0, 6.0];
        // W = (2 + 8)/2 = 5, means 2 and 4, B = 2/1 * (1 + 1) = 4
        assert!((gelman_rubin_variance(&[&a, &b]) - (0.5 * 5.0 + 4.0 / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn iact_iid() {
        let x = normals(2, 0, 10_000);
        let d = integrated_autocorrelation(&x);
        assert!((0.8..=1.3).contains(&d.iact), "{}", d.iact);
        assert!(!d.degenerate);
    }

    #[test]
    fn iact_ar1() {
        let e = normals(3, 0, 200_000);
        let rho: f64 = 0.5;
        let mut x = Vec::with_capacity(e.len());
        let mut v = 0.0;
        for z in e {
            v = rho * v + (1.0 - rho * rho).sqrt() * z;
            x.push(v);
        }
        let d = integrated_autocorrelation(&x);
        assert!((d.iact - 3.0).abs() < 0.75, "{}", d.iact);
    }

    #[test]
    fn iact_constant_is_degenerate() {
        let d = integrated_autocorrelation(&[1.5; 200]);
        assert!(d.degenerate);
        assert_eq!(d.variance, 0.0);
    }

    #[test]
    fn decay_exact_power_laws() {
        let h = [1.0 / 31.0, 1.0 / 63.0, 1.0 / 127.0];
        let v: Vec<f64> = h.iter().map(|x| x * x).collect();
        let f = fit_decay_rates(&h, &v, &h).unwrap();
        assert!((f.alpha - 1.0).abs() < 1e-12);
        assert!((f.beta - 2.0).abs() < 1e-12);
        let f = fit_decay_rates(&[0.3; 3], &[0.01; 3], &h).unwrap();
        assert!(f.alpha.abs() < 1e-12 && f.beta.abs() < 1e-12);
        assert!(fit_decay_rates(&[1.0], &[1.0], &[0.5]).is_err());
        assert!(fit_decay_rates(&[0.0, 1.0], &[1.0, 1.0], &[0.5, 0.25]).is_err());
    }

    #[test]
    fn decay_noisy_inputs() {
        // Mean ~ h, variance ~ h^2, with multiplicative wiggle.
        let h = [1.0 / 15.0, 1.0 / 31.0, 1.0 / 63.0, 1.0 / 127.0];
        let wig = [1.1, 0.92, 1.05, 0.97];
        let m: Vec<f64> = h.iter().zip(&wig).map(|(x, w)| 0.3 * x * w).collect();
        let v: Vec<f64> = h.iter().zip(wig.iter().rev()).map(|(x, w)| 2.0 * x * x * w).collect();
        let f = fit_decay_rates(&m, &v, &h).unwrap();
        assert!((f.alpha - 1.0).abs() < 3.0 * f.mean_residual.max(0.02), "{f:?}");
        assert!((f.beta - 2.0).abs() < 3.0 * f.variance_residual.max(0.02), "{f:?}");
    }
}
