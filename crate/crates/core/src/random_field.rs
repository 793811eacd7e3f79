//! Truncated Karhunen–Loève representation of the lognormal permeability.
//!
//! The covariance of `log k` is `C(x, y) = s2 * exp(-|x - y|_1 / lambda)` on
//! the unit square. With the 1-norm the kernel is a product of two 1D
//! exponential kernels, so every 2D eigenpair is a tensor product of 1D
//! eigenpairs, and those are known in closed form up to one scalar root per
//! mode.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::darcy::Mesh;
use crate::error::{Error, Result};

/// Relative tolerance for the eigenfrequency roots.
pub const ROOT_TOLERANCE: f64 = 1e-12;
/// Allowed deviation of `int_0^1 phi^2` from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-10;

/// Parameters of the exponential covariance (1-norm distance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub variance: f64,
    pub correlation_length: f64,
}

impl CovarianceSpec {
    /// The distance in the kernel is always the 1-norm.
    pub const NORM_ORDER: u32 = 1;

    pub fn new(variance: f64, correlation_length: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "covariance variance must be positive, got {variance}"
            )));
        }
        if !(correlation_length > 0.0 && correlation_length.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "correlation length must be positive, got {correlation_length}"
            )));
        }
        Ok(Self {
            variance,
            correlation_length,
        })
    }

    /// Kernel value for two points of the unit square.
    pub fn kernel(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let d = (a[0] - b[0]).abs() + (a[1] - b[1]).abs();
        self.variance * (-d / self.correlation_length).exp()
    }
}

/// One eigenpair of the unit-variance kernel `exp(-|x - y| / lambda)` on
/// `[0, 1]`.
///
/// The eigenfunction is `normalization * (omega cos(omega x) + rate sin(omega x))`
/// with `rate = 1 / lambda`, and the eigenvalue is `2 rate / (omega^2 + rate^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair1D {
    pub eigenvalue: f64,
    pub frequency: f64,
    pub normalization: f64,
    pub rate: f64,
}

impl Eigenpair1D {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let (s, c) = (self.frequency * x).sin_cos();
        self.normalization * (self.frequency * c + self.rate * s)
    }
}

/// Closed form of `int_0^1 (w cos(w x) + c sin(w x))^2 dx`.
fn unnormalized_norm_sq(w: f64, c: f64) -> f64 {
    let s = w.sin();
    0.5 * (w * w + c * c) + (w * w - c * c) * (2.0 * w).sin() / (4.0 * w) + c * s * s
}

/// Composite Simpson estimate of `int_0^1 phi^2`, resolving the oscillation.
fn simpson_norm_sq(pair: &Eigenpair1D) -> f64 {
    let panels = 256 * (pair.frequency.ceil() as usize + 1);
    let h = 1.0 / panels as f64;
    let f = |x: f64| {
        let v = pair.eval(x);
        v * v
    };
    let mut acc = f(0.0) + f(1.0);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * h);
    }
    acc * h / 3.0
}

fn bisect(mode: usize, mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::RootBracket {
            mode,
            reason: format!("no sign change on [{lo}, {hi}]"),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= ROOT_TOLERANCE * mid.abs() {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Err(Error::RootBracket {
        mode,
        reason: "bisection did not reach the tolerance".into(),
    })
}

/// Eigenpairs of the unit-variance exponential kernel on `[0, 1]`, sorted by
/// decreasing eigenvalue.
///
/// Mode `n` has its frequency in `(n pi, (n + 1) pi)`. Even `n` are symmetric
/// about `x = 1/2` and solve `u sin u = (c/2) cos u`, odd `n` are antisymmetric
/// and solve `c sin u + 2 u cos u = 0`, both in `u = omega / 2`.
pub fn solve_1d_eigenpairs(correlation_length: f64, count: usize) -> Result<Vec<Eigenpair1D>> {
    if !(correlation_length > 0.0 && correlation_length.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "correlation length must be positive, got {correlation_length}"
        )));
    }
    let c = 1.0 / correlation_length;
    let mut pairs = Vec::with_capacity(count);
    for n in 0..count {
        let k = (n / 2) as f64;
        let u = if n % 2 == 0 {
            bisect(n, k * PI, k * PI + FRAC_PI_2, |u| {
                u * u.sin() - 0.5 * c * u.cos()
            })?
        } else {
            bisect(n, k * PI + FRAC_PI_2, (k + 1.0) * PI, |u| {
                c * u.sin() + 2.0 * u * u.cos()
            })?
        };
        let omega = 2.0 * u;
        let pair = Eigenpair1D {
            eigenvalue: 2.0 * c / (omega * omega + c * c),
            frequency: omega,
            normalization: 1.0 / unnormalized_norm_sq(omega, c).sqrt(),
            rate: c,
        };
        let norm_sq = simpson_norm_sq(&pair);
        if (norm_sq - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Normalization { mode: n, norm_sq });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Upper bound on the eigenvalue of 1D mode `n` (its frequency exceeds `n pi`).
fn eigenvalue_bound(rate: f64, n: usize) -> f64 {
    let w = n as f64 * PI;
    2.0 * rate / (w * w + rate * rate)
}

/// A 2D mode `phi_i(x1) phi_j(x2)` with eigenvalue `s2 nu_i nu_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlMode {
    pub i: usize,
    pub j: usize,
    pub eigenvalue: f64,
}

/// Tensor-product KL basis, modes sorted by decreasing eigenvalue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlBasis {
    spec: CovarianceSpec,
    pairs: Vec<Eigenpair1D>,
    modes: Vec<KlMode>,
}

/// Build the 2D basis from a pool of 1D pairs, keeping the `r_max` largest
/// products. Ties in the product are ordered lexicographically by `(i, j)`.
pub fn build_2d_basis(pairs: Vec<Eigenpair1D>, spec: CovarianceSpec, r_max: usize) -> Result<KlBasis> {
    let n = pairs.len();
    if r_max == 0 {
        return Ok(KlBasis {
            spec,
            pairs,
            modes: Vec::new(),
        });
    }
    if n * n < r_max {
        return Err(Error::InsufficientPairs {
            requested: r_max,
            pairs: n,
            omitted: f64::INFINITY,
            kept: 0.0,
        });
    }
    let mut modes = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            modes.push(KlMode {
                i,
                j,
                eigenvalue: spec.variance * pairs[i].eigenvalue * pairs[j].eigenvalue,
            });
        }
    }
    modes.sort_by(|a, b| {
        b.eigenvalue
            .total_cmp(&a.eigenvalue)
            .then(a.i.cmp(&b.i))
            .then(a.j.cmp(&b.j))
    });
    modes.truncate(r_max);

    let kept = modes[r_max - 1].eigenvalue;
    let omitted = spec.variance * pairs[0].eigenvalue * eigenvalue_bound(pairs[0].rate, n);
    if omitted > kept {
        return Err(Error::InsufficientPairs {
            requested: r_max,
            pairs: n,
            omitted,
            kept,
        });
    }
    Ok(KlBasis { spec, pairs, modes })
}

impl KlBasis {
    /// Solve enough 1D pairs to certify the top `r_max` 2D modes.
    pub fn new(spec: CovarianceSpec, r_max: usize) -> Result<Self> {
        let mut count = ((r_max as f64).sqrt().ceil() as usize).max(4);
        loop {
            let pairs = solve_1d_eigenpairs(spec.correlation_length, count)?;
            match build_2d_basis(pairs, spec, r_max) {
                Err(Error::InsufficientPairs { .. }) if count < 1 << 16 => count *= 2,
                other => return other,
            }
        }
    }

    pub fn spec(&self) -> &CovarianceSpec {
        &self.spec
    }

    pub fn pairs(&self) -> &[Eigenpair1D] {
        &self.pairs
    }

    pub fn modes(&self) -> &[KlMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eigenvalues(&self) -> impl Iterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.eigenvalue)
    }

    /// Values `sqrt(mu_n) phi_n(p)` of the first `r` modes at every point,
    /// row-major (`points.len()` rows, `r` columns).
    pub fn scaled_mode_table(&self, points: &[[f64; 2]], r: usize) -> Result<Vec<f64>> {
        if r > self.len() {
            return Err(Error::TooManyModes {
                got: r,
                max: self.len(),
            });
        }
        let modes = &self.modes[..r];
        let used = modes.iter().map(|m| m.i.max(m.j) + 1).max().unwrap_or(0);
        let scale: Vec<f64> = modes.iter().map(|m| m.eigenvalue.sqrt()).collect();
        let mut table = Vec::with_capacity(points.len() * r);
        let mut fx = vec![0.0; used];
        let mut fy = vec![0.0; used];
        for p in points {
            check_point(*p)?;
            for (k, pair) in self.pairs[..used].iter().enumerate() {
                fx[k] = pair.eval(p[0]);
                fy[k] = pair.eval(p[1]);
            }
            table.extend(
                modes
                    .iter()
                    .zip(&scale)
                    .map(|(m, s)| s * fx[m.i] * fy[m.j]),
            );
        }
        Ok(table)
    }

    /// `log k` at the given points: `sum_n sqrt(mu_n) phi_n(p) theta_n`.
    pub fn evaluate_log_k(&self, theta: &[f64], points: &[[f64; 2]]) -> Result<Vec<f64>> {
        let table = FieldTable::new(self, points, theta.len())?;
        table.log_k(theta)
    }

    /// Piecewise-constant permeability, evaluated at element centroids.
    pub fn synthesize_element_field(&self, theta: &[f64], mesh: &Mesh) -> Result<Vec<f64>> {
        let log_k = self.evaluate_log_k(theta, &mesh.centroids())?;
        Ok(log_k.into_iter().map(f64::exp).collect())
    }

    /// Basis export: `index,i,j,mu,omega_i,omega_j`, one row per mode.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,i,j,mu,omega_i,omega_j")?;
        for (n, m) in self.modes.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                n, m.i, m.j, m.eigenvalue, self.pairs[m.i].frequency, self.pairs[m.j].frequency
            )?;
        }
        Ok(())
    }
}

fn check_point(p: [f64; 2]) -> Result<()> {
    if (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]) {
        Ok(())
    } else {
        Err(Error::OutsideDomain { x: p[0], y: p[1] })
    }
}

/// Precomputed `sqrt(mu_n) phi_n` at a fixed point set, so that repeated
/// field evaluations cost one dense mat-vec.
#[derive(Debug, Clone)]
pub struct FieldTable {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FieldTable {
    pub fn new(basis: &KlBasis, points: &[[f64; 2]], modes: usize) -> Result<Self> {
        let data = basis.scaled_mode_table(points, modes)?;
        Ok(Self {
            rows: points.len(),
            cols: modes,
            data,
        })
    }

    pub fn modes(&self) -> usize {
        self.cols
    }

    pub fn log_k(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() > self.cols {
            return Err(Error::TooManyModes {
                got: theta.len(),
                max: self.cols,
            });
        }
        let n = theta.len();
        Ok((0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..r * self.cols + n];
                row.iter().zip(theta).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    pub fn permeability(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_k(theta)?.into_iter().map(f64::exp).collect())
    }
}

/// A level's KL coefficients with the split into coarse and fine blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeVector {
    pub level: usize,
    pub coefficients: Vec<f64>,
    pub coarse_len: usize,
}

impl ModeVector {
    pub fn new(level: usize, coefficients: Vec<f64>, coarse_len: usize) -> Result<Self> {
        if coarse_len > coefficients.len() {
            return Err(Error::InvalidArgument(format!(
                "coarse block of {coarse_len} exceeds vector length {}",
                coefficients.len()
            )));
        }
        Ok(Self {
            level,
            coefficients,
            coarse_len,
        })
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn coarse(&self) -> &[f64] {
        &self.coefficients[..self.coarse_len]
    }

    pub fn fine(&self) -> &[f64] {
        &self.coefficients[self.coarse_len..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::darcy::Mesh;
    use approx::assert_relative_eq;

    fn spec() -> CovarianceSpec {
        CovarianceSpec::new(1.0, 0.5).unwrap()
    }

    #[test]
    fn empty_request() {
        assert!(solve_1d_eigenpairs(0.5, 0).unwrap().is_empty());
    }

    #[test]
    fn eigenvalues_sorted_and_frequencies_interleave() {
        let pairs = solve_1d_eigenpairs(0.5, 60).unwrap();
        for (n, p) in pairs.iter().enumerate() {
            assert!(p.frequency > n as f64 * PI && p.frequency < (n + 1) as f64 * PI);
        }
        for w in pairs.windows(2) {
            assert!(w[0].eigenvalue > w[1].eigenvalue);
        }
    }

    #[test]
    fn eigenfunctions_satisfy_the_integral_equation() {
        // Check (K phi)(x) = nu phi(x) pointwise with a fine Simpson rule split at x.
        let pairs = solve_1d_eigenpairs(0.5, 6).unwrap();
        for p in &pairs {
            for &x in &[0.0, 0.13, 0.5, 0.91, 1.0] {
                let integrand = |y: f64| (-(x - y as f64).abs() / 0.5).exp() * p.eval(y);
                let simpson = |a: f64, b: f64| {
                    let n = 4000;
                    let h = (b - a) / n as f64;
                    if h == 0.0 {
                        return 0.0;
                    }
                    let mut s = integrand(a) + integrand(b);
                    for k in 1..n {
                        s += if k % 2 == 1 { 4.0 } else { 2.0 } * integrand(a + k as f64 * h);
                    }
                    s * h / 3.0
                };
                let lhs = simpson(0.0, x) + simpson(x, 1.0);
                assert_relative_eq!(lhs, p.eigenvalue * p.eval(x), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn partial_trace_is_close_to_one() {
        let pairs = solve_1d_eigenpairs(0.5, 200).unwrap();
        let trace: f64 = pairs.iter().map(|p| p.eigenvalue).sum();
        assert!((0.99..=1.0).contains(&trace), "trace {trace}");
    }

    #[test]
    fn finest_full_size_basis_has_169_modes() {
        let basis = KlBasis::new(spec(), 169).unwrap();
        assert_eq!(basis.len(), 169);
        let mu: Vec<f64> = basis.eigenvalues().collect();
        assert!(mu.windows(2).all(|w| w[0] >= w[1]));
        assert!(mu.iter().all(|&m| m > 0.0));
        // symmetric products come in (i, j), (j, i) order
        let m = basis.modes();
        assert_eq!((m[0].i, m[0].j), (0, 0));
        assert_eq!((m[1].i, m[1].j), (0, 1));
        assert_eq!((m[2].i, m[2].j), (1, 0));
        assert_eq!(m[1].eigenvalue, m[2].eigenvalue);
    }

    #[test]
    fn full_tensor_trace_equals_variance() {
        let s = CovarianceSpec::new(2.5, 0.5).unwrap();
        let pairs = solve_1d_eigenpairs(0.5, 400).unwrap();
        let trace: f64 = pairs
            .iter()
            .flat_map(|a| pairs.iter().map(move |b| s.variance * a.eigenvalue * b.eigenvalue))
            .sum();
        assert!((trace / 2.5 - 1.0).abs() < 0.01, "trace {trace}");
    }

    #[test]
    fn uncertifiable_pool_is_rejected() {
        let pairs = solve_1d_eigenpairs(0.5, 3).unwrap();
        let err = build_2d_basis(pairs, spec(), 9).unwrap_err();
        assert!(matches!(err, Error::InsufficientPairs { .. }));
    }

    #[test]
    fn log_k_is_linear_and_zero_at_origin() {
        let basis = KlBasis::new(spec(), 20).unwrap();
        let pts = [[0.3, 0.7], [0.0, 0.0], [1.0, 0.5]];
        let zero = basis.evaluate_log_k(&[0.0; 20], &pts).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let a: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 1.1).cos()).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let fa = basis.evaluate_log_k(&a, &pts).unwrap();
        let fb = basis.evaluate_log_k(&b, &pts).unwrap();
        let fab = basis.evaluate_log_k(&ab, &pts).unwrap();
        for k in 0..pts.len() {
            assert_relative_eq!(fab[k], fa[k] + fb[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn too_long_theta_is_an_error() {
        let basis = KlBasis::new(spec(), 4).unwrap();
        assert!(matches!(
            basis.evaluate_log_k(&[0.0; 5], &[[0.5, 0.5]]),
            Err(Error::TooManyModes { got: 5, max: 4 })
        ));
        assert!(matches!(
            basis.evaluate_log_k(&[0.0; 2], &[[1.5, 0.5]]),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn element_field_properties() {
        let basis = KlBasis::new(spec(), 10).unwrap();
        let mesh = Mesh::new(6).unwrap();
        let ones = basis.synthesize_element_field(&[0.0; 10], &mesh).unwrap();
        assert!(ones.iter().all(|&k| k == 1.0));
        let mut theta = [0.0; 10];
        theta[3] = 1.7;
        let kp = basis.synthesize_element_field(&theta, &mesh).unwrap();
        theta[3] = -1.7;
        let km = basis.synthesize_element_field(&theta, &mesh).unwrap();
        for (a, b) in kp.iter().zip(&km) {
            assert!(*a > 0.0 && *b > 0.0);
            assert_relative_eq!(a * b, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn export_has_one_row_per_mode() {
        let basis = KlBasis::new(spec(), 7).unwrap();
        let mut buf = Vec::new();
        basis.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,i,j,mu,omega_i,omega_j"));
        assert_eq!(lines.count(), 7);
    }

    #[test]
    fn mode_vector_split() {
        let v = ModeVector::new(1, vec![1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(v.coarse(), &[1.0, 2.0]);
        assert_eq!(v.fine(), &[3.0]);
        assert!(ModeVector::new(1, vec![1.0], 2).is_err());
    }
}
