//! Level-dependent Bayesian model: Gaussian prior on the KL coefficients,
//! Gaussian likelihood around the P1 model response, and synthetic data.

use std::f64::consts::PI;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::darcy::{self, Mesh, ObservationOperator};
use crate::error::{Error, Result};
use crate::random_field::{FieldTable, KlBasis};
use crate::rng::{StreamId, StreamRole};

/// Constant source term of the flow problem.
pub const SOURCE: f64 = 1.0;

/// Discretisation and sampling parameters of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub index: usize,
    pub points_per_side: usize,
    /// Number of mesh nodes, `points_per_side^2`.
    pub dof: usize,
    /// KL truncation `R_l`.
    pub truncation: usize,
    /// Likelihood variance.
    pub fidelity: f64,
    /// pCN step size.
    pub step: f64,
    /// Extra cost factor of a level sample (the coarse companion solve).
    pub cost_factor: f64,
    pub spacing: f64,
}

impl LevelSpec {
    pub fn new(
        index: usize,
        points_per_side: usize,
        truncation: usize,
        fidelity: f64,
        step: f64,
        cost_factor: f64,
    ) -> Result<Self> {
        if points_per_side < 2 {
            return Err(Error::InvalidArgument(format!(
                "level {index}: need at least 2 points per side"
            )));
        }
        if !(fidelity > 0.0 && fidelity.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "level {index}: fidelity must be positive, got {fidelity}"
            )));
        }
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "level {index}: pCN step must lie in (0, 1], got {step}"
            )));
        }
        Ok(Self {
            index,
            points_per_side,
            dof: points_per_side * points_per_side,
            truncation,
            fidelity,
            step,
            cost_factor,
            spacing: 1.0 / (points_per_side - 1) as f64,
        })
    }
}

/// Standard Gaussian log-density, normalising constant included so that
/// priors of different dimension compare exactly.
pub fn log_prior(theta: &[f64]) -> f64 {
    let sq: f64 = theta.iter().map(|x| x * x).sum();
    -0.5 * theta.len() as f64 * (2.0 * PI).ln() - 0.5 * sq
}

/// Gaussian log-likelihood up to its constant: `-|obs - model|^2 / (2 s2)`.
pub fn log_likelihood(model: &[f64], observed: &[f64], fidelity: f64) -> f64 {
    debug_assert_eq!(model.len(), observed.len());
    let sq: f64 = model
        .iter()
        .zip(observed)
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    -sq / (2.0 * fidelity)
}

/// Likelihood variances from finest to coarsest:
/// `s2[l] = (1 + kappa h[l]) s2[l + 1]`.
pub fn fidelity_schedule(finest: f64, kappa: f64, spacings: &[f64]) -> Vec<f64> {
    let mut out = vec![finest; spacings.len()];
    for l in (0..spacings.len().saturating_sub(1)).rev() {
        out[l] = (1.0 + kappa * spacings[l]) * out[l + 1];
    }
    out
}

/// Everything computed for one parameter vector at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEvaluation {
    pub log_prior: f64,
    pub log_likelihood: f64,
    pub log_posterior: f64,
    pub response: Vec<f64>,
    pub qoi: f64,
    pub cost_units: f64,
}

/// An unnormalised level posterior that samplers can evaluate.
pub trait LevelTarget: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, theta: &[f64]) -> Result<PosteriorEvaluation>;
}

impl<T: LevelTarget + ?Sized> LevelTarget for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, theta: &[f64]) -> Result<PosteriorEvaluation> {
        (**self).evaluate(theta)
    }
}

/// Synthetic observations together with how they were made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub seed: u64,
    pub generation_points_per_side: usize,
    pub generation_truncation: usize,
    pub points: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub reference_theta: Vec<f64>,
}

impl ObservationSet {
    pub fn operator(&self) -> ObservationOperator {
        ObservationOperator {
            points: self.points.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(text)?;
        if set.points.len() != set.values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} observation points but {} values",
                set.points.len(),
                set.values.len()
            )));
        }
        if set.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite observed value".into()));
        }
        ObservationOperator::new(set.points.clone())?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Draw a reference parameter from the prior, solve on the generation mesh
/// and record the pressure at the observation points.
pub fn generate_synthetic_data(
    seed: u64,
    basis: &KlBasis,
    generation_points_per_side: usize,
    generation_truncation: usize,
    obs: &ObservationOperator,
) -> Result<ObservationSet> {
    if generation_truncation > basis.len() {
        return Err(Error::TooManyModes {
            got: generation_truncation,
            max: basis.len(),
        });
    }
    let mut rng = StreamId::new(seed, 0, 0, StreamRole::Data).open();
    let theta: Vec<f64> = (0..generation_truncation)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mesh = Mesh::new(generation_points_per_side)?;
    let k = basis.synthesize_element_field(&theta, &mesh)?;
    let (p, _) = darcy::assemble_and_solve(&mesh, &k, SOURCE, darcy::DEFAULT_TOLERANCE)?;
    let values = darcy::observe_pressure(&p, obs)?;
    Ok(ObservationSet {
        seed,
        generation_points_per_side,
        generation_truncation,
        points: obs.points.clone(),
        values,
        reference_theta: theta,
    })
}

/// Observation points from the seeded point stream, then synthetic data.
pub fn synthesize(
    seed: u64,
    basis: &KlBasis,
    generation_points_per_side: usize,
    generation_truncation: usize,
    count: usize,
) -> Result<ObservationSet> {
    let mut rng = StreamId::new(seed, 0, 0, StreamRole::ObservationPoints).open();
    let obs = ObservationOperator::random(count, &mut rng);
    generate_synthetic_data(seed, basis, generation_points_per_side, generation_truncation, &obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Likelihood {
    Gaussian,
    /// Constant likelihood: the posterior is the prior. Used by checks.
    Flat,
}

/// The level posterior of the Darcy inverse problem.
#[derive(Debug, Clone)]
pub struct DarcyPosterior {
    level: LevelSpec,
    mesh: Mesh,
    field: FieldTable,
    observations: ObservationOperator,
    data: Vec<f64>,
    tolerance: f64,
    likelihood: Likelihood,
}

impl DarcyPosterior {
    pub fn new(level: LevelSpec, basis: &KlBasis, data: &ObservationSet) -> Result<Self> {
        let mesh = Mesh::new(level.points_per_side)?;
        let field = FieldTable::new(basis, &mesh.centroids(), level.truncation)?;
        Ok(Self {
            level,
            mesh,
            field,
            observations: data.operator(),
            data: data.values.clone(),
            tolerance: darcy::DEFAULT_TOLERANCE,
            likelihood: Likelihood::Gaussian,
        })
    }

    pub fn with_likelihood(mut self, likelihood: Likelihood) -> Self {
        self.likelihood = likelihood;
        self
    }

    pub fn level(&self) -> &LevelSpec {
        &self.level
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }
}

impl LevelTarget for DarcyPosterior {
    fn dim(&self) -> usize {
        self.level.truncation
    }

    fn evaluate(&self, theta: &[f64]) -> Result<PosteriorEvaluation> {
        if theta.len() != self.level.truncation {
            return Err(Error::InvalidArgument(format!(
                "level {} expects {} coefficients, got {}",
                self.level.index,
                self.level.truncation,
                theta.len()
            )));
        }
        let k = self.field.permeability(theta)?;
        let (p, report) = darcy::assemble_and_solve(&self.mesh, &k, SOURCE, self.tolerance)?;
        let response = darcy::observe_pressure(&p, &self.observations)?;
        let qoi = darcy::outflow_flux(&self.mesh, &k, &p)?;
        let lp = log_prior(theta);
        let ll = match self.likelihood {
            Likelihood::Gaussian => log_likelihood(&response, &self.data, self.level.fidelity),
            Likelihood::Flat => 0.0,
        };
        Ok(PosteriorEvaluation {
            log_prior: lp,
            log_likelihood: ll,
            log_posterior: lp + ll,
            response,
            qoi,
            cost_units: report.cost_units,
        })
    }
}

/// Closure-defined target for tests and calibration runs. The closure maps
/// `theta` to `(log_likelihood, qoi)`; the prior is always standard normal.
pub struct ToyTarget<F> {
    dim: usize,
    f: F,
}

impl<F> ToyTarget<F>
where
    F: Fn(&[f64]) -> (f64, f64) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

fn flat_first(theta: &[f64]) -> (f64, f64) {
    (0.0, theta.first().copied().unwrap_or(0.0))
}

/// Flat likelihood; the QoI is the first coordinate.
pub fn prior_target(dim: usize) -> ToyTarget<fn(&[f64]) -> (f64, f64)> {
    ToyTarget::new(dim, flat_first)
}

impl<F> LevelTarget for ToyTarget<F>
where
    F: Fn(&[f64]) -> (f64, f64) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, theta: &[f64]) -> Result<PosteriorEvaluation> {
        if theta.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                self.dim,
                theta.len()
            )));
        }
        let (ll, qoi) = (self.f)(theta);
        let lp = log_prior(theta);
        Ok(PosteriorEvaluation {
            log_prior: lp,
            log_likelihood: ll,
            log_posterior: lp + ll,
            response: Vec::new(),
            qoi,
            cost_units: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_field::CovarianceSpec;
    use approx::assert_relative_eq;

    fn basis(r: usize) -> KlBasis {
        KlBasis::new(CovarianceSpec::new(1.0, 0.5).unwrap(), r).unwrap()
    }

    #[test]
    fn prior_values() {
        assert_relative_eq!(log_prior(&[0.0, 0.0]), -(2.0 * PI).ln(), epsilon = 1e-15);
        let full = [0.3, -1.2, 0.7, 2.0];
        let diff = log_prior(&full) - log_prior(&full[..2]);
        let expected = -(2.0 / 2.0) * (2.0 * PI).ln() - 0.5 * (0.7f64.powi(2) + 4.0);
        assert_relative_eq!(diff, expected, epsilon = 1e-14);
        assert_relative_eq!(diff, log_prior(&full[2..]), epsilon = 1e-14);
        assert!(log_prior(&[1.0]) > log_prior(&[1.5]));
        assert!(log_prior(&[-1.0]) > log_prior(&[-1.5]));
    }

    #[test]
    fn likelihood_values() {
        let obs = [1.0, 2.0, 3.0];
        assert_eq!(log_likelihood(&obs, &obs, 0.1), 0.0);
        assert_relative_eq!(log_likelihood(&[0.0, 1.0, 4.0], &obs, 1.0), -1.5);
        assert_relative_eq!(log_likelihood(&[0.0, 2.0, 2.0], &obs, 1.0), -1.0);
        assert_relative_eq!(
            log_likelihood(&[0.0, 2.0, 2.0], &obs, 0.5),
            2.0 * log_likelihood(&[0.0, 2.0, 2.0], &obs, 1.0)
        );
    }

    #[test]
    fn fidelity_recursion() {
        assert_eq!(fidelity_schedule(1e-4, 0.0, &[0.1, 0.05, 0.02]), vec![1e-4; 3]);
        let s = fidelity_schedule(1e-4, 1.0, &[1.0 / 15.0, 1.0 / 31.0]);
        assert_relative_eq!(s[0], 16.0 / 15.0 * 1e-4, epsilon = 1e-18);
        assert_eq!(s[1], 1e-4);
        let s = fidelity_schedule(1e-4, 1.0, &[1.0 / 15.0, 1.0 / 31.0, 1.0 / 63.0, 1.0 / 127.0]);
        assert!(s.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn synthetic_data_is_reproducible_and_seed_dependent() {
        let b = basis(20);
        let a = synthesize(7, &b, 33, 20, 9).unwrap();
        let a2 = synthesize(7, &b, 33, 20, 9).unwrap();
        let c = synthesize(8, &b, 33, 20, 9).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a.values, c.values);
        assert_eq!(a.points.len(), 9);
        assert_eq!(a.reference_theta.len(), 20);
        for v in a.values.iter().chain(&c.values) {
            assert!((-0.1..=1.1).contains(v), "{v}");
        }
        let back = ObservationSet::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn evaluation_is_deterministic_and_consistent() {
        let b = basis(12);
        let data = synthesize(3, &b, 33, 12, 9).unwrap();
        let level = LevelSpec::new(0, 16, 12, 1e-2, 0.2, 1.0).unwrap();
        let post = DarcyPosterior::new(level, &b, &data).unwrap();
        let theta: Vec<f64> = (0..12).map(|i| ((i * 7) as f64).sin()).collect();
        let e1 = post.evaluate(&theta).unwrap();
        let e2 = post.evaluate(&theta).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.log_posterior, e1.log_prior + e1.log_likelihood);
        let zero = post.evaluate(&[0.0; 12]).unwrap();
        assert!((zero.qoi - 1.5).abs() < 0.05, "{}", zero.qoi);
        assert!(post.evaluate(&[0.0; 11]).is_err());
        let flat = post.clone().with_likelihood(Likelihood::Flat);
        assert_eq!(flat.evaluate(&theta).unwrap().log_likelihood, 0.0);
    }

    #[test]
    fn reference_parameter_fits_best() {
        let b = basis(16);
        let data = synthesize(11, &b, 32, 16, 9).unwrap();
        let level = LevelSpec::new(0, 32, 16, 1e-4, 0.2, 1.0).unwrap();
        let post = DarcyPosterior::new(level, &b, &data).unwrap();
        let best = post.evaluate(&data.reference_theta).unwrap().log_likelihood;
        let mut rng = StreamId::new(99, 0, 0, StreamRole::Init).open();
        for _ in 0..100 {
            let th: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
            assert!(post.evaluate(&th).unwrap().log_likelihood <= best);
        }
    }

    #[test]
    fn ratio_is_invariant_to_dropped_constants() {
        let a = [0.2, -0.4, 1.1];
        let b = [0.9, 0.1, -0.3];
        let with = log_prior(&a) - log_prior(&b);
        let sq = |v: &[f64]| -0.5 * v.iter().map(|x| x * x).sum::<f64>();
        assert_relative_eq!(with, sq(&a) - sq(&b), epsilon = 1e-14);
    }
}
