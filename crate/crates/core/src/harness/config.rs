//! Experiment configuration: TOML with one table per concern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    build_hierarchy, Budget, CostModel, HierarchyParams, LevelHierarchy, SamplingOptions,
    TruncationSchedule,
};
use crate::posterior::Likelihood;
use crate::random_field::CovarianceSpec;
use crate::samplers::AcceptanceRule;

/// Truncations used when none are configured and `max_level = 3`.
pub const DEFAULT_TRUNCATION: [usize; 4] = [96, 121, 153, 169];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovarianceSection {
    pub correlation_length: f64,
    pub variance: f64,
}

impl Default for CovarianceSection {
    fn default() -> Self {
        Self {
            correlation_length: 0.5,
            variance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogTruncation {
    pub r0: usize,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySection {
    /// Finest level index `L`.
    pub max_level: usize,
    pub m0: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_log: Option<LogTruncation>,
    pub betas: Vec<f64>,
    pub sigma2_f: f64,
    pub kappa: f64,
    pub eta: f64,
    pub gamma: f64,
    pub c_star: f64,
}

impl Default for HierarchySection {
    fn default() -> Self {
        Self {
            max_level: 3,
            m0: 16,
            truncation: None,
            truncation_log: None,
            betas: vec![0.15, 0.10],
            sigma2_f: 1e-4,
            kappa: 1.0,
            eta: 1.25,
            gamma: 1.0,
            c_star: 1.0,
        }
    }
}

/// Tolerance used when neither `epsilon` nor `samples` is given.
pub const DEFAULT_EPSILON: f64 = 8e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    /// Defaults to [`DEFAULT_EPSILON`] when `samples` is absent too.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Fixed kept samples per level instead of a tolerance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<usize>>,
    pub chains: usize,
    pub burn_in: u64,
    pub thinning: usize,
    pub seed: u64,
    pub rule: AcceptanceRule,
    pub min_samples: usize,
    pub safety_factor: bool,
    pub max_raw_steps: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let o = SamplingOptions::default();
        Self {
            epsilon: None,
            samples: None,
            chains: o.chains,
            burn_in: o.burn_in,
            thinning: o.thinning,
            seed: o.seed,
            rule: o.rule,
            min_samples: o.min_samples,
            safety_factor: o.safety_factor,
            max_raw_steps: o.max_raw_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    Gaussian,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub seed: u64,
    pub observations: usize,
    /// Defaults to twice the finest inference resolution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation_points_per_side: Option<usize>,
    /// Defaults to the finest truncation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation_truncation: Option<usize>,
    /// Read observations from this file instead of synthesizing them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub likelihood: LikelihoodKind,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            seed: 2024,
            observations: 9,
            generation_points_per_side: None,
            generation_truncation: None,
            file: None,
            likelihood: LikelihoodKind::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub epsilons: Vec<f64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            epsilons: vec![4e-2, 2e-2, 1e-2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub nodes: usize,
    /// Kept samples per chain for the MCMC side of the comparison.
    pub samples: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            nodes: 64,
            samples: 4000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also write every kept sample.
    pub samples: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub covariance: CovarianceSection,
    pub hierarchy: HierarchySection,
    pub sampling: SamplingSection,
    pub data: DataSection,
    pub compare: CompareSection,
    pub oracle: OracleSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(v) => Error::Config(v.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every offending key, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, key: &str, what: &str| {
            if !ok {
                bad.push(format!("{key}: {what}"));
            }
        };
        let c = &self.covariance;
        check(c.correlation_length > 0.0, "covariance.correlation_length", "must be positive");
        check(c.variance > 0.0, "covariance.variance", "must be positive");
        let h = &self.hierarchy;
        let n = h.max_level + 1;
        check(h.m0 >= 2, "hierarchy.m0", "must be at least 2");
        check(h.max_level < 16, "hierarchy.max_level", "must be below 16");
        match (&h.truncation, &h.truncation_log) {
            (Some(_), Some(_)) => check(false, "hierarchy.truncation", "conflicts with hierarchy.truncation_log"),
            (None, None) => check(
                n == DEFAULT_TRUNCATION.len(),
                "hierarchy.truncation",
                "required unless the default four-level hierarchy is used",
            ),
            (Some(r), None) => {
                check(r.len() == n, "hierarchy.truncation", "needs one entry per level");
                check(r.windows(2).all(|w| w[0] <= w[1]), "hierarchy.truncation", "must be non-decreasing");
                check(r.iter().all(|&v| v > 0), "hierarchy.truncation", "entries must be positive");
            }
            (None, Some(l)) => {
                check(l.r0 > 0, "hierarchy.truncation_log.r0", "must be positive");
                check(l.c >= 0.0, "hierarchy.truncation_log.c", "must be non-negative");
            }
        }
        check(!h.betas.is_empty(), "hierarchy.betas", "must not be empty");
        check(h.betas.iter().all(|b| *b > 0.0 && *b <= 1.0), "hierarchy.betas", "entries must lie in (0, 1]");
        check(h.sigma2_f > 0.0, "hierarchy.sigma2_f", "must be positive");
        check(h.kappa >= 0.0, "hierarchy.kappa", "must be non-negative");
        check(h.eta > 0.0, "hierarchy.eta", "must be positive");
        check(h.gamma > 0.0, "hierarchy.gamma", "must be positive");
        check(h.c_star > 0.0, "hierarchy.c_star", "must be positive");
        let s = &self.sampling;
        match (&s.epsilon, &s.samples) {
            (Some(e), None) => check(*e > 0.0, "sampling.epsilon", "must be positive"),
            (None, Some(v)) => {
                check(v.len() == n, "sampling.samples", "needs one entry per level");
                check(v.iter().all(|&x| x > 0), "sampling.samples", "entries must be positive");
            }
            (Some(_), Some(_)) => check(false, "sampling.epsilon", "conflicts with sampling.samples"),
            (None, None) => {}
        }
        check(s.chains > 0, "sampling.chains", "must be positive");
        check(s.thinning > 0, "sampling.thinning", "must be positive");
        check(s.min_samples > 0, "sampling.min_samples", "must be positive");
        check(s.max_raw_steps > 0, "sampling.max_raw_steps", "must be positive");
        let d = &self.data;
        check(d.observations > 0, "data.observations", "must be positive");
        if let Some(g) = d.generation_points_per_side {
            check(g >= 2, "data.generation_points_per_side", "must be at least 2");
        }
        if let Some(g) = d.generation_truncation {
            check(g > 0, "data.generation_truncation", "must be positive");
        }
        check(
            self.compare.epsilons.iter().all(|e| *e > 0.0),
            "compare.epsilons",
            "entries must be positive",
        );
        check(self.oracle.nodes > 0, "oracle.nodes", "must be positive");
        check(self.oracle.samples > 0, "oracle.samples", "must be positive");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn covariance(&self) -> Result<CovarianceSpec> {
        CovarianceSpec::new(self.covariance.variance, self.covariance.correlation_length)
    }

    pub fn hierarchy_params(&self) -> HierarchyParams {
        let h = &self.hierarchy;
        let truncation = match (&h.truncation, &h.truncation_log) {
            (Some(r), _) => TruncationSchedule::Explicit(r.clone()),
            (None, Some(l)) => TruncationSchedule::Logarithmic { r0: l.r0, c: l.c },
            (None, None) => TruncationSchedule::Explicit(DEFAULT_TRUNCATION.to_vec()),
        };
        HierarchyParams {
            max_level: h.max_level,
            m0: h.m0,
            truncation,
            betas: h.betas.clone(),
            sigma2_f: h.sigma2_f,
            kappa: h.kappa,
            eta: h.eta,
            cost: CostModel {
                gamma: h.gamma,
                c_star: h.c_star,
            },
        }
    }

    pub fn hierarchy(&self) -> Result<LevelHierarchy> {
        build_hierarchy(&self.hierarchy_params())
    }

    pub fn sampling_options(&self) -> SamplingOptions {
        let s = &self.sampling;
        SamplingOptions {
            chains: s.chains,
            burn_in: s.burn_in,
            thinning: s.thinning,
            seed: s.seed,
            rule: s.rule,
            min_samples: s.min_samples,
            safety_factor: s.safety_factor,
            max_raw_steps: s.max_raw_steps,
        }
    }

    pub fn budget(&self) -> Budget {
        match (&self.sampling.samples, self.sampling.epsilon) {
            (Some(n), _) => Budget::Fixed(n.clone()),
            (None, Some(e)) => Budget::Tolerance(e),
            (None, None) => Budget::Tolerance(DEFAULT_EPSILON),
        }
    }

    pub fn likelihood(&self) -> Likelihood {
        match self.data.likelihood {
            LikelihoodKind::Gaussian => Likelihood::Gaussian,
            LikelihoodKind::Flat => Likelihood::Flat,
        }
    }

    /// Generation mesh and truncation for synthetic data.
    pub fn generation(&self, hierarchy: &LevelHierarchy) -> (usize, usize) {
        let finest = hierarchy.finest();
        (
            self.data
                .generation_points_per_side
                .unwrap_or(2 * finest.points_per_side),
            self.data.generation_truncation.unwrap_or(finest.truncation),
        )
    }
}
