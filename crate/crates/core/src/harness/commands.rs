//! Subcommand implementations shared by the CLI and the self-test.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DecayFit;
use crate::error::{Error, Result};
use crate::estimator::{self, Budget, DarcyProblem, MultilevelRun, SamplingOptions};
use crate::harness::config::ExperimentConfig;
use crate::harness::io::{self, names, CompareRow};
use crate::harness::oracle::{self, QuadratureOracleSpec, QuadratureReport};
use crate::posterior::{self, DarcyPosterior, LevelTarget, ObservationSet};
use crate::random_field::KlBasis;
use crate::samplers::AcceptanceRule;

/// Basis, data and hierarchy described by a config. Relative data paths are
/// resolved against `base` (the config file's directory).
pub fn prepare(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<DarcyProblem> {
    let hierarchy = cfg.hierarchy()?;
    let (gen_m, gen_r) = cfg.generation(&hierarchy);
    let r_max = gen_r.max(hierarchy.finest().truncation);
    let basis = KlBasis::new(cfg.covariance()?, r_max)?;
    let data = match &cfg.data.file {
        Some(f) => {
            let path = match base {
                Some(b) if f.is_relative() => b.join(f),
                _ => f.clone(),
            };
            ObservationSet::load(&path)?
        }
        None => posterior::synthesize(cfg.data.seed, &basis, gen_m, gen_r, cfg.data.observations)?,
    };
    Ok(DarcyProblem {
        basis,
        data,
        hierarchy,
        likelihood: cfg.likelihood(),
    })
}

pub fn synthesize(cfg: &ExperimentConfig, base: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let problem = prepare(cfg, base)?;
    let path = out.join(names::OBSERVATIONS);
    io::write(&path, &(problem.data.to_json()? + "\n"))?;
    let mut table = Vec::new();
    problem.basis.write_table(&mut table)?;
    io::write(&out.join("basis.csv"), &String::from_utf8(table).expect("ascii"))?;
    Ok(path)
}

fn timed<T>(what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let r = f();
    log::info!("{what} took {:.2?}", t.elapsed());
    r
}

pub fn estimate(cfg: &ExperimentConfig, base: Option<&Path>, out: &Path) -> Result<MultilevelRun> {
    let problem = prepare(cfg, base)?;
    let run = timed("multilevel estimate", || {
        estimator::run_mlmcmc(&problem, &cfg.sampling_options(), &cfg.budget())
    })?;
    io::export_run_bundle(out, &run, cfg, &problem.data, cfg.output.samples)?;
    Ok(run)
}

/// Single-level run on the finest level. Fixed budgets use the finest entry.
pub fn baseline(cfg: &ExperimentConfig, base: Option<&Path>, out: &Path) -> Result<MultilevelRun> {
    let problem = prepare(cfg, base)?;
    let budget = match cfg.budget() {
        Budget::Fixed(n) => Budget::Fixed(vec![*n.last().unwrap()]),
        b => b,
    };
    let run = timed("single-level estimate", || {
        estimator::run_single_level(&problem, &cfg.sampling_options(), &budget)
    })?;
    io::export_run_bundle(out, &run, cfg, &problem.data, cfg.output.samples)?;
    Ok(run)
}

pub fn compare_problem(problem: &DarcyProblem, opts: &SamplingOptions, epsilons: &[f64]) -> Result<Vec<CompareRow>> {
    epsilons
        .iter()
        .map(|&eps| {
            let budget = Budget::Tolerance(eps);
            let ml = timed("multilevel", || estimator::run_mlmcmc(problem, opts, &budget))?;
            let sl = timed("single-level", || estimator::run_single_level(problem, opts, &budget))?;
            Ok(CompareRow {
                epsilon: eps,
                multilevel: ml.estimate,
                single: sl.estimate,
            })
        })
        .collect()
}

pub fn compare(cfg: &ExperimentConfig, base: Option<&Path>, out: &Path) -> Result<Vec<CompareRow>> {
    let problem = prepare(cfg, base)?;
    let rows = compare_problem(&problem, &cfg.sampling_options(), &cfg.compare.epsilons)?;
    io::write(&out.join(names::COMPARE), &io::compare_csv(&rows))?;
    io::write(&out.join(names::OBSERVATIONS), &(problem.data.to_json()? + "\n"))?;
    io::write(&out.join(names::CONFIG), &cfg.to_toml())?;
    Ok(rows)
}

pub const RATES_HEADER: &str = "quantity,slope,residual,points";

pub fn rates_csv(fit: &DecayFit) -> String {
    format!(
        "{RATES_HEADER}\nmean,{},{},{}\nvariance,{},{},{}\n",
        fit.alpha, fit.mean_residual, fit.points, fit.beta, fit.variance_residual, fit.points
    )
}

/// Runs the estimator and fits decay rates over levels `1..=L`.
pub fn rates(cfg: &ExperimentConfig, base: Option<&Path>, out: &Path) -> Result<(MultilevelRun, DecayFit)> {
    let run = estimate(cfg, base, out)?;
    let fit = estimator::decay_rates(&run.estimate)?;
    io::write(&out.join("rates.csv"), &rates_csv(&fit))?;
    Ok((run, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub rule: AcceptanceRule,
    pub quadrature: QuadratureReport,
    pub mcmc_mean: f64,
    /// Standard error from the autocorrelation-corrected variance.
    pub mcmc_se: f64,
    pub ess: f64,
    /// Quadrature error estimate: the delta between node counts.
    pub quadrature_se: f64,
    pub z: f64,
}

impl OracleComparison {
    pub fn within(&self, k: f64) -> bool {
        self.z.abs() <= k
    }
}

/// Single-level pCN chains against tensor quadrature on one target.
pub fn oracle_compare(
    target: &dyn LevelTarget,
    nodes: usize,
    opts: &SamplingOptions,
    step: f64,
    kept_per_chain: usize,
) -> Result<OracleComparison> {
    let quadrature = oracle::quadrature_posterior_mean(
        target,
        QuadratureOracleSpec {
            dimension: target.dim(),
            nodes,
        },
    )?;
    let spec = posterior::LevelSpec::new(0, 2, target.dim(), 1.0, step, 1.0)?;
    let run = estimator::run_single(
        target,
        &spec,
        Default::default(),
        opts,
        &Budget::Fixed(vec![kept_per_chain * opts.chains]),
    )?;
    let values: Vec<Vec<f64>> = run.chains[0].iter().map(|c| c.values()).collect();
    // Per-chain asymptotic variances, pooled over independent chains.
    let mut var_of_mean = 0.0;
    let mut ess = 0.0;
    for v in &values {
        let d = crate::diagnostics::integrated_autocorrelation(v);
        var_of_mean += d.asymptotic_variance / v.len() as f64;
        ess += d.ess;
    }
    let j = values.len() as f64;
    let mcmc_se = (var_of_mean / (j * j)).sqrt();
    let mcmc_mean = run.estimate.q_hat;
    let quadrature_se = (quadrature.fine.mean - quadrature.coarse.mean).abs();
    let z = (mcmc_mean - quadrature.fine.mean) / (mcmc_se * mcmc_se + quadrature_se * quadrature_se).sqrt();
    Ok(OracleComparison {
        rule: opts.rule,
        quadrature,
        mcmc_mean,
        mcmc_se,
        ess,
        quadrature_se,
        z,
    })
}

pub const ORACLE_HEADER: &str = "rule,quadrature_mean,quadrature_delta,mcmc_mean,mcmc_se,ess,z";

pub fn oracle_csv(rows: &[OracleComparison]) -> String {
    let mut s = format!("{ORACLE_HEADER}\n");
    for r in rows {
        let rule = match r.rule {
            AcceptanceRule::PriorReversible => "prior_reversible",
            AcceptanceRule::PosteriorRatio => "posterior_ratio",
        };
        s += &format!(
            "{rule},{},{},{},{},{},{}\n",
            r.quadrature.fine.mean, r.quadrature.relative_delta, r.mcmc_mean, r.mcmc_se, r.ess, r.z
        );
    }
    s
}

/// Quadrature versus MCMC on level 0 of the configured hierarchy, for both
/// acceptance rules. Level 0 must have at most three modes.
pub fn oracle(cfg: &ExperimentConfig, base: Option<&Path>, out: &Path) -> Result<Vec<OracleComparison>> {
    let problem = prepare(cfg, base)?;
    let level = problem.hierarchy.levels[0].clone();
    if level.truncation > oracle::MAX_QUADRATURE_DIM {
        return Err(Error::OracleBudget(format!(
            "level 0 has {} modes; the quadrature oracle handles at most {}",
            level.truncation,
            oracle::MAX_QUADRATURE_DIM
        )));
    }
    let post = DarcyPosterior::new(level.clone(), &problem.basis, &problem.data)?.with_likelihood(problem.likelihood);
    let rows = [AcceptanceRule::PriorReversible, AcceptanceRule::PosteriorRatio]
        .into_iter()
        .map(|rule| {
            let opts = SamplingOptions {
                rule,
                ..cfg.sampling_options()
            };
            oracle_compare(&post, cfg.oracle.nodes, &opts, level.step, cfg.oracle.samples)
        })
        .collect::<Result<Vec<_>>>()?;
    io::write(&out.join("oracle.csv"), &oracle_csv(&rows))?;
    Ok(rows)
}

pub const DATASETS: usize = 9;

/// Data behind the two performance figures: per-level statistics, the cost
/// comparison, acceptance rates, and estimates on nine seeded data sets
/// with an increasing number of levels.
pub fn figures(cfg: &ExperimentConfig, base: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let problem = prepare(cfg, base)?;
    let opts = cfg.sampling_options();
    let run = estimator::run_mlmcmc(&problem, &opts, &cfg.budget())?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        io::write(&p, &text)?;
        files.push(p);
        Ok(())
    };

    let mut levels = String::from("level,h,abs_mean_Y,var_Y,N_kept,cost_units\n");
    let mut accept = String::from("level,accept_coarse,accept_fine\n");
    for l in &run.estimate.levels {
        levels += &format!("{},{},{},{},{},{}\n", l.level, l.h, l.mean.abs(), l.variance, l.n_kept, l.cost_units);
        accept += &format!(
            "{},{},{}\n",
            l.level,
            l.accept_coarse.map(|a| a.to_string()).unwrap_or_default(),
            l.accept_fine
        );
    }
    put("figure1_levels.csv", levels)?;
    put("figure2_acceptance.csv", accept)?;
    let rows = compare_problem(&problem, &opts, &cfg.compare.epsilons)?;
    put("figure1_cost.csv", io::compare_csv(&rows))?;

    let mut sets = String::from("dataset,data_seed,max_level,q_hat,total_cost\n");
    for k in 0..DATASETS {
        let mut c = cfg.clone();
        c.data.seed = cfg.data.seed + k as u64;
        c.data.file = None;
        let p = prepare(&c, base)?;
        for top in 0..p.hierarchy.levels.len() {
            let mut sub = DarcyProblem {
                hierarchy: p.hierarchy.clone(),
                ..p.clone()
            };
            sub.hierarchy.levels.truncate(top + 1);
            let budget = match c.budget() {
                Budget::Fixed(n) => Budget::Fixed(n[..=top].to_vec()),
                b => b,
            };
            let e = estimator::run_mlmcmc(&sub, &opts, &budget)?.estimate;
            sets += &format!("{k},{},{top},{},{}\n", c.data.seed, e.q_hat, e.total_cost);
        }
    }
    put("figure2_datasets.csv", sets)?;
    Ok(files)
}
