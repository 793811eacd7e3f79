//! Level hierarchy, sample allocation, and the multilevel and single-level
//! estimators built on parallel chain groups.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DecayFit};
use crate::error::{Error, Result};
use crate::posterior::{
    fidelity_schedule, DarcyPosterior, LevelSpec, LevelTarget, Likelihood, ObservationSet,
};
use crate::random_field::KlBasis;
use crate::rng::StreamId;
use crate::samplers::{AcceptanceRule, Kernel, LevelChain, LevelPair};

/// `C_l = C* (eta_l M_l)^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub gamma: f64,
    pub c_star: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            c_star: 1.0,
        }
    }
}

pub fn level_cost(level: &LevelSpec, cost: CostModel) -> f64 {
    cost.c_star * level.cost_factor.powf(cost.gamma) * (level.dof as f64).powf(cost.gamma)
}

/// KL truncation per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationSchedule {
    Explicit(Vec<usize>),
    /// `R_l = R_{l-1} + ceil(c ln R_{l-1})`.
    Logarithmic { r0: usize, c: f64 },
}

impl TruncationSchedule {
    pub fn values(&self, levels: usize) -> Result<Vec<usize>> {
        match self {
            TruncationSchedule::Explicit(v) => {
                if v.len() != levels {
                    return Err(Error::InvalidArgument(format!(
                        "{} truncations given for {} levels",
                        v.len(),
                        levels
                    )));
                }
                if v.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidArgument(format!(
                        "truncation schedule {v:?} decreases"
                    )));
                }
                if v.first() == Some(&0) {
                    return Err(Error::InvalidArgument("truncation must be positive".into()));
                }
                Ok(v.clone())
            }
            TruncationSchedule::Logarithmic { r0, c } => {
                if *r0 == 0 || !(*c >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "logarithmic schedule needs r0 > 0 and c >= 0, got {r0}, {c}"
                    )));
                }
                let mut out = vec![*r0];
                for _ in 1..levels {
                    let prev = *out.last().unwrap();
                    out.push(prev + (c * (prev as f64).ln()).ceil() as usize);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyParams {
    /// Index of the finest level; there are `max_level + 1` levels.
    pub max_level: usize,
    pub m0: usize,
    pub truncation: TruncationSchedule,
    /// Step sizes from level 0 upward; the last entry repeats.
    pub betas: Vec<f64>,
    pub sigma2_f: f64,
    pub kappa: f64,
    /// `eta_l` for `l >= 1`; `eta_0 = 1`.
    pub eta: f64,
    pub cost: CostModel,
}

impl Default for HierarchyParams {
    fn default() -> Self {
        Self {
            max_level: 3,
            m0: 16,
            truncation: TruncationSchedule::Explicit(vec![96, 121, 153, 169]),
            betas: vec![0.15, 0.10],
            sigma2_f: 1e-4,
            kappa: 1.0,
            eta: 1.25,
            cost: CostModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelHierarchy {
    pub levels: Vec<LevelSpec>,
    pub cost: CostModel,
}

impl LevelHierarchy {
    /// Checks the cross-level invariants on hand-built levels.
    pub fn from_levels(levels: Vec<LevelSpec>, cost: CostModel) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("hierarchy has no levels".into()));
        }
        for w in levels.windows(2) {
            if w[1].truncation < w[0].truncation {
                return Err(Error::InvalidArgument(format!(
                    "truncation decreases from level {} to {}",
                    w[0].index, w[1].index
                )));
            }
        }
        if !(cost.gamma > 0.0 && cost.c_star > 0.0) {
            return Err(Error::InvalidArgument("cost model needs gamma > 0 and C* > 0".into()));
        }
        Ok(Self { levels, cost })
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn finest(&self) -> &LevelSpec {
        self.levels.last().unwrap()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.levels.iter().map(|l| level_cost(l, self.cost)).collect()
    }
}

pub fn build_hierarchy(p: &HierarchyParams) -> Result<LevelHierarchy> {
    let n = p.max_level + 1;
    let r = p.truncation.values(n)?;
    if p.betas.is_empty() {
        return Err(Error::InvalidArgument("empty step-size schedule".into()));
    }
    let m: Vec<usize> = (0..n).map(|l| p.m0 << l).collect();
    let h: Vec<f64> = m.iter().map(|&m| 1.0 / (m as f64 - 1.0)).collect();
    let fid = fidelity_schedule(p.sigma2_f, p.kappa, &h);
    let levels = (0..n)
        .map(|l| {
            let beta = p.betas[l.min(p.betas.len() - 1)];
            let eta = if l == 0 { 1.0 } else { p.eta };
            LevelSpec::new(l, m[l], r[l], fid[l], beta, eta)
        })
        .collect::<Result<Vec<_>>>()?;
    LevelHierarchy::from_levels(levels, p.cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub samples: Vec<usize>,
    /// Before rounding and flooring.
    pub unrounded: Vec<f64>,
}

/// `N_l = (2/eps^2) sqrt(s2_l / C_l) sum_k sqrt(s2_k C_k)`, rounded up, at
/// least `floor`, optionally multiplied by `factor`.
pub fn allocate_samples(
    s2: &[f64],
    costs: &[f64],
    eps: f64,
    floor: usize,
    factor: f64,
) -> Result<Allocation> {
    if s2.len() != costs.len() || s2.is_empty() {
        return Err(Error::InvalidArgument("allocation: length mismatch".into()));
    }
    if !(eps > 0.0) || s2.iter().any(|v| !(*v >= 0.0)) || costs.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::InvalidArgument(
            "allocation needs eps > 0, s2 >= 0 and positive costs".into(),
        ));
    }
    let total: f64 = s2.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    let unrounded: Vec<f64> = s2
        .iter()
        .zip(costs)
        .map(|(v, c)| factor * 2.0 / (eps * eps) * (v / c).sqrt() * total)
        .collect();
    let samples = unrounded
        .iter()
        .map(|u| (u.ceil() as usize).max(floor))
        .collect();
    Ok(Allocation { samples, unrounded })
}

/// Per-level stopping quantity `sum s2_l / N_l`.
pub fn variance_sum(s2: &[f64], n: &[usize]) -> f64 {
    s2.iter().zip(n).map(|(v, &n)| v / n as f64).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    /// Adaptive: run until `sum s2/N <= eps^2/2`.
    Tolerance(f64),
    /// Fixed number of kept samples per level (split evenly over chains).
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub chains: usize,
    /// Raw transitions discarded per chain.
    pub burn_in: u64,
    pub thinning: usize,
    pub seed: u64,
    pub rule: AcceptanceRule,
    pub min_samples: usize,
    /// Multiply allocations by `L + 1`.
    pub safety_factor: bool,
    /// Cap on raw transitions summed over all chains and levels.
    pub max_raw_steps: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            chains: 5,
            burn_in: 5_000,
            thinning: 10,
            seed: 1,
            rule: AcceptanceRule::PriorReversible,
            min_samples: 100,
            safety_factor: false,
            max_raw_steps: 200_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStatistics {
    pub level: usize,
    pub h: f64,
    pub m: usize,
    pub r: usize,
    pub sigma2_f: f64,
    pub beta: f64,
    pub n_kept: usize,
    pub mean: f64,
    pub variance: f64,
    pub chain_means: Vec<f64>,
    pub chain_variances: Vec<f64>,
    /// `None` on the coarsest level.
    pub accept_coarse: Option<f64>,
    pub accept_fine: f64,
    pub iact: f64,
    pub cost_per_sample: f64,
    /// `N T C_l`.
    pub cost_units: f64,
    /// `J n0 C_l`.
    pub burn_in_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilevelEstimate {
    pub q_hat: f64,
    pub levels: Vec<LevelStatistics>,
    pub total_cost: f64,
    pub burn_in_cost: f64,
    pub epsilon: Option<f64>,
    /// `sum s2_l / N_l` with the final statistics.
    pub variance_sum: f64,
    /// Stopping rule met (always true for fixed budgets).
    pub converged: bool,
    pub allocation: Option<Allocation>,
    pub warnings: Vec<String>,
    pub seed: u64,
    pub streams: Vec<String>,
}

/// The estimate plus the chains that produced it.
#[derive(Debug, Clone)]
pub struct MultilevelRun {
    pub estimate: MultilevelEstimate,
    pub chains: Vec<Vec<LevelChain>>,
}

fn pair<'a>(targets: &[&'a dyn LevelTarget], l: usize) -> LevelPair<'a> {
    if l == 0 {
        LevelPair::Single(targets[0])
    } else {
        LevelPair::Coupled {
            fine: targets[l],
            coarse: targets[l - 1],
        }
    }
}

fn level_statistics(spec: &LevelSpec, chains: &[LevelChain], cost: f64, opts: &SamplingOptions) -> LevelStatistics {
    let values: Vec<Vec<f64>> = chains.iter().map(|c| c.values()).collect();
    let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
    let n_kept: usize = values.iter().map(|v| v.len()).sum();
    let mean = values.iter().flatten().sum::<f64>() / n_kept as f64;
    let mut tally_steps = 0u64;
    let (mut fine, mut coarse) = (0u64, 0u64);
    for c in chains {
        let t = c.tally();
        tally_steps += t.steps;
        fine += t.fine_accepted;
        coarse += t.coarse_accepted;
    }
    let steps = tally_steps.max(1) as f64;
    let iacts: Vec<f64> = values
        .iter()
        .map(|v| diagnostics::integrated_autocorrelation(v).iact)
        .collect();
    LevelStatistics {
        level: spec.index,
        h: spec.spacing,
        m: spec.points_per_side,
        r: spec.truncation,
        sigma2_f: spec.fidelity,
        beta: spec.step,
        n_kept,
        mean,
        variance: diagnostics::gelman_rubin_variance(&refs),
        chain_means: values.iter().map(|v| diagnostics::mean(v)).collect(),
        chain_variances: values.iter().map(|v| diagnostics::sample_variance(v)).collect(),
        accept_coarse: chains[0].is_coupled().then(|| coarse as f64 / steps),
        accept_fine: fine as f64 / steps,
        iact: diagnostics::mean(&iacts),
        cost_per_sample: cost,
        cost_units: n_kept as f64 * opts.thinning as f64 * cost,
        burn_in_cost: chains.len() as f64 * opts.burn_in as f64 * cost,
    }
}

/// Multilevel estimator over arbitrary level targets; `targets[l]` is the
/// level-`l` posterior and `specs[l]` its parameters.
pub fn run_multilevel(
    targets: &[&dyn LevelTarget],
    hierarchy: &LevelHierarchy,
    opts: &SamplingOptions,
    budget: &Budget,
) -> Result<MultilevelRun> {
    let specs = &hierarchy.levels;
    let nl = specs.len();
    if targets.len() != nl {
        return Err(Error::InvalidArgument(format!(
            "{} targets for {} levels",
            targets.len(),
            nl
        )));
    }
    for (t, s) in targets.iter().zip(specs) {
        if t.dim() != s.truncation {
            return Err(Error::InvalidArgument(format!(
                "level {} target has {} modes, the level expects {}",
                s.index,
                t.dim(),
                s.truncation
            )));
        }
    }
    if opts.chains == 0 || opts.thinning == 0 {
        return Err(Error::InvalidArgument("need at least one chain and thinning >= 1".into()));
    }
    let j = opts.chains;
    let costs = hierarchy.costs();

    let mut chains: Vec<Vec<LevelChain>> = (0..nl)
        .map(|l| {
            let kernel = Kernel {
                beta: specs[l].step,
                rule: opts.rule,
            };
            (0..j)
                .map(|c| LevelChain::new(pair(targets, l), opts.seed, specs[l].index, c, kernel, opts.thinning))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut raw_total: u64 = 0;
    let mut advance = |chains: &mut Vec<Vec<LevelChain>>, per_chain: &[usize], burn: bool| -> Result<()> {
        let mut added = 0u64;
        for (l, group) in chains.iter().enumerate() {
            for c in group {
                let extra = per_chain[l].saturating_sub(c.kept());
                added += extra as u64 * opts.thinning as u64;
            }
        }
        if burn {
            added += nl as u64 * j as u64 * opts.burn_in;
        }
        if raw_total + added > opts.max_raw_steps {
            return Err(Error::Budget {
                cap: opts.max_raw_steps,
                taken: raw_total,
                kept: chains.iter().map(|g| g.iter().map(|c| c.kept()).sum()).collect(),
            });
        }
        raw_total += added;
        let mut flat: Vec<(usize, &mut LevelChain)> = chains
            .iter_mut()
            .enumerate()
            .flat_map(|(l, g)| g.iter_mut().map(move |c| (l, c)))
            .collect();
        flat.par_iter_mut().try_for_each(|(l, c)| -> Result<()> {
            let p = pair(targets, *l);
            if burn {
                c.burn_in(p, opts.burn_in)?;
            }
            let extra = per_chain[*l].saturating_sub(c.kept());
            c.extend(p, extra)
        })
    };

    let per_chain = |n: usize| n.div_ceil(j);
    let mut allocation = None;
    let converged;
    match budget {
        Budget::Fixed(n) => {
            if n.len() != nl || n.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "fixed budget needs {nl} positive sample counts, got {n:?}"
                )));
            }
            let target: Vec<usize> = n.iter().map(|&v| per_chain(v)).collect();
            advance(&mut chains, &target, true)?;
            converged = true;
        }
        Budget::Tolerance(eps) => {
            if !(*eps > 0.0) {
                return Err(Error::InvalidArgument(format!("tolerance must be positive, got {eps}")));
            }
            let factor = if opts.safety_factor { nl as f64 } else { 1.0 };
            let start = per_chain(opts.min_samples.max(2 * j)).max(2);
            advance(&mut chains, &vec![start; nl], true)?;
            loop {
                let s2: Vec<f64> = (0..nl)
                    .map(|l| level_statistics(&specs[l], &chains[l], costs[l], opts).variance)
                    .collect();
                let alloc = allocate_samples(&s2, &costs, *eps, opts.min_samples, factor)?;
                let wanted: Vec<usize> = alloc.samples.iter().map(|&n| per_chain(n)).collect();
                let have: Vec<usize> = chains.iter().map(|g| g[0].kept()).collect();
                let n_now: Vec<usize> = have.iter().map(|h| h * j).collect();
                let met = variance_sum(&s2, &n_now) <= eps * eps / 2.0;
                let enough = have.iter().zip(&wanted).all(|(h, w)| h >= w);
                allocation = Some(alloc);
                if met && enough {
                    break;
                }
                let next: Vec<usize> = if enough {
                    // Targets met but the rule is not: double everywhere.
                    have.iter().map(|h| 2 * h).collect()
                } else {
                    have.iter().zip(&wanted).map(|(&h, &w)| w.min(2 * h).max(h)).collect()
                };
                log::debug!("extending kept samples per chain {have:?} -> {next:?}");
                advance(&mut chains, &next, false)?;
            }
            converged = true;
        }
    }

    let levels: Vec<LevelStatistics> = (0..nl)
        .map(|l| level_statistics(&specs[l], &chains[l], costs[l], opts))
        .collect();
    let mut q_hat = 0.0;
    for s in &levels {
        q_hat += s.mean;
    }
    let s2: Vec<f64> = levels.iter().map(|s| s.variance).collect();
    let n: Vec<usize> = levels.iter().map(|s| s.n_kept).collect();
    let mut warnings = Vec::new();
    let epsilon = match budget {
        Budget::Tolerance(e) => Some(*e),
        Budget::Fixed(_) => None,
    };
    if let (Some(eps), true) = (epsilon, nl > 1) {
        let last = levels.last().unwrap().mean.abs();
        if last > eps / 2f64.sqrt() {
            let msg = format!(
                "finest correction |Y_L| = {last:.3e} exceeds eps/sqrt(2) = {:.3e}; more levels may be needed",
                eps / 2f64.sqrt()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let streams = chains
        .iter()
        .flatten()
        .flat_map(|c| c.stream_ids())
        .map(|s: StreamId| s.to_string())
        .collect();
    let estimate = MultilevelEstimate {
        q_hat,
        total_cost: levels.iter().map(|s| s.cost_units).sum(),
        burn_in_cost: levels.iter().map(|s| s.burn_in_cost).sum(),
        variance_sum: variance_sum(&s2, &n),
        levels,
        epsilon,
        converged,
        allocation,
        warnings,
        seed: opts.seed,
        streams,
    };
    Ok(MultilevelRun { estimate, chains })
}

/// Single-level estimator: one level with `eta = 1`.
pub fn run_single(
    target: &dyn LevelTarget,
    level: &LevelSpec,
    cost: CostModel,
    opts: &SamplingOptions,
    budget: &Budget,
) -> Result<MultilevelRun> {
    let mut spec = level.clone();
    spec.cost_factor = 1.0;
    let h = LevelHierarchy::from_levels(vec![spec], cost)?;
    run_multilevel(&[target], &h, opts, budget)
}

/// Basis, data and hierarchy of one Darcy experiment.
#[derive(Debug, Clone)]
pub struct DarcyProblem {
    pub basis: KlBasis,
    pub data: ObservationSet,
    pub hierarchy: LevelHierarchy,
    pub likelihood: Likelihood,
}

impl DarcyProblem {
    pub fn posteriors(&self) -> Result<Vec<DarcyPosterior>> {
        self.hierarchy
            .levels
            .iter()
            .map(|l| Ok(DarcyPosterior::new(l.clone(), &self.basis, &self.data)?.with_likelihood(self.likelihood)))
            .collect()
    }
}

pub fn run_mlmcmc(problem: &DarcyProblem, opts: &SamplingOptions, budget: &Budget) -> Result<MultilevelRun> {
    let posts = problem.posteriors()?;
    let targets: Vec<&dyn LevelTarget> = posts.iter().map(|p| p as &dyn LevelTarget).collect();
    run_multilevel(&targets, &problem.hierarchy, opts, budget)
}

/// Single-level baseline on the finest level of the hierarchy.
pub fn run_single_level(problem: &DarcyProblem, opts: &SamplingOptions, budget: &Budget) -> Result<MultilevelRun> {
    let finest = problem.hierarchy.finest();
    let post = DarcyPosterior::new(finest.clone(), &problem.basis, &problem.data)?
        .with_likelihood(problem.likelihood);
    run_single(&post, finest, problem.hierarchy.cost, opts, budget)
}

/// Decay fit over levels `1..=L` of an estimate.
pub fn decay_rates(estimate: &MultilevelEstimate) -> Result<DecayFit> {
    let lv = &estimate.levels[1.min(estimate.levels.len())..];
    let m: Vec<f64> = lv.iter().map(|s| s.mean).collect();
    let v: Vec<f64> = lv.iter().map(|s| s.variance).collect();
    let h: Vec<f64> = lv.iter().map(|s| s.h).collect();
    diagnostics::fit_decay_rates(&m, &v, &h)
}
