//! pCN proposals, the single-level Metropolis–Hastings step and the coupled
//! two-level step that produces samples of `Y_l = Q_l - Q_{l-1}`.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{LevelTarget, PosteriorEvaluation};
use crate::rng::{RngStream, StreamId, StreamRole};

/// How the Metropolis–Hastings ratio is formed for pCN proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceRule {
    /// pCN is reversible with respect to the prior, so only likelihood
    /// ratios enter. Targets the level posterior exactly.
    #[default]
    PriorReversible,
    /// Full posterior ratios, treating pCN as a symmetric proposal.
    PosteriorRatio,
}

impl AcceptanceRule {
    fn log_density(self, e: &PosteriorEvaluation) -> f64 {
        match self {
            AcceptanceRule::PriorReversible => e.log_likelihood,
            AcceptanceRule::PosteriorRatio => e.log_posterior,
        }
    }
}

/// Accept/reject decision given `log alpha` (not yet clamped).
pub trait Decider {
    fn accept(&mut self, log_alpha: f64) -> bool;
}

impl Decider for RngStream {
    /// One uniform per call, whatever the outcome, so streams stay aligned.
    fn accept(&mut self, log_alpha: f64) -> bool {
        let u: f64 = self.gen();
        u < log_alpha.min(0.0).exp()
    }
}

/// Replays a fixed list of decisions; panics when exhausted.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDecider {
    pub decisions: VecDeque<bool>,
    pub seen: Vec<f64>,
}

impl ScriptedDecider {
    pub fn new(decisions: impl IntoIterator<Item = bool>) -> Self {
        Self {
            decisions: decisions.into_iter().collect(),
            seen: Vec::new(),
        }
    }
}

impl Decider for ScriptedDecider {
    fn accept(&mut self, log_alpha: f64) -> bool {
        self.seen.push(log_alpha);
        self.decisions.pop_front().expect("scripted decisions exhausted")
    }
}

/// `sqrt(1 - beta^2) theta + beta xi`. Accepts `beta = 0`.
pub fn pcn_map(theta: &[f64], beta: f64, xi: &[f64]) -> Vec<f64> {
    let a = (1.0 - beta * beta).sqrt();
    theta.iter().zip(xi).map(|(t, x)| a * t + beta * x).collect()
}

pub fn pcn_propose<R: Rng + ?Sized>(theta: &[f64], beta: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pCN step must lie in (0, 1], got {beta}"
        )));
    }
    let xi: Vec<f64> = (0..theta.len()).map(|_| StandardNormal.sample(rng)).collect();
    Ok(pcn_map(theta, beta, &xi))
}

/// Step size and acceptance rule shared by every transition of a chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub beta: f64,
    pub rule: AcceptanceRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub eval: PosteriorEvaluation,
    pub steps: u64,
    pub accepted: u64,
}

impl ChainState {
    pub fn new<T: LevelTarget + ?Sized>(target: &T, theta: Vec<f64>) -> Result<Self> {
        let eval = target.evaluate(&theta)?;
        Ok(Self {
            theta,
            eval,
            steps: 0,
            accepted: 0,
        })
    }

    pub fn rejected(&self) -> u64 {
        self.steps - self.accepted
    }

    /// Re-evaluate and compare with the cached evaluation.
    pub fn verify<T: LevelTarget + ?Sized>(&self, target: &T) -> Result<bool> {
        Ok(target.evaluate(&self.theta)? == self.eval)
    }
}

/// One Metropolis–Hastings transition with a pCN proposal. Exactly one
/// target evaluation. Returns whether the proposal was accepted.
pub fn mh_step_single<T, R, D>(
    state: &mut ChainState,
    target: &T,
    kernel: Kernel,
    rng: &mut R,
    decider: &mut D,
) -> Result<bool>
where
    T: LevelTarget + ?Sized,
    R: Rng + ?Sized,
    D: Decider + ?Sized,
{
    let proposal = pcn_propose(&state.theta, kernel.beta, rng)?;
    let eval = target.evaluate(&proposal)?;
    let log_alpha = kernel.rule.log_density(&eval) - kernel.rule.log_density(&state.eval);
    state.steps += 1;
    let accept = decider.accept(log_alpha);
    if accept {
        state.theta = proposal;
        state.eval = eval;
        state.accepted += 1;
    }
    Ok(accept)
}

/// Fine state `theta_l` paired with the coarse chain `Theta_{l-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledChainState {
    pub fine: Vec<f64>,
    /// Level-l evaluation of `fine`.
    pub fine_eval: PosteriorEvaluation,
    /// Level-(l-1) evaluation of the coarse part of `fine`.
    pub fine_coarse_eval: PosteriorEvaluation,
    pub coarse: ChainState,
    pub fine_steps: u64,
    pub fine_accepted: u64,
    pub y: f64,
}

impl CoupledChainState {
    /// `theta^0 = [Theta^0, fine_block]`.
    pub fn new<F, C>(fine: &F, coarse: &C, coarse_theta: Vec<f64>, fine_block: Vec<f64>) -> Result<Self>
    where
        F: LevelTarget + ?Sized,
        C: LevelTarget + ?Sized,
    {
        if coarse_theta.len() != coarse.dim() || coarse.dim() + fine_block.len() != fine.dim() {
            return Err(Error::InvalidArgument(format!(
                "coupled state: coarse {} + fine block {} does not match level dimensions ({}, {})",
                coarse_theta.len(),
                fine_block.len(),
                coarse.dim(),
                fine.dim()
            )));
        }
        let coarse_state = ChainState::new(coarse, coarse_theta)?;
        let mut theta = coarse_state.theta.clone();
        theta.extend(fine_block);
        let fine_eval = fine.evaluate(&theta)?;
        let fine_coarse_eval = coarse_state.eval.clone();
        let y = fine_eval.qoi - coarse_state.eval.qoi;
        Ok(Self {
            fine: theta,
            fine_eval,
            fine_coarse_eval,
            coarse: coarse_state,
            fine_steps: 0,
            fine_accepted: 0,
            y,
        })
    }

    pub fn coarse_len(&self) -> usize {
        self.coarse.theta.len()
    }

    pub fn fine_coarse_part(&self) -> &[f64] {
        &self.fine[..self.coarse_len()]
    }
}

/// Random sources of one coupled transition.
pub struct CoupledRngs<'a, R: ?Sized, D: ?Sized> {
    pub coarse_proposal: &'a mut R,
    pub coarse_accept: &'a mut D,
    pub fine_proposal: &'a mut R,
    pub fine_accept: &'a mut D,
}

/// One coupled transition: a coarse MH step, then a fine proposal whose
/// coarse block is the new coarse state. One evaluation per level.
/// Returns `(coarse accepted, fine accepted)`.
pub fn coupled_step<F, C, R, D>(
    state: &mut CoupledChainState,
    fine: &F,
    coarse: &C,
    kernel: Kernel,
    rngs: CoupledRngs<'_, R, D>,
) -> Result<(bool, bool)>
where
    F: LevelTarget + ?Sized,
    C: LevelTarget + ?Sized,
    R: Rng + ?Sized,
    D: Decider + ?Sized,
{
    let coarse_accepted = mh_step_single(
        &mut state.coarse,
        coarse,
        kernel,
        rngs.coarse_proposal,
        rngs.coarse_accept,
    )?;

    let rc = state.coarse_len();
    let fine_block = pcn_propose(&state.fine[rc..], kernel.beta, rngs.fine_proposal)?;
    let mut proposal = state.coarse.theta.clone();
    proposal.extend(fine_block);
    let eval = fine.evaluate(&proposal)?;

    let lp = |e: &PosteriorEvaluation| kernel.rule.log_density(e);
    let log_alpha = (lp(&eval) - lp(&state.fine_eval))
        + (lp(&state.fine_coarse_eval) - lp(&state.coarse.eval));
    state.fine_steps += 1;
    let fine_accepted = rngs.fine_accept.accept(log_alpha);
    if fine_accepted {
        state.fine = proposal;
        state.fine_eval = eval;
        state.fine_coarse_eval = state.coarse.eval.clone();
        state.fine_accepted += 1;
    }
    state.y = state.fine_eval.qoi - state.coarse.eval.qoi;
    Ok((coarse_accepted, fine_accepted))
}

/// Which posterior(s) a chain runs on.
#[derive(Clone, Copy)]
pub enum LevelPair<'a> {
    Single(&'a dyn LevelTarget),
    Coupled {
        fine: &'a dyn LevelTarget,
        coarse: &'a dyn LevelTarget,
    },
}

/// One kept sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Raw transition index, counted from 1 and including burn-in.
    pub step: u64,
    pub value: f64,
    pub accepted_coarse: Option<bool>,
    pub accepted_fine: bool,
    /// Solve cost units of all transitions so far.
    pub cumulative_cost: f64,
}

#[derive(Debug, Clone)]
enum StateKind {
    Single(ChainState),
    Coupled(CoupledChainState),
}

#[derive(Debug, Clone)]
struct Streams {
    proposal: RngStream,
    accept: RngStream,
    coarse_proposal: RngStream,
    coarse_accept: RngStream,
}

/// Counts of proposals and acceptances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub steps: u64,
    pub fine_accepted: u64,
    pub coarse_accepted: u64,
}

impl Tally {
    pub fn fine_rate(&self) -> f64 {
        self.fine_accepted as f64 / self.steps.max(1) as f64
    }
    pub fn coarse_rate(&self) -> f64 {
        self.coarse_accepted as f64 / self.steps.max(1) as f64
    }
}

/// A single-level or coupled chain that can be extended in place.
#[derive(Debug, Clone)]
pub struct LevelChain {
    pub level: usize,
    pub chain: usize,
    seed: u64,
    kernel: Kernel,
    thinning: usize,
    state: StateKind,
    streams: Streams,
    raw_steps: u64,
    cost: f64,
    burn_in: Tally,
    tally: Tally,
    records: Vec<SampleRecord>,
}

impl LevelChain {
    /// Draws the initial state from the prior on the `Init` stream.
    pub fn new(
        pair: LevelPair<'_>,
        seed: u64,
        level: usize,
        chain: usize,
        kernel: Kernel,
        thinning: usize,
    ) -> Result<Self> {
        if thinning == 0 {
            return Err(Error::InvalidArgument("thinning must be at least 1".into()));
        }
        let stream = |role| StreamId::new(seed, level, chain, role).open();
        let mut init = stream(StreamRole::Init);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut init)).collect() };
        let (state, cost) = match pair {
            LevelPair::Single(t) => {
                let s = ChainState::new(t, draw(t.dim()))?;
                let c = s.eval.cost_units;
                (StateKind::Single(s), c)
            }
            LevelPair::Coupled { fine, coarse } => {
                if coarse.dim() > fine.dim() {
                    return Err(Error::InvalidArgument(format!(
                        "coarse level has {} modes, fine level {}",
                        coarse.dim(),
                        fine.dim()
                    )));
                }
                let c0 = draw(coarse.dim());
                let f0 = draw(fine.dim() - coarse.dim());
                let s = CoupledChainState::new(fine, coarse, c0, f0)?;
                let c = s.fine_eval.cost_units + s.coarse.eval.cost_units;
                (StateKind::Coupled(s), c)
            }
        };
        Ok(Self {
            level,
            chain,
            seed,
            kernel,
            thinning,
            state,
            streams: Streams {
                proposal: stream(StreamRole::Proposal),
                accept: stream(StreamRole::Accept),
                coarse_proposal: stream(StreamRole::CoarseProposal),
                coarse_accept: stream(StreamRole::CoarseAccept),
            },
            raw_steps: 0,
            cost,
            burn_in: Tally::default(),
            tally: Tally::default(),
            records: Vec::new(),
        })
    }

    /// Every stream this chain draws from.
    pub fn stream_ids(&self) -> Vec<StreamId> {
        let mut roles = vec![StreamRole::Init, StreamRole::Proposal, StreamRole::Accept];
        if matches!(self.state, StateKind::Coupled(_)) {
            roles.extend([StreamRole::CoarseProposal, StreamRole::CoarseAccept]);
        }
        roles
            .into_iter()
            .map(|r| StreamId::new(self.seed, self.level, self.chain, r))
            .collect()
    }

    fn step(&mut self, pair: LevelPair<'_>) -> Result<(Option<bool>, bool)> {
        self.raw_steps += 1;
        match (&mut self.state, pair) {
            (StateKind::Single(s), LevelPair::Single(t)) => {
                let a = mh_step_single(s, t, self.kernel, &mut self.streams.proposal, &mut self.streams.accept)?;
                self.cost += s.eval.cost_units;
                Ok((None, a))
            }
            (StateKind::Coupled(s), LevelPair::Coupled { fine, coarse }) => {
                let st = &mut self.streams;
                let rngs = CoupledRngs {
                    coarse_proposal: &mut st.coarse_proposal,
                    coarse_accept: &mut st.coarse_accept,
                    fine_proposal: &mut st.proposal,
                    fine_accept: &mut st.accept,
                };
                let (ac, af) = coupled_step(s, fine, coarse, self.kernel, rngs)?;
                self.cost += s.fine_eval.cost_units + s.coarse.eval.cost_units;
                Ok((Some(ac), af))
            }
            _ => Err(Error::InvalidArgument(
                "chain kind does not match the supplied level pair".into(),
            )),
        }
    }

    fn count(t: &mut Tally, (ac, af): (Option<bool>, bool)) {
        t.steps += 1;
        t.fine_accepted += af as u64;
        t.coarse_accepted += ac.unwrap_or(false) as u64;
    }

    /// Discard `raw` transitions. Only valid before any sample is kept.
    pub fn burn_in(&mut self, pair: LevelPair<'_>, raw: u64) -> Result<()> {
        if !self.records.is_empty() {
            return Err(Error::InvalidArgument("burn-in after sampling started".into()));
        }
        for _ in 0..raw {
            let out = self.step(pair)?;
            Self::count(&mut self.burn_in, out);
        }
        Ok(())
    }

    /// Advance `kept * T` transitions, keeping every `T`-th value.
    pub fn extend(&mut self, pair: LevelPair<'_>, kept: usize) -> Result<()> {
        self.records.reserve(kept);
        for _ in 0..kept {
            let mut flags = (None, false);
            for _ in 0..self.thinning {
                let out = self.step(pair)?;
                Self::count(&mut self.tally, out);
                flags = out;
            }
            self.records.push(SampleRecord {
                step: self.raw_steps,
                value: self.current_value(),
                accepted_coarse: flags.0,
                accepted_fine: flags.1,
                cumulative_cost: self.cost,
            });
        }
        Ok(())
    }

    /// `Q` for a single-level chain, `Y` for a coupled one.
    pub fn current_value(&self) -> f64 {
        match &self.state {
            StateKind::Single(s) => s.eval.qoi,
            StateKind::Coupled(s) => s.y,
        }
    }

    pub fn is_coupled(&self) -> bool {
        matches!(self.state, StateKind::Coupled(_))
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value).collect()
    }

    pub fn kept(&self) -> usize {
        self.records.len()
    }

    pub fn raw_steps(&self) -> u64 {
        self.raw_steps
    }

    /// Tallies after burn-in.
    pub fn tally(&self) -> Tally {
        self.tally
    }

    pub fn burn_in_tally(&self) -> Tally {
        self.burn_in
    }

    pub fn solve_cost(&self) -> f64 {
        self.cost
    }

    pub fn coupled_state(&self) -> Option<&CoupledChainState> {
        match &self.state {
            StateKind::Coupled(s) => Some(s),
            StateKind::Single(_) => None,
        }
    }

    pub fn single_state(&self) -> Option<&ChainState> {
        match &self.state {
            StateKind::Single(s) => Some(s),
            StateKind::Coupled(_) => None,
        }
    }
}

/// Run a fresh chain: `burn_in` raw steps, then `kept` samples at thinning `T`.
pub fn run_chain(
    pair: LevelPair<'_>,
    seed: u64,
    level: usize,
    chain: usize,
    kernel: Kernel,
    burn_in: u64,
    thinning: usize,
    kept: usize,
) -> Result<LevelChain> {
    let mut c = LevelChain::new(pair, seed, level, chain, kernel, thinning)?;
    c.burn_in(pair, burn_in)?;
    c.extend(pair, kept)?;
    Ok(c)
}

pub const RECORD_HEADER: &str = "step,level,value,accepted_coarse,accepted_fine,cumulative_cost";

/// Append-only sample dump; `accepted_coarse` is empty for single-level chains.
pub fn write_records<W: Write>(level: usize, records: &[SampleRecord], mut out: W, header: bool) -> std::io::Result<()> {
    if header {
        writeln!(out, "{RECORD_HEADER}")?;
    }
    for r in records {
        let ac = match r.accepted_coarse {
            Some(a) => (a as u8).to_string(),
            None => String::new(),
        };
        writeln!(
            out,
            "{},{},{:e},{},{},{:e}",
            r.step, level, r.value, ac, r.accepted_fine as u8, r.cumulative_cost
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{prior_target, ToyTarget};

    fn kernel(beta: f64) -> Kernel {
        Kernel {
            beta,
            rule: AcceptanceRule::PriorReversible,
        }
    }

    #[test]
    fn pcn_limits() {
        let theta = [0.3, -1.0, 2.0];
        let xi = [1.0, 1.0, -0.5];
        assert_eq!(pcn_map(&theta, 0.0, &xi), theta.to_vec());
        assert_eq!(pcn_map(&theta, 1.0, &xi), xi.to_vec());
        let mut rng = StreamId::new(1, 0, 0, StreamRole::Proposal).open();
        assert!(pcn_propose(&theta, 0.0, &mut rng).is_err());
        assert!(pcn_propose(&theta, 1.5, &mut rng).is_err());
        assert_eq!(pcn_propose(&theta, 0.5, &mut rng).unwrap().len(), 3);
    }

    #[test]
    fn pcn_preserves_standard_normal_marginals() {
        let mut rng = StreamId::new(2, 0, 0, StreamRole::Proposal).open();
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let t: f64 = StandardNormal.sample(&mut rng);
            let p = pcn_propose(&[t], 0.3, &mut rng).unwrap()[0];
            s1 += p;
            s2 += p * p;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn uphill_moves_are_always_accepted() {
        let mut rng = StreamId::new(3, 0, 0, StreamRole::Accept).open();
        for _ in 0..1000 {
            assert!(rng.accept(0.0));
            assert!(rng.accept(3.0));
        }
    }

    #[test]
    fn rejection_leaves_state_unchanged() {
        let t = ToyTarget::new(2, |th: &[f64]| (-th[0] * th[0], th[1]));
        let mut s = ChainState::new(&t, vec![0.1, 0.2]).unwrap();
        let before = s.clone();
        let mut rng = StreamId::new(4, 0, 0, StreamRole::Proposal).open();
        let mut d = ScriptedDecider::new([false]);
        assert!(!mh_step_single(&mut s, &t, kernel(0.5), &mut rng, &mut d).unwrap());
        assert_eq!(s.theta, before.theta);
        assert_eq!(s.eval, before.eval);
        assert_eq!((s.steps, s.accepted, s.rejected()), (1, 0, 1));
    }

    #[test]
    fn flat_likelihood_posterior_rule_uses_prior_ratio() {
        let t = prior_target(3);
        let mut s = ChainState::new(&t, vec![0.5, -0.5, 1.0]).unwrap();
        let start = s.theta.clone();
        let mut rng = StreamId::new(5, 0, 0, StreamRole::Proposal).open();
        let mut check = rng.clone();
        let mut d = ScriptedDecider::new([true]);
        let k = Kernel {
            beta: 0.4,
            rule: AcceptanceRule::PosteriorRatio,
        };
        mh_step_single(&mut s, &t, k, &mut rng, &mut d).unwrap();
        let prop = pcn_propose(&start, 0.4, &mut check).unwrap();
        let expected = crate::posterior::log_prior(&prop) - crate::posterior::log_prior(&start);
        assert!((d.seen[0] - expected).abs() < 1e-14);
        let mut d = ScriptedDecider::new([true]);
        mh_step_single(&mut s, &t, kernel(0.4), &mut rng, &mut d).unwrap();
        assert_eq!(d.seen[0], 0.0);
    }

    /// Fine QoI depends on all modes so Y is non-trivial.
    fn two_levels() -> (impl LevelTarget, impl LevelTarget) {
        let fine = ToyTarget::new(3, |t: &[f64]| (-(t[0] - 0.3).powi(2) - t[2] * t[2], t[0] + 0.1 * t[2]));
        let coarse = ToyTarget::new(2, |t: &[f64]| (-(t[0] - 0.2).powi(2), t[0]));
        (fine, coarse)
    }

    fn table_row(coarse_accept: bool, fine_accept: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, CoupledChainState) {
        let (fine, coarse) = two_levels();
        let mut s = CoupledChainState::new(&fine, &coarse, vec![0.1, 0.2], vec![0.3]).unwrap();
        // Move the fine coarse-block away from Theta so the rows are distinguishable.
        s.fine = vec![-0.4, 0.6, 0.3];
        s.fine_eval = fine.evaluate(&s.fine).unwrap();
        s.fine_coarse_eval = coarse.evaluate(&s.fine[..2]).unwrap();
        let theta_n = s.coarse.theta.clone();
        let fine_c_n = s.fine[..2].to_vec();
        let mut cp = StreamId::new(6, 1, 0, StreamRole::CoarseProposal).open();
        let mut fp = StreamId::new(6, 1, 0, StreamRole::Proposal).open();
        let theta_prime = pcn_propose(&theta_n, 0.5, &mut cp.clone()).unwrap();
        let mut cd = ScriptedDecider::new([coarse_accept]);
        let mut fd = ScriptedDecider::new([fine_accept]);
        coupled_step(
            &mut s,
            &fine,
            &coarse,
            kernel(0.5),
            CoupledRngs {
                coarse_proposal: &mut cp,
                coarse_accept: &mut cd,
                fine_proposal: &mut fp,
                fine_accept: &mut fd,
            },
        )
        .unwrap();
        (theta_n, fine_c_n, theta_prime, s.coarse.theta.clone(), s)
    }

    #[test]
    fn coupling_table_rows() {
        // (reject, accept) -> (Theta^n, Theta^n)
        let (tn, _, _, t1, s) = table_row(false, true);
        assert_eq!(t1, tn);
        assert_eq!(s.fine_coarse_part(), &tn[..]);
        // (accept, accept) -> (Theta', Theta')
        let (_, _, tp, t1, s) = table_row(true, true);
        assert_eq!(t1, tp);
        assert_eq!(s.fine_coarse_part(), &tp[..]);
        // (reject, reject) -> (Theta^n, theta_C^n)
        let (tn, fcn, _, t1, s) = table_row(false, false);
        assert_eq!(t1, tn);
        assert_eq!(s.fine_coarse_part(), &fcn[..]);
        // (accept, reject) -> (Theta', theta_C^n)
        let (_, fcn, tp, t1, s) = table_row(true, false);
        assert_eq!(t1, tp);
        assert_eq!(s.fine_coarse_part(), &fcn[..]);
    }

    #[test]
    fn coupled_ratio_uses_four_likelihood_terms() {
        let (fine, coarse) = two_levels();
        let mut s = CoupledChainState::new(&fine, &coarse, vec![0.1, 0.2], vec![0.3]).unwrap();
        let old_fine = s.fine_eval.clone();
        let old_fc = s.fine_coarse_eval.clone();
        let mut cp = StreamId::new(7, 1, 0, StreamRole::CoarseProposal).open();
        let mut fp = StreamId::new(7, 1, 0, StreamRole::Proposal).open();
        let mut cd = ScriptedDecider::new([true]);
        let mut fd = ScriptedDecider::new([false]);
        let mut fp_check = fp.clone();
        coupled_step(
            &mut s,
            &fine,
            &coarse,
            kernel(0.5),
            CoupledRngs {
                coarse_proposal: &mut cp,
                coarse_accept: &mut cd,
                fine_proposal: &mut fp,
                fine_accept: &mut fd,
            },
        )
        .unwrap();
        let block = pcn_propose(&[0.3], 0.5, &mut fp_check).unwrap();
        let mut prop = s.coarse.theta.clone();
        prop.extend(block);
        let expected = fine.evaluate(&prop).unwrap().log_likelihood - old_fine.log_likelihood
            + old_fc.log_likelihood
            - coarse.evaluate(&s.coarse.theta).unwrap().log_likelihood;
        assert!((fd.seen[0] - expected).abs() < 1e-14);
        assert_eq!(s.y, s.fine_eval.qoi - s.coarse.eval.qoi);
    }

    struct Counting<'a, T> {
        inner: &'a T,
        calls: std::sync::atomic::AtomicUsize,
    }

    impl<T: LevelTarget> LevelTarget for Counting<'_, T> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn evaluate(&self, theta: &[f64]) -> Result<PosteriorEvaluation> {
            self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            self.inner.evaluate(theta)
        }
    }

    #[test]
    fn one_evaluation_per_level_per_step() {
        let (f, c) = two_levels();
        let fine = Counting { inner: &f, calls: 0.into() };
        let coarse = Counting { inner: &c, calls: 0.into() };
        let pair = LevelPair::Coupled { fine: &fine, coarse: &coarse };
        let mut chain = LevelChain::new(pair, 8, 1, 0, kernel(0.3), 1).unwrap();
        let f0 = fine.calls.load(std::sync::atomic::Ordering::Relaxed);
        let c0 = coarse.calls.load(std::sync::atomic::Ordering::Relaxed);
        chain.extend(pair, 50).unwrap();
        assert_eq!(fine.calls.into_inner() - f0, 50);
        assert_eq!(coarse.calls.into_inner() - c0, 50);
    }

    #[test]
    fn fine_accept_copies_coarse_state() {
        let (fine, coarse) = two_levels();
        let pair = LevelPair::Coupled { fine: &fine, coarse: &coarse };
        let mut chain = LevelChain::new(pair, 9, 1, 0, kernel(0.5), 1).unwrap();
        for _ in 0..500 {
            chain.extend(pair, 1).unwrap();
            let r = chain.records().last().unwrap();
            let s = chain.coupled_state().unwrap();
            if r.accepted_fine {
                assert_eq!(s.fine_coarse_part(), &s.coarse.theta[..]);
            }
            assert_eq!(s.y, s.fine_eval.qoi - s.coarse.eval.qoi);
        }
    }

    #[test]
    fn identical_levels_give_zero_differences() {
        let t = ToyTarget::new(2, |th: &[f64]| (-(th[0] - 1.0).powi(2) * 3.0, th[0] + th[1]));
        let pair = LevelPair::Coupled { fine: &t, coarse: &t };
        let chain = run_chain(pair, 10, 1, 0, kernel(0.5), 0, 1, 2000).unwrap();
        assert!(chain.values().iter().all(|&y| y == 0.0));
        assert_eq!(chain.tally().fine_accepted, 2000);
    }

    #[test]
    fn bookkeeping_and_determinism() {
        let t = prior_target(2);
        let pair = LevelPair::Single(&t);
        let a = run_chain(pair, 11, 0, 0, kernel(0.5), 7, 3, 20).unwrap();
        assert_eq!(a.raw_steps(), 7 + 20 * 3);
        assert_eq!(a.kept(), 20);
        assert_eq!(a.records()[0].step, 10);
        let b = run_chain(pair, 11, 0, 0, kernel(0.5), 7, 3, 20).unwrap();
        assert_eq!(a.records(), b.records());
        let c = run_chain(pair, 11, 0, 0, kernel(0.5), 0, 1, 5).unwrap();
        let steps: Vec<u64> = c.records().iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![1, 2, 3, 4, 5]);
        let mut out = Vec::new();
        write_records(0, c.records(), &mut out, true).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with(RECORD_HEADER));
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().starts_with("1,0,"));
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let t = prior_target(2);
        let mut chain = LevelChain::new(LevelPair::Single(&t), 1, 0, 0, kernel(0.5), 1).unwrap();
        let pair = LevelPair::Coupled { fine: &t, coarse: &t };
        assert!(chain.extend(pair, 1).is_err());
    }

    /// Empirical probability flux between histogram bins balances for a
    /// one-dimensional non-Gaussian target.
    #[test]
    fn detailed_balance_on_bins() {
        let t = ToyTarget::new(1, |th: &[f64]| (-(th[0] - 0.8).powi(2) / 0.5, th[0]));
        let mut s = ChainState::new(&t, vec![0.0]).unwrap();
        let mut rng = StreamId::new(12, 0, 0, StreamRole::Proposal).open();
        let mut acc = StreamId::new(12, 0, 0, StreamRole::Accept).open();
        let edges = [-1.0, 0.0, 0.6, 1.2, 2.5];
        let bin = |x: f64| edges.iter().position(|&e| x < e).unwrap_or(edges.len());
        let nb = edges.len() + 1;
        let mut flux = vec![0u64; nb * nb];
        let n = 400_000;
        for _ in 0..n {
            let a = bin(s.theta[0]);
            mh_step_single(&mut s, &t, kernel(0.8), &mut rng, &mut acc).unwrap();
            let b = bin(s.theta[0]);
            flux[a * nb + b] += 1;
        }
        for i in 0..nb {
            for j in (i + 1)..nb {
                let (f, r) = (flux[i * nb + j] as f64, flux[j * nb + i] as f64);
                if f + r < 400.0 {
                    continue;
                }
                // Correlated counts; allow a generous multiple of the Poisson sd.
                assert!((f - r).abs() < 6.0 * (f + r).sqrt(), "bins {i}->{j}: {f} vs {r}");
            }
        }
    }
}
