//! Metropolis-within-Gibbs sampler over the augmented candidate population.
//!
//! One sweep updates, in order: the inclusion indicators `z`, the inclusion
//! probability `psi`, the eventual sizes `S`, and the mean sizes `lambda`.
//! Chains are seeded from a base seed plus a per-chain ChaCha stream, so each
//! chain is reproducible on its own and independent of thread scheduling.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::build_assignment;
use crate::error::{Error, Result};
use crate::model::{
    nb_log_pmf, AugmentedState, BugAssignment, DetectionKernel, ModelConfig, TestCampaign,
};
use crate::reliability::remaining_size;

pub type ChainRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub thin: usize,
    /// Caps concurrently running chains; `None` uses the global pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// 1-based candidate indices whose `z`, `S` and `lambda` are recorded.
    /// `None` tracks candidates `1, 2, M-2, M-1, M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracked: Option<Vec<usize>>,
    /// Also keep the full per-candidate state of every kept draw.
    #[serde(default)]
    pub keep_full_state: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::new(50_000)
    }
}

impl SamplerConfig {
    /// Three chains of `iterations` each, discarding the first half.
    pub fn new(iterations: usize) -> Self {
        SamplerConfig {
            chains: 3,
            iterations,
            burn_in: iterations / 2,
            seed: 0,
            thin: 1,
            threads: None,
            tracked: None,
            keep_full_state: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("need at least one chain".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Kept draws per chain.
    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn tracked_indices(&self, max_bugs: usize) -> Result<Vec<usize>> {
        match &self.tracked {
            Some(list) => {
                if let Some(&bad) = list.iter().find(|&&i| i == 0 || i > max_bugs) {
                    return Err(Error::InvalidConfig(format!(
                        "tracked candidate {bad} outside 1..={max_bugs}"
                    )));
                }
                let mut list = list.clone();
                list.sort_unstable();
                list.dedup();
                Ok(list)
            }
            None => Ok(default_tracked(max_bugs)),
        }
    }
}

/// Candidates `1, 2, M-2, M-1, M`, clipped to `1..=M`.
pub fn default_tracked(max_bugs: usize) -> Vec<usize> {
    let m = max_bugs as i64;
    let mut out: Vec<usize> = [1, 2, m - 2, m - 1, m]
        .into_iter()
        .filter(|&i| i >= 1 && i <= m)
        .map(|i| i as usize)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// A recorded scalar. Candidate indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parameter {
    Psi,
    N,
    R,
    Z(usize),
    Size(usize),
    Lambda(usize),
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parameter::Psi => f.write_str("psi"),
            Parameter::N => f.write_str("N"),
            Parameter::R => f.write_str("R"),
            Parameter::Z(i) => write!(f, "z[{i}]"),
            Parameter::Size(i) => write!(f, "S[{i}]"),
            Parameter::Lambda(i) => write!(f, "lambda[{i}]"),
        }
    }
}

impl FromStr for Parameter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "psi" => return Ok(Parameter::Psi),
            "N" => return Ok(Parameter::N),
            "R" => return Ok(Parameter::R),
            _ => {}
        }
        let (head, rest) = s
            .split_once('[')
            .ok_or_else(|| format!("unrecognized parameter `{s}`"))?;
        let index: usize = rest
            .strip_suffix(']')
            .and_then(|i| i.parse().ok())
            .ok_or_else(|| format!("bad candidate index in `{s}`"))?;
        match head {
            "z" => Ok(Parameter::Z(index)),
            "S" => Ok(Parameter::Size(index)),
            "lambda" => Ok(Parameter::Lambda(index)),
            _ => Err(format!("unrecognized parameter `{s}`")),
        }
    }
}

impl Serialize for Parameter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Parameter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Proposal/acceptance tally for one Metropolis-Hastings update family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    fn merge(&mut self, other: MoveStats) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub size: Option<f64>,
    pub lambda: Option<f64>,
}

/// Full candidate state at one kept iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub iteration: u64,
    pub z: Vec<bool>,
    pub sizes: Vec<u64>,
    pub lambdas: Vec<f64>,
}

/// Kept draws of one chain, stored column-wise in `ChainSet::parameters` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain: usize,
    pub seed: u64,
    pub stream: u64,
    /// 1-based sweep number of each kept draw.
    pub iterations: Vec<u64>,
    pub values: Vec<Vec<f64>>,
    pub acceptance: Acceptance,
    pub full_states: Option<Vec<StateSnapshot>>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSet {
    pub parameters: Vec<Parameter>,
    pub chains: Vec<ChainDraws>,
}

impl ChainSet {
    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters.iter().map(ToString::to_string).collect()
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.parameters
            .iter()
            .position(|p| p.to_string() == name)
            .ok_or_else(|| Error::UnknownParameter {
                name: name.to_string(),
                available: self.parameter_names().join(", "),
            })
    }

    /// Per-chain draw sequences of one parameter.
    pub fn draws(&self, name: &str) -> Result<Vec<&[f64]>> {
        let at = self.position(name)?;
        Ok(self
            .chains
            .iter()
            .map(|c| c.values[at].as_slice())
            .collect())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }
}

/// Everything a sweep needs that does not change between iterations.
#[derive(Debug, Clone)]
pub struct FitContext {
    pub config: ModelConfig,
    pub kernel: DetectionKernel,
    pub assignment: BugAssignment,
    pub n_detected: usize,
}

impl FitContext {
    pub fn new(campaign: &TestCampaign, config: &ModelConfig) -> Result<Self> {
        config.validate_for(campaign)?;
        let kernel = DetectionKernel::new(config.nu, campaign.max_test_cases())?;
        let assignment = build_assignment(campaign, config.max_bugs)?;
        Ok(FitContext {
            config: config.clone(),
            kernel,
            n_detected: assignment.detected_count(),
            assignment,
        })
    }

    pub fn max_bugs(&self) -> usize {
        self.config.max_bugs
    }

    fn detected(&self, i: usize) -> bool {
        !self.assignment.status(i).undetected()
    }

    /// `ln P(record_i | S_i, z_i = 1)` up to the cell factor, which does not
    /// depend on the size.
    fn ln_likelihood(&self, i: usize, size: u64) -> f64 {
        if !self.config.likelihood {
            0.0
        } else if self.detected(i) {
            self.kernel.ln_alpha(size)
        } else {
            self.kernel.ln_miss(size)
        }
    }

    fn size_prior(&self) -> SizePrior {
        SizePrior {
            dispersion: self.config.dispersion,
            cap: self.config.size_cap,
        }
    }
}

/// Negative-binomial size prior, optionally truncated to `0..=cap`.
#[derive(Debug, Clone, Copy)]
pub struct SizePrior {
    pub dispersion: f64,
    pub cap: Option<u64>,
}

impl SizePrior {
    pub fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> u64 {
        match self.cap {
            None => sample_nb(mean, self.dispersion, rng),
            Some(cap) => {
                for _ in 0..64 {
                    let s = sample_nb(mean, self.dispersion, rng);
                    if s <= cap {
                        return s;
                    }
                }
                // Inverse CDF over the truncated support.
                let weights: Vec<f64> = (0..=cap)
                    .map(|s| nb_log_pmf(s, mean, self.dispersion).exp())
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (s, w) in weights.iter().enumerate() {
                    u -= w;
                    if u <= 0.0 {
                        return s as u64;
                    }
                }
                cap
            }
        }
    }

    /// Log normalizer of the truncated prior, 0 without a cap.
    fn ln_mass(&self, mean: f64) -> f64 {
        match self.cap {
            None => 0.0,
            Some(cap) => (0..=cap)
                .map(|s| nb_log_pmf(s, mean, self.dispersion).exp())
                .sum::<f64>()
                .ln(),
        }
    }
}

/// Gamma-Poisson draw from the negative binomial with mean `mean`.
pub fn sample_nb<R: Rng + ?Sized>(mean: f64, dispersion: f64, rng: &mut R) -> u64 {
    let rate = Gamma::new(dispersion, mean / dispersion)
        .expect("positive gamma parameters")
        .sample(rng);
    if rate <= 0.0 || !rate.is_finite() {
        return 0;
    }
    Poisson::new(rate)
        .expect("positive poisson rate")
        .sample(rng) as u64
}

/// Exact draw from `Beta(N + 1, M - N + 1)`.
pub fn draw_psi<R: Rng + ?Sized>(n_real: usize, max_bugs: usize, rng: &mut R) -> f64 {
    debug_assert!(n_real <= max_bugs);
    Beta::new((n_real + 1) as f64, (max_bugs - n_real + 1) as f64)
        .expect("beta parameters are at least 1")
        .sample(rng)
}

/// Conditional inclusion probability of an undetected candidate.
pub fn inclusion_prob(psi: f64, alpha: f64) -> f64 {
    inclusion_given_miss(psi, 1.0 - alpha)
}

fn inclusion_given_miss(psi: f64, miss: f64) -> f64 {
    let real = psi * miss;
    real / (real + (1.0 - psi))
}

/// Gibbs update of `z_i` for every undetected candidate.
pub fn update_z<R: Rng + ?Sized>(state: &mut AugmentedState, ctx: &FitContext, rng: &mut R) {
    let psi = state.psi;
    for i in 0..state.len() {
        if ctx.detected(i) {
            continue;
        }
        let miss = ctx.ln_likelihood(i, state.sizes[i]).exp();
        state.z[i] = rng.random::<f64>() < inclusion_given_miss(psi, miss);
    }
}

/// Independence Metropolis-Hastings on each real candidate's size, proposing
/// from the size prior; non-real candidates are redrawn from the prior.
pub fn update_sizes<R: Rng + ?Sized>(
    state: &mut AugmentedState,
    ctx: &FitContext,
    rng: &mut R,
) -> MoveStats {
    let prior = ctx.size_prior();
    let mut stats = MoveStats::default();
    for i in 0..state.len() {
        let proposal = prior.sample(state.lambdas[i], rng);
        if !state.z[i] {
            state.sizes[i] = proposal;
            continue;
        }
        stats.proposed += 1;
        let current = ctx.ln_likelihood(i, state.sizes[i]);
        let proposed = ctx.ln_likelihood(i, proposal);
        let accept = if current == f64::NEG_INFINITY {
            proposed > f64::NEG_INFINITY
        } else {
            let log_ratio = proposed - current;
            log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
        };
        if accept {
            state.sizes[i] = proposal;
            stats.accepted += 1;
        }
    }
    stats
}

/// Independence Metropolis-Hastings on each `lambda_i`, proposing from the
/// gamma posterior the Poisson limit of the size prior would give.
pub fn update_lambdas<R: Rng + ?Sized>(
    state: &mut AugmentedState,
    ctx: &FitContext,
    rng: &mut R,
) -> MoveStats {
    let mut stats = MoveStats::default();
    if ctx.config.fixed_lambda.is_some() {
        return stats;
    }
    let cfg = &ctx.config;
    let prior = ctx.size_prior();
    let r = cfg.dispersion;
    // log target - log proposal, up to terms constant in lambda.
    let log_weight = |lambda: f64, size: u64| {
        lambda - (r + size as f64) * (r + lambda).ln() - prior.ln_mass(lambda)
    };
    for i in 0..state.len() {
        let size = state.sizes[i];
        let proposal = Gamma::new(cfg.shape + size as f64, 1.0 / (cfg.rate + 1.0))
            .expect("positive gamma parameters")
            .sample(rng);
        if proposal <= 0.0 {
            continue;
        }
        stats.proposed += 1;
        let log_ratio = log_weight(proposal, size) - log_weight(state.lambdas[i], size);
        if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
            state.lambdas[i] = proposal;
            stats.accepted += 1;
        }
    }
    stats
}

/// Starting state: detected candidates real, the rest fair coin flips, and
/// `psi`, `lambda` and `S` from their priors.
pub fn initial_state<R: Rng + ?Sized>(ctx: &FitContext, rng: &mut R) -> AugmentedState {
    let m = ctx.max_bugs();
    let cfg = &ctx.config;
    let z = (0..m)
        .map(|i| ctx.detected(i) || rng.random_bool(0.5))
        .collect();
    let psi = rng.random::<f64>();
    let lambda_prior = Gamma::new(cfg.shape, 1.0 / cfg.rate).expect("positive gamma parameters");
    let lambdas: Vec<f64> = (0..m)
        .map(|_| cfg.fixed_lambda.unwrap_or_else(|| lambda_prior.sample(rng)))
        .collect();
    let prior = ctx.size_prior();
    let sizes = lambdas.iter().map(|&l| prior.sample(l, rng)).collect();
    AugmentedState {
        z,
        sizes,
        lambdas,
        psi,
    }
}

/// Recorded parameters for a given tracked set.
pub fn parameter_list(tracked: &[usize]) -> Vec<Parameter> {
    let mut out = vec![Parameter::Psi, Parameter::N, Parameter::R];
    for &i in tracked {
        out.extend([Parameter::Z(i), Parameter::Size(i), Parameter::Lambda(i)]);
    }
    out
}

pub fn chain_rng(seed: u64, chain: usize) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs one chain to completion and returns its kept draws.
pub fn run_chain(ctx: &FitContext, sampler: &SamplerConfig, chain: usize) -> Result<ChainDraws> {
    sampler.validate()?;
    let tracked = sampler.tracked_indices(ctx.max_bugs())?;
    let params = parameter_list(&tracked);
    let mut rng = chain_rng(sampler.seed, chain);

    let kept = sampler.kept();
    let mut iterations = Vec::with_capacity(kept);
    let mut values = vec![Vec::with_capacity(kept); params.len()];
    let mut full_states = sampler.keep_full_state.then(Vec::new);
    let (mut size_moves, mut lambda_moves) = (MoveStats::default(), MoveStats::default());

    let mut state = initial_state(ctx, &mut rng);
    for sweep in 0..sampler.iterations {
        update_z(&mut state, ctx, &mut rng);
        let n_real = state.n_real();
        state.psi = draw_psi(n_real, ctx.max_bugs(), &mut rng);
        size_moves.merge(update_sizes(&mut state, ctx, &mut rng));
        lambda_moves.merge(update_lambdas(&mut state, ctx, &mut rng));

        if sweep < sampler.burn_in || !(sweep - sampler.burn_in + 1).is_multiple_of(sampler.thin) {
            continue;
        }
        if iterations.len() == kept {
            break;
        }
        iterations.push(sweep as u64 + 1);
        let remaining = remaining_size(&state, &ctx.assignment);
        for (column, param) in values.iter_mut().zip(&params) {
            column.push(match *param {
                Parameter::Psi => state.psi,
                Parameter::N => n_real as f64,
                Parameter::R => remaining as f64,
                Parameter::Z(i) => f64::from(u8::from(state.z[i - 1])),
                Parameter::Size(i) => state.sizes[i - 1] as f64,
                Parameter::Lambda(i) => state.lambdas[i - 1],
            });
        }
        if let Some(states) = full_states.as_mut() {
            states.push(StateSnapshot {
                iteration: sweep as u64 + 1,
                z: state.z.clone(),
                sizes: state.sizes.clone(),
                lambdas: state.lambdas.clone(),
            });
        }
    }
    if iterations.len() != kept {
        return Err(Error::Chain {
            chain,
            source: Box::new(Error::InvalidConfig(format!(
                "expected {kept} kept draws, recorded {}",
                iterations.len()
            ))),
        });
    }

    Ok(ChainDraws {
        chain,
        seed: sampler.seed,
        stream: chain as u64,
        iterations,
        values,
        acceptance: Acceptance {
            size: size_moves.rate(),
            lambda: lambda_moves.rate(),
        },
        full_states,
    })
}

/// Runs every chain, concurrently when possible, and assembles them in chain
/// order.
pub fn run_all(
    campaign: &TestCampaign,
    model: &ModelConfig,
    sampler: &SamplerConfig,
) -> Result<ChainSet> {
    let ctx = FitContext::new(campaign, model)?;
    run_all_with(&ctx, sampler)
}

pub fn run_all_with(ctx: &FitContext, sampler: &SamplerConfig) -> Result<ChainSet> {
    sampler.validate()?;
    let tracked = sampler.tracked_indices(ctx.max_bugs())?;
    let run = || {
        (0..sampler.chains)
            .into_par_iter()
            .map(|c| {
                run_chain(ctx, sampler, c).map_err(|e| match e {
                    e @ Error::Chain { .. } => e,
                    e => Error::Chain {
                        chain: c,
                        source: Box::new(e),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let chains = match sampler.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(ChainSet {
        parameters: parameter_list(&tracked),
        chains,
    })
}
