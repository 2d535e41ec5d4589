//! Convergence diagnostics and posterior summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::sampler::{ChainSet, Parameter};

/// Serializes non-finite floats as strings so reports stay valid JSON.
pub mod lossless_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}

/// Split potential scale reduction factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rhat {
    /// Point estimate, floored at 1.
    #[serde(with = "lossless_f64")]
    pub value: f64,
    /// Point estimate before flooring; may dip below 1 by sampling noise.
    #[serde(with = "lossless_f64")]
    pub raw: f64,
    /// 97.5% upper confidence bound from the variance-ratio F construction.
    #[serde(with = "lossless_f64")]
    pub upper: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator.
fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn check_chains(chains: &[&[f64]], min_chains: usize) -> Result<usize> {
    if chains.len() < min_chains {
        return Err(Error::Diagnostics(format!(
            "need ≥{min_chains} chains, got {}",
            chains.len()
        )));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::Diagnostics("chains have mismatched lengths".into()));
    }
    if len < 4 {
        return Err(Error::Diagnostics(format!(
            "need at least 4 draws per chain, got {len}"
        )));
    }
    Ok(len)
}

/// Split-R-hat: each chain is halved and the halves compared as separate
/// sequences. With `L` draws per half, `W` the mean within-half variance and
/// `B / L` the variance of half means, `R = sqrt(((L-1)/L W + B/L) / W)`.
pub fn split_rhat(chains: &[&[f64]]) -> Result<Rhat> {
    let len = check_chains(chains, 2)?;
    let half = len / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[len - half..]])
        .collect();
    let m = halves.len() as f64;
    let l = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = halves.iter().map(|h| variance(h)).collect();
    let within = mean(&vars);
    let between = l * variance(&means);

    if within == 0.0 {
        let value = if between == 0.0 { 1.0 } else { f64::INFINITY };
        return Ok(Rhat {
            value,
            raw: value,
            upper: value,
        });
    }

    let fixed = (l - 1.0) / l;
    let random = between / (l * within);
    let raw = (fixed + random).sqrt();

    let var_within = variance(&vars) / m;
    let df_within = 2.0 * within * within / var_within;
    let df_between = m - 1.0;
    let quantile = if var_within > 0.0 && df_within.is_finite() && df_within < 1e7 {
        FisherSnedecor::new(df_between, df_within)
            .map_err(|e| Error::Diagnostics(e.to_string()))?
            .inverse_cdf(0.975)
    } else {
        ChiSquared::new(df_between)
            .map_err(|e| Error::Diagnostics(e.to_string()))?
            .inverse_cdf(0.975)
            / df_between
    };
    let value = raw.max(1.0);
    let upper = (fixed + quantile * random).sqrt().max(value);
    Ok(Rhat { value, raw, upper })
}

/// Multi-chain effective sample size using Geyer's initial monotone sequence
/// over the chain-averaged autocorrelations.
///
/// Constant input returns the total draw count. The result is capped at twice
/// the total draw count, which antithetic chains can approach.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<f64> {
    let n = check_chains(chains, 1)?;
    let m = chains.len();
    let total = (m * n) as f64;
    if chains.iter().any(|c| c.iter().any(|x| !x.is_finite())) {
        return Err(Error::Diagnostics("non-finite draw".into()));
    }

    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let centered: Vec<Vec<f64>> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| x - mu).collect())
        .collect();
    // Biased (1/n) autocovariance of one chain at `lag`.
    let acov = |c: &[f64], lag: usize| -> f64 {
        c[..n - lag]
            .iter()
            .zip(&c[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let mean_acov = |lag: usize| centered.iter().map(|c| acov(c, lag)).sum::<f64>() / m as f64;

    let nf = n as f64;
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += variance(&means);
    }
    if var_plus <= 0.0 {
        return Ok(total);
    }
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n + 1];
    let mut rho_even = 1.0;
    let mut rho_odd = rho(1);
    rho_hat[0] = rho_even;
    rho_hat[1] = rho_odd;

    // Geyer's initial positive sequence; the final pair is left out as a
    // bias term that reduces variance for antithetic chains.
    let mut t = 1;
    while t + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho(t + 1);
        rho_odd = rho(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[t + 1] = rho_even;
            rho_hat[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho_hat[max_t + 1] = rho_even;
    }

    // Initial monotone sequence.
    let mut t = 1;
    while t + 3 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }

    let tau = if rho_hat[0] + rho_hat[1] <= 0.0 {
        // Fully antithetic at lag 1: the spectral density at zero vanishes
        // and the estimate runs into the cap.
        -1.0 + 2.0 * (rho_hat[0] + rho_hat[1])
    } else {
        -1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t + 1]
    };
    Ok(total / tau.max(0.5))
}

/// Smallest draw `x` with empirical CDF `F(x) >= p`; `sorted` must be
/// ascending and nonempty.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub mean: f64,
    pub sd: f64,
    /// `100 sd / mean`; absent when the mean is zero.
    pub cv: Option<f64>,
}

impl ChainSummary {
    pub fn of(draws: &[f64]) -> Self {
        let mu = mean(draws);
        let sd = variance(draws).sqrt();
        ChainSummary {
            mean: mu,
            sd,
            cv: (mu != 0.0).then(|| 100.0 * sd / mu),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: Parameter,
    pub per_chain: Vec<ChainSummary>,
    pub draws: usize,
    pub mean: f64,
    pub sd: f64,
    pub interval: CredibleInterval,
    pub rhat: Option<Rhat>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub parameters: Vec<ParameterSummary>,
}

impl PosteriorReport {
    pub fn get(&self, parameter: Parameter) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.parameter == parameter)
    }

    /// Largest R-hat across parameters that have one.
    pub fn worst_rhat(&self) -> Option<(Parameter, f64)> {
        self.parameters
            .iter()
            .filter_map(|p| p.rhat.map(|r| (p.parameter, r.value)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Summarizes one parameter's per-chain draws.
pub fn summarize_parameter(parameter: Parameter, chains: &[&[f64]]) -> Result<ParameterSummary> {
    let draws: usize = chains.iter().map(|c| c.len()).sum();
    if draws == 0 || chains.iter().any(|c| c.is_empty()) {
        return Err(Error::Diagnostics(format!("no draws for {parameter}")));
    }
    let per_chain: Vec<ChainSummary> = chains.iter().map(|c| ChainSummary::of(c)).collect();
    let pooled_mean = per_chain
        .iter()
        .zip(chains)
        .map(|(s, c)| s.mean * c.len() as f64)
        .sum::<f64>()
        / draws as f64;
    let mut pooled: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let pooled_sd = variance(&pooled).sqrt();
    pooled.sort_by(f64::total_cmp);
    let interval = CredibleInterval {
        level: 0.95,
        lower: empirical_quantile(&pooled, 0.025),
        upper: empirical_quantile(&pooled, 0.975),
    };
    let equal = chains.iter().all(|c| c.len() == chains[0].len()) && chains[0].len() >= 4;
    let rhat = if equal && chains.len() >= 2 {
        Some(split_rhat(chains)?)
    } else {
        None
    };
    let ess = if equal {
        Some(effective_sample_size(chains)?)
    } else {
        None
    };
    Ok(ParameterSummary {
        parameter,
        per_chain,
        draws,
        mean: pooled_mean,
        sd: pooled_sd,
        interval,
        rhat,
        ess,
    })
}

/// Summaries for every recorded parameter, in recording order.
pub fn summarize(set: &ChainSet) -> Result<PosteriorReport> {
    summarize_only(set, &set.parameters)
}

pub fn summarize_only(set: &ChainSet, parameters: &[Parameter]) -> Result<PosteriorReport> {
    let parameters = parameters
        .iter()
        .map(|&p| summarize_parameter(p, &set.draws(&p.to_string())?))
        .collect::<Result<_>>()?;
    Ok(PosteriorReport { parameters })
}

/// One long-form trace row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub chain: usize,
    pub iteration: u64,
    pub parameter: Parameter,
    pub value: f64,
}

/// Trace of one parameter ordered by (chain, iteration).
pub fn trace_export(set: &ChainSet, name: &str) -> Result<Vec<TraceRecord>> {
    let at = set.position(name)?;
    let parameter = set.parameters[at];
    Ok(set
        .chains
        .iter()
        .flat_map(|c| {
            c.iterations
                .iter()
                .zip(&c.values[at])
                .map(move |(&iteration, &value)| TraceRecord {
                    chain: c.chain,
                    iteration,
                    parameter,
                    value,
                })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width histogram over the range of `values`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| Bin {
            lower: lo + b as f64 * width,
            upper: lo + (b + 1) as f64 * width,
            count,
        })
        .collect()
}
