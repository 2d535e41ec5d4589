//! Remaining eventual size and the reliability curve `Pr(R < epsilon)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AugmentedState, BugAssignment};
use crate::sampler::ChainSet;

/// `R = sum S_i z_i - sum S_i (1 - u_i)`. Detected candidates are always
/// real, so this is the total size of real candidates that were never seen.
pub fn remaining_size(state: &AugmentedState, assignment: &BugAssignment) -> u64 {
    state
        .z
        .iter()
        .zip(&state.sizes)
        .zip(assignment.statuses())
        .filter(|((&real, _), status)| real && status.undetected())
        .map(|((_, &size), _)| size)
        .sum()
}

fn remaining_draws(set: &ChainSet) -> Result<Vec<&[f64]>> {
    let draws = set.draws("R")?;
    if draws.iter().all(|c| c.is_empty()) {
        return Err(Error::Reliability("no draws of R".into()));
    }
    Ok(draws)
}

fn fraction_below(draws: &[f64], epsilon: f64) -> f64 {
    draws.iter().filter(|&&r| r < epsilon).count() as f64 / draws.len() as f64
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Reliability(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    Ok(())
}

/// Pooled fraction of kept draws with `R < epsilon`.
pub fn reliability_at(set: &ChainSet, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let draws = remaining_draws(set)?;
    let total: usize = draws.iter().map(|c| c.len()).sum();
    let below: usize = draws
        .iter()
        .map(|c| c.iter().filter(|&&r| r < epsilon).count())
        .sum();
    Ok(below as f64 / total as f64)
}

/// Per-chain `Pr(R < epsilon)`, for judging stability across chains.
pub fn reliability_per_chain(set: &ChainSet, epsilon: f64) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    Ok(remaining_draws(set)?
        .into_iter()
        .map(|c| {
            if c.is_empty() {
                f64::NAN
            } else {
                fraction_below(c, epsilon)
            }
        })
        .collect())
}

fn check_grid(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(Error::Reliability("empty epsilon list".into()));
    }
    if let Some(w) = epsilons.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Reliability(format!(
            "epsilon values must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    epsilons.iter().try_for_each(|&e| check_epsilon(e))
}

/// `(epsilon, Pr(R < epsilon))` for each point of a strictly increasing grid.
pub fn reliability_curve(set: &ChainSet, epsilons: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_grid(epsilons)?;
    epsilons
        .iter()
        .map(|&e| Ok((e, reliability_at(set, e)?)))
        .collect()
}

/// Pooled and per-chain reliability over an epsilon grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub epsilons: Vec<f64>,
    pub pooled: Vec<f64>,
    pub per_chain: Vec<Vec<f64>>,
}

impl ReliabilityTable {
    pub fn compute(set: &ChainSet, epsilons: &[f64]) -> Result<Self> {
        let curve = reliability_curve(set, epsilons)?;
        let per_chain = epsilons
            .iter()
            .map(|&e| reliability_per_chain(set, e))
            .collect::<Result<_>>()?;
        Ok(ReliabilityTable {
            epsilons: epsilons.to_vec(),
            pooled: curve.into_iter().map(|(_, p)| p).collect(),
            per_chain,
        })
    }

    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.epsilons
            .iter()
            .copied()
            .zip(self.pooled.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BugStatus;
    use crate::sampler::{Acceptance, ChainDraws, Parameter};
    use proptest::prelude::*;

    fn set_with_r(chains: Vec<Vec<f64>>) -> ChainSet {
        ChainSet {
            parameters: vec![Parameter::R],
            chains: chains
                .into_iter()
                .enumerate()
                .map(|(i, r)| ChainDraws {
                    chain: i,
                    seed: 0,
                    stream: i as u64,
                    iterations: (1..=r.len() as u64).collect(),
                    values: vec![r],
                    acceptance: Acceptance::default(),
                    full_states: None,
                })
                .collect(),
        }
    }

    #[test]
    fn remaining_size_cases() {
        let assignment = BugAssignment::new(vec![
            BugStatus::Detected {
                mission: 0,
                phase: 0,
            },
            BugStatus::Undetected,
            BugStatus::Undetected,
        ]);
        let mut state = AugmentedState {
            z: vec![true, true, false],
            sizes: vec![10, 20, 30],
            lambdas: vec![1.0; 3],
            psi: 0.5,
        };
        assert_eq!(remaining_size(&state, &assignment), 20);
        state.z = vec![true, false, false];
        assert_eq!(remaining_size(&state, &assignment), 0);
        state.z = vec![true, true, false];
        state.sizes[1] = 138;
        assert_eq!(remaining_size(&state, &assignment), 138);
    }

    #[test]
    fn strict_inequality_at_zero() {
        let set = set_with_r(vec![vec![0.0, 0.0, 5.0]]);
        assert_eq!(reliability_at(&set, 0.0).unwrap(), 0.0);
        assert!((reliability_at(&set, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(reliability_at(&set, 6.0).unwrap(), 1.0);
    }

    #[test]
    fn curve_validation() {
        let set = set_with_r(vec![vec![1.0, 2.0]]);
        assert!(reliability_curve(&set, &[5.0, 1.0]).is_err());
        assert!(reliability_curve(&set, &[1.0, 1.0]).is_err());
        assert_eq!(reliability_curve(&set, &[1.5]).unwrap(), vec![(1.5, 0.5)]);
        let empty = set_with_r(vec![vec![]]);
        assert!(reliability_at(&empty, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn curve_nondecreasing_and_pooled_is_weighted(
            a in proptest::collection::vec(0u32..300, 1..50),
            b in proptest::collection::vec(0u32..300, 1..50),
            mut grid in proptest::collection::vec(0u32..400, 1..10),
        ) {
            grid.sort_unstable();
            grid.dedup();
            let eps: Vec<f64> = grid.iter().map(|&e| f64::from(e)).collect();
            let set = set_with_r(vec![
                a.iter().map(|&x| f64::from(x)).collect(),
                b.iter().map(|&x| f64::from(x)).collect(),
            ]);
            let curve = reliability_curve(&set, &eps).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            for &e in &eps {
                let per = reliability_per_chain(&set, e).unwrap();
                let weighted = (per[0] * a.len() as f64 + per[1] * b.len() as f64)
                    / (a.len() + b.len()) as f64;
                prop_assert!((weighted - reliability_at(&set, e).unwrap()).abs() < 1e-12);
            }
        }
    }
}
