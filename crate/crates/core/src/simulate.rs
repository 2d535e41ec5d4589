//! Synthetic testing campaigns with known ground truth.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::summarize_only;
use crate::error::{Error, Result};
use crate::model::{
    cell_probabilities, BugStatus, DetectionKernel, Grid, ModelConfig, TestCampaign,
};
use crate::sampler::{run_all, sample_nb, Parameter, SamplerConfig};

/// Stream reserved for campaign generation; chains use streams `0..chains`.
const GENERATOR_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub missions: usize,
    pub phases: usize,
    pub true_bugs: usize,
    /// Inclusive range test-case counts are drawn uniformly from.
    pub t_min: u64,
    pub t_max: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            missions: 30,
            phases: 8,
            true_bugs: 100,
            t_min: 0,
            t_max: 50,
        }
    }
}

impl Protocol {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        model.validate()?;
        if self.missions == 0 || self.phases == 0 {
            return Err(Error::InvalidConfig(
                "need at least one mission and phase".into(),
            ));
        }
        if self.t_min > self.t_max {
            return Err(Error::InvalidConfig(format!(
                "t_min ({}) exceeds t_max ({})",
                self.t_min, self.t_max
            )));
        }
        if self.t_max == 0 {
            return Err(Error::NoTestingEffort);
        }
        if self.true_bugs > model.max_bugs {
            return Err(Error::InvalidConfig(format!(
                "true bug count {} exceeds candidate ceiling {}",
                self.true_bugs, model.max_bugs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueBug {
    pub lambda: f64,
    pub size: u64,
    pub alpha: f64,
    pub status: BugStatus,
    /// 1-based candidate slot the fitted model gives this bug, if detected.
    pub slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub max_bugs: usize,
    pub nu: f64,
    pub true_bugs: usize,
    pub detected: usize,
    pub psi: f64,
    pub bugs: Vec<TrueBug>,
}

impl GroundTruth {
    pub fn by_slot(&self, slot: usize) -> Option<&TrueBug> {
        self.bugs.iter().find(|b| b.slot == Some(slot))
    }
}

/// One categorical trial per bug over `{alpha p_jk, 1 - alpha}`.
pub fn simulate_detections<R: Rng + ?Sized>(
    sizes: &[u64],
    cells: &Grid<f64>,
    kernel: &DetectionKernel,
    rng: &mut R,
) -> Vec<BugStatus> {
    let pick = WeightedIndex::new(cells.as_slice()).expect("cell probabilities sum to one");
    sizes
        .iter()
        .map(|&s| {
            if rng.random::<f64>() < kernel.alpha(s) {
                let cell = pick.sample(rng);
                BugStatus::Detected {
                    mission: cell / cells.cols(),
                    phase: cell % cells.cols(),
                }
            } else {
                BugStatus::Undetected
            }
        })
        .collect()
}

fn draw_test_cases<R: Rng + ?Sized>(protocol: &Protocol, rng: &mut R) -> Grid<u64> {
    loop {
        let mut grid = Grid::filled(protocol.missions, protocol.phases, 0u64);
        for j in 0..protocol.missions {
            for k in 0..protocol.phases {
                grid.set(j, k, rng.random_range(protocol.t_min..=protocol.t_max));
            }
        }
        if grid.as_slice().iter().any(|&t| t > 0) {
            return grid;
        }
    }
}

/// Generates a campaign and the truth behind it.
pub fn generate_campaign<R: Rng + ?Sized>(
    model: &ModelConfig,
    protocol: &Protocol,
    rng: &mut R,
) -> Result<(TestCampaign, GroundTruth)> {
    protocol.validate(model)?;
    let test_cases = draw_test_cases(protocol, rng);
    let max_t = test_cases.as_slice().iter().copied().max().unwrap_or(0);
    let kernel = DetectionKernel::new(model.nu, max_t)?;
    let cells = cell_probabilities(&test_cases, model.normalization)?;

    let lambda_prior = Gamma::new(model.shape, 1.0 / model.rate)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let lambdas: Vec<f64> = (0..protocol.true_bugs)
        .map(|_| {
            model
                .fixed_lambda
                .unwrap_or_else(|| lambda_prior.sample(rng))
        })
        .collect();
    let sizes: Vec<u64> = lambdas
        .iter()
        .map(|&l| sample_nb(l, model.dispersion, rng))
        .collect();
    let statuses = simulate_detections(&sizes, &cells, &kernel, rng);

    let mut detected = Grid::filled(protocol.missions, protocol.phases, 0u64);
    for status in &statuses {
        if let BugStatus::Detected { mission, phase } = *status {
            detected.set(mission, phase, detected.get(mission, phase) + 1);
        }
    }

    // Slots follow the (mission, phase) order used when fitting, with ties
    // broken by generation order.
    let mut order: Vec<(usize, usize, usize)> = statuses
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match *s {
            BugStatus::Detected { mission, phase } => Some((mission, phase, i)),
            BugStatus::Undetected => None,
        })
        .collect();
    order.sort_unstable();
    let mut slots = vec![None; protocol.true_bugs];
    for (slot, &(_, _, i)) in order.iter().enumerate() {
        slots[i] = Some(slot + 1);
    }

    let bugs = (0..protocol.true_bugs)
        .map(|i| TrueBug {
            lambda: lambdas[i],
            size: sizes[i],
            alpha: kernel.alpha(sizes[i]),
            status: statuses[i],
            slot: slots[i],
        })
        .collect();
    let campaign = TestCampaign::new(test_cases, detected)?;
    let truth = GroundTruth {
        max_bugs: model.max_bugs,
        nu: model.nu,
        true_bugs: protocol.true_bugs,
        detected: order.len(),
        psi: protocol.true_bugs as f64 / model.max_bugs as f64,
        bugs,
    };
    Ok((campaign, truth))
}

/// Generator RNG for a seed, on a stream no chain uses.
pub fn generator_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GENERATOR_STREAM);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecovery {
    pub slot: usize,
    pub true_size: Option<u64>,
    pub true_lambda: Option<f64>,
    pub size_mean: f64,
    pub lambda_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub nu: f64,
    pub seed: u64,
    pub true_bugs: usize,
    pub detected: usize,
    pub psi_true: f64,
    pub n_mean: f64,
    pub psi_mean: f64,
    pub n_rhat: Option<f64>,
    pub psi_rhat: Option<f64>,
    pub slots: Vec<SlotRecovery>,
}

/// Generates and fits one campaign per `(nu, seed)` pair.
pub fn replicate_study(
    protocol: &Protocol,
    model: &ModelConfig,
    sampler: &SamplerConfig,
    nu_values: &[f64],
    seeds: &[u64],
) -> Result<Vec<StudyRow>> {
    if nu_values.is_empty() {
        return Err(Error::InvalidConfig("need at least one nu value".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let jobs: Vec<(f64, u64)> = nu_values
        .iter()
        .flat_map(|&nu| seeds.iter().map(move |&seed| (nu, seed)))
        .collect();
    jobs.into_par_iter()
        .map(|(nu, seed)| {
            study_row(protocol, model, sampler, nu, seed).map_err(|e| Error::Study {
                nu,
                source: Box::new(e),
            })
        })
        .collect()
}

fn study_row(
    protocol: &Protocol,
    model: &ModelConfig,
    sampler: &SamplerConfig,
    nu: f64,
    seed: u64,
) -> Result<StudyRow> {
    let model = ModelConfig {
        nu,
        ..model.clone()
    };
    let sampler = SamplerConfig {
        seed,
        ..sampler.clone()
    };
    let (campaign, truth) = generate_campaign(&model, protocol, &mut generator_rng(seed))?;
    let set = run_all(&campaign, &model, &sampler)?;
    let tracked = sampler.tracked_indices(model.max_bugs)?;

    let mut wanted = vec![Parameter::N, Parameter::Psi];
    for &i in &tracked {
        wanted.extend([Parameter::Size(i), Parameter::Lambda(i)]);
    }
    let report = summarize_only(&set, &wanted)?;
    let summary = |p: Parameter| report.get(p).expect("summarized above");

    let slots = tracked
        .iter()
        .map(|&slot| {
            let truth_bug = truth.by_slot(slot);
            SlotRecovery {
                slot,
                true_size: truth_bug.map(|b| b.size),
                true_lambda: truth_bug.map(|b| b.lambda),
                size_mean: summary(Parameter::Size(slot)).mean,
                lambda_mean: summary(Parameter::Lambda(slot)).mean,
            }
        })
        .collect();
    Ok(StudyRow {
        nu,
        seed,
        true_bugs: truth.true_bugs,
        detected: truth.detected,
        psi_true: truth.psi,
        n_mean: summary(Parameter::N).mean,
        psi_mean: summary(Parameter::Psi).mean,
        n_rhat: summary(Parameter::N).rhat.map(|r| r.value),
        psi_rhat: summary(Parameter::Psi).rhat.map(|r| r.value),
        slots,
    })
}
