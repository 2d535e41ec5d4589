//! Domain types, the detection kernel, and the prior/likelihood densities.
//!
//! A real bug `i` (`z_i = 1`) with eventual size `S_i` is detected at most once
//! over the whole testing campaign. It is detected with probability
//! `alpha(S_i) = 1 - exp(-S_i^nu / max T)`, and when detected it lands in
//! mission/phase cell `(j, k)` with probability `p_jk / sum(p)`, where
//! `p_jk = 1 - exp(-T_jk)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Dense row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Grid {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidCampaign("ragged matrix rows".into()));
        }
        Ok(Grid {
            rows: n_rows,
            cols: n_cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    /// Row-major view of every cell.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[T]>::to_vec)
            .collect()
    }
}

/// Observed testing data: test-case counts `T_jk` and detected-bug counts
/// `y_jk` over `J` missions by `K` phases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCampaign {
    missions: Vec<String>,
    phases: Vec<u32>,
    test_cases: Grid<u64>,
    detected: Grid<u64>,
}

impl TestCampaign {
    /// Builds a campaign with default labels `M1..MJ` and phases `1..K`.
    pub fn new(test_cases: Grid<u64>, detected: Grid<u64>) -> Result<Self> {
        let missions = (1..=test_cases.rows()).map(|j| format!("M{j}")).collect();
        let phases = (1..=test_cases.cols() as u32).collect();
        Self::with_labels(missions, phases, test_cases, detected)
    }

    pub fn from_rows(test_cases: Vec<Vec<u64>>, detected: Vec<Vec<u64>>) -> Result<Self> {
        Self::new(Grid::from_rows(test_cases)?, Grid::from_rows(detected)?)
    }

    pub fn with_labels(
        missions: Vec<String>,
        phases: Vec<u32>,
        test_cases: Grid<u64>,
        detected: Grid<u64>,
    ) -> Result<Self> {
        if test_cases.rows() == 0 || test_cases.cols() == 0 {
            return Err(Error::InvalidCampaign(
                "need at least one mission and one phase".into(),
            ));
        }
        if test_cases.rows() != detected.rows() || test_cases.cols() != detected.cols() {
            return Err(Error::InvalidCampaign(format!(
                "test-case matrix is {}x{} but detection matrix is {}x{}",
                test_cases.rows(),
                test_cases.cols(),
                detected.rows(),
                detected.cols()
            )));
        }
        if missions.len() != test_cases.rows() || phases.len() != test_cases.cols() {
            return Err(Error::InvalidCampaign(
                "label counts do not match matrix shape".into(),
            ));
        }
        Ok(TestCampaign {
            missions,
            phases,
            test_cases,
            detected,
        })
    }

    /// Number of missions `J`.
    pub fn missions(&self) -> usize {
        self.test_cases.rows()
    }

    /// Number of phases per mission `K`.
    pub fn phases(&self) -> usize {
        self.test_cases.cols()
    }

    pub fn mission_labels(&self) -> &[String] {
        &self.missions
    }

    pub fn phase_labels(&self) -> &[u32] {
        &self.phases
    }

    pub fn test_cases(&self) -> &Grid<u64> {
        &self.test_cases
    }

    pub fn detected(&self) -> &Grid<u64> {
        &self.detected
    }

    /// Total detected bugs `n`.
    pub fn n_detected(&self) -> u64 {
        self.detected.as_slice().iter().sum()
    }

    pub fn max_test_cases(&self) -> u64 {
        self.test_cases
            .as_slice()
            .iter()
            .copied()
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `p_jk / sum(p)`; cells with no test cases get zero mass.
    #[default]
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Candidate-population ceiling `M`.
    pub max_bugs: usize,
    /// Detection-decay exponent `nu`.
    pub nu: f64,
    /// Gamma shape `a_s` of the mean-size prior.
    pub shape: f64,
    /// Gamma rate `b_s` of the mean-size prior.
    pub rate: f64,
    /// Negative-binomial dispersion `r`; size variance is `lambda + lambda^2 / r`.
    pub dispersion: f64,
    pub normalization: Normalization,
    /// Truncates the size prior to `0..=cap`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_cap: Option<u64>,
    /// Holds every `lambda_i` at this value instead of sampling it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<f64>,
    /// When false the detection likelihood is replaced by the constant 1.
    #[serde(default = "default_true")]
    pub likelihood: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_bugs: 400,
            nu: 1.5,
            shape: 50.0,
            rate: 0.5,
            dispersion: 50.0,
            normalization: Normalization::Proportional,
            size_cap: None,
            fixed_lambda: None,
            likelihood: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        if self.max_bugs == 0 {
            return Err(Error::InvalidConfig("max_bugs must be at least 1".into()));
        }
        positive(self.nu, "nu")?;
        positive(self.shape, "shape")?;
        positive(self.rate, "rate")?;
        positive(self.dispersion, "dispersion")?;
        if let Some(lambda) = self.fixed_lambda {
            positive(lambda, "fixed_lambda")?;
        }
        Ok(())
    }

    /// Validates the config and checks `M >= n` for `campaign`.
    pub fn validate_for(&self, campaign: &TestCampaign) -> Result<()> {
        self.validate()?;
        let n = campaign.n_detected();
        if (self.max_bugs as u64) < n {
            return Err(Error::CeilingBelowDetected {
                ceiling: self.max_bugs,
                detected: n,
            });
        }
        if campaign.max_test_cases() == 0 {
            return Err(Error::NoTestingEffort);
        }
        Ok(())
    }
}

/// Outcome of the single categorical trial for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BugStatus {
    Detected { mission: usize, phase: usize },
    Undetected,
}

impl BugStatus {
    /// `u_i`: 1 iff the candidate was never detected.
    pub fn undetected(self) -> bool {
        matches!(self, BugStatus::Undetected)
    }
}

/// Per-candidate detection outcomes, the `M x (JK + 1)` indicator layout in
/// compact form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugAssignment {
    statuses: Vec<BugStatus>,
}

impl BugAssignment {
    pub fn new(statuses: Vec<BugStatus>) -> Self {
        BugAssignment { statuses }
    }

    pub fn len(&self) -> usize {
        self.statuses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statuses.is_empty()
    }

    pub fn status(&self, i: usize) -> BugStatus {
        self.statuses[i]
    }

    pub fn statuses(&self) -> &[BugStatus] {
        &self.statuses
    }

    pub fn detected_count(&self) -> usize {
        self.statuses.iter().filter(|s| !s.undetected()).count()
    }

    /// Aggregates detections back into `y_jk`.
    pub fn reconstruct_counts(&self, missions: usize, phases: usize) -> Grid<u64> {
        let mut y = Grid::filled(missions, phases, 0u64);
        for status in &self.statuses {
            if let BugStatus::Detected { mission, phase } = *status {
                y.set(mission, phase, y.get(mission, phase) + 1);
            }
        }
        y
    }

    /// Row `i` of the indicator layout: `JK` cell indicators then `w_i*`.
    pub fn indicator_row(&self, i: usize, missions: usize, phases: usize) -> Vec<u8> {
        let mut row = vec![0u8; missions * phases + 1];
        match self.statuses[i] {
            BugStatus::Detected { mission, phase } => row[mission * phases + phase] = 1,
            BugStatus::Undetected => row[missions * phases] = 1,
        }
        row
    }
}

/// One sampler state over all `M` candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub z: Vec<bool>,
    pub sizes: Vec<u64>,
    pub lambdas: Vec<f64>,
    pub psi: f64,
}

impl AugmentedState {
    /// `N = sum(z)`.
    pub fn n_real(&self) -> usize {
        self.z.iter().filter(|&&z| z).count()
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Per-phase detection probability `1 - exp(-t)`.
pub fn phase_detection_prob(test_cases: u64) -> f64 {
    -(-(test_cases as f64)).exp_m1()
}

/// Normalized cell probabilities over the `J x K` campaign grid.
pub fn cell_probabilities(test_cases: &Grid<u64>, policy: Normalization) -> Result<Grid<f64>> {
    match policy {
        Normalization::Proportional => {
            let raw: Vec<f64> = test_cases
                .as_slice()
                .iter()
                .map(|&t| phase_detection_prob(t))
                .collect();
            let total: f64 = raw.iter().sum();
            if total <= 0.0 {
                return Err(Error::NoTestingEffort);
            }
            Ok(Grid {
                rows: test_cases.rows(),
                cols: test_cases.cols(),
                data: raw.into_iter().map(|p| p / total).collect(),
            })
        }
    }
}

/// The size-biased detection kernel `alpha(s) = 1 - exp(-s^nu / t_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionKernel {
    nu: f64,
    t_max: f64,
}

impl DetectionKernel {
    pub fn new(nu: f64, t_max: u64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::KernelUndefined);
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "nu must be positive, got {nu}"
            )));
        }
        Ok(DetectionKernel {
            nu,
            t_max: t_max as f64,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    fn exponent(&self, size: u64) -> f64 {
        (size as f64).powf(self.nu) / self.t_max
    }

    pub fn alpha(&self, size: u64) -> f64 {
        -(-self.exponent(size)).exp_m1()
    }

    /// `ln alpha(s)`; `-inf` at `s = 0`.
    pub fn ln_alpha(&self, size: u64) -> f64 {
        (-(-self.exponent(size)).exp_m1()).ln()
    }

    /// `ln(1 - alpha(s))`, exact in the far tail where `alpha` rounds to 1.
    pub fn ln_miss(&self, size: u64) -> f64 {
        -self.exponent(size)
    }
}

/// Probability that a bug of size `size` is ever detected.
pub fn detection_prob(size: u64, nu: f64, t_max: u64) -> Result<f64> {
    Ok(DetectionKernel::new(nu, t_max)?.alpha(size))
}

/// Log-likelihood of one candidate's detection record given its size.
pub fn bug_log_likelihood(
    status: BugStatus,
    real: bool,
    size: u64,
    cells: &Grid<f64>,
    kernel: &DetectionKernel,
) -> Result<f64> {
    match (status, real) {
        (BugStatus::Undetected, false) => Ok(0.0),
        (BugStatus::Undetected, true) => Ok(kernel.ln_miss(size)),
        (BugStatus::Detected { mission, phase }, true) => {
            Ok(kernel.ln_alpha(size) + cells.get(mission, phase).ln())
        }
        (BugStatus::Detected { .. }, false) => Err(Error::ImpossibleConfiguration),
    }
}

/// Negative-binomial log-pmf with mean `mean` and dispersion `r`.
pub fn nb_log_pmf(size: u64, mean: f64, r: f64) -> f64 {
    let s = size as f64;
    ln_gamma(s + r) - ln_gamma(r) - ln_gamma(s + 1.0)
        + r * (r / (r + mean)).ln()
        + if size == 0 {
            0.0
        } else {
            s * (mean / (r + mean)).ln()
        }
}

/// Gamma log-density with shape `shape` and rate `rate`.
pub fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn phase_prob_closed_forms() {
        assert_eq!(phase_detection_prob(0), 0.0);
        assert!((phase_detection_prob(1) - (1.0 - 1.0 / E)).abs() < 1e-15);
        assert!((phase_detection_prob(1) - 0.632121).abs() < 1e-6);
        let p50 = phase_detection_prob(50);
        assert!(p50 < 1.0 || (1.0 - p50) < 1e-21);
    }

    #[test]
    fn cell_probabilities_examples() {
        let single = Grid::from_rows(vec![vec![1u64]]).unwrap();
        let p = cell_probabilities(&single, Normalization::Proportional).unwrap();
        assert_eq!(p.as_slice(), &[1.0]);

        let pair = Grid::from_rows(vec![vec![1u64, 1]]).unwrap();
        let p = cell_probabilities(&pair, Normalization::Proportional).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        // Reference computed independently: p = [0.63212, 0, 0.86466, 0.95021]
        // divided by their sum 2.44699.
        let t = Grid::from_rows(vec![vec![1u64, 0], vec![2, 3]]).unwrap();
        let p = cell_probabilities(&t, Normalization::Proportional).unwrap();
        let expected = [0.258326, 0.0, 0.353357, 0.388317];
        for (got, want) in p.as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn cell_probabilities_reject_zero_effort() {
        let t = Grid::from_rows(vec![vec![0u64, 0]]).unwrap();
        assert!(matches!(
            cell_probabilities(&t, Normalization::Proportional),
            Err(Error::NoTestingEffort)
        ));
    }

    #[test]
    fn detection_prob_examples() {
        assert_eq!(detection_prob(0, 1.5, 50).unwrap(), 0.0);
        let a = detection_prob(100, 1.5, 50).unwrap();
        assert!((a - (1.0 - (-20.0f64).exp())).abs() < 1e-15);
        assert!((a - 0.99999999794).abs() < 1e-11);
        let a = detection_prob(1, 1.0, 50).unwrap();
        assert!((a - 0.019801).abs() < 1e-6);
        assert!(matches!(
            detection_prob(3, 1.0, 0),
            Err(Error::KernelUndefined)
        ));
    }

    #[test]
    fn detection_prob_increases_with_nu_above_one() {
        let lo = detection_prob(5, 1.0, 50).unwrap();
        let hi = detection_prob(5, 1.5, 50).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn likelihood_cases() {
        let cells = Grid::from_rows(vec![vec![0.25, 0.75]]).unwrap();
        let kernel = DetectionKernel::new(1.5, 50).unwrap();
        assert_eq!(
            bug_log_likelihood(BugStatus::Undetected, false, 7, &cells, &kernel).unwrap(),
            0.0
        );
        // alpha(2) = 1 - exp(-2^nu / 3) = 1/2 when 2^nu = 3 ln 2.
        let nu = (3.0 * std::f64::consts::LN_2).log2();
        let half = DetectionKernel::new(nu, 3).unwrap();
        assert!((half.alpha(2) - 0.5).abs() < 1e-15);
        let ll = bug_log_likelihood(BugStatus::Undetected, true, 2, &cells, &half).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-14);

        let detected = BugStatus::Detected {
            mission: 0,
            phase: 0,
        };
        let ll = bug_log_likelihood(detected, true, 100, &cells, &kernel).unwrap();
        assert!((ll - (0.99999999794f64 * 0.25).ln()).abs() < 1e-10);
        assert!(matches!(
            bug_log_likelihood(detected, false, 100, &cells, &kernel),
            Err(Error::ImpossibleConfiguration)
        ));
    }

    #[test]
    fn likelihood_is_a_proper_categorical() {
        let t = Grid::from_rows(vec![vec![1u64, 0, 5], vec![2, 3, 9]]).unwrap();
        let cells = cell_probabilities(&t, Normalization::Proportional).unwrap();
        let kernel = DetectionKernel::new(1.25, 9).unwrap();
        for size in [0u64, 1, 2, 5, 20, 300] {
            let mut total = bug_log_likelihood(BugStatus::Undetected, true, size, &cells, &kernel)
                .unwrap()
                .exp();
            for mission in 0..2 {
                for phase in 0..3 {
                    let status = BugStatus::Detected { mission, phase };
                    total += bug_log_likelihood(status, true, size, &cells, &kernel)
                        .unwrap()
                        .exp();
                }
            }
            assert!((total - 1.0).abs() < 1e-12, "size {size}: {total}");
        }
    }

    #[test]
    fn nb_pmf_normalization_and_mean() {
        let (mean, r) = (5.0, 2.0);
        let (mut total, mut first) = (0.0, 0.0);
        for s in 0..2000u64 {
            let p = nb_log_pmf(s, mean, r).exp();
            total += p;
            first += s as f64 * p;
        }
        assert!((total - 1.0).abs() < 1e-9);
        assert!((first - mean).abs() < 1e-6);
    }

    #[test]
    fn nb_geometric_special_case() {
        // r = 1 is geometric with success probability r / (r + mean) = 1/2:
        // pmf(s) = 2^-(s + 1), so pmf(0) = 1/2 and sum over s of 2^-(s+1) = 1.
        assert!((nb_log_pmf(0, 1.0, 1.0).exp() - 0.5).abs() < 1e-14);
        for s in 0..30u64 {
            let want = 0.5f64.powi(s as i32 + 1);
            assert!((nb_log_pmf(s, 1.0, 1.0).exp() - want).abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_density_shape() {
        let (a, b) = (50.0, 0.5);
        // Mode at (a - 1) / b = 98.
        let at = |x: f64| gamma_log_pdf(x, a, b);
        assert!(at(98.0) > at(97.9) && at(98.0) > at(98.1));
        assert_eq!(at(0.0), f64::NEG_INFINITY);
        assert_eq!(at(-1.0), f64::NEG_INFINITY);

        // Simpson quadrature on (0, 400].
        let n = 40_000;
        let h = 400.0 / n as f64;
        let (mut mass, mut first) = (0.0, 0.0);
        for i in 0..=n {
            let x = i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let f = at(x).exp();
            mass += w * f;
            first += w * x * f;
        }
        mass *= h / 3.0;
        first *= h / 3.0;
        assert!((mass - 1.0).abs() < 1e-6);
        assert!((first - 100.0).abs() < 1e-4);
    }

    #[test]
    fn assignment_reconstructs_counts() {
        let a = BugAssignment::new(vec![
            BugStatus::Detected {
                mission: 1,
                phase: 0,
            },
            BugStatus::Undetected,
            BugStatus::Detected {
                mission: 1,
                phase: 0,
            },
        ]);
        let y = a.reconstruct_counts(2, 2);
        assert_eq!(y.to_rows(), vec![vec![0, 0], vec![2, 0]]);
        assert_eq!(a.indicator_row(1, 2, 2), vec![0, 0, 0, 0, 1]);
        assert_eq!(a.indicator_row(0, 2, 2), vec![0, 0, 1, 0, 0]);
    }

    #[test]
    fn campaign_validation() {
        assert!(TestCampaign::from_rows(vec![vec![1, 2]], vec![vec![0]]).is_err());
        assert!(TestCampaign::from_rows(vec![], vec![]).is_err());
        let c = TestCampaign::from_rows(vec![vec![3, 4]], vec![vec![1, 2]]).unwrap();
        assert_eq!(c.n_detected(), 3);
        assert_eq!(c.max_test_cases(), 4);
        let cfg = ModelConfig {
            max_bugs: 2,
            ..ModelConfig::default()
        };
        assert!(matches!(
            cfg.validate_for(&c),
            Err(Error::CeilingBelowDetected { .. })
        ));
    }

    proptest! {
        #[test]
        fn phase_prob_monotone_and_bounded(a in 0u64..10_000, b in 0u64..10_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (plo, phi) = (phase_detection_prob(lo), phase_detection_prob(hi));
            prop_assert!(plo <= phi);
            prop_assert!((0.0..=1.0).contains(&plo));
            prop_assert!(phi <= 1.0);
        }

        #[test]
        fn cells_sum_to_one(cells in proptest::collection::vec(0u64..60, 1..40)) {
            prop_assume!(cells.iter().any(|&t| t > 0));
            let g = Grid::from_rows(vec![cells]).unwrap();
            let p = cell_probabilities(&g, Normalization::Proportional).unwrap();
            let total: f64 = p.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn alpha_strictly_increasing(s in 0u64..40, ds in 1u64..20, nu in 0.5f64..2.0, t in 1u64..500) {
            let k = DetectionKernel::new(nu, t).unwrap();
            prop_assert_eq!(k.alpha(0), 0.0);
            let (a, b) = (k.alpha(s), k.alpha(s + ds));
            // Strict in exact arithmetic; saturates at 1.0 in f64.
            prop_assert!(b > a || a == 1.0);
        }
    }
}
