//! Size-biased Bayesian estimation of the number of bugs left in a piece of
//! software and of its release reliability `Pr(R < epsilon)`.
//!
//! Testing data are counts of test cases and detected bugs per mission and
//! phase. Each candidate bug has an eventual size (how many inputs would ever
//! traverse it) and bigger bugs are easier to find. A Metropolis-within-Gibbs
//! sampler over an augmented population of `M` candidates recovers the total
//! bug count `N`, the sizes, and the total size `R` of bugs still hidden.
//!
//! ```no_run
//! use bugsize_core::{dataio, diagnostics, reliability, ModelConfig, SamplerConfig};
//!
//! let campaign = dataio::read_campaign("campaign.csv")?;
//! let draws = bugsize_core::sampler::run_all(
//!     &campaign,
//!     &ModelConfig::default(),
//!     &SamplerConfig { seed: 7, ..SamplerConfig::default() },
//! )?;
//! let report = diagnostics::summarize(&draws)?;
//! let curve = reliability::reliability_curve(&draws, &[100.0, 200.0])?;
//! # Ok::<(), bugsize_core::Error>(())
//! ```

pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod reliability;
pub mod sampler;
pub mod simulate;

pub use diagnostics::{PosteriorReport, Rhat};
pub use error::{Error, Result};
pub use model::{
    AugmentedState, BugAssignment, BugStatus, DetectionKernel, Grid, ModelConfig, Normalization,
    TestCampaign,
};
pub use reliability::ReliabilityTable;
pub use sampler::{ChainSet, Parameter, SamplerConfig};
pub use simulate::{GroundTruth, Protocol};
