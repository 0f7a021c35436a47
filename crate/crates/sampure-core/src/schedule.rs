//! Geometric noise schedules `sigma_1 > ... > sigma_L`.

use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleError {
    InvalidOrdering { sigma_max: f64, sigma_min: f64 },
    TooShort { len: usize },
    NotGeometric,
}

impl fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleError::InvalidOrdering { sigma_max, sigma_min } => {
                write!(f, "need sigma_max > sigma_min > 0, got {sigma_max} and {sigma_min}")
            }
            ScheduleError::TooShort { len } => write!(f, "schedule needs at least 2 levels, got {len}"),
            ScheduleError::NotGeometric => write!(f, "level ratios are not constant"),
        }
    }
}

/// Geometric sequence with exact endpoints; interior levels interpolate in
/// log space so consecutive ratios agree to rounding.
pub fn geometric_schedule(
    sigma_max: f64,
    sigma_min: f64,
    levels: usize,
) -> Result<NoiseSchedule, ScheduleError> {
    if levels < 2 {
        return Err(ScheduleError::TooShort { len: levels });
    }
    if !(sigma_max > sigma_min && sigma_min > 0.0) {
        return Err(ScheduleError::InvalidOrdering { sigma_max, sigma_min });
    }
    let log_max = libm::log(sigma_max);
    let log_min = libm::log(sigma_min);
    let mut sigmas = Vec::with_capacity(levels);
    sigmas.push(sigma_max);
    for i in 1..levels - 1 {
        let t = i as f64 / (levels - 1) as f64;
        sigmas.push(libm::exp(log_max + t * (log_min - log_max)));
    }
    sigmas.push(sigma_min);
    Ok(NoiseSchedule { sigmas })
}

impl NoiseSchedule {
    /// Validating constructor for schedules read back from disk.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self, ScheduleError> {
        if sigmas.len() < 2 {
            return Err(ScheduleError::TooShort { len: sigmas.len() });
        }
        if sigmas[sigmas.len() - 1] <= 0.0 || sigmas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(ScheduleError::InvalidOrdering {
                sigma_max: sigmas[0],
                sigma_min: sigmas[sigmas.len() - 1],
            });
        }
        let r0 = sigmas[1] / sigmas[0];
        for w in sigmas.windows(2) {
            let r = w[1] / w[0];
            if (r - r0).abs() / r0 > 1e-10 {
                return Err(ScheduleError::NotGeometric);
            }
        }
        Ok(NoiseSchedule { sigmas })
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// Noise scale at 1-based level `k`.
    pub fn sigma(&self, k: usize) -> f64 {
        self.sigmas[k - 1]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}
