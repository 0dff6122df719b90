//! Water-filling capacity and the frontier-by-frontier beamspace capacity search.

use serde::Serialize;

use crate::beamspace::BeamspaceChannel;
use crate::error::{Error, Result};
use crate::native_channel::{noise_power, LinkBudget};

/// Peak rate of 64-QAM at the highest 5G NR code rate, in bits/s/Hz.
pub const QAM64_RATE_CAP: f64 = 5.5547;

/// Water-filling solution over parallel subchannels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerAllocation {
    pub water_level: f64,
    pub powers: Vec<f64>,
    pub total_power: f64,
    pub noise: f64,
}

impl PowerAllocation {
    /// Modes receiving non-zero power.
    pub fn active_count(&self) -> usize {
        self.powers.iter().filter(|&&p| p > 0.0).count()
    }
}

/// Optimal power split for subchannel gains `s_k²/σ²`.
///
/// `singular_values` must be non-negative and sorted in descending order.
/// With `K` active modes the water level is `μ = (P + Σ_{k<K} σ²/s_k²) / K`
/// and `p_k = μ − σ²/s_k²`; `K` is the largest prefix for which every power is
/// positive.
pub fn water_fill(singular_values: &[f64], noise: f64, total_power: f64) -> Result<PowerAllocation> {
    if !(total_power.is_finite() && total_power > 0.0) {
        return Err(Error::input(format!("total power must be positive, got {total_power}")));
    }
    if !(noise.is_finite() && noise > 0.0) {
        return Err(Error::input(format!("noise power must be positive, got {noise}")));
    }
    if singular_values.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::input("singular values must be finite and non-negative"));
    }
    if singular_values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::input("singular values must be sorted in descending order"));
    }
    let positive = singular_values.iter().take_while(|&&s| s > 0.0).count();
    if positive == 0 {
        return Err(Error::NoCapacity);
    }

    let floors: Vec<f64> = singular_values[..positive].iter().map(|s| noise / (s * s)).collect();
    let mut prefix = 0.0;
    let mut best = (1, total_power + floors[0]);
    for (k, floor) in floors.iter().enumerate() {
        prefix += floor;
        let level = (total_power + prefix) / (k + 1) as f64;
        if level > *floor {
            best = (k + 1, level);
        } else {
            break;
        }
    }
    let (active, mut level) = best;
    // one correction step so the powers sum to P despite rounding
    let sum: f64 = floors[..active].iter().map(|f| level - f).sum();
    level += (total_power - sum) / active as f64;

    let mut powers = vec![0.0; singular_values.len()];
    for (p, f) in powers.iter_mut().zip(&floors[..active]) {
        *p = (level - f).max(0.0);
    }
    Ok(PowerAllocation { water_level: level, powers, total_power, noise })
}

pub fn effective_rank(alloc: &PowerAllocation) -> usize {
    alloc.active_count()
}

/// Per-mode SNRs and rates of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityResult {
    /// Bits/s/Hz summed over modes.
    pub spectral_efficiency: f64,
    pub snrs: Vec<f64>,
    pub rates: Vec<f64>,
    /// Whether a per-mode rate cap was applied.
    pub capped: bool,
}

impl CapacityResult {
    /// Bits per second over `bandwidth` hertz.
    pub fn capacity(&self, bandwidth: f64) -> f64 {
        self.spectral_efficiency * bandwidth
    }
}

/// Sums `log₂(1 + p_k s_k² / σ²)`, optionally clamping each mode's rate at
/// `cap` after allocation (which is not jointly optimal).
pub fn spectral_efficiency(
    alloc: &PowerAllocation,
    singular_values: &[f64],
    noise: f64,
    cap: Option<f64>,
) -> CapacityResult {
    let snrs: Vec<f64> = alloc
        .powers
        .iter()
        .zip(singular_values)
        .map(|(p, s)| p * s * s / noise)
        .collect();
    let rates: Vec<f64> = snrs
        .iter()
        .map(|snr| {
            let r = snr.ln_1p() / std::f64::consts::LN_2;
            cap.map_or(r, |c| r.min(c))
        })
        .collect();
    CapacityResult { spectral_efficiency: rates.iter().sum(), snrs, rates, capped: cap.is_some() }
}

/// Water-fills `singular_values` and evaluates the result in one step.
pub fn capacity_of(
    singular_values: &[f64],
    noise: f64,
    total_power: f64,
    cap: Option<f64>,
) -> Result<(PowerAllocation, CapacityResult)> {
    let alloc = water_fill(singular_values, noise, total_power)?;
    let result = spectral_efficiency(&alloc, singular_values, noise, cap);
    Ok((alloc, result))
}

/// Stopping threshold on the change in spectral efficiency between frontiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Tolerance {
    /// Bits/s/Hz.
    Absolute(f64),
    /// Fraction of the current spectral efficiency.
    Relative(f64),
}

impl Tolerance {
    pub fn threshold(&self, current_se: f64) -> f64 {
        match *self {
            Tolerance::Absolute(eps) => eps,
            Tolerance::Relative(r) => r * current_se.abs(),
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            Tolerance::Absolute(v) | Tolerance::Relative(v) => v,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::input(format!("tolerance must be positive, got {v}")))
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::Relative(1e-3)
    }
}

pub const DEFAULT_HARD_CAP: usize = 20;

/// One step of the capacity search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub i: usize,
    pub l_max: usize,
    /// Transmit modes in `H_HG^i`, i.e. reference signals sent so far.
    pub n_modes: usize,
    pub spectral_efficiency: f64,
    /// `|C_i − C_{i−1}|`, absent for the first frontier.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub tolerance: Tolerance,
    pub l_max: usize,
    pub spectral_efficiency: f64,
    /// Singular values of the final beamspace channel.
    pub singular_values: Vec<f64>,
    pub allocation: PowerAllocation,
    pub result: CapacityResult,
}

impl CapacityTrace {
    pub fn effective_rank(&self) -> usize {
        effective_rank(&self.allocation)
    }
}

/// Grows the beamspace one frontier at a time until the water-filling
/// spectral efficiency moves by no more than `tolerance`.
///
/// `channel_source(i)` must return `H_HG` over all modes with
/// `max(l, m) ≤ i`. The search starts from frontiers 0 and 1 (modes
/// `(0,0), (0,1), (1,0), (1,1)`) and stops at convergence or at frontier
/// `hard_cap`, whichever comes first; a capped run reports `converged = false`.
pub fn iterative_capacity<F>(
    mut channel_source: F,
    tolerance: Tolerance,
    total_power: f64,
    noise: f64,
    hard_cap: usize,
    rate_cap: Option<f64>,
) -> Result<CapacityTrace>
where
    F: FnMut(usize) -> Result<BeamspaceChannel>,
{
    tolerance.validate()?;
    if hard_cap < 1 {
        return Err(Error::input("hard cap must be at least one frontier"));
    }

    let mut records = Vec::new();
    let mut evaluate = |i: usize, records: &mut Vec<IterationRecord>| -> Result<(Vec<f64>, PowerAllocation, CapacityResult)> {
        let channel = channel_source(i)?;
        let svd = channel.decompose()?;
        let s: Vec<f64> = svd.s.iter().copied().collect();
        let (alloc, result) = capacity_of(&s, noise, total_power, rate_cap)?;
        let delta = records
            .last()
            .map(|r: &IterationRecord| (result.spectral_efficiency - r.spectral_efficiency).abs());
        records.push(IterationRecord {
            i,
            l_max: channel.l_max.unwrap_or(i),
            n_modes: channel.reference_signals(),
            spectral_efficiency: result.spectral_efficiency,
            delta,
        });
        Ok((s, alloc, result))
    };

    evaluate(0, &mut records)?;
    let mut last = evaluate(1, &mut records)?;
    let mut i = 1;
    let mut converged = false;
    loop {
        let rec = records.last().expect("at least two records");
        if rec.delta.unwrap_or(f64::INFINITY) <= tolerance.threshold(rec.spectral_efficiency) {
            converged = true;
            break;
        }
        if i >= hard_cap {
            break;
        }
        i += 1;
        last = evaluate(i, &mut records)?;
    }
    let (singular_values, allocation, result) = last;
    Ok(CapacityTrace {
        l_max: i,
        spectral_efficiency: result.spectral_efficiency,
        records,
        converged,
        tolerance,
        singular_values,
        allocation,
        result,
    })
}

/// [`iterative_capacity`] with power and noise taken from `link`.
pub fn iterative_capacity_for_link<F>(
    channel_source: F,
    tolerance: Tolerance,
    link: &LinkBudget,
    hard_cap: usize,
    rate_cap: Option<f64>,
) -> Result<CapacityTrace>
where
    F: FnMut(usize) -> Result<BeamspaceChannel>,
{
    iterative_capacity(channel_source, tolerance, link.tx_power_watts(), noise_power(link).watts, hard_cap, rate_cap)
}
