//! Estimating model parameters from measured timings.
//!
//! All fits are ordinary least squares in linear space. A sample annotated with
//! `n_messages = k` is treated as `k` back-to-back messages, so its time is divided by `k`
//! before fitting a per-message model.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{InjectionParams, LocalityClass, ModelError, PostalParams, ProtocolTable};

/// Timings below this are treated as a unit mistake.
pub const MIN_SECONDS: f64 = 1e-9;

/// A single-tier fit whose RMS residual is below this fraction of the RMS time is taken as
/// having no segmentation signal.
pub const NO_SIGNAL_RELATIVE_RMS: f64 = 1e-9;

/// Per-byte costs that differ by no more than this ratio across ppn values count as flat.
pub const FLAT_INJECTION_RATIO: f64 = 1.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("all samples share one message size; need at least two distinct sizes")]
    DegenerateSizes,
    #[error(
        "sample {index} has {seconds} s, below the {MIN_SECONDS} s resolution floor (check units)"
    )]
    Nonphysical { index: usize, seconds: f64 },
    #[error("insufficient span for a segmented fit: {0}")]
    InsufficientSpan(String),
    #[error("need samples at two or more distinct ppn values, found {0}")]
    NoPpnVariation(usize),
    #[error("no injection-limited samples: per-byte cost is flat in ppn (within 10%); rerun with larger ppn")]
    FlatInjection,
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One measured point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSample {
    pub bytes: u64,
    pub seconds: f64,
    pub ppn: Option<u32>,
    pub n_messages: Option<u64>,
    pub locality: Option<LocalityClass>,
}

impl TimingSample {
    pub fn new(bytes: u64, seconds: f64) -> Result<Self, FitError> {
        if !(seconds.is_finite() && seconds > 0.0) {
            return Err(FitError::InvalidSample(format!(
                "seconds must be positive, got {seconds}"
            )));
        }
        Ok(TimingSample {
            bytes,
            seconds,
            ppn: None,
            n_messages: None,
            locality: None,
        })
    }

    pub fn with_ppn(mut self, ppn: u32) -> Result<Self, FitError> {
        if ppn == 0 {
            return Err(FitError::InvalidSample("ppn must be at least 1".into()));
        }
        self.ppn = Some(ppn);
        Ok(self)
    }

    pub fn with_messages(mut self, n: u64) -> Result<Self, FitError> {
        if n == 0 {
            return Err(FitError::InvalidSample(
                "n_messages must be at least 1".into(),
            ));
        }
        self.n_messages = Some(n);
        Ok(self)
    }

    pub fn with_locality(mut self, locality: LocalityClass) -> Self {
        self.locality = Some(locality);
        self
    }

    fn messages(&self) -> f64 {
        self.n_messages.unwrap_or(1) as f64
    }

    fn per_message_seconds(&self) -> f64 {
        self.seconds / self.messages()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub params: PostalParams,
    /// Root-mean-square residual, seconds.
    pub residual: f64,
    pub sample_count: usize,
    /// A negative alpha or beta was clamped to zero and the other parameter refitted.
    pub clamped: bool,
}

impl FitResult {
    fn sse(&self) -> f64 {
        self.residual * self.residual * self.sample_count as f64
    }
}

fn check_resolution(samples: &[TimingSample]) -> Result<(), FitError> {
    match samples.iter().position(|s| s.seconds < MIN_SECONDS) {
        Some(index) => Err(FitError::Nonphysical {
            index,
            seconds: samples[index].seconds,
        }),
        None => Ok(()),
    }
}

/// Least-squares fit of `seconds ≈ alpha + beta * bytes` over `(bytes, seconds)` points.
fn ols(points: &[(f64, f64)]) -> Result<FitResult, FitError> {
    if points.len() < 2 {
        return Err(FitError::TooFewSamples {
            needed: 2,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(FitError::DegenerateSizes);
    }
    let mut beta = sxy / sxx;
    let mut alpha = mean_y - beta * mean_x;
    let mut clamped = false;
    if beta < 0.0 {
        beta = 0.0;
        alpha = mean_y;
        clamped = true;
    } else if alpha < 0.0 {
        alpha = 0.0;
        let sxx0: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy0: f64 = points.iter().map(|p| p.0 * p.1).sum();
        beta = (sxy0 / sxx0).max(0.0);
        clamped = true;
    }
    let params = PostalParams::new(alpha, beta)?;
    let sse: f64 = points
        .iter()
        .map(|&(x, y)| (y - alpha - beta * x).powi(2))
        .sum();
    Ok(FitResult {
        params,
        residual: (sse / n).sqrt(),
        sample_count: points.len(),
        clamped,
    })
}

fn points(samples: &[TimingSample]) -> Vec<(f64, f64)> {
    samples
        .iter()
        .map(|s| (s.bytes as f64, s.per_message_seconds()))
        .collect()
}

/// Postal parameters from single-message timings.
pub fn fit_postal(samples: &[TimingSample]) -> Result<FitResult, FitError> {
    if samples.len() < 2 {
        return Err(FitError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    check_resolution(samples)?;
    ols(&points(samples))
}

/// Three-tier fit with the breakpoints chosen by exhaustive search.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolFit {
    pub table: ProtocolTable,
    /// Total squared residual of the returned table.
    pub sse: f64,
    /// Total squared residual of one postal model over all samples.
    pub single_tier_sse: f64,
    /// No segmentation improved on the single-tier model; all tiers hold the same parameters.
    pub single_tier: bool,
    /// Per-tier fits, absent for the single-tier fallback.
    pub segments: Option<[FitResult; 3]>,
}

/// Integer threshold separating two consecutive distinct sizes, at their geometric mean.
/// `None` when no positive integer fits between them.
fn candidate_between(lower: u64, upper: u64) -> Option<u64> {
    let lo = lower.max(1);
    if upper == 0 || upper - 1 < lo {
        return None;
    }
    let mid = ((lower as f64) * (upper as f64)).sqrt().floor() as u64;
    Some(mid.clamp(lo, upper - 1))
}

/// Breakpoint candidates: one per gap between consecutive distinct observed sizes.
pub fn breakpoint_candidates(samples: &[TimingSample]) -> Vec<u64> {
    let mut sizes: Vec<u64> = samples.iter().map(|s| s.bytes).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .windows(2)
        .filter_map(|w| candidate_between(w[0], w[1]))
        .collect()
}

/// Short/eager/rendezvous parameters and thresholds fitted by segmented least squares.
///
/// Every pair of candidate thresholds is tried; the pair with the smallest total squared
/// residual wins, ties going to the smaller thresholds. If no pair leaves two distinct sizes
/// in every segment, or segmentation does not beat a single postal fit, the single fit is
/// replicated across the tiers and `single_tier` is set.
pub fn fit_protocol_table(samples: &[TimingSample]) -> Result<ProtocolFit, FitError> {
    if samples.len() < 6 {
        return Err(FitError::InsufficientSpan(format!(
            "need at least 6 samples, got {}",
            samples.len()
        )));
    }
    check_resolution(samples)?;
    let positive = samples.iter().map(|s| s.bytes).filter(|&b| b > 0);
    let (min, max) = positive.fold((u64::MAX, 0), |(lo, hi), b| (lo.min(b), hi.max(b)));
    if max == 0 || (max as f64) < 1e3 * min as f64 {
        return Err(FitError::InsufficientSpan(
            "message sizes must span at least 3 decades".to_string(),
        ));
    }

    let mut sorted = points(samples);
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let single = ols(&sorted)?;
    let single_sse = single.sse();

    let candidates = breakpoint_candidates(samples);
    let mut best: Option<(f64, u64, u64, [FitResult; 3])> = None;
    for (i, &short_max) in candidates.iter().enumerate() {
        let split1 = sorted.partition_point(|p| p.0 <= short_max as f64);
        let Ok(first) = ols(&sorted[..split1]) else {
            continue;
        };
        for &eager_max in &candidates[i + 1..] {
            let split2 = sorted.partition_point(|p| p.0 <= eager_max as f64);
            let (Ok(second), Ok(third)) = (ols(&sorted[split1..split2]), ols(&sorted[split2..]))
            else {
                continue;
            };
            let sse = first.sse() + second.sse() + third.sse();
            if best.as_ref().is_none_or(|b| sse < b.0) {
                best = Some((sse, short_max, eager_max, [first, second, third]));
            }
        }
    }

    let rms_y = (sorted.iter().map(|p| p.1 * p.1).sum::<f64>() / sorted.len() as f64).sqrt();
    let no_signal = single.residual <= NO_SIGNAL_RELATIVE_RMS * rms_y;
    match best {
        Some((sse, short_max, eager_max, fits)) if !no_signal && sse < single_sse => {
            Ok(ProtocolFit {
                table: ProtocolTable::new(
                    fits[0].params,
                    fits[1].params,
                    fits[2].params,
                    short_max,
                    eager_max,
                )?,
                sse,
                single_tier_sse: single_sse,
                single_tier: false,
                segments: Some(fits),
            })
        }
        _ => Ok(ProtocolFit {
            table: ProtocolTable::uniform(single.params),
            sse: single_sse,
            single_tier_sse: single_sse,
            single_tier: true,
            segments: None,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionFit {
    pub params: InjectionParams,
    /// RMS residual over the injection-limited samples, seconds.
    pub residual: f64,
    /// Number of injection-limited samples used.
    pub sample_count: usize,
}

/// Inverse injection rate from a ppn sweep.
///
/// `baseline` supplies the single-process latency and per-byte cost. Samples whose per-byte
/// cost exceeds `baseline.beta()` by more than 10% are taken as injection limited and fitted
/// to `seconds ≈ n * alpha + n * bytes * ppn * t_inject`. Samples without a ppn annotation
/// count as ppn = 1.
pub fn fit_injection(
    samples: &[TimingSample],
    baseline: &PostalParams,
) -> Result<InjectionFit, FitError> {
    check_resolution(samples)?;
    let mut by_ppn: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.bytes > 0) {
        let n = s.messages();
        let per_byte = (s.seconds - n * baseline.alpha()) / (n * s.bytes as f64);
        by_ppn.entry(s.ppn.unwrap_or(1)).or_default().push(per_byte);
    }
    if by_ppn.len() < 2 {
        return Err(FitError::NoPpnVariation(by_ppn.len()));
    }
    let means: Vec<f64> = by_ppn
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= FLAT_INJECTION_RATIO * lo.max(0.0) {
        return Err(FitError::FlatInjection);
    }

    let threshold = FLAT_INJECTION_RATIO * baseline.beta();
    let limited: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.bytes > 0)
        .filter_map(|s| {
            let n = s.messages();
            let excess = s.seconds - n * baseline.alpha();
            let volume = n * s.bytes as f64;
            (excess / volume > threshold).then(|| (volume * f64::from(s.ppn.unwrap_or(1)), excess))
        })
        .collect();
    if limited.is_empty() {
        return Err(FitError::FlatInjection);
    }
    let sxx: f64 = limited.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = limited.iter().map(|p| p.0 * p.1).sum();
    let t_inject = sxy / sxx;
    let sse: f64 = limited
        .iter()
        .map(|&(x, y)| (y - t_inject * x).powi(2))
        .sum();
    Ok(InjectionFit {
        params: InjectionParams::new(t_inject)?,
        residual: (sse / limited.len() as f64).sqrt(),
        sample_count: limited.len(),
    })
}
