use std::collections::BTreeSet;
use std::fmt;

use super::{
    ComponentKind, ComponentProfile, CpuProfile, FilterKey, LatencyProfile, MeasurementSample,
    ProfileError,
};
use crate::config::ProxyMode;
use crate::sum::exact_sum;

/// Relative per-message CPU residual above which a sample set is reported
/// as not proportional to rate.
pub const A3_TOLERANCE: f64 = 0.05;

/// Unconstrained straight-line fit `y = intercept + slope · x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
}

impl LinearFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares using running (Welford) means and co-moments.
///
/// Returns `None` when the x values have no spread.
pub fn least_squares(points: &[(f64, f64)]) -> Option<LinearFit> {
    let mut n = 0.0;
    let (mut mean_x, mut mean_y) = (0.0, 0.0);
    let (mut m2_x, mut c_xy) = (0.0, 0.0);
    for &(x, y) in points {
        n += 1.0;
        let dx = x - mean_x;
        mean_x += dx / n;
        mean_y += (y - mean_y) / n;
        m2_x += dx * (x - mean_x);
        c_xy += dx * (y - mean_y);
    }
    if m2_x <= 0.0 || !m2_x.is_finite() || !c_xy.is_finite() {
        return None;
    }
    let slope = c_xy / m2_x;
    Some(LinearFit { intercept: mean_y - slope * mean_x, slope })
}

#[derive(Clone, Debug, PartialEq)]
pub enum FitNote {
    ClampedSlope { context: String, raw: f64 },
    ClampedIntercept { context: String, raw: f64 },
    NegativeDifference { metric: &'static str, size_bytes: u64, rate_rps: f64, value: f64 },
    RateDisproportion { context: String, max_relative_residual: f64 },
    SizeInsensitive { context: String },
    CpuUnavailable { context: String },
}

impl fmt::Display for FitNote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitNote::ClampedSlope { context, raw } => {
                write!(f, "{context}: fitted per-byte coefficient {raw:e} is negative, clamped to 0")
            }
            FitNote::ClampedIntercept { context, raw } => {
                write!(f, "{context}: fitted base coefficient {raw:e} is negative, clamped to 0")
            }
            FitNote::NegativeDifference { metric, size_bytes, rate_rps, value } => write!(
                f,
                "{metric} difference at {size_bytes} B / {rate_rps} rps is negative ({value:e}), clamped to 0"
            ),
            FitNote::RateDisproportion { context, max_relative_residual } => write!(
                f,
                "{context}: CPU is not proportional to rate (max per-message residual {:.1}% > {:.0}%)",
                max_relative_residual * 100.0,
                A3_TOLERANCE * 100.0
            ),
            FitNote::SizeInsensitive { context } => {
                write!(f, "{context}: single message size, per-byte terms set to 0")
            }
            FitNote::CpuUnavailable { context } => {
                write!(f, "{context}: no CPU measurements, CPU profile set to 0")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyFit {
    pub profile: LatencyProfile,
    /// Coefficients before non-negativity was enforced.
    pub raw: LinearFit,
    pub max_abs_residual_us: f64,
    pub notes: Vec<FitNote>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpuFit {
    pub profile: CpuProfile,
    pub raw: LinearFit,
    /// Largest |observed − fitted| per-message CPU, in CPU-seconds.
    pub max_abs_residual_cpu_s: f64,
    /// Largest residual relative to the fitted per-message CPU.
    pub max_relative_residual: f64,
    /// Set when `max_relative_residual` exceeds [`A3_TOLERANCE`].
    pub rate_disproportion: bool,
    pub notes: Vec<FitNote>,
}

fn context_of(samples: &[MeasurementSample]) -> String {
    match samples.first() {
        Some(s) => format!("{} ({})", s.component, s.proxy_mode),
        None => "empty sample set".to_string(),
    }
}

fn distinct_sizes(points: &[(f64, f64)]) -> usize {
    points.iter().map(|p| p.0.to_bits()).collect::<BTreeSet<_>>().len()
}

struct PointFit {
    raw: LinearFit,
    fit: LinearFit,
    notes: Vec<FitNote>,
}

/// Least squares constrained to non-negative coefficients.
fn fit_non_negative(points: &[(f64, f64)], context: &str) -> Result<PointFit, ProfileError> {
    let distinct = distinct_sizes(points);
    if points.len() < 2 || distinct < 2 {
        return Err(ProfileError::InsufficientSamples { context: context.to_string(), distinct_sizes: distinct });
    }
    let raw = least_squares(points).ok_or_else(|| ProfileError::DegenerateFit { context: context.to_string() })?;
    let mut notes = Vec::new();
    if raw.slope >= 0.0 && raw.intercept >= 0.0 {
        return Ok(PointFit { raw, fit: raw, notes });
    }
    if raw.slope < 0.0 {
        notes.push(FitNote::ClampedSlope { context: context.to_string(), raw: raw.slope });
    }
    if raw.intercept < 0.0 {
        notes.push(FitNote::ClampedIntercept { context: context.to_string(), raw: raw.intercept });
    }
    log::warn!("{context}: negative fitted coefficient clamped to 0");

    // The constrained optimum lies on a boundary: either slope = 0 or intercept = 0.
    let n = points.len() as f64;
    let mean_y = exact_sum(points.iter().map(|p| p.1)) / n;
    let flat = LinearFit { intercept: mean_y.max(0.0), slope: 0.0 };
    let sxx = exact_sum(points.iter().map(|p| p.0 * p.0));
    let sxy = exact_sum(points.iter().map(|p| p.0 * p.1));
    let through_origin = LinearFit { intercept: 0.0, slope: (sxy / sxx).max(0.0) };
    let sse = |f: &LinearFit| exact_sum(points.iter().map(|&(x, y)| (y - f.eval(x)).powi(2)));
    let fit = if sse(&through_origin) < sse(&flat) { through_origin } else { flat };
    Ok(PointFit { raw, fit, notes })
}

fn max_abs_residual(points: &[(f64, f64)], fit: &LinearFit) -> f64 {
    points.iter().map(|&(x, y)| (y - fit.eval(x)).abs()).fold(0.0, f64::max)
}

/// Fits `latency_us ≈ base_us + size · per_byte_us` over the samples.
pub fn fit_latency_profile(samples: &[MeasurementSample]) -> Result<LatencyFit, ProfileError> {
    let context = context_of(samples);
    let points: Vec<(f64, f64)> =
        samples.iter().map(|s| (s.message_size_bytes as f64, s.latency_us)).collect();
    let PointFit { raw, fit, notes } = fit_non_negative(&points, &context)?;
    Ok(LatencyFit {
        profile: LatencyProfile::new(fit.intercept, fit.slope),
        raw,
        max_abs_residual_us: max_abs_residual(&points, &fit),
        notes,
    })
}

/// Fits per-message CPU (`cpu_cores / request_rate_rps`) against size.
///
/// Samples without a CPU reading are skipped. Sample sets whose per-message
/// CPU drifts with rate are still fitted, with `rate_disproportion` set.
pub fn fit_cpu_profile(samples: &[MeasurementSample]) -> Result<CpuFit, ProfileError> {
    let context = context_of(samples);
    let mut points = Vec::with_capacity(samples.len());
    for s in samples {
        let Some(cores) = s.cpu_cores else { continue };
        if s.request_rate_rps == 0.0 {
            return Err(ProfileError::ZeroRate { size_bytes: s.message_size_bytes });
        }
        points.push((s.message_size_bytes as f64, cores / s.request_rate_rps));
    }
    let PointFit { raw, fit, mut notes } = fit_non_negative(&points, &context)?;

    let max_relative_residual = points
        .iter()
        .map(|&(x, y)| {
            let predicted = fit.eval(x);
            let residual = (y - predicted).abs();
            if predicted > 0.0 {
                residual / predicted
            } else if residual > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let rate_disproportion = max_relative_residual > A3_TOLERANCE;
    if rate_disproportion {
        notes.push(FitNote::RateDisproportion { context: context.clone(), max_relative_residual });
    }
    Ok(CpuFit {
        profile: CpuProfile::new(fit.intercept, fit.slope),
        raw,
        max_abs_residual_cpu_s: max_abs_residual(&points, &fit),
        max_relative_residual,
        rate_disproportion,
        notes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivedFilter {
    pub profile: ComponentProfile,
    pub notes: Vec<FitNote>,
}

fn grid_key(s: &MeasurementSample) -> (u64, u64) {
    (s.message_size_bytes, s.request_rate_rps.to_bits())
}

/// Derives a filter's profile from whole-sidecar measurements taken with and
/// without the filter on an otherwise identical setup.
///
/// Samples are paired by `(size, rate)` and subtracted before fitting.
/// With only one distinct size the filter is modelled as size-insensitive.
pub fn derive_filter_profile(
    filter: FilterKey,
    mode: ProxyMode,
    with_filter: &[MeasurementSample],
    without_filter: &[MeasurementSample],
) -> Result<DerivedFilter, ProfileError> {
    let mut with: Vec<&MeasurementSample> = with_filter.iter().collect();
    let mut without: Vec<&MeasurementSample> = without_filter.iter().collect();
    with.sort_by_key(|s| grid_key(s));
    without.sort_by_key(|s| grid_key(s));
    if with.len() != without.len() {
        return Err(ProfileError::MismatchedSampleGrid(format!(
            "{} samples with the filter, {} without",
            with.len(),
            without.len()
        )));
    }
    if with.is_empty() {
        return Err(ProfileError::InsufficientSamples { context: format!("filter {filter}"), distinct_sizes: 0 });
    }

    let kind = ComponentKind::Filter(filter);
    let context = format!("{kind} ({mode})");
    let mut notes = Vec::new();
    let mut latency_points = Vec::with_capacity(with.len());
    let mut cpu_points = Vec::with_capacity(with.len());
    let mut cpu_complete = true;

    for (a, b) in with.iter().zip(&without) {
        if grid_key(a) != grid_key(b) {
            return Err(ProfileError::MismatchedSampleGrid(format!(
                "{} B / {} rps has no counterpart (nearest: {} B / {} rps)",
                a.message_size_bytes, a.request_rate_rps, b.message_size_bytes, b.request_rate_rps
            )));
        }
        let size = a.message_size_bytes;
        let rate = a.request_rate_rps;
        latency_points.push((size as f64, clamp_difference(a.latency_us - b.latency_us, "latency", size, rate, &mut notes)));
        match (a.cpu_cores, b.cpu_cores) {
            (Some(x), Some(y)) => {
                if rate == 0.0 {
                    return Err(ProfileError::ZeroRate { size_bytes: size });
                }
                let diff = clamp_difference(x - y, "cpu", size, rate, &mut notes);
                cpu_points.push((size as f64, diff / rate));
            }
            _ => cpu_complete = false,
        }
    }

    let single_size = distinct_sizes(&latency_points) < 2;
    let flat = |points: &[(f64, f64)]| exact_sum(points.iter().map(|p| p.1)) / points.len() as f64;
    let latency = if single_size {
        LatencyProfile::new(flat(&latency_points), 0.0)
    } else {
        let f = fit_non_negative(&latency_points, &context)?;
        notes.extend(f.notes);
        LatencyProfile::new(f.fit.intercept, f.fit.slope)
    };
    let cpu = if !cpu_complete {
        notes.push(FitNote::CpuUnavailable { context: context.clone() });
        CpuProfile::ZERO
    } else if single_size {
        CpuProfile::new(flat(&cpu_points), 0.0)
    } else {
        let f = fit_non_negative(&cpu_points, &context)?;
        notes.extend(f.notes);
        CpuProfile::new(f.fit.intercept, f.fit.slope)
    };
    if single_size {
        notes.push(FitNote::SizeInsensitive { context });
    }
    Ok(DerivedFilter { profile: ComponentProfile::new(kind, latency, cpu, [mode]), notes })
}

fn clamp_difference(value: f64, metric: &'static str, size_bytes: u64, rate_rps: f64, notes: &mut Vec<FitNote>) -> f64 {
    if value < 0.0 {
        log::warn!("{metric} difference at {size_bytes} B is negative, clamped to 0");
        notes.push(FitNote::NegativeDifference { metric, size_bytes, rate_rps, value });
        0.0
    } else {
        value
    }
}
