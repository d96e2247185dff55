//! Turns raw trace pairs into aligned, equal-length scalar series on a
//! common 10 ms grid: vector magnitude collapse, window truncation,
//! cross-truncation against the partner trace, then linear resampling.

use thiserror::Error;

use crate::trace::{DeviceRole, SampleValue, SensorKind, SensorTrace, TransactionId};

/// Resampling grid step. Fixed; the whole analysis assumes it.
pub const GRID_STEP_MS: f64 = 10.0;

/// Maximum permitted transaction time: samples beyond it are discarded.
pub const WINDOW_LIMIT_MS: f64 = 500.0;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("too few samples to resample ({have} usable, need at least 2 spanning one grid step)")]
    TooFewSamples { have: usize },
    #[error("traces record different sensors ({left} vs {right})")]
    SensorMismatch { left: SensorKind, right: SensorKind },
}

/// Scalar reading after magnitude collapse, still on the original irregular
/// time base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSample {
    pub t_ms: f64,
    pub value: f64,
}

/// Identifies which trace a preprocessed series came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeriesOrigin {
    pub transaction_id: TransactionId,
    pub role: DeviceRole,
    pub sensor: SensorKind,
}

impl SeriesOrigin {
    pub fn of(trace: &SensorTrace) -> SeriesOrigin {
        SeriesOrigin {
            transaction_id: trace.transaction_id(),
            role: trace.role(),
            sensor: trace.sensor(),
        }
    }
}

/// Preprocessed series: value `k` sits at time `k * GRID_STEP_MS`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSeries {
    pub origin: SeriesOrigin,
    pub values: Vec<f64>,
}

impl ScalarSeries {
    pub fn new(origin: SeriesOrigin, values: Vec<f64>) -> ScalarSeries {
        ScalarSeries { origin, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid_time_ms(&self, k: usize) -> f64 {
        k as f64 * GRID_STEP_MS
    }
}

/// Euclidean magnitude of a 3-vector reading.
pub fn magnitude(x: f64, y: f64, z: f64) -> f64 {
    (x * x + y * y + z * z).sqrt()
}

/// Collapses a trace to scalar samples: vector sensors go through
/// [`magnitude`], Light passes through unchanged.
pub fn scalarize(trace: &SensorTrace) -> Vec<ScalarSample> {
    trace
        .samples()
        .iter()
        .map(|s| ScalarSample {
            t_ms: s.t_ms,
            value: match s.value {
                SampleValue::Scalar(v) => v,
                SampleValue::Vector(x, y, z) => magnitude(x, y, z),
            },
        })
        .collect()
}

/// Keeps samples recorded at or before `limit_ms`.
pub fn truncate_window(samples: &[ScalarSample], limit_ms: f64) -> Vec<ScalarSample> {
    samples.iter().copied().filter(|s| s.t_ms <= limit_ms).collect()
}

/// Discards samples on either side recorded after the other side's last
/// sample, cutting both to the common span T = min of the two last-sample
/// times. The side extending past T keeps its signal value at exactly T as
/// an interpolated boundary sample (collinear with its neighbors, so
/// interpolation below T is unaffected). Symmetric, and a fixed point on
/// its own output.
pub fn cross_truncate(
    a: &[ScalarSample],
    b: &[ScalarSample],
) -> (Vec<ScalarSample>, Vec<ScalarSample>) {
    let (max_a, max_b) = match (a.last(), b.last()) {
        (Some(la), Some(lb)) => (la.t_ms, lb.t_ms),
        _ => return (Vec::new(), Vec::new()),
    };
    let cut = max_a.min(max_b);
    let a2 = clip_to(a, cut);
    let b2 = clip_to(b, cut);
    if a2.is_empty() || b2.is_empty() {
        return (Vec::new(), Vec::new());
    }
    (a2, b2)
}

fn clip_to(samples: &[ScalarSample], cut: f64) -> Vec<ScalarSample> {
    let kept = samples.partition_point(|s| s.t_ms <= cut);
    let mut out = samples[..kept].to_vec();
    if kept > 0 && kept < samples.len() && out.last().unwrap().t_ms < cut {
        let left = samples[kept - 1];
        let right = samples[kept];
        let frac = (cut - left.t_ms) / (right.t_ms - left.t_ms);
        out.push(ScalarSample {
            t_ms: cut,
            value: left.value + frac * (right.value - left.value),
        });
    }
    out
}

/// Linearly interpolates onto the 10 ms grid anchored at the window start.
///
/// The grid runs 0, 10, 20, ... up to the largest multiple of the step that
/// does not exceed the last sample time. Grid points outside the sampled
/// span hold the nearest sample's value.
pub fn resample(samples: &[ScalarSample], origin: SeriesOrigin) -> Result<ScalarSeries, PreprocessError> {
    if samples.len() < 2 {
        return Err(PreprocessError::TooFewSamples {
            have: samples.len(),
        });
    }
    let max_t = samples.last().unwrap().t_ms;
    let n_points = (max_t / GRID_STEP_MS).floor() as usize + 1;
    if n_points < 2 {
        return Err(PreprocessError::TooFewSamples {
            have: samples.len(),
        });
    }
    let mut values = Vec::with_capacity(n_points);
    let mut hi = 0usize; // first sample with t >= grid time
    for k in 0..n_points {
        let t = k as f64 * GRID_STEP_MS;
        while hi < samples.len() && samples[hi].t_ms < t {
            hi += 1;
        }
        let v = if hi == 0 {
            samples[0].value
        } else if hi == samples.len() {
            samples[samples.len() - 1].value
        } else {
            let right = samples[hi];
            if right.t_ms == t {
                right.value
            } else {
                let left = samples[hi - 1];
                let frac = (t - left.t_ms) / (right.t_ms - left.t_ms);
                left.value + frac * (right.value - left.value)
            }
        };
        values.push(v);
    }
    Ok(ScalarSeries::new(origin, values))
}

/// Full pairwise pipeline: scalarize, truncate to the 500 ms window,
/// cross-truncate, resample each side, then cut both series to the shorter
/// common length. The two outputs always have equal length >= 2.
pub fn preprocess_pair(
    a: &SensorTrace,
    b: &SensorTrace,
) -> Result<(ScalarSeries, ScalarSeries), PreprocessError> {
    if a.sensor() != b.sensor() {
        return Err(PreprocessError::SensorMismatch {
            left: a.sensor(),
            right: b.sensor(),
        });
    }
    let sa = truncate_window(&scalarize(a), WINDOW_LIMIT_MS);
    let sb = truncate_window(&scalarize(b), WINDOW_LIMIT_MS);
    preprocess_scalar_pair(&sa, &sb, SeriesOrigin::of(a), SeriesOrigin::of(b))
}

/// The tail of [`preprocess_pair`] starting from already scalarized,
/// window-truncated samples. Split out so the all-pairs evaluation can
/// scalarize each trace once instead of once per pair.
pub fn preprocess_scalar_pair(
    a: &[ScalarSample],
    b: &[ScalarSample],
    origin_a: SeriesOrigin,
    origin_b: SeriesOrigin,
) -> Result<(ScalarSeries, ScalarSeries), PreprocessError> {
    let (ca, cb) = cross_truncate(a, b);
    let mut ra = resample(&ca, origin_a)?;
    let mut rb = resample(&cb, origin_b)?;
    let common = ra.len().min(rb.len());
    ra.values.truncate(common);
    rb.values.truncate(common);
    Ok((ra, rb))
}
