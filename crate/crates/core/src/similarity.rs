//! The two similarity metrics compared throughout: Mean Absolute Error and
//! Pearson's correlation coefficient over population statistics (1/N).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{ScalarSeries, SeriesOrigin};

/// Which similarity measure a score came from, and therefore which way its
/// acceptance rule points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimilarityMetric {
    /// Distance: smaller is more similar, accept when score <= threshold.
    Mae,
    /// Similarity: larger is more similar, accept when score >= threshold.
    Pearson,
}

impl SimilarityMetric {
    pub const ALL: [SimilarityMetric; 2] = [SimilarityMetric::Mae, SimilarityMetric::Pearson];

    /// True when smaller scores mean more similar.
    pub fn is_distance(self) -> bool {
        matches!(self, SimilarityMetric::Mae)
    }

    /// The acceptance rule at a given threshold.
    pub fn accepts(self, score: f64, threshold: f64) -> bool {
        if self.is_distance() {
            score <= threshold
        } else {
            score >= threshold
        }
    }

    /// Lowercase identifier for file names and CLI flags.
    pub fn slug(self) -> &'static str {
        match self {
            SimilarityMetric::Mae => "mae",
            SimilarityMetric::Pearson => "pearson",
        }
    }

    /// Name used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            SimilarityMetric::Mae => "MAE",
            SimilarityMetric::Pearson => "Correlation",
        }
    }

    pub fn parse(s: &str) -> Option<SimilarityMetric> {
        match s {
            "mae" | "MAE" => Some(SimilarityMetric::Mae),
            "pearson" | "corr" | "correlation" => Some(SimilarityMetric::Pearson),
            _ => None,
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("series lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty series")]
    EmptySeries,
    #[error("series too short for correlation ({len} < 2)")]
    TooShort { len: usize },
    #[error("degenerate (constant) series: standard deviation is zero")]
    DegenerateSeries,
}

/// One computed similarity value between two preprocessed series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScore {
    pub metric: SimilarityMetric,
    pub value: f64,
    pub a: SeriesOrigin,
    pub b: SeriesOrigin,
}

fn check_lengths(u: &[f64], v: &[f64]) -> Result<usize, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if u.is_empty() {
        return Err(SimilarityError::EmptySeries);
    }
    Ok(u.len())
}

/// Mean absolute error between two equal-length series.
pub fn mae(u: &ScalarSeries, v: &ScalarSeries) -> Result<SimilarityScore, SimilarityError> {
    let n = check_lengths(&u.values, &v.values)?;
    let sum: f64 = u
        .values
        .iter()
        .zip(&v.values)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(SimilarityScore {
        metric: SimilarityMetric::Mae,
        value: sum / n as f64,
        a: u.origin,
        b: v.origin,
    })
}

fn mean(u: &[f64]) -> f64 {
    u.iter().sum::<f64>() / u.len() as f64
}

/// Population covariance (divide by N, not N-1).
pub fn covariance(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    let n = check_lengths(u, v)?;
    let mu = mean(u);
    let mv = mean(v);
    let sum: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| (a - mu) * (b - mv))
        .sum();
    Ok(sum / n as f64)
}

/// Pearson's correlation coefficient, population statistics, clamped to
/// [-1, 1] against floating-point rounding.
///
/// A constant series has zero standard deviation and no defined correlation;
/// such pairs are rejected as `DegenerateSeries` and the caller excludes
/// them from correlation-based analysis.
pub fn pearson(u: &ScalarSeries, v: &ScalarSeries) -> Result<SimilarityScore, SimilarityError> {
    let n = check_lengths(&u.values, &v.values)?;
    if n < 2 {
        return Err(SimilarityError::TooShort { len: n });
    }
    let cov = covariance(&u.values, &v.values)?;
    let sd_u = population_sd(&u.values);
    let sd_v = population_sd(&v.values);
    if sd_u == 0.0 || sd_v == 0.0 {
        return Err(SimilarityError::DegenerateSeries);
    }
    let value = (cov / (sd_u * sd_v)).clamp(-1.0, 1.0);
    Ok(SimilarityScore {
        metric: SimilarityMetric::Pearson,
        value,
        a: u.origin,
        b: v.origin,
    })
}

fn population_sd(u: &[f64]) -> f64 {
    let m = mean(u);
    (u.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / u.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::SeriesOrigin;
    use crate::trace::{DeviceRole, SensorKind, TransactionId};

    fn series(values: &[f64]) -> ScalarSeries {
        ScalarSeries::new(
            SeriesOrigin {
                transaction_id: TransactionId::new([0; 7]),
                role: DeviceRole::Tt,
                sensor: SensorKind::Light,
            },
            values.to_vec(),
        )
    }

    #[test]
    fn mae_identity_is_zero() {
        let u = series(&[1.0, 2.0, 3.0]);
        assert_eq!(mae(&u, &u).unwrap().value, 0.0);
    }

    #[test]
    fn mae_hand_evaluated() {
        let u = series(&[1.0, 2.0, 3.0]);
        let v = series(&[2.0, 4.0, 6.0]);
        assert_eq!(mae(&u, &v).unwrap().value, 2.0);
    }

    #[test]
    fn mae_single_element() {
        assert_eq!(mae(&series(&[0.0]), &series(&[5.0])).unwrap().value, 5.0);
    }

    #[test]
    fn mae_errors() {
        assert_eq!(
            mae(&series(&[1.0]), &series(&[1.0, 2.0])),
            Err(SimilarityError::LengthMismatch { left: 1, right: 2 })
        );
        assert_eq!(
            mae(&series(&[]), &series(&[])),
            Err(SimilarityError::EmptySeries)
        );
    }

    #[test]
    fn covariance_of_self_is_variance() {
        // u = [1, 3]: mean 2, population variance 1.
        assert_eq!(covariance(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn covariance_constant_is_zero() {
        assert_eq!(covariance(&[4.0, 4.0, 4.0], &[1.0, -2.0, 7.0]).unwrap(), 0.0);
    }

    #[test]
    fn covariance_symmetric() {
        let u = [0.3, -1.2, 4.5, 2.2];
        let v = [9.1, 0.0, -3.3, 1.5];
        assert_eq!(covariance(&u, &v).unwrap(), covariance(&v, &u).unwrap());
    }

    #[test]
    fn pearson_self_correlation_is_one() {
        let u = series(&[1.0, 2.0, 5.0, 3.0]);
        assert_eq!(pearson(&u, &u).unwrap().value, 1.0);
    }

    #[test]
    fn pearson_negative_affine_is_minus_one() {
        let u = series(&[1.0, 2.0, 5.0, 3.0]);
        let v = series(&u.values.iter().map(|x| -2.0 * x + 7.0).collect::<Vec<_>>());
        assert_eq!(pearson(&u, &v).unwrap().value, -1.0);
    }

    #[test]
    fn pearson_hand_evaluated() {
        let u = series(&[1.0, 2.0, 3.0]);
        let v = series(&[1.0, 2.0, 4.0]);
        let r = pearson(&u, &v).unwrap().value;
        assert!((r - 0.981_980_506_061_965_8).abs() < 1e-12, "r = {r}");
    }

    #[test]
    fn pearson_rejects_constant_series() {
        let u = series(&[2.0, 2.0, 2.0]);
        let v = series(&[1.0, 2.0, 3.0]);
        assert_eq!(pearson(&u, &v), Err(SimilarityError::DegenerateSeries));
        assert_eq!(pearson(&v, &u), Err(SimilarityError::DegenerateSeries));
    }

    #[test]
    fn pearson_rejects_length_one() {
        assert_eq!(
            pearson(&series(&[1.0]), &series(&[2.0])),
            Err(SimilarityError::TooShort { len: 1 })
        );
    }
}
