//! Evaluation Method 1 (all-pairs proximity pairing) and Evaluation
//! Method 2 (relay inclusion): pair scoring, the 100-point threshold sweep,
//! FPR/FNR curves, EER extraction and confusion breakdowns.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::preprocess::{
    preprocess_scalar_pair, scalarize, truncate_window, PreprocessError, ScalarSample,
    SeriesOrigin, WINDOW_LIMIT_MS,
};
use crate::similarity::{mae, pearson, SimilarityError, SimilarityMetric, SimilarityScore};
use crate::trace::TransactionTriple;

/// Number of thresholds tested per sweep.
pub const SWEEP_POINTS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 usable triples, got {have}")]
    InsufficientData { have: usize },
    #[error("sweep needs both positive and negative labels (positives={positives}, negatives={negatives})")]
    DegenerateLabels { positives: usize, negatives: usize },
}

/// Ground truth for one scored pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    /// (TI_i, TT_i): the co-located pair of one transaction.
    GenuineMatch,
    /// (TI_i, TT_j) with i != j; used by Evaluation 1 only.
    NonMatch,
    /// (DTI_i, TT_i): the distant instrument of the same transaction;
    /// Evaluation 2 only.
    RelayPair,
}

impl PairLabel {
    /// The sweep only consumes polarity: genuine pairs should be accepted,
    /// everything else rejected.
    pub fn is_positive(self) -> bool {
        matches!(self, PairLabel::GenuineMatch)
    }

    pub fn name(self) -> &'static str {
        match self {
            PairLabel::GenuineMatch => "genuine",
            PairLabel::NonMatch => "non-match",
            PairLabel::RelayPair => "relay",
        }
    }
}

/// One similarity score with its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub score: SimilarityScore,
    pub label: PairLabel,
}

/// A pair dropped before scoring, with the reason, for the diagnostics
/// report that reconciles attempted vs scored totals.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub a: SeriesOrigin,
    pub b: SeriesOrigin,
    pub label: PairLabel,
    pub reason: String,
}

/// Scored pairs plus the bookkeeping needed to reconcile totals.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub metric: SimilarityMetric,
    pub pairs: Vec<ScoredPair>,
    pub exclusions: Vec<Exclusion>,
}

impl ScoredSet {
    pub fn attempted(&self) -> usize {
        self.pairs.len() + self.exclusions.len()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label.is_positive()).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }
}

/// Confusion counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn positives(&self) -> u64 {
        self.true_pos + self.false_neg
    }

    pub fn negatives(&self) -> u64 {
        self.true_neg + self.false_pos
    }

    /// FPR = 1 - TNR = FP / (TN + FP).
    pub fn fpr(&self) -> f64 {
        let d = self.negatives();
        if d == 0 {
            0.0
        } else {
            self.false_pos as f64 / d as f64
        }
    }

    /// FNR = 1 - TPR = FN / (TP + FN).
    pub fn fnr(&self) -> f64 {
        let d = self.positives();
        if d == 0 {
            0.0
        } else {
            self.false_neg as f64 / d as f64
        }
    }

    pub fn tpr(&self) -> f64 {
        1.0 - self.fnr()
    }

    pub fn tnr(&self) -> f64 {
        1.0 - self.fpr()
    }
}

/// Output of one 100-point threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub metric: SimilarityMetric,
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub fnr: Vec<f64>,
    pub eer: f64,
    pub optimum_threshold: f64,
    pub counts_at_optimum: ConfusionCounts,
}

fn score_one(
    metric: SimilarityMetric,
    ti: &[ScalarSample],
    tt: &[ScalarSample],
    origin_ti: SeriesOrigin,
    origin_tt: SeriesOrigin,
    label: PairLabel,
) -> Result<ScoredPair, Exclusion> {
    let exclude = |reason: String| Exclusion {
        a: origin_ti,
        b: origin_tt,
        label,
        reason,
    };
    let (u, v) = preprocess_scalar_pair(ti, tt, origin_ti, origin_tt)
        .map_err(|e: PreprocessError| exclude(e.to_string()))?;
    let score = match metric {
        SimilarityMetric::Mae => mae(&u, &v),
        SimilarityMetric::Pearson => pearson(&u, &v),
    }
    .map_err(|e: SimilarityError| exclude(e.to_string()))?;
    Ok(ScoredPair { score, label })
}

/// Scalarized, window-truncated samples for one triple, computed once and
/// shared across all pairings involving the triple.
struct PreparedTriple {
    ti: Vec<ScalarSample>,
    tt: Vec<ScalarSample>,
    dti: Vec<ScalarSample>,
    origin_ti: SeriesOrigin,
    origin_tt: SeriesOrigin,
    origin_dti: SeriesOrigin,
}

impl PreparedTriple {
    fn of(triple: &TransactionTriple) -> PreparedTriple {
        PreparedTriple {
            ti: truncate_window(&scalarize(&triple.ti), WINDOW_LIMIT_MS),
            tt: truncate_window(&scalarize(&triple.tt), WINDOW_LIMIT_MS),
            dti: truncate_window(&scalarize(&triple.dti), WINDOW_LIMIT_MS),
            origin_ti: SeriesOrigin::of(&triple.ti),
            origin_tt: SeriesOrigin::of(&triple.tt),
            origin_dti: SeriesOrigin::of(&triple.dti),
        }
    }
}

/// Evaluation Method 1: scores every ordered (TI_i, TT_j) pair of the
/// |T| x |T| matrix; the diagonal is labeled genuine, everything else
/// non-matching. Pairs that fail preprocessing (or are degenerate under
/// correlation) are excluded and reported.
pub fn score_eval1(
    triples: &[TransactionTriple],
    metric: SimilarityMetric,
) -> Result<ScoredSet, EvalError> {
    if triples.len() < 2 {
        return Err(EvalError::InsufficientData {
            have: triples.len(),
        });
    }
    let prepared: Vec<PreparedTriple> = triples.iter().map(PreparedTriple::of).collect();
    // Row-parallel; flattening in (i, j) order keeps the result identical
    // for any worker count.
    let rows: Vec<Vec<Result<ScoredPair, Exclusion>>> = prepared
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            prepared
                .iter()
                .enumerate()
                .map(|(j, col)| {
                    let label = if i == j {
                        PairLabel::GenuineMatch
                    } else {
                        PairLabel::NonMatch
                    };
                    score_one(metric, &row.ti, &col.tt, row.origin_ti, col.origin_tt, label)
                })
                .collect()
        })
        .collect();
    let mut pairs = Vec::with_capacity(triples.len() * triples.len());
    let mut exclusions = Vec::new();
    for row in rows {
        for item in row {
            match item {
                Ok(p) => pairs.push(p),
                Err(e) => exclusions.push(e),
            }
        }
    }
    Ok(ScoredSet {
        metric,
        pairs,
        exclusions,
    })
}

/// Evaluation Method 2: per transaction, scores the genuine pair
/// (TI_i, TT_i) and the relay pair (DTI_i, TT_i).
pub fn score_eval2(
    triples: &[TransactionTriple],
    metric: SimilarityMetric,
) -> Result<ScoredSet, EvalError> {
    if triples.len() < 2 {
        return Err(EvalError::InsufficientData {
            have: triples.len(),
        });
    }
    let results: Vec<Vec<Result<ScoredPair, Exclusion>>> = triples
        .par_iter()
        .map(|triple| {
            let p = PreparedTriple::of(triple);
            vec![
                score_one(
                    metric,
                    &p.ti,
                    &p.tt,
                    p.origin_ti,
                    p.origin_tt,
                    PairLabel::GenuineMatch,
                ),
                score_one(
                    metric,
                    &p.dti,
                    &p.tt,
                    p.origin_dti,
                    p.origin_tt,
                    PairLabel::RelayPair,
                ),
            ]
        })
        .collect();
    let mut pairs = Vec::with_capacity(triples.len() * 2);
    let mut exclusions = Vec::new();
    for chunk in results {
        for item in chunk {
            match item {
                Ok(p) => pairs.push(p),
                Err(e) => exclusions.push(e),
            }
        }
    }
    Ok(ScoredSet {
        metric,
        pairs,
        exclusions,
    })
}

/// Confusion counts at a single threshold under the metric's acceptance
/// direction.
pub fn confusion_at(
    scored: &[ScoredPair],
    threshold: f64,
    metric: SimilarityMetric,
) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for p in scored {
        let accepted = metric.accepts(p.score.value, threshold);
        match (p.label.is_positive(), accepted) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_neg += 1,
            (false, true) => c.false_pos += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    c
}

/// Sweeps 100 evenly spaced thresholds (observed min..max for MAE, the full
/// [-1, 1] range for correlation), traces FPR/FNR and extracts the EER at
/// the FPR/FNR crossing by linear interpolation.
///
/// When multiple grid intervals contain a crossing, the one around the grid
/// point minimizing |FPR - FNR| wins. If the curves never cross (all scores
/// identical, say), the EER falls back to the midpoint rate at that grid
/// point.
pub fn sweep(scored: &[ScoredPair], metric: SimilarityMetric) -> Result<SweepResult, EvalError> {
    let positives = scored.iter().filter(|p| p.label.is_positive()).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::DegenerateLabels {
            positives,
            negatives,
        });
    }
    let (lo, hi) = match metric {
        SimilarityMetric::Mae => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in scored {
                lo = lo.min(p.score.value);
                hi = hi.max(p.score.value);
            }
            (lo, hi)
        }
        SimilarityMetric::Pearson => (-1.0, 1.0),
    };
    let step = (hi - lo) / (SWEEP_POINTS - 1) as f64;
    let mut thresholds = Vec::with_capacity(SWEEP_POINTS);
    let mut fpr = Vec::with_capacity(SWEEP_POINTS);
    let mut fnr = Vec::with_capacity(SWEEP_POINTS);
    for k in 0..SWEEP_POINTS {
        let t = if k == SWEEP_POINTS - 1 { hi } else { lo + step * k as f64 };
        let c = confusion_at(scored, t, metric);
        thresholds.push(t);
        fpr.push(c.fpr());
        fnr.push(c.fnr());
    }

    let (eer, optimum_threshold) = extract_eer(&thresholds, &fpr, &fnr);
    let counts_at_optimum = confusion_at(scored, optimum_threshold, metric);
    Ok(SweepResult {
        metric,
        thresholds,
        fpr,
        fnr,
        eer,
        optimum_threshold,
        counts_at_optimum,
    })
}

fn extract_eer(thresholds: &[f64], fpr: &[f64], fnr: &[f64]) -> (f64, f64) {
    let diff: Vec<f64> = fpr.iter().zip(fnr).map(|(a, b)| a - b).collect();
    let best = diff
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.abs().total_cmp(&b.abs()))
        .map(|(k, _)| k)
        .unwrap();
    if diff[best] == 0.0 {
        return (fpr[best], thresholds[best]);
    }
    // Interpolate inside an adjacent interval where the sign flips.
    let crossing = |a: usize, b: usize| -> Option<(f64, f64)> {
        if diff[a] == 0.0 || diff[b] == 0.0 || diff[a].signum() == diff[b].signum() {
            return None;
        }
        let alpha = diff[a] / (diff[a] - diff[b]);
        let t = thresholds[a] + alpha * (thresholds[b] - thresholds[a]);
        let e = fpr[a] + alpha * (fpr[b] - fpr[a]);
        Some((e, t))
    };
    let before = (best > 0).then(|| crossing(best - 1, best)).flatten();
    let after = (best + 1 < diff.len())
        .then(|| crossing(best, best + 1))
        .flatten();
    match (before, after) {
        (Some(x), None) | (None, Some(x)) => x,
        (Some(x), Some(y)) => {
            // Two local crossings: keep the lower error rate.
            if x.0 <= y.0 {
                x
            } else {
                y
            }
        }
        (None, None) => {
            // Any remaining sign change elsewhere on the grid.
            for k in 0..diff.len() - 1 {
                if let Some(x) = crossing(k, k + 1) {
                    return x;
                }
            }
            // No crossing at all: report the most balanced grid point.
            ((fpr[best] + fnr[best]) / 2.0, thresholds[best])
        }
    }
}

/// Writes a `threshold,fpr,fnr` CSV of the sweep curves.
pub fn write_curve_csv<W: Write>(result: &SweepResult, mut out: W) -> io::Result<()> {
    writeln!(out, "threshold,fpr,fnr")?;
    for k in 0..result.thresholds.len() {
        writeln!(
            out,
            "{},{},{}",
            result.thresholds[k], result.fpr[k], result.fnr[k]
        )?;
    }
    Ok(())
}

/// Parses curve CSV rows back into (threshold, fpr, fnr) tuples.
pub fn parse_curve_csv(text: &str) -> Result<Vec<(f64, f64, f64)>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some("threshold,fpr,fnr") => {}
        other => return Err(format!("bad curve header: {other:?}")),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = |name: &str| -> Result<f64, String> {
            parts
                .next()
                .ok_or_else(|| format!("line {}: missing {name}", n + 2))?
                .parse::<f64>()
                .map_err(|e| format!("line {}: {e}", n + 2))
        };
        rows.push((next("threshold")?, next("fpr")?, next("fnr")?));
    }
    Ok(rows)
}

/// One row of the per-(sensor, metric) summary CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sensor: String,
    pub metric: SimilarityMetric,
    pub optimum_threshold: f64,
    pub eer: f64,
    pub counts: ConfusionCounts,
}

pub const SUMMARY_HEADER: &str = "sensor,metric,optimum_threshold,eer,tp,tn,fp,fn";

/// Writes the sweep summary CSV: one row per (sensor, metric).
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.sensor,
            r.metric.slug(),
            r.optimum_threshold,
            r.eer,
            r.counts.true_pos,
            r.counts.true_neg,
            r.counts.false_pos,
            r.counts.false_neg
        )?;
    }
    Ok(())
}

/// Parses a summary CSV written by [`write_summary_csv`].
pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SUMMARY_HEADER => {}
        other => return Err(format!("bad summary header: {other:?}")),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(format!("line {}: expected 8 fields", n + 2));
        }
        let err = |what: &str| format!("line {}: bad {what}", n + 2);
        rows.push(SummaryRow {
            sensor: fields[0].to_string(),
            metric: SimilarityMetric::parse(fields[1]).ok_or_else(|| err("metric"))?,
            optimum_threshold: fields[2].parse().map_err(|_| err("optimum_threshold"))?,
            eer: fields[3].parse().map_err(|_| err("eer"))?,
            counts: ConfusionCounts {
                true_pos: fields[4].parse().map_err(|_| err("tp"))?,
                true_neg: fields[5].parse().map_err(|_| err("tn"))?,
                false_pos: fields[6].parse().map_err(|_| err("fp"))?,
                false_neg: fields[7].parse().map_err(|_| err("fn"))?,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::SeriesOrigin;
    use crate::trace::{DeviceRole, SensorKind, TransactionId};

    fn pair(value: f64, label: PairLabel) -> ScoredPair {
        let origin = SeriesOrigin {
            transaction_id: TransactionId::new([0; 7]),
            role: DeviceRole::Tt,
            sensor: SensorKind::Light,
        };
        ScoredPair {
            score: SimilarityScore {
                metric: SimilarityMetric::Mae,
                value,
                a: origin,
                b: origin,
            },
            label,
        }
    }

    fn scored(pos: &[f64], neg: &[f64]) -> Vec<ScoredPair> {
        let mut v: Vec<ScoredPair> = pos
            .iter()
            .map(|&s| pair(s, PairLabel::GenuineMatch))
            .collect();
        v.extend(neg.iter().map(|&s| pair(s, PairLabel::NonMatch)));
        v
    }

    #[test]
    fn confusion_reject_all_and_accept_all() {
        let s = scored(&[1.0, 2.0], &[3.0, 4.0, 5.0]);
        let below = confusion_at(&s, 0.5, SimilarityMetric::Mae);
        assert_eq!(
            (below.true_pos, below.false_pos, below.false_neg, below.true_neg),
            (0, 0, 2, 3)
        );
        let above = confusion_at(&s, 9.0, SimilarityMetric::Mae);
        assert_eq!(
            (above.true_pos, above.false_pos, above.false_neg, above.true_neg),
            (2, 3, 0, 0)
        );
    }

    #[test]
    fn confusion_hand_counted_six_pairs() {
        // Positives at 1 and 4, negatives at 2, 3, 5, 6; threshold 3.5.
        let s = scored(&[1.0, 4.0], &[2.0, 3.0, 5.0, 6.0]);
        let c = confusion_at(&s, 3.5, SimilarityMetric::Mae);
        assert_eq!(c.true_pos, 1);
        assert_eq!(c.false_neg, 1);
        assert_eq!(c.false_pos, 2);
        assert_eq!(c.true_neg, 2);
    }

    #[test]
    fn sweep_perfectly_separable_mae() {
        let s = scored(&[0.0, 0.0, 0.0], &[10.0, 10.0, 10.0]);
        let r = sweep(&s, SimilarityMetric::Mae).unwrap();
        assert_eq!(r.eer, 0.0);
        assert!(r.optimum_threshold < 10.0);
        assert_eq!(r.thresholds.len(), SWEEP_POINTS);
        // Monotonicity along the MAE direction.
        for w in r.fpr.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in r.fnr.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn sweep_requires_both_classes() {
        let s = scored(&[1.0, 2.0], &[]);
        assert_eq!(
            sweep(&s, SimilarityMetric::Mae),
            Err(EvalError::DegenerateLabels {
                positives: 2,
                negatives: 0
            })
        );
    }

    #[test]
    fn sweep_label_totals_conserved() {
        let s = scored(&[0.1, 0.5, 1.0, 2.2], &[0.4, 0.9, 1.5, 3.0, 4.0]);
        let r = sweep(&s, SimilarityMetric::Mae).unwrap();
        for &t in &r.thresholds {
            let c = confusion_at(&s, t, SimilarityMetric::Mae);
            assert_eq!(c.positives(), 4);
            assert_eq!(c.negatives(), 5);
        }
        assert!(r.eer > 0.0 && r.eer < 1.0);
    }

    #[test]
    fn sweep_identical_distributions_gives_half() {
        let values: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let mut s = scored(&values, &values);
        let r = sweep(&s, SimilarityMetric::Mae).unwrap();
        assert!((r.eer - 0.5).abs() < 0.02, "eer = {}", r.eer);
        // Relabeling negatives between NonMatch and RelayPair changes nothing.
        for p in s.iter_mut() {
            if p.label == PairLabel::NonMatch {
                p.label = PairLabel::RelayPair;
            }
        }
        let r2 = sweep(&s, SimilarityMetric::Mae).unwrap();
        assert_eq!(r.eer, r2.eer);
        assert_eq!(r.fpr, r2.fpr);
    }

    #[test]
    fn sweep_pearson_uses_fixed_range() {
        let mut s = Vec::new();
        let origin = SeriesOrigin {
            transaction_id: TransactionId::new([0; 7]),
            role: DeviceRole::Tt,
            sensor: SensorKind::Light,
        };
        for (value, label) in [
            (0.9, PairLabel::GenuineMatch),
            (0.8, PairLabel::GenuineMatch),
            (0.2, PairLabel::RelayPair),
            (-0.1, PairLabel::RelayPair),
        ] {
            s.push(ScoredPair {
                score: SimilarityScore {
                    metric: SimilarityMetric::Pearson,
                    value,
                    a: origin,
                    b: origin,
                },
                label,
            });
        }
        let r = sweep(&s, SimilarityMetric::Pearson).unwrap();
        assert_eq!(r.thresholds[0], -1.0);
        assert_eq!(*r.thresholds.last().unwrap(), 1.0);
        assert_eq!(r.eer, 0.0);
    }

    #[test]
    fn sweep_all_scores_identical_falls_back() {
        let s = scored(&[1.0, 1.0], &[1.0, 1.0]);
        let r = sweep(&s, SimilarityMetric::Mae).unwrap();
        assert!((r.eer - 0.5).abs() < 1e-12);
    }

    #[test]
    fn curve_csv_round_trip() {
        let s = scored(&[0.0, 1.0, 2.0], &[1.5, 3.0, 4.0]);
        let r = sweep(&s, SimilarityMetric::Mae).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = parse_curve_csv(&text).unwrap();
        assert_eq!(rows.len(), SWEEP_POINTS);
        for (k, (t, fp, fnr)) in rows.iter().enumerate() {
            assert_eq!(*t, r.thresholds[k]);
            assert_eq!(*fp, r.fpr[k]);
            assert_eq!(*fnr, r.fnr[k]);
        }
    }
}
