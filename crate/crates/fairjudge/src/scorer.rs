//! Metrics: abstention-aware attribute accuracy, coverage, top-1 accuracy,
//! rubric rescaling, macro means, and bootstrap intervals.
//!
//! Counts are kept as exact integers; accuracy is derived on demand and
//! rendered to three decimals in reports. Failed parses are converted to
//! abstention labels by the caller before scoring and tracked separately
//! in reports.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::AttributeKind;

/// How predicted abstentions are scored for an attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbstentionPolicy {
    /// Abstention counts in the denominator with zero credit.
    ForcedError,
    /// Abstaining predictions leave the denominator; coverage is reported.
    NeutralExcluded,
    /// Abstention is read as predicting the designated negative label.
    NegativeClass { negative_label: String },
}

impl AbstentionPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            AbstentionPolicy::ForcedError => "forced-error",
            AbstentionPolicy::NeutralExcluded => "neutral-excluded",
            AbstentionPolicy::NegativeClass { .. } => "negative-class",
        }
    }
}

impl fmt::Display for AbstentionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-attribute defaults: gender/race/age (and profession) force errors,
/// religion/culture exclude abstentions, disability reads abstention as
/// "no disability".
pub fn default_policy(kind: AttributeKind) -> AbstentionPolicy {
    match kind {
        AttributeKind::Gender | AttributeKind::Race | AttributeKind::Age | AttributeKind::Profession => {
            AbstentionPolicy::ForcedError
        }
        AttributeKind::Religion | AttributeKind::Culture => AbstentionPolicy::NeutralExcluded,
        AttributeKind::Disability => AbstentionPolicy::NegativeClass {
            negative_label: "unspecified".to_string(),
        },
    }
}

/// Exact counts for one attribute/method cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n_total: u64,
    pub n_scored: u64,
    pub n_correct: u64,
}

impl AccuracyReport {
    /// `None` when the denominator is empty (all predictions abstained
    /// under NeutralExcluded).
    pub fn accuracy(&self) -> Option<f64> {
        if self.n_scored == 0 {
            None
        } else {
            Some(self.n_correct as f64 / self.n_scored as f64)
        }
    }

    pub fn coverage(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_scored as f64 / self.n_total as f64
        }
    }
}

/// Rubric rating rescaled to [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore(pub f64);

impl AlignmentScore {
    pub fn value(&self) -> f64 {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("gold/prediction lengths differ: {golds} vs {preds}")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("rating {0} outside 1..=5")]
    RatingOutOfRange(u8),
    #[error("confidence level {0} outside (0, 1)")]
    BadLevel(f64),
    #[error("bootstrap needs at least one resample")]
    ZeroResamples,
    #[error("macro mean over zero populated cells")]
    AllCellsAbsent,
}

/// s_bar = (r - 3) / 2, exactly.
pub fn rescale_alignment(rating: u8) -> Result<AlignmentScore, ScoreError> {
    if !(1..=5).contains(&rating) {
        return Err(ScoreError::RatingOutOfRange(rating));
    }
    Ok(AlignmentScore((rating as f64 - 3.0) / 2.0))
}

/// Score one attribute under a policy. `abstention_label` is the kind's
/// abstention marker; labels must already be canonical.
pub fn score_attribute(
    golds: &[String],
    preds: &[String],
    abstention_label: &str,
    policy: &AbstentionPolicy,
) -> Result<AccuracyReport, ScoreError> {
    if golds.len() != preds.len() {
        return Err(ScoreError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let n = golds.len() as u64;
    let is_abst = |label: &str| label == abstention_label;

    let report = match policy {
        AbstentionPolicy::ForcedError => {
            let n_correct = golds
                .iter()
                .zip(preds)
                .filter(|(g, p)| p.as_str() == g.as_str() && !is_abst(p))
                .count() as u64;
            AccuracyReport {
                n_total: n,
                n_scored: n,
                n_correct,
            }
        }
        AbstentionPolicy::NeutralExcluded => {
            let mut n_scored = 0;
            let mut n_correct = 0;
            for (g, p) in golds.iter().zip(preds) {
                if is_abst(p) {
                    continue;
                }
                n_scored += 1;
                if g == p {
                    n_correct += 1;
                }
            }
            AccuracyReport {
                n_total: n,
                n_scored,
                n_correct,
            }
        }
        AbstentionPolicy::NegativeClass { negative_label } => {
            let eff = |label: &String| {
                if is_abst(label) {
                    negative_label.as_str()
                } else {
                    label.as_str()
                }
            };
            let n_correct = golds
                .iter()
                .zip(preds)
                .filter(|(g, p)| eff(g) == eff(p))
                .count() as u64;
            AccuracyReport {
                n_total: n,
                n_scored: n,
                n_correct,
            }
        }
    };
    Ok(report)
}

/// Per-item correctness flags under a policy; `None` marks items excluded
/// from the denominator. Feeds the bootstrap.
pub fn per_item_correct(
    golds: &[String],
    preds: &[String],
    abstention_label: &str,
    policy: &AbstentionPolicy,
) -> Result<Vec<Option<bool>>, ScoreError> {
    if golds.len() != preds.len() {
        return Err(ScoreError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let is_abst = |label: &str| label == abstention_label;
    Ok(golds
        .iter()
        .zip(preds)
        .map(|(g, p)| match policy {
            AbstentionPolicy::ForcedError => Some(g == p && !is_abst(p)),
            AbstentionPolicy::NeutralExcluded => {
                if is_abst(p) {
                    None
                } else {
                    Some(g == p)
                }
            }
            AbstentionPolicy::NegativeClass { negative_label } => {
                let eff = |l: &str| if is_abst(l) { negative_label.as_str() } else { l };
                Some(eff(g) == eff(p))
            }
        })
        .collect())
}

/// Fraction of exact canonical matches.
pub fn top1_accuracy(golds: &[String], preds: &[String]) -> Result<f64, ScoreError> {
    if golds.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    if golds.len() != preds.len() {
        return Err(ScoreError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let hits = golds.iter().zip(preds).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Unweighted mean over populated cells only.
pub fn macro_mean(cells: &[Option<f64>]) -> Result<f64, ScoreError> {
    let populated: Vec<f64> = cells.iter().copied().flatten().collect();
    if populated.is_empty() {
        return Err(ScoreError::AllCellsAbsent);
    }
    Ok(populated.iter().sum::<f64>() / populated.len() as f64)
}

/// Arithmetic mean of rescaled alignment scores.
pub fn mean_alignment(scores: &[AlignmentScore]) -> Result<f64, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    Ok(scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64)
}

/// Percentile bootstrap of the mean over 0/1 outcomes, deterministic
/// under `seed` (ChaCha8, nearest-rank percentiles).
pub fn bootstrap_ci(
    per_item_correct: &[bool],
    resamples: u32,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), ScoreError> {
    if per_item_correct.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ScoreError::BadLevel(level));
    }
    if resamples == 0 {
        return Err(ScoreError::ZeroResamples);
    }
    let n = per_item_correct.len();
    let values: Vec<f64> = per_item_correct
        .iter()
        .map(|&c| if c { 1.0 } else { 0.0 })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples as usize);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += values[rng.random_range(0..n)];
        }
        means.push(sum / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((percentile(&means, alpha), percentile(&means, 1.0 - alpha)))
}

/// Nearest-rank percentile over a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    let rank = (q * b as f64).ceil() as usize;
    sorted[rank.clamp(1, b) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(items: &[&str]) -> Vec<String> {
        items.iter().map(|i| i.to_string()).collect()
    }

    #[test]
    fn rescale_matches_the_anchors() {
        assert_eq!(rescale_alignment(1).unwrap().0, -1.0);
        assert_eq!(rescale_alignment(2).unwrap().0, -0.5);
        assert_eq!(rescale_alignment(3).unwrap().0, 0.0);
        assert_eq!(rescale_alignment(4).unwrap().0, 0.5);
        assert_eq!(rescale_alignment(5).unwrap().0, 1.0);
        assert!(rescale_alignment(0).is_err());
        assert!(rescale_alignment(6).is_err());
    }

    #[test]
    fn rescale_symmetry_about_three() {
        for r in 1..=5u8 {
            let a = rescale_alignment(r).unwrap().0;
            let b = rescale_alignment(6 - r).unwrap().0;
            assert_eq!(a + b, 0.0);
        }
    }

    #[test]
    fn forced_error_counts_abstention_as_wrong() {
        let golds = s(&["male", "female", "male"]);
        let preds = s(&["male", "unspecified", "female"]);
        let r = score_attribute(&golds, &preds, "unspecified", &AbstentionPolicy::ForcedError)
            .unwrap();
        assert_eq!((r.n_total, r.n_scored, r.n_correct), (3, 3, 1));
        assert_eq!(r.accuracy(), Some(1.0 / 3.0));
    }

    #[test]
    fn neutral_excluded_reports_coverage() {
        let golds = s(&["Muslim", "Hindu"]);
        let preds = s(&["unspecified", "Hindu"]);
        let r = score_attribute(&golds, &preds, "unspecified", &AbstentionPolicy::NeutralExcluded)
            .unwrap();
        assert_eq!(r.accuracy(), Some(1.0));
        assert_eq!(r.coverage(), 0.5);
    }

    #[test]
    fn negative_class_scores_matching_abstention_as_correct() {
        let golds = s(&["unspecified"]);
        let preds = s(&["unspecified"]);
        let policy = AbstentionPolicy::NegativeClass {
            negative_label: "unspecified".into(),
        };
        let r = score_attribute(&golds, &preds, "unspecified", &policy).unwrap();
        assert_eq!(r.n_correct, 1);
    }

    #[test]
    fn neutral_excluded_keeps_gold_neutral_scoreable() {
        // Gold "Neutral" religion with a concrete prediction stays in the
        // denominator; only predicted abstentions leave it.
        let golds = s(&["Neutral", "Neutral"]);
        let preds = s(&["Neutral", "Muslim"]);
        let r = score_attribute(&golds, &preds, "unspecified", &AbstentionPolicy::NeutralExcluded)
            .unwrap();
        assert_eq!((r.n_scored, r.n_correct), (2, 1));
    }

    #[test]
    fn length_mismatch_is_a_contract_error() {
        let r = score_attribute(
            &s(&["male"]),
            &s(&["male", "female"]),
            "unspecified",
            &AbstentionPolicy::ForcedError,
        );
        assert!(r.is_err());
    }

    #[test]
    fn top1_basics() {
        assert_eq!(top1_accuracy(&s(&["a", "b"]), &s(&["a", "b"])).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&s(&["a", "b"]), &s(&["b", "a"])).unwrap(), 0.0);
        assert_eq!(
            top1_accuracy(&s(&["a", "b", "c", "d"]), &s(&["a", "b", "c", "x"])).unwrap(),
            0.75
        );
        assert!(top1_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn macro_mean_skips_absent_cells() {
        assert_eq!(macro_mean(&[Some(0.9), Some(0.7), None]).unwrap(), 0.8);
        assert_eq!(macro_mean(&[Some(0.345)]).unwrap(), 0.345);
        assert!(macro_mean(&[None, None]).is_err());
    }

    #[test]
    fn macro_mean_of_fairface_clip_row() {
        let m = macro_mean(&[Some(0.940), Some(0.690), Some(0.820)]).unwrap();
        assert!((m - 0.8166666666666667).abs() < 1e-12);
    }

    #[test]
    fn mean_alignment_basics() {
        let one = AlignmentScore(1.0);
        let neg = AlignmentScore(-1.0);
        let half = AlignmentScore(0.5);
        assert_eq!(mean_alignment(&[one, one]).unwrap(), 1.0);
        assert_eq!(mean_alignment(&[neg, one]).unwrap(), 0.0);
        assert_eq!(mean_alignment(&[half, half, neg]).unwrap(), 0.0);
        assert!(mean_alignment(&[]).is_err());
    }

    #[test]
    fn bootstrap_degenerate_lists() {
        assert_eq!(bootstrap_ci(&[true; 8], 200, 0.95, 1).unwrap(), (1.0, 1.0));
        assert_eq!(bootstrap_ci(&[false; 8], 200, 0.95, 1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn bootstrap_is_seed_deterministic_and_brackets_the_mean() {
        let data = [true, false, true, false];
        let a = bootstrap_ci(&data, 1000, 0.95, 42).unwrap();
        let b = bootstrap_ci(&data, 1000, 0.95, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.0 <= 0.5 && 0.5 <= a.1);
        let c = bootstrap_ci(&data, 1000, 0.95, 43).unwrap();
        // Different seed may move endpoints; both must still bracket.
        assert!(c.0 <= 0.5 && 0.5 <= c.1);
    }

    #[test]
    fn bootstrap_validates_arguments() {
        assert!(bootstrap_ci(&[], 100, 0.95, 0).is_err());
        assert!(bootstrap_ci(&[true], 100, 1.0, 0).is_err());
        assert!(bootstrap_ci(&[true], 0, 0.95, 0).is_err());
    }
}
