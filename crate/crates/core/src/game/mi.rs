//! Membership-inference scores of reconstruction attempts. Every score is
//! oriented so that higher means more plausibly memorised.

use serde::{Deserialize, Serialize};

use crate::attack::ReconstructionAttempt;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MiMetricKind {
    RawPerplexity,
    #[default]
    PerplexityRatio,
    RawAndRatio,
    MaxTokenGap,
    MaxTokenRatio,
}

impl MiMetricKind {
    pub const ALL: [MiMetricKind; 5] = [
        MiMetricKind::RawPerplexity,
        MiMetricKind::PerplexityRatio,
        MiMetricKind::RawAndRatio,
        MiMetricKind::MaxTokenGap,
        MiMetricKind::MaxTokenRatio,
    ];
}

/// Which per-token probabilities of an attempt to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Target,
    Public,
}

/// Product of the token probabilities and the perplexity
/// `(prod q)^(-1/k)`, computed in log space.
pub fn field_likelihood_and_perplexity(
    attempt: &ReconstructionAttempt,
    source: Source,
) -> Result<(f64, f64)> {
    let q = match source {
        Source::Target => &attempt.p,
        Source::Public => &attempt.g,
    };
    if q.is_empty() {
        return Err(Error::Data(format!(
            "{}: attempt has no tokens",
            attempt.field_id
        )));
    }
    if let Some(bad) = q.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Data(format!(
            "{}: non-positive token probability {bad}",
            attempt.field_id
        )));
    }
    let log_sum: f64 = q.iter().map(|v| v.ln()).sum();
    Ok((log_sum.exp(), (-log_sum / q.len() as f64).exp()))
}

pub fn mi_score(attempt: &ReconstructionAttempt, kind: MiMetricKind) -> Result<f64> {
    if attempt.p.len() != attempt.g.len() {
        return Err(Error::Data(format!(
            "{}: p and g lengths differ",
            attempt.field_id
        )));
    }
    let raw = || field_likelihood_and_perplexity(attempt, Source::Public).map(|x| x.1);
    let ratio = || -> Result<f64> {
        let (_, target) = field_likelihood_and_perplexity(attempt, Source::Target)?;
        Ok(raw()? / target)
    };
    match kind {
        MiMetricKind::RawPerplexity => raw(),
        MiMetricKind::PerplexityRatio => ratio(),
        MiMetricKind::RawAndRatio => Ok(raw()? * ratio()?),
        MiMetricKind::MaxTokenGap => attempt
            .p
            .iter()
            .zip(&attempt.g)
            .map(|(p, g)| p - g)
            .reduce(f64::max)
            .ok_or_else(|| Error::Data(format!("{}: attempt has no tokens", attempt.field_id))),
        MiMetricKind::MaxTokenRatio => {
            if attempt.g.iter().any(|&g| !(g > 0.0)) {
                return Err(Error::Data(format!(
                    "{}: zero public probability in ratio",
                    attempt.field_id
                )));
            }
            attempt
                .p
                .iter()
                .zip(&attempt.g)
                .map(|(p, g)| p / g)
                .reduce(f64::max)
                .ok_or_else(|| Error::Data(format!("{}: attempt has no tokens", attempt.field_id)))
        }
    }
}

/// Index of the attempt with the highest score; ties go to the lowest index.
pub fn mi_filter(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Data("no attempts to filter".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Stable descending order of the scores.
pub fn mi_sort(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn att(p: &[f64], g: &[f64]) -> ReconstructionAttempt {
        ReconstructionAttempt {
            field_id: "f".into(),
            attempt: 0,
            tokens: vec![5; p.len()],
            p: p.to_vec(),
            g: g.to_vec(),
        }
    }

    #[test]
    fn likelihood_and_perplexity() {
        let (l, pp) =
            field_likelihood_and_perplexity(&att(&[1.0, 1.0], &[1.0, 1.0]), Source::Target)
                .unwrap();
        assert_eq!((l, pp), (1.0, 1.0));
        let (l, pp) =
            field_likelihood_and_perplexity(&att(&[0.5, 0.5], &[1.0, 1.0]), Source::Target)
                .unwrap();
        assert!((l - 0.25).abs() < 1e-15 && (pp - 2.0).abs() < 1e-12);
        let a = field_likelihood_and_perplexity(&att(&[0.2, 0.7, 0.4], &[1.0; 3]), Source::Target)
            .unwrap();
        let b = field_likelihood_and_perplexity(&att(&[0.4, 0.2, 0.7], &[1.0; 3]), Source::Target)
            .unwrap();
        assert!((a.1 - b.1).abs() < 1e-12);
        assert!(field_likelihood_and_perplexity(&att(&[0.0], &[1.0]), Source::Target).is_err());
    }

    #[test]
    fn identity_scores() {
        let a = att(&[0.3, 0.6], &[0.3, 0.6]);
        assert!((mi_score(&a, MiMetricKind::PerplexityRatio).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mi_score(&a, MiMetricKind::MaxTokenGap).unwrap(), 0.0);
        assert_eq!(mi_score(&a, MiMetricKind::MaxTokenRatio).unwrap(), 1.0);
    }

    #[test]
    fn hand_example() {
        let a = att(&[0.9], &[0.3]);
        assert!((mi_score(&a, MiMetricKind::MaxTokenGap).unwrap() - 0.6).abs() < 1e-12);
        assert!((mi_score(&a, MiMetricKind::MaxTokenRatio).unwrap() - 3.0).abs() < 1e-12);
        assert!((mi_score(&a, MiMetricKind::PerplexityRatio).unwrap() - 3.0).abs() < 1e-12);
        assert!((mi_score(&a, MiMetricKind::RawPerplexity).unwrap() - 1.0 / 0.3).abs() < 1e-12);
        assert!((mi_score(&a, MiMetricKind::RawAndRatio).unwrap() - 10.0).abs() < 1e-9);
        assert!(mi_score(&att(&[0.9], &[0.0]), MiMetricKind::MaxTokenRatio).is_err());
    }

    #[test]
    fn scaling_target_lowers_ratio() {
        let a = att(&[0.5, 0.4], &[0.2, 0.3]);
        let b = att(&[0.25, 0.2], &[0.2, 0.3]);
        assert!(
            mi_score(&b, MiMetricKind::PerplexityRatio).unwrap()
                < mi_score(&a, MiMetricKind::PerplexityRatio).unwrap()
        );
    }

    #[test]
    fn filter_rules() {
        assert_eq!(mi_filter(&[1.0]).unwrap(), 0);
        assert_eq!(mi_filter(&[2.0, 5.0, 1.0]).unwrap(), 1);
        assert_eq!(mi_filter(&[3.0, 3.0]).unwrap(), 0);
        assert!(mi_filter(&[]).is_err());
    }

    #[test]
    fn sort_rules() {
        assert_eq!(mi_sort(&[3.0, 2.0, 1.0]), vec![0, 1, 2]);
        assert_eq!(mi_sort(&[1.0, 2.0, 3.0]), vec![2, 1, 0]);
        assert_eq!(mi_sort(&[1.0, 1.0, 1.0]), vec![0, 1, 2]);
        assert_eq!(mi_sort(&[1.0, 2.0, 1.0, 2.0]), vec![1, 3, 0, 2]);
    }

    proptest! {
        #[test]
        fn sort_depends_only_on_order(scores in proptest::collection::vec(-5.0f64..5.0, 0..40)) {
            let order = mi_sort(&scores);
            let mut seen = order.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(mi_sort(&mapped), order);
        }

        #[test]
        fn filter_is_closed(scores in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
            let i = mi_filter(&scores).unwrap();
            prop_assert!(i < scores.len());
            prop_assert!(scores.iter().all(|&s| s <= scores[i]));
        }
    }
}
