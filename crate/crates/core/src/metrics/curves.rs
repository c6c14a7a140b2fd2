//! Ranked-reconstruction curves: accuracy and Hamming distance within the
//! top-p fields of an MI-sorted result.

use serde::{Deserialize, Serialize};

use super::similarity::{hamming, perfect_reconstruction};
use crate::corpus::TokenId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    /// Grid points `j / M`, `j = 1..=M`.
    pub grid: Vec<f64>,
    pub acc_at: Vec<f64>,
    pub ham_at: Vec<f64>,
    pub acc_auc: f64,
    pub ham_aac: f64,
    pub acc_at_1: f64,
    pub acc_at_5: f64,
    pub acc_at_100: f64,
}

/// Size of the top-p set: `max(1, ceil(p * n))`, capped at `n`.
pub fn top_count(p: f64, n: usize) -> usize {
    let c = (p * n as f64 - 1e-9).ceil();
    (c.max(1.0) as usize).min(n)
}

/// Per-field scores in ranked order, with prefix sums for the top-p means.
struct Ranked {
    pr_prefix: Vec<f64>,
    ham_prefix: Vec<f64>,
}

impl Ranked {
    fn new(pr: &[f64], ham: &[f64]) -> Self {
        let prefix = |v: &[f64]| {
            let mut out = Vec::with_capacity(v.len() + 1);
            out.push(0.0);
            for x in v {
                out.push(out.last().unwrap() + x);
            }
            out
        };
        Self {
            pr_prefix: prefix(pr),
            ham_prefix: prefix(ham),
        }
    }

    fn n(&self) -> usize {
        self.pr_prefix.len() - 1
    }

    fn at(&self, count: usize) -> (f64, f64) {
        (
            self.pr_prefix[count] / count as f64,
            self.ham_prefix[count] / count as f64,
        )
    }

    fn at_p(&self, p: f64) -> (f64, f64) {
        self.at(top_count(p, self.n()))
    }
}

/// Curves from per-field perfect-reconstruction and Hamming scores listed in
/// ranked order, integrated on `m` grid points (default: one per field).
pub fn curves_from_scores(pr: &[f64], ham: &[f64], m: Option<usize>) -> Result<CurveReport> {
    if pr.is_empty() {
        return Err(Error::Data("curves need at least one field".into()));
    }
    if pr.len() != ham.len() {
        return Err(Error::Data("score lists differ in length".into()));
    }
    let r = Ranked::new(pr, ham);
    let n = r.n();
    let m = m.unwrap_or(n).max(1);
    let mut grid = Vec::with_capacity(m);
    let mut acc_at = Vec::with_capacity(m);
    let mut ham_at = Vec::with_capacity(m);
    for j in 1..=m {
        // Exact integer ceiling of j * n / m.
        let count = ((j * n).div_ceil(m)).max(1);
        let (a, h) = r.at(count);
        grid.push(j as f64 / m as f64);
        acc_at.push(a);
        ham_at.push(h);
    }
    let acc_auc = acc_at.iter().sum::<f64>() / m as f64;
    let ham_aac = 1.0 - ham_at.iter().sum::<f64>() / m as f64;
    Ok(CurveReport {
        grid,
        acc_at,
        ham_at,
        acc_auc,
        ham_aac,
        acc_at_1: r.at_p(0.01).0,
        acc_at_5: r.at_p(0.05).0,
        acc_at_100: r.at_p(1.0).0,
    })
}

/// Curves of an MI-sorted list of (ground truth, reconstruction) pairs.
pub fn curves(truths: &[&[TokenId]], recs: &[&[TokenId]], m: Option<usize>) -> Result<CurveReport> {
    if truths.len() != recs.len() {
        return Err(Error::Data(
            "ground truths and reconstructions differ in count".into(),
        ));
    }
    let pr: Vec<f64> = truths
        .iter()
        .zip(recs)
        .map(|(f, r)| perfect_reconstruction(f, r))
        .collect();
    let ham = truths
        .iter()
        .zip(recs)
        .map(|(f, r)| hamming(f, r))
        .collect::<Result<Vec<f64>>>()?;
    curves_from_scores(&pr, &ham, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_counts() {
        assert_eq!(top_count(0.01, 40), 1);
        assert_eq!(top_count(0.05, 40), 2);
        assert_eq!(top_count(1.0, 40), 40);
        assert_eq!(top_count(0.29, 100), 29);
        assert_eq!(top_count(0.0, 5), 1);
    }

    #[test]
    fn perfect_and_wrong() {
        let c = curves_from_scores(&[1.0; 5], &[0.0; 5], None).unwrap();
        assert!(c.acc_at.iter().all(|&a| a == 1.0));
        assert_eq!((c.acc_auc, c.ham_aac), (1.0, 1.0));
        let c = curves_from_scores(&[0.0; 5], &[1.0; 5], None).unwrap();
        assert_eq!((c.acc_auc, c.ham_aac), (0.0, 0.0));
        assert!(curves_from_scores(&[], &[], None).is_err());
    }

    #[test]
    fn two_field_example() {
        let c = curves(&[&[1, 2], &[3, 4]], &[&[1, 2], &[5, 6]], None).unwrap();
        assert_eq!(c.acc_at, vec![1.0, 0.5]);
        assert_eq!(c.acc_auc, 0.75);
        let r = curves(&[&[3, 4], &[1, 2]], &[&[5, 6], &[1, 2]], None).unwrap();
        assert_eq!(r.acc_auc, 0.25);
    }

    #[test]
    fn single_field_is_constant() {
        let c = curves_from_scores(&[1.0], &[0.25], Some(7)).unwrap();
        assert!(c.acc_at.iter().all(|&a| a == 1.0));
        assert!(c.ham_at.iter().all(|&h| h == 0.25));
        assert_eq!(c.ham_aac, 0.75);
    }

    #[test]
    fn sorting_maximises_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(5..30);
            let ham: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
            let pr: Vec<f64> = ham
                .iter()
                .map(|&h| if h == 0.0 { 1.0 } else { 0.0 })
                .collect();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| ham[a].total_cmp(&ham[b]));
            let sorted = curves_from_scores(
                &idx.iter().map(|&i| pr[i]).collect::<Vec<_>>(),
                &idx.iter().map(|&i| ham[i]).collect::<Vec<_>>(),
                None,
            )
            .unwrap();
            for _ in 0..50 {
                idx.shuffle(&mut rng);
                let c = curves_from_scores(
                    &idx.iter().map(|&i| pr[i]).collect::<Vec<_>>(),
                    &idx.iter().map(|&i| ham[i]).collect::<Vec<_>>(),
                    None,
                )
                .unwrap();
                assert!(c.ham_aac <= sorted.ham_aac + 1e-12);
                assert!(c.acc_auc <= sorted.acc_auc + 1e-12);
            }
        }
    }
}
