use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::document::Document;
use crate::error::{Error, Result};
use crate::seed;

/// Fractions of the corpus going to validation, public training and private
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionRatios {
    pub valid: f64,
    pub train_pub: f64,
    pub train_pri: f64,
}

impl PartitionRatios {
    /// A validation fraction, the rest split evenly between public and
    /// private training data.
    pub fn with_valid(valid: f64) -> Self {
        let half = (1.0 - valid) / 2.0;
        Self {
            valid,
            train_pub: half,
            train_pri: half,
        }
    }

    /// 199 forms split 50/74/75.
    pub fn funsd_like() -> Self {
        Self::with_valid(0.25)
    }

    /// 626 receipts split 100/263/263.
    pub fn sroie_like() -> Self {
        Self::with_valid(0.16)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.valid, self.train_pub, self.train_pri];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "partition ratios must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub valid: Vec<Document>,
    pub train_pub: Vec<Document>,
    pub train_pri: Vec<Document>,
}

/// Partition sizes: `valid = round(n * r_valid)`, the public share of the
/// remainder is floored and the private part takes the rest.
pub fn partition_sizes(n: usize, ratios: &PartitionRatios) -> Result<(usize, usize, usize)> {
    ratios.validate()?;
    let valid = ((n as f64) * ratios.valid).round() as usize;
    let valid = valid.min(n);
    let rest = n - valid;
    let train_total = ratios.train_pub + ratios.train_pri;
    let train_pub = if train_total > 0.0 {
        ((rest as f64) * ratios.train_pub / train_total + 1e-9).floor() as usize
    } else {
        0
    };
    Ok((valid, train_pub, rest - train_pub))
}

/// Random, disjoint and exhaustive three-way split. Within each part the
/// original corpus order is kept.
pub fn partition(corpus: &[Document], ratios: &PartitionRatios, seed: u64) -> Result<Partition> {
    let (n_valid, n_pub, _) = partition_sizes(corpus.len(), ratios)?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, "partition")));
    let mut assign = vec![2u8; corpus.len()];
    for &i in &order[..n_valid] {
        assign[i] = 0;
    }
    for &i in &order[n_valid..n_valid + n_pub] {
        assign[i] = 1;
    }
    let pick = |part: u8| -> Vec<Document> {
        corpus
            .iter()
            .zip(&assign)
            .filter(|(_, &a)| a == part)
            .map(|(d, _)| d.clone())
            .collect()
    };
    Ok(Partition {
        valid: pick(0),
        train_pub: pick(1),
        train_pri: pick(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate::{generate_corpus, CorpusSpec};
    use proptest::prelude::*;

    #[test]
    fn table_sizes() {
        assert_eq!(
            partition_sizes(199, &PartitionRatios::funsd_like()).unwrap(),
            (50, 74, 75)
        );
        assert_eq!(
            partition_sizes(626, &PartitionRatios::sroie_like()).unwrap(),
            (100, 263, 263)
        );
    }

    #[test]
    fn bad_ratios_rejected() {
        let r = PartitionRatios {
            valid: 0.5,
            train_pub: 0.5,
            train_pri: 0.5,
        };
        assert!(partition_sizes(10, &r).is_err());
    }

    fn corpus() -> Vec<Document> {
        generate_corpus(&CorpusSpec {
            n_docs: 40,
            seed: 5,
            render_images: false,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn disjoint_and_exhaustive(n in 0usize..40, valid in 0.0f64..1.0, seed in any::<u64>()) {
            let docs: Vec<Document> = corpus().into_iter().take(n).collect();
            let p = partition(&docs, &PartitionRatios::with_valid(valid), seed).unwrap();
            let mut ids: Vec<String> = p.valid.iter().chain(&p.train_pub).chain(&p.train_pri)
                .map(|d| d.id.clone()).collect();
            prop_assert_eq!(ids.len(), docs.len());
            ids.sort();
            let mut want: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
            want.sort();
            prop_assert_eq!(ids, want);
            let again = partition(&docs, &PartitionRatios::with_valid(valid), seed).unwrap();
            prop_assert_eq!(again, p);
        }
    }
}
