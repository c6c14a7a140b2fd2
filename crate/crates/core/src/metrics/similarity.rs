//! One-shot similarity between a ground-truth field and its reconstruction,
//! computed on token ids.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// 1 if the sequences are identical, else 0.
pub fn perfect_reconstruction(f: &[TokenId], r: &[TokenId]) -> f64 {
    if f == r {
        1.0
    } else {
        0.0
    }
}

/// Fraction of mismatched positions of two equal-length sequences.
pub fn hamming(f: &[TokenId], r: &[TokenId]) -> Result<f64> {
    if f.len() != r.len() {
        return Err(Error::Data(format!(
            "hamming distance of sequences of length {} and {}",
            f.len(),
            r.len()
        )));
    }
    if f.is_empty() {
        return Ok(0.0);
    }
    let diff = f.iter().zip(r).filter(|(a, b)| a != b).count();
    Ok(diff as f64 / f.len() as f64)
}

/// Unit-cost edit distance.
pub fn levenshtein(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the longer length; 0 for two empty sequences.
pub fn levenshtein_norm(a: &[TokenId], b: &[TokenId]) -> f64 {
    let n = a.len().max(b.len());
    if n == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / n as f64
    }
}

/// Jaro similarity.
pub fn jaro(a: &[TokenId], b: &[TokenId]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_match = vec![false; a.len()];
    let mut b_match = vec![false; b.len()];
    let mut m = 0usize;
    for (i, x) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_match[j] && b[j] == *x {
                a_match[i] = true;
                b_match[j] = true;
                m += 1;
                break;
            }
        }
    }
    if m == 0 {
        return 0.0;
    }
    let mut half_transpositions = 0usize;
    let mut j = 0usize;
    for (i, x) in a.iter().enumerate() {
        if !a_match[i] {
            continue;
        }
        while !b_match[j] {
            j += 1;
        }
        if b[j] != *x {
            half_transpositions += 1;
        }
        j += 1;
    }
    let m = m as f64;
    let t = half_transpositions as f64 / 2.0;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

/// Jaro-Winkler similarity with prefix scale 0.1 over at most 4 tokens.
pub fn jaro_winkler(a: &[TokenId], b: &[TokenId]) -> f64 {
    let j = jaro(a, b);
    let prefix = a.iter().zip(b).take(4).take_while(|(x, y)| x == y).count();
    j + prefix as f64 * 0.1 * (1.0 - j)
}

/// `1 - jaro_winkler`.
pub fn jaro_winkler_norm(a: &[TokenId], b: &[TokenId]) -> f64 {
    (1.0 - jaro_winkler(a, b)).clamp(0.0, 1.0)
}

/// Field-averaged one-shot metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneShotScores {
    pub pr: f64,
    pub hd: f64,
    pub ld: f64,
    pub jwd: f64,
}

impl OneShotScores {
    pub fn compute(truths: &[&[TokenId]], recs: &[&[TokenId]]) -> Result<Self> {
        if truths.len() != recs.len() {
            return Err(Error::Data(
                "ground truths and reconstructions differ in count".into(),
            ));
        }
        if truths.is_empty() {
            return Err(Error::Data("no fields to score".into()));
        }
        let n = truths.len() as f64;
        let mut s = OneShotScores {
            pr: 0.0,
            hd: 0.0,
            ld: 0.0,
            jwd: 0.0,
        };
        for (f, r) in truths.iter().zip(recs) {
            s.pr += perfect_reconstruction(f, r);
            s.hd += hamming(f, r)?;
            s.ld += levenshtein_norm(f, r);
            s.jwd += jaro_winkler_norm(f, r);
        }
        s.pr /= n;
        s.hd /= n;
        s.ld /= n;
        s.jwd /= n;
        Ok(s)
    }
}
