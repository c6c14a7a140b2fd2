use ndarray::{Array2, ArrayView2};

use super::params::Scalar;
use crate::error::{Error, Result};

fn log_softmax_at<T: Scalar>(row: ndarray::ArrayView1<T>, target: usize) -> T {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row[target] - lse
}

fn check<T>(logits: &ArrayView2<T>, positions: &[usize], targets: &[u32]) -> Result<()> {
    if positions.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} positions but {} targets",
            positions.len(),
            targets.len()
        )));
    }
    for (&p, &t) in positions.iter().zip(targets) {
        if p >= logits.nrows() || t as usize >= logits.ncols() {
            return Err(Error::Data(format!(
                "target ({p}, {t}) outside logits of shape {:?}",
                logits.shape()
            )));
        }
    }
    Ok(())
}

/// Cross-entropy at each listed position, returned individually.
pub fn token_loss<T: Scalar>(
    logits: ArrayView2<T>,
    positions: &[usize],
    targets: &[u32],
) -> Result<Vec<T>> {
    check(&logits, positions, targets)?;
    Ok(positions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| -log_softmax_at(logits.row(p), t as usize))
        .collect())
}

/// Summed cross-entropy over the listed positions times `weight`, and its
/// gradient w.r.t. the logits.
pub fn loss_and_grad<T: Scalar>(
    logits: ArrayView2<T>,
    positions: &[usize],
    targets: &[u32],
    weight: T,
) -> Result<(T, Array2<T>)> {
    check(&logits, positions, targets)?;
    let mut grad = Array2::<T>::zeros(logits.raw_dim());
    let mut total = T::zero();
    for (&p, &t) in positions.iter().zip(targets) {
        let row = logits.row(p);
        total += -log_softmax_at(row, t as usize) * weight;
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let mut g = grad.row_mut(p);
        for (j, &v) in row.iter().enumerate() {
            g[j] += (v - max).exp() / sum * weight;
        }
        g[t as usize] -= weight;
    }
    Ok((total, grad))
}

/// Index of the largest logit of each listed row.
pub fn argmax_rows<T: Scalar>(logits: ArrayView2<T>, positions: &[usize]) -> Vec<u32> {
    positions
        .iter()
        .map(|&p| {
            let row = logits.row(p);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    /// Cross-entropy straight from the definition, probabilities first.
    fn naive_ce(row: &[f64], target: usize) -> f64 {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        -(row[target].exp() / z).ln()
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let l = Array2::<f64>::zeros((3, 7));
        let out = token_loss(l.view(), &[0, 2], &[1, 6]).unwrap();
        for v in out {
            assert!((v - 7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_logits_give_zero() {
        let l = array![[50.0f64, 0.0, 0.0]];
        assert!(token_loss(l.view(), &[0], &[0]).unwrap()[0] < 1e-12);
    }

    #[test]
    fn empty_positions_give_empty_vector() {
        let l = Array2::<f32>::zeros((2, 2));
        assert!(token_loss(l.view(), &[], &[]).unwrap().is_empty());
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let rows = rng.gen_range(1..6);
            let cols = rng.gen_range(2..12);
            let l = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-5.0..5.0f64));
            let p: Vec<usize> = (0..rows).collect();
            let t: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..cols as u32)).collect();
            let got = token_loss(l.view(), &p, &t).unwrap();
            for i in 0..rows {
                let want = naive_ce(l.row(i).as_slice().unwrap(), t[i] as usize);
                assert!((got[i] - want).abs() <= 1e-9, "{} vs {}", got[i], want);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let l = Array2::from_shape_fn((3, 5), |_| rng.gen_range(-2.0..2.0f64));
        let (p, t) = (vec![0, 2, 2], vec![4, 1, 3]);
        let (_, g) = loss_and_grad(l.view(), &p, &t, 0.5).unwrap();
        let h = 1e-6;
        for idx in [(0, 4), (0, 0), (2, 1), (2, 3), (1, 2)] {
            let mut a = l.clone();
            a[idx] += h;
            let mut b = l.clone();
            b[idx] -= h;
            let fa = loss_and_grad(a.view(), &p, &t, 0.5).unwrap().0;
            let fb = loss_and_grad(b.view(), &p, &t, 0.5).unwrap().0;
            assert!(((fa - fb) / (2.0 * h) - g[idx]).abs() < 1e-7);
        }
    }

    #[test]
    fn out_of_range_targets_rejected() {
        let l = Array2::<f32>::zeros((2, 2));
        assert!(token_loss(l.view(), &[2], &[0]).is_err());
        assert!(token_loss(l.view(), &[0], &[2]).is_err());
    }
}
