//! The per-token steps of the optimisation: candidate likelihoods, target
//! loss likelihoods, aggregation and nucleus sampling.

use rand::Rng;

use super::config::MeanKind;

/// Numerically stable softmax of `scores / temp`.
pub fn softmax(scores: &[f64], temp: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| ((s - max) / temp).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Public-model candidate probabilities at temperature `temp`.
pub fn logits_to_likelihood(logits: &[f64], temp: f64) -> Vec<f64> {
    softmax(logits, temp)
}

/// Median of a non-empty slice (mean of the two middle values for even
/// lengths).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Target losses to probabilities: `l~ = 2 - l / median(l)`, then
/// `softmax(l~ / temp)`. A zero median yields the uniform distribution.
pub fn loss_to_likelihood(losses: &[f64], temp: f64) -> Vec<f64> {
    if losses.is_empty() {
        return Vec::new();
    }
    let m = median(losses);
    if m <= 0.0 {
        return vec![1.0 / losses.len() as f64; losses.len()];
    }
    let shifted: Vec<f64> = losses.iter().map(|&l| 2.0 - l / m).collect();
    softmax(&shifted, temp)
}

/// Weighted mean of the public (`g`) and target (`l`) distributions,
/// renormalised.
pub fn aggregate(g: &[f64], l: &[f64], kind: MeanKind, w: f64) -> Vec<f64> {
    assert_eq!(
        g.len(),
        l.len(),
        "distributions over different candidate sets"
    );
    if w == 0.0 {
        return g.to_vec();
    }
    if w == 1.0 {
        return l.to_vec();
    }
    let raw: Vec<f64> = g
        .iter()
        .zip(l)
        .map(|(&g, &l)| match kind {
            MeanKind::Arithmetic => w * l + (1.0 - w) * g,
            MeanKind::Geometric => l.powf(w) * g.powf(1.0 - w),
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 {
        raw.into_iter().map(|v| v / sum).collect()
    } else {
        // Disjoint supports under the geometric mean: fall back to the
        // public distribution.
        g.to_vec()
    }
}

/// Indices of the nucleus: the smallest highest-probability prefix whose
/// mass reaches `top_p`. Ties keep the lower index first.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut n = 0;
    for &i in &order {
        mass += probs[i];
        n += 1;
        if mass >= top_p * (1.0 - 1e-12) {
            break;
        }
    }
    order.truncate(n.max(1));
    order
}

/// Samples an index from the nucleus of `probs` (renormalised within the
/// nucleus) and returns it with its probability before renormalisation.
pub fn sample_top_p<R: Rng>(probs: &[f64], top_p: f64, rng: &mut R) -> (usize, f64) {
    let nuc = nucleus(probs, top_p);
    let mass: f64 = nuc.iter().map(|&i| probs[i]).sum();
    let u = rng.gen::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &nuc {
        acc += probs[i];
        if u < acc {
            return (i, probs[i]);
        }
    }
    let last = *nuc.last().expect("nucleus is never empty");
    (last, probs[last])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sums_to_one(p: &[f64]) -> bool {
        (p.iter().sum::<f64>() - 1.0).abs() < 1e-6 && p.iter().all(|&v| v >= 0.0)
    }

    #[test]
    fn equal_logits_uniform() {
        for t in [0.01, 0.3, 5.0] {
            let p = logits_to_likelihood(&[2.5; 8], t);
            assert!(p.iter().all(|&v| (v - 0.125).abs() < 1e-15));
        }
    }

    #[test]
    fn lower_temperature_sharpens() {
        let logits = [1.0, 0.5, -0.3, 0.9];
        let hi = logits_to_likelihood(&logits, 1.0);
        let lo = logits_to_likelihood(&logits, 0.3);
        let max = |p: &[f64]| p.iter().cloned().fold(0.0, f64::max);
        assert!(max(&lo) > max(&hi));
    }

    #[test]
    fn loss_likelihood_hand_example() {
        // median 1 -> shifted scores {1, 1, 1, -98}
        let p = loss_to_likelihood(&[1.0, 1.0, 1.0, 100.0], 1.0);
        let z = 3.0 + (-99.0f64).exp();
        for &v in &p[..3] {
            assert!((v - 1.0 / z).abs() < 1e-15);
        }
        assert!(p[3] < 1e-40);
        assert!(sums_to_one(&p));
    }

    #[test]
    fn loss_likelihood_degenerate() {
        assert_eq!(
            loss_to_likelihood(&[0.0, 0.0, 3.0], 0.3),
            vec![1.0 / 3.0; 3]
        );
        assert_eq!(loss_to_likelihood(&[2.0; 4], 0.3), vec![0.25; 4]);
        assert!(loss_to_likelihood(&[], 0.3).is_empty());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn aggregate_endpoints() {
        let g = [0.5, 0.3, 0.2];
        let l = [0.1, 0.1, 0.8];
        for kind in [MeanKind::Arithmetic, MeanKind::Geometric] {
            assert_eq!(aggregate(&g, &l, kind, 0.0), g.to_vec());
            assert_eq!(aggregate(&g, &l, kind, 1.0), l.to_vec());
        }
        let p = aggregate(&g, &[0.0, 0.5, 0.5], MeanKind::Geometric, 0.4);
        assert_eq!(p[0], 0.0);
        assert!(sums_to_one(&p));
        let a = aggregate(&g, &l, MeanKind::Arithmetic, 0.5);
        assert!((a[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nucleus_rules() {
        let p = [0.1, 0.5, 0.25, 0.15];
        assert_eq!(nucleus(&p, 0.01), vec![1]);
        assert_eq!(nucleus(&p, 0.5), vec![1]);
        assert_eq!(nucleus(&p, 0.6), vec![1, 2]);
        assert_eq!(nucleus(&p, 1.0).len(), 4);
        // Ties keep the lower index first.
        assert_eq!(nucleus(&[0.5, 0.5], 0.1), vec![0]);
    }

    #[test]
    fn tiny_top_p_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = [0.2, 0.3, 0.45, 0.05];
        for _ in 0..100 {
            assert_eq!(sample_top_p(&p, 1e-9, &mut rng), (2, 0.45));
        }
    }

    #[test]
    fn monte_carlo_matches_nucleus() {
        let p = [0.05, 0.3, 0.1, 0.25, 0.2, 0.1];
        for top_p in [0.6, 1.0] {
            let nuc = nucleus(&p, top_p);
            let mass: f64 = nuc.iter().map(|&i| p[i]).sum();
            let n = 100_000;
            let mut counts = [0usize; 6];
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..n {
                let (i, pi) = sample_top_p(&p, top_p, &mut rng);
                assert_eq!(pi, p[i]);
                counts[i] += 1;
            }
            for i in 0..6 {
                let expect = if nuc.contains(&i) { p[i] / mass } else { 0.0 };
                let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
                let freq = counts[i] as f64 / n as f64;
                assert!(
                    (freq - expect).abs() <= 3.0 * sigma + 1e-12,
                    "{i}: {freq} vs {expect}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn distributions_are_normalised(
            raw in proptest::collection::vec(0.0f64..50.0, 2..64),
            t in 0.05f64..3.0,
            w in 0.0f64..=1.0,
            top_p in 0.01f64..=1.0,
        ) {
            let g = logits_to_likelihood(&raw, t);
            let l = loss_to_likelihood(&raw, t);
            prop_assert!(sums_to_one(&g));
            prop_assert!(sums_to_one(&l));
            for kind in [MeanKind::Arithmetic, MeanKind::Geometric] {
                let p = aggregate(&g, &l, kind, w);
                prop_assert!(sums_to_one(&p));
                let nuc = nucleus(&p, top_p);
                let mass: f64 = nuc.iter().map(|&i| p[i]).sum();
                prop_assert!(mass >= top_p * (1.0 - 1e-9) || nuc.len() == p.len());
                let renorm: Vec<f64> = nuc.iter().map(|&i| p[i] / mass).collect();
                prop_assert!(sums_to_one(&renorm));
            }
        }

        #[test]
        fn loss_likelihood_scale_invariant(
            raw in proptest::collection::vec(0.01f64..20.0, 2..64),
            c in prop_oneof![Just(1e-3), Just(1.0), Just(1e3)],
        ) {
            let a = loss_to_likelihood(&raw, 0.3);
            let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
            let b = loss_to_likelihood(&scaled, 0.3);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
