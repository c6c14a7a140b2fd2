use super::similarity::OneShotScores;

pub const DEFAULT_EPSILON: f64 = 0.05;

/// Mean epsilon-smoothed ratio of attack over baseline across the four
/// one-shot metrics (oriented so that values above 1 favour the attack).
pub fn improvement_factor(attack: &OneShotScores, base: &OneShotScores, eps: f64) -> f64 {
    0.25 * ((attack.pr + eps) / (base.pr + eps)
        + (base.hd + eps) / (attack.hd + eps)
        + (base.ld + eps) / (attack.ld + eps)
        + (base.jwd + eps) / (attack.jwd + eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let base = OneShotScores {
            pr: 0.0,
            hd: 0.5,
            ld: 0.4,
            jwd: 0.3,
        };
        let attack = OneShotScores { pr: 0.1, ..base };
        assert!((improvement_factor(&attack, &base, 0.05) - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn identity_is_one(pr in 0.0f64..=1.0, hd in 0.0f64..=1.0, ld in 0.0f64..=1.0, jwd in 0.0f64..=1.0) {
            let x = OneShotScores { pr, hd, ld, jwd };
            prop_assert_eq!(improvement_factor(&x, &x, DEFAULT_EPSILON), 1.0);
        }
    }
}
