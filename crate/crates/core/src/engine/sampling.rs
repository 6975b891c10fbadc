//! Weighted sampling without replacement.
//!
//! Each candidate gets the key `ln(u) / w` with `u` uniform in (0, 1);
//! visiting candidates by descending key is a draw without replacement with
//! probability proportional to weight at every step. The uniform for a
//! candidate is a pure function of (seed, round, candidate), so a draw does
//! not depend on the order candidates are enumerated in.

use std::cmp::Ordering;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform in the open interval (0, 1).
pub(crate) fn uniform(seed: u64, round: u64, item: u64) -> f64 {
    let bits = splitmix64(seed ^ splitmix64(round ^ splitmix64(item ^ 0xA076_1D64_78BD_642F)));
    ((bits >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Keyed {
    pub key: f64,
    pub item: u32,
}

/// Candidates with positive weight ordered by draw order.
pub(crate) fn draw_order(
    seed: u64,
    round: u64,
    weights: impl Iterator<Item = (u32, f64)>,
) -> Vec<Keyed> {
    let mut keyed: Vec<Keyed> = weights
        .filter(|(_, w)| *w > 0.0 && w.is_finite())
        .map(|(item, w)| Keyed {
            key: uniform(seed, round, u64::from(item)).ln() / w,
            item,
        })
        .collect();
    keyed.sort_unstable_by(|a, b| {
        b.key
            .partial_cmp(&a.key)
            .unwrap_or(Ordering::Equal)
            .then(a.item.cmp(&b.item))
    });
    keyed
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniforms_are_in_open_interval_and_stable() {
        for i in 0..10_000 {
            let u = uniform(7, 3, i);
            assert!(u > 0.0 && u < 1.0);
            assert_eq!(u, uniform(7, 3, i));
        }
        assert_ne!(uniform(7, 3, 1), uniform(7, 4, 1));
        assert_ne!(uniform(7, 3, 1), uniform(8, 3, 1));
    }

    #[test]
    fn zero_weights_never_drawn() {
        let order = draw_order(1, 0, [(0, 0.0), (1, 0.5), (2, 0.0)].into_iter());
        assert_eq!(order.len(), 1);
        assert_eq!(order[0].item, 1);
    }

    #[test]
    fn first_draw_frequencies_follow_weights() {
        let weights = [0.6, 0.3, 0.1];
        let mut counts = [0usize; 3];
        let rounds = 50_000;
        for round in 0..rounds {
            let order = draw_order(11, round, weights.iter().enumerate().map(|(i, &w)| (i as u32, w)));
            counts[order[0].item as usize] += 1;
        }
        for (c, w) in counts.iter().zip(weights) {
            assert!((*c as f64 / rounds as f64 - w).abs() < 0.01);
        }
    }

    #[test]
    fn second_draw_is_conditional_on_the_first() {
        // P(second = 2) = 0.6 * 0.1/0.4 + 0.3 * 0.1/0.7
        let expected = 0.6 * 0.25 + 0.3 * (0.1 / 0.7);
        let rounds = 60_000;
        let hits = (0..rounds)
            .filter(|&r| draw_order(5, r, [(0u32, 0.6), (1, 0.3), (2, 0.1)].into_iter())[1].item == 2)
            .count();
        assert!((hits as f64 / rounds as f64 - expected).abs() < 0.01);
    }
}
