use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyGapReport {
    pub h_rand: f64,
    pub h_opt: f64,
    pub delta_h: f64,
}

/// Shannon entropy in bits of an equal-width histogram spanning the sample range.
pub fn histogram_entropy(values: &[f64], bins: usize) -> f64 {
    assert!(bins > 0);
    if values.is_empty() {
        return 0.0;
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn window_entropies(values: &[f64], window: usize, bins: usize) -> Vec<f64> {
    let w = window.min(values.len()).max(1);
    values.chunks_exact(w).map(|c| histogram_entropy(c, bins)).collect()
}

/// `mean(H over exploration windows) - max(H over exploitation windows)`.
///
/// Both histories are cut into non-overlapping windows of
/// `min(window, len)` episodes; a trailing partial window is dropped.
pub fn entropy_gap(explore: &[f64], exploit: &[f64], bins: usize, window: usize) -> EntropyGapReport {
    assert!(!explore.is_empty() && !exploit.is_empty(), "both phases need episodes");
    let rand = window_entropies(explore, window, bins);
    let opt = window_entropies(exploit, window, bins);
    let h_rand = rand.iter().sum::<f64>() / rand.len() as f64;
    let h_opt = opt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    EntropyGapReport { h_rand, h_opt, delta_h: h_rand - h_opt }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_phases_have_zero_gap() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = entropy_gap(&x, &x, 16, 30);
        assert_eq!(r.delta_h, 0.0);
    }

    #[test]
    fn constant_exploitation_has_zero_entropy() {
        let explore: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let r = entropy_gap(&explore, &[4.0; 30], 16, 30);
        assert_eq!(r.h_opt, 0.0);
        assert_eq!(r.delta_h, r.h_rand);
    }

    #[test]
    fn eight_uniform_bins_give_three_bits() {
        let explore: Vec<f64> = (0..32).map(|i| (i % 8) as f64).collect();
        let r = entropy_gap(&explore, &[1.0; 32], 16, 32);
        assert_relative_eq!(r.delta_h, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exploitation_takes_worst_window() {
        let explore = vec![0.0, 1.0, 0.0, 1.0];
        let exploit = vec![5.0, 5.0, 1.0, 2.0];
        let r = entropy_gap(&explore, &exploit, 4, 2);
        assert_relative_eq!(r.h_rand, 1.0);
        assert_relative_eq!(r.h_opt, 1.0);
    }
}
