//! Small numeric helpers shared across modules.
//!
//! All reductions that feed reported statistics go through [`pairwise_sum`]:
//! the summation tree depends only on the slice length, so results are
//! bit-for-bit reproducible no matter how the values were produced (serially
//! or by any number of worker threads) while keeping rounding error at
//! `O(log n)` instead of `O(n)`.

/// Sums a slice with a fixed pairwise reduction tree.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean of a slice via [`pairwise_sum`]. Empty input returns NaN.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Evenly spaced grid over `[lo, hi]` with both endpoints included.
///
/// Requires `points >= 2` and `lo < hi`; the last point is pinned to `hi`
/// exactly so downstream endpoint comparisons are safe.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2, "linspace needs at least two points");
    assert!(lo < hi, "linspace needs lo < hi");
    let step = (hi - lo) / (points - 1) as f64;
    let mut out: Vec<f64> = (0..points).map(|j| lo + step * j as f64).collect();
    out[points - 1] = hi;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_inputs() {
        let v = [1.0, 2.0, 3.0, 4.5];
        assert_eq!(pairwise_sum(&v), 10.5);
    }

    #[test]
    fn pairwise_sum_is_accurate_on_adversarial_input() {
        // 1 followed by many tiny values: naive left-to-right summation loses
        // them all, the pairwise tree keeps the mass up to a few roundings
        // on the spine that carries the 1.
        let mut v = vec![1.0f64];
        v.extend(std::iter::repeat(1e-16).take(1 << 16));
        let exact = 1.0 + 65536.0 * 1e-16;
        let naive: f64 = v.iter().sum();
        assert!((naive - exact).abs() > 1e-12, "naive should drop the tail, got {naive}");
        assert!((pairwise_sum(&v) - exact).abs() < 1e-14);
    }

    #[test]
    fn pairwise_mean_of_constant_is_exact() {
        let v = vec![0.25; 1000];
        assert_eq!(pairwise_mean(&v), 0.25);
    }

    #[test]
    fn linspace_hits_both_endpoints() {
        let g = linspace(-2.0, 7.0, 10);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], -2.0);
        assert_eq!(g[9], 7.0);
        for w in g.windows(2) {
            assert!(w[1] > w[0]);
        }
    }
}
