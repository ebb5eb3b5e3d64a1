//! Order-fixed Monte Carlo reductions.
//!
//! Means are accumulated pairwise over the path-ordered sample, so the result
//! is independent of how paths were scheduled. Weights given in log form are
//! rescaled by their maximum before exponentiation.

use serde::Serialize;

/// Fraction of the largest weights whose share of the total mass is reported.
pub const TOP_FRACTION: f64 = 1e-3;
/// Share of the mass carried by the top weights above which the mean is flagged.
pub const DOMINANCE_THRESHOLD: f64 = 0.2;

pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 256 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Sample mean with standard error and heavy-tail guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n_paths: usize,
    /// Largest absolute sample value.
    pub max_weight: f64,
    /// Share of the absolute mass carried by the top 0.1% of samples.
    pub top_mass_fraction: f64,
    /// Set when `top_mass_fraction` exceeds the dominance threshold.
    pub dominated: bool,
}

impl McEstimate {
    /// Estimate from samples `exp(logs[i])`; `-inf` encodes a zero weight.
    pub fn from_logs(logs: &[f64]) -> Self {
        let n = logs.len();
        let shift = logs.iter().copied().filter(|l| l.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if n == 0 || !shift.is_finite() {
            return McEstimate::from_values(&vec![0.0; n]);
        }
        let scaled: Vec<f64> = logs.iter().map(|l| (l - shift).exp()).collect();
        let mut est = McEstimate::from_values(&scaled);
        let f = shift.exp();
        est.mean *= f;
        est.se *= f;
        est.max_weight *= f;
        est
    }

    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return McEstimate { mean: f64::NAN, se: f64::NAN, n_paths: 0, max_weight: 0.0, top_mass_fraction: 0.0, dominated: false };
        }
        let mean = pairwise_sum(values) / n as f64;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 };
        let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        abs.sort_by(|a, b| b.total_cmp(a));
        let total = pairwise_sum(&abs);
        let k = ((TOP_FRACTION * n as f64).ceil() as usize).max(1);
        let top = abs[..k].iter().sum::<f64>();
        let frac = if total > 0.0 { top / total } else { 0.0 };
        McEstimate {
            mean,
            se: (var / n as f64).sqrt(),
            n_paths: n,
            max_weight: abs[0],
            top_mass_fraction: frac,
            dominated: frac > DOMINANCE_THRESHOLD,
        }
    }

    /// `|mean - target| <= k se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }

    pub fn interval(&self, k: f64) -> (f64, f64) {
        (self.mean - k * self.se, self.mean + k * self.se)
    }

    /// Whether the `k se` intervals of the two estimates intersect.
    pub fn overlaps(&self, other: &McEstimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * (self.se + other.se)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_and_se_of_small_sample() {
        let e = McEstimate::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(e.max_weight, 4.0);
    }

    #[test]
    fn single_dominant_weight_is_flagged() {
        let mut v = vec![1.0; 1000];
        v[17] = 1e6;
        let e = McEstimate::from_values(&v);
        assert!(e.dominated);
        assert!(e.top_mass_fraction > 0.99);
    }

    #[test]
    fn logs_handle_zero_weights_and_overflow() {
        let e = McEstimate::from_logs(&[f64::NEG_INFINITY, 0.0]);
        assert_eq!(e.mean, 0.5);
        let e = McEstimate::from_logs(&[800.0, 800.0]);
        assert!((e.mean.ln() - 800.0).abs() < 1e-12 || e.mean.is_infinite());
        let big = McEstimate::from_logs(&[700.0, 700.0 + 2f64.ln()]);
        assert!((big.mean / 700f64.exp() - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn log_and_linear_forms_agree(v in prop::collection::vec(0.0f64..50.0, 2..200)) {
            let logs: Vec<f64> = v.iter().map(|x| x.ln()).collect();
            let a = McEstimate::from_values(&v);
            let b = McEstimate::from_logs(&logs);
            prop_assert!((a.mean - b.mean).abs() <= 1e-12 * a.mean.abs().max(1.0));
            prop_assert!((a.se - b.se).abs() <= 1e-9 * a.se.abs().max(1.0));
        }

        #[test]
        fn permutation_changes_mean_by_rounding_only(v in prop::collection::vec(-10.0f64..10.0, 1..600)) {
            let mut w = v.clone();
            w.reverse();
            let a = McEstimate::from_values(&v);
            let b = McEstimate::from_values(&w);
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
        }
    }
}
