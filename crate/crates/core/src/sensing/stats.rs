use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    /// Tie-corrected H statistic.
    pub h: f64,
    /// Effect size `(H - g + 1) / (n - g)`, clamped to `[0, 1]`.
    pub eta_squared: f64,
    pub groups: usize,
    pub n: usize,
}

/// Kruskal-Wallis H test with midranks for ties.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis> {
    if groups.len() < 2 {
        return Err(Error::arg("Kruskal-Wallis needs at least two groups"));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::arg("Kruskal-Wallis groups must be non-empty"));
    }
    if groups.iter().flatten().any(|x| x.is_nan()) {
        return Err(Error::arg("Kruskal-Wallis input contains NaN"));
    }

    let mut pooled: Vec<(f64, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, xs)| xs.iter().map(move |&x| (x, g)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pooled.len();
    let g = groups.len();

    let mut rank_sums = vec![0.0; g];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &(_, grp) in &pooled[i..j] {
            rank_sums[grp] += midrank;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }

    let nf = n as f64;
    let mean_rank = (nf + 1.0) / 2.0;
    let spread: f64 = groups
        .iter()
        .zip(&rank_sums)
        .map(|(xs, &r)| {
            let ni = xs.len() as f64;
            ni * (r / ni - mean_rank).powi(2)
        })
        .sum();
    let h_raw = 12.0 / (nf * (nf + 1.0)) * spread;
    let correction = 1.0 - tie_term / (nf * nf * nf - nf);
    let h = if correction > 0.0 { h_raw / correction } else { 0.0 };

    let eta_squared = if n > g {
        ((h - g as f64 + 1.0) / (nf - g as f64)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(KruskalWallis {
        h,
        eta_squared,
        groups: g,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_equal_is_zero() {
        let r = kruskal_wallis(&[vec![2.0; 4], vec![2.0; 3], vec![2.0]]).unwrap();
        assert_eq!(r.h, 0.0);
        assert_eq!(r.eta_squared, 0.0);
    }

    #[test]
    fn three_separated_groups() {
        // Ranks are the values; group means 2, 5, 8 around 5:
        // H = 12/(9*10) * 3*(9 + 0 + 9) = 7.2
        let r = kruskal_wallis(&[vec![1., 2., 3.], vec![4., 5., 6.], vec![7., 8., 9.]]).unwrap();
        assert!((r.h - 7.2).abs() < 1e-12);
        assert!((r.eta_squared - (7.2 - 2.0) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_groups() {
        assert!(kruskal_wallis(&[vec![1.0]]).is_err());
        assert!(kruskal_wallis(&[vec![1.0], vec![]]).is_err());
    }

    proptest! {
        #[test]
        fn invariant_under_monotone_transform(
            groups in prop::collection::vec(prop::collection::vec(0i32..20, 1..15), 2..5)
        ) {
            let raw: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|&x| x as f64).collect()).collect();
            let mapped: Vec<Vec<f64>> = raw.iter().map(|g| g.iter().map(|x| (x * 0.3).exp() + 5.0).collect()).collect();
            let a = kruskal_wallis(&raw).unwrap();
            let b = kruskal_wallis(&mapped).unwrap();
            prop_assert!((a.h - b.h).abs() <= 1e-9 * a.h.max(1.0));
        }
    }
}
