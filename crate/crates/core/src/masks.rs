//! Subnetwork masks and the per-neuron statistics used to aggregate them.
//!
//! A [`MaskMatrix`] is `p x m`: row `l` selects the neurons of subnetwork `l`,
//! column `r` lists the subnetworks that contain neuron `r`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskDistribution {
    /// Every entry independently Bernoulli(xi).
    Bernoulli,
    /// Every neuron assigned to exactly one uniformly chosen subnetwork.
    Categorical,
}

impl std::fmt::Display for MaskDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskDistribution::Bernoulli => f.write_str("bernoulli"),
            MaskDistribution::Categorical => f.write_str("categorical"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: Vec<Vec<bool>>,
    m: usize,
    distribution: MaskDistribution,
}

impl MaskMatrix {
    /// Wraps explicit rows. Categorical masks must partition the neurons.
    pub fn from_rows(rows: Vec<Vec<bool>>, distribution: MaskDistribution) -> Result<Self> {
        let m = rows.first().map(Vec::len).ok_or_else(|| Error::invalid("p", "need at least one row"))?;
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("rows", "all mask rows must have the same length"));
        }
        let mask = MaskMatrix { rows, m, distribution };
        if distribution == MaskDistribution::Categorical {
            if let Some(r) = (0..m).find(|&r| mask.column_count(r) != 1) {
                return Err(Error::invalid(
                    "rows",
                    format!("categorical mask column {r} does not sum to 1"),
                ));
            }
        }
        Ok(mask)
    }

    pub fn p(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn distribution(&self) -> MaskDistribution {
        self.distribution
    }

    pub fn row(&self, l: usize) -> &[bool] {
        &self.rows[l]
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn get(&self, l: usize, r: usize) -> bool {
        self.rows[l][r]
    }

    /// Number of subnetworks containing neuron `r`.
    pub fn column_count(&self, r: usize) -> usize {
        self.rows.iter().filter(|row| row[r]).count()
    }

    /// Fraction of ones in the whole matrix.
    pub fn density(&self) -> f64 {
        let ones: usize = self.rows.iter().map(|r| r.iter().filter(|&&b| b).count()).sum();
        ones as f64 / (self.p() * self.m) as f64
    }
}

pub(crate) fn check_xi(xi: f64) -> Result<()> {
    if xi > 0.0 && xi <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("xi", format!("{xi} is outside (0, 1]")))
    }
}

/// I.i.d. Bernoulli(xi) entries, filled row by row.
pub fn sample_bernoulli(m: usize, p: usize, xi: f64, rng: &mut Rng) -> Result<MaskMatrix> {
    check_xi(xi)?;
    if m == 0 || p == 0 {
        return Err(Error::invalid("m/p", "mask dimensions must be positive"));
    }
    let rows = (0..p)
        .map(|_| (0..m).map(|_| rng.random_bool(xi)).collect())
        .collect();
    Ok(MaskMatrix {
        rows,
        m,
        distribution: MaskDistribution::Bernoulli,
    })
}

/// Each neuron goes to one subnetwork drawn uniformly from `0..p`.
pub fn sample_categorical(m: usize, p: usize, rng: &mut Rng) -> Result<MaskMatrix> {
    if m == 0 || p == 0 {
        return Err(Error::invalid("m/p", "mask dimensions must be positive"));
    }
    let mut rows = vec![vec![false; m]; p];
    for r in 0..m {
        let owner = rng.random_range(0..p);
        rows[owner][r] = true;
    }
    Ok(MaskMatrix {
        rows,
        m,
        distribution: MaskDistribution::Categorical,
    })
}

/// Per-neuron counts and aggregation weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStats {
    /// Number of subnetworks containing each neuron.
    pub counts: Vec<usize>,
    /// `max(count, 1)`.
    pub normalizer: Vec<usize>,
    /// `min(count, 1)`: whether the neuron is in any subnetwork.
    pub selected: Vec<bool>,
    /// `selected / normalizer`: 0 for unused neurons, else `1 / count`.
    pub weights: Vec<f64>,
}

pub fn compute_stats(mask: &MaskMatrix) -> MaskStats {
    let counts: Vec<usize> = (0..mask.m()).map(|r| mask.column_count(r)).collect();
    let normalizer = counts.iter().map(|&c| c.max(1)).collect();
    let selected: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    let weights = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
        .collect();
    MaskStats {
        counts,
        normalizer,
        selected,
        weights,
    }
}

/// Probability that a neuron lands in at least one of `p` Bernoulli(xi)
/// subnetworks: `1 - (1 - xi)^p`.
pub fn theta(xi: f64, p: usize) -> f64 {
    1.0 - (1.0 - xi).powi(p as i32)
}

/// `nu_{r,r'} = w_r * sum_l m^l_r m^l_{r'}` with `w_r` the aggregation weight
/// of neuron `r`.
pub fn mixing_coefficient(mask: &MaskMatrix, r: usize, r_prime: usize) -> f64 {
    assert!(r < mask.m() && r_prime < mask.m(), "neuron index out of range");
    let count = mask.column_count(r);
    if count == 0 {
        return 0.0;
    }
    let shared = mask.rows.iter().filter(|row| row[r] && row[r_prime]).count();
    shared as f64 / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn bernoulli_degenerate_and_density() {
        let mut rng = rng_from_seed(1);
        let ones = sample_bernoulli(50, 3, 1.0, &mut rng).unwrap();
        assert!(ones.rows().iter().all(|r| r.iter().all(|&b| b)));

        let half = sample_bernoulli(10_000, 10, 0.5, &mut rng).unwrap();
        let density = half.density();
        assert!((0.49..=0.51).contains(&density), "{density}");

        let dropout = sample_bernoulli(64, 1, 0.5, &mut rng).unwrap();
        assert_eq!(dropout.p(), 1);
        assert_eq!(dropout.distribution(), MaskDistribution::Bernoulli);
    }

    #[test]
    fn bernoulli_rejects_bad_xi() {
        let mut rng = rng_from_seed(1);
        assert!(sample_bernoulli(4, 2, 0.0, &mut rng).is_err());
        assert!(sample_bernoulli(4, 2, 1.5, &mut rng).is_err());
    }

    #[test]
    fn categorical_partitions() {
        let mut rng = rng_from_seed(2);
        let single = sample_categorical(17, 1, &mut rng).unwrap();
        assert!(single.row(0).iter().all(|&b| b));

        let mask = sample_categorical(100_000, 4, &mut rng).unwrap();
        for r in 0..mask.m() {
            assert_eq!(mask.column_count(r), 1);
        }
        for l in 0..4 {
            let density = mask.row(l).iter().filter(|&&b| b).count() as f64 / mask.m() as f64;
            assert!((0.24..=0.26).contains(&density), "row {l}: {density}");
        }
        assert!(compute_stats(&mask).weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn stats_hand_values() {
        let mask = MaskMatrix::from_rows(
            vec![vec![true, false, true], vec![true, false, false]],
            MaskDistribution::Bernoulli,
        )
        .unwrap();
        let s = compute_stats(&mask);
        assert_eq!(s.counts, vec![2, 0, 1]);
        assert_eq!(s.normalizer, vec![2, 1, 1]);
        assert_eq!(s.selected, vec![true, false, true]);
        assert_eq!(s.weights, vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn categorical_rows_must_partition() {
        let err = MaskMatrix::from_rows(
            vec![vec![true, true], vec![true, false]],
            MaskDistribution::Categorical,
        );
        assert!(err.is_err());
    }

    #[test]
    fn theta_values() {
        assert_eq!(theta(1.0, 5), 1.0);
        assert!((theta(0.3, 1) - 0.3).abs() < 1e-15);
        assert_eq!(theta(0.5, 2), 0.75);
    }

    #[test]
    fn mixing_coefficient_values() {
        let mask = MaskMatrix::from_rows(
            vec![vec![true, true, false], vec![true, false, false]],
            MaskDistribution::Bernoulli,
        )
        .unwrap();
        assert_eq!(mixing_coefficient(&mask, 0, 0), 1.0);
        assert_eq!(mixing_coefficient(&mask, 0, 1), 0.5);
        assert_eq!(mixing_coefficient(&mask, 2, 0), 0.0);
    }
}
