//! Pseudo-values and estimating functions for the linear random-effects
//! model `Y_ij = mu + nu_i + eps_ij` with cluster size `n_i = h(nu_i)`.
//!
//! The two starting estimators are the grand mean `mu1` and the mean of
//! cluster means `mu2`. Their jackknife pseudo-values
//!
//! ```text
//! uw: n mu1 - (n - 1) mu1[-ij]
//! w:  m {n_i mu2 - (n_i - 1) mu2[-ij]} - (m - 1) mu2[-i]
//! ```
//!
//! both reproduce `Y_ij` on complete data. [`estfun_expectation_mc`]
//! estimates the cluster-level expectation of `sum_j w_ij (Y~_ij - mu)`,
//! which vanishes under `w = 1/n_i` for any `h` but not under `w = 1` when
//! `h` is informative.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::{cluster_rng, replicate_seed};

/// Cluster size as a function of the random effect; never below 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeLink {
    Constant(usize),
    /// `ceil(exp(a + b nu)) + 2`
    Exponential { a: f64, b: f64 },
}

impl SizeLink {
    pub fn size(&self, nu: f64) -> usize {
        let n = match *self {
            SizeLink::Constant(n) => n,
            SizeLink::Exponential { a, b } => (a + b * nu).exp().ceil() as usize + 2,
        };
        n.max(2)
    }

    pub fn is_informative(&self) -> bool {
        matches!(self, SizeLink::Exponential { b, .. } if *b != 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearEstimator {
    /// Grand mean, with the one-stage (`uw`) pseudo-values.
    Mu1,
    /// Mean of cluster means, with the two-stage (`w`) pseudo-values.
    Mu2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstfunWeight {
    One,
    InvN,
}

impl EstfunWeight {
    pub fn label(self) -> &'static str {
        match self {
            EstfunWeight::One => "one",
            EstfunWeight::InvN => "inv_n",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub m: usize,
    pub mu: f64,
    /// SD of `nu_i`.
    pub sigma_alpha: f64,
    /// SD of `eps_ij`.
    pub sigma_eps: f64,
    pub size_link: SizeLink,
    /// Pseudo-values entering the estimating function.
    pub estimator: LinearEstimator,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            m: 20,
            mu: 0.0,
            sigma_alpha: 0.25,
            sigma_eps: 1.0,
            size_link: SizeLink::Exponential { a: 3.0, b: 5.0 },
            estimator: LinearEstimator::Mu2,
            seed: 1,
        }
    }
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config("m must be at least 2".into()));
        }
        if !(self.sigma_alpha > 0.0 && self.sigma_eps > 0.0) {
            return Err(Error::Config("sigma_alpha and sigma_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Responses of one simulated panel, with each cluster's random effect.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPanel {
    pub nu: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

/// A panel for `config`, cluster `i` drawn from stream `i` of `seed`.
pub fn simulate_linear(config: &LinearConfig, seed: u64) -> Result<LinearPanel> {
    config.validate()?;
    let nu_d = Normal::new(0.0, config.sigma_alpha).map_err(|e| Error::Config(e.to_string()))?;
    let eps_d = Normal::new(0.0, config.sigma_eps).map_err(|e| Error::Config(e.to_string()))?;
    let (nu, y) = (0..config.m)
        .map(|i| {
            let mut rng = cluster_rng(seed, i);
            let nu = nu_d.sample(&mut rng);
            let n = config.size_link.size(nu);
            let y = (0..n).map(|_| config.mu + nu + eps_d.sample(&mut rng)).collect();
            (nu, y)
        })
        .unzip();
    Ok(LinearPanel { nu, y })
}

/// Jackknife pseudo-values, `out[i][j]` for subject `j` of cluster `i`.
pub fn linear_pseudo(y: &[Vec<f64>], estimator: LinearEstimator) -> Result<Vec<Vec<f64>>> {
    let m = y.len();
    let n: usize = y.iter().map(Vec::len).sum();
    match estimator {
        LinearEstimator::Mu1 => {
            if n < 2 {
                return Err(Error::JackknifeUndefined("need at least two subjects"));
            }
            let total: f64 = y.iter().flatten().sum();
            let nf = n as f64;
            let mu1 = total / nf;
            Ok(y.iter()
                .map(|c| {
                    c.iter()
                        .map(|&v| {
                            let loo = (total - v) / (nf - 1.0);
                            nf * mu1 - (nf - 1.0) * loo
                        })
                        .collect()
                })
                .collect())
        }
        LinearEstimator::Mu2 => {
            if m < 2 {
                return Err(Error::JackknifeUndefined("need at least two clusters"));
            }
            if y.iter().any(|c| c.len() < 2) {
                return Err(Error::JackknifeUndefined("every cluster needs at least two subjects"));
            }
            let mf = m as f64;
            let sums: Vec<f64> = y.iter().map(|c| c.iter().sum()).collect();
            let means: Vec<f64> = sums.iter().zip(y).map(|(s, c)| s / c.len() as f64).collect();
            let mu2 = means.iter().sum::<f64>() / mf;
            Ok(y.iter()
                .enumerate()
                .map(|(i, c)| {
                    let ni = c.len() as f64;
                    let without_cluster = (mf * mu2 - means[i]) / (mf - 1.0);
                    c.iter()
                        .map(|&v| {
                            let mean_without = (sums[i] - v) / (ni - 1.0);
                            let without_subject = mu2 + (mean_without - means[i]) / mf;
                            mf * (ni * mu2 - (ni - 1.0) * without_subject) - (mf - 1.0) * without_cluster
                        })
                        .collect()
                })
                .collect())
        }
    }
}

/// Monte Carlo mean of the per-cluster estimating function with its
/// standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstfunResult {
    pub weight: EstfunWeight,
    pub replicates: usize,
    pub mean: f64,
    pub se: f64,
}

impl EstfunResult {
    /// `|mean| / se`
    pub fn z(&self) -> f64 {
        self.mean.abs() / self.se
    }
}

/// Replicate `r` contributes the average over its clusters of
/// `sum_j w_ij (Y~_ij - mu)`; the result is the mean over replicates.
pub fn estfun_expectation_mc(config: &LinearConfig, weight: EstfunWeight, replicates: usize) -> Result<EstfunResult> {
    config.validate()?;
    if replicates < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let per_rep: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let panel = simulate_linear(config, replicate_seed(config.seed, r))?;
            let pv = linear_pseudo(&panel.y, config.estimator)?;
            let total: f64 = pv
                .iter()
                .map(|c| {
                    let w = match weight {
                        EstfunWeight::One => 1.0,
                        EstfunWeight::InvN => 1.0 / c.len() as f64,
                    };
                    c.iter().map(|v| w * (v - config.mu)).sum::<f64>()
                })
                .sum();
            Ok(total / config.m as f64)
        })
        .collect::<Result<_>>()?;
    let (mean, se) = mean_se(&per_rep);
    Ok(EstfunResult {
        weight,
        replicates,
        mean,
        se,
    })
}

/// Monte Carlo mean of `Y~_i1` (the first subject of each cluster) with
/// its standard error; unbiasedness means this is close to `mu`.
pub fn pseudo_mean_mc(config: &LinearConfig, replicates: usize) -> Result<(f64, f64)> {
    config.validate()?;
    if replicates < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let per_rep: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let panel = simulate_linear(config, replicate_seed(config.seed, r))?;
            let pv = linear_pseudo(&panel.y, config.estimator)?;
            Ok(pv.iter().map(|c| c[0]).sum::<f64>() / pv.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(mean_se(&per_rep))
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// The JSON report of one oracle run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub config: LinearConfig,
    pub results: Vec<EstfunResult>,
}

/// Both weightings on the same replicates.
pub fn oracle_report(config: &LinearConfig, replicates: usize) -> Result<OracleReport> {
    let results = [EstfunWeight::One, EstfunWeight::InvN]
        .into_iter()
        .map(|w| estfun_expectation_mc(config, w, replicates))
        .collect::<Result<_>>()?;
    Ok(OracleReport {
        config: config.clone(),
        results,
    })
}

impl OracleReport {
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(y: &[Vec<f64>], estimator: LinearEstimator) -> Vec<Vec<f64>> {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mu1 = |y: &[Vec<f64>]| mean(&y.concat());
        let mu2 = |y: &[Vec<f64>]| y.iter().map(|c| mean(c)).sum::<f64>() / y.len() as f64;
        let n = y.iter().map(Vec::len).sum::<usize>() as f64;
        let m = y.len() as f64;
        y.iter()
            .enumerate()
            .map(|(i, c)| {
                (0..c.len())
                    .map(|j| {
                        let mut drop_ij = y.to_vec();
                        drop_ij[i].remove(j);
                        match estimator {
                            LinearEstimator::Mu1 => n * mu1(y) - (n - 1.0) * mu1(&drop_ij),
                            LinearEstimator::Mu2 => {
                                let mut drop_i = y.to_vec();
                                drop_i.remove(i);
                                let ni = c.len() as f64;
                                m * (ni * mu2(y) - (ni - 1.0) * mu2(&drop_ij)) - (m - 1.0) * mu2(&drop_i)
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn two_cluster_hand_values() {
        // mu2 = (1.5 + 5) / 2 = 3.25; dropping Y_11 gives (2 + 5) / 2 = 3.5
        // and dropping cluster 1 gives 5, so Y~_11 = 2 (2 * 3.25 - 3.5) - 5 = 1.
        let y = vec![vec![1.0, 2.0], vec![3.0, 5.0, 7.0]];
        let w = linear_pseudo(&y, LinearEstimator::Mu2).unwrap();
        assert!((w[0][0] - 1.0).abs() < 1e-12);
        for est in [LinearEstimator::Mu1, LinearEstimator::Mu2] {
            let pv = linear_pseudo(&y, est).unwrap();
            for (a, b) in pv.concat().iter().zip(y.concat()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_forms_match_recomputation() {
        let cfg = LinearConfig {
            m: 6,
            ..LinearConfig::default()
        };
        let panel = simulate_linear(&cfg, 3).unwrap();
        for est in [LinearEstimator::Mu1, LinearEstimator::Mu2] {
            let fast = linear_pseudo(&panel.y, est).unwrap();
            let slow = naive(&panel.y, est);
            for (a, b) in fast.concat().iter().zip(slow.concat()) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_response_gives_constant_pseudo_values() {
        let y = vec![vec![2.5; 3], vec![2.5; 2], vec![2.5; 4]];
        for est in [LinearEstimator::Mu1, LinearEstimator::Mu2] {
            assert!(linear_pseudo(&y, est).unwrap().concat().iter().all(|v| (v - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn singleton_panels_are_rejected() {
        assert!(linear_pseudo(&[vec![1.0]], LinearEstimator::Mu1).is_err());
        assert!(linear_pseudo(&[vec![1.0, 2.0]], LinearEstimator::Mu2).is_err());
        assert!(linear_pseudo(&[vec![1.0, 2.0], vec![3.0]], LinearEstimator::Mu2).is_err());
    }

    #[test]
    fn sizes_clip_at_two() {
        assert_eq!(SizeLink::Constant(1).size(0.0), 2);
        assert_eq!(SizeLink::Exponential { a: 0.0, b: 1.0 }.size(-50.0), 3);
        assert_eq!(SizeLink::Exponential { a: 3.0, b: 5.0 }.size(0.0), 23);
    }

    #[test]
    fn estfun_is_deterministic() {
        let cfg = LinearConfig::default();
        let a = estfun_expectation_mc(&cfg, EstfunWeight::One, 50).unwrap();
        let b = estfun_expectation_mc(&cfg, EstfunWeight::One, 50).unwrap();
        assert_eq!(a, b);
    }
}
