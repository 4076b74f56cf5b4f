//! Clustered illness-death data from a lognormal accelerated failure time
//! model, with informative or non-informative cluster sizes, Weibull
//! censoring and optional left truncation; plus the power, bias and
//! intra-cluster-group studies built on it.
//!
//! For subject `j` of cluster `i`
//!
//! ```text
//! log T_1. = d1 Z1_i + d2 Z2_ij + nu_i + sigma eps_ij
//! ```
//!
//! and the subject moves to state 2 with probability `branch_p`, else to 3.
//! From state 2 the death time is drawn from the lognormal law `D` with
//! location `d' Z` and scale `sigma`, conditioned to exceed `T_12`:
//! `T_23 = D^-1[D(T_12) + R {1 - D(T_12)}]`.
//!
//! Every cluster draws from its own ChaCha8 stream (stream number = cluster
//! index) keyed by the seed, so adding clusters never changes earlier ones.

mod calibrate;
mod config;
mod study;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, StandardNormal};
use serde::Serialize;

use crate::dist::{normal_quantile, normal_sf};
use crate::error::{Error, Result};
use crate::panel::{Cluster, Panel, StateSpace, Subject, Trajectory};

pub use self::calibrate::{calibrate_censor_scale, censoring_rate, expected_rate, pilot_absorption_times};
pub use self::config::{
    CensorUnit, ClusterSizes, IcgConfig, NormalReading, SimConfig, COVARIATES,
};
pub use self::study::{
    bias_study, icg_study, power_study, pseudo_true_beta1, pseudo_true_beta1_cached, replicate_seed, Strategy, StudyKind, StudyResult,
    StudyRow,
};

/// Latent draws of one subject, before censoring is applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentSubject {
    pub z2: f64,
    pub group: Option<u8>,
    /// Group-level random effect added to the location (0 outside the
    /// intra-cluster-group design).
    pub nu_group: f64,
    /// Time of leaving state 1.
    pub t1: f64,
    /// Whether state 1 is left for state 2.
    pub to_illness: bool,
    /// Death time after illness.
    pub t23: Option<f64>,
    pub censor: f64,
    pub truncation: f64,
}

impl LatentSubject {
    /// Time of entering the absorbing state.
    pub fn absorption_time(&self) -> f64 {
        self.t23.unwrap_or(self.t1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentCluster {
    pub nu: f64,
    pub z1: f64,
    pub subjects: Vec<LatentSubject>,
}

/// The RNG of cluster `index` for a given seed.
pub fn cluster_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Panel for `config`, with the censoring scale resolved by calibration when
/// only a target rate is given.
pub fn simulate_panel(config: &SimConfig) -> Result<Panel> {
    Ok(simulate_with_latent(config)?.0)
}

/// Panel for a configuration that includes an intra-cluster-group block.
pub fn simulate_icg_panel(config: &SimConfig) -> Result<Panel> {
    if config.icg.is_none() {
        return Err(Error::InvalidArgument("configuration has no intra-cluster-group block".into()));
    }
    simulate_panel(config)
}

/// The panel together with the latent draws that produced it.
pub fn simulate_with_latent(config: &SimConfig) -> Result<(Panel, Vec<LatentCluster>)> {
    config.validate()?;
    let scale = config.resolved_censor_scale()?;
    let latent: Vec<LatentCluster> = (0..config.m)
        .map(|i| draw_cluster(config, scale, &mut cluster_rng(config.seed, i), i))
        .collect::<Result<_>>()?;
    let clusters = latent
        .iter()
        .enumerate()
        .map(|(i, c)| observe_cluster(config, i, c))
        .collect();
    let panel = Panel::new(
        StateSpace::illness_death(),
        COVARIATES.iter().map(|s| s.to_string()).collect(),
        clusters,
    );
    Ok((panel, latent))
}

pub(crate) fn z1_of(index: usize, m: usize) -> f64 {
    // 1-based cluster number i satisfies 1 <= i <= m/2.
    f64::from(2 * (index + 1) <= m)
}

struct Normals {
    z2: Normal<f64>,
    nu: Normal<f64>,
}

fn normals(config: &SimConfig) -> Result<Normals> {
    let sd = |v: f64| match config.normal_reading {
        NormalReading::Variance => v.sqrt(),
        NormalReading::StdDev => v,
    };
    let bad = |e| Error::InvalidArgument(format!("normal parameters: {e}"));
    Ok(Normals {
        z2: Normal::new(config.z2_mean, sd(config.z2_spread)).map_err(bad)?,
        nu: Normal::new(0.0, sd(config.nu_spread)).map_err(bad)?,
    })
}

pub(crate) fn draw_cluster(
    config: &SimConfig,
    censor_scale: f64,
    rng: &mut ChaCha8Rng,
    index: usize,
) -> Result<LatentCluster> {
    let normals = normals(config)?;
    let z1 = z1_of(index, config.m);
    let nu = normals.nu.sample(rng);

    // (group label, group effect) per subject slot.
    let slots: Vec<(Option<u8>, f64)> = match &config.icg {
        None => {
            let n = match config.cluster_sizes {
                ClusterSizes::Informative => poisson(rng, (3.0 + 5.0 * nu - 5.0 * z1).exp())? + 2,
                ClusterSizes::NonInformative => poisson(rng, 30.0)?.max(1),
            };
            vec![(None, 0.0); n as usize]
        }
        Some(icg) => {
            let group_nu = Normal::new(0.0, match config.normal_reading {
                NormalReading::Variance => icg.nu_spread.sqrt(),
                NormalReading::StdDev => icg.nu_spread,
            })
            .map_err(|e| Error::InvalidArgument(format!("group effect: {e}")))?;
            let mut slots = Vec::new();
            for q in 0..2u8 {
                let v = group_nu.sample(rng);
                let n = poisson(rng, (icg.a[q as usize] + icg.b[q as usize] * v).exp())? + 1;
                slots.extend(std::iter::repeat_n((Some(q), v), n as usize));
            }
            slots
        }
    };

    let cluster_censor = match config.censor_unit {
        CensorUnit::Cluster => Some(weibull(rng, config.censor_shape, censor_scale)),
        CensorUnit::Subject => None,
    };
    let subjects = slots
        .into_iter()
        .map(|(group, nu_group)| draw_subject(config, &normals, rng, z1, nu + nu_group, group, nu_group, censor_scale, cluster_censor))
        .collect();
    Ok(LatentCluster { nu, z1, subjects })
}

#[allow(clippy::too_many_arguments)]
fn draw_subject(
    config: &SimConfig,
    normals: &Normals,
    rng: &mut ChaCha8Rng,
    z1: f64,
    effect: f64,
    group: Option<u8>,
    nu_group: f64,
    censor_scale: f64,
    cluster_censor: Option<f64>,
) -> LatentSubject {
    let branch = Bernoulli::new(config.branch_p).expect("branch_p validated");
    loop {
        let z2 = normals.z2.sample(rng);
        let eps: f64 = StandardNormal.sample(rng);
        let loc = config.delta[0] * z1 + config.delta[1] * z2;
        let sigma = config.sigma_eps;
        let t1 = (loc + effect + sigma * eps).exp();
        let to_illness = branch.sample(rng);
        let t23 = if to_illness {
            let u: f64 = rng.random();
            Some(death_after_illness(t1, loc, sigma, u))
        } else {
            None
        };
        let censor = cluster_censor.unwrap_or_else(|| weibull(rng, config.censor_shape, censor_scale));
        let truncation = match config.truncation_max {
            Some(lmax) => rng.random::<f64>() * lmax,
            None => 0.0,
        };
        if truncation < t1 && truncation < censor {
            return LatentSubject {
                z2,
                group,
                nu_group,
                t1,
                to_illness,
                t23,
                censor,
                truncation,
            };
        }
    }
}

/// `D^-1[D(t12) + u {1 - D(t12)}]` for the lognormal `D` with location `loc`
/// and scale `sigma`, computed on the upper tail so that it stays accurate
/// far out where `D(t12)` rounds to 1.
pub fn death_after_illness(t12: f64, loc: f64, sigma: f64, u: f64) -> f64 {
    let z12 = (t12.ln() - loc) / sigma;
    let tail = normal_sf(z12);
    let z23 = if tail > 1e-300 {
        -normal_quantile((1.0 - u) * tail)
    } else {
        // Exponential tail approximation P(Z > z + x | Z > z) ~ exp(-z x).
        z12 - (1.0 - u).ln() / z12
    };
    let t23 = (loc + sigma * z23).exp();
    if t23 > t12 {
        t23
    } else {
        next_up(t12)
    }
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> Result<u64> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::InvalidArgument(format!("cluster size mean {mean}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Weibull draw by inversion: `scale (-ln U)^(1/shape)`.
fn weibull(rng: &mut ChaCha8Rng, shape: f64, scale: f64) -> f64 {
    if scale == f64::INFINITY {
        return f64::INFINITY;
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    scale * (-u.ln()).powf(1.0 / shape)
}

fn observe_cluster(config: &SimConfig, index: usize, latent: &LatentCluster) -> Cluster {
    let subjects = latent
        .subjects
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let c = s.censor;
            let mut tr = Trajectory::new(1);
            if s.t1 <= c {
                if let Some(t23) = s.t23 {
                    tr = tr.with_transition(s.t1, 2);
                    if t23 <= c {
                        tr = tr.with_transition(t23, 3);
                    }
                } else {
                    tr = tr.with_transition(s.t1, 3);
                }
            }
            let absorbed = tr.final_state() == 3;
            if !absorbed {
                tr = tr.censored_at(c);
            }
            if config.truncation_max.is_some() {
                tr = tr.truncated_at(s.truncation);
            }
            let mut subject = Subject::new(format!("{}-{}", index + 1, j + 1), tr).with_covariates(vec![latent.z1, s.z2]);
            subject.group = s.group;
            subject
        })
        .collect();
    Cluster::new((index + 1).to_string(), subjects)
}
