//! Monte Carlo power, bias and intra-cluster-group studies.
//!
//! Replicate `r` of a study simulates a fresh panel from the seed
//! [`replicate_seed`]`(config.seed, r)`, so results never depend on how the
//! replicates are scheduled. Fits use one time point (`config.eval_time`),
//! an intercept plus the study covariates, and the sandwich Wald test.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Panel, WeightScheme};
use crate::pseudovalues::{pseudo_values_all_states, Method, PseudoValueSet};
use crate::regression::{fit_gee, wald_test, Correlation, ModelSpec};

use super::{cluster_rng, draw_cluster, simulate_panel, splitmix64, SimConfig, COVARIATES};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const REFERENCE_SALT: u64 = 0x7265_665f_6265_7461;

/// Seed of replicate `r` of a study with base seed `base`.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    splitmix64(base.wrapping_add((r as u64).wrapping_mul(GOLDEN)))
}

/// Pseudo-value method paired with the weights of the estimating equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub method: Method,
    pub weights: WeightScheme,
}

impl Strategy {
    pub const fn new(method: Method, weights: WeightScheme) -> Self {
        Self { method, weights }
    }

    /// `method1+gee`, `method2+cwgee`, `method2+group`, ...
    pub fn label(&self) -> String {
        let eq = match self.weights {
            WeightScheme::Unweighted => "gee",
            WeightScheme::InverseClusterSize => "cwgee",
            WeightScheme::InverseGroupSize => "group",
        };
        format!("{}+{eq}", self.method.label())
    }

    /// Both methods crossed with GEE and CWGEE.
    pub const POWER: [Strategy; 4] = [
        Strategy::new(Method::One, WeightScheme::Unweighted),
        Strategy::new(Method::One, WeightScheme::InverseClusterSize),
        Strategy::new(Method::Two, WeightScheme::Unweighted),
        Strategy::new(Method::Two, WeightScheme::InverseClusterSize),
    ];

    /// Method 2 under every weighting, plus Method 1 with GEE for reference.
    pub const ICG: [Strategy; 4] = [
        Strategy::new(Method::Two, WeightScheme::Unweighted),
        Strategy::new(Method::Two, WeightScheme::InverseClusterSize),
        Strategy::new(Method::Two, WeightScheme::InverseGroupSize),
        Strategy::new(Method::One, WeightScheme::Unweighted),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Power,
    Bias,
    Icg,
}

/// One line of the tidy study output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub delta1: f64,
    pub state: usize,
    pub strategy: String,
    pub metric: String,
    pub value: f64,
    /// Replicates requested; failed ones are reported in the `failures` metric.
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub kind: StudyKind,
    pub config: SimConfig,
    pub deltas: Vec<f64>,
    pub replicates: usize,
    /// Calibrated censoring scale per entry of `deltas`.
    pub censor_scales: Vec<f64>,
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    pub fn value(&self, delta1: f64, state: usize, strategy: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.delta1 == delta1 && r.state == state && r.strategy == strategy && r.metric == metric)
            .map(|r| r.value)
    }

    /// CSV with columns `delta1,state,strategy,metric,value,replicates`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["delta1", "state", "strategy", "metric", "value", "replicates"])?;
        for r in &self.rows {
            wtr.write_record([
                r.delta1.to_string(),
                r.state.to_string(),
                r.strategy.clone(),
                r.metric.clone(),
                r.value.to_string(),
                r.replicates.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON with the study kind, full configuration and calibrated scales.
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            kind: StudyKind,
            config: &'a SimConfig,
            deltas: &'a [f64],
            replicates: usize,
            censor_scales: &'a [f64],
            rows: usize,
        }
        serde_json::to_writer_pretty(
            writer,
            &Manifest {
                kind: self.kind,
                config: &self.config,
                deltas: &self.deltas,
                replicates: self.replicates,
                censor_scales: &self.censor_scales,
                rows: self.rows.len(),
            },
        )?;
        Ok(())
    }
}

/// `(beta, p-value)` of the tested coefficient, per strategy and state.
type Outcomes = Vec<Vec<Option<(f64, f64)>>>;

fn run_replicate(config: &SimConfig, strategies: &[Strategy], covariates: &[&str], tested: &str) -> Outcomes {
    let q = 3;
    let grid = [config.eval_time];
    let panel = simulate_panel(config).ok();
    let mut sets: Vec<(Method, Option<Vec<PseudoValueSet>>)> = Vec::new();
    for s in strategies {
        if !sets.iter().any(|(m, _)| *m == s.method) {
            let pv = panel.as_ref().and_then(|p| pseudo_values_all_states(p, s.method, &grid).ok());
            sets.push((s.method, pv));
        }
    }
    strategies
        .iter()
        .map(|s| {
            let pv = sets.iter().find(|(m, _)| *m == s.method).and_then(|(_, v)| v.as_ref());
            (0..q)
                .map(|l| {
                    let (panel, pv) = (panel.as_ref()?, pv?);
                    fit_one(panel, &pv[l], s.weights, covariates, tested).ok()
                })
                .collect()
        })
        .collect()
}

fn fit_one(panel: &Panel, pv: &PseudoValueSet, weights: WeightScheme, covariates: &[&str], tested: &str) -> Result<(f64, f64)> {
    let spec = ModelSpec::new(covariates, &pv.grid)
        .with_correlation(Correlation::Independence)
        .with_weights(weights);
    let fit = fit_gee(pv, panel, &spec)?;
    if !fit.converged {
        return Err(Error::InvalidArgument("fit did not converge".into()));
    }
    let k = fit.index_of(tested).expect("tested covariate is in the model");
    Ok((fit.beta[k], wald_test(&fit, k)?.p_value))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Every replicate's outcomes, in replicate order.
fn run_replicates(
    config: &SimConfig,
    replicates: usize,
    strategies: &[Strategy],
    covariates: &[&str],
    tested: &str,
) -> Vec<Outcomes> {
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut cfg = config.clone();
            cfg.seed = replicate_seed(config.seed, r);
            run_replicate(&cfg, strategies, covariates, tested)
        })
        .collect()
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn push_rejection_rows(
    rows: &mut Vec<StudyRow>,
    delta1: f64,
    strategies: &[Strategy],
    outcomes: &[Outcomes],
    replicates: usize,
    level: f64,
) {
    for (si, s) in strategies.iter().enumerate() {
        for l in 0..3 {
            let ok: Vec<f64> = outcomes.iter().filter_map(|o| o[si][l].map(|(_, p)| p)).collect();
            let rejected = ok.iter().filter(|&&p| p < level).count();
            let rate = if ok.is_empty() { f64::NAN } else { rejected as f64 / ok.len() as f64 };
            let mut push = |metric: &str, value: f64| {
                rows.push(StudyRow {
                    delta1,
                    state: l + 1,
                    strategy: s.label(),
                    metric: metric.into(),
                    value,
                    replicates,
                })
            };
            push("rejection_rate", rate);
            push("failures", (replicates - ok.len()) as f64);
        }
    }
}

/// Rejection rate of the Wald test of `delta1`'s coefficient (`Z1`) at
/// level 0.05 for every `delta1` in `deltas`, strategy and state.
pub fn power_study(config: &SimConfig, deltas: &[f64], replicates: usize, threads: usize) -> Result<StudyResult> {
    check_replicates(replicates)?;
    config.validate()?;
    let pool = pool(threads)?;
    let mut rows = Vec::new();
    let mut scales = Vec::new();
    for &d in deltas {
        let mut cfg = config.clone();
        cfg.delta[0] = d;
        let cfg = cfg.calibrated()?;
        scales.push(cfg.censor_scale.expect("calibrated"));
        let outcomes = pool.install(|| run_replicates(&cfg, replicates, &Strategy::POWER, &COVARIATES, "Z1"));
        push_rejection_rows(&mut rows, d, &Strategy::POWER, &outcomes, replicates, 0.05);
    }
    Ok(StudyResult {
        kind: StudyKind::Power,
        config: config.clone(),
        deltas: deltas.to_vec(),
        replicates,
        censor_scales: scales,
        rows,
    })
}

/// Group-null Wald test (`group` coefficient) under the intra-cluster-group
/// generator, for Method 2 under each weighting and Method 1 with GEE.
pub fn icg_study(config: &SimConfig, replicates: usize, threads: usize) -> Result<StudyResult> {
    check_replicates(replicates)?;
    if config.icg.is_none() {
        return Err(Error::InvalidArgument("configuration has no intra-cluster-group block".into()));
    }
    config.validate()?;
    let cfg = config.calibrated()?;
    let outcomes = pool(threads)?.install(|| run_replicates(&cfg, replicates, &Strategy::ICG, &["group"], "group"));
    let mut rows = Vec::new();
    push_rejection_rows(&mut rows, cfg.delta[0], &Strategy::ICG, &outcomes, replicates, 0.05);
    Ok(StudyResult {
        kind: StudyKind::Icg,
        config: config.clone(),
        deltas: vec![cfg.delta[0]],
        replicates,
        censor_scales: vec![cfg.censor_scale.expect("calibrated")],
        rows,
    })
}

/// Distribution of `|beta1_hat - beta1*|` per strategy and state at
/// `config.delta`, with `beta1*` from [`pseudo_true_beta1`] (cached in
/// `cache_dir` when given).
pub fn bias_study(config: &SimConfig, replicates: usize, threads: usize, cache_dir: Option<&Path>) -> Result<StudyResult> {
    check_replicates(replicates)?;
    config.validate()?;
    let pool = pool(threads)?;
    let target = match cache_dir {
        Some(dir) => pseudo_true_beta1_cached(config, dir)?,
        None => pool.install(|| pseudo_true_beta1(config))?,
    };
    let cfg = config.calibrated()?;
    let outcomes = pool.install(|| run_replicates(&cfg, replicates, &Strategy::POWER, &COVARIATES, "Z1"));
    let d = cfg.delta[0];
    let mut rows = Vec::new();
    for (si, s) in Strategy::POWER.iter().enumerate() {
        for l in 0..3 {
            let mut err: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o[si][l].map(|(b, _)| (b - target[l]).abs()))
                .collect();
            err.sort_by(f64::total_cmp);
            let mut push = |metric: &str, value: f64| {
                rows.push(StudyRow {
                    delta1: d,
                    state: l + 1,
                    strategy: s.label(),
                    metric: metric.into(),
                    value,
                    replicates,
                })
            };
            push("beta1_star", target[l]);
            push("median_abs_error", quantile_sorted(&err, 0.5));
            push("q1_abs_error", quantile_sorted(&err, 0.25));
            push("q3_abs_error", quantile_sorted(&err, 0.75));
            push("mean_abs_error", err.iter().sum::<f64>() / err.len() as f64);
            push("failures", (replicates - err.len()) as f64);
        }
    }
    Ok(StudyResult {
        kind: StudyKind::Bias,
        config: config.clone(),
        deltas: vec![d],
        replicates,
        censor_scales: vec![cfg.censor_scale.expect("calibrated")],
        rows,
    })
}

/// Linear-interpolation quantile of sorted data; NaN when empty.
fn quantile_sorted(x: &[f64], p: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let h = (x.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

/// Pseudo-true `Z1` coefficient per state: the cluster-weighted least
/// squares fit of the state indicators at `eval_time` on `(1, Z1, Z2)` over
/// `reference_clusters` uncensored, untruncated clusters. Complete-data
/// pseudo-values are the indicators themselves, so this is the CWGEE
/// estimate on a very large complete panel.
pub fn pseudo_true_beta1(config: &SimConfig) -> Result<[f64; 3]> {
    config.validate()?;
    let mut cfg = config.clone();
    cfg.m = config.reference_clusters.max(2);
    cfg.truncation_max = None;
    let seed = splitmix64(config.seed ^ REFERENCE_SALT);
    let t = config.eval_time;

    // Per-cluster moments: X'WX (3x3) and X'Wy for the three states.
    let parts: Vec<[f64; 18]> = (0..cfg.m)
        .into_par_iter()
        .map(|i| -> Result<[f64; 18]> {
            let c = draw_cluster(&cfg, f64::INFINITY, &mut cluster_rng(seed, i), i)?;
            let w = 1.0 / c.subjects.len() as f64;
            let mut acc = [0.0; 18];
            for s in &c.subjects {
                let x = [1.0, c.z1, s.z2];
                let state = if t < s.t1 {
                    0
                } else if s.to_illness && t < s.absorption_time() {
                    1
                } else {
                    2
                };
                for a in 0..3 {
                    for b in 0..3 {
                        acc[a * 3 + b] += w * x[a] * x[b];
                    }
                    acc[9 + state * 3 + a] += w * x[a];
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = [0.0; 18];
    for p in &parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let xtx = nalgebra::Matrix3::from_row_slice(&total[..9]);
    let chol = xtx.cholesky().ok_or(Error::RankDeficient)?;
    let mut out = [0.0; 3];
    for (l, o) in out.iter_mut().enumerate() {
        let xty = nalgebra::Vector3::from_column_slice(&total[9 + 3 * l..12 + 3 * l]);
        *o = chol.solve(&xty)[1];
    }
    Ok(out)
}

/// [`pseudo_true_beta1`], read from or written to
/// `dir/beta-star-<hash>.json` keyed by the configuration.
pub fn pseudo_true_beta1_cached(config: &SimConfig, dir: &Path) -> Result<[f64; 3]> {
    let path = dir.join(format!("beta-star-{:016x}.json", fnv1a(reference_key(config).as_bytes())));
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(v) = serde_json::from_str::<[f64; 3]>(&text) {
            return Ok(v);
        }
    }
    let v = pseudo_true_beta1(config)?;
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string(&v)?)?;
    std::fs::rename(&tmp, &path)?;
    Ok(v)
}

/// Configuration fields that the reference fit depends on.
fn reference_key(config: &SimConfig) -> String {
    let mut c = config.clone();
    c.m = 0;
    c.censor_scale = None;
    c.censor_rate = 0.0;
    c.truncation_max = None;
    c.pilot_subjects = 0;
    c.canonical()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}
