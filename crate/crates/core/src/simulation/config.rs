use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::calibrate::{calibrate_censor_scale, pilot_absorption_times};

/// Covariate columns of every simulated panel.
pub const COVARIATES: [&str; 2] = ["Z1", "Z2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterSizes {
    /// `n_i ~ Poisson{exp(3 + 5 nu_i - 5 Z1_i)} + 2`
    Informative,
    /// `n_i ~ Poisson(30)`, at least 1
    NonInformative,
}

/// How the second parameter of `N(mean, s)` in the model is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalReading {
    Variance,
    StdDev,
}

/// One censoring time per subject or one shared by the whole cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CensorUnit {
    Subject,
    Cluster,
}

/// Two groups per cluster; group `q` has a random effect `nu_iq` added to
/// the location of its members and `n_iq ~ Poisson{exp(a_q + b_q nu_iq)} + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcgConfig {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub nu_spread: f64,
}

impl Default for IcgConfig {
    /// Group 0's size follows its effect, group 1's does not. With equal
    /// slopes the two groups are exchangeable and every weighting gives the
    /// same answer to the between-group question.
    fn default() -> Self {
        Self {
            a: [2.0, 2.0],
            b: [5.0, 0.0],
            nu_spread: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m: usize,
    pub delta: [f64; 2],
    pub sigma_eps: f64,
    pub z2_mean: f64,
    /// Variance or SD of `Z2`, per `normal_reading`.
    pub z2_spread: f64,
    /// Variance or SD of `nu_i`, per `normal_reading`.
    pub nu_spread: f64,
    pub normal_reading: NormalReading,
    pub branch_p: f64,
    pub censor_shape: f64,
    /// Weibull scale; `None` means calibrate to `censor_rate`.
    pub censor_scale: Option<f64>,
    pub censor_rate: f64,
    pub censor_unit: CensorUnit,
    pub cluster_sizes: ClusterSizes,
    pub icg: Option<IcgConfig>,
    /// Left truncation `L ~ U[0, truncation_max]`.
    pub truncation_max: Option<f64>,
    pub seed: u64,
    pub eval_time: f64,
    /// Uncensored subjects in the censoring-calibration pilot.
    pub pilot_subjects: usize,
    /// Clusters in the complete-data reference fit for the bias study.
    pub reference_clusters: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 30,
            delta: [0.0, 0.8],
            sigma_eps: 0.1,
            z2_mean: 1.0,
            z2_spread: 0.15,
            nu_spread: 0.25,
            normal_reading: NormalReading::Variance,
            branch_p: 0.7,
            censor_shape: 0.1,
            censor_scale: None,
            censor_rate: 0.25,
            censor_unit: CensorUnit::Subject,
            cluster_sizes: ClusterSizes::Informative,
            icg: None,
            truncation_max: None,
            seed: 1,
            eval_time: 2.0,
            pilot_subjects: 100_000,
            reference_clusters: 20_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.m < 2 {
            return bad("m must be at least 2");
        }
        if !(self.branch_p > 0.0 && self.branch_p < 1.0) {
            return bad("branch_p must lie in (0, 1)");
        }
        if !(self.sigma_eps > 0.0) {
            return bad("sigma_eps must be positive");
        }
        if !(self.z2_spread >= 0.0 && self.nu_spread >= 0.0) {
            return bad("normal spreads must be nonnegative");
        }
        if !(self.censor_shape > 0.0) {
            return bad("censor_shape must be positive");
        }
        if let Some(s) = self.censor_scale {
            if !(s > 0.0) {
                return bad("censor_scale must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return bad("censor_rate must lie in [0, 1)");
        }
        if let Some(l) = self.truncation_max {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("truncation_max must be finite and nonnegative");
            }
        }
        if let Some(icg) = &self.icg {
            if !(icg.nu_spread >= 0.0) {
                return bad("icg_nu_spread must be nonnegative");
            }
        }
        if !(self.eval_time > 0.0 && self.eval_time.is_finite()) {
            return bad("eval_time must be positive");
        }
        Ok(())
    }

    /// The Weibull censoring scale: the configured one, `+inf` for a zero
    /// target rate, or a calibrated one.
    pub fn resolved_censor_scale(&self) -> Result<f64> {
        if let Some(s) = self.censor_scale {
            return Ok(s);
        }
        if self.censor_rate == 0.0 {
            return Ok(f64::INFINITY);
        }
        let times = pilot_absorption_times(self, self.pilot_subjects)?;
        Ok(calibrate_censor_scale(&times, self.censor_shape, self.censor_rate))
    }

    /// Copy with the censoring scale fixed, so later simulations skip the
    /// calibration.
    pub fn calibrated(&self) -> Result<Self> {
        let mut out = self.clone();
        out.censor_scale = Some(self.resolved_censor_scale()?);
        Ok(out)
    }

    /// Sets one field from its flat `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
        }
        fn opt(key: &str, v: &str) -> Result<Option<f64>> {
            match v {
                "none" | "calibrate" => Ok(None),
                _ => num(key, v).map(Some),
            }
        }
        match key {
            "m" => self.m = num(key, value)?,
            "delta1" => self.delta[0] = num(key, value)?,
            "delta2" => self.delta[1] = num(key, value)?,
            "sigma_eps" => self.sigma_eps = num(key, value)?,
            "z2_mean" => self.z2_mean = num(key, value)?,
            "z2_spread" => self.z2_spread = num(key, value)?,
            "nu_spread" => self.nu_spread = num(key, value)?,
            "normal_reading" => {
                self.normal_reading = match value {
                    "variance" => NormalReading::Variance,
                    "sd" => NormalReading::StdDev,
                    _ => return Err(Error::Config(format!("normal_reading: expected variance or sd, got '{value}'"))),
                }
            }
            "branch_p" => self.branch_p = num(key, value)?,
            "censor_shape" => self.censor_shape = num(key, value)?,
            "censor_scale" => self.censor_scale = opt(key, value)?,
            "censor_rate" => self.censor_rate = num(key, value)?,
            "censor_unit" => {
                self.censor_unit = match value {
                    "subject" => CensorUnit::Subject,
                    "cluster" => CensorUnit::Cluster,
                    _ => return Err(Error::Config(format!("censor_unit: expected subject or cluster, got '{value}'"))),
                }
            }
            "cluster_sizes" => self.cluster_sizes = value.parse()?,
            "icg" => {
                let on: bool = num(key, value)?;
                self.icg = on.then(|| self.icg.clone().unwrap_or_default());
            }
            "icg_a0" | "icg_a1" | "icg_b0" | "icg_b1" | "icg_nu_spread" => {
                let v: f64 = num(key, value)?;
                let block = self.icg.get_or_insert_with(IcgConfig::default);
                match key {
                    "icg_a0" => block.a[0] = v,
                    "icg_a1" => block.a[1] = v,
                    "icg_b0" => block.b[0] = v,
                    "icg_b1" => block.b[1] = v,
                    _ => block.nu_spread = v,
                }
            }
            "truncation_max" => self.truncation_max = opt(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "eval_time" => self.eval_time = num(key, value)?,
            "pilot_subjects" => self.pilot_subjects = num(key, value)?,
            "reference_clusters" => self.reference_clusters = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` lines (`#` starts a comment) on top of the
    /// defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// A stable textual form, used for hashing and manifests.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

/// `key = value` pairs of a flat config text, in order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl fmt::Display for ClusterSizes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterSizes::Informative => "informative",
            ClusterSizes::NonInformative => "noninformative",
        })
    }
}

impl FromStr for ClusterSizes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "informative" => Ok(ClusterSizes::Informative),
            "noninformative" | "non-informative" => Ok(ClusterSizes::NonInformative),
            _ => Err(Error::Config(format!(
                "cluster_sizes: expected informative or noninformative, got '{s}'"
            ))),
        }
    }
}
