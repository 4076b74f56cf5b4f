//! GEE and cluster-weighted GEE for pseudo-value responses.
//!
//! With the identity link the estimating equation
//! `sum_ij w_ij X_ij' V^-1 (Y_ij - X_ij beta) = 0` is linear in `beta` for a
//! fixed working correlation. `V = phi R(rho)`; the scalar dispersion `phi`
//! cancels from both the solve and the correlation estimate, so it is never
//! formed. For AR(1) the fit alternates the linear solve with a two-stage
//! quasi-least-squares update of `rho`.
//!
//! The sandwich meat sums the weighted estimating-function contributions
//! within each cluster before taking outer products across clusters.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::panel::{Panel, WeightScheme};
use crate::pseudovalues::{Method, PseudoValueSet};

/// Update sup-norm below which the AR(1) iteration stops.
pub const BETA_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 50;
/// `|rho|` is kept at or below `1 - RHO_MARGIN`.
pub const RHO_MARGIN: f64 = 1e-6;
/// Smallest-to-largest eigenvalue ratio of `sum w X'X` treated as singular.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    Independence,
    Ar1,
}

impl Correlation {
    pub fn label(self) -> &'static str {
        match self {
            Correlation::Independence => "ind",
            Correlation::Ar1 => "ar1",
        }
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Correlation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ind" | "independence" => Ok(Correlation::Independence),
            "ar1" => Ok(Correlation::Ar1),
            other => Err(Error::InvalidArgument(format!(
                "unknown correlation '{other}' (expected ind or ar1)"
            ))),
        }
    }
}

/// The three estimating equations, each with the pseudo-values it is fitted
/// to: ordinary GEE on Method 1 pseudo-values, and cluster- or
/// group-weighted GEE on Method 2 pseudo-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Gee,
    Cwgee,
    Group,
}

impl Equation {
    pub fn label(self) -> &'static str {
        match self {
            Equation::Gee => "gee",
            Equation::Cwgee => "cwgee",
            Equation::Group => "group",
        }
    }

    pub fn weight_scheme(self) -> WeightScheme {
        match self {
            Equation::Gee => WeightScheme::Unweighted,
            Equation::Cwgee => WeightScheme::InverseClusterSize,
            Equation::Group => WeightScheme::InverseGroupSize,
        }
    }

    pub fn pseudo_method(self) -> Method {
        match self {
            Equation::Gee => Method::One,
            Equation::Cwgee | Equation::Group => Method::Two,
        }
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Equation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gee" => Ok(Equation::Gee),
            "cwgee" => Ok(Equation::Cwgee),
            "group" => Ok(Equation::Group),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimating equation '{other}' (expected gee, cwgee or group)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub link: Link,
    pub correlation: Correlation,
    pub weight_scheme: WeightScheme,
    /// Panel covariate names; `"group"` refers to the subject's group label.
    pub covariates: Vec<String>,
    pub grid: Vec<f64>,
    /// One intercept per grid time when the grid has more than one point.
    pub time_intercepts: bool,
}

impl ModelSpec {
    pub fn new(covariates: &[&str], grid: &[f64]) -> Self {
        Self {
            link: Link::Identity,
            correlation: Correlation::Independence,
            weight_scheme: WeightScheme::Unweighted,
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            grid: grid.to_vec(),
            time_intercepts: true,
        }
    }

    pub fn with_correlation(mut self, correlation: Correlation) -> Self {
        self.correlation = correlation;
        self
    }

    pub fn with_weights(mut self, weights: WeightScheme) -> Self {
        self.weight_scheme = weights;
        self
    }

    pub fn with_single_intercept(mut self) -> Self {
        self.time_intercepts = false;
        self
    }

    fn intercept_count(&self) -> usize {
        if self.time_intercepts && self.grid.len() > 1 {
            self.grid.len()
        } else {
            1
        }
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = if self.intercept_count() == 1 {
            vec!["(Intercept)".to_string()]
        } else {
            let short: Vec<f64> = self.grid.iter().map(|t| (t * 1e4).round() / 1e4).collect();
            let distinct = short.windows(2).all(|w| w[0] != w[1]);
            let times = if distinct { &short } else { &self.grid };
            times.iter().map(|t| format!("(Intercept) t={t}")).collect()
        };
        names.extend(self.covariates.iter().cloned());
        names
    }
}

/// Stacked regression data: subject `s` owns rows `s*r .. (s+1)*r`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeeData {
    pub r: usize,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub weights: Vec<f64>,
    pub cluster_index: Vec<usize>,
}

impl GeeData {
    pub fn new(
        r: usize,
        x: DMatrix<f64>,
        y: DVector<f64>,
        weights: Vec<f64>,
        cluster_index: Vec<usize>,
    ) -> Result<Self> {
        let n = weights.len();
        if r == 0 || x.nrows() != n * r || y.len() != n * r || cluster_index.len() != n {
            return Err(Error::InvalidArgument("regression data shape mismatch".into()));
        }
        Ok(Self {
            r,
            x,
            y,
            weights,
            cluster_index,
        })
    }

    /// Design and response for pseudo-values `pv` on `panel` under `spec`.
    pub fn from_pseudo(pv: &PseudoValueSet, panel: &Panel, spec: &ModelSpec) -> Result<Self> {
        if pv.grid != spec.grid {
            return Err(Error::InvalidArgument("pseudo-value grid differs from the model grid".into()));
        }
        if pv.num_subjects() != panel.num_subjects() {
            return Err(Error::InvalidArgument("pseudo-values do not match the panel".into()));
        }
        let r = spec.grid.len();
        let ni = spec.intercept_count();
        let cov_cols = spec
            .covariates
            .iter()
            .map(|name| match panel.covariate_index(name) {
                Some(i) => Ok(Some(i)),
                None if name == "group" => Ok(None),
                None => Err(Error::InvalidArgument(format!("unknown covariate '{name}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let p = ni + cov_cols.len();
        let n = panel.num_subjects();
        let mut x = DMatrix::zeros(n * r, p);
        for (s, subj) in panel.subjects().enumerate() {
            for g in 0..r {
                let row = s * r + g;
                x[(row, if ni == 1 { 0 } else { g })] = 1.0;
                for (c, col) in cov_cols.iter().enumerate() {
                    x[(row, ni + c)] = match col {
                        Some(i) => subj.covariates[*i],
                        None => f64::from(subj.group.ok_or_else(|| {
                            Error::InvalidArgument(format!("subject {} has no group label", subj.id))
                        })?),
                    };
                }
            }
        }
        let y = DVector::from_column_slice(pv.values());
        let weights = spec.weight_scheme.weights(panel)?;
        Self::new(r, x, y, weights, pv.cluster_index.clone())
    }

    pub fn num_subjects(&self) -> usize {
        self.weights.len()
    }

    pub fn num_coefficients(&self) -> usize {
        self.x.ncols()
    }

    fn rows(&self, s: usize) -> (nalgebra::DMatrixView<'_, f64>, nalgebra::DVectorView<'_, f64>) {
        (self.x.rows(s * self.r, self.r), self.y.rows(s * self.r, self.r))
    }

    /// Stacked residuals `Y - X beta`.
    pub fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeeFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Row-major `p x p` sandwich covariance.
    pub sandwich_cov: Vec<Vec<f64>>,
    pub correlation: Correlation,
    pub weight_scheme: WeightScheme,
    pub rho: Option<f64>,
    /// `rho` hit the `+-(1 - 1e-6)` bound.
    pub rho_clamped: bool,
    pub iterations: usize,
    pub converged: bool,
}

impl GeeFit {
    pub fn std_error(&self, k: usize) -> f64 {
        self.sandwich_cov[k][k].sqrt()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.beta.len();
        DMatrix::from_fn(p, p, |i, j| self.sandwich_cov[i][j])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// `R(rho)` over `r` equally indexed grid points.
pub fn ar1_matrix(r: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, r, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

fn working_inverse(r: usize, rho: f64) -> Result<DMatrix<f64>> {
    if rho == 0.0 {
        return Ok(DMatrix::identity(r, r));
    }
    ar1_matrix(r, rho)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::NonInvertibleInformation)
}

/// Fits pseudo-values `pv` of `panel` under `spec`.
pub fn fit_gee(pv: &PseudoValueSet, panel: &Panel, spec: &ModelSpec) -> Result<GeeFit> {
    let data = GeeData::from_pseudo(pv, panel, spec)?;
    let mut fit = fit_gee_data(&data, spec.correlation)?;
    fit.names = spec.coefficient_names();
    fit.weight_scheme = spec.weight_scheme;
    Ok(fit)
}

/// Fits already-assembled data; coefficient names are `b0, b1, ...`.
pub fn fit_gee_data(data: &GeeData, correlation: Correlation) -> Result<GeeFit> {
    let r = data.r;
    if correlation == Correlation::Ar1 && r < 2 {
        return Err(Error::InvalidArgument("AR(1) working correlation needs at least 2 grid points".into()));
    }
    check_rank(data)?;

    let mut rho = 0.0;
    let mut clamped = false;
    let mut rinv = DMatrix::identity(r, r);
    let (mut beta, mut bread) = solve(data, &rinv)?;
    let mut iterations = 1;
    let mut converged = correlation == Correlation::Independence;
    if correlation == Correlation::Ar1 {
        while iterations < MAX_ITERATIONS {
            let est = estimate_ar1_qls(data.residuals(&beta).as_slice(), r, &data.weights)?;
            rho = est.rho;
            clamped = est.clamped;
            rinv = working_inverse(r, rho)?;
            let (next, next_bread) = solve(data, &rinv)?;
            iterations += 1;
            let step = (&next - &beta).amax();
            beta = next;
            bread = next_bread;
            if step < BETA_TOL {
                converged = true;
                break;
            }
        }
    }
    let cov = sandwich(data, &beta, &rinv, &bread);
    let p = beta.len();
    Ok(GeeFit {
        names: (0..p).map(|k| format!("b{k}")).collect(),
        beta: beta.iter().copied().collect(),
        sandwich_cov: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
        correlation,
        weight_scheme: WeightScheme::Unweighted,
        rho: (correlation == Correlation::Ar1).then_some(rho),
        rho_clamped: clamped,
        iterations,
        converged,
    })
}

fn check_rank(data: &GeeData) -> Result<()> {
    let p = data.num_coefficients();
    let mut a = DMatrix::zeros(p, p);
    for s in 0..data.num_subjects() {
        let (x, _) = data.rows(s);
        a += data.weights[s] * x.transpose() * x;
    }
    let eig = a.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || min / max <= RANK_TOL {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// `beta` and the bread `(sum w X' R^-1 X)^-1`.
fn solve(data: &GeeData, rinv: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = data.num_coefficients();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for s in 0..data.num_subjects() {
        let (x, y) = data.rows(s);
        let xt_rinv = data.weights[s] * x.transpose() * rinv;
        a += &xt_rinv * x;
        b += &xt_rinv * y;
    }
    let bread = a.cholesky().ok_or(Error::NonInvertibleInformation)?.inverse();
    let beta = &bread * b;
    Ok((beta, bread))
}

/// Cluster-robust `bread * meat * bread` at `beta`.
pub fn sandwich_variance(data: &GeeData, beta: &[f64], rho: Option<f64>) -> Result<DMatrix<f64>> {
    let p = data.num_coefficients();
    if beta.len() != p {
        return Err(Error::InvalidArgument("coefficient vector has the wrong length".into()));
    }
    let rinv = working_inverse(data.r, rho.unwrap_or(0.0))?;
    let mut a = DMatrix::zeros(p, p);
    for s in 0..data.num_subjects() {
        let (x, _) = data.rows(s);
        a += data.weights[s] * x.transpose() * &rinv * x;
    }
    let bread = a.try_inverse().ok_or(Error::NonInvertibleInformation)?;
    if !bread.iter().all(|v| v.is_finite()) {
        return Err(Error::NonInvertibleInformation);
    }
    Ok(sandwich(data, &DVector::from_column_slice(beta), &rinv, &bread))
}

fn sandwich(data: &GeeData, beta: &DVector<f64>, rinv: &DMatrix<f64>, bread: &DMatrix<f64>) -> DMatrix<f64> {
    let p = data.num_coefficients();
    let m = data.cluster_index.iter().max().map_or(0, |&i| i + 1);
    let mut u = vec![DVector::<f64>::zeros(p); m];
    for s in 0..data.num_subjects() {
        let (x, y) = data.rows(s);
        let e = y - x * beta;
        u[data.cluster_index[s]] += data.weights[s] * x.transpose() * (rinv * e);
    }
    let mut meat = DMatrix::zeros(p, p);
    for ui in &u {
        meat += ui * ui.transpose();
    }
    let v = bread * meat * bread;
    (&v + v.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ar1Estimate {
    pub rho: f64,
    pub clamped: bool,
}

/// Two-stage quasi-least-squares AR(1) parameter from subject-major
/// residuals (`r` per subject), each subject weighted by `weights`.
///
/// Stage 1 minimises `sum_s w_s z_s' R(a)^-1 z_s`, whose root in `(-1, 1)` is
/// `a = [(S + S_int) - sqrt((S + S_int)^2 - 4 P^2)] / (2P)` with `S` the sum
/// of squares, `S_int` the sum of squares at interior times and `P` the sum
/// of lag-1 products. Stage 2 maps it to `rho = 2a / (1 + a^2)`.
pub fn estimate_ar1_qls(residuals: &[f64], r: usize, weights: &[f64]) -> Result<Ar1Estimate> {
    if r < 2 {
        return Err(Error::InvalidArgument("AR(1) needs at least 2 grid points".into()));
    }
    if residuals.len() != r * weights.len() {
        return Err(Error::InvalidArgument("residual and weight lengths disagree".into()));
    }
    let (mut s, mut s_int, mut p) = (0.0, 0.0, 0.0);
    for (z, &w) in residuals.chunks(r).zip(weights) {
        for t in 0..r {
            s += w * z[t] * z[t];
            if t > 0 && t < r - 1 {
                s_int += w * z[t] * z[t];
            }
            if t + 1 < r {
                p += w * z[t] * z[t + 1];
            }
        }
    }
    if s == 0.0 || p == 0.0 {
        return Ok(Ar1Estimate { rho: 0.0, clamped: false });
    }
    let sum = s + s_int;
    let disc = (sum * sum - 4.0 * p * p).max(0.0);
    let alpha = (sum - disc.sqrt()) / (2.0 * p);
    let rho = 2.0 * alpha / (1.0 + alpha * alpha);
    let bound = 1.0 - RHO_MARGIN;
    if rho.abs() > bound || !rho.is_finite() {
        return Ok(Ar1Estimate {
            rho: bound.copysign(p),
            clamped: true,
        });
    }
    Ok(Ar1Estimate { rho, clamped: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sided Wald test of `beta_k = 0` with the sandwich variance.
pub fn wald_test(fit: &GeeFit, k: usize) -> Result<WaldTest> {
    if k >= fit.beta.len() {
        return Err(Error::InvalidArgument(format!("no coefficient {k}")));
    }
    let var = fit.sandwich_cov[k][k];
    if !(var > 0.0) {
        return Err(Error::ZeroVariance(k));
    }
    let z = fit.beta[k] / var.sqrt();
    Ok(WaldTest {
        statistic: z,
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
}

/// Estimate, SE and p-value per coefficient.
pub fn coefficient_table(fit: &GeeFit) -> Result<Vec<CoefficientRow>> {
    (0..fit.beta.len())
        .map(|k| {
            let w = wald_test(fit, k)?;
            Ok(CoefficientRow {
                term: fit.names[k].clone(),
                estimate: fit.beta[k],
                se: fit.std_error(k),
                p_value: w.p_value,
            })
        })
        .collect()
}

/// CSV with columns `term,Estimate,SE,p-value`.
pub fn write_coefficient_csv<W: Write>(rows: &[CoefficientRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["term", "Estimate", "SE", "p-value"])?;
    for row in rows {
        wtr.write_record([
            row.term.clone(),
            row.estimate.to_string(),
            row.se.to_string(),
            row.p_value.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
