//! The `pseudoreg` command line.
//!
//! Every subcommand writes its data files into `--out` and then, last, a
//! `manifest.json` describing the run. Simulation settings come from a flat
//! `key = value` file (`--config`), overridden by `--set key=value` flags in
//! order, and finally by `--seed`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{sop_curve, SopCurve};
use crate::linear_oracle::{oracle_report, LinearConfig, LinearEstimator, SizeLink};
use crate::panel::{read_panel, write_panel, Panel, WeightScheme};
use crate::pseudovalues::{grid_quantiles, pseudo_values, pseudo_values_all_states, write_pseudo_csv, Method};
use crate::regression::{coefficient_table, fit_gee, write_coefficient_csv, Correlation, Equation, ModelSpec};
use crate::simulation::{bias_study, icg_study, power_study, simulate_panel, SimConfig, StudyResult};

#[derive(Debug, Parser)]
#[command(name = "pseudoreg", version, about = "Pseudo-value regression for clustered multistate data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// State occupation curves of a panel CSV.
    Estimate(EstimateArgs),
    /// Jackknife pseudo-values of a panel CSV.
    Pseudo(PseudoArgs),
    /// Pseudo-value regression with a sandwich coefficient table.
    Fit(FitArgs),
    /// Simulate one panel.
    Simulate(SimArgs),
    /// Rejection rates of H0: delta1 = 0 over a delta1 grid.
    Power(PowerArgs),
    /// Absolute estimation error of the Z1 coefficient.
    Bias(BiasArgs),
    /// Group-null rejection rates under the intra-cluster-group generator.
    Icg(StudyArgs),
    /// Estimating-function expectations in the linear random-effects model.
    OracleLinear(OracleArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; 0 means all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Evaluation times (comma separated); overrides --grid-points.
    #[arg(long, value_delimiter = ',')]
    pub time: Vec<f64>,
    /// Grid of r quantiles of the observed transition times.
    #[arg(long, default_value_t = 10)]
    pub grid_points: usize,
}

impl GridArgs {
    fn grid(&self, panel: &Panel) -> Result<Vec<f64>> {
        if self.time.is_empty() {
            grid_quantiles(panel, self.grid_points)
        } else {
            Ok(self.time.clone())
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    pub input: PathBuf,
    #[arg(long, default_value = "none")]
    pub weights: WeightScheme,
    /// Also estimate under this scheme and write the difference.
    #[arg(long)]
    pub compare: Option<WeightScheme>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct PseudoArgs {
    pub input: PathBuf,
    /// `method1` (unweighted) or `method2` (cluster-weighted).
    #[arg(long, default_value = "method2")]
    pub method: Method,
    /// State to compute; all states when absent.
    #[arg(long)]
    pub state: Option<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub state: usize,
    #[arg(long, default_value = "cwgee")]
    pub ee: Equation,
    #[arg(long, default_value = "ar1")]
    pub corr: Correlation,
    /// Covariates (comma separated); every panel covariate when absent.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_kv(&fs::read_to_string(path)?)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// delta1 grid (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1,-0.5,0,0.5,1")]
    pub deltas: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// Directory caching the pseudo-true coefficients.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.25)]
    pub sigma_alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_eps: f64,
    /// `exp:A,B` for ceil(exp(A + B nu)) + 2, or `constant:N`.
    #[arg(long, default_value = "exp:3,5")]
    pub size_link: String,
    #[arg(long, default_value = "mu2")]
    pub estimator: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

fn parse_size_link(s: &str) -> Result<SizeLink> {
    let bad = || Error::Config(format!("size_link: expected exp:A,B or constant:N, got '{s}'"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "constant" => Ok(SizeLink::Constant(rest.parse().map_err(|_| bad())?)),
        "exp" => {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            Ok(SizeLink::Exponential {
                a: a.trim().parse().map_err(|_| bad())?,
                b: b.trim().parse().map_err(|_| bad())?,
            })
        }
        _ => Err(bad()),
    }
}

/// What a run produced and whether every fit converged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: f64,
    pub wall_time_secs: f64,
    pub converged: bool,
    pub notes: Vec<String>,
}

struct Run {
    subcommand: &'static str,
    out_dir: PathBuf,
    started: Instant,
    started_unix: f64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    notes: Vec<String>,
    converged: bool,
}

impl Run {
    fn new(subcommand: &'static str, out: &OutArgs) -> Result<Self> {
        fs::create_dir_all(&out.out)?;
        Ok(Self {
            subcommand,
            out_dir: out.out.clone(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
            converged: true,
        })
    }

    /// Writes `name` in the output directory through a temporary file.
    fn write(&mut self, name: &str, f: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
        let path = self.out_dir.join(name);
        write_atomic(&path, f)?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish(self, config: serde_json::Value, seed: Option<u64>) -> Result<RunManifest> {
        let manifest = RunManifest {
            subcommand: self.subcommand.into(),
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: self.started_unix,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            converged: self.converged,
            notes: self.notes,
        };
        write_atomic(&self.out_dir.join("manifest.json"), |f| {
            serde_json::to_writer_pretty(&mut *f, &manifest)?;
            writeln!(f)?;
            Ok(())
        })?;
        Ok(manifest)
    }
}

fn write_atomic(path: &Path, f: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut file = fs::File::create(&tmp)?;
    f(&mut file)?;
    file.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs one command. The manifest's `converged` is false when some fit did
/// not converge or some replicate failed.
pub fn run(cli: Cli) -> Result<RunManifest> {
    match cli.command {
        Command::Estimate(a) => with_threads(a.out.threads, || estimate(&a))?,
        Command::Pseudo(a) => with_threads(a.out.threads, || pseudo(&a))?,
        Command::Fit(a) => with_threads(a.out.threads, || fit(&a))?,
        Command::Simulate(a) => simulate(&a),
        Command::Power(a) => power(&a),
        Command::Bias(a) => bias(&a),
        Command::Icg(a) => icg(&a),
        Command::OracleLinear(a) => with_threads(a.out.threads, || oracle(&a))?,
    }
}

fn estimate(a: &EstimateArgs) -> Result<RunManifest> {
    let mut run = Run::new("estimate", &a.out)?;
    let panel = read_panel(&a.input, None)?;
    run.inputs.push(a.input.clone());
    let grid = a.grid.grid(&panel)?;
    let main = sop_curve(&panel, a.weights, &grid)?;
    run.write("sop.csv", |f| main.write_csv(f))?;
    if let Some(other) = a.compare {
        let alt = sop_curve(&panel, other, &grid)?;
        run.write(&format!("sop_{}.csv", other.label()), |f| alt.write_csv(f))?;
        run.write("sop_diff.csv", |f| write_difference(&main, &alt, f))?;
    }
    let config = serde_json::json!({
        "weights": a.weights.label(),
        "compare": a.compare.map(|w| w.label()),
        "grid": grid,
    });
    run.finish(config, None)
}

/// `time,state,difference,weight_scheme,baseline`: first minus second.
fn write_difference<W: Write>(a: &SopCurve, b: &SopCurve, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["time", "state", "difference", "weight_scheme", "baseline"])?;
    for (g, t) in a.grid.iter().enumerate() {
        for l in 0..a.estimates[g].len() {
            wtr.write_record([
                t.to_string(),
                (l + 1).to_string(),
                (a.estimates[g][l] - b.estimates[g][l]).to_string(),
                a.weight_scheme.label().to_string(),
                b.weight_scheme.label().to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn pseudo(a: &PseudoArgs) -> Result<RunManifest> {
    let mut run = Run::new("pseudo", &a.out)?;
    let panel = read_panel(&a.input, None)?;
    run.inputs.push(a.input.clone());
    let grid = a.grid.grid(&panel)?;
    let sets = match a.state {
        Some(l) => vec![pseudo_values(&panel, a.method, l, &grid)?],
        None => pseudo_values_all_states(&panel, a.method, &grid)?,
    };
    run.write("pseudo.csv", |f| write_pseudo_csv(&sets, f))?;
    let config = serde_json::json!({ "method": a.method.label(), "state": a.state, "grid": grid });
    run.finish(config, None)
}

fn fit(a: &FitArgs) -> Result<RunManifest> {
    let mut run = Run::new("fit", &a.out)?;
    let panel = read_panel(&a.input, None)?;
    run.inputs.push(a.input.clone());
    let grid = a.grid.grid(&panel)?;
    let covariates: Vec<&str> = if a.covariates.is_empty() {
        panel.covariate_names.iter().map(String::as_str).collect()
    } else {
        a.covariates.iter().map(String::as_str).collect()
    };
    let pv = pseudo_values(&panel, a.ee.pseudo_method(), a.state, &grid)?;
    let mut spec = ModelSpec::new(&covariates, &grid).with_weights(a.ee.weight_scheme());
    if grid.len() >= 2 {
        spec = spec.with_correlation(a.corr);
    } else {
        spec = spec.with_correlation(Correlation::Independence);
        if a.corr == Correlation::Ar1 {
            run.notes.push("single grid point: AR(1) replaced by independence".into());
        }
    }
    let fit = fit_gee(&pv, &panel, &spec)?;
    let table = coefficient_table(&fit)?;
    run.write("coefficients.csv", |f| write_coefficient_csv(&table, f))?;
    run.write("fit.json", |f| {
        serde_json::to_writer_pretty(&mut *f, &serde_json::json!({ "fit": fit, "table": table }))?;
        Ok(())
    })?;
    if !fit.converged {
        run.converged = false;
        run.notes.push(format!(
            "AR(1) iteration did not converge after {} iterations (rho = {:?}, clamped = {})",
            fit.iterations, fit.rho, fit.rho_clamped
        ));
    }
    let config = serde_json::json!({
        "state": a.state,
        "ee": a.ee.label(),
        "corr": spec.correlation.label(),
        "covariates": covariates,
        "grid": grid,
    });
    run.finish(config, None)
}

fn simulate(a: &SimArgs) -> Result<RunManifest> {
    let mut run = Run::new("simulate", &a.out)?;
    let cfg = a.config.resolve()?.calibrated()?;
    let panel = simulate_panel(&cfg)?;
    let path = run.out_dir.join("panel.csv");
    write_panel(&panel, &path)?;
    run.outputs.push(path);
    run.finish(serde_json::to_value(&cfg)?, Some(cfg.seed))
}

fn study_outputs(run: &mut Run, result: &StudyResult) -> Result<()> {
    run.write("study.csv", |f| result.write_csv(f))?;
    run.write("study.json", |f| result.write_json(f))?;
    let failed: f64 = result.rows.iter().filter(|r| r.metric == "failures").map(|r| r.value).sum();
    if failed > 0.0 {
        run.converged = false;
        run.notes.push(format!("{failed} strategy-state fits failed across replicates"));
    }
    Ok(())
}

fn threads_or_all(threads: usize) -> usize {
    if threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    }
}

fn power(a: &PowerArgs) -> Result<RunManifest> {
    let s = &a.study;
    let mut run = Run::new("power", &s.out)?;
    let cfg = s.config.resolve()?;
    let result = power_study(&cfg, &a.deltas, s.replicates, threads_or_all(s.out.threads))?;
    study_outputs(&mut run, &result)?;
    run.finish(serde_json::to_value(&cfg)?, Some(cfg.seed))
}

fn bias(a: &BiasArgs) -> Result<RunManifest> {
    let s = &a.study;
    let mut run = Run::new("bias", &s.out)?;
    let cfg = s.config.resolve()?;
    let result = bias_study(&cfg, s.replicates, threads_or_all(s.out.threads), a.cache.as_deref())?;
    study_outputs(&mut run, &result)?;
    run.finish(serde_json::to_value(&cfg)?, Some(cfg.seed))
}

fn icg(s: &StudyArgs) -> Result<RunManifest> {
    let mut run = Run::new("icg", &s.out)?;
    let mut cfg = s.config.resolve()?;
    cfg.icg.get_or_insert_with(Default::default);
    let result = icg_study(&cfg, s.replicates, threads_or_all(s.out.threads))?;
    study_outputs(&mut run, &result)?;
    run.finish(serde_json::to_value(&cfg)?, Some(cfg.seed))
}

fn oracle(a: &OracleArgs) -> Result<RunManifest> {
    let mut run = Run::new("oracle-linear", &a.out)?;
    let estimator = match a.estimator.as_str() {
        "mu1" => LinearEstimator::Mu1,
        "mu2" => LinearEstimator::Mu2,
        other => return Err(Error::Config(format!("estimator: expected mu1 or mu2, got '{other}'"))),
    };
    let cfg = LinearConfig {
        m: a.m,
        mu: a.mu,
        sigma_alpha: a.sigma_alpha,
        sigma_eps: a.sigma_eps,
        size_link: parse_size_link(&a.size_link)?,
        estimator,
        seed: a.seed,
    };
    let report = oracle_report(&cfg, a.replicates)?;
    run.write("oracle.json", |f| report.write_json(f))?;
    run.finish(serde_json::to_value(&cfg)?, Some(cfg.seed))
}
