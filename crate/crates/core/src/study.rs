//! Monte Carlo parameter-recovery study: simulate fields at a known truth, fit
//! every requested design mask to each field, and summarize the errors.
//!
//! One field is simulated per repetition and reused for every `(r, p)`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delta::{CorrelationFamily, CorrelationModel};
use crate::error::{Error, Result};
use crate::fit::{fit_objective, FitOptions};
use crate::likelihood::{Objective, Reduction};
use crate::pairs::build_mask;
use crate::params::{identifiability_mask_with, Param, ParamVector};
use crate::rng::{substream, Purpose};
use crate::simulate::{
    build_covariance_factor, simulate_with_factor, GridSpec, DEFAULT_SIZE_LIMIT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub grid: GridSpec,
    pub n_gaussians: u64,
    pub n_repetitions: usize,
    /// Parameters of the limiting dependence function.
    pub truth: ParamVector,
    pub family: CorrelationFamily,
    pub rp_list: Vec<(u32, u32)>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Worker threads; the global pool when absent.
    pub threads: Option<usize>,
    /// Sum in a fixed order so results do not depend on the thread count.
    pub deterministic: bool,
    /// Starting values are `truth·(1 + U)` with `U ~ Uniform(−jitter, jitter)`.
    pub init_jitter: f64,
    pub size_limit: usize,
    pub fit: FitOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl StudyConfig {
    /// Laptop-sized configuration.
    pub fn desk() -> Self {
        Self {
            grid: GridSpec { d: 2, m: 8, t: 40 },
            n_gaussians: 100,
            n_repetitions: 20,
            truth: ParamVector::new(0.06, 1.0, 0.04, 1.0),
            family: CorrelationFamily::PowerGneiting,
            rp_list: vec![(1, 0), (2, 0), (0, 3), (1, 1), (2, 3)],
            seed: 1,
            output_dir: None,
            threads: None,
            deterministic: true,
            init_jitter: 0.25,
            size_limit: DEFAULT_SIZE_LIMIT,
            fit: FitOptions::default(),
        }
    }

    /// The full-size experiment: a 10×10 grid over 100 time points and 100
    /// repetitions. The dense factor has 10⁴ rows, so this needs about 800 MB.
    pub fn full() -> Self {
        Self {
            grid: GridSpec {
                d: 2,
                m: 10,
                t: 100,
            },
            n_repetitions: 100,
            rp_list: vec![
                (1, 0),
                (2, 0),
                (3, 0),
                (0, 2),
                (0, 3),
                (0, 4),
                (1, 1),
                (1, 2),
                (2, 1),
                (2, 2),
                (2, 3),
                (3, 2),
                (3, 3),
            ],
            size_limit: 10_000,
            ..Self::desk()
        }
    }

    pub fn model(&self) -> CorrelationModel {
        CorrelationModel::from_estimand(self.family, &self.truth)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fit.param_box.validate()?;
        if self.n_repetitions == 0 {
            return Err(Error::InvalidParameter(
                "n_repetitions must be at least 1".into(),
            ));
        }
        if self.rp_list.is_empty() {
            return Err(Error::InvalidParameter("rp_list is empty".into()));
        }
        if self.n_gaussians < 2 {
            return Err(Error::InvalidParameter(
                "n_gaussians must be at least 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.init_jitter) {
            return Err(Error::InvalidParameter(format!(
                "init_jitter must lie in [0, 1), got {}",
                self.init_jitter
            )));
        }
        if !self.fit.param_box.contains(&self.truth) {
            return Err(Error::InvalidParameter(format!(
                "truth {:?} is outside the box",
                self.truth
            )));
        }
        for &(r, p) in &self.rp_list {
            if r == 0 && p == 0 {
                return Err(Error::NoPairs("rp_list contains (0, 0)".into()));
            }
        }
        self.model().validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut s = String::new();
        fs::File::open(path)?.read_to_string(&mut s)?;
        let c: StudyConfig = serde_json::from_str(&s)?;
        Ok(c)
    }
}

/// One fit: the estimate for repetition `repetition` under mask `(r, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub repetition: usize,
    pub r: u32,
    pub p: u32,
    pub theta1: f64,
    pub alpha1: f64,
    pub theta2: f64,
    pub alpha2: f64,
    pub converged: bool,
}

impl EstimateRow {
    pub fn psi(&self) -> ParamVector {
        ParamVector::new(self.theta1, self.alpha1, self.theta2, self.alpha2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub repetition: usize,
    pub r: u32,
    pub p: u32,
    pub message: String,
}

/// An error metric for one free parameter under one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub parameter: String,
    pub r: u32,
    pub p: u32,
    pub value: f64,
    pub n: usize,
}

/// Mean and 95% simulation band of one free parameter under one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub parameter: String,
    pub r: u32,
    pub p: u32,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub rmse: Vec<MetricRow>,
    pub mae: Vec<MetricRow>,
    pub bands: Vec<BandRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub model: CorrelationModel,
    pub estimates: Vec<EstimateRow>,
    pub failures: Vec<FitFailure>,
    pub aggregates: Aggregates,
    /// Covariance factorizations performed; one per study.
    pub factor_builds: usize,
    pub factor_jittered: bool,
}

/// Empirical quantile by linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// RMSE, MAE, and bands over converged rows, for the free parameters of each mask.
pub fn aggregate(
    rows: &[EstimateRow],
    truth: &ParamVector,
    rp_list: &[(u32, u32)],
) -> Result<Aggregates> {
    let mut out = Aggregates {
        rmse: Vec::new(),
        mae: Vec::new(),
        bands: Vec::new(),
    };
    for &(r, p) in rp_list {
        let ident = identifiability_mask_with(r, p, *truth)?;
        let cell: Vec<&EstimateRow> = rows
            .iter()
            .filter(|e| e.r == r && e.p == p && e.converged)
            .collect();
        if cell.is_empty() {
            continue;
        }
        for param in ident.free_params() {
            let t = truth.get(param);
            let mut v: Vec<f64> = cell.iter().map(|e| e.psi().get(param)).collect();
            let n = v.len();
            let nf = n as f64;
            let rmse = (v.iter().map(|x| (x - t).powi(2)).sum::<f64>() / nf).sqrt();
            let mae = v.iter().map(|x| (x - t).abs()).sum::<f64>() / nf;
            let mean = v.iter().sum::<f64>() / nf;
            let sd = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
            } else {
                0.0
            };
            v.sort_by(f64::total_cmp);
            let name = param.name().to_string();
            out.rmse.push(MetricRow {
                parameter: name.clone(),
                r,
                p,
                value: rmse,
                n,
            });
            out.mae.push(MetricRow {
                parameter: name.clone(),
                r,
                p,
                value: mae,
                n,
            });
            out.bands.push(BandRow {
                parameter: name,
                r,
                p,
                mean,
                sd,
                q025: quantile_sorted(&v, 0.025),
                q975: quantile_sorted(&v, 0.975),
                n,
            });
        }
    }
    Ok(out)
}

/// Starting point of a repetition: the truth scaled component-wise by `1 + U(−j, j)`.
pub fn jittered_init(config: &StudyConfig, repetition: u64) -> ParamVector {
    let mut rng = substream(config.seed, repetition, Purpose::Init);
    let j = config.init_jitter;
    let a = config.truth.to_array().map(|v| {
        let u: f64 = if j > 0.0 {
            rng.random_range(-j..j)
        } else {
            0.0
        };
        v * (1.0 + u)
    });
    config.fit.param_box.project(ParamVector::from_array(a))
}

type RepetitionOutcome = (Vec<EstimateRow>, Vec<FitFailure>);

pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    match config.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(|| run_inner(config)),
        None => run_inner(config),
    }
}

fn run_inner(config: &StudyConfig) -> Result<StudyResult> {
    let model = config.model();
    let factor =
        build_covariance_factor(&model, &config.grid, config.n_gaussians, config.size_limit)?;
    let reduction = if config.deterministic {
        Reduction::Ordered
    } else {
        Reduction::Unordered
    };

    let outcomes: Vec<Result<RepetitionOutcome>> = (0..config.n_repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(config.seed, rep as u64, Purpose::Field);
            let field = simulate_with_factor(&factor, config.n_gaussians, &mut rng, config.seed)?;
            let init = jittered_init(config, rep as u64);
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            for &(r, p) in &config.rp_list {
                let fitted = build_mask(r, p, config.grid.d).and_then(|mask| {
                    let ident = identifiability_mask_with(r, p, config.fit.pinned)?;
                    let obj = Objective::new(&field, &mask)?
                        .with_reduction(reduction)
                        .with_identifiability(ident);
                    let opts = FitOptions {
                        init: Some(init),
                        sandwich: false,
                        ..config.fit.clone()
                    };
                    fit_objective(&obj, &opts)
                });
                match fitted {
                    Ok(res) => rows.push(EstimateRow {
                        repetition: rep,
                        r,
                        p,
                        theta1: res.psi_hat.theta1,
                        alpha1: res.psi_hat.alpha1,
                        theta2: res.psi_hat.theta2,
                        alpha2: res.psi_hat.alpha2,
                        converged: res.converged,
                    }),
                    Err(e) => failures.push(FitFailure {
                        repetition: rep,
                        r,
                        p,
                        message: e.to_string(),
                    }),
                }
            }
            Ok((rows, failures))
        })
        .collect();

    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        let (rows, fails) = o?;
        estimates.extend(rows);
        failures.extend(fails);
    }
    let aggregates = aggregate(&estimates, &config.truth, &config.rp_list)?;
    Ok(StudyResult {
        config: config.clone(),
        model,
        estimates,
        failures,
        aggregates,
        factor_builds: 1,
        factor_jittered: factor.jittered,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn read_metric(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Writes `estimates.csv`, `rmse.csv`, `mae.csv`, and `summary.json` into `dir`.
pub fn emit_outputs(result: &StudyResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rows(&dir.join("estimates.csv"), &result.estimates)?;
    write_rows(&dir.join("rmse.csv"), &result.aggregates.rmse)?;
    write_rows(&dir.join("mae.csv"), &result.aggregates.mae)?;
    let non_converged = result.estimates.iter().filter(|e| !e.converged).count();
    let summary = serde_json::json!({
        "config": result.config,
        "truth_scale": "dependence function",
        "model": result.model,
        "factor_builds": result.factor_builds,
        "factor_jittered": result.factor_jittered,
        "n_fits": result.estimates.len() + result.failures.len(),
        "non_converged": non_converged,
        "failures": result.failures,
        "bands": result.aggregates.bands,
    });
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(())
}

/// Names of the free parameters for `(r, p)`.
pub fn free_parameter_names(r: u32, p: u32) -> Result<Vec<&'static str>> {
    Ok(
        identifiability_mask_with(r, p, ParamVector::new(1.0, 1.0, 1.0, 1.0))?
            .free_params()
            .into_iter()
            .map(Param::name)
            .collect(),
    )
}
