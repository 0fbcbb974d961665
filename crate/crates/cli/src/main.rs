//! Command-line front end: simulate fields, fit them, run recovery studies, and
//! query the bivariate law.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maxstable::delta::{chi_from_delta, CorrelationFamily, CorrelationModel};
use maxstable::fit::{
    fit_objective, mixing_bound, FitOptions, ScoreVariance, DEFAULT_SCORE_REPLICATES,
};
use maxstable::huesler_reiss::{bivariate_cdf, kernel};
use maxstable::likelihood::{Objective, Reduction};
use maxstable::pairs::build_mask;
use maxstable::params::{identifiability_mask, ParamVector};
use maxstable::rng::{substream, Purpose};
use maxstable::simulate::{
    build_covariance_factor, simulate_with_factor, FieldSample, GridSpec, DEFAULT_SIZE_LIMIT,
};
use maxstable::study::{emit_outputs, run_study, StudyConfig};
use maxstable::{Error, Result};

#[derive(Parser)]
#[command(
    name = "maxstable",
    version,
    about = "Space-time max-stable fields: simulation and pairwise-likelihood fitting"
)]
struct Cli {
    /// Base seed for all random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Sum likelihood terms in a fixed order so output is independent of the thread count.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct PsiArgs {
    #[arg(long, default_value_t = 0.06)]
    theta1: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha1: f64,
    #[arg(long, default_value_t = 0.04)]
    theta2: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha2: f64,
}

impl PsiArgs {
    fn psi(&self) -> ParamVector {
        ParamVector::new(self.theta1, self.alpha1, self.theta2, self.alpha2)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one field and write it as CSV.
    Simulate {
        /// Sites per spatial axis.
        #[arg(long)]
        m: usize,
        /// Spatial dimension.
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// Time points.
        #[arg(long = "T", alias = "t")]
        t: usize,
        /// Gaussian replicates per field.
        #[arg(long, default_value_t = 100)]
        n: u64,
        /// Parameters of the limiting dependence function.
        #[command(flatten)]
        psi: PsiArgs,
        /// Replication index selecting the random stream.
        #[arg(long, default_value_t = 0)]
        replication: u64,
        #[arg(long, default_value_t = DEFAULT_SIZE_LIMIT)]
        size_limit: usize,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a field by pairwise likelihood and print the result as JSON.
    Estimate {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        max_space_lag: u32,
        #[arg(long)]
        max_time_lag: u32,
        /// Starting point: inline JSON or a path to a JSON file with theta1, alpha1, theta2, alpha2.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        no_sandwich: bool,
        /// How the score variance in the sandwich is estimated.
        #[arg(long, value_enum, default_value_t = SigmaMethod::Simulated)]
        score_variance: SigmaMethod,
        /// Simulated fields for the score variance.
        #[arg(long, default_value_t = DEFAULT_SCORE_REPLICATES)]
        replicates: usize,
        /// Window `Ls,Lt` of the windowed score variance; implies `--score-variance windowed`.
        #[arg(long, value_parser = parse_window)]
        window: Option<(u32, u32)>,
        /// Evaluate the objective and score at --init instead of fitting.
        #[arg(long, requires = "init")]
        eval_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo recovery study.
    Study {
        /// Study configuration JSON (desk-scale defaults when absent).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Start from the full-size preset instead of the desk-scale one.
        #[arg(long)]
        full_scale: bool,
    },
    /// Bivariate density, its δ-derivative, and the CDF at one point.
    Density {
        #[arg(long)]
        x1: f64,
        #[arg(long)]
        x2: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Upper bounds on the α-mixing coefficient as a CSV table over distance.
    MixingBound {
        #[command(flatten)]
        psi: PsiArgs,
        #[arg(long, default_value_t = 1)]
        k: u64,
        #[arg(long, default_value_t = 1)]
        l: u64,
        /// Largest distance in the table.
        #[arg(long, default_value_t = 10)]
        n_max: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaMethod {
    Simulated,
    Windowed,
}

fn parse_window(s: &str) -> std::result::Result<(u32, u32), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected Ls,Lt, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_init(s: &str) -> Result<ParamVector> {
    let text = if Path::new(s).is_file() {
        std::fs::read_to_string(s)?
    } else {
        s.to_string()
    };
    Ok(serde_json::from_str(&text)?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let reduction = if cli.deterministic {
        Reduction::Ordered
    } else {
        Reduction::Unordered
    };
    let seed = cli.seed.unwrap_or(1);

    match cli.command {
        Command::Simulate {
            m,
            d,
            t,
            n,
            psi,
            replication,
            size_limit,
            out,
        } => {
            let grid = GridSpec::new(d, m, t)?;
            let psi = psi.psi();
            psi.validate(0.0)?;
            let model = CorrelationModel::from_estimand(CorrelationFamily::PowerGneiting, &psi);
            let factor = build_covariance_factor(&model, &grid, n, size_limit)?;
            let mut rng = substream(seed, replication, Purpose::Field);
            let field = simulate_with_factor(&factor, n, &mut rng, seed)?;
            match out {
                Some(p) => field.save(&p)?,
                None => field.write_csv(std::io::stdout().lock())?,
            }
        }
        Command::Estimate {
            field,
            max_space_lag,
            max_time_lag,
            init,
            no_sandwich,
            score_variance,
            replicates,
            window,
            eval_only,
            out,
        } => {
            let field = FieldSample::load(&field)?;
            let mask = build_mask(max_space_lag, max_time_lag, field.grid.d)?;
            let init = init.as_deref().map(parse_init).transpose()?;
            let ident = identifiability_mask(max_space_lag, max_time_lag)?;
            let obj = Objective::new(&field, &mask)?
                .with_reduction(reduction)
                .with_identifiability(ident);
            let text = if eval_only {
                let psi = ident.pin(init.expect("clap enforces --init"));
                let (loglik, score) = obj.loglik_and_score(&psi)?;
                let v = serde_json::json!({
                    "psi": psi,
                    "loglik": loglik,
                    "score": score,
                    "n_pairs": obj.n_pairs(),
                    "fixed_mask": ident,
                });
                serde_json::to_string_pretty(&v)?
            } else {
                let opts = FitOptions {
                    init,
                    sandwich: !no_sandwich,
                    score_variance: match score_variance {
                        SigmaMethod::Simulated if window.is_none() => ScoreVariance::Simulated {
                            replicates,
                            seed: cli.seed,
                        },
                        _ => ScoreVariance::Windowed { window },
                    },
                    ..FitOptions::default()
                };
                serde_json::to_string_pretty(&fit_objective(&obj, &opts)?)?
            };
            emit(&(text + "\n"), out.as_deref())?;
        }
        Command::Study {
            config,
            output_dir,
            repetitions,
            full_scale,
        } => {
            let mut c = match config {
                Some(p) => StudyConfig::load(&p)?,
                None if full_scale => StudyConfig::full(),
                None => StudyConfig::desk(),
            };
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            if let Some(r) = repetitions {
                c.n_repetitions = r;
            }
            if let Some(d) = output_dir {
                c.output_dir = Some(d);
            }
            if cli.deterministic {
                c.deterministic = true;
            }
            let dir = c.output_dir.clone().ok_or_else(|| {
                Error::InvalidParameter(
                    "study needs --output-dir or output_dir in the config".into(),
                )
            })?;
            let result = run_study(&c)?;
            emit_outputs(&result, &dir)?;
            eprintln!(
                "{} fits, {} failures; outputs in {}",
                result.estimates.len(),
                result.failures.len(),
                dir.display()
            );
        }
        Command::Density { x1, x2, delta } => {
            let k = kernel(x1, x2, delta)?;
            let v = serde_json::json!({
                "x1": x1,
                "x2": x2,
                "delta": delta,
                "log_density": k.log_density,
                "density": k.log_density.exp(),
                "dlogf_ddelta": k.dlogf_ddelta,
                "cdf": bivariate_cdf(x1, x2, delta)?,
                "chi": chi_from_delta(delta),
            });
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Command::MixingBound { psi, k, l, n_max } => {
            let psi = psi.psi();
            psi.validate(0.0)?;
            println!("n,bound");
            for n in 1..=n_max.max(1) {
                println!("{n},{}", mixing_bound(&psi, k, l, n)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
