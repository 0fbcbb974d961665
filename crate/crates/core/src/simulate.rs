//! Approximate Brown–Resnick fields as rescaled pointwise maxima of Fréchet-transformed
//! Gaussian fields observed on a regular space-time grid.
//!
//! The Gaussian replicates `Z_j` have correlation `ρ(s_n Δs, t_n Δt)`, are mapped to
//! unit Fréchet by `−1/log Φ(z)`, and the field is `max_j (·) / n`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::delta::{scaling_from_log_n, CorrelationModel};
use crate::error::{Error, Result};
use crate::normal;
use crate::rng::{substream, Purpose};

/// Largest grid (in space-time points) factorized densely unless raised explicitly.
pub const DEFAULT_SIZE_LIMIT: usize = 4096;

const JITTER: f64 = 1e-10;

/// Regular lattice `{1..m}^d × {1..T}` with unit spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
}

impl GridSpec {
    pub fn new(d: usize, m: usize, t: usize) -> Result<Self> {
        let g = Self { d, m, t };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 || self.t == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be positive, got d={} m={} T={}",
                self.d, self.m, self.t
            )));
        }
        self.m
            .checked_pow(self.d as u32)
            .and_then(|s| s.checked_mul(self.t))
            .ok_or_else(|| Error::InvalidParameter("grid size overflows".into()))?;
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    /// Number of space-time points.
    pub fn len(&self) -> usize {
        self.n_sites() * self.t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Zero-based coordinates of a site, first axis slowest.
    pub fn site_coords(&self, site: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        let mut rest = site;
        for axis in (0..self.d).rev() {
            c[axis] = rest % self.m;
            rest /= self.m;
        }
        c
    }

    pub fn site_index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, c| acc * self.m + c)
    }

    /// Linear index in lexicographic `(i₁, …, i_d, k)` order.
    #[inline]
    pub fn index(&self, site: usize, k: usize) -> usize {
        site * self.t + k
    }
}

/// A realized field, values stored in lexicographic `(i₁, …, i_d, k)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub seed: u64,
    pub n_gaussians: u64,
}

impl FieldSample {
    pub fn new(grid: GridSpec, values: Vec<f64>, seed: u64, n_gaussians: u64) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Domain(format!(
                "field value {v} at index {i} is not finite and positive"
            )));
        }
        Ok(Self {
            grid,
            values,
            seed,
            n_gaussians,
        })
    }

    #[inline]
    pub fn value(&self, site: usize, k: usize) -> f64 {
        self.values[self.grid.index(site, k)]
    }

    /// The sub-block `{1..window.m}^d × {1..window.T}` anchored at the origin.
    pub fn subfield(&self, window: GridSpec) -> Result<FieldSample> {
        if window.d != self.grid.d || window.m > self.grid.m || window.t > self.grid.t {
            return Err(Error::InvalidParameter(format!(
                "window {window:?} does not fit inside {:?}",
                self.grid
            )));
        }
        let mut values = Vec::with_capacity(window.len());
        for site in 0..window.n_sites() {
            let outer = self.grid.site_index(&window.site_coords(site));
            for k in 0..window.t {
                values.push(self.value(outer, k));
            }
        }
        FieldSample::new(window, values, self.seed, self.n_gaussians)
    }

    /// Writes the field file: a `d,m,T,seed,n` line, then `i1,…,id,k,value` rows (1-based).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        writeln!(
            w,
            "{},{},{},{},{}",
            g.d, g.m, g.t, self.seed, self.n_gaussians
        )?;
        let mut line = String::new();
        for site in 0..g.n_sites() {
            let coords = g.site_coords(site);
            for k in 0..g.t {
                line.clear();
                for c in &coords {
                    let _ = write!(line, "{},", c + 1);
                }
                let _ = write!(line, "{},{}", k + 1, self.value(site, k));
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<FieldSample> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty field file".into()))??;
        let head: Vec<u64> = header
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad header line {header:?}: {e}")))?;
        if head.len() != 5 {
            return Err(Error::Parse(format!(
                "header must hold d,m,T,seed,n, got {header:?}"
            )));
        }
        let grid = GridSpec::new(head[0] as usize, head[1] as usize, head[2] as usize)?;
        let mut values = Vec::with_capacity(grid.len());
        let mut expected = (0usize, 0usize);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != grid.d + 2 {
                return Err(Error::Parse(format!(
                    "row {} has {} columns, expected {}",
                    lineno + 2,
                    cols.len(),
                    grid.d + 2
                )));
            }
            let idx: Vec<usize> = cols[..=grid.d]
                .iter()
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))?;
            if idx.contains(&0) {
                return Err(Error::Parse(format!(
                    "row {}: indices are 1-based",
                    lineno + 2
                )));
            }
            let coords: Vec<usize> = idx[..grid.d].iter().map(|i| i - 1).collect();
            if coords.iter().any(|c| *c >= grid.m) || idx[grid.d] > grid.t {
                return Err(Error::Parse(format!(
                    "row {}: index outside grid",
                    lineno + 2
                )));
            }
            let got = (grid.site_index(&coords), idx[grid.d] - 1);
            if got != expected {
                return Err(Error::Parse(format!(
                    "row {} is out of lexicographic order",
                    lineno + 2
                )));
            }
            let v: f64 = cols[grid.d + 1]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2)))?;
            values.push(v);
            expected = if expected.1 + 1 == grid.t {
                (expected.0 + 1, 0)
            } else {
                (expected.0, expected.1 + 1)
            };
        }
        FieldSample::new(grid, values, head[3], head[4])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FieldSample> {
        let f = std::fs::File::open(path)?;
        FieldSample::read_csv(BufReader::new(f))
    }
}

/// Lower-triangular factor `L` with `L Lᵀ` the correlation matrix of the scaled Gaussian field.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub grid: GridSpec,
    pub lower: DMatrix<f64>,
    /// Whether the diagonal jitter was needed.
    pub jittered: bool,
}

impl CovarianceFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }
}

/// Dense correlation matrix of the grid under `model` at the lags scaled by `(s_n, t_n)`.
pub fn covariance_matrix(
    model: &CorrelationModel,
    grid: &GridSpec,
    n: u64,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need n >= 2 Gaussian replicates, got {n}"
        )));
    }
    let (s_n, t_n) = scaling_from_log_n((n as f64).ln(), model.calpha1, model.calpha2);

    // Correlations depend only on (squared spatial distance, time offset).
    let max_d2 = grid.d * (grid.m - 1) * (grid.m - 1);
    let mut table = vec![0.0; (max_d2 + 1) * grid.t];
    for d2 in 0..=max_d2 {
        for dt in 0..grid.t {
            table[d2 * grid.t + dt] =
                model.rho_from_norms(s_n * (d2 as f64).sqrt(), t_n * dt as f64);
        }
    }
    let coords: Vec<Vec<usize>> = (0..grid.n_sites()).map(|s| grid.site_coords(s)).collect();
    let dim = grid.len();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for (sa, ca) in coords.iter().enumerate() {
        for (sb, cb) in coords.iter().enumerate().take(sa + 1) {
            let d2: usize = ca.iter().zip(cb).map(|(a, b)| a.abs_diff(*b).pow(2)).sum();
            for ka in 0..grid.t {
                for kb in 0..grid.t {
                    let v = table[d2 * grid.t + ka.abs_diff(kb)];
                    let (i, j) = (grid.index(sa, ka), grid.index(sb, kb));
                    cov[(i, j)] = v;
                    cov[(j, i)] = v;
                }
            }
        }
    }
    Ok(cov)
}

pub fn build_covariance_factor(
    model: &CorrelationModel,
    grid: &GridSpec,
    n: u64,
    size_limit: usize,
) -> Result<CovarianceFactor> {
    grid.validate()?;
    if grid.len() > size_limit {
        return Err(Error::GridTooLarge {
            points: grid.len(),
            limit: size_limit,
        });
    }
    let cov = covariance_matrix(model, grid, n)?;
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(CovarianceFactor {
            grid: *grid,
            lower: ch.unpack(),
            jittered: false,
        });
    }
    let mut jittered = cov;
    for i in 0..jittered.nrows() {
        jittered[(i, i)] += JITTER;
    }
    match jittered.cholesky() {
        Some(ch) => Ok(CovarianceFactor {
            grid: *grid,
            lower: ch.unpack(),
            jittered: true,
        }),
        None => Err(Error::Factorization(format!(
            "correlation matrix of {} points is not positive definite even with jitter {JITTER}",
            grid.len()
        ))),
    }
}

/// Unit-Fréchet transform `−1/log Φ(z)`, with Φ clamped into `[1e-16, 1 − 1e-16]`.
pub fn frechet_transform(z: f64) -> f64 {
    const CLAMP: f64 = 1e-16;
    let ln_phi = if z > 0.0 {
        (-normal::sf(z).max(CLAMP)).ln_1p()
    } else {
        normal::cdf(z).max(CLAMP).ln()
    };
    -1.0 / ln_phi
}

/// `count` independent draws of the Gaussian field, one per column.
pub fn sample_gaussians<R: Rng + ?Sized>(
    factor: &CovarianceFactor,
    count: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let dim = factor.dim();
    let noise: Vec<f64> = (0..dim * count)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let eps = DMatrix::from_vec(dim, count, noise);
    &factor.lower * eps
}

/// One approximate max-stable field from `n` Gaussian replicates.
pub fn simulate_with_factor<R: Rng + ?Sized>(
    factor: &CovarianceFactor,
    n: u64,
    rng: &mut R,
    seed: u64,
) -> Result<FieldSample> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need n >= 2 Gaussian replicates, got {n}"
        )));
    }
    let z = sample_gaussians(factor, n as usize, rng);
    // The transform is increasing, so the max of transforms is the transform of the max.
    let scale = 1.0 / n as f64;
    let values = z
        .row_iter()
        .map(|row| frechet_transform(row.max()) * scale)
        .collect();
    FieldSample::new(factor.grid, values, seed, n)
}

/// Simulates one field on `grid`, using stream 0 of `seed`.
pub fn simulate_field(
    model: &CorrelationModel,
    grid: &GridSpec,
    n: u64,
    seed: u64,
) -> Result<FieldSample> {
    let factor = build_covariance_factor(model, grid, n, DEFAULT_SIZE_LIMIT)?;
    let mut rng = substream(seed, 0, Purpose::Field);
    simulate_with_factor(&factor, n, &mut rng, seed)
}
