//! Maximum pairwise-likelihood estimation, sandwich covariance, and the
//! χ-based mixing bound.
//!
//! The search runs Nelder–Mead over the free parameters, with scales on the log
//! axis, then polishes the result by Newton steps built from the analytic score
//! and a finite-difference Hessian. The asymptotic covariance of √N(ψ̂ − ψ) is
//! `F⁻¹ΣF⁻ᵀ`, with `N = m^d·T` anchors. F is estimated from the observed field.
//! Σ is the variance of the total score, measured either over fields simulated
//! at ψ̂ (the default) or by a windowed sum of anchor-score cross-products.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delta::{CorrelationFamily, CorrelationModel};
use crate::error::{Error, Result};
use crate::likelihood::Objective;
use crate::optimize::{minimize, NelderMeadConfig};
use crate::pairs::DesignMask;
use crate::params::{
    identifiability_mask_with, IdentifiabilityMask, Param, ParamBox, ParamVector, DEFAULT_PINNED,
};
use crate::rng::{substream, Purpose};
use crate::simulate::{
    build_covariance_factor, simulate_with_factor, FieldSample, DEFAULT_SIZE_LIMIT,
};

/// Relative step of the central differences taken on the score.
pub const HESSIAN_STEP: f64 = 1e-5;

/// Condition number above which the information matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

const NEWTON_MAX_STEPS: usize = 50;

pub const DEFAULT_SCORE_REPLICATES: usize = 50;

/// How the variability of the score is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ScoreVariance {
    /// Second moment of the total score over `replicates` fields simulated at
    /// ψ̂ on the observed grid. The seed defaults to a hash of the field.
    Simulated {
        replicates: usize,
        seed: Option<u64>,
    },
    /// Cross-products of anchor scores within `‖Δs‖ ≤ L_s`, `|Δt| ≤ L_t`;
    /// `(r + 2, p + 2)` when absent.
    Windowed { window: Option<(u32, u32)> },
}

impl Default for ScoreVariance {
    fn default() -> Self {
        Self::Simulated {
            replicates: DEFAULT_SCORE_REPLICATES,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub param_box: ParamBox,
    /// Starting point; the box center when absent.
    pub init: Option<ParamVector>,
    /// Values of the parameters the design mask cannot identify.
    pub pinned: ParamVector,
    /// Polish the direct-search optimum with Newton steps.
    pub refine: bool,
    pub sandwich: bool,
    pub score_variance: ScoreVariance,
    pub optimizer: NelderMeadConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            param_box: ParamBox::default(),
            init: None,
            pinned: DEFAULT_PINNED,
            refine: true,
            sandwich: false,
            score_variance: ScoreVariance::default(),
            optimizer: NelderMeadConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub psi_hat: ParamVector,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub refine_steps: usize,
    pub evaluations: u64,
    pub r: u32,
    pub p: u32,
    pub n_pairs: usize,
    pub n_anchors: usize,
    pub fixed_mask: IdentifiabilityMask,
    /// Covariance of ψ̂; rows and columns of pinned parameters are zero.
    pub covariance: Option<[[f64; 4]; 4]>,
    /// Standard errors of the free parameters, `None` in pinned slots.
    pub std_errors: Option<[Option<f64>; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichParts {
    /// Negative mean Hessian of the anchor contributions.
    pub f_hat: [[f64; 4]; 4],
    /// Variance of the total score, divided by N.
    pub sigma_hat: [[f64; 4]; 4],
    /// The method used for `sigma_hat`, with defaults filled in.
    pub score_variance: ScoreVariance,
    pub covariance: [[f64; 4]; 4],
    /// Condition number of the free block of `f_hat`.
    pub condition: f64,
}

fn to_internal(p: Param, v: f64) -> f64 {
    if p.is_scale() {
        v.ln()
    } else {
        v
    }
}

fn from_internal(p: Param, v: f64) -> f64 {
    if p.is_scale() {
        v.exp()
    } else {
        v
    }
}

pub fn fit(field: &FieldSample, mask: &DesignMask, options: &FitOptions) -> Result<EstimateResult> {
    options.param_box.validate()?;
    let ident = identifiability_mask_with(mask.r, mask.p, options.pinned)?;
    let obj = Objective::new(field, mask)?.with_identifiability(ident);
    fit_objective(&obj, options)
}

/// [`fit`] on a prepared objective, whose identifiability mask is used as is.
pub fn fit_objective(obj: &Objective<'_>, options: &FitOptions) -> Result<EstimateResult> {
    let bx = &options.param_box;
    let ident = *obj.identifiability();
    let init = match options.init {
        Some(v) => {
            if !bx.contains(&ident.pin(v)) {
                return Err(Error::InvalidParameter(format!(
                    "initial value {v:?} is outside the box"
                )));
            }
            v
        }
        None => bx.center(),
    };
    let init = ident.pin(init);
    let free = ident.free_params();

    let lower: Vec<f64> = free
        .iter()
        .map(|p| to_internal(*p, bx.lower[p.index()]))
        .collect();
    let upper: Vec<f64> = free
        .iter()
        .map(|p| to_internal(*p, bx.upper[p.index()]))
        .collect();
    let x0: Vec<f64> = free.iter().map(|p| to_internal(*p, init.get(*p))).collect();
    let assemble = |x: &[f64]| {
        free.iter()
            .zip(x)
            .fold(init, |psi, (p, v)| psi.with(*p, from_internal(*p, *v)))
    };
    let nm = minimize(
        |x| match obj.loglik(&assemble(x)) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        },
        &x0,
        &lower,
        &upper,
        &options.optimizer,
    );
    let mut psi = bx.project(assemble(&nm.x));
    let mut loglik = -nm.f;
    let mut refine_steps = 0;
    if options.refine {
        let (p2, l2, steps) = newton_refine(obj, psi, loglik, bx)?;
        psi = p2;
        loglik = l2;
        refine_steps = steps;
    }

    let mut result = EstimateResult {
        psi_hat: psi,
        loglik,
        converged: nm.converged,
        iterations: nm.iterations,
        refine_steps,
        evaluations: obj.evaluations(),
        r: obj.mask().r,
        p: obj.mask().p,
        n_pairs: obj.n_pairs(),
        n_anchors: obj.n_anchors(),
        fixed_mask: ident,
        covariance: None,
        std_errors: None,
    };
    if options.sandwich {
        let parts = sandwich_for(obj, &psi, options.score_variance)?;
        result.std_errors = Some(std::array::from_fn(|i| {
            ident.free[i].then(|| parts.covariance[i][i].max(0.0).sqrt())
        }));
        result.covariance = Some(parts.covariance);
    }
    Ok(result)
}

pub fn default_window(mask: &DesignMask) -> (u32, u32) {
    (mask.r + 2, mask.p + 2)
}

/// Central-difference Hessian of PL on the free block, from the analytic score.
fn free_hessian(obj: &Objective<'_>, psi: &ParamVector, free: &[Param]) -> Result<DMatrix<f64>> {
    let k = free.len();
    let mut h = DMatrix::zeros(k, k);
    for (c, p) in free.iter().enumerate() {
        let step = HESSIAN_STEP * (1.0 + psi.get(*p).abs());
        let up = obj.score(&psi.with(*p, psi.get(*p) + step))?;
        let dn = obj.score(&psi.with(*p, psi.get(*p) - step))?;
        for (r, q) in free.iter().enumerate() {
            h[(r, c)] = (up[q.index()] - dn[q.index()]) / (2.0 * step);
        }
    }
    Ok(0.5 * (&h + h.transpose()))
}

fn newton_refine(
    obj: &Objective<'_>,
    mut psi: ParamVector,
    mut loglik: f64,
    bx: &ParamBox,
) -> Result<(ParamVector, f64, usize)> {
    let free = obj.identifiability().free_params();
    let mut steps = 0;
    while steps < NEWTON_MAX_STEPS {
        let s = obj.score(&psi)?;
        let g = DVector::from_iterator(free.len(), free.iter().map(|p| s[p.index()]));
        let neg_h = -free_hessian(obj, &psi, &free)?;
        let Some(chol) = neg_h.cholesky() else { break };
        let dir = chol.solve(&g);

        // longest feasible fraction of the full step
        let mut t: f64 = 1.0;
        for (i, p) in free.iter().enumerate() {
            let (v, d) = (psi.get(*p), dir[i]);
            let (lo, hi) = (bx.lower[p.index()], bx.upper[p.index()]);
            if d > 0.0 {
                t = t.min((hi - v) / d);
            } else if d < 0.0 {
                t = t.min((lo - v) / d);
            }
        }
        let mut accepted = None;
        for _ in 0..30 {
            if t <= 0.0 {
                break;
            }
            let cand = free
                .iter()
                .enumerate()
                .fold(psi, |q, (i, p)| q.with(*p, q.get(*p) + t * dir[i]));
            let cand = bx.project(cand);
            if let Ok(l) = obj.loglik(&cand) {
                if l >= loglik {
                    accepted = Some((cand, l));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, l)) = accepted else { break };
        let moved = free
            .iter()
            .map(|p| (cand.get(*p) - psi.get(*p)).abs() / (1.0 + psi.get(*p).abs()))
            .fold(0.0, f64::max);
        psi = cand;
        loglik = l;
        steps += 1;
        if moved <= 1e-12 {
            break;
        }
    }
    Ok((psi, loglik, steps))
}

/// Sandwich pieces and covariance of ψ̂ for `field` under `mask`.
pub fn estimate_sandwich(
    field: &FieldSample,
    mask: &DesignMask,
    psi_hat: &ParamVector,
    method: ScoreVariance,
) -> Result<SandwichParts> {
    let ident = identifiability_mask_with(mask.r, mask.p, *psi_hat)?;
    let obj = Objective::new(field, mask)?.with_identifiability(ident);
    sandwich_for(&obj, psi_hat, method)
}

// Signed spatial offsets with ‖Δ‖₂ ≤ radius.
fn spatial_offsets(d: usize, radius: u32) -> Vec<Vec<i64>> {
    let r = radius as i64;
    let mut out = Vec::new();
    let mut v = vec![-r; d];
    loop {
        if v.iter().map(|c| c * c).sum::<i64>() <= r * r {
            out.push(v.clone());
        }
        let mut axis = d;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            if v[axis] < r {
                v[axis] += 1;
                break;
            }
            v[axis] = -r;
        }
    }
}

/// F̂ = −(1/N)·∇²PL on the free block, without any definiteness check.
pub fn information(obj: &Objective<'_>, psi: &ParamVector) -> Result<[[f64; 4]; 4]> {
    let free = obj.identifiability().free_params();
    let f_free = -free_hessian(obj, psi, &free)? / obj.n_anchors() as f64;
    Ok(embed(&f_free, &free))
}

fn embed(mfree: &DMatrix<f64>, free: &[Param]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (i, p) in free.iter().enumerate() {
        for (j, q) in free.iter().enumerate() {
            out[p.index()][q.index()] = mfree[(i, j)];
        }
    }
    out
}

pub fn sandwich_for(
    obj: &Objective<'_>,
    psi_hat: &ParamVector,
    method: ScoreVariance,
) -> Result<SandwichParts> {
    let ident = *obj.identifiability();
    let free = ident.free_params();
    let n = obj.n_anchors() as f64;

    let f_free = -free_hessian(obj, psi_hat, &free)? / n;
    let eig = SymmetricEigen::new(f_free.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            (lo.min(*v), hi.max(v.abs()))
        });
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(Error::SingularInformation { condition });
    }

    let (sigma_free, score_variance) = match method {
        ScoreVariance::Windowed { window } => {
            let window = window.unwrap_or_else(|| default_window(obj.mask()));
            (
                windowed_sigma(obj, psi_hat, &free, window)?,
                ScoreVariance::Windowed {
                    window: Some(window),
                },
            )
        }
        ScoreVariance::Simulated { replicates, seed } => {
            let seed = seed.unwrap_or_else(|| field_hash(obj.field()));
            (
                simulated_sigma(obj, psi_hat, &free, replicates, seed)?,
                ScoreVariance::Simulated {
                    replicates,
                    seed: Some(seed),
                },
            )
        }
    };
    let sigma_free = 0.5 * (&sigma_free + sigma_free.transpose());

    let f_inv = f_free
        .clone()
        .try_inverse()
        .ok_or(Error::SingularInformation { condition })?;
    let cov_free = &f_inv * &sigma_free * f_inv.transpose() / n;

    Ok(SandwichParts {
        f_hat: embed(&f_free, &free),
        sigma_hat: embed(&sigma_free, &free),
        score_variance,
        covariance: embed(&(0.5 * (&cov_free + cov_free.transpose())), &free),
        condition,
    })
}

fn windowed_sigma(
    obj: &Objective<'_>,
    psi_hat: &ParamVector,
    free: &[Param],
    window: (u32, u32),
) -> Result<DMatrix<f64>> {
    let k = free.len();
    let scores = obj.anchor_scores(psi_hat)?;
    let grid = obj.field().grid;
    let offsets = spatial_offsets(grid.d, window.0);
    let lt = window.1 as i64;
    let m = grid.m as i64;
    let t_len = grid.t as i64;
    let partial: Vec<DMatrix<f64>> = (0..grid.n_sites())
        .into_par_iter()
        .map(|site| {
            let coords: Vec<i64> = grid.site_coords(site).iter().map(|c| *c as i64).collect();
            let mut acc = DMatrix::zeros(k, k);
            let mut other = vec![0usize; grid.d];
            for off in &offsets {
                let mut inside = true;
                for ((o, c), dv) in other.iter_mut().zip(&coords).zip(off) {
                    let v = c + dv;
                    inside &= (0..m).contains(&v);
                    *o = v.max(0) as usize;
                }
                if !inside {
                    continue;
                }
                let site_b = grid.site_index(&other);
                for t in 0..t_len {
                    let sa = &scores[grid.index(site, t as usize)];
                    for dt in -lt..=lt {
                        let tb = t + dt;
                        if !(0..t_len).contains(&tb) {
                            continue;
                        }
                        let sb = &scores[grid.index(site_b, tb as usize)];
                        for (i, p) in free.iter().enumerate() {
                            for (j, q) in free.iter().enumerate() {
                                acc[(i, j)] += sa[p.index()] * sb[q.index()];
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    Ok(partial.into_iter().fold(DMatrix::zeros(k, k), |a, b| a + b) / obj.n_anchors() as f64)
}

// Fields are drawn with the observed field's grid and number of Gaussian
// replicates; each contributes the outer product of its total score at ψ̂.
fn simulated_sigma(
    obj: &Objective<'_>,
    psi_hat: &ParamVector,
    free: &[Param],
    replicates: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if replicates < 2 {
        return Err(Error::InvalidParameter(format!(
            "simulated score variance needs at least 2 replicates, got {replicates}"
        )));
    }
    let field = obj.field();
    let model = CorrelationModel::from_estimand(CorrelationFamily::PowerGneiting, psi_hat);
    let factor =
        build_covariance_factor(&model, &field.grid, field.n_gaussians, DEFAULT_SIZE_LIMIT)?;
    let scores: Vec<DVector<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, j, Purpose::Sandwich);
            let sim = simulate_with_factor(&factor, field.n_gaussians, &mut rng, seed)?;
            let sim_obj = Objective::new(&sim, obj.mask())?
                .with_reduction(obj.reduction())
                .with_identifiability(*obj.identifiability());
            let s = sim_obj.score(psi_hat)?;
            Ok(DVector::from_iterator(
                free.len(),
                free.iter().map(|p| s[p.index()]),
            ))
        })
        .collect::<Result<_>>()?;
    let k = free.len();
    let sum = scores
        .iter()
        .fold(DMatrix::zeros(k, k), |a, s| a + s * s.transpose());
    Ok(sum / (replicates as f64 * obj.n_anchors() as f64))
}

// FNV-1a over the field values, so distinct fields get distinct streams.
fn field_hash(field: &FieldSample) -> u64 {
    field.values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        v.to_bits()
            .to_le_bytes()
            .iter()
            .fold(h, |h, b| (h ^ *b as u64).wrapping_mul(0x100_0000_01b3))
    })
}

/// Upper bound `4kl·exp(−½·min(θ₁, θ₂)·n^min(α₁, α₂))` on the α-mixing
/// coefficient between sets of sizes `k` and `l` at distance at least `n`.
pub fn mixing_bound(psi: &ParamVector, k: u64, l: u64, n: u64) -> Result<f64> {
    if k == 0 || l == 0 || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "mixing bound needs k, l, n >= 1, got ({k}, {l}, {n})"
        )));
    }
    let theta = psi.theta1.min(psi.theta2);
    let alpha = psi.alpha1.min(psi.alpha2);
    Ok(4.0 * (k * l) as f64 * (-0.5 * theta * (n as f64).powf(alpha)).exp())
}
