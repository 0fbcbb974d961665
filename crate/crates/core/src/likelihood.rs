//! Pairwise log-likelihood over a design mask, its per-anchor pieces, and the
//! analytic score.
//!
//! Pairs are streamed per anchor `(s, k)`: every lag of the mask whose partner
//! lies on the grid contributes `log f(η(s, k), η(s + h, k + u); δ(h, u))`.
//! δ and ∇δ depend only on the lag, so they are tabulated once per ψ.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::delta::{delta_from_norms, grad_delta_from_norms, SpaceTimeLag};
use crate::error::{Error, Result};
use crate::huesler_reiss::{kernel_from_logs, log_density_from_logs};
use crate::pairs::{boundary_set, DesignMask, LagGeometry, PairSet};
use crate::params::{identifiability_mask, IdentifiabilityMask, ParamVector};
use crate::simulate::{FieldSample, GridSpec};

/// Sites per parallel work unit. Fixed so that the reduction tree does not
/// depend on the thread count.
const SITE_CHUNK: usize = 4;

/// δ and ∇δ for every lag of a mask at one ψ.
#[derive(Debug, Clone)]
pub struct LagTable {
    pub lags: Vec<SpaceTimeLag>,
    pub delta: Vec<f64>,
    pub grad: Vec<[f64; 4]>,
}

impl LagTable {
    pub fn new(lags: &[SpaceTimeLag], psi: &ParamVector) -> Result<Self> {
        let mut delta = Vec::with_capacity(lags.len());
        let mut grad = Vec::with_capacity(lags.len());
        for lag in lags {
            let (hn, un) = (lag.space_norm(), lag.time_norm());
            let d = delta_from_norms(psi, hn, un);
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Domain(format!(
                    "dependence function is {d} at lag {lag:?} for {psi:?}"
                )));
            }
            delta.push(d);
            grad.push(grad_delta_from_norms(psi, hn, un));
        }
        Ok(Self {
            lags: lags.to_vec(),
            delta,
            grad,
        })
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

/// How per-chunk partial sums are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Chunks are summed in grid order: bit-identical for any thread count.
    #[default]
    Ordered,
    /// Rayon's work-stealing reduction: faster, equal up to rounding.
    Unordered,
}

#[derive(Debug, Clone)]
struct Partial {
    loglik: f64,
    /// Σ dlogf/dδ per lag; empty when only the objective is wanted.
    dsum: Vec<f64>,
    flagged: u64,
}

impl Partial {
    fn zero(n_lags: usize, deriv: bool) -> Self {
        Self {
            loglik: 0.0,
            dsum: if deriv { vec![0.0; n_lags] } else { Vec::new() },
            flagged: 0,
        }
    }

    fn merge(mut self, other: Partial) -> Partial {
        self.loglik += other.loglik;
        for (a, b) in self.dsum.iter_mut().zip(&other.dsum) {
            *a += b;
        }
        self.flagged += other.flagged;
        self
    }
}

/// The pairwise log-likelihood of one field under one design mask.
#[derive(Debug)]
pub struct Objective<'a> {
    field: &'a FieldSample,
    mask: DesignMask,
    identifiability: IdentifiabilityMask,
    geometry: LagGeometry,
    log_values: Vec<f64>,
    n_pairs: usize,
    reduction: Reduction,
    evaluations: AtomicU64,
    score_evaluations: AtomicU64,
    flagged: AtomicU64,
}

impl<'a> Objective<'a> {
    pub fn new(field: &'a FieldSample, mask: &DesignMask) -> Result<Self> {
        let identifiability = identifiability_mask(mask.r, mask.p)?;
        let geometry = LagGeometry::new(field.grid, mask)?;
        let n_pairs = (0..geometry.lags.len())
            .map(|l| geometry.count_for_lag(l))
            .sum();
        if n_pairs == 0 {
            return Err(Error::NoPairs(format!(
                "grid {:?} has no pairs within (r, p) = ({}, {})",
                field.grid, mask.r, mask.p
            )));
        }
        Ok(Self {
            field,
            mask: mask.clone(),
            identifiability,
            geometry,
            log_values: field.values.iter().map(|v| v.ln()).collect(),
            n_pairs,
            reduction: Reduction::default(),
            evaluations: AtomicU64::new(0),
            score_evaluations: AtomicU64::new(0),
            flagged: AtomicU64::new(0),
        })
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    /// Replaces the mask derived from (r, p), e.g. to pin non-default values.
    pub fn with_identifiability(mut self, identifiability: IdentifiabilityMask) -> Self {
        self.identifiability = identifiability;
        self
    }

    pub fn field(&self) -> &FieldSample {
        self.field
    }

    pub fn mask(&self) -> &DesignMask {
        &self.mask
    }

    pub fn identifiability(&self) -> &IdentifiabilityMask {
        &self.identifiability
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn lags(&self) -> &[SpaceTimeLag] {
        &self.geometry.lags
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    /// Number of anchors, `m^d · T`.
    pub fn n_anchors(&self) -> usize {
        self.field.grid.len()
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn score_evaluations(&self) -> u64 {
        self.score_evaluations.load(Ordering::Relaxed)
    }

    /// Pair terms that fell back to the log-density floor, over all evaluations.
    pub fn flagged_terms(&self) -> u64 {
        self.flagged.load(Ordering::Relaxed)
    }

    pub fn lag_table(&self, psi: &ParamVector) -> Result<LagTable> {
        LagTable::new(&self.geometry.lags, psi)
    }

    /// Sum of log-densities over the in-grid partners of anchor `(site, k)`.
    pub fn g_contribution(&self, site: usize, k: usize, table: &LagTable) -> f64 {
        let coords = self.field.grid.site_coords(site);
        let a = self.field.grid.index(site, k);
        let mut g = 0.0;
        for lag in 0..table.len() {
            if let Some(b) = self.geometry.partner(&coords, site, k, lag) {
                g += log_density_from_logs(
                    self.log_values[a],
                    self.log_values[b],
                    self.field.values[a],
                    table.delta[lag],
                );
            }
        }
        g
    }

    fn partial_for_sites(
        &self,
        sites: std::ops::Range<usize>,
        table: &LagTable,
        deriv: bool,
    ) -> Partial {
        let grid = &self.field.grid;
        let mut acc = Partial::zero(table.len(), deriv);
        for site in sites {
            let coords = grid.site_coords(site);
            for lag in 0..table.len() {
                if !self.geometry.spatially_inside(&coords, lag) {
                    continue;
                }
                let kmax = grid.t.saturating_sub(self.geometry.u[lag]);
                let off = self.geometry.offset[lag];
                let d = table.delta[lag];
                let mut ds = 0.0;
                for k in 0..kmax {
                    let a = grid.index(site, k);
                    let (la, lb, xa) = (
                        self.log_values[a],
                        self.log_values[a + off],
                        self.field.values[a],
                    );
                    if deriv {
                        let e = kernel_from_logs(la, lb, xa, d);
                        acc.loglik += e.log_density;
                        ds += e.dlogf_ddelta;
                        acc.flagged += e.flagged as u64;
                    } else {
                        let l = log_density_from_logs(la, lb, xa, d);
                        acc.loglik += l;
                        acc.flagged += (l == crate::huesler_reiss::LOG_DENSITY_FLOOR) as u64;
                    }
                }
                if deriv {
                    acc.dsum[lag] += ds;
                }
            }
        }
        acc
    }

    fn reduce(&self, table: &LagTable, deriv: bool) -> Partial {
        let n_sites = self.field.grid.n_sites();
        let n_chunks = n_sites.div_ceil(SITE_CHUNK);
        let chunk = |c: usize| {
            let lo = c * SITE_CHUNK;
            self.partial_for_sites(lo..(lo + SITE_CHUNK).min(n_sites), table, deriv)
        };
        let zero = || Partial::zero(table.len(), deriv);
        let total = match self.reduction {
            Reduction::Ordered => {
                let parts: Vec<Partial> = (0..n_chunks).into_par_iter().map(chunk).collect();
                parts.into_iter().fold(zero(), Partial::merge)
            }
            Reduction::Unordered => (0..n_chunks)
                .into_par_iter()
                .map(chunk)
                .reduce(zero, Partial::merge),
        };
        self.flagged.fetch_add(total.flagged, Ordering::Relaxed);
        total
    }

    /// PL(ψ), the sum of log-densities over all selected pairs.
    pub fn loglik(&self, psi: &ParamVector) -> Result<f64> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let table = self.lag_table(psi)?;
        Ok(self.reduce(&table, false).loglik)
    }

    /// PL(ψ) together with its gradient; non-free slots are zero.
    pub fn loglik_and_score(&self, psi: &ParamVector) -> Result<(f64, [f64; 4])> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.score_evaluations.fetch_add(1, Ordering::Relaxed);
        let table = self.lag_table(psi)?;
        let total = self.reduce(&table, true);
        let mut s = [0.0; 4];
        for (ds, g) in total.dsum.iter().zip(&table.grad) {
            for j in 0..4 {
                s[j] += ds * g[j];
            }
        }
        Ok((total.loglik, self.identifiability.gate(s)))
    }

    pub fn score(&self, psi: &ParamVector) -> Result<[f64; 4]> {
        Ok(self.loglik_and_score(psi)?.1)
    }

    /// Gradient by central differences of [`Objective::loglik`], step `rel·(1+|ψⱼ|)`.
    pub fn score_fd(&self, psi: &ParamVector, rel: f64) -> Result<[f64; 4]> {
        let x = psi.to_array();
        let mut s = [0.0; 4];
        for j in 0..4 {
            if !self.identifiability.free[j] {
                continue;
            }
            let h = rel * (1.0 + x[j].abs());
            let (mut up, mut dn) = (x, x);
            up[j] += h;
            dn[j] -= h;
            let fu = self.loglik(&ParamVector::from_array(up))?;
            let fd = self.loglik(&ParamVector::from_array(dn))?;
            s[j] = (fu - fd) / (2.0 * h);
        }
        Ok(s)
    }

    /// ∇ψ g at every anchor, indexed like the field values; non-free slots are zero.
    pub fn anchor_scores(&self, psi: &ParamVector) -> Result<Vec<[f64; 4]>> {
        self.score_evaluations.fetch_add(1, Ordering::Relaxed);
        let table = self.lag_table(psi)?;
        let grid = self.field.grid;
        let gate = self.identifiability;
        let per_site: Vec<Vec<[f64; 4]>> = (0..grid.n_sites())
            .into_par_iter()
            .map(|site| {
                let coords = grid.site_coords(site);
                let mut out = vec![[0.0; 4]; grid.t];
                for lag in 0..table.len() {
                    if !self.geometry.spatially_inside(&coords, lag) {
                        continue;
                    }
                    let off = self.geometry.offset[lag];
                    let g = table.grad[lag];
                    for (k, slot) in out
                        .iter_mut()
                        .enumerate()
                        .take(grid.t.saturating_sub(self.geometry.u[lag]))
                    {
                        let a = grid.index(site, k);
                        let e = kernel_from_logs(
                            self.log_values[a],
                            self.log_values[a + off],
                            self.field.values[a],
                            table.delta[lag],
                        );
                        for j in 0..4 {
                            slot[j] += e.dlogf_ddelta * g[j];
                        }
                    }
                }
                out.into_iter().map(|v| gate.gate(v)).collect()
            })
            .collect();
        Ok(per_site.into_iter().flatten().collect())
    }

    /// g at every anchor, indexed like the field values.
    pub fn anchor_contributions(&self, psi: &ParamVector) -> Result<Vec<f64>> {
        let table = self.lag_table(psi)?;
        let grid = self.field.grid;
        Ok((0..grid.len())
            .into_par_iter()
            .map(|i| self.g_contribution(i / grid.t, i % grid.t, &table))
            .collect())
    }
}

pub fn pairwise_loglik(field: &FieldSample, mask: &DesignMask, psi: &ParamVector) -> Result<f64> {
    Objective::new(field, mask)?.loglik(psi)
}

pub fn score(field: &FieldSample, mask: &DesignMask, psi: &ParamVector) -> Result<[f64; 4]> {
    Objective::new(field, mask)?.score(psi)
}

/// PL(ψ) summed directly over a materialized pair set.
pub fn pairwise_loglik_pairs(
    field: &FieldSample,
    pairs: &PairSet,
    psi: &ParamVector,
) -> Result<f64> {
    let table = LagTable::new(&pairs.lags, psi)?;
    Ok(pairs
        .pairs
        .iter()
        .map(|p| {
            let (x, y) = (field.values[p.first], field.values[p.second]);
            log_density_from_logs(x.ln(), y.ln(), x, table.delta[p.lag])
        })
        .sum())
}

// Linear index in `outer` of the point at window coordinates `coords`, time `k`.
fn outer_index(outer: &GridSpec, coords: &[usize], k: usize) -> Option<usize> {
    if k < outer.t && coords.iter().all(|c| *c < outer.m) {
        Some(outer.index(outer.site_index(coords), k))
    } else {
        None
    }
}

fn check_window(outer: &FieldSample, window: &GridSpec) -> Result<()> {
    if window.d != outer.grid.d || window.m > outer.grid.m || window.t > outer.grid.t {
        return Err(Error::InvalidParameter(format!(
            "window {window:?} does not fit inside {:?}",
            outer.grid
        )));
    }
    Ok(())
}

fn pair_term(
    outer: &FieldSample,
    coords: &[usize],
    k: usize,
    lag: &SpaceTimeLag,
    delta: f64,
) -> Result<f64> {
    let a = outer_index(&outer.grid, coords, k).expect("anchor inside window");
    let shifted: Vec<usize> = coords
        .iter()
        .zip(&lag.h)
        .map(|(c, h)| c + *h as usize)
        .collect();
    let b = outer_index(&outer.grid, &shifted, k + lag.u as usize).ok_or_else(|| {
        Error::InvalidParameter("outer field too small to hold every partner of the window".into())
    })?;
    let (x, y) = (outer.values[a], outer.values[b]);
    Ok(log_density_from_logs(x.ln(), y.ln(), x, delta))
}

/// Σ g over every anchor of `window`, with partners read from the larger
/// `outer` field (the window sits at the origin of `outer`).
pub fn anchored_sum(
    outer: &FieldSample,
    window: &GridSpec,
    mask: &DesignMask,
    psi: &ParamVector,
) -> Result<f64> {
    check_window(outer, window)?;
    let lags = mask.pair_lags();
    let table = LagTable::new(&lags, psi)?;
    let mut total = 0.0;
    for site in 0..window.n_sites() {
        let coords = window.site_coords(site);
        for k in 0..window.t {
            for (l, lag) in lags.iter().enumerate() {
                total += pair_term(outer, &coords, k, lag, table.delta[l])?;
            }
        }
    }
    Ok(total)
}

/// The part of [`anchored_sum`] whose partners leave `window`.
pub fn boundary_term(
    outer: &FieldSample,
    window: &GridSpec,
    mask: &DesignMask,
    psi: &ParamVector,
) -> Result<f64> {
    check_window(outer, window)?;
    let b = boundary_set(window, mask)?;
    let table = LagTable::new(&b.lags, psi)?;
    let mut total = 0.0;
    for e in &b.entries {
        let coords = window.site_coords(e.site);
        total += pair_term(outer, &coords, e.time, &b.lags[e.lag], table.delta[e.lag])?;
    }
    Ok(total)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::pairs::{build_mask, enumerate_pairs};
    use proptest::prelude::*;

    fn field() -> impl Strategy<Value = FieldSample> {
        (2usize..5, 2usize..6)
            .prop_flat_map(|(m, t)| {
                (
                    Just(m),
                    Just(t),
                    proptest::collection::vec(0.01f64..0.999, m * m * t),
                )
            })
            .prop_map(|(m, t, u)| {
                let v = u.iter().map(|x| -1.0 / x.ln()).collect();
                FieldSample::new(GridSpec::new(2, m, t).unwrap(), v, 0, 1).unwrap()
            })
    }

    fn psi() -> impl Strategy<Value = ParamVector> {
        (0.01f64..3.0, 0.2f64..2.0, 0.01f64..3.0, 0.2f64..2.0)
            .prop_map(|(a, b, c, d)| ParamVector::new(a, b, c, d))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn streamed_sum_matches_materialized_pairs(f in field(), psi in psi(), r in 1u32..3, p in 0u32..3) {
            let mask = build_mask(r, p, 2).unwrap();
            let streamed = Objective::new(&f, &mask).unwrap().loglik(&psi).unwrap();
            let direct = pairwise_loglik_pairs(&f, &enumerate_pairs(&f.grid, &mask).unwrap(), &psi).unwrap();
            prop_assert!((streamed - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }

        #[test]
        fn reductions_agree_and_gated_slots_vanish(f in field(), psi in psi(), r in 0u32..3, p in 0u32..3) {
            prop_assume!(r + p > 0);
            let mask = build_mask(r, p, 2).unwrap();
            let ordered = Objective::new(&f, &mask).unwrap();
            let unordered = Objective::new(&f, &mask).unwrap().with_reduction(Reduction::Unordered);
            let (a, sa) = ordered.loglik_and_score(&psi).unwrap();
            let (b, sb) = unordered.loglik_and_score(&psi).unwrap();
            prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(1.0));
            let ident = *ordered.identifiability();
            for i in 0..4 {
                prop_assert!((sa[i] - sb[i]).abs() <= 1e-9 * sa[i].abs().max(1.0));
                if !ident.free[i] {
                    prop_assert_eq!(sa[i], 0.0);
                }
            }
        }
    }
}
