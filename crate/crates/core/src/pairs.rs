//! Design masks and the pairs they select on a space-time grid.
//!
//! A mask with maximal spatial distance `r` and maximal time lag `p` pairs every
//! grid point `(s, k)` with `(s + h, k + u)` for all lags in
//! `{(h, u) : h ∈ H_r ∪ {0}, 0 ≤ u ≤ p} \ {(0, 0)}`, where `H_r` holds the nonzero
//! vectors with nonnegative integer components and Euclidean norm at most `r`.
//! Nonnegative components give every pair a single canonical orientation.

use serde::Serialize;

use crate::delta::SpaceTimeLag;
use crate::error::{Error, Result};
use crate::simulate::GridSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DesignMask {
    pub r: u32,
    pub p: u32,
    pub d: usize,
    /// `H_r`, ordered by squared norm then lexicographically.
    pub spatial_lags: Vec<Vec<i64>>,
}

/// `H_r` in dimension `d`.
pub fn spatial_lag_set(r: u32, d: usize) -> Vec<Vec<i64>> {
    let r = r as i64;
    let mut out = Vec::new();
    if d == 0 {
        return out;
    }
    let mut h = vec![0i64; d];
    loop {
        let n2: i64 = h.iter().map(|c| c * c).sum();
        if n2 > 0 && n2 <= r * r {
            out.push(h.clone());
        }
        // odometer over {0..=r}^d
        let mut axis = d;
        loop {
            if axis == 0 {
                out.sort_by_key(|v| (v.iter().map(|c| c * c).sum::<i64>(), v.clone()));
                return out;
            }
            axis -= 1;
            if h[axis] < r {
                h[axis] += 1;
                break;
            }
            h[axis] = 0;
        }
    }
}

pub fn build_mask(r: u32, p: u32, d: usize) -> Result<DesignMask> {
    if d == 0 {
        return Err(Error::InvalidParameter(
            "spatial dimension must be at least 1".into(),
        ));
    }
    Ok(DesignMask {
        r,
        p,
        d,
        spatial_lags: spatial_lag_set(r, d),
    })
}

impl DesignMask {
    /// Every space-time lag that forms a pair, time lag slowest.
    pub fn pair_lags(&self) -> Vec<SpaceTimeLag> {
        let zero = vec![0i64; self.d];
        let mut out = Vec::new();
        for u in 0..=self.p as i64 {
            for h in std::iter::once(&zero).chain(self.spatial_lags.iter()) {
                let lag = SpaceTimeLag::new(h.clone(), u);
                if !lag.is_zero() {
                    out.push(lag);
                }
            }
        }
        out
    }
}

/// Lags resolved against a concrete grid: linear offsets and per-axis reach.
#[derive(Debug, Clone)]
pub(crate) struct LagGeometry {
    pub grid: GridSpec,
    pub lags: Vec<SpaceTimeLag>,
    pub h: Vec<Vec<usize>>,
    pub u: Vec<usize>,
    /// Linear index offset of the partner, `site_offset · T + u`.
    pub offset: Vec<usize>,
}

impl LagGeometry {
    pub fn new(grid: GridSpec, mask: &DesignMask) -> Result<Self> {
        if mask.d != grid.d {
            return Err(Error::InvalidParameter(format!(
                "mask dimension {} does not match grid dimension {}",
                mask.d, grid.d
            )));
        }
        if mask.r == 0 && mask.p == 0 {
            return Err(Error::NoPairs("maximal space-time lag (0, 0)".into()));
        }
        let lags = mask.pair_lags();
        let h: Vec<Vec<usize>> = lags
            .iter()
            .map(|l| l.h.iter().map(|c| *c as usize).collect())
            .collect();
        let u: Vec<usize> = lags.iter().map(|l| l.u as usize).collect();
        let offset = h
            .iter()
            .zip(&u)
            .map(|(hv, uu)| hv.iter().fold(0usize, |acc, c| acc * grid.m + c) * grid.t + uu)
            .collect();
        Ok(Self {
            grid,
            lags,
            h,
            u,
            offset,
        })
    }

    #[inline]
    pub fn spatially_inside(&self, coords: &[usize], lag: usize) -> bool {
        coords
            .iter()
            .zip(&self.h[lag])
            .all(|(c, h)| c + h < self.grid.m)
    }

    /// Linear index of the partner of `(site, k)` at `lag`, if it is on the grid.
    #[inline]
    pub fn partner(&self, coords: &[usize], site: usize, k: usize, lag: usize) -> Option<usize> {
        if k + self.u[lag] < self.grid.t && self.spatially_inside(coords, lag) {
            Some(self.grid.index(site, k) + self.offset[lag])
        } else {
            None
        }
    }

    /// Number of anchors `(s, k)` whose partner at `lag` is on the grid.
    pub fn count_for_lag(&self, lag: usize) -> usize {
        let spatial: usize = self.h[lag]
            .iter()
            .map(|h| self.grid.m.saturating_sub(*h))
            .product();
        spatial * self.grid.t.saturating_sub(self.u[lag])
    }
}

/// One selected pair: linear indices of both points and the index of its lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub first: usize,
    pub second: usize,
    pub lag: usize,
}

#[derive(Debug, Clone)]
pub struct PairSet {
    pub lags: Vec<SpaceTimeLag>,
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Materializes all in-grid pairs. The likelihood streams them instead; this is
/// for inspection and for cross-checks.
pub fn enumerate_pairs(grid: &GridSpec, mask: &DesignMask) -> Result<PairSet> {
    let geo = LagGeometry::new(*grid, mask)?;
    let mut pairs = Vec::new();
    for site in 0..grid.n_sites() {
        let coords = grid.site_coords(site);
        for k in 0..grid.t {
            for lag in 0..geo.lags.len() {
                if let Some(second) = geo.partner(&coords, site, k, lag) {
                    pairs.push(Pair {
                        first: grid.index(site, k),
                        second,
                        lag,
                    });
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoPairs(format!(
            "grid {grid:?} has no pairs within (r, p) = ({}, {})",
            mask.r, mask.p
        )));
    }
    Ok(PairSet {
        lags: geo.lags,
        pairs,
    })
}

/// Number of selected pairs without enumerating them.
pub fn pair_count(grid: &GridSpec, mask: &DesignMask) -> Result<usize> {
    let geo = LagGeometry::new(*grid, mask)?;
    Ok((0..geo.lags.len()).map(|l| geo.count_for_lag(l)).sum())
}

/// An anchor whose partner at `lag` falls outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct BoundaryEntry {
    pub site: usize,
    pub time: usize,
    pub lag: usize,
}

/// The terms dropped from the full anchored sum because the partner is off-grid.
#[derive(Debug, Clone)]
pub struct BoundarySet {
    pub grid: GridSpec,
    pub lags: Vec<SpaceTimeLag>,
    pub entries: Vec<BoundaryEntry>,
}

impl BoundarySet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct anchors `(site, time)` carrying at least one boundary term.
    pub fn distinct_anchors(&self) -> Vec<(usize, usize)> {
        let mut a: Vec<(usize, usize)> = self.entries.iter().map(|e| (e.site, e.time)).collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    /// Distinct sites whose partner leaves the grid in space for some lag.
    pub fn spatial_exit_sites(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .entries
            .iter()
            .filter(|e| {
                let c = self.grid.site_coords(e.site);
                c.iter()
                    .zip(&self.lags[e.lag].h)
                    .any(|(ci, hi)| ci + *hi as usize >= self.grid.m)
            })
            .map(|e| e.site)
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

pub fn boundary_set(grid: &GridSpec, mask: &DesignMask) -> Result<BoundarySet> {
    let geo = LagGeometry::new(*grid, mask)?;
    let mut entries = Vec::new();
    for site in 0..grid.n_sites() {
        let coords = grid.site_coords(site);
        for k in 0..grid.t {
            for lag in 0..geo.lags.len() {
                if geo.partner(&coords, site, k, lag).is_none() {
                    entries.push(BoundaryEntry { site, time: k, lag });
                }
            }
        }
    }
    Ok(BoundarySet {
        grid: *grid,
        lags: geo.lags,
        entries,
    })
}
