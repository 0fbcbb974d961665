//! The dependence-parameter vector, its constraint box and identifiability gating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of each parameter inside the 4-vector representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Theta1,
    Alpha1,
    Theta2,
    Alpha2,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::Theta1, Param::Alpha1, Param::Theta2, Param::Alpha2];

    pub fn index(self) -> usize {
        match self {
            Param::Theta1 => 0,
            Param::Alpha1 => 1,
            Param::Theta2 => 2,
            Param::Alpha2 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Theta1 => "theta1",
            Param::Alpha1 => "alpha1",
            Param::Theta2 => "theta2",
            Param::Alpha2 => "alpha2",
        }
    }

    pub fn is_scale(self) -> bool {
        matches!(self, Param::Theta1 | Param::Theta2)
    }

    pub fn from_name(name: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.name() == name)
    }
}

/// Spatial scale/smoothness and temporal scale/smoothness of the dependence function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub theta1: f64,
    pub alpha1: f64,
    pub theta2: f64,
    pub alpha2: f64,
}

impl ParamVector {
    pub const fn new(theta1: f64, alpha1: f64, theta2: f64, alpha2: f64) -> Self {
        Self {
            theta1,
            alpha1,
            theta2,
            alpha2,
        }
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.theta1, self.alpha1, self.theta2, self.alpha2]
    }

    pub const fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn get(&self, p: Param) -> f64 {
        self.to_array()[p.index()]
    }

    pub fn with(mut self, p: Param, value: f64) -> Self {
        match p {
            Param::Theta1 => self.theta1 = value,
            Param::Alpha1 => self.alpha1 = value,
            Param::Theta2 => self.theta2 = value,
            Param::Alpha2 => self.alpha2 = value,
        }
        self
    }

    /// Checks the model constraints: positive scales above the floor, smoothness in (0, 2].
    pub fn validate(&self, floor_c: f64) -> Result<()> {
        let a = self.to_array();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite component in {self:?}"
            )));
        }
        for p in [Param::Theta1, Param::Theta2] {
            if self.get(p) < floor_c {
                return Err(Error::InvalidParameter(format!(
                    "{} = {} is below the floor {floor_c}",
                    p.name(),
                    self.get(p)
                )));
            }
        }
        for p in [Param::Alpha1, Param::Alpha2] {
            let v = self.get(p);
            if v <= 0.0 || v > 2.0 {
                return Err(Error::InvalidParameter(format!(
                    "{} = {v} outside (0, 2]",
                    p.name()
                )));
            }
        }
        Ok(())
    }
}

/// Compact box the optimizer searches in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
    pub floor_c: f64,
}

pub const DEFAULT_FLOOR: f64 = 1e-4;
pub const ALPHA_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 2.0;

impl Default for ParamBox {
    fn default() -> Self {
        Self {
            lower: [DEFAULT_FLOOR, ALPHA_MIN, DEFAULT_FLOOR, ALPHA_MIN],
            upper: [10.0, ALPHA_MAX, 10.0, ALPHA_MAX],
            floor_c: DEFAULT_FLOOR,
        }
    }
}

impl ParamBox {
    pub fn new(lower: [f64; 4], upper: [f64; 4], floor_c: f64) -> Result<Self> {
        let b = Self {
            lower,
            upper,
            floor_c,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.floor_c.is_nan() || self.floor_c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "floor must be positive, got {}",
                self.floor_c
            )));
        }
        for p in Param::ALL {
            let (lo, hi) = (self.lower[p.index()], self.upper[p.index()]);
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidParameter(format!(
                    "box for {} is [{lo}, {hi}]",
                    p.name()
                )));
            }
            if p.is_scale() && lo < self.floor_c {
                return Err(Error::InvalidParameter(format!(
                    "lower bound {lo} for {} is below the floor {}",
                    p.name(),
                    self.floor_c
                )));
            }
            if !p.is_scale() && (lo <= 0.0 || hi > ALPHA_MAX) {
                return Err(Error::InvalidParameter(format!(
                    "box for {} must lie in (0, 2], got [{lo}, {hi}]",
                    p.name()
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, psi: &ParamVector) -> bool {
        psi.to_array()
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn project(&self, psi: ParamVector) -> ParamVector {
        let mut a = psi.to_array();
        for (i, v) in a.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
        ParamVector::from_array(a)
    }

    pub fn center(&self) -> ParamVector {
        let mut a = [0.0; 4];
        for (i, v) in a.iter_mut().enumerate() {
            *v = 0.5 * (self.lower[i] + self.upper[i]);
        }
        ParamVector::from_array(a)
    }
}

/// Which parameters the chosen pair set can identify, and the values used for the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityMask {
    pub free: [bool; 4],
    pub fixed_values: [f64; 4],
}

/// Values used for parameters the pair set cannot identify.
///
/// With unit lags `1^α = 1` for every α, so any α is likelihood-equivalent; 1.0 is
/// the conventional choice. Unused scale parameters do not enter the likelihood at all.
pub const DEFAULT_PINNED: ParamVector = ParamVector::new(1.0, 1.0, 1.0, 1.0);

impl IdentifiabilityMask {
    pub fn is_free(&self, p: Param) -> bool {
        self.free[p.index()]
    }

    pub fn free_params(&self) -> Vec<Param> {
        Param::ALL
            .into_iter()
            .filter(|p| self.is_free(*p))
            .collect()
    }

    pub fn n_free(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }

    /// Overwrites the non-free components of `psi` with their pinned values.
    pub fn pin(&self, psi: ParamVector) -> ParamVector {
        let mut a = psi.to_array();
        for ((v, free), fixed) in a.iter_mut().zip(self.free).zip(self.fixed_values) {
            if !free {
                *v = fixed;
            }
        }
        ParamVector::from_array(a)
    }

    /// Zeroes the slots of non-free parameters.
    pub fn gate(&self, v: [f64; 4]) -> [f64; 4] {
        let mut out = v;
        for (o, free) in out.iter_mut().zip(self.free) {
            if !free {
                *o = 0.0;
            }
        }
        out
    }
}

/// Identifiable parameters for maximal spatial lag `r` and maximal temporal lag `p`.
///
/// A scale parameter is identifiable once its lag direction is used at all; a
/// smoothness parameter needs at least two distinct lag magnitudes in that direction.
pub fn identifiability_mask(r: u32, p: u32) -> Result<IdentifiabilityMask> {
    identifiability_mask_with(r, p, DEFAULT_PINNED)
}

pub fn identifiability_mask_with(
    r: u32,
    p: u32,
    pinned: ParamVector,
) -> Result<IdentifiabilityMask> {
    if r == 0 && p == 0 {
        return Err(Error::NoPairs(
            "maximal space-time lag (0, 0) selects no pairs".into(),
        ));
    }
    Ok(IdentifiabilityMask {
        free: [r >= 1, r >= 2, p >= 1, p >= 2],
        fixed_values: pinned.to_array(),
    })
}
