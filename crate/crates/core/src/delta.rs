//! The space-time dependence function, its gradient, the tail dependence
//! coefficient, and the Gaussian correlation family used for simulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::params::ParamVector;

/// Integer grid displacement: spatial offset `h` (cells) and temporal offset `u` (steps).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpaceTimeLag {
    pub h: Vec<i64>,
    pub u: i64,
}

impl SpaceTimeLag {
    pub fn new(h: Vec<i64>, u: i64) -> Self {
        Self { h, u }
    }

    pub fn space_norm(&self) -> f64 {
        (self.h.iter().map(|c| (c * c) as f64).sum::<f64>()).sqrt()
    }

    pub fn time_norm(&self) -> f64 {
        self.u.unsigned_abs() as f64
    }

    pub fn is_zero(&self) -> bool {
        self.u == 0 && self.h.iter().all(|c| *c == 0)
    }
}

/// δ(h, u) = θ₁‖h‖^α₁ + θ₂|u|^α₂.
pub fn delta(psi: &ParamVector, lag: &SpaceTimeLag) -> Result<f64> {
    if lag.is_zero() {
        return Err(Error::ZeroLag);
    }
    Ok(delta_from_norms(psi, lag.space_norm(), lag.time_norm()))
}

#[inline]
pub fn delta_from_norms(psi: &ParamVector, h_norm: f64, u_norm: f64) -> f64 {
    psi.theta1 * pow_or_zero(h_norm, psi.alpha1) + psi.theta2 * pow_or_zero(u_norm, psi.alpha2)
}

/// Gradient of δ with respect to (θ₁, α₁, θ₂, α₂).
pub fn grad_delta(psi: &ParamVector, lag: &SpaceTimeLag) -> Result<[f64; 4]> {
    if lag.is_zero() {
        return Err(Error::ZeroLag);
    }
    Ok(grad_delta_from_norms(
        psi,
        lag.space_norm(),
        lag.time_norm(),
    ))
}

#[inline]
pub fn grad_delta_from_norms(psi: &ParamVector, h_norm: f64, u_norm: f64) -> [f64; 4] {
    let (s1, ds1) = power_and_log_slope(h_norm, psi.alpha1);
    let (s2, ds2) = power_and_log_slope(u_norm, psi.alpha2);
    [s1, psi.theta1 * ds1, s2, psi.theta2 * ds2]
}

// x^a and d/da x^a = x^a ln x, both 0 at x = 0.
#[inline]
fn power_and_log_slope(x: f64, a: f64) -> (f64, f64) {
    if x == 0.0 {
        (0.0, 0.0)
    } else {
        let p = x.powf(a);
        (p, p * x.ln())
    }
}

#[inline]
fn pow_or_zero(x: f64, a: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(a)
    }
}

/// Tail dependence coefficient χ(h, u) = 2(1 − Φ(√δ)); equals 1 at the zero lag.
pub fn chi(psi: &ParamVector, lag: &SpaceTimeLag) -> f64 {
    chi_from_delta(delta_from_norms(psi, lag.space_norm(), lag.time_norm()))
}

pub fn chi_from_delta(delta: f64) -> f64 {
    2.0 * normal::sf(delta.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationFamily {
    /// ρ(h, u) = (1 + θ₁‖h‖^α₁ + θ₂|u|^α₂)^(-3/2)
    #[serde(rename = "POWER_GNEITING")]
    PowerGneiting,
}

/// Correlation of the underlying Gaussian field, in correlation-scale parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationModel {
    pub family: CorrelationFamily,
    pub ctheta1: f64,
    pub calpha1: f64,
    pub ctheta2: f64,
    pub calpha2: f64,
}

const POWER_GNEITING_EXPONENT: f64 = 1.5;

impl CorrelationModel {
    pub fn power_gneiting(ctheta1: f64, calpha1: f64, ctheta2: f64, calpha2: f64) -> Self {
        Self {
            family: CorrelationFamily::PowerGneiting,
            ctheta1,
            calpha1,
            ctheta2,
            calpha2,
        }
    }

    /// Factor mapping correlation scales onto the scales of the limiting δ.
    pub fn expansion_factor(&self) -> f64 {
        match self.family {
            CorrelationFamily::PowerGneiting => POWER_GNEITING_EXPONENT,
        }
    }

    /// The model whose limiting dependence function has parameters `psi`.
    pub fn from_estimand(family: CorrelationFamily, psi: &ParamVector) -> Self {
        let f = match family {
            CorrelationFamily::PowerGneiting => POWER_GNEITING_EXPONENT,
        };
        Self {
            family,
            ctheta1: psi.theta1 / f,
            calpha1: psi.alpha1,
            ctheta2: psi.theta2 / f,
            calpha2: psi.alpha2,
        }
    }

    /// Parameters of the δ this model converges to.
    pub fn induced_estimand(&self) -> ParamVector {
        let f = self.expansion_factor();
        ParamVector::new(
            self.ctheta1 * f,
            self.calpha1,
            self.ctheta2 * f,
            self.calpha2,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.ctheta1 > 0.0
            && self.ctheta2 > 0.0
            && self.calpha1 > 0.0
            && self.calpha1 <= 2.0
            && self.calpha2 > 0.0
            && self.calpha2 <= 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid correlation model {self:?}"
            )))
        }
    }

    /// Correlation at a real-valued displacement (spatial vector `h`, time offset `u`).
    pub fn rho(&self, h: &[f64], u: f64) -> f64 {
        let h_norm = h.iter().map(|c| c * c).sum::<f64>().sqrt();
        self.rho_from_norms(h_norm, u.abs())
    }

    #[inline]
    pub fn rho_from_norms(&self, h_norm: f64, u_norm: f64) -> f64 {
        match self.family {
            CorrelationFamily::PowerGneiting => {
                let x = self.ctheta1 * pow_or_zero(h_norm, self.calpha1)
                    + self.ctheta2 * pow_or_zero(u_norm, self.calpha2);
                (1.0 + x).powf(-POWER_GNEITING_EXPONENT)
            }
        }
    }
}

/// Space and time scaling sequences s_n = (log n)^(−1/α₁), t_n = (log n)^(−1/α₂).
pub fn scaling_sequences(n: u64, psi: &ParamVector) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "scaling sequences need n >= 2, got {n}"
        )));
    }
    Ok(scaling_from_log_n((n as f64).ln(), psi.alpha1, psi.alpha2))
}

pub fn scaling_from_log_n(log_n: f64, alpha1: f64, alpha2: f64) -> (f64, f64) {
    (log_n.powf(-1.0 / alpha1), log_n.powf(-1.0 / alpha2))
}
