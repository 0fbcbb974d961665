//! Bivariate Hüsler–Reiss distribution with standard Fréchet margins.
//!
//! With `a = 2√δ` and `L = log(x₂/x₁)` the two standardized arguments are
//! `q₁ = L/a + a/2` and `q₂ = −L/a + a/2`; the exponent function is
//! `V = Φ(q₁)/x₁ + Φ(q₂)/x₂` and the CDF is `exp(−V)`.
//!
//! The density bracket `V₁V₂ − V₁₂` is evaluated through the identity
//! `φ(q₁)/x₁ = φ(q₂)/x₂`, under which it collapses to two positive terms,
//!
//! ```text
//! V₁V₂ − V₁₂ = Φ(q₁)Φ(q₂)/(x₁²x₂²) + φ(q₁)/(a x₁² x₂),
//! ```
//!
//! so the log-density is a log-sum-exp that never cancels. [`exponent_v`] keeps
//! the term-by-term partial derivatives for callers that want them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::normal;

/// Smallest accepted observation; Fréchet draws are positive with probability one.
pub const MIN_OBSERVATION: f64 = 1e-10;

/// Objective floor returned when the log-density cannot be represented.
pub const LOG_DENSITY_FLOOR: f64 = -1e10;

fn check_inputs(x1: f64, x2: f64, delta: f64) -> Result<()> {
    for (name, x) in [("x1", x1), ("x2", x2)] {
        if !x.is_finite() || x < MIN_OBSERVATION {
            return Err(Error::Domain(format!(
                "{name} = {x} must be finite and at least {MIN_OBSERVATION}"
            )));
        }
    }
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Domain(format!(
            "delta = {delta} must be finite and positive"
        )));
    }
    Ok(())
}

/// Cached intermediates of the exponent function at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BivariateWorkspace {
    pub x1: f64,
    pub x2: f64,
    pub delta: f64,
    pub q1: f64,
    pub q2: f64,
    pub v: f64,
    pub dv_dx1: f64,
    pub dv_dx2: f64,
    pub d2v_dx1dx2: f64,
}

impl BivariateWorkspace {
    pub fn new(x1: f64, x2: f64, delta: f64) -> Result<Self> {
        check_inputs(x1, x2, delta)?;
        let sd = delta.sqrt();
        let a = 2.0 * sd;
        let l = (x2 / x1).ln();
        let q1 = l / a + sd;
        let q2 = -l / a + sd;
        let (p1, p2) = (normal::cdf(q1), normal::cdf(q2));
        let (f1, f2) = (normal::pdf(q1), normal::pdf(q2));
        let v = p1 / x1 + p2 / x2;
        let dv_dx1 = -p1 / (x1 * x1) - f1 / (a * x1 * x1) + f2 / (a * x1 * x2);
        let dv_dx2 = -p2 / (x2 * x2) - f2 / (a * x2 * x2) + f1 / (a * x1 * x2);
        let d2v_dx1dx2 = -(a - q1) * f1 / (4.0 * delta * x1 * x1 * x2)
            - (a - q2) * f2 / (4.0 * delta * x1 * x2 * x2);
        Ok(Self {
            x1,
            x2,
            delta,
            q1,
            q2,
            v,
            dv_dx1,
            dv_dx2,
            d2v_dx1dx2,
        })
    }

    /// `V₁V₂ − V₁₂` from the term-by-term partials (subject to cancellation).
    pub fn bracket(&self) -> f64 {
        self.dv_dx1 * self.dv_dx2 - self.d2v_dx1dx2
    }
}

/// V and its partials `(V, ∂V/∂x₁, ∂V/∂x₂, ∂²V/∂x₁∂x₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentV {
    pub v: f64,
    pub dv_dx1: f64,
    pub dv_dx2: f64,
    pub d2v_dx1dx2: f64,
}

pub fn exponent_v(x1: f64, x2: f64, delta: f64) -> Result<ExponentV> {
    let w = BivariateWorkspace::new(x1, x2, delta)?;
    Ok(ExponentV {
        v: w.v,
        dv_dx1: w.dv_dx1,
        dv_dx2: w.dv_dx2,
        d2v_dx1dx2: w.d2v_dx1dx2,
    })
}

pub fn bivariate_cdf(x1: f64, x2: f64, delta: f64) -> Result<f64> {
    check_inputs(x1, x2, delta)?;
    let sd = delta.sqrt();
    let l = (x2 / x1).ln();
    let a = 2.0 * sd;
    let v = normal::cdf(l / a + sd) / x1 + normal::cdf(-l / a + sd) / x2;
    Ok((-v).exp())
}

/// Log-density together with its δ-derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelEval {
    pub log_density: f64,
    pub dlogf_ddelta: f64,
    /// Set when the log-density was not representable and the floor was returned.
    pub flagged: bool,
}

/// Evaluates the kernel from log-observations. No input validation: the
/// likelihood loops call this with pre-validated fields and δ > 0.
#[inline]
pub(crate) fn kernel_from_logs(lx1: f64, lx2: f64, x1: f64, delta: f64) -> KernelEval {
    kernel_impl::<true>(lx1, lx2, x1, delta)
}

/// Log-density only, from log-observations; `x1 = exp(lx1)`.
#[inline]
pub(crate) fn log_density_from_logs(lx1: f64, lx2: f64, x1: f64, delta: f64) -> f64 {
    kernel_impl::<false>(lx1, lx2, x1, delta).log_density
}

#[inline(always)]
fn kernel_impl<const DERIV: bool>(lx1: f64, lx2: f64, x1: f64, delta: f64) -> KernelEval {
    let sd = delta.sqrt();
    let a = 2.0 * sd;
    let l = lx2 - lx1;
    let q1 = l / a + sd;
    let q2 = -l / a + sd;
    let e1 = normal::eval(q1);
    let e2 = normal::eval(q2);
    let lphi1 = normal::ln_pdf(q1);
    let lphi2 = normal::ln_pdf(q2);

    // V = Φ(q₁)/x₁ + Φ(q₂)/x₂, with 1/x₂ = exp(−lx₂)
    let v = e1.cdf / x1 + e2.cdf * (-lx2).exp();

    let t1 = e1.ln_cdf + e2.ln_cdf - 2.0 * lx1 - 2.0 * lx2;
    let t2 = lphi1 - a.ln() - 2.0 * lx1 - lx2;
    let m = t1.max(t2);
    let ln_bracket = m + ((t1 - m).exp() + (t2 - m).exp()).ln();
    let log_density = -v + ln_bracket;
    if !log_density.is_finite() {
        return KernelEval {
            log_density: LOG_DENSITY_FLOOR,
            dlogf_ddelta: 0.0,
            flagged: true,
        };
    }
    if !DERIV {
        return KernelEval {
            log_density,
            dlogf_ddelta: 0.0,
            flagged: false,
        };
    }

    // dq₁/dδ = q₂/(2δ), dq₂/dδ = q₁/(2δ), and dV/dδ = φ(q₁)/(x₁√δ).
    let two_delta = 2.0 * delta;
    let w1 = (t1 - ln_bracket).exp();
    let w2 = (t2 - ln_bracket).exp();
    let mills1 = (lphi1 - e1.ln_cdf).exp();
    let mills2 = (lphi2 - e2.ln_cdf).exp();
    let dln_t1 = (q2 * mills1 + q1 * mills2) / two_delta;
    let dln_t2 = -(q1 * q2 + 1.0) / two_delta;
    let dv = (lphi1 - lx1).exp() / sd;
    let d = -dv + w1 * dln_t1 + w2 * dln_t2;

    KernelEval {
        log_density,
        dlogf_ddelta: if d.is_finite() { d } else { 0.0 },
        flagged: !d.is_finite(),
    }
}

pub fn kernel(x1: f64, x2: f64, delta: f64) -> Result<KernelEval> {
    check_inputs(x1, x2, delta)?;
    Ok(kernel_from_logs(x1.ln(), x2.ln(), x1, delta))
}

/// Bivariate log-density `−V + log(V₁V₂ − V₁₂)`.
pub fn log_density(x1: f64, x2: f64, delta: f64) -> Result<f64> {
    Ok(kernel(x1, x2, delta)?.log_density)
}

/// Derivative of [`log_density`] with respect to δ.
pub fn dlogf_ddelta(x1: f64, x2: f64, delta: f64) -> Result<f64> {
    Ok(kernel(x1, x2, delta)?.dlogf_ddelta)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    proptest! {
        #[test]
        fn density_is_symmetric_and_finite(x1 in 0.05f64..50.0, x2 in 0.05f64..50.0, d in 1e-3f64..25.0) {
            let a = kernel(x1, x2, d).unwrap();
            let b = kernel(x2, x1, d).unwrap();
            prop_assert!(a.log_density.is_finite() && a.dlogf_ddelta.is_finite());
            prop_assert!(!a.flagged);
            prop_assert!(close(a.log_density, b.log_density, 1e-10));
            prop_assert!(close(a.dlogf_ddelta, b.dlogf_ddelta, 1e-8));
        }

        #[test]
        fn cdf_lies_between_independence_and_comonotonicity(x1 in 0.05f64..50.0, x2 in 0.05f64..50.0, d in 1e-3f64..25.0) {
            let f = bivariate_cdf(x1, x2, d).unwrap();
            let upper = (-1.0 / x1.max(x2)).exp();
            let lower = (-1.0 / x1 - 1.0 / x2).exp();
            prop_assert!(f <= upper * (1.0 + 1e-14) && f >= lower * (1.0 - 1e-14));
        }

        #[test]
        fn cdf_on_the_diagonal(x in 0.05f64..50.0, d in 1e-3f64..25.0) {
            let want = (-2.0 * normal::cdf(d.sqrt()) / x).exp();
            prop_assert!(close(bivariate_cdf(x, x, d).unwrap(), want, 1e-13));
        }
    }
}
