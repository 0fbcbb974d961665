//! Standard normal distribution helpers.
//!
//! `erfc` comes from `libm` (a port of the FreeBSD/musl implementation, accurate
//! to about one ulp), which is what the derivative checks downstream rely on.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `erfc` starts to lose range; switch to the asymptotic series.
const LOWER_TAIL_SWITCH: f64 = -37.0;

#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

#[inline]
pub fn ln_cdf(x: f64) -> f64 {
    eval(x).ln_cdf
}

/// Φ(x) and log Φ(x) from a single `erfc` call.
#[derive(Debug, Clone, Copy)]
pub struct CdfEval {
    pub cdf: f64,
    pub ln_cdf: f64,
}

#[inline]
pub fn eval(x: f64) -> CdfEval {
    if x >= 0.0 {
        let tail = sf(x);
        CdfEval {
            cdf: 1.0 - tail,
            ln_cdf: (-tail).ln_1p(),
        }
    } else if x > LOWER_TAIL_SWITCH {
        let c = cdf(x);
        CdfEval {
            cdf: c,
            ln_cdf: c.ln(),
        }
    } else {
        CdfEval {
            cdf: cdf(x),
            ln_cdf: ln_cdf_asymptotic(x),
        }
    }
}

/// log Φ(x) for x ≪ 0 via the Mills-ratio series; relative error below 1e-13 for x < -37.
fn ln_cdf_asymptotic(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let z = 1.0 / (x * x);
    let series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z)));
    ln_pdf(x) - (-x).ln() + series.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // Values from mpmath at 30 digits.
        let cases = [
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_542_9),
            (-1.0, 0.158_655_253_931_457_05),
            (-5.0, 2.866_515_718_791_939e-7),
            (3.0, 0.998_650_101_968_369_9),
        ];
        for (x, want) in cases {
            let got = cdf(x);
            assert!(((got - want) / want).abs() < 1e-14, "{x}: {got} vs {want}");
        }
    }

    #[test]
    fn log_cdf_is_continuous_across_the_tail_switch() {
        for x in [LOWER_TAIL_SWITCH, LOWER_TAIL_SWITCH + 5.0] {
            let direct = cdf(x).ln();
            assert!((ln_cdf_asymptotic(x) - direct).abs() / direct.abs() < 1e-13);
        }
    }

    #[test]
    fn log_cdf_far_tail() {
        // log Φ(-50) from mpmath
        let want = -1_254.831_361_139_419_9;
        assert!((ln_cdf(-50.0) - want).abs() < 1e-9);
        assert!(ln_cdf(40.0) == 0.0 || ln_cdf(40.0) > -1e-300);
    }

    #[test]
    fn upper_half_uses_tail() {
        let e = eval(9.0);
        assert!(e.ln_cdf < 0.0 && e.ln_cdf > -1e-18);
    }
}
