//! Checks of simulated fields against their limiting law: marginal fit to the
//! unit Fréchet distribution and empirical tail dependence.

use crate::error::{Error, Result};

/// Unit Fréchet CDF `exp(−1/x)`.
pub fn frechet_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// Kolmogorov–Smirnov distance between the sample's empirical CDF and `cdf`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max))
}

/// Tail dependence estimated by the F-madogram of a bivariate sample with unit
/// Fréchet margins: `ν = ½E|F(X) − F(Y)|`, extremal coefficient
/// `(1 + 2ν)/(1 − 2ν)`, and `χ = 2 − extremal coefficient`.
pub fn chi_madogram(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "madogram needs equal nonempty samples, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let nu = 0.5
        * x.iter()
            .zip(y)
            .map(|(a, b)| (frechet_cdf(*a) - frechet_cdf(*b)).abs())
            .sum::<f64>()
        / x.len() as f64;
    Ok(2.0 - (1.0 + 2.0 * nu) / (1.0 - 2.0 * nu))
}
