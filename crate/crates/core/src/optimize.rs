//! Nelder–Mead minimization inside a box.
//!
//! Trial points are clamped onto the box before evaluation. A simplex that has
//! collapsed against a face can stall short of the optimum, so on convergence the
//! search restarts once from the best vertex and only stops when the restart no
//! longer improves the objective.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    /// Initial edge length as a fraction of each coordinate's box width.
    pub initial_scale: f64,
    /// Bound on the simplex extent in every coordinate.
    pub xtol: f64,
    /// Bound on the objective spread, relative to `max(1, |f_best|)`.
    pub ftol: f64,
    pub max_iterations: usize,
    pub max_restarts: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            initial_scale: 0.1,
            xtol: 1e-6,
            ftol: 1e-8,
            max_iterations: 2000,
            max_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Search<'a, F> {
    f: F,
    lower: &'a [f64],
    upper: &'a [f64],
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Search<'_, F> {
    fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn simplex_around(&mut self, x0: &[f64], scale: f64) -> Vec<(Vec<f64>, f64)> {
        let mut pts = vec![(x0.to_vec(), self.eval(x0))];
        for i in 0..x0.len() {
            let step = scale * (self.upper[i] - self.lower[i]);
            let mut x = x0.to_vec();
            x[i] = if x0[i] + step <= self.upper[i] {
                x0[i] + step
            } else {
                x0[i] - step
            };
            self.clamp(&mut x);
            let v = self.eval(&x);
            pts.push((x, v));
        }
        pts
    }
}

fn converged(pts: &[(Vec<f64>, f64)], xtol: f64, ftol: f64) -> bool {
    let best = &pts[0];
    let spread = pts.last().unwrap().1 - best.1;
    let extent = pts
        .iter()
        .skip(1)
        .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    extent <= xtol && spread <= ftol * best.1.abs().max(1.0)
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
pub fn minimize<F>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    config: &NelderMeadConfig,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n >= 1 && lower.len() == n && upper.len() == n);
    let mut s = Search {
        f,
        lower,
        upper,
        evaluations: 0,
    };
    let mut start = x0.to_vec();
    s.clamp(&mut start);
    let mut pts = s.simplex_around(&start, config.initial_scale);
    let mut iterations = 0;
    let mut restarts = 0;
    let mut last_restart_f = f64::INFINITY;

    loop {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        if converged(&pts, config.xtol, config.ftol) {
            let best_f = pts[0].1;
            let improved = last_restart_f - best_f > config.ftol * best_f.abs().max(1.0);
            if restarts >= config.max_restarts || !improved {
                return Minimum {
                    x: pts[0].0.clone(),
                    f: best_f,
                    iterations,
                    evaluations: s.evaluations,
                    converged: true,
                };
            }
            restarts += 1;
            last_restart_f = best_f;
            let best = pts[0].0.clone();
            pts = s.simplex_around(&best, config.initial_scale * 0.1);
            continue;
        }
        if iterations >= config.max_iterations {
            return Minimum {
                x: pts[0].0.clone(),
                f: pts[0].1,
                iterations,
                evaluations: s.evaluations,
                converged: false,
            };
        }
        iterations += 1;

        let worst = pts[n].clone();
        let mut centroid = vec![0.0; n];
        for (x, _) in &pts[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let mut xr = along(REFLECT);
        s.clamp(&mut xr);
        let fr = s.eval(&xr);
        if fr < pts[0].1 {
            let mut xe = along(EXPAND);
            s.clamp(&mut xe);
            let fe = s.eval(&xe);
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < pts[n - 1].1 {
            pts[n] = (xr, fr);
            continue;
        }
        // contraction: outside if the reflection beat the worst vertex, inside otherwise
        let (mut xc, bound) = if fr < worst.1 {
            (along(CONTRACT), fr)
        } else {
            (along(-CONTRACT), worst.1)
        };
        s.clamp(&mut xc);
        let fc = s.eval(&xc);
        if fc < bound {
            pts[n] = (xc, fc);
            continue;
        }
        let best = pts[0].0.clone();
        for p in pts.iter_mut().skip(1) {
            for (v, b) in p.0.iter_mut().zip(&best) {
                *v = b + SHRINK * (*v - b);
            }
            p.1 = s.eval(&p.0);
        }
    }
}
