use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Candidate asymptotic errors, in percent.
pub const DEFAULT_EPS_GRID: [f64; 9] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];

/// Space in which squared residuals are minimized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSpace {
    /// Residuals of the error values themselves. Starts from the log-space
    /// solution and refines it with damped Gauss-Newton.
    #[default]
    Linear,
    /// Closed-form least squares on `ln(err − eps_inf)` against `ln x`.
    Log,
}

/// `err(x) = eps_inf + beta · x^c`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub eps_inf: f64,
    pub beta: f64,
    pub c: f64,
    /// Sum of squared residuals in the fitting space.
    pub residual: f64,
    pub space: FitSpace,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.eps_inf + self.beta * x.powf(self.c)
    }
}

/// Fits every grid value and keeps the one with the smallest residual. Grid
/// values at or above some observed error are skipped.
pub fn fit_power_law(points: &[(f64, f64)], eps_grid: &[f64]) -> Result<PowerLawFit> {
    fit_power_law_in(points, eps_grid, FitSpace::default())
}

pub fn fit_power_law_in(points: &[(f64, f64)], eps_grid: &[f64], space: FitSpace) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::Underdetermined(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(&(x, e)) = points.iter().find(|(x, e)| !(*x > 0.0) || !e.is_finite()) {
        return Err(Error::Domain(format!("point ({x}, {e}) needs positive x and finite error")));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let n = lx.len() as f64;
    let xm = lx.iter().sum::<f64>() / n;
    // centred log abscissa; beta is carried as the value at x = exp(xm)
    let u: Vec<f64> = lx.iter().map(|x| x - xm).collect();
    let suu: f64 = u.iter().map(|u| u * u).sum();
    if suu == 0.0 {
        return Err(Error::Underdetermined("all x values are equal".into()));
    }
    let mut best: Option<PowerLawFit> = None;
    for &eps in eps_grid {
        if points.iter().any(|&(_, e)| e <= eps) {
            continue;
        }
        let ys: Vec<f64> = points.iter().map(|&(_, e)| (e - eps).ln()).collect();
        let ym = ys.iter().sum::<f64>() / n;
        let mut c = u.iter().zip(&ys).map(|(u, y)| u * (y - ym)).sum::<f64>() / suu;
        let mut a = ym;
        let residual = match space {
            FitSpace::Log => u.iter().zip(&ys).map(|(u, y)| (a + c * u - y).powi(2)).sum(),
            FitSpace::Linear => {
                let targets: Vec<f64> = points.iter().map(|&(_, e)| e - eps).collect();
                let (ra, rc, r) = refine_linear(&u, &targets, a, c);
                (a, c) = (ra, rc);
                r
            }
        };
        if best.map_or(true, |b| residual < b.residual) {
            best = Some(PowerLawFit {
                eps_inf: eps,
                beta: (a - c * xm).exp(),
                c,
                residual,
                space,
            });
        }
    }
    best.ok_or_else(|| Error::Domain("every asymptote candidate reaches an observed error".into()))
}

fn sse(u: &[f64], t: &[f64], a: f64, c: f64) -> f64 {
    u.iter().zip(t).map(|(u, t)| ((a + c * u).exp() - t).powi(2)).sum()
}

/// Levenberg-Marquardt on `t ≈ exp(a + c·u)`.
fn refine_linear(u: &[f64], t: &[f64], mut a: f64, mut c: f64) -> (f64, f64, f64) {
    let mut cost = sse(u, t, a, c);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        if cost == 0.0 {
            break;
        }
        // normal equations of the Jacobian [f, f·u]
        let (mut h00, mut h01, mut h11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&u, &t) in u.iter().zip(t) {
            let f = (a + c * u).exp();
            let r = f - t;
            h00 += f * f;
            h01 += f * f * u;
            h11 += f * f * u * u;
            g0 += f * r;
            g1 += f * u * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let (d00, d11) = (h00 * (1.0 + lambda), h11 * (1.0 + lambda));
            let det = d00 * d11 - h01 * h01;
            let da = -(d11 * g0 - h01 * g1) / det;
            let dc = -(d00 * g1 - h01 * g0) / det;
            let next = sse(u, t, a + da, c + dc);
            if next.is_finite() && next < cost {
                let done = (cost - next) <= 1e-15 * cost;
                (a, c, cost) = (a + da, c + dc, next);
                lambda = (lambda * 0.3).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, c, cost)
}
