//! Cubic smoothing splines with generalized cross-validation.
//!
//! The fitted values minimize `sum (y_i - f(x_i))^2 + lambda * int f''^2`;
//! the minimizer is a natural cubic spline through the fitted values, so
//! evaluation interpolates those values with a natural cubic and extends
//! linearly beyond the knot range. Linear data is reproduced exactly for
//! every smoothing parameter.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    /// Pick lambda by generalized cross-validation over a log grid.
    #[serde(rename = "gcv")]
    Gcv,
    /// Fixed smoothing parameter.
    #[serde(rename = "fixed")]
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SmoothingSpline {
    x: Vec<f64>,
    fitted: Vec<f64>,
    /// Second derivatives of the interpolating natural cubic.
    m: Vec<f64>,
    lambda: f64,
}

impl SmoothingSpline {
    /// Fits the spline to (x, y) points. Unordered input is sorted and
    /// duplicate abscissas are averaged; at least two distinct x values are
    /// required.
    pub fn fit(xs: &[f64], ys: &[f64], smoothing: Smoothing) -> Result<SmoothingSpline> {
        if xs.len() != ys.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} x values vs {} y values",
                xs.len(),
                ys.len()
            )));
        }
        let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::domain("spline input must be finite"));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut x: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut y: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut counts: Vec<f64> = Vec::with_capacity(pairs.len());
        for (xi, yi) in pairs {
            match x.last() {
                Some(&last) if (xi - last).abs() < 1e-12 => {
                    let idx = x.len() - 1;
                    counts[idx] += 1.0;
                    y[idx] += (yi - y[idx]) / counts[idx];
                }
                _ => {
                    x.push(xi);
                    y.push(yi);
                    counts.push(1.0);
                }
            }
        }
        let n = x.len();
        if n < 2 {
            return Err(Error::domain("spline needs at least two distinct x values"));
        }
        if n == 2 {
            let m = vec![0.0; 2];
            return Ok(SmoothingSpline { x, fitted: y, m, lambda: 0.0 });
        }

        let (fitted, lambda) = match smoothing {
            Smoothing::Fixed(lambda) => (smooth_values(&x, &y, lambda)?, lambda),
            Smoothing::Gcv => {
                let mean_gap = (x[n - 1] - x[0]) / (n as f64 - 1.0);
                let base = mean_gap.powi(3).max(1e-300);
                let mut best: Option<(f64, f64, Vec<f64>)> = None;
                for k in -8..=8 {
                    let lambda = base * 10f64.powi(k);
                    let (values, gcv) = smooth_with_gcv(&x, &y, lambda)?;
                    if best.as_ref().map_or(true, |(score, _, _)| gcv < *score) {
                        best = Some((gcv, lambda, values));
                    }
                }
                let (_, lambda, values) = best.expect("non-empty lambda grid");
                (values, lambda)
            }
        };

        let m = natural_cubic_second_derivatives(&x, &fitted);
        Ok(SmoothingSpline { x, fitted, m, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn knot_range(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().expect("non-empty"))
    }

    /// Evaluates the spline; beyond the knot range the curve continues
    /// linearly with the boundary slope.
    pub fn eval(&self, at: f64) -> f64 {
        let n = self.x.len();
        if at <= self.x[0] {
            return self.fitted[0] + self.slope_at(0) * (at - self.x[0]);
        }
        if at >= self.x[n - 1] {
            return self.fitted[n - 1] + self.slope_at(n - 2) * (at - self.x[n - 1]);
        }
        let i = match self.x.binary_search_by(|v| v.total_cmp(&at)) {
            Ok(i) => return self.fitted[i],
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - at) / h;
        let b = (at - self.x[i]) / h;
        a * self.fitted[i]
            + b * self.fitted[i + 1]
            + ((a.powi(3) - a) * self.m[i] + (b.powi(3) - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// First derivative on interval `i` evaluated at its boundary knot.
    fn slope_at(&self, i: usize) -> f64 {
        let h = self.x[i + 1] - self.x[i];
        // Natural spline derivative at the left (i=0) or right (i=n-2) end.
        if i == 0 {
            (self.fitted[1] - self.fitted[0]) / h - h / 6.0 * (2.0 * self.m[0] + self.m[1])
        } else {
            (self.fitted[i + 1] - self.fitted[i]) / h
                + h / 6.0 * (self.m[i] + 2.0 * self.m[i + 1])
        }
    }
}

fn penalty_matrices(x: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut delta = DMatrix::zeros(n - 2, n);
    let mut r = DMatrix::zeros(n - 2, n - 2);
    for i in 0..n - 2 {
        delta[(i, i)] = 1.0 / h[i];
        delta[(i, i + 1)] = -(1.0 / h[i] + 1.0 / h[i + 1]);
        delta[(i, i + 2)] = 1.0 / h[i + 1];
        r[(i, i)] = (h[i] + h[i + 1]) / 3.0;
        if i + 1 < n - 2 {
            r[(i, i + 1)] = h[i + 1] / 6.0;
            r[(i + 1, i)] = h[i + 1] / 6.0;
        }
    }
    (delta, r)
}

fn smoother_matrix(x: &[f64], lambda: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let (delta, r) = penalty_matrices(x);
    let r_inv = r
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::domain("singular spline penalty matrix"))?;
    let k = delta.transpose() * r_inv * delta;
    let f = DMatrix::identity(n, n) + k * lambda;
    f.lu()
        .try_inverse()
        .ok_or_else(|| Error::domain("singular spline system"))
}

fn smooth_values(x: &[f64], y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let s = smoother_matrix(x, lambda)?;
    let yv = nalgebra::DVector::from_column_slice(y);
    Ok((s * yv).iter().copied().collect())
}

fn smooth_with_gcv(x: &[f64], y: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = x.len() as f64;
    let s = smoother_matrix(x, lambda)?;
    let yv = nalgebra::DVector::from_column_slice(y);
    let fitted = &s * &yv;
    let rss: f64 = fitted.iter().zip(y).map(|(f, yi)| (f - yi).powi(2)).sum();
    let trace: f64 = s.diagonal().iter().sum();
    let denom = n - trace;
    let gcv = if denom > 1e-9 { n * rss / (denom * denom) } else { f64::INFINITY };
    Ok((fitted.iter().copied().collect(), gcv))
}

/// Second derivatives of the natural cubic interpolant (Thomas algorithm).
fn natural_cubic_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    // Tridiagonal system over interior knots.
    let mut diag = vec![0.0; n - 2];
    let mut upper = vec![0.0; n - 2];
    let mut rhs = vec![0.0; n - 2];
    for i in 0..n - 2 {
        diag[i] = (h[i] + h[i + 1]) / 3.0;
        if i + 1 < n - 2 {
            upper[i] = h[i + 1] / 6.0;
        }
        rhs[i] = (y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i];
    }
    // Forward sweep (symmetric system: lower[i] = upper[i-1]).
    for i in 1..n - 2 {
        let w = upper[i - 1] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    if n >= 3 {
        m[n - 2] = rhs[n - 3] / diag[n - 3];
        for i in (0..n - 3).rev() {
            m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_linear_data_exactly() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        for smoothing in [Smoothing::Gcv, Smoothing::Fixed(1e6), Smoothing::Fixed(1e-6)] {
            let spline = SmoothingSpline::fit(&x, &y, smoothing).unwrap();
            for probe in [0.0, 13.37, 49.9, 98.0, 120.0, -5.0] {
                assert!(
                    (spline.eval(probe) - (3.0 * probe - 7.0)).abs() < 1e-6,
                    "probe {probe} under {smoothing:?}"
                );
            }
        }
    }

    #[test]
    fn smooths_noise_toward_trend() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..200).map(|i| i as f64 * 0.5).collect();
        let truth: Vec<f64> = x.iter().map(|v| (v * 0.08).sin() * 50.0 + 100.0).collect();
        let y: Vec<f64> =
            truth.iter().map(|t| t + rng.gen_range(-3.0..3.0)).collect();
        let spline = SmoothingSpline::fit(&x, &y, Smoothing::Gcv).unwrap();
        let rms: f64 = (x
            .iter()
            .zip(&truth)
            .map(|(xi, t)| (spline.eval(*xi) - t).powi(2))
            .sum::<f64>()
            / x.len() as f64)
            .sqrt();
        assert!(rms < 1.5, "rms {rms}");
    }

    #[test]
    fn duplicate_xs_are_averaged() {
        let x = [0.0, 1.0, 1.0, 2.0];
        let y = [0.0, 1.0, 3.0, 2.0];
        let spline = SmoothingSpline::fit(&x, &y, Smoothing::Fixed(1e-9)).unwrap();
        assert!((spline.eval(1.0) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(SmoothingSpline::fit(&[1.0], &[2.0], Smoothing::Gcv).is_err());
        assert!(SmoothingSpline::fit(&[1.0, 1.0], &[2.0, 3.0], Smoothing::Gcv).is_err());
    }
}
