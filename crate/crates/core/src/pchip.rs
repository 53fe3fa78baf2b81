//! Shape-preserving piecewise cubic Hermite interpolation.
//!
//! Slopes start from the not-a-knot cubic spline and are then limited in
//! the manner of Dougherty, Edelman and Hyman: clipped to three times the
//! smaller neighbouring secant where the data are monotone, with the bound
//! relaxed near smooth extrema so that accuracy is not lost there. The
//! interpolant is C1, monotone on monotone data, and exact for cubics
//! whenever the limiter is inactive. Each piece integrates in closed form.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
    /// Integral of the interpolant from `x[0]` to `x[k]`.
    cumulative: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!("{} abscissae for {} values", x.len(), y.len())));
        }
        if x.len() < 2 {
            return Err(Error::invalid("interpolation needs at least two knots"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interpolation data".into()));
        }
        for (i, w) in x.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Unordered { index: i + 1, min_gap: 0.0 });
            }
        }
        let slopes = limited_slopes(&x, &y);
        let mut cumulative = vec![0.0; x.len()];
        for k in 0..x.len() - 1 {
            let h = x[k + 1] - x[k];
            // Exact integral of a cubic Hermite piece over its whole interval.
            let piece = h * (y[k] + y[k + 1]) / 2.0 + h * h * (slopes[k] - slopes[k + 1]) / 12.0;
            cumulative[k + 1] = cumulative[k] + piece;
        }
        Ok(Self { x, y, slopes, cumulative })
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.domain();
        x >= lo && x <= hi
    }

    /// Index of the piece containing `x` and the local coordinate t in [0, 1].
    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutsideDomain { x, lo, hi });
        }
        let n = self.x.len();
        let k = self.x.partition_point(|&xk| xk <= x).saturating_sub(1).min(n - 2);
        let h = self.x[k + 1] - self.x[k];
        Ok((k, (x - self.x[k]) / h))
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        let (k, t) = self.locate(x)?;
        let h = self.x[k + 1] - self.x[k];
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.y[k] + h10 * h * self.slopes[k] + h01 * self.y[k + 1] + h11 * h * self.slopes[k + 1])
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        let (k, t) = self.locate(x)?;
        let h = self.x[k + 1] - self.x[k];
        let t2 = t * t;
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        Ok(d00 * self.y[k] + d10 * self.slopes[k] + d01 * self.y[k + 1] + d11 * self.slopes[k + 1])
    }

    /// Piecewise linear and discontinuous at knots; the right-hand piece is
    /// used at interior knots.
    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        let (k, t) = self.locate(x)?;
        let h = self.x[k + 1] - self.x[k];
        let s00 = (12.0 * t - 6.0) / (h * h);
        let s10 = (6.0 * t - 4.0) / h;
        let s01 = (-12.0 * t + 6.0) / (h * h);
        let s11 = (6.0 * t - 2.0) / h;
        Ok(s00 * self.y[k] + s10 * self.slopes[k] + s01 * self.y[k + 1] + s11 * self.slopes[k + 1])
    }

    /// Integral of the interpolant from the first knot to `x`, exact for the
    /// piecewise cubic.
    pub fn integral(&self, x: f64) -> Result<f64> {
        let (k, t) = self.locate(x)?;
        let h = self.x[k + 1] - self.x[k];
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let i00 = t4 / 2.0 - t3 + t;
        let i10 = t4 / 4.0 - 2.0 * t3 / 3.0 + t2 / 2.0;
        let i01 = -t4 / 2.0 + t3;
        let i11 = t4 / 4.0 - t3 / 3.0;
        let local = h
            * (i00 * self.y[k] + i10 * h * self.slopes[k] + i01 * self.y[k + 1] + i11 * h * self.slopes[k + 1]);
        Ok(self.cumulative[k] + local)
    }
}

fn limited_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = spline_slopes(&h, &delta);
    let sign = |v: f64| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 };
    for k in 0..n {
        if k == 0 || k == n - 1 {
            let edge = if k == 0 { delta[0] } else { delta[n - 2] };
            d[k] = edge.signum() * (edge.signum() * d[k]).clamp(0.0, 3.0 * edge.abs());
            if edge == 0.0 {
                d[k] = 0.0;
            }
            continue;
        }
        let (a, b) = (delta[k - 1], delta[k]);
        let p = (a * h[k] + b * h[k - 1]) / (h[k - 1] + h[k]);
        let mut bound = 3.0 * a.abs().min(b.abs()).min(p.abs());
        // Relax the bound next to a smooth extremum, where the one-sided
        // parabolas agree on the curvature.
        if k >= 2 {
            let left = (a * (2.0 * h[k - 1] + h[k - 2]) - delta[k - 2] * h[k - 1]) / (h[k - 2] + h[k - 1]);
            let s = sign(p);
            if s != 0 && s == sign(left) && s == sign(b - a) && s == sign(a - delta[k - 2]) {
                bound = bound.max(1.5 * p.abs().min(left.abs()));
            }
        }
        if k + 2 < n {
            let right = (b * (2.0 * h[k] + h[k + 1]) - delta[k + 1] * h[k]) / (h[k] + h[k + 1]);
            let s = sign(p);
            if s != 0 && s == sign(right) && s == -sign(b - a) && s == -sign(delta[k + 1] - b) {
                bound = bound.max(1.5 * p.abs().min(right.abs()));
            }
        }
        d[k] = if sign(d[k]) == sign(p) { d[k].signum() * d[k].abs().min(bound) } else { 0.0 };
    }
    d
}

/// Knot slopes of the not-a-knot cubic spline, or of the parabola through
/// three knots.
fn spline_slopes(h: &[f64], delta: &[f64]) -> Vec<f64> {
    let n = h.len() + 1;
    if n == 3 {
        let p = (delta[0] * h[1] + delta[1] * h[0]) / (h[0] + h[1]);
        return vec![2.0 * delta[0] - p, p, 2.0 * delta[1] - p];
    }
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let w = h[0] + h[1];
    diag[0] = h[1];
    sup[0] = w;
    rhs[0] = ((h[0] + 2.0 * w) * h[1] * delta[0] + h[0] * h[0] * delta[1]) / w;
    for k in 1..n - 1 {
        sub[k] = h[k];
        diag[k] = 2.0 * (h[k - 1] + h[k]);
        sup[k] = h[k - 1];
        rhs[k] = 3.0 * (h[k] * delta[k - 1] + h[k - 1] * delta[k]);
    }
    let w = h[n - 2] + h[n - 3];
    sub[n - 1] = w;
    diag[n - 1] = h[n - 3];
    rhs[n - 1] = (h[n - 2] * h[n - 2] * delta[n - 3] + (2.0 * w + h[n - 2]) * h[n - 3] * delta[n - 2]) / w;
    for k in 1..n {
        let m = sub[k] / diag[k - 1];
        diag[k] -= m * sup[k - 1];
        rhs[k] -= m * rhs[k - 1];
    }
    let mut d = vec![0.0; n];
    d[n - 1] = rhs[n - 1] / diag[n - 1];
    for k in (0..n - 1).rev() {
        d[k] = (rhs[k] - sup[k] * d[k + 1]) / diag[k];
    }
    d
}
