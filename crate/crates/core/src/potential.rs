//! External axial potentials.

use crate::error::{Error, Result};
use crate::pchip::Pchip;
use crate::trap::TrapPotential;

/// Potential-energy curve seen by a single ion, in internal units.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential1D {
    /// `stiffness / 2 * (x - center)^2`
    Harmonic { stiffness: f64, center: f64 },
    /// `quartic * x^4 - quadratic * x^2`
    QuarticDoubleWell { quartic: f64, quadratic: f64 },
    /// `slope * x`
    LinearTilt { slope: f64 },
    /// `sum_k coefficients[k] * x^k`
    Polynomial { coefficients: Vec<f64> },
    /// Axial potential of a segmented surface trap.
    Trap(TrapPotential),
    /// Interpolated samples; evaluation outside the knots is an error.
    Sampled(Pchip),
    Sum(Vec<Potential1D>),
    /// `inner + offset`. The offset never reaches the forward solver.
    Shifted { inner: Box<Potential1D>, offset: f64 },
}

impl Potential1D {
    pub fn sampled(x: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Ok(Potential1D::Sampled(Pchip::new(x, values)?))
    }

    pub fn shifted(self, offset: f64) -> Self {
        Potential1D::Shifted { inner: Box::new(self), offset }
    }

    pub fn plus(self, other: Potential1D) -> Self {
        match self {
            Potential1D::Sum(mut terms) => {
                terms.push(other);
                Potential1D::Sum(terms)
            }
            p => Potential1D::Sum(vec![p, other]),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            Potential1D::Sampled(p) => p.domain(),
            Potential1D::Sum(terms) => terms.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(lo, hi), t| {
                let (a, b) = t.domain();
                (lo.max(a), hi.min(b))
            }),
            Potential1D::Shifted { inner, .. } => inner.domain(),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn check(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutsideDomain { x, lo, hi });
        }
        Ok(())
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self {
            Potential1D::Shifted { inner, offset } => inner.value(x)? + offset,
            Potential1D::Polynomial { coefficients } => horner(coefficients, x),
            Potential1D::Sum(terms) => {
                let mut s = 0.0;
                for t in terms {
                    s += t.value(x)?;
                }
                s
            }
            _ => self.relative_value(x)?,
        })
    }

    /// Value with every additive constant removed. Differences of this are
    /// equal to differences of [`Potential1D::value`] up to rounding.
    pub fn relative_value(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self {
            Potential1D::Harmonic { stiffness, center } => 0.5 * stiffness * (x - center).powi(2),
            Potential1D::QuarticDoubleWell { quartic, quadratic } => {
                let x2 = x * x;
                quartic * x2 * x2 - quadratic * x2
            }
            Potential1D::LinearTilt { slope } => slope * x,
            Potential1D::Polynomial { coefficients } => {
                if coefficients.len() > 1 {
                    horner(&coefficients[1..], x) * x
                } else {
                    0.0
                }
            }
            Potential1D::Trap(t) => t.value(x),
            Potential1D::Sampled(p) => p.value(x)?,
            Potential1D::Sum(terms) => {
                let mut s = 0.0;
                for t in terms {
                    s += t.relative_value(x)?;
                }
                s
            }
            Potential1D::Shifted { inner, .. } => inner.relative_value(x)?,
        })
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self {
            Potential1D::Harmonic { stiffness, center } => stiffness * (x - center),
            Potential1D::QuarticDoubleWell { quartic, quadratic } => 4.0 * quartic * x.powi(3) - 2.0 * quadratic * x,
            Potential1D::LinearTilt { slope } => *slope,
            Potential1D::Polynomial { coefficients } => {
                let d: Vec<f64> = coefficients.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
                horner(&d, x)
            }
            Potential1D::Trap(t) => t.derivative(x),
            Potential1D::Sampled(p) => p.derivative(x)?,
            Potential1D::Sum(terms) => {
                let mut s = 0.0;
                for t in terms {
                    s += t.derivative(x)?;
                }
                s
            }
            Potential1D::Shifted { inner, .. } => inner.derivative(x)?,
        })
    }

    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self {
            Potential1D::Harmonic { stiffness, .. } => *stiffness,
            Potential1D::QuarticDoubleWell { quartic, quadratic } => 12.0 * quartic * x * x - 2.0 * quadratic,
            Potential1D::LinearTilt { .. } => 0.0,
            Potential1D::Polynomial { coefficients } => {
                let d: Vec<f64> = coefficients
                    .iter()
                    .enumerate()
                    .skip(2)
                    .map(|(k, c)| (k * (k - 1)) as f64 * c)
                    .collect();
                horner(&d, x)
            }
            Potential1D::Trap(t) => t.second_derivative(x),
            Potential1D::Sampled(p) => p.second_derivative(x)?,
            Potential1D::Sum(terms) => {
                let mut s = 0.0;
                for t in terms {
                    s += t.second_derivative(x)?;
                }
                s
            }
            Potential1D::Shifted { inner, .. } => inner.second_derivative(x)?,
        })
    }

    /// Whether the potential rises without bound toward both ends of the
    /// real line. `None` when that cannot be decided from the form alone
    /// (trap and sampled potentials, sums containing them).
    pub fn is_globally_confining(&self) -> Option<bool> {
        match self {
            Potential1D::Harmonic { stiffness, .. } => Some(*stiffness > 0.0),
            Potential1D::QuarticDoubleWell { quartic, .. } => Some(*quartic > 0.0),
            Potential1D::LinearTilt { .. } => Some(false),
            Potential1D::Polynomial { coefficients } => {
                let trimmed: Vec<f64> = {
                    let mut c = coefficients.clone();
                    while c.last() == Some(&0.0) {
                        c.pop();
                    }
                    c
                };
                let degree = trimmed.len().saturating_sub(1);
                Some(degree >= 2 && degree % 2 == 0 && trimmed[degree] > 0.0)
            }
            Potential1D::Trap(_) | Potential1D::Sampled(_) => None,
            Potential1D::Shifted { inner, .. } => inner.is_globally_confining(),
            Potential1D::Sum(terms) => {
                // Dominated by the term of highest growth; only decidable
                // for all-polynomial sums.
                let mut coeffs: Vec<f64> = Vec::new();
                for t in terms {
                    let c = t.polynomial_coefficients()?;
                    if c.len() > coeffs.len() {
                        coeffs.resize(c.len(), 0.0);
                    }
                    for (k, v) in c.iter().enumerate() {
                        coeffs[k] += v;
                    }
                }
                Potential1D::Polynomial { coefficients: coeffs }.is_globally_confining()
            }
        }
    }

    fn polynomial_coefficients(&self) -> Option<Vec<f64>> {
        match self {
            Potential1D::Harmonic { stiffness, center } => {
                Some(vec![0.5 * stiffness * center * center, -stiffness * center, 0.5 * stiffness])
            }
            Potential1D::QuarticDoubleWell { quartic, quadratic } => Some(vec![0.0, 0.0, -quadratic, 0.0, *quartic]),
            Potential1D::LinearTilt { slope } => Some(vec![0.0, *slope]),
            Potential1D::Polynomial { coefficients } => Some(coefficients.clone()),
            Potential1D::Shifted { inner, offset } => {
                let mut c = inner.polynomial_coefficients()?;
                if c.is_empty() {
                    c.push(0.0);
                }
                c[0] += offset;
                Some(c)
            }
            _ => None,
        }
    }

    /// Interior local minima of the potential on a uniform grid of
    /// `points` samples over `[lo, hi]`, refined by a parabola through the
    /// three bracketing samples.
    pub fn grid_minima(&self, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
        if points < 3 || !(hi > lo) {
            return Err(Error::invalid("grid scan needs at least 3 points on a non-empty interval"));
        }
        let step = (hi - lo) / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
        let vs = xs.iter().map(|&x| self.relative_value(x)).collect::<Result<Vec<_>>>()?;
        let mut minima = Vec::new();
        for i in 1..points - 1 {
            if vs[i] < vs[i - 1] && vs[i] <= vs[i + 1] {
                let denom = vs[i - 1] - 2.0 * vs[i] + vs[i + 1];
                let shift = if denom > 0.0 { 0.5 * (vs[i - 1] - vs[i + 1]) / denom } else { 0.0 };
                minima.push(xs[i] + shift * step);
            }
        }
        Ok(minima)
    }
}

fn horner(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let family = [
            Potential1D::Harmonic { stiffness: 2.5, center: 0.3 },
            Potential1D::QuarticDoubleWell { quartic: 1.0, quadratic: 1.0 },
            Potential1D::Polynomial { coefficients: vec![1.0, -0.2, 0.5, 0.1, 0.05] },
            Potential1D::LinearTilt { slope: 0.4 }.plus(Potential1D::Harmonic { stiffness: 1.0, center: 0.0 }),
        ];
        for p in &family {
            for &x in &[-1.3, -0.2, 0.0, 0.7, 2.1] {
                let d = central_difference(|t| p.value(t).unwrap(), x, 1e-5);
                assert!((p.derivative(x).unwrap() - d).abs() < 1e-7 * (1.0 + d.abs()));
                let dd = central_difference(|t| p.derivative(t).unwrap(), x, 1e-5);
                assert!((p.second_derivative(x).unwrap() - dd).abs() < 1e-7 * (1.0 + dd.abs()));
            }
        }
    }

    #[test]
    fn relative_value_drops_constants() {
        let base = Potential1D::Harmonic { stiffness: 1.0, center: 0.0 };
        let shifted = base.clone().shifted(3.25);
        assert_eq!(shifted.value(2.0).unwrap(), 5.25);
        assert_eq!(shifted.relative_value(2.0).unwrap(), base.relative_value(2.0).unwrap());
        let poly = Potential1D::Polynomial { coefficients: vec![7.0, 0.0, 0.5] };
        assert_eq!(poly.relative_value(2.0).unwrap(), 2.0);
        assert_eq!(poly.value(2.0).unwrap(), 9.0);
    }

    #[test]
    fn sampled_potential_refuses_extrapolation() {
        let p = Potential1D::sampled(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0]).unwrap();
        assert!(p.value(2.5).is_err());
        assert!(p.derivative(-0.1).is_err());
        assert_eq!(p.domain(), (0.0, 2.0));
    }

    #[test]
    fn confinement_classification() {
        assert_eq!(Potential1D::LinearTilt { slope: 1.0 }.is_globally_confining(), Some(false));
        assert_eq!(Potential1D::Harmonic { stiffness: 1.0, center: 0.0 }.is_globally_confining(), Some(true));
        assert_eq!(Potential1D::QuarticDoubleWell { quartic: 1.0, quadratic: 1.0 }.is_globally_confining(), Some(true));
        let tilted = Potential1D::Harmonic { stiffness: 1.0, center: 0.0 }.plus(Potential1D::LinearTilt { slope: 3.0 });
        assert_eq!(tilted.is_globally_confining(), Some(true));
        assert_eq!(Potential1D::Polynomial { coefficients: vec![0.0, 0.0, 0.0, 1.0] }.is_globally_confining(), Some(false));
    }

    #[test]
    fn quartic_grid_minima() {
        let p = Potential1D::QuarticDoubleWell { quartic: 1.0, quadratic: 1.0 };
        let m = p.grid_minima(-2.0, 2.0, 2001).unwrap();
        assert_eq!(m.len(), 2);
        let r = 1.0 / 2f64.sqrt();
        assert!((m[0] + r).abs() < 1e-5 && (m[1] - r).abs() < 1e-5);
    }
}
