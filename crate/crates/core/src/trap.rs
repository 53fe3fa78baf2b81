//! Analytic axial potentials of a segmented surface trap.
//!
//! Each DC segment is modelled as an infinitely long strip in an otherwise
//! grounded, gapless plane. A strip from `x1` to `x2` held at 1 V produces
//! on a line at height `h` above the surface
//!
//! ```text
//! u(x) = (atan((x2 - x) / h) - atan((x1 - x) / h)) / pi
//! ```
//!
//! and the potentials of several strips superpose linearly. Lengths here
//! are micrometers and voltages volts; [`TrapPotential`] adapts the model to
//! internal units for the solver.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Potential1D;
use crate::units::UnitSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub start_um: f64,
    pub end_um: f64,
}

impl Strip {
    pub fn new(start_um: f64, end_um: f64) -> Self {
        Self { start_um, end_um }
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start_um + self.end_um)
    }

    pub fn width(&self) -> f64 {
        self.end_um - self.start_um
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapGeometry {
    pub strips: Vec<Strip>,
    pub height_um: f64,
}

impl Default for TrapGeometry {
    /// Five abutting 100 um segments centred on the origin, ions 100 um
    /// above the surface.
    fn default() -> Self {
        Self::uniform(5, 100.0, 100.0)
    }
}

impl TrapGeometry {
    /// `count` abutting segments of equal width, centred on the origin.
    pub fn uniform(count: usize, width_um: f64, height_um: f64) -> Self {
        let start = -0.5 * count as f64 * width_um;
        let strips = (0..count)
            .map(|m| Strip::new(start + m as f64 * width_um, start + (m + 1) as f64 * width_um))
            .collect();
        Self { strips, height_um }
    }

    pub fn electrode_count(&self) -> usize {
        self.strips.len()
    }

    pub fn middle_electrode(&self) -> usize {
        self.strips.len() / 2
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.height_um > 0.0 && self.height_um.is_finite()) {
            return Err(Error::invalid(format!("ion height must be positive, got {}", self.height_um)));
        }
        if self.strips.is_empty() {
            return Err(Error::invalid("trap geometry has no electrodes"));
        }
        for (m, s) in self.strips.iter().enumerate() {
            if !(s.end_um > s.start_um) || !s.start_um.is_finite() || !s.end_um.is_finite() {
                return Err(Error::invalid(format!("electrode {m} has an empty or invalid extent")));
            }
        }
        for (m, w) in self.strips.windows(2).enumerate() {
            if w[1].start_um < w[0].end_um {
                return Err(Error::invalid(format!("electrodes {m} and {} overlap or are out of order", m + 1)));
            }
        }
        Ok(())
    }
}

/// Allowed DC range of the reference trap.
pub const VOLTAGE_RANGE_V: (f64, f64) = (-20.0, 60.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoltageVector(pub Vec<f64>);

impl VoltageVector {
    pub fn new(volts: Vec<f64>) -> Result<Self> {
        Self::with_range(volts, VOLTAGE_RANGE_V)
    }

    pub fn with_range(volts: Vec<f64>, (lo, hi): (f64, f64)) -> Result<Self> {
        for (m, &v) in volts.iter().enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::invalid(format!("electrode {m}: {v} V outside [{lo}, {hi}] V")));
            }
        }
        Ok(Self(volts))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Copy with `delta` added to one electrode.
    pub fn perturbed(&self, electrode: usize, delta: f64) -> Self {
        let mut v = self.0.clone();
        v[electrode] += delta;
        Self(v)
    }
}

/// Potential of a single strip held at 1 V, dimensionless.
pub fn strip_unit_potential(x_um: f64, strip: &Strip, height_um: f64) -> f64 {
    let h = height_um;
    (((strip.end_um - x_um) / h).atan() - ((strip.start_um - x_um) / h).atan()) / PI
}

/// d/dx of [`strip_unit_potential`], per micrometer.
pub fn strip_unit_derivative(x_um: f64, strip: &Strip, height_um: f64) -> f64 {
    let h = height_um;
    let a = (strip.end_um - x_um) / h;
    let b = (strip.start_um - x_um) / h;
    (1.0 / (1.0 + b * b) - 1.0 / (1.0 + a * a)) / (PI * h)
}

/// d2/dx2 of [`strip_unit_potential`], per micrometer squared.
pub fn strip_unit_second_derivative(x_um: f64, strip: &Strip, height_um: f64) -> f64 {
    let h = height_um;
    let a = (strip.end_um - x_um) / h;
    let b = (strip.start_um - x_um) / h;
    let fa = 1.0 + a * a;
    let fb = 1.0 + b * b;
    (2.0 * b / (fb * fb) - 2.0 * a / (fa * fa)) / (PI * h * h)
}

fn check_lengths(geometry: &TrapGeometry, voltages: &[f64]) -> Result<()> {
    if geometry.strips.len() != voltages.len() {
        return Err(Error::invalid(format!(
            "{} voltages for {} electrodes",
            voltages.len(),
            geometry.strips.len()
        )));
    }
    Ok(())
}

/// Potential energy in eV of a singly charged ion at `x_um`.
pub fn axial_potential(x_um: f64, geometry: &TrapGeometry, voltages: &[f64]) -> Result<f64> {
    check_lengths(geometry, voltages)?;
    Ok(superpose(x_um, geometry, voltages, strip_unit_potential))
}

pub fn axial_derivative(x_um: f64, geometry: &TrapGeometry, voltages: &[f64]) -> Result<f64> {
    check_lengths(geometry, voltages)?;
    Ok(superpose(x_um, geometry, voltages, strip_unit_derivative))
}

pub fn axial_second_derivative(x_um: f64, geometry: &TrapGeometry, voltages: &[f64]) -> Result<f64> {
    check_lengths(geometry, voltages)?;
    Ok(superpose(x_um, geometry, voltages, strip_unit_second_derivative))
}

fn superpose(x_um: f64, geometry: &TrapGeometry, voltages: &[f64], f: fn(f64, &Strip, f64) -> f64) -> f64 {
    geometry
        .strips
        .iter()
        .zip(voltages)
        .map(|(s, v)| v * f(x_um, s, geometry.height_um))
        .sum()
}

/// Trap potential expressed in internal units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapPotential {
    geometry: TrapGeometry,
    voltages: Vec<f64>,
    units: UnitSystem,
}

impl TrapPotential {
    pub fn new(geometry: TrapGeometry, voltages: Vec<f64>, units: UnitSystem) -> Result<Self> {
        geometry.validate()?;
        check_lengths(&geometry, &voltages)?;
        if voltages.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("electrode voltage".into()));
        }
        Ok(Self { geometry, voltages, units })
    }

    pub fn geometry(&self) -> &TrapGeometry {
        &self.geometry
    }

    pub fn voltages(&self) -> &[f64] {
        &self.voltages
    }

    fn um_per_internal(&self) -> f64 {
        self.units.internal_to_um(1.0)
    }

    pub(crate) fn value(&self, x: f64) -> f64 {
        let ev = superpose(self.units.internal_to_um(x), &self.geometry, &self.voltages, strip_unit_potential);
        self.units.ev_to_internal(ev)
    }

    pub(crate) fn derivative(&self, x: f64) -> f64 {
        let ev = superpose(self.units.internal_to_um(x), &self.geometry, &self.voltages, strip_unit_derivative);
        self.units.ev_to_internal(ev) * self.um_per_internal()
    }

    pub(crate) fn second_derivative(&self, x: f64) -> f64 {
        let ev = superpose(
            self.units.internal_to_um(x),
            &self.geometry,
            &self.voltages,
            strip_unit_second_derivative,
        );
        let s = self.um_per_internal();
        self.units.ev_to_internal(ev) * s * s
    }
}

/// Standard analytic test potentials (internal units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TestFamily {
    Harmonic { stiffness: f64 },
    QuarticDoubleWell { a: f64, b: f64 },
    LinearTilt { slope: f64 },
}

/// Builds a confining test potential; non-confining parameters are rejected.
pub fn test_potential(family: TestFamily) -> Result<Potential1D> {
    let p = match family {
        TestFamily::Harmonic { stiffness } => Potential1D::Harmonic { stiffness, center: 0.0 },
        TestFamily::QuarticDoubleWell { a, b } => Potential1D::QuarticDoubleWell { quartic: a, quadratic: b },
        TestFamily::LinearTilt { slope } => Potential1D::LinearTilt { slope },
    };
    match p.is_globally_confining() {
        Some(true) => Ok(p),
        _ => Err(Error::NotConfining(format!("{family:?} does not confine ions"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_midpoint_value() {
        let h = 50.0;
        let s = Strip::new(-h, h);
        let u = strip_unit_potential(0.0, &s, h);
        assert!((u - 0.5).abs() < 1e-15);
    }

    #[test]
    fn strip_vanishes_far_away_and_is_symmetric() {
        let s = Strip::new(100.0, 300.0);
        assert!(strip_unit_potential(1e9, &s, 80.0).abs() < 1e-9);
        assert!(strip_unit_potential(-1e9, &s, 80.0).abs() < 1e-9);
        for &a in &[0.0, 17.0, 150.0, 900.0] {
            let l = strip_unit_potential(200.0 - a, &s, 80.0);
            let r = strip_unit_potential(200.0 + a, &s, 80.0);
            assert!((l - r).abs() < 1e-15);
        }
        // Deep inside a wide strip close to the surface.
        assert!(strip_unit_potential(200.0, &s, 1e-3) > 1.0 - 1e-5);
    }

    #[test]
    fn unit_potentials_sum_to_at_most_one() {
        let g = TrapGeometry::default();
        for i in -60..=60 {
            let x = i as f64 * 10.0;
            let total: f64 = g.strips.iter().map(|s| strip_unit_potential(x, s, g.height_um)).sum();
            assert!(total > 0.0 && total <= 1.0);
        }
        let tiled = TrapGeometry::uniform(41, 100.0, 1.0);
        let total: f64 = tiled.strips.iter().map(|s| strip_unit_potential(30.0, s, 1.0)).sum();
        assert!(total > 0.99);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let g = TrapGeometry::default();
        let v = [40.5, 4.64, 30.8, 4.50, 40.5];
        for i in -30..=30 {
            let x = i as f64 * 13.7;
            let h = 1e-3;
            let fd = (axial_potential(x + h, &g, &v).unwrap() - axial_potential(x - h, &g, &v).unwrap()) / (2.0 * h);
            let d = axial_derivative(x, &g, &v).unwrap();
            assert!((d - fd).abs() <= 1e-8 * d.abs().max(1e-3), "{x}: {d} vs {fd}");
            let fd2 =
                (axial_derivative(x + h, &g, &v).unwrap() - axial_derivative(x - h, &g, &v).unwrap()) / (2.0 * h);
            let d2 = axial_second_derivative(x, &g, &v).unwrap();
            assert!((d2 - fd2).abs() <= 1e-8 * d2.abs().max(1e-5), "{x}: {d2} vs {fd2}");
        }
    }

    #[test]
    fn superposition_is_linear() {
        let g = TrapGeometry::default();
        let v = [1.0, -2.0, 3.5, 0.25, 7.0];
        let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        for i in -20..=20 {
            let x = i as f64 * 25.0;
            assert_eq!(axial_potential(x, &g, &[0.0; 5]).unwrap(), 0.0);
            let a = axial_potential(x, &g, &v).unwrap();
            let b = axial_potential(x, &g, &v2).unwrap();
            assert!((b - 2.0 * a).abs() < 1e-13);
        }
    }

    #[test]
    fn differencing_one_electrode_recovers_its_unit_potential() {
        let g = TrapGeometry::default();
        let v = VoltageVector::new(vec![40.5, 4.64, 30.8, 4.50, 40.5]).unwrap();
        let delta = 0.25;
        let w = v.perturbed(2, delta);
        for i in -40..=40 {
            let x = i as f64 * 12.5;
            let d = (axial_potential(x, &g, w.as_slice()).unwrap() - axial_potential(x, &g, v.as_slice()).unwrap())
                / delta;
            let u = strip_unit_potential(x, &g.strips[2], g.height_um);
            assert!((d - u).abs() < 1e-12, "{x}: {d} vs {u}");
        }
    }

    #[test]
    fn reference_voltages_form_a_central_well() {
        // Outer electrodes high, segments 2 and 4 low: the region between
        // the centres of segments 2 and 4 is bounded by higher potential on
        // both sides. In this gapless model the raised middle segment splits
        // it into two wells above segments 2 and 4.
        let g = TrapGeometry::default();
        let v = [40.5, 4.64, 30.8, 4.50, 40.5];
        let p = Potential1D::Trap(TrapPotential::new(g.clone(), v.to_vec(), UnitSystem::default()).unwrap());
        let minima = p.grid_minima(-250.0, 250.0, 5001).unwrap();
        assert_eq!(minima.len(), 2);
        for m in &minima {
            assert!(m.abs() > 50.0 && m.abs() < 150.0);
        }
        // Both wells are walled in by the outer segments.
        for (m, wall) in minima.iter().zip([-175.0, 175.0]) {
            let depth = axial_potential(wall, &g, &v).unwrap() - axial_potential(*m, &g, &v).unwrap();
            assert!(depth > 0.5, "{depth}");
        }
    }

    #[test]
    fn test_families() {
        let h = test_potential(TestFamily::Harmonic { stiffness: 1.0 }).unwrap();
        assert_eq!(h.value(2.0).unwrap(), 2.0);
        let q = test_potential(TestFamily::QuarticDoubleWell { a: 1.0, b: 1.0 }).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!(q.derivative(r).unwrap().abs() < 1e-15);
        assert!((q.value(r).unwrap() + 0.25).abs() < 1e-15);
        assert!(matches!(
            test_potential(TestFamily::LinearTilt { slope: 1.0 }),
            Err(Error::NotConfining(_))
        ));
    }

    #[test]
    fn geometry_and_voltage_validation() {
        let mut g = TrapGeometry::default();
        assert!(g.validate().is_ok());
        g.height_um = 0.0;
        assert!(g.validate().is_err());
        let overlapping = TrapGeometry { strips: vec![Strip::new(0.0, 10.0), Strip::new(5.0, 20.0)], height_um: 1.0 };
        assert!(overlapping.validate().is_err());
        assert!(VoltageVector::new(vec![61.0]).is_err());
        assert!(VoltageVector::new(vec![-20.0, 60.0]).is_ok());
        assert!(axial_potential(0.0, &TrapGeometry::default(), &[1.0; 4]).is_err());
    }
}
