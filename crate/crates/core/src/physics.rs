//! Coulomb forces and the energy functional of a 1D ion string.
//!
//! Everything here is in internal units (Coulomb constant one). The energy
//! of `N` ions at `x` in an external potential `psi` is
//!
//! ```text
//! U(x) = sum_i psi(x_i) + sum_{i<j} 1 / (x_j - x_i)
//! ```
//!
//! and its gradient vanishes exactly when the external force on every ion
//! cancels the Coulomb force from all the others.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Potential1D;
use crate::units::UnitSystem;

/// Ions closer than this (internal length units) are treated as coincident.
pub const MIN_SEPARATION: f64 = 1e-9;

/// Ordered equilibrium positions of singly charged ions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonString {
    positions: Vec<f64>,
    /// Per-ion position uncertainty (1 sigma, internal units), if known.
    uncertainties: Option<Vec<f64>>,
    units: UnitSystem,
}

impl IonString {
    pub fn new(positions: Vec<f64>, units: UnitSystem) -> Result<Self> {
        check_ordered(&positions)?;
        Ok(Self { positions, uncertainties: None, units })
    }

    /// Internal-unit string with the default unit system.
    pub fn internal(positions: Vec<f64>) -> Result<Self> {
        Self::new(positions, UnitSystem::default())
    }

    pub fn with_uncertainties(mut self, sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() != self.positions.len() {
            return Err(Error::invalid(format!(
                "{} uncertainties for {} ions",
                sigmas.len(),
                self.positions.len()
            )));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("uncertainties must be finite and non-negative"));
        }
        self.uncertainties = Some(sigmas);
        Ok(self)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn uncertainties(&self) -> Option<&[f64]> {
        self.uncertainties.as_deref()
    }

    pub fn units(&self) -> &UnitSystem {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.positions[0]
    }

    pub fn last(&self) -> f64 {
        self.positions[self.positions.len() - 1]
    }

    pub fn extent(&self) -> f64 {
        self.last() - self.first()
    }

    pub fn positions_um(&self) -> Vec<f64> {
        self.positions.iter().map(|&x| self.units.internal_to_um(x)).collect()
    }
}

/// External force at one ion, paired with the ion's position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSample {
    pub position: f64,
    pub force: f64,
    pub ion: usize,
}

pub(crate) fn check_ordered(positions: &[f64]) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::invalid("an ion string needs at least one ion"));
    }
    if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("ion position {i}")));
    }
    for (i, w) in positions.windows(2).enumerate() {
        if !(w[1] - w[0] >= MIN_SEPARATION) {
            return Err(Error::Unordered { index: i + 1, min_gap: MIN_SEPARATION });
        }
    }
    Ok(())
}

/// Coulomb force on ion `i` from all other ions, positive toward +x.
pub fn coulomb_force(string: &IonString, i: usize) -> Result<f64> {
    if string.is_empty() {
        return Err(Error::invalid("empty ion string"));
    }
    if i >= string.len() {
        return Err(Error::IndexOutOfRange { index: i, count: string.len() });
    }
    Ok(coulomb_force_unchecked(string.positions(), i))
}

/// Coulomb forces on all ions. Caller guarantees ordering.
pub(crate) fn coulomb_forces(positions: &[f64]) -> Vec<f64> {
    (0..positions.len()).map(|i| coulomb_force_unchecked(positions, i)).collect()
}

fn coulomb_force_unchecked(positions: &[f64], i: usize) -> f64 {
    let xi = positions[i];
    let mut left = 0.0;
    let mut right = 0.0;
    // Ions to the left push toward +x, ions to the right toward -x.
    for &xj in &positions[..i] {
        let d = xi - xj;
        left += 1.0 / (d * d);
    }
    for &xj in &positions[i + 1..] {
        let d = xj - xi;
        right += 1.0 / (d * d);
    }
    left - right
}

fn check_domain(positions: &[f64], potential: &Potential1D) -> Result<()> {
    let (lo, hi) = potential.domain();
    for &x in positions {
        if x < lo || x > hi {
            return Err(Error::OutsideDomain { x, lo, hi });
        }
    }
    Ok(())
}

pub fn total_energy(positions: &[f64], potential: &Potential1D) -> Result<f64> {
    check_ordered(positions)?;
    check_domain(positions, potential)?;
    let mut external = 0.0;
    for &x in positions {
        external += potential.value(x)?;
    }
    Ok(external + coulomb_energy(positions))
}

/// Energy with additive constants of the potential dropped; only
/// differences of this quantity are meaningful.
pub(crate) fn relative_energy(positions: &[f64], potential: &Potential1D) -> Result<f64> {
    let mut external = 0.0;
    for &x in positions {
        external += potential.relative_value(x)?;
    }
    Ok(external + coulomb_energy(positions))
}

pub(crate) fn coulomb_energy(positions: &[f64]) -> f64 {
    let mut e = 0.0;
    for (i, &xi) in positions.iter().enumerate() {
        for &xj in &positions[i + 1..] {
            e += 1.0 / (xj - xi);
        }
    }
    e
}

pub fn energy_gradient(positions: &[f64], potential: &Potential1D) -> Result<Vec<f64>> {
    check_ordered(positions)?;
    check_domain(positions, potential)?;
    gradient_unchecked(positions, potential)
}

pub(crate) fn gradient_unchecked(positions: &[f64], potential: &Potential1D) -> Result<Vec<f64>> {
    positions
        .iter()
        .enumerate()
        .map(|(i, &x)| Ok(potential.derivative(x)? - coulomb_force_unchecked(positions, i)))
        .collect()
}

pub fn energy_hessian(positions: &[f64], potential: &Potential1D) -> Result<DMatrix<f64>> {
    check_ordered(positions)?;
    check_domain(positions, potential)?;
    hessian_unchecked(positions, potential)
}

pub(crate) fn hessian_unchecked(positions: &[f64], potential: &Potential1D) -> Result<DMatrix<f64>> {
    let n = positions.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = positions[j] - positions[i];
            let c = 2.0 / (d * d * d);
            h[(i, j)] = -c;
            h[(j, i)] = -c;
            h[(i, i)] += c;
            h[(j, j)] += c;
        }
        h[(i, i)] += potential.second_derivative(positions[i])?;
    }
    Ok(h)
}
