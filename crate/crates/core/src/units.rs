//! Unit system and boundary conversions.
//!
//! Internally every length is measured in `length_unit_m` meters and every
//! energy in `energy_unit_ev` electron volts, with the energy unit chosen so
//! that the Coulomb constant is exactly one. Potentials are potential-energy
//! curves for a singly charged ion, so one volt on an electrode maps to one
//! electron volt per unit of that electrode's unit potential.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ELEMENTARY_CHARGE_C: f64 = 1.602_176_634e-19;
pub const VACUUM_PERMITTIVITY_F_PER_M: f64 = 8.854_187_8128e-12;

/// e^2 / (4 pi eps0) expressed in eV m.
pub const COULOMB_CONSTANT_EV_M: f64 =
    ELEMENTARY_CHARGE_C / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY_F_PER_M);

/// Camera resolution of the reference imaging setup.
pub const DEFAULT_PIXEL_PITCH_UM: f64 = 2.0;

/// Documentation-only constants of the reference RF trap. Nothing in the
/// crate depends on them; the axial analysis ignores radial dynamics.
pub mod reference_trap {
    pub const RF_AMPLITUDE_V: f64 = 300.0;
    pub const RF_FREQUENCY_HZ: f64 = 10.125e6;
    pub const RADIAL_FREQUENCIES_HZ: (f64, f64) = (250e3, 800e3);
    pub const DC_VOLTAGE_RANGE_V: (f64, f64) = (-20.0, 60.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    /// Coulomb constant in internal units; one by construction.
    pub coulomb_constant: f64,
    /// Meters per internal length unit.
    pub length_unit_m: f64,
    /// Electron volts per internal energy unit.
    pub energy_unit_ev: f64,
    /// Camera pixel pitch in meters.
    pub pixel_pitch_m: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::with_length_unit(1e-6).expect("1 um is a valid length unit")
    }
}

impl UnitSystem {
    /// Internal units with the given length unit; the energy unit follows
    /// from requiring a unit Coulomb constant.
    pub fn with_length_unit(length_unit_m: f64) -> Result<Self> {
        if !(length_unit_m > 0.0 && length_unit_m.is_finite()) {
            return Err(Error::invalid(format!("length unit must be positive, got {length_unit_m}")));
        }
        Ok(Self {
            coulomb_constant: 1.0,
            length_unit_m,
            energy_unit_ev: COULOMB_CONSTANT_EV_M / length_unit_m,
            pixel_pitch_m: DEFAULT_PIXEL_PITCH_UM * 1e-6,
        })
    }

    pub fn with_pixel_pitch_um(mut self, pitch_um: f64) -> Result<Self> {
        if !(pitch_um > 0.0 && pitch_um.is_finite()) {
            return Err(Error::invalid(format!("pixel pitch must be positive, got {pitch_um}")));
        }
        self.pixel_pitch_m = pitch_um * 1e-6;
        Ok(self)
    }

    /// Physical Coulomb constant implied by this unit system, in eV m.
    pub fn physical_coulomb_constant(&self) -> f64 {
        self.coulomb_constant * self.energy_unit_ev * self.length_unit_m
    }

    pub fn um_to_internal(&self, um: f64) -> f64 {
        um * 1e-6 / self.length_unit_m
    }

    pub fn internal_to_um(&self, x: f64) -> f64 {
        x * self.length_unit_m / 1e-6
    }

    pub fn ev_to_internal(&self, ev: f64) -> f64 {
        ev / self.energy_unit_ev
    }

    pub fn internal_to_ev(&self, e: f64) -> f64 {
        e * self.energy_unit_ev
    }

    pub fn mev_to_internal(&self, mev: f64) -> f64 {
        self.ev_to_internal(mev * 1e-3)
    }

    pub fn internal_to_mev(&self, e: f64) -> f64 {
        self.internal_to_ev(e) * 1e3
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.coulomb_constant) && ok(self.length_unit_m) && ok(self.energy_unit_ev) && ok(self.pixel_pitch_m)) {
            return Err(Error::invalid("unit system constants must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Meter,
    Micrometer,
    Pixel,
    InternalLength,
    ElectronVolt,
    MilliElectronVolt,
    InternalEnergy,
}

impl Unit {
    pub fn dimension(self) -> Dimension {
        match self {
            Unit::Meter | Unit::Micrometer | Unit::Pixel | Unit::InternalLength => Dimension::Length,
            Unit::ElectronVolt | Unit::MilliElectronVolt | Unit::InternalEnergy => Dimension::Energy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unit::Meter => "m",
            Unit::Micrometer => "um",
            Unit::Pixel => "px",
            Unit::InternalLength => "internal length",
            Unit::ElectronVolt => "eV",
            Unit::MilliElectronVolt => "meV",
            Unit::InternalEnergy => "internal energy",
        }
    }

    /// Size of one of this unit in meters (lengths) or eV (energies).
    fn scale(self, units: &UnitSystem) -> f64 {
        match self {
            Unit::Meter => 1.0,
            Unit::Micrometer => 1e-6,
            Unit::Pixel => units.pixel_pitch_m,
            Unit::InternalLength => units.length_unit_m,
            Unit::ElectronVolt => 1.0,
            Unit::MilliElectronVolt => 1e-3,
            Unit::InternalEnergy => units.energy_unit_ev,
        }
    }
}

pub fn convert(value: f64, from: Unit, to: Unit, units: &UnitSystem) -> Result<f64> {
    if from.dimension() != to.dimension() {
        return Err(Error::DimensionMismatch { from: from.name(), to: to.name() });
    }
    if from == to {
        return Ok(value);
    }
    Ok(value * (from.scale(units) / to.scale(units)))
}
