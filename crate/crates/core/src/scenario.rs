//! Synthetic measurement sessions built on the analytic trap model.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{solve_equilibrium, EquilibriumResult, InitialGuess, SolverConfig};
use crate::error::{Error, Result};
use crate::isolation::{DeltaScenario, IsolationConfig, MeasurementRecord};
use crate::potential::Potential1D;
use crate::reconstruction::{reconstruct, GridSpec, OffsetConvention, PotentialCurve, ReconstructionOptions};
use crate::trap::{
    axial_potential, strip_unit_derivative, strip_unit_potential, strip_unit_second_derivative, TrapGeometry,
    TrapPotential,
};
use crate::units::UnitSystem;

/// Voltages applied in the reference shuttling sequence before any change.
pub const REFERENCE_SHUTTLE_VOLTAGES: [f64; 5] = [40.5, 4.64, 30.8, 4.50, 40.5];

/// Raise segment 2 and lower segment 4 by the same amount, starting from
/// [`REFERENCE_SHUTTLE_VOLTAGES`] on the default geometry.
pub fn reference_shuttle(units: UnitSystem) -> Result<DeltaScenario> {
    DeltaScenario::opposed_pair(TrapGeometry::default(), REFERENCE_SHUTTLE_VOLTAGES.to_vec(), 1, 3, units)
}

/// Shape requested of a potential well at one station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellTarget {
    pub center_um: f64,
    /// Second derivative at the centre, eV/um^2.
    pub curvature_ev_per_um2: f64,
    /// Rise of the potential at `center_um +- wall_distance_um`, eV.
    pub wall_height_ev: f64,
    pub wall_distance_um: f64,
}

/// Smallest-norm voltages meeting the target: zero slope and the given
/// curvature at the centre, and the given wall height on both sides.
pub fn station_voltages(geometry: &TrapGeometry, target: &WellTarget) -> Result<Vec<f64>> {
    geometry.validate()?;
    let m = geometry.electrode_count();
    if m < 4 {
        return Err(Error::invalid("shaping a well needs at least four electrodes"));
    }
    let h = geometry.height_um;
    let c = target.center_um;
    let r = target.wall_distance_um;
    let mut a = DMatrix::<f64>::zeros(4, m);
    for (j, s) in geometry.strips.iter().enumerate() {
        a[(0, j)] = strip_unit_derivative(c, s, h);
        a[(1, j)] = strip_unit_second_derivative(c, s, h);
        a[(2, j)] = strip_unit_potential(c - r, s, h) - strip_unit_potential(c, s, h);
        a[(3, j)] = strip_unit_potential(c + r, s, h) - strip_unit_potential(c, s, h);
    }
    let b = DVector::from_column_slice(&[0.0, target.curvature_ev_per_um2, target.wall_height_ev, target.wall_height_ev]);
    let gram = &a * a.transpose();
    let y = gram
        .cholesky()
        .ok_or_else(|| Error::invalid("well constraints are not independent for this geometry"))?
        .solve(&b);
    Ok((a.transpose() * y).iter().copied().collect())
}

/// A string moved across several stations, each measured at several
/// perturbations of one electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StitchingScenario {
    pub geometry: TrapGeometry,
    pub electrode: usize,
    pub stations_um: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Smallest voltage difference accepted when pairing records, V.
    pub delta_min: f64,
    pub ions: usize,
    pub curvature_ev_per_um2: f64,
    pub wall_height_ev: f64,
    pub wall_distance_um: f64,
    pub grid_um: f64,
    pub units: UnitSystem,
}

impl Default for StitchingScenario {
    /// Twenty ions about 190 um long at nine stations 62.5 um apart across
    /// the default five-segment trap, the middle segment lowered by 0, 1
    /// and 2 mV. The walls follow the harmonic shape at 150 um.
    ///
    /// A 190 um string sits in a well only a fraction of a meV deep over
    /// its length, so perturbations of 10 mV would tilt it out of the
    /// trap; `delta_min` is lowered to match.
    fn default() -> Self {
        let units = UnitSystem::default();
        let curvature = 8.107_646_870_979_658e-5 * units.energy_unit_ev;
        let wall = 150.0;
        Self {
            geometry: TrapGeometry::default(),
            electrode: 2,
            stations_um: (-4..=4).map(|k| 62.5 * k as f64).collect(),
            deltas: vec![0.0, -0.001, -0.002],
            delta_min: 0.001,
            ions: 20,
            curvature_ev_per_um2: curvature,
            wall_height_ev: 0.5 * curvature * wall * wall,
            wall_distance_um: wall,
            grid_um: 1.0,
            units,
        }
    }
}

impl StitchingScenario {
    pub fn background(&self, station_um: f64) -> Result<Vec<f64>> {
        station_voltages(
            &self.geometry,
            &WellTarget {
                center_um: station_um,
                curvature_ev_per_um2: self.curvature_ev_per_um2,
                wall_height_ev: self.wall_height_ev,
                wall_distance_um: self.wall_distance_um,
            },
        )
    }

    pub fn isolation_config(&self) -> IsolationConfig {
        IsolationConfig { delta_min: self.delta_min, ..IsolationConfig::new(self.electrode) }
    }

    /// Unit-voltage potential of the perturbed electrode, internal energy
    /// per volt, at internal position `x`.
    pub fn truth(&self, x: f64) -> f64 {
        let strip = &self.geometry.strips[self.electrode];
        let ev = strip_unit_potential(self.units.internal_to_um(x), strip, self.geometry.height_um);
        self.units.ev_to_internal(ev)
    }

    fn check(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.electrode >= self.geometry.electrode_count() {
            return Err(Error::IndexOutOfRange { index: self.electrode, count: self.geometry.electrode_count() });
        }
        if self.ions < 2 {
            return Err(Error::invalid("strings need at least two ions"));
        }
        if self.stations_um.is_empty() || self.deltas.is_empty() {
            return Err(Error::invalid("scenario needs stations and deltas"));
        }
        Ok(())
    }

    /// Potential and solver settings for every (station, delta) string,
    /// stations outermost.
    pub fn setups(&self) -> Result<Vec<RecordSetup>> {
        self.check()?;
        let mut out = Vec::with_capacity(self.stations_um.len() * self.deltas.len());
        for &c in &self.stations_um {
            let background = self.background(c)?;
            for &delta in &self.deltas {
                let mut voltages = background.clone();
                voltages[self.electrode] += delta;
                let potential =
                    Potential1D::Trap(TrapPotential::new(self.geometry.clone(), voltages.clone(), self.units)?);
                let half = 0.5 * self.wall_distance_um;
                let guess: Vec<f64> = (0..self.ions)
                    .map(|i| {
                        let t = i as f64 / (self.ions - 1) as f64;
                        self.units.um_to_internal(c - half + 2.0 * half * t)
                    })
                    .collect();
                let span = self.wall_distance_um + half;
                let solver = SolverConfig {
                    initial_guess: InitialGuess::Positions(guess),
                    search_interval: Some((self.units.um_to_internal(c - span), self.units.um_to_internal(c + span))),
                    units: self.units,
                    ..SolverConfig::default()
                };
                out.push(RecordSetup { voltages, delta, potential, solver, ions: self.ions });
            }
        }
        Ok(out)
    }

    /// Forward-solves and reconstructs every (station, delta) string.
    pub fn records(&self) -> Result<Vec<MeasurementRecord>> {
        let options = ReconstructionOptions {
            grid: GridSpec::Spacing(self.units.um_to_internal(self.grid_um)),
            offset: OffsetConvention::MinZero,
        };
        self.setups()?
            .into_par_iter()
            .map(|job| {
                let eq = job.solve()?;
                let curve = reconstruct(&eq.string, &options)?;
                Ok(MeasurementRecord { voltages: job.voltages, delta: job.delta, curve })
            })
            .collect()
    }
}

/// Everything needed to forward-solve one measurement.
#[derive(Debug, Clone)]
pub struct RecordSetup {
    pub voltages: Vec<f64>,
    pub delta: f64,
    pub potential: Potential1D,
    pub solver: SolverConfig,
    pub ions: usize,
}

impl RecordSetup {
    pub fn solve(&self) -> Result<EquilibriumResult> {
        solve_equilibrium(&self.potential, self.ions, &self.solver)
    }
}

/// Records whose curves are the trap potential itself, sampled on a
/// lattice over `domain_um`. Differences of these are exact up to rounding.
pub fn sampled_records(
    geometry: &TrapGeometry,
    background: &[f64],
    electrode: usize,
    deltas: &[f64],
    domain_um: (f64, f64),
    grid_um: f64,
    units: UnitSystem,
) -> Result<Vec<MeasurementRecord>> {
    if electrode >= background.len() {
        return Err(Error::IndexOutOfRange { index: electrode, count: background.len() });
    }
    let domain = (units.um_to_internal(domain_um.0), units.um_to_internal(domain_um.1));
    deltas
        .iter()
        .map(|&delta| {
            let mut voltages = background.to_vec();
            voltages[electrode] += delta;
            // Fails here, once, on a voltage count mismatch.
            axial_potential(0.0, geometry, &voltages)?;
            let curve = PotentialCurve::from_fn(domain, GridSpec::Spacing(units.um_to_internal(grid_um)), |x| {
                let ev = axial_potential(units.internal_to_um(x), geometry, &voltages).unwrap_or(f64::NAN);
                units.ev_to_internal(ev)
            })?;
            Ok(MeasurementRecord { voltages, delta, curve })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trap::axial_derivative;

    #[test]
    fn station_voltages_meet_the_target() {
        let g = TrapGeometry::default();
        let t = WellTarget { center_um: 60.0, curvature_ev_per_um2: 1e-7, wall_height_ev: 0.004, wall_distance_um: 200.0 };
        let v = station_voltages(&g, &t).unwrap();
        assert!(axial_derivative(60.0, &g, &v).unwrap().abs() < 1e-15);
        let rise = axial_potential(260.0, &g, &v).unwrap() - axial_potential(60.0, &g, &v).unwrap();
        assert!((rise - 0.004).abs() < 1e-12);
        assert!(station_voltages(&TrapGeometry::uniform(3, 100.0, 100.0), &t).is_err());
    }

    #[test]
    fn default_scenario_strings_stay_near_their_stations() {
        let s = StitchingScenario { stations_um: vec![0.0], deltas: vec![0.0], ..Default::default() };
        let records = s.records().unwrap();
        let c = &records[0].curve;
        let (lo, hi) = (s.units.internal_to_um(c.domain.0), s.units.internal_to_um(c.domain.1));
        assert!(lo < -50.0 && hi > 50.0 && hi - lo < 250.0, "{lo} {hi}");
    }

    #[test]
    fn reference_shuttle_has_two_electrodes_moving() {
        match reference_shuttle(UnitSystem::default()).unwrap() {
            DeltaScenario::Trap { pattern, .. } => assert_eq!(pattern, vec![0.0, 1.0, 0.0, -1.0, 0.0]),
            other => panic!("{other:?}"),
        }
    }
}
