//! Potential maps over a voltage sweep and their well structure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{solve_equilibrium, SolverConfig};
use crate::error::{Error, Result};
use crate::potential::Potential1D;
use crate::reconstruction::{lattice_range, reconstruct, PotentialCurve, ReconstructionOptions};
use crate::trap::{TrapGeometry, TrapPotential};
use crate::units::UnitSystem;

/// A family of external potentials parameterised by one sweep variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeltaScenario {
    /// `stiffness / 2 * (x - center_per_delta * delta)^2`
    Harmonic { stiffness: f64, center_per_delta: f64 },
    /// `quartic * x^4 - delta * x^2`
    QuarticDoubleWell { quartic: f64 },
    /// Trap voltages `base + delta * pattern`.
    Trap { geometry: TrapGeometry, base: Vec<f64>, pattern: Vec<f64>, units: UnitSystem },
}

impl DeltaScenario {
    /// Raising electrode 2 and lowering electrode 4 by the same amount,
    /// starting from `base`.
    pub fn opposed_pair(geometry: TrapGeometry, base: Vec<f64>, raise: usize, lower: usize, units: UnitSystem) -> Result<Self> {
        let m = geometry.electrode_count();
        if base.len() != m {
            return Err(Error::invalid(format!("{} voltages for {m} electrodes", base.len())));
        }
        for e in [raise, lower] {
            if e >= m {
                return Err(Error::IndexOutOfRange { index: e, count: m });
            }
        }
        let mut pattern = vec![0.0; m];
        pattern[raise] += 1.0;
        pattern[lower] -= 1.0;
        Ok(DeltaScenario::Trap { geometry, base, pattern, units })
    }

    pub fn potential(&self, delta: f64) -> Result<Potential1D> {
        Ok(match self {
            DeltaScenario::Harmonic { stiffness, center_per_delta } => {
                Potential1D::Harmonic { stiffness: *stiffness, center: center_per_delta * delta }
            }
            DeltaScenario::QuarticDoubleWell { quartic } => {
                Potential1D::QuarticDoubleWell { quartic: *quartic, quadratic: delta }
            }
            DeltaScenario::Trap { geometry, base, pattern, units } => {
                if pattern.len() != base.len() {
                    return Err(Error::invalid("voltage pattern and base differ in length"));
                }
                let v = base.iter().zip(pattern).map(|(b, p)| b + delta * p).collect();
                Potential1D::Trap(TrapPotential::new(geometry.clone(), v, *units)?)
            }
        })
    }

    /// Interval spanned by the electrodes, in internal length units.
    pub fn natural_interval(&self) -> Option<(f64, f64)> {
        match self {
            DeltaScenario::Trap { geometry, units, .. } => {
                let lo = geometry.strips.first()?.start_um;
                let hi = geometry.strips.last()?.end_um;
                Some((units.um_to_internal(lo), units.um_to_internal(hi)))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShuttleConfig {
    pub ions: usize,
    pub solver: SolverConfig,
    pub reconstruction: ReconstructionOptions,
    /// A second minimum counts only if its barrier exceeds this multiple of
    /// the local reconstruction uncertainty.
    pub barrier_factor: f64,
    /// Uncertainty assumed where a curve carries none (internal energy).
    pub uncertainty_floor: f64,
}

impl Default for ShuttleConfig {
    fn default() -> Self {
        Self {
            ions: 20,
            solver: SolverConfig::default(),
            reconstruction: ReconstructionOptions::default(),
            barrier_factor: 3.0,
            uncertainty_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellMinimum {
    pub x: f64,
    pub value: f64,
    /// Lowest barrier towards a neighbouring minimum; `None` for a single well.
    pub barrier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ColumnStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuttleScanMap {
    pub deltas: Vec<f64>,
    /// Union lattice of all reconstructed curves.
    pub x: Vec<f64>,
    /// `values[d][i]` is the potential at `x[i]` for `deltas[d]`, absent
    /// outside that curve's domain.
    pub values: Vec<Vec<Option<f64>>>,
    pub minima: Vec<Vec<WellMinimum>>,
    pub status: Vec<ColumnStatus>,
}

impl ShuttleScanMap {
    pub fn well_counts(&self) -> Vec<usize> {
        self.minima.iter().map(Vec::len).collect()
    }

    pub fn failures(&self) -> usize {
        self.status.iter().filter(|s| matches!(s, ColumnStatus::Failed { .. })).count()
    }

    /// First sweep value, in scan order, with more than one well.
    pub fn onset(&self) -> Option<f64> {
        self.minima.iter().position(|m| m.len() >= 2).map(|i| self.deltas[i])
    }
}

/// Interior local minima that survive merging of shallow neighbours.
pub fn find_wells(curve: &PotentialCurve, barrier_factor: f64, uncertainty_floor: f64) -> Vec<WellMinimum> {
    let v = &curve.psi;
    let n = v.len();
    let sigma = |i: usize| -> f64 {
        curve.sigma.as_ref().map_or(0.0, |s| s[i]).max(uncertainty_floor)
    };
    let mut idx: Vec<usize> = (1..n.saturating_sub(1)).filter(|&i| v[i] < v[i - 1] && v[i] <= v[i + 1]).collect();

    // Highest sample strictly between two minima.
    let saddle = |a: usize, b: usize| -> usize {
        (a + 1..b).max_by(|&p, &q| v[p].total_cmp(&v[q])).unwrap_or(a)
    };

    loop {
        if idx.len() < 2 {
            break;
        }
        let mut weakest: Option<(f64, usize)> = None;
        for p in 0..idx.len() - 1 {
            let (a, b) = (idx[p], idx[p + 1]);
            let s = saddle(a, b);
            let (shallow, pos) = if v[a] >= v[b] { (a, p) } else { (b, p + 1) };
            let barrier = v[s] - v[shallow];
            let threshold = barrier_factor * sigma(shallow).max(sigma(s));
            let margin = barrier - threshold;
            if margin <= 0.0 && weakest.is_none_or(|(m, _)| barrier < m) {
                weakest = Some((barrier, pos));
            }
        }
        match weakest {
            Some((_, pos)) => {
                idx.remove(pos);
            }
            None => break,
        }
    }

    idx.iter()
        .enumerate()
        .map(|(p, &i)| {
            let step = curve.x[i + 1] - curve.x[i];
            let denom = v[i - 1] - 2.0 * v[i] + v[i + 1];
            let (dx, value) = if denom > 0.0 {
                let t = 0.5 * (v[i - 1] - v[i + 1]) / denom;
                (t * step, v[i] - 0.25 * (v[i - 1] - v[i + 1]) * t)
            } else {
                (0.0, v[i])
            };
            let mut barrier: Option<f64> = None;
            for q in [p.checked_sub(1), Some(p + 1)].into_iter().flatten() {
                if let Some(&j) = idx.get(q) {
                    let s = saddle(i.min(j), i.max(j));
                    let b = v[s] - v[i].max(v[j]);
                    barrier = Some(barrier.map_or(b, |c| c.min(b)));
                }
            }
            WellMinimum { x: curve.x[i] + dx, value, barrier }
        })
        .collect()
}

/// Builds a map from curves already reconstructed, one per sweep value.
/// Failed columns are carried through with their reason.
pub fn shuttle_map_from_curves(
    columns: Vec<(f64, std::result::Result<PotentialCurve, String>)>,
    config: &ShuttleConfig,
) -> Result<ShuttleScanMap> {
    if columns.is_empty() {
        return Err(Error::invalid("no sweep values"));
    }
    let spacing = columns
        .iter()
        .find_map(|(_, c)| c.as_ref().ok().map(|c| c.spacing))
        .flatten();
    let good = columns.iter().filter(|(_, c)| c.is_ok()).count();
    let (lo, hi) = match spacing {
        Some(h) => {
            let mut lo = i64::MAX;
            let mut hi = i64::MIN;
            for (_, c) in &columns {
                if let Ok(c) = c {
                    if c.spacing.is_none_or(|s| ((s - h) / h).abs() > 1e-12) {
                        return Err(Error::invalid("all curves in a map must share one lattice spacing"));
                    }
                    let (a, b) = lattice_range(c.x[0], c.x[c.len() - 1], h);
                    lo = lo.min(a);
                    hi = hi.max(b);
                }
            }
            (lo, hi)
        }
        None if good == 0 => (0, -1),
        None => return Err(Error::invalid("map curves must be sampled on a lattice grid")),
    };
    let h = spacing.unwrap_or(1.0);
    let x: Vec<f64> = (lo..=hi).map(|k| k as f64 * h).collect();

    let mut map = ShuttleScanMap { deltas: vec![], x, values: vec![], minima: vec![], status: vec![] };
    for (delta, column) in columns {
        map.deltas.push(delta);
        match column {
            Ok(curve) => {
                map.values.push(map.x.iter().map(|&x| curve.sample_at(x)).collect());
                map.minima.push(find_wells(&curve, config.barrier_factor, config.uncertainty_floor));
                map.status.push(ColumnStatus::Ok);
            }
            Err(reason) => {
                map.values.push(vec![None; map.x.len()]);
                map.minima.push(vec![]);
                map.status.push(ColumnStatus::Failed { reason });
            }
        }
    }
    Ok(map)
}

/// Forward-solves and reconstructs the string at every sweep value.
/// Columns that fail to converge are recorded and the scan continues.
pub fn shuttle_scan(scenario: &DeltaScenario, deltas: &[f64], config: &ShuttleConfig) -> Result<ShuttleScanMap> {
    config.solver.validate()?;
    if config.ions < 2 {
        return Err(Error::invalid("a shuttle scan needs at least two ions per string"));
    }
    if config.reconstruction.grid.lattice_spacing().is_none() {
        return Err(Error::invalid("shuttle scans need a lattice grid spacing"));
    }
    let mut solver = config.solver.clone();
    if solver.search_interval.is_none() {
        solver.search_interval = scenario.natural_interval();
    }
    let columns: Vec<(f64, std::result::Result<PotentialCurve, String>)> = deltas
        .par_iter()
        .map(|&delta| {
            let column = scenario
                .potential(delta)
                .and_then(|p| solve_equilibrium(&p, config.ions, &solver))
                .and_then(|eq| reconstruct(&eq.string, &config.reconstruction))
                .map_err(|e| e.to_string());
            (delta, column)
        })
        .collect();
    shuttle_map_from_curves(columns, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::GridSpec;

    fn column(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> PotentialCurve {
        PotentialCurve::from_fn((lo, hi), GridSpec::Spacing(0.01), f).unwrap()
    }

    #[test]
    fn single_and_double_wells() {
        let one = find_wells(&column(|x| x * x, -1.0, 1.0), 3.0, 1e-9);
        assert_eq!(one.len(), 1);
        assert!(one[0].x.abs() < 1e-12);
        assert_eq!(one[0].barrier, None);
        let two = find_wells(&column(|x| x.powi(4) - x * x, -1.5, 1.5), 3.0, 1e-9);
        assert_eq!(two.len(), 2);
        assert!((two[0].x + 0.5f64.sqrt()).abs() < 1e-4);
        assert!((two[1].barrier.unwrap() - 0.25).abs() < 1e-3);
    }

    #[test]
    fn shallow_second_well_is_suppressed() {
        // Barrier of 1e-4 against an uncertainty of 1e-4.
        let c = column(|x| x.powi(4) - 0.02 * x * x, -1.0, 1.0);
        assert_eq!(find_wells(&c, 3.0, 1e-9).len(), 2);
        assert_eq!(find_wells(&c, 3.0, 1e-4).len(), 1);
    }

    #[test]
    fn harmonic_minima_trace_a_line() {
        let scenario = DeltaScenario::Harmonic { stiffness: 1.0, center_per_delta: 2.0 };
        let deltas = [-0.5, 0.0, 0.5, 1.0];
        let config = ShuttleConfig {
            ions: 5,
            reconstruction: ReconstructionOptions { grid: GridSpec::Spacing(0.01), ..Default::default() },
            ..Default::default()
        };
        let map = shuttle_scan(&scenario, &deltas, &config).unwrap();
        assert_eq!(map.well_counts(), vec![1; 4]);
        for (d, m) in deltas.iter().zip(&map.minima) {
            assert!((m[0].x - 2.0 * d).abs() < 1e-3, "{d}: {}", m[0].x);
        }
        assert!(map.values.iter().all(|row| row.len() == map.x.len()));
    }

    #[test]
    fn failed_columns_are_recorded() {
        let good = column(|x| x * x, -1.0, 1.0);
        let map = shuttle_map_from_curves(
            vec![(0.0, Ok(good)), (1.0, Err("no convergence".into()))],
            &ShuttleConfig::default(),
        )
        .unwrap();
        assert_eq!(map.failures(), 1);
        assert_eq!(map.well_counts(), vec![1, 0]);
        assert!(map.values[1].iter().all(Option::is_none));
    }
}
