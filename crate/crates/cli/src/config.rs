//! Scenario files: what to simulate, image or sweep.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ionprobe::imaging::RenderConfig;
use ionprobe::io::SCHEMA_VERSION;
use ionprobe::isolation::{DeltaScenario, ShuttleConfig};
use ionprobe::scenario::{reference_shuttle, RecordSetup, StitchingScenario};
use ionprobe::trap::{test_potential, TestFamily, TrapGeometry, TrapPotential};
use ionprobe::{Potential1D, SolverConfig, UnitSystem};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_DIR_ENV: &str = "IONPROBE_CONFIG_DIR";

/// Scenario read from the config directory when none is named.
pub const DEFAULT_SCENARIO: &str = "scenario.json";

/// A problem with the scenario or the command line rather than the data.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Hex SHA-256 over the concatenated parts.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub units: UnitSystem,
    #[serde(default = "default_ions")]
    pub ions: usize,
    /// Analytic potential in internal units; one record.
    #[serde(default)]
    pub potential: Option<TestFamily>,
    #[serde(default)]
    pub trap: Option<TrapSchedule>,
    /// A string repositioned across stations, each with several deltas.
    #[serde(default)]
    pub stitching: Option<StitchingScenario>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub imaging: Option<RenderConfig>,
    #[serde(default)]
    pub shuttle: Option<ShuttleSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_ions() -> usize {
    20
}

/// Trap voltages: `baseline + delta * pattern` for each delta, and/or
/// explicit voltage vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSchedule {
    #[serde(default)]
    pub geometry: TrapGeometry,
    #[serde(default)]
    pub baseline: Vec<f64>,
    /// Electrode that receives the deltas; ignored when `pattern` is set.
    #[serde(default)]
    pub electrode: Option<usize>,
    #[serde(default)]
    pub pattern: Option<Vec<f64>>,
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub records: Vec<Vec<f64>>,
    /// Interval the string must settle in, um. Defaults to the electrode span.
    #[serde(default)]
    pub search_um: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuttleSpec {
    /// Sweep family; omitted means the reference opposed-pair shuttle on
    /// the default trap.
    #[serde(default)]
    pub scenario: Option<DeltaScenario>,
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub config: ShuttleConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Sweep {
    pub fn values(&self) -> anyhow::Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) {
            bail!("sweep needs step > 0 and stop >= start");
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

impl ShuttleSpec {
    pub fn scenario(&self, units: UnitSystem) -> anyhow::Result<DeltaScenario> {
        match &self.scenario {
            Some(s) => Ok(s.clone()),
            None => Ok(reference_shuttle(units)?),
        }
    }

    pub fn deltas(&self) -> anyhow::Result<Vec<f64>> {
        let mut d = self.deltas.clone();
        if let Some(s) = &self.sweep {
            d.extend(s.values()?);
        }
        if d.is_empty() {
            bail!("shuttle needs 'deltas' or 'sweep'");
        }
        Ok(d)
    }
}

/// One simulated record: its voltages (empty for analytic potentials),
/// delta and solver inputs.
pub type Job = RecordSetup;

impl ScenarioConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: ScenarioConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version);
        }
        self.units.validate()?;
        if self.ions == 0 {
            bail!("ions must be at least 1");
        }
        self.solver.validate()?;
        Ok(())
    }

    /// SHA-256 of the configuration as parsed, plus any extra settings.
    pub fn hash_with(&self, extra: &impl Serialize) -> String {
        digest(&[
            &serde_json::to_vec(self).expect("config serializes"),
            &serde_json::to_vec(extra).expect("settings serialize"),
        ])
    }

    /// Every record to forward-solve, in file order.
    pub fn jobs(&self) -> anyhow::Result<Vec<Job>> {
        let mut jobs = Vec::new();
        if let Some(family) = self.potential {
            jobs.push(RecordSetup {
                voltages: vec![],
                delta: 0.0,
                potential: test_potential(family)?,
                solver: SolverConfig { units: self.units, ..self.solver.clone() },
                ions: self.ions,
            });
        }
        if let Some(t) = &self.trap {
            jobs.extend(self.trap_jobs(t)?);
        }
        if let Some(s) = &self.stitching {
            jobs.extend(s.setups()?);
        }
        if jobs.is_empty() {
            bail!("scenario defines no records: give 'potential', 'trap' or 'stitching'");
        }
        Ok(jobs)
    }

    fn trap_jobs(&self, t: &TrapSchedule) -> anyhow::Result<Vec<Job>> {
        t.geometry.validate()?;
        let m = t.geometry.electrode_count();
        let (lo, hi) = t.search_um.unwrap_or_else(|| {
            (t.geometry.strips.first().map_or(0.0, |s| s.start_um), t.geometry.strips.last().map_or(0.0, |s| s.end_um))
        });
        let solver = SolverConfig {
            search_interval: Some((self.units.um_to_internal(lo), self.units.um_to_internal(hi))),
            units: self.units,
            ..self.solver.clone()
        };
        let mut schedule: Vec<(Vec<f64>, f64)> = Vec::new();
        if !t.deltas.is_empty() {
            if t.baseline.len() != m {
                bail!("trap baseline has {} voltages for {m} electrodes", t.baseline.len());
            }
            let pattern = match (&t.pattern, t.electrode) {
                (Some(p), _) => p.clone(),
                (None, Some(e)) if e < m => (0..m).map(|k| if k == e { 1.0 } else { 0.0 }).collect(),
                (None, Some(e)) => bail!("electrode {e} out of range for {m} electrodes"),
                (None, None) => bail!("trap deltas need 'electrode' or 'pattern'"),
            };
            if pattern.len() != m {
                bail!("trap pattern has {} entries for {m} electrodes", pattern.len());
            }
            for &d in &t.deltas {
                schedule.push((t.baseline.iter().zip(&pattern).map(|(b, p)| b + d * p).collect(), d));
            }
        }
        for v in &t.records {
            if v.len() != m {
                bail!("trap record has {} voltages for {m} electrodes", v.len());
            }
            let delta = match t.electrode {
                Some(e) if t.baseline.len() == m => v[e] - t.baseline[e],
                _ => 0.0,
            };
            schedule.push((v.clone(), delta));
        }
        schedule
            .into_iter()
            .map(|(voltages, delta)| {
                let potential = Potential1D::Trap(TrapPotential::new(t.geometry.clone(), voltages.clone(), self.units)?);
                Ok(RecordSetup { voltages, delta, potential, solver: solver.clone(), ions: self.ions })
            })
            .collect()
    }
}

/// Resolves a config path: as given if it exists, otherwise inside the
/// directory named by `IONPROBE_CONFIG_DIR`.
pub fn resolve(path: &Path, config_dir: Option<&Path>) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match config_dir {
        Some(dir) => dir.join(path),
        None => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> anyhow::Result<ScenarioConfig> {
        let c: ScenarioConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_harmonic() {
        let c = parse(r#"{"schema_version": 1, "ions": 2, "potential": {"family": "harmonic", "stiffness": 1.0}}"#).unwrap();
        let jobs = c.jobs().unwrap();
        assert_eq!(jobs.len(), 1);
        assert!(jobs[0].voltages.is_empty());
    }

    #[test]
    fn rejects_bad_versions_and_counts() {
        assert!(parse(r#"{"schema_version": 2, "potential": {"family": "harmonic", "stiffness": 1.0}}"#).is_err());
        assert!(parse(r#"{"schema_version": 1, "ions": 0, "potential": {"family": "harmonic", "stiffness": 1.0}}"#).is_err());
        assert!(parse(r#"{"schema_version": 1, "bogus": 3}"#).is_err());
        assert!(parse(r#"{"schema_version": 1}"#).unwrap().jobs().is_err());
    }

    #[test]
    fn trap_schedule_expands_deltas() {
        let c = parse(
            r#"{"schema_version": 1, "trap": {"baseline": [40.5, 4.64, 30.8, 4.50, 40.5], "pattern": [0, 1, 0, -1, 0], "deltas": [0, 0.5, 1.0]}}"#,
        )
        .unwrap();
        let jobs = c.jobs().unwrap();
        assert_eq!(jobs.len(), 3);
        assert_eq!(jobs[2].voltages, vec![40.5, 5.64, 30.8, 3.5, 40.5]);
        assert_eq!(jobs[1].delta, 0.5);
    }

    #[test]
    fn sweep_values() {
        let s = Sweep { start: -0.5, stop: 1.0, step: 0.05 };
        let v = s.values().unwrap();
        assert_eq!(v.len(), 31);
        assert!((v[30] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hash_changes_with_settings() {
        let c = parse(r#"{"schema_version": 1, "potential": {"family": "harmonic", "stiffness": 1.0}}"#).unwrap();
        assert_eq!(c.hash_with(&1), c.hash_with(&1));
        assert_ne!(c.hash_with(&1), c.hash_with(&2));
    }
}
