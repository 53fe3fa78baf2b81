//! Subcommand implementations. Each returns whether every work item
//! succeeded; hard errors propagate.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use ionprobe::imaging::{extract_string, render_frame, FitConfig, RenderConfig};
use ionprobe::io::{self, CurveRef, Metadata, OutputUnits, Session, SessionRecord, SCHEMA_VERSION};
use ionprobe::isolation::{
    equipotential_contours, isolate_electrode, shuttle_scan, ColumnStatus, IsolationConfig, PairSelection, Weighting,
    DEFAULT_CONTOUR_SPACING_MEV,
};
use ionprobe::reconstruction::{reconstruct_with_band, GridSpec, OffsetConvention, ReconstructionOptions};
use ionprobe::trap::{strip_unit_potential, TrapGeometry};
use ionprobe::{reconstruct, IonString, PotentialCurve, UnitSystem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError, ScenarioConfig};
use crate::svg::{color, Band, Line, Plot};

/// Options shared by every subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct Global {
    pub units: OutputUnits,
    pub seed: Option<u64>,
    pub grid_um: Option<f64>,
    pub offset: Option<OffsetConvention>,
    pub delta_min_mv: Option<f64>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub config_dir: Option<PathBuf>,
}

pub enum Outcome {
    Complete,
    /// Outputs were written but some work items failed.
    Partial(String),
}

impl Global {
    fn load(&self, path: Option<&Path>) -> anyhow::Result<ScenarioConfig> {
        let dir = self.config_dir.as_deref();
        let path = match (path, dir) {
            (Some(p), _) => config::resolve(p, dir),
            (None, Some(d)) => d.join(config::DEFAULT_SCENARIO),
            (None, None) => {
                return Err(ConfigError(format!(
                    "no scenario file given and {} is not set",
                    config::CONFIG_DIR_ENV
                ))
                .into())
            }
        };
        ScenarioConfig::load(&path).map_err(|e| ConfigError(format!("{e:#}")).into())
    }

    /// `--out`, then the scenario's `output_dir`, then the working directory.
    fn out_dir(&self, config: Option<&ScenarioConfig>) -> anyhow::Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| config.and_then(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn metadata(&self, command: &str, hash: &str) -> Metadata {
        Metadata::default()
            .with("command", command)
            .with("config_hash", hash)
            .with("seed", self.seed.map_or("none".to_string(), |s| s.to_string()))
    }

    /// Offset convention with an anchor given in the output length unit.
    fn offset(&self, units: &UnitSystem) -> OffsetConvention {
        match self.offset {
            Some(OffsetConvention::Anchor(x)) if self.units == OutputUnits::Physical => {
                OffsetConvention::Anchor(units.um_to_internal(x))
            }
            Some(o) => o,
            None => OffsetConvention::MinZero,
        }
    }

    fn spacing(&self, units: &UnitSystem) -> Option<f64> {
        self.grid_um.map(|g| units.um_to_internal(g))
    }

    fn delta_min(&self) -> Option<f64> {
        self.delta_min_mv.map(|mv| mv * 1e-3)
    }

    fn length(&self, x: f64, units: &UnitSystem) -> f64 {
        match self.units {
            OutputUnits::Internal => x,
            OutputUnits::Physical => units.internal_to_um(x),
        }
    }

    fn energy(&self, e: f64, units: &UnitSystem) -> f64 {
        match self.units {
            OutputUnits::Internal => e,
            OutputUnits::Physical => units.internal_to_mev(e),
        }
    }

    fn axis(&self, quantity: &str) -> String {
        match (self.units, quantity) {
            (OutputUnits::Internal, q) => format!("{q} (internal units)"),
            (OutputUnits::Physical, "x") => "x (um)".into(),
            (OutputUnits::Physical, q) => format!("{q} (meV)"),
        }
    }
}

/// Largest 1-2-5 step not above `v`.
fn nice_floor(v: f64) -> f64 {
    let mag = 10f64.powi(v.log10().floor() as i32);
    [5.0, 2.0, 1.0].iter().map(|m| m * mag).find(|s| *s <= v).unwrap_or(mag)
}

/// Lattice spacing for strings whose shortest span is `span`: 1 um, or
/// finer so that at least about 100 points cover the string.
fn default_spacing(span: f64, units: &UnitSystem) -> f64 {
    let one_um = units.um_to_internal(1.0);
    if span / 100.0 >= one_um {
        one_um
    } else {
        nice_floor(span / 100.0)
    }
}

fn span(s: &IonString) -> f64 {
    let x = s.positions();
    x[x.len() - 1] - x[0]
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub units: UnitSystem,
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub voltages: Vec<f64>,
    pub delta: f64,
    pub status: String,
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
    /// Positions CSV, relative to the manifest.
    pub positions: Option<PathBuf>,
    pub error: Option<String>,
}

pub fn simulate(g: &Global, config_path: Option<&Path>) -> anyhow::Result<Outcome> {
    let config = g.load(config_path)?;
    let jobs = config.jobs().map_err(|e| ConfigError(format!("{e:#}")))?;
    let hash = config.hash_with(&("simulate", g));
    let out = g.out_dir(Some(&config))?;
    let meta = g.metadata("simulate", &hash);

    let results: Vec<_> = jobs.par_iter().map(|j| j.solve()).collect();
    let mut records = Vec::with_capacity(jobs.len());
    let mut failed = 0;
    for (k, (job, result)) in jobs.iter().zip(results).enumerate() {
        let mut rec = ManifestRecord {
            index: k,
            voltages: job.voltages.clone(),
            delta: job.delta,
            status: "ok".into(),
            residual: None,
            iterations: None,
            positions: None,
            error: None,
        };
        match result {
            Ok(eq) if eq.converged => {
                let name = PathBuf::from(format!("positions_{k:03}.csv"));
                let m = meta
                    .clone()
                    .with("record", k)
                    .with("delta_v", job.delta)
                    .with("voltages", format!("{:?}", job.voltages))
                    .with("residual", eq.residual);
                io::write_positions(&out.join(&name), &eq.string, g.units, &m)?;
                rec.residual = Some(eq.residual);
                rec.iterations = Some(eq.iterations);
                rec.positions = Some(name);
            }
            Ok(eq) => {
                rec.status = "failed".into();
                rec.residual = Some(eq.residual);
                rec.error = Some(format!("residual {:e} above tolerance", eq.residual));
            }
            Err(e) => {
                rec.status = "failed".into();
                rec.error = Some(e.to_string());
            }
        }
        if rec.status != "ok" {
            failed += 1;
            eprintln!("warning: record {k} (delta {} V): {}", job.delta, rec.error.as_deref().unwrap_or(""));
        }
        records.push(rec);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        kind: "simulate_manifest".into(),
        config_hash: hash,
        seed: g.seed,
        units: config.units,
        records,
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    println!("simulated {} record(s), {failed} failed, into {}", jobs.len(), out.display());
    Ok(if failed == 0 { Outcome::Complete } else { Outcome::Partial(format!("{failed} of {} records failed", jobs.len())) })
}

fn curve_plot(g: &Global, title: &str, curves: &[(String, &PotentialCurve)], units: &UnitSystem) -> Plot {
    let mut plot = Plot::new(title, &g.axis("x"), &g.axis("potential"));
    for (i, (label, c)) in curves.iter().enumerate() {
        let pts = c.x.iter().zip(&c.psi).map(|(&x, &p)| (g.length(x, units), g.energy(p, units))).collect();
        let mut line = Line::new(pts, color(i), 1.5);
        if curves.len() > 1 {
            line = line.label(label.clone());
        }
        plot.lines.push(line);
        if let Some(s) = &c.sigma {
            plot.bands.push(Band {
                x: c.x.iter().map(|&x| g.length(x, units)).collect(),
                lo: c.psi.iter().zip(s).map(|(p, s)| g.energy(p - s, units)).collect(),
                hi: c.psi.iter().zip(s).map(|(p, s)| g.energy(p + s, units)).collect(),
                color: color(i).into(),
            });
        }
    }
    plot
}

pub fn reconstruct_cmd(g: &Global, input: &Path, replicas: usize) -> anyhow::Result<Outcome> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let hash = config::digest(&[b"reconstruct", &serde_json::to_vec(&(g, replicas))?, &bytes]);
    let meta = g.metadata("reconstruct", &hash);
    let out = g.out_dir(None)?;
    if input.extension().is_some_and(|e| e == "json") {
        reconstruct_manifest(g, input, &out, &meta)
    } else {
        reconstruct_single(g, input, &out, &meta, replicas)
    }
}

fn read_string(path: &Path) -> anyhow::Result<IonString> {
    let (string, reordered) = io::read_positions(path)?;
    if reordered {
        eprintln!("warning: {}: rows were not in position order and have been sorted", path.display());
    }
    Ok(string)
}

fn reconstruct_single(g: &Global, input: &Path, out: &Path, meta: &Metadata, replicas: usize) -> anyhow::Result<Outcome> {
    let string = read_string(input)?;
    let units = *string.units();
    let spacing = g.spacing(&units).unwrap_or_else(|| default_spacing(span(&string), &units));
    let options = ReconstructionOptions { grid: GridSpec::Spacing(spacing), offset: g.offset(&units) };
    let curve = match string.uncertainties() {
        Some(s) => reconstruct_with_band(&string, &s.to_vec(), replicas, g.seed.unwrap_or(0), &options)?,
        None => reconstruct(&string, &options)?,
    };
    io::write_curve(&out.join("curve.csv"), &curve, &units, g.units, meta)?;
    curve_plot(g, "Reconstructed potential", &[("curve".into(), &curve)], &units).write(&out.join("curve.svg"))?;
    println!("reconstructed {} ions onto {} points into {}", string.len(), curve.len(), out.display());
    Ok(Outcome::Complete)
}

fn reconstruct_manifest(g: &Global, input: &Path, out: &Path, meta: &Metadata) -> anyhow::Result<Outcome> {
    let text = std::fs::read_to_string(input)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| ionprobe::Error::Parse(format!("{}: {e}", input.display())))?;
    let base = input.parent().unwrap_or(Path::new("."));
    let mut strings = Vec::new();
    for r in &manifest.records {
        if let Some(p) = &r.positions {
            strings.push((r, read_string(&base.join(p))?));
        }
    }
    if strings.is_empty() {
        bail!(ionprobe::Error::Parse(format!("{}: no record has positions", input.display())));
    }
    let units = manifest.units;
    // One lattice for the whole session so curves difference without resampling.
    let shortest = strings.iter().map(|(_, s)| span(s)).fold(f64::INFINITY, f64::min);
    let spacing = g.spacing(&units).unwrap_or_else(|| default_spacing(shortest, &units));
    let options = ReconstructionOptions { grid: GridSpec::Spacing(spacing), offset: g.offset(&units) };
    let curves: Vec<_> = strings.par_iter().map(|(_, s)| reconstruct(s, &options)).collect::<Result<_, _>>()?;

    let mut session = Session { schema_version: SCHEMA_VERSION, units, records: vec![] };
    for ((r, _), curve) in strings.iter().zip(&curves) {
        let name = PathBuf::from(format!("curve_{:03}.csv", r.index));
        io::write_curve(&out.join(&name), curve, &units, g.units, &meta.clone().with("record", r.index))?;
        session.records.push(SessionRecord { voltages: r.voltages.clone(), delta: r.delta, curve: CurveRef::File(name) });
    }
    io::write_json(&out.join("session.json"), &session)?;
    let labelled: Vec<(String, &PotentialCurve)> =
        strings.iter().zip(&curves).map(|((r, _), c)| (format!("{} V", r.delta), c)).collect();
    curve_plot(g, "Reconstructed potentials", &labelled, &units).write(&out.join("curves.svg"))?;
    println!("reconstructed {} record(s) into {}", curves.len(), out.display());
    Ok(Outcome::Complete)
}

pub struct IsolateArgs {
    pub electrode: usize,
    pub weighting: Weighting,
    pub pairs: PairSelection,
    pub analytic: bool,
}

pub fn isolate(g: &Global, session_path: &Path, a: &IsolateArgs) -> anyhow::Result<Outcome> {
    let bytes = std::fs::read(session_path).with_context(|| format!("reading {}", session_path.display()))?;
    let (session, records) = io::read_session(session_path)?;
    let units = session.units;
    let mut iso_config = IsolationConfig::new(a.electrode);
    iso_config.weighting = a.weighting;
    iso_config.pairs = a.pairs;
    iso_config.spacing = g.spacing(&units);
    if let Some(d) = g.delta_min() {
        iso_config.delta_min = d;
    }
    if let Some(bad) = records.iter().find(|r| r.voltages.len() <= a.electrode) {
        return Err(ConfigError(format!("electrode {} out of range for {} voltages", a.electrode, bad.voltages.len())).into());
    }
    let settings = (g, a.electrode, a.weighting, a.pairs, a.analytic);
    let hash = config::digest(&[b"isolate", &serde_json::to_vec(&settings)?, &bytes]);
    let meta = g.metadata("isolate", &hash).with("electrode", a.electrode).with("delta_min_v", iso_config.delta_min);
    let out = g.out_dir(None)?;

    let iso = isolate_electrode(&records, &iso_config)?;
    for (i, j) in &iso.skipped {
        eprintln!("warning: records {i} and {j} do not overlap; pair skipped");
    }
    io::write_unit_potential(&out.join("unit_potential.csv"), &iso.unit, &units, g.units, &meta)?;

    let mut plot = Plot::new(&format!("Electrode {} unit potential", a.electrode), &g.axis("x"), &format!("{} per V", g.axis("potential")));
    for (k, (s, c)) in iso.segments.iter().zip(&iso.offsets).enumerate() {
        let pts = s.x().iter().zip(&s.values).map(|(&x, v)| (g.length(x, &units), g.energy(v + c, &units))).collect();
        plot.lines.push(Line::new(pts, color(k + 1), 0.8));
    }
    let mean = iso.unit.x.iter().zip(&iso.unit.mean).map(|(&x, &m)| (g.length(x, &units), g.energy(m, &units))).collect();
    plot.lines.push(Line::new(mean, "black", 3.0).label("stitched mean"));
    if a.analytic {
        let geometry = TrapGeometry::default();
        let strip = geometry
            .strips
            .get(a.electrode)
            .ok_or_else(|| ConfigError(format!("default geometry has no electrode {}", a.electrode)))?;
        let model: Vec<f64> = iso
            .unit
            .x
            .iter()
            .map(|&x| units.ev_to_internal(strip_unit_potential(units.internal_to_um(x), strip, geometry.height_um)))
            .collect();
        let shift = iso.unit.mean.iter().zip(&model).map(|(m, v)| m - v).sum::<f64>() / model.len() as f64;
        let pts = iso.unit.x.iter().zip(&model).map(|(&x, v)| (g.length(x, &units), g.energy(v + shift, &units))).collect();
        plot.lines.push(Line::new(pts, "#d62728", 1.5).dashed().label("analytic model"));
    }
    plot.write(&out.join("unit_potential.svg"))?;
    println!(
        "isolated electrode {} from {} segment(s) over {} into {}",
        a.electrode,
        iso.segments.len(),
        g.length(iso.unit.extent(), &units),
        out.display()
    );
    Ok(Outcome::Complete)
}

pub fn shuttle(g: &Global, config_path: Option<&Path>, contour_mev: Option<f64>) -> anyhow::Result<Outcome> {
    let config = g.load(config_path)?;
    let plan = config.shuttle.clone().ok_or_else(|| ConfigError("scenario has no 'shuttle' section".into()))?;
    let as_config = |e: anyhow::Error| anyhow!(ConfigError(format!("{e:#}")));
    let scenario = plan.scenario(config.units).map_err(as_config)?;
    let deltas = plan.deltas().map_err(as_config)?;
    let units = config.units;
    let mut sc = plan.config.clone();
    sc.solver.units = units;
    if let Some(h) = g.spacing(&units) {
        sc.reconstruction.grid = GridSpec::Spacing(h);
    }
    if g.offset.is_some() {
        sc.reconstruction.offset = g.offset(&units);
    }
    let spacing_mev = contour_mev.unwrap_or(DEFAULT_CONTOUR_SPACING_MEV);
    let hash = config.hash_with(&("shuttle", g, spacing_mev));
    let meta = g.metadata("shuttle", &hash).with("contour_spacing_mev", spacing_mev);
    let out = g.out_dir(Some(&config))?;

    let map = shuttle_scan(&scenario, &deltas, &sc)?;
    for (d, s) in map.deltas.iter().zip(&map.status) {
        if let ColumnStatus::Failed { reason } = s {
            eprintln!("warning: delta {d} V: {reason}");
        }
    }
    io::write_shuttle_map(&out.join("shuttle_map.csv"), &map, &units, g.units, &meta)?;

    let contours = if map.failures() < map.deltas.len() {
        equipotential_contours(&map, units.mev_to_internal(spacing_mev))?
    } else {
        vec![]
    };
    let mut plot = Plot::new(&format!("Equipotentials every {spacing_mev} meV"), &g.axis("x"), "delta (V)");
    for (k, c) in contours.iter().enumerate() {
        for line in &c.lines {
            let pts = line.iter().map(|&(x, d)| (g.length(x, &units), d)).collect();
            plot.lines.push(Line::new(pts, color(k), 1.0));
        }
    }
    for (d, minima) in map.deltas.iter().zip(&map.minima) {
        plot.markers.extend(minima.iter().map(|m| (g.length(m.x, &units), *d)));
    }
    plot.write(&out.join("shuttle_contours.svg"))?;
    let failed = map.failures();
    match map.onset() {
        Some(d) => println!("scanned {} sweep value(s); second well from delta = {d} V", deltas.len()),
        None => println!("scanned {} sweep value(s); single well throughout", deltas.len()),
    }
    Ok(if failed == 0 { Outcome::Complete } else { Outcome::Partial(format!("{failed} of {} sweep values failed", deltas.len())) })
}

pub fn image_gen(g: &Global, positions: &Path, config_path: Option<&Path>, csv: bool) -> anyhow::Result<Outcome> {
    let config = match config_path {
        Some(p) => Some(g.load(Some(p))?),
        None => None,
    };
    let bytes = std::fs::read(positions).with_context(|| format!("reading {}", positions.display()))?;
    let string = read_string(positions)?;
    let x_um = string.positions_um();
    let mut render = config
        .as_ref()
        .and_then(|c| c.imaging.clone())
        .unwrap_or_else(|| RenderConfig::default().fitted_to(&x_um, 30));
    if let Some(seed) = g.seed.or_else(|| config.as_ref().and_then(|c| c.seed)) {
        render.seed = Some(seed);
    }
    let settings = serde_json::to_vec(&("image-gen", g, &render))?;
    let config_bytes = match &config {
        Some(c) => serde_json::to_vec(c)?,
        None => vec![],
    };
    let hash = config::digest(&[&settings, &config_bytes, &bytes]);
    let meta = g.metadata("image-gen", &hash);
    let out = g.out_dir(config.as_ref())?;

    let frame = render_frame(&x_um, &render)?;
    let clipped = io::write_frame_png(&out.join("frame.png"), &frame, &meta)?;
    if clipped > 0 {
        eprintln!("warning: {clipped} pixel(s) clipped at 65535 counts in frame.png");
    }
    if csv {
        io::write_frame_csv(&out.join("frame.csv"), &frame, &meta)?;
    }
    println!("rendered {} ions into a {}x{} frame in {}", x_um.len(), frame.rows, frame.cols, out.display());
    Ok(Outcome::Complete)
}

pub fn image_fit(g: &Global, frame_path: &Path, psf_sigma_px: Option<f64>) -> anyhow::Result<Outcome> {
    let bytes = std::fs::read(frame_path).with_context(|| format!("reading {}", frame_path.display()))?;
    let frame = if frame_path.extension().is_some_and(|e| e == "csv") {
        io::read_frame_csv(frame_path)?
    } else {
        io::read_frame_png(frame_path)?
    };
    let mut fit_config = FitConfig::default();
    if let Some(s) = psf_sigma_px {
        fit_config.psf_sigma_px = s;
    }
    let hash = config::digest(&[b"image-fit", &serde_json::to_vec(&(g, &fit_config))?, &bytes]);
    let meta = g.metadata("image-fit", &hash);
    let out = g.out_dir(None)?;

    let (string, fit) = extract_string(&frame, &fit_config)?;
    for (a, b) in &fit.merged {
        eprintln!("warning: peaks {a} and {b} are closer than {} px and may be merged", fit_config.merge_px);
    }
    io::write_fit(&out.join("fit.csv"), &fit, &frame, &meta)?;
    io::write_positions(&out.join("positions.csv"), &string, g.units, &meta)?;
    println!("fitted {} ions into {}", string.len(), out.display());
    Ok(Outcome::Complete)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_defaults() {
        let u = UnitSystem::default();
        assert_eq!(nice_floor(0.0126), 0.01);
        assert_eq!(nice_floor(0.3), 0.2);
        assert_eq!(default_spacing(190.0, &u), 1.0);
        assert_eq!(default_spacing(1.26, &u), 0.01);
    }
}
