//! File formats: CSV tables with `#` metadata headers, JSON sessions and
//! 16-bit PNG frames.
//!
//! Every CSV starts with `# key: value` lines (format, kind, schema
//! version, units and whatever the caller adds), followed by a header row.
//! Column names carry their units, so files written in physical units
//! (`x_um`, `psi_mev`) and in internal units (`x`, `psi`) both read back
//! into internal units.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{FitResult, Frame};
use crate::isolation::{ElectrodeUnitPotential, MeasurementRecord, ShuttleScanMap};
use crate::physics::IonString;
use crate::reconstruction::{OffsetConvention, PotentialCurve};
use crate::units::UnitSystem;

pub const SCHEMA_VERSION: u32 = 1;

/// Unit convention for values written to files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputUnits {
    #[default]
    Internal,
    /// Micrometres and milli-electronvolts.
    Physical,
}

impl OutputUnits {
    fn name(self) -> &'static str {
        match self {
            OutputUnits::Internal => "internal",
            OutputUnits::Physical => "physical",
        }
    }

    fn length_column(self, base: &str) -> String {
        match self {
            OutputUnits::Internal => base.to_string(),
            OutputUnits::Physical => format!("{base}_um"),
        }
    }

    fn energy_column(self, base: &str) -> String {
        match self {
            OutputUnits::Internal => base.to_string(),
            OutputUnits::Physical => format!("{base}_mev"),
        }
    }

    fn length(self, x: f64, units: &UnitSystem) -> f64 {
        match self {
            OutputUnits::Internal => x,
            OutputUnits::Physical => units.internal_to_um(x),
        }
    }

    fn energy(self, e: f64, units: &UnitSystem) -> f64 {
        match self {
            OutputUnits::Internal => e,
            OutputUnits::Physical => units.internal_to_mev(e),
        }
    }
}

impl std::str::FromStr for OutputUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "internal" => Ok(OutputUnits::Internal),
            "physical" => Ok(OutputUnits::Physical),
            other => Err(Error::Parse(format!("unknown unit convention '{other}'"))),
        }
    }
}

/// Ordered `key: value` header lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metadata {
    pub entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new(kind: &str) -> Self {
        Self::default()
            .with("format", "ionprobe")
            .with("kind", kind)
            .with("schema_version", SCHEMA_VERSION)
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    /// Adds every entry of `other` not already present.
    pub fn merged(mut self, other: &Metadata) -> Self {
        for (k, v) in &other.entries {
            if self.get(k).is_none() {
                self.entries.push((k.clone(), v.clone()));
            }
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("metadata '{key}' is not a number: {v}"))))
            .transpose()
    }

    fn write(&self, w: &mut impl Write) -> Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "# {k}: {v}")?;
        }
        Ok(())
    }

    fn parse(text: &str) -> Self {
        let mut m = Metadata::default();
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else { continue };
            if let Some((k, v)) = rest.split_once(':') {
                m.entries.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        m
    }
}

/// Shortest decimal that reads back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// A parsed CSV table: metadata, column names and rows of raw fields.
struct Table {
    meta: Metadata,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let meta = Metadata::parse(text);
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .flexible(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = reader
            .records()
            .map(|r| {
                r.map(|r| r.iter().map(str::to_string).collect())
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
            })
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Self { meta, header, rows })
    }

    fn column<'a>(&self, names: &[&'a str]) -> Option<(usize, &'a str)> {
        names.iter().find_map(|n| self.header.iter().position(|h| h == n).map(|i| (i, *n)))
    }

    fn values(&self, index: usize) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let field = row[index].as_str();
                field.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("row {}, column '{}': '{field}' is not a number", r + 1, self.header[index]))
                })
            })
            .collect()
    }
}

fn units_from(meta: &Metadata) -> Result<UnitSystem> {
    let mut units = match meta.get_f64("length_unit_m")? {
        Some(l) => UnitSystem::with_length_unit(l)?,
        None => UnitSystem::default(),
    };
    if let Some(p) = meta.get_f64("pixel_pitch_um")? {
        units = units.with_pixel_pitch_um(p)?;
    }
    Ok(units)
}

fn unit_meta(kind: &str, units: &UnitSystem, mode: OutputUnits) -> Metadata {
    Metadata::new(kind)
        .with("units", mode.name())
        .with("length_unit_m", num(units.length_unit_m))
        .with("energy_unit_ev", num(units.energy_unit_ev))
}

/// Ion positions, with uncertainties when the string carries them.
pub fn write_positions(path: &Path, string: &IonString, mode: OutputUnits, extra: &Metadata) -> Result<()> {
    let units = string.units();
    let mut w = create(path)?;
    unit_meta("positions", units, mode).with("ions", string.len()).merged(extra).write(&mut w)?;
    let sig = string.uncertainties();
    let mut header = vec!["index".to_string(), mode.length_column("x")];
    if sig.is_some() {
        header.push(mode.length_column("sigma"));
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, &x) in string.positions().iter().enumerate() {
        let mut row = vec![i.to_string(), num(mode.length(x, units))];
        if let Some(s) = sig {
            row.push(num(mode.length(s[i], units)));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Positions read back in internal units. Rows out of order are sorted;
/// the returned flag says whether that happened.
pub fn read_positions(path: &Path) -> Result<(IonString, bool)> {
    let t = Table::read(path)?;
    let units = units_from(&t.meta)?;
    let (xi, xname) = t
        .column(&["x", "x_um"])
        .ok_or_else(|| Error::Parse(format!("{}: no 'x' or 'x_um' column", path.display())))?;
    let to_internal = |v: f64, name: &str| if name.ends_with("_um") { units.um_to_internal(v) } else { v };
    let x: Vec<f64> = t.values(xi)?.into_iter().map(|v| to_internal(v, xname)).collect();
    let sigma = match t.column(&["sigma", "sigma_um"]) {
        Some((si, sname)) => Some(t.values(si)?.into_iter().map(|v| to_internal(v, sname)).collect::<Vec<_>>()),
        None => None,
    };
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let reordered = order.iter().enumerate().any(|(i, &o)| i != o);
    let xs = order.iter().map(|&i| x[i]).collect();
    let mut string = IonString::new(xs, units)?;
    if let Some(s) = sigma {
        string = string.with_uncertainties(order.iter().map(|&i| s[i]).collect())?;
    }
    Ok((string, reordered))
}

pub fn write_curve(path: &Path, curve: &PotentialCurve, units: &UnitSystem, mode: OutputUnits, extra: &Metadata) -> Result<()> {
    let mut w = create(path)?;
    let mut meta = unit_meta("potential_curve", units, mode)
        .with("domain_lo", num(mode.length(curve.domain.0, units)))
        .with("domain_hi", num(mode.length(curve.domain.1, units)))
        .with("offset", curve.convention);
    if let Some(s) = curve.spacing {
        meta.set("spacing", num(mode.length(s, units)));
    }
    meta.merged(extra).write(&mut w)?;
    let mut header = vec![mode.length_column("x"), mode.energy_column("psi")];
    if curve.sigma.is_some() {
        header.push(mode.energy_column("sigma"));
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..curve.len() {
        let mut row = vec![num(mode.length(curve.x[i], units)), num(mode.energy(curve.psi[i], units))];
        if let Some(s) = &curve.sigma {
            row.push(num(mode.energy(s[i], units)));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<PotentialCurve> {
    let t = Table::read(path)?;
    let units = units_from(&t.meta)?;
    let physical = t.meta.get("units") == Some("physical");
    let length = |v: f64| if physical { units.um_to_internal(v) } else { v };
    let energy = |v: f64| if physical { units.mev_to_internal(v) } else { v };
    let missing = |c: &str| Error::Parse(format!("{}: no '{c}' column", path.display()));
    let (xi, _) = t.column(&["x", "x_um"]).ok_or_else(|| missing("x"))?;
    let (pi, _) = t.column(&["psi", "psi_mev"]).ok_or_else(|| missing("psi"))?;
    let x: Vec<f64> = t.values(xi)?.into_iter().map(length).collect();
    let psi: Vec<f64> = t.values(pi)?.into_iter().map(energy).collect();
    if x.is_empty() {
        return Err(Error::Parse(format!("{}: empty curve", path.display())));
    }
    let lo = t.meta.get_f64("domain_lo")?.map(length).unwrap_or(x[0]);
    let hi = t.meta.get_f64("domain_hi")?.map(length).unwrap_or(x[x.len() - 1]);
    let spacing = t.meta.get_f64("spacing")?.map(length);
    let mut curve = PotentialCurve::new(x, psi, (lo, hi), spacing)?;
    if let Some((si, _)) = t.column(&["sigma", "sigma_mev"]) {
        curve.sigma = Some(t.values(si)?.into_iter().map(energy).collect());
    }
    if let Some(c) = t.meta.get("offset") {
        curve.convention = c.parse::<OffsetConvention>()?;
    }
    Ok(curve)
}

/// Stitched unit potential; energies per volt.
pub fn write_unit_potential(
    path: &Path,
    unit: &ElectrodeUnitPotential,
    units: &UnitSystem,
    mode: OutputUnits,
    extra: &Metadata,
) -> Result<()> {
    let mut w = create(path)?;
    unit_meta("electrode_unit_potential", units, mode)
        .with("spacing", num(mode.length(unit.spacing, units)))
        .merged(extra)
        .write(&mut w)?;
    let e = |b: &str| format!("{}_per_v", mode.energy_column(b));
    writeln!(w, "{},{},{},count", mode.length_column("x"), e("mean"), e("spread"))?;
    for i in 0..unit.x.len() {
        writeln!(
            w,
            "{},{},{},{}",
            num(mode.length(unit.x[i], units)),
            num(mode.energy(unit.mean[i], units)),
            num(mode.energy(unit.spread[i], units)),
            unit.count[i]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One row per sweep value: status, well count, minima and the potential
/// at every map column (empty where the curve does not reach).
pub fn write_shuttle_map(path: &Path, map: &ShuttleScanMap, units: &UnitSystem, mode: OutputUnits, extra: &Metadata) -> Result<()> {
    let mut w = create(path)?;
    unit_meta("shuttle_map", units, mode).merged(extra).write(&mut w)?;
    let mut header = vec!["delta_v".to_string(), "status".into(), "well_count".into(), mode.length_column("minima")];
    header.extend(map.x.iter().map(|&x| num(mode.length(x, units))));
    writeln!(w, "{}", header.join(","))?;
    for (d, delta) in map.deltas.iter().enumerate() {
        let status = match &map.status[d] {
            crate::isolation::ColumnStatus::Ok => "ok",
            crate::isolation::ColumnStatus::Failed { .. } => "failed",
        };
        let minima: Vec<String> = map.minima[d].iter().map(|m| num(mode.length(m.x, units))).collect();
        let mut row = vec![num(*delta), status.to_string(), map.minima[d].len().to_string(), minima.join(";")];
        row.extend(map.values[d].iter().map(|v| v.map_or(String::new(), |e| num(mode.energy(e, units)))));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fit(path: &Path, fit: &FitResult, frame: &Frame, extra: &Metadata) -> Result<()> {
    let mut w = create(path)?;
    Metadata::new("fit_positions")
        .with("units", "physical")
        .with("pixel_pitch_um", num(frame.pitch_um))
        .with("origin_um", num(frame.origin_um))
        .with("merged_pairs", fit.merged.len())
        .merged(extra)
        .write(&mut w)?;
    writeln!(w, "index,x_px,x_um,sigma_um")?;
    for i in 0..fit.len() {
        let p = fit.positions_px[i];
        writeln!(w, "{i},{},{},{}", num(p), num(frame.px_to_um(p)), num(fit.sigmas_px[i] * frame.pitch_um))?;
    }
    w.flush()?;
    Ok(())
}

fn frame_meta(frame: &Frame) -> Metadata {
    Metadata::new("frame")
        .with("rows", frame.rows)
        .with("cols", frame.cols)
        .with("pixel_pitch_um", num(frame.pitch_um))
        .with("origin_um", num(frame.origin_um))
        .with("exposure_ms", num(frame.exposure_ms))
}

fn frame_from_meta(meta: &Metadata, rows: usize, cols: usize, counts: Vec<f64>) -> Result<Frame> {
    let pitch = meta.get_f64("pixel_pitch_um")?.unwrap_or(crate::units::DEFAULT_PIXEL_PITCH_UM);
    let origin = meta.get_f64("origin_um")?.unwrap_or(0.0);
    let exposure = meta.get_f64("exposure_ms")?.unwrap_or(crate::imaging::DEFAULT_EXPOSURE_MS);
    Frame::new(rows, cols, counts, pitch, origin, exposure)
}

/// Count matrix, one CSV row per frame row.
pub fn write_frame_csv(path: &Path, frame: &Frame, extra: &Metadata) -> Result<()> {
    let mut w = create(path)?;
    frame_meta(frame).merged(extra).write(&mut w)?;
    let header: Vec<String> = (0..frame.cols).map(|c| format!("c{c}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for r in 0..frame.rows {
        let row: Vec<String> = (0..frame.cols).map(|c| num(frame.at(r, c))).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frame_csv(path: &Path) -> Result<Frame> {
    let t = Table::read(path)?;
    let cols = t.header.len();
    let rows = t.rows.len();
    let mut counts = Vec::with_capacity(rows * cols);
    for (r, row) in t.rows.iter().enumerate() {
        for (c, field) in row.iter().enumerate() {
            counts.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("frame row {}, column {c}: '{field}'", r + 1)))?,
            );
        }
    }
    frame_from_meta(&t.meta, rows, cols, counts)
}

/// 16-bit grayscale PNG; counts are rounded and clipped to 65535. Returns
/// the number of clipped pixels.
pub fn write_frame_png(path: &Path, frame: &Frame, extra: &Metadata) -> Result<usize> {
    let w = create(path)?;
    let mut encoder = png::Encoder::new(w, frame.cols as u32, frame.rows as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    for (k, v) in &frame_meta(frame).merged(extra).entries {
        encoder.add_text_chunk(k.clone(), v.clone()).map_err(|e| Error::invalid(e.to_string()))?;
    }
    let mut writer = encoder.write_header().map_err(png_error)?;
    let mut clipped = 0;
    let mut bytes = Vec::with_capacity(2 * frame.counts.len());
    for &c in &frame.counts {
        let v = c.round();
        if v > u16::MAX as f64 {
            clipped += 1;
        }
        bytes.extend_from_slice(&(v.clamp(0.0, u16::MAX as f64) as u16).to_be_bytes());
    }
    writer.write_image_data(&bytes).map_err(png_error)?;
    writer.finish().map_err(png_error)?;
    Ok(clipped)
}

pub fn read_frame_png(path: &Path) -> Result<Frame> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_decode_error)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::Parse(format!("{}: expected 16-bit grayscale", path.display())));
    }
    let (cols, rows) = (info.width as usize, info.height as usize);
    let mut meta = Metadata::default();
    for t in &info.uncompressed_latin1_text {
        meta.entries.push((t.keyword.clone(), t.text.clone()));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(2 * rows * cols)];
    let out = reader.next_frame(&mut buf).map_err(png_decode_error)?;
    let line = out.line_size;
    let mut counts = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &buf[r * line..r * line + 2 * cols];
        counts.extend(row.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64));
    }
    frame_from_meta(&meta, rows, cols, counts)
}

fn png_error(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(e) => Error::Io(e),
        other => Error::invalid(other.to_string()),
    }
}

fn png_decode_error(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(e) => Error::Io(e),
        other => Error::Parse(other.to_string()),
    }
}

/// Where a session record's curve lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveRef {
    /// Curve CSV, relative to the session file.
    File(PathBuf),
    Inline(PotentialCurve),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub voltages: Vec<f64>,
    pub delta: f64,
    pub curve: CurveRef,
}

/// A set of measurements of one trap, in internal units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub schema_version: u32,
    #[serde(default)]
    pub units: UnitSystem,
    pub records: Vec<SessionRecord>,
}

impl Session {
    pub fn inline(records: &[MeasurementRecord], units: UnitSystem) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            units,
            records: records
                .iter()
                .map(|r| SessionRecord { voltages: r.voltages.clone(), delta: r.delta, curve: CurveRef::Inline(r.curve.clone()) })
                .collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_session(path: &Path) -> Result<(Session, Vec<MeasurementRecord>)> {
    let reader = BufReader::new(File::open(path)?);
    let session: Session = serde_json::from_reader(reader).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if session.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            session.schema_version
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let records = session
        .records
        .iter()
        .map(|r| {
            let curve = match &r.curve {
                CurveRef::Inline(c) => c.clone(),
                CurveRef::File(f) => read_curve(&base.join(f))?,
            };
            Ok(MeasurementRecord { voltages: r.voltages.clone(), delta: r.delta, curve })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((session, records))
}

/// Reads the `# key: value` header of any file written here.
pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let reader = BufReader::new(File::open(path)?);
    let mut text = String::new();
    for line in reader.lines() {
        let line = line?;
        if !line.starts_with('#') {
            break;
        }
        text.push_str(&line);
        text.push('\n');
    }
    Ok(Metadata::parse(&text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::GridSpec;

    #[test]
    fn positions_round_trip_in_both_conventions() {
        let dir = tempfile::tempdir().unwrap();
        let s = IonString::internal(vec![-1.5, 0.25, 2.0]).unwrap().with_uncertainties(vec![0.1, 0.2, 0.3]).unwrap();
        for mode in [OutputUnits::Internal, OutputUnits::Physical] {
            let p = dir.path().join(format!("{mode:?}.csv"));
            write_positions(&p, &s, mode, &Metadata::default().with("config_hash", "abc")).unwrap();
            let (back, reordered) = read_positions(&p).unwrap();
            assert!(!reordered);
            for (a, b) in back.positions().iter().zip(s.positions()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(read_metadata(&p).unwrap().get("config_hash"), Some("abc"));
        }
    }

    #[test]
    fn unordered_rows_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pos.csv");
        std::fs::write(&p, "# units: internal\nindex,x\n0,2.0\n1,-1.0\n2,0.5\n").unwrap();
        let (s, reordered) = read_positions(&p).unwrap();
        assert!(reordered);
        assert_eq!(s.positions(), &[-1.0, 0.5, 2.0]);
    }

    #[test]
    fn malformed_csv_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "index,x\n0,abc\n").unwrap();
        assert!(matches!(read_positions(&p), Err(Error::Parse(_))));
        std::fs::write(&p, "index,y\n0,1\n").unwrap();
        assert!(matches!(read_positions(&p), Err(Error::Parse(_))));
    }

    #[test]
    fn curves_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = PotentialCurve::from_fn((-2.3, 3.1), GridSpec::Spacing(0.5), |x| x * x).unwrap();
        c.sigma = Some(vec![0.01; c.len()]);
        let units = UnitSystem::default();
        for mode in [OutputUnits::Internal, OutputUnits::Physical] {
            let p = dir.path().join("c.csv");
            write_curve(&p, &c, &units, mode, &Metadata::default()).unwrap();
            let back = read_curve(&p).unwrap();
            assert_eq!(back.len(), c.len());
            assert_eq!(back.spacing.is_some(), true);
            for (a, b) in back.psi.iter().zip(&c.psi) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((back.domain.0 + 2.3).abs() < 1e-12);
        }
    }

    #[test]
    fn frames_round_trip_through_csv_and_png() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::new(2, 3, vec![0.0, 1.0, 2.0, 65535.0, 7.0, 9.0], 2.0, -10.0, 100.0).unwrap();
        let csv_path = dir.path().join("f.csv");
        write_frame_csv(&csv_path, &f, &Metadata::default()).unwrap();
        assert_eq!(read_frame_csv(&csv_path).unwrap(), f);
        let png_path = dir.path().join("f.png");
        assert_eq!(write_frame_png(&png_path, &f, &Metadata::default()).unwrap(), 0);
        assert_eq!(read_frame_png(&png_path).unwrap(), f);
    }

    #[test]
    fn sessions_resolve_curve_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = PotentialCurve::from_fn((0.0, 4.0), GridSpec::Spacing(1.0), |x| x).unwrap();
        write_curve(&dir.path().join("a.csv"), &c, &UnitSystem::default(), OutputUnits::Internal, &Metadata::default()).unwrap();
        let session = Session {
            schema_version: SCHEMA_VERSION,
            units: UnitSystem::default(),
            records: vec![
                SessionRecord { voltages: vec![1.0, 2.0], delta: 0.0, curve: CurveRef::File("a.csv".into()) },
                SessionRecord { voltages: vec![1.0, 2.1], delta: 0.1, curve: CurveRef::Inline(c.clone()) },
            ],
        };
        let p = dir.path().join("session.json");
        write_json(&p, &session).unwrap();
        let (_, records) = read_session(&p).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].curve.psi, c.psi);
    }
}
