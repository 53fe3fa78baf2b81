//! Synthetic camera frames and ion positions extracted from them.
//!
//! Pixel coordinates put the centre of column `c` at `c`; a frame maps
//! pixel coordinates to micrometres through its pitch and the position of
//! column 0.

mod background;
mod fit;

pub use background::{estimate_background, DEFAULT_BACKGROUND_WINDOW};
pub use fit::{fit_positions, FitConfig, FitResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::IonString;
use crate::units::{UnitSystem, DEFAULT_PIXEL_PITCH_UM};

/// Exposure time the default count levels correspond to.
pub const DEFAULT_EXPOSURE_MS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub rows: usize,
    pub cols: usize,
    /// Row-major photon counts.
    pub counts: Vec<f64>,
    pub pitch_um: f64,
    /// Position of the centre of column 0.
    pub origin_um: f64,
    pub exposure_ms: f64,
}

impl Frame {
    pub fn new(rows: usize, cols: usize, counts: Vec<f64>, pitch_um: f64, origin_um: f64, exposure_ms: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("frames must have at least one row and column"));
        }
        if counts.len() != rows * cols {
            return Err(Error::invalid(format!("{} counts for a {rows}x{cols} frame", counts.len())));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::invalid("frame counts must be finite and non-negative"));
        }
        if !(pitch_um > 0.0) {
            return Err(Error::invalid("pixel pitch must be positive"));
        }
        Ok(Self { rows, cols, counts, pitch_um, origin_um, exposure_ms })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.counts[row * self.cols + col]
    }

    pub fn px_to_um(&self, px: f64) -> f64 {
        self.origin_um + px * self.pitch_um
    }

    pub fn um_to_px(&self, um: f64) -> f64 {
        (um - self.origin_um) / self.pitch_um
    }
}

/// Column sums of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile1D {
    pub counts: Vec<f64>,
}

impl Profile1D {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn columns(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|c| c as f64).collect()
    }

    /// The profile reflected about its centre.
    pub fn mirrored(&self) -> Self {
        Self { counts: self.counts.iter().rev().copied().collect() }
    }
}

pub fn column_profile(frame: &Frame) -> Profile1D {
    let mut counts = vec![0.0; frame.cols];
    for r in 0..frame.rows {
        for (c, v) in counts.iter_mut().enumerate() {
            *v += frame.at(r, c);
        }
    }
    Profile1D { counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundModel {
    /// Counts per pixel.
    Flat { level: f64 },
    /// Counts per pixel rising linearly from the first to the last column.
    Ramp { start: f64, end: f64 },
}

impl BackgroundModel {
    fn at(&self, col: usize, cols: usize) -> f64 {
        match *self {
            BackgroundModel::Flat { level } => level,
            BackgroundModel::Ramp { start, end } => {
                if cols < 2 {
                    start
                } else {
                    start + (end - start) * col as f64 / (cols - 1) as f64
                }
            }
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            BackgroundModel::Flat { level } => level >= 0.0,
            BackgroundModel::Ramp { start, end } => start >= 0.0 && end >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub rows: usize,
    pub cols: usize,
    pub pitch_um: f64,
    pub origin_um: f64,
    pub psf_sigma_um: f64,
    /// Detected photons per ion over the whole exposure.
    pub ion_counts: f64,
    pub background: BackgroundModel,
    /// Row of the string axis; defaults to the middle row.
    pub axis_row: Option<f64>,
    pub exposure_ms: f64,
    /// Poisson-sample every pixel with this seed; `None` renders the mean.
    pub seed: Option<u64>,
    /// Independent random stream for this frame within a batch.
    pub stream: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            rows: 15,
            cols: 200,
            pitch_um: DEFAULT_PIXEL_PITCH_UM,
            origin_um: -200.0,
            psf_sigma_um: 2.0,
            ion_counts: 1e4,
            background: BackgroundModel::Flat { level: 10.0 },
            axis_row: None,
            exposure_ms: DEFAULT_EXPOSURE_MS,
            seed: None,
            stream: 0,
        }
    }
}

impl RenderConfig {
    /// Columns and origin chosen so that `positions_um` sit well inside
    /// the frame with `margin_px` spare columns on either side.
    pub fn fitted_to(mut self, positions_um: &[f64], margin_px: usize) -> Self {
        let lo = positions_um.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = positions_um.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi.is_finite() {
            let first = (lo / self.pitch_um).floor() - margin_px as f64;
            let last = (hi / self.pitch_um).ceil() + margin_px as f64;
            self.origin_um = first * self.pitch_um;
            self.cols = (last - first) as usize + 1;
        }
        self
    }
}

fn normalised_gaussian(n: usize, center: f64, sigma: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|i| (-0.5 * ((i as f64 - center) / sigma).powi(2)).exp()).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter().map(|v| v / total).collect()
    } else {
        w
    }
}

/// Gaussian spots plus background. Each spot is the point-sampled PSF,
/// normalised to unit sum over the frame, times the ion's counts.
pub fn render_frame(positions_um: &[f64], config: &RenderConfig) -> Result<Frame> {
    if config.rows == 0 || config.cols == 0 {
        return Err(Error::invalid("frames must have at least one row and column"));
    }
    if !(config.pitch_um > 0.0) {
        return Err(Error::invalid("pixel pitch must be positive"));
    }
    if !(config.psf_sigma_um > 0.0) {
        return Err(Error::invalid("PSF width must be positive"));
    }
    if !(config.ion_counts >= 0.0) || !config.background.is_valid() {
        return Err(Error::invalid("count levels must be non-negative"));
    }
    let (rows, cols) = (config.rows, config.cols);
    let sigma_px = config.psf_sigma_um / config.pitch_um;
    let axis = config.axis_row.unwrap_or(0.5 * (rows as f64 - 1.0));
    let wy = normalised_gaussian(rows, axis, sigma_px);

    let mut column_means = vec![0.0; cols];
    for &x in positions_um {
        let px = (x - config.origin_um) / config.pitch_um;
        if !(px >= 0.0 && px <= (cols - 1) as f64) {
            return Err(Error::OutsideDomain {
                x,
                lo: config.origin_um,
                hi: config.origin_um + (cols - 1) as f64 * config.pitch_um,
            });
        }
        for (m, w) in column_means.iter_mut().zip(normalised_gaussian(cols, px, sigma_px)) {
            *m += config.ion_counts * w;
        }
    }

    let mut counts = Vec::with_capacity(rows * cols);
    for w in &wy {
        for (c, m) in column_means.iter().enumerate() {
            counts.push(m * w + config.background.at(c, cols));
        }
    }

    if let Some(seed) = config.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(config.stream);
        for v in &mut counts {
            *v = if *v > 0.0 {
                Poisson::new(*v).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng)
            } else {
                0.0
            };
        }
    }
    Frame::new(rows, cols, counts, config.pitch_um, config.origin_um, config.exposure_ms)
}

/// Frame to ion string: column sums, background removal and peak fitting.
/// Positions and uncertainties are converted to internal units.
pub fn extract_string(frame: &Frame, config: &FitConfig) -> Result<(IonString, FitResult)> {
    let profile = column_profile(frame);
    let background = estimate_background(&profile, config.background_window)?;
    let fit = fit_positions(&profile, &background, config)?;
    let units: &UnitSystem = &config.units;
    let x = fit.positions_px.iter().map(|&p| units.um_to_internal(frame.px_to_um(p))).collect();
    let s = fit.sigmas_px.iter().map(|&s| units.um_to_internal(s * frame.pitch_um)).collect();
    let string = IonString::new(x, *units)?.with_uncertainties(s)?;
    Ok((string, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(cols: usize) -> RenderConfig {
        RenderConfig { cols, origin_um: 0.0, background: BackgroundModel::Flat { level: 0.0 }, ..Default::default() }
    }

    #[test]
    fn zero_counts_render_an_empty_frame() {
        let c = RenderConfig { ion_counts: 0.0, ..quiet(40) };
        let f = render_frame(&[20.0], &c).unwrap();
        assert!(f.counts.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_ion_column_profile_is_a_unit_gaussian() {
        let f = render_frame(&[40.6], &quiet(50)).unwrap();
        let p = column_profile(&f);
        let w = normalised_gaussian(50, 20.3, 1.0);
        for (a, b) in p.counts.iter().zip(&w) {
            assert!((a - 1e4 * b).abs() < 1e-9);
        }
        assert!((p.counts.iter().sum::<f64>() - 1e4).abs() < 1e-8);
    }

    #[test]
    fn ten_microns_is_five_pixels() {
        let f = render_frame(&[40.0, 50.0], &quiet(60)).unwrap();
        let p = column_profile(&f);
        let peaks: Vec<usize> = (1..59).filter(|&i| p.counts[i] > p.counts[i - 1] && p.counts[i] > p.counts[i + 1]).collect();
        assert_eq!(peaks, vec![20, 25]);
    }

    #[test]
    fn column_sums() {
        let f = Frame::new(4, 5, vec![1.0; 20], 2.0, 0.0, 100.0).unwrap();
        assert_eq!(column_profile(&f).counts, vec![4.0; 5]);
        let mut spike = vec![0.0; 20];
        spike[2 * 5 + 3] = 7.0;
        let f = Frame::new(4, 5, spike, 2.0, 0.0, 100.0).unwrap();
        assert_eq!(column_profile(&f).counts, vec![0.0, 0.0, 0.0, 7.0, 0.0]);
    }

    #[test]
    fn rendering_errors() {
        assert!(matches!(render_frame(&[500.0], &quiet(50)), Err(Error::OutsideDomain { .. })));
        assert!(render_frame(&[10.0], &RenderConfig { psf_sigma_um: 0.0, ..quiet(50) }).is_err());
        assert!(render_frame(&[10.0], &RenderConfig { ion_counts: -1.0, ..quiet(50) }).is_err());
    }

    #[test]
    fn seeded_frames_repeat() {
        let c = RenderConfig { seed: Some(9), ..Default::default() };
        let a = render_frame(&[0.0, 10.0], &c).unwrap();
        let b = render_frame(&[0.0, 10.0], &c).unwrap();
        assert_eq!(a, b);
        let other = render_frame(&[0.0, 10.0], &RenderConfig { stream: 1, ..c }).unwrap();
        assert_ne!(a, other);
        assert!(a.counts.iter().all(|v| v.fract() == 0.0));
    }

    #[test]
    fn empty_frame_has_no_peaks() {
        let f = Frame::new(5, 60, vec![0.0; 300], 2.0, 0.0, 100.0).unwrap();
        assert!(matches!(extract_string(&f, &FitConfig::default()), Err(Error::NoPeaks)));
    }
}
