//! Inverse method: ion positions to an axial potential curve.
//!
//! At equilibrium the external force on ion `i` is the negative of the
//! Coulomb force it feels from the rest of the string. Those N force
//! samples are interpolated with a shape-preserving cubic Hermite scheme and
//! integrated exactly; the potential is `psi(x) = -int F_ext dx` up to an
//! unknown constant, fixed here by an explicit [`OffsetConvention`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pchip::Pchip;
use crate::physics::{self, ForceSample, IonString};

/// How the unknown integration constant is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffsetConvention {
    /// Minimum over the grid is zero.
    MinZero,
    /// Mean over the grid is zero.
    MeanZero,
    /// Value at the given position (internal units) is zero.
    Anchor(f64),
}

impl Default for OffsetConvention {
    fn default() -> Self {
        OffsetConvention::MinZero
    }
}

impl std::str::FromStr for OffsetConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-zero" => Ok(OffsetConvention::MinZero),
            "mean-zero" => Ok(OffsetConvention::MeanZero),
            _ => match s.strip_prefix("anchor=") {
                Some(v) => v
                    .parse::<f64>()
                    .map(OffsetConvention::Anchor)
                    .map_err(|e| Error::Parse(format!("anchor position {v:?}: {e}"))),
                None => Err(Error::Parse(format!(
                    "unknown offset convention {s:?} (expected min-zero, mean-zero or anchor=<x>)"
                ))),
            },
        }
    }
}

impl std::fmt::Display for OffsetConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OffsetConvention::MinZero => write!(f, "min-zero"),
            OffsetConvention::MeanZero => write!(f, "mean-zero"),
            OffsetConvention::Anchor(x) => write!(f, "anchor={x}"),
        }
    }
}

/// Output sampling of a reconstructed curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// Points at integer multiples of the spacing inside the domain. Curves
    /// built with the same spacing share grid points, so they can be
    /// differenced without resampling.
    Spacing(f64),
    /// This many points spread uniformly over the domain, ends included.
    Points(usize),
}

impl GridSpec {
    pub fn build(&self, lo: f64, hi: f64) -> Result<Vec<f64>> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("empty domain [{lo}, {hi}]")));
        }
        let grid = match *self {
            GridSpec::Spacing(step) => {
                if !(step > 0.0 && step.is_finite()) {
                    return Err(Error::invalid(format!("grid spacing must be positive, got {step}")));
                }
                let (first, last) = lattice_range(lo, hi, step);
                (first..=last).map(|k| k as f64 * step).collect::<Vec<_>>()
            }
            GridSpec::Points(n) => {
                if n < 2 {
                    return Err(Error::invalid("a grid needs at least two points"));
                }
                (0..n)
                    .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
                    .collect()
            }
        };
        if grid.len() < 2 {
            return Err(Error::invalid(format!(
                "grid {self:?} leaves fewer than two points on [{lo}, {hi}]"
            )));
        }
        Ok(grid)
    }

    pub fn lattice_spacing(&self) -> Option<f64> {
        match *self {
            GridSpec::Spacing(s) => Some(s),
            GridSpec::Points(_) => None,
        }
    }
}

/// Indices of the first and last lattice points inside `[lo, hi]`.
pub(crate) fn lattice_range(lo: f64, hi: f64, step: f64) -> (i64, i64) {
    let mut first = (lo / step).ceil() as i64;
    if (first as f64) * step < lo {
        first += 1;
    }
    let mut last = (hi / step).floor() as i64;
    if (last as f64) * step > hi {
        last -= 1;
    }
    (first, last)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionOptions {
    pub grid: GridSpec,
    pub offset: OffsetConvention,
}

impl Default for ReconstructionOptions {
    /// 1 um spacing in the default (micrometer) unit system.
    fn default() -> Self {
        Self { grid: GridSpec::Spacing(1.0), offset: OffsetConvention::MinZero }
    }
}

/// Sampled potential on the span of the ions that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialCurve {
    pub x: Vec<f64>,
    pub psi: Vec<f64>,
    /// Pointwise 1-sigma band, when an uncertainty estimate was made.
    pub sigma: Option<Vec<f64>>,
    /// Convex hull of the source positions; never exceeded.
    pub domain: (f64, f64),
    pub convention: OffsetConvention,
    /// Lattice spacing, when the grid is lattice aligned.
    pub spacing: Option<f64>,
}

impl PotentialCurve {
    pub fn new(x: Vec<f64>, psi: Vec<f64>, domain: (f64, f64), spacing: Option<f64>) -> Result<Self> {
        if x.len() != psi.len() || x.len() < 2 {
            return Err(Error::invalid("a curve needs at least two samples and matching lengths"));
        }
        if x.iter().chain(&psi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve samples".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Unordered { index: 0, min_gap: 0.0 });
        }
        if x[0] < domain.0 || x[x.len() - 1] > domain.1 {
            return Err(Error::invalid("curve samples extend beyond the curve domain"));
        }
        Ok(Self { x, psi, sigma: None, domain, convention: OffsetConvention::MeanZero, spacing })
    }

    /// Samples `f` on a grid over `domain`.
    pub fn from_fn(domain: (f64, f64), grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        let x = grid.build(domain.0, domain.1)?;
        let psi = x.iter().map(|&t| f(t)).collect();
        Self::new(x, psi, domain, grid.lattice_spacing())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Lattice index of the first sample.
    pub fn lattice_start(&self) -> Option<i64> {
        self.spacing.map(|s| (self.x[0] / s).round() as i64)
    }

    pub fn interpolant(&self) -> Result<Pchip> {
        Pchip::new(self.x.clone(), self.psi.clone())
    }

    /// Value at `x`: the stored sample on a grid point, otherwise the
    /// shape-preserving interpolant between samples.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        if let Some(v) = self.sample_at(x) {
            return Ok(v);
        }
        self.interpolant()?.value(x)
    }

    pub(crate) fn sample_at(&self, x: f64) -> Option<f64> {
        let s = self.spacing?;
        let k = (x / s).round() as i64;
        if (x - k as f64 * s).abs() > 1e-9 * s {
            return None;
        }
        let i = k - self.lattice_start()?;
        (0..self.x.len() as i64).contains(&i).then(|| self.psi[i as usize])
    }

    pub fn min(&self) -> f64 {
        self.psi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.psi.iter().sum::<f64>() / self.psi.len() as f64
    }

    pub fn shift(&mut self, c: f64) {
        for v in &mut self.psi {
            *v += c;
        }
    }

    /// Re-fixes the integration constant.
    pub fn apply_offset(&mut self, convention: OffsetConvention) -> Result<()> {
        let reference = match convention {
            OffsetConvention::MinZero => self.min(),
            OffsetConvention::MeanZero => self.mean(),
            OffsetConvention::Anchor(x0) => {
                if x0 < self.domain.0 || x0 > self.domain.1 {
                    return Err(Error::OutsideDomain { x: x0, lo: self.domain.0, hi: self.domain.1 });
                }
                let lo = self.x[0];
                let hi = self.x[self.x.len() - 1];
                self.value_at(x0.clamp(lo, hi))?
            }
        };
        for v in &mut self.psi {
            *v -= reference;
        }
        self.convention = convention;
        Ok(())
    }
}

/// External force at each ion: the negative of its Coulomb force.
pub fn external_force_samples(string: &IonString) -> Result<Vec<ForceSample>> {
    physics::check_ordered(string.positions())?;
    let forces = physics::coulomb_forces(string.positions());
    Ok(string
        .positions()
        .iter()
        .zip(forces)
        .enumerate()
        .map(|(ion, (&position, f))| ForceSample { position, force: -f, ion })
        .collect())
}

/// Continuous external force on the span of the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceInterpolant {
    pchip: Pchip,
}

impl ForceInterpolant {
    pub fn domain(&self) -> (f64, f64) {
        self.pchip.domain()
    }

    pub fn force(&self, x: f64) -> Result<f64> {
        self.pchip.value(x)
    }

    /// `-int_{x_1}^{x} F dx'`
    pub fn potential(&self, x: f64) -> Result<f64> {
        Ok(-self.pchip.integral(x)?)
    }
}

pub fn interpolate_force(samples: &[ForceSample]) -> Result<ForceInterpolant> {
    if samples.len() < 2 {
        return Err(Error::invalid("force interpolation needs at least two samples"));
    }
    let x = samples.iter().map(|s| s.position).collect();
    let f = samples.iter().map(|s| s.force).collect();
    Ok(ForceInterpolant { pchip: Pchip::new(x, f)? })
}

pub fn integrate_potential(
    force: &ForceInterpolant,
    grid: GridSpec,
    offset: OffsetConvention,
) -> Result<PotentialCurve> {
    let domain = force.domain();
    let x = grid.build(domain.0, domain.1)?;
    let psi = x.iter().map(|&t| force.potential(t)).collect::<Result<Vec<_>>>()?;
    let mut curve = PotentialCurve::new(x, psi, domain, grid.lattice_spacing())?;
    if let OffsetConvention::Anchor(x0) = offset {
        if x0 < domain.0 || x0 > domain.1 {
            return Err(Error::OutsideDomain { x: x0, lo: domain.0, hi: domain.1 });
        }
        let c = force.potential(x0)?;
        curve.shift(-c);
        curve.convention = offset;
    } else {
        curve.apply_offset(offset)?;
    }
    Ok(curve)
}

pub fn reconstruct(string: &IonString, options: &ReconstructionOptions) -> Result<PotentialCurve> {
    if string.len() < 2 {
        return Err(Error::invalid("reconstruction needs at least two ions"));
    }
    let samples = external_force_samples(string)?;
    let force = interpolate_force(&samples)?;
    integrate_potential(&force, options.grid, options.offset)
}

/// Reconstruction with a pointwise band from Monte Carlo resampling of the
/// ion positions with the given per-ion standard deviations.
pub fn reconstruct_with_band(
    string: &IonString,
    sigmas: &[f64],
    replicas: usize,
    seed: u64,
    options: &ReconstructionOptions,
) -> Result<PotentialCurve> {
    if sigmas.len() != string.len() {
        return Err(Error::invalid(format!("{} sigmas for {} ions", sigmas.len(), string.len())));
    }
    if replicas < 2 {
        return Err(Error::invalid("an uncertainty band needs at least two replicas"));
    }
    let mut nominal = reconstruct(string, options)?;
    let units = *string.units();

    let resampled: Vec<Option<PotentialCurve>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut x: Vec<f64> = string
                .positions()
                .iter()
                .zip(sigmas)
                .map(|(&p, &s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    p + s * z
                })
                .collect();
            x.sort_by(f64::total_cmp);
            let s = IonString::new(x, units).ok()?;
            let opts = ReconstructionOptions { offset: OffsetConvention::MeanZero, ..*options };
            reconstruct(&s, &opts).ok()
        })
        .collect();

    let n = nominal.len();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut count = vec![0usize; n];
    for curve in resampled.iter().flatten() {
        let interp = curve.interpolant()?;
        let values: Vec<Option<f64>> = nominal
            .x
            .iter()
            .map(|&t| {
                if t < curve.domain.0 || t > curve.domain.1 {
                    None
                } else {
                    curve
                        .sample_at(t)
                        .or_else(|| interp.value(t.clamp(curve.x[0], curve.x[curve.len() - 1])).ok())
                }
            })
            .collect();
        // Align each replica to the nominal curve before taking moments.
        let (mut diff, mut m) = (0.0, 0usize);
        for (v, p) in values.iter().zip(&nominal.psi) {
            if let Some(v) = v {
                diff += p - v;
                m += 1;
            }
        }
        if m == 0 {
            continue;
        }
        let c = diff / m as f64;
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = v {
                let d = v + c - nominal.psi[i];
                sum[i] += d;
                sum_sq[i] += d * d;
                count[i] += 1;
            }
        }
    }

    let mut sigma: Vec<Option<f64>> = (0..n)
        .map(|i| {
            (count[i] >= 2).then(|| {
                let k = count[i] as f64;
                let mean = sum[i] / k;
                ((sum_sq[i] / k - mean * mean).max(0.0) * k / (k - 1.0)).sqrt()
            })
        })
        .collect();
    if sigma.iter().all(Option::is_none) {
        return Err(Error::invalid("no replica overlapped the nominal curve"));
    }
    // Points only rarely covered by replicas take the nearest defined value.
    let defined: Vec<usize> = (0..n).filter(|&i| sigma[i].is_some()).collect();
    for i in 0..n {
        if sigma[i].is_none() {
            let j = *defined.iter().min_by_key(|&&j| j.abs_diff(i)).expect("non-empty");
            sigma[i] = sigma[j];
        }
    }
    nominal.sigma = Some(sigma.into_iter().map(|s| s.expect("filled")).collect());
    Ok(nominal)
}
