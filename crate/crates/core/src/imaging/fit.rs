//! Sub-pixel ion positions from a background-subtracted column profile.
//!
//! Peaks are detected above a robust noise threshold, located by a
//! count-weighted centroid, then refined by a three-parameter Gaussian
//! (amplitude, centre, width) fitted by Levenberg-Marquardt with Poisson
//! weights. A few sweeps fit each peak against the data minus its
//! neighbours' current models; a joint fit of all peaks with one shared
//! width then settles the overlaps and gives the position covariance.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::background::{median, robust_sigma, DEFAULT_BACKGROUND_WINDOW};
use super::Profile1D;
use crate::error::{Error, Result};
use crate::units::UnitSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub psf_sigma_px: f64,
    pub background_window: usize,
    /// Detection threshold in units of the robust noise level.
    pub threshold_sigmas: f64,
    /// Fitted peaks closer than this are reported as merged.
    pub merge_px: f64,
    /// Single-peak sweeps before the joint fit.
    pub sweeps: usize,
    pub units: UnitSystem,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            psf_sigma_px: 1.0,
            background_window: DEFAULT_BACKGROUND_WINDOW,
            threshold_sigmas: 5.0,
            merge_px: 2.0,
            sweeps: 3,
            units: UnitSystem::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub positions_px: Vec<f64>,
    /// One-sigma position uncertainties.
    pub sigmas_px: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub widths_px: Vec<f64>,
    pub background: Vec<f64>,
    /// Index pairs of neighbouring peaks closer than the merge distance.
    pub merged: Vec<(usize, usize)>,
}

impl FitResult {
    pub fn len(&self) -> usize {
        self.positions_px.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions_px.is_empty()
    }

    pub fn positions_um(&self, pitch_um: f64, origin_um: f64) -> Vec<f64> {
        self.positions_px.iter().map(|p| origin_um + p * pitch_um).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Peak {
    amplitude: f64,
    center: f64,
    width: f64,
    sigma: f64,
    /// Detection column; the fit window stays centred here.
    anchor: usize,
}

impl Peak {
    fn model(&self, x: f64) -> f64 {
        self.amplitude * (-0.5 * ((x - self.center) / self.width).powi(2)).exp()
    }
}

/// Fewest negative samples trusted for a lower-tail noise estimate.
const MIN_TAIL_SAMPLES: usize = 8;

/// Noise from the negative side of a background-subtracted profile, which
/// ion light never reaches. Unlike a MAD over all columns it stays honest
/// when peaks cover most of the profile.
fn lower_tail_sigma(signal: &[f64]) -> Option<f64> {
    let mut below: Vec<f64> = signal.iter().filter(|v| **v < 0.0).map(|v| -v).collect();
    if below.len() < MIN_TAIL_SAMPLES {
        return None;
    }
    // Median of |N(0, s)| is 0.6745 s.
    Some(1.4826 * median(&mut below))
}

/// Local maxima above threshold. A flat top counts once, at its middle.
fn detect(signal: &[f64], threshold: f64) -> Vec<usize> {
    let n = signal.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if signal[i] > signal[i - 1] {
            let mut j = i;
            while j + 1 < n && signal[j + 1] == signal[i] {
                j += 1;
            }
            if j + 1 < n && signal[j + 1] < signal[i] && signal[i] > threshold {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

pub fn fit_positions(profile: &Profile1D, background: &[f64], config: &FitConfig) -> Result<FitResult> {
    let n = profile.len();
    if background.len() != n {
        return Err(Error::invalid(format!("background has {} columns, profile {n}", background.len())));
    }
    if !(config.psf_sigma_px > 0.0) {
        return Err(Error::invalid("PSF width must be positive"));
    }
    let signal: Vec<f64> = profile.counts.iter().zip(background).map(|(p, b)| p - b).collect();
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("background-subtracted profile".into()));
    }
    let noise = match lower_tail_sigma(&signal) {
        Some(t) => t.min(robust_sigma(&signal)),
        None => robust_sigma(&signal),
    };
    let top = signal.iter().copied().fold(0.0f64, f64::max);
    let threshold = (config.threshold_sigmas * noise).max(1e-9 * top);
    let anchors = detect(&signal, threshold);
    if anchors.is_empty() {
        return Err(Error::NoPeaks);
    }

    let half = (3.0 * config.psf_sigma_px).ceil() as usize;
    let window = |a: usize| (a.saturating_sub(half), (a + half).min(n - 1));
    // Poisson variance of the raw counts, floored at one count.
    let variance: Vec<f64> = profile.counts.iter().map(|c| c.max(1.0)).collect();

    let mut peaks: Vec<Peak> = anchors
        .iter()
        .map(|&a| {
            let (lo, hi) = window(a);
            let (mut sw, mut swx) = (0.0, 0.0);
            for c in lo..=hi {
                let w = signal[c].max(0.0);
                sw += w;
                swx += w * c as f64;
            }
            let center = if sw > 0.0 { swx / sw } else { a as f64 };
            Peak { amplitude: signal[a], center, width: config.psf_sigma_px, sigma: f64::NAN, anchor: a }
        })
        .collect();

    for _ in 0..config.sweeps {
        peaks = (0..peaks.len())
            .map(|k| {
                let (lo, hi) = window(peaks[k].anchor);
                let data: Vec<(f64, f64, f64)> = (lo..=hi)
                    .map(|c| {
                        let x = c as f64;
                        let others: f64 = peaks
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != k)
                            .map(|(_, p)| p.model(x))
                            .sum();
                        (x, signal[c] - others, 1.0 / variance[c])
                    })
                    .collect();
                levenberg_marquardt(peaks[k], &data, (lo as f64 - 0.5, hi as f64 + 0.5))
            })
            .collect();
    }
    let columns: Vec<usize> = (0..n)
        .filter(|&c| peaks.iter().any(|p| {
            let (lo, hi) = window(p.anchor);
            c >= lo && c <= hi
        }))
        .collect();
    let data: Vec<(f64, f64, f64)> = columns.iter().map(|&c| (c as f64, signal[c], 1.0 / variance[c])).collect();
    let bounds: Vec<(f64, f64)> = peaks
        .iter()
        .map(|p| {
            let (lo, hi) = window(p.anchor);
            (lo as f64 - 0.5, hi as f64 + 0.5)
        })
        .collect();
    joint_fit(&mut peaks, &data, &bounds);

    peaks.sort_by(|a, b| a.center.total_cmp(&b.center));
    let merged = peaks
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].center - w[0].center < config.merge_px)
        .map(|(i, _)| (i, i + 1))
        .collect();
    Ok(FitResult {
        positions_px: peaks.iter().map(|p| p.center).collect(),
        sigmas_px: peaks.iter().map(|p| p.sigma).collect(),
        amplitudes: peaks.iter().map(|p| p.amplitude).collect(),
        widths_px: peaks.iter().map(|p| p.width).collect(),
        background: background.to_vec(),
        merged,
    })
}

/// Model value and derivatives with respect to every amplitude and
/// centre, then the shared width (last entry).
fn jacobian_row(peaks: &[Peak], width: f64, x: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut dw = 0.0;
    let mut row = Vec::with_capacity(2 * peaks.len() + 1);
    for p in peaks {
        let u = (x - p.center) / width;
        let g = (-0.5 * u * u).exp();
        value += p.amplitude * g;
        row.extend([g, p.amplitude * g * u / width]);
        dw += p.amplitude * g * u * u / width;
    }
    row.push(dw);
    (value, row)
}

/// Levenberg-Marquardt on all peaks at once with one width shared by every
/// peak, as all ions are imaged through the same optics. Sets each peak's
/// position uncertainty from the joint covariance.
fn joint_fit(peaks: &mut [Peak], data: &[(f64, f64, f64)], bounds: &[(f64, f64)]) {
    let n = peaks.len();
    let m = 2 * n + 1;
    let chi2 = |ps: &[Peak], w: f64| data.iter().map(|&(x, y, wt)| wt * (y - jacobian_row(ps, w, x).0).powi(2)).sum::<f64>();
    let normal = |ps: &[Peak], w: f64| {
        let mut jtj = DMatrix::<f64>::zeros(m, m);
        let mut jtr = DVector::<f64>::zeros(m);
        for &(x, y, wt) in data {
            let (v, row) = jacobian_row(ps, w, x);
            let r = y - v;
            for a in 0..m {
                if row[a] == 0.0 {
                    continue;
                }
                jtr[a] += wt * row[a] * r;
                for b in a..m {
                    jtj[(a, b)] += wt * row[a] * row[b];
                }
            }
        }
        jtj.fill_lower_triangle_with_upper_triangle();
        (jtj, jtr)
    };

    let mut widths: Vec<f64> = peaks.iter().map(|p| p.width).collect();
    let mut width = median(&mut widths);
    let mut current = chi2(peaks, width);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let (jtj, jtr) = normal(peaks, width);
        let mut damped = jtj.clone();
        for d in 0..m {
            damped[(d, d)] += lambda * jtj[(d, d)].max(f64::MIN_POSITIVE);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
            continue;
        };
        let trial: Vec<Peak> = peaks
            .iter()
            .enumerate()
            .map(|(k, p)| Peak { amplitude: p.amplitude + step[2 * k], center: p.center + step[2 * k + 1], ..*p })
            .collect();
        let trial_width = width + step[2 * n];
        let admissible = trial_width > 0.0
            && trial.iter().zip(bounds).all(|(p, b)| p.amplitude > 0.0 && p.center > b.0 && p.center < b.1);
        let value = if admissible { chi2(&trial, trial_width) } else { f64::INFINITY };
        if value <= current {
            let moved = (0..n).map(|k| step[2 * k + 1].abs()).fold(0.0, f64::max);
            peaks.copy_from_slice(&trial);
            width = trial_width;
            let settled = moved < 1e-13 && (current - value) <= 1e-15 * current;
            current = value;
            lambda = (lambda * 0.1).max(1e-12);
            if settled {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    for p in peaks.iter_mut() {
        p.width = width;
    }
    let (jtj, _) = normal(peaks, width);
    if let Some(cov) = jtj.try_inverse() {
        for (k, p) in peaks.iter_mut().enumerate() {
            let v = cov[(2 * k + 1, 2 * k + 1)];
            if v > 0.0 {
                p.sigma = v.sqrt();
            }
        }
    }
}

/// Weighted Gaussian fit of `(x, y, weight)` samples. The centre is kept
/// inside `bounds`; a failed refinement leaves the starting centre with a
/// centroid-style uncertainty.
fn levenberg_marquardt(start: Peak, data: &[(f64, f64, f64)], bounds: (f64, f64)) -> Peak {
    let chi2 = |p: &Peak| data.iter().map(|&(x, y, w)| w * (y - p.model(x)).powi(2)).sum::<f64>();
    let normal = |p: &Peak| {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for &(x, y, w) in data {
            let u = (x - p.center) / p.width;
            let g = (-0.5 * u * u).exp();
            let j = Vector3::new(g, p.amplitude * g * u / p.width, p.amplitude * g * u * u / p.width);
            jtj += w * j * j.transpose();
            jtr += w * j * (y - p.amplitude * g);
        }
        (jtj, jtr)
    };

    let mut p = start;
    let mut current = chi2(&p);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let (jtj, jtr) = normal(&p);
        let mut damped = jtj;
        for d in 0..3 {
            damped[(d, d)] += lambda * jtj[(d, d)].max(f64::MIN_POSITIVE);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
            continue;
        };
        let trial = Peak { amplitude: p.amplitude + step[0], center: p.center + step[1], width: p.width + step[2], ..p };
        let admissible =
            trial.amplitude > 0.0 && trial.width > 0.0 && trial.center > bounds.0 && trial.center < bounds.1;
        let value = if admissible { chi2(&trial) } else { f64::INFINITY };
        if value <= current {
            let small = step[1].abs() < 1e-14 * (1.0 + p.center.abs()) && (current - value) <= 1e-15 * current;
            p = trial;
            current = value;
            lambda = (lambda * 0.1).max(1e-12);
            if small {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    let (jtj, _) = normal(&p);
    p.sigma = match jtj.try_inverse() {
        Some(cov) if cov[(1, 1)] > 0.0 => cov[(1, 1)].sqrt(),
        _ => {
            // Centroid error for Poisson counts.
            let total: f64 = data.iter().map(|&(_, y, _)| y.max(0.0)).sum();
            p.width / total.max(1.0).sqrt()
        }
    };
    p
}
