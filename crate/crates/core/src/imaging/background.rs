//! Slowly varying background under a column profile.

use super::Profile1D;
use crate::error::{Error, Result};

pub const DEFAULT_BACKGROUND_WINDOW: usize = 25;

const MAX_PASSES: usize = 10;

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Moving median with odd reflection at both ends, so linear trends pass
/// through unchanged.
fn moving_median(v: &[f64], window: usize) -> Vec<f64> {
    let n = v.len();
    let half = window / 2;
    let at = |i: isize| -> f64 {
        if i < 0 {
            2.0 * v[0] - v[(-i) as usize]
        } else if i as usize >= n {
            let k = i as usize - (n - 1);
            2.0 * v[n - 1] - v[n - 1 - k]
        } else {
            v[i as usize]
        }
    };
    let mut buf = vec![0.0; window];
    (0..n)
        .map(|i| {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = at(i as isize + k as isize - half as isize);
            }
            median(&mut buf)
        })
        .collect()
}

/// Noise level from a median absolute deviation, iteratively clipped at
/// three sigma so that peaks do not inflate it.
pub(crate) fn robust_sigma(values: &[f64]) -> f64 {
    let mut kept: Vec<f64> = values.to_vec();
    let mut sigma = f64::INFINITY;
    for _ in 0..MAX_PASSES {
        if kept.is_empty() {
            return 0.0;
        }
        let med = median(&mut kept.clone());
        let mut dev: Vec<f64> = kept.iter().map(|v| (v - med).abs()).collect();
        let next = 1.4826 * median(&mut dev);
        let clipped: Vec<f64> = kept.iter().copied().filter(|v| (v - med).abs() <= 3.0 * next).collect();
        let done = next == sigma || clipped.len() == kept.len();
        sigma = next;
        kept = clipped;
        if done {
            break;
        }
    }
    sigma
}

/// Moving median of the profile with peaks masked out and bridged by
/// straight lines, repeated until the mask settles.
///
/// `window` must be odd, at least 3 and no wider than the profile; it
/// should comfortably exceed the width of a single peak.
pub fn estimate_background(profile: &Profile1D, window: usize) -> Result<Vec<f64>> {
    let n = profile.len();
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!("background window must be odd and at least 3, got {window}")));
    }
    if window > n {
        return Err(Error::invalid(format!("background window {window} is wider than the {n}-column profile")));
    }
    let p = &profile.counts;
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("column profile".into()));
    }
    let dilation = (window / 8).max(1);
    let mut filled = p.clone();
    let mut mask = vec![false; n];
    let mut background = moving_median(&filled, window);
    for _ in 0..MAX_PASSES {
        let resid: Vec<f64> = p.iter().zip(&background).map(|(a, b)| a - b).collect();
        let unmasked: Vec<f64> = resid.iter().zip(&mask).filter(|(_, m)| !**m).map(|(r, _)| *r).collect();
        let threshold = 3.0 * robust_sigma(&unmasked);
        let mut next = vec![false; n];
        for (i, r) in resid.iter().enumerate() {
            if *r > threshold {
                let lo = i.saturating_sub(dilation);
                let hi = (i + dilation).min(n - 1);
                next[lo..=hi].iter_mut().for_each(|m| *m = true);
            }
        }
        if next == mask {
            break;
        }
        mask = next;
        if mask.iter().all(|&m| m) {
            break;
        }
        filled = bridge(p, &background, &mask);
        background = moving_median(&filled, window);
    }
    Ok(background)
}

/// Masked runs replaced by the line joining the background at the nearest
/// unmasked columns; runs touching an end continue the nearest value.
fn bridge(p: &[f64], background: &[f64], mask: &[bool]) -> Vec<f64> {
    let n = p.len();
    let mut out = p.to_vec();
    let mut i = 0;
    while i < n {
        if !mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && mask[i] {
            i += 1;
        }
        let left = start.checked_sub(1);
        let right = (i < n).then_some(i);
        for (k, o) in out.iter_mut().enumerate().take(i).skip(start) {
            *o = match (left, right) {
                (Some(l), Some(r)) => {
                    let t = (k - l) as f64 / (r - l) as f64;
                    background[l] + t * (background[r] - background[l])
                }
                (Some(l), None) => background[l],
                (None, Some(r)) => background[r],
                (None, None) => background[k],
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(v: Vec<f64>) -> Profile1D {
        Profile1D { counts: v }
    }

    #[test]
    fn flat_and_ramp_are_kept() {
        let flat = estimate_background(&profile(vec![7.5; 60]), 25).unwrap();
        assert!(flat.iter().all(|&b| b == 7.5));
        let ramp: Vec<f64> = (0..80).map(|i| 3.0 + 0.7 * i as f64).collect();
        let b = estimate_background(&profile(ramp.clone()), 25).unwrap();
        for (x, y) in b.iter().zip(&ramp) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn ramp_under_narrow_peaks() {
        let n = 200;
        let ramp: Vec<f64> = (0..n).map(|i| 100.0 + 0.5 * i as f64).collect();
        let peaks = [40.2, 45.1, 50.0, 55.3, 60.0, 120.5, 150.0];
        let v: Vec<f64> = ramp
            .iter()
            .enumerate()
            .map(|(i, r)| r + peaks.iter().map(|c| 800.0 * (-0.5 * (i as f64 - c).powi(2)).exp()).sum::<f64>())
            .collect();
        let b = estimate_background(&profile(v), 25).unwrap();
        let amplitude = ramp[n - 1] - ramp[0];
        let rms = (b.iter().zip(&ramp).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(rms < 0.02 * amplitude, "{rms}");
    }

    #[test]
    fn window_checks() {
        let p = profile(vec![0.0; 20]);
        assert!(estimate_background(&p, 4).is_err());
        assert!(estimate_background(&p, 1).is_err());
        assert!(estimate_background(&p, 21).is_err());
        assert!(estimate_background(&p, 19).is_ok());
    }

    #[test]
    fn robust_sigma_ignores_outliers() {
        let mut v: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let clean = robust_sigma(&v);
        v.extend([50.0; 100]);
        assert!((robust_sigma(&v) - clean).abs() < 0.1 * clean);
    }
}
