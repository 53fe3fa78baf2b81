//! Single-electrode potentials from differences of measured curves.
//!
//! By superposition, two potentials measured with the electrode of interest
//! at `V_A + delta_a` and `V_A + delta_b` (everything else fixed) differ by
//! `(delta_a - delta_b)` times that electrode's unit potential. Each such
//! difference is only known up to a constant and only where both curves
//! exist, so the segments from many pairs are aligned by least squares on
//! their overlaps and then averaged pointwise.

mod contour;
mod shuttle;

pub use contour::{equipotential_contours, Contour, DEFAULT_CONTOUR_SPACING_MEV};
pub use shuttle::{
    find_wells, shuttle_map_from_curves, shuttle_scan, ColumnStatus, DeltaScenario, ShuttleConfig,
    ShuttleScanMap, WellMinimum,
};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruction::{lattice_range, PotentialCurve};

/// Smallest usable voltage difference between the two curves of a pair.
pub const DEFAULT_DELTA_MIN_V: f64 = 0.010;

/// Background voltages closer than this are treated as equal.
const VOLTAGE_MATCH_V: f64 = 1e-9;

/// One reconstructed potential together with the voltages it was taken at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    /// Applied electrode voltages, including the perturbation.
    pub voltages: Vec<f64>,
    /// Perturbation applied to the electrode of interest.
    pub delta: f64,
    pub curve: PotentialCurve,
}

/// `(psi_a - psi_b) / (delta_a - delta_b)` on the overlap of two curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSegment {
    pub interval: (f64, f64),
    pub spacing: f64,
    /// Lattice index of the first value.
    pub start_index: i64,
    pub values: Vec<f64>,
    /// Always false: a difference of two curves with unknown integration
    /// constants carries its own unknown constant.
    pub offset_known: bool,
    pub pair: (usize, usize),
    pub delta_difference: f64,
}

impl DifferenceSegment {
    pub fn x(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| (self.start_index + i as i64) as f64 * self.spacing).collect()
    }

    fn end_index(&self) -> i64 {
        self.start_index + self.values.len() as i64 - 1
    }

    fn at(&self, k: i64) -> f64 {
        self.values[(k - self.start_index) as usize]
    }
}

pub fn pairwise_difference(
    a: &MeasurementRecord,
    b: &MeasurementRecord,
    electrode: usize,
    spacing: f64,
    delta_min: f64,
) -> Result<DifferenceSegment> {
    difference_indexed(a, b, (0, 1), electrode, spacing, delta_min)
}

fn difference_indexed(
    a: &MeasurementRecord,
    b: &MeasurementRecord,
    pair: (usize, usize),
    electrode: usize,
    spacing: f64,
    delta_min: f64,
) -> Result<DifferenceSegment> {
    if a.voltages.len() != b.voltages.len() {
        return Err(Error::invalid("records have different electrode counts"));
    }
    if electrode >= a.voltages.len() {
        return Err(Error::IndexOutOfRange { index: electrode, count: a.voltages.len() });
    }
    let dd = a.delta - b.delta;
    if !(dd.abs() >= delta_min) || dd == 0.0 {
        return Err(Error::DegeneratePair { difference: dd.abs(), minimum: delta_min });
    }
    for (m, (va, vb)) in a.voltages.iter().zip(&b.voltages).enumerate() {
        if m != electrode && (va - vb).abs() > VOLTAGE_MATCH_V {
            return Err(Error::BackgroundMismatch { electrode: m, a: *va, b: *vb });
        }
    }
    let applied = a.voltages[electrode] - b.voltages[electrode];
    if (applied - dd).abs() > VOLTAGE_MATCH_V.max(1e-9 * dd.abs()) {
        return Err(Error::invalid(format!(
            "electrode {electrode} voltages differ by {applied} V but deltas differ by {dd} V"
        )));
    }
    if !(spacing > 0.0) {
        return Err(Error::invalid("grid spacing must be positive"));
    }

    let sample_range = |c: &PotentialCurve| (c.x[0], c.x[c.len() - 1]);
    let (alo, ahi) = sample_range(&a.curve);
    let (blo, bhi) = sample_range(&b.curve);
    let lo = alo.max(blo);
    let hi = ahi.min(bhi);
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    let (first, last) = lattice_range(lo, hi, spacing);
    if last <= first {
        return Err(Error::NoOverlap);
    }
    let ia = a.curve.interpolant()?;
    let ib = b.curve.interpolant()?;
    let values = (first..=last)
        .map(|k| {
            let x = k as f64 * spacing;
            let pa = match a.curve.sample_at(x) {
                Some(v) => v,
                None => ia.value(x)?,
            };
            let pb = match b.curve.sample_at(x) {
                Some(v) => v,
                None => ib.value(x)?,
            };
            Ok((pa - pb) / dd)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DifferenceSegment {
        interval: (first as f64 * spacing, last as f64 * spacing),
        spacing,
        start_index: first,
        values,
        offset_known: false,
        pair,
        delta_difference: dd,
    })
}

/// Additive constants that best reconcile segments on their overlaps, with
/// the first segment as the gauge reference (`c_0 = 0`).
pub fn align_offsets(segments: &[DifferenceSegment]) -> Result<Vec<f64>> {
    let n = segments.len();
    if n == 0 {
        return Err(Error::invalid("no segments to align"));
    }
    let spacing = segments[0].spacing;
    if segments.iter().any(|s| ((s.spacing - spacing) / spacing).abs() > 1e-12) {
        return Err(Error::invalid("segments must share one grid spacing"));
    }

    let mut laplacian = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut parent: Vec<usize> = (0..n).collect();
    for j in 0..n {
        for k in j + 1..n {
            let lo = segments[j].start_index.max(segments[k].start_index);
            let hi = segments[j].end_index().min(segments[k].end_index());
            if hi < lo {
                continue;
            }
            let count = (hi - lo + 1) as f64;
            let s: f64 = (lo..=hi).map(|i| segments[j].at(i) - segments[k].at(i)).sum();
            laplacian[(j, j)] += count;
            laplacian[(k, k)] += count;
            laplacian[(j, k)] -= count;
            laplacian[(k, j)] -= count;
            rhs[j] -= s;
            rhs[k] += s;
            union(&mut parent, j, k);
        }
    }

    let root = find(&mut parent, 0);
    if (0..n).any(|j| find(&mut parent, j) != root) {
        let mut groups: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for (j, s) in segments.iter().enumerate() {
            let r = find(&mut parent, j);
            let e = groups.entry(r).or_insert((f64::INFINITY, f64::NEG_INFINITY));
            e.0 = e.0.min(s.interval.0);
            e.1 = e.1.max(s.interval.1);
        }
        let mut components: Vec<(f64, f64)> = groups.into_values().collect();
        components.sort_by(|a, b| a.0.total_cmp(&b.0));
        return Err(Error::DisconnectedOverlap { components });
    }
    if n == 1 {
        return Ok(vec![0.0]);
    }

    let reduced = laplacian.view((1, 1), (n - 1, n - 1)).into_owned();
    let b = rhs.rows(1, n - 1).into_owned();
    let c = match reduced.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => reduced
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::invalid("offset alignment system is singular"))?,
    };
    let mut offsets = vec![0.0];
    offsets.extend(c.iter());
    Ok(offsets)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Weight each segment by (delta_a - delta_b)^2, the inverse of its
    /// noise variance when curve errors do not depend on delta.
    DeltaSquared,
}

/// Stitched unit-voltage potential of one electrode, in internal energy
/// units per volt. Only grid points covered by at least one segment are
/// present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeUnitPotential {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    /// Pointwise (weighted) standard deviation across segments.
    pub spread: Vec<f64>,
    pub count: Vec<usize>,
    pub spacing: f64,
}

impl ElectrodeUnitPotential {
    pub fn extent(&self) -> f64 {
        self.x[self.x.len() - 1] - self.x[0]
    }

    pub fn shift(&mut self, c: f64) {
        for v in &mut self.mean {
            *v += c;
        }
    }

    /// Shifts the curve to best match `reference` in least squares.
    pub fn align_to(&mut self, reference: impl Fn(f64) -> f64) {
        let c = self.x.iter().zip(&self.mean).map(|(&x, &m)| reference(x) - m).sum::<f64>() / self.x.len() as f64;
        self.shift(c);
    }
}

pub fn stitch_average(
    segments: &[DifferenceSegment],
    offsets: &[f64],
    weighting: Weighting,
) -> Result<ElectrodeUnitPotential> {
    if segments.is_empty() {
        return Err(Error::invalid("no segments to stitch"));
    }
    if offsets.len() != segments.len() {
        return Err(Error::invalid(format!("{} offsets for {} segments", offsets.len(), segments.len())));
    }
    let spacing = segments[0].spacing;
    let lo = segments.iter().map(|s| s.start_index).min().expect("non-empty");
    let hi = segments.iter().map(|s| s.end_index()).max().expect("non-empty");

    let mut out = ElectrodeUnitPotential { x: vec![], mean: vec![], spread: vec![], count: vec![], spacing };
    for k in lo..=hi {
        let mut contributions = Vec::new();
        for (s, c) in segments.iter().zip(offsets) {
            if k >= s.start_index && k <= s.end_index() {
                let w = match weighting {
                    Weighting::Uniform => 1.0,
                    Weighting::DeltaSquared => s.delta_difference * s.delta_difference,
                };
                contributions.push((s.at(k) + c, w));
            }
        }
        if contributions.is_empty() {
            continue;
        }
        let wsum: f64 = contributions.iter().map(|(_, w)| w).sum();
        let mean = contributions.iter().map(|(v, w)| v * w).sum::<f64>() / wsum;
        let var = contributions.iter().map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / wsum;
        out.x.push(k as f64 * spacing);
        out.mean.push(mean);
        out.spread.push(var.sqrt());
        out.count.push(contributions.len());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PairSelection {
    /// Every pair of records with distinct deltas.
    #[default]
    All,
    /// Only neighbours in delta order.
    Adjacent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolationConfig {
    pub electrode: usize,
    pub delta_min: f64,
    pub pairs: PairSelection,
    pub weighting: Weighting,
    /// Common grid spacing; defaults to the finest source-curve spacing.
    pub spacing: Option<f64>,
}

impl IsolationConfig {
    pub fn new(electrode: usize) -> Self {
        Self {
            electrode,
            delta_min: DEFAULT_DELTA_MIN_V,
            pairs: PairSelection::All,
            weighting: Weighting::Uniform,
            spacing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isolation {
    pub segments: Vec<DifferenceSegment>,
    pub offsets: Vec<f64>,
    pub unit: ElectrodeUnitPotential,
    /// Pairs with matching backgrounds whose curves did not overlap.
    pub skipped: Vec<(usize, usize)>,
}

/// Candidate pairs: records with identical background voltages, split by
/// the selection policy.
pub fn select_pairs(records: &[MeasurementRecord], config: &IsolationConfig) -> Vec<(usize, usize)> {
    let mut groups: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = r
            .voltages
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != config.electrode)
            .map(|(_, v)| (v / VOLTAGE_MATCH_V).round() as i64)
            .collect();
        groups.entry(key).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for mut members in groups.into_values() {
        members.sort_by(|&a, &b| records[a].delta.total_cmp(&records[b].delta).then(a.cmp(&b)));
        match config.pairs {
            PairSelection::All => {
                for (p, &i) in members.iter().enumerate() {
                    for &j in &members[p + 1..] {
                        if (records[i].delta - records[j].delta).abs() >= config.delta_min {
                            pairs.push((i.min(j), i.max(j)));
                        }
                    }
                }
            }
            PairSelection::Adjacent => {
                for w in members.windows(2) {
                    if (records[w[0]].delta - records[w[1]].delta).abs() >= config.delta_min {
                        pairs.push((w[0].min(w[1]), w[0].max(w[1])));
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Differencing, alignment and stitching in one pass.
pub fn isolate_electrode(records: &[MeasurementRecord], config: &IsolationConfig) -> Result<Isolation> {
    if records.len() < 2 {
        return Err(Error::invalid("isolation needs at least two records"));
    }
    let spacing = match config.spacing {
        Some(s) => s,
        None => records
            .iter()
            .map(|r| r.curve.spacing.unwrap_or_else(|| min_step(&r.curve.x)))
            .fold(f64::INFINITY, f64::min),
    };
    let pairs = select_pairs(records, config);
    if pairs.is_empty() {
        let spread = records.iter().map(|r| r.delta).fold(f64::NEG_INFINITY, f64::max)
            - records.iter().map(|r| r.delta).fold(f64::INFINITY, f64::min);
        return Err(Error::DegeneratePair { difference: spread, minimum: config.delta_min });
    }
    let mut segments = Vec::new();
    let mut skipped = Vec::new();
    for (i, j) in pairs {
        match difference_indexed(&records[i], &records[j], (i, j), config.electrode, spacing, config.delta_min) {
            Ok(s) => segments.push(s),
            Err(Error::NoOverlap) => skipped.push((i, j)),
            Err(e) => return Err(e),
        }
    }
    if segments.is_empty() {
        return Err(Error::NoOverlap);
    }
    let offsets = align_offsets(&segments)?;
    let unit = stitch_average(&segments, &offsets, config.weighting)?;
    Ok(Isolation { segments, offsets, unit, skipped })
}

fn min_step(x: &[f64]) -> f64 {
    x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::GridSpec;

    fn record(delta: f64, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> MeasurementRecord {
        let curve = PotentialCurve::from_fn((lo, hi), GridSpec::Spacing(0.5), f).unwrap();
        MeasurementRecord { voltages: vec![1.0, 2.0 + delta, 3.0], delta, curve }
    }

    fn u(x: f64) -> f64 {
        1.0 / (1.0 + 0.01 * x * x)
    }

    #[test]
    fn linear_model_pairs_give_the_unit_potential() {
        let base = |x: f64| 0.02 * x * x;
        let a = record(0.3, -20.0, 15.0, |x| base(x) + 0.3 * u(x) + 4.0);
        let b = record(0.1, -10.0, 25.0, |x| base(x) + 0.1 * u(x) - 1.0);
        let s = pairwise_difference(&a, &b, 1, 0.5, DEFAULT_DELTA_MIN_V).unwrap();
        assert_eq!(s.interval, (-10.0, 15.0));
        let c = s.values[0] - u(-10.0);
        for (x, v) in s.x().iter().zip(&s.values) {
            assert!((v - u(*x) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_deltas_are_degenerate() {
        let a = record(0.2, 0.0, 10.0, u);
        assert!(matches!(
            pairwise_difference(&a, &a.clone(), 1, 0.5, DEFAULT_DELTA_MIN_V),
            Err(Error::DegeneratePair { .. })
        ));
        let b = record(0.205, 0.0, 10.0, u);
        assert!(matches!(
            pairwise_difference(&a, &b, 1, 0.5, DEFAULT_DELTA_MIN_V),
            Err(Error::DegeneratePair { .. })
        ));
    }

    #[test]
    fn mismatched_background_and_disjoint_curves() {
        let a = record(0.2, 0.0, 10.0, u);
        let mut b = record(0.0, 0.0, 10.0, u);
        b.voltages[0] = 1.5;
        assert!(matches!(pairwise_difference(&a, &b, 1, 0.5, 0.01), Err(Error::BackgroundMismatch { electrode: 0, .. })));
        let c = record(0.0, 20.0, 30.0, u);
        assert!(matches!(pairwise_difference(&a, &c, 1, 0.5, 0.01), Err(Error::NoOverlap)));
    }

    fn segment(start: i64, values: Vec<f64>) -> DifferenceSegment {
        DifferenceSegment {
            interval: (start as f64, (start + values.len() as i64 - 1) as f64),
            spacing: 1.0,
            start_index: start,
            values,
            offset_known: false,
            pair: (0, 1),
            delta_difference: 0.1,
        }
    }

    #[test]
    fn shifted_copies_align() {
        let v: Vec<f64> = (0..10).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = segment(0, v.clone());
        let b = segment(0, v.iter().map(|x| x + 0.7).collect());
        let c = align_offsets(&[a.clone(), b]).unwrap();
        assert_eq!(c[0], 0.0);
        assert!((c[1] + 0.7).abs() < 1e-12);
        assert_eq!(align_offsets(&[a]).unwrap(), vec![0.0]);
    }

    #[test]
    fn injected_constants_are_recovered() {
        let truth = |k: i64| (k as f64 * 0.1).cos() * 3.0;
        let injected = [0.0, 1.25, -0.5];
        let spans = [(0, 40), (25, 70), (55, 100)];
        let segs: Vec<DifferenceSegment> = spans
            .iter()
            .zip(injected)
            .map(|(&(a, b), c)| segment(a, (a..=b).map(|k| truth(k) + c).collect()))
            .collect();
        let offsets = align_offsets(&segs).unwrap();
        for (o, c) in offsets.iter().zip(injected) {
            assert!((o + c).abs() < 1e-6);
        }
        let stitched = stitch_average(&segs, &offsets, Weighting::Uniform).unwrap();
        assert_eq!(stitched.x.len(), 101);
        for (x, m) in stitched.x.iter().zip(&stitched.mean) {
            assert!((m - truth(*x as i64)).abs() < 1e-9);
        }
        assert!(stitched.spread.iter().all(|&s| s < 1e-9));
    }

    #[test]
    fn disconnected_segments_report_components() {
        let segs = [segment(0, vec![0.0; 5]), segment(10, vec![0.0; 5])];
        match align_offsets(&segs) {
            Err(Error::DisconnectedOverlap { components }) => {
                assert_eq!(components, vec![(0.0, 4.0), (10.0, 14.0)]);
            }
            other => panic!("expected disconnected overlap, got {other:?}"),
        }
    }

    #[test]
    fn stitching_single_and_duplicate_segments() {
        let s = segment(3, vec![1.0, 2.0, 4.0]);
        let one = stitch_average(std::slice::from_ref(&s), &[0.0], Weighting::Uniform).unwrap();
        assert_eq!(one.mean, s.values);
        assert!(one.spread.iter().all(|&v| v == 0.0));
        let two = stitch_average(&[s.clone(), s.clone()], &[0.0, 0.0], Weighting::Uniform).unwrap();
        assert_eq!(two.mean, s.values);
        assert!(two.spread.iter().all(|&v| v == 0.0));
        assert_eq!(two.count, vec![2, 2, 2]);
        assert!(stitch_average(&[], &[], Weighting::Uniform).is_err());
    }

    #[test]
    fn pair_selection_policies() {
        let recs: Vec<MeasurementRecord> = [0.0, 0.1, 0.2, 0.4].iter().map(|&d| record(d, 0.0, 10.0, u)).collect();
        let mut cfg = IsolationConfig::new(1);
        assert_eq!(select_pairs(&recs, &cfg).len(), 6);
        cfg.pairs = PairSelection::Adjacent;
        assert_eq!(select_pairs(&recs, &cfg), vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn single_delta_session_is_degenerate() {
        let recs = vec![record(0.1, 0.0, 10.0, u), record(0.1, 2.0, 12.0, u)];
        assert!(matches!(
            isolate_electrode(&recs, &IsolationConfig::new(1)),
            Err(Error::DegeneratePair { .. })
        ));
    }
}
