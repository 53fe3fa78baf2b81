//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ionprobe::imaging::{extract_string, render_frame, FitConfig, RenderConfig};
use ionprobe::io::{self, Metadata, OutputUnits};
use ionprobe::isolation::{
    align_offsets, equipotential_contours, isolate_electrode, select_pairs, shuttle_scan, DeltaScenario,
    IsolationConfig, ShuttleConfig, DEFAULT_CONTOUR_SPACING_MEV,
};
use ionprobe::physics::{coulomb_force, energy_gradient, energy_hessian, total_energy};
use ionprobe::reconstruction::{reconstruct_with_band, GridSpec, ReconstructionOptions};
use ionprobe::scenario::{sampled_records, StitchingScenario, REFERENCE_SHUTTLE_VOLTAGES};
use ionprobe::trap::{strip_unit_potential, TrapGeometry};
use ionprobe::{reconstruct, solve_equilibrium, IonString, Potential1D, SolverConfig, UnitSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:.2?}"))
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn harmonic(k: f64) -> Potential1D {
    Potential1D::Harmonic { stiffness: k, center: 0.0 }
}

/// Analytic two- and three-ion equilibria in a unit harmonic well.
fn analytic_equilibria() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    let a = 0.25f64.cbrt();
    let b = 1.25f64.cbrt();
    for (n, expected) in [(2, vec![-a, a]), (3, vec![-b, 0.0, b])] {
        let start = Instant::now();
        let r = solve_equilibrium(&harmonic(1.0), n, &SolverConfig::default()).map_err(err)?;
        let t = start.elapsed();
        slowest = slowest.max(t);
        within(t, Duration::from_millis(10))?;
        for (x, e) in r.string.positions().iter().zip(&expected) {
            worst = worst.max((x - e).abs());
        }
    }
    check(worst < 1e-9, format!("max |x - exact| = {worst:.2e} (< 1e-9), slowest solve {slowest:.2?} (< 10 ms)"))
}

/// Forward solve then reconstruct; compare with the truth after removing
/// the best constant offset.
fn round_trip() -> Outcome {
    let cases = [
        ("harmonic", harmonic(1.0)),
        ("quartic a=1 b=1", Potential1D::QuarticDoubleWell { quartic: 1.0, quadratic: 1.0 }),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (name, p) in cases {
        let start = Instant::now();
        let eq = solve_equilibrium(&p, 20, &SolverConfig::default()).map_err(err)?;
        let curve = reconstruct(&eq.string, &ReconstructionOptions { grid: GridSpec::Spacing(0.001), ..Default::default() })
            .map_err(err)?;
        let elapsed = start.elapsed();
        within(elapsed, Duration::from_secs(1))?;
        let truth: Vec<f64> = curve.x.iter().map(|&x| p.value(x).unwrap()).collect();
        let c = truth.iter().zip(&curve.psi).map(|(t, v)| t - v).sum::<f64>() / truth.len() as f64;
        let e = truth.iter().zip(&curve.psi).map(|(t, v)| (v + c - t).abs()).fold(0.0, f64::max);
        ok &= e < 1e-3 && eq.stable;
        details.push(format!("{name}: max error {e:.2e} in {elapsed:.0?}"));
    }
    check(ok, format!("{} (< 1e-3, < 1 s)", details.join("; ")))
}

fn random_configuration(rng: &mut ChaCha8Rng) -> (Vec<f64>, Potential1D) {
    let n = rng.random_range(2..=12);
    let mut x = Vec::with_capacity(n);
    let mut pos = rng.random_range(-3.0..-1.0);
    for _ in 0..n {
        x.push(pos);
        pos += rng.random_range(0.1..0.8);
    }
    let p = Potential1D::Polynomial {
        coefficients: (0..5).map(|k| if k == 4 { rng.random_range(0.01..1.0) } else { rng.random_range(-2.0..2.0) }).collect(),
    };
    (x, p)
}

/// Force balance at converged equilibria, Newton's third law, and the
/// analytic gradient and Hessian against central differences.
fn force_balance_and_derivatives() -> Outcome {
    let units = UnitSystem::default();
    let trap = |v: Vec<f64>| {
        Potential1D::Trap(ionprobe::trap::TrapPotential::new(TrapGeometry::default(), v, units).unwrap())
    };
    let scenario = StitchingScenario::default();
    let station = scenario.background(60.0).map_err(err)?;
    let equilibria = [
        (harmonic(1.0), 20, SolverConfig::default()),
        (Potential1D::QuarticDoubleWell { quartic: 1.0, quadratic: 1.0 }, 20, SolverConfig::default()),
        (Potential1D::QuarticDoubleWell { quartic: 0.5, quadratic: 3.0 }, 7, SolverConfig::default()),
        (trap(station), 20, SolverConfig { search_interval: Some((-300.0, 400.0)), ..Default::default() }),
    ];
    let mut worst_sum: f64 = 0.0;
    let mut worst_third: f64 = 0.0;
    for (p, n, cfg) in &equilibria {
        let eq = solve_equilibrium(p, *n, cfg).map_err(err)?;
        let x = eq.string.positions();
        let external: f64 = x.iter().map(|&xi| -p.derivative(xi).unwrap()).sum();
        let coulomb: f64 = (0..x.len()).map(|i| coulomb_force(&eq.string, i).unwrap()).sum();
        worst_sum = worst_sum.max(external.abs());
        worst_third = worst_third.max(coulomb.abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for _ in 0..100 {
        let (x, p) = random_configuration(&mut rng);
        let g = energy_gradient(&x, &p).map_err(err)?;
        let h = energy_hessian(&x, &p).map_err(err)?;
        let n = x.len();
        let gscale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let hscale = h.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            let step = 1e-5;
            let mut up = x.clone();
            let mut down = x.clone();
            up[i] += step;
            down[i] -= step;
            let fd = (total_energy(&up, &p).unwrap() - total_energy(&down, &p).unwrap()) / (2.0 * step);
            worst_g = worst_g.max((fd - g[i]).abs() / gscale);
            let gu = energy_gradient(&up, &p).unwrap();
            let gd = energy_gradient(&down, &p).unwrap();
            for j in 0..n {
                let fd = (gu[j] - gd[j]) / (2.0 * step);
                worst_h = worst_h.max((fd - h[(j, i)]).abs() / hscale);
            }
        }
    }
    check(
        worst_sum < 1e-10 && worst_third < 1e-10 && worst_g < 1e-6 && worst_h < 1e-5,
        format!(
            "|sum F_ext| = {worst_sum:.1e}, |sum F_ion| = {worst_third:.1e} (< 1e-10); 100 random instances: gradient rel err {worst_g:.1e} (< 1e-6), Hessian rel err {worst_h:.1e} (< 1e-5)"
        ),
    )
}

/// Exact curves from the linear trap model: every pair difference is the
/// middle strip's unit potential up to one constant.
fn isolation_exactness() -> Outcome {
    let units = UnitSystem::default();
    let g = TrapGeometry::default();
    let deltas = [0.1, 0.2, 0.5, 1.0];
    let records = sampled_records(&g, &REFERENCE_SHUTTLE_VOLTAGES, 2, &deltas, (-300.0, 300.0), 1.0, units).map_err(err)?;
    let cfg = IsolationConfig::new(2);
    let pairs = select_pairs(&records, &cfg);
    let iso = isolate_electrode(&records, &cfg).map_err(err)?;
    let offsets = align_offsets(&iso.segments).map_err(err)?;
    let truth = |x: f64| units.ev_to_internal(strip_unit_potential(units.internal_to_um(x), &g.strips[2], g.height_um));
    let mut pairwise: f64 = 0.0;
    for (a, ca) in iso.segments.iter().zip(&offsets) {
        for (b, cb) in iso.segments.iter().zip(&offsets) {
            for (va, vb) in a.values.iter().zip(&b.values) {
                pairwise = pairwise.max((va + ca - vb - cb).abs());
            }
        }
    }
    let mut unit = iso.unit.clone();
    unit.align_to(truth);
    let vs_truth = unit.x.iter().zip(&unit.mean).map(|(&x, &m)| (m - truth(x)).abs()).fold(0.0, f64::max);
    check(
        pairwise < 1e-9 && vs_truth < 1e-9,
        format!(
            "{} pairs; max pairwise discrepancy {pairwise:.1e}, max deviation from strip unit potential {vs_truth:.1e} (< 1e-9, internal energy per volt)",
            pairs.len()
        ),
    )
}

/// A ~150 um string repositioned across the trap, differenced at each
/// station, stitched, and compared with the analytic strip potential.
fn stitching_range() -> Outcome {
    let start = Instant::now();
    let scenario = StitchingScenario::default();
    let records = scenario.records().map_err(err)?;
    let iso = isolate_electrode(&records, &scenario.isolation_config()).map_err(err)?;
    let elapsed = start.elapsed();
    let single = records.iter().map(|r| r.curve.domain.1 - r.curve.domain.0).fold(0.0, f64::max);
    let mut unit = iso.unit.clone();
    unit.align_to(|x| scenario.truth(x));
    let extent = unit.extent();
    let peak = scenario.truth(scenario.units.um_to_internal(scenario.geometry.strips[scenario.electrode].center()));
    let err = unit.x.iter().zip(&unit.mean).map(|(&x, &m)| (m - scenario.truth(x)).abs()).fold(0.0, f64::max) / peak;
    let u = &scenario.units;
    let detail = format!(
        "{} stations, {} segments: stitched {:.0} um vs single string {:.0} um (ratio {:.2}, >= 3); max error {:.2e} of peak (<= 1e-2); {elapsed:.2?} (< 10 s)",
        scenario.stations_um.len(),
        iso.segments.len(),
        u.internal_to_um(extent),
        u.internal_to_um(single),
        extent / single,
        err
    );
    check(extent >= 3.0 * single && err <= 0.01 && elapsed < Duration::from_secs(10), detail)
}

/// Twenty-ion strings rendered with Poisson noise and fitted back.
fn imaging_precision() -> Outcome {
    let start = Instant::now();
    let units = UnitSystem::default();
    // Harmonic well giving ~5-9 um spacings (2.5-4.5 px) for 20 ions.
    let k = units.ev_to_internal(1.2e-7);
    let eq = solve_equilibrium(&harmonic(k), 20, &SolverConfig::default()).map_err(err)?;
    let truth_um = eq.string.positions_um();
    let base = RenderConfig::default().fitted_to(&truth_um, 30);
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut missing = 0usize;
    for seed in 0..50u64 {
        let frame = render_frame(&truth_um, &RenderConfig { seed: Some(1000 + seed), ..base.clone() }).map_err(err)?;
        let (_, fit) = extract_string(&frame, &FitConfig::default()).map_err(err)?;
        if fit.len() != truth_um.len() {
            missing += truth_um.len().abs_diff(fit.len());
            continue;
        }
        for (p, t) in fit.positions_px.iter().zip(&truth_um) {
            sq += (p - frame.um_to_px(*t)).powi(2);
            count += 1;
        }
    }
    let elapsed = start.elapsed();
    let rms = (sq / count.max(1) as f64).sqrt();
    let min_gap = truth_um.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    check(
        missing == 0 && rms < 0.25 && elapsed < Duration::from_secs(30),
        format!(
            "50 seeds x 20 ions, 1e4 counts/ion, 10 counts/px background, min spacing {:.1} px: RMS error {rms:.4} px (< 0.25), {missing} missed peaks; {elapsed:.2?} (< 30 s)",
            min_gap / base.pitch_um
        ),
    )
}

/// Well count along `psi = x^4 - delta x^2` against a brute-force scan.
fn shuttle_bifurcation() -> Outcome {
    let step = 0.05;
    let deltas: Vec<f64> = (-10..=20).map(|i| i as f64 * step).collect();
    let scenario = DeltaScenario::QuarticDoubleWell { quartic: 1.0 };
    let config = ShuttleConfig {
        ions: 20,
        reconstruction: ReconstructionOptions { grid: GridSpec::Spacing(0.005), ..Default::default() },
        ..Default::default()
    };
    let map = shuttle_scan(&scenario, &deltas, &config).map_err(err)?;
    let detected = map.onset();

    // Oracle: strict local minima of the analytic potential on a fine grid.
    let oracle = deltas.iter().copied().find(|&d| {
        let f = |x: f64| x.powi(4) - d * x * x;
        let xs: Vec<f64> = (0..=40_000).map(|i| -2.0 + i as f64 * 1e-4).collect();
        xs.windows(3).filter(|w| f(w[1]) < f(w[0]) && f(w[1]) < f(w[2])).count() >= 2
    });
    let counts = map.well_counts();
    let transitions = counts.windows(2).filter(|w| w[0] != w[1]).count();
    let units = UnitSystem::default();
    let contours = equipotential_contours(&map, units.mev_to_internal(DEFAULT_CONTOUR_SPACING_MEV)).map_err(err)?;
    let ok = match (detected, oracle) {
        (Some(d), Some(o)) => (d - o).abs() <= step + 1e-12 && transitions == 1 && map.failures() == 0,
        _ => false,
    };
    check(
        ok && DEFAULT_CONTOUR_SPACING_MEV == 0.4 && !contours.is_empty(),
        format!(
            "detected onset {detected:?}, grid-scan oracle {oracle:?}, step {step}; {} count change(s) over {} sweep values; {} contour levels at default {DEFAULT_CONTOUR_SPACING_MEV} meV",
            transitions,
            deltas.len(),
            contours.len()
        ),
    )
}

fn pipeline_outputs(dir: &Path, seed: u64) -> ionprobe::Result<()> {
    let units = UnitSystem::default();
    let scenario = StitchingScenario { stations_um: vec![0.0], deltas: vec![0.0, -0.001], ..Default::default() };
    let records = scenario.records()?;
    let meta = Metadata::default().with("seed", seed);
    io::write_positions(&dir.join("positions.csv"), &IonString::internal(records[0].curve.x.clone())?, OutputUnits::Physical, &meta)?;
    let eq = solve_equilibrium(&harmonic(units.ev_to_internal(1.2e-7)), 20, &SolverConfig::default())?;
    let truth_um = eq.string.positions_um();
    let frame = render_frame(&truth_um, &RenderConfig { seed: Some(seed), ..RenderConfig::default().fitted_to(&truth_um, 30) })?;
    io::write_frame_png(&dir.join("frame.png"), &frame, &meta)?;
    io::write_frame_csv(&dir.join("frame.csv"), &frame, &meta)?;
    let (string, fit) = extract_string(&frame, &FitConfig::default())?;
    io::write_fit(&dir.join("fit.csv"), &fit, &frame, &meta)?;
    let sigmas = string.uncertainties().expect("fit attaches uncertainties").to_vec();
    let curve = reconstruct_with_band(&string, &sigmas, 64, seed, &ReconstructionOptions::default())?;
    io::write_curve(&dir.join("curve.csv"), &curve, &units, OutputUnits::Physical, &meta)?;
    let iso = isolate_electrode(&records, &scenario.isolation_config())?;
    io::write_unit_potential(&dir.join("unit.csv"), &iso.unit, &units, OutputUnits::Physical, &meta)?;
    Ok(())
}

/// Two runs of the same seeded pipeline produce identical bytes.
fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    pipeline_outputs(a.path(), 7).map_err(err)?;
    pipeline_outputs(b.path(), 7).map_err(err)?;
    let names = ["positions.csv", "frame.png", "frame.csv", "fit.csv", "curve.csv", "unit.csv"];
    let mut differing = Vec::new();
    for n in names {
        let x = std::fs::read(a.path().join(n)).map_err(err)?;
        let y = std::fs::read(b.path().join(n)).map_err(err)?;
        if x != y {
            differing.push(n);
        }
    }
    check(differing.is_empty(), format!("{} output files compared byte for byte; differing: {differing:?}", names.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 analytic equilibria", analytic_equilibria),
        ("2 round-trip reconstruction", round_trip),
        ("3 force balance and derivatives", force_balance_and_derivatives),
        ("4 electrode isolation exactness", isolation_exactness),
        ("5 stitching range", stitching_range),
        ("6 imaging precision", imaging_precision),
        ("7 shuttle bifurcation", shuttle_bifurcation),
        ("8 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{t:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{t:.2?}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
