//! Forward solver: equilibrium positions of N ions in an external potential.
//!
//! Damped Newton on the energy gradient. Steps are clipped so that no two
//! neighbouring ions can cross (or even halve their gap) in one step, and
//! are accepted by an Armijo test on the energy. Where the Hessian is not
//! positive definite the step falls back to steepest descent. If the result
//! is a saddle or the iteration fails, the solve is retried with the string
//! seeded into each well found by a grid scan of the potential.

use nalgebra::{Cholesky, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, IonString, MIN_SEPARATION};
use crate::potential::Potential1D;
use crate::units::UnitSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Equally spaced over the central 60% of the search interval.
    Uniform,
    /// Explicit starting positions (internal units, strictly increasing).
    Positions(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Convergence threshold on max |dU/dx_i| (internal units).
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_guess: InitialGuess,
    /// Interval the string must settle in. Required for potentials whose
    /// confinement cannot be decided analytically (trap potentials).
    pub search_interval: Option<(f64, f64)>,
    /// Largest single-step displacement of any ion, as a fraction of the
    /// search interval length.
    pub max_step_fraction: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Retry with ions seeded into each well when the first attempt fails
    /// or ends on a saddle.
    pub seed_wells: bool,
    pub units: UnitSystem,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 500,
            initial_guess: InitialGuess::Uniform,
            search_interval: None,
            max_step_fraction: 0.25,
            armijo: 1e-4,
            seed_wells: true,
            units: UnitSystem::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("solver tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.max_step_fraction > 0.0) {
            return Err(Error::invalid("max_step_fraction must be positive"));
        }
        if let Some((lo, hi)) = self.search_interval {
            if !(hi > lo) {
                return Err(Error::invalid("search interval must be non-empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub string: IonString,
    /// max_i |dU/dx_i| at the returned positions.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Hessian positive definite at the returned positions.
    pub stable: bool,
    /// Energy with additive constants of the potential removed.
    pub energy: f64,
}

pub fn is_stable(result: &EquilibriumResult) -> bool {
    result.stable
}

/// Residual, stability and energy of a given configuration.
pub fn evaluate_configuration(
    potential: &Potential1D,
    positions: Vec<f64>,
    tolerance: f64,
    units: UnitSystem,
) -> Result<EquilibriumResult> {
    let g = physics::energy_gradient(&positions, potential)?;
    let residual = max_abs(&g);
    let stable = positive_definite(&positions, potential)?;
    let energy = physics::relative_energy(&positions, potential)?;
    Ok(EquilibriumResult {
        string: IonString::new(positions, units)?,
        residual,
        iterations: 0,
        converged: residual <= tolerance,
        stable,
        energy,
    })
}

pub fn solve_equilibrium(potential: &Potential1D, n: usize, config: &SolverConfig) -> Result<EquilibriumResult> {
    config.validate()?;
    if n == 0 {
        return Err(Error::invalid("ion count must be at least 1"));
    }
    let interval = search_interval(potential, n, config)?;
    let start = match &config.initial_guess {
        InitialGuess::Uniform => uniform_guess(interval, n),
        InitialGuess::Positions(p) => {
            if p.len() != n {
                return Err(Error::invalid(format!("initial guess has {} positions for {n} ions", p.len())));
            }
            physics::check_ordered(p)?;
            p.clone()
        }
    };

    let first = newton(potential, start, interval, config);
    match first {
        Ok(ref r) if r.stable || !config.seed_wells => first,
        _ if config.seed_wells => match solve_in_wells(potential, n, interval, config)? {
            Some(r) => Ok(r),
            None => first,
        },
        _ => first,
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn positive_definite(positions: &[f64], potential: &Potential1D) -> Result<bool> {
    let h = physics::hessian_unchecked(positions, potential)?;
    Ok(Cholesky::new(h).is_some())
}

fn uniform_guess((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    let span = hi - lo;
    let a = lo + 0.2 * span;
    let b = hi - 0.2 * span;
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Interval in which the string is expected to settle.
fn search_interval(potential: &Potential1D, n: usize, config: &SolverConfig) -> Result<(f64, f64)> {
    if let Some(iv) = config.search_interval {
        return Ok(iv);
    }
    let (lo, hi) = potential.domain();
    if lo.is_finite() && hi.is_finite() {
        return Ok((lo, hi));
    }
    match potential.is_globally_confining() {
        Some(true) => {}
        Some(false) => return Err(Error::NotConfining("potential does not rise toward both ends".into())),
        None => {
            return Err(Error::NotConfining(
                "confinement cannot be established without a search interval".into(),
            ))
        }
    }
    // Smallest power-of-two half width at which the external force at
    // either end exceeds the Coulomb push of n ions packed within it.
    let push = (n * n) as f64;
    let mut r = 1e-6;
    for _ in 0..200 {
        let right = potential.derivative(r)?;
        let left = potential.derivative(-r)?;
        if right * r * r >= push && -left * r * r >= push {
            return Ok((-r, r));
        }
        r *= 2.0;
    }
    Err(Error::NotConfining("no finite interval contains the string".into()))
}

fn newton(
    potential: &Potential1D,
    mut x: Vec<f64>,
    interval: (f64, f64),
    config: &SolverConfig,
) -> Result<EquilibriumResult> {
    let n = x.len();
    let span = interval.1 - interval.0;
    let max_step = config.max_step_fraction * span;
    // Ions beyond this have escaped an unbounded potential.
    let escape = (interval.0 - 1e3 * span, interval.1 + 1e3 * span);
    let (dlo, dhi) = potential.domain();

    let mut energy = physics::relative_energy(&x, potential)?;
    let mut grad = physics::gradient_unchecked(&x, potential)?;
    let mut iterations = 0;

    while max_abs(&grad) > config.tolerance {
        if iterations >= config.max_iterations {
            return Err(Error::NoConvergence { iterations, residual: max_abs(&grad) });
        }
        iterations += 1;

        let hess = physics::hessian_unchecked(&x, potential)?;
        let g = DVector::from_column_slice(&grad);
        let (dir, newton_step) = match Cholesky::new(hess.clone()) {
            Some(ch) => (-ch.solve(&g), true),
            None => {
                // Steepest descent scaled by a Gershgorin bound on the
                // largest Hessian eigenvalue.
                let bound = (0..n)
                    .map(|i| hess.row(i).iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0f64, f64::max)
                    .max(f64::MIN_POSITIVE);
                (-g.clone() / bound, false)
            }
        };

        let mut alpha: f64 = 1.0;
        for i in 0..n.saturating_sub(1) {
            let closing = dir[i] - dir[i + 1];
            if closing > 0.0 {
                alpha = alpha.min(0.5 * (x[i + 1] - x[i]) / closing);
            }
        }
        let longest = dir.amax();
        if longest * alpha > max_step {
            alpha = max_step / longest;
        }

        let slope = g.dot(&dir);
        let slack = 8.0 * f64::EPSILON * energy.abs().max(1.0);
        let mut accepted = false;
        while alpha > 1e-16 {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi + alpha * di).collect();
            let admissible = trial.iter().all(|&t| t >= dlo && t <= dhi)
                && trial.windows(2).all(|w| w[1] - w[0] >= MIN_SEPARATION);
            if admissible {
                let e = physics::relative_energy(&trial, potential)?;
                let decrease = e <= energy + config.armijo * alpha * slope + slack;
                let trial_grad = physics::gradient_unchecked(&trial, potential)?;
                // Close to convergence energy differences drown in rounding;
                // a full Newton step that shrinks the gradient is accepted.
                let refined = newton_step && alpha == 1.0 && max_abs(&trial_grad) < max_abs(&grad);
                if (decrease && e.is_finite()) || refined {
                    x = trial;
                    energy = e;
                    grad = trial_grad;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence { iterations, residual: max_abs(&grad) });
        }
        if x[0] < escape.0 || x[n - 1] > escape.1 {
            return Err(Error::NotConfining("ions escaped the search interval".into()));
        }
    }

    // A few plain Newton steps take the residual down to rounding level.
    for _ in 0..3 {
        let Some(ch) = Cholesky::new(physics::hessian_unchecked(&x, potential)?) else {
            break;
        };
        let step = ch.solve(&DVector::from_column_slice(&grad));
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, si)| xi - si).collect();
        if physics::check_ordered(&trial).is_err() || trial.iter().any(|&t| t < dlo || t > dhi) {
            break;
        }
        let trial_grad = physics::gradient_unchecked(&trial, potential)?;
        if max_abs(&trial_grad) >= max_abs(&grad) {
            break;
        }
        energy = physics::relative_energy(&trial, potential)?;
        x = trial;
        grad = trial_grad;
    }

    let stable = positive_definite(&x, potential)?;
    let residual = max_abs(&grad);
    Ok(EquilibriumResult {
        string: IonString::new(x, config.units)?,
        residual,
        iterations,
        converged: true,
        stable,
        energy,
    })
}

fn solve_in_wells(
    potential: &Potential1D,
    n: usize,
    interval: (f64, f64),
    config: &SolverConfig,
) -> Result<Option<EquilibriumResult>> {
    let (lo, hi) = interval;
    let (dlo, dhi) = potential.domain();
    let (lo, hi) = (lo.max(dlo), hi.min(dhi));
    let wells = potential.grid_minima(lo, hi, 2001)?;
    let mut best: Option<EquilibriumResult> = None;
    for center in wells {
        let curvature = potential.second_derivative(center)?;
        // Mean spacing of a harmonic crystal of n ions, roughly.
        let mut spacing = if curvature > 0.0 {
            1.2 * (n as f64 * curvature).cbrt().recip()
        } else {
            (hi - lo) / (2.0 * n as f64)
        };
        let half = 0.5 * spacing * (n as f64 - 1.0);
        let room = (center - lo).min(hi - center);
        if half >= room && n > 1 {
            spacing *= 0.9 * room / half;
        }
        let seed: Vec<f64> = (0..n).map(|i| center + (i as f64 - 0.5 * (n as f64 - 1.0)) * spacing).collect();
        if physics::check_ordered(&seed).is_err() {
            continue;
        }
        if let Ok(r) = newton(potential, seed, interval, config) {
            if r.stable && best.as_ref().is_none_or(|b| r.energy < b.energy) {
                best = Some(r);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(k: f64) -> Potential1D {
        Potential1D::Harmonic { stiffness: k, center: 0.0 }
    }

    #[test]
    fn harmonic_two_and_three_ions() {
        let r = solve_equilibrium(&harmonic(1.0), 2, &SolverConfig::default()).unwrap();
        let a = 0.25f64.cbrt();
        assert!((r.string.positions()[0] + a).abs() < 1e-12);
        assert!((r.string.positions()[1] - a).abs() < 1e-12);
        assert!((a - 0.6299605).abs() < 1e-7);

        let r = solve_equilibrium(&harmonic(1.0), 3, &SolverConfig::default()).unwrap();
        let b = 1.25f64.cbrt();
        let p = r.string.positions();
        assert!((p[0] + b).abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2] - b).abs() < 1e-12);
        assert!(r.stable && r.residual <= 1e-10);
    }

    #[test]
    fn single_ion_sits_at_minimum() {
        let r = solve_equilibrium(&harmonic(1.0), 1, &SolverConfig::default()).unwrap();
        assert!(r.string.positions()[0].abs() < 1e-12);
    }

    #[test]
    fn zero_ions_rejected() {
        assert!(solve_equilibrium(&harmonic(1.0), 0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn non_confining_rejected() {
        let tilt = Potential1D::LinearTilt { slope: 1.0 };
        assert!(matches!(
            solve_equilibrium(&tilt, 3, &SolverConfig::default()),
            Err(Error::NotConfining(_))
        ));
    }

    #[test]
    fn saddle_is_unstable_and_wells_are_stable() {
        let dw = Potential1D::QuarticDoubleWell { quartic: 1.0, quadratic: 1.0 };
        let at_top = evaluate_configuration(&dw, vec![0.0], 1e-10, UnitSystem::default()).unwrap();
        assert!(at_top.converged);
        assert!(!is_stable(&at_top));

        let cfg = SolverConfig {
            initial_guess: InitialGuess::Positions(vec![0.0]),
            seed_wells: false,
            ..SolverConfig::default()
        };
        let stuck = solve_equilibrium(&dw, 1, &cfg).unwrap();
        assert!(!stuck.stable);

        let cfg = SolverConfig { seed_wells: true, ..cfg };
        let r = solve_equilibrium(&dw, 1, &cfg).unwrap();
        assert!(r.stable);
        assert!((r.string.positions()[0].abs() - 0.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn sampled_domain_respected() {
        let xs: Vec<f64> = (0..=200).map(|i| -2.0 + 0.02 * i as f64).collect();
        let vs: Vec<f64> = xs.iter().map(|x| 0.5 * x * x).collect();
        let p = Potential1D::sampled(xs, vs).unwrap();
        let r = solve_equilibrium(&p, 2, &SolverConfig { tolerance: 1e-8, ..SolverConfig::default() }).unwrap();
        let a = 0.25f64.cbrt();
        assert!((r.string.positions()[1] - a).abs() < 1e-4);
    }
}
