//! Shared inputs for the benchmarks.

use ionprobe::imaging::{render_frame, Frame, RenderConfig};
use ionprobe::{solve_equilibrium, IonString, Potential1D, SolverConfig, UnitSystem};

/// String lengths exercised by every benchmark.
pub const SIZES: &[usize] = &[10, 20, 50, 100];

/// Harmonic well with the axial stiffness of the reference imaging setup.
pub fn harmonic() -> Potential1D {
    Potential1D::Harmonic { stiffness: UnitSystem::default().ev_to_internal(1.2e-7), center: 0.0 }
}

pub fn equilibrium(n: usize) -> IonString {
    solve_equilibrium(&harmonic(), n, &SolverConfig::default()).expect("harmonic strings converge").string
}

/// Noisy camera frame of an `n`-ion string.
pub fn frame(n: usize) -> Frame {
    let x = equilibrium(n).positions_um();
    let config = RenderConfig { seed: Some(1), ..RenderConfig::default().fitted_to(&x, 30) };
    render_frame(&x, &config).expect("frame renders")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(equilibrium(10).len(), 10);
        assert!(frame(10).cols > 60);
    }
}
