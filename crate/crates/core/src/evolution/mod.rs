//! Propagation of density operators and ensembles.

pub mod ensemble;
pub mod relaxation;
pub mod runner;
pub mod superop;

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::spin::{DensityOperator, Mat4, Operator, HERMITIAN_TOL, C64};

pub use ensemble::{PhaseGraph, SpinState, ZEnsemble};
pub use relaxation::{ChannelKind, ChannelRates, Relaxation, RelaxationChannel};
pub use runner::{
    run_program, Diffusion, EngineSettings, Environment, Integrator, Observable, RunDiagnostics,
    RunOutput, Trajectory,
};
pub use superop::Propagator;

fn check_duration(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "duration must be finite and non-negative, got {t}"
        )));
    }
    Ok(())
}

fn check_hamiltonian(h: &Operator) -> Result<()> {
    let scale = h.max_norm().max(1.0);
    if h.hermitian_deviation() > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian {
            deviation: h.hermitian_deviation(),
        });
    }
    Ok(())
}

/// `exp(-i H t) rho exp(+i H t)`.
pub fn evolve_coherent(rho: &DensityOperator, h: &Operator, t: f64) -> Result<DensityOperator> {
    check_duration(t)?;
    check_hamiltonian(h)?;
    if t == 0.0 {
        return Ok(*rho);
    }
    let u = superop::unitary(h, t);
    Ok(DensityOperator::project(Operator(u * rho.matrix() * u.adjoint())))
}

/// Collective rotation `exp(-i flip (cos(phase) Fx + sin(phase) Fy))`,
/// angles in degrees.
pub fn pulse_unitary(flip_deg: f64, phase_deg: f64) -> Mat4 {
    let half = flip_deg.to_radians() / 2.0;
    let ph = phase_deg.to_radians();
    let c = C64::new(half.cos(), 0.0);
    let s = half.sin();
    let off_lo = C64::new(0.0, -s) * C64::from_polar(1.0, ph);
    let off_hi = C64::new(0.0, -s) * C64::from_polar(1.0, -ph);
    let r = Matrix2::new(c, off_hi, off_lo, c);
    r.kronecker(&r)
}

/// Hard pulse with angles in radians.
pub fn apply_pulse(rho: &DensityOperator, flip: f64, phase: f64) -> DensityOperator {
    let u = pulse_unitary(flip.to_degrees(), phase.to_degrees());
    DensityOperator::project(Operator(u * rho.matrix() * u.adjoint()))
}

/// Coherent evolution plus relaxation of `rho - (I1z + I2z)` over `t`, by
/// the exact exponential of the generator.
pub fn evolve_dissipative(
    rho: &DensityOperator,
    h: &Operator,
    channels: &[RelaxationChannel],
    t: f64,
) -> Result<DensityOperator> {
    evolve_dissipative_with(rho, h, channels, t, Integrator::Exact)
}

pub fn evolve_dissipative_with(
    rho: &DensityOperator,
    h: &Operator,
    channels: &[RelaxationChannel],
    t: f64,
    integrator: Integrator,
) -> Result<DensityOperator> {
    check_duration(t)?;
    check_hamiltonian(h)?;
    let p = match integrator {
        Integrator::Exact => superop::exact_propagator(h, channels, t),
        Integrator::Rk4 { tol } => superop::rk4_propagator(h, channels, t, tol)?,
    };
    Ok(DensityOperator::project(Operator(p.apply(rho.matrix(), true))))
}

/// WALTZ-16 cycle as `(flip_deg, phase_deg)` elements: `Q Q' Q' Q` with
/// `Q = 270(-x) 360(x) 180(-x) 270(x) 90(-x) 180(x) 360(-x) 180(x) 270(-x)`
/// and `Q'` its phase inverse.
pub fn waltz16_cycle() -> Vec<(f64, f64)> {
    const Q: [(f64, f64); 9] = [
        (270.0, 180.0),
        (360.0, 0.0),
        (180.0, 180.0),
        (270.0, 0.0),
        (90.0, 180.0),
        (180.0, 0.0),
        (360.0, 180.0),
        (180.0, 0.0),
        (270.0, 180.0),
    ];
    let inv: Vec<(f64, f64)> = Q.iter().map(|&(a, p)| (a, (p + 180.0) % 360.0)).collect();
    let mut out = Q.to_vec();
    out.extend(&inv);
    out.extend(&inv);
    out.extend(Q);
    out
}

/// Length of one WALTZ-16 cycle at RF amplitude `rf_hz`, s.
pub fn waltz16_cycle_duration(rf_hz: f64) -> f64 {
    waltz16_cycle().iter().map(|&(a, _)| a).sum::<f64>() / (360.0 * rf_hz)
}
