//! Resonance conditions, built-in pulse programs and the program text format.

pub mod parser;
pub mod program;

use std::f64::consts::PI;

use log::warn;

pub use parser::{parse_program, serialize, ProgramError, SemanticError, SyntaxError};
pub use program::{Event, LockMode, PulseProgram};

use crate::error::{Error, Result};
use crate::evolution::{apply_pulse, evolve_coherent};
use crate::spin::{hamiltonian, singlet_order, thermal_deviation, SpinSystem};

/// Sample length used for gradient calibration, m.
pub const DEFAULT_SAMPLE_LENGTH: f64 = 0.01;
/// Spoil gradient inside M2S, in units of [`full_dephasing_area`].
pub const SPOIL_TURNS: f64 = 10.0;
/// Purge gradient at the start of S2M. Not a small-integer multiple of the
/// M2S spoil so the pair cannot refocus each other.
pub const PURGE_TURNS: f64 = 13.0;
/// Default encode/decode filter area for STELLAR.
pub const FILTER_TURNS: f64 = 7.0;

/// Default `|J / Omega|` above which CL timing is flagged as outside the
/// weak-coupling regime.
pub const CL_REGIME_THRESHOLD: f64 = 0.2;
/// Fraction of the ideal singlet-order preparation CL timing must reach.
pub const CL_CONTRACT: f64 = 0.95;

/// Smallest gradient area (T s / m) that winds transverse magnetization
/// through one full turn over a sample of `length` m.
pub fn full_dephasing_area(gamma: f64, length: f64) -> f64 {
    2.0 * PI / (gamma * length)
}

/// Timing of the resonant echo trains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceParams {
    /// Mixing angle `atan(|Omega| / |J - D|)`, rad.
    pub theta: f64,
    /// `sqrt(Omega^2 + (J - D)^2)`, Hz.
    pub nu_eff: f64,
    /// Echo period `1 / (2 nu_eff)`, s.
    pub tau: f64,
    pub n1: u32,
    pub n2: u32,
}

pub fn resonance_params(sys: &SpinSystem) -> Result<ResonanceParams> {
    sys.validate()?;
    if sys.omega == 0.0 {
        return Err(Error::Physics(
            "no singlet-triplet coupling: omega = 0 leaves T0 and S0 unmixed".into(),
        ));
    }
    let jd = sys.j - sys.d;
    if jd == 0.0 {
        return Err(Error::Physics(
            "J = D puts the mixing angle at pi/2: the echo train cannot step the T0-S0 rotation"
                .into(),
        ));
    }
    let theta = (sys.omega.abs() / jd.abs()).atan();
    let nu_eff = sys.omega.hypot(jd);
    Ok(ResonanceParams {
        theta,
        nu_eff,
        tau: 1.0 / (2.0 * nu_eff),
        n1: (PI / (2.0 * theta)).round() as u32,
        n2: (PI / (4.0 * theta)).round().max(1.0) as u32,
    })
}

/// Sequence-construction options shared by the built-in programs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceOptions {
    /// Replace echo pi pulses by 90x-180y-90x.
    pub composite: bool,
    /// Sample length used to size spoil gradients, m.
    pub sample_length: f64,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self {
            composite: false,
            sample_length: DEFAULT_SAMPLE_LENGTH,
        }
    }
}

impl SequenceOptions {
    pub fn spoil_area(&self, gamma: f64) -> f64 {
        SPOIL_TURNS * full_dephasing_area(gamma, self.sample_length)
    }

    pub fn purge_area(&self, gamma: f64) -> f64 {
        PURGE_TURNS * full_dephasing_area(gamma, self.sample_length)
    }

    pub fn filter_area(&self, gamma: f64) -> f64 {
        FILTER_TURNS * full_dephasing_area(gamma, self.sample_length)
    }
}

/// Storage interval, optionally under a spin lock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Storage {
    pub t: f64,
    pub lock: Option<LockMode>,
}

impl Storage {
    pub fn free(t: f64) -> Self {
        Self { t, lock: None }
    }

    pub fn locked(t: f64, mode: LockMode) -> Self {
        Self {
            t,
            lock: Some(mode),
        }
    }

    fn event(self) -> Event {
        Event::Store {
            t: self.t,
            lock: self.lock,
        }
    }
}

fn program(label: &str, events: Vec<Event>) -> Result<PulseProgram> {
    Ok(PulseProgram::new(label, events)?)
}

/// `n` repetitions of `tau/2 - pi_x - tau/2`.
pub fn cpmg(tau: f64, n: u32, composite: bool) -> Result<PulseProgram> {
    program("cpmg", vec![Event::Cpmg { tau, n, composite }])
}

fn m2s_events(sys: &SpinSystem, opts: &SequenceOptions) -> Result<Vec<Event>> {
    let r = resonance_params(sys)?;
    Ok(vec![
        Event::pulse(90.0, 90.0),
        Event::Cpmg {
            tau: r.tau,
            n: r.n1,
            composite: opts.composite,
        },
        Event::pulse(90.0, 180.0),
        Event::Delay { t: r.tau / 2.0 },
        Event::Cpmg {
            tau: r.tau,
            n: r.n2,
            composite: opts.composite,
        },
        Event::Gradient {
            area: opts.spoil_area(sys.gamma),
            bipolar: false,
        },
    ])
}

/// Magnetization-to-singlet conversion ending in a spoil gradient.
pub fn m2s(sys: &SpinSystem) -> Result<PulseProgram> {
    m2s_with(sys, &SequenceOptions::default())
}

pub fn m2s_with(sys: &SpinSystem, opts: &SequenceOptions) -> Result<PulseProgram> {
    program("m2s", m2s_events(sys, opts)?)
}

fn s2m_events(sys: &SpinSystem, opts: &SequenceOptions) -> Result<Vec<Event>> {
    let r = resonance_params(sys)?;
    Ok(vec![
        Event::pulse(90.0, 90.0),
        Event::Gradient {
            area: opts.purge_area(sys.gamma),
            bipolar: false,
        },
        Event::Cpmg {
            tau: r.tau,
            n: r.n2,
            composite: opts.composite,
        },
        Event::Delay { t: r.tau / 2.0 },
        Event::pulse(90.0, 180.0),
        Event::Cpmg {
            tau: r.tau,
            n: r.n1,
            composite: opts.composite,
        },
    ])
}

/// Singlet-to-magnetization readout: purge, then the M2S elements in
/// reverse order, leaving `I1x + I2x`.
pub fn s2m(sys: &SpinSystem) -> Result<PulseProgram> {
    s2m_with(sys, &SequenceOptions::default())
}

pub fn s2m_with(sys: &SpinSystem, opts: &SequenceOptions) -> Result<PulseProgram> {
    program("s2m", s2m_events(sys, opts)?)
}

/// M2S, storage, S2M and acquisition.
pub fn m2s_s2m(sys: &SpinSystem, storage: Storage, opts: &SequenceOptions) -> Result<PulseProgram> {
    let mut ev = m2s_events(sys, opts)?;
    ev.push(storage.event());
    ev.extend(s2m_events(sys, opts)?);
    ev.push(Event::Acquire);
    program("m2s-s2m", ev)
}

/// Delays of the CL preparation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClTiming {
    /// Shift-evolution delay, nominally `1 / (2 |Omega|)`.
    pub shift_delay: f64,
    /// Coupling delay on each side of the refocusing pulse, nominally `1 / (4 J)`.
    pub j_delay: f64,
    /// Achieved singlet-minus-T0 population difference over its ideal value 2.
    pub efficiency: f64,
}

fn cl_prepare_events(t: &ClTiming) -> Vec<Event> {
    vec![
        Event::pulse(90.0, 180.0),
        Event::Delay {
            t: t.shift_delay + t.j_delay,
        },
        Event::pulse(180.0, 90.0),
        Event::Delay { t: t.j_delay },
        Event::pulse(90.0, 90.0),
        Event::Delay {
            t: t.shift_delay / 2.0,
        },
    ]
}

fn cl_efficiency(sys: &SpinSystem, shift_delay: f64, j_delay: f64) -> Result<f64> {
    let h = hamiltonian(sys);
    let timing = ClTiming {
        shift_delay,
        j_delay,
        efficiency: 0.0,
    };
    let mut rho = thermal_deviation();
    for e in cl_prepare_events(&timing) {
        rho = match e {
            Event::Pulse {
                flip_deg,
                phase_deg,
            } => apply_pulse(&rho, flip_deg.to_radians(), phase_deg.to_radians()),
            Event::Delay { t } => evolve_coherent(&rho, &h, t)?,
            _ => unreachable!("CL preparation uses pulses and delays only"),
        };
    }
    Ok(crate::spin::expectation(&rho, &singlet_order())? / 2.0)
}

/// CL delays for `sys`, verified by simulation and refined on a grid when
/// the textbook values miss [`CL_CONTRACT`].
pub fn cl_timing(sys: &SpinSystem, regime_threshold: f64) -> Result<ClTiming> {
    sys.validate()?;
    if sys.omega == 0.0 || sys.j == 0.0 {
        return Err(Error::Physics(
            "CL preparation needs nonzero omega and J".into(),
        ));
    }
    let ratio = (sys.j / sys.omega).abs();
    if ratio > regime_threshold {
        warn!(
            "|J/omega| = {ratio:.3} exceeds {regime_threshold}: CL timing is outside the weak-coupling regime"
        );
    }
    let s0 = 1.0 / (2.0 * sys.omega.abs());
    let j0 = 1.0 / (4.0 * sys.j.abs());
    let mut best = (cl_efficiency(sys, s0, j0)?, s0, j0);
    if best.0 < CL_CONTRACT {
        // Coarse 2-D grid, then a finer grid around the best point.
        let mut span = 0.5;
        let mut centre = (s0, j0);
        for _ in 0..3 {
            for a in 0..=20 {
                for b in 0..=20 {
                    let s = centre.0 * (1.0 - span + span * a as f64 / 10.0);
                    let j = centre.1 * (1.0 - span + span * b as f64 / 10.0);
                    if s <= 0.0 || j <= 0.0 {
                        continue;
                    }
                    let eff = cl_efficiency(sys, s, j)?;
                    if eff > best.0 {
                        best = (eff, s, j);
                    }
                }
            }
            centre = (best.1, best.2);
            span /= 5.0;
        }
    }
    if best.0 < CL_CONTRACT {
        return Err(Error::Physics(format!(
            "CL preparation reaches only {:.1}% of the ideal singlet order",
            100.0 * best.0
        )));
    }
    Ok(ClTiming {
        shift_delay: best.1,
        j_delay: best.2,
        efficiency: best.0,
    })
}

/// CL preparation of singlet order from thermal magnetization.
pub fn cl_prepare(sys: &SpinSystem) -> Result<PulseProgram> {
    let t = cl_timing(sys, CL_REGIME_THRESHOLD)?;
    program("cl-prepare", cl_prepare_events(&t))
}

fn cl_read_events(sys: &SpinSystem) -> Result<Vec<Event>> {
    if sys.omega == 0.0 {
        return Err(Error::Physics("CL readout needs nonzero omega".into()));
    }
    Ok(vec![
        Event::Delay {
            t: 1.0 / (4.0 * sys.omega.abs()),
        },
        Event::pulse(90.0, 0.0),
    ])
}

/// Singlet order to anti-phase transverse magnetization.
pub fn cl_read(sys: &SpinSystem) -> Result<PulseProgram> {
    program("cl-read", cl_read_events(sys)?)
}

fn conversion_events(sys: &SpinSystem) -> Result<Vec<Event>> {
    if sys.j == 0.0 {
        return Err(Error::Physics("anti-phase conversion needs nonzero J".into()));
    }
    let d = 1.0 / (4.0 * sys.j.abs());
    Ok(vec![
        Event::Delay { t: d },
        Event::pulse(180.0, 0.0),
        Event::Delay { t: d },
    ])
}

/// Spin echo turning anti-phase magnetization into in-phase `I1y - I2y`.
pub fn conversion(sys: &SpinSystem) -> Result<PulseProgram> {
    program("conversion", conversion_events(sys)?)
}

/// CL preparation, storage, CL readout, conversion and acquisition.
pub fn cl_cl(sys: &SpinSystem, storage: Storage) -> Result<PulseProgram> {
    let t = cl_timing(sys, CL_REGIME_THRESHOLD)?;
    let mut ev = cl_prepare_events(&t);
    ev.push(storage.event());
    ev.extend(cl_read_events(sys)?);
    ev.extend(conversion_events(sys)?);
    ev.push(Event::Acquire);
    program("cl-cl", ev)
}

/// Stimulated-echo filtered hybrid: M2S preparation with `sys_pop` timing,
/// storage, CL readout with `sys_ip` timing. Only magnetization that was
/// stored as a population between the encode and decode gradients refocuses.
pub fn stellar(
    sys_pop: &SpinSystem,
    sys_ip: &SpinSystem,
    grad_area: f64,
    storage: Storage,
    opts: &SequenceOptions,
) -> Result<PulseProgram> {
    let mut ev = m2s_events(sys_pop, opts)?;
    ev.insert(
        1,
        Event::Gradient {
            area: grad_area,
            bipolar: true,
        },
    );
    ev.push(storage.event());
    ev.extend(cl_read_events(sys_ip)?);
    ev.push(Event::Gradient {
        area: -grad_area,
        bipolar: true,
    });
    ev.extend(conversion_events(sys_ip)?);
    ev.push(Event::Acquire);
    program("stellar", ev)
}

/// `pi_x - t - (pi/2)_y - acquire` for each recovery delay.
pub fn inversion_recovery(t_list: &[f64]) -> Result<Vec<PulseProgram>> {
    t_list
        .iter()
        .map(|&t| {
            program(
                "inversion-recovery",
                vec![
                    Event::pulse(180.0, 0.0),
                    Event::Delay { t },
                    Event::pulse(90.0, 90.0),
                    Event::Acquire,
                ],
            )
        })
        .collect()
}

/// Stimulated echo: encode, store as longitudinal magnetization for
/// `delta`, decode.
pub fn stimulated_echo(
    encode_area: f64,
    delta: f64,
    gamma: f64,
    opts: &SequenceOptions,
) -> Result<PulseProgram> {
    program(
        "ste",
        vec![
            Event::pulse(90.0, 90.0),
            Event::Gradient {
                area: encode_area,
                bipolar: true,
            },
            Event::pulse(90.0, 270.0),
            Event::Gradient {
                area: opts.spoil_area(gamma),
                bipolar: false,
            },
            Event::Store { t: delta, lock: None },
            Event::pulse(90.0, 90.0),
            Event::Gradient {
                area: -encode_area,
                bipolar: true,
            },
            Event::Acquire,
        ],
    )
}

/// Whether singlet order is best reached by M2S (strong coupling) or CL.
pub fn prefers_m2s(sys: &SpinSystem) -> bool {
    (sys.j - sys.d).abs() > sys.omega.abs()
}

/// Diffusion encoding stored as singlet order. Strongly coupled pairs use
/// M2S/S2M and report `I1x + I2x`; weakly coupled pairs use CL with a lock
/// and report `I1y - I2y`.
pub fn lls_diffusion(
    sys: &SpinSystem,
    encode_area: f64,
    delta: f64,
    opts: &SequenceOptions,
) -> Result<PulseProgram> {
    let encode = Event::Gradient {
        area: encode_area,
        bipolar: true,
    };
    let decode = Event::Gradient {
        area: -encode_area,
        bipolar: true,
    };
    let mut ev;
    if prefers_m2s(sys) {
        ev = m2s_events(sys, opts)?;
        ev.insert(1, encode);
        ev.push(Event::Store { t: delta, lock: None });
        ev.extend(s2m_events(sys, opts)?);
        ev.push(decode);
    } else {
        let t = cl_timing(sys, CL_REGIME_THRESHOLD)?;
        ev = cl_prepare_events(&t);
        ev.insert(1, encode);
        ev.push(Event::Gradient {
            area: opts.spoil_area(sys.gamma),
            bipolar: false,
        });
        ev.push(Event::Store {
            t: delta,
            lock: Some(LockMode::Ideal),
        });
        ev.extend(cl_read_events(sys)?);
        ev.push(decode);
        ev.extend(conversion_events(sys)?);
    }
    ev.push(Event::Acquire);
    program("lls-diffusion", ev)
}
