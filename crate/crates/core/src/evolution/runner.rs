//! Execution of pulse programs.

use std::collections::HashMap;
use std::f64::consts::PI;

use log::{debug, warn};

use super::ensemble::SpinState;
use super::relaxation::{Relaxation, RelaxationChannel};
use super::superop::{exact_propagator, rk4_propagator, Propagator};
use super::{pulse_unitary, waltz16_cycle};
use crate::error::{Error, Result};
use crate::sample::PhaseSchedule;
use crate::sequence::{Event, LockMode, PulseProgram};
use crate::spin::{hamiltonian, product_operators, Operator, SpinSystem};

/// Named observable recorded along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub name: String,
    pub op: Operator,
}

impl Observable {
    pub fn new(name: impl Into<String>, op: Operator) -> Self {
        Self {
            name: name.into(),
            op,
        }
    }
}

/// Expectation values sampled along a run.
///
/// Instantaneous events (pulses, gradients) produce samples at the same time
/// as their neighbours; `steps` disambiguates them, so `(time, step)` pairs
/// increase strictly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    /// Number of events completed when the sample was taken.
    pub steps: Vec<usize>,
    /// `values[i][k]`: observable `k` at sample `i`.
    pub values: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.values.iter().map(|row| row[k]).collect())
    }

    /// CSV with a `time` column followed by one column per observable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,step");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for ((t, s), row) in self.times.iter().zip(&self.steps).zip(&self.values) {
            out.push_str(&format!("{t:e},{s}"));
            for v in row {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    /// Matrix exponential of the augmented generator per constant segment.
    Exact,
    /// Fixed-step fourth-order Runge-Kutta with step halving until the
    /// propagator changes by less than `tol`.
    Rk4 { tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    /// Sampling interval for time-dependent couplings, s.
    pub resolution: f64,
    /// Extra samples recorded inside each timed event.
    pub oversample: usize,
    /// RF amplitude of the explicit WALTZ-16 lock, Hz.
    pub waltz_rf: f64,
    pub integrator: Integrator,
    /// Repeat schedule-dependent runs at half resolution and report the
    /// difference.
    pub richardson: bool,
    /// Resolution error above which a warning is logged.
    pub richardson_tol: f64,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            resolution: 1e-3,
            oversample: 0,
            waltz_rf: 1000.0,
            integrator: Integrator::Exact,
            richardson: true,
            richardson_tol: 1e-4,
        }
    }
}

/// Translational diffusion applied during storage intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diffusion {
    /// m^2 / s
    pub coefficient: f64,
    pub seed: u64,
}

/// Physical context of a run.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    pub sys: &'a SpinSystem,
    /// Overrides `sys.d` with `D(t)` when present.
    pub schedule: Option<&'a PhaseSchedule>,
    pub relaxation: &'a Relaxation,
    pub diffusion: Option<Diffusion>,
}

impl<'a> Environment<'a> {
    pub fn new(sys: &'a SpinSystem, relaxation: &'a Relaxation) -> Self {
        Self {
            sys,
            schedule: None,
            relaxation,
            diffusion: None,
        }
    }

    pub fn with_schedule(mut self, schedule: &'a PhaseSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn with_diffusion(mut self, diffusion: Diffusion) -> Self {
        self.diffusion = Some(diffusion);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunDiagnostics {
    /// Largest Hermiticity defect repaired by symmetrization.
    pub max_drift: f64,
    /// Number of propagators built.
    pub segments: usize,
    /// Half-resolution difference of the final observables (Richardson
    /// estimate), when the schedule varies during the run.
    pub resolution_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: SpinState,
    pub trajectory: Trajectory,
    /// Observables at the acquire event, if the program has one.
    pub acquired: Option<Vec<f64>>,
    pub diagnostics: RunDiagnostics,
}

/// Executes `program` on `state`.
pub fn run_program(
    state: SpinState,
    program: &PulseProgram,
    env: &Environment<'_>,
    observables: &[Observable],
    settings: &EngineSettings,
) -> Result<RunOutput> {
    check_settings(settings)?;
    let duration = program.duration();
    if let Some(s) = env.schedule {
        if duration > s.horizon {
            return Err(Error::InvalidInput(format!(
                "program lasts {duration} s but the schedule ends at {} s",
                s.horizon
            )));
        }
    }
    if env.relaxation.needs_temperature() && env.schedule.is_none() {
        return Err(Error::InvalidInput(
            "per-phase relaxation needs a temperature schedule".into(),
        ));
    }
    let varying = env.schedule.is_some_and(|s| s.varies_within(0.0, duration));
    let fine_state = (settings.richardson && varying).then(|| state.clone());
    let mut out = Engine::new(env, settings, settings.resolution, observables).run(state, program)?;
    if let Some(fine_state) = fine_state {
        let fine = Engine::new(env, settings, settings.resolution / 2.0, observables)
            .run(fine_state, program)?;
        let coarse_vals = final_values(&out);
        let fine_vals = final_values(&fine);
        let err = coarse_vals
            .iter()
            .zip(&fine_vals)
            .map(|(a, b)| (a - b).abs() / 3.0)
            .fold(0.0, f64::max);
        if err > settings.richardson_tol {
            warn!(
                "resolution {} s leaves an estimated error of {err:.2e} in the final observables",
                settings.resolution
            );
        }
        out.diagnostics.resolution_error = Some(err);
    }
    Ok(out)
}

fn final_values(out: &RunOutput) -> Vec<f64> {
    out.acquired
        .clone()
        .or_else(|| out.trajectory.values.last().cloned())
        .unwrap_or_default()
}

fn check_settings(s: &EngineSettings) -> Result<()> {
    if !(s.resolution > 0.0 && s.resolution.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "resolution must be positive, got {}",
            s.resolution
        )));
    }
    if !(s.waltz_rf > 0.0 && s.waltz_rf.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "WALTZ-16 RF amplitude must be positive, got {}",
            s.waltz_rf
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Drive {
    Free,
    IdealLock,
    /// RF field along `phase_deg` at the WALTZ amplitude.
    Rf { phase_deg: f64 },
}

struct Engine<'a, 'e> {
    env: &'a Environment<'e>,
    settings: &'a EngineSettings,
    resolution: f64,
    observables: &'a [Observable],
    cache: HashMap<[u64; 5], Propagator>,
    diagnostics: RunDiagnostics,
    trajectory: Trajectory,
}

impl<'a, 'e> Engine<'a, 'e> {
    fn new(
        env: &'a Environment<'e>,
        settings: &'a EngineSettings,
        resolution: f64,
        observables: &'a [Observable],
    ) -> Self {
        Self {
            env,
            settings,
            resolution,
            observables,
            cache: HashMap::new(),
            diagnostics: RunDiagnostics::default(),
            trajectory: Trajectory {
                names: observables.iter().map(|o| o.name.clone()).collect(),
                ..Trajectory::default()
            },
        }
    }

    fn d_at(&self, t: f64) -> f64 {
        self.env.schedule.map_or(self.env.sys.d, |s| s.d_at(t))
    }

    fn channels_at(&self, t: f64) -> Result<(usize, &'e [RelaxationChannel])> {
        let temp = self.env.schedule.map(|s| s.temperature(t));
        self.env.relaxation.at(temp)
    }

    fn hamiltonian(&self, d: f64, drive: Drive) -> Operator {
        let sys = self.env.sys;
        let omega = if drive == Drive::IdealLock { 0.0 } else { sys.omega };
        let h = hamiltonian(&SpinSystem {
            omega,
            d,
            ..sys.clone()
        });
        match drive {
            Drive::Rf { phase_deg } => {
                let p = product_operators();
                let ph = phase_deg.to_radians();
                h + (p.fx().scale(ph.cos()) + p.fy().scale(ph.sin())).scale(2.0 * PI * self.settings.waltz_rf)
            }
            _ => h,
        }
    }

    fn build(&mut self, d: f64, drive: Drive, channels: &[RelaxationChannel], dt: f64) -> Result<Propagator> {
        self.diagnostics.segments += 1;
        let h = self.hamiltonian(d, drive);
        match self.settings.integrator {
            Integrator::Exact => Ok(exact_propagator(&h, channels, dt)),
            Integrator::Rk4 { tol } => {
                if channels.iter().any(|c| c.rate > 0.0) {
                    rk4_propagator(&h, channels, dt, tol)
                } else {
                    Ok(exact_propagator(&h, channels, dt))
                }
            }
        }
    }

    /// Propagator over a piece on which the schedule is constant.
    fn constant_piece(&mut self, t0: f64, dt: f64, drive: Drive) -> Result<Propagator> {
        let mid = t0 + dt / 2.0;
        let d = self.d_at(mid);
        let (set, channels) = self.channels_at(mid)?;
        let drive_bits = match drive {
            Drive::Free => 0,
            Drive::IdealLock => 1,
            Drive::Rf { phase_deg } => phase_deg.to_bits() ^ 2,
        };
        let key = [d.to_bits(), set as u64, dt.to_bits(), drive_bits, 0];
        if let Some(p) = self.cache.get(&key) {
            return Ok(p.clone());
        }
        let p = self.build(d, drive, channels, dt)?;
        self.cache.insert(key, p.clone());
        Ok(p)
    }

    /// Propagator over `[t0, t0 + dt]` with piecewise-constant sampling of
    /// the schedule at the engine resolution.
    fn interval(&mut self, t0: f64, dt: f64, drive: Drive) -> Result<Propagator> {
        if dt == 0.0 {
            return Ok(Propagator::Identity);
        }
        let pieces = match self.env.schedule {
            Some(s) => s.pieces(t0, t0 + dt),
            None => vec![(t0, t0 + dt, false)],
        };
        let mut total = Propagator::Identity;
        for (a, b, varying) in pieces {
            let p = if varying {
                let n = ((b - a) / self.resolution).ceil().max(1.0) as usize;
                let h = (b - a) / n as f64;
                let mut acc = Propagator::Identity;
                for k in 0..n {
                    let mid = a + (k as f64 + 0.5) * h;
                    let d = self.d_at(mid);
                    let (_, channels) = self.channels_at(mid)?;
                    let seg = self.build(d, drive, channels, h)?;
                    acc = acc.then(&seg);
                }
                acc
            } else {
                self.constant_piece(a, b - a, drive)?
            };
            total = total.then(&p);
        }
        Ok(total)
    }

    fn schedule_constant(&self, a: f64, b: f64) -> bool {
        self.env.schedule.is_none_or(|s| !s.varies_within(a, b))
    }

    fn echo(&mut self, t0: f64, tau: f64, composite: bool) -> Result<Propagator> {
        let half = self.interval(t0, tau / 2.0, Drive::Free)?;
        let pi = if composite {
            Propagator::Unitary(pulse_unitary(90.0, 0.0))
                .then(&Propagator::Unitary(pulse_unitary(180.0, 90.0)))
                .then(&Propagator::Unitary(pulse_unitary(90.0, 0.0)))
        } else {
            Propagator::Unitary(pulse_unitary(180.0, 0.0))
        };
        let second = if self.schedule_constant(t0, t0 + tau) {
            half.clone()
        } else {
            self.interval(t0 + tau / 2.0, tau / 2.0, Drive::Free)?
        };
        Ok(half.then(&pi).then(&second))
    }

    /// WALTZ-16 train over `[t0, t0 + dt]`, truncated at the end.
    fn waltz(&mut self, t0: f64, dt: f64) -> Result<Propagator> {
        let elements = waltz16_cycle();
        let rf = self.settings.waltz_rf;
        let cycle_len: f64 = elements.iter().map(|&(a, _)| a / (360.0 * rf)).sum();
        let mut total = Propagator::Identity;
        let mut t = t0;
        let end = t0 + dt;
        if self.schedule_constant(t0, end) {
            let full = (dt / cycle_len).floor() as u32;
            if full > 0 {
                let mut cycle = Propagator::Identity;
                let mut tc = t0;
                for &(angle, phase) in &elements {
                    let len = angle / (360.0 * rf);
                    cycle = cycle.then(&self.constant_piece(tc, len, Drive::Rf { phase_deg: phase })?);
                    tc += len;
                }
                total = cycle.pow(full);
                t = t0 + f64::from(full) * cycle_len;
            }
        }
        'outer: loop {
            for &(angle, phase) in &elements {
                if t >= end {
                    break 'outer;
                }
                let len = (angle / (360.0 * rf)).min(end - t);
                let p = if self.schedule_constant(t, t + len) {
                    self.constant_piece(t, len, Drive::Rf { phase_deg: phase })?
                } else {
                    // Elements are short; sample the coupling at the midpoint.
                    let mid = t + len / 2.0;
                    let d = self.d_at(mid);
                    let (_, channels) = self.channels_at(mid)?;
                    self.build(d, Drive::Rf { phase_deg: phase }, channels, len)?
                };
                total = total.then(&p);
                t += len;
            }
        }
        Ok(total)
    }

    fn record(&mut self, state: &SpinState, t: f64, step: usize) {
        let row: Vec<f64> = self.observables.iter().map(|o| state.expectation(&o.op)).collect();
        self.trajectory.times.push(t);
        self.trajectory.steps.push(step);
        self.trajectory.values.push(row);
    }

    fn settle(&mut self, state: &mut SpinState) {
        let drift = state.symmetrize();
        if drift > 1e-13 {
            debug!("hermiticity drift {drift:.2e} repaired");
        }
        self.diagnostics.max_drift = self.diagnostics.max_drift.max(drift);
    }

    fn timed(
        &mut self,
        state: &mut SpinState,
        t0: f64,
        dt: f64,
        drive: Option<LockMode>,
        store: bool,
        step: usize,
    ) -> Result<()> {
        let parts = self.settings.oversample + 1;
        let h = dt / parts as f64;
        let constant = self.schedule_constant(t0, t0 + dt);
        let mut cached: Option<Propagator> = None;
        for k in 0..parts {
            let a = t0 + k as f64 * h;
            let p = match (constant, &cached) {
                (true, Some(p)) => p.clone(),
                _ => {
                    let p = match drive {
                        None => self.interval(a, h, Drive::Free)?,
                        Some(LockMode::Ideal) => self.interval(a, h, Drive::IdealLock)?,
                        Some(LockMode::Waltz16) => self.waltz(a, h)?,
                    };
                    cached = Some(p.clone());
                    p
                }
            };
            state.apply(&p);
            if store {
                if let Some(diff) = self.env.diffusion {
                    state.diffuse(diff.coefficient, h, diff.seed)?;
                }
            }
            self.settle(state);
            if k + 1 < parts {
                self.record(state, a + h, step);
            }
        }
        Ok(())
    }

    fn run(mut self, mut state: SpinState, program: &PulseProgram) -> Result<RunOutput> {
        let mut t = 0.0;
        let mut acquired = None;
        self.record(&state, t, 0);
        for (i, event) in program.events().iter().enumerate() {
            let step = i + 1;
            match *event {
                Event::Pulse {
                    flip_deg,
                    phase_deg,
                } => {
                    state.apply(&Propagator::Unitary(pulse_unitary(flip_deg, phase_deg)));
                    self.settle(&mut state);
                }
                Event::Gradient { area, .. } => state.gradient(area),
                Event::Delay { t: dt } => self.timed(&mut state, t, dt, None, false, step)?,
                Event::Lock { mode, t: dt } => self.timed(&mut state, t, dt, Some(mode), false, step)?,
                Event::Store { t: dt, lock } => self.timed(&mut state, t, dt, lock, true, step)?,
                Event::Cpmg { tau, n, composite } => {
                    let block = tau * f64::from(n);
                    let per_echo = self.settings.oversample > 0;
                    if self.schedule_constant(t, t + block) && !per_echo {
                        let echo = self.echo(t, tau, composite)?;
                        state.apply(&echo.pow(n));
                        self.settle(&mut state);
                    } else {
                        for k in 0..n {
                            let a = t + f64::from(k) * tau;
                            let echo = self.echo(a, tau, composite)?;
                            state.apply(&echo);
                            self.settle(&mut state);
                            if per_echo && k + 1 < n {
                                self.record(&state, a + tau, step);
                            }
                        }
                    }
                }
                Event::Acquire => {
                    let vals: Vec<f64> = self.observables.iter().map(|o| state.expectation(&o.op)).collect();
                    acquired = Some(vals);
                }
            }
            t += event.duration();
            self.record(&state, t, step);
        }
        Ok(RunOutput {
            state,
            trajectory: self.trajectory,
            acquired,
            diagnostics: self.diagnostics,
        })
    }
}
