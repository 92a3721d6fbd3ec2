//! Experiment drivers: relaxation lifetimes, diffusion and spectra.

pub mod diffusion;
pub mod spectrum;

use std::fmt::{self, Write as _};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub use diffusion::{run_diffusion_experiment, DiffusionBackend, DiffusionMode, DiffusionSettings, DiffusionSetup};
pub use spectrum::{stick_spectrum, StickLine, StickSpectrum};

use crate::error::{Error, Result};
use crate::evolution::{run_program, EngineSettings, Environment, Observable, Relaxation, SpinState};
use crate::fit::{fit_inversion_recovery, fit_monoexponential, ExpFit, RecoveryFit, Report};
use crate::sample::{OrderMap, PhaseSchedule, RampShape, TemperatureProfile, DEFAULT_D_MAX, DEFAULT_T_C};
use crate::sequence::{
    cl_cl, inversion_recovery, m2s_s2m, stellar, Event, LockMode, PulseProgram, SequenceOptions, Storage,
};
use crate::spin::{fx, i1y_minus_i2y, thermal_deviation, Operator, SpinSystem};

/// `<I1x + I2x>` after an ideal 90 degree pulse on the thermal deviation.
pub const THERMAL_SIGNAL: f64 = 2.0;

/// Sampled experiment output.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentCurve {
    /// Experiment kind, e.g. `lls-pop`.
    pub kind: String,
    /// Name and unit of the control variable, e.g. `storage_s`.
    pub control_name: String,
    pub control: Vec<f64>,
    pub signal: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub schedule: Option<String>,
}

impl ExperimentCurve {
    pub fn new(
        kind: impl Into<String>,
        control_name: impl Into<String>,
        control: Vec<f64>,
        signal: Vec<f64>,
    ) -> Result<Self> {
        check_grid(&control)?;
        if control.len() != signal.len() {
            return Err(Error::InvalidInput(format!(
                "{} control values but {} signals",
                control.len(),
                signal.len()
            )));
        }
        Ok(Self {
            kind: kind.into(),
            control_name: control_name.into(),
            control,
            signal,
            sigma: None,
            seed: None,
            schedule: None,
        })
    }

    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != self.signal.len() {
            return Err(Error::InvalidInput("sigma length differs from signal length".into()));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.control.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control.is_empty()
    }

    /// Adds seeded Gaussian noise of standard deviation `sigma` to every
    /// signal.
    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut self.signal {
            *s += normal.sample(&mut rng);
        }
        self.sigma = Some(vec![sigma; self.signal.len()]);
        self.seed = Some(seed);
        Ok(self)
    }

    /// CSV with columns `control,signal[,sigma]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("control,signal");
        if self.sigma.is_some() {
            out.push_str(",sigma");
        }
        out.push('\n');
        for (i, (c, s)) in self.control.iter().zip(&self.signal).enumerate() {
            let _ = write!(out, "{c:e},{s:e}");
            if let Some(sig) = &self.sigma {
                let _ = write!(out, ",{:e}", sig[i]);
            }
            out.push('\n');
        }
        out
    }
}

/// Rejects empty or non-increasing control grids.
pub fn check_grid(control: &[f64]) -> Result<()> {
    if control.is_empty() {
        return Err(Error::InvalidInput("empty control grid".into()));
    }
    if control.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite control value".into()));
    }
    if let Some(w) = control.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(format!(
            "control grid must increase strictly ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LifetimeKind {
    /// Inversion recovery.
    T1,
    /// M2S / free storage / S2M in the oriented phase.
    LlsPop,
    /// CL preparation / locked storage / CL readout in the isotropic phase.
    LlsIp,
    /// STELLAR with a temperature ramp spanning the storage interval.
    Transphase,
}

impl LifetimeKind {
    pub fn keyword(self) -> &'static str {
        match self {
            LifetimeKind::T1 => "t1",
            LifetimeKind::LlsPop => "lls-pop",
            LifetimeKind::LlsIp => "lls-ip",
            LifetimeKind::Transphase => "transphase",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        [
            LifetimeKind::T1,
            LifetimeKind::LlsPop,
            LifetimeKind::LlsIp,
            LifetimeKind::Transphase,
        ]
        .into_iter()
        .find(|k| k.keyword() == s)
    }

    /// Observable reported at acquisition.
    pub fn observable(self) -> Operator {
        match self {
            LifetimeKind::T1 | LifetimeKind::LlsPop => fx(),
            LifetimeKind::LlsIp | LifetimeKind::Transphase => i1y_minus_i2y(),
        }
    }
}

impl fmt::Display for LifetimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Temperature ramp run across each storage interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// K
    pub from: f64,
    /// K
    pub to: f64,
    pub shape: RampShape,
    pub map: OrderMap,
    /// Hz
    pub d_max: f64,
    /// K
    pub t_c: f64,
}

impl Transition {
    pub fn reference(from: f64, to: f64) -> Self {
        Self {
            from,
            to,
            shape: RampShape::Linear,
            map: OrderMap::reference(),
            d_max: DEFAULT_D_MAX,
            t_c: DEFAULT_T_C,
        }
    }

    /// Ramp starting at program time `start` and lasting `duration`.
    pub fn schedule(&self, start: f64, duration: f64) -> Result<PhaseSchedule> {
        PhaseSchedule::new(
            TemperatureProfile::Ramp {
                from: self.from,
                to: self.to,
                start,
                duration,
                shape: self.shape,
            },
            self.map.clone(),
            self.d_max,
            self.t_c,
        )
    }

    /// Dipolar coupling (Hz) at temperature `temp`.
    pub fn d_at(&self, temp: f64) -> f64 {
        self.map.eval(temp) * self.d_max
    }
}

/// Everything a lifetime run needs besides the storage grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeSetup {
    /// Spin system. For transphase runs its `d` is replaced by the schedule.
    pub sys: SpinSystem,
    pub relaxation: Relaxation,
    /// Lock applied during CL and STELLAR storage.
    pub lock: LockMode,
    /// Required for transphase runs.
    pub transition: Option<Transition>,
    pub options: SequenceOptions,
    pub settings: EngineSettings,
    /// Recorded in the curve metadata; lifetime runs are deterministic.
    pub seed: u64,
}

impl LifetimeSetup {
    pub fn new(sys: SpinSystem, relaxation: Relaxation) -> Self {
        Self {
            sys,
            relaxation,
            lock: LockMode::Ideal,
            transition: None,
            options: SequenceOptions::default(),
            settings: EngineSettings::default(),
            seed: 0,
        }
    }

    pub fn with_transition(mut self, transition: Transition) -> Self {
        self.transition = Some(transition);
        self
    }
}

fn start_of_storage(p: &PulseProgram) -> f64 {
    p.events()
        .iter()
        .take_while(|e| !matches!(e, Event::Store { .. }))
        .map(Event::duration)
        .sum()
}

fn acquire_one(
    program: &PulseProgram,
    env: &Environment<'_>,
    obs: &Operator,
    settings: &EngineSettings,
) -> Result<f64> {
    let observables = [Observable::new("signal", *obs)];
    let out = run_program(
        SpinState::uniform(&thermal_deviation(), env.sys.gamma),
        program,
        env,
        &observables,
        settings,
    )?;
    let v = out
        .acquired
        .ok_or_else(|| Error::Simulation("program has no acquire event".into()))?;
    Ok(v[0] / THERMAL_SIGNAL)
}

fn lifetime_point(kind: LifetimeKind, t: f64, setup: &LifetimeSetup) -> Result<f64> {
    let obs = kind.observable();
    let sys = &setup.sys;
    let env = Environment::new(sys, &setup.relaxation);
    match kind {
        LifetimeKind::T1 => {
            let p = inversion_recovery(&[t])?.remove(0);
            acquire_one(&p, &env, &obs, &setup.settings)
        }
        LifetimeKind::LlsPop => {
            let p = m2s_s2m(sys, Storage::free(t), &setup.options)?;
            acquire_one(&p, &env, &obs, &setup.settings)
        }
        LifetimeKind::LlsIp => {
            let p = cl_cl(sys, Storage::locked(t, setup.lock))?;
            acquire_one(&p, &env, &obs, &setup.settings)
        }
        LifetimeKind::Transphase => {
            let tr = setup.transition.as_ref().ok_or_else(|| {
                Error::InvalidInput("transphase runs need a temperature transition".into())
            })?;
            let pop = sys.with_d(tr.d_at(tr.from));
            let ip = sys.with_d(tr.d_at(tr.to));
            let p = stellar(
                &pop,
                &ip,
                setup.options.filter_area(sys.gamma),
                Storage::locked(t, setup.lock),
                &setup.options,
            )?;
            let schedule = tr.schedule(start_of_storage(&p), t)?;
            let env = env.with_schedule(&schedule);
            acquire_one(&p, &env, &obs, &setup.settings)
        }
    }
}

/// Runs one program per storage (or recovery) time and records the signal
/// at acquisition, normalised to the thermal one-pulse signal.
pub fn run_lifetime_experiment(
    kind: LifetimeKind,
    storage_times: &[f64],
    setup: &LifetimeSetup,
) -> Result<ExperimentCurve> {
    check_grid(storage_times)?;
    if let Some(t) = storage_times.iter().find(|t| **t < 0.0) {
        return Err(Error::InvalidInput(format!("negative storage time {t}")));
    }
    let signal = storage_times
        .par_iter()
        .map(|&t| lifetime_point(kind, t, setup))
        .collect::<Result<Vec<f64>>>()?;
    let control_name = if kind == LifetimeKind::T1 {
        "recovery_s"
    } else {
        "storage_s"
    };
    let mut curve = ExperimentCurve::new(kind.keyword(), control_name, storage_times.to_vec(), signal)?;
    curve.seed = Some(setup.seed);
    curve.schedule = Some(match &setup.transition {
        Some(tr) if kind == LifetimeKind::Transphase => format!(
            "ramp {}K-{}K {} over storage",
            tr.from,
            tr.to,
            tr.shape.keyword()
        ),
        _ => format!("constant D={}Hz", setup.sys.d),
    });
    Ok(curve)
}

/// Fit matching a lifetime experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum LifetimeFit {
    Recovery(RecoveryFit),
    Decay(ExpFit),
}

impl LifetimeFit {
    pub fn lifetime(&self) -> f64 {
        match self {
            LifetimeFit::Recovery(f) => f.t1,
            LifetimeFit::Decay(f) => f.lifetime,
        }
    }

    pub fn report(&self) -> String {
        match self {
            LifetimeFit::Recovery(f) => f.report(),
            LifetimeFit::Decay(f) => f.report(),
        }
    }
}

/// Inversion-recovery fit for `t1` curves, monoexponential otherwise.
pub fn fit_lifetime(kind: LifetimeKind, curve: &ExperimentCurve) -> Result<LifetimeFit> {
    match kind {
        LifetimeKind::T1 => Ok(LifetimeFit::Recovery(fit_inversion_recovery(
            &curve.control,
            &curve.signal,
        )?)),
        _ => Ok(LifetimeFit::Decay(fit_monoexponential(&curve.control, &curve.signal)?)),
    }
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}
