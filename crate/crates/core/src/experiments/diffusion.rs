//! Gradient-encoded diffusion measurements.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::{check_grid, ExperimentCurve};
use crate::error::{Error, Result};
use crate::evolution::{run_program, Diffusion, EngineSettings, Environment, Relaxation, SpinState};
use crate::sequence::{lls_diffusion, prefers_m2s, stimulated_echo, PulseProgram, SequenceOptions};
use crate::spin::{fx, i1y_minus_i2y, thermal_deviation, Operator, SpinSystem, PROTON_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiffusionMode {
    /// Stimulated echo: magnetization stored as a population.
    Ste,
    /// Storage as singlet order.
    Lls,
}

impl DiffusionMode {
    pub fn keyword(self) -> &'static str {
        match self {
            DiffusionMode::Ste => "ste",
            DiffusionMode::Lls => "lls",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "ste" => Some(DiffusionMode::Ste),
            "lls" => Some(DiffusionMode::Lls),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiffusionBackend {
    /// Exact winding bookkeeping; each stored component of wavenumber `k`
    /// decays by `exp(-D k^2 t)`.
    Analytic,
    /// Explicit slices with seeded Gaussian displacements.
    MonteCarlo { slices: usize },
}

/// Gradient pulse and timing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSettings {
    /// Gradient lobe duration `delta`, s.
    pub delta: f64,
    /// Shape factor `s`; `2 / pi` for sinusoidal lobes.
    pub shape_factor: f64,
    /// Coherence order `q`.
    pub q: i32,
    /// Diffusion interval `Delta`, s.
    pub big_delta: f64,
    /// rad / (s T)
    pub gamma: f64,
}

impl DiffusionSettings {
    /// Sinusoidal lobes, `q = 1`, protons.
    pub fn new(delta: f64, big_delta: f64) -> Result<Self> {
        let s = Self {
            delta,
            shape_factor: 2.0 / PI,
            q: 1,
            big_delta,
            gamma: PROTON_GAMMA,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.big_delta) {
            return Err(Error::InvalidInput(format!(
                "diffusion interval must be positive, got {}",
                self.big_delta
            )));
        }
        if !ok(self.delta) || !ok(self.shape_factor) || !ok(self.gamma) || self.q == 0 {
            return Err(Error::InvalidInput(
                "gradient duration, shape factor, gamma and q must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `kappa = gamma q G delta s`, rad / m, for gradient strength `g` in T/m.
    pub fn kappa(&self, g: f64) -> f64 {
        self.gamma * f64::from(self.q) * g * self.delta * self.shape_factor
    }

    /// Net encoding area of one bipolar pair, T s / m.
    pub fn encode_area(&self, g: f64) -> f64 {
        f64::from(self.q) * g * self.delta * self.shape_factor
    }

    /// `kappa^2 Delta`, s / m^2.
    pub fn b_value(&self, g: f64) -> f64 {
        self.kappa(g).powi(2) * self.big_delta
    }

    /// `exp(-D kappa^2 Delta)`.
    pub fn attenuation(&self, d: f64, g: f64) -> f64 {
        (-d * self.b_value(g)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSetup {
    pub sys: SpinSystem,
    pub settings: DiffusionSettings,
    pub backend: DiffusionBackend,
    pub relaxation: Relaxation,
    pub options: SequenceOptions,
    pub engine: EngineSettings,
    pub seed: u64,
}

impl DiffusionSetup {
    pub fn new(sys: SpinSystem, settings: DiffusionSettings, backend: DiffusionBackend) -> Self {
        Self {
            sys,
            settings,
            backend,
            relaxation: Relaxation::None,
            options: SequenceOptions::default(),
            engine: EngineSettings::default(),
            seed: 0,
        }
    }
}

fn program(mode: DiffusionMode, g: f64, setup: &DiffusionSetup) -> Result<(PulseProgram, Operator)> {
    let s = &setup.settings;
    let area = s.encode_area(g);
    match mode {
        DiffusionMode::Ste => Ok((
            stimulated_echo(area, s.big_delta, setup.sys.gamma, &setup.options)?,
            fx(),
        )),
        DiffusionMode::Lls => {
            let obs = if prefers_m2s(&setup.sys) {
                fx()
            } else {
                i1y_minus_i2y()
            };
            Ok((lls_diffusion(&setup.sys, area, s.big_delta, &setup.options)?, obs))
        }
    }
}

/// Seed for sweep point `index`.
fn point_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn final_state(
    program: &PulseProgram,
    env: &Environment<'_>,
    state: SpinState,
    settings: &EngineSettings,
) -> Result<SpinState> {
    Ok(run_program(state, program, env, &[], settings)?.state)
}

/// `(ratio, sigma)` at one gradient strength.
fn point(mode: DiffusionMode, g: f64, d: f64, index: usize, setup: &DiffusionSetup) -> Result<(f64, Option<f64>)> {
    let (p, obs) = program(mode, g, setup)?;
    let sys = &setup.sys;
    let base = Environment::new(sys, &setup.relaxation);
    let diffusing = base.with_diffusion(Diffusion {
        coefficient: d,
        seed: point_seed(setup.seed, index),
    });
    let rho = thermal_deviation();
    match setup.backend {
        DiffusionBackend::Analytic => {
            let run = |env: &Environment<'_>| -> Result<f64> {
                let st = final_state(&p, env, SpinState::uniform(&rho, sys.gamma), &setup.engine)?;
                Ok(st.expectation(&obs))
            };
            let reference = run(&base)?;
            if reference.abs() < 1e-12 {
                return Err(Error::Simulation(format!(
                    "no refocused signal at G = {g} T/m without diffusion"
                )));
            }
            Ok((run(&diffusing)? / reference, None))
        }
        DiffusionBackend::MonteCarlo { slices } => {
            let start = SpinState::slices(&rho, slices, setup.options.sample_length, sys.gamma)?;
            let values = |st: SpinState| -> Vec<f64> {
                match st {
                    SpinState::Slices(e) => e.slice_expectations(&obs),
                    SpinState::Uniform(_) => unreachable!("slice state stays sliced"),
                }
            };
            let reference = values(final_state(&p, &base, start.clone(), &setup.engine)?);
            let moved = values(final_state(&p, &diffusing, start, &setup.engine)?);
            let n = reference.len() as f64;
            let s0 = reference.iter().sum::<f64>() / n;
            if s0.abs() < 1e-12 {
                return Err(Error::Simulation(format!(
                    "no refocused signal at G = {g} T/m without diffusion"
                )));
            }
            // Paired differences: only the random displacements contribute.
            let diff: Vec<f64> = moved.iter().zip(&reference).map(|(a, b)| a - b).collect();
            let mean = diff.iter().sum::<f64>() / n;
            let var = diff.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            Ok((1.0 + mean / s0, Some((var / n).sqrt() / s0.abs())))
        }
    }
}

/// Signal ratio `S(G; D) / S(G; 0)` over the gradient sweep `gradients`
/// (T/m). The Monte Carlo backend also reports the sampling error.
pub fn run_diffusion_experiment(
    mode: DiffusionMode,
    gradients: &[f64],
    d_true: f64,
    setup: &DiffusionSetup,
) -> Result<ExperimentCurve> {
    setup.settings.validate()?;
    check_grid(gradients)?;
    if gradients[0] < 0.0 {
        return Err(Error::InvalidInput("gradient strengths must be non-negative".into()));
    }
    if !(d_true >= 0.0 && d_true.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "diffusion coefficient must be non-negative, got {d_true}"
        )));
    }
    if let DiffusionBackend::MonteCarlo { slices } = setup.backend {
        if slices < 2 {
            return Err(Error::InvalidInput("Monte Carlo needs at least two slices".into()));
        }
    }
    let points = gradients
        .par_iter()
        .enumerate()
        .map(|(i, &g)| point(mode, g, d_true, i, setup))
        .collect::<Result<Vec<_>>>()?;
    let (signal, sigma): (Vec<f64>, Vec<Option<f64>>) = points.into_iter().unzip();
    let mut curve = ExperimentCurve::new(
        format!("diffusion-{}", mode.keyword()),
        "gradient_t_per_m",
        gradients.to_vec(),
        signal,
    )?;
    if sigma.iter().all(Option::is_some) {
        curve = curve.with_sigma(sigma.into_iter().flatten().collect())?;
    }
    curve.seed = Some(setup.seed);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_convention() {
        let s = DiffusionSettings::new(320e-6, 30.0).unwrap();
        let want = PROTON_GAMMA * 0.2 * 320e-6 * 2.0 / PI;
        assert!((s.kappa(0.2) - want).abs() < 1e-9 * want);
        assert!((s.attenuation(1.92e-10, 0.2).ln() + 1.92e-10 * want * want * 30.0).abs() < 1e-12);
        assert!(DiffusionSettings::new(320e-6, 0.0).is_err());
    }
}
