use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use lls_core::evolution::{run_program, ChannelRates, Environment, Observable, Relaxation, SpinState};
use lls_core::experiments::{
    fit_lifetime, run_diffusion_experiment, run_lifetime_experiment, DiffusionBackend, DiffusionSettings,
    DiffusionSetup, ExperimentCurve, LifetimeKind, LifetimeSetup,
};
use lls_core::fit::{fit_gaussian_attenuation, Report};
use lls_core::sample::{calibrate_rates, CalibrationOptions, RateCalibration, RateTargets};
use lls_core::sequence::{
    cl_cl, inversion_recovery, m2s_s2m, parse_program, resonance_params, serialize, stellar, Event, PulseProgram,
    Storage,
};
use lls_core::spin::{eigh, fx, fz, hamiltonian, singlet_order, thermal_deviation, SpinSystem};
use sha2::{Digest, Sha256};

use crate::config::{Backend, ExperimentConfig, ExperimentKind, Rates, RelaxationConfig, RunConfig, Targets};
use crate::plot::line_svg;
use crate::CliError;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub svg: Option<bool>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads and parses a config, returning it with the hash of its bytes.
pub fn load_config(path: &Path) -> Result<(RunConfig, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Config("config is not UTF-8".into()))?;
    let cfg = RunConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
    Ok((cfg, sha256_hex(&bytes)))
}

pub fn cmd_params(cfg: &RunConfig, w: &mut impl Write) -> Result<(), CliError> {
    let sys = &cfg.system;
    let p = resonance_params(sys)?;
    writeln!(w, "omega_hz = {}", sys.omega)?;
    writeln!(w, "j_hz = {}", sys.j)?;
    writeln!(w, "d_hz = {}", sys.d)?;
    writeln!(w, "theta_rad = {:.6}", p.theta)?;
    writeln!(w, "nu_eff_hz = {:.4}", p.nu_eff)?;
    writeln!(w, "tau_us = {:.2}", p.tau * 1e6)?;
    writeln!(w, "n1 = {}", p.n1)?;
    writeln!(w, "n2 = {}", p.n2)?;
    let (vals, _) = eigh(&hamiltonian(sys));
    let hz: Vec<String> = vals
        .iter()
        .map(|v| format!("{:.4}", v / (2.0 * std::f64::consts::PI)))
        .collect();
    writeln!(w, "eigenvalues_hz = {}", hz.join(", "))?;
    Ok(())
}

pub fn cmd_parse(path: &Path, w: &mut impl Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let program = parse_program(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    write!(w, "{}", serialize(&program))?;
    writeln!(w, "# duration_s: {:e}", program.duration())?;
    Ok(())
}

/// Systems for the low- and high-temperature phases. Without a schedule
/// both are the configured system.
fn phase_systems(cfg: &RunConfig) -> (SpinSystem, SpinSystem) {
    match &cfg.schedule {
        Some(s) => {
            let tr = s.transition();
            (cfg.system.with_d(tr.d_at(tr.from)), cfg.system.with_d(tr.d_at(tr.to)))
        }
        None => (cfg.system.clone(), cfg.system.clone()),
    }
}

fn channel_rates(r: Rates) -> ChannelRates {
    ChannelRates {
        dipolar: r.dipolar,
        uncorrelated: r.uncorrelated,
    }
}

fn calibrate(t: Targets, sys: &SpinSystem) -> Result<RateCalibration, CliError> {
    Ok(calibrate_rates(
        RateTargets { t1: t.t1, t_lls: t.t_lls },
        sys,
        &CalibrationOptions::default(),
    )?)
}

fn calibration_lines(tag: &str, sys: &SpinSystem, c: &RateCalibration, out: &mut String) {
    let _ = writeln!(out, "{tag}.d_hz = {}", sys.d);
    let _ = writeln!(out, "{tag}.dipolar_per_s = {:e}", c.rates.dipolar);
    let _ = writeln!(out, "{tag}.uncorrelated_per_s = {:e}", c.rates.uncorrelated);
    let _ = writeln!(out, "{tag}.target_t1_s = {}", c.targets.t1);
    let _ = writeln!(out, "{tag}.target_t_lls_s = {}", c.targets.t_lls);
    let _ = writeln!(out, "{tag}.achieved_t1_s = {:e}", c.achieved.0);
    let _ = writeln!(out, "{tag}.achieved_t_lls_s = {:e}", c.achieved.1);
    let _ = writeln!(out, "{tag}.lls_experiment = {}", c.lls_kind.keyword());
}

/// Relaxation model for the run, with a report of any calibration.
fn resolve_relaxation(cfg: &RunConfig) -> Result<(Relaxation, String), CliError> {
    let (below_sys, above_sys) = phase_systems(cfg);
    let mut report = String::new();
    // Only trans-phase runs follow the schedule; every other kind stays in the low-temperature phase.
    let transphase = cfg
        .experiment
        .as_ref()
        .is_some_and(|e| matches!(e.kind, ExperimentKind::Lifetime(LifetimeKind::Transphase)));
    let per_phase = |below: ChannelRates, above: Option<ChannelRates>| -> Result<Relaxation, CliError> {
        Ok(match (&cfg.schedule, above) {
            (Some(s), Some(above)) if transphase => Relaxation::per_phase(below, above, s.t_c)?,
            _ => Relaxation::fixed(below)?,
        })
    };
    let relaxation = match cfg.relaxation {
        RelaxationConfig::None => Relaxation::None,
        RelaxationConfig::Rates { below, above } => per_phase(channel_rates(below), above.map(channel_rates))?,
        RelaxationConfig::Calibrate { below, above } => {
            let b = calibrate(below, &below_sys)?;
            calibration_lines("calibration.below", &below_sys, &b, &mut report);
            let a = match (above, &cfg.schedule) {
                (Some(t), Some(_)) => {
                    let a = calibrate(t, &above_sys)?;
                    calibration_lines("calibration.above", &above_sys, &a, &mut report);
                    Some(a.rates)
                }
                _ => None,
            };
            per_phase(b.rates, a)?
        }
    };
    Ok((relaxation, report))
}

pub fn cmd_calibrate(cfg: &RunConfig, w: &mut impl Write) -> Result<(), CliError> {
    if !matches!(cfg.relaxation, RelaxationConfig::Calibrate { .. }) {
        return Err(CliError::Config("calibrate needs [relaxation] mode = calibrate".into()));
    }
    let (_, report) = resolve_relaxation(cfg)?;
    write!(w, "{report}")?;
    Ok(())
}

fn storage_start(p: &PulseProgram) -> f64 {
    p.events()
        .iter()
        .take_while(|e| !matches!(e, Event::Store { .. }))
        .map(Event::duration)
        .sum()
}

/// Single program at the first grid point, with observables recorded at
/// every event boundary.
fn trajectory_csv(kind: LifetimeKind, t: f64, setup: &LifetimeSetup) -> Result<String, CliError> {
    let sys = &setup.sys;
    let env = Environment::new(sys, &setup.relaxation);
    let obs = [
        Observable::new("fx", fx()),
        Observable::new("fz", fz()),
        Observable::new("singlet_order", singlet_order()),
    ];
    let schedule;
    let (program, env) = match kind {
        LifetimeKind::T1 => (inversion_recovery(&[t])?.remove(0), env),
        LifetimeKind::LlsPop => (m2s_s2m(sys, Storage::free(t), &setup.options)?, env),
        LifetimeKind::LlsIp => (cl_cl(sys, Storage::locked(t, setup.lock))?, env),
        LifetimeKind::Transphase => {
            let tr = setup
                .transition
                .as_ref()
                .ok_or_else(|| CliError::Config("transphase runs need a [schedule] section".into()))?;
            let p = stellar(
                &sys.with_d(tr.d_at(tr.from)),
                &sys.with_d(tr.d_at(tr.to)),
                setup.options.filter_area(sys.gamma),
                Storage::locked(t, setup.lock),
                &setup.options,
            )?;
            schedule = tr.schedule(storage_start(&p), t)?;
            (p, env.with_schedule(&schedule))
        }
    };
    let out = run_program(
        SpinState::uniform(&thermal_deviation(), sys.gamma),
        &program,
        &env,
        &obs,
        &setup.settings,
    )?;
    Ok(out.trajectory.to_csv())
}

struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: &str, content: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), content.into()));
    }
}

fn run_experiment(
    cfg: &RunConfig,
    exp: &ExperimentConfig,
    seed: u64,
    svg: bool,
) -> Result<Artifacts, CliError> {
    let (relaxation, calibration) = resolve_relaxation(cfg)?;
    let mut art = Artifacts { files: Vec::new() };
    let mut fit_text = format!("experiment = {}\n", exp.kind.keyword());
    let curve: ExperimentCurve;
    match exp.kind {
        ExperimentKind::Lifetime(kind) => {
            let mut setup = LifetimeSetup::new(cfg.system.clone(), relaxation);
            setup.lock = exp.lock;
            setup.settings.resolution = exp.resolution;
            setup.seed = seed;
            if let Some(s) = &cfg.schedule {
                setup = setup.with_transition(s.transition());
            }
            curve = run_lifetime_experiment(kind, &exp.grid, &setup)?;
            let fit = fit_lifetime(kind, &curve)?;
            fit_text.push_str(&fit.report());
            let _ = writeln!(fit_text, "lifetime_s = {:e}", fit.lifetime());
            if exp.trajectory {
                art.add("trajectory.csv", trajectory_csv(kind, exp.grid[0], &setup)?);
            }
        }
        ExperimentKind::Diffusion(mode) => {
            let settings = DiffusionSettings {
                delta: exp.delta,
                shape_factor: exp.shape_factor,
                q: exp.q,
                big_delta: exp.big_delta,
                gamma: cfg.system.gamma,
            };
            settings.validate()?;
            let backend = match exp.backend {
                Backend::Analytic => DiffusionBackend::Analytic,
                Backend::MonteCarlo => DiffusionBackend::MonteCarlo { slices: exp.slices },
            };
            let mut setup = DiffusionSetup::new(cfg.system.clone(), settings, backend);
            setup.relaxation = relaxation;
            setup.engine.resolution = exp.resolution;
            setup.seed = seed;
            curve = run_diffusion_experiment(mode, &exp.grid, exp.d_true, &setup)?;
            let b: Vec<f64> = exp.grid.iter().map(|g| settings.b_value(*g)).collect();
            let fit = fit_gaussian_attenuation(&b, &curve.signal)?;
            fit_text.push_str(&fit.report());
            let _ = writeln!(fit_text, "d_true_m2_per_s = {:e}", exp.d_true);
        }
    }
    fit_text.push_str(&calibration);
    art.files.insert(0, ("curve.csv".into(), curve.to_csv().into_bytes()));
    art.files.insert(1, ("fit.txt".into(), fit_text.into_bytes()));
    if svg {
        art.add(
            "curve.svg",
            line_svg(&curve.control, &curve.signal, &curve.control_name, "signal"),
        );
    }
    Ok(art)
}

/// Runs the configured experiment and writes its outputs plus a manifest.
/// Returns the output directory.
pub fn cmd_run(
    cfg: &RunConfig,
    config_hash: &str,
    ov: &Overrides,
    w: &mut impl Write,
) -> Result<PathBuf, CliError> {
    let exp = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| CliError::Config("run needs an [experiment] section".into()))?;
    let seed = ov.seed.or(exp.seed);
    if exp.backend == Backend::MonteCarlo && seed.is_none() && matches!(exp.kind, ExperimentKind::Diffusion(_)) {
        return Err(CliError::Config("the monte-carlo backend needs a seed".into()));
    }
    let seed = seed.unwrap_or(0);
    let dir = ov.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    std::fs::create_dir_all(&dir)?;
    let art = match run_experiment(cfg, exp, seed, ov.svg.unwrap_or(cfg.output.svg)) {
        Ok(a) => a,
        Err(CliError::Simulation { message, .. }) => {
            let path = dir.join("diagnostics.txt");
            let text = format!(
                "error = {message}\nexperiment = {}\nconfig_sha256 = {config_hash}\nseed = {seed}\n",
                exp.kind.keyword()
            );
            std::fs::write(&path, text)?;
            return Err(CliError::Simulation {
                message,
                diagnostics: Some(path),
            });
        }
        Err(e) => return Err(e),
    };
    let mut manifest = format!(
        "tool = lls {}\ncommand = run\nconfig_sha256 = {config_hash}\nseed = {seed}\nexperiment = {}\n",
        env!("CARGO_PKG_VERSION"),
        exp.kind.keyword()
    );
    for (name, bytes) in &art.files {
        std::fs::write(dir.join(name), bytes)?;
        let _ = writeln!(manifest, "file = {}  {name}", sha256_hex(bytes));
        writeln!(w, "wrote {}", dir.join(name).display())?;
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    writeln!(w, "wrote {}", dir.join("manifest.txt").display())?;
    Ok(dir)
}
