//! Calibration of relaxation-channel rates to measured lifetimes.

use log::debug;

use crate::error::{Error, Result};
use crate::evolution::{ChannelRates, EngineSettings, Relaxation};
use crate::experiments::{fit_lifetime, linspace, run_lifetime_experiment, LifetimeKind, LifetimeSetup};
use crate::sequence::{prefers_m2s, LockMode, SequenceOptions};
use crate::spin::SpinSystem;

/// Lifetimes to reproduce, s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTargets {
    pub t1: f64,
    pub t_lls: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    /// Relative tolerance on each fitted lifetime.
    pub tolerance: f64,
    /// Points in the recovery and storage grids.
    pub points: usize,
    pub max_iterations: usize,
    pub lock: LockMode,
    pub options: SequenceOptions,
    pub settings: EngineSettings,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tolerance: 2e-3,
            points: 10,
            max_iterations: 60,
            lock: LockMode::Ideal,
            options: SequenceOptions::default(),
            settings: EngineSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCalibration {
    pub rates: ChannelRates,
    /// Fitted `(T1, T_LLS)` with the calibrated rates, s.
    pub achieved: (f64, f64),
    pub targets: RateTargets,
    /// Experiment used for the singlet lifetime.
    pub lls_kind: LifetimeKind,
}

/// Recovery delays used to measure T1 near `t1`.
pub fn recovery_grid(t1: f64, points: usize) -> Vec<f64> {
    linspace(0.0, 5.0 * t1, points)
}

/// Storage times used to measure a singlet lifetime near `t_lls`.
pub fn storage_grid(t_lls: f64, points: usize) -> Vec<f64> {
    linspace(0.0, 3.0 * t_lls, points)
}

/// Singlet experiment suited to `sys`: M2S/S2M when strongly coupled,
/// CL with a lock otherwise.
pub fn lls_kind_for(sys: &SpinSystem) -> LifetimeKind {
    if prefers_m2s(sys) {
        LifetimeKind::LlsPop
    } else {
        LifetimeKind::LlsIp
    }
}

struct Evaluator<'a> {
    sys: &'a SpinSystem,
    opts: &'a CalibrationOptions,
    kind: LifetimeKind,
    ir_grid: Vec<f64>,
    lls_grid: Vec<f64>,
}

impl Evaluator<'_> {
    fn setup(&self, rates: ChannelRates) -> Result<LifetimeSetup> {
        let mut s = LifetimeSetup::new(self.sys.clone(), Relaxation::fixed(rates)?);
        s.lock = self.opts.lock;
        s.options = self.opts.options;
        s.settings = self.opts.settings.clone();
        Ok(s)
    }

    /// Fitted lifetime; infinite when the curve does not relax.
    fn lifetime(&self, kind: LifetimeKind, grid: &[f64], rates: ChannelRates) -> Result<f64> {
        let c = run_lifetime_experiment(kind, grid, &self.setup(rates)?)?;
        match fit_lifetime(kind, &c) {
            Ok(f) => Ok(f.lifetime()),
            Err(Error::Fit(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    fn t1(&self, rates: ChannelRates) -> Result<f64> {
        self.lifetime(LifetimeKind::T1, &self.ir_grid, rates)
    }

    fn t_lls(&self, rates: ChannelRates) -> Result<f64> {
        self.lifetime(self.kind, &self.lls_grid, rates)
    }

    /// Dipolar rate that gives the target T1 with uncorrelated rate `b`.
    fn dipolar_for(&self, b: f64, t1: f64) -> Result<f64> {
        let t1_at = |a: f64| {
            self.t1(ChannelRates {
                dipolar: a,
                uncorrelated: b,
            })
        };
        let (mut lo, mut hi) = (0.0, 1.0 / t1);
        if t1_at(lo)? <= t1 {
            return Ok(0.0);
        }
        let mut grow = 0;
        while t1_at(hi)? > t1 {
            lo = hi;
            hi *= 2.0;
            grow += 1;
            if grow > 40 {
                return Err(Error::Simulation("T1 does not respond to the dipolar rate".into()));
            }
        }
        for _ in 0..self.opts.max_iterations {
            let mid = 0.5 * (lo + hi);
            if t1_at(mid)? > t1 {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) <= 1e-6 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Finds `{dipolar, uncorrelated}` rates whose simulated inversion-recovery
/// and singlet-decay curves fit to the target lifetimes.
///
/// The outer bisection runs over the uncorrelated rate `b` in `[0, 1/T1]`;
/// for each `b` the dipolar rate is solved so T1 matches, and the fitted
/// singlet lifetime then falls monotonically with `b`. Targets outside the
/// range spanned by the two ends are reported as infeasible.
pub fn calibrate_rates(
    targets: RateTargets,
    sys: &SpinSystem,
    opts: &CalibrationOptions,
) -> Result<RateCalibration> {
    let RateTargets { t1, t_lls } = targets;
    if !(t1 > 0.0 && t1.is_finite() && t_lls.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "targets must be finite and positive, got T1 = {t1}, T_LLS = {t_lls}"
        )));
    }
    if opts.points < 4 {
        return Err(Error::InvalidInput("calibration grids need at least 4 points".into()));
    }
    let ev = Evaluator {
        sys,
        opts,
        kind: lls_kind_for(sys),
        ir_grid: recovery_grid(t1, opts.points),
        lls_grid: storage_grid(t_lls.max(t1), opts.points),
    };
    let frontier = |lo: f64, hi: f64, reason: String| Error::Infeasible {
        reason,
        t1,
        min_t_lls: lo,
        max_t_lls: hi,
    };
    let b_max = 1.0 / t1;
    let lls_at = |b: f64| -> Result<(f64, f64)> {
        let a = ev.dipolar_for(b, t1)?;
        let tl = ev.t_lls(ChannelRates {
            dipolar: a,
            uncorrelated: b,
        })?;
        debug!("b = {b:.6}, a = {a:.6}: T_LLS = {tl:.4}");
        Ok((a, tl))
    };
    if t_lls <= t1 {
        // Cheap bound for the report: pure uncorrelated relaxation.
        let (_, min) = lls_at(b_max)?;
        return Err(frontier(
            min,
            f64::INFINITY,
            format!("T_LLS = {t_lls} s does not exceed T1 = {t1} s; the singlet cannot relax faster than magnetization in this channel model"),
        ));
    }
    let (a0, max) = lls_at(0.0)?;
    let (_, min) = lls_at(b_max)?;
    if t_lls > max || t_lls < min {
        return Err(frontier(
            min,
            max,
            format!("T_LLS = {t_lls} s lies outside the reachable range at T1 = {t1} s"),
        ));
    }
    let (mut lo, mut hi) = (0.0, b_max);
    let mut best = (
        ChannelRates {
            dipolar: a0,
            uncorrelated: 0.0,
        },
        max,
    );
    for _ in 0..opts.max_iterations {
        let mid = 0.5 * (lo + hi);
        let (a, tl) = lls_at(mid)?;
        best = (
            ChannelRates {
                dipolar: a,
                uncorrelated: mid,
            },
            tl,
        );
        if ((tl - t_lls) / t_lls).abs() <= opts.tolerance / 4.0 {
            break;
        }
        if tl > t_lls {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rates, _) = best;
    let achieved = (ev.t1(rates)?, ev.t_lls(rates)?);
    for (got, want, name) in [(achieved.0, t1, "T1"), (achieved.1, t_lls, "T_LLS")] {
        if ((got - want) / want).abs() > opts.tolerance {
            return Err(Error::Simulation(format!(
                "calibration stalled: fitted {name} = {got:.4} s against a target of {want} s"
            )));
        }
    }
    Ok(RateCalibration {
        rates,
        achieved,
        targets,
        lls_kind: ev.kind,
    })
}
