//! Least-squares fits of decay, recovery and attenuation curves.

use std::fmt::Write as _;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

const MAX_ITER: usize = 500;

/// Two-parameter model: value and gradient at `x`.
type Model<'a> = &'a dyn Fn(f64, &Vector2<f64>) -> (f64, Vector2<f64>);

struct Solution {
    p: Vector2<f64>,
    cov: Option<Matrix2<f64>>,
    ssr: f64,
    iterations: usize,
}

fn ssr(x: &[f64], y: &[f64], model: Model<'_>, p: &Vector2<f64>) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (yi - model(xi, p).0).powi(2)).sum()
}

/// Levenberg-Marquardt with diagonal damping. `floor` sets the absolute
/// step below which each parameter counts as converged.
fn levenberg_marquardt(
    x: &[f64],
    y: &[f64],
    model: Model<'_>,
    start: Vector2<f64>,
    floor: Vector2<f64>,
) -> Result<Solution> {
    let mut p = start;
    let mut cost = ssr(x, y, model, &p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let normal = |p: &Vector2<f64>| {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for (&xi, &yi) in x.iter().zip(y) {
            let (f, g) = model(xi, p);
            jtj += g * g.transpose();
            jtr += g * (yi - f);
        }
        (jtj, jtr)
    };
    loop {
        if iterations >= MAX_ITER {
            return Err(Error::Fit(format!(
                "no convergence after {MAX_ITER} iterations (ssr {cost:.3e})"
            )));
        }
        iterations += 1;
        let (jtj, jtr) = normal(&p);
        let converged;
        loop {
            let mut damped = jtj;
            for k in 0..2 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = damped.try_inverse().map(|m| m * jtr) else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    return Err(Error::Fit("singular normal equations".into()));
                }
                continue;
            };
            let trial = p + step;
            let trial_cost = ssr(x, y, model, &trial);
            let small = (0..2).all(|k| step[k].abs() <= 1e-10 * trial[k].abs() + floor[k]);
            if trial_cost.is_finite() && trial_cost <= cost {
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                converged = small;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 || small {
                // No downhill step left: at the minimum to working precision.
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }
    let (jtj, _) = normal(&p);
    let dof = x.len().saturating_sub(2);
    let cov = if dof > 0 {
        jtj.try_inverse().map(|m| m * (cost / dof as f64))
    } else {
        None
    };
    Ok(Solution {
        p,
        cov,
        ssr: cost,
        iterations,
    })
}

fn check_xy(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Fit(format!(
            "{} control values but {} signals",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min {
        return Err(Error::Fit(format!("need at least {min} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite input".into()));
    }
    Ok(())
}

fn is_flat(y: &[f64]) -> bool {
    y.iter().all(|&v| v == y[0])
}

fn stderr(cov: &Option<Matrix2<f64>>, k: usize) -> f64 {
    cov.map_or(f64::NAN, |c| c[(k, k)].max(0.0).sqrt())
}

fn span(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    (hi - lo).max(f64::MIN_POSITIVE)
}

fn max_abs(y: &[f64]) -> f64 {
    y.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `A exp(-k x)` fitted for `(A, k)`. The start comes from a log-linear
/// regression when all signals share a sign.
fn fit_rate(x: &[f64], y: &[f64]) -> Result<Solution> {
    let model = |xi: f64, p: &Vector2<f64>| {
        let e = (-p[1] * xi).exp();
        (p[0] * e, Vector2::new(e, -p[0] * xi * e))
    };
    let same_sign = y.iter().all(|&v| v > 0.0) || y.iter().all(|&v| v < 0.0);
    let start = if same_sign {
        let sign = y[0].signum();
        let n = x.len() as f64;
        let ly: Vec<f64> = y.iter().map(|v| (v * sign).ln()).collect();
        let mx = x.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        Vector2::new(sign * (my - slope * mx).exp(), -slope)
    } else {
        Vector2::new(y[0], 1.0 / span(x))
    };
    let floor = Vector2::new(1e-14 * max_abs(y), 1e-14 / span(x));
    levenberg_marquardt(x, y, &model, start, floor)
}

/// Result of a monoexponential fit `A exp(-t / T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpFit {
    pub amplitude: f64,
    pub lifetime: f64,
    /// NaN when the fit has no residual degrees of freedom.
    pub amplitude_stderr: f64,
    pub lifetime_stderr: f64,
    pub ssr: f64,
    pub iterations: usize,
}

pub fn fit_monoexponential(t: &[f64], signal: &[f64]) -> Result<ExpFit> {
    check_xy(t, signal, 2)?;
    if is_flat(signal) {
        return Err(Error::Fit("flat input: all signals are equal".into()));
    }
    let s = fit_rate(t, signal)?;
    let k = s.p[1];
    if k <= 0.0 {
        return Err(Error::Fit(format!("fitted decay rate {k:.3e} is not positive")));
    }
    Ok(ExpFit {
        amplitude: s.p[0],
        lifetime: 1.0 / k,
        amplitude_stderr: stderr(&s.cov, 0),
        lifetime_stderr: stderr(&s.cov, 1) / (k * k),
        ssr: s.ssr,
        iterations: s.iterations,
    })
}

/// Result of an inversion-recovery fit `M0 (1 - 2 exp(-t / T1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryFit {
    pub m0: f64,
    pub t1: f64,
    pub m0_stderr: f64,
    pub t1_stderr: f64,
    pub ssr: f64,
    pub iterations: usize,
}

pub fn fit_inversion_recovery(t: &[f64], signal: &[f64]) -> Result<RecoveryFit> {
    check_xy(t, signal, 4)?;
    if is_flat(signal) {
        return Err(Error::Fit("flat input: all signals are equal".into()));
    }
    let model = |ti: f64, p: &Vector2<f64>| {
        let e = (-p[1] * ti).exp();
        (p[0] * (1.0 - 2.0 * e), Vector2::new(1.0 - 2.0 * e, 2.0 * p[0] * ti * e))
    };
    // Start: M0 from the largest |signal|, T1 from the zero crossing.
    let rising = signal[0] <= signal[signal.len() - 1];
    let m0 = if rising { max_abs(signal) } else { -max_abs(signal) };
    let mut k = 1.0 / span(t);
    for w in t.windows(2).zip(signal.windows(2)) {
        let ((ta, tb), (ya, yb)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
        if ya.signum() != yb.signum() && ya != yb {
            let t0 = ta + (tb - ta) * ya / (ya - yb);
            if t0 > 0.0 {
                k = std::f64::consts::LN_2 / t0;
            }
            break;
        }
    }
    let floor = Vector2::new(1e-14 * max_abs(signal), 1e-14 / span(t));
    let s = levenberg_marquardt(t, signal, &model, Vector2::new(m0, k), floor)?;
    let k = s.p[1];
    if k <= 0.0 {
        return Err(Error::Fit(format!("fitted recovery rate {k:.3e} is not positive")));
    }
    Ok(RecoveryFit {
        m0: s.p[0],
        t1: 1.0 / k,
        m0_stderr: stderr(&s.cov, 0),
        t1_stderr: stderr(&s.cov, 1) / (k * k),
        ssr: s.ssr,
        iterations: s.iterations,
    })
}

/// Result of fitting `S0 exp(-D kappa^2 Delta)` against `kappa^2 Delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationFit {
    /// m^2 / s
    pub d: f64,
    pub d_stderr: f64,
    /// Fitted signal at zero gradient.
    pub s0: f64,
    /// All signals were equal; `d` is reported as zero.
    pub flat: bool,
    pub ssr: f64,
}

/// `b[i] = kappa_i^2 Delta` (s / m^2) for each gradient point.
pub fn fit_gaussian_attenuation(b: &[f64], signal: &[f64]) -> Result<AttenuationFit> {
    check_xy(b, signal, 4)?;
    if is_flat(signal) {
        return Ok(AttenuationFit {
            d: 0.0,
            d_stderr: 0.0,
            s0: signal[0],
            flat: true,
            ssr: 0.0,
        });
    }
    let s = fit_rate(b, signal)?;
    Ok(AttenuationFit {
        d: s.p[1],
        d_stderr: stderr(&s.cov, 1),
        s0: s.p[0],
        flat: false,
        ssr: s.ssr,
    })
}

/// Structured `key = value` report, one entry per line.
pub trait Report {
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn report(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

impl Report for ExpFit {
    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", "monoexponential".into()),
            ("amplitude", format!("{:e}", self.amplitude)),
            ("amplitude_stderr", format!("{:e}", self.amplitude_stderr)),
            ("lifetime_s", format!("{:e}", self.lifetime)),
            ("lifetime_stderr_s", format!("{:e}", self.lifetime_stderr)),
            ("ssr", format!("{:e}", self.ssr)),
            ("iterations", self.iterations.to_string()),
        ]
    }
}

impl Report for RecoveryFit {
    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", "inversion-recovery".into()),
            ("m0", format!("{:e}", self.m0)),
            ("m0_stderr", format!("{:e}", self.m0_stderr)),
            ("t1_s", format!("{:e}", self.t1)),
            ("t1_stderr_s", format!("{:e}", self.t1_stderr)),
            ("ssr", format!("{:e}", self.ssr)),
            ("iterations", self.iterations.to_string()),
        ]
    }
}

impl Report for AttenuationFit {
    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", "gaussian-attenuation".into()),
            ("d_m2_per_s", format!("{:e}", self.d)),
            ("d_stderr_m2_per_s", format!("{:e}", self.d_stderr)),
            ("s0", format!("{:e}", self.s0)),
            ("flat", self.flat.to_string()),
            ("ssr", format!("{:e}", self.ssr)),
        ]
    }
}
