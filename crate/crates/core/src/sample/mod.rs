//! Temperature, order parameter and residual dipolar coupling.

pub mod calibration;

use crate::error::{Error, Result};

pub use calibration::{calibrate_rates, CalibrationOptions, RateCalibration, RateTargets};

/// Nematic-isotropic transition temperature of the reference sample, K.
pub const DEFAULT_T_C: f64 = 302.0;
pub const DEFAULT_BETA: f64 = 0.2;
/// Unscaled dipolar coupling of the pair, Hz.
pub const DEFAULT_D_MAX: f64 = 20_000.0;
/// Residual coupling observed at [`ANCHOR_T`], Hz.
pub const ANCHOR_D: f64 = 640.0;
pub const ANCHOR_T: f64 = 294.0;

/// Temperature dependence of the order parameter `S`.
#[derive(Debug, Clone, PartialEq)]
pub enum OrderMap {
    /// `S = s0 (1 - T / t_c)^beta` below `t_c`, zero above.
    PowerLaw { s0: f64, beta: f64, t_c: f64 },
    /// Piecewise-linear interpolation of a non-increasing table, held
    /// constant outside its range.
    Table { temps: Vec<f64>, values: Vec<f64> },
}

impl OrderMap {
    pub fn power_law(s0: f64, beta: f64, t_c: f64) -> Result<Self> {
        if !(s0 >= 0.0 && s0 <= 1.0) {
            return Err(Error::InvalidInput(format!("s0 must lie in [0, 1], got {s0}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
        }
        if !(t_c > 0.0 && t_c.is_finite()) {
            return Err(Error::InvalidInput(format!("t_c must be positive, got {t_c}")));
        }
        Ok(OrderMap::PowerLaw { s0, beta, t_c })
    }

    /// Power law with `s0` fixed so that `d_max * S(t_anchor) = d_anchor`.
    pub fn anchored(d_anchor: f64, t_anchor: f64, d_max: f64, beta: f64, t_c: f64) -> Result<Self> {
        if !(t_anchor > 0.0 && t_anchor < t_c) {
            return Err(Error::InvalidInput(format!(
                "anchor temperature {t_anchor} K must lie below t_c = {t_c} K"
            )));
        }
        if !(d_max > 0.0) {
            return Err(Error::InvalidInput(format!("d_max must be positive, got {d_max}")));
        }
        let s0 = d_anchor / d_max / (1.0 - t_anchor / t_c).powf(beta);
        Self::power_law(s0, beta, t_c)
    }

    pub fn table(temps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if temps.is_empty() || temps.len() != values.len() {
            return Err(Error::InvalidInput(
                "order table needs equal, non-zero numbers of temperatures and values".into(),
            ));
        }
        for w in temps.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "order table temperatures must increase strictly ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        for w in values.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidInput(format!(
                    "order table is not monotone non-increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("order parameter {v} outside [0, 1]")));
        }
        Ok(OrderMap::Table { temps, values })
    }

    /// Power law through the reference anchors.
    pub fn reference() -> Self {
        Self::anchored(ANCHOR_D, ANCHOR_T, DEFAULT_D_MAX, DEFAULT_BETA, DEFAULT_T_C)
            .expect("reference anchors are valid")
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            OrderMap::PowerLaw { s0, beta, t_c } => {
                if t >= *t_c {
                    0.0
                } else {
                    s0 * (1.0 - t / t_c).powf(*beta)
                }
            }
            OrderMap::Table { temps, values } => {
                let n = temps.len();
                if t <= temps[0] {
                    return values[0];
                }
                if t >= temps[n - 1] {
                    return values[n - 1];
                }
                let k = temps.partition_point(|&x| x <= t);
                let (t0, t1) = (temps[k - 1], temps[k]);
                let (v0, v1) = (values[k - 1], values[k]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }
}

/// Order parameter at temperature `t` (K).
pub fn order_parameter(t: f64, map: &OrderMap) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {t}")));
    }
    Ok(map.eval(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampShape {
    Linear,
    /// Logistic profile rescaled to hit both endpoints exactly.
    Sigmoid,
}

impl RampShape {
    pub fn keyword(self) -> &'static str {
        match self {
            RampShape::Linear => "linear",
            RampShape::Sigmoid => "sigmoid",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(RampShape::Linear),
            "sigmoid" => Some(RampShape::Sigmoid),
            _ => None,
        }
    }

    fn fraction(self, x: f64) -> f64 {
        match self {
            RampShape::Linear => x,
            RampShape::Sigmoid => {
                const K: f64 = 10.0;
                let s = |u: f64| 1.0 / (1.0 + (-K * (u - 0.5)).exp());
                (s(x) - s(0.0)) / (s(1.0) - s(0.0))
            }
        }
    }
}

/// Sample temperature as a function of program time.
#[derive(Debug, Clone, PartialEq)]
pub enum TemperatureProfile {
    Constant(f64),
    /// Holds `from` before `start`, `to` after `start + duration`. A zero
    /// duration is a step at `start`.
    Ramp {
        from: f64,
        to: f64,
        start: f64,
        duration: f64,
        shape: RampShape,
    },
}

impl TemperatureProfile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            TemperatureProfile::Constant(k) => k,
            TemperatureProfile::Ramp {
                from,
                to,
                start,
                duration,
                shape,
            } => {
                if t < start {
                    from
                } else if duration == 0.0 || t >= start + duration {
                    to
                } else {
                    from + (to - from) * shape.fraction((t - start) / duration)
                }
            }
        }
    }

    /// Times at which the profile stops being constant.
    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            TemperatureProfile::Constant(_) => Vec::new(),
            TemperatureProfile::Ramp {
                start, duration, ..
            } => {
                if duration == 0.0 {
                    vec![start]
                } else {
                    vec![start, start + duration]
                }
            }
        }
    }

    /// First time the ramp passes through `temp`, if it does so strictly
    /// inside its duration.
    pub fn crossing(&self, temp: f64) -> Option<f64> {
        let TemperatureProfile::Ramp {
            from,
            to,
            start,
            duration,
            shape,
        } = *self
        else {
            return None;
        };
        if duration == 0.0 || from == to {
            return None;
        }
        let target = (temp - from) / (to - from);
        if !(target > 0.0 && target < 1.0) {
            return None;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if shape.fraction(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(start + hi * duration)
    }

    fn is_varying_on(&self, a: f64, b: f64) -> bool {
        match *self {
            TemperatureProfile::Constant(_) => false,
            TemperatureProfile::Ramp {
                from,
                to,
                start,
                duration,
                ..
            } => from != to && duration > 0.0 && a < start + duration && b > start,
        }
    }
}

/// Temperature profile together with the map to residual coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    pub profile: TemperatureProfile,
    pub map: OrderMap,
    /// Hz
    pub d_max: f64,
    /// K
    pub t_c: f64,
    /// Last time covered by the schedule, s.
    pub horizon: f64,
}

impl PhaseSchedule {
    pub fn new(profile: TemperatureProfile, map: OrderMap, d_max: f64, t_c: f64) -> Result<Self> {
        if !(d_max >= 0.0 && d_max.is_finite()) {
            return Err(Error::InvalidInput(format!("d_max must be non-negative, got {d_max}")));
        }
        let temps: Vec<f64> = match &profile {
            TemperatureProfile::Constant(k) => vec![*k],
            TemperatureProfile::Ramp {
                from,
                to,
                start,
                duration,
                ..
            } => {
                if !(duration.is_finite() && *duration >= 0.0 && start.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "ramp duration must be non-negative, got {duration}"
                    )));
                }
                vec![*from, *to]
            }
        };
        if let Some(k) = temps.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {k}")));
        }
        Ok(Self {
            profile,
            map,
            d_max,
            t_c,
            horizon: f64::INFINITY,
        })
    }

    /// Reference map at a fixed temperature.
    pub fn constant(temperature: f64) -> Result<Self> {
        Self::new(
            TemperatureProfile::Constant(temperature),
            OrderMap::reference(),
            DEFAULT_D_MAX,
            DEFAULT_T_C,
        )
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn temperature(&self, t: f64) -> f64 {
        self.profile.at(t)
    }

    pub fn order(&self, t: f64) -> f64 {
        self.map.eval(self.temperature(t))
    }

    /// Residual dipolar coupling in Hz at program time `t`.
    pub fn d_at(&self, t: f64) -> f64 {
        self.order(t) * self.d_max
    }

    fn cuts(&self) -> Vec<f64> {
        let mut cuts = self.profile.breakpoints();
        cuts.extend(self.profile.crossing(self.t_c));
        cuts.sort_by(f64::total_cmp);
        cuts
    }

    /// Splits `[a, b]` into pieces on which `D(t)` and the phase are either
    /// constant (`false`) or varying (`true`). Pieces never straddle the
    /// transition temperature.
    pub fn pieces(&self, a: f64, b: f64) -> Vec<(f64, f64, bool)> {
        let mut cuts = vec![a];
        cuts.extend(self.cuts().into_iter().filter(|&x| x > a && x < b));
        cuts.push(b);
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                // Temperature and map are monotone, so equal end values mean
                // D is flat across the piece.
                let varying = self.profile.is_varying_on(w[0], w[1])
                    && self.order(w[0]) != self.order(w[1]);
                (w[0], w[1], varying)
            })
            .collect()
    }

    pub fn varies_within(&self, a: f64, b: f64) -> bool {
        self.pieces(a, b).iter().any(|p| p.2) || self.cuts().iter().any(|&x| x > a && x < b)
    }
}

/// Reference-map schedule ramping from `t_start` to `t_end` (K) over
/// `duration` seconds from program time zero.
pub fn transition_ramp(t_start: f64, t_end: f64, duration: f64, shape: RampShape) -> Result<PhaseSchedule> {
    PhaseSchedule::new(
        TemperatureProfile::Ramp {
            from: t_start,
            to: t_end,
            start: 0.0,
            duration,
            shape,
        },
        OrderMap::reference(),
        DEFAULT_D_MAX,
        DEFAULT_T_C,
    )
}
