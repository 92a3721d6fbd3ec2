//! Phenomenological relaxation channels.
//!
//! Each channel contributes `-(rate / 2) * sum_G [G, [G, chi]]` with Hermitian
//! generators `G`, acting on the deviation `chi = rho - (I1z + I2z)` from
//! thermal equilibrium.

use std::fmt;

use crate::error::{Error, Result};
use crate::spin::{exchange_operator, product_operators, Operator, HERMITIAN_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    /// Intra-pair dipolar fluctuations: the five rank-2 two-spin tensors.
    SymmetricDipolar,
    /// Independent random fields on each spin.
    UncorrelatedField,
    /// A single random field acting on both spins alike.
    CorrelatedField,
}

impl ChannelKind {
    pub fn is_exchange_symmetric(self) -> bool {
        !matches!(self, ChannelKind::UncorrelatedField)
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::SymmetricDipolar => "symmetric-dipolar",
            ChannelKind::UncorrelatedField => "uncorrelated-field",
            ChannelKind::CorrelatedField => "correlated-field",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationChannel {
    pub kind: ChannelKind,
    /// s^-1
    pub rate: f64,
    pub generators: Vec<Operator>,
}

fn normalised(op: Operator) -> Operator {
    let n = op.inner(&op).re.sqrt();
    op.scale(1.0 / n)
}

/// Hermitian combinations of the rank-2 spherical tensors, unit Frobenius norm.
pub fn rank2_generators() -> Vec<Operator> {
    let p = product_operators();
    let t20 = (p.i1z * p.i2z).scale(3.0) - p.dot();
    let xz = p.i1x * p.i2z + p.i1z * p.i2x;
    let yz = p.i1y * p.i2z + p.i1z * p.i2y;
    let xx_yy = p.i1x * p.i2x - p.i1y * p.i2y;
    let xy = p.i1x * p.i2y + p.i1y * p.i2x;
    [t20, xz, yz, xx_yy, xy].into_iter().map(normalised).collect()
}

impl RelaxationChannel {
    /// Validates the rate, Hermiticity of the generators and, for
    /// exchange-symmetric kinds, `P G P = G`.
    pub fn new(kind: ChannelKind, rate: f64, generators: Vec<Operator>) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "relaxation rate must be finite and non-negative, got {rate}"
            )));
        }
        let p = exchange_operator();
        for (i, g) in generators.iter().enumerate() {
            if !g.is_hermitian(HERMITIAN_TOL) {
                return Err(Error::NotHermitian {
                    deviation: g.hermitian_deviation(),
                });
            }
            if kind.is_exchange_symmetric() {
                let dev = (p * *g * p - *g).max_norm();
                if dev > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "generator {i} of a {kind} channel is not exchange-symmetric (deviation {dev:.2e})"
                    )));
                }
            }
        }
        Ok(Self {
            kind,
            rate,
            generators,
        })
    }

    pub fn symmetric_dipolar(rate: f64) -> Result<Self> {
        Self::new(ChannelKind::SymmetricDipolar, rate, rank2_generators())
    }

    /// Longitudinal magnetization decays at `rate`; singlet order at `2 rate`.
    pub fn uncorrelated_field(rate: f64) -> Result<Self> {
        let p = product_operators();
        let mut g = p.spin1().to_vec();
        g.extend(p.spin2());
        Self::new(ChannelKind::UncorrelatedField, rate, g)
    }

    pub fn correlated_field(rate: f64) -> Result<Self> {
        let p = product_operators();
        Self::new(
            ChannelKind::CorrelatedField,
            rate,
            vec![p.fx(), p.fy(), p.fz()],
        )
    }

    pub fn with_rate(&self, rate: f64) -> Result<Self> {
        Self::new(self.kind, rate, self.generators.clone())
    }
}

/// Phenomenological rates of the two calibrated channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRates {
    /// Symmetric dipolar rate, s^-1.
    pub dipolar: f64,
    /// Uncorrelated random-field rate, s^-1.
    pub uncorrelated: f64,
}

impl ChannelRates {
    pub fn channels(&self) -> Result<Vec<RelaxationChannel>> {
        Ok(vec![
            RelaxationChannel::symmetric_dipolar(self.dipolar)?,
            RelaxationChannel::uncorrelated_field(self.uncorrelated)?,
        ])
    }
}

/// Relaxation in force during a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Relaxation {
    #[default]
    None,
    Fixed(Vec<RelaxationChannel>),
    /// `below` applies while the sample temperature is under `t_c`.
    PerPhase {
        below: Vec<RelaxationChannel>,
        above: Vec<RelaxationChannel>,
        t_c: f64,
    },
}

impl Relaxation {
    pub fn fixed(rates: ChannelRates) -> Result<Self> {
        Ok(Relaxation::Fixed(rates.channels()?))
    }

    pub fn per_phase(below: ChannelRates, above: ChannelRates, t_c: f64) -> Result<Self> {
        Ok(Relaxation::PerPhase {
            below: below.channels()?,
            above: above.channels()?,
            t_c,
        })
    }

    /// Channels at a given temperature. Returns the index of the channel set
    /// (for caching) with the set itself.
    pub fn at(&self, temperature: Option<f64>) -> Result<(usize, &[RelaxationChannel])> {
        match self {
            Relaxation::None => Ok((0, &[])),
            Relaxation::Fixed(c) => Ok((0, c)),
            Relaxation::PerPhase { below, above, t_c } => {
                let t = temperature.ok_or_else(|| {
                    Error::InvalidInput(
                        "per-phase relaxation needs a temperature schedule".into(),
                    )
                })?;
                if t < *t_c {
                    Ok((0, below))
                } else {
                    Ok((1, above))
                }
            }
        }
    }

    pub fn needs_temperature(&self) -> bool {
        matches!(self, Relaxation::PerPhase { .. })
    }
}
