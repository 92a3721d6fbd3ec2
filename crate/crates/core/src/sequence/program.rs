//! Pulse-program representation.

use std::fmt;

use super::parser::{ProgramError, SemanticError};

/// How chemical-shift evolution is suppressed during a spin lock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockMode {
    /// Shift term removed from the Hamiltonian for the lock interval.
    Ideal,
    /// Explicit WALTZ-16 composite-pulse train at finite RF amplitude.
    Waltz16,
}

impl LockMode {
    pub fn keyword(self) -> &'static str {
        match self {
            LockMode::Ideal => "ideal",
            LockMode::Waltz16 => "waltz16",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "ideal" => Some(LockMode::Ideal),
            "waltz16" => Some(LockMode::Waltz16),
            _ => None,
        }
    }
}

/// One timed element of a pulse program.
///
/// Pulse angles are kept in degrees so programs survive a text round trip
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// Hard non-selective pulse on both spins (zero duration).
    Pulse { flip_deg: f64, phase_deg: f64 },
    Delay { t: f64 },
    /// `n` repetitions of `tau/2 - pi_x - tau/2`.
    Cpmg { tau: f64, n: u32, composite: bool },
    /// Instantaneous field-gradient pulse with effective area in T s / m.
    Gradient { area: f64, bipolar: bool },
    Lock { mode: LockMode, t: f64 },
    /// Storage interval; free evolution unless a lock is given.
    Store { t: f64, lock: Option<LockMode> },
    Acquire,
}

impl Event {
    pub fn pulse(flip_deg: f64, phase_deg: f64) -> Self {
        Event::Pulse {
            flip_deg,
            phase_deg,
        }
    }

    pub fn duration(&self) -> f64 {
        match *self {
            Event::Pulse { .. } | Event::Gradient { .. } | Event::Acquire => 0.0,
            Event::Delay { t } | Event::Lock { t, .. } | Event::Store { t, .. } => t,
            Event::Cpmg { tau, n, .. } => tau * f64::from(n),
        }
    }

    pub fn keyword(&self) -> &'static str {
        match self {
            Event::Pulse { .. } => "pulse",
            Event::Delay { .. } => "delay",
            Event::Cpmg { .. } => "cpmg",
            Event::Gradient { .. } => "grad",
            Event::Lock { .. } => "lock",
            Event::Store { .. } => "store",
            Event::Acquire => "acquire",
        }
    }

    fn check(&self) -> Result<(), String> {
        let finite_nonneg = |name: &str, v: f64| {
            if !v.is_finite() {
                Err(format!("{name} must be finite, got {v}"))
            } else if v < 0.0 {
                Err(format!("{name} must be non-negative, got {v}"))
            } else {
                Ok(())
            }
        };
        match *self {
            Event::Pulse {
                flip_deg,
                phase_deg,
            } => {
                if !flip_deg.is_finite() || !phase_deg.is_finite() {
                    return Err("pulse angles must be finite".into());
                }
                Ok(())
            }
            Event::Delay { t } => finite_nonneg("delay", t),
            Event::Lock { t, .. } => finite_nonneg("lock duration", t),
            Event::Store { t, .. } => finite_nonneg("storage time", t),
            Event::Cpmg { tau, n, .. } => {
                finite_nonneg("cpmg tau", tau)?;
                if tau == 0.0 {
                    return Err("cpmg tau must be positive".into());
                }
                if n == 0 {
                    return Err("cpmg needs at least one echo".into());
                }
                Ok(())
            }
            Event::Gradient { area, .. } => {
                if area.is_finite() {
                    Ok(())
                } else {
                    Err(format!("gradient area must be finite, got {area}"))
                }
            }
            Event::Acquire => Ok(()),
        }
    }
}

/// Ordered list of events with an optional provenance label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseProgram {
    events: Vec<Event>,
    label: String,
}

impl PulseProgram {
    pub fn empty(label: impl Into<String>) -> Self {
        Self {
            events: Vec::new(),
            label: label.into(),
        }
    }

    /// Validates durations and acquisition placement.
    pub fn new(label: impl Into<String>, events: Vec<Event>) -> Result<Self, ProgramError> {
        validate(&events, None)?;
        Ok(Self {
            events,
            label: label.into(),
        })
    }

    pub(crate) fn new_with_lines(
        label: String,
        events: Vec<Event>,
        lines: &[usize],
    ) -> Result<Self, ProgramError> {
        validate(&events, Some(lines))?;
        Ok(Self { events, label })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.events.iter().fold(0.0, |t, e| t + e.duration())
    }

    pub fn has_acquire(&self) -> bool {
        matches!(self.events.last(), Some(Event::Acquire))
    }

    /// Appends another program's events. The result is re-validated.
    pub fn then(&self, other: &PulseProgram) -> Result<Self, ProgramError> {
        let mut events = self.events.clone();
        events.extend(other.events.iter().cloned());
        Self::new(self.label.clone(), events)
    }

    pub fn push(&self, event: Event) -> Result<Self, ProgramError> {
        let mut events = self.events.clone();
        events.push(event);
        Self::new(self.label.clone(), events)
    }

    pub fn with_acquire(&self) -> Result<Self, ProgramError> {
        self.push(Event::Acquire)
    }

    /// Events in reverse order (acquisition, if any, is dropped).
    pub fn reversed(&self) -> Self {
        let events = self
            .events
            .iter()
            .rev()
            .filter(|e| !matches!(e, Event::Acquire))
            .cloned()
            .collect();
        Self {
            events,
            label: format!("reverse({})", self.label),
        }
    }

    pub fn serialize(&self) -> String {
        super::parser::serialize(self)
    }
}

impl fmt::Display for PulseProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

fn validate(events: &[Event], lines: Option<&[usize]>) -> Result<(), ProgramError> {
    let line_of = |i: usize| lines.and_then(|l| l.get(i).copied());
    let mut acquire_at: Option<usize> = None;
    for (i, e) in events.iter().enumerate() {
        if let Err(message) = e.check() {
            return Err(SemanticError {
                event_index: i,
                line: line_of(i),
                message,
            }
            .into());
        }
        if matches!(e, Event::Acquire) {
            if let Some(first) = acquire_at {
                return Err(SemanticError {
                    event_index: i,
                    line: line_of(i),
                    message: format!("duplicate acquire (first at event {first})"),
                }
                .into());
            }
            acquire_at = Some(i);
        }
    }
    if let Some(i) = acquire_at {
        if i + 1 != events.len() {
            return Err(SemanticError {
                event_index: i,
                line: line_of(i),
                message: "acquire must be the last event".into(),
            }
            .into());
        }
    }
    Ok(())
}
