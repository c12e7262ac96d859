//! Detector parameters: coupling, oscillator frequency, switching and worldline.

use thiserror::Error;

use crate::trajectory::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("invalid detector parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SwitchProfile {
    Step,
    /// Cosine ramp `½(1 − cos(π(τ − τ_on)/width))` over `[τ_on, τ_on + width]`.
    Ramp { width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Switch {
    pub tau_on: f64,
    pub profile: SwitchProfile,
}

impl Switch {
    pub fn step(tau_on: f64) -> Self {
        Switch {
            tau_on,
            profile: SwitchProfile::Step,
        }
    }

    pub fn ramp(tau_on: f64, width: f64) -> Result<Self, DetectorError> {
        if !(width >= 0.0 && width.is_finite()) {
            return Err(DetectorError::InvalidParameter {
                name: "width",
                value: width,
                reason: "ramp width must be finite and non-negative",
            });
        }
        Ok(Switch {
            tau_on,
            profile: SwitchProfile::Ramp { width },
        })
    }

    /// Coupled since the infinite past.
    pub fn always_on() -> Self {
        Switch::step(f64::NEG_INFINITY)
    }

    /// True if the profile has a jump at `tau_on` (step, or ramp of zero width).
    pub fn is_step(&self) -> bool {
        match self.profile {
            SwitchProfile::Step => true,
            SwitchProfile::Ramp { width } => width == 0.0,
        }
    }

    /// Proper time after which the switch equals 1.
    pub fn fully_on(&self) -> f64 {
        match self.profile {
            SwitchProfile::Ramp { width } => self.tau_on + width,
            SwitchProfile::Step => self.tau_on,
        }
    }

    pub fn value(&self, tau: f64) -> f64 {
        if tau < self.tau_on {
            return 0.0;
        }
        match self.profile {
            SwitchProfile::Ramp { width } if width > 0.0 && tau < self.tau_on + width => {
                0.5 * (1.0 - (std::f64::consts::PI * (tau - self.tau_on) / width).cos())
            }
            _ => 1.0,
        }
    }

    /// Regular part of `ds/dτ`; the jump of a step switch is handled separately as an impulse.
    pub fn derivative(&self, tau: f64) -> f64 {
        match self.profile {
            SwitchProfile::Ramp { width } if width > 0.0 && tau >= self.tau_on && tau < self.tau_on + width => {
                let k = std::f64::consts::PI / width;
                0.5 * k * (k * (tau - self.tau_on)).sin()
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub e: f64,
    pub omega: f64,
    pub switch: Switch,
    pub trajectory: Trajectory,
    /// When false the detector does not act back on the field: `μ̃_ji → 0` for every `j`.
    pub backreaction_enabled: bool,
    pub initial_q: f64,
    pub initial_qdot: f64,
}

impl DetectorConfig {
    pub fn new(e: f64, omega: f64, switch: Switch, trajectory: Trajectory) -> Result<Self, DetectorError> {
        if !e.is_finite() {
            return Err(DetectorError::InvalidParameter {
                name: "e",
                value: e,
                reason: "coupling must be finite",
            });
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(DetectorError::InvalidParameter {
                name: "omega",
                value: omega,
                reason: "oscillator frequency must be positive",
            });
        }
        if switch.tau_on.is_nan() || switch.tau_on == f64::INFINITY {
            return Err(DetectorError::InvalidParameter {
                name: "tau_on",
                value: switch.tau_on,
                reason: "switch-on time must be finite or -inf",
            });
        }
        Ok(DetectorConfig {
            e,
            omega,
            switch,
            trajectory,
            backreaction_enabled: true,
            initial_q: 0.0,
            initial_qdot: 0.0,
        })
    }

    pub fn with_backreaction(mut self, enabled: bool) -> Self {
        self.backreaction_enabled = enabled;
        self
    }

    pub fn with_initial_state(mut self, q: f64, qdot: f64) -> Self {
        self.initial_q = q;
        self.initial_qdot = qdot;
        self
    }
}
