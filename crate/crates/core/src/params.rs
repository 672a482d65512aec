//! Physical constants of one scenario.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Decay rate, delay, feedback phase and noise strength of one emitter-mirror setup.
///
/// The feedback phase is the round-trip phase `ω₀τ`. Only `e^{±iφ}` enters the
/// dynamics, so it is stored reduced to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SystemParams {
    decay_rate: f64,
    delay: f64,
    phase: f64,
    noise_strength: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    decay_rate: f64,
    delay: f64,
    phase: f64,
    noise_strength: f64,
}

impl TryFrom<RawParams> for SystemParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        SystemParams::new(raw.decay_rate, raw.delay, raw.phase, raw.noise_strength)
    }
}

impl From<SystemParams> for RawParams {
    fn from(p: SystemParams) -> Self {
        RawParams {
            decay_rate: p.decay_rate,
            delay: p.delay,
            phase: p.phase,
            noise_strength: p.noise_strength,
        }
    }
}

impl SystemParams {
    /// `decay_rate` is Γ, `delay` the round trip τ, `phase` the feedback phase ω₀τ and
    /// `noise_strength` the white-noise intensity γ in `⟨F_t F_s⟩ = γ δ(t−s)`.
    pub fn new(decay_rate: f64, delay: f64, phase: f64, noise_strength: f64) -> Result<Self> {
        if !(decay_rate.is_finite() && decay_rate >= 0.0) {
            return Err(invalid(format!(
                "decay rate must be finite and >= 0, got {decay_rate}"
            )));
        }
        if !(delay.is_finite() && delay > 0.0) {
            return Err(invalid(format!(
                "delay must be finite and > 0, got {delay}"
            )));
        }
        if !phase.is_finite() {
            return Err(invalid(format!(
                "feedback phase must be finite, got {phase}"
            )));
        }
        if !(noise_strength.is_finite() && noise_strength >= 0.0) {
            return Err(invalid(format!(
                "noise strength must be finite and >= 0, got {noise_strength}"
            )));
        }
        Ok(SystemParams {
            decay_rate,
            delay,
            phase: reduce_phase(phase),
            noise_strength,
        })
    }

    /// Builds the parameters from the mirror coupling `g₀` using `Γ = g₀²π/2`.
    pub fn from_coupling(
        coupling: f64,
        delay: f64,
        phase: f64,
        noise_strength: f64,
    ) -> Result<Self> {
        if !coupling.is_finite() {
            return Err(invalid(format!("coupling must be finite, got {coupling}")));
        }
        Self::new(coupling * coupling * PI / 2.0, delay, phase, noise_strength)
    }

    /// Parameters given in units of the delay: `Γτ`, `φ`, `γτ`, with τ = 1.
    pub fn dimensionless(decay_tau: f64, phase: f64, noise_tau: f64) -> Result<Self> {
        Self::new(decay_tau, 1.0, phase, noise_tau)
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn noise_strength(&self) -> f64 {
        self.noise_strength
    }

    pub fn with_phase(self, phase: f64) -> Result<Self> {
        Self::new(self.decay_rate, self.delay, phase, self.noise_strength)
    }

    pub fn with_noise_strength(self, noise_strength: f64) -> Result<Self> {
        Self::new(self.decay_rate, self.delay, self.phase, noise_strength)
    }

    pub fn with_decay_rate(self, decay_rate: f64) -> Result<Self> {
        Self::new(decay_rate, self.delay, self.phase, self.noise_strength)
    }

    /// The same scenario without phase noise.
    pub fn noiseless(self) -> Self {
        SystemParams {
            noise_strength: 0.0,
            ..self
        }
    }
}

fn reduce_phase(phase: f64) -> f64 {
    // fmod is exact, so a phase shifted by an exactly representable 2π lands on the same bits.
    let r = phase.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Constants of the reference Ornstein-Uhlenbeck velocity process `u̇ = −γu + F_t`.
///
/// `amplitude` is the constant `A₀` of the displacement law; the stationary velocity
/// autocovariance is `(A₀/2)·e^{−γ|Δ|}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OUReference {
    amplitude: f64,
    relaxation_rate: f64,
}

impl OUReference {
    pub fn new(amplitude: f64, relaxation_rate: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(invalid(format!(
                "amplitude must be finite and >= 0, got {amplitude}"
            )));
        }
        if !(relaxation_rate.is_finite() && relaxation_rate > 0.0) {
            return Err(invalid(format!(
                "relaxation rate must be finite and > 0, got {relaxation_rate}"
            )));
        }
        Ok(OUReference {
            amplitude,
            relaxation_rate,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn relaxation_rate(&self) -> f64 {
        self.relaxation_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_is_reduced() {
        let p = SystemParams::new(1.0, 1.0, -0.5, 0.0).unwrap();
        assert!((p.phase() - (TAU - 0.5)).abs() < 1e-15);
        let p = SystemParams::new(1.0, 1.0, TAU, 0.0).unwrap();
        assert_eq!(p.phase(), 0.0);
        let p = SystemParams::new(1.0, 1.0, 3.25 + TAU, 0.0).unwrap();
        assert_eq!(p.phase(), 3.25);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(SystemParams::new(-1.0, 1.0, 0.0, 0.0).is_err());
        assert!(SystemParams::new(1.0, 0.0, 0.0, 0.0).is_err());
        assert!(SystemParams::new(1.0, 1.0, f64::NAN, 0.0).is_err());
        assert!(SystemParams::new(1.0, 1.0, 0.0, -1e-3).is_err());
        assert!(OUReference::new(1.0, 0.0).is_err());
    }

    #[test]
    fn coupling_gives_decay_rate() {
        let p = SystemParams::from_coupling(2.0, 1.0, 0.0, 0.0).unwrap();
        assert!((p.decay_rate() - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let ok: SystemParams = serde_json::from_str(
            r#"{"decay_rate":0.5,"delay":1.0,"phase":3.3,"noise_strength":2.0}"#,
        )
        .unwrap();
        assert_eq!(ok.phase(), 3.3);
        let bad = serde_json::from_str::<SystemParams>(
            r#"{"decay_rate":0.5,"delay":1.0,"phase":3.3,"noise_strength":2.0,"omega":1}"#,
        );
        assert!(bad.is_err());
        let invalid = serde_json::from_str::<SystemParams>(
            r#"{"decay_rate":0.5,"delay":-1.0,"phase":3.3,"noise_strength":2.0}"#,
        );
        assert!(invalid.is_err());
    }
}
