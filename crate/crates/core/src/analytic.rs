//! Closed-form reference curves.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::moments::{MomentQuadrature, Moments};
use crate::params::{OUReference, SystemParams};

/// Below this value of `γ·Δ` the Ornstein-Uhlenbeck bracket switches to its Taylor series.
pub const SMALL_ARGUMENT: f64 = 1e-6;

const EDGE_TOL: f64 = 1e-12;

/// Exponential decay `e^{−2Γt}` without a mirror.
pub fn wigner_weisskopf_population(t: f64, p: &SystemParams) -> f64 {
    (-2.0 * p.decay_rate() * t).exp()
}

/// Feedback coefficient `Γ e^{Γτ − iφ}` multiplying each delayed round trip.
pub fn feedback_coefficient(p: &SystemParams) -> Complex64 {
    let magnitude = p.decay_rate() * (p.decay_rate() * p.delay()).exp();
    Complex64::from_polar(magnitude, -p.phase())
}

/// Noise-free amplitude `e^{−Γt} Σ_n [Γe^{Γτ−iφ}(t−nτ)]ⁿ/n! · Θ(t−nτ)`, with `Θ(0) = 1`.
pub fn series_amplitude_no_noise(t: f64, p: &SystemParams) -> Complex64 {
    let t = t.max(0.0);
    let c = feedback_coefficient(p);
    let tau = p.delay();
    let n_max = (t / tau).floor() as u32;
    let mut sum = Complex64::new(1.0, 0.0);
    for n in 1..=n_max {
        let z = c * (t - n as f64 * tau);
        let mut term = Complex64::new(1.0, 0.0);
        for k in 1..=n {
            term *= z / k as f64;
        }
        sum += term;
    }
    sum * (-p.decay_rate() * t).exp()
}

/// `(γΔ + e^{−γΔ} − 1)/γ²`, continuous through `γ → 0` where it tends to `Δ²/2`.
pub fn ou_shape(rate: f64, duration: f64) -> f64 {
    let x = rate * duration;
    if x < SMALL_ARGUMENT {
        0.5 * duration * duration * (1.0 - x / 3.0 + x * x / 12.0)
    } else {
        (x + (-x).exp_m1()) / (rate * rate)
    }
}

fn check_second_interval(t: f64, p: &SystemParams) -> Result<f64> {
    let tau = p.delay();
    if !(t >= tau * (1.0 - EDGE_TOL) && t <= 2.0 * tau * (1.0 + EDGE_TOL)) {
        return Err(Error::Domain(format!(
            "expression holds on [τ, 2τ] = [{tau}, {}], got t = {t}",
            2.0 * tau
        )));
    }
    Ok((t - tau).max(0.0))
}

/// Noise-averaged population on `[τ, 2τ]` for `φ = 2πn`, without the cross term:
/// `e^{−2Γt}[1 + (2Γ²/γ²)e^{2Γτ}(γ(t−τ) + e^{−γ(t−τ)} − 1)]`.
///
/// It carries no single-round-trip interference term, so it does not reduce to the
/// noise-free series as `γ → 0`; see [`population_2tau_with_cross`].
pub fn population_2tau_paper(t: f64, p: &SystemParams) -> Result<f64> {
    let lag = check_second_interval(t, p)?;
    let g = p.decay_rate();
    let bracket =
        1.0 + 2.0 * g * g * (2.0 * g * p.delay()).exp() * ou_shape(p.noise_strength(), lag);
    Ok(wigner_weisskopf_population(t, p) * bracket)
}

/// Full noise average on `[τ, 2τ]` including the interference term
/// `2Γe^{Γτ}cos φ (t−τ) e^{−γτ/2}`; valid for any feedback phase.
pub fn population_2tau_with_cross(t: f64, p: &SystemParams) -> Result<f64> {
    let lag = check_second_interval(t, p)?;
    let g = p.decay_rate();
    let tau = p.delay();
    let cross =
        2.0 * g * (g * tau).exp() * p.phase().cos() * lag * (-0.5 * p.noise_strength() * tau).exp();
    let ou = 2.0 * g * g * (2.0 * g * tau).exp() * ou_shape(p.noise_strength(), lag);
    Ok(wigner_weisskopf_population(t, p) * (1.0 + cross + ou))
}

/// Noise-averaged population on `[0, 3τ]` assembled from the five Gaussian moments.
pub fn population_3tau(t: f64, p: &SystemParams) -> Result<f64> {
    population_3tau_with(t, p, &MomentQuadrature::default())
}

pub fn population_3tau_with(
    t: f64,
    p: &SystemParams,
    quadrature: &MomentQuadrature,
) -> Result<f64> {
    let tau = p.delay();
    if !(t >= 0.0 && t <= 3.0 * tau * (1.0 + EDGE_TOL)) {
        return Err(Error::Domain(format!(
            "expression holds on [0, 3τ], got t = {t}"
        )));
    }
    if t < tau {
        return Ok(wigner_weisskopf_population(t, p));
    }
    let moments = quadrature.all(t, p)?;
    Ok(wigner_weisskopf_population(t, p) * bracket_3tau(&moments, p))
}

/// `⟨|1 + cN + c²M|²⟩` written with the real moments, `c = Γe^{Γτ−iφ}`.
fn bracket_3tau(m: &Moments, p: &SystemParams) -> f64 {
    let g = p.decay_rate();
    let e = (g * p.delay()).exp();
    let (cos1, cos2) = (p.phase().cos(), (2.0 * p.phase()).cos());
    1.0 + 2.0 * g * e * cos1 * m.n.re
        + (g * e).powi(2) * m.nn_star
        + 2.0 * (g * e).powi(2) * cos2 * m.m.re
        + 2.0 * (g * e).powi(3) * cos1 * m.nstar_m.re
        + (g * e).powi(4) * m.mm_star
}

/// Effective Ornstein-Uhlenbeck correlation `Γ² e^{2Γτ − γ|Δ|}` of the feedback phase factors.
pub fn ou_kernel(delta: f64, p: &SystemParams) -> f64 {
    let g = p.decay_rate();
    g * g * (2.0 * g * p.delay() - p.noise_strength() * delta.abs()).exp()
}

/// Mean-square displacement `(A₀/γ²)[γt + e^{−γt} − 1]`.
pub fn ou_msd(t: f64, reference: &OUReference) -> f64 {
    reference.amplitude() * ou_shape(reference.relaxation_rate(), t.max(0.0))
}

/// Stationary velocity autocovariance `(A₀/2) e^{−γ|Δ|}`, whose double integral is [`ou_msd`].
pub fn ou_velocity_covariance(delta: f64, reference: &OUReference) -> f64 {
    0.5 * reference.amplitude() * (-reference.relaxation_rate() * delta.abs()).exp()
}

/// Stationary velocity path of `u̇ = −γu + F_t`, sampled exactly on `k·dt`.
pub fn ou_velocity_path(
    reference: &OUReference,
    seed: u64,
    n_steps: usize,
    dt: f64,
) -> Result<Vec<f64>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid(format!("time step must be > 0, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variance = 0.5 * reference.amplitude();
    let decay = (-reference.relaxation_rate() * dt).exp();
    let kick = (variance * -(-2.0 * reference.relaxation_rate() * dt).exp_m1()).sqrt();
    let z0: f64 = StandardNormal.sample(&mut rng);
    let mut u = variance.sqrt() * z0;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(u);
    for _ in 0..n_steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        u = decay * u + kick * z;
        out.push(u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    fn p(decay: f64, phase: f64, gamma: f64) -> SystemParams {
        SystemParams::dimensionless(decay, phase, gamma).unwrap()
    }

    #[test]
    fn wigner_weisskopf() {
        assert_eq!(wigner_weisskopf_population(0.0, &p(0.5, 0.0, 0.0)), 1.0);
        assert_eq!(wigner_weisskopf_population(7.0, &p(0.0, 0.0, 0.0)), 1.0);
        assert_relative_eq!(
            wigner_weisskopf_population(1.0, &p(0.5, 0.0, 0.0)),
            (-1.0f64).exp()
        );
    }

    #[test]
    fn series_first_intervals() {
        let q = p(0.5, 0.0, 0.0);
        for t in [0.0, 0.3, 0.99] {
            assert_relative_eq!(
                series_amplitude_no_noise(t, &q).re,
                (-0.5 * t).exp(),
                max_relative = 1e-15
            );
            assert_eq!(series_amplitude_no_noise(t, &q).im, 0.0);
        }
        for t in [1.0f64, 1.4, 1.99] {
            let want = (-0.5 * t).exp() * (1.0 + 0.5 * 0.5f64.exp() * (t - 1.0));
            assert_relative_eq!(
                series_amplitude_no_noise(t, &q).re,
                want,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn series_is_continuous_at_round_trips() {
        let q = p(0.5, 3.3, 0.0);
        for n in 1..=4 {
            let t = n as f64;
            let left = series_amplitude_no_noise(t - 1e-13, &q);
            let right = series_amplitude_no_noise(t, &q);
            assert!((left - right).norm() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn paper_variant_edges_and_limit() {
        let q = p(0.5, TAU, 2.0);
        assert_relative_eq!(
            population_2tau_paper(1.0, &q).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            population_2tau_with_cross(1.0, &q).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-15
        );
        let q0 = q.noiseless();
        let t: f64 = 1.5;
        let want = (-2.0 * 0.5 * t).exp() * (1.0 + 0.25 * 1f64.exp() * 0.25);
        assert_relative_eq!(
            population_2tau_paper(t, &q0).unwrap(),
            want,
            max_relative = 1e-14
        );
        assert!(population_2tau_paper(0.5, &q).is_err());
        assert!(population_2tau_with_cross(2.5, &q).is_err());
    }

    #[test]
    fn cross_variant_reduces_to_series() {
        for phase in [0.0, 1.0, 3.3, 5.0] {
            let q = p(0.5, phase, 0.0);
            for k in 0..=20 {
                let t = 1.0 + k as f64 / 20.0;
                let series = series_amplitude_no_noise(t, &q).norm_sqr();
                let got = population_2tau_with_cross(t, &q).unwrap();
                assert_relative_eq!(got, series, max_relative = 1e-13);
            }
        }
        // Binomial form at φ = 0.
        let q = p(0.5, 0.0, 0.0);
        let t: f64 = 1.7;
        let want = (-t).exp() * (1.0 + 0.5 * 0.5f64.exp() * 0.7).powi(2);
        assert_relative_eq!(
            population_2tau_with_cross(t, &q).unwrap(),
            want,
            max_relative = 1e-14
        );
    }

    #[test]
    fn cross_dominates_when_cosine_positive() {
        for phase in [0.0, 0.5, 1.5, 5.0] {
            let q = p(0.5, phase, 1.0);
            for k in 0..=10 {
                let t = 1.0 + k as f64 / 10.0;
                assert!(
                    population_2tau_with_cross(t, &q).unwrap()
                        >= population_2tau_paper(t, &q).unwrap()
                );
            }
        }
    }

    #[test]
    fn small_gamma_branch_is_smooth() {
        let below = ou_shape(SMALL_ARGUMENT * (1.0 - 1e-9), 1.0);
        let above = ou_shape(SMALL_ARGUMENT * (1.0 + 1e-9), 1.0);
        assert!(((below - above) / below).abs() < 1e-9);
        assert_relative_eq!(
            ou_shape(1e-3, 1.0),
            (1e-3 + (-1e-3f64).exp() - 1.0) / 1e-6,
            max_relative = 1e-6
        );
    }

    #[test]
    fn three_tau_below_first_round_trip() {
        let q = p(0.5, 3.3, 2.0);
        for t in [0.0, 0.4, 0.99] {
            assert_eq!(
                population_3tau(t, &q).unwrap(),
                wigner_weisskopf_population(t, &q)
            );
        }
        assert!(population_3tau(3.5, &q).is_err());
    }

    #[test]
    fn three_tau_matches_series_without_noise() {
        for phase in [0.0, 1.0, 3.3] {
            let q = p(0.5, phase, 0.0);
            for k in 0..=30 {
                let t = k as f64 / 10.0;
                let series = series_amplitude_no_noise(t, &q).norm_sqr();
                let got = population_3tau(t, &q).unwrap();
                assert_relative_eq!(got, series, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn three_tau_agrees_with_second_interval_formula() {
        let q = p(0.5, 2.0, 1.5);
        for t in [1.0, 1.3, 1.8, 2.0] {
            let a = population_3tau(t, &q).unwrap();
            let b = population_2tau_with_cross(t, &q).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn three_tau_near_zero_noise() {
        let q0 = p(0.5, 3.3, 0.0);
        let q = p(0.5, 3.3, 1e-8);
        for k in 0..=30 {
            let t = k as f64 / 10.0;
            let d = population_3tau(t, &q).unwrap() - population_3tau(t, &q0).unwrap();
            assert!(d.abs() < 1e-4);
        }
    }

    #[test]
    fn kernel_properties() {
        let q = p(0.5, 0.0, 2.0);
        assert_relative_eq!(ou_kernel(0.0, &q), 0.25 * 1f64.exp());
        assert_eq!(ou_kernel(0.3, &q), ou_kernel(-0.3, &q));
        assert_eq!(ou_kernel(0.3, &p(0.0, 0.0, 2.0)), 0.0);
    }

    #[test]
    fn msd_properties() {
        let r = OUReference::new(3.0, 2.0).unwrap();
        assert_eq!(ou_msd(0.0, &r), 0.0);
        // Leading correction is −γt/3, so 1% needs γt ≤ 0.03.
        for t in [1e-4, 1e-3, 0.01, 0.015] {
            assert_relative_eq!(ou_msd(t, &r), 1.5 * t * t, max_relative = 0.01);
            let rel = 1.0 - ou_msd(t, &r) / (1.5 * t * t);
            assert_relative_eq!(rel, 2.0 * t / 3.0, max_relative = 0.05);
        }
        let mut last = 0.0;
        for k in 1..200 {
            let v = ou_msd(k as f64 * 0.05, &r);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn msd_is_the_second_interval_noise_term() {
        let q = p(0.5, 0.0, 2.0);
        let g = q.decay_rate();
        let r = OUReference::new(2.0 * g * g * (2.0 * g).exp(), q.noise_strength()).unwrap();
        for t in [1.1, 1.5, 2.0] {
            let noise_term =
                population_2tau_paper(t, &q).unwrap() - wigner_weisskopf_population(t, &q);
            let via_msd = wigner_weisskopf_population(t, &q) * ou_msd(t - 1.0, &r);
            assert_relative_eq!(noise_term, via_msd, max_relative = 1e-13);
        }
    }
}
