//! Per-realisation integration of the stochastic delay equation
//! `dP/dt = (iF_t − Γ)P + Γe^{−iφ} P(t−τ) θ(t−τ)`.
//!
//! The local part is advanced by its exact factor `e^{−Γdt + iΔW_k}`, so the noise
//! enters as a unitary phase (Stratonovich reading). The delayed part contributes
//! `Γe^{−iφ}·dt·½(P_{k−d} + P_{k−d+1})` propagated over half a step by the local
//! factor. The delay term switches on at step index `d = τ/dt`.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::grid::{delay_steps, grid_index};
use crate::noise::NoisePath;
use crate::params::SystemParams;

/// Complex amplitudes `P_k = P(k·dt)` of one realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeTrajectory {
    dt: f64,
    values: Vec<Complex64>,
    params: SystemParams,
}

impl AmplitudeTrajectory {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |k| k as f64 * self.dt)
    }

    /// CSV dump: `step_index,time,re_amplitude,im_amplitude,population`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step_index,time,re_amplitude,im_amplitude,population")?;
        for (k, v) in self.values.iter().enumerate() {
            let t = k as f64 * self.dt;
            writeln!(
                out,
                "{k},{t:.16e},{:.16e},{:.16e},{:.16e}",
                v.re,
                v.im,
                v.norm_sqr()
            )?;
        }
        Ok(())
    }
}

/// `|P_k|²` at every grid point.
pub fn population_series(trajectory: &AmplitudeTrajectory) -> Vec<f64> {
    trajectory.values.iter().map(|v| v.norm_sqr()).collect()
}

/// The fixed per-step coefficients for one scenario and grid.
#[derive(Debug, Clone)]
pub struct DelayStepper {
    params: SystemParams,
    dt: f64,
    delay_steps: usize,
    n_steps: usize,
    local_decay: f64,
    half_decay: f64,
    /// `Γ e^{−iφ} dt / 2`, or zero when feedback is switched off.
    delayed_weight: Complex64,
}

impl DelayStepper {
    /// Grid with step `dt` dividing τ, run up to the grid-aligned horizon `t_max`.
    pub fn new(params: SystemParams, dt: f64, t_max: f64) -> Result<Self> {
        let d = delay_steps(params.delay(), dt)?;
        let n_steps = grid_index("horizon", t_max, dt)?;
        if n_steps == 0 {
            return Err(invalid("the horizon must span at least one step"));
        }
        let g = params.decay_rate();
        Ok(DelayStepper {
            params,
            dt,
            delay_steps: d,
            n_steps,
            local_decay: (-g * dt).exp(),
            half_decay: (-0.5 * g * dt).exp(),
            delayed_weight: Complex64::from_polar(0.5 * g * dt, -params.phase()),
        })
    }

    /// Drops the delayed term, leaving plain decay with phase noise.
    pub fn without_feedback(mut self) -> Self {
        self.delayed_weight = Complex64::new(0.0, 0.0);
        self
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    /// Integrates from `p0`, pulling one phase increment per step (`None` for no noise)
    /// and reporting `(k, P_k)` for `k = 0..=n_steps`.
    ///
    /// Only the last `d + 1` amplitudes are kept.
    pub fn run(
        &self,
        p0: Complex64,
        mut increment: Option<&mut dyn FnMut() -> f64>,
        mut visit: impl FnMut(usize, Complex64),
    ) {
        let d = self.delay_steps;
        let mut history = vec![Complex64::new(0.0, 0.0); d + 1];
        history[0] = p0;
        visit(0, p0);
        let mut current = p0;
        let noiseless = Complex64::new(1.0, 0.0);
        for k in 0..self.n_steps {
            let half_phase = match increment.as_mut() {
                Some(next) => Complex64::cis(0.5 * next()),
                None => noiseless,
            };
            let local = self.local_decay * (half_phase * half_phase);
            let mut next = local * current;
            let slot = (k + 1) % (d + 1);
            if k >= d {
                let older = history[slot];
                let newer = history[(k + 2) % (d + 1)];
                next += self.delayed_weight * (self.half_decay * half_phase) * (older + newer);
            }
            history[slot] = next;
            current = next;
            visit(k + 1, next);
        }
    }
}

/// Integrates one realisation on `[0, t_max]`; `path = None` means no noise.
pub fn integrate(
    params: &SystemParams,
    path: Option<&NoisePath>,
    dt: f64,
    t_max: f64,
    p0: Complex64,
) -> Result<AmplitudeTrajectory> {
    let stepper = DelayStepper::new(*params, dt, t_max)?;
    integrate_with(&stepper, path, p0)
}

/// As [`integrate`], with a prepared (possibly feedback-free) stepper.
pub fn integrate_with(
    stepper: &DelayStepper,
    path: Option<&NoisePath>,
    p0: Complex64,
) -> Result<AmplitudeTrajectory> {
    if !(p0.norm() <= 1.0) {
        return Err(invalid(format!(
            "initial amplitude must satisfy |p0| <= 1, got {p0}"
        )));
    }
    let dt = stepper.dt;
    if let Some(path) = path {
        if (path.dt() - dt).abs() > 1e-12 * dt {
            return Err(Error::Alignment {
                what: "noise path step",
                value: path.dt(),
                step: dt,
            });
        }
        if path.n_steps() < stepper.n_steps {
            return Err(Error::InsufficientData(format!(
                "noise path has {} steps, horizon needs {}",
                path.n_steps(),
                stepper.n_steps
            )));
        }
    }
    let mut values = Vec::with_capacity(stepper.n_steps + 1);
    match path {
        Some(path) => {
            let mut incs = path.increments().iter().copied();
            let mut next = || incs.next().unwrap_or(0.0);
            stepper.run(p0, Some(&mut next), |_, v| values.push(v));
        }
        None => stepper.run(p0, None, |_, v| values.push(v)),
    }
    Ok(AmplitudeTrajectory {
        dt,
        values,
        params: stepper.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::series_amplitude_no_noise;
    use crate::noise::generate_path;

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    #[test]
    fn no_decay_is_constant() {
        let p = SystemParams::dimensionless(0.0, 1.0, 0.0).unwrap();
        let p0 = Complex64::new(0.6, 0.3);
        let tr = integrate(&p, None, 0.01, 3.0, p0).unwrap();
        assert!(tr.values().iter().all(|&v| v == p0));
    }

    #[test]
    fn first_interval_is_pure_decay() {
        let p = SystemParams::dimensionless(0.5, 3.3, 0.0).unwrap();
        let tr = integrate(&p, None, 0.001, 3.0, one()).unwrap();
        let pops = population_series(&tr);
        assert_eq!(pops[0], 1.0);
        for k in (0..1000).step_by(50) {
            let t = k as f64 * 0.001;
            assert!((pops[k] - (-t).exp()).abs() < 1e-13);
        }
        for w in pops[..1000].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn matches_series_without_noise() {
        let p = SystemParams::dimensionless(0.5, 3.3, 0.0).unwrap();
        let dt = 1.0 / 2000.0;
        let tr = integrate(&p, None, dt, 3.0, one()).unwrap();
        for (k, v) in tr.values().iter().enumerate() {
            let want = series_amplitude_no_noise(k as f64 * dt, &p);
            assert!(
                (v.norm_sqr() - want.norm_sqr()).abs() <= 1e-3 * want.norm_sqr(),
                "k={k}"
            );
        }
    }

    #[test]
    fn feedback_free_run_is_local_factor_product() {
        let p = SystemParams::dimensionless(0.5, 3.3, 2.0).unwrap();
        let dt = 0.01;
        let path = generate_path(9, 300, dt, 2.0).unwrap();
        let stepper = DelayStepper::new(p, dt, 3.0).unwrap().without_feedback();
        let tr = integrate_with(&stepper, Some(&path), one()).unwrap();
        let decay = (-0.5 * dt).exp();
        let mut expected = one();
        for (k, &inc) in path.increments().iter().enumerate() {
            let half = Complex64::cis(0.5 * inc);
            expected = decay * (half * half) * expected;
            assert_eq!(tr.values()[k + 1], expected);
        }
        let last = tr.values()[300];
        let closed = Complex64::from_polar((-0.5 * 3.0f64).exp(), path.cumulative()[300]);
        assert!((last - closed).norm() < 1e-12);
    }

    #[test]
    fn preconditions() {
        let p = SystemParams::dimensionless(0.5, 0.0, 0.0).unwrap();
        assert!(matches!(
            integrate(&p, None, 0.3, 3.0, one()),
            Err(Error::Alignment { .. })
        ));
        assert!(matches!(
            integrate(&p, None, 0.01, 3.0, Complex64::new(1.0, 0.1)),
            Err(Error::InvalidParameter(_))
        ));
        let short = generate_path(1, 100, 0.01, 1.0).unwrap();
        assert!(integrate(&p, Some(&short), 0.01, 3.0, one()).is_err());
        let coarse = generate_path(1, 1000, 0.02, 1.0).unwrap();
        assert!(matches!(
            integrate(&p, Some(&coarse), 0.01, 3.0, one()),
            Err(Error::Alignment { .. })
        ));
    }

    #[test]
    fn one_step_delay() {
        // d = 1 exercises the smallest history ring.
        let p = SystemParams::dimensionless(0.5, 0.0, 0.0).unwrap();
        let tr = integrate(&p, None, 1.0, 3.0, one()).unwrap();
        assert_eq!(tr.values().len(), 4);
        assert!(tr.values().iter().all(|v| v.norm() <= 1.0));
    }

    #[test]
    fn csv_layout() {
        let p = SystemParams::dimensionless(0.5, 0.0, 0.0).unwrap();
        let tr = integrate(&p, None, 0.5, 1.0, one()).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("step_index,time,re_amplitude,im_amplitude,population\n0,"));
    }
}
