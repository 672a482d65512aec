//! Monte Carlo ensembles over noise realisations.
//!
//! Path `i` is driven by the noise stream of `path_seed(master_seed, i)`, identical to
//! `generate_path` with that seed. Paths are grouped into fixed chunks that rayon
//! processes in any order; chunk statistics are then merged in chunk order, so the
//! result is bit-identical for every worker count.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::analytic::series_amplitude_no_noise;
use crate::error::{invalid, Result};
use crate::grid::grid_index;
use crate::integrator::DelayStepper;
use crate::noise::{path_seed, IncrementStream};
use crate::params::SystemParams;
use crate::stats::{merge_moments, stderr_of};

const CHUNK: u64 = 64;

/// Per-time-point streaming mean and squared-deviation sum of `|P|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    times: Vec<f64>,
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl EnsembleStats {
    pub fn empty(times: Vec<f64>) -> Self {
        let len = times.len();
        EnsembleStats {
            times,
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn variance(&self) -> Vec<f64> {
        let denom = self.n.saturating_sub(1).max(1) as f64;
        self.m2
            .iter()
            .map(|m| if self.n < 2 { 0.0 } else { m.max(0.0) / denom })
            .collect()
    }

    /// `sqrt(m2 / (n(n−1)))` per point.
    pub fn stderr(&self) -> Vec<f64> {
        self.m2.iter().map(|&m| stderr_of(self.n, m)).collect()
    }

    /// Adds one realisation's populations, sampled on `times`.
    pub fn push(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.len() {
            return Err(invalid(format!(
                "sample has {} points, grid has {}",
                sample.len(),
                self.len()
            )));
        }
        self.push_unchecked(sample);
        Ok(())
    }

    fn push_unchecked(&mut self, sample: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    /// Statistics of the union of both sample sets.
    pub fn merge(&self, other: &EnsembleStats) -> Result<EnsembleStats> {
        if self.times != other.times {
            return Err(invalid(
                "cannot merge statistics collected on different grids",
            ));
        }
        let mut out = EnsembleStats::empty(self.times.clone());
        out.n = self.n + other.n;
        for k in 0..self.len() {
            let (mean, m2, _) = merge_moments(
                self.n,
                self.mean[k],
                self.m2[k],
                other.n,
                other.mean[k],
                other.m2[k],
            );
            out.mean[k] = mean;
            out.m2[k] = m2;
        }
        Ok(out)
    }

    /// CSV with columns `time,mean_population,stderr,n`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time,mean_population,stderr,n")?;
        for ((t, m), s) in self.times.iter().zip(&self.mean).zip(self.stderr()) {
            writeln!(out, "{t:.16e},{m:.16e},{s:.16e},{}", self.n)?;
        }
        Ok(())
    }
}

/// Pairwise combination of two ensembles on the same grid.
pub fn merge(a: &EnsembleStats, b: &EnsembleStats) -> Result<EnsembleStats> {
    a.merge(b)
}

/// Mean population over `n_paths` realisations at every grid point of `[0, t_max]`.
pub fn run_ensemble(
    p: &SystemParams,
    n_paths: u64,
    master_seed: u64,
    dt: f64,
    t_max: f64,
) -> Result<EnsembleStats> {
    let stepper = DelayStepper::new(*p, dt, t_max)?;
    let samples: Vec<usize> = (0..=stepper.n_steps()).collect();
    let mut out = simulate(&[stepper], &samples, n_paths, master_seed)?;
    Ok(out.pop().expect("one stepper in, one result out"))
}

/// Runs every stepper on the same noise realisations, sampling `|P|²` at `samples`.
fn simulate(
    steppers: &[DelayStepper],
    samples: &[usize],
    n_paths: u64,
    master_seed: u64,
) -> Result<Vec<EnsembleStats>> {
    if n_paths == 0 {
        return Err(invalid("an ensemble needs at least one path"));
    }
    let first = &steppers[0];
    let (dt, n_steps, gamma) = (first.dt(), first.n_steps(), first.params().noise_strength());
    debug_assert!(steppers
        .iter()
        .all(|s| s.n_steps() == n_steps && s.dt() == dt));
    debug_assert!(samples.windows(2).all(|w| w[0] < w[1]));
    let times: Vec<f64> = samples.iter().map(|&k| k as f64 * dt).collect();
    // Validates the noise parameters once, before fanning out.
    IncrementStream::new(0, dt, gamma)?;

    let n_chunks = n_paths.div_ceil(CHUNK);
    let chunks: Vec<Vec<EnsembleStats>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut stats = vec![EnsembleStats::empty(times.clone()); steppers.len()];
            let mut increments = vec![0.0; n_steps];
            let mut sampled = vec![0.0; samples.len()];
            let end = ((c + 1) * CHUNK).min(n_paths);
            for i in c * CHUNK..end {
                if gamma > 0.0 {
                    let mut stream = IncrementStream::new(path_seed(master_seed, i), dt, gamma)
                        .expect("validated above");
                    increments
                        .iter_mut()
                        .for_each(|x| *x = stream.next_increment());
                }
                for (stepper, acc) in steppers.iter().zip(stats.iter_mut()) {
                    let mut cursor = 0;
                    let mut record = |k: usize, v: Complex64| {
                        if cursor < samples.len() && samples[cursor] == k {
                            sampled[cursor] = v.norm_sqr();
                            cursor += 1;
                        }
                    };
                    if gamma > 0.0 {
                        let mut it = increments.iter().copied();
                        let mut next = || it.next().unwrap_or(0.0);
                        stepper.run(Complex64::new(1.0, 0.0), Some(&mut next), &mut record);
                    } else {
                        stepper.run(Complex64::new(1.0, 0.0), None, &mut record);
                    }
                    acc.push_unchecked(&sampled);
                }
            }
            stats
        })
        .collect();

    let mut total = vec![EnsembleStats::empty(times); steppers.len()];
    for chunk in &chunks {
        for (acc, part) in total.iter_mut().zip(chunk) {
            *acc = acc.merge(part)?;
        }
    }
    Ok(total)
}

/// Noise-free minus noise-averaged population over a phase × time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMap {
    pub phases: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[i][j] = |P(t_j)|²_{γ=0} − ⟨|P(t_j)|²⟩` at phase `phases[i]`.
    pub values: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
}

/// Difference map with the noise-free reference taken from the analytic series.
///
/// All phases share the same noise realisations.
pub fn phase_difference_map(
    p_base: &SystemParams,
    phases: &[f64],
    times: &[f64],
    n_paths: u64,
    master_seed: u64,
    dt: f64,
) -> Result<DifferenceMap> {
    if phases.is_empty() || times.is_empty() {
        return Err(invalid("phase and time grids must be nonempty"));
    }
    let mut indices = times
        .iter()
        .map(|&t| grid_index("map time", t, dt))
        .collect::<Result<Vec<_>>>()?;
    let order_ok = indices.windows(2).all(|w| w[0] < w[1]);
    if !order_ok {
        return Err(invalid("map times must be strictly increasing"));
    }
    let horizon = indices.last().copied().unwrap_or(0).max(1) as f64 * dt;
    let params = phases
        .iter()
        .map(|&phi| p_base.with_phase(phi))
        .collect::<Result<Vec<_>>>()?;
    let steppers = params
        .iter()
        .map(|p| DelayStepper::new(*p, dt, horizon))
        .collect::<Result<Vec<_>>>()?;
    indices.dedup();
    let stats = simulate(&steppers, &indices, n_paths, master_seed)?;

    let grid_times: Vec<f64> = indices.iter().map(|&k| k as f64 * dt).collect();
    let mut values = Vec::with_capacity(phases.len());
    let mut stderr = Vec::with_capacity(phases.len());
    for (p, s) in params.iter().zip(&stats) {
        values.push(
            grid_times
                .iter()
                .zip(s.mean())
                .map(|(&t, m)| series_amplitude_no_noise(t, p).norm_sqr() - m)
                .collect(),
        );
        stderr.push(s.stderr());
    }
    Ok(DifferenceMap {
        phases: phases.to_vec(),
        times: grid_times,
        values,
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, population_series};
    use crate::noise::generate_path;

    #[test]
    fn noiseless_ensemble_has_no_spread() {
        let p = SystemParams::dimensionless(0.5, 3.3, 0.0).unwrap();
        let s = run_ensemble(&p, 10, 1, 0.01, 3.0).unwrap();
        assert_eq!(s.count(), 10);
        assert!(s.stderr().iter().all(|&e| e == 0.0));
        let tr = integrate(&p, None, 0.01, 3.0, Complex64::new(1.0, 0.0)).unwrap();
        assert_eq!(s.mean(), population_series(&tr).as_slice());
    }

    #[test]
    fn paths_match_generate_path() {
        let p = SystemParams::dimensionless(0.5, 1.0, 2.0).unwrap();
        let s = run_ensemble(&p, 1, 77, 0.01, 2.0).unwrap();
        let path = generate_path(path_seed(77, 0), 200, 0.01, 2.0).unwrap();
        let tr = integrate(&p, Some(&path), 0.01, 2.0, Complex64::new(1.0, 0.0)).unwrap();
        assert_eq!(s.mean(), population_series(&tr).as_slice());
    }

    #[test]
    fn merge_identities() {
        let times = vec![0.0, 1.0, 2.0];
        let mut a = EnsembleStats::empty(times.clone());
        let mut b = EnsembleStats::empty(times.clone());
        let mut all = EnsembleStats::empty(times.clone());
        for i in 0..37 {
            let x = [i as f64 * 0.1, (i as f64).sin(), 1.0 / (1.0 + i as f64)];
            if i % 3 == 0 {
                a.push(&x).unwrap()
            } else {
                b.push(&x).unwrap()
            }
            all.push(&x).unwrap();
        }
        assert_eq!(a.merge(&EnsembleStats::empty(times.clone())).unwrap(), a);
        let ab = merge(&a, &b).unwrap();
        let ba = merge(&b, &a).unwrap();
        for k in 0..3 {
            assert!((ab.mean()[k] - ba.mean()[k]).abs() <= 1e-12 * ab.mean()[k].abs());
            assert!(
                (ab.mean()[k] - all.mean()[k]).abs() <= 1e-12 * all.mean()[k].abs().max(1e-300)
            );
            assert!((ab.m2()[k] - all.m2()[k]).abs() <= 1e-12 * all.m2()[k].abs());
        }
        assert!(a.merge(&EnsembleStats::empty(vec![0.0])).is_err());
        assert!(a.push(&[1.0]).is_err());
    }

    #[test]
    fn zero_paths_rejected() {
        let p = SystemParams::dimensionless(0.5, 3.3, 1.0).unwrap();
        assert!(run_ensemble(&p, 0, 1, 0.01, 3.0).is_err());
    }

    #[test]
    fn noiseless_map_is_near_zero() {
        let p = SystemParams::dimensionless(0.5, 0.0, 0.0).unwrap();
        let map =
            phase_difference_map(&p, &[0.0, 2.0, 4.0], &[1.0, 2.0, 3.0], 4, 3, 0.001).unwrap();
        assert_eq!(map.values.len(), 3);
        assert!(map.values.iter().flatten().all(|v| v.abs() < 1e-7));
        assert!(phase_difference_map(&p, &[], &[1.0], 4, 3, 0.01).is_err());
        assert!(phase_difference_map(&p, &[0.0], &[1.005], 4, 3, 0.01).is_err());
    }
}
