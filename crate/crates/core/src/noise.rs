//! Gaussian white-noise realisations on a uniform grid.
//!
//! A path stores the integrated increments `ΔW_k = ∫ F dt` over each step rather than
//! pointwise values of `F_t`; every consumer only needs the phase integral
//! `φ(b,a) = ∫ₐᵇ F dt`. Increments are rounded onto a fixed-point lattice of
//! `2⁻⁴⁰` rad so that prefix sums, their differences and the additivity of `φ` are
//! exact in floating point.

use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::grid::grid_index;
use crate::stats::Welford;

/// Phase lattice spacing in radians.
pub const PHASE_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

/// Largest representable cumulative phase (in quanta) that still converts to f64 exactly.
const MAX_QUANTA: i64 = 1 << 53;

/// Seed of realisation `index` inside an ensemble started from `master_seed`.
///
/// Stateless, so any worker can derive any path independently.
pub fn path_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Streaming source of quantised increments `ΔW ~ N(0, γ·dt)` for one seed.
pub(crate) struct IncrementStream {
    rng: ChaCha8Rng,
    scale: f64,
}

impl IncrementStream {
    pub(crate) fn new(seed: u64, dt: f64, gamma: f64) -> Result<Self> {
        validate(dt, gamma)?;
        Ok(IncrementStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            scale: (gamma * dt).sqrt(),
        })
    }

    /// Next increment in quanta.
    #[inline]
    pub(crate) fn next_quanta(&mut self) -> i64 {
        if self.scale == 0.0 {
            return 0;
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        (self.scale * z / PHASE_QUANTUM).round() as i64
    }

    #[inline]
    pub(crate) fn next_increment(&mut self) -> f64 {
        self.next_quanta() as f64 * PHASE_QUANTUM
    }
}

fn validate(dt: f64, gamma: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid(format!("time step must be > 0, got {dt}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(invalid(format!("noise strength must be >= 0, got {gamma}")));
    }
    // Ten-sigma increments have to stay far inside the fixed-point range.
    if 10.0 * (gamma * dt).sqrt() >= (1u64 << 20) as f64 {
        return Err(invalid(format!(
            "increment scale sqrt(gamma*dt) = {} is too large",
            (gamma * dt).sqrt()
        )));
    }
    Ok(())
}

/// One white-noise realisation on the grid `t_k = k·dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    dt: f64,
    increments: Vec<f64>,
    cumulative: Vec<f64>,
    seed: u64,
}

/// Draws `n_steps` increments with variance `gamma·dt` from the stream of `seed`.
pub fn generate_path(seed: u64, n_steps: usize, dt: f64, gamma: f64) -> Result<NoisePath> {
    if n_steps == 0 {
        return Err(invalid("a noise path needs at least one step"));
    }
    let mut stream = IncrementStream::new(seed, dt, gamma)?;
    let mut increments = Vec::with_capacity(n_steps);
    let mut cumulative = Vec::with_capacity(n_steps + 1);
    let mut total: i64 = 0;
    cumulative.push(0.0);
    for _ in 0..n_steps {
        let q = stream.next_quanta();
        total = total
            .checked_add(q)
            .filter(|t| t.abs() < MAX_QUANTA)
            .ok_or_else(|| invalid("cumulative phase left the exact fixed-point range"))?;
        increments.push(q as f64 * PHASE_QUANTUM);
        cumulative.push(total as f64 * PHASE_QUANTUM);
    }
    Ok(NoisePath {
        dt,
        increments,
        cumulative,
        seed,
    })
}

impl NoisePath {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `Φ_k = Σ_{j<k} ΔW_j`, starting at `Φ_0 = 0`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `φ(b,a)` between two grid indices.
    pub fn phase_between(&self, a: usize, b: usize) -> f64 {
        self.cumulative[b] - self.cumulative[a]
    }

    /// `φ(b,a) = ∫ₐᵇ F dt` for grid-aligned times `a ≤ b`.
    pub fn phase_integral(&self, a: f64, b: f64) -> Result<f64> {
        let ia = grid_index("start time", a, self.dt)?;
        let ib = grid_index("end time", b, self.dt)?;
        if ia > ib {
            return Err(Error::Domain(format!(
                "phase integral needs a <= b, got a={a}, b={b}"
            )));
        }
        if ib > self.n_steps() {
            return Err(Error::Domain(format!(
                "time {b} lies beyond the path horizon {}",
                self.n_steps() as f64 * self.dt
            )));
        }
        Ok(self.phase_between(ia, ib))
    }

    /// CSV dump with columns `step_index,time,increment,cumulative`.
    ///
    /// Row `k` carries the increment over `[t_k, t_{k+1}]`; the final row has none.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step_index,time,increment,cumulative")?;
        for (k, phi) in self.cumulative.iter().enumerate() {
            let t = k as f64 * self.dt;
            match self.increments.get(k) {
                Some(inc) => writeln!(out, "{k},{t:.16e},{inc:.16e},{phi:.16e}")?,
                None => writeln!(out, "{k},{t:.16e},,{phi:.16e}")?,
            }
        }
        Ok(())
    }
}

/// Ensemble estimate of a (lagged) phase-factor correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagCorrelation {
    pub lag: f64,
    pub estimate: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

/// Estimates `⟨e^{iφ(s+τ,s)} e^{−iφ(s′+τ,s′)}⟩` for `s − s′ = Δ` at each lag.
///
/// Every admissible window start on a path contributes; the per-path averages are
/// then treated as independent samples, so the standard errors are honest even
/// though windows on one path overlap.
pub fn empirical_phase_autocovariance(
    paths: &[NoisePath],
    window: f64,
    lags: &[f64],
) -> Result<Vec<LagCorrelation>> {
    let first = paths
        .first()
        .ok_or_else(|| Error::InsufficientData("no noise paths supplied".into()))?;
    let mut acc = PhaseCorrelationAccumulator::new(first.dt(), first.n_steps(), window, lags)?;
    for path in paths {
        acc.push(path)?;
    }
    Ok(acc.finish())
}

/// Streaming form of [`empirical_phase_autocovariance`]: paths are pushed one at a time
/// and accumulators over disjoint path sets can be merged.
#[derive(Debug, Clone)]
pub struct PhaseCorrelationAccumulator {
    dt: f64,
    n_steps: usize,
    window: usize,
    lags: Vec<f64>,
    lag_steps: Vec<usize>,
    acc: Vec<(Welford, Welford)>,
    factors: Vec<Complex64>,
}

impl PhaseCorrelationAccumulator {
    pub fn new(dt: f64, n_steps: usize, window: f64, lags: &[f64]) -> Result<Self> {
        let w = grid_index("window", window, dt)?;
        let lag_steps = lags
            .iter()
            .map(|&l| grid_index("lag", l.abs(), dt))
            .collect::<Result<Vec<_>>>()?;
        let max_lag = lag_steps.iter().copied().max().unwrap_or(0);
        if w + max_lag > n_steps {
            return Err(Error::InsufficientData(format!(
                "paths of {n_steps} steps cannot hold a window of {w} steps at lag {max_lag}"
            )));
        }
        Ok(PhaseCorrelationAccumulator {
            dt,
            n_steps,
            window: w,
            lags: lags.to_vec(),
            lag_steps,
            acc: vec![(Welford::new(), Welford::new()); lags.len()],
            factors: vec![Complex64::new(0.0, 0.0); n_steps - w + 1],
        })
    }

    pub fn push(&mut self, path: &NoisePath) -> Result<()> {
        if path.dt != self.dt || path.n_steps() != self.n_steps {
            return Err(invalid("all paths must share one grid"));
        }
        let w = self.window;
        for (s, f) in self.factors.iter_mut().enumerate() {
            *f = Complex64::cis(path.phase_between(s, s + w));
        }
        let starts = self.factors.len();
        for (&lag, (re, im)) in self.lag_steps.iter().zip(self.acc.iter_mut()) {
            let sum: Complex64 = (lag..starts)
                .map(|s| self.factors[s] * self.factors[s - lag].conj())
                .sum();
            let mean = sum / (starts - lag) as f64;
            re.push(mean.re);
            im.push(mean.im);
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.dt != other.dt || self.n_steps != other.n_steps || self.lag_steps != other.lag_steps
        {
            return Err(invalid(
                "cannot merge correlation estimates from different setups",
            ));
        }
        let mut out = self.clone();
        for (mine, theirs) in out.acc.iter_mut().zip(&other.acc) {
            *mine = (mine.0.merge(&theirs.0), mine.1.merge(&theirs.1));
        }
        Ok(out)
    }

    pub fn count(&self) -> u64 {
        self.acc.first().map_or(0, |(re, _)| re.count())
    }

    pub fn finish(&self) -> Vec<LagCorrelation> {
        self.lags
            .iter()
            .zip(&self.lag_steps)
            .zip(&self.acc)
            .map(|((&lag, &steps), (re, im))| LagCorrelation {
                lag: steps as f64 * self.dt * if lag < 0.0 { -1.0 } else { 1.0 },
                estimate: Complex64::new(re.mean(), im.mean()),
                stderr_re: re.stderr(),
                stderr_im: im.stderr(),
            })
            .collect()
    }
}

/// Estimates `⟨e^{iφ(s+window,s)}⟩`, averaging over all window positions on each path.
pub fn empirical_phase_factor(paths: &[NoisePath], window: f64) -> Result<LagCorrelation> {
    let first = paths
        .first()
        .ok_or_else(|| Error::InsufficientData("no noise paths supplied".into()))?;
    let dt = first.dt;
    let w = grid_index("window", window, dt)?;
    let (mut re, mut im) = (Welford::new(), Welford::new());
    for path in paths {
        if path.dt != dt {
            return Err(invalid("all paths must share one grid"));
        }
        if w > path.n_steps() {
            return Err(Error::InsufficientData(
                "path shorter than the window".into(),
            ));
        }
        let starts = path.n_steps() - w + 1;
        let sum: Complex64 = (0..starts)
            .map(|s| Complex64::cis(path.phase_between(s, s + w)))
            .sum();
        let mean = sum / starts as f64;
        re.push(mean.re);
        im.push(mean.im);
    }
    Ok(LagCorrelation {
        lag: 0.0,
        estimate: Complex64::new(re.mean(), im.mean()),
        stderr_re: re.stderr(),
        stderr_im: im.stderr(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_path_is_zero() {
        let p = generate_path(7, 100, 0.01, 0.0).unwrap();
        assert!(p.increments().iter().all(|&x| x == 0.0));
        assert!(p.cumulative().iter().all(|&x| x == 0.0));
        assert_eq!(p.phase_integral(0.1, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn same_seed_same_path() {
        let a = generate_path(7, 500, 0.01, 1.0).unwrap();
        let b = generate_path(7, 500, 0.01, 1.0).unwrap();
        assert_eq!(a.cumulative(), b.cumulative());
        let c = generate_path(8, 500, 0.01, 1.0).unwrap();
        assert_ne!(a.cumulative(), c.cumulative());
    }

    #[test]
    fn prefix_sums_are_exact() {
        let p = generate_path(3, 10_000, 0.01, 4.0).unwrap();
        assert_eq!(p.cumulative().len(), p.increments().len() + 1);
        assert_eq!(p.cumulative()[0], 0.0);
        for (k, &inc) in p.increments().iter().enumerate() {
            assert_eq!(p.cumulative()[k] + inc, p.cumulative()[k + 1]);
            assert_eq!(p.cumulative()[k + 1] - p.cumulative()[k], inc);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_path(1, 0, 0.01, 1.0).is_err());
        assert!(generate_path(1, 10, 0.0, 1.0).is_err());
        assert!(generate_path(1, 10, -0.1, 1.0).is_err());
        assert!(generate_path(1, 10, 0.1, -1.0).is_err());
    }

    #[test]
    fn phase_integral_alignment_and_order() {
        let p = generate_path(5, 100, 0.01, 1.0).unwrap();
        assert_eq!(p.phase_integral(0.3, 0.3).unwrap(), 0.0);
        assert!(matches!(
            p.phase_integral(0.305, 0.5),
            Err(Error::Alignment { .. })
        ));
        assert!(matches!(p.phase_integral(0.5, 0.3), Err(Error::Domain(_))));
        assert!(matches!(p.phase_integral(0.0, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn shift_identity() {
        let p = generate_path(11, 400, 0.01, 2.0).unwrap();
        let tau = 1.0;
        for k in 0..=300 {
            let s = k as f64 * 0.01;
            let lhs = p.phase_integral(0.0, s + tau).unwrap() - p.phase_integral(0.0, s).unwrap();
            assert_eq!(lhs, p.phase_integral(s, s + tau).unwrap());
        }
    }

    #[test]
    fn autocovariance_trivial_cases() {
        let paths: Vec<_> = (0..3)
            .map(|i| generate_path(i, 300, 0.01, 0.0).unwrap())
            .collect();
        let est = empirical_phase_autocovariance(&paths, 1.0, &[0.0, 0.5, 1.5]).unwrap();
        for e in est {
            assert_eq!(e.estimate, Complex64::new(1.0, 0.0));
        }
        let noisy: Vec<_> = (0..3)
            .map(|i| generate_path(i, 300, 0.01, 1.0).unwrap())
            .collect();
        let est = empirical_phase_autocovariance(&noisy, 1.0, &[0.0]).unwrap();
        assert!((est[0].estimate.re - 1.0).abs() < 1e-12);
        assert!(est[0].estimate.im.abs() < 1e-12);
        assert!(matches!(
            empirical_phase_autocovariance(&[], 1.0, &[0.0]),
            Err(Error::InsufficientData(_))
        ));
        assert!(empirical_phase_autocovariance(&noisy, 1.0, &[2.5]).is_err());
    }

    #[test]
    fn csv_dump_layout() {
        let p = generate_path(1, 3, 0.5, 1.0).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "step_index,time,increment,cumulative");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("3,1.5"));
    }
}
