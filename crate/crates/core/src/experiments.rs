//! Scenario configuration and the experiment drivers behind `feedback-sim`.
//!
//! Every driver returns plain data; the `write_*` functions turn it into CSV with a
//! `#`-prefixed header that echoes the resolved configuration. Numbers are written
//! with 17 significant digits.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    ou_kernel, population_2tau_paper, population_2tau_with_cross, population_3tau,
    series_amplitude_no_noise, wigner_weisskopf_population,
};
use crate::ensemble::{phase_difference_map, run_ensemble, DifferenceMap, EnsembleStats};
use crate::error::{invalid, Error, Result};
use crate::integrator::{integrate, AmplitudeTrajectory};
use crate::noise::{generate_path, path_seed, NoisePath, PhaseCorrelationAccumulator};
use crate::params::SystemParams;

/// Smallest `dt_divisor` accepted by the figure commands.
pub const FIGURE_MIN_DIVISOR: u32 = 100;

/// Fully resolved settings of one run.
///
/// Defaults: `Γτ = 0.5`, `γτ = 2`, `φ = 3.3`, `τ = 1`, `K = 1000`, `10⁵` paths, seed 42.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub params: SystemParams,
    /// `K` in `dt = τ/K`.
    pub dt_divisor: u32,
    pub n_paths: u64,
    pub master_seed: u64,
    /// Horizon in units of τ.
    pub t_max: f64,
    pub output_path: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            params: SystemParams::dimensionless(0.5, 3.3, 2.0)
                .expect("default parameters are valid"),
            dt_divisor: 1000,
            n_paths: 100_000,
            master_seed: 42,
            t_max: 3.0,
            output_path: None,
        }
    }
}

impl ScenarioConfig {
    /// Parses a JSON document; keys not listed in the struct are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt_divisor == 0 {
            return Err(invalid("dt_divisor must be >= 1"));
        }
        if self.n_paths == 0 {
            return Err(invalid("n_paths must be >= 1"));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(invalid(format!("t_max must be > 0, got {}", self.t_max)));
        }
        let steps = self.t_max * self.dt_divisor as f64;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(invalid(format!(
                "t_max = {}τ is not a multiple of dt = τ/{}",
                self.t_max, self.dt_divisor
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.params.delay() / self.dt_divisor as f64
    }

    pub fn horizon(&self) -> f64 {
        self.t_max * self.params.delay()
    }

    fn require_figure_quality(&self) -> Result<()> {
        self.validate()?;
        if self.dt_divisor < FIGURE_MIN_DIVISOR {
            return Err(invalid(format!(
                "figure runs need dt_divisor >= {FIGURE_MIN_DIVISOR}, got {}",
                self.dt_divisor
            )));
        }
        Ok(())
    }
}

/// Header options shared by the CSV writers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeaderOptions {
    pub timestamp: bool,
}

fn write_header<W: Write>(
    out: &mut W,
    command: &str,
    config: &ScenarioConfig,
    extra: &[(&str, String)],
    header: HeaderOptions,
) -> Result<()> {
    writeln!(out, "# feedback-sim {command}")?;
    writeln!(out, "# config: {}", config.to_json())?;
    if !extra.is_empty() {
        let opts: Vec<String> = extra.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "# options: {}", opts.join(" "))?;
    }
    if header.timestamp {
        writeln!(out, "# generated: {}", chrono::Utc::now().to_rfc3339())?;
    }
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// simulate

/// Ensemble statistics of `|P|²` on `[0, t_max]`.
pub fn cmd_simulate(config: &ScenarioConfig) -> Result<EnsembleStats> {
    config.validate()?;
    run_ensemble(
        &config.params,
        config.n_paths,
        config.master_seed,
        config.dt(),
        config.horizon(),
    )
}

/// Noise path and trajectory of realisation `index` of the configured ensemble.
pub fn cmd_single(config: &ScenarioConfig, index: u64) -> Result<(NoisePath, AmplitudeTrajectory)> {
    config.validate()?;
    let dt = config.dt();
    let n_steps = (config.horizon() / dt).round() as usize;
    let path = generate_path(
        path_seed(config.master_seed, index),
        n_steps,
        dt,
        config.params.noise_strength(),
    )?;
    let trajectory = integrate(
        &config.params,
        Some(&path),
        dt,
        config.horizon(),
        1.0.into(),
    )?;
    Ok((path, trajectory))
}

pub fn write_single<W: Write>(
    mut out: W,
    config: &ScenarioConfig,
    index: u64,
    trajectory: &AmplitudeTrajectory,
    header: HeaderOptions,
) -> Result<()> {
    write_header(
        &mut out,
        "simulate",
        config,
        &[("single", index.to_string())],
        header,
    )?;
    trajectory.write_csv(out)
}

pub fn write_simulate<W: Write>(
    mut out: W,
    config: &ScenarioConfig,
    stats: &EnsembleStats,
    header: HeaderOptions,
) -> Result<()> {
    write_header(&mut out, "simulate", config, &[], header)?;
    stats.write_csv(out)
}

// ---------------------------------------------------------------------------
// analytic

/// One row of reference curves; windowed expressions are `None` outside their range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticRow {
    pub t_over_tau: f64,
    pub wigner_weisskopf: f64,
    pub series_no_noise: f64,
    pub population_2tau_paper: Option<f64>,
    pub population_2tau_with_cross: Option<f64>,
    pub population_3tau: Option<f64>,
}

/// Reference curves on `points` equally spaced times over `[0, t_max]`.
pub fn cmd_analytic(config: &ScenarioConfig, points: usize) -> Result<Vec<AnalyticRow>> {
    config.validate()?;
    if points < 2 {
        return Err(invalid("need at least two points"));
    }
    let p = &config.params;
    let tau = p.delay();
    (0..points)
        .map(|i| {
            let t = config.horizon() * i as f64 / (points - 1) as f64;
            let in_second = t >= tau && t <= 2.0 * tau;
            Ok(AnalyticRow {
                t_over_tau: t / tau,
                wigner_weisskopf: wigner_weisskopf_population(t, p),
                series_no_noise: series_amplitude_no_noise(t, p).norm_sqr(),
                population_2tau_paper: if in_second {
                    Some(population_2tau_paper(t, p)?)
                } else {
                    None
                },
                population_2tau_with_cross: if in_second {
                    Some(population_2tau_with_cross(t, p)?)
                } else {
                    None
                },
                population_3tau: if t <= 3.0 * tau {
                    Some(population_3tau(t, p)?)
                } else {
                    None
                },
            })
        })
        .collect()
}

pub fn write_analytic<W: Write>(
    mut out: W,
    config: &ScenarioConfig,
    rows: &[AnalyticRow],
    header: HeaderOptions,
) -> Result<()> {
    write_header(
        &mut out,
        "analytic",
        config,
        &[("points", rows.len().to_string())],
        header,
    )?;
    writeln!(
        out,
        "t_over_tau,ww,series_no_noise,pop_2tau_paper,pop_2tau_with_cross,pop_3tau"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            num(r.t_over_tau),
            num(r.wigner_weisskopf),
            num(r.series_no_noise),
            opt_num(r.population_2tau_paper),
            opt_num(r.population_2tau_with_cross),
            opt_num(r.population_3tau),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fig1

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig1Row {
    pub t_over_tau: f64,
    pub wigner_weisskopf: f64,
    pub feedback_no_noise: f64,
    pub feedback_noise_mean: f64,
    pub feedback_noise_stderr: f64,
}

/// Population curves on `[0, 3τ]`: no mirror, feedback without noise (analytic series),
/// feedback with noise (ensemble mean and its standard error).
pub fn cmd_fig1(config: &ScenarioConfig) -> Result<Vec<Fig1Row>> {
    config.require_figure_quality()?;
    let p = &config.params;
    let tau = p.delay();
    let stats = run_ensemble(
        p,
        config.n_paths,
        config.master_seed,
        config.dt(),
        3.0 * tau,
    )?;
    let stderr = stats.stderr();
    Ok(stats
        .times()
        .iter()
        .zip(stats.mean())
        .zip(stderr)
        .map(|((&t, &mean), se)| Fig1Row {
            t_over_tau: t / tau,
            wigner_weisskopf: wigner_weisskopf_population(t, p),
            feedback_no_noise: series_amplitude_no_noise(t, p).norm_sqr(),
            feedback_noise_mean: mean,
            feedback_noise_stderr: se,
        })
        .collect())
}

pub fn write_fig1<W: Write>(
    mut out: W,
    config: &ScenarioConfig,
    rows: &[Fig1Row],
    header: HeaderOptions,
) -> Result<()> {
    write_header(&mut out, "fig1", config, &[], header)?;
    writeln!(
        out,
        "t_over_tau,ww,feedback_no_noise,feedback_noise_mean,feedback_noise_stderr"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            num(r.t_over_tau),
            num(r.wigner_weisskopf),
            num(r.feedback_no_noise),
            num(r.feedback_noise_mean),
            num(r.feedback_noise_stderr)
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fig2

/// Difference map over `phase_steps` phases in `[0, 2π]` and `time_steps` times in
/// `[τ, 3τ]` (snapped to the integration grid).
///
/// Sign convention: `difference = |P|²(no noise) − ⟨|P|²⟩(noise)`, so negative entries
/// mean the noise raised the population.
pub fn cmd_fig2(
    config: &ScenarioConfig,
    phase_steps: usize,
    time_steps: usize,
) -> Result<DifferenceMap> {
    config.require_figure_quality()?;
    if phase_steps < 2 || time_steps < 2 {
        return Err(invalid("fig2 needs at least two phases and two times"));
    }
    let tau = config.params.delay();
    let dt = config.dt();
    let phases: Vec<f64> = (0..phase_steps)
        .map(|i| TAU * i as f64 / (phase_steps - 1) as f64)
        .collect();
    let mut times: Vec<f64> = (0..time_steps)
        .map(|j| {
            let t = tau * (1.0 + 2.0 * j as f64 / (time_steps - 1) as f64);
            (t / dt).round() * dt
        })
        .collect();
    times.dedup();
    if times.len() != time_steps {
        return Err(invalid(format!(
            "{time_steps} time steps do not fit on a grid of {} points per τ",
            config.dt_divisor
        )));
    }
    phase_difference_map(
        &config.params,
        &phases,
        &times,
        config.n_paths,
        config.master_seed,
        dt,
    )
}

pub fn write_fig2<W: Write>(
    mut out: W,
    config: &ScenarioConfig,
    map: &DifferenceMap,
    header: HeaderOptions,
) -> Result<()> {
    let extra = [
        ("phase_steps", map.phases.len().to_string()),
        ("time_steps", map.times.len().to_string()),
        ("difference", "no_noise_minus_noise_mean".to_string()),
    ];
    write_header(&mut out, "fig2", config, &extra, header)?;
    writeln!(out, "phi,t_over_tau,difference")?;
    let tau = config.params.delay();
    for (phi, row) in map.phases.iter().zip(&map.values) {
        for (t, d) in map.times.iter().zip(row) {
            writeln!(out, "{},{},{}", num(*phi), num(t / tau), num(*d))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify-ou

/// Deviations beyond this many standard errors fail the check.
pub const OU_PASS_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuLag {
    pub lag: f64,
    /// `lag < τ`: the two windows overlap and the correlation should follow the kernel.
    pub in_window: bool,
    /// Scaled estimate `Γ²e^{2Γτ}·Re⟨e^{iφ(s+τ,s)}e^{−iφ(s′+τ,s′)}⟩`.
    pub empirical: f64,
    pub stderr: f64,
    pub imaginary: f64,
    pub imaginary_stderr: f64,
    pub kernel: f64,
    /// `|empirical − kernel| / stderr`.
    pub deviation: f64,
    /// Value the windowed construction actually tends to, `Γ²e^{2Γτ − γ min(Δ,τ)}`.
    pub plateau: f64,
    pub plateau_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuReport {
    pub lags: Vec<OuLag>,
    pub n_paths: u64,
    /// Largest in-window deviation, in standard errors.
    pub max_deviation: f64,
    /// Largest deviation from the plateau beyond the window.
    pub max_plateau_deviation: f64,
    pub pass: bool,
}

fn sigma_units(diff: f64, stderr: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if stderr > 0.0 {
        diff.abs() / stderr
    } else {
        f64::INFINITY
    }
}

/// Compares the lagged correlation of the feedback phase factors with the
/// Ornstein-Uhlenbeck kernel at `lags` lags inside `(0, τ)`, plus two lags beyond it.
pub fn cmd_verify_ou(config: &ScenarioConfig, lags: usize) -> Result<OuReport> {
    config.validate()?;
    if lags == 0 {
        return Err(invalid("need at least one lag"));
    }
    let p = &config.params;
    let tau = p.delay();
    let dt = config.dt();
    let k = config.dt_divisor as usize;
    let mut lag_steps: Vec<usize> = (1..=lags).map(|j| (j * k) / (lags + 1)).collect();
    lag_steps.retain(|&s| s > 0 && s < k);
    lag_steps.dedup();
    if lag_steps.is_empty() {
        return Err(invalid("grid too coarse for lags inside (0, τ)"));
    }
    let beyond = [5 * k / 4, 3 * k / 2];
    lag_steps.extend(beyond);
    let lag_times: Vec<f64> = lag_steps.iter().map(|&s| s as f64 * dt).collect();
    let n_steps = 2 * k + beyond[1];
    let gamma = p.noise_strength();

    let template = PhaseCorrelationAccumulator::new(dt, n_steps, tau, &lag_times)?;
    const CHUNK: u64 = 256;
    let chunks: Vec<Result<PhaseCorrelationAccumulator>> = (0..config.n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = template.clone();
            for i in c * CHUNK..((c + 1) * CHUNK).min(config.n_paths) {
                let path = generate_path(path_seed(config.master_seed, i), n_steps, dt, gamma)?;
                acc.push(&path)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = template;
    for chunk in chunks {
        total = total.merge(&chunk?)?;
    }

    let scale = ou_kernel(0.0, p);
    let mut report_lags = Vec::with_capacity(lag_times.len());
    for est in total.finish() {
        let in_window = est.lag < tau * (1.0 - 1e-12);
        let ideal = (-gamma * est.lag).exp();
        let plateau = (-gamma * est.lag.min(tau)).exp();
        report_lags.push(OuLag {
            lag: est.lag,
            in_window,
            empirical: scale * est.estimate.re,
            stderr: scale * est.stderr_re,
            imaginary: scale * est.estimate.im,
            imaginary_stderr: scale * est.stderr_im,
            kernel: ou_kernel(est.lag, p),
            deviation: sigma_units(est.estimate.re - ideal, est.stderr_re),
            plateau: scale * plateau,
            plateau_deviation: sigma_units(est.estimate.re - plateau, est.stderr_re),
        });
    }
    let max_deviation = report_lags
        .iter()
        .filter(|l| l.in_window)
        .map(|l| l.deviation)
        .fold(0.0, f64::max);
    let max_plateau_deviation = report_lags
        .iter()
        .filter(|l| !l.in_window)
        .map(|l| l.plateau_deviation)
        .fold(0.0, f64::max);
    Ok(OuReport {
        lags: report_lags,
        n_paths: total.count(),
        max_deviation,
        max_plateau_deviation,
        pass: max_deviation <= OU_PASS_SIGMA,
    })
}

pub fn write_verify_ou<W: Write>(
    mut out: W,
    config: &ScenarioConfig,
    report: &OuReport,
    header: HeaderOptions,
) -> Result<()> {
    let in_window = report.lags.iter().filter(|l| l.in_window).count();
    write_header(
        &mut out,
        "verify-ou",
        config,
        &[("lags", in_window.to_string())],
        header,
    )?;
    writeln!(
        out,
        "lag_over_tau,regime,empirical,stderr,kernel,deviation_sigma,plateau,plateau_deviation_sigma"
    )?;
    let tau = config.params.delay();
    for l in &report.lags {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            num(l.lag / tau),
            if l.in_window {
                "overlapping"
            } else {
                "disjoint"
            },
            num(l.empirical),
            num(l.stderr),
            num(l.kernel),
            num(l.deviation),
            num(l.plateau),
            num(l.plateau_deviation)
        )?;
    }
    writeln!(out, "# paths: {}", report.n_paths)?;
    writeln!(
        out,
        "# max deviation for lag < tau: {:.3} sigma",
        report.max_deviation
    )?;
    writeln!(
        out,
        "# lag > tau: estimates plateau at exp(-gamma*tau); max deviation from plateau {:.3} sigma",
        report.max_plateau_deviation
    )?;
    writeln!(
        out,
        "# verdict: {}",
        if report.pass { "PASS" } else { "FAIL" }
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// adjudicate-eq13

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eq13Variant {
    /// Form without the single-round-trip interference term.
    Paper,
    /// Full average including `2Γe^{Γτ}cos φ (t−τ)e^{−γτ/2}`.
    WithCross,
}

impl Eq13Variant {
    pub fn name(self) -> &'static str {
        match self {
            Eq13Variant::Paper => "paper",
            Eq13Variant::WithCross => "with_cross",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Winner(Eq13Variant),
    /// The variants are less than one standard error apart everywhere.
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjudicationPoint {
    pub t_over_tau: f64,
    pub ensemble_mean: f64,
    pub stderr: f64,
    pub paper: f64,
    pub with_cross: f64,
    pub z_paper: f64,
    pub z_with_cross: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjudication {
    /// Scored points on `(τ, 2τ]`; `t = τ` is excluded because both variants equal `e^{−2Γτ}` there.
    pub points: Vec<AdjudicationPoint>,
    pub chi2_paper: f64,
    pub chi2_with_cross: f64,
    pub within3_paper: f64,
    pub within3_with_cross: f64,
    /// Largest separation of the two variants, in standard errors.
    pub separation: f64,
    pub verdict: Verdict,
}

/// Runs the `φ = 2π` ensemble on `[0, 2τ]` and scores both second-interval variants.
pub fn cmd_adjudicate_eq13(config: &ScenarioConfig) -> Result<Adjudication> {
    config.validate()?;
    let p = config.params.with_phase(TAU)?;
    let tau = p.delay();
    let dt = config.dt();
    let d = config.dt_divisor as usize;
    let stats = run_ensemble(&p, config.n_paths, config.master_seed, dt, 2.0 * tau)?;
    let stderr = stats.stderr();
    let mut points = Vec::with_capacity(d);
    let scored = d + 1..=2 * d;
    for ((&t, &mean), &se) in stats.times()[scored.clone()]
        .iter()
        .zip(&stats.mean()[scored.clone()])
        .zip(&stderr[scored])
    {
        let paper = population_2tau_paper(t, &p)?;
        let with_cross = population_2tau_with_cross(t, &p)?;
        points.push(AdjudicationPoint {
            t_over_tau: t / tau,
            ensemble_mean: mean,
            stderr: se,
            paper,
            with_cross,
            z_paper: sigma_units(mean - paper, se),
            z_with_cross: sigma_units(mean - with_cross, se),
        });
    }
    let n = points.len() as f64;
    let chi2 =
        |z: fn(&AdjudicationPoint) -> f64| points.iter().map(|q| z(q).powi(2)).sum::<f64>() / n;
    let within =
        |z: fn(&AdjudicationPoint) -> f64| points.iter().filter(|q| z(q) <= 3.0).count() as f64 / n;
    let chi2_paper = chi2(|q| q.z_paper);
    let chi2_with_cross = chi2(|q| q.z_with_cross);
    let separation = points
        .iter()
        .map(|q| sigma_units(q.paper - q.with_cross, q.stderr))
        .fold(0.0, f64::max);
    let verdict = if separation < 1.0 {
        Verdict::Tie
    } else if chi2_with_cross <= chi2_paper {
        Verdict::Winner(Eq13Variant::WithCross)
    } else {
        Verdict::Winner(Eq13Variant::Paper)
    };
    Ok(Adjudication {
        within3_paper: within(|q| q.z_paper),
        within3_with_cross: within(|q| q.z_with_cross),
        points,
        chi2_paper,
        chi2_with_cross,
        separation,
        verdict,
    })
}

impl Adjudication {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# scored points: {} on (tau, 2tau]", self.points.len());
        let _ = writeln!(
            s,
            "# mean z^2: paper={:.4} with_cross={:.4}",
            self.chi2_paper, self.chi2_with_cross
        );
        let _ = writeln!(
            s,
            "# fraction within 3 stderr: paper={:.4} with_cross={:.4}",
            self.within3_paper, self.within3_with_cross
        );
        let _ = writeln!(s, "# max variant separation: {:.3} stderr", self.separation);
        let verdict = match self.verdict {
            Verdict::Winner(v) => format!("winner {}", v.name()),
            Verdict::Tie => "statistical tie".to_string(),
        };
        let _ = writeln!(s, "# verdict: {verdict}");
        s
    }
}

pub fn write_adjudication<W: Write>(
    mut out: W,
    config: &ScenarioConfig,
    report: &Adjudication,
    header: HeaderOptions,
) -> Result<()> {
    write_header(
        &mut out,
        "adjudicate-eq13",
        config,
        &[("phase", "2pi".to_string())],
        header,
    )?;
    writeln!(
        out,
        "t_over_tau,ensemble_mean,stderr,paper,with_cross,z_paper,z_with_cross"
    )?;
    for q in &report.points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            num(q.t_over_tau),
            num(q.ensemble_mean),
            num(q.stderr),
            num(q.paper),
            num(q.with_cross),
            num(q.z_paper),
            num(q.z_with_cross)
        )?;
    }
    out.write_all(report.summary().as_bytes())?;
    Ok(())
}
