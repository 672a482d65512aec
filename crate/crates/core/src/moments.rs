//! Exact noise averages of phase-factor products.
//!
//! For Gaussian white noise each phase integral `φ(b,a)` is a zero-mean Gaussian and
//! `Cov(φ(I), φ(J)) = γ·|I ∩ J|`, so
//! `⟨exp(i Σ σ_k φ(I_k))⟩ = exp(−½ γ Σ_jk σ_j σ_k |I_j ∩ I_k|)`.
//!
//! The averaged functionals `⟨N⟩, ⟨NN*⟩, ⟨M⟩, ⟨N*M⟩, ⟨MM*⟩` integrate that closed form
//! over the nested time domains of
//!
//! ```text
//! N(t,τ)  = ∫_τ^t dt₁ e^{−iφ(t₁,t₁−τ)}
//! M(t,2τ) = ∫_{2τ}^t dt₁ e^{−iφ(t₁,t₁−τ)} ∫_τ^{t₁−τ} dt₂ e^{−iφ(t₂,t₂−τ)}
//! ```
//!
//! Writing each time as `u = iτ + x` with `x ∈ [0, τ)`, the overlap of two windows
//! `[u−τ, u]` and `[v−τ, v]` only changes slope where the reduced coordinates coincide.
//! The domain is therefore cut into ordered simplices in the reduced coordinates (plus
//! the partial-block edge `L = t − ⌊t/τ⌋τ`); the integrand is the exponential of an
//! affine function on each, and a nested Gauss-Legendre rule converges rapidly.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::quadrature::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// A time window `[start, end]` whose phase integral enters as `e^{sign·iφ(end,start)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    start: f64,
    end: f64,
    sign: Sign,
}

impl Segment {
    pub fn new(start: f64, end: f64, sign: Sign) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || end < start {
            return Err(Error::InvalidParameter(format!(
                "segment needs finite start <= end, got [{start}, {end}]"
            )));
        }
        Ok(Segment { start, end, sign })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn flipped(self) -> Segment {
        Segment {
            sign: self.sign.flipped(),
            ..self
        }
    }
}

/// Length of the intersection of the two windows.
pub fn segment_overlap(a: &Segment, b: &Segment) -> f64 {
    (a.end.min(b.end) - a.start.max(b.start)).max(0.0)
}

/// `⟨exp(i Σ_k σ_k φ(b_k, a_k))⟩` for white noise of strength `gamma`.
///
/// Always real and in `(0, 1]`.
pub fn phase_moment(segments: &[Segment], gamma: f64) -> f64 {
    (-0.5 * phase_variance(segments, gamma)).exp()
}

/// Variance of `Σ_k σ_k φ(b_k, a_k)`.
pub fn phase_variance(segments: &[Segment], gamma: f64) -> f64 {
    let mut total = 0.0;
    for (j, a) in segments.iter().enumerate() {
        total += a.len();
        for b in &segments[j + 1..] {
            total += 2.0 * a.sign.value() * b.sign.value() * segment_overlap(a, b);
        }
    }
    (gamma * total).max(0.0)
}

/// Settings of the nested Gauss-Legendre evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentQuadrature {
    /// Accepted relative change between two successive node doublings.
    pub rel_tol: f64,
    pub base_nodes: usize,
    pub max_nodes: usize,
}

impl Default for MomentQuadrature {
    fn default() -> Self {
        MomentQuadrature {
            rel_tol: 1e-4,
            base_nodes: 8,
            max_nodes: 128,
        }
    }
}

/// The five averaged functionals at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: Complex64,
    pub nn_star: f64,
    pub m: Complex64,
    pub nstar_m: Complex64,
    pub mm_star: f64,
}

#[derive(Debug, Clone, Copy)]
enum Factor {
    /// `N` (sign −) or `N*` (sign +).
    Single(Sign),
    /// `M` (sign −) or `M*` (sign +).
    Nested(Sign),
}

impl MomentQuadrature {
    /// `⟨N(t,τ)⟩`; defined for `t ≥ τ` only.
    pub fn mean_n(&self, t: f64, params: &SystemParams) -> Result<Complex64> {
        if t < params.delay() {
            return Err(Error::Domain(format!(
                "N(t,τ) needs t >= τ = {}, got t = {t}",
                params.delay()
            )));
        }
        self.evaluate(&[Factor::Single(Sign::Minus)], t, params)
            .map(real)
    }

    /// `⟨N N*⟩`; zero for `t < τ`.
    pub fn nn_star(&self, t: f64, params: &SystemParams) -> Result<f64> {
        self.evaluate(
            &[Factor::Single(Sign::Minus), Factor::Single(Sign::Plus)],
            t,
            params,
        )
    }

    /// `⟨M(t,2τ)⟩`; zero for `t < 2τ`.
    pub fn m(&self, t: f64, params: &SystemParams) -> Result<Complex64> {
        self.evaluate(&[Factor::Nested(Sign::Minus)], t, params)
            .map(real)
    }

    /// `⟨N* M⟩`; zero for `t < 2τ`.
    pub fn nstar_m(&self, t: f64, params: &SystemParams) -> Result<Complex64> {
        self.evaluate(
            &[Factor::Single(Sign::Plus), Factor::Nested(Sign::Minus)],
            t,
            params,
        )
        .map(real)
    }

    /// `⟨M M*⟩`; zero for `t < 2τ`.
    pub fn mm_star(&self, t: f64, params: &SystemParams) -> Result<f64> {
        self.evaluate(
            &[Factor::Nested(Sign::Minus), Factor::Nested(Sign::Plus)],
            t,
            params,
        )
    }

    /// All five moments; the N-moments are zero rather than an error below `τ`.
    pub fn all(&self, t: f64, params: &SystemParams) -> Result<Moments> {
        let n = if t < params.delay() {
            Complex64::new(0.0, 0.0)
        } else {
            self.mean_n(t, params)?
        };
        Ok(Moments {
            n,
            nn_star: self.nn_star(t, params)?,
            m: self.m(t, params)?,
            nstar_m: self.nstar_m(t, params)?,
            mm_star: self.mm_star(t, params)?,
        })
    }

    fn evaluate(&self, factors: &[Factor], t: f64, params: &SystemParams) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain(format!(
                "time must be finite and >= 0, got {t}"
            )));
        }
        if self.base_nodes == 0 || self.max_nodes < self.base_nodes || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "inconsistent quadrature settings".into(),
            ));
        }
        let tau = params.delay();
        let gamma = params.noise_strength();
        let cells = decompose(factors, t, tau);
        if cells.is_empty() {
            return Ok(0.0);
        }

        let mut nodes = self.base_nodes;
        let mut previous = integrate_cells(&cells, &GaussLegendre::new(nodes), tau, gamma);
        let mut residual = f64::INFINITY;
        while nodes * 2 <= self.max_nodes {
            nodes *= 2;
            let current = integrate_cells(&cells, &GaussLegendre::new(nodes), tau, gamma);
            let change = (current - previous).abs();
            if change <= self.rel_tol * current.abs() || change == 0.0 {
                return Ok(current);
            }
            residual = change / current.abs().max(f64::MIN_POSITIVE);
            previous = current;
        }
        Err(Error::QuadratureFailure {
            residual,
            tolerance: self.rel_tol,
        })
    }
}

fn real(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// `⟨N(t,τ)⟩` with the default quadrature.
pub fn mean_n(t: f64, params: &SystemParams) -> Result<Complex64> {
    MomentQuadrature::default().mean_n(t, params)
}

pub fn moment_nn_star(t: f64, params: &SystemParams) -> Result<f64> {
    MomentQuadrature::default().nn_star(t, params)
}

pub fn moment_m(t: f64, params: &SystemParams) -> Result<Complex64> {
    MomentQuadrature::default().m(t, params)
}

pub fn moment_nstar_m(t: f64, params: &SystemParams) -> Result<Complex64> {
    MomentQuadrature::default().nstar_m(t, params)
}

pub fn moment_mm_star(t: f64, params: &SystemParams) -> Result<f64> {
    MomentQuadrature::default().mm_star(t, params)
}

pub fn moments(t: f64, params: &SystemParams) -> Result<Moments> {
    MomentQuadrature::default().all(t, params)
}

const MAX_VARS: usize = 4;

/// Integration variable `u = block·τ + x`, with window `[u−τ, u]`.
#[derive(Debug, Clone, Copy)]
struct Var {
    block: usize,
    /// `x ≤ L` instead of `x ≤ τ`.
    partial: bool,
    /// `x ≤ x[bound]`.
    bound: Option<usize>,
    sign: Sign,
}

#[derive(Debug, Clone, Copy)]
enum Upper {
    Fixed(f64),
    Var(usize),
}

#[derive(Debug, Clone, Copy)]
struct Dim {
    var: usize,
    lo: f64,
    hi: Upper,
}

/// One ordered product of simplices. `dims` runs from outermost to innermost.
#[derive(Debug, Clone)]
struct Cell {
    vars: Vec<Var>,
    dims: Vec<Dim>,
}

/// Splits `[τ, t]` into τ-blocks: `(block, partial)` pairs.
fn blocks(t: f64, tau: f64) -> (Vec<(usize, bool)>, f64) {
    let ratio = t / tau;
    let mut whole = ratio.floor();
    if ratio - whole > 1.0 - 1e-12 {
        whole += 1.0;
    }
    let whole = whole as usize;
    let rest = (t - whole as f64 * tau).max(0.0);
    let rest = if rest < 1e-12 * tau { 0.0 } else { rest };
    let mut out: Vec<(usize, bool)> = (1..whole).map(|b| (b, false)).collect();
    if whole >= 1 && rest > 0.0 {
        out.push((whole, true));
    }
    (out, rest)
}

fn decompose(factors: &[Factor], t: f64, tau: f64) -> Vec<Cell> {
    let (single_blocks, rest) = blocks(t, tau);

    // Per factor, the admissible block assignments of its variables.
    let mut options: Vec<Vec<Vec<Var>>> = Vec::new();
    for factor in factors {
        let mut opts = Vec::new();
        match *factor {
            Factor::Single(sign) => {
                for &(block, partial) in &single_blocks {
                    opts.push(vec![Var {
                        block,
                        partial,
                        bound: None,
                        sign,
                    }]);
                }
            }
            Factor::Nested(sign) => {
                for &(outer, partial) in single_blocks.iter().filter(|(b, _)| *b >= 2) {
                    for inner in 1..outer {
                        let adjacent = inner + 1 == outer;
                        opts.push(vec![
                            Var {
                                block: outer,
                                partial,
                                bound: None,
                                sign,
                            },
                            Var {
                                block: inner,
                                partial: adjacent && partial,
                                // Placeholder; rebased to the outer variable's slot below.
                                bound: adjacent.then_some(0),
                                sign,
                            },
                        ]);
                    }
                }
            }
        }
        if opts.is_empty() {
            return Vec::new();
        }
        options.push(opts);
    }

    let mut cells = Vec::new();
    let mut choice = vec![0usize; options.len()];
    loop {
        let mut vars = Vec::new();
        for (opts, &c) in options.iter().zip(&choice) {
            let base = vars.len();
            for v in &opts[c] {
                vars.push(Var {
                    bound: v.bound.map(|b| b + base),
                    ..*v
                });
            }
        }
        debug_assert!(vars.len() <= MAX_VARS);
        orderings(&vars, rest, tau, &mut cells);

        // Odometer over the assignment choices.
        let mut k = 0;
        loop {
            if k == choice.len() {
                return cells;
            }
            choice[k] += 1;
            if choice[k] < options[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Appends one cell per total order of the reduced coordinates consistent with the caps
/// and bounds. `None` in the order marks the partial-block edge `L`.
fn orderings(vars: &[Var], rest: f64, tau: f64, cells: &mut Vec<Cell>) {
    let with_edge = rest > 0.0;
    let mut items: Vec<Option<usize>> = (0..vars.len()).map(Some).collect();
    if with_edge {
        items.push(None);
    }
    permute(&mut items, 0, &mut |order| {
        let position = |v: usize| order.iter().position(|&o| o == Some(v)).unwrap();
        let edge = order
            .iter()
            .position(|o| o.is_none())
            .unwrap_or(order.len());
        for (i, var) in vars.iter().enumerate() {
            if var.partial && position(i) > edge {
                return;
            }
            if let Some(b) = var.bound {
                if position(i) > position(b) {
                    return;
                }
            }
        }
        // Chain from the top down: each variable is bounded by the one above it,
        // or by the gap ceiling if it is the highest of its gap.
        let mut dims = Vec::with_capacity(vars.len());
        let gaps: [(&[Option<usize>], f64, f64); 2] = if with_edge {
            [(&order[..edge], 0.0, rest), (&order[edge + 1..], rest, tau)]
        } else {
            [(order, 0.0, tau), (&[], tau, tau)]
        };
        for (gap, lo, hi) in gaps {
            let mut upper = Upper::Fixed(hi);
            for v in gap.iter().rev().map(|o| o.unwrap()) {
                dims.push(Dim {
                    var: v,
                    lo,
                    hi: upper,
                });
                upper = Upper::Var(v);
            }
        }
        cells.push(Cell {
            vars: vars.to_vec(),
            dims,
        });
    });
}

fn permute<T: Copy>(items: &mut [T], k: usize, visit: &mut impl FnMut(&[T])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

fn integrate_cells(cells: &[Cell], rule: &GaussLegendre, tau: f64, gamma: f64) -> f64 {
    cells
        .iter()
        .map(|cell| {
            let mut x = [0.0; MAX_VARS];
            nested(cell, &cell.dims, rule, &mut x, tau, gamma)
        })
        .sum()
}

fn nested(
    cell: &Cell,
    dims: &[Dim],
    rule: &GaussLegendre,
    x: &mut [f64; MAX_VARS],
    tau: f64,
    gamma: f64,
) -> f64 {
    let Some((dim, inner)) = dims.split_first() else {
        return integrand(cell, x, tau, gamma);
    };
    let hi = match dim.hi {
        Upper::Fixed(h) => h,
        Upper::Var(v) => x[v],
    };
    if hi <= dim.lo {
        return 0.0;
    }
    let mut sum = 0.0;
    for (node, weight) in rule.mapped(dim.lo, hi) {
        x[dim.var] = node;
        sum += weight * nested(cell, inner, rule, x, tau, gamma);
    }
    sum
}

fn integrand(cell: &Cell, x: &[f64; MAX_VARS], tau: f64, gamma: f64) -> f64 {
    let mut segments = [Segment {
        start: 0.0,
        end: 0.0,
        sign: Sign::Plus,
    }; MAX_VARS];
    for (seg, (var, &xv)) in segments.iter_mut().zip(cell.vars.iter().zip(x)) {
        let u = var.block as f64 * tau + xv;
        *seg = Segment {
            start: u - tau,
            end: u,
            sign: var.sign,
        };
    }
    phase_moment(&segments[..cell.vars.len()], gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(gamma: f64) -> SystemParams {
        SystemParams::new(0.5, 1.0, 3.3, gamma).unwrap()
    }

    fn seg(a: f64, b: f64, s: Sign) -> Segment {
        Segment::new(a, b, s).unwrap()
    }

    #[test]
    fn overlap_geometry() {
        let p = Sign::Plus;
        assert_eq!(segment_overlap(&seg(0.0, 1.0, p), &seg(2.0, 3.0, p)), 0.0);
        assert_eq!(segment_overlap(&seg(0.0, 2.0, p), &seg(1.0, 3.0, p)), 1.0);
        assert_eq!(segment_overlap(&seg(0.0, 1.0, p), &seg(0.0, 1.0, p)), 1.0);
        assert!(Segment::new(1.0, 0.0, p).is_err());
    }

    #[test]
    fn single_and_cancelling_segments() {
        let g = 0.7;
        let s = seg(0.3, 1.3, Sign::Minus);
        assert_relative_eq!(
            phase_moment(&[s], g),
            (-g / 2.0).exp(),
            max_relative = 1e-15
        );
        assert_eq!(phase_moment(&[s, s.flipped()], g), 1.0);
        assert_eq!(phase_moment(&[], g), 1.0);
    }

    #[test]
    fn lagged_pair_gives_ou_decay() {
        let g = 1.3;
        for delta in [0.1, 0.4, 0.9] {
            let a = seg(2.0 - 1.0, 2.0, Sign::Plus);
            let b = seg(2.0 + delta - 1.0, 2.0 + delta, Sign::Minus);
            assert_relative_eq!(
                phase_moment(&[a, b], g),
                (-g * delta).exp(),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn block_split() {
        let (b, rest) = blocks(2.5, 1.0);
        assert_eq!(b, vec![(1, false), (2, true)]);
        assert!((rest - 0.5).abs() < 1e-15);
        let (b, rest) = blocks(3.0, 1.0);
        assert_eq!(b, vec![(1, false), (2, false)]);
        assert_eq!(rest, 0.0);
        let (b, _) = blocks(0.5, 1.0);
        assert!(b.is_empty());
    }

    #[test]
    fn mean_n_closed_form() {
        for gamma in [0.0, 0.5, 1.0, 2.0] {
            for t in [1.0, 1.4, 2.0, 2.7, 3.0] {
                let got = mean_n(t, &params(gamma)).unwrap();
                let want = (t - 1.0) * (-gamma / 2.0).exp();
                assert!(
                    (got.re - want).abs() <= 1e-12 * want.max(1.0),
                    "γ={gamma} t={t}"
                );
                assert_eq!(got.im, 0.0);
            }
        }
        assert!(matches!(mean_n(0.5, &params(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn noiseless_limits_are_polynomial() {
        let p = params(0.0);
        for t in [2.0, 2.3, 2.8, 3.0] {
            let m = moment_m(t, &p).unwrap().re;
            assert_relative_eq!(m, (t - 2.0).powi(2) / 2.0, epsilon = 1e-12);
            let nn = moment_nn_star(t, &p).unwrap();
            assert_relative_eq!(nn, (t - 1.0).powi(2), epsilon = 1e-12);
            let nm = moment_nstar_m(t, &p).unwrap().re;
            assert_relative_eq!(nm, (t - 1.0) * (t - 2.0).powi(2) / 2.0, epsilon = 1e-12);
            let mm = moment_mm_star(t, &p).unwrap();
            assert_relative_eq!(mm, (t - 2.0).powi(4) / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn thresholds() {
        let p = params(1.0);
        assert_eq!(moment_m(2.0, &p).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(moment_m(1.5, &p).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(moment_mm_star(1.9, &p).unwrap(), 0.0);
        assert_eq!(moment_nn_star(0.9, &p).unwrap(), 0.0);
        assert_eq!(mean_n(1.0, &p).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn mean_m_has_disjoint_windows() {
        // Windows in M never overlap, so the average factorises.
        for gamma in [0.5, 1.0, 2.0] {
            let t = 2.6;
            let got = moment_m(t, &params(gamma)).unwrap().re;
            let want = (-gamma).exp() * (t - 2.0f64).powi(2) / 2.0;
            assert_relative_eq!(got, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn nn_star_in_second_interval_is_ou_msd() {
        // On [τ, 2τ] the lag never exceeds τ: ∫∫ e^{−γ|s−s'|} = (2/γ²)(γL + e^{−γL} − 1).
        let gamma: f64 = 2.0;
        for t in [1.2, 1.5, 2.0] {
            let l = t - 1.0;
            let want = 2.0 / (gamma * gamma) * (gamma * l + (-gamma * l).exp() - 1.0);
            let got = moment_nn_star(t, &params(gamma)).unwrap();
            assert_relative_eq!(got, want, max_relative = 1e-9);
        }
    }

    #[test]
    fn nn_star_third_interval_brute_force() {
        // Kernel depends on the lag only; reduce to ∫ (L − |Δ|) k(Δ) dΔ with a fine midpoint sum.
        let gamma = 1.0;
        let t = 2.7;
        let l = t - 1.0;
        let n = 400_000;
        let h = 2.0 * l / n as f64;
        let brute: f64 = (0..n)
            .map(|i| {
                let d = -l + (i as f64 + 0.5) * h;
                (l - d.abs()) * (-gamma * d.abs().min(1.0)).exp() * h
            })
            .sum();
        let got = moment_nn_star(t, &params(gamma)).unwrap();
        assert_relative_eq!(got, brute, max_relative = 1e-7);
    }

    #[test]
    fn cauchy_schwarz() {
        let p = params(1.0);
        for t in [2.2, 2.6, 3.0] {
            let n = mean_n(t, &p).unwrap();
            assert!(moment_nn_star(t, &p).unwrap() >= n.norm_sqr());
            let m = moment_m(t, &p).unwrap();
            assert!(moment_mm_star(t, &p).unwrap() >= m.norm_sqr());
        }
    }

    #[test]
    fn bad_settings_are_rejected() {
        let q = MomentQuadrature {
            rel_tol: 1e-4,
            base_nodes: 8,
            max_nodes: 4,
        };
        assert!(q.nn_star(2.5, &params(1.0)).is_err());
        let q = MomentQuadrature {
            rel_tol: 1e-30,
            base_nodes: 2,
            max_nodes: 4,
        };
        assert!(matches!(
            q.mm_star(2.9, &params(3.0)),
            Err(Error::QuadratureFailure { .. })
        ));
    }
}
