//! Single-pass mean / variance accumulation.

/// Welford accumulator with Chan-style pairwise merging.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Welford) -> Welford {
        let (mean, m2, n) =
            merge_moments(self.n, self.mean, self.m2, other.n, other.mean, other.m2);
        Welford { n, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean, `sqrt(m2 / (n(n−1)))`. Infinite below two samples.
    pub fn stderr(&self) -> f64 {
        stderr_of(self.n, self.m2)
    }
}

#[inline]
pub(crate) fn merge_moments(
    na: u64,
    ma: f64,
    m2a: f64,
    nb: u64,
    mb: f64,
    m2b: f64,
) -> (f64, f64, u64) {
    if nb == 0 {
        return (ma, m2a, na);
    }
    if na == 0 {
        return (mb, m2b, nb);
    }
    let n = na + nb;
    let (fa, fb, f) = (na as f64, nb as f64, n as f64);
    let delta = mb - ma;
    let mean = (fa * ma + fb * mb) / f;
    let m2 = m2a + m2b + delta * delta * fa * fb / f;
    (mean, m2, n)
}

#[inline]
pub(crate) fn stderr_of(n: u64, m2: f64) -> f64 {
    if n < 2 {
        f64::INFINITY
    } else {
        (m2.max(0.0) / (n as f64 * (n - 1) as f64)).sqrt()
    }
}
