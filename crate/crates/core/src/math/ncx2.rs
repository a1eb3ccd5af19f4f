//! Noncentral chi-square distribution: CDF, density and quantile.
//!
//! The CDF is the Poisson mixture of central chi-square CDFs,
//!
//! ```text
//! F(x; d, λ) = Σ_j  e^{-λ/2} (λ/2)^j / j!  ·  P(d/2 + j, x/2)
//! ```
//!
//! evaluated with two-sided recurrences around the Poisson mode so the
//! term count stays `O(√λ)`. The anchor `P(a_lo, x/2)` is computed from
//! the all-positive Kummer series with reciprocals precomputed per
//! distribution, which keeps repeated CDF evaluations cheap. The quantile
//! runs safeguarded Newton in log-x (the left tail is a power law
//! `x^{d/2}`, linear in logs) with the density from the same series pass.
//! For very large `d + 2λ` the law is within float noise of a Gaussian
//! and a moment-matched normal is used instead.
//!
//! This is the machinery behind the exact CIR transition sampler: a
//! single uniform drives the quantile, so a correlated Gaussian can be
//! pushed through `Φ` and carry its full correlation into the intensity.

use std::sync::OnceLock;

use super::special::{gamma_p, ln_gamma, norm_ppf};

/// Above this `d + 2λ` the moment-matched normal quantile is used.
const NORMAL_REGIME: f64 = 2.0e5;

/// Poisson weights below this relative size are dropped from the mixture.
/// The truncated mass is orders of magnitude below Monte Carlo resolution.
const WEIGHT_TRIM: f64 = 1e-15;

/// ln(j!) table shared across workspaces.
fn ln_factorial(j: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = vec![0.0; 20_001];
        for j in 1..t.len() {
            t[j] = t[j - 1] + (j as f64).ln();
        }
        t
    });
    match table.get(j) {
        Some(&v) => v,
        None => ln_gamma(j as f64 + 1.0),
    }
}

/// Workspace holding the Poisson weights for a fixed `(d, λ)` so repeated
/// CDF evaluations (Newton iterations) do not recompute them, and so the
/// buffers can be reused across samples.
#[derive(Debug, Default)]
pub struct Ncx2 {
    half_df: f64,
    /// Poisson(λ/2) weights for j in `j_lo..`.
    weights: Vec<f64>,
    /// Master reciprocal ladder `1/(d/2 + m)` for m = 1, 2, ... shared by
    /// the gamma recurrence and the anchor series; survives resets while
    /// `df` stays fixed (the common case in a simulation).
    recip: Vec<f64>,
    j_lo: usize,
    /// Precomputed ln Γ(d/2 + j_lo + 1).
    ln_gamma_alo1: f64,
    pub mean: f64,
    pub sd: f64,
    normal_regime: bool,
}

impl Ncx2 {
    pub fn new(df: f64, lambda: f64) -> Self {
        let mut dist = Ncx2::default();
        dist.reset(df, lambda);
        dist
    }

    /// Re-targets the workspace to `(df, λ)`, reusing buffers.
    pub fn reset(&mut self, df: f64, lambda: f64) {
        assert!(df > 0.0 && lambda >= 0.0, "ncx2 requires df > 0, λ >= 0");
        if self.half_df != 0.5 * df {
            self.recip.clear();
        }
        self.half_df = 0.5 * df;
        self.mean = df + lambda;
        self.sd = (2.0 * (df + 2.0 * lambda)).sqrt();
        self.weights.clear();
        self.normal_regime = df + 2.0 * lambda > NORMAL_REGIME;
        if self.normal_regime {
            self.j_lo = 0;
            self.ln_gamma_alo1 = 0.0;
            return;
        }

        let s = 0.5 * lambda;
        let j_mode = s.floor() as usize;
        let w_mode = if s > 0.0 {
            (-s + (j_mode as f64) * s.ln() - ln_factorial(j_mode)).exp()
        } else {
            1.0
        };

        // Downward from the mode first so the buffer ends up ordered.
        let mut w = w_mode;
        let mut j = j_mode;
        while j > 0 {
            w *= j as f64 / s;
            j -= 1;
            if w < WEIGHT_TRIM {
                break;
            }
            self.weights.push(w);
        }
        self.j_lo = j_mode - self.weights.len();
        self.weights.reverse();
        self.weights.push(w_mode);
        w = w_mode;
        j = j_mode;
        loop {
            j += 1;
            w *= s / j as f64;
            if w < WEIGHT_TRIM {
                break;
            }
            self.weights.push(w);
        }

        self.ln_gamma_alo1 = ln_gamma(self.half_df + self.j_lo as f64 + 1.0);
    }

    #[inline]
    fn a_lo(&self) -> f64 {
        self.half_df + self.j_lo as f64
    }

    /// Grows the master reciprocal ladder to at least `len` entries.
    fn ensure_recip(&mut self, len: usize) {
        while self.recip.len() < len {
            let m = self.recip.len() as f64 + 1.0;
            self.recip.push(1.0 / (self.half_df + m));
        }
    }

    /// Anchor `P(a_lo, x2)` given `t_lo = x2^{a_lo} e^{-x2} / Γ(a_lo+1)`,
    /// using the all-positive series
    /// `P(a, x) = t_lo · Σ_k x^k / ((a+1)···(a+k))`
    /// over cached reciprocals. Falls back to the general-purpose routine
    /// if the series would run long.
    fn anchor_p(&mut self, x2: f64, t_lo: f64) -> f64 {
        let a_lo = self.a_lo();
        if t_lo == 0.0 || x2 > a_lo + 220.0 {
            return gamma_p(a_lo, x2);
        }
        let terms = (x2 + 20.0 * x2.sqrt() + 30.0) as usize + 2;
        // recip[m-1] = 1/(d/2 + m), so 1/(a_lo + k) sits at j_lo + k - 1.
        self.ensure_recip(self.j_lo + terms);
        let ladder = &self.recip[self.j_lo..self.j_lo + terms];
        let mut term = 1.0;
        let mut sum = 1.0;
        for &r in ladder {
            term *= x2 * r;
            sum += term;
            if term < 1e-16 * sum {
                break;
            }
        }
        (t_lo * sum).min(1.0)
    }

    /// CDF and PDF at `x` in one series pass.
    pub fn cdf_pdf(&mut self, x: f64) -> (f64, f64) {
        if x <= 0.0 {
            return (0.0, 0.0);
        }
        if self.normal_regime {
            let z = (x - self.mean) / self.sd;
            let cdf = super::special::norm_cdf(z);
            let pdf = super::special::norm_pdf(z) / self.sd;
            return (cdf, pdf);
        }
        let x2 = 0.5 * x;
        let a_lo = self.a_lo();

        // t_j = (x/2)^{a+j} e^{-x/2} / Γ(a+j+1), the step between
        // consecutive regularized gammas: P(a+j, x2) - P(a+j+1, x2) = t_j.
        let mut t = (a_lo * x2.ln() - x2 - self.ln_gamma_alo1).exp();
        let mut p = self.anchor_p(x2, t);
        self.ensure_recip(self.j_lo + self.weights.len());
        let ladder = &self.recip[self.j_lo..self.j_lo + self.weights.len()];

        let mut cdf = 0.0;
        let mut pdf_scaled = 0.0; // Σ w_j t_j (a+j); pdf = that / x
        let mut aj = a_lo;
        for (&w, &inv_aj1) in self.weights.iter().zip(ladder) {
            cdf += w * p;
            pdf_scaled += w * t * aj;
            p = (p - t).max(0.0);
            t *= x2 * inv_aj1;
            aj += 1.0;
        }
        (cdf.clamp(0.0, 1.0), pdf_scaled / x)
    }

    /// Quantile by bracketed Newton in log-x. `z_hint`, when finite, is
    /// `Φ⁻¹(u)` supplied by the caller to avoid recomputing it.
    pub fn quantile(&mut self, u: f64, z_hint: Option<f64>) -> f64 {
        assert!((0.0..=1.0).contains(&u), "quantile requires u in [0,1]");
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return f64::INFINITY;
        }
        let z = z_hint.unwrap_or_else(|| norm_ppf(u));
        if self.normal_regime {
            return (self.mean + self.sd * z).max(0.0);
        }

        let ln_u = u.ln();
        let mut lx = self.initial_guess(u, z).ln().clamp(-700.0, 700.0);
        let (mut llo, mut lhi) = (-745.0_f64, 709.0_f64);

        for _ in 0..100 {
            let x = lx.exp();
            let (f, fp) = self.cdf_pdf(x);
            if f > 0.0 {
                let g = f.ln() - ln_u;
                if g.abs() < 1e-10 {
                    return x;
                }
                if g > 0.0 {
                    lhi = lhi.min(lx);
                } else {
                    llo = llo.max(lx);
                }
                // dG/d(ln x) = x f'(x) / F(x)
                let slope = x * fp / f;
                let mut next = if slope > 0.0 && slope.is_finite() {
                    lx - g / slope
                } else {
                    f64::NAN
                };
                if !next.is_finite() || next <= llo || next >= lhi {
                    next = 0.5 * (llo + lhi);
                }
                if (next - lx).abs() < 1e-15 * (1.0 + lx.abs()) {
                    return next.exp();
                }
                lx = next;
            } else {
                // Underflowed CDF: quantile lies to the right.
                llo = llo.max(lx);
                lx = if lhi < 709.0 {
                    0.5 * (llo + lhi)
                } else {
                    lx + 20.0
                };
            }
        }
        lx.exp()
    }

    /// Wilson–Hilferty start via a moment-matched scaled central
    /// chi-square, with a power-law asymptote for the deep left tail.
    fn initial_guess(&self, u: f64, z: f64) -> f64 {
        let m = self.mean;
        let v = self.sd * self.sd;
        // Treat as c·χ²(f): c = v / (2m), f = 2m²/v.
        let c = v / (2.0 * m);
        let f = 2.0 * m * m / v;
        let h = 2.0 / (9.0 * f);
        let cube = 1.0 - h + z * h.sqrt();
        if cube > 0.05 && u > 1e-4 {
            return c * f * cube * cube * cube;
        }
        // Left tail: F(x) ≈ w_lo (x/2)^{a_lo} / Γ(a_lo + 1).
        let a_lo = self.a_lo();
        let lw = self.weights.first().copied().unwrap_or(1.0).ln();
        let lx2 = (u.ln() - lw + ln_gamma(a_lo + 1.0)) / a_lo;
        let guess = 2.0 * lx2.exp();
        if guess.is_finite() && guess > 0.0 {
            guess
        } else {
            m
        }
    }
}

/// One-shot CDF.
pub fn ncx2_cdf(df: f64, lambda: f64, x: f64) -> f64 {
    Ncx2::new(df, lambda).cdf_pdf(x).0
}

/// One-shot quantile.
pub fn ncx2_quantile(df: f64, lambda: f64, u: f64) -> f64 {
    Ncx2::new(df, lambda).quantile(u, None)
}
