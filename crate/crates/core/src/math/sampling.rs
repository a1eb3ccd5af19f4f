//! Poisson and gamma samplers backing the direct (non-quantile)
//! noncentral chi-square draw.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Poisson sample by Knuth's product method, splitting large means so the
/// running product never underflows.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    assert!(mean >= 0.0 && mean.is_finite());
    let mut remaining = mean;
    let mut total = 0u64;
    while remaining > 30.0 {
        total += knuth(rng, 30.0);
        remaining -= 30.0;
    }
    total + knuth(rng, remaining)
}

fn knuth<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let limit = (-mean).exp();
    let mut k = 0u64;
    let mut p = 1.0;
    loop {
        p *= rng.random_range(0.0..1.0f64);
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

/// Gamma(shape, scale 1) via Marsaglia–Tsang squeeze, with the boost
/// `G(a) = G(a+1) · U^{1/a}` for shape < 1.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    assert!(shape > 0.0 && shape.is_finite());
    if shape < 1.0 {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        return sample_gamma(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v3 = v * v * v;
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        if u < 1.0 - 0.0331 * x * x * x * x
            || u.ln() < 0.5 * x * x + d * (1.0 - v3 + v3.ln())
        {
            return d * v3;
        }
    }
}

/// Direct noncentral chi-square sample. Exact in law: for `df > 1` the
/// noncentrality rides a single squared normal; otherwise a Poisson
/// mixture of central chi-squares.
pub fn sample_ncx2<R: Rng + ?Sized>(rng: &mut R, df: f64, lambda: f64) -> f64 {
    assert!(df > 0.0 && lambda >= 0.0);
    if df > 1.0 {
        let z: f64 = StandardNormal.sample(rng);
        let w = z + lambda.sqrt();
        let central = if df > 1.0 + 1e-12 {
            2.0 * sample_gamma(rng, 0.5 * (df - 1.0))
        } else {
            0.0
        };
        w * w + central
    } else {
        let n = sample_poisson(rng, 0.5 * lambda);
        2.0 * sample_gamma(rng, 0.5 * df + n as f64)
    }
}
