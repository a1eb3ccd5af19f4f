//! Gauss–Hermite quadrature for expectations against a standard normal.

/// Nodes and weights for `∫ f(x) e^{-x²} dx ≈ Σ w_i f(x_i)` (physicists'
/// convention), computed by Newton iteration on the Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut z = 0.0_f64;

    for i in 0..m {
        // Standard initial guesses for the largest roots, then step down.
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // Recurrence for orthonormal Hermite functions.
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2
                    - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}

/// Expectation `E[f(Z)]` for standard normal `Z` using `n`-point
/// Gauss–Hermite (substitution `z = √2 x`).
pub fn normal_expectation<F: FnMut(f64) -> f64>(n: usize, mut f: F) -> f64 {
    let (nodes, weights) = gauss_hermite(n);
    let norm = 1.0 / std::f64::consts::PI.sqrt();
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        acc += w * f(std::f64::consts::SQRT_2 * x);
    }
    acc * norm
}
