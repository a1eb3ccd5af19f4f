use crcva_core::math::ncx2::Ncx2;
use crcva_core::math::special::gamma_p;
use std::time::Instant;

fn main() {
    let d = 0.21;
    let n = 1_000_000u64;

    // reset() alone
    let mut dist = Ncx2::default();
    let t0 = Instant::now();
    let mut acc = 0.0;
    for i in 0..n {
        let lam = 5.0 + 10.0 * ((i % 997) as f64 / 997.0);
        dist.reset(d, lam);
        acc += dist.mean;
    }
    println!("reset: {:.0} ns", t0.elapsed().as_secs_f64() / n as f64 * 1e9);

    // cdf_pdf alone (fixed dist)
    dist.reset(d, 10.0);
    let t1 = Instant::now();
    for i in 0..n {
        let x = 2.0 + 10.0 * ((i % 997) as f64 / 997.0);
        let (f, fp) = dist.cdf_pdf(x);
        acc += f + fp;
    }
    println!("cdf_pdf: {:.0} ns", t1.elapsed().as_secs_f64() / n as f64 * 1e9);

    // gamma_p alone in the relevant regime
    let t2 = Instant::now();
    for i in 0..n {
        let x = 1.0 + 5.0 * ((i % 997) as f64 / 997.0);
        acc += gamma_p(0.105, x);
    }
    println!("gamma_p: {:.0} ns", t2.elapsed().as_secs_f64() / n as f64 * 1e9);

    // full quantile
    let t3 = Instant::now();
    for i in 0..n {
        let lam = 5.0 + 10.0 * ((i % 997) as f64 / 997.0);
        let u = (i as f64 + 0.5) / n as f64;
        dist.reset(d, lam);
        acc += dist.quantile(u, None);
    }
    println!("quantile+reset: {:.0} ns (acc={acc:.1})", t3.elapsed().as_secs_f64() / n as f64 * 1e9);
}
