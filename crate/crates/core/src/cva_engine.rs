//! Joint correlated simulation of `(x, L, y)` and the bucketed CR-CVA.
//!
//! The adjustment for a payer product is
//!
//! ```text
//! CVA = LGD Σ_j D(0,T_j) E[ (e^{-Λ(T_{j-1})} - e^{-Λ(T_j)}) (NPV_j)⁺ ]
//! ```
//!
//! with `NPV_j` the closed-form residual value at `T_j` computed from the
//! simulated factor state (default postponed to the next bucket date).
//! The intensity-weighted form is the default estimator; the indicator
//! estimator (sample `τ = Λ⁻¹(ξ)`) is kept as a cross-check.
//!
//! Correlation: the market quantity is `ρ̄ = corr(dλ, dS)`; assuming the
//! intensity driver correlates equally with both commodity drivers it maps
//! to `ρ1 = ρ̄ √(σ_x² + σ_L² + 2ρ_xL σ_x σ_L) / (σ_x + σ_L)`. Per step the
//! driver triple uses the exact transition correlation for the factor
//! pair and `ρ1` against the intensity driver, whose uniform drives the
//! exact CIR transition quantile.
//!
//! Paths are partitioned into fixed-size chunks evaluated independently
//! and combined in chunk order, so results are bit-identical between the
//! sequential and the worker-pool mode, for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::credit_model::{sample_default_time, CirParams, CirTransition, CreditShift};
use crate::error::{EngineError, Result};
use crate::market_data::ZeroCurve;
use crate::math::ncx2::Ncx2;
use crate::math::special::norm_cdf;
use crate::oil_model::{transition_moments, CalibratedOilModel, OilParams};
use crate::pricers::{CommoditySwap, ForwardContract, Side};

/// Paths per evaluation chunk (pairs count double). Fixed so the
/// accumulation order never depends on the thread pool.
const CHUNK_PATHS: usize = 8192;

/// Product priced by the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Product {
    Forward(ForwardContract),
    Swap(CommoditySwap),
}

impl Product {
    pub fn side(&self) -> Side {
        match self {
            Product::Forward(f) => f.side,
            Product::Swap(s) => s.side,
        }
    }

    pub fn strike(&self) -> f64 {
        match self {
            Product::Forward(f) => f.strike,
            Product::Swap(s) => s.strike,
        }
    }

    pub fn maturity(&self) -> f64 {
        match self {
            Product::Forward(f) => f.maturity,
            Product::Swap(s) => s.maturity(),
        }
    }

    /// Fixed-leg annuity used for percentage and adjusted-strike output.
    pub fn annuity(&self, curve: &ZeroCurve) -> Result<f64> {
        match self {
            Product::Forward(f) => Ok(f.notional * curve.discount_factor(f.maturity)?),
            Product::Swap(s) => s.annuity(curve),
        }
    }
}

/// Market correlation `ρ̄` and its driver-level image `ρ1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    pub rho_bar: f64,
    pub rho1: f64,
    rho_xl: f64,
}

/// Maps the market correlation `corr(dλ, dS)` to the common driver
/// correlation `ρ1 = ρ_{x,y} = ρ_{L,y}` and verifies the induced 3×3
/// driver matrix is a correlation matrix.
pub fn map_market_correlation(rho_bar: f64, p: &OilParams) -> Result<CorrelationSpec> {
    if !(-1.0..=1.0).contains(&rho_bar) {
        return Err(EngineError::invalid(
            "rho_bar",
            format!("{rho_bar} outside [-1, 1]"),
        ));
    }
    let denom = p.sigma_x + p.sigma_l;
    if !(denom > 0.0) {
        return Err(EngineError::invalid(
            "oil params",
            "σ_x + σ_L must be > 0 to map a correlation",
        ));
    }
    let spot_vol = p.spot_variance().sqrt();
    let rho1 = rho_bar * spot_vol / denom;
    // PSD of [[1, ρxL, ρ1], [ρxL, 1, ρ1], [ρ1, ρ1, 1]] needs
    // 2ρ1² <= 1 + ρxL.
    let limit = ((1.0 + p.rho_xl) / 2.0).sqrt();
    if rho1.abs() > 1.0 || rho1.abs() > limit + 1e-12 {
        let rho_bar_max = limit * denom / spot_vol;
        return Err(EngineError::invalid(
            "rho_bar",
            format!(
                "ρ1 = {rho1:.4} makes the driver matrix non-PSD; feasible ρ̄ range is [{:.4}, {:.4}]",
                -rho_bar_max, rho_bar_max
            ),
        ));
    }
    Ok(CorrelationSpec {
        rho_bar,
        rho1,
        rho_xl: p.rho_xl,
    })
}

impl CorrelationSpec {
    /// Lower-triangular factor of the per-step driver correlation. The
    /// factor pair uses the exact transition correlation of the step so
    /// consecutive exact transitions stay exact; the intensity driver
    /// carries `ρ1` against both.
    fn step_cholesky(&self, rho_step: f64) -> Result<[[f64; 3]; 3]> {
        let c21 = rho_step;
        let c22 = (1.0 - c21 * c21).max(0.0).sqrt();
        let c31 = self.rho1;
        let c32 = if c22 > 0.0 {
            self.rho1 * (1.0 - c21) / c22
        } else {
            0.0
        };
        let rest = 1.0 - c31 * c31 - c32 * c32;
        if rest < -1e-10 {
            return Err(EngineError::simulation(format!(
                "driver correlation matrix not PSD at step correlation {rho_step:.6}"
            )));
        }
        Ok([
            [1.0, 0.0, 0.0],
            [c21, c22, 0.0],
            [c31, c32, rest.max(0.0).sqrt()],
        ])
    }
}

/// Which CVA estimator integrates the default time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    /// Conditional-survival weights `e^{-Λ(T_{j-1})} - e^{-Λ(T_j)}`.
    IntensityWeighted,
    /// Sampled default time `τ = Λ⁻¹(ξ)` postponed to the next bucket.
    Indicator,
}

/// Monte Carlo run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub paths: usize,
    /// Bucket/time grid `T_1 < ... < T_b` (time 0 is implicit).
    pub grid: Vec<f64>,
    pub seed: u64,
    pub estimator: EstimatorMode,
    pub antithetic: bool,
    pub lgd: f64,
    /// Evaluate chunks on the worker pool; results are identical either way.
    pub parallel: bool,
}

impl SimulationConfig {
    /// Monthly grid to `maturity`, the default bucket layout.
    pub fn monthly(maturity: f64, paths: usize, seed: u64, lgd: f64) -> Result<Self> {
        let n = (maturity * 12.0).round() as usize;
        if n == 0 || ((n as f64 / 12.0) - maturity).abs() > 1e-9 {
            return Err(EngineError::invalid(
                "grid",
                format!("maturity {maturity} is not a whole number of months"),
            ));
        }
        Ok(SimulationConfig {
            paths,
            grid: (1..=n).map(|i| i as f64 / 12.0).collect(),
            seed,
            estimator: EstimatorMode::IntensityWeighted,
            antithetic: true,
            lgd,
            parallel: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(EngineError::invalid("paths", "must be >= 1"));
        }
        if self.antithetic && self.paths % 2 != 0 {
            return Err(EngineError::invalid(
                "paths",
                "antithetic pairing needs an even path count",
            ));
        }
        let mut prev = 0.0;
        for &t in &self.grid {
            if t <= prev {
                return Err(EngineError::invalid(
                    "grid",
                    "must be strictly increasing from 0",
                ));
            }
            prev = t;
        }
        if self.grid.is_empty() {
            return Err(EngineError::invalid("grid", "empty grid"));
        }
        if !(0.0..=1.0).contains(&self.lgd) {
            return Err(EngineError::invalid("lgd", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Calibrated joint model: commodity factors, intensity and correlation.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub oil: CalibratedOilModel,
    pub cir: CirParams,
    pub credit_shift: CreditShift,
    pub corr: CorrelationSpec,
}

/// Simulated `(x, L, y, Λ)` trajectories on the bucket grid, plus the
/// per-path exponential trigger for the indicator estimator.
#[derive(Debug, Clone)]
pub struct JointPathEnsemble {
    /// Grid with the leading zero node: `[0, T_1, ..., T_b]`.
    pub times: Vec<f64>,
    pub paths: usize,
    pub x: Vec<f64>,
    pub l: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda_cum: Vec<f64>,
    pub xi: Vec<f64>,
}

impl JointPathEnsemble {
    pub fn nodes(&self) -> usize {
        self.times.len()
    }

    pub fn x_path(&self, p: usize) -> &[f64] {
        let n = self.nodes();
        &self.x[p * n..(p + 1) * n]
    }

    pub fn l_path(&self, p: usize) -> &[f64] {
        let n = self.nodes();
        &self.l[p * n..(p + 1) * n]
    }

    pub fn y_path(&self, p: usize) -> &[f64] {
        let n = self.nodes();
        &self.y[p * n..(p + 1) * n]
    }

    pub fn lambda_path(&self, p: usize) -> &[f64] {
        let n = self.nodes();
        &self.lambda_cum[p * n..(p + 1) * n]
    }
}

/// Per-step simulation context precomputed from the grid.
struct StepContext {
    dt: f64,
    x_decay: f64,
    l_drift: f64,
    sd_x: f64,
    sd_l: f64,
    chol: [[f64; 3]; 3],
    cir: CirTransition,
    psi: f64,
}

struct Simulator<'a> {
    model: &'a JointModel,
    steps: Vec<StepContext>,
    times: Vec<f64>,
}

impl<'a> Simulator<'a> {
    fn new(model: &'a JointModel, cfg: &SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let mut times = Vec::with_capacity(cfg.grid.len() + 1);
        times.push(0.0);
        times.extend_from_slice(&cfg.grid);
        let p = &model.oil.params;
        let mut steps = Vec::with_capacity(cfg.grid.len());
        for w in times.windows(2) {
            let m = transition_moments(p, w[0], w[1])?;
            steps.push(StepContext {
                dt: w[1] - w[0],
                x_decay: m.x_decay,
                l_drift: m.l_drift,
                sd_x: m.var_x.sqrt(),
                sd_l: m.var_l.sqrt(),
                chol: model.corr.step_cholesky(m.step_correlation())?,
                cir: CirTransition::new(&model.cir, w[1] - w[0])?,
                psi: model.credit_shift.value(w[1]),
            });
        }
        Ok(Simulator {
            model,
            steps,
            times,
        })
    }

    fn nodes(&self) -> usize {
        self.times.len()
    }

    /// Simulates the antithetic pair (or a single path when `minus` is
    /// `None`) for stream index `stream`, filling path-major buffers
    /// `[x | l | y | Λ]` of length `4 · nodes` each.
    fn simulate_pair(
        &self,
        seed: u64,
        stream: u64,
        ws: &mut Ncx2,
        plus: &mut PathBuf,
        mut minus: Option<&mut PathBuf>,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let u_xi: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        plus.xi = -(1.0 - u_xi).ln();
        if let Some(m) = minus.as_deref_mut() {
            m.xi = -u_xi.ln();
        }

        let x0 = self.model.oil.x0;
        let l0 = self.model.oil.l0;
        let y0 = self.model.cir.y0;
        plus.reset(x0, l0, y0);
        if let Some(m) = minus.as_deref_mut() {
            m.reset(x0, l0, y0);
        }

        for (k, step) in self.steps.iter().enumerate() {
            let w1: f64 = StandardNormal.sample(&mut rng);
            let w2: f64 = StandardNormal.sample(&mut rng);
            let w3: f64 = StandardNormal.sample(&mut rng);
            self.advance(step, k, 1.0, (w1, w2, w3), &mut rng, ws, plus);
            if let Some(m) = minus.as_deref_mut() {
                self.advance(step, k, -1.0, (w1, w2, w3), &mut rng, ws, m);
            }
        }
    }

    #[inline]
    fn advance(
        &self,
        step: &StepContext,
        k: usize,
        sign: f64,
        w: (f64, f64, f64),
        rng: &mut ChaCha8Rng,
        ws: &mut Ncx2,
        buf: &mut PathBuf,
    ) {
        let c = &step.chol;
        let zx = sign * w.0;
        let zl = sign * (c[1][0] * w.0 + c[1][1] * w.1);
        let zy = sign * (c[2][0] * w.0 + c[2][1] * w.1 + c[2][2] * w.2);

        let x = buf.x[k] * step.x_decay + step.sd_x * zx;
        let l = buf.l[k] + step.l_drift + step.sd_l * zl;
        let u = norm_cdf(zy);
        let y = step.cir.sample_correlated(buf.y[k], u, zy, rng, ws);
        buf.integral += 0.5 * step.dt * (buf.y[k] + y);
        buf.x[k + 1] = x;
        buf.l[k + 1] = l;
        buf.y[k + 1] = y;
        buf.lambda[k + 1] = step.psi + buf.integral;
    }
}

/// Working buffers for one simulated path.
struct PathBuf {
    x: Vec<f64>,
    l: Vec<f64>,
    y: Vec<f64>,
    lambda: Vec<f64>,
    integral: f64,
    xi: f64,
}

impl PathBuf {
    fn new(nodes: usize) -> Self {
        PathBuf {
            x: vec![0.0; nodes],
            l: vec![0.0; nodes],
            y: vec![0.0; nodes],
            lambda: vec![0.0; nodes],
            integral: 0.0,
            xi: 0.0,
        }
    }

    fn reset(&mut self, x0: f64, l0: f64, y0: f64) {
        self.x[0] = x0;
        self.l[0] = l0;
        self.y[0] = y0;
        self.lambda[0] = 0.0;
        self.integral = 0.0;
    }
}

/// Residual closed-form value tables: for bucket `j`, the payer residual
/// is `e^L Σ_i w_i e^{b_i x} - fixed_j` over payments `T_i >= T_j`.
struct ResidualTable {
    /// Per bucket (1-based step index): exp-coefficients `(w_i, b_i)`.
    coef: Vec<Vec<(f64, f64)>>,
    fixed: Vec<f64>,
    side: Side,
    discount0: Vec<f64>,
}

impl ResidualTable {
    fn build(
        product: &Product,
        oil: &CalibratedOilModel,
        curve: &ZeroCurve,
        grid: &[f64],
    ) -> Result<Self> {
        let p = &oil.params;
        let (payments, notionals, strike, side): (Vec<f64>, Vec<f64>, f64, Side) = match product {
            Product::Forward(f) => (vec![f.maturity], vec![f.notional], f.strike, f.side),
            Product::Swap(s) => (
                s.payment_times.clone(),
                s.notionals.clone(),
                s.strike,
                s.side,
            ),
        };
        // every payment date must sit on the grid
        for &t in &payments {
            if !grid.iter().any(|&g| (g - t).abs() <= 1e-9) {
                return Err(EngineError::invalid(
                    "grid",
                    format!("payment date {t} missing from the bucket grid"),
                ));
            }
        }
        let mut coef = Vec::with_capacity(grid.len());
        let mut fixed = Vec::with_capacity(grid.len());
        let mut discount0 = Vec::with_capacity(grid.len());
        for &t_j in grid {
            let mut row = Vec::new();
            let mut annuity = 0.0;
            for (&t_i, &alpha) in payments.iter().zip(notionals.iter()) {
                if t_i < t_j - 1e-9 {
                    continue;
                }
                let tau = t_i - t_j;
                let disc = curve.forward_discount(t_j, t_i)?;
                let a_i = p.mu_l * tau
                    + oil.shift.value(t_i)
                    + 0.5 * crate::oil_model::total_variance(p, t_j, t_i)?;
                row.push((alpha * disc * a_i.exp(), (-p.k_x * tau).exp()));
                annuity += alpha * disc;
            }
            coef.push(row);
            fixed.push(strike * annuity);
            discount0.push(curve.discount_factor(t_j)?);
        }
        Ok(ResidualTable {
            coef,
            fixed,
            side,
            discount0,
        })
    }

    /// Positive part of the side-adjusted residual value at bucket `j`
    /// (0-based into the grid) for factor state `(x, L)`.
    #[inline]
    fn positive_exposure(&self, j: usize, x: f64, l: f64) -> f64 {
        let row = &self.coef[j];
        if row.is_empty() {
            return 0.0;
        }
        let mut a = 0.0;
        for &(w, b) in row {
            a += w * (b * x).exp();
        }
        let payer_value = l.exp() * a - self.fixed[j];
        (self.side.sign() * payer_value).max(0.0)
    }
}

/// Per-chunk accumulation: estimator sums plus the undiscounted option
/// strip used for the upper-bound invariant.
#[derive(Debug, Clone, Default)]
struct ChunkStats {
    n: usize,
    sum: f64,
    sum_sq: f64,
    strip_sum: f64,
}

impl ChunkStats {
    fn merge(&mut self, other: &ChunkStats) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.strip_sum += other.strip_sum;
    }
}

/// Scenario labels attached to a result row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMeta {
    pub rho_bar: f64,
    pub oil_vol_mult: f64,
    pub cir_vol_mult: f64,
    pub side: Side,
    pub estimator: EstimatorMode,
}

/// CVA estimate with its uncertainty and derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaResult {
    pub cva: f64,
    pub std_error: f64,
    pub cva_pct_of_fixed_leg: f64,
    pub adjusted_strike: f64,
    pub fixed_leg: f64,
    pub annuity: f64,
    /// `LGD ×` undiscounted mean option strip: an upper bound for the CVA.
    pub strip_bound: f64,
    pub scenario: ScenarioMeta,
    /// Count of grid intervals where the relaxed shift fit needed ψ < 0.
    pub psi_violations: usize,
}

/// Strike shift equivalent to the adjustment: `K - cva/annuity` for the
/// payer, `K + cva/annuity` for the receiver.
pub fn adjusted_strike(strike: f64, cva: f64, annuity: f64, side: Side) -> Result<f64> {
    if !(annuity > 0.0) {
        return Err(EngineError::domain("adjusted_strike: annuity must be > 0".to_string()));
    }
    Ok(strike - side.sign() * cva / annuity)
}

/// Simulates the full ensemble (all paths stored). Prefer
/// [`cva_monte_carlo`] for large path counts; this is the inspection and
/// testing surface.
pub fn simulate_joint_paths(
    model: &JointModel,
    cfg: &SimulationConfig,
) -> Result<JointPathEnsemble> {
    let sim = Simulator::new(model, cfg)?;
    let nodes = sim.nodes();
    let paths = cfg.paths;
    let mut ens = JointPathEnsemble {
        times: sim.times.clone(),
        paths,
        x: vec![0.0; paths * nodes],
        l: vec![0.0; paths * nodes],
        y: vec![0.0; paths * nodes],
        lambda_cum: vec![0.0; paths * nodes],
        xi: vec![0.0; paths],
    };
    let mut plus = PathBuf::new(nodes);
    let mut minus = PathBuf::new(nodes);
    let mut ws = Ncx2::default();
    let mut p = 0usize;
    let mut stream = 0u64;
    while p < paths {
        if cfg.antithetic {
            sim.simulate_pair(cfg.seed, stream, &mut ws, &mut plus, Some(&mut minus));
            copy_into(&mut ens, p, &plus, nodes);
            copy_into(&mut ens, p + 1, &minus, nodes);
            p += 2;
        } else {
            sim.simulate_pair(cfg.seed, stream, &mut ws, &mut plus, None);
            copy_into(&mut ens, p, &plus, nodes);
            p += 1;
        }
        stream += 1;
    }
    Ok(ens)
}

fn copy_into(ens: &mut JointPathEnsemble, p: usize, buf: &PathBuf, nodes: usize) {
    ens.x[p * nodes..(p + 1) * nodes].copy_from_slice(&buf.x);
    ens.l[p * nodes..(p + 1) * nodes].copy_from_slice(&buf.l);
    ens.y[p * nodes..(p + 1) * nodes].copy_from_slice(&buf.y);
    ens.lambda_cum[p * nodes..(p + 1) * nodes].copy_from_slice(&buf.lambda);
    ens.xi[p] = buf.xi;
}

fn path_contribution(
    table: &ResidualTable,
    cfg: &SimulationConfig,
    times: &[f64],
    buf: &PathBuf,
) -> (f64, f64) {
    let b = times.len() - 1;
    let mut strip = 0.0;
    let value = match cfg.estimator {
        EstimatorMode::IntensityWeighted => {
            let mut acc = 0.0;
            for j in 0..b {
                let w = (-buf.lambda[j]).exp() - (-buf.lambda[j + 1]).exp();
                let pos = table.positive_exposure(j, buf.x[j + 1], buf.l[j + 1]);
                strip += pos;
                acc += table.discount0[j] * w * pos;
            }
            cfg.lgd * acc
        }
        EstimatorMode::Indicator => {
            for j in 0..b {
                strip += table.positive_exposure(j, buf.x[j + 1], buf.l[j + 1]);
            }
            match sample_default_time(times, &buf.lambda, buf.xi) {
                Some(tau) => {
                    // postpone to the first grid date at or after τ
                    let j = times[1..].partition_point(|&t| t < tau - 1e-12);
                    if j < b {
                        let pos = table.positive_exposure(j, buf.x[j + 1], buf.l[j + 1]);
                        cfg.lgd * table.discount0[j] * pos
                    } else {
                        0.0
                    }
                }
                None => 0.0,
            }
        }
    };
    (value, cfg.lgd * strip)
}

fn run_streaming(
    model: &JointModel,
    table: &ResidualTable,
    cfg: &SimulationConfig,
) -> Result<ChunkStats> {
    let sim = Simulator::new(model, cfg)?;
    let nodes = sim.nodes();
    let per_draw = if cfg.antithetic { 2 } else { 1 };
    let draws = cfg.paths / per_draw;
    let chunk_draws = CHUNK_PATHS / per_draw;
    let n_chunks = draws.div_ceil(chunk_draws);

    let run_chunk = |chunk: usize| -> ChunkStats {
        let lo = chunk * chunk_draws;
        let hi = ((chunk + 1) * chunk_draws).min(draws);
        let mut plus = PathBuf::new(nodes);
        let mut minus = PathBuf::new(nodes);
        let mut ws = Ncx2::default();
        let mut stats = ChunkStats::default();
        for stream in lo..hi {
            if cfg.antithetic {
                sim.simulate_pair(cfg.seed, stream as u64, &mut ws, &mut plus, Some(&mut minus));
                let (vp, sp) = path_contribution(table, cfg, &sim.times, &plus);
                let (vm, sm) = path_contribution(table, cfg, &sim.times, &minus);
                let v = 0.5 * (vp + vm);
                stats.n += 1;
                stats.sum += v;
                stats.sum_sq += v * v;
                stats.strip_sum += 0.5 * (sp + sm);
            } else {
                sim.simulate_pair(cfg.seed, stream as u64, &mut ws, &mut plus, None);
                let (v, s) = path_contribution(table, cfg, &sim.times, &plus);
                stats.n += 1;
                stats.sum += v;
                stats.sum_sq += v * v;
                stats.strip_sum += s;
            }
        }
        stats
    };

    let chunks: Vec<ChunkStats> = if cfg.parallel {
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    } else {
        (0..n_chunks).map(run_chunk).collect()
    };
    let mut total = ChunkStats::default();
    for c in &chunks {
        total.merge(c);
    }
    Ok(total)
}

fn finalize(
    product: &Product,
    curve: &ZeroCurve,
    stats: &ChunkStats,
    scenario: ScenarioMeta,
    psi_violations: usize,
) -> Result<CvaResult> {
    let n = stats.n as f64;
    let cva = stats.sum / n;
    let var = (stats.sum_sq / n - cva * cva).max(0.0);
    let std_error = (var / n).sqrt();
    let annuity = product.annuity(curve)?;
    let fixed_leg = product.strike() * annuity;
    Ok(CvaResult {
        cva,
        std_error,
        cva_pct_of_fixed_leg: if fixed_leg != 0.0 {
            100.0 * cva / fixed_leg
        } else {
            0.0
        },
        adjusted_strike: adjusted_strike(product.strike(), cva, annuity, product.side())?,
        fixed_leg,
        annuity,
        strip_bound: stats.strip_sum / n,
        scenario,
        psi_violations,
    })
}

/// Bucketed CR-CVA over a pre-simulated ensemble.
pub fn cva_bucketed(
    product: &Product,
    model: &JointModel,
    curve: &ZeroCurve,
    ensemble: &JointPathEnsemble,
    cfg: &SimulationConfig,
) -> Result<CvaResult> {
    cfg.validate()?;
    let table = ResidualTable::build(product, &model.oil, curve, &cfg.grid)?;
    let nodes = ensemble.nodes();
    let mut stats = ChunkStats::default();
    let mut buf = PathBuf::new(nodes);
    let per_draw = if cfg.antithetic { 2 } else { 1 };
    let mut p = 0;
    while p < ensemble.paths {
        let mut v_acc = 0.0;
        let mut s_acc = 0.0;
        for q in 0..per_draw {
            buf.x.copy_from_slice(ensemble.x_path(p + q));
            buf.l.copy_from_slice(ensemble.l_path(p + q));
            buf.y.copy_from_slice(ensemble.y_path(p + q));
            buf.lambda.copy_from_slice(ensemble.lambda_path(p + q));
            buf.xi = ensemble.xi[p + q];
            let (v, s) = path_contribution(&table, cfg, &ensemble.times, &buf);
            v_acc += v;
            s_acc += s;
        }
        stats.n += 1;
        stats.sum += v_acc / per_draw as f64;
        stats.sum_sq += (v_acc / per_draw as f64).powi(2);
        stats.strip_sum += s_acc / per_draw as f64;
        p += per_draw;
    }
    finalize(
        product,
        curve,
        &stats,
        ScenarioMeta {
            rho_bar: model.corr.rho_bar,
            oil_vol_mult: 1.0,
            cir_vol_mult: 1.0,
            side: product.side(),
            estimator: cfg.estimator,
        },
        0,
    )
}

/// Bucketed CR-CVA with streaming simulation (fixed memory footprint).
/// Identical output to [`cva_bucketed`] over [`simulate_joint_paths`] for
/// the same configuration.
pub fn cva_monte_carlo(
    product: &Product,
    model: &JointModel,
    curve: &ZeroCurve,
    cfg: &SimulationConfig,
) -> Result<CvaResult> {
    let table = ResidualTable::build(product, &model.oil, curve, &cfg.grid)?;
    let stats = run_streaming(model, &table, cfg)?;
    finalize(
        product,
        curve,
        &stats,
        ScenarioMeta {
            rho_bar: model.corr.rho_bar,
            oil_vol_mult: 1.0,
            cir_vol_mult: 1.0,
            side: product.side(),
            estimator: cfg.estimator,
        },
        0,
    )
}

/// One axis-product sweep specification: all combinations of `ρ̄`, oil
/// volatility multipliers and intensity volatility multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub rho_bars: Vec<f64>,
    pub oil_vol_mults: Vec<f64>,
    pub cir_vol_mults: Vec<f64>,
}

/// Everything a sweep needs to recalibrate each cell from raw market data.
pub struct SweepInputs<'a> {
    pub product: &'a Product,
    pub curve: &'a ZeroCurve,
    pub fwd_quotes: &'a crate::market_data::ForwardCurveQuotes,
    pub market_hazard: &'a crate::market_data::HazardCurve,
    /// Maturities where the recalibrated survival must match the market
    /// (the CDS quote maturities).
    pub survival_check_at: &'a [f64],
    pub oil_base: OilParams,
    pub cir_base: CirParams,
    pub x0: f64,
    pub l0: f64,
    pub config: &'a SimulationConfig,
}

/// One sweep cell: scenario key plus the outcome (a failed recalibration
/// aborts the cell, not the sweep).
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub rho_bar: f64,
    pub oil_vol_mult: f64,
    pub cir_vol_mult: f64,
    pub outcome: std::result::Result<CvaResult, String>,
}

/// Runs the scenario grid: per cell, scale the volatilities, recalibrate
/// the curve shift and the survival shift so the market fits are
/// preserved, remap the correlation, and price.
pub fn run_sweep(inputs: &SweepInputs, spec: &SweepSpec) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &rho_bar in &spec.rho_bars {
        for &m_oil in &spec.oil_vol_mults {
            for &m_cir in &spec.cir_vol_mults {
                let outcome =
                    run_cell(inputs, rho_bar, m_oil, m_cir).map_err(|e| e.to_string());
                cells.push(SweepCell {
                    rho_bar,
                    oil_vol_mult: m_oil,
                    cir_vol_mult: m_cir,
                    outcome,
                });
            }
        }
    }
    cells
}

fn run_cell(
    inputs: &SweepInputs,
    rho_bar: f64,
    m_oil: f64,
    m_cir: f64,
) -> Result<CvaResult> {
    if !(m_oil > 0.0) || !(m_cir > 0.0) {
        return Err(EngineError::invalid(
            "multiplier",
            "volatility multipliers must be > 0",
        ));
    }
    let oil_params = inputs.oil_base.with_vol_multiplier(m_oil)?;
    let shift =
        crate::oil_model::calibrate_shift(&oil_params, inputs.fwd_quotes, inputs.x0, inputs.l0)?;
    let cir = inputs.cir_base.with_vol_multiplier(m_cir)?;
    let (credit_shift, violations) = crate::credit_model::fit_credit_shift_relaxed(
        &cir,
        inputs.market_hazard,
        &inputs.config.grid,
    )?;
    for &t in inputs.survival_check_at {
        let model_q = crate::credit_model::model_survival(&cir, &credit_shift, t)?;
        let market_q = inputs.market_hazard.survival_probability(t)?;
        if (model_q - market_q).abs() > 1e-10 {
            return Err(EngineError::calibration(format!(
                "recalibrated survival misses the market at {t}y: {model_q} vs {market_q}"
            )));
        }
    }
    let corr = map_market_correlation(rho_bar, &oil_params)?;
    let model = JointModel {
        oil: CalibratedOilModel {
            params: oil_params,
            shift,
            x0: inputs.x0,
            l0: inputs.l0,
        },
        cir,
        credit_shift,
        corr,
    };
    let table = ResidualTable::build(inputs.product, &model.oil, inputs.curve, &inputs.config.grid)?;
    let stats = run_streaming(&model, &table, inputs.config)?;
    finalize(
        inputs.product,
        inputs.curve,
        &stats,
        ScenarioMeta {
            rho_bar,
            oil_vol_mult: m_oil,
            cir_vol_mult: m_cir,
            side: inputs.product.side(),
            estimator: inputs.config.estimator,
        },
        violations.len(),
    )
}

/// Monte Carlo survival estimates `E[e^{-Λ(t)}]` with standard errors at
/// the requested grid times.
pub fn survival_monte_carlo(
    model: &JointModel,
    cfg: &SimulationConfig,
    at: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let sim = Simulator::new(model, cfg)?;
    let nodes = sim.nodes();
    let idx: Vec<usize> = at
        .iter()
        .map(|&t| {
            sim.times
                .iter()
                .position(|&g| (g - t).abs() <= 1e-9)
                .ok_or_else(|| {
                    EngineError::invalid("times", format!("requested time {t} not on the grid"))
                })
        })
        .collect::<Result<_>>()?;

    let per_draw = if cfg.antithetic { 2 } else { 1 };
    let draws = cfg.paths / per_draw;
    let chunk_draws = CHUNK_PATHS / per_draw;
    let n_chunks = draws.div_ceil(chunk_draws);

    let run_chunk = |chunk: usize| -> (usize, Vec<f64>, Vec<f64>) {
        let lo = chunk * chunk_draws;
        let hi = ((chunk + 1) * chunk_draws).min(draws);
        let mut plus = PathBuf::new(nodes);
        let mut minus = PathBuf::new(nodes);
        let mut ws = Ncx2::default();
        let mut sums = vec![0.0; idx.len()];
        let mut sums_sq = vec![0.0; idx.len()];
        let mut n = 0usize;
        for stream in lo..hi {
            let m = if cfg.antithetic {
                sim.simulate_pair(cfg.seed, stream as u64, &mut ws, &mut plus, Some(&mut minus));
                Some(&minus)
            } else {
                sim.simulate_pair(cfg.seed, stream as u64, &mut ws, &mut plus, None);
                None
            };
            n += 1;
            for (slot, &k) in idx.iter().enumerate() {
                let mut v = (-plus.lambda[k]).exp();
                if let Some(mb) = m {
                    v = 0.5 * (v + (-mb.lambda[k]).exp());
                }
                sums[slot] += v;
                sums_sq[slot] += v * v;
            }
        }
        (n, sums, sums_sq)
    };

    let chunks: Vec<(usize, Vec<f64>, Vec<f64>)> = if cfg.parallel {
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    } else {
        (0..n_chunks).map(run_chunk).collect()
    };
    let mut n = 0usize;
    let mut sums = vec![0.0; idx.len()];
    let mut sums_sq = vec![0.0; idx.len()];
    for (cn, cs, cq) in &chunks {
        n += cn;
        for i in 0..idx.len() {
            sums[i] += cs[i];
            sums_sq[i] += cq[i];
        }
    }
    Ok(at
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mean = sums[i] / n as f64;
            let var = (sums_sq[i] / n as f64 - mean * mean).max(0.0);
            (t, mean, (var / n as f64).sqrt())
        })
        .collect())
}
