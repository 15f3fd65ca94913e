//! Monte-Carlo machinery: unbiasedness reports over noise/lift/integrand
//! matrices, the Chen-Hermite balancing tester, moment-bound checks, and the
//! Sarmanov copula sampler.
//!
//! Paths are simulated on counter-based per-path streams and accumulated in
//! path-index order with pairwise summation, so every estimate is bit-exact
//! under a fixed seed regardless of worker count.

use rand::Rng;
use rayon::prelude::*;

use crate::bell::hermite_eval;
use crate::controlled::{polynomial_controlled, signature_integrand, Polynomial, SimpleIntegrand};
use crate::csv::ReportRow;
use crate::error::{Error, Result};
use crate::gauss::{
    deterministic_time_change, fbm_factor, ks_critical_value, ks_statistic_normal,
    sample_fbm_with_factor, simulate_bm_stream, simulate_ou_stream, stream_rng, variance_fn,
    variance_from_samples, Grid, SampledPath, VarianceFunction, VarianceKind,
};
use crate::market::renorm_clock;
use crate::pairwise_sum;
use crate::roughpath::{geometric_lift, hermite_lift, lift_from_renorm, RenormTerms, RoughPath1D};

/// A Monte-Carlo mean with its standard error and 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub ci95: (f64, f64),
}

impl MCEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = pairwise_sum(samples) / n as f64;
        let deviations: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let variance = if n > 1 {
            pairwise_sum(&deviations) / (n as f64 - 1.0)
        } else {
            0.0
        };
        let std_error = (variance / n as f64).sqrt();
        MCEstimate {
            mean,
            std_error,
            n_samples: n,
            ci95: (mean - 1.96 * std_error, mean + 1.96 * std_error),
        }
    }

    /// Whether zero lies outside `threshold` standard errors of the mean.
    pub fn rejects_zero_at(&self, threshold: f64) -> bool {
        self.mean.abs() > threshold * self.std_error
    }
}

/// Driving-noise families for experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    Bm,
    Fbm { hurst: f64 },
    Ou { theta: f64, sigma: f64 },
    /// Deterministic power time change `X_{scale t^power}` of an inner noise;
    /// the inner process is simulated out to `scale * T'^power`.
    TimeChanged {
        inner: Box<NoiseKind>,
        scale: f64,
        power: f64,
    },
}

impl NoiseKind {
    pub fn label(&self) -> String {
        match self {
            NoiseKind::Bm => "bm".into(),
            NoiseKind::Fbm { hurst } => format!("fbm({hurst})"),
            NoiseKind::Ou { theta, sigma } => format!("ou({theta},{sigma})"),
            NoiseKind::TimeChanged { inner, scale, power } => {
                format!("tc({},{scale}*t^{power})", inner.label())
            }
        }
    }

    /// Hölder declaration for the lift: fractional noises declare
    /// `min(H, 1/2)`, everything else `1/2` (level-2 regime).
    pub fn alpha(&self) -> f64 {
        match self {
            NoiseKind::Fbm { hurst } => hurst.min(0.5),
            NoiseKind::TimeChanged { inner, .. } => inner.alpha(),
            _ => 0.5,
        }
    }

    /// Marginal variance curve on the grid.
    pub fn variance(&self, grid: Grid) -> Result<VarianceFunction> {
        match self {
            NoiseKind::Bm => variance_fn(VarianceKind::Bm, grid),
            NoiseKind::Fbm { hurst } => variance_fn(VarianceKind::Fbm { hurst: *hurst }, grid),
            NoiseKind::Ou { theta, sigma } => variance_fn(
                VarianceKind::Ou {
                    theta: *theta,
                    sigma: *sigma,
                },
                grid,
            ),
            NoiseKind::TimeChanged { inner, scale, power } => {
                let horizon = scale * grid.horizon().powf(*power);
                let source = Grid::new(horizon.max(f64::MIN_POSITIVE), grid.steps())?;
                let inner_var = inner.variance(source)?;
                let samples = grid
                    .times()
                    .map(|t| {
                        let clocked = scale * t.powf(*power);
                        inner_var.samples()[source.nearest_index(clocked)]
                    })
                    .collect();
                variance_from_samples(grid, samples)
            }
        }
    }

    /// One sample path on stream `stream` of master `seed`.
    pub fn sample(&self, grid: Grid, seed: u64, stream: u64) -> Result<SampledPath> {
        match self {
            NoiseKind::Bm => Ok(simulate_bm_stream(grid, seed, stream)),
            NoiseKind::Fbm { hurst } => {
                let factor = fbm_factor(grid, *hurst)?;
                Ok(sample_fbm_with_factor(&factor, grid, seed, stream))
            }
            NoiseKind::Ou { theta, sigma } => {
                simulate_ou_stream(grid, *theta, *sigma, seed, stream)
            }
            NoiseKind::TimeChanged { inner, scale, power } => {
                let horizon = scale * grid.horizon().powf(*power);
                let source = Grid::new(horizon.max(f64::MIN_POSITIVE), grid.steps())?;
                let path = inner.sample(source, seed, stream)?;
                Ok(deterministic_time_change(&path, grid, |t| scale * t.powf(*power))?.path)
            }
        }
    }
}

/// Lift families over a noise path.
#[derive(Debug, Clone, PartialEq)]
pub enum LiftKind {
    /// `G^2 = -Var/2`, higher terms zero (Gaussian-Hermite).
    Hermite,
    /// All renormalisation terms zero (Stratonovich-consistent for BM).
    Geometric,
    /// The Itô lift; for martingale noises it coincides with Hermite, which
    /// is how it is realised here.
    Ito,
    /// Custom deterministic level-2 renormalisation `G^2(t) = scale * t^power`.
    CustomRenorm { scale: f64, power: f64 },
}

impl LiftKind {
    pub fn label(&self) -> String {
        match self {
            LiftKind::Hermite => "hermite".into(),
            LiftKind::Geometric => "geometric".into(),
            LiftKind::Ito => "ito".into(),
            LiftKind::CustomRenorm { scale, power } => format!("renorm({scale}*t^{power})"),
        }
    }

    pub fn build(&self, noise: &NoiseKind, x: SampledPath, alpha: f64) -> Result<RoughPath1D> {
        let grid = *x.grid();
        match self {
            LiftKind::Hermite | LiftKind::Ito => {
                let v = noise.variance(grid)?;
                hermite_lift(x, &v, alpha)
            }
            LiftKind::Geometric => geometric_lift(x, alpha),
            LiftKind::CustomRenorm { scale, power } => {
                let k = crate::roughpath::level_count_for(alpha);
                let mut paths = vec![vec![0.0; grid.len()]; k - 1];
                for (i, t) in grid.times().enumerate() {
                    paths[0][i] = scale * t.powf(*power);
                }
                lift_from_renorm(x, RenormTerms::new(grid, paths, true)?, alpha)
            }
        }
    }
}

/// Integrand families drawn from the built-in admissible classes.
#[derive(Debug, Clone, PartialEq)]
pub enum IntegrandSpec {
    /// `(P(X), DP(X), ..., D^{k-1}P(X))`.
    Polynomial(Polynomial),
    /// Signature integrand of order `n` started at time `s`.
    Signature { n: usize, s: f64 },
    /// Simple window integrand `xi * 1_{[s,u]}` with `xi = X_s`.
    Simple { s: f64, u: f64 },
}

impl IntegrandSpec {
    pub fn label(&self) -> String {
        match self {
            IntegrandSpec::Polynomial(p) => format!(
                "poly[{}]",
                p.0.iter()
                    .map(|c| format!("{c}"))
                    .collect::<Vec<_>>()
                    .join(";")
            ),
            IntegrandSpec::Signature { n, s } => format!("sig{n}@{s}"),
            IntegrandSpec::Simple { s, u } => format!("simple@{s}:{u}"),
        }
    }
}

/// Stopping rules for the integral horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum StoppingKind {
    /// The terminal time `T`.
    Terminal,
    /// A fixed deterministic time.
    Fixed(f64),
    /// First time the increasing renormalisation clock (`-2 G^2`, i.e. the
    /// variance for Hermite lifts) exceeds `level`.
    RenormClock { level: f64 },
}

impl StoppingKind {
    pub fn label(&self) -> String {
        match self {
            StoppingKind::Terminal => "T".into(),
            StoppingKind::Fixed(t) => format!("t={t}"),
            StoppingKind::RenormClock { level } => format!("clock@{level}"),
        }
    }
}

/// A full experiment: noise, lift, integrand list, stopping list, grid,
/// path count and master seed.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub noise: NoiseKind,
    pub lift: LiftKind,
    pub integrands: Vec<IntegrandSpec>,
    pub stoppings: Vec<StoppingKind>,
    pub grid: Grid,
    pub m_paths: usize,
    pub seed: u64,
}

/// Fraction of failed paths above which a run aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.001;

fn stopping_index(spec: &ExperimentSpec, rp: &RoughPath1D, stopping: &StoppingKind) -> Result<usize> {
    let grid = spec.grid;
    match stopping {
        StoppingKind::Terminal => Ok(grid.steps()),
        StoppingKind::Fixed(t) => {
            let idx = grid.nearest_index(*t);
            if (grid.time(idx) - t).abs() > 1e-9 * grid.horizon() {
                return Err(Error::InvalidInput(format!(
                    "stopping time {t} is not a grid point"
                )));
            }
            Ok(idx)
        }
        StoppingKind::RenormClock { level } => {
            let increasing: Vec<f64> = rp
                .renorm()
                .samples(2)
                .iter()
                .map(|g| -2.0 * g)
                .collect();
            Ok(renorm_clock(&increasing, &grid, *level)?.0)
        }
    }
}

fn path_integral(
    spec: &ExperimentSpec,
    integrand: &IntegrandSpec,
    stopping: &StoppingKind,
    stream: u64,
) -> Result<f64> {
    let x = spec.noise.sample(spec.grid, spec.seed, stream)?;
    let rp = spec.lift.build(&spec.noise, x, spec.noise.alpha())?;
    let tau = stopping_index(spec, &rp, stopping)?;
    match integrand {
        IntegrandSpec::Polynomial(p) => {
            let cp = polynomial_controlled(p, &rp);
            Ok(crate::integrate::cumulative_rough_integral(&cp, &rp)[tau])
        }
        IntegrandSpec::Signature { n, s } => {
            let pcp = signature_integrand(&rp, *n, *s)?;
            Ok(crate::integrate::cumulative_rough_integral_piecewise(&pcp, &rp)[tau])
        }
        IntegrandSpec::Simple { s, u } => {
            let grid = spec.grid;
            let s_idx = grid.nearest_index(*s);
            let u_idx = grid.nearest_index(*u);
            let xi = rp.x().value(s_idx, 0);
            Ok(SimpleIntegrand::new(xi, (s_idx, u_idx))?.integral(rp.x(), tau))
        }
    }
}

/// Monte-Carlo mean of `int_0^tau Y dX` over `m_paths` independent paths;
/// deterministic per seed, parallel over path streams.
pub fn mc_integral_mean(
    spec: &ExperimentSpec,
    integrand_index: usize,
    stopping: &StoppingKind,
) -> Result<MCEstimate> {
    let integrand = spec
        .integrands
        .get(integrand_index)
        .ok_or_else(|| Error::InvalidInput(format!("no integrand {integrand_index}")))?;
    if spec.m_paths == 0 {
        return Err(Error::InvalidInput("zero paths".into()));
    }
    // Pre-build shared state (fBm factor, Bell tables) before fanning out.
    path_integral(spec, integrand, stopping, 0)?;
    let outcomes: Vec<Result<f64>> = (0..spec.m_paths as u64)
        .into_par_iter()
        .map(|stream| path_integral(spec, integrand, stopping, stream))
        .collect();
    let mut values = Vec::with_capacity(spec.m_paths);
    let mut failures = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(v) => values.push(v),
            Err(_) => failures += 1,
        }
    }
    let limit = (MAX_FAILURE_FRACTION * spec.m_paths as f64).floor() as usize;
    if failures > limit {
        return Err(Error::TooManyPathFailures {
            failures,
            total: spec.m_paths,
            limit,
        });
    }
    Ok(MCEstimate::from_samples(&values))
}

/// Family-wise rejection threshold in standard errors for report tables.
pub const REPORT_THRESHOLD_SE: f64 = 4.0;

/// Full cross-product table of Monte-Carlo means per (integrand, stopping),
/// each cell passing when its mean is within four standard errors of zero.
pub fn unbiasedness_report(spec: &ExperimentSpec) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for (idx, integrand) in spec.integrands.iter().enumerate() {
        for stopping in &spec.stoppings {
            let estimate = mc_integral_mean(spec, idx, stopping)?;
            rows.push(ReportRow {
                noise: spec.noise.label(),
                lift: spec.lift.label(),
                integrand: integrand.label(),
                stopping: stopping.label(),
                mean: estimate.mean,
                std_error: estimate.std_error,
                n_samples: estimate.n_samples,
                pass: !estimate.rejects_zero_at(REPORT_THRESHOLD_SE),
            });
        }
    }
    Ok(rows)
}

/// Where the increments for a balancing test come from.
#[derive(Debug, Clone)]
pub enum BalancingSource {
    /// Increments `X_{s,u}`, `X_{u,t}` of a simulated noise, with `s, u, t`
    /// given as grid indices.
    Noise {
        kind: NoiseKind,
        grid: Grid,
        s: usize,
        u: usize,
        t: usize,
    },
    /// The discrete Sarmanov process `(0, X, X + Y)` on times `0, 1, 2`.
    Sarmanov(SarmanovSpec),
}

/// Monte-Carlo estimate of the Chen-Hermite balancing sum
/// `sum_{i=1}^{n-1} E[H_i(X_{s,u}, -(u-s)/2) H_{n-i}(X_{u,t}, -(t-u)/2)]`.
pub fn balancing_residual(
    source: &BalancingSource,
    n: usize,
    m_paths: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if n < 2 {
        return Err(Error::InvalidInput("balancing needs n >= 2".into()));
    }
    let samples: Vec<f64> = match source {
        BalancingSource::Noise { kind, grid, s, u, t } => {
            if !(s <= u && u <= t && *t <= grid.steps()) {
                return Err(Error::InvalidInput("need s <= u <= t on the grid".into()));
            }
            let g_left = -0.5 * (grid.time(*u) - grid.time(*s));
            let g_right = -0.5 * (grid.time(*t) - grid.time(*u));
            // Warm the factor cache before the parallel fan-out.
            kind.sample(*grid, seed, 0)?;
            (0..m_paths as u64)
                .into_par_iter()
                .map(|stream| {
                    let x = kind.sample(*grid, seed, stream)?;
                    let left = x.increment(*s, *u, 0);
                    let right = x.increment(*u, *t, 0);
                    let mut acc = 0.0;
                    for i in 1..n {
                        acc += hermite_eval(i, left, g_left) * hermite_eval(n - i, right, g_right);
                    }
                    Ok(acc)
                })
                .collect::<Result<Vec<f64>>>()?
        }
        BalancingSource::Sarmanov(spec) => {
            let pairs = sarmanov_sample(spec, m_paths, seed)?;
            pairs
                .iter()
                .map(|(x, y)| {
                    let mut acc = 0.0;
                    for i in 1..n {
                        acc += hermite_eval(i, *x, -0.5) * hermite_eval(n - i, *y, -0.5);
                    }
                    acc
                })
                .collect()
        }
    };
    Ok(MCEstimate::from_samples(&samples))
}

/// One row of the moment-bound table for `sup_t E|X_t|^n`.
#[derive(Debug, Clone)]
pub struct MomentRow {
    pub n: usize,
    /// Estimate of the worst grid-time moment.
    pub estimate: MCEstimate,
    pub bound: f64,
    /// `bound - mean`; positive when the bound holds with margin.
    pub margin: f64,
    pub holds: bool,
}

/// Checks `sup_t E|X_t|^n <= ((3 + (-1)^{n+1}) / 2) n! C^n` for `n <= n_max`.
pub fn moment_bound_check(
    noise: &NoiseKind,
    grid: Grid,
    n_max: usize,
    c: f64,
    m_paths: usize,
    seed: u64,
) -> Result<Vec<MomentRow>> {
    if n_max > 8 {
        return Err(Error::InvalidInput(
            "moment order capped at 8 to keep Monte-Carlo error usable".into(),
        ));
    }
    if c < 4.0 {
        return Err(Error::InvalidInput("bound constant must be at least 4".into()));
    }
    noise.sample(grid, seed, 0)?;
    let per_path: Vec<Vec<f64>> = (0..m_paths as u64)
        .into_par_iter()
        .map(|stream| {
            let x = noise.sample(grid, seed, stream)?;
            // |X_t|^n at every grid time for every n, flattened.
            let mut row = Vec::with_capacity(grid.len() * n_max);
            for idx in 0..grid.len() {
                let v = x.value(idx, 0).abs();
                let mut power = 1.0;
                for _ in 1..=n_max {
                    power *= v;
                    row.push(power);
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut worst: Option<MCEstimate> = None;
        for idx in 0..grid.len() {
            let samples: Vec<f64> = per_path
                .iter()
                .map(|row| row[idx * n_max + (n - 1)])
                .collect();
            let estimate = MCEstimate::from_samples(&samples);
            if worst.map_or(true, |w| estimate.mean > w.mean) {
                worst = Some(estimate);
            }
        }
        let estimate = worst.expect("grid non-empty");
        let parity_factor = (3.0 + (-1.0f64).powi(n as i32 + 1)) / 2.0;
        let factorial: f64 = (1..=n).map(|v| v as f64).product();
        let bound = parity_factor * factorial * c.powi(n as i32);
        rows.push(MomentRow {
            n,
            estimate,
            bound,
            margin: bound - estimate.mean,
            holds: estimate.mean <= bound,
        });
    }
    Ok(rows)
}

/// Sarmanov-type copula: density
/// `phi(x) phi(y) [1 + eps (h(x) g(y) - h(y) g(x))]` with bounded mean-zero
/// perturbations `h, g`.
pub struct SarmanovSpec {
    pub epsilon: f64,
    pub h: fn(f64) -> f64,
    pub g: fn(f64) -> f64,
    pub h_bound: f64,
    pub g_bound: f64,
}

impl std::fmt::Debug for SarmanovSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SarmanovSpec")
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

impl Clone for SarmanovSpec {
    fn clone(&self) -> Self {
        SarmanovSpec {
            epsilon: self.epsilon,
            h: self.h,
            g: self.g,
            h_bound: self.h_bound,
            g_bound: self.g_bound,
        }
    }
}

impl SarmanovSpec {
    /// The documented defaults `h = sin x`, `g = sin 2x`.
    pub fn with_defaults(epsilon: f64) -> Self {
        SarmanovSpec {
            epsilon,
            h: |x| x.sin(),
            g: |x| (2.0 * x).sin(),
            h_bound: 1.0,
            g_bound: 1.0,
        }
    }

    /// Density positivity: `2 |eps| sup|h| sup|g| < 1`.
    pub fn positivity_bound(&self) -> f64 {
        2.0 * self.epsilon.abs() * self.h_bound * self.g_bound
    }
}

/// Minimum admissible acceptance rate for the rejection sampler.
pub const MIN_ACCEPTANCE_RATE: f64 = 0.1;

/// Draws `m` pairs `(X, Y)` from the Sarmanov density by rejection against
/// the independent-normal envelope; deterministic per seed.
pub fn sarmanov_sample(spec: &SarmanovSpec, m: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let bound = spec.positivity_bound();
    if bound >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "density positivity violated: 2|eps| sup|h| sup|g| = {bound} >= 1"
        )));
    }
    let envelope = 1.0 + bound;
    let mut rng = stream_rng(seed, 0);
    let mut pairs = Vec::with_capacity(m);
    let mut proposals = 0usize;
    while pairs.len() < m {
        let x: f64 = rng.sample(rand_distr::StandardNormal);
        let y: f64 = rng.sample(rand_distr::StandardNormal);
        let v: f64 = rng.gen();
        proposals += 1;
        let density_ratio =
            (1.0 + spec.epsilon * ((spec.h)(x) * (spec.g)(y) - (spec.h)(y) * (spec.g)(x)))
                / envelope;
        if v < density_ratio {
            pairs.push((x, y));
        }
        if proposals >= 1_000 && proposals % 1_000 == 0 {
            let rate = pairs.len() as f64 / proposals as f64;
            if rate < MIN_ACCEPTANCE_RATE {
                return Err(Error::LowAcceptanceRate {
                    rate,
                    minimum: MIN_ACCEPTANCE_RATE,
                    proposals,
                });
            }
        }
    }
    Ok(pairs)
}

/// Summary verdicts for a Sarmanov run: marginal and sum normality, the
/// balancing sums, and the exchangeability (joint-Gaussianity) rejection.
#[derive(Debug, Clone)]
pub struct SarmanovReport {
    pub ks_x: f64,
    pub ks_y: f64,
    pub ks_sum: f64,
    pub ks_critical: f64,
    pub marginals_normal: bool,
    pub balancing: Vec<(usize, MCEstimate)>,
    pub balancing_pass: bool,
    pub asymmetry: MCEstimate,
    pub exchangeability_rejected: bool,
}

/// Runs the full Sarmanov diagnosis at significance `1e-3` for the KS tests
/// and four standard errors for the mean tests.
pub fn sarmanov_report(
    spec: &SarmanovSpec,
    m: usize,
    seed: u64,
    n_levels: std::ops::RangeInclusive<usize>,
) -> Result<SarmanovReport> {
    let pairs = sarmanov_sample(spec, m, seed)?;
    let xs: Vec<f64> = pairs.iter().map(|(x, _)| *x).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, y)| *y).collect();
    let sums: Vec<f64> = pairs.iter().map(|(x, y)| x + y).collect();
    let ks_x = ks_statistic_normal(&xs, 1.0);
    let ks_y = ks_statistic_normal(&ys, 1.0);
    let ks_sum = ks_statistic_normal(&sums, 2.0f64.sqrt());
    let ks_critical = ks_critical_value(m, 1e-3);
    let mut balancing = Vec::new();
    let mut balancing_pass = true;
    for n in n_levels {
        let estimate =
            balancing_residual(&BalancingSource::Sarmanov(spec.clone()), n, m, seed)?;
        balancing_pass &= !estimate.rejects_zero_at(REPORT_THRESHOLD_SE);
        balancing.push((n, estimate));
    }
    let asymmetry_samples: Vec<f64> = pairs
        .iter()
        .map(|(x, y)| (spec.h)(*x) * (spec.g)(*y) - (spec.h)(*y) * (spec.g)(*x))
        .collect();
    let asymmetry = MCEstimate::from_samples(&asymmetry_samples);
    Ok(SarmanovReport {
        ks_x,
        ks_y,
        ks_sum,
        ks_critical,
        marginals_normal: ks_x < ks_critical && ks_y < ks_critical && ks_sum < ks_critical,
        balancing,
        balancing_pass,
        asymmetry,
        exchangeability_rejected: asymmetry.rejects_zero_at(REPORT_THRESHOLD_SE),
    })
}
