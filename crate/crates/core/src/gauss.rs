//! Grids, sampled paths, Gaussian path simulators and variance curves.
//!
//! Simulators are pure functions of `(seed, grid)` built on a counter-based
//! generator, so Monte-Carlo workers reproduce bit-identical paths regardless
//! of scheduling. Fractional Brownian motion uses a dense Cholesky factor of
//! the exact covariance, cached per `(grid, hurst)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Cholesky memory bound for exact-covariance fBm simulation.
pub const MAX_CHOLESKY_STEPS: usize = 1 << 14;

/// Uniform grid `t_i = i * T / N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    horizon: f64,
    steps: usize,
}

impl Grid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "grid horizon must be finite and positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidInput("grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `N`; the grid has `N + 1` points.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.horizon / self.steps as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }

    /// Grid point closest to `t`, clamped to `[0, N]`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let raw = (t / self.dt()).round();
        (raw.max(0.0) as usize).min(self.steps)
    }
}

/// A `d`-dimensional path sampled on a uniform grid, stored row-major as
/// `(N + 1) x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    grid: Grid,
    dim: usize,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn new(grid: Grid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("path dimension must be positive".into()));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::Dimension {
                expected: grid.len() * dim,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("path contains non-finite samples".into()));
        }
        Ok(Self { grid, dim, values })
    }

    /// One-dimensional path from raw samples.
    pub fn scalar(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    /// Samples a scalar function of time on the grid.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.times().map(f).collect();
        Self {
            grid,
            dim: 1,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, index: usize, coord: usize) -> f64 {
        self.values[index * self.dim + coord]
    }

    /// All samples of one coordinate.
    pub fn coord(&self, coord: usize) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.value(i, coord)).collect()
    }

    /// Scalar samples; panics unless `dim == 1`.
    pub fn scalar_values(&self) -> &[f64] {
        assert_eq!(self.dim, 1, "scalar_values requires a one-dimensional path");
        &self.values
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn increment(&self, s: usize, t: usize, coord: usize) -> f64 {
        self.value(t, coord) - self.value(s, coord)
    }

    /// Stacks scalar paths on a common grid into one multi-dimensional path.
    pub fn stack(paths: &[SampledPath]) -> Result<SampledPath> {
        let grid = *paths
            .first()
            .ok_or_else(|| Error::InvalidInput("stack of zero paths".into()))?
            .grid();
        let dim = paths.len();
        let mut values = Vec::with_capacity(grid.len() * dim);
        for i in 0..grid.len() {
            for p in paths {
                if p.grid() != &grid {
                    return Err(Error::InvalidInput("stacked paths on different grids".into()));
                }
                if p.dim() != 1 {
                    return Err(Error::InvalidInput("stack expects scalar paths".into()));
                }
                values.push(p.value(i, 0));
            }
        }
        SampledPath::new(grid, dim, values)
    }
}

/// Analytic families for the marginal variance curve `t -> Var(X_t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum VarianceKind {
    Bm,
    Fbm { hurst: f64 },
    Ou { theta: f64, sigma: f64 },
    Tabulated,
}

/// Marginal variance of a centred Gaussian process sampled on a grid.
#[derive(Debug, Clone)]
pub struct VarianceFunction {
    pub kind: VarianceKind,
    grid: Grid,
    samples: Vec<f64>,
    monotone: bool,
}

impl VarianceFunction {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn value(&self, index: usize) -> f64 {
        self.samples[index]
    }

    /// True when the sampled curve is non-decreasing (clock-eligible).
    pub fn is_monotone(&self) -> bool {
        self.monotone
    }
}

/// Samples the variance curve of an analytic kind on a grid.
pub fn variance_fn(kind: VarianceKind, grid: Grid) -> Result<VarianceFunction> {
    let samples: Vec<f64> = match &kind {
        VarianceKind::Bm => grid.times().collect(),
        VarianceKind::Fbm { hurst } => {
            if !(*hurst > 0.0 && *hurst < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "hurst must lie in (0, 1), got {hurst}"
                )));
            }
            grid.times().map(|t| t.powf(2.0 * hurst)).collect()
        }
        VarianceKind::Ou { theta, sigma } => {
            if !(*theta > 0.0) || !(*sigma > 0.0) {
                return Err(Error::InvalidInput(
                    "OU parameters must be positive".into(),
                ));
            }
            grid.times()
                .map(|t| sigma * sigma * (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta))
                .collect()
        }
        VarianceKind::Tabulated => {
            return Err(Error::InvalidInput(
                "tabulated variance requires variance_from_samples".into(),
            ))
        }
    };
    build_variance(kind, grid, samples)
}

/// Wraps a tabulated variance curve, validating positivity and `Var(0) = 0`.
pub fn variance_from_samples(grid: Grid, samples: Vec<f64>) -> Result<VarianceFunction> {
    if samples.len() != grid.len() {
        return Err(Error::Dimension {
            expected: grid.len(),
            got: samples.len(),
        });
    }
    build_variance(VarianceKind::Tabulated, grid, samples)
}

fn build_variance(kind: VarianceKind, grid: Grid, samples: Vec<f64>) -> Result<VarianceFunction> {
    if samples.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput(
            "variance curve must be finite and non-negative".into(),
        ));
    }
    if samples[0] != 0.0 {
        return Err(Error::InvalidInput(format!(
            "Var(0) must vanish, got {}",
            samples[0]
        )));
    }
    let monotone = samples.windows(2).all(|w| w[1] >= w[0]);
    Ok(VarianceFunction {
        kind,
        grid,
        samples,
        monotone,
    })
}

/// Counter-based generator for path `stream` of a run with master `seed`.
/// Streams are independent and reproducible regardless of scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One standard Brownian path from independent `N(0, dt)` increments.
pub fn simulate_bm(grid: Grid, seed: u64) -> SampledPath {
    simulate_bm_stream(grid, seed, 0)
}

/// Brownian path on stream `stream` of master seed `seed`.
pub fn simulate_bm_stream(grid: Grid, seed: u64, stream: u64) -> SampledPath {
    let mut rng = stream_rng(seed, stream);
    let sqrt_dt = grid.dt().sqrt();
    let mut values = Vec::with_capacity(grid.len());
    values.push(0.0);
    let mut x = 0.0;
    for _ in 0..grid.steps() {
        let z: f64 = rng.sample(StandardNormal);
        x += sqrt_dt * z;
        values.push(x);
    }
    SampledPath {
        grid,
        dim: 1,
        values,
    }
}

/// Exact fBm covariance `R(s, t) = (s^2H + t^2H - |t - s|^2H) / 2`.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (s.powf(h2) + t.powf(h2) - (t - s).abs().powf(h2))
}

/// Lower-triangular Cholesky factor of the fBm covariance on the grid
/// interior `t_1..t_N`, stored packed row-major.
#[derive(Debug)]
pub struct FbmFactor {
    steps: usize,
    /// Packed rows: row i occupies entries `i (i + 1) / 2 .. i (i + 1) / 2 + i + 1`.
    lower: Vec<f64>,
}

impl FbmFactor {
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.lower[start..start + i + 1]
    }

    /// Path sample `L z` prefixed with the zero start value.
    pub fn sample(&self, normals: &[f64]) -> Vec<f64> {
        assert_eq!(normals.len(), self.steps);
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(0.0);
        for i in 0..self.steps {
            let row = self.row(i);
            let mut acc = 0.0;
            for (l, z) in row.iter().zip(normals.iter()) {
                acc += l * z;
            }
            out.push(acc);
        }
        out
    }
}

const CHOLESKY_JITTER: f64 = 1e-12;

/// Packed Cholesky with one bounded jitter retry.
///
/// `matrix` is the dense symmetric input, row-major `n x n`; columns are
/// processed left to right with the row dot-products parallelised.
fn packed_cholesky(matrix: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut attempt_jitter = 0.0;
    loop {
        match try_packed_cholesky(matrix, n, attempt_jitter) {
            Ok(lower) => return Ok(lower),
            Err(err) => {
                if attempt_jitter == 0.0 {
                    attempt_jitter = CHOLESKY_JITTER;
                } else {
                    return Err(err);
                }
            }
        }
    }
}

fn try_packed_cholesky(matrix: &[f64], n: usize, jitter: f64) -> Result<Vec<f64>> {
    let mut lower = vec![0.0f64; n * (n + 1) / 2];
    let row_start = |i: usize| i * (i + 1) / 2;
    for j in 0..n {
        let start_j = row_start(j);
        let mut diag = matrix[j * n + j] + jitter;
        for k in 0..j {
            let v = lower[start_j + k];
            diag -= v * v;
        }
        if diag <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                diagonal: diag,
                jitter,
            });
        }
        let pivot = diag.sqrt();
        lower[start_j + j] = pivot;
        // Column below the pivot: row i only reads its own prefix and row j,
        // so the remaining rows update independently.
        let (head, tail) = lower.split_at_mut(row_start(j + 1));
        let row_j = &head[start_j..start_j + j];
        let rows: Vec<(usize, &mut [f64])> = {
            let mut rows = Vec::with_capacity(n - j - 1);
            let mut rest = tail;
            for i in (j + 1)..n {
                let (row, next) = rest.split_at_mut(i + 1);
                rows.push((i, row));
                rest = next;
            }
            rows
        };
        rows.into_par_iter().for_each(|(i, row)| {
            let mut acc = matrix[i * n + j];
            for (a, b) in row[..j].iter().zip(row_j.iter()) {
                acc -= a * b;
            }
            row[j] = acc / pivot;
        });
    }
    Ok(lower)
}

#[derive(PartialEq, Eq, Hash, Clone, Copy)]
struct FbmKey {
    horizon_bits: u64,
    steps: usize,
    hurst_bits: u64,
}

fn fbm_cache() -> &'static Mutex<HashMap<FbmKey, Arc<FbmFactor>>> {
    static CACHE: OnceLock<Mutex<HashMap<FbmKey, Arc<FbmFactor>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cholesky factor for fBm on `grid` with the given Hurst index, cached per
/// `(grid, hurst)`; initialisation is guarded so concurrent callers share one
/// factorisation.
pub fn fbm_factor(grid: Grid, hurst: f64) -> Result<Arc<FbmFactor>> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidInput(format!(
            "hurst must lie in (0, 1), got {hurst}"
        )));
    }
    if grid.steps() > MAX_CHOLESKY_STEPS {
        return Err(Error::InvalidInput(format!(
            "fBm simulation limited to {MAX_CHOLESKY_STEPS} steps, got {}",
            grid.steps()
        )));
    }
    let key = FbmKey {
        horizon_bits: grid.horizon().to_bits(),
        steps: grid.steps(),
        hurst_bits: hurst.to_bits(),
    };
    if let Some(found) = fbm_cache().lock().expect("fbm cache poisoned").get(&key) {
        return Ok(found.clone());
    }
    let n = grid.steps();
    let mut cov = vec![0.0f64; n * n];
    for i in 0..n {
        let ti = grid.time(i + 1);
        for j in 0..=i {
            let tj = grid.time(j + 1);
            let c = fbm_covariance(tj, ti, hurst);
            cov[i * n + j] = c;
            cov[j * n + i] = c;
        }
    }
    let lower = packed_cholesky(&cov, n)?;
    let factor = Arc::new(FbmFactor { steps: n, lower });
    let mut guard = fbm_cache().lock().expect("fbm cache poisoned");
    Ok(guard.entry(key).or_insert(factor).clone())
}

/// One fractional Brownian path with exact covariance via Cholesky.
pub fn simulate_fbm(grid: Grid, hurst: f64, seed: u64) -> Result<SampledPath> {
    simulate_fbm_stream(grid, hurst, seed, 0)
}

/// fBm path on stream `stream`; the factor is shared across streams.
pub fn simulate_fbm_stream(grid: Grid, hurst: f64, seed: u64, stream: u64) -> Result<SampledPath> {
    let factor = fbm_factor(grid, hurst)?;
    Ok(sample_fbm_with_factor(&factor, grid, seed, stream))
}

/// Samples one path from a pre-built factor (hot Monte-Carlo loop entry).
pub fn sample_fbm_with_factor(
    factor: &FbmFactor,
    grid: Grid,
    seed: u64,
    stream: u64,
) -> SampledPath {
    let mut rng = stream_rng(seed, stream);
    let normals: Vec<f64> = (0..grid.steps())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    SampledPath {
        grid,
        dim: 1,
        values: factor.sample(&normals),
    }
}

/// One Ornstein-Uhlenbeck path started at zero via exact transition sampling.
pub fn simulate_ou(grid: Grid, theta: f64, sigma: f64, seed: u64) -> Result<SampledPath> {
    simulate_ou_stream(grid, theta, sigma, seed, 0)
}

pub fn simulate_ou_stream(
    grid: Grid,
    theta: f64,
    sigma: f64,
    seed: u64,
    stream: u64,
) -> Result<SampledPath> {
    if !(theta > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidInput("OU parameters must be positive".into()));
    }
    let mut rng = stream_rng(seed, stream);
    let dt = grid.dt();
    let decay = (-theta * dt).exp();
    let step_std = (sigma * sigma * (1.0 - (-2.0 * theta * dt).exp()) / (2.0 * theta)).sqrt();
    let mut values = Vec::with_capacity(grid.len());
    values.push(0.0);
    let mut x = 0.0;
    for _ in 0..grid.steps() {
        let z: f64 = rng.sample(StandardNormal);
        x = decay * x + step_std * z;
        values.push(x);
    }
    Ok(SampledPath {
        grid,
        dim: 1,
        values,
    })
}

/// Result of a nearest-grid-point time change: the resampled path and the
/// worst rounding error committed when snapping clock values to the grid.
#[derive(Debug, Clone)]
pub struct TimeChangedPath {
    pub path: SampledPath,
    pub max_rounding_error: f64,
    /// Source-grid index chosen for each new grid point.
    pub source_indices: Vec<usize>,
}

/// Resamples `path` through a non-decreasing clock on `[0, T']`.
///
/// The clock must start at zero and stay within the source horizon; values
/// are snapped to the nearest source grid point (interpolation would alter
/// the Hölder structure) and the worst snap distance is reported.
pub fn deterministic_time_change(
    path: &SampledPath,
    new_grid: Grid,
    clock: impl Fn(f64) -> f64,
) -> Result<TimeChangedPath> {
    let source = path.grid();
    let tol = 1e-9 * source.horizon().max(1.0);
    let mut previous = 0.0;
    let mut max_err = 0.0f64;
    let mut indices = Vec::with_capacity(new_grid.len());
    let mut values = Vec::with_capacity(new_grid.len() * path.dim());
    let c0 = clock(0.0);
    if c0.abs() > tol {
        return Err(Error::InvalidInput(format!(
            "clock(0) must vanish, got {c0}"
        )));
    }
    for t in new_grid.times() {
        let c = clock(t);
        if c < previous - tol {
            return Err(Error::InvalidInput(format!(
                "clock decreases at t = {t}"
            )));
        }
        if c > source.horizon() + tol {
            return Err(Error::InvalidInput(format!(
                "clock value {c} exceeds source horizon {}",
                source.horizon()
            )));
        }
        previous = c;
        let idx = source.nearest_index(c);
        max_err = max_err.max((source.time(idx) - c).abs());
        indices.push(idx);
        for coord in 0..path.dim() {
            values.push(path.value(idx, coord));
        }
    }
    Ok(TimeChangedPath {
        path: SampledPath::new(new_grid, path.dim(), values)?,
        max_rounding_error: max_err,
        source_indices: indices,
    })
}

/// Kolmogorov-Smirnov statistic of `samples` against `N(0, sigma^2)`.
pub fn ks_statistic_normal(samples: &[f64], sigma: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let normal = Normal::new(0.0, sigma).expect("valid normal");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let cdf = normal.cdf(*x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    d
}

/// Asymptotic Kolmogorov-Smirnov critical value at significance `alpha`.
pub fn ks_critical_value(n_samples: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / 2.0).sqrt() / (n_samples as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basics() {
        let grid = Grid::new(2.0, 4).unwrap();
        assert_eq!(grid.len(), 5);
        assert_eq!(grid.time(0), 0.0);
        assert_eq!(grid.time(4), 2.0);
        assert_eq!(grid.dt(), 0.5);
        assert_eq!(grid.nearest_index(1.26), 3);
        assert!(Grid::new(0.0, 4).is_err());
        assert!(Grid::new(1.0, 0).is_err());
    }

    #[test]
    fn bm_starts_at_zero_and_is_deterministic() {
        let grid = Grid::new(1.0, 1 << 8).unwrap();
        let a = simulate_bm(grid, 7);
        let b = simulate_bm(grid, 7);
        assert_eq!(a.scalar_values()[0], 0.0);
        assert_eq!(a.scalar_values(), b.scalar_values());
        let c = simulate_bm(grid, 8);
        assert_ne!(a.scalar_values(), c.scalar_values());
    }

    #[test]
    fn bm_terminal_variance_matches_horizon() {
        let grid = Grid::new(1.0, 1 << 10).unwrap();
        let n_paths = 10_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n_paths {
            let x = simulate_bm_stream(grid, 99, i as u64);
            let v = *x.scalar_values().last().unwrap();
            sum += v;
            sum_sq += v * v;
        }
        let n = n_paths as f64;
        let mean = sum / n;
        let var = sum_sq / n - mean * mean;
        // Var of the sample variance of N(0,1) is about 2/n.
        let se = (2.0 / n).sqrt();
        assert!(
            (var - 1.0).abs() <= 5.0 * se,
            "sample variance {var} vs 1.0 (5 SE = {})",
            5.0 * se
        );
    }

    #[test]
    fn fbm_half_matches_brownian_covariance() {
        assert!((fbm_covariance(0.3, 0.8, 0.5) - 0.3).abs() < 1e-14);
        let grid = Grid::new(1.0, 64).unwrap();
        let x = simulate_fbm(grid, 0.5, 3).unwrap();
        assert_eq!(x.scalar_values().len(), 65);
        assert_eq!(x.scalar_values()[0], 0.0);
    }

    #[test]
    fn fbm_disjoint_increment_covariance_tracks_analytic_value() {
        // E[X_{0,1} X_{1,2}] = (2^{2H} - 2) / 2 for fBm; H = 0.7 gives 0.3195.
        let hurst = 0.7;
        let grid = Grid::new(2.0, 2).unwrap();
        let factor = fbm_factor(grid, hurst).unwrap();
        let n_paths = 100_000usize;
        let products: Vec<f64> = (0..n_paths)
            .map(|i| {
                let p = sample_fbm_with_factor(&factor, grid, 11, i as u64);
                let v = p.scalar_values();
                (v[1] - v[0]) * (v[2] - v[1])
            })
            .collect();
        let n = n_paths as f64;
        let mean = products.iter().sum::<f64>() / n;
        let var = products.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let expected = 0.5 * (2f64.powf(2.0 * hurst) - 2.0);
        assert!((expected - 0.3195).abs() < 1e-3);
        assert!(
            (mean - expected).abs() <= 5.0 * se,
            "mean {mean} vs {expected} (5 SE = {})",
            5.0 * se
        );
    }

    #[test]
    fn fbm_pointwise_variance_tracks_power_law() {
        let hurst = 0.4;
        let grid = Grid::new(1.0, 16).unwrap();
        let factor = fbm_factor(grid, hurst).unwrap();
        let n_paths = 100_000usize;
        let mut sums = vec![0.0f64; grid.len()];
        let mut sums_sq = vec![0.0f64; grid.len()];
        for i in 0..n_paths {
            let p = sample_fbm_with_factor(&factor, grid, 4, i as u64);
            for (j, v) in p.scalar_values().iter().enumerate() {
                let sq = v * v;
                sums[j] += sq;
                sums_sq[j] += sq * sq;
            }
        }
        let n = n_paths as f64;
        for j in 1..grid.len() {
            let mean = sums[j] / n;
            let var = sums_sq[j] / n - mean * mean;
            let se = (var / n).sqrt();
            let expected = grid.time(j).powf(2.0 * hurst);
            assert!(
                (mean - expected).abs() <= 5.0 * se,
                "t={}: sample var {mean} vs {expected}",
                grid.time(j)
            );
        }
    }

    #[test]
    fn variance_curves() {
        let grid = Grid::new(1.0, 10).unwrap();
        let bm = variance_fn(VarianceKind::Bm, grid).unwrap();
        assert!((bm.value(10) - 1.0).abs() < 1e-15);
        assert!(bm.is_monotone());

        let fbm = variance_fn(VarianceKind::Fbm { hurst: 0.3 }, grid).unwrap();
        assert!((fbm.value(10) - 1.0).abs() < 1e-14);
        assert!((fbm.value(5) - 0.5f64.powf(0.6)).abs() < 1e-14);
        assert!((fbm.value(5) - 0.6598).abs() < 1e-4);

        let ou = variance_fn(
            VarianceKind::Ou {
                theta: 1.0,
                sigma: 1.0,
            },
            grid,
        )
        .unwrap();
        assert!((ou.value(10) - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-14);

        assert!(variance_from_samples(grid, vec![0.0; 3]).is_err());
        assert!(variance_from_samples(grid, vec![-1.0; 11]).is_err());
        let mut tab = vec![0.0; 11];
        tab[0] = 0.5;
        assert!(variance_from_samples(grid, tab).is_err());
    }

    #[test]
    fn identity_clock_keeps_path() {
        let grid = Grid::new(1.0, 32).unwrap();
        let x = simulate_bm(grid, 5);
        let tc = deterministic_time_change(&x, grid, |t| t).unwrap();
        assert_eq!(tc.path.scalar_values(), x.scalar_values());
        assert!(tc.max_rounding_error < 1e-12);
    }

    #[test]
    fn constant_clock_freezes_path() {
        let grid = Grid::new(1.0, 32).unwrap();
        let x = simulate_bm(grid, 5);
        let new_grid = Grid::new(0.5, 16).unwrap();
        let tc =
            deterministic_time_change(&x, new_grid, |t| if t < 0.25 { t } else { 0.25 }).unwrap();
        let frozen = x.value(grid.nearest_index(0.25), 0);
        for i in 8..=16 {
            assert_eq!(tc.path.value(i, 0), frozen);
        }
    }

    #[test]
    fn clock_beyond_horizon_rejected() {
        let grid = Grid::new(1.0, 8).unwrap();
        let x = simulate_bm(grid, 5);
        let err = deterministic_time_change(&x, grid, |t| 2.0 * t);
        assert!(err.is_err());
    }

    #[test]
    fn halved_clock_halves_bm_variance() {
        // X̃_t = X_{t/2} on T' = 2 has Var(X̃_t) = t / 2.
        let source = Grid::new(1.0, 1 << 8).unwrap();
        let new_grid = Grid::new(2.0, 1 << 8).unwrap();
        let n_paths = 20_000usize;
        let probe = new_grid.len() / 2;
        let mut sum_sq = 0.0;
        for i in 0..n_paths {
            let x = simulate_bm_stream(source, 31, i as u64);
            let tc = deterministic_time_change(&x, new_grid, |t| t / 2.0).unwrap();
            let v = tc.path.value(probe, 0);
            sum_sq += v * v;
        }
        let var = sum_sq / n_paths as f64;
        let expected = new_grid.time(probe) / 2.0;
        let se = expected * (2.0 / n_paths as f64).sqrt();
        assert!((var - expected).abs() <= 5.0 * se);
    }

    #[test]
    fn marginal_gaussianity_by_kolmogorov_smirnov() {
        let grid = Grid::new(1.0, 64).unwrap();
        let n_paths = 10_000usize;
        let crit = ks_critical_value(n_paths, 1e-3);

        let terminal_bm: Vec<f64> = (0..n_paths)
            .map(|i| *simulate_bm_stream(grid, 17, i as u64).scalar_values().last().unwrap())
            .collect();
        assert!(ks_statistic_normal(&terminal_bm, 1.0) < crit);

        let hurst = 0.4;
        let factor = fbm_factor(grid, hurst).unwrap();
        let terminal_fbm: Vec<f64> = (0..n_paths)
            .map(|i| {
                *sample_fbm_with_factor(&factor, grid, 18, i as u64)
                    .scalar_values()
                    .last()
                    .unwrap()
            })
            .collect();
        assert!(ks_statistic_normal(&terminal_fbm, 1.0) < crit);

        let ou_sigma = ((1.0 - (-2.0f64).exp()) / 2.0).sqrt();
        let terminal_ou: Vec<f64> = (0..n_paths)
            .map(|i| {
                *simulate_ou_stream(grid, 1.0, 1.0, 19, i as u64)
                    .unwrap()
                    .scalar_values()
                    .last()
                    .unwrap()
            })
            .collect();
        assert!(ks_statistic_normal(&terminal_ou, ou_sigma) < crit);
    }

    #[test]
    fn seed_determinism_across_simulators() {
        let grid = Grid::new(1.0, 128).unwrap();
        let a = simulate_fbm(grid, 0.4, 123).unwrap();
        let b = simulate_fbm(grid, 0.4, 123).unwrap();
        assert_eq!(a.scalar_values(), b.scalar_values());
        let c = simulate_ou(grid, 1.0, 1.0, 123).unwrap();
        let d = simulate_ou(grid, 1.0, 1.0, 123).unwrap();
        assert_eq!(c.scalar_values(), d.scalar_values());
    }

    #[test]
    fn holder_sanity_for_fbm() {
        // Empirical Hölder coefficient sup |X_{s,t}| / (t-s)^gamma on nested
        // refinements of the same path: keeps growing at gamma = H + 0.05,
        // stabilises at gamma = H - 0.05.
        let hurst = 0.4;
        let fine = Grid::new(1.0, 1 << 12).unwrap();
        let factor = fbm_factor(fine, hurst).unwrap();
        let holder = |values: &[f64], grid: &Grid, gamma: f64, stride: usize| -> f64 {
            let n = grid.steps();
            let mut sup: f64 = 0.0;
            let idx: Vec<usize> = (0..=n).step_by(stride).collect();
            for (a, &s) in idx.iter().enumerate() {
                for &t in idx.iter().skip(a + 1) {
                    let dt = grid.time(t) - grid.time(s);
                    sup = sup.max((values[t] - values[s]).abs() / dt.powf(gamma));
                }
            }
            sup
        };
        let n_paths = 8;
        let mut ratio_hi = 0.0;
        let mut ratio_lo = 0.0;
        for i in 0..n_paths {
            let path = sample_fbm_with_factor(&factor, fine, 77, i as u64);
            let v = path.scalar_values();
            for (gamma, ratio) in [(hurst + 0.05, &mut ratio_hi), (hurst - 0.05, &mut ratio_lo)] {
                let coarse = holder(v, &fine, gamma, 16);
                let fine_sup = holder(v, &fine, gamma, 1);
                *ratio += fine_sup / coarse / n_paths as f64;
            }
        }
        assert!(
            ratio_hi > ratio_lo + 0.05,
            "H+0.05 ratio {ratio_hi} should exceed H-0.05 ratio {ratio_lo}"
        );
        assert!(ratio_lo < 1.35, "H-0.05 coefficient should stabilise, ratio {ratio_lo}");
        assert!(ratio_hi > 1.3, "H+0.05 coefficient should diverge, ratio {ratio_hi}");
    }
}
