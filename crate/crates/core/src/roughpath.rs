//! Construction, classification and validation of rough paths.
//!
//! A one-dimensional rough path is stored as its base path plus
//! renormalisation terms `G^2..G^k`; every level on every interval is a
//! complete Bell polynomial of the corresponding increments, so Chen's
//! relation holds by construction and levels never need `O(N^2)` storage.
//! Multi-dimensional level-2 paths store one increment matrix per finest
//! interval and compose through Chen's relation on demand.

use rand::Rng;

use crate::bell::{bell_eval, bell_terms};
use crate::error::{Error, Result};
use crate::gauss::{Grid, SampledPath, VarianceFunction};

/// `k = floor(1 / alpha)`, the level count of an alpha-Hölder rough path.
pub fn level_count_for(alpha: f64) -> usize {
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
    ((1.0 / alpha) + 1e-9).floor() as usize
}

/// Renormalisation terms `G^2, ..., G^k` sampled on a grid.
#[derive(Debug, Clone)]
pub struct RenormTerms {
    grid: Grid,
    /// `paths[j]` holds `G^{j+2}`.
    paths: Vec<Vec<f64>>,
    /// Whether the terms are deterministic functions (as opposed to
    /// path-dependent samples); consumers only flag on this, never reject.
    pub deterministic: bool,
}

impl RenormTerms {
    pub fn new(grid: Grid, paths: Vec<Vec<f64>>, deterministic: bool) -> Result<Self> {
        for (j, p) in paths.iter().enumerate() {
            if p.len() != grid.len() {
                return Err(Error::Dimension {
                    expected: grid.len(),
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("G^{} has non-finite samples", j + 2)));
            }
            if p[0] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "G^{}(0) must vanish, got {}",
                    j + 2,
                    p[0]
                )));
            }
        }
        Ok(Self {
            grid,
            paths,
            deterministic,
        })
    }

    /// All-zero terms for levels `2..=k` (the geometric choice).
    pub fn zero(grid: Grid, k: usize) -> Self {
        Self {
            grid,
            paths: vec![vec![0.0; grid.len()]; k.saturating_sub(1)],
            deterministic: true,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of stored terms, i.e. `k - 1` for a level-`k` path.
    pub fn count(&self) -> usize {
        self.paths.len()
    }

    /// Sample of `G^level` (`level` in `2..=k`) at a grid index.
    pub fn value(&self, level: usize, index: usize) -> f64 {
        self.paths[level - 2][index]
    }

    pub fn increment(&self, level: usize, s: usize, t: usize) -> f64 {
        self.paths[level - 2][t] - self.paths[level - 2][s]
    }

    pub fn samples(&self, level: usize) -> &[f64] {
        &self.paths[level - 2]
    }

    /// Total variation of `G^level` on the grid.
    pub fn total_variation(&self, level: usize) -> f64 {
        self.paths[level - 2]
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .sum()
    }
}

/// Read access to the levels of a one-dimensional rough path on a grid.
///
/// Arguments of [`LevelAccessor::level`] are grid indices; level 0 is the
/// constant 1 and level 1 the path increment.
pub trait LevelAccessor {
    fn grid(&self) -> &Grid;
    /// Highest stored level `k`.
    fn level_count(&self) -> usize;
    fn level(&self, i: usize, s: usize, t: usize) -> f64;
}

/// A one-dimensional rough path in Bell-polynomial representation.
#[derive(Debug, Clone)]
pub struct RoughPath1D {
    x: SampledPath,
    renorm: RenormTerms,
    alpha: f64,
    k: usize,
}

impl RoughPath1D {
    pub fn x(&self) -> &SampledPath {
        &self.x
    }

    pub fn renorm(&self) -> &RenormTerms {
        &self.renorm
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &Grid {
        self.x.grid()
    }

    fn level_args(&self, width: usize, s: usize, t: usize) -> Vec<f64> {
        let mut args = vec![0.0; width];
        args[0] = self.x.increment(s, t, 0);
        for level in 2..=self.k.min(width) {
            args[level - 1] = self.renorm.increment(level, s, t);
        }
        args
    }

    /// Level `n` beyond `k` through the canonical signature extension: the
    /// same Bell formula with zero renormalisation above level `k`.
    pub fn level_ext(&self, n: usize, s: usize, t: usize) -> f64 {
        if n == 0 {
            return 1.0;
        }
        if n == 1 {
            return self.x.increment(s, t, 0);
        }
        let width = self.k.max(n);
        let args = self.level_args(width, s, t);
        bell_eval(width, n, &args).expect("argument width matches by construction")
    }
}

impl LevelAccessor for RoughPath1D {
    fn grid(&self) -> &Grid {
        self.x.grid()
    }

    fn level_count(&self) -> usize {
        self.k
    }

    fn level(&self, i: usize, s: usize, t: usize) -> f64 {
        assert!(i <= self.k, "level {i} exceeds k = {}", self.k);
        self.level_ext(i, s, t)
    }
}

/// Builds the rough path with prescribed renormalisation terms:
/// level `i` on `[s, t]` is `P^(k)_i(X_{s,t}, G^2_{s,t}, ..., G^k_{s,t})`.
pub fn lift_from_renorm(x: SampledPath, renorm: RenormTerms, alpha: f64) -> Result<RoughPath1D> {
    if x.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: x.dim(),
        });
    }
    let k = level_count_for(alpha);
    if renorm.count() != k - 1 {
        return Err(Error::InvalidInput(format!(
            "alpha = {alpha} needs renormalisation levels 2..={k}, got {} terms",
            renorm.count() + 1
        )));
    }
    if renorm.grid() != x.grid() {
        return Err(Error::InvalidInput(
            "renormalisation terms sampled on a different grid".into(),
        ));
    }
    // Touch the Bell cache up front so level evaluation never contends.
    for n in 0..=k {
        let _ = bell_terms(k, n);
    }
    Ok(RoughPath1D {
        x,
        renorm,
        alpha,
        k,
    })
}

/// The geometric lift `X^i_{s,t} = (X_t - X_s)^i / i!`.
pub fn geometric_lift(x: SampledPath, alpha: f64) -> Result<RoughPath1D> {
    let k = level_count_for(alpha);
    let zero = RenormTerms::zero(*x.grid(), k);
    lift_from_renorm(x, zero, alpha)
}

/// The Hermite lift of a process with marginal variance `v`:
/// `G^2 = -v/2`, higher terms zero, so level `n` is `H_n(X_{s,t}, G_{s,t})`.
pub fn hermite_lift(x: SampledPath, v: &VarianceFunction, alpha: f64) -> Result<RoughPath1D> {
    if v.grid() != x.grid() {
        return Err(Error::InvalidInput(
            "variance curve sampled on a different grid".into(),
        ));
    }
    let k = level_count_for(alpha);
    let mut paths = vec![vec![0.0; x.grid().len()]; k - 1];
    for (i, sample) in v.samples().iter().enumerate() {
        paths[0][i] = -0.5 * sample;
    }
    let renorm = RenormTerms::new(*x.grid(), paths, true)?;
    lift_from_renorm(x, renorm, alpha)
}

/// Worst Chen defect found by sampling grid triples.
#[derive(Debug, Clone, Copy)]
pub struct ChenReport {
    pub max_residual: f64,
    /// Largest level magnitude met while sampling, for relative tolerances.
    pub scale: f64,
    pub worst: (usize, usize, usize),
}

/// Maximum absolute Chen residual
/// `|X^i_{s,t} - sum_j X^j_{s,u} X^{i-j}_{u,t}|`
/// over `sample_triples` random grid triples, across all levels.
pub fn chen_residual(levels: &dyn LevelAccessor, sample_triples: usize, seed: u64) -> f64 {
    chen_report(levels, sample_triples, seed).max_residual
}

pub fn chen_report(levels: &dyn LevelAccessor, sample_triples: usize, seed: u64) -> ChenReport {
    let mut rng = crate::gauss::stream_rng(seed, 0);
    let n = levels.grid().steps();
    let k = levels.level_count();
    let mut report = ChenReport {
        max_residual: 0.0,
        scale: 1.0,
        worst: (0, 0, 0),
    };
    for _ in 0..sample_triples {
        let mut idx = [
            rng.gen_range(0..=n),
            rng.gen_range(0..=n),
            rng.gen_range(0..=n),
        ];
        idx.sort_unstable();
        let (s, u, t) = (idx[0], idx[1], idx[2]);
        for i in 1..=k {
            let direct = levels.level(i, s, t);
            let mut composed = 0.0;
            for j in 0..=i {
                composed += levels.level(j, s, u) * levels.level(i - j, u, t);
            }
            let residual = (direct - composed).abs();
            report.scale = report.scale.max(direct.abs());
            if residual > report.max_residual {
                report.max_residual = residual;
                report.worst = (s, u, t);
            }
        }
    }
    report
}

/// Recovers the renormalisation terms `F^2, ..., F^k` encoded in any level
/// accessor by ascending-level recursion:
/// `F^j(t) = Y^j_{0,t} - P~^(k)_j(Y_{0,t}, F^2_{0,t}, ..., F^{j-1}_{0,t}, 0, ..)`.
///
/// The input must satisfy Chen's relation within `1e-8` relative tolerance,
/// checked on sampled triples; a violation is rejected with the worst triple.
pub fn extract_renorm(levels: &dyn LevelAccessor, alpha: f64) -> Result<RenormTerms> {
    let k = level_count_for(alpha);
    if levels.level_count() < k {
        return Err(Error::InvalidInput(format!(
            "accessor stores {} levels, alpha = {alpha} needs {k}",
            levels.level_count()
        )));
    }
    let report = chen_report(levels, 2_000, 0x5eed_c4e2);
    let tolerance = 1e-8 * report.scale.max(1.0);
    if report.max_residual > tolerance {
        return Err(Error::ChenViolation {
            residual: report.max_residual,
            s: report.worst.0,
            u: report.worst.1,
            t: report.worst.2,
            tolerance,
        });
    }
    let grid = *levels.grid();
    let len = grid.len();
    let mut recovered: Vec<Vec<f64>> = Vec::with_capacity(k - 1);
    let mut args = vec![0.0; k];
    for j in 2..=k {
        let mut f_j = vec![0.0; len];
        for (m, slot) in f_j.iter_mut().enumerate() {
            args[0] = levels.level(1, 0, m);
            for lower in 2..j {
                args[lower - 1] = recovered[lower - 2][m];
            }
            for upper in j..=k {
                args[upper - 1] = 0.0;
            }
            // P~_j drops the pure a_j monomial, so evaluating with a_j = 0
            // computes it exactly.
            *slot = levels.level(j, 0, m) - bell_eval(k, j, &args)?;
        }
        recovered.push(f_j);
    }
    RenormTerms::new(grid, recovered, false)
}

/// `sup |value(s, t)| / (t - s)^gamma` over all grid pairs `s < t`.
pub fn holder_constant(grid: &Grid, gamma: f64, value: impl Fn(usize, usize) -> f64) -> f64 {
    holder_constant_strided(grid, gamma, 1, value)
}

/// Strided variant for large grids: pairs drawn from every `stride`-th point.
pub fn holder_constant_strided(
    grid: &Grid,
    gamma: f64,
    stride: usize,
    value: impl Fn(usize, usize) -> f64,
) -> f64 {
    assert!(gamma > 0.0, "holder exponent must be positive");
    let n = grid.steps();
    let idx: Vec<usize> = (0..=n).step_by(stride.max(1)).collect();
    let mut sup: f64 = 0.0;
    for (a, &s) in idx.iter().enumerate() {
        for &t in idx.iter().skip(a + 1) {
            let dt = grid.time(t) - grid.time(s);
            sup = sup.max(value(s, t).abs() / dt.powf(gamma));
        }
    }
    sup
}

/// Lift scheme tags for level-2 multi-dimensional rough paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Ito,
    Stratonovich,
    Young,
    Hermite,
}

/// A `d`-dimensional level-2 rough path: the base path plus one level-2
/// increment matrix per finest grid interval. Increments over arbitrary
/// index pairs compose through Chen's relation, so memory stays `O(N d^2)`
/// and the relation holds exactly by construction.
#[derive(Debug, Clone)]
pub struct RoughPathL2 {
    x: SampledPath,
    /// Row-major `steps x d x d`; entry `(i, j)` of interval `m` postulates
    /// the iterated integral of `dX^i dX^j` over `[t_m, t_{m+1}]`.
    fine: Vec<f64>,
    pub scheme: Scheme,
}

impl RoughPathL2 {
    pub fn new(x: SampledPath, fine: Vec<f64>, scheme: Scheme) -> Result<Self> {
        let d = x.dim();
        let expected = x.grid().steps() * d * d;
        if fine.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: fine.len(),
            });
        }
        Ok(Self { x, fine, scheme })
    }

    pub fn x(&self) -> &SampledPath {
        &self.x
    }

    pub fn grid(&self) -> &Grid {
        self.x.grid()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    fn fine_block(&self, interval: usize) -> &[f64] {
        let d2 = self.dim() * self.dim();
        &self.fine[interval * d2..(interval + 1) * d2]
    }

    /// Path increment vector `X_{s,t}`.
    pub fn increment(&self, s: usize, t: usize) -> Vec<f64> {
        (0..self.dim()).map(|c| self.x.increment(s, t, c)).collect()
    }

    /// Level-2 increment `X^2_{s,t}` by Chen composition of fine intervals:
    /// running `A <- A + X_{s,u} (x) X_{u,v} + A_fine`.
    pub fn level2(&self, s: usize, t: usize) -> Vec<f64> {
        let d = self.dim();
        let mut acc = vec![0.0; d * d];
        let mut inc = vec![0.0; d];
        for m in s..t {
            let block = self.fine_block(m);
            for i in 0..d {
                let xi = inc[i];
                for j in 0..d {
                    let step_j = self.x.increment(m, m + 1, j);
                    acc[i * d + j] += xi * step_j + block[i * d + j];
                }
            }
            for (i, v) in inc.iter_mut().enumerate() {
                *v += self.x.increment(m, m + 1, i);
            }
        }
        acc
    }

    /// Runs `f(t, X^2_{s, t})` for every `t` in `s..=end` with a single
    /// left-to-right Chen composition.
    pub fn scan_level2(&self, s: usize, end: usize, mut f: impl FnMut(usize, &[f64])) {
        let d = self.dim();
        let mut acc = vec![0.0; d * d];
        let mut inc = vec![0.0; d];
        f(s, &acc);
        for m in s..end {
            let block = self.fine_block(m);
            for i in 0..d {
                let xi = inc[i];
                for j in 0..d {
                    acc[i * d + j] += xi * self.x.increment(m, m + 1, j) + block[i * d + j];
                }
            }
            for (i, v) in inc.iter_mut().enumerate() {
                *v += self.x.increment(m, m + 1, i);
            }
            f(m + 1, &acc);
        }
    }

    /// Wraps a one-dimensional level-2 Bell path as a stored-increment path.
    pub fn from_rough1d(rp: &RoughPath1D) -> Result<Self> {
        if rp.k() != 2 {
            return Err(Error::InvalidInput(format!(
                "level-2 conversion needs k = 2, got k = {}",
                rp.k()
            )));
        }
        let steps = rp.grid().steps();
        let fine: Vec<f64> = (0..steps).map(|m| rp.level(2, m, m + 1)).collect();
        let scheme = if rp.renorm().samples(2).iter().all(|g| *g == 0.0) {
            Scheme::Young
        } else {
            Scheme::Hermite
        };
        Self::new(rp.x().clone(), fine, scheme)
    }
}

/// Scalar view of a one-dimensional level-2 path so the extraction and
/// residual machinery can consume stored-increment lifts.
impl LevelAccessor for RoughPathL2 {
    fn grid(&self) -> &Grid {
        self.x.grid()
    }

    fn level_count(&self) -> usize {
        2
    }

    fn level(&self, i: usize, s: usize, t: usize) -> f64 {
        assert_eq!(self.dim(), 1, "scalar level access needs a 1-d path");
        match i {
            0 => 1.0,
            1 => self.x.increment(s, t, 0),
            2 => self.level2(s, t)[0],
            _ => panic!("level {i} out of range for a level-2 path"),
        }
    }
}

/// Builds the level-2 lift of `x_fine` on the coarse grid from fine-interval
/// Riemann sums of `X_{s,u} (x) dX_u`: left-point for `Ito`, trapezoid for
/// `Stratonovich` and `Young`. The fine grid must refine the coarse one by an
/// integer factor.
pub fn level2_from_fine(x_fine: &SampledPath, coarse: Grid, scheme: Scheme) -> Result<RoughPathL2> {
    let fine_grid = x_fine.grid();
    if fine_grid.steps() % coarse.steps() != 0 {
        return Err(Error::InvalidInput(format!(
            "fine grid ({} steps) does not refine coarse grid ({} steps) by an integer factor",
            fine_grid.steps(),
            coarse.steps()
        )));
    }
    if (fine_grid.horizon() - coarse.horizon()).abs() > 1e-12 * coarse.horizon() {
        return Err(Error::InvalidInput("grids cover different horizons".into()));
    }
    if scheme == Scheme::Hermite {
        return Err(Error::InvalidInput(
            "hermite lifts come from hermite_lift, not fine-grid sums".into(),
        ));
    }
    let ratio = fine_grid.steps() / coarse.steps();
    let d = x_fine.dim();
    let mut fine = vec![0.0; coarse.steps() * d * d];
    let mut coarse_values = Vec::with_capacity(coarse.len() * d);
    for c in 0..coarse.len() {
        for coord in 0..d {
            coarse_values.push(x_fine.value(c * ratio, coord));
        }
    }
    for m in 0..coarse.steps() {
        let base = m * ratio;
        let block = &mut fine[m * d * d..(m + 1) * d * d];
        for f in 0..ratio {
            let u = base + f;
            for i in 0..d {
                let pre = x_fine.value(u, i) - x_fine.value(base, i);
                let step_i = x_fine.increment(u, u + 1, i);
                for j in 0..d {
                    let step_j = x_fine.increment(u, u + 1, j);
                    let weight = match scheme {
                        Scheme::Ito => pre * step_j,
                        Scheme::Stratonovich | Scheme::Young => {
                            (pre + 0.5 * step_i) * step_j
                        }
                        Scheme::Hermite => unreachable!(),
                    };
                    block[i * d + j] += weight;
                }
            }
        }
    }
    let x_coarse = SampledPath::new(coarse, d, coarse_values)?;
    RoughPathL2::new(x_coarse, fine, scheme)
}

/// Largest shuffle defect `|X^2_{ij} + X^2_{ji} - X_i X_j|` at one pair.
pub fn shuffle_residual_at(rp: &RoughPathL2, s: usize, t: usize) -> f64 {
    let d = rp.dim();
    let inc = rp.increment(s, t);
    let level2 = rp.level2(s, t);
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let defect = level2[i * d + j] + level2[j * d + i] - inc[i] * inc[j];
            worst = worst.max(defect.abs());
        }
    }
    worst
}

/// Max shuffle residual over every grid pair — the level-2 geometricity
/// check. Linear-time per start index through the composition scan.
pub fn geometric_check_l2(rp: &RoughPathL2) -> f64 {
    let n = rp.grid().steps();
    let d = rp.dim();
    let mut worst: f64 = 0.0;
    for s in 0..n {
        rp.scan_level2(s, n, |t, level2| {
            if t == s {
                return;
            }
            for i in 0..d {
                for j in 0..d {
                    let inc_i = rp.x().increment(s, t, i);
                    let inc_j = rp.x().increment(s, t, j);
                    let defect = level2[i * d + j] + level2[j * d + i] - inc_i * inc_j;
                    worst = worst.max(defect.abs());
                }
            }
        });
    }
    worst
}

/// Chen residual of a multi-dimensional level-2 path over sampled triples,
/// in the max norm on matrices.
pub fn chen_residual_l2(rp: &RoughPathL2, sample_triples: usize, seed: u64) -> f64 {
    let mut rng = crate::gauss::stream_rng(seed, 0);
    let n = rp.grid().steps();
    let d = rp.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..sample_triples {
        let mut idx = [
            rng.gen_range(0..=n),
            rng.gen_range(0..=n),
            rng.gen_range(0..=n),
        ];
        idx.sort_unstable();
        let (s, u, t) = (idx[0], idx[1], idx[2]);
        let direct = rp.level2(s, t);
        let left = rp.level2(s, u);
        let right = rp.level2(u, t);
        let inc_left = rp.increment(s, u);
        let inc_right = rp.increment(u, t);
        for i in 0..d {
            for j in 0..d {
                let composed = left[i * d + j] + right[i * d + j] + inc_left[i] * inc_right[j];
                worst = worst.max((direct[i * d + j] - composed).abs());
            }
        }
    }
    worst
}

/// Level accessor for a rough path watched through a time change: levels on
/// the new grid are the base levels between mapped source indices.
pub struct TimeChangedLevels<'a> {
    base: &'a dyn LevelAccessor,
    grid: Grid,
    source_indices: Vec<usize>,
}

impl<'a> TimeChangedLevels<'a> {
    pub fn new(base: &'a dyn LevelAccessor, grid: Grid, source_indices: Vec<usize>) -> Result<Self> {
        if source_indices.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: source_indices.len(),
            });
        }
        if source_indices.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("time change must be monotone".into()));
        }
        Ok(Self {
            base,
            grid,
            source_indices,
        })
    }
}

impl LevelAccessor for TimeChangedLevels<'_> {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn level_count(&self) -> usize {
        self.base.level_count()
    }

    fn level(&self, i: usize, s: usize, t: usize) -> f64 {
        self.base
            .level(i, self.source_indices[s], self.source_indices[t])
    }
}
