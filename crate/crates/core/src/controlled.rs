//! Controlled-path integrands: polynomial and Markovian functions of the
//! state, signature components, and simple (window) integrands.
//!
//! A controlled path is stored as its `k` component paths on the grid. The
//! piecewise variant carries one controlled path per subinterval; holdings
//! (the first component) must agree at breakpoints, matching the no-jump
//! constraint on admissible strategies, while higher components may switch
//! with the segment.

use crate::error::{Error, Result};
use crate::gauss::{Grid, SampledPath};
use crate::roughpath::{LevelAccessor, RoughPath1D};

/// A scalar polynomial in ascending-power coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.0.len() <= 1 {
            return Polynomial(vec![0.0]);
        }
        Polynomial(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(p, c)| p as f64 * c)
                .collect(),
        )
    }

    /// `order`-th derivative evaluated at `x`.
    pub fn eval_derivative(&self, order: usize, x: f64) -> f64 {
        let mut p = self.clone();
        for _ in 0..order {
            p = p.derivative();
        }
        p.eval(x)
    }

    /// The probabilist's Hermite polynomial `He_n` as coefficients.
    pub fn hermite(n: usize) -> Polynomial {
        // He_0 = 1, He_1 = x, He_{m+1} = x He_m - m He_{m-1}.
        let mut prev = Polynomial(vec![1.0]);
        if n == 0 {
            return prev;
        }
        let mut current = Polynomial(vec![0.0, 1.0]);
        for m in 1..n {
            let mut next = vec![0.0; m + 2];
            for (p, c) in current.0.iter().enumerate() {
                next[p + 1] += c;
            }
            for (p, c) in prev.0.iter().enumerate() {
                next[p] -= m as f64 * c;
            }
            prev = current;
            current = Polynomial(next);
        }
        current
    }
}

/// A function `F(t, x)` supplied through a derivative table: space
/// derivatives up to `max_space_order` and one time derivative.
pub trait SmoothFn: Sync {
    /// `order`-th space derivative; `order = 0` is the function itself.
    fn dx(&self, order: usize, t: f64, x: f64) -> f64;
    /// Time derivative `D_t F`.
    fn dt(&self, t: f64, x: f64) -> f64;
    /// Highest space derivative the table provides.
    fn max_space_order(&self) -> usize;
}

/// Derivative table backed by closures, for test fixtures and experiments.
pub struct FnTable {
    pub space: Vec<Box<dyn Fn(f64, f64) -> f64 + Sync + Send>>,
    pub time: Box<dyn Fn(f64, f64) -> f64 + Sync + Send>,
}

impl SmoothFn for FnTable {
    fn dx(&self, order: usize, t: f64, x: f64) -> f64 {
        (self.space[order])(t, x)
    }
    fn dt(&self, t: f64, x: f64) -> f64 {
        (self.time)(t, x)
    }
    fn max_space_order(&self) -> usize {
        self.space.len() - 1
    }
}

/// Time-independent polynomial as a smooth function table.
impl SmoothFn for Polynomial {
    fn dx(&self, order: usize, _t: f64, x: f64) -> f64 {
        self.eval_derivative(order, x)
    }
    fn dt(&self, _t: f64, _x: f64) -> f64 {
        0.0
    }
    fn max_space_order(&self) -> usize {
        usize::MAX
    }
}

/// A controlled path: `k` sampled component paths on a grid.
#[derive(Debug, Clone)]
pub struct ControlledPath {
    grid: Grid,
    /// `components[i]` holds `Y^{(i+1)}`.
    components: Vec<Vec<f64>>,
}

impl ControlledPath {
    pub fn new(grid: Grid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("controlled path needs components".into()));
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::Dimension {
                    expected: grid.len(),
                    got: c.len(),
                });
            }
        }
        Ok(Self { grid, components })
    }

    /// Constant integrand `(c, 0, ..., 0)` whose rough integral is `c X_{s,t}`.
    pub fn constant(grid: Grid, c: f64, k: usize) -> Self {
        let mut components = vec![vec![0.0; grid.len()]; k];
        components[0] = vec![c; grid.len()];
        Self { grid, components }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of components `k`.
    pub fn order(&self) -> usize {
        self.components.len()
    }

    /// Component `i` (1-based) at a grid index.
    pub fn component(&self, i: usize, index: usize) -> f64 {
        self.components[i - 1][index]
    }

    pub fn component_samples(&self, i: usize) -> &[f64] {
        &self.components[i - 1]
    }

    /// Componentwise linear combination `a * self + b * other`.
    pub fn linear_combination(&self, a: f64, other: &ControlledPath, b: f64) -> Result<Self> {
        if self.order() != other.order() || self.grid != other.grid {
            return Err(Error::InvalidInput(
                "linear combination needs matching grids and orders".into(),
            ));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect())
            .collect();
        Ok(Self {
            grid: self.grid,
            components,
        })
    }
}

/// `Y^{(i)}_t = D^{(i-1)} P(X_t)`: the polynomial integrand
/// `(P(X), DP(X), ..., D^{(k-1)} P(X))`.
pub fn polynomial_controlled(p: &Polynomial, rp: &RoughPath1D) -> ControlledPath {
    let grid = *rp.grid();
    let k = rp.k();
    let x = rp.x().scalar_values();
    let components = (0..k)
        .map(|order| x.iter().map(|&v| p.eval_derivative(order, v)).collect())
        .collect();
    ControlledPath {
        grid,
        components,
    }
}

/// `Y^{(i)}_t = D_x^{(i)} F(t, X_t)` for `i = 1..k`: the Itô-formula
/// integrand of a Markovian function. Requires space derivatives up to `k`
/// in the table; on non-geometric lifts the renormalisation regularity is
/// the caller's flag, never rejected here.
pub fn markovian_controlled(f: &dyn SmoothFn, rp: &RoughPath1D) -> Result<ControlledPath> {
    let k = rp.k();
    if f.max_space_order() < k {
        return Err(Error::InvalidInput(format!(
            "derivative table provides order {} but the lift needs {k}",
            f.max_space_order()
        )));
    }
    let grid = *rp.grid();
    let components = (1..=k)
        .map(|order| {
            grid.times()
                .enumerate()
                .map(|(idx, t)| f.dx(order, t, rp.x().value(idx, 0)))
                .collect()
        })
        .collect();
    ControlledPath::new(grid, components)
}

/// One segment of a piecewise controlled path, sampled on the grid index
/// range `start..=end`.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    /// `components[i][local]` with `local = index - start`.
    pub components: Vec<Vec<f64>>,
}

impl Segment {
    pub fn component(&self, i: usize, index: usize) -> f64 {
        self.components[i - 1][index - self.start]
    }
}

/// A controlled path defined piecewise between breakpoints. The holdings
/// component is continuous across breakpoints; higher components may switch.
#[derive(Debug, Clone)]
pub struct PiecewiseControlledPath {
    grid: Grid,
    segments: Vec<Segment>,
    /// Number of components in each segment.
    order: usize,
    /// True when every component (not just holdings) matches at breakpoints.
    pub fully_continuous: bool,
}

impl PiecewiseControlledPath {
    pub fn new(grid: Grid, segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidInput("piecewise path needs segments".into()));
        }
        let order = segments[0].components.len();
        let mut expected_start = 0usize;
        let mut fully_continuous = true;
        for (m, seg) in segments.iter().enumerate() {
            if seg.components.len() != order {
                return Err(Error::InvalidInput("segments disagree on order".into()));
            }
            if seg.start != expected_start {
                return Err(Error::InvalidInput(format!(
                    "segment {m} starts at {} instead of {expected_start}",
                    seg.start
                )));
            }
            if seg.end <= seg.start || seg.end > grid.steps() {
                return Err(Error::InvalidInput(format!(
                    "segment {m} covers an empty or out-of-range span"
                )));
            }
            for c in &seg.components {
                if c.len() != seg.end - seg.start + 1 {
                    return Err(Error::Dimension {
                        expected: seg.end - seg.start + 1,
                        got: c.len(),
                    });
                }
            }
            if m > 0 {
                let prev = &segments[m - 1];
                let jump = (seg.component(1, seg.start) - prev.component(1, prev.end)).abs();
                if jump > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "holdings jump {jump:.3e} at breakpoint index {}",
                        seg.start
                    )));
                }
                for i in 2..=order {
                    if (seg.component(i, seg.start) - prev.component(i, prev.end)).abs() > 1e-9 {
                        fully_continuous = false;
                    }
                }
            }
            expected_start = seg.end;
        }
        if expected_start != grid.steps() {
            return Err(Error::InvalidInput(format!(
                "segments stop at index {expected_start}, grid has {}",
                grid.steps()
            )));
        }
        Ok(Self {
            grid,
            segments,
            order,
            fully_continuous,
        })
    }

    /// Wraps a plain controlled path as a single segment.
    pub fn from_controlled(cp: &ControlledPath) -> Self {
        let grid = *cp.grid();
        let segments = vec![Segment {
            start: 0,
            end: grid.steps(),
            components: (1..=cp.order())
                .map(|i| cp.component_samples(i).to_vec())
                .collect(),
        }];
        Self {
            grid,
            segments,
            order: cp.order(),
            fully_continuous: true,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn breakpoints(&self) -> Vec<usize> {
        let mut points: Vec<usize> = self.segments.iter().map(|s| s.start).collect();
        points.push(self.grid.steps());
        points
    }
}

/// The signature integrand started at time `s`: zero before `s`, components
/// `(X^n_{s,.}, X^{n-1}_{s,.}, ..., 1, 0, ...)` after, truncated at `k`.
/// Its rough integral over `[s, t]` telescopes to level `n + 1`.
pub fn signature_integrand(
    rp: &RoughPath1D,
    n: usize,
    s: f64,
) -> Result<PiecewiseControlledPath> {
    let grid = *rp.grid();
    let s_idx = grid.nearest_index(s);
    if (grid.time(s_idx) - s).abs() > 1e-9 * grid.horizon() {
        return Err(Error::InvalidInput(format!(
            "start time {s} is not a grid point"
        )));
    }
    if n == 0 && s_idx > 0 {
        return Err(Error::InvalidInput(
            "level-0 signature integrand enters at value 1 and would jump; start it at 0".into(),
        ));
    }
    let k = rp.k();
    let mut segments = Vec::new();
    if s_idx > 0 {
        segments.push(Segment {
            start: 0,
            end: s_idx,
            components: vec![vec![0.0; s_idx + 1]; k],
        });
    }
    let len = grid.steps() - s_idx + 1;
    let mut components = vec![vec![0.0; len]; k];
    for i in 1..=k {
        if n + 1 >= i {
            let level = n + 1 - i;
            for (local, slot) in components[i - 1].iter_mut().enumerate() {
                *slot = rp.level_ext(level, s_idx, s_idx + local);
            }
        }
    }
    segments.push(Segment {
        start: s_idx,
        end: grid.steps(),
        components,
    });
    PiecewiseControlledPath::new(grid, segments)
}

/// A bounded value known at `window.0`, held on `[window.0, window.1]`: the
/// simple-integrand escape hatch outside the controlled-path class.
#[derive(Debug, Clone, Copy)]
pub struct SimpleIntegrand {
    pub value: f64,
    /// Grid indices `(s, u)` with `s <= u`.
    pub window: (usize, usize),
}

impl SimpleIntegrand {
    pub fn new(value: f64, window: (usize, usize)) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Numeric("simple integrand value not finite".into()));
        }
        if window.0 > window.1 {
            return Err(Error::InvalidInput("window must satisfy s <= u".into()));
        }
        Ok(Self { value, window })
    }

    /// `xi * (X_{u ∧ tau} - X_{s ∧ tau})`.
    pub fn integral(&self, x: &SampledPath, tau: usize) -> f64 {
        let s = self.window.0.min(tau);
        let u = self.window.1.min(tau);
        self.value * x.increment(s, u, 0)
    }
}

/// Empirical remainder constants of the controlled-path expansion: for each
/// level `i`, `sup_{s<t} |Y^{(i)}_{s,t} - sum_{j>i} Y^{(j)}_s X^{j-i}_{s,t}|
/// / (t-s)^{(k+1-i) alpha}`.
pub fn remainder_profile(
    cp: &ControlledPath,
    levels: &dyn LevelAccessor,
    alpha: f64,
) -> Vec<f64> {
    remainder_profile_strided(cp, levels, alpha, 1)
}

pub fn remainder_profile_strided(
    cp: &ControlledPath,
    levels: &dyn LevelAccessor,
    alpha: f64,
    stride: usize,
) -> Vec<f64> {
    let grid = cp.grid();
    let k = cp.order();
    let idx: Vec<usize> = (0..=grid.steps()).step_by(stride.max(1)).collect();
    let mut profile = vec![0.0f64; k];
    for (a, &s) in idx.iter().enumerate() {
        for &t in idx.iter().skip(a + 1) {
            let dt = grid.time(t) - grid.time(s);
            for i in 1..=k {
                let mut expansion = 0.0;
                for j in (i + 1)..=k {
                    expansion += cp.component(j, s) * levels.level(j - i, s, t);
                }
                let remainder = cp.component(i, t) - cp.component(i, s) - expansion;
                let exponent = (k + 1 - i) as f64 * alpha;
                profile[i - 1] = profile[i - 1].max(remainder.abs() / dt.powf(exponent));
            }
        }
    }
    profile
}
