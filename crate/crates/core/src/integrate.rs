//! Rough integration as a limit of graded compensated Riemann-Stieltjes
//! sums, Young integration for the renormalisation corrections, and the
//! rough Itô formula as a numeric residual.
//!
//! Compensated sums use left-point evaluation and pairwise (tree) summation,
//! so a value is reproducible independent of worker count. Refinement runs
//! across a ladder of meshes and reports the observed convergence order.

use crate::controlled::{ControlledPath, PiecewiseControlledPath, Segment, SmoothFn};
use crate::error::{Error, Result};
use crate::pairwise_sum;
use crate::roughpath::{LevelAccessor, RoughPath1D};

/// Relative tolerance under which two successive dyadic refinements declare
/// the integral converged.
pub const CONVERGENCE_TOL_REL: f64 = 1e-6;

/// A rough or Young integral together with its refinement diagnostics.
#[derive(Debug, Clone)]
pub struct IntegralResult {
    /// Value at the finest mesh.
    pub value: f64,
    /// `(mesh, partial value)` pairs, coarse to fine.
    pub refinements: Vec<(f64, f64)>,
    /// Least-squares slope of `log |I_j - I_{j+1}|` against `log mesh_j`.
    pub rate_estimate: Option<f64>,
    /// Whether the last two refinements differ by less than
    /// `CONVERGENCE_TOL_REL * max(1, |value|)`.
    pub converged: bool,
}

impl IntegralResult {
    pub(crate) fn from_refinements(refinements: Vec<(f64, f64)>) -> Self {
        let value = refinements.last().expect("at least one mesh").1;
        let rate_estimate = fit_rate(&refinements);
        let converged = match refinements.len() {
            0 | 1 => false,
            n => {
                let last = refinements[n - 1].1;
                let prev = refinements[n - 2].1;
                (last - prev).abs() < CONVERGENCE_TOL_REL * last.abs().max(1.0)
            }
        };
        Self {
            value,
            refinements,
            rate_estimate,
            converged,
        }
    }
}

fn fit_rate(refinements: &[(f64, f64)]) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for w in refinements.windows(2) {
        let diff = (w[1].1 - w[0].1).abs();
        if diff > 0.0 {
            xs.push(w[0].0.ln());
            ys.push(diff.ln());
        }
    }
    least_squares_slope(&xs, &ys)
}

/// Least-squares slope of `ys` against `xs`; `None` below two points.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// One compensated sum `sum_u sum_i Y^(i)_u X^i_{u,v}` over the partition of
/// `[s, t]` with the given stride; a trailing short interval is allowed.
fn compensated_sum(
    component: &dyn Fn(usize, usize) -> f64,
    order: usize,
    levels: &dyn LevelAccessor,
    s: usize,
    t: usize,
    stride: usize,
) -> f64 {
    debug_assert!(stride >= 1);
    let mut terms = Vec::with_capacity((t - s).div_ceil(stride));
    let mut u = s;
    while u < t {
        let v = (u + stride).min(t);
        let mut local = 0.0;
        for i in 1..=order {
            local += component(i, u) * levels.level(i, u, v);
        }
        terms.push(local);
        u = v;
    }
    pairwise_sum(&terms)
}

fn validate_strides(strides: &[usize], span: usize, strict_divide: bool) -> Result<()> {
    if strides.is_empty() {
        return Err(Error::InvalidInput("empty mesh ladder".into()));
    }
    if strides.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput(
            "mesh ladder must be strictly decreasing (coarse to fine)".into(),
        ));
    }
    for &m in strides {
        if m == 0 {
            return Err(Error::InvalidInput("stride zero".into()));
        }
        if strict_divide && span % m != 0 {
            return Err(Error::InvalidInput(format!(
                "mesh stride {m} does not divide the {span}-step span"
            )));
        }
    }
    Ok(())
}

/// Rough integral of a controlled path over `[s, t]` (grid indices) across a
/// ladder of mesh strides: compensated sums at each mesh, the value taken at
/// the finest, and the observed order fitted on successive differences.
pub fn rough_integral(
    cp: &ControlledPath,
    levels: &dyn LevelAccessor,
    s: usize,
    t: usize,
    mesh_strides: &[usize],
) -> Result<IntegralResult> {
    if cp.grid() != levels.grid() {
        return Err(Error::InvalidInput(
            "integrand and rough path live on different grids".into(),
        ));
    }
    if t < s || t > cp.grid().steps() {
        return Err(Error::InvalidInput(format!("invalid index range [{s}, {t}]")));
    }
    validate_strides(mesh_strides, t - s, true)?;
    let order = cp.order().min(levels.level_count());
    let dt = cp.grid().dt();
    let component = |i: usize, idx: usize| cp.component(i, idx);
    let refinements = mesh_strides
        .iter()
        .map(|&m| {
            (
                m as f64 * dt,
                compensated_sum(&component, order, levels, s, t, m),
            )
        })
        .collect();
    Ok(IntegralResult::from_refinements(refinements))
}

/// Rough integral of a piecewise controlled path: additive over segments,
/// each segment partitioned with the requested stride (the last interval of
/// a segment may be shorter, keeping breakpoints exact partition points).
pub fn rough_integral_piecewise(
    pcp: &PiecewiseControlledPath,
    levels: &dyn LevelAccessor,
    s: usize,
    t: usize,
    mesh_strides: &[usize],
) -> Result<IntegralResult> {
    if pcp.grid() != levels.grid() {
        return Err(Error::InvalidInput(
            "integrand and rough path live on different grids".into(),
        ));
    }
    if t < s || t > pcp.grid().steps() {
        return Err(Error::InvalidInput(format!("invalid index range [{s}, {t}]")));
    }
    validate_strides(mesh_strides, t - s, false)?;
    let order = pcp.order().min(levels.level_count());
    let dt = pcp.grid().dt();
    let mut refinements = Vec::with_capacity(mesh_strides.len());
    for &m in mesh_strides {
        let mut total = 0.0;
        for seg in pcp.segments() {
            let lo = seg.start.max(s);
            let hi = seg.end.min(t);
            if lo >= hi {
                continue;
            }
            let component = |i: usize, idx: usize| seg.component(i, idx);
            total += compensated_sum(&component, order, levels, lo, hi, m);
        }
        refinements.push((m as f64 * dt, total));
    }
    Ok(IntegralResult::from_refinements(refinements))
}

/// Cumulative rough integral `t -> int_0^t Y dX` at the finest mesh.
pub fn cumulative_rough_integral(cp: &ControlledPath, levels: &dyn LevelAccessor) -> Vec<f64> {
    let order = cp.order().min(levels.level_count());
    let n = cp.grid().steps();
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for u in 0..n {
        for i in 1..=order {
            acc += cp.component(i, u) * levels.level(i, u, u + 1);
        }
        out.push(acc);
    }
    out
}

/// Cumulative rough integral of a piecewise integrand at the finest mesh.
pub fn cumulative_rough_integral_piecewise(
    pcp: &PiecewiseControlledPath,
    levels: &dyn LevelAccessor,
) -> Vec<f64> {
    let order = pcp.order().min(levels.level_count());
    let n = pcp.grid().steps();
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for seg in pcp.segments() {
        for u in seg.start..seg.end {
            for i in 1..=order {
                acc += seg.component(i, u) * levels.level(i, u, u + 1);
            }
            out.push(acc);
        }
    }
    out
}

/// Left-point Young (Riemann-Stieltjes) sum of `f` against `g` on the shared
/// grid, with a dyadic refinement diagnostic.
pub fn young_integral(f: &[f64], g: &[f64], dt: f64) -> Result<IntegralResult> {
    if f.len() != g.len() {
        return Err(Error::Dimension {
            expected: f.len(),
            got: g.len(),
        });
    }
    let n = f.len() - 1;
    let mut strides = vec![1usize];
    if n % 2 == 0 && n >= 2 {
        strides.insert(0, 2);
    }
    if n % 4 == 0 && n >= 4 {
        strides.insert(0, 4);
    }
    let refinements = strides
        .iter()
        .map(|&m| {
            let mut terms = Vec::with_capacity(n.div_ceil(m));
            let mut u = 0usize;
            while u < n {
                let v = (u + m).min(n);
                terms.push(f[u] * (g[v] - g[u]));
                u = v;
            }
            (m as f64 * dt, pairwise_sum(&terms))
        })
        .collect();
    Ok(IntegralResult::from_refinements(refinements))
}

/// Cumulative left-point Young sums `t -> int_0^t f dg` on the grid.
pub fn young_cumulative(f: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    out.push(0.0);
    let mut acc = 0.0;
    for u in 0..f.len() - 1 {
        acc += f[u] * (g[u + 1] - g[u]);
        out.push(acc);
    }
    out
}

/// Residual path of the rough Itô formula on the grid:
/// `[F(t, X_t) - F(0, X_0)] - [int D_u F du + int (D_x F, ..., D_x^k F) dX
/// - sum_{i>=2} int D_x^{(i)} F dG^i]`,
/// every integral taken at the finest mesh.
pub fn ito_residual(f: &dyn SmoothFn, rp: &RoughPath1D) -> Result<Vec<f64>> {
    let cp = crate::controlled::markovian_controlled(f, rp)?;
    let grid = *rp.grid();
    let n = grid.steps();
    let x = rp.x().scalar_values();
    let rough = cumulative_rough_integral(&cp, rp);
    let time_samples: Vec<f64> = grid
        .times()
        .enumerate()
        .map(|(i, t)| f.dt(t, x[i]))
        .collect();
    let times: Vec<f64> = grid.times().collect();
    let time_integral = young_cumulative(&time_samples, &times);
    let mut correction = vec![0.0; n + 1];
    for level in 2..=rp.k() {
        let integrand = cp.component_samples(level);
        let g = rp.renorm().samples(level);
        let partial = young_cumulative(integrand, g);
        for (c, p) in correction.iter_mut().zip(partial) {
            *c += p;
        }
    }
    let mut residual = Vec::with_capacity(n + 1);
    for m in 0..=n {
        let lhs = f.dx(0, grid.time(m), x[m]) - f.dx(0, 0.0, x[0]);
        let rhs = time_integral[m] + rough[m] - correction[m];
        residual.push(lhs - rhs);
    }
    Ok(residual)
}

/// The controlled path `(int_0^. Y dX, Y^(1), ..., Y^(k-1))`.
pub fn integral_as_controlled(
    cp: &ControlledPath,
    levels: &dyn LevelAccessor,
) -> Result<ControlledPath> {
    let k = cp.order();
    let mut components = Vec::with_capacity(k);
    components.push(cumulative_rough_integral(cp, levels));
    for i in 1..k {
        components.push(cp.component_samples(i).to_vec());
    }
    ControlledPath::new(*cp.grid(), components)
}

/// Piecewise variant of [`integral_as_controlled`]; the integral component is
/// continuous across breakpoints by construction.
pub fn integral_as_controlled_piecewise(
    pcp: &PiecewiseControlledPath,
    levels: &dyn LevelAccessor,
) -> Result<PiecewiseControlledPath> {
    let k = pcp.order();
    let cumulative = cumulative_rough_integral_piecewise(pcp, levels);
    let segments = pcp
        .segments()
        .iter()
        .map(|seg| {
            let mut components = Vec::with_capacity(k);
            components.push(cumulative[seg.start..=seg.end].to_vec());
            for i in 1..k {
                components.push(seg.components[i - 1].clone());
            }
            Segment {
                start: seg.start,
                end: seg.end,
                components,
            }
        })
        .collect();
    PiecewiseControlledPath::new(*pcp.grid(), segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controlled::{
        polynomial_controlled, signature_integrand, ControlledPath, FnTable, Polynomial,
    };
    use crate::gauss::{simulate_bm_stream, simulate_fbm, variance_fn, Grid, SampledPath, VarianceKind};
    use crate::roughpath::{geometric_lift, hermite_lift, lift_from_renorm, RenormTerms};

    #[test]
    fn constant_integrand_reproduces_increment_at_every_mesh() {
        let grid = Grid::new(1.0, 64).unwrap();
        let x = simulate_bm_stream(grid, 1, 0);
        let rp = geometric_lift(x.clone(), 0.5).unwrap();
        let cp = ControlledPath::constant(grid, 1.0, 2);
        let result = rough_integral(&cp, &rp, 0, 64, &[16, 4, 1]).unwrap();
        for (_, value) in &result.refinements {
            assert!((value - x.increment(0, 64, 0)).abs() < 1e-14);
        }
        assert!(result.converged);
    }

    #[test]
    fn linear_integrand_over_linear_path() {
        // int_0^1 t dt = 1/2; polynomial integrands over polynomial paths
        // telescope exactly once the lift order covers the degree.
        let grid = Grid::new(1.0, 1 << 10).unwrap();
        let x = SampledPath::from_fn(grid, |t| t);
        let rp = geometric_lift(x, 0.45).unwrap();
        let cp = polynomial_controlled(&Polynomial(vec![0.0, 1.0]), &rp);
        let result = rough_integral(&cp, &rp, 0, 1 << 10, &[64, 8, 1]).unwrap();
        assert!((result.value - 0.5).abs() < 1e-9, "value {}", result.value);
    }

    #[test]
    fn smooth_markovian_integral_matches_rs_oracle() {
        // F'(X) over the geometric lift of X_t = sin t at k = 3 converges to
        // F(X_1) - F(X_0); mesh error is O(h^{k+1}) per step.
        let grid = Grid::new(1.0, 1 << 10).unwrap();
        let x = SampledPath::from_fn(grid, |t| t.sin());
        let rp = geometric_lift(x, 0.3).unwrap();
        // integrand tuple of F(x) = x^3 / 3: (x^2, 2x, 2)
        let cp = polynomial_controlled(&Polynomial(vec![0.0, 0.0, 1.0]), &rp);
        let result = rough_integral(&cp, &rp, 0, 1 << 10, &[4, 2, 1]).unwrap();
        let expected = 1.0f64.sin().powi(3) / 3.0;
        assert!(
            (result.value - expected).abs() < 1e-8,
            "value {} vs {expected}",
            result.value
        );
        assert!(result.converged);
    }

    #[test]
    fn ito_integral_is_centred_and_stratonovich_shifts_by_half_horizon() {
        let grid = Grid::new(1.0, 256).unwrap();
        let v = variance_fn(VarianceKind::Bm, grid).unwrap();
        let n_paths = 20_000usize;
        let mut ito_values = Vec::with_capacity(n_paths);
        let mut strat_values = Vec::with_capacity(n_paths);
        for i in 0..n_paths {
            let x = simulate_bm_stream(grid, 33, i as u64);
            let hermite = hermite_lift(x.clone(), &v, 0.5).unwrap();
            let geo = geometric_lift(x, 0.5).unwrap();
            let cp = polynomial_controlled(&Polynomial(vec![0.0, 1.0]), &hermite);
            ito_values.push(rough_integral(&cp, &hermite, 0, 256, &[1]).unwrap().value);
            let cp_g = polynomial_controlled(&Polynomial(vec![0.0, 1.0]), &geo);
            strat_values.push(rough_integral(&cp_g, &geo, 0, 256, &[1]).unwrap().value);
        }
        let n = n_paths as f64;
        let mean_ito = ito_values.iter().sum::<f64>() / n;
        let var_ito = ito_values
            .iter()
            .map(|x| (x - mean_ito) * (x - mean_ito))
            .sum::<f64>()
            / (n - 1.0);
        let se_ito = (var_ito / n).sqrt();
        assert!(mean_ito.abs() <= 4.0 * se_ito, "ito mean {mean_ito}");

        let mean_strat = strat_values.iter().sum::<f64>() / n;
        let var_strat = strat_values
            .iter()
            .map(|x| (x - mean_strat) * (x - mean_strat))
            .sum::<f64>()
            / (n - 1.0);
        let se_strat = (var_strat / n).sqrt();
        assert!(
            (mean_strat - 0.5).abs() <= 4.0 * se_strat,
            "stratonovich mean {mean_strat}"
        );
    }

    #[test]
    fn young_examples() {
        let grid = Grid::new(1.0, 1 << 10).unwrap();
        let ones = vec![1.0; grid.len()];
        let g: Vec<f64> = grid.times().map(|t| t * t - 0.3 * t).collect();
        let r = young_integral(&ones, &g, grid.dt()).unwrap();
        assert!((r.value - (g[g.len() - 1] - g[0])).abs() < 1e-12);

        // Left sums of int_0^1 u du equal exactly 1/2 - h/2 on the grid.
        let u: Vec<f64> = grid.times().collect();
        let r = young_integral(&u, &u, grid.dt()).unwrap();
        let h = grid.dt();
        assert!((r.value - (0.5 - 0.5 * h)).abs() < 1e-12);
        assert!((r.value - 0.5).abs() < h);
        // First-order refinement toward the limit.
        let rate = r.rate_estimate.unwrap();
        assert!((rate - 1.0).abs() < 0.1, "rate {rate}");
    }

    #[test]
    fn young_brownian_square_against_half_clock() {
        // E int_0^1 B_u^2 d(-u/2) = -1/4; the left-sum discrete mean is
        // -(1 - h)/4.
        let grid = Grid::new(1.0, 256).unwrap();
        let clock: Vec<f64> = grid.times().map(|t| -0.5 * t).collect();
        let n_paths = 20_000usize;
        let mut values = Vec::with_capacity(n_paths);
        for i in 0..n_paths {
            let x = simulate_bm_stream(grid, 44, i as u64);
            let squared: Vec<f64> = x.scalar_values().iter().map(|v| v * v).collect();
            values.push(young_integral(&squared, &clock, grid.dt()).unwrap().value);
        }
        let n = n_paths as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let discrete = -0.25 * (1.0 - grid.dt());
        assert!((mean - discrete).abs() <= 4.0 * se, "mean {mean} vs {discrete}");
        assert!((mean + 0.25).abs() <= 4.0 * se + 1e-3);
    }

    #[test]
    fn additivity_and_linearity() {
        let grid = Grid::new(1.0, 128).unwrap();
        let x = simulate_bm_stream(grid, 3, 5);
        let v = variance_fn(VarianceKind::Bm, grid).unwrap();
        let rp = hermite_lift(x, &v, 0.5).unwrap();
        let a = polynomial_controlled(&Polynomial(vec![0.0, 0.0, 1.0]), &rp);
        let b = polynomial_controlled(&Polynomial(vec![1.0, 1.0]), &rp);

        for (s, u, t) in [(0usize, 40usize, 128usize), (8, 9, 100)] {
            let left = rough_integral(&a, &rp, s, u, &[1]).unwrap().value;
            let right = rough_integral(&a, &rp, u, t, &[1]).unwrap().value;
            let whole = rough_integral(&a, &rp, s, t, &[1]).unwrap().value;
            assert!((left + right - whole).abs() < 1e-10);
        }

        let combo = a.linear_combination(2.0, &b, -3.0).unwrap();
        let ia = rough_integral(&a, &rp, 0, 128, &[1]).unwrap().value;
        let ib = rough_integral(&b, &rp, 0, 128, &[1]).unwrap().value;
        let ic = rough_integral(&combo, &rp, 0, 128, &[1]).unwrap().value;
        assert!((ic - (2.0 * ia - 3.0 * ib)).abs() < 1e-12);
    }

    #[test]
    fn mesh_must_divide_span() {
        let grid = Grid::new(1.0, 100).unwrap();
        let x = simulate_bm_stream(grid, 3, 0);
        let rp = geometric_lift(x, 0.5).unwrap();
        let cp = ControlledPath::constant(grid, 1.0, 2);
        assert!(rough_integral(&cp, &rp, 0, 100, &[7, 1]).is_err());
        assert!(rough_integral(&cp, &rp, 0, 100, &[]).is_err());
        assert!(rough_integral(&cp, &rp, 0, 100, &[1, 4]).is_err());
    }

    #[test]
    fn ito_residual_vanishes_for_linear_and_square_functions() {
        let grid = Grid::new(1.0, 256).unwrap();
        let x = simulate_bm_stream(grid, 10, 2);
        let v = variance_fn(VarianceKind::Bm, grid).unwrap();
        let rp = hermite_lift(x, &v, 0.5).unwrap();

        let linear = Polynomial(vec![0.0, 1.0]);
        let residual = ito_residual(&linear, &rp).unwrap();
        for r in &residual {
            assert!(r.abs() < 1e-12);
        }

        // x^2 over the Brownian Hermite lift telescopes exactly: the level-2
        // compensation and the Young correction cancel pathwise.
        let square = Polynomial(vec![0.0, 0.0, 1.0]);
        let residual = ito_residual(&square, &rp).unwrap();
        for r in &residual {
            assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn ito_residual_decays_for_cubic_over_fbm() {
        // sup_t residual for F = x^3 over the Hermite fBm(0.4) lift decays
        // with refinement at observed order at least 3H - 1.
        let hurst = 0.4;
        let fine = Grid::new(1.0, 1 << 12).unwrap();
        let path = simulate_fbm(fine, hurst, 3).unwrap();
        let cubic = Polynomial(vec![0.0, 0.0, 0.0, 1.0]);
        let mut sups = Vec::new();
        let mut meshes = Vec::new();
        for exp in [8usize, 10, 12] {
            let stride = 1 << (12 - exp);
            let grid = Grid::new(1.0, 1 << exp).unwrap();
            let values: Vec<f64> = (0..=(1usize << exp))
                .map(|i| path.value(i * stride, 0))
                .collect();
            let x = SampledPath::scalar(grid, values).unwrap();
            let v = variance_fn(VarianceKind::Fbm { hurst }, grid).unwrap();
            let rp = hermite_lift(x, &v, hurst).unwrap();
            let residual = ito_residual(&cubic, &rp).unwrap();
            sups.push(residual.iter().fold(0.0f64, |a, r| a.max(r.abs())));
            meshes.push(grid.dt());
        }
        assert!(sups[0] > sups[1] && sups[1] > sups[2], "sups {sups:?}");
        let slope = least_squares_slope(
            &meshes.iter().map(|m| m.ln()).collect::<Vec<_>>(),
            &sups.iter().map(|s| s.ln()).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(
            slope >= 3.0 * hurst - 1.0,
            "observed order {slope} below {}",
            3.0 * hurst - 1.0
        );
    }

    #[test]
    fn time_dependent_ito_residual_vanishes_in_the_limit() {
        // F(t, x) = t x: residual = t X_t - int X du - int u dX; both
        // integrals at the finest mesh, so the defect is one Riemann error.
        let grid = Grid::new(1.0, 1 << 10).unwrap();
        let x = simulate_bm_stream(grid, 91, 4);
        let v = variance_fn(VarianceKind::Bm, grid).unwrap();
        let rp = hermite_lift(x, &v, 0.5).unwrap();
        let table = FnTable {
            space: vec![
                Box::new(|t, x: f64| t * x),
                Box::new(|t, _x| t),
                Box::new(|_, _| 0.0),
            ],
            time: Box::new(|_t, x| x),
        };
        let residual = ito_residual(&table, &rp).unwrap();
        let sup = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        assert!(sup < 0.1, "sup residual {sup}");
    }

    #[test]
    fn signature_identity_telescopes_exactly() {
        // int_s^t sig(n-1, s) dX = level n, n <= k, to 1e-10.
        let grid = Grid::new(1.0, 128).unwrap();
        let x = simulate_bm_stream(grid, 77, 1);
        let v = variance_fn(VarianceKind::Bm, grid).unwrap();
        let rp = hermite_lift(x, &v, 0.5).unwrap();
        for (n, s_idx) in [(1usize, 0usize), (2, 32), (2, 64)] {
            let s_time = grid.time(s_idx);
            let sig = signature_integrand(&rp, n - 1, s_time).unwrap();
            for t in [s_idx + 16, 128] {
                let got = rough_integral_piecewise(&sig, &rp, s_idx, t, &[1])
                    .unwrap()
                    .value;
                let expected = rp.level_ext(n, s_idx, t);
                assert!(
                    (got - expected).abs() < 1e-10,
                    "n={n} s={s_idx} t={t}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn signature_extension_closure() {
        // Extending a Hermite lift beyond level k by rough integration
        // reproduces H_n(X_{s,t}, G_{s,t}) for n <= k + 2: re-lift with the
        // same renormalisation at order n, integrate the signature integrand.
        let grid = Grid::new(1.0, 128).unwrap();
        let x = simulate_bm_stream(grid, 78, 2);
        let v = variance_fn(VarianceKind::Bm, grid).unwrap();
        let base = hermite_lift(x.clone(), &v, 0.5).unwrap(); // k = 2
        for n in [3usize, 4] {
            let alpha_ext = 1.0 / n as f64;
            let mut paths = vec![vec![0.0; grid.len()]; n - 1];
            for (i, g) in base.renorm().samples(2).iter().enumerate() {
                paths[0][i] = *g;
            }
            let renorm = RenormTerms::new(grid, paths, true).unwrap();
            let extended = lift_from_renorm(x.clone(), renorm, alpha_ext).unwrap();
            let sig = signature_integrand(&extended, n - 1, 0.0).unwrap();
            let got = rough_integral_piecewise(&sig, &extended, 0, 128, &[1])
                .unwrap()
                .value;
            let expected = base.level_ext(n, 0, 128);
            assert!(
                (got - expected).abs() < 1e-9,
                "n={n}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn integral_as_controlled_examples() {
        let grid = Grid::new(1.0, 64).unwrap();
        let x = simulate_bm_stream(grid, 12, 7);
        let v = variance_fn(VarianceKind::Bm, grid).unwrap();
        let rp = hermite_lift(x.clone(), &v, 0.5).unwrap();

        let constant = ControlledPath::constant(grid, 1.0, 2);
        let tuple = integral_as_controlled(&constant, &rp).unwrap();
        for idx in 0..=64 {
            assert!((tuple.component(1, idx) - x.value(idx, 0)).abs() < 1e-12);
            assert_eq!(tuple.component(2, idx), 1.0);
        }
        let profile = crate::controlled::remainder_profile(&tuple, &rp, 0.5);
        assert!(profile.iter().all(|c| c.is_finite()));

        // Signature integrand n = 1 integrates to the level-2 path from s.
        let sig = signature_integrand(&rp, 1, 0.0).unwrap();
        let tuple = integral_as_controlled_piecewise(&sig, &rp).unwrap();
        let seg = &tuple.segments()[0];
        for idx in [1usize, 17, 64] {
            assert!(
                (seg.component(1, idx) - rp.level(2, 0, idx)).abs() < 1e-10,
                "idx {idx}"
            );
        }
    }

    #[test]
    fn refinement_stability_of_integral_tuple() {
        // remainder constants of the integral tuple stay bounded as the grid
        // refines (nested restrictions of one Brownian path).
        let fine = Grid::new(1.0, 1 << 10).unwrap();
        let path = simulate_bm_stream(fine, 55, 0);
        let mut constants = Vec::new();
        for exp in [6usize, 8, 10] {
            let stride = 1 << (10 - exp);
            let grid = Grid::new(1.0, 1 << exp).unwrap();
            let values: Vec<f64> = (0..=(1usize << exp))
                .map(|i| path.value(i * stride, 0))
                .collect();
            let x = SampledPath::scalar(grid, values).unwrap();
            let v = variance_fn(VarianceKind::Bm, grid).unwrap();
            let rp = hermite_lift(x, &v, 0.5).unwrap();
            let cp = polynomial_controlled(&Polynomial(vec![0.0, 1.0]), &rp);
            let tuple = integral_as_controlled(&cp, &rp).unwrap();
            let profile = crate::controlled::remainder_profile(&tuple, &rp, 0.5);
            constants.push(profile[0]);
        }
        let max = constants.iter().cloned().fold(0.0f64, f64::max);
        let min = constants.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 6.0, "constants {constants:?}");
    }
}
