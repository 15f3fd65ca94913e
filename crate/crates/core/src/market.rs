//! Rough market models: prices with a level-2 lift, gain processes as rough
//! integrals, self-financing verification, renormalisation clocks, and the
//! power-mean arbitrage in geometric markets.

use crate::controlled::Polynomial;
use crate::error::{Error, Result};
use crate::gauss::{Grid, SampledPath};
use crate::integrate::IntegralResult;
use crate::pairwise_sum;
use crate::roughpath::{shuffle_residual_at, RoughPath1D, RoughPathL2};

/// Asset prices (coordinate 0 is the riskless numeraire, identically one in
/// the constructors below) together with a level-2 rough-path lift in which
/// every level entry touching a constant coordinate vanishes.
#[derive(Debug, Clone)]
pub struct RoughMarket {
    prices: SampledPath,
    lift: RoughPathL2,
}

impl RoughMarket {
    pub fn new(prices: SampledPath, lift: RoughPathL2) -> Result<Self> {
        if prices.grid() != lift.grid() || prices.dim() != lift.dim() {
            return Err(Error::InvalidInput(
                "prices and lift disagree on grid or dimension".into(),
            ));
        }
        Ok(Self { prices, lift })
    }

    /// Prepends the constant riskless asset to a risky-asset lift: prices
    /// gain a leading `1` coordinate and every postulated integral touching
    /// it is zero.
    pub fn with_riskless(risky: RoughPathL2) -> Result<Self> {
        let grid = *risky.grid();
        let d = risky.dim();
        let assets = d + 1;
        let mut values = Vec::with_capacity(grid.len() * assets);
        for i in 0..grid.len() {
            values.push(1.0);
            for c in 0..d {
                values.push(risky.x().value(i, c));
            }
        }
        let prices = SampledPath::new(grid, assets, values)?;
        let mut fine = vec![0.0; grid.steps() * assets * assets];
        for m in 0..grid.steps() {
            let src = risky.fine_level2(m);
            let block = &mut fine[m * assets * assets..(m + 1) * assets * assets];
            for i in 0..d {
                for j in 0..d {
                    block[(i + 1) * assets + (j + 1)] = src[i * d + j];
                }
            }
        }
        let lift = RoughPathL2::new(prices.clone(), fine, risky.scheme)?;
        Ok(Self { prices, lift })
    }

    /// Two-asset Bachelier market: riskless numeraire plus one risky asset
    /// whose price is the level-2 noise lift itself.
    pub fn bachelier(noise: &RoughPath1D) -> Result<Self> {
        let risky = RoughPathL2::from_rough1d(noise)?;
        Self::with_riskless(risky)
    }

    pub fn prices(&self) -> &SampledPath {
        &self.prices
    }

    pub fn lift(&self) -> &RoughPathL2 {
        &self.lift
    }

    pub fn grid(&self) -> &Grid {
        self.prices.grid()
    }

    /// Number of assets including the numeraire.
    pub fn assets(&self) -> usize {
        self.prices.dim()
    }

    /// Largest deviation of the riskless coordinate from the constant-asset
    /// contract: price away from one, or a nonzero level-2 entry in row or
    /// column zero of the fine blocks.
    pub fn constant_coordinate_defect(&self) -> f64 {
        let assets = self.assets();
        let grid = self.grid();
        let mut worst: f64 = 0.0;
        for i in 0..grid.len() {
            worst = worst.max((self.prices.value(i, 0) - 1.0).abs());
        }
        for m in 0..grid.steps() {
            let block = self.lift.fine_level2(m);
            for e in 0..assets {
                worst = worst.max(block[e].abs());
                worst = worst.max(block[e * assets].abs());
            }
        }
        worst
    }
}

/// A trading portfolio: holdings per asset and the Gubinelli derivative
/// `derivative[f][e] = d(holdings^e) / d(S^f)`, both sampled on the grid.
#[derive(Debug, Clone)]
pub struct PortfolioPath {
    grid: Grid,
    assets: usize,
    /// `(N+1) x assets`.
    holdings: Vec<f64>,
    /// `(N+1) x assets x assets`, inner index first.
    derivative: Vec<f64>,
}

impl PortfolioPath {
    pub fn new(grid: Grid, assets: usize, holdings: Vec<f64>, derivative: Vec<f64>) -> Result<Self> {
        if holdings.len() != grid.len() * assets {
            return Err(Error::Dimension {
                expected: grid.len() * assets,
                got: holdings.len(),
            });
        }
        if derivative.len() != grid.len() * assets * assets {
            return Err(Error::Dimension {
                expected: grid.len() * assets * assets,
                got: derivative.len(),
            });
        }
        Ok(Self {
            grid,
            assets,
            holdings,
            derivative,
        })
    }

    /// Constant holdings, zero derivative.
    pub fn buy_and_hold(grid: Grid, units: &[f64]) -> Self {
        let assets = units.len();
        let mut holdings = Vec::with_capacity(grid.len() * assets);
        for _ in 0..grid.len() {
            holdings.extend_from_slice(units);
        }
        Self {
            grid,
            assets,
            holdings,
            derivative: vec![0.0; grid.len() * assets * assets],
        }
    }

    /// Markovian holdings of one risky asset in a two-asset market:
    /// `P(S^1)` units of asset one, with derivative `P'(S^1)`.
    pub fn markovian_single_asset(market: &RoughMarket, p: &Polynomial) -> Result<Self> {
        if market.assets() != 2 {
            return Err(Error::InvalidInput(
                "single-asset portfolio needs a two-asset market".into(),
            ));
        }
        let grid = *market.grid();
        let assets = 2;
        let mut holdings = vec![0.0; grid.len() * assets];
        let mut derivative = vec![0.0; grid.len() * assets * assets];
        for i in 0..grid.len() {
            let s = market.prices().value(i, 1);
            holdings[i * assets + 1] = p.eval(s);
            derivative[i * assets * assets + assets + 1] = p.eval_derivative(1, s);
        }
        Self::new(grid, assets, holdings, derivative)
    }

    pub fn holding(&self, index: usize, asset: usize) -> f64 {
        self.holdings[index * self.assets + asset]
    }

    pub fn derivative_entry(&self, index: usize, inner: usize, asset: usize) -> f64 {
        self.derivative[index * self.assets * self.assets + inner * self.assets + asset]
    }

    pub fn set_holding(&mut self, index: usize, asset: usize, value: f64) {
        self.holdings[index * self.assets + asset] = value;
    }

    /// Portfolio value `sum_e Y^e S^e` along the prices.
    pub fn value_path(&self, prices: &SampledPath) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| {
                (0..self.assets)
                    .map(|e| self.holding(i, e) * prices.value(i, e))
                    .sum()
            })
            .collect()
    }

    /// Leg-by-leg difference `self - other`.
    pub fn minus(&self, other: &PortfolioPath) -> Result<PortfolioPath> {
        if self.assets != other.assets || self.grid != other.grid {
            return Err(Error::InvalidInput("portfolio shapes differ".into()));
        }
        Ok(PortfolioPath {
            grid: self.grid,
            assets: self.assets,
            holdings: self
                .holdings
                .iter()
                .zip(&other.holdings)
                .map(|(a, b)| a - b)
                .collect(),
            derivative: self
                .derivative
                .iter()
                .zip(&other.derivative)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

/// An admissible strategy: a portfolio plus a one-time liquidation index.
#[derive(Debug, Clone)]
pub struct Strategy {
    pub portfolio: PortfolioPath,
    /// Grid index of the exit; the horizon when never exiting early.
    pub exit: usize,
}

impl Strategy {
    pub fn hold_to_horizon(portfolio: PortfolioPath) -> Self {
        let exit = portfolio.grid.steps();
        Self { portfolio, exit }
    }
}

fn gain_term(
    portfolio: &PortfolioPath,
    market: &RoughMarket,
    u: usize,
    v: usize,
    level2: &[f64],
) -> f64 {
    let assets = market.assets();
    let mut local = 0.0;
    for e in 0..assets {
        local += portfolio.holding(u, e) * market.prices().increment(u, v, e);
    }
    for f in 0..assets {
        for e in 0..assets {
            let w = portfolio.derivative_entry(u, f, e);
            if w != 0.0 {
                local += w * level2[f * assets + e];
            }
        }
    }
    local
}

/// Gain path `G_t = int_0^{tau ∧ t} Y dS` on the grid at the finest mesh,
/// frozen after the exit, together with the terminal-gain refinement ladder.
pub fn gain_process(
    strategy: &Strategy,
    market: &RoughMarket,
    mesh_strides: &[usize],
) -> Result<(Vec<f64>, IntegralResult)> {
    let grid = *market.grid();
    if strategy.portfolio.grid != grid || strategy.portfolio.assets != market.assets() {
        return Err(Error::InvalidInput(
            "portfolio does not match the market".into(),
        ));
    }
    let tau = strategy.exit.min(grid.steps());
    let mut gain = Vec::with_capacity(grid.len());
    gain.push(0.0);
    let mut acc = 0.0;
    for u in 0..grid.steps() {
        if u < tau {
            let level2 = market.lift().fine_level2(u);
            acc += gain_term(&strategy.portfolio, market, u, u + 1, level2.as_slice());
        }
        gain.push(acc);
    }
    // Refinement ladder on [0, tau].
    let mut refinements = Vec::with_capacity(mesh_strides.len());
    for &stride in mesh_strides {
        if stride == 0 {
            return Err(Error::InvalidInput("stride zero".into()));
        }
        let mut terms = Vec::with_capacity(tau.div_ceil(stride));
        let mut u = 0usize;
        while u < tau {
            let v = (u + stride).min(tau);
            let level2 = market.lift().level2(u, v);
            terms.push(gain_term(&strategy.portfolio, market, u, v, &level2));
            u = v;
        }
        refinements.push((stride as f64 * grid.dt(), pairwise_sum(&terms)));
    }
    let result = IntegralResult::from_refinements(refinements);
    Ok((gain, result))
}

/// `sup_t |V_{tau ∧ t} - V_0 - G_t|`; the value path defaults to
/// `sum_e Y^e S^e` with holdings frozen at the exit.
pub fn self_financing_residual(
    strategy: &Strategy,
    value_path: Option<&[f64]>,
    market: &RoughMarket,
) -> Result<f64> {
    let grid = *market.grid();
    let (gain, _) = gain_process(strategy, market, &[1])?;
    let tau = strategy.exit.min(grid.steps());
    let own_value;
    let value: &[f64] = match value_path {
        Some(v) => {
            if v.len() != grid.len() {
                return Err(Error::Dimension {
                    expected: grid.len(),
                    got: v.len(),
                });
            }
            v
        }
        None => {
            own_value = strategy.portfolio.value_path(market.prices());
            &own_value
        }
    };
    let mut sup: f64 = 0.0;
    for t in 0..grid.len() {
        let clipped = t.min(tau);
        sup = sup.max((value[clipped] - value[0] - gain[t]).abs());
    }
    Ok(sup)
}

/// The p-th order mean `M^p = ((1/n) sum s_e^p)^{1/p}` of positive prices.
pub fn power_mean(p: f64, prices: &[f64]) -> Result<f64> {
    if p == 0.0 {
        return Err(Error::InvalidInput("power mean needs p != 0".into()));
    }
    let mut acc = 0.0;
    for (e, &s) in prices.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::NonPositivePrice {
                price: s,
                asset: e,
                index: 0,
            });
        }
        acc += s.powf(p);
    }
    Ok((acc / prices.len() as f64).powf(1.0 / p))
}

/// The p-portfolio `Y^e = M^p (S^e)^{p-1} / sum_m (S^m)^p` with its exact
/// Gubinelli derivative; the market's shuffle defect is sampled and returned
/// as a warning-level diagnostic (the value process equals `M^p` only on
/// geometric lifts).
pub fn p_portfolio(p: f64, market: &RoughMarket) -> Result<(PortfolioPath, f64)> {
    if p == 0.0 {
        return Err(Error::InvalidInput("p-portfolio needs p != 0".into()));
    }
    let grid = *market.grid();
    let assets = market.assets();
    let n = assets as f64;
    let mut holdings = vec![0.0; grid.len() * assets];
    let mut derivative = vec![0.0; grid.len() * assets * assets];
    for i in 0..grid.len() {
        let mut sum_p = 0.0;
        for e in 0..assets {
            let s = market.prices().value(i, e);
            if !(s > 0.0) {
                return Err(Error::NonPositivePrice {
                    price: s,
                    asset: e,
                    index: i,
                });
            }
            sum_p += s.powf(p);
        }
        // Y^e = c * s_e^{p-1} * sum_p^{1/p - 1} with c = n^{-1/p}.
        let c = n.powf(-1.0 / p);
        let outer = sum_p.powf(1.0 / p - 1.0);
        let outer_d = sum_p.powf(1.0 / p - 2.0);
        for e in 0..assets {
            let s_e = market.prices().value(i, e);
            holdings[i * assets + e] = c * s_e.powf(p - 1.0) * outer;
            for f in 0..assets {
                let s_f = market.prices().value(i, f);
                let mut d = -c * (p - 1.0) * s_e.powf(p - 1.0) * s_f.powf(p - 1.0) * outer_d;
                if e == f {
                    d += c * (p - 1.0) * s_e.powf(p - 2.0) * outer;
                }
                derivative[i * assets * assets + f * assets + e] = d;
            }
        }
    }
    let portfolio = PortfolioPath::new(grid, assets, holdings, derivative)?;
    // Sampled shuffle defect as the geometricity warning.
    let mut defect: f64 = 0.0;
    let step = (grid.steps() / 16).max(1);
    let mut s = 0;
    while s < grid.steps() {
        let t = (s + step).min(grid.steps());
        defect = defect.max(shuffle_residual_at(market.lift(), s, t));
        s = t;
    }
    defect = defect.max(shuffle_residual_at(market.lift(), 0, grid.steps()));
    Ok((portfolio, defect))
}

/// Outcome of the power-mean arbitrage demonstration.
#[derive(Debug, Clone)]
pub struct ArbitrageReport {
    /// `M^q_t - M^p_t` from the prices directly.
    pub gain_path: Vec<f64>,
    pub min_gain: f64,
    pub terminal_gain: f64,
    /// Self-financing residuals of the long (q) and short (p) legs.
    pub residual_long: f64,
    pub residual_short: f64,
    /// Sampled shuffle defect of the market lift.
    pub geometric_defect: f64,
    /// True when all price coordinates coincide (gain degenerates to zero).
    pub degenerate: bool,
    /// The demo claims a pathwise arbitrage only on (numerically) geometric
    /// lifts with a self-financing gain.
    pub claims_arbitrage: bool,
}

/// Geometricity threshold for the arbitrage claim, relative to price scale.
pub const GEOMETRIC_DEFECT_TOL: f64 = 1e-6;

/// Self-financing threshold for the arbitrage claim.
pub const SELF_FINANCING_TOL: f64 = 1e-4;

/// Long the q-portfolio, short the p-portfolio (`p < q`): the gain equals
/// `M^q_t - M^p_t >= 0`, strictly positive whenever prices differ, provided
/// the lift obeys the chain rule (geometric). On non-geometric lifts the
/// self-financing residual survives and the claim is refused.
pub fn arbitrage_demo(p: f64, q: f64, market: &RoughMarket) -> Result<ArbitrageReport> {
    if !(p < q) {
        return Err(Error::InvalidInput(format!(
            "demo needs p < q, got p = {p}, q = {q}"
        )));
    }
    let grid = *market.grid();
    let assets = market.assets();
    let snapshot = |i: usize| -> Vec<f64> {
        (0..assets).map(|e| market.prices().value(i, e)).collect()
    };
    let start = snapshot(0);
    let degenerate = (0..grid.len()).all(|i| {
        let row = snapshot(i);
        row.iter().all(|s| (s - row[0]).abs() < 1e-14)
    });
    let scale_ok = start
        .iter()
        .all(|s| (*s - 1.0).abs() < 1e-9);
    if !scale_ok {
        return Err(Error::InvalidInput(
            "demo expects unit initial prices (rescale the investment otherwise)".into(),
        ));
    }
    let mut gain_path = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let row = snapshot(i);
        gain_path.push(power_mean(q, &row)? - power_mean(p, &row)?);
    }
    let min_gain = gain_path.iter().cloned().fold(f64::INFINITY, f64::min);
    let terminal_gain = *gain_path.last().unwrap();

    let (long_leg, defect) = p_portfolio(q, market)?;
    let (short_leg, _) = p_portfolio(p, market)?;
    let residual_long =
        self_financing_residual(&Strategy::hold_to_horizon(long_leg), None, market)?;
    let residual_short =
        self_financing_residual(&Strategy::hold_to_horizon(short_leg), None, market)?;

    let geometric = defect <= GEOMETRIC_DEFECT_TOL;
    let self_financing =
        residual_long <= SELF_FINANCING_TOL && residual_short <= SELF_FINANCING_TOL;
    Ok(ArbitrageReport {
        gain_path,
        min_gain,
        terminal_gain,
        residual_long,
        residual_short,
        geometric_defect: defect,
        degenerate,
        claims_arbitrage: geometric && self_financing && !degenerate,
    })
}

/// The t-renormalisation clock `tau_level = inf { s : G2(s) > level }` on a
/// sampled monotone curve, rounded to the nearest grid point.
/// Returns the grid index and the rounding committed by the snap.
pub fn renorm_clock(g2: &[f64], grid: &Grid, level: f64) -> Result<(usize, f64)> {
    if g2.len() != grid.len() {
        return Err(Error::Dimension {
            expected: grid.len(),
            got: g2.len(),
        });
    }
    if g2.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput(
            "renormalisation clock needs a non-decreasing curve".into(),
        ));
    }
    let maximum = *g2.last().unwrap();
    if !(maximum > level) {
        return Err(Error::ClockUnreachable { level, maximum });
    }
    let first_above = g2
        .iter()
        .position(|v| *v > level)
        .expect("maximum exceeds level");
    if first_above == 0 {
        return Ok((0, 0.0));
    }
    // Linear crossing time inside the bracketing interval, then snap.
    let lo = g2[first_above - 1];
    let hi = g2[first_above];
    let frac = if hi > lo { (level - lo) / (hi - lo) } else { 1.0 };
    let crossing = grid.time(first_above - 1) + frac * grid.dt();
    let index = grid.nearest_index(crossing);
    Ok((index, (grid.time(index) - crossing).abs()))
}
