//! European option prices on the index: Black formula, the
//! carry-adjusted forward, the closed-form price and Monte Carlo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvoError};
use crate::market::MarketData;
use crate::simulator::{tvs_label, PathContext, PathSet, SimConfig, CHUNK};
use crate::strategy::{local_drift, FixingView, StrategySpec};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payoff {
    Call,
    Put,
}

impl Payoff {
    pub fn value(self, underlying: f64, strike: f64) -> f64 {
        match self {
            Payoff::Call => (underlying - strike).max(0.0),
            Payoff::Put => (strike - underlying).max(0.0),
        }
    }
}

impl std::str::FromStr for Payoff {
    type Err = TvoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "call" => Ok(Payoff::Call),
            "put" => Ok(Payoff::Put),
            other => Err(TvoError::Input(format!("unknown payoff '{other}' (expected call or put)"))),
        }
    }
}

/// The option contract on the index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvoSpec {
    /// Index level at inception.
    pub spot: f64,
    pub strike: f64,
    pub maturity: f64,
    pub sigma_bar: f64,
    pub payoff: Payoff,
}

impl TvoSpec {
    pub fn new(spot: f64, strike: f64, maturity: f64, sigma_bar: f64, payoff: Payoff) -> Result<Self> {
        let spec = TvoSpec {
            spot,
            strike,
            maturity,
            sigma_bar,
            payoff,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("spot", self.spot), ("strike", self.strike), ("maturity", self.maturity)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TvoError::Input(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.sigma_bar.is_finite() && self.sigma_bar >= 0.0) {
            return Err(TvoError::Input(format!("target vol must be >= 0, got {}", self.sigma_bar)));
        }
        Ok(())
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `D·(F N(d₁) − K N(d₂))` for calls, the parity counterpart for puts.
pub fn black_formula(forward: f64, strike: f64, maturity: f64, sigma: f64, discount: f64, payoff: Payoff) -> Result<f64> {
    if !(forward > 0.0 && strike > 0.0 && discount > 0.0) {
        return Err(TvoError::Input(format!(
            "forward, strike and discount must be > 0 (got {forward}, {strike}, {discount})"
        )));
    }
    if !(maturity >= 0.0 && sigma >= 0.0) {
        return Err(TvoError::Input(format!("maturity and vol must be >= 0 (got {maturity}, {sigma})")));
    }
    let sd = sigma * maturity.sqrt();
    if sd == 0.0 {
        return Ok(discount * payoff.value(forward, strike));
    }
    let d1 = ((forward / strike).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    Ok(match payoff {
        Payoff::Call => discount * (forward * norm_cdf(d1) - strike * norm_cdf(d2)),
        Payoff::Put => discount * (strike * norm_cdf(-d2) - forward * norm_cdf(-d1)),
    })
}

/// Integral of the local drift of a time-deterministic strategy over `[t, t_end]`.
pub fn integrated_local_drift(market: &MarketData, tvo: &TvoSpec, strategy: &StrategySpec, t: f64, t_end: f64) -> Result<f64> {
    if market.is_local_vol() {
        return Err(TvoError::UnsupportedMode { required: "bs" });
    }
    if !strategy.is_time_deterministic() {
        return Err(TvoError::Input("the carry-adjusted forward needs a time-deterministic strategy".into()));
    }
    if t_end < t {
        return Err(TvoError::Input(format!("interval reversed: {t_end} < {t}")));
    }
    strategy.validate(market.n())?;
    let mut cuts: Vec<f64> = market
        .breakpoints()
        .into_iter()
        .chain(strategy.breakpoints().iter().copied())
        .filter(|&u| u > t && u < t_end)
        .collect();
    cuts.push(t);
    cuts.push(t_end);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let fwd = market.forwards(a)?;
        let view = FixingView {
            t: a,
            spots: &fwd,
            index: tvo.spot,
            index0: tvo.spot,
        };
        let alpha = strategy.allocate(market, &view)?;
        if tvo.sigma_bar > 0.0 {
            total += local_drift(&alpha, market, a, None, tvo.sigma_bar)? * (b - a);
        }
    }
    Ok(total)
}

/// `I_t · exp(∫_t^{t_end} (r − φ − ℓ_α))`.
pub fn tvs_forward(
    market: &MarketData,
    tvo: &TvoSpec,
    strategy: &StrategySpec,
    t: f64,
    t_end: f64,
    index_level: f64,
) -> Result<f64> {
    let ell = integrated_local_drift(market, tvo, strategy, t, t_end)?;
    let carry = market.rate().integrate(t, t_end)? - market.fee().integrate(t, t_end)?;
    Ok(index_level * (carry - ell).exp())
}

/// Closed-form price under a time-deterministic strategy in a BS market.
pub fn bs_closed_price(market: &MarketData, tvo: &TvoSpec, strategy: &StrategySpec) -> Result<f64> {
    tvo.validate()?;
    let fwd = tvs_forward(market, tvo, strategy, 0.0, tvo.maturity, tvo.spot)?;
    black_formula(
        fwd,
        tvo.strike,
        tvo.maturity,
        tvo.sigma_bar,
        market.discount(0.0, tvo.maturity)?,
        tvo.payoff,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub price: f64,
    pub std_error: f64,
    pub ci99: [f64; 2],
    pub paths_used: usize,
}

impl McResult {
    fn from_stats(stats: Stats, discount: f64) -> Result<Self> {
        if stats.count == 0 {
            return Err(TvoError::Input("no paths to price".into()));
        }
        let var = if stats.count > 1 { stats.m2 / (stats.count - 1) as f64 } else { 0.0 };
        let price = discount * stats.mean;
        let std_error = discount * (var / stats.count as f64).sqrt();
        Ok(McResult {
            price,
            std_error,
            ci99: [price - Z99 * std_error, price + Z99 * std_error],
            paths_used: stats.count,
        })
    }
}

/// Running count/mean/sum of squared deviations, merged in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Stats {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Stats) -> Stats {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Stats {
            count,
            mean: self.mean + delta * other.count as f64 / count as f64,
            m2: self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / count as f64,
        }
    }
}

fn stats_of(values: impl Iterator<Item = f64>) -> Stats {
    let mut s = Stats::default();
    for v in values {
        s.push(v);
    }
    s
}

/// Monte Carlo price from stored paths.
pub fn mc_price_paths(paths: &PathSet, market: &MarketData, tvo: &TvoSpec) -> Result<McResult> {
    let maturity = *paths.grid.last().ok_or_else(|| TvoError::Input("empty grid".into()))?;
    if (maturity - tvo.maturity).abs() > 1e-12 {
        return Err(TvoError::Input("paths do not terminate at the option maturity".into()));
    }
    let terminal: Vec<f64> = paths.terminal_index().collect();
    let stats = terminal
        .chunks(CHUNK)
        .map(|c| stats_of(c.iter().map(|&i| tvo.payoff.value(i, tvo.strike))))
        .fold(Stats::default(), Stats::merge);
    McResult::from_stats(stats, market.discount(0.0, tvo.maturity)?)
}

/// Monte Carlo price without storing paths. Uses the same random streams as
/// [`crate::simulator::simulate_tvs`], so both agree bitwise for equal inputs.
pub fn mc_price(market: &MarketData, strategy: &StrategySpec, tvo: &TvoSpec, config: &SimConfig) -> Result<McResult> {
    mc_price_labelled(market, strategy, tvo, config, tvs_label())
}

pub(crate) fn mc_price_labelled(
    market: &MarketData,
    strategy: &StrategySpec,
    tvo: &TvoSpec,
    config: &SimConfig,
    label: &str,
) -> Result<McResult> {
    let ctx = PathContext::new(market, strategy, tvo, config, label)?;
    let chunks = config.paths.div_ceil(CHUNK);
    let parts: Vec<Result<Stats>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = Stats::default();
            for p in c * CHUNK..((c + 1) * CHUNK).min(config.paths) {
                let out = ctx.run(p, None)?;
                s.push(tvo.payoff.value(out.terminal, tvo.strike));
            }
            Ok(s)
        })
        .collect();
    let mut stats = Stats::default();
    for p in parts {
        stats = stats.merge(p?);
    }
    McResult::from_stats(stats, market.discount(0.0, tvo.maturity)?)
}
