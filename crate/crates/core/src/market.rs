//! Deterministic market inputs: curves, volatility model, correlation.
//!
//! Curves are piecewise constant on right-open intervals `[t_i, t_{i+1})`
//! with flat extrapolation, so every integral used by the pricers is exact.
//! The diffusion matrix is `ν(t[,S]) = diag(σ(t[,S])) · L` where `L` is the
//! lower Cholesky factor of the (time-constant) correlation matrix.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvoError};

/// Piecewise-constant curve keyed by year fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct TermStructure {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TermStructure {
    pub fn new(pillars: Vec<(f64, f64)>) -> Result<Self> {
        Self::validated(pillars, "pillars", false)
    }

    pub fn flat(value: f64) -> Self {
        TermStructure {
            times: vec![0.0],
            values: vec![value],
        }
    }

    fn validated(pillars: Vec<(f64, f64)>, path: &str, nonnegative: bool) -> Result<Self> {
        if pillars.is_empty() {
            return Err(TvoError::validation(path, "at least one pillar is required"));
        }
        for (i, (t, v)) in pillars.iter().enumerate() {
            if !t.is_finite() || *t < 0.0 {
                return Err(TvoError::validation(
                    format!("{path}[{i}]"),
                    format!("pillar time {t} must be finite and >= 0"),
                ));
            }
            if !v.is_finite() {
                return Err(TvoError::validation(format!("{path}[{i}]"), "value must be finite"));
            }
            if nonnegative && *v < 0.0 {
                return Err(TvoError::validation(
                    format!("{path}[{i}]"),
                    format!("volatility {v} must be >= 0"),
                ));
            }
        }
        for (i, w) in pillars.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(TvoError::validation(
                    format!("{path}[{}]", i + 1),
                    "pillar times must be strictly increasing",
                ));
            }
        }
        let (times, values) = pillars.into_iter().unzip();
        Ok(TermStructure { times, values })
    }

    pub fn pillars(&self) -> Vec<(f64, f64)> {
        self.times.iter().copied().zip(self.values.iter().copied()).collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value on `[t_i, t_{i+1})`; flat before the first and after the last pillar.
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&p| p <= t);
        self.values[idx.saturating_sub(1)]
    }

    /// Exact integral over `[t1, t2]`.
    pub fn integrate(&self, t1: f64, t2: f64) -> Result<f64> {
        if !(t1.is_finite() && t2.is_finite()) || t1 < 0.0 {
            return Err(TvoError::Input(format!("integration bounds [{t1}, {t2}] must be finite and >= 0")));
        }
        if t2 < t1 {
            return Err(TvoError::Input(format!("integration bounds reversed: {t2} < {t1}")));
        }
        let mut total = 0.0;
        let mut a = t1;
        while a < t2 {
            let idx = self.times.partition_point(|&p| p <= a);
            let next = self.times.get(idx).copied().unwrap_or(f64::INFINITY);
            let b = next.min(t2);
            total += self.values[idx.saturating_sub(1)] * (b - a);
            a = b;
        }
        Ok(total)
    }
}

/// Exact integral of a piecewise-constant curve over `[t1, t2]`.
pub fn integrate_curve(curve: &TermStructure, t1: f64, t2: f64) -> Result<f64> {
    curve.integrate(t1, t2)
}

/// Constant correlation with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    n: usize,
    entries: Vec<f64>,
    cholesky: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        CorrelationMatrix {
            n,
            cholesky: entries.clone(),
            entries,
        }
    }

    /// Row-major `n × n` entries.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(TvoError::validation(
                "correlation",
                format!("expected {} entries for {n} assets, got {}", n * n, entries.len()),
            ));
        }
        for i in 0..n {
            for j in 0..n {
                let v = entries[i * n + j];
                let path = format!("correlation[{i}][{j}]");
                if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                    return Err(TvoError::validation(path, format!("entry {v} outside [-1, 1]")));
                }
                if i == j && v != 1.0 {
                    return Err(TvoError::validation(path, "diagonal entries must be exactly 1"));
                }
                if v != entries[j * n + i] {
                    return Err(TvoError::validation(path, "matrix must be symmetric"));
                }
            }
        }
        let chol = DMatrix::from_row_slice(n, n, &entries)
            .cholesky()
            .ok_or(TvoError::NotPositiveDefinite)?;
        let l = chol.l();
        let mut cholesky = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                cholesky[i * n + j] = l[(i, j)];
            }
        }
        Ok(CorrelationMatrix { n, entries, cholesky })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Lower Cholesky factor, row-major.
    pub fn cholesky(&self) -> &[f64] {
        &self.cholesky
    }
}

/// Local volatility on a (time × log-moneyness) grid.
///
/// Bilinear interpolation inside the grid, flat outside.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalVolSurface {
    times: Vec<f64>,
    log_moneyness: Vec<f64>,
    /// `values[i][j]` is the vol at `times[i]`, `log_moneyness[j]`.
    values: Vec<Vec<f64>>,
}

impl LocalVolSurface {
    pub fn new(times: Vec<f64>, log_moneyness: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::validated(times, log_moneyness, values, "surface")
    }

    pub fn flat(vol: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![0.0], vec![vec![vol]])
    }

    fn validated(
        times: Vec<f64>,
        log_moneyness: Vec<f64>,
        values: Vec<Vec<f64>>,
        path: &str,
    ) -> Result<Self> {
        for (axis, grid) in [("times", &times), ("log_moneyness", &log_moneyness)] {
            if grid.is_empty() {
                return Err(TvoError::validation(format!("{path}.{axis}"), "axis is empty"));
            }
            if grid.iter().any(|x| !x.is_finite()) {
                return Err(TvoError::validation(format!("{path}.{axis}"), "axis values must be finite"));
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(TvoError::validation(
                    format!("{path}.{axis}"),
                    "axis must be strictly increasing",
                ));
            }
        }
        if values.len() != times.len() {
            return Err(TvoError::validation(
                format!("{path}.values"),
                format!("expected {} rows (one per time), got {}", times.len(), values.len()),
            ));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != log_moneyness.len() {
                return Err(TvoError::validation(
                    format!("{path}.values[{i}]"),
                    format!("expected {} columns, got {}", log_moneyness.len(), row.len()),
                ));
            }
            if let Some(j) = row.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(TvoError::validation(
                    format!("{path}.values[{i}][{j}]"),
                    "local vols must be finite and > 0",
                ));
            }
        }
        Ok(LocalVolSurface {
            times,
            log_moneyness,
            values,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn log_moneyness(&self) -> &[f64] {
        &self.log_moneyness
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn vol(&self, t: f64, k: f64) -> f64 {
        let (i0, i1, wt) = bracket(&self.times, t);
        let (j0, j1, wk) = bracket(&self.log_moneyness, k);
        let lerp = |a: f64, b: f64, w: f64| a + w * (b - a);
        let lo = lerp(self.values[i0][j0], self.values[i0][j1], wk);
        let hi = lerp(self.values[i1][j0], self.values[i1][j1], wk);
        lerp(lo, hi, wt)
    }
}

/// Bracketing indices and weight with flat extrapolation.
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let last = axis.len() - 1;
    if x <= axis[0] {
        return (0, 0, 0.0);
    }
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&p| p <= x);
    let lo = hi - 1;
    (lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssetVol {
    BlackScholes(TermStructure),
    Local(LocalVolSurface),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Asset {
    pub name: String,
    pub spot: f64,
    pub carry: TermStructure,
    pub vol: AssetVol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolMode {
    Bs,
    Lv,
}

/// All deterministic market inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketData {
    assets: Vec<Asset>,
    rate: TermStructure,
    fee: TermStructure,
    funding_spread: TermStructure,
    correlation: CorrelationMatrix,
    mode: VolMode,
}

impl MarketData {
    pub fn new(
        assets: Vec<Asset>,
        rate: TermStructure,
        fee: TermStructure,
        funding_spread: TermStructure,
        correlation: CorrelationMatrix,
    ) -> Result<Self> {
        if assets.is_empty() {
            return Err(TvoError::validation("assets", "at least one asset is required"));
        }
        if correlation.dim() != assets.len() {
            return Err(TvoError::validation(
                "correlation",
                format!("dimension {} does not match {} assets", correlation.dim(), assets.len()),
            ));
        }
        for (i, a) in assets.iter().enumerate() {
            if !(a.spot.is_finite() && a.spot > 0.0) {
                return Err(TvoError::validation(format!("assets[{i}].spot"), "spot must be > 0"));
            }
            if let AssetVol::BlackScholes(ts) = &a.vol {
                if ts.values().iter().any(|v| *v < 0.0) {
                    return Err(TvoError::validation(format!("assets[{i}].vol.pillars"), "vols must be >= 0"));
                }
            }
        }
        let lv = assets.iter().filter(|a| matches!(a.vol, AssetVol::Local(_))).count();
        let mode = match lv {
            0 => VolMode::Bs,
            k if k == assets.len() => VolMode::Lv,
            _ => {
                return Err(TvoError::validation(
                    "assets",
                    "all assets must share the same vol type (bs or lv)",
                ))
            }
        };
        Ok(MarketData {
            assets,
            rate,
            fee,
            funding_spread,
            correlation,
            mode,
        })
    }

    pub fn n(&self) -> usize {
        self.assets.len()
    }

    pub fn assets(&self) -> &[Asset] {
        &self.assets
    }

    pub fn rate(&self) -> &TermStructure {
        &self.rate
    }

    pub fn fee(&self) -> &TermStructure {
        &self.fee
    }

    pub fn funding_spread(&self) -> &TermStructure {
        &self.funding_spread
    }

    pub fn correlation(&self) -> &CorrelationMatrix {
        &self.correlation
    }

    pub fn vol_mode(&self) -> VolMode {
        self.mode
    }

    pub fn is_local_vol(&self) -> bool {
        self.mode == VolMode::Lv
    }

    pub fn spots(&self) -> Vec<f64> {
        self.assets.iter().map(|a| a.spot).collect()
    }

    pub fn carry_at(&self, t: f64) -> Vec<f64> {
        self.assets.iter().map(|a| a.carry.value_at(t)).collect()
    }

    pub fn carry_into(&self, t: f64, out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(&self.assets) {
            *o = a.carry.value_at(t);
        }
    }

    /// `F_i(0,t) = S_0^i · exp(∫_0^t (r − μ_i))`.
    pub fn forward(&self, asset: usize, t: f64) -> Result<f64> {
        let a = &self.assets[asset];
        Ok(a.spot * (self.rate.integrate(0.0, t)? - a.carry.integrate(0.0, t)?).exp())
    }

    pub fn forwards(&self, t: f64) -> Result<Vec<f64>> {
        (0..self.n()).map(|i| self.forward(i, t)).collect()
    }

    /// `exp(−∫(r + funding spread))` over `[t1, t2]`.
    pub fn discount(&self, t1: f64, t2: f64) -> Result<f64> {
        Ok((-(self.rate.integrate(t1, t2)? + self.funding_spread.integrate(t1, t2)?)).exp())
    }

    /// Per-asset volatilities at `t` (and spots, in LV mode).
    pub fn vols_into(&self, t: f64, spots: Option<&[f64]>, out: &mut [f64]) -> Result<()> {
        if t < 0.0 || !t.is_finite() {
            return Err(TvoError::Input(format!("time {t} must be >= 0")));
        }
        match self.mode {
            VolMode::Bs => {
                for (o, a) in out.iter_mut().zip(&self.assets) {
                    if let AssetVol::BlackScholes(ts) = &a.vol {
                        *o = ts.value_at(t);
                    }
                }
            }
            VolMode::Lv => {
                let spots = spots.ok_or_else(|| {
                    TvoError::Input("local-vol market requires spots to build the diffusion matrix".into())
                })?;
                if spots.len() != self.n() {
                    return Err(TvoError::Input(format!("expected {} spots, got {}", self.n(), spots.len())));
                }
                for (i, (o, a)) in out.iter_mut().zip(&self.assets).enumerate() {
                    if let AssetVol::Local(surface) = &a.vol {
                        if !(spots[i] > 0.0) {
                            return Err(TvoError::Input(format!("spot {} of asset {i} must be > 0", spots[i])));
                        }
                        let k = (spots[i] / self.forward(i, t)?).ln();
                        *o = surface.vol(t, k);
                    }
                }
            }
        }
        Ok(())
    }

    /// Row-major `ν = diag(σ) · L` written into `out` (length `n²`).
    pub fn nu_into(&self, t: f64, spots: Option<&[f64]>, sigmas: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.vols_into(t, spots, sigmas)?;
        let n = self.n();
        let l = self.correlation.cholesky();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = sigmas[i] * l[i * n + j];
            }
        }
        Ok(())
    }

    /// Sorted, de-duplicated pillar times of every curve (vol term structures included).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .rate
            .times()
            .iter()
            .chain(self.fee.times())
            .chain(self.funding_spread.times())
            .copied()
            .collect();
        for a in &self.assets {
            out.extend_from_slice(a.carry.times());
            if let AssetVol::BlackScholes(ts) = &a.vol {
                out.extend_from_slice(ts.times());
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// `ν(t[,S])` as a matrix.
pub fn build_nu(market: &MarketData, t: f64, spots: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let n = market.n();
    let mut sig = vec![0.0; n];
    let mut nu = vec![0.0; n * n];
    market.nu_into(t, spots, &mut sig, &mut nu)?;
    Ok(DMatrix::from_row_slice(n, n, &nu))
}

pub fn discount(market: &MarketData, t1: f64, t2: f64) -> Result<f64> {
    market.discount(t1, t2)
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketFile {
    assets: Vec<AssetFile>,
    rate_pillars: Vec<[f64; 2]>,
    #[serde(default = "zero_pillars")]
    fee_pillars: Vec<[f64; 2]>,
    #[serde(default = "zero_pillars")]
    funding_spread_pillars: Vec<[f64; 2]>,
    correlation: CorrelationFile,
}

fn zero_pillars() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0]]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssetFile {
    name: String,
    spot: f64,
    carry_pillars: Vec<[f64; 2]>,
    vol: VolFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum VolFile {
    Bs {
        pillars: Vec<[f64; 2]>,
    },
    Lv {
        times: Vec<f64>,
        log_moneyness: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum CorrelationFile {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

fn pillars_of(p: &[[f64; 2]]) -> Vec<(f64, f64)> {
    p.iter().map(|[t, v]| (*t, *v)).collect()
}

fn file_pillars(ts: &TermStructure) -> Vec<[f64; 2]> {
    ts.pillars().into_iter().map(|(t, v)| [t, v]).collect()
}

impl MarketFile {
    fn into_market(self) -> Result<MarketData> {
        let n = self.assets.len();
        let mut assets = Vec::with_capacity(n);
        for (i, a) in self.assets.into_iter().enumerate() {
            let carry = TermStructure::validated(pillars_of(&a.carry_pillars), &format!("assets[{i}].carry_pillars"), false)?;
            let vol = match a.vol {
                VolFile::Bs { pillars } => AssetVol::BlackScholes(TermStructure::validated(
                    pillars_of(&pillars),
                    &format!("assets[{i}].vol.pillars"),
                    true,
                )?),
                VolFile::Lv {
                    times,
                    log_moneyness,
                    values,
                } => AssetVol::Local(LocalVolSurface::validated(
                    times,
                    log_moneyness,
                    values,
                    &format!("assets[{i}].vol"),
                )?),
            };
            assets.push(Asset {
                name: a.name,
                spot: a.spot,
                carry,
                vol,
            });
        }
        let entries = match self.correlation {
            CorrelationFile::Flat(v) => v,
            CorrelationFile::Nested(rows) => {
                if let Some(i) = rows.iter().position(|r| r.len() != n) {
                    return Err(TvoError::validation(format!("correlation[{i}]"), format!("row must have {n} entries")));
                }
                rows.into_iter().flatten().collect()
            }
        };
        let correlation = CorrelationMatrix::new(n, entries)?;
        MarketData::new(
            assets,
            TermStructure::validated(pillars_of(&self.rate_pillars), "rate_pillars", false)?,
            TermStructure::validated(pillars_of(&self.fee_pillars), "fee_pillars", false)?,
            TermStructure::validated(pillars_of(&self.funding_spread_pillars), "funding_spread_pillars", false)?,
            correlation,
        )
    }

    fn from_market(m: &MarketData) -> Self {
        MarketFile {
            assets: m
                .assets
                .iter()
                .map(|a| AssetFile {
                    name: a.name.clone(),
                    spot: a.spot,
                    carry_pillars: file_pillars(&a.carry),
                    vol: match &a.vol {
                        AssetVol::BlackScholes(ts) => VolFile::Bs {
                            pillars: file_pillars(ts),
                        },
                        AssetVol::Local(s) => VolFile::Lv {
                            times: s.times.clone(),
                            log_moneyness: s.log_moneyness.clone(),
                            values: s.values.clone(),
                        },
                    },
                })
                .collect(),
            rate_pillars: file_pillars(&m.rate),
            fee_pillars: file_pillars(&m.fee),
            funding_spread_pillars: file_pillars(&m.funding_spread),
            correlation: CorrelationFile::Flat(m.correlation.entries.clone()),
        }
    }
}

pub fn parse_market(json: &str) -> Result<MarketData> {
    let file: MarketFile =
        serde_json::from_str(json).map_err(|e| TvoError::validation("document", e.to_string()))?;
    file.into_market()
}

pub fn load_market(path: impl AsRef<Path>) -> Result<MarketData> {
    let text = std::fs::read_to_string(path)?;
    parse_market(&text)
}

pub fn market_to_json(market: &MarketData) -> String {
    serde_json::to_string_pretty(&MarketFile::from_market(market)).expect("market serialization is infallible")
}

pub fn save_market(market: &MarketData, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, market_to_json(market))?;
    Ok(())
}

/// Test and example helpers for building BS markets with flat curves.
pub fn flat_bs_market(
    spots: &[f64],
    carries: &[f64],
    vols: &[f64],
    correlation: CorrelationMatrix,
    rate: f64,
    fee: f64,
) -> Result<MarketData> {
    let assets = spots
        .iter()
        .zip(carries)
        .zip(vols)
        .enumerate()
        .map(|(i, ((s, m), v))| Asset {
            name: format!("asset{}", i + 1),
            spot: *s,
            carry: TermStructure::flat(*m),
            vol: AssetVol::BlackScholes(TermStructure::flat(*v)),
        })
        .collect();
    MarketData::new(
        assets,
        TermStructure::flat(rate),
        TermStructure::flat(fee),
        TermStructure::flat(0.0),
        correlation,
    )
}
