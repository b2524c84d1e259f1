//! Joint simulation of the assets and the target-volatility index.
//!
//! Assets follow exact log-Euler steps. Between two substeps the index moves
//! by `(r − φ)Δt − ω(α·μ)Δt − ½ω²‖α·ν‖²Δt + ω α·(ν Z √Δt)` with
//! `ω = σ̄/‖α·ν‖` (optionally capped at 1), driven by the same normals as the
//! assets. The allocation is refreshed only at fixings.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvoError};
use crate::market::MarketData;
use crate::pricing::TvoSpec;
use crate::rng::StreamKey;
use crate::strategy::{dot, FixingView, StrategySpec, DEGENERATE_FLOOR};

/// Paths per parallel work unit. Fixed so reductions do not depend on the
/// number of workers.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub paths: usize,
    /// Fixing times `0 = T_0 < … < T_m = T`.
    pub grid: Vec<f64>,
    pub substeps_per_fixing: usize,
    pub seed: u64,
    /// Use `min(1, σ̄/‖α·ν‖)` instead of the uncapped scaling.
    #[serde(default)]
    pub cap_omega: bool,
}

impl SimConfig {
    pub fn new(paths: usize, grid: Vec<f64>, substeps_per_fixing: usize, seed: u64) -> Self {
        SimConfig {
            paths,
            grid,
            substeps_per_fixing,
            seed,
            cap_omega: false,
        }
    }

    pub fn validate(&self, maturity: f64) -> Result<()> {
        if self.paths == 0 {
            return Err(TvoError::Input("path count must be positive".into()));
        }
        if self.substeps_per_fixing == 0 {
            return Err(TvoError::Input("substeps per fixing must be positive".into()));
        }
        validate_grid(&self.grid, maturity)
    }
}

pub fn validate_grid(grid: &[f64], maturity: f64) -> Result<()> {
    if grid.len() < 2 {
        return Err(TvoError::Input("fixing grid needs at least two points".into()));
    }
    if grid[0] != 0.0 {
        return Err(TvoError::Input("fixing grid must start at 0".into()));
    }
    if (grid[grid.len() - 1] - maturity).abs() > 1e-12 {
        return Err(TvoError::Input(format!("fixing grid must end at maturity {maturity}")));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(TvoError::Input("fixing grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Uniform grid with `fixings_per_year` points per year, merged with every
/// market pillar inside `(0, T)` so curve coefficients are constant between
/// fixings.
pub fn fixing_grid(market: &MarketData, maturity: f64, fixings_per_year: usize) -> Result<Vec<f64>> {
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(TvoError::Input(format!("maturity {maturity} must be > 0")));
    }
    if fixings_per_year == 0 {
        return Err(TvoError::Input("fixings per year must be positive".into()));
    }
    let m = ((maturity * fixings_per_year as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..=m).map(|k| maturity * k as f64 / m as f64).collect();
    grid.extend(market.breakpoints().into_iter().filter(|&t| t > 0.0 && t < maturity));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    *grid.last_mut().expect("non-empty") = maturity;
    Ok(grid)
}

/// Substeps per fixing so that the widest fixing interval gets at least
/// `substeps_per_year` steps per year.
pub fn substeps_for(grid: &[f64], substeps_per_year: usize) -> usize {
    let widest = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    ((widest * substeps_per_year as f64) - 1e-9).ceil().max(1.0) as usize
}

/// `σ̄ / ‖α·ν‖`, optionally capped at 1.
pub fn omega(alpha: &[f64], nu: &nalgebra::DMatrix<f64>, sigma_bar: f64, cap: bool) -> Result<f64> {
    let a = nalgebra::DVector::from_column_slice(alpha);
    let norm = (nu.transpose() * a).norm();
    scaling(norm, sigma_bar, cap)
}

fn scaling(norm: f64, sigma_bar: f64, cap: bool) -> Result<f64> {
    if !(norm >= DEGENERATE_FLOOR) {
        return Err(TvoError::DegenerateAllocation { norm, location: None });
    }
    let w = sigma_bar / norm;
    Ok(if cap { w.min(1.0) } else { w })
}

/// Coefficients driving one substep.
#[derive(Debug, Clone)]
pub(crate) struct Drivers {
    pub dt: f64,
    /// `(r − φ)Δt`
    pub rf: f64,
    pub mu: Vec<f64>,
    /// Row-major `Σ = ννᵀ`.
    pub cov: Vec<f64>,
    /// `ν Z √Δt`
    pub shock: Vec<f64>,
}

impl Drivers {
    pub fn new(n: usize) -> Self {
        Drivers {
            dt: 0.0,
            rf: 0.0,
            mu: vec![0.0; n],
            cov: vec![0.0; n * n],
            shock: vec![0.0; n],
        }
    }

    fn quad(&self, alpha: &[f64], out: &mut [f64]) -> f64 {
        quad_form(&self.cov, alpha, out)
    }
}

/// `αᵀΣα`, leaving `Σα` in `out`.
fn quad_form(cov: &[f64], alpha: &[f64], out: &mut [f64]) -> f64 {
    let n = alpha.len();
    let mut q = 0.0;
    for i in 0..n {
        out[i] = dot(&cov[i * n..(i + 1) * n], alpha);
        q += alpha[i] * out[i];
    }
    q
}

/// Log-index increment and the applied scaling.
pub(crate) fn index_increment(alpha: &[f64], d: &Drivers, sigma_bar: f64, cap: bool) -> Result<(f64, f64)> {
    let n = alpha.len();
    let mut q = 0.0;
    for i in 0..n {
        q += alpha[i] * dot(&d.cov[i * n..(i + 1) * n], alpha);
    }
    let norm = q.max(0.0).sqrt();
    let w = scaling(norm, sigma_bar, cap)?;
    let inc = d.rf - w * dot(alpha, &d.mu) * d.dt - 0.5 * w * w * q * d.dt + w * dot(alpha, &d.shock);
    Ok((inc, w))
}

/// As [`index_increment`], also accumulating `∂ increment / ∂α` into `grad`.
pub(crate) fn index_increment_grad(
    alpha: &[f64],
    d: &Drivers,
    sigma_bar: f64,
    cap: bool,
    scratch: &mut [f64],
    grad: &mut [f64],
) -> Result<f64> {
    let q = d.quad(alpha, scratch);
    let norm = q.max(0.0).sqrt();
    let w = scaling(norm, sigma_bar, cap)?;
    let am = dot(alpha, &d.mu);
    let ash = dot(alpha, &d.shock);
    let inc = d.rf - w * am * d.dt - 0.5 * w * w * q * d.dt + w * ash;
    let u = scratch;
    if cap && sigma_bar >= norm {
        for i in 0..alpha.len() {
            grad[i] += -d.mu[i] * d.dt - u[i] * d.dt + d.shock[i];
        }
    } else {
        let n3 = norm * norm * norm;
        for i in 0..alpha.len() {
            let drift = d.mu[i] / norm - am * u[i] / n3;
            let diff = d.shock[i] / norm - ash * u[i] / n3;
            grad[i] += sigma_bar * (diff - drift * d.dt);
        }
    }
    Ok(inc)
}

/// Per-substep coefficients of a BS market, computed once and shared by all paths.
pub(crate) struct CoefTable {
    times: Vec<f64>,
    dts: Vec<f64>,
    rf: Vec<f64>,
    mu: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    cov: Vec<Vec<f64>>,
}

fn fill_cov(nu: &[f64], n: usize, cov: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            cov[i * n + j] = dot(&nu[i * n..(i + 1) * n], &nu[j * n..(j + 1) * n]);
        }
    }
}

/// Substep start times and lengths for a fixing grid.
pub(crate) fn substep_schedule(grid: &[f64], substeps: usize) -> (Vec<f64>, Vec<f64>) {
    let mut times = Vec::with_capacity((grid.len() - 1) * substeps);
    let mut dts = Vec::with_capacity(times.capacity());
    for w in grid.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for j in 0..substeps {
            times.push(w[0] + h * j as f64);
            dts.push(h);
        }
    }
    (times, dts)
}

fn rate_minus_fee(market: &MarketData, t: f64) -> f64 {
    market.rate().value_at(t) - market.fee().value_at(t)
}

impl CoefTable {
    /// The shared table for BS markets, `None` in local-vol mode.
    pub(crate) fn for_market(market: &MarketData, grid: &[f64], substeps: usize) -> Result<Option<Self>> {
        if market.is_local_vol() {
            Ok(None)
        } else {
            Ok(Some(CoefTable::new(market, grid, substeps)?))
        }
    }

    fn new(market: &MarketData, grid: &[f64], substeps: usize) -> Result<Self> {
        let n = market.n();
        let (times, dts) = substep_schedule(grid, substeps);
        let mut sig = vec![0.0; n];
        let mut table = CoefTable {
            rf: Vec::with_capacity(times.len()),
            mu: Vec::with_capacity(times.len()),
            nu: Vec::with_capacity(times.len()),
            cov: Vec::with_capacity(times.len()),
            times,
            dts,
        };
        for (&t, &dt) in table.times.iter().zip(&table.dts) {
            let mut nu = vec![0.0; n * n];
            market.nu_into(t, None, &mut sig, &mut nu)?;
            let mut cov = vec![0.0; n * n];
            fill_cov(&nu, n, &mut cov);
            table.rf.push(rate_minus_fee(market, t) * dt);
            table.mu.push(market.carry_at(t));
            table.nu.push(nu);
            table.cov.push(cov);
        }
        Ok(table)
    }
}

/// Steps one path's asset vector and exposes the substep drivers.
pub(crate) struct AssetStepper<'a> {
    market: &'a MarketData,
    table: Option<&'a CoefTable>,
    n: usize,
    pub log_s: Vec<f64>,
    pub spots: Vec<f64>,
    sig: Vec<f64>,
    nu: Vec<f64>,
    z: Vec<f64>,
    pub drivers: Drivers,
}

impl<'a> AssetStepper<'a> {
    pub(crate) fn new(market: &'a MarketData, table: Option<&'a CoefTable>) -> Self {
        let n = market.n();
        let spots = market.spots();
        AssetStepper {
            market,
            table,
            n,
            log_s: spots.iter().map(|s| s.ln()).collect(),
            spots,
            sig: vec![0.0; n],
            nu: vec![0.0; n * n],
            z: vec![0.0; n],
            drivers: Drivers::new(n),
        }
    }

    /// Advances the assets over substep `j` starting at `t`.
    pub(crate) fn step(&mut self, j: usize, t: f64, dt: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        let n = self.n;
        for z in self.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let d = &mut self.drivers;
        d.dt = dt;
        let nu: &[f64] = match self.table {
            Some(tab) => {
                d.rf = tab.rf[j];
                d.mu.copy_from_slice(&tab.mu[j]);
                d.cov.copy_from_slice(&tab.cov[j]);
                &tab.nu[j]
            }
            None => {
                self.market.nu_into(t, Some(&self.spots), &mut self.sig, &mut self.nu)?;
                fill_cov(&self.nu, n, &mut d.cov);
                d.rf = rate_minus_fee(self.market, t) * dt;
                self.market.carry_into(t, &mut d.mu);
                &self.nu
            }
        };
        let sq = dt.sqrt();
        let r = self.market.rate().value_at(t);
        for i in 0..n {
            d.shock[i] = dot(&nu[i * n..(i + 1) * n], &self.z) * sq;
            self.log_s[i] += (r - d.mu[i] - 0.5 * d.cov[i * n + i]) * dt + d.shock[i];
            self.spots[i] = self.log_s[i].exp();
        }
        Ok(())
    }
}

/// One fixing of one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathState {
    pub t: f64,
    pub spots: Vec<f64>,
    pub index: f64,
    /// Scaling applied on the substep that follows this fixing (the last
    /// applied one at maturity).
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSet {
    pub grid: Vec<f64>,
    pub substeps_per_fixing: usize,
    pub seed: u64,
    pub stream_label: String,
    /// `paths[p][k]` is path `p` at fixing `k`.
    pub paths: Vec<Vec<PathState>>,
    /// Sum of squared substep log-index increments per path.
    pub quadratic_variation: Vec<f64>,
}

impl PathSet {
    pub fn terminal_index(&self) -> impl Iterator<Item = f64> + '_ {
        self.paths.iter().map(|p| p[p.len() - 1].index)
    }

    /// CSV with columns `path,fixing,t,S_1..S_n,I,omega`.
    pub fn to_csv(&self) -> String {
        let n = self.paths.first().and_then(|p| p.first()).map_or(0, |s| s.spots.len());
        let mut out = String::from("path,fixing,t");
        for i in 1..=n {
            out.push_str(&format!(",S_{i}"));
        }
        out.push_str(",I,omega\n");
        for (p, path) in self.paths.iter().enumerate() {
            for (k, s) in path.iter().enumerate() {
                out.push_str(&format!("{p},{k},{}", s.t));
                for v in &s.spots {
                    out.push_str(&format!(",{v}"));
                }
                out.push_str(&format!(",{},{}\n", s.index, s.omega));
            }
        }
        out
    }
}

/// Where allocations come from during a simulation.
pub(crate) enum Allocations<'a> {
    /// One allocation per fixing, shared by all paths.
    Fixed(Vec<Vec<f64>>),
    Dynamic(&'a StrategySpec),
}

impl<'a> Allocations<'a> {
    pub fn new(market: &MarketData, strategy: &'a StrategySpec, tvo: &TvoSpec, grid: &[f64]) -> Result<Self> {
        strategy.validate(market.n())?;
        if strategy.is_time_deterministic() && !market.is_local_vol() {
            let mut fixed = Vec::with_capacity(grid.len() - 1);
            for &t in &grid[..grid.len() - 1] {
                let fwd = market.forwards(t)?;
                let view = FixingView {
                    t,
                    spots: &fwd,
                    index: tvo.spot,
                    index0: tvo.spot,
                };
                fixed.push(strategy.allocate(market, &view)?);
            }
            Ok(Allocations::Fixed(fixed))
        } else {
            Ok(Allocations::Dynamic(strategy))
        }
    }

    fn get(&self, market: &MarketData, k: usize, view: &FixingView) -> Result<std::borrow::Cow<'_, [f64]>> {
        match self {
            Allocations::Fixed(v) => Ok(std::borrow::Cow::Borrowed(&v[k])),
            Allocations::Dynamic(s) => Ok(std::borrow::Cow::Owned(s.allocate(market, view)?)),
        }
    }
}

pub(crate) struct PathContext<'a> {
    pub market: &'a MarketData,
    pub tvo: &'a TvoSpec,
    pub config: &'a SimConfig,
    pub allocations: Allocations<'a>,
    table: Option<CoefTable>,
    pub key: StreamKey,
}

pub(crate) struct PathOutcome {
    pub terminal: f64,
    pub qv: f64,
}

impl<'a> PathContext<'a> {
    pub fn new(
        market: &'a MarketData,
        strategy: &'a StrategySpec,
        tvo: &'a TvoSpec,
        config: &'a SimConfig,
        label: &str,
    ) -> Result<Self> {
        tvo.validate()?;
        config.validate(tvo.maturity)?;
        let table = if market.is_local_vol() {
            None
        } else {
            Some(CoefTable::new(market, &config.grid, config.substeps_per_fixing)?)
        };
        Ok(PathContext {
            market,
            tvo,
            config,
            allocations: Allocations::new(market, strategy, tvo, &config.grid)?,
            table,
            key: StreamKey::new(config.seed, label),
        })
    }

    pub fn run(&self, p: usize, mut record: Option<&mut Vec<PathState>>) -> Result<PathOutcome> {
        let cfg = self.config;
        let mut rng = self.key.stream(p as u64);
        let mut stepper = AssetStepper::new(self.market, self.table.as_ref());
        let sigma_bar = self.tvo.sigma_bar;
        let mut log_i = self.tvo.spot.ln();
        let mut index = self.tvo.spot;
        let mut qv = 0.0;
        let mut last_omega = 0.0;
        let m = cfg.grid.len() - 1;
        let mut j = 0;
        for k in 0..m {
            let (t0, t1) = (cfg.grid[k], cfg.grid[k + 1]);
            let view = FixingView {
                t: t0,
                spots: &stepper.spots,
                index,
                index0: self.tvo.spot,
            };
            let alpha = self.allocations.get(self.market, k, &view).map_err(|e| locate(e, p, k))?;
            let alpha = alpha.into_owned();
            let h = (t1 - t0) / cfg.substeps_per_fixing as f64;
            let spots_k = record.as_ref().map(|_| stepper.spots.clone());
            for s in 0..cfg.substeps_per_fixing {
                let t = t0 + h * s as f64;
                stepper.step(j, t, h, &mut rng)?;
                let (inc, w) =
                    index_increment(&alpha, &stepper.drivers, sigma_bar, cfg.cap_omega).map_err(|e| locate(e, p, k))?;
                if s == 0 {
                    if let (Some(rec), Some(sp)) = (record.as_deref_mut(), spots_k.as_ref()) {
                        rec.push(PathState {
                            t: t0,
                            spots: sp.clone(),
                            index,
                            omega: w,
                        });
                    }
                }
                last_omega = w;
                log_i += inc;
                qv += inc * inc;
                j += 1;
            }
            index = log_i.exp();
            if !index.is_finite() || stepper.spots.iter().any(|s| !s.is_finite()) {
                return Err(TvoError::Simulation(format!("non-finite state on path {p} at fixing {}", k + 1)));
            }
        }
        if let Some(rec) = record {
            rec.push(PathState {
                t: cfg.grid[m],
                spots: stepper.spots.clone(),
                index,
                omega: last_omega,
            });
        }
        Ok(PathOutcome { terminal: index, qv })
    }
}

fn locate(e: TvoError, p: usize, k: usize) -> TvoError {
    match e {
        TvoError::DegenerateAllocation { norm, .. } => TvoError::DegenerateAllocation {
            norm,
            location: Some(format!("path {p}, fixing {k}")),
        },
        other => other,
    }
}

const TVS_LABEL: &str = "tvs-paths";

/// Simulates and stores every path at every fixing.
pub fn simulate_tvs(market: &MarketData, strategy: &StrategySpec, tvo: &TvoSpec, config: &SimConfig) -> Result<PathSet> {
    simulate_tvs_labelled(market, strategy, tvo, config, TVS_LABEL)
}

pub(crate) fn simulate_tvs_labelled(
    market: &MarketData,
    strategy: &StrategySpec,
    tvo: &TvoSpec,
    config: &SimConfig,
    label: &str,
) -> Result<PathSet> {
    let ctx = PathContext::new(market, strategy, tvo, config, label)?;
    let out: Vec<Result<(Vec<PathState>, f64)>> = (0..config.paths)
        .into_par_iter()
        .with_min_len(64)
        .map(|p| {
            let mut rec = Vec::with_capacity(config.grid.len());
            let o = ctx.run(p, Some(&mut rec))?;
            Ok((rec, o.qv))
        })
        .collect();
    let mut paths = Vec::with_capacity(config.paths);
    let mut qv = Vec::with_capacity(config.paths);
    for r in out {
        let (rec, q) = r?;
        paths.push(rec);
        qv.push(q);
    }
    Ok(PathSet {
        grid: config.grid.clone(),
        substeps_per_fixing: config.substeps_per_fixing,
        seed: config.seed,
        stream_label: label.to_string(),
        paths,
        quadratic_variation: qv,
    })
}

pub(crate) fn tvs_label() -> &'static str {
    TVS_LABEL
}

/// The one-dimensional diffusion `dI/I = (r − φ − ℓ(t))dt + σ̄ dW`, where
/// `ℓ` is the local drift of the allocation returned by `alpha_of(t, I)` at
/// each fixing.
pub fn simulate_projection<F>(market: &MarketData, alpha_of: F, tvo: &TvoSpec, config: &SimConfig) -> Result<PathSet>
where
    F: Fn(f64, f64) -> Result<Vec<f64>> + Sync,
{
    if market.is_local_vol() {
        return Err(TvoError::UnsupportedMode { required: "bs" });
    }
    tvo.validate()?;
    config.validate(tvo.maturity)?;
    let table = CoefTable::new(market, &config.grid, config.substeps_per_fixing)?;
    let key = StreamKey::new(config.seed, "projection-paths");
    let sigma_bar = tvo.sigma_bar;
    let m = config.grid.len() - 1;
    let subs = config.substeps_per_fixing;
    let out: Vec<Result<(Vec<PathState>, f64)>> = (0..config.paths)
        .into_par_iter()
        .with_min_len(64)
        .map(|p| {
            let mut rng = key.stream(p as u64);
            let mut rec = Vec::with_capacity(m + 1);
            let mut log_i = tvo.spot.ln();
            let mut qv = 0.0;
            let mut scratch = vec![0.0; market.n()];
            for k in 0..m {
                let index = log_i.exp();
                let alpha = alpha_of(config.grid[k], index)?;
                rec.push(PathState {
                    t: config.grid[k],
                    spots: Vec::new(),
                    index,
                    omega: 0.0,
                });
                for s in 0..subs {
                    let j = k * subs + s;
                    let dt = table.dts[j];
                    let q = quad_form(&table.cov[j], &alpha, &mut scratch);
                    let norm = q.max(0.0).sqrt();
                    if !(norm >= DEGENERATE_FLOOR) {
                        return Err(locate(TvoError::DegenerateAllocation { norm, location: None }, p, k));
                    }
                    let ell = sigma_bar * dot(&alpha, &table.mu[j]) / norm;
                    let z: f64 = rng.sample(StandardNormal);
                    let inc = table.rf[j] - ell * dt - 0.5 * sigma_bar * sigma_bar * dt + sigma_bar * dt.sqrt() * z;
                    log_i += inc;
                    qv += inc * inc;
                }
            }
            rec.push(PathState {
                t: config.grid[m],
                spots: Vec::new(),
                index: log_i.exp(),
                omega: 0.0,
            });
            Ok((rec, qv))
        })
        .collect();
    let mut paths = Vec::with_capacity(config.paths);
    let mut qv = Vec::with_capacity(config.paths);
    for r in out {
        let (rec, q) = r?;
        paths.push(rec);
        qv.push(q);
    }
    Ok(PathSet {
        grid: config.grid.clone(),
        substeps_per_fixing: subs,
        seed: config.seed,
        stream_label: "projection-paths".into(),
        paths,
        quadratic_variation: qv,
    })
}

/// Per-path realized volatility `√(QV / elapsed)` of the log index.
pub fn realized_vol(paths: &PathSet) -> Vec<f64> {
    let elapsed = paths.grid[paths.grid.len() - 1] - paths.grid[0];
    paths
        .quadratic_variation
        .iter()
        .map(|q| (q / elapsed).sqrt())
        .collect()
}
