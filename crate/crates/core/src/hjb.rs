//! Crank–Nicolson solver for the one-dimensional pricing equation in
//! `x = log I`:
//!
//! `V_t + (r − φ − ℓ − ½σ̄²) V_x + ½σ̄² V_xx − (r + spread) V = 0`
//!
//! where `ℓ` is either the per-pillar optimal local drift (monotone payoffs)
//! or chosen node by node from the sign of `V_x` on the previous time level.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvoError};
use crate::market::{build_nu, MarketData};
use crate::pricing::{Payoff, TvoSpec};
use crate::strategy::{covariance, min_drift_value};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HjbMode {
    /// Optimal constant-per-pillar drift, valid for monotone payoffs.
    Monotone,
    /// Drift optimised node by node using the lagged sign of `V_x`.
    Pointwise,
    /// Fixed `ℓ = σ̄ · ratio` everywhere (comparison runs).
    ConstantRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HjbPayoff {
    Call,
    Put,
    /// `|I − K|`, neither non-decreasing nor non-increasing.
    Straddle,
}

impl HjbPayoff {
    fn value(self, i: f64, k: f64) -> f64 {
        match self {
            HjbPayoff::Call => (i - k).max(0.0),
            HjbPayoff::Put => (k - i).max(0.0),
            HjbPayoff::Straddle => (i - k).abs(),
        }
    }
}

impl From<Payoff> for HjbPayoff {
    fn from(p: Payoff) -> Self {
        match p {
            Payoff::Call => HjbPayoff::Call,
            Payoff::Put => HjbPayoff::Put,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    /// Number of intervals on the log-index axis.
    pub space_intervals: usize,
    pub time_steps: usize,
    /// Half-width `L` of the log axis; defaults to six standard deviations.
    pub half_width: Option<f64>,
}

impl PdeGrid {
    pub fn new(space_intervals: usize, time_steps: usize) -> Self {
        PdeGrid {
            space_intervals,
            time_steps,
            half_width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbSolution {
    pub log_index: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[j][i]` is `V(times[j], exp(log_index[i]))`.
    pub values: Vec<Vec<f64>>,
    /// `V(0, I0)`.
    pub value: f64,
    pub diagnostics: Vec<String>,
}

impl HjbSolution {
    /// CSV with columns `t,I,V`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,I,V\n");
        for (t, row) in self.times.iter().zip(&self.values) {
            for (x, v) in self.log_index.iter().zip(row) {
                out.push_str(&format!("{t},{},{v}\n", x.exp()));
            }
        }
        out
    }
}

/// `∫ √(μᵀΣ⁻¹μ)` over `[a, b]`, exact for piecewise-constant coefficients.
fn integrate_sqrt_q(market: &MarketData, breaks: &[f64], a: f64, b: f64) -> Result<f64> {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&u| u > a && u < b).collect();
    cuts.insert(0, a);
    cuts.push(b);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let nu: DMatrix<f64> = build_nu(market, w[0], None)?;
        total += -min_drift_value(&market.carry_at(w[0]), &covariance(&nu))? * (w[1] - w[0]);
    }
    Ok(total)
}

struct StepCoefficients {
    /// Average of `r − φ − ½σ̄²` over the step.
    base_drift: f64,
    /// Average of `√(μᵀΣ⁻¹μ)`.
    sqrt_q: f64,
    /// Average discount rate.
    rate: f64,
}

fn step_coefficients(market: &MarketData, breaks: &[f64], sigma_bar: f64, a: f64, b: f64) -> Result<StepCoefficients> {
    let dt = b - a;
    let r = market.rate().integrate(a, b)?;
    let phi = market.fee().integrate(a, b)?;
    let spread = market.funding_spread().integrate(a, b)?;
    Ok(StepCoefficients {
        base_drift: (r - phi) / dt - 0.5 * sigma_bar * sigma_bar,
        sqrt_q: integrate_sqrt_q(market, breaks, a, b)? / dt,
        rate: (r + spread) / dt,
    })
}

/// Thomas algorithm; `lower[0]` and `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    scratch[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * scratch[i - 1];
        scratch[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

struct Solver {
    n: usize,
    h: f64,
    diff: f64,
    drift: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl Solver {
    /// Operator coefficients `(a_i, b_i, c_i)` with `L V_i = a V_{i−1} + b V_i + c V_{i+1}`
    /// after folding in the reflecting ghost nodes.
    fn stencil(&self, i: usize, rate: f64) -> (f64, f64, f64) {
        let h = self.h;
        let a = self.drift[i];
        let lo = self.diff / (h * h) - a / (2.0 * h);
        let up = self.diff / (h * h) + a / (2.0 * h);
        let mid = -2.0 * self.diff / (h * h) - rate;
        if i == 0 {
            (0.0, mid, lo + up)
        } else if i == self.n - 1 {
            (lo + up, mid, 0.0)
        } else {
            (lo, mid, up)
        }
    }

    /// One θ-step from `v` (later time) to the earlier level, in place.
    fn theta_step(&mut self, v: &mut [f64], dt: f64, theta: f64, rate: f64) {
        let n = self.n;
        for i in 0..n {
            let (a, b, c) = self.stencil(i, rate);
            let lv = b * v[i] + if i > 0 { a * v[i - 1] } else { 0.0 } + if i + 1 < n { c * v[i + 1] } else { 0.0 };
            self.rhs[i] = v[i] + (1.0 - theta) * dt * lv;
            self.lower[i] = -theta * dt * a;
            self.diag[i] = 1.0 - theta * dt * b;
            self.upper[i] = -theta * dt * c;
        }
        solve_tridiagonal(&self.lower, &self.diag, &self.upper, &mut self.rhs, &mut self.scratch);
        v.copy_from_slice(&self.rhs);
    }
}

/// Solves the pricing equation backwards from the payoff of `tvo`.
pub fn solve_reduced_hjb(market: &MarketData, tvo: &TvoSpec, grid: &PdeGrid, mode: HjbMode) -> Result<HjbSolution> {
    solve_reduced_hjb_payoff(market, tvo, tvo.payoff.into(), grid, mode)
}

pub fn solve_reduced_hjb_payoff(
    market: &MarketData,
    tvo: &TvoSpec,
    payoff: HjbPayoff,
    grid: &PdeGrid,
    mode: HjbMode,
) -> Result<HjbSolution> {
    if market.is_local_vol() {
        return Err(TvoError::UnsupportedMode { required: "bs" });
    }
    tvo.validate()?;
    if grid.space_intervals < 50 || grid.time_steps < 50 {
        return Err(TvoError::Input(format!(
            "grid {}x{} too small: both counts must be at least 50",
            grid.space_intervals, grid.time_steps
        )));
    }
    if !(tvo.sigma_bar > 0.0) {
        return Err(TvoError::Input("the PDE needs a positive target vol".into()));
    }
    let direction_sign = match (mode, payoff) {
        (HjbMode::Monotone, HjbPayoff::Straddle) => {
            return Err(TvoError::Mode("monotone mode requires a monotone payoff; use pointwise".into()))
        }
        (_, HjbPayoff::Put) => 1.0,
        _ => -1.0,
    };
    let sigma_bar = tvo.sigma_bar;
    let maturity = tvo.maturity;
    let std = sigma_bar * maturity.sqrt();
    let half_width = grid.half_width.unwrap_or(6.0 * std);
    let mut diagnostics = Vec::new();
    if half_width <= 5.0 * std {
        diagnostics.push(format!(
            "domain half-width {half_width:.4} is within 5 standard deviations ({:.4}); boundary error may dominate",
            5.0 * std
        ));
    }
    let n = grid.space_intervals + 1;
    let h = 2.0 * half_width / grid.space_intervals as f64;
    let x0 = tvo.spot.ln();
    let xs: Vec<f64> = (0..n).map(|i| x0 - half_width + h * i as f64).collect();
    let m = grid.time_steps;
    let dt = maturity / m as f64;
    let times: Vec<f64> = (0..=m).map(|j| maturity * j as f64 / m as f64).collect();
    let breaks = market.breakpoints();

    let diff = 0.5 * sigma_bar * sigma_bar;
    let mut solver = Solver {
        n,
        h,
        diff,
        drift: vec![0.0; n],
        lower: vec![0.0; n],
        diag: vec![0.0; n],
        upper: vec![0.0; n],
        rhs: vec![0.0; n],
        scratch: vec![0.0; n],
    };

    let mut v: Vec<f64> = xs.iter().map(|x| payoff.value(x.exp(), tvo.strike)).collect();
    let mut values = vec![Vec::new(); m + 1];
    values[m] = v.clone();
    let mut max_peclet: f64 = 0.0;

    let mut signs = vec![0.0f64; n];
    let mut set_drift = |solver: &mut Solver, v: &[f64], c: &StepCoefficients| {
        if mode == HjbMode::Pointwise {
            lagged_slope_signs(v, &mut signs);
        }
        for i in 0..n {
            let ell = match mode {
                HjbMode::Monotone => direction_sign * sigma_bar * c.sqrt_q,
                HjbMode::ConstantRatio(s) => sigma_bar * s,
                HjbMode::Pointwise => -signs[i] * sigma_bar * c.sqrt_q,
            };
            solver.drift[i] = c.base_drift - ell;
        }
    };

    for j in (0..m).rev() {
        let c = step_coefficients(market, &breaks, sigma_bar, times[j], times[j + 1])?;
        if j == m - 1 {
            // two fully implicit half steps damp the payoff kink
            for _ in 0..2 {
                set_drift(&mut solver, &v, &c);
                solver.theta_step(&mut v, 0.5 * dt, 1.0, c.rate);
            }
        } else {
            set_drift(&mut solver, &v, &c);
            solver.theta_step(&mut v, dt, 0.5, c.rate);
        }
        let peclet = solver.drift.iter().fold(0.0f64, |a, d| a.max(d.abs())) * h / (2.0 * diff);
        max_peclet = max_peclet.max(peclet);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(TvoError::Simulation(format!("non-finite PDE value at time step {j}")));
        }
        values[j] = v.clone();
    }
    if max_peclet > 1.0 {
        diagnostics.push(format!(
            "cell Peclet number {max_peclet:.3} exceeds 1; central differences may oscillate, refine the space grid"
        ));
    }
    let courant = diff * dt / (h * h);
    if courant > 50.0 {
        diagnostics.push(format!(
            "diffusion number {courant:.1} is large; Crank-Nicolson may ring near the strike, refine the time grid"
        ));
    }

    let value = interpolate_quadratic(&xs, &values[0], x0);
    Ok(HjbSolution {
        log_index: xs,
        times,
        values,
        value,
        diagnostics,
    })
}

/// Sign of the central slope at each node. Flat stretches, where any
/// control is optimal, take the sign of the nearest sloped node.
fn lagged_slope_signs(v: &[f64], signs: &mut [f64]) {
    let n = v.len();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let d = if i == 0 || i == n - 1 { 0.0 } else { v[i + 1] - v[i - 1] };
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let sloped: Vec<usize> = (0..n).filter(|&i| raw[i] != 0.0).collect();
    for i in 0..n {
        signs[i] = if raw[i] != 0.0 || sloped.is_empty() {
            raw[i]
        } else {
            let pos = sloped.partition_point(|&j| j < i);
            let right = sloped.get(pos).copied();
            let left = pos.checked_sub(1).map(|p| sloped[p]);
            match (left, right) {
                (Some(l), Some(r)) => raw[if i - l <= r - i { l } else { r }],
                (Some(l), None) => raw[l],
                (None, Some(r)) => raw[r],
                (None, None) => 0.0,
            }
        };
    }
}

/// Quadratic Lagrange interpolation on a uniform grid (exact at nodes).
fn interpolate_quadratic(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let h = xs[1] - xs[0];
    let pos = (x - xs[0]) / h;
    let nearest = pos.round();
    if (pos - nearest).abs() < 1e-9 {
        return ys[nearest as usize];
    }
    let i = (nearest as usize).clamp(1, xs.len() - 2);
    let u = (x - xs[i]) / h;
    ys[i - 1] * u * (u - 1.0) / 2.0 + ys[i] * (1.0 - u * u) + ys[i + 1] * u * (u + 1.0) / 2.0
}
