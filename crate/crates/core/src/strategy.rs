//! Allocation strategies and their optimisation.
//!
//! The objective throughout is the drift ratio `α·μ / ‖α·ν‖`, which is
//! zero-homogeneous in `α`. Its minimum over unconstrained `α` has the closed
//! form `α* = −Σ⁻¹μ / ‖(Σ⁻¹μ)·ν‖` with value `−√(μᵀΣ⁻¹μ)`; over the
//! non-negative orthant (with `μ ≥ 0`) it is attained at the single asset
//! minimising `μ_i / √Σ_ii`. Anything else goes through a grid-plus-compass
//! numeric search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvoError};
use crate::market::{build_nu, MarketData};
use crate::pricing::Payoff;
use crate::rl::NeuralPolicy;

/// `‖α·ν‖` below this is treated as a degenerate allocation.
pub const DEGENERATE_FLOOR: f64 = 1e-12;

/// Whether the drift ratio is minimised (calls) or maximised (puts).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    pub fn for_payoff(payoff: Payoff) -> Self {
        match payoff {
            Payoff::Call => Direction::Min,
            Payoff::Put => Direction::Max,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::Min => -1.0,
            Direction::Max => 1.0,
        }
    }
}

/// `Σ = ν·νᵀ`.
pub fn covariance(nu: &DMatrix<f64>) -> DMatrix<f64> {
    nu * nu.transpose()
}

/// `‖α·ν‖ = √(αᵀΣα)`.
pub fn diffusion_norm(alpha: &[f64], cov: &DMatrix<f64>) -> f64 {
    let a = DVector::from_column_slice(alpha);
    a.dot(&(cov * &a)).max(0.0).sqrt()
}

/// The zero-homogeneous objective `α·μ / ‖α·ν‖`.
pub fn drift_ratio(alpha: &[f64], mu: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let norm = diffusion_norm(alpha, cov);
    if !(norm >= DEGENERATE_FLOOR) {
        return Err(TvoError::DegenerateAllocation { norm, location: None });
    }
    Ok(dot(alpha, mu) / norm)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Local drift `ℓ = σ̄ · (α·μ(t)) / ‖α·ν(t[,S])‖`.
pub fn local_drift(
    alpha: &[f64],
    market: &MarketData,
    t: f64,
    spots: Option<&[f64]>,
    sigma_bar: f64,
) -> Result<f64> {
    let nu = build_nu(market, t, spots)?;
    Ok(sigma_bar * drift_ratio(alpha, &market.carry_at(t), &covariance(&nu))?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeOptimum {
    pub alpha: Vec<f64>,
    pub objective: f64,
    /// Set when `μ = 0`: the objective is identically zero and `alpha` is arbitrary.
    pub degenerate: bool,
}

/// Closed-form optimum of the unconstrained problem.
pub fn optimal_free(mu: &[f64], nu: &DMatrix<f64>, direction: Direction) -> Result<FreeOptimum> {
    let n = mu.len();
    if nu.nrows() != n || nu.ncols() != n {
        return Err(TvoError::Input(format!("nu must be {n}x{n}")));
    }
    let cov = covariance(nu);
    let chol = cov.clone().cholesky().ok_or(TvoError::Rank)?;
    if mu.iter().all(|m| *m == 0.0) {
        let mut e = vec![0.0; n];
        e[0] = 1.0;
        let norm = diffusion_norm(&e, &cov);
        e[0] /= norm;
        return Ok(FreeOptimum {
            alpha: e,
            objective: 0.0,
            degenerate: true,
        });
    }
    let mu_v = DVector::from_column_slice(mu);
    let x = chol.solve(&mu_v);
    let x_nu = nu.transpose() * &x;
    let scale = direction.sign() / x_nu.norm();
    Ok(FreeOptimum {
        alpha: x.iter().map(|v| v * scale).collect(),
        objective: direction.sign() * mu_v.dot(&x).sqrt(),
        degenerate: false,
    })
}

/// `−√(μᵀΣ⁻¹μ)`, the minimum of the unconstrained drift ratio.
pub fn min_drift_value(mu: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov.clone().cholesky().ok_or(TvoError::Rank)?;
    let mu_v = DVector::from_column_slice(mu);
    Ok(-mu_v.dot(&chol.solve(&mu_v)).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BangBang {
    /// Zero-based index of the active asset.
    pub index: usize,
    pub alpha: Vec<f64>,
    pub objective: f64,
}

/// Long-only optimum for non-negative carry. Ties go to the lowest index.
pub fn optimal_bang_bang(mu: &[f64], cov: &DMatrix<f64>) -> Result<BangBang> {
    if let Some(i) = mu.iter().position(|m| !(*m >= 0.0)) {
        return Err(TvoError::Precondition(format!("carry component {i} is negative ({})", mu[i])));
    }
    if cov.clone().cholesky().is_none() {
        return Err(TvoError::Rank);
    }
    let mut best = (0, f64::INFINITY);
    for (i, m) in mu.iter().enumerate() {
        let ratio = m / cov[(i, i)].sqrt();
        if ratio < best.1 {
            best = (i, ratio);
        }
    }
    let mut alpha = vec![0.0; mu.len()];
    alpha[best.0] = 1.0;
    Ok(BangBang {
        index: best.0,
        alpha,
        objective: best.1,
    })
}

/// Admissible allocation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    Free,
    NonNegative,
    /// Per-coordinate bounds; infinite bounds are allowed only when every
    /// finite bound is zero (i.e. the box is a sign cone).
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sign {
    Free,
    NonNeg,
    NonPos,
    Zero,
}

enum SearchSet {
    Cone(Vec<Sign>),
    FiniteBox(Vec<f64>, Vec<f64>),
}

impl SearchSet {
    fn from_constraint(c: &Constraint, n: usize) -> Result<Self> {
        match c {
            Constraint::Free => Ok(SearchSet::Cone(vec![Sign::Free; n])),
            Constraint::NonNegative => Ok(SearchSet::Cone(vec![Sign::NonNeg; n])),
            Constraint::Box { lower, upper } => {
                if lower.len() != n || upper.len() != n {
                    return Err(TvoError::Input(format!("box bounds must have length {n}")));
                }
                if lower.iter().zip(upper).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
                    return Err(TvoError::Input("empty feasible set: lower bound above upper bound".into()));
                }
                let finite = lower.iter().chain(upper).all(|b| b.is_finite());
                if finite {
                    if lower.iter().zip(upper).all(|(l, u)| *l == 0.0 && *u == 0.0) {
                        return Err(TvoError::Input("empty feasible set: box contains only the zero vector".into()));
                    }
                    return Ok(SearchSet::FiniteBox(lower.clone(), upper.clone()));
                }
                let mut signs = Vec::with_capacity(n);
                for (l, u) in lower.iter().zip(upper) {
                    let is_cone_bound = |b: &f64| b.is_infinite() || *b == 0.0;
                    if !(is_cone_bound(l) && is_cone_bound(u)) {
                        return Err(TvoError::Input(
                            "boxes mixing infinite and non-zero finite bounds are not supported".into(),
                        ));
                    }
                    signs.push(match (*l == 0.0, *u == 0.0) {
                        (false, false) => Sign::Free,
                        (true, false) => Sign::NonNeg,
                        (false, true) => Sign::NonPos,
                        (true, true) => Sign::Zero,
                    });
                }
                if signs.iter().all(|s| *s == Sign::Zero) {
                    return Err(TvoError::Input("empty feasible set: box contains only the zero vector".into()));
                }
                Ok(SearchSet::Cone(signs))
            }
        }
    }

    /// Coordinate ranges of the normalised search domain.
    fn ranges(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            SearchSet::Cone(signs) => signs
                .iter()
                .map(|s| match s {
                    Sign::Free => (-1.0, 1.0),
                    Sign::NonNeg => (0.0, 1.0),
                    Sign::NonPos => (-1.0, 0.0),
                    Sign::Zero => (0.0, 0.0),
                })
                .unzip(),
            SearchSet::FiniteBox(l, u) => (l.clone(), u.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstrainedOptimum {
    pub alpha: Vec<f64>,
    pub objective: f64,
}

/// Numeric optimum of the drift ratio over a constraint set: a coarse grid
/// over the normalised set followed by compass-search refinement of the best
/// few grid points.
pub fn optimal_constrained(
    mu: &[f64],
    nu: &DMatrix<f64>,
    constraint: &Constraint,
    direction: Direction,
) -> Result<ConstrainedOptimum> {
    let n = mu.len();
    let set = SearchSet::from_constraint(constraint, n)?;
    let (lo, hi) = set.ranges();
    let cov = covariance(nu);
    let sense = -direction.sign();
    // Minimise `sense · ratio`.
    let f = |a: &[f64]| -> f64 {
        let norm = diffusion_norm(a, &cov);
        if norm < 1e-9 {
            f64::INFINITY
        } else {
            sense * dot(a, mu) / norm
        }
    };

    let active: Vec<usize> = (0..n).filter(|&i| hi[i] > lo[i]).collect();
    let dims = active.len().max(1) as f64;
    let per_axis = ((40_000f64).powf(1.0 / dims).floor() as usize).clamp(3, 201);

    let mut best: Vec<(f64, Vec<f64>)> = Vec::new();
    let keep = 6;
    let mut point: Vec<f64> = lo.clone();
    let mut counters = vec![0usize; active.len()];
    loop {
        for (c, &i) in counters.iter().zip(&active) {
            point[i] = lo[i] + (hi[i] - lo[i]) * (*c as f64) / ((per_axis - 1) as f64);
        }
        let v = f(&point);
        if v.is_finite() && (best.len() < keep || v < best[best.len() - 1].0) {
            best.push((v, point.clone()));
            best.sort_by(|a, b| a.0.total_cmp(&b.0));
            best.truncate(keep);
        }
        // odometer increment
        let mut k = 0;
        while k < counters.len() {
            counters[k] += 1;
            if counters[k] < per_axis {
                break;
            }
            counters[k] = 0;
            k += 1;
        }
        if k == counters.len() {
            break;
        }
    }
    if best.is_empty() {
        return Err(TvoError::Input("empty feasible set: no admissible non-degenerate allocation".into()));
    }

    let mut result: Option<(f64, Vec<f64>)> = None;
    for (v0, x0) in best {
        let (v, x) = compass_search(&f, x0, v0, &lo, &hi, &active);
        if result.as_ref().map_or(true, |(rv, _)| v < *rv) {
            result = Some((v, x));
        }
    }
    let (v, alpha) = result.expect("at least one candidate");
    Ok(ConstrainedOptimum {
        alpha,
        objective: sense * v,
    })
}

fn compass_search(
    f: &impl Fn(&[f64]) -> f64,
    mut x: Vec<f64>,
    mut fx: f64,
    lo: &[f64],
    hi: &[f64],
    active: &[usize],
) -> (f64, Vec<f64>) {
    let mut step = 0.25;
    let mut trial = x.clone();
    while step > 1e-13 {
        let mut improved = false;
        for &i in active {
            for s in [step, -step] {
                trial.copy_from_slice(&x);
                trial[i] = (x[i] + s).clamp(lo[i], hi[i]);
                if trial[i] == x[i] {
                    continue;
                }
                let v = f(&trial);
                if v < fx {
                    fx = v;
                    x.copy_from_slice(&trial);
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (fx, x)
}

/// The three intuitive one-hot strategies used as comparison points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineVariant {
    /// Everything in the asset with the largest forward at maturity.
    #[serde(rename = "S_A")]
    MaxForward,
    /// Per pillar, everything in the asset with the smallest carry.
    #[serde(rename = "S_B")]
    MinCarry,
    /// Per pillar, everything in the asset with the smallest carry per unit vol.
    #[serde(rename = "S_C")]
    MinCarryPerVol,
}

impl BaselineVariant {
    pub const ALL: [BaselineVariant; 3] = [
        BaselineVariant::MaxForward,
        BaselineVariant::MinCarry,
        BaselineVariant::MinCarryPerVol,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BaselineVariant::MaxForward => "S_A",
            BaselineVariant::MinCarry => "S_B",
            BaselineVariant::MinCarryPerVol => "S_C",
        }
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Index of the smallest value, lowest index on ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Builds a baseline strategy on `grid` (ascending times in `[0, T)`).
pub fn baseline(variant: BaselineVariant, market: &MarketData, maturity: f64, grid: &[f64]) -> Result<StrategySpec> {
    if grid.is_empty() {
        return Err(TvoError::Input("baseline grid is empty".into()));
    }
    let n = market.n();
    let (times, alphas) = match variant {
        BaselineVariant::MaxForward => {
            let fwd = market.forwards(maturity)?;
            (vec![grid[0]], vec![one_hot(n, argmax(&fwd))])
        }
        BaselineVariant::MinCarry => {
            let alphas = grid.iter().map(|&t| one_hot(n, argmin(&market.carry_at(t)))).collect();
            (grid.to_vec(), alphas)
        }
        BaselineVariant::MinCarryPerVol => {
            let mut alphas = Vec::with_capacity(grid.len());
            let mut sig = vec![0.0; n];
            for &t in grid {
                let fwd = market.forwards(t)?;
                market.vols_into(t, Some(&fwd), &mut sig)?;
                let ratios: Vec<f64> = market.carry_at(t).iter().zip(&sig).map(|(m, s)| m / s).collect();
                alphas.push(one_hot(n, argmin(&ratios)));
            }
            (grid.to_vec(), alphas)
        }
    };
    Ok(StrategySpec::Baseline { variant, times, alphas })
}

/// What the strategy sees at a fixing.
#[derive(Debug, Clone, Copy)]
pub struct FixingView<'a> {
    pub t: f64,
    pub spots: &'a [f64],
    pub index: f64,
    pub index0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    Constant {
        alpha: Vec<f64>,
    },
    /// `alphas[i]` applies on `[times[i], times[i+1])`.
    Timetable {
        times: Vec<f64>,
        alphas: Vec<Vec<f64>>,
    },
    /// Unconstrained closed-form optimum evaluated at the current state.
    ClosedFormFree {
        direction: Direction,
    },
    /// Long-only single-asset optimum (requires non-negative carry).
    BangBang,
    Constrained {
        constraint: Constraint,
        direction: Direction,
    },
    Baseline {
        variant: BaselineVariant,
        times: Vec<f64>,
        alphas: Vec<Vec<f64>>,
    },
    Neural(NeuralPolicy),
}

fn timetable_lookup<'a>(times: &[f64], alphas: &'a [Vec<f64>], t: f64) -> &'a [f64] {
    let idx = times.partition_point(|&p| p <= t);
    &alphas[idx.saturating_sub(1)]
}

impl StrategySpec {
    /// The optimal strategy for `payoff` under `constraint`.
    pub fn auto(market: &MarketData, payoff: Payoff, constraint: &Constraint) -> StrategySpec {
        let direction = Direction::for_payoff(payoff);
        match constraint {
            Constraint::Free => StrategySpec::ClosedFormFree { direction },
            Constraint::NonNegative
                if direction == Direction::Min
                    && market.assets().iter().all(|a| a.carry.values().iter().all(|m| *m >= 0.0)) =>
            {
                StrategySpec::BangBang
            }
            c => StrategySpec::Constrained {
                constraint: c.clone(),
                direction,
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            StrategySpec::Constant { .. } => "constant".into(),
            StrategySpec::Timetable { .. } => "timetable".into(),
            StrategySpec::ClosedFormFree { .. } => "closed_form_free".into(),
            StrategySpec::BangBang => "bang_bang".into(),
            StrategySpec::Constrained { .. } => "constrained".into(),
            StrategySpec::Baseline { variant, .. } => variant.label().into(),
            StrategySpec::Neural(_) => "neural".into(),
        }
    }

    /// Strategies whose allocation depends only on time in a BS market.
    pub fn is_time_deterministic(&self) -> bool {
        !matches!(self, StrategySpec::Neural(_))
    }

    /// Times at which a timetable switches.
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            StrategySpec::Timetable { times, .. } | StrategySpec::Baseline { times, .. } => times,
            _ => &[],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let check_len = |a: &[f64]| {
            if a.len() != n {
                Err(TvoError::Input(format!("allocation has length {}, expected {n}", a.len())))
            } else {
                Ok(())
            }
        };
        match self {
            StrategySpec::Constant { alpha } => check_len(alpha),
            StrategySpec::Timetable { times, alphas } | StrategySpec::Baseline { times, alphas, .. } => {
                if times.is_empty() || times.len() != alphas.len() {
                    return Err(TvoError::Input("timetable needs one allocation per time".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(TvoError::Input("timetable times must be strictly increasing".into()));
                }
                alphas.iter().try_for_each(|a| check_len(a))
            }
            StrategySpec::Neural(p) => p.validate(n),
            _ => Ok(()),
        }
    }

    /// Allocation at a fixing.
    pub fn allocate(&self, market: &MarketData, view: &FixingView) -> Result<Vec<f64>> {
        match self {
            StrategySpec::Constant { alpha } => Ok(alpha.clone()),
            StrategySpec::Timetable { times, alphas } | StrategySpec::Baseline { times, alphas, .. } => {
                Ok(timetable_lookup(times, alphas, view.t).to_vec())
            }
            StrategySpec::ClosedFormFree { direction } => {
                let nu = build_nu(market, view.t, Some(view.spots))?;
                Ok(optimal_free(&market.carry_at(view.t), &nu, *direction)?.alpha)
            }
            StrategySpec::BangBang => {
                let nu = build_nu(market, view.t, Some(view.spots))?;
                Ok(optimal_bang_bang(&market.carry_at(view.t), &covariance(&nu))?.alpha)
            }
            StrategySpec::Constrained { constraint, direction } => {
                let nu = build_nu(market, view.t, Some(view.spots))?;
                Ok(optimal_constrained(&market.carry_at(view.t), &nu, constraint, *direction)?.alpha)
            }
            StrategySpec::Neural(policy) => policy.action(market, view),
        }
    }
}
