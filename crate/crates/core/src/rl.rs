//! Neural allocation policies and their training.
//!
//! Two trainers are provided. The direct trainer ascends the discounted mean
//! payoff of a deterministic policy, differentiating pathwise through the
//! simulated index. The PPO trainer samples Gaussian actions around the
//! network output and optimises the clipped surrogate with a learned value
//! baseline and generalised advantage estimates.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TvoError};
use crate::market::{build_nu, MarketData};
use crate::nn::{Activation, Network, Optimizer, OptimizerKind, StepDirection, Tape};
use crate::pricing::{black_formula, mc_price, McResult, TvoSpec};
use crate::rng::StreamKey;
use crate::simulator::{index_increment, index_increment_grad, validate_grid, AssetStepper, CoefTable, SimConfig};
use crate::strategy::{covariance, diffusion_norm, min_drift_value, optimal_free, Direction, FixingView, StrategySpec, DEGENERATE_FLOOR};

/// Two-sided 98% normal quantile used for learning-curve bands.
const Z98: f64 = 2.326;

/// `[log(S_i/F_i(0,t)) …, I/I0, t]`.
pub fn normalize_state(market: &MarketData, index0: f64, t: f64, spots: &[f64], index: f64) -> Result<Vec<f64>> {
    let fwd = market.forwards(t)?;
    let mut out = vec![0.0; market.n() + 2];
    normalize_into(&fwd, index0, t, spots, index, &mut out)?;
    Ok(out)
}

fn normalize_into(forwards: &[f64], index0: f64, t: f64, spots: &[f64], index: f64, out: &mut [f64]) -> Result<()> {
    let n = forwards.len();
    if spots.len() != n {
        return Err(TvoError::Input(format!("expected {n} spots, got {}", spots.len())));
    }
    for i in 0..n {
        if !(spots[i] > 0.0 && forwards[i] > 0.0) {
            return Err(TvoError::Input(format!("spot and forward of asset {i} must be > 0")));
        }
        out[i] = (spots[i] / forwards[i]).ln();
    }
    if !(index > 0.0 && index0 > 0.0) {
        return Err(TvoError::Input("index levels must be > 0".into()));
    }
    out[n] = index / index0;
    out[n + 1] = t;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// The network output is the allocation.
    Free,
    /// The network output is added to the closed-form unconstrained optimum.
    BaselineParameterized,
}

impl std::str::FromStr for ActionMode {
    type Err = TvoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(ActionMode::Free),
            "baseline" | "baseline-parameterized" | "baseline_parameterized" => Ok(ActionMode::BaselineParameterized),
            other => Err(TvoError::Input(format!("unknown action mode '{other}'"))),
        }
    }
}

/// A network mapping normalised states to allocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralPolicy {
    pub net: Network,
    pub mode: ActionMode,
    pub direction: Direction,
}

impl NeuralPolicy {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.net.input_dim() != n + 2 || self.net.output_dim() != n {
            return Err(TvoError::Input(format!(
                "policy network maps {} -> {}, expected {} -> {n}",
                self.net.input_dim(),
                self.net.output_dim(),
                n + 2
            )));
        }
        Ok(())
    }

    /// Additive base of the action: zero, or the closed-form optimum at the current state.
    fn base(&self, market: &MarketData, t: f64, spots: &[f64]) -> Result<Option<Vec<f64>>> {
        match self.mode {
            ActionMode::Free => Ok(None),
            ActionMode::BaselineParameterized => Ok(Some(free_optimum_at(market, t, spots, self.direction)?)),
        }
    }

    /// Deterministic allocation at a fixing.
    pub fn action(&self, market: &MarketData, view: &FixingView) -> Result<Vec<f64>> {
        let state = normalize_state(market, view.index0, view.t, view.spots, view.index)?;
        let mut alpha = self.net.forward(&state)?;
        if let Some(base) = self.base(market, view.t, view.spots)? {
            for (a, b) in alpha.iter_mut().zip(base) {
                *a += b;
            }
        }
        Ok(alpha)
    }
}

fn free_optimum_at(market: &MarketData, t: f64, spots: &[f64], direction: Direction) -> Result<Vec<f64>> {
    let nu = build_nu(market, t, Some(spots))?;
    Ok(optimal_free(&market.carry_at(t), &nu, direction)?.alpha)
}

/// Allocation of `policy` at a fixing; with `noise = Some((log_std, rng))`
/// a diagonal Gaussian sample around the deterministic action. A sample
/// whose diffusion norm falls below the floor is redrawn once.
pub fn policy_action(
    policy: &NeuralPolicy,
    market: &MarketData,
    view: &FixingView,
    noise: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Vec<f64>> {
    let mean = policy.action(market, view)?;
    let cov = covariance(&build_nu(market, view.t, Some(view.spots))?);
    let Some((log_std, rng)) = noise else {
        let norm = diffusion_norm(&mean, &cov);
        if !(norm >= DEGENERATE_FLOOR) {
            return Err(TvoError::DegenerateAllocation { norm, location: None });
        }
        return Ok(mean);
    };
    let std = log_std.exp();
    let mut norm = 0.0;
    for _ in 0..2 {
        let sample: Vec<f64> = mean.iter().map(|m| m + std * rng.sample::<f64, _>(StandardNormal)).collect();
        norm = diffusion_norm(&sample, &cov);
        if norm >= DEGENERATE_FLOOR {
            return Ok(sample);
        }
    }
    Err(TvoError::DegenerateAllocation { norm, location: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// The payoff at maturity, zero before.
    Terminal,
    /// Discounted increments of the residual closed-form price.
    Shaped,
}

impl std::str::FromStr for RewardKind {
    type Err = TvoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terminal" => Ok(RewardKind::Terminal),
            "shaped" => Ok(RewardKind::Shaped),
            other => Err(TvoError::Input(format!("unknown reward kind '{other}'"))),
        }
    }
}

/// The move from fixing `k` to fixing `k + 1` of an episode with `steps` transitions.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub k: usize,
    pub steps: usize,
    pub t: f64,
    pub t_next: f64,
    pub spots: &'a [f64],
    pub index: f64,
    pub spots_next: &'a [f64],
    pub index_next: f64,
}

/// Closed-form value of the remaining option at `(t, S, I)`, assuming the
/// unconstrained optimum is applied from `t` on with the covariance frozen at
/// the current state. Equals the payoff at maturity.
pub fn residual_value(market: &MarketData, tvo: &TvoSpec, t: f64, spots: &[f64], index: f64) -> Result<f64> {
    let tau = tvo.maturity - t;
    if tau <= 1e-14 {
        return Ok(tvo.payoff.value(index, tvo.strike));
    }
    let sign = match Direction::for_payoff(tvo.payoff) {
        Direction::Min => -1.0,
        Direction::Max => 1.0,
    };
    let frozen = if market.is_local_vol() {
        Some(covariance(&build_nu(market, t, Some(spots))?))
    } else {
        None
    };
    let mut cuts: Vec<f64> = market.breakpoints().into_iter().filter(|&u| u > t && u < tvo.maturity).collect();
    cuts.insert(0, t);
    cuts.push(tvo.maturity);
    let mut ell = 0.0;
    for w in cuts.windows(2) {
        let cov = match &frozen {
            Some(c) => c.clone(),
            None => covariance(&build_nu(market, w[0], None)?),
        };
        ell += sign * tvo.sigma_bar * (-min_drift_value(&market.carry_at(w[0]), &cov)?) * (w[1] - w[0]);
    }
    let carry = market.rate().integrate(t, tvo.maturity)? - market.fee().integrate(t, tvo.maturity)?;
    black_formula(
        index * (carry - ell).exp(),
        tvo.strike,
        tau,
        tvo.sigma_bar,
        market.discount(t, tvo.maturity)?,
        tvo.payoff,
    )
}

pub fn reward(kind: RewardKind, tr: &Transition, market: &MarketData, tvo: &TvoSpec, gamma: f64) -> Result<f64> {
    let last = tr.k + 1 == tr.steps;
    match kind {
        RewardKind::Terminal => Ok(if last { tvo.payoff.value(tr.index_next, tvo.strike) } else { 0.0 }),
        RewardKind::Shaped => {
            let next = if last {
                tvo.payoff.value(tr.index_next, tvo.strike)
            } else {
                residual_value(market, tvo, tr.t_next, tr.spots_next, tr.index_next)?
            };
            let current = if tr.k == 0 { 0.0 } else { residual_value(market, tvo, tr.t, tr.spots, tr.index)? };
            Ok(gamma.powi(tr.k as i32) * (next - current))
        }
    }
}

/// Generalised advantage estimates for one episode ending in a terminal state.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let m = rewards.len();
    let mut adv = vec![0.0; m];
    let mut running = 0.0;
    for k in (0..m).rev() {
        let next = if k + 1 < m { values[k + 1] } else { 0.0 };
        let delta = rewards[k] + gamma * next - values[k];
        running = delta + gamma * lambda * running;
        adv[k] = running;
    }
    adv
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Log-density of a diagonal Gaussian with common standard deviation `exp(log_std)`.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: f64) -> f64 {
    let var = (2.0 * log_std).exp();
    let n = action.len() as f64;
    let sq: f64 = action.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
    -0.5 * sq / var - n * log_std - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub value: f64,
    pub ci_half_width: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// CSV with columns `x,value,ci_halfwidth`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value,ci_halfwidth\n");
        for p in &self.points {
            let ci = p.ci_half_width.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{ci}\n", p.x, p.value));
        }
        out
    }

    pub fn last_value(&self) -> Option<f64> {
        self.points.last().map(|p| p.value)
    }
}

/// Simulation settings shared by the trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub grid: Vec<f64>,
    pub substeps_per_fixing: usize,
    #[serde(default)]
    pub cap_omega: bool,
}

impl EpisodeConfig {
    fn validate(&self, maturity: f64) -> Result<()> {
        if self.substeps_per_fixing == 0 {
            return Err(TvoError::Input("substeps per fixing must be positive".into()));
        }
        validate_grid(&self.grid, maturity)
    }
}

/// One simulated episode advanced fixing by fixing.
struct Walker<'a> {
    stepper: AssetStepper<'a>,
    rng: ChaCha8Rng,
    log_i: f64,
    index: f64,
    scratch: Vec<f64>,
}

impl<'a> Walker<'a> {
    fn new(market: &'a MarketData, table: Option<&'a CoefTable>, rng: ChaCha8Rng, index0: f64) -> Self {
        Walker {
            stepper: AssetStepper::new(market, table),
            rng,
            log_i: index0.ln(),
            index: index0,
            scratch: vec![0.0; market.n()],
        }
    }

    /// Advances from fixing `k` to `k + 1` under `alpha`, accumulating
    /// `∂ log I_{k+1} / ∂α` into `grad` when given.
    fn advance(
        &mut self,
        alpha: &[f64],
        k: usize,
        ep: &EpisodeConfig,
        sigma_bar: f64,
        mut grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let subs = ep.substeps_per_fixing;
        let (t0, t1) = (ep.grid[k], ep.grid[k + 1]);
        let h = (t1 - t0) / subs as f64;
        for s in 0..subs {
            let t = t0 + h * s as f64;
            self.stepper.step(k * subs + s, t, h, &mut self.rng)?;
            let inc = match grad.as_deref_mut() {
                Some(g) => index_increment_grad(alpha, &self.stepper.drivers, sigma_bar, ep.cap_omega, &mut self.scratch, g)?,
                None => index_increment(alpha, &self.stepper.drivers, sigma_bar, ep.cap_omega)?.0,
            };
            self.log_i += inc;
        }
        self.index = self.log_i.exp();
        if !self.index.is_finite() {
            return Err(TvoError::Simulation(format!("non-finite index after fixing {}", k + 1)));
        }
        Ok(())
    }
}

fn locate(e: TvoError, p: usize, k: usize) -> TvoError {
    match e {
        TvoError::DegenerateAllocation { norm, .. } => TvoError::DegenerateAllocation {
            norm,
            location: Some(format!("episode {p}, fixing {k}")),
        },
        other => other,
    }
}

/// Network inputs for every walker at fixing `k`.
fn batch_states(walkers: &[Walker], forwards: &[f64], t: f64, index0: f64, width: usize) -> Result<Vec<f64>> {
    let mut states = vec![0.0; walkers.len() * width];
    for (w, row) in walkers.iter().zip(states.chunks_mut(width)) {
        normalize_into(forwards, index0, t, &w.stepper.spots, w.index, row)?;
    }
    Ok(states)
}

/// Adds the per-walker action base (parameterised mode) to `out`, returning the bases.
fn add_bases(policy: &NeuralPolicy, market: &MarketData, walkers: &[Walker], t: f64, out: &mut [f64]) -> Result<Vec<f64>> {
    let n = market.n();
    let mut bases = vec![0.0; out.len()];
    if policy.mode == ActionMode::Free {
        return Ok(bases);
    }
    let shared = if market.is_local_vol() { None } else { Some(free_optimum_at(market, t, &market.spots(), policy.direction)?) };
    for (b, w) in walkers.iter().enumerate() {
        let base = match &shared {
            Some(s) => s.clone(),
            None => free_optimum_at(market, t, &w.stepper.spots, policy.direction)?,
        };
        bases[b * n..(b + 1) * n].copy_from_slice(&base);
    }
    for (o, b) in out.iter_mut().zip(&bases) {
        *o += b;
    }
    Ok(bases)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectEstimate {
    /// Discounted mean payoff of the batch.
    pub loss: f64,
    pub std_error: f64,
}

/// Batch loss and its exact pathwise gradient with respect to the policy
/// parameters. Episodes use streams `0..batch` of `key`, so equal keys give
/// frozen draws.
pub fn direct_loss_and_gradient(
    policy: &NeuralPolicy,
    market: &MarketData,
    tvo: &TvoSpec,
    ep: &EpisodeConfig,
    key: StreamKey,
    batch: usize,
) -> Result<(DirectEstimate, Vec<f64>)> {
    policy.validate(market.n())?;
    ep.validate(tvo.maturity)?;
    if batch == 0 {
        return Err(TvoError::Input("batch must be positive".into()));
    }
    let n = market.n();
    let width = n + 2;
    let m = ep.grid.len() - 1;
    let table = CoefTable::for_market(market, &ep.grid, ep.substeps_per_fixing)?;
    let mut walkers: Vec<Walker> =
        (0..batch).map(|p| Walker::new(market, table.as_ref(), key.stream(p as u64), tvo.spot)).collect();
    let mut tapes: Vec<Tape> = Vec::with_capacity(m);
    let mut sens: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(m);
    for k in 0..m {
        let t = ep.grid[k];
        let forwards = market.forwards(t)?;
        let states = batch_states(&walkers, &forwards, t, tvo.spot, width)?;
        let (mut alpha, tape) = policy.net.forward_tape(&states)?;
        add_bases(policy, market, &walkers, t, &mut alpha)?;
        let mut g = vec![0.0; batch * n];
        levels.push(walkers.iter().map(|w| w.index).collect());
        walkers
            .par_iter_mut()
            .zip(g.par_chunks_mut(n))
            .enumerate()
            .try_for_each(|(b, (w, gb))| {
                w.advance(&alpha[b * n..(b + 1) * n], k, ep, tvo.sigma_bar, Some(gb)).map_err(|e| locate(e, b, k))
            })?;
        tapes.push(tape);
        sens.push(g);
    }
    let disc = market.discount(0.0, tvo.maturity)?;
    let payoffs: Vec<f64> = walkers.iter().map(|w| tvo.payoff.value(w.index, tvo.strike)).collect();
    let mean = payoffs.iter().sum::<f64>() / batch as f64;
    let var = if batch > 1 {
        payoffs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (batch - 1) as f64
    } else {
        0.0
    };
    // adjoint of log I, starting from the payoff (subgradient 0 at the kink)
    let mut lambda: Vec<f64> = walkers
        .iter()
        .map(|w| {
            let slope = match tvo.payoff {
                crate::pricing::Payoff::Call if w.index > tvo.strike => 1.0,
                crate::pricing::Payoff::Put if w.index < tvo.strike => -1.0,
                _ => 0.0,
            };
            disc * slope * w.index / batch as f64
        })
        .collect();
    let mut grad = vec![0.0; policy.net.params().len()];
    for k in (0..m).rev() {
        let upstream: Vec<f64> = sens[k]
            .chunks(n)
            .zip(&lambda)
            .flat_map(|(g, l)| g.iter().map(move |v| v * l))
            .collect();
        let (gp, gx) = policy.net.backward(&tapes[k], &upstream)?;
        for (a, b) in grad.iter_mut().zip(gp) {
            *a += b;
        }
        for b in 0..batch {
            lambda[b] += gx[b * width + n] * levels[k][b] / tvo.spot;
        }
    }
    Ok((
        DirectEstimate {
            loss: disc * mean,
            std_error: disc * (var / batch as f64).sqrt(),
        },
        grad,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_episodes: usize,
    pub restarts: usize,
    pub mode: ActionMode,
    pub episode: EpisodeConfig,
}

impl DirectConfig {
    /// Tanh 20×15×5 network, RMSprop at 10⁻³, four restarts.
    pub fn standard(episode: EpisodeConfig) -> Self {
        DirectConfig {
            hidden: vec![20, 15, 5],
            activation: Activation::Tanh,
            optimizer: OptimizerKind::Rmsprop,
            learning_rate: 1e-3,
            epochs: 300,
            batch_episodes: 1024,
            restarts: 4,
            mode: ActionMode::Free,
            episode,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_episodes == 0 || self.restarts == 0 {
            return Err(TvoError::Input("epochs, batch size and restarts must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TvoError::Input("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

fn layer_sizes(n: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    let mut sizes = vec![n + 2];
    sizes.extend_from_slice(hidden);
    sizes.push(out);
    sizes
}

fn initial_policy(n: usize, hidden: &[usize], activation: Activation, mode: ActionMode, direction: Direction, seed: u64) -> Result<NeuralPolicy> {
    let mut net = Network::xavier(layer_sizes(n, hidden, n), activation, seed)?;
    if mode == ActionMode::BaselineParameterized {
        // start exactly on the closed-form strategy
        net.zero_output_layer();
    }
    Ok(NeuralPolicy { net, mode, direction })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectOutcome {
    pub policy: NeuralPolicy,
    /// Curve of the selected restart.
    pub curve: LearningCurve,
    pub curves: Vec<LearningCurve>,
    pub final_losses: Vec<f64>,
    pub best_restart: usize,
}

/// Trains `restarts` independently initialised policies on common training
/// draws and keeps the one with the best final in-sample loss.
pub fn train_direct(market: &MarketData, tvo: &TvoSpec, config: &DirectConfig, seed: u64) -> Result<DirectOutcome> {
    config.validate()?;
    tvo.validate()?;
    let n = market.n();
    let direction = Direction::for_payoff(tvo.payoff);
    let train_key = StreamKey::new(seed, "direct-train");
    let init_key = StreamKey::new(seed, "direct-init");
    let mut best: Option<(f64, usize, NeuralPolicy)> = None;
    let mut curves = Vec::with_capacity(config.restarts);
    let mut final_losses = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let mut policy = initial_policy(n, &config.hidden, config.activation, config.mode, direction, init_key.with(r as u64).as_u64())?;
        let mut opt = Optimizer::new(config.optimizer, config.learning_rate, policy.net.params().len());
        let mut curve = LearningCurve::default();
        let mut last = f64::NAN;
        for e in 0..config.epochs {
            let (est, grad) =
                direct_loss_and_gradient(&policy, market, tvo, &config.episode, train_key.with(e as u64), config.batch_episodes)?;
            if !est.loss.is_finite() {
                return Err(TvoError::Training(format!("non-finite loss at epoch {e} of restart {r}")));
            }
            curve.points.push(CurvePoint {
                x: e as f64,
                value: est.loss,
                ci_half_width: Some(Z98 * est.std_error),
            });
            last = est.loss;
            opt.step(policy.net.params_mut(), &grad, StepDirection::Ascend)
                .map_err(|err| TvoError::Training(format!("epoch {e} of restart {r}: {err}")))?;
        }
        final_losses.push(last);
        curves.push(curve);
        if best.as_ref().map_or(true, |(l, _, _)| last > *l) {
            best = Some((last, r, policy));
        }
    }
    let (_, best_restart, policy) = best.expect("at least one restart");
    Ok(DirectOutcome {
        policy,
        curve: curves[best_restart].clone(),
        curves,
        final_losses,
        best_restart,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Episodes collected per update.
    pub episodes_per_update: usize,
    /// Episodes per gradient step inside an update.
    pub sgd_minibatch_episodes: usize,
    pub epochs_per_update: usize,
    pub updates: usize,
    pub log_std_initial: f64,
    pub log_std_final: f64,
    pub reward: RewardKind,
    pub mode: ActionMode,
    /// Episodes in the learning-curve moving average.
    pub curve_window: usize,
    pub episode: EpisodeConfig,
}

impl PpoConfig {
    /// Five hidden layers of eight units, learning rate 3·10⁻⁴, λ = 0.95,
    /// ε = 0.2, c₁ = 0.7, c₂ = 0, 2048 episodes per update; γ = 0.98 for the
    /// shaped reward and 1 for the terminal one.
    pub fn standard(reward: RewardKind, mode: ActionMode, episode: EpisodeConfig) -> Self {
        PpoConfig {
            hidden: vec![8; 5],
            activation: Activation::Tanh,
            optimizer: OptimizerKind::Nadam,
            learning_rate: 3e-4,
            gamma: match reward {
                RewardKind::Shaped => 0.98,
                RewardKind::Terminal => 1.0,
            },
            lambda: 0.95,
            clip: 0.2,
            value_coef: 0.7,
            entropy_coef: 0.0,
            episodes_per_update: 2048,
            sgd_minibatch_episodes: 256,
            epochs_per_update: 10,
            updates: 50,
            log_std_initial: -1.0,
            log_std_final: -3.0,
            reward,
            mode,
            curve_window: 100_000,
            episode,
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(TvoError::Input("gamma and lambda must lie in [0, 1]".into()));
        }
        if !(self.clip > 0.0) || !(self.learning_rate > 0.0) || self.value_coef < 0.0 {
            return Err(TvoError::Input("clip and learning rate must be > 0, value coefficient >= 0".into()));
        }
        if self.episodes_per_update == 0 || self.sgd_minibatch_episodes == 0 || self.epochs_per_update == 0 || self.updates == 0 {
            return Err(TvoError::Input("PPO counts must be positive".into()));
        }
        if self.curve_window == 0 {
            return Err(TvoError::Input("curve window must be positive".into()));
        }
        Ok(())
    }

    pub fn log_std_at(&self, update: usize) -> f64 {
        if self.updates <= 1 {
            return self.log_std_initial;
        }
        let w = update as f64 / (self.updates - 1) as f64;
        self.log_std_initial + w * (self.log_std_final - self.log_std_initial)
    }
}

/// Transitions of a batch of episodes, stored episode-major.
struct Rollout {
    steps: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    bases: Vec<f64>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
}

fn collect_rollout(
    policy: &NeuralPolicy,
    market: &MarketData,
    tvo: &TvoSpec,
    cfg: &PpoConfig,
    key: StreamKey,
    log_std: f64,
) -> Result<Rollout> {
    let n = market.n();
    let width = n + 2;
    let ep = &cfg.episode;
    let m = ep.grid.len() - 1;
    let e = cfg.episodes_per_update;
    let table = CoefTable::for_market(market, &ep.grid, ep.substeps_per_fixing)?;
    let mut walkers: Vec<Walker> =
        (0..e).map(|p| Walker::new(market, table.as_ref(), key.stream(p as u64), tvo.spot)).collect();
    let noise_key = key.child("action-noise");
    let mut noise: Vec<ChaCha8Rng> = (0..e).map(|p| noise_key.stream(p as u64)).collect();
    let mut out = Rollout {
        steps: m,
        states: vec![0.0; e * m * width],
        actions: vec![0.0; e * m * n],
        bases: vec![0.0; e * m * n],
        log_probs: vec![0.0; e * m],
        rewards: vec![0.0; e * m],
    };
    let std = log_std.exp();
    // residual values at the previous fixing, for the shaped reward
    let mut previous = vec![0.0; e];
    for k in 0..m {
        let t = ep.grid[k];
        let forwards = market.forwards(t)?;
        let states = batch_states(&walkers, &forwards, t, tvo.spot, width)?;
        let mut mean = policy.net.forward(&states)?;
        let bases = add_bases(policy, market, &walkers, t, &mut mean)?;
        let cov_shared = if market.is_local_vol() { None } else { Some(covariance(&build_nu(market, t, None)?)) };
        let mut actions = vec![0.0; e * n];
        for b in 0..e {
            let cov = match &cov_shared {
                Some(c) => c.clone(),
                None => covariance(&build_nu(market, t, Some(&walkers[b].stepper.spots))?),
            };
            let mb = &mean[b * n..(b + 1) * n];
            let ab = &mut actions[b * n..(b + 1) * n];
            let mut ok = false;
            for _ in 0..2 {
                for (a, mu) in ab.iter_mut().zip(mb) {
                    *a = mu + std * noise[b].sample::<f64, _>(StandardNormal);
                }
                if diffusion_norm(ab, &cov) >= DEGENERATE_FLOOR {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(locate(TvoError::DegenerateAllocation { norm: diffusion_norm(ab, &cov), location: None }, b, k));
            }
            let row = b * m + k;
            out.states[row * width..(row + 1) * width].copy_from_slice(&states[b * width..(b + 1) * width]);
            out.actions[row * n..(row + 1) * n].copy_from_slice(ab);
            out.bases[row * n..(row + 1) * n].copy_from_slice(&bases[b * n..(b + 1) * n]);
            out.log_probs[row] = gaussian_log_prob(ab, mb, log_std);
        }
        walkers
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(b, w)| w.advance(&actions[b * n..(b + 1) * n], k, ep, tvo.sigma_bar, None).map_err(|e| locate(e, b, k)))?;
        let t_next = ep.grid[k + 1];
        let last = k + 1 == m;
        for (b, w) in walkers.iter().enumerate() {
            let r = match cfg.reward {
                RewardKind::Terminal => {
                    if last {
                        tvo.payoff.value(w.index, tvo.strike)
                    } else {
                        0.0
                    }
                }
                RewardKind::Shaped => {
                    let next = if last {
                        tvo.payoff.value(w.index, tvo.strike)
                    } else {
                        residual_value(market, tvo, t_next, &w.stepper.spots, w.index)?
                    };
                    let r = cfg.gamma.powi(k as i32) * (next - previous[b]);
                    previous[b] = next;
                    r
                }
            };
            out.rewards[b * m + k] = r;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PpoOutcome {
    pub policy: NeuralPolicy,
    pub value_net: Network,
    pub curve: LearningCurve,
    pub final_log_std: f64,
    pub episodes: usize,
}

/// Clipped-surrogate PPO with a separate value network of the same architecture.
pub fn train_ppo(market: &MarketData, tvo: &TvoSpec, config: &PpoConfig, seed: u64) -> Result<PpoOutcome> {
    config.validate()?;
    config.episode.validate(tvo.maturity)?;
    tvo.validate()?;
    let n = market.n();
    let width = n + 2;
    let direction = Direction::for_payoff(tvo.payoff);
    let init_key = StreamKey::new(seed, "ppo-init");
    let train_key = StreamKey::new(seed, "ppo-train");
    let mut policy = initial_policy(n, &config.hidden, config.activation, config.mode, direction, init_key.with(0).as_u64())?;
    let mut value_net = Network::xavier(layer_sizes(n, &config.hidden, 1), config.activation, init_key.with(1).as_u64())?;
    let mut policy_opt = Optimizer::new(config.optimizer, config.learning_rate, policy.net.params().len());
    let mut value_opt = Optimizer::new(config.optimizer, config.learning_rate, value_net.params().len());
    let mut returns_seen: Vec<f64> = Vec::new();
    let mut curve = LearningCurve::default();
    let mut log_std = config.log_std_initial;
    for u in 0..config.updates {
        log_std = config.log_std_at(u);
        let key = train_key.with(u as u64);
        let ro = collect_rollout(&policy, market, tvo, config, key, log_std)?;
        let m = ro.steps;
        let e = config.episodes_per_update;
        let values_old = value_net.forward(&ro.states)?;
        let mut advantages = vec![0.0; e * m];
        let mut targets = vec![0.0; e * m];
        for b in 0..e {
            let rows = b * m..(b + 1) * m;
            let adv = gae(&ro.rewards[rows.clone()], &values_old[rows.clone()], config.gamma, config.lambda);
            for (j, a) in adv.into_iter().enumerate() {
                advantages[b * m + j] = a;
                targets[b * m + j] = a + values_old[b * m + j];
            }
            returns_seen.push(ro.rewards[rows].iter().sum());
        }

        let var = (2.0 * log_std).exp();
        let mut order: Vec<usize> = (0..e).collect();
        for epoch in 0..config.epochs_per_update {
            let mut shuffle = key.child("shuffle").with(epoch as u64).stream(0);
            order.shuffle(&mut shuffle);
            for chunk in order.chunks(config.sgd_minibatch_episodes) {
                let rows: Vec<usize> = chunk.iter().flat_map(|&b| b * m..(b + 1) * m).collect();
                let count = rows.len() as f64;
                let mut states = Vec::with_capacity(rows.len() * width);
                for &r in &rows {
                    states.extend_from_slice(&ro.states[r * width..(r + 1) * width]);
                }
                let adv: Vec<f64> = rows.iter().map(|&r| advantages[r]).collect();
                let mean_a = adv.iter().sum::<f64>() / count;
                let sd_a = (adv.iter().map(|a| (a - mean_a) * (a - mean_a)).sum::<f64>() / count).sqrt();
                let (out, tape) = policy.net.forward_tape(&states)?;
                let mut upstream = vec![0.0; rows.len() * n];
                for (i, &r) in rows.iter().enumerate() {
                    let a_norm = (adv[i] - mean_a) / (sd_a + 1e-8);
                    let mean: Vec<f64> = out[i * n..(i + 1) * n].iter().zip(&ro.bases[r * n..(r + 1) * n]).map(|(o, b)| o + b).collect();
                    let action = &ro.actions[r * n..(r + 1) * n];
                    let log_ratio = gaussian_log_prob(action, &mean, log_std) - ro.log_probs[r];
                    let ratio = log_ratio.min(50.0).exp();
                    let clipped = (a_norm > 0.0 && ratio > 1.0 + config.clip) || (a_norm < 0.0 && ratio < 1.0 - config.clip);
                    if !clipped {
                        for j in 0..n {
                            upstream[i * n + j] = a_norm * ratio * (action[j] - mean[j]) / var / count;
                        }
                    }
                }
                let (gp, _) = policy.net.backward(&tape, &upstream)?;
                policy_opt
                    .step(policy.net.params_mut(), &gp, StepDirection::Ascend)
                    .map_err(|err| TvoError::Training(format!("policy update {u}: {err}")))?;

                let (v, vtape) = value_net.forward_tape(&states)?;
                let vup: Vec<f64> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| config.value_coef * 2.0 * (v[i] - targets[r]) / count)
                    .collect();
                let (gv, _) = value_net.backward(&vtape, &vup)?;
                value_opt
                    .step(value_net.params_mut(), &gv, StepDirection::Descend)
                    .map_err(|err| TvoError::Training(format!("value update {u}: {err}")))?;
            }
        }

        let window = &returns_seen[returns_seen.len().saturating_sub(config.curve_window)..];
        let w = window.len() as f64;
        let mean = window.iter().sum::<f64>() / w;
        let sd = if window.len() > 1 {
            (window.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (w - 1.0)).sqrt()
        } else {
            0.0
        };
        if !mean.is_finite() {
            return Err(TvoError::Training(format!("non-finite episode returns at update {u}")));
        }
        curve.points.push(CurvePoint {
            x: returns_seen.len() as f64,
            value: mean,
            ci_half_width: Some(Z98 * sd / w.sqrt()),
        });
    }
    Ok(PpoOutcome {
        policy,
        value_net,
        curve,
        final_log_std: log_std,
        episodes: returns_seen.len(),
    })
}

/// Out-of-sample price of a (usually trained) strategy: the deterministic
/// allocation is driven through the simulator and priced by Monte Carlo.
/// Training streams are derived from different labels, so the scenarios are
/// never seen during training.
pub fn evaluate_policy(strategy: &StrategySpec, market: &MarketData, tvo: &TvoSpec, config: &SimConfig) -> Result<McResult> {
    mc_price(market, strategy, tvo, config)
}

/// Undiscounted episode returns under a deterministic strategy, paired with
/// the undiscounted payoffs of the same episodes.
pub fn episode_returns(
    strategy: &StrategySpec,
    market: &MarketData,
    tvo: &TvoSpec,
    kind: RewardKind,
    gamma: f64,
    config: &SimConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let paths = crate::simulator::simulate_tvs(market, strategy, tvo, config)?;
    let m = paths.grid.len() - 1;
    let mut returns = Vec::with_capacity(paths.paths.len());
    let mut payoffs = Vec::with_capacity(paths.paths.len());
    for path in &paths.paths {
        let mut total = 0.0;
        for k in 0..m {
            let tr = Transition {
                k,
                steps: m,
                t: path[k].t,
                t_next: path[k + 1].t,
                spots: &path[k].spots,
                index: path[k].index,
                spots_next: &path[k + 1].spots,
                index_next: path[k + 1].index,
            };
            total += reward(kind, &tr, market, tvo, gamma)?;
        }
        returns.push(total);
        payoffs.push(tvo.payoff.value(path[m].index, tvo.strike));
    }
    Ok((returns, payoffs))
}
