use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use serde_json::{json, Value};
use tvo_core::error::{Result, TvoError};
use tvo_core::hjb::{solve_reduced_hjb, HjbMode, PdeGrid};
use tvo_core::market::{build_nu, load_market, MarketData};
use tvo_core::nn::{Activation, OptimizerKind};
use tvo_core::pricing::{bs_closed_price, mc_price, tvs_forward, McResult, Payoff, TvoSpec};
use tvo_core::rl::{
    evaluate_policy, train_direct, train_ppo, ActionMode, DirectConfig, EpisodeConfig, NeuralPolicy, PpoConfig,
    RewardKind,
};
use tvo_core::simulator::{fixing_grid, simulate_tvs, substeps_for, SimConfig};
use tvo_core::strategy::{
    baseline, covariance, drift_ratio, optimal_bang_bang, optimal_constrained, optimal_free, BaselineVariant,
    Constraint, Direction, FixingView, StrategySpec,
};

use crate::args::*;
use crate::report::{file_digest, write_artifact, Report};

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("TVO_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("tvo-out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn run(cli: &Cli) -> Result<PathBuf> {
    let dir = out_dir(cli)?;
    let start = Instant::now();
    let name = cli.command.name();
    let (config, seed, digest, result) = match &cli.command {
        Command::PriceBs(a) => price_bs(a)?,
        Command::PriceMc(a) => price_mc(a, &dir)?,
        Command::SolveStrategy(a) => solve_strategy(a)?,
        Command::CompareBaselines(a) => compare_baselines(a, &dir)?,
        Command::HjbCheck(a) => hjb_check(a, &dir)?,
        Command::TrainDirect(a) => train_direct_cmd(a, &dir)?,
        Command::TrainPpo(a) => train_ppo_cmd(a, &dir)?,
        Command::Evaluate(a) => evaluate(a)?,
    };
    Report {
        command: name,
        config,
        seed,
        market_digest: Some(digest),
        result,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    }
    .write(&dir)
}

type Outcome = (Value, Option<u64>, String, Value);

fn config_of<T: serde::Serialize>(args: &T) -> Result<Value> {
    Ok(serde_json::to_value(args)?)
}

fn read_market(path: &std::path::Path) -> Result<MarketData> {
    if !path.is_file() {
        return Err(TvoError::Input(format!("market file {} does not exist", path.display())));
    }
    load_market(path)
}

fn load_contract(c: &ContractArgs) -> Result<(MarketData, TvoSpec, String)> {
    let market = read_market(&c.market)?;
    let payoff: Payoff = c.payoff.parse()?;
    let tvo = TvoSpec::new(c.spot, c.strike, c.maturity, c.target_vol, payoff)?;
    Ok((market, tvo, file_digest(&c.market)?))
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            let x = x.trim();
            match x {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => x.parse::<f64>().map_err(|_| TvoError::Input(format!("cannot parse '{x}' in {what}"))),
            }
        })
        .collect()
}

fn parse_constraint(s: &str) -> Result<Constraint> {
    match s {
        "free" => Ok(Constraint::Free),
        "nonnegative" | "non-negative" => Ok(Constraint::NonNegative),
        _ => {
            let Some(body) = s.strip_prefix("box:") else {
                return Err(TvoError::Input(format!("unknown constraint '{s}'")));
            };
            let (lo, hi) = body
                .split_once('/')
                .ok_or_else(|| TvoError::Input("box constraint needs lower/upper bounds".into()))?;
            Ok(Constraint::Box {
                lower: parse_floats(lo, "box lower bounds")?,
                upper: parse_floats(hi, "box upper bounds")?,
            })
        }
    }
}

/// Rebalancing times of the baseline strategies: inception plus every market pillar before maturity.
fn pillar_grid(market: &MarketData, maturity: f64) -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend(market.breakpoints().into_iter().filter(|&t| t > 0.0 && t < maturity));
    grid
}

fn resolve_strategy(s: &StrategyArgs, market: &MarketData, tvo: &TvoSpec) -> Result<StrategySpec> {
    let direction = Direction::for_payoff(tvo.payoff);
    let spec = match s.strategy.as_str() {
        "auto" => StrategySpec::auto(market, tvo.payoff, &parse_constraint(&s.constraint)?),
        "free" => StrategySpec::ClosedFormFree { direction },
        "bang-bang" => StrategySpec::BangBang,
        "S_A" => baseline(BaselineVariant::MaxForward, market, tvo.maturity, &pillar_grid(market, tvo.maturity))?,
        "S_B" => baseline(BaselineVariant::MinCarry, market, tvo.maturity, &pillar_grid(market, tvo.maturity))?,
        "S_C" => baseline(BaselineVariant::MinCarryPerVol, market, tvo.maturity, &pillar_grid(market, tvo.maturity))?,
        other => match other.strip_prefix("constant:") {
            Some(list) => StrategySpec::Constant {
                alpha: parse_floats(list, "constant allocation")?,
            },
            None => return Err(TvoError::Input(format!("unknown strategy '{other}'"))),
        },
    };
    spec.validate(market.n())?;
    Ok(spec)
}

fn sim_config(s: &SimArgs, market: &MarketData, maturity: f64, paths: usize) -> Result<SimConfig> {
    let grid = fixing_grid(market, maturity, s.fixings_per_year)?;
    let subs = substeps_for(&grid, s.substeps_per_year);
    let mut cfg = SimConfig::new(paths, grid, subs, s.seed);
    cfg.cap_omega = s.cap_omega;
    Ok(cfg)
}

fn mc_json(r: &McResult) -> Value {
    json!({ "price": r.price, "std_error": r.std_error, "ci99": r.ci99, "paths_used": r.paths_used })
}

fn price_bs(a: &PriceBsArgs) -> Result<Outcome> {
    let (market, tvo, digest) = load_contract(&a.contract)?;
    let strategy = resolve_strategy(&a.strategy, &market, &tvo)?;
    let price = bs_closed_price(&market, &tvo, &strategy)?;
    let forward = tvs_forward(&market, &tvo, &strategy, 0.0, tvo.maturity, tvo.spot)?;
    let spots = market.spots();
    let alpha0 = strategy.allocate(&market, &FixingView { t: 0.0, spots: &spots, index: tvo.spot, index0: tvo.spot })?;
    let result = json!({
        "price": price,
        "tvs_forward": forward,
        "discount": market.discount(0.0, tvo.maturity)?,
        "strategy": strategy.label(),
        "alpha_at_inception": alpha0,
    });
    Ok((config_of(a)?, None, digest, result))
}

fn price_mc(a: &PriceMcArgs, dir: &std::path::Path) -> Result<Outcome> {
    let (market, tvo, digest) = load_contract(&a.contract)?;
    let strategy = resolve_strategy(&a.strategy, &market, &tvo)?;
    let cfg = sim_config(&a.sim, &market, tvo.maturity, a.sim.paths)?;
    let mc = if a.record_paths {
        let paths = simulate_tvs(&market, &strategy, &tvo, &cfg)?;
        write_artifact(dir, "paths.csv", &paths.to_csv())?;
        tvo_core::pricing::mc_price_paths(&paths, &market, &tvo)?
    } else {
        mc_price(&market, &strategy, &tvo, &cfg)?
    };
    let self_check = if market.is_local_vol() {
        Value::Null
    } else {
        let closed = bs_closed_price(&market, &tvo, &strategy)?;
        let z = if mc.std_error > 0.0 {
            (mc.price - closed).abs() / mc.std_error
        } else if mc.price == closed {
            0.0
        } else {
            f64::INFINITY
        };
        json!({ "closed_form": closed, "abs_error_in_std_errors": z, "within_3_std_errors": z <= 3.0 })
    };
    let result = json!({
        "mc": mc_json(&mc),
        "strategy": strategy.label(),
        "fixings": cfg.grid.len() - 1,
        "substeps_per_fixing": cfg.substeps_per_fixing,
        "self_check": self_check,
        "paths_csv": if a.record_paths { Value::from("paths.csv") } else { Value::Null },
    });
    Ok((config_of(a)?, Some(a.sim.seed), digest, result))
}

fn solve_strategy(a: &SolveArgs) -> Result<Outcome> {
    let market = read_market(&a.market)?;
    let digest = file_digest(&a.market)?;
    let payoff: Payoff = a.payoff.parse()?;
    let direction = Direction::for_payoff(payoff);
    let mu = market.carry_at(a.at);
    let nu = build_nu(&market, a.at, None)?;
    let cov = covariance(&nu);
    let result = match a.kind.as_str() {
        "free" => {
            let opt = optimal_free(&mu, &nu, direction)?;
            json!({ "alpha": opt.alpha, "objective": opt.objective, "degenerate": opt.degenerate })
        }
        "bang-bang" => {
            let opt = optimal_bang_bang(&mu, &cov)?;
            json!({ "alpha": opt.alpha, "objective": opt.objective, "index": opt.index })
        }
        "constrained" => {
            let opt = optimal_constrained(&mu, &nu, &parse_constraint(&a.constraint)?, direction)?;
            json!({ "alpha": opt.alpha, "objective": opt.objective, "check": drift_ratio(&opt.alpha, &mu, &cov)? })
        }
        other => return Err(TvoError::Input(format!("unknown strategy kind '{other}'"))),
    };
    Ok((config_of(a)?, None, digest, result))
}

fn compare_baselines(a: &CompareArgs, dir: &std::path::Path) -> Result<Outcome> {
    let (market, tvo, digest) = load_contract(&a.contract)?;
    let grid = pillar_grid(&market, tvo.maturity);
    let optimal = StrategySpec::auto(&market, tvo.payoff, &parse_constraint(&a.constraint)?);
    let mut strategies = vec![("BS*".to_string(), optimal)];
    for v in BaselineVariant::ALL {
        strategies.push((v.label().to_string(), baseline(v, &market, tvo.maturity, &grid)?));
    }
    let cfg = sim_config(&a.sim, &market, tvo.maturity, a.sim.paths)?;
    let mut rows = Vec::new();
    let mut csv = String::from("strategy,price,std_error\n");
    for (label, s) in &strategies {
        let (price, se) = if market.is_local_vol() {
            let r = mc_price(&market, s, &tvo, &cfg)?;
            (r.price, Some(r.std_error))
        } else {
            (bs_closed_price(&market, &tvo, s)?, None)
        };
        csv.push_str(&format!("{label},{price},{}\n", se.map(|x| x.to_string()).unwrap_or_default()));
        rows.push(json!({ "strategy": label, "price": price, "std_error": se }));
    }
    let best = rows[0]["price"].as_f64().unwrap_or(f64::NAN);
    let dominates = rows[1..].iter().all(|r| best >= r["price"].as_f64().unwrap_or(f64::NAN) - 1e-12);
    let result = json!({
        "method": if market.is_local_vol() { "monte_carlo" } else { "closed_form" },
        "prices": rows,
        "optimal_dominates": dominates,
        "table_csv": write_artifact(dir, "baselines.csv", &csv)?,
    });
    let seed = market.is_local_vol().then_some(a.sim.seed);
    Ok((config_of(a)?, seed, digest, result))
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| TvoError::Input(format!("grid '{s}' must look like 400x400")))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| TvoError::Input(format!("bad grid size '{v}'")));
    Ok((parse(a)?, parse(b)?))
}

fn hjb_check(a: &HjbArgs, dir: &std::path::Path) -> Result<Outcome> {
    let (market, tvo, digest) = load_contract(&a.contract)?;
    let (space, time) = parse_grid(&a.grid)?;
    let mode = match a.mode.as_str() {
        "monotone" => HjbMode::Monotone,
        "pointwise" => HjbMode::Pointwise,
        other => return Err(TvoError::Input(format!("unknown HJB mode '{other}'"))),
    };
    let closed = bs_closed_price(&market, &tvo, &StrategySpec::auto(&market, tvo.payoff, &Constraint::Free))?;
    let fine = solve_reduced_hjb(&market, &tvo, &PdeGrid::new(space, time), mode)?;
    let coarse = solve_reduced_hjb(&market, &tvo, &PdeGrid::new(space / 2, time / 2), mode)?;
    let err_fine = (fine.value - closed).abs();
    let err_coarse = (coarse.value - closed).abs();
    let rel = err_fine / closed.abs();
    let factor = if err_fine > 0.0 { err_coarse / err_fine } else { f64::INFINITY };
    let surface = if a.surface_csv {
        Value::from(write_artifact(dir, "hjb_surface.csv", &fine.to_csv())?)
    } else {
        Value::Null
    };
    let result = json!({
        "value": fine.value,
        "closed_form": closed,
        "relative_error": rel,
        "within_tolerance": rel < a.tolerance,
        "coarse_value": coarse.value,
        "coarse_relative_error": err_coarse / closed.abs(),
        "convergence_factor": factor,
        "converges": factor >= 3.0,
        "diagnostics": fine.diagnostics,
        "surface_csv": surface,
    });
    Ok((config_of(a)?, None, digest, result))
}

fn episode_config(e: &EpisodeArgs, market: &MarketData, maturity: f64) -> Result<EpisodeConfig> {
    let grid = fixing_grid(market, maturity, e.fixings_per_year)?;
    let substeps_per_fixing = substeps_for(&grid, e.substeps_per_year);
    Ok(EpisodeConfig { grid, substeps_per_fixing, cap_omega: e.cap_omega })
}

fn eval_config(e: &EpisodeArgs, market: &MarketData, maturity: f64) -> Result<SimConfig> {
    let ep = episode_config(e, market, maturity)?;
    let mut cfg = SimConfig::new(e.eval_paths, ep.grid, ep.substeps_per_fixing, e.seed);
    cfg.cap_omega = e.cap_omega;
    Ok(cfg)
}

/// Price of the optimal strategy used to judge a trained policy: the closed
/// form in BS markets, the pathwise closed-form strategy by Monte Carlo otherwise.
fn reference_price(market: &MarketData, tvo: &TvoSpec, cfg: &SimConfig) -> Result<(String, McResult)> {
    let strategy = StrategySpec::ClosedFormFree { direction: Direction::for_payoff(tvo.payoff) };
    if market.is_local_vol() {
        Ok(("baseline_mc".into(), mc_price(market, &strategy, tvo, cfg)?))
    } else {
        let p = bs_closed_price(market, tvo, &strategy)?;
        Ok(("closed_form".into(), McResult { price: p, std_error: 0.0, ci99: [p, p], paths_used: 0 }))
    }
}

fn comparison(eval: &McResult, kind: &str, reference: &McResult) -> Value {
    let gap = eval.price - reference.price;
    let combined = (eval.std_error.powi(2) + reference.std_error.powi(2)).sqrt();
    let relative = gap / reference.price.abs();
    json!({
        "reference_kind": kind,
        "reference": mc_json(reference),
        "gap": gap,
        "relative_gap": relative,
        "combined_std_error": combined,
        "within_2_combined_std_errors": gap.abs() <= 2.0 * combined,
        "within_half_percent": relative.abs() <= 5e-3,
    })
}

fn write_policy(dir: &std::path::Path, policy: &NeuralPolicy) -> Result<String> {
    write_artifact(dir, "policy.json", &(serde_json::to_string_pretty(policy)? + "\n"))
}

fn train_direct_cmd(a: &TrainDirectArgs, dir: &std::path::Path) -> Result<Outcome> {
    let (market, tvo, digest) = load_contract(&a.contract)?;
    let mut cfg = DirectConfig::standard(episode_config(&a.episode, &market, tvo.maturity)?);
    let net = &a.network;
    if let Some(h) = &net.hidden {
        cfg.hidden = h.clone();
    }
    cfg.activation = net.activation.parse::<Activation>()?;
    if let Some(o) = &net.optimizer {
        cfg.optimizer = o.parse::<OptimizerKind>()?;
    }
    if let Some(lr) = net.learning_rate {
        cfg.learning_rate = lr;
    }
    cfg.mode = net.mode.parse::<ActionMode>()?;
    cfg.epochs = a.epochs;
    cfg.batch_episodes = a.batch;
    cfg.restarts = a.restarts;
    let outcome = train_direct(&market, &tvo, &cfg, a.episode.seed)?;
    let policy_file = write_policy(dir, &outcome.policy)?;
    let curve_file = write_artifact(dir, "curve.csv", &outcome.curve.to_csv())?;
    let eval_cfg = eval_config(&a.episode, &market, tvo.maturity)?;
    let eval = evaluate_policy(&StrategySpec::Neural(outcome.policy.clone()), &market, &tvo, &eval_cfg)?;
    let (kind, reference) = reference_price(&market, &tvo, &eval_cfg)?;
    let result = json!({
        "resolved": cfg,
        "final_losses": outcome.final_losses,
        "best_restart": outcome.best_restart,
        "evaluation": mc_json(&eval),
        "comparison": comparison(&eval, &kind, &reference),
        "policy_file": policy_file,
        "curve_csv": curve_file,
    });
    Ok((config_of(a)?, Some(a.episode.seed), digest, result))
}

fn train_ppo_cmd(a: &TrainPpoArgs, dir: &std::path::Path) -> Result<Outcome> {
    let (market, tvo, digest) = load_contract(&a.contract)?;
    let reward: RewardKind = a.reward.parse()?;
    let mode: ActionMode = a.network.mode.parse()?;
    let mut cfg = PpoConfig::standard(reward, mode, episode_config(&a.episode, &market, tvo.maturity)?);
    let net = &a.network;
    if let Some(h) = &net.hidden {
        cfg.hidden = h.clone();
    }
    cfg.activation = net.activation.parse::<Activation>()?;
    if let Some(o) = &net.optimizer {
        cfg.optimizer = o.parse::<OptimizerKind>()?;
    }
    if let Some(lr) = net.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    cfg.lambda = a.lambda;
    cfg.clip = a.clip;
    cfg.value_coef = a.value_coef;
    cfg.updates = a.updates;
    cfg.episodes_per_update = a.episodes_per_update;
    cfg.sgd_minibatch_episodes = a.sgd_minibatch;
    cfg.epochs_per_update = a.epochs_per_update;
    cfg.log_std_initial = a.log_std_initial;
    cfg.log_std_final = a.log_std_final;
    let outcome = train_ppo(&market, &tvo, &cfg, a.episode.seed)?;
    let policy_file = write_policy(dir, &outcome.policy)?;
    let curve_file = write_artifact(dir, "curve.csv", &outcome.curve.to_csv())?;
    let eval_cfg = eval_config(&a.episode, &market, tvo.maturity)?;
    let eval = evaluate_policy(&StrategySpec::Neural(outcome.policy.clone()), &market, &tvo, &eval_cfg)?;
    let (kind, reference) = reference_price(&market, &tvo, &eval_cfg)?;
    let result = json!({
        "resolved": cfg,
        "episodes": outcome.episodes,
        "final_log_std": outcome.final_log_std,
        "final_curve_value": outcome.curve.last_value(),
        "evaluation": mc_json(&eval),
        "comparison": comparison(&eval, &kind, &reference),
        "policy_file": policy_file,
        "curve_csv": curve_file,
    });
    Ok((config_of(a)?, Some(a.episode.seed), digest, result))
}

fn evaluate(a: &EvaluateArgs) -> Result<Outcome> {
    let (market, tvo, digest) = load_contract(&a.contract)?;
    let policy: NeuralPolicy = serde_json::from_str(&fs::read_to_string(&a.policy)?)?;
    policy.validate(market.n())?;
    let cfg = sim_config(&a.sim, &market, tvo.maturity, a.sim.paths)?;
    let eval = evaluate_policy(&StrategySpec::Neural(policy), &market, &tvo, &cfg)?;
    let (kind, reference) = reference_price(&market, &tvo, &cfg)?;
    let result = json!({
        "evaluation": mc_json(&eval),
        "comparison": comparison(&eval, &kind, &reference),
        "policy_digest": file_digest(&a.policy)?,
    });
    Ok((config_of(a)?, Some(a.sim.seed), digest, result))
}
