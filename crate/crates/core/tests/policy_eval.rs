use std::path::PathBuf;

use tvo_core::market::load_market;
use tvo_core::nn::{Activation, Network};
use tvo_core::pricing::{mc_price, Payoff, TvoSpec};
use tvo_core::rl::{episode_returns, evaluate_policy, ActionMode, NeuralPolicy, RewardKind};
use tvo_core::simulator::{fixing_grid, substeps_for, SimConfig};
use tvo_core::strategy::{Direction, StrategySpec};

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/markets").join(name)
}

fn contract() -> TvoSpec {
    TvoSpec::new(1.0, 1.0, 2.0, 0.05, Payoff::Call).unwrap()
}

fn config(market: &tvo_core::market::MarketData, paths: usize, seed: u64) -> SimConfig {
    let grid = fixing_grid(market, 2.0, 12).unwrap();
    let subs = substeps_for(&grid, 100);
    SimConfig::new(paths, grid, subs, seed)
}

#[test]
fn zero_parameterized_policy_prices_like_the_baseline() {
    for name in ["bs2.json", "lv2.json"] {
        let market = load_market(bundled(name)).unwrap();
        let tvo = contract();
        let cfg = config(&market, 3000, 11);
        let policy = NeuralPolicy {
            net: Network::zeros(vec![4, 6, 6, 2], Activation::Tanh).unwrap(),
            mode: ActionMode::BaselineParameterized,
            direction: Direction::Min,
        };
        let agent = evaluate_policy(&StrategySpec::Neural(policy), &market, &tvo, &cfg).unwrap();
        let base = mc_price(&market, &StrategySpec::ClosedFormFree { direction: Direction::Min }, &tvo, &cfg).unwrap();
        assert_eq!(agent, base, "{name}");
    }
}

#[test]
fn constant_policy_evaluation_is_mc_price() {
    let market = load_market(bundled("bs3.json")).unwrap();
    let tvo = contract();
    let cfg = config(&market, 2000, 5);
    let s = StrategySpec::Constant { alpha: vec![0.2, -0.4, 0.7] };
    assert_eq!(evaluate_policy(&s, &market, &tvo, &cfg).unwrap(), mc_price(&market, &s, &tvo, &cfg).unwrap());
}

#[test]
fn undiscounted_shaped_returns_average_to_the_payoff_mean() {
    let market = load_market(bundled("lv2.json")).unwrap();
    let tvo = contract();
    let cfg = config(&market, 500, 2);
    let s = StrategySpec::ClosedFormFree { direction: Direction::Min };
    let (returns, payoffs) = episode_returns(&s, &market, &tvo, RewardKind::Shaped, 1.0, &cfg).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean(&returns) - mean(&payoffs)).abs() < 1e-12);
    let (terminal, _) = episode_returns(&s, &market, &tvo, RewardKind::Terminal, 1.0, &cfg).unwrap();
    assert_eq!(terminal, payoffs);
}
