//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain program (`harness = false`). Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 3 5`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tvo_core::market::{build_nu, flat_bs_market, load_market, CorrelationMatrix, MarketData};
use tvo_core::nn::{Activation, Network};
use tvo_core::pricing::{bs_closed_price, mc_price, mc_price_paths, McResult, Payoff, TvoSpec};
use tvo_core::rl::{
    direct_loss_and_gradient, evaluate_policy, train_direct, train_ppo, ActionMode, DirectConfig, EpisodeConfig,
    NeuralPolicy, PpoConfig, RewardKind,
};
use tvo_core::rng::StreamKey;
use tvo_core::simulator::{fixing_grid, realized_vol, simulate_projection, simulate_tvs, substeps_for, SimConfig};
use tvo_core::strategy::{
    baseline, covariance, optimal_bang_bang, optimal_free, BaselineVariant, Constraint, Direction, StrategySpec,
};

type Outcome = Result<String, String>;

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/markets").join(name)
}

/// The reference contract: I0 = K = 1, T = 2, σ̄ = 5%, call.
fn contract() -> TvoSpec {
    TvoSpec::new(1.0, 1.0, 2.0, 0.05, Payoff::Call).unwrap()
}

fn sim(market: &MarketData, maturity: f64, paths: usize, substeps_per_year: usize, seed: u64) -> SimConfig {
    let grid = fixing_grid(market, maturity, 12).unwrap();
    let subs = substeps_for(&grid, substeps_per_year);
    SimConfig::new(paths, grid, subs, seed)
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn tvo_cli(out: &Path, threads: usize, args: &[&str]) -> Result<Value, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_tvo"))
        .arg("--threads")
        .arg(threads.to_string())
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(err)?;
    if !status.status.success() {
        return Err(format!("tvo {} failed: {}", args[0], String::from_utf8_lossy(&status.stderr)));
    }
    let text = std::fs::read_to_string(out.join(format!("{}.json", args[0]))).map_err(err)?;
    serde_json::from_str(&text).map_err(err)
}

fn random_correlation(rng: &mut ChaCha8Rng, n: usize) -> CorrelationMatrix {
    // (1 − w)·I + w·VVᵀ with unit rows in V is a well-conditioned correlation matrix
    let w = rng.random_range(0.0..0.8);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..n + 1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            entries[i * n + j] = if i == j { 1.0 } else { w * dot };
        }
    }
    CorrelationMatrix::new(n, entries).unwrap()
}

fn random_bs_market(rng: &mut ChaCha8Rng, n: usize, carry_lo: f64) -> MarketData {
    let spots: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..200.0)).collect();
    let carries: Vec<f64> = (0..n).map(|_| rng.random_range(carry_lo..0.05)).collect();
    let vols: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.4)).collect();
    let corr = random_correlation(rng, n);
    flat_bs_market(&spots, &carries, &vols, corr, 0.01, 0.02).unwrap()
}

/// `α·μ / √(αᵀΣα)`.
fn ratio(alpha: &[f64], mu: &[f64], cov: &[Vec<f64>]) -> f64 {
    let n = alpha.len();
    let num: f64 = alpha.iter().zip(mu).map(|(a, m)| a * m).sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += alpha[i] * cov[i][j] * alpha[j];
        }
    }
    num / q.sqrt()
}

/// Minimises the drift ratio over directions by multi-start normalised
/// gradient descent with backtracking; uses only the ratio itself.
fn brute_force_min_ratio(mu: &[f64], cov: &[Vec<f64>], rng: &mut ChaCha8Rng) -> f64 {
    let n = mu.len();
    let grad = |a: &[f64]| -> Vec<f64> {
        let h = 1e-7;
        (0..n)
            .map(|i| {
                let mut p = a.to_vec();
                let mut m = a.to_vec();
                p[i] += h;
                m[i] -= h;
                (ratio(&p, mu, cov) - ratio(&m, mu, cov)) / (2.0 * h)
            })
            .collect()
    };
    let normalise = |a: &mut Vec<f64>| {
        let s = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        a.iter_mut().for_each(|x| *x /= s);
    };
    let mut best = f64::INFINITY;
    for _ in 0..24 {
        let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalise(&mut a);
        let mut f = ratio(&a, mu, cov);
        let mut step = 0.5;
        for _ in 0..4000 {
            let g = grad(&a);
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gn < 1e-14 {
                break;
            }
            let mut moved = false;
            while step > 1e-14 {
                let mut cand: Vec<f64> = a.iter().zip(&g).map(|(x, d)| x - step * d / gn).collect();
                normalise(&mut cand);
                let fc = ratio(&cand, mu, cov);
                if fc < f {
                    a = cand;
                    f = fc;
                    step *= 1.5;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        best = best.min(f);
    }
    best
}

fn cov_rows(market: &MarketData) -> Vec<Vec<f64>> {
    let cov = covariance(&build_nu(market, 0.0, None).unwrap());
    let n = market.n();
    (0..n).map(|i| (0..n).map(|j| cov[(i, j)]).collect()).collect()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let market = random_bs_market(&mut rng, n, -0.05);
        let mu = market.carry_at(0.0);
        let nu = build_nu(&market, 0.0, None).map_err(err)?;
        let closed = optimal_free(&mu, &nu, Direction::Min).map_err(err)?.objective;
        let brute = brute_force_min_ratio(&mu, &cov_rows(&market), &mut rng);
        worst = worst.max((closed - brute).abs());
    }
    ensure(worst <= 1e-6, format!("max |closed − brute force| = {worst:.2e} over 200 instances (tol 1e-6)"))
}

/// Calls `f` on every point of the simplex grid with `steps` divisions.
fn simplex_grid(n: usize, steps: usize, f: &mut impl FnMut(&[f64])) {
    fn rec(prefix: &mut Vec<f64>, left: usize, n: usize, steps: usize, f: &mut impl FnMut(&[f64])) {
        if prefix.len() == n - 1 {
            prefix.push(left as f64 / steps as f64);
            f(prefix);
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k as f64 / steps as f64);
            rec(prefix, left - k, n, steps, f);
            prefix.pop();
        }
    }
    rec(&mut Vec::with_capacity(n), steps, n, steps, f);
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_gain = f64::NEG_INFINITY;
    let mut worst_oracle: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let market = random_bs_market(&mut rng, n, 0.0);
        let mu = market.carry_at(0.0);
        let cov = cov_rows(&market);
        let bb = optimal_bang_bang(&mu, &covariance(&build_nu(&market, 0.0, None).map_err(err)?)).map_err(err)?;
        let oracle = (0..n).map(|i| mu[i] / cov[i][i].sqrt()).fold(f64::INFINITY, f64::min);
        worst_oracle = worst_oracle.max((bb.objective - oracle).abs());
        let mut grid_min = f64::INFINITY;
        simplex_grid(n, 100, &mut |a| grid_min = grid_min.min(ratio(a, &mu, &cov)));
        worst_gain = worst_gain.max(bb.objective - grid_min);
    }
    ensure(
        worst_gain <= 1e-3 && worst_oracle <= 1e-12,
        format!("max grid improvement {worst_gain:.2e} (slack 1e-3), max |objective − min μ_i/σ_i| {worst_oracle:.1e}"),
    )
}

fn criterion_3(tmp: &Path) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for name in ["bs2.json", "bs3.json"] {
        let m = bundled(name);
        let m = m.to_str().unwrap();
        let common = ["--market", m, "--strike", "1", "--maturity", "2", "--target-vol", "0.05", "--payoff", "call", "--strategy", "auto"];
        let bs = tvo_cli(tmp, 1, &[&["price-bs"][..], &common].concat())?;
        let mc = tvo_cli(tmp, 1, &[&["price-mc"][..], &common, &["--paths", "100000", "--substeps-per-year", "100", "--seed", "3"]].concat())?;
        let closed = bs["result"]["price"].as_f64().unwrap();
        let price = mc["result"]["mc"]["price"].as_f64().unwrap();
        let se = mc["result"]["mc"]["std_error"].as_f64().unwrap();
        let z = (price - closed).abs() / se;
        ok &= z <= 3.0 && se <= 1e-4;
        details.push(format!("{name}: |mc − closed| = {z:.2} SE, SE = {se:.2e}"));
    }
    ensure(ok, details.join("; "))
}

fn criterion_4() -> Outcome {
    let market = load_market(bundled("bs2.json")).map_err(err)?;
    let tvo = contract();
    let cfg = sim(&market, 2.0, 100_000, 100, 4);
    let alpha = vec![0.6, -0.3];
    let full = simulate_tvs(&market, &StrategySpec::Constant { alpha: alpha.clone() }, &tvo, &cfg).map_err(err)?;
    let proj = simulate_projection(&market, |_, _| Ok(alpha.clone()), &tvo, &cfg).map_err(err)?;
    let a = mc_price_paths(&full, &market, &tvo).map_err(err)?;
    let b = mc_price_paths(&proj, &market, &tvo).map_err(err)?;
    let combined = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    let z = (a.price - b.price).abs() / combined;
    ensure(z <= 3.0, format!("full {:.6} vs projection {:.6}: {z:.2} combined SE", a.price, b.price))
}

fn criterion_5(tmp: &Path) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for name in ["bs2.json", "bs3.json"] {
        let m = bundled(name);
        let r = tvo_cli(tmp, 1, &["hjb-check", "--market", m.to_str().unwrap(), "--grid", "400x400"])?;
        let rel = r["result"]["relative_error"].as_f64().unwrap();
        let factor = r["result"]["convergence_factor"].as_f64().unwrap();
        ok &= rel < 1e-3 && factor >= 3.0;
        details.push(format!("{name}: rel error {rel:.2e}, halving factor {factor:.2}"));
    }
    ensure(ok, details.join("; "))
}

fn criterion_6() -> Outcome {
    let tvo = contract();
    let mut details = Vec::new();
    let mut ok = true;
    for name in ["bs2.json", "lv2.json"] {
        let market = load_market(bundled(name)).map_err(err)?;
        let cfg = sim(&market, 2.0, 10_000, 500, 6);
        let paths = simulate_tvs(&market, &StrategySpec::ClosedFormFree { direction: Direction::Min }, &tvo, &cfg).map_err(err)?;
        let vols = realized_vol(&paths);
        let mean = vols.iter().sum::<f64>() / vols.len() as f64;
        let rel = (mean - tvo.sigma_bar).abs() / tvo.sigma_bar;
        ok &= rel <= 0.01;
        details.push(format!("{name}: mean realized vol {mean:.7} ({:.4}% off)", 100.0 * rel));
    }
    ensure(ok, details.join("; "))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let tvo = contract();
    let mut strict = 0;
    let mut worst: f64 = f64::INFINITY;
    for _ in 0..10 {
        let n = rng.random_range(2..=5);
        let market = random_bs_market(&mut rng, n, 0.0);
        let best = bs_closed_price(&market, &tvo, &StrategySpec::auto(&market, Payoff::Call, &Constraint::Free)).map_err(err)?;
        let mut gaps = Vec::new();
        for v in BaselineVariant::ALL {
            let s = baseline(v, &market, tvo.maturity, &[0.0]).map_err(err)?;
            gaps.push(best - bs_closed_price(&market, &tvo, &s).map_err(err)?);
        }
        worst = gaps.iter().copied().fold(worst, f64::min);
        if gaps.iter().any(|g| *g > 1e-12) {
            strict += 1;
        }
    }
    ensure(
        worst >= -1e-12 && strict == 10,
        format!("min(BS* − baseline) = {worst:.3e}, strictly better in {strict}/10 markets"),
    )
}

fn episode(market: &MarketData) -> EpisodeConfig {
    let grid = fixing_grid(market, 2.0, 12).unwrap();
    let substeps_per_fixing = substeps_for(&grid, 100);
    EpisodeConfig { grid, substeps_per_fixing, cap_omega: false }
}

const EVAL_PATHS: usize = 100_000;
const EVAL_SEED: u64 = 2024;

fn criterion_8() -> Outcome {
    let market = load_market(bundled("bs2.json")).map_err(err)?;
    let tvo = contract();
    let mut cfg = DirectConfig::standard(episode(&market));
    cfg.epochs = 300;
    let out = train_direct(&market, &tvo, &cfg, 8).map_err(err)?;
    let eval = evaluate_policy(&StrategySpec::Neural(out.policy), &market, &tvo, &sim(&market, 2.0, EVAL_PATHS, 100, EVAL_SEED))
        .map_err(err)?;
    let closed = bs_closed_price(&market, &tvo, &StrategySpec::auto(&market, Payoff::Call, &Constraint::Free)).map_err(err)?;
    let gap = (eval.price - closed).abs();
    let tol = (2.0 * eval.std_error).max(5e-3 * closed);
    ensure(
        gap <= tol,
        format!(
            "out-of-sample {:.6} ± {:.1e} vs closed form {closed:.6} (gap {:.3}%, tol {:.3}%), {} epochs × 1024 × 4 restarts",
            eval.price,
            eval.std_error,
            100.0 * gap / closed,
            100.0 * tol / closed,
            cfg.epochs
        ),
    )
}

fn criterion_9() -> Outcome {
    let market = load_market(bundled("lv2.json")).map_err(err)?;
    let tvo = contract();
    let ep = episode(&market);
    let eval_cfg = sim(&market, 2.0, EVAL_PATHS, 100, EVAL_SEED);
    let reference = mc_price(&market, &StrategySpec::ClosedFormFree { direction: Direction::Min }, &tvo, &eval_cfg).map_err(err)?;
    let mut agents: Vec<(String, NeuralPolicy)> = Vec::new();

    let mut direct = DirectConfig::standard(ep.clone());
    direct.epochs = 300;
    agents.push(("direct".into(), train_direct(&market, &tvo, &direct, 9).map_err(err)?.policy));
    for reward in [RewardKind::Terminal, RewardKind::Shaped] {
        for mode in [ActionMode::Free, ActionMode::BaselineParameterized] {
            let mut cfg = PpoConfig::standard(reward, mode, ep.clone());
            // 146 updates × 2048 episodes = 299,008 episodes
            cfg.updates = 146;
            let policy = train_ppo(&market, &tvo, &cfg, 9).map_err(err)?.policy;
            agents.push((format!("ppo-{reward:?}-{mode:?}").to_lowercase(), policy));
        }
    }
    let mut ok = true;
    let mut details = vec![format!("baseline {:.6} ± {:.1e}", reference.price, reference.std_error)];
    for (name, policy) in agents {
        let r: McResult = evaluate_policy(&StrategySpec::Neural(policy), &market, &tvo, &eval_cfg).map_err(err)?;
        let combined = (r.std_error.powi(2) + reference.std_error.powi(2)).sqrt();
        let z = (r.price - reference.price) / combined;
        ok &= z.abs() <= 2.0;
        details.push(format!("{name} {:.6} ({z:+.2} SE)", r.price));
    }
    ensure(ok, details.join("; "))
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst_net: f64 = 0.0;
    for trial in 0..20 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=4)];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..=6));
        }
        sizes.push(rng.random_range(1..=3));
        let act = if trial % 2 == 0 { Activation::Tanh } else { Activation::Elu };
        let net = Network::xavier(sizes.clone(), act, trial).map_err(err)?;
        let batch = 3;
        let inputs: Vec<f64> = (0..batch * sizes[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
        let upstream: Vec<f64> = (0..batch * sizes[sizes.len() - 1]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, tape) = net.forward_tape(&inputs).map_err(err)?;
        let (grad, _) = net.backward(&tape, &upstream).map_err(err)?;
        let objective = |n: &Network| -> f64 {
            n.forward(&inputs).unwrap().iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        for i in 0..grad.len() {
            let h = 1e-6;
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs());
            if scale > 1e-6 {
                worst_net = worst_net.max((fd - grad[i]).abs() / scale);
            }
        }
    }

    // two assets: with one, only the sign of the allocation matters and the gradient vanishes
    let corr = CorrelationMatrix::new(2, vec![1.0, -0.2, -0.2, 1.0]).map_err(err)?;
    let market = flat_bs_market(&[1.0, 3.0], &[0.01, 0.04], &[0.15, 0.35], corr, 0.01, 0.0).map_err(err)?;
    let tvo = TvoSpec::new(1.0, 0.9, 1.0, 0.05, Payoff::Call).map_err(err)?;
    let ep = EpisodeConfig { grid: vec![0.0, 0.5, 1.0], substeps_per_fixing: 1, cap_omega: false };
    let mut net = Network::xavier(vec![4, 5, 2], Activation::Tanh, 77).map_err(err)?;
    for (i, p) in net.params_mut().iter_mut().enumerate() {
        *p += 0.3 + 0.02 * i as f64;
    }
    let policy = NeuralPolicy { net, mode: ActionMode::Free, direction: Direction::Min };
    let key = StreamKey::new(10, "frozen-draws");
    let (_, grad) = direct_loss_and_gradient(&policy, &market, &tvo, &ep, key, 8).map_err(err)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if grad_norm < 1e-6 {
        return Err(format!("direct-policy gradient is degenerate (norm {grad_norm:.1e})"));
    }
    let mut worst_direct: f64 = 0.0;
    for i in 0..grad.len() {
        let h = 1e-6;
        let mut p = policy.clone();
        p.net.params_mut()[i] += h;
        let mut m = policy.clone();
        m.net.params_mut()[i] -= h;
        let lp = direct_loss_and_gradient(&p, &market, &tvo, &ep, key, 8).map_err(err)?.0.loss;
        let lm = direct_loss_and_gradient(&m, &market, &tvo, &ep, key, 8).map_err(err)?.0.loss;
        let fd = (lp - lm) / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs());
        if scale > 1e-10 {
            worst_direct = worst_direct.max((fd - grad[i]).abs() / scale);
        }
    }
    ensure(
        worst_net <= 1e-5 && worst_direct <= 1e-4,
        format!("backprop max rel error {worst_net:.1e} (tol 1e-5), direct-policy {worst_direct:.1e} (tol 1e-4, gradient norm {grad_norm:.2e})"),
    )
}

fn criterion_11(tmp: &Path) -> Outcome {
    let bs = bundled("bs2.json");
    let lv = bundled("lv2.json");
    let (bs, lv) = (bs.to_str().unwrap(), lv.to_str().unwrap());
    let runs: Vec<Vec<&str>> = vec![
        vec!["price-mc", "--market", bs, "--paths", "20000", "--seed", "5"],
        vec!["price-mc", "--market", lv, "--paths", "5000", "--seed", "5", "--strategy", "S_C"],
        vec!["compare-baselines", "--market", lv, "--paths", "3000", "--seed", "1"],
        vec!["hjb-check", "--market", bs, "--grid", "200x100", "--mode", "pointwise"],
        vec!["train-direct", "--market", lv, "--epochs", "4", "--batch", "128", "--restarts", "2", "--eval-paths", "3000", "--seed", "7"],
        vec!["train-ppo", "--market", bs, "--updates", "2", "--episodes-per-update", "256", "--eval-paths", "3000", "--seed", "7"],
    ];
    let mut checked = Vec::new();
    for args in &runs {
        let mut reports = Vec::new();
        for threads in [1, 4, 1] {
            let dir = tmp.join(format!("{}-{threads}-{}", args[0], reports.len()));
            std::fs::create_dir_all(&dir).map_err(err)?;
            let mut r = tvo_cli(&dir, threads, args)?;
            r.as_object_mut().unwrap().remove("timing");
            reports.push(r);
        }
        if reports.windows(2).any(|w| w[0] != w[1]) {
            return Err(format!("{} reports differ across repeats/thread counts", args[0]));
        }
        checked.push(args[0]);
    }
    Ok(format!("identical reports at 1/4/1 threads for {}", checked.join(", ")))
}

const DESCRIPTIONS: [&str; 11] = [
    "closed-form unconstrained optimum vs brute force",
    "bang-bang optimum vs simplex grid search",
    "Monte Carlo vs closed form on bundled BS markets",
    "full simulation vs Markovian projection",
    "HJB solver vs closed form",
    "realized vol equals the target",
    "optimal strategy dominates the baselines",
    "direct-policy training converges to the closed form",
    "trained agents match the local-vol baseline",
    "gradient checks",
    "thread-count determinism of CLI reports",
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut failures = 0;
    for id in 1..=11 {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(tmp.path()),
            4 => criterion_4(),
            5 => criterion_5(tmp.path()),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            10 => criterion_10(),
            _ => criterion_11(tmp.path()),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {id:>2} {}: {d} [{secs:.1}s]", DESCRIPTIONS[id - 1]),
            Err(d) => {
                failures += 1;
                println!("FAIL {id:>2} {}: {d} [{secs:.1}s]", DESCRIPTIONS[id - 1]);
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
