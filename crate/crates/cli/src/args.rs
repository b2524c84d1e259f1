use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "tvo", version, about = "Price options on target-volatility strategies and train allocation policies")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory (default: $TVO_OUT_DIR, else ./tvo-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form price in a Black-Scholes market.
    PriceBs(PriceBsArgs),
    /// Monte Carlo price of a strategy.
    PriceMc(PriceMcArgs),
    /// Optimal allocation at one time.
    SolveStrategy(SolveArgs),
    /// Optimal strategy against the three one-hot baselines.
    CompareBaselines(CompareArgs),
    /// Finite-difference HJB value against the closed form.
    HjbCheck(HjbArgs),
    /// Train a deterministic policy by pathwise gradient ascent.
    TrainDirect(TrainDirectArgs),
    /// Train a Gaussian policy with PPO.
    TrainPpo(TrainPpoArgs),
    /// Out-of-sample price of a saved policy.
    Evaluate(EvaluateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::PriceBs(_) => "price-bs",
            Command::PriceMc(_) => "price-mc",
            Command::SolveStrategy(_) => "solve-strategy",
            Command::CompareBaselines(_) => "compare-baselines",
            Command::HjbCheck(_) => "hjb-check",
            Command::TrainDirect(_) => "train-direct",
            Command::TrainPpo(_) => "train-ppo",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ContractArgs {
    /// Market JSON file.
    #[arg(long)]
    pub market: PathBuf,
    /// Initial index level I0.
    #[arg(long, default_value_t = 1.0)]
    pub spot: f64,
    #[arg(long, default_value_t = 1.0)]
    pub strike: f64,
    /// Maturity in years.
    #[arg(long, default_value_t = 2.0)]
    pub maturity: f64,
    /// Target volatility of the index.
    #[arg(long, default_value_t = 0.05)]
    pub target_vol: f64,
    /// call or put.
    #[arg(long, default_value = "call")]
    pub payoff: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    /// Rebalancing dates per year (merged with market pillars).
    #[arg(long, default_value_t = 12)]
    pub fixings_per_year: usize,
    /// Euler substeps per year.
    #[arg(long, default_value_t = 100)]
    pub substeps_per_year: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap the leverage ω at 1.
    #[arg(long)]
    pub cap_omega: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StrategyArgs {
    /// auto, free, bang-bang, S_A, S_B, S_C or constant:a1,a2,...
    #[arg(long, default_value = "auto")]
    pub strategy: String,
    /// Allocation set used by `auto`: free, nonnegative or box:l1,..,ln/u1,..,un.
    #[arg(long, default_value = "free")]
    pub constraint: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PriceBsArgs {
    #[command(flatten)]
    pub contract: ContractArgs,
    #[command(flatten)]
    pub strategy: StrategyArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PriceMcArgs {
    #[command(flatten)]
    pub contract: ContractArgs,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Also write every simulated fixing to paths.csv.
    #[arg(long)]
    pub record_paths: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub market: PathBuf,
    /// free, bang-bang or constrained.
    #[arg(long, default_value = "free")]
    pub kind: String,
    /// Allocation set for `constrained`: nonnegative or box:l1,..,ln/u1,..,un.
    #[arg(long, default_value = "nonnegative")]
    pub constraint: String,
    /// call (minimise the drift) or put (maximise it).
    #[arg(long, default_value = "call")]
    pub payoff: String,
    /// Time at which the carries and covariance are read.
    #[arg(long, default_value_t = 0.0)]
    pub at: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub contract: ContractArgs,
    /// Allocation set of the optimal strategy: nonnegative, free or box:l1,..,ln/u1,..,un.
    #[arg(long, default_value = "nonnegative")]
    pub constraint: String,
    /// Simulation settings, used only for local-vol markets.
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HjbArgs {
    #[command(flatten)]
    pub contract: ContractArgs,
    /// Space intervals x time steps.
    #[arg(long, default_value = "400x400")]
    pub grid: String,
    /// monotone or pointwise.
    #[arg(long, default_value = "monotone")]
    pub mode: String,
    /// Relative error accepted against the closed form.
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Also write the value surface to hjb_surface.csv.
    #[arg(long)]
    pub surface_csv: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NetworkArgs {
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// tanh or elu.
    #[arg(long, default_value = "tanh")]
    pub activation: String,
    /// rmsprop or nadam.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// free, or baseline (output added to the closed-form optimum).
    #[arg(long, default_value = "free")]
    pub mode: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EpisodeArgs {
    #[arg(long, default_value_t = 12)]
    pub fixings_per_year: usize,
    #[arg(long, default_value_t = 100)]
    pub substeps_per_year: usize,
    #[arg(long)]
    pub cap_omega: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Paths of the out-of-sample evaluation.
    #[arg(long, default_value_t = 100_000)]
    pub eval_paths: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainDirectArgs {
    #[command(flatten)]
    pub contract: ContractArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch: usize,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainPpoArgs {
    #[command(flatten)]
    pub contract: ContractArgs,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// terminal or shaped.
    #[arg(long, default_value = "shaped")]
    pub reward: String,
    #[arg(long, default_value_t = 50)]
    pub updates: usize,
    #[arg(long, default_value_t = 2048)]
    pub episodes_per_update: usize,
    #[arg(long, default_value_t = 256)]
    pub sgd_minibatch: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs_per_update: usize,
    /// Discount (default 0.98 for shaped rewards, 1 for terminal).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.2)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.7)]
    pub value_coef: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub log_std_initial: f64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub log_std_final: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub contract: ContractArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Policy file written by train-direct or train-ppo.
    #[arg(long)]
    pub policy: PathBuf,
}
