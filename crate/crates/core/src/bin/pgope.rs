use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pgope::finite_diff::{verify_correspondence, CorrespondencePair, DEFAULT_EPS};
use pgope::generate::{ChainParams, DagParams, GridParams, MdpKind, TreeParams};
use pgope::harness::{self, num, CrBoundRows, Experiment, ExperimentConfig, Suite, Table};
use pgope::variance::variance_table;
use pgope::{Error, Result, SoftmaxPolicy, TabularMdp};

#[derive(Parser)]
#[command(name = "pgope", version, about = "OPE / policy-gradient estimator verification runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference OPE vs PG on every trajectory, for every pair.
    Correspondence(SuiteArgs),
    /// Exact expectations of every estimator against the exact gradient.
    Unbiasedness(SuiteArgs),
    /// Closed-form, brute-force and Monte Carlo covariance agreement.
    Variance(SuiteArgs),
    /// Cramér–Rao bounds and attainment.
    Crbound(SuiteArgs),
    /// Every suite in sequence.
    All(SuiteArgs),
    /// Per-trajectory deviations of one pair, as CSV.
    VerifyCorrespondence {
        #[arg(long)]
        pair: String,
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Covariance traces and reduction ratios, as CSV.
    VarianceTable {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-coordinate bound and exact-model DR-PG variance, as CSV.
    CrBound {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, conflicts_with = "all")]
        coord: Option<usize>,
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a generated MDP as JSON.
    GenerateMdp(GenerateArgs),
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PolicyArgs {
    /// JSON array of logits; overrides the random policy.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Seed of a random policy with logits in [-1, 1].
    #[arg(long, default_value_t = 0)]
    policy_seed: u64,
}

impl PolicyArgs {
    fn build(&self, mdp: &TabularMdp) -> Result<SoftmaxPolicy> {
        match &self.policy {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                SoftmaxPolicy::new(mdp.num_states(), mdp.num_actions(), serde_json::from_str(&text)?)
            }
            None => Ok(SoftmaxPolicy::random(
                mdp.num_states(),
                mdp.num_actions(),
                1.0,
                &mut ChaCha8Rng::seed_from_u64(self.policy_seed),
            )),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Chain,
    Tree,
    Gridlike,
    RandomDag,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long)]
    reward_support: Option<usize>,
    #[arg(long)]
    states_per_layer: Option<usize>,
    #[arg(long)]
    successors: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    slip: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

impl GenerateArgs {
    fn kind(&self) -> MdpKind {
        let gamma = self.gamma.unwrap_or(0.95);
        match self.kind {
            Kind::Chain => MdpKind::Chain(ChainParams {
                horizon: self.horizon.unwrap_or(3),
                num_actions: self.actions.unwrap_or(2),
                reward_support: self.reward_support.unwrap_or(2),
                gamma,
            }),
            Kind::Tree => MdpKind::Tree(TreeParams {
                num_actions: self.actions.unwrap_or(2),
                branching: self.branching.unwrap_or(2),
                horizon: self.horizon.unwrap_or(2),
                reward_support: self.reward_support.unwrap_or(2),
                gamma,
            }),
            Kind::Gridlike => MdpKind::Gridlike(GridParams {
                width: self.width.unwrap_or(4),
                horizon: self.horizon.unwrap_or(3),
                slip: self.slip.unwrap_or(0.2),
                gamma,
            }),
            Kind::RandomDag => {
                let d = DagParams::small_stochastic();
                MdpKind::RandomDag(DagParams {
                    states_per_layer: self.states_per_layer.unwrap_or(d.states_per_layer),
                    num_actions: self.actions.unwrap_or(d.num_actions),
                    horizon: self.horizon.unwrap_or(d.horizon),
                    successors: self.successors.unwrap_or(d.successors),
                    reward_support: self.reward_support.unwrap_or(d.reward_support),
                    reward_scale: d.reward_scale,
                    gamma,
                })
            }
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
        None => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn run_named(suite: Suite, args: &SuiteArgs) -> Result<bool> {
    let report = harness::run_config(&args.config, suite, &args.out, args.seed)?;
    for c in report.failures() {
        eprintln!("FAIL {}/{}: {} {}", c.suite, c.name, num(c.value), c.condition);
    }
    eprintln!(
        "{}: {}/{} checks passed, reports in {}",
        suite.name(),
        report.checks.iter().filter(|c| c.passed).count(),
        report.checks.len(),
        args.out.display()
    );
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Correspondence(a) => run_named(Suite::Correspondence, &a),
        Command::Unbiasedness(a) => run_named(Suite::Unbiasedness, &a),
        Command::Variance(a) => run_named(Suite::Variance, &a),
        Command::Crbound(a) => run_named(Suite::CrBound, &a),
        Command::All(a) => run_named(Suite::All, &a),
        Command::VerifyCorrespondence {
            pair,
            mdp,
            eps,
            tol,
            policy,
            out,
        } => {
            let pair: CorrespondencePair = pair.parse()?;
            let mdp = Arc::new(TabularMdp::load(&mdp)?);
            let policy = policy.build(&mdp)?;
            let side = pair.default_side(&mdp, &policy, 0)?;
            let report = verify_correspondence(pair, &mdp, &policy, &side, eps)?;
            let mut table = Table {
                file: String::new(),
                header: vec!["trajectory".into(), "probability".into(), "deviation".into()],
                rows: Vec::new(),
            };
            for d in &report.per_trajectory {
                table.rows.push(vec![d.index.to_string(), num(d.probability), num(d.deviation)]);
            }
            emit(out.as_deref(), &table.to_csv()?)?;
            eprintln!(
                "{}: max deviation {} over {} trajectories (eps {})",
                pair,
                num(report.max_deviation),
                report.per_trajectory.len(),
                num(eps)
            );
            Ok(report.passes(tol))
        }
        Command::VarianceTable {
            mdp,
            config,
            seed,
            out,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            config.mdp = std::path::absolute(&mdp)
                .map_err(|e| Error::Config(format!("{}: {e}", mdp.display())))?;
            let exp = Experiment::from_config(config, seed)?;
            let ests = exp.estimators_for_table()?;
            let pg: Vec<_> = ests.iter().map(|(_, e)| e.clone()).collect();
            let rows = variance_table(
                &exp.mdp,
                &exp.policy,
                &pg,
                exp.config.mc_samples,
                exp.seed.unwrap_or(0),
            )?;
            emit(out.as_deref(), &harness::variance_csv(&ests, &rows).to_csv()?)?;
            Ok(true)
        }
        Command::CrBound {
            mdp,
            coord,
            all: _,
            policy,
            out,
        } => {
            let mdp = Arc::new(TabularMdp::load(&mdp)?);
            let policy = policy.build(&mdp)?;
            let coords: Vec<usize> = match coord {
                Some(i) if i >= policy.dim() => {
                    return Err(Error::CoordinateOutOfRange {
                        index: i,
                        dim: policy.dim(),
                    })
                }
                Some(i) => vec![i],
                None => (0..policy.dim()).collect(),
            };
            let rows = CrBoundRows::compute(&mdp, &policy)?;
            emit(out.as_deref(), &rows.table(&coords).to_csv()?)?;
            Ok(true)
        }
        Command::GenerateMdp(args) => {
            let mdp = args.kind().generate(args.seed)?;
            let mut text = mdp.to_json_string();
            text.push('\n');
            emit(args.out.as_deref(), &text)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
