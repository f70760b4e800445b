//! Batch experiment runner: loads a JSON experiment config, runs named
//! verification suites, and writes CSV reports plus a plain-text summary.
//!
//! Output is a pure function of (config, seed): no timestamps, fixed row
//! order, shortest round-trip float formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cr_bound::{check_tree, dag_cr_bound_all, tree_cr_bound_all};
use crate::error::{Error, Result};
use crate::finite_diff::{verify_correspondence, CorrespondencePair, DEFAULT_EPS};
use crate::linalg::{max_abs_diff, Gradient};
use crate::mdp::{enumerate_trajectories, exact_policy_gradient, value_tables, TabularMdp, Trajectory};
use crate::pg::PgEstimator;
use crate::policy::SoftmaxPolicy;
use crate::qmodel::{QModel, SnapshotKind};
use crate::variance::{
    brute_force_covariance, brute_force_moments, mc_covariance, closed_form_terms, variance_table,
};

pub const CORRESPONDENCE_TOL: f64 = 1e-6;
pub const UNBIASED_TOL: f64 = 1e-10;
pub const BIAS_WITNESS: f64 = 1e-3;
pub const CLOSED_FORM_TOL: f64 = 1e-8;
pub const PSD_TOL: f64 = 1e-9;
pub const MC_SIGMAS: f64 = 5.0;
pub const ATTAIN_TOL: f64 = 1e-8;
pub const TREE_DAG_TOL: f64 = 1e-10;
pub const LOWER_BOUND_SLACK: f64 = 1e-9;

const FROBENIUS_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    Uniform,
    Logits { logits: Vec<f64> },
    /// JSON array of logits, relative to the config file.
    File { path: PathBuf },
    /// Logits uniform in [-scale, scale].
    Random { scale: f64, seed: u64 },
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::Random {
            scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Zero,
    Constant,
    StateBaseline,
    FrozenLinear,
    ExactDp,
    ExactOffset,
}

/// A model built from exact tables at the experiment policy plus uniform
/// noise of the given half-width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, noise: f64, seed: u64) -> Self {
        Self { kind, noise, seed }
    }

    pub fn build(&self, mdp: &Arc<TabularMdp>, policy: &SoftmaxPolicy) -> Result<QModel> {
        let snapshot = |kind| QModel::noisy_snapshot(kind, mdp.clone(), policy, self.noise, self.seed);
        match self.kind {
            ModelKind::Zero => Ok(QModel::zero()),
            ModelKind::Constant => snapshot(SnapshotKind::Constant),
            ModelKind::StateBaseline => snapshot(SnapshotKind::StateBaseline),
            ModelKind::FrozenLinear => snapshot(SnapshotKind::FrozenLinear),
            ModelKind::ExactDp => Ok(QModel::exact_dp(mdp.clone())),
            ModelKind::ExactOffset => snapshot(SnapshotKind::ExactOffset),
        }
    }

    pub fn label(&self) -> String {
        let name = serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        if self.noise > 0.0 {
            format!("{name}+noise{}", self.noise)
        } else {
            name
        }
    }
}

pub fn default_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new(ModelKind::Zero, 0.0, 0),
        ModelSpec::new(ModelKind::StateBaseline, 0.3, 1),
        ModelSpec::new(ModelKind::Constant, 0.3, 2),
        ModelSpec::new(ModelKind::FrozenLinear, 0.3, 3),
        ModelSpec::new(ModelKind::ExactDp, 0.0, 0),
    ]
}

fn default_estimators() -> Vec<String> {
    ["reinforce", "vanilla", "baseline", "trajcv", "drpg"]
        .map(String::from)
        .to_vec()
}

fn default_mc_samples() -> usize {
    100_000
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

/// One experiment. Relative paths are resolved against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: PathBuf,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSpec>,
    /// Estimators for the variance table: reinforce, vanilla, baseline
    /// (b = exact V), trajcv, drpg. Model-based ones expand over `models`.
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default)]
    pub suite: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_mdp(&self) -> Result<TabularMdp> {
        TabularMdp::load(self.resolve(&self.mdp))
    }

    pub fn build_policy(&self, mdp: &TabularMdp) -> Result<SoftmaxPolicy> {
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        match &self.policy {
            PolicySpec::Uniform => Ok(SoftmaxPolicy::uniform(s, a)),
            PolicySpec::Logits { logits } => SoftmaxPolicy::new(s, a, logits.clone()),
            PolicySpec::File { path } => {
                let path = self.resolve(path);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                SoftmaxPolicy::new(s, a, serde_json::from_str(&text)?)
            }
            PolicySpec::Random { scale, seed } => Ok(SoftmaxPolicy::random(
                s,
                a,
                *scale,
                &mut ChaCha8Rng::seed_from_u64(*seed),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Correspondence,
    Unbiasedness,
    Variance,
    CrBound,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Correspondence => "correspondence",
            Suite::Unbiasedness => "unbiasedness",
            Suite::Variance => "variance",
            Suite::CrBound => "crbound",
            Suite::All => "all",
        }
    }

    fn parts(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![
                Suite::Correspondence,
                Suite::Unbiasedness,
                Suite::Variance,
                Suite::CrBound,
            ],
            s => vec![s],
        }
    }

    fn samples(self) -> bool {
        matches!(self, Suite::Variance | Suite::All)
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Suite::Correspondence,
            Suite::Unbiasedness,
            Suite::Variance,
            Suite::CrBound,
            Suite::All,
        ]
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::Unknown {
            kind: "suite",
            name: s.to_string(),
        })
    }
}

/// One tolerance check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    /// Human-readable condition, e.g. "<= 1e-6".
    pub condition: String,
    pub passed: bool,
}

impl CheckResult {
    fn at_most(suite: &'static str, name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            condition: format!("<= {tol:e}"),
            passed: value <= tol,
        }
    }

    fn at_least(suite: &'static str, name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            condition: format!(">= {tol:e}"),
            passed: value >= tol,
        }
    }

    fn above(suite: &'static str, name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            condition: format!("> {tol:e}"),
            passed: value > tol,
        }
    }
}

/// A CSV file produced by a suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
    pub tables: Vec<Table>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn checks_table(&self) -> Table {
        let mut t = Table::new("checks.csv", &["suite", "check", "value", "condition", "passed"]);
        for c in &self.checks {
            t.push(vec![
                c.suite.to_string(),
                c.name.clone(),
                num(c.value),
                c.condition.clone(),
                c.passed.to_string(),
            ]);
        }
        t
    }

    pub fn summary(&self, suite: Suite, config: &ExperimentConfig, seed: Option<u64>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "suite: {}", suite.name());
        let _ = writeln!(s, "mdp: {}", config.mdp.display());
        if let Some(seed) = seed {
            let _ = writeln!(s, "seed: {seed}");
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(s, "checks passed: {passed}/{}", self.checks.len());
        for c in &self.checks {
            let _ = writeln!(
                s,
                "[{}] {}/{}: {} {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite,
                c.name,
                num(c.value),
                c.condition
            );
        }
        let _ = writeln!(s, "result: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }

    /// Writes every table, `checks.csv` and `summary.txt` into `out`.
    pub fn write(&self, out: &Path, summary: &str) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for table in self.tables.iter().chain(std::iter::once(&self.checks_table())) {
            let path = out.join(&table.file);
            fs::write(&path, table.to_csv()?).map_err(|e| Error::io(&path, e))?;
        }
        let path = out.join("summary.txt");
        fs::write(&path, summary).map_err(|e| Error::io(&path, e))
    }
}

/// Shortest round-trip form; scientific notation outside [1e-4, 1e15).
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Inputs shared by every suite.
pub struct Experiment {
    pub mdp: Arc<TabularMdp>,
    pub policy: SoftmaxPolicy,
    pub models: Vec<(ModelSpec, QModel)>,
    pub config: ExperimentConfig,
    pub seed: Option<u64>,
}

impl Experiment {
    pub fn from_config(config: ExperimentConfig, seed: Option<u64>) -> Result<Self> {
        let mdp = Arc::new(config.load_mdp()?);
        let policy = config.build_policy(&mdp)?;
        let models = config
            .models
            .iter()
            .map(|spec| Ok((spec.clone(), spec.build(&mdp, &policy)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            mdp,
            policy,
            models,
            seed: seed.or(config.seed),
            config,
        })
    }

    fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    /// The configured estimator list, labelled by model.
    pub fn estimators_for_table(&self) -> Result<Vec<(String, PgEstimator)>> {
        let mut out = Vec::new();
        for name in &self.config.estimators {
            match name.as_str() {
                "reinforce" => out.push(("-".into(), PgEstimator::Reinforce)),
                "vanilla" => out.push(("-".into(), PgEstimator::Vanilla)),
                "baseline" => {
                    let v = value_tables(&self.mdp, &self.policy)?.v_table().to_vec();
                    out.push(("exact-v".into(), PgEstimator::Baseline(v)));
                }
                "trajcv" | "drpg" | "drpg-recursive" => {
                    for (spec, m) in &self.models {
                        let est = match name.as_str() {
                            "trajcv" => PgEstimator::TrajCv(m.clone()),
                            "drpg" => PgEstimator::Drpg(m.clone()),
                            _ => PgEstimator::DrpgRecursive(m.clone()),
                        };
                        out.push((spec.label(), est));
                    }
                }
                other => {
                    return Err(Error::Unknown {
                        kind: "estimator",
                        name: other.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }
}

pub fn run_suite(exp: &Experiment, suite: Suite) -> Result<SuiteReport> {
    if suite.samples() && exp.seed.is_none() {
        return Err(Error::Config(format!(
            "suite {} samples trajectories and needs a seed",
            suite.name()
        )));
    }
    let mut report = SuiteReport::default();
    for part in suite.parts() {
        match part {
            Suite::Correspondence => correspondence_suite(exp, &mut report)?,
            Suite::Unbiasedness => unbiasedness_suite(exp, &mut report)?,
            Suite::Variance => variance_suite(exp, &mut report)?,
            Suite::CrBound => crbound_suite(exp, &mut report)?,
            Suite::All => unreachable!("expanded by parts"),
        }
    }
    Ok(report)
}

/// Loads `config`, runs `suite`, and writes reports to `out`.
pub fn run_config(config: &Path, suite: Suite, out: &Path, seed: Option<u64>) -> Result<SuiteReport> {
    let config = ExperimentConfig::load(config)?;
    let exp = Experiment::from_config(config, seed)?;
    let report = run_suite(&exp, suite)?;
    report.write(out, &report.summary(suite, &exp.config, exp.seed))?;
    Ok(report)
}

fn correspondence_suite(exp: &Experiment, report: &mut SuiteReport) -> Result<()> {
    let mut table = Table::new(
        "correspondence.csv",
        &["pair", "trajectories", "max_deviation", "eps"],
    );
    let side_seed = exp.seed.unwrap_or(0);
    for pair in CorrespondencePair::ALL {
        let side = pair.default_side(&exp.mdp, &exp.policy, side_seed)?;
        let r = verify_correspondence(pair, &exp.mdp, &exp.policy, &side, exp.config.eps)?;
        table.push(vec![
            pair.name().into(),
            r.per_trajectory.len().to_string(),
            num(r.max_deviation),
            num(r.eps),
        ]);
        report.checks.push(CheckResult::at_most(
            "correspondence",
            pair.name(),
            r.max_deviation,
            CORRESPONDENCE_TOL,
        ));
    }
    report.tables.push(table);
    Ok(())
}

fn expectation(
    trajectories: &[(Trajectory, f64)],
    dim: usize,
    f: impl Fn(&Trajectory) -> Gradient,
) -> Gradient {
    let mut out = Gradient::zeros(dim);
    for (t, p) in trajectories {
        out.axpy(*p, &f(t), 1.0);
    }
    out
}

fn unbiasedness_suite(exp: &Experiment, report: &mut SuiteReport) -> Result<()> {
    let (mdp, policy, g) = (&exp.mdp, &exp.policy, exp.gamma());
    let trajectories = enumerate_trajectories(mdp, policy)?;
    let exact = exact_policy_gradient(mdp, policy)?;
    let d = policy.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed.unwrap_or(0));

    let mut cases: Vec<(String, String, PgEstimator)> = vec![
        ("reinforce".into(), "-".into(), PgEstimator::Reinforce),
        ("vanilla".into(), "-".into(), PgEstimator::Vanilla),
    ];
    for k in 0..3 {
        let b = (0..mdp.num_states()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        cases.push(("baseline".into(), format!("random-{k}"), PgEstimator::Baseline(b)));
    }
    for (spec, m) in &exp.models {
        cases.push(("trajcv".into(), spec.label(), PgEstimator::TrajCv(m.clone())));
        cases.push(("drpg".into(), spec.label(), PgEstimator::Drpg(m.clone())));
    }
    let q = value_tables(mdp, policy)?.q_table().to_vec();
    cases.push(("actor-critic".into(), "exact-q".into(), PgEstimator::ActorCritic(q)));

    let mut table = Table::new("unbiasedness.csv", &["estimator", "side", "max_bias"]);
    for (name, side, est) in cases {
        let bound = est.bind(policy, g)?;
        let bias = max_abs_diff(&expectation(&trajectories, d, |t| bound.estimate(t)), &exact);
        table.push(vec![name.clone(), side.clone(), num(bias)]);
        report.checks.push(CheckResult::at_most(
            "unbiasedness",
            format!("{name}[{side}]"),
            bias,
            UNBIASED_TOL,
        ));
    }
    let f: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let bound = PgEstimator::ActorCritic(f).bind(policy, g)?;
    let bias = max_abs_diff(&expectation(&trajectories, d, |t| bound.estimate(t)), &exact);
    table.push(vec!["actor-critic".into(), "random".into(), num(bias)]);
    report.checks.push(CheckResult::above(
        "unbiasedness",
        "actor-critic[random] is biased",
        bias,
        BIAS_WITNESS,
    ));
    report.tables.push(table);
    Ok(())
}

fn variance_suite(exp: &Experiment, report: &mut SuiteReport) -> Result<()> {
    let (mdp, policy, g) = (&exp.mdp, &exp.policy, exp.gamma());
    let seed = exp.seed.expect("checked by run_suite");

    let mut thm = Table::new(
        "closed_form.csv",
        &[
            "model",
            "brute_force_trace",
            "closed_form_trace",
            "relative_frobenius_error",
            "reward_term_trace",
            "action_term_trace",
            "transition_term_trace",
        ],
    );
    for (spec, m) in &exp.models {
        let side = m.evaluate(policy)?;
        let bf = brute_force_covariance(mdp, policy, |t| crate::pg::drpg(t, policy, g, &side))?;
        let terms = closed_form_terms(mdp, policy, m)?;
        let total = terms.total();
        let err = total.relative_frobenius_error(&bf, FROBENIUS_FLOOR);
        thm.push(vec![
            spec.label(),
            num(bf.trace()),
            num(total.trace()),
            num(err),
            num(terms.reward.trace()),
            num(terms.action.trace()),
            num(terms.transition.trace()),
        ]);
        report.checks.push(CheckResult::at_most(
            "variance",
            format!("closed form vs brute force [{}]", spec.label()),
            err,
            CLOSED_FORM_TOL,
        ));
        let min_eig = [&terms.reward, &terms.action, &terms.transition]
            .iter()
            .map(|c| c.min_eigenvalue())
            .fold(f64::INFINITY, f64::min);
        report.checks.push(CheckResult::at_least(
            "variance",
            format!("terms PSD [{}]", spec.label()),
            min_eig,
            -PSD_TOL,
        ));
    }
    report.tables.push(thm);

    let mut mc = Table::new(
        "monte_carlo.csv",
        &[
            "estimator",
            "model",
            "samples",
            "seed",
            "mc_trace",
            "exact_trace",
            "standard_error",
            "mse",
        ],
    );
    let mut mc_cases = vec![("vanilla".to_string(), "-".to_string(), PgEstimator::Vanilla)];
    for (spec, m) in &exp.models {
        mc_cases.push(("drpg".into(), spec.label(), PgEstimator::Drpg(m.clone())));
    }
    for (name, model, est) in mc_cases {
        let bound = est.bind(policy, g)?;
        let f = |t: &Trajectory| bound.estimate(t);
        let exact = brute_force_moments(mdp, policy, f)?;
        let run = mc_covariance(mdp, policy, f, exp.config.mc_samples, seed)?;
        let se = exact.trace_standard_error(run.samples);
        let diff = (run.covariance.trace() - exact.covariance.trace()).abs();
        mc.push(vec![
            name.clone(),
            model.clone(),
            run.samples.to_string(),
            seed.to_string(),
            num(run.covariance.trace()),
            num(exact.covariance.trace()),
            num(se),
            num(run.mse),
        ]);
        report.checks.push(CheckResult::at_most(
            "variance",
            format!("monte carlo trace within {MC_SIGMAS} SE [{name}/{model}]"),
            diff,
            MC_SIGMAS * se + 1e-15,
        ));
    }
    report.tables.push(mc);

    let ests = exp.estimators_for_table()?;
    let pg: Vec<PgEstimator> = ests.iter().map(|(_, e)| e.clone()).collect();
    let rows = variance_table(mdp, policy, &pg, exp.config.mc_samples, seed)?;
    report.tables.push(variance_csv(&ests, &rows));
    Ok(())
}

/// The (estimator, model, trace, reduction_vs_vanilla) table.
pub fn variance_csv(
    ests: &[(String, PgEstimator)],
    rows: &[crate::variance::VarianceRow],
) -> Table {
    let mut t = Table::new(
        "variance.csv",
        &["estimator", "model", "trace", "reduction_vs_vanilla"],
    );
    for ((label, _), row) in ests.iter().zip(rows) {
        t.push(vec![
            row.estimator.clone(),
            label.clone(),
            num(row.trace),
            num(row.reduction_vs_vanilla),
        ]);
    }
    t
}

/// Rows of (coordinate, bound, drpg_variance, gap) with the exact model;
/// the tree bound is used when the MDP is a tree, the DAG bound otherwise.
pub struct CrBoundRows {
    pub is_tree: bool,
    pub bound: Vec<f64>,
    pub drpg_variance: Vec<f64>,
}

impl CrBoundRows {
    pub fn compute(mdp: &Arc<TabularMdp>, policy: &SoftmaxPolicy) -> Result<Self> {
        let is_tree = check_tree(mdp).is_ok();
        let bound = if is_tree {
            tree_cr_bound_all(mdp, policy)?
        } else {
            dag_cr_bound_all(mdp, policy)?
        };
        let side = QModel::exact_dp(mdp.clone()).evaluate(policy)?;
        let drpg_variance =
            brute_force_covariance(mdp, policy, |t| crate::pg::drpg(t, policy, mdp.gamma(), &side))?
                .diagonal();
        Ok(Self {
            is_tree,
            bound,
            drpg_variance,
        })
    }

    pub fn table(&self, coords: &[usize]) -> Table {
        let mut t = Table::new("crbound.csv", &["coordinate", "bound", "drpg_variance", "gap"]);
        for &i in coords {
            t.push(vec![
                i.to_string(),
                num(self.bound[i]),
                num(self.drpg_variance[i]),
                num(self.drpg_variance[i] - self.bound[i]),
            ]);
        }
        t
    }
}

fn crbound_suite(exp: &Experiment, report: &mut SuiteReport) -> Result<()> {
    let (mdp, policy, g) = (&exp.mdp, &exp.policy, exp.gamma());
    let rows = CrBoundRows::compute(mdp, policy)?;
    let d = policy.dim();
    report.tables.push(rows.table(&(0..d).collect::<Vec<_>>()));

    if rows.is_tree {
        let gap = rows
            .bound
            .iter()
            .zip(&rows.drpg_variance)
            .map(|(b, v)| (v - b).abs())
            .fold(0.0, f64::max);
        report
            .checks
            .push(CheckResult::at_most("crbound", "exact drpg attains tree bound", gap, ATTAIN_TOL));
        let dag = dag_cr_bound_all(mdp, policy)?;
        let diff = dag
            .iter()
            .zip(&rows.bound)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report
            .checks
            .push(CheckResult::at_most("crbound", "tree and dag bounds agree", diff, TREE_DAG_TOL));
    }

    let mut ests: Vec<(String, PgEstimator)> = vec![
        ("reinforce".into(), PgEstimator::Reinforce),
        ("vanilla".into(), PgEstimator::Vanilla),
    ];
    for (spec, m) in &exp.models {
        ests.push((format!("drpg[{}]", spec.label()), PgEstimator::Drpg(m.clone())));
        ests.push((format!("trajcv[{}]", spec.label()), PgEstimator::TrajCv(m.clone())));
    }
    for (name, est) in ests {
        let bound = est.bind(policy, g)?;
        let var = brute_force_covariance(mdp, policy, |t| bound.estimate(t))?.diagonal();
        let slack = var
            .iter()
            .zip(&rows.bound)
            .map(|(v, b)| v - b)
            .fold(f64::INFINITY, f64::min);
        report.checks.push(CheckResult::at_least(
            "crbound",
            format!("{name} variance above bound"),
            slack,
            -LOWER_BOUND_SLACK,
        ));
    }
    Ok(())
}
