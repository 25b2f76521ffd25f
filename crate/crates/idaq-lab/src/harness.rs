//! Experiment driver: TOML configuration, seeded multi-run execution,
//! bootstrap aggregation, CSV/JSON output and the theory-check bundle.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    baseline_adapt_all, expert_context_oracle, run_idaq, AdaptationConfig, AdaptationResult, Quantifier,
};
use crate::belief::{evaluate_meta_policy, AdaptationBudget, EvalMethod, HypothesisSet, Mode};
use crate::envs::{build_v_arm, perturb_behavior, EnvFamily, EnvInstance};
use crate::error::{Error, Result};
use crate::mdp::{sample_index, TaskSpec};
use crate::offline::{collect_dataset, dataset_hypotheses, MultiTaskDataset};
use crate::seed::derive_seed;
use crate::theory::{
    check_consistency, check_offline_online_gap, check_shift_exists, check_simulation_lemma, check_task_distance,
    consistency_fixture, p_out_medians, shift_rewards, simulation_sweep, BoundReport, GapReport, ShiftReport,
    SimulationCheck,
};
use crate::trainer::{fit_ensemble, train_meta_policy, EnsembleModel, MetaPolicyTS, SamplerMode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparator {
    IdaqPe,
    IdaqPv,
    IdaqRe,
    BaselineAll,
    ExpertContextOracle,
}

impl Comparator {
    pub const ALL: [Comparator; 5] = [
        Comparator::IdaqPe,
        Comparator::IdaqPv,
        Comparator::IdaqRe,
        Comparator::BaselineAll,
        Comparator::ExpertContextOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Comparator::IdaqPe => "idaq-pe",
            Comparator::IdaqPv => "idaq-pv",
            Comparator::IdaqRe => "idaq-re",
            Comparator::BaselineAll => "baseline-all",
            Comparator::ExpertContextOracle => "expert-context-oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown comparator '{s}'")))
    }

    fn quantifier(self) -> Option<Quantifier> {
        match self {
            Comparator::IdaqPe => Some(Quantifier::Pe),
            Comparator::IdaqPv => Some(Quantifier::Pv),
            Comparator::IdaqRe => Some(Quantifier::Re),
            _ => None,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional overrides of the environment's adaptation defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationOverrides {
    pub episodes: Option<usize>,
    pub n_r: Option<usize>,
    pub n_i: Option<usize>,
    pub k_percent: Option<f64>,
    pub n_e: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub env: EnvFamily,
    #[serde(default = "default_k")]
    pub k_per_task: usize,
    /// Mixing weight with the uniform policy for data collection.
    #[serde(default)]
    pub behavior_epsilon: f64,
    #[serde(default)]
    pub adaptation: AdaptationOverrides,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub comparators: Vec<Comparator>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_k() -> usize {
    45
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_resamples() -> usize {
    10_000
}

impl ExperimentConfig {
    pub fn new(env: EnvFamily, seeds: Vec<u64>, comparators: Vec<Comparator>) -> Self {
        Self {
            name: default_name(),
            env,
            k_per_task: default_k(),
            behavior_epsilon: 0.0,
            adaptation: AdaptationOverrides::default(),
            train: TrainConfig::default(),
            master_seed: 0,
            seeds,
            comparators,
            output: default_output(),
            bootstrap_resamples: default_resamples(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can fail before any sampling happens.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.comparators.is_empty() {
            return Err(Error::Config("at least one comparator is required".into()));
        }
        if self.k_per_task == 0 {
            return Err(Error::Config("k_per_task must be >= 1".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::Config("bootstrap_resamples must be >= 1".into()));
        }
        self.train.validate()?;
        let env = self.env.build()?;
        perturb_behavior(&env.behavior, self.behavior_epsilon)?;
        self.adaptation_config(&env, 0)?.validate()
    }

    /// Environment defaults with the configured overrides applied.
    pub fn adaptation_config(&self, env: &EnvInstance, seed: u64) -> Result<AdaptationConfig> {
        let o = &self.adaptation;
        let n = o.episodes.unwrap_or(env.budget.episodes_total);
        let n_r = o.n_r.unwrap_or(n - n / 2);
        let n_i = o.n_i.unwrap_or(n.saturating_sub(n_r));
        let cfg = AdaptationConfig {
            n_r,
            n_i,
            k_percent: o.k_percent.unwrap_or(env.k_percent),
            quantifier: Quantifier::Re,
            n_e: o.n_e.unwrap_or(1),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything learned offline for one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub env: EnvInstance,
    pub dataset: MultiTaskDataset,
    pub meta: MetaPolicyTS,
    pub hypotheses: HypothesisSet,
    pub ensemble: EnsembleModel,
}

/// Collects data and trains the meta-policy and ensemble from `seed`.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let env = cfg.env.build()?;
    let behavior = perturb_behavior(&env.behavior, cfg.behavior_epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dataset = collect_dataset(&env.tasks, &behavior, cfg.k_per_task, &mut rng)?;
    let meta = train_meta_policy(&dataset, &env.tasks[0], &cfg.train)?;
    let hypotheses = dataset_hypotheses(&dataset, &env.tasks[0], Mode::Transformed)?;
    let ensemble = fit_ensemble(&dataset, &env.tasks[0], &cfg.train, &mut rng)?;
    let env = EnvInstance { behavior, ..env };
    Ok(Prepared { env, dataset, meta, hypotheses, ensemble })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub comparator: Comparator,
    pub test_task: usize,
    pub success: bool,
    pub result: AdaptationResult,
}

/// One seed: collect, train, draw a test task from the prior, then adapt
/// with every comparator on that same task.
pub fn run_seed(cfg: &ExperimentConfig, run_index: usize) -> Result<Vec<RunOutcome>> {
    let seed = cfg.seeds[run_index];
    let sub = derive_seed(cfg.master_seed, seed);
    let p = prepare(cfg, sub)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sub, 1));
    let test_task = sample_index(&p.env.task_prior, &mut rng).expect("normalized prior");
    let task = &p.env.tasks[test_task];
    let mut out = Vec::with_capacity(cfg.comparators.len());
    for &comp in &cfg.comparators {
        let cseed = derive_seed(sub, 2 + comp as u64);
        let mut crng = ChaCha8Rng::seed_from_u64(cseed);
        let mut acfg = cfg.adaptation_config(&p.env, cseed)?;
        let budget = AdaptationBudget::new(acfg.n_r + acfg.n_i, task.horizon());
        let result = match comp.quantifier() {
            Some(q) => {
                acfg.quantifier = q;
                run_idaq(task, &p.meta, &p.hypotheses, &p.ensemble, &acfg)?
            }
            None if comp == Comparator::BaselineAll => {
                baseline_adapt_all(task, &p.meta, &p.hypotheses, &budget, &mut crng)?
            }
            None => expert_context_oracle(task, p.env.behavior.policy(test_task), &p.meta, &p.hypotheses, &budget, &mut crng)?,
        };
        out.push(RunOutcome { seed, comparator: comp, test_task, success: result.greedy_hypothesis() == test_task, result });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparatorSummary {
    pub comparator: Comparator,
    pub runs: usize,
    pub mean_return: f64,
    pub return_ci: [f64; 2],
    pub success_rate: f64,
    pub success_ci: [f64; 2],
    pub accepted_episodes: usize,
    pub rejected_episodes: usize,
    pub demoted_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub experiment: String,
    pub env: String,
    pub seeds: usize,
    pub bootstrap_resamples: usize,
    pub comparators: Vec<ComparatorSummary>,
}

impl RunSummary {
    pub fn comparator(&self, c: Comparator) -> Option<&ComparatorSummary> {
        self.comparators.iter().find(|s| s.comparator == c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Percentile bootstrap interval (2.5%, 97.5%) for the mean, widened if
/// needed so that it contains the sample mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> [f64; 2] {
    if values.is_empty() {
        return [f64::NAN, f64::NAN];
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * resamples as f64).ceil() as usize).clamp(1, resamples) - 1];
    [at(0.025).min(mean), at(0.975).max(mean)]
}

pub fn summarize(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> RunSummary {
    let mut comparators = Vec::new();
    for (ci, &c) in cfg.comparators.iter().enumerate() {
        let mine: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.comparator == c).collect();
        let returns: Vec<f64> = mine.iter().map(|o| o.result.final_return_estimate).collect();
        let successes: Vec<f64> = mine.iter().map(|o| if o.success { 1.0 } else { 0.0 }).collect();
        let n = mine.len().max(1) as f64;
        let bseed = derive_seed(cfg.master_seed, 0xB007_0000 + ci as u64);
        let records = mine.iter().flat_map(|o| o.result.log.iter());
        let (mut acc, mut rej, mut dem) = (0, 0, 0);
        for r in records {
            if r.accepted {
                acc += 1;
            } else {
                rej += 1;
            }
            if r.demoted {
                dem += 1;
            }
        }
        comparators.push(ComparatorSummary {
            comparator: c,
            runs: mine.len(),
            mean_return: returns.iter().sum::<f64>() / n,
            return_ci: bootstrap_ci(&returns, cfg.bootstrap_resamples, bseed),
            success_rate: successes.iter().sum::<f64>() / n,
            success_ci: bootstrap_ci(&successes, cfg.bootstrap_resamples, bseed ^ 1),
            accepted_episodes: acc,
            rejected_episodes: rej,
            demoted_episodes: dem,
        });
    }
    RunSummary {
        experiment: cfg.name.clone(),
        env: cfg.env.to_string(),
        seeds: cfg.seeds.len(),
        bootstrap_resamples: cfg.bootstrap_resamples,
        comparators,
    }
}

pub const RUNS_CSV_HEADER: &str = "experiment,comparator,seed,episode,stage,hypothesis,return,score,accepted,delta";

pub fn runs_csv(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> String {
    let mut out = String::from(RUNS_CSV_HEADER);
    out.push('\n');
    for o in outcomes {
        for (i, r) in o.result.log.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{i},{},{},{},{},{},{}\n",
                cfg.name,
                o.comparator,
                o.seed,
                r.stage.name(),
                r.hypothesis,
                r.trajectory.total_return(),
                r.score,
                r.accepted,
                o.result.threshold
            ));
        }
    }
    out
}

/// Runs every seed (in parallel) and reduces in seed order.
pub fn run_outcomes(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let per_seed = (0..cfg.seeds.len())
        .into_par_iter()
        .map(|i| run_seed(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// Runs the experiment and writes `runs.csv` and `summary.json` under `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let outcomes = run_outcomes(cfg)?;
    let summary = summarize(cfg, &outcomes);
    fs::create_dir_all(&cfg.output)?;
    fs::write(cfg.output.join("runs.csv"), runs_csv(cfg, &outcomes))?;
    fs::write(cfg.output.join("summary.json"), summary.to_json()?)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// theory bundle

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Small,
    Full,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Scale::Small),
            "full" => Ok(Scale::Full),
            other => Err(Error::Config(format!("unknown scale '{other}' (expected small or full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub check: String,
    pub deterministic: bool,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyBundle {
    pub scale: Scale,
    pub seed: u64,
    pub checks: Vec<CheckLine>,
    pub shift: Vec<ShiftReport>,
    pub gaps: Vec<GapReport>,
    pub reward_shift: SimulationCheck,
    pub p_out_medians: Vec<(usize, f64)>,
    pub reports: Vec<BoundReport>,
}

impl VerifyBundle {
    pub fn deterministic_failures(&self) -> usize {
        self.checks.iter().filter(|c| c.deterministic && !c.passed).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn line(checks: &mut Vec<CheckLine>, check: &str, deterministic: bool, passed: bool, detail: String) {
    checks.push(CheckLine { check: check.into(), deterministic, passed, detail });
}

/// Every theory check. Deterministic checks must pass exactly; probabilistic
/// bounds are reported against `delta + 0.02`.
pub fn verify_all(scale: Scale, seed: u64) -> Result<VerifyBundle> {
    let (trials, sizes, sim_pairs, p_seeds, p_rollouts) = match scale {
        Scale::Small => (200, vec![10, 100, 1000], 1000, 20, 500),
        Scale::Full => (1000, vec![10, 100, 1000, 10_000], 10_000, 50, 2000),
    };
    let delta = 0.05;
    let mut checks = Vec::new();

    let mut shift = Vec::new();
    let mut gaps = Vec::new();
    for v in [3usize, 5, 10] {
        let env = build_v_arm(v)?;
        let meta = MetaPolicyTS::new(env.behavior.policies().to_vec(), SamplerMode::WithoutReplacement)?;
        let r = check_shift_exists(&env.tasks, &env.behavior, &env.task_prior, &meta, &env.budget)?;
        let want = 1.0 - 1.0 / v as f64;
        line(&mut checks, &format!("shift v={v}"), true, (r.max_tv - want).abs() <= 1e-12, format!("max TV {} (expected {want})", r.max_tv));
        shift.push(r);
    }
    for v in [1usize, 3, 5] {
        let env = build_v_arm(v)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, v as u64));
        let data = collect_dataset(&env.tasks, &env.behavior, 45, &mut rng)?;
        let meta = train_meta_policy(&data, &env.tasks[0], &TrainConfig::default())?;
        let g = check_offline_online_gap(&env, &data, &meta)?;
        line(
            &mut checks,
            &format!("offline/online gap v={v}"),
            true,
            g.gap >= g.lower_bound - 1e-12,
            format!("J_D {} best J_M {} gap {} >= {}", g.offline_value, g.best_online_value, g.gap, g.lower_bound),
        );
        if v == 5 {
            let hyp = HypothesisSet::new(
                env.tasks.iter().cloned().zip(env.behavior.policies().iter().cloned()).collect(),
                Mode::Plain,
            )?;
            let ts = MetaPolicyTS::new(meta.hypothesis_policies.clone(), SamplerMode::WithoutReplacement)?;
            let j = evaluate_meta_policy(&ts, &hyp, &env.task_prior, &env.budget, EvalMethod::Exact)?;
            line(&mut checks, "thompson value v=5", true, (j - 3.0).abs() <= 1e-9, format!("exact value {j}"));
        }
        gaps.push(g);
    }

    let (task, mu) = consistency_fixture();
    let sweep = simulation_sweep(sim_pairs, derive_seed(seed, 100))?;
    line(&mut checks, "simulation lemma sweep", true, sweep.violations == 0, format!("{} violations in {} pairs", sweep.violations, sweep.trials));
    let base = TaskSpec::new(
        vec![0.0, 0.5, 0.9],
        task.horizon(),
        task.transition_rows(),
        task.reward_rows(),
        task.initial_state(),
    )?;
    let reward_shift = check_simulation_lemma(&base, &shift_rewards(&base, 0.1)?, &mu)?;
    line(
        &mut checks,
        "simulation lemma reward shift",
        true,
        !reward_shift.violated() && (reward_shift.lhs - reward_shift.rhs).abs() <= 1e-9,
        format!("lhs {} rhs {}", reward_shift.lhs, reward_shift.rhs),
    );

    let mut reports = vec![sweep];
    let cons = check_consistency(&task, &mu, &mu, &sizes, trials, delta, derive_seed(seed, 200))?;
    let first = cons[0].empirical.median;
    let last_k = cons.iter().find(|r| r.dataset_size == Some(1000)).map(|r| r.empirical.median).unwrap_or(f64::NAN);
    line(&mut checks, "consistency gap shrinks", false, last_k <= first / 4.0, format!("median gap K=10 {first}, K=1000 {last_k}"));
    for r in &cons {
        line(
            &mut checks,
            &format!("consistency bound K={}", r.dataset_size.unwrap_or(0)),
            false,
            r.violation_rate() <= delta + 0.02,
            format!("violation rate {}", r.violation_rate()),
        );
    }
    reports.extend(cons);

    let dist = check_task_distance(&[1, 10, 100, 1000], trials, delta, derive_seed(seed, 300))?;
    for r in &dist {
        line(
            &mut checks,
            &format!("task distance K={}", r.dataset_size.unwrap_or(0)),
            false,
            r.violation_rate() <= delta + 0.02,
            format!("violation rate {}, median distance {}", r.violation_rate(), r.empirical.median),
        );
    }
    reports.extend(dist);

    let det = p_out_medians(4, 0.0, &[1], p_seeds, p_rollouts, derive_seed(seed, 400))?;
    line(&mut checks, "p_out deterministic", true, det[0].1 == 0.0, format!("median {}", det[0].1));
    let medians = p_out_medians(4, 0.05, &[10, 100, 1000], p_seeds, p_rollouts, derive_seed(seed, 500))?;
    let monotone = medians.windows(2).all(|w| w[1].1 <= w[0].1);
    line(&mut checks, "p_out non-increasing", false, monotone, format!("{medians:?}"));

    Ok(VerifyBundle { scale, seed, checks, shift, gaps, reward_shift, p_out_medians: medians, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm_cfg(seeds: usize) -> ExperimentConfig {
        ExperimentConfig::new(EnvFamily::VArm { v: 5 }, (0..seeds as u64).collect(), vec![Comparator::IdaqRe, Comparator::BaselineAll])
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let text = r#"
            name = "arms"
            seeds = [1, 2, 3]
            comparators = ["idaq-re", "baseline-all"]
            [env]
            name = "three-path"
            slip = 0.05
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.k_per_task, 45);
        assert_eq!(cfg.env, EnvFamily::ThreePath { length: 4, slip: 0.05 });
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_fail_early() {
        let mut cfg = arm_cfg(0);
        assert!(cfg.validate().is_err());
        cfg.seeds = vec![1];
        cfg.comparators.clear();
        assert!(cfg.validate().is_err());
        cfg.comparators = vec![Comparator::IdaqRe];
        cfg.adaptation.k_percent = Some(0.0);
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml("seeds = [1]\ncomparators = [\"nope\"]\n[env]\nname = \"v-arm\"\nv = 3").is_err());
        assert!(ExperimentConfig::from_toml("seeds = [1]\ncomparators = [\"idaq-re\"]\ntypo = 1\n[env]\nname = \"v-arm\"\nv = 3").is_err());
    }

    #[test]
    fn arm_experiment_favors_idaq() {
        let cfg = arm_cfg(200);
        let outcomes = run_outcomes(&cfg).unwrap();
        let s = summarize(&cfg, &outcomes);
        let re = s.comparator(Comparator::IdaqRe).unwrap();
        let base = s.comparator(Comparator::BaselineAll).unwrap();
        assert!(re.mean_return > base.mean_return, "{} vs {}", re.mean_return, base.mean_return);
        for c in &s.comparators {
            assert!(c.return_ci[0] <= c.mean_return && c.mean_return <= c.return_ci[1]);
        }
    }

    #[test]
    fn single_seed_deterministic_env_has_zero_width() {
        let cfg = ExperimentConfig::new(EnvFamily::VArm { v: 1 }, vec![3], vec![Comparator::IdaqRe]);
        let s = summarize(&cfg, &run_outcomes(&cfg).unwrap());
        let c = &s.comparators[0];
        assert_eq!(c.return_ci[0], c.return_ci[1]);
        assert_eq!(c.success_rate, 1.0);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut cfg = ExperimentConfig::new(
            EnvFamily::ThreePath { length: 3, slip: 0.05 },
            (0..8).collect(),
            Comparator::ALL.to_vec(),
        );
        cfg.bootstrap_resamples = 500;
        let a = run_outcomes(&cfg).unwrap();
        let b = run_outcomes(&cfg).unwrap();
        assert_eq!(runs_csv(&cfg, &a), runs_csv(&cfg, &b));
        assert_eq!(summarize(&cfg, &a).to_json().unwrap(), summarize(&cfg, &b).to_json().unwrap());
        let header = runs_csv(&cfg, &a);
        assert!(header.starts_with(RUNS_CSV_HEADER));
    }

    #[test]
    fn bootstrap_ci_brackets_the_mean() {
        let v = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let [lo, hi] = bootstrap_ci(&v, 10_000, 4);
        assert!(lo < 0.625 && 0.625 < hi);
        assert!(hi - lo < 0.8);
        assert_eq!(bootstrap_ci(&[0.5; 10], 100, 1), [0.5, 0.5]);
    }

    #[test]
    fn comparator_names_round_trip() {
        for c in Comparator::ALL {
            assert_eq!(Comparator::parse(c.name()).unwrap(), c);
        }
        assert!(Comparator::parse("idaq").is_err());
    }
}
