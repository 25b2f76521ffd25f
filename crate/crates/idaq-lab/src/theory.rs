//! Numerical checks of the distribution-shift results: the shift witness on
//! the v-arm family, the offline/online evaluation gap, the finite-sample
//! consistency bound, the simulation lemma, out-of-support probability,
//! trajectory distances and the task-distance covering bound.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{posterior_update, AdaptationBudget, Belief, HypothesisSet, Mode, Posterior};
use crate::envs::{build_three_path, EnvInstance};
use crate::error::{Error, Result};
use crate::mdp::{
    exact_policy_value, sample_episode, visitation_distribution, StationaryPolicy, Step, TaskSpec, Trajectory,
};
use crate::offline::{collect_dataset, induced_mdp, offline_policy_evaluation, shift_tv, BehaviorMap, MultiTaskDataset};
use crate::seed::derive_seed;
use crate::trainer::{train_meta_policy, MetaPolicyTS, TrainConfig};

/// Slack on deterministic bound comparisons.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { min: f64::NAN, median: f64::NAN, max: f64::NAN };
        }
        Self { min: values.iter().copied().fold(f64::INFINITY, f64::min), median: median(values), max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max) }
    }
}

/// Median; mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub dataset_size: Option<usize>,
    pub trials: usize,
    pub violations: usize,
    /// Trials that could not be scored (for instance a policy leaving the data).
    pub skipped: usize,
    /// The bound has no finite value for this setting.
    pub bound_undefined: bool,
    pub confidence_delta: f64,
    pub seed: u64,
    pub empirical: Stats,
    pub bound: Stats,
    pub empirical_values: Vec<f64>,
    pub bound_values: Vec<f64>,
}

impl BoundReport {
    fn from_pairs(
        name: &str,
        dataset_size: Option<usize>,
        confidence_delta: f64,
        seed: u64,
        trials: usize,
        pairs: &[(f64, f64)],
    ) -> Self {
        let empirical_values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let bound_values: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        Self {
            name: name.to_string(),
            dataset_size,
            trials,
            violations: pairs.iter().filter(|(e, b)| e > &(b + BOUND_SLACK)).count(),
            skipped: trials - pairs.len(),
            bound_undefined: false,
            confidence_delta,
            seed,
            empirical: Stats::of(&empirical_values),
            bound: Stats::of(&bound_values),
            empirical_values,
            bound_values,
        }
    }

    pub fn scored(&self) -> usize {
        self.trials - self.skipped
    }

    pub fn violation_rate(&self) -> f64 {
        if self.scored() == 0 {
            0.0
        } else {
            self.violations as f64 / self.scored() as f64
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// ---------------------------------------------------------------------------
// shift witness

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftWitness {
    pub episode: usize,
    pub step: usize,
    pub state: usize,
    pub belief: Vec<f64>,
    pub action: usize,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub max_tv: f64,
    pub witness: Option<ShiftWitness>,
    pub hyper_states: usize,
}

const HYPER_STATE_LIMIT: usize = 1_000_000;

fn outcome_dists(hyp: &HypothesisSet, belief: &Belief, s: usize, a: usize) -> (Option<Vec<f64>>, Vec<f64>) {
    let t0 = hyp.task(0);
    let (ns, nr) = (t0.num_states(), t0.num_rewards());
    let mut offline = vec![0.0; nr * ns];
    let mut online = vec![0.0; nr * ns];
    let mut off_mass = 0.0;
    for (i, &b) in belief.weights().iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let task = hyp.task(i);
        let mu = hyp.behavior(i).prob(s, a);
        off_mass += b * mu;
        for (r, &pr) in task.reward_row(s, a).iter().enumerate() {
            for (sn, &ps) in task.transition_row(s, a).iter().enumerate() {
                online[r * ns + sn] += b * pr * ps;
                offline[r * ns + sn] += b * mu * pr * ps;
            }
        }
    }
    let offline = (off_mass > 0.0).then(|| offline.iter().map(|x| x / off_mass).collect());
    (offline, online)
}

fn belief_key(b: &Belief) -> Vec<u64> {
    b.weights().iter().map(|w| w.to_bits()).collect()
}

/// Total-variation distance between the offline-data outcome distribution and
/// the online outcome distribution at every hyper-state the meta-policy
/// reaches, for every action the data covers there.
///
/// Offline outcomes at belief `b` are drawn from the mixture weighted by
/// `b_i * mu_i(a|s)`; online outcomes from the mixture weighted by `b_i`.
/// The online belief is the plain posterior.
pub fn check_shift_exists(
    tasks: &[TaskSpec],
    behavior: &BehaviorMap,
    prior: &[f64],
    meta: &MetaPolicyTS,
    budget: &AdaptationBudget,
) -> Result<ShiftReport> {
    let entries = tasks.iter().cloned().zip(behavior.policies().iter().cloned()).collect();
    let hyp = HypothesisSet::new(entries, Mode::Plain)?;
    if meta.len() != hyp.len() {
        return Err(Error::Dimension("meta-policy size differs from task count".into()));
    }
    let h = tasks[0].horizon();
    let s0 = tasks[0].initial_state();
    let ns = tasks[0].num_states();
    let support = tasks[0].reward_support().to_vec();
    let mut seen: HashSet<(usize, usize, usize, Vec<u64>, Vec<bool>, usize)> = HashSet::new();
    let mut tv_seen: HashSet<(usize, Vec<u64>, usize)> = HashSet::new();
    let mut stack = Vec::new();
    let mut report = ShiftReport { max_tv: 0.0, witness: None, hyper_states: 0 };
    let prior = Belief::new(prior.to_vec())?;
    let tried0 = vec![false; hyp.len()];
    for (z, &w) in meta.hypothesis_distribution(&prior, &tried0).iter().enumerate() {
        if w > 0.0 {
            let mut tried = tried0.clone();
            tried[z] = true;
            stack.push((0usize, 0usize, s0, prior.clone(), tried, z));
        }
    }
    while let Some((ep, t, s, belief, tried, z)) = stack.pop() {
        if !seen.insert((ep, t, s, belief_key(&belief), tried.clone(), z)) {
            continue;
        }
        if seen.len() > HYPER_STATE_LIMIT {
            return Err(Error::TreeTooLarge { limit: HYPER_STATE_LIMIT });
        }
        for a in 0..tasks[0].num_actions() {
            if meta.policy(z).prob(s, a) == 0.0 {
                continue;
            }
            let (offline, online) = outcome_dists(&hyp, &belief, s, a);
            if let Some(off) = offline {
                if tv_seen.insert((s, belief_key(&belief), a)) {
                    let tv = shift_tv(&off, &online)?;
                    if tv > report.max_tv {
                        report.max_tv = tv;
                        report.witness = Some(ShiftWitness {
                            episode: ep,
                            step: t,
                            state: s,
                            belief: belief.weights().to_vec(),
                            action: a,
                            tv,
                        });
                    }
                }
            }
            for (k, &p) in online.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let step = Step { state: s, action: a, reward: support[k / ns], next_state: k % ns };
                let next_belief = match posterior_update(&belief, &hyp, &step)? {
                    Posterior::Updated(b) => b,
                    Posterior::Infeasible => continue,
                };
                if t + 1 < h {
                    stack.push((ep, t + 1, k % ns, next_belief, tried.clone(), z));
                } else if ep + 1 < budget.episodes_total {
                    for (nz, &w) in meta.hypothesis_distribution(&next_belief, &tried).iter().enumerate() {
                        if w > 0.0 {
                            let mut nt = tried.clone();
                            nt[nz] = true;
                            stack.push((ep + 1, 0, s0, next_belief.clone(), nt, nz));
                        }
                    }
                }
            }
        }
    }
    report.hyper_states = seen.len();
    Ok(report)
}

// ---------------------------------------------------------------------------
// offline / online gap

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    /// Offline value over the whole budget of each hypothesis policy on its own sub-dataset.
    pub offline_values: Vec<f64>,
    pub offline_value: f64,
    pub best_online_value: f64,
    pub gap: f64,
    /// `(N - 1) / 2` for a budget of `N` steps.
    pub lower_bound: f64,
}

/// Value of the Bayes-optimal adaptive policy over `budget`, restricted to
/// actions `allowed(s, a)` where any exist, computed by exact dynamic
/// programming over plain beliefs.
pub fn bayes_optimal_value(
    hyp: &HypothesisSet,
    prior: &[f64],
    budget: &AdaptationBudget,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Result<f64> {
    let hyp = hyp.with_mode(Mode::Plain);
    let prior = Belief::new(prior.to_vec())?;
    let mut memo = HashMap::new();
    let s0 = hyp.task(0).initial_state();
    bayes_rec(&hyp, budget.horizon_total, s0, &prior, allowed, &mut memo)
}

fn bayes_rec(
    hyp: &HypothesisSet,
    steps_left: usize,
    s: usize,
    belief: &Belief,
    allowed: &dyn Fn(usize, usize) -> bool,
    memo: &mut HashMap<(usize, usize, Vec<u64>), f64>,
) -> Result<f64> {
    if steps_left == 0 {
        return Ok(0.0);
    }
    let key = (steps_left, s, belief_key(belief));
    if let Some(&v) = memo.get(&key) {
        return Ok(v);
    }
    if memo.len() > HYPER_STATE_LIMIT {
        return Err(Error::TreeTooLarge { limit: HYPER_STATE_LIMIT });
    }
    let t0 = hyp.task(0);
    let (na, ns, h) = (t0.num_actions(), t0.num_states(), t0.horizon());
    let support = t0.reward_support().to_vec();
    let mut actions: Vec<usize> = (0..na).filter(|&a| allowed(s, a)).collect();
    if actions.is_empty() {
        actions = (0..na).collect();
    }
    // the episode resets to s0 once the task horizon is used up
    let ends_episode = (steps_left - 1) % h == 0;
    let mut best = f64::NEG_INFINITY;
    for a in actions {
        let (_, online) = outcome_dists(hyp, belief, s, a);
        let mut value = 0.0;
        for (k, &p) in online.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let r = support[k / ns];
            let step = Step { state: s, action: a, reward: r, next_state: k % ns };
            let nb = posterior_update(belief, hyp, &step)?.belief().expect("outcome has positive probability");
            let next_s = if ends_episode { t0.initial_state() } else { k % ns };
            value += p * (r + bayes_rec(hyp, steps_left - 1, next_s, &nb, allowed, memo)?);
        }
        best = best.max(value);
    }
    memo.insert(key, best);
    Ok(best)
}

/// Offline value of the trained hypothesis policies against the best online
/// adaptive value on the true tasks, both over the environment's budget.
/// Online policies are restricted to actions present in the pooled data.
pub fn check_offline_online_gap(env: &EnvInstance, dataset: &MultiTaskDataset, meta: &MetaPolicyTS) -> Result<GapReport> {
    let n = env.budget.episodes_total as f64;
    let mut offline_values = Vec::with_capacity(env.num_tasks());
    for i in 0..env.num_tasks() {
        let induced = induced_mdp(dataset.sub_dataset(i), &env.tasks[i])?;
        offline_values.push(n * offline_policy_evaluation(&induced, meta.policy(i))?);
    }
    let entries = env.tasks.iter().cloned().zip(env.behavior.policies().iter().cloned()).collect();
    let hyp = HypothesisSet::new(entries, Mode::Plain)?;
    let na = env.tasks[0].num_actions();
    let mut pooled = vec![false; env.tasks[0].num_states() * na];
    for traj in dataset.all_trajectories() {
        for st in &traj.steps {
            pooled[st.state * na + st.action] = true;
        }
    }
    let best_online_value = bayes_optimal_value(&hyp, &env.task_prior, &env.budget, &|s, a| pooled[s * na + a])?;
    let offline_value = offline_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(GapReport {
        offline_value,
        best_online_value,
        gap: offline_value - best_online_value,
        lower_bound: (env.budget.horizon_total as f64 - 1.0) / 2.0,
        offline_values,
    })
}

// ---------------------------------------------------------------------------
// consistency

/// Three states, two actions, rewards in {0, 0.5, 1}, H = 3, with a
/// deterministic behavior policy. Rewards and transitions are stochastic.
pub fn consistency_fixture() -> (TaskSpec, StationaryPolicy) {
    let t = vec![
        vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.2, 0.2]],
        vec![vec![0.1, 0.3, 0.6], vec![0.3, 0.3, 0.4]],
        vec![vec![0.5, 0.25, 0.25], vec![0.4, 0.4, 0.2]],
    ];
    let r = vec![
        vec![vec![0.3, 0.4, 0.3], vec![0.5, 0.0, 0.5]],
        vec![vec![0.6, 0.2, 0.2], vec![0.1, 0.1, 0.8]],
        vec![vec![0.2, 0.2, 0.6], vec![0.7, 0.3, 0.0]],
    ];
    let task = TaskSpec::new(vec![0.0, 0.5, 1.0], 3, t, r, 0).expect("valid fixture");
    let mu = StationaryPolicy::deterministic(&[0, 1, 0], 2).expect("valid fixture");
    (task, mu)
}

/// Smallest positive entry of the normalized state-action visitation of `policy`.
pub fn min_visitation(task: &TaskSpec, policy: &StationaryPolicy) -> Result<f64> {
    let vis = visitation_distribution(task, policy)?;
    let mut d = f64::INFINITY;
    for s in 0..task.num_states() {
        for a in 0..task.num_actions() {
            let x = vis.state_action_marginal(s, a);
            if x > 0.0 {
                d = d.min(x);
            }
        }
    }
    Ok(if d.is_finite() { d } else { 0.0 })
}

/// `H^2 |S| sqrt((ln(1/delta) + ln(2 |S|^2 |A|)) / (K d_mu))`.
pub fn consistency_bound(task: &TaskSpec, k: usize, d_mu: f64, delta: f64) -> f64 {
    let (h, s, a) = (task.horizon() as f64, task.num_states() as f64, task.num_actions() as f64);
    h * h * s * (((1.0 / delta).ln() + (2.0 * s * s * a).ln()) / (k as f64 * d_mu)).sqrt()
}

/// For each dataset size, `|J_D(pi) - J_M(pi)|` over `trials` datasets
/// collected by `behavior`, against the finite-sample bound.
pub fn check_consistency(
    task: &TaskSpec,
    behavior: &StationaryPolicy,
    policy: &StationaryPolicy,
    dataset_sizes: &[usize],
    trials: usize,
    confidence_delta: f64,
    seed: u64,
) -> Result<Vec<BoundReport>> {
    if !(confidence_delta > 0.0 && confidence_delta < 1.0) {
        return Err(Error::Config("confidence delta must lie in (0, 1)".into()));
    }
    let j_true = exact_policy_value(task, policy)?;
    let d_mu = min_visitation(task, behavior)?;
    let beh = BehaviorMap::new(vec![behavior.clone()])?;
    let mut reports = Vec::with_capacity(dataset_sizes.len());
    for (ki, &k) in dataset_sizes.iter().enumerate() {
        let ks = derive_seed(seed, ki as u64);
        if d_mu == 0.0 {
            let mut r = BoundReport::from_pairs("consistency", Some(k), confidence_delta, ks, trials, &[]);
            r.bound_undefined = true;
            reports.push(r);
            continue;
        }
        let bound = consistency_bound(task, k, d_mu, confidence_delta);
        let outcomes: Vec<Option<(f64, f64)>> = (0..trials)
            .into_par_iter()
            .map(|trial| -> Result<Option<(f64, f64)>> {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ks, trial as u64));
                let data = collect_dataset(std::slice::from_ref(task), &beh, k, &mut rng)?;
                let induced = induced_mdp(data.sub_dataset(0), task)?;
                match offline_policy_evaluation(&induced, policy) {
                    Ok(j_d) => Ok(Some(((j_d - j_true).abs(), bound))),
                    Err(Error::NotBatchConstrained { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(f64, f64)> = outcomes.into_iter().flatten().collect();
        reports.push(BoundReport::from_pairs("consistency", Some(k), confidence_delta, ks, trials, &pairs));
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// simulation lemma

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Largest L1 distance between matching transition rows.
    pub eps_p: f64,
    /// Largest difference between matching mean rewards.
    pub eps_r: f64,
    pub r_max: f64,
}

impl SimulationCheck {
    pub fn violated(&self) -> bool {
        self.lhs > self.rhs + BOUND_SLACK
    }
}

/// `|J_1 - J_2| <= H eps_r + H (H - 1) / 2 * r_max * eps_p`.
pub fn check_simulation_lemma(m1: &TaskSpec, m2: &TaskSpec, policy: &StationaryPolicy) -> Result<SimulationCheck> {
    let dims = |m: &TaskSpec| (m.num_states(), m.num_actions(), m.num_rewards(), m.horizon());
    if dims(m1) != dims(m2) {
        return Err(Error::Dimension("simulation lemma needs two models of the same shape".into()));
    }
    let lhs = (exact_policy_value(m1, policy)? - exact_policy_value(m2, policy)?).abs();
    let (mut eps_p, mut eps_r, mut r_max) = (0.0f64, 0.0f64, 0.0f64);
    for s in 0..m1.num_states() {
        for a in 0..m1.num_actions() {
            let l1: f64 = m1.transition_row(s, a).iter().zip(m2.transition_row(s, a)).map(|(p, q)| (p - q).abs()).sum();
            eps_p = eps_p.max(l1);
            let (r1, r2) = (m1.mean_reward(s, a), m2.mean_reward(s, a));
            eps_r = eps_r.max((r1 - r2).abs());
            r_max = r_max.max(r1).max(r2);
        }
    }
    let h = m1.horizon() as f64;
    let rhs = h * eps_r + h * (h - 1.0) / 2.0 * r_max * eps_p;
    Ok(SimulationCheck { lhs, rhs, eps_p, eps_r, r_max })
}

fn random_row<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() }).collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.gen_range(0..n)] = 1.0;
    }
    normalize(w)
}

/// Scales to unit sum and puts the rounding residue on the largest entry.
fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    let top = (0..w.len()).max_by(|&i, &j| w[i].total_cmp(&w[j])).expect("nonempty");
    let rest: f64 = w.iter().enumerate().filter(|(i, _)| *i != top).map(|(_, x)| x).sum();
    w[top] = 1.0 - rest;
    w
}

/// Random task with about a fifth of the row entries zeroed.
pub fn random_task<R: Rng + ?Sized>(
    num_states: usize,
    num_actions: usize,
    reward_support: &[f64],
    horizon: usize,
    rng: &mut R,
) -> Result<TaskSpec> {
    let t = (0..num_states).map(|_| (0..num_actions).map(|_| random_row(num_states, rng)).collect()).collect();
    let r = (0..num_states)
        .map(|_| (0..num_actions).map(|_| random_row(reward_support.len(), rng)).collect())
        .collect();
    TaskSpec::new(reward_support.to_vec(), horizon, t, r, 0)
}

/// Mixes every row with a fresh random row at a weight drawn from `[0, scale]`.
pub fn perturb_task<R: Rng + ?Sized>(task: &TaskSpec, scale: f64, rng: &mut R) -> Result<TaskSpec> {
    let mut mix = |row: &[f64]| {
        let lambda = rng.gen::<f64>() * scale;
        let other = random_row(row.len(), rng);
        normalize(row.iter().zip(&other).map(|(p, q)| (1.0 - lambda) * p + lambda * q).collect())
    };
    let (ns, na) = (task.num_states(), task.num_actions());
    let t = (0..ns).map(|s| (0..na).map(|a| mix(task.transition_row(s, a))).collect()).collect();
    let r = (0..ns).map(|s| (0..na).map(|a| mix(task.reward_row(s, a))).collect()).collect();
    TaskSpec::new(task.reward_support().to_vec(), task.horizon(), t, r, task.initial_state())
}

fn random_policy<R: Rng + ?Sized>(ns: usize, na: usize, rng: &mut R) -> Result<StationaryPolicy> {
    StationaryPolicy::new((0..ns).map(|_| random_row(na, rng)).collect())
}

/// `pairs` random (model, perturbed model, policy) triples of varying size.
pub fn simulation_sweep(pairs: usize, seed: u64) -> Result<BoundReport> {
    let results = (0..pairs)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let ns = rng.gen_range(1..=5);
            let na = rng.gen_range(1..=3);
            let h = rng.gen_range(1..=6);
            let support: Vec<f64> = match rng.gen_range(0..3) {
                0 => vec![0.0, 1.0],
                1 => vec![0.0, 0.5, 1.0],
                _ => vec![0.1, 0.3, 0.9],
            };
            let m1 = random_task(ns, na, &support, h, &mut rng)?;
            let scale = [0.01, 0.1, 0.5, 1.0][rng.gen_range(0..4)];
            let m2 = perturb_task(&m1, scale, &mut rng)?;
            let pi = random_policy(ns, na, &mut rng)?;
            let c = check_simulation_lemma(&m1, &m2, &pi)?;
            Ok((c.lhs, c.rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport::from_pairs("simulation-lemma", None, 0.0, seed, pairs, &results))
}

/// `m` with every reward value raised by `shift` (support must stay in [0, 1]).
pub fn shift_rewards(m: &TaskSpec, shift: f64) -> Result<TaskSpec> {
    let support: Vec<f64> = m.reward_support().iter().map(|r| r + shift).collect();
    TaskSpec::new(support, m.horizon(), m.transition_rows(), m.reward_rows(), m.initial_state())
}

// ---------------------------------------------------------------------------
// leaving the data

/// Fraction of `n_rollouts` episodes of `policy` in `task` that contain a
/// state never seen as `s_t` in `dataset` or a `(s, a, r)` triple absent from it.
pub fn estimate_p_out<R: Rng + ?Sized>(
    policy: &StationaryPolicy,
    task: &TaskSpec,
    dataset: &[Trajectory],
    n_rollouts: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_rollouts == 0 {
        return Err(Error::Config("n_rollouts must be >= 1".into()));
    }
    let mut states = HashSet::new();
    let mut triples = HashSet::new();
    for traj in dataset {
        for st in &traj.steps {
            states.insert(st.state);
            triples.insert((st.state, st.action, st.reward.to_bits()));
        }
    }
    let mut out = 0usize;
    for _ in 0..n_rollouts {
        let traj = sample_episode(task, policy, rng)?;
        if traj
            .steps
            .iter()
            .any(|st| !states.contains(&st.state) || !triples.contains(&(st.state, st.action, st.reward.to_bits())))
        {
            out += 1;
        }
    }
    Ok(out as f64 / n_rollouts as f64)
}

/// Median over seeds of p_out for the correct-hypothesis policy on three-path,
/// one entry per dataset size. Seed `j` tests task `j mod 3`.
pub fn p_out_medians(
    length: usize,
    slip: f64,
    sizes: &[usize],
    seeds: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let env = build_three_path(length, slip)?;
    let mut out = Vec::with_capacity(sizes.len());
    for (ki, &k) in sizes.iter().enumerate() {
        let values = (0..seeds)
            .into_par_iter()
            .map(|j| -> Result<f64> {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, ki as u64), j as u64));
                let data = collect_dataset(&env.tasks, &env.behavior, k, &mut rng)?;
                let meta = train_meta_policy(&data, &env.tasks[0], &TrainConfig::default())?;
                let i = j % env.num_tasks();
                estimate_p_out(meta.policy(i), &env.tasks[i], data.sub_dataset(i), n_rollouts, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((k, median(&values)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// trajectory and task distances

fn flatten(traj: &Trajectory, embed: &dyn Fn(usize) -> Vec<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    for st in &traj.steps {
        v.extend(embed(st.state));
        v.push(st.action as f64);
        v.push(st.reward);
    }
    if let Some(last) = traj.steps.last() {
        v.extend(embed(last.next_state));
    }
    v
}

/// `min_j ||v(traj) - v(d_j)|| / ||v(d_j)||` with `v = <e(s_0), a_0, r_0, ..., e(s_H)>`.
pub fn min_distance(traj: &Trajectory, dataset: &[Trajectory], embed: &dyn Fn(usize) -> Vec<f64>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("reference dataset".into()));
    }
    let v1 = flatten(traj, embed);
    let mut best = f64::INFINITY;
    for d in dataset {
        let v2 = flatten(d, embed);
        if v2.len() != v1.len() {
            return Err(Error::Dimension("trajectories differ in length".into()));
        }
        let norm = v2.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let diff = v1.iter().zip(&v2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        best = best.min(diff / norm);
    }
    Ok(best)
}

/// Sup-norm distance over all transition and reward table entries.
pub fn task_distance(a: &TaskSpec, b: &TaskSpec) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Dimension("tasks differ in shape".into()));
    }
    let mut d = 0.0f64;
    for s in 0..a.num_states() {
        for act in 0..a.num_actions() {
            for (p, q) in a.transition_row(s, act).iter().zip(b.transition_row(s, act)) {
                d = d.max((p - q).abs());
            }
            for (p, q) in a.reward_row(s, act).iter().zip(b.reward_row(s, act)) {
                d = d.max((p - q).abs());
            }
        }
    }
    Ok(d)
}

/// One state, one action, H = 1, reward 1 with probability `theta`.
pub fn bernoulli_reward_task(theta: f64) -> Result<TaskSpec> {
    TaskSpec::new(vec![0.0, 1.0], 1, vec![vec![vec![1.0]]], vec![vec![vec![1.0 - theta, theta]]], 0)
}

/// `2 (ln(1/delta) / K)^(1 / (|S| |A| (|S| + |R|)))`.
pub fn task_distance_bound(k: usize, ns: usize, na: usize, nr: usize, delta: f64) -> f64 {
    2.0 * ((1.0 / delta).ln() / k as f64).powf(1.0 / (ns * na * (ns + nr)) as f64)
}

/// Distance from a uniformly drawn Bernoulli-reward test task to the closest
/// of `K` uniformly drawn training tasks, per training-set size.
pub fn check_task_distance(train_counts: &[usize], trials: usize, confidence_delta: f64, seed: u64) -> Result<Vec<BoundReport>> {
    if !(confidence_delta > 0.0 && confidence_delta < 1.0) {
        return Err(Error::Config("confidence delta must lie in (0, 1)".into()));
    }
    let mut reports = Vec::with_capacity(train_counts.len());
    for (ki, &k) in train_counts.iter().enumerate() {
        if k == 0 {
            return Err(Error::Config("training task count must be >= 1".into()));
        }
        let ks = derive_seed(seed, ki as u64);
        let bound = task_distance_bound(k, 1, 1, 2, confidence_delta);
        let pairs = (0..trials)
            .into_par_iter()
            .map(|trial| -> Result<(f64, f64)> {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ks, trial as u64));
                let test = bernoulli_reward_task(rng.gen())?;
                let mut best = f64::INFINITY;
                for _ in 0..k {
                    best = best.min(task_distance(&test, &bernoulli_reward_task(rng.gen())?)?);
                }
                Ok((best, bound))
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(BoundReport::from_pairs("task-distance", Some(k), confidence_delta, ks, trials, &pairs));
    }
    Ok(reports)
}
