//! Beliefs over a finite hypothesis list and their Bayes updates.
//!
//! In plain mode a hypothesis is a task and the likelihood of a step is
//! `R(r|s,a) P(s'|s,a)`. In transformed mode a hypothesis is a (task,
//! behavior) pair and the likelihood also carries `mu(a|s)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{check_distribution, enumerate_trajectories, sample_episode, sample_index, StationaryPolicy, Step, TaskSpec, Trajectory, CONSTRUCTION_TOL};
use crate::trainer::MetaPolicyTS;

/// Unnormalized posterior mass below this is treated as zero.
pub const INFEASIBLE_MASS: f64 = 1e-300;

/// Leaf budget for exact meta-policy evaluation.
pub const EXACT_LEAF_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Plain,
    Transformed,
}

#[derive(Debug, Clone)]
pub struct HypothesisSet {
    tasks: Vec<TaskSpec>,
    behaviors: Vec<StationaryPolicy>,
    mode: Mode,
}

impl HypothesisSet {
    pub fn new(entries: Vec<(TaskSpec, StationaryPolicy)>, mode: Mode) -> Result<Self> {
        let first = entries
            .first()
            .map(|(t, _)| t.clone())
            .ok_or_else(|| Error::Empty("hypothesis set".into()))?;
        let mut tasks = Vec::with_capacity(entries.len());
        let mut behaviors = Vec::with_capacity(entries.len());
        for (i, (t, mu)) in entries.into_iter().enumerate() {
            if !t.same_shape(&first) {
                return Err(Error::Dimension(format!("hypothesis {i} differs in shape from hypothesis 0")));
            }
            if mu.num_states() != t.num_states() || mu.num_actions() != t.num_actions() {
                return Err(Error::Dimension(format!("behavior {i} does not match its task")));
            }
            tasks.push(t);
            behaviors.push(mu);
        }
        Ok(Self { tasks, behaviors, mode })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn task(&self, i: usize) -> &TaskSpec {
        &self.tasks[i]
    }

    pub fn behavior(&self, i: usize) -> &StationaryPolicy {
        &self.behaviors[i]
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    fn template(&self) -> &TaskSpec {
        &self.tasks[0]
    }

    /// Likelihood of one step under hypothesis `i`.
    pub fn likelihood(&self, i: usize, step: &Step) -> f64 {
        let task = &self.tasks[i];
        let Some(ri) = task.reward_index(step.reward) else { return 0.0 };
        let mut l = task.reward_row(step.state, step.action)[ri]
            * task.transition_row(step.state, step.action)[step.next_state];
        if self.mode == Mode::Transformed {
            l *= self.behaviors[i].prob(step.state, step.action);
        }
        l
    }

    fn check_step(&self, step: &Step) -> Result<()> {
        let t = self.template();
        if step.state >= t.num_states() || step.next_state >= t.num_states() || step.action >= t.num_actions() {
            return Err(Error::Dimension(format!("evidence {step:?} out of range")));
        }
        Ok(())
    }
}

/// A probability vector over hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    weights: Vec<f64>,
}

impl Belief {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("belief".into()));
        }
        check_distribution(&weights, CONSTRUCTION_TOL, || "belief".into())?;
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[i] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Most probable hypothesis, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.weights.len() {
            if self.weights[i] > self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// Normalizes nonnegative weights; `None` if the mass is below the
    /// feasibility threshold.
    fn from_unnormalized(w: Vec<f64>) -> Option<Self> {
        let z: f64 = w.iter().sum();
        if !(z >= INFEASIBLE_MASS) {
            return None;
        }
        Some(Self { weights: w.into_iter().map(|x| x / z).collect() })
    }
}

/// Outcome of a Bayes update.
#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    Updated(Belief),
    /// No hypothesis gives the evidence positive probability.
    Infeasible,
}

impl Posterior {
    pub fn belief(self) -> Option<Belief> {
        match self {
            Posterior::Updated(b) => Some(b),
            Posterior::Infeasible => None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Posterior::Infeasible)
    }
}

pub fn posterior_update(belief: &Belief, hyp: &HypothesisSet, evidence: &Step) -> Result<Posterior> {
    if belief.len() != hyp.len() {
        return Err(Error::Dimension(format!("belief has {} entries, hypothesis set {}", belief.len(), hyp.len())));
    }
    hyp.check_step(evidence)?;
    let w: Vec<f64> = belief
        .weights
        .iter()
        .enumerate()
        .map(|(i, &b)| if b == 0.0 { 0.0 } else { b * hyp.likelihood(i, evidence) })
        .collect();
    Ok(match Belief::from_unnormalized(w) {
        Some(b) => Posterior::Updated(b),
        None => Posterior::Infeasible,
    })
}

/// Applies every step of a trajectory in order.
pub fn update_with_trajectory(belief: &Belief, hyp: &HypothesisSet, traj: &Trajectory) -> Result<Posterior> {
    let mut b = belief.clone();
    for step in &traj.steps {
        match posterior_update(&b, hyp, step)? {
            Posterior::Updated(nb) => b = nb,
            Posterior::Infeasible => return Ok(Posterior::Infeasible),
        }
    }
    Ok(Posterior::Updated(b))
}

/// Environment state paired with a belief.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    pub state: usize,
    pub belief: Belief,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AdaptationBudget {
    pub episodes_total: usize,
    pub horizon_total: usize,
}

impl AdaptationBudget {
    pub fn new(episodes: usize, task_horizon: usize) -> Self {
        Self { episodes_total: episodes, horizon_total: episodes * task_horizon }
    }
}

fn mixture(weights: &[f64], rows: impl Fn(usize) -> Vec<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = rows(i);
        if out.is_empty() {
            out = vec![0.0; row.len()];
        }
        for (o, x) in out.iter_mut().zip(row) {
            *o += w * x;
        }
    }
    out
}

fn check_hyper(hyper: &HyperState, hyp: &HypothesisSet, action: usize) -> Result<()> {
    let t = hyp.template();
    if hyper.belief.len() != hyp.len() || hyper.state >= t.num_states() || action >= t.num_actions() {
        return Err(Error::Dimension("hyper-state or action out of range".into()));
    }
    Ok(())
}

/// Belief-weighted mixture of reward rows.
pub fn bamdp_reward(hyper: &HyperState, hyp: &HypothesisSet, action: usize) -> Result<Vec<f64>> {
    check_hyper(hyper, hyp, action)?;
    Ok(mixture(hyper.belief.weights(), |i| hyp.task(i).reward_row(hyper.state, action).to_vec()))
}

/// Belief-weighted mixture of transition rows.
pub fn bamdp_transition(hyper: &HyperState, hyp: &HypothesisSet, action: usize) -> Result<Vec<f64>> {
    check_hyper(hyper, hyp, action)?;
    Ok(mixture(hyper.belief.weights(), |i| hyp.task(i).transition_row(hyper.state, action).to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMethod {
    /// Full enumeration of tasks, sampled hypotheses and episode outcomes.
    Exact,
    MonteCarlo { rollouts: usize, seed: u64 },
}

/// Expected total reward of a Thompson-sampling meta-policy over a whole
/// adaptation budget.
///
/// The true task is drawn from `task_prior` over the hypothesis tasks and the
/// belief starts at that prior. Between episodes the belief is updated on the
/// full trajectory; an infeasible update leaves the belief unchanged.
pub fn evaluate_meta_policy(
    meta: &MetaPolicyTS,
    hyp: &HypothesisSet,
    task_prior: &[f64],
    budget: &AdaptationBudget,
    method: EvalMethod,
) -> Result<f64> {
    if task_prior.len() != hyp.len() || meta.len() != hyp.len() {
        return Err(Error::Dimension("prior, meta-policy and hypothesis set sizes differ".into()));
    }
    let prior = Belief::new(task_prior.to_vec())?;
    match method {
        EvalMethod::Exact => {
            let mut leaves = 0usize;
            let mut total = 0.0;
            for (k, &pk) in task_prior.iter().enumerate() {
                if pk == 0.0 {
                    continue;
                }
                let tried = vec![false; hyp.len()];
                total += pk
                    * exact_rec(meta, hyp, k, &prior, &tried, budget.episodes_total, &mut leaves)?;
            }
            Ok(total)
        }
        EvalMethod::MonteCarlo { rollouts, seed } => {
            if rollouts == 0 {
                return Err(Error::Config("monte-carlo needs at least one rollout".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sum = 0.0;
            for _ in 0..rollouts {
                let k = sample_index(task_prior, &mut rng).expect("normalized prior");
                let mut belief = prior.clone();
                let mut tried = vec![false; hyp.len()];
                for _ in 0..budget.episodes_total {
                    let z = sample_index(&meta.hypothesis_distribution(&belief, &tried), &mut rng)
                        .expect("sampler distribution has mass");
                    tried[z] = true;
                    let traj = sample_episode(hyp.task(k), meta.policy(z), &mut rng)?;
                    sum += traj.total_return();
                    if let Posterior::Updated(b) = update_with_trajectory(&belief, hyp, &traj)? {
                        belief = b;
                    }
                }
            }
            Ok(sum / rollouts as f64)
        }
    }
}

fn exact_rec(
    meta: &MetaPolicyTS,
    hyp: &HypothesisSet,
    true_task: usize,
    belief: &Belief,
    tried: &[bool],
    episodes_left: usize,
    leaves: &mut usize,
) -> Result<f64> {
    if episodes_left == 0 {
        *leaves += 1;
        if *leaves > EXACT_LEAF_LIMIT {
            return Err(Error::TreeTooLarge { limit: EXACT_LEAF_LIMIT });
        }
        return Ok(0.0);
    }
    let dist = meta.hypothesis_distribution(belief, tried);
    let z_total: f64 = dist.iter().sum();
    let mut value = 0.0;
    for (z, &pz) in dist.iter().enumerate() {
        if pz == 0.0 {
            continue;
        }
        let pz = pz / z_total;
        let mut next_tried = tried.to_vec();
        next_tried[z] = true;
        let outcomes = enumerate_trajectories(hyp.task(true_task), meta.policy(z), EXACT_LEAF_LIMIT)
            .map_err(|e| match e {
                Error::TreeTooLarge { .. } => Error::TreeTooLarge { limit: EXACT_LEAF_LIMIT },
                other => other,
            })?;
        for (traj, p) in outcomes {
            let next_belief = match update_with_trajectory(belief, hyp, &traj)? {
                Posterior::Updated(b) => b,
                Posterior::Infeasible => belief.clone(),
            };
            let future = exact_rec(meta, hyp, true_task, &next_belief, &next_tried, episodes_left - 1, leaves)?;
            value += pz * p * (traj.total_return() + future);
        }
    }
    Ok(value)
}

/// CSV rows `episode,hypothesis,weight` for a sequence of beliefs.
pub fn belief_trace_csv(trace: &[(usize, Belief)]) -> String {
    let mut out = String::from("episode,hypothesis,weight\n");
    for (ep, b) in trace {
        for (i, w) in b.weights().iter().enumerate() {
            out.push_str(&format!("{ep},{i},{w}\n"));
        }
    }
    out
}
