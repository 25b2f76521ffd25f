//! In-distribution online adaptation: a reference stage that estimates the
//! acceptance threshold, then an iterative stage that only feeds accepted
//! episodes to the posterior. Also the no-filter baseline and the
//! expert-context oracle used as comparators.

use rand::seq::index::sample as sample_without_replacement;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::{update_with_trajectory, AdaptationBudget, Belief, HypothesisSet, Mode, Posterior};
use crate::error::{Error, Result};
use crate::mdp::{sample_episode, sample_index, StationaryPolicy, TaskSpec, Trajectory};
use crate::trainer::{EnsembleModel, MetaPolicyTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantifier {
    /// Ensemble prediction error.
    Pe,
    /// Ensemble disagreement.
    Pv,
    /// Negative return.
    Re,
}

impl Quantifier {
    pub fn name(self) -> &'static str {
        match self {
            Quantifier::Pe => "pe",
            Quantifier::Pv => "pv",
            Quantifier::Re => "re",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdaptationConfig {
    pub n_r: usize,
    pub n_i: usize,
    pub k_percent: f64,
    pub quantifier: Quantifier,
    #[serde(default = "default_n_e")]
    pub n_e: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_e() -> usize {
    1
}

impl AdaptationConfig {
    /// Splits the episode budget in half (reference stage gets the odd one).
    pub fn for_budget(budget: &AdaptationBudget, k_percent: f64, quantifier: Quantifier, seed: u64) -> Self {
        let n = budget.episodes_total;
        Self { n_r: n - n / 2, n_i: n / 2, k_percent, quantifier, n_e: 1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 {
            return Err(Error::Config("n_r must be >= 1".into()));
        }
        if self.n_e == 0 {
            return Err(Error::Config("n_e must be >= 1".into()));
        }
        if !(self.k_percent > 0.0 && self.k_percent <= 100.0) {
            return Err(Error::Config(format!("k_percent must lie in (0, 100], got {}", self.k_percent)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Reference,
    Iterative,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Reference => "reference",
            Stage::Iterative => "iterative",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub trajectory: Trajectory,
    pub hypothesis: usize,
    pub score: f64,
    pub accepted: bool,
    /// Passed the threshold but made the posterior infeasible.
    pub demoted: bool,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationResult {
    pub threshold: f64,
    pub context: Vec<EpisodeRecord>,
    pub final_belief: Belief,
    pub log: Vec<EpisodeRecord>,
    pub final_return_estimate: f64,
    /// Set when the posterior collapsed and the belief fell back to the prior.
    pub belief_infeasible: bool,
}

impl AdaptationResult {
    /// Hypothesis executed after adaptation: belief argmax, lowest index on ties.
    pub fn greedy_hypothesis(&self) -> usize {
        self.final_belief.argmax()
    }

    pub fn demotions(&self) -> usize {
        self.log.iter().filter(|r| r.demoted).count()
    }

    /// CSV with header `episode,stage,hypothesis,return,score,delta,accepted`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("episode,stage,hypothesis,return,score,delta,accepted\n");
        for (i, r) in self.log.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{},{},{}\n",
                r.stage.name(),
                r.hypothesis,
                r.trajectory.total_return(),
                r.score,
                self.threshold,
                r.accepted
            ));
        }
        out
    }
}

fn check_ens(traj: &Trajectory, z: usize, ens: &EnsembleModel) -> Result<()> {
    if z >= ens.num_hypotheses() {
        return Err(Error::Dimension(format!("hypothesis {z} outside ensemble")));
    }
    if traj.is_empty() {
        return Err(Error::Empty("trajectory".into()));
    }
    Ok(())
}

fn onehot_dist(p: &[f64], hot: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(k, &x)| {
            let d = if k == hot { 1.0 - x } else { x };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean ensemble error against the observed rewards and next states.
pub fn q_pe(traj: &Trajectory, z: usize, ens: &EnsembleModel) -> Result<f64> {
    check_ens(traj, z, ens)?;
    let mut total = 0.0;
    for st in &traj.steps {
        for m in 0..ens.size() {
            let (r, p) = ens.predict(m, st.state, st.action, z);
            total += (st.reward - r).abs() + onehot_dist(p, st.next_state);
        }
    }
    Ok(total / (traj.len() * ens.size()) as f64)
}

/// Mean over steps of the largest pairwise member disagreement.
pub fn q_pv(traj: &Trajectory, z: usize, ens: &EnsembleModel) -> Result<f64> {
    if ens.size() < 2 {
        return Err(Error::Config("prediction variance needs at least two ensemble members".into()));
    }
    check_ens(traj, z, ens)?;
    let mut total = 0.0;
    for st in &traj.steps {
        let mut worst: f64 = 0.0;
        for i in 0..ens.size() {
            let (ri, pi) = ens.predict(i, st.state, st.action, z);
            for j in i + 1..ens.size() {
                let (rj, pj) = ens.predict(j, st.state, st.action, z);
                worst = worst.max((ri - rj).abs() + l2(pi, pj));
            }
        }
        total += worst;
    }
    Ok(total / traj.len() as f64)
}

/// Negative mean return over a group of episodes.
pub fn q_re(episodes: &[&Trajectory]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Empty("q_re needs at least one episode".into()));
    }
    let sum: f64 = episodes.iter().map(|t| t.total_return()).sum();
    Ok(-sum / episodes.len() as f64)
}

fn score_one(q: Quantifier, traj: &Trajectory, z: usize, ens: &EnsembleModel) -> Result<f64> {
    match q {
        Quantifier::Pe => q_pe(traj, z, ens),
        Quantifier::Pv => q_pv(traj, z, ens),
        Quantifier::Re => q_re(&[traj]),
    }
}

/// 1-based rank `ceil(n * k / 100)` clamped into `[1, n]`.
pub fn quantile_rank(n: usize, k_percent: f64) -> usize {
    let x = n as f64 * k_percent / 100.0;
    // absorb representation error such as 5 * 20 / 100 landing above 1.0
    let r = (x - 1e-9).ceil();
    (r.max(1.0) as usize).min(n)
}

/// Nearest-rank lower quantile of `scores`.
pub fn lower_quantile(scores: &[f64], k_percent: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("no scores to take a quantile of".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_rank(scores.len(), k_percent) - 1])
}

/// Hypotheses for `groups` prior draws: a uniform draw without replacement when
/// there are enough hypotheses, otherwise independent uniform draws.
fn prior_hypotheses<R: Rng + ?Sized>(num_hyp: usize, groups: usize, rng: &mut R) -> Vec<usize> {
    if num_hyp >= groups {
        sample_without_replacement(rng, num_hyp, groups).into_vec()
    } else {
        (0..groups).map(|_| rng.gen_range(0..num_hyp)).collect()
    }
}

/// Belief and threshold carried from the reference stage into the iterative stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceState {
    pub threshold: f64,
    pub records: Vec<EpisodeRecord>,
    pub belief: Belief,
}

fn check_inputs(meta: &MetaPolicyTS, hyp: &HypothesisSet, ens: &EnsembleModel) -> Result<()> {
    if meta.len() != hyp.len() || ens.num_hypotheses() != hyp.len() {
        return Err(Error::Dimension(format!(
            "meta-policy ({}), hypothesis set ({}) and ensemble ({}) disagree",
            meta.len(),
            hyp.len(),
            ens.num_hypotheses()
        )));
    }
    Ok(())
}

/// Applies an accepted record to the belief; demotes it if the posterior
/// becomes infeasible.
fn absorb(belief: &mut Belief, hyp: &HypothesisSet, rec: &mut EpisodeRecord, index: usize) -> Result<()> {
    match update_with_trajectory(belief, hyp, &rec.trajectory)? {
        Posterior::Updated(b) => *belief = b,
        Posterior::Infeasible => {
            log::warn!(
                "episode {index} (hypothesis {}, score {}) passed the threshold but contradicts every hypothesis; demoted",
                rec.hypothesis,
                rec.score
            );
            rec.accepted = false;
            rec.demoted = true;
        }
    }
    Ok(())
}

pub fn reference_stage<R: Rng + ?Sized>(
    test_task: &TaskSpec,
    meta: &MetaPolicyTS,
    hyp: &HypothesisSet,
    ens: &EnsembleModel,
    cfg: &AdaptationConfig,
    rng: &mut R,
) -> Result<ReferenceState> {
    cfg.validate()?;
    check_inputs(meta, hyp, ens)?;
    let hyp = hyp.with_mode(Mode::Transformed);
    let groups = cfg.n_r.div_ceil(cfg.n_e);
    let zs = prior_hypotheses(hyp.len(), groups, rng);
    let mut records = Vec::with_capacity(cfg.n_r);
    for (g, &z) in zs.iter().enumerate() {
        let size = cfg.n_e.min(cfg.n_r - g * cfg.n_e);
        let mut group = Vec::with_capacity(size);
        for _ in 0..size {
            group.push(sample_episode(test_task, meta.policy(z), rng)?);
        }
        let re_score = if cfg.quantifier == Quantifier::Re {
            Some(q_re(&group.iter().collect::<Vec<_>>())?)
        } else {
            None
        };
        for traj in group {
            let score = match re_score {
                Some(s) => s,
                None => score_one(cfg.quantifier, &traj, z, ens)?,
            };
            records.push(EpisodeRecord {
                trajectory: traj,
                hypothesis: z,
                score,
                accepted: false,
                demoted: false,
                stage: Stage::Reference,
            });
        }
    }
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let threshold = lower_quantile(&scores, cfg.k_percent)?;
    let mut belief = Belief::uniform(hyp.len());
    for (i, rec) in records.iter_mut().enumerate() {
        if rec.score <= threshold {
            rec.accepted = true;
            absorb(&mut belief, &hyp, rec, i)?;
        }
    }
    Ok(ReferenceState { threshold, records, belief })
}

fn mean_last(records: &[EpisodeRecord], n: usize) -> f64 {
    let tail = &records[records.len() - n..];
    tail.iter().map(|r| r.trajectory.total_return()).sum::<f64>() / n as f64
}

fn estimate(reference: &[EpisodeRecord], iterative: &[EpisodeRecord]) -> f64 {
    if iterative.is_empty() {
        mean_last(reference, reference.len().min(3))
    } else {
        mean_last(iterative, iterative.len().min(3))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn iterative_stage<R: Rng + ?Sized>(
    state: ReferenceState,
    test_task: &TaskSpec,
    meta: &MetaPolicyTS,
    hyp: &HypothesisSet,
    ens: &EnsembleModel,
    cfg: &AdaptationConfig,
    rng: &mut R,
) -> Result<AdaptationResult> {
    check_inputs(meta, hyp, ens)?;
    let hyp = hyp.with_mode(Mode::Transformed);
    let ReferenceState { threshold, records, mut belief } = state;
    let offset = records.len();
    let mut iterative = Vec::with_capacity(cfg.n_i);
    for j in 0..cfg.n_i {
        let z = sample_index(belief.weights(), rng).expect("belief has mass");
        let traj = sample_episode(test_task, meta.policy(z), rng)?;
        let score = score_one(cfg.quantifier, &traj, z, ens)?;
        let mut rec = EpisodeRecord {
            trajectory: traj,
            hypothesis: z,
            score,
            accepted: score <= threshold,
            demoted: false,
            stage: Stage::Iterative,
        };
        if rec.accepted {
            absorb(&mut belief, &hyp, &mut rec, offset + j)?;
        }
        iterative.push(rec);
    }
    let final_return_estimate = estimate(&records, &iterative);
    let mut log = records;
    log.extend(iterative);
    let context = log.iter().filter(|r| r.accepted).cloned().collect();
    Ok(AdaptationResult {
        threshold,
        context,
        final_belief: belief,
        log,
        final_return_estimate,
        belief_infeasible: false,
    })
}

/// Both stages with a random source seeded from `cfg.seed`.
pub fn run_idaq(
    test_task: &TaskSpec,
    meta: &MetaPolicyTS,
    hyp: &HypothesisSet,
    ens: &EnsembleModel,
    cfg: &AdaptationConfig,
) -> Result<AdaptationResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let state = reference_stage(test_task, meta, hyp, ens, cfg, &mut rng)?;
    iterative_stage(state, test_task, meta, hyp, ens, cfg, &mut rng)
}

/// Same episode schedule as [`run_idaq`] without filtering: every episode
/// updates a plain-mode posterior. After the first infeasible update the
/// posterior stays undefined and the agent falls back to the uniform prior.
pub fn baseline_adapt_all<R: Rng + ?Sized>(
    test_task: &TaskSpec,
    meta: &MetaPolicyTS,
    hyp: &HypothesisSet,
    budget: &AdaptationBudget,
    rng: &mut R,
) -> Result<AdaptationResult> {
    if meta.len() != hyp.len() {
        return Err(Error::Dimension("meta-policy and hypothesis set disagree".into()));
    }
    let hyp = hyp.with_mode(Mode::Plain);
    let n = budget.episodes_total;
    let n_r = n - n / 2;
    let prior = Belief::uniform(hyp.len());
    let mut belief = Some(prior.clone());
    let zs = prior_hypotheses(hyp.len(), n_r, rng);
    let mut log = Vec::with_capacity(n);
    for e in 0..n {
        let (z, stage) = if e < n_r {
            (zs[e], Stage::Reference)
        } else {
            let b = belief.as_ref().unwrap_or(&prior);
            (sample_index(b.weights(), rng).expect("belief has mass"), Stage::Iterative)
        };
        let traj = sample_episode(test_task, meta.policy(z), rng)?;
        if let Some(b) = &belief {
            belief = update_with_trajectory(b, &hyp, &traj)?.belief();
        }
        let score = q_re(&[&traj])?;
        log.push(EpisodeRecord { trajectory: traj, hypothesis: z, score, accepted: true, demoted: false, stage });
    }
    Ok(finish_unfiltered(log, belief, prior))
}

fn finish_unfiltered(log: Vec<EpisodeRecord>, belief: Option<Belief>, prior: Belief) -> AdaptationResult {
    let (reference, iterative): (Vec<_>, Vec<_>) = log.iter().cloned().partition(|r| r.stage == Stage::Reference);
    let final_return_estimate = if log.is_empty() { 0.0 } else { estimate(&reference, &iterative) };
    AdaptationResult {
        threshold: f64::INFINITY,
        context: log.clone(),
        belief_infeasible: belief.is_none(),
        final_belief: belief.unwrap_or(prior),
        log,
        final_return_estimate,
    }
}

/// Infers the task from one expert trajectory of the test task (transformed
/// posterior), then runs Thompson sampling from that fixed belief.
pub fn expert_context_oracle<R: Rng + ?Sized>(
    test_task: &TaskSpec,
    expert: &StationaryPolicy,
    meta: &MetaPolicyTS,
    hyp: &HypothesisSet,
    budget: &AdaptationBudget,
    rng: &mut R,
) -> Result<AdaptationResult> {
    if meta.len() != hyp.len() {
        return Err(Error::Dimension("meta-policy and hypothesis set disagree".into()));
    }
    let hyp = hyp.with_mode(Mode::Transformed);
    let prior = Belief::uniform(hyp.len());
    let context = sample_episode(test_task, expert, rng)?;
    let belief = update_with_trajectory(&prior, &hyp, &context)?.belief();
    let b = belief.clone().unwrap_or_else(|| prior.clone());
    let mut log = Vec::with_capacity(budget.episodes_total);
    for _ in 0..budget.episodes_total {
        let z = sample_index(b.weights(), rng).expect("belief has mass");
        let traj = sample_episode(test_task, meta.policy(z), rng)?;
        let score = q_re(&[&traj])?;
        log.push(EpisodeRecord {
            trajectory: traj,
            hypothesis: z,
            score,
            accepted: true,
            demoted: false,
            stage: Stage::Iterative,
        });
    }
    Ok(finish_unfiltered(log, belief, prior))
}
