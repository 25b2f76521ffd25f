//! Offline multi-task data: collection under task-dependent behavior
//! policies, dataset-induced MDPs, batch constraints and shift measurement.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use crate::belief::{HypothesisSet, Mode};
use crate::error::{Error, Result};
use crate::mdp::{check_distribution, exact_policy_value, sample_episode, StationaryPolicy, Step, TaskSpec, Trajectory, ARITHMETIC_TOL};

/// One behavior policy per task.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorMap {
    policies: Vec<StationaryPolicy>,
}

impl BehaviorMap {
    pub fn new(policies: Vec<StationaryPolicy>) -> Result<Self> {
        let first = policies
            .first()
            .ok_or_else(|| Error::Empty("behavior map has no policies".into()))?;
        let (ns, na) = (first.num_states(), first.num_actions());
        if policies.iter().any(|p| p.num_states() != ns || p.num_actions() != na) {
            return Err(Error::Dimension("behavior policies disagree on dimensions".into()));
        }
        Ok(Self { policies })
    }

    pub fn policy(&self, task: usize) -> &StationaryPolicy {
        &self.policies[task]
    }

    pub fn policies(&self) -> &[StationaryPolicy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// Per-task sub-datasets; their union is the full offline dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    pub sub_datasets: Vec<Vec<Trajectory>>,
    pub trajectories_per_task: usize,
}

impl MultiTaskDataset {
    pub fn num_tasks(&self) -> usize {
        self.sub_datasets.len()
    }

    pub fn sub_dataset(&self, task: usize) -> &[Trajectory] {
        &self.sub_datasets[task]
    }

    pub fn all_trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.sub_datasets.iter().flatten()
    }

    /// Line-per-step CSV with header `task_id,traj_id,t,s,a,r,s_next`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task_id", "traj_id", "t", "s", "a", "r", "s_next"])?;
        for (task, trajs) in self.sub_datasets.iter().enumerate() {
            for (ti, traj) in trajs.iter().enumerate() {
                for (t, st) in traj.steps.iter().enumerate() {
                    w.write_record([
                        task.to_string(),
                        ti.to_string(),
                        t.to_string(),
                        st.state.to_string(),
                        st.action.to_string(),
                        format!("{}", st.reward),
                        st.next_state.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut grouped: BTreeMap<usize, BTreeMap<usize, Vec<(usize, Step)>>> = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Parse { line, msg: format!("missing column {k}") })
            };
            let int = |k: usize| -> Result<usize> {
                field(k)?.trim().parse().map_err(|_| Error::Parse { line, msg: format!("column {k} is not an integer") })
            };
            let reward: f64 = field(5)?
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line, msg: "reward is not a number".into() })?;
            let step = Step { state: int(3)?, action: int(4)?, reward, next_state: int(6)? };
            grouped.entry(int(0)?).or_default().entry(int(1)?).or_default().push((int(2)?, step));
        }
        let num_tasks = grouped.keys().next_back().map(|k| k + 1).unwrap_or(0);
        let mut sub_datasets = vec![Vec::new(); num_tasks];
        for (task, trajs) in grouped {
            for (_, mut steps) in trajs {
                steps.sort_by_key(|(t, _)| *t);
                sub_datasets[task].push(Trajectory::new(steps.into_iter().map(|(_, s)| s).collect()));
            }
        }
        let trajectories_per_task = sub_datasets.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self { sub_datasets, trajectories_per_task })
    }
}

/// Runs `mu_i` in `kappa_i` for `k_per_task` episodes per task.
pub fn collect_dataset<R: Rng + ?Sized>(
    tasks: &[TaskSpec],
    behavior: &BehaviorMap,
    k_per_task: usize,
    rng: &mut R,
) -> Result<MultiTaskDataset> {
    if k_per_task == 0 {
        return Err(Error::Config("k_per_task must be >= 1".into()));
    }
    if behavior.len() != tasks.len() {
        return Err(Error::Config(format!(
            "{} tasks but {} behavior policies",
            tasks.len(),
            behavior.len()
        )));
    }
    let mut sub_datasets = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let trajs = (0..k_per_task)
            .map(|_| sample_episode(task, behavior.policy(i), rng))
            .collect::<Result<Vec<_>>>()?;
        sub_datasets.push(trajs);
    }
    Ok(MultiTaskDataset { sub_datasets, trajectories_per_task: k_per_task })
}

/// Empirical MDP `P(s'|s,a) = N(s,a,s')/N(s,a)`, `R(r|s,a) = N(s,a,r)/N(s,a)`.
/// Pairs with `N(s,a) = 0` keep all-zero rows and are unmasked.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedMdp {
    pub spec: TaskSpec,
    support_mask: Vec<bool>,
    /// States that occur as `s_t` somewhere in the data.
    visited: Vec<bool>,
    counts: Vec<usize>,
}

impl InducedMdp {
    pub fn supported(&self, s: usize, a: usize) -> bool {
        self.support_mask[s * self.spec.num_actions() + a]
    }

    pub fn count(&self, s: usize, a: usize) -> usize {
        self.counts[s * self.spec.num_actions() + a]
    }

    pub fn state_in_dataset(&self, s: usize) -> bool {
        self.visited[s]
    }

    pub fn is_empty(&self) -> bool {
        !self.support_mask.iter().any(|&m| m)
    }

    /// Supported actions at `s`, ascending.
    pub fn supported_actions(&self, s: usize) -> Vec<usize> {
        (0..self.spec.num_actions()).filter(|&a| self.supported(s, a)).collect()
    }
}

pub fn induced_mdp(trajs: &[Trajectory], template: &TaskSpec) -> Result<InducedMdp> {
    let (ns, na, nr) = (template.num_states(), template.num_actions(), template.num_rewards());
    let mut n_sa = vec![0usize; ns * na];
    let mut n_sas = vec![0usize; ns * na * ns];
    let mut n_sar = vec![0usize; ns * na * nr];
    let mut visited = vec![false; ns];
    for (ti, traj) in trajs.iter().enumerate() {
        for st in &traj.steps {
            if st.state >= ns || st.next_state >= ns || st.action >= na {
                return Err(Error::Dimension(format!("trajectory {ti} has indices outside the template")));
            }
            let ri = template
                .reward_index(st.reward)
                .ok_or_else(|| Error::Dimension(format!("reward {} not in support", st.reward)))?;
            let k = st.state * na + st.action;
            n_sa[k] += 1;
            n_sas[k * ns + st.next_state] += 1;
            n_sar[k * nr + ri] += 1;
            visited[st.state] = true;
        }
    }
    let mut trans = vec![vec![vec![0.0; ns]; na]; ns];
    let mut rew = vec![vec![vec![0.0; nr]; na]; ns];
    for s in 0..ns {
        for a in 0..na {
            let k = s * na + a;
            let n = n_sa[k];
            if n == 0 {
                continue;
            }
            for sn in 0..ns {
                trans[s][a][sn] = n_sas[k * ns + sn] as f64 / n as f64;
            }
            for r in 0..nr {
                rew[s][a][r] = n_sar[k * nr + r] as f64 / n as f64;
            }
        }
    }
    let spec = TaskSpec::new_partial(
        template.reward_support().to_vec(),
        template.horizon(),
        trans,
        rew,
        template.initial_state(),
    )?;
    Ok(InducedMdp {
        spec,
        support_mask: n_sa.iter().map(|&n| n > 0).collect(),
        visited,
        counts: n_sa,
    })
}

/// First violation of the batch constraint, if any.
fn batch_violation(policy: &StationaryPolicy, induced: &InducedMdp) -> Option<(usize, usize, f64)> {
    for s in 0..induced.spec.num_states() {
        if !induced.state_in_dataset(s) {
            continue;
        }
        for a in 0..induced.spec.num_actions() {
            let p = policy.prob(s, a);
            if p > 0.0 && !induced.supported(s, a) {
                return Some((s, a, p));
            }
        }
    }
    None
}

/// `pi(a|s) = 0` for every unsupported pair at every state seen in the data.
pub fn is_batch_constrained(policy: &StationaryPolicy, induced: &InducedMdp) -> bool {
    policy.num_states() == induced.spec.num_states()
        && policy.num_actions() == induced.spec.num_actions()
        && batch_violation(policy, induced).is_none()
}

/// Exact value of `policy` in the induced MDP. Refuses policies that would
/// extrapolate off the data.
pub fn offline_policy_evaluation(induced: &InducedMdp, policy: &StationaryPolicy) -> Result<f64> {
    if induced.is_empty() {
        return Err(Error::Empty("induced MDP has no supported pairs".into()));
    }
    if let Some((state, action, mass)) = batch_violation(policy, induced) {
        return Err(Error::NotBatchConstrained { state, action, mass });
    }
    exact_policy_value(&induced.spec, policy)
}

/// Total-variation distance `0.5 * sum |p - q|` between two distributions.
pub fn shift_tv(offline: &[f64], online: &[f64]) -> Result<f64> {
    if offline.len() != online.len() {
        return Err(Error::Dimension(format!(
            "distributions have lengths {} and {}",
            offline.len(),
            online.len()
        )));
    }
    check_distribution(offline, ARITHMETIC_TOL, || "offline distribution".into())?;
    check_distribution(online, ARITHMETIC_TOL, || "online distribution".into())?;
    Ok(0.5 * offline.iter().zip(online).map(|(p, q)| (p - q).abs()).sum::<f64>())
}

/// Empirical action frequencies per state; uniform on states the data never visits.
pub fn empirical_behavior(trajs: &[Trajectory], num_states: usize, num_actions: usize) -> Result<StationaryPolicy> {
    let mut counts = vec![vec![0usize; num_actions]; num_states];
    for traj in trajs {
        for st in &traj.steps {
            if st.state >= num_states || st.action >= num_actions {
                return Err(Error::Dimension("trajectory indices outside policy shape".into()));
            }
            counts[st.state][st.action] += 1;
        }
    }
    let rows = counts
        .into_iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            if n == 0 {
                vec![1.0 / num_actions as f64; num_actions]
            } else {
                let mut p: Vec<f64> = row.iter().map(|&c| c as f64 / n as f64).collect();
                // keep the row exactly normalized
                let last = p.iter().rposition(|&x| x > 0.0).expect("nonzero row");
                let head: f64 = p.iter().enumerate().filter(|(i, _)| *i != last).map(|(_, x)| x).sum();
                p[last] = 1.0 - head;
                p
            }
        })
        .collect();
    StationaryPolicy::new(rows)
}

/// Hypothesis set built purely from data: hypothesis `i` is the MDP induced by
/// sub-dataset `i` paired with the empirical behavior of that sub-dataset.
pub fn dataset_hypotheses(dataset: &MultiTaskDataset, template: &TaskSpec, mode: Mode) -> Result<HypothesisSet> {
    let mut entries = Vec::with_capacity(dataset.num_tasks());
    for i in 0..dataset.num_tasks() {
        let sub = dataset.sub_dataset(i);
        if sub.is_empty() {
            return Err(Error::EmptySubDataset(i));
        }
        let induced = induced_mdp(sub, template)?;
        let mu = empirical_behavior(sub, template.num_states(), template.num_actions())?;
        entries.push((induced.spec, mu));
    }
    HypothesisSet::new(entries, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_three_path, build_v_arm, ThreePathLayout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One state, one action, H = 1, reward 1 with probability `p`.
    pub(crate) fn bernoulli_task(p: f64) -> TaskSpec {
        TaskSpec::new(vec![0.0, 1.0], 1, vec![vec![vec![1.0]]], vec![vec![vec![1.0 - p, p]]], 0).unwrap()
    }

    #[test]
    fn expert_arm_data_is_all_ones() {
        let env = build_v_arm(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = collect_dataset(&env.tasks, &env.behavior, 45, &mut rng).unwrap();
        assert!(d.all_trajectories().all(|t| t.steps.iter().all(|s| s.reward == 1.0)));
        assert_eq!(d.all_trajectories().count(), 225);
        let d1 = collect_dataset(&env.tasks, &env.behavior, 1, &mut rng).unwrap();
        assert!(d1.sub_datasets.iter().all(|s| s.len() == 1));
        assert!(collect_dataset(&env.tasks, &env.behavior, 0, &mut rng).is_err());
    }

    #[test]
    fn three_path_sub_datasets_stay_on_their_path() {
        let env = build_three_path(4, 0.0).unwrap();
        let lay = ThreePathLayout { length: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = collect_dataset(&env.tasks, &env.behavior, 45, &mut rng).unwrap();
        for i in 0..3 {
            for t in d.sub_dataset(i) {
                for st in &t.steps {
                    match lay.coords(st.state) {
                        None => {}
                        Some((p, c)) => assert!(p == i || (c == 0 && p == 1), "task {i} visited ({p}, {c})"),
                    }
                }
            }
        }
    }

    #[test]
    fn induced_arm_model() {
        let env = build_v_arm(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = collect_dataset(&env.tasks, &env.behavior, 10, &mut rng).unwrap();
        let m = induced_mdp(d.sub_dataset(0), &env.tasks[0]).unwrap();
        assert_eq!(m.spec.reward_row(0, 0), &[0.0, 1.0]);
        assert!(m.supported(0, 0));
        assert!((1..5).all(|a| !m.supported(0, a)));
        assert!(m.spec.reward_row(0, 3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn induced_frequencies() {
        let task = bernoulli_task(0.5);
        let trajs = vec![
            Trajectory::new(vec![Step { state: 0, action: 0, reward: 1.0, next_state: 0 }]),
            Trajectory::new(vec![Step { state: 0, action: 0, reward: 0.0, next_state: 0 }]),
        ];
        let m = induced_mdp(&trajs, &task).unwrap();
        assert_eq!(m.spec.reward_row(0, 0)[1], 0.5);
        let empty = induced_mdp(&[], &task).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn bernoulli_estimate_within_hoeffding_band() {
        let task = bernoulli_task(0.3);
        let beh = BehaviorMap::new(vec![StationaryPolicy::uniform(1, 1).unwrap()]).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = collect_dataset(&[task.clone()], &beh, 1000, &mut rng).unwrap();
            let m = induced_mdp(d.sub_dataset(0), &task).unwrap();
            assert!((m.spec.reward_row(0, 0)[1] - 0.3).abs() < 0.05);
            let v = offline_policy_evaluation(&m, beh.policy(0)).unwrap();
            assert!((v - 0.3 * task.horizon() as f64).abs() < 0.05);
        }
    }

    #[test]
    fn induced_rows_converge_with_more_data() {
        let env = build_three_path(3, 0.2).unwrap();
        let beh = crate::envs::perturb_behavior(&env.behavior, 0.5).unwrap();
        let beh = BehaviorMap::new(vec![beh.policy(0).clone()]).unwrap();
        let task = &env.tasks[0];
        let s0 = task.initial_state();
        // worst row error over the start state's actions, which every episode visits
        let max_err = |k: usize, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = collect_dataset(std::slice::from_ref(task), &beh, k, &mut rng).unwrap();
            let m = induced_mdp(d.sub_dataset(0), task).unwrap();
            let mut worst: f64 = 0.0;
            for a in 0..task.num_actions() {
                if m.supported(s0, a) {
                    for (x, y) in m.spec.transition_row(s0, a).iter().zip(task.transition_row(s0, a)) {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
            worst
        };
        let med = |k: usize| {
            let mut v: Vec<f64> = (0..15).map(|seed| max_err(k, seed)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[7]
        };
        let (e10, e100, e1000) = (med(10), med(100), med(1000));
        assert!(e10 > e100 && e100 > e1000, "{e10} {e100} {e1000}");
    }

    #[test]
    fn batch_constraint_checks() {
        let env = build_v_arm(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = collect_dataset(&env.tasks, &env.behavior, 5, &mut rng).unwrap();
        let m = induced_mdp(d.sub_dataset(0), &env.tasks[0]).unwrap();
        assert!(is_batch_constrained(env.behavior.policy(0), &m));
        assert!(!is_batch_constrained(env.behavior.policy(1), &m));
        let mixed = StationaryPolicy::new(vec![vec![0.5, 0.5, 0.0, 0.0, 0.0]]).unwrap();
        assert!(!is_batch_constrained(&mixed, &m));
        assert!(matches!(
            offline_policy_evaluation(&m, &mixed),
            Err(Error::NotBatchConstrained { state: 0, action: 1, .. })
        ));
        let empty = induced_mdp(&[], &env.tasks[0]).unwrap();
        assert!(offline_policy_evaluation(&empty, env.behavior.policy(0)).is_err());
    }

    #[test]
    fn arm_offline_values_are_one_per_episode() {
        let env = build_v_arm(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = collect_dataset(&env.tasks, &env.behavior, 45, &mut rng).unwrap();
        for i in 0..5 {
            let m = induced_mdp(d.sub_dataset(i), &env.tasks[i]).unwrap();
            let v = offline_policy_evaluation(&m, env.behavior.policy(i)).unwrap();
            assert_eq!(v, 1.0);
            assert_eq!(v * env.budget.episodes_total as f64, 5.0);
        }
    }

    #[test]
    fn tv_examples() {
        let v = 5.0;
        assert!((shift_tv(&[0.0, 1.0], &[0.8, 0.2]).unwrap() - (1.0 - 1.0 / v)).abs() < 1e-12);
        assert_eq!(shift_tv(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(shift_tv(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(shift_tv(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(shift_tv(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let env = build_three_path(3, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut d = collect_dataset(&env.tasks, &env.behavior, 4, &mut rng).unwrap();
        // awkward floats survive too
        d.sub_datasets[0][0].steps[0].reward = 0.1 + 0.2;
        let text = d.to_csv_string().unwrap();
        assert!(text.starts_with("task_id,traj_id,t,s,a,r,s_next\n"));
        let back = MultiTaskDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.sub_datasets[0][0].steps[0].reward.to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn empirical_behavior_matches_deterministic_expert_on_data() {
        let env = build_three_path(4, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = collect_dataset(&env.tasks, &env.behavior, 30, &mut rng).unwrap();
        let mu = empirical_behavior(d.sub_dataset(2), 16, 4).unwrap();
        let m = induced_mdp(d.sub_dataset(2), &env.tasks[2]).unwrap();
        for s in 0..16 {
            if m.state_in_dataset(s) {
                assert_eq!(mu.row(s), env.behavior.policy(2).row(s));
            }
        }
    }
}
