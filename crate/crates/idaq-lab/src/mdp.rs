//! Finite-horizon tabular MDPs: task specs, stationary policies, episode
//! sampling, backward-induction evaluation and visitation distributions.
//!
//! States carry no timestep; the horizon index is threaded explicitly through
//! every evaluation loop.

use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance for normalization checks on freshly constructed tables.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance for normalization checks on computed quantities.
pub const ARITHMETIC_TOL: f64 = 1e-9;

pub(crate) fn check_distribution(p: &[f64], tol: f64, context: impl Fn() -> String) -> Result<()> {
    let mut sum = 0.0;
    for &x in p {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::NegativeProbability { context: context(), value: x });
        }
        sum += x;
    }
    if (sum - 1.0).abs() > tol {
        return Err(Error::NotNormalized { context: context(), sum });
    }
    Ok(())
}

/// Draws an index from a (possibly unnormalized) weight vector.
///
/// Returns `None` when the total weight is zero.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}

/// A finite-horizon MDP with a finite reward support.
///
/// Tables are dense and row-major: `transition[(s * A + a) * S + s']` and
/// `reward[(s * A + a) * |R| + r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    num_states: usize,
    num_actions: usize,
    reward_support: Vec<f64>,
    horizon: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial_state: usize,
}

impl TaskSpec {
    /// Builds a task from nested rows, `transition[s][a]` and `reward[s][a]`.
    pub fn new(
        reward_support: Vec<f64>,
        horizon: usize,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
        initial_state: usize,
    ) -> Result<Self> {
        let spec = Self::assemble(reward_support, horizon, transition, reward, initial_state)?;
        spec.validate(false)?;
        Ok(spec)
    }

    /// Like [`TaskSpec::new`] but rows may also be entirely zero, which marks
    /// an (s, a) pair the model knows nothing about. Used for dataset-induced
    /// models.
    pub fn new_partial(
        reward_support: Vec<f64>,
        horizon: usize,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
        initial_state: usize,
    ) -> Result<Self> {
        let spec = Self::assemble(reward_support, horizon, transition, reward, initial_state)?;
        spec.validate(true)?;
        Ok(spec)
    }

    fn assemble(
        reward_support: Vec<f64>,
        horizon: usize,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
        initial_state: usize,
    ) -> Result<Self> {
        let num_states = transition.len();
        if num_states == 0 {
            return Err(Error::Dimension("task needs at least one state".into()));
        }
        let num_actions = transition[0].len();
        if num_actions == 0 {
            return Err(Error::Dimension("task needs at least one action".into()));
        }
        if reward_support.is_empty() {
            return Err(Error::Dimension("empty reward support".into()));
        }
        if horizon == 0 {
            return Err(Error::Dimension("horizon must be >= 1".into()));
        }
        if initial_state >= num_states {
            return Err(Error::Dimension(format!(
                "initial state {initial_state} out of range for {num_states} states"
            )));
        }
        if reward.len() != num_states {
            return Err(Error::Dimension("reward table state count differs from transition table".into()));
        }
        let nr = reward_support.len();
        let mut t = Vec::with_capacity(num_states * num_actions * num_states);
        let mut r = Vec::with_capacity(num_states * num_actions * nr);
        for s in 0..num_states {
            if transition[s].len() != num_actions || reward[s].len() != num_actions {
                return Err(Error::Dimension(format!("state {s} has a ragged action list")));
            }
            for a in 0..num_actions {
                if transition[s][a].len() != num_states {
                    return Err(Error::Dimension(format!("transition row ({s}, {a}) has wrong length")));
                }
                if reward[s][a].len() != nr {
                    return Err(Error::Dimension(format!("reward row ({s}, {a}) has wrong length")));
                }
                t.extend_from_slice(&transition[s][a]);
                r.extend_from_slice(&reward[s][a]);
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            reward_support,
            horizon,
            transition: t,
            reward: r,
            initial_state,
        })
    }

    fn validate(&self, allow_zero_rows: bool) -> Result<()> {
        for &v in &self.reward_support {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::RewardOutOfRange(v));
            }
        }
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let tr = self.transition_row(s, a);
                let rr = self.reward_row(s, a);
                let zero_t = tr.iter().all(|&x| x == 0.0);
                let zero_r = rr.iter().all(|&x| x == 0.0);
                if allow_zero_rows && zero_t && zero_r {
                    continue;
                }
                check_distribution(tr, CONSTRUCTION_TOL, || format!("transition row ({s}, {a})"))?;
                check_distribution(rr, CONSTRUCTION_TOL, || format!("reward row ({s}, {a})"))?;
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_rewards(&self) -> usize {
        self.reward_support.len()
    }

    pub fn reward_support(&self) -> &[f64] {
        &self.reward_support
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        let base = (s * self.num_actions + a) * n;
        &self.transition[base..base + n]
    }

    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.reward_support.len();
        let base = (s * self.num_actions + a) * n;
        &self.reward[base..base + n]
    }

    /// True when the (s, a) rows carry probability mass.
    pub fn row_supported(&self, s: usize, a: usize) -> bool {
        self.transition_row(s, a).iter().any(|&x| x > 0.0)
    }

    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        self.reward_row(s, a)
            .iter()
            .zip(&self.reward_support)
            .map(|(p, v)| p * v)
            .sum()
    }

    /// Index of a reward value in the support (exact match).
    pub fn reward_index(&self, value: f64) -> Option<usize> {
        self.reward_support.iter().position(|&v| v == value)
    }

    /// Same dimensions, reward support and horizon.
    pub fn same_shape(&self, other: &TaskSpec) -> bool {
        self.num_states == other.num_states
            && self.num_actions == other.num_actions
            && self.horizon == other.horizon
            && self.reward_support == other.reward_support
    }

    pub fn transition_rows(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.transition_row(s, a).to_vec()).collect())
            .collect()
    }

    pub fn reward_rows(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.reward_row(s, a).to_vec()).collect())
            .collect()
    }

    fn check_policy(&self, policy: &StationaryPolicy) -> Result<()> {
        if policy.num_states() != self.num_states || policy.num_actions() != self.num_actions {
            return Err(Error::Config(format!(
                "policy is {}x{} but task is {}x{}",
                policy.num_states(),
                policy.num_actions(),
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    /// Plain-text table format.
    ///
    /// ```text
    /// task v1
    /// states <S>
    /// actions <A>
    /// horizon <H>
    /// initial <s0>
    /// rewards <v_0> ... <v_{R-1}>
    /// T <s> <a> <p_0> ... <p_{S-1}>      (one line per (s, a))
    /// R <s> <a> <q_0> ... <q_{R-1}>      (one line per (s, a))
    /// ```
    ///
    /// Numbers use the shortest representation that parses back to the same
    /// `f64`, so a round trip is exact.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "task v1");
        let _ = writeln!(out, "states {}", self.num_states);
        let _ = writeln!(out, "actions {}", self.num_actions);
        let _ = writeln!(out, "horizon {}", self.horizon);
        let _ = writeln!(out, "initial {}", self.initial_state);
        let _ = writeln!(out, "rewards {}", join(&self.reward_support));
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let _ = writeln!(out, "T {s} {a} {}", join(self.transition_row(s, a)));
            }
        }
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let _ = writeln!(out, "R {s} {a} {}", join(self.reward_row(s, a)));
            }
        }
        out
    }

    /// Parses the format written by [`TaskSpec::to_text`]. Zero rows are
    /// accepted so induced models survive a round trip.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut support = None;
        let mut t_lines = Vec::new();
        let mut r_lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let perr = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            match key {
                "task" => {
                    if rest.first() != Some(&"v1") {
                        return Err(perr("unsupported task format version"));
                    }
                }
                "states" | "actions" | "horizon" | "initial" => {
                    let v: usize = rest
                        .first()
                        .and_then(|x| x.parse().ok())
                        .ok_or_else(|| perr("expected an integer"))?;
                    header.insert(key.to_string(), v);
                }
                "rewards" => support = Some(parse_floats(&rest, i + 1)?),
                "T" | "R" => {
                    if rest.len() < 2 {
                        return Err(perr("row needs state and action"));
                    }
                    let s: usize = rest[0].parse().map_err(|_| perr("bad state index"))?;
                    let a: usize = rest[1].parse().map_err(|_| perr("bad action index"))?;
                    let vals = parse_floats(&rest[2..], i + 1)?;
                    if key == "T" {
                        t_lines.push((s, a, vals, i + 1));
                    } else {
                        r_lines.push((s, a, vals, i + 1));
                    }
                }
                _ => return Err(perr("unknown record")),
            }
        }
        let get = |k: &str| {
            header
                .get(k)
                .copied()
                .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing header '{k}'") })
        };
        let (ns, na, h, s0) = (get("states")?, get("actions")?, get("horizon")?, get("initial")?);
        let support = support.ok_or_else(|| Error::Parse { line: 0, msg: "missing rewards".into() })?;
        let mut trans = vec![vec![Vec::new(); na]; ns];
        let mut rew = vec![vec![Vec::new(); na]; ns];
        for (s, a, v, line) in t_lines {
            if s >= ns || a >= na {
                return Err(Error::Parse { line, msg: "index out of range".into() });
            }
            trans[s][a] = v;
        }
        for (s, a, v, line) in r_lines {
            if s >= ns || a >= na {
                return Err(Error::Parse { line, msg: "index out of range".into() });
            }
            rew[s][a] = v;
        }
        Self::new_partial(support, h, trans, rew, s0)
    }
}

pub(crate) fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

pub(crate) fn parse_floats(items: &[&str], line: usize) -> Result<Vec<f64>> {
    items
        .iter()
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| Error::Parse { line, msg: format!("bad number '{x}'") })
        })
        .collect()
}

/// A Markov policy that ignores the timestep: `action_probs[s]` is a
/// distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl StationaryPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        if num_states == 0 {
            return Err(Error::Dimension("policy needs at least one state".into()));
        }
        let num_actions = rows[0].len();
        if num_actions == 0 {
            return Err(Error::Dimension("policy needs at least one action".into()));
        }
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for (s, row) in rows.iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::Dimension(format!("policy row {s} has wrong length")));
            }
            check_distribution(row, CONSTRUCTION_TOL, || format!("policy row {s}"))?;
            probs.extend_from_slice(row);
        }
        Ok(Self { num_states, num_actions, probs })
    }

    /// One fixed action per state.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let rows = actions
            .iter()
            .map(|&a| {
                if a >= num_actions {
                    return Err(Error::Dimension(format!("action {a} out of range")));
                }
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / num_actions as f64; num_actions]; num_states])
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|s| self.row(s).to_vec()).collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// Most likely action in `s`, lowest index on ties.
    pub fn mode_action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    /// Text form: `policy v1`, `states S`, `actions A`, then `P <s> <probs>`.
    pub fn to_text(&self) -> String {
        let mut out = format!("policy v1\nstates {}\nactions {}\n", self.num_states, self.num_actions);
        for s in 0..self.num_states {
            out.push_str(&format!("P {s} {}\n", join(self.row(s))));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let mut parts = line.split_whitespace();
            if parts.next() == Some("P") {
                let rest: Vec<&str> = parts.collect();
                let s: usize = rest
                    .first()
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| Error::Parse { line: i + 1, msg: "bad state index".into() })?;
                rows.push((s, parse_floats(&rest[1..], i + 1)?));
            }
        }
        rows.sort_by_key(|(s, _)| *s);
        Self::new(rows.into_iter().map(|(_, r)| r).collect())
    }
}

/// One transition `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted episode return.
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Rolls out one H-step episode.
pub fn sample_episode<R: Rng + ?Sized>(
    task: &TaskSpec,
    policy: &StationaryPolicy,
    rng: &mut R,
) -> Result<Trajectory> {
    task.check_policy(policy)?;
    let mut steps = Vec::with_capacity(task.horizon);
    let mut s = task.initial_state;
    for _ in 0..task.horizon {
        let a = sample_index(policy.row(s), rng).ok_or_else(|| Error::NotNormalized {
            context: format!("policy row {s}"),
            sum: 0.0,
        })?;
        let ri = sample_index(task.reward_row(s, a), rng).ok_or(Error::UnsupportedRow { state: s, action: a })?;
        let next = sample_index(task.transition_row(s, a), rng).ok_or(Error::UnsupportedRow { state: s, action: a })?;
        steps.push(Step { state: s, action: a, reward: task.reward_support[ri], next_state: next });
        s = next;
    }
    Ok(Trajectory { steps })
}

/// Probability of a trajectory under `(task, policy)`:
/// `prod_t pi(a_t|s_t) R(r_t|s_t,a_t) P(s_{t+1}|s_t,a_t)`, with the first
/// state required to be `s0`.
pub fn trajectory_probability(task: &TaskSpec, policy: &StationaryPolicy, traj: &Trajectory) -> f64 {
    let mut p = 1.0;
    let mut expected_state = task.initial_state;
    for st in &traj.steps {
        if st.state != expected_state {
            return 0.0;
        }
        let ri = match task.reward_index(st.reward) {
            Some(i) => i,
            None => return 0.0,
        };
        p *= policy.prob(st.state, st.action)
            * task.reward_row(st.state, st.action)[ri]
            * task.transition_row(st.state, st.action)[st.next_state];
        expected_state = st.next_state;
    }
    p
}

/// Per-timestep state values `V_h(s)` for `h = 0..=H` (row `H` is zero).
pub fn value_table(task: &TaskSpec, policy: &StationaryPolicy) -> Result<Vec<Vec<f64>>> {
    task.check_policy(policy)?;
    let (ns, na, h) = (task.num_states, task.num_actions, task.horizon);
    let mut v = vec![vec![0.0; ns]; h + 1];
    for t in (0..h).rev() {
        for s in 0..ns {
            let mut acc = 0.0;
            for a in 0..na {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                let cont: f64 = task
                    .transition_row(s, a)
                    .iter()
                    .zip(&v[t + 1])
                    .map(|(p, vn)| p * vn)
                    .sum();
                acc += pa * (task.mean_reward(s, a) + cont);
            }
            v[t][s] = acc;
        }
    }
    Ok(v)
}

/// `J(pi) = V_0(s0)` by backward induction.
pub fn exact_policy_value(task: &TaskSpec, policy: &StationaryPolicy) -> Result<f64> {
    Ok(value_table(task, policy)?[0][task.initial_state])
}

/// Normalized visitation distribution `rho(h, s, a, r)`.
///
/// `rho(0, s0) = 1/H`; mass is pushed forward through `pi` and `P`. Each
/// timestep slice therefore carries `1/H` (less if the model has unsupported
/// rows, which leak mass).
#[derive(Debug, Clone)]
pub struct Visitation {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub num_rewards: usize,
    state: Vec<f64>,
    state_action: Vec<f64>,
    state_action_reward: Vec<f64>,
}

impl Visitation {
    pub fn state(&self, h: usize, s: usize) -> f64 {
        self.state[h * self.num_states + s]
    }

    pub fn state_action(&self, h: usize, s: usize, a: usize) -> f64 {
        self.state_action[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn state_action_reward(&self, h: usize, s: usize, a: usize, r: usize) -> f64 {
        self.state_action_reward[((h * self.num_states + s) * self.num_actions + a) * self.num_rewards + r]
    }

    /// `rho(s) = sum_h rho(h, s)`.
    pub fn state_marginal(&self, s: usize) -> f64 {
        (0..self.horizon).map(|h| self.state(h, s)).sum()
    }

    /// `rho(s, a) = sum_h rho(h, s, a)`.
    pub fn state_action_marginal(&self, s: usize, a: usize) -> f64 {
        (0..self.horizon).map(|h| self.state_action(h, s, a)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.state.iter().sum()
    }
}

pub fn visitation_distribution(task: &TaskSpec, policy: &StationaryPolicy) -> Result<Visitation> {
    task.check_policy(policy)?;
    let (ns, na, nr, h) = (task.num_states, task.num_actions, task.num_rewards(), task.horizon);
    let mut state = vec![0.0; h * ns];
    let mut sa = vec![0.0; h * ns * na];
    let mut sar = vec![0.0; h * ns * na * nr];
    state[task.initial_state] = 1.0 / h as f64;
    for t in 0..h {
        for s in 0..ns {
            let m = state[t * ns + s];
            if m == 0.0 {
                continue;
            }
            for a in 0..na {
                let msa = m * policy.prob(s, a);
                if msa == 0.0 {
                    continue;
                }
                sa[(t * ns + s) * na + a] = msa;
                for (ri, &q) in task.reward_row(s, a).iter().enumerate() {
                    sar[((t * ns + s) * na + a) * nr + ri] = msa * q;
                }
                if t + 1 < h {
                    for (sn, &p) in task.transition_row(s, a).iter().enumerate() {
                        state[(t + 1) * ns + sn] += msa * p;
                    }
                }
            }
        }
    }
    Ok(Visitation {
        horizon: h,
        num_states: ns,
        num_actions: na,
        num_rewards: nr,
        state,
        state_action: sa,
        state_action_reward: sar,
    })
}

/// Every trajectory with positive probability under `(task, policy)`, with its
/// probability. Fails once more than `limit` trajectories would be produced.
pub fn enumerate_trajectories(
    task: &TaskSpec,
    policy: &StationaryPolicy,
    limit: usize,
) -> Result<Vec<(Trajectory, f64)>> {
    task.check_policy(policy)?;
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(task.horizon);
    enumerate_rec(task, policy, task.initial_state, 1.0, &mut prefix, &mut out, limit)?;
    Ok(out)
}

fn enumerate_rec(
    task: &TaskSpec,
    policy: &StationaryPolicy,
    s: usize,
    prob: f64,
    prefix: &mut Vec<Step>,
    out: &mut Vec<(Trajectory, f64)>,
    limit: usize,
) -> Result<()> {
    if prefix.len() == task.horizon {
        if out.len() >= limit {
            return Err(Error::TreeTooLarge { limit });
        }
        out.push((Trajectory { steps: prefix.clone() }, prob));
        return Ok(());
    }
    for a in 0..task.num_actions {
        let pa = policy.prob(s, a);
        if pa == 0.0 {
            continue;
        }
        if !task.row_supported(s, a) {
            return Err(Error::UnsupportedRow { state: s, action: a });
        }
        for (ri, &pr) in task.reward_row(s, a).iter().enumerate() {
            if pr == 0.0 {
                continue;
            }
            for (sn, &pn) in task.transition_row(s, a).iter().enumerate() {
                if pn == 0.0 {
                    continue;
                }
                prefix.push(Step { state: s, action: a, reward: task.reward_support[ri], next_state: sn });
                enumerate_rec(task, policy, sn, prob * pa * pr * pn, prefix, out, limit)?;
                prefix.pop();
            }
        }
    }
    Ok(())
}
