//! Environment builders with their expert behavior policies.
//!
//! * `v-arm`: one state, `v` arms, horizon 1; task `i` pays 1 only for arm `i`.
//! * `three-path`: a three-row hallway that forks into three corridors. In
//!   task `i` corridor `i` ends in a paying goal cell; the other corridors end
//!   in a stone that blocks the last cell.
//! * `point-grid`: a discretized point robot on a `g x g` grid with goals on a
//!   half circle around the start cell.

use std::collections::BTreeMap;
use std::fmt;

use crate::belief::AdaptationBudget;
use crate::error::{Error, Result};
use crate::mdp::{StationaryPolicy, TaskSpec};
use crate::offline::BehaviorMap;

/// Everything a family builder produces.
#[derive(Debug, Clone)]
pub struct EnvInstance {
    pub name: String,
    pub tasks: Vec<TaskSpec>,
    pub behavior: BehaviorMap,
    pub task_prior: Vec<f64>,
    pub budget: AdaptationBudget,
    /// Default acceptance percentile for the reference stage.
    pub k_percent: f64,
}

impl EnvInstance {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

fn uniform_prior(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// `v` single-state tasks; arm `i` pays 1 in task `i` and 0 elsewhere.
pub fn build_v_arm(v: usize) -> Result<EnvInstance> {
    if v == 0 {
        return Err(Error::Config("v-arm needs v >= 1".into()));
    }
    let mut tasks = Vec::with_capacity(v);
    let mut experts = Vec::with_capacity(v);
    for i in 0..v {
        let reward = vec![(0..v)
            .map(|a| if a == i { vec![0.0, 1.0] } else { vec![1.0, 0.0] })
            .collect()];
        tasks.push(TaskSpec::new(vec![0.0, 1.0], 1, vec![vec![vec![1.0]; v]], reward, 0)?);
        experts.push(StationaryPolicy::deterministic(&[i], v)?);
    }
    Ok(EnvInstance {
        name: format!("v-arm(v={v})"),
        tasks,
        behavior: BehaviorMap::new(experts)?,
        task_prior: uniform_prior(v),
        budget: AdaptationBudget::new(v, 1),
        k_percent: 20.0,
    })
}

/// Cell layout for the three-path world.
#[derive(Debug, Clone, Copy)]
pub struct ThreePathLayout {
    pub length: usize,
}

impl ThreePathLayout {
    pub const UP: usize = 0;
    pub const DOWN: usize = 1;
    pub const RIGHT: usize = 2;
    pub const LEFT: usize = 3;

    /// Row `p` in 0..3, column `c` in 0..=length. Column 0 is the hallway.
    pub fn cell(&self, p: usize, c: usize) -> usize {
        p * (self.length + 1) + c
    }

    pub fn coords(&self, s: usize) -> Option<(usize, usize)> {
        if s >= self.terminal() {
            None
        } else {
            Some((s / (self.length + 1), s % (self.length + 1)))
        }
    }

    /// Absorbing state entered after collecting the goal reward.
    pub fn terminal(&self) -> usize {
        3 * (self.length + 1)
    }

    pub fn num_states(&self) -> usize {
        3 * (self.length + 1) + 1
    }

    pub fn start(&self) -> usize {
        self.cell(1, 0)
    }

    pub fn goal(&self, task: usize) -> usize {
        self.cell(task, self.length)
    }

    /// Deterministic effect of a move in task `task`.
    fn step(&self, task: usize, s: usize, dir: usize) -> usize {
        let Some((p, c)) = self.coords(s) else { return s };
        let l = self.length;
        match dir {
            Self::UP if c == 0 && p > 0 => self.cell(p - 1, 0),
            Self::DOWN if c == 0 && p < 2 => self.cell(p + 1, 0),
            Self::RIGHT if c < l => {
                if c + 1 == l && p != task {
                    s // stone
                } else {
                    self.cell(p, c + 1)
                }
            }
            Self::LEFT if c > 0 => self.cell(p, c - 1),
            _ => s,
        }
    }

    /// Expert for task `task`: walk to the hallway row, then down the corridor.
    pub fn expert_action(&self, task: usize, s: usize) -> usize {
        match self.coords(s) {
            None => Self::RIGHT,
            Some((p, 0)) => {
                if p == task {
                    Self::RIGHT
                } else if p < task {
                    Self::DOWN
                } else {
                    Self::UP
                }
            }
            Some((p, _)) => {
                if p == task {
                    Self::RIGHT
                } else {
                    Self::LEFT
                }
            }
        }
    }
}

/// Three corridors of `length` cells behind a three-cell hallway.
///
/// With probability `slip` the chosen move is replaced by one of the two
/// perpendicular moves (each `slip / 2`); moves into walls leave the agent in
/// place. The goal cell pays 1 on any action and leads to an absorbing
/// terminal state. Horizon is `length + 4`, two steps of slack for the outer
/// corridors.
pub fn build_three_path(length: usize, slip: f64) -> Result<EnvInstance> {
    if length < 2 {
        return Err(Error::Config("three-path needs length >= 2".into()));
    }
    if !(0.0..=0.2).contains(&slip) {
        return Err(Error::Config(format!("three-path slip {slip} outside [0, 0.2]")));
    }
    let lay = ThreePathLayout { length };
    let ns = lay.num_states();
    let horizon = length + 4;
    let perpendicular = |dir: usize| match dir {
        ThreePathLayout::UP | ThreePathLayout::DOWN => [ThreePathLayout::LEFT, ThreePathLayout::RIGHT],
        _ => [ThreePathLayout::UP, ThreePathLayout::DOWN],
    };
    let mut tasks = Vec::with_capacity(3);
    let mut experts = Vec::with_capacity(3);
    for task in 0..3 {
        let mut trans = vec![vec![vec![0.0; ns]; 4]; ns];
        let mut rew = vec![vec![vec![1.0, 0.0]; 4]; ns];
        for s in 0..ns {
            for a in 0..4 {
                if s == lay.terminal() {
                    trans[s][a][s] = 1.0;
                } else if s == lay.goal(task) {
                    trans[s][a][lay.terminal()] = 1.0;
                    rew[s][a] = vec![0.0, 1.0];
                } else {
                    trans[s][a][lay.step(task, s, a)] += 1.0 - slip;
                    for d in perpendicular(a) {
                        trans[s][a][lay.step(task, s, d)] += slip / 2.0;
                    }
                }
            }
        }
        tasks.push(TaskSpec::new(vec![0.0, 1.0], horizon, trans, rew, lay.start())?);
        let actions: Vec<usize> = (0..ns).map(|s| lay.expert_action(task, s)).collect();
        experts.push(StationaryPolicy::deterministic(&actions, 4)?);
    }
    Ok(EnvInstance {
        name: format!("three-path(length={length},slip={slip})"),
        tasks,
        behavior: BehaviorMap::new(experts)?,
        task_prior: uniform_prior(3),
        budget: AdaptationBudget::new(6, horizon),
        k_percent: 20.0,
    })
}

/// Grid geometry for the point-robot analog.
#[derive(Debug, Clone)]
pub struct PointGridLayout {
    pub grid: usize,
    pub goals: Vec<(usize, usize)>,
}

impl PointGridLayout {
    pub const STAY: usize = 0;
    pub const UP: usize = 1;
    pub const DOWN: usize = 2;
    pub const LEFT: usize = 3;
    pub const RIGHT: usize = 4;

    pub fn new(grid: usize, num_goals: usize) -> Self {
        let c = (grid / 2) as f64;
        let r = (grid / 2) as f64;
        let goals = (0..num_goals)
            .map(|k| {
                let theta = if num_goals == 1 {
                    std::f64::consts::FRAC_PI_2
                } else {
                    std::f64::consts::PI * k as f64 / (num_goals - 1) as f64
                };
                let x = (c + r * theta.cos()).round().clamp(0.0, (grid - 1) as f64) as usize;
                let y = (r * theta.sin()).round().clamp(0.0, (grid - 1) as f64) as usize;
                (x, y)
            })
            .collect();
        Self { grid, goals }
    }

    pub fn cell(&self, x: usize, y: usize) -> usize {
        y * self.grid + x
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.grid, s / self.grid)
    }

    pub fn start(&self) -> usize {
        self.cell(self.grid / 2, 0)
    }

    fn step(&self, s: usize, a: usize) -> usize {
        let (x, y) = self.coords(s);
        let g = self.grid;
        match a {
            Self::UP if y + 1 < g => self.cell(x, y + 1),
            Self::DOWN if y > 0 => self.cell(x, y - 1),
            Self::LEFT if x > 0 => self.cell(x - 1, y),
            Self::RIGHT if x + 1 < g => self.cell(x + 1, y),
            _ => s,
        }
    }

    /// Dense reward: `1 - dist / diag`, so the goal cell pays exactly 1.
    pub fn dense_reward(&self, s: usize, goal: (usize, usize)) -> f64 {
        let (x, y) = self.coords(s);
        let dx = x as f64 - goal.0 as f64;
        let dy = y as f64 - goal.1 as f64;
        let diag = std::f64::consts::SQRT_2 * (self.grid - 1) as f64;
        (1.0 - (dx * dx + dy * dy).sqrt() / diag).clamp(0.0, 1.0)
    }

    /// Shortest-path expert: close the larger coordinate gap first (x on ties).
    pub fn expert_action(&self, s: usize, goal: (usize, usize)) -> usize {
        let (x, y) = self.coords(s);
        let dx = goal.0 as i64 - x as i64;
        let dy = goal.1 as i64 - y as i64;
        if dx == 0 && dy == 0 {
            Self::STAY
        } else if dx.abs() >= dy.abs() {
            if dx > 0 {
                Self::RIGHT
            } else {
                Self::LEFT
            }
        } else if dy > 0 {
            Self::UP
        } else {
            Self::DOWN
        }
    }
}

/// Discretized point robot: `grid x grid` cells, deterministic moves, horizon 20.
pub fn build_point_grid(grid: usize, num_goals: usize, sparse: bool) -> Result<EnvInstance> {
    if grid < 5 {
        return Err(Error::Config("point-grid needs grid >= 5".into()));
    }
    if num_goals == 0 {
        return Err(Error::Config("point-grid needs at least one goal".into()));
    }
    let lay = PointGridLayout::new(grid, num_goals);
    let ns = grid * grid;
    let na = 5;
    let horizon = 20;
    let reward_of = |s: usize, goal: (usize, usize)| -> f64 {
        if sparse {
            if lay.coords(s) == goal {
                1.0
            } else {
                0.0
            }
        } else {
            lay.dense_reward(s, goal)
        }
    };
    let mut support: Vec<f64> = Vec::new();
    for &g in &lay.goals {
        for s in 0..ns {
            support.push(reward_of(s, g));
        }
    }
    support.sort_by(|a, b| a.partial_cmp(b).expect("finite rewards"));
    support.dedup();
    let trans: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let mut row = vec![0.0; ns];
                    row[lay.step(s, a)] = 1.0;
                    row
                })
                .collect()
        })
        .collect();
    let mut tasks = Vec::with_capacity(num_goals);
    let mut experts = Vec::with_capacity(num_goals);
    for &g in &lay.goals {
        let rew = (0..ns)
            .map(|s| {
                let v = reward_of(s, g);
                let mut row = vec![0.0; support.len()];
                row[support.iter().position(|&u| u == v).expect("value in support")] = 1.0;
                vec![row; na]
            })
            .collect();
        tasks.push(TaskSpec::new(support.clone(), horizon, trans.clone(), rew, lay.start())?);
        let actions: Vec<usize> = (0..ns).map(|s| lay.expert_action(s, g)).collect();
        experts.push(StationaryPolicy::deterministic(&actions, na)?);
    }
    Ok(EnvInstance {
        name: format!("point-grid(grid={grid},goals={num_goals},sparse={sparse})"),
        tasks,
        behavior: BehaviorMap::new(experts)?,
        task_prior: uniform_prior(num_goals),
        budget: AdaptationBudget::new(20, horizon),
        k_percent: 10.0,
    })
}

/// Mixes each behavior policy with the uniform policy: `(1 - eps) mu + eps U`.
/// Stands in for medium-quality data.
pub fn perturb_behavior(behavior: &BehaviorMap, eps: f64) -> Result<BehaviorMap> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("perturbation {eps} outside [0, 1]")));
    }
    let mixed = behavior
        .policies()
        .iter()
        .map(|p| {
            let na = p.num_actions() as f64;
            let rows = p
                .rows()
                .into_iter()
                .map(|row| row.into_iter().map(|x| (1.0 - eps) * x + eps / na).collect())
                .collect();
            StationaryPolicy::new(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    BehaviorMap::new(mixed)
}

/// A family addressable by name plus parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EnvFamily {
    VArm {
        v: usize,
    },
    ThreePath {
        #[serde(default = "default_length")]
        length: usize,
        #[serde(default)]
        slip: f64,
    },
    PointGrid {
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default = "default_goals")]
        num_goals: usize,
        #[serde(default)]
        sparse: bool,
    },
}

fn default_length() -> usize {
    4
}
fn default_grid() -> usize {
    7
}
fn default_goals() -> usize {
    10
}

impl EnvFamily {
    pub fn build(&self) -> Result<EnvInstance> {
        match *self {
            EnvFamily::VArm { v } => build_v_arm(v),
            EnvFamily::ThreePath { length, slip } => build_three_path(length, slip),
            EnvFamily::PointGrid { grid, num_goals, sparse } => build_point_grid(grid, num_goals, sparse),
        }
    }

    /// Parses `name` or `name:key=value,key=value`, e.g. `three-path:length=4,slip=0.05`.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut params = BTreeMap::new();
        for kv in rest.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad parameter '{kv}'")))?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str, d: f64| -> Result<f64> {
            params
                .get(k)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("bad value for {k}"))))
                .unwrap_or(Ok(d))
        };
        match name.trim() {
            "v-arm" => Ok(EnvFamily::VArm { v: num("v", 5.0)? as usize }),
            "three-path" => Ok(EnvFamily::ThreePath {
                length: num("length", 4.0)? as usize,
                slip: num("slip", 0.0)?,
            }),
            "point-grid" => Ok(EnvFamily::PointGrid {
                grid: num("grid", 7.0)? as usize,
                num_goals: num("num_goals", 10.0)? as usize,
                sparse: params.get("sparse").map(|v| v == "true").unwrap_or(false),
            }),
            other => Err(Error::Config(format!("unknown environment family '{other}'"))),
        }
    }
}

impl fmt::Display for EnvFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvFamily::VArm { v } => write!(f, "v-arm:v={v}"),
            EnvFamily::ThreePath { length, slip } => write!(f, "three-path:length={length},slip={slip}"),
            EnvFamily::PointGrid { grid, num_goals, sparse } => {
                write!(f, "point-grid:grid={grid},num_goals={num_goals},sparse={sparse}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_policy_value, sample_episode, visitation_distribution};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn v_arm_shapes() {
        let env = build_v_arm(5).unwrap();
        assert_eq!(env.num_tasks(), 5);
        assert!(env.task_prior.iter().all(|&p| p == 0.2));
        assert_eq!(env.budget.episodes_total, 5);
        let one = build_v_arm(1).unwrap();
        assert_eq!(one.num_tasks(), 1);
        let three = build_v_arm(3).unwrap();
        for i in 0..3 {
            assert_eq!(exact_policy_value(&three.tasks[i], three.behavior.policy(i)).unwrap(), 1.0);
        }
    }

    #[test]
    fn three_path_experts_succeed_only_at_home() {
        let env = build_three_path(4, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v = exact_policy_value(&env.tasks[j], env.behavior.policy(i)).unwrap();
                assert_eq!(v, if i == j { 1.0 } else { 0.0 }, "expert {i} in task {j}");
            }
        }
    }

    #[test]
    fn three_path_expert_rollout_is_the_hand_path() {
        let env = build_three_path(3, 0.0).unwrap();
        let lay = ThreePathLayout { length: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_episode(&env.tasks[0], env.behavior.policy(0), &mut rng).unwrap();
        let states: Vec<usize> = t.steps.iter().map(|s| s.state).collect();
        let expected = vec![
            lay.cell(1, 0),
            lay.cell(0, 0),
            lay.cell(0, 1),
            lay.cell(0, 2),
            lay.cell(0, 3),
            lay.terminal(),
            lay.terminal(),
        ];
        assert_eq!(states, expected);
        assert_eq!(t.total_return(), 1.0);
    }

    #[test]
    fn three_path_visitation_stays_on_expert_cells() {
        let env = build_three_path(4, 0.0).unwrap();
        let lay = ThreePathLayout { length: 4 };
        let rho = visitation_distribution(&env.tasks[2], env.behavior.policy(2)).unwrap();
        let mut on_path = vec![lay.cell(1, 0), lay.cell(2, 0), lay.terminal()];
        on_path.extend((1..=4).map(|c| lay.cell(2, c)));
        for s in 0..lay.num_states() {
            let m = rho.state_marginal(s);
            assert_eq!(m > 0.0, on_path.contains(&s), "state {s} mass {m}");
        }
    }

    #[test]
    fn three_path_slip_value_matches_monte_carlo() {
        let env = build_three_path(4, 0.1).unwrap();
        let pol = env.behavior.policy(0);
        let exact = exact_policy_value(&env.tasks[0], pol).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_episode(&env.tasks[0], pol, &mut rng).unwrap().total_return();
        }
        let mean = sum / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "exact {exact} mc {mean}");
        assert!(exact < 1.0 && exact > 0.9);
    }

    #[test]
    fn three_path_rejects_bad_params() {
        assert!(build_three_path(1, 0.0).is_err());
        assert!(build_three_path(3, 0.3).is_err());
    }

    #[test]
    fn point_grid_rewards() {
        let dense = build_point_grid(7, 5, false).unwrap();
        let sparse = build_point_grid(7, 5, true).unwrap();
        let lay = PointGridLayout::new(7, 5);
        let g = lay.goals[2];
        let gs = lay.cell(g.0, g.1);
        assert_eq!(dense.tasks[2].mean_reward(gs, 0), 1.0);
        assert_eq!(sparse.tasks[2].mean_reward(gs, 0), 1.0);
        assert_eq!(sparse.tasks[2].mean_reward(lay.start(), 0), 0.0);
        assert_eq!(dense.k_percent, 10.0);
        assert_eq!(dense.tasks[0].horizon(), 20);
    }

    #[test]
    fn point_grid_goals_on_half_circle() {
        let lay = PointGridLayout::new(9, 5);
        assert_eq!(lay.goals[0], (8, 0));
        assert_eq!(lay.goals[2], (4, 4));
        assert_eq!(lay.goals[4], (0, 0));
    }

    #[test]
    fn point_grid_expert_beats_random() {
        for sparse in [false, true] {
            let env = build_point_grid(5, 4, sparse).unwrap();
            let uni = StationaryPolicy::uniform(25, 5).unwrap();
            for (i, t) in env.tasks.iter().enumerate() {
                let e = exact_policy_value(t, env.behavior.policy(i)).unwrap();
                let r = exact_policy_value(t, &uni).unwrap();
                assert!(e > r, "task {i}: expert {e} random {r}");
            }
        }
    }

    /// Brute force over every deterministic stationary policy on a tiny instance.
    #[test]
    fn experts_are_optimal_among_deterministic_policies() {
        let env = build_v_arm(4).unwrap();
        for (i, t) in env.tasks.iter().enumerate() {
            let e = exact_policy_value(t, env.behavior.policy(i)).unwrap();
            for a in 0..4 {
                let p = StationaryPolicy::deterministic(&[a], 4).unwrap();
                assert!(exact_policy_value(t, &p).unwrap() <= e);
            }
        }
        // Length-2 three-path, task 1: the terminal and the two stone cells
        // cannot influence the value, leaving 7 cells and 4^7 policies.
        let env = build_three_path(2, 0.0).unwrap();
        let lay = ThreePathLayout { length: 2 };
        let stones = [lay.cell(0, 2), lay.cell(2, 2)];
        let free: Vec<usize> = (0..lay.num_states())
            .filter(|&s| s != lay.terminal() && !stones.contains(&s))
            .collect();
        let task = &env.tasks[1];
        let best = exact_policy_value(task, env.behavior.policy(1)).unwrap();
        let mut actions = vec![0usize; lay.num_states()];
        let total = 4usize.pow(free.len() as u32);
        for code in 0..total {
            let mut c = code;
            for &s in &free {
                actions[s] = c % 4;
                c /= 4;
            }
            let p = StationaryPolicy::deterministic(&actions, 4).unwrap();
            assert!(exact_policy_value(task, &p).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn family_parse_round_trip() {
        for f in [
            EnvFamily::VArm { v: 5 },
            EnvFamily::ThreePath { length: 4, slip: 0.05 },
            EnvFamily::PointGrid { grid: 7, num_goals: 10, sparse: true },
        ] {
            assert_eq!(EnvFamily::parse(&f.to_string()).unwrap(), f);
        }
        assert!(EnvFamily::parse("maze").is_err());
    }

    #[test]
    fn perturbed_behavior_keeps_rows_normalized() {
        let env = build_three_path(3, 0.0).unwrap();
        let b = perturb_behavior(&env.behavior, 0.2).unwrap();
        for p in b.policies() {
            for s in 0..p.num_states() {
                let row = p.row(s);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&x| x >= 0.05 - 1e-15));
            }
        }
    }
}
