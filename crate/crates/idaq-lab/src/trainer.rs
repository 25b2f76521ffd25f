//! Offline meta-training: one batch-constrained greedy policy per hypothesis,
//! and bootstrap ensembles of tabular reward/dynamics models.

use rand::Rng;

use crate::belief::Belief;
use crate::error::{Error, Result};
use crate::mdp::{join, parse_floats, sample_index, StationaryPolicy, TaskSpec, Trajectory};
use crate::offline::{induced_mdp, is_batch_constrained, InducedMdp, MultiTaskDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    WithReplacement,
    WithoutReplacement,
}

/// Thompson-sampling meta-policy: draw a hypothesis from the belief, then act
/// with that hypothesis's policy for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPolicyTS {
    pub hypothesis_policies: Vec<StationaryPolicy>,
    pub sampler_mode: SamplerMode,
}

impl MetaPolicyTS {
    pub fn new(hypothesis_policies: Vec<StationaryPolicy>, sampler_mode: SamplerMode) -> Result<Self> {
        let first = hypothesis_policies
            .first()
            .ok_or_else(|| Error::Empty("meta-policy has no hypothesis policies".into()))?;
        let (ns, na) = (first.num_states(), first.num_actions());
        if hypothesis_policies.iter().any(|p| p.num_states() != ns || p.num_actions() != na) {
            return Err(Error::Dimension("hypothesis policies disagree on dimensions".into()));
        }
        Ok(Self { hypothesis_policies, sampler_mode })
    }

    pub fn len(&self) -> usize {
        self.hypothesis_policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypothesis_policies.is_empty()
    }

    pub fn policy(&self, z: usize) -> &StationaryPolicy {
        &self.hypothesis_policies[z]
    }

    /// Unnormalized sampling weights over hypotheses. Without replacement,
    /// hypotheses already tried are masked out unless that removes all mass.
    pub fn hypothesis_distribution(&self, belief: &Belief, tried: &[bool]) -> Vec<f64> {
        let w = belief.weights().to_vec();
        if self.sampler_mode == SamplerMode::WithReplacement {
            return w;
        }
        let masked: Vec<f64> = w.iter().zip(tried).map(|(&x, &t)| if t { 0.0 } else { x }).collect();
        if masked.iter().sum::<f64>() > 0.0 {
            masked
        } else {
            w
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, belief: &Belief, tried: &[bool], rng: &mut R) -> usize {
        sample_index(&self.hypothesis_distribution(belief, tried), rng).expect("belief has mass")
    }

    /// Text form: header lines, then `P <z> <s> <probs>` per row.
    pub fn to_text(&self) -> String {
        let mode = match self.sampler_mode {
            SamplerMode::WithReplacement => "with-replacement",
            SamplerMode::WithoutReplacement => "without-replacement",
        };
        let first = &self.hypothesis_policies[0];
        let mut out = format!(
            "meta v1\nsampler {mode}\nhypotheses {}\nstates {}\nactions {}\n",
            self.len(),
            first.num_states(),
            first.num_actions()
        );
        for (z, p) in self.hypothesis_policies.iter().enumerate() {
            for s in 0..p.num_states() {
                out.push_str(&format!("P {z} {s} {}\n", join(p.row(s))));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut mode = SamplerMode::WithReplacement;
        let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let parts: Vec<&str> = raw.split_whitespace().collect();
            let perr = |m: &str| Error::Parse { line: i + 1, msg: m.to_string() };
            match parts.first().copied() {
                Some("sampler") => {
                    mode = match parts.get(1).copied() {
                        Some("with-replacement") => SamplerMode::WithReplacement,
                        Some("without-replacement") => SamplerMode::WithoutReplacement,
                        _ => return Err(perr("unknown sampler mode")),
                    }
                }
                Some("P") => {
                    if parts.len() < 3 {
                        return Err(perr("short policy row"));
                    }
                    let z: usize = parts[1].parse().map_err(|_| perr("bad hypothesis index"))?;
                    let s: usize = parts[2].parse().map_err(|_| perr("bad state index"))?;
                    if rows.len() <= z {
                        rows.resize(z + 1, Vec::new());
                    }
                    if rows[z].len() != s {
                        return Err(perr("policy rows out of order"));
                    }
                    rows[z].push(parse_floats(&parts[3..], i + 1)?);
                }
                _ => {}
            }
        }
        let policies = rows.into_iter().map(StationaryPolicy::new).collect::<Result<Vec<_>>>()?;
        Self::new(policies, mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub ensemble_size: usize,
    pub bootstrap: bool,
    pub vi_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { ensemble_size: 4, bootstrap: true, vi_tolerance: 1e-10 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::Config(format!("ensemble_size must be >= 2, got {}", self.ensemble_size)));
        }
        if !(self.vi_tolerance >= 0.0) {
            return Err(Error::Config("vi_tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Backward induction on an induced MDP restricted to supported actions.
///
/// Returns `Q_0(s, a)` for supported pairs (NaN elsewhere) after `H` sweeps.
pub fn batch_constrained_q(induced: &InducedMdp) -> Vec<Vec<f64>> {
    let spec = &induced.spec;
    let (ns, na, h) = (spec.num_states(), spec.num_actions(), spec.horizon());
    let mut v_next = vec![0.0; ns];
    let mut q = vec![vec![f64::NAN; na]; ns];
    for _ in 0..h {
        for s in 0..ns {
            for a in 0..na {
                if !induced.supported(s, a) {
                    continue;
                }
                let cont: f64 = spec.transition_row(s, a).iter().zip(&v_next).map(|(p, v)| p * v).sum();
                q[s][a] = spec.mean_reward(s, a) + cont;
            }
        }
        v_next = q
            .iter()
            .map(|row| row.iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max))
            .map(|x| if x.is_finite() { x } else { 0.0 })
            .collect();
    }
    q
}

/// Greedy deterministic policy from [`batch_constrained_q`]. Actions within
/// `tol` of the best count as ties and the lowest index wins. States without
/// supported actions get action 0.
pub fn greedy_batch_constrained(induced: &InducedMdp, tol: f64) -> Result<StationaryPolicy> {
    let q = batch_constrained_q(induced);
    let na = induced.spec.num_actions();
    let actions: Vec<usize> = q
        .iter()
        .map(|row| {
            let best = row.iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
            if best.is_finite() {
                row.iter().position(|&x| !x.is_nan() && x >= best - tol).expect("best exists")
            } else {
                0
            }
        })
        .collect();
    StationaryPolicy::deterministic(&actions, na)
}

pub fn train_meta_policy(dataset: &MultiTaskDataset, template: &TaskSpec, cfg: &TrainConfig) -> Result<MetaPolicyTS> {
    cfg.validate()?;
    let mut policies = Vec::with_capacity(dataset.num_tasks());
    for i in 0..dataset.num_tasks() {
        let sub = dataset.sub_dataset(i);
        if sub.is_empty() {
            return Err(Error::EmptySubDataset(i));
        }
        let induced = induced_mdp(sub, template)?;
        let pi = greedy_batch_constrained(&induced, cfg.vi_tolerance)?;
        if !is_batch_constrained(&pi, &induced) {
            return Err(Error::Config(format!("trained policy {i} left its data support")));
        }
        policies.push(pi);
    }
    MetaPolicyTS::new(policies, SamplerMode::WithoutReplacement)
}

/// `L` tabular reward and dynamics models per hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    size: usize,
    num_hypotheses: usize,
    num_states: usize,
    num_actions: usize,
    /// `[member][z][s][a]`
    reward: Vec<f64>,
    /// `[member][z][s][a][s']`
    dynamics: Vec<f64>,
}

impl EnsembleModel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_hypotheses(&self) -> usize {
        self.num_hypotheses
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    fn cell(&self, member: usize, z: usize, s: usize, a: usize) -> usize {
        ((member * self.num_hypotheses + z) * self.num_states + s) * self.num_actions + a
    }

    /// `(reward mean, next-state vector)` of one member.
    pub fn predict(&self, member: usize, s: usize, a: usize, z: usize) -> (f64, &[f64]) {
        let c = self.cell(member, z, s, a);
        let ns = self.num_states;
        (self.reward[c], &self.dynamics[c * ns..(c + 1) * ns])
    }

    /// Builds an ensemble from explicit tables (`[member][z][s][a]` and
    /// `[member][z][s][a][s']`).
    pub fn from_tables(reward: Vec<Vec<Vec<Vec<f64>>>>, dynamics: Vec<Vec<Vec<Vec<Vec<f64>>>>>) -> Result<Self> {
        let size = reward.len();
        if size == 0 || dynamics.len() != size {
            return Err(Error::Dimension("ensemble needs matching nonempty member lists".into()));
        }
        let nz = reward[0].len();
        let ns = reward[0].first().map(Vec::len).unwrap_or(0);
        let na = reward[0].first().and_then(|x| x.first()).map(Vec::len).unwrap_or(0);
        let mut r = Vec::new();
        let mut d = Vec::new();
        for m in 0..size {
            for z in 0..nz {
                for s in 0..ns {
                    for a in 0..na {
                        let rv = *reward
                            .get(m)
                            .and_then(|x| x.get(z))
                            .and_then(|x| x.get(s))
                            .and_then(|x| x.get(a))
                            .ok_or_else(|| Error::Dimension("ragged reward table".into()))?;
                        let dv = dynamics
                            .get(m)
                            .and_then(|x| x.get(z))
                            .and_then(|x| x.get(s))
                            .and_then(|x| x.get(a))
                            .ok_or_else(|| Error::Dimension("ragged dynamics table".into()))?;
                        if dv.len() != ns {
                            return Err(Error::Dimension("dynamics vector has wrong length".into()));
                        }
                        r.push(rv);
                        d.extend_from_slice(dv);
                    }
                }
            }
        }
        Ok(Self { size, num_hypotheses: nz, num_states: ns, num_actions: na, reward: r, dynamics: d })
    }

    /// Text form: header lines, then `E <m> <z> <s> <a> <reward> <p_0> ... <p_{S-1}>`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "ensemble v1\nmembers {}\nhypotheses {}\nstates {}\nactions {}\n",
            self.size, self.num_hypotheses, self.num_states, self.num_actions
        );
        for m in 0..self.size {
            for z in 0..self.num_hypotheses {
                for s in 0..self.num_states {
                    for a in 0..self.num_actions {
                        let (r, p) = self.predict(m, s, a, z);
                        out.push_str(&format!("E {m} {z} {s} {a} {r} {}\n", join(p)));
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut dims = std::collections::HashMap::new();
        let mut reward = Vec::new();
        let mut dynamics = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let parts: Vec<&str> = raw.split_whitespace().collect();
            match parts.first().copied() {
                Some(k @ ("members" | "hypotheses" | "states" | "actions")) => {
                    let v: usize = parts
                        .get(1)
                        .and_then(|x| x.parse().ok())
                        .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected an integer".into() })?;
                    dims.insert(k, v);
                }
                Some("E") => {
                    let vals = parse_floats(&parts[5..], i + 1)?;
                    let (r, p) = vals
                        .split_first()
                        .ok_or_else(|| Error::Parse { line: i + 1, msg: "short ensemble row".into() })?;
                    reward.push(*r);
                    dynamics.extend_from_slice(p);
                }
                _ => {}
            }
        }
        let get = |k: &str| dims.get(k).copied().ok_or_else(|| Error::Parse { line: 0, msg: format!("missing '{k}'") });
        let (size, nz, ns, na) = (get("members")?, get("hypotheses")?, get("states")?, get("actions")?);
        if reward.len() != size * nz * ns * na || dynamics.len() != reward.len() * ns {
            return Err(Error::Parse { line: 0, msg: "ensemble table has the wrong number of rows".into() });
        }
        Ok(Self { size, num_hypotheses: nz, num_states: ns, num_actions: na, reward, dynamics })
    }
}

/// Per-(s, a) sample means of reward and one-hot next state. Unvisited cells
/// get the global mean reward and a uniform next-state vector.
fn fit_member(trajs: &[&Trajectory], ns: usize, na: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = vec![0usize; ns * na];
    let mut rmean = vec![0.0; ns * na];
    let mut pmean = vec![0.0; ns * na * ns];
    let mut global_n = 0usize;
    let mut global = 0.0;
    for t in trajs {
        for st in &t.steps {
            let c = st.state * na + st.action;
            n[c] += 1;
            let k = n[c] as f64;
            // running means keep identical samples bit-identical
            rmean[c] += (st.reward - rmean[c]) / k;
            for sn in 0..ns {
                let target = if sn == st.next_state { 1.0 } else { 0.0 };
                pmean[c * ns + sn] += (target - pmean[c * ns + sn]) / k;
            }
            global_n += 1;
            global += (st.reward - global) / global_n as f64;
        }
    }
    for c in 0..ns * na {
        if n[c] == 0 {
            rmean[c] = global;
            for sn in 0..ns {
                pmean[c * ns + sn] = 1.0 / ns as f64;
            }
        }
    }
    (rmean, pmean)
}

/// Fits `cfg.ensemble_size` members. With bootstrap on, each member sees a
/// trajectory-level resample (with replacement) of every sub-dataset.
pub fn fit_ensemble<R: Rng + ?Sized>(
    dataset: &MultiTaskDataset,
    template: &TaskSpec,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<EnsembleModel> {
    cfg.validate()?;
    let (ns, na, nz, size) = (template.num_states(), template.num_actions(), dataset.num_tasks(), cfg.ensemble_size);
    let mut reward = Vec::with_capacity(size * nz * ns * na);
    let mut dynamics = Vec::with_capacity(size * nz * ns * na * ns);
    for _ in 0..size {
        for z in 0..nz {
            let sub = dataset.sub_dataset(z);
            if sub.is_empty() {
                return Err(Error::EmptySubDataset(z));
            }
            let picked: Vec<&Trajectory> = if cfg.bootstrap {
                (0..sub.len()).map(|_| &sub[rng.gen_range(0..sub.len())]).collect()
            } else {
                sub.iter().collect()
            };
            let (r, p) = fit_member(&picked, ns, na);
            reward.extend(r);
            dynamics.extend(p);
        }
    }
    Ok(EnsembleModel { size, num_hypotheses: nz, num_states: ns, num_actions: na, reward, dynamics })
}
