#![allow(dead_code)]

//! Property checks shared by the `properties` test target and the acceptance
//! binary. Each check runs `CASES` generated cases from a fixed seed.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use idaq_lab::adapt::{lower_quantile, q_re, run_idaq, Quantifier};
use idaq_lab::belief::{posterior_update, Belief, HypothesisSet, Mode, Posterior, INFEASIBLE_MASS};
use idaq_lab::envs::EnvFamily;
use idaq_lab::harness::{prepare, run_seed, runs_csv, Comparator, ExperimentConfig, RunOutcome};
use idaq_lab::mdp::{sample_episode, StationaryPolicy, Step, Trajectory};
use idaq_lab::offline::{
    collect_dataset, induced_mdp, is_batch_constrained, offline_policy_evaluation, BehaviorMap,
};
use idaq_lab::theory::random_task;
use idaq_lab::trainer::{train_meta_policy, TrainConfig};
use idaq_lab::Error;

pub const CASES: u32 = 1000;

fn runner() -> TestRunner {
    let cfg = Config { cases: CASES, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

fn random_policy(ns: usize, na: usize, rng: &mut ChaCha8Rng) -> StationaryPolicy {
    let rows = (0..ns)
        .map(|_| {
            let mut w: Vec<f64> = (0..na).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() }).collect();
            if w.iter().all(|&x| x == 0.0) {
                w[rng.gen_range(0..na)] = 1.0;
            }
            let z: f64 = w.iter().sum();
            w.iter().map(|x| x / z).collect()
        })
        .collect();
    StationaryPolicy::new(rows).unwrap()
}

fn env_family(choice: u8) -> EnvFamily {
    match choice % 3 {
        0 => EnvFamily::VArm { v: 5 },
        1 => EnvFamily::ThreePath { length: 4, slip: 0.05 },
        _ => EnvFamily::ThreePath { length: 3, slip: 0.2 },
    }
}

fn quantifier(choice: u8) -> Quantifier {
    [Quantifier::Pe, Quantifier::Pv, Quantifier::Re][choice as usize % 3]
}

/// Posteriors are probability vectors, or infeasible exactly when no
/// hypothesis with prior mass explains the step.
pub fn belief_normalization() -> Result<(), String> {
    run((any::<u64>(), 1usize..6, 1usize..5, 1usize..4, any::<bool>()), |(seed, nh, ns, na, transformed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..nh)
            .map(|_| (random_task(ns, na, &[0.0, 0.5, 1.0], 2, &mut rng).unwrap(), random_policy(ns, na, &mut rng)))
            .collect();
        let mode = if transformed { Mode::Transformed } else { Mode::Plain };
        let hyp = HypothesisSet::new(entries, mode).unwrap();
        let mut w: Vec<f64> = (0..nh).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() }).collect();
        w[rng.gen_range(0..nh)] += 0.5;
        let z: f64 = w.iter().sum();
        let prior = Belief::new(w.iter().map(|x| x / z).collect()).unwrap();
        let step = if rng.gen_bool(0.7) {
            let k = rng.gen_range(0..nh);
            sample_episode(hyp.task(k), hyp.behavior(k), &mut rng).unwrap().steps[0]
        } else {
            Step { state: rng.gen_range(0..ns), action: rng.gen_range(0..na), reward: 0.5, next_state: rng.gen_range(0..ns) }
        };
        let explained: f64 = (0..nh).map(|i| prior.mass(i) * hyp.likelihood(i, &step)).sum();
        match posterior_update(&prior, &hyp, &step).unwrap() {
            Posterior::Updated(b) => {
                let sum: f64 = b.weights().iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {}", sum);
                prop_assert!(b.weights().iter().all(|&x| x >= 0.0));
                for i in 0..nh {
                    if prior.mass(i) == 0.0 {
                        prop_assert_eq!(b.mass(i), 0.0);
                    }
                }
            }
            Posterior::Infeasible => prop_assert!(explained < INFEASIBLE_MASS),
        }
        Ok(())
    })
}

/// Trained policies never leave the data, and offline evaluation refuses
/// policies that would.
pub fn batch_constraint() -> Result<(), String> {
    run((any::<u64>(), 1usize..6, 1usize..4, 1usize..15), |(seed, ns, na, k)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = random_task(ns, na, &[0.0, 1.0], 3, &mut rng).unwrap();
        let beh = BehaviorMap::new(vec![random_policy(ns, na, &mut rng)]).unwrap();
        let data = collect_dataset(std::slice::from_ref(&task), &beh, k, &mut rng).unwrap();
        let induced = induced_mdp(data.sub_dataset(0), &task).unwrap();
        let meta = train_meta_policy(&data, &task, &TrainConfig::default()).unwrap();
        prop_assert!(is_batch_constrained(meta.policy(0), &induced));
        prop_assert!(offline_policy_evaluation(&induced, meta.policy(0)).is_ok());
        let uniform = StationaryPolicy::uniform(ns, na).unwrap();
        let leaves = (0..ns).any(|s| induced.state_in_dataset(s) && (0..na).any(|a| !induced.supported(s, a)));
        match offline_policy_evaluation(&induced, &uniform) {
            Err(Error::NotBatchConstrained { .. }) => prop_assert!(leaves),
            Ok(_) => prop_assert!(!leaves),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
        Ok(())
    })
}

/// Accepted records are exactly those scoring at most the threshold, minus
/// demotions, and the context is the accepted records in order.
pub fn acceptance_semantics() -> Result<(), String> {
    run((any::<u64>(), any::<u8>(), any::<u8>(), 1u32..=100), |(seed, env, q, k)| {
        let mut cfg = ExperimentConfig::new(env_family(env), vec![seed], vec![Comparator::IdaqRe]);
        cfg.k_per_task = 10;
        let p = prepare(&cfg, seed).unwrap();
        let mut acfg = cfg.adaptation_config(&p.env, seed).unwrap();
        acfg.quantifier = quantifier(q);
        acfg.k_percent = k as f64;
        let truth = (seed % p.env.num_tasks() as u64) as usize;
        let r = run_idaq(&p.env.tasks[truth], &p.meta, &p.hypotheses, &p.ensemble, &acfg).unwrap();
        for rec in &r.log {
            prop_assert!(!(rec.accepted && rec.demoted));
            prop_assert_eq!(rec.score <= r.threshold, rec.accepted || rec.demoted);
            if rec.accepted {
                prop_assert!(rec.score <= r.threshold);
            }
        }
        let accepted: Vec<_> = r.log.iter().filter(|x| x.accepted).cloned().collect();
        prop_assert_eq!(&r.context, &accepted);
        Ok(())
    })
}

/// With distinct scores the accepted fraction is within `1/n` of `k/100`.
pub fn quantile_coverage() -> Result<(), String> {
    let scores = prop::collection::btree_set(-1_000_000i64..1_000_000, 1..60);
    run((scores, 1u32..=1000), |(set, k10)| {
        let k = k10 as f64 / 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(set.len() as u64 + k10 as u64);
        let mut scores: Vec<f64> = set.into_iter().map(|x| x as f64 / 997.0).collect();
        // order must not matter
        scores.shuffle(&mut rng);
        let n = scores.len() as f64;
        let delta = lower_quantile(&scores, k).unwrap();
        let frac = scores.iter().filter(|&&s| s <= delta).count() as f64 / n;
        prop_assert!(frac >= k / 100.0 - 1.0 / n - 1e-12 && frac <= k / 100.0 + 1.0 / n + 1e-12, "{} {} {}", frac, k, n);
        Ok(())
    })
}

fn one_step(r: f64) -> Trajectory {
    Trajectory::new(vec![Step { state: 0, action: 0, reward: r, next_state: 0 }])
}

/// Higher mean return means strictly lower score.
pub fn q_re_monotonicity() -> Result<(), String> {
    let returns = || prop::collection::vec(0.0f64..=1.0, 1..12);
    run((returns(), returns()), |(a, b)| {
        let ta: Vec<Trajectory> = a.iter().map(|&r| one_step(r)).collect();
        let tb: Vec<Trajectory> = b.iter().map(|&r| one_step(r)).collect();
        let qa = q_re(&ta.iter().collect::<Vec<_>>()).unwrap();
        let qb = q_re(&tb.iter().collect::<Vec<_>>()).unwrap();
        let ma = ta.iter().map(|t| t.total_return()).sum::<f64>() / a.len() as f64;
        let mb = tb.iter().map(|t| t.total_return()).sum::<f64>() / b.len() as f64;
        prop_assert_eq!(ma.partial_cmp(&mb), qb.partial_cmp(&qa));
        Ok(())
    })
}

fn rerun(cfg: &ExperimentConfig) -> (Vec<RunOutcome>, String) {
    let out = run_seed(cfg, 0).unwrap();
    let csv = runs_csv(cfg, &out);
    (out, csv)
}

/// The same configuration and seed produce byte-identical logs.
pub fn reproducibility() -> Result<(), String> {
    run((any::<u64>(), any::<u8>()), |(seed, env)| {
        let mut cfg = ExperimentConfig::new(env_family(env), vec![seed], Comparator::ALL.to_vec());
        cfg.k_per_task = 10;
        cfg.master_seed = seed.rotate_left(17);
        let (a, csv_a) = rerun(&cfg);
        let (b, csv_b) = rerun(&cfg);
        prop_assert_eq!(csv_a, csv_b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.result.log_csv(), y.result.log_csv());
        }
        Ok(())
    })
}

pub const ALL: [(&str, fn() -> Result<(), String>); 6] = [
    ("belief normalization", belief_normalization),
    ("batch constraint", batch_constraint),
    ("acceptance semantics", acceptance_semantics),
    ("quantile coverage", quantile_coverage),
    ("q_re monotonicity", q_re_monotonicity),
    ("reproducibility", reproducibility),
];
