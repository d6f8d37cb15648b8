use proptest::prelude::*;
use rand::Rng;

use sentidial_core::corpus::synth_corpus;
use sentidial_core::rltrain::{discounted_returns, rollout, train_rl};
use sentidial_core::simenv::{coverage_profile, synth_sample_bank, DialogResult};
use sentidial_core::stats::rng_from;
use sentidial_core::{
    BankConfig, DetectorConfig, DialogicDetector, DialogicSentiment, Environment, FeatureFamilies, RewardConfig,
    RewardVariant, RlConfig, RlPolicy, SampleBank, SentimentDetector, SimConfig, SynthConfig, SysAction,
};

struct Setup {
    bank: SampleBank,
    model: DialogicDetector,
}

fn setup() -> &'static Setup {
    static S: std::sync::OnceLock<Setup> = std::sync::OnceLock::new();
    S.get_or_init(|| {
        let dialogs = synth_corpus(3, &SynthConfig::default()).unwrap();
        let cfg = DetectorConfig {
            families: FeatureFamilies::parse("dialogic").unwrap(),
            ..DetectorConfig::default()
        };
        let det = SentimentDetector::train(&dialogs, &dialogs, None, &cfg, 3).unwrap();
        Setup {
            bank: synth_sample_bank(3, &BankConfig::default(), &SimConfig::default(), 15).unwrap(),
            model: DialogicDetector::new(det).unwrap(),
        }
    })
}

fn env(v: RewardVariant) -> Environment<'static> {
    let s = setup();
    Environment::new(
        RewardConfig::with_variant(v),
        SimConfig::default(),
        &s.bank,
        Some(&s.model as &dyn DialogicSentiment),
    )
    .unwrap()
}

#[test]
fn synthetic_bank_matches_coverage_profile() {
    let p = coverage_profile(&env(RewardVariant::Baseline), 0.75, 8000, 11).unwrap();
    assert!(p.turns >= 10_000, "{p:?}");
    assert!((p.matched - 0.36).abs() < 0.04, "{p:?}");
    assert!((p.no_match_repetition - 0.15).abs() < 0.04, "{p:?}");
    assert!((p.no_match_plain - 0.33).abs() < 0.04, "{p:?}");
    // interruptions only happen on turns the user answers
    let ask_share = 1.0 - p.terminal;
    assert!((p.interruption / ask_share - 0.075).abs() < 0.015, "{p:?}");
}

fn variant() -> impl Strategy<Value = RewardVariant> {
    prop::sample::select(RewardVariant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_rollouts_keep_invariants(v in variant(), seed in any::<u64>(), policy_seed in any::<u64>()) {
        let env = env(v);
        let mut rng = rng_from(policy_seed, 1, 0);
        let mut ep = env.reset(seed);
        while !ep.is_done() {
            let mask = env.mask(&ep);
            for (i, allowed) in mask.iter().enumerate() {
                if !allowed {
                    let turn = ep.state.turn;
                    prop_assert!(env.step(&mut ep, SysAction::from_index(i).unwrap()).is_err());
                    prop_assert_eq!(turn, ep.state.turn);
                }
            }
            let allowed: Vec<usize> = (0..5).filter(|&i| mask[i]).collect();
            let a = SysAction::from_index(allowed[rng.gen_range(0..allowed.len())]).unwrap();
            let out = env.step(&mut ep, a).unwrap();
            prop_assert_eq!(out.reward, out.breakdown.total());
            prop_assert_eq!(out.done, ep.is_done());
        }
        prop_assert!(ep.trace.len() <= 15);
        let last = ep.trace.last().unwrap();
        prop_assert!(last.reward == 20.0 || last.reward == -10.0);
        prop_assert_eq!(last.result == DialogResult::Success, last.reward == 20.0);
        prop_assert!(ep.trace[..ep.trace.len() - 1].iter().all(|t| t.result == DialogResult::Ongoing));
        prop_assert!(env.step(&mut ep, SysAction::GiveInfo).is_err());
    }

    #[test]
    fn returns_satisfy_recursion(v in variant(), seed in any::<u64>()) {
        let env = env(v);
        let policy = RlPolicy::new(8, &mut rng_from(seed, 2, 0));
        let (_, traj) = rollout(&env, &policy, seed, 0.3, &mut rng_from(seed, 3, 0)).unwrap();
        let r = traj.rewards();
        let g = discounted_returns(&r, env.reward.gamma);
        let direct: f64 = r.iter().enumerate().map(|(k, x)| env.reward.gamma.powi(k as i32) * x).sum();
        prop_assert!((g[0] - direct).abs() < 1e-9);
        for t in 0..r.len() {
            let next = g.get(t + 1).copied().unwrap_or(0.0);
            prop_assert_eq!(g[t], r[t] + env.reward.gamma * next);
        }
    }
}

#[test]
fn short_training_improves_on_untrained_policy() {
    let cfg = RlConfig {
        repeats: 2,
        total_dialogs: 1500,
        eval_every: 500,
        eval_dialogs: 200,
        ..RlConfig::default()
    };
    let env = env(RewardVariant::Srrip);
    let report = train_rl(&env, &cfg, 5).unwrap();
    assert_eq!(report.runs.len(), 2);
    for run in &report.runs {
        let dialogs: Vec<usize> = run.checkpoints.iter().map(|c| c.dialogs).collect();
        assert_eq!(dialogs, vec![0, 500, 1000, 1500]);
        let (first, last) = (run.checkpoints[0], *run.checkpoints.last().unwrap());
        assert!(last.success_rate > first.success_rate, "{first:?} -> {last:?}");
        assert!(last.mean_length < first.mean_length, "{first:?} -> {last:?}");
    }
    assert_eq!(train_rl(&env, &cfg, 5).unwrap(), report);
}
