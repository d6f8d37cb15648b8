//! REINFORCE training of an LSTM dialog policy against the simulator, with
//! periodic frozen-policy evaluation.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{check_rate, KeyValues};
use crate::error::{Error, Result};
use crate::neural::{argmax, masked_softmax, AdaDelta, Gradients, LstmState, Network};
use crate::simenv::{DialogResult, EnvState, Environment, Episode, RewardVariant, SysAction};
use crate::stats::{derive_seed, rng_from, Summary};

/// 3 entity-presence bits and a one-hot of the last system action (or none).
pub const RL_INPUT_DIM: usize = 3 + SysAction::COUNT + 1;

pub fn featurize_state(state: &EnvState) -> Vec<f64> {
    let mut x = vec![0.0; RL_INPUT_DIM];
    for (i, &f) in state.filled.iter().enumerate() {
        x[i] = f64::from(u8::from(f));
    }
    let last = state.last_action.map_or(SysAction::COUNT, SysAction::index);
    x[3 + last] = 1.0;
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlPolicy {
    pub net: Network,
}

impl RlPolicy {
    pub fn new(hidden: usize, rng: &mut impl Rng) -> Self {
        RlPolicy {
            net: Network::random(RL_INPUT_DIM, hidden, SysAction::COUNT, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub input: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub mask: [bool; SysAction::COUNT],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// `G_t = r_t + gamma * G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        g = r + gamma * g;
        out[t] = g;
    }
    out
}

/// With probability `epsilon` a uniform allowed action; otherwise the argmax
/// of the masked, renormalised distribution (lowest index on ties).
pub fn epsilon_greedy(dist: &[f64], mask: &[bool], epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
    if dist.len() != mask.len() {
        return Err(Error::Shape(format!(
            "distribution has {} entries, mask {}",
            dist.len(),
            mask.len()
        )));
    }
    let allowed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if allowed.is_empty() {
        return Err(Error::MaskedAction("every action is masked".into()));
    }
    if epsilon > 0.0 && rng.gen_bool(epsilon.min(1.0)) {
        return Ok(allowed[rng.gen_range(0..allowed.len())]);
    }
    let total: f64 = allowed.iter().map(|&i| dist[i]).sum();
    let renorm: Vec<f64> = (0..dist.len())
        .map(|i| if !mask[i] { f64::NEG_INFINITY } else if total > 0.0 { dist[i] / total } else { 0.0 })
        .collect();
    Ok(argmax(&renorm))
}

/// Gradient of the negated objective `-sum_t (G_t - b) log pi(a_t | s_t)`.
pub fn reinforce_gradients(policy: &RlPolicy, traj: &Trajectory, gamma: f64, baseline: f64) -> Result<Gradients> {
    if traj.steps.is_empty() {
        return Err(Error::Data("empty trajectory".into()));
    }
    let inputs: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.input.clone()).collect();
    let cache = policy.net.forward_sequence(&inputs)?;
    let returns = discounted_returns(&traj.rewards(), gamma);
    let upstream: Vec<Vec<f64>> = traj
        .steps
        .iter()
        .zip(&cache.logits)
        .zip(&returns)
        .map(|((s, z), g)| {
            let adv = g - baseline;
            let mut d = masked_softmax(z, &s.mask);
            d[s.action] -= 1.0;
            d.iter_mut().for_each(|v| *v *= adv);
            d
        })
        .collect();
    policy.net.backward_sequence(&cache, &upstream)
}

/// One AdaDelta step on a complete trajectory; returns the pre-clip gradient norm.
pub fn reinforce_update(
    policy: &mut RlPolicy,
    traj: &Trajectory,
    gamma: f64,
    baseline: f64,
    optimizer: &mut AdaDelta,
    clip: f64,
) -> Result<f64> {
    let mut grads = reinforce_gradients(policy, traj, gamma, baseline)?;
    let norm = grads.clip_global_norm(clip);
    if !grads.is_zero() {
        optimizer.step_network(&mut policy.net, &grads)?;
    }
    Ok(norm)
}

/// Masked log-probability objective `sum_t G_t log pi(a_t | s_t)`; used to
/// check gradients.
pub fn reinforce_objective(policy: &RlPolicy, traj: &Trajectory, gamma: f64) -> Result<f64> {
    let inputs: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.input.clone()).collect();
    let cache = policy.net.forward_sequence(&inputs)?;
    let returns = discounted_returns(&traj.rewards(), gamma);
    Ok(traj
        .steps
        .iter()
        .zip(&cache.logits)
        .zip(&returns)
        .map(|((s, z), g)| g * masked_softmax(z, &s.mask)[s.action].ln())
        .sum())
}

/// Plays one dialog with the policy.
pub fn rollout(
    env: &Environment<'_>,
    policy: &RlPolicy,
    episode_seed: u64,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<(Episode, Trajectory)> {
    let mut ep = env.reset(episode_seed);
    let mut traj = Trajectory::default();
    let mut lstm = policy.net.initial_state();
    while !ep.is_done() {
        let input = featurize_state(&ep.state);
        let logits = policy.net.step(&mut lstm, &input)?;
        let mask = env.mask(&ep);
        let dist = masked_softmax(&logits, &mask);
        let action = epsilon_greedy(&dist, &mask, epsilon, rng)?;
        let sys = SysAction::from_index(action).expect("action index in range");
        let out = env.step(&mut ep, sys)?;
        traj.steps.push(TrajectoryStep {
            input,
            action,
            log_prob: dist[action].ln(),
            reward: out.reward,
            mask,
        });
    }
    Ok((ep, traj))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub success_rate: f64,
    pub mean_length: f64,
    pub mean_reward: f64,
}

/// Greedy (epsilon = 0) rollouts of a frozen policy on `seeds`.
pub fn evaluate_policy(env: &Environment<'_>, policy: &RlPolicy, seeds: &[u64]) -> Result<Evaluation> {
    if seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one dialog".into()));
    }
    let results: Vec<(bool, usize, f64)> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = rng_from(s, 0, 0);
            let (ep, _) = rollout(env, policy, s, 0.0, &mut rng)?;
            Ok((ep.state.result == DialogResult::Success, ep.trace.len(), ep.total_reward()))
        })
        .collect::<Result<_>>()?;
    let n = results.len() as f64;
    Ok(Evaluation {
        success_rate: results.iter().filter(|r| r.0).count() as f64 / n,
        mean_length: results.iter().map(|r| r.1 as f64).sum::<f64>() / n,
        mean_reward: results.iter().map(|r| r.2).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub hidden: usize,
    pub total_dialogs: usize,
    pub eval_every: usize,
    pub eval_dialogs: usize,
    pub repeats: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_dialogs: usize,
    pub clip: f64,
    pub rho: f64,
    pub adadelta_eps: f64,
    /// Subtract a running mean of returns (off by default).
    pub use_baseline: bool,
    pub baseline_decay: f64,
    /// Checkpoints past this many dialogs count toward convergence.
    pub converge_after: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            hidden: 32,
            total_dialogs: 12_000,
            eval_every: 200,
            eval_dialogs: 500,
            repeats: 20,
            epsilon_start: 0.5,
            epsilon_end: 0.05,
            epsilon_decay_dialogs: 2_000,
            clip: 5.0,
            rho: AdaDelta::DEFAULT_RHO,
            adadelta_eps: AdaDelta::DEFAULT_EPS,
            use_baseline: false,
            baseline_decay: 0.99,
            converge_after: 10_000,
        }
    }
}

impl RlConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = RlConfig::default();
        let cfg = RlConfig {
            hidden: kv.take_or("hidden", d.hidden)?,
            total_dialogs: kv.take_or("total_dialogs", d.total_dialogs)?,
            eval_every: kv.take_or("eval_every", d.eval_every)?,
            eval_dialogs: kv.take_or("eval_dialogs", d.eval_dialogs)?,
            repeats: kv.take_or("repeats", d.repeats)?,
            epsilon_start: kv.take_or("epsilon_start", d.epsilon_start)?,
            epsilon_end: kv.take_or("epsilon_end", d.epsilon_end)?,
            epsilon_decay_dialogs: kv.take_or("epsilon_decay_dialogs", d.epsilon_decay_dialogs)?,
            clip: kv.take_or("clip", d.clip)?,
            rho: kv.take_or("rho", d.rho)?,
            adadelta_eps: kv.take_or("adadelta_eps", d.adadelta_eps)?,
            use_baseline: kv.take_or("use_baseline", d.use_baseline)?,
            baseline_decay: kv.take_or("baseline_decay", d.baseline_decay)?,
            converge_after: kv.take_or("converge_after", d.converge_after)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("hidden", self.hidden);
        kv.set("total_dialogs", self.total_dialogs);
        kv.set("eval_every", self.eval_every);
        kv.set("eval_dialogs", self.eval_dialogs);
        kv.set("repeats", self.repeats);
        kv.set("epsilon_start", self.epsilon_start);
        kv.set("epsilon_end", self.epsilon_end);
        kv.set("epsilon_decay_dialogs", self.epsilon_decay_dialogs);
        kv.set("clip", self.clip);
        kv.set("rho", self.rho);
        kv.set("adadelta_eps", self.adadelta_eps);
        kv.set("use_baseline", self.use_baseline);
        kv.set("baseline_decay", self.baseline_decay);
        kv.set("converge_after", self.converge_after);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        check_rate("epsilon_start", self.epsilon_start)?;
        check_rate("epsilon_end", self.epsilon_end)?;
        check_rate("baseline_decay", self.baseline_decay)?;
        if self.hidden == 0 || self.eval_every == 0 || self.eval_dialogs == 0 || self.repeats == 0 {
            return Err(Error::Config(
                "hidden, eval_every, eval_dialogs and repeats must be positive".into(),
            ));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_decay_dialogs` dialogs.
    pub fn epsilon_at(&self, dialog: usize) -> f64 {
        if dialog >= self.epsilon_decay_dialogs {
            return self.epsilon_end;
        }
        let frac = dialog as f64 / self.epsilon_decay_dialogs as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Updates (equal to training dialogs) before this evaluation.
    pub dialogs: usize,
    pub success_rate: f64,
    pub mean_length: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCurve {
    pub repeat: usize,
    pub seed: u64,
    pub updates: usize,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: RewardVariant,
    pub master_seed: u64,
    pub config: RlConfig,
    pub runs: Vec<RunCurve>,
}

#[derive(Serialize)]
struct CurveRow {
    repeat: usize,
    dialogs: usize,
    success_rate: f64,
    mean_length: f64,
    reward_variant: &'static str,
}

impl TrainReport {
    /// Per-checkpoint (dialogs, success summary, length summary) across repeats.
    pub fn mean_curve(&self) -> Vec<(usize, Summary, Summary)> {
        let Some(first) = self.runs.first() else {
            return Vec::new();
        };
        (0..first.checkpoints.len())
            .map(|i| {
                let success: Vec<f64> = self.runs.iter().map(|r| r.checkpoints[i].success_rate).collect();
                let length: Vec<f64> = self.runs.iter().map(|r| r.checkpoints[i].mean_length).collect();
                (first.checkpoints[i].dialogs, Summary::of(&success), Summary::of(&length))
            })
            .collect()
    }

    pub fn final_lengths(&self) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.checkpoints.last().map(|c| c.mean_length))
            .collect()
    }

    /// Convergent success of each repeat.
    pub fn convergent_per_repeat(&self) -> Result<Vec<f64>> {
        self.runs
            .iter()
            .map(|r| convergent_success(&r.checkpoints, self.config.converge_after))
            .collect()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for run in &self.runs {
            for c in &run.checkpoints {
                w.serialize(CurveRow {
                    repeat: run.repeat,
                    dialogs: c.dialogs,
                    success_rate: c.success_rate,
                    mean_length: c.mean_length,
                    reward_variant: self.variant.name(),
                })?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Mean success rate of checkpoints strictly after `after` dialogs.
pub fn convergent_success(checkpoints: &[Checkpoint], after: usize) -> Result<f64> {
    let late: Vec<f64> = checkpoints
        .iter()
        .filter(|c| c.dialogs > after)
        .map(|c| c.success_rate)
        .collect();
    if late.is_empty() {
        return Err(Error::Data(format!("no checkpoints after {after} dialogs")));
    }
    Ok(late.iter().sum::<f64>() / late.len() as f64)
}

/// Mean over repeats of each repeat's convergent success.
pub fn report_convergent_success(report: &TrainReport) -> Result<f64> {
    let per = report.convergent_per_repeat()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

const INIT_STREAM: u64 = 0x1417;
const EXPLORE_STREAM: u64 = 0xE791;
const TRAIN_STREAM: u64 = 0x7A41;
const EVAL_STREAM: u64 = 0xE7A1;

/// Evaluation dialog seeds shared by every checkpoint, repeat and variant.
pub fn eval_seeds(master_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(master_seed, EVAL_STREAM, i)).collect()
}

/// One training run; `on_update` sees the policy after every update.
pub fn train_single(
    env: &Environment<'_>,
    cfg: &RlConfig,
    run_seed: u64,
    eval: &[u64],
    mut on_update: impl FnMut(usize, &RlPolicy),
) -> Result<(RlPolicy, Vec<Checkpoint>, usize)> {
    let mut policy = RlPolicy::new(cfg.hidden, &mut rng_from(run_seed, INIT_STREAM, 0));
    let mut opt = AdaDelta::new(
        &policy.net.tensors().iter().map(|t| t.len()).collect::<Vec<_>>(),
        cfg.rho,
        cfg.adadelta_eps,
    );
    let mut explore = rng_from(run_seed, EXPLORE_STREAM, 0);
    let mut checkpoints = Vec::new();
    let mut baseline = 0.0;
    let mut updates = 0;
    let checkpoint = |policy: &RlPolicy, dialogs: usize| -> Result<Checkpoint> {
        let e = evaluate_policy(env, policy, eval)?;
        Ok(Checkpoint {
            dialogs,
            success_rate: e.success_rate,
            mean_length: e.mean_length,
            mean_reward: e.mean_reward,
        })
    };
    checkpoints.push(checkpoint(&policy, 0)?);
    for d in 0..cfg.total_dialogs {
        let (_, traj) = rollout(
            env,
            &policy,
            derive_seed(run_seed, TRAIN_STREAM, d as u64),
            cfg.epsilon_at(d),
            &mut explore,
        )?;
        let b = if cfg.use_baseline { baseline } else { 0.0 };
        reinforce_update(&mut policy, &traj, env.reward.gamma, b, &mut opt, cfg.clip)?;
        if cfg.use_baseline {
            let returns = discounted_returns(&traj.rewards(), env.reward.gamma);
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean;
        }
        updates += 1;
        on_update(updates, &policy);
        if updates % cfg.eval_every == 0 {
            checkpoints.push(checkpoint(&policy, updates)?);
        }
    }
    Ok((policy, checkpoints, updates))
}

/// `cfg.repeats` independent trainings in parallel.
pub fn train_rl(env: &Environment<'_>, cfg: &RlConfig, master_seed: u64) -> Result<TrainReport> {
    train_rl_with_policies(env, cfg, master_seed).map(|(report, _)| report)
}

/// Like [`train_rl`], also returning each repeat's final policy.
pub fn train_rl_with_policies(
    env: &Environment<'_>,
    cfg: &RlConfig,
    master_seed: u64,
) -> Result<(TrainReport, PolicySet)> {
    cfg.validate()?;
    let eval = eval_seeds(master_seed, cfg.eval_dialogs);
    let results = (0..cfg.repeats)
        .into_par_iter()
        .map(|repeat| {
            let seed = derive_seed(master_seed, 0x5EED, repeat as u64);
            let (policy, checkpoints, updates) = train_single(env, cfg, seed, &eval, |_, _| {})?;
            let curve = RunCurve {
                repeat,
                seed,
                updates,
                checkpoints,
            };
            Ok((curve, policy))
        })
        .collect::<Result<Vec<_>>>()?;
    let (runs, policies): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = TrainReport {
        variant: env.reward.variant,
        master_seed,
        config: *cfg,
        runs,
    };
    Ok((report, PolicySet::new(env.reward.variant, policies)))
}

const POLICY_SET_FORMAT: &str = "sentidial-rl-policies";
const POLICY_SET_VERSION: u32 = 1;

/// Final policies of a training batch, one per repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    format: String,
    version: u32,
    pub variant: RewardVariant,
    pub policies: Vec<RlPolicy>,
}

impl PolicySet {
    pub fn new(variant: RewardVariant, policies: Vec<RlPolicy>) -> Self {
        PolicySet {
            format: POLICY_SET_FORMAT.into(),
            version: POLICY_SET_VERSION,
            variant,
            policies,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: PolicySet = serde_json::from_str(&text)
            .map_err(|e| Error::IncompatibleModel(format!("{}: {e}", path.display())))?;
        if set.format != POLICY_SET_FORMAT || set.version != POLICY_SET_VERSION {
            return Err(Error::IncompatibleModel(format!(
                "{}: expected {POLICY_SET_FORMAT} v{POLICY_SET_VERSION}, found {} v{}",
                path.display(),
                set.format,
                set.version
            )));
        }
        if let Some(bad) = set
            .policies
            .iter()
            .find(|p| p.net.input_size() != RL_INPUT_DIM || p.net.actions() != SysAction::COUNT)
        {
            return Err(Error::IncompatibleModel(format!(
                "{}: policy has shape {}x{}, expected {RL_INPUT_DIM}x{}",
                path.display(),
                bad.net.input_size(),
                bad.net.actions(),
                SysAction::COUNT
            )));
        }
        Ok(set)
    }
}

/// Greedy action under `policy` for the current state; advances `state`.
pub fn greedy_action(
    policy: &RlPolicy,
    lstm: &mut LstmState,
    env: &Environment<'_>,
    ep: &Episode,
) -> Result<SysAction> {
    let logits = policy.net.step(lstm, &featurize_state(&ep.state))?;
    let a = argmax(&masked_softmax(&logits, &env.mask(ep)));
    Ok(SysAction::from_index(a).expect("head has one output per action"))
}
