//! The training loop: rollouts into a FIFO replay buffer, then per epoch a
//! discriminator phase, a dual phase and a policy phase, in that order.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{stream_rng, Config, Stream};
use crate::env::{sample_categorical, Action, Env, Point, Step, Trajectory};
use crate::equivariant::{EquivariantFeatureMap, FrequencyMask};
use crate::error::{Error, Result};
use crate::groups::{DirectSumRep, Element};
use crate::nn::{Adam, DiffNet};
use crate::objective::{discriminator_loss, giwdm_estimate, sample_masked_skill, DualVariable, TransitionSample};
use crate::policy::{ActionSpace, EquivariantPolicy, ValueNet};

/// One stored environment transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Point,
    pub action: Action,
    pub next_state: Point,
    pub skill: Vec<f64>,
}

/// Bounded FIFO of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok((0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

/// Rolls one episode with a fixed skill, sampling actions from the policy.
pub fn rollout<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    env: &Env,
    policy: &EquivariantPolicy,
    s0: Point,
    skill: &[f64],
    horizon: usize,
    env_rng: &mut R1,
    action_rng: &mut R2,
) -> Result<Trajectory> {
    let mut steps = Vec::with_capacity(horizon);
    let mut s = s0;
    for _ in 0..horizon {
        let a = policy.sample(&s, skill, action_rng)?;
        let next = env.step(&s, &a, env_rng)?;
        steps.push(Step {
            state: s,
            action: a,
            reward: 0.0,
            next_state: next,
        });
        s = next;
    }
    Ok(Trajectory {
        skill: skill.to_vec(),
        steps,
    })
}

/// Rolls with the policy's most likely action at every step.
pub fn rollout_mode<R: Rng + ?Sized>(
    env: &Env,
    policy: &EquivariantPolicy,
    s0: Point,
    skill: &[f64],
    horizon: usize,
    env_rng: &mut R,
) -> Result<Trajectory> {
    let mut steps = Vec::with_capacity(horizon);
    let mut s = s0;
    for _ in 0..horizon {
        let a = policy.mode(&s, skill)?;
        let next = env.step(&s, &a, env_rng)?;
        steps.push(Step {
            state: s,
            action: a,
            reward: 0.0,
            next_state: next,
        });
        s = next;
    }
    Ok(Trajectory {
        skill: skill.to_vec(),
        steps,
    })
}

/// `m` episodes, each with a fresh skill from the masked prior; every
/// transition goes into the buffer in episode order.
#[allow(clippy::too_many_arguments)]
pub fn collect_episodes(
    env: &Env,
    policy: &EquivariantPolicy,
    mask: &FrequencyMask,
    m: usize,
    horizon: usize,
    buffer: &mut ReplayBuffer,
    skill_rng: &mut ChaCha8Rng,
    env_rng: &mut ChaCha8Rng,
    action_rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let z = sample_masked_skill(skill_rng, mask).into_vec();
        let s0 = env.reset(env_rng);
        let traj = rollout(env, policy, s0, &z, horizon, env_rng, action_rng)?;
        for step in &traj.steps {
            buffer.push(Transition {
                state: step.state,
                action: step.action,
                next_state: step.next_state,
                skill: z.clone(),
            });
        }
        out.push(traj);
    }
    Ok(out)
}

/// Overwrites step rewards with `⟨φ(s') − φ(s), z⟩` under the given map.
pub fn relabel_rewards(map: &EquivariantFeatureMap, traj: &mut Trajectory) -> Result<()> {
    let states = traj.states();
    let feats = states.iter().map(|s| map.forward(s)).collect::<Result<Vec<_>>>()?;
    for (t, step) in traj.steps.iter_mut().enumerate() {
        step.reward = feats[t + 1]
            .iter()
            .zip(&feats[t])
            .zip(&traj.skill)
            .map(|((b, a), z)| (b - a) * z)
            .sum();
    }
    Ok(())
}

/// Discounted reward-to-go for every step.
pub fn returns_to_go(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; traj.steps.len()];
    let mut acc = 0.0;
    for (t, step) in traj.steps.iter().enumerate().rev() {
        acc = step.reward + gamma * acc;
        out[t] = acc;
    }
    out
}

/// One policy-gradient sample.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub state: Point,
    pub skill: Vec<f64>,
    pub action: Action,
    pub advantage: f64,
}

/// `mean_i A_i ∇_θ log π(a_i|s_i,z_i)`: the gradient of the surrogate
/// `mean_i A_i log π(a_i|s_i,z_i)`, which is maximized.
pub fn policy_gradient(policy: &EquivariantPolicy, batch: &[PolicySample]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let w = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; policy.num_params()];
    for b in batch {
        policy.accumulate_log_prob_grad(&b.state, &b.skill, &b.action, w * b.advantage, &mut grad)?;
    }
    Ok(grad)
}

/// The surrogate whose gradient [`policy_gradient`] returns.
pub fn policy_surrogate(policy: &EquivariantPolicy, batch: &[PolicySample]) -> Result<f64> {
    let mut total = 0.0;
    for b in batch {
        total += b.advantage * policy.log_prob(&b.state, &b.skill, &b.action)?;
    }
    Ok(total / batch.len() as f64)
}

/// One ascent step of the surrogate; the policy stays equivariant because
/// equivariance lives in its parameterization.
pub fn policy_update(policy: &mut EquivariantPolicy, opt: &mut Adam, batch: &[PolicySample]) -> Result<Vec<f64>> {
    let mut grad = policy_gradient(policy, batch)?;
    check_finite("policy", &grad, || describe_policy_batch(batch))?;
    grad.iter_mut().for_each(|g| *g = -*g);
    opt.step(policy.params_mut(), &grad);
    Ok(grad)
}

fn check_finite(phase: &str, values: &[f64], dump: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            phase: phase.to_string(),
            dump: dump(),
        })
    }
}

fn describe_transitions(batch: &[TransitionSample]) -> String {
    batch
        .iter()
        .take(8)
        .map(|t| format!("s={:?} s'={:?} z={:?}", t.state, t.next_state, t.skill))
        .collect::<Vec<_>>()
        .join("\n")
}

fn describe_policy_batch(batch: &[PolicySample]) -> String {
    batch
        .iter()
        .take(8)
        .map(|b| format!("s={:?} z={:?} a={:?} adv={}", b.state, b.skill, b.action, b.advantage))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Per-epoch metrics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Discriminator objective averaged over the epoch's ascent steps.
    pub j_phi: f64,
    pub lambda: f64,
    /// Mean of `max(0, ‖Δφ‖² − 1)` on the dual batch.
    pub mean_violation: f64,
    /// Dependency estimate on this epoch's episodes under the updated `φ`.
    pub giwdm: f64,
}

impl EpochMetrics {
    pub const HEADER: [&'static str; 5] = ["epoch", "j_phi", "lambda", "mean_violation", "giwdm"];

    pub fn record(&self) -> [String; 5] {
        [
            self.epoch.to_string(),
            format!("{:e}", self.j_phi),
            format!("{:e}", self.lambda),
            format!("{:e}", self.mean_violation),
            format!("{:e}", self.giwdm),
        ]
    }
}

/// Visited-cell statistics of a set of skill rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub fraction: f64,
    /// `counts[row][col]`; row 0 holds the lowest `y`.
    pub counts: Vec<Vec<u64>>,
    /// Positions visited by each skill, in skill order.
    pub paths: Vec<Vec<Point>>,
}

fn bin(x: f64, half_width: f64, cells: usize) -> usize {
    let i = ((x + half_width) / (2.0 * half_width) * cells as f64).floor();
    (i.max(0.0) as usize).min(cells - 1)
}

/// Rolls every skill for `horizon` steps from the environment's start
/// state and bins all visited positions into a `cells × cells` grid over
/// `[−half_width, half_width]²`.
///
/// Discrete policies sample actions; continuous ones use the mean action.
/// `relabel = g` evaluates in the environment whose labels are renamed by
/// `g`: the policy sees `g·s` while sampling walks actions and successor
/// states in the original order. With skills `ρ_F(g)z` the counts are the
/// `g`-rotated counts for skills `z`, so the fraction is unchanged.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_coverage<R: Rng + ?Sized>(
    env: &Env,
    policy: &EquivariantPolicy,
    skills: &[Vec<f64>],
    horizon: usize,
    half_width: f64,
    cells: usize,
    relabel: Element,
    rng: &mut R,
) -> Result<Coverage> {
    if cells == 0 || half_width <= 0.0 {
        return Err(Error::InvalidEnv("coverage region must be non-empty".into()));
    }
    let mut paths: Vec<Vec<Point>> = Vec::with_capacity(skills.len());
    match env {
        Env::Grid(mdp) => {
            for z in skills {
                let mut path = Vec::with_capacity(horizon + 1);
                let mut j = sample_categorical(mdp.init_dist(), rng);
                for t in 0..=horizon {
                    let shown = mdp.coords(mdp.act_on_state(relabel, j));
                    path.push(shown);
                    if t == horizon {
                        break;
                    }
                    let probs = policy.action_probs(&shown, z)?;
                    let q: Vec<f64> = (0..probs.len()).map(|a| probs[mdp.act_on_action(relabel, a)]).collect();
                    let a = sample_categorical(&q, rng);
                    j = mdp.sample_next(j, a, rng)?;
                }
                paths.push(path);
            }
        }
        Env::PointMass(p) => {
            let inv = env.group().inv(relabel);
            for z in skills {
                let mut path = Vec::with_capacity(horizon + 1);
                let mut x = env.reset(rng);
                for t in 0..=horizon {
                    let shown = p.rotate(relabel, &x);
                    path.push(shown);
                    if t == horizon {
                        break;
                    }
                    let a = policy.mean_action(&shown, z)?;
                    x = p.step(&x, &p.rotate(inv, &a), rng);
                }
                paths.push(path);
            }
        }
    }
    let mut counts = vec![vec![0u64; cells]; cells];
    for q in paths.iter().flatten() {
        counts[bin(q[1], half_width, cells)][bin(q[0], half_width, cells)] += 1;
    }
    let total = (cells * cells) as f64;
    let visited = counts.iter().flatten().filter(|c| **c > 0).count() as f64;
    Ok(Coverage {
        fraction: visited / total,
        counts,
        paths,
    })
}

/// `n` skills from the masked prior.
pub fn sample_skill_set<R: Rng + ?Sized>(mask: &FrequencyMask, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| sample_masked_skill(rng, mask).into_vec()).collect()
}

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: Config,
    pub epoch: usize,
    pub phi_sizes: Vec<usize>,
    pub phi_params: Vec<f64>,
    pub policy_sizes: Vec<usize>,
    pub policy_params: Vec<f64>,
    pub value_sizes: Vec<usize>,
    pub value_params: Vec<f64>,
    pub phi_opt: Adam,
    pub policy_opt: Adam,
    pub value_opt: Adam,
    pub lambda: f64,
    pub buffer: ReplayBuffer,
    /// `(stream, word position)`; positions are decimal strings because
    /// they are 128-bit.
    pub rng_positions: Vec<(u64, String)>,
}

pub const CHECKPOINT_FORMAT: u32 = 1;

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {}", ckpt.format)));
        }
        ckpt.config.validate()?;
        Ok(ckpt)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Learned components rebuilt from a config and raw parameters.
pub struct Components {
    pub env: Env,
    pub phi: EquivariantFeatureMap,
    pub policy: EquivariantPolicy,
    pub value: ValueNet,
    pub skill_mask: FrequencyMask,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

impl Components {
    /// Fresh networks initialized from the policy-init stream.
    pub fn init(config: &Config) -> Result<Self> {
        let env = config.build_env()?;
        let rep = config.feature_rep()?;
        let mask = config.mask(&rep)?;
        let mut rng = stream_rng(config.seed, Stream::PolicyInit);
        let phi_net = DiffNet::new(&layer_sizes(2, &config.phi_hidden, rep.total_dim()), &mut rng);
        let policy = EquivariantPolicy::for_env(
            &env,
            rep.clone(),
            &config.policy_hidden,
            config.policy_std,
            config.input_scale(),
            config.equivariant_policy(),
            &mut rng,
        )?;
        let value = ValueNet::new(rep.total_dim(), &config.value_hidden, config.input_scale(), &mut rng);
        Self::assemble(config, env, rep, mask, phi_net, policy, value)
    }

    fn assemble(
        config: &Config,
        env: Env,
        rep: DirectSumRep,
        mask: FrequencyMask,
        phi_net: DiffNet,
        policy: EquivariantPolicy,
        value: ValueNet,
    ) -> Result<Self> {
        let group = env.group().clone();
        let planar = DirectSumRep::planar(&group)?;
        let phi = EquivariantFeatureMap::new(group, phi_net, planar, rep, mask.clone(), config.equivariant_phi())?
            .with_input_scale(config.input_scale());
        // Skills live on the kept blocks even when a fault-injection mask
        // reweights coordinates.
        let skill_mask = FrequencyMask::keep_frequencies(phi.rep(), &config.mask_frequencies);
        Ok(Self {
            env,
            phi,
            policy,
            value,
            skill_mask,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = &ckpt.config;
        let env = config.build_env()?;
        let rep = config.feature_rep()?;
        let mask = config.mask(&rep)?;
        let phi_net = DiffNet::from_params(&ckpt.phi_sizes, ckpt.phi_params.clone())?;
        let policy_net = DiffNet::from_params(&ckpt.policy_sizes, ckpt.policy_params.clone())?;
        let policy = EquivariantPolicy::from_parts(
            env.group().clone(),
            rep.clone(),
            ActionSpace::for_env(&env, config.policy_std),
            policy_net,
            config.input_scale(),
            config.equivariant_policy(),
        )?;
        let value = ValueNet::from_net(
            DiffNet::from_params(&ckpt.value_sizes, ckpt.value_params.clone())?,
            config.input_scale(),
        );
        Self::assemble(config, env, rep, mask, phi_net, policy, value)
    }
}

/// Training state plus the epoch loop.
pub struct Trainer {
    pub config: Config,
    pub env: Env,
    pub phi: EquivariantFeatureMap,
    pub policy: EquivariantPolicy,
    pub value: ValueNet,
    pub phi_opt: Adam,
    pub policy_opt: Adam,
    pub value_opt: Adam,
    pub dual: DualVariable,
    pub buffer: ReplayBuffer,
    pub skill_mask: FrequencyMask,
    pub epoch: usize,
    env_rng: ChaCha8Rng,
    skill_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
}

const TRAINING_STREAMS: [Stream; 4] = [Stream::Env, Stream::Skills, Stream::Batch, Stream::Actions];

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let c = Components::init(&config)?;
        let phi_opt = Adam::new(c.phi.num_params(), config.lr_phi);
        let policy_opt = Adam::new(c.policy.num_params(), config.lr_policy);
        let value_opt = Adam::new(c.value.num_params(), config.lr_value);
        Ok(Self {
            dual: DualVariable::new(config.lambda_init, config.lr_dual),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            env_rng: stream_rng(config.seed, Stream::Env),
            skill_rng: stream_rng(config.seed, Stream::Skills),
            batch_rng: stream_rng(config.seed, Stream::Batch),
            action_rng: stream_rng(config.seed, Stream::Actions),
            env: c.env,
            phi: c.phi,
            policy: c.policy,
            value: c.value,
            skill_mask: c.skill_mask,
            phi_opt,
            policy_opt,
            value_opt,
            epoch: 0,
            config,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let c = Components::from_checkpoint(&ckpt)?;
        let mut rngs: Vec<ChaCha8Rng> = Vec::new();
        for s in TRAINING_STREAMS {
            let pos = ckpt
                .rng_positions
                .iter()
                .find(|(id, _)| *id == s as u64)
                .ok_or_else(|| Error::Checkpoint(format!("missing RNG stream {}", s as u64)))?;
            let word: u128 = pos.1.parse().map_err(|_| Error::Checkpoint("bad RNG position".into()))?;
            let mut rng = stream_rng(ckpt.config.seed, s);
            rng.set_word_pos(word);
            rngs.push(rng);
        }
        let mut it = rngs.into_iter();
        Ok(Self {
            dual: DualVariable::new(ckpt.lambda, ckpt.config.lr_dual),
            env_rng: it.next().unwrap(),
            skill_rng: it.next().unwrap(),
            batch_rng: it.next().unwrap(),
            action_rng: it.next().unwrap(),
            env: c.env,
            phi: c.phi,
            policy: c.policy,
            value: c.value,
            skill_mask: c.skill_mask,
            phi_opt: ckpt.phi_opt,
            policy_opt: ckpt.policy_opt,
            value_opt: ckpt.value_opt,
            buffer: ckpt.buffer,
            epoch: ckpt.epoch,
            config: ckpt.config,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let rngs = [&self.env_rng, &self.skill_rng, &self.batch_rng, &self.action_rng];
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            config: self.config.clone(),
            epoch: self.epoch,
            phi_sizes: self.phi.base_net().sizes().to_vec(),
            phi_params: self.phi.params().to_vec(),
            policy_sizes: self.policy.net().sizes().to_vec(),
            policy_params: self.policy.params().to_vec(),
            value_sizes: self.value.net().sizes().to_vec(),
            value_params: self.value.params().to_vec(),
            phi_opt: self.phi_opt.clone(),
            policy_opt: self.policy_opt.clone(),
            value_opt: self.value_opt.clone(),
            lambda: self.dual.lambda,
            buffer: self.buffer.clone(),
            rng_positions: TRAINING_STREAMS
                .iter()
                .zip(rngs)
                .map(|(s, r)| (*s as u64, r.get_word_pos().to_string()))
                .collect(),
        }
    }

    fn transition_batch(&mut self) -> Result<Vec<TransitionSample>> {
        Ok(self
            .buffer
            .sample(&mut self.batch_rng, self.config.batch_size)?
            .into_iter()
            .map(|t| TransitionSample {
                state: t.state,
                next_state: t.next_state,
                skill: t.skill.clone(),
            })
            .collect())
    }

    /// Collect, then discriminator → dual → policy.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let cfg = self.config.clone();
        let mut trajs = collect_episodes(
            &self.env,
            &self.policy,
            &self.skill_mask,
            cfg.episodes_per_epoch,
            cfg.horizon,
            &mut self.buffer,
            &mut self.skill_rng,
            &mut self.env_rng,
            &mut self.action_rng,
        )?;

        let mut j_sum = 0.0;
        for _ in 0..cfg.phi_steps {
            let batch = self.transition_batch()?;
            let loss = discriminator_loss(&self.phi, self.dual.lambda, &batch, cfg.epsilon)?;
            let mut values = loss.grad.clone();
            values.push(loss.value);
            check_finite("discriminator", &values, || describe_transitions(&batch))?;
            j_sum += loss.value;
            let descent: Vec<f64> = loss.grad.iter().map(|g| -g).collect();
            self.phi_opt.step(self.phi.params_mut(), &descent);
        }

        let mut mean_violation = 0.0;
        for _ in 0..cfg.dual_steps {
            let batch = self.transition_batch()?;
            let mut slack = 0.0;
            let mut violation = 0.0;
            for t in &batch {
                let v = self.phi.lipschitz_violation(&t.state, &t.next_state, cfg.epsilon)?;
                slack += v;
                violation += (-v).max(0.0);
            }
            let n = batch.len() as f64;
            check_finite("dual", &[slack], || describe_transitions(&batch))?;
            self.dual.update(slack / n);
            mean_violation = violation / n;
        }

        for t in trajs.iter_mut() {
            relabel_rewards(&self.phi, t)?;
        }
        self.policy_phase(&trajs)?;
        let giwdm = giwdm_estimate(&self.phi, &trajs)?;
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch: self.epoch,
            j_phi: if cfg.phi_steps > 0 { j_sum / cfg.phi_steps as f64 } else { 0.0 },
            lambda: self.dual.lambda,
            mean_violation,
            giwdm,
        })
    }

    fn policy_phase(&mut self, trajs: &[Trajectory]) -> Result<()> {
        let cfg = &self.config;
        let horizon = cfg.horizon as f64;
        let mut samples = Vec::new();
        let mut targets = Vec::new();
        for traj in trajs {
            let g = returns_to_go(traj, cfg.gamma);
            for (t, step) in traj.steps.iter().enumerate() {
                let remaining = (traj.steps.len() - t) as f64 / horizon;
                let v = self.value.value(&step.state, &traj.skill, remaining);
                samples.push(PolicySample {
                    state: step.state,
                    skill: traj.skill.clone(),
                    action: step.action,
                    advantage: g[t] - v,
                });
                targets.push((step.state, traj.skill.clone(), remaining, g[t]));
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        if var > 1e-24 {
            let sd = var.sqrt();
            samples.iter_mut().for_each(|s| s.advantage = (s.advantage - mean) / sd);
        }
        for _ in 0..cfg.policy_steps {
            policy_update(&mut self.policy, &mut self.policy_opt, &samples)?;
        }
        for _ in 0..cfg.value_steps {
            let mut grad = vec![0.0; self.value.num_params()];
            for (s, z, rem, target) in &targets {
                self.value.accumulate_regression_grad(s, z, *rem, *target, 1.0 / n, &mut grad);
            }
            check_finite("value", &grad, || describe_policy_batch(&samples))?;
            self.value_opt.step(self.value.params_mut(), &grad);
        }
        Ok(())
    }

    /// Coverage of `coverage_skills` skills from a dedicated evaluation
    /// stream, so evaluating never perturbs training.
    pub fn evaluate_coverage(&self) -> Result<Coverage> {
        let mut rng = stream_rng(self.config.seed, Stream::Eval);
        let skills = sample_skill_set(&self.skill_mask, self.config.coverage_skills, &mut rng);
        evaluate_coverage(
            &self.env,
            &self.policy,
            &skills,
            self.config.horizon,
            self.config.region_half_width(),
            self.config.coverage_cells,
            self.env.group().identity(),
            &mut rng,
        )
    }
}
