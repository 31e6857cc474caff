//! Downstream control on top of frozen skills: a high-level policy picks a
//! skill every `K` steps (or when a goal is reached) and the skill policy
//! executes it.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::env::{k_step_kernel_tabular, Env, Point, Step, TabularSymmetricMDP, Trajectory};
use crate::equivariant::FrequencyMask;
use crate::error::{Error, Result};
use crate::groups::{DirectSumRep, Element, FiniteGroup};
use crate::nn::{Adam, DiffNet, Tape};
use crate::policy::EquivariantPolicy;
use crate::training::rollout_mode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiMDPConfig {
    /// Steps per high-level decision, `K ≥ 1`.
    pub interval: usize,
    pub goal_half_width: f64,
    /// A goal counts as reached when closer than this.
    pub reach_threshold: f64,
    /// Primitive steps per episode.
    pub horizon: usize,
}

impl SemiMDPConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 || self.horizon == 0 {
            return Err(Error::Config("interval and horizon must be positive".into()));
        }
        if !(self.goal_half_width > 0.0 && self.reach_threshold > 0.0) {
            return Err(Error::Config("goal region and reach threshold must be positive".into()));
        }
        Ok(())
    }
}

/// SHA-256 of the little-endian bytes of a parameter vector.
pub fn params_checksum(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Skill selector over `(s, goal − s)`. Skills are projected normals: a
/// Gaussian draw `y` around a (symmetrized) mean on the kept coordinates,
/// normalized to `z = y / ‖y‖`.
#[derive(Debug, Clone)]
pub struct HighLevelPolicy {
    group: FiniteGroup,
    planar: DirectSumRep,
    skill_rep: DirectSumRep,
    skill_mask: FrequencyMask,
    net: DiffNet,
    std: f64,
    input_scale: f64,
    symmetrize: bool,
}

/// One high-level draw: the Gaussian sample and the skill it normalizes to.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillChoice {
    pub raw: Vec<f64>,
    pub skill: Vec<f64>,
}

pub struct HighTape {
    tapes: Vec<(Element, Tape)>,
    mean: Vec<f64>,
}

fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

impl HighLevelPolicy {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        group: FiniteGroup,
        skill_rep: DirectSumRep,
        skill_mask: FrequencyMask,
        hidden: &[usize],
        std: f64,
        input_scale: f64,
        symmetrize: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if skill_mask.weights().len() != skill_rep.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: skill_rep.total_dim(),
                got: skill_mask.weights().len(),
            });
        }
        let mut sizes = vec![4];
        sizes.extend_from_slice(hidden);
        sizes.push(skill_rep.total_dim());
        Ok(Self {
            planar: DirectSumRep::planar(&group)?,
            group,
            skill_rep,
            skill_mask,
            net: DiffNet::new(&sizes, rng),
            std,
            input_scale,
            symmetrize,
        })
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn skill_rep(&self) -> &DirectSumRep {
        &self.skill_rep
    }

    fn elements(&self) -> Vec<Element> {
        if self.symmetrize {
            self.group.elements().collect()
        } else {
            vec![self.group.identity()]
        }
    }

    /// `m(s, goal) = M (1/|G|) Σ_g ρ_F(g)ᵀ net(g·s, g·(goal − s))`.
    pub fn forward_cached(&self, s: &Point, goal: &Point) -> HighTape {
        let rel = [goal[0] - s[0], goal[1] - s[1]];
        let elements = self.elements();
        let scale = 1.0 / elements.len() as f64;
        let d = self.skill_rep.total_dim();
        let mut input = [0.0; 4];
        let mut back = vec![0.0; d];
        let mut mean = vec![0.0; d];
        let mut tapes = Vec::with_capacity(elements.len());
        for g in elements {
            self.planar.apply_into(g, s, &mut input[..2]);
            self.planar.apply_into(g, &rel, &mut input[2..]);
            input.iter_mut().for_each(|x| *x *= self.input_scale);
            let tape = self.net.forward_cached(&input);
            self.skill_rep.apply_transpose_into(g, tape.output(), &mut back);
            for (m, b) in mean.iter_mut().zip(&back) {
                *m += scale * b;
            }
            tapes.push((g, tape));
        }
        for (m, w) in mean.iter_mut().zip(self.skill_mask.weights()) {
            *m *= w;
        }
        HighTape { tapes, mean }
    }

    pub fn mean(&self, s: &Point, goal: &Point) -> Vec<f64> {
        self.forward_cached(s, goal).mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &Point, goal: &Point, rng: &mut R) -> SkillChoice {
        let mean = self.mean(s, goal);
        loop {
            let raw: Vec<f64> = mean
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    if self.skill_mask.is_active(i) {
                        m + self.std * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    }
                })
                .collect();
            if let Some(skill) = normalize(&raw) {
                return SkillChoice { raw, skill };
            }
        }
    }

    /// The normalized mean; falls back to the first kept coordinate when
    /// the mean vanishes.
    pub fn mode(&self, s: &Point, goal: &Point) -> SkillChoice {
        let raw = self.mean(s, goal);
        let skill = normalize(&raw).unwrap_or_else(|| {
            let mut e = vec![0.0; raw.len()];
            let i = (0..raw.len()).find(|&i| self.skill_mask.is_active(i)).unwrap_or(0);
            e[i] = 1.0;
            e
        });
        SkillChoice { raw, skill }
    }

    /// Log density of the Gaussian draw on the kept coordinates.
    pub fn log_prob(&self, s: &Point, goal: &Point, raw: &[f64]) -> f64 {
        let mean = self.mean(s, goal);
        let var = self.std * self.std;
        let mut lp = 0.0;
        for (i, (r, m)) in raw.iter().zip(&mean).enumerate() {
            if self.skill_mask.is_active(i) {
                lp += -(r - m).powi(2) / (2.0 * var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
            }
        }
        lp
    }

    /// Adds `weight · ∇_θ log π^h(raw | s, goal)` to `grad`.
    pub fn accumulate_log_prob_grad(&self, s: &Point, goal: &Point, raw: &[f64], weight: f64, grad: &mut [f64]) {
        let tape = self.forward_cached(s, goal);
        let var = self.std * self.std;
        let scale = 1.0 / tape.tapes.len() as f64;
        let c: Vec<f64> = raw
            .iter()
            .zip(&tape.mean)
            .zip(self.skill_mask.weights())
            .map(|((r, m), w)| weight * w * scale * (r - m) / var)
            .collect();
        let mut out_grad = vec![0.0; c.len()];
        for (g, net_tape) in &tape.tapes {
            self.skill_rep.apply_into(*g, &c, &mut out_grad);
            self.net.backward(net_tape, &out_grad, grad);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionReason {
    Start,
    Interval,
    GoalReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub t: usize,
    pub state: Point,
    pub goal: Point,
    pub choice: SkillChoice,
    pub reason: DecisionReason,
}

#[derive(Debug, Clone)]
pub struct HierarchicalEpisode {
    pub total_reward: f64,
    /// Extrinsic reward per primitive step; a goal already satisfied at the
    /// start is credited before step 0 in `initial_reward`.
    pub rewards: Vec<f64>,
    pub initial_reward: f64,
    pub decisions: Vec<Decision>,
    pub trajectory: Trajectory,
    pub goals_reached: usize,
}

fn reached(s: &Point, goal: &Point, threshold: f64) -> bool {
    ((s[0] - goal[0]).powi(2) + (s[1] - goal[1]).powi(2)).sqrt() < threshold
}

/// A goal drawn uniformly from the square of half-width `w` around `s`. On
/// the grid this is a uniformly chosen other cell within the square.
pub fn sample_goal<R: Rng + ?Sized>(env: &Env, s: &Point, w: f64, rng: &mut R) -> Point {
    match env {
        Env::Grid(mdp) => {
            let candidates: Vec<Point> = (0..mdp.num_states())
                .map(|i| mdp.coords(i))
                .filter(|c| c != s && (c[0] - s[0]).abs() <= w && (c[1] - s[1]).abs() <= w)
                .collect();
            if candidates.is_empty() {
                *s
            } else {
                candidates[rng.random_range(0..candidates.len())]
            }
        }
        Env::PointMass(_) => [s[0] + rng.random_range(-w..=w), s[1] + rng.random_range(-w..=w)],
    }
}

/// Runs one downstream episode of exactly `cfg.horizon` primitive steps.
/// A new skill is chosen at the start, every `K` steps since the last
/// choice, and right after every goal event; goals are resampled around
/// the agent when reached.
pub fn run_hierarchical_episode<R: Rng + ?Sized>(
    env: &Env,
    high: &HighLevelPolicy,
    low: &EquivariantPolicy,
    cfg: &SemiMDPConfig,
    initial_goal: Option<Point>,
    stochastic_high: bool,
    rng: &mut R,
) -> Result<HierarchicalEpisode> {
    cfg.validate()?;
    let mut s = env.reset(rng);
    let mut goal = initial_goal.unwrap_or_else(|| sample_goal(env, &s, cfg.goal_half_width, rng));
    let mut initial_reward = 0.0;
    let mut goals_reached = 0;
    if reached(&s, &goal, cfg.reach_threshold) {
        initial_reward = 1.0;
        goals_reached += 1;
        goal = sample_goal(env, &s, cfg.goal_half_width, rng);
    }
    let choose = |s: &Point, goal: &Point, rng: &mut R| {
        if stochastic_high {
            high.sample(s, goal, rng)
        } else {
            high.mode(s, goal)
        }
    };
    let mut decisions = vec![Decision {
        t: 0,
        state: s,
        goal,
        choice: choose(&s, &goal, rng),
        reason: DecisionReason::Start,
    }];
    let mut since = 0;
    let mut pending_goal_event = false;
    let mut rewards = Vec::with_capacity(cfg.horizon);
    let mut steps = Vec::with_capacity(cfg.horizon);
    for t in 0..cfg.horizon {
        if t > 0 && (pending_goal_event || since == cfg.interval) {
            let reason = if pending_goal_event {
                DecisionReason::GoalReached
            } else {
                DecisionReason::Interval
            };
            decisions.push(Decision {
                t,
                state: s,
                goal,
                choice: choose(&s, &goal, rng),
                reason,
            });
            since = 0;
            pending_goal_event = false;
        }
        let z = &decisions.last().unwrap().choice.skill;
        let a = low.sample(&s, z, rng)?;
        let next = env.step(&s, &a, rng)?;
        let mut r = 0.0;
        if reached(&next, &goal, cfg.reach_threshold) {
            r = 1.0;
            goals_reached += 1;
            goal = sample_goal(env, &next, cfg.goal_half_width, rng);
            pending_goal_event = true;
        }
        steps.push(Step {
            state: s,
            action: a,
            reward: r,
            next_state: next,
        });
        rewards.push(r);
        s = next;
        since += 1;
    }
    let skill = decisions[0].choice.skill.clone();
    Ok(HierarchicalEpisode {
        total_reward: initial_reward + rewards.iter().sum::<f64>(),
        rewards,
        initial_reward,
        decisions,
        trajectory: Trajectory { skill, steps },
        goals_reached,
    })
}

/// Where the largest kernel discrepancy was found.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub g: Element,
    pub state: usize,
    pub next_state: usize,
    pub skill_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub max_residual: f64,
    pub witness: Option<Witness>,
}

/// `max |P_k(σ_g s' | σ_g s, ρ_F(g)z) − P_k(s'|s, z)|` over every group
/// element, state pair and listed skill, with both kernels computed
/// exactly.
pub fn verify_semi_mdp_invariance(
    mdp: &TabularSymmetricMDP,
    policy: &dyn Fn(usize, &[f64]) -> Vec<f64>,
    skill_rep: &DirectSumRep,
    skills: &[Vec<f64>],
    k: usize,
) -> Result<InvarianceReport> {
    let mut report = InvarianceReport {
        max_residual: 0.0,
        witness: None,
    };
    for (zi, z) in skills.iter().enumerate() {
        let base = k_step_kernel_tabular(mdp, policy, z, k)?;
        for g in mdp.group().elements() {
            let gz = skill_rep.apply(g, z)?;
            let moved = k_step_kernel_tabular(mdp, policy, &gz, k)?;
            for s in 0..mdp.num_states() {
                let gs = mdp.act_on_state(g, s);
                for t in 0..mdp.num_states() {
                    let d = (moved[gs][mdp.act_on_state(g, t)] - base[s][t]).abs();
                    if d > report.max_residual {
                        report.max_residual = d;
                        report.witness = Some(Witness {
                            g,
                            state: s,
                            next_state: t,
                            skill_index: zi,
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Every `ρ(g)z` for `z` in `seeds`, without duplicates.
pub fn orbit_closure(rep: &DirectSumRep, seeds: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for z in seeds {
        for g in 0..rep.order() {
            let gz = rep.apply(g, z)?;
            let dup = out
                .iter()
                .any(|w| w.iter().zip(&gz).all(|(a, b)| (a - b).abs() < 1e-12));
            if !dup {
                out.push(gz);
            }
        }
    }
    Ok(out)
}

/// Unit skills at `n` equally spaced angles in the first two-dimensional
/// kept block.
pub fn skill_circle(rep: &DirectSumRep, mask: &FrequencyMask, n: usize) -> Result<Vec<Vec<f64>>> {
    let block = rep
        .block_ranges()
        .into_iter()
        .find(|r| r.len() == 2 && mask.is_active(r.start))
        .ok_or_else(|| Error::RepSpec("no kept two-dimensional block".into()))?;
    Ok((0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            let mut z = vec![0.0; rep.total_dim()];
            z[block.start] = a.cos();
            z[block.start + 1] = a.sin();
            z
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct OrbitReport {
    pub original: Trajectory,
    pub transformed: Trajectory,
    /// `max_t ‖g·s_t − s_t^{(g)}‖`.
    pub max_deviation: f64,
}

/// Rolls `(s0, z)` and `(g·s0, ρ_F(g)z)` with the policy's mean action on a
/// deterministic environment and compares the second to the rotated first.
pub fn transform_skill_generalization(
    env: &Env,
    low: &EquivariantPolicy,
    z: &[f64],
    g: Element,
    s0: Point,
    horizon: usize,
) -> Result<OrbitReport> {
    if !env.is_deterministic() {
        return Err(Error::Stochastic);
    }
    // A deterministic environment never draws from this.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let gz = low.skill_rep().apply(g, z)?;
    let original = rollout_mode(env, low, s0, z, horizon, &mut rng)?;
    let transformed = rollout_mode(env, low, env.act_on_state(g, &s0), &gz, horizon, &mut rng)?;
    let max_deviation = original
        .states()
        .iter()
        .zip(transformed.states())
        .map(|(a, b)| {
            let ga = env.act_on_state(g, a);
            ((ga[0] - b[0]).powi(2) + (ga[1] - b[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    Ok(OrbitReport {
        original,
        transformed,
        max_deviation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownstreamConfig {
    pub iterations: usize,
    pub episodes: usize,
    pub lr: f64,
}

/// Policy-gradient training of the high-level policy on the sparse goal
/// reward; the skill policy is only read. Returns the mean episode return
/// of every iteration's batch, starting with the untrained policy.
pub fn train_high_level<R: Rng + ?Sized>(
    env: &Env,
    high: &mut HighLevelPolicy,
    low: &EquivariantPolicy,
    semi: &SemiMDPConfig,
    cfg: &DownstreamConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut opt = Adam::new(high.num_params(), cfg.lr);
    let mut curve = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..=cfg.iterations {
        let episodes = (0..cfg.episodes)
            .map(|_| run_hierarchical_episode(env, high, low, semi, None, true, rng))
            .collect::<Result<Vec<_>>>()?;
        curve.push(episodes.iter().map(|e| e.total_reward).sum::<f64>() / cfg.episodes as f64);
        if it == cfg.iterations {
            break;
        }
        // Return credited to a decision: extrinsic reward from its step on.
        let mut samples = Vec::new();
        for ep in &episodes {
            let mut to_go = vec![0.0; ep.rewards.len() + 1];
            for t in (0..ep.rewards.len()).rev() {
                to_go[t] = ep.rewards[t] + to_go[t + 1];
            }
            for d in &ep.decisions {
                samples.push((d, to_go[d.t]));
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().map(|(_, g)| g).sum::<f64>() / n;
        let sd = (samples.iter().map(|(_, g)| (g - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd < 1e-12 {
            continue;
        }
        let mut grad = vec![0.0; high.num_params()];
        for (d, g) in &samples {
            let adv = (g - mean) / sd;
            high.accumulate_log_prob_grad(&d.state, &d.goal, &d.choice.raw, adv / n, &mut grad);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                phase: "high-level".into(),
                dump: format!("iteration {it}"),
            });
        }
        grad.iter_mut().for_each(|g| *g = -*g);
        opt.step(high.params_mut(), &grad);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_grid_c4, PointMassEnv};
    use crate::testing::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c4_rep() -> (FiniteGroup, DirectSumRep, FrequencyMask) {
        let g = FiniteGroup::cyclic(4).unwrap();
        let rep = DirectSumRep::from_spec(&g, "0x1,1x1,2x1").unwrap();
        let mask = FrequencyMask::keep_frequencies(&rep, &[1]);
        (g, rep, mask)
    }

    fn high(seed: u64, symmetrize: bool) -> HighLevelPolicy {
        let (g, rep, mask) = c4_rep();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HighLevelPolicy::new(g, rep, mask, &[16], 0.5, 0.3, symmetrize, &mut rng).unwrap()
    }

    fn low(env: &Env, seed: u64) -> EquivariantPolicy {
        let (_, rep, _) = c4_rep();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EquivariantPolicy::for_env(env, rep, &[16], 0.3, 0.3, true, &mut rng).unwrap()
    }

    #[test]
    fn checksum_is_stable_and_sensitive() {
        let a = params_checksum(&[1.0, 2.0]);
        assert_eq!(a, params_checksum(&[1.0, 2.0]));
        assert_ne!(a, params_checksum(&[1.0, 2.0000001]));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn high_level_is_equivariant_and_unit_norm() {
        let h = high(1, true);
        let planar = DirectSumRep::planar(&FiniteGroup::cyclic(4).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let s = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let goal = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let g = rng.random_range(0..4);
            let m = h.mode(&s, &goal);
            let gs = planar.apply(g, &s).unwrap();
            let ggoal = planar.apply(g, &goal).unwrap();
            let gm = h.mode(&[gs[0], gs[1]], &[ggoal[0], ggoal[1]]);
            let want = h.skill_rep().apply(g, &m.skill).unwrap();
            assert!(gm.skill.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
            let n: f64 = m.skill.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            let sampled = h.sample(&s, &goal, &mut rng);
            assert!((sampled.skill.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(sampled.skill[0], 0.0);
            assert_eq!(sampled.skill[3], 0.0);
        }
    }

    #[test]
    fn high_level_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let h = high(seed, seed % 2 == 0);
            let (s, goal) = ([0.5, -1.0], [2.0, 1.0]);
            let raw = vec![0.0, 0.7, -0.2, 0.0];
            let mut grad = vec![0.0; h.num_params()];
            h.accumulate_log_prob_grad(&s, &goal, &raw, 1.0, &mut grad);
            let fd = central_difference(h.params(), 1e-5, |p| {
                let mut q = h.clone();
                q.params_mut().copy_from_slice(p);
                q.log_prob(&s, &goal, &raw)
            });
            assert!(relative_error(&grad, &fd) < 1e-4, "seed {seed}");
        }
    }

    fn semi(interval: usize) -> SemiMDPConfig {
        SemiMDPConfig {
            interval,
            goal_half_width: 2.0,
            reach_threshold: 0.5,
            horizon: 30,
        }
    }

    #[test]
    fn episode_length_is_fixed_and_decisions_follow_the_rules() {
        let env = Env::Grid(build_grid_c4(5, 0.1).unwrap());
        let (h, l) = (high(3, true), low(&env, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in [1, 3, 10] {
            for _ in 0..20 {
                let ep = run_hierarchical_episode(&env, &h, &l, &semi(k), None, true, &mut rng).unwrap();
                assert_eq!(ep.trajectory.horizon(), 30);
                assert!(ep.trajectory.is_chained());
                assert_eq!(ep.total_reward, ep.goals_reached as f64);
                let mut last = 0;
                for d in &ep.decisions[1..] {
                    match d.reason {
                        DecisionReason::Interval => assert_eq!(d.t - last, k),
                        DecisionReason::GoalReached => assert_eq!(ep.rewards[d.t - 1], 1.0),
                        DecisionReason::Start => panic!("start decision mid-episode"),
                    }
                    last = d.t;
                }
                if k == 1 {
                    assert_eq!(ep.decisions.len(), 30);
                }
            }
        }
    }

    #[test]
    fn goal_at_start_pays_immediately() {
        let env = Env::Grid(build_grid_c4(5, 0.0).unwrap());
        let (h, l) = (high(5, true), low(&env, 5));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ep = run_hierarchical_episode(&env, &h, &l, &semi(10), Some([0.0, 0.0]), true, &mut rng).unwrap();
        assert_eq!(ep.initial_reward, 1.0);
        assert_ne!(ep.decisions[0].goal, [0.0, 0.0]);
    }

    #[test]
    fn goals_exclude_current_cell_and_stay_in_square() {
        let env = Env::Grid(build_grid_c4(5, 0.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let g = sample_goal(&env, &[2.0, -1.0], 1.0, &mut rng);
            assert_ne!(g, [2.0, -1.0]);
            assert!((g[0] - 2.0).abs() <= 1.0 && (g[1] + 1.0).abs() <= 1.0);
        }
    }

    #[test]
    fn goal_reward_is_invariant() {
        let planar = DirectSumRep::planar(&FiniteGroup::cyclic(4).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let s = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let goal = [s[0] + rng.random_range(-0.7..0.7), s[1] + rng.random_range(-0.7..0.7)];
            for g in 0..4 {
                let gs = planar.apply(g, &s).unwrap();
                let gg = planar.apply(g, &goal).unwrap();
                assert_eq!(reached(&[gs[0], gs[1]], &[gg[0], gg[1]], 0.5), reached(&s, &goal, 0.5));
            }
        }
    }

    #[test]
    fn kernel_invariance_and_fault_detection() {
        let env = Env::Grid(build_grid_c4(5, 0.1).unwrap());
        let l = low(&env, 9);
        let mdp = env.as_tabular().unwrap();
        let (_, rep, mask) = c4_rep();
        let skills = skill_circle(&rep, &mask, 8).unwrap();
        let policy = |s: usize, z: &[f64]| l.action_probs(&mdp.coords(s), z).unwrap();
        for k in 1..=3 {
            let r = verify_semi_mdp_invariance(mdp, &policy, &rep, &skills, k).unwrap();
            assert!(r.max_residual < 1e-9, "k={k}: {}", r.max_residual);
        }
        let broken = |s: usize, z: &[f64]| {
            let mut p = l.action_probs(&mdp.coords(s), z).unwrap();
            if s == 3 {
                p[0] += 0.5;
                let t: f64 = p.iter().sum();
                p.iter_mut().for_each(|x| *x /= t);
            }
            p
        };
        let r = verify_semi_mdp_invariance(mdp, &broken, &rep, &skills, 3).unwrap();
        assert!(r.max_residual > 1e-3);
        assert!(r.witness.is_some());
    }

    #[test]
    fn orbit_generalization_contract() {
        let (g, _, _) = c4_rep();
        let env = Env::PointMass(PointMassEnv::new(g.clone(), 0.25, 5.0, 0.0, 1.0).unwrap());
        let l = low(&env, 10);
        let z = vec![0.0, 0.6, 0.8, 0.0];
        let r = transform_skill_generalization(&env, &l, &z, 0, [0.5, 0.2], 40).unwrap();
        assert_eq!(r.max_deviation, 0.0);
        for h in 1..4 {
            let r = transform_skill_generalization(&env, &l, &z, h, [0.5, 0.2], 40).unwrap();
            assert!(r.max_deviation < 1e-8);
        }
        let noisy = Env::PointMass(PointMassEnv::new(g, 0.25, 5.0, 0.1, 1.0).unwrap());
        assert!(matches!(
            transform_skill_generalization(&noisy, &l, &z, 1, [0.0, 0.0], 5),
            Err(Error::Stochastic)
        ));
    }

    #[test]
    fn orbit_closure_is_closed() {
        let (_, rep, _) = c4_rep();
        let closed = orbit_closure(&rep, &[vec![0.3, 0.4, 0.5, 0.7]]).unwrap();
        assert_eq!(closed.len(), 4);
        let again = orbit_closure(&rep, &closed).unwrap();
        assert_eq!(again.len(), 4);
    }
}
