//! Skill-conditioned policies made exactly equivariant by averaging a base
//! network over the group.
//!
//! Discrete actions: `logit(a|s,z) = (1/|G|) Σ_g L(g·s, ρ_F(g)z)[σ_g a]`.
//! Continuous actions: the Gaussian mean is
//! `μ(s,z) = (1/|G|) Σ_g R(g)ᵀ μ_θ(g·s, ρ_F(g)z)` with isotropic noise.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{sample_categorical, Action, Env, Point};
use crate::error::{Error, Result};
use crate::groups::{DirectSumRep, Element, FiniteGroup};
use crate::nn::{DiffNet, Tape};

#[derive(Debug, Clone)]
pub enum ActionSpace {
    /// `action_perm[g][a] = σ_g(a)`.
    Discrete { action_perm: Vec<Vec<usize>> },
    /// Planar velocity with fixed exploration standard deviation. The mean
    /// is squashed radially to norm below `max`.
    Continuous { std: f64, max: f64 },
}

impl ActionSpace {
    pub fn for_env(env: &Env, std: f64) -> Self {
        match env {
            Env::Grid(m) => ActionSpace::Discrete {
                action_perm: env
                    .group()
                    .elements()
                    .map(|g| (0..m.num_actions()).map(|a| m.act_on_action(g, a)).collect())
                    .collect(),
            },
            Env::PointMass(p) => ActionSpace::Continuous {
                std,
                max: p.action_max,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquivariantPolicy {
    group: FiniteGroup,
    state_rep: DirectSumRep,
    skill_rep: DirectSumRep,
    space: ActionSpace,
    net: DiffNet,
    input_scale: f64,
    symmetrize: bool,
}

#[derive(Debug, Clone)]
pub struct PolicyTape {
    tapes: Vec<(Element, Tape)>,
    /// Group-averaged network output before the radial squash.
    pre: Vec<f64>,
    /// Logits or the mean action.
    output: Vec<f64>,
}

impl PolicyTape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

impl EquivariantPolicy {
    /// A policy for `env` whose base network has the given hidden sizes.
    pub fn for_env<R: Rng + ?Sized>(
        env: &Env,
        skill_rep: DirectSumRep,
        hidden: &[usize],
        std: f64,
        input_scale: f64,
        symmetrize: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let group = env.group().clone();
        if skill_rep.order() != group.order() {
            return Err(Error::RepSpec("skill representation over a different group".into()));
        }
        let space = ActionSpace::for_env(env, std);
        let out = match env {
            Env::Grid(m) => m.num_actions(),
            Env::PointMass(_) => 2,
        };
        let mut sizes = vec![2 + skill_rep.total_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(out);
        let net = DiffNet::new(&sizes, rng);
        Self::from_parts(group, skill_rep, space, net, input_scale, symmetrize)
    }

    pub fn from_parts(
        group: FiniteGroup,
        skill_rep: DirectSumRep,
        space: ActionSpace,
        net: DiffNet,
        input_scale: f64,
        symmetrize: bool,
    ) -> Result<Self> {
        let state_rep = DirectSumRep::planar(&group)?;
        let out = match &space {
            ActionSpace::Discrete { action_perm } => action_perm.first().map_or(0, Vec::len),
            ActionSpace::Continuous { .. } => 2,
        };
        if net.input_dim() != 2 + skill_rep.total_dim() || net.output_dim() != out {
            return Err(Error::DimensionMismatch {
                expected: 2 + skill_rep.total_dim(),
                got: net.input_dim(),
            });
        }
        Ok(Self {
            group,
            state_rep,
            skill_rep,
            space,
            net,
            input_scale,
            symmetrize,
        })
    }

    pub fn group(&self) -> &FiniteGroup {
        &self.group
    }

    pub fn skill_rep(&self) -> &DirectSumRep {
        &self.skill_rep
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn net(&self) -> &DiffNet {
        &self.net
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrize
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.space, ActionSpace::Discrete { .. })
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

    fn elements(&self) -> Vec<Element> {
        if self.symmetrize {
            self.group.elements().collect()
        } else {
            vec![self.group.identity()]
        }
    }

    fn check_skill(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.skill_rep.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.skill_rep.total_dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, s: &Point, z: &[f64]) -> Result<PolicyTape> {
        self.check_skill(z)?;
        let elements = self.elements();
        let scale = 1.0 / elements.len() as f64;
        let d = self.skill_rep.total_dim();
        let mut input = vec![0.0; 2 + d];
        let mut out = vec![0.0; self.net.output_dim()];
        let mut tapes = Vec::with_capacity(elements.len());
        for g in elements {
            self.state_rep.apply_into(g, s, &mut input[..2]);
            input[..2].iter_mut().for_each(|x| *x *= self.input_scale);
            self.skill_rep.apply_into(g, z, &mut input[2..]);
            let tape = self.net.forward_cached(&input);
            match &self.space {
                ActionSpace::Discrete { action_perm } => {
                    for (a, o) in out.iter_mut().enumerate() {
                        *o += scale * tape.output()[action_perm[g][a]];
                    }
                }
                ActionSpace::Continuous { .. } => {
                    let mut back = [0.0; 2];
                    self.state_rep.apply_transpose_into(g, tape.output(), &mut back);
                    out[0] += scale * back[0];
                    out[1] += scale * back[1];
                }
            }
            tapes.push((g, tape));
        }
        let pre = out.clone();
        if let ActionSpace::Continuous { max, .. } = self.space {
            let k = max / (1.0 + out[0] * out[0] + out[1] * out[1]).sqrt();
            out[0] *= k;
            out[1] *= k;
        }
        Ok(PolicyTape { tapes, pre, output: out })
    }

    /// Accumulates the parameter gradient of `⟨cotangent, output⟩`.
    pub fn backward(&self, tape: &PolicyTape, cotangent: &[f64], param_grad: &mut [f64]) {
        let scale = 1.0 / tape.tapes.len() as f64;
        let mut cotangent = cotangent.to_vec();
        if let ActionSpace::Continuous { max, .. } = self.space {
            // μ = max·v/√(1+‖v‖²) has the symmetric Jacobian
            // max·(k I − k³ v vᵀ) with k = (1+‖v‖²)^{-1/2}.
            let v = &tape.pre;
            let k = 1.0 / (1.0 + v[0] * v[0] + v[1] * v[1]).sqrt();
            let vc = v[0] * cotangent[0] + v[1] * cotangent[1];
            for i in 0..2 {
                cotangent[i] = max * (k * cotangent[i] - k * k * k * v[i] * vc);
            }
        }
        let cotangent = &cotangent;
        let mut out_grad = vec![0.0; self.net.output_dim()];
        for (g, net_tape) in &tape.tapes {
            match &self.space {
                ActionSpace::Discrete { action_perm } => {
                    for (a, c) in cotangent.iter().enumerate() {
                        out_grad[action_perm[*g][a]] = scale * c;
                    }
                }
                ActionSpace::Continuous { .. } => {
                    self.state_rep.apply_into(*g, cotangent, &mut out_grad);
                    out_grad.iter_mut().for_each(|x| *x *= scale);
                }
            }
            self.net.backward(net_tape, &out_grad, param_grad);
        }
    }

    /// `π(·|s, z)` over discrete actions.
    pub fn action_probs(&self, s: &Point, z: &[f64]) -> Result<Vec<f64>> {
        if !self.is_discrete() {
            return Err(Error::InvalidEnv("action probabilities need a discrete policy".into()));
        }
        Ok(softmax(self.forward_cached(s, z)?.output()))
    }

    /// Mean velocity command of a continuous policy.
    pub fn mean_action(&self, s: &Point, z: &[f64]) -> Result<Point> {
        if self.is_discrete() {
            return Err(Error::InvalidEnv("mean action needs a continuous policy".into()));
        }
        let out = self.forward_cached(s, z)?.output;
        Ok([out[0], out[1]])
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &Point, z: &[f64], rng: &mut R) -> Result<Action> {
        let tape = self.forward_cached(s, z)?;
        Ok(match &self.space {
            ActionSpace::Discrete { .. } => Action::Discrete(sample_categorical(&softmax(&tape.output), rng)),
            ActionSpace::Continuous { std, .. } => {
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                Action::Continuous([tape.output[0] + std * e0, tape.output[1] + std * e1])
            }
        })
    }

    /// The most likely action: the first maximizer for discrete actions,
    /// the mean for continuous ones.
    pub fn mode(&self, s: &Point, z: &[f64]) -> Result<Action> {
        let out = self.forward_cached(s, z)?.output;
        Ok(match &self.space {
            ActionSpace::Discrete { .. } => {
                let mut best = 0;
                for (a, l) in out.iter().enumerate() {
                    if *l > out[best] {
                        best = a;
                    }
                }
                Action::Discrete(best)
            }
            ActionSpace::Continuous { .. } => Action::Continuous([out[0], out[1]]),
        })
    }

    fn output_cotangent(&self, output: &[f64], action: &Action) -> Result<(f64, Vec<f64>)> {
        match (&self.space, action) {
            (ActionSpace::Discrete { .. }, Action::Discrete(a)) => {
                if *a >= output.len() {
                    return Err(Error::OutOfRange {
                        index: *a,
                        size: output.len(),
                    });
                }
                let p = softmax(output);
                let c = p.iter().enumerate().map(|(b, q)| (b == *a) as u8 as f64 - q).collect();
                Ok((p[*a].ln(), c))
            }
            (ActionSpace::Continuous { std, .. }, Action::Continuous(v)) => {
                let var = std * std;
                let d = [v[0] - output[0], v[1] - output[1]];
                let lp = -(d[0] * d[0] + d[1] * d[1]) / (2.0 * var)
                    - (2.0 * std::f64::consts::PI * var).ln();
                Ok((lp, vec![d[0] / var, d[1] / var]))
            }
            _ => Err(Error::InvalidEnv("action kind does not match policy".into())),
        }
    }

    pub fn log_prob(&self, s: &Point, z: &[f64], action: &Action) -> Result<f64> {
        let tape = self.forward_cached(s, z)?;
        Ok(self.output_cotangent(&tape.output, action)?.0)
    }

    /// Adds `weight · ∇_θ log π(a|s,z)` to `grad`; returns `log π(a|s,z)`.
    pub fn accumulate_log_prob_grad(
        &self,
        s: &Point,
        z: &[f64],
        action: &Action,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let tape = self.forward_cached(s, z)?;
        let (lp, mut c) = self.output_cotangent(&tape.output, action)?;
        if weight != 0.0 {
            c.iter_mut().for_each(|x| *x *= weight);
            self.backward(&tape, &c, grad);
        }
        Ok(lp)
    }
}

/// State-value baseline over `[s, z, remaining-time fraction]`.
#[derive(Debug, Clone)]
pub struct ValueNet {
    net: DiffNet,
    input_scale: f64,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(skill_dim: usize, hidden: &[usize], input_scale: f64, rng: &mut R) -> Self {
        let mut sizes = vec![3 + skill_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            net: DiffNet::new(&sizes, rng),
            input_scale,
        }
    }

    pub fn from_net(net: DiffNet, input_scale: f64) -> Self {
        Self { net, input_scale }
    }

    pub fn net(&self) -> &DiffNet {
        &self.net
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

    fn input(&self, s: &Point, z: &[f64], remaining: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 + z.len());
        x.push(s[0] * self.input_scale);
        x.push(s[1] * self.input_scale);
        x.extend_from_slice(z);
        x.push(remaining);
        x
    }

    pub fn value(&self, s: &Point, z: &[f64], remaining: f64) -> f64 {
        self.net.forward(&self.input(s, z, remaining))[0]
    }

    /// Adds the gradient of `½ (V − target)²` scaled by `weight`; returns
    /// the prediction.
    pub fn accumulate_regression_grad(
        &self,
        s: &Point,
        z: &[f64],
        remaining: f64,
        target: f64,
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let tape = self.net.forward_cached(&self.input(s, z, remaining));
        let v = tape.output()[0];
        self.net.backward(&tape, &[weight * (v - target)], grad);
        v
    }
}
