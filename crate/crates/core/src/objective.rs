//! The skill-discovery objective: skill prior, intrinsic reward, the
//! discriminator and dual losses, and the empirical dependency estimate.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{Point, Trajectory};
use crate::equivariant::{EquivariantFeatureMap, FrequencyMask};
use crate::error::{Error, Result};

/// A unit-norm skill vector in the Fourier feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Skill(Vec<f64>);

impl Skill {
    /// Normalizes `v`; fails on the zero vector.
    pub fn from_direction(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidEnv("skill direction must be non-zero".into()));
        }
        Ok(Self(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Uniform sample on the unit sphere `S^{d−1}` (normalized isotropic
/// Gaussian).
pub fn sample_skill<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Skill {
    assert!(d >= 1, "skill dimension must be positive");
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(s) = Skill::from_direction(v) {
            return s;
        }
    }
}

/// Uniform sample on the unit sphere of the subspace a mask keeps; masked
/// coordinates are zero. Invariant under `ρ_F` whenever the mask is block
/// constant.
pub fn sample_masked_skill<R: Rng + ?Sized>(rng: &mut R, mask: &FrequencyMask) -> Skill {
    let d = mask.weights().len();
    loop {
        let v: Vec<f64> = (0..d)
            .map(|i| {
                let x: f64 = rng.sample(StandardNormal);
                if mask.is_active(i) {
                    x
                } else {
                    0.0
                }
            })
            .collect();
        if let Ok(s) = Skill::from_direction(v) {
            return s;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `r = ⟨φ_F(s') − φ_F(s), z⟩`.
pub fn intrinsic_reward(map: &EquivariantFeatureMap, s: &Point, z: &[f64], next: &Point) -> Result<f64> {
    if z.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            got: z.len(),
        });
    }
    let a = map.forward(s)?;
    let b = map.forward(next)?;
    Ok(b.iter().zip(&a).zip(z).map(|((y, x), w)| (y - x) * w).sum())
}

/// A discriminator training sample `(s, s', z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub state: Point,
    pub next_state: Point,
    pub skill: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorLoss {
    /// `J_φ`, to be maximized.
    pub value: f64,
    /// `∂J_φ/∂θ`.
    pub grad: Vec<f64>,
    /// Batch mean of `min(ε, 1 − ‖Δφ‖²)`.
    pub mean_slack: f64,
}

/// `J_φ = mean[⟨Δφ, z⟩ + λ · min(ε, 1 − ‖Δφ‖²)]` with its parameter
/// gradient. At the kink of the `min` the constraint branch is taken.
pub fn discriminator_loss(
    map: &EquivariantFeatureMap,
    lambda: f64,
    batch: &[TransitionSample],
    epsilon: f64,
) -> Result<DiscriminatorLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; map.num_params()];
    let mut value = 0.0;
    let mut slack_sum = 0.0;
    for sample in batch {
        if sample.skill.len() != map.dim() {
            return Err(Error::DimensionMismatch {
                expected: map.dim(),
                got: sample.skill.len(),
            });
        }
        let t0 = map.forward_cached(&sample.state)?;
        let t1 = map.forward_cached(&sample.next_state)?;
        let delta: Vec<f64> = t1.output().iter().zip(t0.output()).map(|(b, a)| b - a).collect();
        let sq = dot(&delta, &delta);
        let constraint_active = 1.0 - sq <= epsilon;
        let slack = if constraint_active { 1.0 - sq } else { epsilon };
        value += dot(&delta, &sample.skill) + lambda * slack;
        slack_sum += slack;

        let cot: Vec<f64> = delta
            .iter()
            .zip(&sample.skill)
            .map(|(d, z)| {
                let c = if constraint_active { z - 2.0 * lambda * d } else { *z };
                c * inv_b
            })
            .collect();
        map.backward(&t1, &cot, &mut grad);
        let neg: Vec<f64> = cot.iter().map(|c| -c).collect();
        map.backward(&t0, &neg, &mut grad);
    }
    Ok(DiscriminatorLoss {
        value: value * inv_b,
        grad,
        mean_slack: slack_sum * inv_b,
    })
}

/// Lagrange multiplier for the unit-step constraint, kept non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualVariable {
    pub lambda: f64,
    pub lr: f64,
}

impl DualVariable {
    pub fn new(lambda: f64, lr: f64) -> Self {
        Self {
            lambda: lambda.max(0.0),
            lr,
        }
    }

    /// `λ ← max(0, λ − η · mean_slack)`: grows while the constraint is
    /// violated on average, decays when it holds with slack.
    pub fn update(&mut self, mean_slack: f64) -> f64 {
        self.lambda = (self.lambda - self.lr * mean_slack).max(0.0);
        self.lambda
    }
}

/// Mean constraint slack `min(ε, 1 − ‖Δφ‖²)` over a batch.
pub fn mean_slack(map: &EquivariantFeatureMap, batch: &[TransitionSample], epsilon: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for s in batch {
        total += map.lipschitz_violation(&s.state, &s.next_state, epsilon)?;
    }
    Ok(total / batch.len() as f64)
}

/// One dual step on a batch; returns the new `λ`.
pub fn dual_update(
    dual: &mut DualVariable,
    map: &EquivariantFeatureMap,
    batch: &[TransitionSample],
    epsilon: f64,
) -> Result<f64> {
    let slack = mean_slack(map, batch, epsilon)?;
    Ok(dual.update(slack))
}

/// `Σ_t ⟨φ_F(s_{t+1}) − φ_F(s_t), z⟩` accumulated step by step.
pub fn trajectory_return(map: &EquivariantFeatureMap, traj: &Trajectory) -> Result<f64> {
    let states = traj.states();
    let feats = states
        .iter()
        .map(|s| map.forward(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(feats
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).zip(&traj.skill).map(|((b, a), z)| (b - a) * z).sum::<f64>())
        .sum())
}

/// Empirical dependency estimate: mean telescoped return over trajectories.
pub fn giwdm_estimate(map: &EquivariantFeatureMap, trajectories: &[Trajectory]) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for t in trajectories {
        total += trajectory_return(map, t)?;
    }
    Ok(total / trajectories.len() as f64)
}
