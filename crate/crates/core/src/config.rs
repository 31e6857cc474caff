//! Run configuration: a flat TOML table with typed keys. Unknown keys are
//! rejected.

use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::env::{build_grid, Env, PointMassEnv};
use crate::equivariant::FrequencyMask;
use crate::error::{Error, Result};
use crate::groups::{DirectSumRep, FiniteGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Grid,
    PointMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub env: EnvKind,
    /// Cyclic group order; the grid supports 1, 2 and 4.
    pub group_order: usize,
    pub grid_side: usize,
    pub slip: f64,
    pub dt: f64,
    pub arena_radius: f64,
    pub noise_std: f64,
    pub action_max: f64,

    /// Irrep multiplicities of the feature space, e.g. `"0x1,1x1,2x1"`.
    pub rep_blocks: String,
    /// Frequencies skills may use.
    pub mask_frequencies: Vec<usize>,
    /// Per-coordinate mask override. Not block constant in general; used for
    /// fault injection.
    pub mask_coordinates: Option<Vec<f64>>,

    pub phi_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub policy_std: f64,
    pub equivariant_phi: bool,
    pub equivariant_policy: bool,
    /// Unconstrained `φ` and unsymmetrized policy; overrides the two flags
    /// above.
    pub baseline: bool,

    pub lr_phi: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub lr_dual: f64,
    pub epsilon: f64,
    pub lambda_init: f64,
    pub gamma: f64,

    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub horizon: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub phi_steps: usize,
    pub dual_steps: usize,
    pub policy_steps: usize,
    pub value_steps: usize,
    pub seed: u64,

    /// Checkpoint cadence in epochs; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    /// Coverage snapshot cadence in epochs; 0 evaluates only at the end.
    pub coverage_every: usize,
    pub coverage_skills: usize,
    pub coverage_cells: usize,

    /// High-level decision interval `K`.
    pub interval: usize,
    /// Goals are drawn uniformly from a square of this half-width around
    /// the agent.
    pub goal_half_width: f64,
    pub reach_threshold: f64,
    pub downstream_iterations: usize,
    pub downstream_episodes: usize,
    pub downstream_horizon: usize,
    pub high_hidden: Vec<usize>,
    pub high_std: f64,
    pub lr_high: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            env: EnvKind::PointMass,
            group_order: 4,
            grid_side: 5,
            slip: 0.1,
            dt: 0.25,
            arena_radius: 5.0,
            noise_std: 0.0,
            action_max: 1.0,
            rep_blocks: "0x1,1x1,2x1".into(),
            mask_frequencies: vec![1],
            mask_coordinates: None,
            phi_hidden: vec![32, 32],
            policy_hidden: vec![32, 32],
            value_hidden: vec![32, 32],
            policy_std: 0.4,
            equivariant_phi: true,
            equivariant_policy: true,
            baseline: false,
            lr_phi: 1e-3,
            lr_policy: 1e-3,
            lr_value: 1e-3,
            lr_dual: 1e-2,
            epsilon: 1e-3,
            lambda_init: 30.0,
            gamma: 0.99,
            epochs: 200,
            episodes_per_epoch: 8,
            horizon: 50,
            buffer_capacity: 100_000,
            batch_size: 64,
            phi_steps: 32,
            dual_steps: 1,
            policy_steps: 32,
            value_steps: 32,
            seed: 0,
            checkpoint_every: 0,
            coverage_every: 0,
            coverage_skills: 48,
            coverage_cells: 20,
            interval: 10,
            goal_half_width: 2.0,
            reach_threshold: 0.5,
            downstream_iterations: 200,
            downstream_episodes: 8,
            downstream_horizon: 50,
            high_hidden: vec![32],
            high_std: 0.5,
            lr_high: 1e-2,
        }
    }
}

/// A manifest file carries its config under `[config]`.
#[derive(Deserialize)]
struct Wrapped {
    config: toml::Value,
}

fn config_error(e: toml::de::Error) -> Error {
    Error::Config(e.message().to_string())
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(config_error)?;
        let table = match value.get("config") {
            Some(toml::Value::Table(_)) => {
                let w: Wrapped = toml::from_str(text).map_err(config_error)?;
                w.config
            }
            _ => toml::Value::Table(value),
        };
        let cfg: Config = table.try_into().map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("group_order", self.group_order),
            ("epochs", self.epochs),
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("horizon", self.horizon),
            ("buffer_capacity", self.buffer_capacity),
            ("batch_size", self.batch_size),
            ("coverage_skills", self.coverage_skills),
            ("coverage_cells", self.coverage_cells),
            ("interval", self.interval),
            ("downstream_episodes", self.downstream_episodes),
            ("downstream_horizon", self.downstream_horizon),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{key}` must be positive")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("`gamma` must lie in (0, 1]".into()));
        }
        if self.policy_std <= 0.0 || self.high_std <= 0.0 {
            return Err(Error::Config("`policy_std` and `high_std` must be positive".into()));
        }
        if self.epsilon < 0.0 || self.lambda_init < 0.0 {
            return Err(Error::Config("`epsilon` and `lambda_init` must be non-negative".into()));
        }
        Ok(())
    }

    pub fn equivariant_phi(&self) -> bool {
        self.equivariant_phi && !self.baseline
    }

    pub fn equivariant_policy(&self) -> bool {
        self.equivariant_policy && !self.baseline
    }

    pub fn group(&self) -> Result<FiniteGroup> {
        FiniteGroup::cyclic(self.group_order)
    }

    pub fn build_env(&self) -> Result<Env> {
        let group = self.group()?;
        Ok(match self.env {
            EnvKind::Grid => Env::Grid(build_grid(self.grid_side, self.slip, &group)?),
            EnvKind::PointMass => Env::PointMass(PointMassEnv::new(
                group,
                self.dt,
                self.arena_radius,
                self.noise_std,
                self.action_max,
            )?),
        })
    }

    pub fn feature_rep(&self) -> Result<DirectSumRep> {
        DirectSumRep::from_spec(&self.group()?, &self.rep_blocks)
    }

    pub fn mask(&self, rep: &DirectSumRep) -> Result<FrequencyMask> {
        match &self.mask_coordinates {
            Some(w) => {
                if w.len() != rep.total_dim() {
                    return Err(Error::Config(format!(
                        "`mask_coordinates` has {} entries, the feature space has {}",
                        w.len(),
                        rep.total_dim()
                    )));
                }
                Ok(FrequencyMask::from_coordinates(w.clone()))
            }
            None => {
                let mask = FrequencyMask::keep_frequencies(rep, &self.mask_frequencies);
                if mask.active_dim() == 0 {
                    return Err(Error::Config(
                        "`mask_frequencies` keeps no coordinate of the feature space".into(),
                    ));
                }
                Ok(mask)
            }
        }
    }

    /// Half-width of the square region states live in.
    pub fn region_half_width(&self) -> f64 {
        match self.env {
            EnvKind::Grid => self.grid_side as f64 / 2.0,
            EnvKind::PointMass => self.arena_radius,
        }
    }

    /// Networks see states divided by the region half-width.
    pub fn input_scale(&self) -> f64 {
        1.0 / self.region_half_width()
    }
}

/// Named sub-streams of the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Env = 1,
    Skills = 2,
    PolicyInit = 3,
    Batch = 4,
    Actions = 5,
    Eval = 6,
    Downstream = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> rand_chacha::ChaCha8Rng {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
