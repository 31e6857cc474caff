//! The `gisd` command line: training, the invariance battery, evaluation
//! and downstream training.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{stream_rng, Config, EnvKind, Stream};
use crate::env::{
    build_grid, occupancy_recursion, PointMassEnv, temporal_distance, uniform_policy, Env, Point, TabularSymmetricMDP, Trajectory,
};
use crate::equivariant::EquivariantFeatureMap;
use crate::error::{Error, Result};
use crate::groups::{cyclic_irreps, fourier_analyze, fourier_synthesize, schur_cross_average, DirectSumRep};
use crate::hierarchy::{
    orbit_closure, params_checksum, run_hierarchical_episode, sample_goal, train_high_level, transform_skill_generalization,
    verify_semi_mdp_invariance, DecisionReason, DownstreamConfig, HighLevelPolicy, SemiMDPConfig,
};
use crate::nn::DiffNet;
use crate::objective::{giwdm_estimate, intrinsic_reward, sample_masked_skill, trajectory_return};
use crate::output::{write_coverage_grid, write_trajectories, CsvSink, RunManifest};
use crate::policy::{ActionSpace, EquivariantPolicy};
use crate::testing::{gaussian_vec, max_abs_diff};
use crate::training::{
    evaluate_coverage, relabel_rewards, rollout, rollout_mode, sample_skill_set, Checkpoint, Components, EpochMetrics,
    Trainer,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;
pub const EXIT_NAN: i32 = 3;

/// Residual bound for the exact checks.
pub const EXACT_TOL: f64 = 1e-9;
/// Residual bound for checks that go through value iteration.
pub const ITERATIVE_TOL: f64 = 1e-8;
pub const ORBIT_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "gisd", version, about = "Group-invariant skill discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train skills and write metrics, trajectories, checkpoints and coverage.
    TrainSkills(CommonArgs),
    /// Run the exact invariance battery and print a pass/fail table.
    CheckInvariants(CommonArgs),
    /// Evaluate a skill checkpoint.
    Eval(EvalArgs),
    /// Train a high-level policy over frozen skills.
    TrainDownstream(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML config; a run manifest also works.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Skill checkpoint to resume from or evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    mode: EvalMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Coverage,
    Downstream,
    OrbitGeneralization,
}

enum Failure {
    Error(Error),
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::TrainSkills(a) => train_skills(&a),
        Command::CheckInvariants(a) => check_invariants(&a),
        Command::Eval(a) => eval(&a.common, a.mode),
        Command::TrainDownstream(a) => train_downstream(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant failure: {msg}");
            EXIT_INVARIANT
        }
        Err(Failure::Error(Error::NonFinite { phase, dump })) => {
            eprintln!("error: non-finite value during {phase}; aborting");
            eprintln!("{dump}");
            EXIT_NAN
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require_checkpoint(args: &CommonArgs, what: &str) -> Result<Checkpoint> {
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{what} requires `--checkpoint` (a skill checkpoint)")))?;
    Checkpoint::load(path)
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Rollouts of the given skills from the start state with intrinsic
/// rewards: sampled actions on the grid, mean actions on the point mass.
pub fn evaluation_trajectories(
    env: &Env,
    policy: &EquivariantPolicy,
    phi: &EquivariantFeatureMap,
    skills: &[Vec<f64>],
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    let mut action_rng = rng.clone();
    action_rng.set_stream(rng.get_stream() + 1000);
    skills
        .iter()
        .map(|z| {
            let s0 = env.reset(rng);
            let mut traj = if policy.is_discrete() {
                rollout(env, policy, s0, z, horizon, rng, &mut action_rng)?
            } else {
                rollout_mode(env, policy, s0, z, horizon, rng)?
            };
            relabel_rewards(phi, &mut traj)?;
            Ok(traj)
        })
        .collect()
}

fn train_skills(args: &CommonArgs) -> CliResult {
    let mut trainer = match &args.checkpoint {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            if let Some(p) = &args.config {
                // Only the schedule may change on resume.
                let cfg = Config::load(p)?;
                ckpt.config.epochs = cfg.epochs;
                ckpt.config.checkpoint_every = cfg.checkpoint_every;
                ckpt.config.coverage_every = cfg.coverage_every;
            }
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(load_config(args)?)?,
    };
    let cfg = trainer.config.clone();
    let dir = &args.out_dir;
    prepare_out_dir(dir)?;
    let mut manifest = RunManifest::new("train-skills", &cfg);

    let mut metrics = CsvSink::create(&dir.join("metrics.csv"), &EpochMetrics::HEADER)?;
    manifest.add_output("metrics.csv");
    let result = (|| -> Result<()> {
        while trainer.epoch < cfg.epochs {
            let m = trainer.run_epoch()?;
            metrics.row(m.record())?;
            let e = trainer.epoch;
            if e == cfg.epochs {
                break;
            }
            if cfg.checkpoint_every > 0 && e % cfg.checkpoint_every == 0 {
                let name = format!("checkpoint-epoch{e:05}.json");
                std::fs::write(dir.join(&name), trainer.checkpoint().to_json())?;
                manifest.add_output(name);
            }
            if cfg.coverage_every > 0 && e % cfg.coverage_every == 0 {
                let name = format!("coverage-epoch{e:05}.txt");
                let cov = trainer.evaluate_coverage()?;
                write_coverage_grid(&dir.join(&name), &cov)?;
                manifest.add_output(name);
                println!("epoch {e}: coverage {:.4}", cov.fraction);
            }
        }
        Ok(())
    })();
    metrics.finish()?;
    if let Err(e) = result {
        manifest.write(dir)?;
        return Err(e.into());
    }

    let mut rng = stream_rng(cfg.seed, Stream::Eval);
    let skills = sample_skill_set(&trainer.skill_mask, cfg.coverage_skills, &mut rng);
    let trajs = evaluation_trajectories(&trainer.env, &trainer.policy, &trainer.phi, &skills, cfg.horizon, &mut rng)?;
    write_trajectories(&dir.join("trajectories.csv"), &trajs)?;
    manifest.add_output("trajectories.csv");

    std::fs::write(dir.join("checkpoint-final.json"), trainer.checkpoint().to_json())?;
    manifest.add_output("checkpoint-final.json");

    let cov = trainer.evaluate_coverage()?;
    write_coverage_grid(&dir.join("coverage-final.txt"), &cov)?;
    manifest.add_output("coverage-final.txt");
    manifest.write(dir)?;
    println!("trained {} epochs; final coverage {:.4}", trainer.epoch, cov.fraction);
    Ok(())
}

/// One row of the invariance battery.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    /// `None` when the check does not apply to this configuration.
    pub residual: Option<f64>,
    pub threshold: f64,
}

impl CheckRow {
    fn new(name: &str, residual: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            residual: Some(residual),
            threshold,
        }
    }

    fn skipped(name: &str) -> Self {
        Self {
            name: name.into(),
            residual: None,
            threshold: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.residual.is_none_or(|r| r <= self.threshold)
    }
}

const BATTERY_CASES: usize = 1000;

fn random_point<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> Point {
    [rng.random_range(-half_width..half_width), rng.random_range(-half_width..half_width)]
}

/// The tabular environment the kernel checks run on: the configured grid,
/// or a 5×5 companion grid for point-mass configs whose group acts on it.
fn tabular_for(cfg: &Config) -> Result<Option<TabularSymmetricMDP>> {
    let group = cfg.group()?;
    if 4 % group.order() != 0 {
        return Ok(None);
    }
    Ok(Some(match cfg.env {
        EnvKind::Grid => build_grid(cfg.grid_side, cfg.slip, &group)?,
        EnvKind::PointMass => build_grid(5, cfg.slip, &group)?,
    }))
}

/// Runs every exact invariance check for `cfg` with fresh random networks.
pub fn invariance_battery(cfg: &Config) -> Result<Vec<CheckRow>> {
    let mut rng = stream_rng(cfg.seed, Stream::Eval);
    let group = cfg.group()?;
    let rep = cfg.feature_rep()?;
    let mask = cfg.mask(&rep)?;
    let planar = DirectSumRep::planar(&group)?;
    let env = cfg.build_env()?;
    let c = Components::init(cfg)?;
    let w = cfg.region_half_width();
    let mut rows = Vec::new();

    // Feature map over random parameters, states and group elements.
    let mut phi_res: f64 = 0.0;
    for _ in 0..10 {
        let net = DiffNet::new(c.phi.base_net().sizes(), &mut rng);
        let phi = EquivariantFeatureMap::new(group.clone(), net, planar.clone(), rep.clone(), mask.clone(), cfg.equivariant_phi())?
            .with_input_scale(cfg.input_scale());
        for _ in 0..BATTERY_CASES / 10 {
            let s = random_point(&mut rng, w);
            let g = rng.random_range(0..group.order());
            let lhs = phi.forward(&planar.apply(g, &s)?)?;
            let rhs = rep.apply(g, &phi.forward(&s)?)?;
            phi_res = phi_res.max(max_abs_diff(&lhs, &rhs));
        }
    }
    rows.push(CheckRow::new("feature-map equivariance", phi_res, EXACT_TOL));

    let mut pol_res: f64 = 0.0;
    let mut rew_res: f64 = 0.0;
    for _ in 0..BATTERY_CASES {
        let s = env.reset(&mut rng);
        let s = match &env {
            Env::Grid(m) => m.coords(rng.random_range(0..m.num_states())),
            Env::PointMass(_) => [s[0] + rng.random_range(-w..w), s[1] + rng.random_range(-w..w)],
        };
        let z = sample_masked_skill(&mut rng, &c.skill_mask).into_vec();
        let g = rng.random_range(0..group.order());
        let gs = env.act_on_state(g, &s);
        let gz = rep.apply(g, &z)?;
        match c.policy.space() {
            ActionSpace::Discrete { action_perm } => {
                let p = c.policy.action_probs(&s, &z)?;
                let q = c.policy.action_probs(&gs, &gz)?;
                for (a, pa) in p.iter().enumerate() {
                    pol_res = pol_res.max((q[action_perm[g][a]] - pa).abs());
                }
            }
            ActionSpace::Continuous { .. } => {
                let m = c.policy.mean_action(&s, &z)?;
                let gm = c.policy.mean_action(&gs, &gz)?;
                pol_res = pol_res.max(max_abs_diff(&gm, &planar.apply(g, &m)?));
            }
        }
        let next = random_point(&mut rng, w);
        let r = intrinsic_reward(&c.phi, &s, &z, &next)?;
        let gr = intrinsic_reward(&c.phi, &gs, &gz, &env.act_on_state(g, &next))?;
        rew_res = rew_res.max((r - gr).abs());
    }
    rows.push(CheckRow::new("policy equivariance", pol_res, EXACT_TOL));
    rows.push(CheckRow::new("intrinsic reward invariance", rew_res, EXACT_TOL));

    let irreps = cyclic_irreps(&group)?;
    let mut fourier_res: f64 = 0.0;
    for _ in 0..100 {
        let f = gaussian_vec(&mut rng, group.order(), 1.0);
        let back = fourier_synthesize(&group, &irreps, &fourier_analyze(&group, &irreps, &f)?)?;
        fourier_res = fourier_res.max(max_abs_diff(&f, &back));
    }
    rows.push(CheckRow::new("fourier round trip", fourier_res, EXACT_TOL));
    let mut schur_res: f64 = 0.0;
    for (i, a) in irreps.iter().enumerate() {
        for b in &irreps[i + 1..] {
            schur_res = schur_res.max(schur_cross_average(&group, a, b).norm());
        }
    }
    rows.push(CheckRow::new("schur cross averages", schur_res, EXACT_TOL));

    let env_res = match &env {
        Env::Grid(m) => m.invariance_residual(),
        Env::PointMass(p) => {
            // The deterministic core; noise is isotropic by construction.
            let core = PointMassEnv::new(group.clone(), cfg.dt, cfg.arena_radius, 0.0, p.action_max)?;
            let mut worst: f64 = 0.0;
            for _ in 0..BATTERY_CASES {
                let s = random_point(&mut rng, w);
                let a = random_point(&mut rng, 2.0 * p.action_max);
                let g = rng.random_range(0..group.order());
                let lhs = core.step(&core.rotate(g, &s), &core.rotate(g, &a), &mut rng);
                let rhs = core.rotate(g, &core.step(&s, &a, &mut rng));
                worst = worst.max(max_abs_diff(&lhs, &rhs));
            }
            worst
        }
    };
    rows.push(CheckRow::new("environment symmetry", env_res, EXACT_TOL));

    match tabular_for(cfg)? {
        Some(mdp) => {
            let tab_env = Env::Grid(mdp);
            let policy = EquivariantPolicy::for_env(
                &tab_env,
                rep.clone(),
                &cfg.policy_hidden,
                cfg.policy_std,
                1.0 / 2.5,
                cfg.equivariant_policy(),
                &mut rng,
            )?;
            let mdp = tab_env.as_tabular()?;
            let pi = |s: usize, z: &[f64]| policy.action_probs(&mdp.coords(s), z).expect("skill dimension checked");
            let seeds: Vec<Vec<f64>> = (0..3).map(|_| sample_masked_skill(&mut rng, &c.skill_mask).into_vec()).collect();
            let skills = orbit_closure(&rep, &seeds)?;
            for k in 1..=3 {
                let report = verify_semi_mdp_invariance(mdp, &pi, &rep, &skills, k)?;
                rows.push(CheckRow::new(&format!("{k}-step kernel invariance"), report.max_residual, EXACT_TOL));
            }
            let mut occ_res: f64 = 0.0;
            for z in &skills {
                let base = occupancy_recursion(mdp, &pi, z, 20);
                for g in group.elements() {
                    let moved = occupancy_recursion(mdp, &pi, &rep.apply(g, z)?, 20);
                    for (p, q) in base.iter().zip(&moved) {
                        for s in 0..mdp.num_states() {
                            occ_res = occ_res.max((q[mdp.act_on_state(g, s)] - p[s]).abs());
                        }
                    }
                }
            }
            rows.push(CheckRow::new("occupancy invariance (T=20)", occ_res, EXACT_TOL));
            let d = temporal_distance(mdp, &uniform_policy(mdp), 1e-10);
            let mut td_res: f64 = 0.0;
            for g in group.elements() {
                for a in 0..mdp.num_states() {
                    for b in 0..mdp.num_states() {
                        let x = d[a][b];
                        let y = d[mdp.act_on_state(g, a)][mdp.act_on_state(g, b)];
                        if x.is_finite() || y.is_finite() {
                            td_res = td_res.max((x - y).abs());
                        }
                    }
                }
            }
            rows.push(CheckRow::new("temporal distance invariance", td_res, ITERATIVE_TOL));
        }
        None => {
            for name in [
                "1-step kernel invariance",
                "2-step kernel invariance",
                "3-step kernel invariance",
                "occupancy invariance (T=20)",
                "temporal distance invariance",
            ] {
                rows.push(CheckRow::skipped(name));
            }
        }
    }

    // Telescoping and estimator invariance on sampled trajectories.
    let mut env_rng = rng.clone();
    env_rng.set_stream(Stream::Env as u64 + 1000);
    let mut trajs = Vec::new();
    for _ in 0..8 {
        let z = sample_masked_skill(&mut rng, &c.skill_mask).into_vec();
        let s0 = env.reset(&mut env_rng);
        let mut t = rollout(&env, &c.policy, s0, &z, 20, &mut env_rng, &mut rng)?;
        relabel_rewards(&c.phi, &mut t)?;
        trajs.push(t);
    }
    let mut tele_res: f64 = 0.0;
    for t in &trajs {
        let sum: f64 = t.steps.iter().map(|s| s.reward).sum();
        tele_res = tele_res.max((sum - trajectory_return(&c.phi, t)?).abs());
    }
    rows.push(CheckRow::new("telescoping", tele_res, EXACT_TOL));
    let base = giwdm_estimate(&c.phi, &trajs)?;
    let mut est_res: f64 = 0.0;
    for g in group.elements() {
        let moved: Vec<Trajectory> = trajs
            .iter()
            .map(|t| {
                Ok(Trajectory {
                    skill: rep.apply(g, &t.skill)?,
                    steps: t
                        .steps
                        .iter()
                        .map(|s| crate::env::Step {
                            state: env.act_on_state(g, &s.state),
                            action: env.act_on_action(g, &s.action),
                            reward: s.reward,
                            next_state: env.act_on_state(g, &s.next_state),
                        })
                        .collect(),
                })
            })
            .collect::<Result<_>>()?;
        est_res = est_res.max((giwdm_estimate(&c.phi, &moved)? - base).abs());
    }
    rows.push(CheckRow::new("estimator invariance", est_res, EXACT_TOL));
    Ok(rows)
}

fn check_invariants(args: &CommonArgs) -> CliResult {
    let cfg = load_config(args)?;
    let rows = invariance_battery(&cfg)?;
    let mut table = format!("{:<32} {:>12} {:>10}  result\n", "check", "residual", "bound");
    for row in &rows {
        let line = match row.residual {
            Some(r) => format!(
                "{:<32} {:>12.3e} {:>10.0e}  {}\n",
                row.name,
                r,
                row.threshold,
                if row.passed() { "pass" } else { "FAIL" }
            ),
            None => format!("{:<32} {:>12} {:>10}  skipped\n", row.name, "-", "-"),
        };
        table.push_str(&line);
    }
    // A closed pipe (e.g. `| head`) must not turn a result into a panic.
    let _ = std::io::Write::write_all(&mut std::io::stdout(), table.as_bytes());
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(failed.join(", ")))
    }
}

fn eval(args: &CommonArgs, mode: EvalMode) -> CliResult {
    let what = match mode {
        EvalMode::Coverage => "eval --mode coverage",
        EvalMode::Downstream => "eval --mode downstream",
        EvalMode::OrbitGeneralization => "eval --mode orbit-generalization",
    };
    let ckpt = require_checkpoint(args, what)?;
    let mut cfg = ckpt.config.clone();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let c = Components::from_checkpoint(&ckpt)?;
    if mode == EvalMode::OrbitGeneralization && !c.env.is_deterministic() {
        return Err(Error::Stochastic.into());
    }
    let dir = &args.out_dir;
    prepare_out_dir(dir)?;
    let mut manifest = RunManifest::new(what, &cfg);
    let mut rng = stream_rng(cfg.seed, Stream::Eval);
    match mode {
        EvalMode::Coverage => {
            let skills = sample_skill_set(&c.skill_mask, cfg.coverage_skills, &mut rng);
            let cov = evaluate_coverage(
                &c.env,
                &c.policy,
                &skills,
                cfg.horizon,
                cfg.region_half_width(),
                cfg.coverage_cells,
                c.env.group().identity(),
                &mut rng,
            )?;
            write_coverage_grid(&dir.join("coverage.txt"), &cov)?;
            manifest.add_output("coverage.txt");
            let trajs = evaluation_trajectories(&c.env, &c.policy, &c.phi, &skills, cfg.horizon, &mut rng)?;
            write_trajectories(&dir.join("trajectories.csv"), &trajs)?;
            manifest.add_output("trajectories.csv");
            manifest.write(dir)?;
            println!("coverage {:.4} over {} skills", cov.fraction, skills.len());
            Ok(())
        }
        EvalMode::OrbitGeneralization => {
            let skills = sample_skill_set(&c.skill_mask, 16, &mut rng);
            let mut sink = CsvSink::create(&dir.join("orbit.csv"), &["skill", "g", "max_deviation"])?;
            let mut worst: f64 = 0.0;
            let s0 = c.env.reset(&mut rng);
            for (i, z) in skills.iter().enumerate() {
                for g in c.env.group().elements() {
                    let report = transform_skill_generalization(&c.env, &c.policy, z, g, s0, cfg.horizon)?;
                    worst = worst.max(report.max_deviation);
                    sink.row([i.to_string(), g.to_string(), report.max_deviation.to_string()])?;
                }
            }
            sink.finish()?;
            manifest.add_output("orbit.csv");
            manifest.write(dir)?;
            let ok = worst <= ORBIT_TOL;
            println!("max deviation {worst:.3e} (bound {ORBIT_TOL:.0e}): {}", if ok { "pass" } else { "FAIL" });
            if ok {
                Ok(())
            } else {
                Err(Failure::Invariant(format!("orbit deviation {worst:.3e}")))
            }
        }
        EvalMode::Downstream => {
            let (high, semi) = high_level_setup(&cfg, &c)?;
            let mut ds_rng = stream_rng(cfg.seed, Stream::Downstream);
            let episodes = (0..cfg.downstream_episodes)
                .map(|_| run_hierarchical_episode(&c.env, &high, &c.policy, &semi, None, true, &mut ds_rng))
                .collect::<Result<Vec<_>>>()?;
            let mut sink = CsvSink::create(&dir.join("episodes.csv"), &["episode", "return", "goals_reached", "decisions"])?;
            for (i, ep) in episodes.iter().enumerate() {
                sink.row([
                    i.to_string(),
                    ep.total_reward.to_string(),
                    ep.goals_reached.to_string(),
                    ep.decisions.len().to_string(),
                ])?;
            }
            sink.finish()?;
            manifest.add_output("episodes.csv");
            let probe = mirrored_goal_probe(&c.env, &high, &c.policy, &semi, &mut ds_rng)?;
            write_probe(&dir.join("skills.csv"), &probe)?;
            manifest.add_output("skills.csv");
            manifest.write(dir)?;
            let mean = episodes.iter().map(|e| e.total_reward).sum::<f64>() / episodes.len() as f64;
            println!("mean return {mean:.4} over {} episodes", episodes.len());
            Ok(())
        }
    }
}

fn high_level_setup(cfg: &Config, c: &Components) -> Result<(HighLevelPolicy, SemiMDPConfig)> {
    let mut init = stream_rng(cfg.seed, Stream::PolicyInit);
    init.set_word_pos(1 << 40);
    let high = HighLevelPolicy::new(
        c.env.group().clone(),
        c.phi.rep().clone(),
        c.skill_mask.clone(),
        &cfg.high_hidden,
        cfg.high_std,
        cfg.input_scale(),
        cfg.equivariant_policy(),
        &mut init,
    )?;
    let semi = SemiMDPConfig {
        interval: cfg.interval,
        goal_half_width: cfg.goal_half_width,
        reach_threshold: cfg.reach_threshold,
        horizon: cfg.downstream_horizon,
    };
    semi.validate()?;
    Ok((high, semi))
}

/// Greedy high-level episodes from the start state towards `goal` and
/// every rotated `g·goal`, one per group element.
struct Probe {
    runs: Vec<(usize, crate::hierarchy::HierarchicalEpisode)>,
}

fn mirrored_goal_probe(
    env: &Env,
    high: &HighLevelPolicy,
    low: &EquivariantPolicy,
    semi: &SemiMDPConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Probe> {
    let start = env.reset(rng);
    let goal = sample_goal(env, &start, semi.goal_half_width, rng);
    let base = rng.clone();
    let runs = env
        .group()
        .elements()
        .map(|g| {
            let mut r = base.clone();
            Ok((g, run_hierarchical_episode(env, high, low, semi, Some(env.act_on_state(g, &goal)), false, &mut r)?))
        })
        .collect::<Result<_>>()?;
    Ok(Probe { runs })
}

fn reason_name(r: DecisionReason) -> &'static str {
    match r {
        DecisionReason::Start => "start",
        DecisionReason::Interval => "interval",
        DecisionReason::GoalReached => "goal",
    }
}

fn write_probe(path: &Path, probe: &Probe) -> Result<()> {
    let d = probe
        .runs
        .first()
        .and_then(|(_, ep)| ep.decisions.first())
        .map_or(0, |d| d.choice.skill.len());
    let mut header: Vec<String> = ["g", "t", "reason", "x", "y", "goal_x", "goal_y"].map(String::from).to_vec();
    header.extend((0..d).map(|i| format!("z{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut sink = CsvSink::create(path, &header)?;
    for (g, ep) in &probe.runs {
        for dec in &ep.decisions {
            let mut row = vec![
                g.to_string(),
                dec.t.to_string(),
                reason_name(dec.reason).to_string(),
                dec.state[0].to_string(),
                dec.state[1].to_string(),
                dec.goal[0].to_string(),
                dec.goal[1].to_string(),
            ];
            row.extend(dec.choice.skill.iter().map(f64::to_string));
            sink.row(&row)?;
        }
    }
    sink.finish()
}

fn train_downstream(args: &CommonArgs) -> CliResult {
    let ckpt = require_checkpoint(args, "train-downstream")?;
    let mut cfg = ckpt.config.clone();
    if let Some(path) = &args.config {
        let over = Config::load(path)?;
        cfg.interval = over.interval;
        cfg.goal_half_width = over.goal_half_width;
        cfg.reach_threshold = over.reach_threshold;
        cfg.downstream_iterations = over.downstream_iterations;
        cfg.downstream_episodes = over.downstream_episodes;
        cfg.downstream_horizon = over.downstream_horizon;
        cfg.high_hidden = over.high_hidden;
        cfg.high_std = over.high_std;
        cfg.lr_high = over.lr_high;
        cfg.seed = over.seed;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let c = Components::from_checkpoint(&ckpt)?;
    let dir = &args.out_dir;
    prepare_out_dir(dir)?;
    let mut manifest = RunManifest::new("train-downstream", &cfg);
    let (mut high, semi) = high_level_setup(&cfg, &c)?;
    let before = params_checksum(c.policy.params());
    let mut rng = stream_rng(cfg.seed, Stream::Downstream);
    let ds = DownstreamConfig {
        iterations: cfg.downstream_iterations,
        episodes: cfg.downstream_episodes,
        lr: cfg.lr_high,
    };
    let curve = train_high_level(&c.env, &mut high, &c.policy, &semi, &ds, &mut rng)?;
    let after = params_checksum(c.policy.params());

    let mut sink = CsvSink::create(&dir.join("returns.csv"), &["iteration", "mean_return"])?;
    for (i, r) in curve.iter().enumerate() {
        sink.row([i.to_string(), r.to_string()])?;
    }
    sink.finish()?;
    manifest.add_output("returns.csv");
    let probe = mirrored_goal_probe(&c.env, &high, &c.policy, &semi, &mut rng)?;
    write_probe(&dir.join("skills.csv"), &probe)?;
    manifest.add_output("skills.csv");
    manifest.write(dir)?;
    println!("low-level checksum before {before}");
    println!("low-level checksum after  {after}");
    println!(
        "return {:.4} -> {:.4}",
        curve.first().copied().unwrap_or(0.0),
        curve.last().copied().unwrap_or(0.0)
    );
    if before != after {
        return Err(Failure::Invariant("low-level parameters changed".into()));
    }
    Ok(())
}
