//! Exactly group-invariant environments and the exact tabular oracles that
//! property tests run against: k-step kernels, the occupancy recursion and
//! temporal distances.
//!
//! Every state is a point in the plane. On the grid this is the cell centre
//! in integer coordinates with the origin at the centre cell, so a rotation
//! by a multiple of 90° maps cells onto cells exactly.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::groups::{DirectSumRep, Element, FiniteGroup};

pub type Point = [f64; 2];

/// Grid moves in counter-clockwise order, so a quarter turn maps action `a`
/// to `a + 1 (mod 4)`.
pub const MOVES: [[i64; 2]; 4] = [[1, 0], [0, 1], [-1, 0], [0, -1]];
pub const EAST: usize = 0;
pub const NORTH: usize = 1;
pub const WEST: usize = 2;
pub const SOUTH: usize = 3;

/// A finite MDP together with the permutations through which a group acts
/// on its states and actions.
#[derive(Debug, Clone)]
pub struct TabularSymmetricMDP {
    group: FiniteGroup,
    num_states: usize,
    num_actions: usize,
    /// `P[s][a][s']`, flattened.
    transition: Vec<f64>,
    init_dist: Vec<f64>,
    state_perm: Vec<Vec<usize>>,
    action_perm: Vec<Vec<usize>>,
    coords: Vec<Point>,
    /// Side length when this is a square grid.
    side: Option<usize>,
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    p.len() == n
        && p.iter().all(|&i| {
            i < n && !std::mem::replace(&mut seen[i], true)
        })
}

impl TabularSymmetricMDP {
    /// Assembles an MDP from raw tensors. Stochasticity and the permutation
    /// structure are checked; the symmetry itself is reported by
    /// [`Self::invariance_residual`] rather than enforced.
    pub fn new(
        group: FiniteGroup,
        transition: Vec<Vec<Vec<f64>>>,
        init_dist: Vec<f64>,
        state_perm: Vec<Vec<usize>>,
        action_perm: Vec<Vec<usize>>,
        coords: Vec<Point>,
    ) -> Result<Self> {
        let num_states = transition.len();
        let num_actions = transition.first().map_or(0, Vec::len);
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidEnv("empty transition tensor".into()));
        }
        let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != num_actions {
                return Err(Error::InvalidEnv(format!("state {s} has wrong action count")));
            }
            for (a, row) in rows.iter().enumerate() {
                let total: f64 = row.iter().sum();
                if row.len() != num_states
                    || row.iter().any(|&p| !(0.0..=1.0).contains(&p))
                    || (total - 1.0).abs() > 1e-12
                {
                    return Err(Error::InvalidEnv(format!(
                        "P[{s}][{a}] is not a probability vector"
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        if init_dist.len() != num_states || (init_dist.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidEnv("bad initial distribution".into()));
        }
        if coords.len() != num_states {
            return Err(Error::InvalidEnv("one coordinate pair per state required".into()));
        }
        let n = group.order();
        if state_perm.len() != n
            || action_perm.len() != n
            || !state_perm.iter().all(|p| is_permutation(p, num_states))
            || !action_perm.iter().all(|p| is_permutation(p, num_actions))
        {
            return Err(Error::InvalidEnv("group must act by permutations".into()));
        }
        Ok(Self {
            group,
            num_states,
            num_actions,
            transition: flat,
            init_dist,
            state_perm,
            action_perm,
            coords,
            side: None,
        })
    }

    pub fn group(&self) -> &FiniteGroup {
        &self.group
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    pub fn side(&self) -> Option<usize> {
        self.side
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn coords(&self, s: usize) -> Point {
        self.coords[s]
    }

    /// The state whose coordinates are nearest to `p`, if it matches exactly
    /// after rounding.
    pub fn state_at(&self, p: &Point) -> Result<usize> {
        let rounded = [p[0].round(), p[1].round()];
        self.coords
            .iter()
            .position(|c| c == &rounded)
            .ok_or(Error::OutOfRange {
                index: usize::MAX,
                size: self.num_states,
            })
    }

    /// `σ_g` on states.
    pub fn act_on_state(&self, g: Element, s: usize) -> usize {
        self.state_perm[g][s]
    }

    /// `σ_g` on actions.
    pub fn act_on_action(&self, g: Element, a: usize) -> usize {
        self.action_perm[g][a]
    }

    /// Largest `|P[σs][σa][σs'] − P[s][a][s']|` over all group elements;
    /// zero for an exactly symmetric MDP.
    pub fn invariance_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for g in self.group.elements() {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let (gs, ga) = (self.state_perm[g][s], self.action_perm[g][a]);
                    for t in 0..self.num_states {
                        let d = self.prob(gs, ga, self.state_perm[g][t]) - self.prob(s, a, t);
                        worst = worst.max(d.abs());
                    }
                }
            }
        }
        for g in self.group.elements() {
            for s in 0..self.num_states {
                let d = self.init_dist[self.state_perm[g][s]] - self.init_dist[s];
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    /// Samples `s' ~ P(·|s, a)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<usize> {
        if s >= self.num_states {
            return Err(Error::OutOfRange {
                index: s,
                size: self.num_states,
            });
        }
        if a >= self.num_actions {
            return Err(Error::OutOfRange {
                index: a,
                size: self.num_actions,
            });
        }
        Ok(sample_categorical(self.row(s, a), rng))
    }
}

/// Inverse-CDF sampling; falls back to the last positive entry on round-off.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// The `side × side` grid under `C_4`.
pub fn build_grid_c4(side: usize, slip: f64) -> Result<TabularSymmetricMDP> {
    build_grid(side, slip, &FiniteGroup::cyclic(4)?)
}

/// A `side × side` grid centred at the origin with four moves. The intended
/// move happens with probability `1 − slip`; each other move with
/// `slip / 3`. Moves into a wall leave the agent in place. `group` must be
/// `C_1`, `C_2` or `C_4`, acting by quarter-turn rotations.
pub fn build_grid(side: usize, slip: f64, group: &FiniteGroup) -> Result<TabularSymmetricMDP> {
    if side.is_multiple_of(2) {
        return Err(Error::EvenSide(side));
    }
    if !(0.0..1.0).contains(&slip) {
        return Err(Error::Probability(slip));
    }
    let n = group.order();
    if 4 % n != 0 {
        return Err(Error::UnsupportedGroup(n));
    }
    let half = (side / 2) as i64;
    let index = |x: i64, y: i64| ((y + half) as usize) * side + (x + half) as usize;
    let cells: Vec<[i64; 2]> = (0..side * side)
        .map(|i| [(i % side) as i64 - half, (i / side) as i64 - half])
        .collect();
    let inside = |x: i64, y: i64| x.abs() <= half && y.abs() <= half;

    let mut transition = vec![vec![vec![0.0; cells.len()]; 4]; cells.len()];
    for (s, &[x, y]) in cells.iter().enumerate() {
        let targets: Vec<usize> = MOVES
            .iter()
            .map(|[dx, dy]| {
                if inside(x + dx, y + dy) {
                    index(x + dx, y + dy)
                } else {
                    s
                }
            })
            .collect();
        for a in 0..4 {
            for t in 0..cells.len() {
                let intended = targets[a] == t;
                let others = (0..4).filter(|&b| b != a && targets[b] == t).count();
                // One closed-form expression per entry keeps rotated entries
                // bit-identical regardless of summation order.
                let p = if intended { 1.0 - slip } else { 0.0 } + slip / 3.0 * others as f64;
                transition[s][a][t] = p;
            }
        }
    }
    let quarter_turns = |g: Element| g * (4 / n);
    let rotate = |[x, y]: [i64; 2], m: usize| -> [i64; 2] {
        (0..m).fold([x, y], |[x, y], _| [-y, x])
    };
    let state_perm = group
        .elements()
        .map(|g| {
            cells
                .iter()
                .map(|&c| {
                    let [x, y] = rotate(c, quarter_turns(g));
                    index(x, y)
                })
                .collect()
        })
        .collect();
    let action_perm = group
        .elements()
        .map(|g| (0..4).map(|a| (a + quarter_turns(g)) % 4).collect())
        .collect();
    let mut init = vec![0.0; cells.len()];
    init[index(0, 0)] = 1.0;
    let coords = cells.iter().map(|&[x, y]| [x as f64, y as f64]).collect();
    let mut mdp = TabularSymmetricMDP::new(
        group.clone(),
        transition,
        init,
        state_perm,
        action_perm,
        coords,
    )?;
    mdp.side = Some(side);
    Ok(mdp)
}

/// A point mass in a disc-shaped arena under `C_N` rotations.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    group: FiniteGroup,
    planar: DirectSumRep,
    pub dt: f64,
    /// Radius of the disc the position is clipped to.
    pub arena_half_width: f64,
    pub noise_std: f64,
    /// Velocity commands are clipped to this Euclidean norm.
    pub action_max: f64,
}

impl PointMassEnv {
    pub fn new(
        group: FiniteGroup,
        dt: f64,
        arena_half_width: f64,
        noise_std: f64,
        action_max: f64,
    ) -> Result<Self> {
        if !(dt > 0.0 && arena_half_width > 0.0 && noise_std >= 0.0 && action_max > 0.0) {
            return Err(Error::InvalidEnv("point-mass parameters must be positive".into()));
        }
        let planar = DirectSumRep::planar(&group)?;
        Ok(Self {
            group,
            planar,
            dt,
            arena_half_width,
            noise_std,
            action_max,
        })
    }

    pub fn group(&self) -> &FiniteGroup {
        &self.group
    }

    pub fn is_deterministic(&self) -> bool {
        self.noise_std == 0.0
    }

    /// `s' = clip_disc(s + dt · clip_norm(a) + noise)`.
    pub fn step<R: Rng + ?Sized>(&self, s: &Point, a: &Point, rng: &mut R) -> Point {
        let a = clip_norm(*a, self.action_max);
        let mut next = [s[0] + self.dt * a[0], s[1] + self.dt * a[1]];
        if self.noise_std > 0.0 {
            next[0] += self.noise_std * rng.sample::<f64, _>(StandardNormal);
            next[1] += self.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
        clip_norm(next, self.arena_half_width)
    }

    pub fn rotate(&self, g: Element, p: &Point) -> Point {
        let mut out = [0.0; 2];
        self.planar.apply_into(g, p, &mut out);
        out
    }
}

pub fn clip_norm(v: Point, max: f64) -> Point {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n > max {
        [v[0] * max / n, v[1] * max / n]
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Point),
}

impl Action {
    pub fn components(&self) -> Vec<f64> {
        match self {
            Action::Discrete(a) => vec![*a as f64],
            Action::Continuous(v) => v.to_vec(),
        }
    }
}

/// Either environment, seen through planar coordinates.
#[derive(Debug, Clone)]
pub enum Env {
    Grid(TabularSymmetricMDP),
    PointMass(PointMassEnv),
}

impl Env {
    pub fn group(&self) -> &FiniteGroup {
        match self {
            Env::Grid(m) => m.group(),
            Env::PointMass(p) => p.group(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Env::Grid(_) => false,
            Env::PointMass(p) => p.is_deterministic(),
        }
    }

    pub fn as_tabular(&self) -> Result<&TabularSymmetricMDP> {
        match self {
            Env::Grid(m) => Ok(m),
            Env::PointMass(_) => Err(Error::NotTabular),
        }
    }

    pub fn num_actions(&self) -> Option<usize> {
        match self {
            Env::Grid(m) => Some(m.num_actions()),
            Env::PointMass(_) => None,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self {
            Env::Grid(m) => m.coords(sample_categorical(m.init_dist(), rng)),
            Env::PointMass(_) => [0.0, 0.0],
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, s: &Point, a: &Action, rng: &mut R) -> Result<Point> {
        match (self, a) {
            (Env::Grid(m), Action::Discrete(a)) => {
                let idx = m.state_at(s)?;
                Ok(m.coords(m.sample_next(idx, *a, rng)?))
            }
            (Env::PointMass(p), Action::Continuous(v)) => Ok(p.step(s, v, rng)),
            _ => Err(Error::InvalidEnv("action kind does not match environment".into())),
        }
    }

    /// `g · s`: a rotation of the plane.
    pub fn act_on_state(&self, g: Element, s: &Point) -> Point {
        match self {
            Env::Grid(m) => match m.state_at(s) {
                Ok(idx) => m.coords(m.act_on_state(g, idx)),
                Err(_) => rotate_quarter_turns(s, g * 4 / m.group().order()),
            },
            Env::PointMass(p) => p.rotate(g, s),
        }
    }

    pub fn act_on_action(&self, g: Element, a: &Action) -> Action {
        match (self, a) {
            (Env::Grid(m), Action::Discrete(a)) => Action::Discrete(m.act_on_action(g, *a)),
            (Env::PointMass(p), Action::Continuous(v)) => Action::Continuous(p.rotate(g, v)),
            (_, other) => *other,
        }
    }
}

fn rotate_quarter_turns(p: &Point, m: usize) -> Point {
    (0..m).fold(*p, |[x, y], _| [-y, x])
}

/// One recorded transition with the intrinsic reward it earned.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Point,
    pub action: Action,
    pub reward: f64,
    pub next_state: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub skill: Vec<f64>,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Consecutive steps chain: `s'_t == s_{t+1}`.
    pub fn is_chained(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].next_state == w[1].state)
    }

    /// `s_0, …, s_T`.
    pub fn states(&self) -> Vec<Point> {
        let mut out: Vec<Point> = self.steps.iter().map(|s| s.state).collect();
        if let Some(last) = self.steps.last() {
            out.push(last.next_state);
        }
        out
    }
}

/// State-conditioned action probabilities `π(·|s, z)` for a fixed skill.
pub type SkillPolicy<'a> = dyn Fn(usize, &[f64]) -> Vec<f64> + 'a;

/// `T_z(s'|s) = Σ_a π(a|s,z) P(s'|s,a)`, row-major.
pub fn policy_kernel(env: &TabularSymmetricMDP, policy: &SkillPolicy<'_>, z: &[f64]) -> Vec<f64> {
    let n = env.num_states();
    let mut kernel = vec![0.0; n * n];
    for s in 0..n {
        let probs = policy(s, z);
        for (a, p) in probs.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            for (k, q) in kernel[s * n..(s + 1) * n].iter_mut().zip(env.row(s, a)) {
                *k += p * q;
            }
        }
    }
    kernel
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let x = a[i * n + k];
            if x == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += x * b[k * n + j];
            }
        }
    }
    out
}

/// Exact `k`-step roll-out kernel `P_k[s][s']` under `π(·|·, z)`.
pub fn k_step_kernel(
    env: &Env,
    policy: &SkillPolicy<'_>,
    z: &[f64],
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    let mdp = env.as_tabular()?;
    k_step_kernel_tabular(mdp, policy, z, k)
}

pub fn k_step_kernel_tabular(
    mdp: &TabularSymmetricMDP,
    policy: &SkillPolicy<'_>,
    z: &[f64],
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::InvalidEnv("k must be at least 1".into()));
    }
    let n = mdp.num_states();
    let one = policy_kernel(mdp, policy, z);
    let mut acc = one.clone();
    for _ in 1..k {
        acc = matmul(&acc, &one, n);
    }
    Ok(acc.chunks(n).map(<[f64]>::to_vec).collect())
}

/// `p_0 = init`, `p_{t+1}(s') = Σ_s T_z(s'|s) p_t(s)` for `t < horizon`.
pub fn occupancy_recursion(
    mdp: &TabularSymmetricMDP,
    policy: &SkillPolicy<'_>,
    z: &[f64],
    horizon: usize,
) -> Vec<Vec<f64>> {
    let n = mdp.num_states();
    let kernel = policy_kernel(mdp, policy, z);
    let mut out = vec![mdp.init_dist().to_vec()];
    for _ in 0..horizon {
        let p = out.last().unwrap();
        let mut next = vec![0.0; n];
        for s in 0..n {
            if p[s] == 0.0 {
                continue;
            }
            for (t, q) in next.iter_mut().zip(&kernel[s * n..(s + 1) * n]) {
                *t += p[s] * q;
            }
        }
        out.push(next);
    }
    out
}

/// Uniform action distribution, the default policy for temporal distances.
pub fn uniform_policy(mdp: &TabularSymmetricMDP) -> impl Fn(usize) -> Vec<f64> + '_ {
    let n = mdp.num_actions();
    move |_| vec![1.0 / n as f64; n]
}

/// Expected number of transitions from `s₁` to first reach `s₂` under a
/// skill-free policy, by Gauss–Seidel value iteration until the largest
/// update falls below `tol`. Pairs where `s₂` is not reached with
/// probability one are `+∞`.
pub fn temporal_distance(
    mdp: &TabularSymmetricMDP,
    policy: &dyn Fn(usize) -> Vec<f64>,
    tol: f64,
) -> Vec<Vec<f64>> {
    let n = mdp.num_states();
    let mut kernel = vec![0.0; n * n];
    for s in 0..n {
        for (a, p) in policy(s).iter().enumerate() {
            for (k, q) in kernel[s * n..(s + 1) * n].iter_mut().zip(mdp.row(s, a)) {
                *k += p * q;
            }
        }
    }
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|s| (0..n).filter(|&t| kernel[s * n + t] > 0.0).collect())
        .collect();

    let mut out = vec![vec![f64::INFINITY; n]; n];
    for target in 0..n {
        // States that can reach the target at all.
        let mut reach = vec![false; n];
        reach[target] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for s in 0..n {
                if !reach[s] && succ[s].iter().any(|&t| reach[t]) {
                    reach[s] = true;
                    changed = true;
                }
            }
        }
        // Anything that can wander (avoiding the target) into a state that
        // cannot reach it has infinite expected hitting time.
        let mut infinite: Vec<bool> = reach.iter().map(|r| !r).collect();
        changed = true;
        while changed {
            changed = false;
            for s in 0..n {
                if s != target && !infinite[s] && succ[s].iter().any(|&t| infinite[t]) {
                    infinite[s] = true;
                    changed = true;
                }
            }
        }
        let mut d: Vec<f64> = (0..n)
            .map(|s| if infinite[s] { f64::INFINITY } else { 0.0 })
            .collect();
        loop {
            let mut delta: f64 = 0.0;
            for s in 0..n {
                if s == target || infinite[s] {
                    continue;
                }
                let v = 1.0
                    + succ[s]
                        .iter()
                        .map(|&t| kernel[s * n + t] * d[t])
                        .sum::<f64>();
                delta = delta.max((v - d[s]).abs());
                d[s] = v;
            }
            if delta < tol {
                break;
            }
        }
        for s in 0..n {
            out[s][target] = d[s];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn center(m: &TabularSymmetricMDP) -> usize {
        m.state_at(&[0.0, 0.0]).unwrap()
    }

    #[test]
    fn deterministic_small_grid() {
        let m = build_grid_c4(3, 0.0).unwrap();
        assert_eq!(m.num_states(), 9);
        let north = m.state_at(&[0.0, 1.0]).unwrap();
        assert_eq!(m.prob(center(&m), NORTH, north), 1.0);
        // Walls bounce back.
        let corner = m.state_at(&[1.0, 1.0]).unwrap();
        assert_eq!(m.prob(corner, EAST, corner), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(m.sample_next(center(&m), WEST, &mut rng).unwrap(), 3);
        }
    }

    #[test]
    fn grid_symmetry_is_exact() {
        for (side, slip) in [(1, 0.3), (3, 0.0), (5, 0.1), (7, 0.25)] {
            let m = build_grid_c4(side, slip).unwrap();
            assert_eq!(m.invariance_residual(), 0.0);
        }
        for n in [1, 2] {
            let m = build_grid(5, 0.1, &FiniteGroup::cyclic(n).unwrap()).unwrap();
            assert_eq!(m.invariance_residual(), 0.0);
        }
    }

    #[test]
    fn grid_rows_are_stochastic() {
        let m = build_grid_c4(5, 0.1).unwrap();
        for s in 0..m.num_states() {
            for a in 0..4 {
                assert!((m.row(s, a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_rejections() {
        assert!(matches!(build_grid_c4(4, 0.1), Err(Error::EvenSide(4))));
        assert!(matches!(build_grid_c4(3, 1.0), Err(Error::Probability(_))));
        let c3 = FiniteGroup::cyclic(3).unwrap();
        assert!(matches!(build_grid(3, 0.0, &c3), Err(Error::UnsupportedGroup(3))));
        let m = build_grid_c4(3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.sample_next(9, 0, &mut rng).is_err());
        assert!(m.sample_next(0, 4, &mut rng).is_err());
    }

    #[test]
    fn group_action_composes() {
        let m = build_grid_c4(5, 0.1).unwrap();
        let g = m.group().clone();
        for s in 0..m.num_states() {
            let four = (0..4).fold(s, |x, _| m.act_on_state(1, x));
            assert_eq!(four, s);
            assert_eq!(m.act_on_state(0, s), s);
            for a in g.elements() {
                for b in g.elements() {
                    assert_eq!(
                        m.act_on_state(g.mul(a, b), s),
                        m.act_on_state(a, m.act_on_state(b, s))
                    );
                }
            }
        }
        let env = Env::Grid(m);
        assert_eq!(env.act_on_state(1, &[1.0, 0.0]), [0.0, 1.0]);
        assert_eq!(env.act_on_action(1, &Action::Discrete(EAST)), Action::Discrete(NORTH));
    }

    #[test]
    fn point_mass_examples() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let p = PointMassEnv::new(g, 0.1, 5.0, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = p.step(&[0.0, 0.0], &[1.0, 0.0], &mut rng);
        assert!((s[0] - 0.1).abs() < 1e-15 && s[1] == 0.0);
        assert_eq!(p.rotate(1, &[1.0, 0.0]), [0.0, 1.0]);
        // Disc clipping.
        let s = p.step(&[4.99, 0.0], &[1.0, 0.0], &mut rng);
        assert!((s[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [3, 4, 8] {
            let g = FiniteGroup::cyclic(n).unwrap();
            let p = PointMassEnv::new(g.clone(), 0.5, 2.0, 0.0, 1.0).unwrap();
            for _ in 0..1000 {
                let s = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let a = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let h = rng.random_range(0..n);
                let lhs = p.step(&p.rotate(h, &s), &p.rotate(h, &a), &mut rng);
                let rhs = p.rotate(h, &p.step(&s, &a, &mut rng));
                assert!((lhs[0] - rhs[0]).abs() < 1e-12 && (lhs[1] - rhs[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn k1_greedy_selects_rows() {
        let m = build_grid_c4(3, 0.2).unwrap();
        let greedy = |_s: usize, _z: &[f64]| vec![0.0, 1.0, 0.0, 0.0];
        let k1 = k_step_kernel_tabular(&m, &greedy, &[], 1).unwrap();
        for s in 0..9 {
            assert_eq!(k1[s], m.row(s, NORTH));
        }
        assert!(k_step_kernel(&Env::Grid(m.clone()), &greedy, &[], 0).is_err());
        let p = PointMassEnv::new(FiniteGroup::cyclic(4).unwrap(), 0.1, 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            k_step_kernel(&Env::PointMass(p), &greedy, &[], 1),
            Err(Error::NotTabular)
        ));
    }

    #[test]
    fn two_step_kernel_matches_monte_carlo() {
        let m = build_grid_c4(3, 0.2).unwrap();
        let policy = |s: usize, _z: &[f64]| {
            let w = [1.0 + s as f64, 2.0, 0.5, 1.0];
            let t: f64 = w.iter().sum();
            w.iter().map(|x| x / t).collect::<Vec<_>>()
        };
        let exact = k_step_kernel_tabular(&m, &policy, &[], 2).unwrap();
        let start = m.state_at(&[1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let runs = 1_000_000;
        let mut counts = [0usize; 9];
        for _ in 0..runs {
            let mut s = start;
            for _ in 0..2 {
                let a = sample_categorical(&policy(s, &[]), &mut rng);
                s = m.sample_next(s, a, &mut rng).unwrap();
            }
            counts[s] += 1;
        }
        for t in 0..9 {
            let p = exact[start][t];
            let est = counts[t] as f64 / runs as f64;
            let se = (p * (1.0 - p) / runs as f64).sqrt().max(1e-9);
            assert!((est - p).abs() <= 3.0 * se + 1e-12, "t={t} est={est} p={p}");
        }
    }

    #[test]
    fn occupancy_examples() {
        let m = build_grid_c4(5, 0.1).unwrap();
        let uniform = |_s: usize, _z: &[f64]| vec![0.25; 4];
        let occ = occupancy_recursion(&m, &uniform, &[], 20);
        assert_eq!(occ[0], m.init_dist());
        for p in &occ {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    fn chain(len: usize) -> TabularSymmetricMDP {
        let transition = (0..len)
            .map(|s| vec![(0..len).map(|t| if t == (s + 1).min(len - 1) { 1.0 } else { 0.0 }).collect()])
            .collect();
        let mut init = vec![0.0; len];
        init[0] = 1.0;
        TabularSymmetricMDP::new(
            FiniteGroup::cyclic(1).unwrap(),
            transition,
            init,
            vec![(0..len).collect()],
            vec![vec![0]],
            (0..len).map(|i| [i as f64, 0.0]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn temporal_distance_on_chain() {
        let m = chain(6);
        let d = temporal_distance(&m, &|_| vec![1.0], 1e-10);
        assert_eq!(d[0][5], 5.0);
        assert_eq!(d[2][4], 2.0);
        for s in 0..6 {
            assert_eq!(d[s][s], 0.0);
        }
        // Moving right only: going back is impossible.
        assert!(d[5][0].is_infinite());
    }

    #[test]
    fn temporal_distance_is_invariant() {
        let m = build_grid_c4(5, 0.1).unwrap();
        let d = temporal_distance(&m, &uniform_policy(&m), 1e-10);
        let mut worst: f64 = 0.0;
        for g in m.group().elements() {
            for a in 0..25 {
                for b in 0..25 {
                    let (ga, gb) = (m.act_on_state(g, a), m.act_on_state(g, b));
                    worst = worst.max((d[ga][gb] - d[a][b]).abs());
                }
            }
        }
        assert!(worst < 1e-8, "{worst}");
        assert!(d.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn trajectory_chaining() {
        let step = |a: Point, b: Point| Step {
            state: a,
            action: Action::Discrete(0),
            reward: 0.0,
            next_state: b,
        };
        let t = Trajectory {
            skill: vec![1.0, 0.0],
            steps: vec![step([0.0, 0.0], [1.0, 0.0]), step([1.0, 0.0], [1.0, 1.0])],
        };
        assert!(t.is_chained());
        assert_eq!(t.states().len(), 3);
        let broken = Trajectory {
            skill: vec![1.0, 0.0],
            steps: vec![step([0.0, 0.0], [1.0, 0.0]), step([0.0, 0.0], [1.0, 1.0])],
        };
        assert!(!broken.is_chained());
    }
}
