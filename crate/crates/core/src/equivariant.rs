//! Exactly equivariant feature maps into the group Fourier space.
//!
//! A base network `h_θ : R^n → R^d` is symmetrized on the output side,
//!
//! ```text
//! φ_F(s) = M · (1/|G|) Σ_g ρ_F(g)⁻¹ h_θ(g·s),
//! ```
//!
//! which satisfies `φ_F(g·s) = ρ_F(g) φ_F(s)` for every parameter vector:
//! substituting `g ↦ g h⁻¹` in the sum for `h·s` pulls out `ρ_F(h)`. The
//! mask `M` is constant on each irrep block, so it commutes with `ρ_F`.

use crate::error::{Error, Result};
use crate::groups::{DirectSumRep, Element, FiniteGroup};
use crate::nn::{DiffNet, Tape};

/// Per-coordinate weights applied to `φ_F`. Masks built from frequencies or
/// block weights are constant on each irrep block; [`Self::from_coordinates`]
/// accepts anything and exists for fault injection.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    weights: Vec<f64>,
}

impl FrequencyMask {
    pub fn all(rep: &DirectSumRep) -> Self {
        Self {
            weights: vec![1.0; rep.total_dim()],
        }
    }

    /// Keeps the coordinates of every block whose frequency is listed.
    pub fn keep_frequencies(rep: &DirectSumRep, frequencies: &[usize]) -> Self {
        Self {
            weights: rep
                .coord_frequencies()
                .iter()
                .map(|k| if frequencies.contains(k) { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// One weight per irrep copy, in block order.
    pub fn from_block_weights(rep: &DirectSumRep, block_weights: &[f64]) -> Result<Self> {
        let ranges = rep.block_ranges();
        if ranges.len() != block_weights.len() {
            return Err(Error::DimensionMismatch {
                expected: ranges.len(),
                got: block_weights.len(),
            });
        }
        let mut weights = vec![0.0; rep.total_dim()];
        for (r, w) in ranges.into_iter().zip(block_weights) {
            weights[r].fill(*w);
        }
        Ok(Self { weights })
    }

    pub fn from_coordinates(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.weights[i] != 0.0
    }

    pub fn active_dim(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub fn is_block_constant(&self, rep: &DirectSumRep) -> bool {
        self.weights.len() == rep.total_dim()
            && rep
                .block_ranges()
                .into_iter()
                .all(|r| self.weights[r.clone()].iter().all(|w| *w == self.weights[r.start]))
    }
}

/// `φ_F`: a symmetrized base network plus the representation it transforms
/// under.
#[derive(Debug, Clone)]
pub struct EquivariantFeatureMap {
    group: FiniteGroup,
    base_net: DiffNet,
    /// How the group acts on the raw state features.
    input_rep: DirectSumRep,
    rep: DirectSumRep,
    mask: FrequencyMask,
    /// `false` turns the map into a plain masked network (the unconstrained
    /// baseline).
    symmetrize: bool,
    /// States are multiplied by this before entering the base network.
    input_scale: f64,
}

/// Per-group-element network tapes from one forward pass.
#[derive(Debug, Clone)]
pub struct PhiTape {
    tapes: Vec<(Element, Tape)>,
    output: Vec<f64>,
}

impl PhiTape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl EquivariantFeatureMap {
    pub fn new(
        group: FiniteGroup,
        base_net: DiffNet,
        input_rep: DirectSumRep,
        rep: DirectSumRep,
        mask: FrequencyMask,
        symmetrize: bool,
    ) -> Result<Self> {
        if base_net.output_dim() != rep.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: rep.total_dim(),
                got: base_net.output_dim(),
            });
        }
        if base_net.input_dim() != input_rep.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: input_rep.total_dim(),
                got: base_net.input_dim(),
            });
        }
        if mask.weights().len() != rep.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: rep.total_dim(),
                got: mask.weights().len(),
            });
        }
        if rep.order() != group.order() || input_rep.order() != group.order() {
            return Err(Error::RepSpec("representation over a different group".into()));
        }
        Ok(Self {
            group,
            base_net,
            input_rep,
            rep,
            mask,
            symmetrize,
            input_scale: 1.0,
        })
    }

    /// Scales states before the base network; a scalar commutes with every
    /// orthogonal action, so equivariance is unaffected.
    pub fn with_input_scale(mut self, scale: f64) -> Self {
        self.input_scale = scale;
        self
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn group(&self) -> &FiniteGroup {
        &self.group
    }

    pub fn rep(&self) -> &DirectSumRep {
        &self.rep
    }

    pub fn input_rep(&self) -> &DirectSumRep {
        &self.input_rep
    }

    pub fn mask(&self) -> &FrequencyMask {
        &self.mask
    }

    pub fn set_mask(&mut self, mask: FrequencyMask) {
        assert_eq!(mask.weights().len(), self.rep.total_dim());
        self.mask = mask;
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrize
    }

    pub fn base_net(&self) -> &DiffNet {
        &self.base_net
    }

    pub fn params(&self) -> &[f64] {
        self.base_net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.base_net.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.base_net.num_params()
    }

    pub fn dim(&self) -> usize {
        self.rep.total_dim()
    }

    fn elements(&self) -> Vec<Element> {
        if self.symmetrize {
            self.group.elements().collect()
        } else {
            vec![self.group.identity()]
        }
    }

    /// `φ_F(s)`.
    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(s)?.output)
    }

    pub fn forward_cached(&self, s: &[f64]) -> Result<PhiTape> {
        if s.len() != self.input_rep.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_rep.total_dim(),
                got: s.len(),
            });
        }
        let elements = self.elements();
        let d = self.dim();
        let scale = 1.0 / elements.len() as f64;
        let mut out = vec![0.0; d];
        let mut gs = vec![0.0; s.len()];
        let mut back = vec![0.0; d];
        let mut tapes = Vec::with_capacity(elements.len());
        for g in elements {
            self.input_rep.apply_into(g, s, &mut gs);
            gs.iter_mut().for_each(|x| *x *= self.input_scale);
            let tape = self.base_net.forward_cached(&gs);
            self.rep.apply_transpose_into(g, tape.output(), &mut back);
            for (o, b) in out.iter_mut().zip(&back) {
                *o += scale * b;
            }
            tapes.push((g, tape));
        }
        for (o, w) in out.iter_mut().zip(self.mask.weights()) {
            *o *= w;
        }
        Ok(PhiTape { tapes, output: out })
    }

    /// Reverse pass for a cotangent `∂L/∂φ_F(s)`: accumulates into
    /// `param_grad` and returns `∂L/∂s`.
    pub fn backward(&self, tape: &PhiTape, cotangent: &[f64], param_grad: &mut [f64]) -> Vec<f64> {
        let d = self.dim();
        let scale = 1.0 / tape.tapes.len() as f64;
        let masked: Vec<f64> = cotangent
            .iter()
            .zip(self.mask.weights())
            .map(|(c, w)| c * w * scale)
            .collect();
        let mut out_grad = vec![0.0; d];
        let mut input_grad = vec![0.0; self.input_rep.total_dim()];
        let mut pulled = vec![0.0; input_grad.len()];
        for (g, net_tape) in &tape.tapes {
            // ∂/∂h of ⟨c, ρ(g)ᵀ h⟩ is ρ(g) c.
            self.rep.apply_into(*g, &masked, &mut out_grad);
            let gx = self.base_net.backward(net_tape, &out_grad, param_grad);
            self.input_rep.apply_transpose_into(*g, &gx, &mut pulled);
            for (a, b) in input_grad.iter_mut().zip(&pulled) {
                *a += b * self.input_scale;
            }
        }
        input_grad
    }

    /// Parameter and input gradients of `⟨cotangent, φ_F(s)⟩`.
    pub fn gradients(&self, s: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if cotangent.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: cotangent.len(),
            });
        }
        let tape = self.forward_cached(s)?;
        let mut pg = vec![0.0; self.num_params()];
        let ig = self.backward(&tape, cotangent, &mut pg);
        Ok((pg, ig))
    }

    /// `min(ε, 1 − ‖φ_F(s') − φ_F(s)‖²)`; negative exactly when the
    /// unit-step Lipschitz surrogate is violated.
    pub fn lipschitz_violation(&self, s: &[f64], next: &[f64], epsilon: f64) -> Result<f64> {
        let a = self.forward(s)?;
        let b = self.forward(next)?;
        let sq: f64 = a.iter().zip(&b).map(|(x, y)| (y - x).powi(2)).sum();
        Ok(epsilon.min(1.0 - sq))
    }
}

/// `f̃(s, z) = (1/|G|) Σ_g f(g·s, g·z)` for a scoring function of states and
/// skills that both carry a representation of the same group.
pub struct GroupAveraged<'a, F> {
    state_rep: &'a DirectSumRep,
    skill_rep: &'a DirectSumRep,
    f: F,
}

pub fn group_average_scoring<'a, F>(
    state_rep: &'a DirectSumRep,
    skill_rep: &'a DirectSumRep,
    f: F,
) -> GroupAveraged<'a, F>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    GroupAveraged {
        state_rep,
        skill_rep,
        f,
    }
}

impl<F> GroupAveraged<'_, F>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    pub fn eval(&self, s: &[f64], z: &[f64]) -> f64 {
        let n = self.state_rep.order();
        let mut gs = vec![0.0; s.len()];
        let mut gz = vec![0.0; z.len()];
        let mut total = 0.0;
        for g in 0..n {
            self.state_rep.apply_into(g, s, &mut gs);
            self.skill_rep.apply_into(g, z, &mut gz);
            total += (self.f)(&gs, &gz);
        }
        total / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{central_difference, gaussian_vec, max_abs_diff, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn make_map(n: usize, spec: &str, seed: u64) -> EquivariantFeatureMap {
        let group = FiniteGroup::cyclic(n).unwrap();
        let rep = DirectSumRep::from_spec(&group, spec).unwrap();
        let input = DirectSumRep::planar(&group).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DiffNet::new(&[2, 12, rep.total_dim()], &mut rng);
        // Random biases too, so every parameter path is exercised.
        let mut net = net;
        for p in net.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let mask = FrequencyMask::all(&rep);
        EquivariantFeatureMap::new(group, net, input, rep, mask, true).unwrap()
    }

    #[test]
    fn equivariance_for_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, spec) in [(2, "0x1,1x2"), (4, "0x1,1x2,2x1"), (8, "0x1,1x1,2x1,3x1,4x1")] {
            for seed in 0..20 {
                let map = make_map(n, spec, seed);
                for _ in 0..50 {
                    let s = gaussian_vec(&mut rng, 2, 2.0);
                    let g = rng.random_range(0..n);
                    let lhs = map.forward(&map.input_rep().apply(g, &s).unwrap()).unwrap();
                    let rhs = map.rep().apply(g, &map.forward(&s).unwrap()).unwrap();
                    assert!(max_abs_diff(&lhs, &rhs) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn trivial_group_is_masked_base_net() {
        let map = make_map(1, "0x3", 2);
        let s = [0.4, -1.2];
        assert_eq!(map.forward(&s).unwrap(), map.base_net().forward(&s));
    }

    #[test]
    fn invariant_mask_gives_invariant_features() {
        let mut map = make_map(4, "0x2,1x1,2x1", 3);
        let rep = map.rep().clone();
        map.set_mask(FrequencyMask::keep_frequencies(&rep, &[0]));
        let s = [0.7, 0.2];
        let base = map.forward(&s).unwrap();
        for g in 1..4 {
            let gs = map.input_rep().apply(g, &s).unwrap();
            assert!(max_abs_diff(&map.forward(&gs).unwrap(), &base) < 1e-12);
        }
        assert_eq!(&base[2..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let map = make_map(4, "0x1,1x1,2x1", seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let s = gaussian_vec(&mut rng, 2, 1.0);
            let c = gaussian_vec(&mut rng, 4, 1.0);
            let map = map.with_input_scale(0.5 + seed as f64 * 0.1);
            let (pg, ig) = map.gradients(&s, &c).unwrap();
            let functional = |m: &EquivariantFeatureMap, x: &[f64]| {
                m.forward(x).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = central_difference(map.params(), 1e-5, |p| {
                let mut m = map.clone();
                m.params_mut().copy_from_slice(p);
                functional(&m, &s)
            });
            assert!(relative_error(&pg, &fd) < 1e-4, "seed {seed}");
            let fdx = central_difference(&s, 1e-5, |x| functional(&map, x));
            assert!(relative_error(&ig, &fdx) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn masked_out_outputs_receive_no_gradient() {
        // With the sign block masked, weights feeding only the sign output
        // must have zero gradient and perturbing them changes nothing.
        let mut map = make_map(4, "0x1,1x1,2x1", 9);
        let rep = map.rep().clone();
        map.set_mask(FrequencyMask::keep_frequencies(&rep, &[0, 1]));
        let s = [0.3, -0.8];
        let (pg, _) = map.gradients(&s, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        // Output row 3 of the last layer (12 inputs) plus its bias.
        let sizes = map.base_net().sizes().to_vec();
        let first = sizes[0] * sizes[1] + sizes[1];
        let row = first + 3 * sizes[1]..first + 4 * sizes[1];
        let bias = first + sizes[1] * sizes[2] + 3;
        assert!(pg[row.clone()].iter().all(|g| *g == 0.0));
        assert_eq!(pg[bias], 0.0);
        let before = map.forward(&s).unwrap();
        map.params_mut()[row.start] += 0.5;
        assert_eq!(map.forward(&s).unwrap(), before);
    }

    #[test]
    fn broken_mask_breaks_equivariance() {
        let mut map = make_map(4, "1x1", 1);
        map.set_mask(FrequencyMask::from_coordinates(vec![1.0, 0.25]));
        assert!(!map.mask().is_block_constant(map.rep()));
        let s = [1.0, 0.5];
        let lhs = map.forward(&map.input_rep().apply(1, &s).unwrap()).unwrap();
        let rhs = map.rep().apply(1, &map.forward(&s).unwrap()).unwrap();
        assert!(max_abs_diff(&lhs, &rhs) > 1e-3);
    }

    #[test]
    fn mask_constructors() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let rep = DirectSumRep::from_spec(&g, "0x1,1x1,2x1").unwrap();
        let m = FrequencyMask::keep_frequencies(&rep, &[1]);
        assert_eq!(m.weights(), &[0.0, 1.0, 1.0, 0.0]);
        assert!(m.is_block_constant(&rep));
        assert_eq!(m.active_dim(), 2);
        let b = FrequencyMask::from_block_weights(&rep, &[0.5, 1.0, 0.0]).unwrap();
        assert_eq!(b.weights(), &[0.5, 1.0, 1.0, 0.0]);
        assert!(FrequencyMask::from_block_weights(&rep, &[1.0]).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let rep = DirectSumRep::from_spec(&g, "1x1").unwrap();
        let input = DirectSumRep::planar(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DiffNet::new(&[2, 4, 3], &mut rng);
        let mask = FrequencyMask::all(&rep);
        assert!(EquivariantFeatureMap::new(g, net, input, rep, mask, true).is_err());
        let map = make_map(4, "1x1", 0);
        assert!(map.forward(&[1.0]).is_err());
    }

    #[test]
    fn lipschitz_violation_examples() {
        let map = make_map(4, "1x1", 4);
        let s = [0.2, 0.1];
        assert_eq!(map.lipschitz_violation(&s, &s, 1e-3).unwrap(), 1e-3);
        // A map whose displacement is exactly unit length.
        let g = FiniteGroup::cyclic(4).unwrap();
        let rep = DirectSumRep::from_spec(&g, "1x1").unwrap();
        let input = DirectSumRep::planar(&g).unwrap();
        let identity = DiffNet::from_params(&[2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let lin = EquivariantFeatureMap::new(g, identity, input, rep.clone(), FrequencyMask::all(&rep), true)
            .unwrap();
        assert_eq!(lin.lipschitz_violation(&[0.0, 0.0], &[0.0, 1.0], 1e-3).unwrap(), 0.0);
        // Joint action leaves the value unchanged.
        for h in 0..4 {
            let a = map.input_rep().apply(h, &[0.3, -0.4]).unwrap();
            let b = map.input_rep().apply(h, &[1.1, 0.9]).unwrap();
            let v = map.lipschitz_violation(&a, &b, 0.5).unwrap();
            let v0 = map.lipschitz_violation(&[0.3, -0.4], &[1.1, 0.9], 0.5).unwrap();
            assert!((v - v0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_averaging_examples() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let planar = DirectSumRep::planar(&g).unwrap();
        let inner = |s: &[f64], z: &[f64]| s[0] * z[0] + s[1] * z[1];
        let avg = group_average_scoring(&planar, &planar, inner);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let s = gaussian_vec(&mut rng, 2, 1.0);
            let z = gaussian_vec(&mut rng, 2, 1.0);
            assert!((avg.eval(&s, &z) - inner(&s, &z)).abs() < 1e-12);
        }
        let skew = |s: &[f64], z: &[f64]| s[0].sin() + 0.3 * z[1];
        let avg = group_average_scoring(&planar, &planar, skew);
        let (s, z) = ([0.4, -0.3], [0.6, 0.8]);
        for h in 0..4 {
            let hs = planar.apply(h, &s).unwrap();
            let hz = planar.apply(h, &z).unwrap();
            assert!((avg.eval(&hs, &hz) - avg.eval(&s, &z)).abs() < 1e-12);
        }
    }
}
