//! Finite cyclic groups and their real representation theory.
//!
//! Elements are integer indices `0..order`. A cyclic group `C_N` is labelled
//! so that element `g` is the rotation by `2πg/N`; the multiplication table
//! is then addition modulo `N`.
//!
//! Real irreducible representations of `C_N` come in three kinds:
//!
//! * the trivial representation (frequency 0, dimension 1);
//! * a 2×2 rotation block for each frequency `1 ≤ k < N/2`;
//! * the sign representation `(-1)^g` when `N` is even (frequency `N/2`).
//!
//! A rotation block is the real form of the pair of conjugate complex
//! characters `e^{±ikθ}`, so its endomorphism algebra is 2-dimensional. This
//! shows up as a character norm `⟨χ, χ⟩ = 2` and is the reason the Fourier
//! synthesis weight for such a block is `√d / 2` rather than `√d`.

use nalgebra::DMatrix;
use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Index of a group element.
pub type Element = usize;

/// A finite group given by its multiplication table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteGroup {
    order: usize,
    mul_table: Vec<Vec<Element>>,
    inv_table: Vec<Element>,
    identity: Element,
}

impl FiniteGroup {
    /// The cyclic group `C_N`.
    pub fn cyclic(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::ZeroOrder);
        }
        let mul_table = (0..n)
            .map(|i| (0..n).map(|j| (i + j) % n).collect())
            .collect();
        let inv_table = (0..n).map(|i| (n - i) % n).collect();
        Ok(Self {
            order: n,
            mul_table,
            inv_table,
            identity: 0,
        })
    }

    /// Builds a group from an arbitrary multiplication table, checking every
    /// group axiom (associativity exhaustively).
    pub fn from_table(mul_table: Vec<Vec<Element>>) -> Result<Self> {
        let n = mul_table.len();
        if n == 0 {
            return Err(Error::ZeroOrder);
        }
        for row in &mul_table {
            if row.len() != n {
                return Err(Error::InvalidGroup("table is not square".into()));
            }
            if row.iter().any(|&x| x >= n) {
                return Err(Error::InvalidGroup("table is not closed".into()));
            }
        }
        let identity = (0..n)
            .find(|&e| (0..n).all(|g| mul_table[e][g] == g && mul_table[g][e] == g))
            .ok_or_else(|| Error::InvalidGroup("no identity element".into()))?;
        let mut inv_table = Vec::with_capacity(n);
        for g in 0..n {
            let inv = (0..n)
                .find(|&h| mul_table[g][h] == identity && mul_table[h][g] == identity)
                .ok_or_else(|| Error::InvalidGroup(format!("element {g} has no inverse")))?;
            inv_table.push(inv);
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if mul_table[mul_table[a][b]][c] != mul_table[a][mul_table[b][c]] {
                        return Err(Error::InvalidGroup(format!(
                            "associativity fails on ({a}, {b}, {c})"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            order: n,
            mul_table,
            inv_table,
            identity,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> Element {
        self.identity
    }

    pub fn mul(&self, g: Element, h: Element) -> Element {
        self.mul_table[g][h]
    }

    pub fn inv(&self, g: Element) -> Element {
        self.inv_table[g]
    }

    pub fn elements(&self) -> std::ops::Range<Element> {
        0..self.order
    }

    pub fn mul_table(&self) -> &[Vec<Element>] {
        &self.mul_table
    }

    /// Order of a single element.
    pub fn element_order(&self, g: Element) -> usize {
        let mut x = g;
        let mut k = 1;
        while x != self.identity {
            x = self.mul(x, g);
            k += 1;
        }
        k
    }

    /// For a cyclic group, the exponent of every element with respect to the
    /// smallest-index generator, i.e. `g = γ^{e(g)}`.
    pub fn cyclic_exponents(&self) -> Result<Vec<usize>> {
        let generator = self
            .elements()
            .find(|&g| self.element_order(g) == self.order)
            .ok_or(Error::NotCyclic(self.order))?;
        let mut exps = vec![0; self.order];
        let mut x = self.identity;
        for k in 0..self.order {
            exps[x] = k;
            x = self.mul(x, generator);
        }
        Ok(exps)
    }
}

/// Rounds values that are within a few ulps of a multiple of 1/2 onto it, so
/// quarter- and half-turn rotation matrices are exact.
fn snap(x: f64) -> f64 {
    let r = (2.0 * x).round() / 2.0;
    if (x - r).abs() < 1e-14 {
        r
    } else {
        x
    }
}

fn rotation(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let (s, c) = (snap(s), snap(c));
    [[c, -s], [s, c]]
}

/// A real irreducible representation with every matrix precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Irrep {
    frequency: usize,
    dim: usize,
    /// `⟨χ, χ⟩` over the normalized counting measure: 1 for absolutely
    /// irreducible blocks, 2 for rotation blocks of complex type.
    char_norm: usize,
    matrices: Vec<DMatrix<f64>>,
}

impl Irrep {
    /// The irrep of `C_N` with the given frequency. Frequency 0 is trivial,
    /// `N/2` (for even `N`) is the sign representation, anything strictly in
    /// between is a 2×2 rotation block.
    pub fn cyclic(group: &FiniteGroup, frequency: usize) -> Result<Self> {
        let n = group.order();
        let exps = group.cyclic_exponents()?;
        if 2 * frequency > n {
            return Err(Error::RepSpec(format!(
                "frequency {frequency} exceeds N/2 for C_{n}"
            )));
        }
        let one_dim = frequency == 0 || 2 * frequency == n;
        let matrices: Vec<DMatrix<f64>> = exps
            .iter()
            .map(|&e| {
                if frequency == 0 {
                    DMatrix::from_element(1, 1, 1.0)
                } else if one_dim {
                    DMatrix::from_element(1, 1, if e % 2 == 0 { 1.0 } else { -1.0 })
                } else {
                    let r = rotation(2.0 * PI * (frequency * e) as f64 / n as f64);
                    DMatrix::from_row_slice(2, 2, &[r[0][0], r[0][1], r[1][0], r[1][1]])
                }
            })
            .collect();
        let dim = if one_dim { 1 } else { 2 };
        let norm: f64 = matrices.iter().map(|m| m.trace().powi(2)).sum::<f64>() / n as f64;
        Ok(Self {
            frequency,
            dim,
            char_norm: norm.round() as usize,
            matrices,
        })
    }

    pub fn frequency(&self) -> usize {
        self.frequency
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn char_norm(&self) -> usize {
        self.char_norm
    }

    pub fn matrix(&self, g: Element) -> &DMatrix<f64> {
        &self.matrices[g]
    }

    pub fn order(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_trivial(&self) -> bool {
        self.frequency == 0
    }
}

/// The complete list of real irreps of a cyclic group, ordered by frequency.
pub fn cyclic_irreps(group: &FiniteGroup) -> Result<Vec<Irrep>> {
    let n = group.order();
    (0..=n / 2).map(|k| Irrep::cyclic(group, k)).collect()
}

/// `Σ_j d_j² / ⟨χ_j, χ_j⟩`, which equals `|G|` exactly when the list is
/// complete and free of duplicates.
pub fn completeness_sum(irreps: &[Irrep]) -> f64 {
    irreps
        .iter()
        .map(|r| (r.dim() * r.dim()) as f64 / r.char_norm() as f64)
        .sum()
}

/// Average of a vector-valued function over the normalized counting measure.
pub fn haar_average<F>(group: &FiniteGroup, f: F) -> Vec<f64>
where
    F: Fn(Element) -> Vec<f64>,
{
    let mut acc: Vec<f64> = Vec::new();
    for g in group.elements() {
        let v = f(g);
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += x;
        }
    }
    let n = group.order() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Per-irrep Fourier coefficient matrices `f̂(ρ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoefficients {
    pub blocks: Vec<DMatrix<f64>>,
}

fn check_complete(group: &FiniteGroup, irreps: &[Irrep]) -> Result<()> {
    let got = completeness_sum(irreps);
    let mut freqs: Vec<usize> = irreps.iter().map(Irrep::frequency).collect();
    freqs.sort_unstable();
    freqs.dedup();
    if (got - group.order() as f64).abs() > 1e-9 || freqs.len() != irreps.len() {
        return Err(Error::IncompleteIrreps {
            got,
            order: group.order(),
        });
    }
    if irreps.iter().any(|r| r.order() != group.order()) {
        return Err(Error::DimensionMismatch {
            expected: group.order(),
            got: irreps[0].order(),
        });
    }
    Ok(())
}

/// Group Fourier transform: `f̂(ρ_j) = (1/|G|) Σ_g f(g) √d_j ρ_j(g)`.
pub fn fourier_analyze(
    group: &FiniteGroup,
    irreps: &[Irrep],
    f: &[f64],
) -> Result<FourierCoefficients> {
    if f.len() != group.order() {
        return Err(Error::DimensionMismatch {
            expected: group.order(),
            got: f.len(),
        });
    }
    check_complete(group, irreps)?;
    let n = group.order() as f64;
    let blocks = irreps
        .iter()
        .map(|rho| {
            let scale = (rho.dim() as f64).sqrt() / n;
            let mut acc = DMatrix::zeros(rho.dim(), rho.dim());
            for g in group.elements() {
                acc += rho.matrix(g) * (f[g] * scale);
            }
            acc
        })
        .collect();
    Ok(FourierCoefficients { blocks })
}

/// Inverse transform: `f(g) = Σ_j (√d_j / e_j) Tr(ρ_j(g)ᵀ f̂(ρ_j))`, where
/// `e_j = ⟨χ_j, χ_j⟩` is 2 for rotation blocks and 1 otherwise.
pub fn fourier_synthesize(
    group: &FiniteGroup,
    irreps: &[Irrep],
    coeffs: &FourierCoefficients,
) -> Result<Vec<f64>> {
    check_complete(group, irreps)?;
    if coeffs.blocks.len() != irreps.len() {
        return Err(Error::DimensionMismatch {
            expected: irreps.len(),
            got: coeffs.blocks.len(),
        });
    }
    for (rho, c) in irreps.iter().zip(&coeffs.blocks) {
        if c.nrows() != rho.dim() || c.ncols() != rho.dim() {
            return Err(Error::DimensionMismatch {
                expected: rho.dim(),
                got: c.nrows().max(c.ncols()),
            });
        }
    }
    Ok(group
        .elements()
        .map(|g| {
            irreps
                .iter()
                .zip(&coeffs.blocks)
                .map(|(rho, c)| {
                    let w = (rho.dim() as f64).sqrt() / rho.char_norm() as f64;
                    // Tr(Aᵀ B) is the entrywise inner product.
                    w * rho.matrix(g).dot(c)
                })
                .sum()
        })
        .collect())
}

/// `(1/|G|) Σ_g ρ(g) ⊗ σ(g)`.
pub fn schur_cross_average(group: &FiniteGroup, rho: &Irrep, sigma: &Irrep) -> DMatrix<f64> {
    let d = rho.dim() * sigma.dim();
    let mut acc = DMatrix::zeros(d, d);
    for g in group.elements() {
        acc += rho.matrix(g).kronecker(sigma.matrix(g));
    }
    acc / group.order() as f64
}

/// A block-diagonal direct sum of irreps, each with a multiplicity.
#[derive(Debug, Clone)]
pub struct DirectSumRep {
    blocks: Vec<(Irrep, usize)>,
    total_dim: usize,
    /// Row-major `total_dim × total_dim` matrix per element.
    dense: Vec<Vec<f64>>,
    /// Frequency of every coordinate.
    coord_freq: Vec<usize>,
}

impl DirectSumRep {
    pub fn new(blocks: Vec<(Irrep, usize)>) -> Result<Self> {
        let order = blocks
            .first()
            .map(|(r, _)| r.order())
            .ok_or_else(|| Error::RepSpec("empty representation".into()))?;
        if blocks.iter().any(|(r, _)| r.order() != order) {
            return Err(Error::RepSpec("irreps over different groups".into()));
        }
        let total_dim: usize = blocks.iter().map(|(r, m)| r.dim() * m).sum();
        let mut coord_freq = Vec::with_capacity(total_dim);
        let mut dense = vec![vec![0.0; total_dim * total_dim]; order];
        let mut offset = 0;
        for (irrep, mult) in &blocks {
            for _ in 0..*mult {
                let d = irrep.dim();
                for (g, m) in dense.iter_mut().enumerate() {
                    let block = irrep.matrix(g);
                    for i in 0..d {
                        for j in 0..d {
                            m[(offset + i) * total_dim + offset + j] = block[(i, j)];
                        }
                    }
                }
                coord_freq.extend(std::iter::repeat_n(irrep.frequency(), d));
                offset += d;
            }
        }
        Ok(Self {
            blocks,
            total_dim,
            dense,
            coord_freq,
        })
    }

    /// Parses a block list like `0x1,1x2,2x1` (frequency `x` multiplicity)
    /// over a cyclic group.
    pub fn from_spec(group: &FiniteGroup, spec: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, m) = item
                .split_once('x')
                .ok_or_else(|| Error::RepSpec(spec.to_string()))?;
            let k: usize = k.trim().parse().map_err(|_| Error::RepSpec(spec.into()))?;
            let m: usize = m.trim().parse().map_err(|_| Error::RepSpec(spec.into()))?;
            if m > 0 {
                blocks.push((Irrep::cyclic(group, k)?, m));
            }
        }
        Self::new(blocks)
    }

    /// The rotation action of `C_N` on the plane: rotation by `2πg/N`.
    pub fn planar(group: &FiniteGroup) -> Result<Self> {
        match group.order() {
            1 => Self::new(vec![(Irrep::cyclic(group, 0)?, 2)]),
            2 => Self::new(vec![(Irrep::cyclic(group, 1)?, 2)]),
            _ => Self::new(vec![(Irrep::cyclic(group, 1)?, 1)]),
        }
    }

    pub fn spec(&self) -> String {
        self.blocks
            .iter()
            .map(|(r, m)| format!("{}x{}", r.frequency(), m))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn blocks(&self) -> &[(Irrep, usize)] {
        &self.blocks
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn order(&self) -> usize {
        self.dense.len()
    }

    pub fn coord_frequencies(&self) -> &[usize] {
        &self.coord_freq
    }

    /// Coordinate ranges of every irrep copy, in order.
    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (irrep, mult) in &self.blocks {
            for _ in 0..*mult {
                out.push(offset..offset + irrep.dim());
                offset += irrep.dim();
            }
        }
        out
    }

    pub fn matrix(&self, g: Element) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.total_dim, self.total_dim, &self.dense[g])
    }

    /// `ρ_F(g) v`.
    pub fn apply(&self, g: Element, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v.len())?;
        let mut out = vec![0.0; self.total_dim];
        self.apply_into(g, v, &mut out);
        Ok(out)
    }

    /// `ρ_F(g)ᵀ v = ρ_F(g)⁻¹ v`.
    pub fn apply_inverse(&self, g: Element, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v.len())?;
        let mut out = vec![0.0; self.total_dim];
        self.apply_transpose_into(g, v, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, g: Element, v: &[f64], out: &mut [f64]) {
        let d = self.total_dim;
        let m = &self.dense[g];
        for i in 0..d {
            out[i] = (0..d).map(|j| m[i * d + j] * v[j]).sum();
        }
    }

    pub(crate) fn apply_transpose_into(&self, g: Element, v: &[f64], out: &mut [f64]) {
        let d = self.total_dim;
        let m = &self.dense[g];
        for j in 0..d {
            out[j] = (0..d).map(|i| m[i * d + j] * v[i]).sum();
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.total_dim {
            return Err(Error::DimensionMismatch {
                expected: self.total_dim,
                got,
            });
        }
        Ok(())
    }
}

impl fmt::Display for DirectSumRep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.spec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cyclic_tables() {
        let c1 = FiniteGroup::cyclic(1).unwrap();
        assert_eq!(c1.mul_table(), &[vec![0]]);
        let c4 = FiniteGroup::cyclic(4).unwrap();
        assert_eq!(c4.mul(1, 3), 0);
        assert_eq!(c4.inv(1), 3);
        assert!(matches!(FiniteGroup::cyclic(0), Err(Error::ZeroOrder)));
    }

    #[test]
    fn group_axioms_exhaustive() {
        for n in 1..=16 {
            let g = FiniteGroup::cyclic(n).unwrap();
            let rebuilt = FiniteGroup::from_table(g.mul_table().to_vec()).unwrap();
            assert_eq!(rebuilt, g);
            for a in g.elements() {
                assert_eq!(g.mul(g.identity(), a), a);
                assert_eq!(g.mul(a, g.inv(a)), g.identity());
            }
        }
    }

    fn klein_four() -> FiniteGroup {
        let t = (0..4).map(|i| (0..4).map(|j| i ^ j).collect()).collect();
        FiniteGroup::from_table(t).unwrap()
    }

    #[test]
    fn non_cyclic_rejected() {
        let v4 = klein_four();
        assert!(matches!(cyclic_irreps(&v4), Err(Error::NotCyclic(4))));
    }

    #[test]
    fn broken_tables_rejected() {
        assert!(FiniteGroup::from_table(vec![vec![0, 1], vec![1, 1]]).is_err());
        assert!(FiniteGroup::from_table(vec![vec![0, 2], vec![1, 0]]).is_err());
    }

    #[test]
    fn irrep_lists() {
        let dims = |n: usize| {
            let g = FiniteGroup::cyclic(n).unwrap();
            cyclic_irreps(&g)
                .unwrap()
                .iter()
                .map(|r| r.dim())
                .collect::<Vec<_>>()
        };
        assert_eq!(dims(1), vec![1]);
        assert_eq!(dims(2), vec![1, 1]);
        assert_eq!(dims(4), vec![1, 2, 1]);
        assert_eq!(dims(5), vec![1, 2, 2]);
    }

    /// Brute-force character inner products, computed from complex
    /// characters `e^{2πikg/N}` independently of the irrep construction.
    #[test]
    fn completeness_against_complex_characters() {
        for n in 1..=12 {
            let g = FiniteGroup::cyclic(n).unwrap();
            let irreps = cyclic_irreps(&g).unwrap();
            // Complex characters are orthonormal and there are N of them.
            let mut complex_count = 0;
            for k in 0..n {
                let norm: f64 = (0..n)
                    .map(|x| {
                        let t = 2.0 * PI * (k * x) as f64 / n as f64;
                        t.cos().powi(2) + t.sin().powi(2)
                    })
                    .sum::<f64>()
                    / n as f64;
                assert!((norm - 1.0).abs() < 1e-12);
                complex_count += 1;
            }
            // Each real rotation block accounts for two complex characters.
            let real_count: usize = irreps.iter().map(|r| r.char_norm()).sum();
            assert_eq!(real_count, complex_count);
            assert!((completeness_sum(&irreps) - n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn irrep_invariants() {
        for n in [1, 2, 3, 4, 6, 8] {
            let g = FiniteGroup::cyclic(n).unwrap();
            for rho in cyclic_irreps(&g).unwrap() {
                let id = DMatrix::identity(rho.dim(), rho.dim());
                assert_eq!(rho.matrix(g.identity()), &id);
                for a in g.elements() {
                    let m = rho.matrix(a);
                    assert!((m.transpose() * m - &id).amax() < 1e-12);
                    for b in g.elements() {
                        let lhs = rho.matrix(g.mul(a, b));
                        assert!((lhs - m * rho.matrix(b)).amax() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn haar_examples() {
        let g = FiniteGroup::cyclic(4).unwrap();
        assert_eq!(haar_average(&g, |_| vec![2.5, -1.0]), vec![2.5, -1.0]);
        let rho = Irrep::cyclic(&g, 1).unwrap();
        let avg = haar_average(&g, |x| {
            let m = rho.matrix(x);
            vec![m[(0, 0)], m[(1, 0)]]
        });
        assert!(avg.iter().all(|v| v.abs() < 1e-15));
        let ind = haar_average(&g, |x| vec![if x == 0 { 1.0 } else { 0.0 }]);
        assert_eq!(ind, vec![0.25]);
    }

    #[test]
    fn haar_left_invariance() {
        let g = FiniteGroup::cyclic(6).unwrap();
        let vals = [0.3, -1.0, 2.0, 0.7, 5.0, -0.25];
        let base = haar_average(&g, |x| vec![vals[x]]);
        for h in g.elements() {
            let shifted = haar_average(&g, |x| vec![vals[g.mul(h, x)]]);
            assert!((shifted[0] - base[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn analyze_examples() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let irreps = cyclic_irreps(&g).unwrap();
        let c = fourier_analyze(&g, &irreps, &[1.0; 4]).unwrap();
        assert!((c.blocks[0][(0, 0)] - 1.0).abs() < 1e-15);
        assert!(c.blocks[1].amax() < 1e-15 && c.blocks[2].amax() < 1e-15);

        let c = fourier_analyze(&g, &irreps, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        for (rho, block) in irreps.iter().zip(&c.blocks) {
            let expect = DMatrix::<f64>::identity(rho.dim(), rho.dim())
                * ((rho.dim() as f64).sqrt() / 4.0);
            assert!((block - expect).amax() < 1e-15);
        }
        let c = fourier_analyze(&g, &irreps, &[0.0; 4]).unwrap();
        assert!(c.blocks.iter().all(|b| b.amax() == 0.0));
    }

    #[test]
    fn synthesis_normalization() {
        let g = FiniteGroup::cyclic(8).unwrap();
        let irreps = cyclic_irreps(&g).unwrap();
        let mut coeffs = fourier_analyze(&g, &irreps, &[0.0; 8]).unwrap();
        assert!(fourier_synthesize(&g, &irreps, &coeffs)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        // Only the trivial coefficient: the constant c.
        coeffs.blocks[0][(0, 0)] = 1.75;
        let f = fourier_synthesize(&g, &irreps, &coeffs).unwrap();
        assert!(f.iter().all(|v| (v - 1.75).abs() < 1e-15));
        // And that constant analyzes back to itself.
        let back = fourier_analyze(&g, &irreps, &f).unwrap();
        assert!((back.blocks[0][(0, 0)] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2, 3, 4, 5, 8] {
            let g = FiniteGroup::cyclic(n).unwrap();
            let irreps = cyclic_irreps(&g).unwrap();
            for _ in 0..50 {
                let f: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let c = fourier_analyze(&g, &irreps, &f).unwrap();
                let back = fourier_synthesize(&g, &irreps, &c).unwrap();
                let err = f.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-10, "C_{n}: {err}");
            }
        }
    }

    #[test]
    fn incomplete_irreps_rejected() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let mut irreps = cyclic_irreps(&g).unwrap();
        irreps.pop();
        assert!(matches!(
            fourier_analyze(&g, &irreps, &[1.0; 4]),
            Err(Error::IncompleteIrreps { .. })
        ));
    }

    #[test]
    fn synthesis_shape_mismatch() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let irreps = cyclic_irreps(&g).unwrap();
        let coeffs = FourierCoefficients {
            blocks: vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)],
        };
        assert!(matches!(
            fourier_synthesize(&g, &irreps, &coeffs),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    /// Independent summation of `ρ(g)_{ij} σ(g)_{kl}` with explicit loops.
    fn cross_average_oracle(g: &FiniteGroup, rho: &Irrep, sigma: &Irrep) -> f64 {
        let mut sq = 0.0;
        for i in 0..rho.dim() {
            for j in 0..rho.dim() {
                for k in 0..sigma.dim() {
                    for l in 0..sigma.dim() {
                        let s: f64 = g
                            .elements()
                            .map(|x| rho.matrix(x)[(i, j)] * sigma.matrix(x)[(k, l)])
                            .sum::<f64>()
                            / g.order() as f64;
                        sq += s * s;
                    }
                }
            }
        }
        sq.sqrt()
    }

    #[test]
    fn schur_examples() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let irreps = cyclic_irreps(&g).unwrap();
        let (triv, rot, sign) = (&irreps[0], &irreps[1], &irreps[2]);
        assert!(schur_cross_average(&g, triv, sign).norm() < 1e-12);
        assert_eq!(schur_cross_average(&g, triv, triv)[(0, 0)], 1.0);
        let m = schur_cross_average(&g, rot, rot);
        let oracle = cross_average_oracle(&g, rot, rot);
        assert!((oracle - 2f64.sqrt()).abs() < 1e-12);
        assert!((m.norm() - oracle).abs() < 1e-12);
    }

    #[test]
    fn schur_cross_frequency_vanishes() {
        for n in [2, 3, 4, 5, 6, 8] {
            let g = FiniteGroup::cyclic(n).unwrap();
            let irreps = cyclic_irreps(&g).unwrap();
            for a in &irreps {
                for b in &irreps {
                    let norm = schur_cross_average(&g, a, b).norm();
                    if a.frequency() != b.frequency() {
                        assert!(norm < 1e-10, "C_{n} {} {}", a.frequency(), b.frequency());
                    } else {
                        assert!(norm > 0.4);
                    }
                }
            }
        }
    }

    #[test]
    fn rep_apply_examples() {
        let g = FiniteGroup::cyclic(4).unwrap();
        let rep = DirectSumRep::from_spec(&g, "1x1").unwrap();
        assert_eq!(rep.apply(0, &[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
        assert_eq!(rep.apply(1, &[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(
            rep.apply(1, &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn rep_spec_round_trip() {
        let g = FiniteGroup::cyclic(8).unwrap();
        let rep = DirectSumRep::from_spec(&g, "0x1, 1x2,4x1").unwrap();
        assert_eq!(rep.spec(), "0x1,1x2,4x1");
        assert_eq!(rep.total_dim(), 6);
        assert_eq!(rep.coord_frequencies(), &[0, 1, 1, 1, 1, 4]);
        assert!(DirectSumRep::from_spec(&g, "5x1").is_err());
        assert!(DirectSumRep::from_spec(&g, "1-1").is_err());
    }

    #[test]
    fn planar_is_rotation() {
        for n in [1, 2, 3, 4, 8] {
            let g = FiniteGroup::cyclic(n).unwrap();
            let rep = DirectSumRep::planar(&g).unwrap();
            for x in g.elements() {
                let t = 2.0 * PI * x as f64 / n as f64;
                let v = rep.apply(x, &[1.0, 0.0]).unwrap();
                assert!((v[0] - t.cos()).abs() < 1e-12 && (v[1] - t.sin()).abs() < 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn homomorphism_and_isometry(
                n in prop::sample::select(vec![2usize, 3, 4, 6, 8]),
                a in 0usize..8, b in 0usize..8,
                v in prop::collection::vec(-5.0f64..5.0, 7),
            ) {
                let g = FiniteGroup::cyclic(n).unwrap();
                let (a, b) = (a % n, b % n);
                let rep = DirectSumRep::from_spec(&g, &format!("0x1,1x2,{}x1", n / 2)).unwrap();
                let v = &v[..rep.total_dim()];
                let lhs = rep.apply(g.mul(a, b), v).unwrap();
                let rhs = rep.apply(a, &rep.apply(b, v).unwrap()).unwrap();
                for (x, y) in lhs.iter().zip(&rhs) {
                    prop_assert!((x - y).abs() < 1e-10);
                }
                let n0: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let n1: f64 = lhs.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((n0 - n1).abs() < 1e-10);
            }
        }
    }
}
