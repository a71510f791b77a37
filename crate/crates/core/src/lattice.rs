//! Exact integer and rational linear algebra: expanding matrices, digit sets,
//! Hermite-style lattice bases, dual lattices and unimodular conjugation.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, Schur};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hadamard::Triple;
use crate::ifs::BoundingBox;
use crate::matrix::Matrix;
use crate::scalar::{int, is_integer, rat_vec, Field};
use crate::{IntMatrix, IntVec, RatMatrix, RatVec, Rational};

/// Margin by which every eigenvalue modulus must exceed one.
pub const EXPANDING_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DigitRole {
    /// Translations of the contractions `tau_b`.
    B,
    /// Translations of the dual contractions `sigma_l`.
    L,
}

impl fmt::Display for DigitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DigitRole::B => f.write_str("B"),
            DigitRole::L => f.write_str("L"),
        }
    }
}

/// A finite list of distinct integer vectors, in caller order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DigitSet {
    role: DigitRole,
    dim: usize,
    vectors: Vec<IntVec>,
}

impl DigitSet {
    /// Validated digit set: nonempty, equal dimensions, no duplicates, contains 0.
    pub fn new(role: DigitRole, vectors: Vec<IntVec>) -> Result<Self> {
        let set = Self::from_vectors(role, vectors)?;
        if !set.contains_zero() {
            return Err(Error::MissingZero { role });
        }
        Ok(set)
    }

    /// Like [`DigitSet::new`] but without requiring the zero vector.
    pub fn from_vectors(role: DigitRole, vectors: Vec<IntVec>) -> Result<Self> {
        let dim = vectors.first().ok_or(Error::EmptyDigits)?.len();
        let mut seen = HashSet::new();
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "digit vector",
                    expected: dim,
                    found: v.len(),
                });
            }
            if !seen.insert(v.clone()) {
                return Err(Error::DuplicateDigit {
                    role,
                    digit: v.clone(),
                });
            }
        }
        Ok(DigitSet { role, dim, vectors })
    }

    pub fn role(&self) -> DigitRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[IntVec] {
        &self.vectors
    }

    pub fn get(&self, index: usize) -> Result<&IntVec> {
        self.vectors.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.vectors.len(),
        })
    }

    pub fn contains_zero(&self) -> bool {
        self.vectors.iter().any(|v| v.iter().all(|&x| x == 0))
    }

    pub fn position(&self, v: &[i64]) -> Option<usize> {
        self.vectors.iter().position(|w| w == v)
    }

    /// Image of every digit under an integer matrix, preserving order.
    pub fn transformed(&self, m: &IntMatrix) -> Result<DigitSet> {
        DigitSet::from_vectors(self.role, self.vectors.iter().map(|v| m.mul_vec(v)).collect())
    }

    pub fn with_role(mut self, role: DigitRole) -> Self {
        self.role = role;
        self
    }
}

/// Minimum modulus over the (complex) eigenvalues, computed in floating point.
pub fn min_eigenvalue_modulus(r: &IntMatrix) -> Result<f64> {
    if !r.is_square() {
        return Err(Error::NonSquare {
            rows: r.rows(),
            cols: r.cols(),
        });
    }
    let n = r.rows();
    let data: Vec<f64> = r.as_slice().iter().map(|&v| v as f64).collect();
    let m = DMatrix::from_row_slice(n, n, &data);
    // The unbounded QR iteration can stall on some integer matrices, so bound
    // it and retry on the transpose with a looser tolerance.
    for eps in [1e-14, 1e-10] {
        for candidate in [m.clone(), m.transpose()] {
            if let Some(schur) = Schur::try_new(candidate, eps, 100_000) {
                let eig = schur.complex_eigenvalues();
                return Ok(eig.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min));
            }
        }
    }
    Err(Error::Inconclusive(format!("eigenvalue iteration did not converge for {r:?}")))
}

/// Whether every eigenvalue has modulus above `1 + EXPANDING_MARGIN`, with the minimum modulus.
pub fn is_expanding(r: &IntMatrix) -> Result<(bool, f64)> {
    let min = min_eigenvalue_modulus(r)?;
    Ok((min > 1.0 + EXPANDING_MARGIN, min))
}

/// A square integer matrix whose eigenvalues all lie outside the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandingMatrix {
    matrix: IntMatrix,
    inverse: RatMatrix,
    min_modulus: f64,
}

impl ExpandingMatrix {
    pub fn new(matrix: IntMatrix) -> Result<Self> {
        let (expanding, min_modulus) = is_expanding(&matrix)?;
        let inverse = matrix.to_rational().inverse().ok_or(Error::Singular)?;
        if !expanding {
            return Err(Error::NotExpanding { min_modulus });
        }
        Ok(ExpandingMatrix {
            matrix,
            inverse,
            min_modulus,
        })
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows))
    }

    pub fn scalar(dim: usize, factor: i64) -> Result<Self> {
        Self::new(Matrix::diagonal(&vec![factor; dim]))
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &IntMatrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &RatMatrix {
        &self.inverse
    }

    pub fn min_modulus(&self) -> f64 {
        self.min_modulus
    }

    /// The transpose `S = R^T`, also expanding.
    pub fn transpose(&self) -> ExpandingMatrix {
        ExpandingMatrix {
            matrix: self.matrix.transpose(),
            inverse: self.inverse.transpose(),
            min_modulus: self.min_modulus,
        }
    }

    /// `|det|`, the number of residue classes of `Z^d` modulo the matrix.
    pub fn abs_det(&self) -> u64 {
        self.matrix
            .determinant_exact()
            .numer()
            .abs()
            .to_u64()
            .expect("determinant fits in u64")
    }

    pub fn inverse_power(&self, k: u32) -> RatMatrix {
        self.inverse.pow(k)
    }
}

/// Exact `R^{-k}`.
pub fn matrix_inverse_power(r: &ExpandingMatrix, k: u32) -> RatMatrix {
    r.inverse_power(k)
}

/// An integer matrix with determinant ±1, stored with its integer inverse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnimodularMatrix {
    matrix: IntMatrix,
    inverse: IntMatrix,
}

impl UnimodularMatrix {
    pub fn new(matrix: IntMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NonSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        let det = matrix.determinant_exact();
        if det.abs() != Rational::one() {
            return Err(Error::NonUnimodular {
                det: det.to_string(),
            });
        }
        let inverse = matrix
            .to_rational()
            .inverse()
            .and_then(|m| m.to_int())
            .expect("unimodular matrices have integer inverses");
        Ok(UnimodularMatrix { matrix, inverse })
    }

    pub fn identity(dim: usize) -> Self {
        UnimodularMatrix {
            matrix: Matrix::identity(dim),
            inverse: Matrix::identity(dim),
        }
    }

    /// A product of `ops` random elementary integer row operations.
    pub fn random<R: Rng + ?Sized>(dim: usize, ops: usize, rng: &mut R) -> Self {
        let mut m: IntMatrix = Matrix::identity(dim);
        if dim < 2 {
            if rng.random_bool(0.5) {
                m[(0, 0)] = -1;
            }
            return Self::new(m).expect("±1 is unimodular");
        }
        for _ in 0..ops {
            let i = rng.random_range(0..dim);
            let mut j = rng.random_range(0..dim - 1);
            if j >= i {
                j += 1;
            }
            match rng.random_range(0..6) {
                0 => {
                    for c in 0..dim {
                        let t = m[(i, c)];
                        m[(i, c)] = m[(j, c)];
                        m[(j, c)] = t;
                    }
                }
                1 => {
                    for c in 0..dim {
                        m[(i, c)] = -m[(i, c)];
                    }
                }
                _ => {
                    let k = [-2, -1, 1, 2][rng.random_range(0..4)];
                    for c in 0..dim {
                        m[(i, c)] += k * m[(j, c)];
                    }
                }
            }
        }
        Self::new(m).expect("elementary operations preserve unimodularity")
    }

    pub fn matrix(&self) -> &IntMatrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &IntMatrix {
        &self.inverse
    }

    /// `(M^T)^{-1}`, the map acting on the frequency side.
    pub fn inverse_transpose(&self) -> IntMatrix {
        self.inverse.transpose()
    }

    pub fn inverted(&self) -> UnimodularMatrix {
        UnimodularMatrix {
            matrix: self.inverse.clone(),
            inverse: self.matrix.clone(),
        }
    }
}

/// `(M R M^{-1}, M B, (M^T)^{-1} L)`.
pub fn conjugate_triple(m: &UnimodularMatrix, t: &Triple) -> Result<Triple> {
    let r = t.r().matrix();
    if m.matrix().rows() != r.rows() {
        return Err(Error::DimensionMismatch {
            what: "conjugation matrix",
            expected: r.rows(),
            found: m.matrix().rows(),
        });
    }
    let new_r = m.matrix().matmul(r).matmul(m.inverse());
    let b = t.b().transformed(m.matrix())?;
    let l = t.l().transformed(&m.inverse_transpose())?;
    Triple::new(ExpandingMatrix::new(new_r)?, b, l)
}

/// A full-rank lattice in `Q^d`, stored as a canonical lower-triangular basis.
///
/// Columns of `basis` are the basis vectors. The diagonal is positive and each
/// entry left of the diagonal satisfies `0 <= g[i][j] < g[i][i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBasis {
    basis: RatMatrix,
}

impl LatticeBasis {
    /// Lattice generated by arbitrary rational vectors; must span `Q^d`.
    pub fn from_generators(dim: usize, generators: &[RatVec]) -> Result<Self> {
        let gens: Vec<&RatVec> = generators.iter().filter(|g| g.iter().any(|q| !q.is_zero())).collect();
        for g in &gens {
            if g.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "lattice generator",
                    expected: dim,
                    found: g.len(),
                });
            }
        }
        let denom = gens
            .iter()
            .flat_map(|g| g.iter())
            .fold(BigInt::one(), |acc, q| acc.lcm(q.denom()));
        let int_gens: Vec<Vec<BigInt>> = gens
            .iter()
            .map(|g| g.iter().map(|q| (q * &denom).to_integer()).collect())
            .collect();
        let cols = hermite_columns(dim, int_gens);
        if cols.len() < dim {
            return Err(Error::RankDeficient {
                rank: cols.len(),
                dim,
            });
        }
        let scale = Rational::from_integer(denom);
        let rat_cols: Vec<RatVec> = cols
            .into_iter()
            .map(|c| c.into_iter().map(|v| Rational::from_integer(v) / &scale).collect())
            .collect();
        Ok(LatticeBasis {
            basis: Matrix::from_columns(&rat_cols),
        })
    }

    pub fn integer(dim: usize) -> Self {
        LatticeBasis {
            basis: Matrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn matrix(&self) -> &RatMatrix {
        &self.basis
    }

    pub fn vectors(&self) -> Vec<RatVec> {
        self.basis.columns()
    }

    /// Integer coordinates of `v` in the basis, when `v` lies in the lattice.
    #[allow(clippy::needless_range_loop)]
    pub fn coordinates(&self, v: &[Rational]) -> Option<Vec<BigInt>> {
        let d = self.dim();
        assert_eq!(v.len(), d);
        let mut coords = Vec::with_capacity(d);
        let mut residual: RatVec = v.to_vec();
        for i in 0..d {
            let c = &residual[i] / &self.basis[(i, i)];
            if !is_integer(&c) {
                return None;
            }
            for k in i..d {
                let t = &self.basis[(k, i)] * &c;
                residual[k] -= t;
            }
            coords.push(c.to_integer());
        }
        Some(coords)
    }

    pub fn contains(&self, v: &[Rational]) -> bool {
        self.coordinates(v).is_some()
    }

    /// Image of the lattice under the projection onto coordinates `from..dim`.
    pub fn project_tail(&self, from: usize) -> Result<LatticeBasis> {
        let d = self.dim();
        let gens: Vec<RatVec> = self.vectors().into_iter().map(|v| v[from..].to_vec()).collect();
        LatticeBasis::from_generators(d - from, &gens)
    }

    /// Every lattice point inside the box, in lexicographic coordinate order.
    pub fn points_in_box(&self, bbox: &BoundingBox, budget: usize) -> Result<Vec<RatVec>> {
        let d = self.dim();
        assert_eq!(bbox.dim(), d);
        let mut out = Vec::new();
        let mut partial = vec![Rational::zero(); d];
        self.enumerate_box(0, &mut partial, bbox, budget, &mut out)?;
        Ok(out)
    }

    #[allow(clippy::needless_range_loop)]
    fn enumerate_box(
        &self,
        row: usize,
        partial: &mut RatVec,
        bbox: &BoundingBox,
        budget: usize,
        out: &mut Vec<RatVec>,
    ) -> Result<()> {
        let d = self.dim();
        if row == d {
            if out.len() >= budget {
                return Err(Error::BudgetExceeded {
                    requested: out.len() as u128 + 1,
                    budget: budget as u128,
                });
            }
            out.push(partial.clone());
            return Ok(());
        }
        // partial holds the contribution of columns < row; column `row` is the
        // first one touching coordinate `row`.
        let g = &self.basis[(row, row)];
        let (lo, hi) = bbox.interval(row);
        let c_lo = ((lo - &partial[row]) / g).ceil().to_integer();
        let c_hi = ((hi - &partial[row]) / g).floor().to_integer();
        let mut c = c_lo;
        while c <= c_hi {
            let cq = Rational::from_integer(c.clone());
            let saved: RatVec = partial[row..].to_vec();
            for k in row..d {
                let t = &self.basis[(k, row)] * &cq;
                partial[k] += t;
            }
            self.enumerate_box(row + 1, partial, bbox, budget, out)?;
            partial[row..].clone_from_slice(&saved);
            c += 1;
        }
        Ok(())
    }
}

/// Column-style Hermite normal form of the lattice generated by `gens`.
///
/// Returns the nonzero basis columns; the result is lower triangular with a
/// positive diagonal and reduced entries left of the diagonal.
fn hermite_columns(dim: usize, gens: Vec<Vec<BigInt>>) -> Vec<Vec<BigInt>> {
    let mut pool: Vec<Vec<BigInt>> = gens;
    let mut basis: Vec<Vec<BigInt>> = Vec::new();
    for row in 0..dim {
        pool.retain(|c| c.iter().any(|v| !v.is_zero()));
        loop {
            let nonzero: Vec<usize> = (0..pool.len()).filter(|&j| !pool[j][row].is_zero()).collect();
            if nonzero.len() <= 1 {
                break;
            }
            let p = *nonzero
                .iter()
                .min_by_key(|&&j| pool[j][row].abs())
                .expect("nonempty");
            let pivot = pool[p].clone();
            for &j in &nonzero {
                if j == p {
                    continue;
                }
                let q = pool[j][row].div_floor(&pivot[row]);
                for k in 0..dim {
                    let t = &q * &pivot[k];
                    pool[j][k] -= t;
                }
            }
        }
        let Some(p) = (0..pool.len()).find(|&j| !pool[j][row].is_zero()) else {
            continue;
        };
        let mut pivot = pool.swap_remove(p);
        if pivot[row].is_negative() {
            pivot.iter_mut().for_each(|v| *v = -v.clone());
        }
        for col in basis.iter_mut() {
            let q = col[row].div_floor(&pivot[row]);
            if !q.is_zero() {
                for k in row..dim {
                    let t = &q * &pivot[k];
                    col[k] -= t;
                }
            }
        }
        basis.push(pivot);
    }
    basis
}

/// `Gamma = { g : g . b in Z for all b in B }` with a canonical basis.
pub fn dual_lattice(b: &DigitSet) -> Result<LatticeBasis> {
    let d = b.dim();
    let span = LatticeBasis::from_generators(d, &b.vectors().iter().map(|v| rat_vec(v)).collect::<Vec<_>>())
        .map_err(|e| match e {
            Error::RankDeficient { rank, dim } => Error::RankDeficient { rank, dim },
            other => other,
        })?;
    let h_inv_t = span
        .matrix()
        .inverse()
        .expect("full-rank basis is invertible")
        .transpose();
    LatticeBasis::from_generators(d, &h_inv_t.columns())
}

/// Exact rational dot product.
pub fn rat_dot(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter().zip(b).fold(Rational::zero(), |acc, (x, y)| acc + x * y)
}

pub fn int_to_rat_dot(a: &[i64], b: &[Rational]) -> Rational {
    a.iter().zip(b).fold(Rational::zero(), |acc, (&x, y)| acc + int(x) * y)
}

pub fn rat_mat_vec_int(m: &RatMatrix, v: &[i64]) -> RatVec {
    m.mul_vec(&rat_vec(v))
}

pub fn to_rat<T: Into<i64> + Copy>(v: &[T]) -> RatVec {
    v.iter().map(|&x| Rational::from_int(x.into())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;
    use proptest::prelude::*;

    fn example_b() -> DigitSet {
        DigitSet::new(DigitRole::B, vec![vec![0, 0], vec![0, 2], vec![1, 4], vec![1, 6]]).unwrap()
    }

    #[test]
    fn expanding_examples() {
        let (ok, m) = is_expanding(&Matrix::diagonal(&[4, 4])).unwrap();
        assert!(ok);
        assert!((m - 4.0).abs() < 1e-12);
        let (ok, m) = is_expanding(&Matrix::identity(3)).unwrap();
        assert!(!ok);
        assert!((m - 1.0).abs() < 1e-12);
        let (ok, m) = is_expanding(&Matrix::from_rows(&[vec![2, 1], vec![0, 2]])).unwrap();
        assert!(ok);
        assert!((m - 2.0).abs() < 1e-6);
        assert!(matches!(
            is_expanding(&Matrix::new(1, 2, vec![1, 2])),
            Err(Error::NonSquare { .. })
        ));
    }

    #[test]
    fn rejects_non_expanding_and_singular() {
        assert!(matches!(
            ExpandingMatrix::new(Matrix::identity(2)),
            Err(Error::NotExpanding { .. })
        ));
        assert!(ExpandingMatrix::new(Matrix::from_rows(&[vec![2, 4], vec![1, 2]])).is_err());
    }

    #[test]
    fn inverse_powers() {
        let r = ExpandingMatrix::scalar(2, 4).unwrap();
        assert_eq!(
            matrix_inverse_power(&r, 2),
            Matrix::diagonal(&[ratio(1, 16), ratio(1, 16)])
        );
        let r = ExpandingMatrix::from_rows(&[vec![4, 0], vec![1, 4]]).unwrap();
        assert_eq!(
            matrix_inverse_power(&r, 1),
            Matrix::from_rows(&[vec![ratio(1, 4), int(0)], vec![ratio(-1, 16), ratio(1, 4)]])
        );
        assert!(r.matrix().to_rational().matmul(r.inverse()).is_identity());
    }

    #[test]
    fn digit_set_validation() {
        assert!(matches!(
            DigitSet::new(DigitRole::B, vec![vec![1], vec![2]]),
            Err(Error::MissingZero { role: DigitRole::B })
        ));
        assert!(matches!(
            DigitSet::new(DigitRole::L, vec![vec![0], vec![0]]),
            Err(Error::DuplicateDigit { .. })
        ));
        assert!(matches!(
            DigitSet::new(DigitRole::L, vec![vec![0], vec![0, 1]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(DigitSet::new(DigitRole::B, vec![]), Err(Error::EmptyDigits)));
    }

    #[test]
    fn dual_lattice_examples() {
        let gamma = dual_lattice(&example_b()).unwrap();
        assert_eq!(
            gamma.vectors(),
            vec![vec![int(1), int(0)], vec![int(0), ratio(1, 2)]]
        );

        let std = DigitSet::new(DigitRole::B, vec![vec![0, 0, 0], vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(dual_lattice(&std).unwrap(), LatticeBasis::integer(3));

        let b = DigitSet::new(DigitRole::B, vec![vec![0], vec![2]]).unwrap();
        assert_eq!(dual_lattice(&b).unwrap().vectors(), vec![vec![ratio(1, 2)]]);

        let flat = DigitSet::new(DigitRole::B, vec![vec![0, 0], vec![1, 1], vec![2, 2]]).unwrap();
        assert_eq!(
            dual_lattice(&flat),
            Err(Error::RankDeficient { rank: 1, dim: 2 })
        );
    }

    #[test]
    fn hermite_form_is_canonical() {
        // Same lattice from two generating sets.
        let a = LatticeBasis::from_generators(2, &[rat_vec(&[2, 1]), rat_vec(&[0, 3])]).unwrap();
        let b = LatticeBasis::from_generators(2, &[rat_vec(&[2, 4]), rat_vec(&[2, 1]), rat_vec(&[4, 5])]).unwrap();
        assert_eq!(a, b);
        let g = a.matrix();
        assert!(g[(0, 1)].is_zero());
        assert!(g[(0, 0)] > int(0) && g[(1, 1)] > int(0));
        assert!(g[(1, 0)] >= int(0) && g[(1, 0)] < g[(1, 1)]);
    }

    #[test]
    fn points_in_box_enumerates_gamma() {
        let gamma = dual_lattice(&example_b()).unwrap();
        let bbox = BoundingBox::new(vec![(int(0), ratio(2, 3)), (int(0), ratio(5, 3))]);
        let pts = gamma.points_in_box(&bbox, 100).unwrap();
        assert_eq!(
            pts,
            vec![
                vec![int(0), int(0)],
                vec![int(0), ratio(1, 2)],
                vec![int(0), int(1)],
                vec![int(0), ratio(3, 2)],
            ]
        );
    }

    #[test]
    fn unimodular_validation() {
        let m = Matrix::from_rows(&[vec![4, -1], vec![0, 1]]);
        assert!(matches!(UnimodularMatrix::new(m), Err(Error::NonUnimodular { .. })));
        let m = UnimodularMatrix::new(Matrix::from_rows(&[vec![4, -1], vec![1, 0]])).unwrap();
        assert_eq!(m.inverse(), &Matrix::from_rows(&[vec![0, 1], vec![-1, 4]]));
    }

    proptest! {
        #[test]
        fn dual_basis_pairs_integrally(
            digits in proptest::collection::vec(proptest::collection::vec(-6i64..=6, 2), 2..6)
        ) {
            let mut vs = vec![vec![0, 0]];
            for d in digits {
                if !vs.contains(&d) {
                    vs.push(d);
                }
            }
            let b = DigitSet::new(DigitRole::B, vs).unwrap();
            match dual_lattice(&b) {
                Ok(gamma) => {
                    for g in gamma.vectors() {
                        for v in b.vectors() {
                            prop_assert!(is_integer(&int_to_rat_dot(v, &g)));
                        }
                    }
                }
                Err(Error::RankDeficient { rank, .. }) => prop_assert!(rank < 2),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn inverse_power_is_exact(
            entries in proptest::collection::vec(-3i64..=3, 9),
            diag in 2i64..5,
            k in 1u32..=12,
        ) {
            // Diagonally dominant integer matrices are expanding.
            let mut m: IntMatrix = Matrix::new(3, 3, entries.iter().map(|e| e.signum()).collect());
            for i in 0..3 {
                m[(i, i)] = diag + 2;
            }
            if let Ok(r) = ExpandingMatrix::new(m) {
                let prod = r.matrix().to_rational().pow(k).matmul(&matrix_inverse_power(&r, k));
                prop_assert!(prod.is_identity());
            }
        }
    }
}
