//! Hadamard triples `(R, B, L)`: the matrix `N^{-1/2} (e^{2 pi i R^{-1} b . l})`,
//! its unitarity, digit incongruence and completion search.

use std::ops::Deref;

use num_complex::Complex;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ifs::AffineIfs;
use crate::lattice::{DigitRole, DigitSet, ExpandingMatrix, LatticeBasis};
use crate::matrix::Matrix;
use crate::scalar::{frac, int, is_integer, rat_vec, Real};
use crate::{IntVec, Rational};

/// Default unitarity tolerance in the max norm.
pub const UNITARY_TOL: f64 = 1e-12;

/// A scaling matrix with two digit sets of equal size; not necessarily Hadamard.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    r: ExpandingMatrix,
    s: ExpandingMatrix,
    b: DigitSet,
    l: DigitSet,
}

impl Triple {
    pub fn new(r: ExpandingMatrix, b: DigitSet, l: DigitSet) -> Result<Self> {
        for (set, what) in [(&b, "digits of B"), (&l, "digits of L")] {
            if set.dim() != r.dim() {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: r.dim(),
                    found: set.dim(),
                });
            }
        }
        if b.len() != l.len() {
            return Err(Error::CardinalityMismatch { b: b.len(), l: l.len() });
        }
        let s = r.transpose();
        Ok(Triple {
            r,
            s,
            b: b.with_role(DigitRole::B),
            l: l.with_role(DigitRole::L),
        })
    }

    /// Convenience constructor from raw rows and digit lists; digits must contain zero.
    pub fn from_parts(r: &[Vec<i64>], b: Vec<IntVec>, l: Vec<IntVec>) -> Result<Self> {
        Triple::new(
            ExpandingMatrix::from_rows(r)?,
            DigitSet::new(DigitRole::B, b)?,
            DigitSet::new(DigitRole::L, l)?,
        )
    }

    pub fn dim(&self) -> usize {
        self.r.dim()
    }

    /// Common cardinality `N = #B = #L`.
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn r(&self) -> &ExpandingMatrix {
        &self.r
    }

    /// `S = R^T`.
    pub fn s(&self) -> &ExpandingMatrix {
        &self.s
    }

    pub fn b(&self) -> &DigitSet {
        &self.b
    }

    pub fn l(&self) -> &DigitSet {
        &self.l
    }

    /// The system `tau_b(x) = R^{-1}(x + b)`.
    pub fn b_ifs(&self) -> AffineIfs {
        AffineIfs::new(self.r.clone(), self.b.clone()).expect("dimensions checked")
    }

    /// The dual system `sigma_l(x) = S^{-1}(x + l)`.
    pub fn l_ifs(&self) -> AffineIfs {
        AffineIfs::new(self.s.clone(), self.l.clone()).expect("dimensions checked")
    }

    pub fn with_l(&self, l: DigitSet) -> Result<Triple> {
        Triple::new(self.r.clone(), self.b.clone(), l)
    }

    /// Exact phase `(R^{-1} b) . l mod 1` in `[0, 1)`.
    pub fn phase(&self, bi: usize, li: usize) -> Rational {
        let rb = self.r.inverse().mul_vec(&rat_vec(&self.b.vectors()[bi]));
        let dot = rb
            .iter()
            .zip(&self.l.vectors()[li])
            .fold(Rational::zero(), |acc, (x, &y)| acc + x * int(y));
        frac(&dot)
    }
}

/// A triple whose matrix has been verified unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct HadamardTriple {
    triple: Triple,
    defect: f64,
}

impl HadamardTriple {
    pub fn new(triple: Triple, tol: f64) -> Result<Self> {
        let (ok, defect) = is_hadamard_triple(&triple, tol);
        if !ok {
            return Err(Error::NotHadamard { defect, tol });
        }
        Ok(HadamardTriple { triple, defect })
    }

    /// Unitarity defect `max |H*H - I|` computed at construction.
    pub fn defect(&self) -> f64 {
        self.defect
    }

    pub fn triple(&self) -> &Triple {
        &self.triple
    }

    pub fn into_triple(self) -> Triple {
        self.triple
    }
}

impl Deref for HadamardTriple {
    type Target = Triple;

    fn deref(&self) -> &Triple {
        &self.triple
    }
}

/// `e^{2 pi i q}` with exact values at multiples of a quarter turn.
pub fn root_of_unity<F: Real>(q: &Rational) -> Complex<F> {
    let q = frac(q);
    let four = &q * int(4);
    if is_integer(&four) {
        return match four.to_integer().to_i64() {
            Some(0) => Complex::new(F::one(), F::zero()),
            Some(1) => Complex::new(F::zero(), F::one()),
            Some(2) => Complex::new(-F::one(), F::zero()),
            _ => Complex::new(F::zero(), -F::one()),
        };
    }
    let theta = F::from_rational(&q) * F::TAU();
    Complex::new(theta.cos(), theta.sin())
}

/// Matrix with entry `(b, l)` equal to `N^{-1/2} e^{2 pi i (R^{-1} b) . l}`; rows follow
/// `B`, columns follow `L`.
pub fn hadamard_matrix<F: Real>(t: &Triple) -> Matrix<Complex<F>> {
    let n = t.n();
    let scale = F::one() / F::from_int(n as i64).sqrt();
    let mut data = Vec::with_capacity(n * n);
    for bi in 0..n {
        for li in 0..n {
            data.push(root_of_unity::<F>(&t.phase(bi, li)) * scale);
        }
    }
    Matrix::new(n, n, data)
}

/// `max_{ij} |(H^* H - I)_{ij}|`.
pub fn unitarity_defect<F: Real>(h: &Matrix<Complex<F>>) -> F {
    let n = h.rows();
    let mut worst = F::zero();
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex::new(F::zero(), F::zero());
            for k in 0..n {
                acc = acc + h[(k, i)].conj() * h[(k, j)];
            }
            if i == j {
                acc = acc - F::one();
            }
            worst = worst.max(acc.norm());
        }
    }
    worst
}

/// Whether the triple is Hadamard at tolerance `tol`, with the defect.
pub fn is_hadamard_triple(t: &Triple, tol: f64) -> (bool, f64) {
    let defect = unitarity_defect(&hadamard_matrix::<f64>(t));
    (defect < tol, defect)
}

/// True iff no two digits of `l` differ by an element of `S Z^d`.
pub fn check_incongruence(l: &DigitSet, s: &ExpandingMatrix) -> bool {
    let vs = l.vectors();
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let diff: IntVec = vs[i].iter().zip(&vs[j]).map(|(a, b)| a - b).collect();
            let q = s.inverse().mul_vec(&rat_vec(&diff));
            if q.iter().all(is_integer) {
                return false;
            }
        }
    }
    true
}

/// One representative per class of `Z^d / A Z^d`, in lexicographic order.
///
/// The lower-triangular basis of `A Z^d` has diagonal `h_ii`; the vectors with
/// `0 <= v_i < h_ii` form a complete residue system.
pub fn residue_representatives(a: &ExpandingMatrix) -> Vec<IntVec> {
    let cols: Vec<Vec<Rational>> = a.matrix().to_rational().columns();
    let basis = LatticeBasis::from_generators(a.dim(), &cols).expect("nonsingular");
    let diag: Vec<i64> = (0..a.dim())
        .map(|i| basis.matrix()[(i, i)].to_integer().to_i64().expect("small diagonal"))
        .collect();
    let mut reps = vec![vec![]];
    for &h in &diag {
        reps = reps
            .into_iter()
            .flat_map(|v: IntVec| {
                (0..h).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    reps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub tol: f64,
    /// Maximum number of residue classes `|det R|` the search will accept.
    pub residue_bound: u64,
    /// Maximum number of partial sets visited.
    pub node_budget: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            tol: UNITARY_TOL,
            residue_bound: 1 << 16,
            node_budget: 1 << 24,
        }
    }
}

/// Every `L` with `0 in L`, `#L = #B`, one digit per residue class mod `S Z^d`,
/// making `(R, B, L)` Hadamard.
///
/// The matrix depends on `l` only through its class mod `S Z^d`, so the
/// search over residue representatives is exhaustive for the problem.
pub fn search_completions(r: &ExpandingMatrix, b: &DigitSet, cfg: &SearchConfig) -> Result<Vec<DigitSet>> {
    let s = r.transpose();
    let classes = s.abs_det();
    if classes > cfg.residue_bound {
        return Err(Error::BudgetExceeded {
            requested: classes as u128,
            budget: cfg.residue_bound as u128,
        });
    }
    let n = b.len();
    let reps = residue_representatives(&s);
    let zero = reps.iter().position(|v| v.iter().all(|&x| x == 0)).expect("0 is a representative");
    if n == 1 {
        return Ok(vec![DigitSet::new(DigitRole::L, vec![reps[zero].clone()])?]);
    }

    // Two columns l, l' are orthogonal iff sum_b e^{2 pi i (R^{-1} b).(l - l')} = 0.
    let rinv_b: Vec<Vec<Rational>> = b
        .vectors()
        .iter()
        .map(|v| r.inverse().mul_vec(&rat_vec(v)))
        .collect();
    let orthogonal = |u: &IntVec, v: &IntVec| -> bool {
        let mut acc = Complex::new(0.0f64, 0.0);
        for rb in &rinv_b {
            let dot = rb
                .iter()
                .zip(u.iter().zip(v))
                .fold(Rational::zero(), |a, (x, (&p, &q))| a + x * int(p - q));
            acc += root_of_unity::<f64>(&dot);
        }
        acc.norm() / (n as f64) < cfg.tol
    };
    let candidates: Vec<usize> = (0..reps.len())
        .filter(|&i| i != zero && orthogonal(&reps[i], &reps[zero]))
        .collect();
    let m = candidates.len();
    let adj: Vec<Vec<bool>> = (0..m)
        .map(|i| (0..m).map(|j| i != j && orthogonal(&reps[candidates[i]], &reps[candidates[j]])).collect())
        .collect();

    let visited = std::sync::atomic::AtomicU64::new(0);
    let found: Vec<Result<Vec<Vec<usize>>>> = (0..m)
        .into_par_iter()
        .map(|first| {
            let mut out = Vec::new();
            let mut clique = vec![first];
            extend_clique(&adj, &mut clique, n - 1, &mut out, &visited, cfg.node_budget)?;
            Ok(out)
        })
        .collect();
    let mut sets = Vec::new();
    for group in found {
        for clique in group? {
            let mut vectors = vec![reps[zero].clone()];
            vectors.extend(clique.iter().map(|&c| reps[candidates[c]].clone()));
            let l = DigitSet::new(DigitRole::L, vectors)?;
            let t = Triple::new(r.clone(), b.clone(), l.clone())?;
            if is_hadamard_triple(&t, cfg.tol).0 {
                sets.push(l);
            }
        }
    }
    Ok(sets)
}

fn extend_clique(
    adj: &[Vec<bool>],
    clique: &mut Vec<usize>,
    size: usize,
    out: &mut Vec<Vec<usize>>,
    visited: &std::sync::atomic::AtomicU64,
    budget: u64,
) -> Result<()> {
    let count = visited.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
    if count > budget {
        return Err(Error::BudgetExceeded {
            requested: count as u128,
            budget: budget as u128,
        });
    }
    if clique.len() == size {
        out.push(clique.clone());
        return Ok(());
    }
    let last = *clique.last().expect("nonempty clique");
    for next in last + 1..adj.len() {
        if clique.iter().all(|&c| adj[c][next]) {
            clique.push(next);
            extend_clique(adj, clique, size, out, visited, budget)?;
            clique.pop();
        }
    }
    Ok(())
}
