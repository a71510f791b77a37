//! The weight `W_B`, the Fourier transform of the invariant measure as an
//! infinite product, orthogonality of exponentials and Parseval certification
//! of candidate spectra.

use std::collections::{HashMap, HashSet};

use num_complex::Complex;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hadamard::Triple;
use crate::ifs::BoundingBox;
use crate::lattice::{DigitSet, ExpandingMatrix};
use crate::matrix::Matrix;
use crate::scalar::{int, is_integer, rational_to_f64, Real};
use crate::{IntMatrix, IntVec, RatMatrix, RatVec, Rational};

/// Default certification tolerance on `|s_n(x) - 1|`.
pub const CERTIFY_TOL: f64 = 1e-2;

/// Default relative tail tolerance for `|mu_hat|^2` products.
pub const PRODUCT_TOL: f64 = 1e-12;

/// Branch weight below which the transfer recursion stops descending.
pub const PRUNE_WEIGHT: f64 = 1e-14;

/// Orthogonality checks refuse to look at more pairs than this.
pub const PAIR_CAP: usize = 1_000_000;

const MAX_PRODUCT_DEPTH: u32 = 4096;

/// Largest digit range expanded through a table of powers of `e^{2 pi i y_j}`.
const POWER_TABLE_LIMIT: i64 = 64;

/// `e^{2 pi i t}` after reducing `t` mod 1.
fn turn<F: Real>(t: F) -> Complex<F> {
    let theta = (t - t.floor()) * F::TAU();
    Complex::new(theta.cos(), theta.sin())
}

/// `|N^{-1} sum_b e^{2 pi i b.x}|^2`, evaluated term by term.
pub fn wb_eval(b: &DigitSet, x: &[f64]) -> f64 {
    let n = b.len() as f64;
    let sum: Complex<f64> = b
        .vectors()
        .iter()
        .map(|v| turn(v.iter().zip(x).map(|(&bi, &xi)| bi as f64 * xi).sum::<f64>()))
        .sum();
    (sum / n).norm_sqr()
}

/// `|sum_l W_B(sigma_l x) - 1|`.
pub fn partition_residual(t: &Triple, x: &[f64]) -> f64 {
    let ifs = t.l_ifs();
    let total: f64 = (0..t.n())
        .map(|i| wb_eval(t.b(), &ifs.apply_map(i, x).expect("valid digit index")))
        .sum();
    (total - 1.0).abs()
}

/// How many factors of the infinite product to take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProductDepth {
    Fixed(u32),
    /// Smallest depth whose certified tail bound is below `tol`.
    Auto { tol: f64 },
}

impl Default for ProductDepth {
    fn default() -> Self {
        ProductDepth::Auto { tol: PRODUCT_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuHat<F> {
    pub value: Complex<F>,
    pub depth: u32,
    /// Bound on `|mu_hat(x) - value|`.
    pub tail_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuHatSq<F> {
    pub value: F,
    pub depth: u32,
    /// The exact square lies in `[value (1 - rel_tail), value]`.
    pub rel_tail: f64,
}

/// Evaluator for `m_B`, `W_B` and `mu_hat` of the measure of `(R, B)`.
#[derive(Debug, Clone)]
pub struct MeasureTransform<F: Real = f64> {
    dim: usize,
    digits: Vec<IntVec>,
    lo: Vec<i64>,
    hi: Vec<i64>,
    s_inv: Matrix<F>,
    s_inv_exact: RatMatrix,
    /// `max_b |b|_1`.
    beta: f64,
    /// Upper bound on `sum_{j>=1} |S^{-j}|_inf`.
    lin_series: f64,
    /// Upper bound on `sum_{j>=1} |S^{-j}|_inf^2`.
    quad_series: f64,
}

impl<F: Real> MeasureTransform<F> {
    pub fn new(r: &ExpandingMatrix, b: &DigitSet) -> Self {
        let d = r.dim();
        let s_inv_exact = r.inverse().transpose();
        let digits = b.vectors().to_vec();
        let lo: Vec<i64> = (0..d).map(|j| digits.iter().map(|v| v[j]).min().unwrap_or(0).min(0)).collect();
        let hi: Vec<i64> = (0..d).map(|j| digits.iter().map(|v| v[j]).max().unwrap_or(0).max(0)).collect();
        let beta = digits
            .iter()
            .map(|v| v.iter().map(|x| x.unsigned_abs()).sum::<u64>())
            .max()
            .unwrap_or(0) as f64;
        let (lin_series, quad_series) = series_bounds(&s_inv_exact);
        MeasureTransform {
            dim: d,
            digits,
            lo,
            hi,
            s_inv: s_inv_exact.to_real::<F>(),
            s_inv_exact,
            beta,
            lin_series,
            quad_series,
        }
    }

    pub fn from_triple(t: &Triple) -> Self {
        Self::new(t.r(), t.b())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.digits.len()
    }

    pub fn digits(&self) -> &[IntVec] {
        &self.digits
    }

    pub fn s_inverse(&self) -> &Matrix<F> {
        &self.s_inv
    }

    pub fn s_inverse_exact(&self) -> &RatMatrix {
        &self.s_inv_exact
    }

    /// `m_B(y) = N^{-1} sum_b e^{2 pi i b.y}`.
    pub fn m_b(&self, y: &[F]) -> Complex<F> {
        let phases: Vec<Complex<F>> = y.iter().map(|&t| turn(t)).collect();
        self.m_b_from_phases(&phases)
    }

    /// `m_B` given `w_j = e^{2 pi i y_j}`.
    pub fn m_b_from_phases(&self, w: &[Complex<F>]) -> Complex<F> {
        let n = F::from_int(self.digits.len() as i64);
        let wide = (0..self.dim).any(|j| self.hi[j] - self.lo[j] > POWER_TABLE_LIMIT);
        if wide {
            let sum = self.digits.iter().fold(Complex::new(F::zero(), F::zero()), |acc, b| {
                acc + b
                    .iter()
                    .zip(w)
                    .fold(Complex::new(F::one(), F::zero()), |p, (&e, wj)| p * wj.powi(e as i32))
            });
            return sum / n;
        }
        let tables: Vec<Vec<Complex<F>>> = (0..self.dim)
            .map(|j| {
                let len = (self.hi[j] - self.lo[j] + 1) as usize;
                let mut table = vec![Complex::new(F::one(), F::zero()); len];
                let zero = (-self.lo[j]) as usize;
                for k in zero + 1..len {
                    table[k] = table[k - 1] * w[j];
                }
                let inv = w[j].conj();
                for k in (0..zero).rev() {
                    table[k] = table[k + 1] * inv;
                }
                table
            })
            .collect();
        let mut sum = Complex::new(F::zero(), F::zero());
        for b in &self.digits {
            let mut term = Complex::new(F::one(), F::zero());
            for (j, &e) in b.iter().enumerate() {
                term = term * tables[j][(e - self.lo[j]) as usize];
            }
            sum = sum + term;
        }
        sum / n
    }

    /// `W_B(y) = |m_B(y)|^2`.
    pub fn wb(&self, y: &[F]) -> F {
        self.m_b(y).norm_sqr()
    }

    /// `1 - W_B(y) <= c |y|_inf^2` with `c = (2 pi beta)^2`.
    fn quad_constant(&self) -> f64 {
        (std::f64::consts::TAU * self.beta).powi(2)
    }

    /// Certified bound on `|prod_{j>=1} m_B(S^{-j} y) - 1|`.
    pub fn complex_tail(&self, y_norm: f64) -> f64 {
        (std::f64::consts::TAU * self.beta * self.lin_series * y_norm).exp_m1()
    }

    /// Certified bound on `1 - prod_{j>=1} W_B(S^{-j} y)`.
    pub fn quad_tail(&self, y_norm: f64) -> f64 {
        (self.quad_constant() * self.quad_series * y_norm * y_norm).min(1.0)
    }

    /// `prod_{k=1}^K m_B(S^{-k} x)` with a bound on the omitted factors.
    pub fn mu_hat(&self, x: &[F], depth: ProductDepth) -> MuHat<F> {
        let mut y = x.to_vec();
        let mut prod = Complex::new(F::one(), F::zero());
        let mut k = 0;
        loop {
            let norm = sup_norm(&y);
            let tail = self.complex_tail(norm);
            let done = match depth {
                ProductDepth::Fixed(kk) => k >= kk,
                ProductDepth::Auto { tol } => tail <= tol || k >= MAX_PRODUCT_DEPTH,
            };
            if done || prod.norm_sqr() == F::zero() {
                let scale = prod.norm().to_f64().unwrap_or(f64::NAN);
                return MuHat {
                    value: prod,
                    depth: k,
                    tail_bound: scale * tail,
                };
            }
            y = self.s_inv.mul_vec(&y);
            prod = prod * self.m_b(&y);
            k += 1;
        }
    }

    /// `prod_{k=1}^K W_B(S^{-k} x)`, an upper estimate of `|mu_hat(x)|^2`.
    pub fn mu_hat_sq(&self, x: &[F], depth: ProductDepth) -> MuHatSq<F> {
        let mut y = x.to_vec();
        let mut prod = F::one();
        let mut k = 0;
        loop {
            let tail = self.quad_tail(sup_norm(&y));
            let done = match depth {
                ProductDepth::Fixed(kk) => k >= kk,
                ProductDepth::Auto { tol } => tail <= tol || k >= MAX_PRODUCT_DEPTH,
            };
            if done || prod == F::zero() {
                return MuHatSq {
                    value: prod,
                    depth: k,
                    rel_tail: if prod == F::zero() { 0.0 } else { tail },
                };
            }
            y = self.s_inv.mul_vec(&y);
            prod = prod * self.wb(&y);
            k += 1;
        }
    }
}

fn sup_norm<F: Real>(y: &[F]) -> f64 {
    y.iter().map(|v| v.abs().to_f64().unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
}

/// Bounds on `sum_j |T^j|` and `sum_j |T^j|^2` for a contraction `T`, via the
/// smallest block power with norm below one.
fn series_bounds(t: &RatMatrix) -> (f64, f64) {
    let mut power = t.clone();
    let mut lin = 0.0;
    let mut quad = 0.0;
    for _ in 0..64 {
        let norm = rational_to_f64(&power.inf_norm());
        if norm < 1.0 {
            // Round the ratio up so the geometric factor stays an upper bound.
            let q = norm * (1.0 + 1e-12);
            return ((lin + norm) / (1.0 - q), (quad + norm * norm) / (1.0 - q * q));
        }
        lin += norm;
        quad += norm * norm;
        power = power.matmul(t);
    }
    panic!("inverse of an expanding matrix has no contracting power below 64");
}

/// `W_B(sigma_d y)` for every digit `d` of one level, sharing the phases of `S^{-1} y`.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    shifts: Vec<Vec<f64>>,
    /// `e^{2 pi i b.S^{-1}d}` per digit `d` (rows) and `b` (columns), from exact fractional parts.
    shift_phases: Vec<Vec<Complex<f64>>>,
    b: Vec<Vec<f64>>,
    scale: f64,
}

impl TransitionKernel {
    pub fn new(transform: &MeasureTransform<f64>, digits: &[IntVec]) -> Self {
        let exact: Vec<RatVec> = digits
            .iter()
            .map(|d| transform.s_inv_exact.mul_vec(&d.iter().map(|&v| int(v)).collect::<Vec<_>>()))
            .collect();
        let shifts = exact.iter().map(|v| v.iter().map(rational_to_f64).collect()).collect();
        let shift_phases = exact
            .iter()
            .map(|v| {
                transform
                    .digits
                    .iter()
                    .map(|b| {
                        let dot = b.iter().zip(v).fold(Rational::zero(), |acc, (&bi, q)| acc + int(bi) * q);
                        turn(rational_to_f64(&(&dot - dot.floor())))
                    })
                    .collect()
            })
            .collect();
        let n = transform.digits.len() as f64;
        TransitionKernel {
            shifts,
            shift_phases,
            b: transform
                .digits
                .iter()
                .map(|b| b.iter().map(|&v| v as f64).collect())
                .collect(),
            scale: 1.0 / (n * n),
        }
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// Reusable buffers for [`TransitionKernel::step_with`].
    pub fn scratch(&self) -> KernelScratch {
        KernelScratch {
            z: vec![0.0; self.shifts.first().map_or(0, Vec::len)],
            u: vec![Complex::new(0.0, 0.0); self.b.len()],
        }
    }

    /// Writes `sigma_d y` into `states[i]` and `W_B(sigma_d y)` into `weights[i]`.
    pub fn step(
        &self,
        transform: &MeasureTransform<f64>,
        y: &[f64],
        states: &mut [Vec<f64>],
        weights: &mut [f64],
    ) {
        self.step_with(transform, y, &mut self.scratch(), states, weights);
    }

    /// [`TransitionKernel::step`] without allocating.
    pub fn step_with(
        &self,
        transform: &MeasureTransform<f64>,
        y: &[f64],
        scratch: &mut KernelScratch,
        states: &mut [Vec<f64>],
        weights: &mut [f64],
    ) {
        let KernelScratch { z, u } = scratch;
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = transform.s_inv.row(i).iter().zip(y).map(|(a, b)| a * b).sum();
        }
        for (ub, b) in u.iter_mut().zip(&self.b) {
            *ub = turn(b.iter().zip(z.iter()).map(|(bi, zi)| bi * zi).sum::<f64>());
        }
        for (i, shift) in self.shifts.iter().enumerate() {
            for (s, (zj, cj)) in states[i].iter_mut().zip(z.iter().zip(shift)) {
                *s = zj + cj;
            }
            let m: Complex<f64> = u.iter().zip(&self.shift_phases[i]).map(|(a, c)| a * c).sum();
            weights[i] = m.norm_sqr() * self.scale;
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelScratch {
    z: Vec<f64>,
    u: Vec<Complex<f64>>,
}

/// Where the elements of a [`SpectrumApprox`] came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Explicit,
    Digits,
    Cycle { word: Vec<usize> },
    Subspace { r: usize, y0: RatVec },
}

/// Size bookkeeping for one generation level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    /// Candidates produced before deduplication.
    pub produced: u64,
    pub unique: u64,
    pub collisions: u64,
}

/// Generator `Lambda_n = D + S Lambda_{n-1}` over a fixed inner tree.
///
/// `Lambda_0` is the set of `e_1 + S e_2 + ... + S^{m-1} e_m + S^m s` with `e_i`
/// ranging over `inner[i-1]` and `s` over `seed`; each outer level adds one
/// more copy of `outer` in front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitTree {
    pub s: IntMatrix,
    pub outer: Vec<IntVec>,
    pub inner: Vec<Vec<IntVec>>,
    pub seed: Vec<RatVec>,
}

impl DigitTree {
    pub fn new(s: IntMatrix, outer: Vec<IntVec>, seed: Vec<RatVec>) -> Self {
        DigitTree {
            s,
            outer,
            inner: Vec::new(),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    /// Digit levels of the depth-`n` tree, outermost first.
    pub fn levels(&self, n: u32) -> Vec<&[IntVec]> {
        let mut levels: Vec<&[IntVec]> = (0..n).map(|_| self.outer.as_slice()).collect();
        levels.extend(self.inner.iter().map(Vec::as_slice));
        levels
    }

    pub fn leaf_count(&self, n: u32) -> u128 {
        self.levels(n)
            .iter()
            .fold(self.seed.len() as u128, |acc, l| acc.saturating_mul(l.len() as u128))
    }

    /// Embeds a tree for `S_1` on the first `r` coordinates into dimension `d`,
    /// appending `tail` to every seed point; the outer digits become inner levels.
    pub fn embed(&self, s: &IntMatrix, depth: u32, tail: &[Rational]) -> DigitTree {
        let pad = |v: &IntVec| {
            let mut w = v.clone();
            w.extend(std::iter::repeat_n(0, tail.len()));
            w
        };
        let inner = self
            .levels(depth)
            .into_iter()
            .map(|level| level.iter().map(pad).collect())
            .collect();
        let seed = self
            .seed
            .iter()
            .map(|p| {
                let mut w = p.clone();
                w.extend_from_slice(tail);
                w
            })
            .collect();
        DigitTree {
            s: s.clone(),
            outer: Vec::new(),
            inner,
            seed,
        }
    }

    /// The depth-`n` truncation with generation depths and collision counts.
    pub fn generate(&self, n: u32, provenance: Provenance, budget: u64) -> Result<SpectrumApprox> {
        let d = self.dim();
        if self.leaf_count(n) > budget as u128 {
            return Err(Error::BudgetExceeded {
                requested: self.leaf_count(n),
                budget: budget as u128,
            });
        }
        let denominator = self
            .seed
            .iter()
            .flatten()
            .fold(num_bigint::BigInt::from(1), |acc, q| acc.lcm(q.denom()));
        let q = denominator
            .to_i64()
            .ok_or_else(|| Error::InvalidParameter("seed denominators too large".into()))?;
        let scaled = |v: &IntVec| -> IntVec { v.iter().map(|&x| x * q).collect() };
        let step = |level: &[IntVec], prev: &[IntVec]| -> Result<(Vec<IntVec>, LevelStats)> {
            let mut seen = HashSet::with_capacity(level.len() * prev.len());
            let mut out = Vec::with_capacity(level.len() * prev.len());
            for digit in level {
                let qd = scaled(digit);
                for v in prev {
                    let w = affine_step(&self.s, v, &qd)?;
                    if seen.insert(w.clone()) {
                        out.push(w);
                    }
                }
            }
            let produced = (level.len() * prev.len()) as u64;
            let unique = out.len() as u64;
            Ok((out, LevelStats { produced, unique, collisions: produced - unique }))
        };

        let mut base: Vec<IntVec> = Vec::new();
        let mut seen = HashSet::new();
        for p in &self.seed {
            let v: IntVec = p
                .iter()
                .map(|x| (x * int(q)).to_integer().to_i64().expect("numerator fits"))
                .collect();
            if seen.insert(v.clone()) {
                base.push(v);
            }
        }
        let mut inner_collisions = (self.seed.len() - base.len()) as u64;
        for level in self.inner.iter().rev() {
            let (next, stats) = step(level, &base)?;
            inner_collisions += stats.collisions;
            base = next;
        }
        let mut levels = vec![LevelStats {
            produced: base.len() as u64 + inner_collisions,
            unique: base.len() as u64,
            collisions: inner_collisions,
        }];
        let mut sets: Vec<HashSet<IntVec>> = vec![base.iter().cloned().collect()];
        let mut current = base;
        for _ in 0..n {
            let (next, stats) = step(&self.outer, &current)?;
            levels.push(stats);
            sets.push(next.iter().cloned().collect());
            current = next;
        }
        let nested = sets.windows(2).all(|w| w[0].is_subset(&w[1]));
        let generation: Vec<u32> = current
            .iter()
            .map(|v| sets.iter().position(|s| s.contains(v)).expect("element of the last level") as u32)
            .collect();
        let words = self.leaf_count(n);
        Ok(SpectrumApprox {
            dim: d,
            denominator: q,
            numerators: current,
            generation,
            depth: n,
            provenance,
            levels,
            words,
            nested,
            tree: Some(self.clone()),
        })
    }
}

/// `q d + S v` with overflow checks.
fn affine_step(s: &IntMatrix, v: &[i64], qd: &[i64]) -> Result<IntVec> {
    let d = v.len();
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let mut acc = qd[i];
        for (j, &vj) in v.iter().enumerate() {
            acc = s[(i, j)]
                .checked_mul(vj)
                .and_then(|p| acc.checked_add(p))
                .ok_or_else(|| Error::InvalidParameter("spectrum element overflows i64".into()))?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// A finite truncation of a candidate spectrum: distinct points `v / q` with
/// integer numerators `v` over a shared denominator `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumApprox {
    dim: usize,
    denominator: i64,
    numerators: Vec<IntVec>,
    generation: Vec<u32>,
    depth: u32,
    provenance: Provenance,
    levels: Vec<LevelStats>,
    words: u128,
    nested: bool,
    tree: Option<DigitTree>,
}

impl SpectrumApprox {
    /// Deduplicated explicit list; every element gets generation 0.
    pub fn explicit(dim: usize, elements: &[RatVec]) -> Result<Self> {
        let tree = DigitTree::new(Matrix::identity(dim), Vec::new(), elements.to_vec());
        let mut s = tree.generate(0, Provenance::Explicit, u64::MAX)?;
        s.tree = None;
        Ok(s)
    }

    pub fn from_integers(dim: usize, elements: &[IntVec]) -> Result<Self> {
        let rat: Vec<RatVec> = elements.iter().map(|v| v.iter().map(|&x| int(x)).collect()).collect();
        Self::explicit(dim, &rat)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.numerators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numerators.is_empty()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn denominator(&self) -> i64 {
        self.denominator
    }

    pub fn numerators(&self) -> &[IntVec] {
        &self.numerators
    }

    pub fn generation(&self) -> &[u32] {
        &self.generation
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn levels(&self) -> &[LevelStats] {
        &self.levels
    }

    pub fn tree(&self) -> Option<&DigitTree> {
        self.tree.as_ref()
    }

    /// Number of digit words generated, counting repetitions.
    pub fn words(&self) -> u128 {
        self.words
    }

    /// Words that landed on an element already produced.
    pub fn repetitions(&self) -> u128 {
        self.words - self.len() as u128
    }

    /// Whether every level was contained in the next.
    pub fn is_nested(&self) -> bool {
        self.nested
    }

    pub fn element(&self, i: usize) -> RatVec {
        self.numerators[i]
            .iter()
            .map(|&v| Rational::new(v.into(), self.denominator.into()))
            .collect()
    }

    pub fn elements(&self) -> Vec<RatVec> {
        (0..self.len()).map(|i| self.element(i)).collect()
    }

    pub fn element_f64(&self, i: usize) -> Vec<f64> {
        let q = self.denominator as f64;
        self.numerators[i].iter().map(|&v| v as f64 / q).collect()
    }

    pub fn elements_f64(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.element_f64(i)).collect()
    }

    pub fn is_integral(&self) -> bool {
        self.denominator == 1
    }

    pub fn contains(&self, v: &[Rational]) -> bool {
        let q = int(self.denominator);
        let scaled: Option<IntVec> = v
            .iter()
            .map(|x| {
                let y = x * &q;
                if is_integer(&y) {
                    y.to_integer().to_i64()
                } else {
                    None
                }
            })
            .collect();
        scaled.is_some_and(|s| self.numerators.contains(&s))
    }

    /// Exact set inclusion.
    pub fn is_subset_of(&self, other: &SpectrumApprox) -> bool {
        let theirs: HashSet<RatVec> = other.elements().into_iter().collect();
        self.elements().iter().all(|e| theirs.contains(e))
    }

    /// Elements generated at depth `<= k`.
    pub fn up_to_depth(&self, k: u32) -> SpectrumApprox {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.generation[i] <= k).collect();
        SpectrumApprox {
            dim: self.dim,
            denominator: self.denominator,
            numerators: keep.iter().map(|&i| self.numerators[i].clone()).collect(),
            generation: keep.iter().map(|&i| self.generation[i]).collect(),
            depth: k.min(self.depth),
            provenance: self.provenance.clone(),
            levels: self.levels[..=(k.min(self.depth) as usize)].to_vec(),
            words: self.words,
            nested: self.nested,
            tree: None,
        }
    }

    /// True when every element pairs integrally with every digit of `b`,
    /// so that `W_B` is invariant under translation by it.
    pub fn is_period_lattice_subset(&self, b: &[IntVec]) -> bool {
        let q = self.denominator as i128;
        self.numerators.iter().all(|v| {
            b.iter().all(|bv| {
                let dot: i128 = v.iter().zip(bv).map(|(&x, &y)| x as i128 * y as i128).sum();
                dot % q == 0
            })
        })
    }
}

/// Maximum `|mu_hat(lambda - lambda')|` over close pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub radius: f64,
    pub pairs: usize,
    pub distinct_differences: usize,
    pub max_defect: f64,
    pub worst_pair: Option<(RatVec, RatVec)>,
    /// Largest certified product-tail bound among the evaluations.
    pub tail_bound: f64,
}

/// `max |mu_hat(lambda - lambda')|` over distinct pairs with `|lambda - lambda'|_inf <= radius`.
pub fn orthogonality_defect(
    transform: &MeasureTransform<f64>,
    spectrum: &SpectrumApprox,
    radius: f64,
    cap: usize,
) -> Result<OrthogonalityReport> {
    let q = spectrum.denominator() as f64;
    let nums = spectrum.numerators();
    let mut order: Vec<usize> = (0..nums.len()).collect();
    order.sort_by_key(|&i| nums[i][0]);
    let reach = (radius * q).floor() as i64;

    let mut diffs: HashMap<IntVec, (usize, usize)> = HashMap::new();
    let mut pairs = 0usize;
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[a + 1..] {
            if nums[j][0] - nums[i][0] > reach {
                break;
            }
            let diff: IntVec = nums[i].iter().zip(&nums[j]).map(|(x, y)| x - y).collect();
            if diff.iter().any(|v| v.abs() > reach) {
                continue;
            }
            pairs += 1;
            if pairs > cap {
                return Err(Error::BudgetExceeded {
                    requested: pairs as u128,
                    budget: cap as u128,
                });
            }
            // mu_hat(-x) is the conjugate of mu_hat(x): keep one sign.
            let neg: IntVec = diff.iter().map(|v| -v).collect();
            let key = if diff > neg { diff } else { neg };
            diffs.entry(key).or_insert((i, j));
        }
    }
    let results: Vec<(f64, f64, (usize, usize))> = diffs
        .par_iter()
        .map(|(key, &pair)| {
            let x: Vec<f64> = key.iter().map(|&v| v as f64 / q).collect();
            let m = transform.mu_hat(&x, ProductDepth::Auto { tol: 1e-15 });
            (m.value.norm(), m.tail_bound, pair)
        })
        .collect();
    let mut max_defect = 0.0;
    let mut worst = None;
    let mut tail_bound: f64 = 0.0;
    for (v, t, pair) in results {
        tail_bound = tail_bound.max(t);
        if v > max_defect || worst.is_none() {
            max_defect = v;
            worst = Some(pair);
        }
    }
    Ok(OrthogonalityReport {
        radius,
        pairs,
        distinct_differences: diffs.len(),
        max_defect,
        worst_pair: worst.map(|(i, j)| (spectrum.element(i), spectrum.element(j))),
        tail_bound,
    })
}

/// How the Parseval sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    /// Sum `|mu_hat(x + lambda)|^2` element by element.
    Direct,
    /// Transfer recursion over the digit tree.
    Tree,
    /// Tree when valid, otherwise direct.
    Auto,
    /// Both, with the largest disagreement reported.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub tol: f64,
    pub product: ProductDepth,
    pub route: Route,
    pub prune: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            tol: CERTIFY_TOL,
            product: ProductDepth::default(),
            route: Route::Auto,
            prune: PRUNE_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCertificate {
    pub x: Vec<f64>,
    /// `s_k(x)` for `k = 0..=n`.
    pub partial_sums: Vec<f64>,
    pub deviation: f64,
    pub monotone: bool,
    /// Upper bound on the overestimate caused by truncating the products.
    pub product_bound: f64,
    /// Weight of branches skipped by the tree route.
    pub pruned_mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub spectrum_depth: u32,
    pub spectrum_size: usize,
    pub words: u128,
    pub repetitions: u128,
    pub nested: bool,
    pub route: Route,
    pub max_product_depth: u32,
    pub points: Vec<PointCertificate>,
    pub max_deviation: f64,
    /// Largest `1 - s_n(x)`, the mass missing from the truncated spectrum.
    pub spectrum_deficit: f64,
    pub product_bound: f64,
    pub pruned_mass: f64,
    pub monotone: bool,
    /// Largest `|s_n^tree - s_n^direct|` when both routes ran.
    pub route_disagreement: Option<f64>,
    pub tol: f64,
    pub verdict: Verdict,
}

/// Whether the transfer recursion applies: distinct words give distinct
/// elements and the seed consists of periods of `W_B`.
pub fn tree_route_valid(transform: &MeasureTransform<f64>, spectrum: &SpectrumApprox) -> bool {
    let Some(tree) = spectrum.tree() else {
        return false;
    };
    if tree.leaf_count(spectrum.depth()) != spectrum.len() as u128 {
        return false;
    }
    tree.seed.iter().all(|s| {
        transform.digits().iter().all(|b| {
            let dot = s.iter().zip(b).fold(Rational::zero(), |acc, (x, &y)| acc + x * int(y));
            is_integer(&dot)
        })
    })
}

/// Partial Parseval sums `s_k(x) = sum_{lambda in Lambda_k} |mu_hat(x + lambda)|^2`.
pub fn parseval_certify(
    transform: &MeasureTransform<f64>,
    spectrum: &SpectrumApprox,
    grid: &[Vec<f64>],
    cfg: &CertifyConfig,
) -> Result<CertificationReport> {
    let tree_ok = tree_route_valid(transform, spectrum);
    let route = match cfg.route {
        Route::Auto if tree_ok => Route::Tree,
        Route::Auto => Route::Direct,
        r @ (Route::Tree | Route::Both) if !tree_ok => {
            return Err(Error::InvalidParameter(format!(
                "{r:?} route needs a collision-free digit tree whose seed consists of W_B periods"
            )))
        }
        r => r,
    };
    let n = spectrum.depth() as usize;
    let evaluate = |x: &Vec<f64>, tree: bool| -> (PointCertificate, u32) {
        let (bins, product_rel, pruned, depth) = if tree {
            tree_bins(transform, spectrum, x, cfg)
        } else {
            direct_bins(transform, spectrum, x, cfg)
        };
        let mut partial_sums = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        for b in bins {
            acc += b;
            partial_sums.push(acc);
        }
        let monotone = partial_sums.windows(2).all(|w| w[1] >= w[0]);
        let last = *partial_sums.last().expect("depth >= 0");
        (
            PointCertificate {
                x: x.clone(),
                partial_sums,
                deviation: (last - 1.0).abs(),
                monotone,
                product_bound: last * product_rel,
                pruned_mass: pruned,
            },
            depth,
        )
    };
    let primary: Vec<(PointCertificate, u32)> =
        grid.par_iter().map(|x| evaluate(x, route != Route::Direct)).collect();
    let route_disagreement = if route == Route::Both {
        let direct: Vec<(PointCertificate, u32)> = grid.par_iter().map(|x| evaluate(x, false)).collect();
        Some(
            primary
                .iter()
                .zip(&direct)
                .map(|((a, _), (b, _))| {
                    (a.partial_sums.last().unwrap() - b.partial_sums.last().unwrap()).abs()
                })
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    let max_product_depth = primary.iter().map(|(_, d)| *d).max().unwrap_or(0);
    let points: Vec<PointCertificate> = primary.into_iter().map(|(p, _)| p).collect();
    let max_deviation = points.iter().map(|p| p.deviation).fold(0.0, f64::max);
    let spectrum_deficit = points
        .iter()
        .map(|p| 1.0 - p.partial_sums.last().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let product_bound = points.iter().map(|p| p.product_bound).fold(0.0, f64::max);
    let pruned_mass = points.iter().map(|p| p.pruned_mass).fold(0.0, f64::max);
    let monotone = points.iter().all(|p| p.monotone);
    Ok(CertificationReport {
        spectrum_depth: spectrum.depth(),
        spectrum_size: spectrum.len(),
        words: spectrum.words(),
        repetitions: spectrum.repetitions(),
        nested: spectrum.is_nested(),
        route,
        max_product_depth,
        points,
        max_deviation,
        spectrum_deficit,
        product_bound,
        pruned_mass,
        monotone,
        route_disagreement,
        tol: cfg.tol,
        verdict: if max_deviation < cfg.tol { Verdict::Pass } else { Verdict::Fail },
    })
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

type Bins = (Vec<f64>, f64, f64, u32);

fn direct_bins(transform: &MeasureTransform<f64>, spectrum: &SpectrumApprox, x: &[f64], cfg: &CertifyConfig) -> Bins {
    let mut bins = vec![CompensatedSum::default(); spectrum.depth() as usize + 1];
    let mut rel: f64 = 0.0;
    let mut depth = 0;
    let mut point = vec![0.0; x.len()];
    for i in 0..spectrum.len() {
        let lambda = spectrum.element_f64(i);
        for ((p, xi), li) in point.iter_mut().zip(x).zip(&lambda) {
            *p = xi + li;
        }
        let m = transform.mu_hat_sq(&point, cfg.product);
        rel = rel.max(m.rel_tail);
        depth = depth.max(m.depth);
        bins[spectrum.generation()[i] as usize].add(m.value);
    }
    (bins.iter().map(CompensatedSum::value).collect(), rel, 0.0, depth)
}

struct TreeWalk<'a> {
    transform: &'a MeasureTransform<f64>,
    kernels: Vec<&'a TransitionKernel>,
    strides: Vec<usize>,
    seed: Vec<Vec<f64>>,
    generation: &'a [u32],
    product: ProductDepth,
    prune: f64,
    bins: Vec<CompensatedSum>,
    pruned: f64,
    rel: f64,
    depth: u32,
    scratch: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
    kernel_scratch: KernelScratch,
    point: Vec<f64>,
}

impl TreeWalk<'_> {
    fn visit(&mut self, level: usize, z: &[f64], weight: f64, leaf: usize) {
        if level == self.kernels.len() {
            for si in 0..self.seed.len() {
                for ((p, zi), si) in self.point.iter_mut().zip(z).zip(&self.seed[si]) {
                    *p = zi + si;
                }
                let m = self.transform.mu_hat_sq(&self.point, self.product);
                self.rel = self.rel.max(m.rel_tail);
                self.depth = self.depth.max(m.depth);
                self.bins[self.generation[leaf + si] as usize].add(weight * m.value);
            }
            return;
        }
        let (mut states, mut weights) = std::mem::take(&mut self.scratch[level]);
        self.kernels[level].step_with(self.transform, z, &mut self.kernel_scratch, &mut states, &mut weights);
        for c in 0..weights.len() {
            let w = weight * weights[c];
            if w < self.prune {
                self.pruned += w;
                continue;
            }
            self.visit(level + 1, &states[c], w, leaf + c * self.strides[level]);
        }
        self.scratch[level] = (states, weights);
    }
}

fn tree_bins(transform: &MeasureTransform<f64>, spectrum: &SpectrumApprox, x: &[f64], cfg: &CertifyConfig) -> Bins {
    let tree = spectrum.tree().expect("tree route checked");
    let levels = tree.levels(spectrum.depth());
    let kernel_outer = TransitionKernel::new(transform, &tree.outer);
    let kernel_inner: Vec<TransitionKernel> = tree.inner.iter().map(|l| TransitionKernel::new(transform, l)).collect();
    let mut kernels: Vec<&TransitionKernel> = (0..spectrum.depth()).map(|_| &kernel_outer).collect();
    kernels.extend(kernel_inner.iter());
    let mut strides = vec![0usize; levels.len()];
    let mut below = tree.seed.len();
    for i in (0..levels.len()).rev() {
        strides[i] = below;
        below *= levels[i].len();
    }
    let d = x.len();
    let scratch = levels
        .iter()
        .map(|l| (vec![vec![0.0; d]; l.len()], vec![0.0; l.len()]))
        .collect();
    let mut walk = TreeWalk {
        transform,
        kernels,
        strides,
        seed: tree.seed.iter().map(|s| s.iter().map(rational_to_f64).collect()).collect(),
        generation: spectrum.generation(),
        product: cfg.product,
        prune: cfg.prune,
        bins: vec![CompensatedSum::default(); spectrum.depth() as usize + 1],
        pruned: 0.0,
        rel: 0.0,
        depth: 0,
        scratch,
        kernel_scratch: kernel_outer.scratch(),
        point: vec![0.0; d],
    };
    walk.visit(0, x, 1.0, 0);
    (
        walk.bins.iter().map(CompensatedSum::value).collect(),
        walk.rel,
        walk.pruned,
        walk.depth,
    )
}

/// `count` uniform points in the box, then the origin.
pub fn random_grid(bbox: &BoundingBox, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid: Vec<Vec<f64>> = (0..count).map(|_| bbox.sample(&mut rng)).collect();
    grid.push(vec![0.0; bbox.dim()]);
    grid
}

/// Uniform points in `[lo, hi]^d`.
pub fn random_points(dim: usize, count: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random_range(lo..=hi)).collect())
        .collect()
}

/// The `k^d` points of a regular grid on `[lo, hi]^d`, endpoints included.
pub fn regular_grid(dim: usize, k: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let ticks: Vec<f64> = (0..k)
        .map(|i| if k == 1 { lo } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 })
        .collect();
    let mut grid = vec![vec![]];
    for _ in 0..dim {
        grid = grid
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                ticks.iter().map(move |&t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    grid
}
