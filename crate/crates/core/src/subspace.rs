//! Invariant translates `R^r x {y0}` of a coordinate subspace: block
//! decomposition, fiber measures, condition checks and the spectra they
//! produce.

use std::collections::{HashSet, VecDeque};

use num_complex::Complex64;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{
    parseval_certify, random_points, wb_eval, CertifyConfig, DigitTree, MeasureTransform, Provenance, SpectrumApprox,
    Verdict,
};
use crate::hadamard::{is_hadamard_triple, root_of_unity, Triple};
use crate::lattice::{dual_lattice, DigitRole, DigitSet, ExpandingMatrix};
use crate::matrix::Matrix;
use crate::scalar::{frac, int, is_integer, rat_vec, rat_vec_to_f64};
use crate::{IntMatrix, IntVec, RatMatrix, RatVec, Rational};

/// `|c_i(y)|` below this counts as zero.
pub const VANISH_TOL: f64 = 1e-12;

/// Sampled `W_B` below this counts as zero.
const VANISH_SAMPLE_TOL: f64 = 1e-20;

/// Default cap on generated subspace spectra.
pub const SPECTRUM_BUDGET: u64 = 1 << 24;

/// `S = [[S1, C], [0, S2]]` with `S1` of size `r`, and the matching split of `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub r: usize,
    pub d: usize,
    pub s1: IntMatrix,
    pub s2: IntMatrix,
    /// `r x (d - r)`.
    pub c: IntMatrix,
    pub a1: IntMatrix,
    pub a2: IntMatrix,
    pub c_star: IntMatrix,
    /// Distinct first-block projections `r_i` of `B`, in order of appearance.
    pub projections: Vec<IntVec>,
    /// `eta_{i,j}`: second blocks of the digits projecting to `r_i`.
    pub fibers: Vec<Vec<IntVec>>,
}

/// Splits the triple along `R^r x {0}`, which must be `S`-invariant.
pub fn decompose(t: &Triple, r: usize) -> Result<BlockDecomposition> {
    let d = t.dim();
    if r == 0 || r >= d {
        return Err(Error::InvalidParameter(format!("subspace dimension must be in 1..{d}, got {r}")));
    }
    let s = t.s().matrix();
    if !s.block(r, d, 0, r).is_zero() {
        return Err(Error::NotInvariant { r });
    }
    let s1 = s.block(0, r, 0, r);
    let s2 = s.block(r, d, r, d);
    let c = s.block(0, r, r, d);
    let mut projections: Vec<IntVec> = Vec::new();
    let mut fibers: Vec<Vec<IntVec>> = Vec::new();
    for b in t.b().vectors() {
        let head = b[..r].to_vec();
        let tail = b[r..].to_vec();
        match projections.iter().position(|p| *p == head) {
            Some(i) => fibers[i].push(tail),
            None => {
                projections.push(head);
                fibers.push(vec![tail]);
            }
        }
    }
    Ok(BlockDecomposition {
        r,
        d,
        a1: s1.transpose(),
        a2: s2.transpose(),
        c_star: c.transpose(),
        s1,
        s2,
        c,
        projections,
        fibers,
    })
}

impl BlockDecomposition {
    pub fn reassemble(&self) -> IntMatrix {
        let mut m = Matrix::zeros(self.d, self.d);
        for i in 0..self.r {
            for j in 0..self.r {
                m[(i, j)] = self.s1[(i, j)];
            }
            for j in self.r..self.d {
                m[(i, j)] = self.c[(i, j - self.r)];
            }
        }
        for i in self.r..self.d {
            for j in self.r..self.d {
                m[(i, j)] = self.s2[(i - self.r, j - self.r)];
            }
        }
        m
    }

    pub fn n1(&self) -> usize {
        self.projections.len()
    }

    pub fn fiber_counts(&self) -> Vec<usize> {
        self.fibers.iter().map(Vec::len).collect()
    }

    pub fn equal_fibers(&self) -> bool {
        self.fibers.iter().all(|f| f.len() == self.fibers[0].len())
    }

    /// `A_1`, the scaling of the projected system.
    pub fn first_scaling(&self) -> Result<ExpandingMatrix> {
        ExpandingMatrix::new(self.a1.clone())
    }

    pub fn projected_digits(&self) -> Result<DigitSet> {
        DigitSet::new(DigitRole::B, self.projections.clone())
    }

    pub fn s2_inverse(&self) -> RatMatrix {
        self.s2.to_rational().inverse().expect("S2 is a diagonal block of an expanding matrix")
    }

    /// `S_2^{-1}(y + l_2)`, the second component of `sigma_l(R^r x {y})`.
    pub fn second_image(&self, y: &[Rational], l2: &[i64]) -> RatVec {
        let shifted: RatVec = y.iter().zip(l2).map(|(a, &b)| a + int(b)).collect();
        self.s2_inverse().mul_vec(&shifted)
    }

    /// `c_i(y) = sum_j e^{2 pi i eta_{i,j} . y}` at a rational point.
    pub fn fiber_sums(&self, y: &[Rational]) -> Vec<Complex64> {
        self.fibers
            .iter()
            .map(|f| {
                f.iter()
                    .map(|eta| {
                        let phase = eta.iter().zip(y).fold(Rational::zero(), |acc, (&e, v)| acc + int(e) * v);
                        root_of_unity::<f64>(&frac(&phase))
                    })
                    .sum()
            })
            .collect()
    }

    /// `W_B` vanishes on all of `R^r x {y}` exactly when every `c_i(y)` does.
    pub fn vanishes_on(&self, y: &[Rational]) -> bool {
        self.fiber_sums(y).iter().all(|c| c.norm() < VANISH_TOL)
    }

    /// `m(y, i) = N_2(i)^{-1} sum_j e^{2 pi i eta_{i,j} . y}`.
    pub fn m(&self, y: &[f64], i: usize) -> Complex64 {
        let f = &self.fibers[i];
        let sum: Complex64 = f
            .iter()
            .map(|eta| {
                let t: f64 = eta.iter().zip(y).map(|(&e, v)| e as f64 * v).sum();
                Complex64::from_polar(1.0, std::f64::consts::TAU * (t - t.floor()))
            })
            .sum();
        sum / f.len() as f64
    }

    /// `N_1^{-1} sum_i |m(y, i)|^2`.
    pub fn w_tilde(&self, y: &[f64]) -> f64 {
        (0..self.n1()).map(|i| self.m(y, i).norm_sqr()).sum::<f64>() / self.n1() as f64
    }

    /// `D_k = -sum_{l<k} A_2^{-(l+1)} C^* A_1^{-(k-l)}`, the lower-left block of `R^{-k}`.
    pub fn d_k(&self, k: u32) -> RatMatrix {
        let a1_inv = self.a1.to_rational().inverse().expect("nonsingular");
        let a2_inv = self.a2.to_rational().inverse().expect("nonsingular");
        let cs = self.c_star.to_rational();
        let mut acc = Matrix::<Rational>::zeros(self.d - self.r, self.r);
        for l in 0..k {
            let term = a2_inv.pow(l + 1).matmul(&cs).matmul(&a1_inv.pow(k - l));
            for i in 0..acc.rows() {
                for j in 0..acc.cols() {
                    acc[(i, j)] = &acc[(i, j)] - &term[(i, j)];
                }
            }
        }
        acc
    }

    pub fn fiber_series(&self, depth: u32) -> FiberSeries {
        FiberSeries {
            d: (1..=depth).map(|k| self.d_k(k)).collect(),
        }
    }

    /// First components of the digits of `L` whose second component is `l2`.
    pub fn l1_over(&self, l: &DigitSet, l2: &[i64]) -> Vec<IntVec> {
        l.vectors()
            .iter()
            .filter(|v| v[self.r..] == *l2)
            .map(|v| v[..self.r].to_vec())
            .collect()
    }

    /// The digit `l_2 = (S_2 - I) y0` fixing the translate, if it occurs in `L`.
    pub fn fixed_digit(&self, l: &DigitSet, y0: &[Rational]) -> Option<IntVec> {
        let s2y = self.s2.to_rational().mul_vec(y0);
        let want: Option<IntVec> = s2y
            .iter()
            .zip(y0)
            .map(|(a, b)| {
                let v = a - b;
                if is_integer(&v) {
                    num_traits::ToPrimitive::to_i64(&v.to_integer())
                } else {
                    None
                }
            })
            .collect();
        let want = want?;
        l.vectors().iter().any(|v| v[self.r..] == *want).then_some(want)
    }
}

/// `D_1, ..., D_K` for evaluating `g(omega) = sum_k D_k r_{i_k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberSeries {
    pub d: Vec<RatMatrix>,
}

impl FiberSeries {
    pub fn g(&self, decomp: &BlockDecomposition, word: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; decomp.d - decomp.r];
        for (dk, &i) in self.d.iter().zip(word) {
            let v = dk.mul_vec(&rat_vec(&decomp.projections[i]));
            for (o, x) in out.iter_mut().zip(&v) {
                *o += crate::scalar::rational_to_f64(x);
            }
        }
        out
    }
}

/// `prod_{k=1}^K m(S_2^{-k} y, i_k)`.
pub fn fiber_mu_hat(decomp: &BlockDecomposition, word: &[usize], y: &[f64], depth: usize) -> Result<Complex64> {
    if word.len() < depth {
        return Err(Error::InvalidParameter(format!(
            "word of length {} is shorter than depth {depth}",
            word.len()
        )));
    }
    if let Some(&i) = word.iter().find(|&&i| i >= decomp.n1()) {
        return Err(Error::IndexOutOfRange { index: i, len: decomp.n1() });
    }
    let s2_inv = decomp.s2_inverse().to_f64();
    let mut z = y.to_vec();
    let mut prod = Complex64::new(1.0, 0.0);
    for &i in &word[..depth] {
        z = s2_inv.mul_vec(&z);
        prod *= decomp.m(&z, i);
    }
    Ok(prod)
}

/// `F(y) = prod_{k=1}^K W~(S_2^{-k} y)`.
pub fn f_product(decomp: &BlockDecomposition, y: &[f64], depth: usize) -> Result<f64> {
    if !decomp.equal_fibers() {
        return Err(Error::UnequalFibers {
            counts: decomp.fiber_counts(),
        });
    }
    let s2_inv = decomp.s2_inverse().to_f64();
    let mut z = y.to_vec();
    let mut prod = 1.0;
    for _ in 0..depth {
        z = s2_inv.mul_vec(&z);
        prod *= decomp.w_tilde(&z);
    }
    Ok(prod)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchKind {
    /// `sigma_l` maps the translate into itself.
    MapsInto,
    /// `W_B` vanishes identically on the image.
    Vanishes,
    /// Neither: the translate is not invariant.
    Escapes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub digit: IntVec,
    /// Second component of the image translate.
    pub image: RatVec,
    pub kind: BranchKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateCheck {
    pub r: usize,
    pub y0: RatVec,
    pub branches: Vec<Branch>,
    pub invariant: bool,
}

/// Whether `R^r x {y0}` is invariant. Vanishing is decided from the fiber
/// sums and confirmed by sampling `W_B` at `4 N_1` random points of the image.
pub fn check_invariant_translate(t: &Triple, r: usize, y0: &[Rational], seed: u64) -> Result<TranslateCheck> {
    let decomp = decompose(t, r)?;
    if y0.len() != t.dim() - r {
        return Err(Error::DimensionMismatch {
            what: "translate offset",
            expected: t.dim() - r,
            found: y0.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut branches = Vec::with_capacity(t.n());
    for l in t.l().vectors() {
        let image = decomp.second_image(y0, &l[r..]);
        let kind = if image.as_slice() == y0 {
            BranchKind::MapsInto
        } else {
            let exact = decomp.vanishes_on(&image);
            let tail = rat_vec_to_f64(&image);
            let sampled = (0..4 * decomp.n1()).all(|_| {
                let mut p: Vec<f64> = (0..r).map(|_| rng.random_range(-8.0..8.0)).collect();
                p.extend_from_slice(&tail);
                wb_eval(t.b(), &p) < VANISH_SAMPLE_TOL
            });
            match (exact, sampled) {
                (true, true) => BranchKind::Vanishes,
                (false, false) => BranchKind::Escapes,
                _ => {
                    return Err(Error::Inconclusive(format!(
                        "fiber sums and sampled W_B disagree on the translate at {tail:?}"
                    )))
                }
            }
        };
        branches.push(Branch {
            digit: l.clone(),
            image,
            kind,
        });
    }
    let invariant = branches.iter().all(|b| b.kind != BranchKind::Escapes);
    Ok(TranslateCheck {
        r,
        y0: y0.to_vec(),
        branches,
        invariant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateCandidates {
    /// Distinct second components of the points of `Gamma` in the box around `X_L`.
    pub lattice_tails: Vec<RatVec>,
    /// Those tails from which some digit leads to a translate where `W_B` vanishes.
    pub candidates: Vec<RatVec>,
}

/// Offsets `y` for which `R^r x {y}` can belong to a finite invariant union
/// of translates that is not the whole space.
pub fn candidate_translates(t: &Triple, r: usize, budget: usize) -> Result<TranslateCandidates> {
    let decomp = decompose(t, r)?;
    let gamma = dual_lattice(t.b())?;
    let bbox = t.l_ifs().bounding_box();
    let mut lattice_tails: Vec<RatVec> = Vec::new();
    let mut seen = HashSet::new();
    for p in gamma.points_in_box(&bbox, budget)? {
        let tail = p[r..].to_vec();
        if seen.insert(tail.clone()) {
            lattice_tails.push(tail);
        }
    }
    lattice_tails.sort();
    let candidates = lattice_tails
        .iter()
        .filter(|y| {
            t.l()
                .vectors()
                .iter()
                .any(|l| decomp.vanishes_on(&decomp.second_image(y, &l[r..])))
        })
        .cloned()
        .collect();
    Ok(TranslateCandidates {
        lattice_tails,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EscapeOutcome {
    /// The chain left the candidate offsets at this step.
    Escaped { step: usize },
    /// Every transition from the start stays inside a finite set of candidates.
    Periodic,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    /// Second component `l_2` of the digit used, absent for the start.
    pub l2: Option<IntVec>,
    pub y: RatVec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeTrace {
    pub chain: Vec<ChainStep>,
    pub outcome: EscapeOutcome,
}

impl EscapeTrace {
    pub fn escaped(&self) -> bool {
        matches!(self.outcome, EscapeOutcome::Escaped { .. })
    }
}

/// Follows forced transitions `y -> S_2^{-1}(y + l_2)` from `y0`.
///
/// At each step the first digit of `L` with `W_B` not vanishing on the image
/// and an image not yet visited is taken. When no such digit exists the
/// closure of all non-vanishing transitions decides the outcome.
pub fn trace_escape(t: &Triple, r: usize, y0: &[Rational], candidates: &[RatVec], max_steps: usize) -> Result<EscapeTrace> {
    let decomp = decompose(t, r)?;
    let allowed: HashSet<&RatVec> = candidates.iter().collect();
    let successors = |y: &RatVec| -> Vec<(IntVec, RatVec)> {
        t.l()
            .vectors()
            .iter()
            .filter_map(|l| {
                let img = decomp.second_image(y, &l[r..]);
                (!decomp.vanishes_on(&img)).then(|| (l[r..].to_vec(), img))
            })
            .collect()
    };
    let start = y0.to_vec();
    let mut chain = vec![ChainStep { l2: None, y: start.clone() }];
    let mut visited = HashSet::from([start.clone()]);
    let mut escape = (!allowed.contains(&start)).then_some(0);
    let mut current = start.clone();
    let mut stuck = false;
    for step in 1..=max_steps {
        let Some((l2, next)) = successors(&current).into_iter().find(|(_, y)| !visited.contains(y)) else {
            stuck = true;
            break;
        };
        if escape.is_none() && !allowed.contains(&next) {
            escape = Some(step);
        }
        visited.insert(next.clone());
        chain.push(ChainStep {
            l2: Some(l2),
            y: next.clone(),
        });
        current = next;
    }
    let outcome = match escape {
        Some(step) => EscapeOutcome::Escaped { step },
        None if stuck => {
            let mut seen = HashSet::from([start.clone()]);
            let mut queue = VecDeque::from([start]);
            let mut left = false;
            while let Some(y) = queue.pop_front() {
                for (_, img) in successors(&y) {
                    if !allowed.contains(&img) {
                        left = true;
                        break;
                    }
                    if seen.insert(img.clone()) {
                        queue.push_back(img);
                    }
                }
                if left {
                    break;
                }
            }
            if left {
                EscapeOutcome::Escaped { step: chain.len() }
            } else {
                EscapeOutcome::Periodic
            }
        }
        None => EscapeOutcome::Undecided,
    };
    Ok(EscapeTrace { chain, outcome })
}

/// Candidate offsets for `R^r x {.}` with the invariance check and escape
/// trace of each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateAnalysis {
    pub candidates: TranslateCandidates,
    pub checks: Vec<TranslateCheck>,
    pub traces: Vec<EscapeTrace>,
}

pub fn analyze_translates(t: &Triple, r: usize, budget: usize, max_steps: usize, seed: u64) -> Result<TranslateAnalysis> {
    let candidates = candidate_translates(t, r, budget)?;
    let checks = candidates
        .candidates
        .iter()
        .map(|y| check_invariant_translate(t, r, y, seed))
        .collect::<Result<Vec<_>>>()?;
    let traces = candidates
        .candidates
        .iter()
        .map(|y| trace_escape(t, r, y, &candidates.candidates, max_steps))
        .collect::<Result<Vec<_>>>()?;
    Ok(TranslateAnalysis {
        candidates,
        checks,
        traces,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Fail,
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub r: usize,
    pub y0: RatVec,
    pub fixed_digit: IntVec,
    /// `L_1(l_2)` for the fixed digit.
    pub l1: Vec<IntVec>,
    pub lambda1_depth: u32,
    pub conditions: Vec<Condition>,
    /// No condition failed; unverified sufficient conditions do not block.
    pub pass: bool,
}

impl ConditionReport {
    pub fn status(&self, name: &str) -> Option<Status> {
        self.conditions.iter().find(|c| c.name == name).map(|c| c.status)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.conditions
            .iter()
            .filter(|c| c.status == Status::Fail)
            .map(|c| c.name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionConfig {
    pub certify: CertifyConfig,
    pub grid_points: usize,
    /// Largest `n` in the `S`-period checks.
    pub period_depth: u32,
    pub period_samples: usize,
    pub period_tol: f64,
    pub unitary_tol: f64,
    pub seed: u64,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        ConditionConfig {
            certify: CertifyConfig::default(),
            grid_points: 20,
            period_depth: 8,
            period_samples: 100,
            period_tol: 1e-12,
            unitary_tol: 1e-12,
            seed: 0,
        }
    }
}

/// Number of spectrum elements whose period property is sampled.
const PERIOD_ELEMENTS: usize = 32;

fn condition(name: &str, ok: bool, detail: String) -> Condition {
    Condition {
        name: name.into(),
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

/// The conditions under which `Lambda_1 x {-y0}` seeds a spectrum for the
/// part of `mu` living near `R^r x {y0}`.
pub fn check_theorem_conditions(
    t: &Triple,
    r: usize,
    y0: &[Rational],
    lambda1: &DigitTree,
    depth: u32,
    cfg: &ConditionConfig,
) -> Result<ConditionReport> {
    let decomp = decompose(t, r)?;
    let fixed = decomp.fixed_digit(t.l(), y0).ok_or(Error::NoFixedDigit)?;
    let l1 = decomp.l1_over(t.l(), &fixed);
    let mut conditions = Vec::new();

    let inv = check_invariant_translate(t, r, y0, cfg.seed)?;
    let escapes: Vec<&IntVec> = inv
        .branches
        .iter()
        .filter(|b| b.kind == BranchKind::Escapes)
        .map(|b| &b.digit)
        .collect();
    conditions.push(condition(
        "invariant-translate",
        inv.invariant,
        if inv.invariant {
            "every digit maps into the translate or onto a zero set of W_B".into()
        } else {
            format!("digits {escapes:?} leave the translate with nonzero weight")
        },
    ));

    let counts = decomp.fiber_counts();
    conditions.push(condition("equal-fibers", decomp.equal_fibers(), format!("N_2(i) = {counts:?}")));

    let a1 = decomp.first_scaling()?;
    let b1 = decomp.projected_digits()?;
    let lam = lambda1.generate(depth, Provenance::Digits, SPECTRUM_BUDGET)?;
    let lam_next = lambda1.generate(depth + 1, Provenance::Digits, SPECTRUM_BUDGET)?;

    // Parseval for mu_1, which has uniform weights only when the fibers are equal.
    if decomp.equal_fibers() {
        let transform = MeasureTransform::<f64>::new(&a1, &b1);
        let mut grid = random_points(r, cfg.grid_points, 0.0, 1.0, cfg.seed);
        grid.push(vec![0.0; r]);
        let rep = parseval_certify(&transform, &lam, &grid, &cfg.certify)?;
        conditions.push(condition(
            "lambda1-spectrum",
            rep.verdict == Verdict::Pass,
            format!(
                "max |s_n - 1| = {:.3e} over {} points at depth {depth} (tol {:.1e})",
                rep.max_deviation,
                grid.len(),
                cfg.certify.tol
            ),
        ));
    } else {
        conditions.push(Condition {
            name: "lambda1-spectrum".into(),
            status: Status::Unverified,
            detail: "mu_1 carries unequal weights; the uniform-weight transform does not apply".into(),
        });
    }

    // lambda = S_1 lambda' - C y0 + l_1 with lambda' one level deeper.
    let s1_inv = decomp.s1.to_rational().inverse().expect("nonsingular");
    let cy0 = decomp.c.to_rational().mul_vec(y0);
    let deeper: HashSet<RatVec> = lam_next.elements().into_iter().collect();
    let mut missing = Vec::new();
    for lambda in lam.elements() {
        let found = l1.iter().any(|l| {
            let v: RatVec = lambda
                .iter()
                .zip(&cy0)
                .zip(l)
                .map(|((a, b), &c)| a + b - int(c))
                .collect();
            deeper.contains(&s1_inv.mul_vec(&v))
        });
        if !found {
            missing.push(lambda);
        }
    }
    conditions.push(condition(
        "containment",
        missing.is_empty() && !l1.is_empty(),
        if missing.is_empty() {
            format!("all {} elements recovered one level deeper", lam.len())
        } else {
            format!("{} elements not recovered, first {:?}", missing.len(), rat_vec_to_f64(&missing[0]))
        },
    ));

    conditions.push(period_condition(t, y0, &lam, cfg));

    if l1.len() != b1.len() {
        conditions.push(condition(
            "hadamard-subtriple",
            false,
            format!("#L_1 = {} but N_1 = {}", l1.len(), b1.len()),
        ));
    } else {
        let sub = Triple::new(a1.clone(), b1.clone(), DigitSet::from_vectors(DigitRole::L, l1.clone())?)?;
        let (ok, defect) = is_hadamard_triple(&sub, cfg.unitary_tol);
        conditions.push(condition("hadamard-subtriple", ok, format!("unitarity defect {defect:.3e}")));
    }

    let a1_inv = a1.inverse();
    let mut overlap = None;
    for i in 0..decomp.n1() {
        for j in i + 1..decomp.n1() {
            let diff: IntVec = decomp.projections[i]
                .iter()
                .zip(&decomp.projections[j])
                .map(|(a, b)| a - b)
                .collect();
            if a1_inv.mul_vec(&rat_vec(&diff)).iter().all(is_integer) {
                overlap = Some((i, j));
            }
        }
    }
    conditions.push(match overlap {
        None => condition("no-overlap", true, "projected digits are distinct mod A_1 Z^r".into()),
        Some((i, j)) => Condition {
            name: "no-overlap".into(),
            status: Status::Unverified,
            detail: format!("r_{i} and r_{j} are congruent mod A_1 Z^r; the sufficient test is inconclusive"),
        },
    });

    let pass = conditions.iter().all(|c| c.status != Status::Fail);
    Ok(ConditionReport {
        r,
        y0: y0.to_vec(),
        fixed_digit: fixed,
        l1,
        lambda1_depth: depth,
        conditions,
        pass,
    })
}

/// The `y0 = 0` case.
pub fn check_corollary_conditions(
    t: &Triple,
    r: usize,
    lambda1: &DigitTree,
    depth: u32,
    cfg: &ConditionConfig,
) -> Result<ConditionReport> {
    let zero = vec![int(0); t.dim() - r];
    check_theorem_conditions(t, r, &zero, lambda1, depth, cfg)
}

/// `W_B(x + S^n (lambda, -y0)) = W_B(x)` at random `x`, with the shift's
/// phases reduced exactly.
fn period_condition(t: &Triple, y0: &[Rational], lam: &SpectrumApprox, cfg: &ConditionConfig) -> Condition {
    let s = t.s().matrix().to_rational();
    let structural = lam.is_integral() && y0.iter().all(is_integer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let xs: Vec<Vec<f64>> = (0..cfg.period_samples)
        .map(|_| (0..t.dim()).map(|_| rng.random_range(-4.0..4.0)).collect())
        .collect();
    let n = t.n() as f64;
    let mut worst: f64 = 0.0;
    for lambda in lam.elements().into_iter().take(PERIOD_ELEMENTS) {
        let mut v: RatVec = lambda;
        v.extend(y0.iter().map(|y| -y));
        for _ in 0..=cfg.period_depth {
            let shifts: Vec<Complex64> = t
                .b()
                .vectors()
                .iter()
                .map(|b| {
                    let dot = b.iter().zip(&v).fold(Rational::zero(), |acc, (&bi, vi)| acc + int(bi) * vi);
                    root_of_unity::<f64>(&frac(&dot))
                })
                .collect();
            for x in &xs {
                let shifted: Complex64 = t
                    .b()
                    .vectors()
                    .iter()
                    .zip(&shifts)
                    .map(|(b, sh)| {
                        let p: f64 = b.iter().zip(x).map(|(&bi, xi)| bi as f64 * xi).sum();
                        Complex64::from_polar(1.0, std::f64::consts::TAU * p) * sh
                    })
                    .sum();
                let w = (shifted / n).norm_sqr();
                worst = worst.max((w - wb_eval(t.b(), x)).abs());
            }
            v = s.mul_vec(&v);
        }
    }
    let ok = worst < cfg.period_tol;
    let detail = if structural {
        format!("structural: Lambda_1 and y0 are integral; sampled max deviation {worst:.3e}")
    } else {
        format!("sampled max deviation {worst:.3e} for n <= {}", cfg.period_depth)
    };
    condition("period", ok, detail)
}

/// `L + S L + ... + S^{n-1} L + S^n (Lambda_1 x {-y0})`.
pub fn subspace_spectrum(
    t: &Triple,
    report: &ConditionReport,
    lambda1: &DigitTree,
    n: u32,
    budget: u64,
) -> Result<SpectrumApprox> {
    if !report.pass {
        return Err(Error::ConditionsNotMet(report.failed().join(", ")));
    }
    let r = report.r;
    let neg: RatVec = report.y0.iter().map(|y| -y).collect();
    let s = t.s().matrix().clone();
    let mut tree = if report.y0.iter().all(Zero::is_zero) {
        // S (v, 0) = (S_1 v, 0), so Lambda_1's digit levels embed directly.
        lambda1.embed(&s, report.lambda1_depth, &neg)
    } else {
        let lam = lambda1.generate(report.lambda1_depth, Provenance::Digits, budget)?;
        let seed = lam
            .elements()
            .into_iter()
            .map(|mut v| {
                v.extend_from_slice(&neg);
                v
            })
            .collect();
        DigitTree {
            s: s.clone(),
            outer: Vec::new(),
            inner: Vec::new(),
            seed,
        }
    };
    tree.outer = t.l().vectors().to_vec();
    tree.generate(
        n,
        Provenance::Subspace {
            r,
            y0: report.y0.clone(),
        },
        budget,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::ProductDepth;
    use crate::lattice::{conjugate_triple, UnimodularMatrix};
    use crate::scalar::ratio;
    use approx::assert_abs_diff_eq;

    fn example() -> Triple {
        Triple::from_parts(
            &[vec![4, 0], vec![0, 4]],
            vec![vec![0, 0], vec![0, 2], vec![1, 4], vec![1, 6]],
            vec![vec![0, 0], vec![2, 0], vec![2, 1], vec![0, 5]],
        )
        .unwrap()
    }

    fn conjugated() -> Triple {
        let m = UnimodularMatrix::new(Matrix::from_rows(&[vec![4, -1], vec![1, 0]])).unwrap();
        conjugate_triple(&m, &example()).unwrap()
    }

    fn lambda1() -> DigitTree {
        DigitTree::new(Matrix::from_rows(&[vec![4]]), vec![vec![0], vec![2]], vec![vec![int(0)]])
    }

    fn ys(v: &[(i64, i64)]) -> Vec<RatVec> {
        v.iter().map(|&(p, q)| vec![ratio(p, q)]).collect()
    }

    #[test]
    fn example_decomposition() {
        let t = example();
        let d = decompose(&t, 1).unwrap();
        assert_eq!(d.s1, Matrix::from_rows(&[vec![4]]));
        assert_eq!(d.s2, Matrix::from_rows(&[vec![4]]));
        assert!(d.c.is_zero());
        assert_eq!(d.projections, vec![vec![0], vec![1]]);
        assert_eq!(d.fibers, vec![vec![vec![0], vec![2]], vec![vec![4], vec![6]]]);
        assert_eq!(d.fiber_counts(), vec![2, 2]);
        assert_eq!(d.reassemble(), *t.s().matrix());
        for k in 1..5 {
            assert!(d.d_k(k).is_zero());
        }
    }

    #[test]
    fn shear_blocks() {
        // R = [[2,0],[1,3]] so S = [[2,1],[0,3]] leaves R x {0} invariant.
        let t = Triple::from_parts(&[vec![2, 0], vec![1, 3]], vec![vec![0, 0], vec![1, 0]], vec![vec![0, 0], vec![1, 0]])
            .unwrap();
        let d = decompose(&t, 1).unwrap();
        assert_eq!(d.c, Matrix::from_rows(&[vec![1]]));
        assert_eq!(d.c_star, Matrix::from_rows(&[vec![1]]));
        assert_eq!(d.reassemble(), *t.s().matrix());
        for k in 1..6 {
            let r_inv = t.r().inverse_power(k);
            assert_eq!(d.d_k(k), r_inv.block(1, 2, 0, 1));
        }
        assert!(matches!(
            decompose(
                &Triple::from_parts(&[vec![2, 1], vec![0, 3]], vec![vec![0, 0], vec![1, 0]], vec![vec![0, 0], vec![1, 0]])
                    .unwrap(),
                1
            ),
            Err(Error::NotInvariant { r: 1 })
        ));
    }

    #[test]
    fn example_line_is_invariant() {
        let t = example();
        let c = check_invariant_translate(&t, 1, &[int(0)], 1).unwrap();
        assert!(c.invariant);
        let kinds: Vec<BranchKind> = c.branches.iter().map(|b| b.kind).collect();
        assert_eq!(
            kinds,
            vec![BranchKind::MapsInto, BranchKind::MapsInto, BranchKind::Vanishes, BranchKind::Vanishes]
        );
        let one = check_invariant_translate(&t, 1, &[int(1)], 1).unwrap();
        assert!(!one.invariant);
    }

    #[test]
    fn example_translate_candidates() {
        let t = example();
        let c = candidate_translates(&t, 1, 1 << 16).unwrap();
        assert_eq!(c.candidates, ys(&[(0, 1), (1, 1)]));
        let one = trace_escape(&t, 1, &[int(1)], &c.candidates, 10).unwrap();
        assert_eq!(one.chain[1].y, vec![ratio(1, 2)]);
        assert!(one.escaped());
        let zero = trace_escape(&t, 1, &[int(0)], &c.candidates, 10).unwrap();
        assert_eq!(zero.outcome, EscapeOutcome::Periodic);
        assert_eq!(zero.chain.len(), 1);
    }

    #[test]
    fn conjugated_escape_chains() {
        let t = conjugated();
        assert_eq!(t.l().vectors(), &[vec![0, 0], vec![0, 2], vec![-1, 6], vec![-5, 20]]);
        let c = candidate_translates(&t, 1, 1 << 16).unwrap();
        assert_eq!(c.candidates, ys(&[(0, 1), (2, 1), (4, 1), (6, 1)]));
        let expected = [
            ys(&[(0, 1), (5, 1), (5, 4), (5, 16)]),
            ys(&[(2, 1), (1, 1), (1, 4)]),
            ys(&[(4, 1), (1, 1), (1, 4)]),
            ys(&[(6, 1), (2, 1), (1, 1), (1, 4)]),
        ];
        for (y, want) in c.candidates.iter().zip(expected) {
            let trace = trace_escape(&t, 1, y, &c.candidates, 10).unwrap();
            let got: Vec<RatVec> = trace.chain.iter().map(|s| s.y.clone()).take(want.len()).collect();
            assert_eq!(got, want);
            assert!(matches!(trace.outcome, EscapeOutcome::Escaped { step } if step <= 10));
            assert!(!check_invariant_translate(&t, 1, y, 3).unwrap().invariant);
        }
    }

    #[test]
    fn corollary_conditions_for_example() {
        let t = example();
        let rep = check_corollary_conditions(&t, 1, &lambda1(), 6, &ConditionConfig::default()).unwrap();
        assert!(rep.pass, "{rep:#?}");
        assert!(rep.conditions.iter().all(|c| c.status == Status::Pass), "{rep:#?}");
        assert_eq!(rep.l1, vec![vec![0], vec![2]]);
        assert!(rep.conditions.iter().any(|c| c.detail.starts_with("structural")));
    }

    #[test]
    fn unequal_fibers_fail() {
        let t = Triple::from_parts(
            &[vec![4, 0], vec![0, 4]],
            vec![vec![0, 0], vec![0, 2], vec![1, 4]],
            vec![vec![0, 0], vec![2, 0], vec![0, 1]],
        )
        .unwrap();
        let d = decompose(&t, 1).unwrap();
        assert_eq!(d.fiber_counts(), vec![2, 1]);
        assert!(matches!(f_product(&d, &[0.3], 4), Err(Error::UnequalFibers { .. })));
        let rep = check_corollary_conditions(&t, 1, &lambda1(), 3, &ConditionConfig::default()).unwrap();
        assert_eq!(rep.status("equal-fibers"), Some(Status::Fail));
        assert!(!rep.pass);
        assert!(matches!(
            subspace_spectrum(&t, &rep, &lambda1(), 2, SPECTRUM_BUDGET),
            Err(Error::ConditionsNotMet(_))
        ));
    }

    #[test]
    fn no_fixed_digit() {
        let t = example();
        assert_eq!(
            check_theorem_conditions(&t, 1, &[ratio(1, 2)], &lambda1(), 3, &ConditionConfig::default()),
            Err(Error::NoFixedDigit)
        );
    }

    #[test]
    fn example_subspace_spectrum() {
        let t = example();
        let rep = check_corollary_conditions(&t, 1, &lambda1(), 4, &ConditionConfig::default()).unwrap();
        let s0 = subspace_spectrum(&t, &rep, &lambda1(), 0, SPECTRUM_BUDGET).unwrap();
        assert_eq!(s0.len(), 16);
        assert!(s0.elements().iter().all(|v| v[1] == int(0)));
        let s2 = subspace_spectrum(&t, &rep, &lambda1(), 2, SPECTRUM_BUDGET).unwrap();
        let s3 = subspace_spectrum(&t, &rep, &lambda1(), 3, SPECTRUM_BUDGET).unwrap();
        assert!(s2.is_integral() && s2.is_nested() && s2.is_subset_of(&s3));
        assert_eq!(s2.repetitions(), 0);
        assert_eq!(s2.len(), 16 * 16);
    }

    #[test]
    fn fiber_transforms() {
        let t = example();
        let d = decompose(&t, 1).unwrap();
        assert_eq!(fiber_mu_hat(&d, &[0, 0, 0], &[0.0], 3).unwrap(), Complex64::new(1.0, 0.0));
        assert!(d.m(&[0.25], 0).norm() < 1e-15);
        assert_abs_diff_eq!(f_product(&d, &[0.0], 10).unwrap(), 1.0);
        for y in [0.1, 0.37, 1.9] {
            assert_abs_diff_eq!(d.m(&[y], 0).norm(), d.m(&[y], 1).norm(), epsilon = 1e-14);
            let w = ((1.0 + (std::f64::consts::TAU * 2.0 * y).cos()) / 2.0).abs();
            assert_abs_diff_eq!(d.w_tilde(&[y]), w, epsilon = 1e-14);
            let f = f_product(&d, &[y], 40).unwrap();
            let refined = d.w_tilde(&[y / 4.0]) * f_product(&d, &[y / 4.0], 40).unwrap();
            assert_abs_diff_eq!(f, refined, epsilon = 1e-12);
        }
        assert!(fiber_mu_hat(&d, &[0], &[0.3], 2).is_err());
    }

    // Both fibers of the example give the same |m|, so every word has |mu_omega|^2 = F.
    #[test]
    fn fiber_average_matches_f() {
        let t = example();
        let d = decompose(&t, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        for y in [0.3, 1.1] {
            let mean: f64 = (0..n)
                .map(|_| {
                    let w: Vec<usize> = (0..30).map(|_| rng.random_range(0..2)).collect();
                    fiber_mu_hat(&d, &w, &[y], 30).unwrap().norm_sqr()
                })
                .sum::<f64>()
                / n as f64;
            assert_abs_diff_eq!(mean, f_product(&d, &[y], 30).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn w_tilde_periodic_along_invariant_translate() {
        let t = example();
        let d = decompose(&t, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let y: f64 = rng.random_range(-3.0..3.0);
            assert_abs_diff_eq!(d.w_tilde(&[y]), d.w_tilde(&[y + 1.0]), epsilon = 1e-12);
        }
    }

    #[test]
    fn parseval_along_fiber_matches_f() {
        let t = example();
        let d = decompose(&t, 1).unwrap();
        let mt = MeasureTransform::<f64>::from_triple(&t);
        let lam = lambda1().generate(8, Provenance::Digits, 1 << 20).unwrap();
        for (x, y) in [(0.2, 0.3), (0.7, 0.15)] {
            let sum: f64 = lam
                .elements_f64()
                .iter()
                .map(|l| mt.mu_hat_sq(&[x + l[0], y], ProductDepth::default()).value)
                .sum();
            let f = f_product(&d, &[y], 60).unwrap();
            assert!((sum - f).abs() < 2e-2, "{sum} vs {f}");
            assert!(sum <= f + 1e-12);
        }
    }
}
