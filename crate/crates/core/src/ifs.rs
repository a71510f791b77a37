//! Affine iterated function systems `x -> A^{-1}(x + d)`, their attractors and
//! invariant measures.

use std::collections::HashSet;

use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DigitSet, ExpandingMatrix};
use crate::matrix::Matrix;
use crate::scalar::{int, rational_to_f64, Field};
use crate::{RatMatrix, RatVec, Rational};

/// Default limit on the number of cloud points.
pub const CLOUD_BUDGET: usize = 1 << 20;

/// Largest block length tried when certifying a bounding box.
const MAX_BLOCK: u32 = 64;

const SAMPLE_CHUNK: usize = 4096;

/// The maps `x -> A^{-1}(x + d)` for `d` in a digit set.
///
/// With `A = R` and `B` this is the system `tau_b`; with `A = S = R^T` and
/// `L` it is the dual system `sigma_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineIfs {
    scaling: ExpandingMatrix,
    digits: DigitSet,
}

impl AffineIfs {
    pub fn new(scaling: ExpandingMatrix, digits: DigitSet) -> Result<Self> {
        if scaling.dim() != digits.dim() {
            return Err(Error::DimensionMismatch {
                what: "digit dimension",
                expected: scaling.dim(),
                found: digits.dim(),
            });
        }
        Ok(AffineIfs { scaling, digits })
    }

    pub fn dim(&self) -> usize {
        self.scaling.dim()
    }

    pub fn scaling(&self) -> &ExpandingMatrix {
        &self.scaling
    }

    pub fn digits(&self) -> &DigitSet {
        &self.digits
    }

    /// `A^{-1}(x + d_index)`; exact for rational input.
    pub fn apply_map<T: Field>(&self, index: usize, x: &[T]) -> Result<Vec<T>> {
        let d = self.digits.get(index)?;
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: self.dim(),
                found: x.len(),
            });
        }
        let shifted: Vec<T> = x
            .iter()
            .zip(d)
            .map(|(xi, &di)| xi.clone() + T::from_int(di))
            .collect();
        Ok(self.scaling.inverse().to_real::<T>().mul_vec(&shifted))
    }

    /// Applies `word[0]` first, then `word[1]`, and so on.
    pub fn apply_word<T: Field>(&self, word: &[usize], x: &[T]) -> Result<Vec<T>> {
        let mut y = x.to_vec();
        for &i in word {
            y = self.apply_map(i, &y)?;
        }
        Ok(y)
    }

    /// The fixed point `(A - I)^{-1} d` of a single map.
    pub fn fixed_point(&self, index: usize) -> Result<RatVec> {
        let d = self.digits.get(index)?;
        let n = self.dim();
        let mut m = self.scaling.matrix().to_rational();
        for i in 0..n {
            m[(i, i)] -= Rational::one();
        }
        let inv = m.inverse().expect("expanding matrices have no eigenvalue 1");
        Ok(inv.mul_vec(&d.iter().map(|&v| int(v)).collect::<Vec<_>>()))
    }

    /// All points `sum_{k=1}^K A^{-k} d_k`, failing when `N^K` exceeds `budget`.
    pub fn attractor_cloud(&self, depth: u32, budget: usize) -> Result<AttractorCloud> {
        let n = self.digits.len() as u128;
        let requested = n.checked_pow(depth).unwrap_or(u128::MAX);
        if requested > budget as u128 {
            return Err(Error::BudgetExceeded {
                requested,
                budget: budget as u128,
            });
        }
        AttractorCloud::build(self, depth)
    }

    /// Like [`AffineIfs::attractor_cloud`] but lowers the depth to fit the budget.
    pub fn attractor_cloud_capped(&self, depth: u32, budget: usize) -> Result<AttractorCloud> {
        let n = self.digits.len();
        let mut k = depth;
        if n > 1 {
            while k > 0 && (n as u128).checked_pow(k).is_none_or(|c| c > budget as u128) {
                k -= 1;
            }
        }
        AttractorCloud::build(self, k.max(1).min(depth.max(1)))
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::of_attractor(&self.scaling, &self.digits)
    }

    /// `count` draws of `sum_{k=1}^K A^{-k} d_k` with i.i.d. uniform digits.
    ///
    /// Draws are split into fixed chunks, each with its own ChaCha stream, so
    /// the output does not depend on the number of worker threads.
    pub fn sample_invariant_measure(&self, depth: u32, count: usize, seed: u64) -> MeasureSample {
        let inv = self.scaling.inverse().to_f64();
        let digits: Vec<Vec<f64>> = self
            .digits
            .vectors()
            .iter()
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .collect();
        let d = self.dim();
        let chunks = count.div_ceil(SAMPLE_CHUNK);
        let points: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                let len = SAMPLE_CHUNK.min(count - c * SAMPLE_CHUNK);
                let mut out = Vec::with_capacity(len);
                let mut word = vec![0usize; depth as usize];
                for _ in 0..len {
                    for w in word.iter_mut() {
                        *w = rng.random_range(0..digits.len());
                    }
                    // Horner from the innermost digit outwards.
                    let mut x = vec![0.0; d];
                    for &w in word.iter().rev() {
                        for (xi, di) in x.iter_mut().zip(&digits[w]) {
                            *xi += di;
                        }
                        x = inv.mul_vec(&x);
                    }
                    out.push(x);
                }
                out
            })
            .collect();
        let bbox = self.bounding_box();
        let tail_radius = rational_to_f64(&self.scaling.inverse_power(depth).inf_norm()) * bbox.sup_norm();
        MeasureSample {
            depth,
            seed,
            tail_radius,
            points,
        }
    }
}

/// Independent draws from a depth-`K` truncation of the invariant measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSample {
    pub depth: u32,
    pub seed: u64,
    /// Sup-norm bound on the distance from a truncated draw to the exact one.
    pub tail_radius: f64,
    pub points: Vec<Vec<f64>>,
}

/// Truncated attractor `{ A^{-K} v }` stored through integer numerators `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorCloud {
    depth: u32,
    scale: RatMatrix,
    numerators: Vec<Vec<i128>>,
    raw_count: u128,
    hausdorff_bound: f64,
}

impl AttractorCloud {
    fn build(ifs: &AffineIfs, depth: u32) -> Result<Self> {
        let a = ifs.scaling.matrix();
        let d = ifs.dim();
        // v_K = A^{K-1} d_1 + ... + d_K, built digit by digit.
        let mut layer: Vec<Vec<i128>> = vec![vec![0; d]];
        let mut seen: HashSet<Vec<i128>> = HashSet::new();
        for _ in 0..depth {
            let mut next = Vec::with_capacity(layer.len() * ifs.digits.len());
            seen.clear();
            for v in &layer {
                let av: Vec<i128> = (0..d)
                    .map(|i| {
                        a.row(i)
                            .iter()
                            .zip(v)
                            .try_fold(0i128, |acc, (&aij, &vj)| acc.checked_add((aij as i128).checked_mul(vj)?))
                    })
                    .collect::<Option<_>>()
                    .ok_or_else(|| Error::InvalidParameter("attractor numerators overflow i128".into()))?;
                for digit in ifs.digits.vectors() {
                    let w: Vec<i128> = av.iter().zip(digit).map(|(&x, &b)| x + b as i128).collect();
                    if seen.insert(w.clone()) {
                        next.push(w);
                    }
                }
            }
            layer = next;
        }
        let raw_count = (ifs.digits.len() as u128).saturating_pow(depth);
        let scale = ifs.scaling.inverse_power(depth);
        let hausdorff_bound = rational_to_f64(&scale.inf_norm()) * ifs.bounding_box().sup_norm();
        Ok(AttractorCloud {
            depth,
            scale,
            numerators: layer,
            raw_count,
            hausdorff_bound,
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.numerators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numerators.is_empty()
    }

    /// Number of digit words, `N^K`; exceeds [`AttractorCloud::len`] when points coincide.
    pub fn raw_count(&self) -> u128 {
        self.raw_count
    }

    /// Sup-norm Hausdorff distance bound between the cloud and the attractor.
    pub fn hausdorff_bound(&self) -> f64 {
        self.hausdorff_bound
    }

    pub fn point(&self, i: usize) -> RatVec {
        let v: RatVec = self.numerators[i]
            .iter()
            .map(|&x| Rational::from_integer(x.into()))
            .collect();
        self.scale.mul_vec(&v)
    }

    pub fn points(&self) -> Vec<RatVec> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn points_f64(&self) -> Vec<Vec<f64>> {
        let scale = self.scale.to_f64();
        self.numerators
            .iter()
            .map(|v| scale.mul_vec(&v.iter().map(|&x| x as f64).collect::<Vec<_>>()))
            .collect()
    }
}

/// A product of closed rational intervals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    intervals: Vec<(Rational, Rational)>,
}

impl BoundingBox {
    pub fn new(intervals: Vec<(Rational, Rational)>) -> Self {
        assert!(intervals.iter().all(|(lo, hi)| lo <= hi), "empty interval");
        BoundingBox { intervals }
    }

    pub fn point(p: &[Rational]) -> Self {
        BoundingBox {
            intervals: p.iter().map(|x| (x.clone(), x.clone())).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn interval(&self, i: usize) -> (&Rational, &Rational) {
        let (lo, hi) = &self.intervals[i];
        (lo, hi)
    }

    pub fn intervals(&self) -> &[(Rational, Rational)] {
        &self.intervals
    }

    pub fn contains(&self, p: &[Rational]) -> bool {
        p.len() == self.dim() && self.intervals.iter().zip(p).all(|((lo, hi), x)| lo <= x && x <= hi)
    }

    pub fn contains_f64(&self, p: &[f64], slack: f64) -> bool {
        p.len() == self.dim()
            && self
                .intervals
                .iter()
                .zip(p)
                .all(|((lo, hi), &x)| rational_to_f64(lo) - slack <= x && x <= rational_to_f64(hi) + slack)
    }

    /// Largest sup-norm of a point in the box.
    pub fn sup_norm(&self) -> f64 {
        self.intervals
            .iter()
            .map(|(lo, hi)| rational_to_f64(lo).abs().max(rational_to_f64(hi).abs()))
            .fold(0.0, f64::max)
    }

    /// Coordinates `from..dim`.
    pub fn project_tail(&self, from: usize) -> BoundingBox {
        BoundingBox {
            intervals: self.intervals[from..].to_vec(),
        }
    }

    /// Certified box around the attractor of `x -> A^{-1}(x + d)`.
    ///
    /// Diagonal scalings give the exact coordinate hull. Otherwise the box is
    /// the exact hull of a long partial sum, widened by a certified tail.
    pub fn of_attractor(a: &ExpandingMatrix, digits: &DigitSet) -> BoundingBox {
        if a.matrix().is_diagonal() {
            return Self::diagonal_hull(a, digits);
        }
        let t = a.inverse();
        let mut k0 = 1;
        let mut t_k0 = t.clone();
        while t_k0.inf_norm() >= Rational::one() {
            assert!(k0 < MAX_BLOCK, "no contracting block power for an expanding matrix");
            k0 += 1;
            t_k0 = t_k0.matmul(t);
        }
        let q = t_k0.inf_norm();

        let d = a.dim();
        let zero = vec![(Rational::zero(), Rational::zero()); d];
        let mut partial = BoundingBox { intervals: zero };
        let mut power = Matrix::identity(d);
        for _ in 0..k0 {
            power = power.matmul(t);
            partial.add_hull(&power, digits);
        }
        // sup-norm bound on the attractor: |x| <= M_Y / (1 - q).
        let m_y = partial
            .intervals
            .iter()
            .map(|(lo, hi)| lo.abs().max(hi.abs()))
            .fold(Rational::zero(), |m, v| if v > m { v } else { m });
        let m_x = m_y / (Rational::one() - &q);

        let target = Rational::new(1.into(), 1_000_000_000.into()) * m_x.clone().max(Rational::one());
        let mut k = k0;
        while &power.inf_norm() * &m_x > target && k < k0 * MAX_BLOCK {
            power = power.matmul(t);
            partial.add_hull(&power, digits);
            k += 1;
        }
        let tail = power.inf_norm() * m_x;
        for (lo, hi) in partial.intervals.iter_mut() {
            *lo -= &tail;
            *hi += &tail;
        }
        partial
    }

    fn add_hull(&mut self, power: &RatMatrix, digits: &DigitSet) {
        for (i, (lo, hi)) in self.intervals.iter_mut().enumerate() {
            let vals: Vec<Rational> = digits
                .vectors()
                .iter()
                .map(|b| {
                    power
                        .row(i)
                        .iter()
                        .zip(b)
                        .fold(Rational::zero(), |acc, (p, &bj)| acc + p * int(bj))
                })
                .collect();
            *lo += vals.iter().min().expect("nonempty digits");
            *hi += vals.iter().max().expect("nonempty digits");
        }
    }

    fn diagonal_hull(a: &ExpandingMatrix, digits: &DigitSet) -> BoundingBox {
        let intervals = (0..a.dim())
            .map(|i| {
                let r = a.matrix()[(i, i)];
                let coords = digits.vectors().iter().map(|b| b[i]);
                let lo = int(coords.clone().min().expect("nonempty digits"));
                let hi = int(coords.max().expect("nonempty digits"));
                if r > 0 {
                    let s = int(r - 1);
                    (lo / &s, hi / s)
                } else {
                    // Coefficients r^{-k} alternate in sign.
                    let denom = int(r * r - 1);
                    let abs = int(r.abs());
                    (
                        (&lo - &hi * &abs) / &denom,
                        (&hi - &lo * &abs) / &denom,
                    )
                }
            })
            .collect();
        BoundingBox { intervals }
    }

    /// Uniform random point inside the box (as `f64`).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.intervals
            .iter()
            .map(|(lo, hi)| {
                let (lo, hi) = (rational_to_f64(lo), rational_to_f64(hi));
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect()
    }

    pub fn to_f64(&self) -> Vec<(f64, f64)> {
        self.intervals
            .iter()
            .map(|(lo, hi)| (rational_to_f64(lo), rational_to_f64(hi)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::DigitRole;
    use crate::scalar::ratio;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn dual_example() -> AffineIfs {
        AffineIfs::new(
            ExpandingMatrix::scalar(2, 4).unwrap(),
            DigitSet::new(DigitRole::L, vec![vec![0, 0], vec![2, 0], vec![2, 1], vec![0, 5]]).unwrap(),
        )
        .unwrap()
    }

    fn one_dim(r: i64, b: &[i64]) -> AffineIfs {
        AffineIfs::new(
            ExpandingMatrix::scalar(1, r).unwrap(),
            DigitSet::new(DigitRole::B, b.iter().map(|&x| vec![x]).collect()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn dual_map_on_horizontal_line() {
        let ifs = dual_example();
        let x = ratio(3, 7);
        let y = ifs.apply_map(2, &[x.clone(), int(0)]).unwrap();
        assert_eq!(y, vec![(x + int(2)) / int(4), ratio(1, 4)]);
        let yf = ifs.apply_map(2, &[0.5f64, 0.0]).unwrap();
        assert_eq!(yf, vec![0.625, 0.25]);
        assert_eq!(ifs.apply_map(0, &[int(0), int(0)]).unwrap(), vec![int(0), int(0)]);
        assert!(matches!(
            ifs.apply_map(4, &[int(0), int(0)]),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn iterating_one_map_converges_to_its_fixed_point() {
        let ifs = dual_example();
        let y0 = ifs.fixed_point(3).unwrap();
        assert_eq!(y0, vec![int(0), ratio(5, 3)]);
        let start = vec![ratio(1, 2), ratio(-2, 1)];
        let mut y = start.clone();
        for k in 1..=6u32 {
            y = ifs.apply_map(3, &y).unwrap();
            let closed: RatVec = ifs
                .scaling()
                .inverse_power(k)
                .mul_vec(&start.iter().zip(&y0).map(|(s, f)| s - f).collect::<Vec<_>>())
                .into_iter()
                .zip(&y0)
                .map(|(a, f)| a + f)
                .collect();
            assert_eq!(y, closed);
        }
    }

    #[test]
    fn quarter_cantor_cloud_in_box() {
        let ifs = one_dim(4, &[0, 2]);
        let bbox = ifs.bounding_box();
        assert_eq!(bbox.intervals(), &[(int(0), ratio(2, 3))]);
        for k in 1..=8 {
            let cloud = ifs.attractor_cloud(k, CLOUD_BUDGET).unwrap();
            assert_eq!(cloud.len(), 1 << k);
            assert!(cloud.points().iter().all(|p| bbox.contains(p)));
        }
    }

    #[test]
    fn zero_digit_is_a_point() {
        let ifs = one_dim(3, &[0]);
        assert_eq!(ifs.bounding_box(), BoundingBox::point(&[int(0)]));
        let cloud = ifs.attractor_cloud(5, CLOUD_BUDGET).unwrap();
        assert_eq!(cloud.points(), vec![vec![int(0)]]);
        let s = ifs.sample_invariant_measure(6, 100, 1);
        assert!(s.points.iter().all(|p| p == &vec![0.0]));
    }

    #[test]
    fn dual_example_box_is_exact() {
        let bbox = dual_example().bounding_box();
        assert_eq!(
            bbox.intervals(),
            &[(int(0), ratio(2, 3)), (int(0), ratio(5, 3))]
        );
        let cloud = dual_example().attractor_cloud(6, CLOUD_BUDGET).unwrap();
        assert!(cloud.points().iter().all(|p| bbox.contains(p)));
    }

    #[test]
    fn negative_diagonal_box() {
        let ifs = one_dim(-3, &[0, 1, 2]);
        let bbox = ifs.bounding_box();
        let cloud = ifs.attractor_cloud(7, CLOUD_BUDGET).unwrap();
        assert!(cloud.points().iter().all(|p| bbox.contains(p)));
        // The interval [-3/4, 1/4] is the exact hull.
        assert_eq!(bbox.intervals(), &[(ratio(-3, 4), ratio(1, 4))]);
    }

    #[test]
    fn shear_box_contains_deep_cloud() {
        let ifs = AffineIfs::new(
            ExpandingMatrix::from_rows(&[vec![2, 1], vec![0, 2]]).unwrap(),
            DigitSet::new(DigitRole::B, vec![vec![0, 0], vec![1, 1]]).unwrap(),
        )
        .unwrap();
        let bbox = ifs.bounding_box();
        let cloud = ifs.attractor_cloud(10, CLOUD_BUDGET).unwrap();
        assert!(cloud.points().iter().all(|p| bbox.contains(p)));
        assert!(cloud.hausdorff_bound() < 0.1);
    }

    #[test]
    fn budget_is_enforced() {
        let ifs = dual_example();
        assert!(matches!(
            ifs.attractor_cloud(11, CLOUD_BUDGET),
            Err(Error::BudgetExceeded { .. })
        ));
        assert_eq!(ifs.attractor_cloud_capped(11, CLOUD_BUDGET).unwrap().depth(), 10);
    }

    #[test]
    fn sampling_is_reproducible_and_in_box() {
        let ifs = dual_example();
        let a = ifs.sample_invariant_measure(20, 10_000, 7);
        let b = ifs.sample_invariant_measure(20, 10_000, 7);
        assert_eq!(a, b);
        let c = ifs.sample_invariant_measure(20, 10_000, 8);
        assert_ne!(a.points, c.points);
        let bbox = ifs.bounding_box();
        assert!(a.points.iter().all(|p| bbox.contains_f64(p, 1e-12)));
    }

    #[test]
    fn invariance_of_sampled_measure() {
        // int f dmu = (1/N) sum_b int f(tau_b x) dmu for f = e_t.
        let ifs = one_dim(4, &[0, 1]);
        let n = 40_000;
        let sample = ifs.sample_invariant_measure(30, n, 11);
        let t = 1.7;
        let e = |x: f64| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * t * x);
        let lhs: Complex64 = sample.points.iter().map(|p| e(p[0])).sum::<Complex64>() / n as f64;
        let rhs: Complex64 = sample
            .points
            .iter()
            .map(|p| (e(p[0] / 4.0) + e((p[0] + 1.0) / 4.0)) / 2.0)
            .sum::<Complex64>()
            / n as f64;
        let stderr = (2.0 / n as f64).sqrt();
        assert!((lhs - rhs).norm() < 5.0 * stderr, "{lhs} vs {rhs}");
    }

    proptest! {
        #[test]
        fn cloud_self_similarity(depth in 1u32..5, digits in proptest::collection::btree_set(-3i64..=3, 1..4)) {
            let mut b: Vec<i64> = vec![0];
            b.extend(digits.into_iter().filter(|&x| x != 0));
            let ifs = one_dim(3, &b);
            let next: HashSet<RatVec> = ifs.attractor_cloud(depth + 1, CLOUD_BUDGET).unwrap().points().into_iter().collect();
            let cloud = ifs.attractor_cloud(depth, CLOUD_BUDGET).unwrap();
            let mut image = HashSet::new();
            for p in cloud.points() {
                for i in 0..b.len() {
                    image.insert(ifs.apply_map(i, &p).unwrap());
                }
            }
            prop_assert_eq!(next, image);
        }

        #[test]
        fn box_contains_cloud(a in 2i64..5, c in -2i64..=2, b1 in -3i64..=3, b2 in -3i64..=3) {
            let r = ExpandingMatrix::from_rows(&[vec![a, c], vec![0, a]]).unwrap();
            let digits = DigitSet::new(DigitRole::B, vec![vec![0, 0], vec![b1, b2], vec![1, 0]]);
            if let Ok(digits) = digits {
                let ifs = AffineIfs::new(r, digits).unwrap();
                let bbox = ifs.bounding_box();
                let cloud = ifs.attractor_cloud(6, CLOUD_BUDGET).unwrap();
                prop_assert!(cloud.points().iter().all(|p| bbox.contains(p)));
            }
        }
    }
}
