//! Cycles of the dual system `sigma_l(x) = S^{-1}(x + l)` and the spectra
//! generated by `W_B`-cycles.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{wb_eval, DigitTree, Provenance, SpectrumApprox};
use crate::hadamard::Triple;
use crate::ifs::BoundingBox;
use crate::lattice::{dual_lattice, ExpandingMatrix, LatticeBasis};
use crate::matrix::Matrix;
use crate::scalar::{int, rat_vec_to_f64};
use crate::{IntVec, RatVec, Rational};

/// `|W_B - 1|` below this counts as `W_B = 1`.
pub const WB_ONE_TOL: f64 = 1e-12;

/// Default cap on the number of words `N + N^2 + ... + N^m` examined.
pub const WORD_BUDGET: u128 = 1 << 24;

/// Default cap on the size of a generated cycle spectrum.
pub const SPECTRUM_BUDGET: u64 = 1 << 26;

/// A periodic orbit `x_0 -> sigma_{l_1} x_0 -> ... -> x_0` of the dual system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    /// Indices into `L`, the lexicographically least rotation.
    pub word: Vec<usize>,
    pub digits: Vec<IntVec>,
    /// `points[0] = x_0` and `points[k] = sigma_{l_k} points[k-1]`.
    pub points: Vec<RatVec>,
    pub wb_values: Vec<f64>,
    pub is_wb: bool,
}

impl Cycle {
    /// The cycle traced by the periodic word, reduced to its primitive root
    /// and least rotation.
    pub fn new(t: &Triple, word: &[usize]) -> Result<Cycle> {
        if word.is_empty() {
            return Err(Error::EmptyWord);
        }
        for &i in word {
            t.l().get(i)?;
        }
        let root = &word[..primitive_period(word)];
        let word = least_rotation(root);
        let digits: Vec<IntVec> = word.iter().map(|&i| t.l().vectors()[i].clone()).collect();
        let x0 = cycle_point(t.s(), &digits)?;
        let ifs = t.l_ifs();
        let mut points = vec![x0];
        for &i in &word[..word.len() - 1] {
            let next = ifs.apply_map(i, points.last().expect("nonempty"))?;
            points.push(next);
        }
        let wb_values: Vec<f64> = points.iter().map(|p| wb_eval(t.b(), &rat_vec_to_f64(p))).collect();
        let is_wb = wb_values.iter().all(|w| (w - 1.0).abs() < WB_ONE_TOL);
        Ok(Cycle {
            word,
            digits,
            points,
            wb_values,
            is_wb,
        })
    }

    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    pub fn is_trivial(&self) -> bool {
        self.points.len() == 1 && self.points[0].iter().all(|v| v == &Rational::from_integer(0.into()))
    }

    pub fn contains(&self, x: &[Rational]) -> bool {
        self.points.iter().any(|p| p.as_slice() == x)
    }
}

/// The unique `x_0` with `sigma_{l_m} ... sigma_{l_1} x_0 = x_0`, exactly.
pub fn cycle_point(s: &ExpandingMatrix, digits: &[IntVec]) -> Result<RatVec> {
    if digits.is_empty() {
        return Err(Error::EmptyWord);
    }
    let d = s.dim();
    let s_inv = s.inverse();
    // After the word, x maps to S^{-m} x + c.
    let mut c: RatVec = vec![int(0); d];
    for l in digits {
        if l.len() != d {
            return Err(Error::DimensionMismatch {
                what: "cycle digit",
                expected: d,
                found: l.len(),
            });
        }
        let shifted: RatVec = c.iter().zip(l).map(|(ci, &li)| ci + int(li)).collect();
        c = s_inv.mul_vec(&shifted);
    }
    let a = s.inverse_power(digits.len() as u32);
    let mut lhs = Matrix::<Rational>::identity(d);
    for i in 0..d {
        for j in 0..d {
            lhs[(i, j)] = &lhs[(i, j)] - &a[(i, j)];
        }
    }
    let inv = lhs.inverse().expect("I - S^{-m} is invertible for expanding S");
    Ok(inv.mul_vec(&c))
}

/// Smallest `p` with `word` a power of `word[..p]`.
fn primitive_period(word: &[usize]) -> usize {
    let m = word.len();
    (1..=m)
        .find(|&p| m.is_multiple_of(p) && (p..m).all(|i| word[i] == word[i - p]))
        .unwrap_or(m)
}

fn least_rotation(word: &[usize]) -> Vec<usize> {
    (0..word.len())
        .map(|k| [&word[k..], &word[..k]].concat())
        .min()
        .unwrap_or_default()
}

/// Lyndon words of length `1..=max_len` over `0..k`, in lexicographic order.
pub fn lyndon_words(k: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || max_len == 0 {
        return out;
    }
    let mut w: Vec<usize> = vec![0];
    loop {
        out.push(w.clone());
        let m = w.len();
        while w.len() < max_len {
            w.push(w[w.len() - m]);
        }
        while w.last() == Some(&(k - 1)) {
            w.pop();
        }
        match w.last_mut() {
            Some(last) => *last += 1,
            None => break,
        }
    }
    out
}

/// A point of `Gamma` inside the box around `X_L`, with the transitions out of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub point: RatVec,
    pub wb: f64,
    /// `W_B(sigma_l point)` for each `l` in `L`.
    pub successor_wb: Vec<f64>,
    /// Indices of `l` whose image is again a candidate.
    pub candidate_successors: Vec<usize>,
    /// Orbit obtained by following the first candidate successor until it
    /// stops or repeats.
    pub forced_orbit: Vec<RatVec>,
    pub on_cycle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSearch {
    /// Basis of `Gamma`, absent when `B` does not span a full-rank lattice.
    pub gamma: Option<Vec<RatVec>>,
    pub bounding_box: BoundingBox,
    pub candidates: Vec<Candidate>,
    /// Every primitive cycle of length `<= max_len` whose base point is a candidate.
    pub cycles: Vec<Cycle>,
    pub max_len: usize,
    pub words_examined: u64,
}

impl CycleSearch {
    pub fn wb_cycles(&self) -> Vec<&Cycle> {
        self.cycles.iter().filter(|c| c.is_wb).collect()
    }

    pub fn rejected(&self) -> Vec<&Candidate> {
        self.candidates.iter().filter(|c| !c.on_cycle).collect()
    }
}

fn total_words(n: usize, max_len: usize) -> u128 {
    (1..=max_len as u32).fold(0u128, |acc, m| acc.saturating_add((n as u128).saturating_pow(m)))
}

/// All `W_B`-cycles of length at most `max_len`, each once.
pub fn enumerate_wb_cycles(t: &Triple, max_len: usize, budget: u128) -> Result<CycleSearch> {
    if max_len == 0 {
        return Err(Error::InvalidParameter("max cycle length must be at least 1".into()));
    }
    let words = total_words(t.n(), max_len);
    if words > budget {
        return Err(Error::BudgetExceeded {
            requested: words,
            budget,
        });
    }
    let bbox = t.l_ifs().bounding_box();
    let gamma = match dual_lattice(t.b()) {
        Ok(g) => Some(g),
        // B spans a proper sublattice: W_B = 1 on whole subspaces, so there is
        // no finite candidate set and every word is evaluated directly.
        Err(Error::RankDeficient { .. }) => None,
        Err(e) => return Err(e),
    };
    let points = match &gamma {
        Some(g) => g.points_in_box(&bbox, budget.min(usize::MAX as u128) as usize)?,
        None => Vec::new(),
    };
    let candidates = candidate_graph(t, &points)?;
    let candidate_set: HashSet<&RatVec> = points.iter().collect();

    let lyndon = lyndon_words(t.n(), max_len);
    let examined = lyndon.len() as u64;
    let cycles: Vec<Cycle> = lyndon
        .par_iter()
        .map(|w| -> Result<Option<Cycle>> {
            let digits: Vec<IntVec> = w.iter().map(|&i| t.l().vectors()[i].clone()).collect();
            let x0 = cycle_point(t.s(), &digits)?;
            if gamma.is_some() && !candidate_set.contains(&x0) {
                return Ok(None);
            }
            Cycle::new(t, w).map(Some)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(CycleSearch {
        gamma: gamma.as_ref().map(LatticeBasis::vectors),
        bounding_box: bbox,
        candidates,
        cycles,
        max_len,
        words_examined: examined,
    })
}

/// Every primitive cycle of length at most `max_len`, without the lattice filter.
pub fn all_cycles(t: &Triple, max_len: usize, budget: u128) -> Result<Vec<Cycle>> {
    let words = total_words(t.n(), max_len);
    if words > budget {
        return Err(Error::BudgetExceeded {
            requested: words,
            budget,
        });
    }
    lyndon_words(t.n(), max_len).par_iter().map(|w| Cycle::new(t, w)).collect()
}

fn candidate_graph(t: &Triple, points: &[RatVec]) -> Result<Vec<Candidate>> {
    let ifs = t.l_ifs();
    let index: HashMap<&RatVec, usize> = points.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let mut edges: Vec<Vec<(usize, usize)>> = Vec::with_capacity(points.len());
    let mut partial = Vec::with_capacity(points.len());
    for p in points {
        let mut successor_wb = Vec::with_capacity(t.n());
        let mut out = Vec::new();
        for li in 0..t.n() {
            let q = ifs.apply_map(li, p)?;
            successor_wb.push(wb_eval(t.b(), &rat_vec_to_f64(&q)));
            if let Some(&j) = index.get(&q) {
                out.push((li, j));
            }
        }
        edges.push(out);
        partial.push((p.clone(), wb_eval(t.b(), &rat_vec_to_f64(p)), successor_wb));
    }
    let on_cycle: Vec<bool> = (0..points.len()).map(|i| reaches(&edges, i, i)).collect();
    Ok(partial
        .into_iter()
        .enumerate()
        .map(|(i, (point, wb, successor_wb))| {
            let mut orbit = vec![point.clone()];
            let mut seen = HashSet::from([i]);
            let mut at = i;
            while let Some(&(_, j)) = edges[at].first() {
                orbit.push(points[j].clone());
                if !seen.insert(j) {
                    break;
                }
                at = j;
            }
            Candidate {
                point,
                wb,
                successor_wb,
                candidate_successors: edges[i].iter().map(|&(l, _)| l).collect(),
                forced_orbit: orbit,
                on_cycle: on_cycle[i],
            }
        })
        .collect())
}

fn reaches(edges: &[Vec<(usize, usize)>], from: usize, to: usize) -> bool {
    let mut stack: Vec<usize> = edges[from].iter().map(|&(_, j)| j).collect();
    let mut seen = HashSet::new();
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        if seen.insert(v) {
            stack.extend(edges[v].iter().map(|&(_, j)| j));
        }
    }
    false
}

/// `Lambda_n`: `n` applications of `Lambda -> S Lambda + L` to `-C`.
pub fn cycle_spectrum(c: &Cycle, t: &Triple, depth: u32) -> Result<SpectrumApprox> {
    if !c.is_wb {
        return Err(Error::NotWbCycle);
    }
    let seed: Vec<RatVec> = c.points.iter().map(|p| p.iter().map(|v| -v).collect()).collect();
    DigitTree::new(t.s().matrix().clone(), t.l().vectors().to_vec(), seed).generate(
        depth,
        Provenance::Cycle { word: c.word.clone() },
        SPECTRUM_BUDGET,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;

    fn example() -> Triple {
        Triple::from_parts(
            &[vec![4, 0], vec![0, 4]],
            vec![vec![0, 0], vec![0, 2], vec![1, 4], vec![1, 6]],
            vec![vec![0, 0], vec![2, 0], vec![2, 1], vec![0, 5]],
        )
        .unwrap()
    }

    fn quarter() -> Triple {
        Triple::from_parts(&[vec![4]], vec![vec![0], vec![1]], vec![vec![0], vec![2]]).unwrap()
    }

    #[test]
    fn lyndon_counts() {
        // Necklace counts for binary and ternary alphabets.
        let two = lyndon_words(2, 4);
        assert_eq!(two.len(), 2 + 1 + 2 + 3);
        assert_eq!(two[..3], [vec![0], vec![0, 0, 0, 1], vec![0, 0, 1]]);
        assert_eq!(lyndon_words(3, 3).len(), 3 + 3 + 8);
        assert!(lyndon_words(1, 5) == vec![vec![0]]);
        for w in lyndon_words(3, 5) {
            assert_eq!(least_rotation(&w), w);
            assert_eq!(primitive_period(&w), w.len());
        }
    }

    #[test]
    fn cycle_points() {
        let s1 = ExpandingMatrix::scalar(1, 4).unwrap();
        assert_eq!(cycle_point(&s1, &[vec![0]]).unwrap(), vec![int(0)]);
        assert_eq!(cycle_point(&s1, &[vec![2]]).unwrap(), vec![ratio(2, 3)]);
        let t = example();
        assert_eq!(cycle_point(t.s(), &[vec![0, 5]]).unwrap(), vec![int(0), ratio(5, 3)]);
        assert_eq!(cycle_point(t.s(), &[]), Err(Error::EmptyWord));
    }

    #[test]
    fn cycle_closes_exactly() {
        let t = example();
        for w in lyndon_words(4, 3) {
            let c = Cycle::new(&t, &w).unwrap();
            let mut x = c.points[0].clone();
            for &i in &c.word {
                x = t.l_ifs().apply_map(i, &x).unwrap();
            }
            assert_eq!(x, c.points[0]);
            let distinct: HashSet<&RatVec> = c.points.iter().collect();
            assert_eq!(distinct.len(), c.points.len());
        }
    }

    #[test]
    fn rotations_and_powers_collapse() {
        let t = example();
        let a = Cycle::new(&t, &[3, 1]).unwrap();
        let b = Cycle::new(&t, &[1, 3, 1, 3]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.word, vec![1, 3]);
    }

    #[test]
    fn example_has_only_trivial_wb_cycle() {
        let search = enumerate_wb_cycles(&example(), 4, WORD_BUDGET).unwrap();
        let wb = search.wb_cycles();
        assert_eq!(wb.len(), 1);
        assert!(wb[0].is_trivial());
        let pts: Vec<RatVec> = search.candidates.iter().map(|c| c.point.clone()).collect();
        for y in [ratio(0, 1), ratio(1, 2), ratio(1, 1)] {
            assert!(pts.contains(&vec![int(0), y]));
        }
        for c in search.rejected() {
            assert!(c.successor_wb.iter().any(|&w| w < 1.0 - 1e-3) || c.candidate_successors.is_empty());
        }
        let half = search.candidates.iter().find(|c| c.point == vec![int(0), ratio(1, 2)]).unwrap();
        assert!(!half.on_cycle);
        assert!(half.successor_wb.iter().all(|&w| w < 1.0 - 1e-3));
    }

    #[test]
    fn quarter_cantor_trivial_cycle_only() {
        let t = quarter();
        let search = enumerate_wb_cycles(&t, 2, WORD_BUDGET).unwrap();
        assert_eq!(search.wb_cycles().len(), 1);
        let two_thirds = Cycle::new(&t, &[1]).unwrap();
        assert_eq!(two_thirds.points, vec![vec![ratio(2, 3)]]);
        assert!((two_thirds.wb_values[0] - 0.25).abs() < 1e-15);
        assert!(!two_thirds.is_wb);
        assert_eq!(cycle_spectrum(&two_thirds, &t, 1), Err(Error::NotWbCycle));
    }

    #[test]
    fn single_digit_system() {
        let t = Triple::from_parts(&[vec![3]], vec![vec![0]], vec![vec![0]]).unwrap();
        let s = enumerate_wb_cycles(&t, 3, WORD_BUDGET).unwrap();
        assert_eq!(s.cycles.len(), 1);
        assert!(s.cycles[0].is_trivial() && s.cycles[0].is_wb);
    }

    #[test]
    fn filter_agrees_with_brute_force() {
        for t in [example(), quarter()] {
            let filtered = enumerate_wb_cycles(&t, 4, WORD_BUDGET).unwrap();
            let brute: Vec<Cycle> = all_cycles(&t, 4, WORD_BUDGET).unwrap().into_iter().filter(|c| c.is_wb).collect();
            let got: Vec<&Cycle> = filtered.wb_cycles();
            assert_eq!(got.len(), brute.len());
            for c in &brute {
                assert!(got.contains(&c));
            }
        }
    }

    #[test]
    fn word_budget() {
        assert!(matches!(
            enumerate_wb_cycles(&example(), 12, 1000),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn trivial_cycle_spectrum() {
        let t = quarter();
        let trivial = Cycle::new(&t, &[0]).unwrap();
        let s = cycle_spectrum(&trivial, &t, 3).unwrap();
        let mut v: Vec<i64> = s.numerators().iter().map(|x| x[0]).collect();
        v.sort();
        assert_eq!(v, vec![0, 2, 8, 10, 32, 34, 40, 42]);
        assert_eq!(cycle_spectrum(&trivial, &t, 0).unwrap().elements(), vec![vec![int(0)]]);

        let e = example();
        let c = Cycle::new(&e, &[0]).unwrap();
        let s2 = cycle_spectrum(&c, &e, 2).unwrap();
        assert_eq!(s2.len(), 16);
        assert_eq!(s2.repetitions(), 0);
        assert!(cycle_spectrum(&c, &e, 1).unwrap().is_subset_of(&s2));
        assert!(s2.is_nested());
    }
}
