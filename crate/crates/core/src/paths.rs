//! Monte-Carlo simulation of the path measures `P_x` on words over `L`,
//! absorption probabilities `h_F` and the checks built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{MeasureTransform, TransitionKernel};
use crate::hadamard::Triple;
use crate::scalar::rat_vec_to_f64;
use crate::RatVec;

pub const CYCLE_DISTANCE_TOL: f64 = 1e-6;
pub const TRANSLATE_DISTANCE_TOL: f64 = 1e-4;
pub const DEFAULT_STEPS: usize = 64;
pub const DEFAULT_PATHS: usize = 100_000;

/// Transition weights summing below this are treated as a breakdown.
const DEGENERATE_WEIGHT: f64 = 1e-15;

const PATH_CHUNK: usize = 1024;

/// Slack added to `3 sigma` in statistical pass rules, so that estimates
/// with zero variance are not failed by rounding.
pub const STAT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SetKind {
    /// The finite set of points of a cycle.
    Cycle(Vec<Vec<f64>>),
    /// `R^r x {y0}`.
    Translate { r: usize, y0: Vec<f64> },
    Union(Vec<SetKind>),
    Full,
    Empty,
}

impl SetKind {
    /// Sup-norm distance from `y` to the set.
    pub fn distance(&self, y: &[f64]) -> f64 {
        match self {
            SetKind::Cycle(points) => points
                .iter()
                .map(|p| p.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min),
            SetKind::Translate { r, y0 } => y[*r..].iter().zip(y0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            SetKind::Union(parts) => parts.iter().map(|p| p.distance(y)).fold(f64::INFINITY, f64::min),
            SetKind::Full => 0.0,
            SetKind::Empty => f64::INFINITY,
        }
    }
}

/// A closed invariant set `F` together with the tolerance used to decide
/// whether a path converges to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantSetSpec {
    pub name: String,
    pub kind: SetKind,
    pub tol: f64,
}

impl InvariantSetSpec {
    pub fn cycle(name: impl Into<String>, points: &[RatVec]) -> Self {
        InvariantSetSpec {
            name: name.into(),
            kind: SetKind::Cycle(points.iter().map(|p| rat_vec_to_f64(p)).collect()),
            tol: CYCLE_DISTANCE_TOL,
        }
    }

    pub fn translate(name: impl Into<String>, r: usize, y0: &[f64]) -> Self {
        InvariantSetSpec {
            name: name.into(),
            kind: SetKind::Translate { r, y0: y0.to_vec() },
            tol: TRANSLATE_DISTANCE_TOL,
        }
    }

    pub fn full() -> Self {
        InvariantSetSpec {
            name: "full space".into(),
            kind: SetKind::Full,
            tol: 0.0,
        }
    }

    pub fn empty() -> Self {
        InvariantSetSpec {
            name: "empty".into(),
            kind: SetKind::Empty,
            tol: 0.0,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn distance(&self, y: &[f64]) -> f64 {
        self.kind.distance(y)
    }

    fn accepts(&self, tail_mean: f64) -> bool {
        match self.kind {
            SetKind::Full => true,
            SetKind::Empty => false,
            _ => tail_mean < self.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathConfig {
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub record_words: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            steps: DEFAULT_STEPS,
            paths: DEFAULT_PATHS,
            seed: 0,
            record_words: true,
        }
    }
}

impl PathConfig {
    fn with_seed(self, seed: u64) -> Self {
        PathConfig { seed, ..self }
    }

    /// Number of final states averaged for the tail distance.
    pub fn tail_len(&self) -> usize {
        self.steps.div_ceil(4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub start: Vec<f64>,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub final_states: Vec<Vec<f64>>,
    /// Digit indices, empty unless requested.
    pub words: Vec<Vec<u32>>,
    /// Bit `k` set when the path's tail is within tolerance of set `k`.
    pub membership: Vec<u64>,
    pub set_names: Vec<String>,
    /// Largest `|sum_l W_B(sigma_l y) - 1|` met along the way.
    pub max_partition_defect: f64,
}

impl PathEnsemble {
    /// First set the path converges to.
    pub fn classification(&self, path: usize) -> Option<usize> {
        let m = self.membership[path];
        (m != 0).then(|| m.trailing_zeros() as usize)
    }

    pub fn count_in(&self, set: usize) -> usize {
        self.membership.iter().filter(|&&m| m >> set & 1 == 1).count()
    }

    pub fn count_any(&self) -> usize {
        self.membership.iter().filter(|&&m| m != 0).count()
    }

    pub fn count_multiple(&self) -> usize {
        self.membership.iter().filter(|&&m| m.count_ones() > 1).count()
    }
}

/// A proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn proportion(hits: usize, n: usize) -> Estimate {
        let p = hits as f64 / n as f64;
        Estimate {
            value: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
            n,
        }
    }

    pub fn exact(value: f64) -> Estimate {
        Estimate { value, stderr: 0.0, n: 0 }
    }

    /// `|value - target| <= 3 stderr` up to [`STAT_SLACK`].
    pub fn within_3sigma(&self, target: f64) -> bool {
        (self.value - target).abs() <= 3.0 * self.stderr + STAT_SLACK
    }
}

struct Walker {
    transform: MeasureTransform<f64>,
    kernel: TransitionKernel,
}

impl Walker {
    fn new(t: &Triple) -> Self {
        let transform = MeasureTransform::from_triple(t);
        let kernel = TransitionKernel::new(&transform, t.l().vectors());
        Walker { transform, kernel }
    }
}

/// Draws `cfg.paths` paths of `cfg.steps` transitions from `x`, choosing `l`
/// with probability `W_B(sigma_l y)` by inverse CDF in digit order.
pub fn simulate_paths(x: &[f64], t: &Triple, sets: &[InvariantSetSpec], cfg: &PathConfig) -> Result<PathEnsemble> {
    if cfg.steps == 0 || cfg.paths == 0 {
        return Err(Error::InvalidParameter("steps and paths must be at least 1".into()));
    }
    if sets.len() > 64 {
        return Err(Error::InvalidParameter("at most 64 invariant sets per ensemble".into()));
    }
    if x.len() != t.dim() {
        return Err(Error::DimensionMismatch {
            what: "start point",
            expected: t.dim(),
            found: x.len(),
        });
    }
    let walker = Walker::new(t);
    let n = t.n();
    let tail_from = cfg.steps - cfg.tail_len();
    let chunks = cfg.paths.div_ceil(PATH_CHUNK);
    type Chunk = (Vec<Vec<f64>>, Vec<Vec<u32>>, Vec<u64>, f64);
    let parts: Vec<Chunk> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Chunk> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64);
            let len = PATH_CHUNK.min(cfg.paths - c * PATH_CHUNK);
            let mut states = vec![vec![0.0; x.len()]; n];
            let mut weights = vec![0.0; n];
            let mut finals = Vec::with_capacity(len);
            let mut words = Vec::with_capacity(if cfg.record_words { len } else { 0 });
            let mut member = Vec::with_capacity(len);
            let mut defect: f64 = 0.0;
            let mut dist = vec![0.0; sets.len()];
            let mut scratch = walker.kernel.scratch();
            for _ in 0..len {
                let mut y = x.to_vec();
                let mut word = Vec::with_capacity(if cfg.record_words { cfg.steps } else { 0 });
                dist.iter_mut().for_each(|v| *v = 0.0);
                for step in 0..cfg.steps {
                    walker.kernel.step_with(&walker.transform, &y, &mut scratch, &mut states, &mut weights);
                    let total: f64 = weights.iter().sum();
                    if weights.iter().all(|&w| w < DEGENERATE_WEIGHT) {
                        return Err(Error::DegenerateWeights { state: y });
                    }
                    defect = defect.max((total - 1.0).abs());
                    let u = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = n - 1;
                    for (i, w) in weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    // Never land on a zero-weight branch through rounding at the end.
                    while weights[pick] == 0.0 && pick > 0 {
                        pick -= 1;
                    }
                    y.copy_from_slice(&states[pick]);
                    if cfg.record_words {
                        word.push(pick as u32);
                    }
                    if step >= tail_from {
                        for (d, s) in dist.iter_mut().zip(sets) {
                            *d += s.distance(&y);
                        }
                    }
                }
                let tail = cfg.tail_len() as f64;
                let mask = sets
                    .iter()
                    .zip(&dist)
                    .enumerate()
                    .fold(0u64, |m, (k, (s, d))| if s.accepts(d / tail) { m | 1 << k } else { m });
                finals.push(y);
                if cfg.record_words {
                    words.push(word);
                }
                member.push(mask);
            }
            Ok((finals, words, member, defect))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ens = PathEnsemble {
        start: x.to_vec(),
        steps: cfg.steps,
        paths: cfg.paths,
        seed: cfg.seed,
        final_states: Vec::with_capacity(cfg.paths),
        words: Vec::new(),
        membership: Vec::with_capacity(cfg.paths),
        set_names: sets.iter().map(|s| s.name.clone()).collect(),
        max_partition_defect: 0.0,
    };
    for (f, w, m, d) in parts {
        ens.final_states.extend(f);
        ens.words.extend(w);
        ens.membership.extend(m);
        ens.max_partition_defect = ens.max_partition_defect.max(d);
    }
    Ok(ens)
}

/// Empirical frequency of each first digit.
pub fn first_step_frequencies(ens: &PathEnsemble, n: usize) -> Vec<Estimate> {
    let mut counts = vec![0usize; n];
    for w in &ens.words {
        if let Some(&l) = w.first() {
            counts[l as usize] += 1;
        }
    }
    counts.iter().map(|&c| Estimate::proportion(c, ens.words.len())).collect()
}

/// `h_F(x) = P_x(N(F))`, the fraction of paths whose tails stay near `F`.
pub fn estimate_hf(x: &[f64], t: &Triple, f: &InvariantSetSpec, cfg: &PathConfig) -> Result<Estimate> {
    match f.kind {
        SetKind::Full => return Ok(Estimate::exact(1.0)),
        SetKind::Empty => return Ok(Estimate::exact(0.0)),
        _ => {}
    }
    let cfg = PathConfig {
        record_words: false,
        ..*cfg
    };
    let ens = simulate_paths(x, t, std::slice::from_ref(f), &cfg)?;
    Ok(Estimate::proportion(ens.count_in(0), ens.paths))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuelleTerm {
    pub digit: Vec<i64>,
    pub weight: f64,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuelleReport {
    pub x: Vec<f64>,
    pub h_x: Estimate,
    pub terms: Vec<RuelleTerm>,
    /// `|sum_l W_B(sigma_l x) h(sigma_l x) - h(x)|`.
    pub residual: f64,
    /// Combined standard error of the two sides.
    pub sigma: f64,
    pub pass: bool,
}

fn derived_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Checks `sum_l W_B(sigma_l x) h_F(sigma_l x) = h_F(x)` with independent
/// ensembles on both sides; branches of zero weight are not simulated.
pub fn ruelle_residual(x: &[f64], t: &Triple, f: &InvariantSetSpec, cfg: &PathConfig) -> Result<RuelleReport> {
    let walker = Walker::new(t);
    let mut states = vec![vec![0.0; x.len()]; t.n()];
    let mut weights = vec![0.0; t.n()];
    walker.kernel.step(&walker.transform, x, &mut states, &mut weights);
    let h_x = estimate_hf(x, t, f, &cfg.with_seed(derived_seed(cfg.seed, 0)))?;
    let mut terms = Vec::with_capacity(t.n());
    for (i, (y, &w)) in states.iter().zip(&weights).enumerate() {
        let estimate = if w < DEGENERATE_WEIGHT {
            Estimate::exact(0.0)
        } else {
            estimate_hf(y, t, f, &cfg.with_seed(derived_seed(cfg.seed, i as u64 + 1)))?
        };
        terms.push(RuelleTerm {
            digit: t.l().vectors()[i].clone(),
            weight: w,
            estimate,
        });
    }
    let lhs: f64 = terms.iter().map(|term| term.weight * term.estimate.value).sum();
    let var: f64 = terms.iter().map(|term| (term.weight * term.estimate.stderr).powi(2)).sum::<f64>()
        + h_x.stderr.powi(2);
    let residual = (lhs - h_x.value).abs();
    let sigma = var.sqrt();
    Ok(RuelleReport {
        x: x.to_vec(),
        h_x,
        terms,
        residual,
        sigma,
        pass: residual <= 3.0 * sigma + STAT_SLACK,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub x: Vec<f64>,
    /// `P_x` of the union of the `N(F_k)`.
    pub mass: Estimate,
    pub per_set: Vec<Estimate>,
    pub unclassified: f64,
    /// Paths attributed to more than one set (zero for disjoint sets).
    pub overlaps: usize,
    pub pass: bool,
}

/// Empirical `P_x(union_k N(F_k))`, expected to be 1 when the sets contain
/// every minimal invariant set.
pub fn total_mass_check(x: &[f64], t: &Triple, sets: &[InvariantSetSpec], cfg: &PathConfig) -> Result<MassReport> {
    if sets.iter().any(|s| s.kind == SetKind::Full) {
        return Ok(MassReport {
            x: x.to_vec(),
            mass: Estimate::exact(1.0),
            per_set: sets
                .iter()
                .map(|s| Estimate::exact(if s.kind == SetKind::Full { 1.0 } else { f64::NAN }))
                .collect(),
            unclassified: 0.0,
            overlaps: 0,
            pass: true,
        });
    }
    let cfg = PathConfig {
        record_words: false,
        ..*cfg
    };
    let ens = simulate_paths(x, t, sets, &cfg)?;
    let mass = Estimate::proportion(ens.count_any(), ens.paths);
    Ok(MassReport {
        x: x.to_vec(),
        mass,
        per_set: (0..sets.len()).map(|k| Estimate::proportion(ens.count_in(k), ens.paths)).collect(),
        unclassified: 1.0 - mass.value,
        overlaps: ens.count_multiple(),
        pass: mass.within_3sigma(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::wb_eval;

    fn example() -> Triple {
        Triple::from_parts(
            &[vec![4, 0], vec![0, 4]],
            vec![vec![0, 0], vec![0, 2], vec![1, 4], vec![1, 6]],
            vec![vec![0, 0], vec![2, 0], vec![2, 1], vec![0, 5]],
        )
        .unwrap()
    }

    fn small(seed: u64) -> PathConfig {
        PathConfig {
            steps: 40,
            paths: 5000,
            seed,
            record_words: true,
        }
    }

    #[test]
    fn line_is_absorbing() {
        let t = example();
        let line = InvariantSetSpec::translate("R x {0}", 1, &[0.0]);
        let ens = simulate_paths(&[0.3, 0.0], &t, std::slice::from_ref(&line), &small(1)).unwrap();
        for w in &ens.words {
            assert!(w.iter().all(|&l| l < 2));
        }
        assert_eq!(ens.count_in(0), ens.paths);
        assert!(ens.max_partition_defect < 1e-12);
    }

    #[test]
    fn single_digit_is_deterministic() {
        let t = Triple::from_parts(&[vec![3]], vec![vec![0]], vec![vec![0]]).unwrap();
        let ens = simulate_paths(&[0.9], &t, &[], &small(2)).unwrap();
        assert!(ens.words.iter().all(|w| w.iter().all(|&l| l == 0)));
        assert!(ens.final_states.iter().all(|s| s == &ens.final_states[0]));
    }

    #[test]
    fn reproducible() {
        let t = example();
        let a = simulate_paths(&[0.2, 0.7], &t, &[], &small(7)).unwrap();
        let b = simulate_paths(&[0.2, 0.7], &t, &[], &small(7)).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&[0.2, 0.7], &t, &[], &small(8)).unwrap();
        assert_ne!(a.words, c.words);
    }

    #[test]
    fn first_step_matches_weights() {
        let t = example();
        let x = [0.37, 0.61];
        let ens = simulate_paths(&x, &t, &[], &PathConfig { paths: 100_000, steps: 1, ..small(3) }).unwrap();
        let freq = first_step_frequencies(&ens, 4);
        for (i, f) in freq.iter().enumerate() {
            let w = wb_eval(t.b(), &t.l_ifs().apply_map(i, &x).unwrap());
            assert!(f.within_3sigma(w), "{i}: {f:?} vs {w}");
        }
    }

    #[test]
    fn absorption_into_line() {
        let t = example();
        let line = InvariantSetSpec::translate("R x {0}", 1, &[0.0]);
        for (k, x) in [[0.1, 0.9], [0.5, 0.3], [-0.4, 1.2]].iter().enumerate() {
            let h = estimate_hf(x, &t, &line, &small(10 + k as u64)).unwrap();
            assert!(h.within_3sigma(1.0), "{h:?}");
        }
        assert_eq!(estimate_hf(&[0.1, 0.2], &t, &InvariantSetSpec::full(), &small(0)).unwrap().value, 1.0);
    }

    #[test]
    fn quarter_cantor_absorbs_at_zero() {
        let t = Triple::from_parts(&[vec![4]], vec![vec![0], vec![1]], vec![vec![0], vec![2]]).unwrap();
        let zero = InvariantSetSpec::cycle("trivial", &[vec![crate::scalar::int(0)]]);
        let h = estimate_hf(&[0.45], &t, &zero, &small(4)).unwrap();
        assert!(h.within_3sigma(1.0), "{h:?}");
    }

    #[test]
    fn ruelle_for_trivial_sets() {
        let t = example();
        let full = ruelle_residual(&[0.3, 0.8], &t, &InvariantSetSpec::full(), &small(5)).unwrap();
        assert!(full.residual < 1e-12 && full.pass);
        let empty = ruelle_residual(&[0.3, 0.8], &t, &InvariantSetSpec::empty(), &small(5)).unwrap();
        assert_eq!(empty.residual, 0.0);
        let line = InvariantSetSpec::translate("R x {0}", 1, &[0.0]);
        let r = ruelle_residual(&[0.3, 0.8], &t, &line, &small(6)).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn total_mass() {
        let t = example();
        let line = InvariantSetSpec::translate("R x {0}", 1, &[0.0]);
        let m = total_mass_check(&[0.6, 0.4], &t, &[line], &small(9)).unwrap();
        assert!(m.pass && m.overlaps == 0, "{m:?}");
        let full = total_mass_check(&[0.6, 0.4], &t, &[InvariantSetSpec::full()], &small(9)).unwrap();
        assert_eq!(full.mass.value, 1.0);
    }

    #[test]
    fn distances() {
        let c = SetKind::Cycle(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(c.distance(&[0.9, 1.2]), 0.19999999999999996);
        let tr = SetKind::Translate { r: 1, y0: vec![0.5] };
        assert_eq!(tr.distance(&[100.0, 0.25]), 0.25);
        assert_eq!(SetKind::Union(vec![c, tr]).distance(&[5.0, 0.5]), 0.0);
        assert_eq!(SetKind::Empty.distance(&[0.0]), f64::INFINITY);
    }
}
