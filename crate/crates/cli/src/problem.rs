use std::fmt;
use std::path::Path;
use std::str::FromStr;

use affine_spectra::fourier::DigitTree;
use affine_spectra::paths::InvariantSetSpec;
use affine_spectra::scalar::rat_vec_to_f64;
use affine_spectra::{
    DigitRole, DigitSet, Error as CoreError, ExpandingMatrix, IntMatrix, IntVec, Matrix, RatVec,
    Rational, Triple, UnimodularMatrix,
};
use serde::{Deserialize, Serialize};

/// Problem file as written on disk. Matrices are flat and row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dimension: usize,
    #[serde(rename = "R")]
    pub r: Vec<i64>,
    #[serde(rename = "B")]
    pub b: Vec<IntVec>,
    #[serde(rename = "L")]
    pub l: Vec<IntVec>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<Analysis>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analysis {
    /// Dimension `r` of the invariant subspace `R^r x {0}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace_dim: Option<usize>,
    /// Offset of the translate, as "p/q" strings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<Lambda1File>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_depth: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1_depth: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product_depth: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_unitary: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_certify: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant_sets: Option<Vec<SetFile>>,
}

/// Generator of `Lambda_1`: scaling (flat, row-major), digits and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambda1File {
    pub scale: Vec<i64>,
    pub digits: Vec<IntVec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetFile {
    pub name: String,
    /// "cycle", "translate" or "full".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug)]
pub enum ProblemError {
    Io(String, std::io::Error),
    Parse(serde_json::Error),
    Validation(String),
}

impl fmt::Display for ProblemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemError::Io(path, e) => write!(f, "cannot read {path}: {e}"),
            ProblemError::Parse(e) => write!(f, "parse error: {e}"),
            ProblemError::Validation(msg) => write!(f, "validation error: {msg}"),
        }
    }
}

impl std::error::Error for ProblemError {}

fn invalid(msg: impl Into<String>) -> ProblemError {
    ProblemError::Validation(msg.into())
}

/// A problem file after validation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub file: ProblemFile,
    pub triple: Triple,
    pub m: Option<UnimodularMatrix>,
    pub subspace_dim: Option<usize>,
    pub y0: Option<RatVec>,
    pub lambda1: Option<DigitTree>,
    pub sets: Option<Vec<InvariantSetSpec>>,
}

impl Problem {
    pub fn analysis(&self) -> Analysis {
        self.file.analysis.clone().unwrap_or_default()
    }

    pub fn name(&self) -> &str {
        self.file.name.as_deref().unwrap_or("unnamed")
    }

    /// The file with every rational rewritten in lowest terms.
    pub fn canonical(&self) -> ProblemFile {
        let mut file = self.file.clone();
        if let Some(a) = file.analysis.as_mut() {
            a.y0 = a.y0.as_ref().map(|v| canonical_strings(v));
            if let Some(l) = a.lambda1.as_mut() {
                l.seed = l
                    .seed
                    .as_ref()
                    .map(|s| s.iter().map(|v| canonical_strings(v)).collect());
            }
            if let Some(sets) = a.invariant_sets.as_mut() {
                for s in sets {
                    s.y0 = s.y0.as_ref().map(|v| canonical_strings(v));
                    s.points = s
                        .points
                        .as_ref()
                        .map(|p| p.iter().map(|v| canonical_strings(v)).collect());
                }
            }
        }
        file
    }
}

fn canonical_strings(v: &[String]) -> Vec<String> {
    v.iter()
        .map(|s| {
            parse_rational(s)
                .map(|q| q.to_string())
                .unwrap_or_else(|_| s.clone())
        })
        .collect()
}

pub fn parse_rational(s: &str) -> Result<Rational, ProblemError> {
    let t = s.trim();
    let q = Rational::from_str(t)
        .map_err(|_| invalid(format!("'{s}' is not a rational of the form p/q")))?;
    Ok(q)
}

pub fn parse_rational_vec(v: &[String], len: usize, what: &str) -> Result<RatVec, ProblemError> {
    if v.len() != len {
        return Err(invalid(format!(
            "{what} has {} entries, expected {len}",
            v.len()
        )));
    }
    v.iter().map(|s| parse_rational(s)).collect()
}

fn square(flat: &[i64], d: usize, what: &str) -> Result<IntMatrix, ProblemError> {
    if flat.len() != d * d {
        return Err(invalid(format!(
            "{what} has {} entries; a {d}x{d} matrix needs {} in row-major order",
            flat.len(),
            d * d
        )));
    }
    Ok(Matrix::new(d, d, flat.to_vec()))
}

fn digits(role: DigitRole, vectors: &[IntVec], d: usize) -> Result<DigitSet, ProblemError> {
    if vectors.is_empty() {
        return Err(invalid(format!("digit set {role} is empty")));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(invalid(format!(
            "digit {v:?} in {role} does not have dimension {d}"
        )));
    }
    DigitSet::new(role, vectors.to_vec()).map_err(|e| match e {
        CoreError::MissingZero { role } => invalid(format!(
            "0 ∈ {role} required: the digit set {role} must contain the zero vector"
        )),
        other => invalid(other.to_string()),
    })
}

pub fn parse_problem(path: impl AsRef<Path>) -> Result<Problem, ProblemError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProblemError::Io(path.display().to_string(), e))?;
    parse_problem_str(&text)
}

pub fn parse_problem_str(text: &str) -> Result<Problem, ProblemError> {
    let file: ProblemFile = serde_json::from_str(text).map_err(ProblemError::Parse)?;
    validate(file)
}

pub fn validate(file: ProblemFile) -> Result<Problem, ProblemError> {
    let d = file.dimension;
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let r = ExpandingMatrix::new(square(&file.r, d, "R")?).map_err(|e| match e {
        CoreError::NotExpanding { min_modulus } => invalid(format!(
            "R is not expanding: minimum eigenvalue modulus {min_modulus} is not > 1, so the maps tau_b are not contractions"
        )),
        CoreError::Singular => invalid("R is not expanding: it is singular"),
        other => invalid(format!("R is not expanding: {other}")),
    })?;
    let b = digits(DigitRole::B, &file.b, d)?;
    let l = digits(DigitRole::L, &file.l, d)?;
    if b.len() != l.len() {
        return Err(invalid(format!(
            "#B = #L required: B has {} digits but L has {}",
            b.len(),
            l.len()
        )));
    }
    let triple = Triple::new(r, b, l).map_err(|e| invalid(e.to_string()))?;
    let m = match &file.m {
        Some(flat) => Some(
            UnimodularMatrix::new(square(flat, d, "M")?)
                .map_err(|e| invalid(format!("M must be in GL_d(Z): {e}")))?,
        ),
        None => None,
    };
    let analysis = file.analysis.clone().unwrap_or_default();
    let subspace_dim = analysis.subspace_dim;
    if let Some(k) = subspace_dim {
        if k == 0 || k >= d {
            return Err(invalid(format!("subspace_dim must lie in 1..{d}, got {k}")));
        }
    }
    let y0 = match (&analysis.y0, subspace_dim) {
        (Some(v), Some(k)) => Some(parse_rational_vec(v, d - k, "y0")?),
        (Some(_), None) => return Err(invalid("y0 given without subspace_dim")),
        (None, _) => None,
    };
    let lambda1 = match (&analysis.lambda1, subspace_dim) {
        (Some(spec), Some(k)) => Some(lambda1_tree(spec, k)?),
        (Some(_), None) => return Err(invalid("lambda1 given without subspace_dim")),
        (None, _) => None,
    };
    let sets = match &analysis.invariant_sets {
        Some(list) => Some(invariant_sets(list, d)?),
        None => None,
    };
    Ok(Problem {
        file,
        triple,
        m,
        subspace_dim,
        y0,
        lambda1,
        sets,
    })
}

fn lambda1_tree(spec: &Lambda1File, k: usize) -> Result<DigitTree, ProblemError> {
    let s = square(&spec.scale, k, "lambda1.scale")?;
    ExpandingMatrix::new(s.clone())
        .map_err(|e| invalid(format!("lambda1.scale is not expanding: {e}")))?;
    if spec.digits.is_empty() {
        return Err(invalid("lambda1.digits is empty"));
    }
    if let Some(v) = spec.digits.iter().find(|v| v.len() != k) {
        return Err(invalid(format!(
            "lambda1 digit {v:?} does not have dimension {k}"
        )));
    }
    let seed = match &spec.seed {
        Some(points) => points
            .iter()
            .map(|p| parse_rational_vec(p, k, "lambda1.seed point"))
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![vec![Rational::from_integer(0.into()); k]],
    };
    Ok(DigitTree::new(s, spec.digits.clone(), seed))
}

pub fn invariant_sets(list: &[SetFile], d: usize) -> Result<Vec<InvariantSetSpec>, ProblemError> {
    list.iter()
        .map(|s| {
            let spec = match s.kind.as_str() {
                "cycle" => {
                    let points = s
                        .points
                        .as_ref()
                        .ok_or_else(|| {
                            invalid(format!("set '{}' of kind cycle needs points", s.name))
                        })?
                        .iter()
                        .map(|p| parse_rational_vec(p, d, "cycle point"))
                        .collect::<Result<Vec<_>, _>>()?;
                    InvariantSetSpec::cycle(s.name.clone(), &points)
                }
                "translate" => {
                    let r = s.r.ok_or_else(|| {
                        invalid(format!("set '{}' of kind translate needs r", s.name))
                    })?;
                    if r >= d {
                        return Err(invalid(format!("set '{}': r must be below {d}", s.name)));
                    }
                    let y0 = match &s.y0 {
                        Some(v) => parse_rational_vec(v, d - r, "translate y0")?,
                        None => vec![Rational::from_integer(0.into()); d - r],
                    };
                    InvariantSetSpec::translate(s.name.clone(), r, &rat_vec_to_f64(&y0))
                }
                "full" => InvariantSetSpec::full(),
                other => return Err(invalid(format!("unknown set kind '{other}'"))),
            };
            Ok(match s.tol {
                Some(tol) => spec.with_tol(tol),
                None => spec,
            })
        })
        .collect()
}

pub fn read_sets(path: impl AsRef<Path>, d: usize) -> Result<Vec<InvariantSetSpec>, ProblemError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProblemError::Io(path.display().to_string(), e))?;
    let list: Vec<SetFile> = serde_json::from_str(&text).map_err(ProblemError::Parse)?;
    invariant_sets(&list, d)
}

/// The shipped problem for the two-dimensional example that violates reducibility.
pub const EXAMPLE51: &str = include_str!("../problems/example51.json");

#[cfg(test)]
mod tests {
    use super::*;

    fn file(r: Vec<i64>, b: Vec<IntVec>, l: Vec<IntVec>) -> ProblemFile {
        ProblemFile {
            name: None,
            dimension: b[0].len(),
            r,
            b,
            l,
            m: None,
            analysis: None,
        }
    }

    fn message(f: ProblemFile) -> String {
        validate(f).unwrap_err().to_string()
    }

    #[test]
    fn shipped_example_parses() {
        let p = parse_problem_str(EXAMPLE51).unwrap();
        assert_eq!(p.triple.n(), 4);
        assert_eq!(p.subspace_dim, Some(1));
        assert!(p.m.is_some());
    }

    #[test]
    fn identity_is_not_expanding() {
        let msg = message(file(vec![1, 0, 0, 1], vec![vec![0, 0]], vec![vec![0, 0]]));
        assert!(msg.contains("not expanding"), "{msg}");
    }

    #[test]
    fn zero_digit_required() {
        let msg = message(file(
            vec![4],
            vec![vec![1], vec![2]],
            vec![vec![0], vec![1]],
        ));
        assert!(msg.contains("0 ∈ B required"), "{msg}");
        let msg = message(file(
            vec![4],
            vec![vec![0], vec![2]],
            vec![vec![1], vec![3]],
        ));
        assert!(msg.contains("0 ∈ L required"), "{msg}");
    }

    #[test]
    fn cardinalities_must_agree() {
        let msg = message(file(vec![4], vec![vec![0], vec![2]], vec![vec![0]]));
        assert!(msg.contains("#B = #L"), "{msg}");
    }

    #[test]
    fn malformed_matrix() {
        let msg = message(file(vec![4, 0, 0], vec![vec![0, 0]], vec![vec![0, 0]]));
        assert!(msg.contains("row-major"), "{msg}");
        let mut f = file(vec![4, 0, 0, 4], vec![vec![0, 0]], vec![vec![0, 0]]);
        f.m = Some(vec![4, -1, 0, 1]);
        assert!(message(f).contains("GL_d(Z)"));
    }

    #[test]
    fn rationals() {
        assert_eq!(parse_rational("6/4").unwrap().to_string(), "3/2");
        assert_eq!(parse_rational(" -2 ").unwrap().to_string(), "-2");
        assert!(parse_rational("0.5").is_err());
    }
}
