use affine_spectra::cycles::{Candidate, CycleSearch, WORD_BUDGET};
use affine_spectra::fourier::{
    regular_grid, CertificationReport, CertifyConfig, DigitTree, ProductDepth, Provenance,
    CERTIFY_TOL, PRODUCT_TOL,
};
use affine_spectra::hadamard::UNITARY_TOL;
use affine_spectra::lattice::conjugate_triple;
use affine_spectra::paths::{
    total_mass_check, InvariantSetSpec, PathConfig, DEFAULT_PATHS, DEFAULT_STEPS,
};
use affine_spectra::scalar::{int, rat_vec_to_f64};
use affine_spectra::subspace::{
    candidate_translates, check_theorem_conditions, ConditionConfig, ConditionReport,
    EscapeOutcome, EscapeTrace, TranslateCheck, SPECTRUM_BUDGET,
};
use affine_spectra::{
    check_invariant_translate, decompose, dual_lattice, enumerate_wb_cycles, hadamard_matrix,
    is_hadamard_triple, parseval_certify, subspace_spectrum, trace_escape, Complex64, Cycle,
    MeasureTransform, RatVec, SpectrumApprox, Triple,
};
use anyhow::{bail, Context};
use clap::Args;
use serde_json::{json, Value};

use crate::problem::Problem;
use crate::report::{rat_vec, rat_vecs, status, Mode, Recorder, RunReport, Status};

pub const DEFAULT_SPECTRUM_DEPTH: u32 = 8;
pub const DEFAULT_LAMBDA1_DEPTH: u32 = 4;
pub const DEFAULT_CYCLE_MAX_LEN: usize = 4;
pub const DEFAULT_PRECISION: usize = 12;
/// Points per axis of the pipeline's Parseval grid on `[0,1]^d`.
pub const PIPELINE_GRID: usize = 5;
/// Starting points of the pipeline's total-mass check.
pub const MASS_POINTS: usize = 3;
pub const ESCAPE_STEPS: usize = 10;
pub const BOX_BUDGET: usize = 1 << 20;

/// Flags that override the problem file's analysis block.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub tol_unitary: Option<f64>,
    #[arg(long, global = true)]
    pub tol_certify: Option<f64>,
    /// Number of product factors, or "auto".
    #[arg(long, global = true, value_parser = parse_product_depth)]
    pub product_depth: Option<ProductDepth>,
    #[arg(long, global = true)]
    pub spectrum_depth: Option<u32>,
    #[arg(long, global = true)]
    pub lambda1_depth: Option<u32>,
    #[arg(long, global = true)]
    pub cycle_max_len: Option<usize>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Decimal places in CSV output.
    #[arg(long, global = true)]
    pub precision: Option<usize>,
}

fn parse_product_depth(s: &str) -> Result<ProductDepth, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(ProductDepth::Auto { tol: PRODUCT_TOL });
    }
    s.parse::<u32>()
        .map(ProductDepth::Fixed)
        .map_err(|_| format!("'{s}' is neither a factor count nor \"auto\""))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub tol_unitary: f64,
    pub tol_certify: f64,
    pub product_depth: ProductDepth,
    pub spectrum_depth: u32,
    pub lambda1_depth: u32,
    pub cycle_max_len: usize,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub precision: usize,
}

impl Settings {
    pub fn resolve(problem: &Problem, o: &Overrides) -> Settings {
        let a = problem.analysis();
        Settings {
            tol_unitary: o.tol_unitary.or(a.tol_unitary).unwrap_or(UNITARY_TOL),
            tol_certify: o.tol_certify.or(a.tol_certify).unwrap_or(CERTIFY_TOL),
            product_depth: o
                .product_depth
                .or(a.product_depth.map(ProductDepth::Fixed))
                .unwrap_or_default(),
            spectrum_depth: o
                .spectrum_depth
                .or(a.spectrum_depth)
                .unwrap_or(DEFAULT_SPECTRUM_DEPTH),
            lambda1_depth: o
                .lambda1_depth
                .or(a.lambda1_depth)
                .unwrap_or(DEFAULT_LAMBDA1_DEPTH),
            cycle_max_len: o
                .cycle_max_len
                .or(a.cycle_max_len)
                .unwrap_or(DEFAULT_CYCLE_MAX_LEN),
            paths: o.paths.or(a.paths).unwrap_or(DEFAULT_PATHS),
            steps: o.steps.or(a.steps).unwrap_or(DEFAULT_STEPS),
            seed: o.seed.or(a.seed).unwrap_or(0),
            precision: o.precision.unwrap_or(DEFAULT_PRECISION),
        }
    }

    pub fn certify(&self) -> CertifyConfig {
        CertifyConfig {
            tol: self.tol_certify,
            product: self.product_depth,
            ..CertifyConfig::default()
        }
    }

    pub fn conditions(&self) -> ConditionConfig {
        ConditionConfig {
            certify: self.certify(),
            unitary_tol: self.tol_unitary,
            seed: self.seed,
            ..ConditionConfig::default()
        }
    }

    pub fn path_config(&self, seed: u64) -> PathConfig {
        PathConfig {
            steps: self.steps,
            paths: self.paths,
            seed,
            record_words: false,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tol_unitary": self.tol_unitary,
            "tol_certify": self.tol_certify,
            "product_depth": match self.product_depth {
                ProductDepth::Fixed(k) => json!(k),
                ProductDepth::Auto { tol } => json!({ "auto": tol }),
            },
            "spectrum_depth": self.spectrum_depth,
            "lambda1_depth": self.lambda1_depth,
            "cycle_max_len": self.cycle_max_len,
            "paths": self.paths,
            "steps": self.steps,
            "seed": self.seed,
            "precision": self.precision,
        })
    }
}

/// Seed of the `k`-th independent stream derived from `seed`.
pub fn derived_seed(seed: u64, k: u64) -> u64 {
    seed ^ k.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

pub fn inputs(problem: &Problem, settings: &Settings) -> Value {
    json!({
        "problem": serde_json::to_value(problem.canonical()).expect("problem serializes"),
        "settings": settings.to_json(),
    })
}

pub fn zero_offset(problem: &Problem, r: usize) -> RatVec {
    problem
        .y0
        .clone()
        .unwrap_or_else(|| vec![int(0); problem.triple.dim() - r])
}

/// `Lambda_1` from the problem file, or the digits `L_1(l_2)` over the fixed
/// digit with scaling `S_1` and seed `{0}`.
pub fn lambda1_tree(
    problem: &Problem,
    r: usize,
    y0: &[affine_spectra::Rational],
) -> anyhow::Result<DigitTree> {
    if let Some(tree) = &problem.lambda1 {
        return Ok(tree.clone());
    }
    let t = &problem.triple;
    let decomp = decompose(t, r)?;
    let fixed = decomp
        .fixed_digit(t.l(), y0)
        .context("no digit of L fixes the translate, so Lambda_1 has no default")?;
    Ok(DigitTree::new(
        decomp.s1.clone(),
        decomp.l1_over(t.l(), &fixed),
        vec![vec![int(0); r]],
    ))
}

pub struct SpectrumBuild {
    pub spectrum: Option<SpectrumApprox>,
    pub conditions: Option<ConditionReport>,
    pub source: &'static str,
}

/// The subspace spectrum when the problem names an invariant subspace, otherwise
/// the spectrum generated by `L` from the trivial cycle.
pub fn build_spectrum(problem: &Problem, s: &Settings) -> anyhow::Result<SpectrumBuild> {
    let t = &problem.triple;
    match problem.subspace_dim {
        Some(r) => {
            let y0 = zero_offset(problem, r);
            let tree = lambda1_tree(problem, r, &y0)?;
            let report =
                check_theorem_conditions(t, r, &y0, &tree, s.lambda1_depth, &s.conditions())?;
            let spectrum = if report.pass {
                Some(subspace_spectrum(
                    t,
                    &report,
                    &tree,
                    s.spectrum_depth,
                    SPECTRUM_BUDGET,
                )?)
            } else {
                None
            };
            Ok(SpectrumBuild {
                spectrum,
                conditions: Some(report),
                source: "subspace",
            })
        }
        None => {
            let tree = DigitTree::new(
                t.s().matrix().clone(),
                t.l().vectors().to_vec(),
                vec![vec![int(0); t.dim()]],
            );
            Ok(SpectrumBuild {
                spectrum: Some(tree.generate(
                    s.spectrum_depth,
                    Provenance::Digits,
                    SPECTRUM_BUDGET,
                )?),
                conditions: None,
                source: "digits",
            })
        }
    }
}

pub fn hadamard_json(t: &Triple, tol: f64, precision: usize, show_matrix: bool) -> (bool, Value) {
    let (ok, defect) = is_hadamard_triple(t, tol);
    let mut v = json!({ "defect": defect, "tol": tol, "accepted": ok, "n": t.n() });
    if show_matrix {
        let h = hadamard_matrix::<f64>(t);
        let rows: Vec<Vec<String>> = h
            .to_rows()
            .iter()
            .map(|row| row.iter().map(|z| complex(z, precision)).collect())
            .collect();
        v["matrix"] = json!(rows);
    }
    (ok, v)
}

pub fn complex(z: &Complex64, precision: usize) -> String {
    let clean = |x: f64| {
        if x.abs() < 0.5 * 10f64.powi(-(precision as i32)) {
            0.0
        } else {
            x
        }
    };
    let (re, im) = (clean(z.re), clean(z.im));
    if im == 0.0 {
        format!("{re:.precision$}")
    } else {
        format!("{re:.precision$}{im:+.precision$}i")
    }
}

pub fn cycle_json(c: &Cycle) -> Value {
    json!({
        "word": c.word,
        "digits": c.digits,
        "points": rat_vecs(&c.points),
        "wb_values": c.wb_values,
        "is_wb": c.is_wb,
    })
}

pub fn candidate_json(c: &Candidate) -> Value {
    json!({
        "point": rat_vec(&c.point),
        "wb": c.wb,
        "successor_wb": c.successor_wb,
        "candidate_successors": c.candidate_successors,
        "forced_orbit": rat_vecs(&c.forced_orbit),
        "on_cycle": c.on_cycle,
    })
}

pub fn search_json(search: &CycleSearch) -> Value {
    json!({
        "max_len": search.max_len,
        "words_examined": search.words_examined,
        "gamma_basis": search.gamma.as_ref().map(|g| rat_vecs(g)),
        "cycles": search.cycles.iter().map(cycle_json).collect::<Vec<_>>(),
        "wb_cycles": search.wb_cycles().len(),
        "candidates": search.candidates.iter().map(candidate_json).collect::<Vec<_>>(),
        "rejected": search.rejected().iter().map(|c| rat_vec(&c.point)).collect::<Vec<_>>(),
    })
}

pub fn translate_check_json(c: &TranslateCheck) -> Value {
    json!({
        "r": c.r,
        "y0": rat_vec(&c.y0),
        "invariant": c.invariant,
        "branches": c.branches.iter().map(|b| json!({
            "digit": b.digit,
            "image": rat_vec(&b.image),
            "kind": format!("{:?}", b.kind),
        })).collect::<Vec<_>>(),
    })
}

pub fn escape_json(trace: &EscapeTrace) -> Value {
    let outcome = match &trace.outcome {
        EscapeOutcome::Escaped { step } => json!({ "escaped": step }),
        EscapeOutcome::Periodic => json!("periodic"),
        EscapeOutcome::Undecided => json!("undecided"),
    };
    json!({
        "chain": trace.chain.iter().map(|s| json!({ "l2": s.l2, "y": rat_vec(&s.y) })).collect::<Vec<_>>(),
        "outcome": outcome,
    })
}

pub fn conditions_json(rep: &ConditionReport) -> Value {
    json!({
        "r": rep.r,
        "y0": rat_vec(&rep.y0),
        "fixed_digit": rep.fixed_digit,
        "l1": rep.l1,
        "lambda1_depth": rep.lambda1_depth,
        "conditions": rep.conditions.iter().map(|c| json!({
            "name": c.name,
            "status": format!("{:?}", c.status).to_uppercase(),
            "detail": c.detail,
        })).collect::<Vec<_>>(),
        "pass": rep.pass,
    })
}

pub fn spectrum_json(sp: &SpectrumApprox) -> Value {
    json!({
        "depth": sp.depth(),
        "size": sp.len(),
        "words": sp.words().to_string(),
        "repetitions": sp.repetitions().to_string(),
        "nested": sp.is_nested(),
        "integral": sp.is_integral(),
        "levels": sp.levels(),
    })
}

pub fn certification_json(rep: &CertificationReport) -> Value {
    json!({
        "spectrum_depth": rep.spectrum_depth,
        "spectrum_size": rep.spectrum_size,
        "route": format!("{:?}", rep.route),
        "max_product_depth": rep.max_product_depth,
        "max_deviation": rep.max_deviation,
        "tol": rep.tol,
        "contributions": {
            "spectrum_truncation": rep.spectrum_deficit,
            "product_truncation": rep.product_bound,
            "pruned_mass": rep.pruned_mass,
        },
        "monotone": rep.monotone,
        "route_disagreement": rep.route_disagreement,
        "points": rep.points.iter().map(|p| json!({
            "x": p.x,
            "partial_sums": p.partial_sums,
            "deviation": p.deviation,
            "monotone": p.monotone,
        })).collect::<Vec<_>>(),
        "verdict": format!("{:?}", rep.verdict).to_uppercase(),
    })
}

/// The sets whose absorption probabilities should add up to one.
pub fn default_sets(problem: &Problem, search: Option<&CycleSearch>) -> Vec<InvariantSetSpec> {
    if let Some(sets) = &problem.sets {
        return sets.clone();
    }
    let mut sets = Vec::new();
    if let Some(r) = problem.subspace_dim {
        let y0 = zero_offset(problem, r);
        sets.push(InvariantSetSpec::translate(
            format!(
                "R^{r} x {{{}}}",
                y0.iter()
                    .map(|q| q.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            r,
            &rat_vec_to_f64(&y0),
        ));
    }
    if let Some(search) = search {
        for c in search.wb_cycles() {
            if !sets.iter().any(|s| {
                c.points
                    .iter()
                    .all(|p| s.distance(&rat_vec_to_f64(p)) == 0.0)
            }) {
                sets.push(InvariantSetSpec::cycle(
                    format!("cycle {:?}", c.word),
                    &c.points,
                ));
            }
        }
    }
    sets
}

/// Hadamard check, dual lattice, invariant translates, cycles, spectrum,
/// Parseval certification and total mass, in that order.
pub fn run_example51_pipeline(
    problem: &Problem,
    s: &Settings,
    skip_montecarlo: bool,
) -> anyhow::Result<RunReport> {
    let t = &problem.triple;
    let Some(r) = problem.subspace_dim else {
        bail!("the pipeline needs analysis.subspace_dim in the problem file");
    };
    let y0 = zero_offset(problem, r);
    let mut inputs = inputs(problem, s);
    inputs["skip_montecarlo"] = json!(skip_montecarlo);
    let mut rec = Recorder::new("example51", inputs);

    const LATER: [(&str, Mode); 6] = [
        ("dual-lattice", Mode::Deterministic),
        ("invariant-translates", Mode::Deterministic),
        ("cycles", Mode::Deterministic),
        ("spectrum", Mode::Deterministic),
        ("parseval", Mode::Deterministic),
        ("total-mass", Mode::Seeded),
    ];

    let had = rec.run("hadamard", Mode::Deterministic, None, || {
        let (ok, v) = hadamard_json(t, s.tol_unitary, s.precision, true);
        Ok((status(ok), v))
    })?;
    if had == Status::Fail {
        for (name, mode) in LATER {
            rec.skip(name, mode, "Hadamard check failed");
        }
        return Ok(rec.finish("SPECTRAL-EVIDENCE"));
    }

    rec.run("dual-lattice", Mode::Deterministic, None, || {
        Ok(match dual_lattice(t.b()) {
            Ok(g) => (Status::Pass, json!({ "basis": rat_vecs(&g.vectors()) })),
            Err(e) => (Status::Fail, json!({ "error": e.to_string() })),
        })
    })?;

    rec.run("invariant-translates", Mode::Deterministic, None, || {
        let check = check_invariant_translate(t, r, &y0, s.seed)?;
        let mut ok = check.invariant;
        let mut v = json!({ "translate": translate_check_json(&check) });
        if let Some(m) = &problem.m {
            let ct = conjugate_triple(m, t)?;
            let cands = candidate_translates(&ct, r, BOX_BUDGET)?;
            let traces = cands
                .candidates
                .iter()
                .map(|y| trace_escape(&ct, r, y, &cands.candidates, ESCAPE_STEPS))
                .collect::<Result<Vec<_>, _>>()?;
            let all_escaped = traces.iter().all(EscapeTrace::escaped);
            ok &= all_escaped;
            v["conjugated"] = json!({
                "M": m.matrix().to_rows(),
                "B": ct.b().vectors(),
                "L": ct.l().vectors(),
                "candidates": rat_vecs(&cands.candidates),
                "traces": traces.iter().map(escape_json).collect::<Vec<_>>(),
                "all_escaped": all_escaped,
            });
        }
        Ok((status(ok), v))
    })?;

    let mut search = None;
    rec.run("cycles", Mode::Deterministic, None, || {
        let found = enumerate_wb_cycles(t, s.cycle_max_len, WORD_BUDGET)?;
        let translate = InvariantSetSpec::translate("translate", r, &rat_vec_to_f64(&y0));
        let covered = found.wb_cycles().iter().all(|c| {
            c.points
                .iter()
                .all(|p| translate.distance(&rat_vec_to_f64(p)) == 0.0)
        });
        let mut v = search_json(&found);
        v["trivial_only"] = json!(found.wb_cycles().iter().all(|c| c.is_trivial()));
        v["inside_translate"] = json!(covered);
        search = Some(found);
        Ok((status(covered), v))
    })?;

    let mut spectrum = None;
    rec.run("spectrum", Mode::Deterministic, None, || {
        let built = build_spectrum(problem, s)?;
        let mut v = json!({ "source": built.source });
        if let Some(rep) = &built.conditions {
            v["conditions"] = conditions_json(rep);
        }
        if let Some(sp) = &built.spectrum {
            v["spectrum"] = spectrum_json(sp);
        }
        let ok = built.spectrum.is_some();
        spectrum = built.spectrum;
        Ok((status(ok), v))
    })?;

    match &spectrum {
        Some(sp) => {
            rec.run("parseval", Mode::Deterministic, None, || {
                let transform = MeasureTransform::from_triple(t);
                let grid = regular_grid(t.dim(), PIPELINE_GRID, 0.0, 1.0);
                let rep = parseval_certify(&transform, sp, &grid, &s.certify())?;
                let ok = rep.verdict == affine_spectra::fourier::Verdict::Pass && rep.monotone;
                Ok((status(ok), certification_json(&rep)))
            })?;
        }
        None => rec.skip("parseval", Mode::Deterministic, "no spectrum"),
    }

    if skip_montecarlo {
        rec.skip("total-mass", Mode::Seeded, "--skip-montecarlo");
    } else {
        let sets = default_sets(problem, search.as_ref());
        rec.run("total-mass", Mode::Seeded, Some(s.seed), || {
            let xs = affine_spectra::fourier::random_points(t.dim(), MASS_POINTS, 0.0, 1.0, s.seed);
            let mut ok = true;
            let mut reports = Vec::new();
            for (k, x) in xs.iter().enumerate() {
                let rep = total_mass_check(x, t, &sets, &s.path_config(derived_seed(s.seed, k as u64)))?;
                ok &= rep.pass;
                reports.push(json!({
                    "x": rep.x,
                    "mass": rep.mass,
                    "per_set": rep.per_set,
                    "overlaps": rep.overlaps,
                    "pass": rep.pass,
                }));
            }
            Ok((
                status(ok),
                json!({ "sets": sets.iter().map(|s| &s.name).collect::<Vec<_>>(), "points": reports }),
            ))
        })?;
    }
    Ok(rec.finish("SPECTRAL-EVIDENCE"))
}
