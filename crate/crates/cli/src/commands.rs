use std::path::{Path, PathBuf};

use affine_spectra::cycles::WORD_BUDGET;
use affine_spectra::fourier::{
    orthogonality_defect, random_grid, random_points, regular_grid, Verdict, PAIR_CAP,
};
use affine_spectra::ifs::CLOUD_BUDGET;
use affine_spectra::lattice::conjugate_triple;
use affine_spectra::paths::{ruelle_residual, total_mass_check};
use affine_spectra::subspace::{analyze_translates, check_theorem_conditions};
use affine_spectra::{
    enumerate_wb_cycles, parseval_certify, Complex64, IntMatrix, Matrix, MeasureTransform,
    UnimodularMatrix,
};
use anyhow::bail;
use clap::{Parser, Subcommand};
use serde_json::json;

use crate::pipeline::{
    build_spectrum, certification_json, conditions_json, default_sets, derived_seed, escape_json,
    hadamard_json, inputs, lambda1_tree, run_example51_pipeline, search_json, spectrum_json,
    translate_check_json, zero_offset, Overrides, Settings, BOX_BUDGET, ESCAPE_STEPS,
};
use crate::problem::{
    parse_problem, parse_problem_str, read_sets, Problem, ProblemError, EXAMPLE51,
};
use crate::report::{
    decimal, emit, float, rat_vec, rat_vecs, status, write_csv, Mode, Recorder, RunReport, Status,
};

/// Largest acceptable `|mu_hat(lambda - lambda')|` between distinct spectrum elements.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;
/// Largest acceptable change of `mu_hat` under conjugation.
pub const CONJUGATION_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(
    name = "affine-spectra",
    version,
    about = "Spectral pairs for affine iterated function systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unitarity defect of the matrix (e^{2 pi i R^{-1} b.l}) / sqrt(N).
    CheckHadamard {
        problem: PathBuf,
        #[arg(long)]
        show_matrix: bool,
    },
    /// Depth-K cloud of the attractor of (R, B).
    Attractor {
        problem: PathBuf,
        #[arg(long, default_value_t = 6)]
        depth: u32,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// mu_hat on a regular grid.
    MuHat {
        problem: PathBuf,
        /// Points per axis.
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
        hi: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// W_B-cycles up to --cycle-max-len.
    FindCycles { problem: PathBuf },
    /// Truncated spectrum as CSV.
    BuildSpectrum {
        problem: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Parseval sums of the truncated spectrum on a grid.
    Certify {
        problem: PathBuf,
        /// Random points in the attractor's bounding box (the origin is added).
        #[arg(long, default_value_t = 20)]
        grid_points: usize,
        /// Use a regular grid with this many points per axis on [0,1]^d instead.
        #[arg(long)]
        regular: Option<usize>,
        /// Also check orthogonality over pairs within this distance.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Invariant translates, escape chains and spectrum conditions.
    AnalyzeInvariant { problem: PathBuf },
    /// Path-measure estimates of h_F, the transfer identity and total mass.
    SimulatePaths {
        problem: PathBuf,
        /// JSON list of invariant sets; defaults to the problem's sets.
        #[arg(long)]
        sets: Option<PathBuf>,
        /// Number of random starting points in [0,1]^d.
        #[arg(long, default_value_t = 5)]
        points: usize,
    },
    /// Conjugate by a unimodular M and compare.
    Conjugate {
        problem: PathBuf,
        /// Row-major entries of M, comma separated; defaults to the problem's M.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        m: Option<Vec<i64>>,
        /// Write the conjugated problem file here.
        #[arg(long)]
        write: Option<PathBuf>,
    },
    /// End-to-end reproduction of the two-dimensional example.
    Example51 {
        /// Problem file; defaults to the shipped example.
        #[arg(long)]
        problem: Option<PathBuf>,
        #[arg(long)]
        skip_montecarlo: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Pass = 0,
    Fail = 1,
    Usage = 2,
}

pub fn run(cli: &Cli) -> Exit {
    match execute(cli) {
        Ok(report) => {
            if let Err(e) = emit(&report, cli.out.as_deref()) {
                eprintln!("error: {e:#}");
                return Exit::Usage;
            }
            if report.passed() {
                Exit::Pass
            } else {
                Exit::Fail
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            Exit::Usage
        }
    }
}

fn load(path: &Path, o: &Overrides) -> anyhow::Result<(Problem, Settings)> {
    let problem = parse_problem(path)?;
    let settings = Settings::resolve(&problem, o);
    Ok((problem, settings))
}

pub fn execute(cli: &Cli) -> anyhow::Result<RunReport> {
    let o = &cli.overrides;
    match &cli.command {
        Command::CheckHadamard {
            problem,
            show_matrix,
        } => {
            let (p, s) = load(problem, o)?;
            check_hadamard(&p, &s, *show_matrix)
        }
        Command::Attractor {
            problem,
            depth,
            csv,
        } => {
            let (p, s) = load(problem, o)?;
            attractor(&p, &s, *depth, csv.as_deref())
        }
        Command::MuHat {
            problem,
            grid,
            lo,
            hi,
            csv,
        } => {
            let (p, s) = load(problem, o)?;
            mu_hat(&p, &s, *grid, *lo, *hi, csv.as_deref())
        }
        Command::FindCycles { problem } => {
            let (p, s) = load(problem, o)?;
            find_cycles(&p, &s)
        }
        Command::BuildSpectrum { problem, csv } => {
            let (p, s) = load(problem, o)?;
            spectrum_csv(&p, &s, csv.as_deref())
        }
        Command::Certify {
            problem,
            grid_points,
            regular,
            radius,
            csv,
        } => {
            let (p, s) = load(problem, o)?;
            certify(&p, &s, *grid_points, *regular, *radius, csv.as_deref())
        }
        Command::AnalyzeInvariant { problem } => {
            let (p, s) = load(problem, o)?;
            analyze_invariant(&p, &s)
        }
        Command::SimulatePaths {
            problem,
            sets,
            points,
        } => {
            let (mut p, s) = load(problem, o)?;
            if let Some(path) = sets {
                p.sets = Some(read_sets(path, p.triple.dim())?);
            }
            simulate(&p, &s, *points)
        }
        Command::Conjugate { problem, m, write } => {
            let (p, s) = load(problem, o)?;
            conjugate(&p, &s, m.as_deref(), write.as_deref())
        }
        Command::Example51 {
            problem,
            skip_montecarlo,
        } => {
            let p = match problem {
                Some(path) => parse_problem(path)?,
                None => parse_problem_str(EXAMPLE51)?,
            };
            let s = Settings::resolve(&p, o);
            run_example51_pipeline(&p, &s, *skip_montecarlo)
        }
    }
}

pub fn check_hadamard(p: &Problem, s: &Settings, show_matrix: bool) -> anyhow::Result<RunReport> {
    let mut rec = Recorder::new("check-hadamard", inputs(p, s));
    rec.run("hadamard", Mode::Deterministic, None, || {
        let (ok, v) = hadamard_json(&p.triple, s.tol_unitary, s.precision, show_matrix);
        Ok((status(ok), v))
    })?;
    Ok(rec.finish("PASS"))
}

pub fn attractor(
    p: &Problem,
    s: &Settings,
    depth: u32,
    csv: Option<&Path>,
) -> anyhow::Result<RunReport> {
    let mut rec = Recorder::new("attractor", inputs(p, s));
    rec.run("attractor", Mode::Deterministic, None, || {
        let ifs = p.triple.b_ifs();
        let cloud = ifs.attractor_cloud_capped(depth, CLOUD_BUDGET)?;
        let bbox = ifs.bounding_box();
        if let Some(path) = csv {
            let header: Vec<String> = (1..=p.triple.dim()).map(|i| format!("x{i}")).collect();
            let rows: Vec<Vec<String>> = cloud
                .points()
                .iter()
                .map(|pt| pt.iter().map(|q| decimal(q, s.precision)).collect())
                .collect();
            write_csv(path, &header, &rows)?;
        }
        Ok((
            Status::Info,
            json!({
                "requested_depth": depth,
                "depth": cloud.depth(),
                "points": cloud.len(),
                "raw_count": cloud.raw_count().to_string(),
                "hausdorff_bound": cloud.hausdorff_bound(),
                "bounding_box": bbox.intervals().iter().map(|(a, b)| json!([a.to_string(), b.to_string()])).collect::<Vec<_>>(),
                "csv": csv.map(|c| c.display().to_string()),
            }),
        ))
    })?;
    Ok(rec.finish("OK"))
}

pub fn mu_hat(
    p: &Problem,
    s: &Settings,
    k: usize,
    lo: f64,
    hi: f64,
    csv: Option<&Path>,
) -> anyhow::Result<RunReport> {
    if k == 0 || lo >= hi {
        bail!("the grid needs at least one point per axis and lo < hi");
    }
    let mut rec = Recorder::new("mu-hat", inputs(p, s));
    rec.run("mu-hat", Mode::Deterministic, None, || {
        let transform = MeasureTransform::from_triple(&p.triple);
        let grid = regular_grid(p.triple.dim(), k, lo, hi);
        let values: Vec<_> = grid
            .iter()
            .map(|x| transform.mu_hat(x, s.product_depth))
            .collect();
        if let Some(path) = csv {
            let mut header: Vec<String> = (1..=p.triple.dim()).map(|i| format!("x{i}")).collect();
            header.extend(["re", "im", "abs2", "depth", "tail_bound"].map(String::from));
            let rows: Vec<Vec<String>> = grid
                .iter()
                .zip(&values)
                .map(|(x, m)| {
                    let mut row: Vec<String> = x.iter().map(|v| float(*v, s.precision)).collect();
                    row.push(float(m.value.re, s.precision));
                    row.push(float(m.value.im, s.precision));
                    row.push(float(m.value.norm_sqr(), s.precision));
                    row.push(m.depth.to_string());
                    row.push(format!("{:e}", m.tail_bound));
                    row
                })
                .collect();
            write_csv(path, &header, &rows)?;
        }
        Ok((
            Status::Info,
            json!({
                "points": grid.len(),
                "max_depth": values.iter().map(|m| m.depth).max(),
                "max_tail_bound": values.iter().map(|m| m.tail_bound).fold(0.0, f64::max),
                "csv": csv.map(|c| c.display().to_string()),
            }),
        ))
    })?;
    Ok(rec.finish("OK"))
}

pub fn find_cycles(p: &Problem, s: &Settings) -> anyhow::Result<RunReport> {
    let mut rec = Recorder::new("find-cycles", inputs(p, s));
    rec.run("cycles", Mode::Deterministic, None, || {
        let search = enumerate_wb_cycles(&p.triple, s.cycle_max_len, WORD_BUDGET)?;
        Ok((Status::Info, search_json(&search)))
    })?;
    Ok(rec.finish("OK"))
}

pub fn spectrum_csv(p: &Problem, s: &Settings, csv: Option<&Path>) -> anyhow::Result<RunReport> {
    let mut rec = Recorder::new("build-spectrum", inputs(p, s));
    rec.run("spectrum", Mode::Deterministic, None, || {
        let built = build_spectrum(p, s)?;
        let mut v = json!({ "source": built.source });
        if let Some(rep) = &built.conditions {
            v["conditions"] = conditions_json(rep);
        }
        let Some(sp) = &built.spectrum else {
            return Ok((Status::Fail, v));
        };
        v["spectrum"] = spectrum_json(sp);
        if let Some(path) = csv {
            let mut header: Vec<String> = (1..=sp.dim()).map(|i| format!("lambda{i}")).collect();
            header.push("generation".into());
            let rows: Vec<Vec<String>> = (0..sp.len())
                .map(|i| {
                    let mut row: Vec<String> = sp
                        .element(i)
                        .iter()
                        .map(|q| decimal(q, s.precision))
                        .collect();
                    row.push(sp.generation()[i].to_string());
                    row
                })
                .collect();
            write_csv(path, &header, &rows)?;
            v["csv"] = json!(path.display().to_string());
        }
        Ok((Status::Pass, v))
    })?;
    Ok(rec.finish("PASS"))
}

pub fn certify(
    p: &Problem,
    s: &Settings,
    grid_points: usize,
    regular: Option<usize>,
    radius: Option<f64>,
    csv: Option<&Path>,
) -> anyhow::Result<RunReport> {
    let t = &p.triple;
    let mut rec = Recorder::new("certify", inputs(p, s));
    let built = build_spectrum(p, s)?;
    let transform = MeasureTransform::from_triple(t);
    let Some(sp) = built.spectrum else {
        rec.run("spectrum", Mode::Deterministic, None, || {
            Ok((
                Status::Fail,
                json!({ "conditions": built.conditions.as_ref().map(conditions_json) }),
            ))
        })?;
        return Ok(rec.finish("PASS"));
    };
    rec.run("spectrum", Mode::Deterministic, None, || {
        Ok((Status::Pass, spectrum_json(&sp)))
    })?;
    if let Some(radius) = radius {
        rec.run("orthogonality", Mode::Deterministic, None, || {
            let rep = orthogonality_defect(&transform, &sp, radius, PAIR_CAP)?;
            let ok = rep.max_defect < ORTHOGONALITY_TOL;
            Ok((
                status(ok),
                json!({
                    "radius": rep.radius,
                    "pairs": rep.pairs,
                    "max_defect": rep.max_defect,
                    "tail_bound": rep.tail_bound,
                    "worst_pair": rep.worst_pair.as_ref().map(|(a, b)| json!([rat_vec(a), rat_vec(b)])),
                    "tol": ORTHOGONALITY_TOL,
                }),
            ))
        })?;
    }
    let (grid, seed) = match regular {
        Some(k) => (regular_grid(t.dim(), k, 0.0, 1.0), None),
        None => (
            random_grid(&t.b_ifs().bounding_box(), grid_points, s.seed),
            Some(s.seed),
        ),
    };
    let mode = if seed.is_some() {
        Mode::Seeded
    } else {
        Mode::Deterministic
    };
    rec.run("parseval", mode, seed, || {
        let rep = parseval_certify(&transform, &sp, &grid, &s.certify())?;
        if let Some(path) = csv {
            let mut header: Vec<String> = (1..=t.dim()).map(|i| format!("x{i}")).collect();
            header.extend(["s_n", "deviation", "monotone"].map(String::from));
            let rows: Vec<Vec<String>> = rep
                .points
                .iter()
                .map(|pt| {
                    let mut row: Vec<String> =
                        pt.x.iter().map(|v| float(*v, s.precision)).collect();
                    row.push(float(*pt.partial_sums.last().unwrap_or(&0.0), s.precision));
                    row.push(float(pt.deviation, s.precision));
                    row.push(pt.monotone.to_string());
                    row
                })
                .collect();
            write_csv(path, &header, &rows)?;
        }
        Ok((
            status(rep.verdict == Verdict::Pass && rep.monotone),
            certification_json(&rep),
        ))
    })?;
    Ok(rec.finish("PASS"))
}

pub fn analyze_invariant(p: &Problem, s: &Settings) -> anyhow::Result<RunReport> {
    let t = &p.triple;
    let Some(r) = p.subspace_dim else {
        bail!("analyze-invariant needs analysis.subspace_dim in the problem file");
    };
    let mut rec = Recorder::new("analyze-invariant", inputs(p, s));
    let mut invariant_zero = false;
    rec.run("translates", Mode::Deterministic, None, || {
        let a = analyze_translates(t, r, BOX_BUDGET, ESCAPE_STEPS, s.seed)?;
        invariant_zero = a
            .checks
            .iter()
            .any(|c| c.invariant && c.y0.iter().all(num_traits::Zero::is_zero));
        Ok((
            Status::Info,
            json!({
                "lattice_tails": rat_vecs(&a.candidates.lattice_tails),
                "candidates": rat_vecs(&a.candidates.candidates),
                "checks": a.checks.iter().map(translate_check_json).collect::<Vec<_>>(),
                "traces": a.traces.iter().map(escape_json).collect::<Vec<_>>(),
            }),
        ))
    })?;
    if p.y0.is_some() || invariant_zero {
        rec.run("conditions", Mode::Deterministic, Some(s.seed), || {
            let y0 = zero_offset(p, r);
            let tree = lambda1_tree(p, r, &y0)?;
            let rep = check_theorem_conditions(t, r, &y0, &tree, s.lambda1_depth, &s.conditions())?;
            let check = affine_spectra::check_invariant_translate(t, r, &y0, s.seed)?;
            let mut v = conditions_json(&rep);
            v["translate"] = translate_check_json(&check);
            Ok((status(rep.pass && check.invariant), v))
        })?;
    }
    Ok(rec.finish("PASS"))
}

pub fn simulate(p: &Problem, s: &Settings, points: usize) -> anyhow::Result<RunReport> {
    let t = &p.triple;
    let search = enumerate_wb_cycles(t, s.cycle_max_len, WORD_BUDGET)?;
    let sets = default_sets(p, Some(&search));
    if sets.is_empty() {
        bail!("no invariant sets: give --sets or analysis.invariant_sets");
    }
    let mut rec = Recorder::new("simulate-paths", inputs(p, s));
    let xs = random_points(t.dim(), points, 0.0, 1.0, s.seed);
    for (k, x) in xs.iter().enumerate() {
        let seed = derived_seed(s.seed, k as u64);
        rec.run(&format!("point-{k}"), Mode::Seeded, Some(seed), || {
            let cfg = s.path_config(seed);
            let mut ok = true;
            let mut per_set = Vec::new();
            for (j, f) in sets.iter().enumerate() {
                let rep =
                    ruelle_residual(x, t, f, &s.path_config(derived_seed(seed, j as u64 + 1)))?;
                ok &= rep.pass;
                per_set.push(json!({
                    "set": f.name,
                    "h": rep.h_x,
                    "ruelle_residual": rep.residual,
                    "ruelle_sigma": rep.sigma,
                    "ruelle_pass": rep.pass,
                }));
            }
            let mass = total_mass_check(x, t, &sets, &cfg)?;
            ok &= mass.pass;
            Ok((
                status(ok),
                json!({
                    "x": x,
                    "sets": per_set,
                    "total_mass": mass.mass,
                    "overlaps": mass.overlaps,
                    "total_mass_pass": mass.pass,
                }),
            ))
        })?;
    }
    Ok(rec.finish("PASS"))
}

pub fn conjugate(
    p: &Problem,
    s: &Settings,
    m: Option<&[i64]>,
    write: Option<&Path>,
) -> anyhow::Result<RunReport> {
    let t = &p.triple;
    let d = t.dim();
    let m = match m {
        Some(flat) => {
            if flat.len() != d * d {
                return Err(
                    ProblemError::Validation(format!("--m needs {} entries", d * d)).into(),
                );
            }
            let mat: IntMatrix = Matrix::new(d, d, flat.to_vec());
            UnimodularMatrix::new(mat)
                .map_err(|e| ProblemError::Validation(format!("M must be in GL_d(Z): {e}")))?
        }
        None => match &p.m {
            Some(m) => m.clone(),
            None => bail!("no conjugation matrix: give --m or M in the problem file"),
        },
    };
    let mut rec = Recorder::new("conjugate", inputs(p, s));
    rec.run("conjugate", Mode::Deterministic, Some(s.seed), || {
        let ct = conjugate_triple(&m, t)?;
        let (_, before) = hadamard_json(t, s.tol_unitary, s.precision, false);
        let (_, after) = hadamard_json(&ct, s.tol_unitary, s.precision, false);
        let defect_change = (before["defect"].as_f64().unwrap_or(f64::NAN)
            - after["defect"].as_f64().unwrap_or(f64::NAN))
        .abs();
        let mu1 = MeasureTransform::from_triple(t);
        let mu2 = MeasureTransform::from_triple(&ct);
        let back = m.inverse_transpose().to_f64();
        let mut worst: f64 = 0.0;
        for x in random_points(d, 20, -2.0, 2.0, s.seed) {
            let y = back.mul_vec(&x);
            let a: Complex64 = mu1.mu_hat(&x, s.product_depth).value;
            let b: Complex64 = mu2.mu_hat(&y, s.product_depth).value;
            worst = worst.max((a - b).norm());
        }
        let file = crate::problem::ProblemFile {
            name: p.file.name.as_ref().map(|n| format!("{n}-conjugated")),
            dimension: d,
            r: ct.r().matrix().as_slice().to_vec(),
            b: ct.b().vectors().to_vec(),
            l: ct.l().vectors().to_vec(),
            m: None,
            analysis: None,
        };
        if let Some(path) = write {
            std::fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
        }
        let ok = defect_change < s.tol_unitary && worst < CONJUGATION_TOL;
        Ok((
            status(ok),
            json!({
                "M": m.matrix().to_rows(),
                "problem": serde_json::to_value(&file)?,
                "defect_before": before["defect"],
                "defect_after": after["defect"],
                "max_mu_hat_difference": worst,
                "tol": CONJUGATION_TOL,
            }),
        ))
    })?;
    Ok(rec.finish("PASS"))
}
