use std::path::PathBuf;
use std::process::Command;

use affine_spectra_cli::pipeline::Settings;
use affine_spectra_cli::report::Status;
use affine_spectra_cli::{parse_problem, parse_problem_str, run_example51_pipeline, Overrides};

fn problems() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("problems")
}

fn shipped() -> Vec<PathBuf> {
    let mut files = Vec::new();
    for dir in [problems(), problems().join("controls")] {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                files.push(path);
            }
        }
    }
    files.sort();
    files
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_affine-spectra"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("affine-spectra-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn shipped_files_round_trip() {
    for path in shipped() {
        let p = parse_problem(&path).unwrap();
        let once = serde_json::to_string_pretty(&p.canonical()).unwrap();
        let twice =
            serde_json::to_string_pretty(&parse_problem_str(&once).unwrap().canonical()).unwrap();
        assert_eq!(once, twice, "{}", path.display());
    }
}

#[test]
fn non_canonical_rationals_are_normalised() {
    let text = r#"{"dimension":2,"R":[4,0,0,4],"B":[[0,0],[0,2],[1,4],[1,6]],"L":[[0,0],[2,0],[2,1],[0,5]],
        "analysis":{"subspace_dim":1,"y0":["0/3"]}}"#;
    let p = parse_problem_str(text).unwrap();
    assert_eq!(
        p.canonical().analysis.unwrap().y0.unwrap(),
        vec!["0".to_string()]
    );
}

#[test]
fn validation_errors_exit_with_two() {
    let cases = [
        (
            r#"{"dimension":1,"R":[1],"B":[[0]],"L":[[0]]}"#,
            "not expanding",
        ),
        (
            r#"{"dimension":1,"R":[4],"B":[[1],[2]],"L":[[0],[1]]}"#,
            "0 ∈ B required",
        ),
        (
            r#"{"dimension":1,"R":[4],"B":[[0],[2]],"L":[[0]]}"#,
            "#B = #L",
        ),
        (
            r#"{"dimension":1,"R":[4],"B":[[0]],"L":[[0]],"extra":1}"#,
            "parse error",
        ),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let path = scratch(&format!("invalid-{i}.json"));
        std::fs::write(&path, text).unwrap();
        let (code, _, err) = cli(&["check-hadamard", path.to_str().unwrap()]);
        assert_eq!(code, 2, "{err}");
        assert!(err.contains(needle), "{err}");
    }
    assert_eq!(cli(&["certify"]).0, 2);
}

#[test]
fn hadamard_verdicts_set_exit_codes() {
    let ok = problems().join("example51.json");
    let (code, out, _) = cli(&["check-hadamard", ok.to_str().unwrap(), "--show-matrix"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["verdict"], "PASS");
    assert_eq!(v["stages"][0]["results"]["matrix"][1][2], "-0.500000000000");
    let bad = problems().join("controls/non_hadamard.json");
    assert_eq!(cli(&["check-hadamard", bad.to_str().unwrap()]).0, 1);
}

#[test]
fn broken_l_fails_at_the_hadamard_stage() {
    let p = parse_problem(problems().join("controls/example51_broken_l.json")).unwrap();
    let rep =
        run_example51_pipeline(&p, &Settings::resolve(&p, &Overrides::default()), false).unwrap();
    assert_eq!(rep.verdict, "FAIL");
    assert_eq!(rep.stages[0].status, Status::Fail);
    assert!(rep.stages[0].results["defect"].as_f64().unwrap() > 0.5);
    assert!(rep.stages[1..].iter().all(|s| s.status == Status::Skipped));
}

fn quick() -> Overrides {
    Overrides {
        spectrum_depth: Some(3),
        paths: Some(2000),
        steps: Some(32),
        seed: Some(9),
        ..Overrides::default()
    }
}

#[test]
fn reports_are_reproducible_and_skip_flag_keeps_deterministic_stages() {
    let p = parse_problem(problems().join("example51.json")).unwrap();
    let s = Settings::resolve(&p, &quick());
    let a = run_example51_pipeline(&p, &s, false).unwrap();
    let b = run_example51_pipeline(&p, &s, false).unwrap();
    assert_eq!(a.to_json_without_timing(), b.to_json_without_timing());
    let c = run_example51_pipeline(&p, &s, true).unwrap();
    let mass = c.stage("total-mass").unwrap();
    assert_eq!(mass.status, Status::Skipped);
    for stage in c.stages.iter().filter(|s| s.status != Status::Skipped) {
        assert_eq!(Some(stage), a.stage(&stage.name));
    }
    assert_eq!(
        a.stage("dual-lattice").unwrap().results["basis"],
        serde_json::json!([["1", "0"], ["0", "1/2"]])
    );
}

#[test]
fn full_pipeline_reports_spectral_evidence() {
    let out = scratch("example51.json");
    let (code, _, err) = cli(&["example51", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["verdict"], "SPECTRAL-EVIDENCE");
    let stages = v["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 7);
    assert!(stages.iter().all(|s| s["status"] == "PASS"));
    assert_eq!(stages[6]["mode"], "seeded");
    assert!(v["timing"]["total_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn spectrum_and_certify_write_csv() {
    let file = problems().join("quarter_cantor.json");
    let spec = scratch("spectrum.csv");
    let (code, _, err) = cli(&[
        "build-spectrum",
        file.to_str().unwrap(),
        "--spectrum-depth",
        "3",
        "--csv",
        spec.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let mut reader = csv::Reader::from_path(&spec).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().any(|r| &r[0] == "42.000000000000"));
    let cert = scratch("certify.csv");
    let (code, out, _) = cli(&[
        "certify",
        file.to_str().unwrap(),
        "--radius",
        "256",
        "--precision",
        "6",
        "--csv",
        cert.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["stages"][2]["name"], "parseval");
    let mut reader = csv::Reader::from_path(&cert).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["x1", "s_n", "deviation", "monotone"]
    );
    assert_eq!(reader.records().count(), 21);
}

#[test]
fn conjugate_and_cycles_commands() {
    let file = problems().join("example51.json");
    let written = scratch("conjugated.json");
    let (code, out, _) = cli(&[
        "conjugate",
        file.to_str().unwrap(),
        "--write",
        written.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(
        v["stages"][0]["results"]["max_mu_hat_difference"]
            .as_f64()
            .unwrap()
            < 1e-10
    );
    let shipped = parse_problem(problems().join("example51_conjugated.json")).unwrap();
    let produced = parse_problem(&written).unwrap();
    assert_eq!(produced.triple, shipped.triple);
    let (code, _, _) = cli(&["conjugate", file.to_str().unwrap(), "--m", "4,-1,0,1"]);
    assert_eq!(code, 2);
    let (code, out, _) = cli(&[
        "find-cycles",
        file.to_str().unwrap(),
        "--cycle-max-len",
        "3",
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["stages"][0]["results"]["wb_cycles"], 1);
}

#[test]
fn analyze_and_simulate_commands() {
    let conj = problems().join("example51_conjugated.json");
    let (code, out, _) = cli(&["analyze-invariant", conj.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let traces = v["stages"][0]["results"]["traces"].as_array().unwrap();
    assert_eq!(traces.len(), 4);
    assert!(traces.iter().all(|t| t["outcome"]["escaped"].is_u64()));
    let sets = scratch("sets.json");
    std::fs::write(
        &sets,
        r#"[{"name":"line","kind":"translate","r":1,"y0":["0"]}]"#,
    )
    .unwrap();
    let file = problems().join("example51.json");
    let (code, out, err) = cli(&[
        "simulate-paths",
        file.to_str().unwrap(),
        "--sets",
        sets.to_str().unwrap(),
        "--points",
        "2",
        "--paths",
        "3000",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["stages"][1]["results"]["sets"][0]["set"], "line");
    assert_eq!(v["stages"][1]["mode"], "seeded");
}
