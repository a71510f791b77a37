use affine_spectra::cycles::WORD_BUDGET;
use affine_spectra::fourier::{regular_grid, CertifyConfig, DigitTree, Route};
use affine_spectra::lattice::conjugate_triple;
use affine_spectra::scalar::{int, ratio};
use affine_spectra::subspace::{candidate_translates, check_corollary_conditions, BranchKind, ConditionConfig, SPECTRUM_BUDGET};
use affine_spectra::{
    check_invariant_translate, dual_lattice, enumerate_wb_cycles, hadamard_matrix, is_hadamard_triple,
    parseval_certify, subspace_spectrum, trace_escape, Matrix, MeasureTransform, RatVec, Triple, UnimodularMatrix,
};

fn example() -> Triple {
    Triple::from_parts(
        &[vec![4, 0], vec![0, 4]],
        vec![vec![0, 0], vec![0, 2], vec![1, 4], vec![1, 6]],
        vec![vec![0, 0], vec![2, 0], vec![2, 1], vec![0, 5]],
    )
    .unwrap()
}

fn lambda1() -> DigitTree {
    DigitTree::new(Matrix::from_rows(&[vec![4]]), vec![vec![0], vec![2]], vec![vec![int(0)]])
}

#[test]
fn hadamard_matrix_has_half_entries() {
    let t = example();
    let h = hadamard_matrix::<f64>(&t);
    let signs = [[1, 1, 1, 1], [1, 1, -1, -1], [1, -1, -1, 1], [1, -1, 1, -1]];
    for (i, row) in signs.iter().enumerate() {
        for (j, &s) in row.iter().enumerate() {
            let z = h[(i, j)];
            assert!((z.re - 0.5 * s as f64).abs() < 1e-15 && z.im.abs() < 1e-15);
        }
    }
    assert!(is_hadamard_triple(&t, 1e-12).0);
}

#[test]
fn gamma_and_cycles() {
    let t = example();
    assert_eq!(
        dual_lattice(t.b()).unwrap().vectors(),
        vec![vec![int(1), int(0)], vec![int(0), ratio(1, 2)]]
    );
    let search = enumerate_wb_cycles(&t, 4, WORD_BUDGET).unwrap();
    let wb = search.wb_cycles();
    assert_eq!(wb.len(), 1);
    assert!(wb[0].is_trivial());
    let rejected: Vec<&RatVec> = search.rejected().iter().map(|c| &c.point).collect();
    assert!(rejected.contains(&&vec![int(0), ratio(1, 2)]));
    assert!(rejected.contains(&&vec![int(0), int(1)]));
}

#[test]
fn invariant_line_and_conjugated_escapes() {
    let t = example();
    let check = check_invariant_translate(&t, 1, &[int(0)], 0).unwrap();
    assert!(check.invariant);
    for b in &check.branches {
        let vanishing = b.digit == vec![2, 1] || b.digit == vec![0, 5];
        assert_eq!(b.kind == BranchKind::Vanishes, vanishing, "{b:?}");
    }
    let m = UnimodularMatrix::new(Matrix::from_rows(&[vec![4, -1], vec![1, 0]])).unwrap();
    let ct = conjugate_triple(&m, &t).unwrap();
    let cands = candidate_translates(&ct, 1, 1 << 16).unwrap();
    for y in &cands.candidates {
        assert!(trace_escape(&ct, 1, y, &cands.candidates, 10).unwrap().escaped());
    }
}

#[test]
fn subspace_spectrum_routes_agree() {
    let t = example();
    let rep = check_corollary_conditions(&t, 1, &lambda1(), 4, &ConditionConfig::default()).unwrap();
    assert!(rep.pass);
    let sp = subspace_spectrum(&t, &rep, &lambda1(), 3, SPECTRUM_BUDGET).unwrap();
    let transform = MeasureTransform::from_triple(&t);
    let cfg = CertifyConfig {
        route: Route::Both,
        prune: 0.0,
        ..CertifyConfig::default()
    };
    let cert = parseval_certify(&transform, &sp, &regular_grid(2, 3, 0.0, 1.0), &cfg).unwrap();
    assert!(cert.route_disagreement.unwrap() < 1e-10);
    assert!(cert.monotone);
    // Deeper truncations only add mass.
    let deeper = subspace_spectrum(&t, &rep, &lambda1(), 4, SPECTRUM_BUDGET).unwrap();
    assert!(sp.is_subset_of(&deeper));
    let cert4 = parseval_certify(&transform, &deeper, &regular_grid(2, 3, 0.0, 1.0), &CertifyConfig::default()).unwrap();
    assert!(cert4.max_deviation < cert.max_deviation);
}
