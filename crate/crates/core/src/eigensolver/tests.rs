use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::hilbert::{build_hamiltonian, ModelParams};

fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let x: f64 = rng.gen_range(-1.0..1.0);
            a[(i, j)] = x;
            a[(j, i)] = x;
        }
    }
    a
}

fn strategies() -> Vec<Arc<dyn EigenSolver>> {
    let r = SolverRegistry::default();
    r.names().map(|n| r.get(n).unwrap()).collect()
}

#[test]
fn two_by_two() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
    for s in strategies() {
        let sp = spectral_decomposition_with(s.as_ref(), &a).unwrap();
        assert!((sp.eigenvalues[0] + 0.5).abs() < 1e-15, "{}", s.name());
        assert!((sp.eigenvalues[1] - 0.5).abs() < 1e-15, "{}", s.name());
    }
    let p = partial_lowest(&a, 1).unwrap();
    assert!((p.eigenvalues[0] + 0.5).abs() < 1e-15);
    assert_eq!(p.eigenvectors.ncols(), 1);
}

#[test]
fn lambda_zero_block_gives_sorted_diagonal() {
    let params = ModelParams::resonant(5, 0.0, 6);
    let blk = build_hamiltonian(&params, Subspace::Parity(Sector::Minus)).unwrap();
    let mut diag: Vec<f64> = blk.matrix.diagonal().iter().copied().collect();
    diag.sort_by(f64::total_cmp);
    for s in strategies() {
        let sp = spectral_decomposition_with(s.as_ref(), &blk.matrix).unwrap();
        assert_eq!(sp.eigenvalues, diag, "{}", s.name());
    }
}

#[test]
fn random_matrix_residual_and_orthonormality() {
    let a = random_symmetric(50, 7);
    let trace: f64 = a.diagonal().sum();
    for s in strategies() {
        let sp = spectral_decomposition_with(s.as_ref(), &a).unwrap();
        assert!(
            sp.residual(&a) <= 1e-8,
            "{} residual {}",
            s.name(),
            sp.residual(&a)
        );
        assert!(sp.orthonormality_error() <= 1e-10, "{}", s.name());
        assert!(sp.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let sum: f64 = sp.eigenvalues.iter().sum();
        assert!(
            (sum - trace).abs() <= 1e-10 * trace.abs().max(1.0),
            "{}",
            s.name()
        );
        // reconstruction V Λ Vᵀ
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sp.eigenvalues.clone()));
        let back = &sp.eigenvectors * lam * sp.eigenvectors.transpose();
        assert!((back - &a).amax() <= 1e-8);
    }
}

#[test]
fn strategies_agree_on_eigenvalues() {
    let a = random_symmetric(40, 11);
    let reference = spectral_decomposition_with(&Jacobi, &a).unwrap();
    for s in strategies() {
        let sp = spectral_decomposition_with(s.as_ref(), &a).unwrap();
        for (x, y) in sp.eigenvalues.iter().zip(&reference.eigenvalues) {
            assert!((x - y).abs() < 1e-12, "{}", s.name());
        }
    }
}

#[test]
fn sign_convention_is_largest_component_positive() {
    let a = random_symmetric(20, 3);
    let sp = spectral_decomposition(&a).unwrap();
    for c in 0..20 {
        let col = sp.eigenvectors.column(c);
        let big = col
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        assert!(big > 0.0);
    }
    // identical input, identical bits
    assert_eq!(sp, spectral_decomposition(&a).unwrap());
}

#[test]
fn permutation_invariance() {
    let a = random_symmetric(30, 5);
    let perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
    let pa = DMatrix::from_fn(30, 30, |i, j| a[(perm[i], perm[j])]);
    let x = spectral_decomposition(&a).unwrap();
    let y = spectral_decomposition(&pa).unwrap();
    for (u, v) in x.eigenvalues.iter().zip(&y.eigenvalues) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn partial_matches_full() {
    let a = random_symmetric(25, 9);
    let full = spectral_decomposition(&a).unwrap();
    let part = partial_lowest(&a, 25).unwrap();
    for (u, v) in full.eigenvalues.iter().zip(&part.eigenvalues) {
        assert!((u - v).abs() < 1e-10);
    }
    assert!(part.residual(&a) < 1e-8);
    assert!(part.orthonormality_error() < 1e-10);
}

#[test]
fn partial_on_dicke_block() {
    // sector dimension 21 * 48 / 2 = 504
    let params = ModelParams::resonant(20, 1.2, 47);
    let blk = build_hamiltonian(&params, Subspace::Parity(Sector::Plus)).unwrap();
    assert!(blk.basis.len() >= 500);
    let full = spectral_decomposition(&blk.matrix).unwrap();
    let part = partial_lowest(&blk.matrix, 10).unwrap();
    for k in 0..10 {
        assert!((full.eigenvalues[k] - part.eigenvalues[k]).abs() < 1e-10);
    }
    assert!(part.residual(&blk.matrix) < 1e-8);
    assert!(part.orthonormality_error() < 1e-10);
}

#[test]
fn partial_with_degenerate_cluster() {
    let mut a = DMatrix::zeros(6, 6);
    for (i, d) in [1.0, 1.0, 1.0, 2.0, 3.0, 3.0].iter().enumerate() {
        a[(i, i)] = *d;
    }
    let q = spectral_decomposition(&random_symmetric(6, 1))
        .unwrap()
        .eigenvectors;
    let mut b = &q * a * q.transpose();
    b = (&b + b.transpose()) * 0.5;
    let part = partial_lowest(&b, 4).unwrap();
    assert!(part.orthonormality_error() < 1e-10);
    assert!(part.residual(&b) < 1e-8);
}

#[test]
fn sectors_merge_to_full_spectrum() {
    let params = ModelParams::resonant(4, 0.8, 8);
    let solver = HouseholderQl;
    let plus = solve_subspace(&params, Subspace::Parity(Sector::Plus), &solver).unwrap();
    let minus = solve_subspace(&params, Subspace::Parity(Sector::Minus), &solver).unwrap();
    let full = solve_subspace(&params, Subspace::Full, &solver).unwrap();
    let merged = merge_sectors(&params, &plus, &minus).unwrap();
    for (u, v) in merged.eigenvalues.iter().zip(&full.eigenvalues) {
        assert!((u - v).abs() < 1e-8);
    }
    let h = build_hamiltonian(&params, Subspace::Full).unwrap().matrix;
    assert!(merged.residual(&h) < 1e-8);
    assert!(merged.orthonormality_error() < 1e-12);
    let par = column_parities(&params, &merged).unwrap();
    assert_eq!(
        par.iter().filter(|p| **p == Sector::Plus).count(),
        plus.dim()
    );
}

#[test]
fn merge_rejects_swapped_sectors() {
    let params = ModelParams::resonant(2, 0.8, 3);
    let plus = solve_subspace(&params, Subspace::Parity(Sector::Plus), &HouseholderQl).unwrap();
    let minus = solve_subspace(&params, Subspace::Parity(Sector::Minus), &HouseholderQl).unwrap();
    assert!(merge_sectors(&params, &minus, &plus).is_err());
    let other = params.with_lambda(0.9);
    let minus2 = solve_subspace(&other, Subspace::Parity(Sector::Minus), &HouseholderQl).unwrap();
    assert_eq!(
        merge_sectors(&params, &plus, &minus2).unwrap_err(),
        DickeError::FingerprintMismatch
    );
}

#[test]
fn band_eigenvalues_match_dense() {
    let params = ModelParams::resonant(9, 1.4, 40);
    let (_, sparse) =
        build_sparse_limited(&params, Subspace::Parity(Sector::Plus), 10_000).unwrap();
    let mut dense = HouseholderQl.eigvalsh(&sparse).unwrap();
    let mut band = BandQl.eigvalsh(&sparse).unwrap();
    dense.sort_by(f64::total_cmp);
    band.sort_by(f64::total_cmp);
    let scale = sparse.max_abs();
    for (u, v) in dense.iter().zip(&band) {
        assert!((u - v).abs() < 1e-11 * scale, "{u} vs {v}");
    }
}

#[test]
fn rejects_bad_input() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
    assert!(matches!(
        spectral_decomposition(&a),
        Err(DickeError::InvalidInput(_))
    ));
    let b = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 0.0]);
    assert!(spectral_decomposition(&b).is_err());
    assert!(partial_lowest(&DMatrix::identity(3, 3), 4).is_err());
    assert!(partial_lowest(&DMatrix::identity(3, 3), 0).is_err());
}

#[test]
fn registry_lookup() {
    let r = SolverRegistry::default();
    assert_eq!(r.get("band-ql").unwrap().name(), "band-ql");
    assert!(matches!(r.get("lapack"), Err(DickeError::UnknownSolver(_))));
}

#[test]
fn tiny_matrices() {
    for n in 0..4 {
        let a = random_symmetric(n, 2);
        for s in strategies() {
            let sp = spectral_decomposition_with(s.as_ref(), &a).unwrap();
            assert_eq!(sp.dim(), n);
            if n > 0 {
                assert!(sp.residual(&a) < 1e-12);
            }
        }
    }
}
