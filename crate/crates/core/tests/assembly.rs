use dwave::assembly::{grading_for, singular_moment, Mesh};
use dwave::linalg::{SymTridiag, TridiagCholesky};
use dwave::quadrature::integrate_adaptive;
use dwave::*;
use proptest::prelude::*;

#[test]
fn grading_is_clamped() {
    assert_eq!(grading_for(0.0), 1.0);
    assert_eq!(grading_for(0.5), 2.0 / 1.5);
    assert_eq!(grading_for(1.5), 4.0);
    assert_eq!(grading_for(1.9), 4.0);
}

#[test]
fn refined_mesh_nests_the_coarse_one() {
    let coarse = Mesh::graded(16, 2.0).unwrap();
    let fine = coarse.refined().unwrap();
    assert_eq!(fine.n, 32);
    for (i, x) in coarse.nodes.iter().enumerate() {
        assert_eq!(fine.nodes[2 * i], *x);
    }
}

#[test]
fn singular_moment_closed_forms() {
    // ∫_0^1 x^-1/2 = 2, ∫_0^1 t x^-1/2 with t = x = 2/3
    assert!((singular_moment(0.0, 1.0, 0.5, 0).unwrap() - 2.0).abs() < 1e-14);
    assert!((singular_moment(0.0, 1.0, 0.5, 1).unwrap() - 2.0 / 3.0).abs() < 1e-14);
    // p = 1 on [1, e]: ∫ dx/x = 1
    assert!((singular_moment(1.0, std::f64::consts::E, 1.0, 0).unwrap() - 1.0).abs() < 1e-14);
    assert!(singular_moment(0.0, 1.0, 1.0, 0).is_err());
}

fn reference_matrices(n: usize) -> (CoefficientProfile, WeightPair, OperatorMatrices) {
    let p = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.0, 1.0).unwrap();
    let w = feller_weight(&p).unwrap();
    let m = assemble(&p, &w, &build_mesh(n, &p).unwrap()).unwrap();
    (p, w, m)
}

#[test]
fn quadratic_forms_match_adaptive_integrals() {
    let (p, w, m) = reference_matrices(64);
    // u = x^2 interpolated; on each element u is linear, so compare with the interpolant
    let u = m.mesh.interpolate(|x| x * x);
    let nodes = m.mesh.nodes.clone();
    let interp = move |x: f64| {
        let e = nodes.partition_point(|n| *n <= x).clamp(1, nodes.len() - 1) - 1;
        let (xl, xr) = (nodes[e], nodes[e + 1]);
        let t = (x - xl) / (xr - xl);
        (1.0 - t) * xl * xl + t * xr * xr
    };
    let mut oracle_b = 0.0;
    let mut oracle_s = 0.0;
    for e in 0..m.mesh.n {
        let (xl, xr) = (m.mesh.nodes[e], m.mesh.nodes[e + 1]);
        oracle_b += integrate_adaptive(|x| interp(x).powi(2) / w.sigma(x), xl, xr, 1e-15).unwrap();
        oracle_s += integrate_adaptive(|x| interp(x).powi(2) / (w.sigma(x) * p.d.eval(x)), xl, xr, 1e-15).unwrap();
    }
    assert!((m.b.quad_form(&u) - oracle_b).abs() < 1e-9 * oracle_b);
    assert!((m.s.quad_form(&u) - oracle_s).abs() < 1e-9 * oracle_s);
}

#[test]
fn stiffness_annihilates_constants_in_the_interior() {
    let (_, _, m) = reference_matrices(32);
    // K applied to the all-ones nodal vector (with node 0 also one) only sees the first element
    let ones = vec![1.0; m.dim()];
    let k1 = m.k.mul_vec(&ones);
    for v in &k1[1..] {
        assert!(v.abs() < 1e-12 * m.k.max_abs_entry());
    }
    assert!(k1[0] > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cholesky_inverts_random_spd_tridiagonals(
        off in proptest::collection::vec(-1.0..1.0f64, 2..40),
        shift in 0.01..3.0f64,
    ) {
        let n = off.len() + 1;
        let diag: Vec<f64> = (0..n)
            .map(|i| {
                let l = if i > 0 { off[i - 1].abs() } else { 0.0 };
                let r = if i < n - 1 { off[i].abs() } else { 0.0 };
                l + r + shift
            })
            .collect();
        let a = SymTridiag::from_parts(diag, off);
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a.mul_vec(&x);
        let got = TridiagCholesky::factor(&a).unwrap().solve(&b);
        for (g, e) in got.iter().zip(&x) {
            prop_assert!((g - e).abs() < 1e-9);
        }
        prop_assert_eq!(a.count_below(&SymTridiag::from_parts(vec![1.0; n], vec![0.0; n - 1]), 0.0), 0);
    }

    #[test]
    fn assembled_matrices_are_positive(alpha in 0.1..1.8f64, gamma_frac in 0.1..0.45f64, n in 8usize..64) {
        let gamma = gamma_frac * (2.0 - alpha);
        let p = CoefficientProfile::power_law(alpha, 0.05, alpha.max(1.0), gamma, 0.0, 1.0).unwrap();
        let w = feller_weight(&p).unwrap();
        let m = assemble(&p, &w, &build_mesh(n, &p).unwrap()).unwrap();
        for mat in [&m.b, &m.k, &m.k0, &m.s] {
            prop_assert!(mat.is_finite());
            prop_assert!(TridiagCholesky::factor(mat).is_ok());
        }
    }
}
