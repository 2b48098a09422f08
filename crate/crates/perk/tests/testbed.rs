use perk::spectra::dense_eigenvalues;
use perk::testbed::*;
use perk::Complex64;
use proptest::prelude::*;

#[test]
fn two_cell_upwind_stencil() {
    let mesh = Mesh1D::uniform(0.0, 2.0, 2).unwrap();
    let l = assemble_upwind_advection(&mesh, 1.0).unwrap().to_dense();
    assert_eq!(l, nalgebra::dmatrix![-1.0, 1.0; 1.0, -1.0]);
}

#[test]
fn nonuniform_row_reads_off_widths() {
    let mesh = Mesh1D::new(0.0, vec![1.0, 0.5, 0.5], vec![0, 1, 1]).unwrap();
    let l = assemble_upwind_advection(&mesh, 1.0).unwrap().to_dense();
    assert_eq!(l.row(1).iter().copied().collect::<Vec<_>>(), vec![2.0, -2.0, 0.0]);
}

#[test]
fn uniform_upwind_spectrum_is_a_circle() {
    let mesh = Mesh1D::uniform(-1.0, 2.0, 64).unwrap();
    let l = assemble_upwind_advection(&mesh, 1.0).unwrap();
    let eigs = dense_eigenvalues(&l.to_dense());
    let worst = eigs
        .iter()
        .map(|z| ((z + 32.0).norm() - 32.0).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn circulant_eigenvalues_match_closed_form() {
    let n = 32;
    let dx = 2.0 / n as f64;
    let mesh = Mesh1D::uniform(-1.0, 2.0, n).unwrap();
    let eigs = dense_eigenvalues(&assemble_upwind_advection(&mesh, 1.0).unwrap().to_dense());
    for k in 0..n {
        let theta = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let expected = (Complex64::from_polar(1.0, theta) - 1.0) / dx;
        let nearest = eigs.iter().map(|e| (e - expected).norm()).fold(f64::INFINITY, f64::min);
        assert!(nearest < 1e-9, "k={k}: {nearest}");
    }
}

#[test]
fn smooth_ic_examples() {
    let one = Mesh1D::uniform(-1.0, 2.0, 1).unwrap();
    assert!((smooth_advection_ic(&one)[0] - 1.0).abs() < 1e-15);

    let two = Mesh1D::uniform(-1.0, 2.0, 2).unwrap();
    let u = smooth_advection_ic(&two);
    let pi = std::f64::consts::PI;
    assert!((u[0] - (1.0 - 1.0 / pi)).abs() < 1e-14);
    assert!((u[1] - (1.0 + 1.0 / pi)).abs() < 1e-14);

    let mesh = Mesh1D::uniform(-1.0, 2.0, 64).unwrap();
    let u = smooth_advection_ic(&mesh);
    for i in 0..64 {
        assert!((u[i] + u[63 - i] - 2.0).abs() < 1e-12);
    }
}

#[test]
fn burgers_examples() {
    let mesh = Mesh1D::uniform(0.0, 4.0, 4).unwrap();
    assert!(burgers_godunov_rhs(&mesh, &[2.0; 4]).iter().all(|r| r.abs() < 1e-15));

    let mesh = Mesh1D::uniform(0.0, 2.0, 2).unwrap();
    assert_eq!(burgers_godunov_flux(1.0, -1.0), 0.5);
    assert_eq!(burgers_godunov_flux(-1.0, 1.0), 0.0);
    assert_eq!(burgers_godunov_rhs(&mesh, &[1.0, -1.0]), vec![-0.5, 0.5]);
}

#[test]
fn amr_examples() {
    let mesh = Mesh1D::uniform(0.0, 4.0, 4).unwrap();
    let u = vec![1.0, 2.0, 3.0, 4.0];
    let th = AmrThresholds { refine: 1.0, coarsen: 0.5, max_level: 3 };
    let (m, v) = refine_coarsen(&mesh, &u, &[0.0; 4], th).unwrap();
    assert_eq!(m.widths, mesh.widths);
    assert_eq!(v, u);

    let single = Mesh1D::uniform(0.0, 1.0, 1).unwrap();
    let (m, v) = refine_coarsen(&single, &[3.0], &[2.0], th).unwrap();
    assert_eq!(m.widths, vec![0.5, 0.5]);
    assert_eq!(m.levels, vec![1, 1]);
    assert_eq!(v, vec![3.0, 3.0]);

    let siblings = Mesh1D::dyadic(0.0, 1.0, vec![1, 1]).unwrap();
    let (m, v) = refine_coarsen(&siblings, &[2.0, 4.0], &[0.0, 0.0], th).unwrap();
    assert_eq!(m.widths, vec![1.0]);
    assert_eq!(v, vec![3.0]);
    assert_eq!(siblings.integral(&[2.0, 4.0]), m.integral(&v));
}

#[test]
fn indicator_examples() {
    assert!(gradient_indicator(&[2.0; 5]).unwrap().iter().all(|&v| v == 0.0));
    assert_eq!(gradient_indicator(&[0.0, 1.0, 0.0, 0.0]).unwrap()[1], 1.0);
    let mesh = Mesh1D::uniform(-1.0, 2.0, 64).unwrap();
    let ind = gradient_indicator(&smooth_advection_ic(&mesh)).unwrap();
    assert!(ind.iter().copied().fold(0.0, f64::max) < 0.1);
}

#[test]
fn state_json_round_trip() {
    let mesh = Mesh1D::dyadic(-1.0, 0.5, vec![0, 1, 1, 0, 0]).unwrap();
    let values = vec![0.1, 1.0 / 3.0, 2.0, -7.5, 1e-300];
    let text = serde_json::to_string(&MeshState::new(&mesh, &values).unwrap()).unwrap();
    let (m, v) = serde_json::from_str::<MeshState>(&text).unwrap().into_parts().unwrap();
    assert_eq!(m.widths, mesh.widths);
    assert_eq!(m.levels, mesh.levels);
    assert_eq!(v, values);
}

fn brute_force_flux(l: f64, r: f64) -> f64 {
    let f = |u: f64| 0.5 * u * u;
    if l > r {
        // shock travelling with speed (l + r) / 2
        if l + r > 0.0 {
            f(l)
        } else {
            f(r)
        }
    } else if l >= 0.0 {
        f(l)
    } else if r <= 0.0 {
        f(r)
    } else {
        // transonic rarefaction, sonic state 0
        0.0
    }
}

fn random_dyadic_mesh() -> impl Strategy<Value = (Vec<u32>, Vec<f64>, Vec<f64>, f64, f64)> {
    (prop::collection::vec(0u32..3, 2..24), 0.0f64..0.9, 0.05f64..0.5).prop_flat_map(|(levels, coarse, gap)| {
        let n = levels.len();
        (
            Just(levels),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(0.0f64..1.0, n),
            Just(coarse),
            Just(coarse + gap),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn refine_coarsen_conserves_integral((levels, u, ind, coarsen, refine) in random_dyadic_mesh()) {
        let mesh = Mesh1D::dyadic(-1.0, 0.25, levels).unwrap();
        let th = AmrThresholds { refine, coarsen, max_level: 4 };
        let (m, v) = refine_coarsen(&mesh, &u, &ind, th).unwrap();
        let before = mesh.integral(&u);
        let after = m.integral(&v);
        prop_assert!((before - after).abs() <= 1e-12 * before.abs().max(1.0));
        prop_assert!(m.levels.iter().all(|&l| l <= 4));
        prop_assert!((m.widths.iter().sum::<f64>() - mesh.widths.iter().sum::<f64>()).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn burgers_matches_riemann_enumeration(u in prop::collection::vec(-3.0f64..3.0, 2..20)) {
        let n = u.len();
        let mesh = Mesh1D::uniform(0.0, n as f64 * 0.1, n).unwrap();
        let rhs = burgers_godunov_rhs(&mesh, &u);
        for i in 0..n {
            let expected = -(brute_force_flux(u[i], u[(i + 1) % n]) - brute_force_flux(u[(i + n - 1) % n], u[i])) / 0.1;
            prop_assert!((rhs[i] - expected).abs() < 1e-12);
        }
        let total: f64 = rhs.iter().map(|r| r * 0.1).sum();
        prop_assert!(total.abs() < 1e-12);
    }

    #[test]
    fn upwind_rows_sum_to_zero(widths in prop::collection::vec(0.01f64..1.0, 1..30), speed in -3.0f64..3.0) {
        let n = widths.len();
        let mesh = Mesh1D::new(0.0, widths, vec![0; n]).unwrap();
        let l = assemble_upwind_advection(&mesh, speed).unwrap();
        for s in l.row_sums() {
            prop_assert!(s.abs() < 1e-14 * l.norm_inf().max(1.0));
        }
    }
}
