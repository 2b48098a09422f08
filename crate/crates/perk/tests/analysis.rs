use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use perk::analysis::*;
use perk::multirate::*;
use perk::spectra::Spectrum;
use perk::stabpoly::{optimize, StabilityPolynomial, DEFAULT_DT_TOL};
use perk::tableau::*;
use perk::testbed::*;
use perk::Complex64;
use proptest::prelude::*;

fn circle_poly(order: usize, evals: usize) -> StabilityPolynomial {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), StabilityPolynomial>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((order, evals))
        .or_insert_with(|| optimize(&Spectrum::circle(-1.0, 1.0, 128), order, evals, DEFAULT_DT_TOL).unwrap())
        .clone()
}

fn family(order: usize, stages: usize, evals: &[usize], pattern: StagePattern) -> PerkFamily {
    let polys: Vec<_> = evals.iter().map(|&e| circle_poly(order, e)).collect();
    build_family(&polys, order, stages, pattern, 0).unwrap()
}

fn complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

#[test]
fn single_member_operator_is_the_polynomial() {
    let f = family(2, 6, &[6], StagePattern::Standard);
    let mesh = Mesh1D::uniform(-1.0, 2.0, 12).unwrap();
    let op = assemble_upwind_advection(&mesh, 1.0).unwrap();
    let dt = 0.8 * 5.0 * 2.0 / 12.0;
    let d = assemble_fully_discrete(&f, &PartitionAssignment::uniform(1, 0, 12).unwrap(), &op, dt).unwrap();
    let coeffs = circle_poly(2, 6).coefficients();
    let z = op.to_dense() * dt;
    let n = z.nrows();
    let horner = coeffs.iter().rev().fold(DMatrix::zeros(n, n), |acc, &c| &acc * &z + DMatrix::identity(n, n) * c);
    assert!(max_diff(&d.matrix, &horner) < 1e-12);
    assert!(max_diff(&matrix_polynomial(&coeffs, &z), &horner) < 1e-12);
}

#[test]
fn zero_timestep_gives_identity() {
    let f = family(2, 8, &[3, 8], StagePattern::Standard);
    let mesh = Mesh1D::dyadic(0.0, 0.5, vec![0, 1, 1, 0]).unwrap();
    let asg = assign_partitions(&mesh, &f).unwrap();
    let op = assemble_upwind_advection(&mesh, 1.0).unwrap();
    let d = assemble_fully_discrete(&f, &asg, &op, 0.0).unwrap();
    assert_eq!(d.matrix, DMatrix::identity(4, 4));
    let k = stability_function_matrix(&f, &asg, &DMatrix::zeros(4, 4)).unwrap();
    assert_eq!(k, DMatrix::identity(4, 4));
}

#[test]
fn kronecker_formula_on_a_two_partition_toy() {
    let f = family(2, 8, &[4, 8], StagePattern::Standard);
    let mesh = Mesh1D::dyadic(0.0, 0.25, vec![0, 0, 1, 1, 1, 1, 0, 0]).unwrap();
    let asg = assign_partitions(&mesh, &f).unwrap();
    let op = assemble_upwind_advection(&mesh, 1.0).unwrap();
    let dt = 0.1;
    let d = assemble_fully_discrete(&f, &asg, &op, dt).unwrap();
    let k = stability_function_matrix(&f, &asg, &complex(&(op.to_dense() * dt))).unwrap();
    assert!(max_diff(&d.matrix, &k.map(|c| c.re)) < 1e-10);
    assert!(k.map(|c| c.im.abs()).max() < 1e-12);
}

#[test]
fn single_partition_kronecker_is_the_polynomial() {
    let f = family(3, 6, &[5], StagePattern::Standard);
    let z = DMatrix::from_fn(5, 5, |i, j| if i == j { -0.5 } else if j == (i + 1) % 5 { 0.5 } else { 0.0 });
    let k = stability_function_matrix(&f, &PartitionAssignment::uniform(1, 0, 5).unwrap(), &complex(&z)).unwrap();
    let p = matrix_polynomial(&circle_poly(3, 5).coefficients(), &z);
    assert!(max_diff(&k.map(|c| c.re), &p) < 1e-12);
}

#[test]
fn spectral_radius_examples() {
    assert!((spectral_radius(&DMatrix::identity(4, 4)) - 1.0).abs() < 1e-15);
    assert!((spectral_radius(&(DMatrix::identity(3, 3) * 0.5)) - 0.5).abs() < 1e-15);
    let rot = nalgebra::dmatrix![0.0, -2.0; 2.0, 0.0];
    assert!((spectral_radius(&rot) - 2.0).abs() < 1e-14);
    assert!(largest_real_eigenvalue(&rot).abs() < 1e-14);
}

#[test]
fn monotone_small_steps() {
    let f = family(2, 2, &[2], StagePattern::Standard);
    let mesh = Mesh1D::uniform(-1.0, 2.0, 16).unwrap();
    let op = assemble_upwind_advection(&mesh, 1.0).unwrap();
    let h = 2.0 / 16.0;
    for frac in [0.25, 0.5, 1.0] {
        let d = assemble_fully_discrete(&f, &PartitionAssignment::uniform(1, 0, 16).unwrap(), &op, frac * h).unwrap();
        assert!(monotonicity_report(&d.matrix, DEFAULT_MONOTONICITY_TOL).unwrap().is_empty(), "dt = {frac} dx");
    }
    assert!(monotonicity_report(&DMatrix::identity(3, 3), DEFAULT_MONOTONICITY_TOL).unwrap().is_empty());
    let d = assemble_fully_discrete(&f, &PartitionAssignment::uniform(1, 0, 16).unwrap(), &op, 1.5 * h).unwrap();
    assert!(!monotonicity_report(&d.matrix, DEFAULT_MONOTONICITY_TOL).unwrap().is_empty());
}

#[test]
fn interface_configuration() {
    let (f, asg, op) = uniform_interface_case().unwrap();
    let d = assemble_fully_discrete(&f, &asg, &op, TV_BASE_DT).unwrap();
    for s in d.row_sums() {
        assert!((s - 1.0).abs() < 1e-12);
    }
    let negatives = monotonicity_report(&d.matrix, DEFAULT_MONOTONICITY_TOL).unwrap();
    for row in 16..24 {
        assert!(negatives.iter().any(|&(i, _, _)| i == row), "row {} has no negative entry", row + 1);
    }
    let rho = spectral_radius(&d.matrix);
    assert!(rho > 1.0 - 1e-12 && rho < 1.0 + 1e-12, "{rho}");
    let lmax = largest_real_eigenvalue(&d.matrix);
    assert!(lmax > 1.0 - 1e-12 && lmax < 1.0 + 1e-12, "{lmax}");
}

#[test]
fn tv_examples() {
    assert_eq!(tv_increase(&[0.0, 1.0, 0.0, 1.0], &[0.0, 2.0, 0.0, 2.0]).unwrap(), 1.0);
    assert_eq!(tv_increase(&[0.0, 1.0, 3.0], &[0.0, 1.0, 3.0]).unwrap(), 0.0);
    assert!(tv_increase(&[2.0; 5], &[1.0; 5]).is_err());
    assert!(tv_increase(&[0.0, 1.0], &[0.0]).is_err());
    assert_eq!(tv_seminorm(&[0.0, 1.0, 3.0]), 6.0);
}

#[test]
fn refined_mesh_layout() {
    let mesh = two_level_mesh(64, 2.0).unwrap();
    assert_eq!(mesh.len(), 16 + 64 + 16);
    assert!((mesh.widths.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    assert_eq!(mesh.levels.iter().filter(|&&l| l == 1).count(), 64);
    let edges = mesh.edges();
    assert!((edges[16] + 0.5).abs() < 1e-15 && (edges[80] - 0.5).abs() < 1e-14);
}

#[test]
fn table_examples_that_hold() {
    let mut source = MemberSource::new();
    let cfl = TvVariant::Cfl.cases()[0].1;
    let v = tv_single_step(&cfl, &mut source).unwrap();
    assert!((v + 0.01).abs() <= 0.02, "{v}");
    let de = TvVariant::DeltaE.cases()[2].1;
    assert_eq!((de.e_coarse, de.e_fine), (4, 8));
    assert!(tv_single_step(&de, &mut source).unwrap() <= 0.01);
}

#[test]
fn table_csv_layout() {
    let t = TvTable { variant: TvVariant::Cfl, parameters: vec![0.4, 1.0], values: vec![-0.00812, 28.94] };
    assert_eq!(t.to_csv(), "CFL,0.4,1\ne_tv,-0.00812,28.9\n");
    assert!(t.to_csv_full().ends_with("e_tv,-0.00812,28.94\n"));
}

#[test]
fn uniform_single_member_is_diffusive() {
    let mut source = MemberSource::new();
    for n in [256usize, 512] {
        for e in [8usize, 16] {
            let f = source.family(&[e]).unwrap();
            let mesh = Mesh1D::uniform(-1.0, 2.0, n).unwrap();
            let asg = assign_partitions(&mesh, &f).unwrap();
            let op = assemble_upwind_advection(&mesh, 1.0).unwrap();
            let u0 = smooth_advection_ic(&mesh);
            let dt = (e - 1) as f64 * 2.0 / n as f64;
            let u1 = step(&f, &asg, &LinearRhs { op: &op }, &u0, dt, None).unwrap();
            let growth = tv_increase(&u0, &u1).unwrap();
            assert!(growth <= 1e-10, "N={n} E={e}: {growth}");
        }
    }
}

#[test]
fn stage_pattern_changes_the_result() {
    let mesh = two_level_mesh(16, 2.0).unwrap();
    let op = assemble_upwind_advection(&mesh, 1.0).unwrap();
    let u0 = smooth_advection_ic(&mesh);
    let results: Vec<Vec<f64>> = StagePattern::ALL
        .iter()
        .map(|&pattern| {
            let f = family(2, 6, &[4, 6], pattern);
            let asg = assign_partitions(&mesh, &f).unwrap();
            step(&f, &asg, &LinearRhs { op: &op }, &u0, 0.3, None).unwrap()
        })
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            let d = results[i].iter().zip(&results[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d > 1e-8, "patterns {i} and {j}: {d}");
        }
    }
}

#[test]
fn temporal_orders() {
    let (mesh, u0) = convergence_testbed().unwrap();
    for (order, target, tol) in [(2usize, 2.0, 0.1), (3, 3.0, 0.15)] {
        let f = convergence_family(order, 0).unwrap();
        let study = temporal_convergence(&f, &mesh, &u0, 0.5, &[20, 40, 80, 160]).unwrap();
        for o in &study.orders_linf {
            let o = o.unwrap();
            assert!((o - target).abs() <= tol, "p={order}: {:?}", study.orders_linf);
        }
    }
    let zero = vec![0.0; mesh.len()];
    let f = convergence_family(2, 0).unwrap();
    let study = temporal_convergence(&f, &mesh, &zero, 0.5, &[4, 8, 16]).unwrap();
    assert!(study.orders_linf.iter().all(Option::is_none));
}

fn toy() -> impl Strategy<Value = (Vec<u32>, usize, usize, usize, f64)> {
    (prop::collection::vec(0u32..3, 2..17), 1usize..4, 0usize..3, 0usize..2, 0.05f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kronecker_matches_assembly((levels, r, pat, order, cfl) in toy()) {
        let (p, all): (usize, &[usize]) = if order == 0 { (2, &[3, 5, 8]) } else { (3, &[4, 6, 8]) };
        let pattern = if p == 3 { StagePattern::Standard } else { StagePattern::ALL[pat] };
        let f = family(p, 8, &all[3 - r..], pattern);
        let mesh = Mesh1D::dyadic(-1.0, 0.25, levels).unwrap();
        let asg = assign_partitions(&mesh, &f).unwrap();
        let op = assemble_upwind_advection(&mesh, 1.0).unwrap();
        let dt = cfl_timestep(&mesh, &vec![1.0; mesh.len()], 0, 2.0 * cfl).unwrap();
        let d = assemble_fully_discrete(&f, &asg, &op, dt).unwrap();
        let k = stability_function_matrix(&f, &asg, &complex(&(op.to_dense() * dt))).unwrap();
        prop_assert!(max_diff(&d.matrix, &k.map(|c| c.re)) < 1e-10);
        for s in d.row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let u: Vec<f64> = (0..mesh.len()).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let stepped = step(&f, &asg, &LinearRhs { op: &op }, &u, dt, None).unwrap();
        let applied = &d.matrix * DVector::from_vec(u);
        let diff = stepped.iter().zip(applied.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-12);
    }
}
