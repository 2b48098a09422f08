//! Fully discrete one-step operators, stability and monotonicity diagnostics,
//! total-variation experiments and temporal convergence studies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PerkError, Result};
use crate::multirate::{assign_partitions, step, LinearRhs, PartitionAssignment};
use crate::spectra::{dense_eigenvalues, Spectrum};
use crate::stabpoly::{optimize, StabilityPolynomial};
use crate::tableau::{
    abscissae, assemble_family, build_family, build_member_p2, tabulated_member, PerkFamily,
    PerkMember, StagePattern,
};
use crate::testbed::{assemble_upwind_advection, smooth_advection_ic, LinearOperator, Mesh1D};

pub const DEFAULT_MONOTONICITY_TOL: f64 = 1e-13;

/// Stage count shared by every family in the total-variation experiments.
pub const TV_STAGES: usize = 16;
/// Stable timestep of the `E = 8` member on cells of width `2/64`.
pub const TV_BASE_DT: f64 = 0.21875;

#[derive(Clone, Debug, PartialEq)]
pub struct FullyDiscreteOperator {
    pub matrix: DMatrix<f64>,
    pub dt: f64,
}

impl FullyDiscreteOperator {
    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        dense_eigenvalues(&self.matrix)
    }
}

/// Column `j` is one partitioned step applied to the `j`-th unit vector.
pub fn assemble_fully_discrete(
    family: &PerkFamily,
    assignment: &PartitionAssignment,
    op: &LinearOperator,
    dt: f64,
) -> Result<FullyDiscreteOperator> {
    let n = op.dim();
    let rhs = LinearRhs { op };
    let mut matrix = DMatrix::zeros(n, n);
    let mut unit = vec![0.0; n];
    for j in 0..n {
        unit[j] = 1.0;
        let col = step(family, assignment, &rhs, &unit, dt, None)?;
        unit[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
    }
    Ok(FullyDiscreteOperator { matrix, dt })
}

/// `I + (b^T (x) I) (I_S (x) Z) [I - (sum_r A^(r) (x) I^(r)) (I_S (x) Z)]^{-1} (1 (x) I)`
/// for `Z = dt * L`, assembled densely from each member's Butcher matrix.
pub fn stability_function_matrix(
    family: &PerkFamily,
    assignment: &PartitionAssignment,
    z: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let n = z.nrows();
    if z.ncols() != n || assignment.cell_count() != n {
        return invalid("Z must be square and match the assignment");
    }
    let s = family.stage_count;
    let big = s * n;
    let zero = Complex64::new(0.0, 0.0);
    let butcher: Vec<DMatrix<f64>> = family.members.iter().map(PerkMember::butcher_matrix).collect();
    // M = I - A_big (I_S (x) Z), with A_big[(i,row),(j,row)] = A^(r(row))_{ij}
    let mut m = DMatrix::<Complex64>::identity(big, big);
    for i in 0..s {
        for j in 0..s {
            for row in 0..n {
                let a = butcher[assignment.cell_to_partition[row]][(i, j)];
                if a == 0.0 {
                    continue;
                }
                for col in 0..n {
                    let zv = z[(row, col)];
                    if zv != zero {
                        m[(i * n + row, j * n + col)] -= zv * a;
                    }
                }
            }
        }
    }
    let mut rhs = DMatrix::<Complex64>::zeros(big, n);
    for i in 0..s {
        for k in 0..n {
            rhs[(i * n + k, k)] = Complex64::new(1.0, 0.0);
        }
    }
    let y = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| PerkError::Numerical("stage system is singular for this Z".into()))?;
    let mut weighted = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..s {
        let bi = family.b[i];
        if bi != 0.0 {
            weighted += y.rows(i * n, n) * Complex64::new(bi, 0.0);
        }
    }
    Ok(DMatrix::<Complex64>::identity(n, n) + z * weighted)
}

/// `p(M)` by Horner's rule on the matrix.
pub fn matrix_polynomial(coeffs: &[f64], m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for c in coeffs.iter().rev() {
        acc = &acc * m + DMatrix::<f64>::identity(n, n) * *c;
    }
    acc
}

pub fn spectral_radius(d: &DMatrix<f64>) -> f64 {
    dense_eigenvalues(d).iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Largest real part over the eigenvalues of `d`.
pub fn largest_real_eigenvalue(d: &DMatrix<f64>) -> f64 {
    dense_eigenvalues(d)
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Entries below `-tol` as zero-based `(row, column, value)`.
pub fn monotonicity_report(d: &DMatrix<f64>, tol: f64) -> Result<Vec<(usize, usize, f64)>> {
    if !(tol >= 0.0) {
        return invalid("tolerance must be non-negative");
    }
    let mut out = Vec::new();
    for i in 0..d.nrows() {
        for j in 0..d.ncols() {
            if d[(i, j)] < -tol {
                out.push((i, j, d[(i, j)]));
            }
        }
    }
    Ok(out)
}

/// `sum_i |U_{i+1} - U_i|` including the periodic wrap `|U_1 - U_N|`.
pub fn tv_seminorm(u: &[f64]) -> f64 {
    let n = u.len();
    if n < 2 {
        return 0.0;
    }
    (0..n).map(|i| (u[(i + 1) % n] - u[i]).abs()).sum()
}

pub fn tv_increase(u0: &[f64], u1: &[f64]) -> Result<f64> {
    if u0.len() != u1.len() {
        return invalid("states differ in length");
    }
    let base = tv_seminorm(u0);
    if base == 0.0 {
        return invalid("initial state has zero total variation");
    }
    Ok((tv_seminorm(u1) - base) / base)
}

/// Periodic `[-1, 1]` with `N1/4` cells of width `2/N1` on each side of a
/// refined centre `[-0.5, 0.5]` holding `N1 alpha / 2` cells.
pub fn two_level_mesh(base_cells: usize, alpha: f64) -> Result<Mesh1D> {
    if base_cells == 0 || !base_cells.is_multiple_of(4) {
        return invalid(format!("base resolution {base_cells} must be a positive multiple of 4"));
    }
    if !(alpha >= 1.0) {
        return invalid("refinement ratio must be at least one");
    }
    let fine = base_cells as f64 * alpha / 2.0;
    if (fine - fine.round()).abs() > 1e-9 {
        return invalid(format!(
            "alpha = {alpha} gives a non-integral refined cell count {fine}"
        ));
    }
    let fine = fine.round() as usize;
    let side = base_cells / 4;
    let h = 2.0 / base_cells as f64;
    let hf = 1.0 / fine as f64;
    let mut widths = vec![h; side];
    widths.extend(std::iter::repeat_n(hf, fine));
    widths.extend(std::iter::repeat_n(h, side));
    let mut levels = vec![0; side];
    levels.extend(std::iter::repeat_n(1, fine));
    levels.extend(std::iter::repeat_n(0, side));
    let mut mesh = Mesh1D::new(-1.0, widths, levels)?;
    mesh.domain_length = 2.0;
    Ok(mesh)
}

/// Second-order 16-stage members for the experiments: the tabulated
/// coefficients for `E = 8, 16`, circle-optimized polynomials otherwise.
#[derive(Clone, Debug, Default)]
pub struct MemberSource {
    cache: BTreeMap<usize, PerkMember>,
    pub circle_points: usize,
    pub dt_tol: f64,
}

impl MemberSource {
    pub fn new() -> Self {
        Self {
            cache: BTreeMap::new(),
            circle_points: 256,
            dt_tol: 1e-10,
        }
    }

    pub fn member(&mut self, evals: usize) -> Result<PerkMember> {
        if let Some(m) = self.cache.get(&evals) {
            return Ok(m.clone());
        }
        let member = match evals {
            8 | 16 => tabulated_member(evals)?,
            _ => {
                let poly = if evals == 2 {
                    StabilityPolynomial::taylor(2)
                } else {
                    optimize(&Spectrum::circle(-1.0, 1.0, self.circle_points), 2, evals, self.dt_tol)?
                };
                build_member_p2(&poly, &abscissae(2, TV_STAGES)?, TV_STAGES)?
            }
        };
        self.cache.insert(evals, member.clone());
        Ok(member)
    }

    pub fn family(&mut self, evals: &[usize]) -> Result<PerkFamily> {
        let members = evals.iter().map(|&e| self.member(e)).collect::<Result<Vec<_>>>()?;
        assemble_family(members, 2, StagePattern::Standard)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvCase {
    pub base_cells: usize,
    pub alpha: f64,
    pub e_coarse: usize,
    pub e_fine: usize,
    pub dt: f64,
}

/// One step of linear advection from the smooth initial condition on the
/// two-level mesh; returns the relative total-variation increase.
pub fn tv_single_step(case: &TvCase, source: &mut MemberSource) -> Result<f64> {
    let mesh = two_level_mesh(case.base_cells, case.alpha)?;
    let family = source.family(&[case.e_coarse, case.e_fine])?;
    let assignment = assign_partitions(&mesh, &family)?;
    let op = assemble_upwind_advection(&mesh, 1.0)?;
    let u0 = smooth_advection_ic(&mesh);
    let u1 = step(&family, &assignment, &LinearRhs { op: &op }, &u0, case.dt, None)?;
    tv_increase(&u0, &u1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvVariant {
    Alpha,
    Cfl,
    Resolution,
    DeltaE,
}

impl TvVariant {
    pub const ALL: [TvVariant; 4] = [Self::Alpha, Self::Cfl, Self::Resolution, Self::DeltaE];

    pub fn name(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Cfl => "cfl",
            Self::Resolution => "resolution",
            Self::DeltaE => "delta_e",
        }
    }

    fn parameter_label(self) -> &'static str {
        match self {
            Self::Alpha => "E2",
            Self::Cfl => "CFL",
            Self::Resolution => "N1",
            Self::DeltaE => "E1",
        }
    }

    /// Parameter grid and the experiment for each value.
    pub fn cases(self) -> Vec<(f64, TvCase)> {
        match self {
            Self::Alpha => (9..=16)
                .map(|e2| {
                    (
                        e2 as f64,
                        TvCase { base_cells: 64, alpha: e2 as f64 / 8.0, e_coarse: 8, e_fine: e2, dt: TV_BASE_DT },
                    )
                })
                .collect(),
            Self::Cfl => [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
                .into_iter()
                .map(|cfl| {
                    (cfl, TvCase { base_cells: 64, alpha: 2.0, e_coarse: 8, e_fine: 16, dt: cfl * TV_BASE_DT })
                })
                .collect(),
            Self::Resolution => [64usize, 128, 256, 512, 1024, 2048, 4096]
                .into_iter()
                .map(|n| {
                    (
                        n as f64,
                        TvCase { base_cells: n, alpha: 2.0, e_coarse: 8, e_fine: 16, dt: TV_BASE_DT * 64.0 / n as f64 },
                    )
                })
                .collect(),
            Self::DeltaE => (2..=8usize)
                .map(|e1| {
                    (
                        e1 as f64,
                        TvCase {
                            base_cells: 64,
                            alpha: 2.0,
                            e_coarse: e1,
                            e_fine: 2 * e1,
                            dt: (e1 - 1) as f64 * 2.0 / 64.0,
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TvTable {
    pub variant: TvVariant,
    pub parameters: Vec<f64>,
    pub values: Vec<f64>,
}

fn round_significant(v: f64, digits: i32) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (digits - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

impl TvTable {
    fn header(&self) -> String {
        let mut out = self.variant.parameter_label().to_string();
        for p in &self.parameters {
            let _ = write!(out, ",{p}");
        }
        out
    }

    /// Parameter row and a data row rounded to three significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push_str("\ne_tv");
        for v in &self.values {
            let _ = write!(out, ",{}", round_significant(*v, 3));
        }
        out.push('\n');
        out
    }

    pub fn to_csv_full(&self) -> String {
        let mut out = self.header();
        out.push_str("\ne_tv");
        for v in &self.values {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
        out
    }
}

pub fn run_tv_experiment(variant: TvVariant, source: &mut MemberSource) -> Result<TvTable> {
    let mut parameters = Vec::new();
    let mut values = Vec::new();
    for (param, case) in variant.cases() {
        parameters.push(param);
        values.push(tv_single_step(&case, source)?);
    }
    Ok(TvTable {
        variant,
        parameters,
        values,
    })
}

/// Uniform 64-cell mesh of `[-1, 1]` with the tabulated `E = 8, 16` pair, the
/// `E = 16` member on cells centred in `[-0.5, 0.5]`.
pub fn uniform_interface_case() -> Result<(PerkFamily, PartitionAssignment, LinearOperator)> {
    let mut mesh = Mesh1D::uniform(-1.0, 2.0, 64)?;
    let centers = mesh.centers();
    mesh.levels = centers.iter().map(|x| u32::from(x.abs() <= 0.5)).collect();
    let family = assemble_family(
        vec![tabulated_member(8)?, tabulated_member(16)?],
        2,
        StagePattern::Standard,
    )?;
    let assignment = assign_partitions(&mesh, &family)?;
    let op = assemble_upwind_advection(&mesh, 1.0)?;
    Ok((family, assignment, op))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub steps: Vec<usize>,
    pub dts: Vec<f64>,
    pub errors_linf: Vec<f64>,
    pub errors_l1: Vec<f64>,
    /// `None` where either error vanishes.
    pub orders_linf: Vec<Option<f64>>,
    pub orders_l1: Vec<Option<f64>>,
}

fn observed_orders(errors: &[f64], ratios: &[f64]) -> Vec<Option<f64>> {
    errors
        .windows(2)
        .zip(ratios)
        .map(|(e, r)| (e[0] > 0.0 && e[1] > 0.0).then(|| (e[0] / e[1]).ln() / r.ln()))
        .collect()
}

/// Fixed mesh, refined timestep. Errors are measured against `exp(tf L) U0`.
pub fn temporal_convergence(
    family: &PerkFamily,
    mesh: &Mesh1D,
    u0: &[f64],
    tf: f64,
    steps: &[usize],
) -> Result<ConvergenceStudy> {
    if steps.len() < 3 {
        return invalid("need at least three step counts");
    }
    if steps.windows(2).any(|w| w[1] <= w[0]) || steps[0] == 0 {
        return invalid("step counts must be positive and increasing");
    }
    if !(tf > 0.0) {
        return invalid("final time must be positive");
    }
    let op = assemble_upwind_advection(mesh, 1.0)?;
    let reference = (op.to_dense() * tf).exp() * nalgebra::DVector::from_column_slice(u0);
    let assignment = assign_partitions(mesh, family)?;
    let rhs = LinearRhs { op: &op };
    let mut dts = Vec::new();
    let mut errors_linf = Vec::new();
    let mut errors_l1 = Vec::new();
    for &n in steps {
        let dt = tf / n as f64;
        let mut u = u0.to_vec();
        for _ in 0..n {
            u = step(family, &assignment, &rhs, &u, dt, None)?;
        }
        let diff: Vec<f64> = u.iter().zip(reference.iter()).map(|(a, b)| (a - b).abs()).collect();
        dts.push(dt);
        errors_linf.push(diff.iter().copied().fold(0.0, f64::max));
        errors_l1.push(diff.iter().zip(&mesh.widths).map(|(d, h)| d * h).sum());
    }
    let ratios: Vec<f64> = steps.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
    Ok(ConvergenceStudy {
        orders_linf: observed_orders(&errors_linf, &ratios),
        orders_l1: observed_orders(&errors_l1, &ratios),
        steps: steps.to_vec(),
        dts,
        errors_linf,
        errors_l1,
    })
}

/// Periodic `[-1, 1]`: 16 cells of width `1/16` on each side of 64 cells of
/// width `1/64`, initial state `sin(pi x)` at cell centres.
pub fn convergence_testbed() -> Result<(Mesh1D, Vec<f64>)> {
    let mut widths = vec![1.0 / 16.0; 16];
    widths.extend(std::iter::repeat_n(1.0 / 64.0, 64));
    widths.extend(std::iter::repeat_n(1.0 / 16.0, 16));
    let mut levels = vec![0; 16];
    levels.extend(std::iter::repeat_n(1, 64));
    levels.extend(std::iter::repeat_n(0, 16));
    let mut mesh = Mesh1D::new(-1.0, widths, levels)?;
    mesh.domain_length = 2.0;
    let u0 = mesh
        .centers()
        .iter()
        .map(|x| (std::f64::consts::PI * x).sin())
        .collect();
    Ok((mesh, u0))
}

/// Eight-stage pair with `E = 4, 8` from circle-optimized polynomials.
pub fn convergence_family(order: usize, seed: u64) -> Result<PerkFamily> {
    let circle = Spectrum::circle(-1.0, 1.0, 256);
    let polys = [4usize, 8]
        .iter()
        .map(|&e| optimize(&circle, order, e, 1e-8))
        .collect::<Result<Vec<_>>>()?;
    build_family(&polys, order, 8, StagePattern::Standard, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_rounding() {
        assert_eq!(round_significant(26.04, 3), "26.0");
        assert_eq!(round_significant(7.2712, 3), "7.27");
        assert_eq!(round_significant(-0.0123, 3), "-0.0123");
        assert_eq!(round_significant(154.2, 3), "154");
    }

    #[test]
    fn mesh_needs_integral_fine_count() {
        assert!(two_level_mesh(64, 1.1).is_err());
        assert!(two_level_mesh(62, 2.0).is_err());
        assert_eq!(two_level_mesh(64, 1.125).unwrap().len(), 32 + 36);
    }

    #[test]
    fn short_ladder_rejected() {
        let (mesh, u0) = convergence_testbed().unwrap();
        let fam = MemberSource::new().family(&[8, 16]).unwrap();
        assert!(temporal_convergence(&fam, &mesh, &u0, 0.5, &[10, 20]).is_err());
    }

    #[test]
    fn negative_tolerance_rejected() {
        assert!(monotonicity_report(&DMatrix::identity(2, 2), -1.0).is_err());
    }
}
