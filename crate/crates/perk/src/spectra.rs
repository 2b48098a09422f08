//! Spectrum estimation for semidiscretization Jacobians.
//!
//! Small operators are decomposed densely. Large ones are handled by
//! computing the convex hull of a cheap reference spectrum, resampling it
//! into shifts, and running shift-invert Arnoldi at each shift.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, PerkError, Result};
use crate::testbed::LinearOperator;

pub const DEFAULT_DENSE_CAP: usize = 4096;
pub const DEFAULT_TARGET_EIGENVALUES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub source_dim: usize,
    pub scale_applied: f64,
    pub label: String,
    /// Seed of the initial Krylov vectors, when produced by Arnoldi.
    pub seed: Option<u64>,
    /// `||A v - lambda v|| / ||v||` per eigenvalue, when produced by Arnoldi.
    pub residuals: Vec<f64>,
    /// False when some requested eigenvalues did not reach the tolerance.
    pub all_converged: bool,
}

impl Spectrum {
    pub fn from_eigenvalues(eigenvalues: Vec<Complex64>, label: impl Into<String>) -> Self {
        let source_dim = eigenvalues.len();
        Self {
            eigenvalues,
            source_dim,
            scale_applied: 1.0,
            label: label.into(),
            seed: None,
            residuals: Vec::new(),
            all_converged: true,
        }
    }

    /// `points` samples of the circle `|z - center| = radius`.
    pub fn circle(center: f64, radius: f64, points: usize) -> Self {
        let eigs = (0..points)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
                Complex64::new(center, 0.0) + Complex64::from_polar(radius, theta)
            })
            .collect();
        Self::from_eigenvalues(eigs, format!("circle(c={center},r={radius},n={points})"))
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im\n");
        for l in &self.eigenvalues {
            let _ = writeln!(out, "{:?},{:?}", l.re, l.im);
        }
        out
    }

    pub fn from_csv(text: &str, label: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("re,im") => {}
            other => return Err(PerkError::Parse(format!("expected header re,im, got {other:?}"))),
        }
        let mut eigs = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split(',');
            let re: f64 = parts.next().unwrap_or("").trim().parse()?;
            let im: f64 = parts
                .next()
                .ok_or_else(|| PerkError::Parse(format!("missing imaginary part in {line:?}")))?
                .trim()
                .parse()?;
            eigs.push(Complex64::new(re, im));
        }
        Ok(Self::from_eigenvalues(eigs, label))
    }
}

/// Sorts by `(re, im)` and drops entries closer than `tol` to an already kept one.
fn sort_dedup(mut items: Vec<(Complex64, f64)>, tol: f64) -> Vec<(Complex64, f64)> {
    items.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
    let mut kept: Vec<(Complex64, f64)> = Vec::with_capacity(items.len());
    for (l, r) in items {
        let dup = kept
            .iter_mut()
            .rev()
            .take_while(|(k, _)| l.re - k.re <= tol)
            .find(|(k, _)| (k - l).norm() <= tol);
        match dup {
            Some(existing) => {
                if r < existing.1 {
                    *existing = (l, r);
                }
            }
            None => kept.push((l, r)),
        }
    }
    kept
}

pub fn dense_spectrum(op: &LinearOperator, cap: usize) -> Result<Spectrum> {
    if op.dim() > cap {
        return invalid(format!(
            "operator of size {} exceeds the dense cap {cap}; use shifted Arnoldi estimation instead",
            op.dim()
        ));
    }
    let eigs = dense_eigenvalues(&op.to_dense());
    let mut spec = Spectrum::from_eigenvalues(eigs, format!("dense(n={})", op.dim()));
    spec.source_dim = op.dim();
    Ok(spec)
}

pub fn dense_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn scale_spectrum(spectrum: &Spectrum, factor: f64) -> Result<Spectrum> {
    if !(factor > 0.0) || !factor.is_finite() {
        return invalid(format!("scale factor must be positive, got {factor}"));
    }
    let mut out = spectrum.clone();
    out.eigenvalues.iter_mut().for_each(|l| *l *= factor);
    out.scale_applied *= factor;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HullShifts {
    pub shifts: Vec<Complex64>,
    /// Mean distance between consecutive hull vertices.
    pub mean_spacing: f64,
}

impl HullShifts {
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return invalid("scale factor must be positive");
        }
        Ok(Self {
            shifts: self.shifts.iter().map(|s| s * factor).collect(),
            mean_spacing: self.mean_spacing * factor,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im,delta\n");
        for s in &self.shifts {
            let _ = writeln!(out, "{:?},{:?},{:?}", s.re, s.im, self.mean_spacing);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("re,im,delta") => {}
            other => {
                return Err(PerkError::Parse(format!(
                    "expected header re,im,delta, got {other:?}"
                )))
            }
        }
        let mut shifts = Vec::new();
        let mut delta = 0.0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()?;
            if vals.len() != 3 {
                return Err(PerkError::Parse(format!("expected three columns in {line:?}")));
            }
            shifts.push(Complex64::new(vals[0], vals[1]));
            delta = vals[2];
        }
        Ok(Self {
            shifts,
            mean_spacing: delta,
        })
    }

    pub fn max_spacing(&self) -> f64 {
        self.shifts
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0, f64::max)
    }
}

fn cross(o: Complex64, a: Complex64, b: Complex64) -> f64 {
    (a.re - o.re) * (b.im - o.im) - (a.im - o.im) * (b.re - o.re)
}

/// Lower convex chain (Andrew's monotone chain) of the points with
/// `Im <= tol`, collinear points kept, ordered by increasing real part.
pub fn lower_hull(eigenvalues: &[Complex64]) -> Vec<Complex64> {
    let scale = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut pts: Vec<Complex64> = eigenvalues.iter().copied().filter(|l| l.im <= tol).collect();
    pts.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    pts.dedup_by(|a, b| (*a - *b).norm() <= tol);
    let eps = 1e-13 * scale * scale;
    let mut hull: Vec<Complex64> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) < -eps {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Convex hull of the lower half of the spectrum, resampled so consecutive
/// shifts are at most the mean vertex spacing apart.
pub fn hull_shifts(spectrum: &Spectrum) -> Result<HullShifts> {
    if spectrum.len() < 3 {
        return invalid("hull construction needs at least three eigenvalues");
    }
    let hull = lower_hull(&spectrum.eigenvalues);
    if hull.len() < 2 {
        return Ok(HullShifts {
            shifts: hull,
            mean_spacing: 0.0,
        });
    }
    let delta = hull.windows(2).map(|w| (w[1] - w[0]).norm()).sum::<f64>() / (hull.len() - 1) as f64;
    let mut shifts = vec![hull[0]];
    for w in hull.windows(2) {
        let len = (w[1] - w[0]).norm();
        let pieces = ((len / delta) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            shifts.push(w[0] + (w[1] - w[0]) * (k as f64 / pieces as f64));
        }
    }
    Ok(HullShifts {
        shifts,
        mean_spacing: delta,
    })
}

/// Distance from `p` to the polyline through `chain`.
pub fn distance_to_chain(p: Complex64, chain: &[Complex64]) -> f64 {
    if chain.len() == 1 {
        return (p - chain[0]).norm();
    }
    chain
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let len2 = d.norm_sqr();
            let t = if len2 > 0.0 {
                ((p - w[0]) * d.conj()).re / len2
            } else {
                0.0
            };
            (p - (w[0] + d * t.clamp(0.0, 1.0))).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `max_{p in from} dist(p, to)` for two polylines.
pub fn one_sided_hausdorff(from: &[Complex64], to: &[Complex64]) -> f64 {
    from.iter()
        .map(|&p| distance_to_chain(p, to))
        .fold(0.0, f64::max)
}

/// LU factors of `A - shift I` with zero multipliers skipped during
/// elimination and both factors stored row-sparse.
struct ShiftedLu {
    perm: Vec<usize>,
    lower: Vec<Vec<(usize, Complex64)>>,
    upper: Vec<Vec<(usize, Complex64)>>,
}

impl ShiftedLu {
    /// `None` when a pivot falls below `min_pivot * ||A - shift I||_inf`.
    fn factor(op: &LinearOperator, shift: Complex64, min_pivot: f64) -> Option<Self> {
        let n = op.dim();
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for (j, v) in op.row(i) {
                a[i * n + j] += v;
            }
            a[i * n + i] -= shift;
        }
        let norm = (0..n)
            .map(|i| a[i * n..(i + 1) * n].iter().map(|v| v.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut row_nz: Vec<usize> = Vec::with_capacity(n);
        for k in 0..n {
            let (p, pmag) = (k..n)
                .map(|i| (i, a[i * n + k].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pmag > min_pivot * norm.max(f64::MIN_POSITIVE)) {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            row_nz.clear();
            row_nz.extend((k + 1..n).filter(|&j| a[k * n + j] != Complex64::new(0.0, 0.0)));
            for i in k + 1..n {
                let entry = a[i * n + k];
                if entry == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let l = entry / pivot;
                a[i * n + k] = l;
                for &j in &row_nz {
                    let v = a[k * n + j];
                    a[i * n + j] -= l * v;
                }
            }
        }
        let zero = Complex64::new(0.0, 0.0);
        let lower = (0..n)
            .map(|i| (0..i).filter(|&j| a[i * n + j] != zero).map(|j| (j, a[i * n + j])).collect())
            .collect();
        let upper = (0..n)
            .map(|i| (i..n).filter(|&j| j == i || a[i * n + j] != zero).map(|j| (j, a[i * n + j])).collect())
            .collect();
        Some(Self { perm, lower, upper })
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = b.len();
        let mut y: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = y[i];
            for &(j, l) in &self.lower[i] {
                acc -= l * y[j];
            }
            y[i] = acc;
        }
        for i in (0..n).rev() {
            let row = &self.upper[i];
            let mut acc = y[i];
            for &(j, u) in &row[1..] {
                acc -= u * y[j];
            }
            y[i] = acc / row[0].1;
        }
        y
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArnoldiConfig {
    pub eigs_per_shift: usize,
    /// Relative residual tolerance: `||A v - lambda v|| <= tol * ||A||_inf`.
    pub tol: f64,
    /// Initial Krylov dimension; defaults to `4 * eigs_per_shift`.
    pub subspace: Option<usize>,
    /// Hard cap on the Krylov dimension when unconverged pairs remain.
    pub max_subspace: Option<usize>,
    pub seed: u64,
}

impl ArnoldiConfig {
    pub fn new(eigs_per_shift: usize, tol: f64, seed: u64) -> Self {
        Self {
            eigs_per_shift,
            tol,
            subspace: None,
            max_subspace: None,
            seed,
        }
    }

    /// `ceil(target / shifts)` eigenvalues per shift.
    pub fn for_target(target: usize, shifts: usize, tol: f64, seed: u64) -> Self {
        Self::new(target.div_ceil(shifts.max(1)), tol, seed)
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigenvector of a small complex matrix for an eigenvalue estimate, by
/// inverse iteration.
fn small_eigenvector(h: &DMatrix<Complex64>, theta: Complex64) -> DVector<Complex64> {
    let m = h.nrows();
    let perturb = Complex64::new(1.0, 1.0) * (1e-10 * theta.norm().max(1e-300));
    let shifted = h - DMatrix::<Complex64>::identity(m, m) * (theta + perturb);
    let lu = shifted.lu();
    let mut y = DVector::<Complex64>::from_fn(m, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.3));
    for _ in 0..3 {
        match lu.solve(&y) {
            Some(next) => {
                let nrm = next.norm();
                if !(nrm > 0.0) || !nrm.is_finite() {
                    break;
                }
                y = next / Complex64::new(nrm, 0.0);
            }
            None => break,
        }
    }
    y
}

struct ShiftResult {
    pairs: Vec<(Complex64, f64)>,
    converged: bool,
}

fn arnoldi_at_shift(
    op: &LinearOperator,
    shift: Complex64,
    cfg: &ArnoldiConfig,
    rng: &mut ChaCha8Rng,
    op_norm: f64,
) -> Result<ShiftResult> {
    let n = op.dim();
    let k = cfg.eigs_per_shift.min(n);
    // A shift sitting on an eigenvalue swamps every other Ritz value.
    let (lu, shift) = match ShiftedLu::factor(op, shift, 1e-8) {
        Some(lu) => (lu, shift),
        None => {
            let nudged = shift + Complex64::new(1e-6 * op_norm, 1e-6 * op_norm);
            let lu = ShiftedLu::factor(op, nudged, 1e-14).ok_or_else(|| {
                PerkError::Numerical(format!("shifted system singular at {shift} and its perturbation"))
            })?;
            (lu, nudged)
        }
    };
    let mut m_target = cfg.subspace.unwrap_or(4 * k).max(k).min(n);
    let m_cap = cfg.max_subspace.unwrap_or(4 * m_target).max(m_target).min(n);

    let mut v0: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, 0.0)).collect();
    let nv = norm(&v0);
    v0.iter_mut().for_each(|x| *x /= nv);
    let mut basis: Vec<Vec<Complex64>> = vec![v0];
    let mut h = DMatrix::<Complex64>::zeros(m_cap + 1, m_cap);
    let mut built = 0;
    let mut exhausted = false;

    loop {
        while built < m_target && !exhausted {
            let j = built;
            let mut w = lu.solve(&basis[j]);
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let c = dot(v, &w);
                    h[(i, j)] += c;
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let beta = norm(&w);
            h[(j + 1, j)] = Complex64::new(beta, 0.0);
            built += 1;
            let col_scale = (0..=j).map(|i| h[(i, j)].norm()).fold(beta, f64::max);
            if beta <= 1e-12 * col_scale || built == n {
                exhausted = true;
            } else {
                w.iter_mut().for_each(|x| *x /= beta);
                basis.push(w);
            }
        }

        let hm = h.view((0, 0), (built, built)).into_owned();
        let thetas: Vec<Complex64> = nalgebra::linalg::Schur::try_new(hm.clone(), f64::EPSILON, 100_000)
            .and_then(|s| s.eigenvalues())
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| PerkError::Numerical("Hessenberg eigenvalue iteration failed".into()))?;
        let mut order: Vec<usize> = (0..thetas.len()).collect();
        order.sort_by(|&a, &b| thetas[b].norm().total_cmp(&thetas[a].norm()));

        let mut pairs = Vec::with_capacity(k);
        let mut all_ok = true;
        for &idx in order.iter().take(k) {
            let theta = thetas[idx];
            if theta.norm() == 0.0 {
                all_ok = false;
                continue;
            }
            let lambda = shift + Complex64::new(1.0, 0.0) / theta;
            let y = small_eigenvector(&hm, theta);
            let mut v = vec![Complex64::new(0.0, 0.0); n];
            for (c, b) in y.iter().zip(&basis) {
                v.iter_mut().zip(b).for_each(|(x, bv)| *x += c * bv);
            }
            let av = op.apply_complex(&v);
            let res: f64 = av
                .iter()
                .zip(&v)
                .map(|(a, x)| (a - lambda * x).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / norm(&v);
            if res <= cfg.tol * op_norm {
                pairs.push((lambda, res));
            } else {
                all_ok = false;
            }
        }
        if all_ok || exhausted || m_target >= m_cap {
            return Ok(ShiftResult {
                converged: all_ok,
                pairs,
            });
        }
        m_target = (2 * m_target).min(m_cap);
    }
}

/// Shift-invert Arnoldi at every shift, merged into one spectrum sorted by
/// `(re, im)` with near-duplicates removed and conjugates mirrored in.
pub fn arnoldi_estimate(op: &LinearOperator, shifts: &HullShifts, cfg: &ArnoldiConfig) -> Result<Spectrum> {
    let n = op.dim();
    let mut spec = Spectrum::from_eigenvalues(Vec::new(), format!("arnoldi(n={n},seed={})", cfg.seed));
    spec.source_dim = n;
    spec.seed = Some(cfg.seed);
    if cfg.eigs_per_shift == 0 || n == 0 || shifts.shifts.is_empty() {
        return Ok(spec);
    }
    let op_norm = op.norm_inf().max(f64::MIN_POSITIVE);
    let mut found = Vec::new();
    let mut converged = true;
    for (idx, &shift) in shifts.shifts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(idx as u64));
        let res = arnoldi_at_shift(op, shift, cfg, &mut rng, op_norm)?;
        converged &= res.converged;
        found.extend(res.pairs);
    }
    let scale = found.iter().map(|(l, _)| l.norm()).fold(0.0, f64::max);
    let tol = 1e-8 * scale;
    let mirrored: Vec<(Complex64, f64)> = found
        .iter()
        .filter(|(l, _)| l.im.abs() > 1e-12 * scale)
        .map(|(l, r)| (l.conj(), *r))
        .collect();
    found.extend(mirrored);
    let merged = sort_dedup(found, tol);
    spec.eigenvalues = merged.iter().map(|p| p.0).collect();
    spec.residuals = merged.iter().map(|p| p.1).collect();
    spec.all_converged = converged;
    Ok(spec)
}

/// Central-difference Jacobian; `epsilon` defaults to `1e-7 * max(1, |u|_inf)`.
pub fn finite_difference_jacobian<F>(rhs: F, u: &[f64], epsilon: Option<f64>) -> Result<LinearOperator>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = u.len();
    let eps = epsilon.unwrap_or_else(|| 1e-7 * u.iter().fold(1.0f64, |m, x| m.max(x.abs())));
    if !(eps > 0.0) {
        return invalid("finite-difference step must be positive");
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    let mut work = u.to_vec();
    for j in 0..n {
        work[j] = u[j] + eps;
        let plus = rhs(&work);
        work[j] = u[j] - eps;
        let minus = rhs(&work);
        work[j] = u[j];
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * eps);
        }
    }
    LinearOperator::from_dense(&jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_needs_three_points() {
        let s = Spectrum::from_eigenvalues(vec![Complex64::new(-1.0, 0.0); 2], "x");
        assert!(hull_shifts(&s).is_err());
    }

    #[test]
    fn dedup_keeps_smaller_residual() {
        let items = vec![
            (Complex64::new(-1.0, 0.0), 1e-3),
            (Complex64::new(-1.0 + 1e-12, 0.0), 1e-6),
            (Complex64::new(-2.0, 0.0), 0.0),
        ];
        let out = sort_dedup(items, 1e-9);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].1, 1e-6);
    }

    #[test]
    fn lu_solves_shifted_system() {
        let op = LinearOperator::from_rows(vec![
            vec![(0, 2.0), (1, 1.0)],
            vec![(0, 1.0), (2, 3.0)],
            vec![(1, -1.0), (2, 4.0)],
        ]);
        let shift = Complex64::new(0.5, -0.25);
        let lu = ShiftedLu::factor(&op, shift, 1e-14).unwrap();
        let b = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 2.0), Complex64::new(-1.0, 1.0)];
        let x = lu.solve(&b);
        let ax = op.apply_complex(&x);
        for i in 0..3 {
            assert!((ax[i] - shift * x[i] - b[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn singular_shift_is_detected() {
        let op = LinearOperator::from_rows(vec![vec![(0, -1.0)], vec![(1, -2.0)]]);
        assert!(ShiftedLu::factor(&op, Complex64::new(-1.0, 0.0), 1e-14).is_none());
    }

    #[test]
    fn csv_round_trip() {
        let s = Spectrum::from_eigenvalues(vec![Complex64::new(-0.1, 1.0 / 3.0)], "x");
        let back = Spectrum::from_csv(&s.to_csv(), "y").unwrap();
        assert_eq!(back.eigenvalues, s.eigenvalues);
    }
}
