//! Stability polynomials `P(z) = sum_{i<=p} z^i/i! + sum_{i>p} alpha_i z^i`
//! and their optimization for a maximal stable timestep on a given spectrum.
//!
//! The optimizer bisects on `dt`; each candidate solves the convex problem
//! `min_alpha max_j |P(dt * lambda_j)|` in a shifted and scaled monomial basis
//! centered on the scaled spectrum, with a log-barrier Newton method on the
//! second-order-cone epigraph. Feasibility is always judged on the monomial
//! coefficients that are returned, never on solver internals.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PerkError, Result};
use crate::spectra::Spectrum;

pub const MAX_DEGREE: usize = 16;
pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const DEFAULT_DT_TOL: f64 = 1e-6;
const UNBOUNDED_DT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityPolynomial {
    #[serde(rename = "p")]
    pub order: usize,
    #[serde(rename = "E")]
    pub degree: usize,
    #[serde(rename = "alpha")]
    pub free_coeffs: Vec<f64>,
    pub dt_opt: f64,
    pub spectrum_id: String,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl StabilityPolynomial {
    pub fn new(order: usize, degree: usize, free_coeffs: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return invalid("order must be at least one");
        }
        if degree < order {
            return invalid(format!("degree {degree} below order {order}"));
        }
        if free_coeffs.len() != degree - order {
            return invalid(format!(
                "expected {} free coefficients, got {}",
                degree - order,
                free_coeffs.len()
            ));
        }
        if free_coeffs.iter().any(|a| !a.is_finite()) {
            return invalid("free coefficients must be finite");
        }
        Ok(Self {
            order,
            degree,
            free_coeffs,
            dt_opt: 0.0,
            spectrum_id: String::new(),
        })
    }

    /// Truncated exponential of degree `order`.
    pub fn taylor(order: usize) -> Self {
        Self::new(order, order, Vec::new()).expect("order >= 1")
    }

    /// Builds from full monomial coefficients, checking the fixed Taylor part.
    pub fn from_coefficients(order: usize, coeffs: &[f64], tol: f64) -> Result<Self> {
        if coeffs.len() <= order {
            return invalid("too few coefficients for the requested order");
        }
        for (i, c) in coeffs.iter().take(order + 1).enumerate() {
            let expected = 1.0 / factorial(i);
            if (c - expected).abs() > tol * expected.max(1.0) {
                return invalid(format!(
                    "coefficient of z^{i} is {c}, expected {expected}"
                ));
            }
        }
        Self::new(order, coeffs.len() - 1, coeffs[order + 1..].to_vec())
    }

    /// All `degree + 1` monomial coefficients.
    pub fn coefficients(&self) -> Vec<f64> {
        (0..=self.order)
            .map(|i| 1.0 / factorial(i))
            .chain(self.free_coeffs.iter().copied())
            .collect()
    }

    pub fn evaluate(&self, z: Complex64) -> Complex64 {
        horner(&self.coefficients(), z)
    }

    pub fn with_dt(mut self, dt: f64, spectrum_id: impl Into<String>) -> Self {
        self.dt_opt = dt;
        self.spectrum_id = spectrum_id.into();
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let poly: Self = serde_json::from_str(text)?;
        Self::new(poly.order, poly.degree, poly.free_coeffs.clone())?;
        Ok(poly)
    }
}

pub fn horner(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

fn max_modulus(coeffs: &[f64], points: &[Complex64], dt: f64) -> f64 {
    points
        .iter()
        .map(|&l| horner(coeffs, l * dt).norm())
        .fold(0.0, f64::max)
}

/// Eigenvalues folded into the closed lower half-plane with exact duplicates
/// removed; `|P(conj z)| = |P(z)|` for real coefficients.
fn fold_spectrum(eigenvalues: &[Complex64]) -> Vec<Complex64> {
    let mut pts: Vec<Complex64> = eigenvalues
        .iter()
        .map(|l| if l.im > 0.0 { l.conj() } else { *l })
        .collect();
    pts.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    pts.dedup();
    pts
}

fn spectral_scale(points: &[Complex64]) -> f64 {
    points.iter().map(|l| l.norm()).fold(0.0, f64::max)
}

fn check_spectrum(eigenvalues: &[Complex64]) -> Result<()> {
    if eigenvalues.is_empty() {
        return invalid("spectrum is empty");
    }
    if eigenvalues.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
        return invalid("spectrum contains non-finite eigenvalues");
    }
    let scale = spectral_scale(eigenvalues);
    if let Some(l) = eigenvalues.iter().find(|l| l.re > 1e-9 * scale) {
        return invalid(format!("eigenvalue {l} lies in the right half-plane"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableDt {
    pub dt: f64,
    /// Set when no finite bound exists, i.e. the spectrum is `{0}`.
    pub unbounded: bool,
}

/// Largest `dt` with `|P(dt * lambda)| <= 1 + 1e-9` on the spectrum, by
/// bisection to relative width `tol`. Assumes feasibility is monotone in `dt`.
pub fn max_stable_dt(poly: &StabilityPolynomial, spectrum: &Spectrum, tol: f64) -> Result<StableDt> {
    check_spectrum(&spectrum.eigenvalues)?;
    let pts = fold_spectrum(&spectrum.eigenvalues);
    let scale = spectral_scale(&pts);
    if scale == 0.0 {
        return Ok(StableDt {
            dt: UNBOUNDED_DT,
            unbounded: true,
        });
    }
    let coeffs = poly.coefficients();
    let feasible = |dt: f64| max_modulus(&coeffs, &pts, dt) <= 1.0 + FEASIBILITY_TOL;
    let mut hi = 4.0 * poly.degree.max(1) as f64 / scale;
    let mut doublings = 0;
    while feasible(hi) {
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Ok(StableDt {
                dt: UNBOUNDED_DT,
                unbounded: true,
            });
        }
    }
    if !feasible(hi * 1e-9) {
        return Err(PerkError::Numerical(
            "polynomial is unstable for arbitrarily small timesteps".into(),
        ));
    }
    let mut lo = 0.0;
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(StableDt {
        dt: lo,
        unbounded: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolution {
    /// Free monomial coefficients `alpha_{p+1} .. alpha_E` in the variable `z = dt * lambda`.
    pub alpha: Vec<f64>,
    /// `max_j |P(dt * lambda_j)|` evaluated on the returned monomial coefficients.
    pub max_modulus: f64,
    pub newton_steps: usize,
    pub converged: bool,
}

/// Epigraph log-barrier state for `min t s.t. |f_j + G_j y| <= t`.
struct Barrier<'a> {
    f: &'a [Complex64],
    g: &'a DMatrix<Complex64>,
}

impl Barrier<'_> {
    fn residual(&self, y: &[f64], j: usize) -> Complex64 {
        let mut r = self.f[j];
        for (l, yl) in y.iter().enumerate() {
            r += self.g[(j, l)] * *yl;
        }
        r
    }

    fn value(&self, y: &[f64], t: f64, mu: f64) -> f64 {
        if t <= 0.0 {
            return f64::INFINITY;
        }
        let mut acc = mu * t;
        for j in 0..self.f.len() {
            let s = t * t - self.residual(y, j).norm_sqr();
            if s <= 0.0 {
                return f64::INFINITY;
            }
            acc -= s.ln();
        }
        acc
    }

    /// With `decide = Some(level)` the solve stops once the optimum is known to
    /// lie on one side of `level`.
    fn solve(&self, decide: Option<f64>) -> (Vec<f64>, usize, bool) {
        let m = self.f.len();
        let n = self.g.ncols();
        let mut y = vec![0.0; n];
        let mut t = 1.1 * self.f.iter().map(|r| r.norm()).fold(0.0, f64::max) + 1e-3;
        let mut mu = m as f64 / t;
        let mut steps = 0;
        let mut converged = false;
        for _round in 0..60 {
            for _ in 0..200 {
                let mut grad = DVector::<f64>::zeros(n + 1);
                let mut hess = DMatrix::<f64>::zeros(n + 1, n + 1);
                let mut jac = vec![0.0; n + 1];
                grad[n] = mu;
                for j in 0..m {
                    let r = self.residual(&y, j);
                    let s = t * t - r.norm_sqr();
                    for l in 0..n {
                        let gl = self.g[(j, l)];
                        jac[l] = -2.0 * (r.re * gl.re + r.im * gl.im);
                    }
                    jac[n] = 2.0 * t;
                    let inv = 1.0 / s;
                    let inv2 = inv * inv;
                    for a in 0..=n {
                        grad[a] -= jac[a] * inv;
                        for b in 0..=a {
                            hess[(a, b)] += jac[a] * jac[b] * inv2;
                        }
                    }
                    for a in 0..n {
                        let ga = self.g[(j, a)];
                        for b in 0..=a {
                            let gb = self.g[(j, b)];
                            hess[(a, b)] += 2.0 * (ga.re * gb.re + ga.im * gb.im) * inv;
                        }
                    }
                    hess[(n, n)] -= 2.0 * inv;
                }
                for a in 0..=n {
                    for b in 0..a {
                        hess[(b, a)] = hess[(a, b)];
                    }
                }
                let Some(dx) = hess.lu().solve(&(-&grad)) else {
                    break;
                };
                let decrement = -grad.dot(&dx);
                steps += 1;
                if !(decrement > 0.0) || decrement / 2.0 < 1e-12 {
                    break;
                }
                let f0 = self.value(&y, t, mu);
                let mut step = 1.0;
                loop {
                    let y_new: Vec<f64> = y.iter().zip(dx.iter()).map(|(a, d)| a + step * d).collect();
                    let t_new = t + step * dx[n];
                    if self.value(&y_new, t_new, mu) <= f0 - 0.25 * step * decrement {
                        y = y_new;
                        t = t_new;
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-14 {
                        break;
                    }
                }
                if step < 1e-14 {
                    break;
                }
            }
            if m as f64 / mu < 1e-13 * t.max(1.0) {
                converged = true;
                break;
            }
            if let Some(level) = decide {
                let attained = (0..m).map(|j| self.residual(&y, j).norm()).fold(0.0, f64::max);
                if attained <= level || t - 2.0 * m as f64 / mu > level {
                    break;
                }
            }
            mu *= 20.0;
        }
        (y, steps, converged)
    }
}

/// Minimizes `max_j |P(dt * lambda_j)|` over the free coefficients.
pub fn inner_feasibility(eigenvalues: &[Complex64], order: usize, degree: usize, dt: f64) -> Result<InnerSolution> {
    inner_solve(eigenvalues, order, degree, dt, None)
}

fn inner_solve(
    eigenvalues: &[Complex64],
    order: usize,
    degree: usize,
    dt: f64,
    decide: Option<f64>,
) -> Result<InnerSolution> {
    if order == 0 || degree < order {
        return invalid(format!("degree {degree} below order {order}"));
    }
    if degree > MAX_DEGREE {
        return invalid(format!("degree {degree} exceeds the supported maximum {MAX_DEGREE}"));
    }
    if !(dt >= 0.0) {
        return invalid("timestep must be non-negative");
    }
    check_spectrum(eigenvalues)?;
    let pts = fold_spectrum(eigenvalues);
    let taylor: Vec<f64> = (0..=order).map(|i| 1.0 / factorial(i)).collect();
    if degree == order {
        return Ok(InnerSolution {
            alpha: Vec::new(),
            max_modulus: max_modulus(&taylor, &pts, dt),
            newton_steps: 0,
            converged: true,
        });
    }

    let z: Vec<Complex64> = pts.iter().map(|l| l * dt).collect();
    let re_min = z.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
    let re_max = z.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (re_min + re_max);
    let mut radius = z.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
    if radius == 0.0 {
        radius = 1.0;
    }
    let size = degree + 1;

    // monomial coefficient of z^j in ((z - center) / radius)^k
    let mut to_monomial = DMatrix::<f64>::zeros(size, size);
    for k in 0..size {
        for j in 0..=k {
            to_monomial[(j, k)] =
                binomial(k, j) * (-center).powi((k - j) as i32) / radius.powi(k as i32);
        }
    }

    // orthonormal bases of the row space of the Taylor constraints and of its complement
    let constraints = to_monomial.rows(0, order + 1).transpose();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(size);
    let push_orthogonal = |v: DVector<f64>, basis: &mut Vec<DVector<f64>>| {
        let mut v = v;
        for _ in 0..2 {
            for q in basis.iter() {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
            true
        } else {
            false
        }
    };
    for c in 0..=order {
        let col = constraints.column(c).into_owned();
        let scale = col.norm();
        if !push_orthogonal(col / scale, &mut basis) {
            return Err(PerkError::Numerical("degenerate order constraints".into()));
        }
    }
    for e in 0..size {
        if basis.len() == size {
            break;
        }
        push_orthogonal(DVector::from_fn(size, |i, _| if i == e { 1.0 } else { 0.0 }), &mut basis);
    }
    if basis.len() != size {
        return Err(PerkError::Numerical("failed to complete the null-space basis".into()));
    }
    let row_basis = DMatrix::from_columns(&basis[..=order]);
    let null_basis = DMatrix::from_columns(&basis[order + 1..]);
    let fixed = DVector::from_vec(taylor.clone());
    let reduced = to_monomial.rows(0, order + 1) * &row_basis;
    let Some(coef) = reduced.lu().solve(&fixed) else {
        return Err(PerkError::Numerical("singular order-constraint system".into()));
    };
    let particular = &row_basis * coef;

    let free = degree - order;
    let w: Vec<Complex64> = z.iter().map(|v| (v - center) / radius).collect();
    let mut f = vec![Complex64::new(0.0, 0.0); w.len()];
    let mut g = DMatrix::<Complex64>::zeros(w.len(), free);
    for (j, wj) in w.iter().enumerate() {
        let mut power = Complex64::new(1.0, 0.0);
        for k in 0..size {
            f[j] += power * particular[k];
            for l in 0..free {
                g[(j, l)] += power * null_basis[(k, l)];
            }
            power *= wj;
        }
    }

    let (y, newton_steps, converged) = Barrier { f: &f, g: &g }.solve(decide);
    let shifted = particular + null_basis * DVector::from_vec(y);
    let mono = &to_monomial * shifted;
    let alpha: Vec<f64> = mono.iter().skip(order + 1).copied().collect();
    let full: Vec<f64> = taylor.iter().copied().chain(alpha.iter().copied()).collect();
    Ok(InnerSolution {
        alpha,
        max_modulus: max_modulus(&full, &pts, dt),
        newton_steps,
        converged,
    })
}

/// Bisection on `dt` over `[0, 4 E / max|lambda|]` with the convex inner
/// problem; returns the polynomial at the largest certified feasible `dt`.
pub fn optimize(spectrum: &Spectrum, order: usize, degree: usize, tol: f64) -> Result<StabilityPolynomial> {
    if degree < order {
        return invalid(format!("degree {degree} below order {order}"));
    }
    if degree > MAX_DEGREE {
        return invalid(format!("degree {degree} exceeds the supported maximum {MAX_DEGREE}"));
    }
    check_spectrum(&spectrum.eigenvalues)?;
    if degree == order {
        let poly = StabilityPolynomial::taylor(order);
        let dt = max_stable_dt(&poly, spectrum, tol)?;
        return Ok(poly.with_dt(dt.dt, spectrum.label.clone()));
    }
    let pts = fold_spectrum(&spectrum.eigenvalues);
    let scale = spectral_scale(&pts);
    if scale == 0.0 {
        return invalid("spectrum is identically zero; every timestep is stable");
    }
    let mut lo = 0.0;
    let mut hi = 4.0 * degree as f64 / scale;
    let mut best: Option<Vec<f64>> = None;
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        let sol = inner_solve(&pts, order, degree, mid, Some(1.0 + 0.5 * FEASIBILITY_TOL))?;
        if sol.max_modulus <= 1.0 + FEASIBILITY_TOL {
            lo = mid;
            best = Some(sol.alpha);
        } else {
            hi = mid;
        }
    }
    let alpha = best.ok_or_else(|| {
        PerkError::Numerical(format!(
            "no feasible timestep found for p={order}, E={degree}"
        ))
    })?;
    Ok(StabilityPolynomial::new(order, degree, alpha)?.with_dt(lo, spectrum.label.clone()))
}

/// Closed-form optimum for the unit disk centred at -1 and `p = 2`:
/// `P(z) = (E-1)/E (1 + z/(E-1))^E + 1/E`, stable up to `dt = E - 1`.
pub fn disk_optimal_p2(degree: usize) -> Result<StabilityPolynomial> {
    if degree < 2 {
        return invalid("degree must be at least two");
    }
    let e = degree as f64;
    let r = e - 1.0;
    let mut coeffs: Vec<f64> = (0..=degree)
        .map(|k| (r / e) * binomial(degree, k) / r.powi(k as i32))
        .collect();
    coeffs[0] += 1.0 / e;
    Ok(StabilityPolynomial::new(2, degree, coeffs[3..].to_vec())?.with_dt(r, "disk"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(16, 8), 12870.0);
        assert_eq!(binomial(3, 0), 1.0);
    }

    #[test]
    fn coefficient_count_is_checked() {
        assert!(StabilityPolynomial::new(2, 4, vec![0.1]).is_err());
        assert!(StabilityPolynomial::new(3, 2, vec![]).is_err());
    }

    #[test]
    fn disk_optimal_keeps_taylor_part() {
        for e in 2..=16 {
            let p = disk_optimal_p2(e).unwrap();
            let c = p.coefficients();
            assert!((c[0] - 1.0).abs() < 1e-15);
            assert!((c[1] - 1.0).abs() < 1e-15);
            assert!((c[2] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn degree_cap() {
        let s = Spectrum::from_eigenvalues(vec![Complex64::new(-1.0, 0.0)], "x");
        assert!(optimize(&s, 2, 17, 1e-6).is_err());
    }

    #[test]
    fn right_half_plane_rejected() {
        let s = Spectrum::from_eigenvalues(vec![Complex64::new(1.0, 0.0)], "x");
        assert!(max_stable_dt(&StabilityPolynomial::taylor(2), &s, 1e-6).is_err());
    }
}
