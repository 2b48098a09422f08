//! Two-register P-ERK Butcher tableaus.
//!
//! Every member of a family shares the abscissae `c` and weights `b`. Row `i`
//! of a member's Butcher matrix has at most two nonzeros: `a_first[i]` in the
//! first column and `a_sub[i]` in the column of the member's previous active
//! stage. Inactive stages carry `a_sub = 0`, so their intermediate state is a
//! forward-Euler step of length `c_i` from `K_1`.
//!
//! Stage indices are zero-based throughout; stage `0` is the first stage.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PerkError, Result};
use crate::stabpoly::StabilityPolynomial;

pub const DEFAULT_MAX_RESTARTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StagePattern {
    /// Shared evaluations at the end: `{1} u {S-E+2, .., S}`.
    Standard,
    /// Active stages spread evenly over `{2, .., S}`.
    Alternating,
    /// Shared evaluations at the start: `{1, .., E-1} u {S}`.
    EarlyShared,
}

impl StagePattern {
    pub const ALL: [StagePattern; 3] = [Self::Standard, Self::Alternating, Self::EarlyShared];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::Alternating => "alternating",
            Self::EarlyShared => "early_shared",
        }
    }

    /// Activity mask of length `stages` with exactly `evals` active stages.
    pub fn mask(self, stages: usize, evals: usize) -> Result<Vec<bool>> {
        if evals < 2 || evals > stages {
            return invalid(format!("cannot place {evals} evaluations in {stages} stages"));
        }
        let mut mask = vec![false; stages];
        mask[0] = true;
        match self {
            Self::Standard => mask[stages - evals + 1..].iter_mut().for_each(|m| *m = true),
            Self::EarlyShared => {
                mask[..evals - 1].iter_mut().for_each(|m| *m = true);
                mask[stages - 1] = true;
            }
            Self::Alternating => {
                let spacing = (stages - 1) as f64 / (evals - 1) as f64;
                for m in 1..evals {
                    mask[(m as f64 * spacing).round() as usize] = true;
                }
            }
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count != evals {
            return Err(PerkError::Construction(format!(
                "{} mask for S={stages}, E={evals} has {count} active stages",
                self.as_str()
            )));
        }
        Ok(mask)
    }
}

impl fmt::Display for StagePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StagePattern {
    type Err = PerkError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "alternating" => Ok(Self::Alternating),
            "early_shared" => Ok(Self::EarlyShared),
            other => Err(PerkError::Parse(format!("unknown stage pattern {other:?}"))),
        }
    }
}

pub fn abscissae(order: usize, stages: usize) -> Result<Vec<f64>> {
    match order {
        2 if stages >= 2 => Ok((0..stages)
            .map(|i| i as f64 / (2.0 * (stages - 1) as f64))
            .collect()),
        3 if stages == 3 => Ok(vec![0.0, 1.0, 0.5]),
        3 if stages > 3 => {
            let mut c: Vec<f64> = (0..stages - 2)
                .map(|i| i as f64 / (stages - 3) as f64)
                .collect();
            c.extend([1.0, 0.5]);
            Ok(c)
        }
        2 | 3 => invalid(format!("too few stages ({stages}) for order {order}")),
        _ => invalid(format!("unsupported order {order}")),
    }
}

/// Shared weights: `e_S` for order 2, the three-stage third-order tail
/// `(1/6, .., 1/6, 4/6)` for order 3.
pub fn weights(order: usize, stages: usize) -> Result<Vec<f64>> {
    let mut b = vec![0.0; stages];
    match order {
        2 if stages >= 2 => b[stages - 1] = 1.0,
        3 if stages >= 3 => {
            b[0] = 1.0 / 6.0;
            b[stages - 2] = 1.0 / 6.0;
            b[stages - 1] = 4.0 / 6.0;
        }
        2 | 3 => return invalid(format!("too few stages ({stages}) for order {order}")),
        _ => return invalid(format!("unsupported order {order}")),
    }
    Ok(b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerkMember {
    pub stage_count: usize,
    pub eval_count: usize,
    /// First-column entries; `a_first[0] = 0`.
    pub a_first: Vec<f64>,
    /// Coefficient of the previous active stage; zero for inactive stages.
    pub a_sub: Vec<f64>,
    pub active: Vec<bool>,
}

impl PerkMember {
    /// Member from its `a_sub` column; `a_first = c - a_sub`.
    pub fn from_a_sub(c: &[f64], active: Vec<bool>, a_sub: Vec<f64>) -> Result<Self> {
        let stages = c.len();
        if active.len() != stages || a_sub.len() != stages {
            return invalid("mask and coefficient lengths must equal the stage count");
        }
        if !active[0] {
            return invalid("the first stage is always active");
        }
        let a_first = c.iter().zip(&a_sub).map(|(ci, ai)| ci - ai).collect();
        Ok(Self {
            stage_count: stages,
            eval_count: active.iter().filter(|&&a| a).count(),
            a_first,
            a_sub,
            active,
        })
    }

    /// Previous active stage of stage `i >= 1`.
    pub fn source_stage(&self, i: usize) -> usize {
        (0..i).rev().find(|&j| self.active[j]).unwrap_or(0)
    }

    /// Active stages after the first, ascending.
    pub fn chain(&self) -> Vec<usize> {
        (1..self.stage_count).filter(|&i| self.active[i]).collect()
    }

    pub fn butcher_matrix(&self) -> DMatrix<f64> {
        let s = self.stage_count;
        let mut a = DMatrix::zeros(s, s);
        for i in 1..s {
            a[(i, 0)] += self.a_first[i];
            a[(i, self.source_stage(i))] += self.a_sub[i];
        }
        a
    }

    /// Monomial coefficients of the member's stability polynomial with weights `b`.
    pub fn polynomial_coefficients(&self, c: &[f64], b: &[f64]) -> Vec<f64> {
        member_polynomial(c, b, &self.active, &self.a_sub)
    }

    /// `1 + z b^T (I - z A)^{-1} 1` by a dense complex solve.
    pub fn resolvent(&self, b: &[f64], z: Complex64) -> Result<Complex64> {
        let s = self.stage_count;
        let a = self.butcher_matrix().map(|v| Complex64::new(v, 0.0));
        let m = DMatrix::<Complex64>::identity(s, s) - a * z;
        let ones = DVector::from_element(s, Complex64::new(1.0, 0.0));
        let x = m
            .lu()
            .solve(&ones)
            .ok_or_else(|| PerkError::Numerical("singular resolvent".into()))?;
        Ok(Complex64::new(1.0, 0.0) + z * x.iter().zip(b).map(|(xi, bi)| xi * *bi).sum::<Complex64>())
    }
}

fn poly_add_scaled(acc: &mut Vec<f64>, p: &[f64], s: f64) {
    if acc.len() < p.len() {
        acc.resize(p.len(), 0.0);
    }
    acc.iter_mut().zip(p).for_each(|(a, v)| *a += s * v);
}

/// Stage polynomials `d_i` with `Y_i = 1 + d_i(z)` for `y' = lambda y`:
/// `d_i = c_i z + a_sub_i z d_src(i)`, `d_0 = 0`. Returns `1 + z sum b_i (1 + d_i)`.
fn member_polynomial(c: &[f64], b: &[f64], active: &[bool], a_sub: &[f64]) -> Vec<f64> {
    let s = c.len();
    let mut stage: Vec<Vec<f64>> = vec![vec![0.0]; s];
    let mut last_active = 0;
    for i in 1..s {
        let mut d = vec![0.0, c[i]];
        if a_sub[i] != 0.0 {
            let src = &stage[last_active];
            let shifted: Vec<f64> = std::iter::once(0.0).chain(src.iter().copied()).collect();
            poly_add_scaled(&mut d, &shifted, a_sub[i]);
        }
        stage[i] = d;
        if active[i] {
            last_active = i;
        }
    }
    let mut sum = vec![b.iter().sum::<f64>()];
    for i in 0..s {
        if b[i] != 0.0 {
            poly_add_scaled(&mut sum, &stage[i], b[i]);
        }
    }
    let mut p = vec![1.0];
    poly_add_scaled(&mut p, &std::iter::once(0.0).chain(sum).collect::<Vec<_>>(), 1.0);
    while p.len() > 1 && p[p.len() - 1] == 0.0 {
        p.pop();
    }
    p
}

/// Second-order member in the standard pattern.
pub fn build_member_p2(poly: &StabilityPolynomial, c: &[f64], stages: usize) -> Result<PerkMember> {
    build_member_p2_pattern(poly, c, stages, StagePattern::Standard)
}

/// Second-order member: with active chain `s_2 < .. < s_E = S`, the free
/// coefficients satisfy `alpha_{3+i} = c_{s_{E-1-i}} prod_{m<=i} a_{s_{E-m}}`
/// and are reconstructed sequentially from the top of the chain.
pub fn build_member_p2_pattern(
    poly: &StabilityPolynomial,
    c: &[f64],
    stages: usize,
    pattern: StagePattern,
) -> Result<PerkMember> {
    if poly.order != 2 {
        return invalid(format!("expected an order-2 polynomial, got order {}", poly.order));
    }
    let evals = poly.degree;
    if c.len() != stages {
        return invalid("abscissae length differs from the stage count");
    }
    if evals > stages {
        return invalid(format!("degree {evals} exceeds stage count {stages}"));
    }
    let active = pattern.mask(stages, evals)?;
    let chain: Vec<usize> = (1..stages).filter(|&i| active[i]).collect();
    let mut a_sub = vec![0.0; stages];
    let mut product = 1.0;
    for (i, alpha) in poly.free_coeffs.iter().enumerate() {
        let target = chain[chain.len() - 1 - i];
        let below = chain[chain.len() - 2 - i];
        let denom = c[below] * product;
        let value = if *alpha == 0.0 {
            0.0
        } else if denom == 0.0 {
            return Err(PerkError::Construction(format!(
                "zero pivot in sequential reconstruction at stage {}",
                target + 1
            )));
        } else {
            alpha / denom
        };
        a_sub[target] = value;
        product *= value;
    }
    PerkMember::from_a_sub(c, active, a_sub)
}

/// Third-order member: matches the coefficients of `z^3 .. z^E` (the `z^3`
/// equation is the order condition `b^T A c = 1/6`) by Levenberg-Marquardt
/// from seeded random starts in `[0, c_i]`, accepting only solutions with
/// `0 <= a_sub <= c`.
pub fn build_member_p3(
    poly: &StabilityPolynomial,
    c: &[f64],
    b: &[f64],
    stages: usize,
    seed: u64,
) -> Result<PerkMember> {
    build_member_p3_pattern(poly, c, b, stages, StagePattern::Standard, seed, DEFAULT_MAX_RESTARTS)
}

pub fn build_member_p3_pattern(
    poly: &StabilityPolynomial,
    c: &[f64],
    b: &[f64],
    stages: usize,
    pattern: StagePattern,
    seed: u64,
    max_restarts: usize,
) -> Result<PerkMember> {
    if poly.order != 3 {
        return invalid(format!("expected an order-3 polynomial, got order {}", poly.order));
    }
    let evals = poly.degree;
    if c.len() != stages || b.len() != stages {
        return invalid("abscissae and weights must have one entry per stage");
    }
    if evals > stages {
        return invalid(format!("degree {evals} exceeds stage count {stages}"));
    }
    let active = pattern.mask(stages, evals)?;
    if let Some(i) = (0..stages).find(|&i| b[i] != 0.0 && !active[i]) {
        return invalid(format!(
            "stage {} carries a nonzero weight but is inactive in the {pattern} pattern",
            i + 1
        ));
    }
    let chain: Vec<usize> = (1..stages).filter(|&i| active[i]).collect();
    let unknowns: Vec<usize> = chain[1..].to_vec();
    let target = poly.coefficients();
    let scale: Vec<f64> = target[3..].iter().map(|t| t.abs().max(1e-300)).collect();

    let residual = |x: &[f64]| -> Vec<f64> {
        let mut a_sub = vec![0.0; stages];
        for (&s, &v) in unknowns.iter().zip(x) {
            a_sub[s] = v;
        }
        let p = member_polynomial(c, b, &active, &a_sub);
        (3..=evals)
            .map(|k| (p.get(k).copied().unwrap_or(0.0) - target[k]) / scale[k - 3])
            .collect()
    };
    let inf_norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_residual = f64::INFINITY;
    let mut last_violation = String::new();
    for _ in 0..max_restarts.max(1) {
        let start: Vec<f64> = unknowns.iter().map(|&s| rng.gen::<f64>() * c[s]).collect();
        let x = levenberg_marquardt(&residual, start);
        let r = inf_norm(&residual(&x));
        best_residual = best_residual.min(r);
        if !(r <= 1e-12) {
            continue;
        }
        let bad: Vec<String> = unknowns
            .iter()
            .zip(&x)
            .filter(|(&s, &v)| v < 0.0 || c[s] - v < 0.0)
            .map(|(&s, &v)| format!("a[{}]={v:e}", s + 1))
            .collect();
        if bad.is_empty() {
            let mut a_sub = vec![0.0; stages];
            for (&s, &v) in unknowns.iter().zip(&x) {
                a_sub[s] = v;
            }
            return PerkMember::from_a_sub(c, active, a_sub);
        }
        last_violation = bad.join(", ");
    }
    Err(PerkError::Construction(format!(
        "no admissible third-order member for S={stages}, E={evals} after {max_restarts} starts; \
         best residual {best_residual:e}; last positivity violation: [{last_violation}]"
    )))
}

/// Damped Gauss-Newton with an exact Jacobian. The residual is multilinear in
/// each unknown, so a column is `r(x_j = 1) - r(x_j = 0)`.
fn levenberg_marquardt<F>(residual: &F, mut x: Vec<f64>) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    if n == 0 {
        return x;
    }
    let sq = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut r = residual(&x);
    let mut cost = sq(&r);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        if r.iter().all(|v| v.abs() <= 1e-14) {
            break;
        }
        let m = r.len();
        let mut jac = DMatrix::<f64>::zeros(m, n);
        let mut probe = x.clone();
        for j in 0..n {
            probe[j] = 1.0;
            let hi = residual(&probe);
            probe[j] = 0.0;
            let lo = residual(&probe);
            probe[j] = x[j];
            for i in 0..m {
                jac[(i, j)] = hi[i] - lo[i];
            }
        }
        let rv = DVector::from_vec(r.clone());
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        let mut improved = false;
        for _ in 0..30 {
            let mut sys = jtj.clone();
            for d in 0..n {
                sys[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = sys.lu().solve(&(-&jtr)) else {
                lambda *= 4.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
            let rt = residual(&trial);
            let ct = sq(&rt);
            if ct.is_finite() && ct < cost {
                x = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    x
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerkFamily {
    pub order: usize,
    pub stage_count: usize,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    /// Sorted by ascending evaluation count.
    pub members: Vec<PerkMember>,
    pub pattern: StagePattern,
}

pub fn assemble_family(members: Vec<PerkMember>, order: usize, pattern: StagePattern) -> Result<PerkFamily> {
    let Some(first) = members.first() else {
        return invalid("a family needs at least one member");
    };
    let stages = first.stage_count;
    if let Some(m) = members.iter().find(|m| m.stage_count != stages) {
        return invalid(format!(
            "member stage counts differ: {} vs {}",
            m.stage_count, stages
        ));
    }
    let c = abscissae(order, stages)?;
    let b = weights(order, stages)?;
    let mut members = members;
    members.sort_by_key(|m| m.eval_count);
    if members.windows(2).any(|w| w[0].eval_count == w[1].eval_count) {
        return invalid("member evaluation counts must be distinct");
    }
    for m in &members {
        let expected = pattern.mask(stages, m.eval_count)?;
        let count = m.active.iter().filter(|&&a| a).count();
        if count != m.eval_count || m.active != expected {
            return Err(PerkError::Construction(format!(
                "member with E={} does not follow the {pattern} activity mask",
                m.eval_count
            )));
        }
        if let Some(i) = (0..stages).find(|&i| b[i] != 0.0 && !m.active[i]) {
            return Err(PerkError::Construction(format!(
                "stage {} has a nonzero weight but is inactive for E={}",
                i + 1,
                m.eval_count
            )));
        }
        for i in 0..stages {
            if (m.a_first[i] + m.a_sub[i] - c[i]).abs() > 1e-14 {
                return Err(PerkError::Construction(format!(
                    "row {} of member E={} is not internally consistent",
                    i + 1,
                    m.eval_count
                )));
            }
            if !m.active[i] && m.a_sub[i] != 0.0 {
                return Err(PerkError::Construction(format!(
                    "inactive stage {} of member E={} has a nonzero a_sub",
                    i + 1,
                    m.eval_count
                )));
            }
        }
    }
    Ok(PerkFamily {
        order,
        stage_count: stages,
        c,
        b,
        members,
        pattern,
    })
}

/// Builds one member per polynomial and assembles them.
pub fn build_family(
    polys: &[StabilityPolynomial],
    order: usize,
    stages: usize,
    pattern: StagePattern,
    seed: u64,
) -> Result<PerkFamily> {
    let c = abscissae(order, stages)?;
    let b = weights(order, stages)?;
    let members = polys
        .iter()
        .map(|p| match order {
            2 => build_member_p2_pattern(p, &c, stages, pattern),
            3 => build_member_p3_pattern(p, &c, &b, stages, pattern, seed, DEFAULT_MAX_RESTARTS),
            _ => invalid(format!("unsupported order {order}")),
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_family(members, order, pattern)
}

impl PerkFamily {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn eval_counts(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.eval_count).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "family {} {} {}", self.order, self.stage_count, self.members.len());
        for m in &self.members {
            let _ = writeln!(out, "{} {} {} {}", self.order, self.stage_count, m.eval_count, self.pattern);
            for i in 0..self.stage_count {
                let _ = writeln!(
                    out,
                    "{} {:?} {:?} {:?} {}",
                    i + 1,
                    self.c[i],
                    m.a_first[i],
                    m.a_sub[i],
                    u8::from(m.active[i])
                );
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let parse_err = |msg: String| PerkError::Parse(msg);
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| parse_err("empty family file".into()))?
            .split_whitespace()
            .collect();
        if header.len() != 4 || header[0] != "family" {
            return Err(parse_err(format!("bad family header {header:?}")));
        }
        let order: usize = header[1].parse()?;
        let stages: usize = header[2].parse()?;
        let count: usize = header[3].parse()?;
        let mut members = Vec::with_capacity(count);
        let mut pattern = None;
        for _ in 0..count {
            let head: Vec<&str> = lines
                .next()
                .ok_or_else(|| parse_err("missing member header".into()))?
                .split_whitespace()
                .collect();
            if head.len() != 4 {
                return Err(parse_err(format!("bad member header {head:?}")));
            }
            let (p, s): (usize, usize) = (head[0].parse()?, head[1].parse()?);
            if p != order || s != stages {
                return invalid(format!(
                    "member header ({p}, {s}) disagrees with family ({order}, {stages})"
                ));
            }
            let evals: usize = head[2].parse()?;
            let pat: StagePattern = head[3].parse()?;
            if pattern.is_some_and(|q| q != pat) {
                return invalid("members use different stage patterns");
            }
            pattern = Some(pat);
            let mut a_first = Vec::with_capacity(stages);
            let mut a_sub = Vec::with_capacity(stages);
            let mut active = Vec::with_capacity(stages);
            for i in 0..stages {
                let row: Vec<&str> = lines
                    .next()
                    .ok_or_else(|| parse_err("truncated member block".into()))?
                    .split_whitespace()
                    .collect();
                if row.len() != 5 || row[0].parse::<usize>()? != i + 1 {
                    return Err(parse_err(format!("bad stage row {row:?}")));
                }
                a_first.push(row[2].parse::<f64>()?);
                a_sub.push(row[3].parse::<f64>()?);
                active.push(match row[4] {
                    "1" => true,
                    "0" => false,
                    other => return Err(parse_err(format!("bad activity flag {other:?}"))),
                });
            }
            members.push(PerkMember {
                stage_count: stages,
                eval_count: evals,
                a_first,
                a_sub,
                active,
            });
        }
        assemble_family(members, order, pattern.unwrap_or(StagePattern::Standard))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemberOrderResidual {
    pub eval_count: usize,
    /// `max_i |a_first_i + a_sub_i - c_i|`.
    pub internal_consistency: f64,
    /// `|b^T A c - 1/6|`, order 3 only.
    pub third_order_coupling: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderReport {
    pub weight_sum: f64,
    pub first_moment: f64,
    pub second_moment: Option<f64>,
    pub members: Vec<MemberOrderResidual>,
}

impl OrderReport {
    pub fn max_order_residual(&self) -> f64 {
        let mut worst = self.weight_sum.max(self.first_moment);
        if let Some(v) = self.second_moment {
            worst = worst.max(v);
        }
        for m in &self.members {
            if let Some(v) = m.third_order_coupling {
                worst = worst.max(v);
            }
        }
        worst
    }

    pub fn max_consistency_residual(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.internal_consistency)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, order_tol: f64, consistency_tol: f64) -> bool {
        self.max_order_residual() < order_tol && self.max_consistency_residual() < consistency_tol
    }
}

pub fn verify_order(family: &PerkFamily) -> OrderReport {
    let b = &family.b;
    let c = &family.c;
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let c2: Vec<f64> = c.iter().map(|v| v * v).collect();
    let third = family.order >= 3;
    let members = family
        .members
        .iter()
        .map(|m| {
            let internal = (0..family.stage_count)
                .map(|i| (m.a_first[i] + m.a_sub[i] - c[i]).abs())
                .fold(0.0, f64::max);
            let coupling = third.then(|| {
                let bac: f64 = (1..family.stage_count)
                    .map(|i| b[i] * (m.a_first[i] * c[0] + m.a_sub[i] * c[m.source_stage(i)]))
                    .sum();
                (bac - 1.0 / 6.0).abs()
            });
            MemberOrderResidual {
                eval_count: m.eval_count,
                internal_consistency: internal,
                third_order_coupling: coupling,
            }
        })
        .collect();
    OrderReport {
        weight_sum: (b.iter().sum::<f64>() - 1.0).abs(),
        first_moment: (dot(b, c) - 0.5).abs(),
        second_moment: third.then(|| (dot(b, &c2) - 1.0 / 3.0).abs()),
        members,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SspWeightReport {
    /// One-based stage numbers with `b_i <= 0`.
    pub nonpositive: Vec<usize>,
    pub admissible: bool,
}

/// Necessary condition for strong stability preservation: all weights positive.
pub fn check_ssp_weights(b: &[f64]) -> SspWeightReport {
    let nonpositive: Vec<usize> = b
        .iter()
        .enumerate()
        .filter(|(_, &w)| w <= 0.0)
        .map(|(i, _)| i + 1)
        .collect();
    SspWeightReport {
        admissible: nonpositive.is_empty(),
        nonpositive,
    }
}

/// `a_{i,i-1}` for stages 3..=16 of the `E = 16`, `S = 16` second-order
/// member optimized for the unit disk centred at -1.
pub const TABULATED_A_SUB_E16: [f64; 14] = [
    0.008333333333333335,
    0.01333333333333334,
    0.019047619047619042,
    0.025641025641025637,
    0.033333333333333354,
    0.042424242424242434,
    0.053333333333333295,
    0.06666666666666667,
    0.08333333333333337,
    0.10476190476190472,
    0.13333333333333336,
    0.17333333333333337,
    0.23333333333333323,
    0.3333333333333334,
];

/// `a_{i,i-1}` for stages 11..=16 of the `E = 8`, `S = 16` member.
pub const TABULATED_A_SUB_E8: [f64; 6] = [
    0.019841269841269837,
    0.04489795918367346,
    0.07792207792207795,
    0.12380952380952381,
    0.19230769230769232,
    0.3061224489795918,
];

/// The tabulated `E = 8` or `E = 16` member of the 16-stage second-order family.
pub fn tabulated_member(evals: usize) -> Result<PerkMember> {
    let stages = 16;
    let c = abscissae(2, stages)?;
    let column: &[f64] = match evals {
        8 => &TABULATED_A_SUB_E8,
        16 => &TABULATED_A_SUB_E16,
        _ => return invalid(format!("no tabulated member with E={evals}")),
    };
    let mut a_sub = vec![0.0; stages];
    a_sub[stages - column.len()..].copy_from_slice(column);
    PerkMember::from_a_sub(&c, StagePattern::Standard.mask(stages, evals)?, a_sub)
}

/// Stability polynomial of a member, with the Taylor part checked.
pub fn member_stability_polynomial(member: &PerkMember, order: usize) -> Result<StabilityPolynomial> {
    let c = abscissae(order, member.stage_count)?;
    let b = weights(order, member.stage_count)?;
    let mut coeffs = member.polynomial_coefficients(&c, &b);
    coeffs.resize(member.eval_count + 1, 0.0);
    StabilityPolynomial::from_coefficients(order, &coeffs, 1e-12)
}
