//! Right-hand-side cost model for partitioned runs.
//!
//! Levels are ranked from the finest (rank 0). With `R` members, ranks below
//! `R - 1` use member `R - rank`, all others the lowest member; the optimal
//! ideal count on rank `rho` is `E^(R) / 2^rho`.

use std::time::Instant;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PerkError, Result};
use crate::multirate::{member_for_rank, RhsCounters, Rhs};
use crate::tableau::PerkFamily;

pub type Rational = Ratio<i128>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactRational {
    pub num: i128,
    pub den: i128,
}

impl From<Rational> for ExactRational {
    fn from(r: Rational) -> Self {
        Self {
            num: *r.numer(),
            den: *r.denom(),
        }
    }
}

impl ExactRational {
    pub fn to_ratio(self) -> Rational {
        Rational::new(self.num, self.den)
    }
}

fn round_half_away(r: Rational) -> i128 {
    r.round().to_integer()
}

fn pow2(exp: usize) -> Result<i128> {
    if exp >= 126 {
        return invalid(format!("level rank {exp} too large for exact accounting"));
    }
    Ok(1i128 << exp)
}

fn eval_count(family: &PerkFamily, rank: usize) -> i128 {
    family.members[member_for_rank(rank, family.member_count())].eval_count as i128
}

/// Closed-form count from cell numbers and the family, independent of the runtime tally.
pub fn rhs_actual_formula(counters: &RhsCounters, family: &PerkFamily) -> u128 {
    let factor = counters.scalar_factor() as u128;
    counters
        .intervals
        .iter()
        .map(|iv| {
            let per_step: u128 = iv
                .levels
                .iter()
                .map(|l| eval_count(family, l.rank) as u128 * u128::from(l.cells))
                .sum();
            u128::from(iv.steps) * factor * per_step
        })
        .sum()
}

/// The closed-form count, checked against the evaluations tallied while stepping.
pub fn rhs_actual(counters: &RhsCounters, family: &PerkFamily) -> Result<u128> {
    let formula = rhs_actual_formula(counters, family);
    let counted = u128::from(counters.counted_evaluations());
    if formula != counted {
        return Err(PerkError::Consistency(format!(
            "closed-form count {formula} differs from the runtime tally {counted}"
        )));
    }
    Ok(formula)
}

fn optimal_count(counters: &RhsCounters, family: &PerkFamily) -> Result<Rational> {
    let e_max = family.members.last().map_or(0, |m| m.eval_count) as i128;
    let factor = counters.scalar_factor() as i128;
    let mut total = Rational::zero();
    for iv in &counters.intervals {
        for l in &iv.levels {
            let ideal = Rational::new(e_max, pow2(l.rank)?);
            total += ideal * Rational::from_integer(iv.steps as i128 * factor * l.cells as i128);
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Excess {
    /// Extra evaluations from filling coarse levels with the lowest member.
    pub plus: Rational,
    /// Actual minus the hypothetical optimum.
    pub plus_hyp: Rational,
}

/// Additional evaluations over the ideal. With `cfl_ratio = Some(r)` the
/// hypothetical count is `N_actual - r N_opt`.
pub fn rhs_excess(counters: &RhsCounters, family: &PerkFamily, cfl_ratio: Option<f64>) -> Result<Excess> {
    let r = family.member_count();
    let e_min = family.members.first().map_or(0, |m| m.eval_count) as i128;
    let factor = counters.scalar_factor() as i128;
    let mut plus = Rational::zero();
    for iv in &counters.intervals {
        for l in iv.levels.iter().filter(|l| l.rank >= r) {
            let share = Rational::from_integer(1) - Rational::new(1, pow2(l.rank - r + 1)?);
            plus += share * Rational::from_integer(e_min * iv.steps as i128 * factor * l.cells as i128);
        }
    }
    let actual = Rational::from_integer(rhs_actual_formula(counters, family) as i128);
    let optimal = optimal_count(counters, family)?;
    let plus_hyp = match cfl_ratio {
        None => actual - optimal,
        Some(ratio) => {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return invalid(format!("CFL ratio {ratio} outside (0, 1]"));
            }
            let exact = Rational::approximate_float(ratio)
                .ok_or_else(|| PerkError::InvalidInput(format!("cannot represent CFL ratio {ratio}")))?;
            actual - exact * optimal
        }
    };
    Ok(Excess { plus, plus_hyp })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Optimality {
    pub kappa: f64,
    /// `tau - excess * tau_rhs_per_cell <= 0`: the cost model does not describe this run.
    pub degenerate: bool,
    /// `kappa > 1`, i.e. measurement noise.
    pub above_one: bool,
}

/// `kappa = (tau - n_plus_hyp tau_rhs_per_cell) / tau`, reported unclamped.
pub fn optimality(tau: f64, tau_rhs_per_cell: f64, n_rhs_plus_hyp: f64) -> Result<Optimality> {
    if !(tau > 0.0) {
        return invalid("runtime must be positive");
    }
    let tau_opt = tau - n_rhs_plus_hyp * tau_rhs_per_cell;
    let kappa = tau_opt / tau;
    Ok(Optimality {
        kappa,
        degenerate: tau_opt <= 0.0,
        above_one: kappa > 1.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub n_rhs_actual: u128,
    pub n_rhs_plus: ExactRational,
    pub n_rhs_plus_rounded: i128,
    pub n_rhs_plus_hyp: ExactRational,
    pub n_rhs_plus_hyp_rounded: i128,
    pub kappa: Option<f64>,
    pub kappa_degenerate: bool,
    pub kappa_above_one: bool,
    pub tau: Option<f64>,
    pub tau_rhs_per_cell: Option<f64>,
}

impl CostReport {
    pub fn build(
        counters: &RhsCounters,
        family: &PerkFamily,
        cfl_ratio: Option<f64>,
        timing: Option<(f64, f64)>,
    ) -> Result<Self> {
        let actual = rhs_actual(counters, family)?;
        let excess = rhs_excess(counters, family, cfl_ratio)?;
        let opt = match timing {
            Some((tau, per_cell)) => {
                Some(optimality(tau, per_cell, excess.plus_hyp.to_f64().unwrap_or(f64::NAN))?)
            }
            None => None,
        };
        Ok(Self {
            n_rhs_actual: actual,
            n_rhs_plus: excess.plus.into(),
            n_rhs_plus_rounded: round_half_away(excess.plus),
            n_rhs_plus_hyp: excess.plus_hyp.into(),
            n_rhs_plus_hyp_rounded: round_half_away(excess.plus_hyp),
            kappa: opt.map(|o| o.kappa),
            kappa_degenerate: opt.is_some_and(|o| o.degenerate),
            kappa_above_one: opt.is_some_and(|o| o.above_one),
            tau: timing.map(|t| t.0),
            tau_rhs_per_cell: timing.map(|t| t.1),
        })
    }
}

/// Mean wallclock seconds per cell evaluation over `repeats` full sweeps.
pub fn time_rhs_per_cell(rhs: &dyn Rhs, u: &[f64], repeats: usize) -> Result<f64> {
    if repeats == 0 || u.is_empty() {
        return invalid("need at least one sweep over a non-empty state");
    }
    let mask = vec![true; u.len()];
    let mut out = vec![0.0; u.len()];
    let start = Instant::now();
    for _ in 0..repeats {
        rhs.eval_masked(u, &mask, &mut out);
        std::hint::black_box(&out);
    }
    Ok(start.elapsed().as_secs_f64() / (repeats * u.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_formula() {
        let o = optimality(10.0, 1.0, 3.0).unwrap();
        assert!((o.kappa - 0.7).abs() < 1e-15);
        assert!(!o.degenerate);
        assert_eq!(optimality(10.0, 1.0, 0.0).unwrap().kappa, 1.0);
    }

    #[test]
    fn degenerate_and_noisy_flags() {
        assert!(optimality(1.0, 1.0, 2.0).unwrap().degenerate);
        assert!(optimality(1.0, 1.0, -1.0).unwrap().above_one);
        assert!(optimality(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn rational_serializes_as_pair() {
        let r: ExactRational = Rational::new(51, 8).into();
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"num":51,"den":8}"#);
        assert_eq!(r.to_ratio(), Rational::new(51, 8));
    }

    #[test]
    fn rounding_half_away_from_zero() {
        assert_eq!(round_half_away(Rational::new(51, 8)), 6);
        assert_eq!(round_half_away(Rational::new(5, 2)), 3);
    }
}
