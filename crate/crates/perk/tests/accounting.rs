use perk::accounting::*;
use perk::multirate::{member_for_rank, IntervalTally, LevelTally, RhsCounters};
use perk::stabpoly::StabilityPolynomial;
use perk::tableau::{build_family, PerkFamily, StagePattern};
use proptest::prelude::*;

/// Members with the given evaluation counts; coefficients do not enter the cost model.
fn family(evals: &[usize]) -> PerkFamily {
    let stages = *evals.iter().max().unwrap();
    let polys: Vec<_> = evals
        .iter()
        .map(|&e| StabilityPolynomial::new(2, e, vec![0.0; e - 2]).unwrap())
        .collect();
    build_family(&polys, 2, stages.max(3), StagePattern::Standard, 0).unwrap()
}

/// Counters for intervals of `(steps, cells per rank)`, with the runtime tally filled in consistently.
fn counters(f: &PerkFamily, intervals: &[(u64, Vec<u64>)]) -> RhsCounters {
    let mut c = RhsCounters::new(10);
    for (steps, cells) in intervals {
        let levels = cells
            .iter()
            .enumerate()
            .map(|(rank, &n)| {
                let member = member_for_rank(rank, f.member_count());
                let e = f.members[member].eval_count;
                LevelTally {
                    level: (cells.len() - 1 - rank) as u32,
                    rank,
                    member,
                    eval_count: e,
                    cells: n,
                    evaluations: steps * e as u64 * n,
                }
            })
            .collect();
        c.intervals.push(IntervalTally { steps: *steps, levels });
        c.total_steps += steps;
    }
    c
}

#[test]
fn single_level_example() {
    let f = family(&[3]);
    let c = counters(&f, &[(10, vec![64])]);
    assert_eq!(rhs_actual(&c, &f).unwrap(), 1920);
}

#[test]
fn zero_steps_cost_nothing() {
    let f = family(&[3, 4, 7]);
    let c = counters(&f, &[]);
    assert_eq!(rhs_actual(&c, &f).unwrap(), 0);
    let x = rhs_excess(&c, &f, None).unwrap();
    assert_eq!(x.plus, Rational::from_integer(0));
    assert_eq!(x.plus_hyp, Rational::from_integer(0));
}

#[test]
fn scalar_factor_scales_the_count() {
    let f = family(&[3]);
    let mut c = counters(&f, &[(10, vec![64])]);
    c.fields = 4;
    c.degree = 2;
    assert_eq!(rhs_actual_formula(&c, &f), 1920 * 4 * 3);
    assert_eq!(u128::from(c.counted_evaluations()), 1920 * 4 * 3);
}

#[test]
fn six_levels_three_members_excess() {
    let f = family(&[3, 4, 7]);
    let c = counters(&f, &[(1, vec![1; 6])]);
    let x = rhs_excess(&c, &f, None).unwrap();
    assert_eq!(x.plus, Rational::new(51, 8));
    let report = CostReport::build(&c, &f, None, None).unwrap();
    assert_eq!(report.n_rhs_plus, ExactRational { num: 51, den: 8 });
    assert_eq!(report.n_rhs_plus_rounded, 6);
    assert_eq!(report.n_rhs_actual, 7 + 4 + 3 * 4);
    // optimum: 7 (1 + 1/2 + .. + 1/32) = 7 * 63/32
    assert_eq!(x.plus_hyp, Rational::from_integer(23) - Rational::new(441, 32));
}

#[test]
fn optimal_family_has_no_excess() {
    let f = family(&[2, 4, 8]);
    let c = counters(&f, &[(3, vec![5, 2, 7])]);
    let x = rhs_excess(&c, &f, None).unwrap();
    assert_eq!(x.plus, Rational::from_integer(0));
    assert_eq!(x.plus_hyp, Rational::from_integer(0));
    let cfl = rhs_excess(&c, &f, Some(0.7)).unwrap();
    let n_opt = Rational::from_integer(rhs_actual(&c, &f).unwrap() as i128);
    assert_eq!(cfl.plus_hyp, n_opt * Rational::new(3, 10));
    assert!(rhs_excess(&c, &f, Some(1.5)).is_err());
    assert!(rhs_excess(&c, &f, Some(0.0)).is_err());
}

#[test]
fn tally_mismatch_is_reported() {
    let f = family(&[3, 4, 7]);
    let mut c = counters(&f, &[(2, vec![3, 1, 4])]);
    c.intervals[0].levels[1].evaluations += 1;
    assert!(rhs_actual(&c, &f).is_err());
}

#[test]
fn optimality_examples() {
    assert_eq!(optimality(3.0, 0.01, 0.0).unwrap().kappa, 1.0);
    assert!((optimality(10.0, 1.0, 3.0).unwrap().kappa - 0.7).abs() < 1e-15);
    let f = family(&[2, 4, 8]);
    let c = counters(&f, &[(3, vec![5, 2, 7])]);
    let report = CostReport::build(&c, &f, None, Some((2.0, 1e-3))).unwrap();
    assert_eq!(report.kappa, Some(1.0));
    assert!(!report.kappa_degenerate && !report.kappa_above_one);
}

#[test]
fn report_json_has_exact_rationals() {
    let f = family(&[3, 4, 7]);
    let c = counters(&f, &[(1, vec![1; 6])]);
    let json = serde_json::to_value(CostReport::build(&c, &f, None, None).unwrap()).unwrap();
    assert_eq!(json["n_rhs_plus"]["num"], 51);
    assert_eq!(json["n_rhs_plus"]["den"], 8);
    assert_eq!(json["n_rhs_actual"], 23);
}

fn layout() -> impl Strategy<Value = (usize, Vec<(u64, Vec<u64>)>)> {
    (0usize..4, 1usize..7).prop_flat_map(|(fam, levels)| {
        (Just(fam), prop::collection::vec((1u64..30, prop::collection::vec(0u64..50, levels)), 1..5))
    })
}

const FAMILIES: [&[usize]; 4] = [&[3, 4, 7], &[2, 4, 8], &[3, 6, 12], &[5, 9]];

proptest! {
    #[test]
    fn excess_ordering_and_additivity((fam, intervals) in layout()) {
        let f = family(FAMILIES[fam]);
        let whole = counters(&f, &intervals);
        let x = rhs_excess(&whole, &f, None).unwrap();
        prop_assert!(x.plus >= Rational::from_integer(0));
        prop_assert!(x.plus_hyp >= x.plus);
        let total: u128 = intervals
            .iter()
            .map(|iv| rhs_actual(&counters(&f, std::slice::from_ref(iv)), &f).unwrap())
            .sum();
        prop_assert_eq!(total, rhs_actual(&whole, &f).unwrap());
        let parts: Rational = intervals
            .iter()
            .map(|iv| rhs_excess(&counters(&f, std::slice::from_ref(iv)), &f, None).unwrap().plus_hyp)
            .sum();
        prop_assert_eq!(parts, x.plus_hyp);
    }
}
