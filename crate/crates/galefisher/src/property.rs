//! Numerical checkers for the substitute-style properties of demand systems.
//!
//! The checkers are falsifiers at sampled inputs: set-valued correspondences
//! are handled existentially by searching the optimal face for a dominated
//! counterpart, so ties never produce spurious violations. A reported
//! violation is re-certified through the optimality conditions of both
//! bundles before it is believed.

use serde::Serialize;

use crate::demand::{self, gale_demand_fast, gale_demand_potential_select};
use crate::lp::{self, LpBuilder};
use crate::model::OPT_TOL;
use crate::utility::{self, UtilitySpec};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Violation,
    /// The inputs fall outside the property's hypothesis, or the gap sits in
    /// the numerical gray zone.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyWitness {
    pub property: String,
    pub verdict: Verdict,
    /// Demand at the reference parameters.
    pub reference: Vec<f64>,
    /// Best dominated counterpart found at the shifted parameters.
    pub counterpart: Vec<f64>,
    pub violated_good: Option<usize>,
    /// Worst overshoot across frozen coordinates.
    pub magnitude: f64,
}

fn verdict_from(magnitude: f64) -> Verdict {
    if magnitude <= OPT_TOL {
        Verdict::Pass
    } else if magnitude > 10.0 * OPT_TOL {
        Verdict::Violation
    } else {
        Verdict::Inconclusive
    }
}

fn overshoot(counterpart: &[f64], reference: &[f64], frozen: &[usize]) -> (f64, Option<usize>) {
    let mut worst = 0.0f64;
    let mut good = None;
    for &j in frozen {
        let gap = counterpart[j] - reference[j];
        if gap > worst {
            worst = gap;
            good = Some(j);
        }
    }
    (worst, good)
}

/// Demotes a violation back to inconclusive when either bundle fails its own
/// optimality certificate.
fn certify(
    u: &UtilitySpec,
    verdict: Verdict,
    q_ref: &[f64],
    b_ref: f64,
    reference: &[f64],
    q_new: &[f64],
    b_new: f64,
    counterpart: &[f64],
) -> Verdict {
    if verdict != Verdict::Violation {
        return verdict;
    }
    let ok_ref = demand::verify_gale_kkt(u, q_ref, b_ref, reference)
        .map(|r| r.pass)
        .unwrap_or(false);
    let ok_new = demand::verify_gale_kkt(u, q_new, b_new, counterpart)
        .map(|r| r.pass)
        .unwrap_or(false);
    if ok_ref && ok_new {
        Verdict::Violation
    } else {
        Verdict::Inconclusive
    }
}

/// Price monotonicity of the Gale demand system: after lowering some prices,
/// some optimal bundle must not grow on the unchanged-price goods.
pub fn check_substitutes_price(
    u: &UtilitySpec,
    budget: f64,
    prices: &[f64],
    lowered: &[f64],
) -> Result<PropertyWitness, Error> {
    if lowered.iter().zip(prices).any(|(l, q)| l > q) {
        return Err(Error::Domain("prices may only decrease".into()));
    }
    let frozen: Vec<usize> = (0..prices.len())
        .filter(|&j| lowered[j] == prices[j])
        .collect();
    let reference = gale_demand_fast(u, prices, budget)?;
    let counterpart =
        gale_demand_potential_select(u, lowered, budget, &reference.bundle, &frozen)?;
    let (magnitude, violated_good) = overshoot(&counterpart.bundle, &reference.bundle, &frozen);
    let verdict = certify(
        u,
        verdict_from(magnitude),
        prices,
        budget,
        &reference.bundle,
        lowered,
        budget,
        &counterpart.bundle,
    );
    Ok(PropertyWitness {
        property: "gale_substitutes_price".into(),
        verdict,
        reference: reference.bundle,
        counterpart: counterpart.bundle,
        violated_good,
        magnitude,
    })
}

/// Budget monotonicity: after shrinking the budget, some optimal bundle must
/// be dominated by the reference on every coordinate.
pub fn check_substitutes_budget(
    u: &UtilitySpec,
    prices: &[f64],
    budget: f64,
    smaller: f64,
) -> Result<PropertyWitness, Error> {
    if !(smaller <= budget && smaller > 0.0) {
        return Err(Error::Domain("budgets must satisfy b >= b' > 0".into()));
    }
    let frozen: Vec<usize> = (0..prices.len()).collect();
    let reference = gale_demand_fast(u, prices, budget)?;
    let counterpart =
        gale_demand_potential_select(u, prices, smaller, &reference.bundle, &frozen)?;
    let (magnitude, violated_good) = overshoot(&counterpart.bundle, &reference.bundle, &frozen);
    let verdict = certify(
        u,
        verdict_from(magnitude),
        prices,
        budget,
        &reference.bundle,
        prices,
        smaller,
        &counterpart.bundle,
    );
    Ok(PropertyWitness {
        property: "gale_substitutes_budget".into(),
        verdict,
        reference: reference.bundle,
        counterpart: counterpart.bundle,
        violated_good,
        magnitude,
    })
}

/// Satiation domination: every zero-price optimum must dominate some optimum
/// at arbitrary prices. Satiation bundles are probed adversarially through
/// the extreme points of the minimal satiation face.
pub fn check_sigma(u: &UtilitySpec, budget: f64, prices: &[f64]) -> Result<PropertyWitness, Error> {
    if !utility::satiable(u)? {
        return Ok(PropertyWitness {
            property: "sigma_satiation".into(),
            verdict: Verdict::Inconclusive,
            reference: Vec::new(),
            counterpart: Vec::new(),
            violated_good: None,
            magnitude: 0.0,
        });
    }
    let m = u.num_goods();
    let zeros = vec![0.0; m];
    let frozen: Vec<usize> = (0..m).collect();
    let base = gale_demand_fast(u, &zeros, budget)?;
    let mut candidates = vec![base.bundle.clone()];
    candidates.extend(satiation_face_corners(u, &base)?);

    let mut worst: Option<PropertyWitness> = None;
    for y in candidates {
        let counterpart = gale_demand_potential_select(u, prices, budget, &y, &frozen)?;
        let (magnitude, violated_good) = overshoot(&counterpart.bundle, &y, &frozen);
        let witness = PropertyWitness {
            property: "sigma_satiation".into(),
            verdict: certify(
                u,
                verdict_from(magnitude),
                &zeros,
                budget,
                &y,
                prices,
                budget,
                &counterpart.bundle,
            ),
            reference: y,
            counterpart: counterpart.bundle,
            violated_good,
            magnitude,
        };
        let keep = match &worst {
            None => true,
            Some(w) => witness.magnitude > w.magnitude,
        };
        if keep {
            worst = Some(witness);
        }
        if worst.as_ref().is_some_and(|w| w.verdict == Verdict::Violation) {
            break;
        }
    }
    Ok(worst.expect("at least one candidate"))
}

/// Extreme points of the minimal satiation face: per-coordinate minimizers
/// and maximizers subject to maximal utility and minimal total size.
fn satiation_face_corners(
    u: &UtilitySpec,
    base: &demand::GaleDemandSolution,
) -> Result<Vec<Vec<f64>>, Error> {
    let ulp = utility::to_lp(u)?;
    let m = u.num_goods();
    let nz = ulp.vars();
    let total: f64 = base.bundle.iter().sum();
    let mut out = Vec::new();
    for j in 0..m {
        for sign in [1.0, -1.0] {
            let mut builder = LpBuilder::new(nz + m);
            builder.set_objective(nz + j, sign);
            for (i, arow) in ulp.a.iter().enumerate() {
                let mut terms: Vec<(usize, f64)> = arow
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(jj, &v)| (jj, v))
                    .collect();
                for (g, &bv) in ulp.b[i].iter().enumerate() {
                    if bv != 0.0 {
                        terms.push((nz + g, -bv));
                    }
                }
                builder.add_le(&terms, ulp.offset[i]);
            }
            let value_terms: Vec<(usize, f64)> = ulp
                .c
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(jj, &v)| (jj, v))
                .collect();
            builder.add_ge(&value_terms, base.value - 1e-10 * (1.0 + base.value.abs()));
            let size_terms: Vec<(usize, f64)> = (0..m).map(|g| (nz + g, 1.0)).collect();
            builder.add_le(&size_terms, total + 1e-10 * (1.0 + total.abs()));
            let sol = builder.solve()?;
            if sol.optimal() {
                out.push(sol.primal[nz..nz + m].to_vec());
            }
        }
    }
    Ok(out)
}

/// Weak gross substitutes for the standard demand correspondence: raising
/// some prices must leave some optimal bundle at least as large on the
/// unchanged-price goods.
pub fn check_wgs(
    u: &UtilitySpec,
    budget: f64,
    prices: &[f64],
    raised: &[f64],
) -> Result<PropertyWitness, Error> {
    if prices.iter().any(|&p| p <= 0.0) || raised.iter().any(|&p| p <= 0.0) {
        return Err(Error::Domain(
            "the demand-side check needs strictly positive prices".into(),
        ));
    }
    if raised.iter().zip(prices).any(|(r, p)| r < p) {
        return Err(Error::Domain("prices may only increase".into()));
    }
    let frozen: Vec<usize> = (0..prices.len())
        .filter(|&j| raised[j] == prices[j])
        .collect();
    let reference = demand::demand(u, prices, budget)?;
    let counterpart = demand_select_above(u, raised, budget, &reference.bundle, &frozen)?;
    // Violation when the new demand falls below the reference on a frozen good.
    let mut magnitude = 0.0f64;
    let mut violated_good = None;
    for &j in &frozen {
        let gap = reference.bundle[j] - counterpart[j];
        if gap > magnitude {
            magnitude = gap;
            violated_good = Some(j);
        }
    }
    Ok(PropertyWitness {
        property: "weak_gross_substitutes".into(),
        verdict: verdict_from(magnitude),
        reference: reference.bundle,
        counterpart,
        violated_good,
        magnitude,
    })
}

/// Point of the demand face at `prices` minimizing the shortfall below the
/// reference on the frozen coordinates.
fn demand_select_above(
    u: &UtilitySpec,
    prices: &[f64],
    budget: f64,
    reference: &[f64],
    frozen: &[usize],
) -> Result<Vec<f64>, Error> {
    if matches!(u, UtilitySpec::Quadratic(_)) {
        return Ok(demand::demand(u, prices, budget)?.bundle);
    }
    let best = demand::demand(u, prices, budget)?;
    let ulp = utility::to_lp(u)?;
    let m = u.num_goods();
    let nz = ulp.vars();
    let mut builder = LpBuilder::new(nz + m);
    for (i, arow) in ulp.a.iter().enumerate() {
        let mut terms: Vec<(usize, f64)> = arow
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (j, v))
            .collect();
        for (g, &bv) in ulp.b[i].iter().enumerate() {
            if bv != 0.0 {
                terms.push((nz + g, -bv));
            }
        }
        builder.add_le(&terms, ulp.offset[i]);
    }
    let value_terms: Vec<(usize, f64)> = ulp
        .c
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, &v)| (j, v))
        .collect();
    builder.add_ge(&value_terms, best.value - lp::FACE_TOL);
    let spend_terms: Vec<(usize, f64)> = (0..m).map(|g| (nz + g, prices[g])).collect();
    builder.add_le(&spend_terms, budget);
    for &j in frozen {
        let w = builder.add_var(-1.0);
        // x_j + w_j >= reference_j.
        builder.add_ge(&[(nz + j, 1.0), (w, 1.0)], reference[j]);
    }
    let sol = builder.solve()?;
    if !sol.optimal() {
        return Err(Error::NumericalFailure("demand face search failed".into()));
    }
    Ok(sol.primal[nz..nz + m].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::utility::Segment;

    fn capped_plus_linear() -> UtilitySpec {
        // min(x1, 0.4) + x2
        UtilitySpec::BoundedLinear {
            values: vec![1.0, 1.0],
            caps: vec![Some(0.4), None],
        }
    }

    #[test]
    fn separable_utilities_pass_price_check() {
        let u = capped_plus_linear();
        let w = check_substitutes_price(&u, 1.0, &[0.8, 1.0], &[0.5, 1.0]).unwrap();
        assert_eq!(w.verdict, Verdict::Pass, "{w:?}");
    }

    #[test]
    fn matching_utility_violates_price_check_on_good_two() {
        let u = fixtures::matching_utility();
        let w = check_substitutes_price(&u, 1.0, &[0.3, 1.2, 0.6], &[0.3, 1.2, 0.1]).unwrap();
        assert_eq!(w.verdict, Verdict::Violation, "{w:?}");
        assert_eq!(w.violated_good, Some(1));
    }

    #[test]
    fn quadratic_utility_violates_price_check() {
        let u = fixtures::quadratic_utility();
        let w = check_substitutes_price(&u, 1.0, &[0.12, 0.1, 0.1], &[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(w.verdict, Verdict::Violation, "{w:?}");
        assert_eq!(w.violated_good, Some(1));
    }

    #[test]
    fn budget_check_linear_single_good() {
        let u = UtilitySpec::Linear { values: vec![2.0] };
        let w = check_substitutes_budget(&u, &[1.0], 1.0, 0.4).unwrap();
        assert_eq!(w.verdict, Verdict::Pass);
        assert!((w.counterpart[0] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn budget_check_random_splc() {
        let u = UtilitySpec::Splc {
            segments: vec![
                vec![
                    Segment { slope: 1.9, length: Some(0.3) },
                    Segment { slope: 0.6, length: Some(0.9) },
                ],
                vec![
                    Segment { slope: 1.2, length: Some(0.5) },
                    Segment { slope: 0.2, length: None },
                ],
            ],
        };
        for (b, b2) in [(2.0, 1.0), (1.5, 1.4), (0.9, 0.2)] {
            let w = check_substitutes_budget(&u, &[0.7, 0.4], b, b2).unwrap();
            assert_eq!(w.verdict, Verdict::Pass, "{w:?}");
        }
    }

    #[test]
    fn sigma_passes_on_bounded_linear() {
        let u = UtilitySpec::BoundedLinear {
            values: vec![1.0, 2.0],
            caps: vec![Some(0.5), Some(1.0)],
        };
        let w = check_sigma(&u, 1.0, &[0.3, 0.9]).unwrap();
        assert_eq!(w.verdict, Verdict::Pass, "{w:?}");
    }

    #[test]
    fn sigma_vacuous_on_nonsatiable() {
        let u = UtilitySpec::Linear {
            values: vec![1.0, 1.0],
        };
        let w = check_sigma(&u, 1.0, &[1.0, 1.0]).unwrap();
        assert_eq!(w.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn sigma_fails_on_capped_sum() {
        // The satiation bundle (1, 0) cannot dominate the unique optimum
        // (0, 1) at prices (2, 1).
        let u = fixtures::lf_capped_sum();
        let w = check_sigma(&u, 1.0, &[2.0, 1.0]).unwrap();
        assert_eq!(w.verdict, Verdict::Violation, "{w:?}");
    }

    #[test]
    fn wgs_violated_by_capped_plus_linear() {
        let u = capped_plus_linear();
        let w = check_wgs(&u, 1.0, &[0.8, 1.0], &[0.9, 1.0]).unwrap();
        assert_eq!(w.verdict, Verdict::Violation, "{w:?}");
        assert_eq!(w.violated_good, Some(1));
        assert!((w.magnitude - 0.04).abs() < 1e-6, "{}", w.magnitude);
    }

    #[test]
    fn wgs_passes_on_linear() {
        let u = UtilitySpec::Linear {
            values: vec![2.0, 1.0],
        };
        let w = check_wgs(&u, 1.0, &[1.0, 1.0], &[1.5, 1.0]).unwrap();
        assert_eq!(w.verdict, Verdict::Pass, "{w:?}");
    }
}
