//! Standard demand, Gale demand, price-domain membership, and KKT
//! certificates.
//!
//! The Gale demand of a utility `u` at prices `q` and budget `b` maximizes
//! `b·log u(y) - q·y`. For piecewise-linear families the maximization runs as
//! an outer ternary search over the target utility level with an inner
//! cost-minimization LP; internal callers that need many demands per second
//! use the exact waterfilling/bisection fast paths instead.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::lp::{self, LpBuilder, LpStatus, ParametricLP};
use crate::model::{dot, OPT_TOL};
use crate::utility::{self, QuadraticUtility, UtilitySpec};
use crate::Error;

/// A utility-maximal affordable bundle.
#[derive(Debug, Clone)]
pub struct DemandSolution {
    pub bundle: Vec<f64>,
    pub value: f64,
    pub spend: f64,
    /// Multiplier of the budget constraint.
    pub lambda: f64,
}

/// A maximizer of the Gale objective `b·log u(y) - q·y`.
#[derive(Debug, Clone)]
pub struct GaleDemandSolution {
    pub bundle: Vec<f64>,
    /// Utility value at the bundle.
    pub value: f64,
    pub spend: f64,
    /// `b·log(value) - spend`.
    pub objective: f64,
    /// A supergradient witnessing the optimality conditions, when computed.
    pub certificate: Option<Vec<f64>>,
}

/// Outcome of searching the supergradient set for a Gale-optimality witness.
#[derive(Debug, Clone)]
pub struct KktReport {
    pub pass: bool,
    /// Largest deviation from the required supergradient pattern.
    pub residual: f64,
    pub witness: Vec<f64>,
}

// Worst budget overshoot `spend - b` seen in any Gale demand since the last
// reset, stored as f64 bits.
static BUDGET_EXCESS: AtomicU64 = AtomicU64::new(0);

fn record_budget(spend: f64, budget: f64) {
    let excess = spend - budget;
    let mut cur = BUDGET_EXCESS.load(Ordering::Relaxed);
    while excess > f64::from_bits(cur) {
        match BUDGET_EXCESS.compare_exchange(
            cur,
            excess.to_bits(),
            Ordering::Relaxed,
            Ordering::Relaxed,
        ) {
            Ok(_) => break,
            Err(now) => cur = now,
        }
    }
}

/// Largest `spend - b` over every Gale demand computed since the last reset.
pub fn budget_audit_max() -> f64 {
    f64::from_bits(BUDGET_EXCESS.load(Ordering::Relaxed))
}

pub fn budget_audit_reset() {
    BUDGET_EXCESS.store(0, Ordering::Relaxed);
}

fn check_inputs(u: &UtilitySpec, prices: &[f64], budget: f64) -> Result<(), Error> {
    if prices.len() != u.num_goods() {
        return Err(Error::DimensionMismatch(format!(
            "{} prices for {} goods",
            prices.len(),
            u.num_goods()
        )));
    }
    if prices.iter().any(|&p| p < 0.0) {
        return Err(Error::Domain("negative prices".into()));
    }
    if !(budget > 0.0) {
        return Err(Error::Domain("budget must be positive".into()));
    }
    Ok(())
}

/// Maximizes `u` over the budget set `{x >= 0, p·x <= b}`.
pub fn demand(u: &UtilitySpec, prices: &[f64], budget: f64) -> Result<DemandSolution, Error> {
    check_inputs(u, prices, budget)?;
    if let UtilitySpec::Quadratic(q) = u {
        return quadratic_demand(q, prices, budget);
    }
    if let Some(segments) = u.separable_segments() {
        return demand_separable(&segments, prices, budget);
    }
    let ulp = utility::to_lp(u)?;
    let m = u.num_goods();
    let nz = ulp.vars();
    let mut builder = LpBuilder::new(nz + m);
    for (j, &cj) in ulp.c.iter().enumerate() {
        builder.set_objective(j, cj);
    }
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
    let price_terms: Vec<(usize, f64)> = (0..m).map(|g| (nz + g, prices[g])).collect();
    builder.add_le(&price_terms, budget);
    let budget_row = ulp.rows();
    let sol = builder.solve()?;
    match sol.status {
        LpStatus::Unbounded => Err(Error::UnboundedDemand),
        LpStatus::Infeasible => Err(Error::Domain(
            "utility program infeasible over the budget set".into(),
        )),
        LpStatus::Optimal => {
            let bundle = sol.primal[nz..].to_vec();
            let spend = dot(prices, &bundle);
            Ok(DemandSolution {
                bundle,
                value: sol.value,
                spend,
                lambda: sol.dual[budget_row],
            })
        }
    }
}

/// Greedy bang-per-buck fill for separable utilities.
fn demand_separable(
    segments: &[Vec<(f64, f64)>],
    prices: &[f64],
    budget: f64,
) -> Result<DemandSolution, Error> {
    let m = prices.len();
    let mut bundle = vec![0.0; m];
    let mut value = 0.0;
    let mut spend = 0.0;

    // Free goods first; an unbounded free segment blows the supremum up.
    let mut items: Vec<(f64, usize, f64, f64)> = Vec::new();
    for (j, segs) in segments.iter().enumerate() {
        for &(slope, len) in segs {
            if slope <= 0.0 {
                continue;
            }
            if prices[j] == 0.0 {
                if len.is_infinite() {
                    return Err(Error::UnboundedDemand);
                }
                bundle[j] += len;
                value += slope * len;
            } else {
                items.push((slope / prices[j], j, slope, len));
            }
        }
    }
    items.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut left = budget;
    let mut lambda = 0.0;
    for (bang, j, slope, len) in items {
        if left <= 0.0 {
            break;
        }
        let afford = left / prices[j];
        let take = afford.min(len);
        bundle[j] += take;
        value += slope * take;
        left -= take * prices[j];
        spend += take * prices[j];
        lambda = bang;
        if take < len {
            break;
        }
    }
    if left > 1e-12 * (1.0 + budget) {
        // Satiated before the budget ran out.
        lambda = 0.0;
    }
    Ok(DemandSolution {
        bundle,
        value,
        spend,
        lambda,
    })
}

/// Whether the Gale objective has a finite supremum at these prices.
pub fn in_price_domain(u: &UtilitySpec, prices: &[f64]) -> Result<bool, Error> {
    if prices.len() != u.num_goods() {
        return Err(Error::DimensionMismatch("price vector length".into()));
    }
    if prices.iter().any(|&p| p < 0.0) {
        return Ok(false);
    }
    if matches!(u, UtilitySpec::Quadratic(_)) {
        return Ok(true);
    }
    let zeros: Vec<usize> = (0..prices.len()).filter(|&j| prices[j] == 0.0).collect();
    if zeros.is_empty() {
        return Ok(true);
    }
    if zeros.len() == prices.len() {
        return utility::satiable(u);
    }
    let ulp = utility::to_lp(u)?;
    Ok(!utility::has_improving_ray(&ulp, &zeros)?)
}

/// Computes a Gale demand by ternary search over the utility level, with an
/// inner cost-minimization LP per probe.
pub fn gale_demand(u: &UtilitySpec, prices: &[f64], budget: f64) -> Result<GaleDemandSolution, Error> {
    let mut sol = gale_demand_impl(u, prices, budget, true)?;
    if sol.certificate.is_none() {
        if let Ok(report) = verify_gale_kkt(u, prices, budget, &sol.bundle) {
            sol.certificate = Some(report.witness);
        }
    }
    Ok(sol)
}

/// Fast internal route: exact waterfilling for separable families, scalar
/// bisection on the utility-price multiplier otherwise. No certificate.
pub(crate) fn gale_demand_fast(
    u: &UtilitySpec,
    prices: &[f64],
    budget: f64,
) -> Result<GaleDemandSolution, Error> {
    gale_demand_impl(u, prices, budget, false)
}

/// Fast route with a warm-start bracket for the multiplier bisection; the
/// hint is updated with the multiplier actually used.
pub(crate) fn gale_demand_fast_hinted(
    u: &UtilitySpec,
    prices: &[f64],
    budget: f64,
    hint: &mut Option<f64>,
) -> Result<GaleDemandSolution, Error> {
    check_inputs(u, prices, budget)?;
    if let UtilitySpec::Quadratic(q) = u {
        return quadratic_gale(q, prices, budget);
    }
    if let Some(segments) = u.separable_segments() {
        if prices.iter().all(|&p| p == 0.0) {
            return gale_demand_impl(u, prices, budget, false);
        }
        return waterfill_gale(&segments, prices, budget);
    }
    if !in_price_domain(u, prices)? {
        return Err(Error::OutsidePriceDomain);
    }
    if prices.iter().all(|&p| p == 0.0) {
        return satiation_gale(u, prices, budget);
    }
    let ulp = utility::to_lp(u)?;
    let best = demand(u, prices, budget)?;
    let t_hi = best.value;
    if t_hi <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    let total: f64 = prices.iter().sum();
    let uniform = vec![budget / total; prices.len()];
    let t_lo = (utility::eval(u, &uniform)? * 1e-6).min(t_hi * 0.5);
    if t_lo <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    let solver = CostSolver::new(&ulp, prices);
    let (bundle, mu) = bisect_multiplier(&ulp, prices, budget, t_lo, t_hi, &solver, *hint)?;
    *hint = Some(mu);
    finish_gale(u, prices, budget, bundle)
}

fn gale_demand_impl(
    u: &UtilitySpec,
    prices: &[f64],
    budget: f64,
    ternary: bool,
) -> Result<GaleDemandSolution, Error> {
    check_inputs(u, prices, budget)?;
    if !in_price_domain(u, prices)? {
        return Err(Error::OutsidePriceDomain);
    }
    if let UtilitySpec::Quadratic(q) = u {
        return quadratic_gale(q, prices, budget);
    }
    if prices.iter().all(|&p| p == 0.0) {
        return satiation_gale(u, prices, budget);
    }
    if !ternary {
        if let Some(segments) = u.separable_segments() {
            return waterfill_gale(&segments, prices, budget);
        }
    }

    let ulp = utility::to_lp(u)?;
    let best = demand(u, prices, budget)?;
    let t_hi = best.value;
    if t_hi <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    let total: f64 = prices.iter().sum();
    let uniform = vec![budget / total; prices.len()];
    let t_lo = (utility::eval(u, &uniform)? * 1e-6).min(t_hi * 0.5);
    if t_lo <= 0.0 {
        return Err(Error::ZeroUtility);
    }

    let solver = CostSolver::new(&ulp, prices);
    let bundle = if ternary {
        let mut lo = t_lo;
        let mut hi = t_hi;
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            let f1 = solver.objective(m1, budget)?;
            let f2 = solver.objective(m2, budget)?;
            if f1 < f2 {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        // Objective comparisons flatten out near the optimum; refine the
        // level against the cost slope, which stays exactly readable from
        // the inner LP dual.
        let t = solver.refine_level(0.5 * (lo + hi), t_lo, t_hi, budget)?;
        solver.bundle_at(t)?
    } else {
        bisect_multiplier(&ulp, prices, budget, t_lo, t_hi, &solver, None)?.0
    };

    finish_gale(u, prices, budget, bundle)
}

fn finish_gale(
    u: &UtilitySpec,
    prices: &[f64],
    budget: f64,
    bundle: Vec<f64>,
) -> Result<GaleDemandSolution, Error> {
    let value = utility::eval(u, &bundle)?;
    if value <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    let spend = dot(prices, &bundle);
    record_budget(spend, budget);
    Ok(GaleDemandSolution {
        bundle,
        value,
        spend,
        objective: budget * value.ln() - spend,
        certificate: None,
    })
}

/// Gale demand at all-zero prices: a satiation bundle of minimal total size.
fn satiation_gale(u: &UtilitySpec, prices: &[f64], budget: f64) -> Result<GaleDemandSolution, Error> {
    let ulp = utility::to_lp(u)?;
    let m = u.num_goods();
    let nz = ulp.vars();
    let mut builder = LpBuilder::new(nz + m);
    for (j, &cj) in ulp.c.iter().enumerate() {
        builder.set_objective(j, cj);
    }
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
    let sol = builder.solve()?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::OutsidePriceDomain);
    }
    let u_max = sol.value;
    // Among satiation bundles keep a minimal one.
    let mut value_row: Vec<(usize, f64)> = ulp
        .c
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, &v)| (j, v))
        .collect();
    value_row.shrink_to_fit();
    let mut face = builder.clone();
    face.add_ge(&value_row, u_max - 1e-11 * (1.0 + u_max.abs()));
    for j in 0..nz {
        face.set_objective(j, 0.0);
    }
    for g in 0..m {
        face.set_objective(nz + g, -1.0);
    }
    let fsol = face.solve()?;
    let bundle = if fsol.optimal() {
        fsol.primal[nz..].to_vec()
    } else {
        sol.primal[nz..].to_vec()
    };
    finish_gale(u, prices, budget, bundle)
}

/// Inner cost LP `min q·x  s.t.  u(x) >= t`, shared across probes.
struct CostSolver {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    objective: Vec<f64>,
    nz: usize,
    m: usize,
    value_row: usize,
}

impl CostSolver {
    fn new(ulp: &ParametricLP, prices: &[f64]) -> Self {
        let nz = ulp.vars();
        let m = prices.len();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (i, arow) in ulp.a.iter().enumerate() {
            let mut row = vec![0.0; nz + m];
            row[..nz].copy_from_slice(arow);
            for (g, &bv) in ulp.b[i].iter().enumerate() {
                row[nz + g] = -bv;
            }
            rows.push(row);
            rhs.push(ulp.offset[i]);
        }
        // -c·z <= -t, filled in per probe.
        let mut vrow = vec![0.0; nz + m];
        for (j, &cj) in ulp.c.iter().enumerate() {
            vrow[j] = -cj;
        }
        rows.push(vrow);
        rhs.push(0.0);
        let mut objective = vec![0.0; nz + m];
        for g in 0..m {
            objective[nz + g] = -prices[g];
        }
        CostSolver {
            rows,
            rhs,
            objective,
            nz,
            m,
            value_row: ulp.a.len(),
        }
    }

    fn cost(&self, t: f64) -> Result<Option<f64>, Error> {
        Ok(self.cost_with_slope(t)?.map(|(c, _)| c))
    }

    /// Minimum cost at level `t` plus the cost slope `c'(t)` from the dual of
    /// the level row. `None` when `t` exceeds the highest reachable utility.
    fn cost_with_slope(&self, t: f64) -> Result<Option<(f64, f64)>, Error> {
        let mut rhs = self.rhs.clone();
        rhs[self.value_row] = -t;
        let sol = lp::solve_standard(&self.rows, &rhs, &self.objective)?;
        match sol.status {
            LpStatus::Optimal => Ok(Some((-sol.value, sol.dual[self.value_row]))),
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(Error::NumericalFailure(
                "cost minimization cannot be unbounded".into(),
            )),
        }
    }

    fn objective(&self, t: f64, budget: f64) -> Result<f64, Error> {
        match self.cost(t)? {
            Some(c) => Ok(budget * t.ln() - c),
            None => Ok(f64::NEG_INFINITY),
        }
    }

    /// Zero of `b/t - c'(t)` near `center`: sign bisection on the decreasing
    /// derivative, then an exact snap to `b / c'` inside the final piece.
    fn refine_level(&self, center: f64, t_min: f64, t_max: f64, budget: f64) -> Result<f64, Error> {
        let sign = |t: f64| -> Result<f64, Error> {
            match self.cost_with_slope(t)? {
                Some((_, slope)) => Ok(budget / t - slope),
                None => Ok(f64::NEG_INFINITY),
            }
        };
        let mut lo = (center * (1.0 - 1e-6)).max(t_min);
        let mut hi = (center * (1.0 + 1e-6)).min(t_max);
        let mut expand = center * 1e-6;
        while lo > t_min && sign(lo)? < 0.0 {
            lo = (lo - expand).max(t_min);
            expand *= 4.0;
        }
        expand = center * 1e-6;
        while hi < t_max && sign(hi)? > 0.0 {
            hi = (hi + expand).min(t_max);
            expand *= 4.0;
        }
        if sign(lo)? < 0.0 {
            return Ok(lo);
        }
        if sign(hi)? > 0.0 {
            return Ok(hi);
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if sign(mid)? >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        let mid = 0.5 * (lo + hi);
        if let Some((_, slope)) = self.cost_with_slope(mid)? {
            if slope > 1e-12 {
                let snapped = budget / slope;
                if snapped >= lo - 1e-9 && snapped <= hi + 1e-9 {
                    return Ok(snapped.clamp(t_min, t_max));
                }
            }
        }
        Ok(mid)
    }

    fn bundle_at(&self, t: f64) -> Result<Vec<f64>, Error> {
        let mut rhs = self.rhs.clone();
        rhs[self.value_row] = -t;
        let sol = lp::solve_standard(&self.rows, &rhs, &self.objective)?;
        if !sol.optimal() {
            return Err(Error::NumericalFailure(
                "cost minimization lost feasibility at the final level".into(),
            ));
        }
        Ok(sol.primal[self.nz..self.nz + self.m].to_vec())
    }
}

/// Scalar bisection on the utility multiplier `mu = b / t`.
fn bisect_multiplier(
    ulp: &ParametricLP,
    prices: &[f64],
    budget: f64,
    t_lo: f64,
    t_hi: f64,
    cost: &CostSolver,
    hint: Option<f64>,
) -> Result<(Vec<f64>, f64), Error> {
    let nz = ulp.vars();
    let m = prices.len();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (i, arow) in ulp.a.iter().enumerate() {
        let mut row = vec![0.0; nz + m];
        row[..nz].copy_from_slice(arow);
        for (g, &bv) in ulp.b[i].iter().enumerate() {
            row[nz + g] = -bv;
        }
        rows.push(row);
        rhs.push(ulp.offset[i]);
    }
    let level = |mu: f64| -> Result<f64, Error> {
        let mut objective = vec![0.0; nz + m];
        for (j, &cj) in ulp.c.iter().enumerate() {
            objective[j] = mu * cj;
        }
        for g in 0..m {
            objective[nz + g] -= prices[g];
        }
        let sol = lp::solve_standard(&rows, &rhs, &objective)?;
        match sol.status {
            LpStatus::Optimal => {
                let t: f64 = ulp
                    .c
                    .iter()
                    .enumerate()
                    .map(|(j, &cj)| cj * sol.primal[j])
                    .sum();
                Ok(t)
            }
            LpStatus::Unbounded => Ok(f64::INFINITY),
            LpStatus::Infeasible => Err(Error::NumericalFailure(
                "multiplier subproblem infeasible".into(),
            )),
        }
    };
    let full_lo = budget / t_hi * 0.5;
    let full_hi = (budget / t_lo) * 2.0;
    let (mut lo, mut hi) = match hint {
        Some(mu) => {
            let mut lo = (mu * 0.5).max(full_lo);
            let mut hi = (mu * 2.0).min(full_hi);
            // Re-establish the sign bracket around the warm start.
            while lo > full_lo && lo * level(lo)? > budget {
                lo = (lo * 0.25).max(full_lo);
            }
            while hi < full_hi && hi * level(hi)? < budget {
                hi = (hi * 4.0).min(full_hi);
            }
            (lo, hi)
        }
        None => (full_lo, full_hi),
    };
    for _ in 0..120 {
        let mid = if hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        let t = level(mid)?;
        if mid * t > budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-13 * hi {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    let bundle = cost.bundle_at((budget / mu).clamp(t_lo.min(t_hi), t_hi))?;
    Ok((bundle, mu))
}

/// Exact Gale demand of a separable piecewise-linear utility.
///
/// Segments activate by the ratio `slope / price`; the optimal utility level
/// satisfies `u = b·theta` where `theta` is the activation threshold.
fn waterfill_gale(
    segments: &[Vec<(f64, f64)>],
    prices: &[f64],
    budget: f64,
) -> Result<GaleDemandSolution, Error> {
    #[derive(Clone, Copy)]
    struct Seg {
        good: usize,
        slope: f64,
        len: f64,
        ratio: f64,
    }
    let mut segs = Vec::new();
    for (j, list) in segments.iter().enumerate() {
        for &(slope, len) in list {
            if slope <= 0.0 {
                continue;
            }
            let ratio = if prices[j] > 0.0 {
                slope / prices[j]
            } else {
                f64::INFINITY
            };
            segs.push(Seg {
                good: j,
                slope,
                len,
                ratio,
            });
        }
    }
    if segs.is_empty() {
        return Err(Error::ZeroUtility);
    }
    segs.sort_by(|a, b| b.ratio.partial_cmp(&a.ratio).unwrap());

    let m = prices.len();
    let mut bundle = vec![0.0; m];
    let mut filled_value = 0.0;
    let mut idx = 0;
    while idx < segs.len() {
        // Class of segments sharing this activation ratio.
        let ratio = segs[idx].ratio;
        let mut end = idx;
        let mut class_value = 0.0;
        while end < segs.len() && segs[end].ratio == ratio {
            class_value += segs[end].slope * segs[end].len;
            end += 1;
        }
        let next_ratio = if end < segs.len() { segs[end].ratio } else { 0.0 };

        // Crossing at this breakpoint: partially fill the class.
        if ratio.is_finite() && filled_value <= budget * ratio
            && budget * ratio <= filled_value + class_value
        {
            let mut need = budget * ratio - filled_value;
            for s in &segs[idx..end] {
                let take_value = need.min(s.slope * s.len);
                bundle[s.good] += take_value / s.slope;
                need -= take_value;
                if need <= 0.0 {
                    break;
                }
            }
            let value = budget * ratio;
            let spend = dot(prices, &bundle);
            record_budget(spend, budget);
            return Ok(GaleDemandSolution {
                bundle,
                value,
                spend,
                objective: budget * value.ln() - spend,
                certificate: None,
            });
        }

        // Class fully active; check for a crossing inside the open interval.
        for s in &segs[idx..end] {
            bundle[s.good] += s.len;
        }
        filled_value += class_value;
        if !filled_value.is_finite() {
            // Only an unbounded segment on a free good activates fully; the
            // Gale objective has no finite supremum there.
            return Err(Error::OutsidePriceDomain);
        }
        let theta = filled_value / budget;
        if theta > next_ratio && theta <= ratio {
            let value = filled_value;
            let spend = dot(prices, &bundle);
            record_budget(spend, budget);
            return Ok(GaleDemandSolution {
                bundle,
                value,
                spend,
                objective: budget * value.ln() - spend,
                certificate: None,
            });
        }
        idx = end;
    }
    Err(Error::OutsidePriceDomain)
}

fn quadratic_value(q: &QuadraticUtility, x: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(&q.y).map(|(a, b)| a - b).collect();
    let mut quad = 0.0;
    for i in 0..d.len() {
        quad += d[i] * dot(&q.a[i], &d);
    }
    1.0 + dot(&q.p, &d) + quad
}

fn quadratic_grad(q: &QuadraticUtility, x: &[f64]) -> Vec<f64> {
    let d: Vec<f64> = x.iter().zip(&q.y).map(|(a, b)| a - b).collect();
    q.p.iter()
        .enumerate()
        .map(|(i, &pi)| pi + 2.0 * dot(&q.a[i], &d))
        .collect()
}

/// Projection onto `{x >= 0, w·x <= cap}` by bisection on the multiplier.
fn project_budget(v: &[f64], w: &[f64], cap: f64) -> Vec<f64> {
    let clamp = |lam: f64| -> Vec<f64> {
        v.iter()
            .zip(w)
            .map(|(&vi, &wi)| (vi - lam * wi).max(0.0))
            .collect()
    };
    let x0 = clamp(0.0);
    if dot(w, &x0) <= cap {
        return x0;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while dot(w, &clamp(hi)) > cap {
        hi *= 2.0;
        if hi > 1e18 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dot(w, &clamp(mid)) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clamp(hi)
}

fn quadratic_demand(
    q: &QuadraticUtility,
    prices: &[f64],
    budget: f64,
) -> Result<DemandSolution, Error> {
    let m = q.p.len();
    let start = project_budget(&q.y, prices, budget);
    let x = ascend(
        start,
        |x| quadratic_value(q, x),
        |x| quadratic_grad(q, x),
        |v, step_dir| project_budget(&v, prices, budget.max(step_dir)),
    );
    let value = quadratic_value(q, &x);
    let spend = dot(prices, &x);
    let grad = quadratic_grad(q, &x);
    let lambda = if spend >= budget - 1e-9 {
        (0..m)
            .filter(|&j| x[j] > 1e-9 && prices[j] > 1e-12)
            .map(|j| grad[j] / prices[j])
            .fold(0.0f64, f64::max)
    } else {
        0.0
    };
    Ok(DemandSolution {
        bundle: x,
        value,
        spend,
        lambda,
    })
}

/// Projected gradient ascent with backtracking; `project` receives the raw
/// step and a dummy scalar so closures can reuse the budget projection.
fn ascend<F, G, P>(start: Vec<f64>, f: F, grad: G, project: P) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
    P: Fn(Vec<f64>, f64) -> Vec<f64>,
{
    let mut x = start;
    let mut fx = f(&x);
    let mut step = 0.1;
    for _ in 0..20_000 {
        let g = grad(&x);
        let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + step * gi).collect();
        let cand = project(cand, 0.0);
        let fc = f(&cand);
        if fc.is_finite() && fc > fx + 1e-16 {
            let moved: f64 = cand
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            x = cand;
            fx = fc;
            step = (step * 1.25).min(1e3);
            if moved < 1e-14 {
                break;
            }
        } else {
            step *= 0.5;
            if step < 1e-15 {
                break;
            }
        }
    }
    x
}

fn quadratic_gale(
    q: &QuadraticUtility,
    prices: &[f64],
    budget: f64,
) -> Result<GaleDemandSolution, Error> {
    let objective = |x: &[f64]| -> f64 {
        let u = quadratic_value(q, x);
        if u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let g = quadratic_grad(q, x);
        if g.iter().any(|&v| v < -1e-7) {
            return f64::NEG_INFINITY;
        }
        budget * u.ln() - dot(prices, x)
    };
    let grad = |x: &[f64]| -> Vec<f64> {
        let u = quadratic_value(q, x);
        let g = quadratic_grad(q, x);
        g.iter()
            .zip(prices)
            .map(|(&gi, &pi)| budget * gi / u - pi)
            .collect()
    };
    let x = ascend(q.y.clone(), objective, grad, |v, _| {
        v.into_iter().map(|t| t.max(0.0)).collect()
    });
    let value = quadratic_value(q, &x);
    if value <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    let spend = dot(prices, &x);
    record_budget(spend, budget);
    Ok(GaleDemandSolution {
        bundle: x.clone(),
        value,
        spend,
        objective: budget * value.ln() - spend,
        certificate: Some(quadratic_grad(q, &x)),
    })
}

/// Searches the supergradient set at `y` for an element `g` with
/// `g_j <= q_j·u(y)/b`, tight on the support of `y`; reports the smallest
/// attainable violation.
pub fn verify_gale_kkt(
    u: &UtilitySpec,
    prices: &[f64],
    budget: f64,
    y: &[f64],
) -> Result<KktReport, Error> {
    check_inputs(u, prices, budget)?;
    let value = utility::eval(u, y)?;
    if value <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    let target: Vec<f64> = prices.iter().map(|&qj| qj * value / budget).collect();
    let scale = 1.0 + target.iter().fold(0.0f64, |a, &b| a.max(b.abs()));

    if let UtilitySpec::Quadratic(q) = u {
        let g = quadratic_grad(q, y);
        let mut residual = 0.0f64;
        for j in 0..g.len() {
            residual = residual.max(g[j] - target[j]);
            if y[j] > 1e-9 {
                residual = residual.max((g[j] - target[j]).abs());
            }
        }
        return Ok(KktReport {
            pass: residual <= OPT_TOL * scale,
            residual,
            witness: g,
        });
    }

    let ulp = utility::to_lp(u)?;
    let sol = lp::solve(&ulp, y)?;
    if !sol.optimal() {
        return Err(Error::UnboundedUtility);
    }
    let k = ulp.rows();
    let nz = ulp.vars();
    let m = y.len();
    let rhs = ulp.rhs(y);

    // Support classification ignores numerical dust: a coordinate that small
    // shifts the Gale objective by less than any tolerance in play, and its
    // tightness requirement would poison the certificate.
    let zmax = sol.primal.iter().fold(0.0f64, |a, &b| a.max(b));
    let ymax = y.iter().fold(0.0f64, |a, &b| a.max(b));

    // Variables: row duals pi (k) then per-good violation slacks s (m).
    let mut builder = LpBuilder::new(k + m);
    for g in 0..m {
        builder.set_objective(k + g, -1.0);
    }
    for j in 0..nz {
        let terms: Vec<(usize, f64)> = (0..k)
            .filter(|&i| ulp.a[i][j] != 0.0)
            .map(|i| (i, ulp.a[i][j]))
            .collect();
        builder.add_ge(&terms, ulp.c[j]);
        if sol.primal[j] > 1e-7 * (1.0 + zmax) {
            builder.add_le(&terms, ulp.c[j]);
        }
    }
    for i in 0..k {
        let slack = rhs[i] - dot(&ulp.a[i], &sol.primal);
        if slack > 1e-7 * (1.0 + rhs[i].abs()) {
            builder.add_le(&[(i, 1.0)], 0.0);
        }
    }
    for g in 0..m {
        let terms: Vec<(usize, f64)> = (0..k)
            .filter(|&i| ulp.b[i][g] != 0.0)
            .map(|i| (i, ulp.b[i][g]))
            .collect();
        let mut up = terms.clone();
        up.push((k + g, -1.0));
        builder.add_le(&up, target[g]);
        if y[g] > 1e-7 * (1.0 + ymax) {
            let mut down = terms;
            down.push((k + g, 1.0));
            builder.add_ge(&down, target[g]);
        }
    }
    let face = builder.solve()?;
    if !face.optimal() {
        return Err(Error::NumericalFailure(
            "supergradient face search failed".into(),
        ));
    }
    let pi = &face.primal[..k];
    let mut witness = vec![0.0; m];
    for i in 0..k {
        for g in 0..m {
            witness[g] += ulp.b[i][g] * pi[i];
        }
    }
    let residual = face.primal[k..].iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(KktReport {
        pass: residual <= OPT_TOL * scale,
        residual,
        witness,
    })
}

/// Selects, among Gale-optimal bundles, one minimizing the overshoot
/// `sum_j (y_j - reference_j)^+` over the frozen coordinates.
pub fn gale_demand_potential_select(
    u: &UtilitySpec,
    prices: &[f64],
    budget: f64,
    reference: &[f64],
    frozen: &[usize],
) -> Result<GaleDemandSolution, Error> {
    check_inputs(u, prices, budget)?;
    if reference.len() != u.num_goods() {
        return Err(Error::DimensionMismatch("reference bundle length".into()));
    }
    if matches!(u, UtilitySpec::Quadratic(_)) {
        // Strict concavity: the correspondence is single-valued.
        return gale_demand(u, prices, budget);
    }
    let base = gale_demand_fast(u, prices, budget)?;
    let ulp = utility::to_lp(u)?;
    let nz = ulp.vars();
    let m = u.num_goods();

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
    builder.add_ge(&value_terms, base.value - 1e-10 * (1.0 + base.value.abs()));
    let spend_terms: Vec<(usize, f64)> = (0..m)
        .filter(|&g| prices[g] != 0.0)
        .map(|g| (nz + g, prices[g]))
        .collect();
    builder.add_le(&spend_terms, base.spend + 1e-10 * (1.0 + base.spend.abs()));
    for &j in frozen {
        let w = builder.add_var(-1.0);
        builder.add_le(&[(nz + j, 1.0), (w, -1.0)], reference[j]);
    }
    let sol = builder.solve()?;
    if !sol.optimal() {
        return Err(Error::NumericalFailure("potential face search failed".into()));
    }
    let bundle = sol.primal[nz..nz + m].to_vec();
    finish_gale(u, prices, budget, bundle)
}
