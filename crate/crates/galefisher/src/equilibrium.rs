//! Competitive-equilibrium verification, thrifty and approximate variants,
//! a grid brute-forcer for tiny instances, and the quantitative ratio checks
//! between equilibria and Nash-welfare maximizers.

use rayon::prelude::*;

use crate::demand::{self, DemandSolution};
use crate::lp::{LpBuilder, LpStatus};
use crate::model::{dot, Allocation, MarketInstance};
use crate::nsw::{self, NswSolution};
use crate::utility::{self, UtilitySpec};
use crate::Error;

#[derive(Debug, Clone)]
pub struct AgentCheck {
    pub id: String,
    pub budget: f64,
    pub spend: f64,
    /// Maximum utility affordable at the tested prices.
    pub best_response: f64,
    pub achieved: f64,
    /// Cheapest spend reaching the best response; set by the thrifty check.
    pub min_spend: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CEReport {
    pub agents: Vec<AgentCheck>,
    /// Per-good column sum minus one.
    pub clearing_residual: Vec<f64>,
    pub is_ce: bool,
    pub is_thrifty: Option<bool>,
    /// Worst best-response-to-achieved ratio across agents.
    pub alpha_achieved: f64,
    pub tol: f64,
}

/// Verifies a competitive equilibrium: optimal bundles, budgets respected,
/// no good oversold, positively priced goods sold out.
pub fn verify_ce(
    instance: &MarketInstance,
    allocation: &Allocation,
    prices: &[f64],
    tol: f64,
) -> Result<CEReport, Error> {
    verify_approx_ce(instance, allocation, prices, 1.0, tol)
}

/// Approximate variant: each agent needs only a `1/alpha` share of their best
/// affordable utility.
pub fn verify_approx_ce(
    instance: &MarketInstance,
    allocation: &Allocation,
    prices: &[f64],
    alpha: f64,
    tol: f64,
) -> Result<CEReport, Error> {
    if alpha < 1.0 {
        return Err(Error::Domain("alpha must be at least 1".into()));
    }
    let m = instance.num_goods();
    if prices.len() != m || allocation.rows.len() != instance.num_agents() {
        return Err(Error::DimensionMismatch("allocation or price size".into()));
    }
    let mut agents = Vec::new();
    let mut is_ce = true;
    let mut alpha_achieved = 1.0f64;
    for (agent, row) in instance.agents.iter().zip(&allocation.rows) {
        let achieved = utility::eval(&agent.utility, row)?;
        let spend = dot(prices, row);
        let best_response = match demand::demand(&agent.utility, prices, agent.budget) {
            Ok(DemandSolution { value, .. }) => value,
            Err(Error::UnboundedDemand) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if spend > agent.budget + tol {
            is_ce = false;
        }
        if achieved < best_response / alpha - tol {
            is_ce = false;
        }
        if achieved > 0.0 {
            alpha_achieved = alpha_achieved.max(best_response / achieved);
        } else if best_response > tol {
            alpha_achieved = f64::INFINITY;
        }
        agents.push(AgentCheck {
            id: agent.id.clone(),
            budget: agent.budget,
            spend,
            best_response,
            achieved,
            min_spend: None,
        });
    }
    let clearing_residual: Vec<f64> = allocation
        .column_sums(m)
        .iter()
        .map(|s| s - 1.0)
        .collect();
    for (j, r) in clearing_residual.iter().enumerate() {
        if *r > tol {
            is_ce = false;
        }
        if prices[j] > tol && r.abs() > tol {
            is_ce = false;
        }
    }
    Ok(CEReport {
        agents,
        clearing_residual,
        is_ce,
        is_thrifty: None,
        alpha_achieved,
        tol,
    })
}

/// Cheapest spend reaching utility at least `floor` at these prices.
fn min_spend(u: &UtilitySpec, prices: &[f64], floor: f64, budget: f64) -> Result<f64, Error> {
    if let UtilitySpec::Quadratic(_) = u {
        // Strictly concave utilities have a single optimal bundle, so the
        // demand spend is already minimal.
        return Ok(demand::demand(u, prices, budget)?.spend);
    }
    let ulp = utility::to_lp(u)?;
    let nz = ulp.vars();
    let m = prices.len();
    let mut builder = LpBuilder::new(nz + m);
    for g in 0..m {
        builder.set_objective(nz + g, -prices[g]);
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
    let value_terms: Vec<(usize, f64)> = ulp
        .c
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, &v)| (j, v))
        .collect();
    builder.add_ge(&value_terms, floor);
    let sol = builder.solve()?;
    if !sol.optimal() {
        return Err(Error::NumericalFailure(
            "cheapest-spend program did not solve".into(),
        ));
    }
    Ok(-sol.value)
}

/// Thrifty variant: every agent additionally spends the least money that
/// still reaches their best response.
pub fn verify_thrifty(
    instance: &MarketInstance,
    allocation: &Allocation,
    prices: &[f64],
    tol: f64,
) -> Result<CEReport, Error> {
    let mut report = verify_ce(instance, allocation, prices, tol)?;
    let mut thrifty = report.is_ce;
    for (agent, check) in instance.agents.iter().zip(&mut report.agents) {
        if !check.best_response.is_finite() {
            thrifty = false;
            continue;
        }
        // The utility floor is relaxed only by solver precision: a user-sized
        // relaxation would let the program trade utility for money along any
        // cheap low-slope segment and understate the true minimum spend.
        let floor = check.best_response - 1e-12 * (1.0 + check.best_response.abs());
        let ms = min_spend(&agent.utility, prices, floor, agent.budget)?;
        check.min_spend = Some(ms);
        if check.spend > ms + tol.max(1e-9) {
            thrifty = false;
        }
    }
    report.is_thrifty = Some(thrifty);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct EnvyReport {
    /// Worst `u_i(x_k) / u_i(x_i)` over agent pairs.
    pub beta: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub equal_budgets: bool,
}

/// Worst pairwise envy ratio; informational when budgets differ.
pub fn envy_report(instance: &MarketInstance, allocation: &Allocation) -> Result<EnvyReport, Error> {
    let n = instance.num_agents();
    if allocation.rows.len() != n {
        return Err(Error::DimensionMismatch("allocation rows".into()));
    }
    let b0 = instance.agents[0].budget;
    let equal_budgets = instance
        .agents
        .iter()
        .all(|a| (a.budget - b0).abs() <= 1e-12 * (1.0 + b0.abs()));
    let mut beta = 1.0f64;
    let mut worst_pair = None;
    for i in 0..n {
        let own = utility::eval(&instance.agents[i].utility, &allocation.rows[i])?;
        for k in 0..n {
            if i == k {
                continue;
            }
            let other = utility::eval(&instance.agents[i].utility, &allocation.rows[k])?;
            let ratio = if own > 0.0 {
                other / own
            } else if other > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            if ratio > beta {
                beta = ratio;
                worst_pair = Some((i, k));
            }
        }
    }
    Ok(EnvyReport {
        beta,
        worst_pair,
        equal_budgets,
    })
}

#[derive(Debug, Clone)]
pub struct FoundEquilibrium {
    pub prices: Vec<f64>,
    pub allocation: Allocation,
    pub report: CEReport,
}

struct ScoreOutcome {
    violation: f64,
    allocation: Option<Allocation>,
}

#[doc(hidden)]
pub fn debug_clearing_score(
    instance: &MarketInstance,
    prices: &[f64],
    slack: f64,
    thrifty: bool,
) -> Result<Option<(f64, Option<Allocation>)>, Error> {
    Ok(clearing_score(instance, prices, slack, thrifty, None)?
        .map(|o| (o.violation, o.allocation)))
}

/// Minimal weighted violation over allocations where every agent sits near
/// their best response (and near the cheapest spend, when `thrifty`).
///
/// Utility shortfalls below the best response are penalized rather than
/// forbidden: equilibria of markets with bang-per-buck ties live exactly on
/// price ridges where the demand correspondence is set-valued, and a hard
/// floor makes the score jump discontinuously off the ridge. The penalized
/// score decays continuously to zero on it. `cap` bounds each violation
/// variable during screening; `None` leaves them free.
fn clearing_score(
    instance: &MarketInstance,
    prices: &[f64],
    slack: f64,
    thrifty: bool,
    cap: Option<f64>,
) -> Result<Option<ScoreOutcome>, Error> {
    // Weight of a unit of utility shortfall against a unit of misclearing.
    const SHORTFALL_WEIGHT: f64 = 10.0;
    let m = instance.num_goods();
    let n = instance.num_agents();
    let mut best = Vec::with_capacity(n);
    for agent in &instance.agents {
        match demand::demand(&agent.utility, prices, agent.budget) {
            Ok(d) => best.push(d),
            Err(Error::UnboundedDemand) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    let mut builder = LpBuilder::new(0);
    let mut y_var = vec![usize::MAX; n];
    for (i, agent) in instance.agents.iter().enumerate() {
        if let UtilitySpec::Quadratic(_) = agent.utility {
            continue; // unique demand, pinned below
        }
        let ulp = utility::to_lp(&agent.utility)?;
        let nz = ulp.vars();
        let z0 = builder.nvars();
        for _ in 0..nz + m {
            builder.add_var(0.0);
        }
        y_var[i] = z0 + nz;
        for (r, arow) in ulp.a.iter().enumerate() {
            let mut terms: Vec<(usize, f64)> = arow
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, &v)| (z0 + j, v))
                .collect();
            for (g, &bv) in ulp.b[r].iter().enumerate() {
                if bv != 0.0 {
                    terms.push((z0 + nz + g, -bv));
                }
            }
            builder.add_le(&terms, ulp.offset[r]);
        }
        let shortfall = builder.add_var(-SHORTFALL_WEIGHT);
        if let Some(c) = cap {
            builder.add_le(&[(shortfall, 1.0)], c);
        }
        let mut value_terms: Vec<(usize, f64)> = ulp
            .c
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (z0 + j, v))
            .collect();
        value_terms.push((shortfall, 1.0));
        builder.add_ge(&value_terms, best[i].value - slack);
        let spend_terms: Vec<(usize, f64)> = (0..m)
            .filter(|&g| prices[g] != 0.0)
            .map(|g| (z0 + nz + g, prices[g]))
            .collect();
        builder.add_le(&spend_terms, instance.agents[i].budget);
        if thrifty {
            let ms = min_spend(
                &agent.utility,
                prices,
                best[i].value - slack,
                agent.budget,
            )?;
            let mut relaxed = spend_terms.clone();
            relaxed.push((shortfall, -SHORTFALL_WEIGHT));
            builder.add_le(&relaxed, ms + slack);
        }
    }
    for g in 0..m {
        let mut fixed = 0.0;
        let mut terms = Vec::new();
        for i in 0..n {
            if y_var[i] == usize::MAX {
                fixed += best[i].bundle[g];
            } else {
                terms.push((y_var[i] + g, 1.0));
            }
        }
        let over = builder.add_var(-1.0);
        if let Some(c) = cap {
            builder.add_le(&[(over, 1.0)], c);
        }
        let mut over_terms = terms.clone();
        over_terms.push((over, -1.0));
        builder.add_le(&over_terms, 1.0 - fixed);
        if prices[g] > 1e-9 {
            let under = builder.add_var(-1.0);
            if let Some(c) = cap {
                builder.add_le(&[(under, 1.0)], c);
            }
            let mut under_terms = terms;
            under_terms.push((under, 1.0));
            builder.add_ge(&under_terms, 1.0 - fixed);
        }
    }
    let sol = builder.solve()?;
    match sol.status {
        LpStatus::Optimal => {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    if y_var[i] == usize::MAX {
                        best[i].bundle.clone()
                    } else {
                        sol.primal[y_var[i]..y_var[i] + m].to_vec()
                    }
                })
                .collect();
            Ok(Some(ScoreOutcome {
                violation: -sol.value,
                allocation: Some(Allocation::new(rows)),
            }))
        }
        LpStatus::Infeasible => Ok(Some(ScoreOutcome {
            violation: f64::INFINITY,
            allocation: None,
        })),
        LpStatus::Unbounded => Err(Error::NumericalFailure(
            "clearing score cannot be unbounded".into(),
        )),
    }
}

/// Grid brute force over candidate prices for tiny instances, with local
/// pattern-search polishing of every surviving candidate.
///
/// Completeness depends on the grid: equilibria are found only when a grid
/// point lands close enough for the relaxed screen.
pub fn brute_force_ce(
    instance: &MarketInstance,
    grid: usize,
    thrifty: bool,
) -> Result<Vec<FoundEquilibrium>, Error> {
    let m = instance.num_goods();
    let n = instance.num_agents();
    if m > 4 || n > 6 {
        return Err(Error::Domain(
            "brute force is restricted to tiny instances".into(),
        ));
    }
    if grid < 2 {
        return Err(Error::Domain("grid must have at least two steps".into()));
    }
    let total = instance.total_budget();
    let h = total / grid as f64;
    let mut all_nonsat = true;
    for agent in &instance.agents {
        if utility::satiable(&agent.utility)? {
            all_nonsat = false;
            break;
        }
    }

    // Candidate price points.
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if all_nonsat {
        // Non-satiable agents exhaust budgets, so prices live on the simplex
        // sum(p) = sum(b), including its degenerate boundary rays.
        fn compositions(m: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if m == 1 {
                prefix.push(left);
                out.push(prefix.clone());
                prefix.pop();
                return;
            }
            for k in 0..=left {
                prefix.push(k);
                compositions(m - 1, left - k, prefix, out);
                prefix.pop();
            }
        }
        let mut combos = Vec::new();
        compositions(m, grid, &mut Vec::new(), &mut combos);
        candidates.extend(
            combos
                .into_iter()
                .map(|ks| ks.into_iter().map(|k| k as f64 * h).collect()),
        );
    } else {
        let points = (grid + 1).pow(m as u32);
        for idx in 0..points {
            let mut p = Vec::with_capacity(m);
            let mut rest = idx;
            for _ in 0..m {
                p.push((rest % (grid + 1)) as f64 * h);
                rest /= grid + 1;
            }
            candidates.push(p);
        }
    }

    // Relaxed screen at tolerance 10 h.
    let relax = 10.0 * h;
    let screened: Vec<(Vec<f64>, f64)> = candidates
        .par_iter()
        .filter_map(|p| {
            match clearing_score(instance, p, relax, thrifty, Some(relax)) {
                Ok(Some(outcome)) if outcome.violation.is_finite() => {
                    Some((p.clone(), outcome.violation))
                }
                _ => None,
            }
        })
        .collect();

    // One representative per cluster, best screen score first.
    let debug = std::env::var_os("GALEFISHER_DEBUG_BRUTE").is_some();
    if debug {
        eprintln!("brute: {} candidates screened in", screened.len());
    }
    let mut ranked = screened;
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let mut reps: Vec<Vec<f64>> = Vec::new();
    for (p, _) in &ranked {
        let close = reps
            .iter()
            .any(|r| r.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= 3.0 * h);
        if !close {
            reps.push(p.clone());
        }
        if reps.len() >= 10 {
            break;
        }
    }

    // Probe axes, the diagonal, and pairwise opposite moves: clearing scores
    // have diagonal valleys that axis moves alone cannot descend.
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for j in 0..m {
        let mut d = vec![0.0; m];
        d[j] = 1.0;
        directions.push(d);
    }
    directions.push(vec![1.0; m]);
    for i in 0..m {
        for j in i + 1..m {
            let mut d = vec![0.0; m];
            d[i] = 1.0;
            d[j] = -1.0;
            directions.push(d);
        }
    }

    let polish_tol = 1e-9;
    let polished: Vec<FoundEquilibrium> = reps
        .par_iter()
        .filter_map(|start| {
            let score = |p: &[f64]| -> f64 {
                match clearing_score(instance, p, polish_tol, thrifty, None) {
                    Ok(Some(out)) => out.violation,
                    _ => f64::INFINITY,
                }
            };
            let mut p = start.clone();
            let mut cur = score(&p);
            let mut delta = h / 2.0;
            let mut evals = 0;
            while delta > 1e-10 && evals < 2500 && cur > 1e-9 * (1.0 + total) {
                let mut improved = false;
                for d in &directions {
                    for sign in [-1.0, 1.0] {
                        let probe: Vec<f64> = p
                            .iter()
                            .zip(d)
                            .map(|(v, dj)| (v + sign * dj * delta).max(0.0))
                            .collect();
                        if probe == p {
                            continue;
                        }
                        let v = score(&probe);
                        evals += 1;
                        if v < cur - 1e-15 {
                            p = probe;
                            cur = v;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    delta *= 0.5;
                }
            }
            if debug {
                eprintln!(
                    "brute: rep {start:?} polished to {p:?} score {cur:.3e} after {evals} evals"
                );
            }
            if cur > 1e-7 * (1.0 + total) {
                return None;
            }
            let outcome = clearing_score(instance, &p, polish_tol, thrifty, None).ok()??;
            let allocation = outcome.allocation?;
            let report = if thrifty {
                verify_thrifty(instance, &allocation, &p, 1e-6).ok()?
            } else {
                verify_ce(instance, &allocation, &p, 1e-6).ok()?
            };
            if !report.is_ce || (thrifty && report.is_thrifty != Some(true)) {
                if debug {
                    eprintln!(
                        "brute: candidate at {p:?} rejected: is_ce {} thrifty {:?} agents {:#?} clearing {:?}",
                        report.is_ce, report.is_thrifty, report.agents, report.clearing_residual
                    );
                }
                return None;
            }
            Some(FoundEquilibrium {
                prices: p,
                allocation,
                report,
            })
        })
        .collect();

    // Final dedup in case polishing merged basins.
    let mut out: Vec<FoundEquilibrium> = Vec::new();
    for eq in polished {
        let close = out.iter().any(|e| {
            e.prices
                .iter()
                .zip(&eq.prices)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                <= h / 2.0
        });
        if !close {
            out.push(eq);
        }
    }
    Ok(out)
}

/// Nash-welfare ratio of an equilibrium allocation against the maximizer.
pub fn poa_check(
    instance: &MarketInstance,
    ce_allocation: &Allocation,
    nsw_solution: &NswSolution,
) -> Result<f64, Error> {
    let ce = nsw::nsw_value(instance, ce_allocation)?;
    let opt = nsw::nsw_value(instance, &nsw_solution.allocation)?;
    if opt <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    Ok(ce / opt)
}

/// Per-agent `u_i(nsw) / u_i(ce)` ratios.
pub fn half_guarantee_check(
    instance: &MarketInstance,
    ce_allocation: &Allocation,
    nsw_solution: &NswSolution,
) -> Result<Vec<f64>, Error> {
    let mut ratios = Vec::new();
    for (i, agent) in instance.agents.iter().enumerate() {
        let at_ce = utility::eval(&agent.utility, &ce_allocation.rows[i])?;
        let at_nsw = utility::eval(&agent.utility, &nsw_solution.allocation.rows[i])?;
        let ratio = if at_ce > 0.0 {
            at_nsw / at_ce
        } else {
            f64::INFINITY
        };
        ratios.push(ratio);
    }
    Ok(ratios)
}
