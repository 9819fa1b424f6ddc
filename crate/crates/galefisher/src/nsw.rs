//! Nash-welfare maximization through the dual of the Eisenberg–Gale program.
//!
//! The dual function `phi(q)` sums the per-agent Gale objectives plus the
//! total price mass; its subgradient at `q` is one minus the aggregate Gale
//! demand. The solver runs projected subgradient descent with Polyak steps,
//! recovers a primal allocation from the per-agent Gale faces, and certifies
//! the result with a duality-gap estimate.

use crate::demand::{self, gale_demand_fast, gale_demand_fast_hinted};
use crate::lp::{self, LpBuilder};
use crate::model::{dot, Allocation, MarketInstance};
use crate::utility::{self, UtilitySpec};
use crate::Error;

#[derive(Debug, Clone)]
pub struct EgOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Record the price trajectory for later inspection or CSV output.
    pub trace: bool,
}

impl Default for EgOptions {
    fn default() -> Self {
        EgOptions {
            tol: 1e-5,
            max_iters: 5000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EgTracePoint {
    pub iter: usize,
    pub phi: f64,
    pub gap: f64,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NswSolution {
    pub allocation: Allocation,
    pub prices: Vec<f64>,
    /// Budget-weighted geometric mean of the utilities.
    pub nsw: f64,
    /// `sum_i b_i log u_i` of the returned allocation.
    pub log_primal: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub trace: Vec<EgTracePoint>,
}

/// Budget-weighted geometric mean of the agents' utilities, in log domain.
pub fn nsw_value(instance: &MarketInstance, allocation: &Allocation) -> Result<f64, Error> {
    Ok((log_nsw(instance, allocation)? / instance.total_budget()).exp())
}

fn log_nsw(instance: &MarketInstance, allocation: &Allocation) -> Result<f64, Error> {
    if allocation.rows.len() != instance.num_agents() {
        return Err(Error::DimensionMismatch("allocation rows".into()));
    }
    let mut total = 0.0;
    for (agent, row) in instance.agents.iter().zip(&allocation.rows) {
        let u = utility::eval(&agent.utility, row)?;
        if u <= 0.0 {
            return Err(Error::ZeroUtility);
        }
        total += agent.budget * u.ln();
    }
    Ok(total)
}

/// The dual value `phi(q)`: per-agent Gale objectives plus the price mass.
pub fn phi(instance: &MarketInstance, prices: &[f64]) -> Result<f64, Error> {
    for agent in &instance.agents {
        if !demand::in_price_domain(&agent.utility, prices)? {
            return Err(Error::OutsidePriceDomain);
        }
    }
    let mut total: f64 = prices.iter().sum();
    for agent in &instance.agents {
        let g = gale_demand_fast(&agent.utility, prices, agent.budget)?;
        total += g.objective;
    }
    Ok(total)
}

/// A subgradient of `phi` at `q`: one minus the aggregate Gale demand.
pub fn phi_subgradient(instance: &MarketInstance, prices: &[f64]) -> Result<Vec<f64>, Error> {
    let mut s = vec![1.0; prices.len()];
    for agent in &instance.agents {
        if !demand::in_price_domain(&agent.utility, prices)? {
            return Err(Error::OutsidePriceDomain);
        }
        let g = gale_demand_fast(&agent.utility, prices, agent.budget)?;
        for (sj, yj) in s.iter_mut().zip(&g.bundle) {
            *sj -= yj;
        }
    }
    Ok(s)
}

/// Maximizes Nash welfare by subgradient descent on the dual, then recovers
/// a feasible allocation from the per-agent Gale faces at the best prices.
pub fn solve_eg(instance: &MarketInstance, options: &EgOptions) -> Result<NswSolution, Error> {
    let m = instance.num_goods();
    let n = instance.num_agents();
    if m == 0 || n == 0 {
        return Err(Error::Domain("empty instance".into()));
    }
    let ones = vec![1.0; m];
    for agent in &instance.agents {
        // Domain-restricted utilities cannot evaluate the full supply box;
        // a demand probe answers the same positivity question.
        let positive = match utility::eval(&agent.utility, &ones) {
            Ok(v) => v > 0.0,
            Err(Error::Domain(_)) => demand::demand(&agent.utility, &ones, agent.budget)
                .map(|d| d.value > 0.0)
                .unwrap_or(false),
            Err(e) => return Err(e),
        };
        if !positive {
            return Err(Error::InfeasibleAgent(agent.id.clone()));
        }
    }

    let scale = instance.total_budget() / m as f64;
    let mut q = vec![scale; m];
    let mut q_best = q.clone();
    let mut phi_best = f64::INFINITY;
    let mut p_best = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut last_improved = 0usize;
    let mut hints: Vec<Option<f64>> = vec![None; n];

    for k in 1..=options.max_iters {
        iterations = k;
        let floor = (scale * 0.01 / (k as f64).powi(2)).max(scale * 1e-7);
        let mut bundles = Vec::with_capacity(n);
        let mut phi_k: f64 = q.iter().sum();
        for (agent, hint) in instance.agents.iter().zip(&mut hints) {
            let g = gale_demand_fast_hinted(&agent.utility, &q, agent.budget, hint)?;
            phi_k += g.objective;
            bundles.push(g.bundle);
        }
        if phi_k < phi_best {
            phi_best = phi_k;
            q_best = q.clone();
            last_improved = k;
        }
        let mut s = vec![1.0; m];
        for bundle in &bundles {
            for (sj, yj) in s.iter_mut().zip(bundle) {
                *sj -= yj;
            }
        }

        if k % 20 == 0 || k == 1 {
            if let Ok(p) = rescaled_log_primal(instance, &bundles) {
                p_best = p_best.max(p);
            }
        }
        if k % 250 == 0 {
            // The face-glued recovery is a much sharper primal bound than
            // plain rescaling when demands concentrate on face vertices.
            if let Ok(alloc) = recover_allocation(instance, &q_best) {
                if let Ok(p) = log_nsw(instance, &alloc) {
                    p_best = p_best.max(p);
                }
            }
        }
        let gap = phi_best - p_best;
        if options.trace {
            trace.push(EgTracePoint {
                iter: k,
                phi: phi_k,
                gap,
                prices: q.clone(),
            });
        }
        if p_best.is_finite() && gap <= options.tol * (1.0 + p_best.abs()) {
            break;
        }
        if k.saturating_sub(last_improved) > 300 {
            // Plateaued; the deterministic polish finishes the job.
            break;
        }

        let norm2 = dot(&s, &s);
        let norm = norm2.sqrt();
        let eta = if p_best.is_finite() && phi_k - p_best < 2.0 * scale && norm2 > 1e-18 {
            ((phi_k - p_best) / norm2).clamp(1e-12 * scale, 2.0 * scale)
        } else {
            // Normalized diminishing step while the gap estimate is crude.
            0.5 * scale / ((k as f64).sqrt() * norm.max(1e-9))
        };
        for (qj, sj) in q.iter_mut().zip(&s) {
            *qj = (*qj - eta * sj).max(floor);
        }
    }

    // Deterministic polish on desk-scale instances: descend along the
    // face-recovered aggregate subgradient with a line search (the face LP
    // picks the minimal-clearing element of the subdifferential, which cuts
    // straight through nonsmooth ridges), then pin single coordinates by
    // sign bisection.
    if m * n <= 60 {
        let floor = scale * 1e-7;
        descent_polish(instance, &mut q_best, floor, scale, &mut hints)?;
        polish_prices(instance, &mut q_best, floor, &mut hints)?;
    }
    let _ = phi_best;

    // Primal recovery on the best prices: exact per-agent Gale faces glued by
    // a clearing LP, then a proportional per-good rescale.
    let allocation = recover_allocation(instance, &q_best)?;
    let log_primal = log_nsw(instance, &allocation)?;
    let dual_value = phi(instance, &q_best)?;
    let total_b = instance.total_budget();
    Ok(NswSolution {
        allocation,
        prices: q_best,
        nsw: (log_primal / total_b).exp(),
        log_primal,
        dual_value,
        gap: dual_value - log_primal,
        iterations,
        trace,
    })
}

fn phi_hinted(
    instance: &MarketInstance,
    q: &[f64],
    hints: &mut [Option<f64>],
) -> Result<f64, Error> {
    let mut total: f64 = q.iter().sum();
    for (agent, hint) in instance.agents.iter().zip(hints.iter_mut()) {
        total += gale_demand_fast_hinted(&agent.utility, q, agent.budget, hint)?.objective;
    }
    Ok(total)
}

/// Pattern search on the dual value over per-coordinate and diagonal moves.
/// Ties along symmetric price ridges make coordinate moves alone stall, so
/// the all-goods direction is probed as well.
fn pattern_search_phi(
    instance: &MarketInstance,
    q: &mut [f64],
    floor: f64,
    scale: f64,
    hints: &mut [Option<f64>],
) -> Result<(), Error> {
    let m = instance.num_goods();
    let mut cur = phi_hinted(instance, q, hints)?;
    let mut delta = 0.5 * scale;
    let mut evals = 0;
    while delta > 1e-9 * scale && evals < 900 {
        // Axes, the diagonal, the radial ray (which preserves price ratios,
        // the direction of bang-per-buck ridges), and pairwise differences.
        let mut directions: Vec<Vec<f64>> = Vec::new();
        for j in 0..m {
            let mut d = vec![0.0; m];
            d[j] = 1.0;
            directions.push(d);
        }
        directions.push(vec![1.0; m]);
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            directions.push(q.iter().map(|v| v / norm).collect());
        }
        for i in 0..m {
            for j in i + 1..m {
                let mut d = vec![0.0; m];
                d[i] = 1.0;
                d[j] = -1.0;
                directions.push(d);
            }
        }
        let mut improved = false;
        for dir in &directions {
            for sign in [1.0, -1.0] {
                let old = q.to_vec();
                for (v, dj) in q.iter_mut().zip(dir) {
                    *v = (*v + sign * dj * delta).max(floor);
                }
                if q == &old[..] {
                    continue;
                }
                let v = phi_hinted(instance, q, hints)?;
                evals += 1;
                if v < cur - 1e-14 * (1.0 + cur.abs()) {
                    cur = v;
                    improved = true;
                } else {
                    q.copy_from_slice(&old);
                }
            }
        }
        if !improved {
            delta *= 0.5;
        }
    }
    Ok(())
}

/// Raw face-glued allocation rows at `q`, before any rescale.
fn recover_rows(instance: &MarketInstance, q: &[f64]) -> Result<Vec<Vec<f64>>, Error> {
    Ok(recover_allocation_inner(instance, q)?.0)
}

/// Line-search descent along the minimal-clearing subgradient read off the
/// face recovery. Stops once positively priced goods clear to solver
/// precision, which doubles as the optimality certificate.
fn descent_polish(
    instance: &MarketInstance,
    q: &mut [f64],
    floor: f64,
    scale: f64,
    hints: &mut [Option<f64>],
) -> Result<(), Error> {
    pattern_search_phi(instance, q, floor, scale, hints)?;
    let mut phi_cur = phi_hinted(instance, q, hints)?;
    for _round in 0..40 {
        let rows = recover_rows(instance, q)?;
        let m = instance.num_goods();
        let mut shat = vec![1.0; m];
        for row in &rows {
            for (s, y) in shat.iter_mut().zip(row) {
                *s -= y;
            }
        }
        let err = (0..m)
            .map(|j| {
                if q[j] > 10.0 * floor {
                    shat[j].abs()
                } else {
                    (-shat[j]).max(0.0)
                }
            })
            .fold(0.0f64, f64::max);
        if err <= 1e-6 {
            break;
        }
        let mut improved = false;
        for mult in [1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5] {
            let eta = mult * scale;
            let probe: Vec<f64> = q
                .iter()
                .zip(&shat)
                .map(|(qj, sj)| (qj - eta * sj).max(floor))
                .collect();
            let v = phi_hinted(instance, &probe, hints)?;
            if v < phi_cur - 1e-13 * (1.0 + phi_cur.abs()) {
                q.copy_from_slice(&probe);
                phi_cur = v;
                improved = true;
                break;
            }
        }
        if !improved {
            let before = phi_cur;
            pattern_search_phi(instance, q, floor, scale * 1e-3, hints)?;
            phi_cur = phi_hinted(instance, q, hints)?;
            if phi_cur >= before - 1e-13 * (1.0 + before.abs()) {
                break;
            }
        }
    }
    Ok(())
}

/// Cyclic per-coordinate bisection on the sign of the aggregate-demand
/// subgradient. Convexity of the dual makes the subgradient monotone along
/// each coordinate, so the sign test is exact where objective comparisons
/// would flatten out. Each coordinate ends on the over-demanded side; the
/// final rescale then clears the market from above.
fn polish_prices(
    instance: &MarketInstance,
    q: &mut [f64],
    floor: f64,
    hints: &mut [Option<f64>],
) -> Result<(), Error> {
    let m = instance.num_goods();
    let subgrad_j = |q: &[f64], j: usize, hints: &mut [Option<f64>]| -> Result<f64, Error> {
        let mut s = 1.0;
        for (agent, hint) in instance.agents.iter().zip(hints.iter_mut()) {
            let g = gale_demand_fast_hinted(&agent.utility, q, agent.budget, hint)?;
            s -= g.bundle[j];
        }
        Ok(s)
    };
    let value = |q: &[f64], hints: &mut [Option<f64>]| -> Result<f64, Error> {
        let mut total: f64 = q.iter().sum();
        for (agent, hint) in instance.agents.iter().zip(hints.iter_mut()) {
            total += gale_demand_fast_hinted(&agent.utility, q, agent.budget, hint)?.objective;
        }
        Ok(total)
    };
    let mut cur = value(q, hints)?;
    for _sweep in 0..2 {
        for j in 0..m {
            let mut lo = floor;
            let mut hi = (q[j] * 4.0).max(floor * 2.0).max(1e-3);
            let mut tries = 0;
            loop {
                let mut probe = q.to_vec();
                probe[j] = hi;
                if subgrad_j(&probe, j, hints)? >= 0.0 || tries > 60 {
                    break;
                }
                hi *= 2.0;
                tries += 1;
            }
            let mut probe = q.to_vec();
            probe[j] = lo;
            let candidate = if subgrad_j(&probe, j, hints)? >= 0.0 {
                // The good clears even at a vanishing price.
                lo
            } else {
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    probe[j] = mid;
                    if subgrad_j(&probe, j, hints)? < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo.max(floor)
            };
            // Vertex selections can mislead a single-coordinate crossing when
            // demand faces tie across goods; keep the move only if the dual
            // value does not get worse.
            let old = q[j];
            q[j] = candidate;
            let v = value(q, hints)?;
            if v <= cur + 1e-12 * (1.0 + cur.abs()) {
                cur = v.min(cur);
            } else {
                q[j] = old;
            }
        }
    }
    Ok(())
}

fn rescaled_log_primal(instance: &MarketInstance, bundles: &[Vec<f64>]) -> Result<f64, Error> {
    let m = instance.num_goods();
    let mut colsum = vec![0.0; m];
    for bundle in bundles {
        for (c, y) in colsum.iter_mut().zip(bundle) {
            *c += y;
        }
    }
    let mut total = 0.0;
    for (agent, bundle) in instance.agents.iter().zip(bundles) {
        let scaled: Vec<f64> = bundle
            .iter()
            .zip(&colsum)
            .map(|(y, c)| if *c > 1.0 { y / c } else { *y })
            .collect();
        let u = utility::eval(&agent.utility, &scaled)?;
        if u <= 0.0 {
            return Err(Error::ZeroUtility);
        }
        total += agent.budget * u.ln();
    }
    Ok(total)
}

/// Glues per-agent Gale-optimal bundles into a market-clearing allocation:
/// each agent is pinned to their optimal face at `q`, and one LP minimizes the
/// total clearing violation across goods.
fn recover_allocation(instance: &MarketInstance, q: &[f64]) -> Result<Allocation, Error> {
    let (mut rows, m) = recover_allocation_inner(instance, q)?;
    // Proportional rescale clears any remaining overshoot exactly.
    let mut colsum = vec![0.0; m];
    for row in &rows {
        for (c, y) in colsum.iter_mut().zip(row) {
            *c += y;
        }
    }
    for row in &mut rows {
        for (y, c) in row.iter_mut().zip(&colsum) {
            if *c > 1.0 {
                *y /= *c;
            }
        }
    }
    Ok(Allocation::new(rows))
}

fn recover_allocation_inner(
    instance: &MarketInstance,
    q: &[f64],
) -> Result<(Vec<Vec<f64>>, usize), Error> {
    let m = instance.num_goods();
    let n = instance.num_agents();
    let scale = instance.total_budget() / m as f64;

    struct FaceData {
        lp: Option<lp::ParametricLP>,
        value: f64,
        spend: f64,
        bundle: Vec<f64>,
    }
    let mut faces = Vec::with_capacity(n);
    for agent in &instance.agents {
        let g = gale_demand_fast(&agent.utility, q, agent.budget)?;
        let lp = match &agent.utility {
            UtilitySpec::Quadratic(_) => None,
            u => Some(utility::to_lp(u)?),
        };
        faces.push(FaceData {
            lp,
            value: g.value,
            spend: g.spend,
            bundle: g.bundle,
        });
    }

    // Variables: per agent with an LP form, (z_i, y_i); then per good one
    // overshoot and one undershoot slack.
    let mut builder = LpBuilder::new(0);
    let mut y_var = vec![usize::MAX; n];
    for (i, face) in faces.iter().enumerate() {
        let Some(ulp) = &face.lp else { continue };
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
        let value_terms: Vec<(usize, f64)> = ulp
            .c
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (z0 + j, v))
            .collect();
        builder.add_ge(&value_terms, face.value - 1e-8 * (1.0 + face.value.abs()));
        let spend_terms: Vec<(usize, f64)> = (0..m)
            .filter(|&g| q[g] != 0.0)
            .map(|g| (z0 + nz + g, q[g]))
            .collect();
        builder.add_le(&spend_terms, face.spend + 1e-8 * (1.0 + face.spend.abs()));
    }
    for g in 0..m {
        let over = builder.add_var(-1.0);
        let mut fixed = 0.0;
        let mut terms = Vec::new();
        for i in 0..n {
            if y_var[i] == usize::MAX {
                fixed += faces[i].bundle[g];
            } else {
                terms.push((y_var[i] + g, 1.0));
            }
        }
        let mut over_terms = terms.clone();
        over_terms.push((over, -1.0));
        builder.add_le(&over_terms, 1.0 - fixed);
        if q[g] > 1e-6 * scale {
            let under = builder.add_var(-1.0);
            let mut under_terms = terms;
            under_terms.push((under, 1.0));
            builder.add_ge(&under_terms, 1.0 - fixed);
        }
    }
    let sol = builder.solve()?;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    if sol.optimal() {
        for i in 0..n {
            if y_var[i] == usize::MAX {
                rows.push(faces[i].bundle.clone());
            } else {
                rows.push(sol.primal[y_var[i]..y_var[i] + m].to_vec());
            }
        }
    } else {
        rows = faces.iter().map(|f| f.bundle.clone()).collect();
    }
    Ok((rows, m))
}
