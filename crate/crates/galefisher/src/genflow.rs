//! Fitting pairs, auxiliary graphs, and the flow transformations that carry a
//! Gale-optimal bundle of a generalized network utility to a smaller budget or
//! a lower price while only shrinking the other coordinates.

use crate::demand;
use crate::lp::{LpBuilder, LpStatus};
use crate::utility::{self, GenFlowNetwork, UtilitySpec};
use crate::Error;

/// Tightness tolerance for potential differences along arcs.
const DELTA_TOL: f64 = 1e-8;
/// Flow-at-bound classification tolerance.
const FLOW_TOL: f64 = 1e-9;

/// A feasible generalized flow together with node potentials satisfying the
/// complementarity system; the potential of the sink is one.
#[derive(Debug, Clone)]
pub struct FittingPair {
    pub flow: Vec<f64>,
    pub potential: Vec<f64>,
}

/// Snapshot of the transformation state after one mutation.
#[derive(Debug, Clone)]
pub struct DynamicsState {
    pub x: Vec<f64>,
    pub flow: Vec<f64>,
    pub potential: Vec<f64>,
    /// Remaining ratio between the target and current optimality conditions.
    pub alpha: f64,
    pub sink_value: f64,
}

#[derive(Debug, Clone)]
pub struct TransformOutcome {
    pub bundle: Vec<f64>,
    pub trace: Vec<DynamicsState>,
}

#[derive(Debug, Clone)]
pub struct FittingReport {
    pub ok: bool,
    pub worst: f64,
    pub detail: Option<String>,
}

/// Integer-indexed network with dead arcs removed.
#[derive(Debug, Clone)]
pub(crate) struct Net {
    pub n_nodes: usize,
    pub sink: usize,
    /// Node holding the supply of each good.
    pub supplies: Vec<usize>,
    /// (tail, head, gain, capacity).
    pub arcs: Vec<(usize, usize, f64, Option<f64>)>,
}

impl Net {
    pub fn compile(net: &GenFlowNetwork) -> Result<Self, Error> {
        let index = |name: &str| -> Result<usize, Error> {
            net.nodes
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Domain(format!("unknown node '{name}'")))
        };
        let sink = index(&net.sink)?;
        let supplies = net
            .supplies
            .iter()
            .map(|s| index(s))
            .collect::<Result<Vec<_>, _>>()?;
        let mut arcs = Vec::new();
        for arc in &net.arcs {
            if matches!(arc.cap, Some(c) if c <= FLOW_TOL) {
                continue;
            }
            arcs.push((index(&arc.tail)?, index(&arc.head)?, arc.gain, arc.cap));
        }
        Ok(Net {
            n_nodes: net.nodes.len(),
            sink,
            supplies,
            arcs,
        })
    }

    /// `net(f, v)` for every node.
    pub fn node_balance(&self, flow: &[f64]) -> Vec<f64> {
        let mut bal = vec![0.0; self.n_nodes];
        for (e, &(tail, head, gain, _)) in self.arcs.iter().enumerate() {
            bal[tail] -= flow[e];
            bal[head] += gain * flow[e];
        }
        bal
    }

    pub fn sink_value(&self, flow: &[f64]) -> f64 {
        self.node_balance(flow)[self.sink]
    }

    fn delta(&self, e: usize, potential: &[f64]) -> f64 {
        let (tail, head, gain, _) = self.arcs[e];
        gain * potential[head] - potential[tail]
    }

    fn good_of_node(&self, v: usize) -> Option<usize> {
        self.supplies.iter().position(|&s| s == v)
    }

    fn outflow_terms(&self, v: usize) -> Vec<(usize, f64)> {
        let mut terms = Vec::new();
        for (e, &(tail, head, gain, _)) in self.arcs.iter().enumerate() {
            let mut coef = 0.0;
            if tail == v {
                coef += 1.0;
            }
            if head == v {
                coef -= gain;
            }
            if coef != 0.0 {
                terms.push((e, coef));
            }
        }
        terms
    }
}

/// Interprets `u` as a generalized flow network, converting separable and
/// Leontief-free families through their network reductions.
pub fn as_network(u: &UtilitySpec) -> Result<GenFlowNetwork, Error> {
    match u {
        UtilitySpec::GenNetwork(net) => Ok(net.clone()),
        _ => utility::to_network(u),
    }
}

/// Checks the complementarity system of a candidate fitting pair.
pub fn check_fitting(
    network: &GenFlowNetwork,
    x: &[f64],
    flow: &[f64],
    potential: &[f64],
) -> Result<FittingReport, Error> {
    let net = Net::compile(network)?;
    if x.len() != net.supplies.len()
        || potential.len() != net.n_nodes
        || flow.len() != net.arcs.len()
    {
        return Err(Error::DimensionMismatch(
            "fitting pair dimensions do not match the network".into(),
        ));
    }
    let scale = 1.0 + potential.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let xscale = 1.0 + x.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut worst = 0.0f64;
    let mut detail = None;
    let mut record = |violation: f64, what: String| {
        if violation > worst {
            worst = violation;
            detail = Some(what);
        }
    };

    record((potential[net.sink] - 1.0).abs(), "sink potential".into());
    for (v, &p) in potential.iter().enumerate() {
        record(-p, format!("negative potential at node {v}"));
    }
    let bal = net.node_balance(flow);
    for (e, &f) in flow.iter().enumerate() {
        record(-f, format!("negative flow on arc {e}"));
        if let Some(h) = net.arcs[e].3 {
            record(f - h, format!("flow above capacity on arc {e}"));
        }
        let d = net.delta(e, potential);
        let interior = f > FLOW_TOL && net.arcs[e].3.map_or(true, |h| f < h - FLOW_TOL);
        if interior {
            record(d.abs() - DELTA_TOL * scale, format!("interior arc {e} not tight"));
        } else if f <= FLOW_TOL {
            record(d - DELTA_TOL * scale, format!("idle arc {e} has positive gap"));
        } else {
            record(-d - DELTA_TOL * scale, format!("saturated arc {e} has negative gap"));
        }
    }
    for v in 0..net.n_nodes {
        if v == net.sink {
            continue;
        }
        match net.good_of_node(v) {
            Some(g) => {
                record(-bal[v] - x[g] - 1e-9 * xscale, format!("supply node {v} overdrawn"));
                if bal[v] > -x[g] + 1e-7 * xscale {
                    record(
                        potential[v] - DELTA_TOL * scale,
                        format!("slack supply node {v} with positive potential"),
                    );
                }
            }
            None => {
                record(-bal[v] - 1e-9 * xscale, format!("interior node {v} overdrawn"));
                if bal[v] > 1e-7 * xscale {
                    record(
                        potential[v] - DELTA_TOL * scale,
                        format!("slack interior node {v} with positive potential"),
                    );
                }
            }
        }
    }
    Ok(FittingReport {
        ok: worst <= 1e-7 * scale.max(xscale),
        worst,
        detail,
    })
}

/// One directed edge of the auxiliary graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxArc {
    pub from: usize,
    pub to: usize,
    pub arc: usize,
    pub reverse: bool,
}

/// Tight arcs with residual capacity, plus reverse arcs of tight arcs with
/// positive flow.
pub fn auxiliary_graph(
    network: &GenFlowNetwork,
    flow: &[f64],
    potential: &[f64],
) -> Result<Vec<AuxArc>, Error> {
    let net = Net::compile(network)?;
    Ok(aux_arcs(&net, flow, potential))
}

fn aux_arcs(net: &Net, flow: &[f64], potential: &[f64]) -> Vec<AuxArc> {
    let scale = 1.0 + potential.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut out = Vec::new();
    for (e, &(tail, head, _, cap)) in net.arcs.iter().enumerate() {
        if net.delta(e, potential).abs() > DELTA_TOL * scale {
            continue;
        }
        if cap.map_or(true, |h| flow[e] < h - FLOW_TOL) {
            out.push(AuxArc {
                from: tail,
                to: head,
                arc: e,
                reverse: false,
            });
        }
        if flow[e] > FLOW_TOL {
            out.push(AuxArc {
                from: head,
                to: tail,
                arc: e,
                reverse: true,
            });
        }
    }
    out
}

fn reachable(n_nodes: usize, arcs: &[AuxArc], starts: &[usize], forward: bool) -> Vec<bool> {
    let mut seen = vec![false; n_nodes];
    let mut stack: Vec<usize> = Vec::new();
    for &s in starts {
        if !seen[s] {
            seen[s] = true;
            stack.push(s);
        }
    }
    while let Some(v) = stack.pop() {
        for a in arcs {
            let (src, dst) = if forward { (a.from, a.to) } else { (a.to, a.from) };
            if src == v && !seen[dst] {
                seen[dst] = true;
                stack.push(dst);
            }
        }
    }
    seen
}

/// Whether the auxiliary graph has a directed path from any of `from` to any
/// of `to` (node indices).
pub fn has_aux_path(
    network: &GenFlowNetwork,
    flow: &[f64],
    potential: &[f64],
    from: &[usize],
    to: &[usize],
) -> Result<bool, Error> {
    let net = Net::compile(network)?;
    let arcs = aux_arcs(&net, flow, potential);
    let seen = reachable(net.n_nodes, &arcs, from, true);
    Ok(to.iter().any(|&v| seen[v]))
}

/// An optimal flow and matching potentials for the flow program at supply `x`.
pub fn fitting_from_lp(network: &GenFlowNetwork, x: &[f64]) -> Result<FittingPair, Error> {
    let net = Net::compile(network)?;
    let (flow, potential, _) = solve_flow(&net, x)?;
    Ok(FittingPair { flow, potential })
}

/// Rows: one per good (supply order), then interior nodes in node order, then
/// finite capacities in arc order.
fn solve_flow(net: &Net, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64), Error> {
    let ne = net.arcs.len();
    let mut builder = LpBuilder::new(ne);
    for (e, &(tail, head, gain, _)) in net.arcs.iter().enumerate() {
        let mut c = 0.0;
        if head == net.sink {
            c += gain;
        }
        if tail == net.sink {
            c -= 1.0;
        }
        builder.set_objective(e, c);
    }
    let mut node_row = vec![usize::MAX; net.n_nodes];
    let mut row = 0;
    for (g, &v) in net.supplies.iter().enumerate() {
        builder.add_le(&net.outflow_terms(v), x[g]);
        node_row[v] = row;
        row += 1;
    }
    for v in 0..net.n_nodes {
        if v != net.sink && net.good_of_node(v).is_none() {
            builder.add_le(&net.outflow_terms(v), 0.0);
            node_row[v] = row;
            row += 1;
        }
    }
    for (e, &(_, _, _, cap)) in net.arcs.iter().enumerate() {
        if let Some(h) = cap {
            builder.add_le(&[(e, 1.0)], h);
        }
    }
    let sol = builder.solve()?;
    match sol.status {
        LpStatus::Optimal => {
            let mut potential = vec![0.0; net.n_nodes];
            potential[net.sink] = 1.0;
            for v in 0..net.n_nodes {
                if node_row[v] != usize::MAX {
                    potential[v] = sol.dual[node_row[v]];
                }
            }
            Ok((sol.primal, potential, sol.value))
        }
        LpStatus::Unbounded => Err(Error::UnboundedUtility),
        LpStatus::Infeasible => Err(Error::NumericalFailure(
            "flow program infeasible at nonnegative supply".into(),
        )),
    }
}

/// A fitting pair for `x` whose supply potentials match the Gale optimality
/// pattern `pi_j = q_j u(x) / b` on the support of `x`.
pub fn fitting_for_gale(
    network: &GenFlowNetwork,
    x: &[f64],
    prices: &[f64],
    budget: f64,
) -> Result<(FittingPair, f64), Error> {
    let net = Net::compile(network)?;
    let (flow, _, value) = solve_flow(&net, x)?;
    if value <= 1e-12 {
        // Zero utility forces zero supply potentials.
        let mut potential = vec![0.0; net.n_nodes];
        potential[net.sink] = 1.0;
        return Ok((FittingPair { flow, potential }, value));
    }

    // Variables: potentials for non-sink nodes, then one violation slack per
    // good tying them to the optimality pattern.
    let n = net.n_nodes;
    let m = net.supplies.len();
    let var_of = |v: usize| if v < net.sink { v } else { v - 1 };
    let mut builder = LpBuilder::new(n - 1 + m);
    for g in 0..m {
        builder.set_objective(n - 1 + g, -1.0);
    }
    let bal = net.node_balance(&flow);
    for (e, &(tail, head, gain, cap)) in net.arcs.iter().enumerate() {
        let mut terms = Vec::new();
        let mut constant = 0.0;
        if head == net.sink {
            constant += gain;
        } else {
            terms.push((var_of(head), gain));
        }
        if tail == net.sink {
            constant -= 1.0;
        } else {
            terms.push((var_of(tail), -1.0));
        }
        let interior = flow[e] > FLOW_TOL && cap.map_or(true, |h| flow[e] < h - FLOW_TOL);
        if interior {
            builder.add_eq(&terms, -constant);
        } else if flow[e] <= FLOW_TOL {
            builder.add_le(&terms, -constant);
        } else {
            builder.add_ge(&terms, -constant);
        }
    }
    let xscale = 1.0 + x.iter().fold(0.0f64, |a, &b| a.max(b));
    for v in 0..n {
        if v == net.sink {
            continue;
        }
        let slack = match net.good_of_node(v) {
            Some(g) => bal[v] + x[g],
            None => bal[v],
        };
        if slack > 1e-7 * xscale {
            builder.add_le(&[(var_of(v), 1.0)], 0.0);
        }
    }
    for (g, &v) in net.supplies.iter().enumerate() {
        let target = prices[g] * value / budget;
        builder.add_le(&[(var_of(v), 1.0), (n - 1 + g, -1.0)], target);
        if x[g] > FLOW_TOL {
            builder.add_ge(&[(var_of(v), 1.0), (n - 1 + g, 1.0)], target);
        }
    }
    let sol = builder.solve()?;
    if !sol.optimal() {
        return Err(Error::NumericalFailure(
            "no potentials complete the fitting system for this flow".into(),
        ));
    }
    let residual = sol.primal[n - 1..].iter().fold(0.0f64, |a, &b| a.max(b));
    if residual > 1e-6 * (1.0 + value) {
        return Err(Error::NumericalFailure(format!(
            "bundle is not Gale-optimal: potential residual {residual:.3e}"
        )));
    }
    let mut potential = vec![0.0; n];
    potential[net.sink] = 1.0;
    for v in 0..n {
        if v != net.sink {
            potential[v] = sol.primal[var_of(v)].max(0.0);
        }
    }
    // Snap supply potentials exactly onto the optimality pattern.
    for (g, &v) in net.supplies.iter().enumerate() {
        if x[g] > FLOW_TOL {
            potential[v] = prices[g] * value / budget;
        }
    }
    Ok((FittingPair { flow, potential }, value))
}

/// Arc classification shared by the transformation programs: freeze flows on
/// arcs with a strict potential gap, leave tight arcs free in their bounds.
fn add_pattern_rows(builder: &mut LpBuilder, net: &Net, potential: &[f64]) -> Result<(), Error> {
    let scale = 1.0 + potential.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    for (e, &(_, _, _, cap)) in net.arcs.iter().enumerate() {
        let d = net.delta(e, potential);
        if d < -DELTA_TOL * scale {
            builder.add_le(&[(e, 1.0)], 0.0);
        } else if d > DELTA_TOL * scale {
            match cap {
                Some(h) => builder.add_ge(&[(e, 1.0)], h),
                None => {
                    return Err(Error::NumericalFailure(
                        "positive potential gap on an uncapacitated arc".into(),
                    ))
                }
            }
        }
        if let Some(h) = cap {
            builder.add_le(&[(e, 1.0)], h);
        }
    }
    Ok(())
}

/// Node-balance rows under a fixed potential: supplies stay within their old
/// budgets, and positive-potential nodes keep their balance pinned.
fn add_balance_rows(
    builder: &mut LpBuilder,
    net: &Net,
    x: &[f64],
    potential: &[f64],
    skip: Option<usize>,
) {
    let scale = 1.0 + potential.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    for v in 0..net.n_nodes {
        if v == net.sink || skip == Some(v) {
            continue;
        }
        let terms = net.outflow_terms(v);
        match net.good_of_node(v) {
            Some(g) => {
                builder.add_le(&terms, x[g]);
                if potential[v] > DELTA_TOL * scale {
                    // Outflow stays nonnegative so the implied supply is too.
                    builder.add_ge(&terms, 0.0);
                }
            }
            None => {
                builder.add_le(&terms, 0.0);
                if potential[v] > DELTA_TOL * scale {
                    builder.add_ge(&terms, 0.0);
                }
            }
        }
    }
}

fn sink_terms(net: &Net) -> Vec<(usize, f64)> {
    let mut terms = Vec::new();
    for (e, &(tail, head, gain, _)) in net.arcs.iter().enumerate() {
        let mut coef = 0.0;
        if head == net.sink {
            coef += gain;
        }
        if tail == net.sink {
            coef -= 1.0;
        }
        if coef != 0.0 {
            terms.push((e, coef));
        }
    }
    terms
}

fn supplies_from_flow(net: &Net, x: &[f64], flow: &[f64], grown: Option<usize>) -> Vec<f64> {
    let bal = net.node_balance(flow);
    net.supplies
        .iter()
        .enumerate()
        .map(|(g, &v)| {
            let implied = (-bal[v]).max(0.0);
            if grown == Some(g) {
                implied.max(x[g])
            } else {
                implied.min(x[g])
            }
        })
        .collect()
}

/// Shrinks the supply and flow so the delivered value is minimal while the
/// pair stays fitting for the unchanged potentials.
pub fn pullback_flow(
    network: &GenFlowNetwork,
    x: &[f64],
    flow: &[f64],
    potential: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let net = Net::compile(network)?;
    let _ = flow;
    let mut builder = LpBuilder::new(net.arcs.len());
    add_pattern_rows(&mut builder, &net, potential)?;
    add_balance_rows(&mut builder, &net, x, potential, None);
    for (j, coef) in sink_terms(&net) {
        builder.set_objective(j, -coef);
    }
    let sol = builder.solve()?;
    if !sol.optimal() {
        return Err(Error::NumericalFailure(format!(
            "flow pullback did not solve: {:?}",
            sol.status
        )));
    }
    let f = sol.primal;
    let x2 = supplies_from_flow(&net, x, &f, None);
    Ok((x2, f))
}

/// Grows the supply of good `k` as far as possible while every other supply
/// shrinks and the delivered value does not drop.
pub fn reroute_flow(
    network: &GenFlowNetwork,
    x: &[f64],
    flow: &[f64],
    potential: &[f64],
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let net = Net::compile(network)?;
    let vk = net.supplies[k];
    if potential[vk] <= 0.0 {
        return Err(Error::Domain(
            "reroute requires a positive potential at the designated good".into(),
        ));
    }
    let mut builder = LpBuilder::new(net.arcs.len());
    add_pattern_rows(&mut builder, &net, potential)?;
    add_balance_rows(&mut builder, &net, x, potential, Some(vk));
    let kt = net.outflow_terms(vk);
    // Outflow of k at least its current supply: x'_k >= x_k.
    builder.add_ge(&kt, x[k]);
    let old_value = net.sink_value(flow);
    builder.add_ge(&sink_terms(&net), old_value);
    for &(j, coef) in &kt {
        builder.set_objective(j, coef);
    }
    let sol = builder.solve()?;
    match sol.status {
        LpStatus::Unbounded => {
            return Err(Error::UnboundedTransform(
                "designated supply can grow without bound".into(),
            ))
        }
        LpStatus::Infeasible => {
            return Err(Error::NumericalFailure("flow reroute infeasible".into()))
        }
        LpStatus::Optimal => {}
    }
    // Among maximal-k flows, shrink the other supplies. The pin is much
    // tighter than the generic face tolerance so the maximal supply survives.
    let xk_max = sol.value;
    let mut second = builder.clone();
    second.add_ge(&kt, xk_max - 1e-11 * (1.0 + xk_max.abs()));
    for e in 0..net.arcs.len() {
        second.set_objective(e, 0.0);
    }
    for (g, &v) in net.supplies.iter().enumerate() {
        if g == k {
            continue;
        }
        let mut terms = net.outflow_terms(v);
        let w = second.add_var(-1.0);
        terms.push((w, -1.0));
        second.add_le(&terms, 0.0);
    }
    let best = match second.solve() {
        Ok(s) if s.optimal() => s,
        _ => sol,
    };
    let f = best.primal[..net.arcs.len()].to_vec();
    let x2 = supplies_from_flow(&net, x, &f, Some(k));
    Ok((x2, f))
}

/// Largest factor by which potentials on `t_set` may be multiplied while the
/// pair stays fitting; boundary arcs with a strict gap give the binding
/// ratios.
fn scale_up_bound(net: &Net, flow: &[f64], potential: &[f64], t_set: &[bool]) -> f64 {
    let scale = 1.0 + potential.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut bound = f64::INFINITY;
    for (e, &(tail, head, gain, _)) in net.arcs.iter().enumerate() {
        let d = net.delta(e, potential);
        if t_set[head] && !t_set[tail] && d < -DELTA_TOL * scale && flow[e] <= FLOW_TOL {
            let denom = gain * potential[head];
            if denom > 0.0 {
                bound = bound.min(potential[tail] / denom);
            }
        }
        if t_set[tail] && !t_set[head] && d > DELTA_TOL * scale && potential[tail] > 0.0 {
            bound = bound.min(gain * potential[head] / potential[tail]);
        }
    }
    bound
}

/// Largest factor by which potentials on `t_set` may be divided.
fn scale_down_bound(net: &Net, flow: &[f64], potential: &[f64], t_set: &[bool]) -> f64 {
    let scale = 1.0 + potential.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut bound = f64::INFINITY;
    for (e, &(tail, head, gain, _)) in net.arcs.iter().enumerate() {
        let d = net.delta(e, potential);
        if t_set[head] && !t_set[tail] && d > DELTA_TOL * scale && potential[tail] > 0.0 {
            bound = bound.min(gain * potential[head] / potential[tail]);
        }
        if t_set[tail] && !t_set[head] && d < -DELTA_TOL * scale && flow[e] <= FLOW_TOL {
            let denom = gain * potential[head];
            if denom > 0.0 {
                bound = bound.min(potential[tail] / denom);
            }
        }
    }
    bound
}

fn iteration_cap(net: &Net) -> usize {
    10 * (net.arcs.len() + net.n_nodes).pow(2) + 20
}

/// Transforms `x`, Gale-optimal at `(q, b)`, into a dominated bundle that is
/// Gale-optimal at the smaller budget `b2`.
pub fn budget_decrease(
    u: &UtilitySpec,
    prices: &[f64],
    budget: f64,
    budget2: f64,
    x: &[f64],
) -> Result<TransformOutcome, Error> {
    if !(budget > budget2 && budget2 > 0.0) {
        return Err(Error::Domain("budgets must satisfy b > b' > 0".into()));
    }
    let network = as_network(u)?;
    let net = Net::compile(&network)?;
    let (pair, value) = fitting_for_gale(&network, x, prices, budget)?;
    let mut trace = vec![DynamicsState {
        x: x.to_vec(),
        flow: pair.flow.clone(),
        potential: pair.potential.clone(),
        alpha: budget / budget2,
        sink_value: value,
    }];
    if value <= 1e-12 || prices.iter().all(|&p| p <= 0.0) {
        return Ok(TransformOutcome {
            bundle: x.to_vec(),
            trace,
        });
    }

    let mut alpha = budget / budget2;
    let mut cur_x = x.to_vec();
    let mut flow = pair.flow;
    let mut potential = pair.potential;
    let mut cur_value = value;
    for _ in 0..iteration_cap(&net) {
        if alpha <= 1.0 + 1e-12 {
            return Ok(TransformOutcome {
                bundle: cur_x,
                trace,
            });
        }
        let (x2, f2) = pullback_flow(&network, &cur_x, &flow, &potential)?;
        let new_value = net.sink_value(&f2);
        let alpha2 = alpha * new_value / cur_value;
        if alpha2 <= 1.0 + 1e-12 {
            let lambda = if alpha - alpha2 > 1e-15 {
                ((alpha - 1.0) / (alpha - alpha2)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let bundle: Vec<f64> = x2
                .iter()
                .zip(&cur_x)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let fmix: Vec<f64> = f2
                .iter()
                .zip(&flow)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            trace.push(DynamicsState {
                x: bundle.clone(),
                flow: fmix,
                potential: potential.clone(),
                alpha: 1.0,
                sink_value: lambda * new_value + (1.0 - lambda) * cur_value,
            });
            return Ok(TransformOutcome { bundle, trace });
        }

        let arcs = aux_arcs(&net, &f2, &potential);
        let supp_nodes: Vec<usize> = net
            .supplies
            .iter()
            .enumerate()
            .filter(|&(g, _)| x2[g] > FLOW_TOL)
            .map(|(_, &v)| v)
            .collect();
        // Nodes that still reach the surviving support.
        let t_set = reachable(net.n_nodes, &arcs, &supp_nodes, false);
        if t_set[net.sink] {
            return Err(Error::NumericalFailure(
                "sink became reachable after pullback".into(),
            ));
        }
        let delta = scale_up_bound(&net, &f2, &potential, &t_set).min(alpha2);
        if delta <= 1.0 + 1e-12 {
            return Err(Error::IterationCap(
                "potential rescale stalled in budget decrease".into(),
            ));
        }
        for v in 0..net.n_nodes {
            if t_set[v] {
                potential[v] *= delta;
            }
        }
        cur_x = x2;
        flow = f2;
        cur_value = new_value;
        trace.push(DynamicsState {
            x: cur_x.clone(),
            flow: flow.clone(),
            potential: potential.clone(),
            alpha: alpha2 / delta,
            sink_value: cur_value,
        });
        if (delta - alpha2).abs() <= 1e-10 * alpha2 {
            return Ok(TransformOutcome {
                bundle: cur_x,
                trace,
            });
        }
        alpha = alpha2 / delta;
    }
    Err(Error::IterationCap(
        "budget decrease exceeded its iteration cap".into(),
    ))
}

/// Transforms `x`, Gale-optimal at `(q, b)`, into a bundle Gale-optimal at
/// prices with one decreased coordinate `k`, without raising any other
/// coordinate.
pub fn price_decrease(
    u: &UtilitySpec,
    prices: &[f64],
    prices2: &[f64],
    budget: f64,
    x: &[f64],
) -> Result<TransformOutcome, Error> {
    if prices.len() != prices2.len() {
        return Err(Error::DimensionMismatch(
            "price vectors differ in length".into(),
        ));
    }
    let mut k = None;
    for j in 0..prices.len() {
        if prices2[j] < prices[j] - 1e-15 {
            if k.is_some() {
                return Err(Error::Domain(
                    "exactly one coordinate may decrease per call".into(),
                ));
            }
            k = Some(j);
        } else if prices2[j] > prices[j] + 1e-15 {
            return Err(Error::Domain("prices may only decrease".into()));
        }
    }
    let Some(k) = k else {
        return Ok(TransformOutcome {
            bundle: x.to_vec(),
            trace: Vec::new(),
        });
    };
    if !demand::in_price_domain(u, prices2)? {
        return Err(Error::OutsidePriceDomain);
    }

    let network = as_network(u)?;
    let net = Net::compile(&network)?;
    let (pair, value) = fitting_for_gale(&network, x, prices, budget)?;
    let mut trace = vec![DynamicsState {
        x: x.to_vec(),
        flow: pair.flow.clone(),
        potential: pair.potential.clone(),
        alpha: 1.0,
        sink_value: value,
    }];
    if value <= 1e-12 || prices.iter().all(|&p| p <= 0.0) {
        return Ok(TransformOutcome {
            bundle: x.to_vec(),
            trace,
        });
    }
    let beta = value / budget;
    let vk = net.supplies[k];
    let mut flow = pair.flow;
    let mut potential = pair.potential;
    let mut cur_x = x.to_vec();
    if potential[vk] <= beta * prices2[k] + 1e-12 {
        // Optimality is undisturbed; always the case at zero potential.
        return Ok(TransformOutcome {
            bundle: x.to_vec(),
            trace,
        });
    }

    let mut settled = false;
    for _ in 0..iteration_cap(&net) {
        let (x2, f2) = match reroute_flow(&network, &cur_x, &flow, &potential, k) {
            Ok(out) => out,
            Err(Error::UnboundedTransform(_)) => {
                // The designated supply absorbs unbounded flow; fall back to
                // a direct face search at the new prices.
                let frozen: Vec<usize> = (0..prices.len()).filter(|&j| j != k).collect();
                let sel = demand::gale_demand_potential_select(u, prices2, budget, x, &frozen)?;
                return Ok(TransformOutcome {
                    bundle: sel.bundle,
                    trace,
                });
            }
            Err(e) => return Err(e),
        };
        let arcs = aux_arcs(&net, &f2, &potential);
        let t_set = reachable(net.n_nodes, &arcs, &[vk], true);
        if t_set[net.sink] {
            return Err(Error::NumericalFailure(
                "sink became reachable after reroute".into(),
            ));
        }
        let mut delta = scale_down_bound(&net, &f2, &potential, &t_set);
        let target = beta * prices2[k];
        if target > 0.0 {
            delta = delta.min(potential[vk] / target);
        }
        cur_x = x2;
        flow = f2;
        if delta.is_infinite() {
            // Only reachable when the new price of k is zero.
            for v in 0..net.n_nodes {
                if t_set[v] {
                    potential[v] = 0.0;
                }
            }
            settled = true;
        } else {
            if delta <= 1.0 + 1e-12 {
                return Err(Error::IterationCap(
                    "potential rescale stalled in price decrease".into(),
                ));
            }
            for v in 0..net.n_nodes {
                if t_set[v] {
                    potential[v] /= delta;
                }
            }
            settled = potential[vk] <= target * (1.0 + 1e-10);
        }
        trace.push(DynamicsState {
            x: cur_x.clone(),
            flow: flow.clone(),
            potential: potential.clone(),
            alpha: 1.0,
            sink_value: net.sink_value(&flow),
        });
        if settled {
            break;
        }
    }
    if !settled {
        return Err(Error::IterationCap(
            "price decrease exceeded its iteration cap".into(),
        ));
    }

    let new_value = net.sink_value(&flow);
    let b_hat = new_value / beta;
    if b_hat > budget * (1.0 + 1e-9) {
        let mut out = budget_decrease(u, prices2, b_hat, budget, &cur_x)?;
        trace.append(&mut out.trace);
        Ok(TransformOutcome {
            bundle: out.bundle,
            trace,
        })
    } else {
        Ok(TransformOutcome {
            bundle: cur_x,
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, single_arc_network};
    use crate::model::dot;
    use crate::utility::{GenArc, Segment};

    #[test]
    fn fitting_single_arc() {
        let net = single_arc_network(1.0, None);
        let r = check_fitting(&net, &[1.0], &[1.0], &[1.0, 1.0]).unwrap();
        assert!(r.ok, "{:?}", r.detail);
    }

    #[test]
    fn fitting_rejects_positive_potential_on_slack_supply() {
        let net = single_arc_network(1.0, None);
        // net(g) = -0.5 > -1, so the supply potential must vanish.
        let r = check_fitting(&net, &[1.0], &[0.5], &[1.0, 1.0]).unwrap();
        assert!(!r.ok);
    }

    #[test]
    fn lp_fitting_pairs_are_fitting() {
        let u = fixtures::eg1_instance().agents[1].utility.clone();
        let network = as_network(&u).unwrap();
        for x in [[0.3, 0.8], [1.0, 1.0], [0.1, 0.0]] {
            let pair = fitting_from_lp(&network, &x).unwrap();
            let r = check_fitting(&network, &x, &pair.flow, &pair.potential).unwrap();
            assert!(r.ok, "x {x:?}: {:?} worst {}", r.detail, r.worst);
        }
    }

    #[test]
    fn aux_graph_cases() {
        let capped = single_arc_network(1.0, Some(1.0));
        // Tight at capacity: only the reverse arc.
        let arcs = auxiliary_graph(&capped, &[1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(arcs.len(), 1);
        assert!(arcs[0].reverse);
        // Tight interior: both directions.
        let arcs = auxiliary_graph(&capped, &[0.5], &[1.0, 1.0]).unwrap();
        assert_eq!(arcs.len(), 2);
        // Not tight, no flow: absent.
        let arcs = auxiliary_graph(&capped, &[0.0], &[2.0, 1.0]).unwrap();
        assert!(arcs.is_empty());
    }

    #[test]
    fn pullback_drains_single_arc() {
        let net = single_arc_network(1.0, None);
        let (x2, f2) = pullback_flow(&net, &[1.0], &[1.0], &[1.0, 1.0]).unwrap();
        assert!(x2[0].abs() < 1e-9);
        assert!(f2[0].abs() < 1e-9);
    }

    #[test]
    fn pullback_respects_saturation() {
        let net = single_arc_network(1.0, Some(0.5));
        // Potential gap forces the arc to stay at capacity.
        let (x2, f2) = pullback_flow(&net, &[0.5], &[0.5], &[0.5, 1.0]).unwrap();
        assert!((f2[0] - 0.5).abs() < 1e-9);
        assert!((x2[0] - 0.5).abs() < 1e-9);
        let compiled = Net::compile(&net).unwrap();
        assert!((compiled.sink_value(&f2) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn reroute_moves_supply_to_designated_good() {
        let net = GenFlowNetwork {
            nodes: vec!["g0".into(), "g1".into(), "t".into()],
            sink: "t".into(),
            supplies: vec!["g0".into(), "g1".into()],
            arcs: vec![
                GenArc {
                    tail: "g0".into(),
                    head: "t".into(),
                    gain: 1.0,
                    cap: Some(0.5),
                },
                GenArc {
                    tail: "g1".into(),
                    head: "t".into(),
                    gain: 1.0,
                    cap: Some(1.0),
                },
            ],
        };
        let (x2, f2) = reroute_flow(&net, &[0.5, 0.0], &[0.5, 0.0], &[1.0, 1.0, 1.0], 1).unwrap();
        assert!((x2[1] - 1.0).abs() < 1e-9, "x' {x2:?}");
        assert!(x2[0].abs() < 1e-9, "x' {x2:?}");
        assert!(f2[0].abs() < 1e-9, "f' {f2:?}");
        assert!((f2[1] - 1.0).abs() < 1e-9, "f' {f2:?}");
        // No auxiliary path from the grown good to the sink.
        let compiled = Net::compile(&net).unwrap();
        assert!(!has_aux_path(
            &net,
            &f2,
            &[1.0, 1.0, 1.0],
            &[compiled.supplies[1]],
            &[compiled.sink]
        )
        .unwrap());
    }

    #[test]
    fn budget_decrease_linear_single_arc() {
        let u = UtilitySpec::GenNetwork(single_arc_network(1.0, None));
        let out = budget_decrease(&u, &[1.0], 1.0, 0.5, &[1.0]).unwrap();
        assert!((out.bundle[0] - 0.5).abs() < 1e-7, "bundle {:?}", out.bundle);
    }

    #[test]
    fn budget_decrease_zero_utility_returns_input() {
        let u = UtilitySpec::GenNetwork(single_arc_network(1.0, None));
        let out = budget_decrease(&u, &[1.0], 1.0, 0.5, &[0.0]).unwrap();
        assert!(out.bundle[0].abs() < 1e-12);
    }

    #[test]
    fn budget_decrease_splc_matches_gale_oracle() {
        let u = UtilitySpec::Splc {
            segments: vec![
                vec![
                    Segment { slope: 2.0, length: Some(0.5) },
                    Segment { slope: 0.8, length: Some(1.0) },
                ],
                vec![
                    Segment { slope: 1.5, length: Some(0.7) },
                    Segment { slope: 0.3, length: None },
                ],
            ],
        };
        let q = [0.9, 0.6];
        let x = demand::gale_demand(&u, &q, 2.0).unwrap();
        let out = budget_decrease(&u, &q, 2.0, 1.0, &x.bundle).unwrap();
        for (a, b) in out.bundle.iter().zip(&x.bundle) {
            assert!(*a <= b + 1e-7, "dominance {:?} vs {:?}", out.bundle, x.bundle);
        }
        let oracle = demand::gale_demand(&u, &q, 1.0).unwrap();
        let value = crate::utility::eval(&u, &out.bundle).unwrap();
        let objective = 1.0 * value.ln() - dot(&q, &out.bundle);
        assert!(
            (objective - oracle.objective).abs() < 1e-5,
            "{objective} vs {}",
            oracle.objective
        );
        let kkt = demand::verify_gale_kkt(&u, &q, 1.0, &out.bundle).unwrap();
        assert!(kkt.pass, "residual {}", kkt.residual);
        // Every traced state is a fitting pair.
        let network = as_network(&u).unwrap();
        for state in &out.trace {
            let r = check_fitting(&network, &state.x, &state.flow, &state.potential).unwrap();
            assert!(r.ok, "{:?} worst {}", r.detail, r.worst);
        }
    }

    #[test]
    fn price_decrease_zero_potential_returns_input() {
        // Good 2 is worthless, its potential is zero, and a price cut on it
        // leaves the bundle unchanged.
        let u = UtilitySpec::Splc {
            segments: vec![
                vec![Segment { slope: 1.0, length: None }],
                vec![Segment { slope: 0.0, length: None }],
            ],
        };
        let x = demand::gale_demand(&u, &[1.0, 1.0], 1.0).unwrap();
        let out = price_decrease(&u, &[1.0, 1.0], &[1.0, 0.5], 1.0, &x.bundle).unwrap();
        assert_eq!(out.bundle, x.bundle);
    }

    #[test]
    fn price_decrease_splc_certified() {
        let u = UtilitySpec::Splc {
            segments: vec![
                vec![
                    Segment { slope: 2.0, length: Some(0.5) },
                    Segment { slope: 0.8, length: Some(1.0) },
                ],
                vec![
                    Segment { slope: 1.5, length: Some(0.7) },
                    Segment { slope: 0.3, length: None },
                ],
            ],
        };
        let q = [0.9, 0.6];
        let q2 = [0.9, 0.48];
        let x = demand::gale_demand(&u, &q, 1.5).unwrap();
        let out = price_decrease(&u, &q, &q2, 1.5, &x.bundle).unwrap();
        assert!(
            out.bundle[0] <= x.bundle[0] + 1e-7,
            "unchanged coordinate must not grow: {:?} vs {:?}",
            out.bundle,
            x.bundle
        );
        let oracle = demand::gale_demand(&u, &q2, 1.5).unwrap();
        let value = crate::utility::eval(&u, &out.bundle).unwrap();
        let objective = 1.5 * value.ln() - dot(&q2, &out.bundle);
        assert!(
            (objective - oracle.objective).abs() < 1e-5,
            "{objective} vs {}",
            oracle.objective
        );
        let kkt = demand::verify_gale_kkt(&u, &q2, 1.5, &out.bundle).unwrap();
        assert!(kkt.pass, "residual {}", kkt.residual);
    }

    #[test]
    fn price_decrease_linear_single_good() {
        let u = UtilitySpec::GenNetwork(single_arc_network(1.0, None));
        let x = demand::gale_demand(&u, &[2.0], 1.0).unwrap();
        assert!((x.bundle[0] - 0.5).abs() < 1e-7);
        let out = price_decrease(&u, &[2.0], &[1.0], 1.0, &x.bundle).unwrap();
        let kkt = demand::verify_gale_kkt(&u, &[1.0], 1.0, &out.bundle).unwrap();
        assert!(kkt.pass, "residual {}", kkt.residual);
        assert!((out.bundle[0] - 1.0).abs() < 1e-5, "bundle {:?}", out.bundle);
    }
}
