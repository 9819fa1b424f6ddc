//! Concrete utility families: evaluation, supergradient oracles, and the
//! reductions of piecewise-linear families to generalized flow networks and
//! parametric linear programs.

use serde::{Deserialize, Serialize};

use crate::lp::{self, LpStatus, ParametricLP};
use crate::model::dot;
use crate::Error;

/// One linear segment of a separable piecewise-linear utility.
/// `length: None` means the segment never ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub slope: f64,
    pub length: Option<f64>,
}

/// One segment of a Leontief-free utility: a linear form over the goods with
/// a cap on the utility the segment may contribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfSegment {
    pub coeffs: Vec<f64>,
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenArc {
    pub tail: String,
    pub head: String,
    pub gain: f64,
    /// `None` encodes an uncapacitated arc, serialized as JSON null.
    pub cap: Option<f64>,
}

/// A generalized flow instance; the utility of a supply vector is the maximum
/// flow value deliverable to `sink`, with arc flows scaled by their gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenFlowNetwork {
    pub nodes: Vec<String>,
    pub sink: String,
    /// Node carrying the supply of each good, in good order.
    pub supplies: Vec<String>,
    pub arcs: Vec<GenArc>,
}

/// `max c·z  s.t.  A z <= B x + offset` over the supply vector `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpUtility {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub c: Vec<f64>,
}

/// Quadratic utility `u(x) = 1 + p·(x - y) + (x - y)ᵀ A (x - y)` restricted to
/// the region where the gradient stays nonnegative; `u(0) = 0` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticUtility {
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub a: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UtilitySpec {
    Linear { values: Vec<f64> },
    BoundedLinear { values: Vec<f64>, caps: Vec<Option<f64>> },
    Splc { segments: Vec<Vec<Segment>> },
    LeontiefFree { segments: Vec<LfSegment> },
    GenNetwork(GenFlowNetwork),
    Lp(LpUtility),
    Quadratic(QuadraticUtility),
}

impl UtilitySpec {
    pub fn num_goods(&self) -> usize {
        match self {
            UtilitySpec::Linear { values } => values.len(),
            UtilitySpec::BoundedLinear { values, .. } => values.len(),
            UtilitySpec::Splc { segments } => segments.len(),
            UtilitySpec::LeontiefFree { segments } => {
                segments.first().map_or(0, |s| s.coeffs.len())
            }
            UtilitySpec::GenNetwork(net) => net.supplies.len(),
            UtilitySpec::Lp(u) => u.b.first().map_or(0, |r| r.len()),
            UtilitySpec::Quadratic(q) => q.p.len(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            UtilitySpec::Linear { .. } => "linear",
            UtilitySpec::BoundedLinear { .. } => "bounded_linear",
            UtilitySpec::Splc { .. } => "splc",
            UtilitySpec::LeontiefFree { .. } => "leontief_free",
            UtilitySpec::GenNetwork(_) => "gen_network",
            UtilitySpec::Lp(_) => "lp",
            UtilitySpec::Quadratic(_) => "quadratic",
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(
            self,
            UtilitySpec::Linear { .. } | UtilitySpec::BoundedLinear { .. } | UtilitySpec::Splc { .. }
        )
    }

    /// Per-good segment view of a separable family; `f64::INFINITY` marks an
    /// unbounded final segment. `None` for non-separable families.
    pub(crate) fn separable_segments(&self) -> Option<Vec<Vec<(f64, f64)>>> {
        match self {
            UtilitySpec::Linear { values } => {
                Some(values.iter().map(|&v| vec![(v, f64::INFINITY)]).collect())
            }
            UtilitySpec::BoundedLinear { values, caps } => Some(
                values
                    .iter()
                    .zip(caps)
                    .map(|(&v, cap)| match cap {
                        Some(l) if v > 0.0 => vec![(v, l / v)],
                        _ => vec![(v, f64::INFINITY)],
                    })
                    .collect(),
            ),
            UtilitySpec::Splc { segments } => Some(
                segments
                    .iter()
                    .map(|segs| {
                        segs.iter()
                            .map(|s| (s.slope, s.length.unwrap_or(f64::INFINITY)))
                            .collect()
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Family-level invariant checks; returns human-readable violations.
    pub fn validate(&self, m: usize, _goods: &[String]) -> Vec<String> {
        let mut v = Vec::new();
        if self.num_goods() != m {
            v.push(format!(
                "utility references {} goods, instance has {m}",
                self.num_goods()
            ));
            return v;
        }
        match self {
            UtilitySpec::Linear { values } => {
                if values.iter().any(|&x| x < 0.0) {
                    v.push("linear values must be nonnegative".into());
                }
            }
            UtilitySpec::BoundedLinear { values, caps } => {
                if values.len() != caps.len() {
                    v.push("values and caps lengths differ".into());
                }
                if values.iter().any(|&x| x < 0.0) {
                    v.push("values must be nonnegative".into());
                }
                if caps.iter().flatten().any(|&l| l <= 0.0) {
                    v.push("finite utility caps must be positive".into());
                }
            }
            UtilitySpec::Splc { segments } => {
                for (j, segs) in segments.iter().enumerate() {
                    for w in segs.windows(2) {
                        if w[1].slope >= w[0].slope {
                            v.push(format!("good {j}: segment slopes must strictly decrease"));
                        }
                    }
                    for s in segs {
                        if s.slope < 0.0 {
                            v.push(format!("good {j}: negative slope breaks monotonicity"));
                        }
                        if let Some(len) = s.length {
                            if len <= 0.0 {
                                v.push(format!("good {j}: segment lengths must be positive"));
                            }
                        }
                    }
                }
            }
            UtilitySpec::LeontiefFree { segments } => {
                for (k, seg) in segments.iter().enumerate() {
                    if seg.coeffs.len() != m {
                        v.push(format!("segment {k}: coefficient count mismatch"));
                    }
                    if seg.coeffs.iter().any(|&a| a < 0.0) {
                        v.push(format!("segment {k}: coefficients must be nonnegative"));
                    }
                    if let Some(cap) = seg.cap {
                        if cap <= 0.0 {
                            v.push(format!("segment {k}: cap must be positive"));
                        }
                    }
                }
            }
            UtilitySpec::GenNetwork(net) => v.extend(net.validate()),
            UtilitySpec::Lp(_) => {
                match to_lp(self) {
                    Ok(lp) => {
                        let ones = vec![1.0; m];
                        match lp::solve(&lp, &ones) {
                            Ok(sol) if sol.status == LpStatus::Unbounded => {
                                v.push("LP utility is unbounded at unit supply".into())
                            }
                            Ok(sol) if sol.status == LpStatus::Infeasible => {
                                v.push("LP utility is infeasible at unit supply".into())
                            }
                            Ok(_) => {}
                            Err(e) => v.push(format!("LP utility solve failed: {e}")),
                        }
                        match lp::solve(&lp, &vec![0.0; m]) {
                            Ok(sol) if sol.optimal() && sol.value.abs() > 1e-9 => {
                                v.push(format!("u(0) = {} must be 0", sol.value))
                            }
                            _ => {}
                        }
                    }
                    Err(e) => v.push(format!("invalid LP utility: {e}")),
                }
            }
            UtilitySpec::Quadratic(q) => {
                if q.y.len() != m || q.a.len() != m || q.a.iter().any(|r| r.len() != m) {
                    v.push("quadratic dimensions disagree".into());
                    return v;
                }
                for i in 0..m {
                    for j in 0..m {
                        if (q.a[i][j] - q.a[j][i]).abs() > 1e-9 {
                            v.push("quadratic matrix must be symmetric".into());
                            return v;
                        }
                    }
                }
                let zero = vec![0.0; m];
                match eval(self, &zero) {
                    Ok(u0) if u0.abs() > 1e-9 => v.push(format!("u(0) = {u0} must be 0")),
                    Err(_) => v.push("origin lies outside the monotone region".into()),
                    _ => {}
                }
                let eigs = symmetric_eigenvalues(&q.a);
                if eigs.iter().any(|&l| l > 1e-7) {
                    v.push("quadratic matrix must be negative semidefinite".into());
                }
                if q.p.iter().any(|&x| x < 0.0) {
                    v.push("quadratic gradient at the center must be nonnegative".into());
                }
            }
        }
        v
    }
}

impl GenFlowNetwork {
    fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.node_index(&self.sink).is_none() {
            v.push(format!("sink '{}' is not a node", self.sink));
        }
        if self.supplies.iter().any(|s| s == &self.sink) {
            v.push("the sink cannot carry supply".into());
        }
        for s in &self.supplies {
            if self.node_index(s).is_none() {
                v.push(format!("supply node '{s}' is not a node"));
            }
        }
        for (i, arc) in self.arcs.iter().enumerate() {
            if arc.gain <= 0.0 {
                v.push(format!("arc {i}: gain must be positive"));
            }
            if let Some(cap) = arc.cap {
                if cap < 0.0 {
                    v.push(format!("arc {i}: negative capacity"));
                }
            }
            if arc.tail == arc.head {
                v.push(format!("arc {i}: self loops are not allowed"));
            }
            if self.node_index(&arc.tail).is_none() || self.node_index(&arc.head).is_none() {
                v.push(format!("arc {i}: endpoint is not a node"));
            }
        }
        if !v.is_empty() {
            return v;
        }
        let spec = UtilitySpec::GenNetwork(self.clone());
        let m = self.supplies.len();
        if let Ok(lp) = to_lp(&spec) {
            match lp::solve(&lp, &vec![1.0; m]) {
                Ok(sol) if sol.status == LpStatus::Unbounded => {
                    v.push("network admits unbounded flow value".into());
                }
                Ok(_) => {}
                Err(e) => v.push(format!("network flow solve failed: {e}")),
            }
            if let Ok(sol) = lp::solve(&lp, &vec![0.0; m]) {
                if sol.optimal() && sol.value > 1e-9 {
                    v.push("network creates flow from empty supply".into());
                }
            }
        }
        v
    }
}

/// Utility value of the bundle `x`.
pub fn eval(u: &UtilitySpec, x: &[f64]) -> Result<f64, Error> {
    let m = u.num_goods();
    if x.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "bundle has {} entries, utility expects {m}",
            x.len()
        )));
    }
    match u {
        UtilitySpec::Linear { values } => Ok(dot(values, x)),
        UtilitySpec::BoundedLinear { values, caps } => Ok(values
            .iter()
            .zip(caps)
            .zip(x)
            .map(|((&v, cap), &q)| {
                let raw = v * q;
                cap.map_or(raw, |l| raw.min(l))
            })
            .sum()),
        UtilitySpec::Splc { segments } => {
            let mut total = 0.0;
            for (segs, &q) in segments.iter().zip(x) {
                let mut left = q;
                for s in segs {
                    if left <= 0.0 {
                        break;
                    }
                    let take = s.length.map_or(left, |len| left.min(len));
                    total += s.slope * take;
                    left -= take;
                }
            }
            Ok(total)
        }
        UtilitySpec::Quadratic(q) => {
            let g = quadratic_gradient(q, x)?;
            if g.iter().any(|&v| v < -1e-7) {
                return Err(Error::Domain(
                    "bundle lies outside the monotone region of the quadratic utility".into(),
                ));
            }
            let d: Vec<f64> = x.iter().zip(&q.y).map(|(a, b)| a - b).collect();
            let mut quad = 0.0;
            for i in 0..m {
                quad += d[i] * dot(&q.a[i], &d);
            }
            Ok(1.0 + dot(&q.p, &d) + quad)
        }
        _ => {
            let lp = to_lp(u)?;
            let sol = lp::solve(&lp, x)?;
            match sol.status {
                LpStatus::Optimal => Ok(sol.value),
                LpStatus::Unbounded => Err(Error::UnboundedUtility),
                LpStatus::Infeasible => Err(Error::NumericalFailure(
                    "utility program infeasible at a nonnegative bundle".into(),
                )),
            }
        }
    }
}

fn quadratic_gradient(q: &QuadraticUtility, x: &[f64]) -> Result<Vec<f64>, Error> {
    if x.len() != q.p.len() {
        return Err(Error::DimensionMismatch("quadratic bundle length".into()));
    }
    let d: Vec<f64> = x.iter().zip(&q.y).map(|(a, b)| a - b).collect();
    Ok(q.p
        .iter()
        .enumerate()
        .map(|(i, &pi)| pi + 2.0 * dot(&q.a[i], &d))
        .collect())
}

/// One element of the supergradient set at `x`; piecewise-linear families take
/// whatever the LP dual returns at kinks.
pub fn supergradient(u: &UtilitySpec, x: &[f64]) -> Result<Vec<f64>, Error> {
    match u {
        UtilitySpec::Linear { values } => Ok(values.clone()),
        UtilitySpec::Quadratic(q) => quadratic_gradient(q, x),
        _ => {
            let lp = to_lp(u)?;
            let sol = lp::solve(&lp, x)?;
            if !sol.optimal() {
                return Err(Error::UnboundedUtility);
            }
            lp::supergradient_from_dual(&lp, &sol)
        }
    }
}

/// Rewrites a separable or Leontief-free family as a generalized flow network.
///
/// Zero-slope tails of SPLC utilities carry no value and are dropped; gains
/// must stay strictly positive.
pub fn to_network(u: &UtilitySpec) -> Result<GenFlowNetwork, Error> {
    let m = u.num_goods();
    let good_names: Vec<String> = (0..m).map(|j| format!("g{j}")).collect();
    match u {
        UtilitySpec::Linear { values } | UtilitySpec::BoundedLinear { values, .. } => {
            let caps: Vec<Option<f64>> = match u {
                UtilitySpec::BoundedLinear { caps, .. } => caps.clone(),
                _ => vec![None; m],
            };
            let mut arcs = Vec::new();
            for j in 0..m {
                if values[j] > 0.0 {
                    arcs.push(GenArc {
                        tail: good_names[j].clone(),
                        head: "t".into(),
                        gain: values[j],
                        cap: caps[j].map(|l| l / values[j]),
                    });
                }
            }
            let mut nodes = good_names.clone();
            nodes.push("t".into());
            Ok(GenFlowNetwork {
                nodes,
                sink: "t".into(),
                supplies: good_names,
                arcs,
            })
        }
        UtilitySpec::Splc { segments } => {
            let mut arcs = Vec::new();
            for (j, segs) in segments.iter().enumerate() {
                for s in segs {
                    if s.slope > 0.0 {
                        arcs.push(GenArc {
                            tail: good_names[j].clone(),
                            head: "t".into(),
                            gain: s.slope,
                            cap: s.length,
                        });
                    }
                }
            }
            let mut nodes = good_names.clone();
            nodes.push("t".into());
            Ok(GenFlowNetwork {
                nodes,
                sink: "t".into(),
                supplies: good_names,
                arcs,
            })
        }
        UtilitySpec::LeontiefFree { segments } => {
            let mut nodes = good_names.clone();
            let mut arcs = Vec::new();
            for (k, seg) in segments.iter().enumerate() {
                let mid = format!("k{k}");
                nodes.push(mid.clone());
                for j in 0..m {
                    if seg.coeffs[j] > 0.0 {
                        arcs.push(GenArc {
                            tail: good_names[j].clone(),
                            head: mid.clone(),
                            gain: seg.coeffs[j],
                            cap: None,
                        });
                    }
                }
                arcs.push(GenArc {
                    tail: mid,
                    head: "t".into(),
                    gain: 1.0,
                    cap: seg.cap,
                });
            }
            nodes.push("t".into());
            Ok(GenFlowNetwork {
                nodes,
                sink: "t".into(),
                supplies: good_names,
                arcs,
            })
        }
        _ => Err(Error::UnsupportedFamily(format!(
            "{} has no network form",
            u.family_name()
        ))),
    }
}

/// Value-maximization LP of any piecewise-linear family.
pub fn to_lp(u: &UtilitySpec) -> Result<ParametricLP, Error> {
    let m = u.num_goods();
    match u {
        UtilitySpec::Linear { values } => {
            let mut a = vec![vec![0.0; m]; m];
            let mut b = vec![vec![0.0; m]; m];
            for j in 0..m {
                a[j][j] = 1.0;
                b[j][j] = 1.0;
            }
            Ok(ParametricLP {
                a,
                b,
                offset: vec![0.0; m],
                c: values.clone(),
            })
        }
        UtilitySpec::BoundedLinear { values, caps } => {
            let mut a = Vec::new();
            let mut b = Vec::new();
            let mut offset = Vec::new();
            for j in 0..m {
                let mut arow = vec![0.0; m];
                arow[j] = 1.0;
                let mut brow = vec![0.0; m];
                brow[j] = 1.0;
                a.push(arow);
                b.push(brow);
                offset.push(0.0);
            }
            for j in 0..m {
                if let Some(l) = caps[j] {
                    let mut arow = vec![0.0; m];
                    arow[j] = values[j];
                    a.push(arow);
                    b.push(vec![0.0; m]);
                    offset.push(l);
                }
            }
            Ok(ParametricLP {
                a,
                b,
                offset,
                c: values.clone(),
            })
        }
        UtilitySpec::Splc { segments } => {
            let nvars: usize = segments.iter().map(|s| s.len()).sum();
            let mut var_of = Vec::new();
            let mut c = Vec::new();
            for (j, segs) in segments.iter().enumerate() {
                for s in segs {
                    var_of.push(j);
                    c.push(s.slope);
                }
            }
            let mut a = Vec::new();
            let mut b = Vec::new();
            let mut offset = Vec::new();
            // Per-good totals bounded by supply.
            for j in 0..m {
                let mut arow = vec![0.0; nvars];
                for (v, &g) in var_of.iter().enumerate() {
                    if g == j {
                        arow[v] = 1.0;
                    }
                }
                let mut brow = vec![0.0; m];
                brow[j] = 1.0;
                a.push(arow);
                b.push(brow);
                offset.push(0.0);
            }
            // Finite segment lengths.
            let mut v = 0;
            for segs in segments {
                for s in segs {
                    if let Some(len) = s.length {
                        let mut arow = vec![0.0; nvars];
                        arow[v] = 1.0;
                        a.push(arow);
                        b.push(vec![0.0; m]);
                        offset.push(len);
                    }
                    v += 1;
                }
            }
            Ok(ParametricLP { a, b, offset, c })
        }
        UtilitySpec::LeontiefFree { segments } => {
            let kk = segments.len();
            let nvars = m * kk;
            let var = |j: usize, k: usize| k * m + j;
            let mut a = Vec::new();
            let mut b = Vec::new();
            let mut offset = Vec::new();
            let mut c = vec![0.0; nvars];
            for (k, seg) in segments.iter().enumerate() {
                for j in 0..m {
                    c[var(j, k)] = seg.coeffs[j];
                }
                if let Some(cap) = seg.cap {
                    let mut arow = vec![0.0; nvars];
                    for j in 0..m {
                        arow[var(j, k)] = seg.coeffs[j];
                    }
                    a.push(arow);
                    b.push(vec![0.0; m]);
                    offset.push(cap);
                }
            }
            for j in 0..m {
                let mut arow = vec![0.0; nvars];
                for k in 0..kk {
                    arow[var(j, k)] = 1.0;
                }
                let mut brow = vec![0.0; m];
                brow[j] = 1.0;
                a.push(arow);
                b.push(brow);
                offset.push(0.0);
            }
            Ok(ParametricLP { a, b, offset, c })
        }
        UtilitySpec::GenNetwork(net) => {
            let n_arcs = net.arcs.len();
            let sink = net
                .node_index(&net.sink)
                .ok_or_else(|| Error::Domain("sink missing".into()))?;
            let supply_idx: Vec<usize> = net
                .supplies
                .iter()
                .map(|s| net.node_index(s).expect("validated supply node"))
                .collect();
            let mut c = vec![0.0; n_arcs];
            for (e, arc) in net.arcs.iter().enumerate() {
                let tail = net.node_index(&arc.tail).unwrap();
                let head = net.node_index(&arc.head).unwrap();
                if head == sink {
                    c[e] += arc.gain;
                }
                if tail == sink {
                    c[e] -= 1.0;
                }
            }
            let mut a = Vec::new();
            let mut b = Vec::new();
            let mut offset = Vec::new();
            // Supply rows: -net(f, v) <= x_v.
            for (good, &v) in supply_idx.iter().enumerate() {
                a.push(node_outflow_row(net, v));
                let mut brow = vec![0.0; m];
                brow[good] = 1.0;
                b.push(brow);
                offset.push(0.0);
            }
            // Interior rows: -net(f, v) <= 0.
            for v in 0..net.nodes.len() {
                if v != sink && !supply_idx.contains(&v) {
                    a.push(node_outflow_row(net, v));
                    b.push(vec![0.0; m]);
                    offset.push(0.0);
                }
            }
            // Finite capacities.
            for (e, arc) in net.arcs.iter().enumerate() {
                if let Some(cap) = arc.cap {
                    let mut arow = vec![0.0; n_arcs];
                    arow[e] = 1.0;
                    a.push(arow);
                    b.push(vec![0.0; m]);
                    offset.push(cap);
                }
            }
            Ok(ParametricLP { a, b, offset, c })
        }
        UtilitySpec::Lp(u) => Ok(ParametricLP {
            a: u.a.clone(),
            b: u.b.clone(),
            offset: u.offset.clone(),
            c: u.c.clone(),
        }),
        UtilitySpec::Quadratic(_) => Err(Error::UnsupportedFamily(
            "quadratic utilities have no LP form".into(),
        )),
    }
}

/// Coefficients of `-net(f, v)` as a row over arc variables.
fn node_outflow_row(net: &GenFlowNetwork, v: usize) -> Vec<f64> {
    let mut row = vec![0.0; net.arcs.len()];
    for (e, arc) in net.arcs.iter().enumerate() {
        let tail = net.node_index(&arc.tail).unwrap();
        let head = net.node_index(&arc.head).unwrap();
        if tail == v {
            row[e] += 1.0;
        }
        if head == v {
            row[e] -= arc.gain;
        }
    }
    row
}

/// Whether the utility has a finite maximum value.
pub fn satiable(u: &UtilitySpec) -> Result<bool, Error> {
    match u {
        UtilitySpec::Quadratic(_) => Ok(true),
        _ => {
            let lp = to_lp(u)?;
            Ok(!has_improving_ray(&lp, &(0..u.num_goods()).collect::<Vec<_>>())?)
        }
    }
}

/// Whether the utility value can grow without bound along supply directions
/// supported on `free_goods` only.
pub(crate) fn has_improving_ray(lp: &ParametricLP, free_goods: &[usize]) -> Result<bool, Error> {
    let nz = lp.vars();
    let m = lp.params();
    let mut builder = lp::LpBuilder::new(nz + m);
    for j in 0..nz {
        builder.set_objective(j, lp.c[j]);
    }
    // A z - B r <= 0 with the direction r normalized and restricted.
    for (i, arow) in lp.a.iter().enumerate() {
        let mut terms: Vec<(usize, f64)> = arow
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (j, v))
            .collect();
        for (g, &bv) in lp.b[i].iter().enumerate() {
            if bv != 0.0 {
                terms.push((nz + g, -bv));
            }
        }
        builder.add_le(&terms, 0.0);
    }
    let norm: Vec<(usize, f64)> = (0..m).map(|g| (nz + g, 1.0)).collect();
    builder.add_le(&norm, 1.0);
    for g in 0..m {
        if !free_goods.contains(&g) {
            builder.add_le(&[(nz + g, 1.0)], 0.0);
        }
    }
    let sol = builder.solve()?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.value > 1e-9),
        LpStatus::Unbounded => Ok(true),
        LpStatus::Infeasible => Err(Error::NumericalFailure(
            "recession program cannot be infeasible".into(),
        )),
    }
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(mat: &[Vec<f64>]) -> Vec<f64> {
    let n = mat.len();
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-14 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn eg1_agent1_direct_eval() {
        let u = fixtures::eg1_instance().agents[0].utility.clone();
        let v = eval(&u, &[0.8, 0.2]).unwrap();
        assert!((v - 1.13).abs() < 1e-12);
    }

    #[test]
    fn quadratic_center_and_origin() {
        let u = fixtures::quadratic_utility();
        assert!((eval(&u, &[0.1, 0.1, 0.1]).unwrap() - 1.0).abs() < 1e-9);
        assert!(eval(&u, &[0.0, 0.0, 0.0]).unwrap().abs() < 1e-9);
    }

    #[test]
    fn quadratic_gradient_at_center() {
        let u = fixtures::quadratic_utility();
        let g = supergradient(&u, &[0.1, 0.1, 0.1]).unwrap();
        for v in g {
            assert!((v - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_eigenvalues_match() {
        let UtilitySpec::Quadratic(q) = fixtures::quadratic_utility() else {
            unreachable!()
        };
        let eigs = symmetric_eigenvalues(&q.a);
        let expected = [-32.7406, -14.7027, -6.46554];
        for (e, x) in eigs.iter().zip(expected) {
            assert!((e - x).abs() < 1e-3, "eig {e} vs {x}");
        }
    }

    #[test]
    fn bounded_linear_network_value() {
        let u = UtilitySpec::BoundedLinear {
            values: vec![1.3],
            caps: vec![Some(1.04)],
        };
        let net = to_network(&u).unwrap();
        assert_eq!(net.arcs.len(), 1);
        assert!((net.arcs[0].cap.unwrap() - 0.8).abs() < 1e-12);
        let v = eval(&UtilitySpec::GenNetwork(net), &[1.0]).unwrap();
        assert!((v - 1.04).abs() < 1e-9);
    }

    #[test]
    fn splc_network_drops_zero_slope_tail() {
        let u = UtilitySpec::Splc {
            segments: vec![vec![
                Segment {
                    slope: 2.0,
                    length: Some(0.8),
                },
                Segment {
                    slope: 0.0,
                    length: None,
                },
            ]],
        };
        let net = to_network(&u).unwrap();
        assert_eq!(net.arcs.len(), 1);
        for q in [0.0, 0.3, 0.8, 2.0] {
            let direct = eval(&u, &[q]).unwrap();
            let via_net = eval(&UtilitySpec::GenNetwork(net.clone()), &[q]).unwrap();
            assert!((direct - via_net).abs() < 1e-9);
        }
    }

    #[test]
    fn leontief_free_capped_sum() {
        let u = fixtures::lf_capped_sum();
        let net = to_network(&u).unwrap();
        let v = eval(&UtilitySpec::GenNetwork(net), &[1.0, 1.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        assert!((eval(&u, &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lp_and_direct_agree_on_eg1() {
        let inst = fixtures::eg1_instance();
        let samples = [
            vec![0.0, 0.0],
            vec![0.3, 0.8],
            vec![1.0, 1.0],
            vec![0.15, 0.45],
            vec![2.0, 0.1],
        ];
        for agent in &inst.agents {
            let lp = to_lp(&agent.utility).unwrap();
            for x in &samples {
                let direct = eval(&agent.utility, x).unwrap();
                let sol = crate::lp::solve(&lp, x).unwrap();
                assert!((direct - sol.value).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn genflow_lp_value_on_eg1_agent2() {
        let u = fixtures::eg1_instance().agents[1].utility.clone();
        let net = to_network(&u).unwrap();
        let v = eval(&UtilitySpec::GenNetwork(net), &[0.3, 0.8]).unwrap();
        assert!((v - 1.603).abs() < 1e-9);
    }

    #[test]
    fn bounded_linear_supergradient_past_caps() {
        let u = UtilitySpec::BoundedLinear {
            values: vec![1.3, 0.45],
            caps: vec![Some(1.04), None],
        };
        let g = supergradient(&u, &[0.9, 0.2]).unwrap();
        assert!(g[0].abs() < 1e-9, "cap active, got {}", g[0]);
        assert!((g[1] - 0.45).abs() < 1e-9);
    }

    #[test]
    fn satiability_classification() {
        let inst = fixtures::eg1_instance();
        assert!(!satiable(&inst.agents[0].utility).unwrap());
        assert!(satiable(&inst.agents[1].utility).unwrap());
        assert!(satiable(&fixtures::lf_capped_sum()).unwrap());
    }

    #[test]
    fn monotone_and_concave_probes() {
        let inst = fixtures::eg1_instance();
        let mut state = 1234567u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for agent in &inst.agents {
            for _ in 0..50 {
                let x = vec![next() * 2.0, next() * 2.0];
                let y = vec![next() * 2.0, next() * 2.0];
                let lam = next();
                let ux = eval(&agent.utility, &x).unwrap();
                let uy = eval(&agent.utility, &y).unwrap();
                let mid: Vec<f64> = x
                    .iter()
                    .zip(&y)
                    .map(|(a, b)| lam * a + (1.0 - lam) * b)
                    .collect();
                let umid = eval(&agent.utility, &mid).unwrap();
                assert!(umid >= lam * ux + (1.0 - lam) * uy - 1e-7, "concavity");
                let bigger: Vec<f64> = x.iter().map(|v| v + 0.3).collect();
                assert!(eval(&agent.utility, &bigger).unwrap() >= ux - 1e-9, "monotone");
            }
        }
    }

    #[test]
    fn submodularity_probe_separable_and_network() {
        let inst = fixtures::eg1_instance();
        let net = UtilitySpec::GenNetwork(to_network(&inst.agents[1].utility).unwrap());
        let mut state = 99u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for u in [&inst.agents[0].utility, &net] {
            for _ in 0..50 {
                let x = vec![next() * 2.0, next() * 2.0];
                let y = vec![next() * 2.0, next() * 2.0];
                let hi: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a.max(*b)).collect();
                let lo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a.min(*b)).collect();
                let lhs = eval(u, &x).unwrap() + eval(u, &y).unwrap();
                let rhs = eval(u, &hi).unwrap() + eval(u, &lo).unwrap();
                assert!(lhs >= rhs - 1e-7, "submodularity: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{"type":"bounded_linear","values":[1.3,0.45],"caps":[1.04,null]}"#;
        let u: UtilitySpec = serde_json::from_str(text).unwrap();
        assert_eq!(u.num_goods(), 2);
        let back = serde_json::to_string(&u).unwrap();
        let u2: UtilitySpec = serde_json::from_str(&back).unwrap();
        assert_eq!(u, u2);
    }
}
