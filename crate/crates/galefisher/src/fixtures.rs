//! Catalog of worked examples: instance builders plus `run_fixture`, which
//! replays each example and checks its published numbers.

use serde::Serialize;

use crate::demand;
use crate::equilibrium;
use crate::model::{Agent, Allocation, MarketInstance};
use crate::nsw;
use crate::property;
use crate::utility::{
    self, GenArc, GenFlowNetwork, LfSegment, LpUtility, QuadraticUtility, Segment, UtilitySpec,
};
use crate::Error;

/// Two agents, two goods, unit budgets; the market with two isolated thrifty
/// equilibria at p = (1, 1) and p = (1.3, 0.45).
pub fn eg1_instance() -> MarketInstance {
    MarketInstance {
        goods: vec!["g1".into(), "g2".into()],
        agents: vec![
            Agent {
                id: "a1".into(),
                budget: 1.0,
                // 1.3 * min(x1, 0.8) + 0.45 * x2
                utility: UtilitySpec::BoundedLinear {
                    values: vec![1.3, 0.45],
                    caps: vec![Some(1.04), None],
                },
            },
            Agent {
                id: "a2".into(),
                budget: 1.0,
                // 0.01 * min(x1, 0.3) + 2 * min(x2, 0.8)
                utility: UtilitySpec::BoundedLinear {
                    values: vec![0.01, 2.0],
                    caps: vec![Some(0.003), Some(1.6)],
                },
            },
        ],
    }
}

/// Three-agent, three-good variant with two isolated competitive equilibria.
pub fn ce_disconnect3_instance() -> MarketInstance {
    MarketInstance {
        goods: vec!["g1".into(), "g2".into(), "g3".into()],
        agents: vec![
            Agent {
                id: "a1".into(),
                budget: 1.0,
                utility: UtilitySpec::BoundedLinear {
                    values: vec![1.3, 0.45, 0.0],
                    caps: vec![Some(1.04), None, None],
                },
            },
            Agent {
                id: "a2".into(),
                budget: 1.0,
                utility: UtilitySpec::BoundedLinear {
                    values: vec![0.01, 2.0, 1e-10],
                    caps: vec![Some(0.003), Some(1.6), None],
                },
            },
            Agent {
                id: "a3".into(),
                budget: 1.0,
                utility: UtilitySpec::Linear {
                    values: vec![0.0, 0.0, 1.0],
                },
            },
        ],
    }
}

/// `min(x1 + x2, 2 + 0.1 x1 + 0.2 x2)`: the utility whose Gale demand value
/// rises when both prices rise.
pub fn mono_utility() -> UtilitySpec {
    UtilitySpec::Lp(LpUtility {
        a: vec![vec![1.0], vec![1.0]],
        b: vec![vec![1.0, 1.0], vec![0.1, 0.2]],
        offset: vec![0.0, 2.0],
        c: vec![1.0],
    })
}

/// Unit-budget matching utility over three goods with preferences (1, 2.5, 0.7):
/// the LP caps the total matched quantity at one unit.
pub fn matching_utility() -> UtilitySpec {
    UtilitySpec::Lp(LpUtility {
        a: vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ],
        b: vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
        ],
        offset: vec![0.0, 0.0, 0.0, 1.0],
        c: vec![1.0, 2.5, 0.7],
    })
}

/// The submodular-but-not-substitutes quadratic utility over three goods.
pub fn quadratic_utility() -> UtilitySpec {
    let scale = 0.9709 / 0.27;
    let m = [[5.0, 1.0, 2.0], [1.0, 5.0, 3.0], [2.0, 3.0, 5.0]];
    let p = [0.1, 0.1, 0.1];
    let mut a = vec![vec![0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = -scale * m[i][j] + p[i] * p[j];
        }
    }
    UtilitySpec::Quadratic(QuadraticUtility {
        p: p.to_vec(),
        y: vec![0.1, 0.1, 0.1],
        a,
    })
}

/// The capped sum `min(x1 + x2, 1)`: satisfies the substitutes properties but
/// not the satiation-domination property.
pub fn lf_capped_sum() -> UtilitySpec {
    UtilitySpec::LeontiefFree {
        segments: vec![LfSegment {
            coeffs: vec![1.0, 1.0],
            cap: Some(1.0),
        }],
    }
}

/// Two agents, two goods: the market whose equilibrium Nash welfare tends to
/// `(1/e)^(1/e)` of the optimum as `eps` vanishes.
pub fn poa_instance(eps: f64) -> MarketInstance {
    MarketInstance {
        goods: vec!["g1".into(), "g2".into()],
        agents: vec![
            Agent {
                id: "a1".into(),
                budget: 1.0,
                utility: UtilitySpec::Linear {
                    values: vec![1.0, 0.0],
                },
            },
            Agent {
                id: "a2".into(),
                budget: std::f64::consts::E - 1.0,
                utility: UtilitySpec::BoundedLinear {
                    values: vec![eps, 1.0],
                    caps: vec![None, Some(1.0)],
                },
            },
        ],
    }
}

/// `n` agents, `n` goods; the last agent's utility differs by a factor of
/// roughly `n` between the two equilibria.
pub fn utility_gap_instance(n: usize, eps: f64) -> MarketInstance {
    let goods: Vec<String> = (0..n).map(|j| format!("g{}", j + 1)).collect();
    let mut agents = Vec::new();
    for i in 0..n - 1 {
        let mut values = vec![0.0; n];
        let mut caps = vec![None; n];
        values[i] = 1.0;
        caps[i] = Some(1.0);
        values[n - 1] = eps;
        agents.push(Agent {
            id: format!("a{}", i + 1),
            budget: 1.0,
            utility: UtilitySpec::BoundedLinear { values, caps },
        });
    }
    let mut values = vec![0.0; n];
    values[n - 1] = 1.0;
    agents.push(Agent {
        id: format!("a{n}"),
        budget: 1.0,
        utility: UtilitySpec::Linear { values },
    });
    MarketInstance { goods, agents }
}

/// One good, two agents; the second agent's kinked utility makes the
/// best-response-to-achieved ratio approach 2 as `alpha` grows.
pub fn approx_tight_instance(alpha: f64) -> MarketInstance {
    let beta = (1.0 - 1.0 / alpha) / (1.0 - 2.0 / alpha);
    MarketInstance {
        goods: vec!["g1".into()],
        agents: vec![
            Agent {
                id: "a1".into(),
                budget: 1.0,
                utility: UtilitySpec::Linear { values: vec![1.0] },
            },
            Agent {
                id: "a2".into(),
                budget: 1.0,
                utility: UtilitySpec::Splc {
                    segments: vec![vec![
                        Segment {
                            slope: alpha,
                            length: Some(1.0 / alpha),
                        },
                        Segment {
                            slope: beta,
                            length: None,
                        },
                    ]],
                },
            },
        ],
    }
}

/// `n + 2` agents and `n + 1` goods with a unique competitive equilibrium in
/// which agent `n + 1` earns only `1/n`.
pub fn inapprox_instance(n: usize, eps: f64) -> MarketInstance {
    let m = n + 1;
    let goods: Vec<String> = (0..m).map(|j| format!("g{}", j + 1)).collect();
    let mut agents = Vec::new();
    for i in 0..n {
        let mut values = vec![0.0; m];
        let mut caps = vec![None; m];
        values[i] = 1.0;
        caps[i] = Some(0.5);
        values[n] = eps;
        agents.push(Agent {
            id: format!("a{}", i + 1),
            budget: 1.0,
            utility: UtilitySpec::BoundedLinear { values, caps },
        });
    }
    let mut values = vec![0.0; m];
    values[n] = 1.0;
    agents.push(Agent {
        id: format!("a{}", n + 1),
        budget: 1.0,
        utility: UtilitySpec::Linear { values },
    });
    let mut values = vec![1.0; m];
    values[n] = 0.0;
    agents.push(Agent {
        id: format!("a{}", n + 2),
        budget: 1.0,
        utility: UtilitySpec::Linear { values },
    });
    MarketInstance { goods, agents }
}

/// Three agent types over goods O, P, R, S; the bundle-minimum utilities of
/// the middle type break the substitutes structure, and the first agent earns
/// far more at equilibrium than under maximum Nash welfare.
pub fn non_gale_instance(n: usize) -> MarketInstance {
    let m = 1 + n + n * n + n;
    let good_o = 0;
    let good_p = |s: usize| 1 + s;
    let good_r = |s: usize, t: usize| 1 + n + s * n + t;
    let good_s = |s: usize| 1 + n + n * n + s;
    let mut goods = vec!["O".to_string()];
    for s in 0..n {
        goods.push(format!("P{}", s + 1));
    }
    for s in 0..n {
        for t in 0..n {
            goods.push(format!("R{}_{}", s + 1, t + 1));
        }
    }
    for s in 0..n {
        goods.push(format!("S{}", s + 1));
    }
    let mut agents = Vec::new();

    let mut values = vec![0.0; m];
    let mut caps = vec![None; m];
    values[good_o] = 1.0;
    caps[good_o] = Some(1.0);
    for s in 0..n {
        values[good_p(s)] = 1.0;
        caps[good_p(s)] = Some(1.0);
    }
    agents.push(Agent {
        id: "A".into(),
        budget: 1.0,
        utility: UtilitySpec::BoundedLinear { values, caps },
    });

    let offset = n as f64 / (n as f64 + 1.0);
    for s in 0..n {
        for t in 0..n {
            let mut b_p = vec![0.0; m];
            b_p[good_p(s)] = 1.0;
            let mut b_r = vec![0.0; m];
            b_r[good_r(s, t)] = 1.0;
            agents.push(Agent {
                id: format!("B{}_{}", s + 1, t + 1),
                budget: 1.0,
                // min(x_P + n/(n+1), x_R)
                utility: UtilitySpec::Lp(LpUtility {
                    a: vec![vec![1.0], vec![1.0]],
                    b: vec![b_p, b_r],
                    offset: vec![offset, 0.0],
                    c: vec![1.0],
                }),
            });
        }
    }

    for s in 0..n {
        let mut values = vec![0.0; m];
        let mut caps = vec![None; m];
        values[good_s(s)] = 1.0;
        caps[good_s(s)] = Some(1.0);
        for t in 0..n {
            values[good_r(s, t)] = 1.0;
            caps[good_r(s, t)] = Some(1.0);
        }
        agents.push(Agent {
            id: format!("C{}", s + 1),
            budget: 1.0,
            utility: UtilitySpec::BoundedLinear { values, caps },
        });
    }
    MarketInstance { goods, agents }
}

/// `n` agents and goods, unit caps everywhere, good 1 valued only by agent 1;
/// the equilibrium-to-Nash-welfare utility ratio of agent 1 tends to 2.
pub fn main_tight_instance(n: usize) -> MarketInstance {
    let goods: Vec<String> = (0..n).map(|j| format!("g{}", j + 1)).collect();
    let mut agents = Vec::new();
    for i in 0..n {
        let mut values = vec![1.0; n];
        let mut caps = vec![Some(1.0); n];
        if i > 0 {
            values[0] = 0.0;
            caps[0] = None;
        }
        agents.push(Agent {
            id: format!("a{}", i + 1),
            budget: 1.0,
            utility: UtilitySpec::BoundedLinear { values, caps },
        });
    }
    MarketInstance { goods, agents }
}

/// `n` single-minded linear agents plus one big-budget agent with a capped
/// aggregate utility; its satiation bundles fail the domination property.
pub fn lf_satiated_instance(n: usize, eps: f64, big_budget: f64) -> MarketInstance {
    let goods: Vec<String> = (0..n).map(|j| format!("g{}", j + 1)).collect();
    let mut agents = Vec::new();
    for i in 0..n {
        let mut values = vec![0.0; n];
        values[i] = 1.0;
        agents.push(Agent {
            id: format!("a{}", i + 1),
            budget: 1.0,
            utility: UtilitySpec::Linear { values },
        });
    }
    agents.push(Agent {
        id: format!("a{}", n + 1),
        budget: big_budget,
        utility: UtilitySpec::LeontiefFree {
            segments: vec![LfSegment {
                coeffs: vec![1.0; n],
                cap: Some((n as f64 - 1.0) * (1.0 - eps)),
            }],
        },
    });
    MarketInstance { goods, agents }
}

/// A tiny hand-checkable network: one supply with a single capacitated arc
/// into the sink. Used by unit tests.
pub fn single_arc_network(gain: f64, cap: Option<f64>) -> GenFlowNetwork {
    GenFlowNetwork {
        nodes: vec!["g0".into(), "t".into()],
        sink: "t".into(),
        supplies: vec!["g0".into()],
        arcs: vec![GenArc {
            tail: "g0".into(),
            head: "t".into(),
            gain,
            cap,
        }],
    }
}

/// Structured outcome of replaying one worked example.
#[derive(Debug, Clone, Serialize)]
pub struct FixtureReport {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<FixtureCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureCheck {
    pub label: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl FixtureReport {
    pub(crate) fn new(name: &str) -> Self {
        FixtureReport {
            name: name.to_string(),
            passed: true,
            checks: Vec::new(),
        }
    }

    pub(crate) fn check(&mut self, label: &str, observed: f64, expected: f64, tolerance: f64) {
        let passed = (observed - expected).abs() <= tolerance;
        self.passed &= passed;
        self.checks.push(FixtureCheck {
            label: label.to_string(),
            observed,
            expected,
            tolerance,
            passed,
        });
    }

    pub(crate) fn check_le(&mut self, label: &str, observed: f64, bound: f64) {
        let passed = observed <= bound;
        self.passed &= passed;
        self.checks.push(FixtureCheck {
            label: label.to_string(),
            observed,
            expected: bound,
            tolerance: 0.0,
            passed,
        });
    }

    pub(crate) fn check_flag(&mut self, label: &str, flag: bool) {
        self.passed &= flag;
        self.checks.push(FixtureCheck {
            label: label.to_string(),
            observed: if flag { 1.0 } else { 0.0 },
            expected: 1.0,
            tolerance: 0.0,
            passed: flag,
        });
    }
}

/// Names accepted by `run_fixture`.
pub const FIXTURE_NAMES: [&str; 12] = [
    "eg1_disconnect",
    "ce_disconnect_3",
    "gale_nonmono",
    "poa_tight",
    "utility_gap",
    "approx_tight",
    "inapprox_inverse",
    "non_gale_gap",
    "main_tight",
    "lf_satiated",
    "matching_nonsub",
    "quadratic_submodular",
];

/// Replays a worked example and checks its published numbers.
pub fn run_fixture(name: &str) -> Result<FixtureReport, Error> {
    match name {
        "eg1_disconnect" => eg1_disconnect(),
        "ce_disconnect_3" => ce_disconnect_3(),
        "gale_nonmono" => gale_nonmono(),
        "poa_tight" => poa_tight(1e-4),
        "utility_gap" => utility_gap(4, 0.01),
        "approx_tight" => approx_tight(10.0),
        "inapprox_inverse" => inapprox_inverse(4, 0.1),
        "non_gale_gap" => non_gale_gap(4),
        "main_tight" => main_tight(10),
        "lf_satiated" => lf_satiated(3, 0.1, 100.0),
        "matching_nonsub" => matching_nonsub(),
        "quadratic_submodular" => quadratic_submodular(),
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

fn eg1_disconnect() -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("eg1_disconnect");
    let inst = eg1_instance();
    let first = Allocation::new(vec![vec![0.8, 0.2], vec![0.2, 0.8]]);
    let second = Allocation::new(vec![vec![0.7, 0.2], vec![0.3, 0.8]]);
    let r1 = equilibrium::verify_ce(&inst, &first, &[1.0, 1.0], 1e-9)?;
    report.check_flag("first equilibrium verifies", r1.is_ce);
    let r2 = equilibrium::verify_thrifty(&inst, &second, &[1.3, 0.45], 1e-9)?;
    report.check_flag("second equilibrium verifies", r2.is_ce);
    report.check_flag("second equilibrium is thrifty", r2.is_thrifty == Some(true));
    report.check(
        "second agent spend at the cheap optimum",
        r2.agents[1].spend,
        0.75,
        1e-9,
    );
    Ok(report)
}

fn ce_disconnect_3() -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("ce_disconnect_3");
    let inst = ce_disconnect3_instance();
    let first = Allocation::new(vec![
        vec![0.8, 0.2, 0.0],
        vec![0.2, 0.8, 0.0],
        vec![0.0, 0.0, 1.0],
    ]);
    let second = Allocation::new(vec![
        vec![0.7, 0.2, 0.0],
        vec![0.3, 0.8, 0.2],
        vec![0.0, 0.0, 0.8],
    ]);
    let r1 = equilibrium::verify_ce(&inst, &first, &[1.0, 1.0, 1.0], 1e-7)?;
    report.check_flag("all-ones equilibrium verifies", r1.is_ce);
    let r2 = equilibrium::verify_ce(&inst, &second, &[1.3, 0.45, 1.25], 1e-7)?;
    report.check_flag("second equilibrium verifies", r2.is_ce);
    Ok(report)
}

fn gale_nonmono() -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("gale_nonmono");
    let u = mono_utility();
    let low_value = 2.0 / 0.9 + 0.002;
    let q_low = [0.1 / low_value, 0.2 / low_value];
    let high_value = 2.0 / 0.85 + 0.01;
    let q_high = [1.0 / high_value, 1.0 / high_value];
    report.check_flag(
        "prices rise on both goods",
        q_high[0] > q_low[0] && q_high[1] > q_low[1],
    );
    let g_low = demand::gale_demand(&u, &q_low, 1.0)?;
    report.check("Gale utility at the lower prices", g_low.value, low_value, 1e-9);
    let g_high = demand::gale_demand(&u, &q_high, 1.0)?;
    report.check("Gale utility at the higher prices", g_high.value, high_value, 1e-9);
    report.check_flag("utility increased with prices", g_high.value > g_low.value);
    Ok(report)
}

fn poa_tight(eps: f64) -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("poa_tight");
    let inst = poa_instance(eps);
    let e = std::f64::consts::E;
    let ce = Allocation::new(vec![vec![1.0 / e, 0.0], vec![(e - 1.0) / e, 1.0]]);
    let r = equilibrium::verify_ce(&inst, &ce, &[e, 0.0], 1e-9)?;
    report.check_flag("closed-form equilibrium verifies", r.is_ce);
    let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default())?;
    let ratio = equilibrium::poa_check(&inst, &ce, &sol)?;
    report.check(
        "welfare ratio against the maximizer",
        ratio,
        (1.0f64 / e).powf(1.0 / e),
        1e-3,
    );
    Ok(report)
}

fn utility_gap(n: usize, eps: f64) -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("utility_gap");
    let inst = utility_gap_instance(n, eps);
    let m = n;
    let mut diag = Allocation::zeros(n, m);
    for i in 0..n {
        diag.rows[i][i] = 1.0;
    }
    let r1 = equilibrium::verify_ce(&inst, &diag, &vec![1.0; m], 1e-9)?;
    report.check_flag("all-ones equilibrium verifies", r1.is_ce);
    let last_u1 = utility::eval(&inst.agents[n - 1].utility, &diag.rows[n - 1])?;
    report.check("last agent utility, first equilibrium", last_u1, 1.0, 1e-9);

    let mut prices = vec![0.0; m];
    prices[m - 1] = n as f64;
    let mut alloc = Allocation::zeros(n, m);
    for i in 0..n - 1 {
        alloc.rows[i][i] = 1.0;
        alloc.rows[i][m - 1] = 1.0 / n as f64;
    }
    alloc.rows[n - 1][m - 1] = 1.0 / n as f64;
    let r2 = equilibrium::verify_ce(&inst, &alloc, &prices, 1e-9)?;
    report.check_flag("degenerate-price equilibrium verifies", r2.is_ce);
    let last_u2 = utility::eval(&inst.agents[n - 1].utility, &alloc.rows[n - 1])?;
    report.check(
        "last agent utility, second equilibrium",
        last_u2,
        1.0 / n as f64,
        1e-6,
    );
    Ok(report)
}

fn approx_tight(alpha: f64) -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("approx_tight");
    let inst = approx_tight_instance(alpha);
    let x1 = 1.0 - 1.0 / alpha;
    let x2 = 1.0 / alpha;
    let q = 1.0 / x1;
    let alloc = Allocation::new(vec![vec![x1], vec![x2]]);
    let achieved = utility::eval(&inst.agents[1].utility, &[x2])?;
    report.check("second agent achieved utility", achieved, 1.0, 1e-9);
    let best = demand::demand(&inst.agents[1].utility, &[q], 1.0)?.value;
    report.check(
        "best response over achieved",
        best / achieved,
        2.0 - 1.0 / alpha,
        1e-6,
    );
    let two = equilibrium::verify_approx_ce(&inst, &alloc, &[q], 2.0, 1e-9)?;
    report.check_flag("passes the 2-approximate test", two.is_ce);
    let tighter = equilibrium::verify_approx_ce(&inst, &alloc, &[q], 1.5, 1e-9)?;
    report.check_flag("fails at 1.5", !tighter.is_ce);
    let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default())?;
    let solved = equilibrium::verify_approx_ce(&inst, &sol.allocation, &sol.prices, 2.0, 1e-4)?;
    report.check_flag("solver output is 2-approximate", solved.is_ce);
    Ok(report)
}

fn inapprox_inverse(n: usize, eps: f64) -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("inapprox_inverse");
    let inst = inapprox_instance(n, eps);
    let m = n + 1;
    let nf = n as f64;
    let mut prices = vec![2.0 / nf; m];
    prices[m - 1] = nf;
    let mut alloc = Allocation::zeros(n + 2, m);
    for i in 0..n {
        alloc.rows[i][i] = 0.5;
        alloc.rows[i][m - 1] = (nf - 1.0) / (nf * nf);
    }
    alloc.rows[n][m - 1] = 1.0 / nf;
    for j in 0..n {
        alloc.rows[n + 1][j] = 0.5;
    }
    let r = equilibrium::verify_ce(&inst, &alloc, &prices, 1e-9)?;
    report.check_flag("closed-form equilibrium verifies", r.is_ce);
    let ce_util = utility::eval(&inst.agents[n].utility, &alloc.rows[n])?;
    report.check("linear agent utility at equilibrium", ce_util, 1.0 / nf, 1e-6);
    let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default())?;
    let nsw_util = utility::eval(&inst.agents[n].utility, &sol.allocation.rows[n])?;
    report.check_flag("welfare maximizer restores the agent", nsw_util >= 0.99);
    Ok(report)
}

fn non_gale_gap(n: usize) -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("non_gale_gap");
    let inst = non_gale_instance(n);
    let nf = n as f64;
    let m = inst.num_goods();
    let good_p = |s: usize| 1 + s;
    let good_r = |s: usize, t: usize| 1 + n + s * n + t;
    let good_s = |s: usize| 1 + n + n * n + s;

    let mut prices = vec![0.0; m];
    for s in 0..n {
        for t in 0..n {
            prices[good_r(s, t)] = (nf + 1.0) / nf;
        }
    }
    let mut alloc = Allocation::zeros(inst.num_agents(), m);
    alloc.rows[0][0] = 1.0;
    for s in 0..n {
        alloc.rows[0][good_p(s)] = 1.0;
    }
    for s in 0..n {
        for t in 0..n {
            alloc.rows[1 + s * n + t][good_r(s, t)] = nf / (nf + 1.0);
        }
    }
    let c0 = 1 + n * n;
    for s in 0..n {
        alloc.rows[c0 + s][good_s(s)] = 1.0;
        for t in 0..n {
            alloc.rows[c0 + s][good_r(s, t)] = 1.0 / (nf + 1.0);
        }
    }
    let r = equilibrium::verify_thrifty(&inst, &alloc, &prices, 1e-7)?;
    report.check_flag("closed-form equilibrium verifies", r.is_ce);
    report.check_flag("equilibrium is thrifty", r.is_thrifty == Some(true));
    let ce_util = utility::eval(&inst.agents[0].utility, &alloc.rows[0])?;
    report.check("first agent utility at equilibrium", ce_util, nf + 1.0, 1e-9);

    let opts = nsw::EgOptions {
        tol: 1e-4,
        max_iters: 1500,
        trace: false,
    };
    let sol = nsw::solve_eg(&inst, &opts)?;
    let nsw_util = utility::eval(&inst.agents[0].utility, &sol.allocation.rows[0])?;
    let bound = 1.0 + nf.sqrt() + nf / (nf + 1.0);
    report.check_le("first agent utility under the welfare bound", nsw_util, bound + 0.1);
    report.check_flag(
        "equilibrium beats the welfare maximizer for this agent",
        nsw_util / ce_util < 1.0,
    );
    Ok(report)
}

fn main_tight(n: usize) -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("main_tight");
    let inst = main_tight_instance(n);
    let nf = n as f64;

    // Diagonal allocation with uniform unit prices is the certified welfare
    // maximizer: every agent sits on their Gale face and the market clears.
    let mut diag = Allocation::zeros(n, n);
    for i in 0..n {
        diag.rows[i][i] = 1.0;
    }
    let ones = vec![1.0; n];
    let mut certified = true;
    for (agent, row) in inst.agents.iter().zip(&diag.rows) {
        let kkt = demand::verify_gale_kkt(&agent.utility, &ones, agent.budget, row)?;
        certified &= kkt.pass;
    }
    report.check_flag("diagonal allocation is Gale-certified", certified);

    // Competitive equilibrium with good 1 free.
    let price = nf / (nf - 1.0);
    let mut prices = vec![price; n];
    prices[0] = 0.0;
    let mut ce = Allocation::zeros(n, n);
    ce.rows[0][0] = 1.0;
    ce.rows[0][1] = (nf - 1.0) / nf;
    for i in 1..n {
        let mut left = (nf - 1.0) / nf;
        let sums = ce.column_sums(n);
        let take = (1.0 - sums[i]).min(left);
        ce.rows[i][i] = take;
        left -= take;
        if left > 1e-12 {
            let next = if i + 1 < n { i + 1 } else { 1 };
            ce.rows[i][next] = left;
        }
    }
    let r = equilibrium::verify_ce(&inst, &ce, &prices, 1e-7)?;
    report.check_flag("free-good equilibrium verifies", r.is_ce);

    let sol = nsw::NswSolution {
        allocation: diag,
        prices: ones,
        nsw: 1.0,
        log_primal: 0.0,
        dual_value: 0.0,
        gap: 0.0,
        iterations: 0,
        trace: Vec::new(),
    };
    let ratios = equilibrium::half_guarantee_check(&inst, &ce, &sol)?;
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    report.check("worst utility ratio", min_ratio, 1.0 / 1.9, 1e-6);
    Ok(report)
}

fn lf_satiated(n: usize, eps: f64, big_budget: f64) -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("lf_satiated");
    let inst = lf_satiated_instance(n, eps, big_budget);
    let nf = n as f64;
    let mut prices = vec![1.0 / eps; n];
    prices[0] = 1.0;
    let mut alloc = Allocation::zeros(n + 1, n);
    alloc.rows[0][0] = 1.0;
    for i in 1..n {
        alloc.rows[i][i] = eps;
    }
    for j in 1..n {
        alloc.rows[n][j] = 1.0 - eps;
    }
    let r = equilibrium::verify_thrifty(&inst, &alloc, &prices, 1e-9)?;
    report.check_flag("closed-form equilibrium verifies", r.is_ce);
    report.check_flag(
        "equilibrium is not thrifty (a cheaper optimum exists)",
        r.is_thrifty == Some(false),
    );
    let sigma = property::check_sigma(&inst.agents[n].utility, big_budget, &prices)?;
    report.check_flag(
        "satiation domination fails for the capped agent",
        sigma.verdict == property::Verdict::Violation,
    );
    let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default())?;
    let u1 = utility::eval(&inst.agents[0].utility, &sol.allocation.rows[0])?;
    report.check(
        "first agent utility at the welfare maximizer",
        u1,
        eps + (1.0 - eps) / nf,
        0.05,
    );
    let ce_u1 = utility::eval(&inst.agents[0].utility, &alloc.rows[0])?;
    report.check_flag(
        "ratio falls below one half at this weak equilibrium",
        u1 / ce_u1 < 0.5,
    );
    Ok(report)
}

fn matching_nonsub() -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("matching_nonsub");
    let u = matching_utility();
    let g1 = demand::gale_demand(&u, &[0.3, 1.2, 0.1], 1.0)?;
    let expected1 = [0.0, 103.0 / 198.0, 95.0 / 198.0];
    for (j, e) in expected1.iter().enumerate() {
        report.check(&format!("demand at the low prices, good {}", j + 1), g1.bundle[j], *e, 1e-4);
    }
    let g2 = demand::gale_demand(&u, &[0.3, 1.2, 0.6], 1.0)?;
    let expected2 = [5.0 / 9.0, 4.0 / 9.0, 0.0];
    for (j, e) in expected2.iter().enumerate() {
        report.check(&format!("demand at the high prices, good {}", j + 1), g2.bundle[j], *e, 1e-4);
    }
    let w = property::check_substitutes_price(&u, 1.0, &[0.3, 1.2, 0.6], &[0.3, 1.2, 0.1])?;
    report.check_flag(
        "price drop raises demand on an unchanged good",
        w.verdict == property::Verdict::Violation && w.violated_good == Some(1),
    );
    Ok(report)
}

fn quadratic_submodular() -> Result<FixtureReport, Error> {
    let mut report = FixtureReport::new("quadratic_submodular");
    let u = quadratic_utility();
    let UtilitySpec::Quadratic(q) = &u else { unreachable!() };
    let eigs = utility::symmetric_eigenvalues(&q.a);
    let expected = [-32.7406, -14.7027, -6.46554];
    for (e, x) in eigs.iter().zip(expected) {
        report.check("matrix eigenvalue", *e, x, 1e-3);
    }
    report.check("utility at the center", utility::eval(&u, &q.y)?, 1.0, 1e-9);
    report.check("utility at the origin", utility::eval(&u, &[0.0; 3])?, 0.0, 1e-9);

    let g = demand::gale_demand(&u, &[0.12, 0.1, 0.1], 1.0)?;
    let expected_demand = [0.09934, 0.09996, 0.10029];
    for (j, e) in expected_demand.iter().enumerate() {
        report.check(&format!("perturbed demand, good {}", j + 1), g.bundle[j], *e, 5e-3);
    }

    // First-order direction of the demand under a price bump on good 1:
    // solve (H - p pᵀ) dx = e1 with H the utility Hessian.
    let mut h = vec![vec![0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] = 2.0 * q.a[i][j] - q.p[i] * q.p[j];
        }
    }
    let dx = solve3(&h, &[1.0, 0.0, 0.0]);
    let ratio = [dx[0] / dx[1], 1.0, dx[2] / dx[1]];
    let expected_ratio = [16.0, 1.0, -7.25];
    for (j, e) in expected_ratio.iter().enumerate() {
        let rel = (ratio[j] - e).abs() / e.abs();
        report.check_le(&format!("direction ratio component {}", j + 1), rel, 0.05);
    }

    let w = property::check_substitutes_price(&u, 1.0, &[0.12, 0.1, 0.1], &[0.1, 0.1, 0.1])?;
    report.check_flag(
        "price drop raises demand on an unchanged good",
        w.verdict == property::Verdict::Violation,
    );
    Ok(report)
}

/// Dense 3x3 solve by Gaussian elimination with partial pivoting.
fn solve3(mat: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    let mut b = rhs.to_vec();
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for j in col..n {
                a[r][j] -= f * a[col][j];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut v = b[col];
        for j in col + 1..n {
            v -= a[col][j] * b[j];
        }
        b[col] = v / a[col][col];
    }
    b
}
