//! Shared generators for randomized suite runs. Everything is seeded, so
//! failures reproduce exactly.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use galefisher::model::{Agent, MarketInstance};
use galefisher::utility::{GenArc, GenFlowNetwork, LfSegment, Segment, UtilitySpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_splc(rng: &mut ChaCha8Rng, m: usize, allow_nonsatiable: bool) -> UtilitySpec {
    let mut segments = Vec::with_capacity(m);
    for _ in 0..m {
        let count = rng.gen_range(1..=3);
        let mut slope = rng.gen_range(0.3..3.0);
        let mut segs = Vec::with_capacity(count);
        for i in 0..count {
            let last = i + 1 == count;
            let length = if last && allow_nonsatiable && rng.gen_bool(0.5) {
                None
            } else {
                Some(rng.gen_range(0.2..1.5))
            };
            segs.push(Segment { slope, length });
            slope *= rng.gen_range(0.25..0.8);
        }
        segments.push(segs);
    }
    UtilitySpec::Splc { segments }
}

pub fn random_bounded_linear(rng: &mut ChaCha8Rng, m: usize) -> UtilitySpec {
    let values: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..3.0)).collect();
    let caps = values
        .iter()
        .map(|v| {
            if rng.gen_bool(0.7) {
                Some(v * rng.gen_range(0.3..1.5))
            } else {
                None
            }
        })
        .collect();
    UtilitySpec::BoundedLinear { values, caps }
}

pub fn random_linear(rng: &mut ChaCha8Rng, m: usize) -> UtilitySpec {
    UtilitySpec::Linear {
        values: (0..m).map(|_| rng.gen_range(0.2..3.0)).collect(),
    }
}

pub fn random_separable(rng: &mut ChaCha8Rng, m: usize) -> UtilitySpec {
    match rng.gen_range(0..3) {
        0 => random_linear(rng, m),
        1 => random_bounded_linear(rng, m),
        _ => random_splc(rng, m, true),
    }
}

pub fn random_leontief_free(rng: &mut ChaCha8Rng, m: usize) -> UtilitySpec {
    let k = rng.gen_range(1..=3);
    let segments = (0..k)
        .map(|_| LfSegment {
            coeffs: (0..m)
                .map(|_| {
                    if rng.gen_bool(0.75) {
                        rng.gen_range(0.2..2.0)
                    } else {
                        0.0
                    }
                })
                .collect(),
            cap: if rng.gen_bool(0.7) {
                Some(rng.gen_range(0.4..2.0))
            } else {
                None
            },
        })
        .collect();
    let spec = UtilitySpec::LeontiefFree { segments };
    if spec.validate(m, &[]).is_empty() && positive_somewhere(&spec, m) {
        spec
    } else {
        random_bounded_linear(rng, m)
    }
}

/// Layered network: goods feed optional middle nodes or the sink directly.
pub fn random_network(rng: &mut ChaCha8Rng, m: usize, max_middles: usize) -> UtilitySpec {
    let middles = rng.gen_range(0..=max_middles);
    let mut nodes: Vec<String> = (0..m).map(|g| format!("g{g}")).collect();
    for k in 0..middles {
        nodes.push(format!("n{k}"));
    }
    nodes.push("t".into());
    let mut arcs = Vec::new();
    for g in 0..m {
        let fanout = rng.gen_range(1..=2);
        for _ in 0..fanout {
            let head = if middles > 0 && rng.gen_bool(0.6) {
                format!("n{}", rng.gen_range(0..middles))
            } else {
                "t".into()
            };
            arcs.push(GenArc {
                tail: format!("g{g}"),
                head,
                gain: rng.gen_range(0.3..2.5),
                cap: if rng.gen_bool(0.8) {
                    Some(rng.gen_range(0.2..2.0))
                } else {
                    None
                },
            });
        }
    }
    for k in 0..middles {
        arcs.push(GenArc {
            tail: format!("n{k}"),
            head: "t".into(),
            gain: rng.gen_range(0.3..2.5),
            cap: if rng.gen_bool(0.8) {
                Some(rng.gen_range(0.3..2.0))
            } else {
                None
            },
        });
    }
    let net = GenFlowNetwork {
        nodes,
        sink: "t".into(),
        supplies: (0..m).map(|g| format!("g{g}")).collect(),
        arcs,
    };
    UtilitySpec::GenNetwork(net)
}

fn positive_somewhere(u: &UtilitySpec, m: usize) -> bool {
    galefisher::utility::eval(u, &vec![1.0; m]).map_or(false, |v| v > 1e-9)
}

/// Any family with an LP form; used where cross-agent evaluation must stay
/// total.
pub fn random_any_family(rng: &mut ChaCha8Rng, m: usize) -> UtilitySpec {
    let u = match rng.gen_range(0..5) {
        0 => random_linear(rng, m),
        1 => random_bounded_linear(rng, m),
        2 => random_splc(rng, m, true),
        3 => random_leontief_free(rng, m),
        _ => random_network(rng, m, 2),
    };
    if positive_somewhere(&u, m) {
        u
    } else {
        random_linear(rng, m)
    }
}

pub fn random_instance<F>(rng: &mut ChaCha8Rng, n: usize, m: usize, equal_budgets: bool, mut family: F) -> MarketInstance
where
    F: FnMut(&mut ChaCha8Rng, usize) -> UtilitySpec,
{
    let goods = (0..m).map(|j| format!("g{}", j + 1)).collect();
    let agents = (0..n)
        .map(|i| Agent {
            id: format!("a{}", i + 1),
            budget: if equal_budgets {
                1.0
            } else {
                rng.gen_range(0.6..1.8)
            },
            utility: family(rng, m),
        })
        .collect();
    MarketInstance { goods, agents }
}

/// Strictly positive price vector.
pub fn random_prices(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.gen_range(0.2..2.0)).collect()
}
