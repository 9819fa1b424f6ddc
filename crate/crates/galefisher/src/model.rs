//! Market instances, allocations, prices and the shared numeric tolerances.
//!
//! Goods and agents are addressed by index internally and by string id in the
//! JSON interface. All types are immutable values.

use serde::{Deserialize, Serialize};

use crate::utility::UtilitySpec;

/// Feasibility comparisons (column sums, flow balances).
pub const FEAS_TOL: f64 = 1e-9;
/// Optimality comparisons (KKT residuals, duality gaps).
pub const OPT_TOL: f64 = 1e-6;
/// Comparisons against worked-example values, unless a check states otherwise.
pub const FIXTURE_TOL: f64 = 1e-4;

/// A bundle of goods held by a single agent, one entry per good.
pub type Bundle = Vec<f64>;
/// Nonnegative money-per-unit prices, one entry per good.
pub type PriceVector = Vec<f64>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub budget: f64,
    pub utility: UtilitySpec,
}

/// A Fisher market: goods with unit supply and agents with budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketInstance {
    pub goods: Vec<String>,
    pub agents: Vec<Agent>,
}

impl MarketInstance {
    pub fn num_goods(&self) -> usize {
        self.goods.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn total_budget(&self) -> f64 {
        self.agents.iter().map(|a| a.budget).sum()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

/// An allocation matrix, one row per agent, one column per good.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation {
    pub rows: Vec<Bundle>,
}

impl Allocation {
    pub fn new(rows: Vec<Bundle>) -> Self {
        Allocation { rows }
    }

    pub fn zeros(agents: usize, goods: usize) -> Self {
        Allocation {
            rows: vec![vec![0.0; goods]; agents],
        }
    }

    pub fn column_sums(&self, goods: usize) -> Vec<f64> {
        let mut sums = vec![0.0; goods];
        for row in &self.rows {
            for (j, v) in row.iter().enumerate() {
                sums[j] += v;
            }
        }
        sums
    }
}

/// Checks an instance and returns the list of violations; empty means valid.
pub fn validate_instance(instance: &MarketInstance) -> Vec<String> {
    let mut violations = Vec::new();
    if instance.goods.is_empty() {
        violations.push("instance must have at least one good".to_string());
    }
    if instance.agents.is_empty() {
        violations.push("instance must have at least one agent".to_string());
    }
    for (j, g) in instance.goods.iter().enumerate() {
        if instance.goods[..j].contains(g) {
            violations.push(format!("duplicate good id '{g}'"));
        }
    }
    let m = instance.goods.len();
    for agent in &instance.agents {
        if !(agent.budget > 0.0) {
            violations.push(format!("agent '{}': budget must be positive", agent.id));
        }
        for v in agent.utility.validate(m, &instance.goods) {
            violations.push(format!("agent '{}': {v}", agent.id));
        }
    }
    violations
}

/// Per-good residual `column sum - 1` of an allocation.
///
/// Negative entries mean unsold supply; positive entries mean over-allocation.
pub fn feasibility_residual(
    instance: &MarketInstance,
    allocation: &Allocation,
) -> Result<Vec<f64>, crate::Error> {
    let m = instance.num_goods();
    if allocation.rows.len() != instance.num_agents() {
        return Err(crate::Error::DimensionMismatch(format!(
            "allocation has {} rows, instance has {} agents",
            allocation.rows.len(),
            instance.num_agents()
        )));
    }
    for row in &allocation.rows {
        if row.len() != m {
            return Err(crate::Error::DimensionMismatch(format!(
                "allocation row has {} entries, instance has {m} goods",
                row.len()
            )));
        }
    }
    Ok(allocation.column_sums(m).iter().map(|s| s - 1.0).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
