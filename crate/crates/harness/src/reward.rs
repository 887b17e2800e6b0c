//! Proxy cost model and step reward.

use serde::{Deserialize, Serialize};
use tilecheck::interp::Costs;

use crate::validate::Feedback;

/// Linear weights over interpreter work counters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub global_bytes: f64,
    pub shared_bytes: f64,
    pub barriers: f64,
    pub statement_instances: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            global_bytes: 1.0,
            shared_bytes: 0.25,
            barriers: 50.0,
            statement_instances: 0.01,
        }
    }
}

impl CostWeights {
    pub fn cost(&self, c: &Costs) -> f64 {
        self.global_bytes * c.global_bytes as f64
            + self.shared_bytes * c.shared_bytes as f64
            + self.barriers * c.barriers as f64
            + self.statement_instances * c.statement_instances as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub perf: f64,
    pub process: f64,
    /// Reward lost per violating assertion point.
    pub penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            perf: 1.0,
            process: 1.0,
            penalty: 0.1,
        }
    }
}

/// Trajectory context for the reward. Only the baseline cost is used.
pub trait RewardContext {
    fn baseline_cost(&self) -> f64;
}

impl RewardContext for f64 {
    fn baseline_cost(&self) -> f64 {
        *self
    }
}

/// `perf * (baseline / cost - 1) - process * penalty * violations`; the
/// performance term is zero unless the candidate passed everything.
pub fn reward(feedback: &Feedback, ctx: &dyn RewardContext, w: &RewardWeights) -> f64 {
    let perf = match feedback.cost {
        Some(c) if c > 0.0 => ctx.baseline_cost() / c - 1.0,
        _ => 0.0,
    };
    let r = w.perf * perf - w.process * w.penalty * feedback.violations as f64;
    if r.is_finite() {
        r
    } else {
        0.0
    }
}
