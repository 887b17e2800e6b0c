//! Agentic optimization loop driven by invariant feedback.
//!
//! A planner proposes rewrites drawn from a knowledge base, a chat transport
//! lowers them into candidate kernels, and each candidate is checked,
//! tested and costed by the tilecheck pipeline before it can be retained.

pub mod icrl;
pub mod kb;
pub mod lowering;
pub mod planner;
pub mod reward;
pub mod select;
pub mod transport;
pub mod validate;

pub use icrl::{run_icrl, Best, IcrlConfig, IcrlError, IcrlOutcome, Trajectory, Triple};
pub use kb::{load_knowledge_base, Category, KbEntry, KbError, KnowledgeBase};
pub use lowering::{extract_source, lower_plan, LowerPlanError};
pub use planner::{parse_proposals, plan, update_params, PlanContext, PlanError, PlannerParams, Proposal};
pub use reward::{reward, CostWeights, RewardWeights};
pub use select::{select, softmax};
pub use transport::{HttpTransport, Message, Purpose, Role, ScriptedTransport, Transport, TransportError};
pub use validate::{validate, Feedback, TaskEnv, TaskError, TaskSpec};
