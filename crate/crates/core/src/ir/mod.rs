//! Unrolled kernel IR: lowering, intrinsic descriptors and memory safety.

pub mod iexpr;
pub mod intrinsic;
pub mod lower;
pub mod safety;
pub mod types;

pub use iexpr::IExpr;
pub use intrinsic::{DescriptorError, IntrinsicDescriptor};
pub use lower::{lower, LowerError, LowerOptions};
pub use safety::{validate_memory_safety, SafetyError};
pub use types::*;
