//! Tag lattice and static propagation.

pub mod engine;
pub mod lattice;

pub use engine::{propagate, RegionSnap, TagTrace};
pub use lattice::{fold, merge, Tag, TagId, TagInterner};
