//! Tag-based data-flow invariant checking for a tile-level GPU kernel language.

pub mod check;
pub mod dsl;
pub mod dtype;
pub mod interp;
pub mod intops;
pub mod ir;
pub mod layout;
pub mod pipeline;
pub mod tags;
