//! Desk-scale DDPG laboratory for a planar five-link bipedal walker.

pub mod dynamics;
pub mod env;
pub mod checks;
pub mod nn;
pub mod ddpg;
pub mod gait;
pub mod config;
pub mod checkpoint;
