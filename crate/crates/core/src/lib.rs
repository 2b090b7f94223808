//! Terrain-aware vehicle dynamics with a recursively updated sparse GP
//! residual and an MPPI tracking controller.

pub mod config;
pub mod dynamics;
pub mod mppi;
pub mod plant_sim;
pub mod sparse_gp;
pub mod terrain;
