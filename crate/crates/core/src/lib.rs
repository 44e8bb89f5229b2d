//! Driving spin chains out of equilibrium with random quenches and steering
//! them back with chopped-random-basis (CRAB) optimal control.

pub mod dynamics;
pub mod models;
pub mod analysis;
pub mod crab;
pub mod protocols;
pub mod search;
pub mod config;
pub mod experiments;
