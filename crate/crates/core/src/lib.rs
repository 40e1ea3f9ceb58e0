//! Core library for the skymap pipeline: synthetic urban air-to-ground channel
//! simulation, WGAN-based data augmentation, channel-knowledge-map (CKM)
//! predictors, and UAV trajectory planning (PPO and a block-coordinate-descent
//! baseline) under communication constraints.

pub mod bcd;
pub mod channel;
pub mod ckm;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod mdp;
pub mod nn;
pub mod ppo;
pub mod wgan;

pub use error::{Error, Result};
pub use geometry::{Building, Environment, HeightGrid, Position};
