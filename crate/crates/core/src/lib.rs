//! Budget allocation under drifting response curves: simulator, forecasters,
//! horizon planner, controllers and a paired Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod controllers;
pub mod env;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod linalg;
pub mod response;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type EnvTheta = env::EnvTheta<f64>;
pub type CtrlTheta = response::CtrlTheta<f64>;
pub type HorizonProblem = solver::HorizonProblem<f64>;
pub type HorizonSolution = solver::HorizonSolution<f64>;
pub type ParticleSet = forecast::ParticleSet<f64>;
pub type EnvThetaF32 = env::EnvTheta<f32>;
pub type CtrlThetaF32 = response::CtrlTheta<f32>;
pub type HorizonProblemF32 = solver::HorizonProblem<f32>;
pub type HorizonSolutionF32 = solver::HorizonSolution<f32>;
