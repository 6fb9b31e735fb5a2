//! Structured neural backstepping control for Euler–Lagrange systems.

pub mod autodiff;
pub mod blocks;
pub mod config;
pub mod controller;
pub mod error;
pub mod harness;
pub mod lnn;
pub mod model;
pub mod nets;
pub mod numerics;
pub mod plants;

pub use error::{Error, Result};
