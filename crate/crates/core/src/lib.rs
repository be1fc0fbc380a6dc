#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod netcore;
pub mod numkit;
pub mod objective;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
