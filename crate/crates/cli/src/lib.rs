//! Support code for the `reconboost` binary.

pub mod schema;
