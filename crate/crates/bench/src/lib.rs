//! Criterion benchmarks for reconboost; see `benches/`.
