//! Benchmarks for the runtime live in `benches/`.
