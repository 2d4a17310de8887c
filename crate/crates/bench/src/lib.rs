//! Criterion benchmarks for aggnn-core; see `benches/`.
