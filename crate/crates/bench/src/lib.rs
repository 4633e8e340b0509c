//! Criterion benchmarks for `stratdet-core`; see `benches/`.
