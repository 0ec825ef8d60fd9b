//! Criterion benchmarks for the `manygoals` kernels; see `benches/`.
