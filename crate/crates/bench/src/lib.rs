//! Criterion benchmarks for the stiffsde kernels live in `benches/`.
