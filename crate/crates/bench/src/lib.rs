//! Criterion benchmarks for the phdae kernels live in `benches/`.
