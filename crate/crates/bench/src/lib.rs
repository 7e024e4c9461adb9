//! Benchmarks for the hot kernels; see `benches/`.
