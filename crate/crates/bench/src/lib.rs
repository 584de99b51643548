//! Criterion benchmarks for the filters and the quadrature oracle; see `benches/`.
