//! Criterion benchmarks for the CSRN core; see `benches/`.
