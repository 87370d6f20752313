//! Criterion benchmarks for the hot paths of `bicorec-core`. See `benches/`.
