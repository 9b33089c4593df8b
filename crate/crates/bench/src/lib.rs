//! Benchmarks for `dvarint-core`; see `benches/`.
