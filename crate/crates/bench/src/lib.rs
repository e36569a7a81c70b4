//! Benchmarks for minigrid live under benches/.
