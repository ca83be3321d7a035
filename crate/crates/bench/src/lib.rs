//! Benchmark-only crate; see `benches/factory.rs`.
