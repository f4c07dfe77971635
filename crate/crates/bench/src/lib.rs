//! Shared helpers for benchmarks live in the benches themselves.
