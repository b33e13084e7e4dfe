//! Criterion benchmarks for the simulator and the learning components.
//! Run with `cargo bench -p dynpick-bench`.
