//! Criterion benchmarks for the tape kernels, kNN interpolation, message
//! passing layers and full training steps. Run with `cargo bench -p meshsr-bench`.
