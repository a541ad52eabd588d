//! Criterion benchmarks for the linear algebra kernels, batch rollouts and one
//! full optimizer iteration. Run with `cargo bench -p seqopt-bench`.
