//! Cost models and benchmarks: parameter tables, convolution FLOPs,
//! CPU latency, the `(L, B)` frontier sweep and the nine-row parameter
//! reproduction report.

mod bench;
mod counts;
pub mod flops;
mod sweep;
mod table1;

pub use bench::{latency_bench, BenchConfig, BenchMode, BenchReport};
pub use counts::{count_flops, count_params, FlopTable, ModuleCount, ParamTable};
pub use flops::{total_flops, ConvRecord};
pub use sweep::{sweep, write_frontier_csv, FrontierRow, SweepConfig, SweepMetric};
pub use table1::{
    reproduce_table1, table1_configs, write_table1_csv, write_table1_markdown, Table1Row, TABLE1_TOLERANCE,
};
