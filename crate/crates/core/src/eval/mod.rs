//! Metrics, sweeps and oracles.

pub mod bench;
pub mod bound;
pub mod history;
pub mod metrics;
pub mod oracle;
pub mod sweep;

pub use bench::{layered_graph, scalability_bench, BenchRow};
pub use bound::{frequency_bound, frequency_bound_check, BoundCheck};
pub use history::{history_probabilities, interference_bound, is_winning_prefix, marginalize, History};
pub use metrics::{average_reward, buchi_frequency, csv_string, write_csv, EvalError, Method, MetricsRecord, CSV_HEADER};
pub use sweep::{
    bucket_compare, compare_naive, run_policy, run_seed, run_stars, sign_test, slope, sweep_gamma, sweep_naive, Bucket,
    Comparison, Prepared, RunStats, SignTest,
};
