//! Config-driven experiments over the toolkit, in double precision.

pub mod check;
mod config;
mod curves;
mod output;
mod run;

pub use config::{Estimator, ExperimentConfig, NoiseSpec, PriorSpec, DEFAULT_LAMBDA_GRID};
pub use curves::{
    default_sigma_indices, mmse_curve, run_overlap_experiment, MmseCurve, MmseCurveConfig, OverlapBin, OverlapReport,
    OverlapRow, OVERLAP_HEADER,
};
pub use output::{
    emit_plot_data, read_aggregate_csv, write_aggregate_csv, AggregateRecord, PlotFormat, AGGREGATE_HEADER,
};
pub use run::{run_experiment, Aggregate, ExperimentResult, TrialRow};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "RRIE_THREADS";

/// Runs `f` on a pool sized by [`THREADS_ENV`] (default: all cores).
///
/// Dense kernels run single-threaded inside the pool so results do not
/// depend on how many threads there are.
pub fn with_thread_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    faer::set_global_parallelism(faer::Par::Seq);
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a thread pool ({e}); using the global one");
            f()
        }
    }
}
