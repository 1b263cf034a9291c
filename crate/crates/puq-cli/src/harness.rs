//! Parallel replication driver. Each replicate is seeded independently by
//! index and computed single-threaded, so the output is byte-identical to
//! the sequential core harness for any worker count.

use puq_core::metrics::{run_replicate, verdict, MetricsError, ReplicateSetup, RiskReport, Verdict};
use puq_core::seed::SeedSpec;
use rayon::prelude::*;

/// Runs `n_replicates` independent calibration/test splits on a local
/// rayon pool (`threads == 0` uses all cores) and merges reports in
/// replicate order.
pub fn replicate_parallel(
    setup: &ReplicateSetup,
    n_replicates: usize,
    seed: &SeedSpec,
    threads: usize,
) -> Result<(Vec<RiskReport>, Verdict), MetricsError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction");
    let reports: Result<Vec<RiskReport>, MetricsError> = pool.install(|| {
        (0..n_replicates as u64)
            .into_par_iter()
            .map(|r| run_replicate(setup, r, seed))
            .collect()
    });
    let reports = reports?;
    let v = verdict(&reports, &setup.params.risk);
    Ok((reports, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use puq_core::calibration::{LambdaGrid, Method, PipelineParams, RiskConfig};
    use puq_core::samplers::{CovarianceModel, GaussianTask, GaussianTaskSpec};

    fn setup_task() -> (GaussianTask, PipelineParams) {
        let task = GaussianTask::new(
            GaussianTaskSpec {
                dim: 4,
                input_dim: 3,
                covariance: CovarianceModel::Equicorrelation { rho: 0.8, tau2: 0.01 },
                sampler_scale: 1.0,
            },
            &SeedSpec::new(500),
        )
        .unwrap();
        let params = PipelineParams {
            method: Method::EPuq,
            k: 4,
            n_samples: 4,
            risk: RiskConfig::default(),
            grid: LambdaGrid::default(),
            epsilon: 1e-10,
        };
        (task, params)
    }

    #[test]
    fn parallel_matches_sequential_for_any_thread_count() {
        let (task, params) = setup_task();
        let setup = ReplicateSetup { task: &task, params: &params, n_cal: 60, n_test: 60, patch: None };
        let seed = SeedSpec::new(11);
        let (seq, seq_v) = puq_core::metrics::replicate(&setup, 6, &seed).unwrap();
        for threads in [1, 2, 4] {
            let (par, par_v) = replicate_parallel(&setup, 6, &seed, threads).unwrap();
            assert_eq!(seq, par, "threads = {threads}");
            assert_eq!(seq_v, par_v);
        }
    }

    #[test]
    fn single_replicate_equals_composed_pipeline() {
        use puq_core::calibration::run_calibration;
        use puq_core::metrics::evaluate;
        use puq_core::samplers::generate_dataset;

        let (task, params) = setup_task();
        let setup = ReplicateSetup { task: &task, params: &params, n_cal: 50, n_test: 50, patch: None };
        let seed = SeedSpec::new(21);
        let (reports, _) = replicate_parallel(&setup, 1, &seed, 2).unwrap();

        let child = seed.child(0, "replicate");
        let pairs = generate_dataset(&task, 100, &child);
        let (cal, test) = pairs.split_at(50);
        let calres = run_calibration(cal, &task, &child, &params, None).unwrap();
        let report = evaluate(test, &task, &child, &params, &calres, None).unwrap();
        assert_eq!(reports[0], report);
    }
}
