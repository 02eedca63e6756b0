//! The synthetic benchmark as a whole: difficulty must respond to the
//! loading concentration, and every method must handle a well-separated
//! mixture.

use nmfem::{
    run_benchmark, run_benchmark_methods, FitConfig, Method, SimulationSpec, WordDistribution,
};

fn bench_config(seed: u64) -> FitConfig {
    FitConfig {
        epsilon_outer: 1e-3,
        max_outer_iters: 200,
        max_inner_iters: 50,
        n_restarts: 4,
        seed,
        ..FitConfig::default()
    }
}

/// K = 5 clusters mixing H0 = 3 words: enough words that concentrated
/// loadings keep the clusters distinct, enough clusters that blurred
/// loadings genuinely confuse them.
fn spec(alpha: f64, seed: u64) -> SimulationSpec {
    SimulationSpec {
        m: 40,
        n: 150,
        per_individual_trials: 80,
        k: 5,
        h0: 3,
        alpha,
        seed,
        word_distribution: WordDistribution::SimplexUniform,
    }
}

#[test]
fn blurring_the_loadings_makes_the_problem_harder() {
    // Small alpha concentrates each cluster on few words (clusters far
    // apart); large alpha mixes the words evenly (clusters nearly
    // identical). The misclassification rate must follow.
    let cfg = bench_config(9);
    let easy = run_benchmark_methods(&spec(0.2, 17), 3, 6, &cfg, &[Method::NmfEm])
        .expect("easy benchmark")
        .mean_rate(Method::NmfEm)
        .expect("rows present");
    let hard = run_benchmark_methods(&spec(4.0, 17), 3, 6, &cfg, &[Method::NmfEm])
        .expect("hard benchmark")
        .mean_rate(Method::NmfEm)
        .expect("rows present");
    assert!(
        easy < 0.15,
        "concentrated loadings must be easy, got rate {easy}"
    );
    assert!(
        hard > easy + 0.1,
        "blurred loadings must be clearly harder: easy {easy} vs hard {hard}"
    );
}

#[test]
fn every_method_handles_a_well_separated_mixture() {
    let table = run_benchmark(&spec(0.2, 17), 3, 6, &bench_config(9)).expect("benchmark");
    assert_eq!(table.rows().len(), 3 * 6, "no cell may be dropped");
    for (method, alpha, mean) in table.means() {
        assert_eq!(alpha, 0.2);
        assert!(
            mean < 0.25,
            "{method} must misclassify only a small minority of pairs, got mean rate {mean}"
        );
    }
}

#[test]
fn replications_are_independent_and_reproducible() {
    let cfg = bench_config(13);
    let a = run_benchmark_methods(&spec(0.5, 31), 3, 4, &cfg, &[Method::KMeans]).expect("run a");
    let b = run_benchmark_methods(&spec(0.5, 31), 3, 4, &cfg, &[Method::KMeans]).expect("run b");
    for (ra, rb) in a.rows().iter().zip(b.rows()) {
        assert_eq!(ra.replication, rb.replication);
        assert_eq!(ra.rate, rb.rate, "same seed must give identical rates");
    }
    let distinct: std::collections::BTreeSet<String> =
        a.rows().iter().map(|r| format!("{:?}", r.rate)).collect();
    assert!(
        distinct.len() > 1,
        "different replications must see different datasets"
    );
}
