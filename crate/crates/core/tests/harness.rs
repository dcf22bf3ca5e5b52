mod common;

use proptest::prelude::*;

use vaml_core::envs::{generate_cliffwalk, CliffwalkSpec, CLIFF_START};
use vaml_core::harness::bootstrap::bootstrap_ci;
use vaml_core::harness::config::{AlgorithmSpec, PiConfig, SweepConfig, TrainingConfig};
use vaml_core::harness::output::{parse_results, write_results, ExperimentRecord, CSV_HEADER};
use vaml_core::harness::{
    emit_results, format_summary, read_results, run_garnet_cell, run_policy_iteration, run_sweep, summarize,
    GarnetCell, PiCell,
};
use vaml_core::mdp::{exact_value, induce_policy_kernel, policy_iteration, uniform_policy};
use vaml_core::model::AdamConfig;
use vaml_core::rng::stream;

fn small_sweep() -> SweepConfig {
    SweepConfig::from_toml_str(
        "master_seed = 5\nn_problems = 3\ntemperature_grid = [0.05, 2.0]\nrank_grid = [2, 6]\n\
         [garnet]\nn_states = 8\nn_successors = 3\n[training]\nsteps = 200\ntarget_period = 20\n",
    )
    .unwrap()
}

fn arb_record() -> impl Strategy<Value = ExperimentRecord> {
    (
        any::<u64>(),
        prop_oneof![any::<f64>().prop_filter("finite", |t| t.is_finite()), Just(1e-6), Just(10.0)],
        1usize..100,
        "[a-z0-9+]{1,12}",
        prop::collection::vec(("[a-z_]{1,10}", any::<f64>(), any::<u64>()), 1..3),
    )
        .prop_map(|(problem_seed, tau, rank, algorithm, metrics)| ExperimentRecord {
            problem_seed,
            tau,
            rank,
            algorithm,
            metrics,
            wall_time_secs: 0.0,
            failure: None,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn csv_round_trip_is_bitwise(records in prop::collection::vec(arb_record(), 1000)) {
        let mut bytes = Vec::new();
        write_results(&records, &mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        prop_assert!(text.starts_with(CSV_HEADER));
        prop_assert!(!text.contains('\r'));
        let rows = parse_results(bytes.as_slice(), std::path::Path::new("memory")).unwrap();
        let expected: Vec<_> = records.iter().flat_map(|r| r.rows()).collect();
        prop_assert_eq!(rows.len(), expected.len());
        for (a, b) in rows.iter().zip(&expected) {
            prop_assert_eq!(a.problem_seed, b.problem_seed);
            prop_assert_eq!(a.tau.to_bits(), b.tau.to_bits());
            prop_assert_eq!(a.rank, b.rank);
            prop_assert_eq!(&a.algorithm, &b.algorithm);
            prop_assert_eq!(&a.metric, &b.metric);
            prop_assert!(a.value.to_bits() == b.value.to_bits() || (a.value.is_nan() && b.value.is_nan()));
            prop_assert_eq!(a.step, b.step);
        }
    }

    #[test]
    fn bootstrap_interval_contains_sample_mean(
        samples in prop::collection::vec(-1e3f64..1e3, 2..60),
        seed in any::<u64>(),
    ) {
        let ci = bootstrap_ci(&samples, 0.95, 500, &mut stream(seed)).unwrap();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let slack = 1e-9 * (1.0 + mean.abs());
        prop_assert!((ci.mean - mean).abs() <= slack);
        prop_assert!(ci.lower <= mean + slack && mean - slack <= ci.upper);
    }
}

#[test]
fn sweep_yields_one_record_per_task_in_order() {
    let config = small_sweep();
    let records = run_sweep(&config, 2).unwrap();
    assert_eq!(records.len(), 2 * 2 * 5 * 3);
    let mut index = 0;
    for &tau in &config.temperature_grid {
        for &rank in &config.rank_grid {
            for algorithm in &config.algorithms {
                for _ in 0..config.n_problems {
                    let r = &records[index];
                    assert_eq!((r.tau, r.rank, r.algorithm.as_str()), (tau, rank, algorithm.label.as_str()));
                    index += 1;
                }
            }
        }
    }
}

#[test]
fn emitted_sweep_reads_back() {
    let records = run_sweep(&small_sweep(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    emit_results(&records, &path).unwrap();
    let rows = read_results(&path).unwrap();
    assert_eq!(rows.len(), records.len());
    assert!(rows.iter().zip(&records).all(|(row, r)| row.value.to_bits() == r.metrics[0].1.to_bits()));
}

#[test]
fn diverging_runs_are_flagged_without_aborting() {
    let mut config = small_sweep();
    config.training.model_optimizer = AdamConfig {
        lr: 1e300,
        ..AdamConfig::default()
    };
    let records = run_sweep(&config, 1).unwrap();
    assert_eq!(records.len(), 60);
    let failed: Vec<_> = records.iter().filter(|r| r.failure.is_some()).collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().all(|r| r.metrics[0].1.is_nan()));
    let summary = format_summary(&summarize(&records, "value_mse", 100, 0), "value_mse");
    assert!(summary.ends_with(&format!("failed records: {}\n", failed.len())));
}

#[test]
fn full_rank_kl_recovers_exact_values() {
    let config = SweepConfig::from_toml_str(
        "n_problems = 2\ntemperature_grid = [1.0]\nrank_grid = [5]\n\
         [garnet]\nn_states = 5\nn_successors = 3\n\
         [training]\nsteps = 20000\ntarget_period = 50\n\
         [training.model_optimizer]\nlr = 0.05\n",
    )
    .unwrap();
    let cell = GarnetCell {
        temperature: 1.0,
        rank: 5,
        algorithm: AlgorithmSpec::by_label("kl+td").unwrap(),
    };
    for problem in 0..2 {
        let record = run_garnet_cell(&config, &cell, problem).unwrap();
        let mse = record.final_metric("value_mse").unwrap();
        assert!(mse <= 1e-4, "problem {problem}: value_mse {mse}");
    }
}

fn pi_config(move_prob: f64, iterations: usize) -> (PiConfig, PiCell) {
    let mut config = PiConfig::desk_scale();
    config.n_iterations = iterations;
    config.move_prob_grid = vec![move_prob];
    config.rank_grid = vec![25];
    config.training = TrainingConfig {
        steps: 3000,
        model_optimizer: AdamConfig { lr: 0.05, ..AdamConfig::default() },
        value_optimizer: AdamConfig { lr: 0.05, ..AdamConfig::default() },
        ..TrainingConfig::default()
    };
    let cell = PiCell {
        move_prob,
        rank: 25,
        algorithm: AlgorithmSpec::by_label("kl+td").unwrap(),
    };
    (config, cell)
}

#[test]
fn first_recorded_return_is_the_uniform_policy_value() {
    let (config, cell) = pi_config(0.66, 1);
    let record = run_policy_iteration(&config, &cell, 0).unwrap();
    let cmdp = generate_cliffwalk(&CliffwalkSpec { move_prob: 0.66, discount: config.cliffwalk.discount }).unwrap();
    let uniform = induce_policy_kernel(&cmdp, &uniform_policy(cmdp.n_states(), cmdp.n_actions())).unwrap();
    let expected = common::value_iteration(&uniform)[CLIFF_START];
    let (metric, value, step) = &record.metrics[0];
    assert_eq!((metric.as_str(), *step), ("return", 0));
    assert!((value - expected).abs() < 1e-9);
    assert!((value - exact_value(&uniform).unwrap()[CLIFF_START]).abs() < 1e-9);
}

#[test]
fn deterministic_full_rank_kl_policy_iteration_reaches_the_optimum() {
    let cmdp = generate_cliffwalk(&CliffwalkSpec { move_prob: 1.0, discount: 0.95 }).unwrap();
    let exact = policy_iteration(&cmdp, 100).unwrap();
    let (config, cell) = pi_config(1.0, exact.iterations + 1);
    let record = run_policy_iteration(&config, &cell, 0).unwrap();
    let last = record.final_metric("return").unwrap();
    assert!(
        (last - exact.values[CLIFF_START]).abs() < 1e-9,
        "learned {last} vs optimal {} after {} rounds",
        exact.values[CLIFF_START],
        exact.iterations + 1
    );
}
