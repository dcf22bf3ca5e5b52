mod common;

use std::collections::HashSet;

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::*;
use vaml_core::envs::{generate_garnet, GarnetSpec};
use vaml_core::losses::kl_loss_batch;
use vaml_core::mdp::{bellman_operator, exact_value, FiniteMdp};
use vaml_core::model::{sample_model, AdamConfig, LowRankModel, OptimizerState};
use vaml_core::rng::stream;

fn frequencies(samples: &[Vec<usize>], step: usize, n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    for path in samples {
        counts[path[step]] += 1.0;
    }
    counts.iter().map(|c| c / samples.len() as f64).collect()
}

#[test]
fn one_step_samples_follow_predicted_row() {
    let model = LowRankModel::init(3, 3, 2, 1.5, &mut stream(1)).unwrap();
    let samples = sample_model(&model, 2, 1, 100_000, &mut stream(2)).unwrap();
    let expected = model.predict_row(2);
    for (f, p) in frequencies(&samples, 0, 3).iter().zip(&expected) {
        assert!((f - p).abs() < 0.01, "{f} vs {p}");
    }
}

#[test]
fn two_step_samples_follow_matrix_square() {
    let model = LowRankModel::init(4, 4, 3, 1.5, &mut stream(3)).unwrap();
    let rows = model.transition_matrix();
    let expected = power_row(&rows, 0, 2);
    let samples = sample_model(&model, 0, 2, 100_000, &mut stream(4)).unwrap();
    assert!(samples.iter().all(|p| p.len() == 2));
    for (f, p) in frequencies(&samples, 1, 4).iter().zip(&expected) {
        assert!((f - p).abs() < 0.01, "{f} vs {p}");
    }
}

#[test]
fn full_rank_kl_training_recovers_the_kernel() {
    let mdp = generate_garnet(&GarnetSpec {
        n_states: 5,
        n_successors: 5,
        temperature: 1.0,
        discount: 0.9,
        seed: 21,
    })
    .unwrap();
    let mut model = LowRankModel::init(5, 5, 5, 1e-3, &mut stream(22)).unwrap();
    let mut optimizer = OptimizerState::new(&model, AdamConfig { lr: 0.01, ..AdamConfig::default() });
    let mut loss = f64::INFINITY;
    for _ in 0..20_000 {
        let (value, grads) = kl_loss_batch(&model, mdp.transition()).unwrap();
        loss = value;
        optimizer.step(&mut model, &grads).unwrap();
    }
    assert!(loss < 1e-6, "final KL {loss}");
}

#[test]
fn garnet_seeds_give_distinct_problems() {
    let mut seen = HashSet::new();
    for seed in 0..100 {
        let mdp = generate_garnet(&GarnetSpec {
            seed,
            ..GarnetSpec::default()
        })
        .unwrap();
        let key: Vec<u64> = mdp.transition().iter().chain(mdp.reward()).map(|x| x.to_bits()).collect();
        assert!(seen.insert(key), "seed {seed} repeats an earlier problem");
    }
}

#[test]
fn exact_value_matches_value_iteration() {
    for seed in 0..10 {
        let mdp = generate_garnet(&GarnetSpec {
            n_states: 15,
            n_successors: 4,
            temperature: 0.3,
            discount: 0.9,
            seed,
        })
        .unwrap();
        let exact = exact_value(&mdp).unwrap();
        for (a, b) in exact.iter().zip(value_iteration(&mdp)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

proptest! {
    #[test]
    fn multi_step_backup_is_repeated_one_step_backup(seed in any::<u64>(), b in 0usize..5) {
        let mut rng = stream(seed);
        let mdp = random_mdp(&mut rng, 5, 0.8);
        let v: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) * 0.7).collect();
        let mut repeated = v.clone();
        for _ in 0..b {
            repeated = (0..5)
                .map(|x| mdp.reward()[x] + mdp.discount() * dot(&mdp.row(x), &repeated))
                .collect();
        }
        let direct = bellman_operator(&mdp, &v, b).unwrap();
        for (a, c) in direct.iter().zip(&repeated) {
            prop_assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_value_is_a_fixed_point_of_every_backup(seed in any::<u64>(), b in 1usize..5) {
        let mut rng = stream(seed);
        let mdp = random_mdp(&mut rng, 6, 0.95);
        let v = exact_value(&mdp).unwrap();
        for (a, c) in bellman_operator(&mdp, &v, b).unwrap().iter().zip(&v) {
            prop_assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn predictions_are_distributions(seed in any::<u64>(), scale in 0.01f64..30.0) {
        let model = LowRankModel::init(6, 9, 4, scale, &mut stream(seed)).unwrap();
        let probs: DMatrix<f64> = model.column_probs();
        for column in probs.column_iter() {
            prop_assert!(column.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((column.sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_rows_are_rejected_when_not_stochastic() {
    assert!(FiniteMdp::from_rows(&[vec![0.5, 0.6], vec![0.5, 0.5]], vec![0.0, 0.0], 0.9).is_err());
}
