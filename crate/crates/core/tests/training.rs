use clbr_core::augment::{generate_view_set, AugmentConfig, SamplerKind};
use clbr_core::eval::{evaluate, HeldOut};
use clbr_core::objective::LossConfig;
use clbr_core::synthetic::{planted_graph, PlantedGraph, PlantedSpec};
use clbr_core::trainer::{train, train_baseline, TrainConfig, TrainedModel};

fn planted(seed: u64) -> PlantedGraph {
    planted_graph(&PlantedSpec::small(), seed).unwrap()
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        learning_rate: 0.01,
        minibatch_size: 128,
        embedding_dim: 16,
        seed,
        loss: LossConfig {
            omega_u: 0.1,
            omega_b: 0.1,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn bits(m: &TrainedModel) -> Vec<u64> {
    m.params
        .values()
        .as_slice()
        .iter()
        .map(|v| v.to_bits())
        .collect()
}

fn stochastic_views(p: &PlantedGraph, seed: u64) -> Vec<clbr_core::augment::CounterfactualView> {
    let cfg = AugmentConfig {
        sampler: SamplerKind::Stochastic,
        num_views: 3,
        ..AugmentConfig::default()
    };
    generate_view_set(&p.observed, None, &cfg, seed).unwrap()
}

#[test]
fn same_seed_same_trajectory() {
    let p = planted(1);
    let views = stochastic_views(&p, 1);
    let a = train(&p.observed, &views, &config(9)).unwrap();
    let b = train(&p.observed, &views, &config(9)).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.history, b.history);
}

#[test]
fn different_seed_different_trajectory() {
    let p = planted(1);
    let views = stochastic_views(&p, 1);
    let a = train(&p.observed, &views, &config(9)).unwrap();
    let b = train(&p.observed, &views, &config(10)).unwrap();
    assert_ne!(bits(&a), bits(&b));
    let chosen = |m: &TrainedModel| m.history.iter().map(|e| e.view_index).collect::<Vec<_>>();
    assert_ne!(chosen(&a), chosen(&b));
}

#[test]
fn zero_weights_with_real_views_match_the_baseline() {
    let p = planted(2);
    let views = stochastic_views(&p, 2);
    let mut cfg = config(4);
    cfg.loss.omega_u = 0.0;
    cfg.loss.omega_b = 0.0;
    let a = train(&p.observed, &views, &cfg).unwrap();
    let b = train_baseline(&p.observed, &cfg).unwrap();
    assert_eq!(bits(&a), bits(&b));
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.loss.total.to_bits(), y.loss.total.to_bits());
    }
}

#[test]
fn logged_losses_are_additive() {
    let p = planted(3);
    let views = stochastic_views(&p, 3);
    let m = train(&p.observed, &views, &config(5)).unwrap();
    let cfg = config(5).loss;
    for e in &m.history {
        let sum = e.loss.l_task + cfg.omega_u * e.loss.l_u + cfg.omega_b * e.loss.l_b;
        assert!(
            (e.loss.total - sum).abs() <= 1e-12 * (1.0 + sum.abs()),
            "{:?}",
            e
        );
        assert!(e.view_index.is_some_and(|i| i < views.len()));
    }
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let p = planted(4);
    let views = stochastic_views(&p, 4);
    let m = train(&p.observed, &views, &config(6)).unwrap();
    let before = m.params.checksum();
    let test = HeldOut {
        per_user: p.held_out_user_bundles(),
    };
    evaluate(&m.embeddings().unwrap(), &p.observed, &test, &[5, 20], 0).unwrap();
    assert_eq!(before, m.params.checksum());
}

#[test]
fn loss_mostly_decreases_early() {
    let p = planted(5);
    let m = train_baseline(&p.observed, &config(7)).unwrap();
    let totals: Vec<f64> = m.history.iter().take(20).map(|e| e.loss.total).collect();
    let steps = totals.windows(2).count();
    let down = totals.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(
        down * 10 >= steps * 9,
        "{down}/{steps} non-increasing steps: {totals:?}"
    );
}
