//! Selection-model pretraining and the counterfactual training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::CounterfactualView;
use crate::encoder::{
    backpropagate, propagate, EmbeddingTable, PropagatedEmbeddings, DEFAULT_EMBEDDING_DIM,
    DEFAULT_INIT_STD, DEFAULT_LAYERS,
};
use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, PropagationMatrix, RelationKind, TripartiteGraph};
use crate::linalg::Matrix;
use crate::objective::{loss_gradients, BprTriple, LossBreakdown, LossConfig};
use crate::seed::{derive_seed, rng_for, Rng as SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied every `lr_decay_step` epochs.
    pub lr_decay: f64,
    pub lr_decay_step: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub embedding_dim: usize,
    pub layers: usize,
    pub init_std: f64,
    pub pretrain_epochs: usize,
    /// Set from the run's master seed, never from a config file.
    #[serde(skip)]
    pub seed: u64,
    /// Read from the `[loss]` section of a pipeline config.
    #[serde(skip)]
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            lr_decay_step: 1,
            epochs: 100,
            minibatch_size: 2048,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            layers: DEFAULT_LAYERS,
            init_std: DEFAULT_INIT_STD,
            pretrain_epochs: 100,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be > 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::config("train.lr_decay", "must be > 0"));
        }
        if self.lr_decay_step == 0 {
            return Err(Error::config("train.lr_decay_step", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be >= 1"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::config("train.minibatch_size", "must be >= 1"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("train.embedding_dim", "must be >= 1"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("train.init_std", "must be > 0"));
        }
        self.loss.validate()
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_step) as i32)
    }
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        OptimizerState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            what: "adam parameters",
            expected: params.len(),
            found: grads.len().min(state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub view_index: Option<usize>,
    /// Mean over the epoch's minibatches.
    pub loss: LossBreakdown,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "epoch,view_index,l_task,l_u,l_b,total,lr";

impl EpochLog {
    /// CSV row; an absent view is written as `-1`.
    pub fn csv_row(&self) -> String {
        let view = self.view_index.map_or(-1, |v| v as i64);
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            view,
            self.loss.l_task,
            self.loss.l_u,
            self.loss.l_b,
            self.loss.total,
            self.lr
        )
    }
}

pub fn write_log<W: Write>(mut w: W, history: &[EpochLog]) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for e in history {
        writeln!(w, "{}", e.csv_row())?;
    }
    Ok(())
}

/// Parameters frozen after training, bound to the factual graph.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: EmbeddingTable,
    pub graph: TripartiteGraph,
    pub config: TrainConfig,
    pub history: Vec<EpochLog>,
}

impl TrainedModel {
    /// Encoder output over the factual graph, used for all inference.
    pub fn embeddings(&self) -> Result<PropagatedEmbeddings> {
        propagate(
            &self.params,
            &normalized_adjacency(&self.graph),
            self.config.layers,
        )
    }
}

/// Samples one negative bundle per positive; users that interacted with
/// every bundle yield no triple.
fn sample_triples(
    positives: &[(usize, usize)],
    user_bundles: &[Vec<usize>],
    num_bundles: usize,
    rng: &mut SeededRng,
) -> Vec<BprTriple> {
    positives
        .iter()
        .filter_map(|&(user, pos)| {
            let seen = &user_bundles[user];
            if seen.len() >= num_bundles {
                return None;
            }
            loop {
                let neg = rng.random_range(0..num_bundles);
                if seen.binary_search(&neg).is_err() {
                    return Some(BprTriple { user, pos, neg });
                }
            }
        })
        .collect()
}

/// Minibatch loss and gradient with respect to the raw embedding table.
///
/// The factual and counterfactual propagations both depend on the same
/// parameters, so the two backpropagated contributions are summed.
pub fn objective_and_gradient(
    params: &EmbeddingTable,
    factual_op: &PropagationMatrix,
    view_op: Option<&PropagationMatrix>,
    triples: &[BprTriple],
    layers: usize,
    loss: &LossConfig,
) -> Result<(LossBreakdown, Matrix)> {
    let factual = propagate(params, factual_op, layers)?;
    let view = match view_op {
        Some(op) if loss.constraint_active() => Some(propagate(params, op, layers)?),
        _ => None,
    };
    let og = loss_gradients(triples, &factual, view.as_ref(), loss)?;
    let mut grad = backpropagate(&og.factual, factual_op, layers)?;
    if let (Some(g), Some(op)) = (og.view.as_ref(), view_op) {
        grad.add_assign(&backpropagate(g, op, layers)?)?;
    }
    Ok((og.breakdown, grad))
}

/// Shared loop behind pretraining, baseline training and counterfactual
/// training. Randomness comes from three streams of `seed`: `init`
/// (embeddings), `batches` (shuffling and negatives) and `views` (per-epoch
/// view choice).
fn fit(
    graph: &TripartiteGraph,
    views: &[CounterfactualView],
    cfg: &TrainConfig,
    loss: &LossConfig,
    epochs: usize,
    seed: u64,
) -> Result<TrainedModel> {
    let space = graph.space();
    let mut init_rng = rng_for(seed, "init");
    let mut params =
        EmbeddingTable::gaussian(space, cfg.embedding_dim, cfg.init_std, &mut init_rng)?;
    let mut history = Vec::with_capacity(epochs);
    let positives = graph.edges(RelationKind::UserBundle).pairs().to_vec();
    if positives.is_empty() && epochs > 0 {
        return Err(Error::EmptyInput("user-bundle training edges"));
    }
    let user_bundles = graph.user_bundles();
    let factual_op = normalized_adjacency(graph);
    let view_ops: Vec<PropagationMatrix> = if loss.constraint_active() {
        views
            .iter()
            .map(|v| normalized_adjacency(&v.graph))
            .collect()
    } else {
        Vec::new()
    };
    let mut batch_rng = rng_for(seed, "batches");
    let mut view_rng = rng_for(seed, "views");
    let mut state = OptimizerState::new(params.values().as_slice().len());
    let mut order = positives.clone();

    for epoch in 0..epochs {
        let lr = cfg.lr_at(epoch);
        let view_index = (!views.is_empty()).then(|| view_rng.random_range(0..views.len()));
        let view_op = view_index.and_then(|i| view_ops.get(i));
        order.shuffle(&mut batch_rng);

        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.minibatch_size).enumerate() {
            let triples = sample_triples(chunk, &user_bundles, space.num_bundles, &mut batch_rng);
            if triples.is_empty() {
                continue;
            }
            let (breakdown, grad) =
                objective_and_gradient(&params, &factual_op, view_op, &triples, cfg.layers, loss)?;
            if !breakdown.total.is_finite() || !grad.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(
                params.values_mut().as_mut_slice(),
                grad.as_slice(),
                &mut state,
                lr,
            )?;
            sum.l_task += breakdown.l_task;
            sum.l_u += breakdown.l_u;
            sum.l_b += breakdown.l_b;
            sum.total += breakdown.total;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        history.push(EpochLog {
            epoch,
            view_index,
            loss: LossBreakdown {
                l_task: sum.l_task / n,
                l_u: sum.l_u / n,
                l_b: sum.l_b / n,
                total: sum.total / n,
            },
            lr,
        });
    }

    Ok(TrainedModel {
        params,
        graph: graph.clone(),
        config: cfg.clone(),
        history,
    })
}

/// Trains the selection model with the task loss only for
/// `cfg.pretrain_epochs` epochs and returns its encoder output.
pub fn pretrain_selection_model(
    graph: &TripartiteGraph,
    cfg: &TrainConfig,
) -> Result<PropagatedEmbeddings> {
    cfg.validate()?;
    let model = fit(
        graph,
        &[],
        cfg,
        &LossConfig::without_constraint(),
        cfg.pretrain_epochs,
        derive_seed(cfg.seed, "pretrain"),
    )?;
    model.embeddings()
}

/// Counterfactual training: each epoch draws one view uniformly and every
/// minibatch minimizes the task loss plus the weighted constraint terms.
pub fn train(
    graph: &TripartiteGraph,
    views: &[CounterfactualView],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::EmptyInput("counterfactual view set"));
    }
    if let Some(v) = views.iter().find(|v| v.graph.space() != graph.space()) {
        return Err(Error::DimensionMismatch {
            what: "view node count",
            expected: graph.space().total(),
            found: v.graph.space().total(),
        });
    }
    fit(
        graph,
        views,
        cfg,
        &cfg.loss,
        cfg.epochs,
        derive_seed(cfg.seed, "train"),
    )
}

/// Plain task-loss training with no counterfactual machinery, seeded like
/// [`train`] so the two are directly comparable.
pub fn train_baseline(graph: &TripartiteGraph, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    fit(
        graph,
        &[],
        cfg,
        &LossConfig::without_constraint(),
        cfg.epochs,
        derive_seed(cfg.seed, "train"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut fresh = OptimizerState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut fresh, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(fresh.step, 1);

        let mut s = OptimizerState::new(2);
        s.m = vec![0.5, 0.5];
        s.v = vec![0.25, 0.25];
        s.step = 3;
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(s.m, vec![0.45, 0.45]);
        assert!(s.v[0] < 0.25);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut p = vec![0.0];
        let mut s = OptimizerState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        // m_hat = 1, v_hat = 1 -> update = 0.1 / (1 + 1e-8)
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = vec![0.3, -0.1, 2.0];
            let mut s = OptimizerState::new(3);
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| x * 0.7 + k as f64 * 0.01).collect();
                adam_step(&mut p, &g, &mut s, 0.01).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut s = OptimizerState::new(2);
        assert!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut s, 0.1).is_err());
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            lr_decay: 0.5,
            lr_decay_step: 2,
            ..TrainConfig::default()
        };
        assert_eq!(
            (0..5).map(|e| cfg.lr_at(e)).collect::<Vec<_>>(),
            [1.0, 1.0, 0.5, 0.5, 0.25]
        );
    }

    #[test]
    fn log_row_format() {
        let e = EpochLog {
            epoch: 3,
            view_index: Some(1),
            loss: LossBreakdown {
                l_task: 0.5,
                l_u: -1.0,
                l_b: -2.0,
                total: 0.3,
            },
            lr: 0.001,
        };
        assert_eq!(e.csv_row(), "3,1,0.5,-1,-2,0.3,0.001");
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(
            matches!(cfg.validate(), Err(Error::InvalidConfig { key, .. }) if key == "train.learning_rate")
        );
    }
}
