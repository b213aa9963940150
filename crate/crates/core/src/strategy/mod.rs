//! Client-side local-training strategies: plain local SGD, proximal SGD,
//! robust-loss training, optional representation decorrelation on any of
//! them, and co-teaching peer-network small-loss selection.

mod coteach;

pub use coteach::{coteach_select, coteach_train, keep_ratio};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{self, BaseLoss, LossSpec, ModelSpec};
use crate::numcore::{ParamVector, RngStream};

use serde::{Deserialize, Serialize};

/// Which local-training recipe a client runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Plain,
    Prox {
        mu: f64,
    },
    Sce {
        alpha: f64,
        beta: f64,
    },
    Coteach {
        forget_rate: f64,
        warmup_fraction: f64,
    },
}

/// Local-training recipe plus optimizer hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Weight of the representation-decorrelation penalty; zero disables it.
    pub svd_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl StrategySpec {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            StrategyKind::Prox { mu } => {
                crate::error::require_positive(*mu, "prox mu")?;
            }
            StrategyKind::Sce { alpha, beta } => {
                crate::error::require_positive(*alpha, "sce alpha")?;
                crate::error::require_positive(*beta, "sce beta")?;
            }
            StrategyKind::Coteach {
                forget_rate,
                warmup_fraction,
            } => {
                if !(0.0..1.0).contains(forget_rate) {
                    return Err(Error::InvalidArgument(format!(
                        "forget_rate must lie in [0, 1), got {forget_rate}"
                    )));
                }
                if !(0.0..=1.0).contains(warmup_fraction) {
                    return Err(Error::InvalidArgument(format!(
                        "warmup_fraction must lie in [0, 1], got {warmup_fraction}"
                    )));
                }
            }
            StrategyKind::Plain => {}
        }
        if self.svd_weight < 0.0 {
            return Err(Error::InvalidArgument("svd_weight must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr < 0.0 {
            return Err(Error::InvalidArgument("lr must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_coteach(&self) -> bool {
        matches!(self.kind, StrategyKind::Coteach { .. })
    }

    /// Build the per-batch loss for this strategy, anchored at the round's
    /// global model where the strategy calls for it.
    pub(crate) fn loss_spec(&self, global: &ParamVector) -> LossSpec {
        let (base, prox_mu, prox_anchor) = match &self.kind {
            StrategyKind::Plain | StrategyKind::Coteach { .. } => (BaseLoss::Ce, 0.0, None),
            StrategyKind::Prox { mu } => (BaseLoss::Ce, *mu, Some(global.clone())),
            StrategyKind::Sce { alpha, beta } => (
                BaseLoss::Sce {
                    alpha: *alpha,
                    beta: *beta,
                },
                0.0,
                None,
            ),
        };
        LossSpec {
            base,
            svd_weight: self.svd_weight,
            prox_mu,
            prox_anchor,
        }
    }
}

/// Clean/total counts of samples picked by small-loss selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionCounts {
    pub clean: usize,
    pub total: usize,
}

impl SelectionCounts {
    pub fn clean_fraction(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        self.clean as f64 / self.total as f64
    }
}

/// Dataset indices each peer network trained on in one batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchSelection {
    pub for_a: Vec<usize>,
    pub for_b: Vec<usize>,
}

/// Per-client results of one round of local training.
#[derive(Clone, Debug)]
pub struct LocalStats {
    pub n_k: usize,
    pub mean_train_loss: f64,
    /// Present only for strategies that perform sample selection.
    pub selection: Option<SelectionCounts>,
    /// The selected index sets, batch by batch, for selecting strategies;
    /// empty otherwise.
    pub selected_per_batch: Vec<BatchSelection>,
}

/// Working state of one client during a round. Parameters start from the
/// broadcast global model; the peer network exists only under co-teaching.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: Vec<usize>,
    pub params: ParamVector,
    pub peer_params: Option<ParamVector>,
    pub momentum_state: ParamVector,
    pub peer_momentum_state: Option<ParamVector>,
    pub rng: RngStream,
}

impl ClientState {
    pub fn fresh(
        client_id: usize,
        shard: Vec<usize>,
        global: &ParamVector,
        strategy: &StrategySpec,
        rng: RngStream,
    ) -> Self {
        let zeros = ParamVector::zeros(global.layout().clone());
        let (peer, peer_momentum) = if strategy.is_coteach() {
            (Some(global.clone()), Some(zeros.clone()))
        } else {
            (None, None)
        };
        ClientState {
            client_id,
            shard,
            params: global.clone(),
            peer_params: peer,
            momentum_state: zeros,
            peer_momentum_state: peer_momentum,
            rng,
        }
    }
}

/// Epochs of shuffled mini-batch SGD under the strategy's loss, starting
/// from the broadcast global model. Returns the trained parameters via
/// `state.params` and the round's local statistics.
pub fn local_train(
    state: &mut ClientState,
    global: &ParamVector,
    model_spec: &ModelSpec,
    strategy: &StrategySpec,
    round: usize,
    total_rounds: usize,
    dataset: &LabeledDataset,
) -> Result<LocalStats> {
    strategy.validate()?;
    if state.shard.is_empty() {
        return Err(Error::EmptyShard {
            client_id: state.client_id,
        });
    }
    if !state.params.same_layout(global) {
        let (tensor, detail) = state
            .params
            .layout()
            .first_mismatch(global.layout())
            .unwrap_or_else(|| ("<unknown>".into(), "layouts differ".into()));
        return Err(Error::LayoutMismatch { tensor, detail });
    }
    if strategy.is_coteach() {
        return coteach_train(state, global, model_spec, strategy, round, total_rounds, dataset);
    }

    state.params = global.clone();
    state.momentum_state = ParamVector::zeros(global.layout().clone());
    let loss_spec = strategy.loss_spec(global);

    let mut order = state.shard.clone();
    let mut loss_sum = 0.0;
    let mut sample_count = 0usize;
    for _epoch in 0..strategy.epochs {
        state.rng.shuffle(&mut order);
        for chunk in order.chunks(strategy.batch_size) {
            let (bx, by) = dataset.gather(chunk);
            let (value, gradient) = model::grad(&state.params, model_spec, &bx, &by, &loss_spec)?;
            let (next, velocity) = model::sgd_step(
                &state.params,
                &gradient,
                strategy.lr,
                &state.momentum_state,
                strategy.momentum,
                strategy.weight_decay,
            )?;
            state.params = next;
            state.momentum_state = velocity;
            loss_sum += value * chunk.len() as f64;
            sample_count += chunk.len();
        }
    }

    Ok(LocalStats {
        n_k: state.shard.len(),
        mean_train_loss: loss_sum / sample_count.max(1) as f64,
        selection: None,
        selected_per_batch: Vec::new(),
    })
}
