//! Co-teaching: two peer networks cross-select small-loss samples for each
//! other every batch.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelSpec};
use crate::numcore::{ParamVector, RngStream};
use crate::strategy::{
    BatchSelection, ClientState, LocalStats, SelectionCounts, StrategyKind, StrategySpec,
};

/// Scale of the one-time initialization perturbation that separates the two
/// peer networks, relative to the model's init scale.
const PEER_PERTURB_FACTOR: f64 = 1e-2;

/// Fraction of each batch kept at round `t`: anneals linearly from 1 at the
/// start down to `1 - forget_rate` at the end of the warm-up window, constant
/// afterwards.
pub fn keep_ratio(round: usize, total_rounds: usize, forget_rate: f64, warmup_fraction: f64) -> f64 {
    let warm = warmup_fraction * total_rounds as f64;
    if warm <= 0.0 || round as f64 >= warm {
        return 1.0 - forget_rate;
    }
    1.0 - forget_rate * round as f64 / warm
}

/// Cross-selection: each network trains on the `ceil(keep * B)` samples its
/// peer scored lowest. Ties break toward the lower index. Returned index
/// lists are sorted ascending.
pub fn coteach_select(
    losses_a: &[f64],
    losses_b: &[f64],
    keep: f64,
) -> (Vec<usize>, Vec<usize>) {
    assert_eq!(losses_a.len(), losses_b.len());
    let n = losses_a.len();
    let keep_count = ((keep * n as f64).ceil() as usize).min(n);
    let smallest = |losses: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| {
            losses[i]
                .partial_cmp(&losses[j])
                .expect("finite losses")
                .then(i.cmp(&j))
        });
        let mut picked = idx[..keep_count].to_vec();
        picked.sort_unstable();
        picked
    };
    (smallest(losses_b), smallest(losses_a))
}

fn perturb(params: &mut ParamVector, scale: f64, rng: &mut RngStream) {
    for w in params.values_mut() {
        *w += rng.range_f64(-scale, scale);
    }
}

/// One round of co-teaching local training. Both networks restart from the
/// broadcast global model; at round zero each receives a distinct small
/// perturbation so their loss rankings diverge. Network A's parameters are
/// the client's upload; B's travel back for peer-aware diagnostics.
pub fn coteach_train(
    state: &mut ClientState,
    global: &ParamVector,
    model_spec: &ModelSpec,
    strategy: &StrategySpec,
    round: usize,
    total_rounds: usize,
    dataset: &LabeledDataset,
) -> Result<LocalStats> {
    let StrategyKind::Coteach {
        forget_rate,
        warmup_fraction,
    } = strategy.kind
    else {
        return Err(Error::InvalidArgument(
            "coteach_train called with a non-co-teaching strategy".into(),
        ));
    };
    if state.shard.is_empty() {
        return Err(Error::EmptyShard {
            client_id: state.client_id,
        });
    }
    if state.peer_params.is_none() {
        return Err(Error::InvalidArgument(
            "co-teaching needs peer parameters in the client state".into(),
        ));
    }

    let zeros = ParamVector::zeros(global.layout().clone());
    state.params = global.clone();
    state.momentum_state = zeros.clone();
    let mut peer = global.clone();
    let mut peer_momentum = zeros;
    if round == 0 {
        let scale = PEER_PERTURB_FACTOR * model_spec.init_scale;
        perturb(&mut state.params, scale, &mut state.rng);
        perturb(&mut peer, scale, &mut state.rng);
    }

    let keep = keep_ratio(round, total_rounds, forget_rate, warmup_fraction);
    let loss_spec = strategy.loss_spec(global);

    let mut order = state.shard.clone();
    let mut loss_sum = 0.0;
    let mut sample_count = 0usize;
    let mut selection = SelectionCounts::default();
    let mut selected_per_batch = Vec::new();

    for _epoch in 0..strategy.epochs {
        state.rng.shuffle(&mut order);
        for chunk in order.chunks(strategy.batch_size) {
            let (bx, by) = dataset.gather(chunk);
            let fw_a = model::forward(&state.params, model_spec, &bx)?;
            let fw_b = model::forward(&peer, model_spec, &bx)?;
            let (_, losses_a) = model::loss_ce(&fw_a, &by)?;
            let (_, losses_b) = model::loss_ce(&fw_b, &by)?;
            let (idx_a, idx_b) = coteach_select(&losses_a, &losses_b, keep);

            for subset in [&idx_a, &idx_b] {
                for &local in subset.iter() {
                    selection.total += 1;
                    if !dataset.corrupted()[chunk[local]] {
                        selection.clean += 1;
                    }
                }
            }

            let picked_a: Vec<usize> = idx_a.iter().map(|&i| chunk[i]).collect();
            selected_per_batch.push(BatchSelection {
                for_a: picked_a.clone(),
                for_b: idx_b.iter().map(|&i| chunk[i]).collect(),
            });
            let (ax, ay) = dataset.gather(&picked_a);
            let (value_a, grad_a) = model::grad(&state.params, model_spec, &ax, &ay, &loss_spec)?;
            let (next_a, vel_a) = model::sgd_step(
                &state.params,
                &grad_a,
                strategy.lr,
                &state.momentum_state,
                strategy.momentum,
                strategy.weight_decay,
            )?;
            state.params = next_a;
            state.momentum_state = vel_a;

            let picked_b: Vec<usize> = idx_b.iter().map(|&i| chunk[i]).collect();
            let (bx2, by2) = dataset.gather(&picked_b);
            let (_, grad_b) = model::grad(&peer, model_spec, &bx2, &by2, &loss_spec)?;
            let (next_b, vel_b) = model::sgd_step(
                &peer,
                &grad_b,
                strategy.lr,
                &peer_momentum,
                strategy.momentum,
                strategy.weight_decay,
            )?;
            peer = next_b;
            peer_momentum = vel_b;

            loss_sum += value_a * picked_a.len() as f64;
            sample_count += picked_a.len();
        }
    }

    state.peer_params = Some(peer);
    state.peer_momentum_state = Some(peer_momentum);
    Ok(LocalStats {
        n_k: state.shard.len(),
        mean_train_loss: loss_sum / sample_count.max(1) as f64,
        selection: Some(selection),
        selected_per_batch,
    })
}
