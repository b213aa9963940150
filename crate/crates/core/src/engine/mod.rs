//! Round-loop orchestration: client sampling, parallel local training,
//! aggregation, evaluation, and experiment reporting.

mod metrics;
mod report;

pub use metrics::{accuracy, evaluate, macro_f1, predict};
pub use report::{ExperimentReport, RepeatedReport, RoundRecord};

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregatorSpec, Upload};
use crate::data::{
    generate_blobs, inject_noise, load_delimited, load_label_replacement, partition_dirichlet,
    partition_iid, partition_sharding, LabeledDataset, NoiseKind, NoiseSpec, PartitionPlan,
};
use crate::diagnostics::{representation_spectrum, SpectrumRecord};
use crate::error::{Error, Result};
use crate::model::{init_params, ModelSpec};
use crate::numcore::{compose_stream, ParamVector, RngStream};
use crate::strategy::{local_train, ClientState, LocalStats, StrategySpec};

// Stream tags keep every consumer of randomness on its own derived stream.
const TAG_TRAIN_DATA: u64 = 1;
const TAG_TEST_DATA: u64 = 2;
const TAG_PARTITION: u64 = 3;
const TAG_NOISE: u64 = 4;
const TAG_INIT: u64 = 5;
const TAG_SAMPLE: u64 = 6;
const TAG_LOCAL_TRAIN: u64 = 7;
const TAG_SPLIT: u64 = 8;

/// Where the training and test data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Synthetic Gaussian clusters generated from the experiment seed.
    Blobs {
        samples: usize,
        test_samples: usize,
        classes: usize,
        feature_dim: usize,
        spread: f64,
    },
    /// Delimited numeric text files (label in the last column). Without an
    /// explicit test file, a seeded split holds out `test_fraction`.
    File {
        path: PathBuf,
        test_path: Option<PathBuf>,
        test_fraction: f64,
    },
}

/// How the training set is distributed over clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSpec {
    Iid,
    Sharding { shards_per_client: usize },
    Dirichlet { beta: f64 },
}

/// Everything a run needs, echoed verbatim into its report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub clients: usize,
    pub participants_per_round: usize,
    pub rounds: usize,
    pub seed: u64,
    pub eval_window: usize,
    /// Record a representation spectrum of the global model every round.
    pub record_spectra: bool,
    pub dataset: DatasetSource,
    pub partition: PartitionSpec,
    pub noise: NoiseSpec,
    pub model: ModelSpec,
    pub strategy: StrategySpec,
    pub aggregator: AggregatorSpec,
}

impl ExperimentConfig {
    /// Validate every cross-field constraint before any compute. Returns
    /// advisory warnings for accepted-but-degenerate settings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.clients == 0 {
            return Err(Error::InvalidArgument("need at least one client".into()));
        }
        if self.participants_per_round == 0 || self.participants_per_round > self.clients {
            return Err(Error::InvalidArgument(format!(
                "participants_per_round must lie in [1, {}], got {}",
                self.clients, self.participants_per_round
            )));
        }
        if self.eval_window == 0 {
            return Err(Error::InvalidArgument("eval_window must be at least 1".into()));
        }
        if self.rounds < self.eval_window {
            return Err(Error::InvalidArgument(format!(
                "rounds ({}) must be at least eval_window ({})",
                self.rounds, self.eval_window
            )));
        }
        self.model.validate()?;
        self.strategy.validate()?;
        self.aggregator.validate()?;
        if let Some(w) = self.aggregator.feasibility(self.participants_per_round)? {
            warnings.push(w);
        }
        self.noise.validate()?;

        match &self.dataset {
            DatasetSource::Blobs {
                samples,
                test_samples,
                classes,
                feature_dim,
                spread,
            } => {
                if *samples < *classes {
                    return Err(Error::InvalidArgument(format!(
                        "{samples} samples cannot cover {classes} classes"
                    )));
                }
                if *test_samples < *classes {
                    return Err(Error::InvalidArgument(format!(
                        "{test_samples} test samples cannot cover {classes} classes"
                    )));
                }
                crate::error::require_positive(*spread, "blob spread")?;
                if *classes != self.model.num_classes {
                    return Err(Error::InvalidArgument(format!(
                        "dataset has {classes} classes but the model expects {}",
                        self.model.num_classes
                    )));
                }
                if *feature_dim != self.model.feature_dim {
                    return Err(Error::InvalidArgument(format!(
                        "dataset has {feature_dim} features but the model expects {}",
                        self.model.feature_dim
                    )));
                }
                if self.clients > *samples {
                    return Err(Error::InvalidArgument(format!(
                        "{} clients cannot share {samples} samples",
                        self.clients
                    )));
                }
                if let PartitionSpec::Sharding { shards_per_client } = self.partition {
                    if self.clients * shards_per_client > *samples {
                        return Err(Error::InvalidArgument(format!(
                            "{} shards cannot be cut from {samples} samples",
                            self.clients * shards_per_client
                        )));
                    }
                }
            }
            DatasetSource::File {
                test_path,
                test_fraction,
                ..
            } => {
                let fraction_ok = *test_fraction > 0.0 && *test_fraction < 1.0;
                if test_path.is_none() && !fraction_ok {
                    return Err(Error::InvalidArgument(format!(
                        "test_fraction must lie in (0, 1), got {test_fraction}"
                    )));
                }
            }
        }

        if let PartitionSpec::Dirichlet { beta } = self.partition {
            crate::error::require_positive(beta, "dirichlet beta")?;
        }
        if let PartitionSpec::Sharding { shards_per_client } = self.partition {
            if shards_per_client == 0 {
                return Err(Error::InvalidArgument(
                    "shards_per_client must be at least 1".into(),
                ));
            }
        }
        if self.record_spectra && self.model.repr_dim() < 2 {
            return Err(Error::InvalidArgument(
                "spectrum recording needs a representation width of at least 2".into(),
            ));
        }
        Ok(warnings)
    }
}

/// Immutable per-run environment plus the mutable global model.
#[derive(Clone, Debug)]
pub struct ExperimentState {
    pub config: ExperimentConfig,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub plan: PartitionPlan,
    pub global: ParamVector,
}

/// Build train/test datasets and the partition plan deterministically from
/// the experiment seed; noise is injected after partitioning.
pub fn build_environment(
    config: &ExperimentConfig,
) -> Result<(LabeledDataset, LabeledDataset, PartitionPlan)> {
    let seed = config.seed;
    let (train_clean, test) = match &config.dataset {
        DatasetSource::Blobs {
            samples,
            test_samples,
            classes,
            feature_dim,
            spread,
        } => {
            let train = generate_blobs(
                *samples,
                *classes,
                *feature_dim,
                *spread,
                &mut RngStream::new(seed, compose_stream(&[TAG_TRAIN_DATA])),
            )?;
            let test = generate_blobs(
                *test_samples,
                *classes,
                *feature_dim,
                *spread,
                &mut RngStream::new(seed, compose_stream(&[TAG_TEST_DATA])),
            )?;
            (train, test)
        }
        DatasetSource::File {
            path,
            test_path,
            test_fraction,
        } => {
            let full = load_delimited(path, Some(config.model.num_classes))?;
            match test_path {
                Some(tp) => {
                    let test = load_delimited(tp, Some(config.model.num_classes))?;
                    (full, test)
                }
                None => {
                    let test_len = ((full.len() as f64) * test_fraction).round() as usize;
                    let test_len = test_len.clamp(1, full.len() - 1);
                    let mut rng = RngStream::new(seed, compose_stream(&[TAG_SPLIT]));
                    full.split(test_len, &mut rng)?
                }
            }
        }
    };
    if train_clean.feature_dim() != config.model.feature_dim {
        return Err(Error::DimensionMismatch(format!(
            "dataset features {} do not match model feature_dim {}",
            train_clean.feature_dim(),
            config.model.feature_dim
        )));
    }

    let mut partition_rng = RngStream::new(seed, compose_stream(&[TAG_PARTITION]));
    let plan = match config.partition {
        PartitionSpec::Iid => partition_iid(&train_clean, config.clients, &mut partition_rng)?,
        PartitionSpec::Sharding { shards_per_client } => {
            partition_sharding(&train_clean, config.clients, shards_per_client, &mut partition_rng)?
        }
        PartitionSpec::Dirichlet { beta } => {
            partition_dirichlet(&train_clean, config.clients, beta, &mut partition_rng)?
        }
    };

    let train = match &config.noise.kind {
        NoiseKind::ReplacementFile { path } => load_label_replacement(path, &train_clean)?,
        _ => inject_noise(
            &train_clean,
            &plan,
            &config.noise,
            &RngStream::new(seed, compose_stream(&[TAG_NOISE])),
        )?,
    };

    Ok((train, test, plan))
}

/// Uniform sample of `count` distinct client ids for a round, sorted
/// ascending. The draw depends only on `(seed, round)`.
pub fn sample_clients(
    num_clients: usize,
    count: usize,
    round: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if count > num_clients {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {count} of {num_clients} clients"
        )));
    }
    let mut rng = RngStream::new(seed, compose_stream(&[TAG_SAMPLE, round as u64]));
    let mut ids: Vec<usize> = (0..num_clients).collect();
    for i in 0..count {
        let j = i + rng.below((num_clients - i) as u64) as usize;
        ids.swap(i, j);
    }
    let mut picked = ids[..count].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

struct ClientOutcome {
    client_id: usize,
    upload: ParamVector,
    peer_upload: Option<ParamVector>,
    stats: LocalStats,
}

/// One communication round: sample clients, train them in parallel against a
/// snapshot of the global model, aggregate, and evaluate on the clean test
/// set. Returns the next global model and the round's record.
pub fn run_round(state: &ExperimentState, round: usize) -> Result<(ParamVector, RoundRecord)> {
    let started = Instant::now();
    let config = &state.config;
    let selected = sample_clients(
        config.clients,
        config.participants_per_round,
        round,
        config.seed,
    )?;

    let outcomes: Vec<Option<ClientOutcome>> = selected
        .par_iter()
        .map(|&client_id| -> Result<Option<ClientOutcome>> {
            let shard = state.plan.shard(client_id).to_vec();
            let rng = RngStream::new(
                config.seed,
                compose_stream(&[TAG_LOCAL_TRAIN, round as u64, client_id as u64]),
            );
            let mut client =
                ClientState::fresh(client_id, shard, &state.global, &config.strategy, rng);
            match local_train(
                &mut client,
                &state.global,
                &config.model,
                &config.strategy,
                round,
                config.rounds,
                &state.train,
            ) {
                Ok(stats) => Ok(Some(ClientOutcome {
                    client_id,
                    upload: client.params,
                    peer_upload: client.peer_params,
                    stats,
                })),
                Err(Error::EmptyShard { client_id }) => {
                    eprintln!("warning: round {round}: skipping client {client_id} with empty shard");
                    Ok(None)
                }
                Err(e) => Err(e.in_round(round)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<ClientOutcome> = outcomes.into_iter().flatten().collect();
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("no client produced an upload this round")
            .in_round(round));
    }

    let uploads: Vec<Upload> = outcomes
        .iter()
        .map(|o| Upload {
            client_id: o.client_id,
            params: o.upload.clone(),
            n_k: o.stats.n_k,
        })
        .collect();
    let next_global = config
        .aggregator
        .aggregate(&uploads, &state.global)
        .map_err(|e| e.in_round(round))?;

    let (mut f1, mut acc) = evaluate(&next_global, &config.model, &state.test)?;
    // Co-teaching trains a peer network per client; aggregate those too and
    // report the better of the two global models, as peer-network methods
    // are scored.
    if outcomes.iter().all(|o| o.peer_upload.is_some()) && config.strategy.is_coteach() {
        let peer_uploads: Vec<Upload> = outcomes
            .iter()
            .map(|o| Upload {
                client_id: o.client_id,
                params: o.peer_upload.clone().expect("checked above"),
                n_k: o.stats.n_k,
            })
            .collect();
        let peer_global = config
            .aggregator
            .aggregate(&peer_uploads, &state.global)
            .map_err(|e| e.in_round(round))?;
        let (peer_f1, peer_acc) = evaluate(&peer_global, &config.model, &state.test)?;
        if peer_f1 > f1 {
            f1 = peer_f1;
        }
        if peer_acc > acc {
            acc = peer_acc;
        }
    }

    let total_samples: usize = outcomes.iter().map(|o| o.stats.n_k).sum();
    let mean_train_loss = outcomes
        .iter()
        .map(|o| o.stats.mean_train_loss * o.stats.n_k as f64)
        .sum::<f64>()
        / total_samples.max(1) as f64;
    let selection_clean_fraction = {
        let (clean, total) = outcomes
            .iter()
            .filter_map(|o| o.stats.selection)
            .fold((0usize, 0usize), |(c, t), s| (c + s.clean, t + s.total));
        (total > 0).then(|| clean as f64 / total as f64)
    };

    let record = RoundRecord {
        round,
        selected: outcomes.iter().map(|o| o.client_id).collect(),
        test_macro_f1: f1,
        test_accuracy: acc,
        mean_train_loss,
        client_sizes: outcomes.iter().map(|o| o.stats.n_k).collect(),
        selection_clean_fraction,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((next_global, record))
}

/// Run a full experiment: build the environment once from the seed, iterate
/// the round loop, and summarize the final-window macro-F1.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Ok(run_experiment_full(config)?.0)
}

/// [`run_experiment`] plus the final global parameters, for callers that
/// persist the trained model.
pub fn run_experiment_full(config: &ExperimentConfig) -> Result<(ExperimentReport, ParamVector)> {
    config.validate()?;
    let (train, test, plan) = build_environment(config)?;
    let global = init_params(
        &config.model,
        &mut RngStream::new(config.seed, compose_stream(&[TAG_INIT])),
    );
    let mut state = ExperimentState {
        config: config.clone(),
        train,
        test,
        plan,
        global,
    };

    let mut rounds = Vec::with_capacity(config.rounds);
    let mut spectra = config.record_spectra.then(Vec::new);
    for round in 0..config.rounds {
        let (next_global, record) = run_round(&state, round)?;
        state.global = next_global;
        if let Some(spectra) = spectra.as_mut() {
            spectra.push(spectrum_of(&state, round)?);
        }
        rounds.push(record);
    }

    let final_f1 = mean_last_f1(&rounds, config.eval_window);
    let report = ExperimentReport {
        config: config.clone(),
        rounds,
        final_f1,
        spectra,
    };
    Ok((report, state.global))
}

fn spectrum_of(state: &ExperimentState, round: usize) -> Result<SpectrumRecord> {
    representation_spectrum(
        &state.global,
        &state.config.model,
        state.test.features(),
        round,
    )
}

fn mean_last_f1(rounds: &[RoundRecord], window: usize) -> f64 {
    let tail = &rounds[rounds.len().saturating_sub(window)..];
    tail.iter().map(|r| r.test_macro_f1).sum::<f64>() / tail.len().max(1) as f64
}

/// Rerun the experiment `repeats` times under derived seeds `seed + i` and
/// aggregate the final scores.
pub fn run_repeated(config: &ExperimentConfig, repeats: usize) -> Result<RepeatedReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeat count must be at least 1".into()));
    }
    let mut runs = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let mut derived = config.clone();
        derived.seed = config.seed + i as u64;
        runs.push(run_experiment(&derived)?);
    }
    Ok(RepeatedReport::from_runs(runs))
}
