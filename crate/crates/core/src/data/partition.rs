//! Assignment of training samples to clients.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numcore::RngStream;

/// Assignment of sample indices to clients: pairwise disjoint, covering the
/// whole training set, every client non-empty.
#[derive(Clone, Debug)]
pub struct PartitionPlan {
    assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    /// Validate the disjoint-cover invariant against a dataset of `n` samples.
    pub fn new(assignments: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        let mut covered = 0usize;
        for (k, shard) in assignments.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::InvalidArgument(format!("client {k} has no samples")));
            }
            for &i in shard {
                if i >= n {
                    return Err(Error::InvalidArgument(format!(
                        "client {k} references sample {i} beyond dataset size {n}"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidArgument(format!(
                        "sample {i} assigned to more than one client"
                    )));
                }
                seen[i] = true;
                covered += 1;
            }
        }
        if covered != n {
            return Err(Error::InvalidArgument(format!(
                "partition covers {covered} of {n} samples"
            )));
        }
        Ok(PartitionPlan { assignments })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.assignments[client]
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

/// Random shuffle split into near-equal parts (sizes differ by at most one).
pub fn partition_iid(
    dataset: &LabeledDataset,
    num_clients: usize,
    rng: &mut RngStream,
) -> Result<PartitionPlan> {
    let n = dataset.len();
    if num_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if num_clients > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples over {num_clients} clients"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let base = n / num_clients;
    let extra = n % num_clients;
    let mut assignments = Vec::with_capacity(num_clients);
    let mut cursor = 0;
    for k in 0..num_clients {
        let size = base + usize::from(k < extra);
        assignments.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }
    PartitionPlan::new(assignments, n)
}

/// Pathological Non-IID split: sort by clean label, cut into `N * S`
/// contiguous shards, deal exactly `S` random shards to each client.
pub fn partition_sharding(
    dataset: &LabeledDataset,
    num_clients: usize,
    shards_per_client: usize,
    rng: &mut RngStream,
) -> Result<PartitionPlan> {
    let n = dataset.len();
    if num_clients == 0 || shards_per_client == 0 {
        return Err(Error::InvalidArgument(
            "clients and shards-per-client must be positive".into(),
        ));
    }
    let total_shards = num_clients * shards_per_client;
    if total_shards > n {
        return Err(Error::InvalidArgument(format!(
            "cannot cut {n} samples into {total_shards} shards"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (dataset.clean_labels()[i], i));

    let base = n / total_shards;
    let extra = n % total_shards;
    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(total_shards);
    let mut cursor = 0;
    for s in 0..total_shards {
        let size = base + usize::from(s < extra);
        shards.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }

    let mut deal: Vec<usize> = (0..total_shards).collect();
    rng.shuffle(&mut deal);
    let mut assignments = vec![Vec::new(); num_clients];
    for (pos, &shard_id) in deal.iter().enumerate() {
        assignments[pos / shards_per_client].extend_from_slice(&shards[shard_id]);
    }
    PartitionPlan::new(assignments, n)
}

/// Dirichlet Non-IID split: per class, draw client proportions from a
/// symmetric Dirichlet and deal the class's samples accordingly. Clients that
/// end up empty are repaired by taking one sample from the largest client.
pub fn partition_dirichlet(
    dataset: &LabeledDataset,
    num_clients: usize,
    beta: f64,
    rng: &mut RngStream,
) -> Result<PartitionPlan> {
    let n = dataset.len();
    if num_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if num_clients > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples over {num_clients} clients"
        )));
    }
    crate::error::require_positive(beta, "dirichlet beta")?;

    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for class in 0..dataset.num_classes() {
        let proportions = rng.dirichlet(beta, num_clients);
        for i in 0..n {
            if dataset.clean_labels()[i] != class {
                continue;
            }
            let client = rng.categorical(&proportions);
            assignments[client].push(i);
        }
    }

    // Repair empty clients deterministically: take the tail sample of the
    // currently largest client (lowest id wins ties).
    loop {
        let empty = assignments.iter().position(Vec::is_empty);
        let Some(empty) = empty else { break };
        let largest = assignments
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .expect("at least one client");
        let moved = assignments[largest].pop().expect("largest client non-empty");
        assignments[empty].push(moved);
    }

    PartitionPlan::new(assignments, n)
}
