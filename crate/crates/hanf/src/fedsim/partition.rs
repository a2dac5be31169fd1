//! Client data partitioning: i.i.d. and label-skew.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::diffcore::Tensor;
use crate::error::{HanfError, Result};
use crate::rng::{self, Stream};

/// One client's local data: disjoint train/validation splits plus its
/// aggregation weight `v_c = |val_c| / sum |val_c|`.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub id: usize,
    pub train_images: Tensor,
    pub train_labels: Vec<usize>,
    pub val_images: Tensor,
    pub val_labels: Vec<usize>,
    pub weight: f64,
}

impl ClientShard {
    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn val_len(&self) -> usize {
        self.val_labels.len()
    }

    /// How many samples of `label` the shard holds across both splits.
    pub fn label_count(&self, label: usize) -> usize {
        self.train_labels.iter().chain(self.val_labels.iter()).filter(|&&l| l == label).count()
    }
}

fn build_shards(
    dataset: &Dataset,
    per_client: Vec<Vec<usize>>,
    train_fraction: f64,
) -> Result<Vec<ClientShard>> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(HanfError::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut shards = Vec::with_capacity(per_client.len());
    for (id, indices) in per_client.into_iter().enumerate() {
        let n = indices.len();
        let train_n = ((n as f64 * train_fraction).round() as usize).clamp(1, n.saturating_sub(1));
        if n < 2 {
            return Err(HanfError::InvalidArgument(format!(
                "client {id} received {n} samples; need at least 2 for a train/val split"
            )));
        }
        let (train_idx, val_idx) = indices.split_at(train_n);
        let (train_images, train_labels) = dataset.gather(train_idx);
        let (val_images, val_labels) = dataset.gather(val_idx);
        shards.push(ClientShard {
            id,
            train_images,
            train_labels,
            val_images,
            val_labels,
            weight: 0.0,
        });
    }
    let total_val: usize = shards.iter().map(ClientShard::val_len).sum();
    for s in shards.iter_mut() {
        s.weight = s.val_len() as f64 / total_val as f64;
    }
    Ok(shards)
}

/// Random even split: client sizes differ by at most one sample.
pub fn partition_iid(
    dataset: &Dataset,
    client_count: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    let n = dataset.len();
    if client_count == 0 {
        return Err(HanfError::InvalidArgument("client_count must be positive".into()));
    }
    if n < client_count {
        return Err(HanfError::InvalidArgument(format!(
            "dataset of {n} samples cannot be split over {client_count} clients"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng::rng(seed, Stream::Partition, 0));

    let base = n / client_count;
    let rem = n % client_count;
    let mut per_client = Vec::with_capacity(client_count);
    let mut cursor = 0;
    for client in 0..client_count {
        let take = base + usize::from(client < rem);
        per_client.push(indices[cursor..cursor + take].to_vec());
        cursor += take;
    }
    build_shards(dataset, per_client, train_fraction)
}

/// Label-skew split: the first `ceil(f * C)` clients each hold twice the
/// per-client count of label `skew_label` that every other client holds;
/// all other labels split evenly (within one sample). Up to
/// `2*skewed + others - 1` samples of the skewed label are dropped so the
/// 2:1 ratio is exact.
pub fn partition_label_skew(
    dataset: &Dataset,
    client_count: usize,
    skew_fraction: f64,
    skew_label: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if client_count == 0 {
        return Err(HanfError::InvalidArgument("client_count must be positive".into()));
    }
    if !(0.0..1.0).contains(&skew_fraction) || skew_fraction == 0.0 {
        return Err(HanfError::InvalidArgument(format!(
            "skew fraction must be in (0, 1), got {skew_fraction}"
        )));
    }
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes];
    for (i, &label) in dataset.labels.iter().enumerate() {
        by_label[label].push(i);
    }
    if skew_label >= dataset.classes || by_label[skew_label].is_empty() {
        return Err(HanfError::InvalidArgument(format!(
            "skew label {skew_label} not present in the dataset"
        )));
    }

    let skewed = (skew_fraction * client_count as f64).ceil() as usize;
    let skewed = skewed.min(client_count);
    let others = client_count - skewed;
    let denom = 2 * skewed + others;

    let mut rng = rng::rng(seed, Stream::Partition, 1);
    let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); client_count];

    for (label, indices) in by_label.iter().enumerate() {
        let mut pool = indices.clone();
        pool.shuffle(&mut rng);
        if label == skew_label {
            let total = pool.len();
            let per_other = total / denom;
            let per_skew = 2 * total / denom;
            if per_other == 0 {
                return Err(HanfError::InvalidArgument(format!(
                    "only {total} samples of label {skew_label}; cannot honor the 2:1 skew over {client_count} clients"
                )));
            }
            let mut cursor = 0;
            for (c, client) in per_client.iter_mut().enumerate() {
                let take = if c < skewed { per_skew } else { per_other };
                client.extend_from_slice(&pool[cursor..cursor + take]);
                cursor += take;
            }
            // remaining pool[cursor..] dropped to keep the ratio exact
        } else {
            let base = pool.len() / client_count;
            let rem = pool.len() % client_count;
            let mut cursor = 0;
            for (c, client) in per_client.iter_mut().enumerate() {
                let take = base + usize::from(c < rem);
                client.extend_from_slice(&pool[cursor..cursor + take]);
                cursor += take;
            }
        }
    }

    // mix labels within each client before the sequential train/val split
    for client in per_client.iter_mut() {
        client.shuffle(&mut rng);
    }
    build_shards(dataset, per_client, train_fraction)
}
